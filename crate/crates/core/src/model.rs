//! Model declarations: base manifold, field bundles, jet-coordinate registry,
//! and the derived metric machinery (lowered components, determinant, volume
//! factor).
//!
//! The fundamental metric coordinates are the contravariant components
//! `g^{ij}`, stored per unordered pair (i ≤ j) so that the symmetric jet
//! family is one coordinate per pair. Lowered components `g_{ij}` and the
//! volume factor √|det g| are derived closed forms: adjugate times inverse
//! determinant, and a −1/2 power of (sign-adjusted) determinant. Both stay
//! closed under total derivatives through the chain rule of the kernel.

use crate::atom::{Atom, DerivIdx, FieldId, JetVar};
use crate::expr::Expr;
use crate::rational::{coeff_int, exp_ratio, Coeff, Exp};
use num_traits::One;
use thiserror::Error;

/// Hard cap on the base dimension (determinant expansion and the
/// Euler-Lagrange operator grow quickly with n).
pub const DIM_CAP: usize = 6;
/// Hard cap on the declared Lagrangian jet order.
pub const ORDER_CAP: usize = 4;
/// Extra jet orders allowed beyond the declared maximum: derived objects
/// (Euler-Lagrange forms, their divergences, covariant corrections) raise the
/// order by a bounded amount.
pub const ORDER_SLACK: usize = 6;

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("base dimension {0} outside 1..={DIM_CAP}")]
    BadDimension(usize),
    #[error("signature must list one ±1 entry per dimension")]
    BadSignature,
    #[error("jet order {0} outside 1..={ORDER_CAP}")]
    BadOrder(usize),
    #[error("duplicate field name `{0}`")]
    DuplicateField(String),
    #[error("at most one metric bundle is allowed")]
    TwoMetrics,
    #[error("field `{0}`: metric and distortion bundles must be background")]
    BackgroundKindAsMatter(String),
    #[error("field `{0}`: homothety weight requires an external field")]
    WeightOnNonExternal(String),
    #[error("field `{0}`: external fields must declare a homothety weight")]
    MissingWeight(String),
    #[error("field `{0}`: positivity is only meaningful for external scalars")]
    PositiveOnNonScalar(String),
    #[error("no field named `{0}`")]
    UnknownField(String),
    #[error("model has no metric bundle")]
    NoMetric,
    #[error("tensor rank {0} exceeds the supported cap 3")]
    RankTooHigh(usize),
}

/// Base manifold: dimension and diagonal signature.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifoldSpec {
    pub dim: usize,
    pub signature: Vec<i8>,
}

impl ManifoldSpec {
    pub fn new(dim: usize, signature: Vec<i8>) -> Result<Self, ModelError> {
        if dim < 1 || dim > DIM_CAP {
            return Err(ModelError::BadDimension(dim));
        }
        if signature.len() != dim || signature.iter().any(|s| *s != 1 && *s != -1) {
            return Err(ModelError::BadSignature);
        }
        Ok(ManifoldSpec { dim, signature })
    }

    pub fn euclidean(dim: usize) -> Result<Self, ModelError> {
        ManifoldSpec::new(dim, vec![1; dim])
    }

    pub fn lorentzian(dim: usize) -> Result<Self, ModelError> {
        let mut sig = vec![-1; dim];
        if dim >= 1 {
            sig[0] = 1;
        }
        ManifoldSpec::new(dim, sig)
    }

    /// Sign of the determinant of the canonical signature matrix.
    pub fn det_sign(&self) -> i8 {
        self.signature.iter().product()
    }
}

/// Kind of a field bundle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BundleKind {
    Scalar,
    Tensor { up: u8, down: u8 },
    /// Contravariant symmetric metric, one coordinate per unordered pair.
    Metric,
    /// Difference between an affine connection and the Levi-Civita one:
    /// a (1,2)-shaped background field with no index symmetry.
    Distortion,
}

/// One declared field bundle.
#[derive(Clone, Debug)]
pub struct BundleSpec {
    pub name: String,
    pub kind: BundleKind,
    /// Background fields enter source forms and canonical lifts; matter
    /// fields carry the Euler-Lagrange equations of motion.
    pub background: bool,
    /// External fields are prescribed functions (opaque to the variation)
    /// with a declared homothety weight.
    pub external: bool,
    pub weight: Option<Exp>,
    /// External scalars flagged positive are sampled positive numerically.
    pub positive: bool,
    /// Synthetic parameter fields (the generic ξ used for covariance and
    /// Noether checks) are exempt from lift and projectability validation.
    pub parameter: bool,
}

impl BundleSpec {
    pub fn matter(name: &str, kind: BundleKind) -> Self {
        BundleSpec {
            name: name.to_string(),
            kind,
            background: false,
            external: false,
            weight: None,
            positive: false,
            parameter: false,
        }
    }

    pub fn background(name: &str, kind: BundleKind) -> Self {
        BundleSpec { background: true, ..BundleSpec::matter(name, kind) }
    }

    pub fn external(name: &str, kind: BundleKind, weight: Exp, positive: bool) -> Self {
        BundleSpec {
            external: true,
            weight: Some(weight),
            positive,
            ..BundleSpec::matter(name, kind)
        }
    }
}

/// Validated model: manifold, bundles, jet-order cap.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub manifold: ManifoldSpec,
    bundles: Vec<BundleSpec>,
    pub max_order: usize,
    metric: Option<FieldId>,
}

impl ModelSpec {
    pub fn declare(
        manifold: ManifoldSpec,
        bundles: Vec<BundleSpec>,
        max_order: usize,
    ) -> Result<ModelSpec, ModelError> {
        if max_order < 1 || max_order > ORDER_CAP {
            return Err(ModelError::BadOrder(max_order));
        }
        let mut metric = None;
        for (k, b) in bundles.iter().enumerate() {
            if bundles[..k].iter().any(|o| o.name == b.name) {
                return Err(ModelError::DuplicateField(b.name.clone()));
            }
            match b.kind {
                BundleKind::Metric => {
                    if metric.is_some() {
                        return Err(ModelError::TwoMetrics);
                    }
                    if !b.background {
                        return Err(ModelError::BackgroundKindAsMatter(b.name.clone()));
                    }
                    metric = Some(FieldId(k as u16));
                }
                BundleKind::Distortion => {
                    if !b.background {
                        return Err(ModelError::BackgroundKindAsMatter(b.name.clone()));
                    }
                }
                BundleKind::Tensor { up, down } => {
                    if (up + down) as usize > 3 {
                        return Err(ModelError::RankTooHigh((up + down) as usize));
                    }
                }
                BundleKind::Scalar => {}
            }
            if b.weight.is_some() && !b.external {
                return Err(ModelError::WeightOnNonExternal(b.name.clone()));
            }
            if b.external && b.weight.is_none() {
                return Err(ModelError::MissingWeight(b.name.clone()));
            }
            if b.positive && !(b.external && matches!(b.kind, BundleKind::Scalar)) {
                return Err(ModelError::PositiveOnNonScalar(b.name.clone()));
            }
        }
        Ok(ModelSpec { manifold, bundles, max_order, metric })
    }

    pub fn dim(&self) -> usize {
        self.manifold.dim
    }

    /// Maximum jet order any derived atom may reach.
    pub fn order_limit(&self) -> usize {
        self.max_order + ORDER_SLACK
    }

    pub fn bundles(&self) -> &[BundleSpec] {
        &self.bundles
    }

    pub fn field_ids(&self) -> impl Iterator<Item = FieldId> {
        (0..self.bundles.len() as u16).map(FieldId)
    }

    pub fn field(&self, name: &str) -> Result<FieldId, ModelError> {
        self.bundles
            .iter()
            .position(|b| b.name == name)
            .map(|k| FieldId(k as u16))
            .ok_or_else(|| ModelError::UnknownField(name.to_string()))
    }

    pub fn bundle(&self, f: FieldId) -> &BundleSpec {
        &self.bundles[f.0 as usize]
    }

    pub fn metric_field(&self) -> Option<FieldId> {
        self.metric
    }

    /// Extend the model with a synthetic parameter vector field (a Tensor(1,0)
    /// bundle exempt from validation), returning the extended model and the
    /// new field's id. Used to carry a generic ξ through the calculus.
    pub fn with_parameter_field(&self, name: &str) -> (ModelSpec, FieldId) {
        let mut m = self.clone();
        m.bundles.push(BundleSpec {
            name: name.to_string(),
            kind: BundleKind::Tensor { up: 1, down: 0 },
            background: false,
            external: false,
            weight: None,
            positive: false,
            parameter: true,
        });
        (m.clone(), FieldId((m.bundles.len() - 1) as u16))
    }

    // -- component encoding ------------------------------------------------

    pub fn n_components(&self, f: FieldId) -> u32 {
        let n = self.dim();
        match self.bundle(f).kind {
            BundleKind::Scalar => 1,
            BundleKind::Tensor { up, down } => (n as u32).pow((up + down) as u32),
            BundleKind::Metric => (n * (n + 1) / 2) as u32,
            BundleKind::Distortion => (n as u32).pow(3),
        }
    }

    /// Flat component id of a tensor index tuple, contravariant indices first.
    pub fn tensor_comp(&self, f: FieldId, ups: &[usize], downs: &[usize]) -> u32 {
        let n = self.dim() as u32;
        match self.bundle(f).kind {
            BundleKind::Scalar => {
                debug_assert!(ups.is_empty() && downs.is_empty());
                0
            }
            BundleKind::Tensor { up, down } => {
                debug_assert_eq!(ups.len(), up as usize);
                debug_assert_eq!(downs.len(), down as usize);
                let mut c = 0u32;
                for &i in ups.iter().chain(downs.iter()) {
                    debug_assert!(i < n as usize);
                    c = c * n + i as u32;
                }
                c
            }
            BundleKind::Metric => {
                debug_assert_eq!(ups.len(), 2);
                self.pair_index(ups[0], ups[1])
            }
            BundleKind::Distortion => {
                debug_assert!(ups.len() == 1 && downs.len() == 2);
                (ups[0] as u32) * n * n + (downs[0] as u32) * n + downs[1] as u32
            }
        }
    }

    /// Inverse of [`tensor_comp`]: (contravariant, covariant) index tuples.
    pub fn tensor_comp_decode(&self, f: FieldId, comp: u32) -> (Vec<usize>, Vec<usize>) {
        let n = self.dim() as u32;
        match self.bundle(f).kind {
            BundleKind::Scalar => (vec![], vec![]),
            BundleKind::Tensor { up, down } => {
                let total = (up + down) as usize;
                let mut idx = vec![0usize; total];
                let mut c = comp;
                for k in (0..total).rev() {
                    idx[k] = (c % n) as usize;
                    c /= n;
                }
                let downs = idx.split_off(up as usize);
                (idx, downs)
            }
            BundleKind::Metric => {
                let (i, j) = self.pair_of_index(comp);
                (vec![i, j], vec![])
            }
            BundleKind::Distortion => {
                let i = comp / (n * n);
                let r = comp % (n * n);
                (vec![i as usize], vec![(r / n) as usize, (r % n) as usize])
            }
        }
    }

    /// Index of the unordered pair (i, j) among pairs with i ≤ j.
    pub fn pair_index(&self, i: usize, j: usize) -> u32 {
        let n = self.dim();
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        debug_assert!(j < n);
        // Row-major over the upper triangle: rows 0..i hold n, n−1, ...
        // entries.
        (i * n - i * i.saturating_sub(1) / 2 + (j - i)) as u32
    }

    pub fn pair_of_index(&self, a: u32) -> (usize, usize) {
        let n = self.dim();
        let mut a = a as usize;
        for i in 0..n {
            let row = n - i;
            if a < row {
                return (i, i + a);
            }
            a -= row;
        }
        panic!("pair index out of range");
    }

    /// Unordered pairs (i, j) with i ≤ j, in component order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let n = self.dim();
        let mut out = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                out.push((i, j));
            }
        }
        out
    }

    // -- atoms -------------------------------------------------------------

    pub fn jet(&self, f: FieldId, comp: u32, derivs: DerivIdx) -> Atom {
        debug_assert!(comp < self.n_components(f));
        Atom::Jet(JetVar { field: f, comp, derivs })
    }

    pub fn jet0(&self, f: FieldId, comp: u32) -> Atom {
        self.jet(f, comp, DerivIdx::none())
    }

    pub fn base(&self, i: usize) -> Atom {
        debug_assert!(i < self.dim());
        Atom::Base(i as u8)
    }

    /// All derivative multisets over the base indices of order ≤ `max`.
    pub fn deriv_multisets(&self, max: usize) -> Vec<DerivIdx> {
        let n = self.dim();
        let mut out = vec![DerivIdx::none()];
        let mut frontier = vec![DerivIdx::none()];
        for _ in 0..max {
            let mut next = Vec::new();
            for d in &frontier {
                // Only append indices ≥ the largest present to enumerate each
                // multiset once.
                let start = d.indices().last().copied().unwrap_or(0);
                for i in start..n {
                    next.push(d.plus(i));
                }
            }
            out.extend(next.iter().copied());
            frontier = next;
        }
        out
    }

    /// Every jet atom of the model up to derivative order `max`.
    pub fn all_jet_atoms(&self, max: usize) -> Vec<Atom> {
        let mut out = Vec::new();
        for f in self.field_ids() {
            for comp in 0..self.n_components(f) {
                for d in self.deriv_multisets(max) {
                    out.push(self.jet(f, comp, d));
                }
            }
        }
        out
    }

    // -- metric machinery --------------------------------------------------

    /// The contravariant component g^{ij} as an expression (one atom).
    pub fn metric_up(&self, i: usize, j: usize) -> Expr {
        let g = self.metric.expect("model has a metric");
        Expr::from_atom(self.jet0(g, self.pair_index(i, j)))
    }

    /// Determinant of the contravariant metric matrix, fully expanded.
    pub fn det_up(&self) -> Expr {
        let n = self.dim();
        let mat: Vec<Vec<Expr>> =
            (0..n).map(|i| (0..n).map(|j| self.metric_up(i, j)).collect()).collect();
        det_expr(&mat)
    }

    /// Lowered metric g_{ij} = adjugate(g^{··})_{ij} · det(g^{··})^{-1}.
    ///
    /// The inverse determinant is carried as a power of s · det g^{··} — the
    /// same base `sqrt_det` uses — so volume factors and lowered metrics
    /// multiply by adding exponents instead of stacking two incompatible
    /// determinant radicals.
    pub fn metric_lowered(&self, i: usize, j: usize) -> Expr {
        let n = self.dim();
        let mat: Vec<Vec<Expr>> =
            (0..n).map(|r| (0..n).map(|c| self.metric_up(r, c)).collect()).collect();
        let s = coeff_int(self.manifold.det_sign() as i64);
        let det_inv = det_expr(&mat)
            .scale(&s)
            .pow(-Exp::one())
            .expect("nonzero determinant polynomial");
        // Inverse transpose of the cofactor: for a symmetric matrix the
        // adjugate is symmetric, so the (i,j) cofactor suffices.
        cofactor(&mat, i, j).mul(&det_inv).scale(&s)
    }

    /// √|det g_{ij}| = (s · det g^{··})^{-1/2}, where s is the sign of the
    /// signature determinant.
    pub fn sqrt_det(&self) -> Expr {
        let s = self.manifold.det_sign();
        if self.metric.is_none() {
            panic!("model has a metric");
        }
        let body = self.det_up().scale(&coeff_int(s as i64));
        body.pow(exp_ratio(-1, 2)).expect("determinant polynomial is nonzero")
    }
}

/// Determinant of a square matrix of expressions by Laplace expansion along
/// the first row.
pub fn det_expr(m: &[Vec<Expr>]) -> Expr {
    let n = m.len();
    if n == 0 {
        return Expr::one();
    }
    if n == 1 {
        return m[0][0].clone();
    }
    let mut acc = Expr::zero();
    for c in 0..n {
        if m[0][c].is_zero() {
            continue;
        }
        let sub: Vec<Vec<Expr>> = (1..n)
            .map(|r| (0..n).filter(|cc| *cc != c).map(|cc| m[r][cc].clone()).collect())
            .collect();
        let mut piece = m[0][c].mul(&det_expr(&sub));
        if c % 2 == 1 {
            piece = piece.neg();
        }
        acc = acc.add(&piece);
    }
    acc
}

/// Signed (i, j) cofactor of a square matrix of expressions.
pub fn cofactor(m: &[Vec<Expr>], i: usize, j: usize) -> Expr {
    let n = m.len();
    if n == 1 {
        return Expr::one();
    }
    let sub: Vec<Vec<Expr>> = (0..n)
        .filter(|r| *r != i)
        .map(|r| (0..n).filter(|c| *c != j).map(|c| m[r][c].clone()).collect())
        .collect();
    let d = det_expr(&sub);
    if (i + j) % 2 == 1 {
        d.neg()
    } else {
        d
    }
}

/// Kronecker delta as a constant expression.
pub fn delta(i: usize, j: usize) -> Expr {
    if i == j {
        Expr::one()
    } else {
        Expr::zero()
    }
}

/// Convenience: 1 as a `Coeff`.
pub fn coeff_one() -> Coeff {
    Coeff::one()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::exp_int;

    fn metric_model(dim: usize) -> ModelSpec {
        ModelSpec::declare(
            ManifoldSpec::euclidean(dim).unwrap(),
            vec![
                BundleSpec::background("g", BundleKind::Metric),
                BundleSpec::matter("phi", BundleKind::Scalar),
            ],
            2,
        )
        .unwrap()
    }

    #[test]
    fn declare_rejects_invalid_models() {
        let m = ManifoldSpec::euclidean(2).unwrap();
        let dup = ModelSpec::declare(
            m.clone(),
            vec![
                BundleSpec::matter("a", BundleKind::Scalar),
                BundleSpec::matter("a", BundleKind::Scalar),
            ],
            1,
        );
        assert!(matches!(dup, Err(ModelError::DuplicateField(_))));
        let two = ModelSpec::declare(
            m.clone(),
            vec![
                BundleSpec::background("g", BundleKind::Metric),
                BundleSpec::background("h", BundleKind::Metric),
            ],
            1,
        );
        assert!(matches!(two, Err(ModelError::TwoMetrics)));
        let w = ModelSpec::declare(
            m.clone(),
            vec![BundleSpec {
                weight: Some(exp_int(1)),
                ..BundleSpec::matter("a", BundleKind::Scalar)
            }],
            1,
        );
        assert!(matches!(w, Err(ModelError::WeightOnNonExternal(_))));
        assert!(matches!(ManifoldSpec::euclidean(7), Err(ModelError::BadDimension(7))));
        assert!(matches!(
            ManifoldSpec::new(2, vec![1, 2]),
            Err(ModelError::BadSignature)
        ));
    }

    #[test]
    fn fluid_style_external_declarations_are_valid() {
        let m = ModelSpec::declare(
            ManifoldSpec::lorentzian(4).unwrap(),
            vec![
                BundleSpec::background("g", BundleKind::Metric),
                BundleSpec::external("rho", BundleKind::Scalar, exp_ratio(-3, 2), true),
                BundleSpec::external("u", BundleKind::Tensor { up: 1, down: 0 }, exp_ratio(-1, 2), false),
            ],
            2,
        );
        assert!(m.is_ok());
    }

    #[test]
    fn pair_indexing_round_trips() {
        let model = metric_model(3);
        let mut seen = vec![false; 6];
        for (i, j) in model.pairs() {
            let a = model.pair_index(i, j);
            assert_eq!(model.pair_index(j, i), a);
            assert_eq!(model.pair_of_index(a), (i, j));
            seen[a as usize] = true;
        }
        assert!(seen.into_iter().all(|b| b));
    }

    #[test]
    fn lowered_metric_in_dimension_one_and_two() {
        let m1 = metric_model(1);
        let g00 = m1.metric_up(0, 0);
        let low = m1.metric_lowered(0, 0);
        assert!(low.sub(&g00.pow(exp_int(-1)).unwrap()).is_zero());

        let m2 = metric_model(2);
        // g_{00} · det − g^{11} = 0
        let det = m2.det_up();
        let d = m2.metric_lowered(0, 0).mul(&det).sub(&m2.metric_up(1, 1));
        assert!(d.is_zero(), "residual: {d}");
    }

    #[test]
    fn lowered_metric_inverts_the_contravariant_metric() {
        for dim in [2usize, 3] {
            let m = metric_model(dim);
            for i in 0..dim {
                for j in 0..dim {
                    let mut acc = Expr::zero();
                    for a in 0..dim {
                        acc = acc.add(&m.metric_up(i, a).mul(&m.metric_lowered(a, j)));
                    }
                    let resid = acc.sub(&delta(i, j));
                    assert!(resid.is_zero(), "dim {dim} ({i},{j}): {resid}");
                }
            }
        }
    }

    #[test]
    fn volume_factor_squares_to_inverse_determinant() {
        // Euclidean: √g² · det = 1.
        let m = metric_model(2);
        let s = m.sqrt_det();
        let sq = s.mul(&s).mul(&m.det_up());
        assert!(sq.is_one(), "euclidean: {sq}");
        // Lorentzian: √g² · (−det) = 1.
        let ml = ModelSpec::declare(
            ManifoldSpec::lorentzian(2).unwrap(),
            vec![BundleSpec::background("g", BundleKind::Metric)],
            2,
        )
        .unwrap();
        let sl = ml.sqrt_det();
        let sql = sl.mul(&sl).mul(&ml.det_up().neg());
        assert!(sql.is_one(), "lorentzian: {sql}");
    }

    #[test]
    fn volume_factor_in_dimension_one_is_a_plain_power() {
        let m = metric_model(1);
        let g = m.jet0(m.metric_field().unwrap(), 0);
        let expect = Expr::atom_pow(g, exp_ratio(-1, 2));
        assert!(m.sqrt_det().sub(&expect).is_zero());
    }

    #[test]
    fn lorentzian_volume_factor_evaluates_to_one_at_the_signature_matrix() {
        let ml = ModelSpec::declare(
            ManifoldSpec::lorentzian(2).unwrap(),
            vec![BundleSpec::background("g", BundleKind::Metric)],
            2,
        )
        .unwrap();
        let g = ml.metric_field().unwrap();
        let mut map = std::collections::HashMap::new();
        map.insert(ml.jet0(g, ml.pair_index(0, 0)), Expr::one());
        map.insert(ml.jet0(g, ml.pair_index(0, 1)), Expr::zero());
        map.insert(ml.jet0(g, ml.pair_index(1, 1)), Expr::from_int(-1));
        let v = ml.sqrt_det().substitute(&map).unwrap();
        assert!(v.is_one(), "got {v}");
    }

    #[test]
    fn distinct_jet_atoms_are_independent() {
        let m = metric_model(2);
        let phi = m.field("phi").unwrap();
        let a = m.jet(phi, 0, DerivIdx::from_indices(&[0]));
        let b = m.jet(phi, 0, DerivIdx::from_indices(&[1]));
        let e = Expr::from_atom(a.clone());
        assert!(e.partial(&b).unwrap().is_zero());
        assert!(e.partial(&a).unwrap().is_one());
    }

    #[test]
    fn deriv_multiset_enumeration_counts_match() {
        let m = metric_model(2);
        // Order ≤ 2 in dim 2: 1 + 2 + 3 = 6 multisets.
        assert_eq!(m.deriv_multisets(2).len(), 6);
        let m3 = metric_model(3);
        // Order ≤ 2 in dim 3: 1 + 3 + 6 = 10.
        assert_eq!(m3.deriv_multisets(2).len(), 10);
    }
}
