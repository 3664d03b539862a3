//! Energy-momentum tensors and balance identities.
//!
//! The energy-momentum density is assembled from the variation of the
//! Lagrangian with respect to each background field, contracted with the
//! canonical-lift coefficients of that field. The differential identity
//! tying its divergence to the matter equations holds exactly for generally
//! covariant densities, and the machinery here both builds the pieces and
//! verifies the identity.

use crate::atom::{Atom, FieldId};
use crate::expr::{Expr, NormError};
use crate::jet::{
    canonical_lift, check_covariance, euler_lagrange, lifted_generator, noether_current,
    total_derivative, JetError,
};
use crate::model::{BundleKind, ModelError, ModelSpec};
use crate::rational::{coeff_int, exp_ratio, Coeff};
use num_traits::One;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum EmtError {
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error(transparent)]
    Norm(#[from] NormError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("density is not generally covariant; {count} obstruction(s), first against `{first}`")]
    NonCovariant { count: usize, first: String },
    #[error("variation table targets `{0}`, which is not an external scalar")]
    BadVaryTarget(String),
    #[error("variation table for `{0}` is not a symmetric {1}x{1} matrix")]
    BadVaryShape(String, usize),
}

/// Prescribed variations of external scalars with respect to the
/// contravariant metric: entries[f][i][j] = δ(field f)/δ g^{ij}, symmetric
/// in (i, j).
#[derive(Clone, Debug, Default)]
pub struct VaryTable {
    entries: HashMap<FieldId, Vec<Vec<Expr>>>,
}

impl VaryTable {
    pub fn empty() -> Self {
        VaryTable { entries: HashMap::new() }
    }

    pub fn insert(
        &mut self,
        model: &ModelSpec,
        f: FieldId,
        table: Vec<Vec<Expr>>,
    ) -> Result<(), EmtError> {
        let b = model.bundle(f);
        if !b.external || !matches!(b.kind, BundleKind::Scalar) {
            return Err(EmtError::BadVaryTarget(b.name.clone()));
        }
        let n = model.dim();
        let square = table.len() == n && table.iter().all(|r| r.len() == n);
        let symmetric = square
            && (0..n).all(|i| (0..n).all(|j| table[i][j] == table[j][i]));
        if !symmetric {
            return Err(EmtError::BadVaryShape(b.name.clone(), n));
        }
        self.entries.insert(f, table);
        Ok(())
    }

    pub fn get(&self, f: FieldId) -> Option<&Vec<Vec<Expr>>> {
        self.entries.get(&f)
    }

    pub fn fields(&self) -> impl Iterator<Item = FieldId> + '_ {
        self.entries.keys().copied()
    }
}

/// The variation of a density with respect to one background field, one
/// component per fiber coordinate (unordered pairs for the metric).
#[derive(Debug)]
pub struct SourceForm {
    pub field: FieldId,
    pub components: Vec<Expr>,
}

impl SourceForm {
    /// Ordered metric components: the unordered-pair coordinate absorbs both
    /// orderings of an off-diagonal index pair, so the ordered value halves
    /// it there.
    pub fn ordered(&self, model: &ModelSpec, i: usize, j: usize) -> Expr {
        let comp = model.pair_index(i.min(j), i.max(j)) as usize;
        let w = if i == j { Coeff::one() } else { Coeff::new(1.into(), 2.into()) };
        self.components[comp].scale(&w)
    }
}

/// Variation of the density with respect to field `f`: the Euler-Lagrange
/// form of each component, plus — for the metric — the chain-rule
/// contributions of any externals with prescribed metric variations.
pub fn source_form(
    model: &ModelSpec,
    density: &Expr,
    vary: &VaryTable,
    f: FieldId,
) -> Result<SourceForm, EmtError> {
    let mut components = euler_lagrange(model, density, f)?;
    if matches!(model.bundle(f).kind, BundleKind::Metric) {
        for ext in vary.fields() {
            let table = vary.get(ext).expect("listed field");
            let dl = density.partial(&model.jet0(ext, 0))?;
            if dl.is_zero() {
                continue;
            }
            for (i, j) in model.pairs() {
                let comp = model.pair_index(i, j) as usize;
                let mult = coeff_int(if i == j { 1 } else { 2 });
                components[comp] =
                    components[comp].add(&dl.mul(&table[i][j]).scale(&mult));
            }
        }
    }
    Ok(SourceForm { field: f, components })
}

/// The energy-momentum tensor of a density over its backgrounds.
#[derive(Debug)]
pub struct EmTensor {
    /// 𝒯^j_i as a density: `density[j][i]`.
    pub density: Vec<Vec<Expr>>,
    /// T^j_i = 𝒯^j_i / √|g|: `mixed[j][i]`.
    pub mixed: Vec<Vec<Expr>>,
}

fn is_matter(model: &ModelSpec, f: FieldId) -> bool {
    let b = model.bundle(f);
    !b.background && !b.external && !b.parameter
}

fn background_fields(model: &ModelSpec) -> Vec<FieldId> {
    model
        .field_ids()
        .filter(|f| {
            let b = model.bundle(*f);
            (b.background || b.external) && !b.parameter
        })
        .collect()
}

fn matter_fields(model: &ModelSpec) -> Vec<FieldId> {
    model.field_ids().filter(|f| is_matter(model, *f)).collect()
}

/// Contract per-field source components against the lift coefficients:
/// Σ_A c1[A][j][i] · τ_A. The sources may be anything — derived variations
/// or opaque placeholders.
pub fn em_tensor_from_sources(
    model: &ModelSpec,
    sources: &HashMap<FieldId, Vec<Expr>>,
) -> Result<Vec<Vec<Expr>>, EmtError> {
    let n = model.dim();
    let mut t = vec![vec![Expr::zero(); n]; n];
    for (f, tau) in sources {
        let lc = canonical_lift(model, *f)?;
        for comp in 0..model.n_components(*f) as usize {
            if tau[comp].is_zero() {
                continue;
            }
            for j in 0..n {
                for i in 0..n {
                    if lc.c1[comp][j][i].is_zero() {
                        continue;
                    }
                    t[j][i] = t[j][i].add(&lc.c1[comp][j][i].mul(&tau[comp]));
                }
            }
        }
    }
    Ok(t)
}

/// 𝒯^j_i = Σ over background fields of (lift coefficient c1[A][j][i]) · τ_A,
/// and its version with the volume factor divided out.
pub fn em_tensor(
    model: &ModelSpec,
    density: &Expr,
    vary: &VaryTable,
) -> Result<EmTensor, EmtError> {
    let mut sources = HashMap::new();
    for f in background_fields(model) {
        let tau = source_form(model, density, vary, f)?;
        sources.insert(f, tau.components);
    }
    let t = em_tensor_from_sources(model, &sources)?;
    let inv_vol = {
        let s = model.manifold.det_sign();
        let body = model.det_up().scale(&coeff_int(s as i64));
        body.pow(exp_ratio(1, 2))?
    };
    let mixed = t
        .iter()
        .map(|row| row.iter().map(|e| e.mul(&inv_vol)).collect())
        .collect();
    Ok(EmTensor { density: t, mixed })
}

/// The pieces of the differential identity
///   d_j 𝒯^j_i = Σ_bg (c0 - y_{,i}) τ  +  Σ_matter (c0 - y_{,i}) E
///               - d_j Σ_matter c1^j E,
/// stated here as  residual = emt_div - background - matter  which vanishes
/// identically for covariant densities (with bare source forms throughout).
#[derive(Debug)]
pub struct BalanceReport {
    /// d_j 𝒯^j_i, one entry per i.
    pub emt_div: Vec<Expr>,
    /// Background force terms Σ_A (c0^A_i - y^A_{,i}) τ_A.
    pub background: Vec<Expr>,
    /// Matter terms Σ_σ (c0^σ_i - y^σ_{,i}) E_σ - d_j Σ_σ c1^{σ j}_i E_σ;
    /// these vanish on shell.
    pub matter: Vec<Expr>,
    /// emt_div - background - matter, identically zero when the density is
    /// covariant.
    pub residual: Vec<Expr>,
}

fn lift_force_terms(
    model: &ModelSpec,
    fields: &[FieldId],
    els: &HashMap<FieldId, Vec<Expr>>,
) -> Result<(Vec<Expr>, Vec<Vec<Expr>>), EmtError> {
    // Returns (Σ (c0 - y_{,i}) E per i, Σ c1[j][i] E per [j][i]).
    let n = model.dim();
    let mut point = vec![Expr::zero(); n];
    let mut deriv = vec![vec![Expr::zero(); n]; n];
    for f in fields {
        let lc = canonical_lift(model, *f)?;
        let e = &els[f];
        for comp in 0..model.n_components(*f) as usize {
            if e[comp].is_zero() {
                continue;
            }
            for i in 0..n {
                let y1 = Expr::from_atom(model.jet(
                    *f,
                    comp as u32,
                    crate::atom::DerivIdx::from_indices(&[i]),
                ));
                let c = lc.c0[comp][i].sub(&y1);
                point[i] = point[i].add(&c.mul(&e[comp]));
                for j in 0..n {
                    if !lc.c1[comp][j][i].is_zero() {
                        deriv[j][i] = deriv[j][i].add(&lc.c1[comp][j][i].mul(&e[comp]));
                    }
                }
            }
        }
    }
    Ok((point, deriv))
}

/// Verify and decompose the divergence identity of the energy-momentum
/// density. Refuses densities that are not generally covariant, since the
/// identity is exactly the Noether identity of covariance.
pub fn noether_identity(model: &ModelSpec, density: &Expr) -> Result<BalanceReport, EmtError> {
    let rep = check_covariance(model, density)?;
    if !rep.covariant {
        return Err(EmtError::NonCovariant {
            count: rep.obstructions.len(),
            first: rep.obstructions.first().map(|o| o.generator_label()).unwrap_or_default(),
        });
    }
    balance_unchecked(model, density)
}

/// The same decomposition without the covariance gate (the residual is then
/// a genuine measurement of the defect).
pub fn balance_unchecked(model: &ModelSpec, density: &Expr) -> Result<BalanceReport, EmtError> {
    let n = model.dim();
    let bare = VaryTable::empty();
    let emt = em_tensor(model, density, &bare)?;
    let mut emt_div = vec![Expr::zero(); n];
    for i in 0..n {
        for j in 0..n {
            emt_div[i] = emt_div[i].add(&total_derivative(model, &emt.density[j][i], j)?);
        }
    }
    let mut els: HashMap<FieldId, Vec<Expr>> = HashMap::new();
    for f in model.field_ids() {
        if model.bundle(f).parameter {
            continue;
        }
        els.insert(f, euler_lagrange(model, density, f)?);
    }
    let bg = background_fields(model);
    let (background, _) = lift_force_terms(model, &bg, &els)?;
    let mat = matter_fields(model);
    let (mat_point, mat_deriv) = lift_force_terms(model, &mat, &els)?;
    let mut matter = mat_point;
    for i in 0..n {
        for j in 0..n {
            if !mat_deriv[j][i].is_zero() {
                matter[i] = matter[i].sub(&total_derivative(model, &mat_deriv[j][i], j)?);
            }
        }
    }
    let residual: Vec<Expr> = (0..n)
        .map(|i| emt_div[i].sub(&background[i]).sub(&matter[i]))
        .collect();
    Ok(BalanceReport { emt_div, background, matter, residual })
}

/// Compare the two routes to the conserved current of the generically
/// lifted generator: the boundary-coefficient route and the
/// energy-momentum route. Returns Σ_j d_j (𝒯^j_i ξ^i + Σ c1^{σ j}_i E_σ ξ^i
/// - J^j), which vanishes identically for covariant densities of order at
/// most two.
pub fn noether_equivalence_residual(
    model: &ModelSpec,
    density: &Expr,
) -> Result<Expr, EmtError> {
    let (ext, param) = model.with_parameter_field("xi#eq");
    let gen = lifted_generator(&ext, param)?;
    let j_up = noether_current(&ext, density, &gen)?;
    let bare = VaryTable::empty();
    let emt = em_tensor(model, density, &bare)?;
    let mut els: HashMap<FieldId, Vec<Expr>> = HashMap::new();
    let mat = matter_fields(model);
    for f in &mat {
        els.insert(*f, euler_lagrange(model, density, *f)?);
    }
    let (_, mat_deriv) = lift_force_terms(model, &mat, &els)?;
    let n = model.dim();
    let mut residual = Expr::zero();
    for j in 0..n {
        let mut dj = Expr::zero();
        for i in 0..n {
            let xi = Expr::from_atom(ext.jet0(param, i as u32));
            dj = dj.add(&emt.density[j][i].mul(&xi));
            if !mat_deriv[j][i].is_zero() {
                dj = dj.add(&mat_deriv[j][i].mul(&xi));
            }
        }
        dj = dj.sub(&j_up[j]);
        residual = residual.add(&total_derivative(&ext, &dj, j)?);
    }
    Ok(residual)
}

/// Report of an exact internal transformation applied to a density.
#[derive(Debug)]
pub struct GaugeReport {
    pub invariant: bool,
    pub defect: Expr,
}

/// Apply a point transformation of fiber coordinates (given on zeroth-order
/// components) to the density, extending it to all jets by total
/// derivatives, and compare with the original.
pub fn gauge_invariance_check(
    model: &ModelSpec,
    density: &Expr,
    shift: &HashMap<(FieldId, u32), Expr>,
) -> Result<GaugeReport, EmtError> {
    let mut map: HashMap<Atom, Expr> = HashMap::new();
    for a in density.atoms_deep() {
        if let Atom::Jet(j) = &a {
            if let Some(s) = shift.get(&(j.field, j.comp)) {
                let image = crate::jet::total_derivative_multi(model, s, j.derivs)?;
                map.insert(a.clone(), image);
            }
        }
    }
    let transformed = density.substitute(&map)?;
    let defect = transformed.sub(density);
    Ok(GaugeReport { invariant: defect.is_zero(), defect })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atom::DerivIdx;
    use crate::model::{BundleSpec, ManifoldSpec};
    use crate::rational::{coeff_ratio, exp_int};

    fn metric_scalar(dim: usize) -> (ModelSpec, FieldId, FieldId) {
        let m = ModelSpec::declare(
            ManifoldSpec::euclidean(dim).unwrap(),
            vec![
                BundleSpec::background("g", BundleKind::Metric),
                BundleSpec::matter("phi", BundleKind::Scalar),
            ],
            2,
        )
        .unwrap();
        let g = m.field("g").unwrap();
        let p = m.field("phi").unwrap();
        (m, g, p)
    }

    fn kinetic_density(m: &ModelSpec, p: FieldId) -> Expr {
        let n = m.dim();
        let mut kin = Expr::zero();
        for i in 0..n {
            for j in 0..n {
                let pi = Expr::from_atom(m.jet(p, 0, DerivIdx::from_indices(&[i])));
                let pj = Expr::from_atom(m.jet(p, 0, DerivIdx::from_indices(&[j])));
                kin = kin.add(&m.metric_up(i, j).mul(&pi).mul(&pj));
            }
        }
        kin.mul(&m.sqrt_det()).scale(&coeff_ratio(1, 2))
    }

    #[test]
    fn volume_density_varies_to_minus_half_the_lowered_metric() {
        let (m, g, _) = metric_scalar(2);
        let tau = source_form(&m, &m.sqrt_det(), &VaryTable::empty(), g).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let expect =
                    m.sqrt_det().mul(&m.metric_lowered(i, j)).scale(&coeff_ratio(-1, 2));
                assert_eq!(tau.ordered(&m, i, j), expect, "({i},{j})");
            }
        }
    }

    #[test]
    fn scalar_field_energy_momentum_matches_the_closed_form() {
        let (m, _, p) = metric_scalar(2);
        let lag = kinetic_density(&m, p);
        let emt = em_tensor(&m, &lag, &VaryTable::empty()).unwrap();
        let n = 2;
        let grad: Vec<Expr> = (0..n)
            .map(|i| Expr::from_atom(m.jet(p, 0, DerivIdx::from_indices(&[i]))))
            .collect();
        let mut sq = Expr::zero();
        for a in 0..n {
            for b in 0..n {
                sq = sq.add(&m.metric_up(a, b).mul(&grad[a]).mul(&grad[b]));
            }
        }
        for j in 0..n {
            for i in 0..n {
                let mut up = Expr::zero();
                for l in 0..n {
                    up = up.add(&m.metric_up(j, l).mul(&grad[l]));
                }
                let mut expect = up.mul(&grad[i]);
                if i == j {
                    expect = expect.sub(&sq.scale(&coeff_ratio(1, 2)));
                }
                assert_eq!(emt.mixed[j][i], expect, "({j},{i})");
            }
        }
    }

    #[test]
    fn external_variation_tables_feed_the_metric_source_form() {
        let m = ModelSpec::declare(
            ManifoldSpec::euclidean(2).unwrap(),
            vec![
                BundleSpec::background("g", BundleKind::Metric),
                BundleSpec::external("rho", BundleKind::Scalar, exp_int(-1), true),
            ],
            2,
        )
        .unwrap();
        let g = m.field("g").unwrap();
        let rho = m.field("rho").unwrap();
        let lag = Expr::from_atom(m.jet0(rho, 0)).mul(&m.sqrt_det()).neg();
        let c = Expr::from_atom(Atom::sym("c"));
        let mut vary = VaryTable::empty();
        let table: Vec<Vec<Expr>> = (0..2)
            .map(|i| (0..2).map(|j| c.mul(&m.metric_lowered(i, j))).collect())
            .collect();
        vary.insert(&m, rho, table).unwrap();
        let tau = source_form(&m, &lag, &vary, g).unwrap();
        // δ(-ρ√g)/δg^{ij} = ρ·(1/2)√g g_ij - √g·c·g_ij.
        for i in 0..2 {
            for j in 0..2 {
                let rho0 = Expr::from_atom(m.jet0(rho, 0));
                let expect = rho0
                    .scale(&coeff_ratio(1, 2))
                    .sub(&c)
                    .mul(&m.sqrt_det())
                    .mul(&m.metric_lowered(i, j));
                assert_eq!(tau.ordered(&m, i, j), expect, "({i},{j})");
            }
        }
    }

    #[test]
    fn vary_table_rejects_non_external_targets_and_bad_shapes() {
        let (m, _, p) = metric_scalar(2);
        let mut vary = VaryTable::empty();
        let table = vec![vec![Expr::zero(); 2]; 2];
        assert!(matches!(
            vary.insert(&m, p, table.clone()),
            Err(EmtError::BadVaryTarget(_))
        ));
        let m2 = ModelSpec::declare(
            ManifoldSpec::euclidean(2).unwrap(),
            vec![
                BundleSpec::background("g", BundleKind::Metric),
                BundleSpec::external("rho", BundleKind::Scalar, exp_int(-1), false),
            ],
            2,
        )
        .unwrap();
        let rho = m2.field("rho").unwrap();
        let mut bad = vec![vec![Expr::zero(); 2]; 2];
        bad[0][1] = Expr::one();
        assert!(matches!(
            vary.insert(&m2, rho, bad),
            Err(EmtError::BadVaryShape(_, 2))
        ));
    }

    #[test]
    fn divergence_identity_holds_for_the_kinetic_scalar_density() {
        let (m, _, p) = metric_scalar(2);
        let lag = kinetic_density(&m, p);
        let rep = noether_identity(&m, &lag).unwrap();
        for i in 0..2 {
            assert!(rep.residual[i].is_zero(), "component {i}: {}", rep.residual[i]);
        }
        // Scalar matter contributes -φ_{,i} E_φ and nothing through c1.
        let el = euler_lagrange(&m, &lag, p).unwrap();
        for i in 0..2 {
            let pi = Expr::from_atom(m.jet(p, 0, DerivIdx::from_indices(&[i])));
            assert_eq!(rep.matter[i], pi.mul(&el[0]).neg(), "component {i}");
        }
    }

    #[test]
    fn divergence_identity_refuses_noncovariant_densities() {
        let (m, _, p) = metric_scalar(2);
        let p0 = Expr::from_atom(m.jet(p, 0, DerivIdx::from_indices(&[0])));
        let bad = p0.mul(&p0).mul(&m.sqrt_det());
        match noether_identity(&m, &bad) {
            Err(EmtError::NonCovariant { count, .. }) => assert!(count > 0),
            other => panic!("expected a covariance refusal, got {other:?}"),
        }
    }

    #[test]
    fn current_route_and_tensor_route_agree_in_divergence() {
        let (m, _, p) = metric_scalar(2);
        let lag = kinetic_density(&m, p);
        let r = noether_equivalence_residual(&m, &lag).unwrap();
        assert!(r.is_zero(), "residual: {r}");
    }

    #[test]
    fn exact_rotation_leaves_the_two_scalar_density_invariant() {
        let m = ModelSpec::declare(
            ManifoldSpec::euclidean(2).unwrap(),
            vec![
                BundleSpec::matter("u", BundleKind::Scalar),
                BundleSpec::matter("v", BundleKind::Scalar),
            ],
            2,
        )
        .unwrap();
        let (fu, fv) = (m.field("u").unwrap(), m.field("v").unwrap());
        let mut lag = Expr::zero();
        for i in 0..2 {
            for f in [fu, fv] {
                let d = Expr::from_atom(m.jet(f, 0, DerivIdx::from_indices(&[i])));
                lag = lag.add(&d.mul(&d));
            }
        }
        lag = lag.scale(&coeff_ratio(1, 2));
        let u = Expr::from_atom(m.jet0(fu, 0));
        let v = Expr::from_atom(m.jet0(fv, 0));
        let mut shift = HashMap::new();
        shift.insert(
            (fu, 0u32),
            u.scale(&coeff_ratio(3, 5)).sub(&v.scale(&coeff_ratio(4, 5))),
        );
        shift.insert(
            (fv, 0u32),
            u.scale(&coeff_ratio(4, 5)).add(&v.scale(&coeff_ratio(3, 5))),
        );
        let rep = gauge_invariance_check(&m, &lag, &shift).unwrap();
        assert!(rep.invariant, "defect: {}", rep.defect);
        // A non-orthogonal shear is caught.
        let mut shear = HashMap::new();
        shear.insert((fu, 0u32), u.add(&v));
        let rep = gauge_invariance_check(&m, &lag, &shear).unwrap();
        assert!(!rep.invariant);
    }
}
