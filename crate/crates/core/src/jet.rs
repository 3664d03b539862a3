//! Variational calculus on jet coordinates: total derivatives, projectable
//! generators and their prolongations, Euler-Lagrange forms, boundary
//! (momentum) coefficients, Noether currents, canonical lifts of base vector
//! fields, and the general-covariance test.
//!
//! Everything here is formal: jets are independent coordinates, total
//! derivatives promote them, and every identity is an identity of canonical
//! expressions.

use crate::atom::{Atom, DerivIdx, FieldId};
use crate::expr::{Expr, NormError};
use crate::model::{BundleKind, ModelError, ModelSpec};
use crate::rational::{coeff_int, Coeff, Exp};
use num_traits::{One, Zero};
use std::cell::RefCell;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum JetError {
    #[error("derivative order would exceed the working limit {limit} at `{atom}`")]
    OrderLimit { atom: String, limit: usize },
    #[error(transparent)]
    Norm(#[from] NormError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("density derivative order {found} exceeds the declared bound {max}")]
    DensityOrder { found: usize, max: usize },
    #[error("boundary currents support densities of order <= 2; this one has order {0}")]
    BoundaryOrder(usize),
    #[error("generator has {found} base components for a {dim}-dimensional base")]
    GeneratorShape { found: usize, dim: usize },
    #[error("generator {slot} component depends on `{atom}`, which is not allowed there")]
    GeneratorDependence { slot: String, atom: String },
    #[error("generator names unknown component {comp} of field {field}")]
    GeneratorComponent { field: u16, comp: u32 },
}

pub(crate) fn exp_as_coeff(e: Exp) -> Coeff {
    Coeff::new((*e.numer()).into(), (*e.denom()).into())
}

/// Largest derivative order of any jet atom, descending into power bodies.
pub fn density_order(e: &Expr) -> usize {
    e.atoms_deep()
        .iter()
        .filter_map(|a| match a {
            Atom::Jet(j) => Some(j.order()),
            _ => None,
        })
        .max()
        .unwrap_or(0)
}

/// Check a declared density: every jet atom must name a component the model
/// has, at a derivative order within the declared bound.
pub fn validate_density(model: &ModelSpec, e: &Expr) -> Result<usize, JetError> {
    let mut max = 0usize;
    for a in e.atoms_deep() {
        match a {
            Atom::Jet(j) => {
                if (j.field.0 as usize) >= model.bundles().len()
                    || j.comp >= model.n_components(j.field)
                {
                    return Err(JetError::GeneratorComponent { field: j.field.0, comp: j.comp });
                }
                let o = j.order();
                if o > model.max_order {
                    return Err(JetError::DensityOrder { found: o, max: model.max_order });
                }
                max = max.max(o);
            }
            Atom::Base(i) => {
                if (i as usize) >= model.dim() {
                    return Err(JetError::Model(ModelError::BadDimension(i as usize)));
                }
            }
            _ => {}
        }
    }
    Ok(max)
}

fn d_atom(model: &ModelSpec, a: &Atom, i: usize, limit: usize) -> Result<Expr, JetError> {
    match a {
        Atom::Base(j) => {
            Ok(if *j as usize == i { Expr::one() } else { Expr::zero() })
        }
        Atom::Sym(_) => Ok(Expr::zero()),
        Atom::Jet(jv) => {
            if jv.order() + 1 > limit {
                return Err(JetError::OrderLimit { atom: a.to_string(), limit });
            }
            Ok(Expr::from_atom(Atom::Jet(jv.promoted(i))))
        }
        Atom::SumPow(b) => total_derivative(model, b.expr(), i),
    }
}

/// Total derivative d_i: base coordinates differentiate to Kronecker deltas,
/// jets promote, opaque symbols are constants, and power bodies go through
/// the chain rule.
pub fn total_derivative(model: &ModelSpec, e: &Expr, i: usize) -> Result<Expr, JetError> {
    let limit = model.order_limit();
    let mut acc = Expr::zero();
    for t in e.terms() {
        let pairs = t.mono.pairs();
        for (k, (a, ex)) in pairs.iter().enumerate() {
            let da = d_atom(model, a, i, limit)?;
            if da.is_zero() {
                continue;
            }
            let mut piece = Expr::from_coeff(t.coeff.clone() * exp_as_coeff(*ex));
            for (kk, (aa, ee)) in pairs.iter().enumerate() {
                if kk == k {
                    continue;
                }
                piece = piece.mul(&atom_power(aa, *ee)?);
            }
            piece = piece.mul(&atom_power(a, *ex - Exp::one())?);
            acc = acc.add(&piece.mul(&da));
        }
    }
    Ok(acc)
}

fn atom_power(a: &Atom, e: Exp) -> Result<Expr, JetError> {
    if e.is_zero() {
        return Ok(Expr::one());
    }
    match a {
        Atom::SumPow(b) => Ok(b.expr().pow(e)?),
        other => Ok(Expr::atom_pow(other.clone(), e)),
    }
}

/// Apply the total derivatives of a multiset, lowest index first.
pub fn total_derivative_multi(
    model: &ModelSpec,
    e: &Expr,
    d: DerivIdx,
) -> Result<Expr, JetError> {
    let mut acc = e.clone();
    for i in d.indices() {
        acc = total_derivative(model, &acc, i)?;
    }
    Ok(acc)
}

fn deriv_minus(d: DerivIdx, i: usize) -> DerivIdx {
    let mut v = d.indices();
    if let Some(pos) = v.iter().position(|x| *x == i) {
        v.remove(pos);
    }
    DerivIdx::from_indices(&v)
}

fn is_parameter_jet(model: &ModelSpec, a: &Atom) -> bool {
    matches!(a, Atom::Jet(j) if model.bundle(j.field).parameter)
}

/// A projectable generator: base components ξ^i over the base alone (or over
/// the synthetic parameter field), fiber components Ξ over base and
/// zeroth-order fiber coordinates.
#[derive(Clone, Debug)]
pub struct GeneratorField {
    pub xi: Vec<Expr>,
    fiber: HashMap<(FieldId, u32), Expr>,
}

impl GeneratorField {
    pub fn new(
        model: &ModelSpec,
        xi: Vec<Expr>,
        fiber: HashMap<(FieldId, u32), Expr>,
    ) -> Result<Self, JetError> {
        if xi.len() != model.dim() {
            return Err(JetError::GeneratorShape { found: xi.len(), dim: model.dim() });
        }
        for e in &xi {
            for a in e.atoms_deep() {
                let ok = matches!(a, Atom::Base(_) | Atom::Sym(_)) || is_parameter_jet(model, &a);
                if !ok {
                    return Err(JetError::GeneratorDependence {
                        slot: "base".into(),
                        atom: a.to_string(),
                    });
                }
            }
        }
        for ((f, c), e) in &fiber {
            if (f.0 as usize) >= model.bundles().len() || *c >= model.n_components(*f) {
                return Err(JetError::GeneratorComponent { field: f.0, comp: *c });
            }
            for a in e.atoms_deep() {
                let ok = match &a {
                    Atom::Base(_) | Atom::Sym(_) => true,
                    Atom::Jet(j) => model.bundle(j.field).parameter || j.order() == 0,
                    Atom::SumPow(_) => true,
                };
                if !ok {
                    return Err(JetError::GeneratorDependence {
                        slot: "fiber".into(),
                        atom: a.to_string(),
                    });
                }
            }
        }
        Ok(GeneratorField { xi, fiber })
    }

    /// A purely vertical generator (no base motion).
    pub fn vertical(
        model: &ModelSpec,
        fiber: HashMap<(FieldId, u32), Expr>,
    ) -> Result<Self, JetError> {
        GeneratorField::new(model, vec![Expr::zero(); model.dim()], fiber)
    }

    pub fn fiber_comp(&self, f: FieldId, c: u32) -> Expr {
        self.fiber.get(&(f, c)).cloned().unwrap_or_else(Expr::zero)
    }

    /// The characteristic Q^A = Ξ^A - y^A_m ξ^m, the vertical representative
    /// of the generator on the component (f, c).
    pub fn characteristic(&self, model: &ModelSpec, f: FieldId, c: u32) -> Expr {
        let mut q = self.fiber_comp(f, c);
        for m in 0..model.dim() {
            if self.xi[m].is_zero() {
                continue;
            }
            let y = Expr::from_atom(model.jet(f, c, DerivIdx::from_indices(&[m])));
            q = q.sub(&y.mul(&self.xi[m]));
        }
        q
    }
}

/// Memoized prolongation of a projectable generator to arbitrary jet
/// coordinates: Ξ^A_{M+i} = d_i Ξ^A_M - y^A_{M+m} d_i ξ^m.
pub struct Prolongation<'a> {
    model: &'a ModelSpec,
    gen: &'a GeneratorField,
    cache: RefCell<HashMap<(FieldId, u32, DerivIdx), Expr>>,
}

impl<'a> Prolongation<'a> {
    pub fn new(model: &'a ModelSpec, gen: &'a GeneratorField) -> Self {
        Prolongation { model, gen, cache: RefCell::new(HashMap::new()) }
    }

    pub fn component(&self, f: FieldId, c: u32, d: DerivIdx) -> Result<Expr, JetError> {
        if d.order() == 0 {
            return Ok(self.gen.fiber_comp(f, c));
        }
        if let Some(e) = self.cache.borrow().get(&(f, c, d)) {
            return Ok(e.clone());
        }
        let idx = d.indices();
        let i = *idx.last().expect("nonzero order");
        let prev = deriv_minus(d, i);
        let lower = self.component(f, c, prev)?;
        let mut acc = total_derivative(self.model, &lower, i)?;
        for m in 0..self.model.dim() {
            if self.gen.xi[m].is_zero() {
                continue;
            }
            let dxi = total_derivative(self.model, &self.gen.xi[m], i)?;
            if dxi.is_zero() {
                continue;
            }
            let y = Expr::from_atom(self.model.jet(f, c, prev.plus(m)));
            acc = acc.sub(&y.mul(&dxi));
        }
        self.cache.borrow_mut().insert((f, c, d), acc.clone());
        Ok(acc)
    }
}

/// Action of the prolonged generator on a density, plus the density times
/// the base divergence of the generator: the full Lie-type variation that
/// vanishes exactly when the generator is a strict variational symmetry.
pub fn lie_derivative_lagrangian(
    model: &ModelSpec,
    density: &Expr,
    gen: &GeneratorField,
) -> Result<Expr, JetError> {
    let pr = Prolongation::new(model, gen);
    let mut acc = Expr::zero();
    for i in 0..model.dim() {
        if gen.xi[i].is_zero() {
            continue;
        }
        let p = density.partial(&model.base(i))?;
        if !p.is_zero() {
            acc = acc.add(&gen.xi[i].mul(&p));
        }
    }
    for a in density.atoms_deep() {
        if let Atom::Jet(j) = &a {
            let p = density.partial(&a)?;
            if p.is_zero() {
                continue;
            }
            let comp = pr.component(j.field, j.comp, j.derivs)?;
            if comp.is_zero() {
                continue;
            }
            acc = acc.add(&comp.mul(&p));
        }
    }
    let mut div = Expr::zero();
    for i in 0..model.dim() {
        div = div.add(&total_derivative(model, &gen.xi[i], i)?);
    }
    if !div.is_zero() {
        acc = acc.add(&density.mul(&div));
    }
    Ok(acc)
}

/// Euler-Lagrange form of one component: the alternating sum of total
/// derivatives of the partials, one summand per derivative multiset present.
pub fn euler_lagrange_comp(
    model: &ModelSpec,
    density: &Expr,
    f: FieldId,
    comp: u32,
) -> Result<Expr, JetError> {
    let mut derivs: Vec<DerivIdx> = density
        .atoms_deep()
        .iter()
        .filter_map(|a| match a {
            Atom::Jet(j) if j.field == f && j.comp == comp => Some(j.derivs),
            _ => None,
        })
        .collect();
    derivs.sort();
    derivs.dedup();
    let mut acc = Expr::zero();
    for d in derivs {
        let p = density.partial(&model.jet(f, comp, d))?;
        if p.is_zero() {
            continue;
        }
        let dd = total_derivative_multi(model, &p, d)?;
        if d.order() % 2 == 1 {
            acc = acc.sub(&dd);
        } else {
            acc = acc.add(&dd);
        }
    }
    Ok(acc)
}

/// Euler-Lagrange forms of every component of a field.
pub fn euler_lagrange(
    model: &ModelSpec,
    density: &Expr,
    f: FieldId,
) -> Result<Vec<Expr>, JetError> {
    (0..model.n_components(f))
        .map(|c| euler_lagrange_comp(model, density, f, c))
        .collect()
}

/// Boundary (momentum) coefficients of a density of order at most two with
/// respect to one field: the first variation integrates by parts to
///   Q^A C_point[A][i] + (d_j Q^A) C_deriv[A][j][i]
/// under d_i, with the multiset partials weighted by the number of orderings
/// of each second-derivative pair.
pub struct BoundaryCoeffs {
    /// `[comp][i]`
    pub c_point: Vec<Vec<Expr>>,
    /// `[comp][j][i]`
    pub c_deriv: Vec<Vec<Vec<Expr>>>,
}

pub fn boundary_coefficients(
    model: &ModelSpec,
    density: &Expr,
    f: FieldId,
) -> Result<BoundaryCoeffs, JetError> {
    let n = model.dim();
    let ncomp = model.n_components(f) as usize;
    let mut c_point = vec![vec![Expr::zero(); n]; ncomp];
    let mut c_deriv = vec![vec![vec![Expr::zero(); n]; n]; ncomp];
    for comp in 0..ncomp {
        for i in 0..n {
            let mut c = density.partial(&model.jet(f, comp as u32, DerivIdx::from_indices(&[i])))?;
            for p in 0..n {
                let m2 = DerivIdx::from_indices(&[p, i]);
                let pd = density.partial(&model.jet(f, comp as u32, m2))?;
                if pd.is_zero() {
                    continue;
                }
                let mu = coeff_int(m2.orderings() as i64);
                let w = Coeff::one() / mu;
                c = c.sub(&total_derivative(model, &pd, p)?.scale(&w));
                c_deriv[comp][p][i] = pd.scale(&w);
            }
            c_point[comp][i] = c;
        }
    }
    Ok(BoundaryCoeffs { c_point, c_deriv })
}

/// The conserved-current candidate of a generator against a density of order
/// at most two:
///   J^i = -(L ξ^i + Σ_A C_point[A][i] Q^A + Σ_{A,j} C_deriv[A][j][i] d_j Q^A).
pub fn noether_current(
    model: &ModelSpec,
    density: &Expr,
    gen: &GeneratorField,
) -> Result<Vec<Expr>, JetError> {
    let r = density_order(density);
    if r > 2 {
        return Err(JetError::BoundaryOrder(r));
    }
    let n = model.dim();
    let mut w = vec![Expr::zero(); n];
    for i in 0..n {
        if !gen.xi[i].is_zero() {
            w[i] = density.mul(&gen.xi[i]);
        }
    }
    let fields: Vec<FieldId> = model
        .field_ids()
        .filter(|f| {
            density.atoms_deep().iter().any(
                |a| matches!(a, Atom::Jet(j) if j.field == *f),
            )
        })
        .collect();
    for f in fields {
        let bc = boundary_coefficients(model, density, f)?;
        for comp in 0..model.n_components(f) {
            let q = gen.characteristic(model, f, comp);
            if q.is_zero() {
                continue;
            }
            let dq: Vec<Expr> = (0..n)
                .map(|j| total_derivative(model, &q, j))
                .collect::<Result<_, _>>()?;
            for i in 0..n {
                if !bc.c_point[comp as usize][i].is_zero() {
                    w[i] = w[i].add(&bc.c_point[comp as usize][i].mul(&q));
                }
                for j in 0..n {
                    if !bc.c_deriv[comp as usize][j][i].is_zero() {
                        w[i] = w[i].add(&bc.c_deriv[comp as usize][j][i].mul(&dq[j]));
                    }
                }
            }
        }
    }
    Ok(w.into_iter().map(|e| e.neg()).collect())
}

/// The master first-variation identity, which must vanish identically for
/// every projectable generator and every density of order at most two:
///   (variation of L) - Σ Q^A E_A + d_i J^i = 0.
pub fn first_variation_residual(
    model: &ModelSpec,
    density: &Expr,
    gen: &GeneratorField,
) -> Result<Expr, JetError> {
    let mut acc = lie_derivative_lagrangian(model, density, gen)?;
    let fields: Vec<FieldId> = model
        .field_ids()
        .filter(|f| {
            density.atoms_deep().iter().any(
                |a| matches!(a, Atom::Jet(j) if j.field == *f),
            )
        })
        .collect();
    for f in fields {
        let els = euler_lagrange(model, density, f)?;
        for (comp, el) in els.iter().enumerate() {
            if el.is_zero() {
                continue;
            }
            let q = gen.characteristic(model, f, comp as u32);
            if q.is_zero() {
                continue;
            }
            acc = acc.sub(&q.mul(el));
        }
    }
    let j = noether_current(model, density, gen)?;
    for (i, ji) in j.iter().enumerate() {
        acc = acc.add(&total_derivative(model, ji, i)?);
    }
    Ok(acc)
}

/// How a bundle's fiber coordinates respond to an infinitesimal base map:
/// Ξ^A = c0[A][i] ξ^i + c1[A][j][i] ∂_j ξ^i.
pub struct LiftCoeffs {
    /// `[comp][i]`: coefficient of ξ^i.
    pub c0: Vec<Vec<Expr>>,
    /// `[comp][j][i]`: coefficient of ∂_j ξ^i.
    pub c1: Vec<Vec<Vec<Expr>>>,
}

/// Canonical lift of base vector fields to a declared bundle. Scalars do not
/// move; tensor components respond through one Jacobian factor per index;
/// the contravariant metric responds on unordered pairs; distortion fields
/// respond as (1,2)-tensors.
pub fn canonical_lift(model: &ModelSpec, f: FieldId) -> Result<LiftCoeffs, JetError> {
    let n = model.dim();
    let ncomp = model.n_components(f) as usize;
    let mut c0 = vec![vec![Expr::zero(); n]; ncomp];
    let mut c1 = vec![vec![vec![Expr::zero(); n]; n]; ncomp];
    match model.bundle(f).kind {
        BundleKind::Scalar => {}
        BundleKind::Metric => {
            for (k, l) in model.pairs() {
                let comp = model.pair_index(k, l) as usize;
                for i in 0..n {
                    for j in 0..n {
                        let mut e = Expr::zero();
                        if k == i {
                            e = e.add(&model.metric_up(j, l));
                        }
                        if l == i {
                            e = e.add(&model.metric_up(k, j));
                        }
                        c1[comp][j][i] = e;
                    }
                }
            }
        }
        BundleKind::Tensor { .. } | BundleKind::Distortion => {
            for comp in 0..ncomp {
                let (ups, downs) = model.tensor_comp_decode(f, comp as u32);
                for j in 0..n {
                    for i in 0..n {
                        let mut e = Expr::zero();
                        for (k, a) in ups.iter().enumerate() {
                            if *a == i {
                                let mut ups2 = ups.clone();
                                ups2[k] = j;
                                let c2 = model.tensor_comp(f, &ups2, &downs);
                                e = e.add(&Expr::from_atom(model.jet0(f, c2)));
                            }
                        }
                        for (l, b) in downs.iter().enumerate() {
                            if *b == j {
                                let mut downs2 = downs.clone();
                                downs2[l] = i;
                                let c2 = model.tensor_comp(f, &ups, &downs2);
                                e = e.sub(&Expr::from_atom(model.jet0(f, c2)));
                            }
                        }
                        c1[comp][j][i] = e;
                    }
                }
            }
        }
    }
    let _ = &mut c0;
    Ok(LiftCoeffs { c0, c1 })
}

/// The generator whose base components are the synthetic parameter field and
/// whose fiber components are the canonical lifts of every declared bundle.
pub fn lifted_generator(ext: &ModelSpec, param: FieldId) -> Result<GeneratorField, JetError> {
    let n = ext.dim();
    let xi: Vec<Expr> = (0..n).map(|i| Expr::from_atom(ext.jet0(param, i as u32))).collect();
    let mut fiber = HashMap::new();
    for f in ext.field_ids() {
        if ext.bundle(f).parameter {
            continue;
        }
        let lc = canonical_lift(ext, f)?;
        for comp in 0..ext.n_components(f) as usize {
            let mut e = Expr::zero();
            for i in 0..n {
                if !lc.c0[comp][i].is_zero() {
                    e = e.add(&lc.c0[comp][i].mul(&xi[i]));
                }
                for j in 0..n {
                    if lc.c1[comp][j][i].is_zero() {
                        continue;
                    }
                    let dxi = Expr::from_atom(ext.jet(
                        param,
                        i as u32,
                        DerivIdx::from_indices(&[j]),
                    ));
                    e = e.add(&lc.c1[comp][j][i].mul(&dxi));
                }
            }
            if !e.is_zero() {
                fiber.insert((f, comp as u32), e);
            }
        }
    }
    GeneratorField::new(ext, xi, fiber)
}

/// Extend prescribed values of field components (functions of the base
/// coordinates, or of anything the caller intends) to all jets up to
/// `max_order` by total differentiation, as a substitution map.
pub fn section_substitution(
    model: &ModelSpec,
    values: &HashMap<(FieldId, u32), Expr>,
    max_order: usize,
) -> Result<HashMap<Atom, Expr>, JetError> {
    let mut map = HashMap::new();
    for ((f, c), e) in values {
        for d in model.deriv_multisets(max_order) {
            let img = total_derivative_multi(model, e, d)?;
            map.insert(model.jet(*f, *c, d), img);
        }
    }
    Ok(map)
}

/// One offending coefficient of the covariance defect: the jet of the generic
/// generator it multiplies, identified by component and derivative multiset,
/// and the coefficient itself. The coefficient contains only atoms of the
/// model that was checked, never the generator's own components.
#[derive(Clone, Debug)]
pub struct CovarianceObstruction {
    /// Component index of the generic base vector field.
    pub component: u32,
    /// Derivative multiset applied to that component.
    pub derivs: DerivIdx,
    pub coefficient: Expr,
}

impl CovarianceObstruction {
    /// The generator jet this coefficient multiplies, in surface syntax:
    /// `xi^[1]`, `D[xi^[0], 0, 1]`, ...
    pub fn generator_label(&self) -> String {
        let head = format!("xi^[{}]", self.component);
        if self.derivs.order() == 0 {
            return head;
        }
        let idx: Vec<String> =
            self.derivs.indices().iter().map(|i| i.to_string()).collect();
        format!("D[{}, {}]", head, idx.join(", "))
    }
}

#[derive(Debug)]
pub struct CovarianceReport {
    pub covariant: bool,
    /// The full variation of the density along the canonically lifted
    /// generic generator; zero exactly for scalar densities.
    pub residual: Expr,
    pub obstructions: Vec<CovarianceObstruction>,
}

/// Test whether a density transforms as a scalar density under base maps:
/// lift a generic vector field canonically to every bundle, vary, and demand
/// that the result vanish identically in the generic components.
pub fn check_covariance(model: &ModelSpec, density: &Expr) -> Result<CovarianceReport, JetError> {
    let (ext, param) = model.with_parameter_field("xi#cov");
    let gen = lifted_generator(&ext, param)?;
    let residual = lie_derivative_lagrangian(&ext, density, &gen)?;
    let mut obstructions = Vec::new();
    for a in residual.atoms_deep() {
        let Atom::Jet(j) = &a else { continue };
        if j.field != param {
            continue;
        }
        let c = residual.partial(&a)?;
        if c.is_zero() {
            continue;
        }
        // The variation is linear in the generator, so the coefficient is
        // free of generator jets and lives entirely in the checked model.
        debug_assert!(c.atoms_deep().iter().all(|b| !is_parameter_jet(&ext, b)));
        obstructions.push(CovarianceObstruction {
            component: j.comp,
            derivs: j.derivs,
            coefficient: c,
        });
    }
    obstructions.sort_by_key(|o| (o.component, o.derivs));
    Ok(CovarianceReport { covariant: residual.is_zero(), residual, obstructions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BundleSpec, ManifoldSpec};
    use crate::rational::{coeff_ratio, exp_ratio};

    fn flat_scalar(dim: usize) -> (ModelSpec, FieldId) {
        let m = ModelSpec::declare(
            ManifoldSpec::euclidean(dim).unwrap(),
            vec![BundleSpec::matter("y", BundleKind::Scalar)],
            4,
        )
        .unwrap();
        let f = m.field("y").unwrap();
        (m, f)
    }

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

    #[test]
    fn total_derivative_promotes_jets_and_kills_symbols() {
        let (m, f) = flat_scalar(2);
        let y = Expr::from_atom(m.jet0(f, 0));
        let u = Expr::from_atom(Atom::sym("u"));
        let d = total_derivative(&m, &u.mul(&y), 0).unwrap();
        let expect = u.mul(&Expr::from_atom(m.jet(f, 0, DerivIdx::from_indices(&[0]))));
        assert_eq!(d, expect);
        let x0 = Expr::from_atom(m.base(0));
        assert!(total_derivative(&m, &x0, 0).unwrap().is_one());
        assert!(total_derivative(&m, &x0, 1).unwrap().is_zero());
        assert!(total_derivative(&m, &u, 1).unwrap().is_zero());
    }

    #[test]
    fn total_derivative_chain_rule_through_power_bodies() {
        let (m, f) = flat_scalar(1);
        let y = Expr::from_atom(m.jet0(f, 0));
        let body = Expr::one().add(&y.mul(&y));
        let half = body.pow(exp_ratio(1, 2)).unwrap();
        let d = total_derivative(&m, &half, 0).unwrap();
        let y0 = Expr::from_atom(m.jet(f, 0, DerivIdx::from_indices(&[0])));
        let expect = y.mul(&y0).mul(&body.pow(exp_ratio(-1, 2)).unwrap());
        assert_eq!(d, expect);
    }

    #[test]
    fn repeated_derivatives_stop_at_the_working_order_limit() {
        let (m, f) = flat_scalar(1);
        let mut e = Expr::from_atom(m.jet0(f, 0));
        let limit = m.order_limit();
        for _ in 0..limit {
            e = total_derivative(&m, &e, 0).unwrap();
        }
        let err = total_derivative(&m, &e, 0).unwrap_err();
        match err {
            JetError::OrderLimit { limit: l, .. } => assert_eq!(l, limit),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn euler_lagrange_of_the_flat_dirichlet_density() {
        let (m, f) = flat_scalar(2);
        let mut lag = Expr::zero();
        for i in 0..2 {
            let yi = Expr::from_atom(m.jet(f, 0, DerivIdx::from_indices(&[i])));
            lag = lag.add(&yi.mul(&yi));
        }
        lag = lag.scale(&coeff_ratio(1, 2));
        let el = euler_lagrange_comp(&m, &lag, f, 0).unwrap();
        let y00 = Expr::from_atom(m.jet(f, 0, DerivIdx::from_indices(&[0, 0])));
        let y11 = Expr::from_atom(m.jet(f, 0, DerivIdx::from_indices(&[1, 1])));
        assert_eq!(el, y00.add(&y11).neg());
    }

    #[test]
    fn euler_lagrange_of_a_mixed_second_derivative_density() {
        let (m, f) = flat_scalar(2);
        let y01 = Expr::from_atom(m.jet(f, 0, DerivIdx::from_indices(&[0, 1])));
        let lag = y01.mul(&y01).scale(&coeff_ratio(1, 2));
        let el = euler_lagrange_comp(&m, &lag, f, 0).unwrap();
        let y0011 = Expr::from_atom(m.jet(f, 0, DerivIdx::from_indices(&[0, 0, 1, 1])));
        assert_eq!(el, y0011);
    }

    #[test]
    fn boundary_coefficients_of_a_second_order_density() {
        let (m, f) = flat_scalar(1);
        let y00 = Expr::from_atom(m.jet(f, 0, DerivIdx::from_indices(&[0, 0])));
        let lag = y00.mul(&y00).scale(&coeff_ratio(1, 2));
        let bc = boundary_coefficients(&m, &lag, f).unwrap();
        let y000 = Expr::from_atom(m.jet(f, 0, DerivIdx::from_indices(&[0, 0, 0])));
        assert_eq!(bc.c_point[0][0], y000.neg());
        assert_eq!(bc.c_deriv[0][0][0], y00);
    }

    #[test]
    fn prolonged_components_follow_the_recursion() {
        let (m, f) = flat_scalar(1);
        let y = Expr::from_atom(m.jet0(f, 0));
        let mut fiber = HashMap::new();
        fiber.insert((f, 0u32), y.mul(&y));
        let gen =
            GeneratorField::new(&m, vec![Expr::from_atom(m.base(0))], fiber).unwrap();
        let pr = Prolongation::new(&m, &gen);
        let y0 = Expr::from_atom(m.jet(f, 0, DerivIdx::from_indices(&[0])));
        let got = pr.component(f, 0, DerivIdx::from_indices(&[0])).unwrap();
        let expect = y.mul(&y0).scale(&coeff_int(2)).sub(&y0);
        assert_eq!(got, expect);
    }

    #[test]
    fn translation_current_of_the_free_scalar_line_density() {
        let (m, f) = flat_scalar(1);
        let y0 = Expr::from_atom(m.jet(f, 0, DerivIdx::from_indices(&[0])));
        let lag = y0.mul(&y0).scale(&coeff_ratio(1, 2));
        let gen = GeneratorField::new(&m, vec![Expr::one()], HashMap::new()).unwrap();
        let j = noether_current(&m, &lag, &gen).unwrap();
        assert_eq!(j[0], lag);
        assert!(first_variation_residual(&m, &lag, &gen).unwrap().is_zero());
        // d_0 J^0 balances Q E on the nose for this generator.
        let dj = total_derivative(&m, &j[0], 0).unwrap();
        let el = euler_lagrange_comp(&m, &lag, f, 0).unwrap();
        let q = gen.characteristic(&m, f, 0);
        assert_eq!(dj, q.mul(&el));
    }

    #[test]
    fn rotation_of_two_scalars_is_a_strict_symmetry() {
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
        let mut fiber = HashMap::new();
        fiber.insert((fu, 0u32), Expr::from_atom(m.jet0(fv, 0)).neg());
        fiber.insert((fv, 0u32), Expr::from_atom(m.jet0(fu, 0)));
        let gen = GeneratorField::vertical(&m, fiber).unwrap();
        assert!(lie_derivative_lagrangian(&m, &lag, &gen).unwrap().is_zero());
        assert!(first_variation_residual(&m, &lag, &gen).unwrap().is_zero());
    }

    #[test]
    fn first_variation_vanishes_for_a_second_order_density_with_base_motion() {
        let (m, f) = flat_scalar(2);
        let y = Expr::from_atom(m.jet0(f, 0));
        let y00 = Expr::from_atom(m.jet(f, 0, DerivIdx::from_indices(&[0, 0])));
        let y01 = Expr::from_atom(m.jet(f, 0, DerivIdx::from_indices(&[0, 1])));
        let x1 = Expr::from_atom(m.base(1));
        let lag = y00.mul(&y01).add(&y.mul(&y).mul(&x1));
        let mut fiber = HashMap::new();
        fiber.insert((f, 0u32), y.mul(&y));
        let gen = GeneratorField::new(
            &m,
            vec![Expr::from_atom(m.base(1)), Expr::from_atom(m.base(0)).mul(&x1)],
            fiber,
        )
        .unwrap();
        assert!(first_variation_residual(&m, &lag, &gen).unwrap().is_zero());
    }

    #[test]
    fn metric_lift_doubles_on_the_diagonal_pair() {
        let (m, g, _) = metric_scalar(2);
        let lc = canonical_lift(&m, g).unwrap();
        let comp = m.pair_index(0, 0) as usize;
        assert_eq!(lc.c1[comp][1][0], m.metric_up(0, 1).scale(&coeff_int(2)));
        assert!(lc.c0[comp][0].is_zero());
    }

    #[test]
    fn tensor_lifts_carry_one_jacobian_factor_per_index() {
        let m = ModelSpec::declare(
            ManifoldSpec::euclidean(2).unwrap(),
            vec![
                BundleSpec::matter("v", BundleKind::Tensor { up: 1, down: 0 }),
                BundleSpec::matter("w", BundleKind::Tensor { up: 0, down: 1 }),
            ],
            2,
        )
        .unwrap();
        let (fv, fw) = (m.field("v").unwrap(), m.field("w").unwrap());
        let lv = canonical_lift(&m, fv).unwrap();
        // Ξ^a picks up v^j ∂_j ξ^a: coefficient of ∂_j ξ^i in component a
        // is δ^a_i v^j.
        assert_eq!(lv.c1[0][1][0], Expr::from_atom(m.jet0(fv, 1)));
        assert!(lv.c1[0][1][1].is_zero());
        let lw = canonical_lift(&m, fw).unwrap();
        // Ξ_a picks up -w_i ∂_a ξ^i: coefficient of ∂_j ξ^i in component a
        // is -δ^j_a w_i.
        assert_eq!(lw.c1[0][0][1], Expr::from_atom(m.jet0(fw, 1)).neg());
        assert!(lw.c1[0][1][0].is_zero());
    }

    #[test]
    fn scalar_fields_lift_trivially() {
        let (m, _, p) = metric_scalar(2);
        let lc = canonical_lift(&m, p).unwrap();
        assert!(lc.c0[0].iter().all(Expr::is_zero));
        assert!(lc.c1[0].iter().flatten().all(Expr::is_zero));
    }

    #[test]
    fn volume_density_and_kinetic_scalar_density_are_covariant() {
        let (m, _, p) = metric_scalar(2);
        let vol = m.sqrt_det();
        let rep = check_covariance(&m, &vol).unwrap();
        assert!(rep.covariant, "residual: {}", rep.residual);
        let mut kin = Expr::zero();
        for i in 0..2 {
            for j in 0..2 {
                let pi = Expr::from_atom(m.jet(p, 0, DerivIdx::from_indices(&[i])));
                let pj = Expr::from_atom(m.jet(p, 0, DerivIdx::from_indices(&[j])));
                kin = kin.add(&m.metric_up(i, j).mul(&pi).mul(&pj));
            }
        }
        kin = kin.mul(&vol).scale(&coeff_ratio(1, 2));
        let rep = check_covariance(&m, &kin).unwrap();
        assert!(rep.covariant, "residual: {}", rep.residual);
    }

    #[test]
    fn bare_derivative_densities_are_not_covariant() {
        let (m, f) = flat_scalar(2);
        let y0 = Expr::from_atom(m.jet(f, 0, DerivIdx::from_indices(&[0])));
        let rep = check_covariance(&m, &y0).unwrap();
        assert!(!rep.covariant);
        assert!(!rep.obstructions.is_empty());
    }

    #[test]
    fn generator_validation_rejects_jet_dependent_base_components() {
        let (m, f) = flat_scalar(1);
        let bad = GeneratorField::new(
            &m,
            vec![Expr::from_atom(m.jet0(f, 0))],
            HashMap::new(),
        );
        assert!(matches!(bad, Err(JetError::GeneratorDependence { .. })));
        let mut fiber = HashMap::new();
        fiber.insert((f, 0u32), Expr::from_atom(m.jet(f, 0, DerivIdx::from_indices(&[0]))));
        let bad = GeneratorField::new(&m, vec![Expr::zero()], fiber);
        assert!(matches!(bad, Err(JetError::GeneratorDependence { .. })));
    }
}
