//! Randomized numeric verification: consistent sampling of jet coordinates
//! and probabilistic zero-testing of symbolic claims.
//!
//! Sampling keeps exact rationals end to end; evaluation stays rational until
//! a fractional power forces a float. Metric samples are symmetric offsets of
//! the canonical signature matrix with the determinant bounded away from
//! zero. All identities under test are formal identities on jet space, so
//! jets are sampled freely with no integrability constraints.

use crate::atom::{Atom, SymName};
use crate::expr::Expr;
use crate::model::{BundleKind, ModelSpec};
use crate::rational::{coeff_to_f64, rational_pow, Coeff, Exp};
use num_traits::{Signed, Zero};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum NumError {
    #[error("negative base under a fractional power at `{0}`")]
    Domain(String),
    #[error("no sampled value for atom `{0}`")]
    Unassigned(String),
    #[error("metric resample limit (100) exceeded while enforcing invertibility")]
    MetricResampleLimit,
}

/// One consistent numeric instantiation of every sampled atom.
#[derive(Clone, Debug)]
pub struct PointAssignment {
    pub seed: u64,
    values: HashMap<Atom, Coeff>,
}

impl PointAssignment {
    pub fn value(&self, a: &Atom) -> Option<&Coeff> {
        self.values.get(a)
    }

    pub fn set(&mut self, a: Atom, v: Coeff) {
        self.values.insert(a, v);
    }

    pub fn values(&self) -> &HashMap<Atom, Coeff> {
        &self.values
    }
}

fn frac(num: i64, den: i64) -> Coeff {
    Coeff::new(num.into(), den.into())
}

/// Deterministic sub-seed for trial `k` of a run seeded with `seed`.
pub fn sub_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed.wrapping_add((k + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Exact rational determinant by Laplace expansion.
fn det_rational(m: &[Vec<Coeff>]) -> Coeff {
    let n = m.len();
    if n == 1 {
        return m[0][0].clone();
    }
    let mut acc = Coeff::zero();
    for c in 0..n {
        if m[0][c].is_zero() {
            continue;
        }
        let sub: Vec<Vec<Coeff>> = (1..n)
            .map(|r| (0..n).filter(|cc| *cc != c).map(|cc| m[r][cc].clone()).collect())
            .collect();
        let piece = &m[0][c] * det_rational(&sub);
        if c % 2 == 1 {
            acc -= piece;
        } else {
            acc += piece;
        }
    }
    acc
}

/// Sample every model atom up to derivative order `max_jet_order`, plus the
/// base coordinates and any extra free symbols. Deterministic for a fixed
/// seed.
pub fn random_point_with_syms(
    model: &ModelSpec,
    max_jet_order: usize,
    extra_syms: &[SymName],
    seed: u64,
) -> Result<PointAssignment, NumError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.dim();
    let mut values: HashMap<Atom, Coeff> = HashMap::new();
    // Base coordinates: uniform in [-1, 1].
    for i in 0..n {
        let k: i64 = rng.gen_range(-64..=64);
        values.insert(model.base(i), frac(k, 64));
    }
    for f in model.field_ids() {
        let b = model.bundle(f);
        if matches!(b.kind, BundleKind::Metric) {
            // Symmetric offsets of the signature matrix; resample until the
            // determinant is bounded away from zero and keeps the sign the
            // signature dictates, so volume factors stay real.
            let want_sign = model.manifold.det_sign();
            let mut accepted = None;
            for _ in 0..100 {
                let mut mat = vec![vec![Coeff::zero(); n]; n];
                for i in 0..n {
                    for j in i..n {
                        let k: i64 = rng.gen_range(-64..=64);
                        let base = if i == j {
                            Coeff::from_integer((model.manifold.signature[i] as i64).into())
                        } else {
                            Coeff::zero()
                        };
                        let v = base + frac(k, 64);
                        mat[i][j] = v.clone();
                        mat[j][i] = v;
                    }
                }
                let det = det_rational(&mat);
                let sign_ok = if want_sign > 0 { det.is_positive() } else { det.is_negative() };
                if sign_ok && det.abs() >= frac(1, 10) {
                    accepted = Some(mat);
                    break;
                }
            }
            let mat = accepted.ok_or(NumError::MetricResampleLimit)?;
            for i in 0..n {
                for j in i..n {
                    values.insert(model.jet0(f, model.pair_index(i, j)), mat[i][j].clone());
                }
            }
            // Metric jets of order ≥ 1: uniform in [-1/2, 1/2].
            for comp in 0..model.n_components(f) {
                for d in model.deriv_multisets(max_jet_order) {
                    if d.order() == 0 {
                        continue;
                    }
                    let k: i64 = rng.gen_range(-64..=64);
                    values.insert(model.jet(f, comp, d), frac(k, 128));
                }
            }
            continue;
        }
        let positive = b.positive;
        for comp in 0..model.n_components(f) {
            for d in model.deriv_multisets(max_jet_order) {
                let v = if d.order() == 0 {
                    if positive {
                        // Positive externals live in [1/4, 5/4].
                        let k: i64 = rng.gen_range(0..=64);
                        frac(1, 4) + frac(k, 64)
                    } else {
                        let k: i64 = rng.gen_range(-64..=64);
                        frac(k, 64)
                    }
                } else {
                    let k: i64 = rng.gen_range(-64..=64);
                    frac(k, 128)
                };
                values.insert(model.jet(f, comp, d), v);
            }
        }
    }
    // Free symbols, in the caller's order.
    for s in extra_syms {
        let k: i64 = rng.gen_range(-64..=64);
        values.insert(Atom::Sym(s.clone()), frac(k, 64));
    }
    Ok(PointAssignment { seed, values })
}

pub fn random_point(
    model: &ModelSpec,
    max_jet_order: usize,
    seed: u64,
) -> Result<PointAssignment, NumError> {
    random_point_with_syms(model, max_jet_order, &[], seed)
}

/// Exact-until-forced evaluation value.
#[derive(Clone, Debug)]
enum Val {
    Exact(Coeff),
    Approx(f64),
}

impl Val {
    fn to_f64(&self) -> f64 {
        match self {
            Val::Exact(c) => coeff_to_f64(c),
            Val::Approx(x) => *x,
        }
    }

    fn mul(self, o: Val) -> Val {
        match (self, o) {
            (Val::Exact(a), Val::Exact(b)) => Val::Exact(a * b),
            (a, b) => Val::Approx(a.to_f64() * b.to_f64()),
        }
    }

    fn add(self, o: Val) -> Val {
        match (self, o) {
            (Val::Exact(a), Val::Exact(b)) => Val::Exact(a + b),
            (a, b) => Val::Approx(a.to_f64() + b.to_f64()),
        }
    }

    fn pow(self, e: Exp, what: &dyn std::fmt::Display) -> Result<Val, NumError> {
        match self {
            Val::Exact(c) => {
                if c.is_zero() {
                    return if e > Exp::zero() {
                        Ok(Val::Exact(Coeff::zero()))
                    } else {
                        Err(NumError::Domain(what.to_string()))
                    };
                }
                if let Some(r) = rational_pow(&c, e) {
                    return Ok(Val::Exact(r));
                }
                if c.is_negative() {
                    return Err(NumError::Domain(what.to_string()));
                }
                Ok(Val::Approx(coeff_to_f64(&c).powf(exp_f64(e))))
            }
            Val::Approx(x) => {
                if e.is_integer() {
                    if x == 0.0 && e < Exp::zero() {
                        return Err(NumError::Domain(what.to_string()));
                    }
                    return Ok(Val::Approx(x.powi(*e.numer() as i32)));
                }
                if x < 0.0 {
                    return Err(NumError::Domain(what.to_string()));
                }
                if x == 0.0 && e < Exp::zero() {
                    return Err(NumError::Domain(what.to_string()));
                }
                Ok(Val::Approx(x.powf(exp_f64(e))))
            }
        }
    }
}

fn exp_f64(e: Exp) -> f64 {
    *e.numer() as f64 / *e.denom() as f64
}

fn eval_val(e: &Expr, p: &PointAssignment) -> Result<Val, NumError> {
    let mut acc = Val::Exact(Coeff::zero());
    for t in e.terms() {
        acc = acc.add(eval_term(t, p)?);
    }
    Ok(acc)
}

fn eval_term(t: &crate::expr::Term, p: &PointAssignment) -> Result<Val, NumError> {
    let mut v = Val::Exact(t.coeff.clone());
    for (atom, exp) in t.mono.pairs() {
        let base = match atom {
            Atom::SumPow(b) => eval_val(b.expr(), p)?,
            other => Val::Exact(
                p.value(other)
                    .ok_or_else(|| NumError::Unassigned(other.to_string()))?
                    .clone(),
            ),
        };
        v = v.mul(base.pow(*exp, atom)?);
    }
    Ok(v)
}

/// Evaluate to a float, exact rational arithmetic until fractional powers
/// force the transition.
pub fn eval(e: &Expr, p: &PointAssignment) -> Result<f64, NumError> {
    Ok(eval_val(e, p)?.to_f64())
}

/// Evaluate, also reporting the largest term magnitude (for the
/// relative-tolerance scheme).
pub fn eval_with_scale(e: &Expr, p: &PointAssignment) -> Result<(f64, f64), NumError> {
    let mut total = Val::Exact(Coeff::zero());
    let mut max_term = 0.0f64;
    for t in e.terms() {
        let v = eval_term(t, p)?;
        max_term = max_term.max(v.to_f64().abs());
        total = total.add(v);
    }
    Ok((total.to_f64(), max_term))
}

/// Largest derivative order of any jet atom in `e` (descending into power
/// bodies), and the free symbols present.
pub fn jet_order_and_syms(e: &Expr) -> (usize, Vec<SymName>) {
    let mut order = 0usize;
    let mut syms = Vec::new();
    for a in e.atoms_deep() {
        match a {
            Atom::Jet(j) => order = order.max(j.order()),
            Atom::Sym(s) => {
                if !syms.contains(&s) {
                    syms.push(s);
                }
            }
            _ => {}
        }
    }
    syms.sort_by(|a, b| a.as_str().cmp(b.as_str()));
    (order, syms)
}

/// Worst failing point of a zero test.
#[derive(Clone, Debug)]
pub struct Witness {
    pub trial: usize,
    pub trial_seed: u64,
    pub value: f64,
}

/// Outcome of randomized zero-testing.
#[derive(Clone, Debug)]
pub struct ZeroReport {
    pub zero: bool,
    /// More than half the points hit domain errors; verdict withheld.
    pub inconclusive: bool,
    pub max_abs: f64,
    pub trials: usize,
    pub skipped: usize,
    pub witness: Option<Witness>,
}

/// Evaluate `e` at `trials` independently seeded points; the claim is zero
/// when every evaluated point is below `tol` relative to the largest term
/// magnitude. Trials run concurrently; sub-seeds make the result independent
/// of scheduling.
pub fn is_zero_numeric(
    e: &Expr,
    model: &ModelSpec,
    trials: usize,
    tol: f64,
    seed: u64,
) -> Result<ZeroReport, NumError> {
    let (order, syms) = jet_order_and_syms(e);
    enum Outcome {
        Skipped,
        Value { total: f64, pass: bool },
    }
    let outcomes: Result<Vec<(u64, Outcome)>, NumError> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let s = sub_seed(seed, k as u64);
            let p = random_point_with_syms(model, order, &syms, s)?;
            match eval_with_scale(e, &p) {
                Ok((total, max_term)) => {
                    let pass = total.abs() < tol * (1.0 + max_term);
                    Ok((s, Outcome::Value { total, pass }))
                }
                Err(NumError::Domain(_)) => Ok((s, Outcome::Skipped)),
                Err(other) => Err(other),
            }
        })
        .collect();
    let outcomes = outcomes?;
    let mut skipped = 0usize;
    let mut max_abs = 0.0f64;
    let mut witness: Option<Witness> = None;
    let mut all_pass = true;
    for (k, (s, o)) in outcomes.into_iter().enumerate() {
        match o {
            Outcome::Skipped => skipped += 1,
            Outcome::Value { total, pass } => {
                max_abs = max_abs.max(total.abs());
                if !pass {
                    all_pass = false;
                    if witness.is_none() {
                        witness = Some(Witness { trial: k, trial_seed: s, value: total });
                    }
                }
            }
        }
    }
    let inconclusive = skipped * 2 > trials;
    Ok(ZeroReport {
        zero: all_pass && !inconclusive,
        inconclusive,
        max_abs,
        trials,
        skipped,
        witness,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BundleSpec, ManifoldSpec, ModelSpec};
    use crate::rational::{coeff_int, exp_ratio};

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
    fn same_seed_reproduces_the_assignment_and_nearby_seeds_differ() {
        let m = metric_model(2);
        let a = random_point(&m, 2, 7).unwrap();
        let b = random_point(&m, 2, 7).unwrap();
        assert_eq!(a.values(), b.values());
        let c = random_point(&m, 2, 8).unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn sampled_metric_determinant_is_bounded_away_from_zero() {
        let m = metric_model(2);
        for seed in 0..20u64 {
            let p = random_point(&m, 0, seed).unwrap();
            let g = m.metric_field().unwrap();
            let det = {
                let g00 = p.value(&m.jet0(g, m.pair_index(0, 0))).unwrap();
                let g01 = p.value(&m.jet0(g, m.pair_index(0, 1))).unwrap();
                let g11 = p.value(&m.jet0(g, m.pair_index(1, 1))).unwrap();
                g00 * g11 - g01 * g01
            };
            assert!(det.abs() >= Coeff::new(1.into(), 10.into()), "seed {seed}");
        }
    }

    #[test]
    fn eval_is_exact_on_rational_data() {
        let m = metric_model(2);
        let u = Atom::sym("u");
        let mut p = random_point(&m, 0, 1).unwrap();
        p.set(u.clone(), Coeff::new(1.into(), 2.into()));
        let e = Expr::from_atom(u).scale(&coeff_int(2)).add(&Expr::from_int(3));
        assert_eq!(eval(&e, &p).unwrap(), 4.0);
    }

    #[test]
    fn power_body_evaluates_through_exact_roots() {
        let m = metric_model(2);
        let (u, v) = (Atom::sym("u"), Atom::sym("v"));
        let body = Expr::from_atom(u.clone()).add(&Expr::from_atom(v.clone()));
        let e = body.pow(exp_ratio(-1, 2)).unwrap();
        let mut p = random_point(&m, 0, 1).unwrap();
        p.set(u, coeff_int(2));
        p.set(v, coeff_int(2));
        assert_eq!(eval(&e, &p).unwrap(), 0.5);
    }

    #[test]
    fn lowered_metric_matches_the_float_matrix_inverse() {
        for dim in [2usize, 3] {
            let m = metric_model(dim);
            let g = m.metric_field().unwrap();
            for seed in [3u64, 11, 42] {
                let p = random_point(&m, 0, seed).unwrap();
                // Float inverse by Gauss-Jordan.
                let n = dim;
                let mut a = vec![vec![0.0f64; 2 * n]; n];
                for i in 0..n {
                    for j in 0..n {
                        a[i][j] =
                            coeff_to_f64(p.value(&m.jet0(g, m.pair_index(i, j))).unwrap());
                    }
                    a[i][n + i] = 1.0;
                }
                for col in 0..n {
                    let piv = (col..n).max_by(|x, y| {
                        a[*x][col].abs().partial_cmp(&a[*y][col].abs()).unwrap()
                    });
                    let piv = piv.unwrap();
                    a.swap(col, piv);
                    let d = a[col][col];
                    for k in 0..2 * n {
                        a[col][k] /= d;
                    }
                    for r in 0..n {
                        if r != col {
                            let f = a[r][col];
                            for k in 0..2 * n {
                                a[r][k] -= f * a[col][k];
                            }
                        }
                    }
                }
                for i in 0..n {
                    for j in 0..n {
                        let sym = eval(&m.metric_lowered(i, j), &p).unwrap();
                        let num = a[i][n + j];
                        assert!(
                            (sym - num).abs() <= 1e-12 * (1.0 + num.abs()),
                            "dim {dim} seed {seed} ({i},{j}): {sym} vs {num}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn volume_factor_squares_against_the_sampled_determinant() {
        let m = ModelSpec::declare(
            ManifoldSpec::lorentzian(2).unwrap(),
            vec![BundleSpec::background("g", BundleKind::Metric)],
            2,
        )
        .unwrap();
        for seed in [5u64, 9] {
            let p = random_point(&m, 0, seed).unwrap();
            let s = eval(&m.sqrt_det(), &p).unwrap();
            let d = eval(&m.det_up(), &p).unwrap();
            assert!((s * s * d.abs() - 1.0).abs() < 1e-12, "seed {seed}");
        }
    }

    #[test]
    fn zero_test_accepts_zero_and_reports_witnesses() {
        let m = metric_model(2);
        let zero = Expr::from_atom(Atom::sym("u"))
            .mul(&Expr::from_atom(Atom::sym("v")))
            .sub(&Expr::from_atom(Atom::sym("v")).mul(&Expr::from_atom(Atom::sym("u"))));
        let r = is_zero_numeric(&zero, &m, 16, 1e-9, 0).unwrap();
        assert!(r.zero && r.witness.is_none());
        let u = Expr::from_atom(Atom::sym("u"));
        let r = is_zero_numeric(&u, &m, 16, 1e-9, 0).unwrap();
        assert!(!r.zero);
        let w = r.witness.expect("witness for a nonzero claim");
        assert!(w.value.abs() > 0.0);
    }

    #[test]
    fn planted_perturbation_flips_the_verdict() {
        let m = metric_model(2);
        let planted = Expr::from_atom(Atom::sym("u"))
            .mul(&Expr::from_atom(Atom::sym("v")))
            .scale(&Coeff::new(1.into(), 100_000.into()));
        let r = is_zero_numeric(&planted, &m, 32, 1e-7, 0).unwrap();
        assert!(!r.zero, "1e-5-sized residual must not pass at tol 1e-7");
    }

    #[test]
    fn domain_errors_skip_points_rather_than_failing() {
        let m = metric_model(2);
        let root = Expr::from_atom(Atom::sym("u")).pow(exp_ratio(1, 2)).unwrap();
        let r = is_zero_numeric(&root, &m, 64, 1e-9, 123).unwrap();
        assert!(r.skipped > 0, "negative samples must be skipped");
    }

    #[test]
    fn partial_derivative_matches_finite_differences() {
        let m = metric_model(2);
        let g = m.metric_field().unwrap();
        let a = m.jet0(g, m.pair_index(0, 1));
        // A nontrivial function of the metric: √|det g| · g_{00}.
        let e = m.sqrt_det().mul(&m.metric_lowered(0, 0));
        let de = e.partial(&a).unwrap();
        for seed in [2u64, 6, 19] {
            let p = random_point(&m, 0, seed).unwrap();
            let h = Coeff::new(1.into(), 10_000.into());
            let mut pp = p.clone();
            pp.set(a.clone(), p.value(&a).unwrap() + &h);
            let mut pm = p.clone();
            pm.set(a.clone(), p.value(&a).unwrap() - &h);
            let fd = (eval(&e, &pp).unwrap() - eval(&e, &pm).unwrap())
                / (2.0 * coeff_to_f64(&h));
            let sym = eval(&de, &p).unwrap();
            assert!(
                (sym - fd).abs() <= 1e-6 * (1.0 + sym.abs()),
                "seed {seed}: {sym} vs {fd}"
            );
        }
    }
}
