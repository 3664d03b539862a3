//! Print/re-parse round trip: the text renderer emits the same surface
//! syntax the model language accepts, so lowering a rendered expression must
//! reproduce it exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vartool_cli::lower::lower_expr_str;
use vartool_core::atom::{Atom, DerivIdx};
use vartool_core::expr::Expr;
use vartool_core::model::{BundleKind, BundleSpec, ManifoldSpec, ModelSpec};
use vartool_core::rational::{coeff_ratio, exp_int, exp_ratio};
use vartool_core::render::Renderer;

fn model() -> ModelSpec {
    ModelSpec::declare(
        ManifoldSpec::euclidean(2).unwrap(),
        vec![
            BundleSpec::background("g", BundleKind::Metric),
            BundleSpec::matter("phi", BundleKind::Scalar),
            BundleSpec::matter("v", BundleKind::Tensor { up: 1, down: 0 }),
            BundleSpec::background("N", BundleKind::Distortion),
        ],
        2,
    )
    .unwrap()
}

fn random_derivs(rng: &mut ChaCha8Rng) -> DerivIdx {
    let order = rng.gen_range(0..=2);
    let idx: Vec<usize> = (0..order).map(|_| rng.gen_range(0..2)).collect();
    DerivIdx::from_indices(&idx)
}

fn random_atom(rng: &mut ChaCha8Rng, m: &ModelSpec) -> Atom {
    match rng.gen_range(0..5) {
        0 => Atom::Base(rng.gen_range(0..2)),
        1 => m.jet(m.field("phi").unwrap(), 0, random_derivs(rng)),
        2 => {
            let (i, j) = (rng.gen_range(0..2), rng.gen_range(0..2));
            m.jet(m.field("g").unwrap(), m.pair_index(i, j), random_derivs(rng))
        }
        3 => m.jet(m.field("v").unwrap(), rng.gen_range(0..2), random_derivs(rng)),
        _ => {
            let f = m.field("N").unwrap();
            let comp = rng.gen_range(0..m.n_components(f));
            m.jet(f, comp, random_derivs(rng))
        }
    }
}

/// A random polynomial in the model's atoms with rational coefficients and
/// small integer exponents of either sign.
fn random_poly(rng: &mut ChaCha8Rng, m: &ModelSpec) -> Expr {
    let mut acc = Expr::zero();
    for _ in 0..rng.gen_range(1..=4) {
        let mut num = 0;
        while num == 0 {
            num = rng.gen_range(-9..=9);
        }
        let mut term = Expr::from_coeff(coeff_ratio(num, rng.gen_range(1..=4)));
        for _ in 0..rng.gen_range(0..=3) {
            let e = *[-2, -1, 1, 1, 2].iter().nth(rng.gen_range(0..5)).unwrap();
            term = term.mul(&Expr::atom_pow(random_atom(rng, m), exp_int(e)));
        }
        acc = acc.add(&term);
    }
    acc
}

/// Layer power bodies and products on top of random polynomials.
fn random_expr(rng: &mut ChaCha8Rng, m: &ModelSpec) -> Expr {
    let mut e = random_poly(rng, m);
    if e.nterms() >= 2 && rng.gen_bool(0.4) {
        let exps = [exp_int(-1), exp_ratio(1, 2), exp_ratio(-1, 2), exp_ratio(3, 2)];
        let q = exps[rng.gen_range(0..exps.len())];
        e = e.pow(q).expect("multi-term power");
        if rng.gen_bool(0.5) {
            e = e.mul(&random_poly(rng, m));
        }
    }
    if rng.gen_bool(0.2) {
        e = e.mul(&m.sqrt_det());
    }
    e
}

#[test]
fn randomized_expressions_survive_print_and_reparse() {
    let m = model();
    let r = Renderer::new(&m);
    let mut rng = ChaCha8Rng::seed_from_u64(20260822);
    for case in 0..160 {
        let e = random_expr(&mut rng, &m);
        let s = r.text(&e);
        let back = lower_expr_str(&m, &s)
            .unwrap_or_else(|d| panic!("case {case}: re-parse failed on `{s}`: {d}"));
        assert!(
            back.sub(&e).is_zero(),
            "case {case}: `{s}` re-lowered to `{}`",
            r.text(&back)
        );
    }
}

#[test]
fn constants_and_signs_round_trip() {
    let m = model();
    let r = Renderer::new(&m);
    for e in [
        Expr::zero(),
        Expr::from_int(7),
        Expr::from_int(-7),
        Expr::from_coeff(coeff_ratio(-3, 4)),
    ] {
        let back = lower_expr_str(&m, &r.text(&e)).unwrap();
        assert!(back.sub(&e).is_zero());
    }
}

#[test]
fn volume_factor_and_lowered_metric_round_trip() {
    let m = model();
    let r = Renderer::new(&m);
    for e in [m.sqrt_det(), m.metric_lowered(0, 1), m.sqrt_det().mul(&m.metric_lowered(1, 1))] {
        let s = r.text(&e);
        let back = lower_expr_str(&m, &s).unwrap_or_else(|d| panic!("`{s}`: {d}"));
        assert!(back.sub(&e).is_zero(), "`{s}` re-lowered to `{}`", r.text(&back));
    }
}
