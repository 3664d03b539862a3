//! Model-aware rendering of canonical expressions.
//!
//! The text form is the parseable surface syntax: base coordinates print as
//! `x[i]`, field components by their declared names with `^[..]`/`_[..]`
//! index blocks, jets as `D[comp, i, j, ...]`, and normalized power bodies
//! as parenthesized sums with rational exponents. Parsing the printed text
//! and normalizing reproduces the expression. The LaTeX form maps the same
//! structure to subscripted symbols and is not meant to be re-read.

use crate::atom::{Atom, FieldId};
use crate::expr::{Expr, Term};
use crate::model::{BundleKind, ModelSpec};
use crate::rational::{Coeff, Exp};
use num_traits::{One, Signed};

/// Pretty-printer bound to a model's field declarations.
pub struct Renderer<'m> {
    model: &'m ModelSpec,
}

const GREEK: &[&str] = &[
    "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta", "iota", "kappa",
    "lambda", "mu", "nu", "xi", "pi", "rho", "sigma", "tau", "upsilon", "phi", "chi", "psi",
    "omega",
];

impl<'m> Renderer<'m> {
    pub fn new(model: &'m ModelSpec) -> Self {
        Renderer { model }
    }

    /// Parseable text form of the component symbol of field `f`.
    pub fn component_label(&self, f: FieldId, comp: u32) -> String {
        let b = self.model.bundle(f);
        match b.kind {
            BundleKind::Scalar => b.name.clone(),
            BundleKind::Metric => {
                let (i, j) = self.model.pair_of_index(comp);
                format!("{}^[{i} {j}]", b.name)
            }
            BundleKind::Tensor { .. } | BundleKind::Distortion => {
                let (ups, downs) = self.model.tensor_comp_decode(f, comp);
                let mut s = b.name.clone();
                if !ups.is_empty() {
                    s.push_str("^[");
                    s.push_str(&join_indices(&ups));
                    s.push(']');
                }
                if !downs.is_empty() {
                    s.push_str("_[");
                    s.push_str(&join_indices(&downs));
                    s.push(']');
                }
                s
            }
        }
    }

    fn text_atom(&self, a: &Atom, out: &mut String) {
        match a {
            Atom::Base(i) => out.push_str(&format!("x[{i}]")),
            Atom::Sym(s) => out.push_str(s.as_str()),
            Atom::Jet(j) => {
                let comp = self.component_label(j.field, j.comp);
                if j.derivs.order() == 0 {
                    out.push_str(&comp);
                } else {
                    out.push_str("D[");
                    out.push_str(&comp);
                    for ix in j.derivs.indices() {
                        out.push_str(&format!(", {ix}"));
                    }
                    out.push(']');
                }
            }
            Atom::SumPow(b) => {
                out.push('(');
                out.push_str(&self.text(b.expr()));
                out.push(')');
            }
        }
    }

    fn text_term(&self, t: &Term, out: &mut String) {
        let coeff = t.coeff.abs();
        let mut lead = true;
        if !coeff.is_one() || t.mono.pairs().is_empty() {
            out.push_str(&coeff_text(&coeff));
            lead = false;
        }
        for (a, e) in t.mono.pairs() {
            if !lead {
                out.push('*');
            }
            lead = false;
            self.text_atom(a, out);
            if !e.is_one() {
                out.push_str(&exp_text(*e));
            }
        }
    }

    /// Canonical parseable text.
    pub fn text(&self, e: &Expr) -> String {
        if e.is_zero() {
            return "0".to_string();
        }
        let mut out = String::new();
        for (k, t) in e.terms().iter().enumerate() {
            if k == 0 {
                if t.coeff.is_negative() {
                    out.push('-');
                }
            } else if t.coeff.is_negative() {
                out.push_str(" - ");
            } else {
                out.push_str(" + ");
            }
            self.text_term(t, &mut out);
        }
        out
    }

    fn latex_name(name: &str) -> String {
        if GREEK.contains(&name) {
            format!("\\{name}")
        } else {
            name.to_string()
        }
    }

    /// LaTeX form of the component symbol with jet indices appended as a
    /// comma-led subscript block.
    fn latex_jet(&self, f: FieldId, comp: u32, derivs: &[usize]) -> String {
        let b = self.model.bundle(f);
        let name = Self::latex_name(&b.name);
        let (ups, downs) = match b.kind {
            BundleKind::Scalar => (Vec::new(), Vec::new()),
            BundleKind::Metric => {
                let (i, j) = self.model.pair_of_index(comp);
                (vec![i, j], Vec::new())
            }
            BundleKind::Tensor { .. } | BundleKind::Distortion => {
                self.model.tensor_comp_decode(f, comp)
            }
        };
        let mut s = name;
        if !ups.is_empty() {
            s.push_str(&format!("^{{{}}}", concat_indices(&ups)));
        }
        let mut sub = concat_indices(&downs);
        if !derivs.is_empty() {
            sub.push(',');
            sub.push_str(&concat_indices(derivs));
        }
        if !sub.is_empty() {
            s.push_str(&format!("_{{{sub}}}"));
        }
        s
    }

    fn latex_atom(&self, a: &Atom, out: &mut String) {
        match a {
            Atom::Base(i) => out.push_str(&format!("x^{{{i}}}")),
            Atom::Sym(s) => out.push_str(&Self::latex_name(s.as_str())),
            Atom::Jet(j) => {
                out.push_str(&self.latex_jet(j.field, j.comp, &j.derivs.indices()));
            }
            Atom::SumPow(b) => {
                out.push_str("\\left(");
                out.push_str(&self.latex(b.expr()));
                out.push_str("\\right)");
            }
        }
    }

    /// LaTeX rendering.
    pub fn latex(&self, e: &Expr) -> String {
        if e.is_zero() {
            return "0".to_string();
        }
        let mut out = String::new();
        for (k, t) in e.terms().iter().enumerate() {
            if k == 0 {
                if t.coeff.is_negative() {
                    out.push('-');
                }
            } else if t.coeff.is_negative() {
                out.push_str(" - ");
            } else {
                out.push_str(" + ");
            }
            let coeff = t.coeff.abs();
            let mut lead = true;
            if !coeff.is_one() || t.mono.pairs().is_empty() {
                out.push_str(&coeff_latex(&coeff));
                lead = false;
            }
            for (a, ex) in t.mono.pairs() {
                if !lead {
                    out.push_str(" \\, ");
                }
                lead = false;
                self.latex_atom(a, &mut out);
                if !ex.is_one() {
                    out.push_str(&format!("^{{{}}}", exp_plain(*ex)));
                }
            }
        }
        out
    }
}

fn join_indices(idx: &[usize]) -> String {
    idx.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ")
}

fn concat_indices(idx: &[usize]) -> String {
    idx.iter().map(|i| i.to_string()).collect::<String>()
}

fn coeff_text(c: &Coeff) -> String {
    if c.denom().is_one() {
        format!("{}", c.numer())
    } else {
        format!("{}/{}", c.numer(), c.denom())
    }
}

fn coeff_latex(c: &Coeff) -> String {
    if c.denom().is_one() {
        format!("{}", c.numer())
    } else {
        format!("\\frac{{{}}}{{{}}}", c.numer(), c.denom())
    }
}

fn exp_plain(e: Exp) -> String {
    if e.denom() == &1 {
        format!("{}", e.numer())
    } else {
        format!("{}/{}", e.numer(), e.denom())
    }
}

fn exp_text(e: Exp) -> String {
    if e.denom() == &1 && *e.numer() >= 0 {
        format!("^{}", e.numer())
    } else {
        format!("^({})", exp_plain(e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atom::DerivIdx;
    use crate::model::{BundleSpec, ManifoldSpec};
    use crate::rational::{coeff_ratio, exp_int};

    fn model() -> ModelSpec {
        ModelSpec::declare(
            ManifoldSpec::euclidean(2).unwrap(),
            vec![
                BundleSpec::background("g", BundleKind::Metric),
                BundleSpec::matter("phi", BundleKind::Scalar),
                BundleSpec::background("N", BundleKind::Distortion),
            ],
            2,
        )
        .unwrap()
    }

    #[test]
    fn component_labels_carry_index_blocks() {
        let m = model();
        let g = m.field("g").unwrap();
        let nf = m.field("N").unwrap();
        let r = Renderer::new(&m);
        assert_eq!(r.component_label(g, m.pair_index(0, 1)), "g^[0 1]");
        assert_eq!(r.component_label(nf, m.tensor_comp(nf, &[1], &[0, 1])), "N^[1]_[0 1]");
    }

    #[test]
    fn text_prints_jets_coefficients_and_signs() {
        let m = model();
        let phi = m.field("phi").unwrap();
        let r = Renderer::new(&m);
        let p0 = Expr::from_atom(m.jet(phi, 0, DerivIdx::from_indices(&[0])));
        let p01 = Expr::from_atom(m.jet(phi, 0, DerivIdx::from_indices(&[0, 1])));
        let e = p0.pow(exp_int(2)).unwrap().scale(&coeff_ratio(1, 2)).sub(&p01);
        let printed = r.text(&e);
        assert!(printed.contains("1/2*D[phi, 0]^2"), "got: {printed}");
        assert!(printed.contains("- D[phi, 0, 1]"), "got: {printed}");
    }

    #[test]
    fn text_prints_power_bodies_with_rational_exponents() {
        let m = model();
        let r = Renderer::new(&m);
        let printed = r.text(&m.sqrt_det());
        assert_eq!(printed, "(g^[0 0]*g^[1 1] - g^[0 1]^2)^(-1/2)");
    }

    #[test]
    fn latex_spells_a_derived_metric_component_one_way() {
        let m = model();
        let g = m.field("g").unwrap();
        let r = Renderer::new(&m);
        let a = m.jet(g, m.pair_index(0, 1), DerivIdx::from_indices(&[1]));
        assert_eq!(r.latex(&Expr::from_atom(a)), "g^{01}_{,1}");
        let phi = m.field("phi").unwrap();
        let p = m.jet(phi, 0, DerivIdx::from_indices(&[0, 1]));
        assert_eq!(r.latex(&Expr::from_atom(p)), "\\phi_{,01}");
    }

    #[test]
    fn latex_uses_fraction_coefficients() {
        let m = model();
        let r = Renderer::new(&m);
        let e = Expr::from_atom(Atom::Base(0)).scale(&coeff_ratio(-3, 4));
        assert_eq!(r.latex(&e), "-\\frac{3}{4} \\, x^{0}");
        assert_eq!(r.text(&e), "-3/4*x[0]");
    }

    #[test]
    fn zero_and_constants_print_plainly() {
        let m = model();
        let r = Renderer::new(&m);
        assert_eq!(r.text(&Expr::zero()), "0");
        assert_eq!(r.text(&Expr::from_int(7)), "7");
        assert_eq!(r.text(&Expr::from_int(-7)), "-7");
        assert_eq!(r.latex(&Expr::from_coeff(coeff_ratio(1, 2))), "\\frac{1}{2}");
    }
}
