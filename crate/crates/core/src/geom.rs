//! Formal Riemannian geometry in metric jets: Christoffel symbols,
//! covariant derivatives, curvature, the Einstein-tensor cross-check of the
//! variational pipeline, and manifestly covariant balance laws.
//!
//! Everything is expressed through the contravariant metric fundamentals;
//! the lowered metric enters as an exact rational expression in them.
//! Dimension two is handled fully symbolically; higher dimensions use the
//! shared numeric graph with randomized sampling.

use crate::atom::Atom;
use crate::emt::{balance_unchecked, em_tensor, em_tensor_from_sources, EmtError, VaryTable};
use crate::expr::{Expr, NormError};
use crate::graph::{Evaluation, Graph, GraphError, Node};
use crate::jet::{check_covariance, euler_lagrange, total_derivative, JetError};
use crate::model::{BundleKind, ModelError, ModelSpec};
use crate::numcheck::{random_point, sub_seed, NumError};
use crate::rational::{coeff_int, coeff_ratio, coeff_to_f64, exp_ratio};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum GeomError {
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error(transparent)]
    Emt(#[from] EmtError),
    #[error(transparent)]
    Norm(#[from] NormError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("model declares no metric")]
    NoMetric,
    #[error("operation needs a distortion background")]
    NoDistortion,
    #[error("component table has {found} entries, expected {expected}")]
    TableShape { found: usize, expected: usize },
    #[error("covariant balance disagrees with the divergence identity at index {0}")]
    CovariantMismatch(usize),
    #[error("too few usable sample points ({got} of {want})")]
    NotEnoughPoints { got: usize, want: usize },
}

/// Γ^i_{jk} of the formal Levi-Civita connection, symmetric in (j, k).
pub struct ChristoffelTable {
    n: usize,
    gamma: Vec<Expr>,
}

impl ChristoffelTable {
    pub fn get(&self, i: usize, j: usize, k: usize) -> &Expr {
        &self.gamma[(i * self.n + j) * self.n + k]
    }
}

pub fn christoffel(model: &ModelSpec) -> Result<ChristoffelTable, GeomError> {
    model.metric_field().ok_or(GeomError::NoMetric)?;
    let n = model.dim();
    let glow: Vec<Vec<Expr>> =
        (0..n).map(|i| (0..n).map(|j| model.metric_lowered(i, j)).collect()).collect();
    // d_k g_{ij}, cached.
    let mut dglow = vec![vec![vec![Expr::zero(); n]; n]; n];
    for k in 0..n {
        for i in 0..n {
            for j in i..n {
                let d = total_derivative(model, &glow[i][j], k)?;
                dglow[k][i][j] = d.clone();
                dglow[k][j][i] = d;
            }
        }
    }
    let half = coeff_ratio(1, 2);
    let mut gamma = vec![Expr::zero(); n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in j..n {
                let mut acc = Expr::zero();
                for l in 0..n {
                    let br = dglow[k][l][j].add(&dglow[j][l][k]).sub(&dglow[l][j][k]);
                    acc = acc.add(&model.metric_up(i, l).mul(&br));
                }
                let g = acc.scale(&half);
                gamma[(i * n + j) * n + k] = g.clone();
                gamma[(i * n + k) * n + j] = g;
            }
        }
    }
    Ok(ChristoffelTable { n, gamma })
}

/// A table of components with declared index structure: `ups` contravariant
/// then `downs` covariant indices, radix-n with the contravariant block
/// leading.
#[derive(Clone, Debug)]
pub struct TensorTable {
    pub n: usize,
    pub ups: usize,
    pub downs: usize,
    comps: Vec<Expr>,
}

impl TensorTable {
    pub fn new(n: usize, ups: usize, downs: usize, comps: Vec<Expr>) -> Result<Self, GeomError> {
        let expected = n.pow((ups + downs) as u32);
        if comps.len() != expected {
            return Err(GeomError::TableShape { found: comps.len(), expected });
        }
        Ok(TensorTable { n, ups, downs, comps })
    }

    pub fn scalar(n: usize, e: Expr) -> Self {
        TensorTable { n, ups: 0, downs: 0, comps: vec![e] }
    }

    fn idx(&self, up: &[usize], down: &[usize]) -> usize {
        debug_assert_eq!(up.len(), self.ups);
        debug_assert_eq!(down.len(), self.downs);
        let mut ix = 0usize;
        for u in up {
            ix = ix * self.n + u;
        }
        for d in down {
            ix = ix * self.n + d;
        }
        ix
    }

    pub fn get(&self, up: &[usize], down: &[usize]) -> &Expr {
        &self.comps[self.idx(up, down)]
    }

    pub fn components(&self) -> &[Expr] {
        &self.comps
    }

    fn decode(&self, mut ix: usize) -> (Vec<usize>, Vec<usize>) {
        let total = self.ups + self.downs;
        let mut digits = vec![0usize; total];
        for d in (0..total).rev() {
            digits[d] = ix % self.n;
            ix /= self.n;
        }
        let downs = digits.split_off(self.ups);
        (digits, downs)
    }
}

/// Covariant derivative of a component table: one extra covariant index
/// (appended last), one Γ correction per declared index.
pub fn covariant_derivative(
    model: &ModelSpec,
    ch: &ChristoffelTable,
    t: &TensorTable,
) -> Result<TensorTable, GeomError> {
    let n = t.n;
    let mut out = TensorTable {
        n,
        ups: t.ups,
        downs: t.downs + 1,
        comps: vec![Expr::zero(); n.pow((t.ups + t.downs + 1) as u32)],
    };
    for ix in 0..t.comps.len() {
        let (ups, downs) = t.decode(ix);
        for k in 0..n {
            let mut e = total_derivative(model, &t.comps[ix], k)?;
            for (m, um) in ups.iter().enumerate() {
                for l in 0..n {
                    let mut ups2 = ups.clone();
                    ups2[m] = l;
                    let src = t.get(&ups2, &downs);
                    if src.is_zero() {
                        continue;
                    }
                    e = e.add(&ch.get(*um, k, l).mul(src));
                }
            }
            for (m, dm) in downs.iter().enumerate() {
                for l in 0..n {
                    let mut downs2 = downs.clone();
                    downs2[m] = l;
                    let src = t.get(&ups, &downs2);
                    if src.is_zero() {
                        continue;
                    }
                    e = e.sub(&ch.get(l, k, *dm).mul(src));
                }
            }
            let mut dd = downs.clone();
            dd.push(k);
            let oix = out.idx(&ups, &dd);
            out.comps[oix] = e;
        }
    }
    Ok(out)
}

/// Riemann, Ricci, and scalar curvature as canonical expressions.
pub struct Curvature {
    n: usize,
    riemann: Vec<Expr>,
    pub ricci: Vec<Vec<Expr>>,
    pub scalar: Expr,
}

impl Curvature {
    /// R^i_{jkl}.
    pub fn riemann(&self, i: usize, j: usize, k: usize, l: usize) -> &Expr {
        &self.riemann[((i * self.n + j) * self.n + k) * self.n + l]
    }
}

pub fn curvature(model: &ModelSpec) -> Result<Curvature, GeomError> {
    let n = model.dim();
    let ch = christoffel(model)?;
    let mut riemann = vec![Expr::zero(); n * n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..k {
                    // Antisymmetric in (k, l); fill k > l and mirror.
                    let mut e = total_derivative(model, ch.get(i, j, l), k)?
                        .sub(&total_derivative(model, ch.get(i, j, k), l)?);
                    for m in 0..n {
                        e = e.add(&ch.get(i, k, m).mul(ch.get(m, j, l)));
                        e = e.sub(&ch.get(i, l, m).mul(ch.get(m, j, k)));
                    }
                    riemann[((i * n + j) * n + k) * n + l] = e.clone();
                    riemann[((i * n + j) * n + l) * n + k] = e.neg();
                }
            }
        }
    }
    let cur = Curvature { n, riemann, ricci: Vec::new(), scalar: Expr::zero() };
    let mut ricci = vec![vec![Expr::zero(); n]; n];
    for j in 0..n {
        for l in 0..n {
            let mut e = Expr::zero();
            for i in 0..n {
                e = e.add(cur.riemann(i, j, i, l));
            }
            ricci[j][l] = e;
        }
    }
    let mut scalar = Expr::zero();
    for j in 0..n {
        for l in 0..n {
            if !ricci[j][l].is_zero() {
                scalar = scalar.add(&model.metric_up(j, l).mul(&ricci[j][l]));
            }
        }
    }
    Ok(Curvature { ricci, scalar, ..cur })
}

/// Outcome of checking the variational Einstein forms against the
/// curvature-built oracle.
#[derive(Debug)]
pub struct EinsteinReport {
    pub dim: usize,
    /// n = 2 only: the Euler-Lagrange forms of the curvature density vanish
    /// identically.
    pub symbolic_zero: Option<bool>,
    pub points_checked: usize,
    pub max_rel_mismatch: f64,
    pub max_bianchi_residual: f64,
    pub pass: bool,
}

/// Verify that varying the scalar-curvature density reproduces the Einstein
/// tensor density, and that its covariant divergence vanishes. Dimension 2
/// is fully symbolic (everything is identically zero); dimensions 3 and up
/// run on the numeric graph at `points` random jet points.
pub fn einstein_check(
    model: &ModelSpec,
    points: usize,
    tol_match: f64,
    tol_bianchi: f64,
    seed: u64,
) -> Result<EinsteinReport, GeomError> {
    let g = model.metric_field().ok_or(GeomError::NoMetric)?;
    let n = model.dim();
    if n == 2 {
        let cur = curvature(model)?;
        let lag = cur.scalar.mul(&model.sqrt_det());
        let els = euler_lagrange(model, &lag, g)?;
        let zero = els.iter().all(Expr::is_zero);
        return Ok(EinsteinReport {
            dim: n,
            symbolic_zero: Some(zero),
            points_checked: 0,
            max_rel_mismatch: 0.0,
            max_bianchi_residual: 0.0,
            pass: zero,
        });
    }
    // Numeric route: build the whole pipeline as one shared graph.
    let mut gr = Graph::new();
    fn neg(gr: &mut Graph, x: Node) -> Node {
        let m1 = gr.constant(-1.0);
        gr.mul(vec![m1, x])
    }
    let gup: Vec<Vec<Node>> = (0..n)
        .map(|i| (0..n).map(|j| gr.leaf(&model.jet0(g, model.pair_index(i.min(j), i.max(j))))).collect())
        .collect();
    let glow: Vec<Vec<Node>> =
        (0..n).map(|i| (0..n).map(|j| gr.from_expr(&model.metric_lowered(i, j))).collect()).collect();
    let sqrtg = gr.from_expr(&model.sqrt_det());
    // Christoffel nodes.
    let mut gamma = vec![vec![vec![gr.zero(); n]; n]; n];
    for i in 0..n {
        for j in 0..n {
            for k in j..n {
                let mut parts = Vec::new();
                for l in 0..n {
                    let a = gr.total_derivative(&glow[l][j], model, k)?;
                    let b = gr.total_derivative(&glow[l][k], model, j)?;
                    let c0 = gr.total_derivative(&glow[j][k], model, l)?;
                    let nc = neg(&mut gr, c0);
                    let br = gr.add(vec![a, b, nc]);
                    let p = gr.mul(vec![gup[i][l].clone(), br]);
                    parts.push(p);
                }
                let s = gr.add(parts);
                let half = gr.constant(0.5);
                let gnode = gr.mul(vec![half, s]);
                gamma[i][j][k] = gnode.clone();
                gamma[i][k][j] = gnode;
            }
        }
    }
    // Riemann (lower Ricci directly): R_{jl} = Σ_i R^i_{jil}.
    let mut ricci = vec![vec![gr.zero(); n]; n];
    for j in 0..n {
        for l in 0..n {
            let mut parts = Vec::new();
            for i in 0..n {
                let dk = gr.total_derivative(&gamma[i][j][l], model, i)?;
                let dl = gr.total_derivative(&gamma[i][j][i], model, l)?;
                let ndl = neg(&mut gr, dl);
                parts.push(dk);
                parts.push(ndl);
                for m in 0..n {
                    let p1 = gr.mul(vec![gamma[i][i][m].clone(), gamma[m][j][l].clone()]);
                    let p2 = gr.mul(vec![gamma[i][l][m].clone(), gamma[m][j][i].clone()]);
                    let np2 = neg(&mut gr, p2);
                    parts.push(p1);
                    parts.push(np2);
                }
            }
            ricci[j][l] = gr.add(parts);
        }
    }
    let mut rparts = Vec::new();
    for j in 0..n {
        for l in 0..n {
            let p = gr.mul(vec![gup[j][l].clone(), ricci[j][l].clone()]);
            rparts.push(p);
        }
    }
    let rscalar = gr.add(rparts);
    let lag = gr.mul(vec![rscalar.clone(), sqrtg.clone()]);
    // Euler-Lagrange graph per metric pair.
    let mut el_nodes = Vec::new();
    let mut oracle_nodes = Vec::new();
    for (i, j) in model.pairs() {
        let comp = model.pair_index(i, j);
        let mut parts = Vec::new();
        for m in model.deriv_multisets(2) {
            let atom = model.jet(g, comp, m);
            let mut d = gr.partial(&lag, &atom);
            for ix in m.indices() {
                d = gr.total_derivative(&d, model, ix)?;
            }
            if m.order() % 2 == 1 {
                d = neg(&mut gr, d);
            }
            parts.push(d);
        }
        el_nodes.push(gr.add(parts));
        // Oracle: (2 - δ_ij) (R_ij - (1/2) g_ij R) √g.
        let mhalf = gr.constant(-0.5);
        let half = gr.mul(vec![mhalf, glow[i][j].clone(), rscalar.clone()]);
        let gij = gr.add(vec![ricci[i][j].clone(), half]);
        let w = gr.constant(if i == j { 1.0 } else { 2.0 });
        oracle_nodes.push(gr.mul(vec![w, gij, sqrtg.clone()]));
    }
    // Contracted-divergence residual of the Einstein density
    // 𝔾^j_i = √g g^{jl} (R_li - (1/2) g_li R):
    //   B_i = Σ_j d_j 𝔾^j_i - Σ_{j,l} Γ^l_{ji} 𝔾^j_l.
    let mut gmix = vec![vec![gr.zero(); n]; n];
    for j in 0..n {
        for i in 0..n {
            let mut parts = Vec::new();
            for l in 0..n {
                let mhalf = gr.constant(-0.5);
                let half = gr.mul(vec![mhalf, glow[l][i].clone(), rscalar.clone()]);
                let glo = gr.add(vec![ricci[l][i].clone(), half]);
                let p = gr.mul(vec![gup[j][l].clone(), glo]);
                parts.push(p);
            }
            let s = gr.add(parts);
            gmix[j][i] = gr.mul(vec![sqrtg.clone(), s]);
        }
    }
    let mut div_nodes = Vec::new();
    let mut force_nodes = Vec::new();
    for i in 0..n {
        let mut dparts = Vec::new();
        for j in 0..n {
            dparts.push(gr.total_derivative(&gmix[j][i], model, j)?);
        }
        div_nodes.push(gr.add(dparts));
        let mut fparts = Vec::new();
        for j in 0..n {
            for l in 0..n {
                let p = gr.mul(vec![gamma[l][j][i].clone(), gmix[j][l].clone()]);
                fparts.push(p);
            }
        }
        force_nodes.push(gr.add(fparts));
    }
    // Sample and compare.
    let mut max_rel = 0.0f64;
    let mut max_b = 0.0f64;
    let mut checked = 0usize;
    let mut attempt = 0u64;
    while checked < points && attempt < (points as u64) * 3 {
        let s = sub_seed(seed, attempt);
        attempt += 1;
        let p = random_point(model, 4, s)?;
        let values: HashMap<Atom, f64> =
            p.values().iter().map(|(a, c)| (a.clone(), coeff_to_f64(c))).collect();
        let mut ev = Evaluation::new(&values);
        let mut ok = true;
        for (el, oracle) in el_nodes.iter().zip(&oracle_nodes) {
            let (ve, vo) = match (ev.eval(el), ev.eval(oracle)) {
                (Ok(a), Ok(b)) => (a, b),
                _ => {
                    ok = false;
                    break;
                }
            };
            let rel = (ve - vo).abs() / (1.0 + vo.abs());
            max_rel = max_rel.max(rel);
        }
        if !ok {
            continue;
        }
        for i in 0..n {
            let (vd, vf) = match (ev.eval(&div_nodes[i]), ev.eval(&force_nodes[i])) {
                (Ok(a), Ok(b)) => (a, b),
                _ => {
                    ok = false;
                    break;
                }
            };
            let rel = (vd - vf).abs() / (1.0 + vd.abs() + vf.abs());
            max_b = max_b.max(rel);
        }
        if ok {
            checked += 1;
        }
    }
    if checked < points {
        return Err(GeomError::NotEnoughPoints { got: checked, want: points });
    }
    let pass = max_rel <= tol_match && max_b <= tol_bianchi;
    Ok(EinsteinReport {
        dim: n,
        symbolic_zero: None,
        points_checked: checked,
        max_rel_mismatch: max_rel,
        max_bianchi_residual: max_b,
        pass,
    })
}

/// The manifestly covariant balance combination
///   CB_i = T^j_{i;j} + Σ_{A non-metric background} y^A_{;i} · 𝔗_A,
/// with T the mixed energy-momentum tensor and 𝔗 the source forms divided
/// by the volume factor. Verifies symbolically that √g · CB_i equals the
/// matter side of the divergence identity before returning.
pub fn covariant_balance(model: &ModelSpec, density: &Expr) -> Result<Vec<Expr>, GeomError> {
    model.metric_field().ok_or(GeomError::NoMetric)?;
    let rep = check_covariance(model, density)?;
    if !rep.covariant {
        return Err(GeomError::Emt(EmtError::NonCovariant {
            count: rep.obstructions.len(),
            first: rep
                .obstructions
                .first()
                .map(|o| o.generator_label())
                .unwrap_or_default(),
        }));
    }
    let n = model.dim();
    let ch = christoffel(model)?;
    let bal = balance_unchecked(model, density)?;
    let bare = VaryTable::empty();
    let emt = em_tensor(model, density, &bare)?;
    // T^j_{i;j}.
    let mut tcomps = vec![Expr::zero(); n * n];
    for j in 0..n {
        for i in 0..n {
            tcomps[j * n + i] = emt.mixed[j][i].clone();
        }
    }
    let ttab = TensorTable::new(n, 1, 1, tcomps)?;
    let tdiv = covariant_derivative(model, &ch, &ttab)?;
    let mut cb = vec![Expr::zero(); n];
    for i in 0..n {
        for j in 0..n {
            cb[i] = cb[i].add(tdiv.get(&[j], &[i, j]));
        }
    }
    // Non-metric background forces, with tensor-level source forms.
    let inv_vol = {
        let s = model.manifold.det_sign();
        model.det_up().scale(&coeff_int(s as i64)).pow(exp_ratio(1, 2))?
    };
    for f in model.field_ids() {
        let b = model.bundle(f);
        if b.parameter || matches!(b.kind, BundleKind::Metric) {
            continue;
        }
        if !(b.background || b.external) {
            continue;
        }
        let tau = crate::emt::source_form(model, density, &bare, f)?;
        if tau.components.iter().all(Expr::is_zero) {
            continue;
        }
        let (ups, downs) = match b.kind {
            BundleKind::Scalar => (0usize, 0usize),
            BundleKind::Tensor { up, down } => (up as usize, down as usize),
            BundleKind::Distortion => (1, 2),
            BundleKind::Metric => unreachable!(),
        };
        let comps: Vec<Expr> = (0..model.n_components(f))
            .map(|c| Expr::from_atom(model.jet0(f, c)))
            .collect();
        let ytab = TensorTable::new(n, ups, downs, comps)?;
        let ycov = covariant_derivative(model, &ch, &ytab)?;
        for (cix, tau_c) in tau.components.iter().enumerate() {
            if tau_c.is_zero() {
                continue;
            }
            let (u, d) = ytab.decode(cix);
            let frak = tau_c.mul(&inv_vol);
            for i in 0..n {
                let mut dd = d.clone();
                dd.push(i);
                cb[i] = cb[i].add(&ycov.get(&u, &dd).mul(&frak));
            }
        }
    }
    // The covariant combination must reproduce the matter side exactly.
    let vol = model.sqrt_det();
    for i in 0..n {
        let defect = cb[i].mul(&vol).sub(&bal.matter[i]);
        if !defect.is_zero() {
            return Err(GeomError::CovariantMismatch(i));
        }
    }
    Ok(cb)
}

/// The closed-form metric-affine energy-momentum tensor over opaque source
/// symbols, checked against the generic lift-contraction pipeline:
///   T^j_i = 2 𝔗^j_i + 𝔗^{hl}_i N^j_{hl} - 𝔗^{jl}_m N^m_{il} - 𝔗^{hj}_m N^m_{hi},
/// where 𝔗^j_i = g^{jh} 𝔗̃_{hi} raises the opaque metric source and the
/// three N-terms carry the distortion sources.
pub fn metric_affine_emt_closed_form(model: &ModelSpec) -> Result<Vec<Vec<Expr>>, GeomError> {
    let g = model.metric_field().ok_or(GeomError::NoMetric)?;
    let nf = model
        .field_ids()
        .find(|f| matches!(model.bundle(*f).kind, BundleKind::Distortion))
        .ok_or(GeomError::NoDistortion)?;
    let n = model.dim();
    // Opaque ordered metric sources 𝔗̃_{hl} = 𝔗̃_{lh} and distortion
    // sources 𝔗^{bc}_a.
    let tg = |h: usize, l: usize| {
        let (a, b) = (h.min(l), h.max(l));
        Expr::from_atom(Atom::sym(&format!("Tg{a}{b}")))
    };
    let tn = |a: usize, b: usize, c: usize| {
        Expr::from_atom(Atom::sym(&format!("Tn{a}_{b}{c}")))
    };
    // Closed form.
    let nval = |a: usize, b: usize, c: usize| {
        Expr::from_atom(model.jet0(nf, model.tensor_comp(nf, &[a], &[b, c])))
    };
    let mut closed = vec![vec![Expr::zero(); n]; n];
    for j in 0..n {
        for i in 0..n {
            let mut e = Expr::zero();
            for h in 0..n {
                e = e.add(&model.metric_up(j, h).mul(&tg(h, i)).scale(&coeff_int(2)));
            }
            for h in 0..n {
                for l in 0..n {
                    e = e.add(&tn(i, h, l).mul(&nval(j, h, l)));
                }
            }
            for m in 0..n {
                for l in 0..n {
                    e = e.sub(&tn(m, j, l).mul(&nval(m, i, l)));
                }
            }
            for m in 0..n {
                for h in 0..n {
                    e = e.sub(&tn(m, h, j).mul(&nval(m, h, i)));
                }
            }
            closed[j][i] = e;
        }
    }
    // Pipeline on the same opaque sources.
    let mut sources = HashMap::new();
    let gsrc: Vec<Expr> = model
        .pairs()
        .iter()
        .map(|(h, l)| tg(*h, *l).scale(&coeff_int(if h == l { 1 } else { 2 })))
        .collect();
    sources.insert(g, gsrc);
    let nsrc: Vec<Expr> = (0..model.n_components(nf))
        .map(|c| {
            let (u, d) = model.tensor_comp_decode(nf, c);
            tn(u[0], d[0], d[1])
        })
        .collect();
    sources.insert(nf, nsrc);
    let pipeline = em_tensor_from_sources(model, &sources)?;
    for j in 0..n {
        for i in 0..n {
            if closed[j][i] != pipeline[j][i] {
                return Err(GeomError::CovariantMismatch(j * n + i));
            }
        }
    }
    Ok(closed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atom::DerivIdx;
    use crate::jet::section_substitution;
    use crate::model::{BundleSpec, ManifoldSpec};
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

    fn flat_map(m: &ModelSpec) -> HashMap<Atom, Expr> {
        let g = m.metric_field().unwrap();
        let mut map = HashMap::new();
        for (i, j) in m.pairs() {
            let comp = m.pair_index(i, j);
            for d in m.deriv_multisets(3) {
                let v = if d.order() == 0 {
                    if i == j {
                        Expr::one()
                    } else {
                        Expr::zero()
                    }
                } else {
                    Expr::zero()
                };
                map.insert(m.jet(g, comp, d), v);
            }
        }
        map
    }

    #[test]
    fn christoffel_vanishes_on_the_flat_section() {
        let m = metric_model(2);
        let ch = christoffel(&m).unwrap();
        let flat = flat_map(&m);
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let v = ch.get(i, j, k).substitute(&flat).unwrap();
                    assert!(v.is_zero(), "Γ^{i}_{j}{k} = {v}");
                }
            }
        }
    }

    #[test]
    fn christoffel_on_a_polynomial_diagonal_section() {
        // Covariant section g = diag(1, (x^0)^2), i.e. contravariant
        // diag(1, (x^0)^{-2}): Γ^1_{01} = 1/x^0 and Γ^0_{11} = -x^0.
        let m = metric_model(2);
        let g = m.metric_field().unwrap();
        let x0 = Atom::Base(0);
        let mut section = HashMap::new();
        section.insert((g, m.pair_index(0, 0)), Expr::one());
        section.insert((g, m.pair_index(0, 1)), Expr::zero());
        section.insert((g, m.pair_index(1, 1)), Expr::atom_pow(x0.clone(), exp_int(-2)));
        let map = section_substitution(&m, &section, 3).unwrap();
        let ch = christoffel(&m).unwrap();
        let g101 = ch.get(1, 0, 1).substitute(&map).unwrap();
        assert_eq!(g101, Expr::atom_pow(x0.clone(), exp_int(-1)));
        let g011 = ch.get(0, 1, 1).substitute(&map).unwrap();
        assert_eq!(g011, Expr::from_atom(x0).neg());
    }

    #[test]
    fn volume_factor_derivative_is_the_traced_connection() {
        for dim in [2usize, 3] {
            let m = metric_model(dim);
            let ch = christoffel(&m).unwrap();
            let vol = m.sqrt_det();
            for k in 0..dim {
                let lhs = total_derivative(&m, &vol, k).unwrap();
                let mut tr = Expr::zero();
                for j in 0..dim {
                    tr = tr.add(ch.get(j, j, k));
                }
                let defect = lhs.sub(&tr.mul(&vol));
                assert!(defect.is_zero(), "dim {dim}, k {k}: {defect}");
            }
        }
    }

    #[test]
    fn both_metric_representations_are_covariantly_constant() {
        let m = metric_model(2);
        let ch = christoffel(&m).unwrap();
        let n = 2;
        let up = TensorTable::new(
            n,
            2,
            0,
            (0..n * n).map(|ix| m.metric_up(ix / n, ix % n)).collect(),
        )
        .unwrap();
        let dup = covariant_derivative(&m, &ch, &up).unwrap();
        assert!(dup.components().iter().all(Expr::is_zero));
        let low = TensorTable::new(
            n,
            0,
            2,
            (0..n * n).map(|ix| m.metric_lowered(ix / n, ix % n)).collect(),
        )
        .unwrap();
        let dlow = covariant_derivative(&m, &ch, &low).unwrap();
        assert!(dlow.components().iter().all(Expr::is_zero));
    }

    #[test]
    fn scalar_covariant_derivative_is_the_total_derivative() {
        let m = metric_model(2);
        let ch = christoffel(&m).unwrap();
        let phi = m.field("phi").unwrap();
        let t = TensorTable::scalar(2, Expr::from_atom(m.jet0(phi, 0)));
        let dt = covariant_derivative(&m, &ch, &t).unwrap();
        for k in 0..2 {
            let expect = Expr::from_atom(m.jet(phi, 0, DerivIdx::from_indices(&[k])));
            assert_eq!(*dt.get(&[], &[k]), expect);
        }
    }

    #[test]
    fn riemann_is_antisymmetric_and_satisfies_the_cyclic_identity() {
        let m = metric_model(2);
        let cur = curvature(&m).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        let anti = cur.riemann(i, j, k, l).add(cur.riemann(i, j, l, k));
                        assert!(anti.is_zero());
                        let cyc = cur
                            .riemann(i, j, k, l)
                            .add(cur.riemann(i, k, l, j))
                            .add(cur.riemann(i, l, j, k));
                        assert!(cyc.is_zero(), "cyclic at {i}{j}{k}{l}");
                    }
                }
            }
        }
    }

    #[test]
    fn curvature_vanishes_on_the_flat_section() {
        let m = metric_model(2);
        let cur = curvature(&m).unwrap();
        let flat = flat_map(&m);
        assert!(cur.scalar.substitute(&flat).unwrap().is_zero());
    }

    #[test]
    fn unit_sphere_scalar_curvature_is_two() {
        // Covariant section diag(1, sin^2 θ) evaluated numerically at a few
        // polar angles through the graph evaluator.
        let m = metric_model(2);
        let g = m.metric_field().unwrap();
        let cur = curvature(&m).unwrap();
        let mut gr = Graph::new();
        let node = gr.from_expr(&cur.scalar);
        for theta in [0.7f64, 1.1, 2.0] {
            let (s, c) = (theta.sin(), theta.cos());
            // Contravariant pair values g^{00} = 1, g^{01} = 0,
            // g^{11} = 1/sin^2, with θ-derivatives to second order.
            let mut values: HashMap<Atom, f64> = HashMap::new();
            let assign = |values: &mut HashMap<Atom, f64>, i: usize, j: usize, d: &[usize], v: f64| {
                values.insert(
                    m.jet(g, m.pair_index(i, j), DerivIdx::from_indices(d)),
                    v,
                );
            };
            for d in [&[][..], &[0][..], &[1][..], &[0, 0][..], &[0, 1][..], &[1, 1][..]] {
                assign(&mut values, 0, 0, d, if d.is_empty() { 1.0 } else { 0.0 });
                assign(&mut values, 0, 1, d, 0.0);
            }
            let inv = 1.0 / (s * s);
            let dinv = -2.0 * c / (s * s * s);
            let ddinv = (2.0 * s * s + 6.0 * c * c) / (s * s * s * s);
            assign(&mut values, 1, 1, &[], inv);
            assign(&mut values, 1, 1, &[0], dinv);
            assign(&mut values, 1, 1, &[1], 0.0);
            assign(&mut values, 1, 1, &[0, 0], ddinv);
            assign(&mut values, 1, 1, &[0, 1], 0.0);
            assign(&mut values, 1, 1, &[1, 1], 0.0);
            let r = Evaluation::new(&values).eval(&node).unwrap();
            assert!((r - 2.0).abs() < 1e-9, "θ = {theta}: R = {r}");
        }
    }

    #[test]
    fn einstein_forms_vanish_identically_in_dimension_two() {
        let m = metric_model(2);
        let rep = einstein_check(&m, 0, 1e-9, 1e-7, 0).unwrap();
        assert_eq!(rep.symbolic_zero, Some(true));
        assert!(rep.pass);
    }

    #[test]
    fn einstein_forms_match_the_curvature_oracle_in_dimension_three() {
        let m = ModelSpec::declare(
            ManifoldSpec::euclidean(3).unwrap(),
            vec![BundleSpec::background("g", BundleKind::Metric)],
            2,
        )
        .unwrap();
        let rep = einstein_check(&m, 5, 1e-9, 1e-7, 11).unwrap();
        assert!(rep.pass, "report: {rep:?}");
        assert_eq!(rep.points_checked, 5);
    }

    #[test]
    fn covariant_balance_of_the_kinetic_scalar_density() {
        let m = metric_model(2);
        let phi = m.field("phi").unwrap();
        let mut kin = Expr::zero();
        for i in 0..2 {
            for j in 0..2 {
                let pi = Expr::from_atom(m.jet(phi, 0, DerivIdx::from_indices(&[i])));
                let pj = Expr::from_atom(m.jet(phi, 0, DerivIdx::from_indices(&[j])));
                kin = kin.add(&m.metric_up(i, j).mul(&pi).mul(&pj));
            }
        }
        kin = kin.mul(&m.sqrt_det()).scale(&coeff_ratio(1, 2));
        // The op itself asserts √g·CB = matter side; reaching Ok is the test.
        let cb = covariant_balance(&m, &kin).unwrap();
        assert_eq!(cb.len(), 2);
        assert!(!cb[0].is_zero() || !cb[1].is_zero());
    }

    #[test]
    fn covariant_balance_with_a_distortion_background() {
        let m = ModelSpec::declare(
            ManifoldSpec::euclidean(2).unwrap(),
            vec![
                BundleSpec::background("g", BundleKind::Metric),
                BundleSpec::background("N", BundleKind::Distortion),
            ],
            2,
        )
        .unwrap();
        let nf = m.field("N").unwrap();
        // Scalar density from the distortion trace: g^{bc} S_b S_c √g with
        // S_b = N^a_{ab}.
        let n = 2;
        let trace = |b: usize| {
            let mut e = Expr::zero();
            for a in 0..n {
                e = e.add(&Expr::from_atom(m.jet0(nf, m.tensor_comp(nf, &[a], &[a, b]))));
            }
            e
        };
        let mut lag = Expr::zero();
        for b in 0..n {
            for c in 0..n {
                lag = lag.add(&m.metric_up(b, c).mul(&trace(b)).mul(&trace(c)));
            }
        }
        lag = lag.mul(&m.sqrt_det());
        let cb = covariant_balance(&m, &lag).unwrap();
        // No matter: the covariant combination vanishes identically.
        assert!(cb.iter().all(Expr::is_zero), "cb = [{}, {}]", cb[0], cb[1]);
    }

    #[test]
    fn metric_affine_closed_form_matches_the_lift_pipeline() {
        let m = ModelSpec::declare(
            ManifoldSpec::euclidean(2).unwrap(),
            vec![
                BundleSpec::background("g", BundleKind::Metric),
                BundleSpec::background("N", BundleKind::Distortion),
            ],
            2,
        )
        .unwrap();
        let t = metric_affine_emt_closed_form(&m).unwrap();
        // Setting the distortion to zero leaves the doubled raised metric
        // source.
        let nf = m.field("N").unwrap();
        let mut kill = HashMap::new();
        for c in 0..m.n_components(nf) {
            kill.insert(m.jet0(nf, c), Expr::zero());
        }
        for j in 0..2 {
            for i in 0..2 {
                let reduced = t[j][i].substitute(&kill).unwrap();
                let mut expect = Expr::zero();
                for h in 0..2 {
                    let (a, b) = (h.min(i), h.max(i));
                    expect = expect.add(
                        &m.metric_up(j, h)
                            .mul(&Expr::from_atom(Atom::sym(&format!("Tg{a}{b}"))))
                            .scale(&coeff_int(2)),
                    );
                }
                assert_eq!(reduced, expect, "({j},{i})");
            }
        }
    }
}
