//! Lowering from the parsed model file to engine objects.
//!
//! Resolves every identifier against the declared fields (unknown names are
//! rejected with their position), expands `sum`, `delta`, `sqrtg` and the
//! metric sugar, and turns component tables into dense component vectors in
//! the engine's storage order. Metric tables are written in ordered
//! components `[i j]`; the unordered-pair coordinate used internally absorbs
//! both orderings of an off-diagonal pair, so the stored entry is doubled
//! there. Patterns may use index variables (`[i j] = ...` ranges over
//! components, with `i <= j` on symmetric pairs; a repeated variable like
//! `[a a b]` runs over the diagonal).

use std::collections::HashMap;

use vartool_core::atom::{Atom, DerivIdx, FieldId};
use vartool_core::emt::{SourceForm, VaryTable};
use vartool_core::expr::Expr;
use vartool_core::jet::total_derivative_multi;
use vartool_core::model::{BundleKind, BundleSpec, ManifoldSpec, ModelSpec, ORDER_CAP};
use vartool_core::rational::{exp_ratio, exp_to_string};

use crate::lex::{Diag, Pos};
use crate::parse::{
    BinOp, ExprAst, FieldAst, Idx, IdxAst, KindAst, ModelAst, RoleAst, SourceBody,
};

/// A fully lowered model file: the field declarations plus every named
/// object defined in it.
pub struct Lowered {
    pub model: ModelSpec,
    pub lagrangians: Vec<(String, Expr)>,
    pub sources: Vec<(String, SourceForm)>,
    pub rules: Vec<(Expr, Expr)>,
    pub sections: Vec<(String, HashMap<(FieldId, u32), Expr>)>,
    pub vary: VaryTable,
}

const RESERVED: &[&str] = &[
    "manifold", "dim", "signature", "field", "scalar", "metric", "distortion", "tensor",
    "matter", "background", "external", "weight", "positive", "lagrangian", "source",
    "over", "rule", "section", "vary", "D", "sum", "delta", "sqrtg", "x",
];

type Env = Vec<(String, usize)>;

pub fn lower_model(ast: &ModelAst) -> Result<Lowered, Diag> {
    let (dim, signature, mpos) = ast
        .manifold
        .clone()
        .ok_or_else(|| Diag::new(Pos { line: 1, col: 1 }, "missing `manifold` statement"))?;
    let manifold = ManifoldSpec::new(dim, signature)
        .map_err(|e| Diag::new(mpos, e.to_string()))?;
    let mut bundles = Vec::new();
    for f in &ast.fields {
        bundles.push(lower_field(f)?);
    }
    let model = ModelSpec::declare(manifold, bundles, ORDER_CAP)
        .map_err(|e| Diag::new(mpos, e.to_string()))?;

    let mut lagrangians: Vec<(String, Expr)> = Vec::new();
    for (name, e, pos) in &ast.lagrangians {
        if lagrangians.iter().any(|(n, _)| n == name) {
            return Err(Diag::new(*pos, format!("duplicate Lagrangian `{name}`")));
        }
        check_name(name, *pos)?;
        let mut env = Env::new();
        lagrangians.push((name.clone(), lower_expr(&model, e, &mut env)?));
    }

    let mut sources: Vec<(String, SourceForm)> = Vec::new();
    for s in &ast.sources {
        if sources.iter().any(|(n, _)| n == &s.name) {
            return Err(Diag::new(s.pos, format!("duplicate source `{}`", s.name)));
        }
        check_name(&s.name, s.pos)?;
        sources.push((s.name.clone(), lower_source(&model, s)?));
    }

    let mut rules = Vec::new();
    for (lhs, rhs, _) in &ast.rules {
        let mut env = Env::new();
        let l = lower_expr(&model, lhs, &mut env)?;
        let r = lower_expr(&model, rhs, &mut env)?;
        rules.push((l, r));
    }

    let mut sections: Vec<(String, HashMap<(FieldId, u32), Expr>)> = Vec::new();
    for s in &ast.sections {
        if sections.iter().any(|(n, _)| n == &s.name) {
            return Err(Diag::new(s.pos, format!("duplicate section `{}`", s.name)));
        }
        check_name(&s.name, s.pos)?;
        sections.push((s.name.clone(), lower_section(&model, s)?));
    }

    let mut vary = VaryTable::empty();
    for v in &ast.varies {
        lower_vary(&model, v, &mut vary)?;
    }

    Ok(Lowered { model, lagrangians, sources, rules, sections, vary })
}

/// Lower a standalone expression over an already-built model (command-line
/// expression arguments).
pub fn lower_expr_str(model: &ModelSpec, src: &str) -> Result<Expr, Diag> {
    let ast = crate::parse::parse_expr(src)?;
    let mut env = Env::new();
    lower_expr(model, &ast, &mut env)
}

fn check_name(name: &str, pos: Pos) -> Result<(), Diag> {
    if RESERVED.contains(&name) {
        return Err(Diag::new(pos, format!("`{name}` is a reserved word")));
    }
    Ok(())
}

fn lower_field(f: &FieldAst) -> Result<BundleSpec, Diag> {
    check_name(&f.name, f.pos)?;
    let kind = match f.kind {
        KindAst::Scalar => BundleKind::Scalar,
        KindAst::Metric => BundleKind::Metric,
        KindAst::Distortion => BundleKind::Distortion,
        KindAst::Tensor(p, q) => {
            if p > 4 || q > 4 {
                return Err(Diag::new(f.pos, "tensor valence above four"));
            }
            BundleKind::Tensor { up: p as u8, down: q as u8 }
        }
    };
    if f.external {
        if f.role.is_some() {
            return Err(Diag::new(
                f.pos,
                "external fields take no `matter` or `background` flag",
            ));
        }
        let (num, den) = f.weight.ok_or_else(|| {
            Diag::new(f.pos, format!("external field `{}` needs `weight=`", f.name))
        })?;
        return Ok(BundleSpec::external(
            &f.name,
            kind,
            exp_ratio(num, den as i64),
            f.positive,
        ));
    }
    if f.weight.is_some() {
        return Err(Diag::new(f.pos, "`weight=` applies only to external fields"));
    }
    if f.positive {
        return Err(Diag::new(f.pos, "`positive` applies only to external fields"));
    }
    let role = f.role.unwrap_or(match f.kind {
        KindAst::Metric => RoleAst::Background,
        _ => RoleAst::Matter,
    });
    Ok(match role {
        RoleAst::Matter => BundleSpec::matter(&f.name, kind),
        RoleAst::Background => BundleSpec::background(&f.name, kind),
    })
}

fn resolve_idx(idx: &IdxAst, env: &Env, dim: usize) -> Result<usize, Diag> {
    let v = match &idx.idx {
        Idx::Lit(v) => *v,
        Idx::Var(name) => env
            .iter()
            .rev()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Diag::new(idx.pos, format!("unbound index `{name}`")))?,
    };
    if v >= dim {
        return Err(Diag::new(
            idx.pos,
            format!("index {v} out of range for dimension {dim}"),
        ));
    }
    Ok(v)
}

fn lower_expr(model: &ModelSpec, ast: &ExprAst, env: &mut Env) -> Result<Expr, Diag> {
    let n = model.dim();
    match ast {
        ExprAst::Num(v, _) => Ok(Expr::from_int(*v as i64)),
        ExprAst::Neg(inner, _) => Ok(lower_expr(model, inner, env)?.neg()),
        ExprAst::Bin { op, lhs, rhs, pos } => {
            let l = lower_expr(model, lhs, env)?;
            let r = lower_expr(model, rhs, env)?;
            Ok(match op {
                BinOp::Add => l.add(&r),
                BinOp::Sub => l.sub(&r),
                BinOp::Mul => l.mul(&r),
                BinOp::Div => {
                    let inv = r
                        .pow(exp_ratio(-1, 1))
                        .map_err(|e| Diag::new(*pos, e.to_string()))?;
                    l.mul(&inv)
                }
            })
        }
        ExprAst::Pow { base, num, den, pos } => {
            let b = lower_expr(model, base, env)?;
            b.pow(exp_ratio(*num, *den as i64))
                .map_err(|e| Diag::new(*pos, e.to_string()))
        }
        ExprAst::Base(i, _) => {
            let i = resolve_idx(i, env, n)?;
            Ok(Expr::from_atom(model.base(i)))
        }
        ExprAst::Delta(a, b, _) => {
            let a = resolve_idx(a, env, n)?;
            let b = resolve_idx(b, env, n)?;
            Ok(if a == b { Expr::one() } else { Expr::zero() })
        }
        ExprAst::SqrtG(pos) => {
            if model.metric_field().is_none() {
                return Err(Diag::new(*pos, "the model declares no metric"));
            }
            Ok(model.sqrt_det())
        }
        ExprAst::Sum { var, body, .. } => {
            let mut acc = Expr::zero();
            for k in 0..n {
                env.push((var.clone(), k));
                let t = lower_expr(model, body, env);
                env.pop();
                acc = acc.add(&t?);
            }
            Ok(acc)
        }
        ExprAst::Deriv { body, indices, pos } => {
            if indices.len() > ORDER_CAP {
                return Err(Diag::new(
                    *pos,
                    format!("derivative order {} above the supported {ORDER_CAP}", indices.len()),
                ));
            }
            let inner = lower_expr(model, body, env)?;
            let mut idx = Vec::with_capacity(indices.len());
            for i in indices {
                idx.push(resolve_idx(i, env, n)?);
            }
            total_derivative_multi(model, &inner, DerivIdx::from_indices(&idx))
                .map_err(|e| Diag::new(*pos, e.to_string()))
        }
        ExprAst::Comp { name, ups, downs, pos } => {
            let f = model
                .field(name)
                .map_err(|_| Diag::new(*pos, format!("unknown identifier `{name}`")))?;
            let mut up_idx = Vec::with_capacity(ups.len());
            for i in ups {
                up_idx.push(resolve_idx(i, env, n)?);
            }
            let mut down_idx = Vec::with_capacity(downs.len());
            for i in downs {
                down_idx.push(resolve_idx(i, env, n)?);
            }
            lower_comp(model, f, &up_idx, &down_idx, *pos)
        }
    }
}

fn lower_comp(
    model: &ModelSpec,
    f: FieldId,
    ups: &[usize],
    downs: &[usize],
    pos: Pos,
) -> Result<Expr, Diag> {
    let b = model.bundle(f);
    match b.kind {
        BundleKind::Scalar => {
            if !ups.is_empty() || !downs.is_empty() {
                return Err(Diag::new(pos, format!("`{}` is a scalar and takes no indices", b.name)));
            }
            Ok(Expr::from_atom(model.jet0(f, 0)))
        }
        BundleKind::Metric => match (ups.len(), downs.len()) {
            (2, 0) => {
                let comp = model.pair_index(ups[0], ups[1]);
                Ok(Expr::from_atom(model.jet0(f, comp)))
            }
            (0, 2) => Ok(model.metric_lowered(downs[0], downs[1])),
            _ => Err(Diag::new(
                pos,
                format!("metric `{}` takes two upper (`^[i j]`) or two lower (`_[i j]`) indices", b.name),
            )),
        },
        BundleKind::Tensor { up, down } => {
            if ups.len() != up as usize || downs.len() != down as usize {
                return Err(Diag::new(
                    pos,
                    format!("`{}` has valence ({up},{down}), found ({},{})", b.name, ups.len(), downs.len()),
                ));
            }
            Ok(Expr::from_atom(model.jet0(f, model.tensor_comp(f, ups, downs))))
        }
        BundleKind::Distortion => {
            if ups.len() != 1 || downs.len() != 2 {
                return Err(Diag::new(
                    pos,
                    format!("distortion `{}` takes one upper and two lower indices", b.name),
                ));
            }
            Ok(Expr::from_atom(model.jet0(f, model.tensor_comp(f, ups, downs))))
        }
    }
}

/// Run `visit` once per assignment of the pattern's index slots. Literal
/// slots are fixed; a variable binds on first occurrence and ranges over
/// `0..dim`, and later occurrences of the same name reuse the bound value.
fn enumerate_pattern(
    indices: &[IdxAst],
    slot: usize,
    dim: usize,
    env: &mut Env,
    resolved: &mut Vec<usize>,
    visit: &mut dyn FnMut(&mut Env, &[usize]) -> Result<(), Diag>,
) -> Result<(), Diag> {
    if slot == indices.len() {
        return visit(env, resolved);
    }
    let idx = &indices[slot];
    match &idx.idx {
        Idx::Lit(_) => {
            let v = resolve_idx(idx, env, dim)?;
            resolved.push(v);
            enumerate_pattern(indices, slot + 1, dim, env, resolved, visit)?;
            resolved.pop();
        }
        Idx::Var(name) => {
            if env.iter().any(|(n, _)| n == name) {
                let v = resolve_idx(idx, env, dim)?;
                resolved.push(v);
                enumerate_pattern(indices, slot + 1, dim, env, resolved, visit)?;
                resolved.pop();
            } else {
                for v in 0..dim {
                    env.push((name.clone(), v));
                    resolved.push(v);
                    let r = enumerate_pattern(indices, slot + 1, dim, env, resolved, visit);
                    resolved.pop();
                    env.pop();
                    r?;
                }
            }
        }
    }
    Ok(())
}

fn pattern_has_var(indices: &[IdxAst]) -> bool {
    indices.iter().any(|i| matches!(i.idx, Idx::Var(_)))
}

fn lower_source(model: &ModelSpec, s: &crate::parse::SourceAst) -> Result<SourceForm, Diag> {
    let f = model
        .field(&s.over)
        .map_err(|_| Diag::new(s.pos, format!("unknown field `{}`", s.over)))?;
    let b = model.bundle(f);
    let n = model.dim();
    let ncomp = model.n_components(f) as usize;
    match (&s.body, &b.kind) {
        (SourceBody::Bare(e), BundleKind::Scalar) => {
            let mut env = Env::new();
            let v = lower_expr(model, e, &mut env)?;
            Ok(SourceForm { field: f, components: vec![v] })
        }
        (SourceBody::Bare(_), _) => Err(Diag::new(
            s.pos,
            format!("source over `{}` needs a component table `{{ [..] = ... }}`", s.over),
        )),
        (SourceBody::Table(_), BundleKind::Scalar) => Err(Diag::new(
            s.pos,
            format!("source over scalar `{}` takes a bare expression", s.over),
        )),
        (SourceBody::Table(entries), BundleKind::Metric) => {
            let mut comps: Vec<Option<Expr>> = vec![None; ncomp];
            for (indices, value) in entries {
                if indices.len() != 2 {
                    return Err(Diag::new(s.pos, "metric components take two indices"));
                }
                let skip_unordered = pattern_has_var(indices);
                let mut env = Env::new();
                let mut resolved = Vec::new();
                enumerate_pattern(indices, 0, n, &mut env, &mut resolved, &mut |env, r| {
                    let (i, j) = (r[0], r[1]);
                    if skip_unordered && i > j {
                        return Ok(());
                    }
                    let v = lower_expr(model, value, env)?;
                    let pair = model.pair_index(i, j) as usize;
                    if comps[pair].is_some() {
                        return Err(Diag::new(
                            value.pos(),
                            format!("component [{} {}] given twice", i.min(j), i.max(j)),
                        ));
                    }
                    // The unordered-pair coordinate carries both orderings of
                    // an off-diagonal pair.
                    let stored = if i == j { v } else { v.scale(&vartool_core::rational::coeff_int(2)) };
                    comps[pair] = Some(stored);
                    Ok(())
                })?;
            }
            Ok(SourceForm {
                field: f,
                components: comps.into_iter().map(|c| c.unwrap_or_else(Expr::zero)).collect(),
            })
        }
        (SourceBody::Table(entries), BundleKind::Tensor { up, down }) => {
            let comps = lower_tensor_table(model, f, entries, *up as usize, *down as usize, s.pos)?;
            Ok(SourceForm { field: f, components: comps })
        }
        (SourceBody::Table(entries), BundleKind::Distortion) => {
            let comps = lower_tensor_table(model, f, entries, 1, 2, s.pos)?;
            Ok(SourceForm { field: f, components: comps })
        }
    }
}

fn lower_tensor_table(
    model: &ModelSpec,
    f: FieldId,
    entries: &[(Vec<IdxAst>, ExprAst)],
    up: usize,
    down: usize,
    pos: Pos,
) -> Result<Vec<Expr>, Diag> {
    let n = model.dim();
    let ncomp = model.n_components(f) as usize;
    let mut comps: Vec<Option<Expr>> = vec![None; ncomp];
    for (indices, value) in entries {
        if indices.len() != up + down {
            return Err(Diag::new(
                pos,
                format!("`{}` components take {} indices (upper first)", model.bundle(f).name, up + down),
            ));
        }
        let mut env = Env::new();
        let mut resolved = Vec::new();
        enumerate_pattern(indices, 0, n, &mut env, &mut resolved, &mut |env, r| {
            let comp = model.tensor_comp(f, &r[..up], &r[up..]) as usize;
            let v = lower_expr(model, value, env)?;
            if comps[comp].is_some() {
                return Err(Diag::new(value.pos(), "component given twice".to_string()));
            }
            comps[comp] = Some(v);
            Ok(())
        })?;
    }
    Ok(comps.into_iter().map(|c| c.unwrap_or_else(Expr::zero)).collect())
}

fn lower_section(
    model: &ModelSpec,
    s: &crate::parse::SectionAst,
) -> Result<HashMap<(FieldId, u32), Expr>, Diag> {
    let n = model.dim();
    let mut map: HashMap<(FieldId, u32), Expr> = HashMap::new();
    for (lhs, value) in &s.entries {
        let ExprAst::Comp { name, ups, downs, pos } = lhs else {
            return Err(Diag::new(s.pos, "section entries assign field components"));
        };
        let f = model
            .field(name)
            .map_err(|_| Diag::new(*pos, format!("unknown identifier `{name}`")))?;
        let b = model.bundle(f);
        let (pattern, split_up): (Vec<IdxAst>, usize) = match b.kind {
            BundleKind::Scalar => {
                if !ups.is_empty() || !downs.is_empty() {
                    return Err(Diag::new(*pos, format!("`{}` takes no indices", b.name)));
                }
                (Vec::new(), 0)
            }
            BundleKind::Metric => {
                if ups.len() != 2 || !downs.is_empty() {
                    return Err(Diag::new(
                        *pos,
                        format!("define the fundamental components `{}^[i j]`", b.name),
                    ));
                }
                (ups.clone(), 2)
            }
            BundleKind::Tensor { up, down } => {
                if ups.len() != up as usize || downs.len() != down as usize {
                    return Err(Diag::new(
                        *pos,
                        format!("`{}` has valence ({up},{down})", b.name),
                    ));
                }
                let mut p = ups.clone();
                p.extend(downs.iter().cloned());
                (p, up as usize)
            }
            BundleKind::Distortion => {
                if ups.len() != 1 || downs.len() != 2 {
                    return Err(Diag::new(
                        *pos,
                        format!("distortion `{}` takes one upper and two lower indices", b.name),
                    ));
                }
                let mut p = ups.clone();
                p.extend(downs.iter().cloned());
                (p, 1)
            }
        };
        let symmetric_pair = matches!(b.kind, BundleKind::Metric);
        let skip_unordered = symmetric_pair && pattern_has_var(&pattern);
        let mut env = Env::new();
        let mut resolved = Vec::new();
        enumerate_pattern(&pattern, 0, n, &mut env, &mut resolved, &mut |env, r| {
            let comp = if symmetric_pair {
                if skip_unordered && r[0] > r[1] {
                    return Ok(());
                }
                model.pair_index(r[0], r[1])
            } else if matches!(b.kind, BundleKind::Scalar) {
                0
            } else {
                model.tensor_comp(f, &r[..split_up], &r[split_up..])
            };
            let v = lower_expr(model, value, env)?;
            for a in v.atoms_deep() {
                if !matches!(a, Atom::Base(_)) {
                    return Err(Diag::new(
                        value.pos(),
                        "section values may depend only on the base coordinates".to_string(),
                    ));
                }
            }
            if map.insert((f, comp), v).is_some() {
                return Err(Diag::new(value.pos(), "component given twice".to_string()));
            }
            Ok(())
        })?;
    }
    for f in model.field_ids() {
        if model.bundle(f).parameter {
            continue;
        }
        for comp in 0..model.n_components(f) {
            if !map.contains_key(&(f, comp)) {
                let label = vartool_core::render::Renderer::new(model).component_label(f, comp);
                return Err(Diag::new(
                    s.pos,
                    format!("section `{}` leaves {label} undefined", s.name),
                ));
            }
        }
    }
    Ok(map)
}

fn lower_vary(model: &ModelSpec, v: &crate::parse::VaryAst, table: &mut VaryTable) -> Result<(), Diag> {
    let ext = model
        .field(&v.ext)
        .map_err(|_| Diag::new(v.pos, format!("unknown field `{}`", v.ext)))?;
    let Some(mf) = model.metric_field() else {
        return Err(Diag::new(v.pos, "the model declares no metric"));
    };
    if model.bundle(mf).name != v.over {
        return Err(Diag::new(
            v.pos,
            format!("variations are declared over the metric `{}`", model.bundle(mf).name),
        ));
    }
    let n = model.dim();
    let mut grid: Vec<Vec<Option<Expr>>> = vec![vec![None; n]; n];
    for (indices, value) in &v.entries {
        if indices.len() != 2 {
            return Err(Diag::new(v.pos, "metric components take two indices"));
        }
        let skip_unordered = pattern_has_var(indices);
        let mut env = Env::new();
        let mut resolved = Vec::new();
        enumerate_pattern(indices, 0, n, &mut env, &mut resolved, &mut |env, r| {
            let (i, j) = (r[0], r[1]);
            if skip_unordered && i > j {
                return Ok(());
            }
            let (i, j) = (i.min(j), i.max(j));
            if grid[i][j].is_some() {
                return Err(Diag::new(
                    value.pos(),
                    format!("component [{i} {j}] given twice"),
                ));
            }
            let e = lower_expr(model, value, env)?;
            grid[i][j] = Some(e.clone());
            if i != j {
                grid[j][i] = Some(e);
            }
            Ok(())
        })?;
    }
    let dense: Vec<Vec<Expr>> = grid
        .into_iter()
        .map(|row| row.into_iter().map(|c| c.unwrap_or_else(Expr::zero)).collect())
        .collect();
    table
        .insert(model, ext, dense)
        .map_err(|e| Diag::new(v.pos, e.to_string()))
}

/// Describe a declared field for listings: name, kind, role, weight.
pub fn field_summary(model: &ModelSpec, f: FieldId) -> String {
    let b = model.bundle(f);
    let kind = match b.kind {
        BundleKind::Scalar => "scalar".to_string(),
        BundleKind::Metric => "metric".to_string(),
        BundleKind::Distortion => "distortion".to_string(),
        BundleKind::Tensor { up, down } => format!("tensor({up},{down})"),
    };
    let role = if b.external {
        let w = b.weight.map(exp_to_string).unwrap_or_default();
        format!("external weight={w}")
    } else if b.background {
        "background".to_string()
    } else {
        "matter".to_string()
    };
    format!("{} : {kind} {role}", b.name)
}
