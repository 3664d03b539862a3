//! `vartool` — derive and verify variational identities of declared field
//! theories from the command line.
//!
//! Every subcommand loads a model file, runs one derivation or verification,
//! and prints a deterministic report (text, LaTeX, or JSON). Commands that
//! assert an identity exit 0 when it holds, 1 when it fails (the report
//! carries a witness), and 2 on usage or model errors.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use vartool_cli::lower::{lower_model, lower_expr_str, Lowered};
use vartool_cli::parse::parse_model;
use vartool_cli::report::{Doc, Fmt};
use vartool_core::atom::{Atom, FieldId};
use vartool_core::complete::{canonical_completion, ScalingLaw};
use vartool_core::emt::em_tensor;
use vartool_core::expr::Expr;
use vartool_core::geom::einstein_check;
use vartool_core::jet::{
    canonical_lift, check_covariance, density_order, euler_lagrange, first_variation_residual,
    lifted_generator, noether_current, section_substitution, total_derivative, validate_density,
    GeneratorField,
};
use vartool_core::model::{BundleKind, ModelSpec};
use vartool_core::numcheck::{is_zero_numeric, sub_seed};
use vartool_core::render::Renderer;

#[derive(Parser)]
#[command(
    name = "vartool",
    version,
    about = "Symbolic variational calculus for declared field theories"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum FmtArg {
    Text,
    Latex,
    Json,
}

impl From<FmtArg> for Fmt {
    fn from(f: FmtArg) -> Fmt {
        match f {
            FmtArg::Text => Fmt::Text,
            FmtArg::Latex => Fmt::Latex,
            FmtArg::Json => Fmt::Json,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Symbolic,
    Numeric,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum LawArg {
    /// Metric homothety when the source is over the metric, sector scaling
    /// otherwise.
    Auto,
    /// Scale only the fibers of the source's own field.
    Sector,
    /// Metric homothety with the declared external weights.
    Metric,
}

#[derive(Args)]
struct Common {
    /// Model description file (.vl)
    model: PathBuf,
    /// Output format
    #[arg(long, value_enum, default_value_t = FmtArg::Text)]
    format: FmtArg,
    /// Write the report to this file instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for randomized checks (default: $VARTOOL_SEED, then 7)
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Euler-Lagrange forms of a Lagrangian with respect to one field
    El {
        #[command(flatten)]
        common: Common,
        /// Field to vary (default: the only matter field)
        #[arg(long)]
        field: Option<String>,
        /// Lagrangian to use (default: the only one declared)
        #[arg(long)]
        lagrangian: Option<String>,
    },
    /// Check that a Lagrangian is a scalar density under coordinate changes
    Covariance {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lagrangian: Option<String>,
    },
    /// Energy-momentum tensor over the declared backgrounds
    Emt {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lagrangian: Option<String>,
    },
    /// Verify the energy-momentum balance identity
    Balance {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lagrangian: Option<String>,
        /// Verify symbolically or at random jet points
        #[arg(long, value_enum, default_value_t = ModeArg::Symbolic)]
        mode: ModeArg,
        /// Random points per component in numeric mode
        #[arg(long, default_value_t = 64)]
        trials: usize,
        /// Relative tolerance in numeric mode
        #[arg(long, default_value_t = 1e-7)]
        tol: f64,
    },
    /// Noether current of a base vector field (canonically lifted)
    Noether {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lagrangian: Option<String>,
        /// One component expression per dimension, functions of x
        /// (repeat the flag; default: a generic symbolic generator)
        #[arg(long, allow_hyphen_values = true)]
        xi: Vec<String>,
    },
    /// Reconstruct a Lagrangian from a source form and report the defect
    Complete {
        #[command(flatten)]
        common: Common,
        /// Source form to complete (default: the only one declared)
        #[arg(long)]
        source: Option<String>,
        #[arg(long, value_enum, default_value_t = LawArg::Auto)]
        law: LawArg,
    },
    /// Compare the metric Euler-Lagrange forms of the curvature density
    /// against the curvature oracle and its contracted divergence
    EinsteinCheck {
        #[command(flatten)]
        common: Common,
        /// Random jet points to check (dimension three and higher)
        #[arg(long, default_value_t = 20)]
        points: usize,
        /// Relative tolerance against the oracle
        #[arg(long, default_value_t = 1e-9)]
        tol_match: f64,
        /// Tolerance for the contracted divergence
        #[arg(long, default_value_t = 1e-7)]
        tol_bianchi: f64,
    },
    /// Evaluate a Lagrangian on a declared section of the fields
    SectionEval {
        #[command(flatten)]
        common: Common,
        /// Section to substitute
        #[arg(long)]
        section: String,
        #[arg(long)]
        lagrangian: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("vartool: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Command) -> Result<u8, String> {
    match cmd {
        Command::El { common, field, lagrangian } => el(common, field, lagrangian),
        Command::Covariance { common, lagrangian } => covariance(common, lagrangian),
        Command::Emt { common, lagrangian } => emt_cmd(common, lagrangian),
        Command::Balance { common, lagrangian, mode, trials, tol } => {
            balance(common, lagrangian, mode, trials, tol)
        }
        Command::Noether { common, lagrangian, xi } => noether(common, lagrangian, xi),
        Command::Complete { common, source, law } => complete(common, source, law),
        Command::EinsteinCheck { common, points, tol_match, tol_bianchi } => {
            einstein(common, points, tol_match, tol_bianchi)
        }
        Command::SectionEval { common, section, lagrangian } => {
            section_eval(common, section, lagrangian)
        }
    }
}

fn load(path: &Path) -> Result<(Lowered, String), String> {
    let shown = path.display().to_string();
    let src = fs::read_to_string(path).map_err(|e| format!("{shown}: {e}"))?;
    let ast = parse_model(&src).map_err(|d| format!("{shown}:{d}"))?;
    let low = lower_model(&ast).map_err(|d| format!("{shown}:{d}"))?;
    Ok((low, shown))
}

fn effective_seed(flag: Option<u64>) -> u64 {
    flag.or_else(|| {
        std::env::var("VARTOOL_SEED")
            .ok()
            .and_then(|s| s.parse().ok())
    })
    .unwrap_or(7)
}

fn finish(doc: &Doc, common: &Common) -> Result<u8, String> {
    let s = doc.render(common.format.into());
    match &common.out {
        Some(p) => fs::write(p, s).map_err(|e| format!("{}: {e}", p.display()))?,
        None => print!("{s}"),
    }
    Ok(if doc.pass() { 0 } else { 1 })
}

fn pick_lagrangian<'l>(
    low: &'l Lowered,
    name: Option<&str>,
) -> Result<(&'l str, &'l Expr), String> {
    match name {
        Some(n) => low
            .lagrangians
            .iter()
            .find(|(ln, _)| ln == n)
            .map(|(ln, e)| (ln.as_str(), e))
            .ok_or_else(|| format!("no Lagrangian named `{n}` (available: {})", names(low.lagrangians.iter().map(|(n, _)| n.as_str())))),
        None => match low.lagrangians.as_slice() {
            [] => Err("the model declares no Lagrangian".to_string()),
            [(n, e)] => Ok((n.as_str(), e)),
            _ => Err(format!(
                "several Lagrangians declared; pick one with --lagrangian (available: {})",
                names(low.lagrangians.iter().map(|(n, _)| n.as_str()))
            )),
        },
    }
}

fn names<'a>(it: impl Iterator<Item = &'a str>) -> String {
    let v: Vec<&str> = it.collect();
    if v.is_empty() {
        "none".to_string()
    } else {
        v.join(", ")
    }
}

fn pick_field(low: &Lowered, name: Option<&str>) -> Result<FieldId, String> {
    let model = &low.model;
    match name {
        Some(n) => model
            .field(n)
            .map_err(|_| format!("no field named `{n}`")),
        None => {
            let matter: Vec<FieldId> = model
                .field_ids()
                .filter(|f| {
                    let b = model.bundle(*f);
                    !b.background && !b.external && !b.parameter
                })
                .collect();
            match matter.as_slice() {
                [f] => Ok(*f),
                _ => Err(format!(
                    "pick a field with --field (declared: {})",
                    names(model.field_ids().map(|f| model.bundle(f).name.as_str()))
                )),
            }
        }
    }
}

fn comp_keys(model: &ModelSpec, f: FieldId, comp: u32) -> (String, String) {
    let r = Renderer::new(model);
    let e = Expr::from_atom(model.jet0(f, comp));
    (r.text(&e), r.latex(&e))
}

fn el(common: Common, field: Option<String>, lagrangian: Option<String>) -> Result<u8, String> {
    let (low, shown) = load(&common.model)?;
    let model = &low.model;
    let (lname, lag) = pick_lagrangian(&low, lagrangian.as_deref())?;
    validate_density(model, lag).map_err(|e| e.to_string())?;
    let f = pick_field(&low, field.as_deref())?;
    let els = euler_lagrange(model, lag, f).map_err(|e| e.to_string())?;
    let r = Renderer::new(model);
    let mut doc = Doc::new("el", &shown);
    doc.item(lname, &format!("\\mathcal{{L}}_{{\\mathrm{{{lname}}}}}"), r.text(lag), r.latex(lag));
    for (comp, e) in els.iter().enumerate() {
        let (tk, lk) = comp_keys(model, f, comp as u32);
        doc.item(
            &format!("E[{tk}]"),
            &format!("E\\left[{lk}\\right]"),
            r.text(e),
            r.latex(e),
        );
    }
    finish(&doc, &common)
}

fn covariance(common: Common, lagrangian: Option<String>) -> Result<u8, String> {
    let (low, shown) = load(&common.model)?;
    let model = &low.model;
    let (_, lag) = pick_lagrangian(&low, lagrangian.as_deref())?;
    validate_density(model, lag).map_err(|e| e.to_string())?;
    let rep = check_covariance(model, lag).map_err(|e| e.to_string())?;
    let r = Renderer::new(model);
    let mut doc = Doc::new("covariance", &shown);
    for o in &rep.obstructions {
        let partials: String =
            o.derivs.indices().iter().map(|i| format!("\\partial_{{{i}}}")).collect();
        doc.item(
            &format!("defect[{}]", o.generator_label()),
            &format!("\\delta\\left[{partials}\\xi^{{{}}}\\right]", o.component),
            r.text(&o.coefficient),
            r.latex(&o.coefficient),
        );
    }
    let detail = (!rep.covariant).then(|| {
        format!(
            "{} obstructing coefficient{}",
            rep.obstructions.len(),
            if rep.obstructions.len() == 1 { "" } else { "s" }
        )
    });
    doc.check(
        "scalar density under coordinate changes",
        rep.covariant,
        rep.covariant.then_some(0.0),
        detail,
    );
    finish(&doc, &common)
}

fn emt_cmd(common: Common, lagrangian: Option<String>) -> Result<u8, String> {
    let (low, shown) = load(&common.model)?;
    let model = &low.model;
    let (_, lag) = pick_lagrangian(&low, lagrangian.as_deref())?;
    validate_density(model, lag).map_err(|e| e.to_string())?;
    if model.metric_field().is_none() {
        return Err("the energy-momentum tensor needs a declared metric".to_string());
    }
    let t = em_tensor(model, lag, &low.vary).map_err(|e| e.to_string())?;
    let n = model.dim();
    let r = Renderer::new(model);
    let mut doc = Doc::new("emt", &shown);
    for j in 0..n {
        for i in 0..n {
            doc.item(
                &format!("T^{j}_{i}"),
                &format!("T^{{{j}}}{{}}_{{{i}}}"),
                r.text(&t.mixed[j][i]),
                r.latex(&t.mixed[j][i]),
            );
        }
    }
    for i in 0..n {
        for j in 0..n {
            let mut e = Expr::zero();
            for h in 0..n {
                e = e.add(&model.metric_lowered(j, h).mul(&t.mixed[h][i]));
            }
            doc.item(
                &format!("T_{i}{j}"),
                &format!("T_{{{i}{j}}}"),
                r.text(&e),
                r.latex(&e),
            );
        }
    }
    finish(&doc, &common)
}

fn balance(
    common: Common,
    lagrangian: Option<String>,
    mode: ModeArg,
    trials: usize,
    tol: f64,
) -> Result<u8, String> {
    let (low, shown) = load(&common.model)?;
    let model = &low.model;
    let (_, lag) = pick_lagrangian(&low, lagrangian.as_deref())?;
    validate_density(model, lag).map_err(|e| e.to_string())?;
    let seed = effective_seed(common.seed);
    let mut doc = Doc::new("balance", &shown);
    doc.seed = Some(seed);
    let cov = check_covariance(model, lag).map_err(|e| e.to_string())?;
    doc.check(
        "scalar density under coordinate changes",
        cov.covariant,
        cov.covariant.then_some(0.0),
        (!cov.covariant).then(|| {
            format!(
                "first obstruction against {}",
                cov.obstructions
                    .first()
                    .map(|o| o.generator_label())
                    .unwrap_or_default()
            )
        }),
    );
    if cov.covariant {
        let bal = vartool_core::emt::balance_unchecked(model, lag).map_err(|e| e.to_string())?;
        for (i, res) in bal.residual.iter().enumerate() {
            let label = format!("balance[{i}]");
            match mode {
                ModeArg::Symbolic => {
                    let z = res.is_zero();
                    doc.check(
                        &label,
                        z,
                        z.then_some(0.0),
                        (!z).then(|| format!("nonzero residual with {} terms", res.nterms())),
                    );
                }
                ModeArg::Numeric => {
                    let rep = is_zero_numeric(res, model, trials, tol, sub_seed(seed, i as u64))
                        .map_err(|e| e.to_string())?;
                    let pass = rep.zero && !rep.inconclusive;
                    let detail = if rep.inconclusive {
                        Some("too many trials hit domain errors".to_string())
                    } else {
                        rep.witness.as_ref().map(|w| {
                            format!(
                                "witness value {:.3e} at trial {} (seed {})",
                                w.value, w.trial, w.trial_seed
                            )
                        })
                    };
                    doc.check(&label, pass, Some(rep.max_abs), detail);
                }
            }
        }
    }
    finish(&doc, &common)
}

fn noether(common: Common, lagrangian: Option<String>, xi: Vec<String>) -> Result<u8, String> {
    let (low, shown) = load(&common.model)?;
    let model = &low.model;
    let (_, lag) = pick_lagrangian(&low, lagrangian.as_deref())?;
    validate_density(model, lag).map_err(|e| e.to_string())?;
    let n = model.dim();
    let mut doc = Doc::new("noether", &shown);
    let (ext_model, gen): (ModelSpec, GeneratorField) = if xi.is_empty() {
        let (ext, param) = model.with_parameter_field("xi");
        let gen = lifted_generator(&ext, param).map_err(|e| e.to_string())?;
        (ext, gen)
    } else {
        if xi.len() != n {
            return Err(format!("--xi takes {n} components, found {}", xi.len()));
        }
        let mut comps = Vec::with_capacity(n);
        for (i, src) in xi.iter().enumerate() {
            let e = lower_expr_str(model, src).map_err(|d| format!("--xi component {i}: {d}"))?;
            for a in e.atoms_deep() {
                if !matches!(a, Atom::Base(_)) {
                    return Err(format!(
                        "--xi component {i} may depend only on the base coordinates"
                    ));
                }
            }
            comps.push(e);
        }
        let mut fiber = HashMap::new();
        for f in model.field_ids() {
            if model.bundle(f).parameter {
                continue;
            }
            let lc = canonical_lift(model, f).map_err(|e| e.to_string())?;
            for comp in 0..model.n_components(f) as usize {
                let mut e = Expr::zero();
                for i in 0..n {
                    if !lc.c0[comp][i].is_zero() {
                        e = e.add(&lc.c0[comp][i].mul(&comps[i]));
                    }
                    for j in 0..n {
                        if lc.c1[comp][j][i].is_zero() {
                            continue;
                        }
                        let dxi = total_derivative(model, &comps[i], j).map_err(|e| e.to_string())?;
                        e = e.add(&lc.c1[comp][j][i].mul(&dxi));
                    }
                }
                if !e.is_zero() {
                    fiber.insert((f, comp as u32), e);
                }
            }
        }
        let gen = GeneratorField::new(model, comps, fiber).map_err(|e| e.to_string())?;
        (model.clone(), gen)
    };
    let current = noether_current(&ext_model, lag, &gen).map_err(|e| e.to_string())?;
    let r = Renderer::new(&ext_model);
    for (i, j) in current.iter().enumerate() {
        doc.item(&format!("J^{i}"), &format!("J^{{{i}}}"), r.text(j), r.latex(j));
    }
    let res = first_variation_residual(&ext_model, lag, &gen).map_err(|e| e.to_string())?;
    let z = res.is_zero();
    doc.check(
        "first variation splits into Euler-Lagrange and boundary parts",
        z,
        z.then_some(0.0),
        (!z).then(|| format!("nonzero residual with {} terms", res.nterms())),
    );
    finish(&doc, &common)
}

fn complete(common: Common, source: Option<String>, law: LawArg) -> Result<u8, String> {
    let (low, shown) = load(&common.model)?;
    let model = &low.model;
    let src = match source.as_deref() {
        Some(n) => low
            .sources
            .iter()
            .find(|(sn, _)| sn == n)
            .map(|(_, s)| s)
            .ok_or_else(|| {
                format!(
                    "no source named `{n}` (available: {})",
                    names(low.sources.iter().map(|(n, _)| n.as_str()))
                )
            })?,
        None => match low.sources.as_slice() {
            [(_, s)] => s,
            [] => return Err("the model declares no source form".to_string()),
            _ => {
                return Err(format!(
                    "several sources declared; pick one with --source (available: {})",
                    names(low.sources.iter().map(|(n, _)| n.as_str()))
                ))
            }
        },
    };
    let over_metric = matches!(model.bundle(src.field).kind, BundleKind::Metric);
    let scaling = match law {
        LawArg::Auto if over_metric => {
            Some(ScalingLaw::metric_homothety(model).map_err(|e| e.to_string())?)
        }
        LawArg::Auto | LawArg::Sector => None,
        LawArg::Metric => Some(ScalingLaw::metric_homothety(model).map_err(|e| e.to_string())?),
    };
    let res =
        canonical_completion(model, src, scaling.as_ref(), &low.rules).map_err(|e| e.to_string())?;
    let r = Renderer::new(model);
    let mut doc = Doc::new("complete", &shown);
    doc.item(
        "lagrangian",
        "\\mathcal{L}_{\\varepsilon}",
        r.text(&res.lagrangian),
        r.latex(&res.lagrangian),
    );
    for (comp, e) in res.kappa.components.iter().enumerate() {
        let (tk, lk) = comp_keys(model, src.field, comp as u32);
        doc.item(
            &format!("kappa[{tk}]"),
            &format!("\\kappa\\left[{lk}\\right]"),
            r.text(e),
            r.latex(e),
        );
    }
    finish(&doc, &common)
}

fn einstein(common: Common, points: usize, tol_match: f64, tol_bianchi: f64) -> Result<u8, String> {
    let (low, shown) = load(&common.model)?;
    let model = &low.model;
    let seed = effective_seed(common.seed);
    let rep = einstein_check(model, points, tol_match, tol_bianchi, seed)
        .map_err(|e| e.to_string())?;
    let mut doc = Doc::new("einstein-check", &shown);
    doc.seed = Some(seed);
    match rep.symbolic_zero {
        Some(z) => {
            doc.check(
                "curvature variation vanishes identically in dimension two",
                z,
                z.then_some(0.0),
                None,
            );
        }
        None => {
            doc.check(
                "matches the curvature oracle",
                rep.max_rel_mismatch < tol_match,
                Some(rep.max_rel_mismatch),
                Some(format!("{} points", rep.points_checked)),
            );
            doc.check(
                "contracted divergence vanishes",
                rep.max_bianchi_residual < tol_bianchi,
                Some(rep.max_bianchi_residual),
                None,
            );
        }
    }
    finish(&doc, &common)
}

fn section_eval(common: Common, section: String, lagrangian: Option<String>) -> Result<u8, String> {
    let (low, shown) = load(&common.model)?;
    let model = &low.model;
    let (lname, lag) = pick_lagrangian(&low, lagrangian.as_deref())?;
    validate_density(model, lag).map_err(|e| e.to_string())?;
    let values = low
        .sections
        .iter()
        .find(|(n, _)| n == &section)
        .map(|(_, v)| v)
        .ok_or_else(|| {
            format!(
                "no section named `{section}` (available: {})",
                names(low.sections.iter().map(|(n, _)| n.as_str()))
            )
        })?;
    let order = density_order(lag);
    let map = section_substitution(model, values, order).map_err(|e| e.to_string())?;
    let result = lag.substitute(&map).map_err(|e| e.to_string())?;
    let r = Renderer::new(model);
    let mut doc = Doc::new("section-eval", &shown);
    doc.item(
        lname,
        &format!("\\mathcal{{L}}_{{\\mathrm{{{lname}}}}}"),
        r.text(&result),
        r.latex(&result),
    );
    finish(&doc, &common)
}
