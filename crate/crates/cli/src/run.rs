use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use mfunc::cache::load_or_build;
use mfunc::charfn::{
    decay_probe_with, fit_decay_exponent, plan_truncation, CharFnEvaluator, CharFnGrid, EvalPoint, GridSpec,
    QuadOptions, Regime, TruncationPlan,
};
use mfunc::discrepancy::{
    density_bound_1d, density_bounds_2d, empirical_discrepancy, esseen_bound_1d, esseen_terms_2d, make_family,
    WeightScheme,
};
use mfunc::hecke::{coeff_transform, expand_product};
use mfunc::inversion::{invert_setup, prepare_inversion_with, InversionOptions, InversionSetup, RadiusChoice, Window};
use mfunc::measures::MeasureFamily;
use mfunc::moments::{cumulants_of_r_y, moment_2k};
use mfunc::sampling::{summarize, Sampler};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{
    CharfnArgs, Cli, Command, DensityArgs, DiscrepancyArgs, HeckeOp, MomentsArgs, PointArgs, ProbeArgs, ReplayArgs,
    SampleArgs,
};
use crate::output::{fmt_f, sidecar_path, write_json, write_sidecar, Csv};

/// Usage problems found by the front end itself.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

struct Context_ {
    family: MeasureFamily,
    s: EvalPoint,
}

fn point(args: &PointArgs) -> Result<Context_> {
    let s = EvalPoint::new(args.sigma, args.t)?;
    let family = MeasureFamily::from_str(&args.measure)?;
    Ok(Context_ { family, s })
}

fn evaluator(cli: &Cli, family: &MeasureFamily, plan: &TruncationPlan) -> Result<CharFnEvaluator> {
    let quad = QuadOptions { base_order: plan.quad_order, ..QuadOptions::default() };
    match &cli.cache_dir {
        Some(dir) => {
            let (ev, status) = load_or_build(dir, family, plan, &quad)?;
            log::info!("evaluator cache: {status:?}");
            Ok(ev)
        }
        None => Ok(CharFnEvaluator::with_options(family, plan, &quad)?),
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let started = Instant::now();
    match &cli.command {
        Command::Charfn(a) => charfn(cli, a, started),
        Command::Density(a) => density(cli, a, started),
        Command::Sample(a) => sample(cli, a, started),
        Command::Moments(a) => moments(cli, a, started),
        Command::Discrepancy(a) => discrepancy(cli, a, started),
        Command::ProbeDecay(a) => probe_decay(cli, a, started),
        Command::Hecke { op } => hecke(op),
        Command::Replay(a) => replay(a),
    }
}

fn inversion_options(cli: &Cli, points: usize) -> InversionOptions {
    let mut opts = InversionOptions { points, ..InversionOptions::default() };
    if let Some(tol) = cli.tol {
        opts.tail_tol = tol;
    }
    opts
}

/// What `density --charfn` needs besides the grid values.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SetupMeta {
    s: EvalPoint,
    plan: Option<TruncationPlan>,
    radius: RadiusChoice,
    windows: Vec<Window>,
    points: usize,
}

fn grid_csv(grid: &CharFnGrid) -> Csv {
    let mut csv = Csv::new(&["re_z", "im_z", "re_lambda", "im_lambda", "abs_err"]);
    for (iy, &y) in grid.ys.iter().enumerate() {
        for (ix, &x) in grid.xs.iter().enumerate() {
            let v = grid.at(ix, iy);
            csv.row(&[fmt_f(x), fmt_f(y), fmt_f(v.re), fmt_f(v.im), fmt_f(grid.error_at(ix, iy))]);
        }
    }
    csv
}

fn charfn(cli: &Cli, a: &CharfnArgs, started: Instant) -> Result<()> {
    let ctx = point(&a.point)?;
    if a.for_density {
        let opts = inversion_options(cli, a.points);
        let setup = prepare_inversion_with(&ctx.family, ctx.s, &opts, |plan| {
            evaluator(cli, &ctx.family, plan).map_err(|e| match e.downcast::<mfunc::MfnError>() {
                Ok(m) => m,
                Err(other) => mfunc::MfnError::Config(other.to_string()),
            })
        })?;
        grid_csv(&setup.char_grid).write(&a.out)?;
        let meta = SetupMeta {
            s: ctx.s,
            plan: setup.char_grid.plan.clone(),
            radius: setup.radius,
            windows: setup.windows.clone(),
            points: a.points,
        };
        return write_sidecar(&a.out, cli, json!({ "setup": meta, "grid_points": setup.char_grid.values.len() }), started);
    }
    let tol = cli.tol.unwrap_or(1e-8);
    let spec = GridSpec::new(a.rmax, a.points)?;
    let radius = match ctx.s.regime() {
        Regime::OneD => spec.rmax,
        Regime::TwoD => spec.rmax * 2f64.sqrt(),
    };
    let plan = plan_truncation(ctx.s, &ctx.family, radius, tol)?;
    let ev = evaluator(cli, &ctx.family, &plan)?;
    let ys = match ctx.s.regime() {
        Regime::OneD => vec![0.0],
        Regime::TwoD => spec.axis(),
    };
    let grid = CharFnGrid::from_evaluator(&ev, spec.axis(), ys)?;
    grid_csv(&grid).write(&a.out)?;
    let max_err = grid.errors.iter().cloned().fold(0.0, f64::max);
    let details = json!({
        "p_max": plan.p_max,
        "quad_order": plan.quad_order,
        "tail_bound": plan.tail_bound,
        "max_abs_z": plan.max_abs_z,
        "series_cutoff": plan.series_cutoff,
        "max_abs_err": max_err,
        "unconverged_primes": ev.unconverged(),
    });
    write_sidecar(&a.out, cli, details, started)
}

fn parse_f(field: Option<&str>, line: usize) -> Result<f64> {
    let text = field.ok_or_else(|| anyhow!(mfunc::MfnError::Parse(format!("line {line}: missing column"))))?;
    text.trim()
        .parse()
        .map_err(|_| anyhow!(mfunc::MfnError::Parse(format!("line {line}: '{text}' is not a number"))))
}

fn read_setup(path: &Path) -> Result<InversionSetup> {
    let side: Value = serde_json::from_str(&fs::read_to_string(sidecar_path(path)).context("reading the charfn sidecar")?)
        .map_err(|e| mfunc::MfnError::Parse(e.to_string()))?;
    let meta: SetupMeta = serde_json::from_value(side["details"]["setup"].clone())
        .map_err(|_| usage("the charfn file was not written with --for-density"))?;
    let mut reader = csv::Reader::from_path(path).map_err(|e| mfunc::MfnError::Parse(e.to_string()))?;
    let (mut xs, mut ys, mut values, mut errors) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| mfunc::MfnError::Parse(e.to_string()))?;
        let f = |k: usize| parse_f(rec.get(k), i + 2);
        let (x, y) = (f(0)?, f(1)?);
        if ys.last() != Some(&y) {
            ys.push(y);
        }
        if ys.len() == 1 {
            xs.push(x);
        }
        values.push(Complex64::new(f(2)?, f(3)?));
        errors.push(f(4)?);
    }
    if values.len() != xs.len() * ys.len() || xs.is_empty() {
        bail!(mfunc::MfnError::Parse("the charfn grid is not rectangular".into()));
    }
    let char_grid = CharFnGrid { s: meta.s, xs, ys, values, errors, plan: meta.plan };
    Ok(InversionSetup { char_grid, radius: meta.radius, windows: meta.windows })
}

fn density(cli: &Cli, a: &DensityArgs, started: Instant) -> Result<()> {
    let ctx = point(&a.point)?;
    let opts = inversion_options(cli, a.points);
    let setup = match &a.charfn {
        Some(path) => {
            let setup = read_setup(path)?;
            if setup.char_grid.s != ctx.s {
                bail!(usage("the charfn file was computed at a different s"));
            }
            setup
        }
        None => prepare_inversion_with(&ctx.family, ctx.s, &opts, |plan| {
            evaluator(cli, &ctx.family, plan).map_err(|e| match e.downcast::<mfunc::MfnError>() {
                Ok(m) => m,
                Err(other) => mfunc::MfnError::Config(other.to_string()),
            })
        })?,
    };
    let d = invert_setup(&setup, &opts)?;
    let mut csv;
    match d.regime {
        Regime::OneD => {
            csv = Csv::new(&["u", "m_value"]);
            for (u, v) in d.us.iter().zip(&d.values) {
                csv.row(&[fmt_f(*u), fmt_f(*v)]);
            }
        }
        Regime::TwoD => {
            csv = Csv::new(&["u", "v", "m_value"]);
            for (jv, v) in d.vs.iter().enumerate() {
                for (ju, u) in d.us.iter().enumerate() {
                    csv.row(&[fmt_f(*u), fmt_f(*v), fmt_f(d.at(ju, jv))]);
                }
            }
        }
    }
    csv.write(&a.out)?;
    let details = json!({
        "error_budget": d.budget,
        "pointwise_error": d.budget.pointwise(),
        "mass_error": d.budget.mass(),
        "mass": d.mass(),
        "min": d.min(),
        "max": d.max(),
        "R": d.radius,
        "p_max": d.p_max,
        "quad_order": setup.char_grid.plan.as_ref().map(|p| p.quad_order),
        "char_step": d.char_step,
        "windows": setup.windows,
        "boundary_modulus": setup.radius.boundary_modulus,
        "from_charfn": a.charfn,
        "seed": cli.seed,
    });
    write_sidecar(&a.out, cli, details, started)
}

fn sample(cli: &Cli, a: &SampleArgs, started: Instant) -> Result<()> {
    let ctx = point(&a.point)?;
    let sampler = match a.p_max {
        Some(p) => Sampler::with_p_max(&ctx.family, ctx.s, p)?,
        None => {
            let plan = plan_truncation(ctx.s, &ctx.family, a.rmax, cli.tol.unwrap_or(1e-3))?;
            Sampler::new(&ctx.family, &plan)?
        }
    };
    let values = sampler.draw_many(cli.seed, a.first_stream, a.n);
    let mut csv = Csv::new(&["index", "re_value", "im_value"]);
    for (k, v) in values.iter().enumerate() {
        csv.row(&[k.to_string(), fmt_f(v.re), fmt_f(v.im)]);
    }
    csv.write(&a.out)?;
    let re: Vec<f64> = values.iter().map(|v| v.re).collect();
    let summary = if a.n >= 2 { Some(summarize(&re)?) } else { None };
    let details = json!({
        "seed": cli.seed,
        "first_stream": a.first_stream,
        "p_max": sampler.p_max(),
        "summary_re": summary.map(|s| json!({
            "n": s.n, "mean": s.mean, "variance": s.variance,
            "se_mean": s.se_mean, "se_variance": s.se_variance, "median": s.median,
        })),
    });
    write_sidecar(&a.out, cli, details, started)
}

fn moments(cli: &Cli, a: &MomentsArgs, started: Instant) -> Result<()> {
    let ctx = point(&a.point)?;
    let table = cumulants_of_r_y(&ctx.family, ctx.s, a.y, a.order)?;
    let cumulants: Vec<Value> = table
        .series
        .iter()
        .filter(|&(i, j, _)| i + j >= 1)
        .map(|(i, j, _)| json!({ "re_order": i, "im_order": j, "value": table.joint(i, j) }))
        .collect();
    let moments: BTreeMap<String, f64> =
        (1..=a.order / 2).map(|k| Ok((format!("{}", 2 * k), moment_2k(&table, k)?))).collect::<Result<_>>()?;
    let doc = json!({
        "sigma": ctx.s.sigma(),
        "t": ctx.s.t(),
        "measure": a.point.measure,
        "Y": a.y,
        "order": a.order,
        "primes": table.primes,
        "kappa": (1..=a.order).map(|j| table.kappa(j)).collect::<Vec<_>>(),
        "joint_cumulants": cumulants,
        "even_moments": moments,
    });
    write_json(&a.out, &doc)?;
    write_sidecar(&a.out, cli, json!({ "primes": table.primes }), started)
}

fn weight_scheme(text: &str) -> Result<WeightScheme> {
    if text == "uniform" {
        return Ok(WeightScheme::Uniform);
    }
    let exponent = text
        .strip_prefix("concentrated:")
        .and_then(|e| e.parse().ok())
        .ok_or_else(|| usage(format!("unknown weight scheme '{text}' (expected uniform or concentrated:<exponent>)")))?;
    Ok(WeightScheme::Concentrated { exponent })
}

fn discrepancy(cli: &Cli, a: &DiscrepancyArgs, started: Instant) -> Result<()> {
    let ctx = point(&a.point)?;
    let scheme = weight_scheme(&a.weights)?;
    let opts = inversion_options(cli, 401);
    let setup = prepare_inversion_with(&ctx.family, ctx.s, &opts, |plan| {
        evaluator(cli, &ctx.family, plan).map_err(|e| match e.downcast::<mfunc::MfnError>() {
            Ok(m) => m,
            Err(other) => mfunc::MfnError::Config(other.to_string()),
        })
    })?;
    let d = invert_setup(&setup, &opts)?;
    let plan = setup.char_grid.plan.clone().ok_or_else(|| anyhow!("inversion grid has no plan"))?;
    let ev = evaluator(cli, &ctx.family, &plan)?;
    let fam = make_family(&ctx.family, &plan, a.family_size, scheme, cli.seed)?;
    let disc = empirical_discrepancy(&fam, &d)?;
    let r = a.radius.unwrap_or(d.radius);
    let (bound, a_values, terms) = match ctx.s.regime() {
        Regime::OneD => {
            let big_a = density_bound_1d(&d)?;
            let g = |u: f64| ev.lambda(Complex64::new(u, 0.0)).map(|v| v.value).unwrap_or(Complex64::new(f64::NAN, 0.0));
            let f = |u: f64| fam.char_fn(Complex64::new(u, 0.0), Complex64::new(u, 0.0));
            let b = esseen_bound_1d(f, g, big_a, r, a.integration_points.unwrap_or(2000))?;
            (b, vec![big_a], Value::Null)
        }
        Regime::TwoD => {
            let (a1, a2) = density_bounds_2d(&d)?;
            let g = |u: f64, v: f64| {
                let z = Complex64::new(u, v);
                ev.eval(z, z.conj()).map(|c| c.value).unwrap_or(Complex64::new(f64::NAN, 0.0))
            };
            let f = |u: f64, v: f64| {
                let z = Complex64::new(u, v);
                fam.char_fn(z, z.conj())
            };
            let t = esseen_terms_2d(f, g, a1, a2, r, a.integration_points.unwrap_or(40))?;
            (t.total(), vec![a1, a2], serde_json::to_value(t)?)
        }
    };
    let doc = json!({
        "discrepancy": disc,
        "esseen_bound": bound,
        "esseen_terms": terms,
        "density_bounds": a_values,
        "family_size": a.family_size,
        "max_weight": fam.max_weight(),
        "R": r,
        "budgets": d.budget,
        "mass_error": d.budget.mass(),
        "dkw_reference": 2.5 / (a.family_size as f64).sqrt(),
        "p_max": plan.p_max,
        "seed": cli.seed,
    });
    write_json(&a.out, &doc)?;
    write_sidecar(&a.out, cli, json!({ "p_max": plan.p_max, "R": r }), started)
}

fn probe_decay(cli: &Cli, a: &ProbeArgs, started: Instant) -> Result<()> {
    let ctx = point(&a.point)?;
    let rmax = a.radii.iter().cloned().fold(0.0, f64::max);
    let plan = plan_truncation(ctx.s, &ctx.family, rmax, cli.tol.unwrap_or(1e-3))?;
    let ev = evaluator(cli, &ctx.family, &plan)?;
    let rows = decay_probe_with(&ev, &a.radii)?;
    let mut csv = Csv::new(&["radius", "max_modulus", "abs_err"]);
    for r in &rows {
        csv.row(&[fmt_f(r.radius), fmt_f(r.max_modulus), fmt_f(r.abs_err)]);
    }
    csv.write(&a.out)?;
    let details = json!({
        "fitted_exponent": fit_decay_exponent(&rows),
        "p_max": plan.p_max,
        "tail_bound": plan.tail_bound,
    });
    write_sidecar(&a.out, cli, details, started)
}

fn hecke(op: &HeckeOp) -> Result<()> {
    match op {
        HeckeOp::Expand { indices } => println!("{}", expand_product(indices)?),
        HeckeOp::Transform { m } => {
            let t = coeff_transform(*m)?;
            let terms: Vec<String> = t.entries.iter().map(|(j, c)| format!("({c})*U_{j}")).collect();
            println!("{}", terms.join(" + "));
        }
    }
    Ok(())
}

fn replay(a: &ReplayArgs) -> Result<()> {
    let side: Value = serde_json::from_str(&fs::read_to_string(&a.sidecar)?).map_err(|e| mfunc::MfnError::Parse(e.to_string()))?;
    let mut cli: Cli =
        serde_json::from_value(side["config"].clone()).map_err(|e| mfunc::MfnError::Parse(format!("sidecar config: {e}")))?;
    if let Some(out) = &a.out {
        let slot: &mut PathBuf = cli.command.out_mut().ok_or_else(|| usage("the recorded command has no output"))?;
        *slot = out.clone();
    }
    if matches!(cli.command, Command::Replay(_)) {
        bail!(usage("a replay sidecar cannot itself be replayed"));
    }
    run(&cli)
}
