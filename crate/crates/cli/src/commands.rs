use std::path::PathBuf;

use clap::Args;
use domlab::cocycle::{iterate, MAX_ORBIT_LENGTH};
use domlab::entropy::{estimate_topological_entropy, pesin_bound_check, EntropyConfig};
use domlab::grid::{random_points, shifted_grid, uniform_grid};
use domlab::manifold::singular_values;
use domlab::measures::{
    check_delta_recurrence, nonrecurrence_diagnostic, pomega_approx, srb_like_candidates, BoxSet,
};
use domlab::spectra::{
    doubling_schedule, entropy_inequalities, lyapunov_exponents_dir, InequalityConfig, MIN_LYAPUNOV_HORIZON,
};
use domlab::splitting::{check_domination, check_partial_hyperbolicity, estimate_frames, FrameConfig, Verdict};
use domlab::system::{cat_map, gourmelon_potrie, linear_toral, morse_smale_circle, parse_system, product};
use domlab::{SystemSpec, TorusPoint};
use serde::Serialize;
use serde_json::{json, Value};

use crate::report::{
    fmt_f, numbered, to_value, without, CliError, CliResult, Report, Table, EXIT_INCONCLUSIVE, EXIT_OK,
    EXIT_SCENARIO_FAILED,
};
use crate::scenarios::{self, grid_near, ScenarioConfig, SCENARIOS};
use crate::{Builtin, OutputArgs, SystemArgs};

fn parse_matrix(text: &str) -> CliResult<Vec<Vec<i64>>> {
    text.split(';')
        .map(|row| {
            row.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<i64>()
                        .map_err(|_| CliError::Config(format!("--matrix: `{}` is not an integer", v.trim())))
                })
                .collect()
        })
        .collect()
}

pub fn load_system(args: &SystemArgs) -> CliResult<SystemSpec> {
    let spec = match (&args.system, args.builtin) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            parse_system(&text).map_err(|e| CliError::InFile(path.display().to_string(), e))?
        }
        (None, Some(b)) => {
            let matrix = args.matrix.as_deref().map(parse_matrix).transpose()?;
            match b {
                Builtin::Catmap => cat_map(),
                Builtin::Gp => gourmelon_potrie(args.a, args.b)?,
                Builtin::MorseSmale => morse_smale_circle(args.kappa)?,
                Builtin::Product => {
                    let second = match &matrix {
                        Some(m) => linear_toral(m)?,
                        None => cat_map(),
                    };
                    product(&morse_smale_circle(args.kappa)?, &second)?
                }
                Builtin::Linear => {
                    let m = matrix.ok_or_else(|| CliError::Config("--builtin linear needs --matrix".into()))?;
                    linear_toral(&m)?
                }
            }
        }
        (None, None) => return Err(CliError::Config("give --builtin or --system".into())),
    };
    match args.rk4_steps {
        Some(s) => Ok(spec.with_steps(s)?),
        None => Ok(spec),
    }
}

fn bounded(name: &str, v: usize, lo: usize, hi: usize) -> CliResult<()> {
    if v < lo || v > hi {
        return Err(CliError::Config(format!("{name} = {v} outside [{lo}, {hi}]")));
    }
    Ok(())
}

fn positive(name: &str, v: f64) -> CliResult<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(CliError::Config(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

/// A single value applies to every axis.
fn per_axis(name: &str, v: &[usize], dim: usize) -> CliResult<Vec<usize>> {
    let out = match v.len() {
        1 => vec![v[0]; dim],
        n if n == dim => v.to_vec(),
        n => return Err(CliError::Config(format!("{name} has {n} entries for a {dim}-dimensional system"))),
    };
    if out.contains(&0) {
        return Err(CliError::Config(format!("{name} entries must be positive")));
    }
    Ok(out)
}

fn start_point(spec: &SystemSpec, point: &Option<Vec<f64>>, seed: u64) -> CliResult<TorusPoint> {
    match point {
        Some(c) => Ok(spec.point(c.clone())?),
        None => Ok(random_points(spec.periods(), 1, seed).remove(0)),
    }
}

/// Serialized arguments with some entries replaced by their resolved values.
fn resolved(args: impl Serialize, fill: &[(&str, Value)]) -> CliResult<Value> {
    let mut v = to_value(args)?;
    for (k, val) in fill {
        v[*k] = val.clone();
    }
    Ok(v)
}

fn finish(command: &'static str, config: Value, spec: Option<&SystemSpec>, result: Value, out: &OutputArgs) -> CliResult<()> {
    Report::new(command, config, spec.map(|s| s.summary()), result)?.emit(out.out.as_deref())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    /// Starting point, comma separated (seeded random point when omitted).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub point: Option<Vec<f64>>,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Iterate the inverse map.
    #[arg(long)]
    pub backward: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

pub fn simulate(args: &SimulateArgs) -> CliResult<i32> {
    let spec = load_system(&args.system)?;
    bounded("--n", args.n, 1, MAX_ORBIT_LENGTH)?;
    let x = start_point(&spec, &args.point, args.output.seed)?;
    let steps = if args.backward { -(args.n as i64) } else { args.n as i64 };
    let seg = iterate(&spec, &x, steps)?;
    let points: Vec<&[f64]> = seg.points.iter().map(|p| p.coords()).collect();
    if let Some(path) = &args.output.csv {
        let mut header = vec!["step".to_string()];
        header.extend(numbered("x", spec.dim()));
        let mut t = Table::create(path, &header)?;
        for (i, p) in points.iter().enumerate() {
            t.row(std::iter::once(i.to_string()).chain(p.iter().map(|v| fmt_f(*v))))?;
        }
        t.finish()?;
    }
    let result = json!({ "base": x.coords(), "direction": seg.direction, "points": points });
    let config = resolved(args, &[("point", json!(x.coords()))])?;
    finish("simulate", config, Some(&spec), result, &args.output)?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args, Serialize)]
pub struct JacobianArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub point: Option<Vec<f64>>,
    #[command(flatten)]
    pub output: OutputArgs,
}

pub fn jacobian(args: &JacobianArgs) -> CliResult<i32> {
    let spec = load_system(&args.system)?;
    let x = start_point(&spec, &args.point, args.output.seed)?;
    let j = spec.eval_jacobian(&x)?;
    let image = spec.eval_map(&x)?;
    let inverse = spec.eval_inverse_jacobian(&x).ok().map(|m| m.rows());
    if let Some(path) = &args.output.csv {
        let mut header = vec!["row".to_string()];
        header.extend(numbered("c", spec.dim()));
        let mut t = Table::create(path, &header)?;
        for (i, r) in j.rows().iter().enumerate() {
            t.row(std::iter::once((i + 1).to_string()).chain(r.iter().map(|v| fmt_f(*v))))?;
        }
        t.finish()?;
    }
    let result = json!({
        "point": x.coords(),
        "image": image.coords(),
        "jacobian": j.rows(),
        "det": j.det(),
        "singular_values": singular_values(j.as_matrix()),
        "inverse_jacobian": inverse,
    });
    let config = resolved(args, &[("point", json!(x.coords()))])?;
    finish("jacobian", config, Some(&spec), result, &args.output)?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args, Serialize)]
pub struct LyapunovArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub point: Option<Vec<f64>>,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long)]
    pub backward: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

pub fn lyapunov(args: &LyapunovArgs) -> CliResult<i32> {
    let spec = load_system(&args.system)?;
    bounded("--n", args.n, MIN_LYAPUNOV_HORIZON, MAX_ORBIT_LENGTH)?;
    let x = start_point(&spec, &args.point, args.output.seed)?;
    let dir = if args.backward {
        domlab::cocycle::Direction::Backward
    } else {
        domlab::cocycle::Direction::Forward
    };
    let rep = lyapunov_exponents_dir(&spec, &x, args.n, dir)?;
    if let Some(path) = &args.output.csv {
        let mut header = vec!["n".to_string()];
        header.extend(numbered("chi", spec.dim()));
        let mut t = Table::create(path, &header)?;
        for tp in &rep.trace {
            t.row(std::iter::once(tp.n.to_string()).chain(tp.exponents.iter().map(|v| fmt_f(*v))))?;
        }
        t.finish()?;
    }
    let mut result = without(to_value(&rep)?, &["trace"]);
    result["trace_defect"] = json!(rep.trace_defect());
    let config = resolved(args, &[("point", json!(x.coords()))])?;
    finish("lyapunov", config, Some(&spec), result, &args.output)?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args, Serialize)]
pub struct SplittingArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    /// Dimension of the dominating bundle F.
    #[arg(long, default_value_t = 1)]
    pub dim_f: usize,
    /// Frame grid per axis (about 2500 points when omitted).
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<usize>>,
    /// Block length for the domination ratio.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// Initial bundle estimation horizon.
    #[arg(long, default_value_t = 16)]
    pub horizon: usize,
    /// Horizon of the uniform contraction/expansion test; 0 skips it.
    #[arg(long, default_value_t = 32)]
    pub growth: usize,
    #[arg(long, default_value_t = 0.05)]
    pub margin: f64,
    /// Evaluate the essential Lambda-exponent inequalities.
    #[arg(long)]
    pub inequalities: bool,
    #[arg(long, value_delimiter = ',', default_value = "16")]
    pub lambda_grid: Vec<usize>,
    #[arg(long, default_value_t = 1024)]
    pub lambda_n: usize,
    /// Orbit length for the Pesin bound check; omitted skips it.
    #[arg(long)]
    pub pesin: Option<usize>,
    #[arg(long, default_value_t = 100)]
    pub pesin_points: usize,
    #[arg(long, default_value_t = 0.02)]
    pub tolerance: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

pub fn splitting(args: &SplittingArgs) -> CliResult<i32> {
    let spec = load_system(&args.system)?;
    let d = spec.dim();
    bounded("--dim-f", args.dim_f, 1, d.saturating_sub(1).max(1))?;
    bounded("--k", args.k, 1, 64)?;
    bounded("--horizon", args.horizon, 1, 4096)?;
    bounded("--growth", args.growth, 0, 4096)?;
    bounded("--lambda-n", args.lambda_n, 1, MAX_ORBIT_LENGTH)?;
    bounded("--pesin-points", args.pesin_points, 1, 1_000_000)?;
    positive("--tolerance", args.tolerance)?;
    if args.pesin.is_some() && args.growth < 2 {
        return Err(CliError::Config("--pesin needs --growth >= 2".into()));
    }
    let grid = match &args.grid {
        Some(g) => per_axis("--grid", g, d)?,
        None => grid_near(d, 2500),
    };
    let lambda_grid = per_axis("--lambda-grid", &args.lambda_grid, d)?;
    let frame_cfg = FrameConfig::new(args.dim_f).with_horizon(args.horizon);

    let set = estimate_frames(&spec, &uniform_grid(spec.periods(), &grid)?, &frame_cfg)?;
    let cert = check_domination(&spec, &set, args.k)?;
    let mut result = json!({
        "frames": set.frames.len(),
        "excluded": set.failures.iter().map(|(p, e)| json!({ "point": p.coords(), "reason": e.to_string() })).collect::<Vec<_>>(),
        "max_frame_horizon": set.frames.iter().map(|f| f.horizon).max(),
        "domination": without(to_value(&cert)?, &["samples"]),
    });
    if args.growth >= 2 && !set.frames.is_empty() {
        let hyp = check_partial_hyperbolicity(&spec, &set, args.growth, args.margin)?;
        if let Some(n) = args.pesin {
            let points = shifted_grid(spec.periods(), &grid_near(d, args.pesin_points), args.output.seed)?;
            let check = pesin_bound_check(&spec, &hyp, &frame_cfg, &points, n, args.tolerance)?;
            result["pesin"] = without(to_value(&check)?, &["bounds"]);
        }
        result["hyperbolicity"] = without(to_value(&hyp)?, &["samples"]);
    }
    if args.inequalities && cert.verdict == Verdict::Certified {
        let cfg = InequalityConfig {
            n: args.lambda_n,
            seed: args.output.seed,
            margin: args.margin,
        };
        let (report, lambdas) = entropy_inequalities(&spec, &cert, &frame_cfg, &lambda_grid, &cfg)?;
        result["inequalities"] = to_value(&report)?;
        result["lambda"] = Value::Array(
            lambdas
                .iter()
                .map(|l| Ok(without(to_value(l)?, &["samples"])))
                .collect::<CliResult<_>>()?,
        );
    }
    if let Some(path) = &args.output.csv {
        let mut header = numbered("x", d);
        header.push("ratio".into());
        let mut t = Table::create(path, &header)?;
        for s in &cert.samples {
            t.row(s.point.iter().map(|v| fmt_f(*v)).chain(std::iter::once(fmt_f(s.ratio))))?;
        }
        t.finish()?;
    }
    let config = resolved(args, &[("grid", json!(grid)), ("lambda_grid", json!(lambda_grid))])?;
    finish("splitting", config, Some(&spec), result, &args.output)?;
    Ok(if cert.verdict == Verdict::Certified { EXIT_OK } else { EXIT_INCONCLUSIVE })
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args, Serialize)]
pub struct EntropyArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.1,0.05")]
    pub eps: Vec<f64>,
    #[arg(long, default_value_t = 12)]
    pub n_max: usize,
    /// Leading horizons left out of the fit.
    #[arg(long, default_value_t = 2)]
    pub drop: usize,
    /// Seed grid per axis (largest isotropic grid within --max-seeds when omitted).
    #[arg(long, value_delimiter = ',')]
    pub resolution: Option<Vec<usize>>,
    #[arg(long, default_value_t = 250_000)]
    pub max_seeds: usize,
    #[arg(long, default_value_t = 0.1)]
    pub saturation: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

pub fn entropy(args: &EntropyArgs) -> CliResult<i32> {
    let spec = load_system(&args.system)?;
    bounded("--n-max", args.n_max, 2, 1000)?;
    bounded("--drop", args.drop, 0, args.n_max.saturating_sub(2))?;
    if !(args.saturation > 0.0 && args.saturation <= 1.0) {
        return Err(CliError::Config(format!("--saturation must be in (0, 1], got {}", args.saturation)));
    }
    let mut cfg = EntropyConfig {
        epsilons: args.eps.clone(),
        n_max: args.n_max,
        drop: args.drop,
        resolution: args.resolution.as_deref().map(|r| per_axis("--resolution", r, spec.dim())).transpose()?,
        grid_seed: args.output.seed,
        max_seeds: args.max_seeds,
        saturation_fraction: args.saturation,
        ..Default::default()
    };
    cfg.resolution = Some(cfg.resolution_for(spec.dim()));
    let est = estimate_topological_entropy(&spec, &cfg)?;
    if let Some(path) = &args.output.csv {
        let header: Vec<String> = ["eps", "n", "count", "log_count"].map(String::from).into();
        let mut t = Table::create(path, &header)?;
        for (eps, counts) in est.epsilons.iter().zip(&est.counts) {
            for (i, c) in counts.iter().enumerate() {
                t.row([fmt_f(*eps), (i + 1).to_string(), c.to_string(), fmt_f((*c as f64).ln())])?;
            }
        }
        t.finish()?;
    }
    let config = json!({ "system": to_value(&args.system)?, "seed": args.output.seed, "entropy": cfg });
    finish("entropy", config, Some(&spec), to_value(&est)?, &args.output)?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args, Serialize)]
pub struct RecurrenceArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    /// Box set CSV (see `BoxSet` export format).
    #[arg(long, conflicts_with = "cells")]
    pub boxes: Option<PathBuf>,
    /// Box indices (first axis varying slowest) at --box-resolution.
    #[arg(long, value_delimiter = ',')]
    pub cells: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', default_value = "10")]
    pub box_resolution: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    pub n_min: usize,
    #[arg(long, default_value_t = 200)]
    pub n_max: usize,
    /// Samples per box and axis.
    #[arg(long, default_value_t = 3)]
    pub per_axis: usize,
    /// Run the volume-rate non-recurrence diagnostic instead.
    #[arg(long)]
    pub diagnostic: bool,
    /// Volume contraction rate threshold of the diagnostic.
    #[arg(long, default_value_t = 0.1)]
    pub rate: f64,
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

pub fn recurrence(args: &RecurrenceArgs) -> CliResult<i32> {
    let spec = load_system(&args.system)?;
    bounded("--n-max", args.n_max, 1, MAX_ORBIT_LENGTH)?;
    bounded("--n-min", args.n_min, 1, args.n_max)?;
    bounded("--per-axis", args.per_axis, 1, 64)?;
    let resolution = per_axis("--box-resolution", &args.box_resolution, spec.dim())?;
    let seed = args.output.seed;
    let result = if args.diagnostic {
        positive("--rate", args.rate)?;
        if !(args.delta > 0.0 && args.delta < 1.0) {
            return Err(CliError::Config(format!("--delta must be in (0, 1), got {}", args.delta)));
        }
        let diag = nonrecurrence_diagnostic(&spec, args.rate, args.delta, args.n_max, &resolution, args.per_axis, seed)?;
        if let Some(path) = &args.output.csv {
            let header: Vec<String> = ["n", "lebesgue"].map(String::from).into();
            let mut t = Table::create(path, &header)?;
            for c in &diag.cover {
                t.row([c.n.to_string(), fmt_f(c.lebesgue)])?;
            }
            t.finish()?;
        }
        to_value(&diag)?
    } else {
        let set = match (&args.boxes, &args.cells) {
            (Some(path), _) => {
                let file =
                    std::fs::File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                let set = BoxSet::read_csv(std::io::BufReader::new(file))
                    .map_err(|e| CliError::InFile(path.display().to_string(), e))?;
                if set.periods() != spec.periods() {
                    return Err(CliError::Config(format!(
                        "box set periods {:?} do not match the system periods {:?}",
                        set.periods(),
                        spec.periods()
                    )));
                }
                set
            }
            (None, Some(cells)) => BoxSet::new(spec.periods(), &resolution, cells.iter().copied())?,
            (None, None) => return Err(CliError::Config("give --boxes, --cells or --diagnostic".into())),
        };
        let rep = check_delta_recurrence(&spec, &set, args.n_min, args.n_max, args.per_axis, seed)?;
        if let Some(path) = &args.output.csv {
            let header: Vec<String> = ["n", "returned"].map(String::from).into();
            let mut t = Table::create(path, &header)?;
            let hits: std::collections::BTreeSet<usize> = rep.hits.iter().map(|h| h.n).collect();
            for n in rep.n_min..=rep.n_max {
                t.row([n.to_string(), u8::from(hits.contains(&n)).to_string()])?;
            }
            t.finish()?;
        }
        let mut v = to_value(&rep)?;
        v["hit_fraction"] = json!(rep.hit_fraction());
        v
    };
    let config = resolved(args, &[("box_resolution", json!(resolution))])?;
    finish("recurrence", config, Some(&spec), result, &args.output)?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args, Serialize)]
pub struct SrbArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    /// Starting grid per axis.
    #[arg(long, value_delimiter = ',', default_value = "20")]
    pub grid: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Basin radius in the box-histogram distance.
    #[arg(long, default_value_t = 0.1)]
    pub eps: f64,
    /// Histogram boxes per axis.
    #[arg(long, value_delimiter = ',', default_value = "10")]
    pub resolution: Vec<usize>,
    /// Single-linkage clustering threshold.
    #[arg(long, default_value_t = domlab::measures::DEFAULT_CLUSTER_THRESHOLD)]
    pub theta: f64,
    /// Also report limit points of the empirical measures of this point.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub point: Option<Vec<f64>>,
    #[command(flatten)]
    pub output: OutputArgs,
}

pub fn srb(args: &SrbArgs) -> CliResult<i32> {
    let spec = load_system(&args.system)?;
    let d = spec.dim();
    bounded("--n", args.n, 1, MAX_ORBIT_LENGTH)?;
    positive("--eps", args.eps)?;
    positive("--theta", args.theta)?;
    let grid = per_axis("--grid", &args.grid, d)?;
    let resolution = per_axis("--resolution", &args.resolution, d)?;
    let points = shifted_grid(spec.periods(), &grid, args.output.seed)?;
    let rep = srb_like_candidates(&spec, &points, args.n, args.eps, &resolution, args.theta)?;
    let pomega = match &args.point {
        Some(c) => {
            let x = spec.point(c.clone())?;
            Some(pomega_approx(&spec, &x, &doubling_schedule(args.n), &resolution, args.theta)?)
        }
        None => None,
    };
    if let Some(path) = &args.output.csv {
        let header: Vec<String> = ["candidate", "box", "weight"].map(String::from).into();
        let mut t = Table::create(path, &header)?;
        for (i, c) in rep.candidates.iter().enumerate() {
            for (b, w) in c.representative.weights.iter().enumerate().filter(|(_, w)| **w > 0.0) {
                t.row([i.to_string(), b.to_string(), fmt_f(*w)])?;
            }
        }
        t.finish()?;
    }
    let result = json!({ "srb": rep, "pomega": pomega });
    let config = resolved(args, &[("grid", json!(grid)), ("resolution", json!(resolution))])?;
    finish("srb", config, Some(&spec), result, &args.output)?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    /// One of: thm2-catmap, thm4-product, sec71-nonrecurrence,
    /// sec72-gp-zero-entropy, sec72-gp-domination, thm218-robustness.
    pub scenario: String,
    /// Frame grid per axis for sec72-gp-domination.
    #[arg(long, default_value_t = 200)]
    pub grid: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

pub fn verify(args: &VerifyArgs) -> CliResult<i32> {
    bounded("--grid", args.grid, 2, 2000)?;
    let cfg = ScenarioConfig {
        seed: args.output.seed,
        gp_grid: args.grid,
    };
    let Some(outcome) = scenarios::run(&args.scenario, &cfg)? else {
        return Err(CliError::Config(format!(
            "unknown scenario `{}`; valid names: {}",
            args.scenario,
            SCENARIOS.join(", ")
        )));
    };
    for c in &outcome.checks {
        println!("{}", c.line());
    }
    println!("{}  {}", if outcome.pass { "PASS" } else { "FAIL" }, outcome.scenario);
    if args.output.out.is_some() {
        finish("verify", to_value(&cfg)?, None, to_value(&outcome)?, &args.output)?;
    }
    Ok(if outcome.pass { EXIT_OK } else { EXIT_SCENARIO_FAILED })
}
