//! Lyapunov exponents, volume (Lambda) exponents along invariant bundles and
//! the sufficient conditions for positive entropy built from them.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::cocycle::{CocycleWalker, Direction};
use crate::error::{Error, Result};
use crate::grid::shifted_grid;
use crate::manifold::TorusPoint;
use crate::splitting::{estimate_bundles_with, frames_along, DominationCertificate, FrameConfig, Verdict};
use crate::system::{SystemSpec, MAX_DIM};

/// Exponents at one intermediate horizon.
#[derive(Debug, Clone, Serialize)]
pub struct TracePoint {
    pub n: usize,
    pub exponents: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LyapunovReport {
    pub at: TorusPoint,
    pub n: usize,
    pub direction: Direction,
    /// Descending.
    pub exponents: Vec<f64>,
    /// `(1/n) log |det Df^n(x)|` from the step determinants, independent of
    /// the QR accumulators.
    pub volume_exponent: f64,
    pub trace: Vec<TracePoint>,
}

impl LyapunovReport {
    /// `|sum of exponents - volume exponent|`.
    pub fn trace_defect(&self) -> f64 {
        (self.exponents.iter().sum::<f64>() - self.volume_exponent).abs()
    }
}

pub const MIN_LYAPUNOV_HORIZON: usize = 10;

pub fn lyapunov_exponents(spec: &SystemSpec, x: &TorusPoint, n: usize) -> Result<LyapunovReport> {
    lyapunov_exponents_dir(spec, x, n, Direction::Forward)
}

/// Exponents of `f` or, for [`Direction::Backward`], of `f^{-1}`.
pub fn lyapunov_exponents_dir(
    spec: &SystemSpec,
    x: &TorusPoint,
    n: usize,
    direction: Direction,
) -> Result<LyapunovReport> {
    spec.check_point(x)?;
    if n < MIN_LYAPUNOV_HORIZON {
        return Err(Error::Domain(format!(
            "Lyapunov horizon must be at least {MIN_LYAPUNOV_HORIZON}, got {n}"
        )));
    }
    let d = spec.dim();
    let mut walker = CocycleWalker::new(spec, x.coords(), &DMatrix::identity(d, d), direction)?;
    let mut next = [0.0; MAX_DIM];
    let mut jac = [0.0; MAX_DIM * MAX_DIM];
    let mut log_det = 0.0;
    let mut trace = Vec::new();
    let mut checkpoint = 1;
    for m in 1..=n {
        let cur = walker.point().to_vec();
        match direction {
            Direction::Forward => spec.map_jacobian_raw(&cur, &mut next[..d], &mut jac[..d * d])?,
            Direction::Backward => spec.inverse_jacobian_raw(&cur, &mut next[..d], &mut jac[..d * d])?,
        }
        let j = DMatrix::from_row_slice(d, d, &jac[..d * d]);
        log_det += j.determinant().abs().ln();
        walker.apply(&j, &next[..d])?;
        if m == checkpoint || m == n {
            trace.push(TracePoint {
                n: m,
                exponents: sorted_rates(walker.log_diag(), m),
            });
            checkpoint *= 2;
        }
    }
    if !log_det.is_finite() {
        return Err(Error::NonFinite(format!("log |det Df^{n}| at {:?}", x.coords())));
    }
    Ok(LyapunovReport {
        at: x.clone(),
        n,
        direction,
        exponents: sorted_rates(walker.log_diag(), n),
        volume_exponent: log_det / n as f64,
        trace,
    })
}

fn sorted_rates(log_diag: &[f64], n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = log_diag.iter().map(|l| l / n as f64).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Bundle along which volume growth is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Bundle {
    #[serde(rename = "TM")]
    Tangent,
    E,
    F,
}

impl Bundle {
    pub fn label(self) -> &'static str {
        match self {
            Bundle::Tangent => "TM",
            Bundle::E => "E",
            Bundle::F => "F",
        }
    }
}

/// `1, 2, 4, ...` up to `n`, with `n` itself appended when it is not a power
/// of two.
pub fn doubling_schedule(n: usize) -> Vec<usize> {
    let mut s = Vec::new();
    let mut m = 1;
    while m <= n {
        s.push(m);
        m *= 2;
    }
    if s.last() != Some(&n) && n > 0 {
        s.push(n);
    }
    s
}

/// Finite-horizon volume growth rates `s_m = (1/m) log |det Df^m|_G(x)|`.
#[derive(Debug, Clone, Serialize)]
pub struct LambdaSequence {
    pub point: Vec<f64>,
    pub horizons: Vec<usize>,
    pub values: Vec<f64>,
    /// Maximum over the final half of the schedule.
    pub limsup: f64,
}

fn tail_max(values: &[f64]) -> f64 {
    let start = values.len() / 2;
    values[start..].iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `log |det Df^m(x)|` (or of `Df^{-m}`) for `m = 1..=n`.
pub(crate) fn full_log_volumes(spec: &SystemSpec, x: &[f64], n: usize, direction: Direction) -> Result<Vec<f64>> {
    let d = spec.dim();
    let mut cur = x.to_vec();
    let mut next = [0.0; MAX_DIM];
    let mut jac = [0.0; MAX_DIM * MAX_DIM];
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        match direction {
            Direction::Forward => spec.map_jacobian_raw(&cur, &mut next[..d], &mut jac[..d * d])?,
            Direction::Backward => spec.inverse_jacobian_raw(&cur, &mut next[..d], &mut jac[..d * d])?,
        }
        acc += DMatrix::from_row_slice(d, d, &jac[..d * d]).determinant().abs().ln();
        out.push(acc);
        cur.copy_from_slice(&next[..d]);
    }
    Ok(out)
}

/// Lambda-exponent sequence of `bundle` at `x`. `cfg` selects `dim F` and
/// the bundle estimation settings; it is ignored for the tangent bundle.
pub fn lambda_exponent(
    spec: &SystemSpec,
    x: &TorusPoint,
    bundle: Bundle,
    direction: Direction,
    n: usize,
    cfg: &FrameConfig,
) -> Result<LambdaSequence> {
    spec.check_point(x)?;
    if n == 0 {
        return Err(Error::Domain("Lambda horizon must be at least 1".into()));
    }
    let volumes = match bundle {
        Bundle::Tangent => full_log_volumes(spec, x.coords(), n, direction)?,
        Bundle::E | Bundle::F => {
            let frame = estimate_bundles_with(spec, x, cfg)?;
            let of = frames_along(spec, &frame, n, direction)?;
            // the bundle dominant in the segment's direction is pushed, the
            // other one pulled back from the far end
            let pushed = matches!(
                (bundle, direction),
                (Bundle::F, Direction::Forward) | (Bundle::E, Direction::Backward)
            );
            if pushed {
                of.pushed_log_volumes()
            } else {
                of.pulled_log_volumes()
            }
        }
    };
    let horizons = doubling_schedule(n);
    let values: Vec<f64> = horizons.iter().map(|&m| volumes[m - 1] / m as f64).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "Lambda sequence of {} at {:?}",
            bundle.label(),
            x.coords()
        )));
    }
    Ok(LambdaSequence {
        point: x.coords().to_vec(),
        limsup: tail_max(&values),
        horizons,
        values,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Quantile {
    pub q: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaReport {
    pub bundle: Bundle,
    pub direction: Direction,
    pub n: usize,
    pub resolution: Vec<usize>,
    pub seed: u64,
    pub samples: Vec<LambdaSequence>,
    /// Grid maximum of the per-point limsup proxies.
    pub ess_sup: f64,
    pub quantiles: Vec<Quantile>,
    /// Grid points whose bundles could not be estimated.
    pub excluded: Vec<Vec<f64>>,
}

pub const MIN_LAMBDA_RESOLUTION: usize = 8;

/// Nearest-rank quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Essential supremum estimate over a seeded shifted grid.
pub fn essential_lambda(
    spec: &SystemSpec,
    bundle: Bundle,
    direction: Direction,
    resolution: &[usize],
    n: usize,
    seed: u64,
    cfg: &FrameConfig,
) -> Result<LambdaReport> {
    if resolution.iter().any(|r| *r < MIN_LAMBDA_RESOLUTION) {
        return Err(Error::Domain(format!(
            "grid resolution must be at least {MIN_LAMBDA_RESOLUTION} per axis, got {resolution:?}"
        )));
    }
    let points = shifted_grid(spec.periods(), resolution, seed)?;
    let results: Vec<Result<LambdaSequence>> = points
        .par_iter()
        .map(|p| lambda_exponent(spec, p, bundle, direction, n, cfg))
        .collect();
    let mut samples = Vec::with_capacity(points.len());
    let mut excluded = Vec::new();
    for (p, r) in points.iter().zip(results) {
        match r {
            Ok(s) => samples.push(s),
            Err(Error::InconclusiveFrame { .. }) | Err(Error::DegenerateCocycle(_)) => {
                excluded.push(p.coords().to_vec())
            }
            Err(e) => return Err(e),
        }
    }
    if samples.is_empty() {
        return Err(Error::Uncertified(format!(
            "no grid point admitted a {} bundle estimate",
            bundle.label()
        )));
    }
    let mut sorted: Vec<f64> = samples.iter().map(|s| s.limsup).collect();
    sorted.sort_by(f64::total_cmp);
    let quantiles = [0.5, 0.9, 0.99]
        .iter()
        .map(|&q| Quantile {
            q,
            value: quantile(&sorted, q),
        })
        .collect();
    Ok(LambdaReport {
        bundle,
        direction,
        n,
        resolution: resolution.to_vec(),
        seed,
        ess_sup: *sorted.last().expect("non-empty"),
        quantiles,
        samples,
        excluded,
    })
}

/// One sufficient condition for positive entropy.
#[derive(Debug, Clone, Serialize)]
pub struct Inequality {
    pub name: String,
    pub lhs: f64,
    pub threshold: f64,
    /// `lhs > threshold + margin`.
    pub holds: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntropyPrediction {
    Positive,
    None,
}

#[derive(Debug, Clone, Serialize)]
pub struct InequalityReport {
    pub sigma: f64,
    pub dim_e: usize,
    pub dim_f: usize,
    pub margin: f64,
    pub inequalities: Vec<Inequality>,
    pub prediction: EntropyPrediction,
    pub note: String,
}

/// Settings shared by the four essential Lambda estimates.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct InequalityConfig {
    pub n: usize,
    pub seed: u64,
    /// Required excess of a left-hand side over its threshold.
    pub margin: f64,
}

impl Default for InequalityConfig {
    fn default() -> Self {
        InequalityConfig {
            n: 1024,
            seed: 0,
            margin: 0.05,
        }
    }
}

/// Evaluates
/// `λess(TM, f) > -dim E log σ`, `λess(TM, f^-1) > -dim F log σ`,
/// `λess(F, f) > 0` and `λess(E, f^-1) > 0`, any of which implies positive
/// topological entropy for a system with a `σ`-dominated splitting.
pub fn entropy_inequalities(
    spec: &SystemSpec,
    cert: &DominationCertificate,
    frame_cfg: &FrameConfig,
    resolution: &[usize],
    cfg: &InequalityConfig,
) -> Result<(InequalityReport, Vec<LambdaReport>)> {
    if cert.verdict != Verdict::Certified {
        return Err(Error::Uncertified(format!(
            "domination verdict is {:?} (max ratio {:.4} at k = {}); the inequalities need a certified splitting",
            cert.verdict, cert.max_ratio, cert.k
        )));
    }
    let sigma = cert.sigma_inferred;
    let dim_f = frame_cfg.dim_f;
    let dim_e = spec.dim() - dim_f;
    let cases = [
        (Bundle::Tangent, Direction::Forward, -(dim_e as f64) * sigma.ln()),
        (Bundle::Tangent, Direction::Backward, -(dim_f as f64) * sigma.ln()),
        (Bundle::F, Direction::Forward, 0.0),
        (Bundle::E, Direction::Backward, 0.0),
    ];
    let mut reports = Vec::with_capacity(4);
    let mut inequalities = Vec::with_capacity(4);
    for (bundle, direction, threshold) in cases {
        let r = essential_lambda(spec, bundle, direction, resolution, cfg.n, cfg.seed, frame_cfg)?;
        let name = format!(
            "lambda_ess({}, {}) > {}",
            bundle.label(),
            if direction == Direction::Forward { "f" } else { "f^-1" },
            match (bundle, direction) {
                (Bundle::Tangent, Direction::Forward) => "-dim(E) log(sigma)",
                (Bundle::Tangent, Direction::Backward) => "-dim(F) log(sigma)",
                _ => "0",
            }
        );
        inequalities.push(Inequality {
            name,
            lhs: r.ess_sup,
            threshold,
            holds: r.ess_sup > threshold + cfg.margin,
        });
        reports.push(r);
    }
    let any = inequalities.iter().any(|i| i.holds);
    let note = if any {
        "at least one inequality holds: the topological entropy is positive".to_string()
    } else {
        "no inequality holds at this resolution; the conditions are only sufficient, so this carries no entropy prediction"
            .to_string()
    };
    Ok((
        InequalityReport {
            sigma,
            dim_e,
            dim_f,
            margin: cfg.margin,
            inequalities,
            prediction: if any { EntropyPrediction::Positive } else { EntropyPrediction::None },
            note,
        },
        reports,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::uniform_grid;
    use crate::splitting::{check_domination, estimate_frames};
    use crate::system::{cat_map, gourmelon_potrie, morse_smale_circle, parse_system, product};

    fn log_sigma2() -> f64 {
        ((3.0 + 5f64.sqrt()) / 2.0).ln()
    }

    #[test]
    fn cat_map_exponents() {
        let cat = cat_map();
        let r = lyapunov_exponents(&cat, &cat.point(vec![0.1234, 0.5678]).unwrap(), 10_000).unwrap();
        assert!((r.exponents[0] - log_sigma2()).abs() < 1e-3);
        assert!((r.exponents[1] + log_sigma2()).abs() < 1e-3);
        assert!(r.trace_defect() < 1e-8);
        assert_eq!(r.trace.last().unwrap().n, 10_000);
    }

    #[test]
    fn rotation_has_zero_exponent() {
        let rot = parse_system("dim=1\nmap:\nx1 + 0.3").unwrap();
        let r = lyapunov_exponents(&rot, &rot.point(vec![0.2]).unwrap(), 100).unwrap();
        assert_eq!(r.exponents, vec![0.0]);
    }

    #[test]
    fn gp_exponents_on_the_attracting_circle() {
        let gp = gourmelon_potrie(0.5, 0.25).unwrap();
        // rounding tilts the QR frame off the axes, so the top exponent only
        // settles after a transient of about 35 units of log-growth
        let r = lyapunov_exponents(&gp, &gp.point(vec![1.0, 0.3]).unwrap(), 50_000).unwrap();
        assert!(r.exponents[0].abs() < 1e-3, "{:?}", r.exponents);
        assert!((r.exponents[1] + std::f64::consts::PI).abs() < 1e-3);
    }

    #[test]
    fn short_horizon_is_rejected() {
        let cat = cat_map();
        let e = lyapunov_exponents(&cat, &cat.point(vec![0.1, 0.1]).unwrap(), 5).unwrap_err();
        assert!(matches!(e, Error::Domain(_)));
    }

    #[test]
    fn cat_map_lambda_sequences() {
        let cat = cat_map();
        let x = cat.point(vec![0.31, 0.62]).unwrap();
        let cfg = FrameConfig::new(1);
        let tm = lambda_exponent(&cat, &x, Bundle::Tangent, Direction::Forward, 64, &cfg).unwrap();
        assert!(tm.values.iter().all(|v| v.abs() < 1e-12));
        assert_eq!(tm.horizons, vec![1, 2, 4, 8, 16, 32, 64]);
        let f = lambda_exponent(&cat, &x, Bundle::F, Direction::Forward, 64, &cfg).unwrap();
        assert!(f.values.iter().all(|v| (v - log_sigma2()).abs() < 1e-8));
        let e = lambda_exponent(&cat, &x, Bundle::E, Direction::Forward, 64, &cfg).unwrap();
        assert!(e.values.iter().all(|v| (v + log_sigma2()).abs() < 1e-8));
        let eb = lambda_exponent(&cat, &x, Bundle::E, Direction::Backward, 64, &cfg).unwrap();
        assert!((eb.limsup - log_sigma2()).abs() < 1e-8);
        let fb = lambda_exponent(&cat, &x, Bundle::F, Direction::Backward, 64, &cfg).unwrap();
        assert!((fb.limsup + log_sigma2()).abs() < 1e-8);
    }

    #[test]
    fn product_tangent_lambda_matches_orbit_average() {
        let f1 = morse_smale_circle(0.5).unwrap();
        let f = product(&f1, &cat_map()).unwrap();
        let x = f.point(vec![0.37, 0.2, 0.9]).unwrap();
        let s = lambda_exponent(&f, &x, Bundle::Tangent, Direction::Forward, 10_000, &FrameConfig::new(1)).unwrap();
        // orbit average of log f1' computed directly on the circle factor
        let (mut t, mut acc) = (0.37f64, 0.0);
        for _ in 0..10_000 {
            acc += (1.0 - 0.5 * (2.0 * std::f64::consts::PI * t).cos()).ln();
            t = (t - 0.5 / (2.0 * std::f64::consts::PI) * (2.0 * std::f64::consts::PI * t).sin()).rem_euclid(1.0);
        }
        assert!((s.values.last().unwrap() - acc / 10_000.0).abs() < 1e-9);
        assert!((s.values.last().unwrap() - 0.5f64.ln()).abs() < 1e-2);
    }

    #[test]
    fn volume_splits_into_bundles_on_the_cat_map() {
        // constant eigenframe: log det along TM is the sum of the bundle terms
        let cat = cat_map();
        let x = cat.point(vec![0.71, 0.05]).unwrap();
        let cfg = FrameConfig::new(1);
        for dir in [Direction::Forward, Direction::Backward] {
            let tm = lambda_exponent(&cat, &x, Bundle::Tangent, dir, 32, &cfg).unwrap();
            let e = lambda_exponent(&cat, &x, Bundle::E, dir, 32, &cfg).unwrap();
            let f = lambda_exponent(&cat, &x, Bundle::F, dir, 32, &cfg).unwrap();
            for i in 0..tm.values.len() {
                assert!((tm.values[i] - e.values[i] - f.values[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn essential_lambda_on_the_cat_map() {
        let cat = cat_map();
        let cfg = FrameConfig::new(1);
        let r = essential_lambda(&cat, Bundle::F, Direction::Forward, &[8, 8], 64, 3, &cfg).unwrap();
        assert_eq!(r.samples.len(), 64);
        assert!((r.ess_sup - log_sigma2()).abs() < 1e-8);
        assert!(r.quantiles.iter().all(|q| (q.value - log_sigma2()).abs() < 1e-8));
        let tm = essential_lambda(&cat, Bundle::Tangent, Direction::Forward, &[8, 8], 64, 3, &cfg).unwrap();
        assert!(tm.ess_sup.abs() < 1e-12);
        assert!(essential_lambda(&cat, Bundle::F, Direction::Forward, &[4, 8], 64, 3, &cfg).is_err());
    }

    #[test]
    fn quantiles_use_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(quantile(&v, 0.5), 50.0);
        assert_eq!(quantile(&v, 0.99), 99.0);
        assert_eq!(quantile(&[7.0], 0.9), 7.0);
    }

    #[test]
    fn cat_map_predicts_positive_entropy() {
        let cat = cat_map();
        let cfg = FrameConfig::new(1);
        let set = estimate_frames(&cat, &uniform_grid(&[1.0, 1.0], &[4, 4]).unwrap(), &cfg).unwrap();
        let cert = check_domination(&cat, &set, 1).unwrap();
        let (rep, _) = entropy_inequalities(&cat, &cert, &cfg, &[8, 8], &InequalityConfig { n: 64, ..Default::default() })
            .unwrap();
        assert_eq!(rep.prediction, EntropyPrediction::Positive);
        assert!(rep.inequalities[2].holds);
        assert!(rep.inequalities[3].holds);
        // volume is preserved, so the first condition holds as well
        assert!(rep.inequalities[0].holds);
    }

    #[test]
    fn uncertified_splitting_is_refused() {
        let cat = cat_map();
        let cfg = FrameConfig::new(1);
        let set = estimate_frames(&cat, &uniform_grid(&[1.0, 1.0], &[2, 2]).unwrap(), &cfg).unwrap();
        let mut cert = check_domination(&cat, &set, 1).unwrap();
        cert.verdict = Verdict::Inconclusive;
        let e = entropy_inequalities(&cat, &cert, &cfg, &[8, 8], &InequalityConfig::default()).unwrap_err();
        assert!(matches!(e, Error::Uncertified(_)));
    }
}
