//! Topological entropy from counts of `(n, ε)`-separated orbit segments, and
//! volume growth along the expanding bundle as a lower bound for metric
//! entropy.

use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::Serialize;

use crate::cocycle::{cocycle_product_seeded, orbit_raw, Direction};
use crate::error::{Error, Result};
use crate::grid::{shifted_grid, grid_size};
use crate::manifold::{restricted_det, TorusPoint};
use crate::splitting::{
    estimate_bundles_with, frames_along, FrameConfig, HyperbolicityCertificate, HyperbolicityMode,
};
use crate::system::SystemSpec;

/// Orbit segments `x, f(x), ..., f^{n-1}(x)` of every seed, stored seed-major.
#[derive(Debug, Clone)]
pub struct OrbitCache {
    dim: usize,
    len: usize,
    periods: Vec<f64>,
    data: Vec<f64>,
}

impl OrbitCache {
    pub fn build(spec: &SystemSpec, seeds: &[TorusPoint], len: usize) -> Result<Self> {
        let d = spec.dim();
        if len == 0 {
            return Err(Error::Domain("orbit length must be at least 1".into()));
        }
        let chunks: Vec<Result<Vec<f64>>> = seeds
            .par_iter()
            .map(|s| {
                spec.check_point(s)?;
                orbit_raw(spec, s.coords(), len - 1, Direction::Forward)
            })
            .collect();
        let mut data = Vec::with_capacity(seeds.len() * len * d);
        for c in chunks {
            data.extend_from_slice(&c?);
        }
        Ok(OrbitCache {
            dim: d,
            len,
            periods: spec.periods().to_vec(),
            data,
        })
    }

    pub fn seeds(&self) -> usize {
        self.data.len() / (self.len * self.dim)
    }

    pub fn orbit_len(&self) -> usize {
        self.len
    }

    fn at(&self, seed: usize, i: usize) -> &[f64] {
        let o = (seed * self.len + i) * self.dim;
        &self.data[o..o + self.dim]
    }

    /// First `n` points of the orbit of `seed`, flattened.
    fn segment(&self, seed: usize, n: usize) -> &[f64] {
        let o = seed * self.len * self.dim;
        &self.data[o..o + n * self.dim]
    }
}

/// Whether two flattened orbit segments are more than `eps` apart in the
/// Bowen metric.
fn bowen_separated(a: &[f64], b: &[f64], periods: &[f64], eps2: f64) -> bool {
    let d = periods.len();
    a.chunks_exact(d).zip(b.chunks_exact(d)).any(|(p, q)| {
        let mut s = 0.0;
        for k in 0..d {
            let per = periods[k];
            let mut dlt = p[k] - q[k];
            dlt -= per * (dlt / per).round();
            s += dlt * dlt;
        }
        s > eps2
    })
}

/// Spatial hash on the pair of cells occupied at times `0` and `n - 1`.
/// Cells are at least `ε` wide, so any point within `ε` of `p` at both times
/// sits in one of the `3^{2d}` cells around `p`.
struct CellIndex<'a> {
    cache: &'a OrbitCache,
    n: usize,
    cells: Vec<usize>,
    /// Orbit segments of the indexed points, stored contiguously per cell so
    /// scans stay in cache.
    buckets: FxHashMap<u64, Vec<f64>>,
}

impl<'a> CellIndex<'a> {
    fn new(cache: &'a OrbitCache, n: usize, eps: f64) -> Self {
        let cells = cache
            .periods
            .iter()
            .map(|p| ((p / eps).floor() as usize).max(1))
            .collect();
        CellIndex {
            cache,
            n,
            cells,
            buckets: FxHashMap::default(),
        }
    }

    /// Own cell followed by the distinct neighbouring cells along each of
    /// the `2d` axes.
    fn axis_cells(&self, seed: usize, out: &mut Vec<([usize; 3], usize)>) {
        out.clear();
        let d = self.cache.dim;
        for i in [0, self.n - 1] {
            let p = self.cache.at(seed, i);
            for k in 0..d {
                let c = self.cells[k];
                let idx = ((p[k] / self.cache.periods[k] * c as f64).floor() as usize).min(c - 1);
                let len = c.min(3);
                out.push(([idx, (idx + 1) % c, (idx + c - 1) % c], len));
            }
        }
    }

    fn key(parts: impl Iterator<Item = usize>) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in parts {
            h = (h ^ v as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(23);
        }
        h
    }

    fn insert(&mut self, seed: usize, scratch: &mut Vec<([usize; 3], usize)>) {
        self.axis_cells(seed, scratch);
        let k = Self::key(scratch.iter().map(|c| c.0[0]));
        self.buckets
            .entry(k)
            .or_default()
            .extend_from_slice(self.cache.segment(seed, self.n));
    }

    /// Whether `seed` is `(n, ε)`-separated from every indexed point. The own
    /// cell is scanned first since it is the likeliest to hold a close point.
    fn admits(&self, seed: usize, eps: f64, scratch: &mut Vec<([usize; 3], usize)>, digits: &mut Vec<usize>) -> bool {
        self.axis_cells(seed, scratch);
        let m = scratch.len();
        let own = self.cache.segment(seed, self.n);
        let periods = &self.cache.periods;
        let eps2 = eps * eps;
        digits.clear();
        digits.resize(m, 0);
        loop {
            let k = Self::key((0..m).map(|a| scratch[a].0[digits[a]]));
            if let Some(b) = self.buckets.get(&k) {
                if !b
                    .chunks_exact(own.len())
                    .all(|other| bowen_separated(own, other, periods, eps2))
                {
                    return false;
                }
            }
            let mut a = 0;
            while a < m {
                digits[a] += 1;
                if digits[a] < scratch[a].1 {
                    break;
                }
                digits[a] = 0;
                a += 1;
            }
            if a == m {
                return true;
            }
        }
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Domain(format!("ε must be positive, got {eps}")));
    }
    Ok(())
}

/// Greedy `(n, ε)`-separated subset extending `initial`, scanning seeds in
/// order. `initial` must already be `(n, ε)`-separated.
fn greedy_extend(cache: &OrbitCache, n: usize, eps: f64, initial: &[u32]) -> Vec<u32> {
    let mut index = CellIndex::new(cache, n, eps);
    let mut member = vec![false; cache.seeds()];
    let mut scratch = Vec::new();
    let mut digits = Vec::new();
    let mut set = initial.to_vec();
    for &s in initial {
        member[s as usize] = true;
        index.insert(s as usize, &mut scratch);
    }
    for s in 0..cache.seeds() {
        if member[s] {
            continue;
        }
        if index.admits(s, eps, &mut scratch, &mut digits) {
            member[s] = true;
            index.insert(s, &mut scratch);
            set.push(s as u32);
        }
    }
    set
}

/// Size of the greedy maximal `(n, ε)`-separated subset of `seeds`, built in
/// seed order.
pub fn separated_count(spec: &SystemSpec, seeds: &[TorusPoint], n: usize, eps: f64) -> Result<usize> {
    check_eps(eps)?;
    if n == 0 {
        return Err(Error::Domain("n must be at least 1".into()));
    }
    check_budget(seeds.len(), n, spec.dim(), &EntropyConfig::default())?;
    let cache = OrbitCache::build(spec, seeds, n)?;
    Ok(greedy_extend(&cache, n, eps, &[]).len())
}

#[derive(Debug, Clone, Serialize)]
pub struct EntropyConfig {
    /// Sorted descending before use.
    pub epsilons: Vec<f64>,
    pub n_max: usize,
    /// Leading horizons left out of the regression.
    pub drop: usize,
    /// Seed grid per axis; `None` picks an isotropic grid within `max_seeds`.
    pub resolution: Option<Vec<usize>>,
    pub grid_seed: u64,
    pub max_seeds: usize,
    /// Upper bound on stored orbit coordinates.
    pub max_orbit_values: usize,
    /// Counts at or above this share of the seeds are treated as saturated.
    pub saturation_fraction: f64,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        EntropyConfig {
            epsilons: vec![0.2, 0.1, 0.05],
            n_max: 12,
            drop: 2,
            resolution: None,
            grid_seed: 0,
            max_seeds: 250_000,
            max_orbit_values: 25_000_000,
            saturation_fraction: 0.1,
        }
    }
}

impl EntropyConfig {
    pub fn resolution_for(&self, dim: usize) -> Vec<usize> {
        self.resolution.clone().unwrap_or_else(|| {
            let r = (self.max_seeds as f64).powf(1.0 / dim as f64).floor() as usize;
            vec![r.max(1); dim]
        })
    }
}

fn check_budget(seeds: usize, n: usize, d: usize, cfg: &EntropyConfig) -> Result<()> {
    if seeds > cfg.max_seeds {
        return Err(Error::Budget {
            message: format!("{seeds} seeds exceed the limit of {}", cfg.max_seeds),
            suggestion: "lower the seed grid resolution".into(),
        });
    }
    let values = seeds.saturating_mul(n).saturating_mul(d);
    if values > cfg.max_orbit_values {
        return Err(Error::Budget {
            message: format!(
                "{seeds} seeds x {n} iterates x {d} coordinates exceed {} stored values",
                cfg.max_orbit_values
            ),
            suggestion: format!(
                "use at most {} seeds or n <= {}",
                cfg.max_orbit_values / (n * d).max(1),
                cfg.max_orbit_values / (seeds * d).max(1)
            ),
        });
    }
    Ok(())
}

/// Least-squares line through `(n, log N)`.
#[derive(Debug, Clone, Serialize)]
pub struct SlopeFit {
    pub eps: f64,
    pub horizons: Vec<usize>,
    pub slope: f64,
    pub intercept: f64,
    /// Root mean square residual.
    pub residual: f64,
    /// The fit had to include saturated counts.
    pub saturated: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EntropyEstimate {
    pub epsilons: Vec<f64>,
    pub horizons: Vec<usize>,
    /// `counts[e][n - 1]` for `epsilons[e]`, up to the first saturated `n`.
    pub counts: Vec<Vec<usize>>,
    pub fits: Vec<SlopeFit>,
    pub h_est: f64,
    pub lower_bound_only: bool,
    pub seeds: usize,
    pub resolution: Vec<usize>,
    pub saturation_threshold: usize,
}

fn line_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let icpt = my - slope * mx;
    let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - icpt - slope * x).powi(2)).sum();
    (slope, icpt, (rss / n).sqrt())
}

/// Entropy estimate from separated-set counts over `n = 1..=n_max`.
///
/// Sets are grown as a chain: the `(n, ε)` set starts from the larger of the
/// `(n - 1, ε)` set and the `(n, ε')` set for the next larger `ε'`, both of
/// which are already `(n, ε)`-separated, and is then extended greedily. The
/// counts are therefore exactly monotone in both `n` and `ε`.
pub fn estimate_topological_entropy(spec: &SystemSpec, cfg: &EntropyConfig) -> Result<EntropyEstimate> {
    let mut epsilons = cfg.epsilons.clone();
    if epsilons.is_empty() {
        return Err(Error::Domain("the ε list is empty".into()));
    }
    for e in &epsilons {
        check_eps(*e)?;
    }
    epsilons.sort_by(|a, b| b.total_cmp(a));
    epsilons.dedup();
    if cfg.n_max < cfg.drop + 3 {
        return Err(Error::Domain(format!(
            "n_max = {} leaves fewer than three horizons after dropping {}",
            cfg.n_max, cfg.drop
        )));
    }
    let d = spec.dim();
    let resolution = cfg.resolution_for(d);
    let seeds_n = grid_size(&resolution);
    check_budget(seeds_n, cfg.n_max, d, cfg)?;
    let seeds = shifted_grid(spec.periods(), &resolution, cfg.grid_seed)?;
    let cache = OrbitCache::build(spec, &seeds, cfg.n_max)?;

    // Once a count reaches the saturation threshold the seed grid no longer
    // resolves that scale, and longer horizons are not counted.
    let threshold = ((cfg.saturation_fraction * seeds_n as f64).ceil() as usize).max(1);
    let mut sets: Vec<Vec<u32>> = vec![Vec::new(); epsilons.len()];
    let mut counts: Vec<Vec<usize>> = vec![Vec::with_capacity(cfg.n_max); epsilons.len()];
    for n in 1..=cfg.n_max {
        let mut larger: Vec<u32> = Vec::new();
        for (e, &eps) in epsilons.iter().enumerate() {
            if counts[e].last().is_some_and(|&c| c >= threshold) {
                larger.clear();
                continue;
            }
            let prev = &sets[e];
            let start = if larger.len() > prev.len() { &larger } else { prev };
            let set = greedy_extend(&cache, n, eps, start);
            counts[e].push(set.len());
            larger = set.clone();
            sets[e] = set;
        }
    }

    let fits: Vec<SlopeFit> = epsilons
        .iter()
        .zip(&counts)
        .map(|(&eps, c)| {
            let computed: Vec<usize> = (1..=c.len()).collect();
            let in_range: Vec<usize> = computed.iter().copied().filter(|&n| n > cfg.drop).collect();
            let clean: Vec<usize> = in_range.iter().copied().filter(|&n| c[n - 1] < threshold).collect();
            let (horizons, saturated) = if clean.len() >= 3 {
                (clean, false)
            } else if in_range.len() >= 2 {
                (in_range, true)
            } else {
                (computed, true)
            };
            let xs: Vec<f64> = horizons.iter().map(|&n| n as f64).collect();
            let ys: Vec<f64> = horizons.iter().map(|&n| (c[n - 1] as f64).ln()).collect();
            let (slope, intercept, residual) = line_fit(&xs, &ys);
            SlopeFit {
                eps,
                horizons,
                slope,
                intercept,
                residual,
                saturated,
            }
        })
        .collect();
    let h_est = fits.iter().map(|f| f.slope).fold(0.0, f64::max);
    Ok(EntropyEstimate {
        lower_bound_only: fits.iter().all(|f| f.saturated),
        epsilons,
        horizons: (1..=cfg.n_max).collect(),
        counts,
        fits,
        h_est,
        seeds: seeds_n,
        resolution,
        saturation_threshold: threshold,
    })
}

/// Birkhoff average of `log |det Df|_G|` along an orbit, with `G` the
/// expanding bundle (`F` forward, or `E` for the inverse map).
#[derive(Debug, Clone, Serialize)]
pub struct PesinBound {
    pub base: Vec<f64>,
    pub n: usize,
    pub direction: Direction,
    /// `(1/n) Σ log restricted_det(Df(f^i x), G(f^i x))`.
    pub value: f64,
    /// `(1/n) log restricted_det(Df^n(x), G(x))` from the accumulated cocycle.
    pub telescoped: f64,
    /// Bundle frames that could not be estimated; always zero when the base
    /// frame is found, since the bundle is then transported along the orbit.
    pub skipped: usize,
    pub frame_horizon: usize,
    pub frame_gap: f64,
}

pub fn pesin_lower_bound(spec: &SystemSpec, x: &TorusPoint, n: usize, cfg: &FrameConfig) -> Result<PesinBound> {
    pesin_lower_bound_dir(spec, x, n, cfg, Direction::Forward)
}

/// For [`Direction::Backward`], the bound for `f^{-1}` along `E`.
pub fn pesin_lower_bound_dir(
    spec: &SystemSpec,
    x: &TorusPoint,
    n: usize,
    cfg: &FrameConfig,
    direction: Direction,
) -> Result<PesinBound> {
    if n == 0 {
        return Err(Error::Domain("n must be at least 1".into()));
    }
    let frame = estimate_bundles_with(spec, x, cfg)?;
    let of = frames_along(spec, &frame, n, direction)?;
    let bundles = match direction {
        Direction::Forward => &of.f,
        Direction::Backward => &of.e,
    };
    let mut sum = 0.0;
    for (j, g) in of.jacobians.iter().zip(bundles) {
        sum += restricted_det(j, g)?.ln();
    }
    let steps = match direction {
        Direction::Forward => n as i64,
        Direction::Backward => -(n as i64),
    };
    let prod = cocycle_product_seeded(spec, x, steps, bundles[0].basis())?;
    let value = sum / n as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("Pesin sum at {:?}", x.coords())));
    }
    Ok(PesinBound {
        base: x.coords().to_vec(),
        n,
        direction,
        value,
        telescoped: prod.log_volume() / n as f64,
        skipped: 0,
        frame_horizon: frame.horizon,
        frame_gap: frame.gap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundVerdict {
    Holds,
    Violated,
    NotApplicable,
}

#[derive(Debug, Clone, Serialize)]
pub struct PesinCheck {
    pub verdict: BoundVerdict,
    pub mode: HyperbolicityMode,
    /// `dim(G) log α`.
    pub target: Option<f64>,
    pub tolerance: f64,
    pub min_bound: Option<f64>,
    pub worst_point: Option<Vec<f64>>,
    pub bounds: Vec<PesinBound>,
}

/// Checks `pesin_lower_bound >= dim(F) log α - tolerance` on a Lebesgue grid
/// when `F` is uniformly expanding, or the mirror statement for `f^{-1}`
/// along `E` when `E` is uniformly contracting.
pub fn pesin_bound_check(
    spec: &SystemSpec,
    cert: &HyperbolicityCertificate,
    cfg: &FrameConfig,
    points: &[TorusPoint],
    n: usize,
    tolerance: f64,
) -> Result<PesinCheck> {
    let (direction, dim) = match cert.mode {
        HyperbolicityMode::Neither => {
            return Ok(PesinCheck {
                verdict: BoundVerdict::NotApplicable,
                mode: cert.mode,
                target: None,
                tolerance,
                min_bound: None,
                worst_point: None,
                bounds: Vec::new(),
            })
        }
        HyperbolicityMode::FExpanding => (Direction::Forward, cfg.dim_f),
        HyperbolicityMode::EContracting => (Direction::Backward, spec.dim() - cfg.dim_f),
    };
    let alpha = cert
        .alpha_inferred
        .ok_or_else(|| Error::Uncertified("hyperbolicity certificate without a rate".into()))?;
    let target = dim as f64 * alpha.ln();
    let bounds: Vec<PesinBound> = points
        .par_iter()
        .map(|p| pesin_lower_bound_dir(spec, p, n, cfg, direction))
        .collect::<Result<_>>()?;
    let worst = bounds
        .iter()
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .ok_or_else(|| Error::Domain("no grid points".into()))?;
    let min_bound = worst.value;
    Ok(PesinCheck {
        verdict: if min_bound >= target - tolerance { BoundVerdict::Holds } else { BoundVerdict::Violated },
        mode: cert.mode,
        target: Some(target),
        tolerance,
        min_bound: Some(min_bound),
        worst_point: Some(worst.base.clone()),
        bounds,
    })
}
