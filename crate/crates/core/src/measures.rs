//! Empirical measures on box partitions, their limit points, SRB-like
//! candidates, and sampled recurrence of box sets.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cocycle::{orbit_raw, Direction};
use crate::error::{Error, Result};
use crate::grid::grid_size;
use crate::manifold::TorusPoint;
use crate::spectra::full_log_volumes;
use crate::system::{SystemSpec, MAX_DIM};

fn check_resolution(periods: &[f64], resolution: &[usize]) -> Result<()> {
    if periods.len() != resolution.len() {
        return Err(Error::Dimension(format!(
            "{} resolutions for {} axes",
            resolution.len(),
            periods.len()
        )));
    }
    if resolution.iter().any(|r| *r == 0) {
        return Err(Error::Domain("box resolution must be positive on every axis".into()));
    }
    Ok(())
}

/// Flat index of the box containing `x`, first axis varying slowest.
pub fn box_index(x: &[f64], periods: &[f64], resolution: &[usize]) -> usize {
    let mut idx = 0;
    for ((v, p), r) in x.iter().zip(periods).zip(resolution) {
        let k = ((v / p * *r as f64).floor() as usize).min(r - 1);
        idx = idx * r + k;
    }
    idx
}

/// Per-axis indices of a flat box index.
pub fn box_coords(mut idx: usize, resolution: &[usize]) -> Vec<usize> {
    let mut out = vec![0; resolution.len()];
    for (k, r) in resolution.iter().enumerate().rev() {
        out[k] = idx % r;
        idx /= r;
    }
    out
}

/// Lower and upper corners of a box.
pub fn box_bounds(idx: usize, periods: &[f64], resolution: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let c = box_coords(idx, resolution);
    let lo: Vec<f64> = c
        .iter()
        .zip(periods)
        .zip(resolution)
        .map(|((k, p), r)| *k as f64 * p / *r as f64)
        .collect();
    let hi = lo
        .iter()
        .zip(periods)
        .zip(resolution)
        .map(|((l, p), r)| l + p / *r as f64)
        .collect();
    (lo, hi)
}

/// Histogram of orbit points over the box partition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalMeasure {
    pub resolution: Vec<usize>,
    pub periods: Vec<f64>,
    pub weights: Vec<f64>,
    pub base: Option<Vec<f64>>,
    pub n: usize,
}

impl EmpiricalMeasure {
    fn from_counts(counts: &[u64], n: usize, resolution: &[usize], periods: &[f64], base: Option<Vec<f64>>) -> Self {
        EmpiricalMeasure {
            resolution: resolution.to_vec(),
            periods: periods.to_vec(),
            weights: counts.iter().map(|c| *c as f64 / n as f64).collect(),
            base,
            n,
        }
    }

    /// Histogram of a flat list of points.
    pub fn of_points(flat: &[f64], periods: &[f64], resolution: &[usize]) -> Result<Self> {
        check_resolution(periods, resolution)?;
        let d = periods.len();
        let n = flat.len() / d;
        if n == 0 {
            return Err(Error::Domain("empirical measure of no points".into()));
        }
        let mut counts = vec![0u64; grid_size(resolution)];
        for p in flat.chunks_exact(d) {
            counts[box_index(p, periods, resolution)] += 1;
        }
        Ok(Self::from_counts(&counts, n, resolution, periods, None))
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Mass of the boxes selected by `member`.
    pub fn mass_on(&self, member: impl Fn(usize) -> bool) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .filter(|(i, _)| member(*i))
            .map(|(_, w)| w)
            .sum()
    }

    /// Merges pairs of boxes along every axis; all resolutions must be even.
    pub fn coarsen(&self) -> Result<EmpiricalMeasure> {
        if self.resolution.iter().any(|r| r % 2 != 0) {
            return Err(Error::Domain(format!(
                "cannot halve resolution {:?}",
                self.resolution
            )));
        }
        let res: Vec<usize> = self.resolution.iter().map(|r| r / 2).collect();
        let mut w = vec![0.0; grid_size(&res)];
        for (i, v) in self.weights.iter().enumerate() {
            let c = box_coords(i, &self.resolution);
            let j = c.iter().zip(&res).fold(0, |acc, (k, r)| acc * r + k / 2);
            w[j] += v;
        }
        Ok(EmpiricalMeasure {
            resolution: res,
            periods: self.periods.clone(),
            weights: w,
            base: self.base.clone(),
            n: self.n,
        })
    }

    /// Boxes with positive weight.
    pub fn support(&self) -> Vec<usize> {
        (0..self.weights.len()).filter(|i| self.weights[*i] > 0.0).collect()
    }
}

/// Histogram of `x, f(x), ..., f^{n-1}(x)`.
pub fn empirical_measure(spec: &SystemSpec, x: &TorusPoint, n: usize, resolution: &[usize]) -> Result<EmpiricalMeasure> {
    spec.check_point(x)?;
    if n == 0 {
        return Err(Error::Domain("empirical measure needs n >= 1".into()));
    }
    check_resolution(spec.periods(), resolution)?;
    let d = spec.dim();
    let mut counts = vec![0u64; grid_size(resolution)];
    let mut cur = x.coords().to_vec();
    let mut next = [0.0; MAX_DIM];
    for i in 0..n {
        counts[box_index(&cur, spec.periods(), resolution)] += 1;
        if i + 1 < n {
            spec.map_raw(&cur, &mut next[..d])?;
            cur.copy_from_slice(&next[..d]);
        }
    }
    Ok(EmpiricalMeasure::from_counts(
        &counts,
        n,
        resolution,
        spec.periods(),
        Some(x.coords().to_vec()),
    ))
}

/// Half-L1 distance between histograms of the same partition.
pub fn measure_distance(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    if mu.resolution != nu.resolution || mu.periods != nu.periods {
        return Err(Error::Dimension(format!(
            "histograms at resolutions {:?} and {:?}",
            mu.resolution, nu.resolution
        )));
    }
    Ok(0.5 * mu.weights.iter().zip(&nu.weights).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Single-linkage clusters at distance threshold `theta`, each listed in
/// increasing index order and ordered by their first member.
pub fn single_linkage(measures: &[EmpiricalMeasure], theta: f64) -> Result<Vec<Vec<usize>>> {
    let n = measures.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if measure_distance(&measures[i], &measures[j])? <= theta {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut root_slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if root_slot[r] == usize::MAX {
            root_slot[r] = clusters.len();
            clusters.push(Vec::new());
        }
        clusters[root_slot[r]].push(i);
    }
    Ok(clusters)
}

/// Mean of histograms.
pub fn centroid(measures: &[&EmpiricalMeasure]) -> EmpiricalMeasure {
    let first = measures[0];
    let mut w = vec![0.0; first.weights.len()];
    for m in measures {
        for (a, b) in w.iter_mut().zip(&m.weights) {
            *a += b;
        }
    }
    let k = measures.len() as f64;
    w.iter_mut().for_each(|v| *v /= k);
    EmpiricalMeasure {
        resolution: first.resolution.clone(),
        periods: first.periods.clone(),
        weights: w,
        base: None,
        n: first.n,
    }
}

pub const DEFAULT_CLUSTER_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Serialize)]
pub struct MeasureCluster {
    /// Indices into the horizon schedule (or the sample grid).
    pub members: Vec<usize>,
    pub representative: EmpiricalMeasure,
}

#[derive(Debug, Clone, Serialize)]
pub struct PomegaReport {
    pub base: Vec<f64>,
    pub schedule: Vec<usize>,
    pub theta: f64,
    pub clusters: Vec<MeasureCluster>,
    /// All empirical measures fall into one cluster.
    pub converged: bool,
}

/// Limit points of the empirical measures of `x` along `schedule`.
pub fn pomega_approx(
    spec: &SystemSpec,
    x: &TorusPoint,
    schedule: &[usize],
    resolution: &[usize],
    theta: f64,
) -> Result<PomegaReport> {
    spec.check_point(x)?;
    check_resolution(spec.periods(), resolution)?;
    if schedule.is_empty() || schedule[0] == 0 || schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("schedule must be positive and strictly increasing".into()));
    }
    let d = spec.dim();
    let n_max = *schedule.last().expect("non-empty");
    let mut counts = vec![0u64; grid_size(resolution)];
    let mut cur = x.coords().to_vec();
    let mut next = [0.0; MAX_DIM];
    let mut measures = Vec::with_capacity(schedule.len());
    let mut s = 0;
    for i in 0..n_max {
        counts[box_index(&cur, spec.periods(), resolution)] += 1;
        if i + 1 == schedule[s] {
            measures.push(EmpiricalMeasure::from_counts(
                &counts,
                i + 1,
                resolution,
                spec.periods(),
                Some(x.coords().to_vec()),
            ));
            s += 1;
        }
        spec.map_raw(&cur, &mut next[..d])?;
        cur.copy_from_slice(&next[..d]);
    }
    let clusters = single_linkage(&measures, theta)?
        .into_iter()
        .map(|members| {
            let refs: Vec<&EmpiricalMeasure> = members.iter().map(|i| &measures[*i]).collect();
            MeasureCluster {
                representative: centroid(&refs),
                members,
            }
        })
        .collect::<Vec<_>>();
    Ok(PomegaReport {
        base: x.coords().to_vec(),
        schedule: schedule.to_vec(),
        theta,
        converged: clusters.len() == 1,
        clusters,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SrbCandidate {
    pub representative: EmpiricalMeasure,
    /// Share of grid points whose empirical measure is within `eps`.
    pub basin_fraction: f64,
    pub cluster_size: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SrbReport {
    pub n: usize,
    pub eps: f64,
    pub theta: f64,
    pub resolution: Vec<usize>,
    pub points: usize,
    /// Sorted by decreasing basin fraction.
    pub candidates: Vec<SrbCandidate>,
}

/// Clusters the horizon-`n` empirical measures of `points` and scores each
/// cluster mean by the share of points attracted to it within `eps`.
pub fn srb_like_candidates(
    spec: &SystemSpec,
    points: &[TorusPoint],
    n: usize,
    eps: f64,
    resolution: &[usize],
    theta: f64,
) -> Result<SrbReport> {
    if points.is_empty() {
        return Err(Error::Domain("no starting points".into()));
    }
    let measures: Vec<EmpiricalMeasure> = points
        .par_iter()
        .map(|p| empirical_measure(spec, p, n, resolution))
        .collect::<Result<_>>()?;
    let mut candidates = Vec::new();
    for members in single_linkage(&measures, theta)? {
        let refs: Vec<&EmpiricalMeasure> = members.iter().map(|i| &measures[*i]).collect();
        let rep = centroid(&refs);
        let mut inside = 0usize;
        for m in &measures {
            if measure_distance(m, &rep)? < eps {
                inside += 1;
            }
        }
        if inside > 0 {
            candidates.push(SrbCandidate {
                representative: rep,
                basin_fraction: inside as f64 / measures.len() as f64,
                cluster_size: members.len(),
            });
        }
    }
    candidates.sort_by(|a, b| b.basin_fraction.total_cmp(&a.basin_fraction));
    Ok(SrbReport {
        n,
        eps,
        theta,
        resolution: resolution.to_vec(),
        points: points.len(),
        candidates,
    })
}

/// Union of boxes of a partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BoxSet {
    resolution: Vec<usize>,
    #[serde(skip)]
    periods_bits: Vec<u64>,
    members: BTreeSet<usize>,
}

impl BoxSet {
    pub fn new(periods: &[f64], resolution: &[usize], members: impl IntoIterator<Item = usize>) -> Result<Self> {
        check_resolution(periods, resolution)?;
        let total = grid_size(resolution);
        let members: BTreeSet<usize> = members.into_iter().collect();
        if let Some(bad) = members.iter().find(|m| **m >= total) {
            return Err(Error::Domain(format!(
                "box index {bad} out of range for resolution {resolution:?}"
            )));
        }
        Ok(BoxSet {
            resolution: resolution.to_vec(),
            periods_bits: periods.iter().map(|p| p.to_bits()).collect(),
            members,
        })
    }

    pub fn full(periods: &[f64], resolution: &[usize]) -> Result<Self> {
        Self::new(periods, resolution, 0..grid_size(resolution))
    }

    /// Boxes whose corners `(lo, hi)` satisfy `keep`.
    pub fn from_predicate(
        periods: &[f64],
        resolution: &[usize],
        keep: impl Fn(&[f64], &[f64]) -> bool,
    ) -> Result<Self> {
        check_resolution(periods, resolution)?;
        let members = (0..grid_size(resolution)).filter(|i| {
            let (lo, hi) = box_bounds(*i, periods, resolution);
            keep(&lo, &hi)
        });
        Self::new(periods, resolution, members.collect::<Vec<_>>())
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn periods(&self) -> Vec<f64> {
        self.periods_bits.iter().map(|b| f64::from_bits(*b)).collect()
    }

    pub fn members(&self) -> &BTreeSet<usize> {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn lebesgue(&self) -> f64 {
        self.members.len() as f64 / grid_size(&self.resolution) as f64
    }

    pub fn contains_box(&self, idx: usize) -> bool {
        self.members.contains(&idx)
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        self.members.contains(&box_index(x, &self.periods(), &self.resolution))
    }

    pub fn difference(&self, other: &BoxSet) -> Result<BoxSet> {
        if self.resolution != other.resolution {
            return Err(Error::Dimension("box sets on different partitions".into()));
        }
        Ok(BoxSet {
            resolution: self.resolution.clone(),
            periods_bits: self.periods_bits.clone(),
            members: self.members.difference(&other.members).copied().collect(),
        })
    }

    /// CSV with a leading `# resolution=..;periods=..` line, then one row
    /// per box: flat index followed by per-axis indices.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut out = out;
        let join = |v: Vec<String>| v.join(" ");
        writeln!(
            out,
            "# resolution={};periods={}",
            join(self.resolution.iter().map(|r| r.to_string()).collect()),
            join(self.periods().iter().map(|p| p.to_string()).collect())
        )
        .map_err(|e| Error::Io(e.to_string()))?;
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["box".to_string()];
        header.extend((1..=self.resolution.len()).map(|k| format!("i{k}")));
        w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
        for m in &self.members {
            let mut row = vec![m.to_string()];
            row.extend(box_coords(*m, &self.resolution).iter().map(|c| c.to_string()));
            w.write_record(&row).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::Io(e.to_string()))
    }

    pub fn read_csv<R: BufRead>(mut input: R) -> Result<BoxSet> {
        let mut first = String::new();
        input.read_line(&mut first).map_err(|e| Error::Io(e.to_string()))?;
        let syntax = |line: usize, message: String| Error::Syntax {
            line,
            column: 1,
            message,
        };
        let meta = first
            .trim()
            .strip_prefix('#')
            .ok_or_else(|| syntax(1, "expected `# resolution=...;periods=...`".into()))?;
        let (mut res, mut per) = (None, None);
        for part in meta.split(';') {
            let (k, v) = part
                .trim()
                .split_once('=')
                .ok_or_else(|| syntax(1, format!("expected key=value, got `{}`", part.trim())))?;
            match k.trim() {
                "resolution" => {
                    res = Some(
                        v.split_whitespace()
                            .map(|t| t.parse::<usize>())
                            .collect::<std::result::Result<Vec<_>, _>>()
                            .map_err(|e| syntax(1, format!("bad resolution: {e}")))?,
                    )
                }
                "periods" => {
                    per = Some(
                        v.split_whitespace()
                            .map(|t| t.parse::<f64>())
                            .collect::<std::result::Result<Vec<_>, _>>()
                            .map_err(|e| syntax(1, format!("bad periods: {e}")))?,
                    )
                }
                other => return Err(syntax(1, format!("unknown key `{other}`"))),
            }
        }
        let res = res.ok_or_else(|| syntax(1, "missing resolution".into()))?;
        let per = per.ok_or_else(|| syntax(1, "missing periods".into()))?;
        let mut r = csv::Reader::from_reader(input);
        let mut members = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| syntax(i + 3, e.to_string()))?;
            let idx = rec
                .get(0)
                .unwrap_or("")
                .trim()
                .parse::<usize>()
                .map_err(|e| syntax(i + 3, format!("bad box index: {e}")))?;
            members.push(idx);
        }
        BoxSet::new(&per, &res, members)
    }
}

/// `f^n(w0) = w` with both `w0` and `w` in the box set.
#[derive(Debug, Clone, Serialize)]
pub struct Hit {
    pub n: usize,
    pub preimage: Vec<f64>,
    pub witness: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecurrenceVerdict {
    RecurrentEvidence,
    NoReturnDetected,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecurrenceReport {
    pub resolution: Vec<usize>,
    pub boxes: usize,
    pub lebesgue: f64,
    pub n_min: usize,
    pub n_max: usize,
    pub samples: usize,
    pub seed: u64,
    /// At most one validated hit per `n`.
    pub hits: Vec<Hit>,
    /// Tested `n` without a detected return.
    pub misses: Vec<usize>,
    pub verdict: RecurrenceVerdict,
    pub note: String,
}

impl RecurrenceReport {
    pub fn hit_fraction(&self) -> f64 {
        self.hits.len() as f64 / (self.n_max - self.n_min + 1) as f64
    }
}

/// Stratified jittered samples: `per_axis^d` per box.
pub fn box_samples(set: &BoxSet, per_axis: usize, seed: u64) -> Vec<f64> {
    let periods = set.periods();
    let d = periods.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_box = per_axis.pow(d as u32);
    let mut out = Vec::with_capacity(set.len() * per_box * d);
    for &b in set.members() {
        let (lo, hi) = box_bounds(b, &periods, set.resolution());
        for s in 0..per_box {
            let sub = box_coords(s, &vec![per_axis; d]);
            for k in 0..d {
                let w = (hi[k] - lo[k]) / per_axis as f64;
                let v = lo[k] + (sub[k] as f64 + rng.random::<f64>()) * w;
                out.push(v.min(hi[k] - w * 1e-9));
            }
        }
    }
    out
}

fn advance_all(spec: &SystemSpec, pts: &mut [f64]) -> Result<()> {
    let d = spec.dim();
    pts.par_chunks_mut(d).try_for_each(|p| {
        let mut next = [0.0; MAX_DIM];
        spec.map_raw(p, &mut next[..d])?;
        p.copy_from_slice(&next[..d]);
        Ok(())
    })
}

/// Pushes jittered samples of every box of `set` forward and records, for
/// each `n` in `n_min..=n_max`, one sample landing back in `set`. Each hit is
/// replayed from its preimage before it is recorded.
pub fn check_delta_recurrence(
    spec: &SystemSpec,
    set: &BoxSet,
    n_min: usize,
    n_max: usize,
    per_axis: usize,
    seed: u64,
) -> Result<RecurrenceReport> {
    if set.is_empty() {
        return Err(Error::Domain("box set has zero measure".into()));
    }
    if set.periods() != spec.periods() {
        return Err(Error::Dimension("box set and system have different periods".into()));
    }
    if n_min == 0 || n_max < n_min || per_axis == 0 {
        return Err(Error::Domain("need 1 <= n_min <= n_max and at least one sample per axis".into()));
    }
    let d = spec.dim();
    let start = box_samples(set, per_axis, seed);
    let mut cur = start.clone();
    let mut hits = Vec::new();
    let mut misses = Vec::new();
    for n in 1..=n_max {
        advance_all(spec, &mut cur)?;
        if n < n_min {
            continue;
        }
        let mut found = None;
        for (i, p) in cur.chunks_exact(d).enumerate() {
            if !set.contains_point(p) {
                continue;
            }
            let w0 = &start[i * d..(i + 1) * d];
            let replay = orbit_raw(spec, w0, n, Direction::Forward)?;
            let end = &replay[n * d..];
            if end == p && set.contains_point(w0) {
                found = Some(Hit {
                    n,
                    preimage: w0.to_vec(),
                    witness: p.to_vec(),
                });
                break;
            }
        }
        match found {
            Some(h) => hits.push(h),
            None => misses.push(n),
        }
    }
    let verdict = if hits.is_empty() {
        RecurrenceVerdict::NoReturnDetected
    } else {
        RecurrenceVerdict::RecurrentEvidence
    };
    let note = match verdict {
        RecurrenceVerdict::NoReturnDetected => format!(
            "no sampled point returned for n in {n_min}..={n_max}; this is evidence at the sampling resolution, not a proof"
        ),
        RecurrenceVerdict::RecurrentEvidence => format!(
            "returns detected for {} of {} tested n",
            hits.len(),
            n_max - n_min + 1
        ),
    };
    Ok(RecurrenceReport {
        resolution: set.resolution().to_vec(),
        boxes: set.len(),
        lebesgue: set.lebesgue(),
        n_min,
        n_max,
        samples: start.len() / d,
        seed,
        hits,
        misses,
        verdict,
        note,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CoverPoint {
    pub n: usize,
    pub lebesgue: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NonrecurrenceDiagnostic {
    pub a: f64,
    pub n_max: usize,
    pub resolution: Vec<usize>,
    pub samples: usize,
    /// Share of samples whose forward and backward volume rates stay below
    /// `-a` for every horizon in `[N, n_max]`.
    pub cover: Vec<CoverPoint>,
    pub chosen_n: Option<usize>,
    pub target_reached: bool,
    pub c_boxes: usize,
    pub a_boxes: usize,
    pub a_lebesgue: f64,
    pub recurrence: Option<RecurrenceReport>,
}

/// First `N` such that `rates` stay below `-a` on `[N, n_max]`; rates are
/// cumulative log volumes at horizons `1..=n_max`.
fn first_good_horizon(fwd: &[f64], bwd: &[f64], a: f64) -> Option<usize> {
    let n_max = fwd.len();
    let mut n = n_max + 1;
    for m in (1..=n_max).rev() {
        let bad = fwd[m - 1] / m as f64 >= -a || bwd[m - 1] / m as f64 >= -a;
        if bad {
            break;
        }
        n = m;
    }
    (n <= n_max).then_some(n)
}

/// Builds the sets `C_N` of points whose future and past volume rates are
/// both below `-a` from time `N` on, picks the smallest `N` with
/// `Leb(C_N) >= 1 - delta`, removes from `C_N` the boxes reached by its
/// iterates `f^m(C_N)`, `N <= m <= n_max`, and tests the remainder for
/// returns with fresh samples.
pub fn nonrecurrence_diagnostic(
    spec: &SystemSpec,
    a: f64,
    delta: f64,
    n_max: usize,
    resolution: &[usize],
    per_axis: usize,
    seed: u64,
) -> Result<NonrecurrenceDiagnostic> {
    if !(a > 0.0) {
        return Err(Error::Domain(format!("rate threshold a must be positive, got {a}")));
    }
    if n_max == 0 || per_axis == 0 {
        return Err(Error::Domain("need n_max >= 1 and at least one sample per axis".into()));
    }
    let d = spec.dim();
    let full = BoxSet::full(spec.periods(), resolution)?;
    let samples = box_samples(&full, per_axis, seed);
    let per_box = per_axis.pow(d as u32);
    let first: Vec<Option<usize>> = samples
        .par_chunks(d)
        .map(|p| {
            let fwd = full_log_volumes(spec, p, n_max, Direction::Forward)?;
            let bwd = full_log_volumes(spec, p, n_max, Direction::Backward)?;
            Ok(first_good_horizon(&fwd, &bwd, a))
        })
        .collect::<Result<_>>()?;
    let total = first.len() as f64;
    let cover: Vec<CoverPoint> = (1..=n_max)
        .map(|n| CoverPoint {
            n,
            lebesgue: first.iter().filter(|f| f.is_some_and(|v| v <= n)).count() as f64 / total,
        })
        .collect();
    let target = 1.0 - delta;
    let best = cover.iter().map(|c| c.lebesgue).fold(0.0, f64::max);
    let chosen = cover
        .iter()
        .find(|c| c.lebesgue >= target)
        .or_else(|| cover.iter().find(|c| c.lebesgue == best && best > 0.0))
        .map(|c| c.n);
    let mut diag = NonrecurrenceDiagnostic {
        a,
        n_max,
        resolution: resolution.to_vec(),
        samples: first.len(),
        target_reached: best >= target,
        cover,
        chosen_n: chosen,
        c_boxes: 0,
        a_boxes: 0,
        a_lebesgue: 0.0,
        recurrence: None,
    };
    let Some(n0) = chosen else {
        return Ok(diag);
    };
    // a box belongs to C_N when all of its samples do
    let members: Vec<usize> = full
        .members()
        .iter()
        .enumerate()
        .filter(|(k, _)| first[k * per_box..(k + 1) * per_box].iter().all(|f| f.is_some_and(|v| v <= n0)))
        .map(|(_, b)| *b)
        .collect();
    let c_set = BoxSet::new(spec.periods(), resolution, members)?;
    diag.c_boxes = c_set.len();
    if c_set.is_empty() {
        return Ok(diag);
    }
    let mut cur = box_samples(&c_set, per_axis, seed);
    let mut reached = BTreeSet::new();
    for m in 1..=n_max {
        advance_all(spec, &mut cur)?;
        if m >= n0 {
            for p in cur.chunks_exact(d) {
                reached.insert(box_index(p, spec.periods(), resolution));
            }
        }
    }
    let a_set = c_set.difference(&BoxSet::new(spec.periods(), resolution, reached)?)?;
    diag.a_boxes = a_set.len();
    diag.a_lebesgue = a_set.lebesgue();
    if !a_set.is_empty() {
        diag.recurrence = Some(check_delta_recurrence(
            spec,
            &a_set,
            n0,
            n_max,
            per_axis,
            seed.wrapping_add(1),
        )?);
    }
    Ok(diag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::random_points;
    use crate::system::{cat_map, gourmelon_potrie, morse_smale_circle, product};

    #[test]
    fn fixed_point_is_a_dirac_mass() {
        let cat = cat_map();
        let m = empirical_measure(&cat, &cat.point(vec![0.0, 0.0]).unwrap(), 50, &[4, 4]).unwrap();
        assert_eq!(m.weights[0], 1.0);
        assert_eq!(m.support(), vec![0]);
    }

    #[test]
    fn distance_examples() {
        let res = [16, 16];
        let per = [1.0, 1.0];
        let a = EmpiricalMeasure::of_points(&[0.01, 0.01], &per, &res).unwrap();
        let b = EmpiricalMeasure::of_points(&[0.51, 0.51], &per, &res).unwrap();
        assert_eq!(measure_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(measure_distance(&a, &b).unwrap(), 1.0);
        let uniform: Vec<f64> = (0..256)
            .flat_map(|i| [(i / 16) as f64 / 16.0 + 0.01, (i % 16) as f64 / 16.0 + 0.01])
            .collect();
        let u = EmpiricalMeasure::of_points(&uniform, &per, &res).unwrap();
        assert!((measure_distance(&u, &a).unwrap() - (1.0 - 1.0 / 256.0)).abs() < 1e-15);
        let c = EmpiricalMeasure::of_points(&[0.1, 0.1], &per, &[8, 8]).unwrap();
        assert!(measure_distance(&a, &c).is_err());
    }

    #[test]
    fn coarsening_merges_boxes() {
        let m = EmpiricalMeasure::of_points(&[0.1, 0.1, 0.3, 0.1, 0.9, 0.9], &[1.0, 1.0], &[4, 4]).unwrap();
        let c = m.coarsen().unwrap();
        assert_eq!(c.resolution, vec![2, 2]);
        assert!((c.weights[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.weights[3] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn cat_map_equidistributes() {
        let cat = cat_map();
        let x = random_points(&[1.0, 1.0], 1, 11).remove(0);
        let m = empirical_measure(&cat, &x, 1_000_000, &[16, 16]).unwrap();
        let p = 1.0 / 256.0;
        // 4.5 standard deviations: the largest of 256 box deviations
        // routinely exceeds 3
        let tol = 4.5 * p / (1_000_000.0f64 / 256.0).sqrt();
        assert!(m.weights.iter().all(|w| (w - p).abs() < tol));
        assert!((m.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn product_mass_sits_on_the_sink_circle() {
        let f = product(&morse_smale_circle(0.5).unwrap(), &cat_map()).unwrap();
        let x = f.point(vec![0.3, 0.2, 0.7]).unwrap();
        let res = [8, 4, 4];
        let m = empirical_measure(&f, &x, 100_000, &res).unwrap();
        let on_sink = m.mass_on(|i| {
            let c = box_coords(i, &res);
            c[0] == 0 || c[0] == 7
        });
        assert!(on_sink > 0.95);
    }

    #[test]
    fn pomega_of_a_fixed_point() {
        let cat = cat_map();
        let r = pomega_approx(&cat, &cat.point(vec![0.0, 0.0]).unwrap(), &[10, 100, 1000], &[4, 4], 0.05).unwrap();
        assert!(r.converged);
        assert_eq!(r.clusters[0].representative.weights[0], 1.0);
    }

    #[test]
    fn gp_candidates_live_on_the_attracting_circle() {
        let gp = gourmelon_potrie(0.5, 0.25).unwrap();
        let pts = random_points(&[2.0, 2.0], 24, 5);
        let res = [8, 8];
        let r = srb_like_candidates(&gp, &pts, 400, 0.1, &res, 0.05).unwrap();
        let near_circle = |i: usize| {
            let c = box_coords(i, &res);
            c[0] == 3 || c[0] == 4
        };
        for c in &r.candidates {
            assert!(c.representative.mass_on(near_circle) > 0.9);
        }
        let total: usize = r.candidates.iter().map(|c| c.cluster_size).sum();
        assert_eq!(total, 24);
    }

    #[test]
    fn box_set_csv_round_trip() {
        let s = BoxSet::new(&[1.0, 2.0], &[4, 3], [0, 5, 11]).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# resolution=4 3;periods=1 2\nbox,i1,i2\n0,0,0\n5,1,2\n"));
        let back = BoxSet::read_csv(&buf[..]).unwrap();
        assert_eq!(back, s);
        let bad = b"# resolution=4 3;periods=1 2\nbox,i1,i2\n99,0,0\n";
        assert!(BoxSet::read_csv(&bad[..]).is_err());
    }

    #[test]
    fn full_torus_returns_every_time() {
        let cat = cat_map();
        let full = BoxSet::full(&[1.0, 1.0], &[4, 4]).unwrap();
        let r = check_delta_recurrence(&cat, &full, 1, 20, 2, 0).unwrap();
        assert_eq!(r.hits.len(), 20);
        assert_eq!(r.verdict, RecurrenceVerdict::RecurrentEvidence);
        for h in &r.hits {
            let replay = orbit_raw(&cat, &h.preimage, h.n, Direction::Forward).unwrap();
            assert_eq!(&replay[h.n * 2..], &h.witness[..]);
        }
    }

    #[test]
    fn cat_map_has_no_shrinking_sets() {
        let cat = cat_map();
        let d = nonrecurrence_diagnostic(&cat, 0.1, 0.1, 20, &[4, 4], 2, 0).unwrap();
        assert!(d.cover.iter().all(|c| c.lebesgue == 0.0));
        assert!(d.chosen_n.is_none());
    }
}
