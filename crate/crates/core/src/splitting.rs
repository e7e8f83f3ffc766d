//! Invariant bundles `E`, `F` and their certification.
//!
//! `F(x)` is estimated as the limit of `Df^n(f^{-n} x)` applied to a generic
//! seed, and `E(x)` as the limit of `Df^{-n}(f^n x)`: block power iteration
//! on the derivative cocycle, with the change between horizons `n/2` and `n`
//! recorded as the convergence gap.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::cocycle::Direction;
use crate::error::{Error, Result};
use crate::manifold::{
    orthonormalize, restricted_min_norm, restricted_norm, singular_values, subspace_angle, subspace_gap,
    Subspace, TorusPoint,
};
use crate::system::{SystemSpec, MAX_DIM};

/// Knobs for bundle estimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameConfig {
    pub dim_f: usize,
    /// First horizon tried; doubled until the gap is below `tolerance`.
    pub horizon: usize,
    pub max_horizon: usize,
    pub tolerance: f64,
}

impl FrameConfig {
    pub fn new(dim_f: usize) -> Self {
        FrameConfig {
            dim_f,
            horizon: 16,
            max_horizon: 512,
            tolerance: 1e-8,
        }
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self.max_horizon = self.max_horizon.max(horizon);
        self
    }
}

/// Bundles at one point.
#[derive(Debug, Clone, Serialize)]
pub struct SplittingFrame {
    pub at: TorusPoint,
    #[serde(serialize_with = "ser_subspace")]
    pub e: Subspace,
    #[serde(serialize_with = "ser_subspace")]
    pub f: Subspace,
    pub horizon: usize,
    pub gap: f64,
}

fn ser_subspace<S: serde::Serializer>(s: &Subspace, ser: S) -> std::result::Result<S::Ok, S::Error> {
    serde::Serialize::serialize(&s.vectors(), ser)
}

/// Orbit with the Jacobians of the map in the orbit's direction and their
/// inverses (which are the Jacobians of the opposite map at the next point).
struct OrbitJacobians {
    direction: Direction,
    points: Vec<Vec<f64>>,
    jacs: Vec<DMatrix<f64>>,
    inv_jacs: Vec<DMatrix<f64>>,
}

impl OrbitJacobians {
    fn new(x: &[f64], direction: Direction) -> Self {
        OrbitJacobians {
            direction,
            points: vec![x.to_vec()],
            jacs: Vec::new(),
            inv_jacs: Vec::new(),
        }
    }

    fn extend_to(&mut self, spec: &SystemSpec, n: usize) -> Result<()> {
        let d = spec.dim();
        let mut next = [0.0; MAX_DIM];
        let mut jac = [0.0; MAX_DIM * MAX_DIM];
        while self.jacs.len() < n {
            let cur = self.points.last().expect("orbit has a base point");
            match self.direction {
                Direction::Forward => spec.map_jacobian_raw(cur, &mut next[..d], &mut jac[..d * d])?,
                Direction::Backward => spec.inverse_jacobian_raw(cur, &mut next[..d], &mut jac[..d * d])?,
            }
            let j = DMatrix::from_row_slice(d, d, &jac[..d * d]);
            let inv = j.clone().try_inverse().ok_or_else(|| {
                Error::DegenerateCocycle(format!("singular Jacobian of `{}` at {cur:?}", spec.name()))
            })?;
            self.points.push(next[..d].to_vec());
            self.jacs.push(j);
            self.inv_jacs.push(inv);
        }
        Ok(())
    }
}

/// Deterministic full-rank seed with no special alignment.
fn generic_seed(d: usize, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, k, |i, j| (1.3 + 2.1 * i as f64 + 0.7 * j as f64 + 0.37 * (i * j) as f64).sin() + if i == j { 0.5 } else { 0.0 })
}

/// Transports `seed` from the far end of the orbit back to its base by the
/// inverses of the recorded Jacobians: `inv(J_0) ... inv(J_{n-1}) seed`.
fn transport_back(inv_jacs: &[DMatrix<f64>], n: usize, seed: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut q = seed.clone();
    orthonormalize(&mut q, None)?;
    for inv in inv_jacs[..n].iter().rev() {
        q = inv * q;
        orthonormalize(&mut q, None)?;
    }
    Ok(q)
}

fn check_dims(spec: &SystemSpec, dim_f: usize) -> Result<()> {
    let d = spec.dim();
    if dim_f == 0 || dim_f >= d {
        return Err(Error::Domain(format!(
            "dim F = {dim_f} must satisfy 1 <= dim F < {d}"
        )));
    }
    Ok(())
}

/// Estimates `E(x)` and `F(x)` with default tolerances and initial horizon `n`.
pub fn estimate_bundles(spec: &SystemSpec, x: &TorusPoint, dim_f: usize, n: usize) -> Result<SplittingFrame> {
    estimate_bundles_with(spec, x, &FrameConfig::new(dim_f).with_horizon(n))
}

pub fn estimate_bundles_with(spec: &SystemSpec, x: &TorusPoint, cfg: &FrameConfig) -> Result<SplittingFrame> {
    spec.check_point(x)?;
    check_dims(spec, cfg.dim_f)?;
    if cfg.horizon == 0 {
        return Err(Error::Domain("horizon must be at least 1".into()));
    }
    let d = spec.dim();
    let seed_f = generic_seed(d, cfg.dim_f);
    let seed_e = generic_seed(d, d - cfg.dim_f);
    let mut back = OrbitJacobians::new(x.coords(), Direction::Backward);
    let mut fwd = OrbitJacobians::new(x.coords(), Direction::Forward);
    let mut n = cfg.horizon.max(2);
    loop {
        back.extend_to(spec, n)?;
        fwd.extend_to(spec, n)?;
        // F: push forward along the backward orbit, i.e. undo the inverse steps
        let f_full = transport_back(&back.inv_jacs, n, &seed_f)?;
        let f_half = transport_back(&back.inv_jacs, n / 2, &seed_f)?;
        let e_full = transport_back(&fwd.inv_jacs, n, &seed_e)?;
        let e_half = transport_back(&fwd.inv_jacs, n / 2, &seed_e)?;
        let f = Subspace::from_orthonormal(f_full)?;
        let e = Subspace::from_orthonormal(e_full)?;
        let gap = subspace_gap(&f, &Subspace::from_orthonormal(f_half)?)?
            .max(subspace_gap(&e, &Subspace::from_orthonormal(e_half)?)?);
        if gap <= cfg.tolerance {
            let angle = subspace_angle(&e, &f)?;
            if angle <= 1e-6 {
                return Err(Error::InconclusiveFrame {
                    point: x.coords().to_vec(),
                    gap: angle,
                    horizon: n,
                });
            }
            return Ok(SplittingFrame {
                at: x.clone(),
                e,
                f,
                horizon: n,
                gap,
            });
        }
        if n >= cfg.max_horizon {
            return Err(Error::InconclusiveFrame {
                point: x.coords().to_vec(),
                gap,
                horizon: n,
            });
        }
        n = (2 * n).min(cfg.max_horizon);
    }
}

/// Frames at many points; failures are kept with their error.
#[derive(Debug, Clone, Default)]
pub struct FrameSet {
    pub frames: Vec<SplittingFrame>,
    pub failures: Vec<(TorusPoint, Error)>,
}

pub fn estimate_frames(spec: &SystemSpec, points: &[TorusPoint], cfg: &FrameConfig) -> Result<FrameSet> {
    check_dims(spec, cfg.dim_f)?;
    let results: Vec<Result<SplittingFrame>> = points
        .par_iter()
        .map(|p| estimate_bundles_with(spec, p, cfg))
        .collect();
    let mut set = FrameSet::default();
    for (p, r) in points.iter().zip(results) {
        match r {
            Ok(f) => set.frames.push(f),
            Err(e @ Error::InconclusiveFrame { .. }) | Err(e @ Error::DegenerateCocycle(_)) => {
                set.failures.push((p.clone(), e))
            }
            Err(e) => return Err(e),
        }
    }
    Ok(set)
}

/// Bundles along an orbit segment.
///
/// Forward segments `x, f(x), ..., f^n(x)` carry `F` pushed forward from `x`
/// and `E` pulled back from beyond `f^n(x)`; backward segments
/// `x, f^{-1}(x), ...` carry `E` pushed by `Df^{-1}` and `F` pulled back from
/// beyond `f^{-n}(x)`. Every transport runs in its stable direction, so the
/// frames stay accurate for any `n`.
#[derive(Debug, Clone)]
pub struct OrbitFrames {
    pub direction: Direction,
    pub points: Vec<TorusPoint>,
    pub e: Vec<Subspace>,
    pub f: Vec<Subspace>,
    /// Jacobian of the map in the segment's direction at each point, `i < n`.
    pub jacobians: Vec<DMatrix<f64>>,
    /// `J_i P_i = P_{i+1} pushed_factors[i]` for the pushed bundle `P`.
    pub pushed_factors: Vec<DMatrix<f64>>,
    /// `J_i^{-1} Q_{i+1} = Q_i pulled_factors[i]` for the pulled bundle `Q`.
    pub pulled_factors: Vec<DMatrix<f64>>,
    pub horizon: usize,
}

pub fn frames_along_orbit(spec: &SystemSpec, frame: &SplittingFrame, n: usize) -> Result<OrbitFrames> {
    frames_along(spec, frame, n, Direction::Forward)
}

pub fn frames_along(
    spec: &SystemSpec,
    frame: &SplittingFrame,
    n: usize,
    direction: Direction,
) -> Result<OrbitFrames> {
    let h = frame.horizon.max(2);
    let mut orbit = OrbitJacobians::new(frame.at.coords(), direction);
    orbit.extend_to(spec, n + h)?;
    let (start, pulled_dim) = match direction {
        Direction::Forward => (&frame.f, frame.e.dim()),
        Direction::Backward => (&frame.e, frame.f.dim()),
    };

    let mut basis = start.basis().clone();
    let mut pushed = vec![start.clone()];
    let mut pushed_factors = Vec::with_capacity(n);
    for j in &orbit.jacs[..n] {
        let mut m = j * &basis;
        let mut r = DMatrix::zeros(0, 0);
        orthonormalize(&mut m, Some(&mut r))?;
        pushed.push(Subspace::from_orthonormal(m.clone())?);
        pushed_factors.push(r);
        basis = m;
    }

    let seed = generic_seed(spec.dim(), pulled_dim);
    let mut basis = transport_back(&orbit.inv_jacs[n..], h, &seed)?;
    let mut pulled = vec![Subspace::from_orthonormal(basis.clone())?];
    let mut pulled_factors = Vec::with_capacity(n);
    for inv in orbit.inv_jacs[..n].iter().rev() {
        let mut m = inv * &basis;
        let mut r = DMatrix::zeros(0, 0);
        orthonormalize(&mut m, Some(&mut r))?;
        pulled.push(Subspace::from_orthonormal(m.clone())?);
        pulled_factors.push(r);
        basis = m;
    }
    pulled.reverse();
    pulled_factors.reverse();

    let (e, f) = match direction {
        Direction::Forward => (pulled, pushed),
        Direction::Backward => (pushed, pulled),
    };
    let periods = spec.periods().to_vec();
    Ok(OrbitFrames {
        direction,
        points: orbit.points[..=n]
            .iter()
            .map(|c| TorusPoint::from_normalized(c.clone(), periods.clone()))
            .collect(),
        e,
        f,
        jacobians: orbit.jacs[..n].to_vec(),
        pushed_factors,
        pulled_factors,
        horizon: h,
    })
}

impl OrbitFrames {
    pub fn len(&self) -> usize {
        self.jacobians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jacobians.is_empty()
    }

    /// `log m(J^m|P)` for the pushed bundle, `m = 1..=n`.
    pub fn pushed_log_conorms(&self) -> Vec<f64> {
        let k = self.pushed_factors.first().map_or(0, |r| r.nrows());
        let mut acc = DMatrix::<f64>::identity(k, k);
        let mut log_scale = 0.0;
        let mut out = Vec::with_capacity(self.len());
        for r in &self.pushed_factors {
            acc = r * acc;
            rescale(&mut acc, &mut log_scale);
            out.push(singular_values(&acc).last().copied().unwrap_or(0.0).ln() + log_scale);
        }
        out
    }

    /// `log ||J^m|Q||` for the pulled bundle, `m = 1..=n`.
    pub fn pulled_log_norms(&self) -> Vec<f64> {
        let k = self.pulled_factors.first().map_or(0, |r| r.nrows());
        let mut acc = DMatrix::<f64>::identity(k, k);
        let mut log_scale = 0.0;
        let mut out = Vec::with_capacity(self.len());
        for r in &self.pulled_factors {
            acc = &acc * r;
            rescale(&mut acc, &mut log_scale);
            // J^m acts on the pulled bundle as the inverse of the accumulated factor
            out.push(-(singular_values(&acc).last().copied().unwrap_or(0.0).ln() + log_scale));
        }
        out
    }

    /// `log |det J^m|P|` for the pushed bundle, `m = 1..=n`.
    pub fn pushed_log_volumes(&self) -> Vec<f64> {
        cumulative_log_diag(&self.pushed_factors, 1.0)
    }

    /// `log |det J^m|Q|` for the pulled bundle, `m = 1..=n`.
    pub fn pulled_log_volumes(&self) -> Vec<f64> {
        cumulative_log_diag(&self.pulled_factors, -1.0)
    }

    /// `log ||Df^m|E(x)||` along a forward segment.
    pub fn e_log_norms(&self) -> Vec<f64> {
        debug_assert_eq!(self.direction, Direction::Forward);
        self.pulled_log_norms()
    }

    /// `log m(Df^m|F(x))` along a forward segment.
    pub fn f_log_conorms(&self) -> Vec<f64> {
        debug_assert_eq!(self.direction, Direction::Forward);
        self.pushed_log_conorms()
    }
}

fn cumulative_log_diag(factors: &[DMatrix<f64>], sign: f64) -> Vec<f64> {
    let mut s = 0.0;
    factors
        .iter()
        .map(|r| {
            s += sign * (0..r.nrows()).map(|i| r[(i, i)].ln()).sum::<f64>();
            s
        })
        .collect()
}

fn rescale(m: &mut DMatrix<f64>, log_scale: &mut f64) {
    let big = m.amax();
    if big > 0.0 && !(1e-100..=1e100).contains(&big) {
        *m /= big;
        *log_scale += big.ln();
    }
}

// ---------------------------------------------------------------------------
// Domination

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Certified,
    Failed,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct DominationSample {
    pub point: Vec<f64>,
    pub ratio: f64,
}

/// Sampled domination ratios `||Df^k|E|| / m(Df^k|F)`. "Certified" means
/// certified on the listed sample, not a proof over the whole torus.
#[derive(Debug, Clone, Serialize)]
pub struct DominationCertificate {
    pub k: usize,
    pub samples: Vec<DominationSample>,
    pub max_ratio: f64,
    pub sigma_inferred: f64,
    pub verdict: Verdict,
    pub worst_point: Option<Vec<f64>>,
    pub excluded: usize,
    /// Smallest block length whose maximal ratio is below one, searched up
    /// to [`MAX_BLOCK_LENGTH`].
    pub min_certifying_k: Option<usize>,
}

pub const MAX_BLOCK_LENGTH: usize = 8;

fn block_jacobian(spec: &SystemSpec, x: &[f64], k: usize) -> Result<DMatrix<f64>> {
    let d = spec.dim();
    let mut cur = x.to_vec();
    let mut next = [0.0; MAX_DIM];
    let mut jac = [0.0; MAX_DIM * MAX_DIM];
    let mut acc = DMatrix::<f64>::identity(d, d);
    for _ in 0..k {
        spec.map_jacobian_raw(&cur, &mut next[..d], &mut jac[..d * d])?;
        acc = DMatrix::from_row_slice(d, d, &jac[..d * d]) * acc;
        cur.copy_from_slice(&next[..d]);
    }
    Ok(acc)
}

fn ratios(spec: &SystemSpec, frames: &[SplittingFrame], k: usize) -> Result<Vec<f64>> {
    frames
        .par_iter()
        .map(|fr| {
            let a = block_jacobian(spec, fr.at.coords(), k)?;
            Ok(restricted_norm(&a, &fr.e)? / restricted_min_norm(&a, &fr.f)?)
        })
        .collect()
}

fn max_of(rs: &[f64]) -> (f64, Option<usize>) {
    rs.iter()
        .enumerate()
        .fold((f64::NEG_INFINITY, None), |(m, at), (i, &r)| {
            if r > m || r.is_nan() {
                (r, Some(i))
            } else {
                (m, at)
            }
        })
}

pub fn check_domination(spec: &SystemSpec, set: &FrameSet, k: usize) -> Result<DominationCertificate> {
    if k == 0 {
        return Err(Error::Domain("block length k must be at least 1".into()));
    }
    let frames = &set.frames;
    let excluded = set.failures.len();
    if frames.is_empty() {
        return Ok(DominationCertificate {
            k,
            samples: Vec::new(),
            max_ratio: f64::NAN,
            sigma_inferred: f64::NAN,
            verdict: Verdict::Inconclusive,
            worst_point: None,
            excluded,
            min_certifying_k: None,
        });
    }
    let rs = ratios(spec, frames, k)?;
    let (max_ratio, worst) = max_of(&rs);
    let mut min_k = None;
    for kk in 1..=MAX_BLOCK_LENGTH.max(k) {
        let m = if kk == k { max_ratio } else { max_of(&ratios(spec, frames, kk)?).0 };
        if m < 1.0 {
            min_k = Some(kk);
            break;
        }
        if kk >= MAX_BLOCK_LENGTH && kk >= k {
            break;
        }
    }
    let verdict = if !(max_ratio < 1.0) {
        Verdict::Failed
    } else if excluded > 0 {
        Verdict::Inconclusive
    } else {
        Verdict::Certified
    };
    Ok(DominationCertificate {
        k,
        samples: frames
            .iter()
            .zip(&rs)
            .map(|(f, r)| DominationSample {
                point: f.at.coords().to_vec(),
                ratio: *r,
            })
            .collect(),
        max_ratio,
        sigma_inferred: max_ratio.powf(-1.0 / k as f64),
        verdict,
        worst_point: worst.map(|i| frames[i].at.coords().to_vec()),
        excluded,
        min_certifying_k: min_k,
    })
}

// ---------------------------------------------------------------------------
// Partial hyperbolicity

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum HyperbolicityMode {
    EContracting,
    FExpanding,
    Neither,
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthSample {
    pub point: Vec<f64>,
    /// `log ||Df^m|E||`, `m = 1..=n_max`.
    pub e_log_norms: Vec<f64>,
    /// `log m(Df^m|F)`, `m = 1..=n_max`.
    pub f_log_conorms: Vec<f64>,
    pub e_slope: f64,
    pub f_slope: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HyperbolicityCertificate {
    pub mode: HyperbolicityMode,
    pub c: Option<f64>,
    pub alpha_inferred: Option<f64>,
    /// Largest fitted slope of `log ||Df^n|E||` over the samples.
    pub worst_e_slope: f64,
    /// Smallest fitted slope of `log m(Df^n|F)` over the samples.
    pub worst_f_slope: f64,
    pub margin: f64,
    pub n_max: usize,
    pub samples: Vec<GrowthSample>,
}

/// Least-squares slope of `ys` against `1..=ys.len()`.
pub fn fit_slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    if ys.len() < 2 {
        return ys.first().copied().unwrap_or(0.0);
    }
    let mx = (n + 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = (i + 1) as f64 - mx;
        sxy += dx * (y - my);
        sxx += dx * dx;
    }
    sxy / sxx
}

pub const DEFAULT_HYPERBOLICITY_MARGIN: f64 = 0.05;

pub fn check_partial_hyperbolicity(
    spec: &SystemSpec,
    set: &FrameSet,
    n_max: usize,
    margin: f64,
) -> Result<HyperbolicityCertificate> {
    if n_max < 2 {
        return Err(Error::Domain("n_max must be at least 2".into()));
    }
    if set.frames.is_empty() {
        return Err(Error::Uncertified("no frames to test".into()));
    }
    let samples: Vec<GrowthSample> = set
        .frames
        .par_iter()
        .map(|fr| {
            let of = frames_along_orbit(spec, fr, n_max)?;
            let e_log_norms = of.e_log_norms();
            let f_log_conorms = of.f_log_conorms();
            Ok(GrowthSample {
                point: fr.at.coords().to_vec(),
                e_slope: fit_slope(&e_log_norms),
                f_slope: fit_slope(&f_log_conorms),
                e_log_norms,
                f_log_conorms,
            })
        })
        .collect::<Result<_>>()?;
    let worst_e = samples.iter().map(|s| s.e_slope).fold(f64::NEG_INFINITY, f64::max);
    let worst_f = samples.iter().map(|s| s.f_slope).fold(f64::INFINITY, f64::min);
    let threshold = (1.0 + margin).ln();
    let mode = if worst_f > threshold {
        HyperbolicityMode::FExpanding
    } else if worst_e < -threshold {
        HyperbolicityMode::EContracting
    } else {
        HyperbolicityMode::Neither
    };
    let (alpha, c) = match mode {
        HyperbolicityMode::Neither => (None, None),
        HyperbolicityMode::FExpanding => {
            let la = worst_f;
            let c = samples
                .iter()
                .flat_map(|s| s.f_log_conorms.iter().enumerate().map(|(i, v)| (i + 1) as f64 * la - v))
                .fold(0.0f64, f64::max)
                .exp();
            (Some(la.exp()), Some(c))
        }
        HyperbolicityMode::EContracting => {
            let la = -worst_e;
            let c = samples
                .iter()
                .flat_map(|s| s.e_log_norms.iter().enumerate().map(|(i, v)| v + (i + 1) as f64 * la))
                .fold(0.0f64, f64::max)
                .exp();
            (Some(la.exp()), Some(c))
        }
    };
    Ok(HyperbolicityCertificate {
        mode,
        c,
        alpha_inferred: alpha,
        worst_e_slope: worst_e,
        worst_f_slope: worst_f,
        margin,
        n_max,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::uniform_grid;
    use crate::system::{cat_map, gourmelon_potrie, morse_smale_circle, product};

    fn eig_cat() -> (Subspace, Subspace) {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]);
        let eig = m.symmetric_eigen();
        let (iu, is) = if eig.eigenvalues[0] > eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
        let u = Subspace::from_columns(eig.eigenvectors.columns(iu, 1).into_owned()).unwrap();
        let s = Subspace::from_columns(eig.eigenvectors.columns(is, 1).into_owned()).unwrap();
        (s, u)
    }

    #[test]
    fn cat_map_bundles_are_eigendirections() {
        let cat = cat_map();
        let (s, u) = eig_cat();
        let fr = estimate_bundles(&cat, &cat.point(vec![0.31, 0.77]).unwrap(), 1, 40).unwrap();
        assert!(subspace_gap(&fr.f, &u).unwrap() < 1e-10);
        assert!(subspace_gap(&fr.e, &s).unwrap() < 1e-10);
    }

    #[test]
    fn gp_bundles_on_the_repelling_circle() {
        let gp = gourmelon_potrie(0.5, 0.25).unwrap();
        let fr = estimate_bundles(&gp, &gp.point(vec![0.0, 0.4]).unwrap(), 1, 16).unwrap();
        let h = Subspace::span(&[vec![1.0, 0.0]]).unwrap();
        let v = Subspace::span(&[vec![0.0, 1.0]]).unwrap();
        assert!(subspace_gap(&fr.f, &h).unwrap() < 1e-8);
        assert!(subspace_gap(&fr.e, &v).unwrap() < 1e-8);
    }

    #[test]
    fn product_unstable_bundle() {
        let f = product(&morse_smale_circle(0.5).unwrap(), &cat_map()).unwrap();
        let (_, u) = eig_cat();
        let uv = u.vectors()[0].clone();
        let u3 = Subspace::span(&[vec![0.0, uv[0], uv[1]]]).unwrap();
        for c in [[0.1, 0.2, 0.3], [0.5, 0.5, 0.5], [0.77, 0.01, 0.9]] {
            let fr = estimate_bundles(&f, &f.point(c.to_vec()).unwrap(), 1, 32).unwrap();
            assert!(subspace_gap(&fr.f, &u3).unwrap() < 1e-8, "{c:?}");
        }
    }

    #[test]
    fn cat_map_domination_ratio() {
        let cat = cat_map();
        let pts = uniform_grid(&[1.0, 1.0], &[5, 5]).unwrap();
        let set = estimate_frames(&cat, &pts, &FrameConfig::new(1)).unwrap();
        let cert = check_domination(&cat, &set, 1).unwrap();
        let sigma2 = (3.0 + 5f64.sqrt()) / 2.0;
        assert!((cert.max_ratio - sigma2.powi(-2)).abs() < 1e-9);
        assert!((cert.sigma_inferred - sigma2 * sigma2).abs() < 1e-7);
        assert_eq!(cert.verdict, Verdict::Certified);
        assert_eq!(cert.min_certifying_k, Some(1));
    }

    #[test]
    fn cat_map_is_f_expanding() {
        let cat = cat_map();
        let pts = uniform_grid(&[1.0, 1.0], &[3, 3]).unwrap();
        let set = estimate_frames(&cat, &pts, &FrameConfig::new(1)).unwrap();
        let cert = check_partial_hyperbolicity(&cat, &set, 20, DEFAULT_HYPERBOLICITY_MARGIN).unwrap();
        let sigma2 = (3.0 + 5f64.sqrt()) / 2.0;
        assert_eq!(cert.mode, HyperbolicityMode::FExpanding);
        assert!((cert.alpha_inferred.unwrap() - sigma2).abs() < 1e-6);
        assert!((cert.worst_e_slope + sigma2.ln()).abs() < 1e-6);
    }

    #[test]
    fn slope_fit_is_exact_on_lines() {
        let ys: Vec<f64> = (1..=10).map(|m| 3.0 - 0.5 * m as f64).collect();
        assert!((fit_slope(&ys) + 0.5).abs() < 1e-14);
    }
}
