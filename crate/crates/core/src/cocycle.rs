//! Orbits and QR-stabilized products of Jacobians along them.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::manifold::{orthonormalize, singular_values, Subspace, TorusPoint};
use crate::system::{SystemSpec, MAX_DIM};

/// Longest orbit segment [`iterate`] will build.
pub const MAX_ORBIT_LENGTH: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn of(n: i64) -> Direction {
        if n < 0 {
            Direction::Backward
        } else {
            Direction::Forward
        }
    }

    pub fn reversed(self) -> Direction {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }
}

/// `x, f(x), ..., f^n(x)` (or the preimages for backward segments).
#[derive(Debug, Clone, Serialize)]
pub struct OrbitSegment {
    pub base: TorusPoint,
    pub direction: Direction,
    pub points: Vec<TorusPoint>,
}

impl OrbitSegment {
    pub fn len(&self) -> usize {
        self.points.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.points.len() <= 1
    }

    pub fn last(&self) -> &TorusPoint {
        self.points.last().expect("segments hold at least the base point")
    }
}

fn check_length(n: usize) -> Result<()> {
    if n > MAX_ORBIT_LENGTH {
        return Err(Error::Budget {
            message: format!("orbit length {n} exceeds the maximum {MAX_ORBIT_LENGTH}"),
            suggestion: format!("use at most {MAX_ORBIT_LENGTH} iterates"),
        });
    }
    Ok(())
}

/// Orbit segment of `|n|` steps; negative `n` iterates the inverse map.
pub fn iterate(spec: &SystemSpec, x: &TorusPoint, n: i64) -> Result<OrbitSegment> {
    spec.check_point(x)?;
    let steps = n.unsigned_abs() as usize;
    check_length(steps)?;
    let direction = Direction::of(n);
    let flat = orbit_raw(spec, x.coords(), steps, direction)?;
    let d = spec.dim();
    let points = flat
        .chunks_exact(d)
        .map(|c| TorusPoint::from_normalized(c.to_vec(), spec.periods().to_vec()))
        .collect();
    Ok(OrbitSegment {
        base: x.clone(),
        direction,
        points,
    })
}

/// Flat `(steps + 1) * d` array of orbit coordinates.
pub fn orbit_raw(spec: &SystemSpec, x: &[f64], steps: usize, direction: Direction) -> Result<Vec<f64>> {
    let d = spec.dim();
    let mut out = Vec::with_capacity((steps + 1) * d);
    out.extend_from_slice(&x[..d]);
    let mut next = [0.0; MAX_DIM];
    for i in 0..steps {
        let cur = &out[i * d..(i + 1) * d];
        match direction {
            Direction::Forward => spec.map_raw(cur, &mut next[..d])?,
            Direction::Backward => spec.inverse_raw(cur, &mut next[..d])?,
        }
        out.extend_from_slice(&next[..d]);
    }
    Ok(out)
}

/// Step-by-step QR factorization of `Df^n(x) S` for an orthonormal seed `S`.
///
/// After `n` steps, `Df^n(x) S = Q R exp(log_scale)` with `Q` orthonormal
/// (`d x k`) and `R` upper triangular with positive diagonal. The running sums
/// of `log R_ii` are kept separately so no quantity ever overflows.
#[derive(Debug, Clone)]
pub struct CocycleWalker<'a> {
    spec: &'a SystemSpec,
    direction: Direction,
    point: Vec<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    log_scale: f64,
    log_diag: Vec<f64>,
    last_r: DMatrix<f64>,
    steps: usize,
}

impl<'a> CocycleWalker<'a> {
    pub fn new(spec: &'a SystemSpec, x: &[f64], seed: &DMatrix<f64>, direction: Direction) -> Result<Self> {
        let d = spec.dim();
        if seed.nrows() != d || seed.ncols() == 0 || seed.ncols() > d {
            return Err(Error::Dimension(format!(
                "seed of shape {}x{} for dimension {d}",
                seed.nrows(),
                seed.ncols()
            )));
        }
        let k = seed.ncols();
        let mut q = seed.clone();
        orthonormalize(&mut q, None)?;
        Ok(CocycleWalker {
            spec,
            direction,
            point: x[..d].to_vec(),
            q,
            r: DMatrix::identity(k, k),
            log_scale: 0.0,
            log_diag: vec![0.0; k],
            last_r: DMatrix::identity(k, k),
            steps: 0,
        })
    }

    /// Advances one step, evaluating the Jacobian along the way.
    pub fn step(&mut self) -> Result<()> {
        let d = self.spec.dim();
        let mut next = [0.0; MAX_DIM];
        let mut jac = [0.0; MAX_DIM * MAX_DIM];
        match self.direction {
            Direction::Forward => self.spec.map_jacobian_raw(&self.point, &mut next[..d], &mut jac[..d * d])?,
            Direction::Backward => {
                self.spec
                    .inverse_jacobian_raw(&self.point, &mut next[..d], &mut jac[..d * d])?
            }
        }
        let j = DMatrix::from_row_slice(d, d, &jac[..d * d]);
        self.apply(&j, &next[..d])
    }

    /// Advances one step with a caller-supplied Jacobian and image point.
    pub fn apply(&mut self, jac: &DMatrix<f64>, next: &[f64]) -> Result<()> {
        let mut m = jac * &self.q;
        let mut rs = DMatrix::zeros(0, 0);
        orthonormalize(&mut m, Some(&mut rs)).map_err(|_| {
            Error::DegenerateCocycle(format!(
                "Jacobian of `{}` is singular near {:?}",
                self.spec.name(),
                self.point
            ))
        })?;
        for (acc, i) in self.log_diag.iter_mut().zip(0..) {
            *acc += rs[(i, i)].ln();
        }
        self.r = &rs * &self.r;
        let big = self.r.amax();
        if !(1e-100..=1e100).contains(&big) {
            self.r /= big;
            self.log_scale += big.ln();
        }
        self.q = m;
        self.last_r = rs;
        self.point.copy_from_slice(next);
        self.steps += 1;
        Ok(())
    }

    pub fn point(&self) -> &[f64] {
        &self.point
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Triangular factor of the most recent step alone.
    pub fn last_r(&self) -> &DMatrix<f64> {
        &self.last_r
    }

    pub fn log_diag(&self) -> &[f64] {
        &self.log_diag
    }

    /// `log` of the volume expansion along the seed span.
    pub fn log_volume(&self) -> f64 {
        self.log_diag.iter().sum()
    }

    /// Logs of the singular values of the accumulated product on the seed
    /// span, descending.
    pub fn log_singular_values(&self) -> Vec<f64> {
        singular_values(&self.r)
            .into_iter()
            .map(|s| s.ln() + self.log_scale)
            .collect()
    }

    pub fn into_product(self, base: TorusPoint) -> CocycleProduct {
        let periods = self.spec.periods().to_vec();
        CocycleProduct {
            base,
            end: TorusPoint::from_normalized(self.point, periods),
            direction: self.direction,
            n: self.steps,
            q: self.q,
            r: self.r,
            log_scale: self.log_scale,
            log_diag: self.log_diag,
        }
    }
}

/// `Df^n(x)` (or `Df^{-n}(x)`) in factored form `Q R exp(log_scale)`.
#[derive(Debug, Clone)]
pub struct CocycleProduct {
    pub base: TorusPoint,
    pub end: TorusPoint,
    pub direction: Direction,
    pub n: usize,
    pub q: DMatrix<f64>,
    /// Upper-triangular factor, divided by `exp(log_scale)`.
    pub r: DMatrix<f64>,
    pub log_scale: f64,
    /// Running sums of `log R_ii` over all steps.
    pub log_diag: Vec<f64>,
}

impl CocycleProduct {
    /// The product as a plain matrix; overflows for long horizons on
    /// expanding systems, where the log accumulators should be used instead.
    pub fn matrix(&self) -> DMatrix<f64> {
        &self.q * &self.r * self.log_scale.exp()
    }

    /// `log |det|` of the product restricted to the seed span.
    pub fn log_volume(&self) -> f64 {
        self.log_diag.iter().sum()
    }

    pub fn log_singular_values(&self) -> Vec<f64> {
        singular_values(&self.r)
            .into_iter()
            .map(|s| s.ln() + self.log_scale)
            .collect()
    }
}

fn walk(
    spec: &SystemSpec,
    x: &TorusPoint,
    n: i64,
    seed: &DMatrix<f64>,
) -> Result<CocycleProduct> {
    spec.check_point(x)?;
    let steps = n.unsigned_abs() as usize;
    check_length(steps)?;
    let mut w = CocycleWalker::new(spec, x.coords(), seed, Direction::of(n))?;
    for _ in 0..steps {
        w.step()?;
    }
    Ok(w.into_product(x.clone()))
}

/// `Df^n(x)` for `n >= 1`, or `Df^{-|n|}(x)` built from Jacobians of the
/// inverse map along the backward orbit for `n <= -1`.
pub fn cocycle_product(spec: &SystemSpec, x: &TorusPoint, n: i64) -> Result<CocycleProduct> {
    if n == 0 {
        return Err(Error::Domain("cocycle product needs |n| >= 1".into()));
    }
    walk(spec, x, n, &DMatrix::identity(spec.dim(), spec.dim()))
}

/// Same as [`cocycle_product`] applied to the columns of `seed`.
pub fn cocycle_product_seeded(
    spec: &SystemSpec,
    x: &TorusPoint,
    n: i64,
    seed: &DMatrix<f64>,
) -> Result<CocycleProduct> {
    walk(spec, x, n, seed)
}

/// Image subspace together with the condition number of the transported
/// basis (ratio of extreme singular values).
#[derive(Debug, Clone)]
pub struct Pushforward {
    pub subspace: Subspace,
    pub condition: f64,
    pub rank_loss_warning: bool,
}

/// Condition number above which a transported basis is flagged.
pub const RANK_LOSS_CONDITION: f64 = 1e12;

/// `Df^n(x) G` for `n >= 0`; for `n < 0`, `Df^{-|n|}(x) G` with `G` taken at
/// `x` and transported along the backward orbit.
pub fn pushforward(spec: &SystemSpec, x: &TorusPoint, n: i64, g: &Subspace) -> Result<Pushforward> {
    if g.ambient_dim() != spec.dim() {
        return Err(Error::Dimension(format!(
            "subspace of R^{} for a system of dimension {}",
            g.ambient_dim(),
            spec.dim()
        )));
    }
    if n == 0 {
        return Ok(Pushforward {
            subspace: g.clone(),
            condition: 1.0,
            rank_loss_warning: false,
        });
    }
    let p = walk(spec, x, n, g.basis())?;
    let logs = p.log_singular_values();
    let condition = (logs[0] - logs[logs.len() - 1]).exp();
    Ok(Pushforward {
        subspace: Subspace::from_orthonormal(p.q)?,
        condition,
        rank_loss_warning: condition > RANK_LOSS_CONDITION,
    })
}

pub fn pushforward_subspace(spec: &SystemSpec, x: &TorusPoint, n: i64, g: &Subspace) -> Result<Subspace> {
    Ok(pushforward(spec, x, n, g)?.subspace)
}
