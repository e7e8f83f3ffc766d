//! Points, matrices and subspaces on flat tori.
//!
//! Every torus here is a product of circles `R / (p_i Z)` with its own period
//! per axis, carrying the flat metric inherited from `R^d`.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Tolerance used when checking orthonormality of subspace bases.
pub const ORTHONORMAL_TOL: f64 = 1e-10;

/// Reduce `value` into `[0, period)`.
#[inline]
pub fn wrap(value: f64, period: f64) -> f64 {
    let r = value.rem_euclid(period);
    // rem_euclid can round up to `period` for tiny negative inputs
    if r >= period {
        0.0
    } else {
        r
    }
}

/// Reduce a coordinate difference into `(-period/2, period/2]`.
#[inline]
pub fn wrap_centered(delta: f64, period: f64) -> f64 {
    let r = wrap(delta, period);
    if r > 0.5 * period {
        r - period
    } else {
        r
    }
}

/// A point of a flat torus stored in the fundamental domain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TorusPoint {
    coords: Vec<f64>,
    periods: Vec<f64>,
}

impl TorusPoint {
    /// Builds a point, reducing every coordinate into `[0, period)`.
    pub fn new(coords: Vec<f64>, periods: Vec<f64>) -> Result<Self> {
        if coords.len() != periods.len() {
            return Err(Error::Dimension(format!(
                "{} coordinates for {} periods",
                coords.len(),
                periods.len()
            )));
        }
        if coords.is_empty() {
            return Err(Error::Dimension("torus of dimension 0".into()));
        }
        if let Some(p) = periods.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::Domain(format!("period {p} is not a positive real")));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite(format!("point {coords:?}")));
        }
        let coords = coords
            .iter()
            .zip(&periods)
            .map(|(&c, &p)| wrap(c, p))
            .collect();
        Ok(Self { coords, periods })
    }

    /// Same as [`TorusPoint::new`] with period 1 on every axis.
    pub fn unit(coords: Vec<f64>) -> Result<Self> {
        let periods = vec![1.0; coords.len()];
        Self::new(coords, periods)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn periods(&self) -> &[f64] {
        &self.periods
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub(crate) fn from_normalized(coords: Vec<f64>, periods: Vec<f64>) -> Self {
        debug_assert!(coords
            .iter()
            .zip(&periods)
            .all(|(c, p)| *c >= 0.0 && c < p));
        Self { coords, periods }
    }
}

/// Square real matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix(DMatrix<f64>);

impl SquareMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Dimension(format!(
                "matrix is {}x{}, expected square",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(Error::Dimension("empty matrix".into()));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entries".into()));
        }
        Ok(Self(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Dimension("ragged or non-square rows".into()));
        }
        Self::new(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
    }

    pub fn identity(d: usize) -> Self {
        Self(DMatrix::identity(d, d))
    }

    pub fn diagonal(values: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(values)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| self.0.row(i).iter().copied().collect())
            .collect()
    }

    pub fn mul(&self, other: &SquareMatrix) -> SquareMatrix {
        SquareMatrix(&self.0 * &other.0)
    }

    pub fn det(&self) -> f64 {
        self.0.determinant()
    }

    pub fn inverse(&self) -> Result<SquareMatrix> {
        self.0
            .clone()
            .try_inverse()
            .map(SquareMatrix)
            .ok_or_else(|| Error::Domain("matrix is singular".into()))
    }

    /// Spectral norm (largest singular value).
    pub fn operator_norm(&self) -> f64 {
        singular_values(&self.0).first().copied().unwrap_or(0.0)
    }
}

impl Deref for SquareMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Linear subspace of `R^d` given by an orthonormal basis (columns of `basis`).
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    basis: DMatrix<f64>,
}

impl Subspace {
    /// Orthonormalizes the columns of `columns` and spans them.
    pub fn from_columns(columns: DMatrix<f64>) -> Result<Self> {
        let d = columns.nrows();
        let k = columns.ncols();
        if k == 0 || k > d {
            return Err(Error::Domain(format!(
                "subspace of dimension {k} in R^{d}"
            )));
        }
        let mut basis = columns;
        orthonormalize(&mut basis, None)
            .map_err(|_| Error::Domain("degenerate basis: vectors are linearly dependent".into()))?;
        Ok(Self { basis })
    }

    pub fn span(vectors: &[Vec<f64>]) -> Result<Self> {
        let k = vectors.len();
        let d = vectors.first().map(Vec::len).unwrap_or(0);
        if k == 0 || d == 0 || vectors.iter().any(|v| v.len() != d) {
            return Err(Error::Domain("empty or ragged spanning set".into()));
        }
        Self::from_columns(DMatrix::from_fn(d, k, |i, j| vectors[j][i]))
    }

    /// The whole ambient space `R^d`.
    pub fn full(d: usize) -> Self {
        Self {
            basis: DMatrix::identity(d, d),
        }
    }

    /// Wraps an already orthonormal basis, re-orthonormalizing if it drifted.
    pub(crate) fn from_orthonormal(basis: DMatrix<f64>) -> Result<Self> {
        let k = basis.ncols();
        let gram = basis.transpose() * &basis;
        let drift = (gram - DMatrix::<f64>::identity(k, k)).amax();
        if drift <= ORTHONORMAL_TOL {
            Ok(Self { basis })
        } else {
            Self::from_columns(basis)
        }
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn vectors(&self) -> Vec<Vec<f64>> {
        self.basis
            .column_iter()
            .map(|c| c.iter().copied().collect())
            .collect()
    }

    /// Image of the subspace under `a`, re-orthonormalized.
    pub fn image(&self, a: &DMatrix<f64>) -> Result<Subspace> {
        Subspace::from_columns(a * &self.basis)
    }
}

/// In-place modified Gram–Schmidt with one reorthogonalization pass.
///
/// On return the columns of `m` are orthonormal. When `r` is given it receives
/// the upper-triangular factor so that `m_in = m_out * r` (with `r` being
/// `k x k`). Fails when a column is (numerically) dependent on earlier ones.
pub fn orthonormalize(m: &mut DMatrix<f64>, mut r: Option<&mut DMatrix<f64>>) -> Result<()> {
    let (d, k) = m.shape();
    if let Some(r) = r.as_deref_mut() {
        *r = DMatrix::zeros(k, k);
    }
    for j in 0..k {
        let original = m.column(j).norm();
        for _pass in 0..2 {
            for i in 0..j {
                let mut dot = 0.0;
                for row in 0..d {
                    dot += m[(row, i)] * m[(row, j)];
                }
                for row in 0..d {
                    let qi = m[(row, i)];
                    m[(row, j)] -= dot * qi;
                }
                if let Some(r) = r.as_deref_mut() {
                    r[(i, j)] += dot;
                }
            }
        }
        let norm = m.column(j).norm();
        if !(norm.is_finite() && norm > 0.0 && norm > 1e-14 * original) {
            return Err(Error::DegenerateCocycle(format!(
                "column {j} collapsed during orthonormalization"
            )));
        }
        for row in 0..d {
            m[(row, j)] /= norm;
        }
        if let Some(r) = r.as_deref_mut() {
            r[(j, j)] = norm;
        }
    }
    Ok(())
}

/// Singular values in descending order.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// `m(A) = min_{|u|=1} |A u|`, the smallest singular value.
pub fn min_norm(a: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension(format!(
            "min_norm of a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(singular_values(a).last().copied().unwrap_or(0.0))
}

fn restricted(a: &DMatrix<f64>, g: &Subspace) -> Result<DMatrix<f64>> {
    if a.nrows() != a.ncols() || a.ncols() != g.ambient_dim() {
        return Err(Error::Dimension(format!(
            "{}x{} matrix restricted to a subspace of R^{}",
            a.nrows(),
            a.ncols(),
            g.ambient_dim()
        )));
    }
    Ok(a * g.basis())
}

/// Norm of `A` restricted to `G`: `max_{u in G, |u|=1} |A u|`.
pub fn restricted_norm(a: &DMatrix<f64>, g: &Subspace) -> Result<f64> {
    let ab = restricted(a, g)?;
    Ok(singular_values(&ab)[0])
}

/// Co-norm of `A` restricted to `G`: `min_{u in G, |u|=1} |A u|`.
pub fn restricted_min_norm(a: &DMatrix<f64>, g: &Subspace) -> Result<f64> {
    let ab = restricted(a, g)?;
    Ok(*singular_values(&ab).last().expect("nonempty subspace"))
}

/// Volume expansion of `A` along `G`: the product of the singular values of
/// `A` composed with the inclusion of `G`.
pub fn restricted_det(a: &DMatrix<f64>, g: &Subspace) -> Result<f64> {
    let ab = restricted(a, g)?;
    Ok(singular_values(&ab).iter().product())
}

/// Quotient (flat) distance between two torus points.
pub fn torus_dist(p: &TorusPoint, q: &TorusPoint) -> Result<f64> {
    if p.periods != q.periods {
        return Err(Error::Domain(format!(
            "points live on different tori: periods {:?} vs {:?}",
            p.periods, q.periods
        )));
    }
    Ok(torus_dist_raw(&p.coords, &q.coords, &p.periods))
}

/// Distance between normalized coordinate slices with the given periods.
#[inline]
pub fn torus_dist_raw(p: &[f64], q: &[f64], periods: &[f64]) -> f64 {
    let mut s = 0.0;
    for ((a, b), per) in p.iter().zip(q).zip(periods) {
        let mut t = (a - b).abs() % per;
        if t > per - t {
            t = per - t;
        }
        s += t * t;
    }
    s.sqrt()
}

/// Principal angles between `u` and `v`, ascending, `min(dim u, dim v)` of them.
///
/// Small angles come from sines and large ones from cosines, so both ends of
/// `[0, pi/2]` are resolved to machine precision.
pub fn principal_angles(u: &Subspace, v: &Subspace) -> Result<Vec<f64>> {
    if u.ambient_dim() != v.ambient_dim() {
        return Err(Error::Dimension(format!(
            "subspaces of R^{} and R^{}",
            u.ambient_dim(),
            v.ambient_dim()
        )));
    }
    let (big, small) = if u.dim() >= v.dim() { (u, v) } else { (v, u) };
    let k = small.dim();
    let cross = big.basis().transpose() * small.basis();
    let cosines = singular_values(&cross);
    let residual = small.basis() - big.basis() * &cross;
    let mut sines = singular_values(&residual);
    sines.reverse();
    let mut angles = Vec::with_capacity(k);
    for i in 0..k {
        let c = cosines.get(i).copied().unwrap_or(0.0).min(1.0);
        let s = sines.get(i).copied().unwrap_or(0.0).min(1.0);
        let theta = if c * c < 0.5 { c.acos() } else { s.asin() };
        angles.push(theta);
    }
    angles.sort_by(f64::total_cmp);
    Ok(angles)
}

/// Smallest principal angle between `u` and `v`, in `[0, pi/2]`.
pub fn subspace_angle(u: &Subspace, v: &Subspace) -> Result<f64> {
    Ok(principal_angles(u, v)?.first().copied().unwrap_or(0.0))
}

/// Largest principal angle between two subspaces of equal dimension; zero iff
/// they coincide.
pub fn subspace_gap(u: &Subspace, v: &Subspace) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::Dimension(format!(
            "gap between subspaces of dimension {} and {}",
            u.dim(),
            v.dim()
        )));
    }
    Ok(principal_angles(u, v)?.last().copied().unwrap_or(0.0))
}
