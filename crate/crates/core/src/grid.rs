//! Sample grids on tori.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::manifold::TorusPoint;

fn check(periods: &[f64], resolution: &[usize]) -> Result<()> {
    if periods.len() != resolution.len() {
        return Err(Error::Dimension(format!(
            "{} resolutions for {} axes",
            resolution.len(),
            periods.len()
        )));
    }
    if resolution.iter().any(|r| *r == 0) {
        return Err(Error::Domain("grid resolution must be positive on every axis".into()));
    }
    Ok(())
}

/// Number of points of a grid with the given per-axis resolution.
pub fn grid_size(resolution: &[usize]) -> usize {
    resolution.iter().product()
}

/// Flat coordinates of the lattice `offset_i + k_i * p_i / r_i`, first axis
/// varying slowest.
pub fn lattice_raw(periods: &[f64], resolution: &[usize], offset: &[f64]) -> Result<Vec<f64>> {
    check(periods, resolution)?;
    let d = periods.len();
    let total = grid_size(resolution);
    let mut out = Vec::with_capacity(total * d);
    let mut idx = vec![0usize; d];
    for _ in 0..total {
        for i in 0..d {
            let v = offset[i] + idx[i] as f64 * periods[i] / resolution[i] as f64;
            out.push(crate::manifold::wrap(v, periods[i]));
        }
        for i in (0..d).rev() {
            idx[i] += 1;
            if idx[i] < resolution[i] {
                break;
            }
            idx[i] = 0;
        }
    }
    Ok(out)
}

fn to_points(flat: Vec<f64>, periods: &[f64]) -> Vec<TorusPoint> {
    flat.chunks_exact(periods.len())
        .map(|c| TorusPoint::from_normalized(c.to_vec(), periods.to_vec()))
        .collect()
}

/// Lattice anchored at the origin: `k_i * p_i / r_i`.
pub fn uniform_grid(periods: &[f64], resolution: &[usize]) -> Result<Vec<TorusPoint>> {
    let offset = vec![0.0; periods.len()];
    Ok(to_points(lattice_raw(periods, resolution, &offset)?, periods))
}

/// Cell centers of the box partition with the given resolution.
pub fn cell_centers(periods: &[f64], resolution: &[usize]) -> Result<Vec<TorusPoint>> {
    check(periods, resolution)?;
    let offset: Vec<f64> = periods
        .iter()
        .zip(resolution)
        .map(|(p, r)| 0.5 * p / *r as f64)
        .collect();
    Ok(to_points(lattice_raw(periods, resolution, &offset)?, periods))
}

/// Per-axis offset inside one grid cell, drawn from a seeded generator.
pub fn seeded_offset(periods: &[f64], resolution: &[usize], seed: u64) -> Result<Vec<f64>> {
    check(periods, resolution)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(periods
        .iter()
        .zip(resolution)
        .map(|(p, r)| rng.random::<f64>() * p / *r as f64)
        .collect())
}

/// Lattice shifted by one seeded offset shared by all points, so that no
/// sample sits on special rational coordinates.
pub fn shifted_grid(periods: &[f64], resolution: &[usize], seed: u64) -> Result<Vec<TorusPoint>> {
    let offset = seeded_offset(periods, resolution, seed)?;
    Ok(to_points(lattice_raw(periods, resolution, &offset)?, periods))
}

/// Independent uniform points from a seeded generator.
pub fn random_points(periods: &[f64], count: usize, seed: u64) -> Vec<TorusPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let c = periods.iter().map(|p| rng.random::<f64>() * p).collect();
            TorusPoint::from_normalized(c, periods.to_vec())
        })
        .collect()
}

/// Resolution vector with the same count on every axis.
pub fn isotropic(dim: usize, r: usize) -> Vec<usize> {
    vec![r; dim]
}
