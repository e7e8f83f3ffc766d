//! Property checks shared by the proptest suite and the acceptance harness.

#![allow(dead_code)]

use std::sync::OnceLock;

use domlab::cocycle::{cocycle_product, iterate, Direction};
use domlab::entropy::{estimate_topological_entropy, pesin_lower_bound, EntropyConfig};
use domlab::manifold::min_norm;
use domlab::measures::{check_delta_recurrence, empirical_measure, measure_distance, BoxSet};
use domlab::spectra::{essential_lambda, lyapunov_exponents, lyapunov_exponents_dir, Bundle};
use domlab::splitting::{check_domination, estimate_frames, FrameConfig};
use domlab::system::{cat_map, gourmelon_potrie, morse_smale_circle, product};
use domlab::{SystemSpec, TorusPoint};
use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

type Check = Result<(), TestCaseError>;

/// Cat map, Gourmelon-Potrie flow and the Morse-Smale times cat product.
pub fn systems() -> &'static [SystemSpec] {
    static S: OnceLock<Vec<SystemSpec>> = OnceLock::new();
    S.get_or_init(|| {
        vec![
            cat_map(),
            gourmelon_potrie(0.5, 0.25).unwrap(),
            product(&morse_smale_circle(0.5).unwrap(), &cat_map()).unwrap(),
        ]
    })
}

/// Point of `spec` from coordinates in `[0, 1)`, scaled by the periods.
pub fn point(spec: &SystemSpec, u: &[f64]) -> TorusPoint {
    let c = spec.periods().iter().zip(u).map(|(p, v)| p * v).collect();
    spec.point(c).unwrap()
}

pub fn unit_coords() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, 3)
}

fn fro(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `Df^{n+m}(x) = Df^m(f^n x) Df^n(x)` and `Df^{-n}(f^n x) Df^n(x) = I`.
pub fn cocycle_identities(sys: usize, u: &[f64], n: i64, m: i64) -> Check {
    let spec = &systems()[sys];
    let x = point(spec, u);
    let y = iterate(spec, &x, n).unwrap().last().clone();
    let whole = cocycle_product(spec, &x, n + m).unwrap().matrix();
    let first = cocycle_product(spec, &x, n).unwrap().matrix();
    let split = cocycle_product(spec, &y, m).unwrap().matrix() * &first;
    let err = fro(&(&whole - &split)) / fro(&whole);
    prop_assert!(err < 1e-6, "cocycle identity error {err:e} at {:?}", x.coords());
    let back = cocycle_product(spec, &y, -n).unwrap().matrix() * &first;
    let d = spec.dim();
    let err = fro(&(back - DMatrix::<f64>::identity(d, d))) / (d as f64).sqrt();
    prop_assert!(err < 1e-6, "inverse cocycle error {err:e} at {:?}", x.coords());
    Ok(())
}

/// Largest singular value by power iteration on `B^T B`.
fn power_norm(b: &DMatrix<f64>) -> f64 {
    let g = b.transpose() * b;
    let mut v = DMatrix::<f64>::from_element(b.ncols(), 1, 1.0);
    let mut lambda = 0.0;
    for _ in 0..2000 {
        let w = &g * &v;
        let nw = fro(&w);
        if nw == 0.0 {
            return 0.0;
        }
        let next = nw / fro(&v);
        v = w / nw;
        if (next - lambda).abs() <= 1e-15 * next {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda.sqrt()
}

pub fn well_conditioned() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, 9).prop_filter("near singular", |v| {
        DMatrix::from_row_slice(3, 3, v).determinant().abs() > 0.2
    })
}

/// `m(A) ||A^{-1}|| = 1`.
pub fn conorm_inverse(entries: &[f64]) -> Check {
    let a = DMatrix::from_row_slice(3, 3, entries);
    let inv = a.clone().try_inverse().unwrap();
    let prod = min_norm(&a).unwrap() * power_norm(&inv);
    prop_assert!((prod - 1.0).abs() < 1e-9, "m(A) ||A^-1|| = {prod}");
    Ok(())
}

/// Sum of exponents equals the volume growth rate.
pub fn trace_identity(sys: usize, u: &[f64], n: usize) -> Check {
    let spec = &systems()[sys];
    let rep = lyapunov_exponents(spec, &point(spec, u), n).unwrap();
    prop_assert!(rep.trace_defect() < 1e-8, "trace defect {:e}", rep.trace_defect());
    Ok(())
}

/// `χ_i(f^-1) = -χ_{d+1-i}(f)` on the cat map.
pub fn cat_mirror(u: &[f64]) -> Check {
    let cat = &systems()[0];
    let x = point(cat, u);
    let fwd = lyapunov_exponents_dir(cat, &x, 2000, Direction::Forward).unwrap().exponents;
    let bwd = lyapunov_exponents_dir(cat, &x, 2000, Direction::Backward).unwrap().exponents;
    for (b, f) in bwd.iter().zip(fwd.iter().rev()) {
        prop_assert!((b + f).abs() < 2e-3, "mirror {bwd:?} vs {fwd:?}");
    }
    Ok(())
}

/// On a sample closed under one step, the `k = 2` ratio is at most the
/// square of the `k = 1` maximum.
pub fn power_ratio(sys: usize, us: &[Vec<f64>]) -> Check {
    let spec = &systems()[sys];
    let base: Vec<TorusPoint> = us.iter().map(|u| point(spec, u)).collect();
    let images: Vec<TorusPoint> = base.iter().map(|x| spec.eval_map(x).unwrap()).collect();
    let cfg = FrameConfig::new(1);
    let both: Vec<TorusPoint> = base.iter().chain(&images).cloned().collect();
    let one = check_domination(spec, &estimate_frames(spec, &both, &cfg).unwrap(), 1).unwrap();
    let two = check_domination(spec, &estimate_frames(spec, &base, &cfg).unwrap(), 2).unwrap();
    if one.excluded > 0 || two.excluded > 0 {
        return Ok(());
    }
    let rho = one.max_ratio;
    prop_assert!(
        two.max_ratio <= rho * rho * (1.0 + 1e-6),
        "k = 2 ratio {} exceeds {}^2",
        two.max_ratio,
        rho
    );
    Ok(())
}

/// Step-wise Pesin sum agrees with the accumulated cocycle.
pub fn pesin_telescoping(sys: usize, u: &[f64], n: usize) -> Check {
    let spec = &systems()[sys];
    let b = pesin_lower_bound(spec, &point(spec, u), n, &FrameConfig::new(1)).unwrap();
    prop_assert!((b.value - b.telescoped).abs() < 1e-6, "{} vs {}", b.value, b.telescoped);
    Ok(())
}

/// Histograms have unit mass, and shifting the orbit by one step moves
/// at most `2/n` of it.
pub fn empirical_shift(sys: usize, u: &[f64], n: usize, r: usize) -> Check {
    let spec = &systems()[sys];
    let x = point(spec, u);
    let res = vec![r; spec.dim()];
    let mu = empirical_measure(spec, &x, n, &res).unwrap();
    let nu = empirical_measure(spec, &spec.eval_map(&x).unwrap(), n, &res).unwrap();
    prop_assert!((mu.total() - 1.0).abs() < 1e-12);
    prop_assert!((nu.total() - 1.0).abs() < 1e-12);
    let d = measure_distance(&mu, &nu).unwrap();
    prop_assert!(d <= 2.0 / n as f64 + 1e-15, "shift distance {d} > 2/{n}");
    Ok(())
}

/// Reports serialized from two runs with the same seed are byte-identical.
pub fn deterministic_reports(seed: u64) -> Check {
    let run = || {
        let cat = &systems()[0];
        let cfg = EntropyConfig {
            resolution: Some(vec![40, 40]),
            n_max: 6,
            grid_seed: seed,
            ..Default::default()
        };
        let e = estimate_topological_entropy(cat, &cfg).unwrap();
        let l = essential_lambda(cat, Bundle::Tangent, Direction::Forward, &[8, 8], 64, seed, &FrameConfig::new(1))
            .unwrap();
        let set = BoxSet::new(&[1.0, 1.0], &[10, 10], [3, 44]).unwrap();
        let r = check_delta_recurrence(cat, &set, 1, 30, 4, seed).unwrap();
        format!(
            "{}\n{}\n{}",
            serde_json::to_string(&e).unwrap(),
            serde_json::to_string(&l).unwrap(),
            serde_json::to_string(&r).unwrap()
        )
    };
    let (a, b) = (run(), run());
    prop_assert!(a == b, "reports differ for seed {seed}");
    Ok(())
}
