//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Expected values come from closed forms or
//! direct simulation written here, not from the library.

mod props;

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use domlab::entropy::{estimate_topological_entropy, pesin_bound_check, BoundVerdict, EntropyConfig, EntropyEstimate};
use domlab::grid::{shifted_grid, uniform_grid};
use domlab::manifold::{subspace_angle, Subspace};
use domlab::measures::{check_delta_recurrence, nonrecurrence_diagnostic, BoxSet, RecurrenceVerdict};
use domlab::spectra::{entropy_inequalities, EntropyPrediction, InequalityConfig};
use domlab::splitting::{
    check_domination, check_partial_hyperbolicity, estimate_bundles, estimate_frames, FrameConfig,
    HyperbolicityMode, Verdict, DEFAULT_HYPERBOLICITY_MARGIN,
};
use domlab::system::{cat_map, gourmelon_potrie, morse_smale_circle, parse_system, product};
use domlab::SystemSpec;
use proptest::strategy::Strategy;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

const KAPPA: f64 = 0.5;

/// Largest eigenvalue modulus of `[[2, 1], [1, 1]]` from its characteristic
/// polynomial `t^2 - tr t + det`.
fn log_sigma2() -> f64 {
    let (tr, det) = (3.0f64, 1.0f64);
    ((tr + (tr * tr - 4.0 * det).sqrt()) / 2.0).ln()
}

fn f1(x: f64) -> f64 {
    x - KAPPA / (2.0 * PI) * (2.0 * PI * x).sin()
}

fn f1_prime(x: f64) -> f64 {
    1.0 - KAPPA * (2.0 * PI * x).cos()
}

/// Inverse of the lift of `f1` on `[0, 1]` by bisection.
fn f1_inverse(y: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if f1(mid) < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `max |f1'|` by scanning a fine grid.
fn sigma1() -> f64 {
    (0..=100_000).map(|i| f1_prime(i as f64 / 100_000.0).abs()).fold(0.0, f64::max)
}

fn standard_product(kappa: f64) -> SystemSpec {
    product(&morse_smale_circle(kappa).unwrap(), &cat_map()).unwrap()
}

fn entropy(spec: &SystemSpec, resolution: Vec<usize>) -> (EntropyEstimate, Duration) {
    let t = Instant::now();
    let cfg = EntropyConfig {
        resolution: Some(resolution),
        ..Default::default()
    };
    let e = estimate_topological_entropy(spec, &cfg).unwrap();
    (e, t.elapsed())
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Shared {
    cat_entropy: EntropyEstimate,
    cat_time: Duration,
    product_entropy: EntropyEstimate,
}

fn criterion_1(s: &Shared) -> Outcome {
    let h = s.cat_entropy.h_est;
    let target = log_sigma2();
    let rel = (h - target).abs() / target;
    let seeds_ok = s.cat_entropy.seeds <= 250_000;
    outcome(
        rel < 0.15 && s.cat_time.as_secs_f64() < 60.0 && seeds_ok,
        format!(
            "h_est {h:.4} vs log sigma2 {target:.4} (rel {rel:.3} < 0.15), {} seeds, {:.1} s",
            s.cat_entropy.seeds,
            s.cat_time.as_secs_f64()
        ),
    )
}

fn criterion_2() -> Outcome {
    let gp = gourmelon_potrie(0.5, 0.25).unwrap();
    let (e, t) = entropy(&gp, vec![200, 200]);
    outcome(
        e.h_est < 0.05,
        format!("h_est {:.2e} < 0.05 ({} seeds, {:.1} s)", e.h_est, e.seeds, t.as_secs_f64()),
    )
}

fn criterion_3() -> Outcome {
    let gp = gourmelon_potrie(0.5, 0.25).unwrap();
    let mut anchor: f64 = 0.0;
    for y in [0.0, 0.25, 0.6, 1.1, 1.9] {
        // On the invariant circles the field is linearized as diag(+-pi, 0).
        for (x, d) in [(0.0, PI.exp()), (1.0, (-PI).exp())] {
            let j = gp.eval_jacobian(&gp.point(vec![x, y]).unwrap()).unwrap();
            let expected = [[d, 0.0], [0.0, 1.0]];
            for r in 0..2 {
                for c in 0..2 {
                    let scale = expected[r][c].abs().max(1.0);
                    anchor = anchor.max((j[(r, c)] - expected[r][c]).abs() / scale);
                }
            }
        }
    }
    let mut column: f64 = 0.0;
    for p in shifted_grid(gp.periods(), &[9, 9], 3).unwrap() {
        let j = gp.eval_jacobian(&p).unwrap();
        column = column.max(j[(0, 1)].abs()).max((j[(1, 1)] - 1.0).abs());
    }
    outcome(
        anchor < 1e-6 && column < 1e-8,
        format!("anchor rel err {anchor:.2e} < 1e-6, second column dev {column:.2e} < 1e-8"),
    )
}

fn criterion_4() -> Outcome {
    let gp = gourmelon_potrie(0.5, 0.25).unwrap();
    let t = Instant::now();
    let set = estimate_frames(&gp, &uniform_grid(gp.periods(), &[200, 200]).unwrap(), &FrameConfig::new(1)).unwrap();
    let cert = check_domination(&gp, &set, 1).unwrap();
    let vertical = Subspace::span(&[vec![0.0, 1.0]]).unwrap();
    let mut worst: f64 = 0.0;
    for y in [0.3, 1.2] {
        let near_one = estimate_bundles(&gp, &gp.point(vec![0.999, y]).unwrap(), 1, 16).unwrap();
        let near_zero = estimate_bundles(&gp, &gp.point(vec![0.001, y]).unwrap(), 1, 16).unwrap();
        worst = worst
            .max(subspace_angle(&near_one.f, &vertical).unwrap())
            .max(subspace_angle(&near_zero.e, &vertical).unwrap());
    }
    outcome(
        cert.verdict == Verdict::Certified && worst < 0.05,
        format!(
            "{:?} on 200x200 (max ratio {:.3}, {} excluded, {:.1} s), worst boundary angle {worst:.4} < 0.05",
            cert.verdict,
            cert.max_ratio,
            cert.excluded,
            t.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_5() -> Outcome {
    let spec = standard_product(KAPPA);
    let set = estimate_frames(&spec, &uniform_grid(spec.periods(), &[8, 16, 16]).unwrap(), &FrameConfig::new(1)).unwrap();
    let cert = check_domination(&spec, &set, 1).unwrap();
    let target = log_sigma2().exp() / sigma1();
    let rel = (cert.sigma_inferred - target).abs() / target;
    outcome(
        cert.verdict == Verdict::Certified && rel < 0.05,
        format!("sigma_inferred {:.4} vs sigma2/sigma1 {target:.4} (rel {rel:.2e})", cert.sigma_inferred),
    )
}

fn criterion_6() -> Outcome {
    let delta = 0.05;
    let (mut a, mut b, mut n0) = (0.5 - delta, 0.5 + delta, 0);
    while !(a < delta && b > 1.0 - delta) {
        a = f1(a);
        b = f1(b);
        n0 += 1;
    }
    // Sink at 0 and source at 1/2: K keeps the boxes of [0.05, 0.45] and [0.55, 0.95].
    let slack = 1e-12;
    let k = BoxSet::from_predicate(&[1.0; 3], &[20, 4, 4], |lo, hi| {
        (lo[0] >= delta - slack && hi[0] <= 0.5 - delta + slack)
            || (lo[0] >= 0.5 + delta - slack && hi[0] <= 1.0 - delta + slack)
    })
    .unwrap();
    let rec = check_delta_recurrence(&standard_product(KAPPA), &k, n0, 500, 3, 0).unwrap();
    let product_ok = rec.verdict == RecurrenceVerdict::NoReturnDetected;

    let cat = cat_map();
    let sets = [
        BoxSet::new(&[1.0, 1.0], &[10, 10], [37]).unwrap(),
        BoxSet::new(&[1.0, 1.0], &[10, 10], [82]).unwrap(),
        BoxSet::new(&[1.0, 1.0], &[20, 20], [105, 106, 125, 126]).unwrap(),
        BoxSet::new(&[1.0, 1.0], &[10, 10], [5, 51, 99]).unwrap(),
    ];
    let mut worst: f64 = 1.0;
    for s in &sets {
        assert!(s.lebesgue() >= 0.01 - 1e-12);
        worst = worst.min(check_delta_recurrence(&cat, s, 1, 200, 24, 0).unwrap().hit_fraction());
    }
    outcome(
        product_ok && worst >= 0.9,
        format!(
            "N = {n0}, K x T2 ({} boxes, Leb {:.2}): {:?} on [N, 500]; cat worst hit fraction {worst:.3} >= 0.9",
            k.len(),
            k.lebesgue(),
            rec.verdict
        ),
    )
}

fn inequalities(spec: &SystemSpec, frame_grid: &[usize], lambda_grid: &[usize]) -> (bool, f64) {
    let cfg = FrameConfig::new(1);
    let set = estimate_frames(spec, &uniform_grid(spec.periods(), frame_grid).unwrap(), &cfg).unwrap();
    let cert = check_domination(spec, &set, 1).unwrap();
    let (rep, lambdas) = entropy_inequalities(spec, &cert, &cfg, lambda_grid, &InequalityConfig::default()).unwrap();
    (rep.prediction == EntropyPrediction::Positive, lambdas[2].ess_sup)
}

fn criterion_7(s: &Shared) -> Outcome {
    let target = log_sigma2();
    let (cat_pos, cat_l) = inequalities(&cat_map(), &[32, 32], &[16, 16]);
    let (prod_pos, prod_l) = inequalities(&standard_product(KAPPA), &[8, 16, 16], &[8, 8, 8]);
    let within = |l: f64| (l - target).abs() / target < 0.05;
    let (hc, hp) = (s.cat_entropy.h_est, s.product_entropy.h_est);
    outcome(
        cat_pos && prod_pos && within(cat_l) && within(prod_l) && hc > 0.5 && hp > 0.5,
        format!(
            "positive prediction cat {cat_pos} product {prod_pos}; lambda_ess(F) {cat_l:.4} / {prod_l:.4} vs {target:.4}; h_est {hc:.3} / {hp:.3} > 0.5"
        ),
    )
}

fn pesin_min(spec: &SystemSpec, frame_grid: &[usize], pesin_grid: &[usize]) -> (bool, f64, f64) {
    let cfg = FrameConfig::new(1);
    let set = estimate_frames(spec, &uniform_grid(spec.periods(), frame_grid).unwrap(), &cfg).unwrap();
    let hyp = check_partial_hyperbolicity(spec, &set, 32, DEFAULT_HYPERBOLICITY_MARGIN).unwrap();
    assert_eq!(hyp.mode, HyperbolicityMode::FExpanding);
    let points = shifted_grid(spec.periods(), pesin_grid, 0).unwrap();
    assert_eq!(points.len(), 100);
    let check = pesin_bound_check(spec, &hyp, &cfg, &points, 200, 0.02).unwrap();
    let target = hyp.alpha_inferred.unwrap().ln();
    let min = check.min_bound.unwrap();
    (check.verdict == BoundVerdict::Holds && min >= target - 0.02, min, target)
}

fn criterion_8() -> Outcome {
    let (cat_ok, cat_min, cat_t) = pesin_min(&cat_map(), &[16, 16], &[10, 10]);
    let (prod_ok, prod_min, prod_t) = pesin_min(&standard_product(KAPPA), &[6, 8, 8], &[5, 5, 4]);
    outcome(
        cat_ok && prod_ok,
        format!(
            "cat min {cat_min:.4} >= {:.4}, product min {prod_min:.4} >= {:.4}",
            cat_t - 0.02,
            prod_t - 0.02
        ),
    )
}

fn criterion_9() -> Outcome {
    let bound = 0.8 * log_sigma2();
    let perturbed = parse_system(
        "kind=map dim=1 periods=1\nparams kappa=0.5 eps=0.01\nx1 - kappa/(2*pi)*sin(2*pi*x1) + eps*sin(2*pi*x1)\n",
    )
    .unwrap();
    let systems = [
        ("kappa 0.45", standard_product(0.45)),
        ("kappa 0.55", standard_product(0.55)),
        ("+0.01 sin", product(&perturbed, &cat_map()).unwrap()),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, spec) in &systems {
        let (e, _) = entropy(spec, vec![4, 250, 250]);
        pass &= e.h_est >= bound;
        parts.push(format!("{label}: {:.3}", e.h_est));
    }
    outcome(pass, format!("{} (>= {bound:.4})", parts.join(", ")))
}

fn run_property<S: Strategy>(name: &str, cases: u32, strategy: S, check: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    let rng = TestRng::deterministic_rng(RngAlgorithm::ChaCha);
    let mut runner = TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        rng,
    );
    runner.run(&strategy, check).map_err(|e| format!("{name}: {e}"))
}

fn criterion_10() -> Outcome {
    use props::*;
    use proptest::prelude::*;
    let results = [
        run_property("cocycle identities", 16, (0..3usize, unit_coords(), 1i64..6, 1i64..6), |(s, u, n, m)| {
            cocycle_identities(s, &u, n, m)
        }),
        run_property("conorm x inverse norm", 128, well_conditioned(), |v| conorm_inverse(&v)),
        run_property("trace identity", 16, (0..3usize, unit_coords(), 10usize..200), |(s, u, n)| {
            trace_identity(s, &u, n)
        }),
        run_property("cat mirror", 16, unit_coords(), |u| cat_mirror(&u)),
        run_property("k-power ratio", 16, (0..3usize, prop::collection::vec(unit_coords(), 4)), |(s, us)| {
            power_ratio(s, &us)
        }),
        run_property(
            "Pesin telescoping",
            16,
            (prop::sample::select(vec![0usize, 2]), unit_coords(), 10usize..200),
            |(s, u, n)| pesin_telescoping(s, &u, n),
        ),
        run_property("empirical measures", 128, (0..3usize, unit_coords(), 1usize..400, 2usize..12), |(s, u, n, r)| {
            empirical_shift(s, &u, n, r)
        }),
        run_property("byte-identical reports", 4, any::<u64>(), deterministic_reports),
    ];
    let failures: Vec<String> = results.into_iter().filter_map(|r| r.err()).collect();
    if failures.is_empty() {
        outcome(true, "8 property suites".into())
    } else {
        outcome(false, failures.join("; "))
    }
}

/// Share of `x` in a fine grid whose forward and backward volume rates under
/// the product stay below `-a` for every horizon in `[N, n_max]`, as a
/// function of `N`. The cat factor has determinant one, so only the circle
/// factor contributes.
fn cover_oracle(a: f64, n_max: usize) -> Vec<f64> {
    let xs: Vec<f64> = (0..4000).map(|i| (i as f64 + 0.5) / 4000.0).collect();
    let mut counts = vec![0usize; n_max + 2];
    for &x0 in &xs {
        let (mut fwd, mut bwd) = (vec![0.0; n_max], vec![0.0; n_max]);
        let (mut x, mut acc) = (x0, 0.0);
        for m in 0..n_max {
            acc += f1_prime(x).ln();
            fwd[m] = acc / (m + 1) as f64;
            x = f1(x);
        }
        let (mut x, mut acc) = (x0, 0.0);
        for m in 0..n_max {
            x = f1_inverse(x);
            acc -= f1_prime(x).ln();
            bwd[m] = acc / (m + 1) as f64;
        }
        let mut first = n_max + 1;
        for m in (1..=n_max).rev() {
            if fwd[m - 1] >= -a || bwd[m - 1] >= -a {
                break;
            }
            first = m;
        }
        counts[first] += 1;
    }
    let mut cover = Vec::with_capacity(n_max);
    let mut acc = 0;
    for c in counts.iter().take(n_max + 1).skip(1) {
        acc += c;
        cover.push(acc as f64 / xs.len() as f64);
    }
    cover
}

fn criterion_11() -> Outcome {
    let (a, delta, n_max) = (0.1, 0.1, 200);
    let oracle = cover_oracle(a, n_max);
    let oracle_n = oracle.iter().position(|c| *c >= 1.0 - delta).map(|i| i + 1);
    let diag = nonrecurrence_diagnostic(&standard_product(KAPPA), a, delta, n_max, &[20, 4, 4], 2, 0).unwrap();
    let best = diag.cover.iter().map(|c| c.lebesgue).fold(0.0, f64::max);
    let no_return = diag
        .recurrence
        .as_ref()
        .is_some_and(|r| r.verdict == RecurrenceVerdict::NoReturnDetected);
    let agree = match (oracle_n, diag.chosen_n) {
        (Some(o), Some(c)) => c.abs_diff(o) <= 2.max(o / 4),
        _ => false,
    };
    outcome(
        diag.target_reached && best >= 0.9 && no_return && agree,
        format!(
            "N = {:?} (oracle {:?}), max Leb(C_N) {best:.3}, A_N {} boxes, no return on [N, {n_max}]: {no_return}",
            diag.chosen_n, oracle_n, diag.a_boxes
        ),
    )
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let started = Instant::now();
    let (cat_entropy, cat_time) = entropy(&cat_map(), vec![500, 500]);
    let (product_entropy, _) = entropy(&standard_product(KAPPA), vec![4, 250, 250]);
    let shared = Shared {
        cat_entropy,
        cat_time,
        product_entropy,
    };
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("cat map entropy", Box::new(|| criterion_1(&shared))),
        ("GP zero entropy", Box::new(criterion_2)),
        ("GP Jacobian anchors", Box::new(criterion_3)),
        ("GP domination and boundary bundles", Box::new(criterion_4)),
        ("product domination constant", Box::new(criterion_5)),
        ("non-recurrence and cat recurrence", Box::new(criterion_6)),
        ("entropy inequalities pipeline", Box::new(|| criterion_7(&shared))),
        ("Pesin lower bound", Box::new(criterion_8)),
        ("robustness under perturbation", Box::new(criterion_9)),
        ("property suites", Box::new(criterion_10)),
        ("volume-rate non-recurrence diagnostic", Box::new(criterion_11)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!("{} {:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.0} s",
        criteria.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
