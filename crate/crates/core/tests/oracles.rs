//! Library results against independent closed forms and direct sums.

use bwsurge_core::alloc::stream_admits;
use bwsurge_core::ctmc::{replicate, simulate, simulate_frozen, window_average, FrozenConfig};
use bwsurge_core::fluid::{
    classify, h_quadrature, robust_stability, stream_fluid, work_conserving_fast_path, StreamMode, StreamParams,
};
use bwsurge_core::qos::QosTarget;
use bwsurge_core::stationary::{stationary_1d, stationary_multi, Averager, FrozenChain, Support, TOL_1D};
use bwsurge_core::{AllocationSpec, NetworkModel, Regime, SimConfig, TrafficClass, TrafficProfile};

fn dps3() -> NetworkModel {
    NetworkModel::new(
        vec![
            TrafficClass::surge(0.5, 1.0),
            TrafficClass::stable(3.0, 10.0),
            TrafficClass::stable(1.0, 10.0),
        ],
        AllocationSpec::Dps { capacity: 1.0 },
        1,
    )
}

fn tree(rho1: f64) -> NetworkModel {
    NetworkModel::new(
        vec![TrafficClass::surge(rho1, 1.0), TrafficClass::stable(0.5, 1.0)],
        AllocationSpec::Tree { c1: 0.4, c2: 0.8 },
        1,
    )
}

/// Poisson weights `rho^n / n!` for `n = 0..=n_max`, normalized.
fn truncated_poisson(rho: f64, n_max: u64) -> Vec<f64> {
    let mut w = vec![1.0f64];
    for n in 1..=n_max {
        let last = w[w.len() - 1];
        w.push(last * rho / n as f64);
    }
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

#[test]
fn processor_sharing_queue_mean() {
    // Surge class idle: the stable class is an M/M/1-PS queue.
    let m = NetworkModel::new(
        vec![TrafficClass::surge(0.0, 1.0), TrafficClass::stable(0.5, 1.0)],
        AllocationSpec::Dps { capacity: 1.0 },
        1,
    );
    let cfg = FrozenConfig {
        horizon: 400_000.0,
        step: 2000.0,
        seed: 5,
        initial_stable: vec![0],
    };
    let tr = simulate_frozen(&m, &[0.0], &cfg).unwrap();
    let (mean, se) = window_average(&tr, |y| y[1], 2000.0).unwrap().batch_mean(2000.0);
    assert!((mean - 1.0).abs() <= 3.0 * se, "{mean} ± {se}");
}

#[test]
fn admission_at_half_elastic_mass() {
    assert!(stream_admits(1.0, 0.5, 49.0, 0.01));
    assert!(!stream_admits(1.0, 0.5, 50.0, 0.01));
}

#[test]
fn streaming_law_is_truncated_poisson() {
    let rho = 3.7;
    let d = stationary_1d(rho, |n| n as f64, Support::UpTo(12), TOL_1D).unwrap();
    for (p, q) in d.probs.iter().zip(truncated_poisson(rho, 12)) {
        assert!((p - q).abs() < 1e-14);
    }
}

#[test]
fn dps_with_one_stable_class_is_a_birth_death_chain() {
    let m = NetworkModel::new(
        vec![TrafficClass::new(0.5, 1.0, 2.0, true), TrafficClass::new(0.6, 1.0, 1.5, false)],
        AllocationSpec::Dps { capacity: 1.0 },
        1,
    );
    let z = 0.7;
    let multi = Averager::new(&m).at(&[z]).unwrap();
    let direct = stationary_1d(0.6, |n| 1.5 * n as f64 / (2.0 * z + 1.5 * n as f64), Support::Unbounded, 1e-13).unwrap();
    for (n, p) in direct.probs.iter().enumerate() {
        assert!((multi.distribution.prob(&[n as u64]) - p).abs() < 1e-9);
    }
}

#[test]
fn independent_links_give_a_product_law() {
    // Class 3 alone on link 2 is an M/M/1 queue independent of class 2,
    // which shares link 1 with the frozen surge.
    let m = NetworkModel::new(
        vec![
            TrafficClass::surge(0.5, 1.0),
            TrafficClass::stable(0.4, 1.0),
            TrafficClass::stable(0.3, 1.0),
        ],
        AllocationSpec::ProportionalFair {
            incidence: vec![vec![1.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            capacities: vec![1.0, 1.0],
            tolerance: 1e-12,
        },
        1,
    );
    let z = 0.5;
    let d = stationary_multi(&FrozenChain::new(&m, &[z]), 1e-10).unwrap();
    let class2 = stationary_1d(0.4, |n| n as f64 / (z + n as f64), Support::Unbounded, 1e-14).unwrap();
    let mut worst = 0.0f64;
    for (y, p) in d.iter() {
        let p3 = 0.7 * 0.3f64.powi(y[1] as i32);
        let p2 = class2.probs.get(y[0] as usize).copied().unwrap_or(0.0);
        worst = worst.max((p - p2 * p3).abs());
    }
    assert!(worst < 1e-8, "{worst}");
}

#[test]
fn tree_rate_at_zero_surge() {
    // Class 2 is an M/M/1 queue of rate c2; class 1 gets c1 when it is
    // empty and 1 - c2 otherwise.
    let (c1, c2, rho2) = (0.4, 0.8, 0.5);
    let busy = rho2 / c2;
    let expected = (1.0 - busy) * c1 + busy * (1.0 - c2);
    let a = Averager::new(&tree(0.2)).at(&[0.0]).unwrap();
    assert!((a.phibar[0] - expected).abs() < 1e-9);
    assert!((expected - 0.275).abs() < 1e-15);
    assert!((a.stable_mean[0] - rho2 / (c2 - rho2)).abs() < 1e-8);
    for rho1 in [0.1, 0.2, 0.26] {
        let r = robust_stability(&tree(rho1), 1e-10).unwrap();
        assert!((r.margin - (expected - rho1)).abs() < 1e-9);
    }
}

#[test]
fn dps_conditional_mean_of_class_two() {
    // Equal service rates and weights: the stable total sees processor
    // sharing with z permanent units, a negative binomial law with mean
    // rho (1 + z) / (1 - rho); class 2 holds 3/4 of it.
    let avg = Averager::new(&dps3());
    for z in [0.0, 0.25, 0.5, 1.0, 2.0] {
        let a = avg.at(&[z]).unwrap();
        let total = 0.4 * (1.0 + z) / 0.6;
        assert!((a.stable_mean[0] - 0.75 * total).abs() < 1e-6, "z = {z}");
        assert!((a.stable_mean[1] - 0.25 * total).abs() < 1e-6, "z = {z}");
        let d = avg.drift(&[z], None).unwrap()[0];
        assert!((d + 0.1).abs() < 1e-7, "z = {z}");
    }
}

#[test]
fn poisson_elastic_rate_matches_series() {
    let (rho, c) = (2.5, 0.05);
    let p = StreamParams {
        lambda1: 0.0,
        mu1: 1.0,
        weight: 1.0,
        rho2: rho,
        c,
    };
    for z in [0.01, 0.1, 0.3, 0.8] {
        let law = truncated_poisson(rho, 200);
        let series: f64 = law.iter().enumerate().map(|(n, q)| q * z / (z + c * n as f64)).sum();
        assert!((p.phibar(z, StreamMode::PoissonApprox) - series).abs() < 1e-10);
        assert!((h_quadrature(z / c, rho) - series).abs() < 1e-10);
    }
    let tiny = StreamParams { c: 1e-3, rho2: 1.0, ..p };
    assert!((tiny.pi0() - (-1.0f64).exp()).abs() < 1e-12);
}

#[test]
fn qos_dimensioning_by_direct_sum() {
    let direct = |n: u64, rho: f64| truncated_poisson(rho, n)[n as usize];
    let t = QosTarget::new(0.05, 0.01, 20.0).unwrap();
    let n = t.circuits();
    assert!(direct(n, 20.0) <= 0.05 && direct(n - 1, 20.0) > 0.05);
    assert_eq!(n, 26);
    assert!((t.threshold() - 0.74).abs() < 1e-12);
}

#[test]
fn elastic_limit_is_the_root_of_the_averaged_rate() {
    let p = StreamParams {
        lambda1: 0.6,
        mu1: 1.0,
        weight: 1.0,
        rho2: 20.0,
        c: 0.01,
    };
    let rate = |z: f64| {
        let n_max = ((1.0 - z) / 0.01 + 1e-9).floor() as u64;
        truncated_poisson(20.0, n_max)
            .iter()
            .enumerate()
            .map(|(n, q)| q * z / (z + 0.01 * n as f64))
            .sum::<f64>()
    };
    let (mut lo, mut hi) = (1e-6, 0.9);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) < 0.6 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let sol = stream_fluid(&p, 0.0, 40.0, 0.5, StreamMode::Exact, 1e-10);
    assert!((sol.last()[0] - lo).abs() < 1e-6, "{} vs {lo}", sol.last()[0]);
}

#[test]
fn overloaded_work_conserving_path_grows_linearly() {
    let mut m = dps3();
    m.classes[0].arrival_rate = 1.0;
    let fast = work_conserving_fast_path(&m, 0.5, 5.0, 0.05).unwrap();
    assert!((fast.last()[0] - (0.5 + 0.4 * 5.0)).abs() < 1e-12, "{}", fast.last()[0]);
    // The noise of Y has variance rate (lambda1 + mu1 phibar1) / K, about
    // 0.09 standard deviation at t = 5 for K = 1000.
    let dev = |k: u64| {
        let cfg = SimConfig::new(k, 5.0, 0.05, 12, vec![0.5], vec![0, 0]);
        replicate(&m, &TrafficProfile::constant(&m), &cfg, 10, Some(&fast.u))
            .unwrap()
            .mean_sup_deviation
    };
    let (d1, d4) = (dev(1000), dev(4000));
    assert!(d1 < 0.25 && d4 < d1, "{d1} {d4}");
}

#[test]
fn at_the_threshold_the_time_and_scale_limits_commute() {
    // At rho1 = phibar1(0+) the surge decays to 0 without hitting it, and the
    // stable class settles to its law under full priority.
    let rho1 = 0.275;
    let m = tree(rho1);
    let report = classify(&m, &[1.0], 1e-10).unwrap();
    assert_eq!(report.regime, Regime::AbsorbedAsymptotic);
    let cfg = SimConfig::new(1000, 300.0, 10.0, 8, vec![1.0], vec![0]).with_path();
    let tr = simulate(&m, &TrafficProfile::constant(&m), &cfg).unwrap();
    let w = window_average(&tr, |y| y[1], 10.0).unwrap();
    let late = bwsurge_core::ctmc::WindowSeries {
        times: w.times[10..].to_vec(),
        values: w.values[10..].to_vec(),
        truncated: w.truncated[10..].to_vec(),
    };
    let (mean, se) = late.batch_mean(10.0);
    let priority_mean = 0.5 / (0.8 - 0.5);
    assert!((mean - priority_mean).abs() <= 3.0 * se, "{mean} ± {se} vs {priority_mean}");
}
