use std::f64::consts::PI;
use std::sync::Arc;

use proptest::prelude::*;
use svi_core::fbf_minibatch::{self, MinibatchFbfConfig};
use svi_core::mlmc_km::{geometric_level, km_run, km_weight, BudgetPolicy, KmConfig};
use svi_core::problems::{make_quadratic, make_rotation};
use svi_core::rng::{derive, SeedStream};
use svi_core::vr_halpern::{self, VrHalpernConfig};
use svi_core::{residual, Execution, NoiseSpec, StochasticOracle, Vector};

fn quadratic_oracle(rho: f64, noise: NoiseSpec) -> StochasticOracle {
    StochasticOracle::new(Arc::new(make_quadratic(1.0, rho).unwrap()), noise).unwrap()
}

#[test]
fn sample_means_are_unbiased() {
    let z = Vector::from_vec(vec![0.7, -1.3]);
    let anchor = Some(vec![0.1, 0.2]);
    for noise in [
        NoiseSpec::Gaussian { scale: 1.0 },
        NoiseSpec::Laplace { scale: 1.0 },
        NoiseSpec::Multiplicative { b: 0.8, sigma: 0.5, anchor },
    ] {
        let o = quadratic_oracle(0.1, noise.clone());
        let exact = o.problem().eval(&z).unwrap();
        let n = 100_000u64;
        let (mut s, mut s2) = ([0.0; 2], [0.0; 2]);
        for seed in 0..n {
            let g = o.sample(&z, derive(99, &[seed])).unwrap();
            for i in 0..2 {
                s[i] += g[i];
                s2[i] += g[i] * g[i];
            }
        }
        for i in 0..2 {
            let m = s[i] / n as f64;
            let sd = (s2[i] / n as f64 - m * m).sqrt();
            assert!((m - exact[i]).abs() <= 4.0 * sd / (n as f64).sqrt(), "{noise:?} component {i}");
        }
    }
}

#[test]
fn minibatch_variance_scales_with_batch() {
    // σ² = 2 for unit scale in two dimensions, so the mean of 100 samples has E||·||² = 0.02
    let o = quadratic_oracle(0.1, NoiseSpec::Gaussian { scale: 1.0 });
    let z = Vector::from_vec(vec![0.5, 0.5]);
    let exact = o.problem().eval(&z).unwrap();
    let mut stream = SeedStream::new(5);
    let reps = 10_000;
    let v = (0..reps)
        .map(|_| (o.minibatch(&z, 100, &mut stream, Execution::Sequential).unwrap() - &exact).norm_squared())
        .sum::<f64>()
        / reps as f64;
    assert!((0.8 * 0.02..=1.2 * 0.02).contains(&v), "{v}");
}

#[test]
fn geometric_levels_follow_halving() {
    let n = 1_000_000u64;
    let mut counts = [0u64; 64];
    for j in 0..n {
        counts[geometric_level(derive(3, &[j])) as usize] += 1;
    }
    assert_eq!(counts[0], 0);
    for (i, &c) in counts.iter().enumerate().take(11).skip(1) {
        let p = 0.5f64.powi(i as i32);
        let se = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((c as f64 - n as f64 * p).abs() <= 3.0 * se, "level {i}: {c}");
    }
}

#[test]
fn km_weights_decrease_from_below_one() {
    let alpha = 0.5;
    assert!(km_weight(0, alpha, 1.0) < 1.0);
    for k in 0..10_000 {
        assert!(km_weight(k + 1, alpha, 1.0) < km_weight(k, alpha, 1.0));
    }
}

#[test]
fn fbf_iterates_stay_bounded() {
    let o = quadratic_oracle(0.05, NoiseSpec::Gaussian { scale: 0.1 });
    let z0 = Vector::from_vec(vec![1.0, 0.0]);
    let k = 200;
    let mut mean_sq = vec![0.0; k + 1];
    for seed in 0..20 {
        let mut cfg = MinibatchFbfConfig { iterations: k as u64, seed, ..Default::default() };
        cfg.limits.record_points = true;
        let r = fbf_minibatch::run(&o, &z0, &cfg).unwrap();
        for (m, p) in mean_sq.iter_mut().zip(&r.points) {
            *m += p.iter().map(|v| v * v).sum::<f64>() / 20.0;
        }
    }
    let at10 = mean_sq[10];
    assert!(mean_sq.iter().skip(10).all(|&m| m <= 10.0 * at10));
}

#[test]
fn execution_mode_does_not_change_runs() {
    let o = quadratic_oracle(0.05, NoiseSpec::Gaussian { scale: 0.1 });
    let z0 = Vector::from_vec(vec![1.0, 0.0]);
    let run_fbf = |execution| {
        let cfg = MinibatchFbfConfig { iterations: 40, seed: 2, execution, ..Default::default() };
        fbf_minibatch::run(&o, &z0, &cfg).unwrap()
    };
    let (a, b) = (run_fbf(Execution::Sequential), run_fbf(Execution::Parallel));
    assert_eq!((a.log, a.output_point), (b.log, b.output_point));

    let run_km = |execution| {
        let cfg = KmConfig {
            iterations: 4,
            seed: 2,
            budget: BudgetPolicy::Fixed { n: 64, m: 9000 },
            execution,
            ..Default::default()
        };
        km_run(&o, &z0, &cfg).unwrap()
    };
    let (a, b) = (run_km(Execution::Sequential), run_km(Execution::Parallel));
    assert_eq!((a.log, a.output_point, a.oracle_calls), (b.log, b.output_point, b.oracle_calls));
}

#[test]
fn vr_halpern_reproducible_from_seed() {
    let o = quadratic_oracle(0.02, NoiseSpec::Laplace { scale: 0.2 });
    let z0 = Vector::from_vec(vec![1.0, 0.0]);
    let cfg = VrHalpernConfig { iterations: 300, seed: 8, ..Default::default() };
    let a = vr_halpern::run(&o, &z0, &cfg).unwrap();
    let b = vr_halpern::run(&o, &z0, &cfg).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.output_point, b.output_point);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn sample_is_pure(x in -5.0..5.0f64, y in -5.0..5.0f64, seed in any::<u64>()) {
        let o = quadratic_oracle(0.1, NoiseSpec::StudentT { dof: 2.0, scale: 1.0 });
        let z = Vector::from_vec(vec![x, y]);
        let a = o.sample(&z, seed).unwrap();
        let b = o.sample(&z, seed).unwrap();
        prop_assert_eq!(a.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        b.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn unconstrained_residual_ignores_gamma(x in -5.0..5.0f64, y in -5.0..5.0f64, lg1 in -3.0..3.0f64, lg2 in -3.0..3.0f64) {
        let p = make_quadratic(1.0, 0.1).unwrap();
        let z = Vector::from_vec(vec![x, y]);
        prop_assert_eq!(residual(&p, &z, 10f64.powf(lg1)).unwrap(), residual(&p, &z, 10f64.powf(lg2)).unwrap());
    }

    #[test]
    fn rotation_is_scaled_isometry(l in 0.1..10.0f64, theta in 0.01..PI, x in -5.0..5.0f64, y in -5.0..5.0f64) {
        let p = make_rotation(l, theta).unwrap();
        let z = Vector::from_vec(vec![x, y]);
        let g = p.eval(&z).unwrap();
        prop_assert!((g.norm() - l * z.norm()).abs() <= 1e-12 * (1.0 + l * z.norm()));
        // weak Minty with equality: <G z, z> = -ρ ||G z||²
        prop_assert!((g.dot(&z) + p.rho() * g.norm_squared()).abs() <= 1e-9 * (1.0 + g.norm_squared()));
    }

    #[test]
    fn quadratic_satisfies_weak_minty(rho in 0.0..0.99f64, x in -5.0..5.0f64, y in -5.0..5.0f64) {
        let p = make_quadratic(1.0, rho).unwrap();
        let z = Vector::from_vec(vec![x, y]);
        let g = p.eval(&z).unwrap();
        prop_assert!(g.dot(&z) >= -rho * g.norm_squared() - 1e-12);
    }
}
