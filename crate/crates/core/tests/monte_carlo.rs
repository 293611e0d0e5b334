//! Statistical properties checked against the synthetic-scenario oracle.

use las_core::las::compute_las;
use las_core::leakage::binary_assignments;
use las_core::las::las_items;
use las_core::stats::{bootstrap_las, ols_simple, BootstrapConfig};
use las_core::synth::{analytic_las, analytic_standard_error, generate, SyntheticScenario};

struct Lcg(u64);

impl Lcg {
    fn uniform(&mut self) -> f64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((self.0 >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    }

    fn normal(&mut self) -> f64 {
        let (u1, u2) = (self.uniform(), self.uniform());
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

#[test]
fn empirical_leak_rate_concentrates() {
    for seed in 0..20 {
        let s = SyntheticScenario::reference(5000, seed);
        let b = generate(&s).unwrap();
        let rate = b
            .records
            .iter()
            .filter(|r| r.sim_expl_only_correct.unwrap())
            .count() as f64
            / s.n as f64;
        let sd = (s.p_leak * (1.0 - s.p_leak) / s.n as f64).sqrt();
        assert!((rate - s.p_leak).abs() < 3.0 * sd, "seed {seed}: {rate}");
    }
}

#[test]
fn estimate_within_three_standard_errors() {
    for seed in 0..20 {
        let s = SyntheticScenario::reference(20_000, 1000 + seed);
        let b = generate(&s).unwrap();
        let r = compute_las(&b, &binary_assignments(&b).unwrap()).unwrap();
        let truth = analytic_las(&s).unwrap();
        let se = analytic_standard_error(&s).unwrap();
        assert!((r.las - truth).abs() < 3.0 * se, "seed {seed}: {} vs {truth}", r.las);
    }
}

#[test]
fn error_shrinks_at_root_n_rate() {
    let sizes = [100usize, 1_000, 10_000, 100_000];
    let reps = 100;
    let mut points = Vec::new();
    for &n in &sizes {
        let mut sq = 0.0;
        let mut used = 0;
        for rep in 0..reps {
            let s = SyntheticScenario {
                leak_prob_noise: None,
                ..SyntheticScenario::reference(n, (n as u64) * 7919 + rep)
            };
            let truth = analytic_las(&s).unwrap();
            let b = generate(&s).unwrap();
            if let Ok(r) = compute_las(&b, &binary_assignments(&b).unwrap()) {
                sq += (r.las - truth).powi(2);
                used += 1;
            }
        }
        let rmse = (sq / used as f64).sqrt();
        points.push(((n as f64).ln(), rmse.ln()));
    }
    let m = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / m;
    let my = points.iter().map(|p| p.1).sum::<f64>() / m;
    let slope = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!((-0.6..=-0.4).contains(&slope), "slope {slope}");
}

#[test]
fn ols_null_p_values_centered() {
    let mut rng = Lcg(123);
    let mut ps: Vec<f64> = (0..200)
        .map(|_| {
            let n = 10_000;
            let x: Vec<f64> = (0..n).map(|_| if rng.uniform() < 0.5 { 1.0 } else { 0.0 }).collect();
            let y: Vec<f64> = (0..n).map(|_| 3.0 + rng.normal()).collect();
            ols_simple(&y, &x).unwrap().p_value
        })
        .collect();
    ps.sort_by(f64::total_cmp);
    let median = (ps[99] + ps[100]) / 2.0;
    assert!((median - 0.5).abs() < 0.12, "median {median}");
    // roughly uniform: about 5% below 0.05
    let below = ps.iter().filter(|&&p| p < 0.05).count();
    assert!(below <= 25, "{below} of 200 below 0.05");
}

#[test]
fn bootstrap_width_scales_inverse_root_n() {
    let widths: Vec<f64> = [100usize, 400, 1600]
        .iter()
        .map(|&n| {
            let s = SyntheticScenario {
                p_leak: 0.5,
                leak_prob_noise: None,
                ..SyntheticScenario::reference(n, 55)
            };
            let b = generate(&s).unwrap();
            let items = las_items(&b, &binary_assignments(&b).unwrap()).unwrap();
            let r = bootstrap_las(
                &items,
                &BootstrapConfig {
                    iterations: 2000,
                    level: 0.95,
                    seed: 8,
                },
            )
            .unwrap();
            r.hi - r.lo
        })
        .collect();
    for w in widths.windows(2) {
        let ratio = (w[0] / w[1]) / 2.0;
        assert!((0.75..=1.35).contains(&ratio), "{widths:?}");
    }
}

#[test]
fn bootstrap_identical_across_pool_sizes() {
    let b = generate(&SyntheticScenario::reference(800, 3)).unwrap();
    let items = las_items(&b, &binary_assignments(&b).unwrap()).unwrap();
    let cfg = BootstrapConfig {
        iterations: 3000,
        level: 0.95,
        seed: 17,
    };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| bootstrap_las(&items, &cfg).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one, run(16));
    assert!(one.lo <= one.point && one.point <= one.hi);
}
