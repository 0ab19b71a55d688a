use std::f64::consts::PI;
use std::sync::Arc;

use longjump::dynamics::{
    entropy_decay_trace, exact_exclusion_by_particles, exact_generator, martingale_probe, SumTree,
};
use longjump::kernel::periodized_rates;
use longjump::{DensityField, KernelSpec, LatticeKernel, Model, ParticleSystem, RateFunction, Thermo, Torus};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn kernel(n: usize, alpha: f64) -> Arc<LatticeKernel> {
    Arc::new(LatticeKernel::build(KernelSpec::one_dim(alpha, 1.0), n, 8).unwrap())
}

fn rate_choice(i: u8) -> RateFunction {
    match i % 3 {
        0 => RateFunction::linear(),
        1 => RateFunction::indicator(),
        _ => RateFunction::capped(2),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sum_tree_matches_linear_scan(weights in prop::collection::vec(0.0f64..5.0, 1..70), us in prop::collection::vec(0.0f64..1.0, 20)) {
        let tree = SumTree::new(&weights);
        let total: f64 = weights.iter().sum();
        prop_assume!(total > 0.0);
        prop_assert!((tree.total() - total).abs() < 1e-12 * total);
        for u in us {
            let target = u * tree.total();
            let i = tree.find(target);
            prop_assert!(weights[i] > 0.0);
            let before: f64 = weights[..i].iter().sum();
            prop_assert!(before <= target * (1.0 + 1e-12) + 1e-12);
            prop_assert!(before + weights[i] >= target * (1.0 - 1e-12));
        }
    }

    #[test]
    fn zero_range_conserves_particles(seed in 0u64..5000, which in 0u8..3, half in 4usize..24) {
        let n = 2 * half;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let occ: Vec<u32> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let total: u32 = occ.iter().sum();
        let mut sys = ParticleSystem::new(kernel(n, 1.3), Model::ZeroRange(rate_choice(which)), occ, 1.0, n as f64, seed).unwrap();
        sys.run_events(3000).unwrap();
        prop_assert_eq!(sys.occupancy().iter().sum::<u32>(), total);
        prop_assert_eq!(sys.total_particles(), total as u64);
        prop_assert!(sys.cache_defect() < 1e-9);
    }

    #[test]
    fn exclusion_keeps_one_per_site(seed in 0u64..5000, half in 4usize..24, density in 0.05f64..0.95) {
        let n = 2 * half;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let occ: Vec<u32> = (0..n).map(|_| (rng.random::<f64>() < density) as u32).collect();
        let total: u32 = occ.iter().sum();
        let mut sys = ParticleSystem::new(kernel(n, 0.8), Model::Exclusion, occ, 1.0, n as f64, seed).unwrap();
        sys.run_events(3000).unwrap();
        prop_assert!(sys.occupancy().iter().all(|&k| k <= 1));
        prop_assert_eq!(sys.occupancy().iter().sum::<u32>(), total);
        let mut from_list = vec![0u32; n];
        for &x in sys.particles() {
            from_list[x] += 1;
        }
        prop_assert_eq!(&from_list[..], sys.occupancy());
    }
}

#[test]
fn bernoulli_products_are_invariant_for_exclusion() {
    let k = LatticeKernel::build(KernelSpec::one_dim(1.5, 1.0), 4, 16).unwrap();
    let (space, q) = exact_exclusion_by_particles(&k).unwrap();
    let (_, direct) = exact_generator(&Model::Exclusion, k.torus(), 1, k.rates()).unwrap();
    for s in 0..space.len() {
        assert_eq!(q.row(s), direct.row(s));
    }
    for &rho in &[0.1, 0.5, 0.77] {
        let mu = space.product_measure(&[1.0 - rho, rho]);
        let flow = q.left_apply(&mu);
        assert!(flow.iter().all(|v| v.abs() < 1e-12));
    }
}

#[test]
fn truncated_zero_range_is_reversible() {
    let spec = KernelSpec::one_dim(1.2, 1.0);
    let torus = Torus::new(3, 1);
    let rates = periodized_rates(&spec, torus, 32);
    for rate in [RateFunction::linear(), RateFunction::capped(2)] {
        let thermo = Thermo::new(rate.clone());
        let (space, q) = exact_generator(&Model::ZeroRange(rate), torus, 4, &rates).unwrap();
        let law = thermo.site_law(0.8).unwrap();
        let pmf: Vec<f64> = (0..5).map(|k| law.prob(k)).collect();
        let mu = space.product_measure(&pmf);
        for s in 0..space.len() {
            for &(t, r) in q.row(s) {
                let back = q.rate(t, s);
                assert!((mu[s] * r - mu[t] * back).abs() < 1e-12, "{s} -> {t}");
            }
        }
    }
}

#[test]
fn relative_entropy_decays() {
    let spec = KernelSpec::one_dim(1.5, 1.0);
    let torus = Torus::new(3, 1);
    let rates = periodized_rates(&spec, torus, 32);
    let rate = RateFunction::linear();
    let (space, q) = exact_generator(&Model::ZeroRange(rate.clone()), torus, 3, &rates).unwrap();
    let law = Thermo::new(rate).site_law(1.0).unwrap();
    let pmf: Vec<f64> = (0..4).map(|k| law.prob(k)).collect();
    let reference = space.product_measure(&pmf);
    let mut start: Vec<f64> = reference.iter().enumerate().map(|(s, r)| r * (1.0 + 0.8 * ((s % 5) as f64 - 2.0) / 2.0)).collect();
    let z: f64 = start.iter().sum();
    start.iter_mut().for_each(|v| *v /= z);
    let times: Vec<f64> = (0..40).map(|i| 0.05 * i as f64).collect();
    let trace = entropy_decay_trace(&q, &start, &reference, &times).unwrap();
    for w in trace.windows(2) {
        assert!(w[1].entropy <= w[0].entropy + 1e-10);
    }
    for p in &trace {
        assert!(p.entropy_rate <= 1e-12);
        assert!(p.entropy_rate <= -2.0 * p.dirichlet + 1e-8);
    }
    // the exact derivative agrees with a centered difference
    let h = 1e-5;
    let pts = entropy_decay_trace(&q, &start, &reference, &[0.3 - h, 0.3, 0.3 + h]).unwrap();
    let fd = (pts[2].entropy - pts[0].entropy) / (2.0 * h);
    assert!((fd - pts[1].entropy_rate).abs() < 1e-6 * (1.0 + fd.abs()));
}

#[test]
fn dynkin_martingale_is_centered() {
    let n = 64;
    let k = kernel(n, 1.5);
    let theta = k.theta(n as f64);
    let torus = k.torus();
    let g = DensityField::from_fn(torus, |c| (2.0 * PI * c[0] as f64 / n as f64).sin());
    let reps = 150;
    let (mut m, mut m2, mut qv) = (Vec::new(), Vec::new(), Vec::new());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for r in 0..reps {
        let occ: Vec<u32> = (0..n).map(|x| (rng.random::<f64>() < 0.3 + 0.4 * (x < n / 2) as u32 as f64) as u32).collect();
        let mut sys = ParticleSystem::new(k.clone(), Model::Exclusion, occ, theta, n as f64, r).unwrap();
        let s = martingale_probe(&mut sys, &g, &[0.02]).unwrap()[0];
        m.push(s.martingale);
        m2.push(s.martingale * s.martingale);
        qv.push(s.quadratic_variation);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let se = |v: &[f64]| {
        let mu = mean(v);
        (v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0) / v.len() as f64).sqrt()
    };
    assert!(mean(&m).abs() <= 3.0 * se(&m), "{} vs {}", mean(&m), se(&m));
    // E M_T^2 = E <M>_T
    assert!((mean(&m2) - mean(&qv)).abs() <= 4.0 * se(&m2) + 4.0 * se(&qv));
}
