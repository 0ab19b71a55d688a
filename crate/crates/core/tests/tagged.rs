use std::sync::Arc;

use longjump::tagged::{empirical_cf, exp_martingale, free_walk_cf, palm_environment};
use longjump::{Construction, KernelSpec, LatticeKernel, RateFunction, TaggedSim, Thermo};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn kernel(n: usize) -> Arc<LatticeKernel> {
    Arc::new(LatticeKernel::build(KernelSpec::one_dim(1.5, 1.0), n, 8).unwrap())
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0);
    (m, (var / v.len() as f64).sqrt())
}

/// Final positions and origin occupations of `reps` independent tags.
fn ensemble(n: usize, rate: &RateFunction, construction: Construction, reps: u64, t: f64, seed: u64) -> (Vec<i64>, Vec<u32>) {
    let k = kernel(n);
    let thermo = Thermo::new(rate.clone());
    let theta = k.theta(n as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut xs, mut zs) = (Vec::new(), Vec::new());
    for r in 0..reps {
        let env = palm_environment(&thermo, 1.0, k.torus(), &mut rng).unwrap();
        let mut s = TaggedSim::new(k.clone(), rate.clone(), env, construction, theta, n as f64, seed ^ (r << 20)).unwrap();
        s.run_until(t);
        assert_eq!(s.counter_displacement(), s.position());
        xs.push(s.x());
        zs.push(s.zeta0());
    }
    (xs, zs)
}

#[test]
fn linear_rate_tag_is_a_free_walk() {
    let n = 32;
    let k = kernel(n);
    let thermo = Thermo::new(RateFunction::linear());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let env = palm_environment(&thermo, 0.5, k.torus(), &mut rng).unwrap();
    let mut s = TaggedSim::new(k.clone(), RateFunction::linear(), env, Construction::Joint, 1.0, n as f64, 8).unwrap();
    let mut counts = vec![0u64; n];
    let mut jumps = 0u64;
    while jumps < 100_000 {
        if let Some(e) = s.step_until(f64::INFINITY).event {
            if e.tag_moved {
                counts[k.jumps().residue(e.entry)] += 1;
                jumps += 1;
            }
        }
    }
    let chi2: f64 = (1..n)
        .map(|r| {
            let expected = jumps as f64 * k.rate(r) / k.p_star();
            (counts[r] as f64 - expected).powi(2) / expected
        })
        .sum();
    let critical = ChiSquared::new((n - 2) as f64).unwrap().inverse_cdf(0.999);
    assert!(chi2 < critical, "{chi2} vs {critical}");
    // rate of tag jumps is p_star per unit micro time
    let rate = jumps as f64 / s.clock().micro_time();
    assert!((rate / k.p_star() - 1.0).abs() < 0.02, "{rate}");
}

#[test]
fn two_constructions_agree_in_law() {
    let reps = 2000;
    let rate = RateFunction::indicator();
    let (a, za) = ensemble(32, &rate, Construction::Joint, reps, 0.05, 1);
    let (b, zb) = ensemble(32, &rate, Construction::Environment, reps, 0.05, 2);
    let ks = |a: &[i64], b: &[i64]| {
        let (lo, hi) = (a.iter().chain(b).min().copied().unwrap(), a.iter().chain(b).max().copied().unwrap());
        (lo..=hi)
            .map(|v| {
                let fa = a.iter().filter(|&&x| x <= v).count() as f64 / a.len() as f64;
                let fb = b.iter().filter(|&&x| x <= v).count() as f64 / b.len() as f64;
                (fa - fb).abs()
            })
            .fold(0.0, f64::max)
    };
    let critical = 1.95 * (2.0 / reps as f64).sqrt();
    let d = ks(&a, &b);
    assert!(d < critical, "KS {d} vs {critical}");
    let za: Vec<i64> = za.iter().map(|&z| z as i64).collect();
    let zb: Vec<i64> = zb.iter().map(|&z| z as i64).collect();
    assert!(ks(&za, &zb) < critical);
    // centered walk
    let xs: Vec<f64> = a.iter().map(|&x| x as f64).collect();
    let (m, se) = mean_se(&xs);
    assert!(m.abs() < 3.5 * se, "{m} +- {se}");
}

#[test]
fn palm_measure_is_stationary_for_the_environment() {
    let rate = RateFunction::indicator();
    let (_, z) = ensemble(32, &rate, Construction::Environment, 1500, 0.05, 3);
    let palm = Thermo::new(rate).site_law(1.0).unwrap().palm();
    let zs: Vec<f64> = z.iter().map(|&v| v as f64).collect();
    let (m, se) = mean_se(&zs);
    assert!((m - palm.mean()).abs() < 4.0 * se, "{m} vs {}", palm.mean());
    let p0 = z.iter().filter(|&&v| v == 0).count() as f64 / z.len() as f64;
    let se0 = (palm.prob(0) * (1.0 - palm.prob(0)) / z.len() as f64).sqrt();
    assert!((p0 - palm.prob(0)).abs() < 4.0 * se0);
}

#[test]
fn exponential_martingale_has_unit_mean() {
    let n = 32;
    let k = kernel(n);
    let rate = RateFunction::linear();
    let thermo = Thermo::new(rate.clone());
    let theta = k.theta(n as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for &th in &[0.7, -0.7, 3.0] {
        let (mut re, mut im) = (Vec::new(), Vec::new());
        for r in 0..300 {
            let env = palm_environment(&thermo, 1.0, k.torus(), &mut rng).unwrap();
            let mut s = TaggedSim::new(k.clone(), rate.clone(), env, Construction::Joint, theta, n as f64, r).unwrap();
            let traj = s.run_recording(0.05);
            let m = exp_martingale(&traj, th, &k, &rate, n as f64).unwrap();
            let last = m.last().unwrap().1;
            re.push(last.re);
            im.push(last.im);
        }
        let ((mr, sr), (mi, si)) = (mean_se(&re), mean_se(&im));
        assert!((mr - 1.0).abs() <= 3.5 * sr, "theta {th}: re {mr} +- {sr}");
        assert!(mi.abs() <= 3.5 * si, "theta {th}: im {mi} +- {si}");
    }
}

#[test]
fn characteristic_function_matches_free_walk() {
    let n = 64;
    let reps = 1000;
    let (xs, _) = ensemble(n, &RateFunction::linear(), Construction::Joint, reps, 0.05, 5);
    let samples: Vec<f64> = xs.iter().map(|&x| x as f64 / n as f64).collect();
    let thetas = [0.0, 1.0, 2.0, 4.0, 8.0];
    let cf = empirical_cf(&samples, &thetas).unwrap();
    let k = kernel(n);
    for p in &cf {
        let exact = free_walk_cf(&k, p.theta, 0.05, n as f64, k.theta(n as f64)).unwrap();
        assert!((p.re - exact).abs() <= 3.5 * p.se_re + 1e-12, "theta {}: {} vs {exact}", p.theta, p.re);
        assert!(p.im.abs() <= 3.5 * p.se_im + 1e-12);
    }
}
