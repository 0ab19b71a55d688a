use std::f64::consts::PI;

use longjump::kernel::{continuum_c, continuum_symbol, periodized_rates};
use longjump::{DensityField, KernelSpec, LatticeKernel, PairField, Torus};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn k1(alpha: f64, n: usize) -> LatticeKernel {
    LatticeKernel::build(KernelSpec::one_dim(alpha, 1.0), n, 8).unwrap()
}

fn field(n: usize, seed: u64) -> DensityField {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DensityField::new(Torus::new(n, 1), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn folded_rates_are_symmetric(alpha in 0.2f64..1.95, half in 2usize..40) {
        let n = 2 * half;
        let k = k1(alpha, n);
        let t = k.torus();
        prop_assert_eq!(k.rate(0), 0.0);
        for r in 1..t.len() {
            prop_assert_eq!(k.rate(r), k.rate(t.neg(r)));
            prop_assert!(k.rate(r) > 0.0);
        }
        let total: f64 = k.rates().iter().sum();
        prop_assert!((total - k.p_star()).abs() < 1e-12 * total);
        let jumps = k.jumps();
        let w: f64 = (0..jumps.len()).map(|j| jumps.weight(j)).sum();
        prop_assert!((w - k.p_star()).abs() < 1e-12 * w);
        for j in 0..jumps.len() {
            prop_assert_eq!(t.site_of_vector(jumps.displacement(j)), jumps.residue(j));
        }
    }

    #[test]
    fn generator_is_self_adjoint_and_kills_constants(alpha in 0.3f64..1.9, half in 2usize..32, seed in 0u64..1000) {
        let n = 2 * half;
        let k = k1(alpha, n);
        let (u, v) = (field(n, seed), field(n, seed + 1));
        let (lu, lv) = (k.apply_ln(&u, 1.0).unwrap(), k.apply_ln(&v, 1.0).unwrap());
        let a: f64 = u.values().iter().zip(lv.values()).map(|(x, y)| x * y).sum();
        let b: f64 = v.values().iter().zip(lu.values()).map(|(x, y)| x * y).sum();
        prop_assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
        let spectral = k.apply_ln_spectral(&u, 1.0).unwrap();
        prop_assert!(spectral.sup_distance(&lu) < 1e-10 * (1.0 + lu.max().abs()));
        let c = k.apply_ln(&DensityField::constant(u.torus(), 3.0), 1.0).unwrap();
        prop_assert!(c.values().iter().all(|x| x.abs() < 1e-12));
        // the energy form is minus the pairing with the generator
        let e = k.energy(&u, &v, n as f64).unwrap();
        let pairing = -a * k.theta(n as f64) / n as f64;
        prop_assert!((e - pairing).abs() < 1e-9 * (1.0 + e.abs()));
    }

    #[test]
    fn pair_generator_on_gradients(alpha in 0.3f64..1.9, half in 2usize..20, seed in 0u64..1000) {
        let n = 2 * half;
        let k = k1(alpha, n);
        let f = field(n, seed);
        let g = PairField::from_fn(f.torus(), |x, y| f[x] - f[y]);
        let pair = k.apply_ln_pair(&g, 1.0).unwrap();
        let one = k.apply_ln(&f, 1.0).unwrap();
        for x in 0..n {
            prop_assert!((pair[x] - 2.0 * one[x]).abs() < 1e-10 * (1.0 + one[x].abs()));
        }
        let q = k.apply_qn_pair(&g, 1.0).unwrap();
        let q1 = k.apply_qn(&f, 1.0).unwrap();
        prop_assert!(q.sup_distance(&q1) < 1e-10 * (1.0 + q1.max()));
    }

    #[test]
    fn periodization_handles_any_side(alpha in 0.3f64..1.9, n in 2usize..12) {
        let spec = KernelSpec::one_dim(alpha, 1.0);
        let t = Torus::new(n, 1);
        let r = periodized_rates(&spec, t, 32);
        prop_assert_eq!(r[0], 0.0);
        for z in 1..n {
            prop_assert_eq!(r[z], r[t.neg(z)]);
        }
    }
}

#[test]
fn sampler_frequencies_follow_table() {
    let k = k1(1.2, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let draws = 400_000;
    let mut counts = vec![0u64; 32];
    for _ in 0..draws {
        counts[k.jumps().residue(k.sample_jump(&mut rng))] += 1;
    }
    assert_eq!(counts[0], 0);
    let mut chi2 = 0.0;
    for (r, &c) in counts.iter().enumerate().skip(1) {
        let expected = draws as f64 * k.rate(r) / k.p_star();
        chi2 += (c as f64 - expected).powi(2) / expected;
    }
    let critical = {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        ChiSquared::new(30.0).unwrap().inverse_cdf(0.999)
    };
    assert!(chi2 < critical, "chi2 {chi2} vs {critical}");
}

fn rescaled_error(alpha: f64, n: usize, m: usize) -> f64 {
    let k = LatticeKernel::<f64>::build(KernelSpec::one_dim(alpha, 1.0), n, 64).unwrap();
    let discrete = k.theta(n as f64) * k.levy_symbol(&[m]).unwrap();
    let limit = continuum_symbol(alpha, 1.0, 2.0 * PI * m as f64).unwrap();
    ((discrete - limit) / limit).abs()
}

#[test]
fn rescaled_symbol_approaches_continuum() {
    // theta psi_N(m) -> int h(x) (cos(2 pi m x) - 1) dx = -c |2 pi m|^alpha
    for &alpha in &[1.0, 1.5] {
        let c = continuum_c(alpha, 1.0).unwrap();
        for m in 1..4 {
            let direct = continuum_symbol(alpha, 1.0, 2.0 * PI * m as f64).unwrap();
            let homogeneous = -c * (2.0 * PI * m as f64).powf(alpha);
            assert!(((direct - homogeneous) / homogeneous).abs() < 1e-7);
        }
    }
    for m in 1..4 {
        let e = rescaled_error(1.0, 1024, m);
        assert!(e < 1e-2, "m {m}: {e}");
    }
    // the discretization error near the origin scales like N^{alpha - 2}
    let coarse = rescaled_error(1.5, 256, 1);
    let fine = rescaled_error(1.5, 1024, 1);
    assert!(fine < coarse && fine < 0.05, "{coarse} -> {fine}");
    let ratio = coarse / fine;
    assert!((1.6..2.5).contains(&ratio), "ratio {ratio}");
}

#[test]
fn two_dimensional_kernel() {
    let k = LatticeKernel::<f64>::build(KernelSpec { dim: 2, ..KernelSpec::one_dim(1.3, 1.0) }, 16, 4).unwrap();
    let t = k.torus();
    assert_eq!(t.len(), 256);
    for r in 1..t.len() {
        assert_eq!(k.rate(r), k.rate(t.neg(r)));
    }
    let f = DensityField::from_fn(t, |c| (2.0 * PI * c[0] as f64 / 16.0).cos());
    let lf = k.apply_ln(&f, 1.0).unwrap();
    let s = k.levy_symbol(&[1, 0]).unwrap();
    for x in 0..t.len() {
        assert!((lf[x] - s * f[x]).abs() < 1e-10);
    }
}
