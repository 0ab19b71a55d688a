use longjump::measures::{quantile_coupling, FluxTable};
use longjump::{Profile, RateFunction, SiteFamily, SiteLaw, Thermo, Torus};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Discrete, Geometric, Poisson};

fn poisson() -> Thermo {
    Thermo::new(RateFunction::linear())
}

fn geometric() -> Thermo {
    Thermo::new(RateFunction::indicator())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn poisson_site_law(rho in 0.01f64..8.0) {
        let law = poisson().site_law(rho).unwrap();
        let oracle = Poisson::new(rho).unwrap();
        for k in 0..law.pmf().len().min(60) {
            prop_assert!((law.prob(k) - oracle.pmf(k as u64)).abs() < 1e-12);
        }
        prop_assert!((law.mean() - rho).abs() < 1e-10 * (1.0 + rho));
        prop_assert!((law.variance() - rho).abs() < 1e-9 * (1.0 + rho));
        // Palm law of a Poisson site is the same Poisson law
        let palm = law.palm();
        for k in 0..30 {
            prop_assert!((palm.prob(k) - law.prob(k)).abs() < 1e-12);
        }
    }

    #[test]
    fn geometric_site_law(rho in 0.01f64..6.0) {
        let t = geometric();
        let phi = t.fugacity(rho).unwrap();
        prop_assert!((phi - rho / (1.0 + rho)).abs() < 1e-10);
        let law = t.site_law(rho).unwrap();
        // statrs counts trials, so shift by one
        let oracle = Geometric::new(1.0 - phi).unwrap();
        for k in 0..40 {
            prop_assert!((law.prob(k) - oracle.pmf(k as u64 + 1)).abs() < 1e-12);
        }
        prop_assert!((t.partition(phi).unwrap() - 1.0 / (1.0 - phi)).abs() < 1e-10 / (1.0 - phi));
    }

    #[test]
    fn fugacity_inverts_density(phi in 0.001f64..0.95) {
        for t in [poisson(), geometric(), Thermo::new(RateFunction::capped(3))] {
            let rho = t.density(phi).unwrap();
            prop_assert!((t.fugacity(rho).unwrap() - phi).abs() < 1e-9 * phi.max(1e-3));
            prop_assert!((t.expected_rate(rho).unwrap() - phi).abs() < 1e-9);
        }
    }

    #[test]
    fn entropy_is_nonnegative_and_dual(a in 0.02f64..4.0, rho in 0.05f64..4.0) {
        for t in [poisson(), geometric()] {
            let h = t.entropy(a, rho).unwrap();
            prop_assert!(h >= -1e-12);
            prop_assert!((t.entropy_legendre(a, rho).unwrap() - h).abs() < 1e-7 * (1.0 + h));
            prop_assert!(t.entropy(rho, rho).unwrap().abs() < 1e-12);
        }
        // Poisson: a ln(a/rho) - a + rho
        let closed = a * (a / rho).ln() - a + rho;
        prop_assert!((poisson().entropy(a, rho).unwrap() - closed).abs() < 1e-10 * (1.0 + closed));
    }

    #[test]
    fn quantile_coupling_is_monotone(r1 in 0.05f64..3.0, dr in 0.0f64..3.0, seed in 0u64..10_000) {
        let t = Thermo::new(RateFunction::capped(2));
        let lo = t.site_law(r1).unwrap();
        let hi = t.site_law(r1 + dr).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..50 {
            let v = quantile_coupling(&[&lo, &hi], &mut rng);
            prop_assert!(v[0] <= v[1]);
        }
        // stochastic domination of the site laws themselves
        for k in 0..lo.cdf().len().min(hi.cdf().len()) {
            prop_assert!(hi.cdf()[k] <= lo.cdf()[k] + 1e-12);
        }
    }

    #[test]
    fn profile_cell_averages_integrate(base in 0.1f64..1.0, height in 0.0f64..2.0, from in 0.0f64..0.5, width in 0.01f64..0.5, n in 8usize..200) {
        let p = Profile::step(base, height, from, from + width);
        let f = p.discretize(Torus::new(n, 1), n as f64);
        let mass = f.sum() / n as f64;
        prop_assert!((mass - (base + height * width)).abs() < 1e-12);
        prop_assert!(f.min() >= base - 1e-12 && f.max() <= base + height + 1e-12);
    }
}

#[test]
fn mgf_matches_closed_forms() {
    let rho = 1.3f64;
    for &theta in &[-1.0f64, -0.2, 0.3, 0.5] {
        let exact = (rho * (theta.exp() - 1.0)).exp();
        assert!((poisson().mgf(rho, theta).unwrap() - exact).abs() < 1e-10 * exact);
        let phi = rho / (1.0 + rho);
        let g = (1.0 - phi) / (1.0 - phi * theta.exp());
        assert!((geometric().mgf(rho, theta).unwrap() - g).abs() < 1e-10 * g);
    }
}

#[test]
fn bounded_rate_flux() {
    let table = FluxTable::build(&geometric(), 10.0, 1e-10).unwrap();
    for i in 0..=400 {
        let rho = i as f64 * 0.025;
        assert!((table.eval(rho) - rho / (1.0 + rho)).abs() < 1e-8, "rho {rho}");
    }
}

#[test]
fn sampled_products_have_the_right_mean() {
    let family = SiteFamily::ZeroRange(geometric());
    let torus = Torus::new(4000, 1);
    let field = Profile::Constant { value: 0.7 }.discretize(torus, 4000.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = family.sample_product(&field, &mut rng).unwrap();
    let mean = s.iter().sum::<u32>() as f64 / 4000.0;
    // variance of a geometric site is rho (1 + rho)
    let se = (0.7f64 * 1.7 / 4000.0).sqrt();
    assert!((mean - 0.7).abs() < 4.0 * se, "{mean}");
    let b = SiteLaw::bernoulli(0.3).unwrap();
    assert_eq!(b.pmf(), &[0.7, 0.3]);
}
