//! Experiments on exactly enumerated small systems and closed forms.

use std::f64::consts::E;
use std::io::Write;

use longjump::dynamics::{entropy_decay_trace, exact_exclusion_by_particles, exact_generator};
use longjump::kernel::periodized_rates;
use longjump::measures::Growth;
use longjump::{LatticeKernel, Model, RateFunction, Thermo, Torus};

use super::Run;
use crate::stats::Report;
use crate::Result;

const STATIONARITY_TOL: f64 = 1e-12;
const ENTROPY_TOL: f64 = 1e-10;
const DISSIPATION_TOL: f64 = 1e-8;

pub(crate) fn stationarity(run: &Run) -> Result<Report> {
    let cfg = run.cfg;
    let p = &cfg.params;
    let densities = p.densities.clone().unwrap_or_else(|| vec![0.1, 0.5, 0.9]);
    let kcfg = cfg.kernel();
    let mut report = Report::new(&cfg.experiment);
    let mut csv = run.out.create("residuals.csv")?;
    writeln!(csv, "system,rho,residual")?;

    let side = p.exclusion_side.unwrap_or(4);
    let kernel = LatticeKernel::build(kcfg.spec(), side, kcfg.fold_cutoff)?;
    let (space, q) = exact_exclusion_by_particles(&kernel)?;
    let (_, direct) = exact_generator(&Model::Exclusion, kernel.torus(), 1, kernel.rates())?;
    let mut row_defect: f64 = 0.0;
    for s in 0..space.len() {
        for t in 0..space.len() {
            if s != t {
                row_defect = row_defect.max((q.rate(s, t) - direct.rate(s, t)).abs());
            }
        }
    }
    let mut worst: f64 = 0.0;
    for &rho in densities.iter().filter(|r| **r <= 1.0) {
        let mu = space.product_measure(&[1.0 - rho, rho]);
        let r = q.left_apply(&mu).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        writeln!(csv, "exclusion,{rho},{r}")?;
        worst = worst.max(r);
    }
    report.check(
        "exclusion_bernoulli_invariant",
        worst < STATIONARITY_TOL,
        format!("max |mu Q| = {worst:.2e} on N={side}"),
    );
    report.note(format!("particle-picture and site-picture generators differ by {row_defect:.2e}"));

    let rate = run.rate()?;
    let thermo = Thermo::new(rate.clone());
    let side = p.zero_range_side.unwrap_or(3);
    let cap = p.cap.unwrap_or(4);
    let torus = Torus::new(side, 1);
    let rates = periodized_rates(&kcfg.spec(), torus, kcfg.fold_cutoff);
    let (space, q) = exact_generator(&Model::ZeroRange(rate), torus, cap, &rates)?;
    let mut worst: f64 = 0.0;
    for &rho in &densities {
        let law = thermo.site_law(rho)?;
        let pmf: Vec<f64> = (0..=cap as usize).map(|k| law.prob(k)).collect();
        let mu = space.product_measure(&pmf);
        let mut r: f64 = 0.0;
        for s in 0..space.len() {
            for &(t, rate) in q.row(s) {
                r = r.max((mu[s] * rate - mu[t] * q.rate(t, s)).abs());
            }
        }
        writeln!(csv, "zero_range,{rho},{r}")?;
        worst = worst.max(r);
    }
    csv.flush()?;
    report.check(
        "zero_range_detailed_balance",
        worst < STATIONARITY_TOL,
        format!("max |mu(s) q(s,t) - mu(t) q(t,s)| = {worst:.2e} on N={side}, cap {cap}"),
    );
    Ok(report)
}

pub(crate) fn entropy_decay(run: &Run) -> Result<Report> {
    let cfg = run.cfg;
    let p = &cfg.params;
    let kcfg = cfg.kernel();
    let side = p.zero_range_side.unwrap_or(3);
    let cap = p.cap.unwrap_or(3);
    let rho = p.density.unwrap_or(1.0);
    let eps = p.perturbation.unwrap_or(0.8);
    let samples = p.samples.unwrap_or(50).max(2);
    let rate = run.rate()?;
    let torus = Torus::new(side, 1);
    let rates = periodized_rates(&kcfg.spec(), torus, kcfg.fold_cutoff);
    let (space, q) = exact_generator(&Model::ZeroRange(rate.clone()), torus, cap, &rates)?;
    let law = Thermo::new(rate).site_law(rho)?;
    let pmf: Vec<f64> = (0..=cap as usize).map(|k| law.prob(k)).collect();
    let reference = space.product_measure(&pmf);
    // density tilted by a fixed pattern over the state index
    let mut start: Vec<f64> = reference
        .iter()
        .enumerate()
        .map(|(s, r)| r * (1.0 + eps * ((s % 5) as f64 - 2.0) / 2.0))
        .collect();
    let z: f64 = start.iter().sum();
    start.iter_mut().for_each(|v| *v /= z);
    let times: Vec<f64> = (0..samples)
        .map(|i| cfg.horizon() * i as f64 / (samples - 1) as f64)
        .collect();
    let trace = entropy_decay_trace(&q, &start, &reference, &times)?;
    let mut csv = run.out.create("entropy.csv")?;
    writeln!(csv, "t,entropy,entropy_rate,dirichlet")?;
    for pt in &trace {
        writeln!(csv, "{},{},{},{}", pt.time, pt.entropy, pt.entropy_rate, pt.dirichlet)?;
    }
    csv.flush()?;

    let mut report = Report::new(&cfg.experiment);
    let rise = trace
        .windows(2)
        .map(|w| w[1].entropy - w[0].entropy)
        .fold(f64::NEG_INFINITY, f64::max);
    report.check(
        "entropy_nonincreasing",
        rise <= ENTROPY_TOL,
        format!("largest increase {rise:.2e} over {samples} times"),
    );
    let t0 = trace[0];
    report.check(
        "initial_dissipation",
        t0.entropy_rate <= -2.0 * t0.dirichlet + DISSIPATION_TOL,
        format!("dH/dt = {:.6e}, -2 D = {:.6e}", t0.entropy_rate, -2.0 * t0.dirichlet),
    );
    report.note(format!(
        "H from {:.6e} to {:.6e}",
        trace[0].entropy,
        trace.last().expect("samples").entropy
    ));
    Ok(report)
}

/// `(name, computed, expected, tolerance)`, compared in absolute terms.
type Row = (String, f64, f64, f64);

pub(crate) fn thermo(run: &Run) -> Result<Report> {
    let poisson = Thermo::new(RateFunction::linear());
    let geometric = Thermo::new(RateFunction::indicator());
    let mut rows: Vec<Row> = Vec::new();
    let mut add = |name: &str, got: f64, want: f64, tol: f64| rows.push((name.to_string(), got, want, tol));

    add("Z_poisson(1)", poisson.partition(1.0)?, E, 1e-10);
    add("Z_geometric(0.5)", geometric.partition(0.5)?, 2.0, 1e-10);
    add("Z_poisson(0)", poisson.partition(0.0)?, 1.0, 1e-15);
    for rho in [0.0, 0.3, 1.0, 2.5, 7.0] {
        add(&format!("phi_poisson({rho})"), poisson.fugacity(rho)?, rho, 1e-9);
    }
    add("phi_geometric(1)", geometric.fugacity(1.0)?, 0.5, 1e-9);
    add("phi_geometric(3)", geometric.fugacity(3.0)?, 0.75, 1e-9);
    add("phi_geometric(0)", geometric.fugacity(0.0)?, 0.0, 1e-15);
    add("M_poisson(1,1)", poisson.mgf(1.0, 1.0)?, (E - 1.0).exp(), 1e-6);
    add("M_poisson(1,0)", poisson.mgf(1.0, 0.0)?, 1.0, 1e-12);
    let phi = 0.5f64;
    add(
        "M_geometric(1,0.3)",
        geometric.mgf(1.0, 0.3)?,
        (1.0 - phi) / (1.0 - phi * 0.3f64.exp()),
        1e-10,
    );
    add("H_poisson(2|1)", poisson.entropy_fn(2.0, 1.0)?, 2.0 * 2f64.ln() - 1.0, 1e-6);
    add("H_poisson(1|1)", poisson.entropy_fn(1.0, 1.0)?, 0.0, 1e-12);
    for a in [0.1f64, 0.5, 1.0, 2.0, 4.0] {
        let closed = a * a.ln() - a + 1.0;
        add(&format!("legendre_poisson({a}|1)"), poisson.entropy_legendre(a, 1.0)?, closed, 1e-6);
        let h = geometric.entropy(a, 1.0)?;
        add(&format!("legendre_geometric({a}|1)"), geometric.entropy_legendre(a, 1.0)?, h, 1e-6);
        add(&format!("H_geometric_quadrature({a}|1)"), geometric.entropy_fn(a, 1.0)?, h, 1e-6);
    }
    let bounded = |g: &RateFunction| match g.classify() {
        Ok(Growth::Bounded { phi_c }) => phi_c,
        _ => f64::NAN,
    };
    add("phi_c_indicator", bounded(&RateFunction::indicator()), 1.0, 0.0);
    add("phi_c_min(n,5)", bounded(&RateFunction::capped(5)), 5.0, 0.0);
    let unbounded = matches!(RateFunction::linear().classify(), Ok(Growth::Unbounded));
    add("linear_is_unbounded", unbounded as u8 as f64, 1.0, 0.0);

    let mut csv = run.out.create("closed_forms.csv")?;
    writeln!(csv, "quantity,computed,expected,tolerance")?;
    let mut report = Report::new(&run.cfg.experiment);
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for (name, got, want, tol) in &rows {
        writeln!(csv, "{name},{got:.17e},{want:.17e},{tol:e}")?;
        let err = (got - want).abs();
        if err.is_nan() || err > *tol {
            failures.push(format!("{name}: {got} vs {want}"));
        }
        if *tol > 0.0 {
            worst = worst.max(err / tol);
        }
    }
    csv.flush()?;
    let phis: Vec<f64> = (0..20).map(|i| 0.05 * i as f64).collect();
    for (name, t) in [("poisson", &poisson), ("geometric", &geometric)] {
        let mut w = run.out.create(&format!("thermo_{name}.csv"))?;
        t.write_thermo_csv(&mut w, &phis)?;
        w.flush()?;
    }
    report.check(
        "closed_forms",
        failures.is_empty(),
        if failures.is_empty() {
            format!("{} quantities, worst error {worst:.2} of tolerance", rows.len())
        } else {
            failures.join("; ")
        },
    );
    Ok(report)
}
