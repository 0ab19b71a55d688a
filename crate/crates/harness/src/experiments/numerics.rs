//! Deterministic numerics: the alpha = 2 symbol, the Fisher variational
//! formula, and properties of the PDE solvers.

use std::f64::consts::PI;
use std::io::Write;

use longjump::pde::{linear_solve, nonlinear_solve, solution_diagnostics, variational_fisher_check, SolveOptions};
use longjump::{DensityField, Model, ParticleSystem, PdeOperator, SiteFamily};
use rand::Rng;

use super::{family, Run};
use crate::stats::{Report, Summary};
use crate::Result;

const ALPHA2_TOL: f64 = 0.10;
const FISHER_BEAT_TOL: f64 = 1e-12;
const FISHER_VALUE_TOL: f64 = 1e-10;
const CONSERVATION_TOL: f64 = 1e-10;
const RANGE_TOL: f64 = 1e-10;
const ENTROPY_TOL: f64 = 1e-9;
const MIN_RATE: f64 = 1.0;

/// `(2/N) sum_x f(x) cos(2 pi m x / N)`.
fn cosine_amplitude(f: &[f64], m: f64) -> f64 {
    let n = f.len() as f64;
    2.0 / n * f.iter().enumerate().map(|(x, v)| v * (2.0 * PI * m * x as f64 / n).cos()).sum::<f64>()
}

pub(crate) fn alpha2(run: &Run) -> Result<Report> {
    let cfg = run.cfg;
    let k = cfg.kernel();
    let mode = cfg.params.mode.unwrap_or(1);
    // theta psi_N(m) -> -c_scale (2 pi m)^2: the truncated second moment of
    // h grows like 2 c_scale ln N, which the log-corrected time absorbs
    let predicted = k.c_scale * (2.0 * PI * mode as f64).powi(2);
    let mut csv = run.out.create("decay_rates.csv")?;
    writeln!(csv, "N,theta,rate,predicted,relative_error")?;
    let mut errors = Vec::new();
    for &n in &cfg.scales {
        let kernel = run.kernel(n)?;
        let op = PdeOperator::new(kernel);
        let rate = -op.multiplier()[mode as usize];
        let rel = (rate - predicted).abs() / predicted;
        writeln!(csv, "{n},{},{rate},{predicted},{rel}", op.theta())?;
        errors.push((n, rate, rel));
    }
    csv.flush()?;
    let mut report = Report::new(&cfg.experiment);
    let last = *errors.last().expect("scales");
    report.check(
        "within_tolerance",
        last.2 < ALPHA2_TOL,
        format!("decay rate {:.4} vs {predicted:.4} at N={}: {:.2}%", last.1, last.0, 100.0 * last.2),
    );
    report.check(
        "improving",
        errors.len() > 1 && errors.windows(2).all(|w| w[1].2 < w[0].2),
        errors
            .iter()
            .map(|(n, _, e)| format!("N={n}: {:.2}%", 100.0 * e))
            .collect::<Vec<_>>()
            .join(", "),
    );

    // exclusion at the smallest scale: the mean mode amplitude decays at
    // exactly the finite-N rate
    if cfg.replicas > 1 && cfg.horizon() > 0.0 {
        let n = cfg.scales[0];
        let kernel = run.kernel(n)?;
        let theta = kernel.theta(n as f64);
        let op = PdeOperator::new(kernel.clone());
        let u0 = cfg.profile().discretize(kernel.torus(), n as f64);
        let a0 = cosine_amplitude(u0.values(), mode as f64);
        let expected = a0 * (op.multiplier()[mode as usize] * cfg.horizon()).exp();
        let amps = run.replicas(cfg.replicas, |r| {
            let occ = SiteFamily::Bernoulli.sample_product(&u0, &mut run.rng("alpha2/init", r))?;
            let mut sys = ParticleSystem::with_rng(kernel.clone(), Model::Exclusion, occ, theta, n as f64, run.rng("alpha2/dyn", r))?;
            sys.run_until(cfg.horizon())?;
            let occ: Vec<f64> = sys.occupancy().iter().map(|&v| v as f64).collect();
            Ok(cosine_amplitude(&occ, mode as f64))
        })?;
        let s = Summary::of(&amps);
        report.note(format!(
            "exclusion N={n}: mode amplitude {:.4} +- {:.4} at T, finite-N prediction {expected:.4} ({:.1} SE)",
            s.mean,
            s.se,
            (s.mean - expected).abs() / s.se
        ));
    }
    Ok(report)
}

pub(crate) fn fisher(run: &Run) -> Result<Report> {
    let cfg = run.cfg;
    let n = cfg.scales[0];
    let trials = cfg.params.trials.unwrap_or(100);
    let eps = cfg.params.epsilon.unwrap_or(1e-2);
    let kernel = run.kernel(n)?;
    let op = PdeOperator::new(kernel.clone());
    let mut rng = run.rng("fisher", 0);
    let phi = DensityField::new(kernel.torus(), (0..n).map(|_| rng.random_range(0.2..2.0)).collect());
    let check = variational_fisher_check(&phi, &op, trials, eps, &mut rng)?;
    let quarter = check.closed_form / 4.0;
    let mut w = run.out.create("fisher.csv")?;
    writeln!(w, "N,trials,epsilon,closed_form,at_optimum,best_trial")?;
    writeln!(
        w,
        "{n},{trials},{eps},{:.17e},{:.17e},{:.17e}",
        check.closed_form, check.at_optimum, check.best_trial
    )?;
    w.flush()?;
    let mut report = Report::new(&cfg.experiment);
    report.check(
        "maximizer_beats_perturbations",
        check.best_trial <= check.at_optimum + FISHER_BEAT_TOL,
        format!("J(F*) = {:.10e}, best of {trials} = {:.10e}", check.at_optimum, check.best_trial),
    );
    let rel = (check.at_optimum - quarter).abs() / quarter.abs().max(1.0);
    report.check(
        "value_is_quarter_fisher",
        rel <= FISHER_VALUE_TOL,
        format!("J(F*) - I/4 = {:.2e} (relative {rel:.2e})", check.at_optimum - quarter),
    );
    Ok(report)
}

/// Cell averages of `fine` onto a grid `factor` times coarser.
fn coarsen(fine: &[f64], factor: usize) -> Vec<f64> {
    fine.chunks(factor).map(|c| c.iter().sum::<f64>() / factor as f64).collect()
}

pub(crate) fn pde_properties(run: &Run) -> Result<Report> {
    let cfg = run.cfg;
    let model = run.model()?;
    let family = family(&model);
    let profile = cfg.profile();
    let t = cfg.horizon();
    let flux = super::hydro::flux_for(&model, 1.05 * profile.sup())?;
    let mut report = Report::new(&cfg.experiment);

    let n = cfg.scales[0];
    let op = PdeOperator::new(run.kernel(n)?);
    let u0 = profile.discretize(op.kernel().torus(), n as f64);
    let (lo, hi, m0) = (u0.min(), u0.max(), u0.sum());
    let record: Vec<f64> = (0..=10).map(|i| t * i as f64 / 10.0).collect();
    let opts = SolveOptions {
        record: record.clone(),
        ..SolveOptions::default()
    };
    let sol = nonlinear_solve(&u0, t, &op, &flux, &opts)?;
    let linear: Vec<DensityField> = record.iter().map(|&s| linear_solve(&u0, s, &op).u).collect();
    let mass_defect = sol
        .mass
        .iter()
        .map(|&(_, m)| m)
        .chain(linear.iter().map(|u| u.sum()))
        .map(|m| ((m - m0) / m0).abs())
        .fold(0.0f64, f64::max);
    report.check(
        "mass_conserved",
        mass_defect <= CONSERVATION_TOL,
        format!("largest relative mass change {mass_defect:.2e}"),
    );
    let range_defect = sol
        .snapshots
        .iter()
        .map(|s| &s.u)
        .chain(&linear)
        .map(|u| (lo - u.min()).max(u.max() - hi))
        .fold(f64::NEG_INFINITY, f64::max);
    report.check(
        "maximum_principle",
        range_defect <= RANGE_TOL,
        format!("largest excursion beyond [{lo}, {hi}]: {range_defect:.2e}"),
    );
    let mut diag_csv = run.out.create("diagnostics.csv")?;
    writeln!(diag_csv, "t,mass,max,min,entropy,energy,fisher")?;
    let rho_ref = m0 / n as f64;
    let mut rise = f64::NEG_INFINITY;
    let mut last = f64::INFINITY;
    for s in &sol.snapshots {
        let d = solution_diagnostics(s, &op, &flux, &family, rho_ref)?;
        writeln!(diag_csv, "{},{},{},{},{},{},{}", d.t, d.mass, d.max, d.min, d.entropy, d.energy, d.fisher)?;
        rise = rise.max(d.entropy - last);
        last = d.entropy;
    }
    diag_csv.flush()?;
    report.check(
        "entropy_nonincreasing",
        rise <= ENTROPY_TOL,
        format!("largest entropy increase {rise:.2e}"),
    );

    let mut solutions = Vec::new();
    for &n in &cfg.scales {
        let op = PdeOperator::new(run.kernel(n)?);
        let u0 = profile.discretize(op.kernel().torus(), n as f64);
        let sol = nonlinear_solve(&u0, t, &op, &flux, &SolveOptions::default())?;
        solutions.push((n, sol.final_dt, sol.state.u.into_values()));
    }
    let mut csv = run.out.create("self_convergence.csv")?;
    writeln!(csv, "N,final_dt,sup_error_vs_next,rate")?;
    let mut errors = Vec::new();
    for w in solutions.windows(2) {
        let factor = w[1].0 / w[0].0;
        let err = w[0]
            .2
            .iter()
            .zip(coarsen(&w[1].2, factor))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        errors.push((w[0].0, w[0].1, err, factor));
    }
    let mut rates = Vec::new();
    for (i, e) in errors.iter().enumerate() {
        let rate = errors
            .get(i + 1)
            .map(|next| (e.2 / next.2).ln() / (e.3 as f64).ln());
        if let Some(r) = rate {
            rates.push(r);
        }
        writeln!(csv, "{},{},{},{}", e.0, e.1, e.2, rate.map_or(String::new(), |r| r.to_string()))?;
    }
    csv.flush()?;
    let min_rate = rates.iter().cloned().fold(f64::INFINITY, f64::min);
    report.check(
        "self_convergence_rate",
        !rates.is_empty() && min_rate >= MIN_RATE,
        format!(
            "sup errors {}; observed rates {}",
            errors.iter().map(|e| format!("N={}: {:.2e}", e.0, e.2)).collect::<Vec<_>>().join(", "),
            rates.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>().join(", ")
        ),
    );
    Ok(report)
}
