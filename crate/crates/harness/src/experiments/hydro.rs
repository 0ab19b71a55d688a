//! Hydrodynamic convergence and the Dynkin martingale.

use std::f64::consts::PI;
use std::io::Write;

use longjump::dynamics::martingale_probe;
use longjump::pde::{linear_solve, nonlinear_solve, solution_diagnostics, SolveOptions};
use longjump::{DensityField, Flux, FluxTable, Model, ParticleSystem, PdeOperator, RateFunction, Thermo};

use super::{family, Run};
use crate::stats::{Report, Summary};
use crate::Result;

const DEFAULT_L1_THRESHOLD: f64 = 0.05;
/// Recorded times are `horizon * k / RECORD_STEPS`.
const RECORD_STEPS: usize = 4;

pub(crate) fn flux_for(model: &Model, rho_max: f64) -> Result<Flux> {
    Ok(match model {
        Model::Exclusion => Flux::Identity,
        Model::ZeroRange(g) if *g == RateFunction::linear() => Flux::Identity,
        Model::ZeroRange(g) => Flux::Tabulated(FluxTable::build(&Thermo::new(g.clone()), rho_max, 1e-10)?),
    })
}

pub(crate) fn hydro(run: &Run) -> Result<Report> {
    let cfg = run.cfg;
    let model = run.model()?;
    let family = family(&model);
    let profile = cfg.profile();
    let flux = flux_for(&model, 1.05 * profile.sup())?;
    let horizon = cfg.horizon();
    let times: Vec<f64> = if horizon == 0.0 {
        vec![0.0]
    } else {
        (0..=RECORD_STEPS).map(|k| horizon * k as f64 / RECORD_STEPS as f64).collect()
    };
    let blocks = cfg.blocks.expect("validated");
    let threshold = cfg.params.l1_threshold.unwrap_or(DEFAULT_L1_THRESHOLD);

    let mut l1_csv = run.out.create("l1.csv")?;
    writeln!(l1_csv, "N,replica,t,l1")?;
    let mut summary_csv = run.out.create("summary.csv")?;
    writeln!(summary_csv, "N,t,mean,se,ci_lo,ci_hi,noise_floor")?;
    let mut profiles_csv = run.out.create("profiles.csv")?;
    writeln!(profiles_csv, "series,N,x,y")?;
    let mut diag_csv = run.out.create("diagnostics.csv")?;
    writeln!(diag_csv, "N,t,mass,max,min,entropy,energy,fisher")?;

    let mut finals = Vec::new();
    for &n in &cfg.scales {
        let kernel = run.kernel(n)?;
        let torus = kernel.torus();
        let op = PdeOperator::new(kernel.clone());
        let theta = op.theta();
        let l = n / blocks;
        let u0 = profile.discretize(torus, n as f64);
        let reference: Vec<DensityField> = match flux {
            Flux::Identity => times.iter().map(|&t| linear_solve(&u0, t, &op).u).collect(),
            Flux::Tabulated(_) => {
                let opts = SolveOptions {
                    record: times.clone(),
                    ..SolveOptions::default()
                };
                let sol = nonlinear_solve(&u0, horizon, &op, &flux, &opts)?;
                sol.snapshots.into_iter().map(|s| s.u).collect()
            }
        };
        let rho_ref = u0.sum() / n as f64;
        for (t, u) in times.iter().zip(&reference) {
            let state = longjump::PdeState { u: u.clone(), t: *t };
            let d = solution_diagnostics(&state, &op, &flux, &family, rho_ref)?;
            writeln!(
                diag_csv,
                "{n},{},{},{},{},{},{},{}",
                d.t, d.mass, d.max, d.min, d.entropy, d.energy, d.fisher
            )?;
        }
        let blocked: Vec<DensityField> = reference.iter().map(|u| u.block_average(l)).collect();

        let runs = run.replicas(cfg.replicas, |r| {
            let mut rng = run.rng(&format!("hydro/init/{n}"), r);
            let occ = family.sample_product(&u0, &mut rng)?;
            let mut sys = ParticleSystem::with_rng(
                kernel.clone(),
                model.clone(),
                occ,
                theta,
                n as f64,
                run.rng(&format!("hydro/dyn/{n}"), r),
            )?;
            if let Some(b) = cfg.params.max_events {
                sys.set_event_budget(b);
            }
            let mut errors = Vec::with_capacity(times.len());
            for (&t, target) in times.iter().zip(&blocked) {
                sys.run_until(t)?;
                errors.push(sys.empirical_field(l)?.l1_distance(target));
            }
            Ok((errors, sys.occupancy().to_vec()))
        })?;

        for (r, (errors, _)) in runs.iter().enumerate() {
            for (t, e) in times.iter().zip(errors) {
                writeln!(l1_csv, "{n},{r},{t},{e}")?;
            }
        }
        for (i, &t) in times.iter().enumerate() {
            let values: Vec<f64> = runs.iter().map(|(e, _)| e[i]).collect();
            let s = Summary::of(&values);
            // E|mean of 2l+1 independent sites - mean| for the local law
            let floor = reference[i]
                .values()
                .iter()
                .map(|&u| family.site_law(u.clamp(0.0, f64::MAX)).map(|q| (2.0 / PI * q.variance() / (2 * l + 1) as f64).sqrt()))
                .sum::<std::result::Result<f64, _>>()?
                / n as f64;
            writeln!(summary_csv, "{n},{t},{},{},{},{},{floor}", s.mean, s.se, s.lo, s.hi)?;
            if i + 1 == times.len() {
                finals.push((n, s, floor));
            }
        }
        let last = reference.last().expect("at least one time");
        let mut mean_field = vec![0.0; n];
        for (_, occ) in &runs {
            for (m, &k) in mean_field.iter_mut().zip(occ) {
                *m += k as f64 / runs.len() as f64;
            }
        }
        let mean_field = DensityField::new(torus, mean_field).block_average(l);
        for x in 0..n {
            let pos = x as f64 / n as f64;
            writeln!(profiles_csv, "initial,{n},{pos},{}", u0[x])?;
            writeln!(profiles_csv, "reference,{n},{pos},{}", last[x])?;
            writeln!(profiles_csv, "empirical_mean,{n},{pos},{}", mean_field[x])?;
        }
    }
    for w in [&mut l1_csv, &mut summary_csv, &mut profiles_csv, &mut diag_csv] {
        w.flush()?;
    }

    let mut report = Report::new(&cfg.experiment);
    let describe = |(n, s, _): &(usize, Summary, f64)| format!("N={n}: {:.4} [{:.4}, {:.4}]", s.mean, s.lo, s.hi);
    let table = finals.iter().map(describe).collect::<Vec<_>>().join("; ");
    let (first, last) = (finals.first().expect("scales"), finals.last().expect("scales"));
    report.check(
        "l1_below_threshold",
        last.1.mean < threshold,
        format!("mean L1 {:.4} at N={} vs {threshold}", last.1.mean, last.0),
    );
    report.check(
        "l1_decreasing",
        finals.windows(2).all(|w| w[1].1.mean < w[0].1.mean),
        table,
    );
    report.check(
        "ci_separated",
        finals.len() > 1 && last.1.mean < first.1.mean && !last.1.overlaps(&first.1),
        format!("N={} vs N={}", first.0, last.0),
    );
    for (n, s, floor) in &finals {
        report.note(format!(
            "N={n}: mean L1 {:.4}, sampling floor of a local-equilibrium field {floor:.4}",
            s.mean
        ));
    }
    Ok(report)
}

pub(crate) fn martingale(run: &Run) -> Result<Report> {
    let cfg = run.cfg;
    let model = run.model()?;
    let family = family(&model);
    let mode = cfg.params.mode.unwrap_or(1) as f64;
    let horizon = cfg.horizon();
    let mut csv = run.out.create("martingale.csv")?;
    writeln!(csv, "N,replica,M,QV")?;
    let mut report = Report::new(&cfg.experiment);
    let mut qv_means = Vec::new();
    for &n in &cfg.scales {
        let kernel = run.kernel(n)?;
        let torus = kernel.torus();
        let theta = kernel.theta(n as f64);
        let g = DensityField::from_fn(torus, |c| (2.0 * PI * mode * c[0] as f64 / n as f64).sin());
        let u0 = cfg.profile().discretize(torus, n as f64);
        let samples = run.replicas(cfg.replicas, |r| {
            let mut rng = run.rng(&format!("martingale/init/{n}"), r);
            let occ = family.sample_product(&u0, &mut rng)?;
            let mut sys = ParticleSystem::with_rng(
                kernel.clone(),
                model.clone(),
                occ,
                theta,
                n as f64,
                run.rng(&format!("martingale/dyn/{n}"), r),
            )?;
            if let Some(b) = cfg.params.max_events {
                sys.set_event_budget(b);
            }
            Ok(martingale_probe(&mut sys, &g, &[horizon])?[0])
        })?;
        for (r, s) in samples.iter().enumerate() {
            writeln!(csv, "{n},{r},{},{}", s.martingale, s.quadratic_variation)?;
        }
        let m = Summary::of(&samples.iter().map(|s| s.martingale).collect::<Vec<_>>());
        let qv = Summary::of(&samples.iter().map(|s| s.quadratic_variation).collect::<Vec<_>>());
        let m2 = Summary::of(&samples.iter().map(|s| s.martingale.powi(2)).collect::<Vec<_>>());
        report.check(
            &format!("centered_N{n}"),
            m.mean.abs() <= 3.0 * m.se,
            format!("mean M {:.3e} with SE {:.3e}", m.mean, m.se),
        );
        report.note(format!(
            "N={n}: E M^2 = {:.4e} +- {:.1e}, E <M> = {:.4e} +- {:.1e}",
            m2.mean, m2.se, qv.mean, qv.se
        ));
        qv_means.push((n, qv.mean));
    }
    csv.flush()?;
    if let [(n0, a), (n1, b), ..] = qv_means[..] {
        let ratio = b / a;
        report.check(
            "quadratic_variation_halves",
            (0.4..=0.6).contains(&ratio),
            format!("E<M> ratio N={n1} / N={n0} = {ratio:.4}"),
        );
    } else {
        report.check("quadratic_variation_halves", false, "needs two scales");
    }
    Ok(report)
}
