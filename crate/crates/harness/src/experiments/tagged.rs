//! Tagged-particle characteristic functions and the exponential martingale.

use std::io::Write;

use longjump::kernel::continuum_c;
use longjump::tagged::{empirical_cf, exp_martingale as exp_martingale_path, free_walk_cf, palm_environment, CfPoint};
use longjump::{Construction, RateFunction, TaggedSim, Thermo};
use rand::Rng;

use super::Run;
use crate::stats::{Report, Summary};
use crate::Result;

const DEFAULT_THETAS: [f64; 5] = [1.0, 2.0, 4.0, 6.0, 8.0];

/// Final `X_T` and winding flag of each replica.
fn positions(run: &Run, rate: &RateFunction, n: usize, replicas: usize, label: &str) -> Result<Vec<(i64, bool)>> {
    let cfg = run.cfg;
    let kernel = run.kernel(n)?;
    let thermo = Thermo::new(rate.clone());
    let rho = cfg.params.density.unwrap_or(1.0);
    let theta = kernel.theta(n as f64);
    run.replicas(replicas, |r| {
        let mut rng = run.rng(&format!("{label}/{n}"), r);
        let env = palm_environment(&thermo, rho, kernel.torus(), &mut rng)?;
        let mut sim = TaggedSim::new(kernel.clone(), rate.clone(), env, Construction::Joint, theta, n as f64, rng.random())?;
        sim.run_until(cfg.horizon());
        Ok((sim.x(), sim.wound()))
    })
}

pub(crate) fn tagged_cf(run: &Run) -> Result<Report> {
    let cfg = run.cfg;
    let rate = run.rate()?;
    if rate != RateFunction::linear() {
        return Err(run.unsupported("g(n) = n, where the tagged law is exact"));
    }
    let thetas = cfg.params.thetas.clone().unwrap_or_else(|| DEFAULT_THETAS.to_vec());
    let t = cfg.horizon();
    let k = cfg.kernel();
    let c = continuum_c(k.alpha, k.c_scale)?;
    let limit = |th: f64| (-c * t * th.abs().powf(k.alpha)).exp();
    let mut report = Report::new(&cfg.experiment);
    let mut cf_csv = run.out.create("cf.csv")?;
    writeln!(cf_csv, "N,theta,re,im,se_re,se_im,exact,limit")?;
    let mut pos_csv = run.out.create("positions.csv")?;
    writeln!(pos_csv, "N,replica,X,wound")?;
    let mut distances = Vec::new();
    for &n in &cfg.scales {
        let kernel = run.kernel(n)?;
        let xs = positions(run, &rate, n, cfg.replicas, "tagged")?;
        for (r, (x, w)) in xs.iter().enumerate() {
            writeln!(pos_csv, "{n},{r},{x},{}", *w as u8)?;
        }
        let samples: Vec<f64> = xs.iter().map(|&(x, _)| x as f64 / n as f64).collect();
        let cf = empirical_cf(&samples, &thetas)?;
        let mut worst = (0.0f64, 0.0);
        let (mut d_emp, mut d_exact) = (0.0f64, 0.0f64);
        for p in &cf {
            let exact = free_walk_cf(&kernel, p.theta, t, n as f64, kernel.theta(n as f64))?;
            let lim = limit(p.theta);
            writeln!(cf_csv, "{n},{},{},{},{},{},{exact},{lim}", p.theta, p.re, p.im, p.se_re, p.se_im)?;
            let z_re = (p.re - exact).abs() / p.se_re;
            let z_im = p.im.abs() / p.se_im;
            if z_re.max(z_im) > worst.0 {
                worst = (z_re.max(z_im), p.theta);
            }
            d_emp = d_emp.max((p.value() - lim).norm());
            d_exact = d_exact.max((exact - lim).abs());
        }
        report.check(
            &format!("matches_exact_N{n}"),
            worst.0 <= 3.0,
            format!("largest deviation {:.2} SE at theta = {}", worst.0, worst.1),
        );
        let wound = xs.iter().filter(|x| x.1).count() as f64 / xs.len() as f64;
        report.note(format!(
            "N={n}: {:.1}% of tags wound around the torus (X is unwrapped, so the law is unaffected)",
            100.0 * wound
        ));
        report.note(format!("N={n}: exact finite-n distance to the stable limit {d_exact:.4}"));
        distances.push((n, d_emp));
    }
    let (first, last) = (distances[0], *distances.last().expect("scales"));
    report.check(
        "approaches_stable_limit",
        distances.len() > 1 && last.1 < first.1,
        format!("max |cf - exp(-cT|theta|^alpha)|: {:.4} at N={} vs {:.4} at N={}", first.1, first.0, last.1, last.0),
    );

    if let Some(reps) = cfg.params.nonlinear_replicas.filter(|&r| r > 0) {
        let n = cfg.scales[0];
        let xs = positions(run, &RateFunction::indicator(), n, reps, "tagged-indicator")?;
        let samples: Vec<f64> = xs.iter().map(|&(x, _)| x as f64 / n as f64).collect();
        let cf: Vec<CfPoint> = empirical_cf(&samples, &thetas)?;
        let mut w = run.out.create("cf_indicator.csv")?;
        writeln!(w, "N,theta,re,im,se_re,se_im")?;
        for p in &cf {
            writeln!(w, "{n},{},{},{},{},{}", p.theta, p.re, p.im, p.se_re, p.se_im)?;
        }
        w.flush()?;
        let shown: Vec<String> = cf.iter().map(|p| format!("{}: {:.3}", p.theta, p.re)).collect();
        report.note(format!("g = 1{{n >= 1}}, N={n}: Re cf {}", shown.join(", ")));
    }
    cf_csv.flush()?;
    pos_csv.flush()?;
    Ok(report)
}

pub(crate) fn exp_martingale(run: &Run) -> Result<Report> {
    let cfg = run.cfg;
    let rate = run.rate()?;
    let thetas = cfg.params.thetas.clone().unwrap_or_else(|| vec![0.7, 3.0]);
    let rho = cfg.params.density.unwrap_or(1.0);
    let thermo = Thermo::new(rate.clone());
    let mut report = Report::new(&cfg.experiment);
    let mut csv = run.out.create("exp_martingale.csv")?;
    writeln!(csv, "N,replica,theta,re,im")?;
    for &n in &cfg.scales {
        let kernel = run.kernel(n)?;
        let scale = kernel.theta(n as f64);
        let values = run.replicas(cfg.replicas, |r| {
            let mut rng = run.rng(&format!("exp-martingale/{n}"), r);
            let env = palm_environment(&thermo, rho, kernel.torus(), &mut rng)?;
            let mut sim = TaggedSim::new(kernel.clone(), rate.clone(), env, Construction::Joint, scale, n as f64, rng.random())?;
            let traj = sim.run_recording(cfg.horizon());
            thetas
                .iter()
                .map(|&th| Ok(exp_martingale_path(&traj, th, &kernel, &rate, n as f64)?.last().expect("endpoint").1))
                .collect::<Result<Vec<_>>>()
        })?;
        for (r, v) in values.iter().enumerate() {
            for (th, m) in thetas.iter().zip(v) {
                writeln!(csv, "{n},{r},{th},{},{}", m.re, m.im)?;
            }
        }
        for (i, th) in thetas.iter().enumerate() {
            let re = Summary::of(&values.iter().map(|v| v[i].re).collect::<Vec<_>>());
            let im = Summary::of(&values.iter().map(|v| v[i].im).collect::<Vec<_>>());
            report.check(
                &format!("unit_mean_N{n}_theta{th}"),
                (re.mean - 1.0).abs() <= 3.0 * re.se && im.mean.abs() <= 3.0 * im.se,
                format!("Re {:.4} +- {:.4}, Im {:.4} +- {:.4}", re.mean, re.se, im.mean, im.se),
            );
        }
    }
    csv.flush()?;
    Ok(report)
}
