//! The shipped experiments. Each one reads a validated config, writes CSV
//! files into its output directory and returns a [`Report`] whose checks
//! decide the exit status.

mod coupling;
mod exact;
mod hydro;
mod numerics;
mod tagged;

use std::path::Path;
use std::sync::Arc;

use longjump::{LatticeKernel, Model, RateFunction, SiteFamily, Thermo};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::output::{map_replicas, replica_rng, Output, ReplicaOrder};
use crate::stats::Report;
use crate::{HarnessError, Result};

/// Everything an experiment body needs.
pub(crate) struct Run<'a> {
    pub cfg: &'a ExperimentConfig,
    pub out: Output,
    pub order: ReplicaOrder,
}

impl Run<'_> {
    pub fn kernel(&self, n: usize) -> Result<Arc<LatticeKernel>> {
        let k = self.cfg.kernel();
        Ok(Arc::new(LatticeKernel::build(k.spec(), n, k.fold_cutoff)?))
    }

    pub fn model(&self) -> Result<Model> {
        Ok(self.cfg.model().build()?)
    }

    /// The zero-range rate, or an error naming the experiment.
    pub fn rate(&self) -> Result<RateFunction> {
        match self.model()? {
            Model::ZeroRange(g) => Ok(g),
            Model::Exclusion => Err(self.unsupported("a zero-range model")),
        }
    }

    pub fn unsupported(&self, what: &str) -> HarnessError {
        HarnessError::Unsupported {
            experiment: self.cfg.experiment.clone(),
            what: what.to_string(),
        }
    }

    pub fn rng(&self, label: &str, index: usize) -> ChaCha8Rng {
        replica_rng(self.cfg.seed, label, index as u64)
    }

    /// Seed for a simulator that owns its generator.
    pub fn sim_seed(&self, label: &str, index: usize) -> u64 {
        self.rng(label, index).random()
    }

    pub fn replicas<T>(&self, count: usize, f: impl FnMut(usize) -> Result<T>) -> Result<Vec<T>> {
        map_replicas(count, self.order, f)
    }
}

pub(crate) fn family(model: &Model) -> SiteFamily {
    match model {
        Model::Exclusion => SiteFamily::Bernoulli,
        Model::ZeroRange(g) => SiteFamily::ZeroRange(Thermo::new(g.clone())),
    }
}

/// Validates `cfg`, runs it and writes `checks.csv` next to the data.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path) -> Result<Report> {
    run_experiment_with(cfg, dir, ReplicaOrder::Forward)
}

/// As [`run_experiment`], visiting replicas in the given order. Results do
/// not depend on it.
pub fn run_experiment_with(cfg: &ExperimentConfig, dir: &Path, order: ReplicaOrder) -> Result<Report> {
    cfg.validate()?;
    let run = Run {
        cfg,
        out: Output::new(dir, cfg)?,
        order,
    };
    let report = match cfg.experiment.as_str() {
        "hydro-exclusion" | "hydro-zr-linear" | "hydro-zr-bounded" => hydro::hydro(&run)?,
        "stationarity-exact" => exact::stationarity(&run)?,
        "entropy-decay" => exact::entropy_decay(&run)?,
        "thermo" => exact::thermo(&run)?,
        "martingale" => hydro::martingale(&run)?,
        "coupling-order" => coupling::coupling_order(&run)?,
        "four-color" => coupling::four_color(&run)?,
        "tagged-cf" => tagged::tagged_cf(&run)?,
        "exp-martingale" => tagged::exp_martingale(&run)?,
        "alpha2" => numerics::alpha2(&run)?,
        "fisher-variational" => numerics::fisher(&run)?,
        "pde-properties" => numerics::pde_properties(&run)?,
        other => unreachable!("validated experiment name {other}"),
    };
    let mut w = run.out.create("checks.csv")?;
    report.write_csv(&mut w)?;
    std::io::Write::flush(&mut w)?;
    Ok(report)
}
