//! Experiment configuration files.
//!
//! A config is TOML: top-level keys, then `[kernel]`, `[model]`,
//! `[model.rate]`, `[profile]` and `[params]` tables. Unknown keys are
//! errors, and so are parameters the chosen experiment does not read.

use std::fmt;
use std::path::{Path, PathBuf};

use longjump::kernel::DEFAULT_FOLD_CUTOFF;
use longjump::{KernelSpec, Model, Profile, RateFunction, TimeScale};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Experiment names accepted on the command line.
pub const EXPERIMENTS: &[&str] = &[
    "hydro-exclusion",
    "hydro-zr-linear",
    "hydro-zr-bounded",
    "stationarity-exact",
    "entropy-decay",
    "martingale",
    "coupling-order",
    "four-color",
    "tagged-cf",
    "exp-martingale",
    "alpha2",
    "fisher-variational",
    "thermo",
    "pde-properties",
];

/// 1-based position in the config text.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Location {
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}", self.line, self.column)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", location.map_or("config".to_string(), |l| l.to_string()))]
    Syntax { location: Option<Location>, message: String },
    #[error("{}: {message}", location.map_or("config".to_string(), |l| l.to_string()))]
    Invalid { location: Option<Location>, message: String },
    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),
}

impl ConfigError {
    pub fn location(&self) -> Option<Location> {
        match self {
            ConfigError::Syntax { location, .. } | ConfigError::Invalid { location, .. } => *location,
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub alpha: f64,
    #[serde(default = "unit")]
    pub c_scale: f64,
    #[serde(default = "power")]
    pub time_scale: TimeScale,
    /// Displacements up to this many periods are folded onto the torus.
    #[serde(default = "default_cutoff")]
    pub fold_cutoff: usize,
}

fn unit() -> f64 {
    1.0
}

fn power() -> TimeScale {
    TimeScale::Power
}

fn default_cutoff() -> usize {
    DEFAULT_FOLD_CUTOFF
}

impl KernelConfig {
    pub fn spec(&self) -> KernelSpec {
        KernelSpec::one_dim(self.alpha, self.c_scale)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RateConfig {
    /// `g(n) = n`.
    Linear,
    /// `g(n) = 1{n >= 1}`.
    Indicator,
    /// `g(n) = min(n, cap)`.
    Capped { cap: u32 },
    /// Explicit `g(0..)`, continued linearly with `tail_slope`.
    Table { values: Vec<f64>, tail_slope: f64 },
}

impl RateConfig {
    pub fn build(&self) -> Result<RateFunction, longjump::measures::MeasureError> {
        Ok(match self {
            RateConfig::Linear => RateFunction::linear(),
            RateConfig::Indicator => RateFunction::indicator(),
            RateConfig::Capped { cap } => RateFunction::capped(*cap),
            RateConfig::Table { values, tail_slope } => RateFunction::new(values.clone(), *tail_slope)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Exclusion,
    ZeroRange { rate: RateConfig },
}

impl ModelConfig {
    pub fn build(&self) -> Result<Model, longjump::measures::MeasureError> {
        Ok(match self {
            ModelConfig::Exclusion => Model::Exclusion,
            ModelConfig::ZeroRange { rate } => Model::ZeroRange(rate.build()?),
        })
    }

    pub fn rate(&self) -> Option<&RateConfig> {
        match self {
            ModelConfig::Exclusion => None,
            ModelConfig::ZeroRange { rate } => Some(rate),
        }
    }
}

/// Experiment-specific settings. Each experiment reads a subset; keys
/// outside that subset are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l1_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub densities: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub density: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exclusion_side: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zero_range_side: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cap: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub events: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cut: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thetas: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nonlinear_replicas: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_events: Option<u64>,
}

impl Params {
    fn present(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        macro_rules! check {
            ($($f:ident),*) => {
                $(if self.$f.is_some() { out.push(stringify!($f)); })*
            };
        }
        check!(
            l1_threshold, densities, density, exclusion_side, zero_range_side, cap, samples, perturbation, mode,
            events, window, lower, upper, cut, thetas, nonlinear_replicas, trials, epsilon, max_events
        );
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub seed: u64,
    #[serde(default = "one")]
    pub replicas: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scales: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    /// Empirical fields average over windows of radius `N / blocks`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blocks: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile: Option<Profile>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub params: Params,
}

fn one() -> usize {
    1
}

fn is_default(p: &Params) -> bool {
    *p == Params::default()
}

/// What an experiment needs from the config.
struct Needs {
    keys: &'static [&'static str],
    params: &'static [&'static str],
}

fn needs(experiment: &str) -> Option<Needs> {
    const HYDRO: Needs = Needs {
        keys: &["scales", "horizon", "blocks", "kernel", "model", "profile"],
        params: &["l1_threshold", "max_events"],
    };
    Some(match experiment {
        "hydro-exclusion" | "hydro-zr-linear" | "hydro-zr-bounded" => HYDRO,
        "stationarity-exact" => Needs {
            keys: &["kernel", "model"],
            params: &["densities", "exclusion_side", "zero_range_side", "cap"],
        },
        "entropy-decay" => Needs {
            keys: &["kernel", "model", "horizon"],
            params: &["zero_range_side", "cap", "density", "samples", "perturbation"],
        },
        "martingale" => Needs {
            keys: &["scales", "horizon", "kernel", "model", "profile"],
            params: &["mode", "max_events"],
        },
        "coupling-order" => Needs {
            keys: &["scales", "kernel", "model", "profile"],
            params: &["events", "window", "lower", "upper"],
        },
        "four-color" => Needs {
            keys: &["scales", "kernel", "model", "profile"],
            params: &["events", "cut"],
        },
        "tagged-cf" => Needs {
            keys: &["scales", "horizon", "kernel", "model"],
            params: &["density", "thetas", "nonlinear_replicas"],
        },
        "exp-martingale" => Needs {
            keys: &["scales", "horizon", "kernel", "model"],
            params: &["density", "thetas"],
        },
        "alpha2" => Needs {
            keys: &["scales", "horizon", "kernel", "profile"],
            params: &["mode"],
        },
        "fisher-variational" => Needs {
            keys: &["scales", "kernel"],
            params: &["trials", "epsilon"],
        },
        "thermo" => Needs { keys: &[], params: &[] },
        "pde-properties" => Needs {
            keys: &["scales", "horizon", "kernel", "model", "profile"],
            params: &[],
        },
        _ => return None,
    })
}

/// Line and column of byte `offset` in `text`.
pub fn locate(text: &str, offset: usize) -> Location {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |s| s.chars().count()) + 1;
    Location { line, column }
}

/// First line defining `key`, optionally inside table `[section]`.
fn find_key(text: &str, section: Option<&str>, key: &str) -> Option<Location> {
    let mut current: Option<String> = None;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim_start();
        if let Some(rest) = trimmed.strip_prefix('[') {
            current = rest.split(']').next().map(|s| s.trim().to_string());
        } else if current.as_deref() == section {
            if let Some(rest) = trimmed.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return Some(locate(text, offset + line.len() - trimmed.len()));
                }
            }
        }
        offset += line.len();
    }
    None
}

impl ExperimentConfig {
    /// Parses and validates config text.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax {
            location: e.span().map(|s| locate(text, s.start)),
            message: e.message().to_string(),
        })?;
        cfg.validate_in(Some(text))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization without the output
    /// directory, hex encoded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        Sha256::digest(c.to_toml().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.validate_in(None)
    }

    fn validate_in(&self, text: Option<&str>) -> Result<(), ConfigError> {
        let at = |section: Option<&str>, key: &str| text.and_then(|t| find_key(t, section, key));
        let invalid = |location, message: String| ConfigError::Invalid { location, message };
        let needs = needs(&self.experiment).ok_or_else(|| ConfigError::UnknownExperiment(self.experiment.clone()))?;
        for &key in needs.keys {
            let missing = match key {
                "scales" => self.scales.is_empty(),
                "horizon" => self.horizon.is_none(),
                "blocks" => self.blocks.is_none(),
                "kernel" => self.kernel.is_none(),
                "model" => self.model.is_none(),
                "profile" => self.profile.is_none(),
                _ => unreachable!(),
            };
            if missing {
                return Err(invalid(
                    None,
                    format!("missing required key `{key}` for experiment `{}`", self.experiment),
                ));
            }
        }
        for key in self.params.present() {
            if !needs.params.contains(&key) {
                return Err(invalid(
                    at(Some("params"), key),
                    format!("parameter `{key}` is not used by experiment `{}`", self.experiment),
                ));
            }
        }
        if self.replicas == 0 {
            return Err(invalid(at(None, "replicas"), "replicas must be at least 1".into()));
        }
        if self.scales.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid(at(None, "scales"), "scales must be strictly increasing".into()));
        }
        if let Some(&n) = self.scales.iter().find(|&&n| n < 4 || n % 2 == 1) {
            return Err(invalid(at(None, "scales"), format!("scale {n} is not an even number >= 4")));
        }
        if let Some(t) = self.horizon {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(invalid(at(None, "horizon"), format!("horizon must be finite and nonnegative, got {t}")));
            }
        }
        if let Some(b) = self.blocks {
            if let Some(&n) = self.scales.iter().find(|&&n| b == 0 || n % b != 0 || 2 * (n / b) >= n) {
                return Err(invalid(
                    at(None, "blocks"),
                    format!("blocks = {b} must divide every scale into windows narrower than the torus (N = {n})"),
                ));
            }
        }
        if let Some(k) = &self.kernel {
            if (k.alpha == 2.0) != (k.time_scale == TimeScale::LogCorrected) {
                return Err(invalid(
                    at(Some("kernel"), "time_scale").or(at(Some("kernel"), "alpha")),
                    format!(
                        "alpha = {} needs time_scale = \"{}\"",
                        k.alpha,
                        if k.alpha == 2.0 { "log_corrected" } else { "power" }
                    ),
                ));
            }
            k.spec()
                .validate()
                .map_err(|e| invalid(at(Some("kernel"), "alpha"), e.to_string()))?;
            if k.fold_cutoff == 0 {
                return Err(invalid(at(Some("kernel"), "fold_cutoff"), "fold_cutoff must be positive".into()));
            }
        }
        if let Some(m) = &self.model {
            m.build().map_err(|e| invalid(at(Some("model.rate"), "values"), e.to_string()))?;
        }
        if let Some(p) = &self.profile {
            p.validate().map_err(|e| invalid(at(Some("profile"), "kind"), e.to_string()))?;
        }
        Ok(())
    }

    /// Horizon, or 0 when the experiment has none.
    pub fn horizon(&self) -> f64 {
        self.horizon.unwrap_or(0.0)
    }

    pub fn kernel(&self) -> &KernelConfig {
        self.kernel.as_ref().expect("validated config has a kernel")
    }

    pub fn model(&self) -> &ModelConfig {
        self.model.as_ref().expect("validated config has a model")
    }

    pub fn profile(&self) -> &Profile {
        self.profile.as_ref().expect("validated config has a profile")
    }
}
