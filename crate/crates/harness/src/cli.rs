//! The `longjump` command line.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::Parser;

use crate::config::{ExperimentConfig, EXPERIMENTS};
use crate::experiments::run_experiment;

pub const EXIT_PASS: u8 = 0;
pub const EXIT_FAIL: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "longjump", version, about = "Run a longjump experiment from a TOML config")]
pub struct Cli {
    /// One of the shipped experiment names; must match the config.
    #[arg(value_parser = clap::builder::PossibleValuesParser::new(EXPERIMENTS))]
    pub experiment: String,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory. Falls back to $LONGJUMP_OUT, the config, then out/<experiment>.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub replicas: Option<usize>,
}

/// `--out`, then the environment, then the config, then `out/<experiment>`.
pub fn output_dir(flag: Option<PathBuf>, env: Option<OsString>, cfg: &ExperimentConfig) -> PathBuf {
    flag.or_else(|| env.map(PathBuf::from))
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&cfg.experiment))
}

/// Runs the command line `args` (program name first) and returns the exit
/// code. `env_out` is the value of the output-directory variable.
pub fn run<I, T>(args: I, env_out: Option<OsString>) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
        }
    };
    let mut cfg = match ExperimentConfig::load(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    if cfg.experiment != cli.experiment {
        eprintln!(
            "error: {} configures `{}`, not `{}`",
            cli.config.display(),
            cfg.experiment,
            cli.experiment
        );
        return EXIT_USAGE;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(r) = cli.replicas {
        cfg.replicas = r;
    }
    if let Err(e) = cfg.validate() {
        eprintln!("error: {e}");
        return EXIT_USAGE;
    }
    let dir = output_dir(cli.out, env_out, &cfg);
    match run_experiment(&cfg, &dir) {
        Ok(report) => {
            println!("{report}");
            println!("output: {}", dir.display());
            if report.passed() {
                EXIT_PASS
            } else {
                EXIT_FAIL
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAIL
        }
    }
}

#[cfg(test)]
mod tests {
    use std::fs;
    use std::path::Path;

    use tempfile::tempdir;

    use super::*;

    const THERMO: &str = "experiment = \"thermo\"\nseed = 3\n";

    fn write(dir: &Path, name: &str, text: &str) -> String {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p.to_str().unwrap().to_string()
    }

    fn code(args: &[&str]) -> u8 {
        run(std::iter::once("longjump").chain(args.iter().copied()), None)
    }

    #[test]
    fn passing_run_exits_zero_and_writes_output() {
        let dir = tempdir().unwrap();
        let cfg = write(dir.path(), "t.toml", THERMO);
        let out = dir.path().join("here");
        assert_eq!(code(&["thermo", "--config", &cfg, "--out", out.to_str().unwrap()]), EXIT_PASS);
        assert!(out.join("checks.csv").exists());
        assert!(out.join("config.toml").exists());
    }

    #[test]
    fn output_precedence() {
        let dir = tempdir().unwrap();
        let mut cfg = ExperimentConfig::parse(THERMO).unwrap();
        assert_eq!(output_dir(None, None, &cfg), Path::new("out/thermo"));
        cfg.output = Some("from_config".into());
        assert_eq!(output_dir(None, None, &cfg), Path::new("from_config"));
        assert_eq!(output_dir(None, Some("from_env".into()), &cfg), Path::new("from_env"));
        assert_eq!(
            output_dir(Some("from_flag".into()), Some("from_env".into()), &cfg),
            Path::new("from_flag")
        );

        let path = write(dir.path(), "t.toml", THERMO);
        let env = dir.path().join("env");
        assert_eq!(run(["longjump", "thermo", "--config", &path], Some(env.clone().into())), EXIT_PASS);
        assert!(env.join("closed_forms.csv").exists());
    }

    #[test]
    fn failed_predicate_exits_one() {
        let dir = tempdir().unwrap();
        let text = r#"
experiment = "hydro-exclusion"
seed = 1
replicas = 2
scales = [16, 32]
horizon = 0.01
blocks = 4

[kernel]
alpha = 1.5

[model]
kind = "exclusion"

[profile]
kind = "constant"
value = 0.5

[params]
l1_threshold = 0.0
"#;
        let cfg = write(dir.path(), "h.toml", text);
        let out = dir.path().join("o");
        assert_eq!(code(&["hydro-exclusion", "--config", &cfg, "--out", out.to_str().unwrap()]), EXIT_FAIL);
    }

    #[test]
    fn usage_and_config_errors_exit_two() {
        let dir = tempdir().unwrap();
        let good = write(dir.path(), "t.toml", THERMO);
        let missing = dir.path().join("missing.toml");
        let bad = write(dir.path(), "bad.toml", "experiment = \"thermo\"\nseed = 3\nsede = 4\n");
        assert_eq!(code(&["no-such-experiment", "--config", &good]), EXIT_USAGE);
        assert_eq!(code(&["thermo"]), EXIT_USAGE);
        assert_eq!(code(&["thermo", "--config", missing.to_str().unwrap()]), EXIT_USAGE);
        assert_eq!(code(&["alpha2", "--config", &good]), EXIT_USAGE);
        assert_eq!(code(&["thermo", "--config", &bad]), EXIT_USAGE);
        assert_eq!(code(&["thermo", "--config", &good, "--seed", "minus one"]), EXIT_USAGE);
    }

    #[test]
    fn overrides_are_validated_and_applied() {
        let dir = tempdir().unwrap();
        let text = r#"
experiment = "exp-martingale"
seed = 1
replicas = 4
scales = [16]
horizon = 0.01

[kernel]
alpha = 1.5

[model]
kind = "zero_range"
rate = { kind = "linear" }
"#;
        let cfg = write(dir.path(), "e.toml", text);
        assert_eq!(code(&["exp-martingale", "--config", &cfg, "--replicas", "0"]), EXIT_USAGE);

        let thermo = write(dir.path(), "t.toml", THERMO);
        let out = dir.path().join("o");
        assert_eq!(
            code(&["thermo", "--config", &thermo, "--seed", "99", "--out", out.to_str().unwrap()]),
            EXIT_PASS
        );
        let text = fs::read_to_string(out.join("checks.csv")).unwrap();
        assert!(text.contains("# seed = 99"));
    }
}
