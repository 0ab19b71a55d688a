//! Replica summaries and pass/fail records.

use std::fmt;
use std::io::{self, Write};

use statrs::distribution::{ContinuousCDF, StudentsT};

/// Mean with standard error and a two-sided Student-t interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Summary {
    /// 95% interval; a single value gets zero spread.
    pub fn of(values: &[f64]) -> Summary {
        Self::with_level(values, 0.95)
    }

    pub fn with_level(values: &[f64], level: f64) -> Summary {
        let count = values.len();
        assert!(count > 0, "empty sample");
        let mean = values.iter().sum::<f64>() / count as f64;
        if count == 1 {
            return Summary {
                count,
                mean,
                sd: 0.0,
                se: 0.0,
                lo: mean,
                hi: mean,
            };
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
        let sd = var.sqrt();
        let se = sd / (count as f64).sqrt();
        let t = StudentsT::new(0.0, 1.0, (count - 1) as f64)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.5 + level / 2.0);
        Summary {
            count,
            mean,
            sd,
            se,
            lo: mean - t * se,
            hi: mean + t * se,
        }
    }

    pub fn overlaps(&self, other: &Summary) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }
}

/// One gating check of an experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub experiment: String,
    pub checks: Vec<Check>,
    /// Reported quantities that do not gate the outcome.
    pub notes: Vec<String>,
}

impl Report {
    pub fn new(experiment: &str) -> Self {
        Report {
            experiment: experiment.to_string(),
            ..Report::default()
        }
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "check,passed,detail")?;
        for c in &self.checks {
            writeln!(w, "{},{},\"{}\"", c.name, c.passed, c.detail.replace('"', "'"))?;
        }
        for n in &self.notes {
            writeln!(w, "note,,\"{}\"", n.replace('"', "'"))?;
        }
        Ok(())
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        for n in &self.notes {
            writeln!(f, "note {n}")?;
        }
        write!(f, "{} {}", self.experiment, if self.passed() { "passed" } else { "failed" })
    }
}
