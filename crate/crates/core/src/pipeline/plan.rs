use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amputation::Mechanism;
use crate::imputation::{Distance, Fallback, Strategy};
use crate::tabular::ColumnKind;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("cannot read plan {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed plan: {0}")]
    Parse(String),
    #[error("invalid plan: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Candidates {
    #[serde(default = "default_numeric")]
    pub numeric: Vec<Strategy>,
    #[serde(default = "default_nominal")]
    pub nominal: Vec<Strategy>,
}

fn default_numeric() -> Vec<Strategy> {
    vec![
        Strategy::Pmm,
        Strategy::Regression,
        Strategy::Knn,
        Strategy::EmGaussian,
        Strategy::HotDeckRandom,
        Strategy::Mean,
    ]
}

fn default_nominal() -> Vec<Strategy> {
    vec![Strategy::ClassificationKnn, Strategy::HotDeckRandom, Strategy::Mode]
}

impl Default for Candidates {
    fn default() -> Self {
        Candidates {
            numeric: default_numeric(),
            nominal: default_nominal(),
        }
    }
}

impl Candidates {
    pub fn for_kind(&self, kind: ColumnKind) -> &[Strategy] {
        match kind {
            ColumnKind::Numeric => &self.numeric,
            ColumnKind::Nominal => &self.nominal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tournament {
    #[serde(default = "default_mechanism")]
    pub mechanism: Mechanism,
    /// Masking rate. When absent, the column's own missing rate clamped to
    /// [0.05, 0.5].
    #[serde(default)]
    pub rate: Option<f64>,
    /// Driver column for MAR masking.
    #[serde(default)]
    pub driver: Option<String>,
    #[serde(default = "default_trials")]
    pub n_trials: usize,
    #[serde(default)]
    pub base_seed: u64,
}

fn default_mechanism() -> Mechanism {
    Mechanism::Mcar
}

fn default_trials() -> usize {
    10
}

impl Default for Tournament {
    fn default() -> Self {
        Tournament {
            mechanism: default_mechanism(),
            rate: None,
            driver: None,
            n_trials: default_trials(),
            base_seed: 0,
        }
    }
}

/// Settings shared by every candidate strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Knobs {
    pub k: usize,
    pub distance: Distance,
    pub fallback: Fallback,
    pub donor_pool_min: usize,
    /// Seed for the final imputation of the real column.
    pub seed: u64,
}

impl Default for Knobs {
    fn default() -> Self {
        Knobs {
            k: 5,
            distance: Distance::Euclidean,
            fallback: Fallback::MeanMode,
            donor_pool_min: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default)]
    pub table: Option<PathBuf>,
    #[serde(default)]
    pub report: Option<PathBuf>,
    #[serde(default)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Executor {
    #[default]
    RoundRobin,
    Random {
        seed: u64,
    },
    Threaded {
        workers: usize,
    },
}

/// A pipeline run description, read from JSON or TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelinePlan {
    pub input: PathBuf,
    /// Columns to treat. When absent, every column with a missing cell.
    #[serde(default)]
    pub targets: Option<Vec<String>>,
    #[serde(default = "default_tokens")]
    pub missing_tokens: Vec<String>,
    #[serde(default)]
    pub candidates: Candidates,
    /// Tie-break order for equal scores. Strategies not listed rank after
    /// the listed ones, in candidate order.
    #[serde(default)]
    pub priority: Vec<Strategy>,
    #[serde(default)]
    pub tournament: Tournament,
    #[serde(default)]
    pub strategy: Knobs,
    #[serde(default)]
    pub executor: Executor,
    #[serde(default)]
    pub output: Outputs,
}

fn default_tokens() -> Vec<String> {
    vec![String::new(), "NA".into(), "?".into()]
}

impl PipelinePlan {
    pub fn new(input: impl Into<PathBuf>) -> Self {
        PipelinePlan {
            input: input.into(),
            targets: None,
            missing_tokens: default_tokens(),
            candidates: Candidates::default(),
            priority: Vec::new(),
            tournament: Tournament::default(),
            strategy: Knobs::default(),
            executor: Executor::default(),
            output: Outputs::default(),
        }
    }

    /// Parses a plan. TOML is tried when the text does not start with `{`.
    pub fn parse(text: &str) -> Result<Self, PlanError> {
        let plan: PipelinePlan = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| PlanError::Parse(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| PlanError::Parse(e.to_string()))?
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Reads a plan file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, PlanError> {
        let text = std::fs::read_to_string(path).map_err(|source| PlanError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut plan = Self::parse(&text)?;
        if let Some(base) = path.parent() {
            plan.resolve_paths(base);
        }
        Ok(plan)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.input);
        for p in [&mut self.output.table, &mut self.output.report, &mut self.output.trace]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        let invalid = |m: String| Err(PlanError::Invalid(m));
        for kind in [ColumnKind::Numeric, ColumnKind::Nominal] {
            let list = self.candidates.for_kind(kind);
            if list.is_empty() {
                return invalid(format!("candidates.{kind} is empty"));
            }
            if let Some(s) = list.iter().find(|s| !s.supports(kind)) {
                return invalid(format!("{s} cannot treat {kind} columns"));
            }
        }
        if let Some(rate) = self.tournament.rate {
            if !(rate > 0.0 && rate < 1.0) {
                return invalid(format!("tournament.rate {rate} is outside (0, 1)"));
            }
        }
        if self.tournament.n_trials == 0 {
            return invalid("tournament.n_trials must be at least 1".into());
        }
        if self.tournament.mechanism == Mechanism::Mar && self.tournament.driver.is_none() {
            return invalid("MAR tournaments need tournament.driver".into());
        }
        if self.strategy.k == 0 || self.strategy.donor_pool_min == 0 {
            return invalid("strategy.k and strategy.donor_pool_min must be at least 1".into());
        }
        if let Executor::Threaded { workers: 0 } = self.executor {
            return invalid("executor.workers must be at least 1".into());
        }
        Ok(())
    }

    /// Position of `s` in the tie-break order.
    pub fn priority_rank(&self, s: Strategy) -> usize {
        if let Some(i) = self.priority.iter().position(|&p| p == s) {
            return i;
        }
        let mut order = self.candidates.numeric.iter().chain(&self.candidates.nominal);
        self.priority.len() + order.position(|&p| p == s).unwrap_or(Strategy::ALL.len() * 2)
    }
}
