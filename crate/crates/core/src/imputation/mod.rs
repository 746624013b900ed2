//! Missing-value treatments.
//!
//! Every imputer is a pure function of `(table, target, options)` and
//! returns an [`ImputationResult`]: the completed table, a [`DonorLedger`]
//! per treated column and a per-cell provenance log. Present input cells are
//! never modified.

mod basic;
mod em;
mod hot_deck;
mod knn;
mod ledger;
mod pmm;
mod regression;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tabular::{ColumnKind, Table, TableError, Value};

pub use basic::{impute_mean, impute_mode};
pub use em::{em_gaussian, em_impute, GaussianParams, DEFAULT_EM_MAX_ITER, DEFAULT_EM_TOL};
pub use hot_deck::{impute_cold_deck, impute_hot_deck_random};
pub use knn::{impute_classification, impute_knn};
pub use ledger::{aggregate_donor_weighted, DonorLedger, DonorShare, FRACTION_TOLERANCE};
pub use pmm::impute_pmm;
pub use regression::{fit_ols, impute_regression, RegressionModel, RIDGE_JITTER};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImputeError {
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("column {column:?} has no observed donor values")]
    NoDonor { column: String },
    #[error("donor pool for {column:?} too small: need {needed}, have {available}")]
    PoolTooSmall {
        column: String,
        needed: usize,
        available: usize,
    },
    #[error("insufficient data: need {needed} complete rows, found {found}")]
    InsufficientData { needed: usize, found: usize },
    #[error("least-squares system is singular")]
    SingularFit,
    #[error("column {column:?}: rows {rows:?} cannot be imputed")]
    UnimputableRows { column: String, rows: Vec<usize> },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("recipient {recipient}: donor fractions sum to {sum}, expected 1")]
    LedgerInvariant { recipient: usize, sum: f64 },
    #[error("weighted aggregation is undefined for nominal column {column:?}")]
    NominalAggregation { column: String },
    #[error("donor row {donor} has no observed value")]
    MissingDonorValue { donor: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl ImputeError {
    /// True when the input data itself is at fault (unknown column, kind
    /// mismatch, malformed table) rather than the strategy.
    pub fn is_data_error(&self) -> bool {
        matches!(self, ImputeError::Table(_))
    }
}

pub(crate) fn expect_kind(table: &Table, column: &str, kind: ColumnKind) -> Result<(), ImputeError> {
    if table.column(column)?.kind() != kind {
        return Err(TableError::KindMismatch {
            column: column.to_string(),
            expected: kind,
        }
        .into());
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Mean,
    Mode,
    Regression,
    HotDeckRandom,
    ColdDeck,
    Knn,
    Pmm,
    ClassificationKnn,
    EmGaussian,
}

impl Strategy {
    pub const ALL: [Strategy; 9] = [
        Strategy::Mean,
        Strategy::Mode,
        Strategy::Regression,
        Strategy::HotDeckRandom,
        Strategy::ColdDeck,
        Strategy::Knn,
        Strategy::Pmm,
        Strategy::ClassificationKnn,
        Strategy::EmGaussian,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Strategy::Mean => "mean",
            Strategy::Mode => "mode",
            Strategy::Regression => "regression",
            Strategy::HotDeckRandom => "hot_deck_random",
            Strategy::ColdDeck => "cold_deck",
            Strategy::Knn => "knn",
            Strategy::Pmm => "pmm",
            Strategy::ClassificationKnn => "classification_knn",
            Strategy::EmGaussian => "em_gaussian",
        }
    }

    /// Column kinds the strategy can treat.
    pub fn supports(self, kind: ColumnKind) -> bool {
        use Strategy::*;
        match self {
            Mean | Regression | Pmm | EmGaussian => kind == ColumnKind::Numeric,
            Mode | ClassificationKnn => kind == ColumnKind::Nominal,
            HotDeckRandom | ColdDeck | Knn => true,
        }
    }

    pub fn needs_predictors(self) -> bool {
        matches!(
            self,
            Strategy::Regression | Strategy::Pmm | Strategy::Knn | Strategy::ClassificationKnn
        )
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Strategy::ALL
            .into_iter()
            .find(|m| m.tag() == norm)
            .ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    #[default]
    Euclidean,
    Manhattan,
}

impl FromStr for Distance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "euclidean" => Ok(Distance::Euclidean),
            "manhattan" => Ok(Distance::Manhattan),
            _ => Err(format!("unknown distance {s:?}")),
        }
    }
}

/// What to do with a recipient the primary method cannot serve.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// Substitute means (numeric) or modes (nominal) and flag the cell.
    #[default]
    MeanMode,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyConfig {
    pub method: Strategy,
    pub k: usize,
    pub distance: Distance,
    pub predictors: Vec<String>,
    pub donor_pool_min: usize,
    pub fallback: Fallback,
    pub seed: u64,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            method: Strategy::Mean,
            k: 5,
            distance: Distance::Euclidean,
            predictors: Vec::new(),
            donor_pool_min: 1,
            fallback: Fallback::MeanMode,
            seed: 0,
        }
    }
}

impl StrategyConfig {
    pub fn new(method: Strategy) -> Self {
        StrategyConfig {
            method,
            ..StrategyConfig::default()
        }
    }

    pub fn with_predictors<S: AsRef<str>>(mut self, predictors: &[S]) -> Self {
        self.predictors = predictors.iter().map(|p| p.as_ref().to_string()).collect();
        self
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ImputeError> {
        if self.k == 0 {
            return Err(ImputeError::InvalidConfig("k must be at least 1".into()));
        }
        if self.donor_pool_min == 0 {
            return Err(ImputeError::InvalidConfig("donor_pool_min must be at least 1".into()));
        }
        if self.method.needs_predictors() && self.predictors.is_empty() {
            return Err(ImputeError::InvalidConfig(format!(
                "{} needs at least one predictor",
                self.method
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DonorRef {
    pub row: usize,
    pub y: Value,
    pub w: f64,
}

/// Provenance of one filled cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputedValue {
    pub row: usize,
    pub column: String,
    pub value: Value,
    pub method: Strategy,
    pub donors: Vec<DonorRef>,
    /// Filled by mean/mode substitution because the primary method could not
    /// serve this row.
    #[serde(default)]
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationResult {
    pub table: Table,
    pub ledgers: Vec<DonorLedger>,
    pub log: Vec<ImputedValue>,
    pub strategy: StrategyConfig,
    pub rng_seed: u64,
}

/// The external JSON form of an [`ImputationResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub strategy: StrategyConfig,
    pub seed: u64,
    pub cells: Vec<ImputedValue>,
    pub ledger: BTreeMap<String, DonorLedger>,
}

impl ImputationResult {
    pub fn ledger(&self, column: &str) -> Option<&DonorLedger> {
        self.ledgers.iter().find(|l| l.target_column == column)
    }

    /// Cells sorted by (column position, row) so documents diff cleanly.
    pub fn to_document(&self) -> ResultDocument {
        let position: BTreeMap<&str, usize> =
            self.table.column_names().enumerate().map(|(i, n)| (n, i)).collect();
        let mut cells = self.log.clone();
        cells.sort_by_key(|c| (position.get(c.column.as_str()).copied(), c.row));
        ResultDocument {
            strategy: self.strategy.clone(),
            seed: self.rng_seed,
            cells,
            ledger: self
                .ledgers
                .iter()
                .map(|l| (l.target_column.clone(), l.clone()))
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("result serializes")
    }
}

/// Accumulates filled cells for one target column.
pub(crate) struct ResultBuilder {
    table: Table,
    col: usize,
    column: String,
    method: Strategy,
    ledger: DonorLedger,
    log: Vec<ImputedValue>,
}

impl ResultBuilder {
    pub(crate) fn new(table: &Table, target: &str, method: Strategy) -> Result<Self, ImputeError> {
        Ok(ResultBuilder {
            col: table.column_index(target)?,
            table: table.clone(),
            column: target.to_string(),
            method,
            ledger: DonorLedger::new(target),
            log: Vec::new(),
        })
    }

    pub(crate) fn external(mut self) -> Self {
        self.ledger.external = true;
        self
    }

    /// Fills `row` with a value that has no donors.
    pub(crate) fn fill(&mut self, row: usize, value: Value, fallback: bool) {
        debug_assert!(self.table.columns()[self.col].is_missing(row));
        self.table.column_mut(self.col).set(row, value.clone());
        self.log.push(ImputedValue {
            row,
            column: self.column.clone(),
            value,
            method: self.method,
            donors: Vec::new(),
            fallback,
        });
    }

    /// Fills `row` from donors `(row, observed value, fraction)`, recording
    /// each in the ledger with `d_ij += 1`.
    pub(crate) fn fill_from_donors(&mut self, row: usize, value: Value, donors: Vec<DonorRef>) {
        for d in &donors {
            self.ledger.record(d.row, row, d.w);
        }
        self.table.column_mut(self.col).set(row, value.clone());
        self.log.push(ImputedValue {
            row,
            column: self.column.clone(),
            value,
            method: self.method,
            donors,
            fallback: false,
        });
    }

    pub(crate) fn ledger(&self) -> &DonorLedger {
        &self.ledger
    }

    pub(crate) fn finish(self, strategy: StrategyConfig) -> ImputationResult {
        ImputationResult {
            table: self.table,
            rng_seed: strategy.seed,
            strategy,
            ledgers: vec![self.ledger],
            log: self.log,
        }
    }
}

/// Predictors used when none are configured: the other numeric columns for
/// the regression family, every other column for the kNN family, none for
/// the rest.
pub fn default_predictors(table: &Table, target: &str, method: Strategy) -> Vec<String> {
    let others = table.columns().iter().filter(|c| c.name != target);
    match method {
        Strategy::Regression | Strategy::Pmm | Strategy::EmGaussian => others
            .filter(|c| c.kind() == ColumnKind::Numeric)
            .map(|c| c.name.clone())
            .collect(),
        Strategy::Knn | Strategy::ClassificationKnn => others.map(|c| c.name.clone()).collect(),
        _ => Vec::new(),
    }
}

/// Runs the configured strategy on one target column.
///
/// `reference` is the external source for [`Strategy::ColdDeck`] and is
/// ignored otherwise. [`Strategy::EmGaussian`] fits on the target plus its
/// predictors (all other numeric columns when none are given) but only
/// fills the target.
pub fn impute(
    table: &Table,
    target: &str,
    config: &StrategyConfig,
    reference: Option<&Table>,
) -> Result<ImputationResult, ImputeError> {
    config.validate()?;
    let column = table.column(target)?;
    if !config.method.supports(column.kind()) {
        let expected = match column.kind() {
            ColumnKind::Numeric => ColumnKind::Nominal,
            ColumnKind::Nominal => ColumnKind::Numeric,
        };
        return Err(TableError::KindMismatch {
            column: target.to_string(),
            expected,
        }
        .into());
    }
    let available = table.n_rows() - column.n_missing();
    let donor_based = !matches!(config.method, Strategy::ColdDeck | Strategy::EmGaussian);
    if donor_based && column.n_missing() > 0 && available < config.donor_pool_min {
        if available == 0 {
            return Err(ImputeError::NoDonor {
                column: target.to_string(),
            });
        }
        return Err(ImputeError::PoolTooSmall {
            column: target.to_string(),
            needed: config.donor_pool_min,
            available,
        });
    }

    let preds = &config.predictors;
    let mut result = match config.method {
        Strategy::Mean => impute_mean(table, target)?,
        Strategy::Mode => impute_mode(table, target)?,
        Strategy::Regression => impute_regression(table, target, preds, config.fallback)?,
        Strategy::HotDeckRandom => impute_hot_deck_random(table, target, config.seed)?,
        Strategy::ColdDeck => {
            let reference = reference.ok_or_else(|| ImputeError::NoDonor {
                column: target.to_string(),
            })?;
            impute_cold_deck(table, target, reference, config.seed)?
        }
        Strategy::Knn => {
            impute_knn(table, target, preds, config.k, config.distance, config.fallback)?
        }
        Strategy::Pmm => impute_pmm(table, target, preds, config.fallback)?,
        Strategy::ClassificationKnn => {
            impute_classification(table, target, preds, config.k, config.distance, config.fallback)?
        }
        Strategy::EmGaussian => em::impute_target(table, target, preds)?,
    };
    result.strategy = config.clone();
    result.rng_seed = config.seed;
    Ok(result)
}
