//! Controlled missingness on complete data, and scoring of imputers against
//! the hidden values.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imputation::{impute, ImputationResult, ImputeError, Strategy, StrategyConfig};
use crate::rng::{self, AMPUTATION_STREAM};
use crate::stats;
use crate::tabular::{Column, ColumnData, Table, TableError, Value};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Impute(#[from] ImputeError),
    #[error("invalid mask spec: {0}")]
    InvalidSpec(String),
    #[error("column {0:?} must be fully observed before amputation")]
    TargetNotComplete(String),
    #[error("amputation masked every cell of {0:?} twice in a row")]
    CompleteMasking(String),
    #[error("no cell was masked")]
    NothingMasked,
    #[error("row {row} of {column:?} was masked but not imputed")]
    IncompleteImputation { column: String, row: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    #[serde(alias = "MCAR")]
    Mcar,
    #[serde(alias = "MAR")]
    Mar,
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mechanism::Mcar => "mcar",
            Mechanism::Mar => "mar",
        })
    }
}

impl FromStr for Mechanism {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mcar" => Ok(Mechanism::Mcar),
            "mar" => Ok(Mechanism::Mar),
            _ => Err(format!("unknown mechanism {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub mechanism: Mechanism,
    /// Expected masked fraction, strictly inside (0, 1).
    pub rate: f64,
    pub target: String,
    /// Column whose rank drives the MAR masking probability.
    #[serde(default)]
    pub driver: Option<String>,
    #[serde(default)]
    pub seed: u64,
}

impl MaskSpec {
    pub fn mcar(target: impl Into<String>, rate: f64, seed: u64) -> Self {
        MaskSpec {
            mechanism: Mechanism::Mcar,
            rate,
            target: target.into(),
            driver: None,
            seed,
        }
    }

    pub fn mar(target: impl Into<String>, driver: impl Into<String>, rate: f64, seed: u64) -> Self {
        MaskSpec {
            mechanism: Mechanism::Mar,
            rate,
            target: target.into(),
            driver: Some(driver.into()),
            seed,
        }
    }

    pub fn validate(&self, table: &Table) -> Result<(), EvalError> {
        if !(self.rate > 0.0 && self.rate < 1.0) {
            return Err(EvalError::InvalidSpec(format!("rate {} is outside (0, 1)", self.rate)));
        }
        let target = table.column(&self.target)?;
        if target.n_missing() > 0 {
            return Err(EvalError::TargetNotComplete(self.target.clone()));
        }
        if self.mechanism == Mechanism::Mar {
            let driver = self
                .driver
                .as_deref()
                .ok_or_else(|| EvalError::InvalidSpec("MAR needs a driver column".into()))?;
            if driver == self.target {
                return Err(EvalError::InvalidSpec("MAR driver must differ from the target".into()));
            }
            if table.column(driver)?.n_missing() > 0 {
                return Err(EvalError::InvalidSpec(format!("driver {driver:?} must be fully observed")));
            }
        }
        Ok(())
    }
}

/// The values hidden by one amputation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub column: String,
    pub cells: BTreeMap<usize, Value>,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// 1-based ranks of the driver column, ties broken by row order.
fn ranks(driver: &Column) -> Vec<f64> {
    let n = driver.len();
    let mut order: Vec<usize> = (0..n).collect();
    match &driver.data {
        ColumnData::Numeric(v) => order.sort_by(|&a, &b| {
            v[a].unwrap().total_cmp(&v[b].unwrap()).then(a.cmp(&b))
        }),
        ColumnData::Nominal(v) => order.sort_by(|&a, &b| v[a].cmp(&v[b]).then(a.cmp(&b))),
    }
    let mut rank = vec![0.0; n];
    for (pos, &row) in order.iter().enumerate() {
        rank[row] = (pos + 1) as f64;
    }
    rank
}

/// Masking probabilities proportional to rank, summing to `rate * n`.
/// Probabilities that would exceed one are capped and the remainder is
/// spread over the other rows.
pub fn rank_probabilities(ranks: &[f64], rate: f64) -> Vec<f64> {
    let budget = rate * ranks.len() as f64;
    let mut order: Vec<usize> = (0..ranks.len()).collect();
    order.sort_by(|&a, &b| ranks[b].total_cmp(&ranks[a]));
    let mut capped = 0;
    let mut rest: f64 = ranks.iter().sum();
    let mut scale = budget / rest;
    while capped < order.len() && ranks[order[capped]] * scale > 1.0 {
        rest -= ranks[order[capped]];
        capped += 1;
        scale = if rest > 0.0 { (budget - capped as f64) / rest } else { 0.0 };
    }
    ranks.iter().map(|&r| (r * scale).min(1.0)).collect()
}

/// Hides cells of `spec.target`. Only the target column changes.
///
/// MCAR masks each cell independently with probability `rate`; MAR uses
/// [`rank_probabilities`] of the driver column. If every cell ends up
/// masked the draw is repeated once (continuing the same random stream)
/// before giving up.
pub fn ampute(table: &Table, spec: &MaskSpec) -> Result<(Table, GroundTruth), EvalError> {
    spec.validate(table)?;
    let n = table.n_rows();
    let probs = match spec.mechanism {
        Mechanism::Mcar => vec![spec.rate; n],
        Mechanism::Mar => {
            let driver = table.column(spec.driver.as_deref().expect("validated"))?;
            rank_probabilities(&ranks(driver), spec.rate)
        }
    };
    let mut rng = rng::seeded(spec.seed, AMPUTATION_STREAM);
    let mut draw = || -> Vec<usize> {
        probs
            .iter()
            .enumerate()
            .filter(|&(_, &p)| rng::uniform_f64(&mut rng) < p)
            .map(|(r, _)| r)
            .collect()
    };
    let mut masked = draw();
    if n > 0 && masked.len() == n {
        masked = draw();
        if masked.len() == n {
            return Err(EvalError::CompleteMasking(spec.target.clone()));
        }
    }

    let target = table.column(&spec.target)?;
    let cells: BTreeMap<usize, Value> = masked
        .iter()
        .map(|&r| (r, target.get(r).expect("target is complete")))
        .collect();
    let mut hidden = target.clone();
    match &mut hidden.data {
        ColumnData::Numeric(v) => masked.iter().for_each(|&r| v[r] = None),
        ColumnData::Nominal(v) => masked.iter().for_each(|&r| v[r] = None),
    }
    Ok((
        table.with_column(hidden)?,
        GroundTruth {
            column: spec.target.clone(),
            cells,
        },
    ))
}

/// Metrics of one ampute-impute-score cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialScore {
    pub trial: usize,
    pub seed: u64,
    pub n_masked: usize,
    pub rmse: Option<f64>,
    pub mae: Option<f64>,
    pub accuracy: Option<f64>,
    /// Set when the trial failed; metrics are then absent.
    pub error: Option<String>,
}

impl TrialScore {
    fn failed(trial: usize, seed: u64, error: impl ToString) -> Self {
        TrialScore {
            trial,
            seed,
            n_masked: 0,
            rmse: None,
            mae: None,
            accuracy: None,
            error: Some(error.to_string()),
        }
    }

    pub fn is_failure(&self) -> bool {
        self.error.is_some()
    }
}

/// Aggregated scores for one strategy. Numeric targets carry RMSE and MAE,
/// nominal targets carry accuracy; means and sample standard deviations are
/// over successful trials only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub strategy: Strategy,
    pub target: String,
    pub mechanism: Option<Mechanism>,
    pub rate: Option<f64>,
    pub trials: usize,
    pub n_failed: usize,
    /// Masked cells summed over successful trials.
    pub n_masked: usize,
    pub rmse_mean: Option<f64>,
    pub rmse_sd: Option<f64>,
    pub mae_mean: Option<f64>,
    pub mae_sd: Option<f64>,
    pub accuracy_mean: Option<f64>,
    pub accuracy_sd: Option<f64>,
    pub per_trial: Vec<TrialScore>,
}

impl ScoreReport {
    fn aggregate(
        strategy: Strategy,
        target: &str,
        mechanism: Option<Mechanism>,
        rate: Option<f64>,
        mut per_trial: Vec<TrialScore>,
    ) -> Self {
        per_trial.sort_by_key(|t| t.trial);
        let summary = |f: fn(&TrialScore) -> Option<f64>| {
            let xs: Vec<f64> = per_trial.iter().filter_map(f).collect();
            stats::mean_sd(&xs).unzip()
        };
        let (rmse_mean, rmse_sd) = summary(|t| t.rmse);
        let (mae_mean, mae_sd) = summary(|t| t.mae);
        let (accuracy_mean, accuracy_sd) = summary(|t| t.accuracy);
        ScoreReport {
            strategy,
            target: target.to_string(),
            mechanism,
            rate,
            trials: per_trial.len(),
            n_failed: per_trial.iter().filter(|t| t.is_failure()).count(),
            n_masked: per_trial.iter().map(|t| t.n_masked).sum(),
            rmse_mean,
            rmse_sd,
            mae_mean,
            mae_sd,
            accuracy_mean,
            accuracy_sd,
            per_trial,
        }
    }

    /// True when no trial succeeded.
    pub fn all_failed(&self) -> bool {
        self.n_failed == self.trials
    }
}

fn score_trial(
    result: &ImputationResult,
    truth: &GroundTruth,
    trial: usize,
    seed: u64,
) -> Result<TrialScore, EvalError> {
    if truth.is_empty() {
        return Err(EvalError::NothingMasked);
    }
    let column = result.table.column(&truth.column)?;
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut hits = 0usize;
    let mut numeric = false;
    for (&row, expected) in &truth.cells {
        let got = column.get(row).ok_or_else(|| EvalError::IncompleteImputation {
            column: truth.column.clone(),
            row,
        })?;
        match (expected, &got) {
            (Value::Num(e), Value::Num(g)) => {
                numeric = true;
                sq += (g - e) * (g - e);
                abs += (g - e).abs();
            }
            _ => hits += usize::from(*expected == got),
        }
    }
    let n = truth.len() as f64;
    Ok(TrialScore {
        trial,
        seed,
        n_masked: truth.len(),
        rmse: numeric.then(|| (sq / n).sqrt()),
        mae: numeric.then(|| abs / n),
        accuracy: (!numeric).then(|| hits as f64 / n),
        error: None,
    })
}

/// Scores one imputation against the values amputation hid.
pub fn score(result: &ImputationResult, truth: &GroundTruth) -> Result<ScoreReport, EvalError> {
    let trial = score_trial(result, truth, 0, result.rng_seed)?;
    Ok(ScoreReport::aggregate(
        result.strategy.method,
        &truth.column,
        None,
        None,
        vec![trial],
    ))
}

type Masked = Result<(Table, GroundTruth), EvalError>;

/// Runs `n_trials` ampute-impute-score cycles for every (spec, strategy)
/// pair. Trial `t` of a spec uses seed `spec.seed + t` for both the mask
/// and the strategy, so all strategies see identical masks. Strategy
/// failures are recorded per trial and never abort the run.
///
/// Reports are ordered by spec, then strategy.
pub fn run_trials(
    table: &Table,
    specs: &[MaskSpec],
    strategies: &[StrategyConfig],
    n_trials: usize,
) -> Result<Vec<ScoreReport>, EvalError> {
    for spec in specs {
        spec.validate(table)?;
    }
    let mut reports = Vec::with_capacity(specs.len() * strategies.len());
    for spec in specs {
        let masks: Vec<(u64, Masked)> = (0..n_trials)
            .into_par_iter()
            .map(|t| {
                let seed = spec.seed.wrapping_add(t as u64);
                let trial_spec = MaskSpec { seed, ..spec.clone() };
                (seed, ampute(table, &trial_spec))
            })
            .collect();
        for strategy in strategies {
            let per_trial: Vec<TrialScore> = masks
                .par_iter()
                .enumerate()
                .map(|(t, (seed, mask))| {
                    let (masked, truth) = match mask {
                        Ok(m) => m,
                        Err(e) => return TrialScore::failed(t, *seed, e),
                    };
                    let config = strategy.clone().with_seed(*seed);
                    impute(masked, &spec.target, &config, None)
                        .map_err(EvalError::from)
                        .and_then(|r| score_trial(&r, truth, t, *seed))
                        .unwrap_or_else(|e| TrialScore::failed(t, *seed, e))
                })
                .collect();
            reports.push(ScoreReport::aggregate(
                strategy.method,
                &spec.target,
                Some(spec.mechanism),
                Some(spec.rate),
                per_trial,
            ));
        }
    }
    Ok(reports)
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

/// Flat CSV, one row per report, for plotting.
pub fn reports_to_csv(reports: &[ScoreReport]) -> String {
    let mut out = String::from(
        "strategy,target,mechanism,rate,trials,n_failed,rmse_mean,rmse_sd,mae_mean,mae_sd,accuracy_mean,accuracy_sd\n",
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.strategy,
            r.target,
            r.mechanism.map_or_else(String::new, |m| m.to_string()),
            opt(r.rate),
            r.trials,
            r.n_failed,
            opt(r.rmse_mean),
            opt(r.rmse_sd),
            opt(r.mae_mean),
            opt(r.mae_sd),
            opt(r.accuracy_mean),
            opt(r.accuracy_sd),
        );
    }
    out
}

/// Human-readable summary table.
pub fn format_summary(reports: &[ScoreReport]) -> String {
    let fmt = |m: Option<f64>, s: Option<f64>| match (m, s) {
        (Some(m), Some(s)) => format!("{m:.4} ± {s:.4}"),
        _ => "-".to_string(),
    };
    let mut out = format!(
        "{:<20} {:<12} {:>6} {:>6} {:>20} {:>20} {:>20}\n",
        "strategy", "target", "trials", "failed", "rmse", "mae", "accuracy"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<20} {:<12} {:>6} {:>6} {:>20} {:>20} {:>20}",
            r.strategy.tag(),
            r.target,
            r.trials,
            r.n_failed,
            fmt(r.rmse_mean, r.rmse_sd),
            fmt(r.mae_mean, r.mae_sd),
            fmt(r.accuracy_mean, r.accuracy_sd),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn complete(n: usize) -> Table {
        Table::new(vec![
            Column::numeric("x", (0..n).map(|i| Some(i as f64)).collect()),
            Column::numeric("y", (0..n).map(|i| Some(2.0 * i as f64)).collect()),
        ])
        .unwrap()
    }

    #[test]
    fn spec_validation() {
        let t = complete(4);
        assert!(MaskSpec::mcar("y", 0.0, 0).validate(&t).is_err());
        assert!(MaskSpec::mcar("y", 1.0, 0).validate(&t).is_err());
        assert!(MaskSpec::mar("y", "y", 0.5, 0).validate(&t).is_err());
        let mut mar = MaskSpec::mar("y", "x", 0.5, 0);
        assert!(mar.validate(&t).is_ok());
        mar.driver = None;
        assert!(mar.validate(&t).is_err());
        let holey = Table::new(vec![Column::numeric("y", vec![None, Some(1.0)])]).unwrap();
        assert_eq!(
            MaskSpec::mcar("y", 0.5, 0).validate(&holey),
            Err(EvalError::TargetNotComplete("y".into()))
        );
    }

    #[test]
    fn amputation_is_seeded_and_local() {
        let t = complete(50);
        let spec = MaskSpec::mcar("y", 0.3, 17);
        let (a, ta) = ampute(&t, &spec).unwrap();
        let (b, tb) = ampute(&t, &spec).unwrap();
        assert_eq!((a.clone(), ta.clone()), (b, tb));
        assert_eq!(a.column("x"), t.column("x"));
        for (&row, v) in &ta.cells {
            assert!(a.column("y").unwrap().is_missing(row));
            assert_eq!(t.column("y").unwrap().get(row).as_ref(), Some(v));
        }
        assert_eq!(a.column("y").unwrap().n_missing(), ta.len());
    }

    #[test]
    fn two_rows_half_rate_is_reproducible() {
        let t = complete(2);
        let spec = MaskSpec::mcar("y", 0.5, 3);
        let first = ampute(&t, &spec).map(|(_, g)| g);
        assert_eq!(first, ampute(&t, &spec).map(|(_, g)| g));
    }

    #[test]
    fn complete_masking_errors_after_one_redraw() {
        // One row at rate 0.999: both draws almost surely hit it.
        let t = complete(1);
        let hits = (0..20)
            .filter(|&s| ampute(&t, &MaskSpec::mcar("y", 0.999, s)) == Err(EvalError::CompleteMasking("y".into())))
            .count();
        assert!(hits >= 19);
    }

    #[test]
    fn rank_probabilities_sum_to_budget() {
        let ranks: Vec<f64> = (1..=10).map(f64::from).collect();
        for rate in [0.1, 0.5, 0.8] {
            let p = rank_probabilities(&ranks, rate);
            let total: f64 = p.iter().sum();
            assert!((total - rate * 10.0).abs() < 1e-9, "{rate}: {total}");
            assert!(p.iter().all(|&q| (0.0..=1.0).contains(&q)));
            assert!(p.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn scoring() {
        let t = complete(3);
        let truth = GroundTruth {
            column: "y".into(),
            cells: BTreeMap::from([(1, Value::Num(2.0))]),
        };
        let mut result = crate::imputation::impute_mean(&t, "y").unwrap();
        let perfect = score(&result, &truth).unwrap();
        assert_eq!(perfect.rmse_mean, Some(0.0));

        let holed = t.with_column(Column::numeric("y", vec![Some(0.0), Some(4.0), Some(4.0)])).unwrap();
        result.table = holed;
        let truth4 = GroundTruth {
            column: "y".into(),
            cells: BTreeMap::from([(1, Value::Num(6.0))]),
        };
        let r = score(&result, &truth4).unwrap();
        assert_eq!((r.rmse_mean, r.mae_mean), (Some(2.0), Some(2.0)));

        let c = Table::new(vec![Column::nominal("c", vec![Some("a"), Some("a")])]).unwrap();
        let r = crate::imputation::impute_mode(&c, "c").unwrap();
        let truth = GroundTruth {
            column: "c".into(),
            cells: BTreeMap::from([(0, Value::Cat("a".into())), (1, Value::Cat("b".into()))]),
        };
        assert_eq!(score(&r, &truth).unwrap().accuracy_mean, Some(0.5));
    }

    #[test]
    fn scoring_requires_imputed_cells() {
        let t = Table::new(vec![Column::numeric("y", vec![None, Some(1.0)])]).unwrap();
        let mut r = crate::imputation::impute_mean(&complete(2), "y").unwrap();
        r.table = t;
        let truth = GroundTruth {
            column: "y".into(),
            cells: BTreeMap::from([(0, Value::Num(0.0))]),
        };
        assert_eq!(
            score(&r, &truth),
            Err(EvalError::IncompleteImputation { column: "y".into(), row: 0 })
        );
    }

    #[test]
    fn trials_are_deterministic_and_record_failures() {
        let t = complete(40);
        let specs = [MaskSpec::mcar("y", 0.2, 5)];
        let strategies = [
            StrategyConfig::new(Strategy::Mean),
            StrategyConfig::new(Strategy::Mode),
            StrategyConfig::new(Strategy::Pmm).with_predictors(&["x"]),
        ];
        let a = run_trials(&t, &specs, &strategies, 4).unwrap();
        assert_eq!(a, run_trials(&t, &specs, &strategies, 4).unwrap());
        assert_eq!(a.len(), 3);
        assert!(a[1].all_failed());
        assert_eq!(a[0].n_failed, 0);
        assert!(a[2].rmse_mean.unwrap() < a[0].rmse_mean.unwrap());
        let single = run_trials(&t, &specs, &strategies[..1], 1).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].trials, 1);
        assert_eq!(single[0].rmse_sd, Some(0.0));
    }

    #[test]
    fn csv_and_summary_have_one_line_per_report() {
        let t = complete(20);
        let reports = run_trials(
            &t,
            &[MaskSpec::mcar("y", 0.3, 0)],
            &[StrategyConfig::new(Strategy::Mean), StrategyConfig::new(Strategy::HotDeckRandom)],
            2,
        )
        .unwrap();
        assert_eq!(reports_to_csv(&reports).lines().count(), 3);
        assert_eq!(format_summary(&reports).lines().count(), 3);
    }
}
