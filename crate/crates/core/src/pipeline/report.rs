use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::amputation::{Mechanism, ScoreReport};
use crate::imputation::{DonorLedger, ImputationResult, Strategy};
use crate::tabular::{ColumnKind, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Lower is better.
    Rmse,
    /// Higher is better.
    Accuracy,
}

impl Metric {
    pub fn for_kind(kind: ColumnKind) -> Self {
        match kind {
            ColumnKind::Numeric => Metric::Rmse,
            ColumnKind::Nominal => Metric::Accuracy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColumnStatus {
    Treated,
    NoOp,
    Untreated,
}

impl ColumnStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ColumnStatus::Treated => "treated",
            ColumnStatus::NoOp => "no-op",
            ColumnStatus::Untreated => "untreated",
        }
    }
}

/// Distance between the winner's score and the runner-up's, or the label
/// `"uncontested"` when only one candidate survived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Margin {
    Gap(f64),
    Label(String),
}

impl Margin {
    pub fn uncontested() -> Self {
        Margin::Label("uncontested".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub strategy: Strategy,
    pub trials: usize,
    pub n_failed: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    /// Every trial failed, so the candidate took no part in selection.
    pub excluded: bool,
}

impl CandidateScore {
    pub fn from_report(metric: Metric, r: &ScoreReport) -> Self {
        let (mean, sd) = match metric {
            Metric::Rmse => (r.rmse_mean, r.rmse_sd),
            Metric::Accuracy => (r.accuracy_mean, r.accuracy_sd),
        };
        CandidateScore {
            strategy: r.strategy,
            trials: r.trials,
            n_failed: r.n_failed,
            mean,
            sd,
            excluded: r.all_failed() || mean.is_none(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFailure {
    pub strategy: Option<Strategy>,
    pub reason: String,
}

/// Outcome for one target column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSelection {
    pub column: String,
    pub kind: ColumnKind,
    pub status: ColumnStatus,
    pub n_missing: usize,
    pub metric: Metric,
    /// Masking rate used by the tournament.
    pub rate: Option<f64>,
    pub chosen: Option<Strategy>,
    pub margin: Option<Margin>,
    pub scores: Vec<CandidateScore>,
    pub failures: Vec<CandidateFailure>,
}

impl ColumnSelection {
    pub fn new(column: &str, kind: ColumnKind, n_missing: usize) -> Self {
        ColumnSelection {
            column: column.to_string(),
            kind,
            status: if n_missing == 0 { ColumnStatus::NoOp } else { ColumnStatus::Untreated },
            n_missing,
            metric: Metric::for_kind(kind),
            rate: None,
            chosen: None,
            margin: None,
            scores: Vec::new(),
            failures: Vec::new(),
        }
    }
}

/// Best non-excluded candidate by `metric`, ties going to the lower `rank`.
pub fn select_winner(
    metric: Metric,
    scores: &[CandidateScore],
    rank: impl Fn(Strategy) -> usize,
) -> Option<(Strategy, Margin)> {
    let mut live: Vec<(f64, usize, Strategy)> = scores
        .iter()
        .filter(|s| !s.excluded)
        .filter_map(|s| s.mean.map(|m| (m, rank(s.strategy), s.strategy)))
        .collect();
    live.sort_by(|a, b| {
        let by_score = match metric {
            Metric::Rmse => a.0.total_cmp(&b.0),
            Metric::Accuracy => b.0.total_cmp(&a.0),
        };
        by_score.then(a.1.cmp(&b.1))
    });
    let (best, _, winner) = *live.first()?;
    let margin = match live.get(1) {
        Some(&(second, _, _)) => Margin::Gap((best - second).abs()),
        None => Margin::uncontested(),
    };
    Some((winner, margin))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellProvenance {
    pub row: usize,
    pub value: Value,
    pub donors: Vec<usize>,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnEntry {
    #[serde(flatten)]
    pub selection: ColumnSelection,
    pub cells: Vec<CellProvenance>,
    /// SHA-256 of the column's ledger in canonical JSON.
    pub ledger_digest: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub n_rows: usize,
    pub n_cols: usize,
    pub mechanism: Mechanism,
    pub n_trials: usize,
    pub base_seed: u64,
    /// Effective tie-break order, best first.
    pub priority: Vec<Strategy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    #[serde(flatten)]
    pub header: ReportHeader,
    pub untreated: Vec<String>,
    pub columns: Vec<ColumnEntry>,
}

impl PipelineReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Replays every column's recorded scores through [`select_winner`].
    pub fn replay_selection(&self, column: &str) -> Option<Strategy> {
        let entry = self.columns.iter().find(|c| c.selection.column == column)?;
        let rank = |s: Strategy| {
            self.header
                .priority
                .iter()
                .position(|&p| p == s)
                .unwrap_or(usize::MAX)
        };
        select_winner(entry.selection.metric, &entry.selection.scores, rank).map(|(s, _)| s)
    }
}

pub fn ledger_digest(ledger: &DonorLedger) -> String {
    hex::encode(Sha256::digest(ledger.canonical_json().as_bytes()))
}

/// Builds the report document. Columns appear in `selections` order.
pub fn assemble_report(
    header: ReportHeader,
    results: &BTreeMap<String, ImputationResult>,
    selections: &[ColumnSelection],
) -> PipelineReport {
    let columns = selections
        .iter()
        .map(|sel| {
            let result = results.get(&sel.column);
            let mut cells: Vec<CellProvenance> = result
                .map(|r| {
                    r.log
                        .iter()
                        .filter(|c| c.column == sel.column)
                        .map(|c| CellProvenance {
                            row: c.row,
                            value: c.value.clone(),
                            donors: c.donors.iter().map(|d| d.row).collect(),
                            fallback: c.fallback,
                        })
                        .collect()
                })
                .unwrap_or_default();
            cells.sort_by_key(|c| c.row);
            ColumnEntry {
                selection: sel.clone(),
                cells,
                ledger_digest: result.and_then(|r| r.ledger(&sel.column)).map(ledger_digest),
            }
        })
        .collect();
    PipelineReport {
        header,
        untreated: selections
            .iter()
            .filter(|s| s.status == ColumnStatus::Untreated)
            .map(|s| s.column.clone())
            .collect(),
        columns,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(strategy: Strategy, mean: Option<f64>) -> CandidateScore {
        CandidateScore {
            strategy,
            trials: 3,
            n_failed: if mean.is_some() { 0 } else { 3 },
            mean,
            sd: mean.map(|_| 0.1),
            excluded: mean.is_none(),
        }
    }

    #[test]
    fn rmse_minimised_accuracy_maximised() {
        let scores = [score(Strategy::Mean, Some(2.0)), score(Strategy::Pmm, Some(0.5))];
        let (w, m) = select_winner(Metric::Rmse, &scores, |_| 0).unwrap();
        assert_eq!((w, m), (Strategy::Pmm, Margin::Gap(1.5)));
        let scores = [score(Strategy::Mode, Some(0.4)), score(Strategy::HotDeckRandom, Some(0.6))];
        assert_eq!(select_winner(Metric::Accuracy, &scores, |_| 0).unwrap().0, Strategy::HotDeckRandom);
    }

    #[test]
    fn ties_follow_priority_and_failures_are_excluded() {
        let scores = [
            score(Strategy::Mean, Some(1.0)),
            score(Strategy::Regression, Some(1.0)),
            score(Strategy::Pmm, None),
        ];
        let rank = |s: Strategy| if s == Strategy::Regression { 0 } else { 1 };
        assert_eq!(select_winner(Metric::Rmse, &scores, rank).unwrap().0, Strategy::Regression);
        let only = [score(Strategy::Mean, Some(1.0)), score(Strategy::Pmm, None)];
        assert_eq!(select_winner(Metric::Rmse, &only, |_| 0).unwrap().1, Margin::uncontested());
        assert_eq!(select_winner(Metric::Rmse, &only[1..], |_| 0), None);
    }

    #[test]
    fn empty_report() {
        let header = ReportHeader {
            n_rows: 0,
            n_cols: 0,
            mechanism: Mechanism::Mcar,
            n_trials: 1,
            base_seed: 0,
            priority: vec![],
        };
        let r = assemble_report(header, &BTreeMap::new(), &[]);
        assert!(r.columns.is_empty());
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["columns"], serde_json::json!([]));
        assert_eq!(serde_json::from_str::<PipelineReport>(&r.to_json()).unwrap(), r);
    }

    #[test]
    fn margin_serialises_as_number_or_label() {
        assert_eq!(serde_json::to_string(&Margin::uncontested()).unwrap(), "\"uncontested\"");
        assert_eq!(serde_json::to_string(&Margin::Gap(0.5)).unwrap(), "0.5");
    }
}
