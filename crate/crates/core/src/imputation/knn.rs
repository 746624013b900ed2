//! Nearest-neighbour imputation and its classification variant.
//!
//! Numeric predictors are z-scored with the donor pool's mean and
//! population standard deviation (constant predictors are left unscaled);
//! nominal predictors are one-hot encoded over the pool's categories.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use super::ledger::{weighted_value, DonorShare};
use super::{
    expect_kind, Distance, DonorRef, Fallback, ImputationResult, ImputeError, ResultBuilder,
    Strategy, StrategyConfig,
};
use crate::stats;
use crate::tabular::{mode_of, Column, ColumnData, ColumnKind, Table, Value};

enum Encoder<'t> {
    Numeric {
        cells: &'t [Option<f64>],
        mean: f64,
        scale: f64,
    },
    Nominal {
        cells: &'t [Option<String>],
        categories: Vec<String>,
        mode: String,
    },
}

impl Encoder<'_> {
    fn is_missing(&self, row: usize) -> bool {
        match self {
            Encoder::Numeric { cells, .. } => cells[row].is_none(),
            Encoder::Nominal { cells, .. } => cells[row].is_none(),
        }
    }

    /// Appends the encoded cell; missing cells take the pool mean or mode.
    fn encode_into(&self, row: usize, out: &mut Vec<f64>) {
        match self {
            Encoder::Numeric { cells, mean, scale } => {
                out.push((cells[row].unwrap_or(*mean) - mean) / scale)
            }
            Encoder::Nominal {
                cells,
                categories,
                mode,
            } => {
                let value = cells[row].as_ref().unwrap_or(mode);
                out.extend(categories.iter().map(|c| if c == value { 1.0 } else { 0.0 }));
            }
        }
    }
}

fn build_encoder<'t>(column: &'t Column, pool: &[usize]) -> Encoder<'t> {
    match &column.data {
        ColumnData::Numeric(cells) => {
            let xs: Vec<f64> = pool.iter().map(|&r| cells[r].unwrap()).collect();
            let (mean, var) = stats::mean_var(&xs).expect("pool is nonempty");
            let sd = var.sqrt();
            Encoder::Numeric {
                cells,
                mean,
                scale: if sd > 0.0 { sd } else { 1.0 },
            }
        }
        ColumnData::Nominal(cells) => {
            let present = pool.iter().map(|&r| cells[r].as_deref().unwrap());
            let (mode, _) = mode_of(present.clone()).expect("pool is nonempty");
            let mut categories: Vec<String> = present.map(str::to_string).collect();
            categories.sort();
            categories.dedup();
            Encoder::Nominal {
                cells,
                categories,
                mode,
            }
        }
    }
}

pub(crate) fn distance(metric: Distance, a: &[f64], b: &[f64]) -> f64 {
    match metric {
        Distance::Euclidean => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt(),
        Distance::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    dist: f64,
    row: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    // Max-heap on (distance, row): the worst kept neighbour sits on top.
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.row.cmp(&other.row))
    }
}

/// The `k` pool rows nearest to `query`, ascending by (distance, row).
fn nearest(pool: &[(usize, Vec<f64>)], query: &[f64], k: usize, metric: Distance) -> Vec<usize> {
    let mut heap = BinaryHeap::with_capacity(k + 1);
    for (row, features) in pool {
        heap.push(Candidate {
            dist: distance(metric, query, features),
            row: *row,
        });
        if heap.len() > k {
            heap.pop();
        }
    }
    heap.into_sorted_vec().into_iter().map(|c| c.row).collect()
}

/// Most common label; ties go to the lexicographically smallest.
fn vote<'a>(labels: impl Iterator<Item = &'a str>) -> String {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_insert(0) += 1;
    }
    let top = counts.values().copied().max().unwrap_or(0);
    counts
        .into_iter()
        .find(|(_, n)| *n == top)
        .map(|(l, _)| l.to_string())
        .unwrap_or_default()
}

fn knn_core<S: AsRef<str>>(
    table: &Table,
    target: &str,
    predictors: &[S],
    k: usize,
    metric: Distance,
    fallback: Fallback,
    method: Strategy,
) -> Result<ImputationResult, ImputeError> {
    if k == 0 {
        return Err(ImputeError::InvalidConfig("k must be at least 1".into()));
    }
    let target_col = table.column(target)?;
    let columns: Vec<&Column> = predictors
        .iter()
        .map(|p| table.column(p.as_ref()))
        .collect::<Result<_, _>>()?;
    let config = StrategyConfig {
        distance: metric,
        fallback,
        ..StrategyConfig::new(method).with_predictors(predictors).with_k(k)
    };
    let mut out = ResultBuilder::new(table, target, method)?;
    let recipients: Vec<usize> = (0..table.n_rows()).filter(|&r| target_col.is_missing(r)).collect();
    if recipients.is_empty() {
        return Ok(out.finish(config));
    }

    let pool_rows: Vec<usize> = (0..table.n_rows())
        .filter(|&r| !target_col.is_missing(r) && columns.iter().all(|c| !c.is_missing(r)))
        .collect();
    if pool_rows.len() < k {
        return Err(ImputeError::PoolTooSmall {
            column: target.to_string(),
            needed: k,
            available: pool_rows.len(),
        });
    }
    let encoders: Vec<Encoder> = columns.iter().map(|c| build_encoder(c, &pool_rows)).collect();
    let encode = |row: usize| {
        let mut v = Vec::new();
        for e in &encoders {
            e.encode_into(row, &mut v);
        }
        v
    };
    let pool: Vec<(usize, Vec<f64>)> = pool_rows.iter().map(|&r| (r, encode(r))).collect();

    let blocked: Vec<usize> = recipients
        .iter()
        .copied()
        .filter(|&r| encoders.iter().any(|e| e.is_missing(r)))
        .collect();
    if fallback == Fallback::Error && !blocked.is_empty() {
        return Err(ImputeError::UnimputableRows {
            column: target.to_string(),
            rows: blocked,
        });
    }

    let fraction = 1.0 / k as f64;
    for &j in &recipients {
        let mut donors = nearest(&pool, &encode(j), k, metric);
        donors.sort_unstable();
        let refs: Vec<DonorRef> = donors
            .iter()
            .map(|&i| DonorRef {
                row: i,
                y: target_col.get(i).expect("pool rows are respondents"),
                w: fraction,
            })
            .collect();
        let value = match target_col.kind() {
            ColumnKind::Numeric => {
                let shares: Vec<DonorShare> = donors
                    .iter()
                    .map(|&i| DonorShare {
                        donor: i,
                        count: 1,
                        fraction,
                    })
                    .collect();
                let cells = target_col.numeric_cells().expect("numeric");
                Value::Num(weighted_value(&shares, |i| cells[i].unwrap()))
            }
            ColumnKind::Nominal => Value::Cat(vote(refs.iter().map(|d| d.y.as_str().unwrap()))),
        };
        out.fill_from_donors(j, value, refs);
    }
    // Rows that needed predictor substitution are still donor-based, but
    // flag them so the provenance shows the substitution.
    let mut result = out.finish(config);
    for cell in &mut result.log {
        cell.fallback = blocked.binary_search(&cell.row).is_ok();
    }
    Ok(result)
}

/// k-nearest-neighbour imputation. Numeric targets take the equal-weight
/// mean of the `k` donors (`w*_ij = 1/k`); nominal targets take their
/// majority label. Neighbour ties at equal distance go to the lower row.
pub fn impute_knn<S: AsRef<str>>(
    table: &Table,
    target: &str,
    predictors: &[S],
    k: usize,
    metric: Distance,
    fallback: Fallback,
) -> Result<ImputationResult, ImputeError> {
    knn_core(table, target, predictors, k, metric, fallback, Strategy::Knn)
}

/// Classification-based imputation for a nominal target, realised as a
/// k-nearest-neighbour majority vote over all given predictors.
pub fn impute_classification<S: AsRef<str>>(
    table: &Table,
    target: &str,
    predictors: &[S],
    k: usize,
    metric: Distance,
    fallback: Fallback,
) -> Result<ImputationResult, ImputeError> {
    expect_kind(table, target, ColumnKind::Nominal)?;
    knn_core(table, target, predictors, k, metric, fallback, Strategy::ClassificationKnn)
}
