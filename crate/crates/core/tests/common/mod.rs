//! Table generators and brute-force reference implementations shared by the
//! integration tests.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use agentimpute::imputation::{fit_ols, ImputationResult};
use agentimpute::tabular::{Column, ColumnData, Table, Value};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn holes(rng: &mut ChaCha8Rng, values: Vec<f64>, rate: f64, keep: usize) -> Vec<Option<f64>> {
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| (i < keep || rng.random::<f64>() >= rate).then_some(v))
        .collect()
}

fn cat_holes(rng: &mut ChaCha8Rng, values: Vec<String>, rate: f64, keep: usize) -> Vec<Option<String>> {
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| (i < keep || rng.random::<f64>() >= rate).then_some(v))
        .collect()
}

/// Mixed table of `n` rows:
///
/// * `x1` continuous, a few holes
/// * `x2` small integers, so distances and predictions tie often
/// * `c` nominal with three levels, a few holes
/// * `y` numeric, linear in the others plus noise, 5 to 40 % holes
/// * `label` nominal derived from `y`, 5 to 40 % holes
///
/// The first four rows are always fully observed.
pub fn mixed_table(seed: u64, n: usize) -> Table {
    let mut r = rng(seed);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let x1: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
    let x2: Vec<f64> = (0..n).map(|_| r.random_range(0..5) as f64).collect();
    let levels = ["a", "b", "c"];
    let c: Vec<String> = (0..n).map(|_| levels[r.random_range(0..3)].to_string()).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| 1.5 * x1[i] - x2[i] + if c[i] == "b" { 2.0 } else { 0.0 } + noise.sample(&mut r))
        .collect();
    let label: Vec<String> = y
        .iter()
        .map(|&v| if v < -1.0 { "low" } else if v < 1.0 { "mid" } else { "high" }.to_string())
        .collect();
    let y_rate = r.random_range(0.05..0.4);
    let l_rate = r.random_range(0.05..0.4);
    let x1 = holes(&mut r, x1, 0.05, 4);
    let x2: Vec<Option<f64>> = x2.into_iter().map(Some).collect();
    let c = cat_holes(&mut r, c, 0.05, 4);
    let y = holes(&mut r, y, y_rate, 4);
    let label = cat_holes(&mut r, label, l_rate, 4);
    Table::new(vec![
        Column::numeric("x1", x1),
        Column::numeric("x2", x2),
        Column::nominal("c", c),
        Column::numeric("y", y),
        Column::nominal("label", label),
    ])
    .unwrap()
}

/// `y = 2x + N(0, sd)` with `x` uniform on [0, 10), fully observed.
pub fn linear_table(seed: u64, n: usize, sd: f64) -> Table {
    let mut r = rng(seed);
    let noise = Normal::new(0.0, sd).unwrap();
    let x: Vec<f64> = (0..n).map(|_| r.random_range(0.0..10.0)).collect();
    let y: Vec<f64> = x.iter().map(|&v| 2.0 * v + noise.sample(&mut r)).collect();
    Table::new(vec![
        Column::numeric("x", x.into_iter().map(Some).collect()),
        Column::numeric("y", y.into_iter().map(Some).collect()),
    ])
    .unwrap()
}

pub fn observed_values(table: &Table, column: &str) -> Vec<Value> {
    let col = table.column(column).unwrap();
    (0..table.n_rows()).filter_map(|r| col.get(r)).collect()
}

/// Every originally observed cell of every column is unchanged.
pub fn observed_preserved(before: &Table, after: &Table) -> bool {
    before.columns().iter().all(|c| {
        let a = after.column(&c.name).unwrap();
        (0..before.n_rows()).all(|r| c.is_missing(r) || c.get(r) == a.get(r))
    })
}

/// Donor-based imputed values of `column` that are not among its observed
/// values.
pub fn outside_pool(input: &Table, result: &ImputationResult, column: &str) -> Vec<(usize, Value)> {
    let pool: Vec<Value> = observed_values(input, column);
    result
        .log
        .iter()
        .filter(|c| c.column == column && !c.donors.is_empty())
        .filter(|c| !pool.contains(&c.value))
        .map(|c| (c.row, c.value.clone()))
        .collect()
}

fn numeric(table: &Table, name: &str) -> Vec<Option<f64>> {
    table.numeric(name).unwrap().to_vec()
}

/// Brute-force PMM: for each recipient with complete predictors, scan every
/// complete donor and keep the smallest (|yhat_j - yhat_i|, row).
/// Returns recipient row to donor row.
pub fn pmm_oracle(table: &Table, target: &str, predictors: &[&str]) -> BTreeMap<usize, usize> {
    let Ok(model) = fit_ols(table, target, predictors) else {
        return BTreeMap::new();
    };
    let y = numeric(table, target);
    let xs: Vec<Vec<Option<f64>>> = predictors.iter().map(|p| numeric(table, p)).collect();
    let row_x = |r: usize| -> Option<Vec<f64>> { xs.iter().map(|c| c[r]).collect() };
    let donors: Vec<(usize, f64)> = (0..table.n_rows())
        .filter(|&r| y[r].is_some())
        .filter_map(|r| row_x(r).map(|x| (r, model.predict(&x))))
        .collect();
    let mut out = BTreeMap::new();
    for j in (0..table.n_rows()).filter(|&r| y[r].is_none()) {
        let Some(x) = row_x(j) else { continue };
        let yhat = model.predict(&x);
        let mut best: Option<(f64, usize)> = None;
        for &(i, d) in &donors {
            let gap = (yhat - d).abs();
            let better = match best {
                None => true,
                Some((g, row)) => gap < g || (gap == g && i < row),
            };
            if better {
                best = Some((gap, i));
            }
        }
        if let Some((_, i)) = best {
            out.insert(j, i);
        }
    }
    out
}

enum Feature {
    Num { cells: Vec<Option<f64>>, mean: f64, scale: f64 },
    Cat { cells: Vec<Option<String>>, levels: Vec<String>, mode: String },
}

/// Brute-force kNN with the documented encoding: numeric predictors z-scored
/// by pool mean and population sd (sd 0 means no scaling), nominal ones
/// one-hot over sorted pool levels, missing recipient cells replaced by
/// pool mean or mode (ties to the smallest label), Euclidean distance, ties
/// to the lower row. Returns recipient row to sorted donor rows.
pub fn knn_oracle(table: &Table, target: &str, predictors: &[&str], k: usize) -> BTreeMap<usize, Vec<usize>> {
    let tcol = table.column(target).unwrap();
    let cols: Vec<&Column> = predictors.iter().map(|p| table.column(p).unwrap()).collect();
    let pool: Vec<usize> = (0..table.n_rows())
        .filter(|&r| !tcol.is_missing(r) && cols.iter().all(|c| !c.is_missing(r)))
        .collect();
    let features: Vec<Feature> = cols
        .iter()
        .map(|c| match &c.data {
            ColumnData::Numeric(v) => {
                let xs: Vec<f64> = pool.iter().map(|&r| v[r].unwrap()).collect();
                let n = xs.len() as f64;
                let mean = xs.iter().sum::<f64>() / n;
                let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
                let sd = var.sqrt();
                Feature::Num {
                    cells: v.clone(),
                    mean,
                    scale: if sd > 0.0 { sd } else { 1.0 },
                }
            }
            ColumnData::Nominal(v) => {
                let mut counts: BTreeMap<String, usize> = BTreeMap::new();
                for &r in &pool {
                    *counts.entry(v[r].clone().unwrap()).or_default() += 1;
                }
                let top = *counts.values().max().unwrap();
                let mode = counts.iter().find(|(_, &n)| n == top).unwrap().0.clone();
                Feature::Cat {
                    cells: v.clone(),
                    levels: counts.keys().cloned().collect(),
                    mode,
                }
            }
        })
        .collect();
    let encode = |r: usize| -> Vec<f64> {
        let mut out = Vec::new();
        for f in &features {
            match f {
                Feature::Num { cells, mean, scale } => out.push((cells[r].unwrap_or(*mean) - mean) / scale),
                Feature::Cat { cells, levels, mode } => {
                    let v = cells[r].as_ref().unwrap_or(mode);
                    out.extend(levels.iter().map(|l| if l == v { 1.0 } else { 0.0 }));
                }
            }
        }
        out
    };
    let encoded: Vec<(usize, Vec<f64>)> = pool.iter().map(|&r| (r, encode(r))).collect();
    let mut out = BTreeMap::new();
    for j in (0..table.n_rows()).filter(|&r| tcol.is_missing(r)) {
        let q = encode(j);
        let mut all: Vec<(f64, usize)> = encoded
            .iter()
            .map(|(r, f)| {
                let d = q.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                (d, *r)
            })
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut chosen: Vec<usize> = all.iter().take(k).map(|&(_, r)| r).collect();
        chosen.sort_unstable();
        out.insert(j, chosen);
    }
    out
}

/// Donor rows the library recorded for each imputed cell of `column`.
pub fn recorded_donors(result: &ImputationResult, column: &str) -> BTreeMap<usize, Vec<usize>> {
    result
        .log
        .iter()
        .filter(|c| c.column == column && !c.donors.is_empty())
        .map(|c| {
            let mut rows: Vec<usize> = c.donors.iter().map(|d| d.row).collect();
            rows.sort_unstable();
            (c.row, rows)
        })
        .collect()
}

/// Simple linear regression by the textbook formulas.
pub fn simple_ols(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

/// Complete-data Gaussian MLE by direct summation.
pub fn gaussian_mle(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mu: Vec<f64> = (0..d).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n).collect();
    let sigma = (0..d)
        .map(|a| {
            (0..d)
                .map(|b| rows.iter().map(|r| (r[a] - mu[a]) * (r[b] - mu[b])).sum::<f64>() / n)
                .collect()
        })
        .collect();
    (mu, sigma)
}

/// Rows of a multivariate normal with mean `mu` and covariance `L L^T`.
pub fn gaussian_rows(r: &mut ChaCha8Rng, n: usize, mu: &[f64], l: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let std = Normal::new(0.0, 1.0).unwrap();
    (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..mu.len()).map(|_| std.sample(r)).collect();
            (0..mu.len())
                .map(|a| mu[a] + (0..=a).map(|b| l[a][b] * z[b]).sum::<f64>())
                .collect()
        })
        .collect()
}

/// Table with columns `v0..v{d-1}` from `rows`, each cell hidden
/// independently with probability `rate`.
pub fn masked_gaussian_table(r: &mut ChaCha8Rng, rows: &[Vec<f64>], rate: f64) -> Table {
    let d = rows[0].len();
    let mut cells: Vec<Vec<Option<f64>>> = vec![Vec::with_capacity(rows.len()); d];
    for row in rows {
        for (k, col) in cells.iter_mut().enumerate() {
            col.push((r.random::<f64>() >= rate).then_some(row[k]));
        }
    }
    Table::new(
        cells
            .into_iter()
            .enumerate()
            .map(|(k, c)| Column::numeric(format!("v{k}"), c))
            .collect(),
    )
    .unwrap()
}

/// Random lower-triangular factor with a positive diagonal.
pub fn random_factor(r: &mut ChaCha8Rng, d: usize) -> Vec<Vec<f64>> {
    (0..d)
        .map(|a| {
            (0..d)
                .map(|b| match b.cmp(&a) {
                    std::cmp::Ordering::Less => r.random_range(-1.0..1.0),
                    std::cmp::Ordering::Equal => r.random_range(0.5..2.0),
                    std::cmp::Ordering::Greater => 0.0,
                })
                .collect()
        })
        .collect()
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut out = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                out[k] = avg;
            }
            i = j + 1;
        }
        out
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb) * (y - mb)).sum();
    cov / (va * vb).sqrt()
}

pub fn distinct(values: &[Value]) -> BTreeSet<String> {
    values.iter().map(|v| v.to_string()).collect()
}
