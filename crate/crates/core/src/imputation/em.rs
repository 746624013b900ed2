//! Maximum likelihood for a multivariate normal under arbitrary
//! missingness, by expectation-maximisation.
//!
//! With `o` the observed and `m` the missing coordinates of a row:
//!
//! * E-step: `x_m = mu_m + S_mo S_oo^-1 (x_o - mu_o)` and the conditional
//!   covariance `C = S_mm - S_mo S_oo^-1 S_om`;
//! * M-step: `mu = mean(x)`, `S = mean((x - mu)(x - mu)^T + C)`.
//!
//! Rows are grouped by missingness pattern so each pattern factors `S_oo`
//! once per iteration. The observed-data log-likelihood never decreases.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::{expect_kind, ImputationResult, ImputeError, ResultBuilder, Strategy, StrategyConfig};
use crate::stats;
use crate::tabular::{Column, ColumnKind, Table, Value};

pub const DEFAULT_EM_TOL: f64 = 1e-8;
pub const DEFAULT_EM_MAX_ITER: usize = 500;

/// Diagonal jitter used to repair a covariance block that is not positive
/// definite.
const RIDGE: f64 = 1e-8;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub columns: Vec<String>,
    pub mu: Vec<f64>,
    /// Row-major, symmetric.
    pub sigma: Vec<Vec<f64>>,
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Observed-data log-likelihood after initialisation and after each
    /// iteration.
    pub log_likelihood_trace: Vec<f64>,
}

impl GaussianParams {
    fn sigma_matrix(&self) -> DMatrix<f64> {
        let d = self.mu.len();
        DMatrix::from_fn(d, d, |i, j| self.sigma[i][j])
    }
}

struct Model {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
}

/// Rows sharing one missingness pattern.
struct Pattern {
    observed: Vec<usize>,
    missing: Vec<usize>,
    rows: Vec<usize>,
}

fn cholesky_repaired(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>, ImputeError> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let n = m.nrows();
    Cholesky::new(m + DMatrix::identity(n, n) * RIDGE)
        .ok_or_else(|| ImputeError::NumericalFailure(format!("{what} is not positive definite")))
}

fn sub(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

fn gather(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

struct Data {
    /// `n x d`, missing cells hold 0 and are never read as data.
    values: DMatrix<f64>,
    patterns: Vec<Pattern>,
}

impl Data {
    fn new(cols: &[&[Option<f64>]], n: usize) -> Self {
        let d = cols.len();
        let values = DMatrix::from_fn(n, d, |r, c| cols[c][r].unwrap_or(0.0));
        let mut groups: BTreeMap<Vec<bool>, Vec<usize>> = BTreeMap::new();
        for r in 0..n {
            let mask: Vec<bool> = cols.iter().map(|c| c[r].is_some()).collect();
            groups.entry(mask).or_default().push(r);
        }
        let patterns = groups
            .into_iter()
            .map(|(mask, rows)| Pattern {
                observed: (0..d).filter(|&k| mask[k]).collect(),
                missing: (0..d).filter(|&k| !mask[k]).collect(),
                rows,
            })
            .collect();
        Data { values, patterns }
    }

    fn observed_part(&self, row: usize, observed: &[usize]) -> DVector<f64> {
        DVector::from_iterator(observed.len(), observed.iter().map(|&k| self.values[(row, k)]))
    }

    fn log_likelihood(&self, model: &Model) -> Result<f64, ImputeError> {
        let mut ll = 0.0;
        for p in &self.patterns {
            if p.observed.is_empty() {
                continue;
            }
            let chol = cholesky_repaired(sub(&model.sigma, &p.observed, &p.observed), "observed covariance")?;
            let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
            let mu_o = gather(&model.mu, &p.observed);
            let k = p.observed.len() as f64;
            for &r in &p.rows {
                let resid = self.observed_part(r, &p.observed) - &mu_o;
                let quad = resid.dot(&chol.solve(&resid));
                ll -= 0.5 * (k * LN_2PI + log_det + quad);
            }
        }
        Ok(ll)
    }

    /// One E-step plus M-step.
    fn step(&self, model: &Model) -> Result<Model, ImputeError> {
        let (n, d) = self.values.shape();
        let mut completed = self.values.clone();
        let mut cond_cov = DMatrix::zeros(d, d);
        for p in &self.patterns {
            if p.missing.is_empty() {
                continue;
            }
            let mu_m = gather(&model.mu, &p.missing);
            let s_mm = sub(&model.sigma, &p.missing, &p.missing);
            let (gain, cov) = if p.observed.is_empty() {
                (None, s_mm)
            } else {
                let chol = cholesky_repaired(sub(&model.sigma, &p.observed, &p.observed), "observed covariance")?;
                let s_om = sub(&model.sigma, &p.observed, &p.missing);
                // B^T = S_oo^-1 S_om
                let gain_t = chol.solve(&s_om);
                let cov = s_mm - s_om.transpose() * &gain_t;
                (Some(gain_t.transpose()), cov)
            };
            let mu_o = gather(&model.mu, &p.observed);
            for &r in &p.rows {
                let xm = match &gain {
                    Some(b) => &mu_m + b * (self.observed_part(r, &p.observed) - &mu_o),
                    None => mu_m.clone(),
                };
                for (i, &k) in p.missing.iter().enumerate() {
                    completed[(r, k)] = xm[i];
                }
            }
            let count = p.rows.len() as f64;
            for (a, &ka) in p.missing.iter().enumerate() {
                for (b, &kb) in p.missing.iter().enumerate() {
                    cond_cov[(ka, kb)] += count * cov[(a, b)];
                }
            }
        }

        let nf = n as f64;
        let mu = DVector::from_fn(d, |k, _| completed.column(k).sum() / nf);
        let mut centred = completed;
        for k in 0..d {
            let m = mu[k];
            centred.column_mut(k).apply(|x| *x -= m);
        }
        let mut sigma = (centred.tr_mul(&centred) + cond_cov) / nf;
        sigma = (&sigma + sigma.transpose()) * 0.5;
        if Cholesky::new(sigma.clone()).is_none() {
            let repaired = &sigma + DMatrix::identity(d, d) * RIDGE;
            if Cholesky::new(repaired.clone()).is_none() {
                return Err(ImputeError::NumericalFailure(
                    "covariance update lost positive definiteness".into(),
                ));
            }
            sigma = repaired;
        }
        Ok(Model { mu, sigma })
    }
}

fn numeric_columns<'t, S: AsRef<str>>(
    table: &'t Table,
    columns: &[S],
) -> Result<Vec<&'t [Option<f64>]>, ImputeError> {
    columns
        .iter()
        .map(|c| {
            expect_kind(table, c.as_ref(), ColumnKind::Numeric)?;
            Ok(table.numeric(c.as_ref())?)
        })
        .collect()
}

fn params_from(columns: Vec<String>, model: &Model, trace: Vec<f64>, iterations: usize) -> GaussianParams {
    let d = model.mu.len();
    GaussianParams {
        columns,
        mu: model.mu.iter().copied().collect(),
        sigma: (0..d).map(|i| (0..d).map(|j| model.sigma[(i, j)]).collect()).collect(),
        log_likelihood: *trace.last().expect("trace is nonempty"),
        iterations,
        log_likelihood_trace: trace,
    }
}

/// Fits mean and covariance of the selected numeric columns.
///
/// Starts from the observed means and a diagonal of observed (population)
/// variances, and stops once an iteration improves the observed-data
/// log-likelihood by less than `tol` or after `max_iter` iterations.
/// Rows with every selected cell missing carry no information and are
/// skipped. Fully observed data short-circuits to the complete-data MLE in
/// one iteration.
pub fn em_gaussian<S: AsRef<str>>(
    table: &Table,
    columns: &[S],
    tol: f64,
    max_iter: usize,
) -> Result<GaussianParams, ImputeError> {
    let names: Vec<String> = columns.iter().map(|c| c.as_ref().to_string()).collect();
    if names.is_empty() {
        return Err(ImputeError::InvalidConfig("EM needs at least one column".into()));
    }
    let all_cols = numeric_columns(table, columns)?;
    let fit_rows: Vec<usize> = (0..table.n_rows())
        .filter(|&r| all_cols.iter().any(|c| c[r].is_some()))
        .collect();
    let n = fit_rows.len();
    if n < 2 {
        return Err(ImputeError::InsufficientData { needed: 2, found: n });
    }
    let owned: Vec<Vec<Option<f64>>> = all_cols
        .iter()
        .map(|c| fit_rows.iter().map(|&r| c[r]).collect())
        .collect();
    let cols: Vec<&[Option<f64>]> = owned.iter().map(Vec::as_slice).collect();
    if let Some(k) = cols.iter().position(|c| c.iter().all(Option::is_none)) {
        return Err(ImputeError::NoDonor {
            column: names[k].clone(),
        });
    }
    let d = cols.len();
    let data = Data::new(&cols, n);

    if data.patterns.len() == 1 && data.patterns[0].missing.is_empty() {
        let mut mu = DVector::zeros(d);
        for k in 0..d {
            mu[k] = stats::mean(&cols[k].iter().map(|x| x.unwrap()).collect::<Vec<_>>());
        }
        let mut centred = data.values.clone();
        for k in 0..d {
            let m = mu[k];
            centred.column_mut(k).apply(|x| *x -= m);
        }
        let sigma = centred.tr_mul(&centred) / n as f64;
        let model = Model { mu, sigma };
        let ll = data.log_likelihood(&model)?;
        return Ok(params_from(names, &model, vec![ll], 1));
    }

    let mut mu = DVector::zeros(d);
    let mut sigma = DMatrix::zeros(d, d);
    for (k, c) in cols.iter().enumerate() {
        let observed: Vec<f64> = c.iter().flatten().copied().collect();
        let (m, v) = stats::mean_var(&observed).expect("every column has an observed cell");
        mu[k] = m;
        sigma[(k, k)] = v;
    }
    let mut model = Model { mu, sigma };
    let mut ll = data.log_likelihood(&model)?;
    let mut trace = vec![ll];
    let mut iterations = 0;
    while iterations < max_iter {
        model = data.step(&model)?;
        iterations += 1;
        let next = data.log_likelihood(&model)?;
        trace.push(next);
        let gain = next - ll;
        ll = next;
        if gain < tol {
            break;
        }
    }
    Ok(params_from(names, &model, trace, iterations))
}

/// Fills every missing cell of `columns` with its conditional mean given the
/// row's present cells under `params`.
pub fn em_impute<S: AsRef<str>>(
    table: &Table,
    columns: &[S],
    params: &GaussianParams,
) -> Result<ImputationResult, ImputeError> {
    let names: Vec<String> = columns.iter().map(|c| c.as_ref().to_string()).collect();
    if names != params.columns {
        return Err(ImputeError::InvalidConfig(format!(
            "parameters were fitted on {:?}, not {:?}",
            params.columns, names
        )));
    }
    let cols = numeric_columns(table, columns)?;
    let data = Data::new(&cols, table.n_rows());
    let mu = DVector::from_vec(params.mu.clone());
    let sigma = params.sigma_matrix();

    let mut filled = table.clone();
    let mut log = Vec::new();
    for p in &data.patterns {
        if p.missing.is_empty() {
            continue;
        }
        let mu_m = gather(&mu, &p.missing);
        let gain = if p.observed.is_empty() {
            None
        } else {
            let chol = cholesky_repaired(sub(&sigma, &p.observed, &p.observed), "observed covariance")?;
            Some(chol.solve(&sub(&sigma, &p.observed, &p.missing)).transpose())
        };
        let mu_o = gather(&mu, &p.observed);
        for &r in &p.rows {
            let xm = match &gain {
                Some(b) => &mu_m + b * (data.observed_part(r, &p.observed) - &mu_o),
                None => mu_m.clone(),
            };
            for (i, &k) in p.missing.iter().enumerate() {
                log.push((k, r, xm[i]));
            }
        }
    }
    log.sort_by_key(|&(k, r, _)| (k, r));

    let mut builders: Vec<ResultBuilder> = names
        .iter()
        .map(|c| ResultBuilder::new(table, c, Strategy::EmGaussian))
        .collect::<Result<_, _>>()?;
    for (k, r, x) in log {
        builders[k].fill(r, Value::Num(x), false);
    }
    let mut ledgers = Vec::new();
    let mut cells = Vec::new();
    for (k, b) in builders.into_iter().enumerate() {
        let part = b.finish(StrategyConfig::new(Strategy::EmGaussian));
        let idx = filled.column_index(&names[k])?;
        *filled.column_mut(idx) = part.table.column(&names[k])?.clone();
        ledgers.extend(part.ledgers);
        cells.extend(part.log);
    }
    Ok(ImputationResult {
        table: filled,
        ledgers,
        log: cells,
        strategy: StrategyConfig::new(Strategy::EmGaussian).with_predictors(&names),
        rng_seed: 0,
    })
}

/// Strategy entry point: fit on the target plus `predictors` (all other
/// numeric columns when empty), fill only the target. Rows with nothing
/// observed among those columns are left out of the fit and receive the
/// marginal mean.
pub(crate) fn impute_target<S: AsRef<str>>(
    table: &Table,
    target: &str,
    predictors: &[S],
) -> Result<ImputationResult, ImputeError> {
    expect_kind(table, target, ColumnKind::Numeric)?;
    let mut columns = vec![target.to_string()];
    if predictors.is_empty() {
        columns.extend(
            table
                .columns()
                .iter()
                .filter(|c| c.kind() == ColumnKind::Numeric && c.name != target)
                .map(|c| c.name.clone()),
        );
    } else {
        columns.extend(predictors.iter().map(|p| p.as_ref().to_string()).filter(|p| p != target));
    }
    let params = em_gaussian(table, &columns, DEFAULT_EM_TOL, DEFAULT_EM_MAX_ITER)?;
    let full = em_impute(table, &columns, &params)?;

    let imputed: Column = full.table.column(target)?.clone();
    Ok(ImputationResult {
        table: table.with_column(imputed)?,
        ledgers: full.ledgers.into_iter().filter(|l| l.target_column == target).collect(),
        log: full.log.into_iter().filter(|c| c.column == target).collect(),
        strategy: StrategyConfig::new(Strategy::EmGaussian).with_predictors(&columns[1..]),
        rng_seed: 0,
    })
}
