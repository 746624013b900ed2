use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{
    expect_kind, Fallback, ImputationResult, ImputeError, ResultBuilder, Strategy, StrategyConfig,
};
use crate::stats;
use crate::tabular::{ColumnKind, Table, Value};

/// Relative ridge added to the normal equations when they are singular.
pub const RIDGE_JITTER: f64 = 1e-10;

/// Smallest acceptable |pivot| relative to the largest in the LU factors.
const PIVOT_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub target: String,
    pub predictors: Vec<String>,
    pub intercept: f64,
    /// Parallel to `predictors`.
    pub coefficients: Vec<f64>,
    /// Clamped to [0, 1].
    pub r_squared: f64,
    pub n_obs: usize,
    pub ridge_applied: bool,
}

impl RegressionModel {
    pub fn coefficient(&self, predictor: &str) -> Option<f64> {
        self.predictors
            .iter()
            .position(|p| p == predictor)
            .map(|i| self.coefficients[i])
    }

    /// `xs` is parallel to `predictors`.
    pub fn predict(&self, xs: &[f64]) -> f64 {
        debug_assert_eq!(xs.len(), self.coefficients.len());
        self.coefficients
            .iter()
            .zip(xs)
            .fold(self.intercept, |acc, (b, x)| acc + b * x)
    }

    /// Prediction for a table row, `None` if any predictor is missing.
    pub fn predict_row(&self, table: &Table, row: usize) -> Result<Option<f64>, ImputeError> {
        let mut xs = Vec::with_capacity(self.predictors.len());
        for p in &self.predictors {
            match table.numeric(p)?[row] {
                Some(x) => xs.push(x),
                None => return Ok(None),
            }
        }
        Ok(Some(self.predict(&xs)))
    }
}

pub(crate) fn numeric_predictors<'t, S: AsRef<str>>(
    table: &'t Table,
    predictors: &[S],
) -> Result<Vec<&'t [Option<f64>]>, ImputeError> {
    predictors
        .iter()
        .map(|p| Ok(table.numeric(p.as_ref())?))
        .collect()
}

/// Rows where the target and every predictor are present.
pub(crate) fn complete_rows(target: &[Option<f64>], predictors: &[&[Option<f64>]]) -> Vec<usize> {
    (0..target.len())
        .filter(|&r| target[r].is_some() && predictors.iter().all(|p| p[r].is_some()))
        .collect()
}

fn solve_normal_equations(xtx: &DMatrix<f64>, xty: &DVector<f64>) -> Option<DVector<f64>> {
    let lu = xtx.clone().lu();
    let u = lu.u();
    let pivots: Vec<f64> = u.diagonal().iter().map(|d| d.abs()).collect();
    let largest = pivots.iter().copied().fold(0.0, f64::max);
    if largest == 0.0 || pivots.iter().any(|&p| p <= largest * PIVOT_RATIO) {
        return None;
    }
    lu.solve(xty).filter(|b| b.iter().all(|v| v.is_finite()))
}

/// Ordinary least squares of `target` on `predictors` over complete rows.
///
/// Predictors are centred before forming the normal equations; the
/// intercept is recovered from the means. A singular system is retried
/// once with `RIDGE_JITTER * max(1, largest diagonal)` on the diagonal.
pub fn fit_ols<S: AsRef<str>>(
    table: &Table,
    target: &str,
    predictors: &[S],
) -> Result<RegressionModel, ImputeError> {
    expect_kind(table, target, ColumnKind::Numeric)?;
    let y_cells = table.numeric(target)?;
    let x_cells = numeric_predictors(table, predictors)?;
    let p = x_cells.len();
    let rows = complete_rows(y_cells, &x_cells);
    if rows.len() < p + 1 {
        return Err(ImputeError::InsufficientData {
            needed: p + 1,
            found: rows.len(),
        });
    }

    let ys: Vec<f64> = rows.iter().map(|&r| y_cells[r].unwrap()).collect();
    let y_mean = stats::mean(&ys);
    let x_means: Vec<f64> = x_cells
        .iter()
        .map(|c| stats::mean(&rows.iter().map(|&r| c[r].unwrap()).collect::<Vec<_>>()))
        .collect();
    let centred = DMatrix::from_fn(rows.len(), p, |i, k| x_cells[k][rows[i]].unwrap() - x_means[k]);
    let yc = DVector::from_iterator(rows.len(), ys.iter().map(|y| y - y_mean));
    let xtx = centred.tr_mul(&centred);
    let xty = centred.tr_mul(&yc);

    let (beta, ridge_applied) = match solve_normal_equations(&xtx, &xty) {
        Some(b) => (b, false),
        None => {
            let scale = xtx.diagonal().iter().copied().fold(1.0, f64::max);
            let mut ridged = xtx.clone();
            for k in 0..p {
                ridged[(k, k)] += RIDGE_JITTER * scale;
            }
            let b = ridged
                .lu()
                .solve(&xty)
                .filter(|b| b.iter().all(|v| v.is_finite()))
                .ok_or(ImputeError::SingularFit)?;
            (b, true)
        }
    };

    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let intercept = y_mean - coefficients.iter().zip(&x_means).map(|(b, m)| b * m).sum::<f64>();
    let mut model = RegressionModel {
        target: target.to_string(),
        predictors: predictors.iter().map(|p| p.as_ref().to_string()).collect(),
        intercept,
        coefficients,
        r_squared: 0.0,
        n_obs: rows.len(),
        ridge_applied,
    };

    let (mut ssr, mut sst) = (0.0, 0.0);
    for (i, &r) in rows.iter().enumerate() {
        let xs: Vec<f64> = x_cells.iter().map(|c| c[r].unwrap()).collect();
        let resid = ys[i] - model.predict(&xs);
        ssr += resid * resid;
        sst += (ys[i] - y_mean) * (ys[i] - y_mean);
    }
    model.r_squared = if sst > 0.0 { (1.0 - ssr / sst).clamp(0.0, 1.0) } else { 1.0 };
    Ok(model)
}

/// Regression substitution: each missing target cell gets the OLS
/// prediction. Missing predictors are replaced by their observed means
/// first under [`Fallback::MeanMode`].
pub fn impute_regression<S: AsRef<str>>(
    table: &Table,
    target: &str,
    predictors: &[S],
    fallback: Fallback,
) -> Result<ImputationResult, ImputeError> {
    let model = fit_ols(table, target, predictors)?;
    let x_cells = numeric_predictors(table, predictors)?;
    let x_means: Vec<f64> = x_cells
        .iter()
        .map(|c| stats::mean(&c.iter().flatten().copied().collect::<Vec<_>>()))
        .collect();
    let y_cells = table.numeric(target)?;

    let mut out = ResultBuilder::new(table, target, Strategy::Regression)?;
    let mut unimputable = Vec::new();
    for row in (0..table.n_rows()).filter(|&r| y_cells[r].is_none()) {
        let mut substituted = false;
        let xs: Vec<f64> = x_cells
            .iter()
            .zip(&x_means)
            .map(|(c, &m)| {
                c[row].unwrap_or_else(|| {
                    substituted = true;
                    m
                })
            })
            .collect();
        if substituted && fallback == Fallback::Error {
            unimputable.push(row);
            continue;
        }
        out.fill(row, Value::Num(model.predict(&xs)), substituted);
    }
    if !unimputable.is_empty() {
        return Err(ImputeError::UnimputableRows {
            column: target.to_string(),
            rows: unimputable,
        });
    }
    let config = StrategyConfig {
        fallback,
        ..StrategyConfig::new(Strategy::Regression).with_predictors(predictors)
    };
    Ok(out.finish(config))
}
