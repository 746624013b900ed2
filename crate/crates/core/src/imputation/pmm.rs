//! Predictive mean matching hot deck.
//!
//! 1. Fit OLS of the target on the predictors over complete cases.
//! 2. Compute the predicted mean for every donor and every recipient.
//! 3. Each recipient takes the donor whose predicted mean is closest in
//!    absolute difference, ties to the lower row index.
//! 4. The recipient receives the donor's *observed* value; the ledger
//!    records `d_ij += 1, w*_ij = 1`.
//! 5. Recipients the model cannot serve (missing predictors, failed fit)
//!    fall back to mean substitution under [`Fallback::MeanMode`], flagged
//!    in the log.

use super::regression::{complete_rows, fit_ols, numeric_predictors};
use super::{
    expect_kind, DonorRef, Fallback, ImputationResult, ImputeError, ResultBuilder, Strategy,
    StrategyConfig,
};
use crate::stats;
use crate::tabular::{ColumnKind, Table, Value};

/// Index into `sorted` (ascending by `(yhat, row)`) of the nearest donor.
fn match_donor(sorted: &[(f64, usize)], yhat: f64) -> usize {
    let p = sorted.partition_point(|&(d, _)| d < yhat);
    let dist = |k: usize| (yhat - sorted[k].0).abs();
    let best = match (p.checked_sub(1), (p < sorted.len()).then_some(p)) {
        (Some(l), Some(r)) => dist(l).min(dist(r)),
        (Some(l), None) => dist(l),
        (None, Some(r)) => dist(r),
        (None, None) => unreachable!("donor pool is nonempty"),
    };
    // Distance is monotone moving away from p, so every donor at the best
    // distance lies in one contiguous run around it.
    let mut pick: Option<usize> = None;
    let mut consider = |k: usize| {
        if pick.is_none_or(|c| sorted[k].1 < sorted[c].1) {
            pick = Some(k);
        }
    };
    let mut k = p;
    while k < sorted.len() && dist(k) == best {
        consider(k);
        k += 1;
    }
    let mut k = p;
    while k > 0 && dist(k - 1) == best {
        consider(k - 1);
        k -= 1;
    }
    pick.expect("at least one donor at the best distance")
}

pub fn impute_pmm<S: AsRef<str>>(
    table: &Table,
    target: &str,
    predictors: &[S],
    fallback: Fallback,
) -> Result<ImputationResult, ImputeError> {
    expect_kind(table, target, ColumnKind::Numeric)?;
    let y_cells = table.numeric(target)?;
    let x_cells = numeric_predictors(table, predictors)?;
    let config = StrategyConfig {
        fallback,
        ..StrategyConfig::new(Strategy::Pmm).with_predictors(predictors)
    };
    let mut out = ResultBuilder::new(table, target, Strategy::Pmm)?;
    let recipients: Vec<usize> = (0..table.n_rows()).filter(|&r| y_cells[r].is_none()).collect();
    if recipients.is_empty() {
        return Ok(out.finish(config));
    }
    let observed: Vec<f64> = y_cells.iter().flatten().copied().collect();
    if observed.is_empty() {
        return Err(ImputeError::NoDonor {
            column: target.to_string(),
        });
    }
    let fallback_mean = stats::mean(&observed);

    let model = match fit_ols(table, target, predictors) {
        Ok(m) => Some(m),
        Err(ImputeError::InsufficientData { .. } | ImputeError::SingularFit)
            if fallback == Fallback::MeanMode =>
        {
            None
        }
        Err(e) => return Err(e),
    };

    let mut unimputable = Vec::new();
    match model {
        None => {
            for &j in &recipients {
                out.fill(j, Value::Num(fallback_mean), true);
            }
        }
        Some(model) => {
            let mut donors: Vec<(f64, usize)> = complete_rows(y_cells, &x_cells)
                .into_iter()
                .map(|i| {
                    let xs: Vec<f64> = x_cells.iter().map(|c| c[i].unwrap()).collect();
                    (model.predict(&xs), i)
                })
                .collect();
            donors.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for &j in &recipients {
                let xs: Option<Vec<f64>> = x_cells.iter().map(|c| c[j]).collect();
                match xs {
                    Some(xs) => {
                        let (_, i) = donors[match_donor(&donors, model.predict(&xs))];
                        let y = Value::Num(y_cells[i].expect("donors are respondents"));
                        out.fill_from_donors(j, y.clone(), vec![DonorRef { row: i, y, w: 1.0 }]);
                    }
                    None if fallback == Fallback::MeanMode => {
                        out.fill(j, Value::Num(fallback_mean), true)
                    }
                    None => unimputable.push(j),
                }
            }
        }
    }
    if !unimputable.is_empty() {
        return Err(ImputeError::UnimputableRows {
            column: target.to_string(),
            rows: unimputable,
        });
    }
    debug_assert!(out.ledger().check_fractions().is_ok());
    Ok(out.finish(config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::Column;

    fn table(x: Vec<Option<f64>>, y: Vec<Option<f64>>) -> Table {
        Table::new(vec![Column::numeric("x", x), Column::numeric("y", y)]).unwrap()
    }

    #[test]
    fn imputes_observed_donor_value_not_prediction() {
        // yhat = 2x, so yhat_4 = 8 and the nearest donor is row 2 (yhat 6).
        let t = table(
            vec![Some(1.0), Some(2.0), Some(3.0), Some(4.0)],
            vec![Some(2.0), Some(4.0), Some(6.0), None],
        );
        let r = impute_pmm(&t, "y", &["x"], Fallback::Error).unwrap();
        assert_eq!(r.table.numeric("y").unwrap()[3], Some(6.0));
        assert_eq!(r.ledgers[0].usage_count(2, 3), 1);
        assert_eq!(r.ledgers[0].weight_fraction(2, 3), 1.0);
    }

    #[test]
    fn zero_distance_match() {
        let t = table(
            vec![Some(1.0), Some(2.0), Some(3.0), Some(2.0)],
            vec![Some(2.0), Some(4.0), Some(6.0), None],
        );
        let r = impute_pmm(&t, "y", &["x"], Fallback::Error).unwrap();
        assert_eq!(r.log[0].donors[0].row, 1);
        assert_eq!(r.table.numeric("y").unwrap()[3], Some(4.0));
    }

    #[test]
    fn one_donor_two_recipients() {
        let t = table(
            vec![Some(1.0), Some(2.0), Some(3.0), Some(3.1), Some(2.9)],
            vec![Some(2.0), Some(4.0), Some(6.0), None, None],
        );
        let r = impute_pmm(&t, "y", &["x"], Fallback::Error).unwrap();
        assert_eq!(r.ledgers[0].donor_usage(2), 2);
    }

    #[test]
    fn tie_between_donors_goes_to_lower_row() {
        // Donor yhats 2 (row 1) and 6 (row 0); the recipient's yhat 4 is equidistant.
        let t = table(
            vec![Some(3.0), Some(1.0), Some(2.0)],
            vec![Some(6.0), Some(2.0), None],
        );
        let r = impute_pmm(&t, "y", &["x"], Fallback::Error).unwrap();
        assert_eq!(r.log[0].donors[0].row, 0);
    }

    #[test]
    fn match_donor_scans_equal_runs() {
        let sorted = [(1.0, 9), (3.0, 4), (3.0, 2), (5.0, 1)];
        assert_eq!(sorted[match_donor(&sorted, 4.0)].1, 1);
        assert_eq!(sorted[match_donor(&sorted, 3.0)].1, 2);
        assert_eq!(sorted[match_donor(&sorted, -10.0)].1, 9);
        assert_eq!(sorted[match_donor(&sorted, 10.0)].1, 1);
    }

    #[test]
    fn fallback_to_mean_substitution() {
        let t = table(
            vec![Some(1.0), Some(2.0), Some(3.0), None],
            vec![Some(2.0), Some(4.0), Some(6.0), None],
        );
        let r = impute_pmm(&t, "y", &["x"], Fallback::MeanMode).unwrap();
        assert_eq!(r.table.numeric("y").unwrap()[3], Some(4.0));
        assert!(r.log[0].fallback);
        assert!(r.ledgers[0].is_empty());
        assert!(matches!(
            impute_pmm(&t, "y", &["x"], Fallback::Error),
            Err(ImputeError::UnimputableRows { .. })
        ));

        // A single complete case cannot support the fit.
        let t = table(vec![Some(1.0), Some(2.0)], vec![Some(2.0), None]);
        let r = impute_pmm(&t, "y", &["x"], Fallback::MeanMode).unwrap();
        assert_eq!(r.table.numeric("y").unwrap()[1], Some(2.0));
        assert!(r.log[0].fallback);
        assert!(matches!(
            impute_pmm(&t, "y", &["x"], Fallback::Error),
            Err(ImputeError::InsufficientData { .. })
        ));
    }
}
