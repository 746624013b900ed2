use super::{expect_kind, ImputationResult, ImputeError, ResultBuilder, Strategy, StrategyConfig};
use crate::stats;
use crate::tabular::{mode_of, ColumnKind, Table, Value};

/// Replaces every missing cell with the observed mean.
pub fn impute_mean(table: &Table, target: &str) -> Result<ImputationResult, ImputeError> {
    expect_kind(table, target, ColumnKind::Numeric)?;
    let column = table.column(target)?;
    let observed = column.observed_f64();
    if observed.is_empty() {
        return Err(ImputeError::NoDonor {
            column: target.to_string(),
        });
    }
    let mean = stats::mean(&observed);
    let mut out = ResultBuilder::new(table, target, Strategy::Mean)?;
    for row in (0..table.n_rows()).filter(|&r| column.is_missing(r)) {
        out.fill(row, Value::Num(mean), false);
    }
    Ok(out.finish(StrategyConfig::new(Strategy::Mean)))
}

/// Replaces every missing cell with the observed mode; ties go to the
/// lexicographically smallest category.
pub fn impute_mode(table: &Table, target: &str) -> Result<ImputationResult, ImputeError> {
    expect_kind(table, target, ColumnKind::Nominal)?;
    let column = table.column(target)?;
    let cells = column.nominal_cells().expect("nominal");
    let (mode, _) = mode_of(cells.iter().flatten().map(String::as_str)).ok_or_else(|| {
        ImputeError::NoDonor {
            column: target.to_string(),
        }
    })?;
    let mut out = ResultBuilder::new(table, target, Strategy::Mode)?;
    for row in (0..table.n_rows()).filter(|&r| column.is_missing(r)) {
        out.fill(row, Value::Cat(mode.clone()), false);
    }
    Ok(out.finish(StrategyConfig::new(Strategy::Mode)))
}
