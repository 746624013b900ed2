use super::{DonorRef, ImputationResult, ImputeError, ResultBuilder, Strategy, StrategyConfig};
use crate::rng::{self, IMPUTATION_STREAM};
use crate::tabular::{partition, Column, Table};

/// Draws one donor per recipient, uniformly from `donor_rows`, in ascending
/// recipient order.
fn draw_donors(
    out: &mut ResultBuilder,
    recipients: &[usize],
    donor_rows: &[usize],
    donor_column: &Column,
    seed: u64,
) {
    let mut rng = rng::seeded(seed, IMPUTATION_STREAM);
    for &j in recipients {
        let i = donor_rows[rng::uniform_index(&mut rng, donor_rows.len())];
        let y = donor_column.get(i).expect("donor rows are respondents");
        out.fill_from_donors(j, y.clone(), vec![DonorRef { row: i, y, w: 1.0 }]);
    }
}

/// Random hot deck: each missing cell takes the value of a respondent drawn
/// uniformly at random from the same column.
pub fn impute_hot_deck_random(
    table: &Table,
    target: &str,
    seed: u64,
) -> Result<ImputationResult, ImputeError> {
    let part = partition(table, target)?;
    let mut out = ResultBuilder::new(table, target, Strategy::HotDeckRandom)?;
    if !part.nonrespondents.is_empty() {
        if part.respondents.is_empty() {
            return Err(ImputeError::NoDonor {
                column: target.to_string(),
            });
        }
        let column = table.column(target)?;
        draw_donors(&mut out, &part.nonrespondents, &part.respondents, column, seed);
    }
    Ok(out.finish(StrategyConfig::new(Strategy::HotDeckRandom).with_seed(seed)))
}

/// Cold deck: donors come only from `reference`, a separate source holding
/// a same-named column of the same kind. Ledger donor indices are rows of
/// the reference table.
pub fn impute_cold_deck(
    table: &Table,
    target: &str,
    reference: &Table,
    seed: u64,
) -> Result<ImputationResult, ImputeError> {
    let part = partition(table, target)?;
    let mut out = ResultBuilder::new(table, target, Strategy::ColdDeck)?.external();
    if !part.nonrespondents.is_empty() {
        let no_donor = || ImputeError::NoDonor {
            column: target.to_string(),
        };
        let source = reference.column(target).map_err(|_| no_donor())?;
        if source.kind() != table.column(target)?.kind() {
            return Err(no_donor());
        }
        let donors = partition(reference, target)?.respondents;
        if donors.is_empty() {
            return Err(no_donor());
        }
        draw_donors(&mut out, &part.nonrespondents, &donors, source, seed);
    }
    Ok(out.finish(StrategyConfig::new(Strategy::ColdDeck).with_seed(seed)))
}
