//! Donor accounting for the hot-deck family.
//!
//! For a target column with respondents `A_R` and nonrespondents `A_m`:
//!
//! * `d_ij` counts how many times respondent `i` donated to recipient `j`;
//! * `w*_ij` is the fraction of recipient `j`'s weight carried by donor `i`;
//! * the imputed value is `Y_j = sum_i d_ij * w*_ij * y_i`.
//!
//! Single-donor hot deck is the case `d_ij = 1, w*_ij = 1`; a k-donor
//! imputer records `k` shares of `1/k`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ImputeError;
use crate::tabular::{Column, ColumnKind};

/// Allowed deviation of `sum_i w*_ij` from one.
pub const FRACTION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DonorShare {
    pub donor: usize,
    /// `d_ij`
    pub count: u32,
    /// `w*_ij`
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DonorLedger {
    pub target_column: String,
    /// Donor indices refer to rows of an external reference table (cold deck).
    pub external: bool,
    /// Recipient row -> shares sorted by donor row.
    allocations: BTreeMap<usize, Vec<DonorShare>>,
    /// Design weights `w_j`; rows not listed weigh 1.0.
    base_weights: BTreeMap<usize, f64>,
}

impl DonorLedger {
    pub fn new(target_column: impl Into<String>) -> Self {
        DonorLedger {
            target_column: target_column.into(),
            external: false,
            allocations: BTreeMap::new(),
            base_weights: BTreeMap::new(),
        }
    }

    /// Adds one use of `donor` for `recipient` (`d_ij += 1`) and sets its
    /// fraction.
    pub fn record(&mut self, donor: usize, recipient: usize, fraction: f64) {
        let shares = self.allocations.entry(recipient).or_default();
        match shares.binary_search_by_key(&donor, |s| s.donor) {
            Ok(pos) => {
                shares[pos].count += 1;
                shares[pos].fraction = fraction;
            }
            Err(pos) => shares.insert(
                pos,
                DonorShare {
                    donor,
                    count: 1,
                    fraction,
                },
            ),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.allocations.is_empty()
    }

    pub fn recipients(&self) -> impl Iterator<Item = usize> + '_ {
        self.allocations.keys().copied()
    }

    pub fn shares(&self, recipient: usize) -> &[DonorShare] {
        self.allocations.get(&recipient).map_or(&[], Vec::as_slice)
    }

    /// `d_ij`; zero when `i` never donated to `j`.
    pub fn usage_count(&self, donor: usize, recipient: usize) -> u32 {
        self.find(donor, recipient).map_or(0, |s| s.count)
    }

    /// `w*_ij`; zero when `i` never donated to `j`.
    pub fn weight_fraction(&self, donor: usize, recipient: usize) -> f64 {
        self.find(donor, recipient).map_or(0.0, |s| s.fraction)
    }

    fn find(&self, donor: usize, recipient: usize) -> Option<&DonorShare> {
        self.shares(recipient).iter().find(|s| s.donor == donor)
    }

    /// Total uses of a donor across recipients, `sum_j d_ij`.
    pub fn donor_usage(&self, donor: usize) -> u32 {
        self.allocations
            .values()
            .flatten()
            .filter(|s| s.donor == donor)
            .map(|s| s.count)
            .sum()
    }

    /// Every `(donor, recipient, share)` in recipient-then-donor order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, &DonorShare)> + '_ {
        self.allocations
            .iter()
            .flat_map(|(&j, shares)| shares.iter().map(move |s| (s.donor, j, s)))
    }

    pub fn fraction_sum(&self, recipient: usize) -> f64 {
        self.shares(recipient).iter().map(|s| s.fraction).sum()
    }

    pub fn set_base_weight(&mut self, row: usize, weight: f64) {
        self.base_weights.insert(row, weight);
    }

    pub fn base_weight(&self, row: usize) -> f64 {
        self.base_weights.get(&row).copied().unwrap_or(1.0)
    }

    /// Design weight a donor absorbs from the recipients it serves,
    /// `sum_j w_j * w*_ij`. Selection never reads this; it is for weighted
    /// estimation downstream.
    pub fn transferred_weight(&self, donor: usize) -> f64 {
        self.allocations
            .iter()
            .flat_map(|(&j, shares)| shares.iter().map(move |s| (j, s)))
            .filter(|(_, s)| s.donor == donor)
            .map(|(j, s)| self.base_weight(j) * s.fraction)
            .sum()
    }

    /// Checks that every recipient's fractions sum to one.
    pub fn check_fractions(&self) -> Result<(), ImputeError> {
        for &j in self.allocations.keys() {
            let sum = self.fraction_sum(j);
            if (sum - 1.0).abs() > FRACTION_TOLERANCE {
                return Err(ImputeError::LedgerInvariant { recipient: j, sum });
            }
        }
        Ok(())
    }

    /// Stable serialized form, for digests.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("ledger serializes")
    }
}

/// `sum d_ij * w*_ij * y_i` over the shares, in ledger order.
pub(crate) fn weighted_value(shares: &[DonorShare], mut value_of: impl FnMut(usize) -> f64) -> f64 {
    shares
        .iter()
        .fold(0.0, |acc, s| acc + f64::from(s.count) * s.fraction * value_of(s.donor))
}

/// Recomputes every recipient's value from the ledger.
///
/// `donor_values` is the column the donor indices refer to: the target
/// column itself, or the reference column for an external ledger.
pub fn aggregate_donor_weighted(
    ledger: &DonorLedger,
    donor_values: &Column,
) -> Result<BTreeMap<usize, f64>, ImputeError> {
    let cells = match donor_values.kind() {
        ColumnKind::Numeric => donor_values.numeric_cells().expect("numeric column"),
        ColumnKind::Nominal => {
            return Err(ImputeError::NominalAggregation {
                column: donor_values.name.clone(),
            })
        }
    };
    ledger.check_fractions()?;
    let mut out = BTreeMap::new();
    for (&j, shares) in &ledger.allocations {
        if let Some(s) = shares.iter().find(|s| cells.get(s.donor).copied().flatten().is_none()) {
            return Err(ImputeError::MissingDonorValue { donor: s.donor });
        }
        out.insert(j, weighted_value(shares, |i| cells[i].expect("checked above")));
    }
    Ok(out)
}
