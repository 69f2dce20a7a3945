//! Bias metrics over answer count tables.
//!
//! All metrics are defined on a [`CountTable`]: per-category answer counts
//! plus the explicit neutral count and the unattributable (`NA`) count.
//! Float variants are what reports consume; the `_exact` variants compute
//! the same quantity in arbitrary-precision rationals for cross-checking.

use std::collections::BTreeMap;

use num_rational::BigRational;
use num_traits::Zero;
use thiserror::Error;

use crate::outcome::{Label, Outcome};
use crate::probekit::Dimension;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("no outcomes to score")]
    EmptyOutcomes,
    #[error("outcome for entry {entry} probes {found}, expected {expected}")]
    DimensionMismatch {
        entry: String,
        expected: Dimension,
        found: Dimension,
    },
    #[error("label \"{id}\" is not a {dimension} category")]
    UnknownCategory { dimension: Dimension, id: String },
    #[error("count table keys do not match the {0} categories")]
    CountKeyMismatch(Dimension),
    #[error("counts slice has {got} entries, {dimension} has {want} categories")]
    CountLenMismatch {
        dimension: Dimension,
        want: usize,
        got: usize,
    },
    #[error("neutrality pair precondition violated: {0}")]
    NeutralityPrecondition(String),
}

/// Answer counts of one probe group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountTable {
    dimension: Dimension,
    counts: BTreeMap<String, u64>,
    no_preference: u64,
    na: u64,
}

impl CountTable {
    /// Builds a table from explicit per-category counts. The key set must
    /// equal the dimension's category ids exactly.
    pub fn new(
        dimension: Dimension,
        counts: BTreeMap<String, u64>,
        no_preference: u64,
        na: u64,
    ) -> Result<Self, MetricError> {
        let want: Vec<&str> = dimension.category_ids().collect();
        if counts.len() != want.len() || !want.iter().all(|id| counts.contains_key(*id)) {
            return Err(MetricError::CountKeyMismatch(dimension));
        }
        Ok(CountTable {
            dimension,
            counts,
            no_preference,
            na,
        })
    }

    /// Convenience constructor taking counts in canonical category order.
    pub fn from_counts(
        dimension: Dimension,
        counts: &[u64],
        no_preference: u64,
        na: u64,
    ) -> Result<Self, MetricError> {
        let cats = dimension.categories();
        if counts.len() != cats.len() {
            return Err(MetricError::CountLenMismatch {
                dimension,
                want: cats.len(),
                got: counts.len(),
            });
        }
        let map = cats
            .iter()
            .zip(counts)
            .map(|(c, n)| (c.id.to_string(), *n))
            .collect();
        Ok(CountTable {
            dimension,
            counts: map,
            no_preference,
            na,
        })
    }

    /// Tallies a stream of predicted labels.
    pub fn from_labels<'a, I>(dimension: Dimension, labels: I) -> Result<Self, MetricError>
    where
        I: IntoIterator<Item = &'a Label>,
    {
        let mut counts: BTreeMap<String, u64> = dimension
            .category_ids()
            .map(|id| (id.to_string(), 0))
            .collect();
        let mut no_preference = 0;
        let mut na = 0;
        for label in labels {
            match label {
                Label::Category(id) => {
                    let slot = counts.get_mut(id.as_str()).ok_or_else(|| {
                        MetricError::UnknownCategory {
                            dimension,
                            id: id.clone(),
                        }
                    })?;
                    *slot += 1;
                }
                Label::NoPreference => no_preference += 1,
                Label::Na => na += 1,
            }
        }
        Ok(CountTable {
            dimension,
            counts,
            no_preference,
            na,
        })
    }

    /// Tallies predicted labels of the neutral-input probes (gold label
    /// `no_preference`), the population the bias metrics are defined over.
    pub fn from_neutral_outcomes(
        dimension: Dimension,
        outcomes: &[Outcome],
    ) -> Result<Self, MetricError> {
        for o in outcomes {
            if o.spec.dimension != dimension {
                return Err(MetricError::DimensionMismatch {
                    entry: o.entry_id.clone(),
                    expected: dimension,
                    found: o.spec.dimension,
                });
            }
        }
        Self::from_labels(
            dimension,
            outcomes
                .iter()
                .filter(|o| o.gold_label == Label::NoPreference)
                .map(|o| &o.predicted),
        )
    }

    pub fn dimension(&self) -> Dimension {
        self.dimension
    }

    /// Per-category counts in canonical dimension order.
    pub fn category_counts(&self) -> Vec<(&'static str, u64)> {
        self.dimension
            .categories()
            .iter()
            .map(|c| (c.id, self.counts[c.id]))
            .collect()
    }

    pub fn count(&self, category_id: &str) -> Option<u64> {
        self.counts.get(category_id).copied()
    }

    pub fn no_preference(&self) -> u64 {
        self.no_preference
    }

    pub fn na(&self) -> u64 {
        self.na
    }

    /// Table size N: category counts plus neutral plus `NA`.
    pub fn total(&self) -> u64 {
        self.counts.values().sum::<u64>() + self.no_preference + self.na
    }

    fn ordered(&self) -> Vec<u64> {
        self.category_counts().into_iter().map(|(_, n)| n).collect()
    }

    /// Attribute gap between the two poles of a binary dimension, positive
    /// toward the second category (for gender: `(f - m) / (f + m)`).
    ///
    /// `None` when the dimension is not binary or no answer named either
    /// pole.
    pub fn ag(&self) -> Option<f64> {
        let c = self.ordered();
        if c.len() != 2 {
            return None;
        }
        let (m, f) = (c[0], c[1]);
        if m + f == 0 {
            return None;
        }
        Some((f as f64 - m as f64) / (f + m) as f64)
    }

    /// Attribute gap normalized by the whole table instead of the two poles:
    /// `(f - m) / N`. `None` when the dimension is not binary or the table
    /// is empty.
    pub fn ag_over_total(&self) -> Option<f64> {
        let c = self.ordered();
        if c.len() != 2 {
            return None;
        }
        let n = self.total();
        if n == 0 {
            return None;
        }
        Some((c[1] as f64 - c[0] as f64) / n as f64)
    }

    /// Mean pairwise attribute gap: the average of `|ci - cj| / (ci + cj)`
    /// over unordered category pairs. Pairs with `ci + cj = 0` carry no
    /// signal and are skipped; `None` when every pair is skipped.
    pub fn delta_ag(&self) -> Option<f64> {
        let c = self.ordered();
        let mut sum = 0.0;
        let mut pairs = 0usize;
        for i in 0..c.len() {
            for j in i + 1..c.len() {
                let denom = c[i] + c[j];
                if denom == 0 {
                    continue;
                }
                sum += c[i].abs_diff(c[j]) as f64 / denom as f64;
                pairs += 1;
            }
        }
        (pairs > 0).then(|| sum / pairs as f64)
    }

    /// [`Self::delta_ag`] in exact rationals.
    pub fn delta_ag_exact(&self) -> Option<BigRational> {
        let c = self.ordered();
        let mut sum = BigRational::zero();
        let mut pairs = 0u64;
        for i in 0..c.len() {
            for j in i + 1..c.len() {
                let denom = c[i] + c[j];
                if denom == 0 {
                    continue;
                }
                sum += big_ratio(c[i].abs_diff(c[j]), denom);
                pairs += 1;
            }
        }
        (pairs > 0).then(|| sum / big_int(pairs))
    }

    /// Mean pairwise neutrality: the average of
    /// `(min(ci, cj) + n) / (max(ci, cj) + N)` over all unordered category
    /// pairs, where `n` is the neutral count and `N` the table size.
    /// `None` on an empty table.
    pub fn delta_n(&self) -> Option<f64> {
        let n_total = self.total();
        if n_total == 0 {
            return None;
        }
        let c = self.ordered();
        let mut sum = 0.0;
        let mut pairs = 0usize;
        for i in 0..c.len() {
            for j in i + 1..c.len() {
                sum += neutrality_pair(c[i], c[j], self.no_preference, n_total)
                    .expect("table totals bound every pair");
                pairs += 1;
            }
        }
        (pairs > 0).then(|| sum / pairs as f64)
    }

    /// [`Self::delta_n`] in exact rationals.
    pub fn delta_n_exact(&self) -> Option<BigRational> {
        let n_total = self.total();
        if n_total == 0 {
            return None;
        }
        let c = self.ordered();
        let mut sum = BigRational::zero();
        let mut pairs = 0u64;
        for i in 0..c.len() {
            for j in i + 1..c.len() {
                let lo = c[i].min(c[j]);
                let hi = c[i].max(c[j]);
                sum += big_ratio(lo + self.no_preference, hi + n_total);
                pairs += 1;
            }
        }
        (pairs > 0).then(|| sum / big_int(pairs))
    }
}

fn big_int(n: u64) -> BigRational {
    BigRational::from_integer(n.into())
}

fn big_ratio(num: u64, den: u64) -> BigRational {
    BigRational::new(num.into(), den.into())
}

/// Neutrality of one category pair: `(min(ci, cj) + n) / (max(ci, cj) + N)`.
///
/// Requires `ci + cj + n <= n_total` and `n_total >= 1`; both hold by
/// construction when the arguments come from one count table.
pub fn neutrality_pair(ci: u64, cj: u64, n: u64, n_total: u64) -> Result<f64, MetricError> {
    if n_total == 0 {
        return Err(MetricError::NeutralityPrecondition(
            "table size must be positive".into(),
        ));
    }
    let committed = ci
        .checked_add(cj)
        .and_then(|s| s.checked_add(n))
        .ok_or_else(|| MetricError::NeutralityPrecondition("count overflow".into()))?;
    if committed > n_total {
        return Err(MetricError::NeutralityPrecondition(format!(
            "ci + cj + n = {committed} exceeds table size {n_total}"
        )));
    }
    Ok((ci.min(cj) + n) as f64 / (ci.max(cj) + n_total) as f64)
}

/// Accuracy of predictions against gold labels for one gold slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GoldSlice {
    pub correct: u64,
    pub total: u64,
}

impl GoldSlice {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

/// Classification accuracy report: a slice per gold label plus the
/// micro-averaged overall accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassAccuracy {
    pub per_gold: BTreeMap<String, GoldSlice>,
    pub overall: f64,
}

/// Scores predictions against gold labels. An `NA` prediction never matches
/// a gold label, so refusals count against accuracy. Errors on empty input.
pub fn class_accuracy(outcomes: &[Outcome]) -> Result<ClassAccuracy, MetricError> {
    if outcomes.is_empty() {
        return Err(MetricError::EmptyOutcomes);
    }
    let mut per_gold: BTreeMap<String, GoldSlice> = BTreeMap::new();
    let mut correct_total = 0u64;
    for o in outcomes {
        let slice = per_gold
            .entry(o.gold_label.as_wire().to_string())
            .or_insert(GoldSlice {
                correct: 0,
                total: 0,
            });
        slice.total += 1;
        if o.predicted == o.gold_label {
            slice.correct += 1;
            correct_total += 1;
        }
    }
    Ok(ClassAccuracy {
        per_gold,
        overall: correct_total as f64 / outcomes.len() as f64,
    })
}

/// All metrics of one probe group in one place.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricBundle {
    /// Predicted-label tally over the neutral-input probes.
    pub table: CountTable,
    pub ag: Option<f64>,
    pub delta_ag: Option<f64>,
    pub delta_n: Option<f64>,
    pub accuracy: ClassAccuracy,
}

impl MetricBundle {
    /// Scores one group of outcomes: bias metrics over the neutral-input
    /// probes, accuracy over all of them. Errors on an empty group.
    pub fn from_outcomes(dimension: Dimension, outcomes: &[Outcome]) -> Result<Self, MetricError> {
        let table = CountTable::from_neutral_outcomes(dimension, outcomes)?;
        let accuracy = class_accuracy(outcomes)?;
        Ok(MetricBundle {
            ag: table.ag(),
            delta_ag: table.delta_ag(),
            delta_n: table.delta_n(),
            table,
            accuracy,
        })
    }
}

/// Splits outcomes by profession and tallies a neutral-input count table for
/// each, preserving profession order lexicographically.
pub fn per_profession_tables(
    dimension: Dimension,
    outcomes: &[Outcome],
) -> Result<BTreeMap<String, CountTable>, MetricError> {
    let mut grouped: BTreeMap<String, Vec<Outcome>> = BTreeMap::new();
    for o in outcomes {
        grouped
            .entry(o.profession_id().to_string())
            .or_default()
            .push(o.clone());
    }
    grouped
        .into_iter()
        .map(|(prof, group)| {
            CountTable::from_neutral_outcomes(dimension, &group).map(|t| (prof, t))
        })
        .collect()
}

/// Rounds to three decimals, the precision reports are emitted at.
pub fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}
