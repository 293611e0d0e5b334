//! Leakage-adjusted simulatability.
//!
//! The per-example effect of an explanation is 𝟙[ŷ|x,ê] − 𝟙[ŷ|x] ∈ {−1, 0, 1}.
//! LAS averages that effect separately within the nonleaking (k = 0) and leaking
//! (k = 1) groups and then takes the unweighted mean of the two group averages, so
//! the larger group does not dominate.
//!
//! All accumulation is over integer counts, so results are exact and independent
//! of record order or how the batch is sharded.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::leakage::{assign_bins, LeakageAssignment, LeakageError};
use crate::records::{PredictionRecord, RecordBatch, RecordError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LasError {
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Leakage(#[from] LeakageError),
    #[error("empty batch")]
    EmptyBatch,
    #[error("leakage assignments cover {assignments} records but the batch has {records}")]
    CoverageMismatch { records: usize, assignments: usize },
    #[error("leakage assignment {index} is for `{found}`, expected `{expected}`")]
    IdMismatch {
        index: usize,
        expected: String,
        found: String,
    },
    #[error(
        "the {} group is empty; only the {} group is defined (LAS_{} = {other_value})",
        if *.empty_leaking { "leaking" } else { "nonleaking" },
        if *.empty_leaking { "nonleaking" } else { "leaking" },
        if *.empty_leaking { 0 } else { 1 }
    )]
    EmptyGroup {
        empty_leaking: bool,
        other_value: f64,
        other_n: u64,
    },
    #[error("bin index {index} out of range for {n_bins} bins")]
    BinOutOfRange { index: usize, n_bins: usize },
}

/// 𝟙[ŷ|x,ê] − 𝟙[ŷ|x]
pub fn example_las(record: &PredictionRecord) -> Result<i8, LasError> {
    let full = record.full_correct()?;
    let input = record.input_only_correct()?;
    Ok(i8::from(full) - i8::from(input))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Scale {
    #[serde(rename = "unit")]
    Unit,
    #[default]
    #[serde(rename = "pp")]
    PercentagePoints,
}

impl Scale {
    pub fn factor(self) -> f64 {
        match self {
            Scale::Unit => 1.0,
            Scale::PercentagePoints => 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LasReport {
    pub las0: f64,
    pub las1: f64,
    pub las: f64,
    pub n0: u64,
    pub n1: u64,
    pub acc_full: f64,
    pub acc_input_only: f64,
    /// Acc(ŷ|ê), the leakage rate.
    pub acc_expl_only: f64,
    pub scale: Scale,
}

impl LasReport {
    /// Rescales LAS components and accuracies. Counts are unchanged.
    pub fn in_scale(&self, scale: Scale) -> LasReport {
        let f = scale.factor() / self.scale.factor();
        LasReport {
            las0: self.las0 * f,
            las1: self.las1 * f,
            las: self.las * f,
            acc_full: self.acc_full * f,
            acc_input_only: self.acc_input_only * f,
            acc_expl_only: self.acc_expl_only * f,
            scale,
            ..*self
        }
    }

    pub fn n(&self) -> u64 {
        self.n0 + self.n1
    }
}

/// Per-example quantities LAS needs, in compact form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LasItem {
    pub full: bool,
    pub input_only: bool,
    pub expl_only: bool,
    pub leaking: bool,
}

impl LasItem {
    pub fn effect(&self) -> i8 {
        i8::from(self.full) - i8::from(self.input_only)
    }

    pub fn from_record(r: &PredictionRecord, leaking: bool) -> Result<Self, LasError> {
        Ok(Self {
            full: r.full_correct()?,
            input_only: r.input_only_correct()?,
            expl_only: r.expl_only_correct()?,
            leaking,
        })
    }
}

/// Pairs records with their leakage assignment, checking coverage and ids.
pub fn las_items(
    batch: &RecordBatch,
    leakage: &[LeakageAssignment],
) -> Result<Vec<LasItem>, LasError> {
    if batch.records.len() != leakage.len() {
        return Err(LasError::CoverageMismatch {
            records: batch.records.len(),
            assignments: leakage.len(),
        });
    }
    batch
        .records
        .iter()
        .zip(leakage)
        .enumerate()
        .map(|(index, (r, a))| {
            if r.example_id != a.example_id {
                return Err(LasError::IdMismatch {
                    index,
                    expected: r.example_id.clone(),
                    found: a.example_id.clone(),
                });
            }
            LasItem::from_record(r, a.k)
        })
        .collect()
}

/// Single-pass accumulator. Partial accumulators from disjoint shards combine with
/// [`LasAccumulator::merge`]; the combination is exact.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LasAccumulator {
    effect_sum: [i64; 2],
    count: [u64; 2],
    full: u64,
    input_only: u64,
    expl_only: u64,
}

impl LasAccumulator {
    pub fn push(&mut self, item: &LasItem) {
        let g = usize::from(item.leaking);
        self.effect_sum[g] += i64::from(item.effect());
        self.count[g] += 1;
        self.full += u64::from(item.full);
        self.input_only += u64::from(item.input_only);
        self.expl_only += u64::from(item.expl_only);
    }

    pub fn merge(mut self, other: LasAccumulator) -> LasAccumulator {
        for g in 0..2 {
            self.effect_sum[g] += other.effect_sum[g];
            self.count[g] += other.count[g];
        }
        self.full += other.full;
        self.input_only += other.input_only;
        self.expl_only += other.expl_only;
        self
    }

    pub fn n(&self) -> u64 {
        self.count[0] + self.count[1]
    }

    /// Finished report in unit scale.
    pub fn finish(&self) -> Result<LasReport, LasError> {
        let n = self.n();
        if n == 0 {
            return Err(LasError::EmptyBatch);
        }
        let mean = |g: usize| self.effect_sum[g] as f64 / self.count[g] as f64;
        if self.count[0] == 0 || self.count[1] == 0 {
            let empty_leaking = self.count[1] == 0;
            let other = usize::from(!empty_leaking);
            return Err(LasError::EmptyGroup {
                empty_leaking,
                other_value: mean(other),
                other_n: self.count[other],
            });
        }
        let las0 = mean(0);
        let las1 = mean(1);
        Ok(LasReport {
            las0,
            las1,
            las: (las0 + las1) / 2.0,
            n0: self.count[0],
            n1: self.count[1],
            acc_full: self.full as f64 / n as f64,
            acc_input_only: self.input_only as f64 / n as f64,
            acc_expl_only: self.expl_only as f64 / n as f64,
            scale: Scale::Unit,
        })
    }
}

impl<'a> FromIterator<&'a LasItem> for LasAccumulator {
    fn from_iter<I: IntoIterator<Item = &'a LasItem>>(iter: I) -> Self {
        let mut acc = LasAccumulator::default();
        for item in iter {
            acc.push(item);
        }
        acc
    }
}

/// LAS from precomputed items, unit scale.
pub fn las_from_items(items: &[LasItem]) -> Result<LasReport, LasError> {
    items.iter().collect::<LasAccumulator>().finish()
}

/// Same as [`las_from_items`], folded in parallel over rayon's current pool.
pub fn las_from_items_par(items: &[LasItem]) -> Result<LasReport, LasError> {
    items
        .par_iter()
        .fold(LasAccumulator::default, |mut acc, it| {
            acc.push(it);
            acc
        })
        .reduce(LasAccumulator::default, LasAccumulator::merge)
        .finish()
}

/// Two-group LAS over a batch, in unit scale.
pub fn compute_las(
    batch: &RecordBatch,
    leakage: &[LeakageAssignment],
) -> Result<LasReport, LasError> {
    if batch.is_empty() {
        return Err(LasError::EmptyBatch);
    }
    las_from_items(&las_items(batch, leakage)?)
}

/// Value of the generalized LAS over evenly spaced leakage bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinnedLas {
    pub value: f64,
    pub nonempty_bins: usize,
}

/// Mean over non-empty bins of the per-bin mean example effect. Empty bins are
/// skipped rather than imputed.
pub fn binned_las_from_effects(
    effects: &[i8],
    bins: &[usize],
    n_bins: usize,
) -> Result<BinnedLas, LasError> {
    if effects.is_empty() {
        return Err(LasError::EmptyBatch);
    }
    if effects.len() != bins.len() {
        return Err(LasError::CoverageMismatch {
            records: effects.len(),
            assignments: bins.len(),
        });
    }
    let mut sums = vec![0i64; n_bins];
    let mut counts = vec![0u64; n_bins];
    for (&e, &b) in effects.iter().zip(bins) {
        if b >= n_bins {
            return Err(LasError::BinOutOfRange { index: b, n_bins });
        }
        sums[b] += i64::from(e);
        counts[b] += 1;
    }
    let mut total = 0.0;
    let mut nonempty = 0;
    for (s, c) in sums.iter().zip(&counts) {
        if *c > 0 {
            total += *s as f64 / *c as f64;
            nonempty += 1;
        }
    }
    Ok(BinnedLas {
        value: total / nonempty as f64,
        nonempty_bins: nonempty,
    })
}

pub fn binned_las(
    batch: &RecordBatch,
    bins: &[usize],
    n_bins: usize,
) -> Result<BinnedLas, LasError> {
    let effects = batch
        .records
        .iter()
        .map(example_las)
        .collect::<Result<Vec<_>, _>>()?;
    binned_las_from_effects(&effects, bins, n_bins)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityEntry {
    pub n_bins: usize,
    pub las_value: f64,
    pub n_nonempty_bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCurve {
    pub entries: Vec<SensitivityEntry>,
}

impl SensitivityCurve {
    /// max − min of the LAS values across bin counts.
    pub fn spread(&self) -> f64 {
        let (lo, hi) = self
            .entries
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
                (lo.min(e.las_value), hi.max(e.las_value))
            });
        if self.entries.is_empty() {
            0.0
        } else {
            hi - lo
        }
    }
}

/// Binned LAS at every bin count in `bin_range` (inclusive), unit scale.
pub fn sensitivity_sweep(
    batch: &RecordBatch,
    leak_probs: &[f64],
    bin_range: std::ops::RangeInclusive<usize>,
) -> Result<SensitivityCurve, LasError> {
    let effects = batch
        .records
        .iter()
        .map(example_las)
        .collect::<Result<Vec<_>, _>>()?;
    let entries = bin_range
        .map(|n_bins| {
            let bins = assign_bins(leak_probs, n_bins)?;
            let b = binned_las_from_effects(&effects, &bins, n_bins)?;
            Ok(SensitivityEntry {
                n_bins,
                las_value: b.value,
                n_nonempty_bins: b.nonempty_bins,
            })
        })
        .collect::<Result<Vec<_>, LasError>>()?;
    Ok(SensitivityCurve { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::leakage::binary_assignments;
    use proptest::prelude::*;

    fn batch_from(ks: &[bool], full: &[bool], input: &[bool]) -> RecordBatch {
        let records = ks
            .iter()
            .zip(full)
            .zip(input)
            .enumerate()
            .map(|(i, ((&k, &f), &x))| {
                PredictionRecord::new(format!("e{i}"), "h", "d", vec!["a".into(), "b".into()], 0)
                    .with_indicators(f, x, k)
            })
            .collect();
        RecordBatch::new(records, "test")
    }

    #[test]
    fn example_las_values() {
        let b = batch_from(&[true, false, true], &[true, false, true], &[false, true, true]);
        let v: Vec<i8> = b.records.iter().map(|r| example_las(r).unwrap()).collect();
        assert_eq!(v, vec![1, -1, 0]);
    }

    #[test]
    fn hand_example() {
        let b = batch_from(
            &[true, true, false, false],
            &[true, true, true, false],
            &[true, false, false, false],
        );
        let r = compute_las(&b, &binary_assignments(&b).unwrap()).unwrap();
        assert_eq!((r.las0, r.las1, r.las), (0.5, 0.5, 0.5));
        assert_eq!((r.n0, r.n1), (2, 2));
        assert_eq!(r.acc_full, 0.75);
        assert_eq!(r.acc_expl_only, 0.5);
        let pp = r.in_scale(Scale::PercentagePoints);
        assert_eq!(pp.las, 50.0);
        assert_eq!(pp.in_scale(Scale::Unit).las, 0.5);
    }

    #[test]
    fn identical_indicators_give_zero() {
        let b = batch_from(&[true, false, true], &[true, false, true], &[true, false, true]);
        let r = compute_las(&b, &binary_assignments(&b).unwrap()).unwrap();
        assert_eq!((r.las0, r.las1, r.las), (0.0, 0.0, 0.0));
    }

    #[test]
    fn empty_group_is_error_with_other_value() {
        let b = batch_from(&[true, true], &[true, true], &[false, true]);
        match compute_las(&b, &binary_assignments(&b).unwrap()) {
            Err(LasError::EmptyGroup {
                empty_leaking,
                other_value,
                other_n,
            }) => {
                assert!(!empty_leaking);
                assert_eq!(other_value, 0.5);
                assert_eq!(other_n, 2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mismatched_assignments() {
        let b = batch_from(&[true, false], &[true, true], &[false, true]);
        let mut a = binary_assignments(&b).unwrap();
        a[1].example_id = "zzz".into();
        assert!(matches!(compute_las(&b, &a), Err(LasError::IdMismatch { index: 1, .. })));
        a.pop();
        assert!(matches!(
            compute_las(&b, &a),
            Err(LasError::CoverageMismatch { .. })
        ));
    }

    #[test]
    fn binned_two_bins_equals_two_group() {
        let b = batch_from(
            &[true, true, false, false, true],
            &[true, true, true, false, false],
            &[true, false, false, false, true],
        );
        let a = binary_assignments(&b).unwrap();
        let bins: Vec<usize> = a.iter().map(|x| usize::from(x.k)).collect();
        let two = compute_las(&b, &a).unwrap().las;
        assert_eq!(binned_las(&b, &bins, 2).unwrap().value, two);
    }

    #[test]
    fn binned_single_bin_is_plain_mean() {
        let b = batch_from(&[true, false, false], &[true, true, false], &[false, false, true]);
        let r = binned_las(&b, &[3, 3, 3], 10).unwrap();
        assert_eq!(r.nonempty_bins, 1);
        assert_eq!(r.value, 1.0 / 3.0);
    }

    #[test]
    fn sweep_constant_effect_is_flat() {
        let n = 50;
        let b = batch_from(&vec![true; n], &vec![true; n], &vec![false; n]);
        let probs: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let c = sensitivity_sweep(&b, &probs, 2..=100).unwrap();
        assert_eq!(c.entries.len(), 99);
        assert!(c.entries.iter().all(|e| e.las_value == 1.0));
        assert_eq!(c.spread(), 0.0);
        let bins2 = assign_bins(&probs, 2).unwrap();
        assert_eq!(c.entries[0].las_value, binned_las(&b, &bins2, 2).unwrap().value);
    }

    fn items_strategy() -> impl Strategy<Value = Vec<LasItem>> {
        prop::collection::vec(
            (any::<bool>(), any::<bool>(), any::<bool>()).prop_map(|(f, x, k)| LasItem {
                full: f,
                input_only: x,
                expl_only: k,
                leaking: k,
            }),
            1..200,
        )
    }

    proptest! {
        #[test]
        fn order_invariant(mut items in items_strategy(), seed in any::<u64>()) {
            let before = las_from_items(&items);
            // deterministic shuffle
            let n = items.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                items.swap(i, (s >> 33) as usize % (i + 1));
            }
            prop_assert_eq!(before, las_from_items(&items));
        }

        #[test]
        fn sharded_fold_matches(items in items_strategy(), shards in 1usize..16) {
            let whole = items.iter().collect::<LasAccumulator>();
            let chunk = items.len().div_ceil(shards).max(1);
            let merged = items
                .chunks(chunk)
                .map(|c| c.iter().collect::<LasAccumulator>())
                .fold(LasAccumulator::default(), LasAccumulator::merge);
            prop_assert_eq!(whole, merged);
            prop_assert_eq!(las_from_items(&items), las_from_items_par(&items));
        }

        #[test]
        fn bounded_and_leak_rate(items in items_strategy()) {
            if let Ok(r) = las_from_items(&items) {
                prop_assert!((-1.0..=1.0).contains(&r.las));
                prop_assert_eq!(r.las, (r.las0 + r.las1) / 2.0);
                prop_assert_eq!(r.acc_expl_only, r.n1 as f64 / (r.n0 + r.n1) as f64);
            }
        }

        #[test]
        fn adding_zero_effect_shrinks_group_mean(items in items_strategy(), leaking in any::<bool>()) {
            let before = items.iter().collect::<LasAccumulator>();
            let g = usize::from(leaking);
            prop_assume!(before.count[g] > 0);
            let mut after = before;
            after.push(&LasItem { full: true, input_only: true, expl_only: leaking, leaking });
            let m0 = before.effect_sum[g] as f64 / before.count[g] as f64;
            let m1 = after.effect_sum[g] as f64 / after.count[g] as f64;
            let expected = m0 * before.count[g] as f64 / (before.count[g] + 1) as f64;
            prop_assert!((m1 - expected).abs() < 1e-12);
            prop_assert!(m1.abs() <= m0.abs());
        }
    }
}
