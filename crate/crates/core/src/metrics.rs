//! Accuracy and expected calibration error.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ECE_BINS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub predicted: usize,
    /// Maximum softmax probability.
    pub confidence: f64,
    pub label: usize,
}

impl PredictionRecord {
    pub fn correct(&self) -> bool {
        self.predicted == self.label
    }
}

fn non_empty(records: &[PredictionRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::EmptyDataset("no prediction records".into()));
    }
    Ok(())
}

pub fn accuracy(records: &[PredictionRecord]) -> Result<f64> {
    non_empty(records)?;
    Ok(records.iter().filter(|r| r.correct()).count() as f64 / records.len() as f64)
}

/// Accuracy restricted to each true class that occurs in `records`.
pub fn per_class_accuracy(records: &[PredictionRecord]) -> Result<BTreeMap<usize, f64>> {
    non_empty(records)?;
    let mut tally: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for r in records {
        let e = tally.entry(r.label).or_default();
        e.0 += usize::from(r.correct());
        e.1 += 1;
    }
    Ok(tally.into_iter().map(|(k, (c, n))| (k, c as f64 / n as f64)).collect())
}

/// Bin of `confidence` among `bins` equal-width right-closed bins on `[0, 1]`;
/// bin 0 also holds confidence 0.
pub fn bin_index(confidence: f64, bins: usize) -> usize {
    let scaled = confidence * bins as f64;
    (scaled.ceil() as usize).clamp(1, bins) - 1
}

/// `Σ_b (n_b / N) · |acc(b) − conf(b)|` over equal-width bins.
pub fn ece(records: &[PredictionRecord], bins: usize) -> Result<f64> {
    non_empty(records)?;
    if bins == 0 {
        return Err(Error::Config("ECE needs at least one bin".into()));
    }
    if let Some(r) = records.iter().find(|r| !(0.0..=1.0).contains(&r.confidence)) {
        return Err(Error::Config(format!("confidence {} outside [0, 1]", r.confidence)));
    }
    let mut count = vec![0usize; bins];
    let mut correct = vec![0usize; bins];
    let mut conf = vec![0.0; bins];
    for r in records {
        let b = bin_index(r.confidence, bins);
        count[b] += 1;
        correct[b] += usize::from(r.correct());
        conf[b] += r.confidence;
    }
    let n = records.len() as f64;
    Ok((0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let m = count[b] as f64;
            (m / n) * (correct[b] as f64 / m - conf[b] / m).abs()
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(confidence: f64, correct: bool) -> PredictionRecord {
        PredictionRecord {
            predicted: 0,
            confidence,
            label: usize::from(!correct),
        }
    }

    #[test]
    fn accuracy_cases() {
        let all: Vec<_> = (0..5).map(|_| rec(0.9, true)).collect();
        assert_eq!(accuracy(&all).unwrap(), 1.0);
        let alt: Vec<_> = (0..10).map(|i| rec(0.9, i % 2 == 0)).collect();
        assert_eq!(accuracy(&alt).unwrap(), 0.5);
        assert!(accuracy(&[]).is_err());
    }

    #[test]
    fn absent_class_is_absent_from_map() {
        let r = [
            PredictionRecord {
                predicted: 0,
                confidence: 1.0,
                label: 0,
            },
            PredictionRecord {
                predicted: 0,
                confidence: 1.0,
                label: 2,
            },
        ];
        let m = per_class_accuracy(&r).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[&0], 1.0);
        assert_eq!(m[&2], 0.0);
        assert!(!m.contains_key(&1));
    }

    #[test]
    fn bin_edges_are_right_closed() {
        assert_eq!(bin_index(0.0, 15), 0);
        assert_eq!(bin_index(1.0 / 15.0, 15), 0);
        assert_eq!(bin_index(1.0 / 15.0 + 1e-12, 15), 1);
        assert_eq!(bin_index(1.0, 15), 14);
        assert_eq!(bin_index(0.5, 2), 0);
    }

    #[test]
    fn ece_hand_cases() {
        assert!((ece(&[rec(0.9, true), rec(0.6, false)], 1).unwrap() - 0.25).abs() < 1e-15);
        let wrong: Vec<_> = (0..4).map(|_| rec(1.0, false)).collect();
        assert_eq!(ece(&wrong, 15).unwrap(), 1.0);
        let calibrated = [rec(0.5, true), rec(0.5, false), rec(1.0, true)];
        assert_eq!(ece(&calibrated, 10).unwrap(), 0.0);
        assert!(ece(&[], 15).is_err());
        assert!(ece(&calibrated, 0).is_err());
    }

    proptest! {
        #[test]
        fn ece_bounded_order_invariant_and_single_bin_gap(
            raw in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..60),
            bins in 1usize..20,
        ) {
            let records: Vec<_> = raw.iter().map(|&(c, ok)| rec(c, ok)).collect();
            let e = ece(&records, bins).unwrap();
            prop_assert!((0.0..=1.0).contains(&e));
            let mut rev = records.clone();
            rev.reverse();
            prop_assert!((ece(&rev, bins).unwrap() - e).abs() < 1e-12);
            let mean_conf = records.iter().map(|r| r.confidence).sum::<f64>() / records.len() as f64;
            let gap = (accuracy(&records).unwrap() - mean_conf).abs();
            prop_assert!((ece(&records, 1).unwrap() - gap).abs() < 1e-12);
        }
    }
}
