//! Model utility, attack strength, and filter quality.

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};

/// Fraction of exact prediction matches on clean test samples.
pub fn main_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::eval(format!(
            "main accuracy needs matching nonempty inputs, got {} predictions / {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Fraction of trigger-injected test samples predicted as the target class.
/// The evaluation set must already exclude true-target-class samples.
pub fn attack_success_rate(
    predictions: &[usize],
    target_class: usize,
    true_labels: &[usize],
) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != true_labels.len() {
        return Err(Error::eval(format!(
            "attack success rate needs matching nonempty inputs, got {} predictions / {} labels",
            predictions.len(),
            true_labels.len()
        )));
    }
    if true_labels.contains(&target_class) {
        return Err(Error::eval(
            "triggered evaluation set must exclude true-target-class samples",
        ));
    }
    let hits = predictions.iter().filter(|&&p| p == target_class).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Precision/recall of poison detection, where detection is the complement
/// of the benign set. Empty denominators count as 1.0.
pub fn filter_confusion(benign_mask: &[bool], poison_flags: &[bool]) -> (f64, f64) {
    debug_assert_eq!(benign_mask.len(), poison_flags.len());
    let mut detected = 0usize;
    let mut true_detections = 0usize;
    let mut poisoned = 0usize;
    for (&benign, &poison) in benign_mask.iter().zip(poison_flags) {
        if !benign {
            detected += 1;
            if poison {
                true_detections += 1;
            }
        }
        if poison {
            poisoned += 1;
        }
    }
    let precision = if detected == 0 {
        1.0
    } else {
        true_detections as f64 / detected as f64
    };
    let recall = if poisoned == 0 {
        1.0
    } else {
        true_detections as f64 / poisoned as f64
    };
    (precision, recall)
}

/// One training round's observable outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    /// Mean cross-entropy over the rows the top model trained on.
    pub loss: f64,
    /// Samples the defense excluded this round.
    pub filtered: usize,
    /// Ground-truth poisoned samples this round.
    pub poisoned: usize,
    /// Poisoned samples among the filtered ones.
    pub true_detections: usize,
    pub filter_precision: f64,
    pub filter_recall: f64,
    /// Swap-attack rows skipped for lack of a target-class donor.
    pub swap_skipped: usize,
}

/// Final report for one experiment. Contains a full config echo so a run can
/// be reproduced bit-for-bit; deliberately holds nothing volatile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub main_accuracy: f64,
    pub attack_success_rate: f64,
    pub rounds: Vec<RoundLog>,
    pub config: ExperimentConfig,
    pub seed: u64,
}

impl MetricsReport {
    /// Aggregate filter recall over rounds strictly after `after_round`
    /// (total detections over total poisoned).
    pub fn filter_recall_after(&self, after_round: usize) -> f64 {
        let mut detections = 0usize;
        let mut poisoned = 0usize;
        for log in self.rounds.iter().filter(|l| l.round > after_round) {
            detections += log.true_detections;
            poisoned += log.poisoned;
        }
        if poisoned == 0 {
            1.0
        } else {
            detections as f64 / poisoned as f64
        }
    }
}
