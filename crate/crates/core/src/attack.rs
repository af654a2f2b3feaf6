//! Backdoor injection strategies for the malicious client.
//!
//! All attacks are seeded and local: they touch only the malicious client's
//! rows at the selected indices, so the clean pipeline is bit-identical until
//! the start round. The attacker selects poison rows with oracle knowledge of
//! the true labels and (by default) overrides the training labels of poisoned
//! rows to the target class; a clean-label mode keeps the true labels.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    /// Adds a fixed, embedding-scaled sign pattern to poisoned rows.
    EmbeddingAdditive,
    /// Replaces poisoned rows with the embedding of a benign target-class
    /// sample from the same batch.
    EmbeddingSwap,
    /// Sets the leading tenth of the malicious client's own feature columns
    /// to 1.0 before the bottom model runs.
    InputPatch,
    None,
}

impl AttackKind {
    pub fn is_embedding_level(self) -> bool {
        matches!(
            self,
            AttackKind::EmbeddingAdditive | AttackKind::EmbeddingSwap
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub poison_rate: f64,
    pub trigger_magnitude: f64,
    pub target_class: usize,
    pub start_round: usize,
    pub seed: u64,
    /// Keep the true labels on poisoned rows instead of overriding to the
    /// target class. Off by default.
    pub clean_label: bool,
}

impl AttackSpec {
    pub fn validate(&self, class_count: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.poison_rate) {
            return Err(Error::config(format!(
                "poison rate must lie in [0, 1], got {}",
                self.poison_rate
            )));
        }
        if !self.trigger_magnitude.is_finite() {
            return Err(Error::config("trigger magnitude must be finite"));
        }
        if self.target_class >= class_count {
            return Err(Error::config(format!(
                "target class {} out of range for {} classes",
                self.target_class, class_count
            )));
        }
        Ok(())
    }
}

/// A fixed sign pattern over the malicious client's embedding dimension,
/// drawn once per attack seed. Per-batch scaling happens at application time.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerPattern {
    signs: Vec<f64>,
}

impl TriggerPattern {
    pub fn draw(dim: usize, seed: u64) -> Self {
        let mut stream = rng::stream(seed, rng::tags::TRIGGER_PATTERN, 0, 0);
        let signs = (0..dim)
            .map(|_| if stream.gen::<bool>() { 1.0 } else { -1.0 })
            .collect();
        Self { signs }
    }

    pub fn signs(&self) -> &[f64] {
        &self.signs
    }

    pub fn dim(&self) -> usize {
        self.signs.len()
    }
}

/// What an application of the attack did to the batch.
#[derive(Debug, Clone, Default)]
pub struct AttackOutcome {
    /// Rows whose data (and, unless clean-label, training label) changed.
    pub poisoned: Vec<usize>,
    /// Swap rows skipped because the batch held no target-class donor.
    pub swap_skipped: usize,
}

/// Seeded sample of `floor(poison_rate * batch)` indices among rows whose
/// true label differs from the target class. Empty before the start round.
pub fn select_poison_indices(
    labels: &[usize],
    spec: &AttackSpec,
    round: usize,
    batch_index: usize,
) -> Vec<usize> {
    if spec.kind == AttackKind::None || round < spec.start_round {
        return Vec::new();
    }
    let want = ((labels.len() as f64) * spec.poison_rate).floor() as usize;
    if want == 0 {
        return Vec::new();
    }
    let mut eligible: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter_map(|(i, &l)| (l != spec.target_class).then_some(i))
        .collect();
    let mut stream = rng::stream(
        spec.seed,
        rng::tags::POISON_SELECT,
        round as u64,
        batch_index as u64,
    );
    eligible.shuffle(&mut stream);
    eligible.truncate(want);
    eligible.sort_unstable();
    eligible
}

/// Per-dimension population standard deviation over the given rows.
fn column_std(matrix: &Matrix, rows: &[usize]) -> Vec<f64> {
    let dim = matrix.cols();
    let n = rows.len();
    if n == 0 {
        return vec![0.0; dim];
    }
    let mut mean = vec![0.0; dim];
    for &r in rows {
        for (m, &v) in mean.iter_mut().zip(matrix.row(r)) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut var = vec![0.0; dim];
    for &r in rows {
        for (j, &v) in matrix.row(r).iter().enumerate() {
            let d = v - mean[j];
            var[j] += d * d;
        }
    }
    var.into_iter().map(|v| (v / n as f64).sqrt()).collect()
}

/// Trigger scale for one batch: magnitude times the per-dimension standard
/// deviation of the benign (non-selected) rows; falls back to all rows when
/// fewer than two benign rows remain.
fn trigger_scales(embeddings: &Matrix, selected: &[usize], magnitude: f64) -> Vec<f64> {
    let benign: Vec<usize> = (0..embeddings.rows())
        .filter(|r| !selected.contains(r))
        .collect();
    let rows = if benign.len() >= 2 {
        benign
    } else {
        (0..embeddings.rows()).collect()
    };
    column_std(embeddings, &rows)
        .into_iter()
        .map(|s| magnitude * s)
        .collect()
}

/// Applies the configured attack to the malicious client's per-client data
/// (embeddings for the embedding attacks, raw feature slices for the input
/// patch) at the selected indices, overriding training labels unless the
/// spec is clean-label.
#[allow(clippy::too_many_arguments)]
pub fn apply_attack(
    per_client: &mut [Matrix],
    labels: &mut [usize],
    malicious: usize,
    indices: &[usize],
    spec: &AttackSpec,
    pattern: Option<&TriggerPattern>,
    round: usize,
    batch_index: usize,
) -> Result<AttackOutcome> {
    if spec.kind == AttackKind::None || indices.is_empty() {
        return Ok(AttackOutcome::default());
    }
    if malicious >= per_client.len() {
        return Err(Error::config(format!(
            "malicious client {} out of range for {} clients",
            malicious,
            per_client.len()
        )));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= labels.len()) {
        return Err(Error::config(format!("poison index {} out of batch", bad)));
    }

    let mut outcome = AttackOutcome::default();
    match spec.kind {
        AttackKind::EmbeddingAdditive => {
            let embeddings = &mut per_client[malicious];
            let pattern =
                pattern.ok_or_else(|| Error::config("additive attack needs a trigger pattern"))?;
            if pattern.dim() != embeddings.cols() {
                return Err(Error::config("trigger pattern width mismatch"));
            }
            let scales = trigger_scales(embeddings, indices, spec.trigger_magnitude);
            for &i in indices {
                let row = embeddings.row_mut(i);
                for (v, (&sign, &scale)) in row.iter_mut().zip(pattern.signs().iter().zip(&scales))
                {
                    *v += sign * scale;
                }
                outcome.poisoned.push(i);
            }
        }
        AttackKind::EmbeddingSwap => {
            let embeddings = &mut per_client[malicious];
            // Donors are benign target-class rows (selection never picks
            // target-class rows, so any target-class row qualifies).
            let donors: Vec<usize> = labels
                .iter()
                .enumerate()
                .filter_map(|(i, &l)| (l == spec.target_class).then_some(i))
                .collect();
            if donors.is_empty() {
                outcome.swap_skipped = indices.len();
                return Ok(outcome);
            }
            let mut stream = rng::stream(
                spec.seed,
                rng::tags::SWAP_DONOR,
                round as u64,
                batch_index as u64,
            );
            for &i in indices {
                let donor = donors[stream.gen_range(0..donors.len())];
                let donor_row = embeddings.row(donor).to_vec();
                embeddings.row_mut(i).copy_from_slice(&donor_row);
                outcome.poisoned.push(i);
            }
        }
        AttackKind::InputPatch => {
            let inputs = &mut per_client[malicious];
            let patched = patch_width(inputs.cols());
            for &i in indices {
                for v in inputs.row_mut(i)[..patched].iter_mut() {
                    *v = 1.0;
                }
                outcome.poisoned.push(i);
            }
        }
        AttackKind::None => unreachable!(),
    }
    if !spec.clean_label {
        for &i in &outcome.poisoned {
            labels[i] = spec.target_class;
        }
    }
    Ok(outcome)
}

/// Number of leading feature columns the input patch overwrites.
pub fn patch_width(columns: usize) -> usize {
    ((columns as f64) * 0.1).ceil() as usize
}

/// Test-time trigger for the embedding attacks: applies the training trigger
/// to the given rows (the non-target-class evaluation set). Scales come from
/// the full pre-trigger embedding matrix. Returns the number of swap rows
/// skipped for lack of a donor.
pub fn apply_test_trigger(
    embeddings: &mut Matrix,
    rows: &[usize],
    labels: &[usize],
    spec: &AttackSpec,
    pattern: &TriggerPattern,
) -> Result<usize> {
    match spec.kind {
        AttackKind::EmbeddingAdditive => {
            if pattern.dim() != embeddings.cols() {
                return Err(Error::config("trigger pattern width mismatch"));
            }
            let all: Vec<usize> = (0..embeddings.rows()).collect();
            let scales: Vec<f64> = column_std(embeddings, &all)
                .into_iter()
                .map(|s| spec.trigger_magnitude * s)
                .collect();
            for &i in rows {
                let row = embeddings.row_mut(i);
                for (v, (&sign, &scale)) in row.iter_mut().zip(pattern.signs().iter().zip(&scales))
                {
                    *v += sign * scale;
                }
            }
            Ok(0)
        }
        AttackKind::EmbeddingSwap => {
            let donors: Vec<usize> = labels
                .iter()
                .enumerate()
                .filter_map(|(i, &l)| (l == spec.target_class).then_some(i))
                .collect();
            if donors.is_empty() {
                return Ok(rows.len());
            }
            let mut stream = rng::stream(spec.seed, rng::tags::TEST_TRIGGER, 0, 0);
            for &i in rows {
                let donor = donors[stream.gen_range(0..donors.len())];
                let donor_row = embeddings.row(donor).to_vec();
                embeddings.row_mut(i).copy_from_slice(&donor_row);
            }
            Ok(0)
        }
        _ => Err(Error::config(
            "test trigger applies only to embedding attacks",
        )),
    }
}

/// Test-time input patch over the given rows of the malicious client's raw
/// feature slice.
pub fn apply_test_input_patch(inputs: &mut Matrix, rows: &[usize]) {
    let patched = patch_width(inputs.cols());
    for &i in rows {
        for v in inputs.row_mut(i)[..patched].iter_mut() {
            *v = 1.0;
        }
    }
}
