//! Server-side embedding filtering.
//!
//! The prototype-consistency filter works in four steps over a labeled batch
//! of aggregated embeddings:
//!
//! 1. per-class robust prototypes (coordinate-wise median),
//! 2. consistency vectors (cosine similarity of each embedding to every
//!    class prototype),
//! 3. class-conditional deviation scores (Euclidean distance of each
//!    consistency vector to its class's median consistency pattern),
//! 4. class-conditional conformal p-values with a strict `p > alpha` keep
//!    rule.
//!
//! The filter only ever sees embeddings and labels. Ground-truth poison flags
//! live on the protocol side and are consumed by metrics alone.
//!
//! Two simple baselines live here as well: Gaussian noise on the exchanged
//! embeddings and global magnitude pruning of the top model.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::tensor::Matrix;

/// One robust prototype per class observed in the batch, in ascending class
/// order.
#[derive(Debug, Clone)]
pub struct PrototypeSet {
    class_ids: Vec<usize>,
    prototypes: Vec<Vec<f64>>,
}

impl PrototypeSet {
    pub fn class_ids(&self) -> &[usize] {
        &self.class_ids
    }

    pub fn prototype(&self, class: usize) -> Option<&[f64]> {
        self.class_ids
            .iter()
            .position(|&c| c == class)
            .map(|i| self.prototypes[i].as_slice())
    }

    pub fn len(&self) -> usize {
        self.class_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_ids.is_empty()
    }
}

/// Per-sample consistency vectors over the batch's observed classes.
#[derive(Debug, Clone)]
pub struct ConsistencyMatrix {
    class_ids: Vec<usize>,
    rows: Matrix,
}

impl ConsistencyMatrix {
    pub fn class_ids(&self) -> &[usize] {
        &self.class_ids
    }

    pub fn rows(&self) -> &Matrix {
        &self.rows
    }

    pub fn vector(&self, sample: usize) -> &[f64] {
        self.rows.row(sample)
    }
}

/// Per-class median consistency patterns, aligned with a
/// [`ConsistencyMatrix`]'s class order.
#[derive(Debug, Clone)]
pub struct ReferencePatterns {
    class_ids: Vec<usize>,
    patterns: Vec<Vec<f64>>,
}

impl ReferencePatterns {
    pub fn class_ids(&self) -> &[usize] {
        &self.class_ids
    }

    pub fn pattern(&self, class: usize) -> Option<&[f64]> {
        self.class_ids
            .iter()
            .position(|&c| c == class)
            .map(|i| self.patterns[i].as_slice())
    }
}

/// Outcome of the filter over one batch.
#[derive(Debug, Clone)]
pub struct FilterVerdict {
    pub scores: Vec<f64>,
    pub p_values: Vec<f64>,
    pub benign: Vec<bool>,
    pub alpha: f64,
}

impl FilterVerdict {
    pub fn benign_indices(&self) -> Vec<usize> {
        self.benign
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    pub fn filtered_count(&self) -> usize {
        self.benign.iter().filter(|&&b| !b).count()
    }
}

/// Everything the filter computed, for diagnostics and raw dumps.
#[derive(Debug, Clone)]
pub struct FilterDiagnostics {
    pub consistency: ConsistencyMatrix,
    pub references: ReferencePatterns,
    pub verdict: FilterVerdict,
}

/// Median of a scratch slice via partial selection; even cardinality takes
/// the mean of the two middle values.
fn median_inplace(values: &mut [f64]) -> f64 {
    let n = values.len();
    debug_assert!(n > 0);
    let mid = n / 2;
    let (below, at, _) =
        values.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).expect("finite values"));
    if n % 2 == 1 {
        *at
    } else {
        let lower = below.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lower + *at) / 2.0
    }
}

/// Ascending list of distinct classes with their sample indices.
fn class_index_sets(labels: &[usize]) -> Vec<(usize, Vec<usize>)> {
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    classes
        .into_iter()
        .map(|c| {
            let idx = labels
                .iter()
                .enumerate()
                .filter_map(|(i, &l)| (l == c).then_some(i))
                .collect();
            (c, idx)
        })
        .collect()
}

/// Coordinate-wise median embedding of every class present in the batch.
pub fn compute_prototypes(embeddings: &Matrix, labels: &[usize]) -> Result<PrototypeSet> {
    if labels.len() != embeddings.rows() {
        return Err(Error::config("label count does not match embedding rows"));
    }
    if labels.is_empty() {
        return Err(Error::config("cannot compute prototypes of an empty batch"));
    }
    let dim = embeddings.cols();
    let mut class_ids = Vec::new();
    let mut prototypes = Vec::new();
    let mut scratch = Vec::new();
    for (class, members) in class_index_sets(labels) {
        let mut proto = vec![0.0; dim];
        for (j, p) in proto.iter_mut().enumerate() {
            scratch.clear();
            scratch.extend(members.iter().map(|&r| embeddings.get(r, j)));
            *p = median_inplace(&mut scratch);
        }
        class_ids.push(class);
        prototypes.push(proto);
    }
    Ok(PrototypeSet {
        class_ids,
        prototypes,
    })
}

/// Cosine similarity with fixed-order accumulation. A zero vector is defined
/// as maximally non-aligned: the similarity is 0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// Maps each embedding to its vector of cosine similarities against every
/// class prototype, in the prototype set's class order.
pub fn consistency_transform(embeddings: &Matrix, prototypes: &PrototypeSet) -> ConsistencyMatrix {
    let mut rows = Matrix::zeros(embeddings.rows(), prototypes.len());
    for r in 0..embeddings.rows() {
        let e = embeddings.row(r);
        let out = rows.row_mut(r);
        for (k, proto) in prototypes.prototypes.iter().enumerate() {
            out[k] = cosine(e, proto);
        }
    }
    ConsistencyMatrix {
        class_ids: prototypes.class_ids.clone(),
        rows,
    }
}

/// Per-class median consistency patterns and each sample's Euclidean
/// deviation from its own class's pattern.
pub fn deviation_scores(
    consistency: &ConsistencyMatrix,
    labels: &[usize],
) -> Result<(Vec<f64>, ReferencePatterns)> {
    if labels.len() != consistency.rows.rows() {
        return Err(Error::config("label count does not match consistency rows"));
    }
    let dim = consistency.rows.cols();
    let mut class_ids = Vec::new();
    let mut patterns = Vec::new();
    let mut scratch = Vec::new();
    for (class, members) in class_index_sets(labels) {
        let mut pattern = vec![0.0; dim];
        for (j, p) in pattern.iter_mut().enumerate() {
            scratch.clear();
            scratch.extend(members.iter().map(|&r| consistency.rows.get(r, j)));
            *p = median_inplace(&mut scratch);
        }
        class_ids.push(class);
        patterns.push(pattern);
    }
    let references = ReferencePatterns {
        class_ids,
        patterns,
    };
    let scores = labels
        .iter()
        .enumerate()
        .map(|(r, &label)| {
            let pattern = references
                .pattern(label)
                .expect("every label's class was just computed");
            let mut sum = 0.0;
            for (&v, &m) in consistency.rows.row(r).iter().zip(pattern) {
                let d = v - m;
                sum += d * d;
            }
            sum.sqrt()
        })
        .collect();
    Ok((scores, references))
}

/// Class-conditional conformal p-values:
/// `p_k = (|{s in S_c : s >= s_k}| + 1) / (|S_c| + 1)`, where the count
/// includes `s_k` itself.
pub fn conformal_p_values(scores: &[f64], labels: &[usize]) -> Result<Vec<f64>> {
    if labels.len() != scores.len() {
        return Err(Error::config("label count does not match score count"));
    }
    let mut p_values = vec![0.0; scores.len()];
    for (_, members) in class_index_sets(labels) {
        let mut sorted: Vec<f64> = members.iter().map(|&i| scores[i]).collect();
        sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite scores"));
        let n = sorted.len();
        for &i in &members {
            let below = sorted.partition_point(|&s| s < scores[i]);
            let count_ge = n - below;
            p_values[i] = (count_ge + 1) as f64 / (n + 1) as f64;
        }
    }
    Ok(p_values)
}

/// Keeps exactly the samples with `p > alpha` (strict).
pub fn filter_benign(p_values: &[f64], alpha: f64) -> Result<Vec<bool>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config(format!(
            "alpha must lie in (0, 1), got {}",
            alpha
        )));
    }
    Ok(p_values.iter().map(|&p| p > alpha).collect())
}

/// The full four-step filter over one labeled batch.
pub fn protoguard_filter(
    embeddings: &Matrix,
    labels: &[usize],
    alpha: f64,
) -> Result<FilterVerdict> {
    Ok(protoguard_filter_detailed(embeddings, labels, alpha)?.verdict)
}

/// Same as [`protoguard_filter`] but keeps the intermediate representations
/// for dumps and diagnostics.
pub fn protoguard_filter_detailed(
    embeddings: &Matrix,
    labels: &[usize],
    alpha: f64,
) -> Result<FilterDiagnostics> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config(format!(
            "alpha must lie in (0, 1), got {}",
            alpha
        )));
    }
    let prototypes = compute_prototypes(embeddings, labels)?;
    let consistency = consistency_transform(embeddings, &prototypes);
    let (scores, references) = deviation_scores(&consistency, labels)?;
    let p_values = conformal_p_values(&scores, labels)?;
    let benign = filter_benign(&p_values, alpha)?;
    Ok(FilterDiagnostics {
        consistency,
        references,
        verdict: FilterVerdict {
            scores,
            p_values,
            benign,
            alpha,
        },
    })
}

/// Adds seeded Gaussian noise of standard deviation `sigma` to every entry of
/// every client's embeddings.
pub fn baseline_dp_noise(per_client: &mut [Matrix], sigma: f64, seed: u64) -> Result<()> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::config("sigma must be finite and >= 0"));
    }
    if sigma == 0.0 {
        return Ok(());
    }
    let mut stream = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    for m in per_client {
        for v in m.data_mut() {
            let z: f64 = normal.sample(&mut stream);
            *v += sigma * z;
        }
    }
    Ok(())
}

/// Zeros the given fraction of top-model weights with smallest absolute
/// value. Ranking is global across layers; ties break by index order. Biases
/// are untouched.
pub fn baseline_magnitude_prune(model: &mut Mlp, fraction: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::config(format!(
            "prune fraction must lie in [0, 1], got {}",
            fraction
        )));
    }
    let mut order: Vec<(f64, usize, usize)> = Vec::new();
    for (l, layer) in model.layers().iter().enumerate() {
        for (i, &w) in layer.weights().data().iter().enumerate() {
            order.push((w.abs(), l, i));
        }
    }
    let count = ((order.len() as f64) * fraction).floor() as usize;
    order.sort_unstable_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("finite weights")
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    for &(_, l, i) in order.iter().take(count) {
        model.layers_mut()[l].weights_mut().data_mut()[i] = 0.0;
    }
    Ok(())
}
