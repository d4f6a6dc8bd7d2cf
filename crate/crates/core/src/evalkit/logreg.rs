//! Multinomial logistic regression shared by the style-accuracy classifier
//! and the latent probes.
//!
//! The model is a plain linear softmax classifier trained by full-batch
//! gradient descent. Features are sparse `(index, value)` pairs; an implicit
//! bias feature is always appended. Training is deterministic: it uses no
//! randomness at all, and the held-out splits used by callers come from a
//! named RNG substream so the same seed always produces the same partition.

use ndarray::Array2;

use crate::rng::substream;

/// Sparse feature row: `(feature index, value)` pairs with unique indices.
pub(crate) type SparseRow = Vec<(usize, f64)>;

/// Gradient-descent settings for [`train_softmax`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct LogRegOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    /// L2 penalty applied to all weights except the bias column.
    pub l2: f64,
}

impl Default for LogRegOptions {
    fn default() -> Self {
        LogRegOptions {
            epochs: 200,
            learning_rate: 0.5,
            l2: 1e-4,
        }
    }
}

/// Class logits for one sparse row under a `(classes, features + 1)` weight
/// matrix whose final column is the bias.
pub(crate) fn logits(weights: &Array2<f64>, row: &SparseRow) -> Vec<f64> {
    let bias_col = weights.ncols() - 1;
    let mut out: Vec<f64> = (0..weights.nrows()).map(|c| weights[[c, bias_col]]).collect();
    for &(f, v) in row {
        for (c, slot) in out.iter_mut().enumerate() {
            *slot += weights[[c, f]] * v;
        }
    }
    out
}

fn softmax_in_place(scores: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        total += *s;
    }
    for s in scores.iter_mut() {
        *s /= total;
    }
}

/// Index of the largest logit; ties resolve to the smallest index.
pub(crate) fn predict(weights: &Array2<f64>, row: &SparseRow) -> usize {
    let scores = logits(weights, row);
    let mut best = 0;
    for (c, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = c;
        }
    }
    best
}

/// Fraction of rows whose prediction matches the label.
pub(crate) fn accuracy(weights: &Array2<f64>, rows: &[SparseRow], labels: &[usize]) -> f64 {
    assert_eq!(rows.len(), labels.len(), "rows and labels must align");
    if rows.is_empty() {
        return 0.0;
    }
    let hits = rows
        .iter()
        .zip(labels)
        .filter(|(row, &y)| predict(weights, row) == y)
        .count();
    hits as f64 / rows.len() as f64
}

/// Fit a softmax classifier with full-batch gradient descent.
///
/// Returns a `(n_classes, n_features + 1)` weight matrix (bias last). The
/// caller guarantees `labels[i] < n_classes` and feature indices below
/// `n_features`.
pub(crate) fn train_softmax(
    rows: &[SparseRow],
    labels: &[usize],
    n_features: usize,
    n_classes: usize,
    opts: LogRegOptions,
) -> Array2<f64> {
    assert_eq!(rows.len(), labels.len(), "rows and labels must align");
    assert!(n_classes >= 2, "softmax training needs at least two classes");
    let n = rows.len() as f64;
    let mut weights = Array2::<f64>::zeros((n_classes, n_features + 1));
    let bias_col = n_features;
    for _ in 0..opts.epochs {
        let mut grad = Array2::<f64>::zeros((n_classes, n_features + 1));
        for (row, &y) in rows.iter().zip(labels) {
            let mut probs = logits(&weights, row);
            softmax_in_place(&mut probs);
            probs[y] -= 1.0;
            for (c, &p) in probs.iter().enumerate() {
                for &(f, v) in row {
                    grad[[c, f]] += p * v;
                }
                grad[[c, bias_col]] += p;
            }
        }
        grad.mapv_inplace(|g| g / n);
        if opts.l2 > 0.0 {
            for c in 0..n_classes {
                for f in 0..n_features {
                    grad[[c, f]] += opts.l2 * weights[[c, f]];
                }
            }
        }
        weights.scaled_add(-opts.learning_rate, &grad);
    }
    weights
}

/// Deterministic shuffled 80/20 partition of `0..n`.
///
/// The held-out side takes `n / 5` indices (floor), so it is empty for
/// `n < 5`; callers treat that as an error. The shuffle comes from the
/// substream named `name` under `seed`.
pub(crate) fn shuffled_split(n: usize, seed: u64, name: &str) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = substream(seed, name);
    for i in (1..n).rev() {
        let j = rand::Rng::random_range(&mut rng, 0..=i);
        order.swap(i, j);
    }
    let holdout = n / 5;
    let train = order.split_off(holdout);
    (train, order)
}
