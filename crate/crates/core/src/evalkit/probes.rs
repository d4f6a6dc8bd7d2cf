//! Latent probes: how much label information a latent slice carries.
//!
//! A probe is a multinomial logistic regression fit on a slice of the latent
//! vector (one style slice or the content slice) against a style label. The
//! reported number is held-out accuracy on a deterministic 80/20 split.
//! High accuracy on a style slice for its own type is desirable; for the
//! content slice, accuracy close to chance indicates the style information
//! was kept out of the content representation (lower is better there).

use crate::error::{Error, Result};

use super::logreg::{self, LogRegOptions, SparseRow};

/// Held-out accuracy of a logistic-regression probe from `vectors` to
/// `labels`.
///
/// Features are standardized with training-split statistics before fitting.
/// Errors: empty or misaligned inputs, inconsistent dimensions, labels at or
/// above `n_classes`, fewer than five examples (no held-out side), or a
/// training split containing a single class.
pub fn probe_accuracy(
    vectors: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    seed: u64,
) -> Result<f64> {
    if vectors.len() != labels.len() {
        return Err(Error::Config(format!(
            "probe: {} vectors but {} labels",
            vectors.len(),
            labels.len()
        )));
    }
    if vectors.is_empty() {
        return Err(Error::Config("probe: empty input".into()));
    }
    if n_classes < 2 {
        return Err(Error::Config("probe: need at least two classes".into()));
    }
    let dim = vectors[0].len();
    if dim == 0 {
        return Err(Error::Config("probe: zero-dimensional vectors".into()));
    }
    for (i, v) in vectors.iter().enumerate() {
        if v.len() != dim {
            return Err(Error::Config(format!(
                "probe: vector {i} has dimension {} but vector 0 has {dim}",
                v.len()
            )));
        }
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::Config(format!(
            "probe: label {bad} out of range for {n_classes} classes"
        )));
    }
    let (train_idx, heldout_idx) = logreg::shuffled_split(vectors.len(), seed, "evalkit.probe.split");
    if heldout_idx.is_empty() {
        return Err(Error::Config(
            "probe: need at least five examples for a held-out split".into(),
        ));
    }
    let train_labels: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
    let first = train_labels[0];
    if train_labels.iter().all(|&y| y == first) {
        return Err(Error::Config(
            "probe: training split contains a single class".into(),
        ));
    }

    // Standardize with training statistics only.
    let mut mean = vec![0.0; dim];
    for &i in &train_idx {
        for (d, m) in mean.iter_mut().enumerate() {
            *m += vectors[i][d];
        }
    }
    for m in mean.iter_mut() {
        *m /= train_idx.len() as f64;
    }
    let mut var = vec![0.0; dim];
    for &i in &train_idx {
        for (d, s) in var.iter_mut().enumerate() {
            let c = vectors[i][d] - mean[d];
            *s += c * c;
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|&s| (s / train_idx.len() as f64).sqrt().max(1e-8))
        .collect();
    let featurize = |i: usize| -> SparseRow {
        (0..dim)
            .map(|d| (d, (vectors[i][d] - mean[d]) / scale[d]))
            .collect()
    };

    let train_rows: Vec<SparseRow> = train_idx.iter().map(|&i| featurize(i)).collect();
    let opts = LogRegOptions {
        epochs: 300,
        ..LogRegOptions::default()
    };
    let weights = logreg::train_softmax(&train_rows, &train_labels, dim, n_classes, opts);
    let heldout_rows: Vec<SparseRow> = heldout_idx.iter().map(|&i| featurize(i)).collect();
    let heldout_labels: Vec<usize> = heldout_idx.iter().map(|&i| labels[i]).collect();
    Ok(logreg::accuracy(&weights, &heldout_rows, &heldout_labels))
}
