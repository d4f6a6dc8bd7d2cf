//! Style transfer accuracy (STA).
//!
//! A per-type classifier is fit on labeled sentences and then used to judge
//! whether transferred sentences carry the requested style value. The
//! classifier is a multinomial logistic regression over unigram and bigram
//! count features — a deliberately simple, deterministic stand-in for a
//! convolutional text classifier that behaves identically across runs. The
//! report metadata records this substitution.

use std::collections::HashMap;

use ndarray::Array2;

use crate::corpus::LabeledExample;
use crate::error::{Error, Result};

use super::logreg::{self, LogRegOptions, SparseRow};

/// Token n-gram used as a classifier feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Gram {
    Uni(usize),
    Bi(usize, usize),
}

/// Linear style classifier over unigram and bigram counts for one style type.
#[derive(Debug, Clone)]
pub struct StaClassifier {
    type_index: usize,
    n_values: usize,
    features: HashMap<Gram, usize>,
    weights: Array2<f64>,
}

impl StaClassifier {
    /// Which style type this classifier judges.
    pub fn type_index(&self) -> usize {
        self.type_index
    }

    /// Number of style values it distinguishes.
    pub fn n_values(&self) -> usize {
        self.n_values
    }

    fn featurize(&self, tokens: &[usize]) -> SparseRow {
        featurize_with(&self.features, tokens)
    }

    /// Predicted value index for a tokenized sentence. Any input is valid:
    /// n-grams never seen during training are simply ignored, and an empty
    /// sentence falls back to the bias-only prediction.
    pub fn predict(&self, tokens: &[usize]) -> usize {
        logreg::predict(&self.weights, &self.featurize(tokens))
    }
}

fn grams(tokens: &[usize]) -> impl Iterator<Item = Gram> + '_ {
    let unis = tokens.iter().map(|&t| Gram::Uni(t));
    let bis = tokens.windows(2).map(|w| Gram::Bi(w[0], w[1]));
    unis.chain(bis)
}

fn featurize_with(features: &HashMap<Gram, usize>, tokens: &[usize]) -> SparseRow {
    let mut counts: HashMap<usize, f64> = HashMap::new();
    for gram in grams(tokens) {
        if let Some(&f) = features.get(&gram) {
            *counts.entry(f).or_insert(0.0) += 1.0;
        }
    }
    let mut row: SparseRow = counts.into_iter().collect();
    row.sort_unstable_by_key(|&(f, _)| f);
    row
}

/// Fit a style classifier for `type_index` on `examples` and report its
/// held-out accuracy.
///
/// The examples are split 80/20 with a seed-derived shuffle; the feature map
/// and weights come from the 80% side only, so the reported accuracy is an
/// honest estimate. Errors: no examples, an example without a label for the
/// type, an empty held-out side (fewer than five examples), or a training
/// side with a single distinct label.
pub fn train_sta_classifier(
    examples: &[LabeledExample],
    type_index: usize,
    n_values: usize,
    seed: u64,
) -> Result<(StaClassifier, f64)> {
    if examples.is_empty() {
        return Err(Error::Config(
            "style classifier training requires a non-empty corpus".into(),
        ));
    }
    if n_values < 2 {
        return Err(Error::Config(
            "style classifier training requires at least two values".into(),
        ));
    }
    for (i, ex) in examples.iter().enumerate() {
        match ex.labels.get(type_index) {
            None => {
                return Err(Error::Config(format!(
                    "example {i} has no label for style type {type_index}"
                )))
            }
            Some(&v) if v >= n_values => {
                return Err(Error::Config(format!(
                    "example {i} labels value {v} but style type {type_index} has {n_values} values"
                )))
            }
            _ => {}
        }
    }
    let (train_idx, heldout_idx) = logreg::shuffled_split(
        examples.len(),
        seed,
        &format!("evalkit.sta.split.{type_index}"),
    );
    if heldout_idx.is_empty() {
        return Err(Error::Config(
            "style classifier training requires a non-empty held-out split (at least five examples)"
                .into(),
        ));
    }
    let train_labels: Vec<usize> = train_idx
        .iter()
        .map(|&i| examples[i].labels[type_index])
        .collect();
    let first = train_labels[0];
    if train_labels.iter().all(|&y| y == first) {
        return Err(Error::Config(
            "style classifier training split contains a single class".into(),
        ));
    }

    // Feature map from the training side only.
    let mut features: HashMap<Gram, usize> = HashMap::new();
    for &i in &train_idx {
        for gram in grams(&examples[i].tokens) {
            let next = features.len();
            features.entry(gram).or_insert(next);
        }
    }

    let train_rows: Vec<SparseRow> = train_idx
        .iter()
        .map(|&i| featurize_with(&features, &examples[i].tokens))
        .collect();
    let weights = logreg::train_softmax(
        &train_rows,
        &train_labels,
        features.len(),
        n_values,
        LogRegOptions::default(),
    );

    let clf = StaClassifier {
        type_index,
        n_values,
        features,
        weights,
    };
    let heldout_rows: Vec<SparseRow> = heldout_idx
        .iter()
        .map(|&i| clf.featurize(&examples[i].tokens))
        .collect();
    let heldout_labels: Vec<usize> = heldout_idx
        .iter()
        .map(|&i| examples[i].labels[type_index])
        .collect();
    let heldout_accuracy = logreg::accuracy(&clf.weights, &heldout_rows, &heldout_labels);
    Ok((clf, heldout_accuracy))
}

/// Fraction of sentences the classifier assigns to their requested target
/// value. `sentences` and `targets` must align; each target must be a valid
/// value index for the classifier's type.
pub fn sta(clf: &StaClassifier, sentences: &[Vec<usize>], targets: &[usize]) -> Result<f64> {
    if sentences.len() != targets.len() {
        return Err(Error::Config(format!(
            "sta: {} sentences but {} targets",
            sentences.len(),
            targets.len()
        )));
    }
    if sentences.is_empty() {
        return Err(Error::MetricUndefined(
            "sta over an empty sentence set".into(),
        ));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= clf.n_values) {
        return Err(Error::Config(format!(
            "sta: target value {bad} out of range for a type with {} values",
            clf.n_values
        )));
    }
    let hits = sentences
        .iter()
        .zip(targets)
        .filter(|(s, &t)| clf.predict(s) == t)
        .count();
    Ok(hits as f64 / sentences.len() as f64)
}
