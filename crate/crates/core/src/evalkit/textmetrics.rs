//! Content-preservation metrics over original/transferred sentence pairs.
//!
//! All three metrics first delete the style words of the type under
//! evaluation (supplied as a token-id set, normally derived from the style
//! lexicon) so that a transfer is not penalised for changing exactly the
//! words it was asked to change.
//!
//! * Cosine similarity: each sentence becomes the concatenation of the
//!   elementwise max, min, and mean of its remaining word vectors; the
//!   metric is the mean cosine between paired sentence vectors.
//! * Word overlap: Jaccard overlap of the remaining unigram sets.
//! * BLEU: corpus-level BLEU-n for n = 1..4 with clipped precision and the
//!   standard brevity penalty, averaged over the orders that have any
//!   candidate n-grams; the original sentence is the single reference. No
//!   smoothing beyond clipping is applied, so an order with zero matches
//!   contributes zero to the average.

use std::collections::{BTreeSet, HashMap, HashSet};

use ndarray::ArrayView2;

use crate::corpus::{StyleLexicon, Vocabulary};
use crate::error::{Error, Result};

/// A mean with bookkeeping for pairs that had to be skipped (for example
/// because deletion emptied a sentence).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SkippedMetric {
    /// Mean over the pairs that were used.
    pub value: f64,
    /// Number of pairs that entered the mean.
    pub used: usize,
    /// Number of pairs excluded from the mean.
    pub skipped: usize,
}

/// Token ids of every lexicon word of one style type, for deletion.
/// Words missing from the vocabulary are ignored; an unknown type name
/// yields an empty set (nothing is deleted).
pub fn lexicon_token_ids(
    lexicon: &StyleLexicon,
    style_type: &str,
    vocab: &Vocabulary,
) -> HashSet<usize> {
    lexicon
        .all_words(style_type)
        .into_iter()
        .filter_map(|w| vocab.lookup(w))
        .collect()
}

fn check_paired(originals: &[Vec<usize>], transferred: &[Vec<usize>], what: &str) -> Result<()> {
    if originals.len() != transferred.len() {
        return Err(Error::Config(format!(
            "{what}: {} originals but {} transferred sentences",
            originals.len(),
            transferred.len()
        )));
    }
    if originals.is_empty() {
        return Err(Error::Config(format!("{what}: empty sentence set")));
    }
    Ok(())
}

fn retained<'a>(sentence: &'a [usize], delete: &HashSet<usize>) -> Vec<&'a usize> {
    sentence.iter().filter(|t| !delete.contains(t)).collect()
}

/// Concatenated [max, min, mean] pooling of the word vectors of the retained
/// tokens. `None` when no tokens remain.
fn sentence_vector(
    sentence: &[usize],
    embeddings: &ArrayView2<f64>,
    delete: &HashSet<usize>,
) -> Result<Option<Vec<f64>>> {
    let dim = embeddings.ncols();
    let mut max = vec![f64::NEG_INFINITY; dim];
    let mut min = vec![f64::INFINITY; dim];
    let mut mean = vec![0.0; dim];
    let mut kept = 0usize;
    for &tok in sentence {
        if delete.contains(&tok) {
            continue;
        }
        if tok >= embeddings.nrows() {
            return Err(Error::Config(format!(
                "token id {tok} outside the embedding table ({} rows)",
                embeddings.nrows()
            )));
        }
        kept += 1;
        for d in 0..dim {
            let v = embeddings[[tok, d]];
            max[d] = max[d].max(v);
            min[d] = min[d].min(v);
            mean[d] += v;
        }
    }
    if kept == 0 {
        return Ok(None);
    }
    for m in mean.iter_mut() {
        *m /= kept as f64;
    }
    max.extend(min);
    max.extend(mean);
    Ok(Some(max))
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(dot / (na * nb))
}

/// Mean cosine similarity between pooled sentence vectors after deleting the
/// style words of the evaluated type.
///
/// A pair is skipped when deletion empties either sentence or when a pooled
/// vector has zero norm. If every pair is skipped the metric is undefined.
pub fn cosine_similarity_metric(
    originals: &[Vec<usize>],
    transferred: &[Vec<usize>],
    embeddings: &ArrayView2<f64>,
    delete: &HashSet<usize>,
) -> Result<SkippedMetric> {
    check_paired(originals, transferred, "cosine similarity")?;
    let mut total = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    for (orig, trans) in originals.iter().zip(transferred) {
        let a = sentence_vector(orig, embeddings, delete)?;
        let b = sentence_vector(trans, embeddings, delete)?;
        match (a, b) {
            (Some(a), Some(b)) => match cosine(&a, &b) {
                Some(c) => {
                    total += c;
                    used += 1;
                }
                None => skipped += 1,
            },
            _ => skipped += 1,
        }
    }
    if used == 0 {
        return Err(Error::MetricUndefined(
            "cosine similarity: every pair was skipped after style-word deletion".into(),
        ));
    }
    Ok(SkippedMetric {
        value: total / used as f64,
        used,
        skipped,
    })
}

/// Mean Jaccard overlap of unigram sets after deleting the style words of the
/// evaluated type. A pair with an empty union is skipped; if every pair is
/// skipped the metric is undefined. Symmetric in its two sentence lists.
pub fn word_overlap(
    originals: &[Vec<usize>],
    transferred: &[Vec<usize>],
    delete: &HashSet<usize>,
) -> Result<SkippedMetric> {
    check_paired(originals, transferred, "word overlap")?;
    let mut total = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    for (orig, trans) in originals.iter().zip(transferred) {
        let a: BTreeSet<usize> = retained(orig, delete).into_iter().copied().collect();
        let b: BTreeSet<usize> = retained(trans, delete).into_iter().copied().collect();
        let union = a.union(&b).count();
        if union == 0 {
            skipped += 1;
            continue;
        }
        let inter = a.intersection(&b).count();
        total += inter as f64 / union as f64;
        used += 1;
    }
    if used == 0 {
        return Err(Error::MetricUndefined(
            "word overlap: every pair was skipped after style-word deletion".into(),
        ));
    }
    Ok(SkippedMetric {
        value: total / used as f64,
        used,
        skipped,
    })
}

fn ngram_counts(tokens: &[&usize], n: usize) -> HashMap<Vec<usize>, u64> {
    let mut counts: HashMap<Vec<usize>, u64> = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            let key: Vec<usize> = w.iter().map(|&&t| t).collect();
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU against the originals as single references, averaged
/// over orders 1..4, after deleting the style words of the evaluated type.
///
/// Per order, precision is the clipped n-gram match count over the total
/// candidate n-gram count across the corpus; the score is that precision
/// times the corpus brevity penalty. Orders with no candidate n-grams at all
/// (every candidate shorter than n) are excluded from the average, so
/// `bleu_avg(x, x) = 1` for any non-empty corpus. The metric is undefined if
/// deletion empties every candidate.
pub fn bleu_avg(
    originals: &[Vec<usize>],
    transferred: &[Vec<usize>],
    delete: &HashSet<usize>,
) -> Result<f64> {
    check_paired(originals, transferred, "bleu")?;
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    let mut matches = [0u64; 4];
    let mut totals = [0u64; 4];
    for (orig, trans) in originals.iter().zip(transferred) {
        let reference = retained(orig, delete);
        let candidate = retained(trans, delete);
        cand_len += candidate.len();
        ref_len += reference.len();
        for n in 1..=4usize {
            let cand_counts = ngram_counts(&candidate, n);
            if cand_counts.is_empty() {
                continue;
            }
            let ref_counts = ngram_counts(&reference, n);
            for (gram, &c) in &cand_counts {
                totals[n - 1] += c;
                let r = ref_counts.get(gram).copied().unwrap_or(0);
                matches[n - 1] += c.min(r);
            }
        }
    }
    if cand_len == 0 {
        return Err(Error::MetricUndefined(
            "bleu: every candidate sentence is empty after style-word deletion".into(),
        ));
    }
    let brevity = if cand_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    let mut score = 0.0;
    let mut orders = 0usize;
    for n in 0..4 {
        if totals[n] == 0 {
            continue;
        }
        orders += 1;
        score += brevity * matches[n] as f64 / totals[n] as f64;
    }
    if orders == 0 {
        return Err(Error::MetricUndefined(
            "bleu: no candidate n-grams at any order".into(),
        ));
    }
    Ok(score / orders as f64)
}
