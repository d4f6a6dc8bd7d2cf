//! Label-coupling diagnostics: how much transferring one style type drags
//! the others along, and how correlated the labels themselves are.

use crate::corpus::LabeledExample;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::SeedRng;
use crate::seqae::{self, Model};
use crate::transfer::{transfer_outcome, StyleTarget, TransferRequest};

use super::sta::StaClassifier;

/// Style retention before and after a transfer of a *different* type.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StaKeepResult {
    /// Accuracy of the observing classifier on the original sentences.
    pub sta_origin: f64,
    /// Accuracy of the observing classifier on the transferred sentences,
    /// still judged against the original labels.
    pub sta_keep: f64,
    /// `sta_origin - sta_keep`: how much of the observed style the transfer
    /// destroyed. Smaller is better.
    pub delta: f64,
}

/// Pure counting core of the STA-keep diagnostic: classify originals and
/// transferred outputs with the observing type's classifier and compare both
/// against the original labels of that type.
pub fn sta_keep_rates(
    observe_clf: &StaClassifier,
    originals: &[Vec<usize>],
    transferred: &[Vec<usize>],
    observe_labels: &[usize],
) -> Result<StaKeepResult> {
    if originals.len() != transferred.len() || originals.len() != observe_labels.len() {
        return Err(Error::Config(format!(
            "sta_keep: {} originals, {} transferred, {} labels",
            originals.len(),
            transferred.len(),
            observe_labels.len()
        )));
    }
    if originals.is_empty() {
        return Err(Error::MetricUndefined(
            "sta_keep over an empty sentence set".into(),
        ));
    }
    if let Some(&bad) = observe_labels.iter().find(|&&y| y >= observe_clf.n_values()) {
        return Err(Error::Config(format!(
            "sta_keep: label {bad} out of range for a type with {} values",
            observe_clf.n_values()
        )));
    }
    let rate = |sentences: &[Vec<usize>]| -> f64 {
        let hits = sentences
            .iter()
            .zip(observe_labels)
            .filter(|(s, &y)| observe_clf.predict(s) == y)
            .count();
        hits as f64 / sentences.len() as f64
    };
    let sta_origin = rate(originals);
    let sta_keep = rate(transferred);
    Ok(StaKeepResult {
        sta_origin,
        sta_keep,
        delta: sta_origin - sta_keep,
    })
}

/// Run the STA-keep diagnostic for one ordered pair of style types:
/// transfer `transfer_type` on every test sentence (cycling each label to
/// the next value) and measure how well `observe_clf`'s type survives.
///
/// Transfers draw replacement noise from `rng`, one sentence at a time in
/// corpus order.
pub fn sta_keep<F: Real>(
    model: &Model<F>,
    observe_clf: &StaClassifier,
    test: &[LabeledExample],
    transfer_type: usize,
    rng: &mut SeedRng,
) -> Result<StaKeepResult> {
    let observe_type = observe_clf.type_index();
    if transfer_type == observe_type {
        return Err(Error::Config(
            "sta_keep requires distinct transferred and observed types".into(),
        ));
    }
    if transfer_type >= model.value_counts.len() {
        return Err(Error::Config(format!(
            "sta_keep: style type {transfer_type} out of range for {} types",
            model.value_counts.len()
        )));
    }
    if test.is_empty() {
        return Err(Error::MetricUndefined(
            "sta_keep over an empty test set".into(),
        ));
    }
    let n_values = model.value_counts[transfer_type];
    let mut originals = Vec::with_capacity(test.len());
    let mut transferred = Vec::with_capacity(test.len());
    let mut observe_labels = Vec::with_capacity(test.len());
    for (i, ex) in test.iter().enumerate() {
        let (&from, &observed) = match (ex.labels.get(transfer_type), ex.labels.get(observe_type)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::Config(format!(
                    "sta_keep: example {i} lacks labels for the requested types"
                )))
            }
        };
        let target = (from + 1) % n_values;
        let req = TransferRequest::new(ex.tokens.clone(), vec![StyleTarget::new(transfer_type, target)]);
        let out = transfer_outcome(model, &req, rng)
            .map_err(|e| Error::Request(format!("sta_keep example {i}: {e}")))?;
        originals.push(ex.tokens.clone());
        transferred.push(out.tokens);
        observe_labels.push(observed);
    }
    sta_keep_rates(observe_clf, &originals, &transferred, &observe_labels)
}

/// Empirical label-coupling tables.
///
/// `marginals[i][v]` is the empirical rate of value `v` for type `i`.
/// `conditionals[i][j][vj][vi]` is the empirical probability that type `i`
/// takes value `vi` given that type `j` took value `vj`; `None` marks a
/// conditioning value that never occurs. `bias[i][j]` is the largest
/// absolute gap between a defined conditional and the matching marginal —
/// zero for independent labels — and is `None` on the diagonal or when every
/// cell is undefined.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LabelDependence {
    pub marginals: Vec<Vec<f64>>,
    pub conditionals: Vec<Vec<Vec<Vec<Option<f64>>>>>,
    pub bias: Vec<Vec<Option<f64>>>,
}

/// Count label co-occurrence over a corpus. `value_counts[i]` is the number
/// of values of style type `i`; every example must carry a valid label for
/// every type.
pub fn label_dependence(
    examples: &[LabeledExample],
    value_counts: &[usize],
) -> Result<LabelDependence> {
    if examples.is_empty() {
        return Err(Error::Config(
            "label dependence requires a non-empty corpus".into(),
        ));
    }
    let types = value_counts.len();
    for (i, ex) in examples.iter().enumerate() {
        if ex.labels.len() != types {
            return Err(Error::Config(format!(
                "example {i} has {} labels but the schema has {types} types",
                ex.labels.len()
            )));
        }
        for (t, (&y, &k)) in ex.labels.iter().zip(value_counts).enumerate() {
            if y >= k {
                return Err(Error::Config(format!(
                    "example {i} labels value {y} for type {t} which has {k} values"
                )));
            }
        }
    }
    let n = examples.len() as f64;
    let mut counts: Vec<Vec<u64>> = value_counts.iter().map(|&k| vec![0; k]).collect();
    for ex in examples {
        for (t, &y) in ex.labels.iter().enumerate() {
            counts[t][y] += 1;
        }
    }
    let marginals: Vec<Vec<f64>> = counts
        .iter()
        .map(|c| c.iter().map(|&x| x as f64 / n).collect())
        .collect();

    let mut conditionals: Vec<Vec<Vec<Vec<Option<f64>>>>> = Vec::with_capacity(types);
    let mut bias: Vec<Vec<Option<f64>>> = vec![vec![None; types]; types];
    for i in 0..types {
        let mut per_j = Vec::with_capacity(types);
        for j in 0..types {
            let mut table: Vec<Vec<Option<f64>>> =
                vec![vec![None; value_counts[i]]; value_counts[j]];
            if i != j {
                let mut joint = vec![vec![0u64; value_counts[i]]; value_counts[j]];
                for ex in examples {
                    joint[ex.labels[j]][ex.labels[i]] += 1;
                }
                let mut worst: Option<f64> = None;
                for vj in 0..value_counts[j] {
                    let denom = counts[j][vj];
                    if denom == 0 {
                        continue;
                    }
                    for vi in 0..value_counts[i] {
                        let p = joint[vj][vi] as f64 / denom as f64;
                        table[vj][vi] = Some(p);
                        let gap = (p - marginals[i][vi]).abs();
                        worst = Some(worst.map_or(gap, |w: f64| w.max(gap)));
                    }
                }
                bias[i][j] = worst;
            }
            per_j.push(table);
        }
        conditionals.push(per_j);
    }
    Ok(LabelDependence {
        marginals,
        conditionals,
        bias,
    })
}

/// Deterministic latent encoding of an example: the variational path uses
/// the posterior mean. Returns the split into style slices and content,
/// converted to f64.
pub fn encode_split<F: Real>(model: &Model<F>, tokens: &[usize]) -> seqae::LatentSplit<f64> {
    let h = model.encode(tokens, None).h.mapv(Real::to_f64);
    let split = seqae::split(&h, &model.cfg);
    seqae::LatentSplit {
        styles: split.styles,
        content: split.content,
    }
}
