//! Evaluation battery for style-disentanglement models.
//!
//! The kit bundles every number the project reports about a trained model:
//!
//! * transfer quality per style type — style transfer accuracy (STA) from a
//!   held-out classifier, content preservation as pooled-embedding cosine
//!   similarity (CS) and word overlap (WO), fluency as Kneser–Ney
//!   perplexity, and BLEU against the source sentence;
//! * latent diagnostics — probe accuracies on each style slice and on the
//!   content slice, and mean absolute cosines between style subspaces;
//! * cross-type diagnostics — STA-keep (does transferring type `i` destroy
//!   type `j`?) and empirical label-dependence tables;
//! * an embedding export with per-slice PCA for visualization.
//!
//! Everything is deterministic given a seed: classifier splits, probe
//! splits, and transfer noise all come from named RNG substreams. The
//! classifier behind STA is a linear model over n-gram counts rather than a
//! neural text classifier; [`EvalMetadata`] records that substitution and
//! the other scoring conventions so reports are self-describing.

mod bias;
mod export;
mod kn;
mod logreg;
mod ortho;
mod probes;
mod sta;
mod textmetrics;

pub use bias::{encode_split, label_dependence, sta_keep, sta_keep_rates, LabelDependence, StaKeepResult};
pub use export::{export_embeddings, pca_2d, Pca2d};
pub use kn::{KnLanguageModel, PerplexityResult, KN_DISCOUNT, KN_FLOOR};
pub use ortho::{mean_abs_cosine, orthogonality_report};
pub use probes::probe_accuracy;
pub use sta::{sta, train_sta_classifier, StaClassifier};
pub use textmetrics::{
    bleu_avg, cosine_similarity_metric, lexicon_token_ids, word_overlap, SkippedMetric,
};

use crate::corpus::{LabeledExample, StyleLexicon, StyleSchema, Vocabulary};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::substream;
use crate::seqae::{Model, Variant};
use crate::transfer::{transfer_outcome, StyleTarget, TransferRequest};

/// How the battery produces the sentences it scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Sample-and-replace style transfer — the real evaluation.
    Transfer,
    /// Score each original sentence against itself. A plumbing self-check:
    /// word overlap and BLEU must come out at exactly 1.
    Identity,
}

/// Scoring conventions baked into a report.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalMetadata {
    /// How the STA classifier is built.
    pub style_classifier: String,
    /// BLEU conventions.
    pub bleu: String,
    /// Absolute discount of the Kneser–Ney language model.
    pub kn_discount: f64,
    /// Seed feeding every evaluation substream.
    pub seed: u64,
    /// Whether sentences were transferred or scored against themselves.
    pub mode: EvalMode,
    /// Whether the evaluated model is the variational variant.
    pub variational: bool,
    pub train_examples: usize,
    pub test_examples: usize,
}

/// Per-style-type metrics.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TypeEvalReport {
    pub name: String,
    /// Held-out accuracy of the STA classifier itself (its trustworthiness).
    pub classifier_holdout_accuracy: f64,
    /// Fraction of transferred sentences classified as their target value.
    pub sta: f64,
    /// Pooled-embedding cosine similarity after style-word deletion.
    pub cs: SkippedMetric,
    /// Word overlap after style-word deletion.
    pub wo: SkippedMetric,
    /// Kneser–Ney perplexity of the transferred sentences.
    pub ppl: f64,
    /// Events floored during the perplexity computation.
    pub ppl_floored: usize,
    /// Mean corpus BLEU of transferred sentences against their sources.
    pub bleu: f64,
    /// Probe accuracy from this type's style slice to its label (higher
    /// means the slice carries its style).
    pub style_probe_accuracy: f64,
    /// Probe accuracy from the content slice to this type's label (lower
    /// means the content is clean of this style).
    pub content_probe_accuracy: f64,
}

/// Metrics for an ordered pair of distinct style types.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PairEvalReport {
    /// The type that was transferred.
    pub transferred: String,
    /// The type whose survival is observed.
    pub observed: String,
    pub sta_origin: f64,
    pub sta_keep: f64,
    /// `sta_origin - sta_keep`; smaller means better multi-type isolation.
    pub delta: f64,
    /// Mean absolute cosine between transferred-type samples and the
    /// observed type's encoded style vectors.
    pub orthogonality: f64,
}

/// The complete evaluation of one trained model, as a single document.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub metadata: EvalMetadata,
    pub types: Vec<TypeEvalReport>,
    pub pairs: Vec<PairEvalReport>,
    pub label_dependence: LabelDependence,
}

impl EvalReport {
    /// Pretty-printed JSON.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Run the full battery.
///
/// `train` fits the STA classifiers and the language model; `test` is
/// transferred and probed. Style words to delete for the content metrics
/// come from `lexicon` (a type absent from the lexicon deletes nothing).
/// In [`EvalMode::Transfer`] each test sentence is transferred once per
/// style type, cycling its label to the next value; transfer noise,
/// classifier splits, and probe splits all derive from `seed`, so identical
/// inputs give identical reports.
pub fn evaluate<F: Real>(
    model: &Model<F>,
    schema: &StyleSchema,
    vocab: &Vocabulary,
    train: &[LabeledExample],
    test: &[LabeledExample],
    lexicon: &StyleLexicon,
    seed: u64,
    mode: EvalMode,
) -> Result<EvalReport> {
    let g = schema.types.len();
    if model.value_counts.len() != g {
        return Err(Error::Config(format!(
            "schema has {g} types but the model has {}",
            model.value_counts.len()
        )));
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config(
            "evaluation requires non-empty train and test splits".into(),
        ));
    }
    let counts: Vec<usize> = schema.types.iter().map(|t| t.values.len()).collect();
    if counts != model.value_counts {
        return Err(Error::Config(
            "schema value counts disagree with the model".into(),
        ));
    }

    let embeddings = model.params.get("embed").mapv(Real::to_f64);
    let train_sentences: Vec<Vec<usize>> = train.iter().map(|e| e.tokens.clone()).collect();
    let lm = KnLanguageModel::train(&train_sentences)?;

    // Classifiers first: they are shared by the per-type and pair passes.
    let mut classifiers = Vec::with_capacity(g);
    for t in 0..g {
        classifiers.push(train_sta_classifier(train, t, counts[t], seed)?);
    }

    // Deterministic latents for the probes.
    let splits: Vec<_> = test.iter().map(|ex| encode_split(model, &ex.tokens)).collect();
    let originals: Vec<Vec<usize>> = test.iter().map(|e| e.tokens.clone()).collect();

    let mut rng = substream(seed, "evalkit.transfer");
    let mut types = Vec::with_capacity(g);
    for t in 0..g {
        let (clf, holdout) = &classifiers[t];
        let delete = lexicon_token_ids(lexicon, &schema.types[t].name, vocab);
        let mut transferred = Vec::with_capacity(test.len());
        let mut targets = Vec::with_capacity(test.len());
        for (i, ex) in test.iter().enumerate() {
            let &label = ex.labels.get(t).ok_or_else(|| {
                Error::Config(format!("test example {i} has no label for type {t}"))
            })?;
            let target = (label + 1) % counts[t];
            match mode {
                EvalMode::Identity => transferred.push(ex.tokens.clone()),
                EvalMode::Transfer => {
                    let req =
                        TransferRequest::new(ex.tokens.clone(), vec![StyleTarget::new(t, target)]);
                    let out = transfer_outcome(model, &req, &mut rng)
                        .map_err(|e| Error::Request(format!("test example {i}: {e}")))?;
                    transferred.push(out.tokens);
                }
            }
            targets.push(target);
        }
        let sta_rate = sta(clf, &transferred, &targets)?;
        let cs = cosine_similarity_metric(&originals, &transferred, &embeddings.view(), &delete)?;
        let wo = word_overlap(&originals, &transferred, &delete)?;
        let bleu = bleu_avg(&originals, &transferred, &delete)?;
        let ppl = lm.perplexity(&transferred)?;
        let style_vectors: Vec<Vec<f64>> = splits.iter().map(|s| s.styles[t].to_vec()).collect();
        let content_vectors: Vec<Vec<f64>> = splits.iter().map(|s| s.content.to_vec()).collect();
        let labels: Vec<usize> = test.iter().map(|e| e.labels[t]).collect();
        let style_probe = probe_accuracy(&style_vectors, &labels, counts[t], seed)?;
        let content_probe = probe_accuracy(&content_vectors, &labels, counts[t], seed)?;
        types.push(TypeEvalReport {
            name: schema.types[t].name.clone(),
            classifier_holdout_accuracy: *holdout,
            sta: sta_rate,
            cs,
            wo,
            ppl: ppl.ppl,
            ppl_floored: ppl.floored,
            bleu,
            style_probe_accuracy: style_probe,
            content_probe_accuracy: content_probe,
        });
    }

    let mut pairs = Vec::new();
    if g >= 2 {
        let mut ortho_rng = substream(seed, "evalkit.ortho");
        let ortho = orthogonality_report(model, test, &mut ortho_rng)?;
        for i in 0..g {
            for j in 0..g {
                if i == j {
                    continue;
                }
                let keep = match mode {
                    EvalMode::Transfer => sta_keep(model, &classifiers[j].0, test, i, &mut rng)?,
                    EvalMode::Identity => {
                        let labels: Vec<usize> = test.iter().map(|e| e.labels[j]).collect();
                        sta_keep_rates(&classifiers[j].0, &originals, &originals, &labels)?
                    }
                };
                pairs.push(PairEvalReport {
                    transferred: schema.types[i].name.clone(),
                    observed: schema.types[j].name.clone(),
                    sta_origin: keep.sta_origin,
                    sta_keep: keep.sta_keep,
                    delta: keep.delta,
                    orthogonality: ortho[i][j].expect("off-diagonal is defined"),
                });
            }
        }
    }

    let dependence = label_dependence(test, &counts)?;
    Ok(EvalReport {
        metadata: EvalMetadata {
            style_classifier:
                "multinomial logistic regression over unigram and bigram counts (linear \
                 stand-in for a neural text classifier)"
                    .into(),
            bleu:
                "mean of corpus BLEU-1..4 with clipped precision and brevity penalty; no \
                 smoothing; orders without candidate n-grams are excluded"
                    .into(),
            kn_discount: KN_DISCOUNT,
            seed,
            mode,
            variational: model.cfg.variant == Variant::Variational,
            train_examples: train.len(),
            test_examples: test.len(),
        },
        types,
        pairs,
        label_dependence: dependence,
    })
}
