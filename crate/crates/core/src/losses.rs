//! Loss functions for distribution-controlled style disentanglement.
//!
//! Five terms compose the training objective:
//!
//! 1. **Reconstruction** — token-mean negative log-likelihood of the decoder;
//!    the variational variant adds a KL regularizer against the standard
//!    normal prior over the *full* latent (style slots and content alike),
//!    averaged over the batch.
//! 2. **Style attachment** — negative log posterior probability of each
//!    example's labeled value given its encoded style vector, under the
//!    Gaussian bank with schema priors.
//! 3. **Style classification** — samples drawn from each value's
//!    distribution must be classified back to that value by the prior-free
//!    density ratio, keeping the distributions separated.
//! 4. **Style–content disentanglement** — content-conditioned class
//!    Gaussians are pushed together across values (prior-weighted KL upper
//!    bound) while a weighted likelihood term keeps them defined.
//! 5. **Multi-type disentanglement** — for every ordered pair of distinct
//!    style types, the posterior over type `i` should be sharp at the
//!    encoded vector `s_i` while the posterior over type `j` stays flat both
//!    at `s_i` and at a fresh sample from the labeled distribution of `i`.
//!
//! Every term has a tape builder (differentiable) producing a scalar `Var`;
//! [`build_objective`] assembles the weighted total for one mini-batch.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::PAD;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::{normal_matrix, SeedRng};
use crate::seqae::{decode_graph, encode_graph, split_graph, Batch, Model, TapeParams};
use crate::style_space::EPS_REG;
use crate::tape::{Tape, Var};

/// Scalar weights of the composite objective.
///
/// `total = recon + attachment*L_al + classification*L_cl + style_content*L_sc + multitype*L_m`,
/// with `kl` applied inside the reconstruction term (variational variant
/// only) and `style_content_nll` applied inside the style–content term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Weight of the style attachment loss.
    pub attachment: f64,
    /// Weight of the style classification loss.
    pub classification: f64,
    /// Weight of the style-content disentanglement loss.
    pub style_content: f64,
    /// Weight of the multi-type disentanglement loss.
    pub multitype: f64,
    /// Weight of the variational KL regularizer (inside the recon term).
    pub kl: f64,
    /// Weight of the likelihood term inside the style-content loss.
    pub style_content_nll: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            attachment: 1.0,
            classification: 0.5,
            style_content: 0.8,
            multitype: 0.4,
            kl: 0.01,
            style_content_nll: 0.1,
        }
    }
}

impl LossWeights {
    /// Every weight must be non-negative.
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("attachment", self.attachment),
            ("classification", self.classification),
            ("style_content", self.style_content),
            ("multitype", self.multitype),
            ("kl", self.kl),
            ("style_content_nll", self.style_content_nll),
        ];
        for (name, value) in named {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::Config(format!(
                    "loss weight `{name}` must be finite and non-negative, got {value}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-term loss values for one step, as logged to the training JSONL.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub attachment: f64,
    pub classification: f64,
    pub style_content: f64,
    pub multitype: f64,
    pub total: f64,
}

/// Combine raw term values into a [`LossBreakdown`], rejecting non-finite
/// terms with an error that names the offender.
pub fn total_objective(
    recon: f64,
    attachment: f64,
    classification: f64,
    style_content: f64,
    multitype: f64,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let named = [
        ("recon", recon),
        ("attachment", attachment),
        ("classification", classification),
        ("style_content", style_content),
        ("multitype", multitype),
    ];
    for (name, value) in named {
        if !value.is_finite() {
            return Err(Error::numerical(name, format!("non-finite loss term: {value}")));
        }
    }
    let total = recon
        + weights.attachment * attachment
        + weights.classification * classification
        + weights.style_content * style_content
        + weights.multitype * multitype;
    if !total.is_finite() {
        return Err(Error::numerical("total", format!("non-finite loss total: {total}")));
    }
    Ok(LossBreakdown { recon, attachment, classification, style_content, multitype, total })
}

/// Options controlling objective assembly that are not plain weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossOptions {
    /// Monte-Carlo sample count per style value in the classification loss.
    pub m_samples: usize,
    /// When set, the decoder is conditioned on a latent whose style slots
    /// are replaced by fresh samples from each example's labeled value
    /// distribution rather than the encoder outputs.
    pub resample_for_recon: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions { m_samples: 8, resample_for_recon: false }
    }
}

impl LossOptions {
    pub fn validate(&self) -> Result<()> {
        if self.m_samples == 0 {
            return Err(Error::Config("m_samples must be at least 1".into()));
        }
        Ok(())
    }
}

/// All stochastic draws consumed by one objective evaluation, in draw order.
///
/// Keeping the draws explicit makes the graph a pure function of
/// `(parameters, batch, noise)`, which the gradient checks and the
/// determinism tests rely on.
#[derive(Debug, Clone)]
pub struct ObjectiveNoise<F> {
    /// Reparameterization noise for the variational encoder, `B x latent_dim`.
    pub encode: Option<Array2<F>>,
    /// Classification-loss draws, `[type][value]` each `M x d_s`.
    pub classification: Vec<Vec<Array2<F>>>,
    /// Multi-type draws, one `B x d_s` matrix per type (one row per example).
    pub multitype: Vec<Array2<F>>,
    /// Style-resampling draws for the reconstruction path, per type `B x d_s`.
    pub recon_resample: Vec<Array2<F>>,
}

impl<F: Real> ObjectiveNoise<F> {
    /// Draw every noise matrix the objective will need, in a fixed order:
    /// encoder noise, then classification draws (by type, then value), then
    /// multi-type draws (by type), then recon-resampling draws (by type).
    /// Terms whose weight is exactly zero draw nothing.
    pub fn draw(
        model: &Model<F>,
        batch_size: usize,
        weights: &LossWeights,
        opts: &LossOptions,
        rng: &mut SeedRng,
    ) -> Self {
        let cfg = &model.cfg;
        let ds = cfg.style_dim;
        let groups = cfg.group_count;
        let encode = matches!(cfg.variant, crate::seqae::Variant::Variational)
            .then(|| normal_matrix(rng, batch_size, cfg.latent_dim()).mapv(F::from_f64));
        let classification = if weights.classification > 0.0 {
            model
                .value_counts
                .iter()
                .map(|&count| {
                    (0..count)
                        .map(|_| normal_matrix(rng, opts.m_samples, ds).mapv(F::from_f64))
                        .collect()
                })
                .collect()
        } else {
            Vec::new()
        };
        let multitype = if weights.multitype > 0.0 && groups >= 2 {
            (0..groups).map(|_| normal_matrix(rng, batch_size, ds).mapv(F::from_f64)).collect()
        } else {
            Vec::new()
        };
        let recon_resample = if opts.resample_for_recon {
            (0..groups).map(|_| normal_matrix(rng, batch_size, ds).mapv(F::from_f64)).collect()
        } else {
            Vec::new()
        };
        ObjectiveNoise { encode, classification, multitype, recon_resample }
    }
}

/// Scalar graph nodes for each objective term plus the weighted total.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveParts {
    pub recon: Var,
    pub attachment: Var,
    pub classification: Var,
    pub style_content: Var,
    pub multitype: Var,
    pub total: Var,
}

impl ObjectiveParts {
    /// Read the term values off the tape and combine them into a breakdown.
    pub fn breakdown<F: Real>(&self, tape: &Tape<F>, weights: &LossWeights) -> Result<LossBreakdown> {
        total_objective(
            tape.scalar(self.recon).to_f64(),
            tape.scalar(self.attachment).to_f64(),
            tape.scalar(self.classification).to_f64(),
            tape.scalar(self.style_content).to_f64(),
            tape.scalar(self.multitype).to_f64(),
            weights,
        )
    }
}

/// Build the full training objective for one mini-batch, drawing all noise
/// from `rng`. See [`build_objective_with_noise`] for the deterministic core.
pub fn build_objective<F: Real>(
    model: &Model<F>,
    tape: &mut Tape<F>,
    params: &TapeParams,
    batch: &Batch,
    priors: &[Vec<f64>],
    weights: &LossWeights,
    opts: &LossOptions,
    rng: &mut SeedRng,
) -> ObjectiveParts {
    let noise = ObjectiveNoise::draw(model, batch.size, weights, opts, rng);
    build_objective_with_noise(model, tape, params, batch, priors, weights, opts, &noise)
}

/// Deterministic objective assembly from pre-drawn noise.
///
/// Terms with weight exactly zero are skipped entirely (their slot in the
/// result is a constant zero leaf), so an ablated term contributes neither
/// value nor gradient.
pub fn build_objective_with_noise<F: Real>(
    model: &Model<F>,
    tape: &mut Tape<F>,
    params: &TapeParams,
    batch: &Batch,
    priors: &[Vec<f64>],
    weights: &LossWeights,
    opts: &LossOptions,
    noise: &ObjectiveNoise<F>,
) -> ObjectiveParts {
    let cfg = &model.cfg;
    let groups = cfg.group_count;
    assert_eq!(priors.len(), groups, "one prior vector per style type");

    let enc = encode_graph(model, tape, params, batch, noise.encode.as_ref());
    let (styles, content_opt) = split_graph(tape, enc.latent, cfg);

    // Reconstruction: token-mean NLL, decoding either the encoded latent or
    // one whose style slots were resampled from the labeled distributions.
    let dec_latent = if opts.resample_for_recon && groups > 0 {
        let mut slots = Vec::with_capacity(groups + 1);
        for t in 0..groups {
            let eps = tape.leaf(noise.recon_resample[t].clone());
            let per_value = sample_values_graph(model, tape, params, "style", t, eps);
            slots.push(tape.select_rows(&per_value, batch.labels[t].clone()));
        }
        if let Some(content) = content_opt {
            slots.push(content);
        }
        tape.concat_cols(&slots)
    } else {
        enc.latent
    };
    let dec = decode_graph(model, tape, params, dec_latent, batch);
    let mut recon = tape.scale(dec.nll, F::from_f64(1.0 / batch.token_count as f64));
    if let (Some(mean), Some(logvar)) = (enc.mean, enc.logvar) {
        if weights.kl > 0.0 {
            let kl = vae_kl_graph(tape, mean, logvar, batch.size);
            let scaled = tape.scale(kl, F::from_f64(weights.kl));
            recon = tape.add(recon, scaled);
        }
    }

    let attachment = if weights.attachment > 0.0 && groups > 0 {
        attachment_graph(model, tape, params, &styles, &batch.labels, priors)
    } else {
        tape.leaf(Array2::zeros((1, 1)))
    };

    let classification = if weights.classification > 0.0 && groups > 0 {
        classification_graph(model, tape, params, &noise.classification)
    } else {
        tape.leaf(Array2::zeros((1, 1)))
    };

    let style_content = match content_opt {
        Some(content) if weights.style_content > 0.0 && groups > 0 => style_content_graph(
            model,
            tape,
            params,
            content,
            &batch.labels,
            priors,
            weights.style_content_nll,
        ),
        _ => tape.leaf(Array2::zeros((1, 1))),
    };

    let multitype = if weights.multitype > 0.0 && groups >= 2 {
        multitype_graph(model, tape, params, &styles, &batch.labels, priors, &noise.multitype)
    } else {
        tape.leaf(Array2::zeros((1, 1)))
    };

    let mut total = recon;
    for (var, weight) in [
        (attachment, weights.attachment),
        (classification, weights.classification),
        (style_content, weights.style_content),
        (multitype, weights.multitype),
    ] {
        if weight > 0.0 {
            let scaled = tape.scale(var, F::from_f64(weight));
            total = tape.add(total, scaled);
        }
    }

    ObjectiveParts { recon, attachment, classification, style_content, multitype, total }
}

/// Analytic KL between the diagonal posterior `N(mean, exp(logvar))` and the
/// standard normal prior, summed over latent dimensions and averaged over
/// the batch: `(1/B) * sum_b 0.5 * sum_j (mean^2 + e^logvar - logvar - 1)`.
///
/// The regularizer covers the full latent — style slots and the content
/// slice alike.
pub fn vae_kl_graph<F: Real>(tape: &mut Tape<F>, mean: Var, logvar: Var, batch_size: usize) -> Var {
    let mean_sq = tape.mul(mean, mean);
    let var = tape.exp(logvar);
    let sum = tape.add(mean_sq, var);
    let sum = tape.sub(sum, logvar);
    let sum = tape.add_scalar(sum, F::from_f64(-1.0));
    let total = tape.sum_all(sum);
    tape.scale(total, F::from_f64(0.5 / batch_size as f64))
}

/// Style attachment loss: the mean over examples of the summed negative log
/// posterior probability of each labeled value, one term per style type,
/// with posteriors computed under the schema priors.
pub fn attachment_graph<F: Real>(
    model: &Model<F>,
    tape: &mut Tape<F>,
    params: &TapeParams,
    styles: &[Var],
    labels: &[std::sync::Arc<Vec<usize>>],
    priors: &[Vec<f64>],
) -> Var {
    let batch_size = labels[0].len();
    let mut acc: Option<Var> = None;
    for (t, &style) in styles.iter().enumerate() {
        let log_post = log_posterior_graph(model, tape, params, "style", t, style, Some(&priors[t]));
        let picked = tape.pick_per_row(log_post, labels[t].clone());
        let sum = tape.sum_all(picked);
        acc = Some(match acc {
            Some(prev) => tape.add(prev, sum),
            None => sum,
        });
    }
    let total = acc.expect("attachment requires at least one style type");
    tape.scale(total, F::from_f64(-1.0 / batch_size as f64))
}

/// Style classification loss: for every type and value, `M` reparameterized
/// samples from that value's distribution are scored by the prior-free
/// classification probability; the loss is the negative mean log probability
/// of the correct value, normalized by `M` times the total number of values.
pub fn classification_graph<F: Real>(
    model: &Model<F>,
    tape: &mut Tape<F>,
    params: &TapeParams,
    eps: &[Vec<Array2<F>>],
) -> Var {
    assert_eq!(eps.len(), model.value_counts.len(), "one eps group per style type");
    let total_values: usize = model.value_counts.iter().sum();
    let m = eps[0][0].nrows();
    let mut acc: Option<Var> = None;
    for (t, &count) in model.value_counts.iter().enumerate() {
        assert_eq!(eps[t].len(), count, "one eps matrix per value");
        for v in 0..count {
            assert_eq!(eps[t][v].nrows(), m, "all eps matrices share the sample count");
            let eps_leaf = tape.leaf(eps[t][v].clone());
            let samples = sample_value_graph(tape, params, "style", t, v, eps_leaf);
            let log_prob = log_posterior_graph(model, tape, params, "style", t, samples, None);
            let picked =
                tape.pick_per_row(log_prob, std::sync::Arc::new(vec![v; m]));
            let sum = tape.sum_all(picked);
            acc = Some(match acc {
                Some(prev) => tape.add(prev, sum),
                None => sum,
            });
        }
    }
    let total = acc.expect("classification requires at least one style value");
    tape.scale(total, F::from_f64(-1.0 / (m as f64 * total_values as f64)))
}

/// Style–content disentanglement loss, summed over types:
///
/// * a prior-weighted KL upper bound pushing the content-conditioned class
///   Gaussian of each example's label toward the class Gaussians of every
///   value of the same type (batch-averaged), plus
/// * `nll_weight` times the negative mean log density of the content vector
///   under its label's class Gaussian, which keeps the class Gaussians fit
///   to the content distribution they summarize.
pub fn style_content_graph<F: Real>(
    model: &Model<F>,
    tape: &mut Tape<F>,
    params: &TapeParams,
    content: Var,
    labels: &[std::sync::Arc<Vec<usize>>],
    priors: &[Vec<f64>],
    nll_weight: f64,
) -> Var {
    let batch_size = labels[0].len();
    let eps_reg = F::from_f64(EPS_REG);
    let mut acc: Option<Var> = None;
    for (t, &count) in model.value_counts.iter().enumerate() {
        // KL part: class-level Gaussians only, so the batch enters solely
        // through label frequencies.
        let mut label_counts = vec![0usize; count];
        for &label in labels[t].iter() {
            label_counts[label] += 1;
        }
        let mut kl_part: Option<Var> = None;
        for (value, &occurrences) in label_counts.iter().enumerate() {
            if occurrences == 0 {
                continue;
            }
            let freq = occurrences as f64 / batch_size as f64;
            let mean_p = params.var(&format!("content.t{t}.v{value}.mu"));
            let factor_p = params.var(&format!("content.t{t}.v{value}.a"));
            for (other, &prior) in priors[t].iter().enumerate() {
                if prior == 0.0 {
                    continue;
                }
                let mean_q = params.var(&format!("content.t{t}.v{other}.mu"));
                let factor_q = params.var(&format!("content.t{t}.v{other}.a"));
                let kl = tape.gaussian_kl(factor_p, mean_p, factor_q, mean_q, eps_reg);
                let weighted = tape.scale(kl, F::from_f64(freq * prior));
                kl_part = Some(match kl_part {
                    Some(prev) => tape.add(prev, weighted),
                    None => weighted,
                });
            }
        }

        // Likelihood part: mean negative log density of content under the
        // label's class Gaussian.
        let mut per_value = Vec::with_capacity(count);
        for v in 0..count {
            let mean = params.var(&format!("content.t{t}.v{v}.mu"));
            let factor = params.var(&format!("content.t{t}.v{v}.a"));
            per_value.push(tape.gaussian_log_pdf(factor, mean, content, eps_reg));
        }
        let picked = tape.select_rows(&per_value, labels[t].clone());
        let sum = tape.sum_all(picked);
        let nll = tape.scale(sum, F::from_f64(-nll_weight / batch_size as f64));

        let type_total = match kl_part {
            Some(kl) => tape.add(kl, nll),
            None => nll,
        };
        acc = Some(match acc {
            Some(prev) => tape.add(prev, type_total),
            None => type_total,
        });
    }
    acc.expect("style-content requires at least one style type")
}

/// Multi-type disentanglement loss (zero when fewer than two types).
///
/// Per example, for every ordered pair of distinct types `(i, j)`:
/// `H(p(t_i | s_i)) - H(p(t_j | s_i)) - H(p(t_j | s~_i))`, where posteriors
/// use the schema priors, the cross-type posterior evaluates type `j`'s bank
/// at a vector from type `i`'s slot (the shared style dimensionality makes
/// this well-typed), and `s~_i` is one fresh sample per example from the
/// labeled value distribution of type `i`. The loss is the batch mean of the
/// per-example sums.
pub fn multitype_graph<F: Real>(
    model: &Model<F>,
    tape: &mut Tape<F>,
    params: &TapeParams,
    styles: &[Var],
    labels: &[std::sync::Arc<Vec<usize>>],
    priors: &[Vec<f64>],
    eps: &[Array2<F>],
) -> Var {
    let groups = model.value_counts.len();
    if groups < 2 {
        return tape.leaf(Array2::zeros((1, 1)));
    }
    assert_eq!(eps.len(), groups, "one eps matrix per style type");
    let batch_size = labels[0].len();

    // Entropy of each type's own posterior at its encoded vector, built once.
    let own_entropy: Vec<Var> = (0..groups)
        .map(|i| {
            let log_post =
                log_posterior_graph(model, tape, params, "style", i, styles[i], Some(&priors[i]));
            tape.entropy_rows(log_post)
        })
        .collect();

    // One labeled-distribution sample per example for each type.
    let sampled: Vec<Var> = (0..groups)
        .map(|i| {
            let eps_leaf = tape.leaf(eps[i].clone());
            let per_value = sample_values_graph(model, tape, params, "style", i, eps_leaf);
            tape.select_rows(&per_value, labels[i].clone())
        })
        .collect();

    let mut acc: Option<Var> = None;
    for i in 0..groups {
        for j in 0..groups {
            if i == j {
                continue;
            }
            let cross_enc =
                log_posterior_graph(model, tape, params, "style", j, styles[i], Some(&priors[j]));
            let h_cross_enc = tape.entropy_rows(cross_enc);
            let cross_sample =
                log_posterior_graph(model, tape, params, "style", j, sampled[i], Some(&priors[j]));
            let h_cross_sample = tape.entropy_rows(cross_sample);
            let diff = tape.sub(own_entropy[i], h_cross_enc);
            let diff = tape.sub(diff, h_cross_sample);
            acc = Some(match acc {
                Some(prev) => tape.add(prev, diff),
                None => diff,
            });
        }
    }
    let per_example = acc.expect("at least one ordered type pair");
    let total = tape.sum_all(per_example);
    tape.scale(total, F::from_f64(1.0 / batch_size as f64))
}

/// Log posterior (or prior-free classification log probability) over the
/// values of one type, evaluated row-wise at `at` (`B x d`): per-value
/// Gaussian log densities, optionally shifted by log priors, then
/// row-normalized in log space.
fn log_posterior_graph<F: Real>(
    model: &Model<F>,
    tape: &mut Tape<F>,
    params: &TapeParams,
    kind: &str,
    type_index: usize,
    at: Var,
    prior: Option<&[f64]>,
) -> Var {
    let count = model.value_counts[type_index];
    let eps_reg = F::from_f64(EPS_REG);
    let mut cols = Vec::with_capacity(count);
    for v in 0..count {
        let mean = params.var(&format!("{kind}.t{type_index}.v{v}.mu"));
        let factor = params.var(&format!("{kind}.t{type_index}.v{v}.a"));
        cols.push(tape.gaussian_log_pdf(factor, mean, at, eps_reg));
    }
    let mut logits = tape.concat_cols(&cols);
    if let Some(prior) = prior {
        assert_eq!(prior.len(), count, "prior length must match value count");
        let log_prior = Array2::from_shape_fn((1, count), |(_, v)| {
            if prior[v] > 0.0 {
                F::from_f64(prior[v].ln())
            } else {
                F::neg_infinity()
            }
        });
        let prior_leaf = tape.leaf(log_prior);
        logits = tape.add_row(logits, prior_leaf);
    }
    tape.log_softmax_rows(logits)
}

/// Reparameterized samples from one value's distribution: `eps @ A^T + mu`.
fn sample_value_graph<F: Real>(
    tape: &mut Tape<F>,
    params: &TapeParams,
    kind: &str,
    type_index: usize,
    value: usize,
    eps: Var,
) -> Var {
    let mean = params.var(&format!("{kind}.t{type_index}.v{value}.mu"));
    let factor = params.var(&format!("{kind}.t{type_index}.v{value}.a"));
    let factor_t = tape.transpose(factor);
    let scaled = tape.matmul(eps, factor_t);
    tape.add_row(scaled, mean)
}

/// Samples from every value of one type, sharing the same eps rows.
fn sample_values_graph<F: Real>(
    model: &Model<F>,
    tape: &mut Tape<F>,
    params: &TapeParams,
    kind: &str,
    type_index: usize,
    eps: Var,
) -> Vec<Var> {
    (0..model.value_counts[type_index])
        .map(|v| sample_value_graph(tape, params, kind, type_index, v, eps))
        .collect()
}

/// Count of non-pad tokens plus one end-of-sequence prediction per example;
/// exposed for callers that normalize external NLL sums the same way the
/// reconstruction term does.
pub fn token_count(examples: &[crate::corpus::LabeledExample]) -> usize {
    examples.iter().map(|ex| ex.tokens.iter().filter(|&&t| t != PAD).count() + 1).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LabeledExample;
    use crate::rng::substream;
    use crate::seqae::{ModelConfig, Variant};
    use crate::style_space::{
        categorical_entropy, gaussian_kl, GaussianStyleDistribution, StyleSpaceBank, TypeBank,
    };
    use crate::tape::test_support::grad_check;
    use ndarray::{array, Array1};
    use std::sync::Arc;

    const LN_2: f64 = 0.6931471805599453;

    fn tiny_config(groups: usize, variant: Variant) -> ModelConfig {
        ModelConfig {
            vocab_size: 9,
            embed_dim: 3,
            hidden_size: 4,
            layers: 1,
            max_len: 6,
            group_count: groups,
            style_dim: 2,
            content_dim: 2,
            variant,
            refeed_latent: false,
        }
    }

    fn tiny_model(groups: usize, variant: Variant, seed: u64) -> Model<f64> {
        let cfg = tiny_config(groups, variant);
        let counts = vec![2; groups];
        Model::new(cfg, counts, seed).unwrap()
    }

    fn tiny_batch(groups: usize) -> (Vec<LabeledExample>, Batch) {
        let examples = vec![
            LabeledExample { tokens: vec![4, 5, 6], labels: vec![0; groups] },
            LabeledExample { tokens: vec![7, 8], labels: vec![1; groups] },
            LabeledExample { tokens: vec![5, 4, 8, 6], labels: vec![0; groups] },
            LabeledExample { tokens: vec![6], labels: vec![1; groups] },
        ];
        let batch = Batch::new(&examples, groups);
        (examples, batch)
    }

    fn set_param(model: &mut Model<f64>, name: &str, values: Array2<f64>) {
        let tensor = model.params.get_mut(name);
        assert_eq!(tensor.dim(), values.dim(), "shape mismatch for {name}");
        *tensor = values;
    }

    fn set_style(model: &mut Model<f64>, kind: &str, t: usize, v: usize, mu: &[f64], a: Array2<f64>) {
        let d = mu.len();
        set_param(
            model,
            &format!("{kind}.t{t}.v{v}.mu"),
            Array2::from_shape_vec((1, d), mu.to_vec()).unwrap(),
        );
        set_param(model, &format!("{kind}.t{t}.v{v}.a"), a);
    }

    /// Rebuild the style bank of `model` as the plain-value structure, for
    /// loop oracles that must not share code with the graph path.
    fn plain_style_bank(model: &Model<f64>, priors: &[Vec<f64>]) -> StyleSpaceBank<f64> {
        let mut types = Vec::new();
        for (t, &count) in model.value_counts.iter().enumerate() {
            let mut dists = Vec::new();
            for v in 0..count {
                let mu = model.params.get(&format!("style.t{t}.v{v}.mu"));
                let a = model.params.get(&format!("style.t{t}.v{v}.a"));
                dists.push(GaussianStyleDistribution::new(mu.row(0).to_owned(), a.clone()));
            }
            types.push(TypeBank::new(dists, Array1::from_vec(priors[t].clone())));
        }
        StyleSpaceBank::new(types, EPS_REG)
    }

    /// Plain-value distribution for one content class Gaussian.
    fn plain_content_dist(model: &Model<f64>, t: usize, v: usize) -> GaussianStyleDistribution<f64> {
        let mu = model.params.get(&format!("content.t{t}.v{v}.mu"));
        let a = model.params.get(&format!("content.t{t}.v{v}.a"));
        GaussianStyleDistribution::new(mu.row(0).to_owned(), a.clone())
    }

    #[test]
    fn weights_default_and_validate() {
        let w = LossWeights::default();
        assert_eq!(w.attachment, 1.0);
        assert_eq!(w.classification, 0.5);
        assert_eq!(w.style_content, 0.8);
        assert_eq!(w.multitype, 0.4);
        assert_eq!(w.kl, 0.01);
        assert_eq!(w.style_content_nll, 0.1);
        w.validate().unwrap();
        let bad = LossWeights { attachment: -0.1, ..w };
        assert!(bad.validate().is_err());
        // JSON round-trip with defaults for missing keys.
        let parsed: LossWeights = serde_json::from_str("{\"multitype\": 0.0}").unwrap();
        assert_eq!(parsed.multitype, 0.0);
        assert_eq!(parsed.attachment, 1.0);
        assert!(serde_json::from_str::<LossWeights>("{\"zeta\": 1.0}").is_err());
    }

    #[test]
    fn total_objective_arithmetic() {
        let w = LossWeights::default();
        // Dyadic inputs so the expectation is exact.
        let b = total_objective(0.5, 0.25, 0.125, 0.0625, -0.03125, &w).unwrap();
        assert!((b.total - 0.85).abs() < 1e-15);
        assert_eq!(b.recon, 0.5);
        let zero = LossWeights {
            attachment: 0.0,
            classification: 0.0,
            style_content: 0.0,
            multitype: 0.0,
            ..w
        };
        let b = total_objective(1.25, 9.0, 9.0, 9.0, 9.0, &zero).unwrap();
        assert_eq!(b.total, 1.25);
        // Invariant: total recomposes from the parts.
        let b = total_objective(1.1, 0.3, 0.7, 0.2, -0.1, &w).unwrap();
        let recomposed = b.recon
            + w.attachment * b.attachment
            + w.classification * b.classification
            + w.style_content * b.style_content
            + w.multitype * b.multitype;
        assert!((b.total - recomposed).abs() < 1e-9);
    }

    #[test]
    fn total_objective_names_non_finite_term() {
        let w = LossWeights::default();
        let err = total_objective(f64::NAN, 0.0, 0.0, 0.0, 0.0, &w).unwrap_err();
        assert!(err.to_string().contains("recon"), "{err}");
        let err = total_objective(0.0, 0.0, f64::INFINITY, 0.0, 0.0, &w).unwrap_err();
        assert!(err.to_string().contains("classification"), "{err}");
    }

    #[test]
    fn recon_zero_logits_is_log_vocab() {
        // The decoder output head is zero-initialized, so an untrained model
        // assigns the uniform distribution to every step: the token-mean NLL
        // is exactly ln(vocab_size).
        let model = tiny_model(1, Variant::Vanilla, 7);
        let (_, batch) = tiny_batch(1);
        let weights = LossWeights {
            attachment: 0.0,
            classification: 0.0,
            style_content: 0.0,
            multitype: 0.0,
            ..LossWeights::default()
        };
        let mut tape = Tape::new();
        let params = model.push_leaves(&mut tape);
        let mut rng = substream(3, "test");
        let parts = build_objective(
            &model,
            &mut tape,
            &params,
            &batch,
            &[vec![0.5, 0.5]],
            &weights,
            &LossOptions::default(),
            &mut rng,
        );
        let b = parts.breakdown(&tape, &weights).unwrap();
        assert!((b.recon - (9f64).ln()).abs() < 1e-12, "recon {}", b.recon);
        assert!((b.total - b.recon).abs() < 1e-15);
        assert_eq!(b.attachment, 0.0);
        assert_eq!(b.multitype, 0.0);
    }

    #[test]
    fn vae_kl_closed_forms() {
        // KL(N(0,1) || N(0,1)) = 0.
        let mut tape: Tape<f64> = Tape::new();
        let mean = tape.leaf(Array2::zeros((1, 3)));
        let logvar = tape.leaf(Array2::zeros((1, 3)));
        let kl = vae_kl_graph(&mut tape, mean, logvar, 1);
        assert!(tape.scalar(kl).abs() < 1e-15);

        // Unit variance, mean m: KL = m^2 / 2 per dimension.
        let m = 1.75f64;
        let mut tape: Tape<f64> = Tape::new();
        let mean = tape.leaf(array![[m]]);
        let logvar = tape.leaf(array![[0.0]]);
        let kl = vae_kl_graph(&mut tape, mean, logvar, 1);
        assert!((tape.scalar(kl) - m * m / 2.0).abs() < 1e-12);

        // Batch averaging: two identical rows give the same value as one.
        let mut tape: Tape<f64> = Tape::new();
        let mean = tape.leaf(array![[m], [m]]);
        let logvar = tape.leaf(array![[0.0], [0.0]]);
        let kl = vae_kl_graph(&mut tape, mean, logvar, 2);
        assert!((tape.scalar(kl) - m * m / 2.0).abs() < 1e-12);
    }

    #[test]
    fn vae_kl_strictly_increasing_in_content_mean() {
        // The regularizer covers the entire latent, so growing the content
        // slice of the posterior mean must strictly grow the KL.
        let style_mean = [0.3, -0.2];
        let mut previous = f64::NEG_INFINITY;
        for scale in [0.0, 0.5, 1.0, 2.0, 4.0] {
            let mut tape: Tape<f64> = Tape::new();
            let mean = tape.leaf(array![[style_mean[0], style_mean[1], 0.9 * scale, -0.4 * scale]]);
            let logvar = tape.leaf(Array2::zeros((1, 4)));
            let kl = vae_kl_graph(&mut tape, mean, logvar, 1);
            let value = tape.scalar(kl);
            assert!(
                value > previous,
                "KL must strictly increase with the content-slice mean: {value} vs {previous}"
            );
            previous = value;
        }
    }

    #[test]
    fn attachment_symmetric_midpoint_is_ln2() {
        let mut model = tiny_model(1, Variant::Vanilla, 11);
        let eye = Array2::eye(2);
        set_style(&mut model, "style", 0, 0, &[1.0, 1.0], eye.clone());
        set_style(&mut model, "style", 0, 1, &[-1.0, -1.0], eye);
        let mut tape = Tape::new();
        let params = model.push_leaves(&mut tape);
        // One example whose style vector sits exactly between the two means.
        let styles = vec![tape.leaf(Array2::zeros((1, 2)))];
        let labels = vec![Arc::new(vec![0usize])];
        let value = attachment_graph(
            &model,
            &mut tape,
            &params,
            &styles,
            &labels,
            &[vec![0.5, 0.5]],
        );
        assert!((tape.scalar(value) - LN_2).abs() < 1e-12);
    }

    #[test]
    fn attachment_peaked_posterior_near_zero() {
        let mut model = tiny_model(1, Variant::Vanilla, 11);
        let eye = Array2::eye(2);
        set_style(&mut model, "style", 0, 0, &[8.0, 8.0], eye.clone());
        set_style(&mut model, "style", 0, 1, &[-8.0, -8.0], eye);
        let mut tape = Tape::new();
        let params = model.push_leaves(&mut tape);
        let styles = vec![tape.leaf(array![[8.0, 8.0]])];
        let labels = vec![Arc::new(vec![0usize])];
        let value = attachment_graph(
            &model,
            &mut tape,
            &params,
            &styles,
            &labels,
            &[vec![0.5, 0.5]],
        );
        let v = tape.scalar(value);
        assert!(v >= 0.0, "attachment is a negative log probability: {v}");
        assert!(v < 1e-6, "peaked posterior should attach almost surely: {v}");
    }

    #[test]
    fn attachment_matches_loop_oracle() {
        let model = tiny_model(2, Variant::Vanilla, 23);
        let priors = vec![vec![0.3, 0.7], vec![0.6, 0.4]];
        let mut rng = substream(41, "oracle.attach");
        let style_values: Vec<Array2<f64>> =
            (0..2).map(|_| normal_matrix(&mut rng, 5, 2)).collect();
        let labels = vec![Arc::new(vec![0, 1, 1, 0, 1]), Arc::new(vec![1, 1, 0, 0, 0])];

        let mut tape = Tape::new();
        let params = model.push_leaves(&mut tape);
        let styles: Vec<Var> = style_values.iter().map(|v| tape.leaf(v.clone())).collect();
        let graph = attachment_graph(&model, &mut tape, &params, &styles, &labels, &priors);
        let graph_value = tape.scalar(graph);

        // Independent loop oracle over the plain-value bank.
        let bank = plain_style_bank(&model, &priors);
        let mut total = 0.0;
        for b in 0..5 {
            for t in 0..2 {
                let post = bank.posterior(t, &style_values[t].row(b)).unwrap();
                total -= post[labels[t][b]].ln();
            }
        }
        let oracle = total / 5.0;
        assert!(
            (graph_value - oracle).abs() < 1e-10,
            "graph {graph_value} vs oracle {oracle}"
        );
    }

    #[test]
    fn classification_identical_values_is_ln2() {
        // Two values with identical parameters: every sample is classified
        // with probability exactly 1/2, so the loss is exactly ln 2.
        let mut model = tiny_model(1, Variant::Vanilla, 19);
        let a = array![[0.8, 0.0], [0.1, 0.6]];
        set_style(&mut model, "style", 0, 0, &[0.4, -0.2], a.clone());
        set_style(&mut model, "style", 0, 1, &[0.4, -0.2], a);
        let mut rng = substream(5, "cls.eps");
        let eps = vec![vec![normal_matrix(&mut rng, 100, 2), normal_matrix(&mut rng, 100, 2)]];
        let mut tape = Tape::new();
        let params = model.push_leaves(&mut tape);
        let value = classification_graph(&model, &mut tape, &params, &eps);
        assert!((tape.scalar(value) - LN_2).abs() < 1e-9);
    }

    #[test]
    fn classification_separated_values_near_zero() {
        // Means 100 standard deviations apart: essentially every sample is
        // classified correctly with overwhelming confidence.
        let mut model = tiny_model(1, Variant::Vanilla, 19);
        let eye = Array2::eye(2);
        set_style(&mut model, "style", 0, 0, &[0.0, 0.0], eye.clone());
        set_style(&mut model, "style", 0, 1, &[100.0, 0.0], eye);
        let mut rng = substream(6, "cls.eps");
        let eps = vec![vec![normal_matrix(&mut rng, 50, 2), normal_matrix(&mut rng, 50, 2)]];
        let mut tape = Tape::new();
        let params = model.push_leaves(&mut tape);
        let value = classification_graph(&model, &mut tape, &params, &eps);
        let v = tape.scalar(value);
        assert!(v >= 0.0);
        assert!(v < 1e-4, "separated values should classify perfectly: {v}");
    }

    #[test]
    fn classification_matches_loop_oracle() {
        let model = tiny_model(2, Variant::Vanilla, 31);
        let mut rng = substream(9, "cls.oracle");
        let m = 6;
        let eps: Vec<Vec<Array2<f64>>> = (0..2)
            .map(|_| (0..2).map(|_| normal_matrix(&mut rng, m, 2)).collect())
            .collect();

        let mut tape = Tape::new();
        let params = model.push_leaves(&mut tape);
        let graph = classification_graph(&model, &mut tape, &params, &eps);
        let graph_value = tape.scalar(graph);

        let bank = plain_style_bank(&model, &[vec![0.5, 0.5], vec![0.5, 0.5]]);
        let mut total = 0.0;
        for t in 0..2 {
            for v in 0..2 {
                let mu = model.params.get(&format!("style.t{t}.v{v}.mu"));
                let a = model.params.get(&format!("style.t{t}.v{v}.a"));
                for s in 0..m {
                    let sample = a.dot(&eps[t][v].row(s).to_owned()) + mu.row(0);
                    let prob = bank.classification_prob(t, &sample.view()).unwrap();
                    total -= prob[v].ln();
                }
            }
        }
        let oracle = total / (m as f64 * 4.0);
        assert!(
            (graph_value - oracle).abs() < 1e-9,
            "graph {graph_value} vs oracle {oracle}"
        );
    }

    #[test]
    fn classification_deterministic_given_seed() {
        let model = tiny_model(2, Variant::Vanilla, 31);
        let (_, batch) = tiny_batch(2);
        let weights = LossWeights::default();
        let opts = LossOptions::default();
        let priors = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let run = || {
            let mut tape = Tape::new();
            let params = model.push_leaves(&mut tape);
            let mut rng = substream(77, "objective");
            let parts = build_objective(
                &model, &mut tape, &params, &batch, &priors, &weights, &opts, &mut rng,
            );
            parts.breakdown(&tape, &weights).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b, "same seed must reproduce every term bitwise");
    }

    #[test]
    fn style_content_identical_gaussians_has_zero_kl_part() {
        let mut model = tiny_model(1, Variant::Vanilla, 13);
        let a = array![[0.5, 0.0], [0.2, 0.7]];
        set_style(&mut model, "content", 0, 0, &[0.3, 0.1], a.clone());
        set_style(&mut model, "content", 0, 1, &[0.3, 0.1], a);
        let labels = vec![Arc::new(vec![0usize, 1, 0])];
        let priors = vec![vec![0.5, 0.5]];
        let content_values = array![[0.1, -0.3], [0.4, 0.2], [-0.2, 0.0]];

        // With the likelihood weight at zero only the KL part remains, and
        // identical class Gaussians make every KL term vanish.
        let mut tape = Tape::new();
        let params = model.push_leaves(&mut tape);
        let content = tape.leaf(content_values.clone());
        let value =
            style_content_graph(&model, &mut tape, &params, content, &labels, &priors, 0.0);
        assert!(tape.scalar(value).abs() < 1e-12);

        // With a positive weight the loss is exactly weight * NLL.
        let mut tape = Tape::new();
        let params = model.push_leaves(&mut tape);
        let content = tape.leaf(content_values.clone());
        let value =
            style_content_graph(&model, &mut tape, &params, content, &labels, &priors, 0.1);
        let dist = plain_content_dist(&model, 0, 0);
        let mut nll = 0.0;
        for b in 0..3 {
            nll -= dist.log_pdf(&content_values.row(b), EPS_REG).unwrap();
        }
        let expected = 0.1 * nll / 3.0;
        assert!((tape.scalar(value) - expected).abs() < 1e-12);
    }

    #[test]
    fn style_content_single_value_reduces_to_nll() {
        // A type with a single value has no cross-value KL terms at all.
        let cfg = tiny_config(1, Variant::Vanilla);
        let model = Model::<f64>::new(cfg, vec![1], 17).unwrap();
        let labels = vec![Arc::new(vec![0usize, 0])];
        let priors = vec![vec![1.0]];
        let content_values = array![[0.2, 0.5], [-0.1, 0.3]];
        let mut tape = Tape::new();
        let params = model.push_leaves(&mut tape);
        let content = tape.leaf(content_values.clone());
        let value =
            style_content_graph(&model, &mut tape, &params, content, &labels, &priors, 0.25);
        let dist = plain_content_dist(&model, 0, 0);
        let mut nll = 0.0;
        for b in 0..2 {
            nll -= dist.log_pdf(&content_values.row(b), EPS_REG).unwrap();
        }
        let expected = 0.25 * nll / 2.0;
        assert!((tape.scalar(value) - expected).abs() < 1e-12);
    }

    #[test]
    fn style_content_matches_composition_oracle() {
        let model = tiny_model(2, Variant::Vanilla, 37);
        let priors = vec![vec![0.25, 0.75], vec![0.5, 0.5]];
        let labels = vec![Arc::new(vec![0usize, 1, 1, 0]), Arc::new(vec![1usize, 0, 1, 1])];
        let mut rng = substream(12, "sc.oracle");
        let content_values = normal_matrix(&mut rng, 4, 2);
        let nll_weight = 0.1;

        let mut tape = Tape::new();
        let params = model.push_leaves(&mut tape);
        let content = tape.leaf(content_values.clone());
        let graph = style_content_graph(
            &model, &mut tape, &params, content, &labels, &priors, nll_weight,
        );
        let graph_value = tape.scalar(graph);

        // Composition oracle from plain-value distributions.
        let mut oracle = 0.0;
        for t in 0..2 {
            let dists: Vec<GaussianStyleDistribution<f64>> =
                (0..2).map(|v| plain_content_dist(&model, t, v)).collect();
            let mut kl_part = 0.0;
            let mut nll_part = 0.0;
            for b in 0..4 {
                let label = labels[t][b];
                for (other, &p) in priors[t].iter().enumerate() {
                    kl_part += p * gaussian_kl(&dists[label], &dists[other], EPS_REG).unwrap();
                }
                nll_part -= dists[label].log_pdf(&content_values.row(b), EPS_REG).unwrap();
            }
            oracle += kl_part / 4.0 + nll_weight * nll_part / 4.0;
        }
        assert!(
            (graph_value - oracle).abs() < 1e-9,
            "graph {graph_value} vs oracle {oracle}"
        );
    }

    #[test]
    fn style_content_kl_part_nonnegative() {
        // The KL part alone (likelihood weight zero) is a prior-weighted sum
        // of KL divergences, hence non-negative for any parameters.
        let mut rng = substream(55, "sc.nonneg");
        for trial in 0..50 {
            let model = tiny_model(1, Variant::Vanilla, 100 + trial);
            let labels = vec![Arc::new(vec![0usize, 1])];
            let priors = vec![vec![0.5, 0.5]];
            let content_values = normal_matrix(&mut rng, 2, 2);
            let mut tape = Tape::new();
            let params = model.push_leaves(&mut tape);
            let content = tape.leaf(content_values);
            let value =
                style_content_graph(&model, &mut tape, &params, content, &labels, &priors, 0.0);
            assert!(tape.scalar(value) >= -1e-12, "trial {trial}: {}", tape.scalar(value));
        }
    }

    #[test]
    fn multitype_single_type_is_zero() {
        let model = tiny_model(1, Variant::Vanilla, 3);
        let mut tape = Tape::new();
        let params = model.push_leaves(&mut tape);
        let styles = vec![tape.leaf(Array2::zeros((2, 2)))];
        let labels = vec![Arc::new(vec![0usize, 1])];
        let value = multitype_graph(
            &model,
            &mut tape,
            &params,
            &styles,
            &labels,
            &[vec![0.5, 0.5]],
            &[],
        );
        assert_eq!(tape.scalar(value), 0.0);
    }

    #[test]
    fn multitype_uniform_posteriors_value() {
        // Identical value distributions within each type make every
        // posterior uniform: each ordered pair contributes
        // ln2 - ln2 - ln2 = -ln2, and with two types there are two ordered
        // pairs, so each example contributes exactly -2 ln 2.
        let mut model = tiny_model(2, Variant::Vanilla, 29);
        let a = array![[0.9, 0.0], [0.3, 0.5]];
        for t in 0..2 {
            set_style(&mut model, "style", t, 0, &[0.2, -0.6], a.clone());
            set_style(&mut model, "style", t, 1, &[0.2, -0.6], a.clone());
        }
        let mut rng = substream(2, "mt.eps");
        let styles_values: Vec<Array2<f64>> =
            (0..2).map(|_| normal_matrix(&mut rng, 3, 2)).collect();
        let eps: Vec<Array2<f64>> = (0..2).map(|_| normal_matrix(&mut rng, 3, 2)).collect();
        let labels = vec![Arc::new(vec![0usize, 1, 0]), Arc::new(vec![1usize, 1, 0])];
        let mut tape = Tape::new();
        let params = model.push_leaves(&mut tape);
        let styles: Vec<Var> = styles_values.iter().map(|v| tape.leaf(v.clone())).collect();
        let value = multitype_graph(
            &model,
            &mut tape,
            &params,
            &styles,
            &labels,
            &[vec![0.5, 0.5], vec![0.5, 0.5]],
            &eps,
        );
        assert!((tape.scalar(value) - (-2.0 * LN_2)).abs() < 1e-12);
    }

    #[test]
    fn multitype_matches_loop_oracle() {
        let model = tiny_model(2, Variant::Vanilla, 43);
        let priors = vec![vec![0.4, 0.6], vec![0.7, 0.3]];
        let labels = vec![Arc::new(vec![1usize, 0, 0, 1]), Arc::new(vec![0usize, 0, 1, 1])];
        let mut rng = substream(14, "mt.oracle");
        let styles_values: Vec<Array2<f64>> =
            (0..2).map(|_| normal_matrix(&mut rng, 4, 2)).collect();
        let eps: Vec<Array2<f64>> = (0..2).map(|_| normal_matrix(&mut rng, 4, 2)).collect();

        let mut tape = Tape::new();
        let params = model.push_leaves(&mut tape);
        let styles: Vec<Var> = styles_values.iter().map(|v| tape.leaf(v.clone())).collect();
        let graph =
            multitype_graph(&model, &mut tape, &params, &styles, &labels, &priors, &eps);
        let graph_value = tape.scalar(graph);

        let bank = plain_style_bank(&model, &priors);
        let mut total = 0.0;
        for b in 0..4 {
            for i in 0..2 {
                // The same per-example sample serves every ordered pair.
                let mu = model.params.get(&format!("style.t{i}.v{}.mu", labels[i][b]));
                let a = model.params.get(&format!("style.t{i}.v{}.a", labels[i][b]));
                let sample = a.dot(&eps[i].row(b).to_owned()) + mu.row(0);
                for j in 0..2 {
                    if i == j {
                        continue;
                    }
                    let own =
                        categorical_entropy(&bank.posterior(i, &styles_values[i].row(b)).unwrap().view());
                    let cross =
                        categorical_entropy(&bank.posterior(j, &styles_values[i].row(b)).unwrap().view());
                    let cross_sample =
                        categorical_entropy(&bank.posterior(j, &sample.view()).unwrap().view());
                    total += own - cross - cross_sample;
                }
            }
        }
        let oracle = total / 4.0;
        assert!(
            (graph_value - oracle).abs() < 1e-9,
            "graph {graph_value} vs oracle {oracle}"
        );
    }

    #[test]
    fn multitype_bounds_hold() {
        // With two binary types the per-example value lies in
        // [-2 * 2 * ln2, 2 * ln2]: each ordered pair contributes at least
        // -2 ln2 (own entropy 0, both cross entropies maximal) and at most
        // ln2 (own entropy maximal, both cross entropies 0).
        let lo = -4.0 * LN_2 - 1e-9;
        let hi = 2.0 * LN_2 + 1e-9;
        let mut rng = substream(8, "mt.bounds");
        let priors = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        for trial in 0..1000 {
            let mut model = tiny_model(2, Variant::Vanilla, 1000 + trial);
            // Randomize the banks beyond initialization for coverage.
            for t in 0..2 {
                for v in 0..2 {
                    let mu = normal_matrix(&mut rng, 1, 2);
                    let a = normal_matrix(&mut rng, 2, 2) * 0.8;
                    set_param(&mut model, &format!("style.t{t}.v{v}.mu"), mu);
                    set_param(&mut model, &format!("style.t{t}.v{v}.a"), a);
                }
            }
            let styles_values: Vec<Array2<f64>> =
                (0..2).map(|_| normal_matrix(&mut rng, 1, 2) * 2.0).collect();
            let eps: Vec<Array2<f64>> = (0..2).map(|_| normal_matrix(&mut rng, 1, 2)).collect();
            let labels = vec![
                Arc::new(vec![(trial % 2) as usize]),
                Arc::new(vec![(trial % 3 == 0) as usize]),
            ];
            let mut tape = Tape::new();
            let params = model.push_leaves(&mut tape);
            let styles: Vec<Var> = styles_values.iter().map(|v| tape.leaf(v.clone())).collect();
            let graph =
                multitype_graph(&model, &mut tape, &params, &styles, &labels, &priors, &eps);
            let v = tape.scalar(graph);
            assert!(v >= lo && v <= hi, "trial {trial}: {v} outside [{lo}, {hi}]");
        }
    }

    #[test]
    fn losses_are_batch_order_invariant() {
        let model = tiny_model(2, Variant::Vanilla, 53);
        let priors = vec![vec![0.5, 0.5], vec![0.4, 0.6]];
        let mut rng = substream(21, "perm");
        let style_values: Vec<Array2<f64>> =
            (0..2).map(|_| normal_matrix(&mut rng, 4, 2)).collect();
        let content_values = normal_matrix(&mut rng, 4, 2);
        let eps: Vec<Array2<f64>> = (0..2).map(|_| normal_matrix(&mut rng, 4, 2)).collect();
        let labels_fwd = vec![Arc::new(vec![0usize, 1, 1, 0]), Arc::new(vec![1usize, 0, 0, 1])];
        let perm = [3usize, 1, 0, 2];

        let permute_rows = |m: &Array2<f64>| {
            let mut out = Array2::zeros(m.dim());
            for (dst, &src) in perm.iter().enumerate() {
                out.row_mut(dst).assign(&m.row(src));
            }
            out
        };
        let permute_labels = |l: &Arc<Vec<usize>>| {
            Arc::new(perm.iter().map(|&src| l[src]).collect::<Vec<usize>>())
        };

        let eval = |styles_v: &[Array2<f64>],
                    content_v: &Array2<f64>,
                    eps_v: &[Array2<f64>],
                    labels: &[Arc<Vec<usize>>]| {
            let mut tape = Tape::new();
            let params = model.push_leaves(&mut tape);
            let styles: Vec<Var> = styles_v.iter().map(|v| tape.leaf(v.clone())).collect();
            let content = tape.leaf(content_v.clone());
            let att = attachment_graph(&model, &mut tape, &params, &styles, labels, &priors);
            let sc = style_content_graph(
                &model, &mut tape, &params, content, labels, &priors, 0.1,
            );
            let mt = multitype_graph(&model, &mut tape, &params, &styles, labels, &priors, eps_v);
            (tape.scalar(att), tape.scalar(sc), tape.scalar(mt))
        };

        let fwd = eval(&style_values, &content_values, &eps, &labels_fwd);
        let styles_p: Vec<Array2<f64>> = style_values.iter().map(&permute_rows).collect();
        let eps_p: Vec<Array2<f64>> = eps.iter().map(&permute_rows).collect();
        let labels_p: Vec<Arc<Vec<usize>>> = labels_fwd.iter().map(&permute_labels).collect();
        let content_p = permute_rows(&content_values);
        let rev = eval(&styles_p, &content_p, &eps_p, &labels_p);

        assert!((fwd.0 - rev.0).abs() < 1e-12, "attachment {} vs {}", fwd.0, rev.0);
        assert!((fwd.1 - rev.1).abs() < 1e-12, "style-content {} vs {}", fwd.1, rev.1);
        assert!((fwd.2 - rev.2).abs() < 1e-12, "multitype {} vs {}", fwd.2, rev.2);
    }

    #[test]
    fn recon_batch_order_invariant() {
        let model = tiny_model(1, Variant::Vanilla, 59);
        let (examples, batch) = tiny_batch(1);
        let mut reversed = examples.clone();
        reversed.reverse();
        let batch_rev = Batch::new(&reversed, 1);
        let weights = LossWeights {
            attachment: 0.0,
            classification: 0.0,
            style_content: 0.0,
            multitype: 0.0,
            ..LossWeights::default()
        };
        let eval = |b: &Batch| {
            let mut tape = Tape::new();
            let params = model.push_leaves(&mut tape);
            let mut rng = substream(1, "unused");
            let parts = build_objective(
                &model,
                &mut tape,
                &params,
                b,
                &[vec![0.5, 0.5]],
                &weights,
                &LossOptions::default(),
                &mut rng,
            );
            parts.breakdown(&tape, &weights).unwrap().recon
        };
        let fwd = eval(&batch);
        let rev = eval(&batch_rev);
        assert!((fwd - rev).abs() < 1e-12, "{fwd} vs {rev}");
    }

    /// Full-objective finite-difference gradient check over every parameter
    /// tensor. The noise is frozen so the objective is a deterministic
    /// function of the parameters; the graph builders read tensors
    /// exclusively through the tape leaves, so perturbing the leaves is all
    /// the check needs.
    fn objective_grad_check(variant: Variant, resample: bool) {
        let model = tiny_model(2, variant, 61);
        let (_, batch) = tiny_batch(2);
        let priors = vec![vec![0.5, 0.5], vec![0.4, 0.6]];
        let weights = LossWeights::default();
        let opts = LossOptions { m_samples: 3, resample_for_recon: resample };
        let mut rng = substream(99, "gradcheck.noise");
        let noise = ObjectiveNoise::<f64>::draw(&model, batch.size, &weights, &opts, &mut rng);

        let names: Vec<String> = model.params.names().to_vec();
        let leaves: Vec<Array2<f64>> =
            names.iter().map(|n| model.params.get(n).clone()).collect();

        grad_check(
            &leaves,
            |tape, vars| {
                let params =
                    TapeParams::from_pairs(names.iter().cloned().zip(vars.iter().copied()));
                let parts = build_objective_with_noise(
                    &model, tape, &params, &batch, &priors, &weights, &opts, &noise,
                );
                parts.total
            },
            1e-4,
        );
    }

    #[test]
    fn full_objective_gradients_vanilla() {
        objective_grad_check(Variant::Vanilla, false);
    }

    #[test]
    fn full_objective_gradients_variational() {
        objective_grad_check(Variant::Variational, false);
    }

    #[test]
    fn full_objective_gradients_resampled_recon() {
        objective_grad_check(Variant::Vanilla, true);
    }

    #[test]
    fn token_count_matches_batch() {
        let (examples, batch) = tiny_batch(1);
        assert_eq!(token_count(&examples), batch.token_count);
        // 3 + 2 + 4 + 1 tokens plus one EOS each.
        assert_eq!(batch.token_count, 3 + 2 + 4 + 1 + 4);
    }
}
