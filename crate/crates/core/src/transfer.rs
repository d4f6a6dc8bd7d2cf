//! Inference-time style transfer.
//!
//! A transfer encodes a sentence, splits the latent into per-type style
//! vectors and content, replaces the targeted style slots with vectors drawn
//! from the target values' distributions (a fresh sample, an explicit noise
//! vector, or the distribution mean), reassembles the latent, and decodes
//! greedily. Everything except the targeted slots enters the decoder
//! bitwise-unchanged from plain encoding.

use ndarray::Array1;

use crate::corpus::{BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::{normal_f64, SeedRng};
use crate::seqae::Model;
use crate::trainer::Checkpoint;

/// One targeted (type, value) replacement within a request.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleTarget {
    pub type_index: usize,
    pub value_index: usize,
    /// Explicit reparameterization noise (length `style_dim`). When absent
    /// the noise is drawn from the caller's stream, or zeroed under the
    /// request's use-mean flag.
    pub noise: Option<Array1<f64>>,
}

impl StyleTarget {
    pub fn new(type_index: usize, value_index: usize) -> Self {
        StyleTarget { type_index, value_index, noise: None }
    }
}

/// A style-transfer request: which sentence, and which style types move to
/// which target values. Multiple types may be retargeted at once; types not
/// listed keep their encoded style vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferRequest {
    pub tokens: Vec<usize>,
    pub targets: Vec<StyleTarget>,
    /// Replace with the distribution mean (noise = 0) instead of sampling;
    /// incompatible with explicit per-target noise.
    pub use_mean: bool,
}

impl TransferRequest {
    pub fn new(tokens: Vec<usize>, targets: Vec<StyleTarget>) -> Self {
        TransferRequest { tokens, targets, use_mean: false }
    }
}

/// A transfer's decoded tokens plus the latent that produced them, for
/// callers that need to inspect what entered the decoder.
#[derive(Debug, Clone)]
pub struct TransferOutcome<F: Real> {
    pub tokens: Vec<usize>,
    pub latent: Array1<F>,
}

fn validate_request<F: Real>(model: &Model<F>, req: &TransferRequest) -> Result<()> {
    let cfg = &model.cfg;
    if req.tokens.is_empty() {
        return Err(Error::Request("transfer input is empty".into()));
    }
    if req.tokens.len() > cfg.max_len {
        return Err(Error::Request(format!(
            "transfer input has {} tokens but the model accepts at most {}",
            req.tokens.len(),
            cfg.max_len
        )));
    }
    for &t in &req.tokens {
        if t >= cfg.vocab_size {
            return Err(Error::Request(format!(
                "token id {t} is outside the vocabulary (size {})",
                cfg.vocab_size
            )));
        }
        if t == PAD || t == BOS || t == EOS {
            return Err(Error::Request(format!(
                "token id {t} is a reserved structural token"
            )));
        }
    }
    let mut seen = vec![false; cfg.group_count];
    for target in &req.targets {
        if target.type_index >= cfg.group_count {
            return Err(Error::Request(format!(
                "style type index {} is out of range (model has {} types)",
                target.type_index, cfg.group_count
            )));
        }
        if target.value_index >= model.value_counts[target.type_index] {
            return Err(Error::Request(format!(
                "value index {} is out of range for style type {} ({} values)",
                target.value_index,
                target.type_index,
                model.value_counts[target.type_index]
            )));
        }
        if seen[target.type_index] {
            return Err(Error::Request(format!(
                "style type {} is targeted more than once",
                target.type_index
            )));
        }
        seen[target.type_index] = true;
        if let Some(noise) = &target.noise {
            if req.use_mean {
                return Err(Error::Request(
                    "explicit noise conflicts with the use-mean flag".into(),
                ));
            }
            if noise.len() != cfg.style_dim {
                return Err(Error::Request(format!(
                    "noise vector has length {} but style_dim is {}",
                    noise.len(),
                    cfg.style_dim
                )));
            }
        }
    }
    Ok(())
}

/// Run one transfer against a model, returning the decoded tokens and the
/// recombined latent. Noise for targets without an explicit vector is drawn
/// from `rng` in target order (none is drawn under use-mean).
pub fn transfer_outcome<F: Real>(
    model: &Model<F>,
    req: &TransferRequest,
    rng: &mut SeedRng,
) -> Result<TransferOutcome<F>> {
    validate_request(model, req)?;
    let cfg = &model.cfg;
    let ds = cfg.style_dim;
    let mut latent = model.encode(&req.tokens, None).h;
    for target in &req.targets {
        let eps: Array1<F> = if req.use_mean {
            Array1::zeros(ds)
        } else if let Some(noise) = &target.noise {
            noise.mapv(F::from_f64)
        } else {
            Array1::from_shape_fn(ds, |_| F::from_f64(normal_f64(rng)))
        };
        let dist = model.style_dist(target.type_index, target.value_index);
        let replacement = dist.sample(&eps.view());
        let start = target.type_index * ds;
        latent.slice_mut(ndarray::s![start..start + ds]).assign(&replacement);
    }
    let tokens = model.decode_greedy(&latent);
    Ok(TransferOutcome { tokens, latent })
}

/// Transfer one sentence under a checkpoint.
pub fn transfer<F: Real>(
    ckpt: &Checkpoint<F>,
    req: &TransferRequest,
    rng: &mut SeedRng,
) -> Result<Vec<usize>> {
    let model = ckpt.model();
    Ok(transfer_outcome(&model, req, rng)?.tokens)
}

/// Transfer a list of sentences; output order matches input order, and the
/// first invalid request aborts with its position named.
pub fn batch_transfer<F: Real>(
    ckpt: &Checkpoint<F>,
    requests: &[TransferRequest],
    rng: &mut SeedRng,
) -> Result<Vec<Vec<usize>>> {
    let model = ckpt.model();
    let mut outputs = Vec::with_capacity(requests.len());
    for (i, req) in requests.iter().enumerate() {
        let outcome = transfer_outcome(&model, req, rng)
            .map_err(|e| Error::Request(format!("request {i}: {e}")))?;
        outputs.push(outcome.tokens);
    }
    Ok(outputs)
}
