//! Recurrent sequence autoencoder with a split latent.
//!
//! The encoder is a stacked LSTM whose final hidden state is projected to
//! a latent vector of dimension `G * d_s + d_c`; the latent is viewed as
//! `G` per-type style vectors plus a content vector. The decoder is a
//! stacked LSTM whose initial hidden and cell states are learned
//! projections of the latent. Two variants share the architecture: the
//! vanilla autoencoder uses the projection directly as `h`, while the
//! variational one emits a (mean, log-variance) pair over the whole
//! latent and draws `h = mean + exp(logvar / 2) * eps`.
//!
//! Training builds forward graphs on the autodiff tape with per-step
//! masking so one batch can mix sentence lengths; inference uses a plain
//! (non-tape) forward that the tests pin to the tape route numerically.
//! All trainable tensors — network weights and the per-value Gaussian
//! parameters of the style and content banks — live in one named
//! [`ParamStore`] so the optimizer and the checkpoint see a single flat,
//! ordered collection.

use crate::corpus::{LabeledExample, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::{self, SeedRng};
use crate::style_space::{ContentClassBank, GaussianStyleDistribution, StyleSpaceBank, EPS_REG};
use crate::tape::{Tape, Var};
use ndarray::{s, Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::Arc;

/// Autoencoder variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Vanilla,
    Variational,
}

fn default_embed_dim() -> usize {
    100
}
fn default_hidden_size() -> usize {
    150
}
fn default_layers() -> usize {
    2
}
fn default_max_len() -> usize {
    15
}
fn default_style_dim() -> usize {
    16
}
fn default_content_dim() -> usize {
    16
}
fn default_variant() -> Variant {
    Variant::Vanilla
}

/// Architecture configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Vocabulary size including the reserved tokens; filled from data
    /// when left at zero.
    #[serde(default)]
    pub vocab_size: usize,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_hidden_size")]
    pub hidden_size: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    /// Maximum decode length in tokens (excluding BOS/EOS).
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    /// Number of style types G; filled from the schema when left at zero.
    #[serde(default)]
    pub group_count: usize,
    /// Per-type style dimension d_s.
    #[serde(default = "default_style_dim")]
    pub style_dim: usize,
    /// Content dimension d_c.
    #[serde(default = "default_content_dim")]
    pub content_dim: usize,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    /// Re-feed the latent as decoder input at every step (ablation knob).
    #[serde(default)]
    pub refeed_latent: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            embed_dim: default_embed_dim(),
            hidden_size: default_hidden_size(),
            layers: default_layers(),
            max_len: default_max_len(),
            group_count: 0,
            style_dim: default_style_dim(),
            content_dim: default_content_dim(),
            variant: default_variant(),
            refeed_latent: false,
        }
    }
}

impl ModelConfig {
    /// Latent dimension `G * d_s + d_c`.
    pub fn latent_dim(&self) -> usize {
        self.group_count * self.style_dim + self.content_dim
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_size", self.hidden_size),
            ("layers", self.layers),
            ("max_len", self.max_len),
            ("group_count", self.group_count),
            ("style_dim", self.style_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.latent_dim() == 0 {
            return Err(Error::Config("latent dimension must be at least 1".into()));
        }
        Ok(())
    }
}

/// The latent vector viewed as per-type style slices plus content.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSplit<F: Real> {
    pub styles: Vec<Array1<F>>,
    pub content: Array1<F>,
}

/// Slice a latent vector into `G` style vectors and a content vector.
pub fn split<F: Real>(h: &Array1<F>, cfg: &ModelConfig) -> LatentSplit<F> {
    assert_eq!(h.len(), cfg.latent_dim(), "latent dimension mismatch");
    let ds = cfg.style_dim;
    let styles = (0..cfg.group_count)
        .map(|t| h.slice(s![t * ds..(t + 1) * ds]).to_owned())
        .collect();
    let content = h.slice(s![cfg.group_count * ds..]).to_owned();
    LatentSplit { styles, content }
}

/// Inverse of [`split`]: concatenate styles then content.
pub fn concat<F: Real>(split: &LatentSplit<F>) -> Array1<F> {
    let total: usize = split.styles.iter().map(|v| v.len()).sum::<usize>() + split.content.len();
    let mut out = Array1::<F>::zeros(total);
    let mut at = 0;
    for v in &split.styles {
        out.slice_mut(s![at..at + v.len()]).assign(v);
        at += v.len();
    }
    out.slice_mut(s![at..]).assign(&split.content);
    out
}

/// Result of encoding one sentence with the plain (non-tape) forward.
#[derive(Debug, Clone)]
pub struct EncodeOutput<F: Real> {
    /// The latent used downstream (for variational: the drawn one).
    pub h: Array1<F>,
    pub mean: Option<Array1<F>>,
    pub logvar: Option<Array1<F>>,
    pub noise: Option<Array1<F>>,
}

/// Ordered, named collection of all trainable tensors.
#[derive(Debug, Clone)]
pub struct ParamStore<F: Real> {
    names: Vec<String>,
    tensors: Vec<Array2<F>>,
    index: HashMap<String, usize>,
}

impl<F: Real> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, tensor: Array2<F>) {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name:?}"
        );
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.tensors.push(tensor);
    }

    pub fn get(&self, name: &str) -> &Array2<F> {
        let &i = self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"));
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array2<F> {
        let &i = self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"));
        &mut self.tensors[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn tensor_at(&self, i: usize) -> &Array2<F> {
        &self.tensors[i]
    }

    pub fn tensor_at_mut(&mut self, i: usize) -> &mut Array2<F> {
        &mut self.tensors[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<F>)> {
        self.names
            .iter()
            .map(|n| n.as_str())
            .zip(self.tensors.iter())
    }
}

/// Tape handles for every parameter, pushed as leaves in store order.
pub struct TapeParams {
    vars: HashMap<String, Var>,
}

impl TapeParams {
    /// Assemble a handle map directly, for callers that push leaves
    /// themselves (gradient checks, custom training loops).
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        TapeParams { vars: pairs.into_iter().collect() }
    }

    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"))
    }
}

/// The autoencoder plus the style/content distribution banks: the full
/// trainable model.
#[derive(Debug, Clone)]
pub struct Model<F: Real> {
    pub cfg: ModelConfig,
    /// Style-value count per type, in schema order.
    pub value_counts: Vec<usize>,
    pub params: ParamStore<F>,
}

fn xavier<F: Real>(rng: &mut SeedRng, rows: usize, cols: usize) -> Array2<F> {
    let r = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| {
        F::from_f64(rng.random::<f64>() * 2.0 * r - r)
    })
}

fn lstm_input_dim(cfg: &ModelConfig, layer: usize, decoder: bool) -> usize {
    if layer > 0 {
        cfg.hidden_size
    } else if decoder && cfg.refeed_latent {
        cfg.embed_dim + cfg.latent_dim()
    } else {
        cfg.embed_dim
    }
}

impl<F: Real> Model<F> {
    /// Initialize a fresh model.
    ///
    /// Weight matrices use scaled-uniform initialization; biases start at
    /// zero except the LSTM forget-gate segment (+1). The output
    /// projection and the variational log-variance head start at zero, so
    /// an untrained decoder emits uniform distributions and the initial
    /// posterior variance is one. Distribution banks follow the
    /// style-space initialization (small random means, `0.1 * I` factors).
    pub fn new(cfg: ModelConfig, value_counts: Vec<usize>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if value_counts.len() != cfg.group_count {
            return Err(Error::Config(format!(
                "group_count {} does not match {} style types",
                cfg.group_count,
                value_counts.len()
            )));
        }
        if cfg.content_dim == 0 && cfg.group_count > 0 {
            // Content banks need a nonempty content space; the split
            // itself tolerates d_c = 0, so only bank creation is gated.
            return Err(Error::Config(
                "content_dim must be at least 1 to host content distributions".into(),
            ));
        }
        let mut r = rng::substream(seed, "model.init");
        let h = cfg.hidden_size;
        let latent = cfg.latent_dim();
        let mut params = ParamStore::new();
        params.insert("embed", {
            let m = rng::normal_matrix(&mut r, cfg.vocab_size, cfg.embed_dim);
            m.mapv(|x| F::from_f64(0.1 * x))
        });
        for (decoder, prefix) in [(false, "enc"), (true, "dec")] {
            for l in 0..cfg.layers {
                let in_dim = lstm_input_dim(&cfg, l, decoder);
                params.insert(&format!("{prefix}.l{l}.w_ih"), xavier(&mut r, in_dim, 4 * h));
                params.insert(&format!("{prefix}.l{l}.w_hh"), xavier(&mut r, h, 4 * h));
                let mut b = Array2::<F>::zeros((1, 4 * h));
                b.slice_mut(s![0, h..2 * h]).fill(F::one());
                params.insert(&format!("{prefix}.l{l}.b"), b);
            }
        }
        params.insert("enc.head.w", xavier(&mut r, h, latent));
        params.insert("enc.head.b", Array2::zeros((1, latent)));
        if cfg.variant == Variant::Variational {
            params.insert("enc.logvar.w", Array2::zeros((h, latent)));
            params.insert("enc.logvar.b", Array2::zeros((1, latent)));
        }
        for l in 0..cfg.layers {
            params.insert(&format!("dec.init_h.l{l}.w"), xavier(&mut r, latent, h));
            params.insert(&format!("dec.init_h.l{l}.b"), Array2::zeros((1, h)));
            params.insert(&format!("dec.init_c.l{l}.w"), xavier(&mut r, latent, h));
            params.insert(&format!("dec.init_c.l{l}.b"), Array2::zeros((1, h)));
        }
        params.insert("dec.out.w", Array2::zeros((h, cfg.vocab_size)));
        params.insert("dec.out.b", Array2::zeros((1, cfg.vocab_size)));
        // Distribution banks: one Gaussian per (type, value) over the
        // style space, and one per (type, value) over the content space.
        for (t, &count) in value_counts.iter().enumerate() {
            for v in 0..count {
                let ds = GaussianStyleDistribution::<F>::init(cfg.style_dim, &mut r);
                params.insert(
                    &format!("style.t{t}.v{v}.mu"),
                    ds.mu.into_shape_with_order((1, cfg.style_dim)).unwrap(),
                );
                params.insert(&format!("style.t{t}.v{v}.a"), ds.factor_a);
                let dc = GaussianStyleDistribution::<F>::init(cfg.content_dim, &mut r);
                params.insert(
                    &format!("content.t{t}.v{v}.mu"),
                    dc.mu.into_shape_with_order((1, cfg.content_dim)).unwrap(),
                );
                params.insert(&format!("content.t{t}.v{v}.a"), dc.factor_a);
            }
        }
        Ok(Model {
            cfg,
            value_counts,
            params,
        })
    }

    /// Push every parameter onto a tape as a leaf, in store order.
    pub fn push_leaves(&self, tape: &mut Tape<F>) -> TapeParams {
        let mut vars = HashMap::new();
        for (name, tensor) in self.params.iter() {
            vars.insert(name.to_string(), tape.leaf(tensor.clone()));
        }
        TapeParams { vars }
    }

    /// Style distribution bank view over the current parameters.
    pub fn style_bank(&self, priors: &[Vec<f64>]) -> StyleSpaceBank<F> {
        assert_eq!(priors.len(), self.value_counts.len());
        let types = self
            .value_counts
            .iter()
            .enumerate()
            .map(|(t, &count)| {
                assert_eq!(priors[t].len(), count, "prior length mismatch");
                let dists = (0..count)
                    .map(|v| self.bank_dist("style", t, v))
                    .collect();
                let prior = Array1::from_iter(priors[t].iter().map(|&p| F::from_f64(p)));
                crate::style_space::TypeBank::new(dists, prior)
            })
            .collect();
        StyleSpaceBank::new(types, F::from_f64(EPS_REG))
    }

    /// Content distribution bank view over the current parameters.
    pub fn content_bank(&self) -> ContentClassBank<F> {
        let types = self
            .value_counts
            .iter()
            .enumerate()
            .map(|(t, &count)| {
                (0..count)
                    .map(|v| self.bank_dist("content", t, v))
                    .collect()
            })
            .collect();
        ContentClassBank::new(types, F::from_f64(EPS_REG))
    }

    fn bank_dist(&self, kind: &str, t: usize, v: usize) -> GaussianStyleDistribution<F> {
        let mu = self.params.get(&format!("{kind}.t{t}.v{v}.mu"));
        let a = self.params.get(&format!("{kind}.t{t}.v{v}.a"));
        GaussianStyleDistribution::new(mu.row(0).to_owned(), a.clone())
    }

    /// The trained distribution of one style value.
    pub fn style_dist(&self, type_index: usize, value_index: usize) -> GaussianStyleDistribution<F> {
        self.bank_dist("style", type_index, value_index)
    }

    /// Plain single-sentence encode. `noise` must be `None` for the
    /// vanilla variant and, when `Some`, have the latent dimension. A
    /// variational encode without noise returns the posterior mean
    /// (deterministic inference).
    pub fn encode(&self, tokens: &[usize], noise: Option<&Array1<F>>) -> EncodeOutput<F> {
        assert!(!tokens.is_empty(), "encode requires a non-empty sentence");
        assert!(
            tokens.len() <= self.cfg.max_len,
            "sentence exceeds max length"
        );
        let h = self.cfg.hidden_size;
        let mut hs = vec![Array1::<F>::zeros(h); self.cfg.layers];
        let mut cs = vec![Array1::<F>::zeros(h); self.cfg.layers];
        for &tok in tokens {
            let mut x = self.params.get("embed").row(tok).to_owned();
            for l in 0..self.cfg.layers {
                let (nh, nc) = self.lstm_step_plain("enc", l, &x, &hs[l], &cs[l], None);
                hs[l] = nh;
                cs[l] = nc;
                x = hs[l].clone();
            }
        }
        let top = &hs[self.cfg.layers - 1];
        let mean = top.dot(self.params.get("enc.head.w")) + &self.params.get("enc.head.b").row(0);
        match self.cfg.variant {
            Variant::Vanilla => {
                assert!(noise.is_none(), "vanilla encode takes no noise");
                EncodeOutput {
                    h: mean,
                    mean: None,
                    logvar: None,
                    noise: None,
                }
            }
            Variant::Variational => {
                let logvar = top.dot(self.params.get("enc.logvar.w"))
                    + &self.params.get("enc.logvar.b").row(0);
                // No noise means deterministic inference: h is the
                // posterior mean.
                let eps = noise
                    .map(|n| n.to_owned())
                    .unwrap_or_else(|| Array1::zeros(self.cfg.latent_dim()));
                assert_eq!(eps.len(), self.cfg.latent_dim(), "noise dimension mismatch");
                let sigma = logvar.mapv(|lv| (lv * F::from_f64(0.5)).exp());
                let drawn = &mean + &(&sigma * &eps);
                EncodeOutput {
                    h: drawn,
                    mean: Some(mean),
                    logvar: Some(logvar),
                    noise: Some(eps),
                }
            }
        }
    }

    fn lstm_step_plain(
        &self,
        prefix: &str,
        layer: usize,
        x: &Array1<F>,
        h: &Array1<F>,
        c: &Array1<F>,
        latent: Option<&Array1<F>>,
    ) -> (Array1<F>, Array1<F>) {
        let hs = self.cfg.hidden_size;
        let w_ih = self.params.get(&format!("{prefix}.l{layer}.w_ih"));
        let w_hh = self.params.get(&format!("{prefix}.l{layer}.w_hh"));
        let b = self.params.get(&format!("{prefix}.l{layer}.b"));
        let xin: Array1<F> = match latent {
            Some(lat) if layer == 0 => {
                let mut v = Array1::<F>::zeros(x.len() + lat.len());
                v.slice_mut(s![..x.len()]).assign(x);
                v.slice_mut(s![x.len()..]).assign(lat);
                v
            }
            _ => x.clone(),
        };
        let gates = xin.dot(w_ih) + h.dot(w_hh) + &b.row(0);
        let one = F::one();
        let sig = |z: F| one / (one + (-z).exp());
        let mut nh = Array1::<F>::zeros(hs);
        let mut nc = Array1::<F>::zeros(hs);
        for j in 0..hs {
            let i = sig(gates[j]);
            let f = sig(gates[hs + j]);
            let g = gates[2 * hs + j].tanh();
            let o = sig(gates[3 * hs + j]);
            nc[j] = f * c[j] + i * g;
            nh[j] = o * nc[j].tanh();
        }
        (nh, nc)
    }

    fn decoder_initial_state(&self, h: &Array1<F>) -> (Vec<Array1<F>>, Vec<Array1<F>>) {
        let mut hs = Vec::with_capacity(self.cfg.layers);
        let mut cs = Vec::with_capacity(self.cfg.layers);
        for l in 0..self.cfg.layers {
            let wh = self.params.get(&format!("dec.init_h.l{l}.w"));
            let bh = self.params.get(&format!("dec.init_h.l{l}.b"));
            let wc = self.params.get(&format!("dec.init_c.l{l}.w"));
            let bc = self.params.get(&format!("dec.init_c.l{l}.b"));
            hs.push(h.dot(wh) + &bh.row(0));
            cs.push(h.dot(wc) + &bc.row(0));
        }
        (hs, cs)
    }

    fn decoder_logits_step(
        &self,
        tok: usize,
        h_latent: &Array1<F>,
        hs: &mut [Array1<F>],
        cs: &mut [Array1<F>],
    ) -> Array1<F> {
        let latent = self.cfg.refeed_latent.then_some(h_latent);
        let mut x = self.params.get("embed").row(tok).to_owned();
        for l in 0..self.cfg.layers {
            let (nh, nc) = self.lstm_step_plain("dec", l, &x, &hs[l], &cs[l], latent);
            hs[l] = nh;
            cs[l] = nc;
            x = hs[l].clone();
        }
        x.dot(self.params.get("dec.out.w")) + &self.params.get("dec.out.b").row(0)
    }

    /// Plain teacher-forced decode: row `t` is the log-distribution over
    /// the vocabulary for target position `t` (targets are the sentence
    /// tokens followed by EOS).
    pub fn decode_teacher_forced(&self, h: &Array1<F>, targets: &[usize]) -> Array2<F> {
        assert_eq!(h.len(), self.cfg.latent_dim(), "latent dimension mismatch");
        assert!(!targets.is_empty());
        let (mut hs, mut cs) = self.decoder_initial_state(h);
        let steps = targets.len() + 1;
        let mut out = Array2::<F>::zeros((steps, self.cfg.vocab_size));
        let mut prev = BOS;
        for t in 0..steps {
            let logits = self.decoder_logits_step(prev, h, &mut hs, &mut cs);
            out.row_mut(t).assign(&log_softmax_1d(&logits));
            prev = if t < targets.len() { targets[t] } else { EOS };
        }
        out
    }

    /// Greedy argmax rollout from BOS; stops at EOS or the max decode
    /// length. The returned sequence excludes BOS/EOS.
    pub fn decode_greedy(&self, h: &Array1<F>) -> Vec<usize> {
        assert_eq!(h.len(), self.cfg.latent_dim(), "latent dimension mismatch");
        let (mut hs, mut cs) = self.decoder_initial_state(h);
        let mut out = Vec::new();
        let mut prev = BOS;
        for _ in 0..self.cfg.max_len {
            let logits = self.decoder_logits_step(prev, h, &mut hs, &mut cs);
            let mut best = 0usize;
            for j in 1..logits.len() {
                if logits[j] > logits[best] {
                    best = j;
                }
            }
            if best == EOS {
                break;
            }
            out.push(best);
            prev = best;
        }
        out
    }

    /// Fraction of target tokens (sentence tokens plus EOS) the
    /// teacher-forced decoder ranks first, over a set of examples.
    pub fn teacher_forced_accuracy(
        &self,
        examples: &[LabeledExample],
        noise: Option<&[Array1<F>]>,
    ) -> f64 {
        let mut hit = 0usize;
        let mut total = 0usize;
        for (i, ex) in examples.iter().enumerate() {
            let eps = noise.map(|n| &n[i]);
            let enc = self.encode(&ex.tokens, eps);
            let logp = self.decode_teacher_forced(&enc.h, &ex.tokens);
            for (t, &want) in ex.tokens.iter().chain([&EOS]).enumerate() {
                let row = logp.row(t);
                let mut best = 0usize;
                for j in 1..row.len() {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                if best == want {
                    hit += 1;
                }
                total += 1;
            }
        }
        hit as f64 / total as f64
    }
}

fn log_softmax_1d<F: Real>(logits: &Array1<F>) -> Array1<F> {
    let max = logits.iter().cloned().fold(F::neg_infinity(), F::max);
    let mut lse = F::zero();
    for &e in logits.iter() {
        lse = lse + (e - max).exp();
    }
    let shift = max + lse.ln();
    logits.mapv(|e| e - shift)
}

/// A batch prepared for the tape graphs: per-step token ids and masks.
pub struct Batch {
    /// `enc_ids[t][b]`: token at position `t` of row `b` (PAD beyond len).
    pub enc_ids: Vec<Arc<Vec<usize>>>,
    /// `dec_ids[t][b]`: decoder input at step `t` (BOS then tokens).
    pub dec_ids: Vec<Arc<Vec<usize>>>,
    /// `targets[t][b]`: decoder target at step `t` (tokens then EOS).
    pub targets: Vec<Arc<Vec<usize>>>,
    /// `mask[t][b]`: 1.0 while step `t` is inside row `b`'s sentence.
    pub enc_mask: Vec<Vec<f64>>,
    pub dec_mask: Vec<Vec<f64>>,
    /// Per-type labels, one vector per style type: `labels[g][b]`.
    pub labels: Vec<Arc<Vec<usize>>>,
    pub size: usize,
    /// Total decoder target tokens (sum of sentence lengths + EOS each).
    pub token_count: usize,
}

impl Batch {
    pub fn new(examples: &[LabeledExample], group_count: usize) -> Self {
        assert!(!examples.is_empty(), "empty batch");
        let b = examples.len();
        let max_t = examples.iter().map(|e| e.tokens.len()).max().unwrap();
        let mut enc_ids = Vec::with_capacity(max_t);
        let mut enc_mask = Vec::with_capacity(max_t);
        for t in 0..max_t {
            let mut ids = Vec::with_capacity(b);
            let mut m = Vec::with_capacity(b);
            for ex in examples {
                if t < ex.tokens.len() {
                    ids.push(ex.tokens[t]);
                    m.push(1.0);
                } else {
                    ids.push(PAD);
                    m.push(0.0);
                }
            }
            enc_ids.push(Arc::new(ids));
            enc_mask.push(m);
        }
        let dec_steps = max_t + 1;
        let mut dec_ids = Vec::with_capacity(dec_steps);
        let mut targets = Vec::with_capacity(dec_steps);
        let mut dec_mask = Vec::with_capacity(dec_steps);
        for t in 0..dec_steps {
            let mut ins = Vec::with_capacity(b);
            let mut tgt = Vec::with_capacity(b);
            let mut m = Vec::with_capacity(b);
            for ex in examples {
                let n = ex.tokens.len();
                ins.push(if t == 0 {
                    BOS
                } else if t - 1 < n {
                    ex.tokens[t - 1]
                } else {
                    PAD
                });
                tgt.push(if t < n {
                    ex.tokens[t]
                } else if t == n {
                    EOS
                } else {
                    PAD
                });
                m.push(if t <= n { 1.0 } else { 0.0 });
            }
            dec_ids.push(Arc::new(ins));
            targets.push(Arc::new(tgt));
            dec_mask.push(m);
        }
        let labels = (0..group_count)
            .map(|g| Arc::new(examples.iter().map(|e| e.labels[g]).collect::<Vec<usize>>()))
            .collect();
        let token_count = examples.iter().map(|e| e.tokens.len() + 1).sum();
        Batch {
            enc_ids,
            dec_ids,
            targets,
            enc_mask,
            dec_mask,
            labels,
            size: b,
            token_count,
        }
    }
}

/// Tape-side encoder output.
pub struct EncodeGraph {
    /// `B x latent`; for the variational variant this is the drawn latent.
    pub latent: Var,
    pub mean: Option<Var>,
    pub logvar: Option<Var>,
}

fn mask_col<F: Real>(tape: &mut Tape<F>, mask: &[f64]) -> (Var, Var) {
    let b = mask.len();
    let m = Array2::from_shape_fn((b, 1), |(r, _)| F::from_f64(mask[r]));
    let inv = m.mapv(|x| F::one() - x);
    (tape.leaf(m), tape.leaf(inv))
}

fn lstm_layer_graph<F: Real>(
    tape: &mut Tape<F>,
    params: &TapeParams,
    prefix: &str,
    layer: usize,
    inputs: &[Var],
    masks: &[(Var, Var)],
    batch_size: usize,
    hidden: usize,
    init: Option<(Var, Var)>,
) -> Vec<Var> {
    let w_ih = params.var(&format!("{prefix}.l{layer}.w_ih"));
    let w_hh = params.var(&format!("{prefix}.l{layer}.w_hh"));
    let b = params.var(&format!("{prefix}.l{layer}.b"));
    let (mut h, mut c) = match init {
        Some(hc) => hc,
        None => {
            let z = tape.leaf(Array2::<F>::zeros((batch_size, hidden)));
            (z, z)
        }
    };
    let mut outputs = Vec::with_capacity(inputs.len());
    for (t, &x) in inputs.iter().enumerate() {
        let xi = tape.matmul(x, w_ih);
        let hi = tape.matmul(h, w_hh);
        let pre = tape.add(xi, hi);
        let gates = tape.add_row(pre, b);
        let i_gate = tape.slice_cols(gates, 0, hidden);
        let i_gate = tape.sigmoid(i_gate);
        let f_gate = tape.slice_cols(gates, hidden, 2 * hidden);
        let f_gate = tape.sigmoid(f_gate);
        let g_gate = tape.slice_cols(gates, 2 * hidden, 3 * hidden);
        let g_gate = tape.tanh(g_gate);
        let o_gate = tape.slice_cols(gates, 3 * hidden, 4 * hidden);
        let o_gate = tape.sigmoid(o_gate);
        let fc = tape.mul(f_gate, c);
        let ig = tape.mul(i_gate, g_gate);
        let c_new = tape.add(fc, ig);
        let ct = tape.tanh(c_new);
        let h_new = tape.mul(o_gate, ct);
        let (m, inv) = masks[t];
        let hm = tape.mul_col(h_new, m);
        let hp = tape.mul_col(h, inv);
        h = tape.add(hm, hp);
        let cm = tape.mul_col(c_new, m);
        let cp = tape.mul_col(c, inv);
        c = tape.add(cm, cp);
        outputs.push(h);
    }
    outputs
}

/// Build the batched encoder graph. For the variational variant, `noise`
/// must be a `B x latent` matrix of unit-Gaussian draws.
pub fn encode_graph<F: Real>(
    model: &Model<F>,
    tape: &mut Tape<F>,
    params: &TapeParams,
    batch: &Batch,
    noise: Option<&Array2<F>>,
) -> EncodeGraph {
    let cfg = &model.cfg;
    let embed = params.var("embed");
    let mut inputs: Vec<Var> = batch
        .enc_ids
        .iter()
        .map(|ids| tape.gather_rows(embed, ids.clone()))
        .collect();
    let masks: Vec<(Var, Var)> = batch
        .enc_mask
        .iter()
        .map(|m| mask_col(tape, m))
        .collect();
    for l in 0..cfg.layers {
        inputs = lstm_layer_graph(
            tape,
            params,
            "enc",
            l,
            &inputs,
            &masks,
            batch.size,
            cfg.hidden_size,
            None,
        );
    }
    let top = *inputs.last().expect("non-empty sequence");
    let pre = tape.matmul(top, params.var("enc.head.w"));
    let mean = tape.add_row(pre, params.var("enc.head.b"));
    match cfg.variant {
        Variant::Vanilla => {
            assert!(noise.is_none(), "vanilla encode takes no noise");
            EncodeGraph {
                latent: mean,
                mean: None,
                logvar: None,
            }
        }
        Variant::Variational => {
            let lp = tape.matmul(top, params.var("enc.logvar.w"));
            let logvar = tape.add_row(lp, params.var("enc.logvar.b"));
            let eps = noise.expect("variational encode requires noise");
            assert_eq!(
                eps.dim(),
                (batch.size, cfg.latent_dim()),
                "noise shape mismatch"
            );
            let eps = tape.leaf(eps.clone());
            let half_lv = tape.scale(logvar, F::from_f64(0.5));
            let sigma = tape.exp(half_lv);
            let scaled = tape.mul(sigma, eps);
            let latent = tape.add(mean, scaled);
            EncodeGraph {
                latent,
                mean: Some(mean),
                logvar: Some(logvar),
            }
        }
    }
}

/// Slice a batched latent into per-type style matrices plus content.
pub fn split_graph<F: Real>(
    tape: &mut Tape<F>,
    latent: Var,
    cfg: &ModelConfig,
) -> (Vec<Var>, Option<Var>) {
    let ds = cfg.style_dim;
    let styles = (0..cfg.group_count)
        .map(|t| tape.slice_cols(latent, t * ds, (t + 1) * ds))
        .collect();
    let content = (cfg.content_dim > 0)
        .then(|| tape.slice_cols(latent, cfg.group_count * ds, cfg.latent_dim()));
    (styles, content)
}

/// Tape-side teacher-forced decode results.
pub struct DecodeGraph {
    /// Total negative log-likelihood over all unmasked target tokens.
    pub nll: Var,
    /// Number of target tokens contributing to `nll`.
    pub token_count: usize,
}

/// Build the batched teacher-forced decoder graph conditioned on `latent`.
pub fn decode_graph<F: Real>(
    model: &Model<F>,
    tape: &mut Tape<F>,
    params: &TapeParams,
    latent: Var,
    batch: &Batch,
) -> DecodeGraph {
    let cfg = &model.cfg;
    let embed = params.var("embed");
    let mut inputs: Vec<Var> = batch
        .dec_ids
        .iter()
        .map(|ids| {
            let e = tape.gather_rows(embed, ids.clone());
            if cfg.refeed_latent {
                tape.concat_cols(&[e, latent])
            } else {
                e
            }
        })
        .collect();
    let masks: Vec<(Var, Var)> = batch
        .dec_mask
        .iter()
        .map(|m| mask_col(tape, m))
        .collect();
    for l in 0..cfg.layers {
        let wh = params.var(&format!("dec.init_h.l{l}.w"));
        let bh = params.var(&format!("dec.init_h.l{l}.b"));
        let wc = params.var(&format!("dec.init_c.l{l}.w"));
        let bc = params.var(&format!("dec.init_c.l{l}.b"));
        let h0p = tape.matmul(latent, wh);
        let h0 = tape.add_row(h0p, bh);
        let c0p = tape.matmul(latent, wc);
        let c0 = tape.add_row(c0p, bc);
        inputs = lstm_layer_graph(
            tape,
            params,
            "dec",
            l,
            &inputs,
            &masks,
            batch.size,
            cfg.hidden_size,
            Some((h0, c0)),
        );
    }
    let out_w = params.var("dec.out.w");
    let out_b = params.var("dec.out.b");
    let mut nll: Option<Var> = None;
    for (t, &h) in inputs.iter().enumerate() {
        let lg = tape.matmul(h, out_w);
        let logits = tape.add_row(lg, out_b);
        let logp = tape.log_softmax_rows(logits);
        let picked = tape.pick_per_row(logp, batch.targets[t].clone());
        let masked = tape.mul_col(picked, masks[t].0);
        let step = tape.sum_all(masked);
        nll = Some(match nll {
            Some(acc) => tape.add(acc, step),
            None => step,
        });
    }
    let total = nll.expect("at least one decode step");
    let nll = tape.neg(total);
    DecodeGraph {
        nll,
        token_count: batch.token_count,
    }
}
