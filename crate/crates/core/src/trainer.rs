//! Training loop, optimizer, and checkpointing.
//!
//! The trainer runs shuffled mini-batch gradient descent on the composite
//! objective. A step draws a random batch (a pure function of the training
//! RNG state), builds the objective graph, backpropagates, clips the
//! gradients by global norm, and applies an Adam update. Everything the
//! loop touches — parameters, optimizer moments, the RNG — lives in the
//! checkpoint, so a saved-and-resumed run reproduces an uninterrupted run
//! bitwise at the same precision.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::corpus::{LabeledExample, StyleSchema, Vocabulary};
use crate::error::{Error, Result};
use crate::losses::{build_objective, LossBreakdown, LossOptions, LossWeights};
use crate::real::{Precision, Real};
use crate::rng::{substream, SeedRng};
use crate::seqae::{Batch, Model, ModelConfig, ParamStore};
use crate::tape::Tape;

/// Schema version of the checkpoint container.
pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_MAGIC: &[u8; 8] = b"DSTYLCK\0";
const CHECKPOINT_END: &[u8; 4] = b"END.";

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Full training configuration. Deserialized from JSON where every field
/// has a default and unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub loss_options: LossOptions,
    pub batch_size: usize,
    /// Optimizer step budget (0 is permitted and performs no updates).
    pub steps: u64,
    pub learning_rate: f64,
    /// Global-norm gradient clipping threshold.
    pub grad_clip: f64,
    pub seed: u64,
    /// Steps between periodic checkpoint writes; 0 writes only at the end.
    pub checkpoint_interval: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            weights: LossWeights::default(),
            loss_options: LossOptions::default(),
            batch_size: 32,
            steps: 2000,
            learning_rate: 1e-3,
            grad_clip: 5.0,
            seed: 0,
            checkpoint_interval: 0,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.weights.validate()?;
        self.loss_options.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.grad_clip.is_finite() && self.grad_clip > 0.0) {
            return Err(Error::Config(format!(
                "grad_clip must be positive, got {}",
                self.grad_clip
            )));
        }
        Ok(())
    }
}

/// Adam first/second-moment accumulators, aligned with the parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F: Real> {
    pub m: Vec<Array2<F>>,
    pub v: Vec<Array2<F>>,
    pub t: u64,
}

impl<F: Real> AdamState<F> {
    pub fn new(params: &ParamStore<F>) -> Self {
        let zeros: Vec<Array2<F>> =
            (0..params.len()).map(|i| Array2::zeros(params.tensor_at(i).dim())).collect();
        AdamState { m: zeros.clone(), v: zeros, t: 0 }
    }

    /// One bias-corrected Adam update over every tensor, in `F` arithmetic.
    pub fn update(&mut self, params: &mut ParamStore<F>, grads: &[Array2<F>], lr: f64) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter tensor");
        self.t += 1;
        let b1 = F::from_f64(ADAM_BETA1);
        let b2 = F::from_f64(ADAM_BETA2);
        let one = F::one();
        let corr1 = one - b1.powi(self.t as i32);
        let corr2 = one - b2.powi(self.t as i32);
        let lr = F::from_f64(lr);
        let eps = F::from_f64(ADAM_EPS);
        for i in 0..grads.len() {
            Zip::from(params.tensor_at_mut(i))
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .and(&grads[i])
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let m_hat = *m / corr1;
                    let v_hat = *v / corr2;
                    *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
    }
}

/// Scale all gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_gradients<F: Real>(grads: &mut [Array2<F>], max_norm: f64) -> f64 {
    let mut sq = 0.0f64;
    for g in grads.iter() {
        for &x in g.iter() {
            let x = x.to_f64();
            sq += x * x;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = F::from_f64(max_norm / norm);
        for g in grads.iter_mut() {
            g.mapv_inplace(|x| x * scale);
        }
    }
    norm
}

/// Everything needed to continue a run: the model, optimizer moments, RNG
/// state, step counter, and the data-side contracts (schema and vocabulary)
/// the parameters were trained against.
#[derive(Debug, Clone)]
pub struct Checkpoint<F: Real> {
    pub cfg: ModelConfig,
    pub schema: StyleSchema,
    pub vocab: Vocabulary,
    pub params: ParamStore<F>,
    pub opt: AdamState<F>,
    pub rng: SeedRng,
    pub step: u64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    cfg: ModelConfig,
    schema: StyleSchema,
    vocab: Vec<String>,
    rng: SeedRng,
    step: u64,
    adam_t: u64,
}

impl<F: Real> Checkpoint<F> {
    /// Rebuild the model the checkpoint describes.
    pub fn model(&self) -> Model<F> {
        Model {
            cfg: self.cfg.clone(),
            value_counts: self.schema.types.iter().map(|t| t.values.len()).collect(),
            params: self.params.clone(),
        }
    }

    /// Write the checkpoint as a single versioned binary file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out: Vec<u8> = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(match F::PRECISION {
            Precision::F32 => 32,
            Precision::F64 => 64,
        });
        let header = CheckpointHeader {
            cfg: self.cfg.clone(),
            schema: self.schema.clone(),
            vocab: self.vocab.tokens().to_vec(),
            rng: self.rng.clone(),
            step: self.step,
            adam_t: self.opt.t,
        };
        let header_bytes = serde_json::to_vec(&header)?;
        write_bytes(&mut out, &header_bytes);
        let count = self.params.len();
        write_tensors(&mut out, count, self.params.iter());
        let names: Vec<&str> = self.params.names().iter().map(String::as_str).collect();
        write_tensors(&mut out, count, names.iter().copied().zip(self.opt.m.iter()));
        write_tensors(&mut out, count, names.iter().copied().zip(self.opt.v.iter()));
        out.extend_from_slice(CHECKPOINT_END);
        atomic_write(path, &out)
    }

    /// Load a checkpoint saved at the same precision.
    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let mut r = Reader { bytes: &bytes, pos: 0 };
        let magic = r.take(CHECKPOINT_MAGIC.len())?;
        if magic != CHECKPOINT_MAGIC {
            return Err(r.corrupt("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let precision = match r.take(1)?[0] {
            32 => Precision::F32,
            64 => Precision::F64,
            other => return Err(r.corrupt(&format!("unknown precision tag {other}"))),
        };
        if precision != F::PRECISION {
            return Err(Error::Config(format!(
                "checkpoint holds {precision:?} parameters but {:?} was requested; \
                 rerun with the matching precision",
                F::PRECISION
            )));
        }
        let header_bytes = r.take_block()?;
        let header: CheckpointHeader = serde_json::from_slice(header_bytes)?;
        header.schema.validate()?;
        let vocab = Vocabulary::from_tokens(&header.vocab)?;

        // A freshly initialized model supplies the expected tensor
        // names/shapes; the stored tensors must match it exactly.
        let value_counts: Vec<usize> =
            header.schema.types.iter().map(|t| t.values.len()).collect();
        let reference = Model::<F>::new(header.cfg.clone(), value_counts, 0)?;
        let params = read_tensors::<F>(&mut r, &reference.params)?;
        let m = read_tensors::<F>(&mut r, &reference.params)?;
        let v = read_tensors::<F>(&mut r, &reference.params)?;
        let end = r.take(CHECKPOINT_END.len())?;
        if end != CHECKPOINT_END {
            return Err(r.corrupt("missing end marker"));
        }

        let opt = AdamState {
            m: (0..m.len()).map(|i| m.tensor_at(i).clone()).collect(),
            v: (0..v.len()).map(|i| v.tensor_at(i).clone()).collect(),
            t: header.adam_t,
        };
        Ok(Checkpoint {
            cfg: header.cfg,
            schema: header.schema,
            vocab,
            params,
            opt,
            rng: header.rng,
            step: header.step,
        })
    }
}

/// Read just the precision tag of a checkpoint, for runtime dispatch.
pub fn checkpoint_precision(path: &Path) -> Result<Precision> {
    let mut bytes = vec![0u8; CHECKPOINT_MAGIC.len() + 4 + 1];
    std::fs::File::open(path)
        .and_then(|mut f| f.read_exact(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
        return Err(Error::Parse { line: 0, message: "not a checkpoint file (bad magic)".into() });
    }
    match bytes[CHECKPOINT_MAGIC.len() + 4] {
        32 => Ok(Precision::F32),
        64 => Ok(Precision::F64),
        other => {
            Err(Error::Parse { line: 0, message: format!("unknown precision tag {other}") })
        }
    }
}

fn write_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(bytes);
}

fn write_tensors<'a, F: Real + 'a>(
    out: &mut Vec<u8>,
    count: usize,
    tensors: impl Iterator<Item = (&'a str, &'a Array2<F>)>,
) {
    out.extend_from_slice(&(count as u64).to_le_bytes());
    for (name, tensor) in tensors {
        write_bytes(out, name.as_bytes());
        out.extend_from_slice(&(tensor.nrows() as u64).to_le_bytes());
        out.extend_from_slice(&(tensor.ncols() as u64).to_le_bytes());
        for &x in tensor.iter() {
            out.extend_from_slice(&x.to_f64().to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, message: &str) -> Error {
        Error::Parse { line: 0, message: format!("corrupt checkpoint at byte {}: {message}", self.pos) }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.corrupt("unexpected end of file"));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn take_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn take_block(&mut self) -> Result<&'a [u8]> {
        let len = self.take_u64()? as usize;
        self.take(len)
    }
}

/// Read one tensor section, enforcing exactly the names/shapes of
/// `reference` in order.
fn read_tensors<F: Real>(r: &mut Reader, reference: &ParamStore<F>) -> Result<ParamStore<F>> {
    let count = r.take_u64()? as usize;
    if count != reference.len() {
        return Err(r.corrupt(&format!(
            "expected {} tensors, found {count}",
            reference.len()
        )));
    }
    let mut store = ParamStore::new();
    for expected in reference.names() {
        let name_bytes = r.take_block()?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| r.corrupt("tensor name is not UTF-8"))?;
        if name != expected {
            return Err(r.corrupt(&format!("expected tensor {expected:?}, found {name:?}")));
        }
        let rows = r.take_u64()? as usize;
        let cols = r.take_u64()? as usize;
        if (rows, cols) != reference.get(expected).dim() {
            return Err(r.corrupt(&format!(
                "tensor {name:?} has shape {rows}x{cols}, expected {:?}",
                reference.get(expected).dim()
            )));
        }
        let data = r.take(rows * cols * 8)?;
        let tensor = Array2::from_shape_vec(
            (rows, cols),
            data.chunks_exact(8)
                .map(|c| F::from_f64(f64::from_le_bytes(c.try_into().unwrap())))
                .collect(),
        )
        .expect("shape matches element count");
        store.insert(name, tensor);
    }
    Ok(store)
}

/// Write a file through a temporary sibling and rename, so a crash never
/// leaves a truncated artifact in place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp.partial");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// One JSONL training-log row.
#[derive(Debug, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    #[serde(flatten)]
    pub losses: LossBreakdown,
}

/// Mutable training state plus the immutable run configuration.
pub struct Trainer<F: Real> {
    pub cfg: TrainConfig,
    pub model: Model<F>,
    pub opt: AdamState<F>,
    pub rng: SeedRng,
    pub step: u64,
    pub schema: StyleSchema,
    pub vocab: Vocabulary,
    priors: Vec<Vec<f64>>,
}

impl<F: Real> Trainer<F> {
    /// Fresh state from a configuration. A zero `vocab_size` in the model
    /// config is filled from the vocabulary.
    pub fn new(cfg: &TrainConfig, schema: &StyleSchema, vocab: &Vocabulary) -> Result<Self> {
        let mut cfg = cfg.clone();
        if cfg.model.vocab_size == 0 {
            cfg.model.vocab_size = vocab.len();
        }
        if cfg.model.group_count == 0 {
            cfg.model.group_count = schema.group_count();
        }
        if cfg.model.group_count != schema.group_count() {
            return Err(Error::Config(format!(
                "model expects {} style types but the schema defines {}",
                cfg.model.group_count,
                schema.group_count()
            )));
        }
        cfg.validate()?;
        schema.validate()?;
        let value_counts: Vec<usize> = schema.types.iter().map(|t| t.values.len()).collect();
        let model = Model::new(cfg.model.clone(), value_counts, cfg.seed)?;
        let opt = AdamState::new(&model.params);
        let rng = substream(cfg.seed, "train");
        let priors = schema.types.iter().map(|t| t.prior.clone()).collect();
        Ok(Trainer {
            cfg: cfg.clone(),
            model,
            opt,
            rng,
            step: 0,
            schema: schema.clone(),
            vocab: vocab.clone(),
            priors,
        })
    }

    /// Resume from a checkpoint. The configuration's model section must
    /// match the checkpointed one exactly.
    pub fn from_checkpoint(ckpt: Checkpoint<F>, cfg: &TrainConfig) -> Result<Self> {
        let mut cfg = cfg.clone();
        if cfg.model.vocab_size == 0 {
            cfg.model.vocab_size = ckpt.cfg.vocab_size;
        }
        if cfg.model.group_count == 0 {
            cfg.model.group_count = ckpt.cfg.group_count;
        }
        cfg.validate()?;
        if cfg.model != ckpt.cfg {
            return Err(Error::Config(
                "training config's model section does not match the checkpoint".into(),
            ));
        }
        let priors = ckpt.schema.types.iter().map(|t| t.prior.clone()).collect();
        Ok(Trainer {
            cfg,
            model: ckpt.model(),
            opt: ckpt.opt,
            rng: ckpt.rng,
            step: ckpt.step,
            schema: ckpt.schema,
            vocab: ckpt.vocab,
            priors,
        })
    }

    /// Snapshot the current state.
    pub fn checkpoint(&self) -> Checkpoint<F> {
        Checkpoint {
            cfg: self.cfg.model.clone(),
            schema: self.schema.clone(),
            vocab: self.vocab.clone(),
            params: self.model.params.clone(),
            opt: self.opt.clone(),
            rng: self.rng.clone(),
            step: self.step,
        }
    }

    /// Indices of the next mini-batch: a partial Fisher–Yates draw of
    /// `min(batch_size, n)` distinct indices, a pure function of the RNG.
    fn draw_batch(&mut self, n: usize) -> Vec<usize> {
        use rand::Rng;
        let k = self.cfg.batch_size.min(n);
        let mut indices: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = self.rng.random_range(i..n);
            indices.swap(i, j);
        }
        indices.truncate(k);
        indices
    }

    /// One optimizer step. On a non-finite loss the state is left exactly
    /// as before the step (last-good) and the offending term is named.
    pub fn step(&mut self, examples: &[LabeledExample]) -> Result<LossBreakdown> {
        if examples.is_empty() {
            return Err(Error::Config("training dataset is empty".into()));
        }
        let indices = self.draw_batch(examples.len());
        let subset: Vec<LabeledExample> =
            indices.iter().map(|&i| examples[i].clone()).collect();
        let batch = Batch::new(&subset, self.cfg.model.group_count);

        let mut tape = Tape::new();
        let tape_params = self.model.push_leaves(&mut tape);
        let parts = build_objective(
            &self.model,
            &mut tape,
            &tape_params,
            &batch,
            &self.priors,
            &self.cfg.weights,
            &self.cfg.loss_options,
            &mut self.rng,
        );
        let breakdown = parts.breakdown(&tape, &self.cfg.weights).map_err(|e| match e {
            Error::Numerical { context, .. } => {
                Error::NonFiniteLoss { step: self.step, term: context }
            }
            other => other,
        })?;

        let mut grad_map = tape.backward(parts.total);
        let mut grads: Vec<Array2<F>> = Vec::with_capacity(self.model.params.len());
        for name in self.model.params.names() {
            let var = tape_params.var(name);
            grads.push(
                grad_map
                    .take(var)
                    .unwrap_or_else(|| Array2::zeros(tape.value(var).dim())),
            );
        }
        clip_gradients(&mut grads, self.cfg.grad_clip);
        self.opt.update(&mut self.model.params, &grads, self.cfg.learning_rate);
        self.step += 1;
        Ok(breakdown)
    }
}

/// Outcome of a training run: the final (or last-good) checkpoint, plus the
/// abort error if a non-finite loss stopped the run early.
pub struct TrainRun<F: Real> {
    pub checkpoint: Checkpoint<F>,
    pub abort: Option<Error>,
}

/// Run `cfg.steps` optimizer steps from scratch, logging one JSONL row per
/// step. When `checkpoint_path` is given, the state is saved every
/// `checkpoint_interval` steps (0 means only at the end) and on abort, so a
/// non-finite loss always leaves the last-good state on disk.
pub fn train<F: Real>(
    cfg: &TrainConfig,
    examples: &[LabeledExample],
    schema: &StyleSchema,
    vocab: &Vocabulary,
    log: Option<&mut dyn Write>,
    checkpoint_path: Option<&Path>,
) -> Result<TrainRun<F>> {
    let trainer = Trainer::new(cfg, schema, vocab)?;
    run_steps(trainer, examples, cfg.steps, log, checkpoint_path)
}

/// Continue a trainer for `steps` further optimizer steps.
pub fn run_steps<F: Real>(
    mut trainer: Trainer<F>,
    examples: &[LabeledExample],
    steps: u64,
    mut log: Option<&mut dyn Write>,
    checkpoint_path: Option<&Path>,
) -> Result<TrainRun<F>> {
    if examples.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    let interval = trainer.cfg.checkpoint_interval;
    let target = trainer.step + steps;
    while trainer.step < target {
        match trainer.step(examples) {
            Ok(breakdown) => {
                if let Some(log) = log.as_deref_mut() {
                    let row = LogRow { step: trainer.step, losses: breakdown };
                    serde_json::to_writer(&mut *log, &row)?;
                    log.write_all(b"\n").map_err(|e| Error::io("training log", e))?;
                }
                if interval > 0 && trainer.step % interval == 0 && trainer.step < target {
                    if let Some(path) = checkpoint_path {
                        trainer.checkpoint().save(path)?;
                    }
                }
            }
            Err(err) => {
                let checkpoint = trainer.checkpoint();
                if let Some(path) = checkpoint_path {
                    checkpoint.save(path)?;
                }
                return Ok(TrainRun { checkpoint, abort: Some(err) });
            }
        }
    }
    let checkpoint = trainer.checkpoint();
    if let Some(path) = checkpoint_path {
        checkpoint.save(path)?;
    }
    Ok(TrainRun { checkpoint, abort: None })
}
