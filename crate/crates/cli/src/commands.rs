//! Subcommand implementations.
//!
//! Every command follows the same shape: resolve configuration (file, then
//! flags, then environment), refuse to clobber existing outputs unless
//! `--force` is given, hash the inputs into a [`RunManifest`] before any
//! work starts, do the work through the core library, and write the
//! manifest last. All randomness flows from the single `--seed` through
//! named substreams, so a manifest plus its inputs reproduces a run
//! exactly.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use distangle_core::corpus::{
    builtin_tense_lexicon, generate_synthetic, label_tense, load_jsonl, write_jsonl,
    LabeledExample, StyleLexicon, StyleSchema, SynthConfig, TenseLabel, Vocabulary, TENSE_TYPE,
    TENSE_VALUES,
};
use distangle_core::evalkit::{encode_split, evaluate, export_embeddings, probe_accuracy, EvalMode};
use distangle_core::real::{Precision, Real};
use distangle_core::rng::substream;
use distangle_core::trainer::{
    atomic_write, checkpoint_precision, train, Checkpoint, TrainConfig,
};
use distangle_core::transfer::{batch_transfer, StyleTarget, TransferRequest};
use distangle_core::{Error, Result};

use crate::manifest::RunManifest;

/// Refuse to overwrite existing outputs unless forced.
fn ensure_writable(paths: &[&Path], force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    for p in paths {
        if p.exists() {
            return Err(Error::Config(format!(
                "output {} already exists; pass --force to overwrite",
                p.display()
            )));
        }
    }
    Ok(())
}

fn create_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// `DISTANGLE_PRECISION` overrides the configured float width.
fn precision_from_env() -> Result<Option<Precision>> {
    match std::env::var("DISTANGLE_PRECISION") {
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::Config(format!("DISTANGLE_PRECISION: {e}"))),
        Ok(v) => match v.trim() {
            "32" => Ok(Some(Precision::F32)),
            "64" => Ok(Some(Precision::F64)),
            other => Err(Error::Config(format!(
                "DISTANGLE_PRECISION must be 32 or 64, got {other:?}"
            ))),
        },
    }
}

/// Tokenize one input line the same way the JSONL loader does: lowercase,
/// split on whitespace, map unknown words to the UNK id, truncate.
fn tokenize_line(line: &str, vocab: &Vocabulary, max_len: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = line
        .to_lowercase()
        .split_whitespace()
        .map(|t| vocab.lookup_or_unk(t))
        .collect();
    ids.truncate(max_len);
    ids
}

// ---------------------------------------------------------------------------
// datagen

/// Generate a synthetic labeled corpus with train/valid/test splits.
#[derive(Debug, Args)]
pub struct DatagenArgs {
    /// Generator configuration file (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Directory for train/valid/test JSONL, schema, lexicon, and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the configuration's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

pub fn cmd_datagen(args: &DatagenArgs) -> Result<()> {
    let mut cfg: SynthConfig = serde_json::from_str(&read_to_string(&args.config)?)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    if cfg.corpus_size < 10 {
        return Err(Error::Config(
            "corpus_size must be at least 10 for an 80/10/10 split".into(),
        ));
    }
    create_out_dir(&args.out)?;
    let paths: Vec<PathBuf> = [
        "train.jsonl",
        "valid.jsonl",
        "test.jsonl",
        "schema.json",
        "lexicon.json",
    ]
    .iter()
    .map(|f| args.out.join(f))
    .collect();
    ensure_writable(&paths.iter().map(PathBuf::as_path).collect::<Vec<_>>(), args.force)?;

    let mut manifest = RunManifest::start("datagen", serde_json::to_value(&cfg)?, cfg.seed);
    manifest.record_input(&args.config)?;

    let corpus = generate_synthetic(&cfg)?;
    let n = corpus.examples.len();
    let n_train = n * 8 / 10;
    let n_valid = n / 10;
    let train_split = &corpus.examples[..n_train];
    let valid_split = &corpus.examples[n_train..n_train + n_valid];
    let test_split = &corpus.examples[n_train + n_valid..];
    let schema = corpus.schema.with_empirical_priors(train_split);

    write_jsonl(&paths[0], train_split, &schema, &corpus.vocab)?;
    write_jsonl(&paths[1], valid_split, &schema, &corpus.vocab)?;
    write_jsonl(&paths[2], test_split, &schema, &corpus.vocab)?;
    schema.save(&paths[3])?;
    corpus.lexicon.save(&paths[4])?;
    for p in &paths {
        manifest.record_output(p);
    }
    manifest.finish(&args.out)?;
    println!(
        "wrote {} train / {} valid / {} test examples to {}",
        train_split.len(),
        valid_split.len(),
        test_split.len(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train

/// Train a model from a configuration and a data directory.
#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training configuration file (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Data directory from `datagen` (train.jsonl and schema.json).
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for checkpoint.bin, train_log.jsonl, and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the configuration's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the configured number of optimizer steps.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

fn run_train<F: Real>(
    cfg: &TrainConfig,
    examples: &[LabeledExample],
    schema: &StyleSchema,
    vocab: &Vocabulary,
    log_path: &Path,
    ckpt_path: &Path,
) -> Result<u64> {
    let file = fs::File::create(log_path).map_err(|e| Error::io(log_path, e))?;
    let mut log = std::io::BufWriter::new(file);
    let run = train::<F>(cfg, examples, schema, vocab, Some(&mut log), Some(ckpt_path))?;
    log.flush().map_err(|e| Error::io(log_path, e))?;
    if let Some(abort) = run.abort {
        return Err(abort);
    }
    Ok(run.checkpoint.step)
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = serde_json::from_str(&read_to_string(&args.config)?)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(steps) = args.steps {
        cfg.steps = steps;
    }
    if let Some(precision) = precision_from_env()? {
        cfg.precision = precision;
    }
    let schema_path = args.data.join("schema.json");
    let train_path = args.data.join("train.jsonl");
    let schema = StyleSchema::load(&schema_path)?;
    let (examples, vocab, schema) = load_jsonl(&train_path, &schema, None, cfg.model.max_len)?;

    create_out_dir(&args.out)?;
    let ckpt_path = args.out.join("checkpoint.bin");
    let log_path = args.out.join("train_log.jsonl");
    ensure_writable(&[&ckpt_path, &log_path], args.force)?;

    let mut manifest = RunManifest::start("train", serde_json::to_value(&cfg)?, cfg.seed);
    manifest.record_input(&args.config)?;
    manifest.record_input(&schema_path)?;
    manifest.record_input(&train_path)?;

    let step = match cfg.precision {
        Precision::F32 => run_train::<f32>(&cfg, &examples, &schema, &vocab, &log_path, &ckpt_path)?,
        Precision::F64 => run_train::<f64>(&cfg, &examples, &schema, &vocab, &log_path, &ckpt_path)?,
    };
    manifest.record_output(&ckpt_path);
    manifest.record_output(&log_path);
    manifest.finish(&args.out)?;
    println!("trained {step} steps -> {}", ckpt_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// transfer

/// Rewrite sentences with selected style values replaced.
#[derive(Debug, Args)]
pub struct TransferArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Input text, one whitespace-tokenized sentence per line. Blank lines
    /// pass through blank, keeping the output line-aligned.
    #[arg(long)]
    pub input: PathBuf,
    /// Directory for transferred.txt and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Style assignment TYPE=VALUE; repeat for simultaneous transfers.
    #[arg(long = "set", value_name = "TYPE=VALUE")]
    pub set: Vec<String>,
    /// Replace styles with the target distribution mean instead of sampling.
    #[arg(long)]
    pub use_mean: bool,
    /// Seed for the replacement noise.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

/// Resolve `TYPE=VALUE` pairs against the schema, listing the valid names
/// on a miss.
fn parse_set_pairs(schema: &StyleSchema, sets: &[String]) -> Result<Vec<StyleTarget>> {
    let type_names = || -> String {
        schema
            .types
            .iter()
            .map(|t| t.name.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    };
    let mut targets = Vec::with_capacity(sets.len());
    for s in sets {
        let (ty, value) = s.split_once('=').ok_or_else(|| {
            Error::Request(format!("--set expects TYPE=VALUE, got {s:?}"))
        })?;
        let ti = schema.type_index(ty).ok_or_else(|| {
            Error::Request(format!(
                "unknown style type {ty:?}; valid types: {}",
                type_names()
            ))
        })?;
        let vi = schema.value_index(ti, value).ok_or_else(|| {
            Error::Request(format!(
                "unknown value {value:?} for style type {ty:?}; valid values: {}",
                schema.types[ti].values.join(", ")
            ))
        })?;
        targets.push(StyleTarget::new(ti, vi));
    }
    Ok(targets)
}

fn run_transfer<F: Real>(args: &TransferArgs) -> Result<()> {
    let ckpt = Checkpoint::<F>::load(&args.checkpoint)?;
    let targets = parse_set_pairs(&ckpt.schema, &args.set)?;
    let body = read_to_string(&args.input)?;

    create_out_dir(&args.out)?;
    let out_path = args.out.join("transferred.txt");
    ensure_writable(&[&out_path], args.force)?;

    let flags = serde_json::json!({
        "checkpoint": args.checkpoint.display().to_string(),
        "set": args.set,
        "use_mean": args.use_mean,
    });
    let mut manifest = RunManifest::start("transfer", flags, args.seed);
    manifest.record_input(&args.checkpoint)?;
    manifest.record_input(&args.input)?;

    // Blank lines carry no sentence; remember where they were so the output
    // stays line-aligned.
    let mut requests = Vec::new();
    let mut slots: Vec<Option<usize>> = Vec::new();
    for line in body.lines() {
        let ids = tokenize_line(line, &ckpt.vocab, ckpt.cfg.max_len);
        if ids.is_empty() {
            slots.push(None);
        } else {
            let mut req = TransferRequest::new(ids, targets.clone());
            req.use_mean = args.use_mean;
            slots.push(Some(requests.len()));
            requests.push(req);
        }
    }
    let mut rng = substream(args.seed, "cli.transfer");
    let outputs = batch_transfer(&ckpt, &requests, &mut rng)?;
    let mut text = String::new();
    for slot in &slots {
        match slot {
            None => text.push('\n'),
            Some(i) => {
                text.push_str(&ckpt.vocab.decode(&outputs[*i]));
                text.push('\n');
            }
        }
    }
    atomic_write(&out_path, text.as_bytes())?;
    manifest.record_output(&out_path);
    manifest.finish(&args.out)?;
    println!(
        "transferred {} sentences -> {}",
        requests.len(),
        out_path.display()
    );
    Ok(())
}

pub fn cmd_transfer(args: &TransferArgs) -> Result<()> {
    match checkpoint_precision(&args.checkpoint)? {
        Precision::F32 => run_transfer::<f32>(args),
        Precision::F64 => run_transfer::<f64>(args),
    }
}

// ---------------------------------------------------------------------------
// eval

/// Run the full evaluation battery and write a JSON report.
#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Data directory with train.jsonl, test.jsonl, and lexicon.json.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for report.json and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for transfer noise and classifier/probe splits.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Score each sentence against itself instead of transferring — a
    /// plumbing self-check where word overlap and BLEU must equal 1.
    #[arg(long)]
    pub identity: bool,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

/// Load the train/test splits of a data directory under a checkpoint's
/// frozen vocabulary and schema.
fn load_eval_data<F: Real>(
    ckpt: &Checkpoint<F>,
    data: &Path,
) -> Result<(Vec<LabeledExample>, Vec<LabeledExample>, PathBuf, PathBuf)> {
    let train_path = data.join("train.jsonl");
    let test_path = data.join("test.jsonl");
    let max_len = ckpt.cfg.max_len;
    let (train, _, _) = load_jsonl(&train_path, &ckpt.schema, Some(&ckpt.vocab), max_len)?;
    let (test, _, _) = load_jsonl(&test_path, &ckpt.schema, Some(&ckpt.vocab), max_len)?;
    Ok((train, test, train_path, test_path))
}

fn run_eval<F: Real>(args: &EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::<F>::load(&args.checkpoint)?;
    let lexicon_path = args.data.join("lexicon.json");
    let lexicon = StyleLexicon::load(&lexicon_path)?;
    let (train_split, test_split, train_path, test_path) = load_eval_data(&ckpt, &args.data)?;

    create_out_dir(&args.out)?;
    let report_path = args.out.join("report.json");
    ensure_writable(&[&report_path], args.force)?;

    let mode = if args.identity {
        EvalMode::Identity
    } else {
        EvalMode::Transfer
    };
    let flags = serde_json::json!({
        "checkpoint": args.checkpoint.display().to_string(),
        "mode": mode,
    });
    let mut manifest = RunManifest::start("eval", flags, args.seed);
    manifest.record_input(&args.checkpoint)?;
    manifest.record_input(&train_path)?;
    manifest.record_input(&test_path)?;
    manifest.record_input(&lexicon_path)?;

    let model = ckpt.model();
    let report = evaluate(
        &model,
        &ckpt.schema,
        &ckpt.vocab,
        &train_split,
        &test_split,
        &lexicon,
        args.seed,
        mode,
    )?;
    atomic_write(&report_path, (report.to_json()? + "\n").as_bytes())?;
    manifest.record_output(&report_path);
    manifest.finish(&args.out)?;
    for t in &report.types {
        println!(
            "{}: sta {:.3} cs {:.3} wo {:.3} ppl {:.1} bleu {:.3} style-probe {:.3} content-probe {:.3}",
            t.name, t.sta, t.cs.value, t.wo.value, t.ppl, t.bleu,
            t.style_probe_accuracy, t.content_probe_accuracy
        );
    }
    for p in &report.pairs {
        println!(
            "transfer {} / observe {}: sta_origin {:.3} sta_keep {:.3} delta {:.3}",
            p.transferred, p.observed, p.sta_origin, p.sta_keep, p.delta
        );
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    match checkpoint_precision(&args.checkpoint)? {
        Precision::F32 => run_eval::<f32>(args),
        Precision::F64 => run_eval::<f64>(args),
    }
}

// ---------------------------------------------------------------------------
// probe

/// Probe latent slices for style information.
#[derive(Debug, Args)]
pub struct ProbeArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Data directory with test.jsonl.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for probes.json and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for the probe train/held-out splits.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

/// One probe result row.
#[derive(Debug, Serialize, Deserialize)]
pub struct ProbeRow {
    /// Style type whose label is being predicted.
    pub style_type: String,
    /// Latent slice the probe reads: the type's own style slice or content.
    pub slice: String,
    pub accuracy: f64,
}

fn run_probe<F: Real>(args: &ProbeArgs) -> Result<()> {
    let ckpt = Checkpoint::<F>::load(&args.checkpoint)?;
    let test_path = args.data.join("test.jsonl");
    let (test_split, _, _) = load_jsonl(&test_path, &ckpt.schema, Some(&ckpt.vocab), ckpt.cfg.max_len)?;

    create_out_dir(&args.out)?;
    let out_path = args.out.join("probes.json");
    ensure_writable(&[&out_path], args.force)?;

    let flags = serde_json::json!({
        "checkpoint": args.checkpoint.display().to_string(),
    });
    let mut manifest = RunManifest::start("probe", flags, args.seed);
    manifest.record_input(&args.checkpoint)?;
    manifest.record_input(&test_path)?;

    let model = ckpt.model();
    let splits: Vec<_> = test_split
        .iter()
        .map(|ex| encode_split(&model, &ex.tokens))
        .collect();
    let content: Vec<Vec<f64>> = splits.iter().map(|s| s.content.to_vec()).collect();
    let mut rows = Vec::new();
    for (t, ty) in ckpt.schema.types.iter().enumerate() {
        let labels: Vec<usize> = test_split.iter().map(|e| e.labels[t]).collect();
        let style: Vec<Vec<f64>> = splits.iter().map(|s| s.styles[t].to_vec()).collect();
        let n_values = ty.values.len();
        rows.push(ProbeRow {
            style_type: ty.name.clone(),
            slice: "style".into(),
            accuracy: probe_accuracy(&style, &labels, n_values, args.seed)?,
        });
        rows.push(ProbeRow {
            style_type: ty.name.clone(),
            slice: "content".into(),
            accuracy: probe_accuracy(&content, &labels, n_values, args.seed)?,
        });
    }
    let body = serde_json::to_string_pretty(&rows)?;
    atomic_write(&out_path, (body + "\n").as_bytes())?;
    manifest.record_output(&out_path);
    manifest.finish(&args.out)?;
    for row in &rows {
        println!("{} / {}: {:.3}", row.style_type, row.slice, row.accuracy);
    }
    Ok(())
}

pub fn cmd_probe(args: &ProbeArgs) -> Result<()> {
    match checkpoint_precision(&args.checkpoint)? {
        Precision::F32 => run_probe::<f32>(args),
        Precision::F64 => run_probe::<f64>(args),
    }
}

// ---------------------------------------------------------------------------
// export

/// Export latent embeddings with per-slice PCA to TSV.
#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Data directory with test.jsonl.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for embeddings.tsv and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

fn run_export<F: Real>(args: &ExportArgs) -> Result<()> {
    let ckpt = Checkpoint::<F>::load(&args.checkpoint)?;
    let test_path = args.data.join("test.jsonl");
    let (test_split, _, _) = load_jsonl(&test_path, &ckpt.schema, Some(&ckpt.vocab), ckpt.cfg.max_len)?;

    create_out_dir(&args.out)?;
    let out_path = args.out.join("embeddings.tsv");
    ensure_writable(&[&out_path], args.force)?;

    let flags = serde_json::json!({
        "checkpoint": args.checkpoint.display().to_string(),
    });
    let mut manifest = RunManifest::start("export", flags, 0);
    manifest.record_input(&args.checkpoint)?;
    manifest.record_input(&test_path)?;

    let model = ckpt.model();
    export_embeddings(&model, &ckpt.schema, &test_split, &out_path)?;
    manifest.record_output(&out_path);
    manifest.finish(&args.out)?;
    println!(
        "exported {} examples x {} slices -> {}",
        test_split.len(),
        ckpt.schema.types.len() + 1,
        out_path.display()
    );
    Ok(())
}

pub fn cmd_export(args: &ExportArgs) -> Result<()> {
    match checkpoint_precision(&args.checkpoint)? {
        Precision::F32 => run_export::<f32>(args),
        Precision::F64 => run_export::<f64>(args),
    }
}

// ---------------------------------------------------------------------------
// label-tense

/// Label sentences with rule-based tense and drop unusable lines.
#[derive(Debug, Args)]
pub struct LabelTenseArgs {
    /// Input JSONL with a "text" field (other labels are preserved).
    #[arg(long)]
    pub input: PathBuf,
    /// Style lexicon with a tense type; defaults to the built-in lexicon.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Directory for labeled.jsonl and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct TextRecord {
    text: String,
    #[serde(default)]
    labels: BTreeMap<String, String>,
}

pub fn cmd_label_tense(args: &LabelTenseArgs) -> Result<()> {
    let lexicon = match &args.lexicon {
        Some(path) => StyleLexicon::load(path)?,
        None => builtin_tense_lexicon(),
    };
    match lexicon.types.get(TENSE_TYPE) {
        Some(values) if TENSE_VALUES.iter().all(|v| values.contains_key(*v)) => {}
        _ => {
            return Err(Error::Config(format!(
                "lexicon must define a {TENSE_TYPE:?} type with values {TENSE_VALUES:?}"
            )))
        }
    }
    let body = read_to_string(&args.input)?;

    create_out_dir(&args.out)?;
    let out_path = args.out.join("labeled.jsonl");
    ensure_writable(&[&out_path], args.force)?;

    let flags = serde_json::json!({
        "lexicon": args.lexicon.as_ref().map(|p| p.display().to_string()),
    });
    let mut manifest = RunManifest::start("label-tense", flags, 0);
    manifest.record_input(&args.input)?;
    if let Some(path) = &args.lexicon {
        manifest.record_input(path)?;
    }

    let mut out = String::new();
    let mut labeled = 0usize;
    let mut ambiguous = 0usize;
    let mut unmatched = 0usize;
    for (lineno, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut record: TextRecord =
            serde_json::from_str(line).map_err(|e| Error::Parse {
                line: lineno + 1,
                message: e.to_string(),
            })?;
        let tokens: Vec<String> = record
            .text
            .to_lowercase()
            .split_whitespace()
            .map(|s| s.to_string())
            .collect();
        match label_tense(&tokens, &lexicon) {
            TenseLabel::Value(v) => {
                record
                    .labels
                    .insert(TENSE_TYPE.to_string(), TENSE_VALUES[v].to_string());
                out.push_str(&serde_json::to_string(&record)?);
                out.push('\n');
                labeled += 1;
            }
            TenseLabel::Ambiguous => ambiguous += 1,
            TenseLabel::Unmatched => unmatched += 1,
        }
    }
    atomic_write(&out_path, out.as_bytes())?;
    manifest.record_output(&out_path);
    manifest.stats = Some(serde_json::json!({
        "labeled": labeled,
        "ambiguous": ambiguous,
        "unmatched": unmatched,
    }));
    manifest.finish(&args.out)?;
    println!("labeled {labeled} sentences; dropped {ambiguous} ambiguous, {unmatched} unmatched");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use distangle_core::corpus::StyleType;

    fn schema() -> StyleSchema {
        StyleSchema::new(vec![
            StyleType {
                name: "tone".into(),
                values: vec!["plain".into(), "fancy".into()],
                prior: vec![0.5, 0.5],
            },
            StyleType {
                name: "tense".into(),
                values: vec!["past".into(), "now".into()],
                prior: vec![0.5, 0.5],
            },
        ])
        .unwrap()
    }

    /// [TRIVIAL] TYPE=VALUE pairs resolve to schema indices; misses name the
    /// valid alternatives.
    #[test]
    fn set_pairs_resolve_or_list_names() {
        let schema = schema();
        let targets =
            parse_set_pairs(&schema, &["tone=fancy".into(), "tense=past".into()]).unwrap();
        assert_eq!(
            targets
                .iter()
                .map(|t| (t.type_index, t.value_index))
                .collect::<Vec<_>>(),
            vec![(0, 1), (1, 0)]
        );
        let err = parse_set_pairs(&schema, &["mood=happy".into()]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("tone") && msg.contains("tense"), "{msg}");
        let err = parse_set_pairs(&schema, &["tone=loud".into()]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("plain") && msg.contains("fancy"), "{msg}");
        let err = parse_set_pairs(&schema, &["tone".into()]).unwrap_err();
        assert!(err.to_string().contains("TYPE=VALUE"));
    }

    /// [TRIVIAL] Existing outputs are refused without --force.
    #[test]
    fn writable_guard() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        std::fs::write(&p, b"hi").unwrap();
        assert!(ensure_writable(&[&p], false).is_err());
        assert!(ensure_writable(&[&p], true).is_ok());
        let q = dir.path().join("y.txt");
        assert!(ensure_writable(&[&q], false).is_ok());
    }
}
