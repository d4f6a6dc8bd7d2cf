//! Data model, dataset ingestion, vocabulary construction, synthetic
//! corpus generation with controllable cross-type label correlation, and
//! rule-based tense labeling.
//!
//! The on-disk dataset format is UTF-8 JSONL, one object per line:
//! `{"text": "...", "labels": {"type_name": "value_name", ...}}`.
//! Tokenization is lowercase whitespace splitting throughout. The
//! synthetic generator plants exactly one marker word per style type per
//! sentence, which makes rule-based labeling and style-word deletion
//! exact, and couples the first two types' label draws through a
//! correlation knob so training bias is reproducible on demand.

use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

/// Reserved vocabulary indices, fixed for every corpus.
pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

/// Surface forms of the reserved tokens, in index order.
pub const RESERVED_TOKENS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Canonical tense values, in label-index order, used by [`label_tense`].
pub const TENSE_TYPE: &str = "tense";
pub const TENSE_VALUES: [&str; 3] = ["past", "now", "future"];

/// One style type: its name, ordered value names, and prior over values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleType {
    pub name: String,
    pub values: Vec<String>,
    pub prior: Vec<f64>,
}

/// The ordered style types a model is trained against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleSchema {
    pub types: Vec<StyleType>,
}

impl StyleSchema {
    pub fn new(types: Vec<StyleType>) -> Result<Self> {
        let schema = StyleSchema { types };
        schema.validate()?;
        Ok(schema)
    }

    /// A schema with uniform priors over each type's values.
    pub fn uniform(types: Vec<(String, Vec<String>)>) -> Result<Self> {
        let types = types
            .into_iter()
            .map(|(name, values)| {
                let p = 1.0 / values.len() as f64;
                StyleType {
                    name,
                    prior: vec![p; values.len()],
                    values,
                }
            })
            .collect();
        Self::new(types)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for ty in &self.types {
            if !names.insert(ty.name.as_str()) {
                return Err(Error::Schema {
                    style_type: ty.name.clone(),
                    message: "duplicate style type name".into(),
                });
            }
            if ty.values.len() < 2 {
                return Err(Error::Schema {
                    style_type: ty.name.clone(),
                    message: "a style type needs at least two values".into(),
                });
            }
            let mut values = BTreeSet::new();
            for v in &ty.values {
                if !values.insert(v.as_str()) {
                    return Err(Error::Schema {
                        style_type: ty.name.clone(),
                        message: format!("duplicate value name {v:?}"),
                    });
                }
            }
            if ty.prior.len() != ty.values.len() {
                return Err(Error::Schema {
                    style_type: ty.name.clone(),
                    message: "prior length must match value count".into(),
                });
            }
            if ty.prior.iter().any(|&p| p < 0.0) {
                return Err(Error::Schema {
                    style_type: ty.name.clone(),
                    message: "prior entries must be nonnegative".into(),
                });
            }
            let sum: f64 = ty.prior.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Schema {
                    style_type: ty.name.clone(),
                    message: format!("prior must sum to 1, got {sum}"),
                });
            }
        }
        Ok(())
    }

    /// Number of style types (the latent split size G).
    pub fn group_count(&self) -> usize {
        self.types.len()
    }

    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.types.iter().position(|t| t.name == name)
    }

    pub fn value_index(&self, type_index: usize, value: &str) -> Option<usize> {
        self.types[type_index].values.iter().position(|v| v == value)
    }

    /// Same schema with priors replaced by empirical label frequencies.
    pub fn with_empirical_priors(&self, examples: &[LabeledExample]) -> Self {
        let mut out = self.clone();
        if examples.is_empty() {
            return out;
        }
        for (ti, ty) in out.types.iter_mut().enumerate() {
            let mut counts = vec![0usize; ty.values.len()];
            for ex in examples {
                counts[ex.labels[ti]] += 1;
            }
            let total = examples.len() as f64;
            ty.prior = counts.iter().map(|&c| c as f64 / total).collect();
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self)?;
        std::fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: StyleSchema = serde_json::from_str(&body)?;
        schema.validate()?;
        Ok(schema)
    }
}

/// One training sentence: token indices plus one value index per type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    pub tokens: Vec<usize>,
    pub labels: Vec<usize>,
}

/// Token-to-index bijection with the four reserved entries at 0..3.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { index, tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the reserved entries are always present
    }

    /// Insert a token if absent; returns its index either way.
    pub fn add(&mut self, token: &str) -> usize {
        assert!(
            !token.is_empty() && !token.chars().any(char::is_whitespace),
            "vocabulary tokens must be non-empty and whitespace-free"
        );
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        let i = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), i);
        i
    }

    pub fn lookup(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn lookup_or_unk(&self, token: &str) -> usize {
        self.lookup(token).unwrap_or(UNK)
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    /// All tokens in index order, reserved entries first.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Rebuild from an index-ordered token list (as produced by
    /// [`Vocabulary::tokens`]), validating the reserved header, uniqueness,
    /// and token well-formedness.
    pub fn from_tokens(tokens: &[String]) -> Result<Self> {
        if tokens.len() < RESERVED_TOKENS.len() {
            return Err(Error::Parse {
                line: 1,
                message: "vocabulary list is missing the reserved tokens".into(),
            });
        }
        let mut vocab = Vocabulary::new();
        for (pos, token) in tokens.iter().enumerate() {
            if pos < RESERVED_TOKENS.len() {
                if token != RESERVED_TOKENS[pos] {
                    return Err(Error::Parse {
                        line: pos + 1,
                        message: format!(
                            "expected reserved token {:?}, found {token:?}",
                            RESERVED_TOKENS[pos]
                        ),
                    });
                }
                continue;
            }
            if token.is_empty() || token.chars().any(char::is_whitespace) {
                return Err(Error::Parse {
                    line: pos + 1,
                    message: format!("malformed vocabulary token {token:?}"),
                });
            }
            if vocab.add(token) != pos {
                return Err(Error::Parse {
                    line: pos + 1,
                    message: format!("duplicate vocabulary token {token:?}"),
                });
            }
        }
        Ok(vocab)
    }

    /// Surface form of a token sequence, space-joined.
    pub fn decode(&self, tokens: &[usize]) -> String {
        let mut out = String::new();
        for (i, &t) in tokens.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(self.token(t));
        }
        out
    }

    /// Newline-separated tokens; line number = index.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut body = String::new();
        for t in &self.tokens {
            let _ = writeln!(body, "{t}");
        }
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut vocab = Vocabulary::new();
        for (lineno, line) in body.lines().enumerate() {
            if lineno < RESERVED_TOKENS.len() {
                if line != RESERVED_TOKENS[lineno] {
                    return Err(Error::Parse {
                        line: lineno + 1,
                        message: format!(
                            "expected reserved token {:?}, found {line:?}",
                            RESERVED_TOKENS[lineno]
                        ),
                    });
                }
                continue;
            }
            if line.is_empty() {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: "empty vocabulary line".into(),
                });
            }
            let idx = vocab.add(line);
            if idx != lineno {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: format!("duplicate vocabulary token {line:?}"),
                });
            }
        }
        if vocab.len() < RESERVED_TOKENS.len() || body.lines().count() < RESERVED_TOKENS.len() {
            return Err(Error::Parse {
                line: 1,
                message: "vocabulary file is missing the reserved tokens".into(),
            });
        }
        Ok(vocab)
    }
}

/// Per (type, value) surface word sets marking that value.
///
/// Serialized as a JSON object `{type: {value: [word, ...]}}`. Value
/// *order* never comes from the lexicon; ordering lives in
/// [`StyleSchema`] or in canonical constants such as [`TENSE_VALUES`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StyleLexicon {
    pub types: BTreeMap<String, BTreeMap<String, BTreeSet<String>>>,
}

impl StyleLexicon {
    pub fn validate(&self) -> Result<()> {
        for (ty, values) in &self.types {
            let mut seen: BTreeMap<&str, &str> = BTreeMap::new();
            for (value, words) in values {
                for w in words {
                    if let Some(other) = seen.insert(w, value) {
                        return Err(Error::Schema {
                            style_type: ty.clone(),
                            message: format!(
                                "word {w:?} marks both {other:?} and {value:?}"
                            ),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn value_words(&self, style_type: &str, value: &str) -> Option<&BTreeSet<String>> {
        self.types.get(style_type).and_then(|v| v.get(value))
    }

    /// The value (if any) whose word set contains `word`.
    pub fn value_of_word(&self, style_type: &str, word: &str) -> Option<&str> {
        let values = self.types.get(style_type)?;
        for (value, words) in values {
            if words.contains(word) {
                return Some(value);
            }
        }
        None
    }

    /// All marker words of one type, across its values.
    pub fn all_words(&self, style_type: &str) -> BTreeSet<&str> {
        self.types
            .get(style_type)
            .map(|values| {
                values
                    .values()
                    .flat_map(|ws| ws.iter().map(|s| s.as_str()))
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self)?;
        std::fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lex: StyleLexicon = serde_json::from_str(&body)?;
        lex.validate()?;
        Ok(lex)
    }
}

/// A small bundled time-word lexicon standing in for a full time-expression
/// corpus; single surface forms only.
pub fn builtin_tense_lexicon() -> StyleLexicon {
    let mut types = BTreeMap::new();
    let mut tense = BTreeMap::new();
    let past = [
        "yesterday", "ago", "was", "were", "had", "did", "went", "said", "finished",
        "earlier", "previously",
    ];
    let now = [
        "today", "now", "is", "are", "am", "currently", "tonight", "presently",
    ];
    let future = [
        "tomorrow", "will", "shall", "soon", "upcoming", "later", "eventually",
    ];
    tense.insert(
        "past".to_string(),
        past.iter().map(|s| s.to_string()).collect(),
    );
    tense.insert(
        "now".to_string(),
        now.iter().map(|s| s.to_string()).collect(),
    );
    tense.insert(
        "future".to_string(),
        future.iter().map(|s| s.to_string()).collect(),
    );
    types.insert(TENSE_TYPE.to_string(), tense);
    let lex = StyleLexicon { types };
    lex.validate().expect("builtin lexicon is disjoint");
    lex
}

/// Outcome of rule-based tense labeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TenseLabel {
    /// Index into [`TENSE_VALUES`] order: past = 0, now = 1, future = 2.
    Value(usize),
    /// Words from two or more tenses matched.
    Ambiguous,
    /// No tense word matched.
    Unmatched,
}

/// Match surface tokens against the lexicon's tense word sets.
///
/// The returned index follows [`TENSE_VALUES`] order regardless of how the
/// lexicon serializes its map. Order-insensitive in the tokens.
pub fn label_tense(tokens: &[String], lexicon: &StyleLexicon) -> TenseLabel {
    let tense = lexicon
        .types
        .get(TENSE_TYPE)
        .expect("lexicon must define a tense type");
    for v in TENSE_VALUES {
        assert!(
            tense.contains_key(v),
            "lexicon tense type must define value {v:?}"
        );
    }
    let mut matched = [false; 3];
    for tok in tokens {
        for (vi, v) in TENSE_VALUES.iter().enumerate() {
            if tense[*v].contains(tok.as_str()) {
                matched[vi] = true;
            }
        }
    }
    match matched.iter().filter(|&&m| m).count() {
        0 => TenseLabel::Unmatched,
        1 => TenseLabel::Value(matched.iter().position(|&m| m).unwrap()),
        _ => TenseLabel::Ambiguous,
    }
}

/// One line of the JSONL dataset format.
#[derive(Debug, Serialize, Deserialize)]
struct JsonlRecord {
    text: String,
    labels: BTreeMap<String, String>,
}

/// Load a JSONL dataset against a schema.
///
/// With `vocab = None` (a training split) the vocabulary is built from the
/// data in first-seen order and the returned schema carries empirical
/// priors; with a frozen vocabulary, unknown surface forms map to UNK and
/// the schema is returned unchanged.
pub fn load_jsonl(
    path: &Path,
    schema: &StyleSchema,
    vocab: Option<&Vocabulary>,
    max_len: usize,
) -> Result<(Vec<LabeledExample>, Vocabulary, StyleSchema)> {
    assert!(max_len >= 1, "max_len must be at least 1");
    let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut texts: Vec<Vec<String>> = Vec::new();
    let mut labels: Vec<Vec<usize>> = Vec::new();
    for (lineno, line) in body.lines().enumerate() {
        let line_no = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: JsonlRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let mut tokens: Vec<String> = record
            .text
            .to_lowercase()
            .split_whitespace()
            .map(|s| s.to_string())
            .collect();
        if tokens.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "text has no tokens".into(),
            });
        }
        tokens.truncate(max_len);
        let mut lab = Vec::with_capacity(schema.group_count());
        for (ti, ty) in schema.types.iter().enumerate() {
            let value = record.labels.get(&ty.name).ok_or_else(|| Error::Schema {
                style_type: ty.name.clone(),
                message: format!("line {line_no}: missing label"),
            })?;
            let vi = schema.value_index(ti, value).ok_or_else(|| Error::Schema {
                style_type: ty.name.clone(),
                message: format!("line {line_no}: unknown value {value:?}"),
            })?;
            lab.push(vi);
        }
        for key in record.labels.keys() {
            if schema.type_index(key).is_none() {
                return Err(Error::Schema {
                    style_type: key.clone(),
                    message: format!("line {line_no}: label type not in schema"),
                });
            }
        }
        texts.push(tokens);
        labels.push(lab);
    }

    let building = vocab.is_none();
    let vocab = match vocab {
        Some(v) => v.clone(),
        None => {
            let mut v = Vocabulary::new();
            for toks in &texts {
                for t in toks {
                    v.add(t);
                }
            }
            v
        }
    };
    let examples: Vec<LabeledExample> = texts
        .iter()
        .zip(labels)
        .map(|(toks, labels)| LabeledExample {
            tokens: toks.iter().map(|t| vocab.lookup_or_unk(t)).collect(),
            labels,
        })
        .collect();
    let schema_out = if building {
        schema.with_empirical_priors(&examples)
    } else {
        schema.clone()
    };
    Ok((examples, vocab, schema_out))
}

/// Write examples back out in the JSONL dataset format.
pub fn write_jsonl(
    path: &Path,
    examples: &[LabeledExample],
    schema: &StyleSchema,
    vocab: &Vocabulary,
) -> Result<()> {
    let mut body = String::new();
    for ex in examples {
        let labels: BTreeMap<String, String> = schema
            .types
            .iter()
            .zip(&ex.labels)
            .map(|(ty, &vi)| (ty.name.clone(), ty.values[vi].clone()))
            .collect();
        let record = JsonlRecord {
            text: vocab.decode(&ex.tokens),
            labels,
        };
        let _ = writeln!(body, "{}", serde_json::to_string(&record)?);
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// One style type in the synthetic generator's configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthTypeSpec {
    pub name: String,
    pub values: Vec<String>,
    /// Marker word forms per value.
    pub markers_per_value: usize,
}

/// Configuration for [`generate_synthetic`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Total surface-vocabulary budget: marker words plus content words.
    pub vocab_size: usize,
    pub template_count: usize,
    /// Inclusive sentence-length range in tokens.
    pub len_range: (usize, usize),
    pub types: Vec<SynthTypeSpec>,
    /// Correlation coupling the first two types' label draws.
    pub rho: f64,
    pub corpus_size: usize,
    pub seed: u64,
}

impl SynthConfig {
    /// One binary sentiment-like type; other fields at desk-scale defaults.
    pub fn single_type(corpus_size: usize, seed: u64) -> Self {
        SynthConfig {
            vocab_size: 120,
            template_count: 24,
            len_range: (5, 11),
            types: vec![SynthTypeSpec {
                name: "style1".into(),
                values: vec!["v0".into(), "v1".into()],
                markers_per_value: 4,
            }],
            rho: 0.0,
            corpus_size,
            seed,
        }
    }

    /// Two binary types with correlation `rho` between their labels.
    pub fn two_type(corpus_size: usize, rho: f64, seed: u64) -> Self {
        SynthConfig {
            vocab_size: 140,
            template_count: 24,
            len_range: (5, 11),
            types: vec![
                SynthTypeSpec {
                    name: "style1".into(),
                    values: vec!["v0".into(), "v1".into()],
                    markers_per_value: 4,
                },
                SynthTypeSpec {
                    name: "style2".into(),
                    values: vec!["v0".into(), "v1".into()],
                    markers_per_value: 4,
                },
            ],
            rho,
            corpus_size,
            seed,
        }
    }

    fn total_markers(&self) -> usize {
        self.types
            .iter()
            .map(|t| t.values.len() * t.markers_per_value)
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho must be in [0,1], got {}", self.rho)));
        }
        if self.corpus_size < 1 {
            return Err(Error::Config("corpus_size must be at least 1".into()));
        }
        if self.template_count < 1 {
            return Err(Error::Config("template_count must be at least 1".into()));
        }
        if self.types.is_empty() {
            return Err(Error::Config("at least one style type is required".into()));
        }
        for ty in &self.types {
            if ty.values.len() < 2 {
                return Err(Error::Config(format!(
                    "type {:?} needs at least two values",
                    ty.name
                )));
            }
            if ty.markers_per_value < 1 {
                return Err(Error::Config(format!(
                    "type {:?} needs at least one marker word per value",
                    ty.name
                )));
            }
        }
        let (lo, hi) = self.len_range;
        if lo < 1 || lo > hi {
            return Err(Error::Config(format!(
                "invalid sentence length range {lo}..={hi}"
            )));
        }
        if lo < self.types.len() {
            return Err(Error::Config(
                "minimum sentence length must fit one marker per type".into(),
            ));
        }
        if self.vocab_size <= self.total_markers() {
            return Err(Error::Config(format!(
                "vocabulary size {} is too small to host {} marker words plus content",
                self.vocab_size,
                self.total_markers()
            )));
        }
        Ok(())
    }
}

/// A generated corpus with everything needed to train and evaluate on it.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub examples: Vec<LabeledExample>,
    pub schema: StyleSchema,
    pub lexicon: StyleLexicon,
    pub vocab: Vocabulary,
}

enum Slot {
    Fixed(String),
    Random,
    /// Marker slot for the given type index.
    Marker(usize),
}

/// Generate a synthetic corpus per the configuration.
///
/// Sentences are templates filled with content words plus exactly one
/// marker word per style type. When two or more types are configured, the
/// second type's label matches a deterministic map of the first's with
/// probability `rho` (drawing uniformly otherwise), so that
/// `p(t2 = matched | t1) = rho + (1 - rho) / |T2|` holds by construction.
/// Deterministic under the seed.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let g = cfg.types.len();
    let content_count = cfg.vocab_size - cfg.total_markers();
    let content: Vec<String> = (0..content_count).map(|k| format!("w{k}")).collect();

    // Marker words and the lexicon they induce.
    let mut marker_words: Vec<Vec<Vec<String>>> = Vec::with_capacity(g);
    let mut lexicon = StyleLexicon::default();
    for ty in &cfg.types {
        let mut per_value = Vec::with_capacity(ty.values.len());
        let mut lex_values = BTreeMap::new();
        for v in &ty.values {
            let words: Vec<String> = (0..ty.markers_per_value)
                .map(|k| format!("m_{}_{}_{k}", ty.name, v))
                .collect();
            lex_values.insert(v.clone(), words.iter().cloned().collect());
            per_value.push(words);
        }
        lexicon.types.insert(ty.name.clone(), lex_values);
        marker_words.push(per_value);
    }
    lexicon.validate()?;

    // Templates: length, marker positions, and fixed/random content slots.
    let mut trng = crate::rng::substream(cfg.seed, "datagen.templates");
    let mut templates: Vec<Vec<Slot>> = Vec::with_capacity(cfg.template_count);
    for _ in 0..cfg.template_count {
        let len = trng.random_range(cfg.len_range.0..=cfg.len_range.1);
        let mut positions: Vec<usize> = (0..len).collect();
        // Fisher-Yates prefix to pick distinct marker positions.
        for i in 0..g {
            let j = trng.random_range(i..len);
            positions.swap(i, j);
        }
        let marker_at: BTreeMap<usize, usize> =
            (0..g).map(|ti| (positions[ti], ti)).collect();
        let mut slots = Vec::with_capacity(len);
        for pos in 0..len {
            if let Some(&ti) = marker_at.get(&pos) {
                slots.push(Slot::Marker(ti));
            } else if trng.random::<f64>() < 0.5 {
                let w = content[trng.random_range(0..content.len())].clone();
                slots.push(Slot::Fixed(w));
            } else {
                slots.push(Slot::Random);
            }
        }
        templates.push(slots);
    }

    // Sentences.
    let mut srng = crate::rng::substream(cfg.seed, "datagen.sentences");
    let mut surface: Vec<Vec<String>> = Vec::with_capacity(cfg.corpus_size);
    let mut labels: Vec<Vec<usize>> = Vec::with_capacity(cfg.corpus_size);
    for _ in 0..cfg.corpus_size {
        let template = &templates[srng.random_range(0..templates.len())];
        let mut lab = Vec::with_capacity(g);
        for ti in 0..g {
            let card = cfg.types[ti].values.len();
            let value = if ti == 1 {
                let matched = lab[0] % card;
                if srng.random::<f64>() < cfg.rho {
                    matched
                } else {
                    srng.random_range(0..card)
                }
            } else {
                srng.random_range(0..card)
            };
            lab.push(value);
        }
        let mut toks = Vec::with_capacity(template.len());
        for slot in template {
            match slot {
                Slot::Fixed(w) => toks.push(w.clone()),
                Slot::Random => {
                    toks.push(content[srng.random_range(0..content.len())].clone())
                }
                Slot::Marker(ti) => {
                    let words = &marker_words[*ti][lab[*ti]];
                    toks.push(words[srng.random_range(0..words.len())].clone());
                }
            }
        }
        surface.push(toks);
        labels.push(lab);
    }

    // Vocabulary in first-seen order, matching what a reload would build.
    let mut vocab = Vocabulary::new();
    for toks in &surface {
        for t in toks {
            vocab.add(t);
        }
    }
    let examples: Vec<LabeledExample> = surface
        .iter()
        .zip(labels)
        .map(|(toks, labels)| LabeledExample {
            tokens: toks.iter().map(|t| vocab.lookup_or_unk(t)).collect(),
            labels,
        })
        .collect();

    let schema = StyleSchema::uniform(
        cfg.types
            .iter()
            .map(|t| (t.name.clone(), t.values.clone()))
            .collect(),
    )?
    .with_empirical_priors(&examples);

    Ok(SyntheticCorpus {
        examples,
        schema,
        lexicon,
        vocab,
    })
}
