//! Users as labeled sets of writings: ingestion, tokenization, vocabulary,
//! per-epoch sampling, stratified splits and a synthetic generator.
//!
//! The corpus file holds one JSON object per line:
//!
//! ```text
//! {"user_id": "u1", "label": "RISK", "writings": ["first post", "second post"]}
//! ```

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const RESERVED: usize = 2;

pub const DEFAULT_MAX_VOCAB: usize = 40_000;
pub const DEFAULT_MAX_LEN: usize = 66;
pub const DEFAULT_SAMPLE_K: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "RISK")]
    Risk,
    #[serde(rename = "NO_RISK")]
    NoRisk,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Risk
    }

    pub fn from_positive(positive: bool) -> Self {
        if positive {
            Label::Risk
        } else {
            Label::NoRisk
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Risk => "RISK",
            Label::NoRisk => "NO_RISK",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A user as read from disk: untokenized writings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawUser {
    pub user_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    pub writings: Vec<String>,
}

#[derive(Deserialize)]
struct RawLine {
    user_id: String,
    #[serde(default)]
    label: Option<String>,
    writings: Vec<String>,
}

/// Reads a labeled corpus; every line must carry `RISK` or `NO_RISK`.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<RawUser>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(BufReader::new(file), true)
}

/// Reads a corpus whose labels may be absent (labels present are still validated).
pub fn load_unlabeled(path: impl AsRef<Path>) -> Result<Vec<RawUser>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(BufReader::new(file), false)
}

pub fn parse_corpus(reader: impl BufRead, require_labels: bool) -> Result<Vec<RawUser>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            reason: e.to_string(),
        })?;
        let label = match raw.label.as_deref() {
            Some("RISK") => Some(Label::Risk),
            Some("NO_RISK") => Some(Label::NoRisk),
            Some(other) => {
                return Err(Error::UnknownLabel {
                    line: line_no,
                    label: other.to_string(),
                })
            }
            None if require_labels => {
                return Err(Error::Parse {
                    line: line_no,
                    reason: "missing label".into(),
                })
            }
            None => None,
        };
        out.push(RawUser {
            user_id: raw.user_id,
            label,
            writings: raw.writings,
        });
    }
    Ok(out)
}

pub fn write_corpus(path: impl AsRef<Path>, users: &[RawUser]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for u in users {
        let line = serde_json::to_string(u).expect("corpus record serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Lowercases, splits on whitespace and emits every non-alphanumeric,
/// non-space character as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            out.push(ch.to_lowercase().collect());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Token ↔ id mapping with `<pad>` at 0 and `<unk>` at 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    ids: HashMap<String, u32>,
    tokens: Vec<String>,
    counts: Vec<u64>,
}

impl Vocab {
    /// Builds a vocabulary from an ordered token list, which must start
    /// with the reserved entries.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED || tokens[0] != PAD || tokens[1] != UNK {
            return Err(Error::invalid(
                "vocab",
                format!("token list must begin with {PAD} and {UNK}"),
            ));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::invalid("vocab", format!("duplicate token `{t}`")));
            }
        }
        let counts = vec![0; tokens.len()];
        Ok(Vocab {
            ids,
            tokens,
            counts,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(|s| s.as_str())
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Corpus frequency of a token (0 for reserved or loaded vocabularies).
    pub fn count(&self, token: &str) -> u64 {
        self.ids
            .get(token)
            .map(|&i| self.counts[i as usize])
            .unwrap_or(0)
    }

    pub fn encode_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        self.encode_tokens(&tokenize(text))
    }
}

/// Keeps the `max_size` most frequent tokens (ties by first occurrence).
pub fn build_vocab(corpus: &[RawUser], max_size: usize) -> Result<Vocab> {
    if max_size < 1 {
        return Err(Error::invalid("max_size", "must be at least 1"));
    }
    if corpus.is_empty() {
        return Err(Error::Empty("build_vocab"));
    }
    let mut freq: IndexMap<String, u64> = IndexMap::new();
    for user in corpus {
        for w in &user.writings {
            for t in tokenize(w) {
                *freq.entry(t).or_insert(0) += 1;
            }
        }
    }
    freq.shift_remove(PAD);
    freq.shift_remove(UNK);
    let mut ranked: Vec<(String, u64)> = freq.into_iter().collect();
    // stable: equal counts keep first-occurrence order
    ranked.sort_by_key(|e| std::cmp::Reverse(e.1));
    ranked.truncate(max_size);

    let mut tokens = vec![PAD.to_string(), UNK.to_string()];
    let mut counts = vec![0, 0];
    for (t, c) in ranked {
        tokens.push(t);
        counts.push(c);
    }
    let mut vocab = Vocab::from_tokens(tokens)?;
    vocab.counts = counts;
    Ok(vocab)
}

/// One classification instance: writings as token-id sequences.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserRecord {
    pub user_id: String,
    pub label: Label,
    pub writings: Vec<Vec<u32>>,
}

impl UserRecord {
    /// Users without writings carry no signal: excluded from training and
    /// scored as `NO_RISK`.
    pub fn is_degenerate(&self) -> bool {
        self.writings.is_empty()
    }

    pub fn is_positive(&self) -> bool {
        self.label.is_positive()
    }
}

/// Tokenizes raw users. Unlabeled users become `NO_RISK`.
pub fn to_records(raw: &[RawUser], vocab: &Vocab) -> Vec<UserRecord> {
    raw.iter()
        .map(|u| UserRecord {
            user_id: u.user_id.clone(),
            label: u.label.unwrap_or(Label::NoRisk),
            writings: u.writings.iter().map(|w| vocab.encode(w)).collect(),
        })
        .collect()
}

/// Draws `min(m, sample_k)` distinct writings without replacement and trims
/// each to its first `max_len` tokens. Drawn afresh on every call.
pub fn preprocess_user<R: Rng + ?Sized>(
    record: &UserRecord,
    max_len: usize,
    sample_k: usize,
    rng: &mut R,
) -> UserRecord {
    let m = record.writings.len();
    let k = m.min(sample_k);
    let mut picked = index::sample(rng, m, k).into_vec();
    picked.sort_unstable();
    UserRecord {
        user_id: record.user_id.clone(),
        label: record.label,
        writings: picked
            .into_iter()
            .map(|i| trim(&record.writings[i], max_len))
            .collect(),
    }
}

/// Deterministic evaluation view: the first `sample_k` writings, trimmed.
pub fn select_first_k(record: &UserRecord, max_len: usize, sample_k: usize) -> UserRecord {
    UserRecord {
        user_id: record.user_id.clone(),
        label: record.label,
        writings: record
            .writings
            .iter()
            .take(sample_k)
            .map(|w| trim(w, max_len))
            .collect(),
    }
}

fn trim(w: &[u32], max_len: usize) -> Vec<u32> {
    w[..w.len().min(max_len)].to_vec()
}

pub trait Labeled {
    fn is_positive(&self) -> bool;
}

impl Labeled for UserRecord {
    fn is_positive(&self) -> bool {
        self.label.is_positive()
    }
}

impl Labeled for RawUser {
    fn is_positive(&self) -> bool {
        self.label == Some(Label::Risk)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train_parts: u32,
    pub test_parts: u32,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_parts: 9,
            test_parts: 1,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn with_seed(seed: u64) -> Self {
        SplitSpec {
            seed,
            ..Self::default()
        }
    }

    fn test_fraction(&self) -> f64 {
        self.test_parts as f64 / (self.train_parts + self.test_parts) as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits<R> {
    pub train: Vec<R>,
    pub validation: Vec<R>,
    pub test: Vec<R>,
}

/// Index partition produced by `split_indices`; each list is ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-label shuffle, then per-label rounding of the test and validation
/// shares, so every partition is within one user of exact proportions.
pub fn split_indices(labels: &[bool], spec: &SplitSpec) -> Result<SplitIndices> {
    if spec.train_parts + spec.test_parts == 0 {
        return Err(Error::invalid("split", "ratio parts sum to zero"));
    }
    if !(0.0..1.0).contains(&spec.validation_fraction) {
        return Err(Error::invalid("validation_fraction", "must lie in [0, 1)"));
    }
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::SingleClass);
    }
    let mut rng = crate::rng(spec.seed);
    let mut out = SplitIndices {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for mut group in [pos, neg] {
        group.shuffle(&mut rng);
        let n = group.len();
        let n_test = (n as f64 * spec.test_fraction()).round() as usize;
        let n_val = ((n - n_test) as f64 * spec.validation_fraction).round() as usize;
        out.test.extend_from_slice(&group[..n_test]);
        out.validation
            .extend_from_slice(&group[n_test..n_test + n_val]);
        out.train.extend_from_slice(&group[n_test + n_val..]);
    }
    out.train.sort_unstable();
    out.validation.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

pub fn split_stratified<R: Labeled + Clone>(corpus: &[R], spec: &SplitSpec) -> Result<Splits<R>> {
    let labels: Vec<bool> = corpus.iter().map(|u| u.is_positive()).collect();
    let idx = split_indices(&labels, spec)?;
    let take = |ids: &[usize]| ids.iter().map(|&i| corpus[i].clone()).collect();
    Ok(Splits {
        train: take(&idx.train),
        validation: take(&idx.validation),
        test: take(&idx.test),
    })
}

/// Generator settings for a corpus whose positive users plant a marker token.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub positive_fraction: f64,
    pub marker_rate: f64,
    pub vocab_size: usize,
    pub min_writings: usize,
    pub max_writings: usize,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_users: 200,
            positive_fraction: 0.15,
            marker_rate: 0.5,
            vocab_size: 200,
            min_writings: 40,
            max_writings: 40,
            min_len: 4,
            max_len: 12,
        }
    }
}

pub const MARKER_TOKEN: &str = "zqmarker";

/// Sidecar describing how a synthetic corpus was generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub marker_token: String,
    pub positive_users: Vec<String>,
    pub config: SyntheticConfig,
}

impl GroundTruth {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("ground truth serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            reason: e.to_string(),
        })
    }
}

/// Positive users include the marker in each writing with probability
/// `marker_rate`; negative users never see it. Filler words are `w0…`.
pub fn generate_synthetic<R: Rng + ?Sized>(
    config: &SyntheticConfig,
    rng: &mut R,
) -> Result<(Vec<RawUser>, GroundTruth)> {
    let c = config;
    if !(c.positive_fraction > 0.0 && c.positive_fraction < 1.0) {
        return Err(Error::invalid("positive_fraction", "must lie in (0, 1)"));
    }
    if !(c.marker_rate > 0.0 && c.marker_rate <= 1.0) {
        return Err(Error::invalid("marker_rate", "must lie in (0, 1]"));
    }
    if c.vocab_size == 0 {
        return Err(Error::invalid("vocab_size", "must be positive"));
    }
    if c.min_writings > c.max_writings || c.min_len > c.max_len || c.min_len == 0 {
        return Err(Error::invalid(
            "synthetic ranges",
            "need min ≤ max and writings of at least one token",
        ));
    }
    let n_pos = (c.n_users as f64 * c.positive_fraction).round() as usize;
    let mut flags: Vec<bool> = (0..c.n_users).map(|i| i < n_pos).collect();
    flags.shuffle(rng);

    let width = c.n_users.max(1).to_string().len();
    let mut users = Vec::with_capacity(c.n_users);
    let mut positives = Vec::new();
    for (i, &positive) in flags.iter().enumerate() {
        let user_id = format!("user{:0width$}", i, width = width);
        let m = rng.random_range(c.min_writings..=c.max_writings);
        let writings = (0..m)
            .map(|_| {
                let len = rng.random_range(c.min_len..=c.max_len);
                let mut words: Vec<String> = (0..len)
                    .map(|_| format!("w{}", rng.random_range(0..c.vocab_size)))
                    .collect();
                if positive && rng.random_bool(c.marker_rate) {
                    let at = rng.random_range(0..len);
                    words[at] = MARKER_TOKEN.to_string();
                }
                words.join(" ")
            })
            .collect();
        if positive {
            positives.push(user_id.clone());
        }
        users.push(RawUser {
            user_id,
            label: Some(Label::from_positive(positive)),
            writings,
        });
    }
    let truth = GroundTruth {
        marker_token: MARKER_TOKEN.to_string(),
        positive_users: positives,
        config: c.clone(),
    };
    Ok((users, truth))
}

/// Predicts `RISK` for any user with the marker in at least one writing.
pub fn marker_oracle(truth: &GroundTruth, users: &[RawUser]) -> Vec<bool> {
    users
        .iter()
        .map(|u| {
            u.writings
                .iter()
                .any(|w| tokenize(w).contains(&truth.marker_token))
        })
        .collect()
}
