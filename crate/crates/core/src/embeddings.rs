//! Skip-gram with negative sampling, plus the text embedding file format:
//! a `rows dim` header followed by one `token v1 … v_dim` line per row.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::corpus::{Vocab, PAD_ID, UNK_ID};
use crate::error::{Error, Result};
use crate::numcore::{cosine, Tensor};

/// Token vectors, one row per vocabulary id. Row `PAD_ID` is all zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    values: Tensor<f64>,
}

impl EmbeddingMatrix {
    pub fn new(values: Tensor<f64>) -> Result<Self> {
        if values.shape().len() != 2 || values.rows() <= PAD_ID as usize {
            return Err(Error::shape(
                "EmbeddingMatrix",
                "expected a [rows, dim] matrix",
            ));
        }
        Ok(EmbeddingMatrix { values })
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Tensor<f64> {
        &self.values
    }

    pub fn row(&self, id: u32) -> &[f64] {
        let d = self.dim();
        &self.values.data()[id as usize * d..(id as usize + 1) * d]
    }

    pub fn cosine(&self, a: u32, b: u32) -> f64 {
        cosine(self.row(a), self.row(b))
    }

    pub fn save(&self, path: impl AsRef<Path>, vocab: &Vocab) -> Result<()> {
        let path = path.as_ref();
        if vocab.len() != self.rows() {
            return Err(Error::shape(
                "EmbeddingMatrix::save",
                format!("vocab {} vs {} rows", vocab.len(), self.rows()),
            ));
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "{} {}", self.rows(), self.dim()).map_err(io)?;
        for (id, token) in vocab.tokens().iter().enumerate() {
            write!(w, "{token}").map_err(io)?;
            for v in self.row(id as u32) {
                write!(w, " {v:e}").map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Vocab, EmbeddingMatrix)> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let parse_err = |line: usize, reason: String| Error::Parse { line, reason };

        let header = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing header".into()))?
            .map_err(|e| Error::io(path, e))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|s| {
                s.parse()
                    .map_err(|_| parse_err(1, format!("bad header `{header}`")))
            })
            .collect::<Result<_>>()?;
        let [rows, dim] = dims[..] else {
            return Err(parse_err(1, format!("bad header `{header}`")));
        };
        let mut tokens = Vec::with_capacity(rows);
        let mut data = Vec::with_capacity(rows * dim);
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            let token = parts.next().unwrap_or_default().to_string();
            let before = data.len();
            for p in parts {
                data.push(
                    p.parse::<f64>()
                        .map_err(|_| parse_err(line_no, format!("bad value `{p}`")))?,
                );
            }
            if data.len() - before != dim {
                return Err(parse_err(
                    line_no,
                    format!("expected {dim} values, got {}", data.len() - before),
                ));
            }
            tokens.push(token);
        }
        if tokens.len() != rows {
            return Err(parse_err(
                rows + 1,
                format!("header promises {rows} rows, found {}", tokens.len()),
            ));
        }
        let vocab = Vocab::from_tokens(tokens)?;
        let m = EmbeddingMatrix::new(Tensor::matrix(rows, dim, data)?)?;
        Ok((vocab, m))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub unigram_power: f64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 20,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            unigram_power: 0.75,
        }
    }
}

/// Trains input vectors with skip-gram and negative sampling over
/// `sentences` of token ids (ids must be `< rows`). Every token within
/// ±`window` of a center is a positive pair. The learning rate decays
/// linearly over all updates.
pub fn train_skipgram<R: Rng + ?Sized>(
    sentences: &[Vec<u32>],
    rows: usize,
    config: &SkipGramConfig,
    rng: &mut R,
) -> Result<EmbeddingMatrix> {
    let total_tokens: usize = sentences.iter().map(|s| s.len()).sum();
    if total_tokens == 0 {
        return Err(Error::Empty("train_skipgram"));
    }
    if config.dim == 0 {
        return Err(Error::invalid("dim", "must be at least 1"));
    }
    if config.window == 0 {
        return Err(Error::invalid("window", "must be at least 1"));
    }
    if rows <= UNK_ID as usize {
        return Err(Error::invalid("rows", "table must include reserved rows"));
    }
    let dim = config.dim;
    let mut counts = vec![0f64; rows];
    for s in sentences {
        for &t in s {
            if t as usize >= rows {
                return Err(Error::TokenOutOfRange { id: t, rows });
            }
            counts[t as usize] += 1.0;
        }
    }
    counts[PAD_ID as usize] = 0.0;

    let bound = 0.5 / dim as f64;
    let mut input: Vec<f64> = (0..rows * dim)
        .map(|i| {
            if i / dim == PAD_ID as usize {
                0.0
            } else {
                rng.random_range(-bound..bound)
            }
        })
        .collect();
    let mut output = vec![0f64; rows * dim];

    let weights: Vec<f64> = counts
        .iter()
        .map(|&c| {
            if c > 0.0 {
                c.powf(config.unigram_power)
            } else {
                0.0
            }
        })
        .collect();
    let noise =
        WeightedIndex::new(&weights).map_err(|e| Error::invalid("corpus", e.to_string()))?;

    let total_updates = (config.epochs * total_tokens).max(1) as f64;
    let mut processed = 0usize;
    let mut grad_in = vec![0f64; dim];
    for _ in 0..config.epochs {
        for s in sentences {
            for (pos, &center) in s.iter().enumerate() {
                if center == PAD_ID {
                    continue;
                }
                let lr = (config.learning_rate * (1.0 - processed as f64 / total_updates))
                    .max(config.learning_rate * 1e-4);
                processed += 1;
                let lo = pos.saturating_sub(config.window);
                let hi = (pos + config.window + 1).min(s.len());
                for (ctx_pos, &context) in s.iter().enumerate().take(hi).skip(lo) {
                    if ctx_pos == pos || context == PAD_ID {
                        continue;
                    }
                    let ci = center as usize * dim;
                    grad_in.iter_mut().for_each(|g| *g = 0.0);
                    let update = |target: usize,
                                  label: f64,
                                  out: &mut [f64],
                                  inp: &[f64],
                                  gi: &mut [f64]| {
                        let ti = target * dim;
                        let dot: f64 = (0..dim).map(|d| inp[ci + d] * out[ti + d]).sum();
                        let g = lr * (label - crate::numcore::sigmoid(dot));
                        for d in 0..dim {
                            gi[d] += g * out[ti + d];
                            out[ti + d] += g * inp[ci + d];
                        }
                    };
                    update(context as usize, 1.0, &mut output, &input, &mut grad_in);
                    for _ in 0..config.negatives {
                        let neg = noise.sample(rng);
                        if neg == context as usize {
                            continue;
                        }
                        update(neg, 0.0, &mut output, &input, &mut grad_in);
                    }
                    for d in 0..dim {
                        input[ci + d] += grad_in[d];
                    }
                }
            }
        }
    }
    EmbeddingMatrix::new(Tensor::matrix(rows, dim, input)?)
}

/// Looks up embedded vectors for a token sequence. Ids past the vocabulary
/// but inside the table fall back to the `<unk>` row.
pub fn embed_sequence(
    vocab: &Vocab,
    matrix: &EmbeddingMatrix,
    tokens: &[u32],
) -> Result<Vec<Vec<f64>>> {
    if matrix.rows() < vocab.len() {
        return Err(Error::shape(
            "embed_sequence",
            format!("{} rows cannot cover {} tokens", matrix.rows(), vocab.len()),
        ));
    }
    tokens
        .iter()
        .map(|&id| {
            if id as usize >= matrix.rows() {
                return Err(Error::TokenOutOfRange {
                    id,
                    rows: matrix.rows(),
                });
            }
            let id = if (id as usize) < vocab.len() {
                id
            } else {
                UNK_ID
            };
            Ok(matrix.row(id).to_vec())
        })
        .collect()
}
