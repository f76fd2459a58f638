//! Attention energies, softmax weighting and the intra-document context
//! vector.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::mlstm::{ContextSource, RnnState};
use crate::numcore::{cosine, softmax, Graph, NodeId, ParamStore, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttentionVariant {
    /// `qᵀ W k`
    General,
    /// `qᵀ k`
    Dot,
    /// `wᵀ q`, independent of the key
    Location,
    /// `vᵀ tanh(W_q q + W_k k)`
    Additive,
    /// `cos(q, k)`
    Cosine,
}

impl AttentionVariant {
    pub const ALL: [AttentionVariant; 5] = [
        AttentionVariant::General,
        AttentionVariant::Dot,
        AttentionVariant::Location,
        AttentionVariant::Additive,
        AttentionVariant::Cosine,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttentionVariant::General => "general",
            AttentionVariant::Dot => "dot",
            AttentionVariant::Location => "location",
            AttentionVariant::Additive => "additive",
            AttentionVariant::Cosine => "cosine",
        }
    }
}

impl fmt::Display for AttentionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttentionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                Error::invalid(
                    "attention",
                    format!("`{s}` is not one of general, dot, location, additive, cosine"),
                )
            })
    }
}

pub const ATT_GENERAL: &str = "att.w";
pub const ATT_LOCATION: &str = "att.w_loc";
pub const ATT_ADD_QUERY: &str = "att.w_q";
pub const ATT_ADD_KEY: &str = "att.w_k";
pub const ATT_ADD_OUT: &str = "att.v";
pub const INTRA_W: &str = "intra.w";

/// Energy function between a query (the user-level state) and a key (one
/// writing's state).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionScorer {
    variant: AttentionVariant,
    query_dim: usize,
    key_dim: usize,
    attention_dim: usize,
}

impl AttentionScorer {
    pub fn new(
        variant: AttentionVariant,
        query_dim: usize,
        key_dim: usize,
        attention_dim: usize,
    ) -> Result<Self> {
        if matches!(variant, AttentionVariant::Dot | AttentionVariant::Cosine)
            && query_dim != key_dim
        {
            return Err(Error::invalid(
                "attention",
                format!("{variant} needs equal widths, got {query_dim} and {key_dim}"),
            ));
        }
        Ok(AttentionScorer {
            variant,
            query_dim,
            key_dim,
            attention_dim,
        })
    }

    pub fn variant(&self) -> AttentionVariant {
        self.variant
    }

    pub fn blocks(&self) -> Vec<(String, Vec<usize>)> {
        let (q, k, a) = (self.query_dim, self.key_dim, self.attention_dim);
        match self.variant {
            AttentionVariant::General => vec![(ATT_GENERAL.into(), vec![q, k])],
            AttentionVariant::Location => vec![(ATT_LOCATION.into(), vec![q])],
            AttentionVariant::Additive => vec![
                (ATT_ADD_QUERY.into(), vec![a, q]),
                (ATT_ADD_KEY.into(), vec![a, k]),
                (ATT_ADD_OUT.into(), vec![a]),
            ],
            AttentionVariant::Dot | AttentionVariant::Cosine => vec![],
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.blocks()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        for (name, shape) in self.blocks() {
            let fan_in = *shape.last().unwrap_or(&1);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let n = shape.iter().product();
            let data = (0..n)
                .map(|_| T::lit(rng.random_range(-bound..=bound)))
                .collect();
            store.insert(name, Tensor::new(shape, data).expect("block shape"));
        }
    }

    /// Energy of a single `(query, key)` pair.
    pub fn score<T: Real>(&self, params: &ParamStore<T>, query: &[T], key: &[T]) -> Result<T> {
        if query.len() != self.query_dim || key.len() != self.key_dim {
            return Err(Error::shape(
                "score",
                format!(
                    "query {} / key {}, scorer expects {} / {}",
                    query.len(),
                    key.len(),
                    self.query_dim,
                    self.key_dim
                ),
            ));
        }
        let dot = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&x, &y)| x * y).sum::<T>();
        Ok(match self.variant {
            AttentionVariant::General => {
                let w = params.require(ATT_GENERAL)?;
                let wk: Vec<T> = (0..self.query_dim)
                    .map(|r| dot(&w.data()[r * self.key_dim..(r + 1) * self.key_dim], key))
                    .collect();
                dot(query, &wk)
            }
            AttentionVariant::Dot => dot(query, key),
            AttentionVariant::Location => dot(params.require(ATT_LOCATION)?.data(), query),
            AttentionVariant::Additive => {
                let wq = params.require(ATT_ADD_QUERY)?.data();
                let wk = params.require(ATT_ADD_KEY)?.data();
                let v = params.require(ATT_ADD_OUT)?.data();
                (0..self.attention_dim)
                    .map(|a| {
                        let z = dot(&wq[a * self.query_dim..(a + 1) * self.query_dim], query)
                            + dot(&wk[a * self.key_dim..(a + 1) * self.key_dim], key);
                        v[a] * z.tanh()
                    })
                    .sum()
            }
            AttentionVariant::Cosine => cosine(query, key),
        })
    }

    /// Energies of `query` (`[Q, 1]`) against every column of `keys`
    /// (`[K, m]`); returns `[m, 1]`.
    pub fn energies<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        query: NodeId,
        keys: NodeId,
    ) -> Result<NodeId> {
        let m = g.value(keys).cols();
        match self.variant {
            AttentionVariant::General => {
                let w = g.param(ATT_GENERAL)?;
                let projected = g.matmul_ta(w, query)?;
                g.matmul_ta(keys, projected)
            }
            AttentionVariant::Dot => g.matmul_ta(keys, query),
            AttentionVariant::Location => {
                let w = g.param(ATT_LOCATION)?;
                let s = g.matmul_ta(w, query)?;
                g.broadcast(s, m)
            }
            AttentionVariant::Additive => {
                let wq = g.param(ATT_ADD_QUERY)?;
                let wk = g.param(ATT_ADD_KEY)?;
                let v = g.param(ATT_ADD_OUT)?;
                let kq = g.matmul(wk, keys)?;
                let qq = g.matmul(wq, query)?;
                let z = g.add_col(kq, qq)?;
                let z = g.tanh(z)?;
                g.matmul_ta(z, v)
            }
            AttentionVariant::Cosine => g.cosine_cols(query, keys),
        }
    }
}

/// Softmax over per-writing energies.
pub fn attend<T: Real>(energies: &[T]) -> Result<Vec<T>> {
    softmax(energies)
}

/// `Σⱼ wⱼ·vⱼ`. Weights must sum to one.
pub fn weighted_sum<T: Real>(weights: &[T], vectors: &[Vec<T>]) -> Result<Vec<T>> {
    if weights.len() != vectors.len() {
        return Err(Error::shape(
            "weighted_sum",
            format!("{} weights for {} vectors", weights.len(), vectors.len()),
        ));
    }
    let first = vectors.first().ok_or(Error::Empty("weighted_sum"))?;
    if vectors.iter().any(|v| v.len() != first.len()) {
        return Err(Error::shape("weighted_sum", "vectors differ in width"));
    }
    let total: T = weights.iter().copied().sum();
    if (total - T::one()).abs() > T::lit(1e-6) {
        return Err(Error::invalid("weights", format!("sum to {total}, not 1")));
    }
    let mut out = vec![T::zero(); first.len()];
    for (&w, v) in weights.iter().zip(vectors) {
        for (o, &x) in out.iter_mut().zip(v) {
            *o = *o + w * x;
        }
    }
    Ok(out)
}

/// Which hidden state queries the past inputs of a writing at step `t`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum IntraQuery {
    /// The state entering step `t` (`h_{t-1}`).
    #[default]
    Previous,
    /// The state a context-free step would produce at `t`.
    Tentative,
}

impl IntraQuery {
    pub fn as_str(self) -> &'static str {
        match self {
            IntraQuery::Previous => "previous",
            IntraQuery::Tentative => "tentative",
        }
    }
}

impl FromStr for IntraQuery {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "previous" => Ok(IntraQuery::Previous),
            "tentative" => Ok(IntraQuery::Tentative),
            _ => Err(Error::invalid(
                "intra_query",
                format!("`{s}` is not one of previous, tentative"),
            )),
        }
    }
}

/// Self-attention over a writing's earlier token inputs. `W_intra` is
/// `[hidden_dim, input_dim]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntraScorer {
    input_dim: usize,
    hidden_dim: usize,
}

impl IntraScorer {
    pub fn new(input_dim: usize, hidden_dim: usize) -> Self {
        IntraScorer {
            input_dim,
            hidden_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn parameter_count(&self) -> usize {
        self.input_dim * self.hidden_dim
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        let bound = 1.0 / (self.input_dim as f64).sqrt();
        let data = (0..self.parameter_count())
            .map(|_| T::lit(rng.random_range(-bound..=bound)))
            .collect();
        store.insert(
            INTRA_W,
            Tensor::matrix(self.hidden_dim, self.input_dim, data).expect("block shape"),
        );
    }

    /// `c = Σ_{t'} softmax(hᵀ W x_{t'}) x_{t'}`; zero when there is no past.
    pub fn context_vector<T: Real>(
        &self,
        params: &ParamStore<T>,
        hidden: &[T],
        past_inputs: &[Vec<T>],
    ) -> Result<Vec<T>> {
        if hidden.len() != self.hidden_dim {
            return Err(Error::shape(
                "context_vector",
                format!("hidden width {} vs {}", hidden.len(), self.hidden_dim),
            ));
        }
        if past_inputs.iter().any(|x| x.len() != self.input_dim) {
            return Err(Error::shape("context_vector", "past input width"));
        }
        if past_inputs.is_empty() {
            return Ok(vec![T::zero(); self.input_dim]);
        }
        let w = params.require(INTRA_W)?.data();
        // q = Wᵀ h
        let mut q = vec![T::zero(); self.input_dim];
        for (r, &h) in hidden.iter().enumerate() {
            for (c, qc) in q.iter_mut().enumerate() {
                *qc = *qc + h * w[r * self.input_dim + c];
            }
        }
        let energies: Vec<T> = past_inputs
            .iter()
            .map(|x| x.iter().zip(&q).map(|(&a, &b)| a * b).sum())
            .collect();
        weighted_sum(&attend(&energies)?, past_inputs)
    }

    /// Graph form: `queries` is `[I, m]` (already `Wᵀ h` per column) and
    /// `past[j]` holds writing `j`'s earlier inputs as `[I, t]`, or `None`
    /// when the writing contributes a zero context. Returns `[I, m]`.
    pub fn contexts<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        queries: NodeId,
        past: &[Option<NodeId>],
    ) -> Result<NodeId> {
        let mut cols = Vec::with_capacity(past.len());
        let mut zero = None;
        for (j, p) in past.iter().enumerate() {
            let col = match p {
                Some(p) => {
                    let q = g.column(queries, j)?;
                    let e = g.matmul_ta(*p, q)?;
                    let a = g.softmax(e)?;
                    g.matmul(*p, a)?
                }
                None => match zero {
                    Some(z) => z,
                    None => {
                        let z = g.zeros(self.input_dim, 1)?;
                        zero = Some(z);
                        z
                    }
                },
            };
            cols.push(col);
        }
        g.concat_cols(&cols)
    }

    /// `Wᵀ H` for hidden states `[H, m]`.
    pub fn queries<T: Real>(&self, g: &mut Graph<'_, T>, hidden: NodeId) -> Result<NodeId> {
        let w = g.param(INTRA_W)?;
        g.matmul_ta(w, hidden)
    }
}

/// Context source for `encode_sequence` backed by an `IntraScorer`, using
/// the state entering each step as the query.
pub struct IntraContext<'a, T: Real> {
    pub scorer: &'a IntraScorer,
    pub params: &'a ParamStore<T>,
}

impl<T: Real> ContextSource<T> for IntraContext<'_, T> {
    fn context(&mut self, _t: usize, state: &RnnState<T>, past: &[Vec<T>]) -> Result<Vec<T>> {
        self.scorer.context_vector(self.params, &state.hidden, past)
    }
}
