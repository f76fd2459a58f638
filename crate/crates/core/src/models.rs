//! User-level classifiers over a set of writings.
//!
//! All four kinds read a user's writings in lock-step with one post-level
//! mLSTM. They differ in how the per-writing states are combined:
//!
//! * `Lida` averages each writing's own final state.
//! * `Cida` averages the states at every step and feeds the average to a
//!   user-level mLSTM.
//! * `Ida` replaces the average with attention weights scored against the
//!   previous user-level state.
//! * `Iida` is `Ida` whose post-level cell also reads a self-attention
//!   context over the writing's earlier tokens.
//!
//! A writing shorter than the longest one stops updating after its last
//! token; its frozen state keeps taking part in later averages and
//! attention. Writings are processed in a canonical order (sorted by token
//! content), so predictions do not depend on the order they are given in.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::attention::{AttentionScorer, AttentionVariant, IntraQuery, IntraScorer};
use crate::corpus::{UserRecord, DEFAULT_MAX_LEN, DEFAULT_SAMPLE_K, PAD_ID};
use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::mlstm::{GraphState, MlstmCell};
use crate::numcore::{sigmoid, Gradients, Graph, NodeId, ParamStore, Real, Tensor};
use crate::training::ClassWeights;

pub const HEAD: &str = "head";
pub const EMBEDDING: &str = "embedding";
pub const POST_PREFIX: &str = "post";
pub const USER_PREFIX: &str = "user";

/// Parameter counts reported for the reference configuration
/// (hidden 80) of each kind.
pub const REFERENCE_PARAMETER_COUNTS: [(ModelKind, usize); 4] = [
    (ModelKind::Lida, 31_000),
    (ModelKind::Cida, 95_000),
    (ModelKind::Ida, 101_000),
    (ModelKind::Iida, 175_000),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Lida,
    Cida,
    Ida,
    Iida,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Lida,
        ModelKind::Cida,
        ModelKind::Ida,
        ModelKind::Iida,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Lida => "lida",
            ModelKind::Cida => "cida",
            ModelKind::Ida => "ida",
            ModelKind::Iida => "iida",
        }
    }

    pub fn has_user_cell(self) -> bool {
        self != ModelKind::Lida
    }

    pub fn has_attention(self) -> bool {
        matches!(self, ModelKind::Ida | ModelKind::Iida)
    }

    pub fn has_intra(self) -> bool {
        self == ModelKind::Iida
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                Error::invalid("kind", format!("`{s}` is not one of lida, cida, ida, iida"))
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Required for `Ida`/`Iida`, absent otherwise.
    pub attention: Option<AttentionVariant>,
    /// Width of the tanh layer of the additive scorer.
    pub attention_dim: usize,
    pub intra_query: IntraQuery,
    pub fine_tune_embeddings: bool,
    pub max_len: usize,
    pub sample_k: usize,
}

impl ModelConfig {
    pub fn new(kind: ModelKind) -> Self {
        ModelConfig {
            kind,
            embed_dim: 20,
            hidden_dim: 80,
            attention: kind.has_attention().then_some(AttentionVariant::General),
            attention_dim: 80,
            intra_query: IntraQuery::Previous,
            fine_tune_embeddings: false,
            max_len: DEFAULT_MAX_LEN,
            sample_k: DEFAULT_SAMPLE_K,
        }
    }

    pub fn tiny(kind: ModelKind, embed_dim: usize, hidden_dim: usize) -> Self {
        ModelConfig {
            embed_dim,
            hidden_dim,
            attention_dim: hidden_dim,
            ..Self::new(kind)
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("attention_dim", self.attention_dim),
            ("max_len", self.max_len),
            ("sample_k", self.sample_k),
        ] {
            if v == 0 {
                return Err(Error::invalid(field, "must be at least 1"));
            }
        }
        match (self.kind.has_attention(), self.attention) {
            (true, None) => Err(Error::invalid(
                "attention",
                format!("kind {} requires an attention variant", self.kind),
            )),
            (false, Some(v)) => Err(Error::invalid(
                "attention",
                format!("kind {} takes no attention variant (got {v})", self.kind),
            )),
            _ => Ok(()),
        }
    }

    fn post_input_dim(&self) -> usize {
        if self.kind.has_intra() {
            2 * self.embed_dim
        } else {
            self.embed_dim
        }
    }
}

/// `p = σ(wᵀ[a; 1])`, stored as one block of width `hidden_dim + 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredictionHead {
    hidden_dim: usize,
}

impl PredictionHead {
    pub fn new(hidden_dim: usize) -> Self {
        PredictionHead { hidden_dim }
    }

    pub fn width(&self) -> usize {
        self.hidden_dim + 1
    }

    pub fn predict<T: Real>(&self, params: &ParamStore<T>, aggregate: &[T]) -> Result<T> {
        if aggregate.len() != self.hidden_dim {
            return Err(Error::shape(
                "predict",
                format!("aggregate width {} vs {}", aggregate.len(), self.hidden_dim),
            ));
        }
        let w = params.require(HEAD)?.data();
        let logit = aggregate
            .iter()
            .zip(w)
            .fold(w[self.hidden_dim], |acc, (&a, &b)| acc + a * b);
        Ok(sigmoid(logit))
    }

    fn graph<T: Real>(&self, g: &mut Graph<'_, T>, aggregate: NodeId) -> Result<NodeId> {
        let w = g.param(HEAD)?;
        let one = g.constant(Tensor::vector(vec![T::one()]))?;
        let aug = g.concat_rows(&[aggregate, one])?;
        let logit = g.matmul_ta(w, aug)?;
        g.sigmoid(logit)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParameterCount {
    pub total: usize,
    pub components: Vec<(String, usize)>,
}

/// Result of a forward pass on one user.
#[derive(Clone, Debug, PartialEq)]
pub struct Forward<T> {
    pub probability: T,
    /// LIDA's average or the final user-level state.
    pub aggregate: Vec<T>,
    /// Attention weights per step, indexed by the writing's position in the
    /// input. Empty for kinds without attention.
    pub attention: Vec<Vec<T>>,
}

struct ForwardNodes {
    aggregate: NodeId,
    probability: NodeId,
    weights: Vec<NodeId>,
    order: Vec<usize>,
}

/// A trainable model: configuration, components and their parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle<T: Real = f64> {
    config: ModelConfig,
    params: ParamStore<T>,
    /// Frozen token table `[rows, embed_dim]`; `None` when fine-tuned (the
    /// table then lives in `params` as `embedding`).
    embedding: Option<Tensor<T>>,
    embedding_rows: usize,
    post: MlstmCell,
    user: Option<MlstmCell>,
    scorer: Option<AttentionScorer>,
    intra: Option<IntraScorer>,
    head: PredictionHead,
}

impl<T: Real> ModelBundle<T> {
    /// Fresh model with parameters drawn from `seed`.
    pub fn new(config: ModelConfig, embeddings: &EmbeddingMatrix, seed: u64) -> Result<Self> {
        let mut model = Self::skeleton(config, embeddings)?;
        let mut rng = crate::rng(seed);
        let mut store = ParamStore::new();
        model.post.init(&mut store, &mut rng);
        if let Some(u) = &model.user {
            u.init(&mut store, &mut rng);
        }
        if let Some(s) = &model.scorer {
            s.init(&mut store, &mut rng);
        }
        if let Some(i) = &model.intra {
            i.init(&mut store, &mut rng);
        }
        let bound = 1.0 / (model.config.hidden_dim as f64).sqrt();
        let head = (0..model.head.width())
            .map(|_| T::lit(rand::Rng::random_range(&mut rng, -bound..=bound)))
            .collect();
        store.insert(HEAD, Tensor::vector(head));
        if model.config.fine_tune_embeddings {
            store.insert(EMBEDDING, embeddings.values().cast());
        }
        model.params = store;
        Ok(model)
    }

    fn skeleton(config: ModelConfig, embeddings: &EmbeddingMatrix) -> Result<Self> {
        config.validate()?;
        if embeddings.dim() != config.embed_dim {
            return Err(Error::invalid(
                "embed_dim",
                format!(
                    "model expects {} but the embedding table has width {}",
                    config.embed_dim,
                    embeddings.dim()
                ),
            ));
        }
        let h = config.hidden_dim;
        let post = MlstmCell::new(POST_PREFIX, config.post_input_dim(), h);
        let user = config
            .kind
            .has_user_cell()
            .then(|| MlstmCell::new(USER_PREFIX, h, h));
        let scorer = match config.attention {
            Some(v) => Some(AttentionScorer::new(v, h, h, config.attention_dim)?),
            None => None,
        };
        let intra = config
            .kind
            .has_intra()
            .then(|| IntraScorer::new(config.embed_dim, h));
        Ok(ModelBundle {
            embedding: (!config.fine_tune_embeddings).then(|| embeddings.values().cast()),
            embedding_rows: embeddings.rows(),
            params: ParamStore::new(),
            head: PredictionHead::new(h),
            config,
            post,
            user,
            scorer,
            intra,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn post_cell(&self) -> &MlstmCell {
        &self.post
    }

    pub fn user_cell(&self) -> Option<&MlstmCell> {
        self.user.as_ref()
    }

    pub fn scorer(&self) -> Option<&AttentionScorer> {
        self.scorer.as_ref()
    }

    pub fn intra(&self) -> Option<&IntraScorer> {
        self.intra.as_ref()
    }

    pub fn head(&self) -> &PredictionHead {
        &self.head
    }

    /// Embedding row used for token `id` (the live parameter when fine-tuned).
    pub fn embedding_row(&self, id: u32) -> &[T] {
        let table = self.embedding_table();
        let d = self.config.embed_dim;
        &table.data()[id as usize * d..(id as usize + 1) * d]
    }

    fn embedding_table(&self) -> &Tensor<T> {
        match &self.embedding {
            Some(t) => t,
            None => self
                .params
                .get(EMBEDDING)
                .expect("fine-tuned table registered"),
        }
    }

    /// Expected `(name, shape)` of every parameter block.
    pub fn expected_blocks(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = self.post.blocks();
        if let Some(u) = &self.user {
            out.extend(u.blocks());
        }
        if let Some(s) = &self.scorer {
            out.extend(s.blocks());
        }
        if let Some(i) = &self.intra {
            out.push((
                crate::attention::INTRA_W.to_string(),
                vec![self.config.hidden_dim, i.input_dim()],
            ));
        }
        out.push((HEAD.to_string(), vec![self.head.width()]));
        if self.config.fine_tune_embeddings {
            out.push((
                EMBEDDING.to_string(),
                vec![self.embedding_rows, self.config.embed_dim],
            ));
        }
        out
    }

    /// Trainable scalar count with a per-component breakdown. A frozen
    /// embedding table is not counted.
    pub fn count_parameters(&self) -> ParameterCount {
        let mut components: Vec<(String, usize)> = Vec::new();
        for (name, t) in self.params.iter() {
            let comp = match name.split('.').next().unwrap_or(name) {
                POST_PREFIX => "post_cell",
                USER_PREFIX => "user_cell",
                "att" => "attention",
                "intra" => "intra_attention",
                HEAD => "head",
                EMBEDDING => "embedding",
                other => other,
            };
            match components.iter_mut().find(|(c, _)| c == comp) {
                Some((_, n)) => *n += t.len(),
                None => components.push((comp.to_string(), t.len())),
            }
        }
        ParameterCount {
            total: self.params.scalar_count(),
            components,
        }
    }

    fn lookup(
        &self,
        g: &mut Graph<'_, T>,
        table: Option<NodeId>,
        ids: &[Option<u32>],
    ) -> Result<NodeId> {
        let ids: Vec<Option<u32>> = ids.iter().map(|id| id.filter(|&i| i != PAD_ID)).collect();
        if let Some(table) = table {
            return g.gather_cols(table, ids);
        }
        let d = self.config.embed_dim;
        let n = ids.len();
        let mut data = vec![T::zero(); d * n];
        for (j, id) in ids.iter().enumerate() {
            if let Some(id) = *id {
                if id as usize >= self.embedding_rows {
                    return Err(Error::TokenOutOfRange {
                        id,
                        rows: self.embedding_rows,
                    });
                }
                for (k, &v) in self.embedding_row(id).iter().enumerate() {
                    data[k * n + j] = v;
                }
            }
        }
        g.constant(Tensor::matrix(d, n, data)?)
    }

    fn build(&self, g: &mut Graph<'_, T>, user: &UserRecord) -> Result<ForwardNodes> {
        if user.writings.is_empty() {
            return Err(Error::Empty("user writings"));
        }
        let mut order: Vec<usize> = (0..user.writings.len()).collect();
        order.sort_by(|&a, &b| user.writings[a].cmp(&user.writings[b]));
        let writings: Vec<&[u32]> = order.iter().map(|&i| user.writings[i].as_slice()).collect();
        let m = writings.len();
        let steps = writings.iter().map(|w| w.len()).max().unwrap_or(0);
        let table = if self.config.fine_tune_embeddings {
            Some(g.param(EMBEDDING)?)
        } else {
            None
        };

        let mut post = self.post.zero_state(g, m)?;
        let mut user_state = match &self.user {
            Some(cell) => Some(cell.zero_state(g, 1)?),
            None => None,
        };
        let mut weights = Vec::new();

        for t in 0..steps {
            let active: Vec<bool> = writings.iter().map(|w| w.len() > t).collect();
            let ids: Vec<Option<u32>> = writings.iter().map(|w| w.get(t).copied()).collect();
            let x = self.lookup(g, table, &ids)?;
            let input = match &self.intra {
                Some(intra) => {
                    let query_state = match self.config.intra_query {
                        IntraQuery::Previous => post.hidden,
                        IntraQuery::Tentative => {
                            let z = g.zeros(self.config.embed_dim, m)?;
                            let bare = g.concat_rows(&[x, z])?;
                            self.post.step(g, bare, post)?.hidden
                        }
                    };
                    let q = intra.queries(g, query_state)?;
                    let mut past = Vec::with_capacity(m);
                    for (j, w) in writings.iter().enumerate() {
                        past.push(if active[j] && t > 0 {
                            let ids: Vec<Option<u32>> = w[..t].iter().map(|&i| Some(i)).collect();
                            Some(self.lookup(g, table, &ids)?)
                        } else {
                            None
                        });
                    }
                    let ctx = intra.contexts(g, q, &past)?;
                    g.concat_rows(&[x, ctx])?
                }
                None => x,
            };
            let next = self.post.step(g, input, post)?;
            post = if active.iter().all(|&a| a) {
                next
            } else {
                GraphState {
                    hidden: g.blend(next.hidden, post.hidden, active.clone())?,
                    memory: g.blend(next.memory, post.memory, active)?,
                }
            };

            if let (Some(cell), Some(state)) = (&self.user, user_state) {
                let a = match &self.scorer {
                    None => g.mean_cols(post.hidden)?,
                    Some(s) => {
                        let e = s.energies(g, state.hidden, post.hidden)?;
                        let w = g.softmax(e)?;
                        weights.push(w);
                        g.matmul(post.hidden, w)?
                    }
                };
                user_state = Some(cell.step(g, a, state)?);
            }
        }

        let aggregate = match user_state {
            Some(s) => s.hidden,
            None => g.mean_cols(post.hidden)?,
        };
        let probability = self.head.graph(g, aggregate)?;
        Ok(ForwardNodes {
            aggregate,
            probability,
            weights,
            order,
        })
    }

    pub fn forward(&self, user: &UserRecord) -> Result<Forward<T>> {
        let mut g = Graph::new(&self.params);
        let nodes = self.build(&mut g, user)?;
        let attention = nodes
            .weights
            .iter()
            .map(|&w| {
                let sorted = g.value(w).data();
                let mut out = vec![T::zero(); sorted.len()];
                for (pos, &orig) in nodes.order.iter().enumerate() {
                    out[orig] = sorted[pos];
                }
                out
            })
            .collect();
        Ok(Forward {
            probability: g.value(nodes.probability).data()[0],
            aggregate: g.value(nodes.aggregate).data().to_vec(),
            attention,
        })
    }

    /// The kind's aggregate: LIDA's mean final state, or the user-level
    /// state after the last step for the other kinds.
    pub fn encode_user(&self, user: &UserRecord) -> Result<Vec<T>> {
        Ok(self.forward(user)?.aggregate)
    }

    pub fn predict(&self, aggregate: &[T]) -> Result<T> {
        self.head.predict(&self.params, aggregate)
    }

    pub fn predict_user(&self, user: &UserRecord) -> Result<T> {
        Ok(self.forward(user)?.probability)
    }

    /// Weighted cross-entropy of one user under `params` (which must share
    /// this model's layout).
    pub fn loss_with(
        &self,
        params: &ParamStore<T>,
        user: &UserRecord,
        weights: &ClassWeights,
    ) -> Result<T> {
        let mut g = Graph::new(params);
        let nodes = self.build(&mut g, user)?;
        let w = T::lit(weights.for_label(user.is_positive()));
        let loss = g.weighted_bce(nodes.probability, user.is_positive(), w)?;
        Ok(g.value(loss).data()[0])
    }

    pub fn loss_and_gradients(
        &self,
        user: &UserRecord,
        weights: &ClassWeights,
    ) -> Result<(T, Gradients<T>)> {
        let mut g = Graph::new(&self.params);
        let nodes = self.build(&mut g, user)?;
        let w = T::lit(weights.for_label(user.is_positive()));
        let loss = g.weighted_bce(nodes.probability, user.is_positive(), w)?;
        let grads = g.backward(loss)?;
        Ok((g.value(loss).data()[0], grads))
    }

    /// Converts to another precision.
    pub fn cast<U: Real>(&self) -> ModelBundle<U> {
        ModelBundle {
            config: self.config.clone(),
            params: self.params.cast(),
            embedding: self.embedding.as_ref().map(|t| t.cast()),
            embedding_rows: self.embedding_rows,
            post: self.post.clone(),
            user: self.user.clone(),
            scorer: self.scorer.clone(),
            intra: self.intra.clone(),
            head: self.head.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let header = format!(
            "kind={}\nembed_dim={}\nhidden_dim={}\nattention={}\nattention_dim={}\nintra_query={}\n\
             fine_tune_embeddings={}\nmax_len={}\nsample_k={}\nembedding_rows={}\nprecision={}\n",
            c.kind,
            c.embed_dim,
            c.hidden_dim,
            c.attention.map(|a| a.as_str()).unwrap_or("none"),
            c.attention_dim,
            c.intra_query.as_str(),
            c.fine_tune_embeddings,
            c.max_len,
            c.sample_k,
            self.embedding_rows,
            T::NAME,
        );
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_f64().unwrap_or(f64::NAN).to_le_bytes());
            }
        }
        out
    }

    /// Parses a model file. The embedding table must match the one the
    /// model was trained with in shape.
    pub fn from_bytes(bytes: &[u8], embeddings: &EmbeddingMatrix) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::ModelFormat("not a model file".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::ModelFormat(format!("unsupported version {version}")));
        }
        let header_len = r.u32()? as usize;
        let header = std::str::from_utf8(r.take(header_len)?)
            .map_err(|_| Error::ModelFormat("header is not UTF-8".into()))?;
        let (config, rows) = parse_header(header)?;
        if rows != embeddings.rows() {
            return Err(Error::ModelFormat(format!(
                "model was built for {rows} embedding rows, table has {}",
                embeddings.rows()
            )));
        }
        let mut model = Self::skeleton(config, embeddings)?;
        let n = r.u32()? as usize;
        let mut store = ParamStore::new();
        for _ in 0..n {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::ModelFormat("block name is not UTF-8".into()))?
                .to_string();
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let data = (0..count)
                .map(|_| r.f64().map(T::lit))
                .collect::<Result<Vec<T>>>()?;
            store.insert(name, Tensor::new(shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::ModelFormat("trailing bytes".into()));
        }
        let expected = model.expected_blocks();
        let got: Vec<(String, Vec<usize>)> = store
            .iter()
            .map(|(k, v)| (k.to_string(), v.shape().to_vec()))
            .collect();
        if expected != got {
            return Err(Error::ModelFormat(
                "parameter blocks do not match the header configuration".into(),
            ));
        }
        model.params = store;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, embeddings: &EmbeddingMatrix) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, embeddings)
    }
}

const MAGIC: &[u8; 4] = b"DSMB";
const FORMAT_VERSION: u32 = 1;

/// Header of a model file.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelHeader {
    pub config: ModelConfig,
    pub embedding_rows: usize,
    /// `f64` or `f32`: the precision the model was trained in.
    pub precision: String,
}

/// Reads a model file's header without loading its parameters.
pub fn read_model_header(path: impl AsRef<Path>) -> Result<ModelHeader> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };
    if r.take(4)? != MAGIC {
        return Err(Error::ModelFormat("not a model file".into()));
    }
    r.u32()?;
    let len = r.u32()? as usize;
    let header = std::str::from_utf8(r.take(len)?)
        .map_err(|_| Error::ModelFormat("header is not UTF-8".into()))?;
    let (config, embedding_rows) = parse_header(header)?;
    let precision = header
        .lines()
        .find_map(|l| l.strip_prefix("precision="))
        .unwrap_or("f64")
        .to_string();
    Ok(ModelHeader {
        config,
        embedding_rows,
        precision,
    })
}

fn parse_header(header: &str) -> Result<(ModelConfig, usize)> {
    let mut map = std::collections::HashMap::new();
    for line in header.lines() {
        if let Some((k, v)) = line.split_once('=') {
            map.insert(k, v);
        }
    }
    let get = |k: &str| -> Result<&str> {
        map.get(k)
            .copied()
            .ok_or_else(|| Error::ModelFormat(format!("header lacks `{k}`")))
    };
    let num = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::ModelFormat(format!("header field `{k}` is not a number")))
    };
    let attention = match get("attention")? {
        "none" => None,
        v => Some(v.parse()?),
    };
    let config = ModelConfig {
        kind: get("kind")?.parse()?,
        embed_dim: num("embed_dim")?,
        hidden_dim: num("hidden_dim")?,
        attention,
        attention_dim: num("attention_dim")?,
        intra_query: get("intra_query")?.parse()?,
        fine_tune_embeddings: get("fine_tune_embeddings")? == "true",
        max_len: num("max_len")?,
        sample_k: num("sample_k")?,
    };
    Ok((config, num("embedding_rows")?))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::ModelFormat("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;
    use rand::Rng;

    fn table(rows: usize, dim: usize, seed: u64) -> EmbeddingMatrix {
        let mut r = crate::rng(seed);
        let data = (0..rows * dim)
            .map(|i| {
                if i / dim == 0 {
                    0.0
                } else {
                    r.random_range(-1.0..1.0)
                }
            })
            .collect();
        EmbeddingMatrix::new(Tensor::matrix(rows, dim, data).unwrap()).unwrap()
    }

    fn user(writings: Vec<Vec<u32>>) -> UserRecord {
        UserRecord {
            user_id: "u".into(),
            label: Label::Risk,
            writings,
        }
    }

    #[test]
    fn config_contradictions_are_rejected() {
        let mut c = ModelConfig::new(ModelKind::Ida);
        c.attention = None;
        assert!(matches!(
            c.validate(),
            Err(Error::InvalidArgument {
                field: "attention",
                ..
            })
        ));
        let mut c = ModelConfig::new(ModelKind::Lida);
        c.attention = Some(AttentionVariant::Dot);
        assert!(c.validate().is_err());
        assert!(ModelConfig::new(ModelKind::Cida).validate().is_ok());
    }

    #[test]
    fn head_examples() {
        let head = PredictionHead::new(3);
        let mut p = ParamStore::<f64>::new();
        p.insert(HEAD, Tensor::zeros(&[4]));
        assert_eq!(head.predict(&p, &[1.0, -2.0, 0.3]).unwrap(), 0.5);
        p.insert(HEAD, Tensor::vector(vec![0.0, 0.0, 0.0, 0.7]));
        assert!((head.predict(&p, &[0.0; 3]).unwrap() - sigmoid(0.7)).abs() < 1e-15);
        p.insert(HEAD, Tensor::vector(vec![0.5, -1.0, 2.0, 0.1]));
        let z: f64 = 0.5 * 0.2 - 1.0 * 0.4 + 2.0 * -0.3 + 0.1;
        let expected = 1.0 / (1.0 + (-z).exp());
        assert!((head.predict(&p, &[0.2, 0.4, -0.3]).unwrap() - expected).abs() < 1e-15);
        assert!(head.predict(&p, &[0.2]).is_err());
    }

    #[test]
    fn head_alone_counts_hidden_plus_one() {
        assert_eq!(PredictionHead::new(80).width(), 81);
    }

    #[test]
    fn components_follow_kind() {
        let emb = table(10, 4, 1);
        for kind in ModelKind::ALL {
            let m = ModelBundle::<f64>::new(ModelConfig::tiny(kind, 4, 6), &emb, 0).unwrap();
            assert_eq!(m.user_cell().is_some(), kind.has_user_cell());
            assert_eq!(m.scorer().is_some(), kind.has_attention());
            assert_eq!(m.intra().is_some(), kind.has_intra());
            let pc = m.count_parameters();
            assert_eq!(pc.total, pc.components.iter().map(|c| c.1).sum::<usize>());
        }
    }

    #[test]
    fn single_writing_lida_is_its_final_state() {
        let emb = table(10, 4, 2);
        let m = ModelBundle::<f64>::new(ModelConfig::tiny(ModelKind::Lida, 4, 6), &emb, 3).unwrap();
        let w = vec![3u32, 5, 7];
        let inputs: Vec<Vec<f64>> = w.iter().map(|&i| emb.row(i).to_vec()).collect();
        let states =
            crate::mlstm::encode_sequence(m.post_cell(), m.params(), &inputs, None).unwrap();
        let a = m.encode_user(&user(vec![w])).unwrap();
        for (x, y) in a.iter().zip(&states.last().unwrap().hidden) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn empty_user_is_an_error() {
        let emb = table(10, 4, 2);
        let m = ModelBundle::<f64>::new(ModelConfig::tiny(ModelKind::Cida, 4, 6), &emb, 3).unwrap();
        assert!(m.forward(&user(vec![])).is_err());
    }

    #[test]
    fn bytes_round_trip() {
        let emb = table(10, 4, 2);
        for kind in ModelKind::ALL {
            let mut cfg = ModelConfig::tiny(kind, 4, 6);
            cfg.fine_tune_embeddings = kind == ModelKind::Cida;
            let m = ModelBundle::<f64>::new(cfg, &emb, 9).unwrap();
            let back = ModelBundle::<f64>::from_bytes(&m.to_bytes(), &emb).unwrap();
            assert_eq!(back, m);
        }
        let m = ModelBundle::<f64>::new(ModelConfig::tiny(ModelKind::Ida, 4, 6), &emb, 9).unwrap();
        let bytes = m.to_bytes();
        assert!(ModelBundle::<f64>::from_bytes(&bytes[..bytes.len() - 3], &emb).is_err());
        assert!(ModelBundle::<f64>::from_bytes(&bytes, &table(11, 4, 2)).is_err());
    }
}
