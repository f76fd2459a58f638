//! Multiplicative LSTM.
//!
//! One step, with `x` the input and `(h, c)` the incoming state:
//!
//! ```text
//! m  = (W_mx x) ⊙ (W_mh h)
//! ĉ  = tanh(W_cx x + W_cm m + b_c)
//! i  = σ(W_ix x + W_im m + b_i)
//! f  = σ(W_fx x + W_fm m + b_f)
//! o  = σ(W_ox x + W_om m + b_o)
//! c' = f ⊙ c + i ⊙ ĉ
//! h' = o ⊙ tanh(c')
//! ```
//!
//! The intermediate `m` has the hidden width, so a cell holds
//! `5·H·I + 5·H·H + 4·H` scalars.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::{Graph, NodeId, ParamStore, Real, Tensor};

/// Gate suffixes in the order candidate, input, forget, output.
pub const GATES: [&str; 4] = ["c", "i", "f", "o"];

/// Parameter layout of one mLSTM cell inside a `ParamStore`. Blocks are
/// named `{prefix}.w_mx`, `{prefix}.w_mh`, and for each gate `g`
/// `{prefix}.w_{g}x`, `{prefix}.w_{g}m`, `{prefix}.b_{g}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlstmCell {
    prefix: String,
    input_dim: usize,
    hidden_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RnnState<T = f64> {
    pub hidden: Vec<T>,
    pub memory: Vec<T>,
}

impl<T: Real> RnnState<T> {
    pub fn zeros(hidden_dim: usize) -> Self {
        RnnState {
            hidden: vec![T::zero(); hidden_dim],
            memory: vec![T::zero(); hidden_dim],
        }
    }
}

/// Hidden and memory matrices (`[H, m]`) for `m` sequences advanced together.
#[derive(Clone, Copy, Debug)]
pub struct GraphState {
    pub hidden: NodeId,
    pub memory: NodeId,
}

impl MlstmCell {
    pub fn new(prefix: impl Into<String>, input_dim: usize, hidden_dim: usize) -> Self {
        MlstmCell {
            prefix: prefix.into(),
            input_dim,
            hidden_dim,
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn block_name(&self, local: &str) -> String {
        format!("{}.{}", self.prefix, local)
    }

    /// `(name, shape)` of every block, in registration order.
    pub fn blocks(&self) -> Vec<(String, Vec<usize>)> {
        let (i, h) = (self.input_dim, self.hidden_dim);
        let mut out = vec![
            (self.block_name("w_mx"), vec![h, i]),
            (self.block_name("w_mh"), vec![h, h]),
        ];
        for g in GATES {
            out.push((self.block_name(&format!("w_{g}x")), vec![h, i]));
            out.push((self.block_name(&format!("w_{g}m")), vec![h, h]));
            out.push((self.block_name(&format!("b_{g}")), vec![h]));
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.blocks()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    /// Registers freshly initialised blocks: uniform in ±1/√H, forget bias 1.
    pub fn init<T: Real, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        let bound = 1.0 / (self.hidden_dim as f64).sqrt();
        for (name, shape) in self.blocks() {
            let n: usize = shape.iter().product();
            let data = if name.ends_with(".b_f") {
                vec![T::one(); n]
            } else {
                (0..n)
                    .map(|_| T::lit(rng.random_range(-bound..=bound)))
                    .collect()
            };
            store.insert(name, Tensor::new(shape, data).expect("block shape"));
        }
    }

    /// One step for a batch of columns. `input` is `[I, m]`.
    pub fn step<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        input: NodeId,
        state: GraphState,
    ) -> Result<GraphState> {
        let x = input;
        let w_mx = g.param(&self.block_name("w_mx"))?;
        let w_mh = g.param(&self.block_name("w_mh"))?;
        let xm = g.matmul(w_mx, x)?;
        let hm = g.matmul(w_mh, state.hidden)?;
        let m = g.mul(xm, hm)?;

        let gate = |g: &mut Graph<'_, T>, name: &str| -> Result<NodeId> {
            let wx = g.param(&self.block_name(&format!("w_{name}x")))?;
            let wm = g.param(&self.block_name(&format!("w_{name}m")))?;
            let b = g.param(&self.block_name(&format!("b_{name}")))?;
            let a = g.matmul(wx, x)?;
            let bm = g.matmul(wm, m)?;
            let s = g.add(a, bm)?;
            g.add_col(s, b)
        };
        let cand = gate(g, "c")?;
        let cand = g.tanh(cand)?;
        let i = gate(g, "i")?;
        let i = g.sigmoid(i)?;
        let f = gate(g, "f")?;
        let f = g.sigmoid(f)?;
        let o = gate(g, "o")?;
        let o = g.sigmoid(o)?;

        let keep = g.mul(f, state.memory)?;
        let write = g.mul(i, cand)?;
        let memory = g.add(keep, write)?;
        let squashed = g.tanh(memory)?;
        let hidden = g.mul(o, squashed)?;
        Ok(GraphState { hidden, memory })
    }

    pub fn zero_state<T: Real>(&self, g: &mut Graph<'_, T>, columns: usize) -> Result<GraphState> {
        Ok(GraphState {
            hidden: g.zeros(self.hidden_dim, columns)?,
            memory: g.zeros(self.hidden_dim, columns)?,
        })
    }

    fn check_width(&self, got: usize, expected: usize) -> Result<()> {
        if got != expected {
            return Err(Error::shape(
                "mlstm_step",
                format!("input width {got}, cell expects {expected}"),
            ));
        }
        Ok(())
    }
}

fn state_constants<T: Real>(g: &mut Graph<'_, T>, s: &RnnState<T>) -> Result<GraphState> {
    Ok(GraphState {
        hidden: g.constant(Tensor::vector(s.hidden.clone()))?,
        memory: g.constant(Tensor::vector(s.memory.clone()))?,
    })
}

fn read_state<T: Real>(g: &Graph<'_, T>, s: GraphState) -> RnnState<T> {
    RnnState {
        hidden: g.value(s.hidden).data().to_vec(),
        memory: g.value(s.memory).data().to_vec(),
    }
}

/// Advances `state` by one input vector.
pub fn mlstm_step<T: Real>(
    cell: &MlstmCell,
    params: &ParamStore<T>,
    input: &[T],
    state: &RnnState<T>,
) -> Result<RnnState<T>> {
    cell.check_width(input.len(), cell.input_dim)?;
    if state.hidden.len() != cell.hidden_dim || state.memory.len() != cell.hidden_dim {
        return Err(Error::shape(
            "mlstm_step",
            "state width differs from hidden_dim",
        ));
    }
    let mut g = Graph::new(params);
    let x = g.constant(Tensor::vector(input.to_vec()))?;
    let s = state_constants(&mut g, state)?;
    let next = cell.step(&mut g, x, s)?;
    Ok(read_state(&g, next))
}

/// Supplies a per-step context vector to be concatenated to the token input.
pub trait ContextSource<T: Real> {
    /// `past` holds the inputs at positions strictly before `t`; `state` is
    /// the state entering step `t`.
    fn context(&mut self, t: usize, state: &RnnState<T>, past: &[Vec<T>]) -> Result<Vec<T>>;
}

/// Runs the cell over `inputs` from the zero state and returns every state
/// `h_1 … h_τ`. With a context source, the cell consumes `[x_t ∥ c_t]`.
pub fn encode_sequence<T: Real>(
    cell: &MlstmCell,
    params: &ParamStore<T>,
    inputs: &[Vec<T>],
    mut context: Option<&mut dyn ContextSource<T>>,
) -> Result<Vec<RnnState<T>>> {
    if let Some(first) = inputs.first() {
        if inputs.iter().any(|x| x.len() != first.len()) {
            return Err(Error::shape("encode_sequence", "ragged input widths"));
        }
    }
    let mut state = RnnState::zeros(cell.hidden_dim);
    let mut out = Vec::with_capacity(inputs.len());
    for (t, x) in inputs.iter().enumerate() {
        let input = match context.as_deref_mut() {
            Some(src) => {
                let c = src.context(t, &state, &inputs[..t])?;
                let mut v = x.clone();
                v.extend(c);
                v
            }
            None => x.clone(),
        };
        state = mlstm_step(cell, params, &input, &state)?;
        out.push(state.clone());
    }
    Ok(out)
}
