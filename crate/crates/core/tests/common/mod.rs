//! Shared fixtures and a plain-loop reference implementation of the four
//! models. The reference walks every writing token by token with scalar
//! arithmetic and never touches the tape.

#![allow(dead_code)]

use docset::attention::{AttentionVariant, IntraQuery};
use docset::corpus::{Label, UserRecord};
use docset::embeddings::EmbeddingMatrix;
use docset::models::{ModelBundle, ModelConfig, ModelKind};
use docset::numcore::{ParamStore, Tensor};
use rand::Rng;

pub fn random_table(rows: usize, dim: usize, seed: u64) -> EmbeddingMatrix {
    let mut rng = docset::rng(seed);
    let data = (0..rows * dim)
        .map(|i| {
            if i < dim {
                0.0
            } else {
                rng.random_range(-1.0..1.0)
            }
        })
        .collect();
    EmbeddingMatrix::new(Tensor::matrix(rows, dim, data).unwrap()).unwrap()
}

/// Writings of random length over ids `1..rows`; `lens` bounds inclusive.
pub fn random_user<R: Rng>(
    rng: &mut R,
    rows: usize,
    writings: (usize, usize),
    lens: (usize, usize),
) -> UserRecord {
    let m = rng.random_range(writings.0..=writings.1);
    UserRecord {
        user_id: "u".into(),
        label: Label::from_positive(rng.random_bool(0.5)),
        writings: (0..m)
            .map(|_| {
                let n = rng.random_range(lens.0..=lens.1);
                (0..n).map(|_| rng.random_range(1..rows as u32)).collect()
            })
            .collect(),
    }
}

pub fn model(
    kind: ModelKind,
    embed: usize,
    hidden: usize,
    seed: u64,
) -> (ModelBundle<f64>, EmbeddingMatrix) {
    let emb = random_table(16, embed, seed ^ 0x5eed);
    let m = ModelBundle::new(ModelConfig::tiny(kind, embed, hidden), &emb, seed).unwrap();
    (m, emb)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub struct Reference<'a> {
    pub params: &'a ParamStore<f64>,
    pub table: &'a EmbeddingMatrix,
    pub config: &'a ModelConfig,
}

pub struct ReferenceOutput {
    pub probability: f64,
    pub aggregate: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn softmax(e: &[f64]) -> Vec<f64> {
    let mx = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = e.iter().map(|v| (v - mx).exp()).collect();
    let z: f64 = ex.iter().sum();
    ex.iter().map(|v| v / z).collect()
}

impl Reference<'_> {
    fn block(&self, name: &str) -> &[f64] {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("missing {name}"))
            .data()
    }

    /// Row-major `[rows, x.len()]` times `x`.
    fn mv(&self, name: &str, x: &[f64]) -> Vec<f64> {
        let w = self.block(name);
        let cols = x.len();
        let rows = w.len() / cols;
        (0..rows)
            .map(|r| dot(&w[r * cols..(r + 1) * cols], x))
            .collect()
    }

    fn cell(&self, prefix: &str, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let a = self.mv(&format!("{prefix}.w_mx"), x);
        let b = self.mv(&format!("{prefix}.w_mh"), h);
        let m: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p * q).collect();
        let pre = |g: &str| -> Vec<f64> {
            let u = self.mv(&format!("{prefix}.w_{g}x"), x);
            let v = self.mv(&format!("{prefix}.w_{g}m"), &m);
            let bias = self.block(&format!("{prefix}.b_{g}"));
            (0..h.len()).map(|k| u[k] + v[k] + bias[k]).collect()
        };
        let (pc, pi, pf, po) = (pre("c"), pre("i"), pre("f"), pre("o"));
        let mut h2 = vec![0.0; h.len()];
        let mut c2 = vec![0.0; h.len()];
        for k in 0..h.len() {
            c2[k] = sig(pf[k]) * c[k] + sig(pi[k]) * pc[k].tanh();
            h2[k] = sig(po[k]) * c2[k].tanh();
        }
        (h2, c2)
    }

    fn embed(&self, id: u32) -> Vec<f64> {
        let d = self.config.embed_dim;
        if id == 0 {
            return vec![0.0; d];
        }
        if self.config.fine_tune_embeddings {
            let t = self.block("embedding");
            t[id as usize * d..(id as usize + 1) * d].to_vec()
        } else {
            self.table.row(id).to_vec()
        }
    }

    fn score(&self, q: &[f64], k: &[f64]) -> f64 {
        match self.config.attention.unwrap() {
            AttentionVariant::General => dot(q, &self.mv("att.w", k)),
            AttentionVariant::Dot => dot(q, k),
            AttentionVariant::Location => dot(self.block("att.w_loc"), q),
            AttentionVariant::Additive => {
                let a = self.mv("att.w_q", q);
                let b = self.mv("att.w_k", k);
                let v = self.block("att.v");
                (0..v.len()).map(|i| v[i] * (a[i] + b[i]).tanh()).sum()
            }
            AttentionVariant::Cosine => {
                let (nq, nk) = (dot(q, q).sqrt(), dot(k, k).sqrt());
                if nq == 0.0 || nk == 0.0 {
                    0.0
                } else {
                    dot(q, k) / (nq * nk)
                }
            }
        }
    }

    /// Self-attention context over `past` inputs for hidden state `h`.
    fn intra_context(&self, h: &[f64], past: &[Vec<f64>]) -> Vec<f64> {
        let d = self.config.embed_dim;
        if past.is_empty() {
            return vec![0.0; d];
        }
        let e: Vec<f64> = past
            .iter()
            .map(|x| dot(h, &self.mv("intra.w", x)))
            .collect();
        let w = softmax(&e);
        let mut c = vec![0.0; d];
        for (x, a) in past.iter().zip(&w) {
            for k in 0..d {
                c[k] += a * x[k];
            }
        }
        c
    }

    pub fn run(&self, user: &UserRecord) -> ReferenceOutput {
        let hd = self.config.hidden_dim;
        let kind = self.config.kind;
        let m = user.writings.len();
        let steps = user.writings.iter().map(|w| w.len()).max().unwrap_or(0);
        let mut hs = vec![vec![0.0; hd]; m];
        let mut cs = vec![vec![0.0; hd]; m];
        let (mut g, mut s) = (vec![0.0; hd], vec![0.0; hd]);
        let mut weights = Vec::new();

        for t in 0..steps {
            for j in 0..m {
                let w = &user.writings[j];
                if t >= w.len() {
                    continue;
                }
                let x = self.embed(w[t]);
                let input = if kind == ModelKind::Iida {
                    let query = match self.config.intra_query {
                        IntraQuery::Previous => hs[j].clone(),
                        IntraQuery::Tentative => {
                            let mut bare = x.clone();
                            bare.extend(vec![0.0; x.len()]);
                            self.cell("post", &bare, &hs[j], &cs[j]).0
                        }
                    };
                    let past: Vec<Vec<f64>> = w[..t].iter().map(|&i| self.embed(i)).collect();
                    let mut v = x.clone();
                    v.extend(self.intra_context(&query, &past));
                    v
                } else {
                    x
                };
                let (h2, c2) = self.cell("post", &input, &hs[j], &cs[j]);
                hs[j] = h2;
                cs[j] = c2;
            }
            if kind != ModelKind::Lida {
                let a = if kind == ModelKind::Cida {
                    mean(&hs)
                } else {
                    let e: Vec<f64> = hs.iter().map(|h| self.score(&g, h)).collect();
                    let al = softmax(&e);
                    let mut a = vec![0.0; hd];
                    for (h, w) in hs.iter().zip(&al) {
                        for k in 0..hd {
                            a[k] += w * h[k];
                        }
                    }
                    weights.push(al);
                    a
                };
                let (g2, s2) = self.cell("user", &a, &g, &s);
                g = g2;
                s = s2;
            }
        }
        let aggregate = if kind == ModelKind::Lida {
            mean(&hs)
        } else {
            g
        };
        let head = self.block("head");
        let probability = sig(dot(&head[..hd], &aggregate) + head[hd]);
        ReferenceOutput {
            probability,
            aggregate,
            weights,
        }
    }
}

fn mean(vs: &[Vec<f64>]) -> Vec<f64> {
    let n = vs[0].len();
    (0..n)
        .map(|k| vs.iter().map(|v| v[k]).sum::<f64>() / vs.len() as f64)
        .collect()
}

/// `5HI + 5HH + 4H` for one mLSTM cell.
pub fn closed_form_cell(input: usize, hidden: usize) -> usize {
    5 * hidden * input + 5 * hidden * hidden + 4 * hidden
}

/// Independent tally of a configuration's trainable parameters.
pub fn closed_form_total(c: &ModelConfig, rows: usize) -> usize {
    let (i, h) = (c.embed_dim, c.hidden_dim);
    let post_in = if c.kind == ModelKind::Iida { 2 * i } else { i };
    let mut n = closed_form_cell(post_in, h) + h + 1;
    if c.kind != ModelKind::Lida {
        n += closed_form_cell(h, h);
    }
    n += match c.attention {
        Some(AttentionVariant::General) => h * h,
        Some(AttentionVariant::Location) => h,
        Some(AttentionVariant::Additive) => c.attention_dim * (2 * h + 1),
        _ => 0,
    };
    if c.kind == ModelKind::Iida {
        n += h * i;
    }
    if c.fine_tune_embeddings {
        n += rows * i;
    }
    n
}
