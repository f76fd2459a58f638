//! Central-difference gradient checking in double precision.

use serde::Serialize;

use rand::Rng;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::corpus::{Label, UserRecord};
use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::models::{ModelBundle, ModelConfig};
use crate::training::{class_weights, ClassWeights};

/// Step used for central differences.
pub const DEFAULT_EPS: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockReport {
    pub name: String,
    pub max_relative_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub blocks: Vec<BlockReport>,
    pub max_relative_error: f64,
    pub passed: bool,
}

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Numeric gradient of `loss` at `params`, one tensor per block, from the
/// five-point central stencil (error of order `eps⁴`). The loss is
/// evaluated twice at the unperturbed point first; differing results mean
/// the loss is not a function of the parameters alone.
pub fn finite_difference_gradient<F>(
    loss: F,
    params: &ParamStore<f64>,
    eps: f64,
) -> Result<Vec<Tensor<f64>>>
where
    F: Fn(&ParamStore<f64>) -> Result<f64>,
{
    if loss(params)?.to_bits() != loss(params)?.to_bits() {
        return Err(Error::NonDeterministic);
    }
    let mut work = params.clone();
    let mut out = Vec::with_capacity(params.len());
    for b in 0..params.len() {
        let mut grad = Tensor::zeros(params.value_at(b).shape());
        for k in 0..grad.len() {
            let orig = work.value_at(b).data()[k];
            let mut at = |x: f64| {
                work.value_at_mut(b).data_mut()[k] = x;
                loss(&work)
            };
            let (p2, p1) = (at(orig + 2.0 * eps)?, at(orig + eps)?);
            let (m1, m2) = (at(orig - eps)?, at(orig - 2.0 * eps)?);
            work.value_at_mut(b).data_mut()[k] = orig;
            grad.data_mut()[k] = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * eps);
        }
        out.push(grad);
    }
    Ok(out)
}

/// Compares two gradient sets block by block.
pub fn compare_gradients(
    names: &[String],
    analytic: &[Tensor<f64>],
    numeric: &[Tensor<f64>],
    tolerance: f64,
) -> Result<GradCheckReport> {
    if names.len() != analytic.len() || names.len() != numeric.len() {
        return Err(Error::shape(
            "compare_gradients",
            format!(
                "{} names, {} analytic, {} numeric",
                names.len(),
                analytic.len(),
                numeric.len()
            ),
        ));
    }
    let mut blocks = Vec::with_capacity(names.len());
    for ((name, a), n) in names.iter().zip(analytic).zip(numeric) {
        if a.shape() != n.shape() {
            return Err(Error::shape("compare_gradients", format!("block {name}")));
        }
        let err = a
            .data()
            .iter()
            .zip(n.data())
            .map(|(&x, &y)| relative_error(x, y))
            .fold(0.0, f64::max);
        blocks.push(BlockReport {
            name: name.clone(),
            max_relative_error: err,
            passed: err < tolerance,
        });
    }
    let max = blocks
        .iter()
        .map(|b| b.max_relative_error)
        .fold(0.0, f64::max);
    Ok(GradCheckReport {
        tolerance,
        passed: blocks.iter().all(|b| b.passed),
        max_relative_error: max,
        blocks,
    })
}

/// Checks the backward pass of `model` on the mean loss over `batch`.
pub fn gradient_check(
    model: &ModelBundle<f64>,
    batch: &[UserRecord],
    weights: &ClassWeights,
    eps: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    if batch.is_empty() {
        return Err(Error::Empty("gradient check batch"));
    }
    let n = batch.len() as f64;
    let loss = |p: &ParamStore<f64>| -> Result<f64> {
        let mut total = 0.0;
        for u in batch {
            total += model.loss_with(p, u, weights)?;
        }
        Ok(total / n)
    };
    let numeric = finite_difference_gradient(loss, model.params(), eps)?;
    let (_, grads) = crate::training::batch_loss_and_gradients(model, batch, weights)?;
    let params = model.params();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let analytic: Vec<Tensor<f64>> = (0..params.len())
        .map(|i| grads.dense(i, params.value_at(i).shape()))
        .collect();
    compare_gradients(&names, &analytic, &numeric, tolerance)
}

/// A small model with a random embedding table and two users (one per
/// class) of 2–3 writings of at most 5 tokens.
pub fn tiny_instance(
    config: ModelConfig,
    seed: u64,
) -> Result<(ModelBundle<f64>, Vec<UserRecord>)> {
    const ROWS: usize = 12;
    let mut rng = crate::rng(seed);
    let d = config.embed_dim;
    let table: Vec<f64> = (0..ROWS * d)
        .map(|i| {
            if i < d {
                0.0
            } else {
                rng.random_range(-1.0..1.0)
            }
        })
        .collect();
    let emb = EmbeddingMatrix::new(Tensor::matrix(ROWS, d, table)?)?;
    let users = [Label::Risk, Label::NoRisk]
        .into_iter()
        .enumerate()
        .map(|(i, label)| UserRecord {
            user_id: format!("u{i}"),
            label,
            writings: (0..rng.random_range(2..=3))
                .map(|_| {
                    (0..rng.random_range(1..=5))
                        .map(|_| rng.random_range(1..ROWS as u32))
                        .collect()
                })
                .collect(),
        })
        .collect();
    let model = ModelBundle::new(config, &emb, seed.wrapping_add(1))?;
    Ok((model, users))
}

/// Gradient check of `config` on [`tiny_instance`].
pub fn check_tiny_model(config: ModelConfig, seed: u64, tolerance: f64) -> Result<GradCheckReport> {
    let (model, users) = tiny_instance(config, seed)?;
    let weights = class_weights(users.iter().map(|u| u.is_positive()))?;
    gradient_check(&model, &users, &weights, DEFAULT_EPS, tolerance)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_difference_is_exact_enough() {
        let mut p = ParamStore::new();
        p.insert("x", Tensor::vector(vec![1.5, -2.0]));
        let fd = finite_difference_gradient(
            |p| {
                let d = p.require("x")?.data();
                Ok(d[0] * d[0] + 3.0 * d[1])
            },
            &p,
            1e-5,
        )
        .unwrap();
        assert!((fd[0].data()[0] - 3.0).abs() < 1e-8);
        assert!((fd[0].data()[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn nondeterministic_loss_is_refused() {
        let mut p = ParamStore::new();
        p.insert("x", Tensor::vector(vec![1.0]));
        let calls = std::cell::Cell::new(0.0);
        let r = finite_difference_gradient(
            |_| {
                calls.set(calls.get() + 1.0);
                Ok(calls.get())
            },
            &p,
            1e-5,
        );
        assert!(matches!(r, Err(Error::NonDeterministic)));
    }

    #[test]
    fn doubled_gradient_fails_comparison() {
        let names = vec!["w".to_string()];
        let good = vec![Tensor::vector(vec![0.5, -1.0])];
        let bad = vec![Tensor::vector(vec![1.0, -2.0])];
        assert!(
            compare_gradients(&names, &good, &good, 1e-4)
                .unwrap()
                .passed
        );
        let r = compare_gradients(&names, &bad, &good, 1e-4).unwrap();
        assert!(!r.passed);
        assert!((r.max_relative_error - 0.5).abs() < 1e-12);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-12, 0.0) - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn every_kind_passes_at_tiny_size() {
        use crate::models::ModelKind;
        for kind in ModelKind::ALL {
            for seed in 0..2 {
                let r = check_tiny_model(ModelConfig::tiny(kind, 4, 6), seed, 1e-4).unwrap();
                assert!(r.passed, "{kind} seed {seed}: {r:?}");
            }
        }
    }
}
