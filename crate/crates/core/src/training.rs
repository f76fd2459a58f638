//! Loss, optimizer and the training loop.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{preprocess_user, select_first_k, UserRecord};
use crate::error::{Error, Result};
use crate::metrics::{round4, Metrics};
use crate::models::ModelBundle;
use crate::numcore::{Gradients, ParamStore, Real, Tensor, PROB_CLAMP};

/// Loss weight per class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub positive: f64,
    pub negative: f64,
}

impl ClassWeights {
    pub const UNIFORM: ClassWeights = ClassWeights {
        positive: 1.0,
        negative: 1.0,
    };

    pub fn for_label(&self, positive: bool) -> f64 {
        if positive {
            self.positive
        } else {
            self.negative
        }
    }
}

/// `w_c = N / (2 n_c)`. Fails when either class is absent.
pub fn class_weights(labels: impl IntoIterator<Item = bool>) -> Result<ClassWeights> {
    let (mut pos, mut neg) = (0usize, 0usize);
    for l in labels {
        if l {
            pos += 1;
        } else {
            neg += 1;
        }
    }
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let n = (pos + neg) as f64;
    Ok(ClassWeights {
        positive: n / (2.0 * pos as f64),
        negative: n / (2.0 * neg as f64),
    })
}

fn clamp_bounds<T: Real>() -> (T, T) {
    (T::lit(PROB_CLAMP), T::one() - T::lit(PROB_CLAMP))
}

/// `-w (y ln p + (1-y) ln(1-p))` with `p` clamped to `[1e-7, 1-1e-7]`.
pub fn weighted_bce<T: Real>(p: T, label: bool, weight: T) -> T {
    let (lo, hi) = clamp_bounds::<T>();
    let p = p.max(lo).min(hi);
    let ll = if label { p.ln() } else { (T::one() - p).ln() };
    -weight * ll
}

/// Derivative of [`weighted_bce`] with respect to `p`; zero where the clamp
/// is active.
pub fn weighted_bce_derivative<T: Real>(p: T, label: bool, weight: T) -> T {
    let (lo, hi) = clamp_bounds::<T>();
    if p < lo || p > hi {
        return T::zero();
    }
    if label {
        -weight / p
    } else {
        weight / (T::one() - p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates, one per parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f64> {
    pub step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros: Vec<Tensor<T>> = params
            .iter()
            .map(|(_, v)| Tensor::zeros(v.shape()))
            .collect();
        AdamState {
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }
}

/// One Adam update from the gradients accumulated in `params`. Nothing is
/// changed if any gradient entry is non-finite.
pub fn adam_step<T: Real>(
    params: &mut ParamStore<T>,
    state: &mut AdamState<T>,
    config: &AdamConfig,
) -> Result<()> {
    for i in 0..params.len() {
        if !params.grad_at(i).is_finite() {
            return Err(Error::NonFiniteGradient(params.name_at(i).to_string()));
        }
    }
    if state.first.len() != params.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "state has {} blocks, store has {}",
                state.first.len(),
                params.len()
            ),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::lit(config.beta1);
    let b2 = T::lit(config.beta2);
    let lr = T::lit(config.learning_rate);
    let eps = T::lit(config.epsilon);
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    for (i, (_, value, grad)) in params.values_and_grads_mut().enumerate() {
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (k, (x, &g)) in value.data_mut().iter_mut().zip(grad.data()).enumerate() {
            m[k] = b1 * m[k] + (T::one() - b1) * g;
            v[k] = b2 * v[k] + (T::one() - b2) * g * g;
            let mh = m[k] / c1;
            let vh = v[k] / c2;
            *x = *x - lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales the accumulated gradients so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_gradients<T: Real>(params: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let norm = (0..params.len())
        .map(|i| params.grad_at(i).sum_squares().to_f64().unwrap_or(f64::NAN))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = T::lit(max_norm / norm);
        for (_, g) in params.grads_mut() {
            g.scale_assign(s);
        }
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassWeighting {
    Inverse,
    Uniform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub class_weighting: ClassWeighting,
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            seed: 0,
            adam: AdamConfig::default(),
            class_weighting: ClassWeighting::Inverse,
            clip_norm: Some(5.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_precision: f64,
    pub val_recall: f64,
    pub val_f1: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_time_s: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (1-based).
    pub best_epoch: Option<usize>,
}

impl TrainingLog {
    /// One JSON object per epoch. Wall time is dropped unless asked for, so
    /// logs from identical runs compare equal byte for byte.
    pub fn to_jsonl(&self, with_wall_time: bool) -> String {
        let mut out = String::new();
        for r in &self.epochs {
            let mut r = r.clone();
            if !with_wall_time {
                r.wall_time_s = None;
            }
            out.push_str(&serde_json::to_string(&r).expect("plain record"));
            out.push('\n');
        }
        out
    }

    pub fn best_f1(&self) -> Option<f64> {
        let best = self.best_epoch?;
        self.epochs
            .iter()
            .find(|r| r.epoch == best)
            .map(|r| r.val_f1)
    }
}

pub struct FitOutcome<T: Real> {
    pub model: ModelBundle<T>,
    pub log: TrainingLog,
}

/// Mean loss of `users` and the mean of their gradients.
pub fn batch_loss_and_gradients<T: Real>(
    model: &ModelBundle<T>,
    users: &[UserRecord],
    weights: &ClassWeights,
) -> Result<(f64, Gradients<T>)> {
    let parts = users
        .par_iter()
        .map(|u| model.loss_and_gradients(u, weights))
        .collect::<Result<Vec<_>>>()?;
    let mut total = Gradients::empty(model.params().len());
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l.to_f64().unwrap_or(f64::NAN);
        total.merge(g);
    }
    let n = users.len().max(1) as f64;
    total.scale(T::lit(1.0 / n));
    Ok((loss / n, total))
}

/// Trains from `initial` and returns the parameters of the epoch with the
/// best validation f1 (earliest on ties). Each epoch reshuffles the training
/// users and redraws their writing samples from one seeded generator.
pub fn fit<T: Real>(
    config: &TrainConfig,
    initial: ModelBundle<T>,
    train: &[UserRecord],
    validation: &[UserRecord],
) -> Result<FitOutcome<T>> {
    if config.batch_size == 0 {
        return Err(Error::invalid("batch_size", "must be at least 1"));
    }
    let train: Vec<&UserRecord> = train.iter().filter(|u| !u.is_degenerate()).collect();
    if config.epochs == 0 {
        return Ok(FitOutcome {
            model: initial,
            log: TrainingLog::default(),
        });
    }
    if train.is_empty() {
        return Err(Error::Empty("training users"));
    }
    let weights = match config.class_weighting {
        ClassWeighting::Inverse => class_weights(train.iter().map(|u| u.is_positive()))?,
        ClassWeighting::Uniform => ClassWeights::UNIFORM,
    };
    let (max_len, sample_k) = (initial.config().max_len, initial.config().sample_k);
    let mut rng = crate::rng(config.seed);
    let mut model = initial;
    let mut adam = AdamState::new(model.params());
    let mut log = TrainingLog::default();
    let mut best: Option<(f64, ModelBundle<T>)> = None;

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let samples: Vec<UserRecord> = order
            .iter()
            .map(|&i| preprocess_user(train[i], max_len, sample_k, &mut rng))
            .collect();
        let mut loss_sum = 0.0;
        for batch in samples.chunks(config.batch_size) {
            let step =
                batch_loss_and_gradients(&model, batch, &weights).and_then(|(loss, grads)| {
                    if !loss.is_finite() {
                        return Err(Error::NonFinite("loss".into()));
                    }
                    let params = model.params_mut();
                    params.zero_grad();
                    params.accumulate(&grads, T::one());
                    if let Some(c) = config.clip_norm {
                        clip_gradients(params, c);
                    }
                    adam_step(params, &mut adam, &config.adam)?;
                    Ok(loss)
                });
            match step {
                Ok(loss) => loss_sum += loss * batch.len() as f64,
                Err(Error::NonFinite(_)) | Err(Error::NonFiniteGradient(_)) => {
                    return Err(Error::Diverged {
                        epoch,
                        log: Box::new(log),
                    })
                }
                Err(e) => return Err(e),
            }
        }
        let metrics = evaluate(&model, validation)?.rounded();
        log.epochs.push(EpochRecord {
            epoch,
            mean_loss: round4(loss_sum / samples.len() as f64),
            val_precision: metrics.precision,
            val_recall: metrics.recall,
            val_f1: metrics.f1,
            wall_time_s: Some(start.elapsed().as_secs_f64()),
        });
        if best.as_ref().is_none_or(|(f, _)| metrics.f1 > *f) {
            best = Some((metrics.f1, model.clone()));
            log.best_epoch = Some(epoch);
        }
    }
    let (_, model) = best.expect("at least one epoch ran");
    Ok(FitOutcome { model, log })
}

/// Probability per user on its first `sample_k` writings; `None` for users
/// with no writing.
pub fn predict_users<T: Real>(
    model: &ModelBundle<T>,
    users: &[UserRecord],
) -> Result<Vec<Option<T>>> {
    let (max_len, k) = (model.config().max_len, model.config().sample_k);
    users
        .par_iter()
        .map(|u| {
            if u.is_degenerate() {
                Ok(None)
            } else {
                model.predict_user(&select_first_k(u, max_len, k)).map(Some)
            }
        })
        .collect()
}

/// Metrics with RISK predicted at `p >= 0.5`; users with no writing count as
/// NO_RISK.
pub fn evaluate<T: Real>(model: &ModelBundle<T>, users: &[UserRecord]) -> Result<Metrics> {
    let probs = predict_users(model, users)?;
    let half = T::lit(0.5);
    let predicted: Vec<bool> = probs.iter().map(|p| p.is_some_and(|p| p >= half)).collect();
    let actual: Vec<bool> = users.iter().map(|u| u.is_positive()).collect();
    Metrics::from_predictions(&predicted, &actual)
}
