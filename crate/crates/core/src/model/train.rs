use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::augment::Augmentation;
use super::data::{LabeledWindow, WindowSet};
use super::gprformer::{Dropout, ModelParams, Normalization};
use super::params::Grads;
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::eval::{overlap_add, rmse_mm, WindowPrediction};
use crate::scalar::Scalar;

/// Samples per gradient work item. Fixed so the reduction order does not
/// depend on the thread count.
const CHUNK: usize = 32;
const SHUFFLE_STREAM: u64 = 1 << 40;
/// Seed offset separating augmentation draws from dropout masks.
const AUGMENT_SEED: u64 = 0x9E37_79B9_7F4A_7C15;

/// Optimizer and schedule settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Initial learning rate, decayed linearly to `final_learning_rate`.
    pub learning_rate: f64,
    pub final_learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    /// Keep the blend weight at its initial value.
    pub freeze_alpha: bool,
    /// Seeds shuffling, dropout and augmentation.
    pub seed: u64,
    pub augment: Augmentation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            epochs: 30,
            learning_rate: 1e-3,
            final_learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            grad_clip: 0.0,
            freeze_alpha: false,
            seed: 0,
            augment: Augmentation::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0) || !(self.final_learning_rate >= 0.0) {
            return Err(Error::config("learning rates must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::config("Adam betas must lie in [0, 1) and epsilon be positive"));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::config("grad_clip must be non-negative"));
        }
        self.augment.validate()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Format(format!("train config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("train config serializes")
    }

    fn lr_at(&self, step: usize, total: usize) -> f64 {
        let u = if total > 1 { step as f64 / (total - 1) as f64 } else { 0.0 };
        self.learning_rate + (self.final_learning_rate - self.learning_rate) * u
    }
}

/// One line of the loss history. Losses are in square metres.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_mse: f64,
    /// NaN when no validation data was given.
    pub val_mse: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T: Scalar> {
    /// Parameters of the epoch with the lowest validation loss (last epoch
    /// when there is no validation data).
    pub params: ModelParams<T>,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
}

fn fit_normalization(windows: &[LabeledWindow]) -> Normalization {
    let (mut s, mut s2, mut n) = (0.0, 0.0, 0usize);
    for w in windows {
        for v in &w.input {
            s += v;
            s2 += v * v;
        }
        n += w.input.len();
    }
    let input_mean = s / n.max(1) as f64;
    let input_std = (s2 / n.max(1) as f64 - input_mean * input_mean).max(0.0).sqrt();
    let labels: Vec<f64> = windows.iter().map(|w| w.label).collect();
    let target_mean = labels.iter().sum::<f64>() / labels.len().max(1) as f64;
    let target_std =
        (labels.iter().map(|l| (l - target_mean).powi(2)).sum::<f64>() / labels.len().max(1) as f64).sqrt();
    let guard = |v: f64, fallback: f64| if v > 1e-12 { v } else { fallback };
    // Constant labels: scale by their magnitude so the head starts near them.
    let target_std = guard(target_std, guard(0.1 * target_mean.abs(), 1.0));
    Normalization { input_mean, input_std: guard(input_std, 1.0), target_mean, target_std }
}

struct Adam<T> {
    m: Grads<T>,
    v: Grads<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    fn step(&mut self, params: &mut ModelParams<T>, grads: &Grads<T>, lr: f64, cfg: &TrainConfig, skip: Option<usize>) {
        self.t += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let (b1t, b2t, eps) = (T::lit(b1), T::lit(b2), T::lit(cfg.epsilon));
        let (c1t, c2t, lrt) = (T::lit(c1), T::lit(c2), T::lit(lr));
        for id in 0..grads.tensors.len() {
            if Some(id) == skip {
                continue;
            }
            let g = &grads.tensors[id].data;
            let m = &mut self.m.tensors[id].data;
            let v = &mut self.v.tensors[id].data;
            let p = &mut params.store.get_mut(id).data;
            for i in 0..g.len() {
                m[i] = b1t * m[i] + (T::one() - b1t) * g[i];
                v[i] = b2t * v[i] + (T::one() - b2t) * g[i] * g[i];
                let mh = m[i] / c1t;
                let vh = v[i] / c2t;
                p[i] -= lrt * mh / (vh.sqrt() + eps);
            }
        }
    }
}

fn dropout_stream(epoch: usize, position: usize) -> u64 {
    ((epoch as u64) << 32) | position as u64
}

/// Predictions (m) for each window, in order.
pub fn predict_windows<T: Scalar>(params: &ModelParams<T>, windows: &[LabeledWindow]) -> Result<Vec<f64>> {
    let parts: Vec<Result<Vec<f64>>> = windows
        .par_chunks(CHUNK)
        .map(|c| params.predict_batch(&c.iter().map(|w| w.input.as_slice()).collect::<Vec<_>>()))
        .collect();
    let mut out = Vec::with_capacity(windows.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Pools all sequences' overlap-added per-step predictions and returns the RMSE (mm).
pub fn evaluate_rmse_mm<T: Scalar>(params: &ModelParams<T>, sets: &[WindowSet]) -> Result<f64> {
    let mut truth = Vec::new();
    let mut est = Vec::new();
    for set in sets {
        let preds = predict_windows(params, &set.windows)?;
        let wp: Vec<WindowPrediction> = set
            .windows
            .iter()
            .zip(preds)
            .map(|(w, value)| WindowPrediction { start: w.start, span: w.span, value })
            .collect();
        est.extend(overlap_add(&wp, set.step_truth.len())?);
        truth.extend_from_slice(&set.step_truth);
    }
    rmse_mm(&truth, &est)
}

/// Adam with linear learning-rate decay, seeded shuffling and dropout.
pub fn train<T: Scalar>(
    train_set: &[LabeledWindow],
    val_set: &[LabeledWindow],
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::input("training set is empty"));
    }
    let mut params = ModelParams::<T>::init(model)?;
    params.normalization = fit_normalization(train_set);
    train_from(params, train_set, val_set, cfg)
}

/// Continues training from given parameters (normalization is kept).
pub fn train_from<T: Scalar>(
    mut params: ModelParams<T>,
    train_set: &[LabeledWindow],
    val_set: &[LabeledWindow],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let p = params.config.dropout_p;
    let (k, dim) = (params.config.window_k, params.config.input_dim);
    let var_scale = params.normalization.target_std.powi(2);
    let mut adam = Adam { m: params.store.zeros_like(), v: params.store.zeros_like(), t: 0 };
    let skip = cfg.freeze_alpha.then(|| params.alpha_id());
    let batches_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let total_steps = batches_per_epoch * cfg.epochs;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, ModelParams<T>, usize)> = None;
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(SHUFFLE_STREAM + epoch as u64);
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let weight = T::lit(1.0 / batch.len() as f64);
            let base = b * cfg.batch_size;
            let partial: Vec<Result<(T, Grads<T>)>> = batch
                .par_chunks(CHUNK)
                .enumerate()
                .map(|(c, chunk)| {
                    let mut grads = params.store.zeros_like();
                    let mut drops = Vec::with_capacity(chunk.len());
                    let mut inputs = Vec::with_capacity(chunk.len());
                    for (i, &idx) in chunk.iter().enumerate() {
                        let w = &train_set[idx];
                        let stream = dropout_stream(epoch, base + c * CHUNK + i);
                        drops.push(Dropout::new(p, cfg.seed, stream));
                        inputs.push(if cfg.augment.is_identity() {
                            std::borrow::Cow::Borrowed(w.input.as_slice())
                        } else {
                            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ AUGMENT_SEED);
                            rng.set_stream(stream);
                            std::borrow::Cow::Owned(cfg.augment.apply(&w.input, k, dim, &mut rng))
                        });
                    }
                    let batch: Vec<(&[f64], f64)> =
                        inputs.iter().zip(chunk).map(|(x, &idx)| (x.as_ref(), train_set[idx].label)).collect();
                    let loss = params.accumulate_gradient(&batch, &mut drops, weight, &mut grads)?;
                    Ok((loss, grads))
                })
                .collect();
            let mut grads = params.store.zeros_like();
            let mut batch_loss = 0.0;
            for r in partial {
                let (l, g) = r?;
                batch_loss += l.as_f64();
                grads.add_assign(&g);
            }
            batch_loss /= batch.len() as f64;
            if !batch_loss.is_finite() {
                return Err(Error::numerical(format!(
                    "training diverged at epoch {epoch} batch {b}: loss {batch_loss}, alpha {}",
                    params.alpha()
                )));
            }
            grads.check_finite(&params.store).map_err(|e| Error::numerical(format!("epoch {epoch} batch {b}: {e}")))?;
            if cfg.grad_clip > 0.0 {
                let norm = grads.norm().as_f64();
                if norm > cfg.grad_clip {
                    grads.scale(T::lit(cfg.grad_clip / norm));
                }
            }
            adam.step(&mut params, &grads, cfg.lr_at(step, total_steps), cfg, skip);
            step += 1;
            loss_sum += batch_loss * batch.len() as f64;
        }
        let train_mse = loss_sum / train_set.len() as f64 * var_scale;
        let val_mse = if val_set.is_empty() {
            f64::NAN
        } else {
            let preds = predict_windows(&params, val_set)?;
            preds.iter().zip(val_set).map(|(p, w)| (p - w.label).powi(2)).sum::<f64>() / val_set.len() as f64
        };
        let log = EpochLog { epoch, train_mse, val_mse, alpha: params.alpha() };
        log::info!("epoch {epoch}: train_mse {train_mse:.6e} val_mse {val_mse:.6e} alpha {:.5}", log.alpha);
        history.push(log);
        let score = if val_set.is_empty() { f64::NEG_INFINITY } else { val_mse };
        if best.as_ref().is_none_or(|(s, _, _)| score <= *s) {
            best = Some((score, params.clone(), epoch));
        }
    }
    let (params, best_epoch) = match best {
        Some((_, p, e)) => (p, e),
        None => (params, 0),
    };
    Ok(TrainOutcome { params, history, best_epoch })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Windows whose label is linear in a feature that is easy to read off.
    fn toy_set(n: usize, cfg: &ModelConfig, seed: u64) -> Vec<LabeledWindow> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let a: f64 = rng.random_range(0.5..2.0);
                let input = (0..cfg.window_k * cfg.input_dim)
                    .map(|j| a * ((j % cfg.input_dim) as f64 * 0.3).sin() + rng.random_range(-0.05..0.05))
                    .collect();
                LabeledWindow { start: i, span: cfg.window_k - 1, input, label: 0.05 * a }
            })
            .collect()
    }

    fn small_train() -> TrainConfig {
        TrainConfig { batch_size: 16, epochs: 30, learning_rate: 3e-3, ..TrainConfig::default() }
    }

    #[test]
    fn learns_a_simple_mapping() {
        let cfg = ModelConfig { dropout_p: 0.0, ..ModelConfig::reduced() };
        let data = toy_set(200, &cfg, 1);
        let out = train::<f64>(&data, &[], &cfg, &small_train()).unwrap();
        let first = out.history[0].train_mse;
        let last = out.history.last().unwrap().train_mse;
        assert!(last < 0.5 * first, "{first} -> {last}");
    }

    #[test]
    fn constant_labels_give_constant_predictor() {
        let cfg = ModelConfig::reduced();
        let mut data = toy_set(64, &cfg, 2);
        for w in &mut data {
            w.label = 0.07;
        }
        let out = train::<f64>(&data, &data, &cfg, &TrainConfig { epochs: 3, ..small_train() }).unwrap();
        let last = out.history.last().unwrap().val_mse;
        assert!(last < 1e-6, "val mse {last}");
    }

    #[test]
    fn identical_seeds_give_identical_histories() {
        let cfg = ModelConfig::reduced();
        let data = toy_set(48, &cfg, 3);
        let tc = TrainConfig { epochs: 3, ..small_train() };
        let a = train::<f64>(&data, &data[..8], &cfg, &tc).unwrap();
        let b = train::<f64>(&data, &data[..8], &cfg, &tc).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.params, b.params);
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = single.install(|| train::<f64>(&data, &data[..8], &cfg, &tc).unwrap());
        assert_eq!(a.history, c.history);
    }

    #[test]
    fn frozen_alpha_stays_put() {
        let cfg = ModelConfig { alpha_init: 0.3, ..ModelConfig::reduced() };
        let data = toy_set(32, &cfg, 4);
        let tc = TrainConfig { epochs: 2, freeze_alpha: true, ..small_train() };
        let out = train::<f64>(&data, &[], &cfg, &tc).unwrap();
        assert!(out.history.iter().all(|h| h.alpha == 0.3));
        let free = train::<f64>(&data, &[], &cfg, &TrainConfig { freeze_alpha: false, ..tc }).unwrap();
        assert_ne!(free.params.alpha(), 0.3);
    }

    #[test]
    fn validation_loss_is_dropout_free() {
        let cfg = ModelConfig::reduced();
        let data = toy_set(16, &cfg, 5);
        let out = train::<f64>(&data, &data, &cfg, &TrainConfig { epochs: 1, ..small_train() }).unwrap();
        let a = predict_windows(&out.params, &data).unwrap();
        let b = predict_windows(&out.params, &data).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_training_set_is_rejected() {
        assert!(matches!(
            train::<f64>(&[], &[], &ModelConfig::reduced(), &TrainConfig::default()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn linear_schedule_endpoints() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(0, 11), 1e-3);
        assert!((c.lr_at(10, 11) - 1e-5).abs() < 1e-18);
        assert!((c.lr_at(5, 11) - 0.5 * (1e-3 + 1e-5)).abs() < 1e-15);
    }
}
