//! Loss, optimizer, training loop, metrics and transfer fine-tuning.

mod adam;
mod metrics;
mod split;
mod transfer;

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_update, AdamHyper, AdamState};
pub use metrics::{f_beta, Averages, ClassMetrics, MetricsReport};
pub use split::{stratified_split, Split};
pub use transfer::{cache_head_inputs, transfer_finetune, HeadLearner, Trainable, TransferOutcome};

use crate::featkit::TandemFeature;
use crate::layers::{Mode, ParamSet, Pass};
use crate::model::DeviceIdModel;
use crate::tensor::{Tape, Tensor, Var};
use crate::{Error, Real, Result};

/// Probability floor inside the logarithm of the cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

/// Max-shifted softmax of one logit vector.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let mut out = logits.to_vec();
    crate::tensor::softmax_in_place(&mut out);
    out
}

/// `-ln(max(probs[target], 1e-12))`.
pub fn cross_entropy<T: Real>(probs: &[T], target: usize) -> Result<T> {
    let p = *probs.get(target).ok_or(Error::InvalidTarget { target, classes: probs.len() })?;
    Ok(-p.max(T::of(PROB_FLOOR)).ln())
}

/// Index of the first maximum.
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Multiplier applied to the rate every `decay_period` epochs.
    pub decay_factor: f64,
    pub decay_period: usize,
    pub seed: u64,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 64,
            epochs: 100,
            decay_factor: 0.1,
            decay_period: 30,
            seed: 0,
            split: [0.64, 0.16, 0.20],
        }
    }
}

impl TrainConfig {
    /// Fine-tuning regime: rate 1e-5, batch 32, 300 epochs.
    pub fn transfer_preset() -> Self {
        TrainConfig { lr: 1e-5, batch_size: 32, epochs: 300, ..TrainConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.batch_size > 0
            && self.epochs > 0
            && self.decay_period > 0
            && self.decay_factor > 0.0
            && self.decay_factor <= 1.0;
        if !ok {
            return Err(Error::Config(alloc::format!("invalid training configuration {self:?}")));
        }
        stratified_split(&[], self.split, 0).map(|_| ())
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper { beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }
}

/// Step decay `lr * decay_factor^floor(epoch / decay_period)`.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr * num_traits::Float::powi(cfg.decay_factor, (epoch / cfg.decay_period) as i32)
}

/// Labeled fixed-shape samples stored as `f32`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Examples {
    pub sample_shape: Vec<usize>,
    pub data: Vec<f32>,
    pub labels: Vec<usize>,
}

impl Examples {
    pub fn new(sample_shape: Vec<usize>, data: Vec<f32>, labels: Vec<usize>) -> Result<Self> {
        let per: usize = sample_shape.iter().product();
        if per == 0 || data.len() != per * labels.len() {
            return Err(Error::shape("examples", alloc::format!("{} values for {} samples of {sample_shape:?}", data.len(), labels.len())));
        }
        Ok(Examples { sample_shape, data, labels })
    }

    /// Stacks labeled features; every feature must share one shape.
    pub fn from_features<'a>(features: impl IntoIterator<Item = &'a TandemFeature>) -> Result<Self> {
        let mut ex = Examples::default();
        for f in features {
            let label = f.label.ok_or_else(|| Error::Config("feature without label".into()))?;
            if ex.labels.is_empty() {
                ex.sample_shape = alloc::vec![f.frames, f.dims];
            } else if ex.sample_shape != [f.frames, f.dims] {
                return Err(Error::shapes("examples", &[f.frames, f.dims], &ex.sample_shape));
            }
            ex.data.extend_from_slice(&f.data);
            ex.labels.push(label as usize);
        }
        Ok(ex)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn n_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let n = self.sample_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn subset(&self, idx: &[usize]) -> Examples {
        Examples {
            sample_shape: self.sample_shape.clone(),
            data: idx.iter().flat_map(|&i| self.sample(i).iter().copied()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// `(idx.len(), sample_shape...)` input tensor.
    pub fn batch<T: Real>(&self, idx: &[usize]) -> Tensor<T> {
        let mut shape = alloc::vec![idx.len()];
        shape.extend_from_slice(&self.sample_shape);
        let data = idx.iter().flat_map(|&i| self.sample(i).iter().map(|&v| T::of(v as f64))).collect();
        Tensor::new(&shape, data).expect("batch length matches shape")
    }
}

/// Anything trainable by [`fit`]: a parameter set and a map from a batch
/// tensor to logits.
pub trait Learner<T: Real> {
    fn params(&self) -> &ParamSet<T>;
    fn params_mut(&mut self) -> &mut ParamSet<T>;
    fn logits(&self, pass: &Pass<'_, T>, x: Var) -> Result<Var>;
}

impl<T: Real> Learner<T> for DeviceIdModel<T> {
    fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn logits(&self, pass: &Pass<'_, T>, x: Var) -> Result<Var> {
        self.net.forward(pass, x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub steps: u64,
}

/// Loss and argmax predictions over a sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub loss: f64,
    pub predicted: Vec<usize>,
    pub accuracy: f64,
}

/// Inference-mode pass over `data` in chunks of `batch` samples.
pub fn predict<T: Real, L: Learner<T> + ?Sized>(learner: &L, data: &Examples, batch: usize) -> Result<Predictions> {
    let mut predicted = Vec::with_capacity(data.len());
    let mut loss = 0.0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let tape = Tape::new();
        let pass = Pass::new(&tape, learner.params(), Mode::Eval);
        let x = tape.constant(data.batch(chunk));
        let logits = learner.logits(&pass, x)?;
        let targets: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
        let l = tape.softmax_cross_entropy(logits, &targets)?;
        loss += tape.value(l).data()[0].as_f64() * chunk.len() as f64;
        let k = tape.shape(logits)[1];
        predicted.extend(tape.value(logits).data().chunks(k).map(argmax));
    }
    let n = data.len().max(1) as f64;
    let correct = predicted.iter().zip(&data.labels).filter(|(p, t)| p == t).count();
    Ok(Predictions { loss: loss / n, predicted, accuracy: correct as f64 / n })
}

/// Metrics of `learner` on `data` for `n_classes` classes.
pub fn evaluate<T: Real, L: Learner<T> + ?Sized>(learner: &L, data: &Examples, n_classes: usize, batch: usize) -> Result<MetricsReport> {
    let p = predict(learner, data, batch)?;
    MetricsReport::from_predictions(&data.labels, &p.predicted, n_classes)
}

fn better(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Minibatch Adam with step decay.
///
/// Batches are drawn from a per-run shuffle seeded by `cfg.seed`. After the
/// last epoch the parameters of the best epoch (validation accuracy, then
/// lower validation loss; training metrics when `val` is empty) are
/// restored. A non-finite loss or gradient restores the best parameters so
/// far and returns the error.
pub fn fit<T: Real, L: Learner<T> + ?Sized>(
    learner: &mut L,
    train: &Examples,
    val: &Examples,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("empty training split".into()));
    }
    let mut adam = AdamState::new(learner.params(), cfg.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<((f64, f64), usize, ParamSet<T>)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    let initial = learner.params().clone();
    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let result = train_step(learner, &mut adam, train, chunk, lr);
            let (loss, hits) = match result {
                Ok(v) => v,
                Err(e) => {
                    let restore = best.as_ref().map_or(&initial, |b| &b.2).clone();
                    *learner.params_mut() = restore;
                    return Err(match e {
                        Error::Domain { .. } => Error::Diverged { epoch, step, loss: f64::NAN },
                        other => other,
                    });
                }
            };
            loss_sum += loss * chunk.len() as f64;
            correct += hits;
        }
        let n = train.len() as f64;
        let (train_loss, train_acc) = (loss_sum / n, correct as f64 / n);
        let (val_loss, val_acc) = if val.is_empty() {
            (None, None)
        } else {
            let p = predict(&*learner, val, cfg.batch_size)?;
            (Some(p.loss), Some(p.accuracy))
        };
        let record = EpochRecord { epoch, lr, train_loss, train_acc, val_loss, val_acc };
        on_epoch(&record);
        history.push(record);
        let score = (val_acc.unwrap_or(train_acc), val_loss.unwrap_or(train_loss));
        if best.as_ref().map_or(true, |b| better(score, b.0)) {
            best = Some((score, epoch, learner.params().clone()));
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    *learner.params_mut() = params;
    Ok(TrainOutcome { history, best_epoch, steps: adam.t })
}

/// One forward/backward/update on the samples `idx`; returns the batch loss
/// and the number of correct training predictions.
fn train_step<T: Real, L: Learner<T> + ?Sized>(
    learner: &mut L,
    adam: &mut AdamState<T>,
    data: &Examples,
    idx: &[usize],
    lr: f64,
) -> Result<(f64, usize)> {
    let (grads, updates, loss, hits) = {
        let tape = Tape::new();
        let pass = Pass::new(&tape, learner.params(), Mode::Train);
        let x = tape.constant(data.batch(idx));
        let logits = learner.logits(&pass, x)?;
        let targets: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
        let loss = tape.softmax_cross_entropy(logits, &targets)?;
        let k = tape.shape(logits)[1];
        let hits = tape.value(logits).data().chunks(k).zip(&targets).filter(|(row, &t)| argmax(row) == t).count();
        let mut grads = tape.backward(loss)?;
        let loss_value = tape.value(loss).data()[0].as_f64();
        (pass.param_grads(&mut grads), pass.take_updates(), loss_value, hits)
    };
    adam.step(learner.params_mut(), &grads, lr)?;
    for (id, value) in updates {
        learner.params_mut().set(id, value)?;
    }
    Ok((loss, hits))
}

/// Split, train and test a model on labeled data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub split: Split,
    pub outcome: TrainOutcome,
    pub test: Option<MetricsReport>,
}

pub fn train<T: Real>(
    model: &mut DeviceIdModel<T>,
    data: &Examples,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainRun> {
    cfg.validate()?;
    if data.n_classes() > model.config.n_classes {
        return Err(Error::InvalidTarget { target: data.n_classes() - 1, classes: model.config.n_classes });
    }
    let split = stratified_split(&data.labels, cfg.split, cfg.seed)?;
    let (tr, va, te) = (data.subset(&split.train), data.subset(&split.val), data.subset(&split.test));
    let outcome = fit(model, &tr, &va, cfg, on_epoch)?;
    let test = if te.is_empty() { None } else { Some(evaluate(&*model, &te, model.config.n_classes, cfg.batch_size)?) };
    Ok(TrainRun { split, outcome, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        assert!(softmax(&[0.0f64; 3]).iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
        let p = softmax(&[1.0f64, 2.0, 3.0]);
        for (a, b) in p.iter().zip([0.0900, 0.2447, 0.6652]) {
            assert!((a - b).abs() < 1e-4);
        }
        let q = softmax(&[101.0f64, 102.0, 103.0]);
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[0.0f64, 1.0], 1).unwrap(), 0.0);
        let k = 7;
        let u = alloc::vec![1.0 / k as f64; k];
        assert!((cross_entropy(&u, 3).unwrap() - (k as f64).ln()).abs() < 1e-12);
        assert!((cross_entropy(&[1.0f64, 0.0], 1).unwrap() - 1e12f64.ln()).abs() < 1e-9);
        assert!(matches!(cross_entropy(&[1.0f64], 2), Err(Error::InvalidTarget { .. })));
    }

    #[test]
    fn step_decay() {
        let cfg = TrainConfig::default();
        let lr = |e| lr_schedule(e, &cfg);
        assert_eq!((lr(0), lr(29)), (1e-4, 1e-4));
        assert!((lr(30) - 1e-5).abs() < 1e-20);
        assert!((lr(60) - 1e-6).abs() < 1e-21);
    }

    #[test]
    fn presets() {
        let t = TrainConfig::transfer_preset();
        assert_eq!((t.lr, t.batch_size, t.epochs), (1e-5, 32, 300));
        let p = TrainConfig::default();
        assert_eq!((p.lr, p.batch_size, p.epochs), (1e-4, 64, 100));
    }
}
