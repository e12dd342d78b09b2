//! Minibatch training with AdamW and a decaying learning rate.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SstafModel;
use crate::stft::FeatureSet;
use crate::tensor::{ParamStore, Precision, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Schedule {
    /// Half-cosine from `lr_start` at the first epoch to `lr_end` at the last.
    Cosine,
    Linear,
    /// Geometric drops every `every` epochs, reaching `lr_end` by the last.
    Step {
        every: usize,
    },
    /// Constant `lr_start`.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub schedule: Schedule,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 20,
            lr_start: 1e-3,
            lr_end: 1e-4,
            schedule: Schedule::Cosine,
            weight_decay: 0.01,
            betas: (0.9, 0.999),
            adam_eps: 1e-8,
            seed: 42,
            precision: Precision::F64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be at least 1".into()));
        }
        if !(self.lr_start > 0.0 && self.lr_end > 0.0 && self.lr_end <= self.lr_start) {
            return Err(Error::Config(format!(
                "learning rates must satisfy 0 < lr_end ({}) <= lr_start ({})",
                self.lr_end, self.lr_start
            )));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) || self.adam_eps <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Config(
                "betas must lie in [0, 1), eps > 0, weight decay >= 0".into(),
            ));
        }
        if let Schedule::Step { every: 0 } = self.schedule {
            return Err(Error::Config("step schedule needs every >= 1".into()));
        }
        Ok(())
    }
}

/// Learning rate for training epoch `epoch` (0-based).
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    let (a, b) = (cfg.lr_start, cfg.lr_end);
    if cfg.epochs <= 1 {
        return a;
    }
    let last = (cfg.epochs - 1) as f64;
    let frac = (epoch.min(cfg.epochs - 1)) as f64 / last;
    match cfg.schedule {
        Schedule::Cosine => b + (a - b) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()),
        Schedule::Linear => a + (b - a) * frac,
        Schedule::Step { every } => {
            let drops = (cfg.epochs - 1) / every;
            if drops == 0 {
                return a;
            }
            let gamma = (b / a).powf(1.0 / drops as f64);
            a * gamma.powi((epoch.min(cfg.epochs - 1) / every) as i32)
        }
        Schedule::Fixed => a,
    }
}

/// Mean cross entropy of `[b, K]` logits, in log-sum-exp form.
pub fn cross_entropy<'t>(logits: Var<'t>, targets: &[usize]) -> Result<Var<'t>> {
    logits.cross_entropy(targets)
}

/// AdamW moments per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        OptimizerState {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// One decoupled-weight-decay Adam update using the gradients stored in
/// `store`.
pub fn adamw_step(store: &mut ParamStore, state: &mut OptimizerState, lr: f64, cfg: &TrainConfig) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::Dimension(format!(
            "optimizer tracks {} parameters, store has {}",
            state.m.len(),
            store.len()
        )));
    }
    if let Some(p) = store.iter().find(|p| !p.has_grad) {
        return Err(Error::Autodiff(format!("parameter `{}` has no gradient", p.name)));
    }
    state.step += 1;
    let (b1, b2) = cfg.betas;
    let t = state.step as i32;
    let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
    let ids: Vec<_> = store.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let p = store.get_mut(id);
        let (m, v) = (state.m[k].data_mut(), state.v[k].data_mut());
        for (((theta, &g), m), v) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(m).zip(v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let (mh, vh) = (*m / c1, *v / c2);
            *theta -= lr * (mh / (vh.sqrt() + cfg.adam_eps) + cfg.weight_decay * *theta);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

/// Stacks the listed items into a `(b, C, f, t)` tensor.
pub fn batch_tensor(set: &FeatureSet, items: &[usize]) -> Result<Tensor> {
    let n = set.item_len();
    let mut data = Vec::with_capacity(items.len() * n);
    for &i in items {
        data.extend(set.item(i).iter().map(|&v| v as f64));
    }
    let [c, f, t] = set.shape;
    Tensor::new(&[items.len(), c, f, t], data)
}

/// Evaluation-mode class probabilities `(n, K)`, row-major.
pub fn predict_scores(model: &SstafModel, set: &FeatureSet, batch: usize, precision: Precision) -> Result<Vec<f64>> {
    let k = model.config().n_classes;
    let mut out = Vec::with_capacity(set.len() * k);
    let all: Vec<usize> = (0..set.len()).collect();
    for chunk in all.chunks(batch.max(1)) {
        let logits = model.predict(batch_tensor(set, chunk)?, precision)?;
        for row in logits.data().chunks(k) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|z| (z - max).exp()).sum();
            out.extend(row.iter().map(|z| (z - max).exp() / total));
        }
    }
    Ok(out)
}

pub fn argmax_rows(scores: &[f64], k: usize) -> Vec<usize> {
    scores
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |best, (i, &v)| if v > best.1 { (i, v) } else { best },
                )
                .0
        })
        .collect()
}

fn evaluate(model: &SstafModel, set: &FeatureSet, cfg: &TrainConfig) -> Result<(f64, f64)> {
    let k = model.config().n_classes;
    let scores = predict_scores(model, set, cfg.batch_size, cfg.precision)?;
    let loss = scores
        .chunks(k)
        .zip(&set.labels)
        .map(|(row, &y)| -row[y].max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        / set.len() as f64;
    let correct = argmax_rows(&scores, k)
        .iter()
        .zip(&set.labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok((loss, correct as f64 / set.len() as f64))
}

/// Trains `model` in place for `cfg.epochs` passes over `train`, shuffling
/// with a generator seeded from `cfg.seed`. No early stopping.
pub fn train_run(
    model: &mut SstafModel,
    train: &FeatureSet,
    val: Option<&FeatureSet>,
    cfg: &TrainConfig,
) -> Result<History> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let k = model.config().n_classes;
    if let Some(&bad) = train.labels.iter().find(|&&y| y >= k) {
        return Err(Error::Data(format!("label {bad} out of range for {k} classes")));
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_d0d0);
    let mut state = OptimizerState::new(model.store());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = History::default();
    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg);
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = batch_tensor(train, batch)?;
            let targets: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            let tape = Tape::with_precision(cfg.precision);
            let trace = model.forward(&tape, tape.constant(x), true, &mut dropout_rng)?;
            let loss = cross_entropy(trace.logits, &targets)?;
            total += loss.value().item().unwrap_or(f64::NAN) * batch.len() as f64;
            model.store_mut().zero_grad();
            loss.backward(model.store_mut())?;
            adamw_step(model.store_mut(), &mut state, lr, cfg)?;
        }
        let (val_loss, val_accuracy) = match val {
            Some(v) if !v.is_empty() => {
                let (l, a) = evaluate(model, v, cfg)?;
                (Some(l), Some(a))
            }
            _ => (None, None),
        };
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: total / train.len() as f64,
            val_loss,
            val_accuracy,
        };
        log::info!(
            "epoch {:>3}  lr {:.2e}  train loss {:.4}{}",
            epoch + 1,
            lr,
            record.train_loss,
            match (val_loss, val_accuracy) {
                (Some(l), Some(a)) => format!("  val loss {l:.4}  val acc {a:.3}"),
                _ => String::new(),
            }
        );
        history.epochs.push(record);
    }
    Ok(history)
}
