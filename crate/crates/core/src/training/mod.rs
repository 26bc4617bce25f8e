//! Cross-entropy loss, the regularized objective, Adam, the alternating
//! head/hidden training scheme and evaluation.
//!
//! Per-sample work inside a mini-batch is split into fixed-size chunks that
//! a [`BatchExecutor`] may run in parallel. Chunk results are always reduced
//! in chunk order, so a run is bit-reproducible regardless of how many
//! workers execute it.

mod adam;

pub use adam::{adam_step, AdamState};

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backprop::{add_penalty_grads, backward_model, head_backward, head_penalty, regularizer_value, ParamGrads};
use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::layers::{argmax, Model, OutputHead, Parameters};

/// Samples per work unit. Fixed so the reduction tree never depends on the
/// worker count.
pub const CHUNK: usize = 8;

/// Runs `f(0), …, f(n−1)` and returns the results in index order.
pub trait BatchExecutor {
    fn map_indexed<T: Send, F: Fn(usize) -> T + Sync>(&self, n: usize, f: F) -> Vec<T>;
}

/// Single-threaded executor.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl BatchExecutor for Sequential {
    fn map_indexed<T: Send, F: Fn(usize) -> T + Sync>(&self, n: usize, f: F) -> Vec<T> {
        (0..n).map(f).collect()
    }
}

/// How hidden and head parameters are updated each mini-batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Up to `inner_head_iters` head-only Adam steps with the hidden layers
    /// frozen, then one hidden-layer Adam step with the head frozen.
    CoordinateDescent,
    /// One Adam step on all parameters together.
    Joint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    /// Multiplies `lr` after every epoch when below 1.
    pub lr_decay_gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the smoothness regularizer `R_K + R_b`.
    pub alpha: f64,
    /// Weight decay on the output head.
    pub alpha_c: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub inner_head_iters: usize,
    pub seed: u64,
    pub scheme: Scheme,
}

impl Default for TrainConfig {
    /// Settings used for the two-dimensional benchmarks.
    fn default() -> Self {
        TrainConfig {
            lr: 0.05,
            lr_decay_gamma: 1.0,
            epochs: 50,
            batch_size: 125,
            alpha: 5e-3,
            alpha_c: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            inner_head_iters: 10,
            seed: 0,
            scheme: Scheme::CoordinateDescent,
        }
    }
}

impl TrainConfig {
    /// MNIST settings: joint Adam, lr 0.04 decayed by 0.8 per epoch,
    /// batch 100, `α = 1e-3`, weight decay `2e-4`.
    pub fn mnist() -> Self {
        TrainConfig {
            lr: 0.04,
            lr_decay_gamma: 0.8,
            epochs: 40,
            batch_size: 100,
            alpha: 1e-3,
            alpha_c: 2e-4,
            scheme: Scheme::Joint,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid("lr must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid("Adam moments must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be at least 1"));
        }
        if !(self.alpha >= 0.0) || !(self.alpha_c >= 0.0) {
            return Err(invalid("regularization weights must be non-negative"));
        }
        if !(self.lr_decay_gamma > 0.0 && self.lr_decay_gamma <= 1.0) {
            return Err(invalid("lr_decay_gamma must lie in (0, 1]"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(invalid("adam_eps must be positive"));
        }
        Ok(())
    }
}

/// `−log p[label]` with `p` clamped to at least `1e-12`.
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    match probs.get(label) {
        Some(p) => Ok(-libm::log(p.max(1e-12))),
        None => Err(Error::LabelOutOfRange {
            label,
            classes: probs.len(),
        }),
    }
}

fn check_labels(model: &Model, data: &Dataset) -> Result<()> {
    if data.n() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            op: "dataset",
            expected: (data.len(), model.input_dim()),
            found: (data.len(), data.n()),
        });
    }
    if let Some(&label) = data.labels.iter().find(|l| **l >= model.head.classes) {
        return Err(Error::LabelOutOfRange {
            label,
            classes: model.head.classes,
        });
    }
    Ok(())
}

/// Mean cross-entropy over `batch` plus `α_c(‖W‖² + ‖μ‖²) + α(R_K + R_b)`.
pub fn objective(model: &Model, data: &Dataset, batch: &[usize], config: &TrainConfig) -> Result<f64> {
    if batch.is_empty() {
        return Err(invalid("objective needs a non-empty batch"));
    }
    let mut total = 0.0;
    for &i in batch {
        let (x, c) = data.sample(i);
        total += cross_entropy(&model.predict_proba(x)?, c)?;
    }
    Ok(total / batch.len() as f64 + penalty(model, config))
}

fn penalty(model: &Model, config: &TrainConfig) -> f64 {
    config.alpha_c * head_penalty(&model.head) + config.alpha * regularizer_value(&model.net)
}

struct ChunkResult {
    grads: ParamGrads,
    loss: f64,
    correct: usize,
}

/// Summed gradient, summed loss and correct count of the cross-entropy over
/// `batch`. Each sample's gradient is formed separately and added in batch
/// order.
fn batch_gradient<E: BatchExecutor>(model: &Model, data: &Dataset, batch: &[usize], exec: &E) -> Result<ChunkResult> {
    let chunks = batch.len().div_ceil(CHUNK);
    let results = exec.map_indexed(chunks, |c| -> Result<ChunkResult> {
        let mut out = ChunkResult {
            grads: ParamGrads::zeros_for(model),
            loss: 0.0,
            correct: 0,
        };
        let mut sample = ParamGrads::zeros_for(model);
        for &i in &batch[c * CHUNK..((c + 1) * CHUNK).min(batch.len())] {
            let (x, label) = data.sample(i);
            let cache = model.forward(x)?;
            sample.zero();
            out.loss += backward_model(model, x, &cache, label, &mut sample)?;
            out.grads.add_assign(&sample);
            let p = model.head.probabilities_from_logits(&model.head.logits(cache.output()));
            out.correct += usize::from(argmax(&p) == label);
        }
        Ok(out)
    });
    let mut iter = results.into_iter();
    let mut acc = match iter.next() {
        Some(r) => r?,
        None => {
            return Ok(ChunkResult {
                grads: ParamGrads::zeros_for(model),
                loss: 0.0,
                correct: 0,
            })
        }
    };
    for r in iter {
        let r = r?;
        acc.grads.add_assign(&r.grads);
        acc.loss += r.loss;
        acc.correct += r.correct;
    }
    Ok(acc)
}

/// Final states `y_N` for every sample of `batch`, in batch order.
fn batch_outputs<E: BatchExecutor>(model: &Model, data: &Dataset, batch: &[usize], exec: &E) -> Result<Vec<Vec<f64>>> {
    let chunks = batch.len().div_ceil(CHUNK);
    let results = exec.map_indexed(chunks, |c| -> Result<Vec<Vec<f64>>> {
        batch[c * CHUNK..((c + 1) * CHUNK).min(batch.len())]
            .iter()
            .map(|&i| Ok(model.forward(data.sample(i).0)?.output().to_vec()))
            .collect()
    });
    let mut out = Vec::with_capacity(batch.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub epoch: usize,
    /// Global mini-batch counter, starting at 0.
    pub iter: usize,
    /// Mini-batch objective evaluated with the parameters used for the
    /// hidden-layer step.
    pub loss: f64,
    /// Mini-batch accuracy for the same parameters.
    pub train_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub records: Vec<IterRecord>,
}

impl History {
    /// Mean recorded loss over the iterations of `epoch`.
    pub fn epoch_mean_loss(&self, epoch: usize) -> Option<f64> {
        let v: Vec<f64> = self.records.iter().filter(|r| r.epoch == epoch).map(|r| r.loss).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Flat view of hidden-layer parameters and the input expansion kernel.
fn hidden_flat(model: &Model) -> Vec<f64> {
    let mut v = model.net.to_flat();
    if let Some(e) = &model.expand {
        v.extend_from_slice(e.kernel());
    }
    v
}

fn set_hidden_flat(model: &mut Model, flat: &[f64]) {
    let k = model.net.param_count();
    model.net.set_flat(&flat[..k]);
    if let Some(e) = &mut model.expand {
        e.kernel_mut().copy_from_slice(&flat[k..]);
    }
}

fn hidden_grad_flat(g: &ParamGrads) -> Vec<f64> {
    let mut v = Vec::new();
    for l in &g.layers {
        l.for_each_tensor(&mut |t| v.extend_from_slice(t));
    }
    if let Some(e) = &g.expand {
        v.extend_from_slice(e);
    }
    v
}

/// Optimizer state carried across iterations.
pub struct Trainer {
    pub config: TrainConfig,
    head_state: AdamState,
    hidden_state: AdamState,
    joint_state: AdamState,
    rng: ChaCha8Rng,
    pub lr: f64,
    pub iteration: usize,
}

impl Trainer {
    pub fn new(model: &Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = |len| AdamState::new(len, config.beta1, config.beta2, config.adam_eps);
        let head_len = model.head.param_count();
        let hidden_len = hidden_flat(model).len();
        Ok(Trainer {
            head_state: adam(head_len),
            hidden_state: adam(hidden_len),
            joint_state: adam(head_len + hidden_len),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            lr: config.lr,
            iteration: 0,
            config,
        })
    }

    /// Head-only Adam steps on cached final states.
    fn fit_head(&mut self, head: &mut OutputHead, outputs: &[Vec<f64>], labels: &[usize]) -> Result<()> {
        let inv = 1.0 / outputs.len() as f64;
        for _ in 0..self.config.inner_head_iters {
            let mut g = head.zeros_like();
            let mut loss = 0.0;
            for (y, &c) in outputs.iter().zip(labels) {
                loss += head_backward(y, head, c, &mut g)?.0;
            }
            if !loss.is_finite() {
                return Err(Error::Diverged { iteration: self.iteration });
            }
            g.for_each_tensor_mut(&mut |t| t.iter_mut().for_each(|v| *v *= inv));
            crate::tensor::axpy(2.0 * self.config.alpha_c, head.w.as_slice(), g.w.as_mut_slice());
            crate::tensor::axpy(2.0 * self.config.alpha_c, &head.mu, &mut g.mu);
            adam_step(head, &g, &mut self.head_state, self.lr)?;
        }
        Ok(())
    }

    /// One optimizer iteration on `batch`.
    pub fn step<E: BatchExecutor>(&mut self, model: &mut Model, data: &Dataset, batch: &[usize], epoch: usize, exec: &E) -> Result<IterRecord> {
        if self.config.scheme == Scheme::CoordinateDescent && self.config.inner_head_iters > 0 {
            let outputs = batch_outputs(model, data, batch, exec)?;
            let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
            self.fit_head(&mut model.head, &outputs, &labels)?;
        }
        let r = batch_gradient(model, data, batch, exec)?;
        let inv = 1.0 / batch.len() as f64;
        let loss = r.loss * inv + penalty(model, &self.config);
        if !loss.is_finite() {
            return Err(Error::Diverged { iteration: self.iteration });
        }
        let mut grads = r.grads;
        grads.scale(inv);
        add_penalty_grads(model, self.config.alpha, self.config.alpha_c, &mut grads);
        if !grads.is_finite() {
            return Err(Error::Diverged { iteration: self.iteration });
        }
        match self.config.scheme {
            Scheme::CoordinateDescent => {
                let mut theta = hidden_flat(model);
                self.hidden_state.update(&mut theta, &hidden_grad_flat(&grads), self.lr)?;
                set_hidden_flat(model, &theta);
            }
            Scheme::Joint => {
                let mut theta = hidden_flat(model);
                theta.extend(model.head.to_flat());
                let mut g = hidden_grad_flat(&grads);
                g.extend(grads.head.to_flat());
                self.joint_state.update(&mut theta, &g, self.lr)?;
                let k = theta.len() - model.head.param_count();
                set_hidden_flat(model, &theta[..k]);
                model.head.set_flat(&theta[k..]);
            }
        }
        let rec = IterRecord {
            epoch,
            iter: self.iteration,
            loss,
            train_acc: r.correct as f64 * inv,
        };
        self.iteration += 1;
        Ok(rec)
    }

    /// Shuffled mini-batches for the next epoch.
    pub fn epoch_batches(&mut self, s: usize) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..s).collect();
        idx.shuffle(&mut self.rng);
        idx.chunks(self.config.batch_size).map(|c| c.to_vec()).collect()
    }

    pub fn end_epoch(&mut self) {
        if self.config.lr_decay_gamma < 1.0 {
            self.lr *= self.config.lr_decay_gamma;
        }
    }
}

/// Trains `model` in place. `observer` runs after every iteration with the
/// record and the updated model; returning an error aborts training.
pub fn train_with<E: BatchExecutor>(
    model: &mut Model,
    data: &Dataset,
    config: &TrainConfig,
    exec: &E,
    observer: &mut dyn FnMut(&IterRecord, &Model) -> Result<()>,
) -> Result<History> {
    check_labels(model, data)?;
    if data.is_empty() {
        return Err(invalid("training set is empty"));
    }
    let mut trainer = Trainer::new(model, config.clone())?;
    let mut history = History::default();
    for epoch in 0..config.epochs {
        for batch in trainer.epoch_batches(data.len()) {
            let rec = trainer.step(model, data, &batch, epoch, exec)?;
            observer(&rec, model)?;
            history.records.push(rec);
        }
        trainer.end_epoch();
    }
    Ok(history)
}

/// Alternating head/hidden training (or joint Adam, per `config.scheme`).
/// Returns the trained model and its history; `epochs = 0` returns the
/// input unchanged.
pub fn train_coordinate_descent(model: &Model, data: &Dataset, config: &TrainConfig) -> Result<(Model, History)> {
    let mut m = model.clone();
    let history = train_with(&mut m, data, config, &Sequential, &mut |_, _| Ok(()))?;
    Ok((m, history))
}

/// Class probabilities for every sample, in dataset order.
pub fn predict_all<E: BatchExecutor>(model: &Model, data: &Dataset, exec: &E) -> Result<Vec<Vec<f64>>> {
    check_labels(model, data)?;
    let chunks = data.len().div_ceil(CHUNK);
    let results = exec.map_indexed(chunks, |c| -> Result<Vec<Vec<f64>>> {
        (c * CHUNK..((c + 1) * CHUNK).min(data.len()))
            .map(|i| Ok(model.predict_proba(data.sample(i).0)?.into_inner()))
            .collect()
    });
    let mut out = Vec::with_capacity(data.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Fraction of samples whose argmax prediction equals the label.
pub fn evaluate_with<E: BatchExecutor>(model: &Model, data: &Dataset, exec: &E) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let probs = predict_all(model, data, exec)?;
    let correct = probs.iter().zip(&data.labels).filter(|(p, c)| argmax(p) == **c).count();
    Ok(correct as f64 / data.len() as f64)
}

pub fn evaluate(model: &Model, data: &Dataset) -> Result<f64> {
    evaluate_with(model, data, &Sequential)
}

/// Sum over `batch` of the per-sample cross-entropy gradients, with the
/// summed loss.
pub fn summed_gradient<E: BatchExecutor>(model: &Model, data: &Dataset, batch: &[usize], exec: &E) -> Result<(ParamGrads, f64)> {
    let r = batch_gradient(model, data, batch, exec)?;
    Ok((r.grads, r.loss))
}

/// Plain full-batch gradient of [`objective`] (used for small-step checks).
pub fn objective_gradient(model: &Model, data: &Dataset, batch: &[usize], config: &TrainConfig) -> Result<ParamGrads> {
    let r = batch_gradient(model, data, batch, &Sequential)?;
    let mut g = r.grads;
    g.scale(1.0 / batch.len() as f64);
    add_penalty_grads(model, config.alpha, config.alpha_c, &mut g);
    Ok(g)
}
