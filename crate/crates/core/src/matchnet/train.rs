use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{make_target, softmax_xent_loss};
use super::network::{ForwardCache, NetGrads, NetParams, NetSpec};
use super::sampling::TrainingExample;
use super::tensor::Tensor3;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Optimizer and schedule settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Iterations at which the learning rate is halved.
    pub lr_milestones: Vec<usize>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Stop once the running training accuracy reaches this value (checked
    /// every `eval_every` iterations on the evaluation batch); `None` runs
    /// all iterations.
    pub early_stop_accuracy: Option<f64>,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            batch_size: 128,
            learning_rate: 0.01,
            weight_decay: 0.0005,
            lr_milestones: vec![40_000, 60_000, 80_000],
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            early_stop_accuracy: None,
            eval_every: 250,
        }
    }
}

impl TrainConfig {
    pub fn learning_rate_at(&self, iteration: usize) -> f64 {
        let halvings = self.lr_milestones.iter().filter(|m| iteration >= **m).count();
        self.learning_rate * 0.5f64.powi(halvings as i32)
    }
}

/// Scores of every candidate location of an example from network outputs.
fn strip_scores<T: Scalar>(anchor_out: &Tensor3<T>, strip_out: &Tensor3<T>) -> (Vec<T>, Vec<T>) {
    let dim = anchor_out.channels;
    let f: Vec<T> = (0..dim).map(|c| anchor_out.at(c, 0, 0)).collect();
    let n = strip_out.plane_len();
    let scores = (0..n)
        .map(|j| {
            let mut acc = T::zero();
            for (c, fc) in f.iter().enumerate() {
                acc = acc + *fc * strip_out.data[c * n + j];
            }
            acc
        })
        .collect();
    (f, scores)
}

/// Mean cross-entropy of a batch in training mode, plus everything needed
/// for the backward pass.
pub struct BatchResult<T> {
    pub loss: T,
    pub grads: NetGrads<T>,
    pub cache: ForwardCache<T>,
}

pub fn batch_loss_and_grads<T: Scalar>(
    params: &NetParams<T>,
    batch: &[&TrainingExample<T>],
) -> Result<BatchResult<T>> {
    let mut inputs = Vec::with_capacity(2 * batch.len());
    for ex in batch {
        inputs.push(ex.anchor.clone());
        inputs.push(ex.candidates.clone());
    }
    let (outputs, cache) = params.forward_train(&inputs);
    let scale = T::one() / T::lit(batch.len() as f64);
    let mut loss = T::zero();
    let mut grad_out = Vec::with_capacity(outputs.len());
    for (k, ex) in batch.iter().enumerate() {
        let (a, s) = (&outputs[2 * k], &outputs[2 * k + 1]);
        let (f, scores) = strip_scores(a, s);
        let target = make_target(scores.len(), ex.gt_index)?;
        let (l, dscore) = softmax_xent_loss(&scores, &target)?;
        loss = loss + l * scale;
        let n = s.plane_len();
        let mut ga = Tensor3::zeros(a.channels, a.height, a.width);
        let mut gs = Tensor3::zeros(s.channels, s.height, s.width);
        for c in 0..f.len() {
            let strip = &s.data[c * n..(c + 1) * n];
            let mut acc = T::zero();
            for j in 0..n {
                let d = dscore[j] * scale;
                acc = acc + d * strip[j];
                gs.data[c * n + j] = d * f[c];
            }
            ga.data[c] = acc;
        }
        grad_out.push(ga);
        grad_out.push(gs);
    }
    let (grads, _) = params.backward(&cache, grad_out);
    Ok(BatchResult { loss, grads, cache })
}

/// Training-mode loss without touching the parameters.
pub fn batch_loss<T: Scalar>(params: &NetParams<T>, batch: &[TrainingExample<T>]) -> Result<T> {
    let refs: Vec<&TrainingExample<T>> = batch.iter().collect();
    Ok(batch_loss_and_grads(params, &refs)?.loss)
}

/// Candidate scores of one example in inference mode.
pub fn example_scores<T: Scalar>(params: &NetParams<T>, ex: &TrainingExample<T>) -> Result<Vec<T>> {
    let a = params.forward(&ex.anchor)?;
    let s = params.forward(&ex.candidates)?;
    Ok(strip_scores(&a, &s).1)
}

/// Fraction of examples whose highest-scoring candidate is the ground truth.
pub fn argmax_accuracy<T: Scalar>(params: &NetParams<T>, examples: &[TrainingExample<T>]) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for ex in examples {
        let scores = example_scores(params, ex)?;
        let best = scores
            .iter()
            .enumerate()
            .fold((0, T::neg_infinity()), |acc, (i, s)| if *s > acc.1 { (i, *s) } else { acc })
            .0;
        if best == ex.gt_index {
            hits += 1;
        }
    }
    Ok(hits as f64 / examples.len() as f64)
}

/// First and second moment estimates of Adam.
struct Adam<T> {
    m: NetGrads<T>,
    v: NetGrads<T>,
    step: i32,
}

impl<T: Scalar> Adam<T> {
    fn new(params: &NetParams<T>) -> Self {
        Self {
            m: params.zero_grads(),
            v: params.zero_grads(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut NetParams<T>, grads: &NetGrads<T>, lr: f64, cfg: &TrainConfig) {
        self.step += 1;
        let (b1, b2) = (T::lit(cfg.adam_beta1), T::lit(cfg.adam_beta2));
        let bc1 = T::one() - b1.powi(self.step);
        let bc2 = T::one() - b2.powi(self.step);
        let (lr, eps, wd) = (T::lit(lr), T::lit(cfg.adam_eps), T::lit(cfg.weight_decay));
        for l in 0..params.layers.len() {
            let g = grads[l].tensors();
            let m = self.m[l].tensors_mut();
            let v = self.v[l].tensors_mut();
            let p = params.layers[l].trainable_mut();
            for (((p, g), m), v) in p.into_iter().zip(g).zip(m).zip(v) {
                for i in 0..p.len() {
                    let gi = g[i] + wd * p[i];
                    m[i] = b1 * m[i] + (T::one() - b1) * gi;
                    v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                    let mhat = m[i] / bc1;
                    let vhat = v[i] / bc2;
                    p[i] = p[i] - lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
    }
}

/// Trains a freshly initialized network on `dataset`.
pub fn train<T: Scalar>(
    dataset: &[TrainingExample<T>],
    spec: NetSpec,
    config: &TrainConfig,
) -> Result<NetParams<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = NetParams::init(spec, &mut rng)?;
    train_from(params, dataset, config)
}

/// Continues training from existing parameters.
pub fn train_from<T: Scalar>(
    mut params: NetParams<T>,
    dataset: &[TrainingExample<T>],
    config: &TrainConfig,
) -> Result<NetParams<T>> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut adam = Adam::new(&params);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut cursor = order.len();
    let batch = config.batch_size.min(dataset.len());
    for it in 0..config.iterations {
        let mut idx = Vec::with_capacity(batch);
        while idx.len() < batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let refs: Vec<&TrainingExample<T>> = idx.iter().map(|&i| &dataset[i]).collect();
        let res = batch_loss_and_grads(&params, &refs)?;
        let loss = res.loss.as_f64();
        if !loss.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                loss,
            });
        }
        params.update_running_stats(&res.cache);
        adam.update(&mut params, &res.grads, config.learning_rate_at(it), config);
        if it % 100 == 0 {
            debug!("iteration {it}: loss {loss:.4}");
        }
        if let Some(target) = config.early_stop_accuracy {
            if config.eval_every > 0 && (it + 1) % config.eval_every == 0 {
                let probe: Vec<TrainingExample<T>> =
                    refs.iter().map(|e| (*e).clone()).collect();
                let acc = argmax_accuracy(&params, &probe)?;
                info!("iteration {}: loss {loss:.4}, batch accuracy {acc:.3}", it + 1);
                if acc >= target {
                    break;
                }
            }
        }
    }
    Ok(params)
}
