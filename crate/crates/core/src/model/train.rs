use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::transformer::{loss_and_grad, Batch};
use super::{ModelError, Scalar, TrainConfig, TransformerParams};
use crate::datagen::Dataset;
use crate::numeral::{encode_sample, EncodedSample, Vocabulary};

const SHUFFLE_STREAM: u64 = 12;

/// Adaptive-moment optimizer state, no weight decay.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(n: usize) -> Self {
        Self { m: vec![T::zero(); n], v: vec![T::zero(); n], t: 0 }
    }

    /// One bias-corrected update. A zero `lr` advances the moments only.
    pub fn step(&mut self, params: &mut [T], grads: &[T], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let c1 = T::of(1.0 / (1.0 - cfg.beta1.powf(self.t as f64)));
        let c2 = T::of(1.0 / (1.0 - cfg.beta2.powf(self.t as f64)));
        let eps = T::of(cfg.eps);
        let lr_t = T::of(lr);
        let apply = lr != 0.0;
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + one_b1 * g;
            self.v[i] = b2 * self.v[i] + one_b2 * g * g;
            if apply {
                let mhat = self.m[i] * c1;
                let vhat = self.v[i] * c2;
                params[i] = params[i] - lr_t * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Rescales `grads` to global L2 norm `max_norm` when larger; returns the
/// norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [T], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.as_f64() * g.as_f64()).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = T::of(max_norm / norm);
        grads.iter_mut().for_each(|g| *g = *g * s);
    }
    norm
}

/// Per-step training losses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub losses: Vec<f64>,
}

impl LossCurve {
    /// `step,loss` records, one per optimizer step.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            out.push_str(&format!("{i},{l:.8}\n"));
        }
        out
    }

    pub fn last(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub loss_curve: LossCurve,
    pub steps: usize,
}

/// Encodes `dataset` under `vocab` and trains on it.
pub fn train<T: Scalar>(
    params: &mut TransformerParams<T>,
    dataset: &Dataset,
    vocab: &Vocabulary,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, ModelError> {
    params.config.check_vocab(vocab)?;
    let encoded: Vec<EncodedSample> = dataset.samples.iter().map(|s| encode_sample(&s.a, &s.b, s.op, vocab)).collect();
    train_encoded(params, &encoded, vocab.pad(), cfg, |_, _| {})
}

/// Epochs of shuffled mini-batches with warmup and global-norm clipping.
/// `on_step` receives each step index and its loss.
pub fn train_encoded<T: Scalar>(
    params: &mut TransformerParams<T>,
    samples: &[EncodedSample],
    pad: u32,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainOutcome, ModelError> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(ModelError::DegenerateBatch);
    }
    let context = params.config.context_length;
    if let Some(s) = samples.iter().find(|s| s.len() > context) {
        return Err(ModelError::Length { len: s.len(), context });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut adam = Adam::new(params.len());
    let mut curve = LossCurve::default();
    let total_steps = cfg.epochs * samples.len().div_ceil(cfg.batch_size);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let refs: Vec<&EncodedSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let batch = Batch::from_samples(&refs, pad);
            let (loss, mut grads) = loss_and_grad(params, &batch)?;
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss { step, loss });
            }
            clip_grad_norm(&mut grads, cfg.grad_clip);
            adam.step(&mut params.data, &grads, cfg.lr_at(step, total_steps), cfg);
            curve.losses.push(loss);
            on_step(step, loss);
            step += 1;
        }
        log::debug!("epoch {epoch}: step {step}, loss {:.5}", curve.last().unwrap_or(f64::NAN));
    }
    Ok(TrainOutcome { loss_curve: curve, steps: step })
}
