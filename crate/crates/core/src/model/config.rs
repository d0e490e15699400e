use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::numeral::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PositionalScheme {
    #[default]
    LearnedAbsolute,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub context_length: usize,
    /// `0` in config files means "derive from the numeral system".
    pub vocab_size: usize,
    pub positional: PositionalScheme,
    pub tied_head: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            n_heads: 4,
            d_model: 256,
            d_ff: 1024,
            context_length: 128,
            vocab_size: 0,
            positional: PositionalScheme::LearnedAbsolute,
            tied_head: false,
        }
    }
}

impl ModelConfig {
    pub fn for_vocab(vocab: &Vocabulary) -> Self {
        Self::default().with_vocab(vocab)
    }

    pub fn with_vocab(mut self, vocab: &Vocabulary) -> Self {
        self.vocab_size = vocab.size();
        self
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 || self.d_ff == 0 {
            return bad("layer, head, model and feed-forward sizes must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} is not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.context_length < 2 {
            return bad("context_length must be at least 2".into());
        }
        if self.vocab_size < 1 + Vocabulary::SPECIAL_COUNT {
            return bad(format!("vocab_size {} is too small", self.vocab_size));
        }
        Ok(())
    }

    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<(), ModelError> {
        if self.vocab_size != vocab.size() {
            return Err(ModelError::VocabMismatch { model: self.vocab_size, vocab: vocab.size() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_steps: usize,
    pub seed: u64,
    pub grad_clip: f64,
    pub decay: LrDecay,
}

/// Learning-rate shape after warmup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrDecay {
    Constant,
    /// Half-cosine from the base rate down to zero at the last step.
    #[default]
    Cosine,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 10,
            batch_size: 64,
            warmup_steps: 100,
            seed: 0,
            grad_clip: 1.0,
            decay: LrDecay::Cosine,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return bad("adaptive-moment hyperparameters out of range");
        }
        if self.grad_clip <= 0.0 {
            return bad("gradient clip norm must be positive");
        }
        Ok(())
    }

    /// Linear warmup to the base rate, then `decay` over the remaining
    /// steps of a `total_steps` run.
    pub fn lr_at(&self, step: usize, total_steps: usize) -> f64 {
        if step < self.warmup_steps {
            return self.learning_rate * (step + 1) as f64 / self.warmup_steps as f64;
        }
        match self.decay {
            LrDecay::Constant => self.learning_rate,
            LrDecay::Cosine => {
                let span = total_steps.saturating_sub(self.warmup_steps).max(1) as f64;
                let progress = ((step - self.warmup_steps) as f64 / span).min(1.0);
                self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}
