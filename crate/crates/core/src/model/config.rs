use serde::{Deserialize, Serialize};

use crate::codec::{MAX_TOKENS, SEGMENT_STEPS, VOCAB_SIZE};
use crate::error::{Error, Result};

pub const CONFIG_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    /// Two latents with standard-normal priors; no cluster inference.
    VanillaVae,
    /// Two latents, each with a learnable Gaussian-mixture prior.
    GmVae,
    /// One encoder, one latent, no discriminators or regularization.
    AblationSingleLatent,
}

impl ModelMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelMode::VanillaVae => "vanilla_vae",
            ModelMode::GmVae => "gm_vae",
            ModelMode::AblationSingleLatent => "ablation_single_latent",
        }
    }

    pub fn has_mixture_prior(self) -> bool {
        !matches!(self, ModelMode::VanillaVae)
    }

    pub fn latent_count(self) -> usize {
        match self {
            ModelMode::AblationSingleLatent => 1,
            _ => 2,
        }
    }
}

impl std::fmt::Display for ModelMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla_vae" => Ok(ModelMode::VanillaVae),
            "gm_vae" => Ok(ModelMode::GmVae),
            "ablation_single_latent" => Ok(ModelMode::AblationSingleLatent),
            other => Err(Error::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalePreset {
    Paper,
    Desk,
}

/// KL weight: zero for `start_steps`, then a linear ramp over `ramp_steps`
/// up to `beta_max`, constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSchedule {
    pub start_steps: u64,
    pub ramp_steps: u64,
    pub beta_max: f64,
}

impl BetaSchedule {
    pub const PAPER: BetaSchedule = BetaSchedule {
        start_steps: 1000,
        ramp_steps: 10000,
        beta_max: 0.2,
    };

    pub fn at(&self, step: u64) -> f64 {
        if step < self.start_steps {
            return 0.0;
        }
        if self.ramp_steps == 0 {
            return self.beta_max;
        }
        let frac = (step - self.start_steps) as f64 / self.ramp_steps as f64;
        self.beta_max * frac.min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub schema: u32,
    pub preset: ScalePreset,
    pub mode: ModelMode,
    /// Number of mixture components (arousal classes).
    pub clusters: usize,
    pub vocab_size: usize,
    pub max_tokens: usize,
    pub label_len: usize,
    pub z_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub batch_size: usize,
    pub beta: BetaSchedule,
    /// Fixed variance of every mixture component.
    pub prior_variance: f64,
    pub learning_rate: f64,
    /// Index of the regularized ("fader") latent dimension.
    pub reg_dim: usize,
    /// Whether the latent regularization term is part of the objective.
    pub latent_reg: bool,
    pub train_steps: u64,
    /// Batch slots filled with labelled records (drawn with replacement)
    /// whenever the training set has any. 0 disables oversampling.
    #[serde(default)]
    pub labelled_per_batch: usize,
}

impl ModelConfig {
    /// Full-size hyperparameters.
    pub fn paper() -> Self {
        Self {
            schema: CONFIG_SCHEMA,
            preset: ScalePreset::Paper,
            mode: ModelMode::GmVae,
            clusters: 2,
            vocab_size: VOCAB_SIZE,
            max_tokens: MAX_TOKENS,
            label_len: SEGMENT_STEPS,
            z_dim: 128,
            hidden_dim: 512,
            embed_dim: 512,
            batch_size: 128,
            beta: BetaSchedule::PAPER,
            prior_variance: (-2.0f64).exp(),
            learning_rate: 1e-3,
            reg_dim: 0,
            latent_reg: true,
            train_steps: 100_000,
            labelled_per_batch: 0,
        }
    }

    /// CPU-sized hyperparameters; the KL warm-up and ramp are shortened to
    /// fit the shorter run.
    pub fn desk() -> Self {
        Self {
            preset: ScalePreset::Desk,
            z_dim: 16,
            hidden_dim: 64,
            embed_dim: 32,
            batch_size: 32,
            beta: BetaSchedule {
                start_steps: 200,
                ramp_steps: 800,
                beta_max: 0.2,
            },
            train_steps: 6000,
            labelled_per_batch: 4,
            ..Self::paper()
        }
    }

    pub fn with_mode(mut self, mode: ModelMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.schema != CONFIG_SCHEMA {
            return bad(format!("unsupported config schema {}", self.schema));
        }
        if self.z_dim < 2 {
            return bad(format!("z_dim must be at least 2, got {}", self.z_dim));
        }
        if self.reg_dim >= self.z_dim {
            return bad(format!("reg_dim {} must be below z_dim {}", self.reg_dim, self.z_dim));
        }
        if self.clusters < 2 {
            return bad(format!("need at least 2 clusters, got {}", self.clusters));
        }
        if !(self.prior_variance > 0.0 && self.prior_variance.is_finite()) {
            return bad(format!("prior variance must be positive, got {}", self.prior_variance));
        }
        if self.vocab_size != VOCAB_SIZE || self.max_tokens > MAX_TOKENS || self.label_len != SEGMENT_STEPS {
            return bad("vocabulary, token length and label length are fixed by the codec".into());
        }
        if self.hidden_dim == 0 || self.embed_dim == 0 || self.batch_size == 0 {
            return bad("sizes must be positive".into());
        }
        if self.labelled_per_batch >= self.batch_size {
            return bad("labelled_per_batch must leave room for unlabelled records".into());
        }
        if self.beta.beta_max < 0.0 {
            return bad("beta_max must be non-negative".into());
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}
