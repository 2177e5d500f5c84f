//! Architecture and optimization settings.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MoonConfig {
    pub hidden: usize,
    pub ee_dim: usize,
    pub layers: usize,
    pub filter_hidden: usize,
    pub filter_ranges: usize,
    pub jastrow_layers: usize,
    pub determinants: usize,
}

impl Default for MoonConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl MoonConfig {
    /// Small network that trains on one CPU core in minutes.
    pub fn desk() -> Self {
        Self { hidden: 16, ee_dim: 8, layers: 2, filter_hidden: 8, filter_ranges: 4, jastrow_layers: 2, determinants: 2 }
    }

    /// Published full-size network.
    pub fn paper() -> Self {
        Self { hidden: 256, ee_dim: 32, layers: 4, filter_hidden: 16, filter_ranges: 8, jastrow_layers: 3, determinants: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlobeConfig {
    pub embedding: usize,
    pub message: usize,
    pub layers: usize,
    pub mlp_layers: usize,
    pub filter_hidden: usize,
    pub filter_ranges: usize,
    pub p_max: usize,
}

impl Default for GlobeConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl GlobeConfig {
    pub fn desk() -> Self {
        Self { embedding: 16, message: 16, layers: 2, mlp_layers: 2, filter_hidden: 8, filter_ranges: 4, p_max: 4 }
    }

    pub fn paper() -> Self {
        Self { embedding: 128, message: 64, layers: 3, mlp_layers: 4, filter_hidden: 64, filter_ranges: 16, p_max: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    /// Total walkers, split evenly across molecules.
    pub walkers: usize,
    pub mcmc_steps: usize,
    pub burn_in: usize,
    pub target_pmove: f64,
    pub width_adaptation: f64,
    pub initial_width: f64,
    pub clip_multiplier: f64,
    pub damping: f64,
    pub cg_max_steps: usize,
    pub cg_tolerance: f64,
    pub learning_rate: f64,
    pub learning_rate_decay: f64,
    pub max_step_norm: f64,
    pub pretrain_steps: usize,
    pub pretrain_learning_rate: f64,
    pub regularizer_weight: f64,
    pub checkpoint_every: usize,
    /// Walkers per derivative chunk.
    pub chunk: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            walkers: 4096,
            mcmc_steps: 40,
            burn_in: 500,
            target_pmove: 0.5,
            width_adaptation: 0.1,
            initial_width: 0.3,
            clip_multiplier: 5.0,
            damping: 1e-4,
            cg_max_steps: 100,
            cg_tolerance: 1e-6,
            learning_rate: 0.1,
            learning_rate_decay: 100.0,
            max_step_norm: 1.0,
            pretrain_steps: 10_000,
            pretrain_learning_rate: 1e-3,
            regularizer_weight: 1e-3,
            checkpoint_every: 500,
            chunk: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// `η(t) = η₀ / (1 + t/τ)`.
    pub fn learning_rate_at(&self, t: usize) -> f64 {
        self.learning_rate / (1.0 + t as f64 / self.learning_rate_decay)
    }
}

/// Contents of a run file: `c_self` at the top level and one table per
/// config struct. Missing keys take the desk defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Distance cutoff for lone-pair placement and bond detection, bohr.
    pub c_self: f64,
    pub moon: MoonConfig,
    pub globe: GlobeConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { c_self: crate::orbitals::DEFAULT_C_SELF, moon: MoonConfig::default(), globe: GlobeConfig::default(), train: TrainConfig::default() }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}
