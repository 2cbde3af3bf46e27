//! Variational autoencoder with a truncated Dirichlet-process mixture prior.
//!
//! Observations are encoded to a latent `z` and a style variable `w`. The
//! prior over `z` is a mixture whose component means and variances come from
//! a network of `w`, and whose weights come from stick-breaking over
//! Kumaraswamy-distributed fractions.

mod cluster;
mod mixture;
mod model;
mod sticks;

pub use cluster::{evaluate_clustering, kmeans_pp_seeds, purity, three_cluster_data, train_clustering, ClusterReport, ClusterTraining};
pub use mixture::{
    gaussian_kl_diag, gaussian_kl_logvar, gaussian_log_density, gumbel_softmax_sample, gumbel_softmax_var,
    responsibilities,
};
pub use model::{BatchSummary, ElboTerms, EncoderHeads, IgmmVae};
pub use sticks::{
    expected_log_rest, kl_kumaraswamy_beta, kl_kumaraswamy_beta_var, kumaraswamy_cdf, kumaraswamy_inverse_cdf,
    kumaraswamy_log_sample, kumaraswamy_sample, log_stick_break, mean_weights, stick_break,
};

use thiserror::Error;

use crate::numerics::NumericsError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IgmmError {
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("every component density underflowed")]
    DegenerateDensity,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Geometric annealing `max(floor, initial·decay^step)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TemperatureSchedule {
    pub initial: f64,
    pub floor: f64,
    pub decay: f64,
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        Self { initial: 1.0, floor: 0.3, decay: 0.999 }
    }
}

impl TemperatureSchedule {
    pub fn at(&self, step: u64) -> f64 {
        (self.initial * self.decay.powf(step as f64)).max(self.floor)
    }
}

/// Encoder/decoder family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    /// Two hidden layers of `hidden` units.
    Dense,
    /// Strided convolutions over a square single-channel image.
    Conv { side: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct IgmmConfig {
    /// Number of mixture components kept by the truncation.
    pub truncation: usize,
    pub latent_dim: usize,
    pub style_dim: usize,
    /// Concentration of the stick prior Beta(1, concentration).
    pub concentration: f64,
    pub temperature: TemperatureSchedule,
    pub obs_dim: usize,
    pub hidden: usize,
    pub architecture: Architecture,
    /// Reparameterized samples per observation.
    pub samples: usize,
    /// Use relaxed one-hot assignments instead of analytic responsibilities.
    pub gumbel_assignments: bool,
}

impl Default for IgmmConfig {
    fn default() -> Self {
        Self {
            truncation: 10,
            latent_dim: 10,
            style_dim: 2,
            concentration: 1.0,
            temperature: TemperatureSchedule::default(),
            obs_dim: 3,
            hidden: 64,
            architecture: Architecture::Dense,
            samples: 1,
            gumbel_assignments: false,
        }
    }
}

impl IgmmConfig {
    pub fn validate(&self) -> Result<(), IgmmError> {
        if self.truncation < 2 {
            return Err(IgmmError::InvalidConfig(format!("truncation {} < 2", self.truncation)));
        }
        self.validate_shapes()
    }

    /// Checks everything except the `truncation ≥ 2` rule, so a single
    /// component can still be built for degenerate comparisons.
    pub fn validate_shapes(&self) -> Result<(), IgmmError> {
        let bad = |m: String| Err(IgmmError::InvalidConfig(m));
        if self.truncation == 0 || self.latent_dim == 0 || self.style_dim == 0 || self.obs_dim == 0 {
            return bad("dimensions must be positive".into());
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return bad(format!("concentration {}", self.concentration));
        }
        let t = self.temperature;
        if !(t.floor > 0.0 && t.initial >= t.floor && t.decay > 0.0 && t.decay <= 1.0) {
            return bad(format!("temperature schedule {t:?}"));
        }
        if self.hidden == 0 || self.samples == 0 {
            return bad("hidden width and sample count must be positive".into());
        }
        if let Architecture::Conv { side } = self.architecture {
            if side != 16 || self.obs_dim != side * side {
                return bad(format!("convolutional path expects 16x16 images, got side {side}, obs_dim {}", self.obs_dim));
            }
        }
        Ok(())
    }
}
