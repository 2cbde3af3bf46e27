//! Small native environments and synthetic dynamical systems.

mod dotchaser;
mod kink;
mod pendulum;
mod render;
mod sysid;

pub use dotchaser::{DotChaser, DotState, DOT_CAP, DOT_SPEED};
pub use kink::{kink_fn, kink_step};
pub use pendulum::{pendulum_energy, pendulum_reward, pendulum_step, Pendulum, PendulumParams, PendulumState, PENDULUM_CAP};
pub use render::{render_dots, IMAGE_SIDE};
pub use sysid::{make_sysid_dataset, SequenceDataset, System};

use std::collections::BTreeMap;
use std::str::FromStr;

use thiserror::Error;

use crate::numerics::RngStream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("expected an action of length {expected}, got {got}")]
    ActionDimension { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown environment {0:?}")]
    UnknownEnvironment(String),
    #[error("step called before reset")]
    NotReset,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObservationKind {
    Vector(usize),
    /// Grayscale `IMAGE_SIDE x IMAGE_SIDE` render, flattened row-major.
    Image,
}

impl ObservationKind {
    pub fn dim(self) -> usize {
        match self {
            ObservationKind::Vector(d) => d,
            ObservationKind::Image => IMAGE_SIDE * IMAGE_SIDE,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub observation: ObservationKind,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub episode_cap: usize,
}

impl EnvSpec {
    pub fn action_dim(&self) -> usize {
        self.action_low.len()
    }

    /// Map a point of `[-1, 1]^d` onto the action box.
    pub fn scale_action(&self, unit: &[f64]) -> Vec<f64> {
        unit.iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(u, (lo, hi))| lo + (u.clamp(-1.0, 1.0) + 1.0) * 0.5 * (hi - lo))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: BTreeMap<String, f64>,
}

/// Uniform reset/step interface.
pub trait Environment {
    fn spec(&self) -> &EnvSpec;
    fn reset(&mut self, rng: &mut RngStream) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvKind {
    Pendulum,
    PendulumImage,
    DotChaser,
}

impl FromStr for EnvKind {
    type Err = EnvError;
    fn from_str(s: &str) -> Result<Self, EnvError> {
        match s {
            "pendulum" => Ok(EnvKind::Pendulum),
            "pendulum_image" => Ok(EnvKind::PendulumImage),
            "dotchaser" => Ok(EnvKind::DotChaser),
            _ => Err(EnvError::UnknownEnvironment(s.into())),
        }
    }
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Pendulum => "pendulum",
            EnvKind::PendulumImage => "pendulum_image",
            EnvKind::DotChaser => "dotchaser",
        }
    }

    pub fn make(self) -> Box<dyn Environment> {
        match self {
            EnvKind::Pendulum => Box::new(Pendulum::new(PendulumParams::default(), false)),
            EnvKind::PendulumImage => Box::new(Pendulum::new(PendulumParams::default(), true)),
            EnvKind::DotChaser => Box::new(DotChaser::new()),
        }
    }
}

pub(crate) fn check_action(spec: &EnvSpec, action: &[f64]) -> Result<(), EnvError> {
    if action.len() != spec.action_dim() {
        return Err(EnvError::ActionDimension { expected: spec.action_dim(), got: action.len() });
    }
    Ok(())
}
