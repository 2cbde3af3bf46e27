use std::collections::BTreeMap;

use super::render::render_dots;
use super::{check_action, EnvError, EnvSpec, Environment, ObservationKind, StepResult};
use crate::numerics::RngStream;

pub const DOT_CAP: usize = 100;
/// Displacement per unit action.
pub const DOT_SPEED: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DotState {
    pub agent: [f64; 2],
    pub target: [f64; 2],
}

/// Move a dot towards a fixed target inside the unit square; observations
/// are renders of both dots.
#[derive(Clone, Debug)]
pub struct DotChaser {
    spec: EnvSpec,
    state: Option<DotState>,
    steps: usize,
}

impl Default for DotChaser {
    fn default() -> Self {
        Self::new()
    }
}

impl DotChaser {
    pub fn new() -> Self {
        let spec = EnvSpec {
            observation: ObservationKind::Image,
            action_low: vec![-1.0, -1.0],
            action_high: vec![1.0, 1.0],
            episode_cap: DOT_CAP,
        };
        Self { spec, state: None, steps: 0 }
    }

    pub fn state(&self) -> Option<DotState> {
        self.state
    }

    pub fn set_state(&mut self, s: DotState) {
        self.state = Some(s);
        self.steps = 0;
    }

    pub fn observe(s: &DotState) -> Vec<f64> {
        render_dots(&[(s.target, 0.5), (s.agent, 1.0)])
    }

    fn distance(s: &DotState) -> f64 {
        ((s.agent[0] - s.target[0]).powi(2) + (s.agent[1] - s.target[1]).powi(2)).sqrt()
    }
}

impl Environment for DotChaser {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut RngStream) -> Vec<f64> {
        let s = DotState { agent: [rng.uniform(), rng.uniform()], target: [rng.uniform(), rng.uniform()] };
        self.set_state(s);
        Self::observe(&s)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError> {
        check_action(&self.spec, action)?;
        let mut s = self.state.ok_or(EnvError::NotReset)?;
        for k in 0..2 {
            s.agent[k] = (s.agent[k] + action[k].clamp(-1.0, 1.0) * DOT_SPEED).clamp(0.0, 1.0);
        }
        self.state = Some(s);
        self.steps += 1;
        let d = Self::distance(&s);
        let mut info = BTreeMap::new();
        info.insert("distance".into(), d);
        Ok(StepResult { observation: Self::observe(&s), reward: -d, done: self.steps >= self.spec.episode_cap, info })
    }
}
