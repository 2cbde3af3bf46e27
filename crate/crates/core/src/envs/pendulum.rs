use std::collections::BTreeMap;
use std::f64::consts::PI;

use super::render::render_dots;
use super::{check_action, EnvError, EnvSpec, Environment, ObservationKind, StepResult};
use crate::numerics::RngStream;

pub const PENDULUM_CAP: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PendulumParams {
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
    pub dt: f64,
    pub max_speed: f64,
    pub max_torque: f64,
    /// Linear velocity damping; zero for the standard task.
    pub damping: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self { gravity: 10.0, mass: 1.0, length: 1.0, dt: 0.05, max_speed: 8.0, max_torque: 2.0, damping: 0.0 }
    }
}

/// Angle from upright and angular velocity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PendulumState {
    pub theta: f64,
    pub theta_dot: f64,
}

fn wrap(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

pub fn pendulum_reward(state: PendulumState, torque: f64) -> f64 {
    -(wrap(state.theta).powi(2) + 0.1 * state.theta_dot.powi(2) + 0.001 * torque.powi(2))
}

/// Semi-implicit Euler step. Returns the next state and the reward of the
/// current state and (clipped) torque.
pub fn pendulum_step(state: PendulumState, torque: f64, p: &PendulumParams) -> (PendulumState, f64) {
    let u = torque.clamp(-p.max_torque, p.max_torque);
    let reward = pendulum_reward(state, u);
    let acc = 3.0 * p.gravity / (2.0 * p.length) * state.theta.sin() + 3.0 / (p.mass * p.length * p.length) * u
        - p.damping * state.theta_dot;
    let theta_dot = (state.theta_dot + acc * p.dt).clamp(-p.max_speed, p.max_speed);
    let theta = state.theta + theta_dot * p.dt;
    (PendulumState { theta, theta_dot }, reward)
}

/// Conserved quantity of the passive, undamped dynamics (per unit inertia).
pub fn pendulum_energy(state: PendulumState, p: &PendulumParams) -> f64 {
    0.5 * state.theta_dot.powi(2) + 3.0 * p.gravity / (2.0 * p.length) * state.theta.cos()
}

#[derive(Clone, Debug)]
pub struct Pendulum {
    pub params: PendulumParams,
    spec: EnvSpec,
    state: Option<PendulumState>,
    steps: usize,
}

impl Pendulum {
    pub fn new(params: PendulumParams, image: bool) -> Self {
        let observation = if image { ObservationKind::Image } else { ObservationKind::Vector(3) };
        let spec = EnvSpec {
            observation,
            action_low: vec![-params.max_torque],
            action_high: vec![params.max_torque],
            episode_cap: PENDULUM_CAP,
        };
        Self { params, spec, state: None, steps: 0 }
    }

    pub fn state(&self) -> Option<PendulumState> {
        self.state
    }

    pub fn set_state(&mut self, state: PendulumState) {
        self.state = Some(state);
        self.steps = 0;
    }

    pub fn observe(&self, s: PendulumState) -> Vec<f64> {
        match self.spec.observation {
            ObservationKind::Vector(_) => vec![s.theta.cos(), s.theta.sin(), s.theta_dot],
            ObservationKind::Image => {
                let dots: Vec<([f64; 2], f64)> = (1..=6)
                    .map(|k| {
                        let r = 0.45 * k as f64 / 6.0;
                        ([0.5 + r * s.theta.sin(), 0.5 - r * s.theta.cos()], 1.0)
                    })
                    .collect();
                render_dots(&dots)
            }
        }
    }
}

impl Environment for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut RngStream) -> Vec<f64> {
        let s = PendulumState { theta: PI * (2.0 * rng.uniform() - 1.0), theta_dot: 2.0 * rng.uniform() - 1.0 };
        self.set_state(s);
        self.observe(s)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError> {
        check_action(&self.spec, action)?;
        let s = self.state.ok_or(EnvError::NotReset)?;
        let (next, reward) = pendulum_step(s, action[0], &self.params);
        self.state = Some(next);
        self.steps += 1;
        let mut info = BTreeMap::new();
        info.insert("theta".into(), next.theta);
        info.insert("theta_dot".into(), next.theta_dot);
        Ok(StepResult { observation: self.observe(next), reward, done: self.steps >= self.spec.episode_cap, info })
    }
}
