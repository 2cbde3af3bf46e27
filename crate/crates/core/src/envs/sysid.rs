use super::kink::kink_step;
use super::pendulum::{pendulum_step, PendulumParams, PendulumState};
use super::EnvError;
use crate::numerics::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum System {
    Kink,
    /// Unactuated pendulum, observed as `(θ, θ̇)`.
    PendulumPassive,
}

/// One observed sequence split in time into a training prefix and a
/// held-out suffix.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceDataset {
    pub dim: usize,
    pub train: Vec<Vec<f64>>,
    pub test: Vec<Vec<f64>>,
}

impl SequenceDataset {
    /// Entire sequence, train then test.
    pub fn full(&self) -> Vec<Vec<f64>> {
        self.train.iter().chain(&self.test).cloned().collect()
    }
}

/// Simulate `length` steps and split them 80/20.
pub fn make_sysid_dataset(
    system: System,
    length: usize,
    noise_std: f64,
    lag: usize,
    rng: &mut RngStream,
) -> Result<SequenceDataset, EnvError> {
    if length <= lag {
        return Err(EnvError::InvalidParameter(format!("length {length} must exceed the lag {lag}")));
    }
    if !(noise_std >= 0.0) {
        return Err(EnvError::InvalidParameter(format!("noise_std {noise_std}")));
    }
    let seq: Vec<Vec<f64>> = match system {
        System::Kink => {
            let mut z = -2.0 + 3.0 * rng.uniform();
            (0..length)
                .map(|_| {
                    let out = vec![z];
                    z = kink_step(z, rng, noise_std);
                    out
                })
                .collect()
        }
        System::PendulumPassive => {
            let p = PendulumParams::default();
            let mut s = PendulumState { theta: std::f64::consts::PI * (0.5 + rng.uniform()), theta_dot: 0.0 };
            (0..length)
                .map(|_| {
                    let out = vec![s.theta + noise_std * rng.normal(), s.theta_dot + noise_std * rng.normal()];
                    s = pendulum_step(s, 0.0, &p).0;
                    out
                })
                .collect()
        }
    };
    let n_train = length * 4 / 5;
    let dim = seq[0].len();
    let (train, test) = seq.split_at(n_train);
    Ok(SequenceDataset { dim, train: train.to_vec(), test: test.to_vec() })
}
