use crate::numerics::RngStream;

/// `0.8 + (z + 0.2)·(1 − 5 / (1 + e^{−2z}))`.
pub fn kink_fn(z: f64) -> f64 {
    0.8 + (z + 0.2) * (1.0 - 5.0 / (1.0 + (-2.0 * z).exp()))
}

/// One step of the kink map with additive Gaussian noise.
pub fn kink_step(z: f64, rng: &mut RngStream, noise_std: f64) -> f64 {
    let f = kink_fn(z);
    if noise_std > 0.0 {
        f + noise_std * rng.normal()
    } else {
        f
    }
}
