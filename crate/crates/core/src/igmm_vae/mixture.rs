//! Mixture assignments, Gumbel-Softmax relaxation and Gaussian KLs.

use std::f64::consts::PI;

use super::IgmmError;
use crate::numerics::{logsumexp, Matrix, RngStream, Var};

/// `KL(N(mean_q, var_q) ‖ N(mean_p, var_p))` for diagonal Gaussians, summed over dimensions.
pub fn gaussian_kl_diag(mean_q: &[f64], var_q: &[f64], mean_p: &[f64], var_p: &[f64]) -> Result<f64, IgmmError> {
    let n = mean_q.len();
    if var_q.len() != n || mean_p.len() != n || var_p.len() != n {
        return Err(IgmmError::DimensionMismatch("gaussian_kl_diag argument lengths differ".into()));
    }
    if let Some(v) = var_q.iter().chain(var_p).find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(IgmmError::ParameterOutOfRange(format!("variance {v}")));
    }
    Ok((0..n)
        .map(|d| {
            let diff = mean_q[d] - mean_p[d];
            0.5 * ((var_p[d] / var_q[d]).ln() + (var_q[d] + diff * diff) / var_p[d] - 1.0)
        })
        .sum())
}

/// Diagonal-Gaussian KL on the tape from log-variances, summed over columns: `N x D -> N x 1`.
pub fn gaussian_kl_logvar<'t>(mean_q: Var<'t>, logvar_q: Var<'t>, mean_p: Var<'t>, logvar_p: Var<'t>) -> Var<'t> {
    let diff = mean_q.sub(mean_p);
    let ratio = logvar_q.exp().add(diff.square()).div(logvar_p.exp());
    logvar_p.sub(logvar_q).add(ratio).add_scalar(-1.0).scale(0.5).sum_cols()
}

/// Diagonal-Gaussian log density from log-variance, summed over columns: `N x D -> N x 1`.
pub fn gaussian_log_density<'t>(x: Var<'t>, mean: Var<'t>, logvar: Var<'t>) -> Var<'t> {
    let d = x.cols() as f64;
    let quad = x.sub(mean).square().div(logvar.exp());
    quad.add(logvar).sum_cols().scale(-0.5).add_scalar(-0.5 * d * (2.0 * PI).ln())
}

/// Posterior assignment probabilities for one latent point.
///
/// `means` and `variances` are `K x D`, one row per component.
pub fn responsibilities(z: &[f64], means: &Matrix, variances: &Matrix, theta: &[f64]) -> Result<Vec<f64>, IgmmError> {
    let k = theta.len();
    if means.shape() != (k, z.len()) || variances.shape() != (k, z.len()) {
        return Err(IgmmError::DimensionMismatch(format!(
            "{} components of dimension {} against means {}x{}",
            k,
            z.len(),
            means.rows(),
            means.cols()
        )));
    }
    let logp: Vec<f64> = (0..k)
        .map(|j| {
            let dens: f64 = (0..z.len())
                .map(|d| {
                    let v = variances[(j, d)];
                    let e = z[d] - means[(j, d)];
                    -0.5 * ((2.0 * PI * v).ln() + e * e / v)
                })
                .sum();
            theta[j].ln() + dens
        })
        .collect();
    let lse = logsumexp(&logp);
    if !lse.is_finite() {
        return Err(IgmmError::DegenerateDensity);
    }
    Ok(logp.iter().map(|l| (l - lse).exp()).collect())
}

/// Relaxed one-hot draw `softmax((logits + g)/temperature)` with Gumbel noise `g`.
pub fn gumbel_softmax_sample(logits: &[f64], temperature: f64, rng: &mut RngStream) -> Result<Vec<f64>, IgmmError> {
    if !(temperature > 0.0) {
        return Err(IgmmError::ParameterOutOfRange(format!("temperature {temperature}")));
    }
    let y: Vec<f64> = logits.iter().map(|l| (l + rng.gumbel()) / temperature).collect();
    let lse = logsumexp(&y);
    Ok(y.iter().map(|v| (v - lse).exp()).collect())
}

/// Tape version of [`gumbel_softmax_sample`] with externally drawn noise.
pub fn gumbel_softmax_var<'t>(logits: Var<'t>, noise: &Matrix, temperature: f64) -> Var<'t> {
    let g = logits.tape().constant(noise.clone());
    logits.add(g).scale(1.0 / temperature).row_softmax()
}
