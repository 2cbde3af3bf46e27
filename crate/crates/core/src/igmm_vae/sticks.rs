//! Stick-breaking weights and the Kumaraswamy stick posterior.

use std::f64::consts::PI;

use super::IgmmError;
use crate::numerics::special::{digamma, trigamma, EULER_GAMMA};
use crate::numerics::{concat_cols, Matrix, RngStream, Var};

/// Mixture weights from stick fractions; the last weight takes the remainder.
pub fn stick_break(nu: &[f64]) -> Result<Vec<f64>, IgmmError> {
    if let Some(v) = nu.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
        return Err(IgmmError::OutOfRange(format!("stick fraction {v} outside (0, 1)")));
    }
    let mut theta = Vec::with_capacity(nu.len() + 1);
    let mut rest = 1.0;
    for &v in nu {
        theta.push(v * rest);
        rest *= 1.0 - v;
    }
    theta.push(rest);
    Ok(theta)
}

fn check_ab(a: f64, b: f64) -> Result<(), IgmmError> {
    if a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() {
        Ok(())
    } else {
        Err(IgmmError::ParameterOutOfRange(format!("kumaraswamy parameters a={a}, b={b}")))
    }
}

/// Inverse-CDF draw `(1 − (1−u)^{1/b})^{1/a}` for a given uniform `u`.
pub fn kumaraswamy_inverse_cdf(a: f64, b: f64, u: f64) -> f64 {
    (1.0 - (1.0 - u).powf(1.0 / b)).powf(1.0 / a)
}

pub fn kumaraswamy_sample(a: f64, b: f64, rng: &mut RngStream) -> Result<f64, IgmmError> {
    check_ab(a, b)?;
    Ok(kumaraswamy_inverse_cdf(a, b, rng.uniform()))
}

pub fn kumaraswamy_cdf(a: f64, b: f64, x: f64) -> f64 {
    1.0 - (1.0 - x.powf(a)).powf(b)
}

/// Log-space draw given `l = ln(1−u)`: returns `(ln ν, ln(1−ν))` and their
/// partials `[∂/∂a, ∂/∂b]`.
#[derive(Clone, Copy, Debug)]
struct LogDraw {
    ln_nu: f64,
    ln_rest: f64,
    d_ln_nu: [f64; 2],
    d_ln_rest: [f64; 2],
}

fn log_draw(a: f64, b: f64, l: f64) -> LogDraw {
    let c = l / b;
    // ln(1 − e^c), accurate at both ends.
    let ln_y = if c < -std::f64::consts::LN_2 { (-c.exp()).ln_1p() } else { (-c.exp_m1()).ln() };
    let ln_nu = ln_y / a;
    let dc_db = -c / b;
    let dy_dc = if c == 0.0 { 0.0 } else { -1.0 / (-c).exp_m1() };
    let d_ln_nu = [-ln_y / (a * a), dy_dc * dc_db / a];
    let (ln_rest, d_ln_rest) = if ln_nu == 0.0 {
        // ν rounds to one; use ln(1−ν) ≈ c − ln a.
        (c - a.ln(), [-1.0 / a, dc_db])
    } else {
        let r = (-ln_nu.exp_m1()).ln();
        let k = -1.0 / (-ln_nu).exp_m1();
        (r, [k * d_ln_nu[0], k * d_ln_nu[1]])
    };
    LogDraw { ln_nu, ln_rest, d_ln_nu, d_ln_rest }
}

/// Reparameterized Kumaraswamy draws in log space.
///
/// `a`, `b` and `u` share a shape; returns `(ln ν, ln(1−ν))`.
pub fn kumaraswamy_log_sample<'t>(a: Var<'t>, b: Var<'t>, u: &Matrix) -> (Var<'t>, Var<'t>) {
    assert_eq!(a.shape(), u.shape(), "kumaraswamy shapes");
    assert_eq!(b.shape(), u.shape(), "kumaraswamy shapes");
    let (av, bv) = (a.value(), b.value());
    let draws: Vec<LogDraw> = (0..u.len())
        .map(|i| log_draw(av.as_slice()[i], bv.as_slice()[i], (-u.as_slice()[i]).ln_1p()))
        .collect();
    let (r, c) = u.shape();
    let pick = |f: fn(&LogDraw) -> f64| Matrix::from_vec(r, c, draws.iter().map(f).collect()).expect("shape");
    let ln_nu_v = pick(|d| d.ln_nu);
    let ln_rest_v = pick(|d| d.ln_rest);
    let da = pick(|d| d.d_ln_nu[0]);
    let db = pick(|d| d.d_ln_nu[1]);
    let ra = pick(|d| d.d_ln_rest[0]);
    let rb = pick(|d| d.d_ln_rest[1]);
    let tape = a.tape();
    let ln_nu = tape.custom(
        &[a, b],
        ln_nu_v,
        Box::new(move |x| vec![Some(x.grad.hadamard(&da)), Some(x.grad.hadamard(&db))]),
    );
    let ln_rest = tape.custom(
        &[a, b],
        ln_rest_v,
        Box::new(move |x| vec![Some(x.grad.hadamard(&ra)), Some(x.grad.hadamard(&rb))]),
    );
    (ln_nu, ln_rest)
}

/// Log mixture weights `N x K` from log stick fractions `N x (K−1)`.
pub fn log_stick_break<'t>(ln_nu: Var<'t>, ln_rest: Var<'t>) -> Var<'t> {
    let (n, k1) = ln_nu.shape();
    let tape = ln_nu.tape();
    let k = k1 + 1;
    let head = concat_cols(&[ln_nu, tape.constant(Matrix::zeros(n, 1))]);
    let prefix = tape.constant(Matrix::from_fn(k1, k, |j, i| if j < i { 1.0 } else { 0.0 }));
    head.add(ln_rest.matmul(prefix))
}

const QUAD_STEP: f64 = 0.2;
const QUAD_HALF_WIDTH: i32 = 20;

/// `E[ln(1−ν)]` under Kumaraswamy(a, b) with partials in `a` and `b`.
///
/// Double-exponential quadrature over the uniform variable of the inverse
/// CDF. The nodes are fixed, so the partials are exact derivatives of the
/// quadrature sum.
pub fn expected_log_rest(a: f64, b: f64) -> (f64, f64, f64) {
    let (mut value, mut da, mut db) = (0.0, 0.0, 0.0);
    for k in -QUAD_HALF_WIDTH..=QUAD_HALF_WIDTH {
        let t = k as f64 * QUAD_STEP;
        let x = 0.5 * PI * t.sinh();
        let l = -crate::numerics::softplus(2.0 * x);
        let sech = 1.0 / x.cosh();
        let w = QUAD_STEP * 0.5 * PI * t.cosh() * 0.5 * sech * sech;
        if w == 0.0 {
            continue;
        }
        let d = log_draw(a, b, l);
        value += w * d.ln_rest;
        da += w * d.d_ln_rest[0];
        db += w * d.d_ln_rest[1];
    }
    (value, da, db)
}

fn kl_parts(a: f64, b: f64, beta: f64) -> (f64, f64, f64) {
    let (e, e_a, e_b) = expected_log_rest(a, b);
    let bracket = -EULER_GAMMA - digamma(b) - 1.0 / b;
    let value = (a - 1.0) / a * bracket + (a * b).ln() - beta.ln() - (b - 1.0) / b - (beta - 1.0) * e;
    let d_a = bracket / (a * a) + 1.0 / a - (beta - 1.0) * e_a;
    let d_b = (a - 1.0) / a * (1.0 / (b * b) - trigamma(b)) + 1.0 / b - 1.0 / (b * b) - (beta - 1.0) * e_b;
    (value, d_a, d_b)
}

/// `KL(Kumaraswamy(a, b) ‖ Beta(1, beta))`.
pub fn kl_kumaraswamy_beta(a: f64, b: f64, beta: f64) -> Result<f64, IgmmError> {
    check_ab(a, b)?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(IgmmError::ParameterOutOfRange(format!("beta prior parameter {beta}")));
    }
    Ok(kl_parts(a, b, beta).0)
}

/// Element-wise Kumaraswamy–Beta KL on the tape.
pub fn kl_kumaraswamy_beta_var<'t>(a: Var<'t>, b: Var<'t>, beta: f64) -> Var<'t> {
    let (av, bv) = (a.value(), b.value());
    let (r, c) = av.shape();
    let parts: Vec<(f64, f64, f64)> =
        av.as_slice().iter().zip(bv.as_slice()).map(|(&a, &b)| kl_parts(a, b, beta)).collect();
    let mk = |f: fn(&(f64, f64, f64)) -> f64| Matrix::from_vec(r, c, parts.iter().map(f).collect()).expect("shape");
    let value = mk(|p| p.0);
    let da = mk(|p| p.1);
    let db = mk(|p| p.2);
    a.tape().custom(&[a, b], value, Box::new(move |x| vec![Some(x.grad.hadamard(&da)), Some(x.grad.hadamard(&db))]))
}

/// Deterministic summary of the stick posterior: weights at the Kumaraswamy means.
pub fn mean_weights(a: &[f64], b: &[f64]) -> Vec<f64> {
    let nu: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(&a, &b)| {
            let ln_beta = statrs::function::gamma::ln_gamma(1.0 + 1.0 / a) + statrs::function::gamma::ln_gamma(b)
                - statrs::function::gamma::ln_gamma(1.0 + 1.0 / a + b);
            (b * ln_beta.exp()).clamp(1e-12, 1.0 - 1e-12)
        })
        .collect();
    stick_break(&nu).expect("clamped fractions")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::check_gradients;
    use crate::numerics::Tape;

    fn log_weights_from_draw(a: &[f64], b: &[f64], u: &[f64]) -> Vec<f64> {
        let tape = Tape::new();
        let av = tape.constant(Matrix::row(a));
        let bv = tape.constant(Matrix::row(b));
        let (ln_nu, ln_rest) = kumaraswamy_log_sample(av, bv, &Matrix::row(u));
        log_stick_break(ln_nu, ln_rest).value().as_slice().to_vec()
    }

    #[test]
    fn stick_examples() {
        assert_eq!(stick_break(&[0.5, 0.5]).unwrap(), vec![0.5, 0.25, 0.25]);
        let t = stick_break(&[1.0 - 1e-12, 0.3]).unwrap();
        assert!((t[0] - 1.0).abs() < 1e-11);
        assert!(stick_break(&[0.0]).is_err());
        assert!(stick_break(&[1.0]).is_err());
    }

    #[test]
    fn inverse_cdf_examples() {
        assert!((kumaraswamy_inverse_cdf(1.0, 1.0, 0.3) - 0.3).abs() < 1e-15);
        assert!((kumaraswamy_inverse_cdf(2.0, 1.0, 0.25) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn log_sample_matches_direct() {
        for &(a, b, u) in &[(0.7, 2.0, 0.3), (3.0, 0.2, 0.9), (1.0, 1.0, 0.5)] {
            let tape = Tape::new();
            let (ln_nu, ln_rest) = kumaraswamy_log_sample(
                tape.constant(Matrix::scalar(a)),
                tape.constant(Matrix::scalar(b)),
                &Matrix::scalar(u),
            );
            let nu = kumaraswamy_inverse_cdf(a, b, u);
            assert!((ln_nu.item() - nu.ln()).abs() < 1e-12);
            assert!((ln_rest.item() - (1.0 - nu).ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn log_sample_gradients() {
        let a = Matrix::row(&[0.5, 1.3, 4.0]);
        let b = Matrix::row(&[2.0, 0.4, 1.1]);
        let u = Matrix::row(&[0.2, 0.7, 0.95]);
        let report = check_gradients(&[a, b], 1e-6, |_, v| {
            let (x, y) = kumaraswamy_log_sample(v[0], v[1], &u);
            x.add(y.scale(0.7)).sum()
        });
        assert!(report.passes(1e-6), "{report:?}");
    }

    #[test]
    fn log_stick_break_matches_direct() {
        let a = [0.9, 2.0, 1.5];
        let b = [1.2, 0.8, 3.0];
        let u = [0.3, 0.6, 0.1];
        let lw = log_weights_from_draw(&a, &b, &u);
        let nu: Vec<f64> = (0..3).map(|i| kumaraswamy_inverse_cdf(a[i], b[i], u[i])).collect();
        let theta = stick_break(&nu).unwrap();
        for (l, t) in lw.iter().zip(&theta) {
            assert!((l.exp() - t).abs() < 1e-12);
        }
    }

    #[test]
    fn expected_log_rest_beta_identity() {
        // Kumaraswamy(1, b) is Beta(1, b), where E[ln(1−ν)] = −1/b.
        for &b in &[0.3, 1.0, 2.0, 7.5] {
            let (e, _, _) = expected_log_rest(1.0, b);
            assert!((e + 1.0 / b).abs() < 1e-9, "b={b}: {e}");
        }
    }

    #[test]
    fn kl_identity_is_zero() {
        assert!(kl_kumaraswamy_beta(1.0, 1.0, 1.0).unwrap().abs() < 1e-12);
        assert!(kl_kumaraswamy_beta(1.0, 3.0, 3.0).unwrap().abs() < 1e-9);
        assert!(kl_kumaraswamy_beta(-1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn kl_gradients() {
        let a = Matrix::row(&[0.5, 1.3, 4.0, 0.2]);
        let b = Matrix::row(&[2.0, 0.4, 1.1, 9.0]);
        let report = check_gradients(&[a, b], 1e-6, |_, v| kl_kumaraswamy_beta_var(v[0], v[1], 2.5).sum());
        assert!(report.passes(1e-6), "{report:?}");
    }

    #[test]
    fn mean_weights_sum_to_one() {
        let w = mean_weights(&[1.0, 2.0], &[1.0, 3.0]);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // Kumaraswamy(1,1) has mean 1/2.
        assert!((w[0] - 0.5).abs() < 1e-12);
    }
}
