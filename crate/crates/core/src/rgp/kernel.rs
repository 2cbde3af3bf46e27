//! Squared-exponential kernel and its expectations under Gaussian inputs.

use super::RgpError;
use crate::numerics::{Matrix, Var};

/// Kernel hyperparameters as plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelHyper {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
}

impl KernelHyper {
    pub fn new(signal_variance: f64, lengthscales: Vec<f64>) -> Result<Self, RgpError> {
        if !(signal_variance > 0.0) || lengthscales.iter().any(|l| !(*l > 0.0)) {
            return Err(RgpError::ParameterOutOfRange(format!(
                "kernel hyperparameters {signal_variance}, {lengthscales:?}"
            )));
        }
        Ok(Self { signal_variance, lengthscales })
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }
}

/// `σ_f²·exp(−½ Σ (x_d−y_d)²/ℓ_d²)`.
pub fn kernel_eval(x: &[f64], y: &[f64], hyper: &KernelHyper) -> Result<f64, RgpError> {
    if x.len() != hyper.dim() || y.len() != hyper.dim() {
        return Err(RgpError::DimensionMismatch(format!(
            "kernel inputs of length {} and {} with {} lengthscales",
            x.len(),
            y.len(),
            hyper.dim()
        )));
    }
    Ok(kernel_unchecked(x, y, hyper.signal_variance, &hyper.lengthscales))
}

pub(crate) fn kernel_unchecked(x: &[f64], y: &[f64], sf2: f64, ell: &[f64]) -> f64 {
    let q: f64 = x.iter().zip(y).zip(ell).map(|((a, b), l)| ((a - b) / l).powi(2)).sum();
    sf2 * (-0.5 * q).exp()
}

/// Kernel matrix between the rows of `x` and `y`.
pub fn kernel_matrix(x: &Matrix, y: &Matrix, sf2: f64, ell: &[f64]) -> Matrix {
    Matrix::from_fn(x.rows(), y.rows(), |i, j| kernel_unchecked(x.row_slice(i), y.row_slice(j), sf2, ell))
}

/// Kernel matrix on the tape; `sf2` is `1x1`, `ell` is `1xD`.
pub fn kernel_matrix_var<'t>(x: Var<'t>, y: Var<'t>, sf2: Var<'t>, ell: Var<'t>) -> Var<'t> {
    let (n, m) = (x.rows(), y.rows());
    let xs = x.div(ell);
    let ys = y.div(ell);
    let cross = xs.matmul(ys.transpose());
    let xn = xs.square().sum_cols().broadcast(n, m);
    let yn = ys.square().sum_cols().transpose().broadcast(n, m);
    let sq = xn.add(yn).sub(cross.scale(2.0));
    sq.scale(-0.5).exp().mul(sf2)
}

/// Expectations of the kernel under diagonal-Gaussian inputs.
#[derive(Clone, Debug)]
pub struct PsiStats {
    /// `Σ_n ⟨k(x_n, x_n)⟩`.
    pub psi0: f64,
    /// `⟨K_{xZ}⟩`, `N x M`.
    pub psi1: Matrix,
    /// `Σ_n ⟨K_{Zx_n} K_{x_nZ}⟩`, `M x M`.
    pub psi2: Matrix,
}

/// Ψ statistics for inputs with means `mu` and variances `s` (both `N x D`).
pub fn psi_statistics(mu: &Matrix, s: &Matrix, z: &Matrix, hyper: &KernelHyper) -> Result<PsiStats, RgpError> {
    let d = hyper.dim();
    if mu.cols() != d || s.shape() != mu.shape() || z.cols() != d {
        return Err(RgpError::DimensionMismatch("psi statistics input shapes".into()));
    }
    if s.as_slice().iter().any(|v| *v < 0.0) {
        return Err(RgpError::ParameterOutOfRange("negative input variance".into()));
    }
    let sf2 = hyper.signal_variance;
    let ell = &hyper.lengthscales;
    let psi1 = Matrix::from_fn(mu.rows(), z.rows(), |n, m| psi1_entry(mu.row_slice(n), s.row_slice(n), z.row_slice(m), sf2, ell));
    let mut psi2 = Matrix::zeros(z.rows(), z.rows());
    for n in 0..mu.rows() {
        psi2.add_assign(&psi2_point(mu.row_slice(n), s.row_slice(n), z, sf2, ell));
    }
    Ok(PsiStats { psi0: sf2 * mu.rows() as f64, psi1, psi2 })
}

pub(crate) fn psi1_entry(mu: &[f64], s: &[f64], z: &[f64], sf2: f64, ell: &[f64]) -> f64 {
    let mut log = sf2.ln();
    for d in 0..mu.len() {
        let l2 = ell[d] * ell[d];
        let c = l2 + s[d];
        log += 0.5 * (l2 / c).ln() - 0.5 * (mu[d] - z[d]).powi(2) / c;
    }
    log.exp()
}

/// `⟨K_{Zx} K_{xZ}⟩` for a single input belief.
pub(crate) fn psi2_point(mu: &[f64], s: &[f64], z: &Matrix, sf2: f64, ell: &[f64]) -> Matrix {
    let m = z.rows();
    let mut out = Matrix::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let v = psi2_entry(mu, s, z.row_slice(a), z.row_slice(b), sf2, ell);
            out[(a, b)] = v;
            out[(b, a)] = v;
        }
    }
    out
}

fn psi2_entry(mu: &[f64], s: &[f64], za: &[f64], zb: &[f64], sf2: f64, ell: &[f64]) -> f64 {
    let mut log = 2.0 * sf2.ln();
    for d in 0..mu.len() {
        let l2 = ell[d] * ell[d];
        let e = l2 + 2.0 * s[d];
        let zbar = 0.5 * (za[d] + zb[d]);
        log += 0.5 * (l2 / e).ln() - (za[d] - zb[d]).powi(2) / (4.0 * l2) - (mu[d] - zbar).powi(2) / e;
    }
    log.exp()
}

/// `Ψ₁` on the tape. Inputs: means and variances `N x D`, inducing inputs
/// `M x D`, signal variance `1x1`, lengthscales `1xD`.
pub fn psi1_var<'t>(mu: Var<'t>, s: Var<'t>, z: Var<'t>, sf2: Var<'t>, ell: Var<'t>) -> Var<'t> {
    let (muv, sv, zv) = (mu.value(), s.value(), z.value());
    let sf2v = sf2.item();
    let ellv = ell.value().as_slice().to_vec();
    let value = Matrix::from_fn(muv.rows(), zv.rows(), |n, m| {
        psi1_entry(muv.row_slice(n), sv.row_slice(n), zv.row_slice(m), sf2v, &ellv)
    });
    mu.tape().custom(
        &[mu, s, z, sf2, ell],
        value,
        Box::new(move |a| {
            let (mu, s, z) = (&a.inputs[0], &a.inputs[1], &a.inputs[2]);
            let ell = a.inputs[4].as_slice();
            let sf2 = a.inputs[3].item();
            let (n, m, d) = (mu.rows(), z.rows(), mu.cols());
            let mut g_mu = Matrix::zeros(n, d);
            let mut g_s = Matrix::zeros(n, d);
            let mut g_z = Matrix::zeros(m, d);
            let mut g_ell = vec![0.0; d];
            let mut g_sf2 = 0.0;
            for i in 0..n {
                for j in 0..m {
                    let w = a.grad[(i, j)] * a.value[(i, j)];
                    if w == 0.0 {
                        continue;
                    }
                    g_sf2 += w / sf2;
                    for k in 0..d {
                        let l = ell[k];
                        let c = l * l + s[(i, k)];
                        let r = mu[(i, k)] - z[(j, k)];
                        g_mu[(i, k)] -= w * r / c;
                        g_z[(j, k)] += w * r / c;
                        g_s[(i, k)] += w * (-0.5 / c + 0.5 * r * r / (c * c));
                        g_ell[k] += w * (1.0 / l - l / c + r * r * l / (c * c));
                    }
                }
            }
            vec![Some(g_mu), Some(g_s), Some(g_z), Some(Matrix::scalar(g_sf2)), Some(Matrix::row(&g_ell))]
        }),
    )
}

/// `Σ_n Ψ₂ⁿ` on the tape; same inputs as [`psi1_var`].
pub fn psi2_var<'t>(mu: Var<'t>, s: Var<'t>, z: Var<'t>, sf2: Var<'t>, ell: Var<'t>) -> Var<'t> {
    let (muv, sv, zv) = (mu.value(), s.value(), z.value());
    let sf2v = sf2.item();
    let ellv = ell.value().as_slice().to_vec();
    let mut value = Matrix::zeros(zv.rows(), zv.rows());
    for n in 0..muv.rows() {
        value.add_assign(&psi2_point(muv.row_slice(n), sv.row_slice(n), &zv, sf2v, &ellv));
    }
    mu.tape().custom(
        &[mu, s, z, sf2, ell],
        value,
        Box::new(move |a| {
            let (mu, s, z) = (&a.inputs[0], &a.inputs[1], &a.inputs[2]);
            let ell = a.inputs[4].as_slice();
            let sf2 = a.inputs[3].item();
            let (n, m, d) = (mu.rows(), z.rows(), mu.cols());
            let mut g_mu = Matrix::zeros(n, d);
            let mut g_s = Matrix::zeros(n, d);
            let mut g_z = Matrix::zeros(m, d);
            let mut g_ell = vec![0.0; d];
            let mut g_sf2 = 0.0;
            let l2: Vec<f64> = ell.iter().map(|l| l * l).collect();
            for i in 0..n {
                let mi = mu.row_slice(i);
                let si = s.row_slice(i);
                let e: Vec<f64> = (0..d).map(|k| l2[k] + 2.0 * si[k]).collect();
                for p in 0..m {
                    for q in 0..m {
                        let g = a.grad[(p, q)];
                        if g == 0.0 {
                            continue;
                        }
                        let (zp, zq) = (z.row_slice(p), z.row_slice(q));
                        let t = psi2_entry(mi, si, zp, zq, sf2, ell);
                        let w = g * t;
                        if w == 0.0 {
                            continue;
                        }
                        g_sf2 += 2.0 * w / sf2;
                        for k in 0..d {
                            let dz = zp[k] - zq[k];
                            let r = mi[k] - 0.5 * (zp[k] + zq[k]);
                            let ek = e[k];
                            g_mu[(i, k)] -= w * 2.0 * r / ek;
                            g_s[(i, k)] += w * (-1.0 / ek + 2.0 * r * r / (ek * ek));
                            let common = r / ek;
                            g_z[(p, k)] += w * (common - dz / (2.0 * l2[k]));
                            g_z[(q, k)] += w * (common + dz / (2.0 * l2[k]));
                            let l = ell[k];
                            g_ell[k] += w * (1.0 / l - l / ek + dz * dz / (2.0 * l2[k] * l) + 2.0 * r * r * l / (ek * ek));
                        }
                    }
                }
            }
            vec![Some(g_mu), Some(g_s), Some(g_z), Some(Matrix::scalar(g_sf2)), Some(Matrix::row(&g_ell))]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::check_gradients;
    use crate::numerics::{RngStream, Tape};

    #[test]
    fn kernel_examples() {
        let h = KernelHyper::new(1.0, vec![1.0, 1.0]).unwrap();
        assert_eq!(kernel_eval(&[0.3, 0.2], &[0.3, 0.2], &h).unwrap(), 1.0);
        assert!((kernel_eval(&[0.0, 0.0], &[1.0, 1.0], &h).unwrap() - (-1f64).exp()).abs() < 1e-15);
        assert!(kernel_eval(&[0.0], &[1.0, 1.0], &h).is_err());
    }

    #[test]
    fn kernel_matrix_var_matches_values() {
        let mut rng = RngStream::new(1);
        let x = Matrix::from_fn(4, 2, |_, _| rng.normal());
        let y = Matrix::from_fn(3, 2, |_, _| rng.normal());
        let tape = Tape::new();
        let k = kernel_matrix_var(
            tape.constant(x.clone()),
            tape.constant(y.clone()),
            tape.scalar(1.7),
            tape.constant(Matrix::row(&[0.8, 1.3])),
        );
        assert!(k.value().max_abs_diff(&kernel_matrix(&x, &y, 1.7, &[0.8, 1.3])) < 1e-13);
    }

    #[test]
    fn delta_beliefs_reduce_to_kernel() {
        let mut rng = RngStream::new(2);
        let mu = Matrix::from_fn(3, 2, |_, _| rng.normal());
        let z = Matrix::from_fn(4, 2, |_, _| rng.normal());
        let h = KernelHyper::new(1.3, vec![0.9, 1.4]).unwrap();
        let ps = psi_statistics(&mu, &Matrix::zeros(3, 2), &z, &h).unwrap();
        let k = kernel_matrix(&mu, &z, 1.3, &h.lengthscales);
        assert!(ps.psi1.max_abs_diff(&k) < 1e-13);
        assert!(ps.psi2.max_abs_diff(&k.t_matmul(&k)) < 1e-12);
        assert!((ps.psi0 - 3.0 * 1.3).abs() < 1e-15);
    }

    #[test]
    fn psi_gradients() {
        let mut rng = RngStream::new(3);
        let mu = Matrix::from_fn(3, 2, |_, _| rng.normal());
        let s = Matrix::from_fn(3, 2, |_, _| 0.1 + rng.uniform());
        let z = Matrix::from_fn(4, 2, |_, _| rng.normal());
        let w1 = Matrix::from_fn(3, 4, |_, _| rng.normal());
        let w2 = Matrix::from_fn(4, 4, |_, _| rng.normal());
        let report = check_gradients(
            &[mu, s, z, Matrix::scalar(1.4), Matrix::row(&[0.7, 1.2])],
            1e-6,
            |t, v| {
                let p1 = psi1_var(v[0], v[1], v[2], v[3], v[4]);
                let p2 = psi2_var(v[0], v[1], v[2], v[3], v[4]);
                p1.mul(t.constant(w1.clone())).sum().add(p2.mul(t.constant(w2.clone())).sum())
            },
        );
        assert!(report.passes(1e-6), "{report:?}");
    }
}
