//! A sparse GP mapping with shared inducing inputs and one variational
//! inducing distribution per output dimension.

use std::sync::atomic::{AtomicU64, Ordering};

use super::kernel::{kernel_matrix, kernel_matrix_var, psi1_entry, psi1_var, psi2_point, psi2_var, KernelHyper};
use super::RgpError;
use crate::numerics::{cholesky_psd, cholesky_solve, solve_lower, Bound, Matrix, ParamId, ParamStore, RngStream, Var};

static VARIANCE_CLAMPS: AtomicU64 = AtomicU64::new(0);

/// Smallest predictive variance returned by [`LayerCache::predict_moments`].
pub const MIN_VARIANCE: f64 = 1e-12;

/// Number of times a predictive variance has been clamped at
/// [`MIN_VARIANCE`] in this process.
pub fn variance_clamp_count() -> u64 {
    VARIANCE_CLAMPS.load(Ordering::Relaxed)
}

/// Parameter handles of one GP mapping.
///
/// The Cholesky factors of the per-output inducing covariances are stored
/// side by side in one `M x (M·D_out)` matrix. Diagonal entries are kept as
/// logs.
#[derive(Clone, Debug)]
pub struct GpLayer {
    pub inducing: ParamId,
    pub mean: ParamId,
    pub chol: ParamId,
    pub log_signal: ParamId,
    pub log_lengthscale: ParamId,
    pub log_noise: ParamId,
    pub inputs: usize,
    pub outputs: usize,
    pub num_inducing: usize,
    pub diagonal: bool,
    pub jitter: f64,
}

/// Tape view of a [`GpLayer`].
#[derive(Clone, Copy)]
pub struct GpVars<'t> {
    pub inducing: Var<'t>,
    pub mean: Var<'t>,
    /// `[L_1 … L_D]`, each lower-triangular with positive diagonal.
    pub chol: Var<'t>,
    /// Raw log-diagonal entries, masked to the diagonal positions.
    pub log_diag: Var<'t>,
    pub signal: Var<'t>,
    pub lengthscale: Var<'t>,
    pub noise: Var<'t>,
}

/// Diagonal-Gaussian beliefs over a batch of inputs or targets.
#[derive(Clone, Copy)]
pub struct BeliefVars<'t> {
    pub mean: Var<'t>,
    pub var: Var<'t>,
}

fn tiled_masks(m: usize, d: usize, diagonal: bool) -> (Matrix, Matrix) {
    let strict = Matrix::from_fn(m, m * d, |i, j| if !diagonal && j % m < i { 1.0 } else { 0.0 });
    let diag = Matrix::from_fn(m, m * d, |i, j| if j % m == i { 1.0 } else { 0.0 });
    (strict, diag)
}

impl GpLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        num_inducing: usize,
        diagonal: bool,
        jitter: f64,
        rng: &mut RngStream,
    ) -> Self {
        let m = num_inducing;
        let inducing = store.add(format!("{name}.inducing"), Matrix::from_fn(m, inputs, |_, _| rng.normal()));
        let mean = store.add(format!("{name}.mean"), Matrix::zeros(m, outputs));
        let (_, diag) = tiled_masks(m, outputs, diagonal);
        let chol = store.add(format!("{name}.chol"), diag.scale(0.1f64.ln()));
        let log_signal = store.add(format!("{name}.log_signal"), Matrix::scalar(0.0));
        let ell0 = (inputs.max(1) as f64).sqrt().ln();
        let log_lengthscale = store.add(format!("{name}.log_lengthscale"), Matrix::filled(1, inputs, ell0));
        let log_noise = store.add(format!("{name}.log_noise"), Matrix::scalar(0.1f64.ln()));
        Self { inducing, mean, chol, log_signal, log_lengthscale, log_noise, inputs, outputs, num_inducing: m, diagonal, jitter }
    }

    pub fn vars<'t>(&self, p: &Bound<'t>) -> GpVars<'t> {
        let tape = p.get(self.chol).tape();
        let (strict, diag) = tiled_masks(self.num_inducing, self.outputs, self.diagonal);
        let raw = p.get(self.chol);
        let diag = tape.constant(diag);
        let log_diag = raw.mul(diag);
        let chol = raw.mul(tape.constant(strict)).add(raw.exp().mul(diag));
        GpVars {
            inducing: p.get(self.inducing),
            mean: p.get(self.mean),
            chol,
            log_diag,
            signal: p.get(self.log_signal).exp(),
            lengthscale: p.get(self.log_lengthscale).exp(),
            noise: p.get(self.log_noise).exp(),
        }
    }

    /// Per-output Cholesky factors of the inducing covariances.
    pub fn covariance_factors(&self, store: &ParamStore) -> Vec<Matrix> {
        let raw = store.get(self.chol);
        let m = self.num_inducing;
        (0..self.outputs)
            .map(|d| {
                Matrix::from_fn(m, m, |i, j| {
                    let v = raw[(i, d * m + j)];
                    if i == j {
                        v.exp()
                    } else if j < i && !self.diagonal {
                        v
                    } else {
                        0.0
                    }
                })
            })
            .collect()
    }

    pub fn set_covariance_factors(&self, store: &mut ParamStore, factors: &[Matrix]) {
        let m = self.num_inducing;
        let raw = store.get_mut(self.chol);
        for (d, l) in factors.iter().enumerate() {
            for i in 0..m {
                for j in 0..m {
                    raw[(i, d * m + j)] = if i == j { l[(i, i)].ln() } else if j < i { l[(i, j)] } else { 0.0 };
                }
            }
        }
    }

    pub fn hyper(&self, store: &ParamStore) -> KernelHyper {
        KernelHyper {
            signal_variance: store.get(self.log_signal).item().exp(),
            lengthscales: store.get(self.log_lengthscale).as_slice().iter().map(|v| v.exp()).collect(),
        }
    }

    pub fn noise_variance(&self, store: &ParamStore) -> f64 {
        store.get(self.log_noise).item().exp()
    }

    /// Precompute what value-level prediction needs.
    pub fn cache(&self, store: &ParamStore) -> Result<LayerCache, RgpError> {
        let hyper = self.hyper(store);
        let z = store.get(self.inducing).clone();
        let k = kernel_matrix(&z, &z, hyper.signal_variance, &hyper.lengthscales)
            .add(&Matrix::identity(self.num_inducing).scale(self.jitter));
        let lk = cholesky_psd(&k, 0.0)?.factor;
        let kinv = cholesky_solve(&lk, &Matrix::identity(self.num_inducing))?;
        let weights = kinv.matmul(store.get(self.mean));
        let shrink = self
            .covariance_factors(store)
            .iter()
            .map(|l| {
                let c = kinv.matmul(l);
                c.matmul_t(&c)
            })
            .collect();
        Ok(LayerCache {
            inducing: z,
            hyper,
            noise: self.noise_variance(store),
            kinv,
            weights,
            shrink,
        })
    }

    fn prior_factor<'t>(&self, v: &GpVars<'t>) -> Result<Var<'t>, RgpError> {
        let tape = v.inducing.tape();
        let k = kernel_matrix_var(v.inducing, v.inducing, v.signal, v.lengthscale)
            .add(tape.constant(Matrix::identity(self.num_inducing).scale(self.jitter)));
        Ok(k.cholesky(0.0)?)
    }

    /// `Σ_n Σ_d ⟨log N(y_nd | f_d(x_n), σ²)⟩` under `q(x)`, `q(y)` and the
    /// inducing posterior, with the mapping marginalised analytically.
    pub fn expected_log_likelihood<'t>(
        &self,
        v: &GpVars<'t>,
        input: BeliefVars<'t>,
        target: BeliefVars<'t>,
    ) -> Result<Var<'t>, RgpError> {
        let (n, d_in) = input.mean.shape();
        if d_in != self.inputs || input.var.shape() != (n, d_in) {
            return Err(RgpError::DimensionMismatch(format!(
                "layer expects {} inputs, got {:?}",
                self.inputs,
                input.mean.shape()
            )));
        }
        if target.mean.shape() != (n, self.outputs) || target.var.shape() != (n, self.outputs) {
            return Err(RgpError::DimensionMismatch(format!(
                "layer expects {}x{} targets, got {:?}",
                n,
                self.outputs,
                target.mean.shape()
            )));
        }
        let lk = self.prior_factor(v)?;
        let psi1 = psi1_var(input.mean, input.var, v.inducing, v.signal, v.lengthscale);
        let psi2 = psi2_var(input.mean, input.var, v.inducing, v.signal, v.lengthscale);
        let b = lk.chol_solve(v.mean);
        let pred = psi1.matmul(b);
        let quad = psi2.matmul(b).mul(b).sum();
        let c = lk.chol_solve(v.chol);
        let spread = psi2.matmul(c).mul(c).sum();
        let w = lk.solve_lower(psi2);
        let tr_kp = lk.solve_lower(w.transpose()).trace();
        let d_out = self.outputs as f64;
        let explained = v.signal.scale(n as f64).sub(tr_kp).scale(d_out);
        let second = target.mean.square().add(target.var).sum();
        let inner = second.sub(target.mean.mul(pred).sum().scale(2.0)).add(quad).add(spread).add(explained);
        let count = n as f64 * d_out;
        let norm = v.noise.scale(2.0 * std::f64::consts::PI).ln().scale(-0.5 * count);
        Ok(norm.sub(inner.div(v.noise.scale(2.0))))
    }

    /// `Σ_d KL(q(u_d) ‖ p(u_d))`.
    pub fn inducing_kl<'t>(&self, v: &GpVars<'t>) -> Result<Var<'t>, RgpError> {
        let lk = self.prior_factor(v)?;
        let m = self.num_inducing as f64;
        let d = self.outputs as f64;
        let trace = lk.solve_lower(v.chol).square().sum();
        let maha = lk.solve_lower(v.mean).square().sum();
        let logdet_k = lk.chol_log_det().scale(d);
        let logdet_s = v.log_diag.sum().scale(2.0);
        Ok(trace.add(maha).add(logdet_k).sub(logdet_s).add_scalar(-m * d).scale(0.5))
    }
}

/// Predictive moments of one output dimension.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
}

/// Value-level snapshot of a [`GpLayer`].
#[derive(Clone, Debug)]
pub struct LayerCache {
    pub inducing: Matrix,
    pub hyper: KernelHyper,
    pub noise: f64,
    kinv: Matrix,
    /// `K⁻¹m`, `M x D_out`.
    weights: Matrix,
    /// `K⁻¹ S_d K⁻¹` per output.
    shrink: Vec<Matrix>,
}

impl LayerCache {
    pub fn inputs(&self) -> usize {
        self.inducing.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.cols()
    }

    /// Moments of the mapping output (without observation noise) when the
    /// input is `N(mean, diag(var))` and the inducing outputs are integrated
    /// out.
    pub fn predict_moments(&self, mean: &[f64], var: &[f64]) -> Result<Vec<Moments>, RgpError> {
        let d = self.inputs();
        if mean.len() != d || var.len() != d {
            return Err(RgpError::DimensionMismatch(format!("prediction input of length {} for {d} inputs", mean.len())));
        }
        if var.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(RgpError::ParameterOutOfRange("input variance must be finite and nonnegative".into()));
        }
        let sf2 = self.hyper.signal_variance;
        let ell = &self.hyper.lengthscales;
        let m = self.inducing.rows();
        let psi1: Vec<f64> = (0..m).map(|j| psi1_entry(mean, var, self.inducing.row_slice(j), sf2, ell)).collect();
        let psi2 = psi2_point(mean, var, &self.inducing, sf2, ell);
        let tr_kp = self.kinv.hadamard(&psi2).sum();
        let mut out = Vec::with_capacity(self.outputs());
        for o in 0..self.outputs() {
            let b = self.weights.col_vec(o);
            let mu: f64 = psi1.iter().zip(&b).map(|(p, w)| p * w).sum();
            let mut quad = 0.0;
            for i in 0..m {
                let row = psi2.row_slice(i);
                quad += b[i] * row.iter().zip(&b).map(|(p, w)| p * w).sum::<f64>();
            }
            let shrink = self.shrink[o].hadamard(&psi2).sum();
            let mut variance = sf2 - tr_kp + shrink + quad - mu * mu;
            if !(variance >= MIN_VARIANCE) {
                VARIANCE_CLAMPS.fetch_add(1, Ordering::Relaxed);
                variance = MIN_VARIANCE;
            }
            out.push(Moments { mean: mu, variance });
        }
        Ok(out)
    }
}

/// Mean and covariance of `f(X)` given inducing outputs `u` at inputs `z`:
/// `K_xz K⁻¹ u` and `K_xx − K_xz K⁻¹ K_zx`.
pub fn gp_conditional(
    hyper: &KernelHyper,
    z: &Matrix,
    u: &Matrix,
    x: &Matrix,
    jitter: f64,
) -> Result<(Matrix, Matrix), RgpError> {
    if z.cols() != hyper.dim() || x.cols() != hyper.dim() || u.rows() != z.rows() {
        return Err(RgpError::DimensionMismatch("conditional input shapes".into()));
    }
    let sf2 = hyper.signal_variance;
    let ell = &hyper.lengthscales;
    let k = kernel_matrix(z, z, sf2, ell).add(&Matrix::identity(z.rows()).scale(jitter));
    let lk = cholesky_psd(&k, 0.0)?.factor;
    let kxz = kernel_matrix(x, z, sf2, ell);
    let mean = kxz.matmul(&cholesky_solve(&lk, u)?);
    let a = solve_lower(&lk, &kxz.transpose())?;
    let cov = kernel_matrix(x, x, sf2, ell).sub(&a.t_matmul(&a));
    Ok((mean, cov))
}
