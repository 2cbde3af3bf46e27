use super::mixture::{gaussian_kl_logvar, gaussian_log_density, gumbel_softmax_var};
use super::sticks::{kl_kumaraswamy_beta_var, kumaraswamy_log_sample, log_stick_break};
use super::{Architecture, IgmmConfig, IgmmError};
use crate::numerics::nn::{upsample2, Activation, Conv2d, FeatureShape, Mlp};
use crate::numerics::{Bound, Matrix, ParamStore, RngStream, Tape, Var};

/// Bound on the Kumaraswamy log-parameters, applied smoothly.
const LOG_AB_BOUND: f64 = 5.0;
/// Standard deviation of the initial component means.
const PRIOR_MEAN_SPREAD: f64 = 1.0;

#[derive(Clone, Debug)]
enum Encoder {
    Dense(Mlp),
    Conv { convs: Vec<Conv2d>, head: Mlp },
}

#[derive(Clone, Debug)]
enum Decoder {
    Dense(Mlp),
    Conv { stem: Mlp, stem_shape: FeatureShape, convs: Vec<Conv2d> },
}

/// Outputs of the recognition heads for a batch.
#[derive(Clone, Copy, Debug)]
pub struct EncoderHeads<'t> {
    pub z_mean: Var<'t>,
    pub z_logvar: Var<'t>,
    pub w_mean: Var<'t>,
    pub w_logvar: Var<'t>,
    /// Kumaraswamy `a` per component, `N x (K−1)`; empty when K = 1.
    pub a: Option<Var<'t>>,
    pub b: Option<Var<'t>>,
}

/// Per-observation bound terms (`N x 1` each) and the scalar batch loss.
#[derive(Clone, Copy, Debug)]
pub struct ElboTerms<'t> {
    /// Negative bound averaged over the batch.
    pub loss: Var<'t>,
    pub reconstruction: Var<'t>,
    pub kl_style: Var<'t>,
    pub kl_latent: Var<'t>,
    pub kl_assignment: Var<'t>,
    pub kl_sticks: Var<'t>,
    pub heads: EncoderHeads<'t>,
    /// Assignment probabilities `N x K` from the last sample.
    pub responsibilities: Var<'t>,
}

/// Network structure of the mixture VAE; parameters live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct IgmmVae {
    pub config: IgmmConfig,
    encoder: Encoder,
    decoder: Decoder,
    prior: Mlp,
}

fn head_width(c: &IgmmConfig) -> usize {
    2 * c.latent_dim + 2 * c.style_dim + 2 * (c.truncation - 1)
}

impl IgmmVae {
    /// Build the networks and register their parameters in `store`.
    pub fn new(config: IgmmConfig, store: &mut ParamStore, rng: &mut RngStream) -> Result<Self, IgmmError> {
        config.validate_shapes()?;
        let h = config.hidden;
        let out = head_width(&config);
        let act = Activation::Silu;
        let (encoder, decoder) = match config.architecture {
            Architecture::Dense => {
                let enc = Mlp::new(store, "vae.enc", &[config.obs_dim, h, h, out], act, rng);
                enc.scale_output(store, 0.1);
                let dec = Mlp::new(store, "vae.dec", &[config.latent_dim, h, h, 2 * config.obs_dim], act, rng);
                (Encoder::Dense(enc), Decoder::Dense(dec))
            }
            Architecture::Conv { side } => {
                let mut shape = FeatureShape { channels: 1, side };
                let mut convs = Vec::new();
                for (i, ch) in [8, 16, 32, 32].into_iter().enumerate() {
                    let c = Conv2d::new(store, &format!("vae.enc.conv{i}"), shape, ch, 4, 2, 1, rng);
                    shape = c.output;
                    convs.push(c);
                }
                let head = Mlp::new(store, "vae.enc.head", &[shape.len(), h, out], act, rng);
                head.scale_output(store, 0.1);
                let stem_shape = FeatureShape { channels: 32, side: side / 8 };
                let stem = Mlp::new(store, "vae.dec.stem", &[config.latent_dim, h, stem_shape.len()], act, rng);
                let mut dconvs = Vec::new();
                let mut s = stem_shape;
                for (i, ch) in [16, 8, 2].into_iter().enumerate() {
                    let up = FeatureShape { channels: s.channels, side: s.side * 2 };
                    let c = Conv2d::new(store, &format!("vae.dec.conv{i}"), up, ch, 3, 1, 1, rng);
                    s = c.output;
                    dconvs.push(c);
                }
                (Encoder::Conv { convs, head }, Decoder::Conv { stem, stem_shape, convs: dconvs })
            }
        };
        let kd = config.truncation * config.latent_dim;
        let prior = Mlp::new(store, "vae.prior", &[config.style_dim, h, 2 * kd], act, rng);
        prior.scale_output(store, 0.1);
        // Spread the component means so that assignments can differentiate.
        let bias = prior.layers.last().expect("layers").bias;
        for j in 0..kd {
            store.get_mut(bias)[(0, j)] = PRIOR_MEAN_SPREAD * rng.normal();
        }
        Ok(Self { config, encoder, decoder, prior })
    }

    pub fn truncation(&self) -> usize {
        self.config.truncation
    }

    /// Recognition heads for a batch of observations (`N x obs_dim`).
    pub fn encode<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> EncoderHeads<'t> {
        let c = &self.config;
        let raw = match &self.encoder {
            Encoder::Dense(m) => m.forward(p, x),
            Encoder::Conv { convs, head } => {
                let h = convs.iter().fold(x, |h, conv| conv.forward(p, h).silu());
                head.forward(p, h)
            }
        };
        let (dz, dw, k1) = (c.latent_dim, c.style_dim, c.truncation - 1);
        let bounded = |v: Var<'t>| v.scale(1.0 / LOG_AB_BOUND).tanh().scale(LOG_AB_BOUND).exp();
        let (a, b) = if k1 == 0 {
            (None, None)
        } else {
            let off = 2 * dz + 2 * dw;
            (Some(bounded(raw.slice_cols(off, k1))), Some(bounded(raw.slice_cols(off + k1, k1))))
        };
        EncoderHeads {
            z_mean: raw.slice_cols(0, dz),
            z_logvar: raw.slice_cols(dz, dz),
            w_mean: raw.slice_cols(2 * dz, dw),
            w_logvar: raw.slice_cols(2 * dz + dw, dw),
            a,
            b,
        }
    }

    /// Observation mean and log-variance for latents `N x latent_dim`.
    pub fn decode<'t>(&self, p: &Bound<'t>, z: Var<'t>) -> (Var<'t>, Var<'t>) {
        let d = self.config.obs_dim;
        match &self.decoder {
            Decoder::Dense(m) => {
                let out = m.forward(p, z);
                (out.slice_cols(0, d), out.slice_cols(d, d))
            }
            Decoder::Conv { stem, stem_shape, convs } => {
                let mut h = stem.forward(p, z).silu();
                let mut shape = *stem_shape;
                let last = convs.len() - 1;
                for (i, conv) in convs.iter().enumerate() {
                    h = conv.forward(p, upsample2(h, shape));
                    shape = conv.output;
                    if i < last {
                        h = h.silu();
                    }
                }
                (h.slice_cols(0, d), h.slice_cols(d, d))
            }
        }
    }

    /// Component means and log-variances, each `N x (K·latent_dim)`, component-major.
    pub fn prior_components<'t>(&self, p: &Bound<'t>, w: Var<'t>) -> (Var<'t>, Var<'t>) {
        let kd = self.config.truncation * self.config.latent_dim;
        let out = self.prior.forward(p, w);
        (out.slice_cols(0, kd), out.slice_cols(kd, kd))
    }

    /// Place the component means at `means` (`K x latent_dim`) with a shared
    /// log-variance, removing their dependence on the style variable.
    pub fn seed_components(&self, store: &mut ParamStore, means: &Matrix, logvar: f64) {
        let (k, d) = (self.config.truncation, self.config.latent_dim);
        assert_eq!(means.shape(), (k, d), "component seed shape");
        let last = self.prior.layers.last().expect("layers");
        let w = store.get_mut(last.weight);
        w.as_mut_slice().fill(0.0);
        let b = store.get_mut(last.bias);
        for j in 0..k * d {
            b[(0, j)] = means.as_slice()[j];
            b[(0, k * d + j)] = logvar;
        }
    }

    fn tiling<'t>(&self, tape: &'t Tape) -> (Var<'t>, Var<'t>) {
        let (k, d) = (self.config.truncation, self.config.latent_dim);
        let tile = Matrix::from_fn(d, k * d, |i, j| if j % d == i { 1.0 } else { 0.0 });
        let block = Matrix::from_fn(k * d, k, |i, j| if i / d == j { 1.0 } else { 0.0 });
        (tape.constant(tile), tape.constant(block))
    }

    /// Negative evidence bound for a batch `x` (`N x obs_dim`).
    ///
    /// `temperature` is only used when relaxed assignments are enabled.
    pub fn elbo<'t>(
        &self,
        tape: &'t Tape,
        p: &Bound<'t>,
        x: &Matrix,
        temperature: f64,
        rng: &mut RngStream,
    ) -> Result<ElboTerms<'t>, IgmmError> {
        if x.rows() == 0 {
            return Err(IgmmError::EmptyBatch);
        }
        let c = &self.config;
        if x.cols() != c.obs_dim {
            return Err(IgmmError::DimensionMismatch(format!("observation width {} != {}", x.cols(), c.obs_dim)));
        }
        let n = x.rows();
        let (k, dz, dw) = (c.truncation, c.latent_dim, c.style_dim);
        let xv = tape.constant(x.clone());
        let heads = self.encode(p, xv);
        let kl_style = gaussian_kl_logvar(
            heads.w_mean,
            heads.w_logvar,
            tape.constant(Matrix::zeros(n, dw)),
            tape.constant(Matrix::zeros(n, dw)),
        );
        let kl_sticks = match (heads.a, heads.b) {
            (Some(a), Some(b)) => kl_kumaraswamy_beta_var(a, b, c.concentration).sum_cols(),
            _ => tape.constant(Matrix::zeros(n, 1)),
        };
        let (tile, block) = self.tiling(tape);
        let z_std = heads.z_logvar.scale(0.5).exp();
        let w_std = heads.w_logvar.scale(0.5).exp();
        let inv_s = 1.0 / c.samples as f64;
        let mut rec_acc: Option<Var<'t>> = None;
        let mut klz_acc: Option<Var<'t>> = None;
        let mut klc_acc: Option<Var<'t>> = None;
        let mut resp = None;
        let accumulate = |acc: &mut Option<Var<'t>>, v: Var<'t>| {
            *acc = Some(match *acc {
                Some(a) => a.add(v),
                None => v,
            })
        };
        for _ in 0..c.samples {
            let eps_z = tape.constant(Matrix::from_fn(n, dz, |_, _| rng.normal()));
            let eps_w = tape.constant(Matrix::from_fn(n, dw, |_, _| rng.normal()));
            let z = heads.z_mean.add(z_std.mul(eps_z));
            let w = heads.w_mean.add(w_std.mul(eps_w));
            let (x_mean, x_logvar) = self.decode(p, z);
            accumulate(&mut rec_acc, gaussian_log_density(xv, x_mean, x_logvar));

            let log_theta = match (heads.a, heads.b) {
                (Some(a), Some(b)) => {
                    let u = Matrix::from_fn(n, k - 1, |_, _| rng.uniform());
                    let (ln_nu, ln_rest) = kumaraswamy_log_sample(a, b, &u);
                    log_stick_break(ln_nu, ln_rest)
                }
                _ => tape.constant(Matrix::zeros(n, 1)),
            };
            let (pm, plv) = self.prior_components(p, w);
            let zt = z.matmul(tile);
            let log_dens = zt
                .sub(pm)
                .square()
                .div(plv.exp())
                .add(plv)
                .matmul(block)
                .scale(-0.5)
                .add_scalar(-0.5 * dz as f64 * (2.0 * std::f64::consts::PI).ln());
            let logits = log_theta.add(log_dens);
            let log_resp = logits.sub(logits.row_logsumexp().broadcast(n, k));
            let gamma = log_resp.exp();
            let kl_comp = gaussian_kl_logvar_tiled(heads.z_mean.matmul(tile), heads.z_logvar.matmul(tile), pm, plv, block);
            let weights = if c.gumbel_assignments {
                let noise = Matrix::from_fn(n, k, |_, _| rng.gumbel());
                gumbel_softmax_var(log_resp, &noise, temperature)
            } else {
                gamma
            };
            accumulate(&mut klz_acc, weights.mul(kl_comp).sum_cols());
            accumulate(&mut klc_acc, gamma.mul(log_resp.sub(log_theta)).sum_cols());
            resp = Some(gamma);
        }
        let reconstruction = rec_acc.expect("samples").scale(inv_s);
        let kl_latent = klz_acc.expect("samples").scale(inv_s);
        let kl_assignment = klc_acc.expect("samples").scale(inv_s);
        let per_point = reconstruction.sub(kl_style).sub(kl_latent).sub(kl_assignment).sub(kl_sticks);
        let loss = per_point.mean().neg();
        Ok(ElboTerms {
            loss,
            reconstruction,
            kl_style,
            kl_latent,
            kl_assignment,
            kl_sticks,
            heads,
            responsibilities: resp.expect("samples"),
        })
    }

    /// Posterior mean and log-variance of `z` for each row of `x`.
    pub fn encode_latent(&self, store: &ParamStore, x: &Matrix) -> Result<(Matrix, Matrix), IgmmError> {
        if x.cols() != self.config.obs_dim {
            return Err(IgmmError::DimensionMismatch(format!(
                "observations of width {} for an encoder over {}",
                x.cols(),
                self.config.obs_dim
            )));
        }
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let heads = self.encode(&p, tape.constant(x.clone()));
        let (m, lv) = (heads.z_mean.value(), heads.z_logvar.value());
        Ok(((*m).clone(), (*lv).clone()))
    }

    /// Deterministic summaries for a batch using the posterior means.
    pub fn summarize(&self, store: &ParamStore, x: &Matrix) -> BatchSummary {
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let heads = self.encode(&p, tape.constant(x.clone()));
        let n = x.rows();
        let k = self.config.truncation;
        let theta: Vec<Vec<f64>> = match (heads.a, heads.b) {
            (Some(a), Some(b)) => {
                let (a, b) = (a.value(), b.value());
                (0..n).map(|i| super::sticks::mean_weights(a.row_slice(i), b.row_slice(i))).collect()
            }
            _ => vec![vec![1.0]; n],
        };
        let (pm, plv) = self.prior_components(&p, heads.w_mean);
        let (zm, pm, plv) = (heads.z_mean.value(), pm.value(), plv.value());
        let d = self.config.latent_dim;
        let mut resp = Vec::with_capacity(n);
        for i in 0..n {
            let means = Matrix::from_vec(k, d, pm.row_slice(i).to_vec()).expect("shape");
            let vars = Matrix::from_vec(k, d, plv.row_slice(i).iter().map(|v| v.exp()).collect()).expect("shape");
            resp.push(super::mixture::responsibilities(zm.row_slice(i), &means, &vars, &theta[i]).ok());
        }
        BatchSummary { z_mean: (*zm).clone(), z_logvar: (*heads.z_logvar.value()).clone(), theta, responsibilities: resp }
    }
}

/// Tape-free posterior summaries.
#[derive(Clone, Debug)]
pub struct BatchSummary {
    pub z_mean: Matrix,
    pub z_logvar: Matrix,
    /// Weights at the Kumaraswamy means, per observation.
    pub theta: Vec<Vec<f64>>,
    /// `None` where every component density underflowed.
    pub responsibilities: Vec<Option<Vec<f64>>>,
}

fn gaussian_kl_logvar_tiled<'t>(
    mean_q: Var<'t>,
    logvar_q: Var<'t>,
    mean_p: Var<'t>,
    logvar_p: Var<'t>,
    block: Var<'t>,
) -> Var<'t> {
    let diff = mean_q.sub(mean_p);
    let ratio = logvar_q.exp().add(diff.square()).div(logvar_p.exp());
    logvar_p.sub(logvar_q).add(ratio).add_scalar(-1.0).scale(0.5).matmul(block)
}
