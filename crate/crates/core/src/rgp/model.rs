//! Stack of recurrent GP layers with controller and reward mappings.

use super::layer::{BeliefVars, GpLayer, GpVars, LayerCache};
use super::RgpError;
use crate::numerics::nn::{Activation, Mlp};
use crate::numerics::{concat_cols, concat_rows, sum_all, Bound, Matrix, ParamStore, RngStream, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct RgpConfig {
    /// Number of stacked latent layers.
    pub horizon: usize,
    /// Autoregressive lag on each layer's own latents.
    pub lag: usize,
    /// Action lag feeding the first layer.
    pub exo_lag: usize,
    /// Action lag feeding the upper layers and the reward mapping.
    pub action_lag: usize,
    pub inducing: usize,
    pub latent_dim: usize,
    pub action_dim: usize,
    pub reward_head: bool,
    pub controllers: bool,
    pub recognition_hidden: usize,
    /// Restrict inducing covariances to be diagonal.
    pub diagonal_covariance: bool,
    pub jitter: f64,
}

impl Default for RgpConfig {
    fn default() -> Self {
        Self {
            horizon: 5,
            lag: 2,
            exo_lag: 2,
            action_lag: 2,
            inducing: 16,
            latent_dim: 10,
            action_dim: 1,
            reward_head: true,
            controllers: true,
            recognition_hidden: 32,
            diagonal_covariance: false,
            jitter: 1e-6,
        }
    }
}

impl RgpConfig {
    pub fn validate(&self) -> Result<(), RgpError> {
        let bad = |m: &str| Err(RgpError::InvalidConfig(m.into()));
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if self.lag == 0 {
            return bad("lag must be at least 1");
        }
        if self.inducing == 0 || self.latent_dim == 0 {
            return bad("inducing count and latent size must be positive");
        }
        if self.action_dim > 0 && self.exo_lag + self.action_lag == 0 {
            return bad("actions need a positive lag");
        }
        if !(self.jitter >= 0.0) {
            return bad("jitter must be nonnegative");
        }
        Ok(())
    }

    /// Leading steps of every sequence that are covered by the fixed prior
    /// rather than predicted.
    pub fn prefix(&self) -> usize {
        let mut p = self.lag;
        if self.action_dim > 0 {
            p = p.max(self.exo_lag).max(self.action_lag);
        }
        p
    }

    fn action_slots(&self, lag: usize) -> usize {
        if self.action_dim == 0 {
            0
        } else {
            lag
        }
    }

    pub fn input_dim(&self, kind: LayerKind) -> usize {
        let (d, a) = (self.latent_dim, self.action_dim);
        match kind {
            LayerKind::Transition(0) => self.lag * d + self.action_slots(self.exo_lag) * a,
            LayerKind::Transition(_) => 2 * self.lag * d + self.action_slots(self.action_lag) * a,
            LayerKind::Reward => self.lag * d + self.action_slots(self.action_lag) * a,
            LayerKind::Controller(_) => self.lag * d,
        }
    }
}

/// The mappings of the model. Layers are numbered from zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    /// Predicts `z^(h)_i`.
    Transition(usize),
    /// Predicts `r_i` from the top layer.
    Reward,
    /// Predicts `a_i` from layer `h`.
    Controller(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Source {
    Latent(usize),
    Action,
}

/// Ordered `(source, time)` pairs making up the input of `kind` at step `i`.
pub(crate) fn slots(cfg: &RgpConfig, kind: LayerKind, i: usize) -> Result<Vec<(Source, usize)>, RgpError> {
    let mut out = Vec::new();
    let mut push = |src: Source, newest: isize, count: usize| -> Result<(), RgpError> {
        for k in 0..count as isize {
            let t = newest - k;
            if t < 0 {
                return Err(RgpError::InsufficientHistory { index: i, needed: (k - newest) as usize });
            }
            out.push((src, t as usize));
        }
        Ok(())
    };
    let ii = i as isize;
    let acts = |lag| cfg.action_slots(lag);
    match kind {
        LayerKind::Transition(h) => {
            if h >= cfg.horizon {
                return Err(RgpError::InvalidConfig(format!("layer {h} of {}", cfg.horizon)));
            }
            push(Source::Latent(h), ii - 1, cfg.lag)?;
            if h == 0 {
                push(Source::Action, ii - 1, acts(cfg.exo_lag))?;
            } else {
                push(Source::Latent(h - 1), ii, cfg.lag)?;
                push(Source::Action, ii - 1, acts(cfg.action_lag))?;
            }
        }
        LayerKind::Reward => {
            push(Source::Latent(cfg.horizon - 1), ii, cfg.lag)?;
            push(Source::Action, ii, acts(cfg.action_lag))?;
        }
        LayerKind::Controller(h) => {
            if h >= cfg.horizon {
                return Err(RgpError::InvalidConfig(format!("layer {h} of {}", cfg.horizon)));
            }
            push(Source::Latent(h), ii, cfg.lag)?;
        }
    }
    Ok(out)
}

/// Concatenated input of `kind` at step `i`. `latents[h][t]` holds layer
/// `h` at time `t`; `actions[t]` the action taken at `t`.
pub fn assemble_layer_input(
    cfg: &RgpConfig,
    kind: LayerKind,
    i: usize,
    latents: &[Vec<Vec<f64>>],
    actions: &[Vec<f64>],
) -> Result<Vec<f64>, RgpError> {
    let mut out = Vec::with_capacity(cfg.input_dim(kind));
    for (src, t) in slots(cfg, kind, i)? {
        let v = match src {
            Source::Latent(h) => latents.get(h).and_then(|l| l.get(t)),
            Source::Action => actions.get(t),
        };
        let v = v.ok_or(RgpError::InsufficientHistory { index: i, needed: 0 })?;
        out.extend_from_slice(v);
    }
    Ok(out)
}

/// A batch of equal-length sequences. Rows are ordered chunk-major
/// (`chunk·length + step`).
pub struct SequenceBatch<'t> {
    /// First-layer beliefs, `(chunks·length) x latent_dim`.
    pub latent: BeliefVars<'t>,
    pub actions: Matrix,
    pub rewards: Option<Matrix>,
    pub chunks: usize,
    pub length: usize,
}

/// Posterior beliefs over every layer of a [`SequenceBatch`].
pub struct SequencePosterior<'t> {
    /// `beliefs[h][i]`, each `chunks x latent_dim`.
    pub beliefs: Vec<Vec<BeliefVars<'t>>>,
    /// `actions[i]`, each `chunks x action_dim`.
    pub actions: Vec<Var<'t>>,
    /// Entropy of the recognised beliefs (upper layers only).
    pub entropy: Var<'t>,
}

pub struct RgpElboTerms<'t> {
    pub elbo: Var<'t>,
    pub transition: f64,
    pub reward: f64,
    pub controller: f64,
    pub entropy: f64,
    pub inducing_kl: f64,
    /// Number of predicted steps in the batch.
    pub points: usize,
}

#[derive(Clone, Debug)]
pub struct Rgp {
    pub config: RgpConfig,
    pub transitions: Vec<GpLayer>,
    pub controllers: Vec<GpLayer>,
    pub reward: Option<GpLayer>,
    /// Recognition networks of layers `1..horizon`.
    pub recognition: Vec<Mlp>,
}

/// Value-level snapshot of every mapping.
#[derive(Clone, Debug)]
pub struct WorldCache {
    pub config: RgpConfig,
    pub transitions: Vec<LayerCache>,
    pub controllers: Vec<LayerCache>,
    pub reward: Option<LayerCache>,
}

impl Rgp {
    pub fn new(config: RgpConfig, store: &mut ParamStore, rng: &mut RngStream) -> Result<Self, RgpError> {
        config.validate()?;
        let c = &config;
        let layer = |store: &mut ParamStore, name: String, kind, outputs, rng: &mut RngStream| {
            GpLayer::new(store, &name, c.input_dim(kind), outputs, c.inducing, c.diagonal_covariance, c.jitter, rng)
        };
        let transitions = (0..c.horizon)
            .map(|h| layer(store, format!("rgp.transition{h}"), LayerKind::Transition(h), c.latent_dim, rng))
            .collect();
        let controllers = if c.controllers && c.action_dim > 0 {
            (0..c.horizon)
                .map(|h| layer(store, format!("rgp.controller{h}"), LayerKind::Controller(h), c.action_dim, rng))
                .collect()
        } else {
            Vec::new()
        };
        let reward = c.reward_head.then(|| layer(store, "rgp.reward".into(), LayerKind::Reward, 1, rng));
        let recognition = (1..c.horizon)
            .map(|h| {
                let w = c.recognition_hidden;
                Mlp::new(
                    store,
                    &format!("rgp.recognition{h}"),
                    &[c.input_dim(LayerKind::Transition(h)), w, w, 2 * c.latent_dim],
                    Activation::Silu,
                    rng,
                )
            })
            .collect();
        Ok(Self { config, transitions, controllers, reward, recognition })
    }

    pub fn layer(&self, kind: LayerKind) -> Option<&GpLayer> {
        match kind {
            LayerKind::Transition(h) => self.transitions.get(h),
            LayerKind::Reward => self.reward.as_ref(),
            LayerKind::Controller(h) => self.controllers.get(h),
        }
    }

    /// Every mapping that contributes a likelihood term.
    pub fn kinds(&self) -> Vec<LayerKind> {
        let mut k: Vec<LayerKind> = (0..self.config.horizon).map(LayerKind::Transition).collect();
        if self.reward.is_some() {
            k.push(LayerKind::Reward);
        }
        k.extend((0..self.controllers.len()).map(LayerKind::Controller));
        k
    }

    pub fn cache(&self, store: &ParamStore) -> Result<WorldCache, RgpError> {
        Ok(WorldCache {
            config: self.config.clone(),
            transitions: self.transitions.iter().map(|l| l.cache(store)).collect::<Result<_, _>>()?,
            controllers: self.controllers.iter().map(|l| l.cache(store)).collect::<Result<_, _>>()?,
            reward: self.reward.as_ref().map(|l| l.cache(store)).transpose()?,
        })
    }

    fn check_batch(&self, batch: &SequenceBatch<'_>) -> Result<(), RgpError> {
        let c = &self.config;
        let rows = batch.chunks * batch.length;
        if batch.chunks == 0 {
            return Err(RgpError::DimensionMismatch("empty sequence batch".into()));
        }
        if batch.latent.mean.shape() != (rows, c.latent_dim) || batch.latent.var.shape() != (rows, c.latent_dim) {
            return Err(RgpError::DimensionMismatch(format!(
                "latent beliefs {:?} for {} chunks of length {}",
                batch.latent.mean.shape(),
                batch.chunks,
                batch.length
            )));
        }
        if batch.actions.shape() != (rows, c.action_dim) {
            return Err(RgpError::DimensionMismatch(format!("actions {:?}", batch.actions.shape())));
        }
        match (&batch.rewards, c.reward_head) {
            (Some(r), true) if r.shape() == (rows, 1) => {}
            (_, false) => {}
            _ => return Err(RgpError::DimensionMismatch("rewards must be a column per step".into())),
        }
        Ok(())
    }

    /// Beliefs over all layers. Steps before [`RgpConfig::prefix`] in the
    /// upper layers are fixed to `N(0, I)`, later ones come from the
    /// recognition networks.
    pub fn posterior<'t>(&self, p: &Bound<'t>, batch: &SequenceBatch<'t>) -> Result<SequencePosterior<'t>, RgpError> {
        self.check_batch(batch)?;
        let c = &self.config;
        let tape = batch.latent.mean.tape();
        let (b, t_len, d) = (batch.chunks, batch.length, c.latent_dim);
        let rows_at = |i: usize| (0..b).map(|k| k * t_len + i).collect::<Vec<_>>();
        let actions: Vec<Var<'t>> = (0..t_len)
            .map(|i| {
                let idx = rows_at(i);
                tape.constant(Matrix::from_fn(b, c.action_dim, |r, j| batch.actions[(idx[r], j)]))
            })
            .collect();
        let mut beliefs: Vec<Vec<BeliefVars<'t>>> = vec![(0..t_len)
            .map(|i| {
                let idx = rows_at(i);
                BeliefVars { mean: batch.latent.mean.gather_rows(&idx), var: batch.latent.var.gather_rows(&idx) }
            })
            .collect()];
        let prefix = c.prefix();
        let mut entropy = Vec::new();
        let zeros = tape.constant(Matrix::zeros(b, d));
        let ones = tape.constant(Matrix::filled(b, d, 1.0));
        for h in 1..c.horizon {
            let mut layer: Vec<BeliefVars<'t>> = Vec::with_capacity(t_len);
            for i in 0..t_len {
                if i < prefix {
                    layer.push(BeliefVars { mean: zeros, var: ones });
                    continue;
                }
                let input = gather_input(c, LayerKind::Transition(h), i, &beliefs, Some(&layer), &actions)?;
                let out = self.recognition[h - 1].forward(p, input.mean);
                let mean = out.slice_cols(0, d);
                let var = out.slice_cols(d, d).softplus().add_scalar(1e-6);
                entropy.push(var.scale(2.0 * std::f64::consts::PI * std::f64::consts::E).ln().sum().scale(0.5));
                layer.push(BeliefVars { mean, var });
            }
            beliefs.push(layer);
        }
        let entropy = if entropy.is_empty() { tape.scalar(0.0) } else { sum_all(&entropy) };
        Ok(SequencePosterior { beliefs, actions, entropy })
    }

    /// Inputs and targets of `kind` stacked over every predicted step.
    pub fn stacked_terms<'t>(
        &self,
        post: &SequencePosterior<'t>,
        batch: &SequenceBatch<'t>,
        kind: LayerKind,
    ) -> Result<(BeliefVars<'t>, BeliefVars<'t>), RgpError> {
        let c = &self.config;
        let tape = batch.latent.mean.tape();
        let prefix = c.prefix();
        let b = batch.chunks;
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for i in prefix..batch.length {
            inputs.push(gather_input(c, kind, i, &post.beliefs, None, &post.actions)?);
            let target = match kind {
                LayerKind::Transition(h) => post.beliefs[h][i],
                LayerKind::Controller(_) => BeliefVars {
                    mean: post.actions[i],
                    var: tape.constant(Matrix::zeros(b, c.action_dim)),
                },
                LayerKind::Reward => {
                    let r = batch.rewards.as_ref().ok_or_else(|| RgpError::DimensionMismatch("missing rewards".into()))?;
                    BeliefVars {
                        mean: tape.constant(Matrix::from_fn(b, 1, |k, _| r[(k * batch.length + i, 0)])),
                        var: tape.constant(Matrix::zeros(b, 1)),
                    }
                }
            };
            targets.push(target);
        }
        if inputs.is_empty() {
            return Err(RgpError::InsufficientHistory { index: batch.length, needed: prefix + 1 - batch.length });
        }
        let stack = |v: &[BeliefVars<'t>]| BeliefVars {
            mean: concat_rows(&v.iter().map(|x| x.mean).collect::<Vec<_>>()),
            var: concat_rows(&v.iter().map(|x| x.var).collect::<Vec<_>>()),
        };
        Ok((stack(&inputs), stack(&targets)))
    }

    /// Lower bound on the log evidence of the batch. Per-step terms are
    /// multiplied by `scale` (dataset size over batch size); the inducing
    /// KL terms are not.
    pub fn elbo<'t>(&self, p: &Bound<'t>, batch: &SequenceBatch<'t>, scale: f64) -> Result<RgpElboTerms<'t>, RgpError> {
        let post = self.posterior(p, batch)?;
        let tape = batch.latent.mean.tape();
        let mut sums = [Vec::new(), Vec::new(), Vec::new()];
        let mut kls = Vec::new();
        for kind in self.kinds() {
            let layer = self.layer(kind).expect("kind listed by kinds()");
            let v: GpVars<'t> = layer.vars(p);
            let (input, target) = self.stacked_terms(&post, batch, kind)?;
            let term = layer.expected_log_likelihood(&v, input, target)?;
            let slot = match kind {
                LayerKind::Transition(_) => 0,
                LayerKind::Reward => 1,
                LayerKind::Controller(_) => 2,
            };
            sums[slot].push(term);
            kls.push(layer.inducing_kl(&v)?);
        }
        let total = |v: &[Var<'t>]| if v.is_empty() { tape.scalar(0.0) } else { sum_all(v) };
        let (tr, rw, ct) = (total(&sums[0]), total(&sums[1]), total(&sums[2]));
        let kl = total(&kls);
        let data = sum_all(&[tr, rw, ct, post.entropy]).scale(scale);
        Ok(RgpElboTerms {
            elbo: data.sub(kl),
            transition: tr.item(),
            reward: rw.item(),
            controller: ct.item(),
            entropy: post.entropy.item(),
            inducing_kl: kl.item(),
            points: batch.chunks * (batch.length - self.config.prefix()),
        })
    }

    /// Place every layer's inducing inputs on a random subset of the inputs
    /// that layer sees on `batch`.
    #[allow(clippy::too_many_arguments)]
    pub fn initialize_inducing(
        &self,
        store: &mut ParamStore,
        latent_mean: &Matrix,
        latent_var: &Matrix,
        actions: &Matrix,
        rewards: Option<&Matrix>,
        chunks: usize,
        rng: &mut RngStream,
    ) -> Result<(), RgpError> {
        for pick in self.pick_inducing(store, latent_mean, latent_var, actions, rewards, chunks, rng)? {
            *store.get_mut(self.layer(pick.kind).expect("listed kind").inducing) = pick.inducing;
        }
        Ok(())
    }

    /// Like [`Rgp::initialize_inducing`], and additionally start each
    /// inducing mean at the targets of the chosen points and set the kernel
    /// from the batch: signal variance to the target variance, lengthscales
    /// to the input spreads, noise to a tenth of the signal.
    #[allow(clippy::too_many_arguments)]
    pub fn initialize_from_data(
        &self,
        store: &mut ParamStore,
        latent_mean: &Matrix,
        latent_var: &Matrix,
        actions: &Matrix,
        rewards: Option<&Matrix>,
        chunks: usize,
        rng: &mut RngStream,
    ) -> Result<(), RgpError> {
        for pick in self.pick_inducing(store, latent_mean, latent_var, actions, rewards, chunks, rng)? {
            let layer = self.layer(pick.kind).expect("listed kind");
            let spread = |m: &Matrix, j: usize| {
                let n = m.rows().max(1) as f64;
                let mu = (0..m.rows()).map(|i| m[(i, j)]).sum::<f64>() / n;
                (0..m.rows()).map(|i| (m[(i, j)] - mu).powi(2)).sum::<f64>() / n
            };
            let sf2 = ((0..pick.targets.cols()).map(|j| spread(&pick.targets, j)).sum::<f64>() / pick.targets.cols().max(1) as f64).max(1e-2);
            let ell = Matrix::from_fn(1, layer.inputs, |_, j| spread(&pick.inputs, j).sqrt().max(1e-2).ln());
            *store.get_mut(layer.inducing) = pick.inducing;
            *store.get_mut(layer.mean) = pick.inducing_targets;
            *store.get_mut(layer.log_signal) = Matrix::scalar(sf2.ln());
            *store.get_mut(layer.log_lengthscale) = ell;
            *store.get_mut(layer.log_noise) = Matrix::scalar((0.1 * sf2).ln());
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn pick_inducing(
        &self,
        store: &ParamStore,
        latent_mean: &Matrix,
        latent_var: &Matrix,
        actions: &Matrix,
        rewards: Option<&Matrix>,
        chunks: usize,
        rng: &mut RngStream,
    ) -> Result<Vec<InducingPick>, RgpError> {
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let batch = SequenceBatch {
            latent: BeliefVars { mean: tape.constant(latent_mean.clone()), var: tape.constant(latent_var.clone()) },
            actions: actions.clone(),
            rewards: rewards.cloned(),
            chunks,
            length: latent_mean.rows() / chunks.max(1),
        };
        let post = self.posterior(&p, &batch)?;
        let mut out = Vec::new();
        for kind in self.kinds() {
            let layer = self.layer(kind).expect("kind listed by kinds()");
            let (input, target) = self.stacked_terms(&post, &batch, kind)?;
            let (x, y) = ((*input.mean.value()).clone(), (*target.mean.value()).clone());
            let m = layer.num_inducing;
            let mut order: Vec<usize> = (0..x.rows()).collect();
            for i in (1..order.len()).rev() {
                order.swap(i, rng.below(i + 1));
            }
            let src = |r: usize| order[r % order.len()];
            let inducing = Matrix::from_fn(m, x.cols(), |r, j| {
                let jitter = if r >= order.len() { 1e-3 * rng.normal() } else { 0.0 };
                x[(src(r), j)] + jitter
            });
            let inducing_targets = Matrix::from_fn(m, y.cols(), |r, j| y[(src(r), j)]);
            out.push(InducingPick { kind, inducing, inducing_targets, inputs: x, targets: y });
        }
        Ok(out)
    }
}

struct InducingPick {
    kind: LayerKind,
    inducing: Matrix,
    inducing_targets: Matrix,
    inputs: Matrix,
    targets: Matrix,
}

fn gather_input<'t>(
    cfg: &RgpConfig,
    kind: LayerKind,
    i: usize,
    beliefs: &[Vec<BeliefVars<'t>>],
    current: Option<&Vec<BeliefVars<'t>>>,
    actions: &[Var<'t>],
) -> Result<BeliefVars<'t>, RgpError> {
    let mut means = Vec::new();
    let mut vars = Vec::new();
    for (src, t) in slots(cfg, kind, i)? {
        match src {
            Source::Latent(h) => {
                let layer = if h == beliefs.len() { current } else { beliefs.get(h) };
                let b = layer.and_then(|l| l.get(t)).ok_or(RgpError::InsufficientHistory { index: i, needed: 0 })?;
                means.push(b.mean);
                vars.push(b.var);
            }
            Source::Action => {
                let a = actions[t];
                means.push(a);
                vars.push(a.tape().constant(Matrix::zeros(a.rows(), a.cols())));
            }
        }
    }
    Ok(BeliefVars { mean: concat_cols(&means), var: concat_cols(&vars) })
}

/// `Σ_i H[q_i] + Σ_{i < covered} ⟨log N(z_i | 0, I)⟩` for diagonal beliefs given
/// as rows of `mean` and `var`.
pub fn entropy_and_prior(mean: &Matrix, var: &Matrix, covered: usize) -> Result<f64, RgpError> {
    if mean.shape() != var.shape() {
        return Err(RgpError::DimensionMismatch("belief means and variances differ in shape".into()));
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut total = 0.0;
    for i in 0..mean.rows() {
        for j in 0..mean.cols() {
            let (m, v) = (mean[(i, j)], var[(i, j)]);
            if !(v > 0.0) {
                return Err(RgpError::ParameterOutOfRange(format!("belief variance {v}")));
            }
            total += 0.5 * (two_pi * std::f64::consts::E * v).ln();
            if i < covered {
                total += -0.5 * two_pi.ln() - 0.5 * (m * m + v);
            }
        }
    }
    Ok(total)
}
