//! Fitting a single transition layer directly to an observed sequence.

use super::TrainError;
use crate::envs::SequenceDataset;
use crate::numerics::optim::{Adam, AdamConfig};
use crate::numerics::{Matrix, ParamStore, RngStream, Tape};
use crate::rgp::{assemble_layer_input, BeliefVars, LayerKind, Rgp, RgpConfig, SequenceBatch};

#[derive(Clone, Debug, PartialEq)]
pub struct SysidReport {
    /// One-step RMSE on the held-out suffix.
    pub rmse: f64,
    pub losses: Vec<f64>,
    pub predictions: Vec<Vec<f64>>,
}

/// Fit the first transition layer of `base` (lag, inducing count, jitter)
/// to the training prefix, treating observations as exact latent states,
/// then predict each held-out step from its observed history.
pub fn fit_sysid(
    data: &SequenceDataset,
    base: &RgpConfig,
    steps: usize,
    learning_rate: f64,
    rng: &mut RngStream,
) -> Result<SysidReport, TrainError> {
    let config = RgpConfig {
        horizon: 1,
        latent_dim: data.dim,
        action_dim: 0,
        reward_head: false,
        controllers: false,
        ..base.clone()
    };
    let mut store = ParamStore::new();
    let rgp = Rgp::new(config, &mut store, &mut rng.split("model"))?;
    let len = data.train.len();
    let train = Matrix::from_fn(len, data.dim, |i, j| data.train[i][j]);
    let zeros = Matrix::zeros(len, data.dim);
    let actions = Matrix::zeros(len, 0);
    rgp.initialize_from_data(&mut store, &train, &zeros, &actions, None, 1, &mut rng.split("inducing"))?;
    let mut adam = Adam::new(&store, AdamConfig { learning_rate, ..AdamConfig::default() });
    let points = (len - rgp.config.prefix()) as f64;
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let tape = Tape::new();
        let p = store.bind(&tape);
        let batch = SequenceBatch {
            latent: BeliefVars { mean: tape.constant(train.clone()), var: tape.constant(zeros.clone()) },
            actions: actions.clone(),
            rewards: None,
            chunks: 1,
            length: len,
        };
        let loss = rgp.elbo(&p, &batch, 1.0)?.elbo.neg().scale(1.0 / points);
        let grads = p.gradients(&tape.gradient(loss));
        adam.step(&mut store, &grads);
        losses.push(loss.item());
    }
    let cache = rgp.cache(&store)?;
    let full = data.full();
    let latents = vec![full.clone()];
    let mut predictions = Vec::with_capacity(data.test.len());
    let mut sq = 0.0;
    for i in len..full.len() {
        let x = assemble_layer_input(&rgp.config, LayerKind::Transition(0), i, &latents, &[])?;
        let m = cache.transitions[0].predict_moments(&x, &vec![0.0; x.len()])?;
        let pred: Vec<f64> = m.iter().map(|v| v.mean).collect();
        sq += pred.iter().zip(&full[i]).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        predictions.push(pred);
    }
    let rmse = (sq / (data.test.len() * data.dim).max(1) as f64).sqrt();
    Ok(SysidReport { rmse, losses, predictions })
}
