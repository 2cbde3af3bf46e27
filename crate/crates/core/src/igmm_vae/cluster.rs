//! Stand-alone clustering runs of the mixture VAE.

use super::{IgmmError, IgmmVae};
use crate::numerics::optim::{Adam, AdamConfig};
use crate::numerics::{Matrix, ParamStore, RngStream, Tape};

/// Points from three isotropic Gaussians with well-separated centres.
pub fn three_cluster_data(n: usize, rng: &mut RngStream) -> (Matrix, Vec<usize>) {
    const CENTRES: [[f64; 2]; 3] = [[-4.0, -2.0], [4.0, -2.0], [0.0, 4.5]];
    const SPREAD: f64 = 0.5;
    let mut x = Matrix::zeros(n, 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 3;
        x[(i, 0)] = CENTRES[c][0] + SPREAD * rng.normal();
        x[(i, 1)] = CENTRES[c][1] + SPREAD * rng.normal();
        labels.push(c);
    }
    (x, labels)
}

/// Fraction of points whose predicted cluster's majority label matches theirs.
/// Unassigned points (`None`) count as errors.
pub fn purity(assigned: &[Option<usize>], labels: &[usize]) -> f64 {
    assert_eq!(assigned.len(), labels.len(), "purity lengths");
    if labels.is_empty() {
        return 0.0;
    }
    let n_labels = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (a, &l) in assigned.iter().zip(labels) {
        if let Some(a) = a {
            counts.entry(*a).or_insert_with(|| vec![0; n_labels])[l] += 1;
        }
    }
    let hit: usize = counts.values().map(|c| c.iter().copied().max().unwrap_or(0)).sum();
    hit as f64 / labels.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClusterTraining {
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    /// Autoencoder-only steps before the mixture prior is seeded.
    pub warmup_steps: usize,
    /// Weight of the KL terms during warm-up.
    pub warmup_kl_weight: f64,
}

impl Default for ClusterTraining {
    fn default() -> Self {
        Self { steps: 3000, batch: 100, learning_rate: 3e-3, warmup_steps: 500, warmup_kl_weight: 0.05 }
    }
}

/// k-means++ seeding: returns `k` rows of `x` spread out by squared distance.
pub fn kmeans_pp_seeds(x: &Matrix, k: usize, rng: &mut RngStream) -> Matrix {
    let n = x.rows();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
    let mut seeds = vec![rng.below(n)];
    let mut best: Vec<f64> = (0..n).map(|i| dist(x.row_slice(i), x.row_slice(seeds[0]))).collect();
    while seeds.len() < k {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.uniform() * total;
            let mut chosen = n - 1;
            for (i, d) in best.iter().enumerate() {
                if u < *d {
                    chosen = i;
                    break;
                }
                u -= d;
            }
            chosen
        } else {
            rng.below(n)
        };
        seeds.push(pick);
        for (i, b) in best.iter_mut().enumerate() {
            *b = b.min(dist(x.row_slice(i), x.row_slice(pick)));
        }
    }
    let mut out = Matrix::zeros(k, x.cols());
    for (r, &i) in seeds.iter().enumerate() {
        out.row_slice_mut(r).copy_from_slice(x.row_slice(i));
    }
    out
}

#[derive(Clone, Debug)]
pub struct ClusterReport {
    pub purity: f64,
    /// Components whose dataset-averaged weight exceeds 0.05.
    pub occupied: usize,
    pub mean_weights: Vec<f64>,
    pub assignments: Vec<Option<usize>>,
    pub losses: Vec<f64>,
}

/// Evaluate purity and occupancy of a trained model.
pub fn evaluate_clustering(model: &IgmmVae, store: &ParamStore, x: &Matrix, labels: &[usize]) -> ClusterReport {
    let summary = model.summarize(store, x);
    let k = model.truncation();
    let mut mean_weights = vec![0.0; k];
    for t in &summary.theta {
        for (m, v) in mean_weights.iter_mut().zip(t) {
            *m += v / x.rows() as f64;
        }
    }
    let assignments: Vec<Option<usize>> = summary
        .responsibilities
        .iter()
        .map(|r| {
            r.as_ref().map(|r| {
                r.iter().enumerate().fold(0, |best, (j, v)| if *v > r[best] { j } else { best })
            })
        })
        .collect();
    ClusterReport {
        purity: purity(&assignments, labels),
        occupied: mean_weights.iter().filter(|w| **w > 0.05).count(),
        mean_weights,
        assignments,
        losses: Vec::new(),
    }
}

fn seed_from_latents(model: &IgmmVae, store: &mut ParamStore, x: &Matrix, rng: &mut RngStream) {
    let z = model.summarize(store, x).z_mean;
    let k = model.truncation();
    let seeds = kmeans_pp_seeds(&z, k, rng);
    // Shared variance: mean squared distance to the nearest seed.
    let mut acc = 0.0;
    for i in 0..z.rows() {
        let near = (0..k)
            .map(|j| z.row_slice(i).iter().zip(seeds.row_slice(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        acc += near;
    }
    let var = (acc / (z.rows() * z.cols()) as f64).max(1e-3);
    model.seed_components(store, &seeds, var.ln());
}

/// Fit the model to `x` alone and report clustering quality against `labels`.
pub fn train_clustering(
    model: &IgmmVae,
    store: &mut ParamStore,
    x: &Matrix,
    labels: &[usize],
    training: ClusterTraining,
    rng: &mut RngStream,
) -> Result<ClusterReport, IgmmError> {
    let mut adam = Adam::new(store, AdamConfig { learning_rate: training.learning_rate, ..AdamConfig::default() });
    let n = x.rows();
    let mut losses = Vec::with_capacity(training.steps);
    for step in 0..training.steps {
        let idx: Vec<usize> = (0..training.batch.min(n)).map(|_| rng.below(n)).collect();
        let mut batch = Matrix::zeros(idx.len(), x.cols());
        for (r, &i) in idx.iter().enumerate() {
            batch.row_slice_mut(r).copy_from_slice(x.row_slice(i));
        }
        let tape = Tape::new();
        let p = store.bind(&tape);
        let temperature = model.config.temperature.at(step as u64);
        let terms = model.elbo(&tape, &p, &batch, temperature, rng)?;
        losses.push(terms.loss.item());
        let objective = if step < training.warmup_steps {
            let kl = terms.kl_style.add(terms.kl_latent).add(terms.kl_assignment).add(terms.kl_sticks);
            terms.reconstruction.sub(kl.scale(training.warmup_kl_weight)).mean().neg()
        } else {
            terms.loss
        };
        let g = tape.gradient(objective);
        let grads = p.gradients(&g);
        adam.step(store, &grads);
        if step + 1 == training.warmup_steps {
            seed_from_latents(model, store, x, rng);
            adam = Adam::new(store, adam.config);
        }
    }
    let mut report = evaluate_clustering(model, store, x, labels);
    report.losses = losses;
    Ok(report)
}
