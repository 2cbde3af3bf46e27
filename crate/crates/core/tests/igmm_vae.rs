use d2e::igmm_vae::*;
use d2e::numerics::gradcheck::check_store_gradients;
use d2e::numerics::{Matrix, ParamStore, RngStream, Tape};
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn chi_square_pvalue(counts: &[usize], probs: &[f64]) -> f64 {
    let n: usize = counts.iter().sum();
    let stat: f64 = counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| {
            let e = p * n as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
}

#[test]
fn stick_break_sums_to_one_for_sixteen_components() {
    let mut rng = RngStream::new(8);
    for _ in 0..100 {
        let nu: Vec<f64> = rng.uniforms(15);
        let s: f64 = stick_break(&nu).unwrap().iter().sum();
        assert!((s - 1.0).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]
    #[test]
    fn stick_break_is_a_distribution(nu in prop::collection::vec(1e-9f64..1.0 - 1e-9, 1..20)) {
        let theta = stick_break(&nu).unwrap();
        prop_assert!(theta.iter().all(|t| *t >= 0.0));
        prop_assert!((theta.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]
    #[test]
    fn kumaraswamy_beta_kl_nonnegative(la in -3.0f64..3.0, lb in -3.0f64..3.0, lbeta in -2.0f64..2.0) {
        let kl = kl_kumaraswamy_beta(la.exp(), lb.exp(), lbeta.exp()).unwrap();
        prop_assert!(kl >= -1e-9, "kl={}", kl);
    }

    #[test]
    fn responsibilities_sum_to_one(seed in 0u64..1000) {
        let mut rng = RngStream::new(seed);
        let k = 1 + rng.below(6);
        let d = 1 + rng.below(4);
        let z = rng.normals(d);
        let means = Matrix::from_fn(k, d, |_, _| 2.0 * rng.normal());
        let vars = Matrix::from_fn(k, d, |_, _| (0.5 * rng.normal()).exp());
        let mut theta: Vec<f64> = rng.uniforms(k);
        let s: f64 = theta.iter().sum();
        theta.iter_mut().for_each(|t| *t /= s);
        let r = responsibilities(&z, &means, &vars, &theta).unwrap();
        prop_assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn kumaraswamy_samples_pass_ks_test() {
    let mut rng = RngStream::new(21);
    let n = 100_000;
    let mut xs: Vec<f64> = (0..n).map(|_| kumaraswamy_sample(2.0, 3.0, &mut rng).unwrap()).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = 1.0 - (1.0 - x * x).powi(3);
        d = d.max((f - i as f64 / n as f64).abs()).max(((i + 1) as f64 / n as f64 - f).abs());
    }
    let critical = 1.6276 / (n as f64).sqrt();
    assert!(d < critical, "KS statistic {d} >= {critical}");
}

#[test]
fn kumaraswamy_beta_kl_matches_monte_carlo() {
    let (a, b, beta) = (2.0, 3.0, 2.0);
    let closed = kl_kumaraswamy_beta(a, b, beta).unwrap();
    let mut rng = RngStream::new(5);
    let n = 1_000_000;
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let v = kumaraswamy_sample(a, b, &mut rng).unwrap();
        let log_q = (a * b).ln() + (a - 1.0) * v.ln() + (b - 1.0) * (1.0 - v.powf(a)).ln();
        let log_p = beta.ln() + (beta - 1.0) * (1.0 - v).ln();
        let r = log_q - log_p;
        s += r;
        s2 += r * r;
    }
    let mean = s / n as f64;
    let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
    assert!((closed - mean).abs() < 3.0 * se, "closed {closed} mc {mean} se {se}");
}

#[test]
fn gumbel_argmax_frequencies_follow_softmax() {
    let logits = [1.0, 0.0, -0.5, 2.0];
    let z: f64 = logits.iter().map(|l: &f64| l.exp()).sum();
    let probs: Vec<f64> = logits.iter().map(|l| l.exp() / z).collect();
    let mut rng = RngStream::new(17);
    for &temp in &[0.3, 1.0] {
        let mut counts = vec![0usize; 4];
        for _ in 0..100_000 {
            let y = gumbel_softmax_sample(&logits, temp, &mut rng).unwrap();
            let arg = (0..4).fold(0, |b, j| if y[j] > y[b] { j } else { b });
            counts[arg] += 1;
        }
        assert!(chi_square_pvalue(&counts, &probs) > 0.01, "{counts:?}");
    }
    let mut counts = vec![0usize; 3];
    for _ in 0..30_000 {
        let y = gumbel_softmax_sample(&[0.0; 3], 0.5, &mut rng).unwrap();
        counts[(0..3).fold(0, |b, j| if y[j] > y[b] { j } else { b })] += 1;
    }
    assert!(chi_square_pvalue(&counts, &[1.0 / 3.0; 3]) > 0.01);
}

#[test]
fn gaussian_kl_matches_monte_carlo() {
    let mut rng = RngStream::new(9);
    let mq = rng.normals(5);
    let vq: Vec<f64> = (0..5).map(|_| (0.3 * rng.normal()).exp()).collect();
    let mp = rng.normals(5);
    let vp: Vec<f64> = (0..5).map(|_| (0.3 * rng.normal()).exp()).collect();
    let closed = gaussian_kl_diag(&mq, &vq, &mp, &vp).unwrap();
    let n = 1_000_000;
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let mut r = 0.0;
        for d in 0..5 {
            let x = mq[d] + vq[d].sqrt() * rng.normal();
            r += -0.5 * (vq[d].ln() + (x - mq[d]).powi(2) / vq[d]) + 0.5 * (vp[d].ln() + (x - mp[d]).powi(2) / vp[d]);
        }
        s += r;
        s2 += r * r;
    }
    let mean = s / n as f64;
    let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
    assert!((closed - mean).abs() < 3.0 * se, "closed {closed} mc {mean} se {se}");
}

#[test]
fn responsibilities_match_direct_quotient() {
    let mut rng = RngStream::new(33);
    for _ in 0..50 {
        let (k, d) = (4, 3);
        let z = rng.normals(d);
        let means = Matrix::from_fn(k, d, |_, _| rng.normal());
        let vars = Matrix::from_fn(k, d, |_, _| (0.3 * rng.normal()).exp());
        let theta = stick_break(&[0.3, 0.5, 0.4]).unwrap();
        let r = responsibilities(&z, &means, &vars, &theta).unwrap();
        let dens: Vec<f64> = (0..k)
            .map(|j| {
                theta[j]
                    * (0..d)
                        .map(|e| {
                            let v = vars[(j, e)];
                            (-(z[e] - means[(j, e)]).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
                        })
                        .product::<f64>()
            })
            .collect();
        let tot: f64 = dens.iter().sum();
        for j in 0..k {
            assert!((r[j] - dens[j] / tot).abs() < 1e-13);
        }
    }
}

fn small_model(k: usize, dz: usize, seed: u64) -> (IgmmVae, ParamStore) {
    let cfg = IgmmConfig { truncation: k, latent_dim: dz, style_dim: 2, obs_dim: 3, hidden: 8, ..IgmmConfig::default() };
    let mut store = ParamStore::new();
    let model = IgmmVae::new(cfg, &mut store, &mut RngStream::new(seed)).unwrap();
    (model, store)
}

#[test]
fn single_component_elbo_equals_vanilla_vae() {
    let (model, mut store) = small_model(1, 2, 4);
    model.seed_components(&mut store, &Matrix::zeros(1, 2), 0.0);
    let mut rng = RngStream::new(1);
    let x = Matrix::from_fn(5, 3, |_, _| rng.normal());
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let elbo = model.elbo(&tape, &p, &x, 1.0, &mut RngStream::new(77)).unwrap().loss.item();

    // Straight-line evaluation with the same draws.
    let mut noise = RngStream::new(77);
    let heads = model.encode(&p, tape.constant(x.clone()));
    let (zm, zlv) = (heads.z_mean.value(), heads.z_logvar.value());
    let (wm, wlv) = (heads.w_mean.value(), heads.w_logvar.value());
    let eps_z = Matrix::from_fn(5, 2, |_, _| noise.normal());
    let _eps_w = Matrix::from_fn(5, 2, |_, _| noise.normal());
    let z = Matrix::from_fn(5, 2, |i, j| zm[(i, j)] + (0.5 * zlv[(i, j)]).exp() * eps_z[(i, j)]);
    let (xm, xlv) = model.decode(&p, tape.constant(z));
    let (xm, xlv) = (xm.value(), xlv.value());
    let mut total = 0.0;
    for i in 0..5 {
        let mut rec = 0.0;
        for j in 0..3 {
            rec += -0.5 * ((2.0 * std::f64::consts::PI).ln() + xlv[(i, j)] + (x[(i, j)] - xm[(i, j)]).powi(2) / xlv[(i, j)].exp());
        }
        let kl = |m: &Matrix, lv: &Matrix| -> f64 {
            (0..2).map(|j| 0.5 * (lv[(i, j)].exp() + m[(i, j)].powi(2) - 1.0 - lv[(i, j)])).sum()
        };
        total += rec - kl(&zm, &zlv) - kl(&wm, &wlv);
    }
    let vanilla = -total / 5.0;
    assert!((elbo - vanilla).abs() < 1e-8, "{elbo} vs {vanilla}");
}

#[test]
fn elbo_terms_are_nonnegative_kls() {
    let (model, store) = small_model(4, 2, 5);
    let mut rng = RngStream::new(2);
    let x = Matrix::from_fn(16, 3, |_, _| rng.normal());
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let t = model.elbo(&tape, &p, &x, 1.0, &mut rng).unwrap();
    for v in [t.kl_style, t.kl_latent, t.kl_assignment, t.kl_sticks] {
        assert!(v.value().as_slice().iter().all(|k| *k >= -1e-9), "{:?}", v.value());
    }
    assert!(t.loss.item().is_finite());
}

#[test]
fn elbo_gradients_match_finite_differences() {
    let (model, store) = small_model(3, 2, 6);
    let mut rng = RngStream::new(3);
    let x = Matrix::from_fn(4, 3, |_, _| rng.normal());
    let report = check_store_gradients(&store, 1e-5, |tape, p| {
        model.elbo(tape, p, &x, 1.0, &mut RngStream::new(99)).unwrap().loss
    });
    assert!(report.passes(1e-4), "{report:?}");
}

#[test]
fn relaxed_assignment_gradients_match_finite_differences() {
    let cfg = IgmmConfig {
        truncation: 3,
        latent_dim: 2,
        obs_dim: 3,
        hidden: 6,
        gumbel_assignments: true,
        samples: 2,
        ..IgmmConfig::default()
    };
    let mut store = ParamStore::new();
    let model = IgmmVae::new(cfg, &mut store, &mut RngStream::new(1)).unwrap();
    let x = Matrix::from_fn(3, 3, |i, j| (i + 2 * j) as f64 * 0.3 - 0.5);
    let report = check_store_gradients(&store, 1e-5, |tape, p| {
        model.elbo(tape, p, &x, 0.5, &mut RngStream::new(4)).unwrap().loss
    });
    assert!(report.passes(1e-4), "{report:?}");
}

#[test]
fn convolutional_path_shapes_and_gradients() {
    let cfg = IgmmConfig {
        truncation: 3,
        latent_dim: 2,
        obs_dim: 256,
        hidden: 8,
        architecture: Architecture::Conv { side: 16 },
        ..IgmmConfig::default()
    };
    let mut store = ParamStore::new();
    let model = IgmmVae::new(cfg, &mut store, &mut RngStream::new(2)).unwrap();
    let mut rng = RngStream::new(5);
    let x = Matrix::from_fn(2, 256, |_, _| rng.uniform());
    let tape = Tape::new();
    let p = store.bind(&tape);
    let t = model.elbo(&tape, &p, &x, 1.0, &mut rng).unwrap();
    assert_eq!(t.heads.z_mean.shape(), (2, 2));
    assert!(t.loss.item().is_finite());
    let g = tape.gradient(t.loss);
    assert!(p.gradients(&g).iter().all(|m| m.is_finite()));
}

#[test]
fn config_validation() {
    assert!(IgmmConfig::default().validate().is_ok());
    assert!(IgmmConfig { truncation: 1, ..IgmmConfig::default() }.validate().is_err());
    assert!(IgmmConfig { concentration: 0.0, ..IgmmConfig::default() }.validate().is_err());
    let t = TemperatureSchedule::default();
    assert_eq!(t.at(0), 1.0);
    assert!((t.at(1) - 0.999).abs() < 1e-15);
    assert_eq!(t.at(100_000), 0.3);
}
