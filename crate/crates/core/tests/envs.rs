use std::f64::consts::PI;

use d2e::envs::*;
use d2e::numerics::RngStream;
use proptest::prelude::*;

#[test]
fn pendulum_equilibria() {
    let p = PendulumParams::default();
    let up = PendulumState { theta: 0.0, theta_dot: 0.0 };
    let (next, r) = pendulum_step(up, 0.0, &p);
    assert_eq!(next, up);
    assert_eq!(r, 0.0);
    let down = PendulumState { theta: PI, theta_dot: 0.0 };
    let (next, r) = pendulum_step(down, 0.0, &p);
    assert!(next.theta_dot.abs() < 1e-12);
    assert!((r + PI * PI).abs() < 1e-12);
}

#[test]
fn pendulum_matches_hand_integration() {
    let mut env = Pendulum::new(PendulumParams::default(), false);
    let mut rng = RngStream::new(3);
    env.reset(&mut rng);
    let s0 = env.state().unwrap();
    let (mut th, mut w) = (s0.theta, s0.theta_dot);
    for k in 0..300 {
        let u = 3.0 * (k as f64 * 0.37).sin();
        let uc = u.max(-2.0).min(2.0);
        let wrapped = ((th + PI) % (2.0 * PI) + 2.0 * PI) % (2.0 * PI) - PI;
        let reward = -(wrapped * wrapped + 0.1 * w * w + 0.001 * uc * uc);
        w += (15.0 * th.sin() + 3.0 * uc) * 0.05;
        w = w.max(-8.0).min(8.0);
        th += w * 0.05;
        let out = env.step(&[u]).unwrap();
        let s = env.state().unwrap();
        assert!((s.theta - th).abs() < 1e-12 && (s.theta_dot - w).abs() < 1e-12, "step {k}");
        assert!((out.reward - reward).abs() < 1e-12);
        assert!((out.observation[0] - th.cos()).abs() < 1e-12);
        assert!((out.observation[1] - th.sin()).abs() < 1e-12);
        assert_eq!(out.done, k + 1 >= 200);
    }
}

#[test]
fn passive_energy() {
    let p = PendulumParams::default();
    let mut s = PendulumState { theta: PI - 0.3, theta_dot: 0.0 };
    let e0 = pendulum_energy(s, &p);
    for _ in 0..100 {
        s = pendulum_step(s, 0.0, &p).0;
    }
    assert!((pendulum_energy(s, &p) - e0).abs() <= 0.01 * e0.abs());

    let damped = PendulumParams { damping: 0.5, ..p };
    let mut s = PendulumState { theta: PI - 1.0, theta_dot: 0.0 };
    let mut prev = pendulum_energy(s, &damped);
    for k in 0..1000 {
        s = pendulum_step(s, 0.0, &damped).0;
        let e = pendulum_energy(s, &damped);
        assert!(e <= prev + 1e-12, "energy rose at step {k}: {prev} -> {e}");
        prev = e;
    }
}

#[test]
fn pendulum_images_in_range() {
    let mut env = Pendulum::new(PendulumParams::default(), true);
    let mut rng = RngStream::new(1);
    let o = env.reset(&mut rng);
    assert_eq!(o.len(), 256);
    for _ in 0..50 {
        let r = env.step(&[1.0]).unwrap();
        assert!(r.observation.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    assert!(env.step(&[1.0, 2.0]).is_err());
}

#[test]
fn kink_map() {
    assert!((kink_fn(0.0) - 0.5).abs() < 1e-15);
    let mut r1 = RngStream::new(1);
    let mut r2 = RngStream::new(2);
    assert_eq!(kink_step(0.3, &mut r1, 0.0), kink_step(0.3, &mut r2, 0.0));
    let mut rng = RngStream::new(5);
    for k in 0..5 {
        let mut z = -2.0 + 0.75 * k as f64;
        for t in 0..100_000 {
            z = kink_step(z, &mut rng, 0.0);
            if t >= 10 {
                assert!((-3.0..=1.5).contains(&z), "z = {z} at {t}");
            }
        }
    }
}

#[test]
fn dotchaser_examples() {
    let mut env = DotChaser::new();
    let mut rng = RngStream::new(4);
    env.reset(&mut rng);
    let s = env.state().unwrap();
    let r = env.step(&[0.0, 0.0]).unwrap();
    assert_eq!(env.state().unwrap().agent, s.agent);
    env.set_state(DotState { agent: [0.3, 0.3], target: [0.3, 0.3] });
    assert_eq!(env.step(&[0.0, 0.0]).unwrap().reward, 0.0);
    env.set_state(DotState { agent: [0.95, 0.5], target: [0.1, 0.1] });
    env.step(&[1.0, -1.0]).unwrap();
    let s = env.state().unwrap();
    assert_eq!(s.agent[0], 1.0);
    assert!((s.agent[1] - 0.4).abs() < 1e-12);
    assert!(r.observation.iter().all(|v| (0.0..=1.0).contains(v)));
}

proptest! {
    #[test]
    fn rendered_centroid_tracks_the_dot(x in 0.0f64..1.0, y in 0.0f64..1.0) {
        let img = render_dots(&[([x, y], 1.0)]);
        let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
        for r in 0..IMAGE_SIDE {
            for c in 0..IMAGE_SIDE {
                let v = img[r * IMAGE_SIDE + c];
                sw += v;
                sx += v * c as f64;
                sy += v * r as f64;
            }
        }
        let top = (IMAGE_SIDE - 1) as f64;
        prop_assert!((sx / sw - x * top).abs() <= 1.0);
        prop_assert!((sy / sw - y * top).abs() <= 1.0);
    }
}

#[test]
fn sysid_split_and_determinism() {
    let d = make_sysid_dataset(System::Kink, 10, 0.0, 2, &mut RngStream::new(1)).unwrap();
    assert_eq!((d.train.len(), d.test.len()), (8, 2));
    let a = make_sysid_dataset(System::Kink, 500, 0.05, 2, &mut RngStream::new(7)).unwrap();
    let b = make_sysid_dataset(System::Kink, 500, 0.05, 2, &mut RngStream::new(7)).unwrap();
    assert_eq!(a, b);
    let full = d.full();
    for k in 1..full.len() {
        assert_eq!(full[k][0], kink_fn(full[k - 1][0]));
    }
    assert!(make_sysid_dataset(System::Kink, 2, 0.0, 2, &mut RngStream::new(1)).is_err());
    let p = make_sysid_dataset(System::PendulumPassive, 50, 0.0, 2, &mut RngStream::new(1)).unwrap();
    assert_eq!(p.dim, 2);
}

#[test]
fn replaying_a_seed_is_bit_exact() {
    for kind in [EnvKind::Pendulum, EnvKind::DotChaser] {
        let run = || {
            let mut env = kind.make();
            let mut rng = RngStream::new(11);
            let mut out = env.reset(&mut rng);
            let dim = env.spec().action_dim();
            for k in 0..30 {
                let a: Vec<f64> = (0..dim).map(|j| ((k + j) as f64).cos()).collect();
                let r = env.step(&a).unwrap();
                out.extend(r.observation);
                out.push(r.reward);
            }
            out.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}

#[test]
fn action_scaling() {
    let env = EnvKind::Pendulum.make();
    assert_eq!(env.spec().scale_action(&[1.0]), vec![2.0]);
    assert_eq!(env.spec().scale_action(&[-3.0]), vec![-2.0]);
    assert_eq!(env.spec().scale_action(&[0.0]), vec![0.0]);
    assert!("cartpole".parse::<EnvKind>().is_err());
}
