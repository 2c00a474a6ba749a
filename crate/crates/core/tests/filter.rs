use pbpf_core::filter::{
    estimate, init_particles, motion_update, observation_update, resample, Executor, FilterConfig, InitNoise, Particle,
    PhysicsFilter, Sequential, WeightOutcome,
};
use pbpf_core::physics::{
    sample_params, Control, ParamPrior, PenetrationPolicy, PhysicsBackend, PhysicsParams, PusherSlider, SceneModel,
};
use pbpf_core::rng::stream;
use pbpf_core::{pose_error, Error, NoiseSpec, Pose, Vec3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Splits the items over `workers` scoped threads.
struct Threads(usize);

impl Executor for Threads {
    fn try_for_each<T, F>(&self, items: &mut [T], f: F) -> Result<(), Error>
    where
        T: Send,
        F: Fn(usize, &mut T) -> Result<(), Error> + Sync + Send,
    {
        let chunk = items.len().div_ceil(self.0).max(1);
        let f = &f;
        let results: Vec<Result<(), Error>> = std::thread::scope(|s| {
            let handles: Vec<_> = items
                .chunks_mut(chunk)
                .enumerate()
                .map(|(c, part)| {
                    s.spawn(move || part.iter_mut().enumerate().try_for_each(|(i, x)| f(c * chunk + i, x)))
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        results.into_iter().collect()
    }
}

fn scene() -> SceneModel {
    SceneModel { half_extents: [0.03, 0.08], height: 0.21, pusher_radius: 0.01, gravity: 9.81, obstacles: Vec::new() }
}

fn truth_params() -> PhysicsParams {
    PhysicsParams::new(0.25, 0.35, 0.5, 0.38)
}

fn backends(n: usize) -> Vec<PusherSlider> {
    let b = PusherSlider::new(scene(), 0.002).unwrap().with_policy(PenetrationPolicy::Resolve);
    vec![b; n]
}

fn spread(n: usize, seed: u64) -> Vec<Particle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = Pose::planar(0.0, 0.0, 0.105, 0.0);
    let noise = InitNoise { pos_std: [0.01, 0.01, 0.0], rot_std: 0.05 };
    init_particles(Some(&center), n, &noise, &mut rng).unwrap()
}

fn push() -> Control {
    Control::new(Vec3::new(-0.045, 0.005, 0.05), Vec3::new(0.0032, 0.0, 0.0), 0.0, 0.16).unwrap()
}

#[test]
fn init_spread_matches_configured_stds() {
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let obs = Pose::planar(0.1, 0.2, 0.105, 0.3);
    let ps = init_particles(Some(&obs), 70, &InitNoise::default(), &mut rng).unwrap();
    let xs: Vec<f64> = ps.iter().map(|p| p.pose.position.x).collect();
    let mean = xs.iter().sum::<f64>() / 70.0;
    let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 69.0).sqrt();
    assert!((std / 0.07 - 1.0).abs() < 0.15, "x std {std}");
    assert!(ps.iter().all(|p| p.weight == 1.0 / 70.0));
}

#[test]
fn parallel_motion_update_is_bit_identical() {
    let cfg = FilterConfig::default();
    let b = backends(70);
    let mut seq = spread(70, 1);
    let mut par = seq.clone();
    for step in 1..=5 {
        motion_update(&mut seq, &push(), &cfg.param_prior, &cfg.motion_noise, &b, 42, step, &Sequential).unwrap();
        motion_update(&mut par, &push(), &cfg.param_prior, &cfg.motion_noise, &b, 42, step, &Threads(8)).unwrap();
    }
    let bits = |ps: &[Particle]| ps.iter().map(|p| p.pose.to_array().map(f64::to_bits)).collect::<Vec<_>>();
    assert_eq!(bits(&seq), bits(&par));
}

#[test]
fn particles_follow_their_own_rollout() {
    // Half of the particles sit in the pusher's path, the other half far
    // to the side.
    let mut ps: Vec<Particle> = (0..10)
        .map(|i| {
            let y = if i % 2 == 0 { 0.0 } else { 0.5 };
            Particle { pose: Pose::planar(0.0, y, 0.105, 0.0), weight: 0.1, stream: i }
        })
        .collect();
    let before = ps.clone();
    let prior = ParamPrior::default();
    let noise = NoiseSpec::new(0.001, 0.01).unwrap();
    let u = Control::new(Vec3::new(-0.045, 0.0, 0.05), Vec3::new(0.02, 0.0, 0.0), 0.0, 0.16).unwrap();
    let b = backends(10);
    motion_update(&mut ps, &u, &prior, &noise, &b, 9, 3, &Sequential).unwrap();
    for (p, old) in ps.iter().zip(&before) {
        let mut rng = stream(9, 3, old.stream);
        let params = sample_params(&prior, &mut rng);
        let predicted = b[0].predict(&old.pose, &u, &params).unwrap();
        let expect = pbpf_core::geometry::perturb_pose(&predicted, &noise, &mut rng);
        assert_eq!(p.pose, expect);
        let moved = pose_error(&predicted, &old.pose).positional;
        if old.pose.position.y == 0.0 {
            assert!(moved > 0.005, "touched particle moved {moved}");
        } else {
            assert_eq!(predicted, old.pose);
        }
    }
}

#[test]
fn permuting_particles_permutes_outputs() {
    let cfg = FilterConfig::default();
    let b = backends(20);
    let ps = spread(20, 3);
    let mut forward = ps.clone();
    let mut reversed: Vec<Particle> = ps.iter().rev().copied().collect();
    motion_update(&mut forward, &push(), &cfg.param_prior, &cfg.motion_noise, &b, 5, 1, &Sequential).unwrap();
    motion_update(&mut reversed, &push(), &cfg.param_prior, &cfg.motion_noise, &b, 5, 1, &Sequential).unwrap();
    reversed.reverse();
    assert_eq!(forward, reversed);
    let a = estimate(&forward).unwrap();
    reversed.reverse();
    let e = pose_error(&a, &estimate(&reversed).unwrap());
    assert!(e.positional < 1e-12 && e.rotational < 1e-7);
}

#[test]
fn resampling_frequencies_match_weights() {
    let weights = [0.5, 0.3, 0.2];
    let ps: Vec<Particle> = weights
        .iter()
        .enumerate()
        .map(|(i, w)| Particle { pose: Pose::planar(i as f64, 0.0, 0.0, 0.0), weight: *w, stream: i as u64 })
        .collect();
    let trials = 10_000;
    let mut counts = [0usize; 3];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..trials {
        for p in resample(&ps, &mut rng).unwrap() {
            counts[p.pose.position.x as usize] += 1;
        }
    }
    let n = (3 * trials) as f64;
    for (c, w) in counts.iter().zip(weights) {
        let sigma = (n * w * (1.0 - w)).sqrt();
        assert!((*c as f64 - n * w).abs() < 3.0 * sigma, "count {c} for weight {w}");
    }
}

#[test]
fn resampling_is_unbiased_for_random_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let m = 10;
    let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let ps: Vec<Particle> = raw
        .iter()
        .enumerate()
        .map(|(i, w)| Particle { pose: Pose::planar(i as f64, 0.0, 0.0, 0.0), weight: w / total, stream: i as u64 })
        .collect();
    let trials = 10_000;
    let mut counts = vec![0usize; m];
    for _ in 0..trials {
        let out = resample(&ps, &mut rng).unwrap();
        assert!(out.iter().enumerate().all(|(j, p)| p.weight == 1.0 / m as f64 && p.stream == j as u64));
        for p in out {
            counts[p.pose.position.x as usize] += 1;
        }
    }
    for (c, p) in counts.iter().zip(&ps) {
        let expect = trials as f64 * m as f64 * p.weight;
        let n = (trials * m) as f64;
        let sigma = (n * p.weight * (1.0 - p.weight)).sqrt();
        assert!((*c as f64 - expect).abs() < 3.0 * sigma, "count {c}, expected {expect}");
    }
}

#[test]
fn filter_contracts_towards_truth() {
    let mut cfg = FilterConfig::default();
    cfg.param_prior = ParamPrior::exact(&truth_params());
    cfg.motion_noise = NoiseSpec::ZERO;
    let u = push();
    let truth = Pose::planar(0.0, 0.0, 0.105, 0.0);
    let gt = PusherSlider::new(scene(), 1e-4).unwrap();
    let mut errors = Vec::new();
    for run in 0..5 {
        let mut f = PhysicsFilter::new(cfg, backends(70), Some(&truth), run).unwrap();
        let mut t = truth;
        let mut u = u;
        for _ in 0..10 {
            t = gt.predict(&t, &u, &truth_params()).unwrap();
            f.step(&u, Some(&t), &Sequential).unwrap();
            u.pusher_start = u.pusher_end();
        }
        errors.push(pose_error(&f.estimate().unwrap(), &t).positional);
    }
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    // Far inside the 0.07 m initial spread.
    assert!(mean < 0.01, "mean error {mean}");
}

#[test]
fn skipped_steps_keep_weights() {
    let cfg = FilterConfig::default();
    let obs = Pose::planar(0.0, 0.0, 0.105, 0.0);
    let mut f = PhysicsFilter::new(cfg, backends(70), Some(&obs), 1).unwrap();
    let weights: Vec<f64> = f.particles().iter().map(|p| p.weight).collect();
    let r = f.step(&Control::hold(Vec3::new(-0.2, 0.0, 0.05), 0.16), None, &Sequential).unwrap();
    assert_eq!(r.outcome, WeightOutcome::Skipped);
    assert!(!r.resampled);
    assert_eq!(f.particles().iter().map(|p| p.weight).collect::<Vec<_>>(), weights);
    let r = f.step(&Control::hold(Vec3::new(-0.2, 0.0, 0.05), 0.16), Some(&obs), &Sequential).unwrap();
    assert!(r.resampled && (r.weight_sum - 1.0).abs() < 1e-9);
    assert!(f.particles().iter().all(|p| p.weight == 1.0 / 70.0));
}

fn arb_offsets() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec((-0.2..0.2f64, -0.2..0.2f64, -1.0..1.0f64), 1..50)
}

proptest! {
    #[test]
    fn weights_are_normalized(offsets in arb_offsets(), ox in -0.5..0.5f64, big in any::<bool>()) {
        let mut ps: Vec<Particle> = offsets
            .iter()
            .enumerate()
            .map(|(i, (x, y, yaw))| Particle { pose: Pose::planar(*x, *y, 0.1, *yaw), weight: 1.0 / offsets.len() as f64, stream: i as u64 })
            .collect();
        // Far-away observations exercise the underflow floor.
        let shift = if big { 50.0 } else { 0.0 };
        let obs = Pose::planar(ox + shift, 0.0, 0.1, 0.3);
        let outcome = observation_update(&mut ps, Some(&obs), &NoiseSpec::new(0.02, 0.09).unwrap()).unwrap();
        let sum: f64 = ps.iter().map(|p| p.weight).sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        if big {
            prop_assert_eq!(outcome, WeightOutcome::Degenerate);
        }
    }
}
