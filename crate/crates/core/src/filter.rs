//! Physics-based particle filter.
//!
//! Each step runs a motion update (sampled physical parameters, one physics
//! rollout per particle, additive pose noise), weights the intermediate
//! particles against the observed pose, resamples when an observation was
//! available and reports the mean pose.
//!
//! The observation update, resampling and estimate functions here are shared
//! verbatim with the constant-velocity baseline.

use alloc::boxed::Box;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::geometry::{perturb_pose, pose_error, quat_average, sample_rotation, NoiseSpec, Pose, Quat, Vec3};
use crate::physics::{sample_params, Control, ParamPrior, PhysicsBackend};
use crate::rng::{stream, FILTER_LANE, INIT_LANE};
use crate::Error;

/// Raw likelihoods below this are treated as underflow.
pub const UNDERFLOW: f64 = 1e-300;
/// Uniform likelihood assigned when every particle underflows.
pub const LIKELIHOOD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub pose: Pose,
    pub weight: f64,
    /// Random-stream lane; equals the particle's slot after resampling.
    pub stream: u64,
}

/// Initialization spread around the first observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitNoise {
    /// Per-axis position std (x, y, z), m.
    pub pos_std: [f64; 3],
    /// Rotation-angle std, rad.
    pub rot_std: f64,
}

impl Default for InitNoise {
    fn default() -> Self {
        Self { pos_std: [0.07, 0.02, 0.01], rot_std: 0.04 }
    }
}

impl InitNoise {
    pub const ZERO: InitNoise = InitNoise { pos_std: [0.0; 3], rot_std: 0.0 };

    fn validate(&self) -> Result<(), Error> {
        if self.pos_std.iter().chain([self.rot_std].iter()).all(|s| *s >= 0.0 && s.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidConfig("initialization stds must be finite and non-negative"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    pub particles: usize,
    /// Update interval, s. Every rollout integrates exactly this much time.
    pub dt: f64,
    pub param_prior: ParamPrior,
    pub motion_noise: NoiseSpec,
    pub obs_noise: NoiseSpec,
    pub init_noise: InitNoise,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            particles: 70,
            dt: 0.16,
            param_prior: ParamPrior::default(),
            motion_noise: NoiseSpec { sigma_pos: 0.005, sigma_rot: 0.05 },
            obs_noise: NoiseSpec { sigma_pos: 0.02, sigma_rot: 0.09 },
            init_noise: InitNoise::default(),
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), Error> {
        validate_common(self.particles, self.dt, &self.motion_noise, &self.obs_noise, &self.init_noise)?;
        self.param_prior.validate()
    }
}

pub(crate) fn validate_common(
    particles: usize,
    dt: f64,
    motion: &NoiseSpec,
    obs: &NoiseSpec,
    init: &InitNoise,
) -> Result<(), Error> {
    if particles == 0 {
        return Err(Error::InvalidConfig("particle count must be at least 1"));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidConfig("update interval must be positive"));
    }
    motion.validate()?;
    if !(obs.sigma_pos > 0.0 && obs.sigma_rot > 0.0) {
        return Err(Error::InvalidConfig("observation noise must be strictly positive"));
    }
    init.validate()
}

/// Runs a fallible closure over every element, possibly in parallel.
///
/// Implementations must call `f` exactly once per element with its index
/// and, on failure, report the error of the lowest failing index.
pub trait Executor {
    fn try_for_each<T, F>(&self, items: &mut [T], f: F) -> Result<(), Error>
    where
        T: Send,
        F: Fn(usize, &mut T) -> Result<(), Error> + Sync + Send;
}

/// In-order, single-threaded executor.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn try_for_each<T, F>(&self, items: &mut [T], f: F) -> Result<(), Error>
    where
        T: Send,
        F: Fn(usize, &mut T) -> Result<(), Error> + Sync + Send,
    {
        items.iter_mut().enumerate().try_for_each(|(i, item)| f(i, item))
    }
}

/// Draws `count` particles around `first_obs` with uniform weights.
pub fn init_particles<R: Rng + ?Sized>(
    first_obs: Option<&Pose>,
    count: usize,
    noise: &InitNoise,
    rng: &mut R,
) -> Result<Vec<Particle>, Error> {
    let center = first_obs.ok_or(Error::NoInitialObservation)?;
    if count == 0 {
        return Err(Error::InvalidConfig("particle count must be at least 1"));
    }
    noise.validate()?;
    let weight = 1.0 / count as f64;
    let particles = (0..count)
        .map(|i| {
            let mut pose = *center;
            let mut offset = [0.0; 3];
            for (o, s) in offset.iter_mut().zip(noise.pos_std) {
                let z: f64 = rng.sample(StandardNormal);
                *o = z * s;
            }
            if noise.pos_std.iter().any(|s| *s != 0.0) {
                pose.position += Vec3::from(offset);
            }
            let dq = sample_rotation(noise.rot_std, rng);
            if noise.rot_std != 0.0 {
                pose = pose.with_orientation(dq * pose.orientation());
            }
            Particle { pose, weight, stream: i as u64 }
        })
        .collect();
    Ok(particles)
}

/// Physics motion update. Particle `m` draws its parameters and motion noise
/// from stream `(seed, step, m.stream)` and is rolled out by `backends[m]`.
#[allow(clippy::too_many_arguments)]
pub fn motion_update<B, E>(
    particles: &mut [Particle],
    control: &Control,
    prior: &ParamPrior,
    motion_noise: &NoiseSpec,
    backends: &[B],
    seed: u64,
    step: u64,
    exec: &E,
) -> Result<(), Error>
where
    B: PhysicsBackend + Sync,
    E: Executor,
{
    if backends.len() != particles.len() {
        return Err(Error::BackendCount { particles: particles.len(), backends: backends.len() });
    }
    exec.try_for_each(particles, |i, p| {
        let mut rng = stream(seed, step, p.stream);
        let params = sample_params(prior, &mut rng);
        let predicted = backends[i]
            .predict(&p.pose, control, &params)
            .map_err(|e| Error::Backend { index: i, source: Box::new(e) })?;
        p.pose = perturb_pose(&predicted, motion_noise, &mut rng);
        Ok(())
    })
}

/// Outcome of an observation update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightOutcome {
    /// No observation: weights untouched.
    Skipped,
    Weighted,
    /// Every likelihood underflowed; the uniform floor was applied.
    Degenerate,
}

fn gaussian_density(x: f64, sigma: f64) -> f64 {
    let z = x / sigma;
    libm::exp(-0.5 * z * z) / (sigma * libm::sqrt(2.0 * core::f64::consts::PI))
}

/// Product of independent Gaussian densities of the positional and
/// rotational error between `particle` and `observed`.
pub fn likelihood(particle: &Pose, observed: &Pose, noise: &NoiseSpec) -> f64 {
    let e = pose_error(particle, observed);
    gaussian_density(e.positional, noise.sigma_pos) * gaussian_density(e.rotational, noise.sigma_rot)
}

/// Multiplies weights by the observation likelihood and normalizes them.
/// Absent observations leave the set untouched.
pub fn observation_update(
    particles: &mut [Particle],
    observed: Option<&Pose>,
    noise: &NoiseSpec,
) -> Result<WeightOutcome, Error> {
    let Some(obs) = observed else {
        return Ok(WeightOutcome::Skipped);
    };
    if particles.is_empty() {
        return Err(Error::EmptyParticleSet);
    }
    let raw: Vec<f64> = particles.iter().map(|p| p.weight * likelihood(&p.pose, obs, noise)).collect();
    let mut outcome = WeightOutcome::Weighted;
    let raw = if raw.iter().all(|w| !(*w >= UNDERFLOW)) {
        outcome = WeightOutcome::Degenerate;
        raw.iter().map(|w| w.max(LIKELIHOOD_FLOOR)).collect()
    } else {
        raw
    };
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::ZeroTotalWeight);
    }
    for (p, w) in particles.iter_mut().zip(raw) {
        p.weight = w / total;
    }
    Ok(outcome)
}

/// Systematic (low-variance) resampling: one uniform offset, `M` evenly
/// spaced pointers over the cumulative weights. Outputs carry weight `1/M`
/// and stream lanes `0..M` in output order.
pub fn resample<R: Rng + ?Sized>(particles: &[Particle], rng: &mut R) -> Result<Vec<Particle>, Error> {
    let m = particles.len();
    if m == 0 {
        return Err(Error::EmptyParticleSet);
    }
    let total: f64 = particles.iter().map(|p| p.weight).sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::ZeroTotalWeight);
    }
    let stride = total / m as f64;
    let offset: f64 = rng.random::<f64>() * stride;
    let weight = 1.0 / m as f64;
    let mut out = Vec::with_capacity(m);
    let mut i = 0;
    let mut cumulative = particles[0].weight;
    for j in 0..m {
        let pointer = offset + j as f64 * stride;
        while cumulative <= pointer && i + 1 < m {
            i += 1;
            cumulative += particles[i].weight;
        }
        out.push(Particle { pose: particles[i].pose, weight, stream: j as u64 });
    }
    Ok(out)
}

/// Arithmetic mean position and eigenvector-mean orientation.
pub fn estimate(particles: &[Particle]) -> Result<Pose, Error> {
    if particles.is_empty() {
        return Err(Error::EmptyParticleSet);
    }
    let n = particles.len() as f64;
    // Offsets from the first particle keep a collapsed set exact.
    let origin = particles[0].pose.position;
    let mut sum = Vec3::ZERO;
    for p in particles {
        sum += p.pose.position - origin;
    }
    let quats: Vec<Quat> = particles.iter().map(|p| p.pose.orientation()).collect();
    let q = quat_average(&quats, None)?;
    Pose::new(origin + sum.scale(1.0 / n), q)
}

/// Result of one filter step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub estimate: Pose,
    pub outcome: WeightOutcome,
    /// Weight sum right after the observation update (1 unless skipped
    /// with unnormalized weights).
    pub weight_sum: f64,
    pub resampled: bool,
}

/// Weighting, conditional resampling and estimation shared by both
/// particle filters.
pub(crate) fn correct(
    particles: &mut Vec<Particle>,
    observed: Option<&Pose>,
    obs_noise: &NoiseSpec,
    seed: u64,
    step: u64,
) -> Result<StepReport, Error> {
    let outcome = observation_update(particles, observed, obs_noise)?;
    let weight_sum = particles.iter().map(|p| p.weight).sum();
    let resampled = outcome != WeightOutcome::Skipped;
    if resampled {
        let mut rng = stream(seed, step, FILTER_LANE);
        *particles = resample(particles, &mut rng)?;
    }
    Ok(StepReport { estimate: estimate(particles)?, outcome, weight_sum, resampled })
}

/// The physics-based particle filter.
#[derive(Debug, Clone)]
pub struct PhysicsFilter<B> {
    cfg: FilterConfig,
    backends: Vec<B>,
    particles: Vec<Particle>,
    seed: u64,
    step: u64,
}

impl<B: PhysicsBackend + Sync> PhysicsFilter<B> {
    /// Initializes around `first_obs`; `backends` holds one engine per particle.
    pub fn new(cfg: FilterConfig, backends: Vec<B>, first_obs: Option<&Pose>, seed: u64) -> Result<Self, Error> {
        cfg.validate()?;
        if backends.len() != cfg.particles {
            return Err(Error::BackendCount { particles: cfg.particles, backends: backends.len() });
        }
        let mut rng = stream(seed, 0, INIT_LANE);
        let particles = init_particles(first_obs, cfg.particles, &cfg.init_noise, &mut rng)?;
        Ok(Self { cfg, backends, particles, seed, step: 0 })
    }

    pub fn config(&self) -> &FilterConfig {
        &self.cfg
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn estimate(&self) -> Result<Pose, Error> {
        estimate(&self.particles)
    }

    /// Motion update with `control` (which must span `dt`), then the
    /// observation update; resamples only when `observed` is present.
    pub fn step<E: Executor>(&mut self, control: &Control, observed: Option<&Pose>, exec: &E) -> Result<StepReport, Error> {
        self.motion(control, exec)?;
        correct(&mut self.particles, observed, &self.cfg.obs_noise, self.seed, self.step)
    }

    /// Only the motion update of [`step`](Self::step); advances the step counter.
    pub fn motion<E: Executor>(&mut self, control: &Control, exec: &E) -> Result<(), Error> {
        self.step += 1;
        motion_update(
            &mut self.particles,
            control,
            &self.cfg.param_prior,
            &self.cfg.motion_noise,
            &self.backends,
            self.seed,
            self.step,
            exec,
        )
    }
}
