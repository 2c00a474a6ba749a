//! Comparison trackers: the held single-snapshot estimate and the
//! constant-velocity particle filter.

use alloc::vec::Vec;

use crate::filter::{correct, init_particles, Executor, FilterConfig, InitNoise, Particle, StepReport};
use crate::geometry::{perturb_pose, NoiseSpec, Pose, Quat, Vec3};
use crate::observer::Observation;
use crate::rng::{stream, INIT_LANE};
use crate::Error;

/// Reports the latest observation, holding the last one while none arrive.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SnapshotTracker {
    last_reported: Option<Pose>,
}

impl SnapshotTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn last_reported(&self) -> Option<Pose> {
        self.last_reported
    }

    pub fn track(&mut self, obs: &Observation) -> Result<Pose, Error> {
        if let Some(p) = obs.pose {
            self.last_reported = Some(p);
        }
        self.last_reported.ok_or(Error::NoPoseObserved)
    }
}

/// World-frame pose increment: `translation` is added to positions and
/// `rotation` multiplies orientations from the left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseDelta {
    pub translation: Vec3,
    pub rotation: Quat,
}

impl PoseDelta {
    pub const IDENTITY: PoseDelta = PoseDelta { translation: Vec3::ZERO, rotation: Quat::IDENTITY };

    pub fn apply(&self, pose: &Pose) -> Pose {
        let moved = pose.position + self.translation;
        // unit quaternion product; renormalized by `Pose::new`
        Pose::new(moved, self.rotation * pose.orientation()).unwrap_or(*pose)
    }
}

/// Difference between the two most recent estimates; identity until two exist.
pub fn cv_delta(prev: Option<&Pose>, prev2: Option<&Pose>) -> PoseDelta {
    match (prev, prev2) {
        (Some(a), Some(b)) => PoseDelta {
            translation: a.position - b.position,
            rotation: (a.orientation() * b.orientation().conjugate()).normalized().unwrap_or(Quat::IDENTITY),
        },
        _ => PoseDelta::IDENTITY,
    }
}

/// Shifts every particle by `delta`, then adds motion noise from the
/// particle's stream `(seed, step, stream)`.
pub fn cv_motion_update<E: Executor>(
    particles: &mut [Particle],
    delta: &PoseDelta,
    noise: &NoiseSpec,
    seed: u64,
    step: u64,
    exec: &E,
) -> Result<(), Error> {
    exec.try_for_each(particles, |_, p| {
        let mut rng = stream(seed, step, p.stream);
        p.pose = perturb_pose(&delta.apply(&p.pose), noise, &mut rng);
        Ok(())
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvpfConfig {
    pub particles: usize,
    pub dt: f64,
    pub motion_noise: NoiseSpec,
    pub obs_noise: NoiseSpec,
    pub init_noise: InitNoise,
}

impl Default for CvpfConfig {
    fn default() -> Self {
        let pbpf = FilterConfig::default();
        Self {
            particles: 200,
            dt: 0.02,
            motion_noise: pbpf.motion_noise,
            obs_noise: pbpf.obs_noise,
            init_noise: pbpf.init_noise,
        }
    }
}

impl CvpfConfig {
    pub fn validate(&self) -> Result<(), Error> {
        crate::filter::validate_common(self.particles, self.dt, &self.motion_noise, &self.obs_noise, &self.init_noise)
    }
}

/// Particle filter whose motion model repeats the last estimated pose change.
#[derive(Debug, Clone)]
pub struct ConstantVelocityFilter {
    cfg: CvpfConfig,
    particles: Vec<Particle>,
    prev: Option<Pose>,
    prev2: Option<Pose>,
    seed: u64,
    step: u64,
}

impl ConstantVelocityFilter {
    pub fn new(cfg: CvpfConfig, first_obs: Option<&Pose>, seed: u64) -> Result<Self, Error> {
        cfg.validate()?;
        let mut rng = stream(seed, 0, INIT_LANE);
        let particles = init_particles(first_obs, cfg.particles, &cfg.init_noise, &mut rng)?;
        let prev = Some(crate::filter::estimate(&particles)?);
        Ok(Self { cfg, particles, prev, prev2: None, seed, step: 0 })
    }

    pub fn config(&self) -> &CvpfConfig {
        &self.cfg
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn step<E: Executor>(&mut self, observed: Option<&Pose>, exec: &E) -> Result<StepReport, Error> {
        self.step += 1;
        let delta = cv_delta(self.prev.as_ref(), self.prev2.as_ref());
        cv_motion_update(&mut self.particles, &delta, &self.cfg.motion_noise, self.seed, self.step, exec)?;
        let report = correct(&mut self.particles, observed, &self.cfg.obs_noise, self.seed, self.step)?;
        self.prev2 = self.prev;
        self.prev = Some(report.estimate);
        Ok(report)
    }
}
