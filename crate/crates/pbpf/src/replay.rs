//! Offline replay of recorded runs through each tracker.
//!
//! Every method sees the same recorded controls and observations. A filter
//! with update interval `dt` consumes every `dt / frame_period`-th frame;
//! errors are reported on the full frame grid using the latest estimate
//! available at each frame.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use pbpf_core::baselines::{ConstantVelocityFilter, CvpfConfig, SnapshotTracker};
use pbpf_core::filter::{Executor, FilterConfig, PhysicsFilter, WeightOutcome};
use pbpf_core::observer::Observation;
use pbpf_core::physics::{Control, PenetrationPolicy, PusherSlider, DEFAULT_DT_SUB};
use pbpf_core::rng::derive_seed;
use pbpf_core::{pose_error, Pose, PoseError};

use crate::runlog::RunLog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Pbpf,
    Cvpf,
    Snapshot,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Pbpf, Method::Cvpf, Method::Snapshot];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pbpf => "pbpf",
            Method::Cvpf => "cvpf",
            Method::Snapshot => "snapshot",
        }
    }

    fn salt(self) -> u64 {
        match self {
            Method::Pbpf => 0x9bf,
            Method::Cvpf => 0xc7f,
            Method::Snapshot => 0x5a9,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown method `{0}` (expected pbpf, cvpf or snapshot)")]
pub struct UnknownMethod(pub String);

impl FromStr for Method {
    type Err = UnknownMethod;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "pbpf" => Ok(Method::Pbpf),
            "cvpf" => Ok(Method::Cvpf),
            "snapshot" => Ok(Method::Snapshot),
            other => Err(UnknownMethod(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayConfig {
    pub pbpf: FilterConfig,
    /// Sub-step of the particles' physics rollouts, s.
    pub dt_sub: f64,
    pub cvpf: CvpfConfig,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self { pbpf: FilterConfig::default(), dt_sub: DEFAULT_DT_SUB, cvpf: CvpfConfig::default() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("{method}: update interval {dt} s is not a whole number of {frame_period} s frames")]
    Interval { method: Method, dt: f64, frame_period: f64 },
    #[error("{method}: the log contains no observation")]
    NoObservation { method: Method },
    #[error("{method}: {source} (frame {frame})")]
    Filter { method: Method, frame: usize, source: pbpf_core::Error },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameResult {
    pub t: f64,
    pub estimate: Pose,
    pub error: PoseError,
}

/// One filter update, for the timing report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTiming {
    pub t: f64,
    pub seconds: f64,
    pub outcome: WeightOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub method: Method,
    /// Frames from the first observation onward.
    pub frames: Vec<FrameResult>,
    pub steps: Vec<StepTiming>,
}

fn stride(method: Method, dt: f64, fp: f64) -> Result<usize, ReplayError> {
    let n = (dt / fp).round();
    if n < 1.0 || (n * fp - dt).abs() > 1e-9 * dt.max(1.0) {
        return Err(ReplayError::Interval { method, dt, frame_period: fp });
    }
    Ok(n as usize)
}

/// Replays `log` through `method`. Filter seeds derive from the log's seed.
pub fn replay<E: Executor>(log: &RunLog, method: Method, cfg: &ReplayConfig, exec: &E) -> Result<Replay, ReplayError> {
    let k0 = log
        .records
        .iter()
        .position(|r| r.observation.is_some())
        .ok_or(ReplayError::NoObservation { method })?;
    let seed = derive_seed(log.header.seed, method.salt());
    let fail = |frame: usize| move |source| ReplayError::Filter { method, frame, source };
    let fp = log.header.frame_period;

    let mut estimates = Vec::with_capacity(log.records.len() - k0);
    let mut steps = Vec::new();
    match method {
        Method::Snapshot => {
            let mut s = SnapshotTracker::new();
            for (k, r) in log.records.iter().enumerate().skip(k0) {
                estimates.push(s.track(&Observation { time: r.t, pose: r.observation }).map_err(fail(k))?);
            }
        }
        Method::Pbpf => {
            let n = stride(method, cfg.pbpf.dt, fp)?;
            let backend = PusherSlider::new(log.header.scene.clone(), cfg.dt_sub)
                .map_err(fail(k0))?
                .with_policy(PenetrationPolicy::Resolve);
            let backends = vec![backend; cfg.pbpf.particles];
            let first = log.records[k0].observation;
            let mut filter = PhysicsFilter::new(cfg.pbpf, backends, first.as_ref(), seed).map_err(fail(k0))?;
            let controls = log.controls();
            let mut est = filter.estimate().map_err(fail(k0))?;
            for k in k0..log.records.len() {
                if k > k0 && (k - k0) % n == 0 {
                    let mut u = Control::concat(&controls[k + 1 - n..=k]).expect("stride is non-empty");
                    u.duration = cfg.pbpf.dt;
                    let start = Instant::now();
                    let report = filter.step(&u, log.records[k].observation.as_ref(), exec).map_err(fail(k))?;
                    steps.push(StepTiming { t: log.records[k].t, seconds: start.elapsed().as_secs_f64(), outcome: report.outcome });
                    est = report.estimate;
                }
                estimates.push(est);
            }
        }
        Method::Cvpf => {
            let n = stride(method, cfg.cvpf.dt, fp)?;
            let first = log.records[k0].observation;
            let mut filter = ConstantVelocityFilter::new(cfg.cvpf, first.as_ref(), seed).map_err(fail(k0))?;
            let mut est = pbpf_core::filter::estimate(filter.particles()).map_err(fail(k0))?;
            for k in k0..log.records.len() {
                if k > k0 && (k - k0) % n == 0 {
                    let start = Instant::now();
                    let report = filter.step(log.records[k].observation.as_ref(), exec).map_err(fail(k))?;
                    steps.push(StepTiming { t: log.records[k].t, seconds: start.elapsed().as_secs_f64(), outcome: report.outcome });
                    est = report.estimate;
                }
                estimates.push(est);
            }
        }
    }

    let frames = log.records[k0..]
        .iter()
        .zip(estimates)
        .map(|(r, estimate)| FrameResult { t: r.t, estimate, error: pose_error(&estimate, &r.truth) })
        .collect();
    Ok(Replay { method, frames, steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use pbpf_core::filter::Sequential;

    #[test]
    fn method_names_roundtrip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>(), Ok(m));
        }
        assert_eq!("kalman".parse::<Method>(), Err(UnknownMethod("kalman".into())));
    }

    #[test]
    fn stride_must_be_whole() {
        assert_eq!(stride(Method::Pbpf, 0.16, 0.02).unwrap(), 8);
        assert_eq!(stride(Method::Cvpf, 0.02, 0.02).unwrap(), 1);
        assert!(stride(Method::Pbpf, 0.05, 0.02).is_err());
        assert!(stride(Method::Pbpf, 0.001, 0.02).is_err());
    }

    #[test]
    fn snapshot_on_perfect_log_is_exact() {
        let mut s = crate::scenario::scene3();
        s.observer = pbpf_core::observer::ObserverSpec::perfect(0.02);
        s.duration = 1.0;
        s.script.truncate(1);
        s.script[0].duration = 1.0;
        let log = crate::scenario::generate_run(&s).unwrap();
        let r = replay(&log, Method::Snapshot, &ReplayConfig::default(), &Sequential).unwrap();
        assert_eq!(r.frames.len(), log.records.len());
        assert!(r.frames.iter().all(|f| f.error.positional == 0.0 && f.error.rotational == 0.0));
    }
}
