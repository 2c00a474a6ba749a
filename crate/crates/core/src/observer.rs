//! Synthetic single-snapshot pose estimator.
//!
//! Stands in for an image-based estimator: each frame either yields no pose
//! (the object is occluded) or a noisy copy of the true pose, occasionally a
//! gross outlier.

use alloc::vec::Vec;

use rand::Rng;

use crate::geometry::{perturb_pose, NoiseSpec, Pose};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub time: f64,
    pub pose: Option<Pose>,
}

/// A half-open `[start, end)` interval in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Window {
    pub fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverSpec {
    pub noise: NoiseSpec,
    /// Sorted, non-overlapping occlusion intervals.
    pub occlusion_windows: Vec<Window>,
    pub outlier_rate: f64,
    pub outlier_magnitude: NoiseSpec,
    pub frame_period: f64,
}

impl Default for ObserverSpec {
    fn default() -> Self {
        Self {
            noise: NoiseSpec { sigma_pos: 0.02, sigma_rot: 0.09 },
            occlusion_windows: Vec::new(),
            outlier_rate: 0.05,
            outlier_magnitude: NoiseSpec { sigma_pos: 0.15, sigma_rot: 0.8 },
            frame_period: 0.02,
        }
    }
}

impl ObserverSpec {
    /// Noise-free, outlier-free, never occluded.
    pub fn perfect(frame_period: f64) -> Self {
        Self {
            noise: NoiseSpec::ZERO,
            occlusion_windows: Vec::new(),
            outlier_rate: 0.0,
            outlier_magnitude: NoiseSpec::ZERO,
            frame_period,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.noise.validate()?;
        self.outlier_magnitude.validate()?;
        if !(0.0..=1.0).contains(&self.outlier_rate) {
            return Err(Error::InvalidObserver("outlier rate must lie in [0, 1]"));
        }
        if !(self.frame_period > 0.0) || !self.frame_period.is_finite() {
            return Err(Error::InvalidObserver("frame period must be positive"));
        }
        let mut last_end = f64::NEG_INFINITY;
        for w in &self.occlusion_windows {
            if !(w.start < w.end) {
                return Err(Error::InvalidObserver("occlusion window must have start < end"));
            }
            if w.start < last_end {
                return Err(Error::InvalidObserver("occlusion windows must be sorted and non-overlapping"));
            }
            last_end = w.end;
        }
        Ok(())
    }

    pub fn occluded(&self, time: f64) -> bool {
        self.occlusion_windows.iter().any(|w| w.contains(time))
    }
}

/// One frame of the synthetic estimator.
///
/// The outlier decision and both noise draws are always consumed, so the
/// stream position after a frame does not depend on the outcome.
pub fn observe<R: Rng + ?Sized>(truth: &Pose, time: f64, spec: &ObserverSpec, rng: &mut R) -> Observation {
    let u: f64 = rng.random();
    let outlier = u < spec.outlier_rate;
    let noise = if outlier { &spec.outlier_magnitude } else { &spec.noise };
    let noisy = perturb_pose(truth, noise, rng);
    let pose = if spec.occluded(time) { None } else { Some(noisy) };
    Observation { time, pose }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn occluded_frames_are_empty() {
        let mut spec = ObserverSpec::default();
        spec.occlusion_windows = vec![Window::new(4.0, 8.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let truth = Pose::planar(0.1, 0.0, 0.1, 0.0);
        assert!(observe(&truth, 4.0, &spec, &mut rng).pose.is_none());
        assert!(observe(&truth, 7.99, &spec, &mut rng).pose.is_none());
        assert!(observe(&truth, 8.0, &spec, &mut rng).pose.is_some());
        assert!(observe(&truth, 3.99, &spec, &mut rng).pose.is_some());
    }

    #[test]
    fn perfect_observer_is_identity() {
        let spec = ObserverSpec::perfect(0.02);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let truth = Pose::planar(0.1, -0.3, 0.1, 1.0);
        for i in 0..50 {
            assert_eq!(observe(&truth, i as f64 * 0.02, &spec, &mut rng).pose, Some(truth));
        }
    }

    #[test]
    fn validation() {
        let mut spec = ObserverSpec::default();
        assert!(spec.validate().is_ok());
        spec.outlier_rate = 1.5;
        assert!(spec.validate().is_err());
        spec.outlier_rate = 0.0;
        spec.occlusion_windows = vec![Window::new(2.0, 3.0), Window::new(1.0, 1.5)];
        assert!(spec.validate().is_err());
        spec.occlusion_windows = vec![Window::new(2.0, 2.0)];
        assert!(spec.validate().is_err());
        spec.occlusion_windows = vec![Window::new(1.0, 2.0), Window::new(2.0, 3.0)];
        assert!(spec.validate().is_ok());
    }
}
