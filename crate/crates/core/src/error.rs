use alloc::boxed::Box;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("quaternion has zero or non-finite norm")]
    DegenerateQuaternion,
    #[error("pose has a non-finite position")]
    NonFinitePose,
    #[error("noise standard deviations must be finite and non-negative")]
    InvalidNoise,
    #[error("empty rotation set")]
    EmptyRotationSet,
    #[error("expected {expected} weights, got {got}")]
    WeightLengthMismatch { expected: usize, got: usize },
    #[error("weights must be finite, non-negative and not all zero")]
    InvalidWeights,
    #[error("sub-step must be positive and finite, got {0}")]
    InvalidSubstep(f64),
    #[error("initial penetration: pusher starts inside the object")]
    InitialPenetration,
    #[error("invalid control: {0}")]
    InvalidControl(&'static str),
    #[error("invalid scene: {0}")]
    InvalidScene(&'static str),
    #[error("invalid parameter prior: {0}")]
    InvalidPrior(&'static str),
    #[error("invalid observer: {0}")]
    InvalidObserver(&'static str),
    #[error("invalid filter configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("cannot initialize without an observation")]
    NoInitialObservation,
    #[error("expected one backend per particle ({particles}), got {backends}")]
    BackendCount { particles: usize, backends: usize },
    #[error("physics backend failed on particle {index}: {source}")]
    Backend { index: usize, source: Box<Error> },
    #[error("empty particle set")]
    EmptyParticleSet,
    #[error("particle weights sum to zero")]
    ZeroTotalWeight,
    #[error("no pose ever observed")]
    NoPoseObserved,
}
