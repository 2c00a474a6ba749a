//! Deterministic motion model for a box pushed across a table.
//!
//! The built-in backend is a quasi-static planar pusher–slider: a disk
//! pusher moves along a straight segment, and whenever it penetrates the
//! object footprint the object twist is resolved from an ellipsoidal limit
//! surface (uniform support pressure). Contact friction decides between
//! sticking and sliding through the motion cone. The object never moves
//! without contact, and only planar motion (x, y, yaw) is produced; height,
//! roll and pitch of the input pose are carried through untouched.
//!
//! Support friction and mass scale the limit surface uniformly and therefore
//! cancel out of the quasi-static twist; restitution is unused. All four are
//! still sampled so an external engine can be substituted behind
//! [`PhysicsBackend`].

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::geometry::{Pose, Quat, Vec3};
use crate::Error;

/// Lower cap for both friction coefficients.
pub const FRICTION_FLOOR: f64 = 0.001;
/// Lower cap for object mass, kg.
pub const MASS_FLOOR: f64 = 0.05;

/// Physical parameters of one rollout. Construction enforces the caps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicsParams {
    contact_friction: f64,
    support_friction: f64,
    restitution: f64,
    mass: f64,
}

impl PhysicsParams {
    pub fn new(contact_friction: f64, support_friction: f64, restitution: f64, mass: f64) -> Self {
        Self {
            contact_friction: floor(contact_friction, FRICTION_FLOOR),
            support_friction: floor(support_friction, FRICTION_FLOOR),
            restitution: restitution.clamp(0.0, 1.0),
            mass: floor(mass, MASS_FLOOR),
        }
    }

    pub fn contact_friction(&self) -> f64 {
        self.contact_friction
    }

    pub fn support_friction(&self) -> f64 {
        self.support_friction
    }

    pub fn restitution(&self) -> f64 {
        self.restitution
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }
}

// NaN draws are impossible from a validated prior, but keep the cap total.
fn floor(x: f64, min: f64) -> f64 {
    if x >= min {
        x
    } else {
        min
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub mean: f64,
    pub std: f64,
}

impl Gaussian {
    pub const fn new(mean: f64, std: f64) -> Self {
        Self { mean, std }
    }
}

/// Independent Gaussian prior over each field of [`PhysicsParams`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamPrior {
    pub contact_friction: Gaussian,
    pub support_friction: Gaussian,
    pub restitution: Gaussian,
    pub mass: Gaussian,
}

impl Default for ParamPrior {
    fn default() -> Self {
        Self {
            contact_friction: Gaussian::new(0.1, 0.3),
            support_friction: Gaussian::new(0.1, 0.3),
            restitution: Gaussian::new(0.9, 0.2),
            mass: Gaussian::new(0.38, 0.5),
        }
    }
}

impl ParamPrior {
    /// A zero-variance prior that always yields `params`.
    pub fn exact(params: &PhysicsParams) -> Self {
        Self {
            contact_friction: Gaussian::new(params.contact_friction, 0.0),
            support_friction: Gaussian::new(params.support_friction, 0.0),
            restitution: Gaussian::new(params.restitution, 0.0),
            mass: Gaussian::new(params.mass, 0.0),
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        for g in [self.contact_friction, self.support_friction, self.restitution, self.mass] {
            if !g.mean.is_finite() {
                return Err(Error::InvalidPrior("means must be finite"));
            }
            if !(g.std >= 0.0) || !g.std.is_finite() {
                return Err(Error::InvalidPrior("standard deviations must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Draws each field from its Gaussian and applies the caps.
pub fn sample_params<R: Rng + ?Sized>(prior: &ParamPrior, rng: &mut R) -> PhysicsParams {
    let mut draw = |g: Gaussian| {
        let z: f64 = rng.sample(StandardNormal);
        g.mean + g.std * z
    };
    let cf = draw(prior.contact_friction);
    let sf = draw(prior.support_friction);
    let re = draw(prior.restitution);
    let ma = draw(prior.mass);
    PhysicsParams::new(cf, sf, re, ma)
}

/// Pusher motion executed over one interval: a straight move of the pusher
/// center from `pusher_start` by `displacement` in `duration` seconds.
///
/// `yaw` is the end-effector heading change; a disk pusher is rotationally
/// symmetric so the built-in backend ignores it, as it ignores the vertical
/// component of the displacement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Control {
    pub pusher_start: Vec3,
    pub displacement: Vec3,
    pub yaw: f64,
    pub duration: f64,
}

impl Control {
    pub fn new(pusher_start: Vec3, displacement: Vec3, yaw: f64, duration: f64) -> Result<Self, Error> {
        let c = Self { pusher_start, displacement, yaw, duration };
        c.validate()?;
        Ok(c)
    }

    /// A control that keeps the pusher still at `at`.
    pub fn hold(at: Vec3, duration: f64) -> Self {
        Self { pusher_start: at, displacement: Vec3::ZERO, yaw: 0.0, duration }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(Error::InvalidControl("duration must be positive"));
        }
        let finite = self.pusher_start.to_array().iter().chain(self.displacement.to_array().iter()).all(|x| x.is_finite());
        if !finite || !self.yaw.is_finite() {
            return Err(Error::InvalidControl("non-finite pusher motion"));
        }
        Ok(())
    }

    pub fn pusher_end(&self) -> Vec3 {
        self.pusher_start + self.displacement
    }

    /// Joins consecutive controls into one straight move spanning all of them.
    pub fn concat(controls: &[Control]) -> Option<Control> {
        let first = controls.first()?;
        let mut out = Control { displacement: Vec3::ZERO, yaw: 0.0, duration: 0.0, ..*first };
        for c in controls {
            out.displacement += c.displacement;
            out.yaw += c.yaw;
            out.duration += c.duration;
        }
        Some(out)
    }
}

/// An oriented rectangle on the table plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub center: [f64; 2],
    pub half_extents: [f64; 2],
    pub yaw: f64,
}

impl Rect {
    pub fn new(center: [f64; 2], half_extents: [f64; 2], yaw: f64) -> Self {
        Self { center, half_extents, yaw }
    }
}

/// Geometry of the pushing scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneModel {
    /// Object footprint half-extents along its body x and y axes, m.
    pub half_extents: [f64; 2],
    pub height: f64,
    pub pusher_radius: f64,
    pub gravity: f64,
    /// Static, collision-only obstacles.
    pub obstacles: Vec<Rect>,
}

impl SceneModel {
    pub fn validate(&self) -> Result<(), Error> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(self.half_extents[0]) || !positive(self.half_extents[1]) || !positive(self.height) {
            return Err(Error::InvalidScene("object extents must be positive"));
        }
        if !positive(self.pusher_radius) {
            return Err(Error::InvalidScene("pusher radius must be positive"));
        }
        if !positive(self.gravity) {
            return Err(Error::InvalidScene("gravity must be positive"));
        }
        for o in &self.obstacles {
            if !positive(o.half_extents[0]) || !positive(o.half_extents[1]) {
                return Err(Error::InvalidScene("obstacle extents must be positive"));
            }
            if !(o.center[0].is_finite() && o.center[1].is_finite() && o.yaw.is_finite()) {
                return Err(Error::InvalidScene("obstacle placement must be finite"));
            }
        }
        Ok(())
    }

    /// Mean distance from the footprint center over the uniformly loaded
    /// footprint; the limit surface torque/force ratio.
    pub fn limit_surface_radius(&self) -> f64 {
        mean_radius(self.half_extents[0], self.half_extents[1])
    }

    /// Object footprint at `pose` as a rectangle.
    pub fn footprint(&self, pose: &Pose) -> Rect {
        Rect::new([pose.position.x, pose.position.y], self.half_extents, pose.orientation().yaw())
    }
}

/// `(1/4ab) ∬ √(x²+y²)` over `[-a,a]×[-b,b]`.
pub(crate) fn mean_radius(a: f64, b: f64) -> f64 {
    let d = libm::hypot(a, b);
    let quadrant = (2.0 * a * b * d + a * a * a * libm::log((b + d) / a) + b * b * b * libm::log((a + d) / b)) / 6.0;
    quadrant / (a * b)
}

/// What a rollout does when the pusher center starts inside the object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PenetrationPolicy {
    /// Fail with [`Error::InitialPenetration`].
    #[default]
    Reject,
    /// Push the object out along the minimal translation first.
    Resolve,
}

/// Integrates `control` from `state` with sub-steps of at most `dt_sub`
/// seconds. The control duration is split into `ceil(duration / dt_sub)`
/// equal sub-steps, so a `dt_sub` that divides the duration is used exactly.
pub fn step(
    state: &Pose,
    control: &Control,
    params: &PhysicsParams,
    scene: &SceneModel,
    dt_sub: f64,
) -> Result<Pose, Error> {
    rollout(state, control, params, scene, dt_sub, scene.limit_surface_radius(), PenetrationPolicy::Reject)
}

#[derive(Debug, Clone, Copy)]
struct Planar {
    x: f64,
    y: f64,
    yaw: f64,
}

fn rollout(
    state: &Pose,
    control: &Control,
    params: &PhysicsParams,
    scene: &SceneModel,
    dt_sub: f64,
    rbar: f64,
    policy: PenetrationPolicy,
) -> Result<Pose, Error> {
    if !(dt_sub > 0.0) || !dt_sub.is_finite() {
        return Err(Error::InvalidSubstep(dt_sub));
    }
    control.validate()?;

    let yaw0 = state.orientation().yaw();
    let mut obj = Planar { x: state.position.x, y: state.position.y, yaw: yaw0 };
    let mut moved = false;
    let r = scene.pusher_radius;
    let start = [control.pusher_start.x, control.pusher_start.y];

    let c = closest_boundary(start, &obj, scene.half_extents);
    if c.dist < 0.0 {
        match policy {
            PenetrationPolicy::Reject => return Err(Error::InitialPenetration),
            PenetrationPolicy::Resolve => {
                translate_local(&mut obj, [-c.normal[0] * (r - c.dist), -c.normal[1] * (r - c.dist)]);
                moved = true;
            }
        }
    }

    let n = libm::ceil(control.duration / dt_sub - 1e-9).max(1.0);
    let count = n as u64;
    let d = [control.displacement.x / n, control.displacement.y / n];
    let mu = params.contact_friction;
    for k in 1..=count {
        let s = k as f64;
        let pusher = [start[0] + d[0] * s, start[1] + d[1] * s];
        if push(&mut obj, pusher, d, r, mu, rbar, scene.half_extents) {
            moved = true;
            for o in &scene.obstacles {
                separate(&mut obj, scene.half_extents, o);
            }
        }
    }

    if !moved {
        return Ok(*state);
    }
    let turn = Quat::from_yaw(obj.yaw - yaw0);
    let position = Vec3::new(obj.x, obj.y, state.position.z);
    Ok(Pose::new(position, state.orientation())?.with_orientation(turn * state.orientation()))
}

struct Contact {
    /// Signed distance from the point to the footprint boundary (negative inside).
    dist: f64,
    /// Closest boundary point, object frame.
    point: [f64; 2],
    /// Outward boundary normal towards the query point, object frame.
    normal: [f64; 2],
}

fn to_local(obj: &Planar, p: [f64; 2]) -> [f64; 2] {
    let (s, c) = (libm::sin(obj.yaw), libm::cos(obj.yaw));
    let (dx, dy) = (p[0] - obj.x, p[1] - obj.y);
    [c * dx + s * dy, -s * dx + c * dy]
}

fn rotate(v: [f64; 2], yaw: f64) -> [f64; 2] {
    let (s, c) = (libm::sin(yaw), libm::cos(yaw));
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

fn translate_local(obj: &mut Planar, v: [f64; 2]) {
    let w = rotate(v, obj.yaw);
    obj.x += w[0];
    obj.y += w[1];
}

fn sign(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

fn closest_boundary(p: [f64; 2], obj: &Planar, he: [f64; 2]) -> Contact {
    let l = to_local(obj, p);
    let qx = libm::fabs(l[0]) - he[0];
    let qy = libm::fabs(l[1]) - he[1];
    if qx > 0.0 || qy > 0.0 {
        let point = [l[0].clamp(-he[0], he[0]), l[1].clamp(-he[1], he[1])];
        let d = [l[0] - point[0], l[1] - point[1]];
        let dist = libm::hypot(d[0], d[1]);
        Contact { dist, point, normal: [d[0] / dist, d[1] / dist] }
    } else if qx > qy {
        let sx = sign(l[0]);
        Contact { dist: qx, point: [sx * he[0], l[1]], normal: [sx, 0.0] }
    } else {
        let sy = sign(l[1]);
        Contact { dist: qy, point: [l[0], sy * he[1]], normal: [0.0, sy] }
    }
}

/// One pusher sub-step. Returns whether the object moved.
fn push(obj: &mut Planar, pusher: [f64; 2], step: [f64; 2], r: f64, mu: f64, rbar: f64, he: [f64; 2]) -> bool {
    let c = closest_boundary(pusher, obj, he);
    let depth = r - c.dist;
    if !(depth > 0.0) {
        return false;
    }
    let inward = [-c.normal[0], -c.normal[1]];
    let v = rotate(step, -obj.yaw);
    let vn = v[0] * inward[0] + v[1] * inward[1];
    if !(vn > 1e-12 * libm::hypot(v[0], v[1])) || vn <= 0.0 {
        // Not advancing into the object: separate geometrically.
        translate_local(obj, [inward[0] * depth, inward[1] * depth]);
        return true;
    }
    let t = limit_surface_twist(c.point, inward, v, mu, rbar);
    let s = depth / vn;
    translate_local(obj, [t[0] * s, t[1] * s]);
    obj.yaw += t[2] * s;
    true
}

/// Object twist (object frame; translation per unit pusher advance and
/// rotation) produced by a point pusher at `c` with inward normal `n` moving
/// by `v`. The twist moves the contact point's normal component by exactly
/// `v·n`; under sticking it reproduces `v` entirely.
pub(crate) fn limit_surface_twist(c: [f64; 2], n: [f64; 2], v: [f64; 2], mu: f64, rbar: f64) -> [f64; 3] {
    let k = 1.0 / (rbar * rbar);
    let cp = [-c[1], c[0]];
    // contact-point velocity = A f with A = I + k cp cpᵀ
    let a11 = 1.0 + k * cp[0] * cp[0];
    let a12 = k * cp[0] * cp[1];
    let a22 = 1.0 + k * cp[1] * cp[1];
    let apply = |f: [f64; 2]| [a11 * f[0] + a12 * f[1], a12 * f[0] + a22 * f[1]];
    let twist = |f: [f64; 2]| [f[0], f[1], k * (cp[0] * f[0] + cp[1] * f[1])];

    let det = a11 * a22 - a12 * a12;
    let f = [(a22 * v[0] - a12 * v[1]) / det, (a11 * v[1] - a12 * v[0]) / det];
    let tangent = [-n[1], n[0]];
    let fn_ = f[0] * n[0] + f[1] * n[1];
    let ft = f[0] * tangent[0] + f[1] * tangent[1];
    if fn_ > 0.0 && libm::fabs(ft) <= mu * fn_ {
        return twist(f);
    }

    let side = sign(ft);
    let mut fb = [n[0] + side * mu * tangent[0], n[1] + side * mu * tangent[1]];
    let mut vb = apply(fb);
    let mut vbn = vb[0] * n[0] + vb[1] * n[1];
    if !(vbn > 1e-12) {
        fb = n;
        vb = apply(fb);
        vbn = vb[0] * n[0] + vb[1] * n[1];
    }
    let kappa = (v[0] * n[0] + v[1] * n[1]) / vbn;
    let t = twist(fb);
    [t[0] * kappa, t[1] * kappa, t[2] * kappa]
}

/// Whether a pusher moving by `v` at `c` (normal `n`) sticks for friction `mu`.
pub fn is_sticking(c: [f64; 2], n: [f64; 2], v: [f64; 2], mu: f64, rbar: f64) -> bool {
    let k = 1.0 / (rbar * rbar);
    let cp = [-c[1], c[0]];
    let a11 = 1.0 + k * cp[0] * cp[0];
    let a12 = k * cp[0] * cp[1];
    let a22 = 1.0 + k * cp[1] * cp[1];
    let det = a11 * a22 - a12 * a12;
    let f = [(a22 * v[0] - a12 * v[1]) / det, (a11 * v[1] - a12 * v[0]) / det];
    let fn_ = f[0] * n[0] + f[1] * n[1];
    let ft = -f[0] * n[1] + f[1] * n[0];
    fn_ > 0.0 && libm::fabs(ft) <= mu * fn_
}

/// Pushes the object footprint out of `obstacle` along the minimal
/// separating axis.
fn separate(obj: &mut Planar, he: [f64; 2], obstacle: &Rect) {
    let axes = |yaw: f64| [[libm::cos(yaw), libm::sin(yaw)], [-libm::sin(yaw), libm::cos(yaw)]];
    let a_axes = axes(obj.yaw);
    let b_axes = axes(obstacle.yaw);
    let d = [obj.x - obstacle.center[0], obj.y - obstacle.center[1]];
    let dot = |u: [f64; 2], v: [f64; 2]| u[0] * v[0] + u[1] * v[1];
    let radius = |u: [f64; 2], ax: [[f64; 2]; 2], h: [f64; 2]| {
        h[0] * libm::fabs(dot(u, ax[0])) + h[1] * libm::fabs(dot(u, ax[1]))
    };
    let mut best: Option<([f64; 2], f64)> = None;
    for u in a_axes.iter().chain(b_axes.iter()) {
        let overlap = radius(*u, a_axes, he) + radius(*u, b_axes, obstacle.half_extents) - libm::fabs(dot(d, *u));
        if overlap <= 0.0 {
            return;
        }
        if best.is_none_or(|(_, o)| overlap < o) {
            let s = sign(dot(d, *u));
            best = Some(([u[0] * s, u[1] * s], overlap));
        }
    }
    if let Some((u, o)) = best {
        obj.x += u[0] * o;
        obj.y += u[1] * o;
    }
}

/// The pluggable motion model `x_t = f_θ(x_{t-1}, u_t)`.
pub trait PhysicsBackend {
    fn predict(&self, state: &Pose, control: &Control, params: &PhysicsParams) -> Result<Pose, Error>;
}

/// The built-in quasi-static pusher–slider engine.
#[derive(Debug, Clone, PartialEq)]
pub struct PusherSlider {
    scene: SceneModel,
    dt_sub: f64,
    policy: PenetrationPolicy,
    rbar: f64,
}

/// Default integration sub-step, seconds.
pub const DEFAULT_DT_SUB: f64 = 0.002;
/// Sub-step used to produce ground truth, seconds.
pub const GROUND_TRUTH_DT_SUB: f64 = 1e-4;

impl PusherSlider {
    pub fn new(scene: SceneModel, dt_sub: f64) -> Result<Self, Error> {
        scene.validate()?;
        if !(dt_sub > 0.0) || !dt_sub.is_finite() {
            return Err(Error::InvalidSubstep(dt_sub));
        }
        let rbar = scene.limit_surface_radius();
        Ok(Self { scene, dt_sub, policy: PenetrationPolicy::Reject, rbar })
    }

    pub fn with_policy(mut self, policy: PenetrationPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn scene(&self) -> &SceneModel {
        &self.scene
    }

    pub fn dt_sub(&self) -> f64 {
        self.dt_sub
    }
}

impl PhysicsBackend for PusherSlider {
    fn predict(&self, state: &Pose, control: &Control, params: &PhysicsParams) -> Result<Pose, Error> {
        rollout(state, control, params, &self.scene, self.dt_sub, self.rbar, self.policy)
    }
}
