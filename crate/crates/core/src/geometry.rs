//! Rigid-body pose algebra: vectors, unit quaternions, SE(3) poses, pose
//! error metrics, pose perturbation and weighted rotation averaging.
//!
//! Quaternions are stored scalar-first `(w, x, y, z)` everywhere, including
//! every text format written by the companion crate.

use core::ops::{Add, AddAssign, Mul, Neg, Sub};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::Error;

/// A 3-vector of `f64` (meters when used as a position).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Vec3) -> Vec3 {
        Vec3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm(self) -> f64 {
        libm::sqrt(self.dot(self))
    }

    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// A quaternion `w + xi + yj + zk`. Rotations use unit quaternions; `q` and
/// `-q` encode the same rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quat {
    fn default() -> Self {
        Quat::IDENTITY
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    /// Rotation of `angle` radians about `axis`. A zero axis yields identity.
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Quat {
        let n = axis.norm();
        if n == 0.0 {
            return Quat::IDENTITY;
        }
        let half = 0.5 * angle;
        let s = libm::sin(half) / n;
        Quat::new(libm::cos(half), axis.x * s, axis.y * s, axis.z * s)
    }

    /// Rotation about the world z axis.
    pub fn from_yaw(yaw: f64) -> Quat {
        let half = 0.5 * yaw;
        Quat::new(libm::cos(half), 0.0, 0.0, libm::sin(half))
    }

    pub fn dot(self, o: Quat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        libm::sqrt(self.dot(self))
    }

    pub fn normalized(self) -> Result<Quat, Error> {
        let n = self.norm();
        if !n.is_finite() || n == 0.0 {
            return Err(Error::DegenerateQuaternion);
        }
        Ok(Quat::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    pub fn conjugate(self) -> Quat {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 4]) -> Quat {
        Quat::new(a[0], a[1], a[2], a[3])
    }

    fn vector(self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    /// Rotates `v` by this (unit) quaternion.
    pub fn rotate(self, v: Vec3) -> Vec3 {
        // v' = v + 2w(u × v) + 2u × (u × v)
        let u = self.vector();
        let t = u.cross(v).scale(2.0);
        v + t.scale(self.w) + u.cross(t)
    }

    /// Rotation angle in `[0, π]`, sign-invariant.
    pub fn angle(self) -> f64 {
        2.0 * libm::atan2(self.vector().norm(), libm::fabs(self.w))
    }

    /// Heading of the body x axis projected on the world xy plane.
    pub fn yaw(self) -> f64 {
        libm::atan2(
            2.0 * (self.w * self.z + self.x * self.y),
            1.0 - 2.0 * (self.y * self.y + self.z * self.z),
        )
    }

    /// Canonical sign: `w >= 0`, ties broken by the first non-zero component.
    pub fn canonical(self) -> Quat {
        let flip = [self.w, self.x, self.y, self.z]
            .iter()
            .find(|c| **c != 0.0)
            .is_some_and(|c| *c < 0.0);
        if flip {
            Quat::new(-self.w, -self.x, -self.y, -self.z)
        } else {
            self
        }
    }
}

impl Mul for Quat {
    type Output = Quat;
    fn mul(self, r: Quat) -> Quat {
        Quat::new(
            self.w * r.w - self.x * r.x - self.y * r.y - self.z * r.z,
            self.w * r.x + self.x * r.w + self.y * r.z - self.z * r.y,
            self.w * r.y - self.x * r.z + self.y * r.w + self.z * r.x,
            self.w * r.z + self.x * r.y - self.y * r.x + self.z * r.w,
        )
    }
}

impl Neg for Quat {
    type Output = Quat;
    fn neg(self) -> Quat {
        Quat::new(-self.w, -self.x, -self.y, -self.z)
    }
}

/// A rigid pose: position in meters plus a unit orientation quaternion.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub position: Vec3,
    orientation: Quat,
}

impl Pose {
    pub const IDENTITY: Pose = Pose { position: Vec3::ZERO, orientation: Quat::IDENTITY };

    /// Builds a pose, normalizing the orientation. Quaternions already unit
    /// to within 1e-12 are kept bit-for-bit so parsed poses re-serialize
    /// identically.
    pub fn new(position: Vec3, orientation: Quat) -> Result<Pose, Error> {
        let n = orientation.norm();
        let orientation = if libm::fabs(n - 1.0) <= 1e-12 { orientation } else { orientation.normalized()? };
        if !(position.x.is_finite() && position.y.is_finite() && position.z.is_finite()) {
            return Err(Error::NonFinitePose);
        }
        Ok(Pose { position, orientation })
    }

    /// Planar pose: position `(x, y, z)` and heading `yaw` about world z.
    pub fn planar(x: f64, y: f64, z: f64, yaw: f64) -> Pose {
        Pose { position: Vec3::new(x, y, z), orientation: Quat::from_yaw(yaw) }
    }

    pub fn orientation(&self) -> Quat {
        self.orientation
    }

    /// Parses the 7-number `px py pz qw qx qy qz` layout.
    pub fn from_array(a: [f64; 7]) -> Result<Pose, Error> {
        Pose::new(Vec3::new(a[0], a[1], a[2]), Quat::new(a[3], a[4], a[5], a[6]))
    }

    pub fn to_array(&self) -> [f64; 7] {
        let p = self.position;
        let q = self.orientation;
        [p.x, p.y, p.z, q.w, q.x, q.y, q.z]
    }

    pub fn inverse(&self) -> Pose {
        let qi = self.orientation.conjugate();
        Pose { position: -qi.rotate(self.position), orientation: qi }
    }

    /// Rigid composition `self ∘ other`: `other` expressed in `self`'s frame.
    pub fn compose(&self, other: &Pose) -> Pose {
        let orientation = renormalize(self.orientation * other.orientation);
        Pose { position: self.position + self.orientation.rotate(other.position), orientation }
    }

    /// Applies a world-frame rotation on the left of the orientation.
    pub(crate) fn with_orientation(&self, orientation: Quat) -> Pose {
        Pose { position: self.position, orientation: renormalize(orientation) }
    }
}

// Products of unit quaternions stay within a few ulps of unit norm, so this
// cannot hit the degenerate branch.
fn renormalize(q: Quat) -> Quat {
    q.normalized().unwrap_or(Quat::IDENTITY)
}

/// Positional (m) and rotational (rad) distance between two poses.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseError {
    pub positional: f64,
    pub rotational: f64,
}

/// Euclidean distance of positions and geodesic angle of the relative
/// rotation `q_truth * q_estimate⁻¹`, folded into `[0, π]`.
pub fn pose_error(estimate: &Pose, truth: &Pose) -> PoseError {
    let positional = (estimate.position - truth.position).norm();
    let relative = truth.orientation * estimate.orientation.conjugate();
    PoseError { positional, rotational: relative.angle().min(core::f64::consts::PI) }
}

/// Isotropic Gaussian pose noise: per-axis position std and rotation-angle std.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseSpec {
    pub sigma_pos: f64,
    pub sigma_rot: f64,
}

impl NoiseSpec {
    pub const ZERO: NoiseSpec = NoiseSpec { sigma_pos: 0.0, sigma_rot: 0.0 };

    pub fn new(sigma_pos: f64, sigma_rot: f64) -> Result<NoiseSpec, Error> {
        let spec = NoiseSpec { sigma_pos, sigma_rot };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.sigma_pos >= 0.0 && self.sigma_rot >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidNoise)
        }
    }
}

/// Random rotation with uniform axis on the sphere and `N(0, sigma²)` angle.
pub fn sample_rotation<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> Quat {
    let axis = loop {
        let v = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        if v.norm() > 1e-12 {
            break v;
        }
    };
    let angle: f64 = rng.sample::<f64, _>(StandardNormal) * sigma;
    Quat::from_axis_angle(axis, angle)
}

/// Adds Gaussian noise to a pose. Position receives per-axis `sigma_pos`
/// noise; the orientation is pre-multiplied by [`sample_rotation`].
///
/// Both components consume randomness regardless of their sigma, and a zero
/// sigma leaves that component bit-identical.
pub fn perturb_pose<R: Rng + ?Sized>(pose: &Pose, noise: &NoiseSpec, rng: &mut R) -> Pose {
    let dp = Vec3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    );
    let dq = sample_rotation(noise.sigma_rot, rng);
    let mut out = *pose;
    if noise.sigma_pos != 0.0 {
        out.position += dp.scale(noise.sigma_pos);
    }
    if noise.sigma_rot != 0.0 {
        out.orientation = renormalize(dq * pose.orientation);
    }
    out
}

/// Weighted rotation average: the unit eigenvector belonging to the largest
/// eigenvalue of `M = Σ wᵢ qᵢ qᵢᵀ`.
///
/// `weights`, when given, must match `quats` in length, be non-negative and
/// not all zero. The result is returned in [`Quat::canonical`] form, which
/// also fixes the choice between tied eigenvectors of antipodal inputs.
pub fn quat_average(quats: &[Quat], weights: Option<&[f64]>) -> Result<Quat, Error> {
    if quats.is_empty() {
        return Err(Error::EmptyRotationSet);
    }
    if let Some(w) = weights {
        if w.len() != quats.len() {
            return Err(Error::WeightLengthMismatch { expected: quats.len(), got: w.len() });
        }
        if w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) || w.iter().all(|x| *x == 0.0) {
            return Err(Error::InvalidWeights);
        }
    }
    let mut m = [[0.0f64; 4]; 4];
    for (i, q) in quats.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        let q = q.normalized()?.to_array();
        for (r, row) in m.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                *cell += w * q[r] * q[c];
            }
        }
    }
    let v = dominant_eigenvector(&m);
    Quat::from_array(v).normalized().map(Quat::canonical)
}

type Mat4 = [[f64; 4]; 4];

fn mat_mul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            *cell = (0..4).map(|k| a[r][k] * b[k][c]).sum();
        }
    }
    out
}

fn mat_vec(a: &Mat4, v: &[f64; 4]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (r, o) in out.iter_mut().enumerate() {
        *o = (0..4).map(|k| a[r][k] * v[k]).sum();
    }
    out
}

fn unit(v: [f64; 4]) -> [f64; 4] {
    let n = libm::sqrt(v.iter().map(|x| x * x).sum());
    v.map(|x| x / n)
}

/// Power iteration on a symmetric PSD 4×4 matrix. Repeated squaring first
/// drives `M^(2^k)` towards the dominant projector so that small spectral gaps
/// still converge; plain power steps then polish the vector against `M`
/// itself.
fn dominant_eigenvector(m: &Mat4) -> [f64; 4] {
    let mut p = *m;
    for _ in 0..40 {
        let sq = mat_mul(&p, &p);
        let scale = sq.iter().flatten().fold(0.0f64, |a, x| a.max(libm::fabs(*x)));
        if scale == 0.0 || !scale.is_finite() {
            break;
        }
        p = sq.map(|row| row.map(|x| x / scale));
    }
    // Columns of the (near-)projector span the dominant eigenspace; take the
    // strongest one, falling back to M's own columns.
    let pick = |a: &Mat4| {
        (0..4)
            .map(|c| [a[0][c], a[1][c], a[2][c], a[3][c]])
            .max_by(|x, y| {
                let nx: f64 = x.iter().map(|v| v * v).sum();
                let ny: f64 = y.iter().map(|v| v * v).sum();
                nx.total_cmp(&ny)
            })
            .unwrap_or([1.0, 0.0, 0.0, 0.0])
    };
    let mut v = pick(&p);
    if v.iter().all(|x| *x == 0.0) {
        v = pick(m);
    }
    if v.iter().all(|x| *x == 0.0) {
        return [1.0, 0.0, 0.0, 0.0];
    }
    v = unit(v);
    for _ in 0..8 {
        let next = mat_vec(m, &v);
        if next.iter().all(|x| *x == 0.0) {
            break;
        }
        v = unit(next);
    }
    v
}
