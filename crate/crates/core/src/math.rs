//! Quaternion and 3-vector algebra.
//!
//! Conventions, fixed once for the whole crate:
//!
//! - Quaternions are stored scalar-first `(w, x, y, z)` and multiply with the
//!   Hamilton product. `a * b` composes rotations "apply `b`, then `a`", so
//!   `R(a * b) = R(a) R(b)` in rotation-matrix terms.
//! - An orientation `q_{i->j}` rotates coordinates of frame-`i` vectors into
//!   frame `j`.
//! - All math here is `f64`; persisted tensors are quantized elsewhere.

use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

/// Angles below this (radians) are reported as exactly zero by the angle
/// metrics, so downstream means are not polluted by `acos` noise.
pub const ANGLE_FLOOR_RAD: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum MathError {
    /// Axis norm is effectively zero but a nonzero rotation was requested.
    #[error("degenerate rotation axis (norm {norm:.3e}) for angle {angle_rad} rad")]
    DegenerateAxis { norm: f64, angle_rad: f64 },
}

// ─── Vec3 ────────────────────────────────────────────────────────────────────

/// A 3-vector. Units are contextual: rad/s for angular rates, m/s² for
/// specific force, unitless for joint axes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };
    pub const X: Vec3 = Vec3 { x: 1.0, y: 0.0, z: 0.0 };
    pub const Y: Vec3 = Vec3 { x: 0.0, y: 1.0, z: 0.0 };
    pub const Z: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 1.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, rhs: Vec3) -> f64 {
        self.x * rhs.x + self.y * rhs.y + self.z * rhs.z
    }

    pub fn cross(self, rhs: Vec3) -> Vec3 {
        Vec3 {
            x: self.y * rhs.z - self.z * rhs.y,
            y: self.z * rhs.x - self.x * rhs.z,
            z: self.x * rhs.y - self.y * rhs.x,
        }
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Unit vector in the same direction; `None` when the norm is below `1e-12`.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        if n <= 1e-12 {
            None
        } else {
            Some(self * (1.0 / n))
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

// ─── Quat ────────────────────────────────────────────────────────────────────

/// Unit quaternion encoding a 3-D rotation, scalar-first `(w, x, y, z)`.
///
/// `q` and `-q` denote the same rotation; every angle metric in this module
/// is invariant under that sign flip.
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

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    /// Rotation of `angle` radians about `axis`.
    ///
    /// The axis is normalized internally. A degenerate axis together with a
    /// nonzero angle is an error; with a zero angle it yields the identity.
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Result<Quat, MathError> {
        match axis.normalized() {
            Some(u) => {
                let (s, c) = (0.5 * angle).sin_cos();
                Ok(Quat::new(c, u.x * s, u.y * s, u.z * s))
            }
            None if angle == 0.0 => Ok(Quat::IDENTITY),
            None => Err(MathError::DegenerateAxis { norm: axis.norm(), angle_rad: angle }),
        }
    }

    /// Exponential map: rotation by `|v|` radians about `v`. Infallible; a
    /// near-zero vector gives the identity.
    pub fn from_scaled_axis(v: Vec3) -> Quat {
        let angle = v.norm();
        if angle < 1e-12 {
            // First-order series keeps the map smooth through zero.
            return Quat::new(1.0, 0.5 * v.x, 0.5 * v.y, 0.5 * v.z).normalized();
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let k = s / angle;
        Quat::new(c, v.x * k, v.y * k, v.z * k)
    }

    /// Logarithm map: the rotation vector (axis times angle, radians) of `q`,
    /// with angle in `[0, pi]`.
    pub fn to_scaled_axis(self) -> Vec3 {
        let q = if self.w < 0.0 { -self } else { self };
        let vn = (q.x * q.x + q.y * q.y + q.z * q.z).sqrt();
        if vn < 1e-12 {
            // sin(angle/2) ~ angle/2, so axis*angle ~ 2 v.
            return Vec3::new(2.0 * q.x, 2.0 * q.y, 2.0 * q.z);
        }
        let angle = 2.0 * vn.atan2(q.w);
        let k = angle / vn;
        Vec3::new(q.x * k, q.y * k, q.z * k)
    }

    pub fn conj(self) -> Quat {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn dot(self, rhs: Quat) -> f64 {
        self.w * rhs.w + self.x * rhs.x + self.y * rhs.y + self.z * rhs.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Normalized copy; a zero quaternion maps to the identity.
    pub fn normalized(self) -> Quat {
        let n = self.norm();
        if n < 1e-12 {
            return Quat::IDENTITY;
        }
        let k = 1.0 / n;
        Quat::new(self.w * k, self.x * k, self.y * k, self.z * k)
    }

    pub fn is_finite(self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Rotate a vector: `v' = q v q*`.
    pub fn rotate(self, v: Vec3) -> Vec3 {
        // Expanded q v q* (fewer operations than two quaternion products).
        let u = Vec3::new(self.x, self.y, self.z);
        let uv = u.cross(v);
        let uuv = u.cross(uv);
        v + (uv * self.w + uuv) * 2.0
    }

    /// Hamilton product `self * rhs`: apply `rhs` first, then `self`.
    /// The `Mul` operator impl delegates here.
    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, rhs: Quat) -> Quat {
        Quat::new(
            self.w * rhs.w - self.x * rhs.x - self.y * rhs.y - self.z * rhs.z,
            self.w * rhs.x + self.x * rhs.w + self.y * rhs.z - self.z * rhs.y,
            self.w * rhs.y - self.x * rhs.z + self.y * rhs.w + self.z * rhs.x,
            self.w * rhs.z + self.x * rhs.y - self.y * rhs.x + self.z * rhs.w,
        )
        .normalized()
    }

    /// Hamilton product without renormalization. Gradient paths and format
    /// roundtrips need the raw bilinear form.
    pub fn mul_raw(self, rhs: Quat) -> Quat {
        Quat::new(
            self.w * rhs.w - self.x * rhs.x - self.y * rhs.y - self.z * rhs.z,
            self.w * rhs.x + self.x * rhs.w + self.y * rhs.z - self.z * rhs.y,
            self.w * rhs.y - self.x * rhs.z + self.y * rhs.w + self.z * rhs.x,
            self.w * rhs.z + self.x * rhs.y - self.y * rhs.x + self.z * rhs.w,
        )
    }

    /// Compose with the rotation integrated from a body-frame angular rate
    /// over `dt` seconds: `q * exp(omega * dt)`.
    pub fn integrate(self, omega: Vec3, dt: f64) -> Quat {
        self.mul(Quat::from_scaled_axis(omega * dt))
    }

    /// Angle of this rotation in radians, in `[0, pi]`, sign-invariant.
    pub fn angle_rad(self) -> f64 {
        let a = 2.0 * self.w.abs().clamp(0.0, 1.0).acos();
        if a < ANGLE_FLOOR_RAD {
            0.0
        } else {
            a
        }
    }

    /// Shortest-arc spherical interpolation, `t` in `[0, 1]`. Signs are
    /// aligned first so the double cover cannot flip mid-path.
    pub fn slerp(self, other: Quat, t: f64) -> Quat {
        let mut d = self.dot(other);
        let other = if d < 0.0 {
            d = -d;
            -other
        } else {
            other
        };
        if d > 0.9995 {
            return Quat::new(
                self.w + (other.w - self.w) * t,
                self.x + (other.x - self.x) * t,
                self.y + (other.y - self.y) * t,
                self.z + (other.z - self.z) * t,
            )
            .normalized();
        }
        let theta = d.clamp(-1.0, 1.0).acos();
        let sin_theta = theta.sin();
        let a = ((1.0 - t) * theta).sin() / sin_theta;
        let b = (t * theta).sin() / sin_theta;
        Quat::new(
            a * self.w + b * other.w,
            a * self.x + b * other.x,
            a * self.y + b * other.y,
            a * self.z + b * other.z,
        )
        .normalized()
    }
}

impl Neg for Quat {
    type Output = Quat;
    fn neg(self) -> Quat {
        Quat::new(-self.w, -self.x, -self.y, -self.z)
    }
}

impl Mul for Quat {
    type Output = Quat;
    fn mul(self, rhs: Quat) -> Quat {
        Quat::mul(self, rhs)
    }
}

// ─── Angle metrics ───────────────────────────────────────────────────────────

/// Absolute angle between two orientations in radians: `2 acos(|<a, b>|)`,
/// range `[0, pi]`, symmetric and sign-invariant.
pub fn angle_between_rad(a: Quat, b: Quat) -> f64 {
    let d = a.dot(b).abs().clamp(0.0, 1.0);
    let angle = 2.0 * d.acos();
    if angle < ANGLE_FLOOR_RAD {
        0.0
    } else {
        angle
    }
}

/// [`angle_between_rad`] in degrees.
pub fn angle_between_deg(a: Quat, b: Quat) -> f64 {
    angle_between_rad(a, b).to_degrees()
}

/// Angle in radians by which the error rotation `pred * conj(truth)` tilts
/// the `up` axis: the orientation error that remains after discarding any
/// heading rotation about `up`.
///
/// Both arguments are body-to-reference orientations; the result is
/// invariant to composing either one on the left with a rotation about `up`.
pub fn inclination_error_rad(pred: Quat, truth: Quat, up: Vec3) -> f64 {
    let e = pred.mul_raw(truth.conj()).normalized();
    let c = up.dot(e.rotate(up)).clamp(-1.0, 1.0);
    let angle = c.acos();
    if angle < ANGLE_FLOOR_RAD {
        0.0
    } else {
        angle
    }
}

/// Split `q` into `heading * inclination` where `heading` is a pure rotation
/// about `up` (swing-twist split with the twist on the left).
///
/// `up` must be unit-norm. In the gimbal-degenerate case (inclination of
/// 180°, where the twist is unobservable) the heading is the identity by
/// convention. Recomposition `heading * inclination` reproduces `q`.
pub fn heading_decompose(q: Quat, up: Vec3) -> (Quat, Quat) {
    let proj = up.dot(Vec3::new(q.x, q.y, q.z));
    let twist = Quat::new(q.w, up.x * proj, up.y * proj, up.z * proj);
    let heading = if twist.norm() < 1e-9 { Quat::IDENTITY } else { twist.normalized() };
    let inclination = heading.conj().mul(q);
    (heading, inclination)
}
