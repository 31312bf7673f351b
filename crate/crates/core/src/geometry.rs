//! Coordinate conversions, ZYX Euler rotation matrices and their partial
//! derivatives, and global-to-local spherical angle transforms.
//!
//! All angles are radians. A node rotated by `R` sees a global direction `k`
//! as `Rᵀ k` in its local frame; local zenith/azimuth follow from that vector.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance for unit-norm checks and for clamping `arccos` arguments.
pub const UNIT_TOLERANCE: f64 = 1e-9;

/// Bearing (`alpha`, about z), downtilt (`beta`, about y) and slant (`gamma`, about x).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct EulerAngles {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl EulerAngles {
    pub const fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self { alpha, beta, gamma }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.alpha, self.beta, self.gamma]
    }

    pub fn is_finite(&self) -> bool {
        self.alpha.is_finite() && self.beta.is_finite() && self.gamma.is_finite()
    }
}

impl From<[f64; 3]> for EulerAngles {
    fn from(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl From<EulerAngles> for [f64; 3] {
    fn from(e: EulerAngles) -> Self {
        e.to_array()
    }
}

/// Zenith `theta` in `[0, π]` measured from +z, azimuth `phi` in `[-π, π]` from +x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalAngles {
    pub theta: f64,
    pub phi: f64,
}

/// A direction vector with Euclidean norm 1 (within [`UNIT_TOLERANCE`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitVec3(Vec3);

impl UnitVec3 {
    /// Wraps `v`, refusing anything whose norm is not 1 within tolerance.
    pub fn new(v: Vec3) -> Result<Self> {
        if !v.iter().all(|c| c.is_finite()) {
            return Err(Error::Domain(format!("non-finite direction {v:?}")));
        }
        let n = v.norm();
        if (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::Domain(format!("direction norm {n} is not 1")));
        }
        Ok(Self(v))
    }

    /// Normalizes `v`; fails for zero or non-finite input.
    pub fn normalize(v: Vec3) -> Result<Self> {
        let n = v.norm();
        if !n.is_finite() || n == 0.0 {
            return Err(Error::Domain(format!("cannot normalize {v:?}")));
        }
        Ok(Self(v / n))
    }

    pub fn as_vec(&self) -> &Vec3 {
        &self.0
    }

    pub fn into_inner(self) -> Vec3 {
        self.0
    }
}

/// An orthonormal matrix with determinant +1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Mat3);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Mat3::identity())
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Mat3 {
        self.0.transpose()
    }

    /// Expresses a global vector in the local frame: `Rᵀ v`.
    pub fn to_local(&self, v: &Vec3) -> Vec3 {
        self.0.tr_mul(v)
    }
}

fn rot_z(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn rot_y(b: f64) -> Mat3 {
    let (s, c) = b.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_x(g: f64) -> Mat3 {
    let (s, c) = g.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn d_rot_z(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

fn d_rot_y(b: f64) -> Mat3 {
    let (s, c) = b.sin_cos();
    Mat3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn d_rot_x(g: f64) -> Mat3 {
    let (s, c) = g.sin_cos();
    Mat3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

/// `ρ (sinθ cosφ, sinθ sinφ, cosθ)`.
pub fn spherical_to_cartesian(s: SphericalAngles, rho: f64) -> Result<Vec3> {
    if !(s.theta.is_finite() && s.phi.is_finite() && rho.is_finite()) {
        return Err(Error::Domain("non-finite spherical coordinates".into()));
    }
    if rho <= 0.0 {
        return Err(Error::Domain(format!("radius must be positive, got {rho}")));
    }
    let (st, ct) = s.theta.sin_cos();
    let (sp, cp) = s.phi.sin_cos();
    Ok(Vec3::new(rho * st * cp, rho * st * sp, rho * ct))
}

/// Clamped `arccos` that tolerates floating-point drift just past ±1.
pub(crate) fn acos_clamped(z: f64) -> Result<f64> {
    if !z.is_finite() || z.abs() > 1.0 + UNIT_TOLERANCE {
        return Err(Error::Domain(format!("arccos argument {z} outside [-1, 1]")));
    }
    Ok(z.clamp(-1.0, 1.0).acos())
}

/// `atan2(y, x)` with the convention `atan2(0, 0) = 0`.
pub(crate) fn azimuth(y: f64, x: f64) -> f64 {
    if x == 0.0 && y == 0.0 {
        0.0
    } else {
        y.atan2(x)
    }
}

fn angles_of(v: &Vec3) -> Result<SphericalAngles> {
    Ok(SphericalAngles { theta: acos_clamped(v.z)?, phi: azimuth(v.y, v.x) })
}

/// `θ = arccos(z)`, `φ = atan2(y, x)`.
pub fn cartesian_to_spherical(p: &UnitVec3) -> Result<SphericalAngles> {
    angles_of(p.as_vec())
}

/// Composite rotation `R_z(α) R_y(β) R_x(γ)`.
pub fn rotation_matrix(r: &EulerAngles) -> Result<RotationMatrix> {
    if !r.is_finite() {
        return Err(Error::Domain(format!("non-finite Euler angles {r:?}")));
    }
    Ok(RotationMatrix(rot_z(r.alpha) * rot_y(r.beta) * rot_x(r.gamma)))
}

/// `(∂R/∂α, ∂R/∂β, ∂R/∂γ)`, each obtained by differentiating one factor of the product.
pub fn rotation_matrix_partials(r: &EulerAngles) -> Result<[Mat3; 3]> {
    if !r.is_finite() {
        return Err(Error::Domain(format!("non-finite Euler angles {r:?}")));
    }
    let (rz, ry, rx) = (rot_z(r.alpha), rot_y(r.beta), rot_x(r.gamma));
    Ok([
        d_rot_z(r.alpha) * ry * rx,
        rz * d_rot_y(r.beta) * rx,
        rz * ry * d_rot_x(r.gamma),
    ])
}

/// Local zenith/azimuth of a global direction as seen by a node rotated by `rot`:
/// `θ' = arccos(u₃ᵀ Rᵀ k)`, `φ' = atan2(u₂ᵀ Rᵀ k, u₁ᵀ Rᵀ k)`.
pub fn local_spherical_angles(dir: &UnitVec3, rot: &RotationMatrix) -> Result<SphericalAngles> {
    angles_of(&rot.to_local(dir.as_vec()))
}

/// Unit vector and distance from `from` to `to`.
pub fn direction_and_distance(from: &Vec3, to: &Vec3) -> Result<(UnitVec3, f64)> {
    let delta = to - from;
    let d = delta.norm();
    if !d.is_finite() {
        return Err(Error::Domain(format!("non-finite points {from:?} -> {to:?}")));
    }
    if d == 0.0 {
        return Err(Error::DegenerateGeometry(format!("coincident points at {from:?}")));
    }
    Ok((UnitVec3(delta / d), d))
}
