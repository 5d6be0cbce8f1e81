//! Earth/body frames and Euler rotation matrices.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Rotations with `|cos θ|` below this are rejected as gimbal lock.
pub const GIMBAL_GUARD: f64 = 1e-6;

/// Wraps an angle into (−π, π]. Angles already in range are returned untouched.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attitude {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl Attitude {
    pub fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Attitude { roll, pitch, yaw }
    }

    pub fn yaw_only(yaw: f64) -> Self {
        Attitude::new(0.0, 0.0, yaw)
    }

    pub fn normalized(self) -> Self {
        Attitude::new(wrap_angle(self.roll), wrap_angle(self.pitch), wrap_angle(self.yaw))
    }

    pub fn is_finite(&self) -> bool {
        self.roll.is_finite() && self.pitch.is_finite() && self.yaw.is_finite()
    }

    fn check(&self) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite attitude {self:?}")));
        }
        let c = self.pitch.cos();
        if c.abs() < GIMBAL_GUARD {
            return Err(Error::GimbalLock { cos_pitch: c });
        }
        Ok(())
    }
}

/// Proper rotation matrix. Constructed only by the functions in this module.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        RotationMatrix(Matrix3::identity())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        RotationMatrix(self.0.transpose())
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    pub fn determinant(&self) -> f64 {
        self.0.determinant()
    }

    /// Largest entry-wise deviation of `RᵀR` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).amax()
    }
}

impl Mul for RotationMatrix {
    type Output = RotationMatrix;

    fn mul(self, rhs: RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * rhs.0)
    }
}

fn finite(name: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be finite, got {x}")))
    }
}

pub fn rot_yaw(psi: f64) -> Result<RotationMatrix> {
    finite("yaw", psi)?;
    let (s, c) = psi.sin_cos();
    Ok(RotationMatrix(Matrix3::new(
        c, -s, 0.0, //
        s, c, 0.0, //
        0.0, 0.0, 1.0,
    )))
}

pub fn rot_roll(phi: f64) -> Result<RotationMatrix> {
    finite("roll", phi)?;
    let (s, c) = phi.sin_cos();
    Ok(RotationMatrix(Matrix3::new(
        1.0, 0.0, 0.0, //
        0.0, c, -s, //
        0.0, s, c,
    )))
}

pub fn rot_pitch(theta: f64) -> Result<RotationMatrix> {
    finite("pitch", theta)?;
    let (s, c) = theta.sin_cos();
    Ok(RotationMatrix(Matrix3::new(
        c, 0.0, s, //
        0.0, 1.0, 0.0, //
        -s, 0.0, c,
    )))
}

/// Closed-form `Rz(ψ)·Ry(θ)·Rx(φ)`.
pub fn rot_full(att: &Attitude) -> Result<RotationMatrix> {
    att.check()?;
    let (sf, cf) = att.roll.sin_cos();
    let (st, ct) = att.pitch.sin_cos();
    let (sp, cp) = att.yaw.sin_cos();
    Ok(RotationMatrix(Matrix3::new(
        cp * ct,
        cp * sf * st - sp * cf,
        cp * cf * st + sp * sf,
        sp * ct,
        sp * sf * st + cp * cf,
        sp * cf * st - cp * sf,
        -st,
        sf * ct,
        cf * ct,
    )))
}

pub fn body_to_earth(v: &Vec3, att: &Attitude) -> Result<Vec3> {
    Ok(rot_full(att)?.apply(v))
}

pub fn earth_to_body(v: &Vec3, att: &Attitude) -> Result<Vec3> {
    Ok(rot_full(att)?.transpose().apply(v))
}
