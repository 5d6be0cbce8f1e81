//! Traditional potential field controller: position attraction and
//! repulsion with an avoidance range `P*`.
//!
//! `p_do = p_d - p_o` always points from the obstacle to the drone, so a
//! positive multiple of it pushes the drone away.

use serde::{Deserialize, Serialize};

use crate::frames::Vec3;
use crate::{Error, Result};

/// Bit set in [`ControlTerms::gates`] when position repulsion acted.
pub const GATE_REP_POSITION: u8 = 1;
/// Bit set when velocity repulsion acted.
pub const GATE_REP_VELOCITY: u8 = 2;
/// Bit set when closing-rate repulsion acted.
pub const GATE_CLOSING: u8 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PfcGains {
    pub lambda1: f64,
    pub eta1: f64,
    pub p_star: f64,
    pub lambda2: f64,
    pub eta2: f64,
    pub eta3: f64,
    pub eps_p: f64,
    pub eps_v: f64,
    pub v_cmd_max: f64,
    /// ePFC only: drop position repulsion from obstacles the drone is not closing on.
    pub gate_position_repulsion_on_recede: bool,
}

impl Default for PfcGains {
    fn default() -> Self {
        PfcGains {
            lambda1: 1.0,
            eta1: 0.45,
            p_star: 4.0,
            lambda2: 1.0,
            eta2: 0.1,
            eta3: 1.5,
            eps_p: 1e-3,
            eps_v: 1e-3,
            v_cmd_max: 1.0,
            gate_position_repulsion_on_recede: true,
        }
    }
}

impl PfcGains {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("lambda1", self.lambda1),
            ("eta1", self.eta1),
            ("p_star", self.p_star),
            ("lambda2", self.lambda2),
            ("eta2", self.eta2),
            ("eta3", self.eta3),
            ("eps_p", self.eps_p),
            ("eps_v", self.eps_v),
            ("v_cmd_max", self.v_cmd_max),
        ];
        for (name, x) in fields {
            if !(x.is_finite() && x > 0.0) {
                return Err(Error::validation(
                    format!("gains.{name}"),
                    format!("must be finite and > 0, got {x}"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub position: Vec3,
    #[serde(default = "Vec3::zeros")]
    pub velocity: Vec3,
    #[serde(default = "default_radius")]
    pub radius: f64,
}

fn default_radius() -> f64 {
    0.25
}

impl Obstacle {
    pub fn fixed(position: Vec3) -> Self {
        Obstacle {
            position,
            velocity: Vec3::zeros(),
            radius: default_radius(),
        }
    }

    /// Obstacle moved along its constant velocity to time `t`.
    pub fn at_time(&self, t: f64) -> Self {
        Obstacle {
            position: self.position + self.velocity * t,
            ..*self
        }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        if !self.position.iter().chain(self.velocity.iter()).all(|x| x.is_finite()) {
            return Err(Error::validation(field, "position and velocity must be finite"));
        }
        if !(self.radius.is_finite() && self.radius >= 0.0) {
            return Err(Error::validation(
                format!("{field}.radius"),
                format!("must be finite and >= 0, got {}", self.radius),
            ));
        }
        Ok(())
    }
}

/// Per-term breakdown of one controller evaluation. Repulsive terms are
/// summed over obstacles.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlTerms {
    pub att_p: Vec3,
    pub rep_p: Vec3,
    pub att_v: Vec3,
    pub rep_v: Vec3,
    pub close: Vec3,
    /// Sum of all terms before saturation.
    pub raw: Vec3,
    /// Saturated earth-frame velocity command.
    pub command: Vec3,
    pub gates: u8,
    pub saturated: bool,
}

/// Scales `v` down to norm `max` if it is longer. Returns whether it was.
pub fn saturate(v: Vec3, max: f64) -> (Vec3, bool) {
    let n = v.norm();
    if n > max {
        (v * (max / n), true)
    } else {
        (v, false)
    }
}

pub fn attractive_potential(p_d: &Vec3, p_t: &Vec3, lambda1: f64) -> f64 {
    0.5 * lambda1 * (p_d - p_t).norm_squared()
}

pub fn repulsive_potential(p_d: &Vec3, p_o: &Vec3, eta1: f64) -> f64 {
    0.5 * eta1 / (p_d - p_o).norm_squared()
}

pub fn attractive_velocity(p_d: &Vec3, p_t: &Vec3, lambda1: f64) -> Vec3 {
    (p_t - p_d) * lambda1
}

/// Inverse-quartic push away from the obstacle, zero beyond `p_star`.
pub fn repulsive_velocity(p_d: &Vec3, p_o: &Vec3, eta1: f64, p_star: f64, eps_p: f64) -> Vec3 {
    let p_do = p_d - p_o;
    let r = p_do.norm();
    if r > p_star {
        return Vec3::zeros();
    }
    p_do * (eta1 / r.max(eps_p).powi(4))
}

pub fn pfc_terms(p_d: &Vec3, p_t: &Vec3, obstacles: &[Obstacle], gains: &PfcGains) -> ControlTerms {
    let att_p = attractive_velocity(p_d, p_t, gains.lambda1);
    let mut rep_p = Vec3::zeros();
    let mut gates = 0;
    for o in obstacles {
        if (p_d - o.position).norm() <= gains.p_star {
            rep_p += repulsive_velocity(p_d, &o.position, gains.eta1, gains.p_star, gains.eps_p);
            gates |= GATE_REP_POSITION;
        }
    }
    let raw = att_p + rep_p;
    let (command, saturated) = saturate(raw, gains.v_cmd_max);
    ControlTerms {
        att_p,
        rep_p,
        raw,
        command,
        gates,
        saturated,
        ..Default::default()
    }
}

pub fn pfc_command(p_d: &Vec3, p_t: &Vec3, obstacles: &[Obstacle], gains: &PfcGains) -> Vec3 {
    pfc_terms(p_d, p_t, obstacles, gains).command
}
