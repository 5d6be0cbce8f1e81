//! Extended potential field controller: adds velocity matching, velocity
//! repulsion from moving obstacles and a closing-rate repulsion to the PFC.

use std::f64::consts::PI;

use crate::frames::Vec3;
use crate::pfc::{
    attractive_velocity, repulsive_velocity, saturate, ControlTerms, Obstacle, PfcGains, GATE_CLOSING,
    GATE_REP_POSITION, GATE_REP_VELOCITY,
};

/// Position and velocity of the drone or the target, earth frame.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Kinematics {
    pub p: Vec3,
    pub v: Vec3,
}

impl Kinematics {
    pub fn new(p: Vec3, v: Vec3) -> Self {
        Kinematics { p, v }
    }
}

pub fn velocity_attractive_potential(v_d: &Vec3, v_t: &Vec3, lambda2: f64) -> f64 {
    0.5 * lambda2 * (v_d - v_t).norm_squared()
}

pub fn velocity_repulsive_potential(v_d: &Vec3, v_o: &Vec3, eta2: f64) -> f64 {
    0.5 * eta2 / (v_d - v_o).norm_squared()
}

pub fn velocity_attractive(v_d: &Vec3, v_t: &Vec3, lambda2: f64) -> Vec3 {
    (v_d - v_t) * -lambda2
}

/// Zero for stationary obstacles and for matched velocities, otherwise the
/// inverse-quartic push in velocity space.
pub fn velocity_repulsive(v_d: &Vec3, v_o: &Vec3, eta2: f64, eps_v: f64) -> Vec3 {
    if v_o.norm() < eps_v {
        return Vec3::zeros();
    }
    let v_do = v_d - v_o;
    let n = v_do.norm();
    if n < eps_v {
        return Vec3::zeros();
    }
    v_do * (eta2 / n.powi(4))
}

/// Rate of change of the drone-obstacle distance; negative when closing.
pub fn closing_rate(p_d: &Vec3, p_o: &Vec3, v_d: &Vec3, v_o: &Vec3, eps_p: f64) -> f64 {
    let p_do = p_d - p_o;
    p_do.dot(&(v_d - v_o)) / p_do.norm().max(eps_p)
}

pub fn closing_repulsive(p_d: &Vec3, p_o: &Vec3, v_d: &Vec3, v_o: &Vec3, eta3: f64, eps_p: f64) -> Vec3 {
    let r_dot = closing_rate(p_d, p_o, v_d, v_o, eps_p);
    if r_dot >= 0.0 {
        return Vec3::zeros();
    }
    let p_do = p_d - p_o;
    p_do * (-eta3 * r_dot / p_do.norm().max(eps_p))
}

pub fn epfc_terms(drone: &Kinematics, target: &Kinematics, obstacles: &[Obstacle], gains: &PfcGains) -> ControlTerms {
    let att_p = attractive_velocity(&drone.p, &target.p, gains.lambda1);
    let att_v = velocity_attractive(&drone.v, &target.v, gains.lambda2);
    let mut rep_p = Vec3::zeros();
    let mut rep_v = Vec3::zeros();
    let mut close = Vec3::zeros();
    let mut gates = 0;

    for o in obstacles {
        let in_range = (drone.p - o.position).norm() <= gains.p_star;
        let r_dot = closing_rate(&drone.p, &o.position, &drone.v, &o.velocity, gains.eps_p);

        if in_range && !(gains.gate_position_repulsion_on_recede && r_dot >= 0.0) {
            rep_p += repulsive_velocity(&drone.p, &o.position, gains.eta1, gains.p_star, gains.eps_p);
            gates |= GATE_REP_POSITION;
        }
        let rv = velocity_repulsive(&drone.v, &o.velocity, gains.eta2, gains.eps_v);
        if rv != Vec3::zeros() {
            rep_v += rv;
            gates |= GATE_REP_VELOCITY;
        }
        if in_range && r_dot < 0.0 {
            close += closing_repulsive(&drone.p, &o.position, &drone.v, &o.velocity, gains.eta3, gains.eps_p);
            gates |= GATE_CLOSING;
        }
    }

    let raw = (att_p + rep_p) + (att_v + rep_v + close);
    let (command, saturated) = saturate(raw, gains.v_cmd_max);
    ControlTerms {
        att_p,
        rep_p,
        att_v,
        rep_v,
        close,
        raw,
        command,
        gates,
        saturated,
    }
}

pub fn epfc_command(drone: &Kinematics, target: &Kinematics, obstacles: &[Obstacle], gains: &PfcGains) -> Vec3 {
    epfc_terms(drone, target, obstacles, gains).command
}

/// Earth-frame command expressed in the yaw-rotated body frame.
pub fn to_body_frame(v_earth: &Vec3, psi: f64) -> Vec3 {
    let (s, c) = psi.sin_cos();
    Vec3::new(c * v_earth.x + s * v_earth.y, -s * v_earth.x + c * v_earth.y, v_earth.z)
}

/// Heading that points the nose at the target. When the target is
/// (nearly) straight above or below, `previous` is kept and the flag is set.
pub fn yaw_to_face_target(p_d: &Vec3, p_t: &Vec3, previous: f64, eps_p: f64) -> (f64, bool) {
    let d = p_t - p_d;
    if d.x.hypot(d.y) <= eps_p {
        return (previous, true);
    }
    let psi = d.y.atan2(d.x);
    (if psi == -PI { PI } else { psi }, false)
}
