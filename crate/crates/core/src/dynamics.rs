//! Quadcopter plant: motor model, Newton-Euler accelerations, RK4 stepping,
//! plus two closed-loop velocity plants used by the controllers.
//!
//! Motor layout implied by the torque model: motor 1 on +x, motor 2 on -x,
//! motor 3 on -y, motor 4 on +y. Euler rates are identified with body rates.

use nalgebra::{Matrix3, SVector};
use serde::{Deserialize, Serialize};

use crate::frames::{rot_full, wrap_angle, Attitude, Vec3};
use crate::{Error, Result};

/// Largest accepted integration step.
pub const DT_MAX: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadParams {
    pub m: f64,
    pub g: f64,
    pub ixx: f64,
    pub iyy: f64,
    pub izz: f64,
    pub k_t: f64,
    pub k_m: f64,
    pub l: f64,
    pub omega_max: f64,
}

impl Default for QuadParams {
    // ARDrone-class figures; k_t puts hover near 360 rad/s.
    fn default() -> Self {
        QuadParams {
            m: 0.43,
            g: 9.81,
            ixx: 2.24e-3,
            iyy: 2.24e-3,
            izz: 4.5e-3,
            k_t: 8.137e-6,
            k_m: 1.3e-7,
            l: 0.178,
            omega_max: 800.0,
        }
    }
}

impl QuadParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("m", self.m),
            ("g", self.g),
            ("ixx", self.ixx),
            ("iyy", self.iyy),
            ("izz", self.izz),
            ("k_t", self.k_t),
            ("k_m", self.k_m),
            ("l", self.l),
            ("omega_max", self.omega_max),
        ];
        for (name, x) in fields {
            if !(x.is_finite() && x > 0.0) {
                return Err(Error::validation(
                    format!("params.{name}"),
                    format!("must be finite and > 0, got {x}"),
                ));
            }
        }
        Ok(())
    }

    /// Motor speed at which four motors carry the weight.
    pub fn hover_speed(&self) -> f64 {
        (self.m * self.g / (4.0 * self.k_t)).sqrt()
    }

    pub fn inertia(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vec3::new(self.ixx, self.iyy, self.izz))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MotorCommand {
    pub omega: [f64; 4],
}

impl MotorCommand {
    pub fn new(o1: f64, o2: f64, o3: f64, o4: f64) -> Self {
        MotorCommand {
            omega: [o1, o2, o3, o4],
        }
    }

    pub fn uniform(w: f64) -> Self {
        MotorCommand { omega: [w; 4] }
    }

    pub fn hover(params: &QuadParams) -> Self {
        Self::uniform(params.hover_speed())
    }

    pub fn squares(&self) -> [f64; 4] {
        self.omega.map(|w| w * w)
    }

    pub fn validate(&self, params: &QuadParams) -> Result<()> {
        for (i, w) in self.omega.iter().enumerate() {
            if !(w.is_finite() && *w >= 0.0 && *w <= params.omega_max) {
                return Err(Error::validation(
                    format!("motor[{}]", i + 1),
                    format!("must lie in [0, {}], got {w}", params.omega_max),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigidBodyState {
    pub p: Vec3,
    pub v: Vec3,
    pub att: Attitude,
    /// Body rates, used as (φ̇, θ̇, ψ̇).
    pub omega: Vec3,
}

impl RigidBodyState {
    pub fn at(p: Vec3) -> Self {
        RigidBodyState {
            p,
            ..Default::default()
        }
    }

    pub fn is_finite(&self) -> bool {
        self.p
            .iter()
            .chain(self.v.iter())
            .chain(self.omega.iter())
            .all(|x| x.is_finite())
            && self.att.is_finite()
    }

    fn pack(&self) -> SVector<f64, 12> {
        SVector::<f64, 12>::from_column_slice(&[
            self.p.x,
            self.p.y,
            self.p.z,
            self.v.x,
            self.v.y,
            self.v.z,
            self.att.roll,
            self.att.pitch,
            self.att.yaw,
            self.omega.x,
            self.omega.y,
            self.omega.z,
        ])
    }

    fn unpack(x: &SVector<f64, 12>) -> Self {
        RigidBodyState {
            p: Vec3::new(x[0], x[1], x[2]),
            v: Vec3::new(x[3], x[4], x[5]),
            att: Attitude::new(x[6], x[7], x[8]),
            omega: Vec3::new(x[9], x[10], x[11]),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WrenchB {
    pub force: Vec3,
    pub torque: Vec3,
}

/// Body-frame force with gravity kept along `b_z` (small-angle model).
pub fn sum_forces(cmd: &MotorCommand, params: &QuadParams) -> Vec3 {
    let s: f64 = cmd.squares().iter().sum();
    Vec3::new(0.0, 0.0, params.m * params.g - params.k_t * s)
}

pub fn sum_torques(cmd: &MotorCommand, params: &QuadParams) -> Vec3 {
    let [w1, w2, w3, w4] = cmd.squares();
    Vec3::new(
        params.k_t * (w3 - w4) * params.l,
        params.k_t * (w1 - w2) * params.l,
        -params.k_m * (w1 + w2 - w3 - w4),
    )
}

pub fn wrench(cmd: &MotorCommand, params: &QuadParams) -> WrenchB {
    WrenchB {
        force: sum_forces(cmd, params),
        torque: sum_torques(cmd, params),
    }
}

/// Body-frame linear and angular accelerations.
pub fn accelerations(state: &RigidBodyState, cmd: &MotorCommand, params: &QuadParams) -> (Vec3, Vec3) {
    let [w1, w2, w3, w4] = cmd.squares();
    let (p, q, r) = (state.omega.x, state.omega.y, state.omega.z);
    let QuadParams {
        m,
        g,
        ixx,
        iyy,
        izz,
        k_t,
        k_m,
        l,
        ..
    } = *params;

    let a = Vec3::new(0.0, 0.0, g - k_t / m * (w1 + w2 + w3 + w4));
    let alpha = Vec3::new(
        (k_t * (w3 - w4) * l - q * r * (izz - iyy)) / ixx,
        (k_t * (w1 - w2) * l - p * r * (ixx - izz)) / iyy,
        (-k_m * (w1 + w2 - w3 - w4) - q * p * (iyy - ixx)) / izz,
    );
    (a, alpha)
}

/// Where gravity enters the translational equation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GravityModel {
    /// Gravity added along `b_z` before rotating, as in the small-angle model.
    BodyFrame,
    /// Thrust rotated into E, gravity added along `e_z`.
    EarthFrame,
}

fn derivative(
    x: &SVector<f64, 12>,
    cmd: &MotorCommand,
    params: &QuadParams,
    gravity: GravityModel,
) -> Result<SVector<f64, 12>> {
    let s = RigidBodyState::unpack(x);
    let r = rot_full(&s.att)?;
    let (a_b, alpha) = accelerations(&s, cmd, params);
    let a_e = match gravity {
        GravityModel::BodyFrame => r.apply(&a_b),
        GravityModel::EarthFrame => r.apply(&Vec3::new(0.0, 0.0, a_b.z - params.g)) + Vec3::new(0.0, 0.0, params.g),
    };
    let mut dx = SVector::<f64, 12>::zeros();
    dx.fixed_rows_mut::<3>(0).copy_from(&s.v);
    dx.fixed_rows_mut::<3>(3).copy_from(&a_e);
    dx.fixed_rows_mut::<3>(6).copy_from(&s.omega);
    dx.fixed_rows_mut::<3>(9).copy_from(&alpha);
    Ok(dx)
}

fn check_dt(dt: f64) -> Result<()> {
    if dt.is_finite() && dt > 0.0 && dt <= DT_MAX {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "dt must lie in (0, {DT_MAX}], got {dt}"
        )))
    }
}

/// One classical RK4 step of the rigid-body equations with the given gravity model.
pub fn step_with(
    state: &RigidBodyState,
    cmd: &MotorCommand,
    params: &QuadParams,
    dt: f64,
    gravity: GravityModel,
) -> Result<RigidBodyState> {
    check_dt(dt)?;
    let x = state.pack();
    let k1 = derivative(&x, cmd, params, gravity)?;
    let k2 = derivative(&(x + k1 * (dt / 2.0)), cmd, params, gravity)?;
    let k3 = derivative(&(x + k2 * (dt / 2.0)), cmd, params, gravity)?;
    let k4 = derivative(&(x + k3 * dt), cmd, params, gravity)?;
    let x1 = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    let mut next = RigidBodyState::unpack(&x1);
    next.att = next.att.normalized();
    rot_full(&next.att)?;
    Ok(next)
}

/// RK4 step of the small-angle model with gravity in the body frame.
pub fn step(state: &RigidBodyState, cmd: &MotorCommand, params: &QuadParams, dt: f64) -> Result<RigidBodyState> {
    step_with(state, cmd, params, dt, GravityModel::BodyFrame)
}

/// First-order velocity response standing in for an autopilot-equipped drone.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VelocityPlantConfig {
    /// Velocity time constants per earth axis, s.
    pub tau: Vec3,
    pub v_max: f64,
    pub tau_yaw: f64,
}

impl Default for VelocityPlantConfig {
    fn default() -> Self {
        VelocityPlantConfig {
            tau: Vec3::new(1.0, 1.0, 1.0),
            v_max: 2.0,
            tau_yaw: 0.3,
        }
    }
}

impl VelocityPlantConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("plant.lag.tau[0]", self.tau.x),
            ("plant.lag.tau[1]", self.tau.y),
            ("plant.lag.tau[2]", self.tau.z),
            ("plant.lag.v_max", self.v_max),
            ("plant.lag.tau_yaw", self.tau_yaw),
        ];
        for (name, x) in fields {
            if !(x.is_finite() && x > 0.0) {
                return Err(Error::validation(name, format!("must be finite and > 0, got {x}")));
            }
        }
        Ok(())
    }
}

fn clamp_norm(v: Vec3, max: f64) -> Vec3 {
    let n = v.norm();
    if n > max {
        v * (max / n)
    } else {
        v
    }
}

fn yaw_to_earth(v_body: &Vec3, psi: f64) -> Vec3 {
    let (s, c) = psi.sin_cos();
    Vec3::new(c * v_body.x - s * v_body.y, s * v_body.x + c * v_body.y, v_body.z)
}

/// Exact zero-order-hold discretisation of `v̇ = (u − v)/τ` per axis.
pub fn velocity_plant_step(
    state: &RigidBodyState,
    v_cmd_body: &Vec3,
    yaw_rate_cmd: f64,
    cfg: &VelocityPlantConfig,
    dt: f64,
) -> RigidBodyState {
    let u = clamp_norm(yaw_to_earth(v_cmd_body, state.att.yaw), cfg.v_max);
    let mut next = *state;
    for i in 0..3 {
        let e = (-dt / cfg.tau[i]).exp();
        let dv = state.v[i] - u[i];
        next.p[i] = state.p[i] + u[i] * dt + dv * cfg.tau[i] * (1.0 - e);
        next.v[i] = u[i] + dv * e;
    }
    next.v = clamp_norm(next.v, cfg.v_max);

    let e = (-dt / cfg.tau_yaw).exp();
    let dr = state.omega.z - yaw_rate_cmd;
    next.att = Attitude::yaw_only(wrap_angle(
        state.att.yaw + yaw_rate_cmd * dt + dr * cfg.tau_yaw * (1.0 - e),
    ));
    next.omega = Vec3::new(0.0, 0.0, yaw_rate_cmd + dr * e);
    next
}

/// Inner-loop gains for the full-dynamics plant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CascadedGains {
    /// Horizontal velocity error to acceleration, 1/s.
    pub k_vel: f64,
    pub k_vel_z: f64,
    pub kp_att: f64,
    pub kd_att: f64,
    pub k_yaw_rate: f64,
    /// Roll/pitch command limit, rad.
    pub tilt_max: f64,
}

impl Default for CascadedGains {
    fn default() -> Self {
        CascadedGains {
            k_vel: 2.0,
            k_vel_z: 2.0,
            kp_att: 100.0,
            kd_att: 14.0,
            k_yaw_rate: 5.0,
            tilt_max: 0.35,
        }
    }
}

impl CascadedGains {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("plant.cascaded.k_vel", self.k_vel),
            ("plant.cascaded.k_vel_z", self.k_vel_z),
            ("plant.cascaded.kp_att", self.kp_att),
            ("plant.cascaded.kd_att", self.kd_att),
            ("plant.cascaded.k_yaw_rate", self.k_yaw_rate),
            ("plant.cascaded.tilt_max", self.tilt_max),
        ];
        for (name, x) in fields {
            if !(x.is_finite() && x > 0.0) {
                return Err(Error::validation(name, format!("must be finite and > 0, got {x}")));
            }
        }
        if self.tilt_max >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::validation("plant.cascaded.tilt_max", "must be below pi/2"));
        }
        Ok(())
    }
}

/// Motor speeds producing total thrust `thrust` (N) and body torque `torque`.
/// Returns `true` alongside when any squared speed had to be clamped.
pub fn mix(thrust: f64, torque: &Vec3, params: &QuadParams) -> (MotorCommand, bool) {
    let s = thrust / params.k_t;
    let yaw = torque.z / params.k_m;
    let a = (s - yaw) / 2.0;
    let b = (s + yaw) / 2.0;
    let d12 = torque.y / (params.k_t * params.l);
    let d34 = torque.x / (params.k_t * params.l);
    let sq = [(a + d12) / 2.0, (a - d12) / 2.0, (b + d34) / 2.0, (b - d34) / 2.0];

    let max_sq = params.omega_max * params.omega_max;
    let mut saturated = false;
    let omega = sq.map(|w2| {
        let c = w2.clamp(0.0, max_sq);
        saturated |= c != w2;
        c.sqrt()
    });
    (MotorCommand { omega }, saturated)
}

/// Velocity loop, attitude PD and motor mixing around the full dynamics.
/// Gravity is rotated properly here. Returns the new state and the mixer saturation flag.
pub fn cascaded_plant_step(
    state: &RigidBodyState,
    v_cmd_body: &Vec3,
    yaw_rate_cmd: f64,
    gains: &CascadedGains,
    params: &QuadParams,
    dt: f64,
) -> Result<(RigidBodyState, bool)> {
    let psi = state.att.yaw;
    let v_cmd = yaw_to_earth(v_cmd_body, psi);
    let a_des = Vec3::new(
        gains.k_vel * (v_cmd.x - state.v.x),
        gains.k_vel * (v_cmd.y - state.v.y),
        gains.k_vel_z * (v_cmd.z - state.v.z),
    );
    let (s, c) = psi.sin_cos();
    let a_fwd = c * a_des.x + s * a_des.y;
    let a_right = -s * a_des.x + c * a_des.y;

    let pitch_des = (-(a_fwd / params.g).atan()).clamp(-gains.tilt_max, gains.tilt_max);
    let roll_des = (a_right / params.g).atan().clamp(-gains.tilt_max, gains.tilt_max);

    let tilt = state.att.roll.cos() * state.att.pitch.cos();
    let thrust = (params.m * (params.g - a_des.z) / tilt.max(0.5)).max(0.0);
    let torque = Vec3::new(
        params.ixx * (gains.kp_att * (roll_des - state.att.roll) - gains.kd_att * state.omega.x),
        params.iyy * (gains.kp_att * (pitch_des - state.att.pitch) - gains.kd_att * state.omega.y),
        params.izz * gains.k_yaw_rate * (yaw_rate_cmd - state.omega.z),
    );
    let (cmd, saturated) = mix(thrust, &torque, params);
    let next = step_with(state, &cmd, params, dt, GravityModel::EarthFrame)?;
    Ok((next, saturated))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_fall_force() {
        let p = QuadParams::default();
        let f = sum_forces(&MotorCommand::default(), &p);
        assert_eq!(f, Vec3::new(0.0, 0.0, p.m * p.g));
    }

    #[test]
    fn hover_force_vanishes() {
        let p = QuadParams::default();
        let f = sum_forces(&MotorCommand::hover(&p), &p);
        assert!(f.norm() < 1e-12);
        let double = MotorCommand::uniform(2.0 * p.hover_speed());
        let f = sum_forces(&double, &p);
        assert!((f.z + 3.0 * p.m * p.g).abs() < 1e-12);
    }

    #[test]
    fn hover_speed_near_360() {
        let h = QuadParams::default().hover_speed();
        assert!((h - 360.0).abs() < 0.5, "{h}");
    }

    #[test]
    fn torque_signs() {
        let p = QuadParams::default();
        let h = p.hover_speed();
        assert_eq!(sum_torques(&MotorCommand::uniform(h), &p), Vec3::zeros());

        let t = sum_torques(&MotorCommand::new(h, h, h + 10.0, h), &p);
        assert!(t.x > 0.0 && t.y == 0.0);

        let t = sum_torques(&MotorCommand::new(h + 5.0, h + 5.0, h - 5.0, h - 5.0), &p);
        assert_eq!((t.x, t.y), (0.0, 0.0));
        assert!(t.z < 0.0);
    }

    #[test]
    fn hover_and_free_fall_accelerations() {
        let p = QuadParams::default();
        let s = RigidBodyState::default();
        let (a, alpha) = accelerations(&s, &MotorCommand::hover(&p), &p);
        assert!(a.norm() < 1e-12 && alpha.norm() < 1e-12);
        let (a, alpha) = accelerations(&s, &MotorCommand::default(), &p);
        assert_eq!(a, Vec3::new(0.0, 0.0, p.g));
        assert_eq!(alpha, Vec3::zeros());
    }

    #[test]
    fn dt_out_of_range() {
        let p = QuadParams::default();
        let s = RigidBodyState::default();
        assert!(step(&s, &MotorCommand::hover(&p), &p, 0.0).is_err());
        assert!(step(&s, &MotorCommand::hover(&p), &p, 1.0).is_err());
    }

    #[test]
    fn lag_plant_fixed_point() {
        let s = RigidBodyState {
            v: Vec3::new(0.3, -0.2, 0.0),
            ..Default::default()
        };
        let n = velocity_plant_step(&s, &s.v, 0.0, &VelocityPlantConfig::default(), 0.005);
        assert!((n.v - s.v).norm() < 1e-15);
    }

    #[test]
    fn lag_plant_first_order_step() {
        let cfg = VelocityPlantConfig {
            tau: Vec3::new(0.5, 0.5, 0.5),
            ..Default::default()
        };
        let mut s = RigidBodyState::default();
        for _ in 0..100 {
            s = velocity_plant_step(&s, &Vec3::x(), 0.0, &cfg, 0.005);
        }
        let expect = 1.0 - (-1.0f64).exp();
        assert!((s.v.x - expect).abs() < 1e-3, "{}", s.v.x);
    }

    #[test]
    fn lag_plant_saturates() {
        let cfg = VelocityPlantConfig::default();
        let mut s = RigidBodyState::default();
        for _ in 0..4000 {
            s = velocity_plant_step(&s, &Vec3::new(7.0, 3.0, 0.0), 0.0, &cfg, 0.005);
            assert!(s.v.norm() <= cfg.v_max + 1e-9);
        }
        assert!((s.v.norm() - cfg.v_max).abs() < 1e-6);
    }

    #[test]
    fn lag_plant_command_is_in_body_frame() {
        let cfg = VelocityPlantConfig::default();
        let mut s = RigidBodyState {
            att: Attitude::yaw_only(std::f64::consts::FRAC_PI_2),
            ..Default::default()
        };
        for _ in 0..4000 {
            s = velocity_plant_step(&s, &Vec3::new(0.5, 0.0, 0.0), 0.0, &cfg, 0.005);
        }
        assert!((s.v - Vec3::new(0.0, 0.5, 0.0)).norm() < 1e-6);
    }

    #[test]
    fn mixing_round_trip() {
        let p = QuadParams::default();
        let thrust = 1.1 * p.m * p.g;
        let torque = Vec3::new(2e-3, -1.5e-3, 4e-4);
        let (cmd, sat) = mix(thrust, &torque, &p);
        assert!(!sat);
        let f = sum_forces(&cmd, &p);
        assert!((p.m * p.g - f.z - thrust).abs() < 1e-9);
        assert!((sum_torques(&cmd, &p) - torque).norm() < 1e-9);
    }

    #[test]
    fn mixing_flags_infeasible() {
        let p = QuadParams::default();
        let (cmd, sat) = mix(0.1, &Vec3::new(0.5, 0.0, 0.0), &p);
        assert!(sat);
        assert!(cmd.omega.iter().all(|w| *w >= 0.0 && *w <= p.omega_max));
    }
}
