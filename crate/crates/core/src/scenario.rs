//! Missions, built-in scenarios and the fixed-step simulation loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    cascaded_plant_step, velocity_plant_step, CascadedGains, QuadParams, RigidBodyState, VelocityPlantConfig, DT_MAX,
};
use crate::epfc::{epfc_terms, to_body_frame, yaw_to_face_target, Kinematics};
use crate::frames::{wrap_angle, Attitude, Vec3};
use crate::pfc::{pfc_terms, ControlTerms, Obstacle, PfcGains};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Pfc,
    Epfc,
}

impl ControllerKind {
    pub fn name(&self) -> &'static str {
        match self {
            ControllerKind::Pfc => "pfc",
            ControllerKind::Epfc => "epfc",
        }
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pfc" => Ok(ControllerKind::Pfc),
            "epfc" => Ok(ControllerKind::Epfc),
            _ => Err(Error::InvalidArgument(format!(
                "unknown controller `{s}` (expected pfc or epfc)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantKind {
    /// Position follows the command directly.
    Kinematic,
    /// First-order velocity lag.
    Lag,
    /// Cascaded inner loops around the rigid-body dynamics.
    Full,
}

impl std::str::FromStr for PlantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kinematic" => Ok(PlantKind::Kinematic),
            "lag" => Ok(PlantKind::Lag),
            "full" => Ok(PlantKind::Full),
            _ => Err(Error::InvalidArgument(format!(
                "unknown plant `{s}` (expected kinematic, lag or full)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantConfig {
    pub kind: PlantKind,
    pub lag: VelocityPlantConfig,
    pub cascaded: CascadedGains,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            kind: PlantKind::Lag,
            lag: VelocityPlantConfig::default(),
            cascaded: CascadedGains::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub position: Vec3,
    #[serde(default)]
    pub dwell: f64,
}

/// A waypoint counts as reached inside `acquisition_radius`; the dwell clock
/// starts there. A leg that never reaches its waypoint ends after `leg_timeout`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdvanceRule {
    pub acquisition_radius: f64,
    pub leg_timeout: f64,
}

impl Default for AdvanceRule {
    fn default() -> Self {
        AdvanceRule {
            acquisition_radius: 0.15,
            leg_timeout: 20.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    StaticPoint {
        position: Vec3,
    },
    Waypoints {
        waypoints: Vec<Waypoint>,
        #[serde(default)]
        advance: AdvanceRule,
    },
    /// Polyline traversed at constant speed; closed paths repeat.
    Path {
        vertices: Vec<Vec3>,
        speed: f64,
        #[serde(default)]
        closed: bool,
    },
}

impl TargetSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = |v: &Vec3| v.iter().all(|x| x.is_finite());
        match self {
            TargetSpec::StaticPoint { position } => {
                if !finite(position) {
                    return Err(Error::validation("target.position", "must be finite"));
                }
            }
            TargetSpec::Waypoints { waypoints, advance } => {
                if waypoints.is_empty() {
                    return Err(Error::validation("target.waypoints", "must not be empty"));
                }
                for (i, w) in waypoints.iter().enumerate() {
                    if !finite(&w.position) {
                        return Err(Error::validation(
                            format!("target.waypoints[{i}].position"),
                            "must be finite",
                        ));
                    }
                    if !(w.dwell.is_finite() && w.dwell >= 0.0) {
                        return Err(Error::validation(
                            format!("target.waypoints[{i}].dwell"),
                            "must be >= 0",
                        ));
                    }
                }
                if !(advance.acquisition_radius.is_finite() && advance.acquisition_radius > 0.0) {
                    return Err(Error::validation("target.advance.acquisition_radius", "must be > 0"));
                }
                if advance.leg_timeout.is_nan() || advance.leg_timeout <= 0.0 {
                    return Err(Error::validation("target.advance.leg_timeout", "must be > 0"));
                }
            }
            TargetSpec::Path { vertices, speed, .. } => {
                if vertices.len() < 2 {
                    return Err(Error::validation("target.vertices", "needs at least two vertices"));
                }
                if !vertices.iter().all(finite) {
                    return Err(Error::validation("target.vertices", "must be finite"));
                }
                if !(speed.is_finite() && *speed > 0.0) {
                    return Err(Error::validation("target.speed", "must be finite and > 0"));
                }
                if vertices.windows(2).any(|w| (w[1] - w[0]).norm() == 0.0) {
                    return Err(Error::validation("target.vertices", "consecutive vertices must differ"));
                }
            }
        }
        Ok(())
    }
}

/// Open-loop target position and velocity. Waypoints are held for their
/// dwell times back to back; [`run`] uses the closed-loop [`WaypointTracker`].
pub fn target_state(spec: &TargetSpec, t: f64) -> (Vec3, Vec3) {
    match spec {
        TargetSpec::StaticPoint { position } => (*position, Vec3::zeros()),
        TargetSpec::Waypoints { waypoints, .. } => {
            let mut end = 0.0;
            for w in waypoints {
                end += w.dwell;
                if t < end {
                    return (w.position, Vec3::zeros());
                }
            }
            (waypoints.last().map(|w| w.position).unwrap_or_default(), Vec3::zeros())
        }
        TargetSpec::Path {
            vertices,
            speed,
            closed,
        } => path_state(vertices, *speed, *closed, t),
    }
}

fn path_state(vertices: &[Vec3], speed: f64, closed: bool, t: f64) -> (Vec3, Vec3) {
    let mut segments: Vec<(Vec3, Vec3)> = vertices.windows(2).map(|w| (w[0], w[1])).collect();
    if closed {
        segments.push((vertices[vertices.len() - 1], vertices[0]));
    }
    let total: f64 = segments.iter().map(|(a, b)| (b - a).norm()).sum();
    let mut s = speed * t.max(0.0);
    if closed {
        s = s.rem_euclid(total);
    } else if s >= total {
        return (vertices[vertices.len() - 1], Vec3::zeros());
    }
    for (a, b) in &segments {
        let len = (b - a).norm();
        if s < len {
            let dir = (b - a) / len;
            return (a + dir * s, dir * speed);
        }
        s -= len;
    }
    let (a, b) = segments[segments.len() - 1];
    (b, (b - a).normalize() * speed)
}

/// Closed-loop waypoint sequencing.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WaypointTracker {
    pub index: usize,
    arrived_at: Option<f64>,
    leg_start: f64,
}

impl WaypointTracker {
    /// Feeds the drone's distance to the active goal at time `t`. Returns true
    /// when the tracker advanced to the next waypoint.
    pub fn update(&mut self, t: f64, distance: f64, waypoints: &[Waypoint], rule: &AdvanceRule) -> bool {
        let Some(w) = waypoints.get(self.index) else {
            return false;
        };
        if self.arrived_at.is_none() && distance < rule.acquisition_radius {
            self.arrived_at = Some(t);
        }
        let dwell_done = self.arrived_at.is_some_and(|t0| t - t0 >= w.dwell - 1e-9);
        if dwell_done || t - self.leg_start >= rule.leg_timeout - 1e-9 {
            self.index += 1;
            self.arrived_at = None;
            self.leg_start = t;
            return true;
        }
        false
    }

    pub fn done(&self, waypoints: &[Waypoint]) -> bool {
        self.index >= waypoints.len()
    }
}

/// Obstacles scattered uniformly in a horizontal box at the start altitude.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomObstacles {
    pub count: usize,
    pub radius: f64,
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    /// Minimum horizontal distance to any waypoint.
    pub min_waypoint_clearance: f64,
    pub min_start_clearance: f64,
    pub min_separation: f64,
    pub max_attempts: usize,
}

impl Default for RandomObstacles {
    fn default() -> Self {
        RandomObstacles {
            count: 6,
            radius: 0.25,
            x_range: [-3.5, 3.5],
            y_range: [-2.0, 2.0],
            min_waypoint_clearance: 1.6,
            min_start_clearance: 1.0,
            min_separation: 1.0,
            max_attempts: 100_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.005,
            t_end: 120.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Flags {
    /// Turn the nose towards the target.
    pub face_target: bool,
    /// Heading error to yaw-rate command, 1/s.
    pub yaw_gain: f64,
    pub max_yaw_rate: f64,
    /// End the run once the last waypoint's dwell has expired.
    pub stop_on_completion: bool,
}

impl Default for Flags {
    fn default() -> Self {
        Flags {
            face_target: false,
            yaw_gain: 1.5,
            max_yaw_rate: 1.5,
            stop_on_completion: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Start {
    pub position: Vec3,
    pub yaw: f64,
}

impl Default for Start {
    fn default() -> Self {
        Start {
            position: Vec3::new(0.0, 0.0, -DEFAULT_ALTITUDE),
            yaw: 0.0,
        }
    }
}

/// Flight altitude of the built-in courses, m above the origin.
pub const DEFAULT_ALTITUDE: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub controller: ControllerKind,
    /// Distance kept from the target along the target-to-drone bearing, m.
    #[serde(default)]
    pub standoff: f64,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub start: Start,
    #[serde(default)]
    pub flags: Flags,
    #[serde(default)]
    pub plant: PlantConfig,
    #[serde(default)]
    pub params: QuadParams,
    #[serde(default)]
    pub gains: PfcGains,
    pub target: TargetSpec,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_obstacles: Option<RandomObstacles>,
}

impl Scenario {
    pub fn with_controller(mut self, controller: ControllerKind) -> Self {
        self.controller = controller;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let sim = &self.sim;
        if !(sim.dt.is_finite() && sim.dt > 0.0 && sim.dt <= DT_MAX) {
            return Err(Error::validation(
                "sim.dt",
                format!("must lie in (0, {DT_MAX}], got {}", sim.dt),
            ));
        }
        if !(sim.t_end.is_finite() && sim.t_end >= 0.0) {
            return Err(Error::validation(
                "sim.t_end",
                format!("must be finite and >= 0, got {}", sim.t_end),
            ));
        }
        if sim.seed > i64::MAX as u64 {
            return Err(Error::validation("sim.seed", "must fit a signed 64-bit integer"));
        }
        if !(self.standoff.is_finite() && self.standoff >= 0.0) {
            return Err(Error::validation("standoff", "must be finite and >= 0"));
        }
        if !self.start.position.iter().all(|x| x.is_finite()) || !self.start.yaw.is_finite() {
            return Err(Error::validation("start", "must be finite"));
        }
        if !(self.flags.yaw_gain > 0.0 && self.flags.max_yaw_rate > 0.0) {
            return Err(Error::validation(
                "flags.yaw_gain",
                "yaw gain and rate limit must be > 0",
            ));
        }
        self.params.validate()?;
        self.gains.validate()?;
        self.plant.lag.validate()?;
        self.plant.cascaded.validate()?;
        self.target.validate()?;
        for (i, o) in self.obstacles.iter().enumerate() {
            o.validate(&format!("obstacles[{i}]"))?;
        }
        if let Some(r) = &self.random_obstacles {
            if !(r.radius >= 0.0 && r.x_range[0] < r.x_range[1] && r.y_range[0] < r.y_range[1]) {
                return Err(Error::validation(
                    "random_obstacles",
                    "needs radius >= 0 and non-empty x/y ranges",
                ));
            }
        }
        Ok(())
    }

    /// FNV-1a digest of the scenario without its controller choice, shared by
    /// runs of different controllers on the same mission.
    pub fn fingerprint(&self) -> String {
        let mut v = serde_json::to_value(self).expect("scenario is serialisable");
        if let Some(m) = v.as_object_mut() {
            m.remove("controller");
        }
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in v.to_string().bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        format!("{h:016x}")
    }

    fn waypoint_positions(&self) -> Vec<Vec3> {
        match &self.target {
            TargetSpec::Waypoints { waypoints, .. } => waypoints.iter().map(|w| w.position).collect(),
            TargetSpec::StaticPoint { position } => vec![*position],
            TargetSpec::Path { vertices, .. } => vertices.clone(),
        }
    }

    /// Fixed obstacles followed by the seeded random field, if any.
    pub fn resolve_obstacles(&self) -> Result<Vec<Obstacle>> {
        let mut out = self.obstacles.clone();
        let Some(field) = &self.random_obstacles else {
            return Ok(out);
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.sim.seed);
        let waypoints = self.waypoint_positions();
        let start = self.start.position;
        let horizontal = |a: &Vec3, b: &Vec3| (a.x - b.x).hypot(a.y - b.y);
        let mut placed = 0;
        let mut attempts = 0;
        while placed < field.count {
            attempts += 1;
            if attempts > field.max_attempts {
                return Err(Error::validation(
                    "random_obstacles",
                    format!("placed only {placed} of {} obstacles", field.count),
                ));
            }
            let p = Vec3::new(
                rng.gen_range(field.x_range[0]..field.x_range[1]),
                rng.gen_range(field.y_range[0]..field.y_range[1]),
                start.z,
            );
            let ok = waypoints
                .iter()
                .all(|w| horizontal(&p, w) >= field.min_waypoint_clearance)
                && horizontal(&p, &start) >= field.min_start_clearance
                && out[self.obstacles.len()..]
                    .iter()
                    .all(|o| horizontal(&p, &o.position) >= field.min_separation);
            if ok {
                out.push(Obstacle {
                    position: p,
                    velocity: Vec3::zeros(),
                    radius: field.radius,
                });
                placed += 1;
            }
        }
        Ok(out)
    }
}

fn course(name: &str, points: &[(f64, f64)], dwell: f64) -> Scenario {
    let waypoints = points
        .iter()
        .map(|&(x, y)| Waypoint {
            position: Vec3::new(x, y, -DEFAULT_ALTITUDE),
            dwell,
        })
        .collect();
    Scenario {
        name: name.to_string(),
        controller: ControllerKind::Epfc,
        standoff: 0.0,
        sim: SimConfig::default(),
        start: Start::default(),
        flags: Flags::default(),
        plant: PlantConfig::default(),
        params: QuadParams::default(),
        gains: PfcGains::default(),
        target: TargetSpec::Waypoints {
            waypoints,
            advance: AdvanceRule::default(),
        },
        obstacles: Vec::new(),
        random_obstacles: None,
    }
}

fn wand(name: &str, target: TargetSpec, t_end: f64) -> Scenario {
    let mut s = course(name, &[(0.0, 0.0)], 0.0);
    s.target = target;
    s.standoff = 1.0;
    s.flags.face_target = true;
    s.flags.stop_on_completion = false;
    s.sim.t_end = t_end;
    s
}

const SIM_COURSE: [(f64, f64); 4] = [(2.5, -1.0), (2.5, 1.0), (-2.5, 1.0), (-2.5, -1.0)];
const EXP_COURSE: [(f64, f64); 4] = [(1.5, -0.5), (1.5, 0.5), (-1.5, 0.5), (-1.5, -0.5)];

pub const BUILTIN_NAMES: [&str; 6] = [
    "sim-course",
    "exp-course",
    "multi-obstacle",
    "static-target",
    "static-target-obstacle",
    "dynamic-square",
];

pub fn builtin(name: &str) -> Option<Scenario> {
    let z = -DEFAULT_ALTITUDE;
    let s = match name {
        "sim-course" => {
            let mut s = course(name, &SIM_COURSE, 2.0);
            s.obstacles.push(Obstacle::fixed(Vec3::new(1.0, 1.0, z)));
            s
        }
        "exp-course" => course(name, &EXP_COURSE, 2.0),
        "multi-obstacle" => {
            let mut s = course(name, &SIM_COURSE, 2.0);
            s.gains.p_star = 1.5;
            s.random_obstacles = Some(RandomObstacles::default());
            s.sim.t_end = 150.0;
            s
        }
        "static-target" => wand(
            name,
            TargetSpec::StaticPoint {
                position: Vec3::new(4.2, 0.0, z),
            },
            20.0,
        ),
        "static-target-obstacle" => {
            let mut s = wand(
                name,
                TargetSpec::StaticPoint {
                    position: Vec3::new(5.2, 0.0, z),
                },
                30.0,
            );
            s.obstacles.push(Obstacle::fixed(Vec3::new(2.6, 0.15, z)));
            s
        }
        "dynamic-square" => wand(
            name,
            TargetSpec::Path {
                vertices: EXP_COURSE
                    .iter()
                    .map(|&(x, y)| Vec3::new(2.0 * x, 2.0 * y, z))
                    .collect(),
                speed: 0.3,
                closed: true,
            },
            60.0,
        ),
        _ => return None,
    };
    Some(s)
}

pub fn builtin_scenarios() -> Vec<(&'static str, Scenario)> {
    BUILTIN_NAMES
        .iter()
        .map(|n| (*n, builtin(n).expect("every listed builtin exists")))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub state: RigidBodyState,
    /// Target position and velocity.
    pub target: Vec3,
    pub target_v: Vec3,
    /// Point actually tracked: the target shifted by the standoff.
    pub goal: Vec3,
    pub cmd_earth: Vec3,
    pub cmd_body: Vec3,
    pub yaw_rate_cmd: f64,
    pub terms: ControlTerms,
    pub waypoint: usize,
    /// Command or plant saturation during the step starting here.
    pub saturated: bool,
    /// Heading hold because the target was straight above or below.
    pub heading_held: bool,
}

impl TrajectoryRecord {
    pub fn gates(&self) -> u8 {
        self.terms.gates
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvanceEvent {
    pub t: f64,
    /// First record that tracks the new waypoint.
    pub record: usize,
    pub waypoint: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub scenario: String,
    pub controller: ControllerKind,
    pub dt: f64,
    /// Obstacles at t = 0, random placements included.
    pub obstacles: Vec<Obstacle>,
    pub waypoint_count: usize,
    pub records: Vec<TrajectoryRecord>,
    pub events: Vec<AdvanceEvent>,
    /// Time at which the last waypoint was released.
    pub completed_at: Option<f64>,
}

fn goal_point(target: &Vec3, drone: &Vec3, standoff: f64, eps: f64) -> Vec3 {
    if standoff == 0.0 {
        return *target;
    }
    let d = drone - target;
    let n = d.norm();
    if n <= eps {
        return *target;
    }
    target + d * (standoff / n)
}

/// Simulates the scenario with a fixed step. Record `k` is taken at `t = k·dt`
/// before the step it commands.
pub fn run(scenario: &Scenario) -> Result<TrajectoryLog> {
    scenario.validate()?;
    let obstacles = scenario.resolve_obstacles()?;
    let sc = scenario;
    let dt = sc.sim.dt;
    let steps = (sc.sim.t_end / dt).round() as usize;
    let gains = &sc.gains;

    let (waypoints, rule): (&[Waypoint], AdvanceRule) = match &sc.target {
        TargetSpec::Waypoints { waypoints, advance } => (waypoints, *advance),
        _ => (&[], AdvanceRule::default()),
    };
    let mut tracker = WaypointTracker::default();

    let mut state = RigidBodyState::at(sc.start.position);
    state.att = Attitude::yaw_only(wrap_angle(sc.start.yaw));
    let mut heading = state.att.yaw;

    let mut records = Vec::with_capacity(steps + 1);
    let mut events = Vec::new();
    let mut completed_at = None;
    let mut now_obstacles = obstacles.clone();

    for k in 0..=steps {
        let t = k as f64 * dt;
        let (p_t, v_t) = if waypoints.is_empty() {
            target_state(&sc.target, t)
        } else {
            let w = &waypoints[tracker.index.min(waypoints.len() - 1)];
            (w.position, Vec3::zeros())
        };
        let goal = goal_point(&p_t, &state.p, sc.standoff, gains.eps_p);
        for (now, o) in now_obstacles.iter_mut().zip(&obstacles) {
            *now = o.at_time(t);
        }

        let terms = match sc.controller {
            ControllerKind::Pfc => pfc_terms(&state.p, &goal, &now_obstacles, gains),
            ControllerKind::Epfc => epfc_terms(
                &Kinematics::new(state.p, state.v),
                &Kinematics::new(goal, v_t),
                &now_obstacles,
                gains,
            ),
        };
        let cmd_earth = terms.command;
        let cmd_body = to_body_frame(&cmd_earth, state.att.yaw);

        let mut heading_held = false;
        let yaw_rate_cmd = if sc.flags.face_target {
            let (psi, held) = yaw_to_face_target(&state.p, &p_t, heading, gains.eps_p);
            heading = psi;
            heading_held = held;
            let f = &sc.flags;
            (f.yaw_gain * wrap_angle(psi - state.att.yaw)).clamp(-f.max_yaw_rate, f.max_yaw_rate)
        } else {
            0.0
        };

        if sc.plant.kind == PlantKind::Kinematic {
            state.v = cmd_earth;
            state.omega = Vec3::new(0.0, 0.0, yaw_rate_cmd);
        }
        if !(state.is_finite() && cmd_earth.iter().all(|x| x.is_finite())) {
            return Err(Error::NumericAbort { index: records.len() });
        }
        records.push(TrajectoryRecord {
            t,
            state,
            target: p_t,
            target_v: v_t,
            goal,
            cmd_earth,
            cmd_body,
            yaw_rate_cmd,
            terms,
            waypoint: tracker.index,
            saturated: terms.saturated,
            heading_held,
        });

        let finished = !waypoints.is_empty() && tracker.done(waypoints);
        if k == steps || (finished && sc.flags.stop_on_completion) {
            break;
        }

        let (next, plant_saturated) = match sc.plant.kind {
            PlantKind::Kinematic => {
                let mut n = state;
                n.p += cmd_earth * dt;
                n.att = Attitude::yaw_only(wrap_angle(state.att.yaw + yaw_rate_cmd * dt));
                (n, false)
            }
            PlantKind::Lag => (
                velocity_plant_step(&state, &cmd_body, yaw_rate_cmd, &sc.plant.lag, dt),
                false,
            ),
            PlantKind::Full => {
                cascaded_plant_step(&state, &cmd_body, yaw_rate_cmd, &sc.plant.cascaded, &sc.params, dt)?
            }
        };
        if plant_saturated {
            if let Some(r) = records.last_mut() {
                r.saturated = true;
            }
        }
        if !next.is_finite() {
            return Err(Error::NumericAbort { index: records.len() });
        }
        state = next;

        if !waypoints.is_empty() && !tracker.done(waypoints) {
            let t_next = (k + 1) as f64 * dt;
            let w = waypoints[tracker.index].position;
            let distance = (state.p - goal_point(&w, &state.p, sc.standoff, gains.eps_p)).norm();
            if tracker.update(t_next, distance, waypoints, &rule) {
                events.push(AdvanceEvent {
                    t: t_next,
                    record: records.len(),
                    waypoint: tracker.index,
                });
                if tracker.done(waypoints) {
                    completed_at = Some(t_next);
                }
            }
        }
    }

    Ok(TrajectoryLog {
        scenario: sc.name.clone(),
        controller: sc.controller,
        dt,
        obstacles,
        waypoint_count: waypoints.len(),
        records,
        events,
        completed_at,
    })
}
