//! Run evaluation: per-leg overshoot and settling, clearance, collisions,
//! lap time, and side-by-side controller comparison.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{monitor, Verdict};
use crate::dynamics::QuadParams;
use crate::pfc::{Obstacle, PfcGains};
use crate::scenario::{ControllerKind, PlantConfig, Scenario, TrajectoryLog};
use crate::{Error, Result};

pub const METRICS_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SETTLING_BAND: f64 = 0.05;

/// A contiguous stretch of records that tracks one goal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Leg {
    pub waypoint: usize,
    pub start: usize,
    /// One past the last record.
    pub end: usize,
}

/// Legs from the logged advance events. A log with a fixed target and no
/// waypoints is a single leg; moving targets have none.
pub fn legs(log: &TrajectoryLog) -> Vec<Leg> {
    let n = log.records.len();
    if n == 0 {
        return Vec::new();
    }
    if log.waypoint_count == 0 {
        let g0 = log.records[0].target;
        if log.records.iter().all(|r| r.target == g0) {
            return vec![Leg {
                waypoint: 0,
                start: 0,
                end: n,
            }];
        }
        return Vec::new();
    }
    let mut bounds = vec![(0usize, 0usize)];
    bounds.extend(log.events.iter().map(|e| (e.record, e.waypoint)));
    let mut out = Vec::new();
    for (i, &(start, waypoint)) in bounds.iter().enumerate() {
        let end = bounds.get(i + 1).map_or(n, |b| b.0).min(n);
        if waypoint < log.waypoint_count && start < end {
            out.push(Leg { waypoint, start, end });
        }
    }
    out
}

/// Dominant axis, signed step size and final goal coordinate for a leg.
fn step_geometry(log: &TrajectoryLog, leg: &Leg) -> Option<(usize, f64, f64)> {
    let start = log.records[leg.start].state.p;
    let goal = log.records[leg.end - 1].goal;
    let step = goal - start;
    let axis = step.iamax();
    if step[axis].abs() < 1e-9 {
        return None;
    }
    Some((axis, step[axis], goal[axis]))
}

/// Peak excursion past the goal along the dominant axis, % of the step.
pub fn overshoot(log: &TrajectoryLog, leg: &Leg) -> Option<f64> {
    let (axis, step, goal) = step_geometry(log, leg)?;
    let peak = log.records[leg.start..leg.end]
        .iter()
        .map(|r| (r.state.p[axis] - goal) * step.signum())
        .fold(0.0, f64::max);
    Some(peak / step.abs() * 100.0)
}

/// Time from leg start after which the dominant-axis error stays within
/// `band` of the step until the leg ends. `None` if it never settles.
pub fn settling_time(log: &TrajectoryLog, leg: &Leg, band: f64) -> Option<f64> {
    let (axis, step, goal) = step_geometry(log, leg)?;
    let recs = &log.records[leg.start..leg.end];
    let limit = band * step.abs();
    match recs.iter().rposition(|r| (r.state.p[axis] - goal).abs() > limit) {
        None => Some(0.0),
        Some(j) if j + 1 == recs.len() => None,
        Some(j) => Some(recs[j + 1].t - recs[0].t),
    }
}

/// Smallest surface distance to any obstacle; `+inf` without obstacles.
pub fn min_clearance(log: &TrajectoryLog, obstacles: &[Obstacle]) -> f64 {
    let mut best = f64::INFINITY;
    for r in &log.records {
        for o in obstacles {
            best = best.min((r.state.p - o.at_time(r.t).position).norm() - o.radius);
        }
    }
    best
}

/// Entries into any obstacle disk; a contiguous violation counts once.
pub fn collisions(log: &TrajectoryLog, obstacles: &[Obstacle]) -> usize {
    let mut inside = vec![false; obstacles.len()];
    let mut count = 0;
    for r in &log.records {
        for (o, flag) in obstacles.iter().zip(inside.iter_mut()) {
            let hit = (r.state.p - o.at_time(r.t).position).norm() - o.radius <= 0.0;
            if hit && !*flag {
                count += 1;
            }
            *flag = hit;
        }
    }
    count
}

pub fn max_speed(log: &TrajectoryLog) -> f64 {
    log.records.iter().map(|r| r.state.v.norm()).fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LegMetrics {
    pub waypoint: usize,
    pub start_t: f64,
    pub end_t: f64,
    /// Index of the dominant axis (0 = x, 1 = y, 2 = z).
    pub axis: usize,
    pub step: f64,
    pub overshoot_pct: Option<f64>,
    pub settling_time: Option<f64>,
    pub settled: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSummary {
    pub verdict: Verdict,
    pub checked_steps: usize,
    pub excluded_steps: usize,
    pub increases: usize,
    pub max_increase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub schema_version: u32,
    pub scenario: String,
    pub fingerprint: String,
    pub controller: ControllerKind,
    pub dt: f64,
    pub settling_band: f64,
    pub legs: Vec<LegMetrics>,
    /// Largest overshoot over all legs.
    pub worst_overshoot_pct: Option<f64>,
    /// Largest settling time over all legs; only meaningful when `all_legs_settled`.
    pub worst_settling_time: Option<f64>,
    pub all_legs_settled: bool,
    pub lap_time: Option<f64>,
    /// Absent when the scenario has no obstacles.
    pub min_clearance: Option<f64>,
    pub collisions: usize,
    pub max_speed: f64,
    pub lyapunov: LyapunovSummary,
    pub params: QuadParams,
    pub gains: PfcGains,
    pub plant: PlantConfig,
    #[serde(default)]
    pub provenance: Vec<String>,
}

impl RunMetrics {
    /// Settling time used for ranking: unsettled runs rank as infinitely slow.
    pub fn settling_rank(&self) -> f64 {
        match (self.all_legs_settled, self.worst_settling_time) {
            (true, Some(t)) => t,
            _ => f64::INFINITY,
        }
    }

    /// Name of the first non-finite number, if any.
    pub fn non_finite_field(&self) -> Option<String> {
        let mut scalars = vec![
            ("dt", Some(self.dt)),
            ("settling_band", Some(self.settling_band)),
            ("worst_overshoot_pct", self.worst_overshoot_pct),
            ("worst_settling_time", self.worst_settling_time),
            ("lap_time", self.lap_time),
            ("min_clearance", self.min_clearance),
            ("max_speed", Some(self.max_speed)),
            ("lyapunov.max_increase", Some(self.lyapunov.max_increase)),
        ];
        for leg in &self.legs {
            scalars.extend([
                ("legs.start_t", Some(leg.start_t)),
                ("legs.end_t", Some(leg.end_t)),
                ("legs.step", Some(leg.step)),
                ("legs.overshoot_pct", leg.overshoot_pct),
                ("legs.settling_time", leg.settling_time),
            ]);
        }
        scalars
            .into_iter()
            .find(|(_, v)| v.is_some_and(|x| !x.is_finite()))
            .map(|(k, _)| k.to_string())
    }
}

pub fn evaluate(scenario: &Scenario, log: &TrajectoryLog) -> Result<RunMetrics> {
    evaluate_with_band(scenario, log, DEFAULT_SETTLING_BAND)
}

pub fn evaluate_with_band(scenario: &Scenario, log: &TrajectoryLog, band: f64) -> Result<RunMetrics> {
    if log.records.is_empty() {
        return Err(Error::EmptyLog);
    }
    let mut leg_metrics = Vec::new();
    for leg in legs(log) {
        let geometry = step_geometry(log, &leg);
        let settling = settling_time(log, &leg, band);
        leg_metrics.push(LegMetrics {
            waypoint: leg.waypoint,
            start_t: log.records[leg.start].t,
            end_t: log.records[leg.end - 1].t,
            axis: geometry.map_or(0, |g| g.0),
            step: geometry.map_or(0.0, |g| g.1),
            overshoot_pct: overshoot(log, &leg),
            settling_time: settling,
            settled: geometry.is_none() || settling.is_some(),
        });
    }
    let worst = |f: fn(&LegMetrics) -> Option<f64>| leg_metrics.iter().filter_map(f).reduce(f64::max);
    let lyap = monitor(log, &scenario.gains)?;
    let clearance = min_clearance(log, &log.obstacles);

    Ok(RunMetrics {
        schema_version: METRICS_SCHEMA_VERSION,
        scenario: scenario.name.clone(),
        fingerprint: scenario.fingerprint(),
        controller: scenario.controller,
        dt: scenario.sim.dt,
        settling_band: band,
        worst_overshoot_pct: worst(|l| l.overshoot_pct),
        worst_settling_time: worst(|l| l.settling_time),
        all_legs_settled: leg_metrics.iter().all(|l| l.settled),
        legs: leg_metrics,
        lap_time: log.completed_at,
        min_clearance: clearance.is_finite().then_some(clearance.max(0.0)),
        collisions: collisions(log, &log.obstacles),
        max_speed: max_speed(log),
        lyapunov: LyapunovSummary {
            verdict: lyap.verdict,
            checked_steps: lyap.checked_steps,
            excluded_steps: lyap.excluded_steps,
            increases: lyap.increases,
            max_increase: lyap.max_increase,
        },
        params: scenario.params,
        gains: scenario.gains,
        plant: scenario.plant,
        provenance: Vec::new(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub a: Option<f64>,
    pub b: Option<f64>,
    /// `b - a` when both are present.
    pub delta: Option<f64>,
}

/// Outcome of the PFC-versus-ePFC trend checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendCheck {
    pub epfc_overshoot_at_most_2pct: bool,
    pub epfc_overshoot_below_pfc: bool,
    pub pfc_overshoot_at_least_10pct: bool,
    pub epfc_settling_not_slower: bool,
    pub epfc_clearance_above_pfc: bool,
    pub both_collision_free: bool,
}

impl TrendCheck {
    pub fn evaluate(pfc: &RunMetrics, epfc: &RunMetrics) -> Self {
        let os = |m: &RunMetrics| m.worst_overshoot_pct.unwrap_or(0.0);
        let clear = |m: &RunMetrics| m.min_clearance.unwrap_or(f64::INFINITY);
        TrendCheck {
            epfc_overshoot_at_most_2pct: os(epfc) <= 2.0,
            epfc_overshoot_below_pfc: os(epfc) < os(pfc),
            pfc_overshoot_at_least_10pct: os(pfc) >= 10.0,
            epfc_settling_not_slower: epfc.settling_rank() <= pfc.settling_rank(),
            epfc_clearance_above_pfc: clear(epfc) > clear(pfc),
            both_collision_free: pfc.collisions == 0 && epfc.collisions == 0,
        }
    }

    /// Failed overshoot and settling trends.
    pub fn failures(&self) -> Vec<&'static str> {
        let checks = [
            (self.epfc_overshoot_at_most_2pct, "ePFC worst-leg overshoot <= 2%"),
            (self.epfc_overshoot_below_pfc, "ePFC overshoot < PFC overshoot"),
            (self.pfc_overshoot_at_least_10pct, "PFC worst-leg overshoot >= 10%"),
            (self.epfc_settling_not_slower, "ePFC settling time <= PFC settling time"),
        ];
        checks.into_iter().filter(|c| !c.0).map(|c| c.1).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema_version: u32,
    pub scenario: String,
    pub fingerprint: String,
    pub a: RunMetrics,
    pub b: RunMetrics,
    pub rows: Vec<ComparisonRow>,
    /// Present when one side is PFC and the other ePFC.
    pub trends: Option<TrendCheck>,
}

fn row(metric: &str, a: Option<f64>, b: Option<f64>) -> ComparisonRow {
    ComparisonRow {
        metric: metric.to_string(),
        a,
        b,
        delta: a.zip(b).map(|(a, b)| b - a),
    }
}

pub fn compare(a: &RunMetrics, b: &RunMetrics) -> Result<ComparisonReport> {
    if a.fingerprint != b.fingerprint || a.scenario != b.scenario {
        return Err(Error::ScenarioMismatch(format!(
            "`{}` ({}) vs `{}` ({})",
            a.scenario, a.fingerprint, b.scenario, b.fingerprint
        )));
    }
    let mut rows = vec![
        row("worst_overshoot_pct", a.worst_overshoot_pct, b.worst_overshoot_pct),
        row(
            "worst_settling_time",
            a.all_legs_settled.then_some(a.worst_settling_time).flatten(),
            b.all_legs_settled.then_some(b.worst_settling_time).flatten(),
        ),
        row("lap_time", a.lap_time, b.lap_time),
        row("min_clearance", a.min_clearance, b.min_clearance),
        row("collisions", Some(a.collisions as f64), Some(b.collisions as f64)),
        row("max_speed", Some(a.max_speed), Some(b.max_speed)),
    ];
    for (la, lb) in a.legs.iter().zip(&b.legs) {
        rows.push(row(
            &format!("leg{}_overshoot_pct", la.waypoint + 1),
            la.overshoot_pct,
            lb.overshoot_pct,
        ));
        rows.push(row(
            &format!("leg{}_settling_time", la.waypoint + 1),
            la.settling_time,
            lb.settling_time,
        ));
    }
    let trends = match (a.controller, b.controller) {
        (ControllerKind::Pfc, ControllerKind::Epfc) => Some(TrendCheck::evaluate(a, b)),
        (ControllerKind::Epfc, ControllerKind::Pfc) => Some(TrendCheck::evaluate(b, a)),
        _ => None,
    };
    Ok(ComparisonReport {
        schema_version: METRICS_SCHEMA_VERSION,
        scenario: a.scenario.clone(),
        fingerprint: a.fingerprint.clone(),
        a: a.clone(),
        b: b.clone(),
        rows,
        trends,
    })
}

impl ComparisonReport {
    /// Fixed-width text table. Missing values print as `-`.
    pub fn to_table(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
        let mut out = String::new();
        let _ = writeln!(out, "scenario {} ({})", self.scenario, self.fingerprint);
        let _ = writeln!(
            out,
            "{:<24} {:>12} {:>12} {:>12}",
            "metric",
            self.a.controller.name(),
            self.b.controller.name(),
            "delta"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<24} {:>12} {:>12} {:>12}",
                r.metric,
                cell(r.a),
                cell(r.b),
                cell(r.delta)
            );
        }
        out
    }
}
