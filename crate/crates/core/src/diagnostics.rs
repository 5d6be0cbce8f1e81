//! Numerical Lyapunov monitor over simulated trajectories.

use serde::{Deserialize, Serialize};

use crate::frames::Vec3;
use crate::pfc::PfcGains;
use crate::scenario::TrajectoryLog;
use crate::{Error, Result};

/// Relative step tolerance on increases of L.
pub const LYAPUNOV_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSample {
    pub t: f64,
    pub l: f64,
    /// `L(t) - L(t - dt)`, zero for the first sample.
    pub dl: f64,
    /// `λ1 p_dt·v_dt + λ2 v_dt·a_dt` with a backward-difference `a_dt`.
    pub l_dot: f64,
    pub excluded: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub verdict: Verdict,
    pub checked_steps: usize,
    pub excluded_steps: usize,
    pub increases: usize,
    pub max_increase: f64,
    pub first_violation_t: Option<f64>,
    /// Time spans skipped because repulsion was active or the waypoint switched.
    pub excluded_intervals: Vec<[f64; 2]>,
    #[serde(skip)]
    pub samples: Vec<LyapunovSample>,
}

pub fn lyapunov_value(p_dt: &Vec3, v_dt: &Vec3, lambda1: f64, lambda2: f64) -> f64 {
    0.5 * lambda1 * p_dt.norm_squared() + 0.5 * lambda2 * v_dt.norm_squared()
}

/// Checks that L never grows along attraction-only steps.
pub fn monitor(log: &TrajectoryLog, gains: &PfcGains) -> Result<LyapunovReport> {
    let recs = &log.records;
    if recs.is_empty() {
        return Err(Error::EmptyLog);
    }
    let (l1, l2) = (gains.lambda1, gains.lambda2);
    let rel = |k: usize| (recs[k].state.p - recs[k].goal, recs[k].state.v - recs[k].target_v);

    let mut samples = Vec::with_capacity(recs.len());
    let (p0, v0) = rel(0);
    samples.push(LyapunovSample {
        t: recs[0].t,
        l: lyapunov_value(&p0, &v0, l1, l2),
        dl: 0.0,
        l_dot: 0.0,
        excluded: recs[0].gates() != 0,
    });

    let mut report = LyapunovReport {
        verdict: Verdict::Pass,
        checked_steps: 0,
        excluded_steps: 0,
        increases: 0,
        max_increase: 0.0,
        first_violation_t: None,
        excluded_intervals: Vec::new(),
        samples: Vec::new(),
    };

    for k in 1..recs.len() {
        let (p, v) = rel(k);
        let (_, v_prev) = rel(k - 1);
        let dt = recs[k].t - recs[k - 1].t;
        let a = (v - v_prev) / dt;
        let l = lyapunov_value(&p, &v, l1, l2);
        let l_prev = samples[k - 1].l;
        let dl = l - l_prev;
        let excluded = recs[k].gates() != 0 || recs[k - 1].gates() != 0 || recs[k].waypoint != recs[k - 1].waypoint;

        if excluded {
            report.excluded_steps += 1;
            match report.excluded_intervals.last_mut() {
                Some(span) if span[1] == recs[k - 1].t => span[1] = recs[k].t,
                _ => report.excluded_intervals.push([recs[k - 1].t, recs[k].t]),
            }
        } else {
            report.checked_steps += 1;
            if dl > LYAPUNOV_TOL * l_prev.max(1.0) {
                report.increases += 1;
                report.max_increase = report.max_increase.max(dl);
                report.first_violation_t.get_or_insert(recs[k].t);
            }
        }
        samples.push(LyapunovSample {
            t: recs[k].t,
            l,
            dl,
            l_dot: l1 * p.dot(&v) + l2 * v.dot(&a),
            excluded,
        });
    }

    if report.increases > 0 {
        report.verdict = Verdict::Fail;
    }
    report.samples = samples;
    Ok(report)
}
