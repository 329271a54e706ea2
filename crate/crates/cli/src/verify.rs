//! Trace checks recomputed from raw trace columns and the design sets.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use nrfmpc::design::{ConstraintSpec, DesignArtifacts};
use nrfmpc::nrf::{stack, NrfLayer};
use nrfmpc::optim::QpStatus;
use nrfmpc::runtime::SimulationTrace;
use nrfmpc::sets::BoxSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    State,
    Command,
    ControllerState,
    QpStatus,
    Quiescence,
    FeasibilityBreach,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub k: usize,
    pub check: Check,
    /// 1-based area.
    pub area: usize,
    /// 1-based coordinate inside the area.
    pub index: usize,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub steps: usize,
    pub violations: Vec<Violation>,
    /// Steps on which every first-step tightened row has slack above the margin.
    pub quiescent_steps: usize,
    pub max_quiet_us1: f64,
    pub max_quiet_us2: f64,
    /// Smallest first-step slack seen over the run.
    pub min_slack: f64,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, check: Check) -> usize {
        self.violations.iter().filter(|v| v.check == check).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerifySettings {
    pub eps: f64,
    pub margin: f64,
    pub tol: f64,
}

impl Default for VerifySettings {
    fn default() -> Self {
        VerifySettings { eps: 1e-9, margin: 0.5, tol: 1e-6 }
    }
}

fn boxed(out: &mut Vec<Violation>, k: usize, check: Check, area: usize, v: &DVector<f64>, set: &BoxSet, eps: f64) {
    for r in 0..v.len() {
        let (lo, hi) = (set.center[r] - set.half[r], set.center[r] + set.half[r]);
        if v[r] < lo - eps || v[r] > hi + eps {
            out.push(Violation { k, check: check.clone(), area: area + 1, index: r + 1, value: v[r], lo, hi });
        }
    }
}

/// Smallest slack of the first-step tightened rows of every area, with the
/// offsets formed from the measured columns `x + ν_x`, `w + ν_w`.
pub fn first_step_slack(layer: &NrfLayer, design: &DesignArtifacts, x_meas: &DVector<f64>, w_meas: &DVector<f64>) -> f64 {
    let p = &layer.partition;
    let report = |j: usize| {
        let x = x_meas.rows(p.x_offset(j), p.x_sizes[j]).into_owned();
        let w = w_meas.rows(layer.w_range(j).start, layer.n_wi(j)).into_owned();
        stack(&[&x, &w])
    };
    let mut min = f64::INFINITY;
    for a in &design.areas {
        let st = a.step(1);
        let theta = st.theta_value(&report);
        let slack = &st.rhs - &st.g * theta;
        min = min.min(slack.min());
    }
    min
}

pub fn verify_trace(trace: &SimulationTrace, layer: &NrfLayer, spec: &ConstraintSpec, design: &DesignArtifacts, settings: &VerifySettings) -> VerifyReport {
    let p = &layer.partition;
    let mut out = Vec::new();
    let mut quiet = 0;
    let (mut q1, mut q2) = (0.0f64, 0.0f64);
    let mut min_slack = f64::INFINITY;
    for s in &trace.steps {
        for i in 0..p.n_areas() {
            let xi = s.x.rows(p.x_offset(i), p.x_sizes[i]).into_owned();
            boxed(&mut out, s.k, Check::State, i, &xi, &spec.x[i], settings.eps);
            let ui = s.u.rows(p.u_offset(i), p.u_sizes[i]).into_owned();
            boxed(&mut out, s.k, Check::Command, i, &ui, &spec.u[i], settings.eps);
            let wi = s.w.rows(layer.w_range(i).start, layer.n_wi(i)).into_owned();
            let wset = &design.areas[i].nrf_sets.w;
            boxed(&mut out, s.k, Check::ControllerState, i, &wi, wset, settings.eps);
            if let Some(st) = s.qp_status.get(i) {
                if *st != QpStatus::Optimal {
                    out.push(Violation { k: s.k, check: Check::QpStatus, area: i + 1, index: 0, value: f64::NAN, lo: 0.0, hi: 0.0 });
                }
            }
        }
        let slack = first_step_slack(layer, design, &(&s.x + &s.nu_x), &(&s.w + &s.nu_w));
        min_slack = min_slack.min(slack);
        if slack > settings.margin {
            quiet += 1;
            q1 = q1.max(s.u_s1.amax());
            q2 = q2.max(s.u_s2.amax());
            for i in 0..p.n_areas() {
                let a1 = s.u_s1.rows(p.x_offset(i), p.x_sizes[i]).amax();
                let a2 = s.u_s2.rows(p.u_offset(i), p.u_sizes[i]).amax();
                let worst = a1.max(a2);
                if worst > settings.tol {
                    out.push(Violation { k: s.k, check: Check::Quiescence, area: i + 1, index: 0, value: worst, lo: -settings.tol, hi: settings.tol });
                }
            }
        }
    }
    if let Some(b) = &trace.breach {
        out.push(Violation { k: b.k, check: Check::FeasibilityBreach, area: b.area + 1, index: 0, value: f64::NAN, lo: 0.0, hi: 0.0 });
    }
    VerifyReport { seed: trace.seed, steps: trace.steps.len(), violations: out, quiescent_steps: quiet, max_quiet_us1: q1, max_quiet_us2: q2, min_slack }
}
