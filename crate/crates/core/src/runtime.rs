//! Online execution of the per-area MPC subcontrollers over a synchronous
//! message bus, and closed-loop simulation.

use std::io::{BufRead, Write};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{AreaArtifacts, ConstraintSpec, DesignArtifacts};
use crate::linsys::StateSpace;
use crate::nrf::{assemble_closed_loop, stack, theta_signals, IcReport, NrfError, NrfLayer};
use crate::optim::{solve_qp_warm, QpProblem, QpStatus, SolverSettings};
use crate::sets::BoxSet;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("initial condition outside the admissible sets in area {}: {coordinate} = {value}", .area + 1)]
    InitialCondition { area: usize, coordinate: String, value: f64 },
    #[error("round {round}: no message from area {}", .area + 1)]
    MissingSender { round: usize, area: usize },
    #[error("round {round}: more than one message from area {}", .area + 1)]
    DuplicateSender { round: usize, area: usize },
    #[error("design is not certified for areas {:?}; enable allow_uncertified to run with the chosen horizons", .areas.iter().map(|a| a + 1).collect::<Vec<_>>())]
    Uncertified { areas: Vec<usize> },
    #[error("feasibility breach in area {} at step {k}: solver returned {status:?}", .area + 1)]
    FeasibilityBreach { area: usize, k: usize, status: QpStatus, problem: Box<QpProblem> },
    #[error(transparent)]
    Nrf(#[from] NrfError),
    #[error("trace format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Payload of a bus message.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    /// Measured initial condition `(x̃_ci, w̃_ci)`.
    Ic { x: DVector<f64>, w: DVector<f64> },
    /// Broadcast `u_s1i`.
    Command { u_s1: DVector<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct AreaMessage {
    pub sender: usize,
    pub round: usize,
    pub payload: Payload,
}

/// Noise channels, one random stream per channel and area.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Signal {
    Zeta = 0,
    BetaF = 1,
    BetaS1 = 2,
    BetaS2 = 3,
    NuX = 4,
    NuW = 5,
    D = 6,
}

/// Per-channel, per-area ChaCha streams split from one master seed.
#[derive(Clone, Debug)]
pub struct NoiseStreams {
    pub seed: u64,
    n_areas: usize,
    rngs: Vec<ChaCha8Rng>,
}

impl NoiseStreams {
    pub fn new(seed: u64, n_areas: usize) -> Self {
        let rngs = (0..7 * n_areas)
            .map(|s| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(s as u64);
                r
            })
            .collect();
        NoiseStreams { seed, n_areas, rngs }
    }

    /// Uniform sample on `set` from the stream of `(signal, area)`.
    pub fn sample(&mut self, signal: Signal, area: usize, set: &BoxSet) -> DVector<f64> {
        let rng = &mut self.rngs[signal as usize * self.n_areas + area];
        DVector::from_fn(set.dim(), |k, _| {
            let u: f64 = rng.gen();
            set.center[k] + set.half[k] * (2.0 * u - 1.0)
        })
    }
}

/// Source-side corruption boxes of the bus, per sender.
#[derive(Clone, Debug)]
pub struct BusNoise {
    pub ic_x: Vec<BoxSet>,
    pub ic_w: Vec<BoxSet>,
    pub command: Vec<BoxSet>,
}

impl BusNoise {
    pub fn from_spec(spec: &ConstraintSpec, layer: &NrfLayer) -> Self {
        let p = &layer.partition;
        let n = p.n_areas();
        let xr = |i: usize| p.x_range(i).collect::<Vec<_>>();
        BusNoise {
            ic_x: (0..n).map(|i| spec.v.slice(&xr(i))).collect(),
            ic_w: (0..n).map(|i| spec.v.slice(&layer.w_range(i).map(|c| c + p.n_x).collect::<Vec<_>>())).collect(),
            command: (0..n).map(|i| spec.beta_s1.slice(&xr(i))).collect(),
        }
    }

    pub fn silent(layer: &NrfLayer) -> Self {
        let p = &layer.partition;
        let n = p.n_areas();
        BusNoise {
            ic_x: (0..n).map(|i| BoxSet::symmetric(&vec![0.0; p.x_sizes[i]])).collect(),
            ic_w: (0..n).map(|i| BoxSet::symmetric(&vec![0.0; layer.n_wi(i)])).collect(),
            command: (0..n).map(|i| BoxSet::symmetric(&vec![0.0; p.x_sizes[i]])).collect(),
        }
    }
}

/// Messages delivered by one bus round.
#[derive(Clone, Debug)]
pub struct Delivery {
    /// Corrupted message of every sender, indexed by sender.
    pub sent: Vec<AreaMessage>,
    /// Senders heard by each receiver.
    pub inboxes: Vec<Vec<usize>>,
    /// Corruption added to each sender's payload.
    pub noise: Vec<DVector<f64>>,
}

impl Delivery {
    pub fn inbox(&self, j: usize) -> Vec<&AreaMessage> {
        self.inboxes[j].iter().map(|&s| &self.sent[s]).collect()
    }
}

/// One synchronous exchange. Every area must send exactly one message; each
/// payload is corrupted once at its source and delivered to every receiver
/// whose neighborhood contains the sender.
pub fn bus_round(
    layer: &NrfLayer,
    round: usize,
    messages: Vec<AreaMessage>,
    noise: &BusNoise,
    streams: &mut NoiseStreams,
) -> Result<Delivery, RuntimeError> {
    let p = &layer.partition;
    let n = p.n_areas();
    let mut slots: Vec<Option<AreaMessage>> = vec![None; n];
    for m in messages {
        if m.sender >= n {
            return Err(RuntimeError::Dimension(format!("sender {} outside {n} areas", m.sender)));
        }
        if slots[m.sender].is_some() {
            return Err(RuntimeError::DuplicateSender { round, area: m.sender });
        }
        let s = m.sender;
        slots[s] = Some(m);
    }
    let mut sent = Vec::with_capacity(n);
    let mut samples = Vec::with_capacity(n);
    for (i, slot) in slots.into_iter().enumerate() {
        let mut m = slot.ok_or(RuntimeError::MissingSender { round, area: i })?;
        m.round = round;
        match &mut m.payload {
            Payload::Ic { x, w } => {
                let nx = streams.sample(Signal::NuX, i, &noise.ic_x[i]);
                let nw = streams.sample(Signal::NuW, i, &noise.ic_w[i]);
                *x += &nx;
                *w += &nw;
                samples.push(stack(&[&nx, &nw]));
            }
            Payload::Command { u_s1 } => {
                let b = streams.sample(Signal::BetaS1, i, &noise.command[i]);
                *u_s1 += &b;
                samples.push(b);
            }
        }
        sent.push(m);
    }
    let inboxes = (0..n).map(|j| p.neighbors[j].clone()).collect();
    Ok(Delivery { sent, inboxes, noise: samples })
}

/// Dense form of the area problem with the dynamics substituted out.
/// Decision vector: `u_s1[0..T)` then `u_s2[0..T+T̄)`.
#[derive(Clone, Debug)]
pub struct CondensedQp {
    pub horizon: usize,
    pub tail: usize,
    pub n1: usize,
    pub n2: usize,
    /// Output prediction maps `L_t`, `t = 1..=T+T̄`.
    pub lift: Vec<DMatrix<f64>>,
    pub p: DMatrix<f64>,
    q_out: DMatrix<f64>,
    a_ineq: DMatrix<f64>,
    b_ineq: DVector<f64>,
    /// For each `t ≤ T`, the first row of its block in `a_ineq`.
    xi_rows: Vec<usize>,
    a_eq: DMatrix<f64>,
    b_eq: DVector<f64>,
}

impl CondensedQp {
    pub fn new(area: &AreaArtifacts, eps_reg: f64) -> Self {
        let (t_c, tail) = (area.horizon, area.tail);
        let total = t_c + tail;
        let n1 = area.model.b_s1.ncols();
        let n2 = area.model.b_s2.ncols();
        let nv = t_c * n1 + total * n2;
        let c1 = |tau: usize| tau * n1;
        let c2 = |tau: usize| t_c * n1 + tau * n2;
        let markov = area.model.markov(total);
        let n_out = area.model.c().nrows();
        let lift: Vec<DMatrix<f64>> = (1..=total)
            .map(|t| {
                let mut l = DMatrix::zeros(n_out, nv);
                for tau in 0..t {
                    let (m1, m2) = &markov[t - 1 - tau];
                    if tau < t_c {
                        l.columns_mut(c1(tau), n1).copy_from(m1);
                    }
                    l.columns_mut(c2(tau), n2).copy_from(m2);
                }
                l
            })
            .collect();
        let q_out = area.cost.q_out.clone();
        let mut p = DMatrix::zeros(nv, nv);
        for l in &lift {
            p += l.transpose() * &q_out * l;
        }
        for tau in 0..t_c {
            let mut v = p.view_mut((c1(tau), c1(tau)), (n1, n1));
            v += &area.cost.r1;
        }
        for tau in 0..total {
            let mut v = p.view_mut((c2(tau), c2(tau)), (n2, n2));
            v += &area.cost.r2;
        }
        p *= 2.0;
        for d in 0..nv {
            p[(d, d)] += eps_reg;
        }

        let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
        let mut xi_rows = Vec::with_capacity(t_c);
        for t in 1..=t_c {
            let st = area.step(t);
            xi_rows.push(rows.len());
            let gl = &st.g * &lift[t - 1];
            for r in 0..gl.nrows() {
                rows.push((gl.row(r).transpose(), st.rhs[r]));
            }
        }
        let mut eq: Vec<(usize, f64)> = Vec::new();
        let mut bound = |col: usize, set: &BoxSet, k: usize, rows: &mut Vec<(DVector<f64>, f64)>| {
            if set.half[k] == 0.0 {
                eq.push((col, set.center[k]));
            } else {
                let mut e = DVector::zeros(nv);
                e[col] = 1.0;
                rows.push((e.clone(), set.center[k] + set.half[k]));
                rows.push((-e, -(set.center[k] - set.half[k])));
            }
        };
        for tau in 0..t_c {
            for k in 0..n1 {
                bound(c1(tau) + k, &area.u_s1, k, &mut rows);
            }
            for k in 0..n2 {
                bound(c2(tau) + k, &area.u_s2, k, &mut rows);
            }
        }
        let a_ineq = DMatrix::from_fn(rows.len(), nv, |r, c| rows[r].0[c]);
        let b_ineq = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
        let a_eq = DMatrix::from_fn(eq.len(), nv, |r, c| if eq[r].0 == c { 1.0 } else { 0.0 });
        let b_eq = DVector::from_iterator(eq.len(), eq.iter().map(|e| e.1));
        CondensedQp { horizon: t_c, tail, n1, n2, lift, p, q_out, a_ineq, b_ineq, xi_rows, a_eq, b_eq }
    }

    pub fn n_var(&self) -> usize {
        self.p.nrows()
    }

    /// Problem instance for the measured offsets `θ̃_t`, `t = 1..=T`.
    pub fn instance(&self, area: &AreaArtifacts, theta: &[DVector<f64>]) -> QpProblem {
        let mut q = DVector::zeros(self.n_var());
        let mut b = self.b_ineq.clone();
        for (t, th) in theta.iter().enumerate().take(self.horizon) {
            q += 2.0 * self.lift[t].transpose() * (&self.q_out * th);
            let st = area.step(t + 1);
            let shift = &st.g * th;
            let r0 = self.xi_rows[t];
            for r in 0..shift.len() {
                b[r0 + r] -= shift[r];
            }
        }
        QpProblem { p: self.p.clone(), q, a_ineq: self.a_ineq.clone(), b_ineq: b, a_eq: self.a_eq.clone(), b_eq: self.b_eq.clone() }
    }

    /// First commands `(u_s1[k], u_s2[k])` of a solution.
    pub fn first(&self, v: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let u2 = self.horizon * self.n1;
        (v.rows(0, self.n1).into_owned(), v.rows(u2, self.n2).into_owned())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveStats {
    pub status: QpStatus,
    pub micros: f64,
    pub iterations: usize,
    pub objective: f64,
}

/// Mutable per-area controller state.
#[derive(Clone, Debug)]
pub struct SubcontrollerState {
    pub area: usize,
    /// Active set of the previous solve.
    pub warm: Vec<usize>,
    pub last: Option<SolveStats>,
}

/// Read-only controller data of one area.
#[derive(Clone, Debug)]
pub struct Subcontroller<'a> {
    pub artifacts: &'a AreaArtifacts,
    pub neighbors: Vec<usize>,
    pub qp: CondensedQp,
}

impl<'a> Subcontroller<'a> {
    pub fn new(artifacts: &'a AreaArtifacts, layer: &NrfLayer, eps_reg: f64) -> Self {
        Subcontroller {
            artifacts,
            neighbors: layer.partition.neighbors[artifacts.area].clone(),
            qp: CondensedQp::new(artifacts, eps_reg),
        }
    }

    /// `θ̃_t` for `t = 1..=T` from the neighborhood reports.
    pub fn theta(&self, reports: &dyn Fn(usize) -> DVector<f64>) -> Vec<DVector<f64>> {
        (1..=self.qp.horizon).map(|t| self.artifacts.step(t).theta_value(reports)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub u_s1: DVector<f64>,
    pub u_s2: DVector<f64>,
    pub message: AreaMessage,
    pub stats: SolveStats,
}

/// Solves the condensed problem for given offsets.
pub fn solve_area(
    ctl: &Subcontroller,
    state: &mut SubcontrollerState,
    theta: &[DVector<f64>],
    k: usize,
    settings: &SolverSettings,
    warm_start: bool,
) -> Result<(DVector<f64>, DVector<f64>, SolveStats), RuntimeError> {
    let prob = ctl.qp.instance(ctl.artifacts, theta);
    let start = Instant::now();
    let hint: &[usize] = if warm_start { &state.warm } else { &[] };
    let sol = solve_qp_warm(&prob, settings, hint);
    let micros = start.elapsed().as_secs_f64() * 1e6;
    let stats = SolveStats { status: sol.status, micros, iterations: sol.iterations, objective: sol.objective };
    state.last = Some(stats);
    if !sol.is_optimal() {
        return Err(RuntimeError::FeasibilityBreach { area: ctl.artifacts.area, k, status: sol.status, problem: Box::new(prob) });
    }
    state.warm = sol.active.clone();
    let (u1, u2) = ctl.qp.first(&sol.x);
    Ok((u1, u2, stats))
}

/// One execution of the area policy: offsets from the received reports,
/// condensed problem, first commands and the outgoing `u_s1i` broadcast.
pub fn subcontroller_step(
    ctl: &Subcontroller,
    state: &mut SubcontrollerState,
    received: &[&AreaMessage],
    k: usize,
    settings: &SolverSettings,
    warm_start: bool,
) -> Result<StepOutput, RuntimeError> {
    let area = ctl.artifacts.area;
    let mut reports: Vec<(usize, DVector<f64>)> = Vec::with_capacity(ctl.neighbors.len());
    for &j in &ctl.neighbors {
        let m = received
            .iter()
            .find(|m| m.sender == j && m.round == k && matches!(m.payload, Payload::Ic { .. }))
            .ok_or(RuntimeError::MissingSender { round: k, area: j })?;
        if let Payload::Ic { x, w } = &m.payload {
            reports.push((j, stack(&[x, w])));
        }
    }
    let lookup = |j: usize| reports.iter().find(|r| r.0 == j).map(|r| r.1.clone()).expect("neighborhood reports present");
    let theta = ctl.theta(&lookup);
    let (u_s1, u_s2, stats) = solve_area(ctl, state, &theta, k, settings, warm_start)?;
    let message = AreaMessage { sender: area, round: k, payload: Payload::Command { u_s1: u_s1.clone() } };
    Ok(StepOutput { u_s1, u_s2, message, stats })
}

/// Exogenous disturbance `d[k]`.
#[derive(Clone, Debug, PartialEq)]
pub enum Scenario {
    /// Uniform samples on `D_d`.
    Sampled,
    /// Fixed sequence, one entry per step.
    Sequence(Vec<DVector<f64>>),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuntimeOptions {
    /// Added to the Hessian diagonal of every area problem.
    pub eps_reg: f64,
    pub solver: SolverSettings,
    pub parallel: bool,
    pub warm_start: bool,
    /// Runs designs with `ρ_i = 0` using their stored horizons.
    pub allow_uncertified: bool,
}

impl Default for RuntimeOptions {
    fn default() -> Self {
        RuntimeOptions { eps_reg: 1e-12, solver: SolverSettings::default(), parallel: true, warm_start: true, allow_uncertified: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceStep {
    pub k: usize,
    pub x: DVector<f64>,
    pub w: DVector<f64>,
    pub u: DVector<f64>,
    pub u_f: DVector<f64>,
    pub u_s1: DVector<f64>,
    pub u_s2: DVector<f64>,
    pub zeta: DVector<f64>,
    pub beta_f: DVector<f64>,
    pub beta_s1: DVector<f64>,
    pub beta_s2: DVector<f64>,
    pub nu_x: DVector<f64>,
    pub nu_w: DVector<f64>,
    pub d: DVector<f64>,
    pub qp_status: Vec<QpStatus>,
    pub qp_micros: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Breach {
    pub area: usize,
    pub k: usize,
    pub status: QpStatus,
    pub problem: QpProblem,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceDims {
    pub n_x: usize,
    pub n_w: usize,
    pub n_u: usize,
    pub n_d: usize,
    pub n_areas: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationTrace {
    pub seed: u64,
    pub eps_reg: f64,
    pub dims: TraceDims,
    pub steps: Vec<TraceStep>,
    /// Set when an area problem failed; the trace stops before that step.
    pub breach: Option<Breach>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitialState {
    pub x: DVector<f64>,
    pub w: DVector<f64>,
}

/// Checks `x_c ∈ X`, the command and coupled rows at `u_f = C_w w_c`, and
/// every controller-state row against its `W` interval.
pub fn check_initial_condition(layer: &NrfLayer, design: &DesignArtifacts, ic: &InitialState, eps: f64) -> Result<(), RuntimeError> {
    let p = &layer.partition;
    if ic.x.len() != p.n_x || ic.w.len() != layer.n_w() {
        return Err(RuntimeError::Dimension("initial state length".into()));
    }
    let uf = layer.c_w() * &ic.w;
    for a in &design.areas {
        let i = a.area;
        let xi = ic.x.rows(p.x_offset(i), p.x_sizes[i]).into_owned();
        let ufi = uf.rows(p.u_offset(i), p.u_sizes[i]).into_owned();
        let v = stack(&[&xi, &ufi]);
        let lhs = &a.base.h * &v;
        for r in 0..lhs.len() {
            if lhs[r] > a.base.rhs[r] + eps {
                return Err(RuntimeError::InitialCondition { area: i, coordinate: format!("constraint row {r}"), value: lhs[r] - a.base.rhs[r] });
            }
        }
        let wi = ic.w.rows(layer.w_range(i).start, layer.n_wi(i)).into_owned();
        for r in 0..wi.len() {
            let (c, h) = (a.nrf_sets.w.center[r], a.nrf_sets.w.half[r]);
            if (wi[r] - c).abs() > h + eps {
                return Err(RuntimeError::InitialCondition { area: i, coordinate: format!("w[{r}]"), value: wi[r] });
            }
        }
    }
    Ok(())
}

struct Setup<'a> {
    ctls: Vec<Subcontroller<'a>>,
    d_set: BoxSet,
    zeta: Vec<BoxSet>,
    beta_f: Vec<BoxSet>,
    beta_s2: Vec<BoxSet>,
}

#[allow(clippy::too_many_arguments)]
fn setup<'a>(
    plant: &StateSpace,
    layer: &NrfLayer,
    design: &'a DesignArtifacts,
    spec: &ConstraintSpec,
    scenario: &Scenario,
    ic: &InitialState,
    horizon: usize,
    options: &RuntimeOptions,
) -> Result<Setup<'a>, RuntimeError> {
    let p = &layer.partition;
    if plant.n_x() != p.n_x || plant.n_u() != p.n_u || design.areas.len() != p.n_areas() {
        return Err(RuntimeError::Dimension("plant, layer and artifacts disagree".into()));
    }
    if !options.allow_uncertified {
        let areas: Vec<usize> = design.areas.iter().filter(|a| a.rho == 0).map(|a| a.area).collect();
        if !areas.is_empty() {
            return Err(RuntimeError::Uncertified { areas });
        }
    }
    if let Scenario::Sequence(s) = scenario {
        if s.len() < horizon || s.iter().any(|d| d.len() != plant.n_d()) {
            return Err(RuntimeError::Dimension(format!("scenario needs {horizon} entries of length {}", plant.n_d())));
        }
    }
    check_initial_condition(layer, design, ic, 1e-9)?;
    let n = p.n_areas();
    let xr = |i: usize| p.x_range(i).collect::<Vec<_>>();
    let ur = |i: usize| p.u_range(i).collect::<Vec<_>>();
    let vx = spec.v.slice(&(0..p.n_x).collect::<Vec<_>>());
    Ok(Setup {
        ctls: design.areas.iter().map(|a| Subcontroller::new(a, layer, options.eps_reg)).collect(),
        d_set: spec.d.clone(),
        zeta: (0..n).map(|i| vx.slice(&xr(i))).collect(),
        beta_f: (0..n).map(|i| spec.beta_f.slice(&ur(i))).collect(),
        beta_s2: (0..n).map(|i| spec.beta_s2.slice(&ur(i))).collect(),
    })
}

fn concat(parts: &[DVector<f64>]) -> DVector<f64> {
    stack(&parts.iter().collect::<Vec<_>>())
}

fn disturbance(scenario: &Scenario, k: usize, streams: &mut NoiseStreams, set: &BoxSet) -> DVector<f64> {
    match scenario {
        Scenario::Sampled => streams.sample(Signal::D, 0, set),
        Scenario::Sequence(s) => s[k].clone(),
    }
}

/// Step-by-step execution of the coupled system: one subcontroller per area,
/// the two bus exchanges per step and the area-local first-layer updates.
pub struct Simulator<'a> {
    plant: &'a StateSpace,
    layer: &'a NrfLayer,
    scenario: &'a Scenario,
    options: RuntimeOptions,
    setup: Setup<'a>,
    bus: BusNoise,
    streams: NoiseStreams,
    states: Vec<SubcontrollerState>,
    pub x: DVector<f64>,
    pub w: DVector<f64>,
    pub k: usize,
}

impl<'a> Simulator<'a> {
    /// Validates dimensions, the certificate and the initial condition.
    /// `horizon` is the number of steps the scenario must cover.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        plant: &'a StateSpace,
        layer: &'a NrfLayer,
        design: &'a DesignArtifacts,
        spec: &ConstraintSpec,
        scenario: &'a Scenario,
        ic: &InitialState,
        seed: u64,
        horizon: usize,
        options: &RuntimeOptions,
    ) -> Result<Self, RuntimeError> {
        let setup = setup(plant, layer, design, spec, scenario, ic, horizon, options)?;
        let n = layer.partition.n_areas();
        Ok(Simulator {
            plant,
            layer,
            scenario,
            options: *options,
            setup,
            bus: BusNoise::from_spec(spec, layer),
            streams: NoiseStreams::new(seed, n),
            states: (0..n).map(|i| SubcontrollerState { area: i, warm: vec![], last: None }).collect(),
            x: ic.x.clone(),
            w: ic.w.clone(),
            k: 0,
        })
    }

    /// Runs one sampling period and returns its record. The state is left
    /// untouched when an area problem fails.
    pub fn step(&mut self) -> Result<TraceStep, RuntimeError> {
        let (layer, p, k) = (self.layer, &self.layer.partition, self.k);
        let n = p.n_areas();
        if let Scenario::Sequence(s) = self.scenario {
            if k >= s.len() {
                return Err(RuntimeError::Dimension(format!("scenario ends before step {k}")));
            }
        }
        let (x, w) = (&self.x, &self.w);
        let reports = (0..n)
            .map(|i| AreaMessage {
                sender: i,
                round: k,
                payload: Payload::Ic { x: x.rows(p.x_offset(i), p.x_sizes[i]).into_owned(), w: w.rows(layer.w_range(i).start, layer.n_wi(i)).into_owned() },
            })
            .collect();
        let ic_round = bus_round(layer, k, reports, &self.bus, &mut self.streams)?;
        let (solver, warm) = (self.options.solver, self.options.warm_start);
        let run = |(ctl, st): (&Subcontroller, &mut SubcontrollerState)| {
            let inbox = ic_round.inbox(ctl.artifacts.area);
            subcontroller_step(ctl, st, &inbox, k, &solver, warm)
        };
        let outs: Vec<Result<StepOutput, RuntimeError>> = if self.options.parallel {
            self.setup.ctls.par_iter().zip(self.states.par_iter_mut()).map(run).collect()
        } else {
            self.setup.ctls.iter().zip(self.states.iter_mut()).map(run).collect()
        };
        let outputs = outs.into_iter().collect::<Result<Vec<_>, _>>()?;
        let cmd_round = bus_round(layer, k, outputs.iter().map(|o| o.message.clone()).collect(), &self.bus, &mut self.streams)?;

        let s = &self.setup;
        let streams = &mut self.streams;
        let zeta: Vec<DVector<f64>> = (0..n).map(|i| streams.sample(Signal::Zeta, i, &s.zeta[i])).collect();
        let beta_f: Vec<DVector<f64>> = (0..n).map(|i| streams.sample(Signal::BetaF, i, &s.beta_f[i])).collect();
        let beta_s2: Vec<DVector<f64>> = (0..n).map(|i| streams.sample(Signal::BetaS2, i, &s.beta_s2[i])).collect();
        let d = disturbance(self.scenario, k, streams, &s.d_set);

        let u_f = layer.c_w() * w;
        let fed_uf = &u_f + concat(&beta_f);
        let delivered_us1 = concat(
            &cmd_round
                .sent
                .iter()
                .map(|m| match &m.payload {
                    Payload::Command { u_s1 } => u_s1.clone(),
                    Payload::Ic { .. } => unreachable!("command round"),
                })
                .collect::<Vec<_>>(),
        );
        let fed_x = x + concat(&zeta) + &delivered_us1;
        let mut w_next = DVector::zeros(w.len());
        for i in 0..n {
            let r = layer.w_range(i);
            let (_, wi) = layer.area_uf_step(i, &w.rows(r.start, r.len()).into_owned(), &fed_uf, &fed_x);
            w_next.rows_mut(r.start, r.len()).copy_from(&wi);
        }
        let u_s1 = concat(&outputs.iter().map(|o| o.u_s1.clone()).collect::<Vec<_>>());
        let u_s2 = concat(&outputs.iter().map(|o| o.u_s2.clone()).collect::<Vec<_>>());
        let beta_s2 = concat(&beta_s2);
        let u = &u_f + &u_s2 + &beta_s2;
        let x_next = &self.plant.a * x + &self.plant.b_u * &u + &self.plant.b_d * &d;
        let nu = &ic_round.noise;
        let nu_x = concat(&(0..n).map(|i| nu[i].rows(0, p.x_sizes[i]).into_owned()).collect::<Vec<_>>());
        let nu_w = concat(&(0..n).map(|i| nu[i].rows(p.x_sizes[i], layer.n_wi(i)).into_owned()).collect::<Vec<_>>());
        let record = TraceStep {
            k,
            x: x.clone(),
            w: w.clone(),
            u,
            u_f,
            u_s1,
            u_s2,
            zeta: concat(&zeta),
            beta_f: concat(&beta_f),
            beta_s1: concat(&cmd_round.noise),
            beta_s2,
            nu_x,
            nu_w,
            d,
            qp_status: outputs.iter().map(|o| o.stats.status).collect(),
            qp_micros: outputs.iter().map(|o| o.stats.micros).collect(),
        };
        self.x = x_next;
        self.w = w_next;
        self.k += 1;
        Ok(record)
    }
}

/// Runs `horizon` steps of [`Simulator`]; a failed area problem ends the
/// trace and is recorded as a breach.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    plant: &StateSpace,
    layer: &NrfLayer,
    design: &DesignArtifacts,
    spec: &ConstraintSpec,
    scenario: &Scenario,
    ic: &InitialState,
    seed: u64,
    horizon: usize,
    options: &RuntimeOptions,
) -> Result<SimulationTrace, RuntimeError> {
    let mut sim = Simulator::new(plant, layer, design, spec, scenario, ic, seed, horizon, options)?;
    let mut steps = Vec::with_capacity(horizon);
    let mut breach = None;
    for _ in 0..horizon {
        match sim.step() {
            Ok(s) => steps.push(s),
            Err(RuntimeError::FeasibilityBreach { area, k, status, problem }) => {
                breach = Some(Breach { area, k, status, problem: *problem });
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(SimulationTrace { seed, eps_reg: options.eps_reg, dims: dims(plant, layer), steps, breach })
}

fn dims(plant: &StateSpace, layer: &NrfLayer) -> TraceDims {
    TraceDims { n_x: plant.n_x(), n_w: layer.n_w(), n_u: plant.n_u(), n_d: plant.n_d(), n_areas: layer.partition.n_areas() }
}

/// Reference simulation on the assembled closed loop `z = [x; w]`, drawing
/// the same noise streams and forming the offsets from global responses.
#[allow(clippy::too_many_arguments)]
pub fn simulate_monolithic(
    plant: &StateSpace,
    layer: &NrfLayer,
    design: &DesignArtifacts,
    spec: &ConstraintSpec,
    scenario: &Scenario,
    ic: &InitialState,
    seed: u64,
    horizon: usize,
    options: &RuntimeOptions,
) -> Result<SimulationTrace, RuntimeError> {
    let s = setup(plant, layer, design, spec, scenario, ic, horizon, options)?;
    let cl = assemble_closed_loop(plant, layer)?;
    let p = &layer.partition;
    let n = p.n_areas();
    let bus = BusNoise::from_spec(spec, layer);
    let mut streams = NoiseStreams::new(seed, n);
    let mut states: Vec<SubcontrollerState> = (0..n).map(|i| SubcontrollerState { area: i, warm: vec![], last: None }).collect();
    let nx = p.n_x;
    let mut z = stack(&[&ic.x, &ic.w]);
    let mut steps = Vec::with_capacity(horizon);
    let mut breach = None;
    for k in 0..horizon {
        let mut nu_x = DVector::zeros(nx);
        let mut nu_w = DVector::zeros(layer.n_w());
        for i in 0..n {
            nu_x.rows_mut(p.x_offset(i), p.x_sizes[i]).copy_from(&streams.sample(Signal::NuX, i, &bus.ic_x[i]));
            let r = layer.w_range(i);
            nu_w.rows_mut(r.start, r.len()).copy_from(&streams.sample(Signal::NuW, i, &bus.ic_w[i]));
        }
        let z_meas = &z + stack(&[&nu_x, &nu_w]);
        let reports: Vec<IcReport> = (0..n)
            .map(|j| IcReport {
                area: j,
                x: z_meas.rows(p.x_offset(j), p.x_sizes[j]).into_owned(),
                w: z_meas.rows(nx + layer.w_range(j).start, layer.n_wi(j)).into_owned(),
            })
            .collect();
        let mut u_s1 = DVector::zeros(nx);
        let mut u_s2 = DVector::zeros(p.n_u);
        let mut status = Vec::with_capacity(n);
        let mut micros = Vec::with_capacity(n);
        for (ctl, st) in s.ctls.iter().zip(states.iter_mut()) {
            let i = ctl.artifacts.area;
            let theta = (1..=ctl.qp.horizon)
                .map(|t| theta_signals(&cl, layer, i, &reports, t).map(|(a, b)| stack(&[&a, &b])))
                .collect::<Result<Vec<_>, _>>()?;
            match solve_area(ctl, st, &theta, k, &options.solver, options.warm_start) {
                Ok((a, b, stats)) => {
                    u_s1.rows_mut(p.x_offset(i), p.x_sizes[i]).copy_from(&a);
                    u_s2.rows_mut(p.u_offset(i), p.u_sizes[i]).copy_from(&b);
                    status.push(stats.status);
                    micros.push(stats.micros);
                }
                Err(RuntimeError::FeasibilityBreach { area, k, status, problem }) => {
                    breach.get_or_insert(Breach { area, k, status, problem: *problem });
                }
                Err(e) => return Err(e),
            }
        }
        if breach.is_some() {
            break;
        }
        let beta_s1 = concat(&(0..n).map(|i| streams.sample(Signal::BetaS1, i, &bus.command[i])).collect::<Vec<_>>());
        let zeta = concat(&(0..n).map(|i| streams.sample(Signal::Zeta, i, &s.zeta[i])).collect::<Vec<_>>());
        let beta_f = concat(&(0..n).map(|i| streams.sample(Signal::BetaF, i, &s.beta_f[i])).collect::<Vec<_>>());
        let beta_s2 = concat(&(0..n).map(|i| streams.sample(Signal::BetaS2, i, &s.beta_s2[i])).collect::<Vec<_>>());
        let d = disturbance(scenario, k, &mut streams, &s.d_set);
        let ds = cl.layout.assemble(&(&zeta + &beta_s1), &beta_s2, &beta_f, &d);
        let x = z.rows(0, nx).into_owned();
        let w = z.rows(nx, layer.n_w()).into_owned();
        let u_f = layer.c_w() * &w;
        let u = &u_f + &u_s2 + &beta_s2;
        let z_next = cl.step(&z, &u_s1, &u_s2, &ds);
        steps.push(TraceStep { k, x, w, u, u_f, u_s1, u_s2, zeta, beta_f, beta_s1, beta_s2, nu_x, nu_w, d, qp_status: status, qp_micros: micros });
        z = z_next;
    }
    Ok(SimulationTrace { seed, eps_reg: options.eps_reg, dims: dims(plant, layer), steps, breach })
}

const GROUPS: [&str; 13] = ["x", "w", "u", "uf", "us1", "us2", "zeta", "betaf", "betas1", "betas2", "nux", "nuw", "d"];

impl TraceStep {
    fn groups(&self) -> [&DVector<f64>; 13] {
        [
            &self.x, &self.w, &self.u, &self.u_f, &self.u_s1, &self.u_s2, &self.zeta, &self.beta_f, &self.beta_s1, &self.beta_s2, &self.nu_x, &self.nu_w, &self.d,
        ]
    }
}

fn status_name(s: QpStatus) -> &'static str {
    match s {
        QpStatus::Optimal => "optimal",
        QpStatus::Infeasible => "infeasible",
        QpStatus::Unbounded => "unbounded",
        QpStatus::MaxIter => "max-iter",
    }
}

fn parse_status(s: &str) -> Result<QpStatus, RuntimeError> {
    Ok(match s {
        "optimal" => QpStatus::Optimal,
        "infeasible" => QpStatus::Infeasible,
        "unbounded" => QpStatus::Unbounded,
        "max-iter" => QpStatus::MaxIter,
        _ => return Err(RuntimeError::Format(format!("unknown status {s}"))),
    })
}

impl SimulationTrace {
    /// Column names: `k`, then `x_1..`, `w_`, `u_`, `uf_`, `us1_`, `us2_`,
    /// `zeta_`, `betaf_`, `betas1_`, `betas2_`, `nux_`, `nuw_`, `d_`, then
    /// `qp_status_i` and `qp_micros_i` per area.
    pub fn csv_header(&self) -> Vec<String> {
        let d = self.dims;
        let sizes = [d.n_x, d.n_w, d.n_u, d.n_u, d.n_x, d.n_u, d.n_x, d.n_u, d.n_x, d.n_u, d.n_x, d.n_w, d.n_d];
        let mut h = vec!["k".to_string()];
        for (g, n) in GROUPS.iter().zip(sizes) {
            h.extend((1..=n).map(|j| format!("{g}_{j}")));
        }
        h.extend((1..=d.n_areas).map(|i| format!("qp_status_{i}")));
        h.extend((1..=d.n_areas).map(|i| format!("qp_micros_{i}")));
        h
    }

    /// Writes one row per step with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), RuntimeError> {
        writeln!(out, "{}", self.csv_header().join(","))?;
        for s in &self.steps {
            let mut row = vec![s.k.to_string()];
            for g in s.groups() {
                row.extend(g.iter().map(|v| format!("{v:.16e}")));
            }
            row.extend(s.qp_status.iter().map(|st| status_name(*st).to_string()));
            row.extend(s.qp_micros.iter().map(|m| format!("{m:.3}")));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Parses a trace written by [`write_csv`](Self::write_csv).
    pub fn read_csv<R: BufRead>(input: R, seed: u64) -> Result<SimulationTrace, RuntimeError> {
        let mut lines = input.lines();
        let header: Vec<String> = lines.next().ok_or_else(|| RuntimeError::Format("empty trace".into()))??.split(',').map(str::to_string).collect();
        let count = |g: &str| header.iter().filter(|c| c.rsplit_once('_').is_some_and(|(p, _)| p == g)).count();
        let sizes: Vec<usize> = GROUPS.iter().map(|g| count(g)).collect();
        let n_areas = count("qp_status");
        let dims = TraceDims { n_x: sizes[0], n_w: sizes[1], n_u: sizes[2], n_d: sizes[12], n_areas };
        let width = 1 + sizes.iter().sum::<usize>() + 2 * n_areas;
        if header.len() != width || header[0] != "k" {
            return Err(RuntimeError::Format("unrecognised header".into()));
        }
        let mut steps = Vec::new();
        for (ln, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != width {
                return Err(RuntimeError::Format(format!("line {}: {} cells, expected {width}", ln + 2, cells.len())));
            }
            let num = |c: &str| c.trim().parse::<f64>().map_err(|e| RuntimeError::Format(format!("line {}: {e}", ln + 2)));
            let k = cells[0].parse::<usize>().map_err(|e| RuntimeError::Format(format!("line {}: {e}", ln + 2)))?;
            let mut at = 1;
            let mut groups = Vec::with_capacity(GROUPS.len());
            for &n in &sizes {
                let v = cells[at..at + n].iter().map(|c| num(c)).collect::<Result<Vec<_>, _>>()?;
                groups.push(DVector::from_vec(v));
                at += n;
            }
            let qp_status = cells[at..at + n_areas].iter().map(|c| parse_status(c.trim())).collect::<Result<Vec<_>, _>>()?;
            let qp_micros = cells[at + n_areas..].iter().map(|c| num(c)).collect::<Result<Vec<_>, _>>()?;
            let mut g = groups.into_iter();
            let mut next = || g.next().expect("group count");
            steps.push(TraceStep {
                k,
                x: next(),
                w: next(),
                u: next(),
                u_f: next(),
                u_s1: next(),
                u_s2: next(),
                zeta: next(),
                beta_f: next(),
                beta_s1: next(),
                beta_s2: next(),
                nu_x: next(),
                nu_w: next(),
                d: next(),
                qp_status,
                qp_micros,
            });
        }
        Ok(SimulationTrace { seed, eps_reg: f64::NAN, dims, steps, breach: None })
    }
}

/// Per-area solve-time statistics in microseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveTimeSummary {
    pub area: usize,
    pub samples: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
    /// Most frequent value after rounding to whole microseconds.
    pub mode: f64,
}

pub fn summarize_times(area: usize, samples: &[f64]) -> Option<SolveTimeSummary> {
    if samples.is_empty() {
        return None;
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    let mut counts = std::collections::BTreeMap::new();
    for x in &v {
        *counts.entry(x.round() as i64).or_insert(0usize) += 1;
    }
    let mode = counts.iter().fold((0i64, 0usize), |best, (&k, &c)| if c > best.1 { (k, c) } else { best }).0 as f64;
    Some(SolveTimeSummary { area, samples: n, min: v[0], max: v[n - 1], mean: v.iter().sum::<f64>() / n as f64, median, mode })
}

/// Solve-time statistics per area pooled over several traces.
pub fn run_summary(traces: &[&SimulationTrace]) -> Vec<SolveTimeSummary> {
    let n = traces.iter().map(|t| t.dims.n_areas).max().unwrap_or(0);
    (0..n)
        .filter_map(|i| {
            let samples: Vec<f64> = traces.iter().flat_map(|t| t.steps.iter().filter_map(move |s| s.qp_micros.get(i).copied())).collect();
            summarize_times(i, &samples)
        })
        .collect()
}
