//! Offline design: constraint decomposition, tightened sets, the runtime
//! constraint recipe and the recursive-feasibility certificate.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linsys::StateSpace;
use crate::nrf::{assemble_closed_loop, extract_area_model, AreaModel, ClosedLoop, NrfError, NrfLayer};
use crate::serial;
use crate::sets::{member_of_minkowski_sum, BoxSet, HPolytope, Set, SetError, SetSettings, Zonotope};

pub const ARTIFACT_VERSION: u32 = 1;

const REMEDY: &str = "retune the command budgets U_s1i/U_s2i, or revisit the first-layer controller so the tightened sets stay non-empty";

/// Area indices are stored 0-based and displayed 1-based.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error("area {}: command budget leaves no room for the first layer ({detail}); {REMEDY}", .area + 1)]
    EmptyCommandSet { area: usize, detail: String },
    #[error("area {}: tightened constraint set is empty at t = {t}; {REMEDY}", .area + 1)]
    EmptyTightening { area: usize, t: usize },
    #[error("certificate failed for areas {:?}; {REMEDY}", .areas.iter().map(|a| a + 1).collect::<Vec<_>>())]
    Certificate { areas: Vec<usize> },
    #[error("invalid constraint specification: {0}")]
    Spec(String),
    #[error(transparent)]
    Nrf(#[from] NrfError),
    #[error(transparent)]
    Set(#[from] SetError),
}

/// Constraint and disturbance data, all boxes except optional coupled rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    /// `X_i` per area.
    pub x: Vec<BoxSet>,
    /// `U_i` per area.
    pub u: Vec<BoxSet>,
    /// Additional rows per area over `[x_i; u_fi]`.
    #[serde(default)]
    pub coupled: Vec<Option<HPolytope>>,
    /// Initial-condition noise over `[x; w]`.
    pub v: BoxSet,
    pub d: BoxSet,
    pub beta_f: BoxSet,
    pub beta_s1: BoxSet,
    pub beta_s2: BoxSet,
    pub u_s1: Vec<BoxSet>,
    pub u_s2: Vec<BoxSet>,
}

impl ConstraintSpec {
    pub fn validate(&self, layer: &NrfLayer, n_d: usize) -> Result<(), DesignError> {
        let p = &layer.partition;
        let n = p.n_areas();
        let err = |m: String| Err(DesignError::Spec(m));
        for (name, len) in [("x", self.x.len()), ("u", self.u.len()), ("u_s1", self.u_s1.len()), ("u_s2", self.u_s2.len())] {
            if len != n {
                return err(format!("{name} has {len} areas, expected {n}"));
            }
        }
        if !self.coupled.is_empty() && self.coupled.len() != n {
            return err(format!("coupled rows given for {} areas, expected {n}", self.coupled.len()));
        }
        for i in 0..n {
            let (nxi, nui) = (p.x_sizes[i], p.u_sizes[i]);
            if self.x[i].dim() != nxi || self.u_s1[i].dim() != nxi {
                return err(format!("area {i}: state boxes must have dimension {nxi}"));
            }
            if self.u[i].dim() != nui || self.u_s2[i].dim() != nui {
                return err(format!("area {i}: command boxes must have dimension {nui}"));
            }
            if let Some(Some(c)) = self.coupled.get(i) {
                if c.dim() != nxi + nui {
                    return err(format!("area {i}: coupled rows must act on {} coordinates", nxi + nui));
                }
            }
        }
        if self.v.dim() != p.n_x + layer.n_w() {
            return err(format!("V has dimension {}, expected {}", self.v.dim(), p.n_x + layer.n_w()));
        }
        if self.d.dim() != n_d || self.beta_f.dim() != p.n_u || self.beta_s2.dim() != p.n_u || self.beta_s1.dim() != p.n_x {
            return err("disturbance box dimensions disagree with the plant".into());
        }
        Ok(())
    }

    /// `D_s` box in the `[ζ+β_s1, β_s2, β_f, d]` layout.
    pub fn d_s(&self, n_x: usize) -> BoxSet {
        let zeta = self.v.slice(&(0..n_x).collect::<Vec<_>>());
        zeta.sum(&self.beta_s1).expect("dimensions validated").product(&self.beta_s2).product(&self.beta_f).product(&self.d)
    }

    pub fn coupled_rows(&self, i: usize) -> Option<&HPolytope> {
        self.coupled.get(i).and_then(|c| c.as_ref())
    }
}

/// Quadratic stage cost on `(x_i, u_fi)`, `u_s1i` and `u_s2i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageCost {
    #[serde(with = "serial::mat")]
    pub q_out: DMatrix<f64>,
    #[serde(with = "serial::mat")]
    pub r1: DMatrix<f64>,
    #[serde(with = "serial::mat")]
    pub r2: DMatrix<f64>,
}

impl StageCost {
    pub fn identity(n_xi: usize, n_ui: usize) -> Self {
        StageCost {
            q_out: DMatrix::zeros(n_xi + n_ui, n_xi + n_ui),
            r1: DMatrix::identity(n_xi, n_xi),
            r2: DMatrix::identity(n_ui, n_ui),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignOptions {
    pub rho_max: usize,
    /// Forces `(T_i, T̄_i)` for every area instead of the certified horizon.
    pub horizon_override: Option<(usize, usize)>,
    pub tail: usize,
    /// Per-area stage costs; defaults to identity command weights.
    pub costs: Option<Vec<StageCost>>,
    pub sets: SetSettings,
    pub parallel: bool,
}

impl Default for DesignOptions {
    fn default() -> Self {
        DesignOptions { rho_max: 5, horizon_override: None, tail: 0, costs: None, sets: SetSettings::default(), parallel: true }
    }
}

/// Controller-state bounds of one area.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NrfStateSets {
    /// `U_fi`.
    pub u_f: BoxSet,
    /// `D_wi` over `[u_fi + β_fi; x_i + ζ_i + u_s1i + β_s1i]`.
    pub d_w: BoxSet,
    /// `W_i`: one interval per controller state, in `w_i` order.
    pub w: BoxSet,
}

/// Origin of a constraint row over `(x_i, u_fi)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowKind {
    State,
    Command(usize),
    Coupled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaMap {
    pub area: usize,
    #[serde(with = "serial::mat")]
    pub map: DMatrix<f64>,
}

/// Sets and constraint rows for one prediction step `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSets {
    pub t: usize,
    /// Rows `G` over `(x_i, u_fi)`.
    #[serde(with = "serial::mat")]
    pub g: DMatrix<f64>,
    /// Tightened right sides, so that `P̃_it = {v : G v ≤ g}`.
    #[serde(with = "serial::vector")]
    pub rhs: DVector<f64>,
    pub kinds: Vec<RowKind>,
    /// `Z_iᵀ I_Q[t] Z_cj` for every neighbor `j`.
    pub theta_maps: Vec<ThetaMap>,
    pub psi: Zonotope,
    pub noise: Zonotope,
    pub delta: Zonotope,
    pub theta: Zonotope,
}

impl StepSets {
    pub fn polytope(&self) -> HPolytope {
        HPolytope { h: self.g.clone(), rhs: self.rhs.clone() }
    }

    fn pick(&self, keep: impl Fn(RowKind) -> bool) -> HPolytope {
        let idx: Vec<usize> = (0..self.kinds.len()).filter(|&r| keep(self.kinds[r])).collect();
        HPolytope { h: self.g.select_rows(idx.iter()), rhs: DVector::from_iterator(idx.len(), idx.iter().map(|&r| self.rhs[r])) }
    }

    /// `(H_1it, h_1it)` restricted to the state block.
    pub fn state_rows(&self, n_xi: usize) -> HPolytope {
        let p = self.pick(|k| k == RowKind::State);
        HPolytope { h: p.h.columns(0, n_xi).into_owned(), rhs: p.rhs }
    }

    /// `(H_2ℓt, h_2ℓt)` for local command row `l`, as a scalar constraint.
    pub fn command_rows(&self, n_xi: usize, l: usize) -> HPolytope {
        let p = self.pick(|k| k == RowKind::Command(l));
        HPolytope { h: p.h.columns(n_xi + l, 1).into_owned(), rhs: p.rhs }
    }

    /// `θ̃` from the neighborhood reports `(x̃_cj, w̃_cj)` stacked per area.
    pub fn theta_value(&self, reports: &dyn Fn(usize) -> DVector<f64>) -> DVector<f64> {
        let mut th = DVector::zeros(self.g.ncols());
        for tm in &self.theta_maps {
            th += &tm.map * reports(tm.area);
        }
        th
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateStep {
    pub t: usize,
    pub vertices: usize,
    pub passed: bool,
    /// First vertex of `Θ̃_it` outside the reachable target, if any.
    #[serde(with = "serial::vector")]
    pub witness: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AreaArtifacts {
    pub area: usize,
    pub model: AreaModel,
    pub nrf_sets: NrfStateSets,
    /// `X̃_ci`.
    pub ic_x: BoxSet,
    /// `W̃_ci`.
    pub ic_w: BoxSet,
    pub u_s1: BoxSet,
    pub u_s2: BoxSet,
    /// Untightened rows over `(x_i, u_fi)`.
    pub base: HPolytope,
    pub steps: Vec<StepSets>,
    pub rho: usize,
    pub horizon: usize,
    pub tail: usize,
    pub cost: StageCost,
    pub certificate: Vec<CertificateStep>,
    pub seconds: f64,
}

impl AreaArtifacts {
    pub fn n_xi(&self) -> usize {
        self.model.c_x.nrows()
    }

    pub fn n_ui(&self) -> usize {
        self.model.c_u.nrows()
    }

    pub fn step(&self, t: usize) -> &StepSets {
        &self.steps[t - 1]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignArtifacts {
    pub version: u32,
    pub areas: Vec<AreaArtifacts>,
    pub certified: bool,
    pub seconds: f64,
}

impl DesignArtifacts {
    /// `Ok` when every area carries `ρ_i ≥ 1`.
    pub fn certified(&self) -> Result<(), DesignError> {
        let areas: Vec<usize> = self.areas.iter().filter(|a| a.rho == 0).map(|a| a.area).collect();
        if areas.is_empty() {
            Ok(())
        } else {
            Err(DesignError::Certificate { areas })
        }
    }

    /// Human-readable design report.
    pub fn report(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("artifact version {}\n", self.version));
        s.push_str(&format!("certified: {}\n", self.certified));
        s.push_str(&format!("total seconds: {:.3}\n", self.seconds));
        for a in &self.areas {
            s.push_str(&format!(
                "area {}: rho = {}, T = {}, T_bar = {}, seconds = {:.3}, model states = {}\n",
                a.area + 1,
                a.rho,
                a.horizon,
                a.tail,
                a.seconds,
                a.model.n_s()
            ));
            for c in &a.certificate {
                s.push_str(&format!(
                    "  t = {}: {} vertices, {}\n",
                    c.t,
                    c.vertices,
                    if c.passed { "pass".to_string() } else { format!("fail at {:?}", c.witness.as_slice()) }
                ));
            }
            for st in &a.steps {
                let width: Vec<String> = st.rhs.iter().map(|v| format!("{v:.6}")).collect();
                s.push_str(&format!("  P t = {} rhs [{}]\n", st.t, width.join(", ")));
            }
        }
        s
    }
}

/// `U_fi = U_i ⊖ (U_s2i ⊕ D_βs2,i)`.
pub fn command_budget_tighten(spec: &ConstraintSpec, layer: &NrfLayer, i: usize) -> Result<BoxSet, DesignError> {
    let urange: Vec<usize> = layer.partition.u_range(i).collect();
    let sub = spec.u_s2[i].sum(&spec.beta_s2.slice(&urange))?;
    spec.u[i].erode(&sub)?.ok_or_else(|| DesignError::EmptyCommandSet {
        area: i,
        detail: format!("U = [{:?}, {:?}], U_s2 + beta_s2 half-widths {:?}", spec.u[i].lo().as_slice(), spec.u[i].hi().as_slice(), sub.half.as_slice()),
    })
}

/// `D_wi` for area `i` given `U_fi`.
pub fn fed_signal_set(spec: &ConstraintSpec, layer: &NrfLayer, i: usize, u_f: &BoxSet) -> Result<BoxSet, DesignError> {
    let p = &layer.partition;
    let ur: Vec<usize> = p.u_range(i).collect();
    let xr: Vec<usize> = p.x_range(i).collect();
    let uf = u_f.sum(&spec.beta_f.slice(&ur))?;
    let x = spec.x[i].sum(&spec.v.slice(&xr))?.sum(&spec.u_s1[i])?.sum(&spec.beta_s1.slice(&xr))?;
    Ok(uf.product(&x))
}

/// Interval image of a box under one gain row restricted to `cols`.
fn row_image(gain: &[f64], cols: &[usize], set: &BoxSet) -> (f64, f64) {
    let mut c = 0.0;
    let mut h = 0.0;
    for (k, &col) in cols.iter().enumerate() {
        c += gain[col] * set.center[k];
        h += gain[col].abs() * set.half[k];
    }
    (c, h)
}

/// Controller-state sets of every area, following the backward recursion over
/// companion rows with only neighborhood terms.
pub fn nrf_state_sets(layer: &NrfLayer, spec: &ConstraintSpec) -> Result<Vec<NrfStateSets>, DesignError> {
    let p = &layer.partition;
    let n = p.n_areas();
    let u_f: Vec<BoxSet> = (0..n).map(|i| command_budget_tighten(spec, layer, i)).collect::<Result<_, _>>()?;
    let d_w: Vec<BoxSet> = (0..n).map(|i| fed_signal_set(spec, layer, i, &u_f[i])).collect::<Result<_, _>>()?;
    let nu = p.n_u;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut centers = Vec::new();
        let mut halves = Vec::new();
        for (k, l) in p.u_range(i).enumerate() {
            let blk = &layer.blocks[l];
            let nr = blk.order();
            let w1 = (u_f[i].center[k], u_f[i].half[k]);
            let mut rows = vec![(0.0, 0.0); nr];
            rows[0] = w1;
            let feed = |j: usize| -> (f64, f64) {
                let g: Vec<f64> = blk.gains.row(j).iter().copied().collect();
                let mut c = 0.0;
                let mut h = 0.0;
                for &q in &p.neighbors[i] {
                    let cols: Vec<usize> = p.u_range(q).chain(p.x_range(q).map(|x| x + nu)).collect();
                    let (ci, hi) = row_image(&g, &cols, &d_w[q]);
                    c += ci;
                    h += hi;
                }
                (c, h)
            };
            for j in (1..nr).rev() {
                let a = -blk.coeffs[j];
                let (fc, fh) = feed(j);
                let (mut c, mut h) = (a * w1.0 + fc, a.abs() * w1.1 + fh);
                if j + 1 < nr {
                    c += rows[j + 1].0;
                    h += rows[j + 1].1;
                }
                rows[j] = (c, h);
            }
            for (c, h) in rows {
                centers.push(c);
                halves.push(h);
            }
        }
        let w = BoxSet::new(DVector::from_vec(centers), DVector::from_vec(halves))?;
        out.push(NrfStateSets { u_f: u_f[i].clone(), d_w: d_w[i].clone(), w });
    }
    Ok(out)
}

/// Untightened rows over `(x_i, u_fi)`: state box, command rows `W_ℓ1`, coupled rows.
fn base_rows(spec: &ConstraintSpec, i: usize, u_f: &BoxSet) -> (HPolytope, Vec<RowKind>) {
    let nxi = spec.x[i].dim();
    let nui = u_f.dim();
    let n = nxi + nui;
    let mut rows: Vec<(DVector<f64>, f64, RowKind)> = Vec::new();
    for k in 0..nxi {
        let mut e = DVector::zeros(n);
        e[k] = 1.0;
        rows.push((e.clone(), spec.x[i].center[k] + spec.x[i].half[k], RowKind::State));
        rows.push((-e, -(spec.x[i].center[k] - spec.x[i].half[k]), RowKind::State));
    }
    for l in 0..nui {
        let mut e = DVector::zeros(n);
        e[nxi + l] = 1.0;
        rows.push((e.clone(), u_f.center[l] + u_f.half[l], RowKind::Command(l)));
        rows.push((-e, -(u_f.center[l] - u_f.half[l]), RowKind::Command(l)));
    }
    if let Some(c) = spec.coupled_rows(i) {
        for r in 0..c.n_rows() {
            rows.push((c.h.row(r).transpose(), c.rhs[r], RowKind::Coupled));
        }
    }
    let h = DMatrix::from_fn(rows.len(), n, |r, c| rows[r].0[c]);
    let rhs = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    (HPolytope { h, rhs }, rows.into_iter().map(|r| r.2).collect())
}

fn image_of_box(m: &DMatrix<f64>, b: &BoxSet) -> Zonotope {
    Zonotope { center: m * &b.center, generators: m * DMatrix::from_diagonal(&b.half) }
}

fn sum_all(n: usize, parts: impl IntoIterator<Item = Zonotope>) -> Zonotope {
    parts.into_iter().fold(Zonotope::zero(n), |acc, z| acc.minkowski_sum(&z).expect("same dimension")).simplified()
}

/// Shared inputs for the per-area stages.
struct Context<'a> {
    cl: &'a ClosedLoop,
    layer: &'a NrfLayer,
    spec: &'a ConstraintSpec,
    nrf: &'a [NrfStateSets],
    ic: Vec<BoxSet>,
}

impl Context<'_> {
    fn rows_i(&self, i: usize) -> Vec<usize> {
        self.cl.area_output_rows(&self.layer.partition, i)
    }

    /// `Z_iᵀ C_cl A^{t}`.
    fn out_map(&self, i: usize, t: usize) -> DMatrix<f64> {
        self.cl.ic_response_map(t).select_rows(self.rows_i(i).iter())
    }
}

/// `Ψ_it` for `t = 1..=horizon`.
pub fn disturbance_propagation(cl: &ClosedLoop, layer: &NrfLayer, spec: &ConstraintSpec, i: usize, horizon: usize) -> Vec<Zonotope> {
    let rows = cl.area_output_rows(&layer.partition, i);
    let d_s = spec.d_s(cl.n_x());
    let mut acc = Zonotope::zero(rows.len());
    let mut out = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let m = cl.ic_response_map(t - 1).select_rows(rows.iter()) * &cl.b_ds;
        acc = acc.minkowski_sum(&image_of_box(&m, &d_s)).expect("same dimension").simplified();
        out.push(acc.clone());
    }
    out
}

/// `H_it`: images of the full noise box under `Z_iᵀ I_Q[t]`.
pub fn noise_sets(cl: &ClosedLoop, layer: &NrfLayer, spec: &ConstraintSpec, i: usize, horizon: usize) -> Vec<Zonotope> {
    let rows = cl.area_output_rows(&layer.partition, i);
    (1..=horizon)
        .map(|t| image_of_box(&cl.ic_response_map(t).select_rows(rows.iter()), &spec.v).simplified())
        .collect()
}

/// Perturbed initial-condition boxes `X̃_cj × W̃_cj` for every area.
pub fn perturbed_ic_sets(layer: &NrfLayer, spec: &ConstraintSpec, nrf: &[NrfStateSets]) -> Result<Vec<(BoxSet, BoxSet)>, DesignError> {
    let p = &layer.partition;
    (0..p.n_areas())
        .map(|j| {
            let xr: Vec<usize> = p.x_range(j).collect();
            let wr: Vec<usize> = layer.w_range(j).map(|c| c + p.n_x).collect();
            Ok((spec.x[j].sum(&spec.v.slice(&xr))?, nrf[j].w.sum(&spec.v.slice(&wr))?))
        })
        .collect()
}

/// `Δ̃_it` for `t = 1..=horizon`.
pub fn cross_coupling_sets(cl: &ClosedLoop, layer: &NrfLayer, spec: &ConstraintSpec, nrf: &[NrfStateSets], i: usize, horizon: usize) -> Result<Vec<Zonotope>, DesignError> {
    let ctx = context(cl, layer, spec, nrf)?;
    Ok((1..=horizon).map(|t| ctx.delta(i, t)).collect())
}

fn context<'a>(cl: &'a ClosedLoop, layer: &'a NrfLayer, spec: &'a ConstraintSpec, nrf: &'a [NrfStateSets]) -> Result<Context<'a>, DesignError> {
    let ic = perturbed_ic_sets(layer, spec, nrf)?.into_iter().map(|(x, w)| x.product(&w)).collect();
    Ok(Context { cl, layer, spec, nrf, ic })
}

impl Context<'_> {
    fn delta(&self, i: usize, t: usize) -> Zonotope {
        let p = &self.layer.partition;
        let n_out = self.rows_i(i).len();
        let mut parts = Vec::new();
        for s in 1..=t {
            let m = self.out_map(i, s - 1);
            for j in (0..p.n_areas()).filter(|&j| j != i) {
                let b1 = (&m * &self.cl.b_us1).select_columns(p.x_range(j).collect::<Vec<_>>().iter());
                let b2 = (&m * &self.cl.b_us2).select_columns(p.u_range(j).collect::<Vec<_>>().iter());
                parts.push(image_of_box(&b1, &self.spec.u_s1[j]));
                parts.push(image_of_box(&b2, &self.spec.u_s2[j]));
            }
        }
        let m = self.out_map(i, t);
        for l in (0..p.n_areas()).filter(|l| !p.neighbors[i].contains(l)) {
            let cols = self.cl.area_state_cols(self.layer, l);
            parts.push(image_of_box(&m.select_columns(cols.iter()), &self.ic[l]));
        }
        sum_all(n_out, parts)
    }

    fn theta(&self, i: usize, t: usize) -> (Vec<ThetaMap>, Zonotope) {
        let p = &self.layer.partition;
        let m = self.out_map(i, t);
        let mut maps = Vec::new();
        let mut parts = Vec::new();
        for &j in &p.neighbors[i] {
            let cols = self.cl.area_state_cols(self.layer, j);
            let mj = m.select_columns(cols.iter());
            parts.push(image_of_box(&mj, &self.ic[j]));
            maps.push(ThetaMap { area: j, map: mj });
        }
        (maps, sum_all(m.nrows(), parts))
    }

    fn area_steps(&self, i: usize, horizon: usize, settings: &SetSettings) -> Result<(HPolytope, Vec<StepSets>), DesignError> {
        let (base, kinds) = base_rows(self.spec, i, &self.nrf[i].u_f);
        let psi = disturbance_propagation(self.cl, self.layer, self.spec, i, horizon);
        let noise = noise_sets(self.cl, self.layer, self.spec, i, horizon);
        let mut steps = Vec::with_capacity(horizon);
        for t in 1..=horizon {
            let delta = self.delta(i, t).capped(settings.generator_cap);
            let psi_t = psi[t - 1].clone().capped(settings.generator_cap);
            let noise_t = noise[t - 1].clone();
            let (theta_maps, theta) = self.theta(i, t);
            let rhs = DVector::from_fn(base.n_rows(), |r, _| {
                let g = base.h.row(r).transpose();
                base.rhs[r] - noise_t.support(&-&g).unwrap() - psi_t.support(&g).unwrap() - delta.support(&g).unwrap()
            });
            steps.push(StepSets { t, g: base.h.clone(), rhs, kinds: kinds.clone(), theta_maps, psi: psi_t, noise: noise_t, delta, theta });
        }
        Ok((base, steps))
    }
}

/// Runtime constraint `Ξ_it = {φ : G [C_x; C_u] φ ≤ g − G θ̃}`.
pub fn xi_constraint(area: &AreaArtifacts, t: usize, theta_x: &DVector<f64>, theta_u: &DVector<f64>) -> HPolytope {
    let st = area.step(t);
    let theta = crate::nrf::stack(&[theta_x, theta_u]);
    HPolytope { h: &st.g * area.model.c(), rhs: &st.rhs - &st.g * theta }
}

/// Checks the reachability inclusion for `t = 1..=rho_max` and returns the
/// largest passing prefix length together with the per-step records.
pub fn feasibility_certificate(
    model: &AreaModel,
    steps: &[StepSets],
    u_s1: &BoxSet,
    u_s2: &BoxSet,
    rho_max: usize,
    settings: &SetSettings,
) -> Result<(usize, Vec<CertificateStep>), DesignError> {
    let markov = model.markov(rho_max);
    let mut records = Vec::new();
    let mut rho = 0;
    for t in 1..=rho_max.min(steps.len()) {
        let st = &steps[t - 1];
        let target = st.polytope();
        let mut terms: Vec<(DMatrix<f64>, Set)> = Vec::new();
        for (m1, m2) in markov.iter().take(t) {
            terms.push((-m1, Set::Box(u_s1.clone())));
            terms.push((-m2, Set::Box(u_s2.clone())));
        }
        let n = target.dim();
        terms.push((DMatrix::identity(n, n), Set::Polytope(target.clone())));
        let verts = st.theta.vertex_candidates();
        let mut witness = None;
        if target.is_empty(settings) {
            witness = Some(st.theta.center.clone());
        } else {
            for v in &verts {
                if !member_of_minkowski_sum(v, &terms, settings)? {
                    witness = Some(v.clone());
                    break;
                }
            }
        }
        let passed = witness.is_none();
        records.push(CertificateStep { t, vertices: verts.len(), passed, witness: witness.unwrap_or_else(|| DVector::zeros(0)) });
        if !passed {
            break;
        }
        rho = t;
    }
    Ok((rho, records))
}

/// Runs the full offline pipeline.
pub fn run_design(spec: &ConstraintSpec, layer: &NrfLayer, plant: &StateSpace, options: &DesignOptions) -> Result<DesignArtifacts, DesignError> {
    let start = Instant::now();
    spec.validate(layer, plant.n_d())?;
    let cl = assemble_closed_loop(plant, layer)?;
    let p = &layer.partition;
    let n = p.n_areas();
    let nrf = nrf_state_sets(layer, spec)?;
    let ctx = context(&cl, layer, spec, &nrf)?;
    let rho_max = options.rho_max.max(options.horizon_override.map_or(0, |h| h.0)).max(1);
    cl.power(rho_max + 1);

    let work = |i: usize| -> Result<AreaArtifacts, DesignError> {
        let t0 = Instant::now();
        let model = extract_area_model(&cl, p, i);
        let (base, mut steps) = ctx.area_steps(i, rho_max, &options.sets)?;
        if steps[0].polytope().is_empty(&options.sets) {
            return Err(DesignError::EmptyTightening { area: i, t: 1 });
        }
        let (rho, certificate) = feasibility_certificate(&model, &steps, &spec.u_s1[i], &spec.u_s2[i], options.rho_max, &options.sets)?;
        let (horizon, tail) = options.horizon_override.unwrap_or((rho.max(1), options.tail));
        steps.truncate(horizon.max(1));
        let cost = options
            .costs
            .as_ref()
            .map(|c| c[i].clone())
            .unwrap_or_else(|| StageCost::identity(p.x_sizes[i], p.u_sizes[i]));
        let (ic_x, ic_w) = {
            let xr: Vec<usize> = p.x_range(i).collect();
            let wr: Vec<usize> = layer.w_range(i).map(|c| c + p.n_x).collect();
            (spec.x[i].sum(&spec.v.slice(&xr))?, nrf[i].w.sum(&spec.v.slice(&wr))?)
        };
        Ok(AreaArtifacts {
            area: i,
            model,
            nrf_sets: nrf[i].clone(),
            ic_x,
            ic_w,
            u_s1: spec.u_s1[i].clone(),
            u_s2: spec.u_s2[i].clone(),
            base,
            steps,
            rho,
            horizon,
            tail,
            cost,
            certificate,
            seconds: t0.elapsed().as_secs_f64(),
        })
    };
    let areas: Vec<AreaArtifacts> = if options.parallel {
        (0..n).into_par_iter().map(work).collect::<Result<_, _>>()?
    } else {
        (0..n).map(work).collect::<Result<_, _>>()?
    };
    let certified = areas.iter().all(|a| a.rho >= 1);
    Ok(DesignArtifacts { version: ARTIFACT_VERSION, areas, certified, seconds: start.elapsed().as_secs_f64() })
}
