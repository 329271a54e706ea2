//! Vehicle platoon benchmark: car model, coordinate change, first-layer
//! coefficients and constraint sets.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use nrfmpc::design::{command_budget_tighten, ConstraintSpec, StageCost};
use nrfmpc::linsys::{AreaPartition, StateSpace};
use nrfmpc::nrf::{build_nrf_layer, NrfBlock, NrfError, NrfLayer};
use nrfmpc::runtime::{InitialState, Scenario};
use nrfmpc::sets::{linear_image, pontryagin_diff, BoxSet, HPolytope, Set, SetError};

#[derive(Debug, Error)]
pub enum PlatoonError {
    #[error("invalid platoon parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Nrf(#[from] NrfError),
    #[error(transparent)]
    Set(#[from] SetError),
    #[error(transparent)]
    Design(#[from] nrfmpc::design::DesignError),
}

/// One row of the first-layer coefficient table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NrfRow {
    /// Diagonal state coefficient of the scalar controller.
    pub a: f64,
    /// Feedforward gain on the preceding car's command.
    pub b_phi: f64,
    /// Feedback gains on `(y_i, v_i, μ_i)`.
    pub b_gamma: [f64; 3],
}

/// Discrete car matrices acting on `(p, v, μ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarMatrices {
    pub a: [[f64; 3]; 3],
    pub b: [f64; 3],
}

impl CarMatrices {
    /// The four-decimal matrices for `m = 1, τ = 0.1, σ = 1, T_s = 0.1`.
    pub fn printed() -> Self {
        CarMatrices {
            a: [[1.0, 0.1, -0.0331], [0.0, 1.0, -0.5689], [0.0, 0.0, 0.3679]],
            b: [0.0381, 0.6689, 0.6321],
        }
    }

    /// Zero-order hold of `ṗ = v`, `m v̇ = σμ + (u − μ)/τ`, `τ μ̇ = u − μ`.
    pub fn zoh(m: f64, tau: f64, sigma: f64, ts: f64) -> Self {
        let mut aug = DMatrix::zeros(4, 4);
        aug[(0, 1)] = 1.0;
        aug[(1, 2)] = (sigma - 1.0 / tau) / m;
        aug[(1, 3)] = 1.0 / (tau * m);
        aug[(2, 2)] = -1.0 / tau;
        aug[(2, 3)] = 1.0 / tau;
        let e = (aug * ts).exp();
        let mut a = [[0.0; 3]; 3];
        for (i, row) in a.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = e[(i, j)];
            }
        }
        CarMatrices { a, b: [e[(0, 3)], e[(1, 3)], e[(2, 3)]] }
    }

    pub fn a_mat(&self) -> DMatrix<f64> {
        DMatrix::from_fn(3, 3, |i, j| self.a[i][j])
    }

    pub fn b_vec(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.b)
    }
}

pub fn paper_table() -> Vec<NrfRow> {
    let rows = [
        (0.9690, 0.0, -0.0038, -0.0192),
        (0.9799, 0.0199, -0.0030, -0.0152),
        (0.9799, 0.0200, -0.0032, -0.0161),
        (0.9798, 0.0200, -0.0034, -0.0171),
        (0.9797, 0.0200, -0.0036, -0.0182),
        (0.9796, 0.0201, -0.0039, -0.0195),
        (0.9795, 0.0201, -0.0042, -0.0209),
        (0.9794, 0.0202, -0.0045, -0.0224),
        (0.9793, 0.0202, -0.0049, -0.0243),
        (0.9792, 0.0203, -0.0053, -0.0265),
    ];
    rows.iter().map(|&(a, b_phi, g1, g2)| NrfRow { a, b_phi, b_gamma: [g1, g2, 0.0] }).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatoonParams {
    pub n: usize,
    pub ts: f64,
    /// Time headway.
    pub h: f64,
    /// Length of every car except the virtual leader.
    pub car_length: f64,
    pub m: f64,
    pub tau: f64,
    pub sigma: f64,
    /// Explicit car matrices; the zero-order hold of `(m, τ, σ, T_s)` otherwise.
    #[serde(default)]
    pub car: Option<CarMatrices>,
    pub table: Vec<NrfRow>,
    pub y_bounds: [f64; 2],
    pub v_bounds: [f64; 2],
    pub mu_max: f64,
    pub u_max: f64,
    pub u_s1: [f64; 3],
    pub u_s2: f64,
    pub noise_v: f64,
    pub beta_f: f64,
    pub beta_s1: f64,
    pub beta_s2: f64,
    /// Largest leader speed; the leader increment lies in `[0, v0_max T_s]`.
    pub v0_max: f64,
    pub weight_y: f64,
    pub weight_us1: f64,
    pub weight_us2: f64,
}

impl Default for PlatoonParams {
    fn default() -> Self {
        PlatoonParams {
            n: 10,
            ts: 0.1,
            h: 5.0,
            car_length: 5.0,
            m: 1.0,
            tau: 0.1,
            sigma: 1.0,
            car: Some(CarMatrices::printed()),
            table: paper_table(),
            y_bounds: [-360.0, 0.0],
            v_bounds: [0.0, 36.0],
            mu_max: 10.0,
            u_max: 10.0,
            u_s1: [720.0, 72.0, 0.0],
            u_s2: 5.0,
            noise_v: 0.02,
            beta_f: 0.02,
            beta_s1: 0.01,
            beta_s2: 0.01,
            v0_max: 36.0,
            weight_y: 1e-9,
            weight_us1: 1.0,
            weight_us2: 1.0,
        }
    }
}

impl PlatoonParams {
    pub fn validate(&self) -> Result<(), PlatoonError> {
        let err = |m: &str| Err(PlatoonError::Params(m.into()));
        if self.n < 2 {
            return err("at least two cars are required");
        }
        if self.table.len() < self.n {
            return err("coefficient table needs one row per car");
        }
        if !(self.ts > 0.0 && self.m > 0.0 && self.tau > 0.0) {
            return err("sampling period, mass and actuator lag must be positive");
        }
        if self.y_bounds[0] > self.y_bounds[1] || self.v_bounds[0] > self.v_bounds[1] {
            return err("bounds must be ordered");
        }
        Ok(())
    }

    pub fn car_matrices(&self) -> CarMatrices {
        self.car.unwrap_or_else(|| CarMatrices::zoh(self.m, self.tau, self.sigma, self.ts))
    }
}

#[derive(Clone, Debug)]
pub struct PlatoonModel {
    pub a_car: DMatrix<f64>,
    pub b_car: DVector<f64>,
    /// Coordinate change from `(p_0, ℓ_v, p_i, v_i, μ_i)` to `(p_0, ℓ_v, y_i, v_i, μ_i)`.
    pub t: DMatrix<f64>,
    /// Full model with `4N + 1` states.
    pub full: StateSpace,
    /// Car states only, `3N` states, in network form.
    pub reduced: StateSpace,
    /// `W_x = [e₁ᵀ(A_car − I), e₁ᵀB_car]`.
    pub w_x: DVector<f64>,
    /// Bounds kept on `W_x x̂`.
    pub w_x_bounds: [f64; 2],
    pub a_w: DMatrix<f64>,
    pub b_w: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct Platoon {
    pub params: PlatoonParams,
    pub model: PlatoonModel,
    pub layer: NrfLayer,
    pub spec: ConstraintSpec,
    pub costs: Vec<StageCost>,
}

impl Platoon {
    /// Per-car constraint set over `(y, v, μ, w)`.
    pub fn x_hat(&self, i: usize) -> HPolytope {
        let b = self.spec.x[i].product(&self.spec_uf(i)).to_hpolytope();
        b.intersect(self.spec.coupled_rows(i).unwrap()).unwrap()
    }

    fn spec_uf(&self, i: usize) -> BoxSet {
        command_budget_tighten(&self.spec, &self.layer, i).expect("validated at build time")
    }
}

/// Maps `(p_0, ℓ_v, p_1, v_1, μ_1, …)` to `(p_0, ℓ_v, y_1, v_1, μ_1, …)` with
/// `y_i = p_i − p_{i−1} + ℓ_i`.
pub fn transformation(n: usize) -> DMatrix<f64> {
    let dim = 4 * n + 1;
    let mut t = DMatrix::identity(dim, dim);
    for i in 0..n {
        let row = n + 1 + 3 * i;
        if i == 0 {
            t[(row, 0)] = -1.0;
            t[(row, 1)] = 1.0;
        } else {
            t[(row, i + 1)] = 1.0;
            t[(row, row - 3)] = -1.0;
        }
    }
    t
}

pub fn build_platoon(params: &PlatoonParams) -> Result<Platoon, PlatoonError> {
    params.validate()?;
    let n = params.n;
    let car = params.car_matrices();
    let a_car = car.a_mat();
    let b_car = car.b_vec();

    let dim = 4 * n + 1;
    let mut a0 = DMatrix::identity(dim, dim);
    let mut b0 = DMatrix::zeros(dim, n);
    for i in 0..n {
        let o = n + 1 + 3 * i;
        a0.view_mut((o, o), (3, 3)).copy_from(&a_car);
        b0.view_mut((o, i), (3, 1)).copy_from(&b_car);
    }
    let mut bd0 = DMatrix::zeros(dim, 1);
    bd0[(0, 0)] = 1.0;
    let t = transformation(n);
    let t_inv = t.clone().try_inverse().ok_or_else(|| PlatoonError::Params("coordinate change is singular".into()))?;
    let full = StateSpace::network(&t * a0 * &t_inv, &t * b0, &t * bd0).map_err(|e| PlatoonError::Params(e.to_string()))?;

    let car_rows: Vec<usize> = (n + 1..dim).collect();
    let reduced = StateSpace::network(
        full.a.select_rows(car_rows.iter()).select_columns(car_rows.iter()),
        full.b_u.select_rows(car_rows.iter()),
        full.b_d.select_rows(car_rows.iter()),
    )
    .map_err(|e| PlatoonError::Params(e.to_string()))?;

    let neighbors = (0..n).map(|i| if i == 0 { vec![0] } else { vec![i - 1, i] }).collect();
    let partition = AreaPartition::with_neighbors(3 * n, n, &vec![(3, 1); n], neighbors).map_err(|e| PlatoonError::Params(e.to_string()))?;
    let blocks = (0..n)
        .map(|i| {
            let row = &params.table[i];
            let mut g = DMatrix::zeros(1, 4 * n);
            if i > 0 {
                g[(0, i - 1)] = row.b_phi;
            }
            for k in 0..3 {
                g[(0, n + 3 * i + k)] = row.b_gamma[k];
            }
            NrfBlock::new(vec![-row.a], g)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let layer = build_nrf_layer(&partition, blocks)?;

    let x_box = BoxSet::from_bounds(
        &[params.y_bounds[0], params.v_bounds[0], -params.mu_max],
        &[params.y_bounds[1], params.v_bounds[1], params.mu_max],
    )?;
    let u_box = BoxSet::symmetric(&[params.u_max]);
    let d_box = BoxSet::from_bounds(&[0.0], &[params.v0_max * params.ts])?;
    let mut spec = ConstraintSpec {
        x: vec![x_box; n],
        u: vec![u_box; n],
        coupled: vec![],
        v: BoxSet::symmetric(&vec![params.noise_v; 4 * n]),
        d: d_box.clone(),
        beta_f: BoxSet::symmetric(&vec![params.beta_f; n]),
        beta_s1: BoxSet::symmetric(&vec![params.beta_s1; 3 * n]),
        beta_s2: BoxSet::symmetric(&vec![params.beta_s2; n]),
        u_s1: vec![BoxSet::symmetric(&params.u_s1); n],
        u_s2: vec![BoxSet::symmetric(&[params.u_s2]); n],
    };

    // Each car's own increment must stay in the leader's increment range
    // after the supervisory command and its noise are accounted for.
    let w_x = DVector::from_vec(vec![a_car[(0, 0)] - 1.0, a_car[(0, 1)], a_car[(0, 2)], b_car[0]]);
    let cmd = spec.u_s2[0].sum(&spec.beta_s2.slice(&[0]))?;
    let moved = linear_image(&DMatrix::from_element(1, 1, b_car[0]), &Set::Box(cmd))?;
    let inc = pontryagin_diff(&d_box.to_hpolytope(), &Set::Zonotope(moved))?;
    let w_x_bounds = [-inc.rhs[1], inc.rhs[0]];
    let coupled = HPolytope::new(
        DMatrix::from_fn(2, 4, |r, c| if r == 0 { w_x[c] } else { -w_x[c] }),
        DVector::from_vec(vec![w_x_bounds[1], -w_x_bounds[0]]),
    )?;
    spec.coupled = vec![Some(coupled); n];
    for i in 0..n {
        command_budget_tighten(&spec, &layer, i)?;
    }

    let mut a_w = DMatrix::zeros(3, 3);
    a_w[(0, 1)] = -a_car[(0, 1)];
    a_w[(0, 2)] = -a_car[(0, 2)];
    let b_w = DVector::from_vec(vec![-b_car[0], 0.0, 0.0]);

    let mut q = DMatrix::zeros(4, 4);
    q[(0, 0)] = params.weight_y;
    let cost = StageCost {
        q_out: q,
        r1: DMatrix::identity(3, 3) * params.weight_us1,
        r2: DMatrix::identity(1, 1) * params.weight_us2,
    };

    Ok(Platoon {
        params: params.clone(),
        model: PlatoonModel { a_car, b_car, t, full, reduced, w_x, w_x_bounds, a_w, b_w },
        layer,
        spec,
        costs: vec![cost; n],
    })
}

/// Leader speed of the reference scenario.
pub fn scenario_v0(k: usize) -> f64 {
    let step = |s: usize| if k >= s { 1.0 } else { 0.0 };
    10.0 * step(0) - 7.0 * step(400) + 30.0 * step(1200) - 30.0 * step(1300)
}

impl Platoon {
    /// Equilibrium at common speed `v` with zero controller state: every
    /// feedback row vanishes, so `y_i = −(B_Γi,2 / B_Γi,1) v`.
    pub fn equilibrium(&self, v: f64) -> InitialState {
        let n = self.params.n;
        let mut x = DVector::zeros(3 * n);
        for i in 0..n {
            let g = self.params.table[i].b_gamma;
            x[3 * i] = if g[0] != 0.0 { -g[1] / g[0] * v } else { 0.0 };
            x[3 * i + 1] = v;
        }
        InitialState { x, w: DVector::zeros(self.layer.n_w()) }
    }

    /// Leader increments `Δp₀[k] = T_s v₀[k]` for `k < steps`.
    pub fn scenario(&self, steps: usize) -> Scenario {
        Scenario::Sequence((0..steps).map(|k| DVector::from_element(1, self.params.ts * scenario_v0(k))).collect())
    }
}
