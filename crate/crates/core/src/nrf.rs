//! First-layer NRF controllers, closed-loop assembly and per-area models.

use std::collections::BTreeSet;
use std::sync::RwLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linsys::{AreaPartition, StateSpace};
use crate::serial;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NrfError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("command row {row} (area {area}) has gain {value} on {kind} column {column} of non-neighbor area {other}")]
    Sparsity { row: usize, area: usize, kind: &'static str, column: usize, other: usize, value: f64 },
    #[error("plant is not in network form")]
    NotNetworkForm,
    #[error("missing initial-condition report from area {0}")]
    MissingReport(usize),
}

/// Companion realisation driving command row ℓ.
///
/// `A_r` has `-a_j` in its first column over a shifted identity, `C_r = e₁ᵀ`.
/// Gain rows span `n_u + n_x` columns: the first `n_u` act on `u_f + β_f`,
/// the remaining `n_x` on `x + ζ + u_s1 + β_s1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NrfBlock {
    pub coeffs: Vec<f64>,
    #[serde(with = "serial::mat")]
    pub gains: DMatrix<f64>,
}

impl NrfBlock {
    pub fn new(coeffs: Vec<f64>, gains: DMatrix<f64>) -> Result<Self, NrfError> {
        if coeffs.is_empty() || gains.nrows() != coeffs.len() {
            return Err(NrfError::Dimension(format!(
                "{} coefficients but {} gain rows",
                coeffs.len(),
                gains.nrows()
            )));
        }
        Ok(NrfBlock { coeffs, gains })
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    pub fn a_r(&self) -> DMatrix<f64> {
        let n = self.order();
        let mut a = DMatrix::zeros(n, n);
        for j in 0..n {
            a[(j, 0)] = -self.coeffs[j];
            if j + 1 < n {
                a[(j, j + 1)] += 1.0;
            }
        }
        a
    }

    pub fn c_r(&self) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(1, self.order());
        c[(0, 0)] = 1.0;
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NrfLayer {
    pub partition: AreaPartition,
    /// One block per command row, ordered by row.
    pub blocks: Vec<NrfBlock>,
    #[serde(with = "serial::vector")]
    pub w_init: DVector<f64>,
}

/// Validates dimensions and the neighborhood sparsity of every gain.
pub fn build_nrf_layer(partition: &AreaPartition, blocks: Vec<NrfBlock>) -> Result<NrfLayer, NrfError> {
    let (nx, nu) = (partition.n_x, partition.n_u);
    if blocks.len() != nu {
        return Err(NrfError::Dimension(format!("{} blocks for {nu} command rows", blocks.len())));
    }
    for (l, b) in blocks.iter().enumerate() {
        if b.gains.ncols() != nu + nx {
            return Err(NrfError::Dimension(format!("block {l} gains have {} columns, expected {}", b.gains.ncols(), nu + nx)));
        }
        let area = partition.area_of_u(l);
        let nb = &partition.neighbors[area];
        for c in 0..nu + nx {
            let (kind, column, other) = if c < nu {
                ("input", c, partition.area_of_u(c))
            } else {
                ("state", c - nu, partition.area_of_x(c - nu))
            };
            if nb.contains(&other) {
                continue;
            }
            if let Some(v) = b.gains.column(c).iter().find(|v| **v != 0.0) {
                return Err(NrfError::Sparsity { row: l, area, kind, column, other, value: *v });
            }
        }
    }
    let n_w = blocks.iter().map(NrfBlock::order).sum();
    Ok(NrfLayer { partition: partition.clone(), blocks, w_init: DVector::zeros(n_w) })
}

impl NrfLayer {
    pub fn n_w(&self) -> usize {
        self.blocks.iter().map(NrfBlock::order).sum()
    }

    /// Offset of block ℓ inside `w`.
    pub fn block_offset(&self, l: usize) -> usize {
        self.blocks[..l].iter().map(NrfBlock::order).sum()
    }

    pub fn w_range(&self, i: usize) -> std::ops::Range<usize> {
        let u = self.partition.u_range(i);
        let start = self.block_offset(u.start);
        let end = self.block_offset(u.end);
        start..end
    }

    pub fn n_wi(&self, i: usize) -> usize {
        self.w_range(i).len()
    }

    pub fn a_w(&self) -> DMatrix<f64> {
        let n = self.n_w();
        let mut a = DMatrix::zeros(n, n);
        for (l, b) in self.blocks.iter().enumerate() {
            let o = self.block_offset(l);
            a.view_mut((o, o), (b.order(), b.order())).copy_from(&b.a_r());
        }
        a
    }

    /// Gains stacked as `n_w × (n_u + n_x)`.
    pub fn b_w(&self) -> DMatrix<f64> {
        let cols = self.partition.n_u + self.partition.n_x;
        let mut b = DMatrix::zeros(self.n_w(), cols);
        for (l, blk) in self.blocks.iter().enumerate() {
            b.rows_mut(self.block_offset(l), blk.order()).copy_from(&blk.gains);
        }
        b
    }

    pub fn c_w(&self) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(self.partition.n_u, self.n_w());
        for l in 0..self.blocks.len() {
            c[(l, self.block_offset(l))] = 1.0;
        }
        c
    }

    /// Command `u_f = C_w w` and next state for the whole layer.
    pub fn uf_step(&self, w: &DVector<f64>, fed_uf: &DVector<f64>, fed_x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let uf = self.c_w() * w;
        let fed = stack(&[fed_uf, fed_x]);
        (uf, self.a_w() * w + self.b_w() * fed)
    }

    /// Area-local version of [`uf_step`](Self::uf_step); only neighbor entries
    /// of the fed vectors are read.
    pub fn area_uf_step(
        &self,
        i: usize,
        w_i: &DVector<f64>,
        fed_uf: &DVector<f64>,
        fed_x: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        let p = &self.partition;
        let nu = p.n_u;
        let rows = p.u_range(i);
        let mut uf = DVector::zeros(rows.len());
        let mut next = DVector::zeros(w_i.len());
        let base = self.block_offset(rows.start);
        let cols: Vec<usize> = p.neighbors[i]
            .iter()
            .flat_map(|&j| p.u_range(j).chain(p.x_range(j).map(move |c| c + nu)))
            .collect();
        for (k, l) in rows.enumerate() {
            let blk = &self.blocks[l];
            let o = self.block_offset(l) - base;
            let n = blk.order();
            uf[k] = w_i[o];
            for j in 0..n {
                let mut v = -blk.coeffs[j] * w_i[o];
                if j + 1 < n {
                    v += w_i[o + j + 1];
                }
                for &c in &cols {
                    let g = blk.gains[(j, c)];
                    if g != 0.0 {
                        v += g * if c < nu { fed_uf[c] } else { fed_x[c - nu] };
                    }
                }
                next[o + j] = v;
            }
        }
        (uf, next)
    }
}

pub fn stack(parts: &[&DVector<f64>]) -> DVector<f64> {
    DVector::from_iterator(parts.iter().map(|p| p.len()).sum(), parts.iter().flat_map(|p| p.iter().copied()))
}

/// Column layout of the aggregated disturbance `d_s = [ζ+β_s1, β_s2, β_f, d]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DsLayout {
    pub n_x: usize,
    pub n_u: usize,
    pub n_d: usize,
}

impl DsLayout {
    pub fn len(&self) -> usize {
        self.n_x + 2 * self.n_u + self.n_d
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn zeta_beta_s1(&self) -> std::ops::Range<usize> {
        0..self.n_x
    }
    pub fn beta_s2(&self) -> std::ops::Range<usize> {
        self.n_x..self.n_x + self.n_u
    }
    pub fn beta_f(&self) -> std::ops::Range<usize> {
        self.n_x + self.n_u..self.n_x + 2 * self.n_u
    }
    pub fn d(&self) -> std::ops::Range<usize> {
        self.n_x + 2 * self.n_u..self.len()
    }
    pub fn assemble(&self, zeta_beta_s1: &DVector<f64>, beta_s2: &DVector<f64>, beta_f: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        stack(&[zeta_beta_s1, beta_s2, beta_f, d])
    }
}

/// Network plus first layer, with state `z = [x; w]` and outputs `(x, u_f)`.
#[derive(Debug)]
pub struct ClosedLoop {
    pub a: DMatrix<f64>,
    pub b_us1: DMatrix<f64>,
    pub b_us2: DMatrix<f64>,
    pub b_ds: DMatrix<f64>,
    pub c_x: DMatrix<f64>,
    pub c_uf: DMatrix<f64>,
    pub layout: DsLayout,
    powers: RwLock<Vec<DMatrix<f64>>>,
}

impl Clone for ClosedLoop {
    fn clone(&self) -> Self {
        ClosedLoop {
            a: self.a.clone(),
            b_us1: self.b_us1.clone(),
            b_us2: self.b_us2.clone(),
            b_ds: self.b_ds.clone(),
            c_x: self.c_x.clone(),
            c_uf: self.c_uf.clone(),
            layout: self.layout,
            powers: RwLock::new(self.powers.read().unwrap().clone()),
        }
    }
}

pub fn assemble_closed_loop(plant: &StateSpace, layer: &NrfLayer) -> Result<ClosedLoop, NrfError> {
    if !plant.is_network_form() {
        return Err(NrfError::NotNetworkForm);
    }
    let (nx, nu, nd) = (plant.n_x(), plant.n_u(), plant.n_d());
    if layer.partition.n_x != nx || layer.partition.n_u != nu {
        return Err(NrfError::Dimension(format!(
            "layer partition is ({}, {}), plant is ({nx}, {nu})",
            layer.partition.n_x, layer.partition.n_u
        )));
    }
    let nw = layer.n_w();
    let nz = nx + nw;
    let (aw, bw, cw) = (layer.a_w(), layer.b_w(), layer.c_w());
    let bw_uf = bw.columns(0, nu).into_owned();
    let bw_x = bw.columns(nu, nx).into_owned();

    let mut a = DMatrix::zeros(nz, nz);
    a.view_mut((0, 0), (nx, nx)).copy_from(&plant.a);
    a.view_mut((0, nx), (nx, nw)).copy_from(&(&plant.b_u * &cw));
    a.view_mut((nx, 0), (nw, nx)).copy_from(&bw_x);
    a.view_mut((nx, nx), (nw, nw)).copy_from(&(&aw + &bw_uf * &cw));

    let mut b_us1 = DMatrix::zeros(nz, nx);
    b_us1.view_mut((nx, 0), (nw, nx)).copy_from(&bw_x);
    let mut b_us2 = DMatrix::zeros(nz, nu);
    b_us2.view_mut((0, 0), (nx, nu)).copy_from(&plant.b_u);

    let layout = DsLayout { n_x: nx, n_u: nu, n_d: nd };
    let mut b_ds = DMatrix::zeros(nz, layout.len());
    b_ds.view_mut((nx, 0), (nw, nx)).copy_from(&bw_x);
    b_ds.view_mut((0, nx), (nx, nu)).copy_from(&plant.b_u);
    b_ds.view_mut((nx, nx + nu), (nw, nu)).copy_from(&bw_uf);
    b_ds.view_mut((0, nx + 2 * nu), (nx, nd)).copy_from(&plant.b_d);

    let mut c_x = DMatrix::zeros(nx, nz);
    c_x.view_mut((0, 0), (nx, nx)).fill_with_identity();
    let mut c_uf = DMatrix::zeros(nu, nz);
    c_uf.view_mut((0, nx), (nu, nw)).copy_from(&cw);

    Ok(ClosedLoop { a, b_us1, b_us2, b_ds, c_x, c_uf, layout, powers: RwLock::new(vec![DMatrix::identity(nz, nz)]) })
}

impl ClosedLoop {
    pub fn n_z(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_x(&self) -> usize {
        self.c_x.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.c_uf.nrows()
    }

    /// `C_cl = [[I, 0], [0, C_w]]`.
    pub fn c_cl(&self) -> DMatrix<f64> {
        let (nx, nu) = (self.n_x(), self.n_u());
        let mut c = DMatrix::zeros(nx + nu, self.n_z());
        c.rows_mut(0, nx).copy_from(&self.c_x);
        c.rows_mut(nx, nu).copy_from(&self.c_uf);
        c
    }

    /// `A_cl^t`, memoised.
    pub fn power(&self, t: usize) -> DMatrix<f64> {
        if let Some(p) = self.powers.read().unwrap().get(t) {
            return p.clone();
        }
        let mut cache = self.powers.write().unwrap();
        while cache.len() <= t {
            let next = &self.a * cache.last().unwrap();
            cache.push(next);
        }
        cache[t].clone()
    }

    /// Maps `(x_c, w_c)` to `(x, u_f)` after `t` unforced steps.
    pub fn ic_response_map(&self, t: usize) -> DMatrix<f64> {
        self.c_cl() * self.power(t)
    }

    pub fn step(&self, z: &DVector<f64>, u_s1: &DVector<f64>, u_s2: &DVector<f64>, ds: &DVector<f64>) -> DVector<f64> {
        &self.a * z + &self.b_us1 * u_s1 + &self.b_us2 * u_s2 + &self.b_ds * ds
    }

    /// Rows of `(x, u_f)` belonging to area `i`: its states then its commands.
    pub fn area_output_rows(&self, p: &AreaPartition, i: usize) -> Vec<usize> {
        let nx = self.n_x();
        p.x_range(i).chain(p.u_range(i).map(|r| nx + r)).collect()
    }

    /// Coordinates of `z` holding area `i`'s states and controller states.
    pub fn area_state_cols(&self, layer: &NrfLayer, i: usize) -> Vec<usize> {
        let nx = self.n_x();
        layer.partition.x_range(i).chain(layer.w_range(i).map(|c| nx + c)).collect()
    }

    /// `Z_iᵀ I_Q[t] Z_cj`.
    pub fn ic_block(&self, layer: &NrfLayer, i: usize, j: usize, t: usize) -> DMatrix<f64> {
        let m = self.ic_response_map(t);
        let rows = self.area_output_rows(&layer.partition, i);
        let cols = self.area_state_cols(layer, j);
        m.select_rows(rows.iter()).select_columns(cols.iter())
    }
}

/// Sub-map `(u_s1i, u_s2i) → (x_i, u_fi)` restricted to its structural support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AreaModel {
    pub area: usize,
    /// Closed-loop coordinates kept, ascending.
    pub states: Vec<usize>,
    #[serde(with = "serial::mat")]
    pub a_s: DMatrix<f64>,
    #[serde(with = "serial::mat")]
    pub b_s1: DMatrix<f64>,
    #[serde(with = "serial::mat")]
    pub b_s2: DMatrix<f64>,
    #[serde(with = "serial::mat")]
    pub b_sd: DMatrix<f64>,
    #[serde(with = "serial::mat")]
    pub c_x: DMatrix<f64>,
    #[serde(with = "serial::mat")]
    pub c_u: DMatrix<f64>,
}

impl AreaModel {
    pub fn n_s(&self) -> usize {
        self.states.len()
    }

    /// Output matrix `[C_x; C_u]`.
    pub fn c(&self) -> DMatrix<f64> {
        let (nx, nu) = (self.c_x.nrows(), self.c_u.nrows());
        let mut c = DMatrix::zeros(nx + nu, self.n_s());
        c.rows_mut(0, nx).copy_from(&self.c_x);
        c.rows_mut(nx, nu).copy_from(&self.c_u);
        c
    }

    /// Markov parameters `C A^{t-1} [B_1 B_2]` for `t = 1..=horizon`.
    pub fn markov(&self, horizon: usize) -> Vec<(DMatrix<f64>, DMatrix<f64>)> {
        let c = self.c();
        let mut apow = DMatrix::identity(self.n_s(), self.n_s());
        let mut out = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let ca = &c * &apow;
            out.push((&ca * &self.b_s1, &ca * &self.b_s2));
            apow = &self.a_s * apow;
        }
        out
    }
}

fn closure(start: impl IntoIterator<Item = usize>, next: impl Fn(usize) -> Vec<usize>) -> BTreeSet<usize> {
    let mut seen = BTreeSet::new();
    let mut stack: Vec<usize> = start.into_iter().collect();
    while let Some(s) = stack.pop() {
        if seen.insert(s) {
            stack.extend(next(s).into_iter().filter(|n| !seen.contains(n)));
        }
    }
    seen
}

pub fn extract_area_model(cl: &ClosedLoop, p: &AreaPartition, i: usize) -> AreaModel {
    let nz = cl.n_z();
    let nx = cl.n_x();
    let in_cols: Vec<(bool, usize)> = p.x_range(i).map(|c| (true, c)).chain(p.u_range(i).map(|c| (false, c))).collect();
    let seeds = (0..nz).filter(|&r| {
        in_cols.iter().any(|&(s1, c)| if s1 { cl.b_us1[(r, c)] != 0.0 } else { cl.b_us2[(r, c)] != 0.0 })
    });
    let reach = closure(seeds, |j| (0..nz).filter(|&r| cl.a[(r, j)] != 0.0).collect());
    let c_cl = cl.c_cl();
    let out_rows = cl.area_output_rows(p, i);
    let obs_seeds = (0..nz).filter(|&s| out_rows.iter().any(|&r| c_cl[(r, s)] != 0.0));
    let obs = closure(obs_seeds, |r| (0..nz).filter(|&j| cl.a[(r, j)] != 0.0).collect());
    let states: Vec<usize> = reach.intersection(&obs).copied().collect();
    let a_s = cl.a.select_rows(states.iter()).select_columns(states.iter());
    let b_s1 = cl.b_us1.select_rows(states.iter()).select_columns(p.x_range(i).collect::<Vec<_>>().iter());
    let b_s2 = cl.b_us2.select_rows(states.iter()).select_columns(p.u_range(i).collect::<Vec<_>>().iter());
    let b_sd = cl.b_ds.select_rows(states.iter());
    let c_x = c_cl.select_rows(p.x_range(i).collect::<Vec<_>>().iter()).select_columns(states.iter());
    let c_u = c_cl.select_rows(p.u_range(i).map(|r| nx + r).collect::<Vec<_>>().iter()).select_columns(states.iter());
    AreaModel { area: i, states, a_s, b_s1, b_s2, b_sd, c_x, c_u }
}

/// Initial-condition report `(x̃_cj, w̃_cj)` from area `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct IcReport {
    pub area: usize,
    pub x: DVector<f64>,
    pub w: DVector<f64>,
}

/// `θ̃_i[t]` split into its state rows and command rows.
pub fn theta_signals(
    cl: &ClosedLoop,
    layer: &NrfLayer,
    i: usize,
    reports: &[IcReport],
    t: usize,
) -> Result<(DVector<f64>, DVector<f64>), NrfError> {
    let p = &layer.partition;
    let nxi = p.x_sizes[i];
    let rows = cl.area_output_rows(p, i);
    let m = cl.ic_response_map(t).select_rows(rows.iter());
    let mut theta = DVector::zeros(rows.len());
    for &j in &p.neighbors[i] {
        let r = reports.iter().find(|r| r.area == j).ok_or(NrfError::MissingReport(j))?;
        let cols = cl.area_state_cols(layer, j);
        let zc = stack(&[&r.x, &r.w]);
        if zc.len() != cols.len() {
            return Err(NrfError::Dimension(format!("report from area {j} has length {}", zc.len())));
        }
        theta += m.select_columns(cols.iter()) * zc;
    }
    Ok((theta.rows(0, nxi).into_owned(), theta.rows(nxi, rows.len() - nxi).into_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_area() -> (StateSpace, NrfLayer) {
        let p = AreaPartition::with_neighbors(2, 2, &[(1, 1), (1, 1)], vec![vec![0, 1], vec![1]]).unwrap();
        let plant = StateSpace::network(
            DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.4]),
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
        )
        .unwrap();
        let blocks = vec![
            NrfBlock::new(vec![-0.3, 0.1], DMatrix::from_row_slice(2, 4, &[0.0, 0.2, -0.1, 0.05, 0.0, 0.1, 0.3, 0.0])).unwrap(),
            NrfBlock::new(vec![-0.2], DMatrix::from_row_slice(1, 4, &[0.0, 0.0, 0.0, -0.4])).unwrap(),
        ];
        (plant, build_nrf_layer(&p, blocks).unwrap())
    }

    #[test]
    fn companion_structure() {
        let b = NrfBlock::new(vec![0.5, -0.25, 0.1], DMatrix::zeros(3, 2)).unwrap();
        let a = b.a_r();
        assert_eq!(a.column(0).as_slice(), &[-0.5, 0.25, -0.1]);
        assert_eq!(a[(0, 1)], 1.0);
        assert_eq!(a[(1, 2)], 1.0);
        assert_eq!(a[(2, 2)], 0.0);
    }

    #[test]
    fn sparsity_rejected() {
        let p = AreaPartition::new(2, 2, &[(1, 1), (1, 1)]).unwrap();
        let blocks = vec![
            NrfBlock::new(vec![0.0], DMatrix::from_row_slice(1, 4, &[0.0, 0.0, 0.0, 0.7])).unwrap(),
            NrfBlock::new(vec![0.0], DMatrix::zeros(1, 4)).unwrap(),
        ];
        match build_nrf_layer(&p, blocks) {
            Err(NrfError::Sparsity { row: 0, kind: "state", column: 1, other: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn second_order_block_recursion() {
        let (_, layer) = two_area();
        let w = DVector::from_vec(vec![0.4, -0.2, 0.7]);
        let fu = DVector::from_vec(vec![0.3, -0.6]);
        let fx = DVector::from_vec(vec![1.0, 2.0]);
        let (uf, wn) = layer.uf_step(&w, &fu, &fx);
        assert_eq!(uf.as_slice(), &[0.4, 0.7]);
        let k = &layer.blocks[0].gains;
        let fed = [0.3, -0.6, 1.0, 2.0];
        let kf = |r: usize| (0..4).map(|c| k[(r, c)] * fed[c]).sum::<f64>();
        assert!((wn[0] - (0.3 * 0.4 + -0.2 + kf(0))).abs() < 1e-15);
        assert!((wn[1] - (-0.1 * 0.4 + kf(1))).abs() < 1e-15);
        for i in 0..2 {
            let r = layer.w_range(i);
            let (ufi, wi) = layer.area_uf_step(i, &w.rows(r.start, r.len()).into_owned(), &fu, &fx);
            assert_eq!(ufi, uf.rows(layer.partition.u_offset(i), 1).into_owned());
            assert!((wi - wn.rows(r.start, r.len())).amax() < 1e-15);
        }
    }

    #[test]
    fn zero_gains_recover_open_loop() {
        let p = AreaPartition::new(2, 1, &[(2, 1)]).unwrap();
        let plant = StateSpace::network(DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.3, 0.4]), DMatrix::from_row_slice(2, 1, &[1.0, 1.0]), DMatrix::zeros(2, 0)).unwrap();
        let layer = build_nrf_layer(&p, vec![NrfBlock::new(vec![0.0], DMatrix::zeros(1, 3)).unwrap()]).unwrap();
        let cl = assemble_closed_loop(&plant, &layer).unwrap();
        assert_eq!(cl.a.view((0, 0), (2, 2)), plant.a.view((0, 0), (2, 2)));
        assert!(cl.a.view((2, 0), (1, 3)).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn area_model_matches_full_loop() {
        let (plant, layer) = two_area();
        let cl = assemble_closed_loop(&plant, &layer).unwrap();
        let p = &layer.partition;
        for i in 0..2 {
            let m = extract_area_model(&cl, p, i);
            let rows = cl.area_output_rows(p, i);
            let c = cl.c_cl().select_rows(rows.iter());
            let b1 = cl.b_us1.select_columns(p.x_range(i).collect::<Vec<_>>().iter());
            let b2 = cl.b_us2.select_columns(p.u_range(i).collect::<Vec<_>>().iter());
            for (t, (m1, m2)) in m.markov(30).into_iter().enumerate() {
                let ca = &c * cl.power(t);
                assert!((m1 - &ca * &b1).amax() < 1e-12);
                assert!((m2 - &ca * &b2).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn ic_map_matches_simulation() {
        let (plant, layer) = two_area();
        let cl = assemble_closed_loop(&plant, &layer).unwrap();
        let z0 = DVector::from_vec(vec![1.0, -2.0, 0.5, 0.25, -1.0]);
        let mut z = z0.clone();
        let zero_x = DVector::zeros(2);
        let zero_u = DVector::zeros(2);
        let zero_d = DVector::zeros(cl.layout.len());
        for _ in 0..5 {
            z = cl.step(&z, &zero_x, &zero_u, &zero_d);
        }
        let y = cl.c_cl() * &z;
        assert!((cl.ic_response_map(5) * &z0 - y).amax() < 1e-12);
        assert_eq!(cl.ic_response_map(0), cl.c_cl());
    }
}
