//! Dense LP and strictly convex QP solvers.
//!
//! Problems take the form
//! `min ½xᵀPx + qᵀx  s.t.  A_ineq x ≤ b_ineq,  A_eq x = b_eq`.
//! LPs (P = 0) go through a two-phase tableau simplex; QPs through the
//! Goldfarb-Idnani dual active-set method.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::serial;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QpProblem {
    #[serde(with = "serial::mat")]
    pub p: DMatrix<f64>,
    #[serde(with = "serial::vector")]
    pub q: DVector<f64>,
    #[serde(with = "serial::mat")]
    pub a_ineq: DMatrix<f64>,
    #[serde(with = "serial::vector")]
    pub b_ineq: DVector<f64>,
    #[serde(with = "serial::mat")]
    pub a_eq: DMatrix<f64>,
    #[serde(with = "serial::vector")]
    pub b_eq: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem with zero cost in `n` variables.
    pub fn new(n: usize) -> Self {
        QpProblem {
            p: DMatrix::zeros(n, n),
            q: DVector::zeros(n),
            a_ineq: DMatrix::zeros(0, n),
            b_ineq: DVector::zeros(0),
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
        }
    }

    pub fn lp(c: DVector<f64>, a_ineq: DMatrix<f64>, b_ineq: DVector<f64>) -> Self {
        let n = c.len();
        QpProblem { q: c, a_ineq, b_ineq, ..Self::new(n) }
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn with_eq(mut self, a_eq: DMatrix<f64>, b_eq: DVector<f64>) -> Self {
        self.a_eq = a_eq;
        self.b_eq = b_eq;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        let n = self.n();
        if self.p.shape() != (n, n) {
            return Err(format!("P is {:?}, expected {n}x{n}", self.p.shape()));
        }
        if self.a_ineq.ncols() != n || self.a_ineq.nrows() != self.b_ineq.len() {
            return Err("inequality block dimensions disagree".into());
        }
        if self.a_eq.ncols() != n || self.a_eq.nrows() != self.b_eq.len() {
            return Err("equality block dimensions disagree".into());
        }
        let scale = 1.0 + self.p.amax();
        if (&self.p - self.p.transpose()).amax() > 1e-12 * scale {
            return Err("P is not symmetric".into());
        }
        let finite = self.p.iter().chain(self.q.iter()).chain(self.a_ineq.iter()).chain(self.b_ineq.iter());
        if !finite.chain(self.a_eq.iter()).chain(self.b_eq.iter()).all(|v| v.is_finite()) {
            return Err("non-finite problem data".into());
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }

    /// Largest constraint violation at `x`.
    pub fn primal_residual(&self, x: &DVector<f64>) -> f64 {
        let ineq = (&self.a_ineq * x - &self.b_ineq).iter().fold(0.0f64, |m, v| m.max(*v));
        let eq = (&self.a_eq * x - &self.b_eq).amax();
        ineq.max(eq)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub iterations: usize,
    /// Largest constraint violation.
    pub primal_residual: f64,
    /// Stationarity residual `‖Px + q + A_ineqᵀλ + A_eqᵀμ‖∞`.
    pub dual_residual: f64,
    /// Largest `|λ_j (b_j − a_jᵀx)|`, or the duality gap for LPs.
    pub complementarity: f64,
    pub lambda_ineq: DVector<f64>,
    pub lambda_eq: DVector<f64>,
    /// Inequalities active at the solution, usable as a warm start.
    pub active: Vec<usize>,
}

impl QpSolution {
    fn failed(n: usize, m: usize, me: usize, status: QpStatus, iterations: usize) -> Self {
        QpSolution {
            x: DVector::zeros(n),
            objective: f64::NAN,
            status,
            iterations,
            primal_residual: f64::INFINITY,
            dual_residual: f64::INFINITY,
            complementarity: f64::INFINITY,
            lambda_ineq: DVector::zeros(m),
            lambda_eq: DVector::zeros(me),
            active: vec![],
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Primal/dual tolerance for LPs.
    pub lp_tol: f64,
    /// KKT tolerance for QPs.
    pub kkt_tol: f64,
    pub max_iter: usize,
    /// Added to the diagonal of P before factorisation.
    pub reg: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { lp_tol: 1e-8, kkt_tol: 1e-6, max_iter: 100_000, reg: 0.0 }
    }
}

fn kkt_residuals(prob: &QpProblem, x: &DVector<f64>, lam: &DVector<f64>, mu: &DVector<f64>) -> (f64, f64, f64) {
    let stat = &prob.p * x + &prob.q + prob.a_ineq.tr_mul(lam) + prob.a_eq.tr_mul(mu);
    let slack = &prob.b_ineq - &prob.a_ineq * x;
    let comp = lam.iter().zip(slack.iter()).fold(0.0f64, |m, (l, s)| m.max((l * s).abs()));
    let dual = stat.amax().max(lam.iter().fold(0.0f64, |m, l| m.max(-l)));
    (prob.primal_residual(x), dual, comp)
}

// ---------------------------------------------------------------------------
// Simplex
// ---------------------------------------------------------------------------

struct Tableau {
    t: DMatrix<f64>,
    basis: Vec<usize>,
    ncols: usize,
}

const PIVOT_TOL: f64 = 1e-10;

impl Tableau {
    fn rhs(&self, r: usize) -> f64 {
        self.t[(r, self.ncols)]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.t.ncols();
        let piv = self.t[(r, c)];
        for j in 0..w {
            self.t[(r, j)] /= piv;
        }
        for i in 0..self.t.nrows() {
            if i == r {
                continue;
            }
            let f = self.t[(i, c)];
            if f != 0.0 {
                for j in 0..w {
                    let v = self.t[(r, j)];
                    self.t[(i, j)] -= f * v;
                }
                self.t[(i, c)] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Minimises the cost stored in the last row over `allowed` columns.
    /// Returns `Ok(true)` at optimality, `Ok(false)` when unbounded.
    fn run(&mut self, allowed: usize, iters: &mut usize, max_iter: usize, tol: f64) -> Result<bool, ()> {
        let m = self.basis.len();
        let obj = m;
        let mut degenerate = 0usize;
        loop {
            if *iters >= max_iter {
                return Err(());
            }
            let bland = degenerate > 50;
            let mut enter = None;
            let mut best = -tol;
            for j in 0..allowed {
                let rc = self.t[(obj, j)];
                if rc < best {
                    enter = Some(j);
                    if bland {
                        break;
                    }
                    best = rc;
                }
            }
            let Some(c) = enter else { return Ok(true) };
            let mut leave: Option<usize> = None;
            let mut ratio = f64::INFINITY;
            for r in 0..m {
                let a = self.t[(r, c)];
                if a > PIVOT_TOL {
                    let q = self.rhs(r).max(0.0) / a;
                    let better = match leave {
                        None => true,
                        Some(l) => q < ratio - 1e-12 || (q <= ratio + 1e-12 && self.basis[r] < self.basis[l]),
                    };
                    if better {
                        ratio = q.min(ratio);
                        leave = Some(r);
                    }
                }
            }
            let Some(r) = leave else { return Ok(false) };
            degenerate = if ratio <= 1e-12 { degenerate + 1 } else { 0 };
            self.pivot(r, c);
            *iters += 1;
        }
    }
}

/// Solves the LP `min qᵀx` over the constraints of `prob` (P is ignored).
pub fn solve_lp(prob: &QpProblem, settings: &SolverSettings) -> QpSolution {
    let n = prob.n();
    let mi = prob.a_ineq.nrows();
    let me = prob.a_eq.nrows();
    let m = mi + me;
    if prob.validate().is_err() {
        return QpSolution::failed(n, mi, me, QpStatus::Infeasible, 0);
    }
    // Columns: x+ (n), x- (n), slacks (mi), artificials (m), rhs.
    let nstd = 2 * n + mi;
    let ncols = nstd + m;
    let mut t = DMatrix::zeros(m + 1, ncols + 1);
    let mut sign = vec![1.0; m];
    let mut basis = vec![0; m];
    for r in 0..m {
        let (row, b) = if r < mi {
            (prob.a_ineq.row(r), prob.b_ineq[r])
        } else {
            (prob.a_eq.row(r - mi), prob.b_eq[r - mi])
        };
        let s = if b < 0.0 { -1.0 } else { 1.0 };
        sign[r] = s;
        for j in 0..n {
            t[(r, j)] = s * row[j];
            t[(r, n + j)] = -s * row[j];
        }
        if r < mi {
            t[(r, 2 * n + r)] = s;
        }
        t[(r, ncols)] = s * b;
        t[(r, nstd + r)] = 1.0;
        basis[r] = nstd + r;
    }
    let mut tab = Tableau { t, basis, ncols };
    // Slack columns with +1 start basic directly.
    for r in 0..mi {
        if sign[r] > 0.0 {
            tab.basis[r] = 2 * n + r;
            tab.t[(r, nstd + r)] = 0.0;
        }
    }
    // Phase 1 cost: sum of artificials still basic.
    for r in 0..m {
        if tab.basis[r] >= nstd {
            for j in 0..=ncols {
                if j < nstd || j == ncols {
                    let v = tab.t[(r, j)];
                    tab.t[(m, j)] -= v;
                }
            }
        }
    }
    let bnorm = prob.b_ineq.amax().max(prob.b_eq.amax());
    let feas_tol = settings.lp_tol * (1.0 + bnorm);
    let mut iters = 0;
    if tab.run(nstd, &mut iters, settings.max_iter, settings.lp_tol * 1e-2).is_err() {
        return QpSolution::failed(n, mi, me, QpStatus::MaxIter, iters);
    }
    if -tab.t[(m, ncols)] > feas_tol {
        return QpSolution::failed(n, mi, me, QpStatus::Infeasible, iters);
    }
    // Drive artificials out of the basis, dropping redundant rows.
    let mut keep = vec![true; m];
    for r in 0..m {
        if tab.basis[r] >= nstd {
            let c = (0..nstd).filter(|&j| tab.t[(r, j)].abs() > 1e-9).max_by(|&a, &b| {
                tab.t[(r, a)].abs().partial_cmp(&tab.t[(r, b)].abs()).unwrap()
            });
            match c {
                Some(c) => tab.pivot(r, c),
                None => keep[r] = false,
            }
        }
    }
    // Phase 2 cost row.
    for j in 0..=ncols {
        tab.t[(m, j)] = 0.0;
    }
    for j in 0..n {
        tab.t[(m, j)] = prob.q[j];
        tab.t[(m, n + j)] = -prob.q[j];
    }
    for r in 0..m {
        if !keep[r] {
            continue;
        }
        let b = tab.basis[r];
        let cb = tab.t[(m, b)];
        if cb != 0.0 {
            for j in 0..=ncols {
                let v = tab.t[(r, j)];
                tab.t[(m, j)] -= cb * v;
            }
        }
    }
    // Redundant rows are all-zero over structural columns and never pivot.
    match tab.run(nstd, &mut iters, settings.max_iter, settings.lp_tol * 1e-2) {
        Err(()) => return QpSolution::failed(n, mi, me, QpStatus::MaxIter, iters),
        Ok(false) => return QpSolution::failed(n, mi, me, QpStatus::Unbounded, iters),
        Ok(true) => {}
    }

    // Recover the basic solution and duals from the original data.
    let rows: Vec<usize> = (0..m).filter(|&r| keep[r]).collect();
    let k = rows.len();
    let col = |r: usize, j: usize| -> f64 {
        let (row, s) = if r < mi { (prob.a_ineq.row(r), sign[r]) } else { (prob.a_eq.row(r - mi), sign[r]) };
        if j < n {
            s * row[j]
        } else if j < 2 * n {
            -s * row[j - n]
        } else if r < mi && j == 2 * n + r {
            s
        } else {
            0.0
        }
    };
    let bmat = DMatrix::from_fn(k, k, |i, c| col(rows[i], tab.basis[rows[c]]));
    let rhs = DVector::from_fn(k, |i, _| sign[rows[i]] * if rows[i] < mi { prob.b_ineq[rows[i]] } else { prob.b_eq[rows[i] - mi] });
    let cost = |j: usize| -> f64 {
        if j < n {
            prob.q[j]
        } else if j < 2 * n {
            -prob.q[j - n]
        } else {
            0.0
        }
    };
    let cb = DVector::from_fn(k, |c, _| cost(tab.basis[rows[c]]));
    let lu = bmat.clone().lu();
    let zb = lu.solve(&rhs).unwrap_or_else(|| DVector::from_fn(k, |i, _| tab.rhs(rows[i])));
    let y = bmat.transpose().lu().solve(&cb).unwrap_or_else(|| DVector::zeros(k));
    let mut x = DVector::zeros(n);
    for (c, &r) in rows.iter().enumerate() {
        let b = tab.basis[r];
        let v = zb[c].max(0.0);
        if b < n {
            x[b] += v;
        } else if b < 2 * n {
            x[b - n] -= v;
        }
    }
    let mut lam = DVector::zeros(mi);
    let mut mu = DVector::zeros(me);
    let mut dual_obj = 0.0;
    for (c, &r) in rows.iter().enumerate() {
        let y_orig = sign[r] * y[c];
        if r < mi {
            lam[r] = (-y_orig).max(0.0);
            dual_obj += prob.b_ineq[r] * y_orig;
        } else {
            mu[r - mi] = -y_orig;
            dual_obj += prob.b_eq[r - mi] * y_orig;
        }
    }
    let objective = prob.q.dot(&x);
    let (primal, dual, _) = kkt_residuals(prob, &x, &lam, &mu);
    let active = (0..mi).filter(|&r| lam[r] > 0.0).collect();
    QpSolution {
        objective,
        status: QpStatus::Optimal,
        iterations: iters,
        primal_residual: primal,
        dual_residual: dual,
        complementarity: (objective - dual_obj).abs(),
        lambda_ineq: lam,
        lambda_eq: mu,
        active,
        x,
    }
}

// ---------------------------------------------------------------------------
// Goldfarb-Idnani
// ---------------------------------------------------------------------------

/// Solves a convex QP. `P + reg·I` must be positive definite; if the Cholesky
/// factorisation fails the regularisation is raised up to `1e-6·(1+‖P‖)`.
/// A zero `P` is routed to [`solve_lp`].
pub fn solve_qp(prob: &QpProblem, settings: &SolverSettings) -> QpSolution {
    solve_qp_warm(prob, settings, &[])
}

/// As [`solve_qp`], trying the inequalities in `hint` first when several are violated.
pub fn solve_qp_warm(prob: &QpProblem, settings: &SolverSettings, hint: &[usize]) -> QpSolution {
    let n = prob.n();
    let mi = prob.a_ineq.nrows();
    let me = prob.a_eq.nrows();
    if prob.validate().is_err() {
        return QpSolution::failed(n, mi, me, QpStatus::Infeasible, 0);
    }
    if prob.p.iter().all(|v| *v == 0.0) && settings.reg == 0.0 {
        return solve_lp(prob, settings);
    }
    let scale = 1.0 + prob.p.amax();
    let mut reg = settings.reg;
    let chol = loop {
        let g = &prob.p + DMatrix::identity(n, n) * reg;
        if let Some(c) = g.cholesky() {
            break c;
        }
        reg = if reg == 0.0 { 1e-12 * scale } else { reg * 100.0 };
        if reg > 1e-6 * scale {
            return QpSolution::failed(n, mi, me, QpStatus::Infeasible, 0);
        }
    };
    let ginv = chol.inverse();

    // Constraints in the form nᵀx ≥ b: equalities first, then inequalities.
    let total = me + mi;
    let normal = |j: usize| -> DVector<f64> {
        if j < me {
            -prob.a_eq.row(j).transpose()
        } else {
            -prob.a_ineq.row(j - me).transpose()
        }
    };
    let rhs = |j: usize| -> f64 {
        if j < me {
            -prob.b_eq[j]
        } else {
            -prob.b_ineq[j - me]
        }
    };
    let normals: Vec<DVector<f64>> = (0..total).map(normal).collect();
    let bs: Vec<f64> = (0..total).map(rhs).collect();
    let mut flip = vec![1.0; me];
    let nn = |j: usize, flip: &[f64]| -> (DVector<f64>, f64) {
        if j < me {
            (&normals[j] * flip[j], bs[j] * flip[j])
        } else {
            (normals[j].clone(), bs[j])
        }
    };

    let mut x = -(&ginv * &prob.q);
    let mut act: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut iters = 0usize;
    let tol_of = |b: f64| 1e-10 * (1.0 + b.abs());
    let feasible_unknown = |x: &DVector<f64>, j: usize, f: &[f64]| -> f64 {
        let (nj, bj) = nn(j, f);
        nj.dot(x) - bj
    };

    let mut pending_eq: Vec<usize> = (0..me).collect();
    pending_eq.reverse();
    loop {
        if iters >= settings.max_iter {
            return QpSolution::failed(n, mi, me, QpStatus::MaxIter, iters);
        }
        // Pick the next constraint to add.
        let p = if let Some(&e) = pending_eq.last() {
            pending_eq.pop();
            let s = feasible_unknown(&x, e, &flip);
            if s > 0.0 {
                flip[e] = -1.0;
            }
            Some(e)
        } else {
            let mut best: Option<(usize, f64, bool)> = None;
            for j in me..total {
                if act.contains(&j) {
                    continue;
                }
                let s = feasible_unknown(&x, j, &flip);
                if s < -tol_of(bs[j]) {
                    let hinted = hint.contains(&(j - me));
                    let better = match best {
                        None => true,
                        Some((_, bs_, bh)) => (hinted && !bh) || (hinted == bh && s < bs_),
                    };
                    if better {
                        best = Some((j, s, hinted));
                    }
                }
            }
            best.map(|b| b.0)
        };
        let Some(p) = p else { break };
        let (np, bp) = nn(p, &flip);
        let is_eq = p < me;
        let mut up = 0.0;
        loop {
            iters += 1;
            if iters >= settings.max_iter {
                return QpSolution::failed(n, mi, me, QpStatus::MaxIter, iters);
            }
            let k = act.len();
            let gn = &ginv * &np;
            let r = if k > 0 {
                let nmat = DMatrix::from_fn(n, k, |i, c| nn(act[c], &flip).0[i]);
                let gnm = &ginv * &nmat;
                let mmat = nmat.transpose() * &gnm;
                let rhs_r = nmat.transpose() * &gn;
                match mmat.clone().cholesky() {
                    Some(c) => c.solve(&rhs_r),
                    None => mmat.lu().solve(&rhs_r).unwrap_or_else(|| DVector::zeros(k)),
                }
            } else {
                DVector::zeros(0)
            };
            let z = if k > 0 {
                let nmat = DMatrix::from_fn(n, k, |i, c| nn(act[c], &flip).0[i]);
                &ginv * (&np - nmat * &r)
            } else {
                gn.clone()
            };
            // Dual step length over active inequalities.
            let mut t1 = f64::INFINITY;
            let mut l = None;
            for c in 0..k {
                if act[c] >= me && r[c] > 1e-12 {
                    let ratio = u[c] / r[c];
                    if ratio < t1 {
                        t1 = ratio;
                        l = Some(c);
                    }
                }
            }
            let s = np.dot(&x) - bp;
            let zn = z.dot(&np);
            let t2 = if z.amax() > 1e-12 * (1.0 + np.amax()) && zn > 0.0 { -s / zn } else { f64::INFINITY };
            if t1.is_infinite() && t2.is_infinite() {
                if s.abs() <= tol_of(bp) * 1e2 && is_eq {
                    break; // dependent equality already satisfied
                }
                return QpSolution::failed(n, mi, me, QpStatus::Infeasible, iters);
            }
            if t2.is_infinite() {
                for c in 0..k {
                    u[c] -= t1 * r[c];
                }
                up += t1;
                let l = l.unwrap();
                act.remove(l);
                u.remove(l);
                continue;
            }
            let t = t1.min(t2);
            x += &z * t;
            for c in 0..k {
                u[c] -= t * r[c];
            }
            up += t;
            if t2 <= t1 {
                act.push(p);
                u.push(up);
                break;
            }
            let l = l.unwrap();
            act.remove(l);
            u.remove(l);
        }
    }

    let mut lam = DVector::zeros(mi);
    let mut mu = DVector::zeros(me);
    for (c, &j) in act.iter().enumerate() {
        if j < me {
            mu[j] = flip[j] * u[c];
        } else {
            lam[j - me] = u[c].max(0.0);
        }
    }
    let (primal, dual, comp) = kkt_residuals(prob, &x, &lam, &mu);
    let mut active: Vec<usize> = act.iter().filter(|&&j| j >= me).map(|&j| j - me).collect();
    active.sort_unstable();
    QpSolution {
        objective: prob.objective(&x),
        status: QpStatus::Optimal,
        iterations: iters,
        primal_residual: primal,
        dual_residual: dual,
        complementarity: comp,
        lambda_ineq: lam,
        lambda_eq: mu,
        active,
        x,
    }
}
