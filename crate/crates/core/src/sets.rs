//! Boxes, zonotopes and H-polytopes with exact support-function calculus.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optim::{solve_lp, QpProblem, QpStatus, SolverSettings};
use crate::serial;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SetError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("set is empty")]
    Empty,
    #[error("support is unbounded")]
    Unbounded,
    #[error("LP backend stopped with status {0:?}")]
    Lp(QpStatus),
    #[error("invalid set: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetSettings {
    pub eps_mem: f64,
    pub lp: SolverSettings,
    /// Above this many generators a zonotope is replaced by its interval hull.
    pub generator_cap: Option<usize>,
}

impl Default for SetSettings {
    fn default() -> Self {
        SetSettings { eps_mem: 1e-9, lp: SolverSettings::default(), generator_cap: None }
    }
}

fn dim_check(a: usize, b: usize, what: &str) -> Result<(), SetError> {
    if a == b {
        Ok(())
    } else {
        Err(SetError::Dimension(format!("{what}: {a} vs {b}")))
    }
}

/// Axis-aligned box; a zero half-width pins that coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    #[serde(with = "serial::vector")]
    pub center: DVector<f64>,
    #[serde(with = "serial::vector", rename = "halfwidths")]
    pub half: DVector<f64>,
}

impl BoxSet {
    pub fn new(center: DVector<f64>, half: DVector<f64>) -> Result<Self, SetError> {
        dim_check(center.len(), half.len(), "box center/half-widths")?;
        if center.is_empty() {
            return Err(SetError::Invalid("box dimension must be at least 1".into()));
        }
        if half.iter().any(|h| *h < 0.0 || !h.is_finite()) || center.iter().any(|c| !c.is_finite()) {
            return Err(SetError::Invalid("box half-widths must be finite and nonnegative".into()));
        }
        Ok(BoxSet { center, half })
    }

    pub fn from_bounds(lo: &[f64], hi: &[f64]) -> Result<Self, SetError> {
        dim_check(lo.len(), hi.len(), "box bounds")?;
        if lo.iter().zip(hi).any(|(l, h)| l > h) {
            return Err(SetError::Invalid("lower bound above upper bound".into()));
        }
        let c = DVector::from_iterator(lo.len(), lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)));
        let r = DVector::from_iterator(lo.len(), lo.iter().zip(hi).map(|(l, h)| 0.5 * (h - l)));
        Self::new(c, r)
    }

    pub fn symmetric(half: &[f64]) -> Self {
        BoxSet { center: DVector::zeros(half.len()), half: DVector::from_row_slice(half) }
    }

    pub fn point(p: DVector<f64>) -> Self {
        let n = p.len();
        BoxSet { center: p, half: DVector::zeros(n) }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn lo(&self) -> DVector<f64> {
        &self.center - &self.half
    }

    pub fn hi(&self) -> DVector<f64> {
        &self.center + &self.half
    }

    pub fn support(&self, d: &DVector<f64>) -> Result<f64, SetError> {
        dim_check(d.len(), self.dim(), "support direction")?;
        Ok(d.dot(&self.center) + d.abs().dot(&self.half))
    }

    pub fn contains(&self, p: &DVector<f64>, eps: f64) -> bool {
        p.len() == self.dim()
            && (0..self.dim()).all(|i| (p[i] - self.center[i]).abs() <= self.half[i] + eps * (1.0 + self.center[i].abs()))
    }

    /// Box sum, which stays a box.
    pub fn sum(&self, other: &BoxSet) -> Result<BoxSet, SetError> {
        dim_check(self.dim(), other.dim(), "box sum")?;
        Ok(BoxSet { center: &self.center + &other.center, half: &self.half + &other.half })
    }

    /// Box Pontryagin difference; `None` when empty.
    pub fn erode(&self, other: &BoxSet) -> Result<Option<BoxSet>, SetError> {
        dim_check(self.dim(), other.dim(), "box difference")?;
        let half = &self.half - &other.half;
        if half.iter().any(|h| *h < 0.0) {
            return Ok(None);
        }
        Ok(Some(BoxSet { center: &self.center - &other.center, half }))
    }

    /// Coordinates `idx` of the box.
    pub fn slice(&self, idx: &[usize]) -> BoxSet {
        BoxSet {
            center: DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.center[i])),
            half: DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.half[i])),
        }
    }

    pub fn product(&self, other: &BoxSet) -> BoxSet {
        BoxSet {
            center: DVector::from_iterator(self.dim() + other.dim(), self.center.iter().chain(other.center.iter()).copied()),
            half: DVector::from_iterator(self.dim() + other.dim(), self.half.iter().chain(other.half.iter()).copied()),
        }
    }

    pub fn to_zonotope(&self) -> Zonotope {
        Zonotope { center: self.center.clone(), generators: DMatrix::from_diagonal(&self.half) }
    }

    pub fn to_hpolytope(&self) -> HPolytope {
        let n = self.dim();
        let mut h = DMatrix::zeros(2 * n, n);
        let mut rhs = DVector::zeros(2 * n);
        for i in 0..n {
            h[(2 * i, i)] = 1.0;
            h[(2 * i + 1, i)] = -1.0;
            rhs[2 * i] = self.center[i] + self.half[i];
            rhs[2 * i + 1] = -(self.center[i] - self.half[i]);
        }
        HPolytope { h, rhs }
    }

    pub fn corners(&self) -> Vec<DVector<f64>> {
        self.to_zonotope().vertex_candidates()
    }
}

/// `{c + G λ : ‖λ‖∞ ≤ 1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Zonotope {
    #[serde(with = "serial::vector")]
    pub center: DVector<f64>,
    #[serde(with = "serial::mat")]
    pub generators: DMatrix<f64>,
}

impl Zonotope {
    pub fn new(center: DVector<f64>, generators: DMatrix<f64>) -> Result<Self, SetError> {
        dim_check(center.len(), generators.nrows(), "zonotope center/generators")?;
        Ok(Zonotope { center, generators })
    }

    pub fn zero(n: usize) -> Self {
        Zonotope { center: DVector::zeros(n), generators: DMatrix::zeros(n, 0) }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn n_generators(&self) -> usize {
        self.generators.ncols()
    }

    pub fn support(&self, d: &DVector<f64>) -> Result<f64, SetError> {
        dim_check(d.len(), self.dim(), "support direction")?;
        let proj = self.generators.tr_mul(d);
        Ok(d.dot(&self.center) + proj.iter().map(|v| v.abs()).sum::<f64>())
    }

    pub fn linear_image(&self, m: &DMatrix<f64>) -> Result<Zonotope, SetError> {
        dim_check(m.ncols(), self.dim(), "linear image")?;
        Ok(Zonotope { center: m * &self.center, generators: m * &self.generators })
    }

    pub fn minkowski_sum(&self, other: &Zonotope) -> Result<Zonotope, SetError> {
        dim_check(self.dim(), other.dim(), "Minkowski sum")?;
        let g = self.n_generators() + other.n_generators();
        let mut gen = DMatrix::zeros(self.dim(), g);
        gen.columns_mut(0, self.n_generators()).copy_from(&self.generators);
        gen.columns_mut(self.n_generators(), other.n_generators()).copy_from(&other.generators);
        Ok(Zonotope { center: &self.center + &other.center, generators: gen })
    }

    pub fn negate(&self) -> Zonotope {
        Zonotope { center: -&self.center, generators: self.generators.clone() }
    }

    pub fn product(&self, other: &Zonotope) -> Zonotope {
        let (n1, n2) = (self.dim(), other.dim());
        let (g1, g2) = (self.n_generators(), other.n_generators());
        let mut gen = DMatrix::zeros(n1 + n2, g1 + g2);
        gen.view_mut((0, 0), (n1, g1)).copy_from(&self.generators);
        gen.view_mut((n1, g1), (n2, g2)).copy_from(&other.generators);
        Zonotope {
            center: DVector::from_iterator(n1 + n2, self.center.iter().chain(other.center.iter()).copied()),
            generators: gen,
        }
    }

    /// Smallest enclosing box.
    pub fn interval_hull(&self) -> BoxSet {
        let half = DVector::from_fn(self.dim(), |i, _| self.generators.row(i).iter().map(|v| v.abs()).sum());
        BoxSet { center: self.center.clone(), half }
    }

    /// Applies the generator cap, falling back to the interval hull.
    pub fn capped(self, cap: Option<usize>) -> Zonotope {
        match cap {
            Some(c) if self.n_generators() > c => self.interval_hull().to_zonotope(),
            _ => self,
        }
    }

    /// Drops zero generators and merges parallel ones.
    pub fn simplified(&self) -> Zonotope {
        let n = self.dim();
        let mut kept: Vec<DVector<f64>> = Vec::new();
        for g in self.generators.column_iter() {
            let g = g.into_owned();
            let norm = g.norm();
            if norm <= 1e-14 {
                continue;
            }
            let dir = &g / norm;
            let mut merged = false;
            for k in kept.iter_mut() {
                let kn = k.norm();
                let kd = &*k / kn;
                let c = kd.dot(&dir);
                if (c.abs() - 1.0).abs() < 1e-12 && (&kd - &dir * c.signum()).amax() < 1e-12 {
                    *k = &kd * (kn + norm);
                    merged = true;
                    break;
                }
            }
            if !merged {
                kept.push(g);
            }
        }
        let mut gen = DMatrix::zeros(n, kept.len());
        for (j, g) in kept.iter().enumerate() {
            gen.set_column(j, g);
        }
        Zonotope { center: self.center.clone(), generators: gen }
    }

    /// Points of the zonotope containing every vertex.
    pub fn vertex_candidates(&self) -> Vec<DVector<f64>> {
        let z = self.simplified();
        let g = z.n_generators();
        let n = z.dim();
        let mut signs: Vec<Vec<f64>> = Vec::new();
        if g <= 14 || n == 0 {
            for mask in 0..(1u64 << g) {
                signs.push((0..g).map(|j| if mask >> j & 1 == 1 { 1.0 } else { -1.0 }).collect());
            }
        } else {
            // Vertices arise from directions normal to n-1 generators.
            let gens = &z.generators;
            let mut seen = std::collections::BTreeSet::new();
            let mut subset: Vec<usize> = (0..n.saturating_sub(1)).collect();
            loop {
                let normal = if n == 1 {
                    Some(DVector::from_element(1, 1.0))
                } else {
                    let sub = gens.select_columns(subset.iter()).transpose();
                    let svd = sub.clone().svd(false, true);
                    let vt = svd.v_t.unwrap();
                    let rank = svd.singular_values.iter().filter(|s| **s > 1e-10).count();
                    (rank == n - 1).then(|| {
                        // Orthogonal complement of the row space.
                        let mut v = DVector::from_element(n, 0.0);
                        let mut best = 0.0;
                        for e in 0..n {
                            let mut cand = DVector::zeros(n);
                            cand[e] = 1.0;
                            for r in 0..rank {
                                let row = vt.row(r).transpose();
                                let proj = row.dot(&cand);
                                cand -= row * proj;
                            }
                            if cand.norm() > best {
                                best = cand.norm();
                                v = cand;
                            }
                        }
                        v / best
                    })
                };
                if let Some(nrm) = normal {
                    let proj = gens.tr_mul(&nrm);
                    let free: Vec<usize> = (0..g).filter(|&j| proj[j].abs() <= 1e-12).collect();
                    for side in [1.0, -1.0] {
                        for mask in 0..(1u64 << free.len().min(16)) {
                            let mut s: Vec<i8> = (0..g).map(|j| if side * proj[j] > 0.0 { 1 } else { -1 }).collect();
                            for (b, &j) in free.iter().enumerate().take(16) {
                                s[j] = if mask >> b & 1 == 1 { 1 } else { -1 };
                            }
                            seen.insert(s);
                        }
                    }
                }
                // Next combination.
                let k = subset.len();
                let mut i = k;
                while i > 0 && subset[i - 1] == g - k + i - 1 {
                    i -= 1;
                }
                if i == 0 {
                    break;
                }
                subset[i - 1] += 1;
                for j in i..k {
                    subset[j] = subset[j - 1] + 1;
                }
            }
            signs = seen.into_iter().map(|s| s.into_iter().map(f64::from).collect()).collect();
        }
        let mut out: Vec<DVector<f64>> = Vec::with_capacity(signs.len());
        for s in signs {
            let p = &z.center + &z.generators * DVector::from_vec(s);
            if !out.iter().any(|q| (q - &p).amax() <= 1e-13 * (1.0 + p.amax())) {
                out.push(p);
            }
        }
        out
    }
}

impl From<BoxSet> for Zonotope {
    fn from(b: BoxSet) -> Self {
        b.to_zonotope()
    }
}

/// `{v : H v ≤ h}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HPolytope {
    #[serde(with = "serial::mat", rename = "H")]
    pub h: DMatrix<f64>,
    #[serde(with = "serial::vector", rename = "h")]
    pub rhs: DVector<f64>,
}

impl HPolytope {
    pub fn new(h: DMatrix<f64>, rhs: DVector<f64>) -> Result<Self, SetError> {
        dim_check(h.nrows(), rhs.len(), "H rows vs h")?;
        if h.iter().chain(rhs.iter()).any(|v| !v.is_finite()) {
            return Err(SetError::Invalid("non-finite halfspace data".into()));
        }
        Ok(HPolytope { h, rhs })
    }

    pub fn dim(&self) -> usize {
        self.h.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.h.nrows()
    }

    pub fn support(&self, d: &DVector<f64>, settings: &SetSettings) -> Result<f64, SetError> {
        dim_check(d.len(), self.dim(), "support direction")?;
        let sol = solve_lp(&QpProblem::lp(-d, self.h.clone(), self.rhs.clone()), &settings.lp);
        match sol.status {
            QpStatus::Optimal => Ok(-sol.objective),
            QpStatus::Infeasible => Err(SetError::Empty),
            QpStatus::Unbounded => {
                if self.is_empty(settings) {
                    Err(SetError::Empty)
                } else {
                    Err(SetError::Unbounded)
                }
            }
            s => Err(SetError::Lp(s)),
        }
    }

    pub fn is_empty(&self, settings: &SetSettings) -> bool {
        let sol = solve_lp(&QpProblem::lp(DVector::zeros(self.dim()), self.h.clone(), self.rhs.clone()), &settings.lp);
        sol.status == QpStatus::Infeasible
    }

    pub fn contains(&self, p: &DVector<f64>, eps: f64) -> bool {
        p.len() == self.dim() && {
            let v = &self.h * p;
            (0..self.n_rows()).all(|r| v[r] <= self.rhs[r] + eps * (1.0 + self.rhs[r].abs()))
        }
    }

    /// Rows `r` with their right sides shifted by `-offset[r]`.
    pub fn shifted(&self, offset: &DVector<f64>) -> HPolytope {
        HPolytope { h: self.h.clone(), rhs: &self.rhs - offset }
    }

    pub fn intersect(&self, other: &HPolytope) -> Result<HPolytope, SetError> {
        dim_check(self.dim(), other.dim(), "intersection")?;
        let (m1, m2) = (self.n_rows(), other.n_rows());
        let mut h = DMatrix::zeros(m1 + m2, self.dim());
        h.rows_mut(0, m1).copy_from(&self.h);
        h.rows_mut(m1, m2).copy_from(&other.h);
        let rhs = DVector::from_iterator(m1 + m2, self.rhs.iter().chain(other.rhs.iter()).copied());
        Ok(HPolytope { h, rhs })
    }

    pub fn product(&self, other: &HPolytope) -> HPolytope {
        let (m1, m2) = (self.n_rows(), other.n_rows());
        let (n1, n2) = (self.dim(), other.dim());
        let mut h = DMatrix::zeros(m1 + m2, n1 + n2);
        h.view_mut((0, 0), (m1, n1)).copy_from(&self.h);
        h.view_mut((m1, n1), (m2, n2)).copy_from(&other.h);
        let rhs = DVector::from_iterator(m1 + m2, self.rhs.iter().chain(other.rhs.iter()).copied());
        HPolytope { h, rhs }
    }

    /// Tightest enclosing box, or an error if empty/unbounded.
    pub fn bounding_box(&self, settings: &SetSettings) -> Result<BoxSet, SetError> {
        let n = self.dim();
        let mut lo = vec![0.0; n];
        let mut hi = vec![0.0; n];
        for i in 0..n {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            hi[i] = self.support(&e, settings)?;
            lo[i] = -self.support(&-e, settings)?;
        }
        let hi: Vec<f64> = hi.iter().zip(&lo).map(|(h, l)| h.max(*l)).collect();
        BoxSet::from_bounds(&lo, &hi)
    }
}

/// Any supported set representation; the serialised `type` tag selects it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Set {
    Box(BoxSet),
    Zonotope(Zonotope),
    Polytope(HPolytope),
}

impl Set {
    pub fn dim(&self) -> usize {
        match self {
            Set::Box(b) => b.dim(),
            Set::Zonotope(z) => z.dim(),
            Set::Polytope(p) => p.dim(),
        }
    }

    pub fn support(&self, d: &DVector<f64>, settings: &SetSettings) -> Result<f64, SetError> {
        match self {
            Set::Box(b) => b.support(d),
            Set::Zonotope(z) => z.support(d),
            Set::Polytope(p) => p.support(d, settings),
        }
    }

    pub fn contains(&self, p: &DVector<f64>, settings: &SetSettings) -> Result<bool, SetError> {
        match self {
            Set::Box(b) => Ok(b.contains(p, settings.eps_mem)),
            Set::Polytope(h) => Ok(h.contains(p, settings.eps_mem)),
            Set::Zonotope(z) => member_of_minkowski_sum(
                p,
                &[(DMatrix::identity(z.dim(), z.dim()), Set::Zonotope(z.clone()))],
                settings,
            ),
        }
    }

    pub fn is_empty(&self, settings: &SetSettings) -> bool {
        match self {
            Set::Polytope(p) => p.is_empty(settings),
            _ => false,
        }
    }

    /// Zonotope view of a bounded, generator-form set.
    pub fn as_zonotope(&self) -> Option<Zonotope> {
        match self {
            Set::Box(b) => Some(b.to_zonotope()),
            Set::Zonotope(z) => Some(z.clone()),
            Set::Polytope(_) => None,
        }
    }

    pub fn to_hpolytope(&self) -> Option<HPolytope> {
        match self {
            Set::Box(b) => Some(b.to_hpolytope()),
            Set::Polytope(p) => Some(p.clone()),
            Set::Zonotope(_) => None,
        }
    }
}

impl From<BoxSet> for Set {
    fn from(b: BoxSet) -> Self {
        Set::Box(b)
    }
}
impl From<Zonotope> for Set {
    fn from(z: Zonotope) -> Self {
        Set::Zonotope(z)
    }
}
impl From<HPolytope> for Set {
    fn from(p: HPolytope) -> Self {
        Set::Polytope(p)
    }
}

pub fn support(set: &Set, d: &DVector<f64>, settings: &SetSettings) -> Result<f64, SetError> {
    set.support(d, settings)
}

pub fn minkowski_sum(a: &Set, b: &Set) -> Result<Zonotope, SetError> {
    let za = a.as_zonotope().ok_or_else(|| SetError::Invalid("Minkowski sum needs generator-form sets".into()))?;
    let zb = b.as_zonotope().ok_or_else(|| SetError::Invalid("Minkowski sum needs generator-form sets".into()))?;
    za.minkowski_sum(&zb)
}

/// Exact `minuend ⊖ subtrahend`; the result may be empty.
pub fn pontryagin_diff(minuend: &HPolytope, subtrahend: &Set) -> Result<HPolytope, SetError> {
    dim_check(minuend.dim(), subtrahend.dim(), "Pontryagin difference")?;
    let z = subtrahend
        .as_zonotope()
        .ok_or_else(|| SetError::Invalid("subtrahend must be a box or zonotope".into()))?;
    let off = DVector::from_fn(minuend.n_rows(), |r, _| {
        z.support(&minuend.h.row(r).transpose()).expect("dimension checked")
    });
    Ok(minuend.shifted(&off))
}

pub fn linear_image(m: &DMatrix<f64>, set: &Set) -> Result<Zonotope, SetError> {
    set.as_zonotope()
        .ok_or_else(|| SetError::Invalid("linear image needs a generator-form set".into()))?
        .linear_image(m)
}

pub fn product(a: &Set, b: &Set) -> Set {
    match (a, b) {
        (Set::Box(x), Set::Box(y)) => Set::Box(x.product(y)),
        (Set::Polytope(_), _) | (_, Set::Polytope(_)) => {
            let pa = a.to_hpolytope().unwrap_or_else(|| a.as_zonotope().unwrap().interval_hull().to_hpolytope());
            let pb = b.to_hpolytope().unwrap_or_else(|| b.as_zonotope().unwrap().interval_hull().to_hpolytope());
            Set::Polytope(pa.product(&pb))
        }
        _ => Set::Zonotope(a.as_zonotope().unwrap().product(&b.as_zonotope().unwrap())),
    }
}

/// Decides `point ∈ ⊕_j M_j S_j` with one feasibility LP.
pub fn member_of_minkowski_sum(
    point: &DVector<f64>,
    terms: &[(DMatrix<f64>, Set)],
    settings: &SetSettings,
) -> Result<bool, SetError> {
    let n = point.len();
    let mut nvar = 0;
    let mut nineq = 0;
    for (m, s) in terms {
        dim_check(m.nrows(), n, "summand image rows")?;
        dim_check(m.ncols(), s.dim(), "summand image columns")?;
        match s {
            Set::Box(b) => {
                nvar += b.dim();
                nineq += 2 * b.dim();
            }
            Set::Zonotope(z) => {
                nvar += z.n_generators();
                nineq += 2 * z.n_generators();
            }
            Set::Polytope(p) => {
                nvar += p.dim();
                nineq += p.n_rows();
            }
        }
    }
    let mut a_eq = DMatrix::zeros(n, nvar);
    let mut b_eq = point.clone();
    let mut a_in = DMatrix::zeros(nineq, nvar);
    let mut b_in = DVector::zeros(nineq);
    let (mut col, mut row) = (0, 0);
    for (m, s) in terms {
        match s {
            Set::Box(b) => {
                let d = b.dim();
                a_eq.columns_mut(col, d).copy_from(m);
                for i in 0..d {
                    a_in[(row, col + i)] = 1.0;
                    b_in[row] = b.center[i] + b.half[i];
                    a_in[(row + 1, col + i)] = -1.0;
                    b_in[row + 1] = -(b.center[i] - b.half[i]);
                    row += 2;
                }
                col += d;
            }
            Set::Zonotope(z) => {
                let g = z.n_generators();
                b_eq -= m * &z.center;
                a_eq.columns_mut(col, g).copy_from(&(m * &z.generators));
                for j in 0..g {
                    a_in[(row, col + j)] = 1.0;
                    b_in[row] = 1.0;
                    a_in[(row + 1, col + j)] = -1.0;
                    b_in[row + 1] = 1.0;
                    row += 2;
                }
                col += g;
            }
            Set::Polytope(p) => {
                let d = p.dim();
                a_eq.columns_mut(col, d).copy_from(m);
                a_in.view_mut((row, col), (p.n_rows(), d)).copy_from(&p.h);
                b_in.rows_mut(row, p.n_rows()).copy_from(&p.rhs);
                row += p.n_rows();
                col += d;
            }
        }
    }
    if nvar == 0 {
        return Ok(b_eq.amax() <= settings.eps_mem * (1.0 + point.amax()));
    }
    let prob = QpProblem::lp(DVector::zeros(nvar), a_in, b_in).with_eq(a_eq, b_eq);
    let sol = solve_lp(&prob, &settings.lp);
    match sol.status {
        QpStatus::Optimal => Ok(true),
        QpStatus::Infeasible => Ok(false),
        s => Err(SetError::Lp(s)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    #[test]
    fn closed_form_supports() {
        let b = BoxSet::symmetric(&[1.0, 1.0]);
        assert_eq!(b.support(&dv(&[1.0, 1.0])).unwrap(), 2.0);
        let z = Zonotope::new(dv(&[0.0, 0.0]), DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0])).unwrap();
        assert_eq!(z.support(&dv(&[0.0, 1.0])).unwrap(), 1.0);
    }

    #[test]
    fn simplex_support_and_emptiness() {
        let p = HPolytope::new(DMatrix::from_row_slice(3, 2, &[1.0, 1.0, -1.0, 0.0, 0.0, -1.0]), dv(&[1.0, 0.0, 0.0]))
            .unwrap();
        let s = SetSettings::default();
        assert!((p.support(&dv(&[1.0, 0.0]), &s).unwrap() - 1.0).abs() < 1e-12);
        let e = HPolytope::new(DMatrix::from_row_slice(2, 1, &[1.0, -1.0]), dv(&[-1.0, -1.0])).unwrap();
        assert!(e.is_empty(&s));
        assert_eq!(e.support(&dv(&[1.0]), &s), Err(SetError::Empty));
        let half = HPolytope::new(DMatrix::from_row_slice(1, 1, &[-1.0]), dv(&[0.0])).unwrap();
        assert_eq!(half.support(&dv(&[1.0]), &s), Err(SetError::Unbounded));
    }

    #[test]
    fn interval_tightenings() {
        let sum = BoxSet::symmetric(&[5.0]).sum(&BoxSet::symmetric(&[0.01])).unwrap();
        assert_eq!(sum.half[0], 5.01);
        let u = BoxSet::symmetric(&[10.0]).to_hpolytope();
        let t = pontryagin_diff(&u, &Set::Box(sum)).unwrap();
        assert!((t.rhs[0] - 4.99).abs() < 1e-12 && (t.rhs[1] - 4.99).abs() < 1e-12);
    }

    #[test]
    fn one_dimensional_membership() {
        let s = SetSettings::default();
        let one = DMatrix::identity(1, 1);
        let terms = vec![
            (one.clone(), Set::Box(BoxSet::from_bounds(&[0.0], &[2.0]).unwrap())),
            (one.clone(), Set::Box(BoxSet::from_bounds(&[0.0], &[2.0]).unwrap())),
        ];
        assert!(member_of_minkowski_sum(&dv(&[3.0]), &terms, &s).unwrap());
        assert!(member_of_minkowski_sum(&dv(&[4.0]), &terms, &s).unwrap());
        assert!(!member_of_minkowski_sum(&dv(&[5.0]), &terms, &s).unwrap());
        assert!(member_of_minkowski_sum(&dv(&[0.0]), &[], &s).unwrap());
    }

    #[test]
    fn serialisation_records() {
        let sets = vec![
            Set::Box(BoxSet::symmetric(&[0.1, 0.2])),
            Set::Zonotope(Zonotope::new(dv(&[1.0 / 3.0]), DMatrix::from_row_slice(1, 2, &[0.7, 1e-17])).unwrap()),
            Set::Polytope(HPolytope::new(DMatrix::from_row_slice(1, 2, &[1.0, -2.0]), dv(&[0.3])).unwrap()),
        ];
        for s in sets {
            let txt = serde_json::to_string(&s).unwrap();
            let back: Set = serde_json::from_str(&txt).unwrap();
            assert_eq!(back, s, "{txt}");
        }
        let txt = serde_json::to_string(&Set::Box(BoxSet::symmetric(&[1.0]))).unwrap();
        assert!(txt.contains("\"type\":\"box\"") && txt.contains("halfwidths"));
    }

    #[test]
    fn vertex_candidates_cover_square() {
        let z = BoxSet::symmetric(&[1.0, 2.0]).to_zonotope();
        let v = z.vertex_candidates();
        assert_eq!(v.len(), 4);
        let big = Zonotope::new(DVector::zeros(2), DMatrix::from_fn(2, 16, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0 + 0.01 * j as f64))
            .unwrap();
        let cand = big.vertex_candidates();
        // Every direction's maximiser is among the candidates.
        for k in 0..64 {
            let th = k as f64 * 0.1;
            let d = dv(&[th.cos(), th.sin()]);
            let best = cand.iter().map(|p| p.dot(&d)).fold(f64::MIN, f64::max);
            assert!((best - big.support(&d).unwrap()).abs() < 1e-9);
        }
    }
}
