//! Discrete-time LTI realisations, area partitions and selection matrices.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::serial;

#[derive(Debug, Error, PartialEq)]
pub enum LinsysError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid partition: {0}")]
    Partition(String),
    #[error("index {index} out of range for ambient dimension {ambient}")]
    OutOfRange { index: usize, ambient: usize },
}

fn check(ok: bool, what: impl FnOnce() -> String) -> Result<(), LinsysError> {
    if ok {
        Ok(())
    } else {
        Err(LinsysError::Dimension(what()))
    }
}

/// Realisation `x+ = A x + B_u u + B_d d`, `y = C x + D_u u + D_d d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateSpace {
    #[serde(with = "serial::mat")]
    pub a: DMatrix<f64>,
    #[serde(with = "serial::mat")]
    pub b_u: DMatrix<f64>,
    #[serde(with = "serial::mat")]
    pub b_d: DMatrix<f64>,
    #[serde(with = "serial::mat")]
    pub c: DMatrix<f64>,
    #[serde(with = "serial::mat")]
    pub d_u: DMatrix<f64>,
    #[serde(with = "serial::mat")]
    pub d_d: DMatrix<f64>,
}

impl StateSpace {
    pub fn new(
        a: DMatrix<f64>,
        b_u: DMatrix<f64>,
        b_d: DMatrix<f64>,
        c: DMatrix<f64>,
        d_u: DMatrix<f64>,
        d_d: DMatrix<f64>,
    ) -> Result<Self, LinsysError> {
        let sys = StateSpace { a, b_u, b_d, c, d_u, d_d };
        sys.validate()?;
        Ok(sys)
    }

    /// Network form: full state output, no feedthrough.
    pub fn network(a: DMatrix<f64>, b_u: DMatrix<f64>, b_d: DMatrix<f64>) -> Result<Self, LinsysError> {
        let n = a.nrows();
        let (nu, nd) = (b_u.ncols(), b_d.ncols());
        Self::new(a, b_u, b_d, DMatrix::identity(n, n), DMatrix::zeros(n, nu), DMatrix::zeros(n, nd))
    }

    pub fn validate(&self) -> Result<(), LinsysError> {
        let n = self.a.nrows();
        check(n >= 1, || "state dimension must be at least 1".into())?;
        check(self.a.ncols() == n, || format!("A is {}x{}", n, self.a.ncols()))?;
        check(self.b_u.nrows() == n, || format!("B_u has {} rows, expected {n}", self.b_u.nrows()))?;
        check(self.b_d.nrows() == n, || format!("B_d has {} rows, expected {n}", self.b_d.nrows()))?;
        check(self.c.ncols() == n, || format!("C has {} columns, expected {n}", self.c.ncols()))?;
        let ny = self.c.nrows();
        check(self.d_u.shape() == (ny, self.n_u()), || format!("D_u is {:?}", self.d_u.shape()))?;
        check(self.d_d.shape() == (ny, self.n_d()), || format!("D_d is {:?}", self.d_d.shape()))?;
        for (name, m) in [("A", &self.a), ("B_u", &self.b_u), ("B_d", &self.b_d), ("C", &self.c)] {
            check(m.iter().all(|v| v.is_finite()), || format!("{name} has non-finite entries"))?;
        }
        Ok(())
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_u(&self) -> usize {
        self.b_u.ncols()
    }
    pub fn n_d(&self) -> usize {
        self.b_d.ncols()
    }
    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }

    pub fn is_network_form(&self) -> bool {
        let n = self.n_x();
        self.c == DMatrix::identity(n, n)
            && self.d_u.iter().all(|v| *v == 0.0)
            && self.d_d.iter().all(|v| *v == 0.0)
    }

    /// One step of the recursion, returning `(x_next, y)`.
    pub fn simulate_step(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        d: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>), LinsysError> {
        check(x.len() == self.n_x(), || format!("x has length {}, expected {}", x.len(), self.n_x()))?;
        check(u.len() == self.n_u(), || format!("u has length {}, expected {}", u.len(), self.n_u()))?;
        check(d.len() == self.n_d(), || format!("d has length {}, expected {}", d.len(), self.n_d()))?;
        let xn = &self.a * x + &self.b_u * u + &self.b_d * d;
        let y = &self.c * x + &self.d_u * u + &self.d_d * d;
        Ok((xn, y))
    }

    /// Zero-initial-state response to the `u` channel over `horizon` samples.
    /// Missing inputs past the end of `inputs` are taken as zero.
    pub fn forced_response(
        &self,
        inputs: &[DVector<f64>],
        horizon: usize,
    ) -> Result<Vec<DVector<f64>>, LinsysError> {
        for (k, u) in inputs.iter().enumerate() {
            check(u.len() == self.n_u(), || format!("input {k} has length {}", u.len()))?;
        }
        let zero = DVector::zeros(self.n_u());
        let mut x = DVector::zeros(self.n_x());
        let mut out = Vec::with_capacity(horizon);
        for k in 0..horizon {
            let u = inputs.get(k).unwrap_or(&zero);
            out.push(&self.c * &x + &self.d_u * u);
            x = &self.a * &x + &self.b_u * u;
        }
        Ok(out)
    }
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> Result<f64, LinsysError> {
    check(a.is_square(), || format!("matrix is {}x{}", a.nrows(), a.ncols()))?;
    if a.nrows() == 0 {
        return Ok(0.0);
    }
    let eig = a.clone().complex_eigenvalues();
    Ok(eig.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Ordered list of standard basis columns of an ambient space.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionMatrix {
    pub indices: Vec<usize>,
    pub ambient: usize,
}

impl SelectionMatrix {
    pub fn new(indices: Vec<usize>, ambient: usize) -> Result<Self, LinsysError> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= ambient) {
            return Err(LinsysError::OutOfRange { index: bad, ambient });
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LinsysError::Dimension("selection indices must be strictly ascending".into()));
        }
        Ok(SelectionMatrix { indices, ambient })
    }

    pub fn range(offset: usize, len: usize, ambient: usize) -> Result<Self, LinsysError> {
        Self::new((offset..offset + len).collect(), ambient)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// `S` as an ambient × len matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.ambient, self.len());
        for (c, &r) in self.indices.iter().enumerate() {
            s[(r, c)] = 1.0;
        }
        s
    }

    /// `Sᵀ v`.
    pub fn select(&self, v: &DVector<f64>) -> Result<DVector<f64>, LinsysError> {
        check(v.len() == self.ambient, || format!("vector length {} vs ambient {}", v.len(), self.ambient))?;
        Ok(DVector::from_iterator(self.len(), self.indices.iter().map(|&i| v[i])))
    }

    /// `S v`.
    pub fn embed(&self, v: &DVector<f64>) -> Result<DVector<f64>, LinsysError> {
        check(v.len() == self.len(), || format!("vector length {} vs selection {}", v.len(), self.len()))?;
        let mut out = DVector::zeros(self.ambient);
        for (c, &i) in self.indices.iter().enumerate() {
            out[i] = v[c];
        }
        Ok(out)
    }

    /// Rows of `m` picked by this selection.
    pub fn rows_of(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        m.select_rows(self.indices.iter())
    }

    /// Columns of `m` picked by this selection.
    pub fn cols_of(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        m.select_columns(self.indices.iter())
    }
}

/// Contiguous state/input blocks per area plus the neighborhood graph.
/// Indices are 0-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AreaPartition {
    pub n_x: usize,
    pub n_u: usize,
    pub x_sizes: Vec<usize>,
    pub u_sizes: Vec<usize>,
    pub neighbors: Vec<Vec<usize>>,
}

impl AreaPartition {
    /// Partition with trivial neighborhoods `N_i = {i}`.
    pub fn new(n_x: usize, n_u: usize, sizes: &[(usize, usize)]) -> Result<Self, LinsysError> {
        let neighbors = (0..sizes.len()).map(|i| vec![i]).collect();
        Self::with_neighbors(n_x, n_u, sizes, neighbors)
    }

    pub fn with_neighbors(
        n_x: usize,
        n_u: usize,
        sizes: &[(usize, usize)],
        neighbors: Vec<Vec<usize>>,
    ) -> Result<Self, LinsysError> {
        let p = AreaPartition {
            n_x,
            n_u,
            x_sizes: sizes.iter().map(|s| s.0).collect(),
            u_sizes: sizes.iter().map(|s| s.1).collect(),
            neighbors,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), LinsysError> {
        let err = |m: String| Err(LinsysError::Partition(m));
        let n = self.x_sizes.len();
        if n == 0 || self.u_sizes.len() != n {
            return err("area count must be positive and consistent".into());
        }
        if self.x_sizes.iter().chain(&self.u_sizes).any(|&s| s == 0) {
            return err("every area needs at least one state and one input".into());
        }
        if self.x_sizes.iter().sum::<usize>() != self.n_x {
            return err(format!("state sizes sum to {}, expected {}", self.x_sizes.iter().sum::<usize>(), self.n_x));
        }
        if self.u_sizes.iter().sum::<usize>() != self.n_u {
            return err(format!("input sizes sum to {}, expected {}", self.u_sizes.iter().sum::<usize>(), self.n_u));
        }
        if self.neighbors.len() != n {
            return err("one neighborhood per area required".into());
        }
        for (i, nb) in self.neighbors.iter().enumerate() {
            if !nb.contains(&i) {
                return err(format!("area {i} is missing from its own neighborhood"));
            }
            if nb.iter().any(|&j| j >= n) || nb.windows(2).any(|w| w[0] >= w[1]) {
                return err(format!("neighborhood of area {i} must be ascending area ids"));
            }
        }
        Ok(())
    }

    pub fn n_areas(&self) -> usize {
        self.x_sizes.len()
    }

    pub fn x_offset(&self, i: usize) -> usize {
        self.x_sizes[..i].iter().sum()
    }

    pub fn u_offset(&self, i: usize) -> usize {
        self.u_sizes[..i].iter().sum()
    }

    pub fn x_range(&self, i: usize) -> std::ops::Range<usize> {
        let o = self.x_offset(i);
        o..o + self.x_sizes[i]
    }

    pub fn u_range(&self, i: usize) -> std::ops::Range<usize> {
        let o = self.u_offset(i);
        o..o + self.u_sizes[i]
    }

    pub fn s_x(&self, i: usize) -> SelectionMatrix {
        SelectionMatrix { indices: self.x_range(i).collect(), ambient: self.n_x }
    }

    pub fn s_u(&self, i: usize) -> SelectionMatrix {
        SelectionMatrix { indices: self.u_range(i).collect(), ambient: self.n_u }
    }

    pub fn area_of_x(&self, idx: usize) -> usize {
        (0..self.n_areas()).find(|&i| self.x_range(i).contains(&idx)).expect("state index in range")
    }

    pub fn area_of_u(&self, idx: usize) -> usize {
        (0..self.n_areas()).find(|&i| self.u_range(i).contains(&idx)).expect("input index in range")
    }

    /// Areas whose neighborhood contains `j`.
    pub fn receivers_of(&self, j: usize) -> Vec<usize> {
        (0..self.n_areas()).filter(|&i| self.neighbors[i].contains(&j)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn footnote_partition() {
        let p = AreaPartition::new(12, 7, &[(2, 1), (3, 2), (6, 2), (1, 2)]).unwrap();
        let xs: Vec<_> = (0..4).map(|i| p.x_range(i)).collect();
        let us: Vec<_> = (0..4).map(|i| p.u_range(i)).collect();
        assert_eq!(xs, vec![0..2, 2..5, 5..11, 11..12]);
        assert_eq!(us, vec![0..1, 1..3, 3..5, 5..7]);
        for i in 1..4 {
            assert_eq!(p.x_offset(i), p.x_offset(i - 1) + p.x_sizes[i - 1]);
            assert_eq!(p.u_offset(i), p.u_offset(i - 1) + p.u_sizes[i - 1]);
        }
    }

    #[test]
    fn partition_rejects_bad_sums() {
        assert!(AreaPartition::new(5, 2, &[(2, 1), (2, 1)]).is_err());
        assert!(AreaPartition::with_neighbors(2, 2, &[(1, 1), (1, 1)], vec![vec![1], vec![1]]).is_err());
    }

    #[test]
    fn select_and_embed() {
        let p = AreaPartition::new(12, 7, &[(2, 1), (3, 2), (6, 2), (1, 2)]).unwrap();
        let v = DVector::from_fn(12, |i, _| (i + 1) as f64);
        let s = p.s_x(1);
        assert_eq!(s.select(&v).unwrap().as_slice(), &[3.0, 4.0, 5.0]);
        let sub = s.select(&v).unwrap();
        assert_eq!(s.select(&s.embed(&sub).unwrap()).unwrap(), sub);
        let total = (0..4).fold(DVector::zeros(12), |acc, i| {
            let s = p.s_x(i);
            acc + s.embed(&s.select(&v).unwrap()).unwrap()
        });
        assert_eq!(total, v);
        assert_eq!(s.matrix().transpose() * &v, sub);
    }

    #[test]
    fn selection_out_of_range() {
        assert_eq!(
            SelectionMatrix::new(vec![0, 4], 3),
            Err(LinsysError::OutOfRange { index: 4, ambient: 3 })
        );
    }

    #[test]
    fn spectral_radius_basic() {
        assert!((spectral_radius(&DMatrix::identity(3, 3)).unwrap() - 1.0).abs() < 1e-12);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, -0.9]));
        assert!((spectral_radius(&d).unwrap() - 0.9).abs() < 1e-12);
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -0.8, 0.8, 0.0]);
        assert!((spectral_radius(&rot).unwrap() - 0.8).abs() < 1e-12);
        assert!(spectral_radius(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn identity_dynamics_step() {
        let sys = StateSpace::network(DMatrix::identity(2, 2), DMatrix::zeros(2, 1), DMatrix::zeros(2, 1)).unwrap();
        let x = DVector::from_vec(vec![1.0, 2.0]);
        let (xn, y) = sys
            .simulate_step(&x, &DVector::from_vec(vec![3.0]), &DVector::from_vec(vec![-1.0]))
            .unwrap();
        assert_eq!(xn, x);
        assert_eq!(y, x);
        assert!(sys.is_network_form());
        assert!(sys.simulate_step(&DVector::zeros(3), &DVector::zeros(1), &DVector::zeros(1)).is_err());
    }

    #[test]
    fn geometric_forced_response() {
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        let sys = StateSpace::new(one(0.5), one(1.0), DMatrix::zeros(1, 0), one(1.0), one(0.0), DMatrix::zeros(1, 0))
            .unwrap();
        let u = vec![DVector::from_element(1, 1.0); 60];
        let y = sys.forced_response(&u, 60).unwrap();
        assert_eq!(y[0][0], 0.0);
        for (k, yk) in y.iter().enumerate() {
            let expect = 2.0 * (1.0 - 0.5f64.powi(k as i32));
            assert!((yk[0] - expect).abs() < 1e-14);
        }
    }
}
