//! Serde helpers storing matrices as row-major nested arrays.

use nalgebra::{DMatrix, DVector};
use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

/// Builds a matrix from rows; `ncols` is needed for matrices with no rows.
pub fn from_rows(rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>, String> {
    let ncols = rows.first().map_or(ncols, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err("ragged matrix rows".into());
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

#[derive(Serialize, Deserialize)]
struct MatRecord {
    rows: Vec<Vec<f64>>,
    #[serde(default)]
    cols: Option<usize>,
}

pub mod mat {
    use super::*;

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        if m.nrows() == 0 {
            MatRecord { rows: vec![], cols: Some(m.ncols()) }.serialize(s)
        } else {
            to_rows(m).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Either {
            Rows(Vec<Vec<f64>>),
            Record(MatRecord),
        }
        match Either::deserialize(d)? {
            Either::Rows(rows) => from_rows(&rows, 0).map_err(D::Error::custom),
            Either::Record(r) => from_rows(&r.rows, r.cols.unwrap_or(0)).map_err(D::Error::custom),
        }
    }
}

pub mod vector {
    use super::*;

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

pub mod mat_list {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
        let recs: Vec<MatRecord> = v
            .iter()
            .map(|m| MatRecord { rows: to_rows(m), cols: Some(m.ncols()) })
            .collect();
        recs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
        Vec::<MatRecord>::deserialize(d)?
            .into_iter()
            .map(|r| from_rows(&r.rows, r.cols.unwrap_or(0)).map_err(D::Error::custom))
            .collect()
    }
}

pub mod vec_list {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[DVector<f64>], s: S) -> Result<S::Ok, S::Error> {
        let raw: Vec<&[f64]> = v.iter().map(|x| x.as_slice()).collect();
        raw.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DVector<f64>>, D::Error> {
        Ok(Vec::<Vec<f64>>::deserialize(d)?.into_iter().map(DVector::from_vec).collect())
    }
}
