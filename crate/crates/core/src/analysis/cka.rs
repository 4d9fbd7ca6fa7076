//! Linear centered kernel alignment.

use crate::error::{Error, Result};
use crate::tensor::{gemm, MatMut, MatRef};

/// Row-major `rows × cols` features, one example per row.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows < 2 || cols == 0 {
            return Err(Error::shape(format!("feature matrix needs >= 2 rows and >= 1 column, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::shape(format!("{} values for a {rows}x{cols} matrix", data.len())));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("feature matrix has non-finite entries".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn centered(&self) -> Vec<f64> {
        let mut out = self.data.clone();
        for c in 0..self.cols {
            let mean = (0..self.rows).map(|r| self.data[r * self.cols + c]).sum::<f64>() / self.rows as f64;
            for r in 0..self.rows {
                out[r * self.cols + c] -= mean;
            }
        }
        out
    }
}

fn cross_norm_sq(a: &[f64], ca: usize, b: &[f64], cb: usize, rows: usize) -> f64 {
    let mut m = vec![0.0; ca * cb];
    gemm(
        1.0,
        MatRef::new(a, rows, ca).t(),
        MatRef::new(b, rows, cb),
        0.0,
        MatMut::new(&mut m, ca, cb),
    );
    m.iter().map(|v| v * v).sum()
}

/// `‖YᵀX‖²_F / (‖XᵀX‖_F · ‖YᵀY‖_F)` after centering the columns of both.
/// Returns 0 when either centered matrix is all zeros.
pub fn linear_cka(x: &FeatureMatrix, y: &FeatureMatrix) -> Result<f64> {
    if x.rows != y.rows {
        return Err(Error::shape(format!("CKA row counts differ: {} vs {}", x.rows, y.rows)));
    }
    let n = x.rows;
    let xc = x.centered();
    let yc = y.centered();
    let xx = cross_norm_sq(&xc, x.cols, &xc, x.cols, n).sqrt();
    let yy = cross_norm_sq(&yc, y.cols, &yc, y.cols, n).sqrt();
    if xx == 0.0 || yy == 0.0 {
        return Ok(0.0);
    }
    let xy = cross_norm_sq(&yc, y.cols, &xc, x.cols, n);
    Ok((xy / (xx * yy)).clamp(0.0, 1.0))
}
