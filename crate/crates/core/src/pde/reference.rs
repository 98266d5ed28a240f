use nalgebra::{DMatrix, DVector, LU};

use super::Grid1D;
use crate::error::{Error, Result};

/// Deterministic implicit-Euler heat solver on a dense matrix.
///
/// Independent of the tree solvers: assembles `I - (dt/s) Δ_h` as a full
/// matrix and solves with a dense LU factorization.
#[derive(Debug, Clone)]
pub struct DenseHeat {
    pub n: usize,
    pub dt: f64,
    pub substeps: usize,
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl DenseHeat {
    pub fn new(grid: &Grid1D, dt: f64, substeps: usize) -> Result<Self> {
        if substeps == 0 || !(dt > 0.0) {
            return Err(Error::Parameter("dense reference needs dt > 0 and substeps ≥ 1".into()));
        }
        let n = grid.n;
        let tau = dt / substeps as f64;
        let r = tau / (grid.h * grid.h);
        let a = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                1.0 + 2.0 * r
            } else if i.abs_diff(j) == 1 {
                -r
            } else {
                0.0
            }
        });
        Ok(Self {
            n,
            dt,
            substeps,
            lu: a.lu(),
        })
    }

    fn step(&self, v: &[f64]) -> Vec<f64> {
        let mut x = DVector::from_column_slice(v);
        for _ in 0..self.substeps {
            x = self.lu.solve(&x).expect("implicit heat matrix is nonsingular");
        }
        x.as_slice().to_vec()
    }

    /// `y_{k+1} = A^{-s}(y_k + dt f_k)`; returns `y_0..=y_K` with `K = sources.len()`
    /// (or `steps` when no source is given).
    pub fn forward(&self, y0: &[f64], sources: Option<&[Vec<f64>]>) -> Vec<Vec<f64>> {
        self.forward_steps(y0, sources, sources.map_or(0, <[Vec<f64>]>::len))
    }

    pub fn forward_steps(
        &self,
        y0: &[f64],
        sources: Option<&[Vec<f64>]>,
        steps: usize,
    ) -> Vec<Vec<f64>> {
        let mut out = vec![y0.to_vec()];
        for k in 0..steps {
            let mut v = out[k].clone();
            if let Some(src) = sources {
                for (a, b) in v.iter_mut().zip(&src[k]) {
                    *a += self.dt * b;
                }
            }
            out.push(self.step(&v));
        }
        out
    }

    /// `z_k = A^{-s} z_{k+1} - dt ξ_k`; returns `z_0..=z_K`.
    pub fn backward(&self, z_terminal: &[f64], sources: Option<&[Vec<f64>]>, steps: usize) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new(); steps + 1];
        out[steps] = z_terminal.to_vec();
        for k in (0..steps).rev() {
            let mut v = self.step(&out[k + 1]);
            if let Some(src) = sources {
                for (a, b) in v.iter_mut().zip(&src[k]) {
                    *a -= self.dt * b;
                }
            }
            out[k] = v;
        }
        out
    }

    /// `y_k = A^{-s}(y_{k+1} - dt f_k)`; returns `y_0..=y_K`.
    pub fn backward_state(
        &self,
        y_terminal: &[f64],
        sources: Option<&[Vec<f64>]>,
        steps: usize,
    ) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new(); steps + 1];
        out[steps] = y_terminal.to_vec();
        for k in (0..steps).rev() {
            let mut v = out[k + 1].clone();
            if let Some(src) = sources {
                for (a, b) in v.iter_mut().zip(&src[k]) {
                    *a -= self.dt * b;
                }
            }
            out[k] = self.step(&v);
        }
        out
    }
}
