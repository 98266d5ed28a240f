//! Spatial discretization of the unit interval and the time-stepping
//! solvers on the scenario tree.
//!
//! All solvers share one propagator `S = (I - (dt/s) Δ_h)^{-s}`. The backward
//! recursions are written so that they are the exact transpose of the
//! forward ones; see [`Solver`] for the pairing identities.

mod reference;
mod solvers;

pub use reference::DenseHeat;
pub use solvers::{write_trajectory_csv, Solver, SourceTerms};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Open subinterval `(a, b)` of the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub a: f64,
    pub b: f64,
}

impl Interval {
    pub fn new(a: f64, b: f64) -> Self {
        Self { a, b }
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.a && x < self.b
    }

    /// `self ⊂⊂ outer`: the closure of `self` lies in the open `outer`.
    pub fn compactly_inside(&self, outer: &Interval) -> bool {
        self.a < self.b && outer.a < self.a && self.b < outer.b
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.a + self.b)
    }
}

impl std::fmt::Display for Interval {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.a, self.b)
    }
}

/// Uniform grid of `n` interior points on `(0, 1)` with homogeneous
/// Dirichlet boundary values, together with the indicator of `D₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    pub n: usize,
    pub h: f64,
    pub x: Vec<f64>,
    pub mask_d0: Vec<f64>,
    pub d_zero: Interval,
}

impl Grid1D {
    pub const MIN_POINTS: usize = 8;

    pub fn new(n: usize, d_zero: Interval) -> Result<Self> {
        if n < Self::MIN_POINTS {
            return Err(Error::Parameter(format!(
                "grid needs at least {} interior points, got {n}",
                Self::MIN_POINTS
            )));
        }
        if !d_zero.compactly_inside(&Interval::new(0.0, 1.0)) {
            return Err(Error::Geometry(format!(
                "D0 = {d_zero} must lie strictly inside (0, 1)"
            )));
        }
        let h = 1.0 / (n + 1) as f64;
        let x: Vec<f64> = (1..=n).map(|i| i as f64 * h).collect();
        let mask_d0: Vec<f64> = x
            .iter()
            .map(|&xi| if d_zero.contains(xi) { 1.0 } else { 0.0 })
            .collect();
        if mask_d0.iter().all(|&m| m == 0.0) {
            return Err(Error::Geometry(format!(
                "D0 = {d_zero} contains no grid node at n = {n}"
            )));
        }
        Ok(Self {
            n,
            h,
            x,
            mask_d0,
            d_zero,
        })
    }

    /// Discrete `L²(D)` inner product `h Σ aᵢ bᵢ`.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.h * a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>()
    }

    pub fn norm_sq(&self, a: &[f64]) -> f64 {
        self.inner(a, a)
    }

    /// Forward differences `(v_{i+1} - v_i)/h`, `i = 1..n`, with the
    /// Dirichlet ghost value `v_{n+1} = 0`.
    pub fn forward_gradient(&self, v: &[f64]) -> Vec<f64> {
        let n = v.len();
        (0..n)
            .map(|i| {
                let next = if i + 1 < n { v[i + 1] } else { 0.0 };
                (next - v[i]) / self.h
            })
            .collect()
    }
}

/// Dirichlet Laplacian `(v_{i-1} - 2 v_i + v_{i+1}) / h²`.
#[derive(Debug, Clone, Copy)]
pub struct DiscreteLaplacian {
    pub n: usize,
    pub h: f64,
}

impl DiscreteLaplacian {
    pub fn new(grid: &Grid1D) -> Self {
        Self {
            n: grid.n,
            h: grid.h,
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n;
        let inv_h2 = 1.0 / (self.h * self.h);
        (0..n)
            .map(|i| {
                let left = if i > 0 { v[i - 1] } else { 0.0 };
                let right = if i + 1 < n { v[i + 1] } else { 0.0 };
                (left - 2.0 * v[i] + right) * inv_h2
            })
            .collect()
    }
}

/// Resolvent power `S = (I - τ Δ_h)^{-s}` with `τ = dt / s`.
///
/// The constant-coefficient tridiagonal matrix is factored once (Thomas
/// algorithm); `apply` performs `s` forward/backward sweeps.
#[derive(Debug, Clone)]
pub struct Propagator {
    n: usize,
    substeps: usize,
    off: f64,
    // modified super-diagonal and inverse pivots of the LU sweep
    c_prime: Vec<f64>,
    inv_pivot: Vec<f64>,
}

impl Propagator {
    pub fn new(grid: &Grid1D, dt: f64, substeps: usize) -> Result<Self> {
        if substeps == 0 {
            return Err(Error::Parameter("substeps must be at least 1".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Parameter(format!("time step must be positive, got {dt}")));
        }
        let n = grid.n;
        let r = dt / substeps as f64 / (grid.h * grid.h);
        let diag = 1.0 + 2.0 * r;
        let off = -r;
        let mut c_prime = vec![0.0; n];
        let mut inv_pivot = vec![0.0; n];
        let mut pivot = diag;
        inv_pivot[0] = 1.0 / pivot;
        c_prime[0] = off / pivot;
        for i in 1..n {
            pivot = diag - off * c_prime[i - 1];
            inv_pivot[i] = 1.0 / pivot;
            c_prime[i] = off / pivot;
        }
        Ok(Self {
            n,
            substeps,
            off,
            c_prime,
            inv_pivot,
        })
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn apply_in_place(&self, v: &mut [f64]) {
        debug_assert_eq!(v.len(), self.n);
        for _ in 0..self.substeps {
            self.solve_once(v);
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        self.apply_in_place(&mut out);
        out
    }

    fn solve_once(&self, d: &mut [f64]) {
        let n = self.n;
        d[0] *= self.inv_pivot[0];
        for i in 1..n {
            d[i] = (d[i] - self.off * d[i - 1]) * self.inv_pivot[i];
        }
        for i in (0..n - 1).rev() {
            d[i] -= self.c_prime[i] * d[i + 1];
        }
    }
}
