//! Exact inverse of the forward Hessian by dynamic programming on the tree.
//!
//! Minimizing `½<x, A x>_U - <r, x>_U` with zero data is a linear-quadratic
//! control problem whose value function at level `k` is `½ yᵀ P_k y - v_jᵀ y`.
//! `P_k` does not depend on the node, so one dense Riccati sweep per level
//! suffices; the node-dependent linear terms follow from `r` by a backward
//! pass over the tree. The update is kept in the form
//! `P_k = S (R⁻¹ + B D⁻¹ Bᵀ)⁻¹ S`, which only adds and inverts symmetric
//! positive matrices.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::Controls;
use crate::error::{Error, Result};
use crate::pde::Solver;
use crate::probability::AdaptedField;
use crate::weights::WeightTable;

/// Cholesky of `diag(d) M diag(d)` with `d = 1/sqrt(diag M)`.
#[derive(Debug, Clone)]
struct ScaledCholesky {
    scale: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl ScaledCholesky {
    fn new(m: DMatrix<f64>, what: &str) -> Result<Self> {
        let scale = DVector::from_iterator(m.nrows(), m.diagonal().iter().map(|v| 1.0 / v.sqrt()));
        let scaled = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * scale[i] * scale[j]);
        let chol = Cholesky::new(scaled)
            .ok_or_else(|| Error::Numeric(format!("{what} is not numerically positive definite")))?;
        Ok(Self { scale, chol })
    }

    fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let scaled = b.component_mul(&self.scale);
        self.chol.solve(&scaled).component_mul(&self.scale)
    }

    fn inverse(&self) -> DMatrix<f64> {
        let inv = self.chol.inverse();
        let mut out = DMatrix::from_fn(inv.nrows(), inv.ncols(), |i, j| {
            inv[(i, j)] * self.scale[i] * self.scale[j]
        });
        symmetrize(&mut out);
        out
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

#[derive(Debug, Clone)]
struct Level {
    r_inv: DMatrix<f64>,
    pi: DMatrix<f64>,
    // control weight on D₀ times dt·h
    d: DVector<f64>,
    big_h: ScaledCholesky,
}

#[derive(Debug, Clone)]
pub struct RiccatiInverse {
    n: usize,
    d0: Vec<usize>,
    s: DMatrix<f64>,
    // B = dt S E, n × m
    b: DMatrix<f64>,
    levels: Vec<Level>,
}

impl RiccatiInverse {
    pub fn new(
        solver: &Solver,
        state: &WeightTable,
        control_h: &WeightTable,
        control_big_h: &WeightTable,
        eps: f64,
    ) -> Result<Self> {
        let n = solver.grid.n;
        let hg = solver.grid.h;
        let dt = solver.tree.dt;
        let depth = solver.tree.depth;
        let d0: Vec<usize> = (0..n).filter(|&i| solver.grid.mask_d0[i] > 0.0).collect();
        let mut s = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for i in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[i] = 1.0;
            for (j, v) in solver.propagator.apply(&e).into_iter().enumerate() {
                s[(j, i)] = v;
            }
        }
        symmetrize(&mut s);
        let b = DMatrix::from_fn(n, d0.len(), |i, c| dt * s[(i, d0[c])]);

        let mut p = DMatrix::from_diagonal_element(n, n, hg / eps);
        let mut levels = Vec::with_capacity(depth);
        for k in (0..depth).rev() {
            let mut r = p.clone();
            for (i, q) in state.row(k).iter().enumerate() {
                r[(i, i)] += dt * hg * q;
            }
            let mut mh = r.clone();
            for (i, w) in control_big_h.row(k).iter().enumerate() {
                mh[(i, i)] += hg * w;
            }
            let big_h = ScaledCholesky::new(mh, "diffusion-control block")?;
            let r_inv = ScaledCholesky::new(r, "state curvature")?.inverse();
            let wh = control_h.row(k);
            let d = DVector::from_iterator(d0.len(), d0.iter().map(|&i| dt * hg * wh[i]));
            let mut core = r_inv.clone();
            for c in 0..d0.len() {
                let col = b.column(c);
                core.ger(1.0 / d[c], &col, &col, 1.0);
            }
            let pi = ScaledCholesky::new(core, "Riccati core")?.inverse();
            p = &s * &pi * &s;
            symmetrize(&mut p);
            levels.push(Level { r_inv, pi, d, big_h });
        }
        levels.reverse();
        Ok(Self { n, d0, s, b, levels })
    }

    /// `A⁻¹ r` for a forward-problem control pair.
    pub fn apply(&self, solver: &Solver, r: &Controls) -> Controls {
        let n = self.n;
        let tree = &solver.tree;
        let depth = tree.depth;
        let dt = tree.dt;
        let hg = solver.grid.h;
        let r_big = r.big_h.as_ref().expect("forward controls carry H");

        // backward pass: w_k[j], with linear value terms v_k[j] = S w_k[j]
        let mut w: Vec<Vec<DVector<f64>>> = vec![Vec::new(); depth];
        let mut v: Vec<Vec<DVector<f64>>> = vec![Vec::new(); depth + 1];
        v[depth] = vec![DVector::zeros(n); 1 << depth];
        for k in (0..depth).rev() {
            let lv = &self.levels[k];
            for j in 0..(1usize << k) {
                let vbar = (&v[k + 1][2 * j] + &v[k + 1][2 * j + 1]) * 0.5;
                let rh = r.h.node(k, j);
                let c_over_d = DVector::from_iterator(
                    self.d0.len(),
                    self.d0.iter().enumerate().map(|(c, &i)| dt * hg * rh[i] / lv.d[c]),
                );
                let wj = &lv.pi * (&lv.r_inv * &vbar - &self.b * &c_over_d);
                v[k].push(&self.s * &wj);
                w[k].push(wj);
            }
        }

        let mut out = Controls {
            h: AdaptedField::zeros(n, 0, depth - 1),
            big_h: Some(AdaptedField::zeros(n, 0, depth - 1)),
        };
        let mut y_level = vec![DVector::zeros(n)];
        let sqrt_dt = tree.sqrt_dt;
        for k in 0..depth {
            let lv = &self.levels[k];
            let mut next = Vec::with_capacity(1 << (k + 1));
            for (j, y) in y_level.iter().enumerate() {
                let rh = r.h.node(k, j);
                // h = D⁻¹ [c + Bᵀ (w - Π S y)]
                let inner = &w[k][j] - &lv.pi * (&self.s * y);
                let bt = self.b.transpose() * inner;
                let mut full_h = DVector::zeros(n);
                for (c, &i) in self.d0.iter().enumerate() {
                    full_h[i] = (dt * hg * rh[i] + bt[c]) / lv.d[c];
                }
                // H = (h W_H + R)⁻¹ (h r_H + δ/√dt)
                let up = &v[k + 1][2 * j];
                let dn = &v[k + 1][2 * j + 1];
                let delta = (up - dn) * 0.5;
                let rhs = DVector::from_iterator(
                    n,
                    r_big.node(k, j).iter().zip(delta.iter()).map(|(a, d)| hg * a + d / sqrt_dt),
                );
                let big = lv.big_h.solve(&rhs);
                let a = &self.s * (y + &full_h * dt);
                next.push(&a + &big * sqrt_dt);
                next.push(&a - &big * sqrt_dt);
                out.h.node_mut(k, j).copy_from_slice(full_h.as_slice());
                out.big_h
                    .as_mut()
                    .expect("allocated above")
                    .node_mut(k, j)
                    .copy_from_slice(big.as_slice());
            }
            y_level = next;
        }
        out
    }
}
