use std::io::Write;

use super::{Grid1D, Propagator};
use crate::error::{Error, Result};
use crate::probability::{AdaptedField, NoiseTree};

/// Drift `F`, diffusion `G` and backward source `Ξ`, each on levels `0..K`.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceTerms {
    pub f: AdaptedField,
    pub g: AdaptedField,
    pub xi: AdaptedField,
}

impl SourceTerms {
    pub fn zeros(tree: &NoiseTree, n: usize) -> Self {
        let z = AdaptedField::control_shape(tree, n);
        Self {
            f: z.clone(),
            g: z.clone(),
            xi: z,
        }
    }
}

/// Time steppers on a scenario tree sharing one propagator `S`.
///
/// With `u = F + χh`, `w = G + H`:
///
/// ```text
/// forward SPDE     y_{k+1} = S(y_k + dt u_k) + w_k ΔW_k
/// backward SPDE    z_k = S E_k[z_{k+1}] - dt Ξ_k,        Z_k = mart(z_{k+1})
/// random forward   q_{k+1} = S(q_k + dt s_k)              (both children)
/// backward state   y_k = S(E_k[y_{k+1}] - dt(χh_k + F_k)),  Y_k = mart(y_{k+1})
/// ```
///
/// The pairs are exact transposes of each other:
///
/// ```text
/// E<y_K,z_K> - <y_0,z_0> = Σ dt E[<u_k, S E_k z_{k+1}> + <w_k, Z_k> + <y_k, Ξ_k>]
/// E<y_K,q_K> - <y_0,q_0> = Σ dt E[<y_k, s_k> + <χh_k + F_k, q_{k+1}>]
/// ```
#[derive(Debug, Clone)]
pub struct Solver {
    pub tree: NoiseTree,
    pub grid: Grid1D,
    pub propagator: Propagator,
}

impl Solver {
    pub fn new(tree: NoiseTree, grid: Grid1D, substeps: usize) -> Result<Self> {
        let propagator = Propagator::new(&grid, tree.dt, substeps)?;
        Ok(Self {
            tree,
            grid,
            propagator,
        })
    }

    pub fn n(&self) -> usize {
        self.grid.n
    }

    pub fn control_shape(&self) -> AdaptedField {
        AdaptedField::control_shape(&self.tree, self.grid.n)
    }

    pub fn state_shape(&self) -> AdaptedField {
        AdaptedField::state_shape(&self.tree, self.grid.n)
    }

    fn check_control(&self, f: &AdaptedField, what: &str) -> Result<()> {
        self.control_shape().check_conformable(f, what)?;
        if !f.is_finite() {
            return Err(Error::Numeric(format!("{what} has non-finite values")));
        }
        Ok(())
    }

    fn check_vector(&self, v: &[f64], len: usize, what: &str) -> Result<()> {
        if v.len() != len {
            return Err(Error::Shape(format!("{what} has {} values, expected {len}", v.len())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("{what} has non-finite values")));
        }
        Ok(())
    }

    /// Forward SPDE with sources `F, G` and controls `h` (localized by `χ_{D₀}`) and `H`.
    pub fn forward_spde(
        &self,
        y0: &[f64],
        sources: &SourceTerms,
        h: &AdaptedField,
        big_h: &AdaptedField,
    ) -> Result<AdaptedField> {
        self.check_control(&sources.f, "F")?;
        self.check_control(&sources.g, "G")?;
        self.check_control(h, "h")?;
        self.check_control(big_h, "H")?;
        let mask = &self.grid.mask_d0;
        let mut drift = sources.f.clone();
        for k in 0..self.tree.depth {
            for (idx, (d, c)) in drift.level_mut(k).iter_mut().zip(h.level(k)).enumerate() {
                *d += mask[idx % self.grid.n] * c;
            }
        }
        let mut diffusion = sources.g.clone();
        diffusion.axpy(1.0, big_h);
        self.forward_core(y0, Some(&drift), Some(&diffusion))
    }

    /// Forward recursion with an already-assembled drift `u` and diffusion `w`.
    pub fn forward_core(
        &self,
        y0: &[f64],
        drift: Option<&AdaptedField>,
        diffusion: Option<&AdaptedField>,
    ) -> Result<AdaptedField> {
        let n = self.grid.n;
        self.check_vector(y0, n, "initial datum")?;
        if let Some(u) = drift {
            self.check_control(u, "drift")?;
        }
        if let Some(w) = diffusion {
            self.check_control(w, "diffusion")?;
        }
        let dt = self.tree.dt;
        let mut y = self.state_shape();
        y.level_mut(0).copy_from_slice(y0);
        let mut buf = vec![0.0; n];
        for k in 0..self.tree.depth {
            let (cur, next) = {
                let cur = y.level(k).to_vec();
                (cur, y.level_mut(k + 1))
            };
            for j in 0..(1 << k) {
                let src = &cur[j * n..(j + 1) * n];
                buf.copy_from_slice(src);
                if let Some(u) = drift {
                    for (b, v) in buf.iter_mut().zip(u.node(k, j)) {
                        *b += dt * v;
                    }
                }
                self.propagator.apply_in_place(&mut buf);
                let (up, down) = next[2 * j * n..(2 * j + 2) * n].split_at_mut(n);
                up.copy_from_slice(&buf);
                down.copy_from_slice(&buf);
                if let Some(w) = diffusion {
                    let s = self.tree.sqrt_dt;
                    for ((a, b), v) in up.iter_mut().zip(down.iter_mut()).zip(w.node(k, j)) {
                        *a += s * v;
                        *b -= s * v;
                    }
                }
            }
        }
        Ok(y)
    }

    /// Backward SPDE `dz = (-Δz + Ξ) dt + Z dW`, `z(T) = z_T` given on the leaves.
    ///
    /// Returns `(z, Z)` with `z` on levels `0..=K` and `Z` on `0..K`.
    pub fn backward_spde(
        &self,
        z_terminal: &[f64],
        xi: Option<&AdaptedField>,
    ) -> Result<(AdaptedField, AdaptedField)> {
        let n = self.grid.n;
        self.check_vector(z_terminal, self.tree.leaf_count() * n, "terminal datum")?;
        if let Some(x) = xi {
            self.check_control(x, "Ξ")?;
        }
        let dt = self.tree.dt;
        let mut z = self.state_shape();
        let mut zrep = self.control_shape();
        z.level_mut(self.tree.depth).copy_from_slice(z_terminal);
        for k in (0..self.tree.depth).rev() {
            let child = z.level(k + 1);
            let mut parent = self.tree.conditional_expectation(child, n)?;
            zrep.set_level(k, self.tree.martingale_part(child, n)?);
            for j in 0..(1 << k) {
                let node = &mut parent[j * n..(j + 1) * n];
                self.propagator.apply_in_place(node);
                if let Some(x) = xi {
                    for (a, v) in node.iter_mut().zip(x.node(k, j)) {
                        *a -= dt * v;
                    }
                }
            }
            z.set_level(k, parent);
        }
        Ok((z, zrep))
    }

    /// Pathwise forward recursion without noise term.
    pub fn random_forward(&self, q0: &[f64], src: Option<&AdaptedField>) -> Result<AdaptedField> {
        self.forward_core(q0, src, None)
    }

    /// Backward state `dy = (-Δy + χh + F) dt + Y dW`, `y(T) = y_T`.
    ///
    /// Returns `(y, Y)`; `y(0)` is the root of `y`.
    pub fn backward_state(
        &self,
        y_terminal: &[f64],
        f: Option<&AdaptedField>,
        h: Option<&AdaptedField>,
    ) -> Result<(AdaptedField, AdaptedField)> {
        let mut src = self.control_shape();
        if let Some(f) = f {
            self.check_control(f, "F")?;
            src.axpy(1.0, f);
        }
        if let Some(h) = h {
            self.check_control(h, "h")?;
            let n = self.grid.n;
            let mask = &self.grid.mask_d0;
            for k in 0..self.tree.depth {
                for (idx, (d, c)) in src.level_mut(k).iter_mut().zip(h.level(k)).enumerate() {
                    *d += mask[idx % n] * c;
                }
            }
        }
        self.backward_core(y_terminal, Some(&src))
    }

    /// `y_k = S(E_k[y_{k+1}] - dt s_k)`, `Y_k = mart(y_{k+1})`.
    pub fn backward_core(
        &self,
        y_terminal: &[f64],
        src: Option<&AdaptedField>,
    ) -> Result<(AdaptedField, AdaptedField)> {
        let n = self.grid.n;
        self.check_vector(y_terminal, self.tree.leaf_count() * n, "terminal datum")?;
        if let Some(s) = src {
            self.check_control(s, "source")?;
        }
        let dt = self.tree.dt;
        let mut y = self.state_shape();
        let mut yrep = self.control_shape();
        y.level_mut(self.tree.depth).copy_from_slice(y_terminal);
        for k in (0..self.tree.depth).rev() {
            let child = y.level(k + 1);
            let mut parent = self.tree.conditional_expectation(child, n)?;
            yrep.set_level(k, self.tree.martingale_part(child, n)?);
            for j in 0..(1 << k) {
                let node = &mut parent[j * n..(j + 1) * n];
                if let Some(s) = src {
                    for (a, v) in node.iter_mut().zip(s.node(k, j)) {
                        *a -= dt * v;
                    }
                }
                self.propagator.apply_in_place(node);
            }
            y.set_level(k, parent);
        }
        Ok((y, yrep))
    }

    /// `Σ_k dt E<a_k, b_k>` over levels `0..K` of two control-shaped fields.
    pub fn time_inner(&self, a: &AdaptedField, b: &AdaptedField) -> f64 {
        (0..self.tree.depth)
            .map(|k| {
                let p = self.tree.probability(k);
                let s: f64 = a.level(k).iter().zip(b.level(k)).map(|(x, y)| x * y).sum();
                p * s
            })
            .sum::<f64>()
            * self.tree.dt
            * self.grid.h
    }

    /// `E<a, b>` on one level.
    pub fn level_inner(&self, a: &AdaptedField, b: &AdaptedField, k: usize) -> f64 {
        let s: f64 = a.level(k).iter().zip(b.level(k)).map(|(x, y)| x * y).sum();
        s * self.tree.probability(k) * self.grid.h
    }

    /// `E<a, b>` for two flat vectors on level `k`.
    pub fn level_inner_raw(&self, a: &[f64], b: &[f64], k: usize) -> f64 {
        let s: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        s * self.tree.probability(k) * self.grid.h
    }
}

/// Trajectory CSV with columns `level, node, x_index, y, Y_or_Z`.
///
/// The martingale part lives on levels `0..K`; the leaf rows leave it empty.
pub fn write_trajectory_csv<W: Write>(
    y: &AdaptedField,
    rep: Option<&AdaptedField>,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["level", "node", "x_index", "y", "Y_or_Z"])?;
    let n = y.n();
    for k in y.first_level()..=y.last_level() {
        let r = rep.filter(|r| k >= r.first_level() && k <= r.last_level());
        for (idx, v) in y.level(k).iter().enumerate() {
            let extra = r.map(|r| r.level(k)[idx].to_string()).unwrap_or_default();
            w.write_record([
                k.to_string(),
                (idx / n).to_string(),
                (idx % n).to_string(),
                v.to_string(),
                extra,
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
