//! Binary Brownian scenario tree and adapted fields on it.
//!
//! Level `k` of a tree of depth `K` holds `2^k` nodes. Node `j` at level `k`
//! has children `2j` (increment `+√dt`) and `2j + 1` (increment `-√dt`) at
//! level `k + 1`, each reached with probability 1/2.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DEPTH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseTree {
    pub depth: usize,
    pub horizon: f64,
    pub dt: f64,
    pub sqrt_dt: f64,
}

impl NoiseTree {
    pub fn new(depth: usize, horizon: f64) -> Result<Self> {
        if !(1..=MAX_DEPTH).contains(&depth) {
            return Err(Error::Parameter(format!(
                "tree depth K must lie in 1..={MAX_DEPTH}, got {depth}"
            )));
        }
        if !(horizon > 0.0 && horizon < 1.0) {
            return Err(Error::Parameter(format!(
                "time horizon must lie in (0, 1), got {horizon}"
            )));
        }
        let dt = horizon / depth as f64;
        Ok(Self {
            depth,
            horizon,
            dt,
            sqrt_dt: dt.sqrt(),
        })
    }

    pub fn nodes_at(&self, level: usize) -> usize {
        1 << level
    }

    pub fn node_count(&self) -> usize {
        (1 << (self.depth + 1)) - 1
    }

    pub fn leaf_count(&self) -> usize {
        1 << self.depth
    }

    /// Probability of each node at `level`.
    pub fn probability(&self, level: usize) -> f64 {
        0.5f64.powi(level as i32)
    }

    /// Time `t_k = k dt`.
    pub fn time(&self, level: usize) -> f64 {
        level as f64 * self.dt
    }

    /// Increment `ΔW_{level-1}` on the edge into node `j` of `level ≥ 1`.
    pub fn increment_into(&self, level: usize, j: usize) -> f64 {
        debug_assert!(level >= 1 && j < self.nodes_at(level));
        if j % 2 == 0 {
            self.sqrt_dt
        } else {
            -self.sqrt_dt
        }
    }

    /// `ΔW_step` seen from node `j` of `level` (`step < level`), i.e. the
    /// increment on the edge from its ancestor at `step` to the one at `step + 1`.
    pub fn path_increment(&self, level: usize, j: usize, step: usize) -> f64 {
        debug_assert!(step < level);
        let ancestor = j >> (level - step - 1);
        self.increment_into(step + 1, ancestor)
    }

    fn child_level(&self, values: usize, n: usize) -> Result<usize> {
        if n == 0 || values % n != 0 {
            return Err(Error::Shape(format!("{values} values do not split into vectors of {n}")));
        }
        let nodes = values / n;
        if nodes < 2 || !nodes.is_power_of_two() {
            return Err(Error::Shape(format!("{nodes} nodes is not a level k+1 ≥ 1")));
        }
        let level = nodes.trailing_zeros() as usize;
        if level > self.depth {
            return Err(Error::Shape(format!("level {level} exceeds tree depth {}", self.depth)));
        }
        Ok(level)
    }

    /// `E[v | F_k]` for a field `v` given on level `k + 1` (flattened,
    /// `n` values per node): the mean of each node's two children.
    pub fn conditional_expectation(&self, child: &[f64], n: usize) -> Result<Vec<f64>> {
        self.child_level(child.len(), n)?;
        let mut out = vec![0.0; child.len() / 2];
        for (p, dst) in out.chunks_mut(n).enumerate() {
            let up = &child[2 * p * n..(2 * p + 1) * n];
            let down = &child[(2 * p + 1) * n..(2 * p + 2) * n];
            for ((d, a), b) in dst.iter_mut().zip(up).zip(down) {
                *d = 0.5 * (a + b);
            }
        }
        Ok(out)
    }

    /// Martingale part `Z` of a level-`k+1` field:
    /// `(up - down) / (2√dt)`, so that `v = E_k[v] + Z ΔW_k` on every child.
    pub fn martingale_part(&self, child: &[f64], n: usize) -> Result<Vec<f64>> {
        self.child_level(child.len(), n)?;
        let scale = 0.5 / self.sqrt_dt;
        let mut out = vec![0.0; child.len() / 2];
        for (p, dst) in out.chunks_mut(n).enumerate() {
            let up = &child[2 * p * n..(2 * p + 1) * n];
            let down = &child[(2 * p + 1) * n..(2 * p + 2) * n];
            for ((d, a), b) in dst.iter_mut().zip(up).zip(down) {
                *d = (a - b) * scale;
            }
        }
        Ok(out)
    }

    /// Probability-weighted sum of a per-node reduction over one level.
    pub fn expectation<F>(&self, field: &AdaptedField, level: usize, functional: F) -> f64
    where
        F: Fn(&[f64]) -> f64,
    {
        let p = self.probability(level);
        field
            .level(level)
            .chunks(field.n())
            .map(&functional)
            .sum::<f64>()
            * p
    }
}

/// Values of one adapted process: a grid vector of length `n` on every node
/// of levels `first_level..=last_level`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedField {
    n: usize,
    first_level: usize,
    levels: Vec<Vec<f64>>,
}

impl AdaptedField {
    pub fn zeros(n: usize, first_level: usize, last_level: usize) -> Self {
        let levels = (first_level..=last_level)
            .map(|k| vec![0.0; (1 << k) * n])
            .collect();
        Self {
            n,
            first_level,
            levels,
        }
    }

    /// Levels `0..K`, the shape of a control or source.
    pub fn control_shape(tree: &NoiseTree, n: usize) -> Self {
        Self::zeros(n, 0, tree.depth - 1)
    }

    /// Levels `0..=K`, the shape of a state trajectory.
    pub fn state_shape(tree: &NoiseTree, n: usize) -> Self {
        Self::zeros(n, 0, tree.depth)
    }

    /// Field whose value on every node of level `k` is `f(k)`.
    pub fn deterministic<F>(n: usize, first_level: usize, last_level: usize, f: F) -> Self
    where
        F: Fn(usize) -> Vec<f64>,
    {
        let mut out = Self::zeros(n, first_level, last_level);
        for k in first_level..=last_level {
            let v = f(k);
            assert_eq!(v.len(), n, "deterministic field slice has wrong length");
            for chunk in out.level_mut(k).chunks_mut(n) {
                chunk.copy_from_slice(&v);
            }
        }
        out
    }

    pub fn from_levels(n: usize, first_level: usize, levels: Vec<Vec<f64>>) -> Result<Self> {
        for (j, lv) in levels.iter().enumerate() {
            let expect = (1 << (first_level + j)) * n;
            if lv.len() != expect {
                return Err(Error::Shape(format!(
                    "level {} has {} values, expected {expect}",
                    first_level + j,
                    lv.len()
                )));
            }
        }
        Ok(Self {
            n,
            first_level,
            levels,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn first_level(&self) -> usize {
        self.first_level
    }

    pub fn last_level(&self) -> usize {
        self.first_level + self.levels.len() - 1
    }

    pub fn level(&self, k: usize) -> &[f64] {
        &self.levels[k - self.first_level]
    }

    pub fn level_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.levels[k - self.first_level]
    }

    pub fn set_level(&mut self, k: usize, values: Vec<f64>) {
        assert_eq!(values.len(), (1 << k) * self.n);
        self.levels[k - self.first_level] = values;
    }

    pub fn node(&self, k: usize, j: usize) -> &[f64] {
        &self.level(k)[j * self.n..(j + 1) * self.n]
    }

    pub fn node_mut(&mut self, k: usize, j: usize) -> &mut [f64] {
        let n = self.n;
        &mut self.level_mut(k)[j * n..(j + 1) * n]
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.levels.iter().flatten()
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.levels.iter_mut().flatten()
    }

    pub fn len(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn conformable(&self, other: &AdaptedField) -> bool {
        self.n == other.n
            && self.first_level == other.first_level
            && self.levels.len() == other.levels.len()
    }

    pub fn check_conformable(&self, other: &AdaptedField, what: &str) -> Result<()> {
        if self.conformable(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: field with n={} levels {}..={} vs n={} levels {}..={}",
                other.n,
                other.first_level,
                other.last_level(),
                self.n,
                self.first_level,
                self.last_level()
            )))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.values().all(|&v| v == 0.0)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.n, self.first_level, self.last_level())
    }

    pub fn scale(&mut self, a: f64) {
        self.values_mut().for_each(|v| *v *= a);
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &AdaptedField) {
        debug_assert!(self.conformable(other));
        for (s, o) in self.values_mut().zip(other.values()) {
            *s += a * o;
        }
    }

    /// Pointwise map of two conformable fields.
    pub fn zip_map<F>(&self, other: &AdaptedField, f: F) -> Self
    where
        F: Fn(f64, f64) -> f64,
    {
        debug_assert!(self.conformable(other));
        let mut out = self.clone();
        for (s, o) in out.values_mut().zip(other.values()) {
            *s = f(*s, *o);
        }
        out
    }

    pub fn map<F>(&self, f: F) -> Self
    where
        F: Fn(f64) -> f64,
    {
        let mut out = self.clone();
        out.values_mut().for_each(|v| *v = f(*v));
        out
    }

    /// Restriction to levels `first..=last`.
    pub fn slice_levels(&self, first: usize, last: usize) -> Self {
        assert!(first >= self.first_level && last <= self.last_level() && first <= last);
        Self {
            n: self.n,
            first_level: first,
            levels: (first..=last).map(|k| self.level(k).to_vec()).collect(),
        }
    }

    /// Snapshot CSV with columns `level, node_index, x_index, value`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["level", "node_index", "x_index", "value"])?;
        for k in self.first_level..=self.last_level() {
            for (idx, v) in self.level(k).iter().enumerate() {
                w.serialize((k, idx / self.n, idx % self.n, v))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
