//! Counter-addressed random data.
//!
//! Every draw is addressed by `(seed, role, sample, entry)`: the seed keys a
//! ChaCha8 stream family, `(role, sample)` selects the stream, and the entry
//! index selects a fixed word window inside it. Values therefore do not
//! depend on generation order or on how work is split across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::pde::Grid1D;
use crate::probability::AdaptedField;

// one ChaCha refill is 64 words; each entry gets its own window
const WORDS_PER_ENTRY: u128 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    InitialDatum,
    TerminalDatum,
    Drift,
    Diffusion,
    BackwardSource,
    Control,
    Direction,
    Perturbation,
    StartSource,
    Lipschitz,
}

impl Role {
    fn id(self) -> u64 {
        self as u64 + 1
    }
}

#[derive(Debug, Clone)]
pub struct Stream {
    rng: ChaCha8Rng,
}

impl Stream {
    pub fn new(seed: u64, role: Role, sample: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream((role.id() << 48) ^ sample);
        Self { rng }
    }

    fn seek(&mut self, entry: u64) -> &mut ChaCha8Rng {
        self.rng.set_word_pos(entry as u128 * WORDS_PER_ENTRY);
        &mut self.rng
    }

    pub fn normal(&mut self, entry: u64) -> f64 {
        self.seek(entry).sample(StandardNormal)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, entry: u64, lo: f64, hi: f64) -> f64 {
        self.seek(entry).random_range(lo..hi)
    }
}

pub fn normal_vector(seed: u64, role: Role, sample: u64, len: usize) -> Vec<f64> {
    let mut s = Stream::new(seed, role, sample);
    (0..len as u64).map(|e| s.normal(e)).collect()
}

/// Independent standard normals on every (node, gridpoint) of `shape`.
pub fn normal_field(seed: u64, role: Role, sample: u64, shape: &AdaptedField) -> AdaptedField {
    let mut s = Stream::new(seed, role, sample);
    let mut out = shape.zeros_like();
    let offset = level_offsets(shape);
    for k in shape.first_level()..=shape.last_level() {
        let base = offset[k - shape.first_level()];
        for (i, v) in out.level_mut(k).iter_mut().enumerate() {
            *v = s.normal(base + i as u64);
        }
    }
    out
}

fn level_offsets(shape: &AdaptedField) -> Vec<u64> {
    let mut acc = 0u64;
    (shape.first_level()..=shape.last_level())
        .map(|k| {
            let here = acc;
            acc += (1u64 << k) * shape.n() as u64;
            here
        })
        .collect()
}

/// `Σ_{j=1}^{modes} a_j sin(jπx) / j` with standard normal `a_j`.
pub fn smooth_vector(seed: u64, role: Role, sample: u64, grid: &Grid1D, modes: usize) -> Vec<f64> {
    let mut s = Stream::new(seed, role, sample);
    let coeffs: Vec<f64> = (0..modes as u64).map(|e| s.normal(e)).collect();
    sine_series(&coeffs, grid)
}

/// Node-wise independent smooth sine series on every node of `shape`.
pub fn smooth_field(
    seed: u64,
    role: Role,
    sample: u64,
    shape: &AdaptedField,
    grid: &Grid1D,
    modes: usize,
) -> AdaptedField {
    let mut s = Stream::new(seed, role, sample);
    let mut out = shape.zeros_like();
    let n = shape.n();
    let mut entry = 0u64;
    for k in shape.first_level()..=shape.last_level() {
        for j in 0..(1usize << k) {
            let coeffs: Vec<f64> = (0..modes as u64).map(|m| s.normal(entry + m)).collect();
            entry += modes as u64;
            out.node_mut(k, j).copy_from_slice(&sine_series(&coeffs, grid));
        }
    }
    debug_assert_eq!(out.n(), n);
    out
}

/// `rows` independent smooth sine series, e.g. one per time step of a
/// deterministic source.
pub fn smooth_rows(
    seed: u64,
    role: Role,
    sample: u64,
    rows: usize,
    grid: &Grid1D,
    modes: usize,
) -> Vec<Vec<f64>> {
    let mut s = Stream::new(seed, role, sample);
    (0..rows)
        .map(|r| {
            let base = (r * modes) as u64;
            let coeffs: Vec<f64> = (0..modes as u64).map(|m| s.normal(base + m)).collect();
            sine_series(&coeffs, grid)
        })
        .collect()
}

fn sine_series(coeffs: &[f64], grid: &Grid1D) -> Vec<f64> {
    grid.x
        .iter()
        .map(|&x| {
            coeffs
                .iter()
                .enumerate()
                .map(|(j, a)| {
                    let f = (j + 1) as f64;
                    a * (f * std::f64::consts::PI * x).sin() / f
                })
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_independent() {
        let mut a = Stream::new(1, Role::Drift, 3);
        let forward: Vec<f64> = (0..20).map(|e| a.normal(e)).collect();
        let mut b = Stream::new(1, Role::Drift, 3);
        let backward: Vec<f64> = (0..20).rev().map(|e| b.normal(e)).collect();
        let mut rev = backward.clone();
        rev.reverse();
        assert_eq!(forward, rev);
    }

    #[test]
    fn streams_differ() {
        let a = normal_vector(1, Role::Drift, 0, 8);
        let b = normal_vector(1, Role::Drift, 1, 8);
        let c = normal_vector(1, Role::Diffusion, 0, 8);
        let d = normal_vector(2, Role::Drift, 0, 8);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
        assert_eq!(a, normal_vector(1, Role::Drift, 0, 8));
    }

    #[test]
    fn rough_moments() {
        let v = normal_vector(11, Role::Control, 0, 20000);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        assert!(mean.abs() < 0.03);
        assert!((var - 1.0).abs() < 0.05);
    }

    #[test]
    fn uniform_in_range() {
        let mut s = Stream::new(0, Role::Lipschitz, 0);
        assert!((0..1000).map(|e| s.uniform(e, -10.0, 10.0)).all(|u| (-10.0..10.0).contains(&u)));
    }
}
