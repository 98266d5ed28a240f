//! Shared fixtures for the benchmarks in `benches/`.

use nullspde_core::pde::{Grid1D, Interval};
use nullspde_core::rng::{smooth_vector, Role};
use nullspde_core::weights::{build_spatial_weight, calibrate_lambda, cell_midpoints};
use nullspde_core::{HumConfig, HumData, HumProblem, NoiseTree, Problem, Solver, WeightParams};

/// Default geometry with `λ` calibrated to a log range of 20.
pub fn problem(n: usize, depth: usize, kind: Problem, eps: f64) -> HumProblem {
    let horizon = 0.5;
    let d0 = Interval::new(0.3, 0.7);
    let grid = Grid1D::new(n, d0).unwrap();
    let beta = build_spatial_weight(d0, Interval::new(0.4, 0.6), &grid).unwrap();
    let times = cell_midpoints(horizon, depth);
    let lambda = calibrate_lambda(20.0, 0.3, 1.0, horizon, kind.variant(), &beta, &grid, &times).unwrap();
    let params = WeightParams::new(lambda, 0.3, 1.0, horizon, kind.variant()).unwrap();
    let solver = Solver::new(NoiseTree::new(depth, horizon).unwrap(), grid, 1).unwrap();
    HumProblem::build(solver, &beta, &params, HumConfig::new(kind, eps)).unwrap()
}

/// Smooth initial datum (forward) or terminal datum (backward), no sources.
pub fn data(p: &HumProblem, seed: u64) -> HumData {
    let s = &p.solver;
    let zero = s.control_shape();
    match p.problem() {
        Problem::ForwardTwoControls => HumData::Forward {
            y0: smooth_vector(seed, Role::InitialDatum, 0, &s.grid, 6),
            f: zero.clone(),
            g: zero,
        },
        Problem::BackwardOneControl => {
            let leaf = smooth_vector(seed, Role::TerminalDatum, 0, &s.grid, 6);
            HumData::Backward {
                y_terminal: leaf.repeat(s.tree.leaf_count()),
                f: zero,
            }
        }
    }
}
