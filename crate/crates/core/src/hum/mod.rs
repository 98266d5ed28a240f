//! Penalized HUM on the scenario tree.
//!
//! Forward problem (controls `h` on `D₀` and `H` everywhere):
//!
//! ```text
//! J(h, H) = ½ Σ dt E<θ_ε⁻² y_{k+1}, y_{k+1}> + ½ ‖h‖²_{W_h} + ½ ‖H‖²_{W_H} + (1/2ε) E‖y_K‖²
//! ```
//!
//! Backward problem (control `h` on `D₀`, terminal datum `y_T`):
//!
//! ```text
//! I(h) = ½ Σ dt E<θ_ε⁻² y_k, y_k> + ½ ‖h‖²_{W_h} + (1/2ε) ‖y_0‖²
//! ```
//!
//! with `W_h = θ⁻²λ⁻³μ⁻⁴ξ⁻³` and `W_H = θ⁻²λ⁻²μ⁻²ξ⁻³`, all weights taken at
//! time-cell midpoints and normalized by the common factor `e^{2κ}`.
//! Controls live in the inner product `<u, v>_U = Σ_k dt E[h Σ_i u_i v_i]`;
//! gradients are returned in that inner product.

mod cg;
mod riccati;

pub use cg::CgOutcome;
pub use riccati::RiccatiInverse;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pde::Solver;
use crate::probability::AdaptedField;
use crate::weights::{
    carleman_fields, cell_midpoints, CarlemanFields, SpatialWeight, Variant, WeightExponents,
    WeightParams, WeightTable,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Problem {
    ForwardTwoControls,
    BackwardOneControl,
}

impl Problem {
    pub fn variant(self) -> Variant {
        match self {
            Problem::ForwardTwoControls => Variant::ForwardControl,
            Problem::BackwardOneControl => Variant::BackwardControl,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumConfig {
    pub eps: f64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    pub problem: Problem,
}

impl HumConfig {
    pub fn new(problem: Problem, eps: f64) -> Self {
        Self {
            eps,
            cg_tol: 1e-8,
            cg_max_iter: 500,
            problem,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Parameter(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.cg_tol > 0.0) {
            return Err(Error::Parameter(format!("cg_tol must be positive, got {}", self.cg_tol)));
        }
        if self.cg_max_iter == 0 {
            return Err(Error::Parameter("cg_max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Diagonal weight tables, one row per time cell.
#[derive(Debug, Clone, PartialEq)]
pub struct HumWeights {
    /// `θ_ε⁻²`, the state weight in the functional.
    pub state: WeightTable,
    /// `θ⁻²`, the state weight of the a-priori estimate.
    pub state_plain: WeightTable,
    /// `θ⁻²λ⁻³μ⁻⁴ξ⁻³`.
    pub control_h: WeightTable,
    /// `θ⁻²λ⁻²μ⁻²ξ⁻³`.
    pub control_big_h: WeightTable,
    /// `θ⁻²λ⁻²μ⁻²ξ⁻²`, the weight of `Y` in the backward estimate.
    pub martingale: WeightTable,
    pub kappa: f64,
    /// Lattice points whose exponent hit the clamp, summed over tables.
    pub clamped: usize,
}

pub fn h_exponents(params: &WeightParams) -> WeightExponents {
    WeightExponents::carleman(-2.0, -3.0, -4.0, -3.0, params)
}

pub fn big_h_exponents(params: &WeightParams) -> WeightExponents {
    WeightExponents::carleman(-2.0, -2.0, -2.0, -3.0, params)
}

pub fn martingale_exponents(params: &WeightParams) -> WeightExponents {
    WeightExponents::carleman(-2.0, -2.0, -2.0, -2.0, params)
}

/// Tables for the functional; `fields_eps` must carry the same `κ` as `fields`.
pub fn assemble_hum_weights(fields: &CarlemanFields, fields_eps: &CarlemanFields) -> HumWeights {
    let p = &fields.params;
    let state = fields_eps
        .with_kappa(fields.kappa)
        .weight_table(WeightExponents::new(-2.0, 0.0, 0.0));
    let state_plain = fields.weight_table(WeightExponents::new(-2.0, 0.0, 0.0));
    let control_h = fields.weight_table(h_exponents(p));
    let control_big_h = fields.weight_table(big_h_exponents(p));
    let martingale = fields.weight_table(martingale_exponents(p));
    let clamped = state.clamped
        + state_plain.clamped
        + control_h.clamped
        + control_big_h.clamped
        + martingale.clamped;
    HumWeights {
        state,
        state_plain,
        control_h,
        control_big_h,
        martingale,
        kappa: fields.kappa,
        clamped,
    }
}

/// Data of one linear solve.
#[derive(Debug, Clone, PartialEq)]
pub enum HumData {
    Forward {
        y0: Vec<f64>,
        f: AdaptedField,
        g: AdaptedField,
    },
    Backward {
        y_terminal: Vec<f64>,
        f: AdaptedField,
    },
}

impl HumData {
    pub fn forward_zero(solver: &Solver) -> Self {
        HumData::Forward {
            y0: vec![0.0; solver.n()],
            f: solver.control_shape(),
            g: solver.control_shape(),
        }
    }

    pub fn backward_zero(solver: &Solver) -> Self {
        HumData::Backward {
            y_terminal: vec![0.0; solver.tree.leaf_count() * solver.n()],
            f: solver.control_shape(),
        }
    }

    pub fn problem(&self) -> Problem {
        match self {
            HumData::Forward { .. } => Problem::ForwardTwoControls,
            HumData::Backward { .. } => Problem::BackwardOneControl,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            HumData::Forward { y0, f, g } => {
                y0.iter().all(|&v| v == 0.0) && f.is_zero() && g.is_zero()
            }
            HumData::Backward { y_terminal, f } => {
                y_terminal.iter().all(|&v| v == 0.0) && f.is_zero()
            }
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        match self {
            HumData::Forward { y0, f, g } => HumData::Forward {
                y0: y0.iter().map(|v| a * v).collect(),
                f: f.scaled(a),
                g: g.scaled(a),
            },
            HumData::Backward { y_terminal, f } => HumData::Backward {
                y_terminal: y_terminal.iter().map(|v| a * v).collect(),
                f: f.scaled(a),
            },
        }
    }

    /// `self + a * other` for data of the same kind.
    pub fn combined(&self, a: f64, other: &HumData) -> Result<Self> {
        let add = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| u + a * v).collect();
        match (self, other) {
            (HumData::Forward { y0, f, g }, HumData::Forward { y0: y1, f: f1, g: g1 }) => {
                let mut f = f.clone();
                f.axpy(a, f1);
                let mut g = g.clone();
                g.axpy(a, g1);
                Ok(HumData::Forward {
                    y0: add(y0, y1),
                    f,
                    g,
                })
            }
            (
                HumData::Backward { y_terminal, f },
                HumData::Backward {
                    y_terminal: y1,
                    f: f1,
                },
            ) => {
                let mut f = f.clone();
                f.axpy(a, f1);
                Ok(HumData::Backward {
                    y_terminal: add(y_terminal, y1),
                    f,
                })
            }
            _ => Err(Error::Usage("cannot combine forward and backward data".into())),
        }
    }
}

/// Control variables: `h` always, `H` for the forward problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Controls {
    pub h: AdaptedField,
    pub big_h: Option<AdaptedField>,
}

impl Controls {
    pub fn zeros(solver: &Solver, problem: Problem) -> Self {
        let z = solver.control_shape();
        Self {
            big_h: (problem == Problem::ForwardTwoControls).then(|| z.clone()),
            h: z,
        }
    }

    pub fn fields(&self) -> impl Iterator<Item = &AdaptedField> {
        std::iter::once(&self.h).chain(self.big_h.iter())
    }

    fn fields_mut(&mut self) -> impl Iterator<Item = &mut AdaptedField> {
        std::iter::once(&mut self.h).chain(self.big_h.iter_mut())
    }

    pub fn axpy(&mut self, a: f64, other: &Controls) {
        for (s, o) in self.fields_mut().zip(other.fields()) {
            s.axpy(a, o);
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.fields_mut().for_each(|f| f.scale(a));
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    pub fn is_zero(&self) -> bool {
        self.fields().all(AdaptedField::is_zero)
    }

    pub fn is_finite(&self) -> bool {
        self.fields().all(AdaptedField::is_finite)
    }

    /// `<self, other>_U`.
    pub fn inner(&self, other: &Controls, solver: &Solver) -> f64 {
        self.fields()
            .zip(other.fields())
            .map(|(a, b)| solver.time_inner(a, b))
            .sum()
    }
}

/// Serializable digest of one solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumDiagnostics {
    pub eps: f64,
    pub cost: f64,
    pub terminal_norm_sq: f64,
    pub weighted_norms: [f64; 3],
    pub cg_iters: usize,
    pub duality_residual: f64,
    pub converged: bool,
    pub relative_gradient: f64,
    pub cost_gap: f64,
    pub characterization_residual: f64,
    pub clamped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSolution {
    pub problem: Problem,
    pub controls: Controls,
    /// State trajectory on levels `0..=K`.
    pub y: AdaptedField,
    /// Adjoint martingale part `Z` (forward) or state martingale part `Y` (backward).
    pub rep: AdaptedField,
    /// `z_ε` (forward) or `q_ε` (backward).
    pub adjoint: AdaptedField,
    /// `E‖y(T)‖²` (forward) or `‖y(0)‖²` (backward).
    pub terminal_norm_sq: f64,
    pub cost: f64,
    /// Forward: `θ⁻²|y|²`, `W_h|h|²`, `W_H|H|²`. Backward: `θ⁻²|y|²`, `W_Y|Y|²`, `W_h|h|²`.
    pub weighted_norms: [f64; 3],
    pub cg_iters: usize,
    pub converged: bool,
    pub relative_gradient: f64,
    pub cost_gap: f64,
    pub duality_residual: f64,
    pub characterization_residual: f64,
    /// Cost after each CG iteration, starting with the cost at the initial guess.
    pub cost_history: Vec<f64>,
    pub clamped: usize,
    pub eps: f64,
}

impl ControlSolution {
    pub fn diagnostics(&self) -> HumDiagnostics {
        HumDiagnostics {
            eps: self.eps,
            cost: self.cost,
            terminal_norm_sq: self.terminal_norm_sq,
            weighted_norms: self.weighted_norms,
            cg_iters: self.cg_iters,
            duality_residual: self.duality_residual,
            converged: self.converged,
            relative_gradient: self.relative_gradient,
            cost_gap: self.cost_gap,
            characterization_residual: self.characterization_residual,
            clamped: self.clamped,
        }
    }

    /// Sum of the three weighted norms.
    pub fn weighted_total(&self) -> f64 {
        self.weighted_norms.iter().sum()
    }
}

/// State and adjoint of one evaluation.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub y: AdaptedField,
    /// Martingale part of the state (backward problem only).
    pub state_rep: Option<AdaptedField>,
    pub adjoint: AdaptedField,
    /// Adjoint martingale part (forward problem only).
    pub adjoint_rep: Option<AdaptedField>,
    /// Forward: `S E_k z_{k+1}`. Backward: `q_{k+1}` seen from level `k`.
    pub adjoint_pairing: AdaptedField,
    pub gradient: Controls,
    pub cost: f64,
    pub terminal_norm_sq: f64,
}

/// A penalized HUM problem on a fixed discretization.
#[derive(Debug, Clone)]
pub struct HumProblem {
    pub solver: Solver,
    pub config: HumConfig,
    pub params: WeightParams,
    pub weights: HumWeights,
    /// Exact Hessian inverse used as the CG preconditioner (forward problem).
    pub riccati: Option<RiccatiInverse>,
    /// Spatial weight the tables came from, when built by [`Self::build`].
    pub beta: Option<SpatialWeight>,
}

impl HumProblem {
    /// Tabulate the weights at time-cell midpoints and set up the problem.
    pub fn build(
        solver: Solver,
        beta: &SpatialWeight,
        params: &WeightParams,
        config: HumConfig,
    ) -> Result<Self> {
        config.validate()?;
        let params = params.with_variant(config.problem.variant());
        let times = cell_midpoints(solver.tree.horizon, solver.tree.depth);
        let fields = carleman_fields(&params, beta, &solver.grid, &times, 0.0)?;
        let fields_eps = carleman_fields(&params, beta, &solver.grid, &times, config.eps)?;
        let mut out = Self::from_fields(solver, &fields, &fields_eps, config)?;
        out.beta = Some(beta.clone());
        Ok(out)
    }

    /// Same discretization and weights with another penalty `ε`.
    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        let beta = self.beta.as_ref().ok_or_else(|| {
            Error::Usage("changing ε needs a problem built from a spatial weight".into())
        })?;
        let config = HumConfig { eps, ..self.config };
        Self::build(self.solver.clone(), beta, &self.params, config)
    }

    pub fn from_fields(
        solver: Solver,
        fields: &CarlemanFields,
        fields_eps: &CarlemanFields,
        config: HumConfig,
    ) -> Result<Self> {
        config.validate()?;
        if fields.params.variant != config.problem.variant() {
            return Err(Error::Parameter(format!(
                "{:?} needs {:?} weights, got {:?}",
                config.problem,
                config.problem.variant(),
                fields.params.variant
            )));
        }
        if fields.rows() != solver.tree.depth || fields.n != solver.grid.n {
            return Err(Error::Shape(format!(
                "weight lattice {}x{} does not match {} cells x {} nodes",
                fields.rows(),
                fields.n,
                solver.tree.depth,
                solver.grid.n
            )));
        }
        let weights = assemble_hum_weights(fields, fields_eps);
        let riccati = match config.problem {
            Problem::ForwardTwoControls => Some(RiccatiInverse::new(
                &solver,
                &weights.state,
                &weights.control_h,
                &weights.control_big_h,
                config.eps,
            )?),
            Problem::BackwardOneControl => None,
        };
        Ok(Self {
            solver,
            config,
            params: fields.params,
            weights,
            riccati,
            beta: None,
        })
    }

    pub fn problem(&self) -> Problem {
        self.config.problem
    }

    pub fn zero_controls(&self) -> Controls {
        Controls::zeros(&self.solver, self.config.problem)
    }

    pub fn zero_data(&self) -> HumData {
        match self.config.problem {
            Problem::ForwardTwoControls => HumData::forward_zero(&self.solver),
            Problem::BackwardOneControl => HumData::backward_zero(&self.solver),
        }
    }

    fn check(&self, x: &Controls, data: &HumData) -> Result<()> {
        if data.problem() != self.config.problem {
            return Err(Error::Usage(format!(
                "{:?} data given to a {:?} problem",
                data.problem(),
                self.config.problem
            )));
        }
        let shape = self.solver.control_shape();
        shape.check_conformable(&x.h, "control h")?;
        match (&x.big_h, self.config.problem) {
            (Some(hh), Problem::ForwardTwoControls) => shape.check_conformable(hh, "control H")?,
            (None, Problem::BackwardOneControl) => {}
            _ => return Err(Error::Usage("control set does not match the problem".into())),
        }
        if !x.is_finite() {
            return Err(Error::Numeric("non-finite control".into()));
        }
        Ok(())
    }

    /// `Σ_k dt E<w_k a_k, b_k>` over levels `0..K` with a per-cell weight table.
    pub fn weighted_inner(&self, w: &WeightTable, a: &AdaptedField, b: &AdaptedField) -> f64 {
        let n = self.solver.grid.n;
        let tree = &self.solver.tree;
        (0..tree.depth)
            .map(|k| {
                let row = w.row(k);
                let s: f64 = a
                    .level(k)
                    .iter()
                    .zip(b.level(k))
                    .enumerate()
                    .map(|(idx, (x, y))| row[idx % n] * x * y)
                    .sum();
                s * tree.probability(k)
            })
            .sum::<f64>()
            * tree.dt
            * self.solver.grid.h
    }

    /// `Σ_k dt E<w_k y, y>` over the state that cell `k` weights: the right
    /// endpoint `y_{k+1}` for the forward problem, where `h_k` first acts, and
    /// the left endpoint `y_k` for the backward one.
    pub fn state_norm_sq(&self, w: &WeightTable, y: &AdaptedField) -> f64 {
        let tree = &self.solver.tree;
        let n = self.solver.grid.n;
        let shift = match self.config.problem {
            Problem::ForwardTwoControls => 1,
            Problem::BackwardOneControl => 0,
        };
        (0..tree.depth)
            .map(|k| {
                let row = w.row(k);
                let s: f64 = y
                    .level(k + shift)
                    .iter()
                    .enumerate()
                    .map(|(idx, v)| row[idx % n] * v * v)
                    .sum();
                s * tree.probability(k + shift)
            })
            .sum::<f64>()
            * tree.dt
            * self.solver.grid.h
    }

    pub(crate) fn weighted(&self, w: &WeightTable, a: &AdaptedField) -> AdaptedField {
        let n = self.solver.grid.n;
        let mut out = a.clone();
        for k in 0..self.solver.tree.depth {
            let row = w.row(k);
            for (idx, v) in out.level_mut(k).iter_mut().enumerate() {
                *v *= row[idx % n];
            }
        }
        out
    }

    fn masked(&self, a: &mut AdaptedField) {
        let n = self.solver.grid.n;
        let mask = &self.solver.grid.mask_d0;
        for k in a.first_level()..=a.last_level() {
            for (idx, v) in a.level_mut(k).iter_mut().enumerate() {
                *v *= mask[idx % n];
            }
        }
    }

    /// Source norm `sqrt(‖F‖²_{W_h} + ‖G‖²_{W_H})`.
    pub fn s_norm(&self, f: &AdaptedField, g: &AdaptedField) -> f64 {
        (self.weighted_inner(&self.weights.control_h, f, f)
            + self.weighted_inner(&self.weights.control_big_h, g, g))
        .sqrt()
    }

    /// Source norm `‖F‖_{W_h}`.
    pub fn s_tilde_norm(&self, f: &AdaptedField) -> f64 {
        self.weighted_inner(&self.weights.control_h, f, f).sqrt()
    }

    /// State, adjoint, gradient and cost at `x`.
    pub fn evaluate(&self, x: &Controls, data: &HumData) -> Result<Evaluation> {
        self.check(x, data)?;
        let eval = match data {
            HumData::Forward { y0, f, g } => self.evaluate_forward(x, y0, f, g)?,
            HumData::Backward { y_terminal, f } => self.evaluate_backward(x, y_terminal, f)?,
        };
        if !eval.cost.is_finite() || !eval.gradient.is_finite() {
            return Err(Error::Numeric("cost or gradient is not finite".into()));
        }
        Ok(eval)
    }

    fn evaluate_forward(
        &self,
        x: &Controls,
        y0: &[f64],
        f: &AdaptedField,
        g: &AdaptedField,
    ) -> Result<Evaluation> {
        let s = &self.solver;
        let w = &self.weights;
        let kk = s.tree.depth;
        let big_h = x.big_h.as_ref().expect("forward controls carry H");
        let sources = crate::pde::SourceTerms {
            f: f.clone(),
            g: g.clone(),
            xi: s.control_shape(),
        };
        let y = s.forward_spde(y0, &sources, &x.h, big_h)?;
        // ∂J/∂y_l per unit dt: Q_{l-1} y_l inside, plus 1/ε at the end
        let n = s.grid.n;
        let last_row = w.state.row(kk - 1);
        let terminal: Vec<f64> = y
            .level(kk)
            .iter()
            .enumerate()
            .map(|(idx, v)| v * (1.0 / self.config.eps + s.tree.dt * last_row[idx % n]))
            .collect();
        let mut xi = s.control_shape();
        for l in 1..kk {
            let row = w.state.row(l - 1);
            for (idx, (o, v)) in xi.level_mut(l).iter_mut().zip(y.level(l)).enumerate() {
                *o = -row[idx % n] * v;
            }
        }
        let (z, zrep) = s.backward_spde(&terminal, Some(&xi))?;
        let mut pairing = z.slice_levels(0, kk - 1);
        pairing.axpy(s.tree.dt, &xi);

        let mut gh = self.weighted(&w.control_h, &x.h);
        gh.axpy(1.0, &pairing);
        self.masked(&mut gh);
        let mut g_big = self.weighted(&w.control_big_h, big_h);
        g_big.axpy(1.0, &zrep);

        let terminal_norm_sq = s.level_inner(&y, &y, kk);
        let cost = 0.5 * self.state_norm_sq(&w.state, &y)
            + 0.5 * self.weighted_inner(&w.control_h, &x.h, &x.h)
            + 0.5 * self.weighted_inner(&w.control_big_h, big_h, big_h)
            + 0.5 * terminal_norm_sq / self.config.eps;
        Ok(Evaluation {
            y,
            state_rep: None,
            adjoint: z,
            adjoint_rep: Some(zrep),
            adjoint_pairing: pairing,
            gradient: Controls {
                h: gh,
                big_h: Some(g_big),
            },
            cost,
            terminal_norm_sq,
        })
    }

    fn evaluate_backward(
        &self,
        x: &Controls,
        y_terminal: &[f64],
        f: &AdaptedField,
    ) -> Result<Evaluation> {
        let s = &self.solver;
        let w = &self.weights;
        let kk = s.tree.depth;
        let n = s.grid.n;
        let (y, yrep) = s.backward_state(y_terminal, Some(f), Some(&x.h))?;
        let y_head = y.slice_levels(0, kk - 1);
        let q0: Vec<f64> = y.level(0).iter().map(|v| v / self.config.eps).collect();
        let src = self.weighted(&w.state, &y_head);
        let q = s.random_forward(&q0, Some(&src))?;
        let mut pairing = s.control_shape();
        for k in 0..kk {
            pairing.set_level(k, s.tree.conditional_expectation(q.level(k + 1), n)?);
        }
        let mut gh = self.weighted(&w.control_h, &x.h);
        gh.axpy(-1.0, &pairing);
        self.masked(&mut gh);

        let terminal_norm_sq = s.level_inner(&y, &y, 0);
        let cost = 0.5 * self.state_norm_sq(&w.state, &y)
            + 0.5 * self.weighted_inner(&w.control_h, &x.h, &x.h)
            + 0.5 * terminal_norm_sq / self.config.eps;
        Ok(Evaluation {
            y,
            state_rep: Some(yrep),
            adjoint: q,
            adjoint_rep: None,
            adjoint_pairing: pairing,
            gradient: Controls { h: gh, big_h: None },
            cost,
            terminal_norm_sq,
        })
    }

    /// Cost only; one state solve and no adjoint.
    pub fn evaluate_cost(&self, x: &Controls, data: &HumData) -> Result<f64> {
        self.check(x, data)?;
        let s = &self.solver;
        let w = &self.weights;
        let kk = s.tree.depth;
        let (y, terminal_level) = match data {
            HumData::Forward { y0, f, g } => {
                let sources = crate::pde::SourceTerms {
                    f: f.clone(),
                    g: g.clone(),
                    xi: s.control_shape(),
                };
                let big_h = x.big_h.as_ref().expect("forward controls carry H");
                (s.forward_spde(y0, &sources, &x.h, big_h)?, kk)
            }
            HumData::Backward { y_terminal, f } => {
                (s.backward_state(y_terminal, Some(f), Some(&x.h))?.0, 0)
            }
        };
        let mut cost = 0.5 * self.state_norm_sq(&w.state, &y)
            + 0.5 * self.weighted_inner(&w.control_h, &x.h, &x.h)
            + 0.5 * s.level_inner(&y, &y, terminal_level) / self.config.eps;
        if let Some(big_h) = &x.big_h {
            cost += 0.5 * self.weighted_inner(&w.control_big_h, big_h, big_h);
        }
        if !cost.is_finite() {
            return Err(Error::Numeric("cost is not finite".into()));
        }
        Ok(cost)
    }

    pub fn gradient(&self, x: &Controls, data: &HumData) -> Result<Controls> {
        Ok(self.evaluate(x, data)?.gradient)
    }

    /// Hessian-vector product: the gradient at `v` with zero data.
    pub fn hessian_apply(&self, v: &Controls) -> Result<Controls> {
        self.gradient(v, &self.zero_data())
    }

    /// CG preconditioner: the Riccati inverse when present, otherwise
    /// [`Self::diagonal_precondition`].
    pub fn precondition(&self, r: &Controls) -> Controls {
        match &self.riccati {
            Some(ric) => ric.apply(&self.solver, r),
            None => self.diagonal_precondition(r),
        }
    }

    /// Diagonal `M⁻¹` with `A ⪰ M`.
    ///
    /// For `h` this is `χ / W_h`. `H_k` enters `y_{k+1}` as a martingale
    /// increment orthogonal to everything else on that level, so the state
    /// term adds exactly `dt Q_k` (plus `1/ε` on the last cell) to a lower
    /// bound of the Hessian.
    pub fn diagonal_precondition(&self, r: &Controls) -> Controls {
        let mut out = self.precondition_h_only(r);
        if let Some(hh) = out.big_h.as_mut() {
            let n = self.solver.grid.n;
            for k in 0..self.solver.tree.depth {
                let diag = self.big_h_diagonal(k);
                for (idx, v) in hh.level_mut(k).iter_mut().enumerate() {
                    *v /= diag[idx % n];
                }
            }
        }
        out
    }

    fn big_h_diagonal(&self, k: usize) -> Vec<f64> {
        let tree = &self.solver.tree;
        let last = if k + 1 == tree.depth { 1.0 / self.config.eps } else { 0.0 };
        self.weights
            .control_big_h
            .row(k)
            .iter()
            .zip(self.weights.state.row(k))
            .map(|(w, q)| w + tree.dt * q + last)
            .collect()
    }

    /// Minimize from zero controls.
    pub fn solve(&self, data: &HumData) -> Result<ControlSolution> {
        self.solve_from(data, &self.zero_controls())
    }

    pub fn solve_from(&self, data: &HumData, x0: &Controls) -> Result<ControlSolution> {
        self.check(x0, data)?;
        let outcome = cg::minimize(self, data, x0)?;
        self.finish(data, outcome)
    }

    fn finish(&self, data: &HumData, outcome: CgOutcome) -> Result<ControlSolution> {
        let eval = self.evaluate(&outcome.x, data)?;
        let w = &self.weights;
        let s = &self.solver;
        let kk = s.tree.depth;
        let x = &outcome.x;
        let state_plain = self.state_norm_sq(&w.state_plain, &eval.y);
        let state_eps = self.state_norm_sq(&w.state, &eval.y);
        let h_norm = self.weighted_inner(&w.control_h, &x.h, &x.h);

        let mut chi_pair = eval.adjoint_pairing.clone();
        self.masked(&mut chi_pair);
        let inv_h = w.control_h.values.iter().map(|v| 1.0 / v).collect::<Vec<_>>();
        let inv_h = WeightTable {
            n: w.control_h.n,
            values: inv_h,
            clamped: 0,
        };
        let (weighted_norms, lhs, rhs) = match data {
            HumData::Forward { y0, f, g } => {
                let big_h = x.big_h.as_ref().expect("forward controls carry H");
                let zrep = eval.adjoint_rep.as_ref().expect("forward adjoint has Z");
                let big_norm = self.weighted_inner(&w.control_big_h, big_h, big_h);
                let inv_big = WeightTable {
                    n: w.control_big_h.n,
                    values: w.control_big_h.values.iter().map(|v| 1.0 / v).collect(),
                    clamped: 0,
                };
                let lhs = self.weighted_inner(&inv_h, &chi_pair, &chi_pair)
                    + self.weighted_inner(&inv_big, zrep, zrep)
                    + state_eps
                    + eval.terminal_norm_sq / self.config.eps;
                let rhs = s.grid.inner(y0, eval.adjoint.level(0))
                    + s.time_inner(f, &eval.adjoint_pairing)
                    + s.time_inner(g, zrep);
                ([state_plain, h_norm, big_norm], lhs, rhs)
            }
            HumData::Backward { f, .. } => {
                let yrep = eval.state_rep.as_ref().expect("backward state has Y");
                let y_norm = self.weighted_inner(&w.martingale, yrep, yrep);
                let lhs = self.weighted_inner(&inv_h, &chi_pair, &chi_pair)
                    + state_eps
                    + eval.terminal_norm_sq / self.config.eps;
                let rhs = s.level_inner(&eval.y, &eval.adjoint, kk)
                    - s.time_inner(f, &eval.adjoint_pairing);
                ([state_plain, y_norm, h_norm], lhs, rhs)
            }
        };
        let scale = lhs.abs().max(rhs.abs());
        let duality_residual = if scale > 0.0 {
            (lhs - rhs).abs() / scale
        } else {
            0.0
        };
        let rep = match self.config.problem {
            Problem::ForwardTwoControls => eval.adjoint_rep.clone(),
            Problem::BackwardOneControl => eval.state_rep.clone(),
        }
        .expect("martingale part present");
        Ok(ControlSolution {
            problem: self.config.problem,
            controls: outcome.x,
            y: eval.y,
            rep,
            adjoint: eval.adjoint,
            terminal_norm_sq: eval.terminal_norm_sq,
            cost: eval.cost,
            weighted_norms,
            cg_iters: outcome.iterations,
            converged: outcome.converged,
            relative_gradient: outcome.relative_gradient,
            cost_gap: outcome.cost_gap,
            duality_residual,
            characterization_residual: outcome.characterization,
            cost_history: outcome.cost_history,
            clamped: self.weights.clamped,
            eps: self.config.eps,
        })
    }

    fn precondition_h_only(&self, r: &Controls) -> Controls {
        let n = self.solver.grid.n;
        let mut out = r.clone();
        let mask = &self.solver.grid.mask_d0;
        for k in 0..self.solver.tree.depth {
            let row = self.weights.control_h.row(k);
            for (idx, v) in out.h.level_mut(k).iter_mut().enumerate() {
                *v *= mask[idx % n] / row[idx % n];
            }
        }
        out
    }
}
