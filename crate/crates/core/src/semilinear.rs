//! Banach fixed-point drivers for the semilinear problems.
//!
//! Forward: `(F, G) ← (f(y), g(y))` with `y` the controlled state of the
//! linear problem driven by `(F, G)`. Backward: `F ← f(y, Y)`. The distance
//! between consecutive source iterates is measured in the weighted source
//! norm of the linear problem.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hum::{ControlSolution, HumData, HumDiagnostics, HumProblem, Problem};
use crate::probability::AdaptedField;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NonlinearityKind {
    Zero,
    /// `L sin s`
    ScaledSin,
    /// `L tanh s`
    ScaledTanh,
    /// `L clamp(s, -1, 1)`
    SaturatedLinear,
}

/// A preset globally Lipschitz nonlinearity vanishing at zero.
///
/// Forward mode uses the same profile for the drift and the diffusion. The
/// backward two-argument form is `f(y, Y) = (φ(y) + φ(Y)) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonlinearitySpec {
    pub kind: NonlinearityKind,
    pub lipschitz: f64,
}

impl NonlinearitySpec {
    pub fn new(kind: NonlinearityKind, lipschitz: f64) -> Result<Self> {
        if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
            return Err(Error::Parameter(format!(
                "Lipschitz constant must be finite and ≥ 0, got {lipschitz}"
            )));
        }
        Ok(Self { kind, lipschitz })
    }

    pub fn zero() -> Self {
        Self {
            kind: NonlinearityKind::Zero,
            lipschitz: 0.0,
        }
    }

    /// The scalar profile `φ`.
    pub fn eval(&self, s: f64) -> f64 {
        let l = self.lipschitz;
        match self.kind {
            NonlinearityKind::Zero => 0.0,
            NonlinearityKind::ScaledSin => l * s.sin(),
            NonlinearityKind::ScaledTanh => l * s.tanh(),
            NonlinearityKind::SaturatedLinear => l * s.clamp(-1.0, 1.0),
        }
    }

    pub fn eval2(&self, s: f64, sbar: f64) -> f64 {
        0.5 * (self.eval(s) + self.eval(sbar))
    }
}

/// Sources produced by one application of the nonlinearity.
#[derive(Debug, Clone, PartialEq)]
pub enum NonlinearSources {
    Forward { f: AdaptedField, g: AdaptedField },
    Backward { f: AdaptedField },
}

/// Pointwise application on levels `0..depth`. Levels of `y` past
/// `depth - 1` are ignored.
pub fn apply_nonlinearity(
    spec: &NonlinearitySpec,
    y: &AdaptedField,
    big_y: Option<&AdaptedField>,
    problem: Problem,
    depth: usize,
) -> Result<NonlinearSources> {
    if y.first_level() != 0 || y.last_level() + 1 < depth || depth == 0 {
        return Err(Error::Shape(format!(
            "state on levels {}..={} does not cover 0..{depth}",
            y.first_level(),
            y.last_level()
        )));
    }
    let head = y.slice_levels(0, depth - 1);
    match problem {
        Problem::ForwardTwoControls => {
            let f = head.map(|v| spec.eval(v));
            Ok(NonlinearSources::Forward { g: f.clone(), f })
        }
        Problem::BackwardOneControl => {
            let big_y = big_y.ok_or_else(|| {
                Error::Usage("the backward nonlinearity needs the martingale part Y".into())
            })?;
            head.check_conformable(big_y, "Y")?;
            Ok(NonlinearSources::Backward {
                f: head.zip_map(big_y, |a, b| spec.eval2(a, b)),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Penalty per iteration; the last entry is reused once exhausted. Empty
    /// keeps the problem's own `ε`.
    pub eps_schedule: Vec<f64>,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 20,
            eps_schedule: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPointIterate {
    pub iter: usize,
    /// Weighted norm of the new source iterate.
    pub source_norm: f64,
    /// Weighted norm of the change from the previous source iterate.
    pub delta: f64,
    /// `delta_j / delta_{j-1}`, from the second iteration on.
    pub ratio: Option<f64>,
    pub solve: HumDiagnostics,
}

#[derive(Debug, Clone)]
pub struct FixedPointTrace {
    pub iterates: Vec<FixedPointIterate>,
    pub contraction_ratios: Vec<f64>,
    pub converged: bool,
    pub diverged: bool,
    pub final_terminal_norm_sq: f64,
    /// Controlled solution of the last linear solve.
    pub solution: ControlSolution,
    /// Sources fed to the last linear solve.
    pub sources: NonlinearSources,
}

impl FixedPointTrace {
    pub fn correction_steps(&self) -> usize {
        self.iterates.len()
    }

    pub fn max_ratio(&self) -> Option<f64> {
        self.contraction_ratios.iter().copied().reduce(f64::max)
    }

    /// Columns `iter, s_norm_delta, ratio, cost, terminal_norm_sq, cg_iters`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter", "s_norm_delta", "ratio", "cost", "terminal_norm_sq", "cg_iters"])?;
        for it in &self.iterates {
            w.write_record([
                it.iter.to_string(),
                format!("{:e}", it.delta),
                it.ratio.map_or_else(String::new, |r| format!("{r:e}")),
                format!("{:e}", it.solve.cost),
                format!("{:e}", it.solve.terminal_norm_sq),
                it.solve.cg_iters.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

// consecutive ratios above one before the run is declared divergent
const DIVERGENCE_RUN: usize = 3;

/// Fixed point of `(F, G) ↦ (f(y), g(y))` starting from zero sources.
pub fn fixed_point_forward(
    problem: &HumProblem,
    y0: &[f64],
    spec: &NonlinearitySpec,
    opts: &FixedPointOptions,
) -> Result<FixedPointTrace> {
    let zero = problem.solver.control_shape();
    fixed_point_forward_from(problem, y0, spec, opts, (zero.clone(), zero))
}

pub fn fixed_point_forward_from(
    problem: &HumProblem,
    y0: &[f64],
    spec: &NonlinearitySpec,
    opts: &FixedPointOptions,
    start: (AdaptedField, AdaptedField),
) -> Result<FixedPointTrace> {
    require(problem, Problem::ForwardTwoControls)?;
    let start = NonlinearSources::Forward {
        f: start.0,
        g: start.1,
    };
    iterate(problem, spec, opts, start, |sources| match sources {
        NonlinearSources::Forward { f, g } => HumData::Forward {
            y0: y0.to_vec(),
            f: f.clone(),
            g: g.clone(),
        },
        NonlinearSources::Backward { .. } => unreachable!("forward driver"),
    })
}

/// Fixed point of `F ↦ f(y, Y)` starting from a zero source.
pub fn fixed_point_backward(
    problem: &HumProblem,
    y_terminal: &[f64],
    spec: &NonlinearitySpec,
    opts: &FixedPointOptions,
) -> Result<FixedPointTrace> {
    let zero = problem.solver.control_shape();
    fixed_point_backward_from(problem, y_terminal, spec, opts, zero)
}

pub fn fixed_point_backward_from(
    problem: &HumProblem,
    y_terminal: &[f64],
    spec: &NonlinearitySpec,
    opts: &FixedPointOptions,
    start: AdaptedField,
) -> Result<FixedPointTrace> {
    require(problem, Problem::BackwardOneControl)?;
    iterate(problem, spec, opts, NonlinearSources::Backward { f: start }, |sources| {
        match sources {
            NonlinearSources::Backward { f } => HumData::Backward {
                y_terminal: y_terminal.to_vec(),
                f: f.clone(),
            },
            NonlinearSources::Forward { .. } => unreachable!("backward driver"),
        }
    })
}

fn require(problem: &HumProblem, expected: Problem) -> Result<()> {
    if problem.problem() != expected {
        return Err(Error::Usage(format!(
            "{expected:?} fixed point needs a {expected:?} problem, got {:?}",
            problem.problem()
        )));
    }
    Ok(())
}

fn source_norm(problem: &HumProblem, s: &NonlinearSources) -> f64 {
    match s {
        NonlinearSources::Forward { f, g } => problem.s_norm(f, g),
        NonlinearSources::Backward { f } => problem.s_tilde_norm(f),
    }
}

fn difference(a: &NonlinearSources, b: &NonlinearSources) -> NonlinearSources {
    match (a, b) {
        (NonlinearSources::Forward { f, g }, NonlinearSources::Forward { f: f2, g: g2 }) => {
            NonlinearSources::Forward {
                f: f.zip_map(f2, |x, y| x - y),
                g: g.zip_map(g2, |x, y| x - y),
            }
        }
        (NonlinearSources::Backward { f }, NonlinearSources::Backward { f: f2 }) => {
            NonlinearSources::Backward {
                f: f.zip_map(f2, |x, y| x - y),
            }
        }
        _ => unreachable!("sources of one driver share a kind"),
    }
}

fn iterate(
    problem: &HumProblem,
    spec: &NonlinearitySpec,
    opts: &FixedPointOptions,
    start: NonlinearSources,
    data_for: impl Fn(&NonlinearSources) -> HumData,
) -> Result<FixedPointTrace> {
    if !(opts.tol >= 0.0) || opts.max_iter == 0 {
        return Err(Error::Parameter("fixed point needs tol ≥ 0 and max_iter ≥ 1".into()));
    }
    let mut scheduled: Option<(f64, HumProblem)> = None;
    let mut sources = start;
    let mut iterates = Vec::new();
    let mut ratios = Vec::new();
    let mut first_delta = None;
    let mut above_one = 0;
    let mut converged = false;
    let mut diverged = false;
    let mut last_solution = None;

    for iter in 1..=opts.max_iter {
        let current = match opts.eps_schedule.get(iter - 1).or(opts.eps_schedule.last()) {
            None => problem,
            Some(&eps) => {
                if scheduled.as_ref().is_none_or(|(e, _)| *e != eps) {
                    scheduled = Some((eps, problem.with_eps(eps)?));
                }
                &scheduled.as_ref().expect("set above").1
            }
        };
        let solution = current.solve(&data_for(&sources))?;
        let next = apply_nonlinearity(
            spec,
            &solution.y,
            Some(&solution.rep),
            current.problem(),
            current.solver.tree.depth,
        )?;
        let delta = source_norm(problem, &difference(&next, &sources));
        let ratio = iterates
            .last()
            .map(|prev: &FixedPointIterate| if prev.delta > 0.0 { delta / prev.delta } else { 0.0 });
        if let Some(r) = ratio {
            ratios.push(r);
            above_one = if r > 1.0 { above_one + 1 } else { 0 };
        }
        iterates.push(FixedPointIterate {
            iter,
            source_norm: source_norm(problem, &next),
            delta,
            ratio,
            solve: solution.diagnostics(),
        });
        let reference = *first_delta.get_or_insert(delta);
        last_solution = Some((solution, std::mem::replace(&mut sources, next)));
        if delta <= opts.tol * reference {
            converged = true;
            break;
        }
        if above_one >= DIVERGENCE_RUN {
            diverged = true;
            break;
        }
    }
    let (solution, used) = last_solution.expect("at least one iteration");
    Ok(FixedPointTrace {
        iterates,
        contraction_ratios: ratios,
        converged,
        diverged,
        final_terminal_norm_sq: solution.terminal_norm_sq,
        solution,
        sources: used,
    })
}
