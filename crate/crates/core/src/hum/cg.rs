//! Preconditioned conjugate gradient on the control space.

use super::{Controls, HumData, HumProblem};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Controls,
    pub iterations: usize,
    pub converged: bool,
    /// `‖g‖_{M⁻¹} / ‖g₀‖_{M⁻¹}` at the returned iterate, from a fresh
    /// gradient, with `M` the diagonal control weights.
    pub relative_gradient: f64,
    /// `½‖g‖²_P / J(x)` with `P` the CG preconditioner; the relative cost gap
    /// when `P = A⁻¹`.
    pub cost_gap: f64,
    /// `‖g_h‖_{M⁻¹} / ‖W_h h‖_{M⁻¹}`.
    pub characterization: f64,
    pub cost_history: Vec<f64>,
}

// restarts allowed when the recursive residual drifts from the true one
const MAX_RESTARTS: usize = 5;
// iterations without halving a monitored residual before giving up on it
const STAGNATION_WINDOW: usize = 10;

struct Measures {
    rel: f64,
    gap: f64,
    characterization: f64,
}

impl Measures {
    fn converged(&self, tol: f64) -> bool {
        self.rel <= tol && self.gap <= tol
    }
}

/// Counts iterations since a quantity last dropped below half its best.
struct Progress {
    best: f64,
    since: usize,
}

impl Progress {
    fn new(v: f64) -> Self {
        Self { best: v, since: 0 }
    }

    fn update(&mut self, v: f64) {
        if v < 0.5 * self.best {
            self.best = v;
            self.since = 0;
        } else {
            self.since += 1;
        }
    }

    fn stalled(&self) -> bool {
        self.since >= STAGNATION_WINDOW
    }
}

/// Minimize the quadratic functional starting at `x0`.
///
/// The functional is `J(x) = c - <b, x> + ½ <x, A x>` with `g = A x - b`.
/// The recorded cost is evaluated directly at each iterate. Convergence
/// means relative gradient `≤ tol` in the diagonal metric and `½‖g‖²_P ≤
/// tol J(x)`. After that the iteration continues while the characterization
/// residual is above `10 tol` and still improving. A run whose gradient
/// stops improving ends unconverged.
pub fn minimize(problem: &HumProblem, data: &HumData, x0: &Controls) -> Result<CgOutcome> {
    let solver = &problem.solver;
    let tol = problem.config.cg_tol;
    let max_iter = problem.config.cg_max_iter;
    let diag_norm =
        |v: &Controls| v.inner(&problem.diagonal_precondition(v), solver).max(0.0).sqrt();

    let at_zero = problem.evaluate(&problem.zero_controls(), data)?;
    let c = at_zero.cost;
    let b_norm = diag_norm(&at_zero.gradient);

    let mut x = x0.clone();
    if b_norm == 0.0 && x0.is_zero() {
        return Ok(CgOutcome {
            x,
            iterations: 0,
            converged: true,
            relative_gradient: 0.0,
            cost_gap: 0.0,
            characterization: 0.0,
            cost_history: vec![c],
        });
    }

    let mut g = if x0.is_zero() {
        at_zero.gradient.clone()
    } else {
        problem.gradient(&x, data)?
    };
    let reference = if b_norm > 0.0 { b_norm } else { diag_norm(&g) };
    let mut cost = if x0.is_zero() { c } else { problem.evaluate_cost(&x, data)? };
    let mut history = vec![cost];
    let mut iterations = 0;
    let mut restarts = 0;

    let measure = |x: &Controls, g: &Controls, rz: f64, cost: f64| {
        let gn = diag_norm(g);
        let gh = Controls {
            h: g.h.clone(),
            big_h: None,
        };
        let wh = Controls {
            h: problem.weighted(&problem.weights.control_h, &x.h),
            big_h: None,
        };
        let whn = diag_norm(&wh);
        Measures {
            rel: gn / reference,
            gap: if cost != 0.0 { 0.5 * rz.max(0.0) / cost.abs() } else { 0.0 },
            characterization: if whn > 0.0 { diag_norm(&gh) / whn } else { gn / reference },
        }
    };

    loop {
        let mut r = g.scaled(-1.0);
        let mut z = problem.precondition(&r);
        let mut rz = r.inner(&z, solver);
        let mut p = z.clone();
        let mut m = measure(&x, &g, rz, cost);
        let mut grad_progress = Progress::new(m.rel);
        let mut char_progress = Progress::new(m.characterization);
        let more = |m: &Measures, gp: &Progress, cp: &Progress| {
            if m.converged(tol) {
                m.characterization > 10.0 * tol && !cp.stalled()
            } else {
                !gp.stalled()
            }
        };

        while iterations < max_iter && more(&m, &grad_progress, &char_progress) {
            let ap = problem.hessian_apply(&p)?;
            let pap = p.inner(&ap, solver);
            if !(pap > 0.0) {
                if pap == 0.0 {
                    break;
                }
                return Err(Error::Numeric(format!(
                    "Hessian is not positive along the search direction (pAp = {pap:e})"
                )));
            }
            let alpha = rz / pap;
            x.axpy(alpha, &p);
            g.axpy(alpha, &ap);
            r.axpy(-alpha, &ap);
            z = problem.precondition(&r);
            let rz_new = r.inner(&z, solver);
            iterations += 1;
            cost = problem.evaluate_cost(&x, data)?;
            history.push(cost);
            m = measure(&x, &g, rz_new, cost);
            grad_progress.update(m.rel);
            char_progress.update(m.characterization);
            let beta = rz_new / rz;
            rz = rz_new;
            p.scale(beta);
            p.axpy(1.0, &z);
        }

        // recompute the gradient from scratch to guard against drift
        g = problem.gradient(&x, data)?;
        let gpg = g.inner(&problem.precondition(&g), solver);
        let fresh = measure(&x, &g, gpg, cost);
        let converged = fresh.converged(tol);
        let finished = if converged {
            fresh.characterization <= 10.0 * tol || char_progress.stalled()
        } else {
            grad_progress.stalled()
        };
        if finished || iterations >= max_iter || restarts >= MAX_RESTARTS {
            return Ok(CgOutcome {
                x,
                iterations,
                converged,
                relative_gradient: fresh.rel,
                cost_gap: fresh.gap,
                characterization: fresh.characterization,
                cost_history: history,
            });
        }
        restarts += 1;
    }
}
