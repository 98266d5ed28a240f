//! Experiment runners. Each writes its artifacts into the output directory
//! and reports whether every solve converged.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use nullspde_core::audit::{self, AuditOptions, AuditSetup, Inequality};
use nullspde_core::pde::write_trajectory_csv;
use nullspde_core::rng::{smooth_field, smooth_vector, Role};
use nullspde_core::semilinear::{self, FixedPointOptions, FixedPointTrace, NonlinearitySpec};
use nullspde_core::weights::{carleman_fields, cell_midpoints, WeightTable};
use nullspde_core::{AdaptedField, ControlSolution, HumData, HumProblem, Problem, Variant};

use crate::config::{
    Diagnostic, Experiment, ExperimentConfig, Setup, SourceMode, DEFAULT_EPS_LIST,
};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid configuration ({} problems)", .0.len())]
    Validation(Vec<Diagnostic>),
    #[error(transparent)]
    Core(#[from] nullspde_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        use nullspde_core::Error as E;
        match self {
            RunError::Validation(_) => 2,
            RunError::Core(E::Numeric(_)) => 3,
            RunError::Core(E::Domain(_) | E::Parameter(_) | E::Geometry(_) | E::Shape(_) | E::Usage(_)) => 2,
            RunError::Core(_) | RunError::Io(_) => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub experiment: Experiment,
    pub converged: bool,
    pub outputs: Vec<String>,
    /// Headline numbers of the run, also stored in the manifest.
    pub summary: Value,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.converged {
            0
        } else {
            4
        }
    }
}

struct Out {
    dir: PathBuf,
    files: Vec<String>,
}

impl Out {
    fn create(dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn file(&mut self, name: &str) -> std::io::Result<BufWriter<File>> {
        self.files.push(name.to_string());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), RunError> {
        let mut w = self.file(name)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(std::io::Error::from)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}

/// Run the configured experiment; the manifest is written last.
pub fn run(config: &ExperimentConfig) -> Result<RunSummary, RunError> {
    let diags = crate::config::validate(config);
    if crate::config::has_errors(&diags) {
        return Err(RunError::Validation(diags));
    }
    let setup = Setup::build(config)?;
    let mut out = Out::create(&config.out_dir)?;
    let (converged, summary) = match config.experiment {
        Experiment::WeightsDump => weights_dump(config, &setup, &mut out)?,
        Experiment::ForwardLinear => linear(config, &setup, &mut out, Problem::ForwardTwoControls)?,
        Experiment::BackwardLinear => linear(config, &setup, &mut out, Problem::BackwardOneControl)?,
        Experiment::ForwardSemilinear => {
            semilinear_run(config, &setup, &mut out, Problem::ForwardTwoControls)?
        }
        Experiment::BackwardSemilinear => {
            semilinear_run(config, &setup, &mut out, Problem::BackwardOneControl)?
        }
        Experiment::CarlemanAudit => carleman_audit(config, &setup, &mut out)?,
        Experiment::EpsSweep => eps_sweep(config, &setup, &mut out)?,
    };
    let outputs = out.files.clone();
    let manifest = json!({
        "tool": "nullspde",
        "versions": {
            "nullspde-cli": env!("CARGO_PKG_VERSION"),
            "nullspde-core": nullspde_core::VERSION,
        },
        "experiment": config.experiment,
        "seed": config.seed,
        "config": config,
        "resolved": {
            "lambda": setup.params.lambda,
            "sigma": setup.params.sigma(),
            "dt": setup.solver.tree.dt,
            "h": setup.solver.grid.h,
        },
        "converged": converged,
        "outputs": outputs,
        "summary": summary,
    });
    out.json("manifest.json", &manifest)?;
    Ok(RunSummary {
        experiment: config.experiment,
        converged,
        outputs: out.files,
        summary,
    })
}

fn weights_dump(
    c: &ExperimentConfig,
    setup: &Setup,
    out: &mut Out,
) -> Result<(bool, Value), RunError> {
    let times = cell_midpoints(c.weights.horizon, c.tree.depth);
    let mut info = Vec::new();
    for (variant, name) in [
        (Variant::ForwardControl, "weights.csv"),
        (Variant::BackwardControl, "weights_mirrored.csv"),
    ] {
        let params = setup.params.with_variant(variant);
        let fields = carleman_fields(&params, &setup.beta, &setup.solver.grid, &times, 0.0)?;
        fields.write_csv(&setup.solver.grid, out.file(name)?)?;
        let (lo, hi) = fields
            .ell
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        info.push(json!({
            "file": name,
            "variant": variant,
            "rows": fields.rows() * fields.n,
            "kappa": fields.kappa,
            "log_range": hi - lo,
        }));
    }
    let summary = json!({
        "lambda": setup.params.lambda,
        "sigma": setup.params.sigma(),
        "alpha": setup.beta.alpha,
        "time_nodes": times,
        "tables": info,
    });
    out.json("weights.json", &summary)?;
    Ok((true, summary))
}

/// `field / sqrt(W)` level by level, so the source carries O(1) weighted norm.
fn balanced(mut field: AdaptedField, table: &WeightTable, depth: usize) -> AdaptedField {
    let n = table.n;
    for k in 0..depth {
        let row = table.row(k);
        for (idx, v) in field.level_mut(k).iter_mut().enumerate() {
            *v /= row[idx % n].sqrt();
        }
    }
    field
}

fn initial_datum(c: &ExperimentConfig, p: &HumProblem) -> Vec<f64> {
    smooth_vector(c.seed, Role::InitialDatum, 0, &p.solver.grid, c.data.modes)
}

fn terminal_datum(c: &ExperimentConfig, p: &HumProblem) -> Vec<f64> {
    let s = &p.solver;
    let k = s.tree.depth;
    let leaves = AdaptedField::zeros(s.n(), k, k);
    smooth_field(c.seed, Role::TerminalDatum, 0, &leaves, &s.grid, c.data.modes)
        .level(k)
        .to_vec()
}

/// Linear data from the seed: random initial or terminal datum, and
/// balanced sources when requested.
pub fn linear_data(c: &ExperimentConfig, p: &HumProblem) -> HumData {
    let s = &p.solver;
    let depth = s.tree.depth;
    let source = |role: Role, table: &WeightTable| match c.data.sources {
        SourceMode::None => s.control_shape(),
        SourceMode::Balanced => balanced(
            smooth_field(c.seed, role, 0, &s.control_shape(), &s.grid, c.data.modes),
            table,
            depth,
        ),
    };
    let w = &p.weights;
    match p.problem() {
        Problem::ForwardTwoControls => HumData::Forward {
            y0: initial_datum(c, p),
            f: source(Role::Drift, &w.control_h),
            g: source(Role::Diffusion, &w.control_big_h),
        },
        Problem::BackwardOneControl => HumData::Backward {
            y_terminal: terminal_datum(c, p),
            f: source(Role::BackwardSource, &w.control_h),
        },
    }
}

fn write_controls<W: Write>(sol: &ControlSolution, out: W) -> Result<(), RunError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["level", "node", "x_index", "h", "H"])?;
    let h = &sol.controls.h;
    let n = h.n();
    for k in h.first_level()..=h.last_level() {
        for j in 0..(1usize << k) {
            let hv = h.node(k, j);
            let big = sol.controls.big_h.as_ref().map(|b| b.node(k, j));
            for i in 0..n {
                w.serialize((k, j, i, hv[i], big.map(|b| b[i])))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn write_cost_history<W: Write>(history: &[f64], out: W) -> Result<(), RunError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iter", "cost"])?;
    for (i, c) in history.iter().enumerate() {
        w.serialize((i, c))?;
    }
    w.flush()?;
    Ok(())
}

impl From<csv::Error> for RunError {
    fn from(e: csv::Error) -> Self {
        RunError::Core(e.into())
    }
}

fn linear(
    c: &ExperimentConfig,
    setup: &Setup,
    out: &mut Out,
    problem: Problem,
) -> Result<(bool, Value), RunError> {
    let p = setup.problem(c, problem, c.hum.eps)?;
    let data = linear_data(c, &p);
    let sol = p.solve(&data)?;
    write_trajectory_csv(&sol.y, Some(&sol.rep), out.file("trajectory.csv")?)?;
    write_controls(&sol, out.file("controls.csv")?)?;
    write_cost_history(&sol.cost_history, out.file("cost_history.csv")?)?;
    let summary = json!({
        "problem": problem,
        "diagnostics": sol.diagnostics(),
    });
    out.json("solution.json", &summary)?;
    Ok((sol.converged, summary))
}

fn semilinear_run(
    c: &ExperimentConfig,
    setup: &Setup,
    out: &mut Out,
    problem: Problem,
) -> Result<(bool, Value), RunError> {
    let p = setup.problem(c, problem, c.hum.eps)?;
    let spec = NonlinearitySpec::new(c.nonlinearity.kind, c.nonlinearity.lipschitz)?;
    let opts = FixedPointOptions {
        tol: c.fixed_point.tol,
        max_iter: c.fixed_point.max_iter,
        eps_schedule: c.fixed_point.eps_schedule.clone(),
    };
    let zero = p.solver.control_shape();
    let (trace, baseline): (FixedPointTrace, ControlSolution) = match problem {
        Problem::ForwardTwoControls => {
            let y0 = initial_datum(c, &p);
            let linear = HumData::Forward {
                y0: y0.clone(),
                f: zero.clone(),
                g: zero,
            };
            (semilinear::fixed_point_forward(&p, &y0, &spec, &opts)?, p.solve(&linear)?)
        }
        Problem::BackwardOneControl => {
            let yt = terminal_datum(c, &p);
            let linear = HumData::Backward {
                y_terminal: yt.clone(),
                f: zero,
            };
            (semilinear::fixed_point_backward(&p, &yt, &spec, &opts)?, p.solve(&linear)?)
        }
    };
    trace.write_csv(out.file("fixed_point.csv")?)?;
    write_trajectory_csv(&trace.solution.y, Some(&trace.solution.rep), out.file("trajectory.csv")?)?;
    let linear_terminal = baseline.terminal_norm_sq;
    let converged = trace.converged && trace.iterates.iter().all(|i| i.solve.converged);
    let summary = json!({
        "problem": problem,
        "nonlinearity": spec,
        "converged": trace.converged,
        "diverged": trace.diverged,
        "correction_steps": trace.correction_steps(),
        "contraction_ratios": trace.contraction_ratios,
        "max_ratio": trace.max_ratio(),
        "final_terminal_norm_sq": trace.final_terminal_norm_sq,
        "linear_terminal_norm_sq": linear_terminal,
        "terminal_ratio_to_linear": if linear_terminal > 0.0 {
            Some(trace.final_terminal_norm_sq / linear_terminal)
        } else {
            None
        },
        "final_solve": trace.solution.diagnostics(),
        "linear_solve": baseline.diagnostics(),
    });
    out.json("summary.json", &summary)?;
    Ok((converged, summary))
}

fn carleman_audit(
    c: &ExperimentConfig,
    setup: &Setup,
    out: &mut Out,
) -> Result<(bool, Value), RunError> {
    let a = &c.audit;
    let opts = AuditOptions {
        samples: a.samples,
        seed: c.seed,
        modes: a.modes,
        martingale_xi_power: a.martingale_xi_power,
        ..Default::default()
    };
    let audit_setup = AuditSetup {
        solver: &setup.solver,
        beta: &setup.beta,
        params: setup.params,
    };
    let mut reports = Vec::new();
    for &ineq in &a.inequalities {
        let report = audit::audit(ineq, &audit_setup, &opts)?;
        out.json(&format!("audit_{}.json", ineq.name()), &report)?;
        report.write_csv(out.file(&format!("audit_{}.csv", ineq.name()))?)?;
        reports.push(json!({
            "inequality": ineq,
            "max_ratio": report.max_ratio,
            "median_ratio": report.median_ratio,
            "zero_records": report.zero_records,
            "counterexamples": report.counterexamples,
        }));
    }
    let mut sweep = Vec::new();
    if !a.lambda_factors.is_empty() {
        let points = audit::lambda_sweep(
            Inequality::DeterministicForward,
            &audit_setup,
            &opts,
            &a.lambda_factors,
        )?;
        let mut w = csv::Writer::from_writer(out.file("lambda_sweep.csv")?);
        w.write_record(["factor", "lambda", "max_ratio", "median_ratio"])?;
        for (f, pt) in a.lambda_factors.iter().zip(&points) {
            w.serialize((f, pt.lambda, pt.max_ratio, pt.median_ratio))?;
        }
        w.flush()?;
        sweep = points;
    }
    Ok((true, json!({ "audits": reports, "lambda_sweep": sweep })))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub eps: f64,
    pub terminal_norm_sq: f64,
    pub cost: f64,
    pub weighted_state: f64,
    pub weighted_h: f64,
    pub weighted_big_h: f64,
    /// `2 J_ε / ‖y0‖²`: the `θ_ε`-weighted state and control norms plus
    /// `E‖y(T)‖²/ε`, per unit initial energy.
    pub constant: f64,
    pub cg_iters: usize,
    pub converged: bool,
    pub slope: f64,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

pub fn sweep_rows(c: &ExperimentConfig, setup: &Setup) -> Result<Vec<SweepRow>, RunError> {
    let eps_list = c.hum.eps_list.clone().unwrap_or_else(|| DEFAULT_EPS_LIST.to_vec());
    let mut rows = eps_list
        .par_iter()
        .map(|&eps| {
            let p = setup.problem(c, Problem::ForwardTwoControls, eps)?;
            let data = linear_data(c, &p);
            let HumData::Forward { y0, .. } = &data else {
                unreachable!("forward data")
            };
            let y0_norm = p.solver.grid.norm_sq(y0);
            let sol = p.solve(&data)?;
            let [ws, wh, wbig] = sol.weighted_norms;
            Ok(SweepRow {
                eps,
                terminal_norm_sq: sol.terminal_norm_sq,
                cost: sol.cost,
                weighted_state: ws,
                weighted_h: wh,
                weighted_big_h: wbig,
                constant: 2.0 * sol.cost / y0_norm,
                cg_iters: sol.cg_iters,
                converged: sol.converged,
                slope: f64::NAN,
            })
        })
        .collect::<Result<Vec<_>, nullspde_core::Error>>()?;
    let slope = if rows.len() >= 2 {
        let eps: Vec<f64> = rows.iter().map(|r| r.eps).collect();
        let term: Vec<f64> = rows.iter().map(|r| r.terminal_norm_sq).collect();
        log_log_slope(&eps, &term)
    } else {
        f64::NAN
    };
    rows.iter_mut().for_each(|r| r.slope = slope);
    Ok(rows)
}

fn eps_sweep(
    c: &ExperimentConfig,
    setup: &Setup,
    out: &mut Out,
) -> Result<(bool, Value), RunError> {
    let rows = sweep_rows(c, setup)?;
    let mut w = csv::Writer::from_writer(out.file("sweep.csv")?);
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let (lo, hi) = rows
        .iter()
        .fold((f64::INFINITY, 0f64), |(a, b), r| (a.min(r.constant), b.max(r.constant)));
    let summary = json!({
        "slope": rows.first().map(|r| r.slope),
        "constant_min": lo,
        "constant_max": hi,
        "constant_spread": hi / lo,
    });
    out.json("sweep.json", &summary)?;
    Ok((rows.iter().all(|r| r.converged), summary))
}
