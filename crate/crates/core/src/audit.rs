//! Both sides of the Carleman inequalities on sampled discrete solutions.
//!
//! Every term is a weighted squared norm `E ∬ λ^a μ^b ξ^c θ² |u|²` of a state,
//! its forward-difference gradient, a martingale part or a source. Weights
//! are formed in log space with the shared offset `κ`, so a change of `κ`
//! rescales all terms by the same factor and leaves the ratios unchanged.
//!
//! Interior integrals use the weights at cell midpoints. A cell is paired
//! with the level the scheme computes from it: the left endpoint for the
//! backward equation, the right endpoint for the forward ones. Trace terms
//! use the root (`t = 0`) or leaf (`t = T`) level.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pde::{DenseHeat, Solver};
use crate::probability::AdaptedField;
use crate::rng::{smooth_field, smooth_rows, smooth_vector, Role};
use crate::weights::{
    carleman_fields, cell_midpoints, CarlemanFields, SpatialWeight, Variant, WeightExponents,
    WeightParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Inequality {
    /// Backward stochastic heat equation, weight bounded at `t = 0`.
    BackwardStochastic,
    /// Deterministic heat equation with mirrored weights.
    DeterministicForward,
    /// Forward equation with random source and no noise term.
    RandomForward,
    /// Forward stochastic heat equation with mirrored weights.
    ForwardStochastic,
}

impl Inequality {
    pub const ALL: [Inequality; 4] = [
        Inequality::BackwardStochastic,
        Inequality::DeterministicForward,
        Inequality::RandomForward,
        Inequality::ForwardStochastic,
    ];

    pub fn variant(self) -> Variant {
        match self {
            Inequality::BackwardStochastic => Variant::ForwardControl,
            _ => Variant::BackwardControl,
        }
    }

    fn trace_time(self, horizon: f64) -> f64 {
        match self {
            Inequality::BackwardStochastic => 0.0,
            _ => horizon,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Inequality::BackwardStochastic => "backward-stochastic",
            Inequality::DeterministicForward => "deterministic-forward",
            Inequality::RandomForward => "random-forward",
            Inequality::ForwardStochastic => "forward-stochastic",
        }
    }

    /// Term list, left-hand side first.
    pub fn terms(self) -> Vec<TermSpec> {
        use Quantity::{Gradient, Value};
        use Region::{Observation, Whole};
        use Side::{Lhs, Rhs};
        use Slot::{Diffusion, Martingale, Source, State};
        use Span::{Interior, Trace};
        let t = TermSpec::new;
        match self {
            Inequality::BackwardStochastic => vec![
                t("trace_grad_z", Lhs, State, Gradient, Whole, Trace, [0.0, 0.0, 0.0], false),
                t("trace_z", Lhs, State, Value, Whole, Trace, [2.0, 3.0, 0.0], true),
                t("grad_z", Lhs, State, Gradient, Whole, Interior, [1.0, 2.0, 1.0], false),
                t("z", Lhs, State, Value, Whole, Interior, [3.0, 4.0, 3.0], false),
                t("z_d0", Rhs, State, Value, Observation, Interior, [3.0, 4.0, 3.0], false),
                t("source", Rhs, Source, Value, Whole, Interior, [0.0, 0.0, 0.0], false),
                t("zbar", Rhs, Martingale, Value, Whole, Interior, [2.0, 2.0, 3.0], false),
            ],
            Inequality::DeterministicForward | Inequality::RandomForward => vec![
                t("grad_q", Lhs, State, Gradient, Whole, Interior, [1.0, 2.0, 1.0], false),
                t("q", Lhs, State, Value, Whole, Interior, [3.0, 4.0, 3.0], false),
                t("trace_grad_q", Lhs, State, Gradient, Whole, Trace, [0.0, 0.0, 0.0], false),
                t("trace_q", Lhs, State, Value, Whole, Trace, [2.0, 3.0, 0.0], true),
                t("source", Rhs, Source, Value, Whole, Interior, [0.0, 0.0, 0.0], false),
                t("q_d0", Rhs, State, Value, Observation, Interior, [3.0, 4.0, 3.0], false),
            ],
            Inequality::ForwardStochastic => vec![
                t("grad_q", Lhs, State, Gradient, Whole, Interior, [1.0, 2.0, 1.0], false),
                t("q", Lhs, State, Value, Whole, Interior, [3.0, 4.0, 3.0], false),
                t("trace_q", Lhs, State, Value, Whole, Trace, [2.0, 2.0, 0.0], false),
                t("drift_source", Rhs, Source, Value, Whole, Interior, [0.0, 0.0, 0.0], false),
                t("diffusion_source", Rhs, Diffusion, Value, Whole, Interior, [2.0, 2.0, 2.0], false),
                t("q_d0", Rhs, State, Value, Observation, Interior, [3.0, 4.0, 3.0], false),
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    Lhs,
    Rhs,
}

/// Which field of a sample a term reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Slot {
    State,
    Martingale,
    /// `Ξ`, `g` or `G₁`.
    Source,
    /// `G₂`.
    Diffusion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Quantity {
    Value,
    Gradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Region {
    Whole,
    Observation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Span {
    Interior,
    Trace,
}

/// `E ∫ λ^a μ^b ξ^c θ² |u|²`, times `e^{2μ(6m+1)}` when `trace_const` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TermSpec {
    pub name: &'static str,
    pub side: Side,
    pub slot: Slot,
    pub quantity: Quantity,
    pub region: Region,
    pub span: Span,
    /// Powers of `λ`, `μ`, `ξ`.
    pub powers: [f64; 3],
    pub trace_const: bool,
}

impl TermSpec {
    #[allow(clippy::too_many_arguments)]
    fn new(
        name: &'static str,
        side: Side,
        slot: Slot,
        quantity: Quantity,
        region: Region,
        span: Span,
        powers: [f64; 3],
        trace_const: bool,
    ) -> Self {
        Self {
            name,
            side,
            slot,
            quantity,
            region,
            span,
            powers,
            trace_const,
        }
    }

    fn exponents(&self, params: &WeightParams, xi_override: Option<f64>) -> WeightExponents {
        let xi = match (self.slot, xi_override) {
            (Slot::Martingale, Some(p)) => p,
            _ => self.powers[2],
        };
        let e = WeightExponents::carleman(2.0, self.powers[0], self.powers[1], xi, params);
        if self.trace_const {
            e.with_extra(2.0 * params.mu * (6.0 * params.m + 1.0))
        } else {
            e
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditOptions {
    pub samples: usize,
    pub seed: u64,
    /// Sine modes of the random data.
    pub modes: usize,
    /// Added to the default offset `κ = max ℓ`.
    pub kappa_shift: f64,
    /// Replaces the `ξ` power of the martingale term.
    pub martingale_xi_power: Option<f64>,
    /// Multiplies all random data.
    pub data_scale: f64,
    /// Drop the diffusion source of the forward stochastic audit.
    pub no_diffusion_source: bool,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self {
            samples: 20,
            seed: 42,
            modes: 8,
            kappa_shift: 0.0,
            martingale_xi_power: None,
            data_scale: 1.0,
            no_diffusion_source: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SampleKind {
    Regular,
    /// Both sides vanish.
    Zero,
    /// Right-hand side vanishes, left-hand side does not.
    Counterexample,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditSample {
    pub sample_id: usize,
    pub kind: SampleKind,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub inequality: Inequality,
    pub samples: usize,
    pub lhs_names: Vec<&'static str>,
    pub rhs_names: Vec<&'static str>,
    pub records: Vec<AuditSample>,
    pub ratios: Vec<f64>,
    pub max_ratio: Option<f64>,
    pub median_ratio: Option<f64>,
    pub zero_records: usize,
    pub counterexamples: usize,
    pub params: WeightParams,
    pub kappa: f64,
}

impl AuditReport {
    /// Columns `sample_id`, the left then right term names, `ratio`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["sample_id".to_string()];
        header.extend(self.lhs_names.iter().map(|s| format!("lhs_{s}")));
        header.extend(self.rhs_names.iter().map(|s| format!("rhs_{s}")));
        header.push("ratio".into());
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.sample_id.to_string()];
            row.extend(r.lhs.iter().chain(&r.rhs).map(|v| format!("{v:e}")));
            row.push(match (r.kind, r.ratio) {
                (_, Some(q)) => format!("{q:e}"),
                (SampleKind::Counterexample, None) => "inf".into(),
                _ => String::new(),
            });
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Discretization and weights shared by all samples of one audit.
pub struct AuditSetup<'a> {
    pub solver: &'a Solver,
    pub beta: &'a SpatialWeight,
    pub params: WeightParams,
}

/// Fields of one sample: interior slices per cell and the trace level.
struct SampleFields {
    state: Vec<Vec<f64>>,
    trace: Vec<f64>,
    martingale: Option<Vec<Vec<f64>>>,
    source: Vec<Vec<f64>>,
    diffusion: Option<Vec<Vec<f64>>>,
}

struct Weights {
    interior: CarlemanFields,
    trace: CarlemanFields,
}

pub fn audit(inequality: Inequality, setup: &AuditSetup, opts: &AuditOptions) -> Result<AuditReport> {
    if opts.samples == 0 {
        return Err(Error::Parameter("an audit needs at least one sample".into()));
    }
    let solver = setup.solver;
    let params = setup.params.with_variant(inequality.variant());
    let horizon = solver.tree.horizon;
    if (params.horizon - horizon).abs() > 1e-12 * horizon {
        return Err(Error::Parameter(format!(
            "weights are built for T = {}, the tree has T = {horizon}",
            params.horizon
        )));
    }
    let times = cell_midpoints(horizon, solver.tree.depth);
    let interior = carleman_fields(&params, setup.beta, &solver.grid, &times, 0.0)?;
    let kappa = interior.kappa + opts.kappa_shift;
    let interior = interior.with_kappa(kappa);
    let trace = carleman_fields(
        &params,
        setup.beta,
        &solver.grid,
        &[inequality.trace_time(horizon)],
        0.0,
    )?
    .with_kappa(kappa);
    let weights = Weights { interior, trace };
    let terms = inequality.terms();
    let dense = match inequality {
        Inequality::DeterministicForward => Some(DenseHeat::new(
            &solver.grid,
            solver.tree.dt,
            solver.propagator.substeps(),
        )?),
        _ => None,
    };

    let records = (0..opts.samples)
        .into_par_iter()
        .map(|id| {
            let fields = sample_fields(inequality, solver, dense.as_ref(), opts, id as u64)?;
            evaluate_sample(id, &terms, &fields, &weights, solver, &params, opts)
        })
        .collect::<Result<Vec<_>>>()?;

    let ratios: Vec<f64> = records.iter().filter_map(|r| r.ratio).collect();
    let mut sorted = ratios.clone();
    sorted.sort_by(f64::total_cmp);
    let median_ratio = match sorted.len() {
        0 => None,
        l if l % 2 == 1 => Some(sorted[l / 2]),
        l => Some(0.5 * (sorted[l / 2 - 1] + sorted[l / 2])),
    };
    Ok(AuditReport {
        inequality,
        samples: opts.samples,
        lhs_names: names(&terms, Side::Lhs),
        rhs_names: names(&terms, Side::Rhs),
        max_ratio: sorted.last().copied(),
        median_ratio,
        zero_records: records.iter().filter(|r| r.kind == SampleKind::Zero).count(),
        counterexamples: records
            .iter()
            .filter(|r| r.kind == SampleKind::Counterexample)
            .count(),
        records,
        ratios,
        params,
        kappa,
    })
}

pub fn audit_backward_carleman(setup: &AuditSetup, opts: &AuditOptions) -> Result<AuditReport> {
    audit(Inequality::BackwardStochastic, setup, opts)
}

/// Uses the dense deterministic solver with the tree's time step.
pub fn audit_deterministic_carleman(setup: &AuditSetup, opts: &AuditOptions) -> Result<AuditReport> {
    audit(Inequality::DeterministicForward, setup, opts)
}

pub fn audit_random_forward_carleman(setup: &AuditSetup, opts: &AuditOptions) -> Result<AuditReport> {
    audit(Inequality::RandomForward, setup, opts)
}

pub fn audit_forward_carleman(setup: &AuditSetup, opts: &AuditOptions) -> Result<AuditReport> {
    audit(Inequality::ForwardStochastic, setup, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub max_ratio: Option<f64>,
    pub median_ratio: Option<f64>,
}

/// Repeat an audit at `λ = factor · λ*` for each factor.
pub fn lambda_sweep(
    inequality: Inequality,
    setup: &AuditSetup,
    opts: &AuditOptions,
    factors: &[f64],
) -> Result<Vec<SweepPoint>> {
    factors
        .iter()
        .map(|&f| {
            let params = setup.params.with_lambda(f * setup.params.lambda)?;
            let report = audit(
                inequality,
                &AuditSetup {
                    params,
                    ..*setup
                },
                opts,
            )?;
            Ok(SweepPoint {
                lambda: params.lambda,
                max_ratio: report.max_ratio,
                median_ratio: report.median_ratio,
            })
        })
        .collect()
}

fn names(terms: &[TermSpec], side: Side) -> Vec<&'static str> {
    terms.iter().filter(|t| t.side == side).map(|t| t.name).collect()
}

fn levels(field: &AdaptedField, range: std::ops::Range<usize>) -> Vec<Vec<f64>> {
    range.map(|k| field.level(k).to_vec()).collect()
}

fn sample_fields(
    inequality: Inequality,
    solver: &Solver,
    dense: Option<&DenseHeat>,
    opts: &AuditOptions,
    sample: u64,
) -> Result<SampleFields> {
    let (seed, modes, scale) = (opts.seed, opts.modes, opts.data_scale);
    let grid = &solver.grid;
    let depth = solver.tree.depth;
    let control = || solver.control_shape();
    let q0 = || -> Vec<f64> {
        smooth_vector(seed, Role::InitialDatum, sample, grid, modes)
            .into_iter()
            .map(|v| scale * v)
            .collect()
    };
    match inequality {
        Inequality::BackwardStochastic => {
            let leaves = AdaptedField::zeros(grid.n, depth, depth);
            let zt = smooth_field(seed, Role::TerminalDatum, sample, &leaves, grid, modes)
                .scaled(scale);
            let xi = smooth_field(seed, Role::BackwardSource, sample, &control(), grid, modes)
                .scaled(scale);
            let (z, zbar) = solver.backward_spde(zt.level(depth), Some(&xi))?;
            Ok(SampleFields {
                state: levels(&z, 0..depth),
                trace: z.level(0).to_vec(),
                martingale: Some(levels(&zbar, 0..depth)),
                source: levels(&xi, 0..depth),
                diffusion: None,
            })
        }
        Inequality::DeterministicForward => {
            let dense = dense.expect("dense solver set up for the deterministic audit");
            let g: Vec<Vec<f64>> = smooth_rows(seed, Role::Drift, sample, depth, grid, modes)
                .into_iter()
                .map(|r| r.into_iter().map(|v| scale * v).collect())
                .collect();
            let q = dense.forward(&q0(), Some(&g));
            Ok(SampleFields {
                state: q[1..].to_vec(),
                trace: q[depth].clone(),
                martingale: None,
                source: g,
                diffusion: None,
            })
        }
        Inequality::RandomForward | Inequality::ForwardStochastic => {
            let g1 = smooth_field(seed, Role::Drift, sample, &control(), grid, modes).scaled(scale);
            let g2 = (inequality == Inequality::ForwardStochastic && !opts.no_diffusion_source)
                .then(|| {
                    smooth_field(seed, Role::Diffusion, sample, &control(), grid, modes)
                        .scaled(scale)
                });
            let q = solver.forward_core(&q0(), Some(&g1), g2.as_ref())?;
            let diffusion = (inequality == Inequality::ForwardStochastic)
                .then(|| levels(g2.as_ref().unwrap_or(&control()), 0..depth));
            Ok(SampleFields {
                state: levels(&q, 1..depth + 1),
                trace: q.level(depth).to_vec(),
                martingale: None,
                source: levels(&g1, 0..depth),
                diffusion,
            })
        }
    }
}

fn evaluate_sample(
    id: usize,
    terms: &[TermSpec],
    fields: &SampleFields,
    weights: &Weights,
    solver: &Solver,
    params: &WeightParams,
    opts: &AuditOptions,
) -> Result<AuditSample> {
    let mut lhs = Vec::new();
    let mut rhs = Vec::new();
    for term in terms {
        let v = evaluate_term(term, fields, weights, solver, params, opts.martingale_xi_power);
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::Numeric(format!(
                "term {} of sample {id} is {v}",
                term.name
            )));
        }
        match term.side {
            Side::Lhs => lhs.push(v),
            Side::Rhs => rhs.push(v),
        }
    }
    let (l, r): (f64, f64) = (lhs.iter().sum(), rhs.iter().sum());
    let (kind, ratio) = if r > 0.0 {
        (SampleKind::Regular, Some(l / r))
    } else if l > 0.0 {
        (SampleKind::Counterexample, None)
    } else {
        (SampleKind::Zero, None)
    };
    Ok(AuditSample {
        sample_id: id,
        kind,
        lhs,
        rhs,
        ratio,
    })
}

fn evaluate_term(
    term: &TermSpec,
    fields: &SampleFields,
    weights: &Weights,
    solver: &Solver,
    params: &WeightParams,
    xi_override: Option<f64>,
) -> f64 {
    let e = term.exponents(params, xi_override);
    let grid = &solver.grid;
    let n = grid.n;
    let mask = |i: usize| match term.region {
        Region::Whole => 1.0,
        Region::Observation => grid.mask_d0[i],
    };
    // E Σ_i h w_i |u_i|² over the nodes of one level
    let level_sum = |values: &[f64], table: &CarlemanFields, row: usize| -> f64 {
        let w: Vec<f64> = (0..n)
            .map(|i| mask(i) * table.log_weight(row, i, e).exp())
            .collect();
        let nodes = values.len() / n;
        let total: f64 = values
            .chunks_exact(n)
            .map(|u| {
                let u = match term.quantity {
                    Quantity::Value => u.to_vec(),
                    Quantity::Gradient => grid.forward_gradient(u),
                };
                u.iter().zip(&w).map(|(a, wi)| wi * a * a).sum::<f64>()
            })
            .sum();
        total * grid.h / nodes as f64
    };
    match term.span {
        Span::Trace => level_sum(&fields.trace, &weights.trace, 0),
        Span::Interior => {
            let slot = match term.slot {
                Slot::State => &fields.state,
                Slot::Source => &fields.source,
                Slot::Martingale => fields.martingale.as_ref().expect("martingale part recorded"),
                Slot::Diffusion => fields.diffusion.as_ref().expect("diffusion source recorded"),
            };
            slot.iter()
                .enumerate()
                .map(|(k, v)| level_sum(v, &weights.interior, k))
                .sum::<f64>()
                * solver.tree.dt
        }
    }
}

#[cfg(test)]
mod tests;
