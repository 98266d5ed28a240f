//! Experiment configuration: JSON schema, defaults and validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use nullspde_core::audit::Inequality;
use nullspde_core::semilinear::{NonlinearityKind, NonlinearitySpec};
use nullspde_core::weights::{cell_midpoints, DEFAULT_EXPONENT_CLAMP};
use nullspde_core::{
    Grid1D, HumConfig, HumProblem, Interval, NoiseTree, Problem, Solver, SpatialWeight, Variant,
    WeightParams,
};

/// Largest estimated working set of one solve, in bytes.
pub const MEMORY_LIMIT: f64 = 2.0 * 1024.0 * 1024.0 * 1024.0;
// adapted fields alive at once during a HUM solve (CG vectors, states, adjoints)
const LIVE_FIELDS: f64 = 24.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    WeightsDump,
    ForwardLinear,
    BackwardLinear,
    ForwardSemilinear,
    BackwardSemilinear,
    CarlemanAudit,
    EpsSweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Geometry {
    pub n: usize,
    pub d0: [f64; 2],
    pub d_prime: [f64; 2],
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            n: 63,
            d0: [0.3, 0.7],
            d_prime: [0.4, 0.6],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeConfig {
    #[serde(rename = "K")]
    pub depth: usize,
    pub substeps: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            depth: 8,
            substeps: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightsConfig {
    pub mu: f64,
    pub m: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    /// Explicit `λ`; overrides `auto_log_range`.
    pub lambda: Option<f64>,
    pub auto_log_range: f64,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        Self {
            mu: 0.3,
            m: 1.0,
            horizon: 0.5,
            lambda: None,
            auto_log_range: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HumSection {
    pub eps: f64,
    pub eps_list: Option<Vec<f64>>,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl Default for HumSection {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            eps_list: None,
            cg_tol: 1e-8,
            cg_max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NonlinearityConfig {
    pub kind: NonlinearityKind,
    pub lipschitz: f64,
}

impl Default for NonlinearityConfig {
    fn default() -> Self {
        Self {
            kind: NonlinearityKind::ScaledSin,
            lipschitz: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceMode {
    None,
    /// Smooth random sources divided by the square root of their control weight.
    Balanced,
}

/// Random data of the linear and semilinear experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub modes: usize,
    pub sources: SourceMode,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            modes: 6,
            sources: SourceMode::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixedPointConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub eps_schedule: Vec<f64>,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 20,
            eps_schedule: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditConfig {
    pub samples: usize,
    pub inequalities: Vec<Inequality>,
    pub modes: usize,
    /// Multiples of the calibrated `λ` for the deterministic sweep.
    pub lambda_factors: Vec<f64>,
    pub martingale_xi_power: Option<f64>,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            samples: 20,
            inequalities: Inequality::ALL.to_vec(),
            modes: 8,
            lambda_factors: vec![1.0, 2.0, 4.0],
            martingale_xi_power: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub geometry: Geometry,
    #[serde(default)]
    pub tree: TreeConfig,
    #[serde(default)]
    pub weights: WeightsConfig,
    #[serde(default)]
    pub hum: HumSection,
    #[serde(default)]
    pub nonlinearity: NonlinearityConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub fixed_point: FixedPointConfig,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_seed() -> u64 {
    42
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

pub const DEFAULT_EPS_LIST: [f64; 5] = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    /// JSON path of the offending entry, `$` for the whole document.
    pub path: String,
    pub message: String,
}

impl Diagnostic {
    fn error(path: &str, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Error,
            path: path.into(),
            message: message.into(),
        }
    }

    fn warning(path: &str, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Warning,
            path: path.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}: {}", self.path, self.message)
    }
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.severity == Severity::Error)
}

/// Parsed configuration plus every diagnostic found on the way.
pub struct Loaded {
    pub config: Option<ExperimentConfig>,
    pub diagnostics: Vec<Diagnostic>,
}

pub fn load(path: &Path) -> Loaded {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            return Loaded {
                config: None,
                diagnostics: vec![Diagnostic::error("$", format!("cannot read {}: {e}", path.display()))],
            }
        }
    };
    parse(&text)
}

pub fn parse(text: &str) -> Loaded {
    let fail = |d: Diagnostic| Loaded {
        config: None,
        diagnostics: vec![d],
    };
    let raw: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => return fail(Diagnostic::error("$", format!("invalid JSON: {e}"))),
    };
    let config: ExperimentConfig = match serde_json::from_value(raw.clone()) {
        Ok(c) => c,
        Err(e) => {
            // report unknown keys even when another entry is malformed
            let mut diags = unknown_keys(&raw, &skeleton());
            diags.push(Diagnostic::error("$", e.to_string()));
            return Loaded {
                config: None,
                diagnostics: diags,
            };
        }
    };
    let resolved = serde_json::to_value(&config).expect("config serializes");
    let mut diagnostics = unknown_keys(&raw, &resolved);
    if diagnostics.is_empty() {
        diagnostics = validate(&config);
    }
    Loaded {
        config: Some(config),
        diagnostics,
    }
}

/// Fully populated document used to recognize keys when parsing failed.
fn skeleton() -> Value {
    let mut c = ExperimentConfig {
        experiment: Experiment::WeightsDump,
        geometry: Geometry::default(),
        tree: TreeConfig::default(),
        weights: WeightsConfig::default(),
        hum: HumSection::default(),
        nonlinearity: NonlinearityConfig::default(),
        data: DataConfig::default(),
        fixed_point: FixedPointConfig::default(),
        audit: AuditConfig::default(),
        seed: default_seed(),
        out_dir: default_out_dir(),
    };
    c.weights.lambda = Some(1.0);
    serde_json::to_value(c).expect("config serializes")
}

/// Keys present in `raw` but not in the schema, as JSON paths.
fn unknown_keys(raw: &Value, schema: &Value) -> Vec<Diagnostic> {
    fn walk(raw: &Value, schema: &Value, path: &str, out: &mut Vec<Diagnostic>) {
        if let (Value::Object(r), Value::Object(s)) = (raw, schema) {
            for (k, v) in r {
                let here = format!("{path}.{k}");
                match s.get(k) {
                    None => out.push(Diagnostic::error(&here, "unknown key")),
                    Some(sub) => walk(v, sub, &here, out),
                }
            }
        }
    }
    let mut out = Vec::new();
    walk(raw, schema, "$", &mut out);
    out
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

fn interval(v: [f64; 2]) -> Interval {
    Interval::new(v[0], v[1])
}

/// Estimated bytes of the largest solve the experiment performs.
pub fn memory_estimate(c: &ExperimentConfig) -> f64 {
    let nodes = 2f64.powi(c.tree.depth as i32 + 1);
    let n = c.geometry.n as f64;
    nodes * n * 8.0 * LIVE_FIELDS + 3.0 * n * n * 8.0 * c.tree.depth as f64
}

pub fn validate(c: &ExperimentConfig) -> Vec<Diagnostic> {
    let mut d = Vec::new();
    let g = &c.geometry;
    if g.n < 3 {
        d.push(Diagnostic::error("$.geometry.n", format!("need at least 3 interior nodes, got {}", g.n)));
    }
    let (d0, dp) = (interval(g.d0), interval(g.d_prime));
    let inside_unit = |i: &Interval| i.a > 0.0 && i.b < 1.0 && i.a < i.b;
    if !inside_unit(&d0) {
        d.push(Diagnostic::error("$.geometry.d0", format!("D0 = {d0} must satisfy 0 < a < b < 1")));
    }
    if !(dp.a < dp.b) {
        d.push(Diagnostic::error("$.geometry.d_prime", format!("D' = {dp} must satisfy a < b")));
    } else if !dp.compactly_inside(&d0) {
        d.push(Diagnostic::error(
            "$.geometry.d_prime",
            format!("D' = {dp} is not compactly contained in D0 = {d0}"),
        ));
    }
    if c.tree.depth == 0 {
        d.push(Diagnostic::error("$.tree.K", "need at least one time step"));
    }
    if c.tree.substeps == 0 {
        d.push(Diagnostic::error("$.tree.substeps", "need at least one substep"));
    }
    let mem = memory_estimate(c);
    if c.tree.depth > 30 || mem > MEMORY_LIMIT {
        d.push(Diagnostic::error(
            "$.tree.K",
            format!(
                "K = {} with n = {} needs about {:.1} GiB, above the {:.0} GiB guard",
                c.tree.depth,
                g.n,
                mem / 1024f64.powi(3),
                MEMORY_LIMIT / 1024f64.powi(3)
            ),
        ));
    }
    let w = &c.weights;
    if !positive(w.mu) {
        d.push(Diagnostic::error("$.weights.mu", "mu must be positive"));
    } else if w.mu.ln() + 5.0 * w.mu <= 0.0 {
        d.push(Diagnostic::error("$.weights.mu", format!("mu = {} makes φ nonnegative somewhere", w.mu)));
    }
    if !(w.m >= 1.0 && w.m.is_finite()) {
        d.push(Diagnostic::error("$.weights.m", "m must be at least 1"));
    }
    if !(w.horizon > 0.0 && w.horizon < 1.0) {
        d.push(Diagnostic::error("$.weights.T", "T must lie in (0, 1)"));
    }
    match w.lambda {
        Some(l) if !positive(l) => d.push(Diagnostic::error("$.weights.lambda", "lambda must be positive")),
        None if !positive(w.auto_log_range) => {
            d.push(Diagnostic::error("$.weights.auto_log_range", "log range must be positive"))
        }
        _ => {}
    }
    let h = &c.hum;
    if !positive(h.eps) {
        d.push(Diagnostic::error("$.hum.eps", "eps must be positive"));
    }
    if let Some(list) = &h.eps_list {
        if list.is_empty() || list.iter().any(|&e| !positive(e)) {
            d.push(Diagnostic::error("$.hum.eps_list", "eps_list needs positive entries"));
        }
    }
    if !positive(h.cg_tol) {
        d.push(Diagnostic::error("$.hum.cg_tol", "cg_tol must be positive"));
    }
    if h.cg_max_iter == 0 {
        d.push(Diagnostic::error("$.hum.cg_max_iter", "cg_max_iter must be at least 1"));
    }
    if NonlinearitySpec::new(c.nonlinearity.kind, c.nonlinearity.lipschitz).is_err() {
        d.push(Diagnostic::error("$.nonlinearity.lipschitz", "Lipschitz constant must be finite and ≥ 0"));
    }
    if c.data.modes == 0 {
        d.push(Diagnostic::error("$.data.modes", "need at least one mode"));
    }
    let fp = &c.fixed_point;
    if !(fp.tol >= 0.0) || fp.max_iter == 0 {
        d.push(Diagnostic::error("$.fixed_point", "need tol ≥ 0 and max_iter ≥ 1"));
    }
    if fp.eps_schedule.iter().any(|&e| !positive(e)) {
        d.push(Diagnostic::error("$.fixed_point.eps_schedule", "penalties must be positive"));
    }
    let a = &c.audit;
    if a.samples == 0 {
        d.push(Diagnostic::error("$.audit.samples", "need at least one sample"));
    }
    if a.modes == 0 {
        d.push(Diagnostic::error("$.audit.modes", "need at least one mode"));
    }
    if a.lambda_factors.iter().any(|&f| !positive(f)) {
        d.push(Diagnostic::error("$.audit.lambda_factors", "factors must be positive"));
    }
    if has_errors(&d) {
        return d;
    }
    // numeric regime: needs the weights themselves
    match Setup::build(c) {
        Ok(setup) => {
            for variant in [Variant::ForwardControl, Variant::BackwardControl] {
                let clamped = setup.clamped_points(c, variant);
                if let Ok(k) = clamped {
                    if k > 0 {
                        d.push(Diagnostic::warning(
                            "$.weights",
                            format!(
                                "{k} lattice points of the {variant:?} weights exceed the exponent clamp ±{DEFAULT_EXPONENT_CLAMP}"
                            ),
                        ));
                    }
                }
            }
        }
        Err(e) => d.push(Diagnostic::error("$", e.to_string())),
    }
    d
}

/// Discretization and calibrated weights shared by all experiments.
pub struct Setup {
    pub solver: Solver,
    pub beta: SpatialWeight,
    pub params: WeightParams,
}

impl Setup {
    pub fn build(c: &ExperimentConfig) -> nullspde_core::Result<Self> {
        let d0 = interval(c.geometry.d0);
        let grid = Grid1D::new(c.geometry.n, d0)?;
        let beta = nullspde_core::weights::build_spatial_weight(d0, interval(c.geometry.d_prime), &grid)?;
        let tree = NoiseTree::new(c.tree.depth, c.weights.horizon)?;
        let w = &c.weights;
        let lambda = match w.lambda {
            Some(l) => l,
            None => nullspde_core::weights::calibrate_lambda(
                w.auto_log_range,
                w.mu,
                w.m,
                w.horizon,
                Variant::ForwardControl,
                &beta,
                &grid,
                &cell_midpoints(w.horizon, c.tree.depth),
            )?,
        };
        let params = WeightParams::new(lambda, w.mu, w.m, w.horizon, Variant::ForwardControl)?;
        let solver = Solver::new(tree, grid, c.tree.substeps)?;
        Ok(Self {
            solver,
            beta,
            params,
        })
    }

    pub fn problem(&self, c: &ExperimentConfig, problem: Problem, eps: f64) -> nullspde_core::Result<HumProblem> {
        let mut config = HumConfig::new(problem, eps);
        config.cg_tol = c.hum.cg_tol;
        config.cg_max_iter = c.hum.cg_max_iter;
        HumProblem::build(self.solver.clone(), &self.beta, &self.params, config)
    }

    fn clamped_points(&self, c: &ExperimentConfig, variant: Variant) -> nullspde_core::Result<usize> {
        let times = cell_midpoints(c.weights.horizon, c.tree.depth);
        let params = self.params.with_variant(variant);
        let fields = nullspde_core::weights::carleman_fields(&params, &self.beta, &self.solver.grid, &times, 0.0)?;
        let fields_eps = nullspde_core::weights::carleman_fields(
            &params,
            &self.beta,
            &self.solver.grid,
            &times,
            c.hum.eps,
        )?;
        Ok(nullspde_core::hum::assemble_hum_weights(&fields, &fields_eps).clamped)
    }
}
