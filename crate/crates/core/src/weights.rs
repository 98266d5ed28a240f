//! Carleman weight functions.
//!
//! Temporal profiles `γ` (singular at `t = T`, used by the forward control
//! problem) and its mirror `γ̃(t) = γ(T - t)` (singular at `t = 0`, used by
//! the backward control problem), the spatial profile `β`, and the composite
//! fields
//!
//! ```text
//! φ = γ (e^{μ(β+6m)} - μ e^{6μ(m+1)}),   ξ = γ e^{μ(β+6m)},   ℓ = λ φ,   θ = e^ℓ.
//! ```
//!
//! `θ` spans an enormous dynamic range, so it is never formed directly. All
//! products of powers of `θ`, `ξ`, `λ`, `μ` are evaluated as
//! `exp(a (ℓ - κ) + b ln ξ + c)` with a global offset `κ = max ℓ` and a
//! clamp on the exponent.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pde::{Grid1D, Interval};

/// Default clamp on weight exponents, in natural-log units.
pub const DEFAULT_EXPONENT_CLAMP: f64 = 200.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// `γ`: bounded at `t = 0` (`γ(0) = 2`), blows up as `t → T⁻`.
    ForwardControl,
    /// `γ̃(t) = γ(T - t)`: blows up as `t → 0⁺`, `γ̃(T) = 2`.
    BackwardControl,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightParams {
    pub lambda: f64,
    pub mu: f64,
    pub m: f64,
    pub horizon: f64,
    pub variant: Variant,
    sigma: f64,
}

impl WeightParams {
    pub fn new(lambda: f64, mu: f64, m: f64, horizon: f64, variant: Variant) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Parameter(format!("lambda must be positive, got {lambda}")));
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::Parameter(format!("mu must be positive, got {mu}")));
        }
        if !(m >= 1.0 && m.is_finite()) {
            return Err(Error::Parameter(format!("m must be at least 1, got {m}")));
        }
        if !(horizon > 0.0 && horizon < 1.0) {
            return Err(Error::Parameter(format!(
                "time horizon must lie in (0, 1), got {horizon}"
            )));
        }
        Ok(Self {
            lambda,
            mu,
            m,
            horizon,
            variant,
            sigma: sigma_of(lambda, mu, m),
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(lambda, self.mu, self.m, self.horizon, self.variant)
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        Self { variant, ..*self }
    }

    /// `φ < 0` on `D̄` holds iff `ln μ + 5μ > 0`.
    pub fn phi_is_negative(&self) -> bool {
        self.mu.ln() + 5.0 * self.mu > 0.0
    }

    /// `e^{μ(β+6m)} - μ e^{6μ(m+1)}`, the spatial factor of `φ`.
    pub fn spatial_factor(&self, beta: f64) -> f64 {
        (self.mu * (beta + 6.0 * self.m)).exp() - self.mu * (6.0 * self.mu * (self.m + 1.0)).exp()
    }
}

fn sigma_of(lambda: f64, mu: f64, m: f64) -> f64 {
    lambda * mu * mu * (mu * (6.0 * m - 4.0)).exp()
}

/// `σ = λ μ² e^{μ(6m-4)}`.
pub fn sigma_value(params: &WeightParams) -> f64 {
    sigma_of(params.lambda, params.mu, params.m)
}

/// Forward profile on `[0, T)`.
///
/// The gap `[T/2, 3T/4]` is bridged by the cubic Hermite interpolant matching
/// value and first derivative at both ends.
fn gamma_forward(t: f64, horizon: f64, m: f64, sigma: f64) -> f64 {
    let q = horizon / 4.0;
    if t <= q {
        1.0 + (1.0 - t / q).powf(sigma)
    } else if t <= 2.0 * q {
        1.0
    } else if t < 3.0 * q {
        let top = q.powf(-m);
        let slope = m * q.powf(-m - 1.0);
        let s = (t - 2.0 * q) / q;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 + h01 * top + h11 * q * slope
    } else {
        (horizon - t).powf(-m)
    }
}

fn gamma_forward_regularized(t: f64, eps: f64, horizon: f64, m: f64, sigma: f64) -> f64 {
    let q = horizon / 4.0;
    if t <= q {
        // unregularized on the plateau side
        gamma_forward(t, horizon, m, sigma)
    } else if t <= 2.0 * q + eps {
        1.0
    } else {
        gamma_forward(t - eps, horizon, m, sigma)
    }
}

/// Temporal profile `γ` (forward variant, `t ∈ [0, T)`) or `γ̃`
/// (backward variant, `t ∈ (0, T]`).
pub fn temporal_gamma(t: f64, params: &WeightParams) -> Result<f64> {
    let horizon = params.horizon;
    if !(0.0..=horizon).contains(&t) {
        return Err(Error::Domain(format!("t = {t} outside [0, {horizon}]")));
    }
    match params.variant {
        Variant::ForwardControl => {
            if t >= horizon {
                return Err(Error::Domain(format!("γ is singular at t = T = {horizon}")));
            }
            Ok(gamma_forward(t, horizon, params.m, params.sigma))
        }
        Variant::BackwardControl => {
            if t <= 0.0 {
                return Err(Error::Domain("γ̃ is singular at t = 0".into()));
            }
            Ok(gamma_forward(horizon - t, horizon, params.m, params.sigma))
        }
    }
}

/// Regularized profile `γ_ε`, finite on all of `[0, T]` and `≤ γ` pointwise.
pub fn temporal_gamma_regularized(t: f64, eps: f64, params: &WeightParams) -> Result<f64> {
    let horizon = params.horizon;
    if !(eps > 0.0 && eps < horizon / 4.0) {
        return Err(Error::Parameter(format!(
            "regularization eps must lie in (0, T/4) = (0, {}), got {eps}",
            horizon / 4.0
        )));
    }
    if !(0.0..=horizon).contains(&t) {
        return Err(Error::Domain(format!("t = {t} outside [0, {horizon}]")));
    }
    let (m, sigma) = (params.m, params.sigma);
    Ok(match params.variant {
        Variant::ForwardControl => gamma_forward_regularized(t, eps, horizon, m, sigma),
        Variant::BackwardControl => gamma_forward_regularized(horizon - t, eps, horizon, m, sigma),
    })
}

/// Midpoints `(k + 1/2) T / cells` of a uniform time partition.
pub fn cell_midpoints(horizon: f64, cells: usize) -> Vec<f64> {
    let dt = horizon / cells as f64;
    (0..cells).map(|k| (k as f64 + 0.5) * dt).collect()
}

/// Spatial weight `β(x) = x^p (1-x)^q / (c^p (1-c)^q)` with `c` the
/// centroid of `D′`, `p = 2c`, `q = 2(1-c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialWeight {
    pub center: f64,
    pub p: f64,
    pub q: f64,
    /// `β` at the interior grid nodes.
    pub beta: Vec<f64>,
    /// Lower bound of `|β′|` over grid nodes outside `D′`.
    pub alpha: f64,
    pub d_prime: Interval,
    pub d_zero: Interval,
    log_norm: f64,
}

impl SpatialWeight {
    pub fn value(&self, x: f64) -> f64 {
        if x <= 0.0 || x >= 1.0 {
            return 0.0;
        }
        (self.p * x.ln() + self.q * (1.0 - x).ln() - self.log_norm).exp()
    }

    pub fn derivative(&self, x: f64) -> f64 {
        if x <= 0.0 || x >= 1.0 {
            // one-sided limits; finite because p, q > 0
            return 0.0;
        }
        self.value(x) * (self.p / x - self.q / (1.0 - x))
    }
}

pub fn build_spatial_weight(
    d_zero: Interval,
    d_prime: Interval,
    grid: &Grid1D,
) -> Result<SpatialWeight> {
    let unit = Interval::new(0.0, 1.0);
    if !d_zero.compactly_inside(&unit) {
        return Err(Error::Geometry(format!("D0 = {d_zero} must lie strictly inside (0, 1)")));
    }
    if !d_prime.compactly_inside(&d_zero) {
        return Err(Error::Geometry(format!(
            "D' = {d_prime} must lie strictly inside D0 = {d_zero}"
        )));
    }
    if grid.n < Grid1D::MIN_POINTS {
        return Err(Error::Parameter(format!("grid has {} < 8 interior points", grid.n)));
    }
    let c = d_prime.midpoint();
    let p = 2.0 * c;
    let q = 2.0 * (1.0 - c);
    let log_norm = p * c.ln() + q * (1.0 - c).ln();
    let mut w = SpatialWeight {
        center: c,
        p,
        q,
        beta: Vec::new(),
        alpha: 0.0,
        d_prime,
        d_zero,
        log_norm,
    };
    w.beta = grid.x.iter().map(|&x| w.value(x)).collect();
    w.alpha = grid
        .x
        .iter()
        .filter(|&&x| !(x >= d_prime.a && x <= d_prime.b))
        .map(|&x| w.derivative(x).abs())
        .fold(f64::INFINITY, f64::min);
    if !(w.alpha.is_finite() && w.alpha > 0.0) {
        return Err(Error::Geometry(format!(
            "no grid node outside D' = {d_prime} or |β'| vanishes there"
        )));
    }
    Ok(w)
}

/// Exponent triple of a weighted product `θ^a ξ^b e^c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightExponents {
    pub theta: f64,
    pub xi: f64,
    pub log_const: f64,
}

impl WeightExponents {
    pub fn new(theta: f64, xi: f64, log_const: f64) -> Self {
        Self {
            theta,
            xi,
            log_const,
        }
    }

    /// `θ^a λ^l μ^k ξ^b`.
    pub fn carleman(theta: f64, lambda_pow: f64, mu_pow: f64, xi: f64, params: &WeightParams) -> Self {
        Self::new(
            theta,
            xi,
            lambda_pow * params.lambda.ln() + mu_pow * params.mu.ln(),
        )
    }

    pub fn with_extra(mut self, log_const: f64) -> Self {
        self.log_const += log_const;
        self
    }
}

/// Tabulated weighted product on the (time node × grid node) lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    pub n: usize,
    pub values: Vec<f64>,
    /// Number of lattice points whose exponent hit the clamp.
    pub clamped: usize,
}

impl WeightTable {
    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.n..(k + 1) * self.n]
    }

    pub fn rows(&self) -> usize {
        self.values.len() / self.n
    }
}

/// `φ`, `ξ`, `ℓ` tabulated on time nodes × interior grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct CarlemanFields {
    pub params: WeightParams,
    pub time_nodes: Vec<f64>,
    pub n: usize,
    pub gamma: Vec<f64>,
    pub phi: Vec<f64>,
    pub log_xi: Vec<f64>,
    pub ell: Vec<f64>,
    /// Global log-normalization constant (`max ℓ` unless overridden).
    pub kappa: f64,
    /// Shift of the regularized profile `γ_ε` (0 for the plain profile).
    pub eps_shift: f64,
    pub clamp: f64,
}

pub fn carleman_fields(
    params: &WeightParams,
    beta: &SpatialWeight,
    grid: &Grid1D,
    time_nodes: &[f64],
    eps: f64,
) -> Result<CarlemanFields> {
    if !params.phi_is_negative() {
        return Err(Error::Parameter(format!(
            "mu = {} gives φ >= 0 somewhere (need ln μ + 5μ > 0)",
            params.mu
        )));
    }
    if beta.beta.len() != grid.n {
        return Err(Error::Shape(format!(
            "spatial weight has {} nodes, grid has {}",
            beta.beta.len(),
            grid.n
        )));
    }
    if time_nodes.is_empty() {
        return Err(Error::Parameter("no time nodes".into()));
    }
    let gamma: Vec<f64> = time_nodes
        .iter()
        .map(|&t| {
            if eps > 0.0 {
                temporal_gamma_regularized(t, eps, params)
            } else {
                temporal_gamma(t, params)
            }
        })
        .collect::<Result<_>>()?;
    let n = grid.n;
    let nt = time_nodes.len();
    let mut phi = Vec::with_capacity(nt * n);
    let mut log_xi = Vec::with_capacity(nt * n);
    let mut ell = Vec::with_capacity(nt * n);
    for &g in &gamma {
        for &b in &beta.beta {
            let p = g * params.spatial_factor(b);
            phi.push(p);
            log_xi.push(g.ln() + params.mu * (b + 6.0 * params.m));
            ell.push(params.lambda * p);
        }
    }
    if let Some(bad) = phi.iter().find(|&&p| !(p < 0.0)) {
        return Err(Error::Numeric(format!("φ = {bad} is not negative")));
    }
    let kappa = ell.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(CarlemanFields {
        params: *params,
        time_nodes: time_nodes.to_vec(),
        n,
        gamma,
        phi,
        log_xi,
        ell,
        kappa,
        eps_shift: eps,
        clamp: DEFAULT_EXPONENT_CLAMP,
    })
}

impl CarlemanFields {
    pub fn rows(&self) -> usize {
        self.time_nodes.len()
    }

    pub fn with_kappa(&self, kappa: f64) -> Self {
        Self {
            kappa,
            ..self.clone()
        }
    }

    pub fn with_clamp(&self, clamp: f64) -> Self {
        Self {
            clamp,
            ..self.clone()
        }
    }

    pub fn xi(&self, k: usize, i: usize) -> f64 {
        self.log_xi[k * self.n + i].exp()
    }

    pub fn log_weight(&self, k: usize, i: usize, e: WeightExponents) -> f64 {
        let idx = k * self.n + i;
        e.theta * (self.ell[idx] - self.kappa) + e.xi * self.log_xi[idx] + e.log_const
    }

    pub fn weight_table(&self, e: WeightExponents) -> WeightTable {
        let mut clamped = 0;
        let values = (0..self.rows() * self.n)
            .map(|idx| {
                let raw = e.theta * (self.ell[idx] - self.kappa)
                    + e.xi * self.log_xi[idx]
                    + e.log_const;
                let x = if raw > self.clamp {
                    clamped += 1;
                    self.clamp
                } else if raw < -self.clamp {
                    clamped += 1;
                    -self.clamp
                } else {
                    raw
                };
                x.exp()
            })
            .collect();
        WeightTable {
            n: self.n,
            values,
            clamped,
        }
    }

    /// Largest `|exponent|` of a weighted product over the lattice.
    pub fn max_abs_exponent(&self, e: WeightExponents) -> f64 {
        (0..self.rows() * self.n)
            .map(|idx| {
                (e.theta * (self.ell[idx] - self.kappa) + e.xi * self.log_xi[idx] + e.log_const)
                    .abs()
            })
            .fold(0.0, f64::max)
    }

    /// CSV with columns `t, x, phi, xi, ell, ell_minus_kappa`.
    pub fn write_csv<W: Write>(&self, grid: &Grid1D, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "x", "phi", "xi", "ell", "ell_minus_kappa"])?;
        for (k, &t) in self.time_nodes.iter().enumerate() {
            for (i, &x) in grid.x.iter().enumerate() {
                let idx = k * self.n + i;
                w.serialize((
                    t,
                    x,
                    self.phi[idx],
                    self.log_xi[idx].exp(),
                    self.ell[idx],
                    self.ell[idx] - self.kappa,
                ))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `λ` such that `max ℓ - min ℓ` over the lattice equals `target_log_range`.
///
/// The lattice extremes sit on the plateau `γ = 1` and on the singular
/// branch, neither of which depends on `σ`, so the range is exactly linear
/// in `λ`.
pub fn calibrate_lambda(
    target_log_range: f64,
    mu: f64,
    m: f64,
    horizon: f64,
    variant: Variant,
    beta: &SpatialWeight,
    grid: &Grid1D,
    time_nodes: &[f64],
) -> Result<f64> {
    if !(target_log_range > 0.0 && target_log_range.is_finite()) {
        return Err(Error::Parameter(format!(
            "target log range must be positive, got {target_log_range}"
        )));
    }
    if time_nodes.len() * grid.n < 2 {
        return Err(Error::Parameter("degenerate lattice".into()));
    }
    let unit = WeightParams::new(1.0, mu, m, horizon, variant)?;
    let fields = carleman_fields(&unit, beta, grid, time_nodes, 0.0)?;
    let (lo, hi) = fields
        .phi
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| (lo.min(p), hi.max(p)));
    let spread = hi - lo;
    if !(spread > 0.0) {
        return Err(Error::Parameter("degenerate lattice: φ is constant".into()));
    }
    Ok(target_log_range / spread)
}
