//! Approximate null controls for linear and semilinear stochastic heat
//! equations in one space dimension.
//!
//! The Wiener space is replaced by a binary scenario tree with two-point
//! Brownian increments, which makes conditional expectations, martingale
//! representations and the discrete adjoint exact. On top of that the crate
//! provides
//!
//! * [`weights`]: the Carleman weight functions in log-domain form,
//! * [`probability`]: the scenario tree and adapted fields,
//! * [`pde`]: the forward, backward and random-forward evolution solvers,
//! * [`hum`]: penalized HUM solvers (preconditioned CG on the controls),
//! * [`semilinear`]: Banach fixed-point drivers for Lipschitz nonlinearities,
//! * [`audit`]: numerical evaluation of both sides of the Carleman inequalities.

pub mod audit;
pub mod error;
pub mod hum;
pub mod pde;
pub mod probability;
pub mod rng;
pub mod semilinear;
pub mod weights;

pub use error::{Error, Result};
pub use hum::{
    ControlSolution, Controls, HumConfig, HumData, HumDiagnostics, HumProblem, HumWeights, Problem,
};
pub use pde::{DiscreteLaplacian, Grid1D, Interval, Propagator, Solver, SourceTerms};
pub use probability::{AdaptedField, NoiseTree};
pub use semilinear::{FixedPointOptions, FixedPointTrace, NonlinearityKind, NonlinearitySpec};
pub use weights::{CarlemanFields, SpatialWeight, Variant, WeightExponents, WeightParams};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
