//! Simulation toolkit for second-order Newton-based extremum seeking on
//! multivariable static maps.
//!
//! The crate is organized around six concerns:
//!
//! - [`maps`]: polynomial static maps with exact derivative bundles;
//! - [`probing`]: dither signals, demodulation matrices and exact-rational
//!   frequency validation/search;
//! - [`estimation`]: period-averaged derivative estimators;
//! - [`filters`]: low-pass, washout and Riccati filter dynamics;
//! - [`dynamics`]: the closed loops, an RK4 integrator, the averaged system
//!   and equilibrium/stability analysis;
//! - [`scenario`]/[`export`]: TOML scenario files, CSV/JSON output and level
//!   set grids backing the command-line interface.

pub mod dynamics;
pub mod error;
pub mod estimation;
pub mod export;
pub mod filters;
pub mod maps;
pub mod probing;
pub mod scenario;

pub use dynamics::{
    integrate, is_hurwitz, jacobian_at, theorem_bias, AveragedSones, GainConfig, Grad2Loop,
    SonesLoop, SonesState, Trajectory,
};
pub use error::{Result, SonesError};
pub use estimation::{
    estimate_hessian, estimate_hessian_column, estimate_third_slice, hessian_sweep,
    periodic_average, QuadratureSpec,
};
pub use filters::FilterGains;
pub use maps::{DerivativeBundle, MapFn, PolynomialMap, StaticMap};
pub use probing::{
    parse_rational, rational, search_frequencies, FrequencyViolation, ProbingConfig, Rational,
    ValidationLevel,
};
pub use scenario::{LoopKind, Scenario};
