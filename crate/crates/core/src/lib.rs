//! Monte Carlo valuation of exchange options in Markovian factor models
//! whose economy may default (explode) in finite time.
//!
//! The crate is organised bottom up:
//!
//! - [`expr`] parses and evaluates coefficient expressions in the factors;
//! - [`model`] holds a factor model and its change to a numéraire measure;
//! - [`sde_engine`] simulates paths and detects the stopping times;
//! - [`pricing`] estimates European and American exchange values;
//! - [`diagnostics`] checks parities, bubbles and supermartingale properties;
//! - [`bessel_reference`] gives closed forms for the Bessel benchmark.

pub mod bessel_reference;
pub mod diagnostics;
pub mod expr;
pub mod model;
pub mod pricing;
pub mod sde_engine;

pub use diagnostics::{DegeneracyReport, ParityReport};
pub use expr::{EvalError, ExprAst, ParseError};
pub use model::{DomainExhaustion, FactorModel, Measure, ModelError, ModelSpec};
pub use pricing::{EurMethod, MCEstimate, McConfig, Method, PricingError, RatioSample};
pub use sde_engine::{Path, RngContract, TimeGrid};
