//! Conservative line-failure probability bounds and polyhedral safe capacity
//! regions for DC power grids with Gaussian power injections.
//!
//! The pipeline is: [`case_io`] loads a grid and injection model,
//! [`flow_factors`] turns it into the Gaussian law of normalized line flows,
//! [`risk_bounds`] evaluates the explicit risk and failure-probability
//! bounds, [`regions`] builds capacity regions from them, and [`mc_oracle`]
//! provides Monte Carlo ground truth.

pub mod case_io;
pub mod cli;
pub mod error;
pub mod flow_factors;
pub mod grid_model;
pub mod mc_oracle;
pub mod regions;
pub mod report;
pub mod risk_bounds;

pub use error::{Error, Result};
pub use flow_factors::{factorize, FlowFactorization, InjectionModel};
pub use grid_model::{LineSpec, Network};
pub use regions::{RegionKind, RiskEstimator};
pub use risk_bounds::{assess, Probability, RiskAssessment};
