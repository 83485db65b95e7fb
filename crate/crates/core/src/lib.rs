//! Mortality-risk modeling for tabular ICU cohorts: ingest, imputation,
//! feature selection, class rebalancing, boosted trees with baselines,
//! evaluation, attribution, and a synthetic cohort generator.

pub mod baselines;
pub mod data;
pub mod error;
pub mod explain;
pub mod eval;
pub mod gbdt;
pub mod impute;
pub mod ingest;
pub mod model;
pub mod resample;
pub mod rng;
pub mod select;
pub mod synth;

pub use data::{Column, Dataset, FeatureDescriptor, FeatureKind, FeatureMatrix};
pub use error::{Error, ErrorClass, Result};
pub use rng::Rng;
