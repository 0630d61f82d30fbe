//! Elicited priors for between-study heterogeneity and Bayesian
//! fixed/random-effects network meta-analysis.

pub mod dist;
pub mod elicitation;
pub mod engine;
pub mod ingest;
pub mod error;
pub mod optim;
pub mod service;

pub use error::{Error, Result};
