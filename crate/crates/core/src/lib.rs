//! Robust regression by minimizing the interval conditional value-at-risk
//! (In-CVaR) of regression losses.
//!
//! The crate evaluates VaR, CVaR and In-CVaR exactly on finite weighted
//! laws, fits regression models with a multi-start difference-of-convex
//! algorithm, computes Prokhorov and Lévy distances between empirical
//! clouds, and drives the contamination, level and perturbation sweeps.

pub mod data;
pub mod error;
pub mod experiments;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod risk;
pub mod seeding;
pub mod selftest;
pub mod solver;

pub use data::DataSet;
pub use error::{Error, Result};
pub use losses::LossSpec;
pub use metrics::{levy_distance, prokhorov_distance, strassen_bound_check, CouplingCertificate, EmpiricalCloud};
pub use models::{ModelFamily, ModelSpec, ParamVector};
pub use risk::{cvar_at, in_cvar, var_at, TrimLevels, WeightedLossSample};
pub use solver::{fit_incvar, objective, SolveConfig, SolveReport, Termination};
