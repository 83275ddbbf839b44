//! Empirical saddlepoint (ESP) estimation for just-identified moment
//! condition models.
//!
//! The crate provides the exponential-tilting inner solver, the log-ESP
//! objective with its decomposition and analytic gradient, MM/ET and ESP
//! point estimators (optionally under linear restrictions), the Wald, LM,
//! ALR and ET test statistics, confidence sets by ALR inversion, and a
//! Monte-Carlo harness for the Hall–Horowitz design.
//!
//! New models implement [`MomentModel`]; everything else works through that
//! trait.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod linalg;

pub mod chi2;
pub mod error;
pub mod estimation;
pub mod inference;
pub mod model;
pub mod objective;
pub mod optimize;
pub mod parallel;
pub mod report;
pub mod simulation;
pub mod tilting;

pub use error::{EspError, Result};
pub use estimation::{
    covariance_at, estimate_constrained, estimate_constrained_with, estimate_esp, estimate_esp_with,
    estimate_et_restricted, estimate_mm_et, estimate_mm_et_with, lagrange_multiplier, objective_gradient, EspOptions,
    EstimationResult, Method, MmOptions, OptimizerTrace, RestrictionSpec,
};
pub use inference::{
    alr_test, et_test, invert_confidence_region, lm_test, wald_test, ConfidenceRegion, RegionKind, TestKind, TestResult,
};
pub use model::{
    builtin_crra, builtin_hall_horowitz, eval_psi_bar, jacobian_bar, CrraColumns, CrraModel, Dataset, HallHorowitz,
    MomentModel, MomentValues, ParamBox, HH_THETA0,
};
pub use objective::{
    evaluate, evaluate_with, gradient_objective, log_k_value, objective_value, profile, sigma_tilted, EspEvaluation,
    ProfileRow,
};
pub use parallel::Execution;
pub use simulation::{run_mc, simulate_hh_sample, McCell, McConfig, McSummary};
pub use tilting::{kl_divergence, solve_tilt, tau_jacobian, TiltOptions, TiltStatus, TiltingSolution};
