//! Kernel-smoothed EM for Gaussian mixtures whose parameters drift over
//! time, fitted to series of weighted point clouds (cytograms).
//!
//! The main entry points are [`fit`] (the smoothed EM loop),
//! [`initialize`] (starting values), [`grid_search`] (bandwidth selection),
//! the two baselines [`constant_fit`] and [`hungarian_fit`], the
//! simulation harness [`run_benchmark`] and the oracle-estimator checks in
//! [`theory`].

pub mod baselines;
pub mod cv;
pub mod error;
pub mod init;
pub mod io;
pub mod kem;
pub mod model;
pub mod sim;
pub mod theory;

pub use baselines::{constant_fit, hungarian_fit, hungarian_solve, Assignment};
pub use cv::{cv_score, grid_search, log_spaced, make_folds, CvCell, CvResult, CvScore, FoldSpec, GridSpec};
pub use error::{Error, Result};
pub use init::{
    bayes_update, bayesian_init, constant_init, initialize, standard_em, standard_em_from, BayesState, EmFit,
    EmOptions, InitConfig, InitMethod,
};
pub use kem::{
    e_step, fit, kem_iteration, m_step, m_step_mu, m_step_pi, m_step_sigma, predict_at_times, FitConfig, FitResult,
    Smoother,
};
pub use model::{
    kernel_weight, loglik_per_time, mvn_logpdf, weighted_loglik, Bandwidths, CytoSeries, Cytogram, FitEvent,
    KernelFamily, KernelSpec, MixtureState, ParamsSeries, Responsibilities,
};
pub use sim::{
    argmax_labels, gen_disappearance, gen_intersection, mean_rand_index, rand_index, run_benchmark, sample_labels,
    BenchConfig, BenchResult, DisappearanceParams, IntersectionParams, Method, Scenario, SimTruth,
};
pub use theory::{TheoryReport, TheoryScenario};
