//! The particle filter, its designed proposals and the Kalman reference.

pub mod ensemble;
pub mod filter;
pub mod kalman;
pub mod proposal;

pub use ensemble::{
    effective_sample_size, estimate, estimate_with, log_sum_exp, multinomial_indices, normalize_weights, resample,
    ParticleEnsemble,
};
pub use filter::{initialize, run_filter, sis_step, FilterOutput, DEFAULT_THRESHOLD};
pub use kalman::{kalman_filter, KalmanState};
pub use proposal::{Bootstrap, MinDegeneracy, Proposal, ProposalDraw, Weighting};
