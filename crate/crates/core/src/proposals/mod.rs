//! Learnable sampling distributions and the shared Gaussian head.

pub mod arch;
pub mod frame;
pub mod gaussian;
pub mod gnn;
pub mod learned;
pub mod mlp;
pub mod psi;
pub mod registry;
pub mod rnn;

pub use arch::{gaussian_head, ArchConfig, Architecture, Draw, NoiseKind, StepCtx};
pub use frame::{Frame, Parametrization};
pub use gaussian::{gaussian_sample, kernel_covariance, GaussianProposalParams};
pub use gnn::Gnn;
pub use learned::LearnedProposal;
pub use mlp::Mlp;
pub use psi::Psi;
pub use registry::{Factory, Registry};
pub use rnn::Rnn;

/// Density assigned to points a proposal or noise law cannot produce.
pub const DENSITY_FLOOR: f64 = 1e-12;
