//! Generative state-space models and trajectory simulation.

pub mod graph;
pub mod model;
pub mod noise;
pub mod sir;

pub use graph::{build_geometric_graph, build_measurement_matrix};
pub use model::{
    build_scenario, scalar_model, simulate, simulate_truth, sir_model, variance_from_snr, InitialLaw, ModelSpec, Nonlinearity,
    Scenario, Trajectory,
};
pub use noise::{NoiseFamily, NoiseLaw};
pub use sir::{sir_step, SirParams};
