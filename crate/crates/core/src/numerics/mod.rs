pub mod adam;
pub mod layers;
pub mod matrix;
pub mod params;
pub mod rng;
pub mod tape;

pub use matrix::Matrix;
pub use params::ParamStore;
pub use rng::Rng;
pub use tape::{Activation, Tape, Var};
