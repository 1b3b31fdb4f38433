//! Particle filtering with designed and learned proposals.

pub mod error;
pub mod harness;
pub mod numerics;
pub mod pf;
pub mod proposals;
pub mod ssm;
pub mod training;

pub use error::{Error, Result};
