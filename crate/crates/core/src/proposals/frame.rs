//! How network outputs are placed in state space.
//!
//! `Plain` feeds raw `(x_{t−1}, y_t)` to the networks and uses their output
//! as is. `Anchored` standardizes the inputs and expresses the proposal
//! relative to the model's own prediction: the mean is `φ(A x_{t−1})` plus a
//! learned correction in units of the state-noise scale, and the covariance
//! is measured in the same units.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Tape, Var};
use crate::ssm::ModelSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Parametrization {
    #[default]
    Anchored,
    Plain,
}

impl fmt::Display for Parametrization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Parametrization::Anchored => "anchored",
            Parametrization::Plain => "plain",
        })
    }
}

impl FromStr for Parametrization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "anchored" => Ok(Parametrization::Anchored),
            "plain" => Ok(Parametrization::Plain),
            other => Err(Error::Config(format!("unknown parametrization `{other}`"))),
        }
    }
}

/// Gain applied to network outputs in the anchored frame, bounding how far
/// one optimizer step can move a proposal.
pub const OUTPUT_GAIN: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub mode: Parametrization,
    pub x_scale: f64,
    pub y_scale: f64,
    pub sigma_v: f64,
}

impl Frame {
    pub fn new(model: &ModelSpec, mode: Parametrization) -> Self {
        match mode {
            Parametrization::Plain => Self { mode, x_scale: 1.0, y_scale: 1.0, sigma_v: 1.0 },
            Parametrization::Anchored => {
                let n = model.n as f64;
                let mean_sq = model.initial.mean.iter().map(|v| v * v).sum::<f64>() / n;
                let mean_var = model.initial.variance.iter().sum::<f64>() / n;
                let sv2 = model.state_noise.variance;
                let x_scale = (mean_sq + mean_var + sv2).sqrt();
                let y_scale = (x_scale * x_scale + model.measurement_noise.variance).sqrt();
                Self { mode, x_scale, y_scale, sigma_v: sv2.sqrt() }
            }
        }
    }

    pub fn is_anchored(&self) -> bool {
        self.mode == Parametrization::Anchored
    }

    /// Network inputs: `x_{t−1}` (K × N) and `y_t` tiled to K × M.
    pub fn inputs(&self, tape: &mut Tape, x_prev: Var, y: &[f64]) -> Result<(Var, Var)> {
        let k = tape.value(x_prev).rows();
        let xs = if self.x_scale == 1.0 { x_prev } else { tape.scale(x_prev, 1.0 / self.x_scale) };
        let yrow: Vec<f64> = y.iter().map(|v| v / self.y_scale).collect();
        let yv = tape.constant(Matrix::row_vector(&yrow));
        let ys = tape.tile_rows(yv, k);
        Ok((xs, ys))
    }

    /// Final mean from the network's mean output.
    pub fn place_mean(&self, tape: &mut Tape, model: &ModelSpec, x_prev: Var, net: Var) -> Result<Var> {
        if !self.is_anchored() {
            return Ok(net);
        }
        let anchor = model.drift_on_tape(tape, x_prev)?;
        let step = tape.scale(net, OUTPUT_GAIN * self.sigma_v);
        tape.add(anchor, step)
    }

    /// Kernel embedding from the representation network's output.
    pub fn embedding(&self, tape: &mut Tape, net: Var) -> Var {
        if self.is_anchored() {
            tape.scale(net, OUTPUT_GAIN)
        } else {
            net
        }
    }

    /// Multiplier applied to kernel covariances.
    pub fn cov_scale(&self) -> f64 {
        if self.is_anchored() {
            self.sigma_v * self.sigma_v
        } else {
            1.0
        }
    }
}
