use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::tape::PointwiseFn;
use crate::numerics::Rng;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseFamily {
    Gaussian,
    ShiftedExponential,
    CenteredUniform,
}

impl NoiseFamily {
    pub fn name(self) -> &'static str {
        match self {
            NoiseFamily::Gaussian => "gaussian",
            NoiseFamily::ShiftedExponential => "shifted-exponential",
            NoiseFamily::CenteredUniform => "centered-uniform",
        }
    }
}

impl fmt::Display for NoiseFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(NoiseFamily::Gaussian),
            "shifted-exponential" | "exponential" => Ok(NoiseFamily::ShiftedExponential),
            "centered-uniform" | "uniform" => Ok(NoiseFamily::CenteredUniform),
            other => Err(Error::Config(format!("unknown noise family `{other}`"))),
        }
    }
}

/// Zero-mean i.i.d. noise with per-component variance `variance`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseLaw {
    pub family: NoiseFamily,
    pub variance: f64,
}

impl NoiseLaw {
    pub fn new(family: NoiseFamily, variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::Config(format!("noise variance must be positive, got {variance}")));
        }
        Ok(Self { family, variance })
    }

    pub fn gaussian(variance: f64) -> Result<Self> {
        Self::new(NoiseFamily::Gaussian, variance)
    }

    pub fn sigma(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn is_gaussian(&self) -> bool {
        self.family == NoiseFamily::Gaussian
    }

    #[inline]
    pub fn draw(&self, rng: &mut Rng) -> f64 {
        let s = self.sigma();
        match self.family {
            NoiseFamily::Gaussian => s * rng.normal(),
            NoiseFamily::ShiftedExponential => s * rng.exp1() - s,
            NoiseFamily::CenteredUniform => s * 3f64.sqrt() * (2.0 * rng.uniform() - 1.0),
        }
    }

    pub fn sample(&self, dim: usize, rng: &mut Rng) -> Vec<f64> {
        (0..dim).map(|_| self.draw(rng)).collect()
    }

    /// Log-density and its derivative at residual `r`; `-inf` off support.
    #[inline]
    pub fn logpdf_with_derivative(&self, r: f64) -> (f64, f64) {
        let s = self.sigma();
        match self.family {
            NoiseFamily::Gaussian => (-r * r / (2.0 * self.variance) - s.ln() - HALF_LN_2PI, -r / self.variance),
            NoiseFamily::ShiftedExponential => {
                if r >= -s {
                    (-s.ln() - (r + s) / s, -1.0 / s)
                } else {
                    (f64::NEG_INFINITY, 0.0)
                }
            }
            NoiseFamily::CenteredUniform => {
                let half = s * 3f64.sqrt();
                if r.abs() <= half {
                    (-(2.0 * half).ln(), 0.0)
                } else {
                    (f64::NEG_INFINITY, 0.0)
                }
            }
        }
    }

    #[inline]
    pub fn logpdf_component(&self, r: f64) -> f64 {
        self.logpdf_with_derivative(r).0
    }

    /// Joint log-density of independent components.
    pub fn logpdf(&self, residual: &[f64]) -> f64 {
        residual.iter().map(|r| self.logpdf_component(*r)).sum()
    }

    /// Element-wise log-density for the tape, with off-support points
    /// replaced by `floor` and a zero derivative.
    pub fn floored_logpdf_fn(&self, floor: f64) -> PointwiseFn {
        let law = *self;
        Rc::new(move |r| {
            let (v, d) = law.logpdf_with_derivative(r);
            if v.is_finite() {
                (v, d)
            } else {
                (floor, 0.0)
            }
        })
    }
}
