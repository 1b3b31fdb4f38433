use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Infection rate `beta`, removal rate `gamma` and Euler step `delta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SirParams {
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for SirParams {
    fn default() -> Self {
        Self { beta: 5e-4, gamma: 0.04, delta: 0.7 }
    }
}

impl SirParams {
    pub fn validate(&self) -> Result<()> {
        if [self.beta, self.gamma, self.delta].iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!("SIR rates and step must be positive: {self:?}")))
        }
    }

    /// Noise-free Euler update of `(S, I, R)`.
    #[inline]
    pub fn drift(&self, x: [f64; 3]) -> [f64; 3] {
        let [s, i, r] = x;
        let infect = self.beta * s * i * self.delta;
        let remove = self.gamma * i * self.delta;
        [s - infect, i + infect - remove, r + remove]
    }
}

pub fn sir_step(state: [f64; 3], params: &SirParams, noise: [f64; 3]) -> [f64; 3] {
    let d = params.drift(state);
    [d[0] + noise[0], d[1] + noise[1], d[2] + noise[2]]
}
