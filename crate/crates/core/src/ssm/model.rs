use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::graph::{build_geometric_graph, build_measurement_matrix};
use super::noise::{NoiseFamily, NoiseLaw};
use super::sir::SirParams;
use crate::error::{dim_err, Error, Result};
use crate::numerics::matrix::gemm;
use crate::numerics::{Matrix, Rng, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Nonlinearity {
    Identity,
    Abs,
    Sir(SirParams),
}

/// Independent components `mean_i + e_i`, with `e_i` drawn from a zero-mean
/// law of the given family and variance `variance_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialLaw {
    pub family: NoiseFamily,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl InitialLaw {
    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.variance)
            .map(|(m, v)| m + NoiseLaw { family: self.family, variance: *v }.draw(rng))
            .collect()
    }

    pub fn logpdf(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.mean.iter().zip(&self.variance))
            .map(|(xi, (m, v))| NoiseLaw { family: self.family, variance: *v }.logpdf_component(xi - m))
            .sum()
    }
}

#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub n: usize,
    pub m: usize,
    pub a: Matrix,
    pub c: Matrix,
    pub phi: Nonlinearity,
    pub state_noise: NoiseLaw,
    pub measurement_noise: NoiseLaw,
    pub initial: InitialLaw,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.m > self.n {
            return Err(Error::Config(format!("need 1 ≤ M ≤ N, got N={} M={}", self.n, self.m)));
        }
        if self.a.shape() != (self.n, self.n) || self.c.shape() != (self.m, self.n) {
            return Err(dim_err!("A {:?} and C {:?} for N={} M={}", self.a.shape(), self.c.shape(), self.n, self.m));
        }
        if self.initial.mean.len() != self.n || self.initial.variance.len() != self.n {
            return Err(dim_err!("initial law of length {} for N={}", self.initial.mean.len(), self.n));
        }
        if let Nonlinearity::Sir(p) = self.phi {
            p.validate()?;
            if self.n != 3 {
                return Err(Error::Config("SIR dynamics need N = 3".into()));
            }
        }
        Ok(())
    }

    /// Linear dynamics with Gaussian noise; the Kalman filter is exact here.
    pub fn is_linear_gaussian(&self) -> bool {
        self.phi == Nonlinearity::Identity
            && self.state_noise.is_gaussian()
            && self.measurement_noise.is_gaussian()
            && self.initial.family == NoiseFamily::Gaussian
    }

    /// `φ(A x)` for one state.
    pub fn drift(&self, x: &[f64]) -> Vec<f64> {
        match self.phi {
            Nonlinearity::Sir(p) => p.drift([x[0], x[1], x[2]]).to_vec(),
            Nonlinearity::Identity => self.a.matvec(x).expect("validated shape"),
            Nonlinearity::Abs => self.a.matvec(x).expect("validated shape").into_iter().map(f64::abs).collect(),
        }
    }

    /// `φ(A x)` applied to every row of a K × N block.
    pub fn drift_rows(&self, x: &Matrix) -> Matrix {
        match self.phi {
            Nonlinearity::Sir(p) => {
                let mut out = x.clone();
                for k in 0..out.rows() {
                    let r = out.row_mut(k);
                    let d = p.drift([r[0], r[1], r[2]]);
                    r.copy_from_slice(&d);
                }
                out
            }
            _ => {
                let mut out = Matrix::zeros(x.rows(), self.n);
                gemm(1.0, x, false, &self.a, true, 0.0, &mut out);
                if self.phi == Nonlinearity::Abs {
                    out.as_mut_slice().iter_mut().for_each(|v| *v = v.abs());
                }
                out
            }
        }
    }

    /// Differentiable `φ(A x)` over a K × N node.
    pub fn drift_on_tape(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self.phi {
            Nonlinearity::Sir(p) => {
                let s = tape.slice_cols(x, 0, 1)?;
                let i = tape.slice_cols(x, 1, 1)?;
                let r = tape.slice_cols(x, 2, 1)?;
                let si = tape.mul(s, i)?;
                let infect = tape.scale(si, p.beta * p.delta);
                let remove = tape.scale(i, p.gamma * p.delta);
                let s2 = tape.sub(s, infect)?;
                let i_in = tape.add(i, infect)?;
                let i2 = tape.sub(i_in, remove)?;
                let r2 = tape.add(r, remove)?;
                tape.concat_cols(&[s2, i2, r2])
            }
            _ => {
                let a = tape.constant(self.a.clone());
                let lin = tape.matmul_t(x, a)?;
                Ok(if self.phi == Nonlinearity::Abs { tape.abs(lin) } else { lin })
            }
        }
    }

    pub fn transition_logpdf(&self, x_prev: &[f64], x: &[f64]) -> f64 {
        let mean = self.drift(x_prev);
        x.iter().zip(&mean).map(|(xi, mi)| self.state_noise.logpdf_component(xi - mi)).sum()
    }

    pub fn measurement_logpdf(&self, x: &[f64], y: &[f64]) -> f64 {
        let pred = self.c.matvec(x).expect("validated shape");
        y.iter().zip(&pred).map(|(yi, pi)| self.measurement_noise.logpdf_component(yi - pi)).sum()
    }

    pub fn measure(&self, x: &[f64], rng: &mut Rng) -> Vec<f64> {
        let mut y = self.c.matvec(x).expect("validated shape");
        for v in &mut y {
            *v += self.measurement_noise.draw(rng);
        }
        y
    }

    pub fn transition(&self, x_prev: &[f64], rng: &mut Rng) -> Vec<f64> {
        let mut x = self.drift(x_prev);
        for v in &mut x {
            *v += self.state_noise.draw(rng);
        }
        x
    }
}

/// `‖μ⁰‖² / 10^(snr_db / 10)`.
pub fn variance_from_snr(mu0: &[f64], snr_db: f64) -> Result<f64> {
    let energy: f64 = mu0.iter().map(|v| v * v).sum();
    if !(energy > 0.0) {
        return Err(Error::Config("SNR needs a non-zero initial mean".into()));
    }
    Ok(energy / 10f64.powf(snr_db / 10.0))
}

/// States `x_0..x_T` and measurements `y_0..y_T`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub measurements: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.measurements.len().saturating_sub(1)
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let n = self.states.first().map_or(0, Vec::len);
        let m = self.measurements.first().map_or(0, Vec::len);
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x_{i}")));
        header.extend((1..=m).map(|i| format!("y_{i}")));
        out.write_record(&header)?;
        let rows = self.states.len().max(self.measurements.len());
        for t in 0..rows {
            let mut rec = vec![t.to_string()];
            let fill = |v: Option<&Vec<f64>>, d: usize, rec: &mut Vec<String>| match v {
                Some(v) => rec.extend(v.iter().map(|x| format!("{x:e}"))),
                None => rec.extend(std::iter::repeat(String::new()).take(d)),
            };
            fill(self.states.get(t), n, &mut rec);
            fill(self.measurements.get(t), m, &mut rec);
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Parses the layout written by [`Trajectory::write_csv`]. Columns named
    /// `x_*` are optional so measurement-only files load too.
    pub fn read_csv(r: impl Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let xs: Vec<usize> = (0..header.len()).filter(|&i| header[i].starts_with("x_")).collect();
        let ys: Vec<usize> = (0..header.len()).filter(|&i| header[i].starts_with("y_")).collect();
        if ys.is_empty() {
            return Err(Error::Config("trajectory file has no y_ columns".into()));
        }
        let mut traj = Trajectory { states: Vec::new(), measurements: Vec::new() };
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |cols: &[usize]| -> Result<Option<Vec<f64>>> {
                if cols.iter().all(|&i| rec[i].trim().is_empty()) {
                    return Ok(None);
                }
                cols.iter()
                    .map(|&i| {
                        rec[i]
                            .trim()
                            .parse::<f64>()
                            .ok()
                            .filter(|v| v.is_finite())
                            .ok_or_else(|| Error::Config(format!("bad number `{}` in column {}", &rec[i], &header[i])))
                    })
                    .collect::<Result<Vec<_>>>()
                    .map(Some)
            };
            if !xs.is_empty() {
                if let Some(x) = parse(&xs)? {
                    traj.states.push(x);
                }
            }
            if let Some(y) = parse(&ys)? {
                traj.measurements.push(y);
            }
        }
        Ok(traj)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Draws `x_0` from the initial law and runs `T` transitions, measuring
/// every state including `x_0`.
pub fn simulate(model: &ModelSpec, horizon: usize, rng: &mut Rng) -> Trajectory {
    let mut states = Vec::with_capacity(horizon + 1);
    let mut measurements = Vec::with_capacity(horizon + 1);
    let mut x = model.initial.sample(rng);
    for t in 0..=horizon {
        if t > 0 {
            x = model.transition(&x, rng);
        }
        measurements.push(model.measure(&x, rng));
        states.push(x.clone());
    }
    Trajectory { states, measurements }
}

const TRUTH_ATTEMPTS: usize = 1000;

/// [`simulate`] for ground truth. SIR trajectories whose infected count
/// starts negative diverge under the Euler map; those draws are rejected
/// until every state component stays within ten times the initial
/// population. Other models are simulated once.
pub fn simulate_truth(model: &ModelSpec, horizon: usize, rng: &mut Rng) -> Result<Trajectory> {
    let Nonlinearity::Sir(_) = model.phi else {
        return Ok(simulate(model, horizon, rng));
    };
    let bound = 10.0 * model.initial.mean.iter().sum::<f64>().abs();
    for _ in 0..TRUTH_ATTEMPTS {
        let traj = simulate(model, horizon, rng);
        if traj.states.iter().flatten().all(|v| v.abs() <= bound) {
            return Ok(traj);
        }
    }
    Err(Error::Numerical(format!("no bounded SIR trajectory in {TRUTH_ATTEMPTS} draws")))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    LinearGaussian,
    NonlinearGaussian,
    LinearExponential,
    LinearUniform,
    Sir,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::LinearGaussian,
        Scenario::NonlinearGaussian,
        Scenario::LinearExponential,
        Scenario::LinearUniform,
        Scenario::Sir,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::LinearGaussian => "linear-gaussian",
            Scenario::NonlinearGaussian => "nonlinear-gaussian",
            Scenario::LinearExponential => "linear-exponential",
            Scenario::LinearUniform => "linear-uniform",
            Scenario::Sir => "sir",
        }
    }

    pub fn is_graph(self) -> bool {
        self != Scenario::Sir
    }

    /// Measurement dimension paired with state dimension `n`.
    pub fn measurement_dim(self, n: usize) -> usize {
        if self.is_graph() {
            n.saturating_sub(2)
        } else {
            2
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario `{s}`")))
    }
}

/// Graph-diffusion system of dimension `n` with `M = n − 2`, or the SIR
/// system when `scenario` is [`Scenario::Sir`] (then `n` is ignored).
pub fn build_scenario(scenario: Scenario, n: usize, snr_db: f64, seed: u64) -> Result<ModelSpec> {
    if scenario == Scenario::Sir {
        return sir_model(SirParams::default());
    }
    let m = scenario.measurement_dim(n);
    if n < 4 {
        return Err(Error::Config(format!("graph scenarios need N ≥ 4, got {n}")));
    }
    let a = build_geometric_graph(n, &mut Rng::derive(seed, &[0x6a7]))?;
    let c = build_measurement_matrix(n, m)?;
    let mu0 = vec![1.0; n];
    let var = variance_from_snr(&mu0, snr_db)?;
    let (family, phi) = match scenario {
        Scenario::LinearGaussian => (NoiseFamily::Gaussian, Nonlinearity::Identity),
        Scenario::NonlinearGaussian => (NoiseFamily::Gaussian, Nonlinearity::Abs),
        Scenario::LinearExponential => (NoiseFamily::ShiftedExponential, Nonlinearity::Identity),
        Scenario::LinearUniform => (NoiseFamily::CenteredUniform, Nonlinearity::Identity),
        Scenario::Sir => unreachable!(),
    };
    let model = ModelSpec {
        n,
        m,
        a,
        c,
        phi,
        state_noise: NoiseLaw::new(family, var)?,
        measurement_noise: NoiseLaw::new(family, var)?,
        initial: InitialLaw { family: NoiseFamily::Gaussian, mean: mu0, variance: vec![1.0; n] },
    };
    model.validate()?;
    Ok(model)
}

pub fn sir_model(params: SirParams) -> Result<ModelSpec> {
    let exp = NoiseFamily::ShiftedExponential;
    let model = ModelSpec {
        n: 3,
        m: 2,
        a: Matrix::identity(3),
        c: Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]])?,
        phi: Nonlinearity::Sir(params),
        state_noise: NoiseLaw::new(exp, 200.0)?,
        measurement_noise: NoiseLaw::new(exp, 2500.0)?,
        initial: InitialLaw { family: exp, mean: vec![997.0, 3.0, 0.0], variance: vec![500.0; 3] },
    };
    model.validate()?;
    Ok(model)
}

/// One-dimensional linear-Gaussian model `x_t = a x_{t−1} + v`, `y = c x + w`.
pub fn scalar_model(a: f64, c: f64, mu0: f64, p0: f64, state_var: f64, meas_var: f64) -> Result<ModelSpec> {
    let model = ModelSpec {
        n: 1,
        m: 1,
        a: Matrix::from_vec(1, 1, vec![a])?,
        c: Matrix::from_vec(1, 1, vec![c])?,
        phi: Nonlinearity::Identity,
        state_noise: NoiseLaw::gaussian(state_var)?,
        measurement_noise: NoiseLaw::gaussian(meas_var)?,
        initial: InitialLaw { family: NoiseFamily::Gaussian, mean: vec![mu0], variance: vec![p0] },
    };
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snr_examples() {
        assert!((variance_from_snr(&[1.0; 7], 0.0).unwrap() - 7.0).abs() < 1e-12);
        assert!((variance_from_snr(&[1.0; 10], 5.0).unwrap() - 3.16228).abs() < 1e-5);
        assert!((variance_from_snr(&[1.0; 50], 5.0).unwrap() - 15.8114).abs() < 1e-4);
        assert!(matches!(variance_from_snr(&[0.0; 3], 5.0), Err(Error::Config(_))));
    }

    #[test]
    fn horizon_zero_has_one_step() {
        let m = build_scenario(Scenario::LinearGaussian, 5, 5.0, 1).unwrap();
        let tr = simulate(&m, 0, &mut Rng::new(2));
        assert_eq!((tr.states.len(), tr.measurements.len()), (1, 1));
        assert_eq!(tr.measurements[0].len(), 3);
    }

    #[test]
    fn tape_drift_matches_value_drift() {
        let mut rng = Rng::new(4);
        for model in [
            build_scenario(Scenario::NonlinearGaussian, 6, 5.0, 3).unwrap(),
            sir_model(SirParams::default()).unwrap(),
        ] {
            let x = Matrix::from_raw(4, model.n, (0..4 * model.n).map(|_| 10.0 * rng.normal()).collect());
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let d = model.drift_on_tape(&mut tape, xv).unwrap();
            assert!(tape.value(d).max_abs_diff(&model.drift_rows(&x)) < 1e-12);
            let rows = model.drift_rows(&x);
            for k in 0..4 {
                for (a, b) in rows.row(k).iter().zip(model.drift(x.row(k))) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn scenario_names_round_trip() {
        for s in Scenario::ALL {
            assert_eq!(s.name().parse::<Scenario>().unwrap(), s);
        }
        assert!("heat".parse::<Scenario>().is_err());
    }
}
