use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::ssm::ModelSpec;

#[derive(Clone, Debug)]
pub struct KalmanState {
    pub mean: Vec<f64>,
    pub cov: Matrix,
}

/// Posterior means and covariances for `t = 0..=T`; `t = 0` updates the
/// prior with `y_0`. Covariances use the Joseph form to stay PSD.
pub fn kalman_filter(model: &ModelSpec, measurements: &[Vec<f64>]) -> Result<Vec<KalmanState>> {
    if !model.is_linear_gaussian() {
        return Err(Error::Contract("the Kalman filter needs a linear model with Gaussian noise".into()));
    }
    let n = model.n;
    let sv2 = model.state_noise.variance;
    let sw2 = model.measurement_noise.variance;
    let mut mean = model.initial.mean.clone();
    let mut cov = Matrix::from_diag(&model.initial.variance);
    let mut out = Vec::with_capacity(measurements.len());
    for (t, y) in measurements.iter().enumerate() {
        if t > 0 {
            mean = model.a.matvec(&mean)?;
            cov = model.a.matmul(&cov)?.matmul_t(&model.a)?.add_diagonal(sv2).symmetrized();
        }
        let pct = cov.matmul_t(&model.c)?;
        let s = model.c.matmul(&pct)?.add_diagonal(sw2).symmetrized();
        let gain = pct.matmul(&s.inverse()?)?;
        let pred = model.c.matvec(&mean)?;
        let innov: Vec<f64> = y.iter().zip(pred).map(|(a, b)| a - b).collect();
        for (m, d) in mean.iter_mut().zip(gain.matvec(&innov)?) {
            *m += d;
        }
        let ikc = Matrix::identity(n).sub(&gain.matmul(&model.c)?)?;
        let joseph = ikc.matmul(&cov)?.matmul_t(&ikc)?;
        cov = joseph.add(&gain.matmul_t(&gain)?.scale(sw2))?.symmetrized();
        out.push(KalmanState { mean: mean.clone(), cov: cov.clone() });
    }
    Ok(out)
}
