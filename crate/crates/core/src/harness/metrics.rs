use crate::error::{dim_err, Error, Result};

fn check_lengths(estimates: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<()> {
    if estimates.len() != reference.len() {
        return Err(dim_err!("{} estimates for {} reference states", estimates.len(), reference.len()));
    }
    if let Some((t, (e, r))) = estimates.iter().zip(reference).enumerate().find(|(_, (e, r))| e.len() != r.len()) {
        return Err(dim_err!("estimate of length {} against reference of length {} at t={t}", e.len(), r.len()));
    }
    Ok(())
}

/// `Σ_t ‖x̂_t − x_t‖² / Σ_t ‖x_t‖²`.
pub fn nmse(estimates: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<f64> {
    check_lengths(estimates, reference)?;
    let mut err = 0.0;
    let mut energy = 0.0;
    for (e, r) in estimates.iter().zip(reference) {
        for (a, b) in e.iter().zip(r) {
            err += (a - b) * (a - b);
            energy += b * b;
        }
    }
    if energy == 0.0 {
        return Err(Error::Metric("reference trajectory has zero energy".into()));
    }
    Ok(err / energy)
}

/// Per-component `(1/(T+1)) Σ_t (x̂_{t,i} − x_{t,i})²`.
pub fn mse(estimates: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_lengths(estimates, reference)?;
    let n = reference.first().map_or(0, Vec::len);
    let mut out = vec![0.0; n];
    for (e, r) in estimates.iter().zip(reference) {
        for (o, (a, b)) in out.iter_mut().zip(e.iter().zip(r)) {
            *o += (a - b) * (a - b);
        }
    }
    let len = reference.len().max(1) as f64;
    out.iter_mut().for_each(|v| *v /= len);
    Ok(out)
}

/// Median (mean of the middle pair for even counts) and population
/// standard deviation.
pub fn aggregate(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Metric("cannot aggregate an empty cell".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    let mean = v.iter().sum::<f64>() / n as f64;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    Ok((median, var.sqrt()))
}
