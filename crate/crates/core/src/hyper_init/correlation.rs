use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::Mesh;

/// Correlation threshold defining the correlation length.
pub const CORRELATION_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEstimate {
    pub kappa: f64,
    pub delta_kappa: f64,
    /// Point pairs still inside the domain at the final shift.
    pub valid_pairs: usize,
}

/// Empirical correlation length of a 1D field: the smallest multiple of
/// `Δκ` at which the shifted-field correlation drops to 0.1.
///
/// Shifted points that leave the domain are dropped and the covariance is
/// renormalized by the remaining count. The search stops at the domain
/// extent.
pub fn correlation_length(field: &[f64], coords: &[f64], delta_kappa: Option<f64>) -> Result<CorrelationEstimate> {
    let m = field.len();
    if m < 3 || coords.len() != m {
        return Err(Error::InvalidInput(format!(
            "need at least 3 matching values and coordinates, got {m} and {}",
            coords.len()
        )));
    }
    if coords.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("coordinates must be strictly increasing".into()));
    }
    let extent = coords[m - 1] - coords[0];
    let dk = delta_kappa.unwrap_or(extent / (m - 1) as f64);
    if !(dk > 0.0 && dk.is_finite()) {
        return Err(Error::InvalidInput(format!("increment must be positive, got {dk}")));
    }
    let mean = field.iter().sum::<f64>() / m as f64;
    let var = field.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    let scale = field.iter().fold(0.0f64, |a, f| a.max(f.abs()));
    if !(var.sqrt() > 1e-10 * scale) || var == 0.0 {
        return Err(Error::DegenerateField("field has (numerically) zero variance".into()));
    }

    let end = coords[m - 1] * (1.0 + 1e-12) + 1e-14;
    let mut steps = 0u64;
    loop {
        steps += 1;
        let kappa = dk * steps as f64;
        if kappa >= extent {
            let valid = coords.iter().filter(|&&x| x + extent <= end).count();
            return Ok(CorrelationEstimate {
                kappa: extent,
                delta_kappa: dk,
                valid_pairs: valid,
            });
        }
        let mut sum = 0.0;
        let mut valid = 0usize;
        for (&x, &f) in coords.iter().zip(field) {
            let xs = x + kappa;
            if xs > end {
                continue;
            }
            sum += (f - mean) * (interpolate(coords, field, xs) - mean);
            valid += 1;
        }
        if valid < 2 {
            return Ok(CorrelationEstimate {
                kappa: kappa.min(extent),
                delta_kappa: dk,
                valid_pairs: valid,
            });
        }
        let rho = sum / (valid - 1) as f64 / var;
        if rho <= CORRELATION_THRESHOLD {
            return Ok(CorrelationEstimate {
                kappa,
                delta_kappa: dk,
                valid_pairs: valid,
            });
        }
    }
}

fn interpolate(xs: &[f64], fs: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x >= xs[n - 1] {
        return fs[n - 1];
    }
    let j = xs.partition_point(|&v| v <= x).clamp(1, n - 1);
    let t = (x - xs[j - 1]) / (xs[j] - xs[j - 1]);
    fs[j - 1] + t * (fs[j] - fs[j - 1])
}

/// Mean correlation length over the axis-aligned node lines of a mesh,
/// skipping lines with zero variance.
pub fn field_correlation_length(field: &[f64], mesh: &Mesh, delta_kappa: Option<f64>) -> Result<f64> {
    let dk = delta_kappa.or(Some(mesh.spacing()));
    let mut total = 0.0;
    let mut count = 0usize;
    for line in mesh.lines() {
        let values: Vec<f64> = line.indices.iter().map(|&i| field[i]).collect();
        match correlation_length(&values, &line.coords, dk) {
            Ok(est) => {
                total += est.kappa;
                count += 1;
            }
            Err(Error::DegenerateField(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if count == 0 {
        return Err(Error::DegenerateField("every grid line of the field is constant".into()));
    }
    Ok(total / count as f64)
}
