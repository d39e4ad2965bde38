use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::fem::LinearSolutionOperator;
use crate::linalg;
use crate::prior::PriorModel;
use crate::rng;

/// Modes whose weight `λ⁻²` falls below this fraction of the leading
/// weight are dropped from the eigen-ratio estimate.
pub const TRUNCATION: f64 = 1e-12;

/// Angle cosine between high- and low-fidelity sensitivities assumed by
/// the `γ²` approximation.
pub const COS_ZETA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaEstimate {
    pub gamma_sq: f64,
    pub n_draws: usize,
    pub std_error: f64,
    pub cos_zeta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigRatioEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub retained_modes: usize,
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Perturbation `Δz = ‖z̃‖_{M_z} F ω / ‖F ω‖_{M_z}` with `F = E_z⁻¹G_z`.
pub fn control_perturbation(prior: &PriorModel, seed: u64) -> Result<DVector<f64>> {
    let mass = prior.control().mass();
    let scale = linalg::m_norm_sq(mass, prior.z_tilde()).sqrt();
    if !(scale > 0.0) {
        return Err(Error::DegeneratePerturbation("z tilde has zero norm".into()));
    }
    let mut rng = rng::stream(seed);
    let field = prior.apply_control_factor(&rng::standard_normal(&mut rng, prior.n_z()))?;
    let norm = linalg::m_norm_sq(mass, &field).sqrt();
    Ok(field * (scale / norm))
}

/// Monte Carlo `γ² ≈ E‖S̃(z̃+Δz) − S̃(z̃)‖²_{M_u}`; draw `j` uses `seed + j`.
pub fn estimate_gamma_sq(
    lowfi: &LinearSolutionOperator,
    prior: &PriorModel,
    n_mc: usize,
    seed: u64,
) -> Result<GammaEstimate> {
    if n_mc == 0 {
        return Err(Error::InvalidInput("need at least one Monte Carlo draw".into()));
    }
    check_len("low-fidelity state", prior.n_u(), lowfi.n_state())?;
    let z = prior.z_tilde();
    let base = lowfi.apply(z)?;
    let values = (0..n_mc as u64)
        .into_par_iter()
        .map(|j| {
            let dz = control_perturbation(prior, seed.wrapping_add(j))?;
            let diff = lowfi.apply(&(z + dz))? - &base;
            prior.state().norm_sq(&diff)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (gamma_sq, std_error) = mean_and_se(&values);
    Ok(GammaEstimate {
        gamma_sq,
        n_draws: n_mc,
        std_error,
        cos_zeta: COS_ZETA,
    })
}

/// Monte Carlo `E[ωᵀΛ⁻⁴ω / ωᵀΛ⁻²ω]` for the eigenvalues `Λ` of `E_z`.
pub fn expected_eigratio(eigenvalues: &[f64], n_mc: usize, seed: u64) -> Result<EigRatioEstimate> {
    if eigenvalues.is_empty() {
        return Err(Error::InvalidInput("empty spectrum".into()));
    }
    if n_mc == 0 {
        return Err(Error::InvalidInput("need at least one Monte Carlo draw".into()));
    }
    if eigenvalues.iter().any(|&l| !(l >= 1.0 - 1e-9) || !l.is_finite()) {
        return Err(Error::InvalidInput("eigenvalues must be finite and >= 1".into()));
    }
    let mut weights: Vec<f64> = eigenvalues.iter().map(|l| 1.0 / (l * l)).collect();
    weights.sort_by(|a, b| b.total_cmp(a));
    let cutoff = weights[0] * TRUNCATION;
    weights.retain(|&w| w >= cutoff);
    let values: Vec<f64> = (0..n_mc as u64)
        .into_par_iter()
        .map(|j| {
            let mut rng = rng::stream(seed.wrapping_add(j));
            let omega = rng::standard_normal(&mut rng, weights.len());
            let (mut num, mut den) = (0.0, 0.0);
            for (w, o) in weights.iter().zip(omega.iter()) {
                let t = w * o * o;
                den += t;
                num += w * t;
            }
            num / den
        })
        .collect();
    let (mean, std_error) = mean_and_se(&values);
    Ok(EigRatioEstimate {
        mean,
        std_error,
        retained_modes: weights.len(),
    })
}

/// Eigenvalues `1 + β π²|k|²` of `βK + M` on the unit cube `[0,1]^s` with
/// Neumann conditions, using `modes` indices `k_i = 0..modes` per axis.
pub fn unit_cube_spectrum(dim: u32, modes: usize, beta: f64) -> Vec<f64> {
    let pi2 = std::f64::consts::PI.powi(2);
    let total = modes.pow(dim);
    (0..total)
        .map(|mut idx| {
            let mut k2 = 0.0;
            for _ in 0..dim {
                let k = (idx % modes) as f64;
                idx /= modes;
                k2 += k * k;
            }
            1.0 + beta * pi2 * k2
        })
        .collect()
}
