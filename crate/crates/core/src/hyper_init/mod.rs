//! Algorithmic initialization of prior and noise hyper-parameters from a
//! calibration dataset.

mod correlation;
mod spectral;

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use correlation::{correlation_length, field_correlation_length, CorrelationEstimate, CORRELATION_THRESHOLD};
pub use spectral::{
    control_perturbation, estimate_gamma_sq, expected_eigratio, unit_cube_spectrum, EigRatioEstimate, GammaEstimate,
    COS_ZETA, TRUNCATION,
};

use crate::discrepancy::CalibrationDataset;
use crate::error::{check_len, Error, Result};
use crate::fem::{FunctionSpace, LinearSolutionOperator, Mesh};
use crate::prior::{HyperParams, PriorModel};

/// Noise standard deviation as a fraction of the data magnitude.
pub const NOISE_FRACTION: f64 = 0.001;

/// `C_s` in `β = κ²/C_s` for spatial dimension `s`.
pub fn smoothness_constant(dim: usize) -> f64 {
    match dim {
        1 => 12.0,
        2 => 8.0,
        _ => 4.0,
    }
}

pub fn beta_from_length(kappa: f64, dim: usize) -> f64 {
    kappa * kappa / smoothness_constant(dim)
}

/// Temporal smoothness `β_t = κ_t²/4`.
pub fn beta_t_from_length(kappa: f64) -> f64 {
    kappa * kappa / 4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitOptions {
    /// Correlation-length increment; defaults to the mesh spacing.
    pub delta_kappa: Option<f64>,
    pub mc_gamma: usize,
    pub mc_eig: usize,
    pub seed: u64,
    pub eps_t: f64,
    /// Use every `subsample`-th snapshot and time series.
    pub subsample: usize,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self {
            delta_kappa: None,
            mc_gamma: 200,
            mc_eig: 10_000,
            seed: 0,
            eps_t: 0.01,
            subsample: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessInit {
    pub kappa_u: f64,
    pub kappa_z: f64,
    pub kappa_t: Option<f64>,
    pub beta_u: f64,
    pub beta_z: f64,
    pub beta_t: Option<f64>,
}

fn mean_length<'a>(fields: impl Iterator<Item = &'a [f64]>, mesh: &Mesh, dk: Option<f64>, what: &str) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for f in fields {
        match field_correlation_length(f, mesh, dk) {
            Ok(k) => {
                total += k;
                count += 1;
            }
            Err(Error::DegenerateField(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if count == 0 {
        return Err(Error::InitFailure(format!("every {what} field is degenerate")));
    }
    Ok(total / count as f64)
}

/// Correlation lengths of the data, mapped to smoothness parameters.
///
/// Spatial lengths average over every snapshot of every `d_ℓ`, temporal
/// lengths over every nodal time series, and the control length over the
/// `z_ℓ`. Degenerate (constant) fields are skipped.
pub fn init_smoothness(
    data: &CalibrationDataset,
    state: &FunctionSpace,
    control: &FunctionSpace,
    opts: &InitOptions,
) -> Result<SmoothnessInit> {
    check_len("dataset state", state.dim(), data.n_state())?;
    check_len("dataset control", control.dim(), data.n_control())?;
    let step = opts.subsample.max(1);
    let (ns, nt) = (state.n_space(), state.n_time());
    let snapshots: Vec<&[f64]> = data
        .d()
        .iter()
        .flat_map(|d| (0..nt).map(move |i| &d.as_slice()[i * ns..(i + 1) * ns]))
        .step_by(step)
        .collect();
    let kappa_u = mean_length(snapshots.into_iter(), state.mesh(), opts.delta_kappa, "state snapshot")?;
    let kappa_z = mean_length(
        data.z().iter().map(|z| z.as_slice()),
        control.mesh(),
        opts.delta_kappa,
        "control",
    )?;
    let kappa_t = match state.time() {
        None => None,
        Some(grid) => {
            let series: Vec<Vec<f64>> = data
                .d()
                .iter()
                .flat_map(|d| (0..ns).map(move |j| (0..nt).map(|i| d[i * ns + j]).collect::<Vec<f64>>()))
                .step_by(step)
                .collect();
            let mut total = 0.0;
            let mut count = 0usize;
            for s in &series {
                match correlation_length(s, grid.times(), None) {
                    Ok(est) => {
                        total += est.kappa;
                        count += 1;
                    }
                    Err(Error::DegenerateField(_)) => {}
                    Err(e) => return Err(e),
                }
            }
            if count == 0 {
                return Err(Error::InitFailure("every time series is degenerate".into()));
            }
            Some(total / count as f64)
        }
    };
    Ok(SmoothnessInit {
        kappa_u,
        kappa_z,
        kappa_t,
        beta_u: beta_from_length(kappa_u, state.mesh().dim()),
        beta_z: beta_from_length(kappa_z, control.mesh().dim()),
        beta_t: kappa_t.map(beta_t_from_length),
    })
}

/// `α_t = avg_ℓ(n_ℓ) / max + ε_t` from per-step squared norms `n_ℓ`.
pub fn temporal_weights_from_norms(norms: &[Vec<f64>], eps_t: f64) -> Result<Vec<f64>> {
    if norms.is_empty() {
        return Err(Error::InvalidInput("need at least one norm profile".into()));
    }
    let nt = norms[0].len();
    let mut avg = vec![0.0; nt];
    for n in norms {
        check_len("norm profile", nt, n.len())?;
        for (a, v) in avg.iter_mut().zip(n) {
            *a += v / norms.len() as f64;
        }
    }
    let max = avg.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(avg
        .iter()
        .map(|a| if max > 0.0 { a / max + eps_t } else { eps_t })
        .collect())
}

/// Temporal variance weights from the per-step spatial norms of the
/// uncentered discrepancy data.
pub fn init_temporal_weights(data: &CalibrationDataset, state: &FunctionSpace, eps_t: f64) -> Result<Vec<f64>> {
    check_len("dataset state", state.dim(), data.n_state())?;
    if !(eps_t > 0.0) {
        return Err(Error::Validation(format!("eps_t must be positive, got {eps_t}")));
    }
    let nt = state.n_time();
    let norms: Vec<Vec<f64>> = (0..data.len())
        .map(|l| {
            let raw = data.raw(l);
            (0..nt)
                .map(|i| {
                    let snap = DVector::from_column_slice(state.snapshot(&raw, i));
                    (state.mass() * &snap).dot(&snap)
                })
                .collect()
        })
        .collect();
    temporal_weights_from_norms(&norms, eps_t)
}

/// `α_u = ‖d₁‖²_{M_u} / Tr_{M_u}(E_u⁻¹M_uE_u⁻¹)`.
pub fn init_alpha_u(data: &CalibrationDataset, prior: &PriorModel) -> Result<f64> {
    let d1 = &data.d()[0];
    let norm = prior.state().norm_sq(d1)?;
    if !(norm > 0.0) {
        return Err(Error::ZeroData("the first discrepancy datum is zero".into()));
    }
    Ok(norm / prior.trace_state_covariance())
}

/// `α_z = (γ²/‖d₁‖²) / (‖z̃‖² · E[ratio])`.
pub fn init_alpha_z(gamma_sq: f64, d1_norm_sq: f64, z_norm_sq: f64, eigratio: f64) -> Result<f64> {
    let den = d1_norm_sq * z_norm_sq * eigratio;
    if !(den > 0.0 && den.is_finite()) {
        return Err(Error::InitFailure("zero denominator in the control variance".into()));
    }
    let alpha = gamma_sq / den;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InitFailure(format!("control variance is not positive ({alpha})")));
    }
    Ok(alpha)
}

/// `α_d = (0.001 C_δ)²`.
pub fn init_noise(c_delta: f64) -> Result<f64> {
    if !(c_delta > 0.0 && c_delta.is_finite()) {
        return Err(Error::ZeroData("discrepancy magnitude is zero".into()));
    }
    Ok((NOISE_FRACTION * c_delta).powi(2))
}

/// Intermediate quantities of a full initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitReport {
    pub hyper: HyperParams,
    pub smoothness: SmoothnessInit,
    pub gamma: GammaEstimate,
    pub eigratio: EigRatioEstimate,
    pub d1_norm_sq: f64,
    pub z_norm_sq: f64,
}

/// Runs every initialization step in order: smoothness, temporal
/// weights, `α_u`, `γ²`, the eigenvalue ratio, `α_z` and `α_d`.
pub fn initialize(
    data: &CalibrationDataset,
    state: Arc<FunctionSpace>,
    control: Arc<FunctionSpace>,
    lowfi: &LinearSolutionOperator,
    opts: &InitOptions,
) -> Result<InitReport> {
    let smoothness = init_smoothness(data, &state, &control, opts)?;
    let alpha_t = match state.time() {
        Some(_) => Some(init_temporal_weights(data, &state, opts.eps_t)?),
        None => None,
    };
    let alpha_d = init_noise(data.c_delta())?;
    let provisional = HyperParams {
        alpha_u: 1.0,
        beta_u: smoothness.beta_u,
        alpha_z: 1.0,
        beta_z: smoothness.beta_z,
        alpha_t,
        beta_t: smoothness.beta_t,
        eps_t: opts.eps_t,
        alpha_d,
    };
    let prior = PriorModel::build(state.clone(), control.clone(), provisional.clone(), data.z_tilde().clone())?;
    let alpha_u = init_alpha_u(data, &prior)?;
    let gamma = estimate_gamma_sq(lowfi, &prior, opts.mc_gamma, opts.seed)?;
    let eig = prior.control_eigen()?;
    let eigratio = expected_eigratio(eig.values.as_slice(), opts.mc_eig, opts.seed)?;
    let d1_norm_sq = state.norm_sq(&data.d()[0])?;
    let z_norm_sq = control.norm_sq(data.z_tilde())?;
    let alpha_z = init_alpha_z(gamma.gamma_sq, d1_norm_sq, z_norm_sq, eigratio.mean)?;
    let hyper = HyperParams {
        alpha_u,
        alpha_z,
        ..provisional
    };
    hyper.validate()?;
    Ok(InitReport {
        hyper,
        smoothness,
        gamma,
        eigratio,
        d1_norm_sq,
        z_norm_sq,
    })
}
