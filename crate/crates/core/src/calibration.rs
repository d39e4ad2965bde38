//! Low-fidelity optimization, Gaussian discrepancy calibration and the
//! post-optimality update `z̃ − H⁻¹Bθ`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::discrepancy::{evaluate, CalibrationDataset, DiscrepancyParams};
use crate::error::{check_len, Error, Result};
use crate::fem::{FunctionSpace, LinearSolutionOperator};
use crate::linalg::{self, Chol};
use crate::prior::{PriorModel, StateSpectrum};
use crate::rng;

/// `min_z ½‖S z + s₀ + δ(z,θ) − T‖²_{M_u} + (r/2)‖z‖²_{M_z}`.
#[derive(Debug, Clone)]
pub struct OptimizationProblem {
    state: Arc<FunctionSpace>,
    control: Arc<FunctionSpace>,
    operator: LinearSolutionOperator,
    target: DVector<f64>,
    regularization: f64,
}

impl OptimizationProblem {
    pub fn new(
        state: Arc<FunctionSpace>,
        control: Arc<FunctionSpace>,
        operator: LinearSolutionOperator,
        target: DVector<f64>,
        regularization: f64,
    ) -> Result<Self> {
        if !(regularization > 0.0 && regularization.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "regularization must be positive, got {regularization}"
            )));
        }
        check_len("solution operator rows", state.dim(), operator.n_state())?;
        check_len("solution operator columns", control.dim(), operator.n_control())?;
        check_len("target", state.dim(), target.len())?;
        Ok(Self {
            state,
            control,
            operator,
            target,
            regularization,
        })
    }

    pub fn state_space(&self) -> &Arc<FunctionSpace> {
        &self.state
    }

    pub fn control_space(&self) -> &Arc<FunctionSpace> {
        &self.control
    }

    pub fn operator(&self) -> &LinearSolutionOperator {
        &self.operator
    }

    pub fn target(&self) -> &DVector<f64> {
        &self.target
    }

    pub fn regularization(&self) -> f64 {
        self.regularization
    }

    /// Same objective with another solution operator.
    pub fn with_operator(&self, operator: LinearSolutionOperator) -> Result<Self> {
        Self::new(
            self.state.clone(),
            self.control.clone(),
            operator,
            self.target.clone(),
            self.regularization,
        )
    }

    /// Corrected state `S z + s₀ + δ(z, θ)`.
    pub fn state_of(&self, z: &DVector<f64>, theta: Option<&DiscrepancyParams>) -> Result<DVector<f64>> {
        let mut u = self.operator.apply(z)?;
        if let Some(theta) = theta {
            u += evaluate(theta, &self.control, z)?;
        }
        Ok(u)
    }

    pub fn objective(&self, z: &DVector<f64>, theta: Option<&DiscrepancyParams>) -> Result<f64> {
        let misfit = self.state_of(z, theta)? - &self.target;
        let reg = linalg::m_norm_sq(self.control.mass(), z);
        Ok(0.5 * self.state.norm_sq(&misfit)? + 0.5 * self.regularization * reg)
    }

    /// `∇_z𝒥(z, θ) = (S + L M_z)ᵀ M_u (u − T) + r M_z z`.
    pub fn gradient(&self, z: &DVector<f64>, theta: Option<&DiscrepancyParams>) -> Result<DVector<f64>> {
        let weighted = self.state.weight_apply(&(self.state_of(z, theta)? - &self.target))?;
        let mut g = self.operator.matrix().tr_mul(&weighted) + self.control.mass() * z * self.regularization;
        if let Some(theta) = theta {
            g += self.control.mass() * (theta.slope_transpose() * &weighted);
        }
        Ok(g)
    }

    /// `H = SᵀM_uS + r M_z`.
    pub fn hessian(&self) -> Result<DMatrix<f64>> {
        let s = self.operator.matrix();
        let mut h = s.tr_mul(&self.state.weight_apply_cols(s)?) + self.control.mass() * self.regularization;
        linalg::symmetrize(&mut h);
        Ok(h)
    }

    /// Solves the normal equations, refining until the gradient vanishes.
    pub fn solve_optimum(&self) -> Result<DVector<f64>> {
        let h = self.hessian()?;
        let chol = h
            .clone()
            .cholesky()
            .ok_or_else(|| Error::OptimizationFailure("normal equations are singular".into()))?;
        let mut z = DVector::zeros(self.control.dim());
        let rhs = -self.gradient(&z, None)?;
        z += chol.solve(&rhs);
        let mut g = self.gradient(&z, None)?;
        for _ in 0..3 {
            if g.norm() <= 1e-10 {
                break;
            }
            z -= chol.solve(&g);
            g = self.gradient(&z, None)?;
        }
        if !(g.norm() <= 1e-8) {
            return Err(Error::OptimizationFailure(format!(
                "first-order residual {:.3e} exceeds 1e-8",
                g.norm()
            )));
        }
        Ok(z)
    }
}

/// The low-fidelity optimum `z̃`.
pub fn solve_lowfi_optimum(problem: &OptimizationProblem) -> Result<DVector<f64>> {
    problem.solve_optimum()
}

/// `H = ∇_zz𝒥(z̃,0)` and the action `θ ↦ Bθ = ∇_zθ𝒥(z̃,0)θ`.
#[derive(Debug, Clone)]
pub struct SensitivityOperator {
    control: Arc<FunctionSpace>,
    z_tilde: DVector<f64>,
    hessian: DMatrix<f64>,
    chol: Chol,
    /// `M_u(ũ − T)`.
    weighted_residual: DVector<f64>,
    /// `SᵀM_u`.
    adjoint: DMatrix<f64>,
}

impl SensitivityOperator {
    pub fn z_tilde(&self) -> &DVector<f64> {
        &self.z_tilde
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    pub fn apply_hessian(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.hessian * v
    }

    /// `Bθ = M_z Lᵀ M_u(ũ − T) + SᵀM_u δ(z̃, θ)`.
    pub fn apply_b(&self, theta: &DiscrepancyParams) -> Result<DVector<f64>> {
        check_len("discrepancy state dimension", self.adjoint.ncols(), theta.n_u())?;
        let slope_term = self.control.mass() * (theta.slope_transpose() * &self.weighted_residual);
        let delta = evaluate(theta, &self.control, &self.z_tilde)?;
        Ok(slope_term + &self.adjoint * delta)
    }

    /// `z̃ − H⁻¹Bθ`.
    pub fn update_optimum(&self, theta: &DiscrepancyParams) -> Result<DVector<f64>> {
        let b = self.apply_b(theta)?;
        let step = self.chol.solve(&b);
        if !step.iter().all(|v| v.is_finite()) {
            return Err(Error::LinearSolve("Hessian solve produced non-finite values".into()));
        }
        Ok(&self.z_tilde - step)
    }

    /// Dense `B`, for small problems only.
    pub fn dense_b(&self) -> Result<DMatrix<f64>> {
        let n_u = self.adjoint.ncols();
        let n_z = self.z_tilde.len();
        let n = n_u * (n_z + 1);
        if n > 50 * linalg::DENSE_LIMIT {
            return Err(Error::TooLarge(n));
        }
        let mut b = DMatrix::zeros(n_z, n);
        for j in 0..n {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            b.set_column(j, &self.apply_b(&DiscrepancyParams::from_flat(n_u, n_z, e)?)?);
        }
        Ok(b)
    }
}

pub fn assemble_sensitivity(problem: &OptimizationProblem, z_tilde: &DVector<f64>) -> Result<SensitivityOperator> {
    check_len("z tilde", problem.control.dim(), z_tilde.len())?;
    let hessian = problem.hessian()?;
    let chol = hessian
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Curvature("Cholesky factorization failed".into()))?;
    let residual = problem.state_of(z_tilde, None)? - &problem.target;
    let weighted_residual = problem.state.weight_apply(&residual)?;
    let adjoint = problem.state.weight_apply_cols(problem.operator.matrix())?.transpose();
    Ok(SensitivityOperator {
        control: problem.control.clone(),
        z_tilde: z_tilde.clone(),
        hessian,
        chol,
        weighted_residual,
        adjoint,
    })
}

/// Conjugate Gaussian posterior over `θ` given centered data.
///
/// In the prior eigenbasis `Φ = VᵀM_uΘ`, rows are independent with
/// covariance `p_i C`, `C = R Rᵀ`, and the transformed data obey
/// `VᵀM_u D = Φ X + ε` with `ε ~ N(0, α_d I)`. With `RᵀX = U S Qᵀ`
/// each row posterior is `R K_i Rᵀ` with
/// `K_i = p_i (I − U diag(g_i) Uᵀ)`, `g_ij = c_ij / (1 + c_ij)`,
/// `c_ij = p_i s_j² / α_d`.
#[derive(Debug, Clone)]
pub struct PosteriorModel {
    n_u: usize,
    n_z: usize,
    dbar: f64,
    spectrum: StateSpectrum,
    prior_scale: DVector<f64>,
    column_factor: DMatrix<f64>,
    u: DMatrix<f64>,
    /// `1/(1 + c_ij)`, `n_u × rank`.
    shrink: DMatrix<f64>,
    mean: DiscrepancyParams,
}

pub fn calibrate(data: Option<&CalibrationDataset>, prior: &PriorModel) -> Result<PosteriorModel> {
    let (n_u, n_z) = (prior.n_u(), prior.n_z());
    let spectrum = prior.state_spectrum().map_err(|e| Error::Calibration(e.to_string()))?;
    let prior_scale = &spectrum.variance * prior.hyper().alpha_u;
    let column_factor = prior.column_factor();
    let alpha_d = prior.hyper().alpha_d;
    let (u, shrink, mean, dbar) = match data.filter(|d| !d.is_empty()) {
        None => (
            DMatrix::zeros(n_z + 1, 0),
            DMatrix::zeros(n_u, 0),
            DiscrepancyParams::zeros(n_u, n_z),
            0.0,
        ),
        Some(data) => {
            check_len("dataset state", n_u, data.n_state())?;
            check_len("dataset control", n_z, data.n_control())?;
            let control = prior.control();
            let features: Vec<DVector<f64>> = data
                .z()
                .iter()
                .map(|z| {
                    let w = control.mass() * z;
                    DVector::from_iterator(n_z + 1, std::iter::once(1.0).chain(w.iter().copied()))
                })
                .collect();
            let y = column_factor.tr_mul(&DMatrix::from_columns(&features));
            let svd = y.svd(true, true);
            let (uf, vt) = match (svd.u, svd.v_t) {
                (Some(u), Some(vt)) => (u, vt),
                _ => return Err(Error::Calibration("SVD of data features failed".into())),
            };
            let smax = svd.singular_values.max();
            let keep: Vec<usize> = (0..svd.singular_values.len())
                .filter(|&j| svd.singular_values[j] > smax * 1e-13)
                .collect();
            let u = DMatrix::from_columns(&keep.iter().map(|&j| uf.column(j).into_owned()).collect::<Vec<_>>());
            let s: Vec<f64> = keep.iter().map(|&j| svd.singular_values[j]).collect();
            let q = DMatrix::from_rows(&keep.iter().map(|&j| vt.row(j).into_owned()).collect::<Vec<_>>())
                .transpose();
            let d = DMatrix::from_columns(data.d());
            let dt = spectrum.apply_transpose(&prior.state().weight_apply_cols(&d)?);
            let proj = dt * q;
            let r = s.len();
            let shrink = DMatrix::from_fn(n_u, r, |i, j| 1.0 / (1.0 + prior_scale[i] * s[j] * s[j] / alpha_d));
            let coef = DMatrix::from_fn(n_u, r, |i, j| {
                prior_scale[i] / alpha_d * shrink[(i, j)] * s[j] * proj[(i, j)]
            });
            let phi = coef * u.transpose() * column_factor.transpose();
            let theta = spectrum.apply(&phi);
            let mean = DiscrepancyParams::from_matrix(&theta)?;
            if !mean.values().iter().all(|v| v.is_finite()) {
                return Err(Error::Calibration("posterior mean is not finite".into()));
            }
            (u, shrink, mean, data.dbar())
        }
    };
    Ok(PosteriorModel {
        n_u,
        n_z,
        dbar,
        spectrum,
        prior_scale,
        column_factor,
        u,
        shrink,
        mean,
    })
}

impl PosteriorModel {
    pub fn n_theta(&self) -> usize {
        self.n_u * (self.n_z + 1)
    }

    /// Posterior mean for the centered data.
    pub fn mean(&self) -> &DiscrepancyParams {
        &self.mean
    }

    /// Centering shift `d̄` of the calibration data.
    pub fn dbar(&self) -> f64 {
        self.dbar
    }

    /// Adds `d̄` back to `θ₀`, so `δ` reproduces uncentered data.
    pub fn uncentered(&self, theta: &DiscrepancyParams) -> DiscrepancyParams {
        let mut out = theta.clone();
        out.theta0_mut().iter_mut().for_each(|t| *t += self.dbar);
        out
    }

    /// Zero-mean posterior draw driven by `ω` (length `n_θ`, read as the
    /// rows of an `n_u × (n_z+1)` matrix).
    pub fn deviation_from_noise(&self, omega: &DVector<f64>) -> Result<DiscrepancyParams> {
        check_len("posterior noise", self.n_theta(), omega.len())?;
        let k = self.n_z + 1;
        let omega = DMatrix::from_row_slice(self.n_u, k, omega.as_slice());
        let w = &omega * &self.u;
        let adjust = DMatrix::from_fn(self.n_u, self.u.ncols(), |i, j| w[(i, j)] * (self.shrink[(i, j)].sqrt() - 1.0));
        let mut psi = omega + adjust * self.u.transpose();
        for (i, mut row) in psi.row_iter_mut().enumerate() {
            row *= self.prior_scale[i].sqrt();
        }
        let theta = self.spectrum.apply(&(psi * self.column_factor.transpose()));
        DiscrepancyParams::from_matrix(&theta)
    }

    pub fn sample(&self, seed: u64) -> Result<DiscrepancyParams> {
        let mut rng = rng::stream(seed);
        let omega = rng::standard_normal(&mut rng, self.n_theta());
        self.mean.add(&self.deviation_from_noise(&omega)?)
    }

    /// Prior and posterior variance of `⟨direction, θ⟩` (Euclidean pairing).
    pub fn directional_variance(&self, direction: &DiscrepancyParams) -> Result<(f64, f64)> {
        check_len("direction", self.n_theta(), direction.n_theta())?;
        let c = self.spectrum.apply_transpose(&direction.as_matrix());
        let r = c * &self.column_factor;
        let proj = &r * &self.u;
        let mut prior = 0.0;
        let mut post = 0.0;
        for i in 0..self.n_u {
            let norm = r.row(i).norm_squared();
            let removed: f64 = (0..self.u.ncols())
                .map(|j| (1.0 - self.shrink[(i, j)]) * proj[(i, j)].powi(2))
                .sum();
            prior += self.prior_scale[i] * norm;
            post += self.prior_scale[i] * (norm - removed);
        }
        Ok((prior, post))
    }

    /// Dense posterior covariance, for oracles on small problems.
    pub fn dense_covariance(&self) -> Result<DMatrix<f64>> {
        let n = self.n_theta();
        if n > 4000 {
            return Err(Error::TooLarge(n));
        }
        let mut t = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            t.set_column(j, self.deviation_from_noise(&e)?.values());
        }
        Ok(&t * t.transpose())
    }
}

/// `z̃ − H⁻¹B(θ̂ + d̄ e₀)`, the update at the posterior mean.
pub fn mean_optimum(sens: &SensitivityOperator, posterior: &PosteriorModel) -> Result<DVector<f64>> {
    sens.update_optimum(&posterior.uncentered(posterior.mean()))
}

/// `n` draws of `z̃ − H⁻¹Bθ`, `θ` from the posterior; draw `j` uses
/// `seed + j`.
pub fn posterior_optimum_ensemble(
    sens: &SensitivityOperator,
    posterior: &PosteriorModel,
    n: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    if n == 0 {
        return Err(Error::InvalidInput("ensemble size must be at least 1".into()));
    }
    (0..n as u64)
        .into_par_iter()
        .map(|j| {
            let theta = posterior.sample(seed.wrapping_add(j))?;
            sens.update_optimum(&posterior.uncentered(&theta))
        })
        .collect()
}
