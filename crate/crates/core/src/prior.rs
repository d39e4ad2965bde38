//! Gaussian prior on discrepancy parameters.
//!
//! In matrix form `Θ = [θ₀ | L]`, the prior covariance factors as
//! `Cov(Θ_ia, Θ_jb) = (W_u⁻¹)_ij C_ab` with
//! `C = [[1 + z̃ᵀM_zW_z⁻¹M_zz̃, −z̃ᵀM_zW_z⁻¹], [−W_z⁻¹M_zz̃, W_z⁻¹]]`.
//! `W_u⁻¹ = α_u E_u⁻¹M_uE_u⁻¹` (stationary) or
//! `α_u (D^{1/2}E_t⁻¹D^{1/2}) ⊗ (E_s⁻¹M_sE_s⁻¹)` (transient), and
//! `W_z⁻¹ = α_z E_z⁻¹M_zE_z⁻¹`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::discrepancy::DiscrepancyParams;
use crate::error::{check_len, Error, Result};
use crate::fem::{EllipticOperator, FunctionSpace};
use crate::linalg::{self, GeneralizedEigen};
use crate::rng;

fn default_eps_t() -> f64 {
    0.01
}

/// Prior and noise hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub alpha_u: f64,
    pub beta_u: f64,
    pub alpha_z: f64,
    pub beta_z: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_t: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_t: Option<f64>,
    #[serde(default = "default_eps_t")]
    pub eps_t: f64,
    pub alpha_d: f64,
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha_u", self.alpha_u),
            ("alpha_z", self.alpha_z),
            ("alpha_d", self.alpha_d),
            ("eps_t", self.eps_t),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} must be positive and finite, got {v}")));
            }
        }
        let smooth = [("beta_u", Some(self.beta_u)), ("beta_z", Some(self.beta_z)), ("beta_t", self.beta_t)];
        for (name, v) in smooth {
            if let Some(v) = v {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::Validation(format!("{name} must be finite and >= 0, got {v}")));
                }
            }
        }
        if let Some(at) = &self.alpha_t {
            if at.iter().any(|&a| !(a >= self.eps_t && a.is_finite())) {
                return Err(Error::Validation(format!(
                    "alpha_t entries must be finite and >= eps_t = {}",
                    self.eps_t
                )));
            }
        }
        Ok(())
    }
}

/// A prior draw `θ = T_θ ω` together with its driving noise.
#[derive(Debug, Clone)]
pub struct PriorSample {
    pub theta: DiscrepancyParams,
    pub seed: u64,
    pub omega: DVector<f64>,
}

#[derive(Debug, Clone)]
struct Temporal {
    /// `T_t = D^{1/2} L_{E_t}⁻ᵀ` with `T_t T_tᵀ = W_t⁻¹`.
    factor: DMatrix<f64>,
}

/// Orthonormal coordinates diagonalizing the state prior covariance.
#[derive(Debug, Clone)]
pub enum SpectralBasis {
    Dense(DMatrix<f64>),
    /// `V_t ⊗ V_s` for time-major space-time vectors.
    Kron { time: DMatrix<f64>, space: DMatrix<f64> },
}

/// `V` with `VᵀM_uV = I` and `VᵀM_u (W_u⁻¹/α_u) M_uV = diag(variance)`.
#[derive(Debug, Clone)]
pub struct StateSpectrum {
    pub basis: SpectralBasis,
    pub variance: DVector<f64>,
}

impl StateSpectrum {
    /// `V X`.
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.basis {
            SpectralBasis::Dense(v) => v * x,
            SpectralBasis::Kron { time, space } => map_cols(x, |c| linalg::kron_apply(time, space, c)),
        }
    }

    /// `Vᵀ X`.
    pub fn apply_transpose(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.basis {
            SpectralBasis::Dense(v) => v.tr_mul(x),
            SpectralBasis::Kron { time, space } => {
                let (tt, st) = (time.transpose(), space.transpose());
                map_cols(x, |c| linalg::kron_apply(&tt, &st, c))
            }
        }
    }
}

fn map_cols(x: &DMatrix<f64>, f: impl Fn(&DVector<f64>) -> DVector<f64>) -> DMatrix<f64> {
    let cols: Vec<DVector<f64>> = x.column_iter().map(|c| f(&c.into_owned())).collect();
    if cols.is_empty() {
        return DMatrix::zeros(x.nrows(), 0);
    }
    DMatrix::from_columns(&cols)
}

#[derive(Debug, Clone)]
pub struct PriorModel {
    state: Arc<FunctionSpace>,
    control: Arc<FunctionSpace>,
    hyper: HyperParams,
    z_tilde: DVector<f64>,
    e_u: EllipticOperator,
    /// `E_s⁻¹G_s`, the unit spatial factor.
    f_u: DMatrix<f64>,
    temporal: Option<Temporal>,
    e_z: EllipticOperator,
    /// `E_z⁻¹G_z`.
    f_z: DMatrix<f64>,
    /// `(E_z⁻¹G_z)ᵀ M_z z̃`.
    anchor: DVector<f64>,
}

impl PriorModel {
    pub fn build(
        state: Arc<FunctionSpace>,
        control: Arc<FunctionSpace>,
        hyper: HyperParams,
        z_tilde: DVector<f64>,
    ) -> Result<Self> {
        hyper.validate()?;
        check_len("z tilde", control.dim(), z_tilde.len())?;
        if control.time().is_some() {
            return Err(Error::InvalidConfig("controls must be stationary fields".into()));
        }
        let e_u = EllipticOperator::for_space(&state, hyper.beta_u)?;
        let f_u = factor(&e_u, state.mass())?;
        let temporal = match state.time() {
            None => None,
            Some(grid) => {
                let nt = grid.n_time();
                let alpha_t = hyper.alpha_t.clone().unwrap_or_else(|| vec![1.0; nt]);
                check_len("alpha_t", nt, alpha_t.len())?;
                let e_t = EllipticOperator::new(grid.mass(), grid.stiffness(), hyper.beta_t.unwrap_or(0.0))?;
                let l = e_t.cholesky().l();
                let mut factor = l
                    .transpose()
                    .try_inverse()
                    .ok_or_else(|| Error::Assembly("temporal factor is singular".into()))?;
                for (i, a) in alpha_t.iter().enumerate() {
                    factor.row_mut(i).scale_mut(a.sqrt());
                }
                Some(Temporal { factor })
            }
        };
        let e_z = EllipticOperator::for_space(&control, hyper.beta_z)?;
        let f_z = factor(&e_z, control.mass())?;
        let anchor = f_z.tr_mul(&(control.mass() * &z_tilde));
        Ok(Self {
            state,
            control,
            hyper,
            z_tilde,
            e_u,
            f_u,
            temporal,
            e_z,
            f_z,
            anchor,
        })
    }

    /// Rebuilds the operators for new hyper-parameters.
    pub fn with_hyper(&self, hyper: HyperParams) -> Result<Self> {
        Self::build(self.state.clone(), self.control.clone(), hyper, self.z_tilde.clone())
    }

    pub fn hyper(&self) -> &HyperParams {
        &self.hyper
    }

    pub fn state(&self) -> &Arc<FunctionSpace> {
        &self.state
    }

    pub fn control(&self) -> &Arc<FunctionSpace> {
        &self.control
    }

    pub fn z_tilde(&self) -> &DVector<f64> {
        &self.z_tilde
    }

    pub fn n_u(&self) -> usize {
        self.state.dim()
    }

    pub fn n_z(&self) -> usize {
        self.control.dim()
    }

    pub fn n_theta(&self) -> usize {
        self.n_u() * (self.n_z() + 1)
    }

    pub fn state_operator(&self) -> &EllipticOperator {
        &self.e_u
    }

    pub fn control_operator(&self) -> &EllipticOperator {
        &self.e_z
    }

    /// Unit state factor `T_u/√α_u` applied to `ω`.
    pub fn apply_state_factor(&self, omega: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("state noise", self.n_u(), omega.len())?;
        Ok(match &self.temporal {
            None => &self.f_u * omega,
            Some(t) => linalg::kron_apply(&t.factor, &self.f_u, omega),
        })
    }

    /// Unit control factor `E_z⁻¹G_z` applied to `ω`.
    pub fn apply_control_factor(&self, omega: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("control noise", self.n_z(), omega.len())?;
        Ok(&self.f_z * omega)
    }

    /// `R` with `R Rᵀ = C`, the column covariance of `Θ = [θ₀ | L]`.
    pub fn column_factor(&self) -> DMatrix<f64> {
        let n_z = self.n_z();
        let sz = self.hyper.alpha_z.sqrt();
        let mut r = DMatrix::zeros(n_z + 1, n_z + 1);
        r[(0, 0)] = 1.0;
        for a in 0..n_z {
            r[(0, a + 1)] = -sz * self.anchor[a];
        }
        r.view_mut((1, 1), (n_z, n_z)).copy_from(&(&self.f_z * sz));
        r
    }

    /// `θ = T_θ ω` through the block-triangular factor.
    ///
    /// `Θ = T_u [ω₀ | Ω_L] Rᵀ` with `R = [[1, −√α_z aᵀ], [0, √α_z F_z]]`
    /// and `a = F_zᵀM_zz̃`.
    pub fn theta_from_noise(&self, omega: &DVector<f64>) -> Result<DiscrepancyParams> {
        let (n_u, n_z) = (self.n_u(), self.n_z());
        check_len("theta noise", self.n_theta(), omega.len())?;
        let sa = self.hyper.alpha_u.sqrt();
        let sz = self.hyper.alpha_z.sqrt();
        let omega0 = omega.rows(0, n_u).into_owned();
        // Ω_L has rows ω_i, i.e. its transpose is stored column-major.
        let omega_l_t = DMatrix::from_column_slice(n_z, n_u, &omega.as_slice()[n_u..]);
        let shift = omega_l_t.tr_mul(&self.anchor) * sz;
        let theta0 = self.apply_state_factor(&(omega0 - shift))? * sa;
        // P = Ω_L F_zᵀ, then L = T_u P column by column.
        let p = (&self.f_z * &omega_l_t).transpose();
        let slope = match &self.temporal {
            None => &self.f_u * p,
            Some(_) => map_cols(&p, |c| self.apply_state_factor(c).expect("dimension checked")),
        } * (sa * sz);
        DiscrepancyParams::from_parts(&theta0, &slope)
    }

    pub fn sample_theta(&self, seed: u64) -> Result<PriorSample> {
        let mut rng = rng::stream(seed);
        let omega = rng::standard_normal(&mut rng, self.n_theta());
        let theta = self.theta_from_noise(&omega)?;
        Ok(PriorSample { theta, seed, omega })
    }

    /// `s(Δz) = ‖E_z⁻¹M_zΔz‖²_{M_z}`.
    pub fn control_smoothing_norm_sq(&self, dz: &DVector<f64>) -> Result<f64> {
        check_len("control perturbation", self.n_z(), dz.len())?;
        let v = self.e_z.solve(&(self.control.mass() * dz));
        Ok(linalg::m_norm_sq(self.control.mass(), &v))
    }

    /// `√α_z √s(Δz)`, the scale of `δ(z̃+Δz) − δ(z̃)` relative to one
    /// unit state draw.
    pub fn variation_scale(&self, dz: &DVector<f64>) -> Result<f64> {
        Ok(self.hyper.alpha_z.sqrt() * self.control_smoothing_norm_sq(dz)?.sqrt())
    }

    /// The two independent state draws `√α_u T_u ω⁽¹⁾` and
    /// `√α_u T_u ω⁽²⁾` from one seed.
    pub fn delta_field_parts(&self, seed: u64) -> Result<(DVector<f64>, DVector<f64>)> {
        let mut rng = rng::stream(seed);
        let n_u = self.n_u();
        let w1 = rng::standard_normal(&mut rng, n_u);
        let w2 = rng::standard_normal(&mut rng, n_u);
        let sa = self.hyper.alpha_u.sqrt();
        Ok((self.apply_state_factor(&w1)? * sa, self.apply_state_factor(&w2)? * sa))
    }

    /// A draw with the law of `δ(z, θ)` under the prior, without forming
    /// `θ`.
    pub fn sample_delta_field(&self, z: &DVector<f64>, seed: u64) -> Result<DVector<f64>> {
        let dz = z - &self.z_tilde;
        let scale = self.variation_scale(&dz)?;
        let (base, variation) = self.delta_field_parts(seed)?;
        Ok(base + variation * scale)
    }

    /// `Tr_{M_u}(W_u⁻¹)/α_u`.
    pub fn trace_state_covariance(&self) -> f64 {
        let spatial = linalg::trace_of_square(&self.e_u.solve_cols(self.state.mass()));
        match (&self.temporal, self.state.time()) {
            (Some(t), Some(grid)) => {
                let temporal = t.factor.component_mul(&(grid.mass() * &t.factor)).sum();
                spatial * temporal
            }
            _ => spatial,
        }
    }

    /// `Tr_{M_θ}(W_θ⁻¹)`.
    pub fn trace_theta_covariance(&self) -> f64 {
        let az = self.hyper.alpha_z;
        let anchor = az * self.anchor.norm_squared();
        let control = az * linalg::trace_of_square(&self.e_z.solve_cols(self.control.mass()));
        (1.0 + anchor + control) * self.hyper.alpha_u * self.trace_state_covariance()
    }

    /// Generalized eigenpairs of `(E_z, M_z)`, ascending; all values ≥ 1
    /// when `K_z e = 0`.
    pub fn control_eigen(&self) -> Result<GeneralizedEigen> {
        linalg::generalized_eigen(self.e_z.matrix(), self.control.mass())
    }

    pub fn state_spectrum(&self) -> Result<StateSpectrum> {
        let space = linalg::generalized_eigen(self.e_u.matrix(), self.state.mass())?;
        let space_var = space.values.map(|l| 1.0 / (l * l));
        match (&self.temporal, self.state.time()) {
            (Some(t), Some(grid)) => {
                let cov = &t.factor * t.factor.transpose();
                let mut a = grid.mass() * cov * grid.mass();
                linalg::symmetrize(&mut a);
                let time = linalg::generalized_eigen(&a, grid.mass())?;
                let (ns, nt) = (space_var.len(), time.values.len());
                let variance = DVector::from_fn(ns * nt, |k, _| time.values[k / ns] * space_var[k % ns]);
                Ok(StateSpectrum {
                    basis: SpectralBasis::Kron {
                        time: time.vectors,
                        space: space.vectors,
                    },
                    variance,
                })
            }
            _ => Ok(StateSpectrum {
                basis: SpectralBasis::Dense(space.vectors),
                variance: space_var,
            }),
        }
    }

    /// Dense `W_u⁻¹` (including `α_u`).
    pub fn dense_state_covariance(&self) -> Result<DMatrix<f64>> {
        if self.n_u() > linalg::DENSE_LIMIT / 4 {
            return Err(Error::TooLarge(self.n_u()));
        }
        let spatial = &self.f_u * self.f_u.transpose();
        let cov = match &self.temporal {
            None => spatial,
            Some(t) => linalg::kron(&(&t.factor * t.factor.transpose()), &spatial),
        };
        Ok(cov * self.hyper.alpha_u)
    }

    /// Dense `W_z⁻¹`.
    pub fn dense_control_covariance(&self) -> DMatrix<f64> {
        &self.f_z * self.f_z.transpose() * self.hyper.alpha_z
    }

    /// Dense `W_θ⁻¹` from its Kronecker block form.
    pub fn dense_covariance(&self) -> Result<DMatrix<f64>> {
        let (n_u, n_z, n) = (self.n_u(), self.n_z(), self.n_theta());
        if n > 4000 {
            return Err(Error::TooLarge(n));
        }
        let wu = self.dense_state_covariance()?;
        let wz = self.dense_control_covariance();
        let wz_m_zt = &wz * (self.control.mass() * &self.z_tilde);
        let mut c = DMatrix::zeros(n_z + 1, n_z + 1);
        c[(0, 0)] = 1.0 + (self.control.mass() * &self.z_tilde).dot(&wz_m_zt);
        for a in 0..n_z {
            c[(0, a + 1)] = -wz_m_zt[a];
            c[(a + 1, 0)] = -wz_m_zt[a];
        }
        c.view_mut((1, 1), (n_z, n_z)).copy_from(&wz);
        let flat = |i: usize, a: usize| if a == 0 { i } else { n_u + i * n_z + a - 1 };
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n_u {
            for j in 0..n_u {
                for a in 0..=n_z {
                    for b in 0..=n_z {
                        out[(flat(i, a), flat(j, b))] = wu[(i, j)] * c[(a, b)];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Dense `T_θ`, assembled by pushing unit vectors through the sampler.
    pub fn dense_factor(&self) -> Result<DMatrix<f64>> {
        let n = self.n_theta();
        if n > 4000 {
            return Err(Error::TooLarge(n));
        }
        let mut t = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            t.set_column(j, self.theta_from_noise(&e)?.values());
        }
        Ok(t)
    }
}

fn factor(op: &EllipticOperator, mass: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let g = linalg::cholesky(mass, "mass matrix")?.l();
    Ok(op.solve_cols(&g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{Mesh, Mesh1D};

    fn hyper() -> HyperParams {
        HyperParams {
            alpha_u: 2.0,
            beta_u: 0.05,
            alpha_z: 0.5,
            beta_z: 0.02,
            alpha_t: None,
            beta_t: None,
            eps_t: 0.01,
            alpha_d: 1e-4,
        }
    }

    fn prior(n_u: usize, n_z: usize, h: HyperParams) -> PriorModel {
        let s = Arc::new(FunctionSpace::new(Mesh::Interval(Mesh1D::uniform(n_u).unwrap())).unwrap());
        let c = Arc::new(FunctionSpace::new(Mesh::Interval(Mesh1D::uniform(n_z).unwrap())).unwrap());
        let zt = DVector::from_fn(n_z, |i, _| 1.0 + (i as f64).sin());
        PriorModel::build(s, c, h, zt).unwrap()
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut h = hyper();
        h.beta_u = -1.0;
        assert!(h.validate().is_err());
        let mut h = hyper();
        h.alpha_z = 0.0;
        assert!(h.validate().is_err());
        let mut h = hyper();
        h.alpha_t = Some(vec![0.005, 1.0]);
        assert!(h.validate().is_err());
    }

    #[test]
    fn hyper_json_defaults_eps_t() {
        let h: HyperParams =
            serde_json::from_str(r#"{"alpha_u":1,"beta_u":0,"alpha_z":1,"beta_z":0,"alpha_d":1}"#).unwrap();
        assert_eq!(h.eps_t, 0.01);
        assert!(h.alpha_t.is_none());
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let p = prior(5, 3, hyper());
        let a = p.sample_theta(11).unwrap();
        let b = p.sample_theta(11).unwrap();
        assert_eq!(a.theta, b.theta);
        assert_ne!(a.theta, p.sample_theta(12).unwrap().theta);
    }

    #[test]
    fn zero_smoothness_state_covariance_is_scaled_inverse_mass() {
        let mut h = hyper();
        h.beta_u = 0.0;
        let p = prior(6, 3, h);
        let cov = p.dense_state_covariance().unwrap();
        let expect = p.state().mass().clone().try_inverse().unwrap() * 2.0;
        assert!((cov - &expect).amax() < 1e-10 * expect.amax());
        assert!((p.trace_state_covariance() - 6.0).abs() < 1e-10);
    }
}
