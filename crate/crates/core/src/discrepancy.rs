//! The affine discrepancy operator `δ(z, θ) = θ₀ + L(θ) M_z z`.
//!
//! `θ` is stored flat as `[θ₀; θ₁; …; θ_{n_u}]` where `θ₀` has length
//! `n_u` and row `θ_i` (length `n_z`) is the `i`-th row of `L(θ)`.

use nalgebra::{DMatrix, DMatrixView, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::fem::FunctionSpace;
use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscrepancyParams {
    n_u: usize,
    n_z: usize,
    values: DVector<f64>,
}

impl DiscrepancyParams {
    pub fn zeros(n_u: usize, n_z: usize) -> Self {
        Self {
            n_u,
            n_z,
            values: DVector::zeros(n_u * (n_z + 1)),
        }
    }

    pub fn from_flat(n_u: usize, n_z: usize, values: DVector<f64>) -> Result<Self> {
        check_len("discrepancy parameters", n_u * (n_z + 1), values.len())?;
        Ok(Self { n_u, n_z, values })
    }

    /// Builds `θ` from `θ₀` and the `n_u × n_z` slope matrix `L`.
    pub fn from_parts(theta0: &DVector<f64>, slope: &DMatrix<f64>) -> Result<Self> {
        let n_u = theta0.len();
        check_len("slope rows", n_u, slope.nrows())?;
        let n_z = slope.ncols();
        let mut values = DVector::zeros(n_u * (n_z + 1));
        values.rows_mut(0, n_u).copy_from(theta0);
        // Row-major copy of L is the column-major storage of Lᵀ.
        values
            .rows_mut(n_u, n_u * n_z)
            .copy_from_slice(slope.transpose().as_slice());
        Ok(Self { n_u, n_z, values })
    }

    /// Matrix form `Θ = [θ₀ | L]`, `n_u × (n_z + 1)`.
    pub fn as_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_u, self.n_z + 1);
        m.set_column(0, &DVector::from_column_slice(self.theta0()));
        m.view_mut((0, 1), (self.n_u, self.n_z))
            .copy_from(&self.slope_transpose().transpose());
        m
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        if m.ncols() == 0 {
            return Err(Error::InvalidInput("matrix form needs at least one column".into()));
        }
        let slope = m.columns(1, m.ncols() - 1).into_owned();
        Self::from_parts(&m.column(0).into_owned(), &slope)
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn n_z(&self) -> usize {
        self.n_z
    }

    pub fn n_theta(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    pub fn theta0(&self) -> &[f64] {
        &self.values.as_slice()[..self.n_u]
    }

    pub fn theta0_mut(&mut self) -> &mut [f64] {
        let n_u = self.n_u;
        &mut self.values.as_mut_slice()[..n_u]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let start = self.n_u + i * self.n_z;
        &self.values.as_slice()[start..start + self.n_z]
    }

    /// `Lᵀ` as a borrowed `n_z × n_u` view.
    pub fn slope_transpose(&self) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.values.as_slice()[self.n_u..], self.n_z, self.n_u)
    }

    pub fn slope_matrix(&self) -> DMatrix<f64> {
        self.slope_transpose().transpose()
    }

    /// `θ₀ + L w` for an already weighted control `w = M_z z`.
    pub fn apply_weighted(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("weighted control", self.n_z, w.len())?;
        let mut out = self.slope_transpose().tr_mul(w);
        for (o, t) in out.iter_mut().zip(self.theta0()) {
            *o += t;
        }
        Ok(out)
    }

    pub fn scale(&self, a: f64) -> Self {
        Self {
            values: &self.values * a,
            ..self.clone()
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        Ok(Self {
            values: &self.values + &other.values,
            ..self.clone()
        })
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        check_len("discrepancy state dimension", self.n_u, other.n_u)?;
        check_len("discrepancy control dimension", self.n_z, other.n_z)
    }
}

/// `δ(z, θ)` in state coordinates.
pub fn evaluate(theta: &DiscrepancyParams, control: &FunctionSpace, z: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("control vector", control.dim(), z.len())?;
    check_len("discrepancy control dimension", control.dim(), theta.n_z())?;
    theta.apply_weighted(&(control.mass() * z))
}

/// The block-diagonal inner product `diag(M_u, M_u ⊗ M_z)` on `θ`.
#[derive(Debug, Clone, Copy)]
pub struct ThetaInnerProduct<'a> {
    pub state: &'a FunctionSpace,
    pub control: &'a FunctionSpace,
}

impl<'a> ThetaInnerProduct<'a> {
    pub fn new(state: &'a FunctionSpace, control: &'a FunctionSpace) -> Self {
        Self { state, control }
    }

    pub fn inner(&self, theta: &DiscrepancyParams, other: &DiscrepancyParams) -> Result<f64> {
        theta.check_same(other)?;
        check_len("discrepancy state dimension", self.state.dim(), theta.n_u())?;
        check_len("discrepancy control dimension", self.control.dim(), theta.n_z())?;
        let t0 = DVector::from_column_slice(theta.theta0());
        let o0 = DVector::from_column_slice(other.theta0());
        let offset = self.state.inner(&t0, &o0)?;
        // tr(L_θᵀ M_u L_ϑ M_z)
        let weighted = self.state.weight_apply_cols(&other.slope_matrix())? * self.control.mass();
        let slope = theta.slope_matrix().component_mul(&weighted).sum();
        Ok(offset + slope)
    }

    pub fn norm_sq(&self, theta: &DiscrepancyParams) -> Result<f64> {
        self.inner(theta, theta)
    }
}

/// High-fidelity minus low-fidelity data at a set of controls.
///
/// Stored data is centered: `d_ℓ = raw_ℓ − d̄` with `d̄` the mean of all
/// nodal values. `C_δ` is the root-mean-square of the raw values. By
/// convention `z₁ = z̃`.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationDataset {
    z: Vec<DVector<f64>>,
    d: Vec<DVector<f64>>,
    dbar: f64,
    c_delta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetJson {
    z: Vec<Vec<f64>>,
    d: Vec<Vec<f64>>,
    dbar: f64,
    c_delta: f64,
}

impl CalibrationDataset {
    pub fn from_raw(z: Vec<DVector<f64>>, raw: Vec<DVector<f64>>) -> Result<Self> {
        Self::check_shapes(&z, &raw)?;
        let count = (raw.len() * raw[0].len()) as f64;
        let dbar = raw.iter().map(|d| d.sum()).sum::<f64>() / count;
        let c_delta = (raw.iter().map(|d| d.norm_squared()).sum::<f64>() / count).sqrt();
        let d = raw.into_iter().map(|d| d.add_scalar(-dbar)).collect();
        Ok(Self { z, d, dbar, c_delta })
    }

    pub fn from_centered(z: Vec<DVector<f64>>, d: Vec<DVector<f64>>, dbar: f64, c_delta: f64) -> Result<Self> {
        Self::check_shapes(&z, &d)?;
        if !(dbar.is_finite() && c_delta.is_finite() && c_delta >= 0.0) {
            return Err(Error::InvalidInput("dataset scalars must be finite with c_delta >= 0".into()));
        }
        Ok(Self { z, d, dbar, c_delta })
    }

    fn check_shapes(z: &[DVector<f64>], d: &[DVector<f64>]) -> Result<()> {
        if z.is_empty() {
            return Err(Error::InvalidInput("a calibration dataset needs at least one pair".into()));
        }
        check_len("dataset pairs", z.len(), d.len())?;
        let (nz, nu) = (z[0].len(), d[0].len());
        for (zl, dl) in z.iter().zip(d) {
            check_len("dataset control", nz, zl.len())?;
            check_len("dataset state", nu, dl.len())?;
        }
        if z.iter().chain(d).any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::InvalidInput("dataset contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn z(&self) -> &[DVector<f64>] {
        &self.z
    }

    pub fn d(&self) -> &[DVector<f64>] {
        &self.d
    }

    pub fn z_tilde(&self) -> &DVector<f64> {
        &self.z[0]
    }

    pub fn dbar(&self) -> f64 {
        self.dbar
    }

    pub fn c_delta(&self) -> f64 {
        self.c_delta
    }

    pub fn raw(&self, l: usize) -> DVector<f64> {
        self.d[l].add_scalar(self.dbar)
    }

    pub fn n_state(&self) -> usize {
        self.d[0].len()
    }

    pub fn n_control(&self) -> usize {
        self.z[0].len()
    }

    /// The first `n` pairs, keeping the centering of the full dataset.
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            z: self.z[..n].to_vec(),
            d: self.d[..n].to_vec(),
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let doc = DatasetJson {
            z: self.z.iter().map(|v| v.as_slice().to_vec()).collect(),
            d: self.d.iter().map(|v| v.as_slice().to_vec()).collect(),
            dbar: self.dbar,
            c_delta: self.c_delta,
        };
        serde_json::to_value(doc).expect("dataset serializes")
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self> {
        let doc: DatasetJson = serde_json::from_value(value)?;
        let z = doc.z.into_iter().map(DVector::from_vec).collect();
        let d = doc.d.into_iter().map(DVector::from_vec).collect();
        Self::from_centered(z, d, doc.dbar, doc.c_delta)
    }
}

/// Gram matrix `G_ℓm = 1 + z_ℓᵀ M_z z_m` of the data features.
fn feature_gram(data: &CalibrationDataset, control: &FunctionSpace) -> Result<DMatrix<f64>> {
    let n = data.len();
    let weighted: Vec<DVector<f64>> = data.z().iter().map(|z| control.mass() * z).collect();
    let mut g = DMatrix::zeros(n, n);
    for l in 0..n {
        for m in 0..n {
            g[(l, m)] = 1.0 + data.z()[l].dot(&weighted[m]);
        }
    }
    linalg::symmetrize(&mut g);
    Ok(g)
}

/// Minimum `M_θ`-norm `θ` with `δ(z_ℓ, θ) = d_ℓ` for every pair, plus the
/// dimension of the affine family of exact interpolants.
///
/// The solution is `Θ = D G⁻¹ [1 … 1; z_1 … z_N]ᵀ` in the matrix form
/// `Θ = [θ₀ | L]`; `M_u` drops out of the minimizer. The data are
/// solvable whenever the features `[1; M_z z_ℓ]` are independent.
pub fn interpolate_min_norm(
    data: &CalibrationDataset,
    control: &FunctionSpace,
) -> Result<(DiscrepancyParams, usize)> {
    let n_u = data.n_state();
    let n_z = data.n_control();
    check_len("dataset control", control.dim(), n_z)?;
    let n = data.len();
    let g = feature_gram(data, control)?;
    let sv = g.clone().singular_values();
    if sv.min() <= sv.max() * 1e-12 * n as f64 {
        return Err(Error::RankDeficiency(
            "control inputs are affinely dependent; the data cannot be interpolated uniquely".into(),
        ));
    }
    let chol = g
        .cholesky()
        .ok_or_else(|| Error::RankDeficiency("feature Gram matrix is not positive definite".into()))?;
    let d = DMatrix::from_columns(data.d());
    // Columns c_ℓ of D G⁻¹.
    let coeff = chol.solve(&d.transpose()).transpose();
    let theta0 = coeff.column_sum();
    let zmat = DMatrix::from_columns(data.z());
    let slope = &coeff * zmat.transpose();
    let theta = DiscrepancyParams::from_parts(&theta0, &slope)?;
    let nullity = n_u * (n_z + 1) - n_u * n;
    Ok((theta, nullity))
}

/// Dense design matrix `A` with `A θ = [δ(z_1, θ); …; δ(z_N, θ)]`.
pub fn design_matrix(z: &[DVector<f64>], control: &FunctionSpace, n_u: usize) -> Result<DMatrix<f64>> {
    let n_z = control.dim();
    let n_theta = n_u * (n_z + 1);
    if n_theta * z.len() * n_u > linalg::DENSE_LIMIT * linalg::DENSE_LIMIT {
        return Err(Error::TooLarge(n_theta));
    }
    let mut a = DMatrix::zeros(n_u * z.len(), n_theta);
    for (l, zl) in z.iter().enumerate() {
        check_len("control vector", n_z, zl.len())?;
        let w = control.mass() * zl;
        for i in 0..n_u {
            let r = l * n_u + i;
            a[(r, i)] = 1.0;
            for j in 0..n_z {
                a[(r, n_u + i * n_z + j)] = w[j];
            }
        }
    }
    Ok(a)
}
