//! The three model problems: stationary and transient 1D
//! advection-diffusion, and stationary 2D advection-diffusion, each paired
//! with its pure-diffusion low-fidelity counterpart.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::calibration::OptimizationProblem;
use crate::discrepancy::CalibrationDataset;
use crate::error::{check_len, Error, Result};
use crate::fem::{
    advection_1d, advection_2d, implicit_euler, robin_1d, solve_stationary, EllipticOperator, FunctionSpace,
    LinearSolutionOperator, Mesh, Mesh1D, Mesh2D, TimeGrid,
};
use crate::linalg;
use crate::rng;

const ROBIN_COEFF: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProblemKind {
    #[serde(rename = "stationary-1d")]
    Stationary1d,
    #[serde(rename = "transient-1d")]
    Transient1d,
    #[serde(rename = "stationary-2d")]
    Stationary2d,
}

fn default_regularization() -> f64 {
    1e-4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub problem: ProblemKind,
    /// Nodes on the interval, or nodes per side of the square.
    pub n_space: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_time: Option<usize>,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub final_time: Option<f64>,
    /// Advection velocity; only the first component is used in 1D.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<[f64; 2]>,
    #[serde(default = "default_regularization")]
    pub regularization: f64,
    #[serde(default)]
    pub seed: u64,
    /// Number of high-fidelity solves in the calibration dataset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_data: Option<usize>,
    /// Smoothness `β` of the random controls `z_ℓ`, `ℓ ≥ 2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_smoothness: Option<f64>,
}

impl ScenarioConfig {
    pub fn new(problem: ProblemKind, n_space: usize) -> Self {
        Self {
            problem,
            n_space,
            n_time: None,
            final_time: None,
            velocity: None,
            regularization: default_regularization(),
            seed: 0,
            n_data: None,
            data_smoothness: None,
        }
    }

    pub fn n_time(&self) -> usize {
        self.n_time.unwrap_or(64)
    }

    pub fn final_time(&self) -> f64 {
        self.final_time.unwrap_or(1.0)
    }

    pub fn velocity(&self) -> [f64; 2] {
        self.velocity.unwrap_or(match self.problem {
            ProblemKind::Stationary2d => [5.0, 5.0],
            _ => [1.0, 0.0],
        })
    }

    pub fn n_data(&self) -> usize {
        self.n_data.unwrap_or(match self.problem {
            ProblemKind::Stationary2d => 1,
            _ => 2,
        })
    }

    pub fn data_smoothness(&self) -> f64 {
        self.data_smoothness.unwrap_or(0.01)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_space < 3 {
            return Err(Error::InvalidConfig(format!("n_space must be at least 3, got {}", self.n_space)));
        }
        if self.problem == ProblemKind::Transient1d && self.n_time() < 3 {
            return Err(Error::InvalidConfig(format!("n_time must be at least 3, got {}", self.n_time())));
        }
        if !(self.regularization > 0.0 && self.regularization.is_finite()) {
            return Err(Error::InvalidConfig("regularization must be positive".into()));
        }
        if self.velocity().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("velocity must be finite".into()));
        }
        if self.n_data() == 0 {
            return Err(Error::InvalidConfig("n_data must be at least 1".into()));
        }
        if !(self.data_smoothness() >= 0.0 && self.data_smoothness().is_finite()) {
            return Err(Error::InvalidConfig("data_smoothness must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// State space for a scenario (space-time for the transient problem).
pub fn assemble_space(config: &ScenarioConfig) -> Result<FunctionSpace> {
    config.validate()?;
    let spatial = control_space(config)?;
    Ok(match config.problem {
        ProblemKind::Transient1d => spatial.with_time(TimeGrid::uniform(config.n_time(), config.final_time())?),
        _ => spatial,
    })
}

fn control_space(config: &ScenarioConfig) -> Result<FunctionSpace> {
    let mesh = match config.problem {
        ProblemKind::Stationary2d => Mesh::Square(Mesh2D::unit_square(config.n_space)?),
        _ => Mesh::Interval(Mesh1D::uniform(config.n_space)?),
    };
    FunctionSpace::new(mesh)
}

fn build_operator(config: &ScenarioConfig, state: &FunctionSpace, advection: bool) -> Result<LinearSolutionOperator> {
    let m = state.mass();
    let k = state.stiffness();
    let v = config.velocity();
    let matrix = match (config.problem, state.mesh()) {
        (ProblemKind::Stationary1d, Mesh::Interval(mesh)) => {
            let mut a = k + robin_1d(mesh.n_nodes(), ROBIN_COEFF);
            if advection {
                a += advection_1d(mesh) * v[0];
            }
            solve_stationary(&a, m)?
        }
        (ProblemKind::Transient1d, Mesh::Interval(mesh)) => {
            let grid = state
                .time()
                .ok_or_else(|| Error::Assembly("transient problem without a time grid".into()))?;
            let mut a = k.clone();
            if advection {
                a += advection_1d(mesh) * v[0];
            }
            implicit_euler(m, &a, m, grid)?
        }
        (ProblemKind::Stationary2d, Mesh::Square(mesh)) => {
            let mut a = k.clone();
            if advection {
                a += advection_2d(mesh, v);
            }
            let mut rhs = m.clone();
            for i in mesh.bottom_edge() {
                a.row_mut(i).fill(0.0);
                a[(i, i)] = 1.0;
                rhs.row_mut(i).fill(0.0);
            }
            solve_stationary(&a, &rhs)?
        }
        _ => return Err(Error::InvalidConfig("problem kind does not match the space".into())),
    };
    Ok(LinearSolutionOperator::linear(matrix))
}

/// Advection-diffusion solution operator.
pub fn build_highfi(config: &ScenarioConfig, state: &FunctionSpace) -> Result<LinearSolutionOperator> {
    build_operator(config, state, true)
}

/// Pure-diffusion solution operator.
pub fn build_lowfi(config: &ScenarioConfig, state: &FunctionSpace) -> Result<LinearSolutionOperator> {
    build_operator(config, state, false)
}

/// `T = 50 − 60|x − c|²` with `c` the domain center, constant in time.
fn target_state(state: &FunctionSpace) -> DVector<f64> {
    let spatial: Vec<f64> = state
        .mesh()
        .coordinates()
        .iter()
        .map(|p| 50.0 - 60.0 * p.iter().map(|x| (x - 0.5).powi(2)).sum::<f64>())
        .collect();
    let nt = state.n_time();
    DVector::from_iterator(spatial.len() * nt, (0..nt).flat_map(|_| spatial.iter().copied()))
}

/// An assembled model problem.
#[derive(Debug, Clone)]
pub struct Scenario {
    config: ScenarioConfig,
    state: Arc<FunctionSpace>,
    control: Arc<FunctionSpace>,
    highfi: LinearSolutionOperator,
    lowfi: LinearSolutionOperator,
    target: DVector<f64>,
}

impl Scenario {
    pub fn build(config: ScenarioConfig) -> Result<Self> {
        let state = assemble_space(&config)?;
        let control = control_space(&config)?;
        let highfi = build_highfi(&config, &state)?;
        let lowfi = build_lowfi(&config, &state)?;
        let target = target_state(&state);
        Ok(Self {
            config,
            state: Arc::new(state),
            control: Arc::new(control),
            highfi,
            lowfi,
            target,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn state(&self) -> &Arc<FunctionSpace> {
        &self.state
    }

    pub fn control(&self) -> &Arc<FunctionSpace> {
        &self.control
    }

    pub fn highfi(&self) -> &LinearSolutionOperator {
        &self.highfi
    }

    pub fn lowfi(&self) -> &LinearSolutionOperator {
        &self.lowfi
    }

    pub fn target(&self) -> &DVector<f64> {
        &self.target
    }

    pub fn is_transient(&self) -> bool {
        self.config.problem == ProblemKind::Transient1d
    }

    pub fn lowfi_problem(&self) -> Result<OptimizationProblem> {
        OptimizationProblem::new(
            self.state.clone(),
            self.control.clone(),
            self.lowfi.clone(),
            self.target.clone(),
            self.config.regularization,
        )
    }

    pub fn highfi_problem(&self) -> Result<OptimizationProblem> {
        self.lowfi_problem()?.with_operator(self.highfi.clone())
    }

    /// `S(z) − S̃(z)`.
    pub fn discrepancy_at(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.highfi.apply(z)? - self.lowfi.apply(z)?)
    }

    /// Calibration data at `z̃` and `n_data − 1` random controls.
    ///
    /// Control `ℓ ≥ 2` is `z̃ + Δ_ℓ`, where `Δ_ℓ` is a smooth Gaussian field
    /// (`E⁻¹Gω` with `E = βK + M`) rescaled to `‖z̃‖_{M_z}` and driven by
    /// `seed + ℓ`.
    pub fn generate_data(&self, n_data: usize, seed: u64) -> Result<CalibrationDataset> {
        if n_data == 0 {
            return Err(Error::InvalidInput("n_data must be at least 1".into()));
        }
        let z_tilde = self.lowfi_problem()?.solve_optimum()?;
        let mut zs = vec![z_tilde.clone()];
        if n_data > 1 {
            let op = EllipticOperator::for_space(&self.control, self.config.data_smoothness())?;
            let g = linalg::cholesky(self.control.mass(), "control mass")?.l();
            let scale = linalg::m_norm_sq(self.control.mass(), &z_tilde).sqrt();
            for l in 1..n_data {
                let mut rng = rng::stream(seed.wrapping_add(l as u64));
                let omega = rng::standard_normal(&mut rng, self.control.dim());
                let field = op.solve(&(&g * omega));
                let norm = linalg::m_norm_sq(self.control.mass(), &field).sqrt();
                zs.push(&z_tilde + field * (scale / norm));
            }
        }
        let raw = zs.iter().map(|z| self.discrepancy_at(z)).collect::<Result<Vec<_>>>()?;
        CalibrationDataset::from_raw(zs, raw)
    }

    pub fn default_data(&self) -> Result<CalibrationDataset> {
        self.generate_data(self.config.n_data(), self.config.seed)
    }

    /// Reshapes a space-time vector into rows per time node.
    pub fn time_rows(&self, u: &DVector<f64>) -> Result<Vec<Vec<f64>>> {
        check_len("state vector", self.state.dim(), u.len())?;
        Ok((0..self.state.n_time())
            .map(|i| self.state.snapshot(u, i).to_vec())
            .collect())
    }
}
