use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::prior::PriorModel;

/// Eigenvalues of `E_z⁻¹` below this fraction of the leading one are cut.
pub const EIGEN_CUTOFF: f64 = 0.1;

/// Leading eigenvectors of `E_z⁻¹` in the `M_z` inner product, each
/// rescaled to `‖z̃‖_{M_z}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationBasis {
    /// Eigenvalues of `E_z⁻¹`, descending.
    pub eigenvalues: Vec<f64>,
    pub directions: Vec<Vec<f64>>,
    pub scale: f64,
}

impl PerturbationBasis {
    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn direction(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.directions[k])
    }
}

pub fn perturbation_basis(prior: &PriorModel) -> Result<PerturbationBasis> {
    let scale = linalg::m_norm_sq(prior.control().mass(), prior.z_tilde()).sqrt();
    if !(scale > 0.0) {
        return Err(Error::DegeneratePerturbation("z tilde has zero norm".into()));
    }
    let eig = prior.control_eigen()?;
    // Ascending eigenvalues of E_z are descending eigenvalues of E_z⁻¹.
    let leading = 1.0 / eig.values[0];
    let mut eigenvalues = Vec::new();
    let mut directions = Vec::new();
    for (k, &lambda) in eig.values.iter().enumerate() {
        let inv = 1.0 / lambda;
        if inv < EIGEN_CUTOFF * leading {
            break;
        }
        eigenvalues.push(inv);
        directions.push((eig.vectors.column(k) * scale).as_slice().to_vec());
    }
    Ok(PerturbationBasis {
        eigenvalues,
        directions,
        scale,
    })
}
