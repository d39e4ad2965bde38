use nalgebra::{DMatrix, DVector};

use super::mesh::{Mesh1D, Mesh2D};
use super::space::{barycentric_gradients, TimeGrid};
use crate::error::{check_len, Error, Result};

/// Affine map `z ↦ S z + offset` from control to state coordinates.
#[derive(Debug, Clone)]
pub struct LinearSolutionOperator {
    matrix: DMatrix<f64>,
    offset: DVector<f64>,
}

impl LinearSolutionOperator {
    pub fn new(matrix: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        check_len("solution operator offset", matrix.nrows(), offset.len())?;
        Ok(Self { matrix, offset })
    }

    pub fn linear(matrix: DMatrix<f64>) -> Self {
        let offset = DVector::zeros(matrix.nrows());
        Self { matrix, offset }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    pub fn n_state(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_control(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn apply(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.apply_linear(z)? + &self.offset)
    }

    /// The linear part only, `S z`.
    pub fn apply_linear(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("control vector", self.n_control(), z.len())?;
        Ok(&self.matrix * z)
    }
}

/// `C_ij = ∫ φ_j' φ_i` on an interval mesh.
pub fn advection_1d(mesh: &Mesh1D) -> DMatrix<f64> {
    let n = mesh.n_nodes();
    let mut c = DMatrix::zeros(n, n);
    for (a, b, _) in mesh.elements() {
        for i in [a, b] {
            c[(i, a)] -= 0.5;
            c[(i, b)] += 0.5;
        }
    }
    c
}

/// `C_ij = ∫ (v·∇φ_j) φ_i` on the unit square.
pub fn advection_2d(mesh: &Mesh2D, velocity: [f64; 2]) -> DMatrix<f64> {
    let n = mesh.nodes().len();
    let mut c = DMatrix::zeros(n, n);
    for t in mesh.triangles() {
        let third = mesh.signed_area(t) / 3.0;
        let g = barycentric_gradients(mesh, t);
        for &i in t {
            for (b, &j) in t.iter().enumerate() {
                c[(i, j)] += (velocity[0] * g[b][0] + velocity[1] * g[b][1]) * third;
            }
        }
    }
    c
}

/// Boundary mass for Robin data `∂u/∂n + c u = 0` at both interval ends.
pub fn robin_1d(n_nodes: usize, coeff: f64) -> DMatrix<f64> {
    let mut r = DMatrix::zeros(n_nodes, n_nodes);
    r[(0, 0)] = coeff;
    r[(n_nodes - 1, n_nodes - 1)] = coeff;
    r
}

/// `A⁻¹ F` for a stationary system.
pub fn solve_stationary(system: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let lu = system.clone().lu();
    let sol = lu
        .solve(rhs)
        .ok_or_else(|| Error::Assembly("singular stationary system".into()))?;
    if !sol.iter().all(|v| v.is_finite()) {
        return Err(Error::Assembly("stationary system is numerically singular".into()));
    }
    Ok(sol)
}

/// Implicit Euler for `M u' + A u = F z` with `u(0) = 0`.
///
/// Returns the space-time solution matrix, time-major, one column per
/// control coordinate.
pub fn implicit_euler(
    mass: &DMatrix<f64>,
    system: &DMatrix<f64>,
    source: &DMatrix<f64>,
    grid: &TimeGrid,
) -> Result<DMatrix<f64>> {
    let ns = mass.nrows();
    let nt = grid.n_time();
    let dt = grid.step();
    let step = mass + system * dt;
    let lu = step.lu();
    let forcing = source * dt;
    let mut out = DMatrix::zeros(ns * nt, source.ncols());
    let mut u = DMatrix::zeros(ns, source.ncols());
    for k in 1..nt {
        let rhs = mass * &u + &forcing;
        u = lu
            .solve(&rhs)
            .ok_or_else(|| Error::Assembly("singular time-step system".into()))?;
        out.view_mut((k * ns, 0), (ns, source.ncols())).copy_from(&u);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn advection_annihilates_constants_and_differentiates_linears() {
        let mesh = Mesh1D::uniform(6).unwrap();
        let c = advection_1d(&mesh);
        let e = DVector::from_element(6, 1.0);
        assert!((&c * &e).amax() < 1e-15);
        // ∫ (x)' · 1 = 1
        let x = DVector::from_column_slice(mesh.nodes());
        assert!(((&c * x).sum() - 1.0).abs() < 1e-14);

        let sq = Mesh2D::unit_square(4).unwrap();
        let c2 = advection_2d(&sq, [5.0, 5.0]);
        assert!((&c2 * DVector::from_element(16, 1.0)).amax() < 1e-13);
        let y = DVector::from_iterator(16, sq.nodes().iter().map(|p| p[1]));
        assert!(((&c2 * y).sum() - 5.0).abs() < 1e-12);
    }
}
