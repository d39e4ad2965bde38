use nalgebra::{DMatrix, DVector};

use super::mesh::{Mesh, Mesh1D, Mesh2D};
use crate::error::{check_len, Error, Result};
use crate::linalg::{self, Chol};

/// Uniform time grid with P1 mass and stiffness matrices on the time nodes.
#[derive(Debug, Clone)]
pub struct TimeGrid {
    times: Vec<f64>,
    mass: DMatrix<f64>,
    stiffness: DMatrix<f64>,
}

impl TimeGrid {
    pub fn uniform(n_time: usize, final_time: f64) -> Result<Self> {
        if !(final_time > 0.0 && final_time.is_finite()) {
            return Err(Error::InvalidConfig(format!("final time must be positive, got {final_time}")));
        }
        let nodes: Vec<f64> = (0..n_time)
            .map(|i| final_time * i as f64 / (n_time.max(2) - 1) as f64)
            .collect();
        let mesh = Mesh1D::new(nodes).map_err(|_| {
            Error::InvalidConfig(format!("a time grid needs at least 3 nodes, got {n_time}"))
        })?;
        let (mass, stiffness) = assemble_interval(&mesh);
        validate(&mass, &stiffness, "time grid")?;
        Ok(Self {
            times: mesh.nodes().to_vec(),
            mass,
            stiffness,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_time(&self) -> usize {
        self.times.len()
    }

    pub fn step(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }

    pub fn stiffness(&self) -> &DMatrix<f64> {
        &self.stiffness
    }
}

/// A discretized Hilbert space: spatial P1 mass/stiffness plus an optional
/// time grid. Space-time vectors are time-major: `[u_1; u_2; ...; u_nt]`.
#[derive(Debug, Clone)]
pub struct FunctionSpace {
    mesh: Mesh,
    mass: DMatrix<f64>,
    stiffness: DMatrix<f64>,
    time: Option<TimeGrid>,
}

impl FunctionSpace {
    pub fn new(mesh: Mesh) -> Result<Self> {
        let (mass, stiffness) = match &mesh {
            Mesh::Interval(m) => assemble_interval(m),
            Mesh::Square(m) => assemble_square(m),
        };
        validate(&mass, &stiffness, "spatial space")?;
        Ok(Self {
            mesh,
            mass,
            stiffness,
            time: None,
        })
    }

    pub fn with_time(mut self, grid: TimeGrid) -> Self {
        self.time = Some(grid);
        self
    }

    /// The same spatial discretization without a time grid.
    pub fn spatial(&self) -> FunctionSpace {
        Self {
            time: None,
            ..self.clone()
        }
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }

    pub fn stiffness(&self) -> &DMatrix<f64> {
        &self.stiffness
    }

    pub fn time(&self) -> Option<&TimeGrid> {
        self.time.as_ref()
    }

    pub fn n_space(&self) -> usize {
        self.mass.nrows()
    }

    pub fn n_time(&self) -> usize {
        self.time.as_ref().map_or(1, TimeGrid::n_time)
    }

    pub fn dim(&self) -> usize {
        self.n_space() * self.n_time()
    }

    /// `M_u x`, using `M_t ⊗ M_s` for space-time vectors.
    pub fn weight_apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("space vector", self.dim(), x.len())?;
        Ok(match &self.time {
            None => &self.mass * x,
            Some(t) => linalg::kron_apply(&t.mass, &self.mass, x),
        })
    }

    /// `M_u X` applied column by column.
    pub fn weight_apply_cols(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_len("space matrix rows", self.dim(), x.nrows())?;
        match &self.time {
            None => Ok(&self.mass * x),
            Some(_) => {
                let mut out = DMatrix::zeros(x.nrows(), x.ncols());
                for (j, col) in x.column_iter().enumerate() {
                    out.set_column(j, &self.weight_apply(&col.into_owned())?);
                }
                Ok(out)
            }
        }
    }

    pub fn inner(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        check_len("space vector", self.dim(), y.len())?;
        Ok(self.weight_apply(x)?.dot(y))
    }

    pub fn norm_sq(&self, x: &DVector<f64>) -> Result<f64> {
        self.inner(x, x)
    }

    /// Dense `M_u` (space-time Kronecker product when transient).
    pub fn dense_weight(&self) -> Result<DMatrix<f64>> {
        if self.dim() > linalg::DENSE_LIMIT {
            return Err(Error::TooLarge(self.dim()));
        }
        Ok(match &self.time {
            None => self.mass.clone(),
            Some(t) => linalg::kron(&t.mass, &self.mass),
        })
    }

    /// Spatial snapshot at time index `i` of a space-time vector.
    pub fn snapshot<'a>(&self, x: &'a DVector<f64>, i: usize) -> &'a [f64] {
        let n = self.n_space();
        &x.as_slice()[i * n..(i + 1) * n]
    }
}

/// Factorized `E = βK + M` on a spatial space.
#[derive(Debug, Clone)]
pub struct EllipticOperator {
    beta: f64,
    matrix: DMatrix<f64>,
    chol: Chol,
}

impl EllipticOperator {
    pub fn new(mass: &DMatrix<f64>, stiffness: &DMatrix<f64>, beta: f64) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::Validation(format!("smoothness must be finite and >= 0, got {beta}")));
        }
        let matrix = stiffness * beta + mass;
        let chol = linalg::cholesky(&matrix, "elliptic operator")?;
        Ok(Self { beta, matrix, chol })
    }

    pub fn for_space(space: &FunctionSpace, beta: f64) -> Result<Self> {
        Self::new(space.mass(), space.stiffness(), beta)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(v)
    }

    pub fn solve_cols(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(v)
    }

    pub fn cholesky(&self) -> &Chol {
        &self.chol
    }
}

/// `(βK + M)⁻¹ v` on the spatial part of `space`.
pub fn elliptic_apply_inverse(space: &FunctionSpace, beta: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("elliptic right-hand side", space.n_space(), v.len())?;
    let op = EllipticOperator::for_space(space, beta)
        .map_err(|e| Error::LinearSolve(e.to_string()))?;
    Ok(op.solve(v))
}

pub(crate) fn assemble_interval(mesh: &Mesh1D) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = mesh.n_nodes();
    let mut m = DMatrix::zeros(n, n);
    let mut k = DMatrix::zeros(n, n);
    for (a, b, h) in mesh.elements() {
        for (i, j, mv, kv) in [
            (a, a, h / 3.0, 1.0 / h),
            (b, b, h / 3.0, 1.0 / h),
            (a, b, h / 6.0, -1.0 / h),
            (b, a, h / 6.0, -1.0 / h),
        ] {
            m[(i, j)] += mv;
            k[(i, j)] += kv;
        }
    }
    (m, k)
}

pub(crate) fn assemble_square(mesh: &Mesh2D) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = mesh.nodes().len();
    let mut m = DMatrix::zeros(n, n);
    let mut k = DMatrix::zeros(n, n);
    for t in mesh.triangles() {
        let area = mesh.signed_area(t);
        let grads = barycentric_gradients(mesh, t);
        for a in 0..3 {
            for b in 0..3 {
                let mass = if a == b { area / 6.0 } else { area / 12.0 };
                m[(t[a], t[b])] += mass;
                k[(t[a], t[b])] += area * (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]);
            }
        }
    }
    (m, k)
}

pub(crate) fn barycentric_gradients(mesh: &Mesh2D, t: &[usize; 3]) -> [[f64; 2]; 3] {
    let p = t.map(|k| mesh.nodes()[k]);
    let two_area = 2.0 * mesh.signed_area(t);
    let mut g = [[0.0; 2]; 3];
    for a in 0..3 {
        let q = p[(a + 1) % 3];
        let r = p[(a + 2) % 3];
        g[a] = [(q[1] - r[1]) / two_area, (r[0] - q[0]) / two_area];
    }
    g
}

/// Symmetry, `M` SPD, `K e = 0` and diagonal dominance of `K`, which
/// bounds its spectrum below by zero.
fn validate(mass: &DMatrix<f64>, stiffness: &DMatrix<f64>, what: &str) -> Result<()> {
    if linalg::symmetry_defect(mass) > 1e-12 || linalg::symmetry_defect(stiffness) > 1e-12 {
        return Err(Error::Assembly(format!("{what}: mass or stiffness not symmetric")));
    }
    linalg::cholesky(mass, "mass matrix")?;
    let scale = stiffness.amax();
    let row_sum = stiffness.column_sum();
    if row_sum.amax() > 1e-10 * scale {
        return Err(Error::Assembly(format!("{what}: stiffness does not annihilate constants")));
    }
    for i in 0..stiffness.nrows() {
        let off: f64 = stiffness.row(i).iter().map(|v| v.abs()).sum::<f64>() - stiffness[(i, i)].abs();
        if stiffness[(i, i)] < off - 1e-10 * scale {
            return Err(Error::Assembly(format!("{what}: stiffness not diagonally dominant")));
        }
    }
    Ok(())
}
