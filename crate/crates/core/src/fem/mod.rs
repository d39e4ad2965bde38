//! Piecewise-linear finite elements on the unit interval and unit square.

mod mesh;
mod operators;
mod space;

pub use mesh::{Mesh, Mesh1D, Mesh2D, NodeLine};
pub use operators::{
    advection_1d, advection_2d, implicit_euler, robin_1d, solve_stationary, LinearSolutionOperator,
};
pub use space::{elliptic_apply_inverse, EllipticOperator, FunctionSpace, TimeGrid};
