//! Fixed-step integration of position dynamics and its gradients.

mod adjoint;
mod field;
mod grid;
mod solver;

pub use adjoint::{adjoint_backward, backward, unrolled_backward, FieldGradient};
pub use field::{DifferentiableField, DynamicsFunction, FnField, LinearField, VectorField};
pub use grid::TimeGrid;
pub use solver::{encode_positions, integrate_segment, GradMode, Scheme, SolverConfig, Trajectory};
