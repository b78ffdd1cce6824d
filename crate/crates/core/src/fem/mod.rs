//! Taylor-Hood P2/P1 spaces, assembly of the bilinear forms, and saddle-point solves.

mod assembly;
mod element;
mod field;
pub mod quadrature;
mod saddle;
mod space;
mod sparse;

pub use assembly::{
    assemble, assemble_effective, assemble_pressure_mass, boundary_load_vector, load_vector, pressure_load, FormKind,
    Tensor4,
};
pub use element::{edge_p2_values, p2_grads, p2_values, Element};
pub use field::{p1_value, PointLocator, VelocityField};
pub use saddle::{
    solve_saddle, ResidualReport, SaddleFactorization, SaddleSolution, SaddleSystem, SolverConfig, SolverMethod,
};
pub use space::{build_space, Bc, BcSpec, MixedSpace, P2Topology};
pub use sparse::SparseMatrix;
