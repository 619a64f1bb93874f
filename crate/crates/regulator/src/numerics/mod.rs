//! Dense linear algebra and matrix-equation solvers.

mod expm;
mod linalg;
mod ode;
mod riccati;
mod spectrum;
mod sylvester;

pub use expm::expm;
pub use linalg::{
    block, block_diag, complex_rank, controllability_matrix, from_row_major, kron,
    min_singular_ratio_complex, rank, solve, spd_inverse, to_complex, to_row_major, DenseMatrix,
    DenseVector,
};
pub use ode::ode_step;
pub use riccati::{
    are_solve, are_solve_full, initial_stabilizer, is_stabilizable, lqr, riccati_residual,
    AreSolution,
};
pub use spectrum::{balance, real_schur, spectral_abscissa, spectrum, RealSchur, SpectrumReport};
pub use sylvester::{
    lyapunov_relative_residual, lyapunov_solve, sylvester_relative_residual, sylvester_solve,
    SylvesterSolver,
};
