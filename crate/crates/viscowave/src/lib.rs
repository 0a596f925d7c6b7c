//! Finite element solver for the linear viscoelastic scalar wave equation
//! with generalized-Maxwell memory.
//!
//! The hereditary Volterra integral of the constitutive law is replaced by
//! internal variables, one per Prony term, in either of two equivalent
//! formulations (driven by the displacement or by the velocity). Both are
//! discretized with continuous P1/P2 Lagrange elements in space and a
//! Crank-Nicolson scheme in time, with the internal variables eliminated
//! into per-step vector recurrences. The discrete energy identities behind
//! the schemes' stability are tracked exactly at runtime, and a manufactured
//! solution harness measures errors and convergence rates against closed
//! forms.

// Indexed loops in the kernels follow the banded/block matrix index
// arithmetic.
#![allow(clippy::needless_range_loop)]

pub mod assembly;
pub mod driver;
pub mod fespace;
pub mod linsolve;
pub mod mesh;
pub mod mms;
pub mod stepper;
pub mod verify;
pub mod vtk;

pub use assembly::{
    assemble_mass, assemble_neumann, assemble_source, assemble_stiffness, reduce_matrix,
    SparseSpdMatrix,
};
pub use driver::{convergence, run, ConvergenceConfig, ConvergenceReport, RunConfig, RunOutcome};
pub use fespace::{build_space, quadrature, FunctionSpace, QuadratureRule, ReferenceElement};
pub use linsolve::{prepare, Method, SolverOptions, SpdSolverContext};
pub use mesh::{classify_boundary, unit_square_mesh, BoundaryTag, Diagonal, Mesh};
pub use mms::{
    convergence_rate, error_norms, exact_c_q, ErrorTriple, ExactSolution, ManufacturedProblem,
};
pub use stepper::{
    energy_identity_residual, Form, MaterialModel, ProblemData, RunOptions, SolverState,
    TimeGrid, TimeStepper,
};
