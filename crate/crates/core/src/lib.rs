//! Coherent quantum LQG controller synthesis by discounted-cost homotopy.
//!
//! The crate models field-mediated feedback loops of open quantum harmonic
//! oscillators through their real matrix data, evaluates discounted and
//! infinite-horizon mean-square costs and their derivatives via algebraic
//! Lyapunov equations, and integrates a continuation ODE in the effective
//! time horizon from a zero-horizon controller toward a locally optimal
//! stabilizing one.
//!
//! Every operation is a pure function of its inputs over immutable data;
//! all public types are `Send + Sync`, so independent solves and Hessian
//! columns may run concurrently.
//!
//! Modules:
//! - [`structure`]: Ito/CCR structure matrices and structural predicates.
//! - [`param`]: the controller parameter space and its coordinates.
//! - [`model`]: plant/controller models and closed-loop assembly.
//! - [`lyapunov`]: Lyapunov solvers, Gramians, horizon admissibility.
//! - [`cost`]: costs, gradients and the mixed horizon derivative.
//! - [`geometry`]: symplectic group action, tangent/normal split, Hessians.
//! - [`homotopy`]: initialization, continuation loop, descent polish.

pub mod cost;
pub mod error;
pub mod geometry;
pub mod homotopy;
pub mod lyapunov;
pub mod model;
pub mod param;
pub mod structure;
pub mod tol;

pub use cost::Horizon;
pub use error::{Error, Result};
pub use model::{
    assemble_closed_loop, canonical_feedthrough, random_problem, random_synthesis_problem,
    ClosedLoopProblem, Plant, PlantPhysical, ProblemDims, SynthesisProblem,
};
pub use param::{ControllerTriple, GradientTriple, UDims};
pub use structure::ItoCcrStructure;
