//! Nonlinear least squares and pose-graph optimization.

mod pose_graph;
pub mod se3;
mod solver;
mod system;

pub use pose_graph::{
    global_optimization, line_process_confidence, robust_objective, GlobalOptimizationOption,
    GlobalOptimizationReport, PoseGraph, PoseGraphEdge, PoseGraphSystem, CONFIDENCE_TOLERANCE, MAX_OUTER_ROUNDS,
};
pub use se3::{se3_exp, se3_log};
pub use solver::{
    gauss_newton_solve, levenberg_marquardt_solve, solve_spd, LinearResiduals, Rosenbrock, SolverOptions,
    SolverReport, Termination, LM_MAX_TRIALS, SINGULAR_PIVOT,
};
pub use system::{
    dense_jacobian, normal_equations, normal_equations_serial, numeric_jacobian, objective, residual_vector,
    JacobianBlock, NormalEquations, RecordEval, ResidualSystem,
};
