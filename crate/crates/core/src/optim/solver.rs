use super::system::{normal_equations, objective, JacobianBlock, NormalEquations, RecordEval, ResidualSystem};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Relative pivot threshold below which `J^T J` is treated as singular.
pub const SINGULAR_PIVOT: f64 = 1e-12;
/// Rejected LM trials per iteration before giving up on further descent.
pub const LM_MAX_TRIALS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    SingularSystem,
    NonFinite,
}

#[derive(Debug, Clone)]
pub struct SolverReport {
    pub x: DVector<f64>,
    /// `L(x)` at the initial point and after every accepted step.
    pub objective_trace: Vec<f64>,
    /// The points at which `objective_trace` was recorded.
    pub iterates: Vec<DVector<f64>>,
    /// Number of accepted steps.
    pub iterations: usize,
    pub termination: Termination,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub max_iteration: usize,
    pub gradient_tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iteration: 100,
            gradient_tolerance: 1e-10,
        }
    }
}

/// Solves the SPD system `a x = b` by Cholesky, refusing pivots that are
/// tiny relative to the largest diagonal entry.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let max_diag = a.diagonal().amax();
    if !(max_diag > 0.0 && max_diag.is_finite()) {
        return None;
    }
    let chol = a.clone().cholesky()?;
    let l = chol.l_dirty();
    let min_pivot = (0..a.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if min_pivot <= SINGULAR_PIVOT * max_diag {
        return None;
    }
    let x = chol.solve(b);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn check_dims<S: ResidualSystem + ?Sized>(system: &S, x0: &DVector<f64>) -> Result<()> {
    if x0.len() != system.num_params() {
        return Err(Error::invalid(format!(
            "initial point has {} entries, system has {} parameters",
            x0.len(),
            system.num_params()
        )));
    }
    Ok(())
}

fn finite(ne: &NormalEquations) -> bool {
    ne.objective.is_finite() && ne.jtr.iter().all(|v| v.is_finite()) && ne.jtj.iter().all(|v| v.is_finite())
}

/// Gauss-Newton: `x <- x - (J^T J)^-1 J^T r` until `|J^T r|_inf` falls below
/// the tolerance.
pub fn gauss_newton_solve<S: ResidualSystem + ?Sized>(
    system: &S,
    x0: &DVector<f64>,
    options: SolverOptions,
) -> Result<SolverReport> {
    check_dims(system, x0)?;
    let mut report = SolverReport {
        x: x0.clone(),
        objective_trace: Vec::new(),
        iterates: Vec::new(),
        iterations: 0,
        termination: Termination::MaxIterations,
    };
    loop {
        let ne = normal_equations(system, &report.x);
        if !finite(&ne) {
            report.termination = Termination::NonFinite;
            return Ok(report);
        }
        report.objective_trace.push(ne.objective);
        report.iterates.push(report.x.clone());
        if ne.gradient_inf_norm() < options.gradient_tolerance {
            report.termination = Termination::Converged;
            return Ok(report);
        }
        if report.iterations >= options.max_iteration {
            return Ok(report);
        }
        let Some(step) = solve_spd(&ne.jtj, &ne.jtr) else {
            report.termination = Termination::SingularSystem;
            return Ok(report);
        };
        report.x = system.retract(&report.x, &(-step));
        report.iterations += 1;
    }
}

/// Levenberg-Marquardt with Marquardt scaling: the step solves
/// `(J^T J + lambda diag(J^T J)) d = J^T r`. Accepted steps halve `lambda`,
/// rejected ones double it, up to [`LM_MAX_TRIALS`] per iteration.
pub fn levenberg_marquardt_solve<S: ResidualSystem + ?Sized>(
    system: &S,
    x0: &DVector<f64>,
    options: SolverOptions,
    lambda_init: f64,
) -> Result<SolverReport> {
    check_dims(system, x0)?;
    if !(lambda_init > 0.0 && lambda_init.is_finite()) {
        return Err(Error::invalid(format!("lambda_init must be positive, got {lambda_init}")));
    }
    let mut report = SolverReport {
        x: x0.clone(),
        objective_trace: Vec::new(),
        iterates: Vec::new(),
        iterations: 0,
        termination: Termination::MaxIterations,
    };
    let mut lambda = lambda_init;
    let mut ne = normal_equations(system, &report.x);
    if !finite(&ne) {
        report.termination = Termination::NonFinite;
        return Ok(report);
    }
    report.objective_trace.push(ne.objective);
    report.iterates.push(report.x.clone());
    while report.iterations < options.max_iteration {
        if ne.gradient_inf_norm() < options.gradient_tolerance {
            report.termination = Termination::Converged;
            return Ok(report);
        }
        let diag = ne.jtj.diagonal();
        let floor = diag.amax() * SINGULAR_PIVOT;
        let mut accepted = None;
        let mut any_solved = false;
        for _ in 0..LM_MAX_TRIALS {
            let mut damped = ne.jtj.clone();
            for i in 0..diag.len() {
                damped[(i, i)] += lambda * diag[i].max(floor);
            }
            let Some(step) = solve_spd(&damped, &ne.jtr) else {
                lambda *= 2.0;
                continue;
            };
            any_solved = true;
            let candidate = system.retract(&report.x, &(-step));
            let value = objective(system, &candidate);
            if value.is_finite() && value < ne.objective {
                lambda *= 0.5;
                accepted = Some(candidate);
                break;
            }
            lambda *= 2.0;
        }
        let Some(x) = accepted else {
            report.termination = if any_solved {
                Termination::Converged
            } else {
                Termination::SingularSystem
            };
            return Ok(report);
        };
        let next = normal_equations(system, &x);
        if !finite(&next) {
            report.termination = Termination::NonFinite;
            return Ok(report);
        }
        report.x = x;
        report.iterations += 1;
        report.objective_trace.push(next.objective);
        report.iterates.push(report.x.clone());
        ne = next;
    }
    if ne.gradient_inf_norm() < options.gradient_tolerance {
        report.termination = Termination::Converged;
    }
    Ok(report)
}

/// Linear residuals `r = A x - b`, one record per row.
#[derive(Debug, Clone)]
pub struct LinearResiduals {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl ResidualSystem for LinearResiduals {
    fn num_params(&self) -> usize {
        self.a.ncols()
    }

    fn num_records(&self) -> usize {
        self.a.nrows()
    }

    fn evaluate(&self, x: &DVector<f64>, record: usize, with_jacobian: bool) -> RecordEval {
        let row = self.a.row(record);
        let r = row.dot(&x.transpose()) - self.b[record];
        RecordEval {
            residuals: vec![r],
            blocks: if with_jacobian {
                vec![JacobianBlock {
                    col: 0,
                    values: DMatrix::from_row_slice(1, self.a.ncols(), row.clone_owned().as_slice()),
                }]
            } else {
                Vec::new()
            },
        }
    }
}

/// Rosenbrock's function as two residuals: `10 (x1 - x0^2)` and `1 - x0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Rosenbrock;

impl ResidualSystem for Rosenbrock {
    fn num_params(&self) -> usize {
        2
    }

    fn num_records(&self) -> usize {
        2
    }

    fn evaluate(&self, x: &DVector<f64>, record: usize, with_jacobian: bool) -> RecordEval {
        let (r, j) = match record {
            0 => (10.0 * (x[1] - x[0] * x[0]), [-20.0 * x[0], 10.0]),
            _ => (1.0 - x[0], [-1.0, 0.0]),
        };
        RecordEval {
            residuals: vec![r],
            blocks: if with_jacobian {
                vec![JacobianBlock {
                    col: 0,
                    values: DMatrix::from_row_slice(1, 2, &j),
                }]
            } else {
                Vec::new()
            },
        }
    }
}
