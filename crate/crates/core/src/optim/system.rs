//! Least-squares problems `L(x) = sum_i r_i(x)^2` and their normal equations.

use crate::parallel;
use nalgebra::{DMatrix, DVector};

/// Dense block of a record's Jacobian: rows are the record's residuals,
/// columns start at parameter `col`.
#[derive(Debug, Clone)]
pub struct JacobianBlock {
    pub col: usize,
    pub values: DMatrix<f64>,
}

/// Residuals of one record and, when requested, its Jacobian blocks.
#[derive(Debug, Clone, Default)]
pub struct RecordEval {
    pub residuals: Vec<f64>,
    pub blocks: Vec<JacobianBlock>,
}

/// A nonlinear least-squares problem split into independent records.
///
/// `evaluate` must be safe to call concurrently for different records.
/// Jacobians are taken with respect to the increment passed to
/// [`ResidualSystem::retract`] at zero, so manifold-valued parameters can
/// use a local chart.
pub trait ResidualSystem: Sync {
    fn num_params(&self) -> usize;

    fn num_records(&self) -> usize;

    fn evaluate(&self, x: &DVector<f64>, record: usize, with_jacobian: bool) -> RecordEval;

    /// Applies an increment. Euclidean by default.
    fn retract(&self, x: &DVector<f64>, delta: &DVector<f64>) -> DVector<f64> {
        x + delta
    }
}

/// `J^T J`, `J^T r` and `L(x)` at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEquations {
    pub jtj: DMatrix<f64>,
    pub jtr: DVector<f64>,
    pub objective: f64,
}

impl NormalEquations {
    fn zeros(m: usize) -> Self {
        Self {
            jtj: DMatrix::zeros(m, m),
            jtr: DVector::zeros(m),
            objective: 0.0,
        }
    }

    fn add(mut self, other: Self) -> Self {
        self.jtj += other.jtj;
        self.jtr += other.jtr;
        self.objective += other.objective;
        self
    }

    // Upper triangle only; mirrored once at the end.
    fn accumulate(&mut self, eval: &RecordEval) {
        let r = DVector::from_column_slice(&eval.residuals);
        self.objective += r.norm_squared();
        for (ia, a) in eval.blocks.iter().enumerate() {
            let at = a.values.transpose();
            let mut g = self.jtr.rows_mut(a.col, a.values.ncols());
            g += &at * &r;
            for b in &eval.blocks[ia..] {
                let block = &at * &b.values;
                if a.col <= b.col {
                    let mut dst = self.jtj.view_mut((a.col, b.col), (block.nrows(), block.ncols()));
                    dst += &block;
                } else {
                    let mut dst = self.jtj.view_mut((b.col, a.col), (block.ncols(), block.nrows()));
                    dst += block.transpose();
                }
            }
        }
    }

    fn symmetrize(&mut self) {
        let m = self.jtj.nrows();
        for i in 0..m {
            for j in 0..i {
                self.jtj[(i, j)] = self.jtj[(j, i)];
            }
        }
    }

    pub fn gradient_inf_norm(&self) -> f64 {
        self.jtr.amax()
    }
}

fn max_blocks_for(m: usize) -> usize {
    (4_000_000 / (m * m).max(1)).clamp(1, parallel::MAX_BLOCKS)
}

/// Accumulates the normal equations with a deterministic parallel reduction.
///
/// Records are split into a fixed partition that depends only on the record
/// count and parameter dimension; partial sums are combined pairwise in
/// partition order, so the result is bitwise identical for any thread count.
pub fn normal_equations<S: ResidualSystem + ?Sized>(system: &S, x: &DVector<f64>) -> NormalEquations {
    let m = system.num_params();
    let n = system.num_records();
    let ranges = block_ranges_capped(n, max_blocks_for(m));
    let partials: Vec<NormalEquations> = {
        use rayon::prelude::*;
        ranges
            .into_par_iter()
            .map(|range| {
                let mut acc = NormalEquations::zeros(m);
                for i in range {
                    acc.accumulate(&system.evaluate(x, i, true));
                }
                acc
            })
            .collect()
    };
    let mut ne = parallel::tree_sum(partials, NormalEquations::add).unwrap_or_else(|| NormalEquations::zeros(m));
    ne.symmetrize();
    ne
}

/// Single-threaded, record-by-record accumulation.
pub fn normal_equations_serial<S: ResidualSystem + ?Sized>(system: &S, x: &DVector<f64>) -> NormalEquations {
    let mut ne = NormalEquations::zeros(system.num_params());
    for i in 0..system.num_records() {
        ne.accumulate(&system.evaluate(x, i, true));
    }
    ne.symmetrize();
    ne
}

fn block_ranges_capped(len: usize, max_blocks: usize) -> Vec<std::ops::Range<usize>> {
    if len == 0 {
        return Vec::new();
    }
    let size = len.div_ceil(len.min(max_blocks));
    (0..len).step_by(size).map(|s| s..(s + size).min(len)).collect()
}

/// `L(x)`, reduced deterministically.
pub fn objective<S: ResidualSystem + ?Sized>(system: &S, x: &DVector<f64>) -> f64 {
    parallel::sum_f64(system.num_records(), |i| {
        system.evaluate(x, i, false).residuals.iter().map(|r| r * r).sum()
    })
}

/// Stacked residual vector.
pub fn residual_vector<S: ResidualSystem + ?Sized>(system: &S, x: &DVector<f64>) -> DVector<f64> {
    let all: Vec<f64> = (0..system.num_records())
        .flat_map(|i| system.evaluate(x, i, false).residuals)
        .collect();
    DVector::from_vec(all)
}

/// Dense Jacobian assembled from the analytic blocks.
pub fn dense_jacobian<S: ResidualSystem + ?Sized>(system: &S, x: &DVector<f64>) -> DMatrix<f64> {
    let evals: Vec<RecordEval> = (0..system.num_records()).map(|i| system.evaluate(x, i, true)).collect();
    let rows: usize = evals.iter().map(|e| e.residuals.len()).sum();
    let mut j = DMatrix::zeros(rows, system.num_params());
    let mut row = 0;
    for e in &evals {
        for b in &e.blocks {
            let mut dst = j.view_mut((row, b.col), (b.values.nrows(), b.values.ncols()));
            dst += &b.values;
        }
        row += e.residuals.len();
    }
    j
}

/// Central-difference Jacobian through [`ResidualSystem::retract`].
pub fn numeric_jacobian<S: ResidualSystem + ?Sized>(system: &S, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let m = system.num_params();
    let mut cols = Vec::with_capacity(m);
    for k in 0..m {
        let mut step = DVector::zeros(m);
        step[k] = h;
        let plus = residual_vector(system, &system.retract(x, &step));
        let minus = residual_vector(system, &system.retract(x, &(-step)));
        cols.push((plus - minus) / (2.0 * h));
    }
    DMatrix::from_columns(&cols)
}
