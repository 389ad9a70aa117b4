//! Multiway registration: robust pose-graph optimization on SE(3).
//!
//! Node `i` holds the pose `T_i` mapping node-local coordinates to the world
//! frame. An edge `(i, j, Z)` measures `Z ~ T_i^-1 T_j` and contributes the
//! residual `e = log(Z^-1 T_i^-1 T_j)` weighted by its information matrix.
//! Uncertain (loop-closure) edges additionally carry a line-process
//! confidence `l` in `[0, 1]`, alternated with the poses:
//!
//! ```text
//! E = sum_certain |e|^2_L + sum_uncertain l |e|^2_L + mu_e (sqrt(l) - 1)^2
//! ```
//!
//! where `mu_e = mu * trace(L) / 6` and `mu = max_correspondence_distance^2`.
//! For fixed poses the optimal confidence is `(mu / (mu + q))^2` with
//! `q = |e|^2_L / (trace(L) / 6)`.

use super::se3::{se3_adjoint, se3_exp, se3_log, se3_right_jacobian_inv};
use super::solver::{levenberg_marquardt_solve, SolverOptions, SolverReport};
use super::system::{JacobianBlock, RecordEval, ResidualSystem};
use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use nalgebra::{DMatrix, DVector, Matrix6, Vector6};

/// Outer rounds of line-process re-estimation.
pub const MAX_OUTER_ROUNDS: usize = 20;
/// Outer rounds stop once no confidence moves by more than this.
pub const CONFIDENCE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct PoseGraphEdge {
    pub source: usize,
    pub target: usize,
    /// Measured `T_source^-1 T_target`.
    pub transform: RigidTransform,
    pub information: Matrix6<f64>,
    pub uncertain: bool,
    pub confidence: f64,
}

impl PoseGraphEdge {
    pub fn new(source: usize, target: usize, transform: RigidTransform, information: Matrix6<f64>, uncertain: bool) -> Self {
        Self {
            source,
            target,
            transform,
            information,
            uncertain,
            confidence: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoseGraph {
    pub nodes: Vec<RigidTransform>,
    pub edges: Vec<PoseGraphEdge>,
}

impl PoseGraph {
    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        for (k, e) in self.edges.iter().enumerate() {
            if e.source >= n || e.target >= n {
                return Err(Error::invalid(format!(
                    "edge {k} ({} -> {}) references a node outside 0..{n}",
                    e.source, e.target
                )));
            }
            if e.source == e.target {
                return Err(Error::invalid(format!("edge {k} is a self-loop")));
            }
            if !(0.0..=1.0).contains(&e.confidence) {
                return Err(Error::invalid(format!("edge {k} confidence {} outside [0, 1]", e.confidence)));
            }
            let info = &e.information;
            let scale = info.amax().max(1e-300);
            if info.iter().any(|v| !v.is_finite()) || (info - info.transpose()).amax() > 1e-9 * scale {
                return Err(Error::invalid(format!("edge {k} information matrix is not symmetric")));
            }
            if info.symmetric_eigenvalues().min() < -1e-9 * scale {
                return Err(Error::invalid(format!("edge {k} information matrix is not positive semidefinite")));
            }
        }
        Ok(())
    }

    /// True if the certain edges connect every node.
    pub fn certain_edges_connected(&self) -> bool {
        let n = self.nodes.len();
        if n == 0 {
            return true;
        }
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for e in self.edges.iter().filter(|e| !e.uncertain) {
            let (a, b) = (find(&mut parent, e.source), find(&mut parent, e.target));
            parent[a] = b;
        }
        let root = find(&mut parent, 0);
        (0..n).all(|i| find(&mut parent, i) == root)
    }

    /// Residual twist of one edge at the current poses.
    pub fn edge_residual(&self, edge: usize) -> Vector6<f64> {
        let e = &self.edges[edge];
        edge_error(&e.transform, &self.nodes[e.source], &self.nodes[e.target])
    }
}

fn edge_error(z: &RigidTransform, ti: &RigidTransform, tj: &RigidTransform) -> Vector6<f64> {
    se3_log(&(z.inverse() * ti.inverse() * *tj))
}

/// Symmetric square root `S` with `S^T S = L` for PSD `L`.
fn psd_sqrt(info: &Matrix6<f64>) -> Matrix6<f64> {
    let eig = info.symmetric_eigen();
    let d = Matrix6::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Pose-graph residuals for fixed edge weights.
///
/// Parameters are left perturbations of nodes `1..n` around reference poses:
/// `T_i = exp(x_i) T_i_ref`. Node 0 is the gauge anchor and is not a parameter.
pub struct PoseGraphSystem<'a> {
    reference: &'a [RigidTransform],
    edges: &'a [PoseGraphEdge],
    sqrt_info: Vec<Matrix6<f64>>,
    weights: Vec<f64>,
}

impl<'a> PoseGraphSystem<'a> {
    pub fn new(reference: &'a [RigidTransform], edges: &'a [PoseGraphEdge], weights: Vec<f64>) -> Self {
        assert_eq!(weights.len(), edges.len());
        Self {
            reference,
            edges,
            sqrt_info: edges.iter().map(|e| psd_sqrt(&e.information)).collect(),
            weights,
        }
    }

    /// System over a whole graph, weighting uncertain edges by their confidence.
    pub fn from_graph(graph: &'a PoseGraph) -> Self {
        let weights = graph.edges.iter().map(|e| if e.uncertain { e.confidence } else { 1.0 }).collect();
        Self::new(&graph.nodes, &graph.edges, weights)
    }

    fn twist(x: &DVector<f64>, node: usize) -> Vector6<f64> {
        Vector6::from_column_slice(&x.as_slice()[(node - 1) * 6..node * 6])
    }

    pub fn pose(&self, x: &DVector<f64>, node: usize) -> RigidTransform {
        if node == 0 {
            return self.reference[0];
        }
        let xi = Self::twist(x, node);
        if xi == Vector6::zeros() {
            return self.reference[node];
        }
        se3_exp(&xi) * self.reference[node]
    }

    pub fn poses(&self, x: &DVector<f64>) -> Vec<RigidTransform> {
        (0..self.reference.len()).map(|i| self.pose(x, i)).collect()
    }
}

impl ResidualSystem for PoseGraphSystem<'_> {
    fn num_params(&self) -> usize {
        6 * self.reference.len().saturating_sub(1)
    }

    fn num_records(&self) -> usize {
        self.edges.len()
    }

    fn evaluate(&self, x: &DVector<f64>, record: usize, with_jacobian: bool) -> RecordEval {
        let edge = &self.edges[record];
        let ti = self.pose(x, edge.source);
        let tj = self.pose(x, edge.target);
        let e = edge_error(&edge.transform, &ti, &tj);
        let w = self.weights[record].sqrt();
        let s = self.sqrt_info[record] * w;
        let r = s * e;
        let mut eval = RecordEval {
            residuals: r.as_slice().to_vec(),
            blocks: Vec::new(),
        };
        if with_jacobian {
            // d e / d delta_j = J_r^-1(e) Ad(T_j^-1); d e / d delta_i is its negation.
            let dj = s * se3_right_jacobian_inv(&e) * se3_adjoint(&tj.inverse());
            if edge.source > 0 {
                eval.blocks.push(JacobianBlock {
                    col: (edge.source - 1) * 6,
                    values: DMatrix::from_column_slice(6, 6, (-dj).as_slice()),
                });
            }
            if edge.target > 0 {
                eval.blocks.push(JacobianBlock {
                    col: (edge.target - 1) * 6,
                    values: DMatrix::from_column_slice(6, 6, dj.as_slice()),
                });
            }
        }
        eval
    }

    fn retract(&self, x: &DVector<f64>, delta: &DVector<f64>) -> DVector<f64> {
        let mut out = x.clone();
        for node in 1..self.reference.len() {
            let xi = Self::twist(x, node);
            let d = Self::twist(delta, node);
            let combined = se3_log(&(se3_exp(&d) * se3_exp(&xi)));
            out.rows_mut((node - 1) * 6, 6).copy_from(&combined);
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GlobalOptimizationOption {
    pub max_correspondence_distance: f64,
    /// Uncertain edges whose final confidence falls below this are pruned.
    pub preference_loop_closure: f64,
    /// LM iterations per outer round.
    pub max_iteration: usize,
    pub lambda_init: f64,
    pub gradient_tolerance: f64,
}

impl Default for GlobalOptimizationOption {
    fn default() -> Self {
        Self {
            max_correspondence_distance: 0.075,
            preference_loop_closure: 0.25,
            max_iteration: 100,
            lambda_init: 1e-4,
            gradient_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GlobalOptimizationReport {
    /// Optimized poses with re-estimated confidences.
    pub graph: PoseGraph,
    /// Indices of uncertain edges whose confidence ended below the preference.
    pub pruned: Vec<usize>,
    /// Joint objective before optimization and after each outer round.
    pub objective_trace: Vec<f64>,
    pub inner_reports: Vec<SolverReport>,
}

fn info_scale(info: &Matrix6<f64>) -> f64 {
    info.trace() / 6.0
}

/// Joint line-process objective at the graph's current poses and confidences.
pub fn robust_objective(graph: &PoseGraph, mu: f64) -> f64 {
    graph
        .edges
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let r = graph.edge_residual(k);
            let q = (r.transpose() * e.information * r)[(0, 0)];
            if e.uncertain {
                let mu_e = mu * info_scale(&e.information);
                e.confidence * q + mu_e * (e.confidence.sqrt() - 1.0).powi(2)
            } else {
                q
            }
        })
        .sum()
}

/// Optimal line-process confidence for an edge at the current poses.
pub fn line_process_confidence(residual: &Vector6<f64>, information: &Matrix6<f64>, mu: f64) -> f64 {
    let scale = info_scale(information);
    if scale <= 0.0 {
        return 1.0;
    }
    let q = (residual.transpose() * information * residual)[(0, 0)] / scale;
    (mu / (mu + q)).powi(2)
}

/// Robust pose-graph optimization with node 0 held fixed.
///
/// Alternates Levenberg-Marquardt over the poses with closed-form
/// re-estimation of uncertain-edge confidences until they settle.
pub fn global_optimization(graph: &PoseGraph, option: &GlobalOptimizationOption) -> Result<GlobalOptimizationReport> {
    graph.validate()?;
    if !(option.max_correspondence_distance > 0.0) {
        return Err(Error::invalid("max_correspondence_distance must be positive"));
    }
    if !(0.0..=1.0).contains(&option.preference_loop_closure) {
        return Err(Error::invalid("preference_loop_closure must lie in [0, 1]"));
    }
    if !graph.certain_edges_connected() {
        return Err(Error::invalid("certain (odometry) edges do not connect every node"));
    }
    let mu = option.max_correspondence_distance.powi(2);
    let mut current = graph.clone();
    let mut report = GlobalOptimizationReport {
        pruned: Vec::new(),
        objective_trace: vec![robust_objective(&current, mu)],
        inner_reports: Vec::new(),
        graph: current.clone(),
    };
    if current.nodes.len() <= 1 {
        return Ok(report);
    }
    let has_uncertain = current.edges.iter().any(|e| e.uncertain);
    for _ in 0..MAX_OUTER_ROUNDS {
        let system = PoseGraphSystem::from_graph(&current);
        let x0 = DVector::zeros(system.num_params());
        let inner = levenberg_marquardt_solve(
            &system,
            &x0,
            SolverOptions {
                max_iteration: option.max_iteration,
                gradient_tolerance: option.gradient_tolerance,
            },
            option.lambda_init,
        )?;
        let poses = system.poses(&inner.x);
        report.inner_reports.push(inner);
        current.nodes = poses;
        let mut max_change: f64 = 0.0;
        for k in 0..current.edges.len() {
            if current.edges[k].uncertain {
                let l = line_process_confidence(&current.edge_residual(k), &current.edges[k].information, mu);
                max_change = max_change.max((l - current.edges[k].confidence).abs());
                current.edges[k].confidence = l;
            }
        }
        report.objective_trace.push(robust_objective(&current, mu));
        if !has_uncertain || max_change < CONFIDENCE_TOLERANCE {
            break;
        }
    }
    report.pruned = current
        .edges
        .iter()
        .enumerate()
        .filter(|(_, e)| e.uncertain && e.confidence < option.preference_loop_closure)
        .map(|(k, _)| k)
        .collect();
    report.graph = current;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::system::{dense_jacobian, numeric_jacobian};
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn twist(rng: &mut Xoshiro256PlusPlus, rot: f64, trans: f64) -> Vector6<f64> {
        Vector6::from_fn(|i, _| (rng.random::<f64>() * 2.0 - 1.0) * if i < 3 { rot } else { trans })
    }

    fn random_graph(seed: u64, n: usize) -> PoseGraph {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let nodes: Vec<_> = (0..n).map(|_| se3_exp(&twist(&mut rng, 1.0, 1.0))).collect();
        let mut edges = Vec::new();
        for i in 0..n {
            let j = (i + 1) % n;
            let z = se3_exp(&twist(&mut rng, 0.5, 0.5));
            let m = Matrix6::from_fn(|_, _| rng.random::<f64>());
            edges.push(PoseGraphEdge::new(i, j, z, m * m.transpose() + Matrix6::identity(), i == n - 1));
        }
        PoseGraph { nodes, edges }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let graph = random_graph(1, 5);
        let system = PoseGraphSystem::from_graph(&graph);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(2);
        for _ in 0..5 {
            let x = DVector::from_fn(system.num_params(), |_, _| rng.random::<f64>() * 0.6 - 0.3);
            let analytic = dense_jacobian(&system, &x);
            let numeric = numeric_jacobian(&system, &x, 1e-6);
            let rel = (&analytic - &numeric).amax() / numeric.amax();
            assert!(rel < 1e-5, "relative error {rel}");
        }
    }

    #[test]
    fn exact_graph_is_a_fixed_point() {
        let mut graph = random_graph(3, 6);
        for e in &mut graph.edges {
            e.transform = graph.nodes[e.source].inverse() * graph.nodes[e.target];
        }
        let report = global_optimization(&graph, &GlobalOptimizationOption::default()).unwrap();
        for (a, b) in report.graph.nodes.iter().zip(&graph.nodes) {
            assert!((a.matrix() - b.matrix()).amax() < 1e-10);
        }
        assert!(report.graph.edges.iter().all(|e| (e.confidence - 1.0).abs() < 1e-12));
        assert!(report.pruned.is_empty());
    }

    #[test]
    fn anchor_is_bitwise_fixed() {
        let graph = random_graph(4, 4);
        let report = global_optimization(&graph, &GlobalOptimizationOption::default()).unwrap();
        assert_eq!(report.graph.nodes[0], graph.nodes[0]);
        assert!(report.objective_trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }

    #[test]
    fn disconnected_graph_rejected() {
        let mut graph = random_graph(5, 4);
        graph.edges.retain(|e| !(e.source == 1 && e.target == 2));
        graph.edges.iter_mut().for_each(|e| e.uncertain = e.source == 3);
        assert!(matches!(
            global_optimization(&graph, &GlobalOptimizationOption::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn invalid_edges_rejected() {
        let mut graph = random_graph(6, 3);
        graph.edges[0].target = 7;
        assert!(graph.validate().is_err());
        let mut graph = random_graph(6, 3);
        graph.edges[0].information[(0, 1)] += 1.0;
        assert!(graph.validate().is_err());
        let mut graph = random_graph(6, 3);
        graph.edges[0].information = -Matrix6::identity();
        assert!(graph.validate().is_err());
    }

    #[test]
    fn single_node_graph_is_untouched() {
        let graph = PoseGraph {
            nodes: vec![RigidTransform::identity()],
            edges: vec![],
        };
        let report = global_optimization(&graph, &GlobalOptimizationOption::default()).unwrap();
        assert_eq!(report.graph, graph);
    }

    #[test]
    fn confidence_formula() {
        let info = Matrix6::identity() * 50.0;
        let r = Vector6::new(0.0, 0.0, 0.0, 0.1, 0.0, 0.0);
        let mu = 0.075f64.powi(2);
        let l = line_process_confidence(&r, &info, mu);
        assert!((l - (mu / (mu + 0.01)).powi(2)).abs() < 1e-15);
        assert_eq!(line_process_confidence(&Vector6::zeros(), &info, mu), 1.0);
    }
}
