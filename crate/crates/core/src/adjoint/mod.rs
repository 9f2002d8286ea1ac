//! The four adjoint equations, the fundamental solution Φ and the duality identities.

pub mod deterministic;
pub mod duality;
pub mod fundamental;
pub mod regression;
pub mod terms;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::problem::{ControlPolicy, ControlProblem, PathEnsemble, PointJets, ScalarJet, States, TerminalField, TimeGrid};
use crate::regression::{Design, FeatureMap};
use crate::tensor::{ipow, MultilinearForm, TensorProcess};

pub use deterministic::solve_adjoint_deterministic;
pub use duality::{duality_check, DualityReport};
pub use fundamental::{fundamental_solution, FundamentalSolution};
pub use regression::{solve_adjoint_regression, RegressionDiagnostics};
pub use terms::NodeCoefficients;

/// Regression fit of (p_k, q_k) at one node, as functions of x̄(t_i).
#[derive(Clone, Debug)]
pub struct NodeFit {
    pub features: FeatureMap,
    pub gram_inv: DMatrix<f64>,
    pub paths: usize,
    /// One coefficient vector per tensor entry.
    pub p_coef: Vec<Vec<f64>>,
    pub q_coef: Vec<Vec<f64>>,
    pub p_var: Vec<f64>,
    pub q_var: Vec<f64>,
}

#[derive(Clone)]
pub enum AdjointRepr {
    /// One series; q ≡ 0.
    Deterministic { p: TensorProcess, q: TensorProcess },
    /// Fits at nodes 0..N−1; node N uses the exact terminal condition.
    Regression { nodes: Vec<NodeFit>, terminal: Arc<dyn TerminalField> },
}

impl fmt::Debug for AdjointRepr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AdjointRepr::Deterministic { .. } => f.write_str("Deterministic"),
            AdjointRepr::Regression { nodes, .. } => write!(f, "Regression({} nodes)", nodes.len()),
        }
    }
}

/// (p_k, q_k) on the grid.
#[derive(Clone, Debug)]
pub struct AdjointSolution {
    pub order: usize,
    pub grid: TimeGrid,
    pub dim: usize,
    pub repr: AdjointRepr,
}

impl AdjointSolution {
    pub fn coefficient_count(&self) -> usize {
        ipow(self.dim, self.order)
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self.repr, AdjointRepr::Deterministic { .. })
    }

    /// p_k(t_i) on a path whose base state at t_i is `x`.
    pub fn p_into(&self, node: usize, x: &[f64], out: &mut [f64]) {
        match &self.repr {
            AdjointRepr::Deterministic { p, .. } => out.copy_from_slice(p.at(0, node)),
            AdjointRepr::Regression { nodes, terminal } => {
                if node == self.grid.steps() {
                    let mut j = ScalarJet::new(self.dim, self.order);
                    terminal.eval(x, &mut j);
                    for (o, v) in out.iter_mut().zip(&j.dx[self.order - 1]) {
                        *o = -v;
                    }
                } else {
                    let fit = &nodes[node];
                    for (o, c) in out.iter_mut().zip(&fit.p_coef) {
                        *o = fit.features.predict(c, x);
                    }
                }
            }
        }
    }

    /// q_k(t_i); at t_N the last cell's value is used.
    pub fn q_into(&self, node: usize, x: &[f64], out: &mut [f64]) {
        match &self.repr {
            AdjointRepr::Deterministic { q, .. } => out.copy_from_slice(q.at(0, node)),
            AdjointRepr::Regression { nodes, .. } => {
                let fit = &nodes[node.min(nodes.len() - 1)];
                for (o, c) in out.iter_mut().zip(&fit.q_coef) {
                    *o = fit.features.predict(c, x);
                }
            }
        }
    }

    pub fn p_at(&self, node: usize, x: &[f64]) -> MultilinearForm {
        let mut c = vec![0.0; self.coefficient_count()];
        self.p_into(node, x, &mut c);
        MultilinearForm::from_coeffs(self.order, self.dim, c).expect("adjoint shape")
    }

    pub fn q_at(&self, node: usize, x: &[f64]) -> MultilinearForm {
        let mut c = vec![0.0; self.coefficient_count()];
        self.q_into(node, x, &mut c);
        MultilinearForm::from_coeffs(self.order, self.dim, c).expect("adjoint shape")
    }

    /// Regression standard errors of (p, q) entries at (node, x); zeros for
    /// the deterministic solver and at the exact terminal node.
    pub fn standard_errors(&self, node: usize, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = self.coefficient_count();
        match &self.repr {
            AdjointRepr::Deterministic { .. } => (vec![0.0; d], vec![0.0; d]),
            AdjointRepr::Regression { nodes, .. } => {
                let fit = &nodes[node.min(nodes.len() - 1)];
                let mut phi = vec![0.0; fit.features.len()];
                fit.features.eval(x, &mut phi);
                let se = |v: f64| Design::prediction_se(&fit.gram_inv, fit.paths, v, &phi);
                let p = if node == self.grid.steps() { vec![0.0; d] } else { fit.p_var.iter().map(|v| se(*v)).collect() };
                (p, fit.q_var.iter().map(|v| se(*v)).collect())
            }
        }
    }

    /// Per-node cross-path means of the p and q coefficients.
    pub fn mean_series(&self, states: &States) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let nodes = self.grid.steps() + 1;
        let m = states.aborted.len();
        let d = self.coefficient_count();
        let mut ps = Vec::with_capacity(nodes);
        let mut qs = Vec::with_capacity(nodes);
        let mut buf = vec![0.0; d];
        for i in 0..nodes {
            let mut pm = vec![0.0; d];
            let mut qm = vec![0.0; d];
            let used = if self.is_deterministic() { 1 } else { m };
            for p in 0..used {
                let x = states.at(p, i, nodes);
                self.p_into(i, x, &mut buf);
                pm.iter_mut().zip(&buf).for_each(|(a, b)| *a += b / used as f64);
                self.q_into(i, x, &mut buf);
                qm.iter_mut().zip(&buf).for_each(|(a, b)| *a += b / used as f64);
            }
            ps.push(pm);
            qs.push(qm);
        }
        (ps, qs)
    }
}

/// Adjoint solutions of orders 1..=k.
#[derive(Clone, Debug)]
pub struct AdjointSet {
    pub solutions: Vec<AdjointSolution>,
}

impl AdjointSet {
    pub fn max_order(&self) -> usize {
        self.solutions.len()
    }

    pub fn get(&self, k: usize) -> Result<&AdjointSolution> {
        self.solutions.get(k.wrapping_sub(1)).ok_or_else(|| Error::Usage(format!("adjoint of order {k} not solved (have 1..={})", self.solutions.len())))
    }

    pub fn is_deterministic(&self) -> bool {
        self.solutions.iter().all(|s| s.is_deterministic())
    }

    pub fn grid(&self) -> TimeGrid {
        self.solutions[0].grid
    }
}

/// ū at node i along a base state (node N reuses the last cell).
pub(crate) fn base_control_at(policy: &ControlPolicy, grid: &TimeGrid, i: usize, x: &[f64], out: &mut [f64]) {
    let cell = i.min(grid.steps() - 1);
    policy.base_control(cell, grid.node(i), x, out);
}

/// Coefficient derivatives along one base path.
pub(crate) fn node_coefficients(
    problem: &ControlProblem,
    policy: &ControlPolicy,
    grid: &TimeGrid,
    i: usize,
    x: &[f64],
    jets: &mut PointJets,
) -> NodeCoefficients {
    let mut u = vec![0.0; problem.control_dim];
    base_control_at(policy, grid, i, x, &mut u);
    jets.eval(problem, grid.node(i), x, &u);
    NodeCoefficients::from_jets(jets)
}

/// Paths used to decide whether the base pair is deterministic.
const PROBE_PATHS: usize = 16;

/// Returns a description of the first cross-path difference in the base
/// trajectory or its coefficients, or None when they agree to round-off.
pub fn stochastic_reason(problem: &ControlProblem, policy: &ControlPolicy, paths: &PathEnsemble) -> Result<Option<String>> {
    let states = paths.states()?;
    let grid = paths.grid();
    let nodes = grid.steps() + 1;
    let probes = paths.path_count().min(PROBE_PATHS);
    let n = problem.state_dim;
    let mut j0 = PointJets::new(n, 4);
    let mut j1 = PointJets::new(n, 4);
    let flat = |j: &PointJets| -> Vec<f64> {
        let mut v = Vec::new();
        for d in j.b.dx.iter().chain(&j.sigma.dx).chain(&j.f.dx) {
            v.extend_from_slice(d);
        }
        v
    };
    let mut u = vec![0.0; problem.control_dim];
    for i in 0..nodes {
        let x0 = states.at(0, i, nodes);
        base_control_at(policy, &grid, i, x0, &mut u);
        j0.eval(problem, grid.node(i), x0, &u);
        let ref_vals = flat(&j0);
        for p in 1..probes {
            let x = states.at(p, i, nodes);
            base_control_at(policy, &grid, i, x, &mut u);
            j1.eval(problem, grid.node(i), x, &u);
            for (a, b) in ref_vals.iter().zip(flat(&j1)) {
                if (a - b).abs() > 1e-12 * (1.0 + a.abs()) {
                    return Ok(Some(format!("coefficients differ between paths 0 and {p} at node {i}")));
                }
            }
        }
    }
    let mut h0 = ScalarJet::new(n, 4);
    let mut h1 = ScalarJet::new(n, 4);
    problem.terminal_cost.eval(states.at(0, grid.steps(), nodes), &mut h0);
    for p in 1..probes {
        problem.terminal_cost.eval(states.at(p, grid.steps(), nodes), &mut h1);
        for (a, b) in h0.dx.iter().flatten().zip(h1.dx.iter().flatten()) {
            if (a - b).abs() > 1e-12 * (1.0 + a.abs()) {
                return Ok(Some(format!("terminal derivatives differ between paths 0 and {p}")));
            }
        }
    }
    Ok(None)
}

/// Solves orders 1..=k with the deterministic solver when the base pair is
/// deterministic and with the regression solver otherwise.
pub fn solve_adjoint_auto(
    problem: &ControlProblem,
    policy: &ControlPolicy,
    paths: &PathEnsemble,
    k: usize,
    basis_degree: usize,
) -> Result<(AdjointSet, Option<RegressionDiagnostics>)> {
    match solve_adjoint_deterministic(problem, policy, paths, k) {
        Ok(set) => Ok((set, None)),
        Err(Error::StochasticCoefficients(_)) => {
            let basis = crate::regression::PolyBasis::new(problem.state_dim, basis_degree);
            let (set, diag) = solve_adjoint_regression(problem, policy, paths, k, &basis)?;
            Ok((set, Some(diag)))
        }
        Err(e) => Err(e),
    }
}

/// One row of an adjoint CSV export.
#[derive(Clone, Debug, Serialize)]
pub struct AdjointRow {
    pub t: f64,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}
