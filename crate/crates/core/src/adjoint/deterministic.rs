//! Backward tensor ODE for deterministic coefficients (q_k ≡ 0).

use nalgebra::DMatrix;

use super::terms::{inhomogeneous, linear_operators};
use super::{node_coefficients, stochastic_reason, AdjointRepr, AdjointSet, AdjointSolution, NodeCoefficients};
use crate::error::{Error, Result};
use crate::problem::{ControlPolicy, ControlProblem, PathEnsemble, PointJets, ScalarJet};
use crate::tensor::{ipow, MultilinearForm, TensorProcess};

/// Solves orders 1..=k along a deterministic base pair.
///
/// Each cell is integrated exactly for the endpoint-averaged coefficients:
/// with dp/ds = L̄p + ḡ in reversed time, p_i = exp(L̄Δt)p_{i+1} + ∫ exp(L̄s)ḡ ds,
/// computed as one exponential of the augmented matrix [L̄ ḡ; 0 0]Δt.
pub fn solve_adjoint_deterministic(problem: &ControlProblem, policy: &ControlPolicy, paths: &PathEnsemble, k: usize) -> Result<AdjointSet> {
    if !(1..=4).contains(&k) {
        return Err(Error::Usage(format!("adjoint order must be in 1..=4, got {k}")));
    }
    if let Some(reason) = stochastic_reason(problem, policy, paths)? {
        return Err(Error::StochasticCoefficients(reason));
    }
    let states = paths.states()?;
    let grid = paths.grid();
    let steps = grid.steps();
    let nodes = steps + 1;
    let n = problem.state_dim;
    let dt = grid.dt();
    let mut jets = PointJets::new(n, 4);
    let coeffs: Vec<NodeCoefficients> = (0..nodes).map(|i| node_coefficients(problem, policy, &grid, i, states.at(0, i, nodes), &mut jets)).collect();
    let mut h = ScalarJet::new(n, 4);
    problem.terminal_cost.eval(states.at(0, steps, nodes), &mut h);

    let mut solutions: Vec<AdjointSolution> = Vec::with_capacity(k);
    for order in 1..=k {
        let d = ipow(n, order);
        let mut p = TensorProcess::deterministic(grid, order, n);
        let q = TensorProcess::deterministic(grid, order, n);
        for (o, v) in p.at_mut(0, steps).iter_mut().zip(&h.dx[order - 1]) {
            *o = -v;
        }
        let mut ops = Vec::with_capacity(nodes);
        for (i, c) in coeffs.iter().enumerate() {
            let lower: Vec<(MultilinearForm, MultilinearForm)> = solutions.iter().map(|s| (s.p_at(i, &[]), s.q_at(i, &[]))).collect();
            let (l, _) = linear_operators(order, c)?;
            let g = inhomogeneous(order, &lower, c)?;
            ops.push((l, g.into_coeffs()));
        }
        let mut aug = DMatrix::<f64>::zeros(d + 1, d + 1);
        for i in (0..steps).rev() {
            let (l0, g0) = &ops[i];
            let (l1, g1) = &ops[i + 1];
            for r in 0..d {
                for c in 0..d {
                    aug[(r, c)] = 0.5 * (l0[r * d + c] + l1[r * d + c]) * dt;
                }
                aug[(r, d)] = 0.5 * (g0[r] + g1[r]) * dt;
            }
            let e = aug.clone().exp();
            let next = p.at(0, i + 1).to_vec();
            let cur = p.at_mut(0, i);
            for r in 0..d {
                cur[r] = e[(r, d)] + (0..d).map(|c| e[(r, c)] * next[c]).sum::<f64>();
            }
        }
        solutions.push(AdjointSolution { order, grid, dim: n, repr: AdjointRepr::Deterministic { p, q } });
    }
    Ok(AdjointSet { solutions })
}
