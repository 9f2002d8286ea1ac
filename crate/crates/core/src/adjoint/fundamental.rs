//! Φ solving dΦ = b_x Φ dt + σ_x Φ dW, Φ(0) = I, with Φ⁻¹ by direct inversion.

use nalgebra::DMatrix;

use super::base_control_at;
use crate::error::{Error, Result};
use crate::problem::{ControlPolicy, ControlProblem, PathEnsemble, TimeGrid, VectorJet};

/// Per-path, per-node n×n matrices (row-major).
#[derive(Clone, Debug)]
pub struct FundamentalSolution {
    pub grid: TimeGrid,
    pub dim: usize,
    pub paths: usize,
    phi: Vec<f64>,
    inv: Vec<f64>,
}

impl FundamentalSolution {
    fn offset(&self, path: usize, node: usize) -> usize {
        let nn = self.dim * self.dim;
        (path * (self.grid.steps() + 1) + node) * nn
    }

    pub fn phi(&self, path: usize, node: usize) -> &[f64] {
        let o = self.offset(path, node);
        &self.phi[o..o + self.dim * self.dim]
    }

    pub fn phi_inv(&self, path: usize, node: usize) -> &[f64] {
        let o = self.offset(path, node);
        &self.inv[o..o + self.dim * self.dim]
    }

    /// Φ(t_a)Φ(t_b)⁻¹ on one path.
    pub fn transport(&self, path: usize, a: usize, b: usize) -> Vec<f64> {
        let n = self.dim;
        let (p, q) = (self.phi(path, a), self.phi_inv(path, b));
        let mut out = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                out[r * n + c] = (0..n).map(|k| p[r * n + k] * q[k * n + c]).sum();
            }
        }
        out
    }

    /// max over paths and nodes of |ΦΦ⁻¹ − I|.
    pub fn inverse_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for p in 0..self.paths {
            for i in 0..=self.grid.steps() {
                let m = self.transport(p, i, i);
                for r in 0..self.dim {
                    for c in 0..self.dim {
                        let target = if r == c { 1.0 } else { 0.0 };
                        worst = worst.max((m[r * self.dim + c] - target).abs());
                    }
                }
            }
        }
        worst
    }
}

/// Forward Euler for Φ along each simulated base path.
pub fn fundamental_solution(problem: &ControlProblem, policy: &ControlPolicy, paths: &PathEnsemble) -> Result<FundamentalSolution> {
    let states = paths.states()?;
    let grid = paths.grid();
    let steps = grid.steps();
    let nodes = steps + 1;
    let n = problem.state_dim;
    let nn = n * n;
    let dt = grid.dt();
    let mut phi = vec![0.0; paths.path_count() * nodes * nn];
    let mut inv = vec![0.0; paths.path_count() * nodes * nn];
    let mut bj = VectorJet::new(n, 1);
    let mut sj = VectorJet::new(n, 1);
    let mut u = vec![0.0; problem.control_dim];
    let mut dw = vec![0.0; steps];
    for p in 0..paths.path_count() {
        paths.fill_increments(p, &mut dw);
        let base = p * nodes * nn;
        let mut cur = DMatrix::<f64>::identity(n, n);
        for i in 0..nodes {
            let o = base + i * nn;
            for k in 0..nn {
                phi[o + k] = cur[(k / n, k % n)];
            }
            let ci = cur.clone().try_inverse().ok_or(Error::SingularFundamental { path: p, node: i })?;
            if ci.iter().any(|v| !v.is_finite()) {
                return Err(Error::SingularFundamental { path: p, node: i });
            }
            for k in 0..nn {
                inv[o + k] = ci[(k / n, k % n)];
            }
            if i == steps {
                break;
            }
            let x = states.at(p, i, nodes);
            base_control_at(policy, &grid, i, x, &mut u);
            problem.drift.eval(grid.node(i), x, &u, &mut bj);
            problem.diffusion.eval(grid.node(i), x, &u, &mut sj);
            let a = DMatrix::from_row_slice(n, n, &bj.dx[0]);
            let s = DMatrix::from_row_slice(n, n, &sj.dx[0]);
            cur = &cur + (a * dt + s * dw[i]) * &cur;
        }
    }
    Ok(FundamentalSolution { grid, dim: n, paths: paths.path_count(), phi, inv })
}
