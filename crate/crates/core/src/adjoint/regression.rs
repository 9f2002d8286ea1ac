//! Least-squares Monte Carlo backward induction for the adjoint BSDEs.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use super::terms::{inhomogeneous, linear_operators};
use super::{node_coefficients, AdjointRepr, AdjointSet, AdjointSolution, NodeCoefficients, NodeFit};
use crate::error::{Error, Result};
use crate::problem::{ControlPolicy, ControlProblem, PathEnsemble, PointJets, ScalarJet};
use crate::regression::{Design, PolyBasis};
use crate::tensor::{ipow, MultilinearForm};

/// Per-order, per-node in-sample diagnostics.
#[derive(Clone, Debug, Default, Serialize)]
pub struct RegressionDiagnostics {
    pub rows: Vec<DiagnosticRow>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DiagnosticRow {
    pub order: usize,
    pub node: usize,
    pub columns: usize,
    pub condition: f64,
    /// Root mean residual variance of the p regression.
    pub p_residual: f64,
    pub q_residual: f64,
}

/// Linear operators and inhomogeneous term of G_k at one node, either shared
/// by every path or one per path.
enum NodeOps {
    Shared { l: Vec<f64>, m: Vec<f64>, g: Vec<f64> },
    PerPath(Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>),
}

impl NodeOps {
    fn get(&self, p: usize) -> (&[f64], &[f64], &[f64]) {
        match self {
            NodeOps::Shared { l, m, g } => (l, m, g),
            NodeOps::PerPath(v) => (&v[p].0, &v[p].1, &v[p].2),
        }
    }
}

fn matvec(a: &[f64], x: &[f64], d: usize, out: &mut [f64]) {
    for r in 0..d {
        out[r] = (0..d).map(|c| a[r * d + c] * x[c]).sum();
    }
}

/// (I − ½Δt L)⁻¹ as a row-major matrix.
fn implicit_inverse(l: &[f64], d: usize, dt: f64) -> Result<Vec<f64>> {
    let a = DMatrix::from_fn(d, d, |r, c| if r == c { 1.0 } else { 0.0 } - 0.5 * dt * l[r * d + c]);
    let inv = a.try_inverse().ok_or_else(|| Error::Usage("implicit step matrix is singular; refine the grid".into()))?;
    Ok((0..d * d).map(|k| inv[(k / d, k % d)]).collect())
}

/// Solves orders 1..=k. Each backward step uses
///   q_i = E_i[(Y − E_i Y)ΔW_i]/Δt,
///   p_i = (I − ½ΔtL_i)⁻¹ E_i[Y + ½ΔtL_{i+1}Y + Δt(M_i q_i + g_i)],
/// with Y = p(t_{i+1}) and conditional expectations projected on the basis
/// in x̄(t_i). The trapezoidal treatment of the linear p-part keeps the
/// scheme second order in Δt for constant coefficients.
pub fn solve_adjoint_regression(
    problem: &ControlProblem,
    policy: &ControlPolicy,
    paths: &PathEnsemble,
    k: usize,
    basis: &PolyBasis,
) -> Result<(AdjointSet, RegressionDiagnostics)> {
    if !(1..=4).contains(&k) {
        return Err(Error::Usage(format!("adjoint order must be in 1..=4, got {k}")));
    }
    let states = paths.states()?;
    let grid = paths.grid();
    let steps = grid.steps();
    let nodes = steps + 1;
    let n = problem.state_dim;
    let m = paths.path_count();
    let dt = grid.dt();
    let dw: Vec<Vec<f64>> = (0..m).into_par_iter().map(|p| paths.path_increments(p)).collect();
    let xs_at = |i: usize| -> Vec<f64> {
        let mut v = Vec::with_capacity(m * n);
        for p in 0..m {
            v.extend_from_slice(states.at(p, i, nodes));
        }
        v
    };
    let shared_node = |xs: &[f64]| xs.chunks(n).all(|c| c == &xs[..n]);

    let mut solutions: Vec<AdjointSolution> = Vec::with_capacity(k);
    let mut diagnostics = RegressionDiagnostics::default();
    for order in 1..=k {
        let d = ipow(n, order);
        let ops_at = |i: usize, xs: &[f64], solutions: &[AdjointSolution]| -> Result<NodeOps> {
            let build = |x: &[f64]| -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
                let mut jets = PointJets::new(n, 4);
                let c: NodeCoefficients = node_coefficients(problem, policy, &grid, i, x, &mut jets);
                let lower: Vec<(MultilinearForm, MultilinearForm)> = solutions.iter().map(|s| (s.p_at(i, x), s.q_at(i, x))).collect();
                let (l, mm) = linear_operators(order, &c)?;
                Ok((l, mm, inhomogeneous(order, &lower, &c)?.into_coeffs()))
            };
            if shared_node(xs) {
                let (l, m, g) = build(&xs[..n])?;
                Ok(NodeOps::Shared { l, m, g })
            } else {
                let v: Result<Vec<_>> = xs.par_chunks(n).map(build).collect();
                Ok(NodeOps::PerPath(v?))
            }
        };

        // Y = p(t_N) exactly.
        let xs_n = xs_at(steps);
        let mut y: Vec<f64> = vec![0.0; m * d];
        let mut h = ScalarJet::new(n, order);
        for p in 0..m {
            problem.terminal_cost.eval(&xs_n[p * n..(p + 1) * n], &mut h);
            for (o, v) in y[p * d..(p + 1) * d].iter_mut().zip(&h.dx[order - 1]) {
                *o = -v;
            }
        }
        let mut ops_next = ops_at(steps, &xs_n, &solutions)?;
        let mut fits: Vec<Option<NodeFit>> = (0..steps).map(|_| None).collect();

        for i in (0..steps).rev() {
            let xs = xs_at(i);
            let design = Design::build(basis, &xs, i)?;
            let ops = ops_at(i, &xs, &solutions)?;
            let mut p_coef = Vec::with_capacity(d);
            let mut q_coef = Vec::with_capacity(d);
            let mut p_var = Vec::with_capacity(d);
            let mut q_var = Vec::with_capacity(d);
            let mut q_fit = vec![0.0; m * d];
            let mut z = vec![0.0; m * d];
            let mut tmp = vec![0.0; d];
            for p in 0..m {
                let (l1, _, _) = ops_next.get(p);
                matvec(l1, &y[p * d..(p + 1) * d], d, &mut tmp);
                for r in 0..d {
                    z[p * d + r] = y[p * d + r] + 0.5 * dt * tmp[r];
                }
            }
            let mut z_fit = vec![0.0; m * d];
            for r in 0..d {
                let col: Vec<f64> = (0..m).map(|p| y[p * d + r]).collect();
                let (cy, _) = design.fit(&col);
                let target: Vec<f64> = (0..m).map(|p| (col[p] - design.fitted(&cy, p)) * dw[p][i] / dt).collect();
                let (cq, vq) = design.fit(&target);
                for p in 0..m {
                    q_fit[p * d + r] = design.fitted(&cq, p);
                }
                q_coef.push(cq);
                q_var.push(vq);
                let zc: Vec<f64> = (0..m).map(|p| z[p * d + r]).collect();
                let (cz, vz) = design.fit(&zc);
                for p in 0..m {
                    z_fit[p * d + r] = design.fitted(&cz, p);
                }
                p_var.push(vz);
            }
            // explicit q- and g-terms, implicit half of the linear p-term
            let shared_inv = match &ops {
                NodeOps::Shared { l, .. } => Some(implicit_inverse(l, d, dt)?),
                NodeOps::PerPath(_) => None,
            };
            let mut pre = vec![0.0; d];
            for p in 0..m {
                let (l0, m0, g0) = ops.get(p);
                matvec(m0, &q_fit[p * d..(p + 1) * d], d, &mut tmp);
                for r in 0..d {
                    pre[r] = z_fit[p * d + r] + dt * (tmp[r] + g0[r]);
                }
                let inv = match &shared_inv {
                    Some(inv) => inv.clone(),
                    None => implicit_inverse(l0, d, dt)?,
                };
                matvec(&inv, &pre, d, &mut y[p * d..(p + 1) * d]);
            }
            let mut p_res = 0.0;
            for r in 0..d {
                let col: Vec<f64> = (0..m).map(|p| y[p * d + r]).collect();
                let (cp, vp) = design.fit(&col);
                for p in 0..m {
                    y[p * d + r] = design.fitted(&cp, p);
                }
                p_res += vp + p_var[r];
                p_coef.push(cp);
            }
            diagnostics.rows.push(DiagnosticRow {
                order,
                node: i,
                columns: design.columns(),
                condition: design.condition,
                p_residual: (p_res / d as f64).sqrt(),
                q_residual: (q_var.iter().sum::<f64>() / d as f64).sqrt(),
            });
            fits[i] = Some(NodeFit { features: design.features.clone(), gram_inv: design.gram_inv.clone(), paths: m, p_coef, q_coef, p_var, q_var });
            ops_next = ops;
        }
        let nodes_fit: Vec<NodeFit> = fits.into_iter().map(|f| f.expect("every node fitted")).collect();
        solutions.push(AdjointSolution { order, grid, dim: n, repr: AdjointRepr::Regression { nodes: nodes_fit, terminal: problem.terminal_cost.clone() } });
    }
    diagnostics.rows.sort_by_key(|r| (r.order, r.node));
    Ok((AdjointSet { solutions }, diagnostics))
}
