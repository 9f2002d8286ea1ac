//! The four variational equations along needle-perturbed paths, their order
//! fits in ε and the second-order Taylor expansion of the cost.

pub mod alg;
pub mod engine;
pub mod orders;
pub mod taylor;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::problem::{ControlPolicy, ControlProblem, PathEnsemble, Spike, TimeGrid};

pub use engine::{Needle, NodeData, PathRun};
pub use orders::{fit_orders, OrderFitReport, OrderRow, OrderTolerances, OrderVerdict};
pub use taylor::{taylor_check, TaylorReport, TaylorRow};

/// Runs every path of the ensemble under one needle and maps each run
/// through `f`, in path order. Aborted paths give None.
pub fn map_paths<T, F>(needle: &Needle, paths: &PathEnsemble, f: F) -> Result<Vec<Option<T>>>
where
    T: Send,
    F: Fn(usize, &PathRun, &[f64]) -> T + Sync + Send,
{
    if paths.grid() != needle.grid {
        return Err(Error::GridMismatch("needle and ensemble use different grids".into()));
    }
    let out: Vec<Result<Option<T>>> = (0..paths.path_count())
        .into_par_iter()
        .map_init(
            || needle.scratch(),
            |sc, p| {
                paths.fill_increments(p, &mut sc.dw);
                needle.run_into(sc)?;
                Ok((!sc.run.aborted).then(|| f(p, &sc.run, &sc.dw)))
            },
        )
        .collect();
    out.into_iter().collect()
}

/// A needle prepared on path 0 of the ensemble.
pub fn prepared_needle<'a>(problem: &'a ControlProblem, policy: &'a ControlPolicy, paths: &PathEnsemble, spike: Spike, order: usize) -> Result<Needle<'a>> {
    let mut needle = Needle::new(problem, policy, paths.grid(), spike, order)?;
    needle.prepare(&paths.path_increments(0))?;
    Ok(needle)
}

/// Spikes [τ, τ+ε) for each ε of a ladder, sorted by decreasing ε.
pub fn spike_ladder(grid: &TimeGrid, tau: f64, eps: &[f64], v: &[f64]) -> Result<Vec<Spike>> {
    let mut eps = eps.to_vec();
    eps.sort_by(|a, b| b.total_cmp(a));
    eps.dedup();
    eps.iter().map(|e| Spike::from_times(grid, tau, *e, v.to_vec())).collect()
}

/// y₁…y_k, x̄ and x^ε on every path, stored path-major as M×(N+1)×n.
#[derive(Clone, Debug)]
pub struct VariationalSolutions {
    pub grid: TimeGrid,
    pub dim: usize,
    pub order: usize,
    pub spike: Spike,
    pub paths: usize,
    pub xbar: Vec<f64>,
    pub xeps: Vec<f64>,
    pub y: [Vec<f64>; 4],
    pub aborted: Vec<bool>,
}

impl VariationalSolutions {
    fn at<'s>(&self, series: &'s [f64], p: usize, i: usize) -> &'s [f64] {
        let o = (p * (self.grid.steps() + 1) + i) * self.dim;
        &series[o..o + self.dim]
    }

    /// y_k at (path, node), k = 1..4.
    pub fn y(&self, k: usize, p: usize, i: usize) -> &[f64] {
        self.at(&self.y[k - 1], p, i)
    }

    /// δx = x^ε − x̄.
    pub fn delta_x(&self, p: usize, i: usize) -> Vec<f64> {
        self.at(&self.xeps, p, i).iter().zip(self.at(&self.xbar, p, i)).map(|(a, b)| a - b).collect()
    }

    /// y₁ + … + y_k.
    pub fn partial_sum(&self, k: usize, p: usize, i: usize) -> Vec<f64> {
        let mut s = vec![0.0; self.dim];
        for j in 1..=k {
            s.iter_mut().zip(self.y(j, p, i)).for_each(|(a, b)| *a += b);
        }
        s
    }

    pub fn xi(&self, p: usize, i: usize) -> Vec<f64> {
        self.partial_sum(4, p, i)
    }

    pub fn eta(&self, p: usize, i: usize) -> Vec<f64> {
        self.partial_sum(3, p, i)
    }

    pub fn gamma(&self, p: usize, i: usize) -> Vec<f64> {
        self.partial_sum(2, p, i)
    }

    /// r_k = δx − (y₁ + … + y_k).
    pub fn residual(&self, k: usize, p: usize, i: usize) -> Vec<f64> {
        self.delta_x(p, i).iter().zip(self.partial_sum(k, p, i)).map(|(a, b)| a - b).collect()
    }
}

/// Solves y₁…y_k for one needle on every path of the ensemble.
pub fn solve_variational(problem: &ControlProblem, policy: &ControlPolicy, spike: &Spike, paths: &PathEnsemble, k: usize) -> Result<VariationalSolutions> {
    let needle = prepared_needle(problem, policy, paths, spike.clone(), k)?;
    let runs = map_paths(&needle, paths, |_, run, _| (run.xbar.clone(), run.xeps.clone(), run.y.clone()))?;
    let grid = paths.grid();
    let len = (grid.steps() + 1) * problem.state_dim;
    let m = paths.path_count();
    let mut out = VariationalSolutions {
        grid,
        dim: problem.state_dim,
        order: k,
        spike: spike.clone(),
        paths: m,
        xbar: vec![0.0; m * len],
        xeps: vec![0.0; m * len],
        y: std::array::from_fn(|_| vec![0.0; m * len]),
        aborted: vec![false; m],
    };
    for (p, r) in runs.into_iter().enumerate() {
        match r {
            Some((xb, xe, y)) => {
                out.xbar[p * len..(p + 1) * len].copy_from_slice(&xb);
                out.xeps[p * len..(p + 1) * len].copy_from_slice(&xe);
                for j in 0..4 {
                    out.y[j][p * len..(p + 1) * len].copy_from_slice(&y[j]);
                }
            }
            None => out.aborted[p] = true,
        }
    }
    Ok(out)
}
