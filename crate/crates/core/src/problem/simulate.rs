use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::stats::mean_se;

use super::{ControlPolicy, ControlProblem, PathEnsemble, ScalarJet, States, TimeGrid, VectorJet};

/// Paths whose state leaves this ball are aborted.
pub const DIVERGENCE_BOUND: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CostEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub paths_used: usize,
    pub aborted: usize,
}

/// Outcome of one Euler–Maruyama path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathOutcome {
    pub aborted: bool,
    /// Σ f Δt + h(x_N); meaningless when aborted.
    pub cost: f64,
}

pub(crate) struct SimScratch {
    b: VectorJet,
    s: VectorJet,
    f: ScalarJet,
    u: Vec<f64>,
}

impl SimScratch {
    pub(crate) fn new(n: usize, m: usize) -> Self {
        Self { b: VectorJet::new(n, 0), s: VectorJet::new(n, 0), f: ScalarJet::new(n, 0), u: vec![0.0; m] }
    }
}

/// Simulates one path into `xs` ((N+1)·n entries) and optionally records the
/// controls into `us` (N·m entries). Aborted paths are frozen at the last
/// state inside the divergence bound.
pub fn simulate_path(
    problem: &ControlProblem,
    policy: &ControlPolicy,
    grid: &TimeGrid,
    dw: &[f64],
    path: usize,
    xs: &mut [f64],
    us: Option<&mut [f64]>,
) -> Result<PathOutcome> {
    let mut sc = SimScratch::new(problem.state_dim, problem.control_dim);
    simulate_path_with(problem, policy, grid, dw, path, xs, us, &mut sc)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn simulate_path_with(
    problem: &ControlProblem,
    policy: &ControlPolicy,
    grid: &TimeGrid,
    dw: &[f64],
    path: usize,
    xs: &mut [f64],
    mut us: Option<&mut [f64]>,
    sc: &mut SimScratch,
) -> Result<PathOutcome> {
    let n = problem.state_dim;
    let m = problem.control_dim;
    let steps = grid.steps();
    let dt = grid.dt();
    xs[..n].copy_from_slice(&problem.x0);
    let mut cost = 0.0;
    for i in 0..steps {
        let t = grid.node(i);
        let (head, tail) = xs.split_at_mut((i + 1) * n);
        let x = &head[i * n..];
        policy.control(i, t, x, &mut sc.u);
        if let Some(us) = us.as_deref_mut() {
            us[i * m..(i + 1) * m].copy_from_slice(&sc.u);
        }
        problem.drift.eval(t, x, &sc.u, &mut sc.b);
        problem.diffusion.eval(t, x, &sc.u, &mut sc.s);
        problem.running_cost.eval(t, x, &sc.u, &mut sc.f);
        cost += sc.f.value * dt;
        let next = &mut tail[..n];
        let mut escaped = false;
        for k in 0..n {
            let v = x[k] + sc.b.value[k] * dt + sc.s.value[k] * dw[i];
            if !v.is_finite() {
                return Err(Error::SimulationDiverged { path, step: i });
            }
            escaped |= v.abs() > DIVERGENCE_BOUND;
            next[k] = v;
        }
        if escaped {
            let last = head[i * n..].to_vec();
            for j in i + 1..=steps {
                xs[j * n..(j + 1) * n].copy_from_slice(&last);
            }
            if let Some(us) = us.as_deref_mut() {
                for j in i + 1..steps {
                    us[j * m..(j + 1) * m].copy_from_slice(&sc.u);
                }
            }
            return Ok(PathOutcome { aborted: true, cost: f64::NAN });
        }
    }
    problem.terminal_cost.eval(&xs[steps * n..], &mut sc.f);
    cost += sc.f.value;
    Ok(PathOutcome { aborted: false, cost })
}

/// Euler–Maruyama trajectories for every path of the ensemble.
pub fn simulate_state(problem: &ControlProblem, policy: &ControlPolicy, paths: &PathEnsemble) -> Result<PathEnsemble> {
    let grid = paths.grid();
    policy.validate(problem, &grid)?;
    let n = problem.state_dim;
    let nodes = grid.steps() + 1;
    let mut data = vec![0.0; paths.path_count() * nodes * n];
    let outcomes: Vec<Result<PathOutcome>> = data
        .par_chunks_mut(nodes * n)
        .enumerate()
        .map_init(
            || (SimScratch::new(n, problem.control_dim), vec![0.0; grid.steps()]),
            |(sc, dw), (p, xs)| {
                paths.fill_increments(p, dw);
                simulate_path_with(problem, policy, &grid, dw, p, xs, None, sc)
            },
        )
        .collect();
    let mut aborted = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        aborted.push(o?.aborted);
    }
    let mut out = paths.clone();
    out.states = Some(States { dim: n, data, aborted });
    Ok(out)
}

/// J ≈ mean over non-aborted paths of Σ f(t_i, x_i, u_i)Δt + h(x_N).
pub fn evaluate_cost(problem: &ControlProblem, policy: &ControlPolicy, paths: &PathEnsemble) -> Result<CostEstimate> {
    let states = paths.states()?;
    let grid = paths.grid();
    let n = problem.state_dim;
    let nodes = grid.steps() + 1;
    let dt = grid.dt();
    let costs: Vec<Option<f64>> = (0..paths.path_count())
        .into_par_iter()
        .map_init(
            || (ScalarJet::new(n, 0), vec![0.0; problem.control_dim]),
            |(f, u), p| {
                if states.aborted[p] {
                    return None;
                }
                let xs = states.path(p, nodes);
                let mut c = 0.0;
                for i in 0..grid.steps() {
                    let t = grid.node(i);
                    let x = &xs[i * n..(i + 1) * n];
                    policy.control(i, t, x, u);
                    problem.running_cost.eval(t, x, u, f);
                    c += f.value * dt;
                }
                problem.terminal_cost.eval(&xs[grid.steps() * n..], f);
                Some(c + f.value)
            },
        )
        .collect();
    Ok(summarize(&costs))
}

fn summarize(values: &[Option<f64>]) -> CostEstimate {
    let used: Vec<f64> = values.iter().flatten().copied().collect();
    let (estimate, std_error) = mean_se(&used);
    CostEstimate { estimate, std_error, paths_used: used.len(), aborted: values.len() - used.len() }
}

/// J(uᵋ) − J(ū) from pathwise-paired simulations on one ensemble.
pub fn cost_difference_crn(problem: &ControlProblem, base: &ControlPolicy, perturbed: &ControlPolicy, paths: &PathEnsemble) -> Result<CostEstimate> {
    let grid = paths.grid();
    base.validate(problem, &grid)?;
    perturbed.validate(problem, &grid)?;
    let n = problem.state_dim;
    let nodes = grid.steps() + 1;
    let diffs: Vec<Result<Option<f64>>> = (0..paths.path_count())
        .into_par_iter()
        .map_init(
            || (SimScratch::new(n, problem.control_dim), vec![0.0; grid.steps()], vec![0.0; nodes * n]),
            |(sc, dw, xs), p| {
                paths.fill_increments(p, dw);
                let a = simulate_path_with(problem, base, &grid, dw, p, xs, None, sc)?;
                let b = simulate_path_with(problem, perturbed, &grid, dw, p, xs, None, sc)?;
                Ok((!a.aborted && !b.aborted).then_some(b.cost - a.cost))
            },
        )
        .collect();
    let diffs: Result<Vec<Option<f64>>> = diffs.into_iter().collect();
    Ok(summarize(&diffs?))
}
