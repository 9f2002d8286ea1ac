//! Remainder of the second-order expansion
//! ΔJ = −E∫[ℋ + ⟨𝕊, γ⟩ + ½𝕋(y₁, y₁)]χ_{E_ε} dt + o(ε²)
//! across an ε ladder, with pathwise pairing.

use std::io::Write;

use serde::Serialize;

use super::orders::csv_err;
use super::{map_paths, prepared_needle, spike_ladder, Needle, PathRun};
use crate::adjoint::duality::martingale_integrand;
use crate::adjoint::AdjointSet;
use crate::conditions::functionals::{AdjointPoint, Functionals, PairJets};
use crate::error::{Error, Result};
use crate::problem::{ControlPolicy, ControlProblem, PathEnsemble};
use crate::stats::mean_se;

#[derive(Clone, Debug, Serialize)]
pub struct TaylorRow {
    pub eps: f64,
    /// J(u^ε) − J(ū) from paired paths, without control variate.
    pub delta_j: f64,
    pub delta_j_se: f64,
    /// −E∫[ℋ + ⟨𝕊,γ⟩ + ½𝕋(y₁,y₁)]χ dt.
    pub predicted: f64,
    /// Mean of the paired remainder sample and its standard error.
    pub remainder: f64,
    pub remainder_se: f64,
    /// |remainder|/ε² and se/ε².
    pub ratio: f64,
    pub ratio_se: f64,
    pub paths_used: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct TaylorReport {
    pub v: Vec<f64>,
    pub tau: f64,
    pub band: f64,
    pub rows: Vec<TaylorRow>,
    /// First rung whose ratio is within `band` standard errors of zero.
    pub floor_rung: Option<usize>,
    /// No rung exceeds its predecessor by more than `band` of its own standard errors.
    pub passed: bool,
}

impl TaylorReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["eps", "delta_j", "delta_j_se", "predicted", "remainder", "remainder_se", "ratio", "ratio_se", "paths"]).map_err(csv_err)?;
        for r in &self.rows {
            wr.write_record([
                format!("{:e}", r.eps),
                format!("{:e}", r.delta_j),
                format!("{:e}", r.delta_j_se),
                format!("{:e}", r.predicted),
                format!("{:e}", r.remainder),
                format!("{:e}", r.remainder_se),
                format!("{:e}", r.ratio),
                format!("{:e}", r.ratio_se),
                r.paths_used.to_string(),
            ])
            .map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Applies the ladder rule: each ratio may exceed its predecessor by at most
/// `band` of its own standard error.
pub fn ladder_rule(ratios: &[(f64, f64)], band: f64) -> (bool, Option<usize>) {
    let ok = ratios.windows(2).all(|w| w[1].0 <= w[0].0 + band * w[1].1);
    let floor = ratios.iter().position(|(r, s)| *r <= band * s);
    (ok, floor)
}

/// Adjoint values and functionals along the reference path, for nodes
/// shared by every path with the same base pair.
pub(crate) struct NodeCache {
    pub adj: Vec<Option<AdjointPoint>>,
    pub fun: Vec<Option<Functionals>>,
}

pub(crate) fn functionals_at(
    problem: &ControlProblem,
    needle: &Needle,
    run: &PathRun,
    i: usize,
    adj: &AdjointPoint,
    jets: &mut PairJets,
) -> Result<Functionals> {
    let (n, m) = (problem.state_dim, problem.control_dim);
    let cell = i.min(needle.grid.steps() - 1);
    jets.eval(problem, needle.grid.node(i), &run.xbar[i * n..(i + 1) * n], &run.ubar[cell * m..(cell + 1) * m], &needle.spike.value);
    Functionals::eval(jets, adj)
}

impl NodeCache {
    pub(crate) fn build(problem: &ControlProblem, needle: &Needle, adjoints: &AdjointSet, with_functionals: bool) -> Result<Self> {
        let nodes = needle.grid.steps() + 1;
        let n = problem.state_dim;
        let mut adj = vec![None; nodes];
        let mut fun = vec![None; nodes];
        let Some(r) = needle.reference() else { return Ok(Self { adj, fun }) };
        if r.aborted {
            return Ok(Self { adj, fun });
        }
        let mut jets = PairJets::new(n);
        for i in needle.spike.start..nodes {
            let a = AdjointPoint::from_set(adjoints, i, &r.xbar[i * n..(i + 1) * n]);
            if with_functionals && i < nodes - 1 && needle.spike.contains(i) {
                fun[i] = Some(functionals_at(problem, needle, r, i, &a, &mut jets)?);
            }
            adj[i] = Some(a);
        }
        Ok(Self { adj, fun })
    }
}

/// Paired remainder sample of one path: (ΔJ sample, expansion integral, control variate).
fn taylor_sample(problem: &ControlProblem, needle: &Needle, adjoints: &AdjointSet, cache: &NodeCache, run: &PathRun, dw: &[f64]) -> Result<(f64, f64, f64)> {
    let n = problem.state_dim;
    let grid = needle.grid;
    let dt = grid.dt();
    let steps = grid.steps();
    let mut jets = PairJets::new(n);
    let mut local = AdjointPoint::zeros(n, adjoints.max_order());
    let mut expansion = 0.0;
    let mut cv = 0.0;
    let mut x = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut g = x.clone();
    for i in needle.spike.start..steps {
        let r = i * n..(i + 1) * n;
        // X = ξ, η, γ, y₁ for k = 1..4 and the matching diffusion sums
        for k in 0..4 {
            let top = 4 - k;
            for c in 0..n {
                x[k][c] = (0..top).map(|j| run.y[j][r.start + c]).sum();
                g[k][c] = (0..top).map(|j| run.ydiff[j][r.start + c]).sum();
            }
        }
        let a = match (&cache.adj[i], run.shared[i]) {
            (Some(a), true) => a,
            _ => {
                local.fill(adjoints, i, &run.xbar[r.clone()]);
                &local
            }
        };
        if needle.spike.contains(i) {
            let owned;
            let f = match (&cache.fun[i], run.shared[i]) {
                (Some(f), true) => f,
                _ => {
                    owned = functionals_at(problem, needle, run, i, a, &mut jets)?;
                    &owned
                }
            };
            // trapezoid in the variational processes over the cell
            let r1 = (i + 1) * n..(i + 2) * n;
            let gamma1: Vec<f64> = (0..n).map(|c| run.y[0][r1.start + c] + run.y[1][r1.start + c]).collect();
            let (y0, y1) = (&run.y[0][r.clone()], &run.y[0][r1]);
            let left = f.s_dot(&x[2]) + 0.5 * f.t_form(y0, y0);
            let right = f.s_dot(&gamma1) + 0.5 * f.t_form(y1, y1);
            expansion += (f.h + 0.5 * (left + right)) * dt;
        }
        let mut fact = 1.0;
        for k in 1..=adjoints.max_order().min(4) {
            fact *= k as f64;
            cv += martingale_integrand(&a.p[k - 1], &a.q[k - 1], n, k, &x[k - 1], &g[k - 1]) * dw[i] / fact;
        }
    }
    Ok((run.cost_eps - run.cost_bar, expansion, cv))
}

/// Remainder ratios R(ε)/ε² over the ε ladder for spikes of value `v` at τ.
/// One ensemble serves every rung; the martingale parts of d⟨p_k, X^k⟩ are
/// added as a zero-mean control variate.
#[allow(clippy::too_many_arguments)]
pub fn taylor_check(
    problem: &ControlProblem,
    policy: &ControlPolicy,
    v: &[f64],
    tau: f64,
    eps_ladder: &[f64],
    adjoints: &AdjointSet,
    paths: &PathEnsemble,
    band: f64,
) -> Result<TaylorReport> {
    if adjoints.grid() != paths.grid() {
        return Err(Error::GridMismatch("adjoints and ensemble use different grids".into()));
    }
    if adjoints.max_order() < 4 {
        return Err(Error::Usage(format!("the Taylor check needs adjoints up to order 4, have {}", adjoints.max_order())));
    }
    let grid = paths.grid();
    let mut rows = Vec::new();
    for spike in spike_ladder(&grid, tau, eps_ladder, v)? {
        let eps = spike.eps(&grid);
        let needle = prepared_needle(problem, policy, paths, spike, 2)?;
        let cache = NodeCache::build(problem, &needle, adjoints, true)?;
        let samples: Vec<Result<(f64, f64, f64)>> =
            map_paths(&needle, paths, |_, run, dw| taylor_sample(problem, &needle, adjoints, &cache, run, dw))?.into_iter().flatten().collect();
        let samples: Vec<(f64, f64, f64)> = samples.into_iter().collect::<Result<_>>()?;
        let dj: Vec<f64> = samples.iter().map(|s| s.0).collect();
        let ex: Vec<f64> = samples.iter().map(|s| s.1).collect();
        let d: Vec<f64> = samples.iter().map(|s| s.0 + s.1 + s.2).collect();
        let (delta_j, delta_j_se) = mean_se(&dj);
        let (e, _) = mean_se(&ex);
        let (remainder, remainder_se) = mean_se(&d);
        let e2 = eps * eps;
        rows.push(TaylorRow {
            eps,
            delta_j,
            delta_j_se,
            predicted: -e,
            remainder,
            remainder_se,
            ratio: if eps > 0.0 { remainder.abs() / e2 } else { 0.0 },
            ratio_se: if eps > 0.0 { remainder_se / e2 } else { 0.0 },
            paths_used: samples.len(),
        });
    }
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.ratio, r.ratio_se)).collect();
    let (passed, floor_rung) = ladder_rule(&pts, band);
    Ok(TaylorReport { v: v.to_vec(), tau, band, rows, floor_rung, passed })
}
