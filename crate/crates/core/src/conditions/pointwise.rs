//! Pointwise tests along the base pair: first order (ℋ ≤ 0), singularity
//! on the probe set, classical singularity and the second-order tests with
//! ∇𝕊 given or 𝕊 ≡ 0.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::functionals::{script_h, script_s, script_t, AdjointPoint, Functionals, PairJets};
use super::report::{CheckSettings, ConditionReport, TestRow, Verdict};
use crate::adjoint::AdjointSet;
use crate::error::{Error, Result};
use crate::problem::{ControlPolicy, ControlProblem, PathEnsemble, UPartials};
use crate::stats::mean_se;
use crate::tensor::eval_raw;

/// ∇𝕊(t, x̄(t), v) source for the pointwise second-order test.
#[derive(Clone)]
pub enum GradientS {
    /// Closed form (t, x, v) ↦ ∇𝕊.
    Closed(Arc<dyn Fn(f64, &[f64], &[f64]) -> Vec<f64> + Send + Sync>),
    /// Zero where 𝕊 does not vary across sampled paths, unknown elsewhere.
    Auto,
}

impl std::fmt::Debug for GradientS {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GradientS::Closed(_) => f.write_str("Closed"),
            GradientS::Auto => f.write_str("Auto"),
        }
    }
}

/// Evaluation context at one (node, v, path).
pub struct Point<'a> {
    pub node: usize,
    pub t: f64,
    pub path: usize,
    pub x: &'a [f64],
    pub ubar: &'a [f64],
    pub v: &'a [f64],
    pub jets: &'a PairJets,
    pub adj: &'a AdjointPoint,
}

/// The tested node indices (controls live on cells, so the last node is skipped).
pub fn tested_nodes(steps: usize, stride: usize) -> Vec<usize> {
    (0..steps).step_by(stride.max(1)).collect()
}

/// The first `count` non-aborted paths.
pub fn sampled_paths(paths: &PathEnsemble, count: usize) -> Result<Vec<usize>> {
    let states = paths.states()?;
    let out: Vec<usize> = (0..paths.path_count()).filter(|p| !states.aborted[*p]).take(count).collect();
    if out.is_empty() {
        return Err(Error::SimulationDiverged { path: 0, step: 0 });
    }
    Ok(out)
}

/// Maps `f` over every (node, v) and sampled path; returns, per (node, v) in
/// node-major order, the values over paths.
pub fn map_points<T, F>(
    problem: &ControlProblem,
    policy: &ControlPolicy,
    paths: &PathEnsemble,
    adjoints: &AdjointSet,
    settings: &CheckSettings,
    f: F,
) -> Result<Vec<(usize, usize, Vec<T>)>>
where
    T: Send,
    F: Fn(&Point) -> Result<T> + Sync + Send,
{
    if adjoints.grid() != paths.grid() {
        return Err(Error::GridMismatch("adjoints and ensemble use different grids".into()));
    }
    settings.validate()?;
    let grid = paths.grid();
    let states = paths.states()?;
    let nodes = grid.steps() + 1;
    let n = problem.state_dim;
    let sample = sampled_paths(paths, settings.sample_paths)?;
    let tested = tested_nodes(grid.steps(), settings.stride);
    let per_node: Vec<Result<Vec<(usize, usize, Vec<T>)>>> = tested
        .par_iter()
        .map(|&i| {
            let t = grid.node(i);
            let mut jets = PairJets::new(n);
            let mut adj = AdjointPoint::zeros(n, adjoints.max_order());
            let mut ubar = vec![0.0; problem.control_dim];
            let mut out = Vec::with_capacity(settings.probes.len());
            let mut vals: Vec<Vec<T>> = settings.probes.iter().map(|_| Vec::with_capacity(sample.len())).collect();
            for &p in &sample {
                let x = states.at(p, i, nodes);
                policy.base_control(i, t, x, &mut ubar);
                adj.fill(adjoints, i, x);
                for (vi, v) in settings.probes.iter().enumerate() {
                    jets.eval(problem, t, x, &ubar, v);
                    let pt = Point { node: i, t, path: p, x, ubar: &ubar, v, jets: &jets, adj: &adj };
                    vals[vi].push(f(&pt)?);
                }
            }
            for (vi, vs) in vals.into_iter().enumerate() {
                out.push((i, vi, vs));
            }
            Ok(out)
        })
        .collect();
    let mut out = Vec::new();
    for r in per_node {
        out.extend(r?);
    }
    Ok(out)
}

fn summarize(t: f64, node: usize, v: &[f64], terms: &[[f64; 3]], settings: &CheckSettings) -> TestRow {
    let col = |k: usize| -> Vec<f64> { terms.iter().map(|r| r[k]).collect() };
    let (term1, _) = mean_se(&col(0));
    let (term2, _) = mean_se(&col(1));
    let (term3, _) = mean_se(&col(2));
    let totals: Vec<f64> = terms.iter().map(|r| r[0] + r[1] + r[2]).collect();
    let (total, stderr) = mean_se(&totals);
    TestRow { node, t, v: v.to_vec(), term1, term2, term3, total, stderr, verdict: Verdict::classify(total, stderr, settings.k, settings.tol) }
}

/// ℋ(t, x̄(t), v) ≤ 0 at every tested node and probe.
pub fn first_order_check(
    problem: &ControlProblem,
    policy: &ControlPolicy,
    paths: &PathEnsemble,
    adjoints: &AdjointSet,
    settings: &CheckSettings,
) -> Result<ConditionReport> {
    let grid = paths.grid();
    let pts = map_points(problem, policy, paths, adjoints, settings, |p| Ok([script_h(p.jets, p.adj)?, 0.0, 0.0]))?;
    let rows = pts.iter().map(|(i, vi, vals)| summarize(grid.node(*i), *i, &settings.probes[*vi], vals, settings)).collect();
    Ok(ConditionReport::new("first_order", ["H", "-", "-"], settings.k, settings.tol, rows, Vec::new()))
}

#[derive(Clone, Debug, Serialize)]
pub struct SingularReport {
    pub singular: bool,
    /// max over (t, v) of |E ℋ|.
    pub max_abs_h: f64,
    /// Threshold actually applied: max(tol, k·se) at the worst point.
    pub threshold: f64,
    pub worst_t: f64,
    pub worst_v: Vec<f64>,
}

/// ℋ ≡ 0 on the probe set V (tolerance tol for exact values, k·se for sampled ones).
pub fn singular_check(
    problem: &ControlProblem,
    policy: &ControlPolicy,
    paths: &PathEnsemble,
    adjoints: &AdjointSet,
    settings: &CheckSettings,
) -> Result<SingularReport> {
    let grid = paths.grid();
    let pts = map_points(problem, policy, paths, adjoints, settings, |p| script_h(p.jets, p.adj))?;
    let mut out = SingularReport { singular: true, max_abs_h: 0.0, threshold: settings.tol, worst_t: 0.0, worst_v: Vec::new() };
    let mut worst_excess = f64::NEG_INFINITY;
    for (i, vi, vals) in &pts {
        let (m, se) = mean_se(vals);
        let thr = settings.tol.max(settings.k * se);
        if m.abs() > thr || !m.is_finite() {
            out.singular = false;
        }
        if m.abs() - thr > worst_excess {
            worst_excess = m.abs() - thr;
            out.threshold = thr;
            out.worst_t = grid.node(*i);
            out.worst_v = settings.probes[*vi].clone();
        }
        out.max_abs_h = out.max_abs_h.max(m.abs());
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct ClassicalSingularReport {
    pub classical: bool,
    /// max |ℍ_u|.
    pub max_hu: f64,
    /// max |ℍ_uu + σ_uᵀ p₂ σ_u|.
    pub max_huu: f64,
    pub tol: f64,
}

/// ℍ_u and ℍ_uu + σ_uᵀp₂σ_u at one point (m and m×m entries).
pub fn classical_terms(problem: &ControlProblem, t: f64, x: &[f64], u: &[f64], adj: &AdjointPoint) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, m) = (problem.state_dim, problem.control_dim);
    let cap = |what: &str| Error::Capability(format!("{what} does not supply u-derivatives"));
    let b: UPartials = problem.drift.u_partials(t, x, u).ok_or_else(|| cap("drift"))?;
    let s: UPartials = problem.diffusion.u_partials(t, x, u).ok_or_else(|| cap("diffusion"))?;
    let f: UPartials = problem.running_cost.u_partials(t, x, u).ok_or_else(|| cap("running cost"))?;
    let (p1, q1, p2) = (&adj.p[0], &adj.q[0], &adj.p[1]);
    let hu: Vec<f64> = (0..m).map(|c| (0..n).map(|a| p1[a] * b.du[a * m + c] + q1[a] * s.du[a * m + c]).sum::<f64>() - f.du[c]).collect();
    let mut huu = vec![0.0; m * m];
    for c in 0..m {
        for d in 0..m {
            let mut v = -f.duu[c * m + d];
            for a in 0..n {
                v += p1[a] * b.duu[(a * m + c) * m + d] + q1[a] * s.duu[(a * m + c) * m + d];
                for e in 0..n {
                    v += s.du[a * m + c] * p2[a * n + e] * s.du[e * m + d];
                }
            }
            huu[c * m + d] = v;
        }
    }
    Ok((hu, huu))
}

/// ℍ_u = 0 and ℍ_uu + σ_uᵀp₂σ_u = 0 along the base pair.
pub fn classical_singular_check(
    problem: &ControlProblem,
    policy: &ControlPolicy,
    paths: &PathEnsemble,
    adjoints: &AdjointSet,
    settings: &CheckSettings,
) -> Result<ClassicalSingularReport> {
    if adjoints.max_order() < 2 {
        return Err(Error::Usage("classical singularity needs adjoints up to order 2".into()));
    }
    let single = CheckSettings { probes: vec![vec![0.0; problem.control_dim]], ..settings.clone() };
    let pts = map_points(problem, policy, paths, adjoints, &single, |p| classical_terms(problem, p.t, p.x, p.ubar, p.adj))?;
    let (mut max_hu, mut max_huu) = (0.0f64, 0.0f64);
    for (_, _, vals) in &pts {
        for (hu, huu) in vals {
            max_hu = hu.iter().fold(max_hu, |a, v| a.max(v.abs()));
            max_huu = huu.iter().fold(max_huu, |a, v| a.max(v.abs()));
        }
    }
    let tol = settings.tol;
    Ok(ClassicalSingularReport { classical: max_hu <= tol && max_huu <= tol, max_hu, max_huu, tol })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// ⟨𝕊, δb⟩ + ⟨∇𝕊, δσ⟩ + ½⟨𝕋δσ, δσ⟩ ≤ 0 at every tested node, probe and path.
///
/// With `GradientS::Auto`, points where 𝕊 varies across sampled paths get an
/// inconclusive row; the integral test is the fallback there.
pub fn second_order_pointwise_test(
    problem: &ControlProblem,
    policy: &ControlPolicy,
    paths: &PathEnsemble,
    adjoints: &AdjointSet,
    settings: &CheckSettings,
    grad: &GradientS,
) -> Result<ConditionReport> {
    let n = problem.state_dim;
    let grid = paths.grid();
    // (terms with ∇𝕊 = 0 or closed form, 𝕊)
    let pts = map_points(problem, policy, paths, adjoints, settings, |p| {
        let f = Functionals::eval(p.jets, p.adj)?;
        let (db, ds) = (p.jets.db(0), p.jets.ds(0));
        let term2 = match grad {
            GradientS::Closed(g) => dot(&g(p.t, p.x, p.v), &ds),
            GradientS::Auto => 0.0,
        };
        Ok(([f.s_dot(&db), term2, 0.5 * eval_raw(&f.t, n, &[&ds, &ds])], f.s))
    })?;
    let mut notes = Vec::new();
    let mut stochastic = 0usize;
    let rows = pts
        .iter()
        .map(|(i, vi, vals)| {
            let terms: Vec<[f64; 3]> = vals.iter().map(|v| v.0).collect();
            let mut row = summarize(grid.node(*i), *i, &settings.probes[*vi], &terms, settings);
            if matches!(grad, GradientS::Auto) && !deterministic(vals.iter().map(|v| v.1.as_slice()), settings.tol) {
                row.term2 = f64::NAN;
                row.total = f64::NAN;
                row.verdict = Verdict::Inconclusive;
                stochastic += 1;
            }
            row
        })
        .collect();
    match grad {
        GradientS::Closed(_) => notes.push("∇𝕊 from a closed form".into()),
        GradientS::Auto if stochastic == 0 => notes.push("𝕊 is deterministic across sampled paths, so ∇𝕊 = 0".into()),
        GradientS::Auto => {
            notes.push(format!("𝕊 varies across paths at {stochastic} test points and no ∇𝕊 was supplied; those rows are inconclusive, run the integral test"))
        }
    }
    Ok(ConditionReport::new("second_order_pointwise", ["<S,db>", "<grad S,ds>", "1/2 <T ds,ds>"], settings.k, settings.tol, rows, notes))
}

/// Every sample agrees with the first within tol·(1 + |value|).
fn deterministic<'a>(mut vals: impl Iterator<Item = &'a [f64]>, tol: f64) -> bool {
    let Some(first) = vals.next() else { return true };
    vals.all(|v| v.iter().zip(first).all(|(a, b)| (a - b).abs() <= tol * (1.0 + b.abs())))
}

/// ⟨𝕋δσ, δσ⟩ ≤ 0 when ℋ ≡ 0 and 𝕊 ≡ 0 on V.
pub fn second_order_zero_s_test(
    problem: &ControlProblem,
    policy: &ControlPolicy,
    paths: &PathEnsemble,
    adjoints: &AdjointSet,
    settings: &CheckSettings,
) -> Result<ConditionReport> {
    let n = problem.state_dim;
    let grid = paths.grid();
    let singular = singular_check(problem, policy, paths, adjoints, settings)?;
    let pts = map_points(problem, policy, paths, adjoints, settings, |p| {
        let s = script_s(p.jets, p.adj)?;
        let t = script_t(p.jets, p.adj)?;
        let ds = p.jets.ds(0);
        Ok((eval_raw(&t, n, &[&ds, &ds]), s.iter().fold(0.0f64, |a, v| a.max(v.abs()))))
    })?;
    let max_s = pts.iter().flat_map(|(_, _, v)| v.iter().map(|x| x.1)).fold(0.0f64, f64::max);
    let s_zero = max_s <= settings.tol;
    let mut notes = vec![format!("singular on V: {} (max |H| = {:e})", singular.singular, singular.max_abs_h), format!("max |S| = {max_s:e}")];
    let rows = pts
        .iter()
        .map(|(i, vi, vals)| {
            let terms: Vec<[f64; 3]> = vals.iter().map(|v| [0.0, 0.0, v.0]).collect();
            let mut row = summarize(grid.node(*i), *i, &settings.probes[*vi], &terms, settings);
            if !(singular.singular && s_zero) {
                row.verdict = Verdict::Inconclusive;
            }
            row
        })
        .collect();
    if !(singular.singular && s_zero) {
        notes.push("preconditions fail (control not singular on V or 𝕊 ≠ 0); the 𝕋-only test does not apply".into());
    }
    Ok(ConditionReport::new("second_order_zero_s", ["-", "-", "<T ds,ds>"], settings.k, settings.tol, rows, notes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjoint::solve_adjoint_deterministic;
    use crate::problem::registry::{example1, example2, lq_suboptimal, LqParams};
    use crate::problem::{simulate_state, TimeGrid};

    fn base(reg: &crate::problem::registry::RegisteredProblem, steps: usize, m: usize) -> (PathEnsemble, AdjointSet) {
        let grid = TimeGrid::new(steps, reg.problem.horizon).unwrap();
        let paths = simulate_state(&reg.problem, &reg.base, &PathEnsemble::new(grid, m, 3).unwrap()).unwrap();
        let adj = solve_adjoint_deterministic(&reg.problem, &reg.base, &paths, 4).unwrap();
        (paths, adj)
    }

    #[test]
    fn example1_violates_second_order() {
        let reg = example1(0.5, 1.0);
        let (paths, adj) = base(&reg, 20, 4);
        let s = CheckSettings::new(reg.problem.control_set.probes().to_vec());
        assert!(singular_check(&reg.problem, &reg.base, &paths, &adj, &s).unwrap().singular);
        assert!(classical_singular_check(&reg.problem, &reg.base, &paths, &adj, &s).unwrap().classical);
        let r = second_order_pointwise_test(&reg.problem, &reg.base, &paths, &adj, &s, &GradientS::Auto).unwrap();
        assert_eq!(r.verdict, Verdict::Violated);
        for row in r.rows.iter().filter(|r| r.v == [1.0]) {
            assert!((row.total - 1.25).abs() < 1e-8);
        }
    }

    #[test]
    fn example2_zero_s_test_holds_and_flips() {
        for (sign, want) in [(1.0, Verdict::Satisfied), (-1.0, Verdict::Violated)] {
            let reg = example2(sign);
            let (paths, adj) = base(&reg, 50, 4);
            let s = CheckSettings::new(reg.problem.control_set.probes().to_vec());
            let r = second_order_zero_s_test(&reg.problem, &reg.base, &paths, &adj, &s).unwrap();
            assert_eq!(r.verdict, want, "{:?}", r.notes);
        }
    }

    #[test]
    fn suboptimal_lq_fails_first_order() {
        let p = LqParams { a: 0.0, c: 0.0, q: 1.0, r: 1.0, g: 0.0, x0: 1.0 };
        let reg = lq_suboptimal(p);
        let grid = TimeGrid::new(20, 1.0).unwrap();
        let paths = simulate_state(&reg.problem, &reg.base, &PathEnsemble::new(grid, 4, 3).unwrap()).unwrap();
        let adj = solve_adjoint_deterministic(&reg.problem, &reg.base, &paths, 2).unwrap();
        let s = CheckSettings::new(vec![vec![-1.0], vec![0.0]]);
        let r = first_order_check(&reg.problem, &reg.base, &paths, &adj, &s).unwrap();
        assert_eq!(r.verdict, Verdict::Violated);
        assert!(!singular_check(&reg.problem, &reg.base, &paths, &adj, &s).unwrap().singular);
    }
}
