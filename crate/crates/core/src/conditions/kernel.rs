//! Martingale representation 𝕊(t) = E[𝕊(t)|F_{s₀}] + ∫ φ(s,t) dW(s), the ∂⁺
//! functional built from it and the expectation-level second-order test.

use rayon::prelude::*;
use serde::Serialize;

use super::functionals::{script_s, script_t, AdjointPoint, PairJets};
use super::report::{CheckSettings, ConditionReport, TestRow, Verdict};
use crate::adjoint::{AdjointSet, FundamentalSolution};
use crate::error::{Error, Result};
use crate::problem::{ControlPolicy, ControlProblem, PathEnsemble, TimeGrid};
use crate::regression::{Design, FeatureMap, PolyBasis};
use crate::stats::mean_se;
use crate::tensor::eval_raw;

/// 𝕊(t, x̄(t), v) on every path and node, M×(N+1)×n. Aborted paths hold NaN.
#[derive(Clone, Debug)]
pub struct SSeries {
    pub grid: TimeGrid,
    pub dim: usize,
    pub paths: usize,
    pub data: Vec<f64>,
}

impl SSeries {
    pub fn at(&self, p: usize, i: usize) -> &[f64] {
        let o = (p * (self.grid.steps() + 1) + i) * self.dim;
        &self.data[o..o + self.dim]
    }

    /// Builds a series from a closure (p, i) ↦ 𝕊, for injected kernels.
    pub fn from_fn(grid: TimeGrid, dim: usize, paths: usize, f: impl Fn(usize, usize) -> Vec<f64>) -> Self {
        let mut data = Vec::with_capacity(paths * (grid.steps() + 1) * dim);
        for p in 0..paths {
            for i in 0..=grid.steps() {
                data.extend(f(p, i));
            }
        }
        Self { grid, dim, paths, data }
    }
}

/// 𝕊 along every base path for one probe v.
pub fn script_s_series(problem: &ControlProblem, policy: &ControlPolicy, paths: &PathEnsemble, adjoints: &AdjointSet, v: &[f64]) -> Result<SSeries> {
    let grid = paths.grid();
    let states = paths.states()?;
    let nodes = grid.steps() + 1;
    let n = problem.state_dim;
    let rows: Vec<Result<Vec<f64>>> = (0..paths.path_count())
        .into_par_iter()
        .map_init(
            || (PairJets::new(n), AdjointPoint::zeros(n, adjoints.max_order()), vec![0.0; problem.control_dim]),
            |(jets, adj, u), p| {
                if states.aborted[p] {
                    return Ok(vec![f64::NAN; nodes * n]);
                }
                let mut out = Vec::with_capacity(nodes * n);
                for i in 0..nodes {
                    let x = states.at(p, i, nodes);
                    let cell = i.min(grid.steps() - 1);
                    policy.base_control(cell, grid.node(i), x, u);
                    adj.fill(adjoints, i, x);
                    jets.eval(problem, grid.node(i), x, u, v);
                    out.extend(script_s(jets, adj)?);
                }
                Ok(out)
            },
        )
        .collect();
    let mut data = Vec::with_capacity(paths.path_count() * nodes * n);
    for r in rows {
        data.extend(r?);
    }
    Ok(SSeries { grid, dim: n, paths: paths.path_count(), data })
}

/// Regression estimate of φ(s, t) for s₀ ≤ s < t ≤ s₁.
#[derive(Clone, Debug)]
pub struct MartingaleKernel {
    pub grid: TimeGrid,
    pub dim: usize,
    pub s0: usize,
    pub s1: usize,
    /// E𝕊(t) for t = s₀..=s₁ (n entries each).
    pub mean: Vec<Vec<f64>>,
    features: Vec<FeatureMap>,
    /// Per (s, t) pair and component: coefficients, path-mean of φ and its se.
    coef: Vec<Vec<Vec<f64>>>,
    phi_mean: Vec<Vec<f64>>,
    phi_se: Vec<Vec<f64>>,
    /// Mean squared reconstruction error over paths and t, relative to the
    /// variance of 𝕊(t) − E[𝕊(t)|F_{s₀}] (0 when that variance vanishes).
    pub residual: f64,
    /// Paths used (non-aborted).
    pub used: usize,
}

impl MartingaleKernel {
    fn pair(&self, s: usize, t: usize) -> usize {
        assert!(self.s0 <= s && s < t && t <= self.s1, "φ(s, t) needs s₀ ≤ s < t ≤ s₁");
        let (a, b) = (s - self.s0, t - self.s0);
        // row a holds t = a+1..=w
        let w = self.s1 - self.s0;
        a * w - a * a.saturating_sub(1) / 2 + (b - a - 1)
    }

    /// Path mean of φ(s, t).
    pub fn phi_mean(&self, s: usize, t: usize) -> &[f64] {
        &self.phi_mean[self.pair(s, t)]
    }

    pub fn phi_se(&self, s: usize, t: usize) -> &[f64] {
        &self.phi_se[self.pair(s, t)]
    }

    /// φ(s, t) on a path whose state at s is `x`.
    pub fn phi_at(&self, s: usize, t: usize, x: &[f64]) -> Vec<f64> {
        let k = self.pair(s, t);
        let f = &self.features[s - self.s0];
        self.coef[k].iter().map(|c| f.predict(c, x)).collect()
    }

    /// Largest |E φ| / se over the window; ≈ 0 kernels stay below 3 or so.
    pub fn max_z(&self) -> f64 {
        let mut z = 0.0f64;
        for (m, s) in self.phi_mean.iter().zip(&self.phi_se) {
            for (a, b) in m.iter().zip(s) {
                z = z.max(if *b > 0.0 {
                    a.abs() / b
                } else if *a == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                });
            }
        }
        z
    }
}

/// Fits φ(s, t) for s₀ ≤ s < t ≤ s₁ by regressing (𝕊(t) − Ê[𝕊(t)|x̄(s₀)])ΔW_s/Δt
/// on polynomials of x̄(s).
pub fn martingale_kernel(series: &SSeries, paths: &PathEnsemble, s0: usize, s1: usize, basis: &PolyBasis) -> Result<MartingaleKernel> {
    let grid = paths.grid();
    if series.grid != grid || series.paths != paths.path_count() {
        return Err(Error::GridMismatch("𝕊 series and ensemble differ".into()));
    }
    if !(s0 < s1 && s1 <= grid.steps()) {
        return Err(Error::Usage(format!("kernel window [{s0}, {s1}] is empty or leaves the grid")));
    }
    let n = series.dim;
    let states = paths.states()?;
    let nodes = grid.steps() + 1;
    let live: Vec<usize> = (0..paths.path_count()).filter(|p| !states.aborted[*p]).collect();
    let m = live.len();
    let dt = grid.dt();
    let xs_at = |i: usize| -> Vec<f64> { live.iter().flat_map(|p| states.at(*p, i, nodes).to_vec()).collect() };
    let dws: Vec<Vec<f64>> = live.iter().map(|p| paths.path_increments(*p)).collect();

    // baseline Ê[𝕊(t)|x̄(s₀)] and centred targets
    let d0 = Design::build(basis, &xs_at(s0), s0)?;
    let w = s1 - s0;
    let mut centred: Vec<Vec<Vec<f64>>> = Vec::with_capacity(w + 1); // [t][a][path]
    let mut mean = Vec::with_capacity(w + 1);
    for t in s0..=s1 {
        let mut comps = Vec::with_capacity(n);
        let mut mu = Vec::with_capacity(n);
        for a in 0..n {
            let y: Vec<f64> = live.iter().map(|p| series.at(*p, t)[a]).collect();
            mu.push(y.iter().sum::<f64>() / m as f64);
            let (c, _) = d0.fit(&y);
            comps.push(y.iter().enumerate().map(|(k, v)| v - d0.fitted(&c, k)).collect::<Vec<f64>>());
        }
        centred.push(comps);
        mean.push(mu);
    }

    let fits: Vec<Result<(FeatureMap, Vec<(Vec<Vec<f64>>, Vec<f64>, Vec<f64>, Vec<Vec<f64>>)>)>> = (s0..s1)
        .into_par_iter()
        .map(|s| {
            let d = Design::build(basis, &xs_at(s), s)?;
            let mut per_t = Vec::with_capacity(s1 - s);
            for t in s + 1..=s1 {
                let (mut coefs, mut mus, mut ses, mut fitted) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
                for a in 0..n {
                    let y: Vec<f64> = (0..m).map(|k| centred[t - s0][a][k] * dws[k][s] / dt).collect();
                    let (c, var) = d.fit(&y);
                    let se = (var * d.gram_inv[(0, 0)].max(0.0) / m as f64).sqrt();
                    fitted.push((0..m).map(|k| d.fitted(&c, k)).collect());
                    mus.push(c[0]);
                    ses.push(se);
                    coefs.push(c);
                }
                per_t.push((coefs, mus, ses, fitted));
            }
            Ok((d.features.clone(), per_t))
        })
        .collect();

    let mut features = Vec::with_capacity(w);
    let mut coef = Vec::new();
    let mut phi_mean = Vec::new();
    let mut phi_se = Vec::new();
    // reconstruction: Σ_{s<t} φ(s,t)ΔW_s per t and path
    let mut recon = vec![vec![vec![0.0; m]; n]; w + 1];
    for (si, r) in fits.into_iter().enumerate() {
        let (f, per_t) = r?;
        let s = s0 + si;
        features.push(f);
        for (ti, (c, mu, se, fitted)) in per_t.into_iter().enumerate() {
            let t = s + 1 + ti;
            for a in 0..n {
                for k in 0..m {
                    recon[t - s0][a][k] += fitted[a][k] * dws[k][s];
                }
            }
            coef.push(c);
            phi_mean.push(mu);
            phi_se.push(se);
        }
    }
    let (mut err, mut var) = (0.0, 0.0);
    for t in 1..=w {
        for a in 0..n {
            for k in 0..m {
                let c = centred[t][a][k];
                err += (c - recon[t][a][k]).powi(2);
                var += c * c;
            }
        }
    }
    let residual = if var > 0.0 { err / var } else { 0.0 };
    Ok(MartingaleKernel { grid, dim: n, s0, s1, mean, features, coef, phi_mean, phi_se, residual, used: m })
}

#[derive(Clone, Debug, Serialize)]
pub struct PartialPlusRow {
    pub theta: f64,
    /// (1/θ²) E∫_τ^{τ+θ}∫_τ^t ⟨φ(s,t), Φ(τ)Φ(s)⁻¹δσ(s)⟩ ds dt.
    pub half: f64,
    pub se: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PartialPlusEstimate {
    pub tau: f64,
    pub rows: Vec<PartialPlusRow>,
    /// Max of `half` over the smallest rungs, a finite-θ proxy for the limsup.
    pub half_estimate: f64,
    pub half_se: f64,
    /// ∂⁺ = 2·half_estimate.
    pub value: f64,
    pub se: f64,
    pub label: String,
}

/// Rungs entering the limsup proxy.
pub const SMALL_RUNGS: usize = 2;

/// Evaluates the ∂⁺ double integral at each θ of the ladder (left sums in s,
/// trapezoid in t) with δσ(s) supplied per (path, node).
pub fn partial_plus_estimate(
    kernel: &MartingaleKernel,
    paths: &PathEnsemble,
    phi: &FundamentalSolution,
    tau: usize,
    thetas: &[f64],
    delta_sigma: impl Fn(usize, usize) -> Vec<f64> + Sync,
) -> Result<PartialPlusEstimate> {
    let grid = paths.grid();
    if phi.grid != grid || kernel.grid != grid {
        return Err(Error::GridMismatch("kernel, Φ and ensemble use different grids".into()));
    }
    if thetas.is_empty() {
        return Err(Error::Usage("θ ladder is empty".into()));
    }
    let states = paths.states()?;
    let nodes = grid.steps() + 1;
    let n = kernel.dim;
    let dt = grid.dt();
    let mut widths = Vec::new();
    for th in thetas {
        let w = (th / dt).round() as usize;
        if w == 0 || ((w as f64) * dt - th).abs() > 1e-9 * th.max(1.0) {
            return Err(Error::Usage(format!("θ = {th} is not a positive multiple of Δt = {dt}")));
        }
        if tau < kernel.s0 || tau + w > kernel.s1 {
            return Err(Error::Usage(format!(
                "τ + θ = {} leaves the kernel window [{}, {}]",
                grid.node(tau) + th,
                kernel.grid.node(kernel.s0),
                kernel.grid.node(kernel.s1)
            )));
        }
        widths.push(w);
    }
    let wmax = *widths.iter().max().unwrap();
    let live: Vec<usize> = (0..paths.path_count()).filter(|p| !states.aborted[*p]).collect();
    // per path: inner[j] = Σ_{s=τ}^{τ+j−1} ⟨φ(s, τ+j), Φ(τ)Φ(s)⁻¹δσ(s)⟩ Δs
    let per_path: Vec<Vec<f64>> = live
        .par_iter()
        .map(|&p| {
            let transported: Vec<Vec<f64>> = (tau..tau + wmax)
                .map(|s| {
                    let m = phi.transport(p, tau, s);
                    let d = delta_sigma(p, s);
                    (0..n).map(|r| (0..n).map(|c| m[r * n + c] * d[c]).sum()).collect()
                })
                .collect();
            let mut inner = vec![0.0; wmax + 1];
            for j in 1..=wmax {
                let t = tau + j;
                let mut acc = 0.0;
                for s in tau..t {
                    let f = kernel.phi_at(s, t, states.at(p, s, nodes));
                    acc += f.iter().zip(&transported[s - tau]).map(|(a, b)| a * b).sum::<f64>() * dt;
                }
                inner[j] = acc;
            }
            widths
                .iter()
                .map(|&w| {
                    let th = w as f64 * dt;
                    let sum: f64 = (0..=w).map(|j| if j == 0 || j == w { 0.5 } else { 1.0 } * inner[j]).sum();
                    sum * dt / (th * th)
                })
                .collect()
        })
        .collect();
    let mut rows: Vec<PartialPlusRow> = thetas
        .iter()
        .enumerate()
        .map(|(r, th)| {
            let col: Vec<f64> = per_path.iter().map(|v| v[r]).collect();
            let (half, se) = mean_se(&col);
            PartialPlusRow { theta: *th, half, se }
        })
        .collect();
    rows.sort_by(|a, b| b.theta.total_cmp(&a.theta));
    let small = &rows[rows.len().saturating_sub(SMALL_RUNGS)..];
    let best = small.iter().max_by(|a, b| a.half.total_cmp(&b.half)).unwrap();
    let (half_estimate, half_se) = (best.half, best.se);
    Ok(PartialPlusEstimate {
        tau: grid.node(tau),
        half_estimate,
        half_se,
        value: 2.0 * half_estimate,
        se: 2.0 * half_se,
        rows,
        label: format!("finite-θ estimate: max over the {SMALL_RUNGS} smallest θ, not a limit"),
    })
}

/// E⟨𝕊, δb⟩ + ∂⁺(𝕊; δσ) + ½E⟨𝕋δσ, δσ⟩ ≤ 0 at each τ of `taus` (node indices) and probe v.
#[allow(clippy::too_many_arguments)]
pub fn second_order_integral_test(
    problem: &ControlProblem,
    policy: &ControlPolicy,
    paths: &PathEnsemble,
    adjoints: &AdjointSet,
    phi: &FundamentalSolution,
    settings: &CheckSettings,
    taus: &[usize],
    thetas: &[f64],
    basis: &PolyBasis,
) -> Result<(ConditionReport, Vec<PartialPlusEstimate>)> {
    settings.validate()?;
    let grid = paths.grid();
    let states = paths.states()?;
    let nodes = grid.steps() + 1;
    let n = problem.state_dim;
    let dt = grid.dt();
    let wmax = thetas.iter().map(|t| (t / dt).round() as usize).max().unwrap_or(0);
    let live: Vec<usize> = (0..paths.path_count()).filter(|p| !states.aborted[*p]).collect();
    let mut rows = Vec::new();
    let mut estimates = Vec::new();
    for v in &settings.probes {
        let series = script_s_series(problem, policy, paths, adjoints, v)?;
        // δσ on every path and node, computed once per probe
        let ds: Vec<Vec<f64>> = live
            .par_iter()
            .map_init(
                || (PairJets::new(n), vec![0.0; problem.control_dim]),
                |(jets, u), &p| {
                    let mut out = Vec::with_capacity(nodes * n);
                    for i in 0..nodes {
                        let x = states.at(p, i, nodes);
                        policy.base_control(i.min(grid.steps() - 1), grid.node(i), x, u);
                        jets.eval(problem, grid.node(i), x, u, v);
                        out.extend(jets.ds(0));
                    }
                    out
                },
            )
            .collect();
        let mut index = vec![usize::MAX; paths.path_count()];
        for (k, p) in live.iter().enumerate() {
            index[*p] = k;
        }
        for &tau in taus {
            if tau + wmax > grid.steps() {
                return Err(Error::Usage(format!("τ = {} is too close to T for the θ ladder", grid.node(tau))));
            }
            let kernel = martingale_kernel(&series, paths, tau, tau + wmax, basis)?;
            let dsf = |p: usize, s: usize| ds[index[p]][s * n..(s + 1) * n].to_vec();
            let est = partial_plus_estimate(&kernel, paths, phi, tau, thetas, dsf)?;
            let pts: Vec<Result<(f64, f64)>> = live
                .par_iter()
                .map_init(
                    || (PairJets::new(n), AdjointPoint::zeros(n, adjoints.max_order()), vec![0.0; problem.control_dim]),
                    |(jets, adj, u), &p| {
                        let x = states.at(p, tau, nodes);
                        policy.base_control(tau.min(grid.steps() - 1), grid.node(tau), x, u);
                        adj.fill(adjoints, tau, x);
                        jets.eval(problem, grid.node(tau), x, u, v);
                        let s = script_s(jets, adj)?;
                        let t = script_t(jets, adj)?;
                        let (db, d) = (jets.db(0), jets.ds(0));
                        Ok((s.iter().zip(&db).map(|(a, b)| a * b).sum(), 0.5 * eval_raw(&t, n, &[&d, &d])))
                    },
                )
                .collect();
            let pts: Vec<(f64, f64)> = pts.into_iter().collect::<Result<_>>()?;
            let (term1, se1) = mean_se(&pts.iter().map(|x| x.0).collect::<Vec<_>>());
            let (term3, se3) = mean_se(&pts.iter().map(|x| x.1).collect::<Vec<_>>());
            let total = term1 + est.value + term3;
            let stderr = (se1 * se1 + est.se * est.se + se3 * se3).sqrt();
            rows.push(TestRow {
                node: tau,
                t: grid.node(tau),
                v: v.clone(),
                term1,
                term2: est.value,
                term3,
                total,
                stderr,
                verdict: Verdict::classify(total, stderr, settings.k, settings.tol),
            });
            estimates.push(est);
        }
    }
    let notes = vec![format!("∂⁺ is a finite-θ estimate (max over the {SMALL_RUNGS} smallest θ of {thetas:?})")];
    let report = ConditionReport::new("second_order_integral", ["E<S,db>", "d+(S;ds)", "1/2 E<T ds,ds>"], settings.k, settings.tol, rows, notes);
    Ok((report, estimates))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjoint::{fundamental_solution, solve_adjoint_deterministic};
    use crate::problem::registry::example1;
    use crate::problem::simulate_state;

    #[test]
    fn pair_index_is_dense() {
        let grid = TimeGrid::new(10, 1.0).unwrap();
        let k = MartingaleKernel {
            grid,
            dim: 1,
            s0: 2,
            s1: 6,
            mean: vec![],
            features: vec![],
            coef: vec![],
            phi_mean: vec![],
            phi_se: vec![],
            residual: 0.0,
            used: 0,
        };
        let mut seen = Vec::new();
        for s in 2..6 {
            for t in s + 1..=6 {
                seen.push(k.pair(s, t));
            }
        }
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn example1_integral_test_is_violated() {
        let reg = example1(0.5, 1.0);
        let grid = TimeGrid::new(32, 1.0).unwrap();
        let paths = simulate_state(&reg.problem, &reg.base, &PathEnsemble::new(grid, 200, 1).unwrap()).unwrap();
        let adj = solve_adjoint_deterministic(&reg.problem, &reg.base, &paths, 4).unwrap();
        let phi = fundamental_solution(&reg.problem, &reg.base, &paths).unwrap();
        let s = CheckSettings::new(vec![vec![1.0]]);
        let (r, est) = second_order_integral_test(&reg.problem, &reg.base, &paths, &adj, &phi, &s, &[8], &[0.25, 0.125], &PolyBasis::new(1, 2)).unwrap();
        assert_eq!(r.verdict, Verdict::Violated);
        assert!((r.rows[0].total - 1.25).abs() < 1e-10);
        assert_eq!(est[0].value, 0.0);
    }
}
