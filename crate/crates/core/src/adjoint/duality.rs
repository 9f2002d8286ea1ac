//! Duality between the variational and adjoint equations:
//! E h^{(k)}(x̄(T))(X(T), …, X(T)) = −E∫ I_k dt, X = ξ, η, γ, y₁ for k = 1..4,
//! where I_k is the drift of ⟨p_k, X^k⟩ truncated at total order ε².

use std::io::Write;

use serde::Serialize;

use super::terms::generator;
use super::{AdjointSet, NodeCoefficients};
use crate::conditions::functionals::AdjointPoint;
use crate::error::{Error, Result};
use crate::problem::{ControlPolicy, ControlProblem, PathEnsemble, PointJets, ScalarJet};
use crate::stats::mean_se;
use crate::tensor::{eval_raw, MultilinearForm};
use crate::variational::alg::{graded_eval, Alg, Graded};
use crate::variational::engine::y_terms;
use crate::variational::taylor::ladder_rule;
use crate::variational::{map_paths, prepared_needle, spike_ladder, Needle, PathRun};

/// q_k(X, …, X) + Σ_slot p_k(X, …, g, …, X): the dW-part of d⟨p_k, X^k⟩.
pub fn martingale_integrand(p: &[f64], q: &[f64], n: usize, k: usize, x: &[f64], g: &[f64]) -> f64 {
    let mut args: Vec<&[f64]> = vec![x; k];
    let mut s = eval_raw(q, n, &args);
    for slot in 0..k {
        args[slot] = g;
        s += eval_raw(p, n, &args);
        args[slot] = x;
    }
    s
}

/// Truncated drift of ⟨p_k, X^k⟩:
/// Σ_slot p_k(..f..) + Σ_slot q_k(..g..) + Σ_{a<b} p_k(..g..g..) − G_k(X^k).
pub fn truncated_drift(p: &[f64], q: &[f64], gk: &[f64], n: usize, k: usize, x: &Graded, f: &Graded, g: &Graded) -> f64 {
    let mut args: Vec<&Graded> = vec![x; k];
    let mut s = -graded_eval(gk, n, &args);
    for a in 0..k {
        args[a] = f;
        s += graded_eval(p, n, &args);
        args[a] = g;
        s += graded_eval(q, n, &args);
        for b in a + 1..k {
            args[b] = g;
            s += graded_eval(p, n, &args);
            args[b] = x;
        }
        args[a] = x;
    }
    s
}

/// p_k, q_k and G_k (k = 1..4) at one node of one base path.
#[derive(Clone, Debug)]
pub(crate) struct NodeAdjoint {
    pub adj: AdjointPoint,
    pub gen: Vec<Vec<f64>>,
    /// p_k, q_k and G_k all vanish.
    pub zero: Vec<bool>,
}

fn node_adjoint(problem: &ControlProblem, needle: &Needle, adjoints: &AdjointSet, run: &PathRun, i: usize) -> Result<NodeAdjoint> {
    let (n, m) = (problem.state_dim, problem.control_dim);
    let x = &run.xbar[i * n..(i + 1) * n];
    let cell = i.min(needle.grid.steps() - 1);
    let mut jets = PointJets::new(n, 4);
    jets.eval(problem, needle.grid.node(i), x, &run.ubar[cell * m..(cell + 1) * m]);
    let c = NodeCoefficients::from_jets(&jets);
    let adj = AdjointPoint::from_set(adjoints, i, x);
    let forms: Vec<(MultilinearForm, MultilinearForm)> = (0..adj.order())
        .map(|k| {
            (
                MultilinearForm::from_coeffs(k + 1, n, adj.p[k].clone()).expect("adjoint shape"),
                MultilinearForm::from_coeffs(k + 1, n, adj.q[k].clone()).expect("adjoint shape"),
            )
        })
        .collect();
    let mut gen = Vec::with_capacity(forms.len());
    for k in 1..=forms.len() {
        gen.push(generator(k, &forms[k - 1].0, &forms[k - 1].1, &forms[..k - 1], &c)?.into_coeffs());
    }
    let zero = (0..forms.len()).map(|k| adj.p[k].iter().chain(&adj.q[k]).chain(&gen[k]).all(|v| *v == 0.0)).collect();
    Ok(NodeAdjoint { adj, gen, zero })
}

/// Graded work buffers reused across the nodes of one path.
struct Buffers {
    ys: [Graded; 4],
    gamma: Graded,
    eta: Graded,
    drift: [Graded; 4],
    diff: [Graded; 4],
    /// (X, f_X, g_X) for X = ξ, η, γ, y₁.
    xfg: [[Graded; 3]; 4],
}

impl Buffers {
    fn new(n: usize) -> Self {
        let z = || Graded::zero(n);
        Self {
            ys: std::array::from_fn(|_| z()),
            gamma: z(),
            eta: z(),
            drift: std::array::from_fn(|_| z()),
            diff: std::array::from_fn(|_| z()),
            xfg: std::array::from_fn(|_| std::array::from_fn(|_| z())),
        }
    }
}

/// Residual samples of the four identities on one path:
/// (h^{(k)}X_T^k, Σ I_k Δt, Σ D_k ΔW) for k = 1..4.
fn duality_sample(
    problem: &ControlProblem,
    needle: &Needle,
    adjoints: &AdjointSet,
    cache: &[Option<NodeAdjoint>],
    run: &PathRun,
    dw: &[f64],
) -> Result<[(f64, f64, f64); 4]> {
    let n = problem.state_dim;
    let steps = needle.grid.steps();
    let dt = needle.grid.dt();
    let mut out = [(0.0, 0.0, 0.0); 4];

    let mut h = ScalarJet::new(n, 4);
    problem.terminal_cost.eval(&run.xbar[steps * n..], &mut h);
    let combo = |top: usize, i: usize| -> Vec<f64> { (0..n).map(|c| (0..top).map(|j| run.y[j][i * n + c]).sum()).collect() };
    for (k, o) in out.iter_mut().enumerate() {
        let x = combo(4 - k, steps);
        o.0 = eval_raw(&h.dx[k], n, &vec![x.as_slice(); k + 1]);
    }

    let mut b = Buffers::new(n);
    let mut xp = vec![0.0; n];
    let mut gp = vec![0.0; n];
    for i in needle.spike.start..steps {
        let owned;
        let na = match (&cache[i], run.shared[i]) {
            (Some(a), true) => a,
            _ => {
                owned = node_adjoint(problem, needle, adjoints, run, i)?;
                &owned
            }
        };
        // identity k needs y₁ … y_{5−k}
        let Some(kmin) = na.zero.iter().position(|z| !*z).map(|k| k + 1) else { continue };
        let jmax = 5 - kmin;
        let r = i * n..(i + 1) * n;
        for j in 0..4 {
            b.ys[j].set_single(&run.y[j][r.clone()], j + 1);
        }
        b.gamma.assign(&b.ys[0]);
        b.gamma.add_scaled(1.0, &b.ys[1]);
        b.eta.assign(&b.gamma);
        b.eta.add_scaled(1.0, &b.ys[2]);
        let chi = needle.spike.contains(i);
        let c = run.node_data(i);
        for j in 1..=jmax {
            let ys = [&b.ys[0], &b.ys[1], &b.ys[2], &b.ys[3]];
            y_terms(j, ys, &b.gamma, &b.eta, c, chi, n, &mut b.drift[j - 1], &mut b.diff[j - 1]);
        }
        // partial sums y₁ + … + y_top with their drift and diffusion sums
        for k in kmin..=4 {
            let top = 5 - k;
            let [x, f, g] = &mut b.xfg[k - 1];
            x.clear();
            f.clear();
            g.clear();
            for j in 0..top {
                x.add_scaled(1.0, &b.ys[j]);
                f.add_scaled(1.0, &b.drift[j]);
                g.add_scaled(1.0, &b.diff[j]);
            }
        }
        for k in 1..=4 {
            if na.zero[k - 1] {
                continue;
            }
            let [x, f, g] = &b.xfg[k - 1];
            let (p, q) = (&na.adj.p[k - 1], &na.adj.q[k - 1]);
            out[k - 1].1 += truncated_drift(p, q, &na.gen[k - 1], n, k, x, f, g) * dt;
            let top = 5 - k;
            for c in 0..n {
                xp[c] = (0..top).map(|j| run.y[j][r.start + c]).sum();
                gp[c] = (0..top).map(|j| run.ydiff[j][r.start + c]).sum();
            }
            out[k - 1].2 += martingale_integrand(p, q, n, k, &xp, &gp) * dw[i];
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct DualityRow {
    pub eps: f64,
    /// E h^{(k)}(X_T^k) and −E∫I_k dt.
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub rhs_se: f64,
    /// LHS − RHS from the paired sample with the martingale control variate.
    pub residual: f64,
    pub residual_se: f64,
    pub ratio: f64,
    pub ratio_se: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct IdentitySeries {
    pub order: usize,
    pub rows: Vec<DualityRow>,
    pub floor_rung: Option<usize>,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct DualityReport {
    pub v: Vec<f64>,
    pub tau: f64,
    pub band: f64,
    pub paths_used: Vec<usize>,
    pub identities: Vec<IdentitySeries>,
}

impl DualityReport {
    pub fn passed(&self) -> bool {
        self.identities.iter().all(|s| s.passed)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let head = ["identity", "eps", "lhs", "lhs_se", "rhs", "rhs_se", "residual", "residual_se", "ratio", "ratio_se"];
        wr.write_record(head).map_err(crate::variational::orders::csv_err)?;
        for s in &self.identities {
            for r in &s.rows {
                let vals = [r.eps, r.lhs, r.lhs_se, r.rhs, r.rhs_se, r.residual, r.residual_se, r.ratio, r.ratio_se];
                let mut rec = vec![s.order.to_string()];
                rec.extend(vals.iter().map(|v| format!("{v:e}")));
                wr.write_record(rec).map_err(crate::variational::orders::csv_err)?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// Evaluates both sides of the four identities for spikes of value `v` at τ
/// on each ε of the ladder. The variational processes are recomputed per
/// path inside the check so no M×N array is held in memory.
#[allow(clippy::too_many_arguments)]
pub fn duality_check(
    problem: &ControlProblem,
    policy: &ControlPolicy,
    v: &[f64],
    tau: f64,
    eps_ladder: &[f64],
    adjoints: &AdjointSet,
    paths: &PathEnsemble,
    band: f64,
) -> Result<DualityReport> {
    if adjoints.grid() != paths.grid() {
        return Err(Error::GridMismatch("adjoints and ensemble use different grids".into()));
    }
    if adjoints.max_order() < 4 {
        return Err(Error::Usage(format!("the duality check needs adjoints up to order 4, have {}", adjoints.max_order())));
    }
    let grid = paths.grid();
    let mut series: Vec<IdentitySeries> = (1..=4).map(|order| IdentitySeries { order, rows: Vec::new(), floor_rung: None, passed: true }).collect();
    let mut used = Vec::new();
    for spike in spike_ladder(&grid, tau, eps_ladder, v)? {
        let eps = spike.eps(&grid);
        let needle = prepared_needle(problem, policy, paths, spike, 4)?;
        let cache: Vec<Option<NodeAdjoint>> = match needle.reference() {
            Some(r) if !r.aborted => (0..=grid.steps())
                .map(|i| if i >= needle.spike.start { node_adjoint(problem, &needle, adjoints, r, i).map(Some) } else { Ok(None) })
                .collect::<Result<_>>()?,
            _ => vec![None; grid.steps() + 1],
        };
        let samples: Vec<[(f64, f64, f64); 4]> = map_paths(&needle, paths, |_, run, dw| duality_sample(problem, &needle, adjoints, &cache, run, dw))?
            .into_iter()
            .flatten()
            .collect::<Result<_>>()?;
        used.push(samples.len());
        let e2 = eps * eps;
        for (k, s) in series.iter_mut().enumerate() {
            let lhs: Vec<f64> = samples.iter().map(|x| x[k].0).collect();
            let rhs: Vec<f64> = samples.iter().map(|x| -x[k].1).collect();
            let res: Vec<f64> = samples.iter().map(|x| x[k].0 + x[k].1 + x[k].2).collect();
            let (lhs, lhs_se) = mean_se(&lhs);
            let (rhs, rhs_se) = mean_se(&rhs);
            let (residual, residual_se) = mean_se(&res);
            s.rows.push(DualityRow {
                eps,
                lhs,
                lhs_se,
                rhs,
                rhs_se,
                residual,
                residual_se,
                ratio: if eps > 0.0 { residual.abs() / e2 } else { 0.0 },
                ratio_se: if eps > 0.0 { residual_se / e2 } else { 0.0 },
            });
        }
    }
    for s in &mut series {
        let pts: Vec<(f64, f64)> = s.rows.iter().map(|r| (r.ratio, r.ratio_se)).collect();
        (s.passed, s.floor_rung) = ladder_rule(&pts, band);
    }
    Ok(DualityReport { v: v.to_vec(), tau, band, paths_used: used, identities: series })
}
