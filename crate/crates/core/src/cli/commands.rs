//! The subcommands. Each writes CSV/JSON files and a manifest into the
//! output directory and reports whether any requested check was violated.

use std::io::Write;
use std::path::PathBuf;

use serde::Serialize;
use serde_json::json;

use super::config::RunConfig;
use super::manifest::{timestamp, OutputDir};
use crate::adjoint::{duality_check, fundamental_solution, solve_adjoint_auto, AdjointSet};
use crate::conditions::{
    classical_singular_check, first_order_check, second_order_integral_test, second_order_pointwise_test, second_order_zero_s_test, singular_check,
    CheckSettings, ConditionReport, GradientS, Verdict,
};
use crate::error::{Error, Result};
use crate::problem::registry::{build, RegisteredProblem, REGISTRY};
use crate::problem::{evaluate_cost, simulate_state, PathEnsemble, TimeGrid};
use crate::regression::PolyBasis;
use crate::tensor::ito::{ito_convergence, random_affine_system};
use crate::variational::{fit_orders, taylor_check, OrderTolerances};

/// What a command did.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub violated: bool,
    pub summary: serde_json::Value,
    pub outputs: Vec<PathBuf>,
}

struct Run {
    reg: RegisteredProblem,
    grid: TimeGrid,
    out: OutputDir,
    started: u64,
}

fn setup(config: &RunConfig) -> Result<Run> {
    let reg = build(&config.problem, &config.params, config.poly.as_ref())?;
    config.validate(reg.problem.horizon)?;
    let grid = TimeGrid::new(config.steps, reg.problem.horizon)?;
    reg.base.validate(&reg.problem, &grid)?;
    Ok(Run { reg, grid, out: OutputDir::create(&config.output)?, started: timestamp() })
}

fn simulated(run: &Run, config: &RunConfig) -> Result<PathEnsemble> {
    simulate_state(&run.reg.problem, &run.reg.base, &PathEnsemble::new(run.grid, config.paths, config.seed)?)
}

fn finish(run: Run, command: &str, config: &RunConfig, violated: bool, summary: serde_json::Value) -> Result<Outcome> {
    let dir = run.out.path().to_path_buf();
    let mut out = run.out;
    out.json("summary.json", &summary)?;
    let manifest = out.finish(command, config, run.started)?;
    let outputs = manifest.outputs.iter().map(|f| dir.join(&f.path)).collect();
    Ok(Outcome { violated, summary, outputs })
}

fn probes(run: &Run, config: &RunConfig) -> Vec<Vec<f64>> {
    config.check.probes.clone().unwrap_or_else(|| run.reg.problem.control_set.probes().to_vec())
}

fn grid_index(grid: &TimeGrid, t: f64) -> Result<usize> {
    grid.index_of(t).ok_or_else(|| Error::Config(format!("{t} is not a grid node")))
}

/// Mean trajectory and cost of the base pair.
pub fn cmd_simulate(config: &RunConfig) -> Result<Outcome> {
    let mut run = setup(config)?;
    let paths = simulated(&run, config)?;
    let cost = evaluate_cost(&run.reg.problem, &run.reg.base, &paths)?;
    let states = paths.states()?;
    let n = run.reg.problem.state_dim;
    let nodes = run.grid.steps() + 1;
    let live: Vec<usize> = (0..paths.path_count()).filter(|p| !states.aborted[*p]).collect();
    let grid = run.grid;
    run.out.write("trajectory.csv", |w| {
        let mut head = vec!["t".to_string()];
        for c in 0..n {
            head.push(format!("mean_x{c}"));
            head.push(format!("sd_x{c}"));
        }
        writeln!(w, "{}", head.join(","))?;
        for i in 0..nodes {
            let mut row = vec![format!("{}", grid.node(i))];
            for c in 0..n {
                let xs: Vec<f64> = live.iter().map(|p| states.at(*p, i, nodes)[c]).collect();
                let m = xs.iter().sum::<f64>() / xs.len().max(1) as f64;
                let sd = crate::stats::variance(&xs).sqrt();
                row.push(format!("{m:e}"));
                row.push(format!("{sd:e}"));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    })?;
    run.out.json("cost.json", &cost)?;
    let summary = json!({ "command": "simulate", "problem": config.problem, "cost": cost });
    finish(run, "simulate", config, false, summary)
}

fn adjoints(run: &Run, config: &RunConfig, paths: &PathEnsemble, k: usize) -> Result<(AdjointSet, Option<crate::adjoint::RegressionDiagnostics>)> {
    solve_adjoint_auto(&run.reg.problem, &run.reg.base, paths, k, config.adjoint.basis_degree)
}

/// Adjoint orders 1..=k: per-node cross-path means of the p and q coefficients.
pub fn cmd_adjoint(config: &RunConfig, k: usize) -> Result<Outcome> {
    if !(1..=4).contains(&k) {
        return Err(Error::Config(format!("adjoint order must be in 1..=4, got {k}")));
    }
    let mut run = setup(config)?;
    let paths = simulated(&run, config)?;
    let (set, diag) = adjoints(&run, config, &paths, k)?;
    let states = paths.states()?;
    let grid = run.grid;
    for order in 1..=k {
        let (ps, qs) = set.get(order)?.mean_series(states);
        run.out.write(&format!("adjoint_{order}.csv"), |w| {
            let d = ps[0].len();
            let mut head = vec!["t".to_string()];
            head.extend((0..d).map(|c| format!("p{c}")));
            head.extend((0..d).map(|c| format!("q{c}")));
            writeln!(w, "{}", head.join(","))?;
            for (i, (p, q)) in ps.iter().zip(&qs).enumerate() {
                let mut row = vec![format!("{}", grid.node(i))];
                row.extend(p.iter().chain(q).map(|v| format!("{v:e}")));
                writeln!(w, "{}", row.join(","))?;
            }
            Ok(())
        })?;
    }
    if let Some(d) = &diag {
        run.out.json("regression_diagnostics.json", d)?;
    }
    let summary = json!({
        "command": "adjoint",
        "problem": config.problem,
        "order": k,
        "solver": if set.is_deterministic() { "deterministic" } else { "regression" },
    });
    finish(run, "adjoint", config, false, summary)
}

fn write_report(out: &mut OutputDir, name: &str, r: &ConditionReport) -> Result<()> {
    out.write(&format!("{name}.csv"), |w| r.write_csv(w))?;
    Ok(())
}

#[derive(Serialize)]
struct CheckSummary {
    command: &'static str,
    problem: String,
    probes: Vec<Vec<f64>>,
    headline: String,
    first_order: serde_json::Value,
    singular: crate::conditions::SingularReport,
    classical_singular: serde_json::Value,
    second_order_pointwise: serde_json::Value,
    second_order_zero_s: serde_json::Value,
    second_order_integral: serde_json::Value,
    violated: bool,
}

/// First-order, singularity and second-order tests along the base pair.
pub fn cmd_check(config: &RunConfig) -> Result<Outcome> {
    let mut run = setup(config)?;
    let paths = simulated(&run, config)?;
    let (set, _) = adjoints(&run, config, &paths, 4)?;
    let (problem, policy) = (&run.reg.problem, &run.reg.base);
    let settings = CheckSettings {
        k: config.check.k,
        tol: config.check.tol,
        probes: probes(&run, config),
        stride: config.check.stride,
        sample_paths: config.check.sample_paths,
    };
    let first = first_order_check(problem, policy, &paths, &set, &settings)?;
    let singular = singular_check(problem, policy, &paths, &set, &settings)?;
    let classical = match classical_singular_check(problem, policy, &paths, &set, &settings) {
        Ok(r) => serde_json::to_value(r).expect("serializes"),
        Err(Error::Capability(m)) => json!({ "unavailable": m }),
        Err(e) => return Err(e),
    };
    let pointwise = second_order_pointwise_test(problem, policy, &paths, &set, &settings, &GradientS::Auto)?;
    let zero_s = second_order_zero_s_test(problem, policy, &paths, &set, &settings)?;
    let phi = fundamental_solution(problem, policy, &paths)?;
    let taus: Vec<usize> = config.check.taus.iter().map(|t| grid_index(&run.grid, *t)).collect::<Result<_>>()?;
    let basis = PolyBasis::new(problem.state_dim, config.adjoint.basis_degree);
    let (integral, partials) = second_order_integral_test(problem, policy, &paths, &set, &phi, &settings, &taus, &config.check.theta, &basis)?;

    write_report(&mut run.out, "first_order", &first)?;
    write_report(&mut run.out, "second_order_pointwise", &pointwise)?;
    write_report(&mut run.out, "second_order_zero_s", &zero_s)?;
    write_report(&mut run.out, "second_order_integral", &integral)?;
    run.out.write("partial_plus.csv", |w| {
        writeln!(w, "tau,v_index,theta,half,se")?;
        let per_tau = taus.len();
        for (k, est) in partials.iter().enumerate() {
            for r in &est.rows {
                writeln!(w, "{},{},{},{:e},{:e}", est.tau, k / per_tau, r.theta, r.half, r.se)?;
            }
        }
        Ok(())
    })?;

    // any violated test refutes; otherwise any decided test passes
    let tests = [pointwise.verdict, zero_s.verdict, integral.verdict];
    let second = if tests.contains(&Verdict::Violated) {
        Verdict::Violated
    } else if tests.contains(&Verdict::Satisfied) {
        Verdict::Satisfied
    } else {
        Verdict::Inconclusive
    };
    let headline = if first.verdict == Verdict::Violated {
        "first-order VIOLATED => not optimal".to_string()
    } else if singular.singular {
        match second {
            Verdict::Violated => "singular; second-order VIOLATED => not optimal".into(),
            Verdict::Satisfied => "singular optimal candidate; second-order satisfied".into(),
            Verdict::Inconclusive => "singular; second-order inconclusive".into(),
        }
    } else {
        format!("not singular on V; first-order {}", first.verdict.as_str())
    };
    let violated = [&first, &pointwise, &zero_s, &integral].iter().any(|r| r.verdict == Verdict::Violated);
    let summary = CheckSummary {
        command: "check",
        problem: config.problem.clone(),
        probes: settings.probes.clone(),
        headline,
        first_order: first.summary_json(),
        singular,
        classical_singular: classical,
        second_order_pointwise: pointwise.summary_json(),
        second_order_zero_s: zero_s.summary_json(),
        second_order_integral: integral.summary_json(),
        violated,
    };
    let value = serde_json::to_value(&summary).expect("serializes");
    finish(run, "check", config, violated, value)
}

fn spike_values(run: &Run, config: &RunConfig) -> Vec<Vec<f64>> {
    config.variational.values.clone().unwrap_or_else(|| probes(run, config))
}

/// Log-log order fits of the variational moments for each spike value.
pub fn cmd_orders(config: &RunConfig) -> Result<Outcome> {
    let mut run = setup(config)?;
    let paths = PathEnsemble::new(run.grid, config.paths, config.seed)?;
    let vc = &config.variational;
    let mut failed = false;
    let mut rows = Vec::new();
    for (k, v) in spike_values(&run, config).iter().enumerate() {
        let r = fit_orders(&run.reg.problem, &run.reg.base, v, vc.tau, &vc.eps, vc.beta, &paths, OrderTolerances::default())?;
        run.out.write(&format!("orders_v{k}.csv"), |w| r.write_csv(w))?;
        run.out.write(&format!("slopes_v{k}.csv"), |w| r.write_slopes_csv(w))?;
        failed |= !r.passed();
        rows.push(json!({ "v": v, "passed": r.passed(), "rows": r.rows }));
    }
    let summary = json!({ "command": "orders", "problem": config.problem, "beta": vc.beta, "tau": vc.tau, "values": rows, "violated": failed });
    finish(run, "orders", config, failed, summary)
}

/// Taylor remainder ladders (and optionally the duality identities) for each spike value.
pub fn cmd_taylor(config: &RunConfig) -> Result<Outcome> {
    let mut run = setup(config)?;
    let paths = simulated(&run, config)?;
    let (set, _) = adjoints(&run, config, &paths, 4)?;
    let vc = &config.variational;
    let mut failed = false;
    let mut rows = Vec::new();
    for (k, v) in spike_values(&run, config).iter().enumerate() {
        let r = taylor_check(&run.reg.problem, &run.reg.base, v, vc.tau, &vc.eps, &set, &paths, vc.band)?;
        run.out.write(&format!("taylor_v{k}.csv"), |w| r.write_csv(w))?;
        failed |= !r.passed;
        let mut entry = json!({ "v": v, "passed": r.passed, "floor_rung": r.floor_rung });
        if vc.duality {
            let d = duality_check(&run.reg.problem, &run.reg.base, v, vc.tau, &vc.eps, &set, &paths, vc.band)?;
            run.out.write(&format!("duality_v{k}.csv"), |w| d.write_csv(w))?;
            failed |= !d.passed();
            entry["duality_passed"] = json!(d.passed());
        }
        rows.push(entry);
    }
    let summary = json!({ "command": "taylor", "problem": config.problem, "tau": vc.tau, "band": vc.band, "values": rows, "violated": failed });
    finish(run, "taylor", config, failed, summary)
}

/// Multilinear Itô residuals on random affine instances across grid levels.
pub fn cmd_ito_check(config: &RunConfig) -> Result<Outcome> {
    let mut run = setup(config)?;
    let ic = &config.ito;
    let finest = *ic.levels.iter().max().ok_or_else(|| Error::Config("ito.levels is empty".into()))?;
    let ens = PathEnsemble::new(TimeGrid::new(finest, 1.0)?, config.paths, config.seed)?;
    let mut results = Vec::new();
    let mut failed = false;
    let mut instance = 0u64;
    for &d in &ic.arities {
        for &n in &ic.dims {
            for _ in 0..ic.instances {
                let sys = random_affine_system(d, n, config.seed.wrapping_add(1000 + instance));
                instance += 1;
                let conv = ito_convergence(&sys, &ens, &ic.levels)?;
                let ok = conv.fit.slope >= ic.min_slope;
                failed |= !ok;
                results.push((d, n, instance - 1, conv, ok));
            }
        }
    }
    run.out.write("ito.csv", |w| {
        writeln!(w, "arity,dim,instance,steps,mean_abs,error")?;
        for (d, n, i, conv, _) in &results {
            for r in &conv.rows {
                writeln!(w, "{d},{n},{i},{},{:e},{:e}", r.steps, r.mean_abs, r.std_error)?;
            }
        }
        Ok(())
    })?;
    let slopes: Vec<_> = results
        .iter()
        .map(|(d, n, i, c, ok)| json!({ "arity": d, "dim": n, "instance": i, "slope": c.fit.slope, "slope_se": c.fit.slope_se, "passed": ok }))
        .collect();
    let summary = json!({ "command": "ito-check", "min_slope": ic.min_slope, "instances": slopes, "violated": failed });
    finish(run, "ito-check", config, failed, summary)
}

/// The problem registry as (id, description) lines.
pub fn cmd_examples() -> Vec<(String, String)> {
    REGISTRY.iter().map(|(id, d)| (id.to_string(), d.to_string())).collect()
}
