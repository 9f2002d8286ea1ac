//! Closed-form oracles for the stochastic solvers, the kernel estimator and
//! the command line.

use std::collections::BTreeMap;

use socheck::adjoint::{fundamental_solution, solve_adjoint_regression};
use socheck::cli::commands::cmd_check;
use socheck::cli::RunConfig;
use socheck::conditions::{martingale_kernel, partial_plus_estimate, SSeries};
use socheck::problem::registry::{additive_noise, gbm, lq, LqParams};
use socheck::problem::{simulate_state, PathEnsemble, TimeGrid};
use socheck::regression::PolyBasis;

fn ensemble(reg: &socheck::problem::registry::RegisteredProblem, steps: usize, paths: usize, seed: u64) -> PathEnsemble {
    let grid = TimeGrid::new(steps, 1.0).unwrap();
    simulate_state(&reg.problem, &reg.base, &PathEnsemble::new(grid, paths, seed).unwrap()).unwrap()
}

#[test]
fn gbm_adjoints_match_closed_form() {
    // h = x²/2: p₁ = −xK, q₁ = −cxK, p₂ = −K with K = exp((2a + c²)(T − t))
    let (a, c) = (0.1, 0.3);
    let reg = gbm(a, c, 1.0, false);
    let paths = ensemble(&reg, 100, 20_000, 3);
    let (set, _) = solve_adjoint_regression(&reg.problem, &reg.base, &paths, 2, &PolyBasis::new(1, 3)).unwrap();
    let grid = paths.grid();
    let states = paths.states().unwrap();
    let (s1, s2) = (set.get(1).unwrap(), set.get(2).unwrap());
    for i in [0, 25, 50, 75, 99] {
        let k = ((2.0 * a + c * c) * (1.0 - grid.node(i))).exp();
        // mean relative error over visited states; single tail points carry regression noise
        let xs: Vec<f64> = (0..200).map(|p| states.at(p, i, 101)[0]).collect();
        let rel = |f: &dyn Fn(f64) -> f64, exact: &dyn Fn(f64) -> f64| xs.iter().map(|x| (f(*x) / exact(*x) - 1.0).abs()).sum::<f64>() / xs.len() as f64;
        let p1 = rel(&|x| s1.p_at(i, &[x]).coeffs()[0], &|x| -x * k);
        let q1 = rel(&|x| s1.q_at(i, &[x]).coeffs()[0], &|x| -c * x * k);
        let p2 = rel(&|x| s2.p_at(i, &[x]).coeffs()[0], &|_| -k);
        assert!(p1 < 0.01 && q1 < 0.03 && p2 < 0.01, "node {i}: relative errors p1 {p1}, q1 {q1}, p2 {p2}");
    }
}

/// P' = −(2a + c²)P + P²/r − q backward from P(T) = g, by midpoint steps.
fn riccati(p: &LqParams, t: f64) -> f64 {
    let steps = 100_000;
    let h = (1.0 - t) / steps as f64;
    let f = |v: f64| (2.0 * p.a + p.c * p.c) * v - v * v / p.r + p.q;
    let mut v = p.g;
    for _ in 0..steps {
        let mid = v + 0.5 * h * f(v);
        v += h * f(mid);
    }
    v
}

#[test]
fn lq_first_adjoint_is_minus_riccati_times_state() {
    let params = LqParams::default();
    let reg = lq(params);
    let paths = ensemble(&reg, 100, 20_000, 5);
    let (set, _) = solve_adjoint_regression(&reg.problem, &reg.base, &paths, 1, &PolyBasis::new(1, 3)).unwrap();
    let grid = paths.grid();
    let states = paths.states().unwrap();
    let s1 = set.get(1).unwrap();
    for i in [0, 30, 60, 90] {
        let pr = riccati(&params, grid.node(i));
        let xs: Vec<f64> = (0..200).map(|p| states.at(p, i, 101)[0]).collect();
        let p1 = xs.iter().map(|x| (s1.p_at(i, &[*x]).coeffs()[0] / (-pr * x) - 1.0).abs()).sum::<f64>() / 200.0;
        let q1 = xs.iter().map(|x| (s1.q_at(i, &[*x]).coeffs()[0] / (-params.c * pr * x) - 1.0).abs()).sum::<f64>() / 200.0;
        assert!(p1 < 0.01 && q1 < 0.03, "node {i}: relative errors p1 {p1}, q1 {q1}");
    }
}

#[test]
fn kernel_of_scaled_brownian_motion() {
    // x = W; 𝕊 = c·W(t) has φ ≡ c, and with δσ ≡ 1, Φ ≡ 1 the double integral is c/2
    let c = 0.7;
    let reg = additive_noise();
    let paths = ensemble(&reg, 64, 20_000, 9);
    let states = paths.states().unwrap();
    let x0 = reg.problem.x0[0];
    let series = SSeries::from_fn(paths.grid(), 1, paths.path_count(), |p, i| vec![c * (states.at(p, i, 65)[0] - x0)]);
    let kernel = martingale_kernel(&series, &paths, 16, 48, &PolyBasis::new(1, 2)).unwrap();
    for (s, t) in [(16, 17), (20, 40), (30, 48)] {
        let m = kernel.phi_mean(s, t)[0];
        assert!((m - c).abs() < 4.0 * kernel.phi_se(s, t)[0] + 1e-3, "φ({s},{t}) = {m}");
    }
    let phi = fundamental_solution(&reg.problem, &reg.base, &paths).unwrap();
    let est = partial_plus_estimate(&kernel, &paths, &phi, 16, &[0.25, 0.125, 0.0625], |_, _| vec![1.0]).unwrap();
    for r in &est.rows {
        assert!((r.half - c / 2.0).abs() < 4.0 * r.se + 1e-3, "θ {}: {} vs {}", r.theta, r.half, c / 2.0);
    }
    assert!((est.value - c).abs() < 4.0 * est.se + 2e-3);
}

#[test]
fn kernel_of_squared_brownian_motion() {
    // 𝕊 = W(t)² − t has φ(s, t) = 2W(s): zero mean, slope 2 in the state
    let reg = additive_noise();
    let paths = ensemble(&reg, 32, 20_000, 13);
    let states = paths.states().unwrap();
    let x0 = reg.problem.x0[0];
    let grid = paths.grid();
    let series = SSeries::from_fn(grid, 1, paths.path_count(), |p, i| {
        let w = states.at(p, i, 33)[0] - x0;
        vec![w * w - grid.node(i)]
    });
    let kernel = martingale_kernel(&series, &paths, 8, 24, &PolyBasis::new(1, 2)).unwrap();
    for (s, t) in [(10, 12), (16, 24)] {
        assert!(kernel.phi_mean(s, t)[0].abs() < 4.0 * kernel.phi_se(s, t)[0] + 1e-3);
        for w in [-0.5, 0.5] {
            let got = kernel.phi_at(s, t, &[x0 + w])[0];
            assert!((got - 2.0 * w).abs() < 0.1, "φ({s},{t}) at W = {w}: {got}");
        }
    }
}

fn check_config(dir: &std::path::Path) -> RunConfig {
    RunConfig { problem: "example1".into(), paths: 500, steps: 64, seed: 17, output: dir.to_path_buf(), params: BTreeMap::new(), ..RunConfig::default() }
}

#[test]
fn check_command_is_reproducible_and_flags_example1() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut ca = check_config(a.path());
    ca.variational.eps = vec![0.25, 0.125, 0.0625];
    let mut cb = ca.clone();
    cb.output = b.path().to_path_buf();
    let ra = cmd_check(&ca).unwrap();
    let rb = cmd_check(&cb).unwrap();
    assert!(ra.violated && rb.violated);
    assert_eq!(ra.summary["headline"], "singular; second-order VIOLATED => not optimal");
    assert_eq!(ra.outputs.len(), rb.outputs.len());
    for (x, y) in ra.outputs.iter().zip(&rb.outputs) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{x:?} differs");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(a.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "check");
    assert!(manifest["outputs"].as_array().unwrap().iter().any(|o| o["path"] == "summary.json"));
}
