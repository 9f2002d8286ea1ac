//! Acceptance run: one PASS/FAIL line per criterion, with timings.
//! Lines go straight to stderr so they show without --nocapture.

mod common;

use std::io::Write;
use std::time::Instant;

use socheck::adjoint::{duality_check, solve_adjoint_deterministic, solve_adjoint_regression, AdjointSet};
use socheck::conditions::{second_order_pointwise_test, second_order_zero_s_test, AdjointPoint, CheckSettings, Functionals, PairJets, Verdict};
use socheck::problem::registry::{example1, example2, RegisteredProblem};
use socheck::problem::{simulate_state, PathEnsemble, TimeGrid};
use socheck::regression::PolyBasis;
use socheck::tensor::ito::{ito_convergence, random_affine_system};
use socheck::variational::{fit_orders, taylor_check, OrderTolerances};

struct Outcome {
    passed: bool,
    detail: String,
}

fn line(text: &str) {
    let mut e = std::io::stderr().lock();
    let _ = writeln!(e, "{text}");
}

fn criterion(id: u32, name: &str, limit_s: f64, f: impl FnOnce() -> Outcome) -> bool {
    let t0 = Instant::now();
    let o = f();
    let secs = t0.elapsed().as_secs_f64();
    let ok = o.passed && secs < limit_s;
    line(&format!("[acceptance] {id} {name}: {} ({:.1} s, limit {limit_s} s) {}", if ok { "PASS" } else { "FAIL" }, secs, o.detail));
    ok
}

fn setup(reg: &RegisteredProblem, steps: usize, paths: usize, seed: u64) -> PathEnsemble {
    let grid = TimeGrid::new(steps, reg.problem.horizon).unwrap();
    simulate_state(&reg.problem, &reg.base, &PathEnsemble::new(grid, paths, seed).unwrap()).unwrap()
}

fn ladder(from: i32, to: i32) -> Vec<f64> {
    (from..=to).map(|k| 0.5f64.powi(k)).collect()
}

fn example1_adjoints() -> Outcome {
    let reg = example1(0.5, 1.0);
    let paths = setup(&reg, 1000, 4, 1);
    let set = solve_adjoint_deterministic(&reg.problem, &reg.base, &paths, 4).unwrap();
    let want = [(0.0, 0.0), (1.0, 0.0), (0.0, 0.0), (0.0, 0.0)];
    let mut err: f64 = 0.0;
    for (k, (p, q)) in want.iter().enumerate() {
        let s = set.get(k + 1).unwrap();
        for i in 0..=1000 {
            err = err.max((s.p_at(i, &[0.0]).coeffs()[0] - p).abs()).max((s.q_at(i, &[0.0]).coeffs()[0] - q).abs());
        }
    }
    Outcome { passed: err <= 1e-10, detail: format!("max |error| = {err:.2e}") }
}

fn example1_functionals() -> Outcome {
    let (b0, b1) = (0.5, 1.0);
    let reg = example1(b0, b1);
    let paths = setup(&reg, 1000, 4, 1);
    let set = solve_adjoint_deterministic(&reg.problem, &reg.base, &paths, 4).unwrap();
    let grid = paths.grid();
    let mut jets = PairJets::new(1);
    let mut err: f64 = 0.0;
    for v in [-1.0, 0.0, 1.0] {
        for i in 0..=1000 {
            jets.eval(&reg.problem, grid.node(i), &[0.0], &[0.0], &[v]);
            let f = Functionals::eval(&jets, &AdjointPoint::from_set(&set, i, &[0.0])).unwrap();
            // b(0) = b0, b_x(0) = b1
            err = err.max((f.s[0] - b0 * v).abs()).max((f.t[0] - 2.0 * b1 * v).abs());
        }
    }
    let report =
        second_order_pointwise_test(&reg.problem, &reg.base, &paths, &set, &CheckSettings::new(vec![vec![1.0]]), &socheck::conditions::GradientS::Auto)
            .unwrap();
    let target = b0 * b0 + b1;
    let dev = report.rows.iter().map(|r| (r.total - target).abs()).fold(0.0, f64::max);
    let flagged = report.rows.iter().all(|r| r.verdict == Verdict::Violated) && report.verdict == Verdict::Violated;
    Outcome {
        passed: err <= 1e-8 && dev <= 1e-8 && flagged,
        detail: format!("max |S,T error| = {err:.2e}, test value {:.10} (target {target}), verdict {}", report.rows[0].total, report.verdict.as_str()),
    }
}

fn example2_closed_form() -> Outcome {
    let reg = example2(1.0);
    let paths = setup(&reg, 1000, 4, 1);
    let set = solve_adjoint_deterministic(&reg.problem, &reg.base, &paths, 4).unwrap();
    let grid = paths.grid();
    let p4 = set.get(4).unwrap();
    let mut rel_p: f64 = 0.0;
    let mut rel_t: f64 = 0.0;
    let mut jets = PairJets::new(1);
    for i in 0..=1000 {
        let t = grid.node(i);
        let exact = -(6.0 - 6.0 * t).exp();
        rel_p = rel_p.max((p4.p_at(i, &[1.0]).coeffs()[0] - exact).abs() / exact.abs());
        let adj = AdjointPoint::from_set(&set, i, &[1.0]);
        for v in [-1.0, 0.0, 1.0] {
            jets.eval(&reg.problem, t, &[1.0], &[1.0], &[v]);
            let f = Functionals::eval(&jets, &adj).unwrap();
            let want = 0.5 * exact * (v - 1.0) * (v - 1.0);
            rel_t = rel_t.max((f.t[0] - want).abs() / want.abs().max(1.0));
        }
    }
    let p0 = p4.p_at(0, &[1.0]).coeffs()[0];
    let zero_s = second_order_zero_s_test(&reg.problem, &reg.base, &paths, &set, &CheckSettings::new(reg.problem.control_set.probes().to_vec())).unwrap();
    Outcome {
        passed: rel_p < 1e-4 && rel_t < 1e-4 && (p0 + 403.42879).abs() < 1e-3 * 403.42879 && zero_s.verdict == Verdict::Satisfied,
        detail: format!("p4 max rel err {rel_p:.2e}, p4(0) = {p0:.5}, T max rel err {rel_t:.2e}, zero-S test {}", zero_s.verdict.as_str()),
    }
}

fn regression_oracle() -> Outcome {
    let reg = example2(1.0);
    let paths = setup(&reg, 100, 100_000, 11);
    let (set, _) = solve_adjoint_regression(&reg.problem, &reg.base, &paths, 4, &PolyBasis::new(1, 3)).unwrap();
    let grid = paths.grid();
    let (ps, _) = set.get(4).unwrap().mean_series(paths.states().unwrap());
    let worst = ps.iter().enumerate().map(|(i, p)| {
        let exact = -(6.0 - 6.0 * grid.node(i)).exp();
        (p[0] - exact).abs() / exact.abs()
    });
    let worst = worst.fold(0.0, f64::max);
    Outcome { passed: worst < 0.05, detail: format!("p4 max rel err {worst:.2e}") }
}

fn order_fit() -> Outcome {
    let reg = example2(1.0);
    let grid = TimeGrid::new(512, 1.0).unwrap();
    let paths = PathEnsemble::new(grid, 100_000, 21).unwrap();
    let tol = OrderTolerances { y1: 0.15, other: 0.25 };
    let r = fit_orders(&reg.problem, &reg.base, &[-1.0], 0.25, &ladder(4, 9), 2.0, &paths, tol).unwrap();
    let mut ok = true;
    let mut detail = Vec::new();
    for (q, want, band) in [("y1", 1.0, 0.15), ("y2", 2.0, 0.25), ("r1", 2.0, 0.25)] {
        let row = r.row(q).unwrap();
        ok &= (row.slope - want).abs() <= band;
        detail.push(format!("{q} {:.3}±{:.3}", row.slope, row.slope_se));
    }
    Outcome { passed: ok, detail: detail.join(", ") }
}

fn taylor_for(reg: &RegisteredProblem, paths: &PathEnsemble, set: &AdjointSet, name: &str) -> (bool, Vec<String>) {
    let mut ok = true;
    let mut detail = Vec::new();
    for v in reg.problem.control_set.probes() {
        let r = taylor_check(&reg.problem, &reg.base, v, 0.25, &ladder(2, 9), set, paths, 3.0).unwrap();
        let trivial = r.rows.iter().all(|row| row.remainder == 0.0 && row.remainder_se == 0.0);
        let reached = trivial || r.floor_rung.is_some();
        ok &= r.passed && reached;
        detail.push(format!("{name} v={} {}", v[0], if trivial { "zero".to_string() } else { format!("floor at rung {:?}", r.floor_rung) }));
    }
    (ok, detail)
}

fn taylor() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, reg) in [("ex1", example1(0.5, 1.0)), ("ex2", example2(1.0))] {
        let paths = setup(&reg, 512, 20_000, 31);
        let set = solve_adjoint_deterministic(&reg.problem, &reg.base, &paths, 4).unwrap();
        let (o, d) = taylor_for(&reg, &paths, &set, name);
        ok &= o;
        detail.extend(d);
    }
    Outcome { passed: ok, detail: detail.join("; ") }
}

fn ito() -> Outcome {
    let ens = PathEnsemble::new(TimeGrid::new(1024, 1.0).unwrap(), 2000, 41).unwrap();
    let levels = [64, 128, 256, 512, 1024];
    let mut worst = f64::INFINITY;
    let mut seed = 100;
    for d in 1..=3 {
        for n in 1..=2 {
            seed += 1;
            let conv = ito_convergence(&random_affine_system(d, n, seed), &ens, &levels).unwrap();
            worst = worst.min(conv.fit.slope);
        }
    }
    Outcome { passed: worst >= 0.4, detail: format!("min slope {worst:.3}") }
}

fn duality() -> Outcome {
    let reg = example1(0.5, 1.0);
    let paths = setup(&reg, 256, 100_000, 51);
    let set = solve_adjoint_deterministic(&reg.problem, &reg.base, &paths, 4).unwrap();
    let r = duality_check(&reg.problem, &reg.base, &[1.0], 0.25, &ladder(2, 8), &set, &paths, 3.0).unwrap();
    let detail: Vec<String> = r.identities.iter().map(|s| format!("k={} floor {:?}", s.order, s.floor_rung)).collect();
    Outcome { passed: r.passed(), detail: detail.join(", ") }
}

fn properties() -> Outcome {
    let mut failures = Vec::new();
    for seed in 0..16u64 {
        let arity = 1 + (seed % 4) as usize;
        let n = 1 + (seed % 3) as usize;
        for (name, res) in [
            ("multilinearity", common::multilinearity(seed, arity, n)),
            ("identity composition", common::identity_composition(seed, arity, n)),
            ("spike locality", common::spike_locality(seed, (seed * 7) as usize, (seed * 13) as usize)),
            ("terminal exactness", common::terminal_exactness(seed)),
            ("zero tests at v = ū", common::zero_at_ubar(seed)),
            ("determinism", common::determinism(seed)),
        ] {
            if let Err(e) = res {
                failures.push(format!("{name} (seed {seed}): {e}"));
            }
        }
    }
    Outcome { passed: failures.is_empty(), detail: failures.join("; ") }
}

#[test]
fn acceptance() {
    let results = [
        criterion(1, "example 1 adjoints", 1.0, example1_adjoints),
        criterion(2, "example 1 test functionals", 1.0, example1_functionals),
        criterion(3, "example 2 closed form", 5.0, example2_closed_form),
        criterion(4, "regression solver vs closed form", 120.0, regression_oracle),
        criterion(5, "variational order slopes", 300.0, order_fit),
        criterion(6, "taylor remainder ladders", 600.0, taylor),
        criterion(7, "multilinear ito slopes", 120.0, ito),
        criterion(8, "duality identities", 600.0, duality),
        criterion(9, "property suites", 60.0, properties),
    ];
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, ok)| !**ok).map(|(i, _)| i + 1).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
