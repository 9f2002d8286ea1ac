//! One needle-perturbed path: base state, perturbed state and y₁…y₄ by Euler
//! steps on shared increments.

use std::sync::Arc;

use super::alg::{Alg, Plain};
use crate::error::{Error, Result};
use crate::problem::{ControlPolicy, ControlProblem, PointJets, ScalarJet, Spike, TimeGrid, VectorJet, DIVERGENCE_BOUND};

/// Derivative data along the base pair at one node. Entries that vanish are None.
#[derive(Clone, Debug, Default)]
pub struct NodeData {
    /// b^{(k)}, σ^{(k)} at (x̄, ū) for k = 1..4 (index k−1).
    pub b: [Option<Vec<f64>>; 4],
    pub s: [Option<Vec<f64>>; 4],
    /// δb^{(k)}, δσ^{(k)} for k = 0..3; only filled on spike cells.
    pub db: [Option<Vec<f64>>; 4],
    pub ds: [Option<Vec<f64>>; 4],
}

fn nz(v: &[f64]) -> Option<Vec<f64>> {
    v.iter().any(|x| *x != 0.0).then(|| v.to_vec())
}

fn diff(a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    nz(&d)
}

impl NodeData {
    pub fn build(problem: &ControlProblem, t: f64, x: &[f64], ubar: &[f64], v: Option<&[f64]>, bar: &mut PointJets, alt: &mut PointJets) -> Self {
        bar.eval(problem, t, x, ubar);
        let mut out = NodeData::default();
        for k in 0..4 {
            out.b[k] = nz(&bar.b.dx[k]);
            out.s[k] = nz(&bar.sigma.dx[k]);
        }
        if let Some(v) = v {
            alt.eval(problem, t, x, v);
            out.db[0] = diff(&alt.b.value, &bar.b.value);
            out.ds[0] = diff(&alt.sigma.value, &bar.sigma.value);
            for k in 1..4 {
                out.db[k] = diff(&alt.b.dx[k - 1], &bar.b.dx[k - 1]);
                out.ds[k] = diff(&alt.sigma.dx[k - 1], &bar.sigma.dx[k - 1]);
            }
        }
        out
    }
}

fn ap<A: Alg>(f: &Option<Vec<f64>>, n: usize, args: &[&A], s: f64, chi: bool, out: &mut A) {
    if let Some(c) = f {
        A::apply(c, n, args, s, chi, out);
    }
}

/// Drift and diffusion of y_j given y₁…y₄, γ = y₁+y₂ and η = y₁+y₂+y₃.
#[allow(clippy::too_many_arguments)]
pub fn y_terms<A: Alg>(j: usize, y: [&A; 4], gamma: &A, eta: &A, c: &NodeData, chi: bool, n: usize, drift: &mut A, diff: &mut A) {
    drift.clear();
    diff.clear();
    let [y1, y2, y3, y4] = y;
    let yj = y[j - 1];
    ap(&c.b[0], n, &[yj], 1.0, false, drift);
    ap(&c.s[0], n, &[yj], 1.0, false, diff);
    match j {
        1 => {
            if chi {
                ap(&c.ds[0], n, &[], 1.0, true, diff);
            }
        }
        2 => {
            ap(&c.b[1], n, &[y1, y1], 0.5, false, drift);
            ap(&c.s[1], n, &[y1, y1], 0.5, false, diff);
            if chi {
                ap(&c.db[0], n, &[], 1.0, true, drift);
                ap(&c.ds[1], n, &[y1], 1.0, true, diff);
            }
        }
        3 => {
            for (f, out) in [(&c.b, &mut *drift), (&c.s, &mut *diff)] {
                ap(&f[1], n, &[gamma, y2], 0.5, false, out);
                ap(&f[1], n, &[y2, y1], 0.5, false, out);
                ap(&f[2], n, &[y1, y1, y1], 1.0 / 6.0, false, out);
            }
            if chi {
                ap(&c.db[1], n, &[y1], 1.0, true, drift);
                ap(&c.ds[1], n, &[y2], 1.0, true, diff);
                ap(&c.ds[2], n, &[y1, y1], 0.5, true, diff);
            }
        }
        4 => {
            let _ = y4;
            for (f, out) in [(&c.b, &mut *drift), (&c.s, &mut *diff)] {
                ap(&f[1], n, &[eta, y3], 0.5, false, out);
                ap(&f[1], n, &[y3, gamma], 0.5, false, out);
                // the seven mixed y₁/y₂ cubic terms: (γ,γ,γ) minus (y₁,y₁,y₁)
                ap(&f[2], n, &[gamma, gamma, gamma], 1.0 / 6.0, false, out);
                ap(&f[2], n, &[y1, y1, y1], -1.0 / 6.0, false, out);
                ap(&f[3], n, &[y1, y1, y1, y1], 1.0 / 24.0, false, out);
            }
            if chi {
                ap(&c.db[1], n, &[y2], 1.0, true, drift);
                ap(&c.db[2], n, &[y1, y1], 0.5, true, drift);
                ap(&c.ds[1], n, &[y3], 1.0, true, diff);
                ap(&c.ds[2], n, &[gamma, y2], 0.5, true, diff);
                ap(&c.ds[2], n, &[y2, y1], 0.5, true, diff);
                ap(&c.ds[3], n, &[y1, y1, y1], 1.0 / 6.0, true, diff);
            }
        }
        _ => unreachable!("variational order {j}"),
    }
}

/// Series of one perturbed path, all of length nodes·n except `ubar` (steps·m).
#[derive(Clone, Debug)]
pub struct PathRun {
    pub xbar: Vec<f64>,
    pub ubar: Vec<f64>,
    pub xeps: Vec<f64>,
    pub y: [Vec<f64>; 4],
    /// Diffusion coefficients of y₁…y₄ at each node (left point of each cell).
    pub ydiff: [Vec<f64>; 4],
    pub data: Vec<Option<Arc<NodeData>>>,
    /// Whether node i shares the reference path's base pair.
    pub shared: Vec<bool>,
    pub cost_bar: f64,
    pub cost_eps: f64,
    pub aborted: bool,
}

impl PathRun {
    fn new(nodes: usize, n: usize, m: usize) -> Self {
        Self {
            xbar: vec![0.0; nodes * n],
            ubar: vec![0.0; (nodes - 1) * m],
            xeps: vec![0.0; nodes * n],
            y: std::array::from_fn(|_| vec![0.0; nodes * n]),
            ydiff: std::array::from_fn(|_| vec![0.0; nodes * n]),
            data: vec![None; nodes],
            shared: vec![false; nodes],
            cost_bar: 0.0,
            cost_eps: 0.0,
            aborted: false,
        }
    }

    pub fn node_data(&self, i: usize) -> &NodeData {
        self.data[i].as_deref().expect("node data from the spike start on")
    }
}

/// Reused buffers for one worker.
pub struct Scratch {
    pub run: PathRun,
    pub dw: Vec<f64>,
    bj: VectorJet,
    sj: VectorJet,
    fj: ScalarJet,
    bar: PointJets,
    alt: PointJets,
    ys: [Plain; 4],
    gamma: Plain,
    eta: Plain,
    drift: Plain,
    dif: Plain,
    next: [Plain; 4],
    u: Vec<f64>,
}

/// Needle variation u^ε = v on E_ε = [τ, τ+ε) and ū (recorded along x̄) elsewhere.
pub struct Needle<'a> {
    pub problem: &'a ControlProblem,
    pub policy: &'a ControlPolicy,
    pub grid: TimeGrid,
    pub spike: Spike,
    pub order: usize,
    reference: Option<PathRun>,
}

impl<'a> Needle<'a> {
    pub fn new(problem: &'a ControlProblem, policy: &'a ControlPolicy, grid: TimeGrid, spike: Spike, order: usize) -> Result<Self> {
        if !(1..=4).contains(&order) {
            return Err(Error::Usage(format!("variational order must be in 1..=4, got {order}")));
        }
        if spike.grid_steps != grid.steps() {
            return Err(Error::GridMismatch(format!("spike built for {} steps, grid has {}", spike.grid_steps, grid.steps())));
        }
        if spike.value.len() != problem.control_dim {
            return Err(Error::DimMismatch { expected: problem.control_dim, got: spike.value.len() });
        }
        if !problem.control_set.contains(&spike.value) {
            return Err(Error::ControlNotAdmissible(spike.value.clone()));
        }
        policy.without_spike().validate(problem, &grid)?;
        Ok(Self { problem, policy, grid, spike, order, reference: None })
    }

    pub fn scratch(&self) -> Scratch {
        let n = self.problem.state_dim;
        let m = self.problem.control_dim;
        let nodes = self.grid.steps() + 1;
        Scratch {
            run: PathRun::new(nodes, n, m),
            dw: vec![0.0; self.grid.steps()],
            bj: VectorJet::new(n, 0),
            sj: VectorJet::new(n, 0),
            fj: ScalarJet::new(n, 0),
            bar: PointJets::new(n, 4),
            alt: PointJets::new(n, 4),
            ys: std::array::from_fn(|_| Plain::zero(n)),
            gamma: Plain::zero(n),
            eta: Plain::zero(n),
            drift: Plain::zero(n),
            dif: Plain::zero(n),
            next: std::array::from_fn(|_| Plain::zero(n)),
            u: vec![0.0; m],
        }
    }

    /// Runs path 0 of the increments in `dw` as the reference whose node data
    /// are shared with every path that has the same base pair.
    pub fn prepare(&mut self, dw: &[f64]) -> Result<()> {
        let mut sc = self.scratch();
        sc.dw.copy_from_slice(dw);
        self.run_into(&mut sc)?;
        self.reference = Some(sc.run);
        Ok(())
    }

    pub fn reference(&self) -> Option<&PathRun> {
        self.reference.as_ref()
    }

    /// Fills `sc.run` from the increments in `sc.dw`.
    pub fn run_into(&self, sc: &mut Scratch) -> Result<()> {
        let p = self.problem;
        let (n, m) = (p.state_dim, p.control_dim);
        let steps = self.grid.steps();
        let dt = self.grid.dt();
        let start = self.spike.start;
        let run = &mut sc.run;
        run.aborted = false;
        run.xbar[..n].copy_from_slice(&p.x0);

        // base path, recording ū and the running cost prefix up to the spike
        let mut cost = 0.0;
        let mut prefix = 0.0;
        for i in 0..steps {
            if i == start {
                prefix = cost;
            }
            let t = self.grid.node(i);
            let (head, tail) = run.xbar.split_at_mut((i + 1) * n);
            let x = &head[i * n..];
            let u = &mut run.ubar[i * m..(i + 1) * m];
            self.policy.base_control(i, t, x, u);
            p.drift.eval(t, x, u, &mut sc.bj);
            p.diffusion.eval(t, x, u, &mut sc.sj);
            p.running_cost.eval(t, x, u, &mut sc.fj);
            cost += sc.fj.value * dt;
            for k in 0..n {
                let v = x[k] + sc.bj.value[k] * dt + sc.sj.value[k] * sc.dw[i];
                if !(v.abs() <= DIVERGENCE_BOUND) {
                    run.aborted = true;
                    return Ok(());
                }
                tail[k] = v;
            }
        }
        if start == steps {
            prefix = cost;
        }
        p.terminal_cost.eval(&run.xbar[steps * n..], &mut sc.fj);
        run.cost_bar = cost + sc.fj.value;

        // perturbed path with the recorded open-loop ū outside E_ε
        run.xeps[..(start + 1) * n].copy_from_slice(&run.xbar[..(start + 1) * n]);
        let mut cost = prefix;
        for i in start..steps {
            let t = self.grid.node(i);
            let (head, tail) = run.xeps.split_at_mut((i + 1) * n);
            let x = &head[i * n..];
            let u: &[f64] = if self.spike.contains(i) { &self.spike.value } else { &run.ubar[i * m..(i + 1) * m] };
            p.drift.eval(t, x, u, &mut sc.bj);
            p.diffusion.eval(t, x, u, &mut sc.sj);
            p.running_cost.eval(t, x, u, &mut sc.fj);
            cost += sc.fj.value * dt;
            for k in 0..n {
                let v = x[k] + sc.bj.value[k] * dt + sc.sj.value[k] * sc.dw[i];
                if !(v.abs() <= DIVERGENCE_BOUND) {
                    run.aborted = true;
                    return Ok(());
                }
                tail[k] = v;
            }
        }
        p.terminal_cost.eval(&run.xeps[steps * n..], &mut sc.fj);
        run.cost_eps = cost + sc.fj.value;

        // node data from the spike start on
        for i in 0..=steps {
            run.shared[i] = false;
            if i < start {
                run.data[i] = None;
                continue;
            }
            let cell = i.min(steps - 1);
            let x = &run.xbar[i * n..(i + 1) * n];
            let u = &run.ubar[cell * m..(cell + 1) * m];
            let chi = i < steps && self.spike.contains(i);
            if let Some(r) = &self.reference {
                if !r.aborted && x == &r.xbar[i * n..(i + 1) * n] && u == &r.ubar[cell * m..(cell + 1) * m] {
                    run.data[i] = r.data[i].clone();
                    run.shared[i] = true;
                    continue;
                }
            }
            let v = chi.then_some(self.spike.value.as_slice());
            sc.u.copy_from_slice(u);
            let d = NodeData::build(p, self.grid.node(i), x, &sc.u, v, &mut sc.bar, &mut sc.alt);
            run.data[i] = Some(Arc::new(d));
        }

        // y₁…y_k, zero before the spike
        for y in run.y.iter_mut().chain(run.ydiff.iter_mut()) {
            y.iter_mut().for_each(|v| *v = 0.0);
        }
        sc.ys.iter_mut().for_each(|y| y.clear());
        for i in start..=steps {
            let chi = i < steps && self.spike.contains(i);
            for (j, y) in sc.ys.iter().enumerate() {
                run.y[j][i * n..(i + 1) * n].copy_from_slice(&y.0);
            }
            sc.gamma.clear();
            sc.gamma.add_scaled(1.0, &sc.ys[0]);
            sc.gamma.add_scaled(1.0, &sc.ys[1]);
            sc.eta.clear();
            sc.eta.add_scaled(1.0, &sc.gamma);
            sc.eta.add_scaled(1.0, &sc.ys[2]);
            let c = run.data[i].as_deref().expect("node data");
            for j in 1..=self.order {
                let ys = [&sc.ys[0], &sc.ys[1], &sc.ys[2], &sc.ys[3]];
                y_terms(j, ys, &sc.gamma, &sc.eta, c, chi, n, &mut sc.drift, &mut sc.dif);
                run.ydiff[j - 1][i * n..(i + 1) * n].copy_from_slice(&sc.dif.0);
                if i < steps {
                    for k in 0..n {
                        sc.next[j - 1].0[k] = sc.ys[j - 1].0[k] + sc.drift.0[k] * dt + sc.dif.0[k] * sc.dw[i];
                    }
                }
            }
            if i < steps {
                for j in 0..self.order {
                    std::mem::swap(&mut sc.ys[j], &mut sc.next[j]);
                }
            }
        }
        Ok(())
    }
}
