//! Control problems, forward simulation, costs and needle variations.

pub mod grid;
pub mod policy;
pub mod registry;
pub mod simulate;

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{ipow, MultilinearForm, VectorForm};

pub use grid::{PathEnsemble, States, TimeGrid};
pub use policy::{BaseControl, ControlPolicy, Spike};
pub use simulate::{cost_difference_crn, evaluate_cost, simulate_path, simulate_state, CostEstimate, DIVERGENCE_BOUND};

/// Value and x-derivatives of an ℝⁿ-valued coefficient.
///
/// `dx[k-1]` is the k-th derivative with layout `[i][j₁…j_k]`.
#[derive(Clone, Debug)]
pub struct VectorJet {
    dim: usize,
    order: usize,
    pub value: Vec<f64>,
    pub dx: Vec<Vec<f64>>,
}

impl VectorJet {
    pub fn new(dim: usize, order: usize) -> Self {
        assert!(order <= 4);
        Self { dim, order, value: vec![0.0; dim], dx: (1..=order).map(|k| vec![0.0; ipow(dim, k + 1)]).collect() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Highest derivative order the field must fill.
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn clear(&mut self) {
        self.value.iter_mut().for_each(|v| *v = 0.0);
        for d in &mut self.dx {
            d.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn derivative(&self, k: usize) -> VectorForm {
        VectorForm::from_coeffs(k, self.dim, self.dx[k - 1].clone()).expect("jet shape")
    }
}

/// Value and x-derivatives of a real-valued coefficient; `dx[k-1]` has n^k entries.
#[derive(Clone, Debug)]
pub struct ScalarJet {
    dim: usize,
    order: usize,
    pub value: f64,
    pub dx: Vec<Vec<f64>>,
}

impl ScalarJet {
    pub fn new(dim: usize, order: usize) -> Self {
        assert!(order <= 4);
        Self { dim, order, value: 0.0, dx: (1..=order).map(|k| vec![0.0; ipow(dim, k)]).collect() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn clear(&mut self) {
        self.value = 0.0;
        for d in &mut self.dx {
            d.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn derivative(&self, k: usize) -> MultilinearForm {
        MultilinearForm::from_coeffs(k, self.dim, self.dx[k - 1].clone()).expect("jet shape")
    }
}

/// First and second u-derivatives. For vector fields `du` is n×m and `duu`
/// n×m×m; for scalar fields `du` has m entries and `duu` m×m.
#[derive(Clone, Debug, PartialEq)]
pub struct UPartials {
    pub du: Vec<f64>,
    pub duu: Vec<f64>,
}

/// An ℝⁿ-valued coefficient (t, x, u) ↦ φ with x-derivatives up to order 4.
pub trait VectorField: Send + Sync {
    /// Overwrites `jet` with the value and derivatives up to `jet.order()`.
    fn eval(&self, t: f64, x: &[f64], u: &[f64], jet: &mut VectorJet);

    fn u_partials(&self, _t: f64, _x: &[f64], _u: &[f64]) -> Option<UPartials> {
        None
    }
}

pub trait ScalarField: Send + Sync {
    fn eval(&self, t: f64, x: &[f64], u: &[f64], jet: &mut ScalarJet);

    fn u_partials(&self, _t: f64, _x: &[f64], _u: &[f64]) -> Option<UPartials> {
        None
    }
}

pub trait TerminalField: Send + Sync {
    fn eval(&self, x: &[f64], jet: &mut ScalarJet);
}

/// Finite control set, or a membership predicate with a finite probe set.
#[derive(Clone)]
pub enum ControlSet {
    Finite(Vec<Vec<f64>>),
    Predicate { contains: Arc<dyn Fn(&[f64]) -> bool + Send + Sync>, probes: Vec<Vec<f64>> },
}

impl ControlSet {
    pub fn contains(&self, u: &[f64]) -> bool {
        match self {
            ControlSet::Finite(pts) => pts.iter().any(|p| p.iter().zip(u).all(|(a, b)| (a - b).abs() <= 1e-12)),
            ControlSet::Predicate { contains, .. } => contains(u),
        }
    }

    /// The probe set V used by the condition tests.
    pub fn probes(&self) -> &[Vec<f64>] {
        match self {
            ControlSet::Finite(pts) => pts,
            ControlSet::Predicate { probes, .. } => probes,
        }
    }
}

impl fmt::Debug for ControlSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlSet::Finite(p) => f.debug_tuple("Finite").field(p).finish(),
            ControlSet::Predicate { probes, .. } => f.debug_struct("Predicate").field("probes", probes).finish(),
        }
    }
}

/// dx = b dt + σ dW, J = E[∫f dt + h(x(T))].
#[derive(Clone)]
pub struct ControlProblem {
    pub name: String,
    pub state_dim: usize,
    pub control_dim: usize,
    pub horizon: f64,
    pub x0: Vec<f64>,
    pub drift: Arc<dyn VectorField>,
    pub diffusion: Arc<dyn VectorField>,
    pub running_cost: Arc<dyn ScalarField>,
    pub terminal_cost: Arc<dyn TerminalField>,
    pub control_set: ControlSet,
}

impl fmt::Debug for ControlProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlProblem")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("control_dim", &self.control_dim)
            .field("horizon", &self.horizon)
            .field("x0", &self.x0)
            .field("control_set", &self.control_set)
            .finish()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LipschitzReport {
    pub drift: f64,
    pub diffusion: f64,
    pub running_cost: f64,
    pub bound: f64,
    pub within_bound: bool,
}

impl ControlProblem {
    pub fn grid(&self, steps: usize) -> Result<TimeGrid> {
        TimeGrid::new(steps, self.horizon)
    }

    /// Samples random inputs and checks every jet keeps its declared shape
    /// and finite entries.
    pub fn check_shapes(&self, samples: usize, seed: u64) -> Result<()> {
        let n = self.state_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vj = VectorJet::new(n, 4);
        let mut sj = ScalarJet::new(n, 4);
        let probes = self.control_set.probes();
        if probes.is_empty() {
            return Err(Error::Config("control set has no probe points".into()));
        }
        for s in 0..samples {
            let x: Vec<f64> = self
                .x0
                .iter()
                .map(|c| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    c + z
                })
                .collect();
            let u = &probes[s % probes.len()];
            if u.len() != self.control_dim {
                return Err(Error::DimMismatch { expected: self.control_dim, got: u.len() });
            }
            let t = self.horizon * (s as f64 + 0.5) / samples as f64;
            for (name, field) in [("drift", &self.drift), ("diffusion", &self.diffusion)] {
                vj.clear();
                field.eval(t, &x, u, &mut vj);
                let ok = vj.value.len() == n
                    && vj.dx.iter().enumerate().all(|(k, d)| d.len() == ipow(n, k + 2))
                    && vj.value.iter().chain(vj.dx.iter().flatten()).all(|v| v.is_finite());
                if !ok {
                    return Err(Error::Config(format!("{name} returned a malformed jet at x = {x:?}")));
                }
            }
            sj.clear();
            self.running_cost.eval(t, &x, u, &mut sj);
            let mut ok = sj.dx.iter().enumerate().all(|(k, d)| d.len() == ipow(n, k + 1)) && sj.value.is_finite();
            sj.clear();
            self.terminal_cost.eval(&x, &mut sj);
            ok &= sj.dx.iter().enumerate().all(|(k, d)| d.len() == ipow(n, k + 1)) && sj.value.is_finite();
            if !ok {
                return Err(Error::Config(format!("cost returned a malformed jet at x = {x:?}")));
            }
        }
        Ok(())
    }

    /// Largest sampled |φ(t,x,u) − φ(t,x̃,u)| / |x − x̃| over a Gaussian cloud around x₀.
    pub fn lipschitz_quotients(&self, samples: usize, bound: f64, seed: u64) -> LipschitzReport {
        let n = self.state_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = VectorJet::new(n, 0);
        let mut b = VectorJet::new(n, 0);
        let mut sa = ScalarJet::new(n, 0);
        let mut sb = ScalarJet::new(n, 0);
        let mut q = [0.0f64; 3];
        let probes = self.control_set.probes();
        for s in 0..samples {
            let x: Vec<f64> = self
                .x0
                .iter()
                .map(|c| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    c + z
                })
                .collect();
            let y: Vec<f64> = x
                .iter()
                .map(|c| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    c + 0.1 * z
                })
                .collect();
            let d = x.iter().zip(&y).map(|(p, r)| (p - r) * (p - r)).sum::<f64>().sqrt();
            if d == 0.0 {
                continue;
            }
            let u = &probes[s % probes.len()];
            let t = self.horizon * (s as f64 + 0.5) / samples as f64;
            for (k, field) in [&self.drift, &self.diffusion].into_iter().enumerate() {
                field.eval(t, &x, u, &mut a);
                field.eval(t, &y, u, &mut b);
                let diff = a.value.iter().zip(&b.value).map(|(p, r)| (p - r) * (p - r)).sum::<f64>().sqrt();
                q[k] = q[k].max(diff / d);
            }
            self.running_cost.eval(t, &x, u, &mut sa);
            self.running_cost.eval(t, &y, u, &mut sb);
            q[2] = q[2].max((sa.value - sb.value).abs() / d);
        }
        LipschitzReport { drift: q[0], diffusion: q[1], running_cost: q[2], bound, within_bound: q.iter().all(|v| *v <= bound) }
    }
}

/// Coefficient jets of a problem at one (t, x, u), reused across calls.
#[derive(Clone, Debug)]
pub struct PointJets {
    pub b: VectorJet,
    pub sigma: VectorJet,
    pub f: ScalarJet,
}

impl PointJets {
    pub fn new(dim: usize, order: usize) -> Self {
        Self { b: VectorJet::new(dim, order), sigma: VectorJet::new(dim, order), f: ScalarJet::new(dim, order) }
    }

    pub fn eval(&mut self, problem: &ControlProblem, t: f64, x: &[f64], u: &[f64]) {
        problem.drift.eval(t, x, u, &mut self.b);
        problem.diffusion.eval(t, x, u, &mut self.sigma);
        problem.running_cost.eval(t, x, u, &mut self.f);
    }
}
