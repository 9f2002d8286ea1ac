//! Built-in problems and coefficient families.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{ControlPolicy, ControlProblem, ControlSet, ScalarField, ScalarJet, TerminalField, UPartials, VectorField, VectorJet};

/// A problem together with its reference control ū.
#[derive(Clone, Debug)]
pub struct RegisteredProblem {
    pub problem: ControlProblem,
    pub base: ControlPolicy,
    pub description: String,
}

pub const REGISTRY: &[(&str, &str)] = &[
    ("example1", "dx = b(x)u dt + u dW, b(x) = b0 + b1·sin x, J = ½E∫u² − ½E x(1)², ū ≡ 0"),
    ("example2", "dx = (u−1)dt + (x−u)dW, x0 = 1, J = E(x(1)−1)⁴/24, ū ≡ 1"),
    ("example2-flipped", "example2 with terminal cost −(x−1)⁴/24"),
    ("lq", "dx = (a x + u)dt + c x dW, f = ½(q x² + r u²), h = ½ g x², Riccati feedback ū"),
    ("lq-suboptimal", "lq dynamics with ū ≡ 0"),
    ("gbm", "dx = a x dt + c x dW, h = ½x² (or h = x with linear_terminal = 1), ū ≡ 0"),
    ("additive-noise", "dx = dW, zero cost"),
    ("zero", "dx = 0, zero cost"),
    ("poly1d", "1-D polynomial family in (x − center) and u from the config"),
];

/// Σ c·(x − center)^px·u^pu.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Poly {
    #[serde(default)]
    pub center: f64,
    /// Terms (coefficient, power of x − center, power of u).
    #[serde(default)]
    pub terms: Vec<(f64, u32, u32)>,
}

fn falling(p: u32, k: u32) -> f64 {
    (0..k).map(|j| (p - j) as f64).product()
}

impl Poly {
    pub fn new(center: f64, terms: Vec<(f64, u32, u32)>) -> Self {
        Self { center, terms }
    }

    /// k-th x-derivative (l-th u-derivative) at (x, u).
    pub fn partial(&self, x: f64, u: f64, kx: u32, ku: u32) -> f64 {
        let z = x - self.center;
        self.terms
            .iter()
            .filter(|(_, px, pu)| *px >= kx && *pu >= ku)
            .map(|(c, px, pu)| c * falling(*px, kx) * z.powi((px - kx) as i32) * falling(*pu, ku) * u.powi((pu - ku) as i32))
            .sum()
    }
}

/// One-dimensional polynomial coefficients.
#[derive(Clone, Debug)]
pub struct PolyField(pub Poly);

impl VectorField for PolyField {
    fn eval(&self, _t: f64, x: &[f64], u: &[f64], jet: &mut VectorJet) {
        let uu = u.first().copied().unwrap_or(0.0);
        jet.value[0] = self.0.partial(x[0], uu, 0, 0);
        for k in 0..jet.order() {
            jet.dx[k][0] = self.0.partial(x[0], uu, k as u32 + 1, 0);
        }
    }

    fn u_partials(&self, _t: f64, x: &[f64], u: &[f64]) -> Option<UPartials> {
        Some(UPartials { du: vec![self.0.partial(x[0], u[0], 0, 1)], duu: vec![self.0.partial(x[0], u[0], 0, 2)] })
    }
}

impl ScalarField for PolyField {
    fn eval(&self, _t: f64, x: &[f64], u: &[f64], jet: &mut ScalarJet) {
        let uu = u.first().copied().unwrap_or(0.0);
        jet.value = self.0.partial(x[0], uu, 0, 0);
        for k in 0..jet.order() {
            jet.dx[k][0] = self.0.partial(x[0], uu, k as u32 + 1, 0);
        }
    }

    fn u_partials(&self, _t: f64, x: &[f64], u: &[f64]) -> Option<UPartials> {
        Some(UPartials { du: vec![self.0.partial(x[0], u[0], 0, 1)], duu: vec![self.0.partial(x[0], u[0], 0, 2)] })
    }
}

impl TerminalField for PolyField {
    fn eval(&self, x: &[f64], jet: &mut ScalarJet) {
        jet.value = self.0.partial(x[0], 0.0, 0, 0);
        for k in 0..jet.order() {
            jet.dx[k][0] = self.0.partial(x[0], 0.0, k as u32 + 1, 0);
        }
    }
}

/// b(x)·u with b(x) = b0 + b1·sin x.
#[derive(Clone, Debug)]
pub struct SineDrift {
    pub b0: f64,
    pub b1: f64,
}

impl SineDrift {
    /// k-th derivative of b at x.
    pub fn b(&self, x: f64, k: usize) -> f64 {
        let s = match k % 4 {
            0 => x.sin(),
            1 => x.cos(),
            2 => -x.sin(),
            _ => -x.cos(),
        };
        if k == 0 {
            self.b0 + self.b1 * s
        } else {
            self.b1 * s
        }
    }
}

impl VectorField for SineDrift {
    fn eval(&self, _t: f64, x: &[f64], u: &[f64], jet: &mut VectorJet) {
        jet.value[0] = self.b(x[0], 0) * u[0];
        for k in 0..jet.order() {
            jet.dx[k][0] = self.b(x[0], k + 1) * u[0];
        }
    }

    fn u_partials(&self, _t: f64, x: &[f64], _u: &[f64]) -> Option<UPartials> {
        Some(UPartials { du: vec![self.b(x[0], 0)], duu: vec![0.0] })
    }
}

/// b = A x + B u (or σ = C x + D u) on ℝⁿ with m controls.
#[derive(Clone, Debug)]
pub struct LinearField {
    pub n: usize,
    pub m: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl VectorField for LinearField {
    fn eval(&self, _t: f64, x: &[f64], u: &[f64], jet: &mut VectorJet) {
        let (n, m) = (self.n, self.m);
        for i in 0..n {
            jet.value[i] = (0..n).map(|j| self.a[i * n + j] * x[j]).sum::<f64>() + (0..m).map(|j| self.b[i * m + j] * u[j]).sum::<f64>();
        }
        if jet.order() >= 1 {
            jet.dx[0].copy_from_slice(&self.a);
        }
        for k in 1..jet.order() {
            jet.dx[k].iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn u_partials(&self, _t: f64, _x: &[f64], _u: &[f64]) -> Option<UPartials> {
        Some(UPartials { du: self.b.clone(), duu: vec![0.0; self.n * self.m * self.m] })
    }
}

/// ½xᵀQx + ½r|u|² (running) or ½xᵀGx + gᵀx + Σ kᵢxᵢ⁴/24 (terminal).
#[derive(Clone, Debug)]
pub struct QuadraticCost {
    pub n: usize,
    pub q: Vec<f64>,
    pub r: f64,
    pub linear: Vec<f64>,
    pub quartic: Vec<f64>,
}

impl QuadraticCost {
    fn fill(&self, x: &[f64], u: &[f64], jet: &mut ScalarJet) {
        let n = self.n;
        let mut v = 0.0;
        for i in 0..n {
            for j in 0..n {
                v += 0.5 * self.q[i * n + j] * x[i] * x[j];
            }
            v += self.linear[i] * x[i] + self.quartic[i] * x[i].powi(4) / 24.0;
        }
        v += 0.5 * self.r * u.iter().map(|c| c * c).sum::<f64>();
        jet.value = v;
        for d in jet.dx.iter_mut() {
            d.iter_mut().for_each(|c| *c = 0.0);
        }
        if jet.order() >= 1 {
            for i in 0..n {
                jet.dx[0][i] =
                    (0..n).map(|j| 0.5 * (self.q[i * n + j] + self.q[j * n + i]) * x[j]).sum::<f64>() + self.linear[i] + self.quartic[i] * x[i].powi(3) / 6.0;
            }
        }
        if jet.order() >= 2 {
            for i in 0..n {
                for j in 0..n {
                    jet.dx[1][i * n + j] = 0.5 * (self.q[i * n + j] + self.q[j * n + i]);
                }
                jet.dx[1][i * n + i] += self.quartic[i] * x[i] * x[i] / 2.0;
            }
        }
        if jet.order() >= 3 {
            for i in 0..n {
                jet.dx[2][(i * n + i) * n + i] = self.quartic[i] * x[i];
            }
        }
        if jet.order() >= 4 {
            for i in 0..n {
                jet.dx[3][((i * n + i) * n + i) * n + i] = self.quartic[i];
            }
        }
    }
}

impl ScalarField for QuadraticCost {
    fn eval(&self, _t: f64, x: &[f64], u: &[f64], jet: &mut ScalarJet) {
        self.fill(x, u, jet);
    }

    fn u_partials(&self, _t: f64, _x: &[f64], u: &[f64]) -> Option<UPartials> {
        let m = u.len();
        let mut duu = vec![0.0; m * m];
        for i in 0..m {
            duu[i * m + i] = self.r;
        }
        Some(UPartials { du: u.iter().map(|c| self.r * c).collect(), duu })
    }
}

impl TerminalField for QuadraticCost {
    fn eval(&self, x: &[f64], jet: &mut ScalarJet) {
        self.fill(x, &[], jet);
    }
}

fn finite(points: &[f64]) -> ControlSet {
    ControlSet::Finite(points.iter().map(|p| vec![*p]).collect())
}

fn poly_problem(name: &str, x0: f64, b: Poly, s: Poly, f: Poly, h: Poly, set: ControlSet) -> ControlProblem {
    ControlProblem {
        name: name.into(),
        state_dim: 1,
        control_dim: 1,
        horizon: 1.0,
        x0: vec![x0],
        drift: Arc::new(PolyField(b)),
        diffusion: Arc::new(PolyField(s)),
        running_cost: Arc::new(PolyField(f)),
        terminal_cost: Arc::new(PolyField(h)),
        control_set: set,
    }
}

pub fn example1(b0: f64, b1: f64) -> RegisteredProblem {
    let problem = ControlProblem {
        name: "example1".into(),
        state_dim: 1,
        control_dim: 1,
        horizon: 1.0,
        x0: vec![0.0],
        drift: Arc::new(SineDrift { b0, b1 }),
        diffusion: Arc::new(PolyField(Poly::new(0.0, vec![(1.0, 0, 1)]))),
        running_cost: Arc::new(PolyField(Poly::new(0.0, vec![(0.5, 0, 2)]))),
        terminal_cost: Arc::new(PolyField(Poly::new(0.0, vec![(-0.5, 2, 0)]))),
        control_set: finite(&[-1.0, 0.0, 1.0]),
    };
    RegisteredProblem { problem, base: ControlPolicy::constant(vec![0.0]), description: REGISTRY[0].1.into() }
}

pub fn example2(sign: f64) -> RegisteredProblem {
    let problem = poly_problem(
        if sign > 0.0 { "example2" } else { "example2-flipped" },
        1.0,
        Poly::new(0.0, vec![(1.0, 0, 1), (-1.0, 0, 0)]),
        Poly::new(0.0, vec![(1.0, 1, 0), (-1.0, 0, 1)]),
        Poly::default(),
        Poly::new(1.0, vec![(sign / 24.0, 4, 0)]),
        finite(&[-1.0, 0.0, 1.0]),
    );
    let idx = if sign > 0.0 { 1 } else { 2 };
    RegisteredProblem { problem, base: ControlPolicy::constant(vec![1.0]), description: REGISTRY[idx].1.into() }
}

/// Parameters of the scalar LQ toy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LqParams {
    pub a: f64,
    pub c: f64,
    pub q: f64,
    pub r: f64,
    pub g: f64,
    pub x0: f64,
}

impl Default for LqParams {
    fn default() -> Self {
        Self { a: 0.5, c: 0.3, q: 1.0, r: 1.0, g: 1.0, x0: 1.0 }
    }
}

/// Riccati P' = −(2a + c²)P + P²/r − q, P(T) = g, tabulated by RK4.
#[derive(Clone, Debug)]
pub struct Riccati {
    horizon: f64,
    values: Vec<f64>,
}

impl Riccati {
    pub fn solve(p: &LqParams, horizon: f64, steps: usize) -> Self {
        let rhs = |v: f64| -(2.0 * p.a + p.c * p.c) * v + v * v / p.r - p.q;
        let h = horizon / steps as f64;
        let mut values = vec![0.0; steps + 1];
        values[steps] = p.g;
        for i in (0..steps).rev() {
            let v = values[i + 1];
            // integrate backward: dv/ds = −rhs with s = T − t
            let k1 = -rhs(v);
            let k2 = -rhs(v + 0.5 * h * k1);
            let k3 = -rhs(v + 0.5 * h * k2);
            let k4 = -rhs(v + h * k3);
            values[i] = v + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        Self { horizon, values }
    }

    pub fn at(&self, t: f64) -> f64 {
        let n = self.values.len() - 1;
        let s = (t / self.horizon * n as f64).clamp(0.0, n as f64);
        let i = (s.floor() as usize).min(n - 1);
        let w = s - i as f64;
        (1.0 - w) * self.values[i] + w * self.values[i + 1]
    }
}

fn lq_problem(name: &str, p: &LqParams) -> ControlProblem {
    let probes = vec![vec![-1.0], vec![-0.5], vec![0.0], vec![0.5], vec![1.0]];
    poly_problem(
        name,
        p.x0,
        Poly::new(0.0, vec![(p.a, 1, 0), (1.0, 0, 1)]),
        Poly::new(0.0, vec![(p.c, 1, 0)]),
        Poly::new(0.0, vec![(0.5 * p.q, 2, 0), (0.5 * p.r, 0, 2)]),
        Poly::new(0.0, vec![(0.5 * p.g, 2, 0)]),
        ControlSet::Predicate { contains: Arc::new(|u: &[f64]| u[0].abs() <= 100.0), probes },
    )
}

/// LQ toy under its optimal feedback ū = −P(t)x/r.
pub fn lq(p: LqParams) -> RegisteredProblem {
    let ric = Riccati::solve(&p, 1.0, 20_000);
    let r = p.r;
    let base = ControlPolicy::feedback(1, Arc::new(move |t, x, out| out[0] = -ric.at(t) * x[0] / r));
    RegisteredProblem { problem: lq_problem("lq", &p), base, description: REGISTRY[3].1.into() }
}

pub fn lq_suboptimal(p: LqParams) -> RegisteredProblem {
    RegisteredProblem { problem: lq_problem("lq-suboptimal", &p), base: ControlPolicy::constant(vec![0.0]), description: REGISTRY[4].1.into() }
}

/// Geometric Brownian motion with quadratic (or linear) terminal cost.
pub fn gbm(a: f64, c: f64, x0: f64, linear_terminal: bool) -> RegisteredProblem {
    let h = if linear_terminal { Poly::new(0.0, vec![(1.0, 1, 0)]) } else { Poly::new(0.0, vec![(0.5, 2, 0)]) };
    let problem = poly_problem("gbm", x0, Poly::new(0.0, vec![(a, 1, 0)]), Poly::new(0.0, vec![(c, 1, 0)]), Poly::default(), h, finite(&[0.0]));
    RegisteredProblem { problem, base: ControlPolicy::constant(vec![0.0]), description: REGISTRY[5].1.into() }
}

pub fn additive_noise() -> RegisteredProblem {
    let problem = poly_problem("additive-noise", 0.0, Poly::default(), Poly::new(0.0, vec![(1.0, 0, 0)]), Poly::default(), Poly::default(), finite(&[0.0]));
    RegisteredProblem { problem, base: ControlPolicy::constant(vec![0.0]), description: REGISTRY[6].1.into() }
}

pub fn zero(x0: f64) -> RegisteredProblem {
    let problem = poly_problem("zero", x0, Poly::default(), Poly::default(), Poly::default(), Poly::default(), finite(&[-1.0, 0.0, 1.0]));
    RegisteredProblem { problem, base: ControlPolicy::constant(vec![0.0]), description: REGISTRY[7].1.into() }
}

/// Coefficients of the `poly1d` family.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PolySpec {
    #[serde(default)]
    pub drift: Poly,
    #[serde(default)]
    pub diffusion: Poly,
    #[serde(default)]
    pub running_cost: Poly,
    #[serde(default)]
    pub terminal_cost: Poly,
    #[serde(default)]
    pub x0: f64,
    #[serde(default = "default_controls")]
    pub controls: Vec<f64>,
    #[serde(default)]
    pub base_control: f64,
}

fn default_controls() -> Vec<f64> {
    vec![-1.0, 0.0, 1.0]
}

pub fn poly1d(spec: &PolySpec) -> RegisteredProblem {
    let problem = poly_problem(
        "poly1d",
        spec.x0,
        spec.drift.clone(),
        spec.diffusion.clone(),
        spec.running_cost.clone(),
        spec.terminal_cost.clone(),
        finite(&spec.controls),
    );
    RegisteredProblem { problem, base: ControlPolicy::constant(vec![spec.base_control]), description: REGISTRY[8].1.into() }
}

fn param(params: &BTreeMap<String, f64>, key: &str, default: f64) -> f64 {
    params.get(key).copied().unwrap_or(default)
}

fn check_keys(id: &str, params: &BTreeMap<String, f64>, allowed: &[&str]) -> Result<()> {
    for k in params.keys() {
        if !allowed.contains(&k.as_str()) {
            return Err(Error::Config(format!("problem '{id}' has no parameter '{k}' (allowed: {})", allowed.join(", "))));
        }
    }
    Ok(())
}

/// Looks up a registered problem by id with numeric parameters.
pub fn build(id: &str, params: &BTreeMap<String, f64>, poly: Option<&PolySpec>) -> Result<RegisteredProblem> {
    match id {
        "example1" => {
            check_keys(id, params, &["b0", "b1"])?;
            Ok(example1(param(params, "b0", 0.5), param(params, "b1", 1.0)))
        }
        "example2" | "example2-flipped" => {
            check_keys(id, params, &[])?;
            Ok(example2(if id == "example2" { 1.0 } else { -1.0 }))
        }
        "lq" | "lq-suboptimal" => {
            check_keys(id, params, &["a", "c", "q", "r", "g", "x0"])?;
            let d = LqParams::default();
            let p = LqParams {
                a: param(params, "a", d.a),
                c: param(params, "c", d.c),
                q: param(params, "q", d.q),
                r: param(params, "r", d.r),
                g: param(params, "g", d.g),
                x0: param(params, "x0", d.x0),
            };
            if p.r <= 0.0 {
                return Err(Error::Config("lq parameter r must be positive".into()));
            }
            Ok(if id == "lq" { lq(p) } else { lq_suboptimal(p) })
        }
        "gbm" => {
            check_keys(id, params, &["a", "c", "x0", "linear_terminal"])?;
            Ok(gbm(param(params, "a", 0.2), param(params, "c", 0.4), param(params, "x0", 1.0), param(params, "linear_terminal", 0.0) != 0.0))
        }
        "additive-noise" => {
            check_keys(id, params, &[])?;
            Ok(additive_noise())
        }
        "zero" => {
            check_keys(id, params, &["x0"])?;
            Ok(zero(param(params, "x0", 0.0)))
        }
        "poly1d" => {
            check_keys(id, params, &[])?;
            let spec = poly.ok_or_else(|| Error::Config("problem 'poly1d' needs a [poly] table".into()))?;
            Ok(poly1d(spec))
        }
        other => Err(Error::Config(format!("unknown problem '{other}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poly_derivatives() {
        let p = Poly::new(1.0, vec![(2.0, 3, 1)]);
        // 2(x−1)³u at x = 3, u = 2
        assert_eq!(p.partial(3.0, 2.0, 0, 0), 32.0);
        assert_eq!(p.partial(3.0, 2.0, 1, 0), 48.0);
        assert_eq!(p.partial(3.0, 2.0, 3, 0), 24.0);
        assert_eq!(p.partial(3.0, 2.0, 4, 0), 0.0);
        assert_eq!(p.partial(3.0, 2.0, 0, 1), 16.0);
    }

    #[test]
    fn sine_drift_derivatives_cycle() {
        let b = SineDrift { b0: 0.5, b1: 2.0 };
        assert_eq!(b.b(0.0, 0), 0.5);
        assert_eq!(b.b(0.0, 1), 2.0);
        assert_eq!(b.b(0.0, 3), -2.0);
    }

    #[test]
    fn riccati_terminal_value() {
        let p = LqParams::default();
        let r = Riccati::solve(&p, 1.0, 1000);
        assert_eq!(r.at(1.0), p.g);
        assert!(r.at(0.0) > 0.0);
    }

    #[test]
    fn unknown_parameter_rejected() {
        let mut params = BTreeMap::new();
        params.insert("bogus".to_string(), 1.0);
        assert!(build("example1", &params, None).is_err());
        assert!(build("nope", &BTreeMap::new(), None).is_err());
    }
}
