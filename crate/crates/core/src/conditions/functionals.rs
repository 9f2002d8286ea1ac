//! ℍ, ℋ, 𝕊 and 𝕋 at one (t, x, v), assembled term by term from coefficient
//! jets at (x, ū) and (x, v) and the adjoint values at t.
//!
//! 𝕊 is returned as a covector (n entries) and 𝕋 as a bilinear form
//! (n×n, row-major, entry [a][c] = ∂_c of the a-th covector slot).

use crate::adjoint::AdjointSet;
use crate::error::{Error, Result};
use crate::problem::{PointJets, VectorJet};
use crate::tensor::{apply_raw, eval_raw, ipow};

/// p_k(t), q_k(t) for k = 1..=order at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjointPoint {
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
}

impl AdjointPoint {
    pub fn zeros(n: usize, order: usize) -> Self {
        Self { p: (1..=order).map(|k| vec![0.0; ipow(n, k)]).collect(), q: (1..=order).map(|k| vec![0.0; ipow(n, k)]).collect() }
    }

    pub fn from_set(set: &AdjointSet, node: usize, x: &[f64]) -> Self {
        let mut out = Self::zeros(x.len(), set.max_order());
        out.fill(set, node, x);
        out
    }

    pub fn fill(&mut self, set: &AdjointSet, node: usize, x: &[f64]) {
        for (k, s) in set.solutions.iter().enumerate() {
            s.p_into(node, x, &mut self.p[k]);
            s.q_into(node, x, &mut self.q[k]);
        }
    }

    pub fn order(&self) -> usize {
        self.p.len()
    }

    fn need(&self, k: usize, what: &str) -> Result<()> {
        if self.order() < k {
            return Err(Error::Usage(format!("{what} needs adjoints up to order {k}, have {}", self.order())));
        }
        Ok(())
    }

    fn p(&self, k: usize) -> &[f64] {
        &self.p[k - 1]
    }

    fn q(&self, k: usize) -> &[f64] {
        &self.q[k - 1]
    }
}

/// Jets at (t, x, ū) and (t, x, v); both need order ≥ 2 for 𝕋.
#[derive(Clone, Debug)]
pub struct PairJets {
    pub bar: PointJets,
    pub alt: PointJets,
}

impl PairJets {
    pub fn new(n: usize) -> Self {
        Self { bar: PointJets::new(n, 4), alt: PointJets::new(n, 4) }
    }

    pub fn eval(&mut self, problem: &crate::problem::ControlProblem, t: f64, x: &[f64], ubar: &[f64], v: &[f64]) {
        self.bar.eval(problem, t, x, ubar);
        self.alt.eval(problem, t, x, v);
    }

    fn n(&self) -> usize {
        self.bar.b.dim()
    }

    /// δb, δσ (order 0) and their x-derivatives.
    pub fn db(&self, k: usize) -> Vec<f64> {
        delta(&self.alt.b, &self.bar.b, k)
    }

    pub fn ds(&self, k: usize) -> Vec<f64> {
        delta(&self.alt.sigma, &self.bar.sigma, k)
    }

    fn df(&self, k: usize) -> Vec<f64> {
        let (a, b) = (&self.alt.f, &self.bar.f);
        if k == 0 {
            vec![a.value - b.value]
        } else {
            a.dx[k - 1].iter().zip(&b.dx[k - 1]).map(|(x, y)| x - y).collect()
        }
    }

    fn sx(&self, k: usize) -> &[f64] {
        &self.bar.sigma.dx[k - 1]
    }
}

fn delta(a: &VectorJet, b: &VectorJet, k: usize) -> Vec<f64> {
    let (x, y) = if k == 0 { (&a.value, &b.value) } else { (&a.dx[k - 1], &b.dx[k - 1]) };
    x.iter().zip(y).map(|(p, q)| p - q).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Γ(args) for a vector-valued form Γ.
fn ap(c: &[f64], n: usize, args: &[&[f64]]) -> Vec<f64> {
    let mut out = vec![0.0; n];
    apply_raw(c, n, args, 1.0, &mut out);
    out
}

fn basis(n: usize, a: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[a] = 1.0;
    e
}

fn covector(n: usize, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    (0..n).map(|a| f(&basis(n, a))).collect()
}

fn bilinear(n: usize, f: impl Fn(&[f64], &[f64]) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for a in 0..n {
        for c in 0..n {
            out[a * n + c] = f(&basis(n, a), &basis(n, c));
        }
    }
    out
}

fn add(acc: &mut [f64], x: &[f64]) {
    acc.iter_mut().zip(x).for_each(|(a, b)| *a += b);
}

/// Σ over all (k, l), k < l, of a 3-linear form with slots k, l given and the
/// remaining slot free.
fn p3_pairs(p3: &[f64], n: usize, y: &[f64], z: &[f64], free: &[f64]) -> f64 {
    eval_raw(p3, n, &[y, z, free]) + eval_raw(p3, n, &[y, free, z]) + eval_raw(p3, n, &[free, y, z])
}

/// ⟨y₁, b⟩ + ⟨z₁, σ⟩ − f.
pub fn hamiltonian(jets: &PointJets, y1: &[f64], z1: &[f64]) -> f64 {
    dot(y1, &jets.b.value) + dot(z1, &jets.sigma.value) - jets.f.value
}

/// ℋ = ℍ(v) − ℍ(ū) + ½p₂(δσ, δσ).
pub fn script_h(j: &PairJets, a: &AdjointPoint) -> Result<f64> {
    a.need(2, "ℋ")?;
    let n = j.n();
    let ds = j.ds(0);
    Ok(hamiltonian(&j.alt, a.p(1), a.q(1)) - hamiltonian(&j.bar, a.p(1), a.q(1)) + 0.5 * eval_raw(a.p(2), n, &[&ds, &ds]))
}

/// ℋ_x.
pub fn s_hamiltonian_dx(j: &PairJets, a: &AdjointPoint) -> Vec<f64> {
    let n = j.n();
    let (db1, ds1, df1, ds) = (j.db(1), j.ds(1), j.df(1), j.ds(0));
    let p2 = a.p(2);
    covector(n, |e| {
        let dsx = ap(&ds1, n, &[e]);
        dot(a.p(1), &ap(&db1, n, &[e])) + dot(a.q(1), &dsx) - dot(&df1, e) + 0.5 * (eval_raw(p2, n, &[&dsx, &ds]) + eval_raw(p2, n, &[&ds, &dsx]))
    })
}

/// 𝔖(v) − 𝔖(ū) = ½Σ_k[p₂•_k δb + q₂•_k δσ].
pub fn s_second_adjoint_shift(j: &PairJets, a: &AdjointPoint) -> Vec<f64> {
    let n = j.n();
    let (db, ds) = (j.db(0), j.ds(0));
    let (p2, q2) = (a.p(2), a.q(2));
    covector(n, |e| 0.5 * (eval_raw(p2, n, &[&db, e]) + eval_raw(p2, n, &[e, &db]) + eval_raw(q2, n, &[&ds, e]) + eval_raw(q2, n, &[e, &ds])))
}

/// ½[p₂∘₁σ_x]•₂δσ + ½[p₂∘₂σ_x]•₁δσ with σ_x at ū.
pub fn s_diffusion_cross(j: &PairJets, a: &AdjointPoint) -> Vec<f64> {
    let n = j.n();
    let ds = j.ds(0);
    let p2 = a.p(2);
    covector(n, |e| {
        let sx = ap(j.sx(1), n, &[e]);
        0.5 * (eval_raw(p2, n, &[&sx, &ds]) + eval_raw(p2, n, &[&ds, &sx]))
    })
}

/// (1/6)Σ_{k<l} p₃•_{k,l}(δσ, δσ).
pub fn s_third_adjoint(j: &PairJets, a: &AdjointPoint) -> Vec<f64> {
    let n = j.n();
    let ds = j.ds(0);
    covector(n, |e| p3_pairs(a.p(3), n, &ds, &ds, e) / 6.0)
}

/// The functional 𝕊.
pub fn script_s(j: &PairJets, a: &AdjointPoint) -> Result<Vec<f64>> {
    a.need(3, "𝕊")?;
    let mut s = s_hamiltonian_dx(j, a);
    add(&mut s, &s_second_adjoint_shift(j, a));
    add(&mut s, &s_diffusion_cross(j, a));
    add(&mut s, &s_third_adjoint(j, a));
    Ok(s)
}

/// 𝕊_x: the x-derivative of 𝕊 with the adjoints held fixed.
pub fn t_s_derivative(j: &PairJets, a: &AdjointPoint) -> Vec<f64> {
    let n = j.n();
    let (ds, ds1, ds2) = (j.ds(0), j.ds(1), j.ds(2));
    let (db1, db2, df2) = (j.db(1), j.db(2), j.df(2));
    let (sx1, sx2) = (j.sx(1), j.sx(2));
    let (p2, q2, p3) = (a.p(2), a.q(2), a.p(3));
    bilinear(n, |e, c| {
        let dsx_a = ap(&ds1, n, &[e]);
        let dsx_c = ap(&ds1, n, &[c]);
        let dsxx = ap(&ds2, n, &[e, c]);
        let dbx_c = ap(&db1, n, &[c]);
        let sx_a = ap(sx1, n, &[e]);
        let sxx = ap(sx2, n, &[e, c]);
        // ℋ_x
        let mut v = dot(a.p(1), &ap(&db2, n, &[e, c])) + dot(a.q(1), &dsxx) - eval_raw(&df2, n, &[e, c]);
        v += 0.5 * (eval_raw(p2, n, &[&dsxx, &ds]) + eval_raw(p2, n, &[&dsx_a, &dsx_c]) + eval_raw(p2, n, &[&dsx_c, &dsx_a]) + eval_raw(p2, n, &[&ds, &dsxx]));
        // 𝔖(v) − 𝔖(ū)
        v += 0.5 * (eval_raw(p2, n, &[&dbx_c, e]) + eval_raw(p2, n, &[e, &dbx_c]) + eval_raw(q2, n, &[&dsx_c, e]) + eval_raw(q2, n, &[e, &dsx_c]));
        // diffusion cross terms
        v += 0.5 * (eval_raw(p2, n, &[&sxx, &ds]) + eval_raw(p2, n, &[&sx_a, &dsx_c]) + eval_raw(p2, n, &[&dsx_c, &sx_a]) + eval_raw(p2, n, &[&ds, &sxx]));
        // p₃ pairs
        v += (p3_pairs(p3, n, &dsx_c, &ds, e) + p3_pairs(p3, n, &ds, &dsx_c, e)) / 6.0;
        v
    })
}

/// 𝔖_x(v) − 𝔖_x(ū) = ½Σ_k[p₂•_k δb_x + q₂•_k δσ_x].
pub fn t_second_adjoint_shift_dx(j: &PairJets, a: &AdjointPoint) -> Vec<f64> {
    let n = j.n();
    let (db1, ds1) = (j.db(1), j.ds(1));
    let (p2, q2) = (a.p(2), a.q(2));
    bilinear(n, |e, c| {
        let b = ap(&db1, n, &[c]);
        let s = ap(&ds1, n, &[c]);
        0.5 * (eval_raw(p2, n, &[&b, e]) + eval_raw(p2, n, &[e, &b]) + eval_raw(q2, n, &[&s, e]) + eval_raw(q2, n, &[e, &s]))
    })
}

/// 𝔗(v) − 𝔗(ū) = (1/3)Σ_k[p₃•_k δb + q₃•_k δσ].
pub fn t_third_adjoint_shift(j: &PairJets, a: &AdjointPoint) -> Vec<f64> {
    let n = j.n();
    let (db, ds) = (j.db(0), j.ds(0));
    let (p3, q3) = (a.p(3), a.q(3));
    let one = |f: &[f64], y: &[f64], e: &[f64], c: &[f64]| eval_raw(f, n, &[y, e, c]) + eval_raw(f, n, &[e, y, c]) + eval_raw(f, n, &[e, c, y]);
    bilinear(n, |e, c| (one(p3, &db, e, c) + one(q3, &ds, e, c)) / 3.0)
}

/// ½Σ_{k≠l} p₂∘_{k,l}(σ_x, δσ_x) with σ_x at ū.
pub fn t_diffusion_cross(j: &PairJets, a: &AdjointPoint) -> Vec<f64> {
    let n = j.n();
    let ds1 = j.ds(1);
    let p2 = a.p(2);
    bilinear(n, |e, c| {
        let first = eval_raw(p2, n, &[&ap(j.sx(1), n, &[e]), &ap(&ds1, n, &[c])]);
        let second = eval_raw(p2, n, &[&ap(&ds1, n, &[e]), &ap(j.sx(1), n, &[c])]);
        0.5 * (first + second)
    })
}

/// Σ_{k≠l}[p₃∘_k Γ]•_l y as a bilinear form in the two remaining slots.
fn p3_composed(p3: &[f64], n: usize, gamma: &[f64], y: &[f64], e: &[f64], c: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..3 {
        for l in 0..3 {
            if l == k {
                continue;
            }
            let mut free = [e, c].into_iter();
            let mut args: [Vec<f64>; 3] = Default::default();
            for (slot, arg) in args.iter_mut().enumerate() {
                *arg = if slot == l { y.to_vec() } else { free.next().expect("two free slots").to_vec() };
            }
            args[k] = ap(gamma, n, &[&args[k]]);
            s += eval_raw(p3, n, &[&args[0], &args[1], &args[2]]);
        }
    }
    s
}

/// (1/6)Σ_{k≠l}[p₃∘_k δσ_x]•_l δσ.
pub fn t_third_adjoint_delta(j: &PairJets, a: &AdjointPoint) -> Vec<f64> {
    let n = j.n();
    let (ds, ds1) = (j.ds(0), j.ds(1));
    bilinear(n, |e, c| p3_composed(a.p(3), n, &ds1, &ds, e, c) / 6.0)
}

/// (1/3)Σ_{k≠l}[p₃∘_k σ_x]•_l δσ with σ_x at ū.
pub fn t_third_adjoint_sigma(j: &PairJets, a: &AdjointPoint) -> Vec<f64> {
    let n = j.n();
    let ds = j.ds(0);
    bilinear(n, |e, c| p3_composed(a.p(3), n, j.sx(1), &ds, e, c) / 3.0)
}

/// (1/12)Σ_{k<l} p₄•_{k,l}(δσ, δσ).
pub fn t_fourth_adjoint(j: &PairJets, a: &AdjointPoint) -> Vec<f64> {
    let n = j.n();
    let ds = j.ds(0);
    let p4 = a.p(4);
    bilinear(n, |e, c| {
        let mut s = 0.0;
        for k in 0..4 {
            for l in k + 1..4 {
                let mut free = [e, c].into_iter();
                let args: Vec<&[f64]> = (0..4).map(|slot| if slot == k || slot == l { ds.as_slice() } else { free.next().expect("two free slots") }).collect();
                s += eval_raw(p4, n, &args);
            }
        }
        s / 12.0
    })
}

/// The functional 𝕋.
pub fn script_t(j: &PairJets, a: &AdjointPoint) -> Result<Vec<f64>> {
    a.need(4, "𝕋")?;
    let mut t = t_s_derivative(j, a);
    for term in [
        t_second_adjoint_shift_dx(j, a),
        t_third_adjoint_shift(j, a),
        t_diffusion_cross(j, a),
        t_third_adjoint_delta(j, a),
        t_third_adjoint_sigma(j, a),
        t_fourth_adjoint(j, a),
    ] {
        add(&mut t, &term);
    }
    Ok(t)
}

/// ℋ, 𝕊, 𝕋 at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct Functionals {
    pub h: f64,
    pub s: Vec<f64>,
    pub t: Vec<f64>,
}

impl Functionals {
    pub fn eval(j: &PairJets, a: &AdjointPoint) -> Result<Self> {
        Ok(Self { h: script_h(j, a)?, s: script_s(j, a)?, t: script_t(j, a)? })
    }

    /// ⟨𝕊, y⟩.
    pub fn s_dot(&self, y: &[f64]) -> f64 {
        dot(&self.s, y)
    }

    /// 𝕋(y, z).
    pub fn t_form(&self, y: &[f64], z: &[f64]) -> f64 {
        eval_raw(&self.t, y.len(), &[y, z])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::registry::{example1, example2};

    fn point(n: usize, p: &[f64]) -> AdjointPoint {
        let mut a = AdjointPoint::zeros(n, 4);
        for (k, v) in p.iter().enumerate() {
            a.p[k][0] = *v;
        }
        a
    }

    #[test]
    fn example1_closed_forms() {
        let reg = example1(0.5, 1.0);
        let a = point(1, &[0.0, 1.0, 0.0, 0.0]);
        let mut j = PairJets::new(1);
        for v in [-1.0, 0.0, 1.0] {
            j.eval(&reg.problem, 0.3, &[0.0], &[0.0], &[v]);
            let f = Functionals::eval(&j, &a).unwrap();
            assert!(f.h.abs() < 1e-15);
            assert!((f.s[0] - 0.5 * v).abs() < 1e-15);
            assert!((f.t[0] - 2.0 * v).abs() < 1e-15);
        }
    }

    #[test]
    fn example2_fourth_adjoint_term() {
        let reg = example2(1.0);
        let p4 = -(6.0f64 - 6.0 * 0.5).exp();
        let a = point(1, &[0.0, 0.0, 0.0, p4]);
        let mut j = PairJets::new(1);
        for v in [-1.0, 0.0, 1.0] {
            j.eval(&reg.problem, 0.5, &[1.0], &[1.0], &[v]);
            let f = Functionals::eval(&j, &a).unwrap();
            assert_eq!(f.s, vec![0.0]);
            assert!((f.t[0] - 0.5 * p4 * (v - 1.0) * (v - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_orders_are_reported() {
        let reg = example2(1.0);
        let mut j = PairJets::new(1);
        j.eval(&reg.problem, 0.0, &[1.0], &[1.0], &[0.0]);
        assert!(script_t(&j, &AdjointPoint::zeros(1, 3)).is_err());
        assert!(script_s(&j, &AdjointPoint::zeros(1, 2)).is_err());
    }
}
