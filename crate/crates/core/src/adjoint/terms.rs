//! Drift terms of the four adjoint equations, one function per term.
//!
//! With dp_k = −G_k dt + q_k dW, the drift splits as
//! G_k = transport_drift(p_k) + transport_diffusion(p_k) + q_transport(q_k) + inhomogeneous_k,
//! where the inhomogeneous part only involves lower orders and the data.

use crate::error::Result;
use crate::problem::PointJets;
use crate::tensor::{ipow, MultilinearForm, VectorForm};

/// x-derivatives of b, σ (orders 1..4) and f at one (t, x, u).
#[derive(Clone, Debug)]
pub struct NodeCoefficients {
    pub b: Vec<VectorForm>,
    pub sigma: Vec<VectorForm>,
    pub f: Vec<MultilinearForm>,
}

impl NodeCoefficients {
    pub fn from_jets(j: &PointJets) -> Self {
        let order = j.b.order();
        Self {
            b: (1..=order).map(|k| j.b.derivative(k)).collect(),
            sigma: (1..=order).map(|k| j.sigma.derivative(k)).collect(),
            f: (1..=order).map(|k| j.f.derivative(k)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.b[0].dim()
    }

    fn bx(&self, k: usize) -> &VectorForm {
        &self.b[k - 1]
    }

    fn sx(&self, k: usize) -> &VectorForm {
        &self.sigma[k - 1]
    }
}

/// ℍ's k-th x-derivative: ⟨p₁, b^{(k)}⟩ + ⟨q₁, σ^{(k)}⟩ − f^{(k)}.
pub fn hamiltonian_dx(k: usize, p1: &[f64], q1: &[f64], c: &NodeCoefficients) -> Result<MultilinearForm> {
    let mut h = c.bx(k).pair(p1);
    h.add_scaled(&c.sx(k).pair(q1), 1.0)?;
    h.add_scaled(&c.f[k - 1], -1.0)?;
    Ok(h)
}

/// Σ_k p∘_k b_x.
pub fn transport_drift(p: &MultilinearForm, c: &NodeCoefficients) -> Result<MultilinearForm> {
    let mut out = MultilinearForm::zeros(p.arity(), p.dim());
    for k in 0..p.arity() {
        out.add_scaled(&p.compose_at(c.bx(1), k)?, 1.0)?;
    }
    Ok(out)
}

/// Σ_{k<l} p∘_{k,l}(σ_x, σ_x).
pub fn transport_diffusion(p: &MultilinearForm, c: &NodeCoefficients) -> Result<MultilinearForm> {
    let mut out = MultilinearForm::zeros(p.arity(), p.dim());
    for k in 0..p.arity() {
        for l in k + 1..p.arity() {
            out.add_scaled(&p.compose_two_at(c.sx(1), c.sx(1), k, l)?, 1.0)?;
        }
    }
    Ok(out)
}

/// Σ_k q∘_k σ_x.
pub fn q_transport(q: &MultilinearForm, c: &NodeCoefficients) -> Result<MultilinearForm> {
    let mut out = MultilinearForm::zeros(q.arity(), q.dim());
    for k in 0..q.arity() {
        out.add_scaled(&q.compose_at(c.sx(1), k)?, 1.0)?;
    }
    Ok(out)
}

/// (3/2)Σ_{k=1,2}(p₂∘_k b_xx + q₂∘_k σ_xx) + (3/2)(p₂∘_{1,2}(σ_x,σ_xx) + p₂∘_{1,2}(σ_xx,σ_x)).
pub fn third_order_coupling(p2: &MultilinearForm, q2: &MultilinearForm, c: &NodeCoefficients) -> Result<MultilinearForm> {
    let mut out = MultilinearForm::zeros(3, p2.dim());
    for k in 0..2 {
        out.add_scaled(&p2.compose_multi_at(c.bx(2), k)?, 1.5)?;
        out.add_scaled(&q2.compose_multi_at(c.sx(2), k)?, 1.5)?;
    }
    out.add_scaled(&p2.compose_two_multi_at(c.sx(1), c.sx(2), 0, 1)?, 1.5)?;
    out.add_scaled(&p2.compose_two_multi_at(c.sx(2), c.sx(1), 0, 1)?, 1.5)?;
    Ok(out)
}

/// 2Σ_{k=1..3}(p₃∘_k b_xx + q₃∘_k σ_xx) + 2Σ_k Σ_{l≠k} p₃∘_{k,l}(σ_x, σ_xx).
pub fn fourth_order_coupling_p3(p3: &MultilinearForm, q3: &MultilinearForm, c: &NodeCoefficients) -> Result<MultilinearForm> {
    let mut out = MultilinearForm::zeros(4, p3.dim());
    for k in 0..3 {
        out.add_scaled(&p3.compose_multi_at(c.bx(2), k)?, 2.0)?;
        out.add_scaled(&q3.compose_multi_at(c.sx(2), k)?, 2.0)?;
        for l in 0..3 {
            if l != k {
                out.add_scaled(&p3.compose_two_multi_at(c.sx(1), c.sx(2), k, l)?, 2.0)?;
            }
        }
    }
    Ok(out)
}

/// 2Σ_{k=1,2} p₂∘_k b_xxx + 2(p₂∘_{1,2}(σ_x,σ_xxx) + p₂∘_{1,2}(σ_xxx,σ_x))
/// + 3p₂∘_{1,2}(σ_xx,σ_xx) + 2Σ_{k=1,2} q₂∘_k σ_xxx.
pub fn fourth_order_coupling_p2(p2: &MultilinearForm, q2: &MultilinearForm, c: &NodeCoefficients) -> Result<MultilinearForm> {
    let mut out = MultilinearForm::zeros(4, p2.dim());
    for k in 0..2 {
        out.add_scaled(&p2.compose_multi_at(c.bx(3), k)?, 2.0)?;
        out.add_scaled(&q2.compose_multi_at(c.sx(3), k)?, 2.0)?;
    }
    out.add_scaled(&p2.compose_two_multi_at(c.sx(1), c.sx(3), 0, 1)?, 2.0)?;
    out.add_scaled(&p2.compose_two_multi_at(c.sx(3), c.sx(1), 0, 1)?, 2.0)?;
    out.add_scaled(&p2.compose_two_multi_at(c.sx(2), c.sx(2), 0, 1)?, 3.0)?;
    Ok(out)
}

/// Part of G_k that does not involve (p_k, q_k). `lower[j]` holds (p_{j+1}, q_{j+1}).
pub fn inhomogeneous(k: usize, lower: &[(MultilinearForm, MultilinearForm)], c: &NodeCoefficients) -> Result<MultilinearForm> {
    if k == 1 {
        return Ok(c.f[0].clone().scaled(-1.0));
    }
    let (p1, q1) = &lower[0];
    let mut out = hamiltonian_dx(k, p1.coeffs(), q1.coeffs(), c)?;
    match k {
        2 => {}
        3 => out.add_scaled(&third_order_coupling(&lower[1].0, &lower[1].1, c)?, 1.0)?,
        4 => {
            out.add_scaled(&fourth_order_coupling_p3(&lower[2].0, &lower[2].1, c)?, 1.0)?;
            out.add_scaled(&fourth_order_coupling_p2(&lower[1].0, &lower[1].1, c)?, 1.0)?;
        }
        _ => unreachable!("adjoint order {k}"),
    }
    Ok(out)
}

/// The full drift G_k.
pub fn generator(
    k: usize,
    p: &MultilinearForm,
    q: &MultilinearForm,
    lower: &[(MultilinearForm, MultilinearForm)],
    c: &NodeCoefficients,
) -> Result<MultilinearForm> {
    let mut g = transport_drift(p, c)?;
    g.add_scaled(&transport_diffusion(p, c)?, 1.0)?;
    g.add_scaled(&q_transport(q, c)?, 1.0)?;
    g.add_scaled(&inhomogeneous(k, lower, c)?, 1.0)?;
    Ok(g)
}

/// Matrices (row-major D×D, D = n^k) of p ↦ transport_drift + transport_diffusion and q ↦ q_transport.
pub fn linear_operators(k: usize, c: &NodeCoefficients) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = c.dim();
    let d = ipow(n, k);
    let mut l = vec![0.0; d * d];
    let mut m = vec![0.0; d * d];
    for col in 0..d {
        let mut e = MultilinearForm::zeros(k, n);
        e.coeffs_mut()[col] = 1.0;
        let mut lp = transport_drift(&e, c)?;
        lp.add_scaled(&transport_diffusion(&e, c)?, 1.0)?;
        let mq = q_transport(&e, c)?;
        for row in 0..d {
            l[row * d + col] = lp.coeffs()[row];
            m[row * d + col] = mq.coeffs()[row];
        }
    }
    Ok((l, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::registry::example2;
    use crate::problem::PointJets;

    fn ex2_coeffs() -> NodeCoefficients {
        let reg = example2(1.0);
        let mut j = PointJets::new(1, 4);
        j.eval(&reg.problem, 0.3, &[1.0], &[1.0]);
        NodeCoefficients::from_jets(&j)
    }

    #[test]
    fn example2_linear_parts() {
        let c = ex2_coeffs();
        for (k, (lp, mq)) in [(1, (0.0, 1.0)), (2, (1.0, 2.0)), (3, (3.0, 3.0)), (4, (6.0, 4.0))] {
            let (l, m) = linear_operators(k, &c).unwrap();
            assert_eq!((l[0], m[0]), (lp, mq), "order {k}");
        }
    }
}
