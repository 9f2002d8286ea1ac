//! Dense multilinear forms on ℝⁿ and their contraction/composition calculus.
//!
//! Coefficients are stored row-major: `λ^{j₁…j_d}` lives at index
//! `((j₁·n + j₂)·n + …)·n + j_d`. Slots are 0-based throughout the API.

pub mod ito;
mod process;

pub use process::TensorProcess;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest arity a form may reach after composition.
pub const MAX_ARITY: usize = 8;

pub(crate) fn ipow(n: usize, d: usize) -> usize {
    n.pow(d as u32)
}

/// Evaluates the form stored in `c` on `args` (one vector per slot).
pub fn eval_raw(c: &[f64], n: usize, args: &[&[f64]]) -> f64 {
    match args.len() {
        0 => c[0],
        1 => c.iter().zip(args[0]).map(|(a, b)| a * b).sum(),
        _ => {
            let stride = c.len() / n;
            let mut s = 0.0;
            for (j, &a) in args[0].iter().enumerate() {
                if a != 0.0 {
                    s += a * eval_raw(&c[j * stride..(j + 1) * stride], n, &args[1..]);
                }
            }
            s
        }
    }
}

/// `out += scale · Γ(args)` for a vector-valued form stored as n blocks.
pub fn apply_raw(c: &[f64], n: usize, args: &[&[f64]], scale: f64, out: &mut [f64]) {
    let block = c.len() / n;
    for (i, o) in out.iter_mut().enumerate() {
        *o += scale * eval_raw(&c[i * block..(i + 1) * block], n, args);
    }
}

fn check_slot(slot: usize, arity: usize) -> Result<()> {
    if slot >= arity {
        return Err(Error::SlotOutOfRange { slot, arity });
    }
    Ok(())
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimMismatch { expected, got });
    }
    Ok(())
}

/// Real-valued d-linear form on ℝⁿ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultilinearForm {
    arity: usize,
    dim: usize,
    coeffs: Vec<f64>,
}

/// ℝⁿ-valued d-linear map; component i occupies block `i·n^d .. (i+1)·n^d`.
///
/// Derivative tensors of vector fields use this layout: `b_x[i][j] = ∂b_i/∂x_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorForm {
    arity: usize,
    dim: usize,
    coeffs: Vec<f64>,
}

enum Filler<'a> {
    Pass,
    Fixed(&'a [f64]),
    Composed(&'a VectorForm),
}

impl MultilinearForm {
    pub fn zeros(arity: usize, dim: usize) -> Self {
        assert!(dim > 0 && arity <= MAX_ARITY);
        Self { arity, dim, coeffs: vec![0.0; ipow(dim, arity)] }
    }

    pub fn from_coeffs(arity: usize, dim: usize, coeffs: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimMismatch { expected: 1, got: 0 });
        }
        if arity > MAX_ARITY {
            return Err(Error::ArityMismatch { expected: MAX_ARITY, got: arity });
        }
        check_dim(ipow(dim, arity), coeffs.len())?;
        Ok(Self { arity, dim, coeffs })
    }

    pub fn scalar(value: f64) -> Self {
        Self { arity: 0, dim: 1, coeffs: vec![value] }
    }

    /// Builds a form from a function of the index tuple.
    pub fn from_fn(arity: usize, dim: usize, f: impl Fn(&[usize]) -> f64) -> Self {
        let mut out = Self::zeros(arity, dim);
        let mut idx = vec![0; arity];
        for k in 0..out.coeffs.len() {
            unflatten(k, dim, &mut idx);
            out.coeffs[k] = f(&idx);
        }
        out
    }

    /// The bilinear form (x, y) ↦ ⟨x, y⟩.
    pub fn identity(dim: usize) -> Self {
        Self::from_fn(2, dim, |j| if j[0] == j[1] { 1.0 } else { 0.0 })
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.coeffs[flatten(idx, self.dim)]
    }

    pub fn eval(&self, args: &[&[f64]]) -> Result<f64> {
        if args.len() != self.arity {
            return Err(Error::ArityMismatch { expected: self.arity, got: args.len() });
        }
        for a in args {
            check_dim(self.dim, a.len())?;
        }
        Ok(eval_raw(&self.coeffs, self.dim, args))
    }

    /// Root-sum-square of the coefficients.
    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.coeffs.iter_mut().for_each(|c| *c *= s);
        self
    }

    pub fn add_scaled(&mut self, other: &Self, s: f64) -> Result<()> {
        if other.arity != self.arity {
            return Err(Error::ArityMismatch { expected: self.arity, got: other.arity });
        }
        check_dim(self.dim, other.dim)?;
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += s * b;
        }
        Ok(())
    }

    /// `Λ•ᵢy`: slot `i` fixed to `y`, remaining slots kept in order.
    pub fn contract_at(&self, y: &[f64], i: usize) -> Result<Self> {
        check_slot(i, self.arity)?;
        check_dim(self.dim, y.len())?;
        let mut fill: Vec<Filler> = (0..self.arity).map(|_| Filler::Pass).collect();
        fill[i] = Filler::Fixed(y);
        Ok(self.substitute(&fill))
    }

    /// `Λ•ᵢ,ⱼ(y, z)`.
    pub fn contract_two_at(&self, y: &[f64], z: &[f64], i: usize, j: usize) -> Result<Self> {
        check_slot(i, self.arity)?;
        check_slot(j, self.arity)?;
        if i == j {
            return Err(Error::Usage(format!("contract_two_at needs distinct slots, got {i} twice")));
        }
        check_dim(self.dim, y.len())?;
        check_dim(self.dim, z.len())?;
        let mut fill: Vec<Filler> = (0..self.arity).map(|_| Filler::Pass).collect();
        fill[i] = Filler::Fixed(y);
        fill[j] = Filler::Fixed(z);
        Ok(self.substitute(&fill))
    }

    /// `Λ∘ᵢΓ` for a linear map Γ.
    pub fn compose_at(&self, gamma: &VectorForm, i: usize) -> Result<Self> {
        if gamma.arity != 1 {
            return Err(Error::ArityMismatch { expected: 1, got: gamma.arity });
        }
        self.compose_multi_at(gamma, i)
    }

    /// `Λ∘ᵢ,ⱼ(Γ, Θ)` for linear maps Γ, Θ.
    pub fn compose_two_at(&self, gamma: &VectorForm, theta: &VectorForm, i: usize, j: usize) -> Result<Self> {
        for g in [gamma, theta] {
            if g.arity != 1 {
                return Err(Error::ArityMismatch { expected: 1, got: g.arity });
            }
        }
        self.compose_two_multi_at(gamma, theta, i, j)
    }

    /// `Λ∘ᵢΓ` for an h-linear Γ; the result has arity d + h − 1 with Γ's
    /// arguments occupying the positions of slot i.
    pub fn compose_multi_at(&self, gamma: &VectorForm, i: usize) -> Result<Self> {
        check_slot(i, self.arity)?;
        check_dim(self.dim, gamma.dim)?;
        let mut fill: Vec<Filler> = (0..self.arity).map(|_| Filler::Pass).collect();
        fill[i] = Filler::Composed(gamma);
        Ok(self.substitute(&fill))
    }

    /// `Λ∘ᵢ,ⱼ(Γ, Θ)` for multilinear Γ, Θ. Arguments are spliced in slot order.
    pub fn compose_two_multi_at(&self, gamma: &VectorForm, theta: &VectorForm, i: usize, j: usize) -> Result<Self> {
        check_slot(i, self.arity)?;
        check_slot(j, self.arity)?;
        if i == j {
            return Err(Error::Usage(format!("compose_two_at needs distinct slots, got {i} twice")));
        }
        check_dim(self.dim, gamma.dim)?;
        check_dim(self.dim, theta.dim)?;
        let mut fill: Vec<Filler> = (0..self.arity).map(|_| Filler::Pass).collect();
        fill[i] = Filler::Composed(gamma);
        fill[j] = Filler::Composed(theta);
        Ok(self.substitute(&fill))
    }

    fn substitute(&self, fill: &[Filler]) -> Self {
        let n = self.dim;
        let out_arity: usize = fill
            .iter()
            .map(|f| match f {
                Filler::Pass => 1,
                Filler::Fixed(_) => 0,
                Filler::Composed(g) => g.arity,
            })
            .sum();
        let mut out = Self::zeros(out_arity, n);
        let mut idx = vec![0; out_arity];
        let mut bufs = vec![vec![0.0; n]; self.arity];
        for k in 0..out.coeffs.len() {
            unflatten(k, n, &mut idx);
            let mut pos = 0;
            for (s, f) in fill.iter().enumerate() {
                let b = &mut bufs[s];
                match f {
                    Filler::Pass => {
                        b.iter_mut().for_each(|v| *v = 0.0);
                        b[idx[pos]] = 1.0;
                        pos += 1;
                    }
                    Filler::Fixed(y) => b.copy_from_slice(y),
                    Filler::Composed(g) => {
                        let sub = flatten(&idx[pos..pos + g.arity], n);
                        let block = ipow(n, g.arity);
                        for (r, v) in b.iter_mut().enumerate() {
                            *v = g.coeffs[r * block + sub];
                        }
                        pos += g.arity;
                    }
                }
            }
            let args: Vec<&[f64]> = bufs.iter().map(|b| b.as_slice()).collect();
            out.coeffs[k] = eval_raw(&self.coeffs, n, &args);
        }
        out
    }
}

impl VectorForm {
    pub fn zeros(arity: usize, dim: usize) -> Self {
        assert!(dim > 0 && arity <= MAX_ARITY);
        Self { arity, dim, coeffs: vec![0.0; ipow(dim, arity + 1)] }
    }

    pub fn from_coeffs(arity: usize, dim: usize, coeffs: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimMismatch { expected: 1, got: 0 });
        }
        check_dim(ipow(dim, arity + 1), coeffs.len())?;
        Ok(Self { arity, dim, coeffs })
    }

    /// Linear map from a row-major n×n matrix.
    pub fn linear(dim: usize, matrix: Vec<f64>) -> Result<Self> {
        Self::from_coeffs(1, dim, matrix)
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(1, dim);
        for i in 0..dim {
            m.coeffs[i * dim + i] = 1.0;
        }
        m
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.coeffs.iter_mut().for_each(|c| *c *= s);
        self
    }

    /// Component i as a real-valued form.
    pub fn component(&self, i: usize) -> MultilinearForm {
        let block = ipow(self.dim, self.arity);
        MultilinearForm { arity: self.arity, dim: self.dim, coeffs: self.coeffs[i * block..(i + 1) * block].to_vec() }
    }

    pub fn apply(&self, args: &[&[f64]]) -> Result<Vec<f64>> {
        if args.len() != self.arity {
            return Err(Error::ArityMismatch { expected: self.arity, got: args.len() });
        }
        for a in args {
            check_dim(self.dim, a.len())?;
        }
        let mut out = vec![0.0; self.dim];
        apply_raw(&self.coeffs, self.dim, args, 1.0, &mut out);
        Ok(out)
    }

    /// `Σᵢ wᵢ Γᵢ` as a real-valued form: the pairing ⟨w, Γ(…)⟩.
    pub fn pair(&self, w: &[f64]) -> MultilinearForm {
        let block = ipow(self.dim, self.arity);
        let mut out = MultilinearForm::zeros(self.arity, self.dim);
        for (i, wi) in w.iter().enumerate() {
            if *wi != 0.0 {
                for (o, c) in out.coeffs.iter_mut().zip(&self.coeffs[i * block..(i + 1) * block]) {
                    *o += wi * c;
                }
            }
        }
        out
    }

    /// Fixes slot `slot` to `y`; arity drops by one.
    pub fn contract_at(&self, y: &[f64], slot: usize) -> Result<Self> {
        let comps: Result<Vec<_>> = (0..self.dim).map(|i| self.component(i).contract_at(y, slot)).collect();
        let comps = comps?;
        let mut coeffs = Vec::with_capacity(self.coeffs.len() / self.dim);
        for c in comps {
            coeffs.extend(c.coeffs);
        }
        Self::from_coeffs(self.arity - 1, self.dim, coeffs)
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (a, b) in out.coeffs.iter_mut().zip(&other.coeffs) {
            *a -= b;
        }
        out
    }
}

pub(crate) fn flatten(idx: &[usize], n: usize) -> usize {
    idx.iter().fold(0, |acc, &j| acc * n + j)
}

pub(crate) fn unflatten(mut k: usize, n: usize, idx: &mut [usize]) {
    for slot in idx.iter_mut().rev() {
        *slot = k % n;
        k /= n;
    }
}

/// Coefficient arrays in a flat CSV layout with an (arity, dim) header.
pub fn form_to_csv(form: &MultilinearForm) -> String {
    let mut s = format!("arity,dim\n{},{}\n", form.arity, form.dim);
    let body: Vec<String> = form.coeffs.iter().map(|c| format!("{c:e}")).collect();
    s.push_str(&body.join(","));
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_contract_gives_coordinate() {
        let id = MultilinearForm::identity(3);
        let f = id.contract_at(&[1.0, 0.0, 0.0], 0).unwrap();
        assert_eq!(f.arity(), 1);
        assert_eq!(f.coeffs(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn arity_one_contract_is_inner_product() {
        let l = MultilinearForm::from_coeffs(1, 3, vec![1.0, -2.0, 0.5]).unwrap();
        let s = l.contract_at(&[2.0, 1.0, 4.0], 0).unwrap();
        assert_eq!(s.arity(), 0);
        assert_eq!(s.coeffs()[0], 2.0);
    }

    #[test]
    fn bilinear_two_contraction() {
        let l = MultilinearForm::from_coeffs(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = l.contract_two_at(&[1.0, 1.0], &[0.0, 1.0], 0, 1).unwrap();
        // yᵀ L z = (1,1)·(2,4)
        assert_eq!(s.coeffs()[0], 6.0);
    }

    #[test]
    fn doubled_identity_doubles() {
        let l = MultilinearForm::from_coeffs(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let g = VectorForm::identity(2).scaled(2.0);
        assert_eq!(l.compose_at(&g, 1).unwrap().coeffs(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn slot_errors() {
        let l = MultilinearForm::zeros(2, 2);
        assert!(matches!(l.contract_at(&[0.0, 0.0], 2), Err(Error::SlotOutOfRange { .. })));
        assert!(matches!(l.contract_at(&[0.0], 0), Err(Error::DimMismatch { .. })));
        assert!(l.contract_two_at(&[0.0; 2], &[0.0; 2], 1, 1).is_err());
    }

    #[test]
    fn bilinear_composition_raises_arity() {
        // p(x,y)=xy on ℝ, Γ(a,b)=3ab ⇒ p∘₀Γ (a,b,c) = 3abc
        let p = MultilinearForm::from_coeffs(2, 1, vec![1.0]).unwrap();
        let g = VectorForm::from_coeffs(2, 1, vec![3.0]).unwrap();
        let c = p.compose_multi_at(&g, 0).unwrap();
        assert_eq!(c.arity(), 3);
        assert_eq!(c.coeffs(), &[3.0]);
    }

    #[test]
    fn csv_has_header() {
        let s = form_to_csv(&MultilinearForm::identity(2));
        assert!(s.starts_with("arity,dim\n2,2\n"));
    }
}
