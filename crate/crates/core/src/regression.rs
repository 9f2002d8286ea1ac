//! Least-squares regression on polynomial features of the state.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Monomials of total degree 1..=degree in n variables (the intercept is implicit).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PolyBasis {
    pub dim: usize,
    pub degree: usize,
    exps: Vec<Vec<u32>>,
}

impl PolyBasis {
    pub fn new(dim: usize, degree: usize) -> Self {
        let mut exps = Vec::new();
        for total in 1..=degree as u32 {
            let mut cur = vec![0u32; dim];
            push_compositions(total, 0, &mut cur, &mut exps);
        }
        Self { dim, degree, exps }
    }

    pub fn len(&self) -> usize {
        self.exps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }
}

fn push_compositions(left: u32, slot: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if slot + 1 == cur.len() {
        cur[slot] = left;
        out.push(cur.clone());
        return;
    }
    for e in (0..=left).rev() {
        cur[slot] = e;
        push_compositions(left - e, slot + 1, cur, out);
    }
}

fn monomial(exp: &[u32], x: &[f64]) -> f64 {
    exp.iter().zip(x).map(|(e, v)| v.powi(*e as i32)).product()
}

/// Standardized surviving columns; evaluates [1, (φ_c(x) − mean_c)/scale_c, …].
#[derive(Clone, Debug, Serialize)]
pub struct FeatureMap {
    exps: Vec<Vec<u32>>,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl FeatureMap {
    pub fn len(&self) -> usize {
        self.exps.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
        for (k, e) in self.exps.iter().enumerate() {
            out[k + 1] = (monomial(e, x) - self.mean[k]) / self.scale[k];
        }
    }

    pub fn predict(&self, coef: &[f64], x: &[f64]) -> f64 {
        let mut s = coef[0];
        for (k, e) in self.exps.iter().enumerate() {
            s += coef[k + 1] * (monomial(e, x) - self.mean[k]) / self.scale[k];
        }
        s
    }
}

/// Design matrix for one cross-section of paths.
#[derive(Clone, Debug)]
pub struct Design {
    pub features: FeatureMap,
    cols: Vec<Vec<f64>>,
    /// (XᵀX/M)⁻¹ including the intercept.
    pub gram_inv: DMatrix<f64>,
    pub condition: f64,
    paths: usize,
}

/// Largest condition number accepted after column pruning.
pub const MAX_CONDITION: f64 = 1e12;

impl Design {
    /// Builds the design on states `xs` (M×n, path-major). Constant and
    /// collinear columns are dropped greedily in degree order.
    pub fn build(basis: &PolyBasis, xs: &[f64], node: usize) -> Result<Self> {
        let n = basis.dim;
        let m = xs.len() / n;
        let mut exps = Vec::new();
        let mut mean = Vec::new();
        let mut scale = Vec::new();
        let mut cols: Vec<Vec<f64>> = Vec::new();
        // kept columns orthonormalized for the collinearity test
        let mut ortho: Vec<Vec<f64>> = Vec::new();
        for e in &basis.exps {
            let raw: Vec<f64> = (0..m).map(|p| monomial(e, &xs[p * n..(p + 1) * n])).collect();
            let mu = raw.iter().sum::<f64>() / m as f64;
            let sd = (raw.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m as f64).sqrt();
            if !(sd > 1e-12 * mu.abs().max(1.0)) {
                continue;
            }
            let col: Vec<f64> = raw.iter().map(|v| (v - mu) / sd).collect();
            let mut r = col.clone();
            for o in &ortho {
                let dot = r.iter().zip(o).map(|(a, b)| a * b).sum::<f64>() / m as f64;
                r.iter_mut().zip(o).for_each(|(a, b)| *a -= dot * b);
            }
            let rn = (r.iter().map(|v| v * v).sum::<f64>() / m as f64).sqrt();
            if rn < 1e-6 {
                continue;
            }
            r.iter_mut().for_each(|v| *v /= rn);
            ortho.push(r);
            exps.push(e.clone());
            mean.push(mu);
            scale.push(sd);
            cols.push(col);
        }
        let k = cols.len() + 1;
        if m < 2 * k {
            return Err(Error::InsufficientPaths { paths: m, columns: k });
        }
        let mut gram = DMatrix::<f64>::zeros(k, k);
        gram[(0, 0)] = 1.0;
        for a in 0..cols.len() {
            let sa = cols[a].iter().sum::<f64>() / m as f64;
            gram[(0, a + 1)] = sa;
            gram[(a + 1, 0)] = sa;
            for b in a..cols.len() {
                let v = cols[a].iter().zip(&cols[b]).map(|(x, y)| x * y).sum::<f64>() / m as f64;
                gram[(a + 1, b + 1)] = v;
                gram[(b + 1, a + 1)] = v;
            }
        }
        let eig = gram.clone().symmetric_eigen();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for v in eig.eigenvalues.iter() {
            lo = lo.min(v.abs());
            hi = hi.max(v.abs());
        }
        let condition = hi / lo;
        if !(condition <= MAX_CONDITION) {
            return Err(Error::IllConditioned { node, cond: condition });
        }
        let gram_inv = gram.try_inverse().ok_or(Error::IllConditioned { node, cond: f64::INFINITY })?;
        Ok(Self { features: FeatureMap { exps, mean, scale }, cols, gram_inv, condition, paths: m })
    }

    pub fn columns(&self) -> usize {
        self.cols.len() + 1
    }

    /// Coefficients and residual variance of the regression of `y` (one value per path).
    pub fn fit(&self, y: &[f64]) -> (Vec<f64>, f64) {
        let m = self.paths as f64;
        let k = self.columns();
        let mut rhs = DVector::<f64>::zeros(k);
        rhs[0] = y.iter().sum::<f64>() / m;
        for (a, col) in self.cols.iter().enumerate() {
            rhs[a + 1] = col.iter().zip(y).map(|(c, v)| c * v).sum::<f64>() / m;
        }
        let coef: Vec<f64> = (&self.gram_inv * rhs).iter().copied().collect();
        let mut rss = 0.0;
        for (p, v) in y.iter().enumerate() {
            let r = v - self.fitted(&coef, p);
            rss += r * r;
        }
        let dof = (self.paths - k).max(1) as f64;
        (coef, rss / dof)
    }

    /// In-sample fitted value on path p.
    pub fn fitted(&self, coef: &[f64], p: usize) -> f64 {
        let mut s = coef[0];
        for (a, col) in self.cols.iter().enumerate() {
            s += coef[a + 1] * col[p];
        }
        s
    }

    /// Standard error of a fitted value at features `phi`.
    pub fn prediction_se(gram_inv: &DMatrix<f64>, paths: usize, resid_var: f64, phi: &[f64]) -> f64 {
        let v = DVector::from_column_slice(phi);
        let q = (v.transpose() * gram_inv * &v)[(0, 0)];
        (resid_var * q.max(0.0) / paths as f64).sqrt()
    }

    pub fn paths(&self) -> usize {
        self.paths
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_counts() {
        assert_eq!(PolyBasis::new(1, 2).len(), 2);
        assert_eq!(PolyBasis::new(2, 2).len(), 5);
    }

    #[test]
    fn exact_quadratic_recovered() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64 / 10.0).collect();
        let y: Vec<f64> = xs.iter().map(|x| 1.0 + 2.0 * x - 0.5 * x * x).collect();
        let d = Design::build(&PolyBasis::new(1, 2), &xs, 0).unwrap();
        let (c, var) = d.fit(&y);
        for (p, x) in xs.iter().enumerate() {
            assert!((d.features.predict(&c, &[*x]) - y[p]).abs() < 1e-9);
        }
        assert!(var < 1e-18);
    }

    #[test]
    fn constant_state_prunes_to_intercept() {
        let xs = vec![1.0; 20];
        let d = Design::build(&PolyBasis::new(1, 2), &xs, 0).unwrap();
        assert_eq!(d.columns(), 1);
        let (c, _) = d.fit(&[3.0; 20]);
        assert!((c[0] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn too_few_paths() {
        let xs = vec![0.0, 1.0, 2.0];
        assert!(matches!(Design::build(&PolyBasis::new(1, 2), &xs, 0), Err(Error::InsufficientPaths { .. })));
    }
}
