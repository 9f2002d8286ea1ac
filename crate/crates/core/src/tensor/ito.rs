//! Numerical check of the multilinear Itô formula.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::Serialize;

use super::{eval_raw, MultilinearForm};
use crate::error::{Error, Result};
use crate::problem::{PathEnsemble, TimeGrid};
use crate::stats::{loglog_fit, mean_se, SlopeFit};

/// dP = A dt + B dW for a form-valued process and dx = f dt + g dW for the state.
pub trait ItoSystem: Sync {
    fn arity(&self) -> usize;
    fn dim(&self) -> usize;
    fn initial_form(&self) -> MultilinearForm;
    fn initial_state(&self) -> Vec<f64>;
    /// (A, B) at time t.
    fn form_coefficients(&self, t: f64, p: &MultilinearForm, x: &[f64]) -> (MultilinearForm, MultilinearForm);
    /// (f, g) at time t.
    fn state_coefficients(&self, t: f64, p: &MultilinearForm, x: &[f64]) -> (Vec<f64>, Vec<f64>);
}

/// Constant A, B and affine f = F x + f₀, g = G x + g₀.
#[derive(Clone, Debug)]
pub struct AffineItoSystem {
    pub p0: MultilinearForm,
    pub x0: Vec<f64>,
    pub a: MultilinearForm,
    pub b: MultilinearForm,
    /// Row-major n×n.
    pub f_lin: Vec<f64>,
    pub f0: Vec<f64>,
    pub g_lin: Vec<f64>,
    pub g0: Vec<f64>,
}

impl AffineItoSystem {
    fn affine(m: &[f64], c: &[f64], x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..n).map(|i| c[i] + (0..n).map(|j| m[i * n + j] * x[j]).sum::<f64>()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let (d, n) = (self.p0.arity(), self.p0.dim());
        for form in [&self.a, &self.b] {
            if form.arity() != d {
                return Err(Error::ArityMismatch { expected: d, got: form.arity() });
            }
            if form.dim() != n {
                return Err(Error::DimMismatch { expected: n, got: form.dim() });
            }
        }
        for (v, len) in [(&self.x0, n), (&self.f0, n), (&self.g0, n), (&self.f_lin, n * n), (&self.g_lin, n * n)] {
            if v.len() != len {
                return Err(Error::DimMismatch { expected: len, got: v.len() });
            }
        }
        Ok(())
    }
}

impl ItoSystem for AffineItoSystem {
    fn arity(&self) -> usize {
        self.p0.arity()
    }

    fn dim(&self) -> usize {
        self.p0.dim()
    }

    fn initial_form(&self) -> MultilinearForm {
        self.p0.clone()
    }

    fn initial_state(&self) -> Vec<f64> {
        self.x0.clone()
    }

    fn form_coefficients(&self, _t: f64, _p: &MultilinearForm, _x: &[f64]) -> (MultilinearForm, MultilinearForm) {
        (self.a.clone(), self.b.clone())
    }

    fn state_coefficients(&self, _t: f64, _p: &MultilinearForm, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (Self::affine(&self.f_lin, &self.f0, x), Self::affine(&self.g_lin, &self.g0, x))
    }
}

/// A random affine system with entries uniform in [−½, ½] (coefficients of
/// the state equation) and [−1, 1] (forms and initial values).
pub fn random_affine_system(arity: usize, dim: usize, seed: u64) -> AffineItoSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wide = Uniform::new(-1.0, 1.0).expect("valid range");
    let narrow = Uniform::new(-0.5, 0.5).expect("valid range");
    let mut draw = |len: usize, u: &Uniform<f64>| -> Vec<f64> { (0..len).map(|_| u.sample(&mut rng)).collect() };
    let len = super::ipow(dim, arity);
    let form = |c: Vec<f64>| MultilinearForm::from_coeffs(arity, dim, c).expect("form shape");
    AffineItoSystem {
        p0: form(draw(len, &wide)),
        x0: draw(dim, &wide),
        a: form(draw(len, &narrow)),
        b: form(draw(len, &narrow)),
        f_lin: draw(dim * dim, &narrow),
        f0: draw(dim, &wide),
        g_lin: draw(dim * dim, &narrow),
        g0: draw(dim, &wide),
    }
}

/// P evaluated on x in every slot except those listed, which take the given vectors.
fn eval_with(p: &[f64], n: usize, d: usize, x: &[f64], reps: &[(usize, &[f64])]) -> f64 {
    let mut args: Vec<&[f64]> = vec![x; d];
    for (slot, v) in reps {
        args[*slot] = v;
    }
    eval_raw(p, n, &args)
}

/// (drift, diffusion) integrands of d[P(x,…,x)].
pub fn ito_integrands(p: &[f64], a: &[f64], b: &[f64], n: usize, d: usize, x: &[f64], f: &[f64], g: &[f64]) -> (f64, f64) {
    let mut drift = eval_with(a, n, d, x, &[]);
    let mut diff = eval_with(b, n, d, x, &[]);
    for i in 0..d {
        drift += eval_with(p, n, d, x, &[(i, f)]);
        drift += eval_with(b, n, d, x, &[(i, g)]);
        diff += eval_with(p, n, d, x, &[(i, g)]);
        for j in i + 1..d {
            drift += eval_with(p, n, d, x, &[(i, g), (j, g)]);
        }
    }
    (drift, diff)
}

#[derive(Clone, Debug, Serialize)]
pub struct ItoResidual {
    pub steps: usize,
    pub mean_abs: f64,
    pub std_error: f64,
    pub mean_signed: f64,
}

/// Both sides of the multilinear Itô formula by Euler sums along each path;
/// residual = P(T)(x(T),…) − P(0)(x₀,…) − Σ drift·Δt − Σ diffusion·ΔW.
pub fn multilinear_ito_residual<S: ItoSystem>(system: &S, paths: &PathEnsemble) -> Result<ItoResidual> {
    let p0 = system.initial_form();
    let (d, n) = (system.arity(), system.dim());
    if p0.arity() != d {
        return Err(Error::ArityMismatch { expected: d, got: p0.arity() });
    }
    if p0.dim() != n || system.initial_state().len() != n {
        return Err(Error::DimMismatch { expected: n, got: p0.dim() });
    }
    let grid = paths.grid();
    let res: Vec<Result<f64>> = (0..paths.path_count()).into_par_iter().map(|path| residual_on_path(system, &grid, &paths.path_increments(path))).collect();
    let res: Vec<f64> = res.into_iter().collect::<Result<_>>()?;
    let abs: Vec<f64> = res.iter().map(|r| r.abs()).collect();
    let (mean_abs, std_error) = mean_se(&abs);
    let (mean_signed, _) = mean_se(&res);
    Ok(ItoResidual { steps: grid.steps(), mean_abs, std_error, mean_signed })
}

fn residual_on_path<S: ItoSystem>(system: &S, grid: &TimeGrid, dw: &[f64]) -> Result<f64> {
    let (d, n) = (system.arity(), system.dim());
    let dt = grid.dt();
    let mut p = system.initial_form();
    let mut x = system.initial_state();
    let start = eval_with(p.coeffs(), n, d, &x, &[]);
    let mut rhs = 0.0;
    for (i, &w) in dw.iter().enumerate() {
        let t = grid.node(i);
        let (a, b) = system.form_coefficients(t, &p, &x);
        let (f, g) = system.state_coefficients(t, &p, &x);
        if a.arity() != d || b.arity() != d {
            return Err(Error::ArityMismatch { expected: d, got: a.arity().max(b.arity()) });
        }
        if f.len() != n || g.len() != n {
            return Err(Error::DimMismatch { expected: n, got: f.len().max(g.len()) });
        }
        let (dr, di) = ito_integrands(p.coeffs(), a.coeffs(), b.coeffs(), n, d, &x, &f, &g);
        rhs += dr * dt + di * w;
        for ((pc, ac), bc) in p.coeffs_mut().iter_mut().zip(a.coeffs()).zip(b.coeffs()) {
            *pc += ac * dt + bc * w;
        }
        for k in 0..n {
            x[k] += f[k] * dt + g[k] * w;
        }
    }
    let end = eval_with(p.coeffs(), n, d, &x, &[]);
    Ok(end - start - rhs)
}

#[derive(Clone, Debug, Serialize)]
pub struct ItoConvergence {
    pub rows: Vec<ItoResidual>,
    pub fit: SlopeFit,
}

/// Residuals on successively coarsened copies of one fine ensemble, with the
/// log-log slope of mean |residual| against Δt.
pub fn ito_convergence<S: ItoSystem>(system: &S, finest: &PathEnsemble, levels: &[usize]) -> Result<ItoConvergence> {
    let fine = finest.grid().steps();
    let mut rows = Vec::new();
    for &steps in levels {
        if steps == 0 || !fine.is_multiple_of(steps) {
            return Err(Error::GridMismatch(format!("{steps} steps does not divide the finest grid of {fine}")));
        }
        rows.push(multilinear_ito_residual(system, &finest.coarsened(fine / steps)?)?);
    }
    let dts: Vec<f64> = rows.iter().map(|r| finest.grid().horizon() / r.steps as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean_abs).collect();
    let rel: Vec<f64> = rows.iter().map(|r| if r.mean_abs > 0.0 { r.std_error / r.mean_abs } else { 0.0 }).collect();
    let fit = loglog_fit(&dts, &ys, &rel);
    Ok(ItoConvergence { rows, fit })
}
