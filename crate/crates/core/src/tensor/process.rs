use serde::Serialize;

use super::{ipow, MultilinearForm};
use crate::error::{Error, Result};
use crate::problem::TimeGrid;

/// Form-valued process sampled on a grid, either one series or one per path.
#[derive(Clone, Debug, Serialize)]
pub struct TensorProcess {
    grid: TimeGrid,
    arity: usize,
    dim: usize,
    paths: Option<usize>,
    data: Vec<f64>,
}

impl TensorProcess {
    pub fn deterministic(grid: TimeGrid, arity: usize, dim: usize) -> Self {
        let len = (grid.steps() + 1) * ipow(dim, arity);
        Self { grid, arity, dim, paths: None, data: vec![0.0; len] }
    }

    pub fn per_path(grid: TimeGrid, arity: usize, dim: usize, paths: usize) -> Self {
        let len = paths * (grid.steps() + 1) * ipow(dim, arity);
        Self { grid, arity, dim, paths: Some(paths), data: vec![0.0; len] }
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_deterministic(&self) -> bool {
        self.paths.is_none()
    }

    fn offset(&self, path: usize, node: usize) -> usize {
        let block = ipow(self.dim, self.arity);
        match self.paths {
            None => node * block,
            Some(_) => (path * (self.grid.steps() + 1) + node) * block,
        }
    }

    /// Coefficients at (path, node); the path is ignored for a single series.
    pub fn at(&self, path: usize, node: usize) -> &[f64] {
        let o = self.offset(path, node);
        &self.data[o..o + ipow(self.dim, self.arity)]
    }

    pub fn at_mut(&mut self, path: usize, node: usize) -> &mut [f64] {
        let o = self.offset(path, node);
        let len = ipow(self.dim, self.arity);
        &mut self.data[o..o + len]
    }

    pub fn form_at(&self, path: usize, node: usize) -> MultilinearForm {
        MultilinearForm::from_coeffs(self.arity, self.dim, self.at(path, node).to_vec()).expect("process shape")
    }

    pub fn set(&mut self, path: usize, node: usize, form: &MultilinearForm) -> Result<()> {
        if form.arity() != self.arity {
            return Err(Error::ArityMismatch { expected: self.arity, got: form.arity() });
        }
        if form.dim() != self.dim {
            return Err(Error::DimMismatch { expected: self.dim, got: form.dim() });
        }
        self.at_mut(path, node).copy_from_slice(form.coeffs());
        Ok(())
    }
}
