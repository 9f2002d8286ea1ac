use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

use super::{ControlProblem, TimeGrid};

/// The unperturbed control ū.
#[derive(Clone)]
pub enum BaseControl {
    Constant(Vec<f64>),
    /// One control point per grid cell.
    Schedule(Vec<Vec<f64>>),
    /// Feedback u = κ(t, x), writing into the output slice.
    Feedback(Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>),
}

impl fmt::Debug for BaseControl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaseControl::Constant(u) => f.debug_tuple("Constant").field(u).finish(),
            BaseControl::Schedule(s) => f.debug_tuple("Schedule").field(&s.len()).finish(),
            BaseControl::Feedback(_) => f.write_str("Feedback"),
        }
    }
}

/// Needle on grid cells `start .. start + len`, i.e. E_ε = [t_start, t_start + ε).
#[derive(Clone, Debug, PartialEq)]
pub struct Spike {
    pub start: usize,
    pub len: usize,
    pub value: Vec<f64>,
    /// Step count of the grid the spike was snapped to.
    pub grid_steps: usize,
}

impl Spike {
    /// Snaps [τ, τ+ε) to grid nodes; both ends must already be nodes.
    pub fn from_times(grid: &TimeGrid, tau: f64, eps: f64, value: Vec<f64>) -> Result<Self> {
        let end = tau + eps;
        if tau < 0.0 || eps < 0.0 || end > grid.horizon() * (1.0 + 1e-12) {
            return Err(Error::SpikeOutOfRange { tau, end, horizon: grid.horizon() });
        }
        let (Some(start), Some(stop)) = (grid.index_of(tau), grid.index_of(end)) else {
            return Err(Error::SpikeNotAligned { tau, eps, dt: grid.dt() });
        };
        Ok(Self { start, len: stop - start, value, grid_steps: grid.steps() })
    }

    pub fn contains(&self, step: usize) -> bool {
        step >= self.start && step < self.start + self.len
    }

    pub fn eps(&self, grid: &TimeGrid) -> f64 {
        self.len as f64 * grid.dt()
    }

    pub fn tau(&self, grid: &TimeGrid) -> f64 {
        grid.node(self.start)
    }
}

/// ū plus an optional needle. Under a feedback base the spike overrides the
/// feedback on E_ε and the feedback acts on the current state elsewhere.
#[derive(Clone, Debug)]
pub struct ControlPolicy {
    pub base: BaseControl,
    pub spike: Option<Spike>,
    pub control_dim: usize,
}

impl ControlPolicy {
    pub fn constant(u: Vec<f64>) -> Self {
        let m = u.len();
        Self { base: BaseControl::Constant(u), spike: None, control_dim: m }
    }

    pub fn schedule(points: Vec<Vec<f64>>) -> Result<Self> {
        let m = points.first().map(|p| p.len()).ok_or_else(|| Error::Usage("empty schedule".into()))?;
        Ok(Self { base: BaseControl::Schedule(points), spike: None, control_dim: m })
    }

    pub fn feedback(control_dim: usize, k: Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>) -> Self {
        Self { base: BaseControl::Feedback(k), spike: None, control_dim }
    }

    pub fn with_spike(&self, spike: Spike) -> Self {
        Self { base: self.base.clone(), spike: Some(spike), control_dim: self.control_dim }
    }

    pub fn without_spike(&self) -> Self {
        Self { base: self.base.clone(), spike: None, control_dim: self.control_dim }
    }

    pub fn is_feedback(&self) -> bool {
        matches!(self.base, BaseControl::Feedback(_))
    }

    /// ū at cell `step` (ignores the spike).
    pub fn base_control(&self, step: usize, t: f64, x: &[f64], out: &mut [f64]) {
        match &self.base {
            BaseControl::Constant(u) => out.copy_from_slice(u),
            BaseControl::Schedule(s) => out.copy_from_slice(&s[step]),
            BaseControl::Feedback(k) => k(t, x, out),
        }
    }

    pub fn control(&self, step: usize, t: f64, x: &[f64], out: &mut [f64]) {
        match &self.spike {
            Some(s) if s.contains(step) => out.copy_from_slice(&s.value),
            _ => self.base_control(step, t, x, out),
        }
    }

    /// Checks the policy against a problem and grid: dimensions, schedule
    /// length, spike range and membership of every deterministic value.
    pub fn validate(&self, problem: &ControlProblem, grid: &TimeGrid) -> Result<()> {
        if self.control_dim != problem.control_dim {
            return Err(Error::DimMismatch { expected: problem.control_dim, got: self.control_dim });
        }
        match &self.base {
            BaseControl::Constant(u) => {
                if !problem.control_set.contains(u) {
                    return Err(Error::ControlNotAdmissible(u.clone()));
                }
            }
            BaseControl::Schedule(s) => {
                if s.len() != grid.steps() {
                    return Err(Error::GridMismatch(format!("schedule has {} cells, grid has {}", s.len(), grid.steps())));
                }
                if let Some(bad) = s.iter().find(|u| !problem.control_set.contains(u)) {
                    return Err(Error::ControlNotAdmissible(bad.clone()));
                }
            }
            BaseControl::Feedback(_) => {}
        }
        if let Some(sp) = &self.spike {
            if sp.grid_steps != grid.steps() {
                return Err(Error::GridMismatch(format!("spike built for {} steps, grid has {}", sp.grid_steps, grid.steps())));
            }
            if sp.start + sp.len > grid.steps() {
                return Err(Error::SpikeOutOfRange { tau: grid.node(sp.start), end: (sp.start + sp.len) as f64 * grid.dt(), horizon: grid.horizon() });
            }
            if !problem.control_set.contains(&sp.value) {
                return Err(Error::ControlNotAdmissible(sp.value.clone()));
            }
        }
        Ok(())
    }
}
