use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid t_i = iT/N.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    steps: usize,
    horizon: f64,
}

impl TimeGrid {
    pub fn new(steps: usize, horizon: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("step count must be positive".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self { steps, horizon })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.steps {
            self.horizon
        } else {
            i as f64 * self.dt()
        }
    }

    /// Converts a time to a node index, failing unless it sits on the grid.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let k = t / self.dt();
        let r = k.round();
        if (k - r).abs() <= 1e-9 * k.abs().max(1.0) && r >= 0.0 && r as usize <= self.steps {
            Some(r as usize)
        } else {
            None
        }
    }
}

/// Simulated state trajectories, stored path-major as M×(N+1)×n.
#[derive(Clone, Debug)]
pub struct States {
    pub dim: usize,
    pub data: Vec<f64>,
    /// Paths stopped by the divergence guard.
    pub aborted: Vec<bool>,
}

impl States {
    pub fn path(&self, p: usize, nodes: usize) -> &[f64] {
        let len = nodes * self.dim;
        &self.data[p * len..(p + 1) * len]
    }

    pub fn at(&self, p: usize, i: usize, nodes: usize) -> &[f64] {
        let base = (p * nodes + i) * self.dim;
        &self.data[base..base + self.dim]
    }

    pub fn aborted_count(&self) -> usize {
        self.aborted.iter().filter(|a| **a).count()
    }
}

/// Brownian increments for M paths on a grid.
///
/// Path p draws from ChaCha8 seeded with `seed` on stream p, so any path can
/// be regenerated independently and bit-identically. Increments are drawn on
/// a grid `refine` times finer and summed, which lets coarse and fine
/// ensembles share one Brownian path.
#[derive(Clone, Debug)]
pub struct PathEnsemble {
    grid: TimeGrid,
    path_count: usize,
    seed: u64,
    refine: usize,
    increments: Option<Vec<f64>>,
    pub states: Option<States>,
}

impl PathEnsemble {
    pub fn new(grid: TimeGrid, path_count: usize, seed: u64) -> Result<Self> {
        if path_count == 0 {
            return Err(Error::Config("path count must be positive".into()));
        }
        Ok(Self { grid, path_count, seed, refine: 1, increments: None, states: None })
    }

    /// Same Brownian paths observed on a grid coarser by `factor`.
    pub fn coarsened(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.grid.steps.is_multiple_of(factor) {
            return Err(Error::GridMismatch(format!("cannot coarsen {} steps by {factor}", self.grid.steps)));
        }
        if self.increments.is_some() {
            return Err(Error::Usage("coarsen before materializing".into()));
        }
        Ok(Self {
            grid: TimeGrid::new(self.grid.steps / factor, self.grid.horizon)?,
            path_count: self.path_count,
            seed: self.seed,
            refine: self.refine * factor,
            increments: None,
            states: None,
        })
    }

    /// Stores all increments in memory as an M×N array.
    pub fn materialize(mut self) -> Self {
        let n = self.grid.steps;
        let mut all = vec![0.0; self.path_count * n];
        for p in 0..self.path_count {
            self.generate(p, &mut all[p * n..(p + 1) * n]);
        }
        self.increments = Some(all);
        self
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn path_count(&self) -> usize {
        self.path_count
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn increments(&self) -> Option<&[f64]> {
        self.increments.as_deref()
    }

    /// Writes the increments of path `p` into `buf` (length N).
    pub fn fill_increments(&self, p: usize, buf: &mut [f64]) {
        let n = self.grid.steps;
        match &self.increments {
            Some(all) => buf.copy_from_slice(&all[p * n..(p + 1) * n]),
            None => self.generate(p, buf),
        }
    }

    pub fn path_increments(&self, p: usize) -> Vec<f64> {
        let mut buf = vec![0.0; self.grid.steps];
        self.fill_increments(p, &mut buf);
        buf
    }

    fn generate(&self, p: usize, buf: &mut [f64]) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(p as u64);
        let fine_dt = self.grid.dt() / self.refine as f64;
        let scale = fine_dt.sqrt();
        for b in buf.iter_mut() {
            let mut s = 0.0;
            for _ in 0..self.refine {
                let z: f64 = StandardNormal.sample(&mut rng);
                s += z;
            }
            *b = scale * s;
        }
    }

    pub fn states(&self) -> Result<&States> {
        self.states.as_ref().ok_or_else(|| Error::Usage("states have not been simulated".into()))
    }

    /// CSV dump of the increments, one row per path.
    pub fn export_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = vec![0.0; self.grid.steps];
        writeln!(w, "path,{}", (0..self.grid.steps).map(|i| format!("dw{i}")).collect::<Vec<_>>().join(","))?;
        for p in 0..self.path_count {
            self.fill_increments(p, &mut buf);
            let row: Vec<String> = buf.iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{p},{}", row.join(","))?;
        }
        Ok(())
    }

    /// Little-endian f64 dump of the increments, path-major.
    pub fn export_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = vec![0.0; self.grid.steps];
        for p in 0..self.path_count {
            self.fill_increments(p, &mut buf);
            for v in &buf {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_nodes() {
        let g = TimeGrid::new(8, 2.0).unwrap();
        assert_eq!(g.node(0), 0.0);
        assert_eq!(g.node(8), 2.0);
        assert_eq!(g.index_of(0.5), Some(2));
        assert_eq!(g.index_of(0.3), None);
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let e = PathEnsemble::new(TimeGrid::new(16, 1.0).unwrap(), 4, 9).unwrap();
        let a = e.path_increments(3);
        let m = e.clone().materialize();
        assert_eq!(a, m.path_increments(3));
        assert_ne!(a, e.path_increments(2));
    }

    #[test]
    fn coarsening_sums_fine_increments() {
        let e = PathEnsemble::new(TimeGrid::new(8, 1.0).unwrap(), 2, 1).unwrap();
        let fine = e.path_increments(1);
        let c = e.coarsened(4).unwrap().path_increments(1);
        assert!((c[0] - fine[..4].iter().sum::<f64>()).abs() < 1e-14);
        assert!((c[1] - fine[4..].iter().sum::<f64>()).abs() < 1e-14);
    }
}
