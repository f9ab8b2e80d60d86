//! Twin-versus-plant error metrics, computed incrementally or post hoc.

use serde::{Deserialize, Serialize};

use crate::runlog::{DataError, RunLog};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub rmse_y: f64,
    pub max_abs_y: f64,
    pub rmse_u: f64,
    pub horizon: f64,
    pub samples: usize,
}

/// Running accumulator behind [`DivergenceReport`].
#[derive(Debug, Clone, Default)]
pub struct DivergenceTracker {
    sum_sq_y: f64,
    sum_sq_u: f64,
    max_abs_y: f64,
    n: usize,
    first_t: f64,
    last_t: f64,
}

impl DivergenceTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: f64, y_plant: f64, y_twin: f64, u_plant: f64, u_twin: f64) {
        let ey = y_plant - y_twin;
        let eu = u_plant - u_twin;
        self.sum_sq_y += ey * ey;
        self.sum_sq_u += eu * eu;
        self.max_abs_y = self.max_abs_y.max(ey.abs());
        if self.n == 0 {
            self.first_t = t;
        }
        self.last_t = t;
        self.n += 1;
    }

    pub fn samples(&self) -> usize {
        self.n
    }

    /// `None` until at least one sample was pushed.
    pub fn report(&self) -> Option<DivergenceReport> {
        (self.n > 0).then(|| {
            let n = self.n as f64;
            DivergenceReport {
                rmse_y: (self.sum_sq_y / n).sqrt(),
                max_abs_y: self.max_abs_y,
                rmse_u: (self.sum_sq_u / n).sqrt(),
                horizon: self.last_t - self.first_t,
                samples: self.n,
            }
        })
    }
}

impl DivergenceReport {
    /// Compares two runs on a shared time grid.
    pub fn between(plant: &RunLog, twin: &RunLog) -> Result<Self, DataError> {
        plant.same_grid(twin)?;
        let mut tracker = DivergenceTracker::new();
        for (p, w) in plant.samples.iter().zip(&twin.samples) {
            tracker.push(p.t, p.y, w.y, p.u, w.u);
        }
        tracker.report().ok_or(DataError::Empty)
    }
}
