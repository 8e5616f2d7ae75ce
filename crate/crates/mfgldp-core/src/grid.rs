//! Uniform time grids on [0, T].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid with `steps` intervals (`steps + 1` nodes) on `[0, t_end]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_end: f64,
    steps: usize,
}

impl TimeGrid {
    /// Creates a grid on `[0, t_end]` with `steps` uniform intervals.
    pub fn new(t_end: f64, steps: usize) -> Result<Self> {
        if !(t_end > 0.0) || !t_end.is_finite() {
            return Err(Error::InvalidSpec { reason: format!("horizon must be positive, got {t_end}") });
        }
        if steps == 0 {
            return Err(Error::InvalidSpec { reason: "time grid needs at least one step".into() });
        }
        Ok(TimeGrid { t_end, steps })
    }

    /// Right endpoint of the horizon.
    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    /// Number of intervals.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of nodes (`steps + 1`).
    pub fn num_nodes(&self) -> usize {
        self.steps + 1
    }

    /// Interval length.
    pub fn dt(&self) -> f64 {
        self.t_end / self.steps as f64
    }

    /// Time of node `k`, computed as `k * t_end / steps` so that the last
    /// node is exactly `t_end`.
    pub fn node(&self, k: usize) -> f64 {
        debug_assert!(k <= self.steps);
        if k == self.steps {
            self.t_end
        } else {
            k as f64 * self.t_end / self.steps as f64
        }
    }

    /// All node times in increasing order.
    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.node(k)).collect()
    }

    /// Index of the interval containing `t` (clamped so that `t = t_end`
    /// belongs to the last interval), together with the fractional position
    /// `tau` within that interval in `[0, 1]`.
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let slack = 1e-7 * self.t_end.max(1.0);
        if !t.is_finite() || t < -slack || t > self.t_end + slack {
            return Err(Error::FieldDomainError { t, t_end: self.t_end });
        }
        let t = t.clamp(0.0, self.t_end);
        let dt = self.dt();
        let mut k = ((t / dt).floor() as usize).min(self.steps.saturating_sub(1));
        // Float division can land one cell high near node boundaries.
        if t < self.node(k) && k > 0 {
            k -= 1;
        }
        let tau = ((t - self.node(k)) / dt).clamp(0.0, 1.0);
        Ok((k, tau))
    }

    /// Checks that two grids coincide, for operations pairing node data.
    pub fn ensure_matches(&self, other: &TimeGrid, context: &str) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                context: format!(
                    "{context}: [0,{}] with {} steps vs [0,{}] with {} steps",
                    self.t_end, self.steps, other.t_end, other.steps
                ),
            })
        }
    }
}
