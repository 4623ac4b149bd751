use ndarray::Array2;

use crate::error::{Error, Result};
use crate::schedule::TimeGrid;

/// Batch of states recorded at the points of a grid.
///
/// `states[i]` holds one row per chain at time `grid[i]`. When present,
/// `scores[i]` holds the noise predictions evaluated at those states.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    grid: TimeGrid,
    states: Vec<Array2<f64>>,
    scores: Option<Vec<Array2<f64>>>,
}

impl TrajectoryRecord {
    pub fn new(
        grid: TimeGrid,
        states: Vec<Array2<f64>>,
        scores: Option<Vec<Array2<f64>>>,
    ) -> Result<Self> {
        if states.len() != grid.len() {
            return Err(Error::Alignment(format!(
                "{} states for a grid of {} points",
                states.len(),
                grid.len()
            )));
        }
        if let Some(s) = &scores {
            if s.len() != states.len() {
                return Err(Error::Alignment("scores not aligned to states".into()));
            }
        }
        if let Some(first) = states.first() {
            if states.iter().any(|s| s.dim() != first.dim()) {
                return Err(Error::Alignment("state batches differ in shape".into()));
            }
        }
        Ok(Self { grid, states, scores })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn states(&self) -> &[Array2<f64>] {
        &self.states
    }

    pub fn scores(&self) -> Option<&[Array2<f64>]> {
        self.scores.as_deref()
    }

    pub fn chains(&self) -> usize {
        self.states.first().map_or(0, |s| s.nrows())
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.ncols())
    }

    pub fn endpoint(&self) -> &Array2<f64> {
        self.states.last().expect("trajectory holds at least one point")
    }

    /// State batch recorded at time index `t`, if `t` is on the grid.
    pub fn state_at(&self, t: usize) -> Option<&Array2<f64>> {
        self.position(t).map(|i| &self.states[i])
    }

    pub fn position(&self, t: usize) -> Option<usize> {
        // points are strictly decreasing
        self.grid.points().binary_search_by(|p| t.cmp(p)).ok()
    }

    /// States of a single chain, one row per grid point.
    pub fn chain(&self, c: usize) -> Array2<f64> {
        let dim = self.dim();
        let mut out = Array2::zeros((self.states.len(), dim));
        for (mut row, s) in out.rows_mut().into_iter().zip(&self.states) {
            row.assign(&s.row(c));
        }
        out
    }
}
