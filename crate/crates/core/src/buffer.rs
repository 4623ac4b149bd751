use ndarray::Array2;

use crate::error::{Error, Result};

/// Most recent batch of `p` noise predictions plus the interval they were
/// computed over.
///
/// The buffer is a single slot: refilling it replaces the scores and the tag
/// together. Each entry of `scores` is an `n_chains × D` array.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBuffer {
    scores: Vec<Array2<f64>>,
    t_start: usize,
    t_end: usize,
}

impl ScoreBuffer {
    /// `t_end == t_start` is accepted for the degenerate zero-length step.
    pub fn new(scores: Vec<Array2<f64>>, t_start: usize, t_end: usize) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Domain("score buffer needs at least one score".into()));
        }
        if t_end > t_start {
            return Err(Error::Domain(format!(
                "buffer interval must run backward in time, got ({t_start}, {t_end})"
            )));
        }
        let shape = scores[0].dim();
        if scores.iter().any(|s| s.dim() != shape) {
            return Err(Error::Domain("scores in one buffer must share a shape".into()));
        }
        Ok(Self { scores, t_start, t_end })
    }

    pub fn order(&self) -> usize {
        self.scores.len()
    }

    pub fn scores(&self) -> &[Array2<f64>] {
        &self.scores
    }

    pub fn t_start(&self) -> usize {
        self.t_start
    }

    pub fn t_end(&self) -> usize {
        self.t_end
    }

    pub fn interval(&self) -> (usize, usize) {
        (self.t_start, self.t_end)
    }

    /// Errors unless the tag equals `(t_start, t_end)`.
    pub fn expect_interval(&self, t_start: usize, t_end: usize) -> Result<()> {
        if self.interval() != (t_start, t_end) {
            return Err(Error::StaleBuffer {
                expected_start: t_start,
                expected_end: t_end,
                found_start: self.t_start,
                found_end: self.t_end,
            });
        }
        Ok(())
    }

    /// Replaces contents and tag in one move.
    pub fn overwrite(&mut self, other: ScoreBuffer) {
        *self = other;
    }
}
