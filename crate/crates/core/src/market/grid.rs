use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid `t_i = i T / n` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    maturity: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(maturity: f64, steps: usize) -> Result<Self> {
        if !(maturity.is_finite() && maturity > 0.0) || steps == 0 {
            return Err(Error::EmptyGrid);
        }
        Ok(Self { maturity, steps })
    }

    pub fn maturity(&self) -> f64 {
        self.maturity
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.maturity / self.steps as f64
    }

    /// Node `i`; the last node is exactly `T`.
    pub fn time(&self, i: usize) -> f64 {
        if i == self.steps {
            self.maturity
        } else {
            self.maturity * i as f64 / self.steps as f64
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.time(i)).collect()
    }

    /// Index of the node at time `t`, if `t` lies on the grid.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let x = t / self.maturity * self.steps as f64;
        let i = x.round();
        if i < 0.0 || i > self.steps as f64 || (x - i).abs() > 1e-9 * self.steps as f64 {
            return None;
        }
        Some(i as usize)
    }

    /// Same horizon with twice as many steps.
    pub fn refined(&self) -> Self {
        Self {
            maturity: self.maturity,
            steps: self.steps * 2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodes_span_the_horizon() {
        let g = TimeGrid::new(3.0, 7).unwrap();
        let t = g.times();
        assert_eq!(t[0], 0.0);
        assert_eq!(t[7], 3.0);
        assert!(t.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert_eq!(TimeGrid::new(0.0, 4), Err(Error::EmptyGrid));
        assert_eq!(TimeGrid::new(1.0, 0), Err(Error::EmptyGrid));
        assert_eq!(TimeGrid::new(f64::NAN, 4), Err(Error::EmptyGrid));
    }

    #[test]
    fn index_lookup() {
        let g = TimeGrid::new(1.0, 8).unwrap();
        assert_eq!(g.index_of(0.25), Some(2));
        assert_eq!(g.index_of(1.0), Some(8));
        assert_eq!(g.index_of(0.3), None);
        assert_eq!(g.index_of(1.5), None);
    }
}
