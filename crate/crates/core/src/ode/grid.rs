use crate::error::{Error, Result};

/// Sample times `t_1 < t_2 < … < t_L` for a trajectory that starts at `t_0 = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if let Some(bad) = points.iter().find(|t| !t.is_finite() || **t < 0.0) {
            return Err(Error::contract(format!(
                "grid points must be finite and non-negative, got {bad}"
            )));
        }
        if let Some(w) = points.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::contract(format!(
                "grid must be strictly increasing, found {} then {}",
                w[0], w[1]
            )));
        }
        Ok(TimeGrid { points })
    }

    /// `t_i = i·Δ` for `i = 1..=len`.
    pub fn equidistant(len: usize, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::contract(format!("interval width must be positive, got {delta}")));
        }
        Self::new((1..=len).map(|i| i as f64 * delta).collect())
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Start and end of segment `i` (1-based): `(t_{i-1}, t_i)`, with `t_0 = 0`.
    pub fn segment(&self, i: usize) -> (f64, f64) {
        let s = if i == 1 { 0.0 } else { self.points[i - 2] };
        (s, self.points[i - 1])
    }

    pub fn truncate(&self, k: usize) -> TimeGrid {
        TimeGrid {
            points: self.points[..k.min(self.len())].to_vec(),
        }
    }
}
