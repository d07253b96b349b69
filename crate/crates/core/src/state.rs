use serde::{Deserialize, Serialize};

/// Bus voltage angles (radians) and magnitudes (per-unit), indexed like the
/// buses of the graph they belong to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub angle: Vec<f64>,
    pub vmag: Vec<f64>,
}

impl StateVector {
    /// All magnitudes 1 pu, all angles equal to `reference_angle`.
    pub fn flat(n: usize, reference_angle: f64) -> Self {
        Self {
            angle: vec![reference_angle; n],
            vmag: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.angle.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angle.is_empty()
    }

    /// Largest componentwise difference over both halves.
    pub fn max_abs_diff(&self, other: &StateVector) -> f64 {
        let a = self.angle.iter().zip(&other.angle).map(|(x, y)| (x - y).abs());
        let v = self.vmag.iter().zip(&other.vmag).map(|(x, y)| (x - y).abs());
        a.chain(v).fold(0.0, f64::max)
    }
}
