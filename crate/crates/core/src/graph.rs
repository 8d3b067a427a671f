//! Node affinity graph.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Symmetric `K × K` weight matrix with zero diagonal. Positive weights pull
/// the coefficient rows of two nodes together; negative weights push them
/// apart.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph {
    weights: Array2<f64>,
}

impl AffinityGraph {
    pub fn new(weights: Array2<f64>) -> Result<Self> {
        let (r, c) = weights.dim();
        if r == 0 || r != c {
            return Err(Error::InvalidGraph(format!(
                "weights must be a non-empty square matrix, got {r}x{c}"
            )));
        }
        for j in 0..r {
            if weights[[j, j]] != 0.0 {
                return Err(Error::InvalidGraph(format!(
                    "diagonal entry ({}, {}) is {}, expected 0",
                    j + 1,
                    j + 1,
                    weights[[j, j]]
                )));
            }
            for k in 0..r {
                let w = weights[[j, k]];
                if !w.is_finite() {
                    return Err(Error::InvalidGraph(format!(
                        "entry ({}, {}) is not finite",
                        j + 1,
                        k + 1
                    )));
                }
                if w != weights[[k, j]] {
                    return Err(Error::InvalidGraph(format!(
                        "not symmetric: ({}, {}) = {} but ({}, {}) = {}",
                        j + 1,
                        k + 1,
                        w,
                        k + 1,
                        j + 1,
                        weights[[k, j]]
                    )));
                }
            }
        }
        Ok(Self { weights })
    }

    /// Graph with every off-diagonal weight equal to `weight`.
    pub fn complete(num_nodes: usize, weight: f64) -> Result<Self> {
        let mut w = Array2::from_elem((num_nodes, num_nodes), weight);
        w.diag_mut().fill(0.0);
        Self::new(w)
    }

    /// Graph with no edges; training against it equals training without
    /// regularization.
    pub fn empty(num_nodes: usize) -> Result<Self> {
        Self::new(Array2::zeros((num_nodes, num_nodes)))
    }

    pub fn num_nodes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn weight(&self, j: usize, k: usize) -> f64 {
        self.weights[[j, k]]
    }

    /// Rescales so the largest weight equals 1. Graphs whose maximum weight
    /// is not positive are returned unchanged.
    pub fn normalized_to_unit_max(&self) -> Self {
        let max = self.weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max > 0.0 {
            Self {
                weights: self.weights.mapv(|w| w / max),
            }
        } else {
            self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn validates_structure() {
        assert!(AffinityGraph::new(array![[0.0, 1.0], [1.0, 0.0]]).is_ok());
        assert!(AffinityGraph::new(array![[0.0, -2.0], [-2.0, 0.0]]).is_ok());
        assert!(AffinityGraph::new(array![[0.0, 1.0], [0.5, 0.0]]).is_err());
        assert!(AffinityGraph::new(array![[1.0, 1.0], [1.0, 0.0]]).is_err());
        assert!(AffinityGraph::new(Array2::zeros((2, 3))).is_err());
    }

    #[test]
    fn unit_max_normalization() {
        let g = AffinityGraph::new(array![[0.0, 4.0, 2.0], [4.0, 0.0, -1.0], [2.0, -1.0, 0.0]])
            .unwrap()
            .normalized_to_unit_max();
        assert_eq!(g.weight(0, 1), 1.0);
        assert_eq!(g.weight(0, 2), 0.5);
        assert_eq!(g.weight(1, 2), -0.25);
    }
}
