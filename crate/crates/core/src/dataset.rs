//! Node-tagged sequence collections.

use ndarray::Array2;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Normal,
    Anomalous,
}

/// One observed sequence. `node` is a zero-based node index.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceItem {
    pub node: usize,
    pub seq: Array2<f64>,
    pub label: Option<Label>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SequenceDataset {
    items: Vec<SequenceItem>,
}

impl SequenceDataset {
    /// Validates that every sequence is non-empty, finite, and shares one
    /// feature dimension.
    pub fn new(items: Vec<SequenceItem>) -> Result<Self> {
        let mut dim = None;
        for (i, item) in items.iter().enumerate() {
            if item.seq.nrows() == 0 || item.seq.ncols() == 0 {
                return Err(Error::Dimension(format!("sequence {i} is empty")));
            }
            if item.seq.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("sequence {i}")));
            }
            match dim {
                None => dim = Some(item.seq.ncols()),
                Some(d) if d != item.seq.ncols() => {
                    return Err(Error::Dimension(format!(
                        "sequence {i} has dimension {}, expected {d}",
                        item.seq.ncols()
                    )))
                }
                _ => {}
            }
        }
        Ok(Self { items })
    }

    pub fn from_pairs(pairs: Vec<(usize, Array2<f64>)>) -> Result<Self> {
        Self::new(
            pairs
                .into_iter()
                .map(|(node, seq)| SequenceItem { node, seq, label: None })
                .collect(),
        )
    }

    pub fn items(&self) -> &[SequenceItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Feature dimension, or `None` for an empty dataset.
    pub fn dim(&self) -> Option<usize> {
        self.items.first().map(|i| i.seq.ncols())
    }

    /// One more than the largest node index present.
    pub fn min_num_nodes(&self) -> usize {
        self.items.iter().map(|i| i.node + 1).max().unwrap_or(0)
    }

    pub fn total_frames(&self) -> usize {
        self.items.iter().map(|i| i.seq.nrows()).sum()
    }

    pub fn check_nodes(&self, num_nodes: usize) -> Result<()> {
        for item in &self.items {
            if item.node >= num_nodes {
                return Err(Error::InvalidNode {
                    node: item.node,
                    num_nodes,
                });
            }
        }
        Ok(())
    }

    /// All frames stacked into one `(Σ T_i) × D` matrix.
    pub fn pooled_frames(&self) -> Array2<f64> {
        let d = self.dim().unwrap_or(0);
        let mut out = Array2::zeros((self.total_frames(), d));
        let mut r = 0;
        for item in &self.items {
            let t = item.seq.nrows();
            out.slice_mut(ndarray::s![r..r + t, ..]).assign(&item.seq);
            r += t;
        }
        out
    }

    pub fn extend(&mut self, other: SequenceDataset) -> Result<()> {
        let mut items = std::mem::take(&mut self.items);
        items.extend(other.items);
        *self = Self::new(items)?;
        Ok(())
    }
}
