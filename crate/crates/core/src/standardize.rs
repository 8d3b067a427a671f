//! Per-feature standardization (subtract mean, divide by standard deviation).

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::{SequenceDataset, SequenceItem};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeFeatureStats {
    /// One-based node id, matching dataset files.
    pub node: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Standardization {
    /// One set of statistics over the frames of every sequence.
    Pooled(FeatureStats),
    PerNode {
        nodes: Vec<NodeFeatureStats>,
    },
}

fn feature_stats(frames: ArrayView2<f64>, scope: &str) -> Result<FeatureStats> {
    let mean = frames.mean_axis(Axis(0)).ok_or(Error::EmptyDataset)?;
    let std = frames.std_axis(Axis(0), 0.0);
    for (j, (&s, &m)) in std.iter().zip(mean.iter()).enumerate() {
        if s.is_nan() || s <= 1e-12 * m.abs().max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "feature {} (1-based) is constant{scope}; cannot standardize",
                j + 1
            )));
        }
    }
    Ok(FeatureStats {
        mean: mean.to_vec(),
        std: std.to_vec(),
    })
}

fn frames_of<'a>(items: impl Iterator<Item = &'a SequenceItem>, d: usize) -> Array2<f64> {
    let rows: Vec<&SequenceItem> = items.collect();
    let total: usize = rows.iter().map(|i| i.seq.nrows()).sum();
    let mut out = Array2::zeros((total, d));
    let mut r = 0;
    for item in rows {
        let t = item.seq.nrows();
        out.slice_mut(ndarray::s![r..r + t, ..]).assign(&item.seq);
        r += t;
    }
    out
}

impl Standardization {
    pub fn fit(dataset: &SequenceDataset, per_node: bool) -> Result<Self> {
        let d = dataset.dim().ok_or(Error::EmptyDataset)?;
        if !per_node {
            return Ok(Self::Pooled(feature_stats(dataset.pooled_frames().view(), "")?));
        }
        let mut nodes: Vec<usize> = dataset.items().iter().map(|i| i.node).collect();
        nodes.sort_unstable();
        nodes.dedup();
        let mut out = Vec::with_capacity(nodes.len());
        for node in nodes {
            let frames = frames_of(dataset.items().iter().filter(|i| i.node == node), d);
            let st = feature_stats(frames.view(), &format!(" at node {}", node + 1))?;
            out.push(NodeFeatureStats {
                node: node + 1,
                mean: st.mean,
                std: st.std,
            });
        }
        Ok(Self::PerNode { nodes: out })
    }

    fn stats_for(&self, node: usize) -> Result<(Array1<f64>, Array1<f64>)> {
        match self {
            Self::Pooled(st) => Ok((Array1::from(st.mean.clone()), Array1::from(st.std.clone()))),
            Self::PerNode { nodes } => nodes
                .iter()
                .find(|n| n.node == node + 1)
                .map(|n| (Array1::from(n.mean.clone()), Array1::from(n.std.clone())))
                .ok_or_else(|| Error::InvalidParameter(format!("no standardization statistics for node {}", node + 1))),
        }
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            Self::Pooled(st) => Some(st.mean.len()),
            Self::PerNode { nodes } => nodes.first().map(|n| n.mean.len()),
        }
    }

    pub fn apply_seq(&self, seq: ArrayView2<f64>, node: usize) -> Result<Array2<f64>> {
        let (mean, std) = self.stats_for(node)?;
        if seq.ncols() != mean.len() {
            return Err(Error::Dimension(format!(
                "sequence has {} features, statistics have {}",
                seq.ncols(),
                mean.len()
            )));
        }
        Ok((&seq - &mean) / &std)
    }

    /// Maps standardized values back to the original scale.
    pub fn invert_seq(&self, seq: ArrayView2<f64>, node: usize) -> Result<Array2<f64>> {
        let (mean, std) = self.stats_for(node)?;
        if seq.ncols() != mean.len() {
            return Err(Error::Dimension("feature count mismatch".into()));
        }
        Ok(&seq * &std + &mean)
    }

    pub fn apply(&self, dataset: &SequenceDataset) -> Result<SequenceDataset> {
        let items = dataset
            .items()
            .iter()
            .map(|item| {
                Ok(SequenceItem {
                    node: item.node,
                    seq: self.apply_seq(item.seq.view(), item.node)?,
                    label: item.label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        SequenceDataset::new(items)
    }
}
