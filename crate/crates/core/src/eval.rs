//! Scoring, ROC analysis, sparsity and node clustering.

use crate::dataset::{Label, SequenceDataset};
use crate::error::{Error, Result};
use crate::mixture::SparseMixtureModel;

/// Threshold used when reporting sparsity of closed-form trained
/// coefficients, which never reach exact zero.
pub const SPARSITY_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSequence {
    pub node: usize,
    pub length: usize,
    /// `ln p(X | node) / T`.
    pub avg_log_likelihood: f64,
    pub label: Option<Label>,
}

pub fn score_dataset(model: &SparseMixtureModel, dataset: &SequenceDataset) -> Result<Vec<ScoredSequence>> {
    dataset
        .items()
        .iter()
        .map(|item| {
            let ll = model.log_likelihood(item.seq.view(), item.node)?;
            let length = item.seq.nrows();
            Ok(ScoredSequence {
                node: item.node,
                length,
                avg_log_likelihood: ll / length as f64,
                label: item.label,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// `(false positive rate, true positive rate)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// ROC with anomalous as the positive class and lower scores flagged first.
/// Equal scores enter the curve as one step, so ties earn half credit.
pub fn roc_auc(scores: &[(f64, Label)]) -> Result<RocCurve> {
    let positives = scores.iter().filter(|(_, l)| *l == Label::Anomalous).count();
    let negatives = scores.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::InvalidParameter(
            "ROC needs at least one normal and one anomalous score".into(),
        ));
    }
    if scores.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::NonFinite("scores".into()));
    }
    let mut sorted: Vec<(f64, Label)> = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (p, n) = (positives as f64, negatives as f64);
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == threshold {
            match sorted[i].1 {
                Label::Anomalous => tp += 1,
                Label::Normal => fp += 1,
            }
            i += 1;
        }
        points.push((fp as f64 / n, tp as f64 / p));
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum();
    Ok(RocCurve { points, auc })
}

/// Fraction of coefficients that are exactly zero.
pub fn relative_sparsity(model: &SparseMixtureModel) -> f64 {
    relative_sparsity_below(model, 0.0)
}

/// Fraction of coefficients `<= threshold`.
pub fn relative_sparsity_below(model: &SparseMixtureModel, threshold: f64) -> f64 {
    let alpha = model.alpha();
    let zeros = alpha.iter().filter(|&&a| a <= threshold).count();
    zeros as f64 / alpha.len() as f64
}

/// Dominant component per node (zero-based); ties go to the lowest index.
pub fn cluster_assignments(model: &SparseMixtureModel) -> Vec<usize> {
    model
        .alpha()
        .outer_iter()
        .map(|row| {
            let mut best = 0;
            for (m, &a) in row.iter().enumerate() {
                if a > row[best] {
                    best = m;
                }
            }
            best
        })
        .collect()
}
