//! Per-node mixtures over a shared dictionary of Gaussian HMMs.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::SequenceDataset;
use crate::error::{Error, Result};
use crate::graph::AffinityGraph;
use crate::hmm::{check_probability_vector, sample_categorical, GaussianHmm, StatePosteriors};
use crate::logspace::{log_sum_exp, normalize_log_weights};

/// `K` nodes mixing `M` shared HMM components.
///
/// Row `k` of `alpha` is the distribution over components for node `k`.
/// `beta`, when present, holds the unconstrained parameters that generate
/// `alpha` through [`reparameterize`].
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMixtureModel {
    pub(crate) components: Vec<GaussianHmm>,
    pub(crate) alpha: Array2<f64>,
    pub(crate) beta: Option<Array2<f64>>,
}

/// E-step output over a dataset.
#[derive(Debug, Clone)]
pub struct MixtureSufficientStats {
    /// Node index `y_i` of every sequence.
    pub nodes: Vec<usize>,
    pub node_counts: Vec<usize>,
    /// `N × M` component responsibilities.
    pub eta: Array2<f64>,
    /// `posteriors[i][m]`; `None` where node `y_i` gives component `m` zero
    /// weight, so its responsibility is exactly zero.
    pub posteriors: Vec<Vec<Option<StatePosteriors>>>,
    /// `ln p(X_i | y_i)` per sequence.
    pub log_likelihoods: Vec<f64>,
}

impl MixtureSufficientStats {
    pub fn total_log_likelihood(&self) -> f64 {
        self.log_likelihoods.iter().sum()
    }
}

/// Maps an unconstrained row to a probability vector through squared ReLU
/// normalization: `α_m = relu(β_m)² / Σ_l relu(β_l)²`.
pub fn reparameterize(beta_row: ArrayView1<f64>) -> Result<Array1<f64>> {
    let sq = beta_row.mapv(|b| if b > 0.0 { b * b } else { 0.0 });
    let total = sq.sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::DegenerateRow);
    }
    Ok(sq / total)
}

/// Row-wise [`reparameterize`] over a whole matrix.
pub fn reparameterize_rows(beta: &Array2<f64>) -> Result<Array2<f64>> {
    let mut alpha = Array2::zeros(beta.dim());
    for (k, row) in beta.outer_iter().enumerate() {
        alpha.row_mut(k).assign(&reparameterize(row)?);
    }
    Ok(alpha)
}

/// `E_{z~p}[q(z)] = p · q`.
pub fn expected_agreement(p: ArrayView1<f64>, q: ArrayView1<f64>) -> f64 {
    p.dot(&q)
}

/// `½ Σ_{j≠k} G_{jk} α_j·α_k`. The regularization weight is applied by the
/// caller.
pub fn regularizer_value(alpha: &Array2<f64>, graph: &AffinityGraph) -> f64 {
    let k_count = alpha.nrows();
    let mut total = 0.0;
    for j in 0..k_count {
        for k in 0..k_count {
            if j != k {
                let g = graph.weight(j, k);
                if g != 0.0 {
                    total += g * expected_agreement(alpha.row(j), alpha.row(k));
                }
            }
        }
    }
    0.5 * total
}

impl SparseMixtureModel {
    /// Builds a model with explicit coefficients and no `beta`.
    pub fn new(components: Vec<GaussianHmm>, alpha: Array2<f64>) -> Result<Self> {
        Self::validate(&components, &alpha)?;
        Ok(Self {
            components,
            alpha,
            beta: None,
        })
    }

    /// Builds a model whose coefficients are derived from `beta`.
    pub fn with_beta(components: Vec<GaussianHmm>, beta: Array2<f64>) -> Result<Self> {
        let alpha = reparameterize_rows(&beta)?;
        Self::validate(&components, &alpha)?;
        Ok(Self {
            components,
            alpha,
            beta: Some(beta),
        })
    }

    fn validate(components: &[GaussianHmm], alpha: &Array2<f64>) -> Result<()> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidParameter("mixture needs at least one component".into()))?;
        let (s, d) = (first.num_states(), first.dim());
        for (m, c) in components.iter().enumerate() {
            if c.num_states() != s || c.dim() != d {
                return Err(Error::Dimension(format!(
                    "component {m} has S={}, D={}; component 0 has S={s}, D={d}",
                    c.num_states(),
                    c.dim()
                )));
            }
        }
        if alpha.nrows() == 0 || alpha.ncols() != components.len() {
            return Err(Error::Dimension(format!(
                "alpha is {:?}, expected (K>0, {})",
                alpha.dim(),
                components.len()
            )));
        }
        for (k, row) in alpha.outer_iter().enumerate() {
            check_probability_vector(row, &format!("alpha row {k}"))?;
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.alpha.nrows()
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn num_states(&self) -> usize {
        self.components[0].num_states()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn components(&self) -> &[GaussianHmm] {
        &self.components
    }

    pub fn alpha(&self) -> &Array2<f64> {
        &self.alpha
    }

    pub fn beta(&self) -> Option<&Array2<f64>> {
        self.beta.as_ref()
    }

    pub(crate) fn check_node(&self, node: usize) -> Result<()> {
        if node >= self.num_nodes() {
            return Err(Error::InvalidNode {
                node,
                num_nodes: self.num_nodes(),
            });
        }
        Ok(())
    }

    /// Components with zero weight at every node.
    pub fn dead_components(&self) -> Vec<usize> {
        (0..self.num_components())
            .filter(|&m| self.alpha.column(m).iter().all(|&a| a == 0.0))
            .collect()
    }

    /// `ln Σ_m α_{node,m} p(X | z = m)`; zero-weight components are not
    /// evaluated.
    pub fn log_likelihood(&self, seq: ArrayView2<f64>, node: usize) -> Result<f64> {
        self.check_node(node)?;
        self.components[0].check_sequence(seq)?;
        let mut terms = Vec::with_capacity(self.num_components());
        for (m, comp) in self.components.iter().enumerate() {
            let a = self.alpha[[node, m]];
            if a > 0.0 {
                terms.push(a.ln() + comp.log_likelihood(seq)?);
            }
        }
        Ok(log_sum_exp(&terms))
    }

    /// Component responsibilities and per-component state posteriors for
    /// every sequence in `dataset`.
    pub fn posteriors(&self, dataset: &SequenceDataset) -> Result<MixtureSufficientStats> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        dataset.check_nodes(self.num_nodes())?;
        let m_count = self.num_components();
        let n = dataset.len();
        let mut node_counts = vec![0; self.num_nodes()];
        let mut eta = Array2::zeros((n, m_count));
        let mut posteriors = Vec::with_capacity(n);
        let mut log_likelihoods = Vec::with_capacity(n);
        let nodes = dataset.items().iter().map(|item| item.node).collect();
        for (i, item) in dataset.items().iter().enumerate() {
            node_counts[item.node] += 1;
            let mut log_w = vec![f64::NEG_INFINITY; m_count];
            let mut row = Vec::with_capacity(m_count);
            for (m, comp) in self.components.iter().enumerate() {
                let a = self.alpha[[item.node, m]];
                if a > 0.0 {
                    let post = comp.posteriors_if_possible(item.seq.view())?;
                    if let Some(p) = &post {
                        log_w[m] = a.ln() + p.log_likelihood;
                    }
                    row.push(post);
                } else {
                    row.push(None);
                }
            }
            let total = normalize_log_weights(&mut log_w).ok_or(Error::ZeroLikelihood { index: i })?;
            eta.row_mut(i).assign(&Array1::from(log_w));
            posteriors.push(row);
            log_likelihoods.push(total);
        }
        Ok(MixtureSufficientStats {
            nodes,
            node_counts,
            eta,
            posteriors,
            log_likelihoods,
        })
    }

    /// Ancestral sample from a node: draw the component from `α_node`, then
    /// sample that component. Returns the sequence and the chosen component.
    pub fn sample_from_node(&self, node: usize, length: usize, seed: u64) -> Result<(Array2<f64>, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_from_node_with(&mut rng, node, length)
    }

    pub fn sample_from_node_with<R: rand::Rng + ?Sized>(
        &self,
        rng: &mut R,
        node: usize,
        length: usize,
    ) -> Result<(Array2<f64>, usize)> {
        self.check_node(node)?;
        let m = sample_categorical(rng, self.alpha.row(node));
        let seq = self.components[m].sample_with(rng, length, None)?;
        Ok((seq, m))
    }
}
