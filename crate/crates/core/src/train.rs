//! EM training for node mixtures, with and without graph regularization.
//!
//! Unregularized training uses closed-form updates for every parameter.
//! Regularized training replaces the coefficient update with Adam ascent on
//! the unconstrained `beta` parameters while keeping the E-step
//! responsibilities fixed; the HMM parameters still use closed forms.
//!
//! Training runs single-threaded so that the reduction order, and therefore
//! every bit of the result, is fixed for a given seed.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::adam::{AdamConfig, AdamState};
use crate::dataset::SequenceDataset;
use crate::error::{Error, Result};
use crate::graph::AffinityGraph;
use crate::hmm::{GaussianHmm, VARIANCE_FLOOR};
use crate::kmeans::{kmeans, DEFAULT_MAX_ITERS};
use crate::mixture::{regularizer_value, reparameterize, MixtureSufficientStats, SparseMixtureModel};

/// Responsibility mass below which an M-step denominator counts as zero.
pub const MIN_RESPONSIBILITY: f64 = 1e-12;

/// Value a degenerate `beta` row is reset to.
pub const DEGENERATE_ROW_RESET: f64 = 0.1;

/// Relative scale of the noise that separates initial component means.
const INIT_MEAN_JITTER: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub plateau_tol: f64,
    pub plateau_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            outer_iters: 100,
            inner_iters: 100,
            learning_rate: 1e-3,
            adam: AdamConfig::default(),
            plateau_tol: 1e-6,
            plateau_patience: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if self.outer_iters == 0 || self.inner_iters == 0 {
            return Err(Error::InvalidParameter("iteration counts must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.plateau_patience == 0 {
            return Err(Error::InvalidParameter("plateau patience must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AlphaInit {
    /// Seeded uniform positive values, normalized per row.
    Random,
    /// Explicit `K × M` coefficients.
    Given(Array2<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitSpec {
    pub num_nodes: usize,
    pub num_components: usize,
    pub num_states: usize,
    pub alpha: AlphaInit,
}

impl InitSpec {
    pub fn new(num_nodes: usize, num_components: usize, num_states: usize) -> Self {
        Self {
            num_nodes,
            num_components,
            num_states,
            alpha: AlphaInit::Random,
        }
    }

    /// One HMM shared by every node.
    pub fn one_hmm(num_nodes: usize, num_states: usize) -> Self {
        Self::new(num_nodes, 1, num_states)
    }

    /// One independent HMM per node: identity coefficients stay one-hot under
    /// the closed-form updates.
    pub fn k_hmm(num_nodes: usize, num_states: usize) -> Self {
        Self {
            num_nodes,
            num_components: num_nodes,
            num_states,
            alpha: AlphaInit::Given(Array2::eye(num_nodes)),
        }
    }
}

/// State count for a single shared HMM with about as many transitions as a
/// mixture of `M` components with `S` states: `⌈S·√M⌉`.
pub fn one_hmm_parity_states(num_components: usize, num_states: usize) -> usize {
    ((num_states as f64 * (num_components as f64).sqrt()).ceil() as usize).max(1)
}

/// Per-node state count for `K` independent HMMs: `⌈S·√(M/K)⌉`.
pub fn k_hmm_parity_states(num_components: usize, num_states: usize, num_nodes: usize) -> usize {
    ((num_states as f64 * (num_components as f64 / num_nodes as f64).sqrt()).ceil() as usize).max(1)
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub model: SparseMixtureModel,
    /// Objective under the parameters the step started from.
    pub objective: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: SparseMixtureModel,
    pub objective_trace: Vec<f64>,
    pub warnings: Vec<String>,
    pub converged: bool,
}

fn warn(warnings: &mut Vec<String>, msg: String) {
    log::warn!("{msg}");
    warnings.push(msg);
}

/// Closed-form updates of initial, transition and emission parameters.
fn update_components(
    model: &SparseMixtureModel,
    stats: &MixtureSufficientStats,
    dataset: &SequenceDataset,
    warnings: &mut Vec<String>,
) -> Vec<GaussianHmm> {
    let s_count = model.num_states();
    let d = model.dim();
    let mut out = Vec::with_capacity(model.num_components());
    for (m, comp) in model.components.iter().enumerate() {
        let weight: f64 = stats.eta.column(m).sum();
        if weight < MIN_RESPONSIBILITY {
            warn(
                warnings,
                format!("component {m} has total responsibility {weight:e}; parameters left unchanged"),
            );
            out.push(comp.clone());
            continue;
        }
        let mut init_num = Array1::<f64>::zeros(s_count);
        let mut trans_num = Array2::<f64>::zeros((s_count, s_count));
        let mut occupancy = Array1::<f64>::zeros(s_count);
        let mut mean_num = Array2::<f64>::zeros((s_count, d));
        for (i, item) in dataset.items().iter().enumerate() {
            let eta = stats.eta[[i, m]];
            let Some(post) = stats.posteriors[i][m].as_ref() else {
                continue;
            };
            if eta == 0.0 {
                continue;
            }
            init_num.scaled_add(eta, &post.gamma.row(0));
            trans_num.scaled_add(eta, &post.xi.sum_axis(Axis(0)));
            let gamma_emit = post.gamma.slice(ndarray::s![1.., ..]);
            occupancy.scaled_add(eta, &gamma_emit.sum_axis(Axis(0)));
            mean_num.scaled_add(eta, &gamma_emit.t().dot(&item.seq));
        }

        let mut next = comp.clone();
        let init_total = init_num.sum();
        if init_total >= MIN_RESPONSIBILITY {
            next.initial = init_num / init_total;
        }
        for s in 0..s_count {
            let row_total = trans_num.row(s).sum();
            if row_total >= MIN_RESPONSIBILITY {
                next.transition
                    .row_mut(s)
                    .assign(&trans_num.row(s).mapv(|v| v / row_total));
            } else {
                warn(
                    warnings,
                    format!("component {m} state {s} has no outgoing transition mass; row left unchanged"),
                );
            }
        }
        let mut var_num = Array2::<f64>::zeros((s_count, d));
        let mut new_means = comp.means.clone();
        for s in 0..s_count {
            if occupancy[s] >= MIN_RESPONSIBILITY {
                new_means.row_mut(s).assign(&mean_num.row(s).mapv(|v| v / occupancy[s]));
            }
        }
        for (i, item) in dataset.items().iter().enumerate() {
            let eta = stats.eta[[i, m]];
            let Some(post) = stats.posteriors[i][m].as_ref() else {
                continue;
            };
            if eta == 0.0 {
                continue;
            }
            for (t, x) in item.seq.outer_iter().enumerate() {
                for s in 0..s_count {
                    let w = eta * post.gamma[[t + 1, s]];
                    if w == 0.0 {
                        continue;
                    }
                    for j in 0..d {
                        let diff = x[j] - new_means[[s, j]];
                        var_num[[s, j]] += w * diff * diff;
                    }
                }
            }
        }
        for s in 0..s_count {
            if occupancy[s] >= MIN_RESPONSIBILITY {
                for j in 0..d {
                    next.variances[[s, j]] = (var_num[[s, j]] / occupancy[s]).max(VARIANCE_FLOOR);
                }
            } else {
                warn(
                    warnings,
                    format!(
                        "component {m} state {s} has occupancy {:e}; emission left unchanged",
                        occupancy[s]
                    ),
                );
            }
        }
        next.means = new_means;
        out.push(next);
    }
    out
}

fn check_dataset(model: &SparseMixtureModel, dataset: &SequenceDataset) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.dim() != Some(model.dim()) {
        return Err(Error::Dimension(format!(
            "dataset dimension {:?} does not match model dimension {}",
            dataset.dim(),
            model.dim()
        )));
    }
    dataset.check_nodes(model.num_nodes())
}

/// One unregularized EM iteration. The returned objective is
/// `Σ_i ln p(X_i | y_i)` under the input model.
pub fn em_step_mhmm(model: &SparseMixtureModel, dataset: &SequenceDataset) -> Result<StepOutcome> {
    check_dataset(model, dataset)?;
    let stats = model.posteriors(dataset)?;
    Ok(m_step_mhmm(model, dataset, &stats))
}

pub(crate) fn m_step_mhmm(
    model: &SparseMixtureModel,
    dataset: &SequenceDataset,
    stats: &MixtureSufficientStats,
) -> StepOutcome {
    let mut warnings = Vec::new();
    let mut alpha = model.alpha.clone();
    let eta_sums = node_eta_sums(stats, model.num_nodes());
    for k in 0..model.num_nodes() {
        let n_k = stats.node_counts[k];
        if n_k == 0 {
            warn(
                &mut warnings,
                format!("node {k} has no sequences; coefficients left unchanged"),
            );
            continue;
        }
        alpha.row_mut(k).assign(&eta_sums.row(k).mapv(|v| v / n_k as f64));
    }
    let components = update_components(model, stats, dataset, &mut warnings);
    StepOutcome {
        model: SparseMixtureModel {
            components,
            alpha,
            beta: None,
        },
        objective: stats.total_log_likelihood(),
        warnings,
    }
}

/// `K × M` sums of responsibilities over each node's sequences.
fn node_eta_sums(stats: &MixtureSufficientStats, num_nodes: usize) -> Array2<f64> {
    let mut sums = Array2::zeros((num_nodes, stats.eta.ncols()));
    for (i, &node) in stats.nodes.iter().enumerate() {
        let mut row = sums.row_mut(node);
        row += &stats.eta.row(i);
    }
    sums
}

fn gradient_from(
    alpha: &Array2<f64>,
    beta: &Array2<f64>,
    eta_sums: &Array2<f64>,
    node_counts: &[usize],
    n: usize,
    graph: &AffinityGraph,
    lambda: f64,
) -> Array2<f64> {
    let (k_count, m_count) = alpha.dim();
    let n = n as f64;
    // agreement[j, k] = α_j · α_k
    let agreement = alpha.dot(&alpha.t());
    let mut delta = Array2::zeros((k_count, m_count));
    for k in 0..k_count {
        for m in 0..m_count {
            let b = beta[[k, m]];
            if b <= 0.0 {
                continue;
            }
            let psi = (eta_sums[[k, m]] - node_counts[k] as f64 * alpha[[k, m]]) / n;
            let mut omega = 0.0;
            if lambda != 0.0 {
                for j in 0..k_count {
                    if j != k {
                        let g = graph.weight(j, k);
                        if g != 0.0 {
                            omega += g * (alpha[[j, m]] - agreement[[j, k]]);
                        }
                    }
                }
                omega *= alpha[[k, m]];
            }
            // relu'(β) / relu(β) = 1 / β for β > 0
            delta[[k, m]] = 2.0 / b * (psi + lambda * omega);
        }
    }
    delta
}

/// Gradient of the frozen-responsibility regularized surrogate with respect
/// to `beta`. Entries with `β ≤ 0` are zero.
pub fn coefficient_gradient(
    model: &SparseMixtureModel,
    stats: &MixtureSufficientStats,
    graph: &AffinityGraph,
    lambda: f64,
) -> Result<Array2<f64>> {
    let beta = model
        .beta
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("coefficient gradient needs beta".into()))?;
    check_graph(model, graph)?;
    let eta_sums = node_eta_sums(stats, model.num_nodes());
    Ok(gradient_from(
        &model.alpha,
        beta,
        &eta_sums,
        &stats.node_counts,
        stats.eta.nrows(),
        graph,
        lambda,
    ))
}

fn check_graph(model: &SparseMixtureModel, graph: &AffinityGraph) -> Result<()> {
    if graph.num_nodes() != model.num_nodes() {
        return Err(Error::Dimension(format!(
            "graph has {} nodes, model has {}",
            graph.num_nodes(),
            model.num_nodes()
        )));
    }
    Ok(())
}

/// Regularized objective: mean log-likelihood plus `λ·R(α)`.
pub fn regularized_objective(mean_log_likelihood: f64, alpha: &Array2<f64>, graph: &AffinityGraph, lambda: f64) -> f64 {
    mean_log_likelihood + lambda * regularizer_value(alpha, graph)
}

/// Runs the inner Adam loop on `beta` with the E-step responsibilities
/// fixed. `alpha` tracks `beta` after every iteration.
pub fn optimize_coefficients(
    model: &SparseMixtureModel,
    stats: &MixtureSufficientStats,
    graph: &AffinityGraph,
    config: &TrainConfig,
    adam: &mut AdamState,
    warnings: &mut Vec<String>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut beta = model
        .beta
        .clone()
        .ok_or_else(|| Error::InvalidParameter("regularized training needs beta".into()))?;
    let mut alpha = model.alpha.clone();
    let eta_sums = node_eta_sums(stats, model.num_nodes());
    let n = stats.eta.nrows();
    for _ in 0..config.inner_iters {
        let delta = gradient_from(&alpha, &beta, &eta_sums, &stats.node_counts, n, graph, config.lambda);
        adam.ascend(&mut beta, &delta, config.learning_rate, &config.adam);
        for k in 0..beta.nrows() {
            match reparameterize(beta.row(k)) {
                Ok(row) => alpha.row_mut(k).assign(&row),
                Err(_) => {
                    warn(
                        warnings,
                        format!("node {k} coefficient row degenerated; reset to uniform"),
                    );
                    beta.row_mut(k).fill(DEGENERATE_ROW_RESET);
                    adam.reset_row(k);
                    alpha.row_mut(k).fill(1.0 / beta.ncols() as f64);
                }
            }
        }
    }
    Ok((alpha, beta))
}

/// One regularized EM iteration. The returned objective is the regularized
/// objective under the input model. `adam` carries optimizer moments across
/// outer iterations.
pub fn em_step_spamhmm(
    model: &SparseMixtureModel,
    dataset: &SequenceDataset,
    graph: &AffinityGraph,
    config: &TrainConfig,
    adam: &mut AdamState,
) -> Result<StepOutcome> {
    config.validate()?;
    check_dataset(model, dataset)?;
    check_graph(model, graph)?;
    let stats = model.posteriors(dataset)?;
    let objective = regularized_objective(
        stats.total_log_likelihood() / dataset.len() as f64,
        &model.alpha,
        graph,
        config.lambda,
    );
    let mut warnings = Vec::new();
    let (alpha, beta) = optimize_coefficients(model, &stats, graph, config, adam, &mut warnings)?;
    let components = update_components(model, &stats, dataset, &mut warnings);
    Ok(StepOutcome {
        model: SparseMixtureModel {
            components,
            alpha,
            beta: Some(beta),
        },
        objective,
        warnings,
    })
}

/// Builds the starting model: coefficients per `init.alpha`, uniform
/// dynamics, k-means state means (jittered per component) and the pooled
/// per-feature variance for every state.
pub fn initialize(
    dataset: &SequenceDataset,
    init: &InitSpec,
    regularized: bool,
    seed: u64,
) -> Result<SparseMixtureModel> {
    let (k_count, m_count, s_count) = (init.num_nodes, init.num_components, init.num_states);
    if k_count == 0 || m_count == 0 || s_count == 0 {
        return Err(Error::InvalidParameter("K, M and S must all be >= 1".into()));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    dataset.check_nodes(k_count)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let alpha = match &init.alpha {
        AlphaInit::Random => {
            let mut a = Array2::from_shape_fn((k_count, m_count), |_| 1.0 - rng.random::<f64>());
            for mut row in a.outer_iter_mut() {
                let total = row.sum();
                row.mapv_inplace(|v| v / total);
            }
            a
        }
        AlphaInit::Given(a) => {
            if a.dim() != (k_count, m_count) {
                return Err(Error::Dimension(format!(
                    "initial alpha is {:?}, expected ({k_count}, {m_count})",
                    a.dim()
                )));
            }
            a.clone()
        }
    };

    let frames = dataset.pooled_frames();
    let n_frames = frames.nrows() as f64;
    let mean = frames.mean_axis(Axis(0)).expect("non-empty frames");
    let ddof = if frames.nrows() > 1 { 1.0 } else { 0.0 };
    let variance = frames
        .var_axis(Axis(0), ddof)
        .mapv(|v| if v.is_finite() { v.max(VARIANCE_FLOOR) } else { 1.0 });
    let std = variance.mapv(f64::sqrt);
    debug_assert!(n_frames > 0.0 && mean.len() == frames.ncols());
    let centroids = kmeans(frames.view(), s_count, DEFAULT_MAX_ITERS, &mut rng);

    let mut components = Vec::with_capacity(m_count);
    for _ in 0..m_count {
        let mut means = centroids.clone();
        for mut row in means.outer_iter_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                *v += INIT_MEAN_JITTER * std[j] * z;
            }
        }
        let vars = Array2::from_shape_fn((s_count, frames.ncols()), |(_, j)| variance[j]);
        components.push(GaussianHmm::with_uniform_dynamics(means, vars)?);
    }

    if regularized {
        let beta = alpha.mapv(f64::sqrt);
        SparseMixtureModel::with_beta(components, beta)
    } else {
        SparseMixtureModel::new(components, alpha)
    }
}

/// Initializes a model and trains it. `graph = None` selects unregularized
/// closed-form training; otherwise the regularized trainer runs with
/// `config.lambda`.
pub fn fit(
    dataset: &SequenceDataset,
    graph: Option<&AffinityGraph>,
    config: &TrainConfig,
    init: &InitSpec,
) -> Result<FitResult> {
    config.validate()?;
    if let Some(g) = graph {
        if g.num_nodes() != init.num_nodes {
            return Err(Error::Dimension(format!(
                "graph has {} nodes, init declares {}",
                g.num_nodes(),
                init.num_nodes
            )));
        }
    }
    let model = initialize(dataset, init, graph.is_some(), config.seed)?;
    fit_from(model, dataset, graph, config)
}

/// Trains from an existing model, stopping after `outer_iters` iterations or
/// once the relative objective improvement stays below `plateau_tol` for
/// `plateau_patience` consecutive iterations.
pub fn fit_from(
    mut model: SparseMixtureModel,
    dataset: &SequenceDataset,
    graph: Option<&AffinityGraph>,
    config: &TrainConfig,
) -> Result<FitResult> {
    config.validate()?;
    check_dataset(&model, dataset)?;
    if graph.is_some() && model.beta.is_none() {
        let beta = model.alpha.mapv(f64::sqrt);
        model = SparseMixtureModel::with_beta(model.components, beta)?;
    }
    let mut adam = AdamState::new(model.alpha.dim());
    let mut trace = Vec::with_capacity(config.outer_iters);
    let mut warnings = Vec::new();
    let mut stalled = 0;
    let mut converged = false;
    for _ in 0..config.outer_iters {
        let step = match graph {
            Some(g) => em_step_spamhmm(&model, dataset, g, config, &mut adam)?,
            None => em_step_mhmm(&model, dataset)?,
        };
        warnings.extend(step.warnings);
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            let rel = (step.objective - prev) / prev.abs().max(f64::MIN_POSITIVE);
            if rel < config.plateau_tol {
                stalled += 1;
            } else {
                stalled = 0;
            }
        }
        trace.push(step.objective);
        model = step.model;
        if stalled >= config.plateau_patience {
            converged = true;
            break;
        }
    }
    Ok(FitResult {
        model,
        objective_trace: trace,
        warnings,
        converged,
    })
}
