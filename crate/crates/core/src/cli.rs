//! Command-line front end. Every flag can also be set through an environment
//! variable named `GRAPHMIX_<FLAG>` (upper case, dashes as underscores).
//!
//! Node and component ids are one-based in every file and flag.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dataset::{Label, SequenceDataset, SequenceItem};
use crate::error::{Error, Result};
use crate::eval::{
    cluster_assignments, relative_sparsity, relative_sparsity_below, roc_auc, score_dataset, SPARSITY_THRESHOLD,
};
use crate::forecast::forecast_mean;
use crate::io::{read_dataset, read_graph, save_dataset, ModelFile, TrainingMetadata};
use crate::standardize::Standardization;
use crate::train::{fit, k_hmm_parity_states, one_hmm_parity_states, InitSpec, TrainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "graphmix",
    version,
    about = "Sparse graph-regularized mixtures of Gaussian HMMs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a mixture model and write a model file plus a training log.
    Train(TrainArgs),
    /// Score sequences by average log-likelihood per frame.
    Score(ScoreArgs),
    /// Forecast continuations of prefix sequences.
    Forecast(ForecastArgs),
    /// Assign every node to its dominant component.
    Cluster(ClusterArgs),
    /// Sample a dataset from a model file.
    Generate(GenerateArgs),
    /// Standardize a dataset feature-wise.
    Standardize(StandardizeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    /// A single HMM shared by every node, with ⌈S·√M⌉ states.
    OneHmm,
    /// One independent HMM per node, with ⌈S·√(M/K)⌉ states each.
    KHmm,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Training dataset (JSON Lines).
    #[arg(long, env = "GRAPHMIX_DATA")]
    pub data: PathBuf,
    /// Affinity graph (JSON). Enables regularized training; without it the
    /// closed-form unregularized updates are used.
    #[arg(long, env = "GRAPHMIX_GRAPH")]
    pub graph: Option<PathBuf>,
    /// Rescale graph weights so the largest equals 1.
    #[arg(long, env = "GRAPHMIX_NORMALIZE_GRAPH")]
    pub normalize_graph: bool,
    /// Number of nodes; defaults to the graph size or the largest node id.
    #[arg(long, env = "GRAPHMIX_NODES")]
    pub nodes: Option<usize>,
    /// Dictionary size M.
    #[arg(long, env = "GRAPHMIX_COMPONENTS")]
    pub components: usize,
    /// Hidden states per component S.
    #[arg(long, env = "GRAPHMIX_STATES")]
    pub states: usize,
    /// Train a baseline sized for parity with an M-component, S-state mixture.
    #[arg(long, value_enum, env = "GRAPHMIX_BASELINE")]
    pub baseline: Option<Baseline>,
    /// Regularization weight.
    #[arg(long, default_value_t = 0.1, env = "GRAPHMIX_LAMBDA")]
    pub lambda: f64,
    /// Maximum EM iterations.
    #[arg(long, default_value_t = 100, env = "GRAPHMIX_OUTER_ITERS")]
    pub outer_iters: usize,
    /// Adam iterations per M-step (regularized training only).
    #[arg(long, default_value_t = 100, env = "GRAPHMIX_INNER_ITERS")]
    pub inner_iters: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 1e-3, env = "GRAPHMIX_LR")]
    pub lr: f64,
    /// Relative objective improvement counted as a stall.
    #[arg(long, default_value_t = 1e-6, env = "GRAPHMIX_PLATEAU_TOL")]
    pub plateau_tol: f64,
    /// Consecutive stalls before stopping.
    #[arg(long, default_value_t = 5, env = "GRAPHMIX_PLATEAU_PATIENCE")]
    pub plateau_patience: usize,
    #[arg(long, default_value_t = 0, env = "GRAPHMIX_SEED")]
    pub seed: u64,
    /// Standardize features (pooled statistics) before training; the
    /// statistics are stored in the model and reapplied when scoring.
    #[arg(long, env = "GRAPHMIX_STANDARDIZE")]
    pub standardize: bool,
    /// Output model file.
    #[arg(long, env = "GRAPHMIX_OUT")]
    pub out: PathBuf,
    /// Training log CSV; defaults to `<out>.log.csv`.
    #[arg(long, env = "GRAPHMIX_LOG_OUT")]
    pub log_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    #[arg(long, env = "GRAPHMIX_MODEL")]
    pub model: PathBuf,
    #[arg(long, env = "GRAPHMIX_DATA")]
    pub data: PathBuf,
    /// Per-sequence scores CSV.
    #[arg(long, env = "GRAPHMIX_SCORES_OUT")]
    pub scores_out: Option<PathBuf>,
    /// ROC curve CSV (labeled data only).
    #[arg(long, env = "GRAPHMIX_ROC_OUT")]
    pub roc_out: Option<PathBuf>,
    /// Summary JSON; printed to stdout when absent.
    #[arg(long, env = "GRAPHMIX_JSON_OUT")]
    pub json_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ForecastArgs {
    #[arg(long, env = "GRAPHMIX_MODEL")]
    pub model: PathBuf,
    /// Prefix sequences (JSON Lines dataset).
    #[arg(long, env = "GRAPHMIX_PREFIX_FILE")]
    pub prefix_file: PathBuf,
    /// Node to condition on, overriding the node of every prefix.
    #[arg(long, env = "GRAPHMIX_NODE")]
    pub node: Option<usize>,
    /// Steps to forecast.
    #[arg(long, default_value_t = 10, env = "GRAPHMIX_HORIZON")]
    pub horizon: usize,
    /// Sampled continuations averaged per forecast.
    #[arg(long, default_value_t = 100, env = "GRAPHMIX_SAMPLES")]
    pub samples: usize,
    #[arg(long, default_value_t = 0, env = "GRAPHMIX_SEED")]
    pub seed: u64,
    /// Forecast CSV.
    #[arg(long, env = "GRAPHMIX_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ClusterArgs {
    #[arg(long, env = "GRAPHMIX_MODEL")]
    pub model: PathBuf,
    /// Assignment JSON; printed to stdout when absent.
    #[arg(long, env = "GRAPHMIX_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LabelArg {
    Normal,
    Anomalous,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    /// Ground-truth model file to sample from.
    #[arg(long, env = "GRAPHMIX_SPEC")]
    pub spec: PathBuf,
    /// Sequences per node.
    #[arg(long, env = "GRAPHMIX_NUM_SEQS")]
    pub num_seqs: usize,
    /// Frames per sequence.
    #[arg(long, env = "GRAPHMIX_LENGTH")]
    pub length: usize,
    #[arg(long, default_value_t = 0, env = "GRAPHMIX_SEED")]
    pub seed: u64,
    /// Label attached to every generated sequence.
    #[arg(long, value_enum, env = "GRAPHMIX_LABEL")]
    pub label: Option<LabelArg>,
    /// CSV recording the component behind every sequence.
    #[arg(long, env = "GRAPHMIX_TRACE_OUT")]
    pub trace_out: Option<PathBuf>,
    #[arg(long, env = "GRAPHMIX_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct StandardizeArgs {
    #[arg(long, env = "GRAPHMIX_DATA")]
    pub data: PathBuf,
    #[arg(long, env = "GRAPHMIX_OUT")]
    pub out: PathBuf,
    /// Where to write the computed statistics.
    #[arg(long, env = "GRAPHMIX_STATS_OUT")]
    pub stats_out: Option<PathBuf>,
    /// Apply previously saved statistics instead of computing new ones.
    #[arg(long, env = "GRAPHMIX_STATS_IN", conflicts_with = "per_node")]
    pub stats_in: Option<PathBuf>,
    /// Compute statistics separately for each node.
    #[arg(long, env = "GRAPHMIX_PER_NODE")]
    pub per_node: bool,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Score(a) => cmd_score(&a).map(|_| ()),
        Command::Forecast(a) => cmd_forecast(&a).map(|_| ()),
        Command::Cluster(a) => cmd_cluster(&a).map(|_| ()),
        Command::Generate(a) => cmd_generate(&a).map(|_| ()),
        Command::Standardize(a) => cmd_standardize(&a).map(|_| ()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn log_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".log.csv");
    out.with_file_name(name)
}

fn load_model(path: &Path) -> Result<(ModelFile, crate::mixture::SparseMixtureModel)> {
    let file = ModelFile::load(path)?;
    let model = file
        .to_model()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok((file, model))
}

fn prepare(data: &SequenceDataset, st: Option<&Standardization>) -> Result<SequenceDataset> {
    match st {
        Some(st) => st.apply(data),
        None => Ok(data.clone()),
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<ModelFile> {
    let raw_graph = args.graph.as_deref().map(read_graph).transpose()?;
    let graph = raw_graph.map(|g| {
        if args.normalize_graph {
            g.normalized_to_unit_max()
        } else {
            g
        }
    });
    let num_nodes = match (args.nodes, &graph) {
        (Some(k), Some(g)) if k != g.num_nodes() => {
            return Err(Error::InvalidParameter(format!(
                "--nodes {k} disagrees with the graph's {} nodes",
                g.num_nodes()
            )))
        }
        (Some(k), _) => Some(k),
        (None, Some(g)) => Some(g.num_nodes()),
        (None, None) => None,
    };
    let data = read_dataset(&args.data, num_nodes)?;
    let num_nodes = num_nodes.unwrap_or_else(|| data.min_num_nodes());

    let standardization = if args.standardize {
        Some(Standardization::fit(&data, false)?)
    } else {
        None
    };
    let data = prepare(&data, standardization.as_ref())?;

    let (init, graph, mode) = match args.baseline {
        None => (
            InitSpec::new(num_nodes, args.components, args.states),
            graph,
            if args.graph.is_some() { "spamhmm" } else { "mhmm" },
        ),
        Some(Baseline::OneHmm) => (
            InitSpec::one_hmm(num_nodes, one_hmm_parity_states(args.components, args.states)),
            None,
            "one-hmm",
        ),
        Some(Baseline::KHmm) => (
            InitSpec::k_hmm(num_nodes, k_hmm_parity_states(args.components, args.states, num_nodes)),
            None,
            "k-hmm",
        ),
    };
    let config = TrainConfig {
        lambda: args.lambda,
        outer_iters: args.outer_iters,
        inner_iters: args.inner_iters,
        learning_rate: args.lr,
        plateau_tol: args.plateau_tol,
        plateau_patience: args.plateau_patience,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let result = fit(&data, graph.as_ref(), &config, &init)?;

    let mut file = ModelFile::from_model(&result.model);
    file.training = Some(TrainingMetadata {
        mode: mode.to_string(),
        lambda: if graph.is_some() { config.lambda } else { 0.0 },
        seed: config.seed,
        outer_iters: config.outer_iters,
        inner_iters: config.inner_iters,
        learning_rate: config.learning_rate,
        converged: result.converged,
        objective_trace: result.objective_trace.clone(),
    });
    file.standardization = standardization;
    file.save(&args.out)?;

    let log = args.log_out.clone().unwrap_or_else(|| log_path(&args.out));
    let mut w = create(&log)?;
    writeln!(w, "iteration,objective")?;
    for (i, v) in result.objective_trace.iter().enumerate() {
        writeln!(w, "{},{v:.17e}", i + 1)?;
    }
    w.flush()?;
    Ok(file)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreSummary {
    pub num_sequences: usize,
    pub mean_avg_log_likelihood: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_normal: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_anomalous: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    pub relative_sparsity: f64,
    pub relative_sparsity_thresholded: f64,
}

fn mean_of(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn cmd_score(args: &ScoreArgs) -> Result<ScoreSummary> {
    let (file, model) = load_model(&args.model)?;
    let data = read_dataset(&args.data, Some(model.num_nodes()))?;
    let data = prepare(&data, file.standardization.as_ref())?;
    let scores = score_dataset(&model, &data)?;

    if let Some(path) = &args.scores_out {
        let mut w = create(path)?;
        writeln!(w, "index,node,length,avg_log_likelihood,label")?;
        for (i, s) in scores.iter().enumerate() {
            let label = match s.label {
                Some(Label::Normal) => "normal",
                Some(Label::Anomalous) => "anomalous",
                None => "",
            };
            writeln!(
                w,
                "{},{},{},{:.17e},{label}",
                i + 1,
                s.node + 1,
                s.length,
                s.avg_log_likelihood
            )?;
        }
        w.flush()?;
    }

    let labeled: Vec<(f64, Label)> = scores
        .iter()
        .filter_map(|s| s.label.map(|l| (s.avg_log_likelihood, l)))
        .collect();
    let has_both =
        labeled.iter().any(|(_, l)| *l == Label::Normal) && labeled.iter().any(|(_, l)| *l == Label::Anomalous);
    let roc = if has_both { Some(roc_auc(&labeled)?) } else { None };
    if let (Some(path), Some(roc)) = (&args.roc_out, &roc) {
        let mut w = create(path)?;
        writeln!(w, "fpr,tpr")?;
        for (fpr, tpr) in &roc.points {
            writeln!(w, "{fpr},{tpr}")?;
        }
        w.flush()?;
    }

    let summary = ScoreSummary {
        num_sequences: scores.len(),
        mean_avg_log_likelihood: mean_of(scores.iter().map(|s| s.avg_log_likelihood)).unwrap_or(f64::NAN),
        mean_normal: mean_of(labeled.iter().filter(|(_, l)| *l == Label::Normal).map(|(s, _)| *s)),
        mean_anomalous: mean_of(labeled.iter().filter(|(_, l)| *l == Label::Anomalous).map(|(s, _)| *s)),
        auc: roc.map(|r| r.auc),
        relative_sparsity: relative_sparsity(&model),
        relative_sparsity_thresholded: relative_sparsity_below(&model, SPARSITY_THRESHOLD),
    };
    write_json(&summary, args.json_out.as_deref())?;
    Ok(summary)
}

/// One-based `(prefix index, node, step, values)` rows.
pub type ForecastRow = (usize, usize, usize, Vec<f64>);

pub fn cmd_forecast(args: &ForecastArgs) -> Result<Vec<ForecastRow>> {
    let (file, model) = load_model(&args.model)?;
    if let Some(node) = args.node {
        if node == 0 || node > model.num_nodes() {
            return Err(Error::InvalidParameter(format!(
                "--node {node} is out of range 1..={}",
                model.num_nodes()
            )));
        }
    }
    let prefixes = read_dataset(&args.prefix_file, Some(model.num_nodes()))?;
    let st = file.standardization.as_ref();
    let mut rows = Vec::new();
    for (i, item) in prefixes.items().iter().enumerate() {
        let node = args.node.map_or(item.node, |n| n - 1);
        let prefix = match st {
            Some(st) => st.apply_seq(item.seq.view(), node)?,
            None => item.seq.clone(),
        };
        let seed = args.seed.wrapping_add(i as u64);
        let mean = forecast_mean(&model, prefix.view(), node, args.horizon, args.samples, seed)?;
        let mean = match st {
            Some(st) => st.invert_seq(mean.view(), node)?,
            None => mean,
        };
        for (t, row) in mean.outer_iter().enumerate() {
            rows.push((i + 1, node + 1, t + 1, row.to_vec()));
        }
    }
    let mut w = create(&args.out)?;
    let header: Vec<String> = (1..=model.dim()).map(|j| format!("x{j}")).collect();
    writeln!(w, "prefix,node,step,{}", header.join(","))?;
    for (p, n, t, vals) in &rows {
        let vals: Vec<String> = vals.iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(w, "{p},{n},{t},{}", vals.join(","))?;
    }
    w.flush()?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterReport {
    /// One-based component per node.
    pub assignments: Vec<usize>,
    /// One-based components unused by every node.
    pub dead_components: Vec<usize>,
}

pub fn cmd_cluster(args: &ClusterArgs) -> Result<ClusterReport> {
    let (_, model) = load_model(&args.model)?;
    let report = ClusterReport {
        assignments: cluster_assignments(&model).into_iter().map(|m| m + 1).collect(),
        dead_components: model.dead_components().into_iter().map(|m| m + 1).collect(),
    };
    write_json(&report, args.out.as_deref())?;
    Ok(report)
}

/// Samples `num_seqs` sequences per node, in node order. Returns the
/// dataset and the zero-based component behind every sequence.
pub fn generate_dataset(
    model: &crate::mixture::SparseMixtureModel,
    num_seqs: usize,
    length: usize,
    seed: u64,
    label: Option<Label>,
) -> Result<(SequenceDataset, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(num_seqs * model.num_nodes());
    let mut trace = Vec::with_capacity(items.capacity());
    for node in 0..model.num_nodes() {
        for _ in 0..num_seqs {
            let (seq, m) = model.sample_from_node_with(&mut rng, node, length)?;
            items.push(SequenceItem { node, seq, label });
            trace.push(m);
        }
    }
    Ok((SequenceDataset::new(items)?, trace))
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<SequenceDataset> {
    let (_, model) = load_model(&args.spec)?;
    let label = args.label.map(|l| match l {
        LabelArg::Normal => Label::Normal,
        LabelArg::Anomalous => Label::Anomalous,
    });
    let (data, trace) = generate_dataset(&model, args.num_seqs, args.length, args.seed, label)?;
    save_dataset(&args.out, &data)?;
    if let Some(path) = &args.trace_out {
        let mut w = create(path)?;
        writeln!(w, "index,node,component")?;
        for (i, (item, m)) in data.items().iter().zip(&trace).enumerate() {
            writeln!(w, "{},{},{}", i + 1, item.node + 1, m + 1)?;
        }
        w.flush()?;
    }
    Ok(data)
}

pub fn cmd_standardize(args: &StandardizeArgs) -> Result<SequenceDataset> {
    let data = read_dataset(&args.data, None)?;
    let st = match &args.stats_in {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str::<Standardization>(&text)?
        }
        None => Standardization::fit(&data, args.per_node)?,
    };
    let out = st.apply(&data)?;
    save_dataset(&args.out, &out)?;
    if let Some(path) = &args.stats_out {
        write_json(&st, Some(path))?;
    }
    Ok(out)
}
