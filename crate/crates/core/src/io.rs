//! On-disk formats.
//!
//! * Datasets are JSON Lines: one `{"node": k, "seq": [[...], ...], "label": ...}`
//!   object per line, with one-based node ids and an optional label of
//!   `"normal"` or `"anomalous"`.
//! * Graphs are `{"num_nodes": K, "weights": [[...], ...]}`.
//! * Models are pretty-printed JSON with a fixed key order and every float
//!   written with 17 significant digits, so save → load → save reproduces
//!   the file byte for byte.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::dataset::{Label, SequenceDataset, SequenceItem};
use crate::error::{Error, Result};
use crate::graph::AffinityGraph;
use crate::hmm::GaussianHmm;
use crate::mixture::{reparameterize_rows, SparseMixtureModel};
use crate::standardize::Standardization;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum LabelRepr {
    Normal,
    Anomalous,
}

impl From<LabelRepr> for Label {
    fn from(l: LabelRepr) -> Self {
        match l {
            LabelRepr::Normal => Label::Normal,
            LabelRepr::Anomalous => Label::Anomalous,
        }
    }
}

impl From<Label> for LabelRepr {
    fn from(l: Label) -> Self {
        match l {
            Label::Normal => LabelRepr::Normal,
            Label::Anomalous => LabelRepr::Anomalous,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetLine {
    node: usize,
    seq: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<LabelRepr>,
}

fn parse_err(path: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        message: message.into(),
    }
}

pub(crate) fn rows_to_array(rows: &[Vec<f64>]) -> std::result::Result<Array2<f64>, String> {
    let t = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if t == 0 || d == 0 {
        return Err("matrix must have at least one row and one column".into());
    }
    let mut out = Array2::zeros((t, d));
    for (r, row) in rows.iter().enumerate() {
        if row.len() != d {
            return Err(format!(
                "ragged rows: row {} has {} entries, row 1 has {d}",
                r + 1,
                row.len()
            ));
        }
        for (c, v) in row.iter().enumerate() {
            out[[r, c]] = *v;
        }
    }
    Ok(out)
}

pub(crate) fn array_to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

/// Parses a JSON Lines dataset from a reader. `num_nodes`, when known,
/// bounds the node ids.
pub fn parse_dataset<R: BufRead>(reader: R, source: &str, num_nodes: Option<usize>) -> Result<SequenceDataset> {
    let mut items = Vec::new();
    let mut dim: Option<(usize, usize)> = None;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DatasetLine = serde_json::from_str(&line).map_err(|e| parse_err(source, lineno, e.to_string()))?;
        if rec.node == 0 {
            return Err(parse_err(source, lineno, "node ids are 1-based; got 0"));
        }
        if let Some(k) = num_nodes {
            if rec.node > k {
                return Err(parse_err(
                    source,
                    lineno,
                    format!("node {} is out of range 1..={k}", rec.node),
                ));
            }
        }
        let seq = rows_to_array(&rec.seq).map_err(|m| parse_err(source, lineno, m))?;
        match dim {
            None => dim = Some((seq.ncols(), lineno)),
            Some((d, first)) if d != seq.ncols() => {
                return Err(parse_err(
                    source,
                    lineno,
                    format!("sequence has {} features, line {first} has {d}", seq.ncols()),
                ))
            }
            _ => {}
        }
        items.push(SequenceItem {
            node: rec.node - 1,
            seq,
            label: rec.label.map(Label::from),
        });
    }
    SequenceDataset::new(items)
}

pub fn read_dataset(path: &Path, num_nodes: Option<usize>) -> Result<SequenceDataset> {
    let file = File::open(path)?;
    parse_dataset(BufReader::new(file), &path.display().to_string(), num_nodes)
}

pub fn write_dataset<W: Write>(mut w: W, dataset: &SequenceDataset) -> Result<()> {
    for item in dataset.items() {
        let line = DatasetLine {
            node: item.node + 1,
            seq: array_to_rows(&item.seq),
            label: item.label.map(LabelRepr::from),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset(path: &Path, dataset: &SequenceDataset) -> Result<()> {
    write_dataset(BufWriter::new(File::create(path)?), dataset)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    num_nodes: usize,
    weights: Vec<Vec<f64>>,
}

pub fn parse_graph(text: &str, source: &str) -> Result<AffinityGraph> {
    let file: GraphFile = serde_json::from_str(text).map_err(|e| parse_err(source, e.line(), e.to_string()))?;
    if file.weights.len() != file.num_nodes || file.weights.iter().any(|r| r.len() != file.num_nodes) {
        return Err(Error::InvalidGraph(format!(
            "{source}: weights must be {0}x{0} to match num_nodes",
            file.num_nodes
        )));
    }
    let w = rows_to_array(&file.weights).map_err(|m| Error::InvalidGraph(format!("{source}: {m}")))?;
    AffinityGraph::new(w).map_err(|e| Error::InvalidGraph(format!("{source}: {e}")))
}

pub fn read_graph(path: &Path) -> Result<AffinityGraph> {
    let text = std::fs::read_to_string(path)?;
    parse_graph(&text, &path.display().to_string())
}

pub fn graph_to_json(graph: &AffinityGraph) -> Result<String> {
    let file = GraphFile {
        num_nodes: graph.num_nodes(),
        weights: array_to_rows(graph.weights()),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentFile {
    pub initial: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMetadata {
    pub mode: String,
    pub lambda: f64,
    pub seed: u64,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub learning_rate: f64,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub num_nodes: usize,
    pub num_components: usize,
    pub num_states: usize,
    pub dim: usize,
    pub alpha: Vec<Vec<f64>>,
    pub beta: Option<Vec<Vec<f64>>>,
    pub components: Vec<ComponentFile>,
    pub training: Option<TrainingMetadata>,
    pub standardization: Option<Standardization>,
}

impl ModelFile {
    pub fn from_model(model: &SparseMixtureModel) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            num_nodes: model.num_nodes(),
            num_components: model.num_components(),
            num_states: model.num_states(),
            dim: model.dim(),
            alpha: array_to_rows(model.alpha()),
            beta: model.beta().map(array_to_rows),
            components: model
                .components()
                .iter()
                .map(|c| ComponentFile {
                    initial: c.initial().to_vec(),
                    transition: array_to_rows(c.transition()),
                    means: array_to_rows(c.means()),
                    variances: array_to_rows(c.variances()),
                })
                .collect(),
            training: None,
            standardization: None,
        }
    }

    /// Rebuilds and validates the model.
    pub fn to_model(&self) -> Result<SparseMixtureModel> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported model format version {}",
                self.format_version
            )));
        }
        if self.components.len() != self.num_components {
            return Err(Error::Format(format!(
                "num_components is {} but {} components are listed",
                self.num_components,
                self.components.len()
            )));
        }
        let fmt = |what: &str, m: String| Error::Format(format!("{what}: {m}"));
        let mut components = Vec::with_capacity(self.components.len());
        for (m, c) in self.components.iter().enumerate() {
            let hmm = GaussianHmm::new(
                Array1::from(c.initial.clone()),
                rows_to_array(&c.transition).map_err(|e| fmt(&format!("component {m} transition"), e))?,
                rows_to_array(&c.means).map_err(|e| fmt(&format!("component {m} means"), e))?,
                rows_to_array(&c.variances).map_err(|e| fmt(&format!("component {m} variances"), e))?,
            )?;
            if hmm.num_states() != self.num_states || hmm.dim() != self.dim {
                return Err(Error::Format(format!(
                    "component {m} has S={}, D={}; header declares S={}, D={}",
                    hmm.num_states(),
                    hmm.dim(),
                    self.num_states,
                    self.dim
                )));
            }
            components.push(hmm);
        }
        let alpha = rows_to_array(&self.alpha).map_err(|e| fmt("alpha", e))?;
        if alpha.dim() != (self.num_nodes, self.num_components) {
            return Err(Error::Format(format!(
                "alpha is {:?}, header declares ({}, {})",
                alpha.dim(),
                self.num_nodes,
                self.num_components
            )));
        }
        match &self.beta {
            Some(beta) => {
                let beta = rows_to_array(beta).map_err(|e| fmt("beta", e))?;
                if beta.dim() != alpha.dim() {
                    return Err(Error::Format("beta and alpha shapes differ".into()));
                }
                let derived = reparameterize_rows(&beta)?;
                if derived != alpha {
                    return Err(Error::Format("alpha does not match the reparameterized beta".into()));
                }
                SparseMixtureModel::with_beta(components, beta)
            }
            None => SparseMixtureModel::new(components, alpha),
        }
    }

    pub fn to_canonical_json(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        let mut ser = serde_json::Serializer::with_formatter(&mut out, CanonicalFormatter::new());
        self.serialize(&mut ser)?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_canonical_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| parse_err(&path.display().to_string(), e.line(), e.to_string()))
    }
}

/// Pretty JSON with every float as `d.dddddddddddddddde±x`.
struct CanonicalFormatter<'a> {
    inner: serde_json::ser::PrettyFormatter<'a>,
}

impl CanonicalFormatter<'_> {
    fn new() -> Self {
        Self {
            inner: serde_json::ser::PrettyFormatter::new(),
        }
    }
}

impl serde_json::ser::Formatter for CanonicalFormatter<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }

    fn begin_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.inner.begin_array(writer)
    }

    fn end_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.inner.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> std::io::Result<()> {
        self.inner.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.inner.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.inner.begin_object(writer)
    }

    fn end_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.inner.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> std::io::Result<()> {
        self.inner.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.inner.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.inner.end_object_value(writer)
    }
}
