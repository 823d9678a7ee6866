//! Line-delimited and single-object JSON formats for every artifact.
//!
//! Each format has a `parse_*` function over any reader, a `write_*`
//! function over any writer, and path-based `load_*` / `save_*` wrappers
//! that attach the file name to errors.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use skillgraph_core::graph::{Edge, PositionStat};
use skillgraph_core::rerank::model::{Layer, LAYER_DIMS};
use skillgraph_core::rerank::PairwiseModel;
use skillgraph_core::trajectory::Assembled;
use skillgraph_core::{EmbeddingStore, EncoderTag, Error as CoreError, SkillGraph, ToolId, TrajectoryDataset};

use crate::error::{Error, Result};

pub const GRAPH_FORMAT_VERSION: u32 = 1;
pub const MODEL_FORMAT_VERSION: u32 = 1;

type CoreResult<T> = std::result::Result<T, CoreError>;

fn parse_error(line: usize, message: impl ToString) -> CoreError {
    CoreError::Parse {
        line,
        message: message.to_string(),
    }
}

/// Decodes one record per non-blank line, keeping 1-based line numbers.
fn parse_jsonl<T: DeserializeOwned>(reader: impl BufRead) -> CoreResult<Vec<(usize, T)>> {
    let mut records = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let number = index + 1;
        let line = line.map_err(|e| parse_error(number, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| parse_error(number, e))?;
        records.push((number, record));
    }
    Ok(records)
}

fn write_jsonl<T: Serialize>(mut writer: impl Write, records: impl IntoIterator<Item = T>) -> io::Result<()> {
    for record in records {
        serde_json::to_writer(&mut writer, &record)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

fn write_json<T: Serialize>(mut writer: impl Write, value: &T) -> io::Result<()> {
    serde_json::to_writer_pretty(&mut writer, value)?;
    writer.write_all(b"\n")?;
    writer.flush()
}

fn parse_json<T: DeserializeOwned>(reader: impl BufRead) -> CoreResult<T> {
    serde_json::from_reader(reader).map_err(|e| CoreError::Format(e.to_string()))
}

fn tool_id(line: usize, raw: String) -> CoreResult<ToolId> {
    ToolId::new(raw).map_err(|e| parse_error(line, e))
}

/// Opens `path` and runs `parse` on it, attaching the path to any error.
pub fn load<T>(path: &Path, parse: impl FnOnce(BufReader<File>) -> CoreResult<T>) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse(BufReader::new(file)).map_err(|e| Error::content(path, e))
}

/// Creates `path` and runs `write` on it.
pub fn save(path: &Path, write: impl FnOnce(BufWriter<File>) -> io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write(BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

// Trajectories

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryRecord {
    query: String,
    tools: Vec<String>,
}

/// Reads `{query, tools}` lines. Records with an empty tool list are
/// skipped and counted in [`Assembled::skipped_empty`].
pub fn parse_trajectories(reader: impl BufRead) -> CoreResult<Assembled> {
    let mut records = Vec::new();
    for (line, record) in parse_jsonl::<TrajectoryRecord>(reader)? {
        let tools = record
            .tools
            .into_iter()
            .map(|t| tool_id(line, t))
            .collect::<CoreResult<Vec<_>>>()?;
        records.push((record.query, tools));
    }
    TrajectoryDataset::from_records(records)
}

pub fn write_trajectories(writer: impl Write, dataset: &TrajectoryDataset) -> io::Result<()> {
    write_jsonl(
        writer,
        dataset.iter().map(|t| TrajectoryRecord {
            query: t.query().to_owned(),
            tools: t.tools().iter().map(|id| id.as_str().to_owned()).collect(),
        }),
    )
}

pub fn load_trajectories(path: &Path) -> Result<Assembled> {
    load(path, parse_trajectories)
}

pub fn save_trajectories(path: &Path, dataset: &TrajectoryDataset) -> Result<()> {
    save(path, |w| write_trajectories(w, dataset))
}

// Graph

#[derive(Debug, Serialize, Deserialize)]
struct GraphFile {
    format_version: u32,
    nodes: Vec<String>,
    edges: Vec<EdgeRecord>,
    positions: Vec<PositionRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EdgeRecord {
    src: String,
    dst: String,
    count: u64,
    weight: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct PositionRecord {
    tool: String,
    mean: f64,
    count: u64,
}

fn format_id(raw: String) -> CoreResult<ToolId> {
    ToolId::new(raw).map_err(|e| CoreError::Format(e.to_string()))
}

pub fn parse_graph(reader: impl BufRead) -> CoreResult<SkillGraph> {
    let file: GraphFile = parse_json(reader)?;
    if file.format_version != GRAPH_FORMAT_VERSION {
        return Err(CoreError::Format(format!(
            "unsupported graph format version {}",
            file.format_version
        )));
    }
    let nodes = file.nodes.into_iter().map(format_id).collect::<CoreResult<Vec<_>>>()?;
    let edges = file
        .edges
        .into_iter()
        .map(|e| {
            let edge = Edge {
                count: e.count,
                weight: e.weight,
            };
            Ok((format_id(e.src)?, format_id(e.dst)?, edge))
        })
        .collect::<CoreResult<Vec<_>>>()?;
    let positions = file
        .positions
        .into_iter()
        .map(|p| {
            let stat = PositionStat {
                mean: p.mean,
                count: p.count,
            };
            Ok((format_id(p.tool)?, stat))
        })
        .collect::<CoreResult<Vec<_>>>()?;
    SkillGraph::from_parts(nodes, edges, positions)
}

pub fn write_graph(writer: impl Write, graph: &SkillGraph) -> io::Result<()> {
    let file = GraphFile {
        format_version: GRAPH_FORMAT_VERSION,
        nodes: graph.nodes().iter().map(|n| n.as_str().to_owned()).collect(),
        edges: graph
            .edges()
            .map(|(src, dst, e)| EdgeRecord {
                src: src.as_str().to_owned(),
                dst: dst.as_str().to_owned(),
                count: e.count,
                weight: e.weight,
            })
            .collect(),
        positions: graph
            .positions()
            .map(|(tool, p)| PositionRecord {
                tool: tool.as_str().to_owned(),
                mean: p.mean,
                count: p.count,
            })
            .collect(),
    };
    write_json(writer, &file)
}

pub fn load_graph(path: &Path) -> Result<SkillGraph> {
    load(path, parse_graph)
}

pub fn save_graph(path: &Path, graph: &SkillGraph) -> Result<()> {
    save(path, |w| write_graph(w, graph))
}

// Labels

#[derive(Debug, Serialize, Deserialize)]
struct LabelRecord {
    tool: String,
    category: String,
}

/// Reads `{tool, category}` lines. Repeating a tool with the same category
/// is allowed; a conflicting category is a parse error.
pub fn parse_labels(reader: impl BufRead) -> CoreResult<BTreeMap<ToolId, String>> {
    let mut labels = BTreeMap::new();
    for (line, record) in parse_jsonl::<LabelRecord>(reader)? {
        let tool = tool_id(line, record.tool)?;
        if let Some(previous) = labels.insert(tool.clone(), record.category.clone()) {
            if previous != record.category {
                return Err(parse_error(
                    line,
                    format!("`{tool}` labelled both `{previous}` and `{}`", record.category),
                ));
            }
        }
    }
    Ok(labels)
}

pub fn write_labels(writer: impl Write, labels: &BTreeMap<ToolId, String>) -> io::Result<()> {
    write_jsonl(
        writer,
        labels.iter().map(|(tool, category)| LabelRecord {
            tool: tool.as_str().to_owned(),
            category: category.clone(),
        }),
    )
}

pub fn load_labels(path: &Path) -> Result<BTreeMap<ToolId, String>> {
    load(path, parse_labels)
}

pub fn save_labels(path: &Path, labels: &BTreeMap<ToolId, String>) -> Result<()> {
    save(path, |w| write_labels(w, labels))
}

// Embeddings

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingRecord {
    id: String,
    vector: Vec<f32>,
}

/// Reads `{id, vector}` lines into a store of unit vectors. With
/// `expected_dimension` set, any other dimension is a format error.
pub fn parse_embeddings(reader: impl BufRead, expected_dimension: Option<usize>) -> CoreResult<EmbeddingStore> {
    let mut rows = Vec::new();
    for (line, record) in parse_jsonl::<EmbeddingRecord>(reader)? {
        if let Some(expected) = expected_dimension {
            if record.vector.len() != expected {
                return Err(CoreError::Format(format!(
                    "line {line}: dimension {}, expected {expected}",
                    record.vector.len()
                )));
            }
        }
        rows.push((tool_id(line, record.id)?, record.vector));
    }
    EmbeddingStore::from_rows(rows, EncoderTag::External)
}

pub fn write_embeddings(writer: impl Write, store: &EmbeddingStore) -> io::Result<()> {
    write_jsonl(
        writer,
        store.iter().map(|(id, vector)| EmbeddingRecord {
            id: id.as_str().to_owned(),
            vector: vector.to_vec(),
        }),
    )
}

pub fn load_embeddings(path: &Path, expected_dimension: Option<usize>) -> Result<EmbeddingStore> {
    load(path, |r| parse_embeddings(r, expected_dimension))
}

pub fn save_embeddings(path: &Path, store: &EmbeddingStore) -> Result<()> {
    save(path, |w| write_embeddings(w, store))
}

// Descriptions

#[derive(Debug, Serialize, Deserialize)]
struct DescriptionRecord {
    id: String,
    text: String,
}

pub fn parse_descriptions(reader: impl BufRead) -> CoreResult<BTreeMap<ToolId, String>> {
    let mut descriptions = BTreeMap::new();
    for (line, record) in parse_jsonl::<DescriptionRecord>(reader)? {
        let id = tool_id(line, record.id)?;
        if descriptions.insert(id.clone(), record.text).is_some() {
            return Err(parse_error(line, format!("duplicate id `{id}`")));
        }
    }
    if descriptions.is_empty() {
        return Err(CoreError::EmptyLibrary);
    }
    Ok(descriptions)
}

pub fn write_descriptions(writer: impl Write, descriptions: &BTreeMap<ToolId, String>) -> io::Result<()> {
    write_jsonl(
        writer,
        descriptions.iter().map(|(id, text)| DescriptionRecord {
            id: id.as_str().to_owned(),
            text: text.clone(),
        }),
    )
}

pub fn load_descriptions(path: &Path) -> Result<BTreeMap<ToolId, String>> {
    load(path, parse_descriptions)
}

pub fn save_descriptions(path: &Path, descriptions: &BTreeMap<ToolId, String>) -> Result<()> {
    save(path, |w| write_descriptions(w, descriptions))
}

// Model

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    dims: Vec<usize>,
    layers: Vec<LayerRecord>,
    seed: u64,
}

/// Weights as `outputs` rows of `inputs` values.
#[derive(Debug, Serialize, Deserialize)]
struct LayerRecord {
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
}

pub fn parse_model(reader: impl BufRead) -> CoreResult<PairwiseModel> {
    let file: ModelFile = parse_json(reader)?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(CoreError::Format(format!(
            "unsupported model format version {}",
            file.format_version
        )));
    }
    if file.dims != LAYER_DIMS {
        return Err(CoreError::Format(format!(
            "dims must be {LAYER_DIMS:?}, found {:?}",
            file.dims
        )));
    }
    if file.layers.len() != LAYER_DIMS.len() - 1 {
        return Err(CoreError::Format(format!(
            "expected {} layers, found {}",
            LAYER_DIMS.len() - 1,
            file.layers.len()
        )));
    }
    let layers = file
        .layers
        .into_iter()
        .enumerate()
        .map(|(i, record)| {
            let inputs = LAYER_DIMS[i];
            if let Some(row) = record.weights.iter().position(|r| r.len() != inputs) {
                return Err(CoreError::Format(format!(
                    "layer {i} row {row} has {} weights, expected {inputs}",
                    record.weights[row].len()
                )));
            }
            Ok(Layer {
                inputs,
                outputs: record.weights.len(),
                weights: record.weights.concat(),
                biases: record.biases,
            })
        })
        .collect::<CoreResult<Vec<_>>>()?;
    PairwiseModel::from_layers(layers, file.seed)
}

pub fn write_model(writer: impl Write, model: &PairwiseModel) -> io::Result<()> {
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        dims: LAYER_DIMS.to_vec(),
        layers: model
            .layers()
            .iter()
            .map(|layer| LayerRecord {
                weights: layer.weights.chunks(layer.inputs).map(<[f64]>::to_vec).collect(),
                biases: layer.biases.clone(),
            })
            .collect(),
        seed: model.seed(),
    };
    write_json(writer, &file)
}

pub fn load_model(path: &Path) -> Result<PairwiseModel> {
    load(path, parse_model)
}

pub fn save_model(path: &Path, model: &PairwiseModel) -> Result<()> {
    save(path, |w| write_model(w, model))
}

/// Writes any serializable value as a pretty-printed JSON document.
pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    save(path, |w| write_json(w, value))
}

pub fn save_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    save(path, |w| write_jsonl(w, records))
}

pub fn load_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    load(path, |r| Ok(parse_jsonl(r)?.into_iter().map(|(_, record)| record).collect()))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    load(path, parse_json)
}
