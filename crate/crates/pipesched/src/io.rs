//! JSON file formats: graphs, schedules and policy checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use pipesched_core::graph::{ComputeDag, OpNode};
use pipesched_core::policy::{PolicyConfig, PolicyParams, Tensor, TENSOR_NAMES};
use pipesched_core::schedule::{Schedule, ScheduleObjective};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const CHECKPOINT_FORMAT: &str = "pipesched-policy";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: field `{field}`: {message}")]
    Invalid {
        path: PathBuf,
        field: String,
        message: String,
    },
}

impl IoError {
    fn invalid(path: &Path, field: impl Into<String>, message: impl ToString) -> Self {
        IoError::Invalid {
            path: path.to_path_buf(),
            field: field.into(),
            message: message.to_string(),
        }
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| IoError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).expect("in-memory JSON serialisation");
    text.push('\n');
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| IoError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    // written beside the target and renamed, so a failed write leaves no partial file
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, text)
        .and_then(|_| fs::rename(&tmp, path))
        .map_err(|source| {
            let _ = fs::remove_file(&tmp);
            IoError::Io {
                path: path.to_path_buf(),
                source,
            }
        })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub op: String,
    pub memory_bytes: u64,
}

/// On-disk graph. Node order defines node indices; every edge must point
/// from a lower index to a higher one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub name: String,
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<[usize; 2]>,
}

impl GraphFile {
    pub fn from_dag(dag: &ComputeDag) -> Self {
        Self {
            name: dag.name().to_string(),
            nodes: dag
                .nodes()
                .iter()
                .map(|n| NodeRecord {
                    op: n.op_name.clone(),
                    memory_bytes: n.memory_bytes,
                })
                .collect(),
            edges: dag.edges().iter().map(|&(p, c)| [p, c]).collect(),
        }
    }

    fn into_dag(self, path: &Path) -> Result<ComputeDag, IoError> {
        let n = self.nodes.len();
        if n == 0 {
            return Err(IoError::invalid(path, "nodes", "graph has no nodes"));
        }
        for (i, &[p, c]) in self.edges.iter().enumerate() {
            let field = format!("edges[{i}]");
            if p >= n || c >= n {
                return Err(IoError::invalid(path, field, format!("[{p}, {c}] references a node outside 0..{n}")));
            }
            if p >= c {
                return Err(IoError::invalid(
                    path,
                    field,
                    format!("[{p}, {c}] is a forward reference; parents must precede children"),
                ));
            }
        }
        let nodes = self
            .nodes
            .into_iter()
            .map(|r| OpNode::new(r.op, r.memory_bytes))
            .collect();
        let edges = self.edges.into_iter().map(|[p, c]| (p, c)).collect();
        ComputeDag::new(self.name, nodes, edges).map_err(|e| IoError::invalid(path, "edges", e))
    }
}

/// Loads a graph, rejecting malformed JSON, unknown fields, out-of-range or
/// backward-pointing edges, duplicates and self-loops.
pub fn load_graph(path: &Path) -> Result<ComputeDag, IoError> {
    read_json::<GraphFile>(path)?.into_dag(path)
}

/// Writes `dag` in the graph format. Nodes must already be numbered
/// topologically for the file to load back.
pub fn save_graph(path: &Path, dag: &ComputeDag) -> Result<(), IoError> {
    write_json(path, &GraphFile::from_dag(dag))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveRecord {
    pub peak_stage_memory: u64,
    pub per_stage_memory: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleFile {
    pub num_stages: usize,
    pub stage_of: Vec<usize>,
    pub objective: ObjectiveRecord,
}

impl ScheduleFile {
    pub fn new(schedule: &Schedule, objective: &ScheduleObjective) -> Self {
        Self {
            num_stages: schedule.num_stages,
            stage_of: schedule.stage_of.clone(),
            objective: ObjectiveRecord {
                peak_stage_memory: objective.peak_stage_memory,
                per_stage_memory: objective.per_stage_memory.clone(),
            },
        }
    }

    pub fn schedule(&self) -> Schedule {
        Schedule::new(self.stage_of.clone(), self.num_stages)
    }
}

pub fn save_schedule(path: &Path, schedule: &Schedule, objective: &ScheduleObjective) -> Result<(), IoError> {
    write_json(path, &ScheduleFile::new(schedule, objective))
}

pub fn load_schedule(path: &Path) -> Result<ScheduleFile, IoError> {
    let file: ScheduleFile = read_json(path)?;
    if let Some((i, &s)) = file.stage_of.iter().enumerate().find(|(_, &s)| s >= file.num_stages) {
        return Err(IoError::invalid(
            path,
            format!("stage_of[{i}]"),
            format!("stage {s} is outside 0..{}", file.num_stages),
        ));
    }
    Ok(file)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigRecord {
    pub hidden_dim: usize,
    pub max_degree: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointFile {
    pub format: String,
    pub version: u32,
    pub config: ConfigRecord,
    pub tensors: Vec<TensorRecord>,
}

impl CheckpointFile {
    pub fn from_params(params: &PolicyParams) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: ConfigRecord {
                hidden_dim: params.config.hidden_dim,
                max_degree: params.config.max_degree,
            },
            tensors: params
                .named()
                .map(|(name, t)| TensorRecord {
                    name: name.to_string(),
                    shape: [t.rows(), t.cols()],
                    data: t.as_slice().to_vec(),
                })
                .collect(),
        }
    }

    fn into_params(self, path: &Path) -> Result<PolicyParams, IoError> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(IoError::invalid(path, "format", format!("expected `{CHECKPOINT_FORMAT}`, got `{}`", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(IoError::invalid(path, "version", format!("unsupported version {}", self.version)));
        }
        let config = PolicyConfig::new(self.config.hidden_dim, self.config.max_degree);
        if config.hidden_dim == 0 {
            return Err(IoError::invalid(path, "config.hidden_dim", "must be positive"));
        }
        let expected = PolicyParams::zeros(config).shapes();
        if self.tensors.len() != TENSOR_NAMES.len() {
            return Err(IoError::invalid(
                path,
                "tensors",
                format!("expected {} tensors, got {}", TENSOR_NAMES.len(), self.tensors.len()),
            ));
        }
        let mut tensors = Vec::with_capacity(self.tensors.len());
        for (i, rec) in self.tensors.into_iter().enumerate() {
            let field = format!("tensors[{i}]");
            if rec.name != TENSOR_NAMES[i] {
                return Err(IoError::invalid(path, field, format!("expected `{}`, got `{}`", TENSOR_NAMES[i], rec.name)));
            }
            let [r, c] = rec.shape;
            if (r, c) != expected[i] {
                return Err(IoError::invalid(
                    path,
                    field,
                    format!("shape mismatch for `{}`: expected {:?}, got {:?}", rec.name, expected[i], (r, c)),
                ));
            }
            let t = Tensor::from_vec(r, c, rec.data)
                .ok_or_else(|| IoError::invalid(path, format!("tensors[{i}].data"), "length does not match shape"))?;
            tensors.push(t);
        }
        let params = PolicyParams::from_tensors(config, tensors).expect("shapes checked above");
        if let Some(name) = params.first_non_finite() {
            return Err(IoError::invalid(path, name, "non-finite value"));
        }
        Ok(params)
    }
}

pub fn save_checkpoint(path: &Path, params: &PolicyParams) -> Result<(), IoError> {
    write_json(path, &CheckpointFile::from_params(params))
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyParams, IoError> {
    read_json::<CheckpointFile>(path)?.into_params(path)
}

/// Writes any serialisable report as pretty JSON.
pub fn save_report<T: Serialize>(path: &Path, report: &T) -> Result<(), IoError> {
    write_json(path, report)
}

/// Graph files in `dir`, sorted by file name.
pub fn list_graph_files(dir: &Path) -> Result<Vec<PathBuf>, IoError> {
    let entries = fs::read_dir(dir).map_err(|source| IoError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| IoError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = entry.path();
        if path.extension().is_some_and(|e| e == "json") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}
