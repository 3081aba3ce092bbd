use std::fs;
use std::path::{Path, PathBuf};

use pipesched::io::{
    list_graph_files, load_checkpoint, load_graph, load_schedule, save_checkpoint, save_graph, save_schedule, CheckpointFile,
    IoError,
};
use pipesched_core::graph::{ComputeDag, OpNode};
use pipesched_core::policy::{PolicyConfig, PolicyParams};
use pipesched_core::sampler::{sample_dag, SamplerConfig};
use pipesched_core::schedule::Schedule;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn invalid_field(err: IoError) -> String {
    match err {
        IoError::Invalid { field, .. } => field,
        other => panic!("expected a validation error, got {other}"),
    }
}

#[test]
fn graph_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let g = sample_dag(&SamplerConfig::new(25, 4, 9)).unwrap();
    let path = dir.path().join("nested/g.json");
    save_graph(&path, &g).unwrap();
    assert_eq!(load_graph(&path).unwrap(), g);
    assert!(!dir.path().join("nested/g.json.partial").exists());
}

#[test]
fn exporter_format_loads() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(
        dir.path(),
        "chain.json",
        r#"{"name": "chain", "nodes": [
            {"op": "input", "memory_bytes": 1},
            {"op": "conv1", "memory_bytes": 2},
            {"op": "conv2", "memory_bytes": 3},
            {"op": "fc", "memory_bytes": 4}],
          "edges": [[0, 1], [1, 2], [2, 3]]}"#,
    );
    let g = load_graph(&path).unwrap();
    let expected = ComputeDag::new(
        "chain",
        vec![
            OpNode::new("input", 1),
            OpNode::new("conv1", 2),
            OpNode::new("conv2", 3),
            OpNode::new("fc", 4),
        ],
        vec![(0, 1), (1, 2), (2, 3)],
    )
    .unwrap();
    assert_eq!(g, expected);
}

#[test]
fn malformed_json_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "bad.json", "{\"name\": \"x\",\n \"nodes\": [}");
    match load_graph(&path).unwrap_err() {
        IoError::Parse { line, .. } => assert_eq!(line, 2),
        other => panic!("expected a parse error, got {other}"),
    }
}

#[test]
fn unknown_fields_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(
        dir.path(),
        "extra.json",
        r#"{"name": "x", "nodes": [{"op": "a", "memory_bytes": 1, "flops": 3}], "edges": []}"#,
    );
    assert!(matches!(load_graph(&path).unwrap_err(), IoError::Parse { .. }));
}

#[test]
fn invalid_graphs_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let node = r#"{"op": "a", "memory_bytes": 1}"#;
    let cases = [
        ("empty", "[]", "[]", "nodes"),
        ("backward", &format!("[{node}, {node}]"), "[[1, 0]]", "edges[0]"),
        ("range", &format!("[{node}, {node}]"), "[[0, 1], [0, 2]]", "edges[1]"),
        ("self", &format!("[{node}, {node}]"), "[[1, 1]]", "edges[0]"),
        ("duplicate", &format!("[{node}, {node}]"), "[[0, 1], [0, 1]]", "edges"),
    ];
    for (name, nodes, edges, field) in cases {
        let path = write(
            dir.path(),
            &format!("{name}.json"),
            &format!(r#"{{"name": "{name}", "nodes": {nodes}, "edges": {edges}}}"#),
        );
        assert_eq!(invalid_field(load_graph(&path).unwrap_err()), field, "{name}");
    }
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_graph(&dir.path().join("absent.json")).unwrap_err(), IoError::Io { .. }));
}

#[test]
fn schedule_round_trip_and_range_check() {
    let dir = tempfile::tempdir().unwrap();
    let g = sample_dag(&SamplerConfig::new(6, 2, 1)).unwrap();
    let s = Schedule::new(vec![0, 0, 1, 1, 2, 2], 3);
    let path = dir.path().join("s.json");
    save_schedule(&path, &s, &s.objective(&g)).unwrap();
    let file = load_schedule(&path).unwrap();
    assert_eq!(file.schedule(), s);
    assert_eq!(file.objective.per_stage_memory, s.objective(&g).per_stage_memory);

    let bad = write(
        dir.path(),
        "bad.json",
        r#"{"num_stages": 2, "stage_of": [0, 2], "objective": {"peak_stage_memory": 1, "per_stage_memory": [1, 0]}}"#,
    );
    assert_eq!(invalid_field(load_schedule(&bad).unwrap_err()), "stage_of[1]");
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let p = PolicyParams::init(PolicyConfig::new(8, 3), 5);
    let path = dir.path().join("c.json");
    save_checkpoint(&path, &p).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), p);
    let first = fs::read(&path).unwrap();
    save_checkpoint(&path, &load_checkpoint(&path).unwrap()).unwrap();
    assert_eq!(fs::read(&path).unwrap(), first);
}

#[test]
fn checkpoint_shape_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = PolicyParams::init(PolicyConfig::new(8, 3), 5);
    let mut file = CheckpointFile::from_params(&p);
    // claim a wider network than the tensors hold
    file.config.hidden_dim = 9;
    let path = write(dir.path(), "wide.json", &serde_json::to_string(&file).unwrap());
    assert_eq!(invalid_field(load_checkpoint(&path).unwrap_err()), "tensors[0]");

    let mut file = CheckpointFile::from_params(&p);
    file.tensors[2].data.pop();
    let path = write(dir.path(), "short.json", &serde_json::to_string(&file).unwrap());
    assert_eq!(invalid_field(load_checkpoint(&path).unwrap_err()), "tensors[2].data");

    let mut file = CheckpointFile::from_params(&p);
    file.tensors.swap(0, 1);
    let path = write(dir.path(), "order.json", &serde_json::to_string(&file).unwrap());
    assert_eq!(invalid_field(load_checkpoint(&path).unwrap_err()), "tensors[0]");

    let mut file = CheckpointFile::from_params(&p);
    file.version = 99;
    let path = write(dir.path(), "version.json", &serde_json::to_string(&file).unwrap());
    assert_eq!(invalid_field(load_checkpoint(&path).unwrap_err()), "version");
}

#[test]
fn graph_files_are_listed_in_name_order() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["b.json", "a.json", "notes.txt"] {
        write(dir.path(), name, "{}");
    }
    let files = list_graph_files(dir.path()).unwrap();
    let names: Vec<_> = files.iter().map(|f| f.file_name().unwrap().to_str().unwrap()).collect();
    assert_eq!(names, ["a.json", "b.json"]);
}

#[test]
fn shipped_config_is_valid() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk-scale.toml");
    let cfg = pipesched::config::TrainConfig::load(&path).unwrap();
    assert_eq!(cfg.dataset_size(), 5000);
    assert!(cfg.checkpoint.ends_with("runs/desk/policy.json"));
}
