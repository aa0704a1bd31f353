//! On-disk data directory: environments, trajectories, the append-only label
//! log and the current model.
//!
//! ```text
//! <root>/environments/<id>.json
//! <root>/trajectories/<id>.json
//! <root>/labels.jsonl
//! <root>/model.json
//! ```

use planit_core::em::{EmError, TrainingSet};
use planit_core::env::{Environment, LabeledSegment, Trajectory};
use planit_core::eval::ground_truth_scores;
use planit_core::io::{self, SchemaError};
use planit_core::affordance::ModelParameters;
use planit_core::synth::SyntheticSuite;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const ENVIRONMENTS_DIR: &str = "environments";
pub const TRAJECTORIES_DIR: &str = "trajectories";
pub const LABELS_FILE: &str = "labels.jsonl";
pub const MODEL_FILE: &str = "model.json";
pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{}: {error}", path.display())]
    Schema { path: PathBuf, error: SchemaError },
    #[error("{from} references unknown {kind} `{id}`")]
    DanglingReference { from: String, kind: &'static str, id: String },
    #[error("duplicate {kind} id `{id}`")]
    Duplicate { kind: &'static str, id: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl StoreError {
    /// True for problems with the data itself rather than the machine.
    pub fn is_validation(&self) -> bool {
        !matches!(self, StoreError::Io { .. })
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        StoreError::Io { path: path.to_path_buf(), source }
    }
}

fn read(path: &Path) -> Result<String, StoreError> {
    fs::read_to_string(path).map_err(|e| StoreError::io(path, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), StoreError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| StoreError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| StoreError::io(path, e))
}

/// `*.json` files of `dir` sorted by name; a missing directory is empty.
fn json_files(dir: &Path) -> Result<Vec<PathBuf>, StoreError> {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(StoreError::io(dir, e)),
    };
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| StoreError::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "json") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Per-environment summary written by `ingest`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexEntry {
    pub id: String,
    pub activities: usize,
    pub trajectories: Vec<String>,
    pub labels: usize,
}

/// A validated data directory held in memory.
#[derive(Debug, Clone)]
pub struct DataStore {
    root: PathBuf,
    pub environments: BTreeMap<String, Environment>,
    pub trajectories: BTreeMap<String, Trajectory>,
    pub labels: Vec<LabeledSegment>,
}

impl DataStore {
    /// Loads and cross-checks every file under `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        let mut store = DataStore {
            root: root.clone(),
            environments: BTreeMap::new(),
            trajectories: BTreeMap::new(),
            labels: Vec::new(),
        };
        for path in json_files(&root.join(ENVIRONMENTS_DIR))? {
            let env = io::parse_environment(&read(&path)?).map_err(|error| StoreError::Schema { path, error })?;
            store.insert_environment(env)?;
        }
        for path in json_files(&root.join(TRAJECTORIES_DIR))? {
            let t = io::parse_trajectory(&read(&path)?).map_err(|error| StoreError::Schema { path: path.clone(), error })?;
            let env = store.environments.get(&t.environment_id).ok_or_else(|| StoreError::DanglingReference {
                from: format!("trajectory `{}`", t.id),
                kind: "environment",
                id: t.environment_id.clone(),
            })?;
            t.validate_in(env).map_err(|e| StoreError::Schema { path, error: schema(e) })?;
            if store.trajectories.contains_key(&t.id) {
                return Err(StoreError::Duplicate { kind: "trajectory", id: t.id });
            }
            store.trajectories.insert(t.id.clone(), t);
        }
        let labels_path = root.join(LABELS_FILE);
        if labels_path.exists() {
            let labels =
                io::parse_labels(&read(&labels_path)?).map_err(|error| StoreError::Schema { path: labels_path.clone(), error })?;
            for l in labels {
                store.check_label(&l).map_err(|e| match e {
                    StoreError::Schema { error, .. } => StoreError::Schema { path: labels_path.clone(), error },
                    other => other,
                })?;
                store.labels.push(l);
            }
        }
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn insert_environment(&mut self, env: Environment) -> Result<(), StoreError> {
        if self.environments.contains_key(&env.id) {
            return Err(StoreError::Duplicate { kind: "environment", id: env.id });
        }
        self.environments.insert(env.id.clone(), env);
        Ok(())
    }

    fn check_label(&self, label: &LabeledSegment) -> Result<(), StoreError> {
        let t = self.trajectories.get(&label.trajectory_id).ok_or_else(|| StoreError::DanglingReference {
            from: "label".into(),
            kind: "trajectory",
            id: label.trajectory_id.clone(),
        })?;
        label
            .validate_against(t)
            .map_err(|e| StoreError::Schema { path: self.root.join(LABELS_FILE), error: schema(e) })
    }

    /// Validates `label` and appends it to the label log.
    pub fn append_label(&mut self, label: LabeledSegment) -> Result<(), StoreError> {
        self.check_label(&label)?;
        let path = self.root.join(LABELS_FILE);
        fs::create_dir_all(&self.root).map_err(|e| StoreError::io(&self.root, e))?;
        let mut f = fs::OpenOptions::new().create(true).append(true).open(&path).map_err(|e| StoreError::io(&path, e))?;
        writeln!(f, "{}", io::label_record_line(&label)).map_err(|e| StoreError::io(&path, e))?;
        self.labels.push(label);
        Ok(())
    }

    /// The label log as JSON lines, one record per line.
    pub fn labels_text(&self) -> String {
        self.labels.iter().map(|l| io::label_record_line(l) + "\n").collect()
    }

    pub fn environment_list(&self) -> Vec<Environment> {
        self.environments.values().cloned().collect()
    }

    pub fn trajectory_list(&self) -> Vec<Trajectory> {
        self.trajectories.values().cloned().collect()
    }

    pub fn training_set(&self) -> Result<TrainingSet, EmError> {
        TrainingSet::from_labels(&self.environment_list(), &self.trajectory_list(), &self.labels)
    }

    /// Ground-truth score of every labeled trajectory.
    pub fn truths(&self) -> BTreeMap<String, u8> {
        ground_truth_scores(&self.labels)
    }

    pub fn index(&self) -> Vec<IndexEntry> {
        self.environments
            .values()
            .map(|e| {
                let trajectories: Vec<String> =
                    self.trajectories.values().filter(|t| t.environment_id == e.id).map(|t| t.id.clone()).collect();
                let labels = self.labels.iter().filter(|l| trajectories.contains(&l.trajectory_id)).count();
                IndexEntry { id: e.id.clone(), activities: e.activities.len(), trajectories, labels }
            })
            .collect()
    }

    pub fn write_index(&self) -> Result<PathBuf, StoreError> {
        let path = self.root.join(INDEX_FILE);
        write(&path, io::to_pretty(&self.index()))?;
        Ok(path)
    }

    /// Current model, if one has been trained or copied in.
    pub fn load_model(&self) -> Result<Option<ModelParameters>, StoreError> {
        let path = self.root.join(MODEL_FILE);
        if !path.exists() {
            return Ok(None);
        }
        load_model(&path).map(Some)
    }

    pub fn save_model(&self, params: &ModelParameters) -> Result<(), StoreError> {
        write(&self.root.join(MODEL_FILE), io::model_to_string(params))
    }
}

fn schema(e: planit_core::env::ValidationError) -> SchemaError {
    SchemaError { line: 0, column: 0, field: e.field, message: e.message }
}

pub fn load_model(path: &Path) -> Result<ModelParameters, StoreError> {
    io::parse_model(&read(path)?).map_err(|error| StoreError::Schema { path: path.to_path_buf(), error })
}

pub fn save_model(path: &Path, params: &ModelParameters) -> Result<(), StoreError> {
    write(path, io::model_to_string(params))
}

/// Writes a synthetic suite in the data-directory layout.
pub fn write_suite(root: &Path, suite: &SyntheticSuite) -> Result<(), StoreError> {
    for e in &suite.environments {
        write(&root.join(ENVIRONMENTS_DIR).join(format!("{}.json", e.id)), io::to_pretty(e))?;
    }
    for t in &suite.trajectories {
        write(&root.join(TRAJECTORIES_DIR).join(format!("{}.json", t.id)), io::to_pretty(t))?;
    }
    let labels: String = suite.labels.iter().map(|l| io::label_record_line(l) + "\n").collect();
    write(&root.join(LABELS_FILE), labels)
}

/// Writes raw bytes, creating parent directories.
pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), StoreError> {
    write(path, contents)
}
