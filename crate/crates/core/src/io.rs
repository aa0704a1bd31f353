//! Text file formats: environment and trajectory JSON, the label log (JSON
//! lines) and the model file. Every parser validates after decoding, so a
//! value returned from here satisfies the type's invariants.

use crate::affordance::{ActivityKernels, ActivityModel, AttributePairModel, ModelParameters, MODEL_FORMAT_VERSION};
use crate::distributions::{BetaParams, GaussianParams, VonMisesParams};
use crate::env::{ActivityType, Environment, LabeledSegment, Trajectory, ValidationError};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// A document that does not match its schema. `line` and `column` are
/// 1-based and zero when the problem is semantic rather than syntactic.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct SchemaError {
    pub line: usize,
    pub column: usize,
    /// Path of the offending field, e.g. `activities[2].human_facing`.
    pub field: String,
    pub message: String,
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line > 0 {
            write!(f, "line {}, column {}: ", self.line, self.column)?;
        }
        if !self.field.is_empty() {
            write!(f, "{}: ", self.field)?;
        }
        f.write_str(&self.message)
    }
}

impl SchemaError {
    fn semantic(e: ValidationError) -> Self {
        SchemaError { line: 0, column: 0, field: e.field, message: e.message }
    }

    /// Same error shifted to a line of a multi-line document.
    fn at_line(mut self, line: usize) -> Self {
        if self.line == 0 {
            self.column = 0;
        }
        self.line = line;
        self
    }
}

fn decode<T: DeserializeOwned>(text: &str) -> Result<T, SchemaError> {
    let json = |e: serde_json::Error, field: String| SchemaError {
        line: e.line(),
        column: e.column(),
        field: if field == "." { String::new() } else { field },
        message: strip_position(&e.to_string()),
    };
    let mut de = serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let field = e.path().to_string();
        json(e.into_inner(), field)
    })?;
    de.end().map_err(|e| json(e, String::new()))?;
    Ok(value)
}

fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

pub fn parse_environment(text: &str) -> Result<Environment, SchemaError> {
    let env: Environment = decode(text)?;
    env.validate().map_err(SchemaError::semantic)?;
    Ok(env)
}

pub fn parse_trajectory(text: &str) -> Result<Trajectory, SchemaError> {
    let t: Trajectory = decode(text)?;
    t.validate().map_err(SchemaError::semantic)?;
    Ok(t)
}

/// One line of the label log.
pub fn parse_label_record(line: &str) -> Result<LabeledSegment, SchemaError> {
    let l: LabeledSegment = decode(line)?;
    l.validate().map_err(SchemaError::semantic)?;
    Ok(l)
}

/// A whole label log; blank lines are skipped and errors carry the line number.
pub fn parse_labels(text: &str) -> Result<Vec<LabeledSegment>, SchemaError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_label_record(l).map_err(|e| e.at_line(i + 1)))
        .collect()
}

/// Compact single-line encoding used in the label log.
pub fn label_record_line(label: &LabeledSegment) -> String {
    serde_json::to_string(label).expect("labels serialize")
}

/// Pretty JSON with a trailing newline, the layout of every written text file.
pub fn to_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: u32,
    trained_at: Option<String>,
    iteration_count: u32,
    activities: Vec<ActivityEntry>,
    #[serde(default)]
    attribute_pairs: Vec<AttributePairModel>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "proximity_class", rename_all = "snake_case", deny_unknown_fields)]
enum ActivityEntry {
    Distant {
        activity_type: ActivityType,
        prior: f64,
        ang_h: VonMisesParams,
        ang_o: VonMisesParams,
        edge: BetaParams,
    },
    CloseProximity {
        activity_type: ActivityType,
        prior: f64,
        ang_h: VonMisesParams,
        dist_h: GaussianParams,
    },
}

impl From<&ActivityModel> for ActivityEntry {
    fn from(m: &ActivityModel) -> Self {
        match m.kernels {
            ActivityKernels::Distant { ang_h, ang_o, edge } => {
                ActivityEntry::Distant { activity_type: m.activity_type, prior: m.prior, ang_h, ang_o, edge }
            }
            ActivityKernels::Close { ang_h, dist_h } => {
                ActivityEntry::CloseProximity { activity_type: m.activity_type, prior: m.prior, ang_h, dist_h }
            }
        }
    }
}

impl From<ActivityEntry> for ActivityModel {
    fn from(e: ActivityEntry) -> Self {
        match e {
            ActivityEntry::Distant { activity_type, prior, ang_h, ang_o, edge } => {
                ActivityModel { activity_type, prior, kernels: ActivityKernels::Distant { ang_h, ang_o, edge } }
            }
            ActivityEntry::CloseProximity { activity_type, prior, ang_h, dist_h } => {
                ActivityModel { activity_type, prior, kernels: ActivityKernels::Close { ang_h, dist_h } }
            }
        }
    }
}

/// Model file text. Activities are written in registry order.
pub fn model_to_string(params: &ModelParameters) -> String {
    to_pretty(&ModelFile {
        version: params.version,
        trained_at: params.trained_at.clone(),
        iteration_count: params.iteration_count,
        activities: params.registry.values().map(ActivityEntry::from).collect(),
        attribute_pairs: params.attribute_pairs.clone(),
    })
}

pub fn parse_model(text: &str) -> Result<ModelParameters, SchemaError> {
    let file: ModelFile = decode(text)?;
    if file.version != MODEL_FORMAT_VERSION {
        return Err(SchemaError::semantic(ValidationError::new(
            "version",
            format!("unsupported model version {} (expected {MODEL_FORMAT_VERSION})", file.version),
        )));
    }
    let mut params = ModelParameters::new([]);
    params.trained_at = file.trained_at;
    params.iteration_count = file.iteration_count;
    params.attribute_pairs = file.attribute_pairs;
    for (i, entry) in file.activities.into_iter().enumerate() {
        let m = ActivityModel::from(entry);
        if params.registry.insert(m.activity_type, m).is_some() {
            return Err(SchemaError::semantic(ValidationError::new(
                format!("activities[{i}].activity_type"),
                format!("duplicate activity type `{}`", m.activity_type),
            )));
        }
    }
    params.validate().map_err(|m| SchemaError::semantic(ValidationError::new("activities", m)))?;
    Ok(params)
}
