//! Environments, activity instances, trajectories, labels and the local-frame
//! feature extraction that maps a waypoint into an activity's coordinate frame.

use crate::geometry::{Bounds, Frame2, Polygon, Vec2};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// Waypoints closer than this to a frame origin have no defined direction.
pub const FRAME_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("waypoint coincides with the {0} frame origin; direction undefined")]
    DegenerateFrame(FrameSide),
    #[error("invalid heights: need 0 < h_obj ({h_obj}) < h_max ({h_max})")]
    InvalidHeights { h_obj: f64, h_max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameSide {
    Human,
    Object,
}

impl fmt::Display for FrameSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FrameSide::Human => "human",
            FrameSide::Object => "object",
        })
    }
}

/// A structural problem in an input record, with the offending field.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{field}: {message}")]
pub struct ValidationError {
    pub field: String,
    pub message: String,
}

impl ValidationError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        ValidationError { field: field.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivityType {
    Walking,
    Watching,
    Interacting,
    Reaching,
    Sitting,
    Working,
}

impl ActivityType {
    pub const ALL: [ActivityType; 6] = [
        ActivityType::Walking,
        ActivityType::Watching,
        ActivityType::Interacting,
        ActivityType::Reaching,
        ActivityType::Sitting,
        ActivityType::Working,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActivityType::Walking => "walking",
            ActivityType::Watching => "watching",
            ActivityType::Interacting => "interacting",
            ActivityType::Reaching => "reaching",
            ActivityType::Sitting => "sitting",
            ActivityType::Working => "working",
        }
    }

    /// Built-in proximity classification.
    pub fn default_proximity(self) -> ProximityClass {
        match self {
            ActivityType::Walking | ActivityType::Watching | ActivityType::Interacting => {
                ProximityClass::Distant
            }
            ActivityType::Reaching | ActivityType::Sitting | ActivityType::Working => {
                ProximityClass::CloseProximity
            }
        }
    }
}

impl fmt::Display for ActivityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProximityClass {
    Distant,
    CloseProximity,
}

/// Activity type → proximity class table. Loadable from a JSON object such as
/// `{"watching": "distant", "working": "close_proximity"}`; unspecified types
/// keep the built-in class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProximityTable(BTreeMap<ActivityType, ProximityClass>);

impl Default for ProximityTable {
    fn default() -> Self {
        ProximityTable(ActivityType::ALL.iter().map(|&a| (a, a.default_proximity())).collect())
    }
}

impl ProximityTable {
    pub fn class_of(&self, activity: ActivityType) -> ProximityClass {
        self.0.get(&activity).copied().unwrap_or_else(|| activity.default_proximity())
    }

    pub fn set(&mut self, activity: ActivityType, class: ProximityClass) {
        self.0.insert(activity, class);
    }
}

/// One (human, object, activity) triple in an environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivityInstance {
    pub activity_type: ActivityType,
    pub human_position: Vec2,
    /// Unit facing direction of the human.
    pub human_facing: Vec2,
    pub object_position: Vec2,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_id: Option<String>,
    pub proximity_class: ProximityClass,
}

impl ActivityInstance {
    pub fn new(
        activity_type: ActivityType,
        human_position: Vec2,
        human_facing: Vec2,
        object_position: Vec2,
    ) -> Self {
        ActivityInstance {
            activity_type,
            human_position,
            human_facing,
            object_position,
            object_id: None,
            proximity_class: activity_type.default_proximity(),
        }
    }

    /// Human–object separation d_{h−o}.
    pub fn separation(&self) -> f64 {
        self.human_position.distance(self.object_position)
    }

    /// Human-centred frame: x-axis toward the object (or along the facing
    /// direction when the object sits on the human).
    pub fn human_frame(&self) -> Frame2 {
        let axis = (self.object_position - self.human_position)
            .try_normalize(FRAME_EPS)
            .or_else(|| self.human_facing.try_normalize(FRAME_EPS))
            .unwrap_or(Vec2::X);
        Frame2 { origin: self.human_position, x_axis: axis }
    }

    /// Object-centred frame: x-axis toward the human.
    pub fn object_frame(&self) -> Frame2 {
        let h = self.human_frame();
        Frame2 { origin: self.object_position, x_axis: -h.x_axis }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneObject {
    pub id: String,
    pub position: Vec2,
    /// Object height h_obj, meters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<f64>,
    /// Manipulation attribute (e.g. `human`, `fragile`, `electronic`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Environment {
    pub id: String,
    pub bounds: Bounds,
    #[serde(default)]
    pub obstacles: Vec<Polygon>,
    #[serde(default)]
    pub objects: Vec<SceneObject>,
    #[serde(default)]
    pub activities: Vec<ActivityInstance>,
    /// Scene height h_max, meters (manipulation only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_height: Option<f64>,
}

impl Environment {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.id.is_empty() {
            return Err(ValidationError::new("id", "must be non-empty"));
        }
        if !self.bounds.is_valid() {
            return Err(ValidationError::new("bounds", "min must be finite and strictly below max"));
        }
        for (i, poly) in self.obstacles.iter().enumerate() {
            if !poly.is_convex() {
                return Err(ValidationError::new(
                    format!("obstacles[{i}]"),
                    "must be a convex polygon with at least 3 vertices",
                ));
            }
        }
        for (i, obj) in self.objects.iter().enumerate() {
            if !self.bounds.contains(obj.position) {
                return Err(ValidationError::new(format!("objects[{i}].position"), "outside bounds"));
            }
            if let Some(h) = obj.height {
                if !(h.is_finite() && h >= 0.0) {
                    return Err(ValidationError::new(format!("objects[{i}].height"), "must be finite and >= 0"));
                }
            }
        }
        for (i, act) in self.activities.iter().enumerate() {
            let at = |f: &str| format!("activities[{i}].{f}");
            if !self.bounds.contains(act.human_position) {
                return Err(ValidationError::new(at("human_position"), "outside bounds"));
            }
            if !self.bounds.contains(act.object_position) {
                return Err(ValidationError::new(at("object_position"), "outside bounds"));
            }
            let facing_norm = act.human_facing.norm();
            if !facing_norm.is_finite() || (facing_norm - 1.0).abs() > 1e-6 {
                return Err(ValidationError::new(at("human_facing"), "must be a unit vector"));
            }
            if act.proximity_class == ProximityClass::Distant && act.separation() <= FRAME_EPS {
                return Err(ValidationError::new(
                    at("object_position"),
                    "distant activities need a positive human-object separation",
                ));
            }
        }
        if let Some(h) = self.scene_height {
            if !(h.is_finite() && h > 0.0) {
                return Err(ValidationError::new("scene_height", "must be finite and > 0"));
            }
        }
        Ok(())
    }

    pub fn is_free(&self, p: Vec2) -> bool {
        self.bounds.contains(p) && !self.obstacles.iter().any(|o| o.contains(p))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub id: String,
    pub environment_id: String,
    pub waypoints: Vec<Vec2>,
    /// Seconds, strictly increasing, one per waypoint.
    pub timestamps: Vec<f64>,
}

impl Trajectory {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.id.is_empty() {
            return Err(ValidationError::new("id", "must be non-empty"));
        }
        if self.waypoints.is_empty() {
            return Err(ValidationError::new("waypoints", "need at least one waypoint"));
        }
        if self.waypoints.len() != self.timestamps.len() {
            return Err(ValidationError::new("timestamps", "length must match waypoints"));
        }
        if let Some(i) = self.waypoints.iter().position(|w| !w.is_finite()) {
            return Err(ValidationError::new(format!("waypoints[{i}]"), "must be finite"));
        }
        if let Some(i) = self.timestamps.iter().position(|t| !t.is_finite()) {
            return Err(ValidationError::new(format!("timestamps[{i}]"), "must be finite"));
        }
        if let Some(i) = self.timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(ValidationError::new(format!("timestamps[{}]", i + 1), "must be strictly increasing"));
        }
        Ok(())
    }

    pub fn validate_in(&self, env: &Environment) -> Result<(), ValidationError> {
        self.validate()?;
        if let Some(i) = self.waypoints.iter().position(|&w| !env.bounds.contains(w)) {
            return Err(ValidationError::new(format!("waypoints[{i}]"), "outside environment bounds"));
        }
        Ok(())
    }

    pub fn start_time(&self) -> f64 {
        self.timestamps[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.timestamps.last().expect("non-empty trajectory")
    }

    /// Linear interpolation of the position at `t`, clamped to the time range.
    pub fn position_at(&self, t: f64) -> Vec2 {
        let ts = &self.timestamps;
        if t <= ts[0] {
            return self.waypoints[0];
        }
        if t >= self.end_time() {
            return *self.waypoints.last().unwrap();
        }
        let i = ts.partition_point(|&x| x <= t);
        let (t0, t1) = (ts[i - 1], ts[i]);
        let s = (t - t0) / (t1 - t0);
        self.waypoints[i - 1].lerp(self.waypoints[i], s)
    }

    pub fn length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| w[0].distance(w[1])).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Bad,
    Neutral,
    Good,
}

impl Label {
    pub fn score(self) -> u8 {
        match self {
            Label::Bad => 1,
            Label::Neutral => 3,
            Label::Good => 5,
        }
    }

    pub fn from_score(score: u8) -> Option<Label> {
        match score {
            1 => Some(Label::Bad),
            3 => Some(Label::Neutral),
            5 => Some(Label::Good),
            _ => None,
        }
    }
}

/// A user label on a time interval of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledSegment {
    pub trajectory_id: String,
    /// `[start_time, end_time]`, seconds.
    pub interval: [f64; 2],
    pub label: Label,
    pub annotator_id: String,
}

impl LabeledSegment {
    pub fn start_time(&self) -> f64 {
        self.interval[0]
    }

    pub fn end_time(&self) -> f64 {
        self.interval[1]
    }

    pub fn duration(&self) -> f64 {
        self.interval[1] - self.interval[0]
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.trajectory_id.is_empty() {
            return Err(ValidationError::new("trajectory_id", "must be non-empty"));
        }
        let [s, e] = self.interval;
        if !(s.is_finite() && e.is_finite()) {
            return Err(ValidationError::new("interval", "must be finite"));
        }
        if s >= e {
            return Err(ValidationError::new("interval", "start_time must be before end_time"));
        }
        Ok(())
    }

    pub fn validate_against(&self, traj: &Trajectory) -> Result<(), ValidationError> {
        self.validate()?;
        let tol = 1e-9;
        if self.start_time() < traj.start_time() - tol || self.end_time() > traj.end_time() + tol {
            return Err(ValidationError::new("interval", "outside the trajectory time range"));
        }
        Ok(())
    }
}

/// Waypoint expressed in an activity's local frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivityFrameFeatures {
    /// Direction of the waypoint in the human-centred frame.
    pub x_h: Vec2,
    /// Direction in the object-centred frame (distant activities only).
    pub x_o: Option<Vec2>,
    /// Signed projection onto the human→object axis.
    pub d_t: f64,
    pub d_h_o: f64,
    /// `d_t / d_h_o` clamped to `[0, 1]`.
    pub d_bar: f64,
    /// Distance from the human.
    pub d_euclid: f64,
}

/// Same quantities as [`ActivityFrameFeatures`] but with directions left
/// undefined instead of failing when the waypoint sits on a frame origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaypointFeatures {
    pub x_h: Option<Vec2>,
    pub x_o: Option<Vec2>,
    pub d_t: f64,
    pub d_h_o: f64,
    pub d_bar: f64,
    pub d_euclid: f64,
}

pub fn waypoint_features(waypoint: Vec2, activity: &ActivityInstance) -> WaypointFeatures {
    let hf = activity.human_frame();
    let local_h = hf.to_local(waypoint);
    let d_h_o = activity.separation();
    let x_o = match activity.proximity_class {
        ProximityClass::Distant => activity.object_frame().to_local(waypoint).try_normalize(FRAME_EPS),
        ProximityClass::CloseProximity => None,
    };
    let d_t = local_h.x;
    let d_bar = if d_h_o > FRAME_EPS { (d_t / d_h_o).clamp(0.0, 1.0) } else { 0.0 };
    WaypointFeatures {
        x_h: local_h.try_normalize(FRAME_EPS),
        x_o,
        d_t,
        d_h_o,
        d_bar,
        d_euclid: local_h.norm(),
    }
}

pub fn extract_features(waypoint: Vec2, activity: &ActivityInstance) -> Result<ActivityFrameFeatures, EnvError> {
    let f = waypoint_features(waypoint, activity);
    let x_h = f.x_h.ok_or(EnvError::DegenerateFrame(FrameSide::Human))?;
    if activity.proximity_class == ProximityClass::Distant && f.x_o.is_none() {
        return Err(EnvError::DegenerateFrame(FrameSide::Object));
    }
    Ok(ActivityFrameFeatures { x_h, x_o: f.x_o, d_t: f.d_t, d_h_o: f.d_h_o, d_bar: f.d_bar, d_euclid: f.d_euclid })
}

/// Normalized height h̄ of a waypoint relative to an object of height
/// `h_obj` in a scene of height `h_max`.
pub fn extract_height_feature(waypoint_z: f64, h_obj: f64, h_max: f64) -> Result<f64, EnvError> {
    if !(h_obj > 0.0 && h_obj < h_max && h_max.is_finite()) {
        return Err(EnvError::InvalidHeights { h_obj, h_max });
    }
    let h = if waypoint_z < h_obj { waypoint_z / h_obj } else { (h_max - waypoint_z) / h_max };
    Ok(h.clamp(0.0, 1.0))
}
