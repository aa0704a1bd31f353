//! Per-activity costs, the latent-mixture waypoint cost, trajectory costs and
//! the manipulation attribute-pair variant.
//!
//! A cost here is the density of bad-labeled waypoints: higher means worse.

use crate::distributions::{
    BetaKernel, BetaParams, DistError, GaussianKernel, GaussianParams, VonMisesKernel, VonMisesParams,
};
use crate::env::{
    extract_height_feature, waypoint_features, ActivityInstance, ActivityType, EnvError, Environment,
    ProximityClass, Trajectory, WaypointFeatures, FRAME_EPS,
};
use crate::geometry::Vec2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Floor for the edge (Beta) kernel where its density vanishes, e.g. for
/// waypoints whose projection is clamped onto an endpoint.
pub const EDGE_DENSITY_FLOOR: f64 = 1e-6;

/// Quantile of the cost over an environment's free space below which a
/// waypoint counts as harmless when trajectories are ranked. Far from every
/// activity the mixture density decays through many orders of magnitude;
/// without a floor those tails, not the high-cost regions a trajectory
/// visits, decide the ranking.
pub const RANKING_FLOOR_QUANTILE: f64 = 0.75;

/// Grid spacing used to sample free space for [`EnvironmentCost::free_space_quantile`].
pub const RANKING_GRID_RESOLUTION: f64 = 0.1;

/// Attribute naming a human in manipulation scenes.
pub const HUMAN_ATTRIBUTE: &str = "human";

/// Current model file format version.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AffordanceError {
    #[error("environment has no activities")]
    NoActivities,
    #[error("no model registered for activity `{0}`")]
    MissingModel(ActivityType),
    #[error("model for `{activity}` is {model:?} but the instance is {instance:?}")]
    ModelMismatch { activity: ActivityType, model: ProximityClass, instance: ProximityClass },
    #[error("no attribute-pair model for grabbed `{grabbed}` near `{context}`")]
    UnknownAttribute { grabbed: String, context: String },
    #[error("manipulation scene: {0}")]
    Scene(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Param(#[from] DistError),
}

/// Kernel set of one activity type; the variant fixes which kernels exist.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActivityKernels {
    Distant { ang_h: VonMisesParams, ang_o: VonMisesParams, edge: BetaParams },
    Close { ang_h: VonMisesParams, dist_h: GaussianParams },
}

impl ActivityKernels {
    pub fn proximity_class(&self) -> ProximityClass {
        match self {
            ActivityKernels::Distant { .. } => ProximityClass::Distant,
            ActivityKernels::Close { .. } => ProximityClass::CloseProximity,
        }
    }

    pub fn uniform(class: ProximityClass) -> Self {
        match class {
            ProximityClass::Distant => ActivityKernels::Distant {
                ang_h: VonMisesParams::uniform(),
                ang_o: VonMisesParams::uniform(),
                edge: BetaParams::uniform(),
            },
            ProximityClass::CloseProximity => ActivityKernels::Close {
                ang_h: VonMisesParams::uniform(),
                dist_h: GaussianParams { g: 0.0, sigma: 1.0 },
            },
        }
    }

    /// Free parameters, counting each mean direction as one angle.
    pub fn parameter_count(&self) -> usize {
        match self {
            ActivityKernels::Distant { .. } => 2 * 2 + 2,
            ActivityKernels::Close { .. } => 2 + 2,
        }
    }

    pub fn validate(&self) -> Result<(), DistError> {
        match self {
            ActivityKernels::Distant { ang_h, ang_o, edge } => {
                ang_h.validate()?;
                ang_o.validate()?;
                edge.validate()
            }
            ActivityKernels::Close { ang_h, dist_h } => {
                ang_h.validate()?;
                dist_h.validate()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivityModel {
    pub activity_type: ActivityType,
    pub kernels: ActivityKernels,
    /// Prior η of a bad waypoint arising from this activity type.
    pub prior: f64,
}

impl ActivityModel {
    pub fn proximity_class(&self) -> ProximityClass {
        self.kernels.proximity_class()
    }
}

/// Manipulation cost model for one (grabbed attribute, context attribute) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributePairModel {
    pub grabbed: String,
    pub context: String,
    pub dist: GaussianParams,
    pub ang: VonMisesParams,
    /// Present iff the context attribute is a human.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<BetaParams>,
    pub prior: f64,
}

impl AttributePairModel {
    pub fn validate(&self) -> Result<(), String> {
        self.dist.validate().map_err(|e| e.to_string())?;
        self.ang.validate().map_err(|e| e.to_string())?;
        if let Some(h) = &self.height {
            h.validate().map_err(|e| e.to_string())?;
        }
        if (self.context == HUMAN_ATTRIBUTE) != self.height.is_some() {
            return Err("height kernel must be present exactly when the context attribute is `human`".into());
        }
        if !(0.0..=1.0).contains(&self.prior) {
            return Err("prior must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// The full learned parameter set Θ.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub registry: BTreeMap<ActivityType, ActivityModel>,
    pub attribute_pairs: Vec<AttributePairModel>,
    pub version: u32,
    pub trained_at: Option<String>,
    pub iteration_count: u32,
}

impl ModelParameters {
    pub fn new(models: impl IntoIterator<Item = ActivityModel>) -> Self {
        ModelParameters {
            registry: models.into_iter().map(|m| (m.activity_type, m)).collect(),
            attribute_pairs: Vec::new(),
            version: MODEL_FORMAT_VERSION,
            trained_at: None,
            iteration_count: 0,
        }
    }

    /// Uniform kernels and equal priors for every built-in activity type.
    pub fn uniform() -> Self {
        let eta = 1.0 / ActivityType::ALL.len() as f64;
        Self::new(ActivityType::ALL.iter().map(|&a| ActivityModel {
            activity_type: a,
            kernels: ActivityKernels::uniform(a.default_proximity()),
            prior: eta,
        }))
    }

    pub fn get(&self, activity: ActivityType) -> Option<&ActivityModel> {
        self.registry.get(&activity)
    }

    pub fn parameter_count(&self) -> usize {
        self.registry.values().map(|m| m.kernels.parameter_count()).sum()
    }

    pub fn validate(&self) -> Result<(), String> {
        for (ty, m) in &self.registry {
            if *ty != m.activity_type {
                return Err(format!("registry key `{ty}` holds a model for `{}`", m.activity_type));
            }
            m.kernels.validate().map_err(|e| format!("{ty}: {e}"))?;
            if !(m.prior.is_finite() && (0.0..=1.0).contains(&m.prior)) {
                return Err(format!("{ty}: prior {} outside [0, 1]", m.prior));
            }
        }
        for p in &self.attribute_pairs {
            p.validate().map_err(|e| format!("pair ({}, {}): {e}", p.grabbed, p.context))?;
        }
        Ok(())
    }

    pub fn pair(&self, grabbed: &str, context: &str) -> Option<&AttributePairModel> {
        self.attribute_pairs.iter().find(|p| p.grabbed == grabbed && p.context == context)
    }
}

/// An activity model with normalizers precomputed.
#[derive(Debug, Clone, Copy)]
pub(crate) enum CompiledKernels {
    Distant { ang_h: VonMisesKernel, ang_o: VonMisesKernel, edge: BetaKernel },
    Close { ang_h: VonMisesKernel, dist_h: GaussianKernel },
}

impl CompiledKernels {
    pub(crate) fn new(k: &ActivityKernels) -> Self {
        match k {
            ActivityKernels::Distant { ang_h, ang_o, edge } => CompiledKernels::Distant {
                ang_h: VonMisesKernel::new(ang_h),
                ang_o: VonMisesKernel::new(ang_o),
                edge: BetaKernel::new(edge),
            },
            ActivityKernels::Close { ang_h, dist_h } => {
                CompiledKernels::Close { ang_h: VonMisesKernel::new(ang_h), dist_h: GaussianKernel::new(dist_h) }
            }
        }
    }

    /// ln Ψ_a for precomputed features. Undefined directions contribute the
    /// uniform circular density.
    pub(crate) fn ln_cost(&self, f: &WaypointFeatures) -> f64 {
        let ang = |k: &VonMisesKernel, x: Option<Vec2>| match x {
            Some(x) => k.ln_pdf(x),
            None => VonMisesKernel::ln_uniform(),
        };
        match self {
            CompiledKernels::Distant { ang_h, ang_o, edge } => {
                let e = edge.pdf(f.d_bar).unwrap_or(0.0).max(EDGE_DENSITY_FLOOR);
                ang(ang_h, f.x_h) + ang(ang_o, f.x_o) + e.ln()
            }
            CompiledKernels::Close { ang_h, dist_h } => ang(ang_h, f.x_h) + dist_h.ln_pdf(f.d_euclid),
        }
    }
}

fn check_match(activity: &ActivityInstance, model: &ActivityModel) -> Result<(), AffordanceError> {
    if activity.proximity_class != model.proximity_class() {
        return Err(AffordanceError::ModelMismatch {
            activity: activity.activity_type,
            model: model.proximity_class(),
            instance: activity.proximity_class,
        });
    }
    Ok(())
}

/// Converts a log cost to a strictly positive linear cost.
fn positive_exp(ln: f64) -> f64 {
    ln.exp().max(f64::MIN_POSITIVE)
}

pub fn ln_activity_cost(
    waypoint: Vec2,
    activity: &ActivityInstance,
    model: &ActivityModel,
) -> Result<f64, AffordanceError> {
    check_match(activity, model)?;
    let f = waypoint_features(waypoint, activity);
    Ok(CompiledKernels::new(&model.kernels).ln_cost(&f))
}

/// Ψ_a(t | E) for one activity instance.
pub fn activity_cost(waypoint: Vec2, activity: &ActivityInstance, model: &ActivityModel) -> Result<f64, AffordanceError> {
    ln_activity_cost(waypoint, activity, model).map(positive_exp)
}

/// Per-environment priors renormalized over the activity instances present.
/// Falls back to equal weights when every prior is zero.
pub fn instance_priors(env: &Environment, params: &ModelParameters) -> Result<Vec<f64>, AffordanceError> {
    if env.activities.is_empty() {
        return Err(AffordanceError::NoActivities);
    }
    let raw = env
        .activities
        .iter()
        .map(|a| params.get(a.activity_type).map(|m| m.prior).ok_or(AffordanceError::MissingModel(a.activity_type)))
        .collect::<Result<Vec<_>, _>>()?;
    let total: f64 = raw.iter().sum();
    let n = raw.len() as f64;
    Ok(if total > 0.0 { raw.iter().map(|p| p / total).collect() } else { vec![1.0 / n; raw.len()] })
}

/// log Σ exp, stable under large magnitudes; −∞ for an empty or all −∞ input.
pub fn log_sum_exp(xs: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m.is_nan() {
        return m;
    }
    m + xs.into_iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Learned cost compiled against one environment. Cheap to evaluate many
/// times; used by the cost-map rasterizer, trajectory scoring and EM.
#[derive(Debug, Clone)]
pub struct EnvironmentCost {
    instances: Vec<ActivityInstance>,
    kernels: Vec<CompiledKernels>,
    ln_priors: Vec<f64>,
}

impl EnvironmentCost {
    pub fn new(env: &Environment, params: &ModelParameters) -> Result<Self, AffordanceError> {
        let priors = instance_priors(env, params)?;
        let mut kernels = Vec::with_capacity(env.activities.len());
        for a in &env.activities {
            let model = params.get(a.activity_type).ok_or(AffordanceError::MissingModel(a.activity_type))?;
            check_match(a, model)?;
            kernels.push(CompiledKernels::new(&model.kernels));
        }
        Ok(EnvironmentCost {
            instances: env.activities.clone(),
            kernels,
            ln_priors: priors.iter().map(|p| p.ln()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// ln Ψ_a for each instance, in environment order.
    pub fn ln_activity_costs(&self, waypoint: Vec2) -> Vec<f64> {
        self.instances
            .iter()
            .zip(&self.kernels)
            .map(|(a, k)| k.ln_cost(&waypoint_features(waypoint, a)))
            .collect()
    }

    pub fn ln_cost(&self, waypoint: Vec2) -> f64 {
        let ln = self.ln_activity_costs(waypoint);
        log_sum_exp(ln.iter().zip(&self.ln_priors).map(|(c, p)| c + p))
    }

    pub fn cost(&self, waypoint: Vec2) -> f64 {
        positive_exp(self.ln_cost(waypoint))
    }

    /// Index of the activity instance with the largest responsibility; a
    /// diagnostic for single-assignment readings of the cost.
    pub fn dominant_activity(&self, waypoint: Vec2) -> usize {
        let ln = self.ln_activity_costs(waypoint);
        ln.iter()
            .zip(&self.ln_priors)
            .map(|(c, p)| c + p)
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best })
            .0
    }

    pub fn ln_trajectory_cost(&self, waypoints: &[Vec2]) -> f64 {
        waypoints.iter().map(|&w| self.ln_cost(w)).sum()
    }

    pub fn trajectory_cost(&self, waypoints: &[Vec2]) -> f64 {
        waypoints.iter().map(|&w| self.cost(w)).product()
    }

    /// The `q` quantile of the cost over cell centres of a grid covering the
    /// free space of `env`. Returns `f64::MIN_POSITIVE` when no cell is free.
    pub fn free_space_quantile(&self, env: &Environment, q: f64, resolution: f64) -> f64 {
        let b = env.bounds;
        let nx = ((b.max.x - b.min.x) / resolution).floor().max(0.0) as usize;
        let ny = ((b.max.y - b.min.y) / resolution).floor().max(0.0) as usize;
        let mut costs: Vec<f64> = (0..nx * ny)
            .map(|i| Vec2::new(b.min.x + ((i % nx) as f64 + 0.5) * resolution, b.min.y + ((i / nx) as f64 + 0.5) * resolution))
            .filter(|&p| env.is_free(p))
            .map(|p| self.cost(p))
            .collect();
        if costs.is_empty() {
            return f64::MIN_POSITIVE;
        }
        let k = ((q.clamp(0.0, 1.0) * (costs.len() - 1) as f64).round() as usize).min(costs.len() - 1);
        let (_, v, _) = costs.select_nth_unstable_by(k, f64::total_cmp);
        *v
    }

    /// Log trajectory cost with every waypoint floored at `floor`; the score
    /// used to rank trajectories.
    pub fn ranking_cost(&self, waypoints: &[Vec2], floor: f64) -> f64 {
        waypoints.iter().map(|&w| self.cost(w).max(floor).ln()).sum()
    }

    /// Ranking floor for `env`: the [`RANKING_FLOOR_QUANTILE`] of the cost
    /// over its free space.
    pub fn ranking_floor(&self, env: &Environment) -> f64 {
        self.free_space_quantile(env, RANKING_FLOOR_QUANTILE, RANKING_GRID_RESOLUTION)
    }
}

/// Σ_{a ∈ A_E} η_a Ψ_a(t | E) with per-environment renormalized priors.
pub fn marginal_waypoint_cost(waypoint: Vec2, env: &Environment, params: &ModelParameters) -> Result<f64, AffordanceError> {
    Ok(EnvironmentCost::new(env, params)?.cost(waypoint))
}

pub fn ln_marginal_waypoint_cost(
    waypoint: Vec2,
    env: &Environment,
    params: &ModelParameters,
) -> Result<f64, AffordanceError> {
    Ok(EnvironmentCost::new(env, params)?.ln_cost(waypoint))
}

/// Product of marginal waypoint costs. Underflows for long trajectories;
/// rank with [`ln_trajectory_cost`] instead.
pub fn trajectory_cost(traj: &Trajectory, env: &Environment, params: &ModelParameters) -> Result<f64, AffordanceError> {
    Ok(EnvironmentCost::new(env, params)?.trajectory_cost(&traj.waypoints))
}

pub fn ln_trajectory_cost(traj: &Trajectory, env: &Environment, params: &ModelParameters) -> Result<f64, AffordanceError> {
    Ok(EnvironmentCost::new(env, params)?.ln_trajectory_cost(&traj.waypoints))
}

/// Object near a manipulation waypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextObject {
    pub attribute: String,
    pub position: Vec2,
    /// Object height h_obj, meters.
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManipulationScene {
    /// Scene height h_max, meters.
    pub h_max: f64,
    pub context: Vec<ContextObject>,
}

impl ManipulationScene {
    /// Context objects are the environment objects that carry an attribute.
    pub fn from_environment(env: &Environment) -> Result<Self, AffordanceError> {
        let h_max = env.scene_height.ok_or_else(|| AffordanceError::Scene("scene_height is required".into()))?;
        let mut context = Vec::new();
        for obj in &env.objects {
            let Some(attribute) = obj.attribute.clone() else { continue };
            let height = match (obj.height, attribute.as_str()) {
                (Some(h), _) => h,
                (None, HUMAN_ATTRIBUTE) => {
                    return Err(AffordanceError::Scene(format!("human `{}` needs a height", obj.id)));
                }
                (None, _) => 0.0,
            };
            context.push(ContextObject { attribute, position: obj.position, height });
        }
        Ok(ManipulationScene { h_max, context })
    }
}

/// Manipulation waypoint: planar position plus height above the floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint3 {
    pub position: Vec2,
    pub z: f64,
}

/// ln Ψ_{a_j,a_k} for one context object. The angular feature is the grabbed
/// object's planar heading in a frame whose x-axis points from the waypoint to
/// the context object, so heading straight at the object gives (1, 0).
pub fn ln_attribute_pair_cost(
    waypoint: Waypoint3,
    orientation: Vec2,
    context: &ContextObject,
    h_max: f64,
    model: &AttributePairModel,
) -> Result<f64, AffordanceError> {
    let offset = context.position - waypoint.position;
    let distance = offset.norm();
    let ln_ang = match (offset.try_normalize(FRAME_EPS), orientation.try_normalize(FRAME_EPS)) {
        (Some(axis), Some(o)) => {
            VonMisesKernel::new(&model.ang).ln_pdf(Vec2::new(o.dot(axis), o.dot(axis.perp())))
        }
        _ => VonMisesKernel::ln_uniform(),
    };
    let ln_dist = GaussianKernel::new(&model.dist).ln_pdf(distance);
    let ln_height = match &model.height {
        Some(h) => {
            let h_bar = extract_height_feature(waypoint.z, context.height, h_max)?;
            BetaKernel::new(h).pdf(h_bar)?.max(EDGE_DENSITY_FLOOR).ln()
        }
        None => 0.0,
    };
    Ok(ln_dist + ln_height + ln_ang)
}

/// Product over context objects of the attribute-pair costs; 1 for an empty scene.
pub fn manipulation_waypoint_cost(
    waypoint: Waypoint3,
    orientation: Vec2,
    grabbed: &str,
    scene: &ManipulationScene,
    params: &ModelParameters,
) -> Result<f64, AffordanceError> {
    let mut ln = 0.0;
    for c in &scene.context {
        let model = params.pair(grabbed, &c.attribute).ok_or_else(|| AffordanceError::UnknownAttribute {
            grabbed: grabbed.to_string(),
            context: c.attribute.clone(),
        })?;
        ln += ln_attribute_pair_cost(waypoint, orientation, c, scene.h_max, model)?;
    }
    Ok(positive_exp(ln))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Bounds;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn distant_uniform(ty: ActivityType, prior: f64) -> ActivityModel {
        ActivityModel { activity_type: ty, kernels: ActivityKernels::uniform(ProximityClass::Distant), prior }
    }

    fn room(activities: Vec<ActivityInstance>) -> Environment {
        Environment {
            id: "room".into(),
            bounds: Bounds::new(Vec2::new(0.0, 0.0), Vec2::new(10.0, 10.0)),
            obstacles: vec![],
            objects: vec![],
            activities,
            scene_height: None,
        }
    }

    fn watching(h: Vec2, o: Vec2) -> ActivityInstance {
        ActivityInstance::new(ActivityType::Watching, h, (o - h).try_normalize(1e-12).unwrap(), o)
    }

    #[test]
    fn uniform_distant_cost_is_product_of_uniforms() {
        let a = watching(Vec2::new(2.0, 2.0), Vec2::new(2.0, 6.0));
        let m = distant_uniform(ActivityType::Watching, 1.0);
        let c = activity_cost(Vec2::new(3.0, 4.0), &a, &m).unwrap();
        let expected = 1.0 / (2.0 * PI) / (2.0 * PI);
        assert!((c - expected).abs() < 1e-15);
    }

    #[test]
    fn close_cost_factorizes() {
        let a = ActivityInstance::new(ActivityType::Working, Vec2::new(5.0, 5.0), Vec2::X, Vec2::new(5.3, 5.0));
        let m = ActivityModel {
            activity_type: ActivityType::Working,
            kernels: ActivityKernels::Close {
                ang_h: VonMisesParams::uniform(),
                dist_h: GaussianParams { g: 0.0, sigma: 1.0 },
            },
            prior: 1.0,
        };
        let eps = 1e-3;
        let c = activity_cost(Vec2::new(5.0, 5.0 + eps), &a, &m).unwrap();
        let expected = 1.0 / (2.0 * PI) * crate::distributions::gaussian_pdf(eps, &GaussianParams { g: 0.0, sigma: 1.0 });
        assert!((c - expected).abs() < 1e-14);
        // degenerate frame: uniform angle, Gaussian at zero distance
        let c0 = activity_cost(Vec2::new(5.0, 5.0), &a, &m).unwrap();
        assert!((c0 - 1.0 / (2.0 * PI) / (2.0 * PI).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn concentrated_watching_prefers_axis() {
        let a = watching(Vec2::new(2.0, 5.0), Vec2::new(6.0, 5.0));
        let m = ActivityModel {
            activity_type: ActivityType::Watching,
            kernels: ActivityKernels::Distant {
                ang_h: VonMisesParams::new(0.0, 4.0).unwrap(),
                ang_o: VonMisesParams::uniform(),
                edge: BetaParams::uniform(),
            },
            prior: 1.0,
        };
        let on_axis = activity_cost(Vec2::new(3.0, 5.0), &a, &m).unwrap();
        let lateral = activity_cost(Vec2::new(2.0, 6.0), &a, &m).unwrap();
        assert!(on_axis > lateral);
    }

    #[test]
    fn mismatched_model_rejected() {
        let a = watching(Vec2::new(2.0, 5.0), Vec2::new(6.0, 5.0));
        let m = ActivityModel {
            activity_type: ActivityType::Watching,
            kernels: ActivityKernels::uniform(ProximityClass::CloseProximity),
            prior: 1.0,
        };
        assert!(matches!(activity_cost(Vec2::new(3.0, 5.0), &a, &m), Err(AffordanceError::ModelMismatch { .. })));
    }

    #[test]
    fn mixture_examples() {
        let env = room(vec![watching(Vec2::new(2.0, 2.0), Vec2::new(2.0, 6.0))]);
        let params = ModelParameters::new([distant_uniform(ActivityType::Watching, 0.3)]);
        let w = Vec2::new(3.0, 3.0);
        let single = marginal_waypoint_cost(w, &env, &params).unwrap();
        let psi = activity_cost(w, &env.activities[0], params.get(ActivityType::Watching).unwrap()).unwrap();
        assert!((single - psi).abs() <= 1e-15 * psi);

        let ln = [0.2f64.ln(), 0.6f64.ln()];
        let mixed = log_sum_exp(ln.iter().map(|c| c + 0.5f64.ln())).exp();
        assert!((mixed - 0.4).abs() < 1e-15);

        let empty = room(vec![]);
        assert_eq!(marginal_waypoint_cost(w, &empty, &params), Err(AffordanceError::NoActivities));
        let other = room(vec![ActivityInstance::new(ActivityType::Sitting, w, Vec2::X, w)]);
        assert_eq!(marginal_waypoint_cost(w, &other, &params), Err(AffordanceError::MissingModel(ActivityType::Sitting)));
    }

    #[test]
    fn trajectory_cost_examples() {
        let cost = |ms: &[f64]| ms.iter().product::<f64>();
        assert!((cost(&[0.2, 0.5]) - 0.1).abs() < 1e-15);
        let env = room(vec![watching(Vec2::new(2.0, 2.0), Vec2::new(2.0, 6.0))]);
        let params = ModelParameters::new([ActivityModel {
            activity_type: ActivityType::Watching,
            kernels: ActivityKernels::Distant {
                ang_h: VonMisesParams::new(PI / 2.0, 2.0).unwrap(),
                ang_o: VonMisesParams::new(-PI / 2.0, 1.0).unwrap(),
                edge: BetaParams::new(2.0, 3.0).unwrap(),
            },
            prior: 1.0,
        }]);
        let ec = EnvironmentCost::new(&env, &params).unwrap();
        let pts = [Vec2::new(2.5, 3.0), Vec2::new(1.5, 4.0), Vec2::new(4.0, 5.0)];
        let traj = Trajectory {
            id: "t".into(),
            environment_id: "room".into(),
            waypoints: pts.to_vec(),
            timestamps: vec![0.0, 1.0, 2.0],
        };
        let lin = trajectory_cost(&traj, &env, &params).unwrap();
        let expected: f64 = pts.iter().map(|&p| ec.cost(p)).product();
        assert!((lin - expected).abs() <= 1e-15 * expected);
        let ln = ln_trajectory_cost(&traj, &env, &params).unwrap();
        assert!((ln.exp() - lin).abs() <= 1e-9 * lin);
        let mut rev = traj.clone();
        rev.waypoints.reverse();
        let lin_rev = trajectory_cost(&rev, &env, &params).unwrap();
        assert!((lin_rev - lin).abs() <= 1e-12 * lin);
        let single = Trajectory { waypoints: vec![pts[0]], timestamps: vec![0.0], ..traj };
        assert!((trajectory_cost(&single, &env, &params).unwrap() - ec.cost(pts[0])).abs() < 1e-18);
    }

    #[test]
    fn six_activity_registry_has_thirty_parameters() {
        assert_eq!(ModelParameters::uniform().parameter_count(), 30);
    }

    fn knife_scene() -> (ManipulationScene, ModelParameters) {
        let scene = ManipulationScene {
            h_max: 2.0,
            context: vec![ContextObject { attribute: "human".into(), position: Vec2::new(1.0, 0.0), height: 1.0 }],
        };
        let mut params = ModelParameters::new([]);
        params.attribute_pairs.push(AttributePairModel {
            grabbed: "sharp".into(),
            context: "human".into(),
            dist: GaussianParams { g: 0.0, sigma: 1.0 },
            ang: VonMisesParams::uniform(),
            height: Some(BetaParams::uniform()),
            prior: 1.0,
        });
        (scene, params)
    }

    #[test]
    fn manipulation_examples() {
        let (scene, mut params) = knife_scene();
        let w = Waypoint3 { position: Vec2::ZERO, z: 0.5 };
        let empty = ManipulationScene { h_max: 2.0, context: vec![] };
        assert_eq!(manipulation_waypoint_cost(w, Vec2::X, "sharp", &empty, &params).unwrap(), 1.0);

        let c = manipulation_waypoint_cost(w, Vec2::X, "sharp", &scene, &params).unwrap();
        let g = crate::distributions::gaussian_pdf(1.0, &GaussianParams { g: 0.0, sigma: 1.0 });
        assert!((c - g / (2.0 * PI)).abs() < 1e-15);

        params.attribute_pairs[0].ang = VonMisesParams::new(0.0, 5.0).unwrap();
        let at = manipulation_waypoint_cost(w, Vec2::X, "sharp", &scene, &params).unwrap();
        let away = manipulation_waypoint_cost(w, -Vec2::X, "sharp", &scene, &params).unwrap();
        assert!(at > away);

        assert!(matches!(
            manipulation_waypoint_cost(w, Vec2::X, "fragile", &scene, &params),
            Err(AffordanceError::UnknownAttribute { .. })
        ));
    }

    #[test]
    fn pair_height_invariant() {
        let (_, params) = knife_scene();
        let mut p = params.attribute_pairs[0].clone();
        assert!(p.validate().is_ok());
        p.height = None;
        assert!(p.validate().is_err());
        p.context = "fragile".into();
        assert!(p.validate().is_ok());
    }

    fn arb_model(ty: ActivityType) -> impl Strategy<Value = ActivityModel> {
        let class = ty.default_proximity();
        (-3.0..3.0f64, 0.0..10.0f64, -3.0..3.0f64, 0.0..10.0f64, 0.5..6.0f64, 0.5..6.0f64, 0.05..1.0f64).prop_map(
            move |(m1, k1, m2, k2, a, b, prior)| {
                let kernels = match class {
                    ProximityClass::Distant => ActivityKernels::Distant {
                        ang_h: VonMisesParams::new(m1, k1).unwrap(),
                        ang_o: VonMisesParams::new(m2, k2).unwrap(),
                        edge: BetaParams::new(a, b).unwrap(),
                    },
                    ProximityClass::CloseProximity => ActivityKernels::Close {
                        ang_h: VonMisesParams::new(m1, k1).unwrap(),
                        dist_h: GaussianParams::new(a * 0.3, b * 0.05).unwrap(),
                    },
                };
                ActivityModel { activity_type: ty, kernels, prior }
            },
        )
    }

    proptest! {
        #[test]
        fn costs_positive_and_mixture_bounded(
            watch in arb_model(ActivityType::Watching),
            work in arb_model(ActivityType::Working),
            wx in 0.0..10.0f64, wy in 0.0..10.0f64,
        ) {
            let env = room(vec![
                watching(Vec2::new(2.0, 2.0), Vec2::new(7.0, 6.0)),
                ActivityInstance::new(ActivityType::Working, Vec2::new(8.0, 2.0), Vec2::X, Vec2::new(8.4, 2.0)),
            ]);
            let params = ModelParameters::new([watch, work]);
            let w = Vec2::new(wx, wy);
            let m = marginal_waypoint_cost(w, &env, &params).unwrap();
            prop_assert!(m > 0.0 && m.is_finite());
            let each: Vec<f64> = env.activities.iter()
                .map(|a| activity_cost(w, a, params.get(a.activity_type).unwrap()).unwrap())
                .collect();
            let lo = each.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = each.iter().cloned().fold(0.0, f64::max);
            prop_assert!(m >= lo * (1.0 - 1e-12) && m <= hi * (1.0 + 1e-12));
        }

        #[test]
        fn prior_scaling_keeps_ranking(
            watch in arb_model(ActivityType::Watching),
            work in arb_model(ActivityType::Working),
            scale in 0.01..0.99f64,
            pts in proptest::collection::vec((0.0..10.0f64, 0.0..10.0f64), 2..6),
        ) {
            let env = room(vec![
                watching(Vec2::new(2.0, 2.0), Vec2::new(7.0, 6.0)),
                ActivityInstance::new(ActivityType::Working, Vec2::new(8.0, 2.0), Vec2::X, Vec2::new(8.4, 2.0)),
            ]);
            let params = ModelParameters::new([watch, work]);
            let mut scaled = params.clone();
            for m in scaled.registry.values_mut() { m.prior *= scale; }
            let a = EnvironmentCost::new(&env, &params).unwrap();
            let b = EnvironmentCost::new(&env, &scaled).unwrap();
            let ca: Vec<f64> = pts.iter().map(|&(x, y)| a.ln_cost(Vec2::new(x, y))).collect();
            let cb: Vec<f64> = pts.iter().map(|&(x, y)| b.ln_cost(Vec2::new(x, y))).collect();
            for i in 0..ca.len() {
                for j in 0..ca.len() {
                    if (ca[i] - ca[j]).abs() > 1e-9 {
                        prop_assert_eq!(ca[i] < ca[j], cb[i] < cb[j]);
                    }
                }
            }
        }
    }
}
