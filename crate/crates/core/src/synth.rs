//! Synthetic environments, waypoint generators and a simulated annotator.
//!
//! The annotator labels intervals of random trajectories by how high the true
//! cost gets inside them, relative to the distribution of the true cost over
//! the environment's map.

use crate::affordance::{ActivityKernels, ActivityModel, AffordanceError, EnvironmentCost, ModelParameters};
use crate::costmap::rasterize;
use crate::distributions::{BetaParams, GaussianParams, VonMisesParams};
use crate::env::{ActivityInstance, ActivityType, Environment, Label, LabeledSegment, ProximityClass, SceneObject, Trajectory};
use crate::geometry::{Bounds, Vec2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use std::f64::consts::{FRAC_PI_2, PI};

/// Largest human-frame angle sampled for distant activities; the waypoint
/// must lie in front of the human to have a positive projection.
pub const MAX_DISTANT_ANGLE: f64 = FRAC_PI_2 - 0.05;

/// Fixed ground-truth parameters for all six built-in activity types.
pub fn reference_parameters() -> ModelParameters {
    let vm = |mu: f64, kappa: f64| VonMisesParams::new(mu, kappa).expect("valid reference parameters");
    let distant = |ty, h: (f64, f64), o: (f64, f64), e: (f64, f64), prior| ActivityModel {
        activity_type: ty,
        kernels: ActivityKernels::Distant {
            ang_h: vm(h.0, h.1),
            ang_o: vm(o.0, o.1),
            edge: BetaParams { alpha: e.0, beta: e.1 },
        },
        prior,
    };
    let close = |ty, h: (f64, f64), g: f64, sigma: f64, prior| ActivityModel {
        activity_type: ty,
        kernels: ActivityKernels::Close { ang_h: vm(h.0, h.1), dist_h: GaussianParams { g, sigma } },
        prior,
    };
    ModelParameters::new([
        distant(ActivityType::Walking, (0.0, 3.0), (0.0, 2.0), (1.5, 3.0), 0.12),
        distant(ActivityType::Watching, (0.0, 5.0), (0.0, 5.0), (3.0, 3.0), 0.24),
        distant(ActivityType::Interacting, (0.0, 6.0), (0.0, 6.0), (2.5, 2.5), 0.20),
        close(ActivityType::Reaching, (0.0, 2.0), 0.5, 0.03, 0.12),
        close(ActivityType::Sitting, (PI, 1.5), 0.6, 0.05, 0.14),
        close(ActivityType::Working, (PI, 2.5), 0.5, 0.04, 0.18),
    ])
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentConfig {
    pub width: (f64, f64),
    pub height: (f64, f64),
    pub activities: (usize, usize),
    /// Objects unrelated to any activity.
    pub distractors: (usize, usize),
    /// Human–object separation of distant activities, meters.
    pub distant_separation: (f64, f64),
    /// Human–object separation of close activities, meters.
    pub close_separation: (f64, f64),
    /// Minimum distance between any two humans, meters.
    pub human_spacing: f64,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        EnvironmentConfig {
            width: (8.0, 12.0),
            height: (6.0, 9.0),
            activities: (2, 4),
            distractors: (6, 10),
            distant_separation: (2.0, 4.0),
            close_separation: (0.3, 0.6),
            human_spacing: 2.0,
        }
    }
}

fn uniform_in(rng: &mut impl Rng, b: &Bounds, margin: f64) -> Vec2 {
    Vec2::new(rng.random_range(b.min.x + margin..b.max.x - margin), rng.random_range(b.min.y + margin..b.max.y - margin))
}

/// Random room with distinct activity types, their objects and distractors.
pub fn random_environment(id: &str, cfg: &EnvironmentConfig, rng: &mut impl Rng) -> Environment {
    let bounds = Bounds::new(Vec2::ZERO, Vec2::new(rng.random_range(cfg.width.0..=cfg.width.1), rng.random_range(cfg.height.0..=cfg.height.1)));
    let inner = Bounds::new(bounds.min + Vec2::new(0.3, 0.3), bounds.max - Vec2::new(0.3, 0.3));
    let n = rng.random_range(cfg.activities.0..=cfg.activities.1).min(ActivityType::ALL.len());
    let mut types = ActivityType::ALL.to_vec();
    types.shuffle(rng);
    types.truncate(n);
    types.sort();
    let mut activities: Vec<ActivityInstance> = Vec::new();
    let mut objects = Vec::new();
    for (k, ty) in types.into_iter().enumerate() {
        let range = match ty.default_proximity() {
            ProximityClass::Distant => cfg.distant_separation,
            ProximityClass::CloseProximity => cfg.close_separation,
        };
        let mut placed = None;
        for _ in 0..1000 {
            let human = uniform_in(rng, &bounds, 1.0);
            let dir = Vec2::from_angle(rng.random_range(-PI..PI));
            let object = human + dir * rng.random_range(range.0..=range.1);
            let spaced = activities.iter().all(|a| a.human_position.distance(human) >= cfg.human_spacing);
            if inner.contains(object) && spaced {
                placed = Some((human, dir, object));
                break;
            }
        }
        let Some((human, dir, object)) = placed else { continue };
        let object_id = format!("{}-{k}", ty.as_str());
        objects.push(SceneObject { id: object_id.clone(), position: object, height: None, attribute: None });
        activities.push(ActivityInstance { object_id: Some(object_id), ..ActivityInstance::new(ty, human, dir, object) });
    }
    for k in 0..rng.random_range(cfg.distractors.0..=cfg.distractors.1) {
        objects.push(SceneObject { id: format!("furniture-{k}"), position: uniform_in(rng, &bounds, 0.3), height: None, attribute: None });
    }
    Environment { id: id.to_string(), bounds, obstacles: vec![], objects, activities, scene_height: None }
}

/// Draws one waypoint from an activity's kernels. Close activities: angle
/// from the human-frame von-Mises and distance from the Gaussian. Distant
/// activities: normalized projection from the Beta and human-frame angle from
/// the von-Mises (truncated to [`MAX_DISTANT_ANGLE`]); the object-frame angle
/// is then implied by the geometry rather than drawn.
pub fn sample_activity_waypoint(activity: &ActivityInstance, kernels: &ActivityKernels, rng: &mut impl Rng) -> Vec2 {
    let frame = activity.human_frame();
    let to_world = |local: Vec2| frame.origin + frame.x_axis * local.x + frame.x_axis.perp() * local.y;
    match kernels {
        ActivityKernels::Close { ang_h, dist_h } => {
            let normal = Normal::new(dist_h.g, dist_h.sigma.sqrt()).expect("valid Gaussian");
            let r = loop {
                let r: f64 = normal.sample(rng);
                if r > 0.0 {
                    break r;
                }
            };
            to_world(ang_h.sample(rng) * r)
        }
        ActivityKernels::Distant { ang_h, edge, .. } => {
            let theta = loop {
                let t = ang_h.sample(rng).angle();
                if t.abs() < MAX_DISTANT_ANGLE {
                    break t;
                }
            };
            let d_bar: f64 = Beta::new(edge.alpha, edge.beta).expect("valid Beta").sample(rng);
            let u = d_bar * activity.separation();
            to_world(Vec2::new(u, u * theta.tan()))
        }
    }
}

/// Bad waypoints from the generative process: an instance by renormalized
/// prior, then a waypoint from its kernels.
pub fn generate_bad_waypoints(
    env: &Environment,
    params: &ModelParameters,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Vec2>, AffordanceError> {
    let priors = crate::affordance::instance_priors(env, params)?;
    let models = env
        .activities
        .iter()
        .map(|a| params.get(a.activity_type).ok_or(AffordanceError::MissingModel(a.activity_type)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut u: f64 = rng.random();
        let mut pick = priors.len() - 1;
        for (i, p) in priors.iter().enumerate() {
            if u < *p {
                pick = i;
                break;
            }
            u -= p;
        }
        out.push(sample_activity_waypoint(&env.activities[pick], &models[pick].kernels, rng));
    }
    Ok(out)
}

/// How the simulated annotator splits a trajectory into labeled intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Segmentation {
    /// This many equal intervals, each labeled by the peak cost inside it.
    Fixed(usize),
    /// Maximal runs of waypoints whose cost falls in the same label band,
    /// as an annotator painting the time bar would mark them.
    CostRuns,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackConfig {
    pub trajectories: usize,
    /// Duration of every trajectory, seconds.
    pub duration: f64,
    /// Time between trajectory waypoints, seconds.
    pub waypoint_dt: f64,
    pub segmentation: Segmentation,
    /// Number of straight legs of the polyline.
    pub legs: (usize, usize),
    /// Length of each leg, meters.
    pub leg_length: (f64, f64),
    /// Segments whose peak cost lies at or above this map quantile are bad.
    pub q_bad: f64,
    /// Segments whose peak cost lies below this map quantile are good.
    pub q_good: f64,
    /// Probability of replacing a label with a different one at random.
    pub p_noise: f64,
    pub map_resolution: f64,
    pub annotator_id: String,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        FeedbackConfig {
            trajectories: 20,
            duration: 10.0,
            waypoint_dt: 0.1,
            segmentation: Segmentation::CostRuns,
            legs: (1, 3),
            leg_length: (1.5, 4.0),
            q_bad: 0.9,
            q_good: 0.5,
            p_noise: 0.1,
            map_resolution: 0.1,
            annotator_id: "synthetic".into(),
        }
    }
}

/// Random polyline inside the room traversed at constant speed, sampled
/// every `dt` seconds for `duration` seconds.
pub fn random_trajectory(env: &Environment, id: String, cfg: &FeedbackConfig, rng: &mut impl Rng) -> Trajectory {
    let legs = rng.random_range(cfg.legs.0..=cfg.legs.1);
    let inner = Bounds::new(env.bounds.min + Vec2::new(0.3, 0.3), env.bounds.max - Vec2::new(0.3, 0.3));
    let mut corners = vec![uniform_in(rng, &env.bounds, 0.3)];
    while corners.len() < legs + 1 {
        let from = *corners.last().unwrap();
        let next = (0..100)
            .map(|_| from + Vec2::from_angle(rng.random_range(-PI..PI)) * rng.random_range(cfg.leg_length.0..=cfg.leg_length.1))
            .find(|p| inner.contains(*p))
            .unwrap_or_else(|| uniform_in(rng, &env.bounds, 0.3));
        corners.push(next);
    }
    let mut cumulative = vec![0.0];
    for w in corners.windows(2) {
        cumulative.push(cumulative.last().unwrap() + w[0].distance(w[1]));
    }
    let total = *cumulative.last().unwrap();
    let steps = (cfg.duration / cfg.waypoint_dt).round() as usize;
    let mut waypoints = Vec::with_capacity(steps + 1);
    let mut timestamps = Vec::with_capacity(steps + 1);
    let mut seg = 0;
    for i in 0..=steps {
        let t = cfg.duration * i as f64 / steps as f64;
        let s = total * i as f64 / steps as f64;
        while seg + 2 < cumulative.len() && s > cumulative[seg + 1] {
            seg += 1;
        }
        let len = cumulative[seg + 1] - cumulative[seg];
        let f = if len > 0.0 { ((s - cumulative[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
        waypoints.push(corners[seg].lerp(corners[seg + 1], f));
        timestamps.push(t);
    }
    Trajectory { id, environment_id: env.id.clone(), waypoints, timestamps }
}

/// Position of `v` in the sorted sample `sorted`, with ties split uniformly
/// at random so that a constant map yields uniform positions.
fn randomized_cdf(sorted: &[f64], v: f64, u: f64) -> f64 {
    let below = sorted.partition_point(|&x| x < v);
    let not_above = sorted.partition_point(|&x| x <= v);
    (below as f64 + u * (not_above - below) as f64) / sorted.len() as f64
}

fn noisy(label: Label, p_noise: f64, rng: &mut impl Rng) -> Label {
    if rng.random::<f64>() >= p_noise {
        return label;
    }
    let others: Vec<Label> = [Label::Bad, Label::Neutral, Label::Good].into_iter().filter(|&l| l != label).collect();
    others[rng.random_range(0..others.len())]
}

/// Random trajectories in `env` with one label per segment.
pub fn synthesize_feedback(
    env: &Environment,
    true_params: &ModelParameters,
    cfg: &FeedbackConfig,
    seed: u64,
) -> Result<(Vec<Trajectory>, Vec<LabeledSegment>), AffordanceError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let map = rasterize(env, true_params, cfg.map_resolution).map_err(|e| match e {
        crate::costmap::CostMapError::Cost(c) => c,
        other => AffordanceError::Scene(other.to_string()),
    })?;
    let mut sorted: Vec<f64> =
        map.values.iter().zip(&map.obstacles).filter(|(_, &b)| !b).map(|(&v, _)| v).collect();
    sorted.sort_by(f64::total_cmp);
    let cost = EnvironmentCost::new(env, true_params)?;
    let mut trajectories = Vec::with_capacity(cfg.trajectories);
    let mut labels = Vec::new();
    let band = |q: f64| {
        if q >= cfg.q_bad {
            Label::Bad
        } else if q < cfg.q_good {
            Label::Good
        } else {
            Label::Neutral
        }
    };
    for k in 0..cfg.trajectories {
        let traj = random_trajectory(env, format!("{}-t{k:03}", env.id), cfg, &mut rng);
        let costs: Vec<f64> = traj.waypoints.iter().map(|&w| cost.cost(w)).collect();
        let mut push = |interval: [f64; 2], label: Label, rng: &mut ChaCha8Rng| {
            labels.push(LabeledSegment {
                trajectory_id: traj.id.clone(),
                interval,
                label: noisy(label, cfg.p_noise, rng),
                annotator_id: cfg.annotator_id.clone(),
            });
        };
        match cfg.segmentation {
            Segmentation::Fixed(n) => {
                for s in 0..n {
                    let start = cfg.duration * s as f64 / n as f64;
                    let end = cfg.duration * (s + 1) as f64 / n as f64;
                    let peak = traj
                        .timestamps
                        .iter()
                        .zip(&costs)
                        .filter(|(&t, _)| t >= start && t <= end)
                        .map(|(_, &c)| c)
                        .fold(0.0, f64::max);
                    let label = band(randomized_cdf(&sorted, peak, rng.random()));
                    push([start, end], label, &mut rng);
                }
            }
            Segmentation::CostRuns => {
                let bands: Vec<Label> = costs.iter().map(|&c| band(randomized_cdf(&sorted, c, rng.random()))).collect();
                let ts = &traj.timestamps;
                let last = ts.len() - 1;
                let mut i = 0;
                while i <= last {
                    let mut j = i;
                    while j < last && bands[j + 1] == bands[i] {
                        j += 1;
                    }
                    // Run boundaries sit halfway between waypoints.
                    let start = if i == 0 { ts[0] } else { 0.5 * (ts[i - 1] + ts[i]) };
                    let end = if j == last { ts[last] } else { 0.5 * (ts[j] + ts[j + 1]) };
                    if end > start {
                        push([start, end], bands[i], &mut rng);
                    }
                    i = j + 1;
                }
            }
        }
        trajectories.push(traj);
    }
    Ok((trajectories, labels))
}

/// A batch of synthetic environments with their simulated feedback.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SyntheticSuite {
    pub environments: Vec<Environment>,
    pub trajectories: Vec<Trajectory>,
    pub labels: Vec<LabeledSegment>,
}

impl SyntheticSuite {
    /// Environments are named `{prefix}{index:03}`. Each environment draws
    /// from its own stream of the seed, so suites are reproducible and a
    /// prefix of a larger suite equals the smaller suite.
    pub fn generate(
        n_envs: usize,
        prefix: &str,
        seed: u64,
        true_params: &ModelParameters,
        env_cfg: &EnvironmentConfig,
        feedback: &FeedbackConfig,
    ) -> Result<Self, AffordanceError> {
        let mut suite = SyntheticSuite::default();
        for i in 0..n_envs {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let env = random_environment(&format!("{prefix}{i:03}"), env_cfg, &mut rng);
            let (t, l) = synthesize_feedback(&env, true_params, feedback, rng.random())?;
            suite.environments.push(env);
            suite.trajectories.extend(t);
            suite.labels.extend(l);
        }
        Ok(suite)
    }
}
