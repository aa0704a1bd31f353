//! Expectation-maximization over the latent activity that explains each
//! bad-labeled waypoint.

use crate::affordance::{log_sum_exp, ActivityKernels, ActivityModel, CompiledKernels, ModelParameters};
use crate::distributions::{
    fit_beta_weighted, fit_gaussian_weighted, fit_vonmises_weighted, BetaParams, FitError, FitWarning,
    GaussianParams, VonMisesParams, WeightedSample,
};
use crate::env::{
    waypoint_features, ActivityType, Environment, Label, LabeledSegment, ProximityClass, Trajectory, WaypointFeatures,
};
use crate::geometry::Vec2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use thiserror::Error;

/// Time between sampled waypoints of a labeled segment, seconds.
pub const SAMPLE_STRIDE: f64 = 0.25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmError {
    #[error("empty training set: no bad-labeled waypoints")]
    EmptyTrainingSet,
    #[error("environment `{0}` has bad-labeled waypoints but no activities")]
    NoActivities(String),
    #[error("label references unknown trajectory `{0}`")]
    UnknownTrajectory(String),
    #[error("trajectory references unknown environment `{0}`")]
    UnknownEnvironment(String),
    #[error("activity `{0}` appears with both proximity classes")]
    ProximityConflict(ActivityType),
    #[error("no model for activity `{0}`")]
    MissingModel(ActivityType),
    #[error("model for `{0}` does not match the instance proximity class")]
    ModelMismatch(ActivityType),
    #[error("every component density underflowed for a waypoint in environment `{0}`")]
    AllZeroDensity(String),
}

/// Bad-labeled waypoints of one environment.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingEnvironment {
    pub environment: Environment,
    /// Sampled waypoints, one vector per segment.
    pub segments: Vec<Vec<Vec2>>,
}

impl TrainingEnvironment {
    pub fn waypoint_count(&self) -> usize {
        self.segments.iter().map(Vec::len).sum()
    }

    fn waypoints(&self) -> impl Iterator<Item = Vec2> + '_ {
        self.segments.iter().flatten().copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub environments: Vec<TrainingEnvironment>,
    /// Sampling stride used to turn segments into waypoints, seconds.
    pub stride: f64,
}

/// Times at which a segment is sampled: k = ⌈duration / stride⌉ points, at the
/// midpoints of k equal sub-intervals (one point for a zero-length segment).
pub fn segment_sample_times(start: f64, end: f64, stride: f64) -> Vec<f64> {
    let dur = end - start;
    let k = ((dur / stride).ceil() as usize).max(1);
    (0..k).map(|i| start + (i as f64 + 0.5) * dur / k as f64).collect()
}

impl TrainingSet {
    /// Gathers the bad segments; good and neutral labels are ignored.
    /// Environments keep the order of `environments`.
    pub fn from_labels(
        environments: &[Environment],
        trajectories: &[Trajectory],
        labels: &[LabeledSegment],
    ) -> Result<Self, EmError> {
        let trajs: HashMap<&str, &Trajectory> = trajectories.iter().map(|t| (t.id.as_str(), t)).collect();
        let env_index: HashMap<&str, usize> =
            environments.iter().enumerate().map(|(i, e)| (e.id.as_str(), i)).collect();
        let mut segments: Vec<Vec<Vec<Vec2>>> = vec![Vec::new(); environments.len()];
        for l in labels.iter().filter(|l| l.label == Label::Bad) {
            let t = trajs.get(l.trajectory_id.as_str()).ok_or_else(|| EmError::UnknownTrajectory(l.trajectory_id.clone()))?;
            let &ei = env_index
                .get(t.environment_id.as_str())
                .ok_or_else(|| EmError::UnknownEnvironment(t.environment_id.clone()))?;
            let pts = segment_sample_times(l.start_time(), l.end_time(), SAMPLE_STRIDE)
                .into_iter()
                .map(|s| t.position_at(s))
                .collect();
            segments[ei].push(pts);
        }
        let environments = environments
            .iter()
            .zip(segments)
            .filter(|(_, s)| !s.is_empty())
            .map(|(e, s)| TrainingEnvironment { environment: e.clone(), segments: s })
            .collect();
        Ok(TrainingSet { environments, stride: SAMPLE_STRIDE })
    }

    pub fn from_waypoints(groups: Vec<(Environment, Vec<Vec2>)>) -> Self {
        TrainingSet {
            environments: groups
                .into_iter()
                .map(|(environment, w)| TrainingEnvironment { environment, segments: vec![w] })
                .collect(),
            stride: SAMPLE_STRIDE,
        }
    }

    pub fn waypoint_count(&self) -> usize {
        self.environments.iter().map(TrainingEnvironment::waypoint_count).sum()
    }

    /// Proximity class of each activity type seen in training.
    pub fn activity_classes(&self) -> Result<BTreeMap<ActivityType, ProximityClass>, EmError> {
        let mut out = BTreeMap::new();
        for a in self.environments.iter().flat_map(|e| &e.environment.activities) {
            match out.insert(a.activity_type, a.proximity_class) {
                Some(c) if c != a.proximity_class => return Err(EmError::ProximityConflict(a.activity_type)),
                _ => {}
            }
        }
        Ok(out)
    }
}

/// Features of every (waypoint, instance) pair, computed once per fit.
struct EnvFeatures {
    id: String,
    types: Vec<ActivityType>,
    /// Row-major: waypoint × instance.
    features: Vec<WaypointFeatures>,
    n: usize,
}

impl EnvFeatures {
    fn row(&self, i: usize) -> &[WaypointFeatures] {
        let m = self.types.len();
        &self.features[i * m..(i + 1) * m]
    }
}

struct FeatureTable {
    envs: Vec<EnvFeatures>,
    total: usize,
}

impl FeatureTable {
    fn new(set: &TrainingSet) -> Result<Self, EmError> {
        let envs = set
            .environments
            .par_iter()
            .map(|te| {
                let env = &te.environment;
                if env.activities.is_empty() {
                    return Err(EmError::NoActivities(env.id.clone()));
                }
                let mut features = Vec::with_capacity(te.waypoint_count() * env.activities.len());
                for w in te.waypoints() {
                    features.extend(env.activities.iter().map(|a| waypoint_features(w, a)));
                }
                Ok(EnvFeatures {
                    id: env.id.clone(),
                    types: env.activities.iter().map(|a| a.activity_type).collect(),
                    features,
                    n: te.waypoint_count(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let total = envs.iter().map(|e| e.n).sum();
        Ok(FeatureTable { envs, total })
    }
}

/// Posterior p(z_a | t, E; Θ) per waypoint, over the instances of its environment.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponsibilityTable {
    /// Per training environment: row-major waypoint × instance.
    pub environments: Vec<Vec<f64>>,
    pub instance_counts: Vec<usize>,
}

impl ResponsibilityTable {
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.environments.iter().zip(&self.instance_counts).flat_map(|(r, &m)| r.chunks(m))
    }
}

struct Compiled {
    kernels: BTreeMap<ActivityType, CompiledKernels>,
    ln_priors: Vec<Vec<f64>>,
}

impl Compiled {
    fn new(params: &ModelParameters, set: &TrainingSet) -> Result<Self, EmError> {
        let mut kernels = BTreeMap::new();
        let mut ln_priors = Vec::with_capacity(set.environments.len());
        for te in &set.environments {
            let mut raw = Vec::with_capacity(te.environment.activities.len());
            for a in &te.environment.activities {
                let m = params.get(a.activity_type).ok_or(EmError::MissingModel(a.activity_type))?;
                if m.proximity_class() != a.proximity_class {
                    return Err(EmError::ModelMismatch(a.activity_type));
                }
                kernels.entry(a.activity_type).or_insert_with(|| CompiledKernels::new(&m.kernels));
                raw.push(m.prior);
            }
            let z: f64 = raw.iter().sum();
            let n = raw.len() as f64;
            ln_priors.push(if z > 0.0 { raw.iter().map(|p| (p / z).ln()).collect() } else { vec![-n.ln(); raw.len()] });
        }
        Ok(Compiled { kernels, ln_priors })
    }

    /// Joint log terms ln η Ψ for one waypoint row.
    fn joint(&self, env: &EnvFeatures, e: usize, i: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            env.row(i)
                .iter()
                .zip(&env.types)
                .zip(&self.ln_priors[e])
                .map(|((f, ty), lp)| lp + self.kernels[ty].ln_cost(f)),
        );
    }
}

/// Returns the responsibilities and the total log-likelihood in one pass.
fn e_step_table(params: &ModelParameters, set: &TrainingSet, table: &FeatureTable) -> Result<(ResponsibilityTable, f64), EmError> {
    let compiled = Compiled::new(params, set)?;
    let per_env = table
        .envs
        .par_iter()
        .enumerate()
        .map(|(e, env)| {
            let m = env.types.len();
            let mut resp = Vec::with_capacity(env.n * m);
            let mut joint = Vec::with_capacity(m);
            let mut ll = 0.0;
            for i in 0..env.n {
                compiled.joint(env, e, i, &mut joint);
                let lse = log_sum_exp(joint.iter().copied());
                if !lse.is_finite() {
                    return Err(EmError::AllZeroDensity(env.id.clone()));
                }
                ll += lse;
                resp.extend(joint.iter().map(|j| (j - lse).exp()));
            }
            Ok((resp, ll))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut ll = 0.0;
    let mut environments = Vec::with_capacity(per_env.len());
    for (r, l) in per_env {
        ll += l;
        environments.push(r);
    }
    let instance_counts = table.envs.iter().map(|e| e.types.len()).collect();
    Ok((ResponsibilityTable { environments, instance_counts }, ll))
}

pub fn e_step(params: &ModelParameters, set: &TrainingSet) -> Result<ResponsibilityTable, EmError> {
    let table = FeatureTable::new(set)?;
    e_step_table(params, set, &table).map(|(r, _)| r)
}

/// Σ over waypoints of ln Σ_a η_a Ψ_a.
pub fn log_likelihood(params: &ModelParameters, set: &TrainingSet) -> Result<f64, EmError> {
    let table = FeatureTable::new(set)?;
    e_step_table(params, set, &table).map(|(_, ll)| ll)
}

pub fn average_log_likelihood(params: &ModelParameters, set: &TrainingSet) -> Result<f64, EmError> {
    let n = set.waypoint_count();
    if n == 0 {
        return Err(EmError::EmptyTrainingSet);
    }
    Ok(log_likelihood(params, set)? / n as f64)
}

/// Which M-step updates run. Freezing κ and the Beta kernel leaves only exact
/// maximizers, under which the log-likelihood cannot decrease.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreezeMask {
    pub vonmises_mu: bool,
    pub vonmises_kappa: bool,
    pub beta: bool,
    pub gaussian: bool,
    pub prior: bool,
}

impl FreezeMask {
    pub const NONE: FreezeMask =
        FreezeMask { vonmises_mu: false, vonmises_kappa: false, beta: false, gaussian: false, prior: false };
    pub const EXACT_SUBSET: FreezeMask = FreezeMask { vonmises_kappa: true, beta: true, ..FreezeMask::NONE };
}

impl Default for FreezeMask {
    fn default() -> Self {
        FreezeMask::NONE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    AngHuman,
    AngObject,
    Edge,
    DistHuman,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FitIssue {
    /// Estimator failed; the previous parameters were kept.
    Fallback { error: String },
    Warning { warning: FitWarning },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmWarning {
    pub iteration: usize,
    pub activity: ActivityType,
    pub kernel: Kernel,
    pub issue: FitIssue,
}

#[derive(Debug, Clone, PartialEq)]
struct Pooled {
    x_h: Vec<WeightedSample<Vec2>>,
    x_o: Vec<WeightedSample<Vec2>>,
    d_bar: Vec<WeightedSample<f64>>,
    d_euclid: Vec<WeightedSample<f64>>,
    weight: f64,
}

impl Pooled {
    fn new() -> Self {
        Pooled { x_h: Vec::new(), x_o: Vec::new(), d_bar: Vec::new(), d_euclid: Vec::new(), weight: 0.0 }
    }
}

fn pool(table: &FeatureTable, resp: &ResponsibilityTable) -> BTreeMap<ActivityType, Pooled> {
    let mut pools: BTreeMap<ActivityType, Pooled> = BTreeMap::new();
    for (env, r) in table.envs.iter().zip(&resp.environments) {
        let m = env.types.len();
        for i in 0..env.n {
            for (j, (f, ty)) in env.row(i).iter().zip(&env.types).enumerate() {
                let w = r[i * m + j];
                let p = pools.entry(*ty).or_insert_with(Pooled::new);
                p.weight += w;
                if let Some(x) = f.x_h {
                    p.x_h.push(WeightedSample::new(x, w));
                }
                if let Some(x) = f.x_o {
                    p.x_o.push(WeightedSample::new(x, w));
                }
                p.d_bar.push(WeightedSample::new(f.d_bar, w));
                p.d_euclid.push(WeightedSample::new(f.d_euclid, w));
            }
        }
    }
    pools
}

struct Issues<'a> {
    iteration: usize,
    activity: ActivityType,
    out: &'a mut Vec<EmWarning>,
}

impl Issues<'_> {
    fn push(&mut self, kernel: Kernel, issue: FitIssue) {
        self.out.push(EmWarning { iteration: self.iteration, activity: self.activity, kernel, issue });
    }
}

fn update_vonmises(
    prev: VonMisesParams,
    samples: &[WeightedSample<Vec2>],
    freeze: &FreezeMask,
    kernel: Kernel,
    issues: &mut Issues,
) -> VonMisesParams {
    if freeze.vonmises_mu && freeze.vonmises_kappa {
        return prev;
    }
    match fit_vonmises_weighted(samples) {
        Ok(fit) => {
            if let Some(w) = fit.warning {
                issues.push(kernel, FitIssue::Warning { warning: w });
            }
            if fit.warning == Some(FitWarning::DegenerateFit) {
                // Any mean direction is optimal; keep the previous one.
                let kappa = if freeze.vonmises_kappa { prev.kappa } else { fit.params.kappa };
                return VonMisesParams { mu: prev.mu, kappa };
            }
            VonMisesParams {
                mu: if freeze.vonmises_mu { prev.mu } else { fit.params.mu },
                kappa: if freeze.vonmises_kappa { prev.kappa } else { fit.params.kappa },
            }
        }
        Err(e) => {
            issues.push(kernel, FitIssue::Fallback { error: e.to_string() });
            prev
        }
    }
}

fn update_beta(prev: BetaParams, samples: &[WeightedSample<f64>], freeze: &FreezeMask, issues: &mut Issues) -> BetaParams {
    if freeze.beta {
        return prev;
    }
    fit_beta_weighted(samples).unwrap_or_else(|e: FitError| {
        issues.push(Kernel::Edge, FitIssue::Fallback { error: e.to_string() });
        prev
    })
}

fn update_gaussian(
    prev: GaussianParams,
    samples: &[WeightedSample<f64>],
    freeze: &FreezeMask,
    issues: &mut Issues,
) -> GaussianParams {
    if freeze.gaussian {
        return prev;
    }
    fit_gaussian_weighted(samples).unwrap_or_else(|e| {
        issues.push(Kernel::DistHuman, FitIssue::Fallback { error: e.to_string() });
        prev
    })
}

/// Prior update maximizing the expected complete-data log-likelihood with
/// per-environment renormalization, one minorize-maximize step from the
/// current priors: η_a ← R_a / Σ_E N_E c_{E,a} / Z_E. With one instance of
/// every type in every environment this is the posterior average.
fn update_priors(params: &mut ModelParameters, table: &FeatureTable, pools: &BTreeMap<ActivityType, Pooled>) {
    let mut denom: BTreeMap<ActivityType, f64> = BTreeMap::new();
    for env in &table.envs {
        let z: f64 = env.types.iter().map(|t| params.registry[t].prior).sum();
        if z <= 0.0 {
            continue;
        }
        for t in &env.types {
            *denom.entry(*t).or_insert(0.0) += env.n as f64 / z;
        }
    }
    for (t, p) in pools {
        if let Some(&d) = denom.get(t) {
            if d > 0.0 {
                params.registry.get_mut(t).expect("pooled type has a model").prior = p.weight / d;
            }
        }
    }
    let total: f64 = params.registry.values().map(|m| m.prior).sum();
    if total > 0.0 {
        for m in params.registry.values_mut() {
            m.prior /= total;
        }
    }
}

fn m_step_table(
    prev: &ModelParameters,
    resp: &ResponsibilityTable,
    table: &FeatureTable,
    freeze: &FreezeMask,
    iteration: usize,
    warnings: &mut Vec<EmWarning>,
) -> ModelParameters {
    let pools = pool(table, resp);
    let mut next = prev.clone();
    for (ty, p) in &pools {
        let model = next.registry.get_mut(ty).expect("pooled type has a model");
        let mut issues = Issues { iteration, activity: *ty, out: warnings };
        model.kernels = match model.kernels {
            ActivityKernels::Distant { ang_h, ang_o, edge } => ActivityKernels::Distant {
                ang_h: update_vonmises(ang_h, &p.x_h, freeze, Kernel::AngHuman, &mut issues),
                ang_o: update_vonmises(ang_o, &p.x_o, freeze, Kernel::AngObject, &mut issues),
                edge: update_beta(edge, &p.d_bar, freeze, &mut issues),
            },
            ActivityKernels::Close { ang_h, dist_h } => ActivityKernels::Close {
                ang_h: update_vonmises(ang_h, &p.x_h, freeze, Kernel::AngHuman, &mut issues),
                dist_h: update_gaussian(dist_h, &p.d_euclid, freeze, &mut issues),
            },
        };
    }
    if !freeze.prior {
        update_priors(&mut next, table, &pools);
    }
    next
}

/// One M-step from `prev`; kernels and priors of activity types without any
/// training waypoints keep their previous values.
pub fn m_step(
    prev: &ModelParameters,
    resp: &ResponsibilityTable,
    set: &TrainingSet,
    freeze: &FreezeMask,
) -> Result<(ModelParameters, Vec<EmWarning>), EmError> {
    let table = FeatureTable::new(set)?;
    let mut warnings = Vec::new();
    let next = m_step_table(prev, resp, &table, freeze, 1, &mut warnings);
    Ok((next, warnings))
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitStrategy {
    /// Angular means from a random responsibility-weighted bootstrap, κ = 1,
    /// Beta(1.5, 1.5), Gaussian from unweighted moments, uniform priors.
    Bootstrap,
    /// Start every restart from the given parameters.
    Fixed(Box<ModelParameters>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EMConfig {
    pub max_iters: usize,
    /// Stop when |ΔLL| / |LL| falls below this.
    pub tol: f64,
    pub seed: u64,
    pub init_strategy: InitStrategy,
    pub restarts: usize,
    pub freeze: FreezeMask,
}

impl Default for EMConfig {
    fn default() -> Self {
        EMConfig {
            max_iters: 200,
            tol: 1e-6,
            seed: 0,
            init_strategy: InitStrategy::Bootstrap,
            restarts: 5,
            freeze: FreezeMask::NONE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EMTrace {
    /// Average log-likelihood per waypoint; entry 0 is the initialization.
    pub avg_log_likelihood: Vec<f64>,
    /// SHA-256 of the parameters after each iteration; entry 0 is the initialization.
    pub snapshot_hashes: Vec<String>,
    pub warnings: Vec<EmWarning>,
    pub converged: bool,
    /// Restart whose result was kept.
    pub restart: usize,
    /// Final average log-likelihood of every restart.
    pub restart_final: Vec<f64>,
}

impl EMTrace {
    pub fn final_avg_log_likelihood(&self) -> f64 {
        *self.avg_log_likelihood.last().expect("trace records the initialization")
    }

    /// Tab-separated `iteration avg_ll hash` rows followed by `#`-prefixed
    /// warning lines.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("iteration\tavg_log_likelihood\tsnapshot\n");
        for (i, (ll, h)) in self.avg_log_likelihood.iter().zip(&self.snapshot_hashes).enumerate() {
            let _ = writeln!(s, "{i}\t{ll:?}\t{h}");
        }
        for w in &self.warnings {
            let issue = match &w.issue {
                FitIssue::Fallback { error } => format!("fallback: {error}"),
                FitIssue::Warning { warning } => format!("{warning:?}"),
            };
            let _ = writeln!(s, "# iteration {} {} {:?}: {issue}", w.iteration, w.activity, w.kernel);
        }
        s
    }
}

/// SHA-256 over the bit patterns of every parameter, in registry order.
pub fn snapshot_hash(params: &ModelParameters) -> String {
    let mut h = Sha256::new();
    for (ty, m) in &params.registry {
        h.update(ty.as_str().as_bytes());
        let vals: Vec<f64> = match m.kernels {
            ActivityKernels::Distant { ang_h, ang_o, edge } => {
                vec![ang_h.mu, ang_h.kappa, ang_o.mu, ang_o.kappa, edge.alpha, edge.beta]
            }
            ActivityKernels::Close { ang_h, dist_h } => vec![ang_h.mu, ang_h.kappa, dist_h.g, dist_h.sigma],
        };
        for v in vals.into_iter().chain([m.prior]) {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Registry covering exactly the activity types seen in training.
fn bootstrap_init(set: &TrainingSet, table: &FeatureTable, rng: &mut ChaCha8Rng) -> Result<ModelParameters, EmError> {
    let classes = set.activity_classes()?;
    let mut rows: Vec<f64> = Vec::new();
    let mut resp = Vec::with_capacity(table.envs.len());
    for env in &table.envs {
        let m = env.types.len();
        let mut r = Vec::with_capacity(env.n * m);
        for _ in 0..env.n {
            rows.clear();
            rows.extend((0..m).map(|_| rng.random::<f64>()));
            let z: f64 = rows.iter().sum();
            r.extend(rows.iter().map(|x| x / z));
        }
        resp.push(r);
    }
    let resp = ResponsibilityTable { environments: resp, instance_counts: table.envs.iter().map(|e| e.types.len()).collect() };
    let pools = pool(table, &resp);
    let eta = 1.0 / classes.len() as f64;
    let mut models = Vec::new();
    for (&ty, &class) in &classes {
        let kernels = match pools.get(&ty) {
            None => ActivityKernels::uniform(class),
            Some(p) => {
                let mean_dir = |s: &[WeightedSample<Vec2>]| {
                    fit_vonmises_weighted(s)
                        .ok()
                        .filter(|f| f.warning != Some(FitWarning::DegenerateFit))
                        .map_or(0.0, |f| f.params.mu)
                };
                let ang_h = VonMisesParams { mu: mean_dir(&p.x_h), kappa: 1.0 };
                match class {
                    ProximityClass::Distant => ActivityKernels::Distant {
                        ang_h,
                        ang_o: VonMisesParams { mu: mean_dir(&p.x_o), kappa: 1.0 },
                        edge: BetaParams { alpha: 1.5, beta: 1.5 },
                    },
                    ProximityClass::CloseProximity => {
                        let unit: Vec<_> = p.d_euclid.iter().map(|s| WeightedSample::unit(s.value)).collect();
                        let dist_h = fit_gaussian_weighted(&unit).unwrap_or(GaussianParams { g: 0.0, sigma: 1.0 });
                        ActivityKernels::Close { ang_h, dist_h }
                    }
                }
            }
        };
        models.push(ActivityModel { activity_type: ty, kernels, prior: eta });
    }
    Ok(ModelParameters::new(models))
}

struct RunResult {
    params: ModelParameters,
    trace: EMTrace,
}

fn run(set: &TrainingSet, table: &FeatureTable, config: &EMConfig, restart: usize) -> Result<RunResult, EmError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(restart as u64);
    let mut params = match &config.init_strategy {
        InitStrategy::Bootstrap => bootstrap_init(set, table, &mut rng)?,
        InitStrategy::Fixed(p) => (**p).clone(),
    };
    let n = table.total as f64;
    let (mut resp, mut ll) = e_step_table(&params, set, table)?;
    let mut trace = EMTrace {
        avg_log_likelihood: vec![ll / n],
        snapshot_hashes: vec![snapshot_hash(&params)],
        warnings: Vec::new(),
        converged: false,
        restart,
        restart_final: Vec::new(),
    };
    for iteration in 1..=config.max_iters {
        params = m_step_table(&params, &resp, table, &config.freeze, iteration, &mut trace.warnings);
        params.iteration_count = iteration as u32;
        let (r, next_ll) = e_step_table(&params, set, table)?;
        trace.avg_log_likelihood.push(next_ll / n);
        trace.snapshot_hashes.push(snapshot_hash(&params));
        let change = (next_ll - ll).abs() / next_ll.abs().max(f64::MIN_POSITIVE);
        resp = r;
        ll = next_ll;
        if change < config.tol {
            trace.converged = true;
            break;
        }
    }
    Ok(RunResult { params, trace })
}

/// Best-of-restarts EM fit. Deterministic for a given seed: restart r draws
/// from stream r of a generator seeded with `config.seed`.
pub fn fit(set: &TrainingSet, config: &EMConfig) -> Result<(ModelParameters, EMTrace), EmError> {
    if set.waypoint_count() == 0 {
        return Err(EmError::EmptyTrainingSet);
    }
    set.activity_classes()?;
    let table = FeatureTable::new(set)?;
    let runs = (0..config.restarts.max(1))
        .into_par_iter()
        .map(|r| run(set, &table, config, r))
        .collect::<Result<Vec<_>, _>>()?;
    let finals: Vec<f64> = runs.iter().map(|r| r.trace.final_avg_log_likelihood()).collect();
    let best = finals
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > finals[best] { i } else { best });
    let RunResult { params, mut trace } = runs.into_iter().nth(best).expect("at least one restart");
    trace.restart_final = finals;
    Ok((params, trace))
}
