//! Heuristic baselines, ranking metrics and ground-truth scoring.

use crate::affordance::{AffordanceError, EnvironmentCost, ModelParameters};
use crate::env::{ActivityInstance, Environment, LabeledSegment, ProximityClass, Trajectory};
use crate::geometry::{point_segment_distance, Vec2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Half-width of the human–object corridor a distant activity occupies, meters.
pub const HIC_CORRIDOR_HALF_WIDTH: f64 = 0.4;
/// Radius of the disc around the human of a close-proximity activity, meters.
pub const HIC_DISC_RADIUS: f64 = 0.6;
/// MCC ignores objects farther than this, meters.
pub const MCC_CUTOFF: f64 = 1.0;
pub const NDCG_KS: [usize; 4] = [1, 3, 5, 10];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no trajectory has a strictly better-scored counterpart")]
    NoComparablePairs,
    #[error("cost and score lists differ in length ({costs} vs {scores})")]
    LengthMismatch { costs: usize, scores: usize },
    #[error("trajectory `{0}` has no ground-truth score")]
    MissingScore(String),
    #[error("ranked list is empty")]
    EmptyRanking,
    #[error(transparent)]
    Cost(#[from] AffordanceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Chance,
    Mcp,
    Mcc,
    Hic,
    Hicmcc,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 5] =
        [BaselineKind::Chance, BaselineKind::Mcp, BaselineKind::Mcc, BaselineKind::Hic, BaselineKind::Hicmcc];

    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::Chance => "chance",
            BaselineKind::Mcp => "mcp",
            BaselineKind::Mcc => "mcc",
            BaselineKind::Hic => "hic",
            BaselineKind::Hicmcc => "hicmcc",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaselineKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown baseline `{s}`"))
    }
}

/// Objects the clearance baselines measure against: the scene objects, or the
/// activity objects when the scene lists none.
fn reference_objects(env: &Environment) -> Vec<Vec2> {
    if env.objects.is_empty() {
        env.activities.iter().map(|a| a.object_position).collect()
    } else {
        env.objects.iter().map(|o| o.position).collect()
    }
}

fn nearest_distance(objects: &[Vec2], p: Vec2) -> f64 {
    objects.iter().map(|o| o.distance(p)).fold(f64::INFINITY, f64::min)
}

/// Uniform draw in [0, 1) keyed by seed and trajectory id.
pub fn chance_cost(traj_id: &str, seed: u64) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(traj_id.as_bytes());
    let digest = h.finalize();
    let key: [u8; 32] = digest.into();
    ChaCha8Rng::from_seed(key).random::<f64>()
}

/// Negated root-mean-square distance to the nearest object.
pub fn mcp_cost(traj: &Trajectory, env: &Environment) -> f64 {
    let objects = reference_objects(env);
    if objects.is_empty() || traj.waypoints.is_empty() {
        return 0.0;
    }
    let ms = traj.waypoints.iter().map(|&w| nearest_distance(&objects, w).powi(2)).sum::<f64>()
        / traj.waypoints.len() as f64;
    -ms.sqrt()
}

/// Mean over waypoints of e^{-c} for nearest-object distance c below 1 m, else 0.
pub fn mcc_cost(traj: &Trajectory, env: &Environment) -> f64 {
    let objects = reference_objects(env);
    if objects.is_empty() || traj.waypoints.is_empty() {
        return 0.0;
    }
    traj.waypoints
        .iter()
        .map(|&w| {
            let c = nearest_distance(&objects, w);
            if c < MCC_CUTOFF {
                (-c).exp()
            } else {
                0.0
            }
        })
        .sum::<f64>()
        / traj.waypoints.len() as f64
}

/// Whether `p` lies in the region an activity occupies.
pub fn in_influence_region(p: Vec2, a: &ActivityInstance) -> bool {
    match a.proximity_class {
        ProximityClass::Distant => point_segment_distance(p, a.human_position, a.object_position) <= HIC_CORRIDOR_HALF_WIDTH,
        ProximityClass::CloseProximity => p.distance(a.human_position) <= HIC_DISC_RADIUS,
    }
}

/// Number of maximal runs of consecutive waypoints inside an influence
/// region, summed over activities.
pub fn hic_cost(traj: &Trajectory, env: &Environment) -> f64 {
    let mut count = 0usize;
    for a in &env.activities {
        let mut inside = false;
        for &w in &traj.waypoints {
            let now = in_influence_region(w, a);
            if now && !inside {
                count += 1;
            }
            inside = now;
        }
    }
    count as f64
}

pub fn baseline_cost(traj: &Trajectory, env: &Environment, kind: BaselineKind, seed: u64) -> f64 {
    match kind {
        BaselineKind::Chance => chance_cost(&traj.id, seed),
        BaselineKind::Mcp => mcp_cost(traj, env),
        BaselineKind::Mcc => mcc_cost(traj, env),
        BaselineKind::Hic => hic_cost(traj, env),
        BaselineKind::Hicmcc => mcc_cost(traj, env) * hic_cost(traj, env),
    }
}

/// Minimum segment score per trajectory; a single bad segment makes the
/// whole trajectory bad.
pub fn ground_truth_scores(labels: &[LabeledSegment]) -> BTreeMap<String, u8> {
    let mut out: BTreeMap<String, u8> = BTreeMap::new();
    for l in labels {
        let s = l.label.score();
        out.entry(l.trajectory_id.clone()).and_modify(|v| *v = (*v).min(s)).or_insert(s);
    }
    out
}

/// For each trajectory, the fraction of strictly better-scored trajectories
/// that received a strictly higher cost, averaged over trajectories that have
/// any better-scored counterpart.
pub fn misclassification_rate(costs: &[f64], scores: &[u8]) -> Result<f64, EvalError> {
    if costs.len() != scores.len() {
        return Err(EvalError::LengthMismatch { costs: costs.len(), scores: scores.len() });
    }
    let mut total = 0.0;
    let mut counted = 0usize;
    for i in 0..costs.len() {
        let mut better = 0usize;
        let mut wrong = 0usize;
        for j in 0..costs.len() {
            if scores[j] > scores[i] {
                better += 1;
                if costs[j] > costs[i] {
                    wrong += 1;
                }
            }
        }
        if better > 0 {
            total += wrong as f64 / better as f64;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(EvalError::NoComparablePairs);
    }
    Ok(total / counted as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub trajectory_id: String,
    pub cost: f64,
}

/// Trajectories by ascending cost, ties broken by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub items: Vec<RankedItem>,
}

impl RankedList {
    pub fn new(items: impl IntoIterator<Item = (String, f64)>) -> Self {
        let mut items: Vec<RankedItem> =
            items.into_iter().map(|(trajectory_id, cost)| RankedItem { trajectory_id, cost }).collect();
        items.sort_by(|a, b| a.cost.total_cmp(&b.cost).then_with(|| a.trajectory_id.cmp(&b.trajectory_id)));
        RankedList { items }
    }
}

fn dcg(gains: impl Iterator<Item = f64>) -> f64 {
    gains.enumerate().map(|(i, g)| g / ((i + 2) as f64).log2()).sum()
}

/// nDCG over the top `k` items (all items when `k` is `None`), with the raw
/// score as gain.
pub fn ndcg(ranked: &RankedList, truths: &BTreeMap<String, u8>, k: Option<usize>) -> Result<f64, EvalError> {
    if ranked.items.is_empty() {
        return Err(EvalError::EmptyRanking);
    }
    let gains = ranked
        .items
        .iter()
        .map(|it| truths.get(&it.trajectory_id).map(|&s| s as f64).ok_or_else(|| EvalError::MissingScore(it.trajectory_id.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let k = k.unwrap_or(gains.len()).min(gains.len());
    let mut ideal = gains.clone();
    ideal.sort_by(|a, b| b.total_cmp(a));
    Ok(dcg(gains.iter().copied().take(k)) / dcg(ideal.into_iter().take(k)))
}

/// How trajectories are scored in an evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub enum Scorer<'a> {
    /// Log trajectory cost under a learned model.
    Learned(&'a ModelParameters),
    Baseline(BaselineKind, u64),
}

impl Scorer<'_> {
    pub fn name(&self) -> String {
        match self {
            Scorer::Learned(_) => "learned".into(),
            Scorer::Baseline(k, _) => k.to_string(),
        }
    }

    pub fn costs(&self, env: &Environment, trajs: &[&Trajectory]) -> Result<Vec<f64>, EvalError> {
        Ok(match self {
            Scorer::Learned(p) => {
                let ec = EnvironmentCost::new(env, p)?;
                let floor = ec.ranking_floor(env);
                trajs.iter().map(|t| ec.ranking_cost(&t.waypoints, floor)).collect()
            }
            Scorer::Baseline(k, seed) => trajs.iter().map(|t| baseline_cost(t, env, *k, *seed)).collect(),
        })
    }
}

/// Per-environment metrics averaged over environments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub algorithm: String,
    pub misclassification: f64,
    /// Standard error of the per-environment misclassification rates.
    pub stderr: f64,
    /// nDCG@k for k in [`NDCG_KS`].
    pub ndcg: [f64; 4],
    pub environments: usize,
}

impl EvalRow {
    pub const CSV_HEADER: &'static str = "algorithm,misclassification,stderr,ndcg@1,ndcg@3,ndcg@5,ndcg@10";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.algorithm, self.misclassification, self.stderr, self.ndcg[0], self.ndcg[1], self.ndcg[2], self.ndcg[3]
        )
    }
}

/// Per-environment results for one scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvMetrics {
    pub misclassification: Option<f64>,
    pub ndcg: [f64; 4],
}

/// Scores every labeled trajectory of each environment and computes the
/// ranking metrics per environment. Environments without a comparable pair
/// contribute to nDCG only.
pub fn evaluate_environments(
    envs: &[Environment],
    trajs: &[Trajectory],
    truths: &BTreeMap<String, u8>,
    scorer: &Scorer,
) -> Result<Vec<EnvMetrics>, EvalError> {
    let mut by_env: HashMap<&str, Vec<&Trajectory>> = HashMap::new();
    for t in trajs.iter().filter(|t| truths.contains_key(&t.id)) {
        by_env.entry(t.environment_id.as_str()).or_default().push(t);
    }
    let mut out = Vec::new();
    for env in envs {
        let Some(ts) = by_env.get(env.id.as_str()) else { continue };
        let costs = scorer.costs(env, ts)?;
        let scores: Vec<u8> = ts.iter().map(|t| truths[&t.id]).collect();
        let misclassification = match misclassification_rate(&costs, &scores) {
            Ok(m) => Some(m),
            Err(EvalError::NoComparablePairs) => None,
            Err(e) => return Err(e),
        };
        let ranked = RankedList::new(ts.iter().zip(&costs).map(|(t, &c)| (t.id.clone(), c)));
        let mut ndcg_k = [0.0; 4];
        for (slot, k) in ndcg_k.iter_mut().zip(NDCG_KS) {
            *slot = ndcg(&ranked, truths, Some(k))?;
        }
        out.push(EnvMetrics { misclassification, ndcg: ndcg_k });
    }
    Ok(out)
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn summarize(algorithm: &str, metrics: &[EnvMetrics]) -> Result<EvalRow, EvalError> {
    let mis: Vec<f64> = metrics.iter().filter_map(|m| m.misclassification).collect();
    if mis.is_empty() {
        return Err(EvalError::NoComparablePairs);
    }
    let (misclassification, stderr) = mean_and_stderr(&mis);
    let mut ndcg = [0.0; 4];
    for (i, slot) in ndcg.iter_mut().enumerate() {
        *slot = metrics.iter().map(|m| m.ndcg[i]).sum::<f64>() / metrics.len() as f64;
    }
    Ok(EvalRow { algorithm: algorithm.to_string(), misclassification, stderr, ndcg, environments: metrics.len() })
}

pub fn evaluate(
    envs: &[Environment],
    trajs: &[Trajectory],
    truths: &BTreeMap<String, u8>,
    scorer: &Scorer,
) -> Result<EvalRow, EvalError> {
    summarize(&scorer.name(), &evaluate_environments(envs, trajs, truths, scorer)?)
}

/// Chance row averaged over `draws` seeds (`seed`, `seed + 1`, ...): the
/// per-environment metrics of every draw are pooled before summarizing.
pub fn evaluate_chance(
    envs: &[Environment],
    trajs: &[Trajectory],
    truths: &BTreeMap<String, u8>,
    seed: u64,
    draws: usize,
) -> Result<EvalRow, EvalError> {
    let mut per_env: Vec<Vec<EnvMetrics>> = Vec::new();
    for d in 0..draws.max(1) {
        per_env.push(evaluate_environments(envs, trajs, truths, &Scorer::Baseline(BaselineKind::Chance, seed + d as u64))?);
    }
    // Average each environment over draws, then summarize across environments.
    let n_env = per_env[0].len();
    let mut averaged = Vec::with_capacity(n_env);
    for e in 0..n_env {
        let mis: Vec<f64> = per_env.iter().filter_map(|d| d[e].misclassification).collect();
        let misclassification = if mis.is_empty() { None } else { Some(mis.iter().sum::<f64>() / mis.len() as f64) };
        let mut ndcg = [0.0; 4];
        for (i, slot) in ndcg.iter_mut().enumerate() {
            *slot = per_env.iter().map(|d| d[e].ndcg[i]).sum::<f64>() / per_env.len() as f64;
        }
        averaged.push(EnvMetrics { misclassification, ndcg });
    }
    summarize(BaselineKind::Chance.as_str(), &averaged)
}
