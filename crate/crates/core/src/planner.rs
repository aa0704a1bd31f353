//! Cost-aware RRT* over a [`CostMap`].

use crate::costmap::CostMap;
use crate::env::Trajectory;
use crate::geometry::Vec2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use thiserror::Error;

/// Speed used to timestamp planned paths, m/s.
pub const NOMINAL_SPEED: f64 = 0.5;
pub const DEFAULT_DIVERSITY: f64 = 0.5;
const GOAL_BIAS: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("no path found after {0} samples")]
    NoPathFound(usize),
    #[error("invalid plan request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanRequest {
    pub start: Vec2,
    pub goal: Vec2,
    pub step_size: f64,
    pub max_samples: usize,
    pub goal_tolerance: f64,
    /// λ in the edge weight `length · (1 + λ · mean cell cost)`.
    pub cost_weight: f64,
    pub seed: u64,
}

impl PlanRequest {
    pub fn new(start: Vec2, goal: Vec2, seed: u64) -> Self {
        PlanRequest { start, goal, step_size: 0.15, max_samples: 20_000, goal_tolerance: 0.10, cost_weight: 5.0, seed }
    }

    pub fn validate(&self, map: &CostMap) -> Result<(), PlanError> {
        let bad = |m: &str| Err(PlanError::InvalidRequest(m.to_string()));
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("step_size must be positive");
        }
        if !(self.goal_tolerance >= 0.0 && self.goal_tolerance.is_finite()) {
            return bad("goal_tolerance must be non-negative");
        }
        if !(self.cost_weight >= 0.0 && self.cost_weight.is_finite()) {
            return bad("cost_weight must be non-negative");
        }
        if map.is_blocked(self.start) {
            return bad("start is outside the map or inside an obstacle");
        }
        if map.is_blocked(self.goal) {
            return bad("goal is outside the map or inside an obstacle");
        }
        Ok(())
    }
}

/// Points along a segment at most half a cell apart, endpoints included.
fn segment_samples(map: &CostMap, a: Vec2, b: Vec2) -> impl Iterator<Item = Vec2> {
    let n = ((a.distance(b) / (0.5 * map.resolution)).ceil() as usize).max(1);
    (0..=n).map(move |i| a.lerp(b, i as f64 / n as f64))
}

pub fn segment_is_free(map: &CostMap, a: Vec2, b: Vec2) -> bool {
    segment_samples(map, a, b).all(|p| !map.is_blocked(p))
}

/// Mean cell value along a segment.
pub fn mean_segment_cost(map: &CostMap, a: Vec2, b: Vec2) -> f64 {
    let (sum, n) = segment_samples(map, a, b)
        .fold((0.0, 0usize), |(s, n), p| (s + map.value_at(p).unwrap_or_else(|| map.max_value()), n + 1));
    sum / n as f64
}

pub fn edge_weight(map: &CostMap, a: Vec2, b: Vec2, cost_weight: f64) -> f64 {
    a.distance(b) * (1.0 + cost_weight * mean_segment_cost(map, a, b))
}

/// Line integral of the map value along a polyline.
pub fn integrated_cost(map: &CostMap, waypoints: &[Vec2]) -> f64 {
    waypoints.windows(2).map(|w| w[0].distance(w[1]) * mean_segment_cost(map, w[0], w[1])).sum()
}

pub fn path_length(waypoints: &[Vec2]) -> f64 {
    waypoints.windows(2).map(|w| w[0].distance(w[1])).sum()
}

fn timed(waypoints: Vec<Vec2>, environment_id: &str, id: String) -> Trajectory {
    let mut t = 0.0;
    let mut timestamps = Vec::with_capacity(waypoints.len());
    for (i, w) in waypoints.iter().enumerate() {
        if i > 0 {
            t += waypoints[i - 1].distance(*w) / NOMINAL_SPEED;
        }
        timestamps.push(t);
    }
    Trajectory { id, environment_id: environment_id.to_string(), waypoints, timestamps }
}

struct Node {
    pos: Vec2,
    parent: Option<usize>,
    cost: f64,
    children: Vec<usize>,
}

/// Uniform bucket grid for nearest and radius queries.
struct SpatialHash {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

impl SpatialHash {
    fn key(&self, p: Vec2) -> (i64, i64) {
        ((p.x / self.cell).floor() as i64, (p.y / self.cell).floor() as i64)
    }

    fn insert(&mut self, p: Vec2, i: usize) {
        let k = self.key(p);
        self.buckets.entry(k).or_default().push(i);
    }

    fn within(&self, nodes: &[Node], p: Vec2, r: f64, out: &mut Vec<usize>) {
        out.clear();
        let span = (r / self.cell).ceil() as i64;
        let (kx, ky) = self.key(p);
        for dx in -span..=span {
            for dy in -span..=span {
                if let Some(b) = self.buckets.get(&(kx + dx, ky + dy)) {
                    out.extend(b.iter().copied().filter(|&i| nodes[i].pos.distance(p) <= r));
                }
            }
        }
        out.sort_unstable();
    }

    /// Ring search outward until a ring can no longer contain a closer node.
    fn nearest(&self, nodes: &[Node], p: Vec2) -> usize {
        let (kx, ky) = self.key(p);
        let mut best = (f64::INFINITY, usize::MAX);
        for ring in 0i64.. {
            if best.1 != usize::MAX && (ring as f64 - 1.0) * self.cell > best.0 {
                break;
            }
            if ring > 1 && best.1 == usize::MAX && ring as usize > 4 * self.buckets.len() + 64 {
                break;
            }
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    if dx.abs() != ring && dy.abs() != ring {
                        continue;
                    }
                    if let Some(b) = self.buckets.get(&(kx + dx, ky + dy)) {
                        for &i in b {
                            let d = nodes[i].pos.distance(p);
                            if d < best.0 || (d == best.0 && i < best.1) {
                                best = (d, i);
                            }
                        }
                    }
                }
            }
        }
        best.1
    }
}

struct Tree {
    nodes: Vec<Node>,
    hash: SpatialHash,
}

impl Tree {
    fn add(&mut self, pos: Vec2, parent: Option<usize>, cost: f64) -> usize {
        let i = self.nodes.len();
        self.nodes.push(Node { pos, parent, cost, children: Vec::new() });
        if let Some(p) = parent {
            self.nodes[p].children.push(i);
        }
        self.hash.insert(pos, i);
        i
    }

    fn reparent(&mut self, i: usize, parent: usize, cost: f64) {
        if let Some(old) = self.nodes[i].parent {
            self.nodes[old].children.retain(|&c| c != i);
        }
        self.nodes[i].parent = Some(parent);
        self.nodes[parent].children.push(i);
        let delta = cost - self.nodes[i].cost;
        let mut stack = vec![i];
        while let Some(n) = stack.pop() {
            self.nodes[n].cost += delta;
            stack.extend(self.nodes[n].children.iter().copied());
        }
    }

    fn path_to(&self, mut i: usize) -> Vec<Vec2> {
        let mut out = vec![self.nodes[i].pos];
        while let Some(p) = self.nodes[i].parent {
            out.push(self.nodes[p].pos);
            i = p;
        }
        out.reverse();
        out
    }
}

/// Plans from `req.start` to within `req.goal_tolerance` of `req.goal`,
/// returning the lowest-weight path found after `req.max_samples` samples.
/// The exact goal is appended when it can be reached from the best node.
pub fn plan(map: &CostMap, req: &PlanRequest, environment_id: &str) -> Result<Trajectory, PlanError> {
    plan_waypoints(map, req).map(|w| timed(w, environment_id, format!("plan-{}", req.seed)))
}

pub fn plan_waypoints(map: &CostMap, req: &PlanRequest) -> Result<Vec<Vec2>, PlanError> {
    req.validate(map)?;
    if req.start == req.goal {
        return Ok(vec![req.start]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let radius = 2.0 * req.step_size;
    let mut tree = Tree { nodes: Vec::new(), hash: SpatialHash { cell: radius, buckets: HashMap::new() } };
    tree.add(req.start, None, 0.0);
    let bounds = map.bounds();
    let mut near = Vec::new();
    for _ in 0..req.max_samples {
        let target = if rng.random::<f64>() < GOAL_BIAS {
            req.goal
        } else {
            Vec2::new(rng.random_range(bounds.min.x..bounds.max.x), rng.random_range(bounds.min.y..bounds.max.y))
        };
        let nearest = tree.hash.nearest(&tree.nodes, target);
        let from = tree.nodes[nearest].pos;
        let d = from.distance(target);
        if d == 0.0 {
            continue;
        }
        let new = if d <= req.step_size { target } else { from + (target - from) * (req.step_size / d) };
        if !segment_is_free(map, from, new) {
            continue;
        }
        tree.hash.within(&tree.nodes, new, radius, &mut near);
        let mut parent = nearest;
        let mut best = tree.nodes[nearest].cost + edge_weight(map, from, new, req.cost_weight);
        let mut weights = Vec::with_capacity(near.len());
        for &n in &near {
            let p = tree.nodes[n].pos;
            let w = if segment_is_free(map, p, new) { Some(edge_weight(map, p, new, req.cost_weight)) } else { None };
            weights.push(w);
            if let Some(w) = w {
                let c = tree.nodes[n].cost + w;
                if c < best {
                    best = c;
                    parent = n;
                }
            }
        }
        let idx = tree.add(new, Some(parent), best);
        for (&n, w) in near.iter().zip(&weights) {
            // Edge weights are symmetric in their endpoints.
            if let Some(w) = w {
                if n != parent && best + w < tree.nodes[n].cost {
                    tree.reparent(n, idx, best + w);
                }
            }
        }
    }
    let mut best: Option<(f64, usize, bool)> = None;
    tree.hash.within(&tree.nodes, req.goal, req.goal_tolerance.max(req.step_size), &mut near);
    for &n in &near {
        let node = &tree.nodes[n];
        let (cost, append) = if node.pos == req.goal {
            (node.cost, false)
        } else if segment_is_free(map, node.pos, req.goal) && node.pos.distance(req.goal) <= req.step_size {
            (node.cost + edge_weight(map, node.pos, req.goal, req.cost_weight), true)
        } else if node.pos.distance(req.goal) <= req.goal_tolerance {
            (node.cost, false)
        } else {
            continue;
        };
        if best.is_none_or(|(c, _, _)| cost < c) {
            best = Some((cost, n, append));
        }
    }
    let (_, n, append) = best.ok_or(PlanError::NoPathFound(req.max_samples))?;
    let mut path = tree.path_to(n);
    if append {
        path.push(req.goal);
    }
    Ok(path)
}

/// Discrete Fréchet distance between two polylines (by their vertices).
pub fn discrete_frechet(a: &[Vec2], b: &[Vec2]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::INFINITY;
    }
    let m = b.len();
    let mut prev = vec![0.0f64; m];
    let mut cur = vec![0.0f64; m];
    for (i, &p) in a.iter().enumerate() {
        for (j, &q) in b.iter().enumerate() {
            let d = p.distance(q);
            cur[j] = match (i, j) {
                (0, 0) => d,
                (0, _) => cur[j - 1].max(d),
                (_, 0) => prev[0].max(d),
                _ => prev[j].min(prev[j - 1]).min(cur[j - 1]).max(d),
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m - 1]
}

/// Resamples a polyline at (at most) `spacing` intervals along its length.
pub fn resample(waypoints: &[Vec2], spacing: f64) -> Vec<Vec2> {
    let mut out = Vec::new();
    for w in waypoints.windows(2) {
        let n = ((w[0].distance(w[1]) / spacing).ceil() as usize).max(1);
        out.extend((0..n).map(|i| w[0].lerp(w[1], i as f64 / n as f64)));
    }
    out.extend(waypoints.last().copied());
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiverseSample {
    pub trajectories: Vec<Trajectory>,
    /// Set when fewer than the requested number of mutually distinct paths
    /// could be found.
    pub diversity_unmet: bool,
}

/// Plans up to `count` paths whose pairwise discrete Fréchet distance (after
/// resampling at 0.1 m) is at least `min_separation`. Candidates after the
/// first are routed through a random free via-point; candidates too close to
/// an accepted path are rejected.
pub fn sample_diverse(
    map: &CostMap,
    req: &PlanRequest,
    count: usize,
    min_separation: f64,
    environment_id: &str,
) -> Result<DiverseSample, PlanError> {
    req.validate(map)?;
    let first = plan_waypoints(map, req)?;
    let mut accepted = vec![(resample(&first, 0.1), first)];
    let bounds = map.bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed ^ 0x9e37_79b9_7f4a_7c15);
    let attempts = 10 * count;
    let sub = PlanRequest { max_samples: (req.max_samples / 2).max(1), ..req.clone() };
    for attempt in 0..attempts {
        if accepted.len() >= count {
            break;
        }
        let via = Vec2::new(rng.random_range(bounds.min.x..bounds.max.x), rng.random_range(bounds.min.y..bounds.max.y));
        if map.is_blocked(via) {
            continue;
        }
        let seed = req.seed.wrapping_add(1 + attempt as u64);
        let a = plan_waypoints(map, &PlanRequest { goal: via, seed, ..sub.clone() });
        let b = plan_waypoints(map, &PlanRequest { start: via, seed: seed.wrapping_add(1 << 32), ..sub.clone() });
        let (Ok(mut a), Ok(b)) = (a, b) else { continue };
        a.extend(b.into_iter().skip(1));
        let dense = resample(&a, 0.1);
        if accepted.iter().all(|(d, _)| discrete_frechet(d, &dense) >= min_separation) {
            accepted.push((dense, a));
        }
    }
    let diversity_unmet = accepted.len() < count;
    let trajectories = accepted
        .into_iter()
        .take(count)
        .enumerate()
        .map(|(i, (_, w))| timed(w, environment_id, format!("plan-{}-{i}", req.seed)))
        .collect();
    Ok(DiverseSample { trajectories, diversity_unmet })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open_room() -> CostMap {
        CostMap::uniform(Vec2::ZERO, 0.05, 200, 200, 0.01)
    }

    #[test]
    fn start_equals_goal() {
        let req = PlanRequest::new(Vec2::new(1.0, 1.0), Vec2::new(1.0, 1.0), 0);
        let t = plan(&open_room(), &req, "room").unwrap();
        assert_eq!(t.waypoints, vec![Vec2::new(1.0, 1.0)]);
    }

    #[test]
    fn open_room_path_is_short() {
        let map = open_room();
        for seed in 0..20 {
            let req = PlanRequest { max_samples: 4000, ..PlanRequest::new(Vec2::new(1.0, 1.0), Vec2::new(8.0, 7.0), seed) };
            let t = plan(&map, &req, "room").unwrap();
            let straight = req.start.distance(req.goal);
            assert!(t.length() <= 1.5 * straight, "seed {seed}: {} vs {straight}", t.length());
            assert!(t.waypoints.last().unwrap().distance(req.goal) <= req.goal_tolerance);
            assert!(t.validate().is_ok());
        }
    }

    #[test]
    fn walls_block_and_paths_avoid_them() {
        let mut map = open_room();
        for r in 0..160 {
            let i = map.index(100, r);
            map.obstacles[i] = true;
        }
        let req = PlanRequest { max_samples: 6000, ..PlanRequest::new(Vec2::new(2.0, 2.0), Vec2::new(8.0, 2.0), 3) };
        let w = plan_waypoints(&map, &req).unwrap();
        assert!(w.windows(2).all(|s| segment_is_free(&map, s[0], s[1])));
        assert!(w.iter().any(|p| p.y > 8.0));

        let sealed = {
            let mut m = map.clone();
            for r in 0..200 {
                let i = m.index(100, r);
                m.obstacles[i] = true;
            }
            m
        };
        let req = PlanRequest { max_samples: 500, ..req };
        assert_eq!(plan_waypoints(&sealed, &req), Err(PlanError::NoPathFound(500)));
    }

    #[test]
    fn zero_weight_ignores_cost() {
        let mut map = open_room();
        map.values.iter_mut().for_each(|v| *v = 100.0);
        let (a, b) = (Vec2::new(1.0, 1.0), Vec2::new(1.1, 1.0));
        assert!((edge_weight(&map, a, b, 0.0) - 0.1).abs() < 1e-12);
        assert!((edge_weight(&map, a, b, 2.0) - 0.1 * 201.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_requests() {
        let map = open_room();
        let req = PlanRequest::new(Vec2::new(-1.0, 1.0), Vec2::new(1.0, 1.0), 0);
        assert!(matches!(plan(&map, &req, "room"), Err(PlanError::InvalidRequest(_))));
    }

    #[test]
    fn frechet_examples() {
        let a = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(2.0, 0.0)];
        let b = [Vec2::new(0.0, 1.0), Vec2::new(1.0, 1.0), Vec2::new(2.0, 1.0)];
        assert_eq!(discrete_frechet(&a, &b), 1.0);
        assert_eq!(discrete_frechet(&a, &a), 0.0);
        let c = [Vec2::new(0.0, 0.0), Vec2::new(2.0, 0.0)];
        assert_eq!(discrete_frechet(&a, &c), 1.0);
    }

    #[test]
    fn diverse_paths_in_open_room() {
        let map = CostMap::uniform(Vec2::ZERO, 0.05, 200, 200, 0.01);
        let req = PlanRequest { max_samples: 3000, ..PlanRequest::new(Vec2::new(1.0, 5.0), Vec2::new(9.0, 5.0), 1) };
        let out = sample_diverse(&map, &req, 5, DEFAULT_DIVERSITY, "room").unwrap();
        assert!(!out.diversity_unmet);
        assert_eq!(out.trajectories.len(), 5);
        for i in 0..5 {
            for j in i + 1..5 {
                let a = resample(&out.trajectories[i].waypoints, 0.1);
                let b = resample(&out.trajectories[j].waypoints, 0.1);
                assert!(discrete_frechet(&a, &b) >= DEFAULT_DIVERSITY);
            }
        }
        let single = sample_diverse(&map, &req, 1, DEFAULT_DIVERSITY, "room").unwrap();
        assert_eq!(single.trajectories[0].waypoints, plan_waypoints(&map, &req).unwrap());
    }

    #[test]
    fn narrow_corridor_cannot_be_diverse() {
        // 1 m wide corridor; inflation leaves a 0.6 m free strip.
        let mut map = CostMap::uniform(Vec2::ZERO, 0.05, 200, 20, 0.01);
        for r in 0..20 {
            for c in 0..200 {
                let y = map.cell_center(c, r).y;
                let i = map.index(c, r);
                map.obstacles[i] = !(0.2..=0.8).contains(&y);
            }
        }
        let req = PlanRequest { max_samples: 3000, ..PlanRequest::new(Vec2::new(0.3, 0.5), Vec2::new(9.7, 0.5), 2) };
        let out = sample_diverse(&map, &req, 5, DEFAULT_DIVERSITY, "corridor").unwrap();
        assert!(out.diversity_unmet);
    }
}
