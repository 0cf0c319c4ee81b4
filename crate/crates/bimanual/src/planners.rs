//! Sampling-based planners over the parametrized space: bidirectional RRT,
//! PRM, shortcut post-processing, and a projection-based baseline that plans
//! over both arms' joints and only enforces the grasp constraint at waypoints.

use crate::arm::{Branch, JointVector};
use crate::collision::is_collision_free;
use crate::scene::Scene;
use crate::space::{distance, interpolate, validate_edge, xi, FullConfig, ParamConfig};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BinaryHeap;
use std::f64::consts::PI;
use std::time::Instant;
use thiserror::Error;

/// RRT extension step, in Q-distance units.
pub const RRT_EXTEND_STEP: f64 = 0.3;
/// Probability of sampling the opposite tree's root instead of uniformly.
pub const RRT_GOAL_BIAS: f64 = 0.05;
/// Consecutive rejections before sampling gives up.
pub const SAMPLE_REJECTION_CAP: usize = 100_000;
/// Projection tolerance (squared pose error) for the baseline's waypoints.
pub const PROJECTION_TOL: f64 = 1e-10;
/// Iteration cap for one waypoint projection.
pub const PROJECTION_MAX_ITERS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("time budget exhausted")]
    Timeout,
    #[error("rejection sampling exhausted after {0} draws")]
    SamplingExhausted(usize),
    #[error("start and goal are in different roadmap components")]
    Disconnected,
    #[error("waypoint projection failed to converge")]
    ProjectionFailure,
    #[error("query endpoint invalid: {0}")]
    InvalidQuery(String),
}

/// A piecewise-linear path in Q on a fixed IK branch.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub waypoints: Vec<ParamConfig>,
    pub branch: Branch,
}

impl Path {
    /// Sum of waypoint-to-waypoint distances.
    pub fn length(&self, scene: &Scene) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| distance(scene, &w[0], &w[1]))
            .sum()
    }

    /// Re-validates every edge.
    pub fn revalidate(&self, scene: &Scene) -> bool {
        self.waypoints
            .windows(2)
            .all(|w| validate_edge(scene, &w[0], &w[1], self.branch, scene.tau_task).is_ok())
    }
}

/// A piecewise-linear path over both arms' joints (baseline output).
#[derive(Debug, Clone, PartialEq)]
pub struct FullPath {
    pub waypoints: Vec<FullConfig>,
}

impl FullPath {
    pub fn length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| w[0].joint_distance(&w[1]))
            .sum()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PlanQuery {
    pub start: ParamConfig,
    pub goal: ParamConfig,
    pub time_budget_s: f64,
    pub rng_seed: u64,
}

fn point_free(scene: &Scene, q: &ParamConfig, branch: Branch) -> bool {
    match xi(scene, q, branch) {
        Ok(full) => is_collision_free(scene, &full),
        Err(_) => false,
    }
}

fn random_param(rng: &mut impl Rng, scene: &Scene) -> ParamConfig {
    let mut a = [0.0; 7];
    for i in 0..7 {
        a[i] = scene.left.joint_lower[i]
            + rng.gen::<f64>() * (scene.left.joint_upper[i] - scene.left.joint_lower[i]);
    }
    let psi = rng.gen::<f64>() * 2.0 * PI - PI;
    match scene.grasp.extension_range {
        Some((lo, hi)) => {
            ParamConfig::with_grasp(JointVector::new(a), psi, lo + rng.gen::<f64>() * (hi - lo))
        }
        None => ParamConfig::new(JointVector::new(a), psi),
    }
}

/// Draws a valid, collision-free configuration by rejection sampling.
pub fn sample_valid(
    scene: &Scene,
    branch: Branch,
    rng: &mut impl Rng,
) -> Result<ParamConfig, PlannerError> {
    for _ in 0..SAMPLE_REJECTION_CAP {
        let q = random_param(rng, scene);
        if point_free(scene, &q, branch) {
            return Ok(q);
        }
    }
    Err(PlannerError::SamplingExhausted(SAMPLE_REJECTION_CAP))
}

// --- BiRRT ---------------------------------------------------------------

struct Tree {
    nodes: Vec<ParamConfig>,
    parents: Vec<usize>,
}

impl Tree {
    fn new(root: ParamConfig) -> Tree {
        Tree {
            nodes: vec![root],
            parents: vec![usize::MAX],
        }
    }

    fn nearest(&self, scene: &Scene, q: &ParamConfig) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, n) in self.nodes.iter().enumerate() {
            let d = distance(scene, n, q);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    fn path_to_root(&self, mut idx: usize) -> Vec<ParamConfig> {
        let mut out = Vec::new();
        while idx != usize::MAX {
            out.push(self.nodes[idx]);
            idx = self.parents[idx];
        }
        out
    }
}

enum Extend {
    Reached(usize),
    Advanced(usize),
    Trapped,
}

fn extend_tree(scene: &Scene, branch: Branch, tree: &mut Tree, target: &ParamConfig) -> Extend {
    let near = tree.nearest(scene, target);
    let from = tree.nodes[near];
    let d = distance(scene, &from, target);
    let (next, reached) = if d <= RRT_EXTEND_STEP {
        (*target, true)
    } else {
        (interpolate(&from, target, RRT_EXTEND_STEP / d), false)
    };
    if !validate_edge(scene, &from, &next, branch, scene.tau_task).is_ok() {
        return Extend::Trapped;
    }
    tree.nodes.push(next);
    tree.parents.push(near);
    let idx = tree.nodes.len() - 1;
    if reached {
        Extend::Reached(idx)
    } else {
        Extend::Advanced(idx)
    }
}

/// Repeatedly extends toward `target` until reached or trapped.
fn connect_tree(scene: &Scene, branch: Branch, tree: &mut Tree, target: &ParamConfig) -> Option<usize> {
    loop {
        match extend_tree(scene, branch, tree, target) {
            Extend::Reached(i) => return Some(i),
            Extend::Advanced(_) => {}
            Extend::Trapped => return None,
        }
    }
}

/// Bidirectional RRT between `query.start` and `query.goal`.
pub fn birrt(scene: &Scene, query: &PlanQuery) -> Result<Path, PlannerError> {
    let branch = scene.default_branch;
    if !point_free(scene, &query.start, branch) {
        return Err(PlannerError::InvalidQuery("start invalid or in collision".into()));
    }
    if !point_free(scene, &query.goal, branch) {
        return Err(PlannerError::InvalidQuery("goal invalid or in collision".into()));
    }
    if distance(scene, &query.start, &query.goal) < 1e-12 {
        return Ok(Path {
            waypoints: vec![query.start],
            branch,
        });
    }

    let deadline = Instant::now() + std::time::Duration::from_secs_f64(query.time_budget_s);
    let mut rng = ChaCha8Rng::seed_from_u64(query.rng_seed);
    let mut ta = Tree::new(query.start);
    let mut tb = Tree::new(query.goal);
    let mut a_is_start = true;

    loop {
        if Instant::now() >= deadline {
            return Err(PlannerError::Timeout);
        }
        let target = if rng.gen::<f64>() < RRT_GOAL_BIAS {
            tb.nodes[0]
        } else {
            random_param(&mut rng, scene)
        };
        let joined = match extend_tree(scene, branch, &mut ta, &target) {
            Extend::Trapped => None,
            Extend::Reached(i) | Extend::Advanced(i) => {
                let new = ta.nodes[i];
                connect_tree(scene, branch, &mut tb, &new).map(|j| (i, j))
            }
        };
        if let Some((ia, ib)) = joined {
            let mut half_a = ta.path_to_root(ia);
            half_a.reverse();
            let mut half_b = tb.path_to_root(ib);
            // The connect target equals ta.nodes[ia]; drop the duplicate.
            half_b.remove(0);
            let mut waypoints = half_a;
            waypoints.extend(half_b);
            if !a_is_start {
                waypoints.reverse();
            }
            return Ok(Path { waypoints, branch });
        }
        std::mem::swap(&mut ta, &mut tb);
        a_is_start = !a_is_start;
    }
}

// --- shortcut ------------------------------------------------------------

/// Random shortcut post-processing: repeatedly tries to replace the subpath
/// between two random intermediate points with a straight edge. Path length
/// is nonincreasing across iterations.
pub fn shortcut(scene: &Scene, path: &Path, iterations: usize, seed: u64) -> Path {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wp = path.waypoints.clone();
    for _ in 0..iterations {
        if wp.len() < 3 {
            break;
        }
        // Random points on two distinct edges.
        let mut e1 = rng.gen_range(0..wp.len() - 1);
        let mut e2 = rng.gen_range(0..wp.len() - 1);
        if e1 == e2 {
            continue;
        }
        if e1 > e2 {
            std::mem::swap(&mut e1, &mut e2);
        }
        let t1 = rng.gen::<f64>();
        let t2 = rng.gen::<f64>();
        let p1 = interpolate(&wp[e1], &wp[e1 + 1], t1);
        let p2 = interpolate(&wp[e2], &wp[e2 + 1], t2);
        let old_len: f64 = distance(scene, &p1, &wp[e1 + 1])
            + wp[e1 + 1..=e2]
                .windows(2)
                .map(|w| distance(scene, &w[0], &w[1]))
                .sum::<f64>()
            + distance(scene, &wp[e2], &p2);
        let new_len = distance(scene, &p1, &p2);
        if new_len >= old_len - 1e-12 {
            continue;
        }
        if validate_edge(scene, &p1, &p2, path.branch, scene.tau_task).is_ok() {
            let mut next = wp[..=e1].to_vec();
            next.push(p1);
            next.push(p2);
            next.extend_from_slice(&wp[e2 + 1..]);
            wp = next;
        }
    }
    Path {
        waypoints: wp,
        branch: path.branch,
    }
}

// --- PRM -----------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Roadmap {
    pub nodes: Vec<ParamConfig>,
    /// Adjacency lists of (neighbor index, edge length).
    pub edges: Vec<Vec<(usize, f64)>>,
    pub branch: Branch,
}

impl Roadmap {
    fn add_edge(&mut self, a: usize, b: usize, w: f64) {
        if !self.edges[a].iter().any(|&(n, _)| n == b) {
            self.edges[a].push((b, w));
            self.edges[b].push((a, w));
        }
    }
}

/// Builds a roadmap: seed-path waypoints plus `n_nodes` rejection samples,
/// each wired to its `k_neighbors` nearest nodes where the edge validates.
pub fn prm_build(
    scene: &Scene,
    branch: Branch,
    n_nodes: usize,
    k_neighbors: usize,
    seed_paths: &[Path],
    seed: u64,
) -> Result<Roadmap, PlannerError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map = Roadmap {
        nodes: Vec::new(),
        edges: Vec::new(),
        branch,
    };
    // Seed-path chains come in pre-wired.
    for p in seed_paths {
        let base = map.nodes.len();
        for q in &p.waypoints {
            map.nodes.push(*q);
            map.edges.push(Vec::new());
        }
        for i in 1..p.waypoints.len() {
            let w = distance(scene, &p.waypoints[i - 1], &p.waypoints[i]);
            map.add_edge(base + i - 1, base + i, w);
        }
    }
    for _ in 0..n_nodes {
        let q = sample_valid(scene, branch, &mut rng)?;
        let idx = map.nodes.len();
        let mut near: Vec<(usize, f64)> = map
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (i, distance(scene, n, &q)))
            .collect();
        near.sort_by(|a, b| a.1.total_cmp(&b.1));
        map.nodes.push(q);
        map.edges.push(Vec::new());
        for &(i, w) in near.iter().take(k_neighbors) {
            if validate_edge(scene, &map.nodes[i], &q, branch, scene.tau_task).is_ok() {
                map.add_edge(i, idx, w);
            }
        }
    }
    Ok(map)
}

fn dijkstra(map: &Roadmap, from: usize, to: usize) -> Option<Vec<usize>> {
    #[derive(PartialEq)]
    struct Item(f64, usize);
    impl Eq for Item {}
    impl Ord for Item {
        fn cmp(&self, o: &Self) -> std::cmp::Ordering {
            o.0.total_cmp(&self.0)
        }
    }
    impl PartialOrd for Item {
        fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(o))
        }
    }
    let n = map.nodes.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    dist[from] = 0.0;
    heap.push(Item(0.0, from));
    while let Some(Item(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        if u == to {
            break;
        }
        for &(v, w) in &map.edges[u] {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                prev[v] = u;
                heap.push(Item(nd, v));
            }
        }
    }
    if dist[to].is_infinite() {
        return None;
    }
    let mut order = vec![to];
    while *order.last().unwrap() != from {
        order.push(prev[*order.last().unwrap()]);
    }
    order.reverse();
    Some(order)
}

/// Connects the endpoints to the roadmap and returns the shortest graph path.
pub fn prm_query(
    map: &Roadmap,
    scene: &Scene,
    start: &ParamConfig,
    goal: &ParamConfig,
) -> Result<Path, PlannerError> {
    let branch = map.branch;
    if !point_free(scene, start, branch) || !point_free(scene, goal, branch) {
        return Err(PlannerError::InvalidQuery("endpoint invalid or in collision".into()));
    }
    if distance(scene, start, goal) < 1e-12 {
        return Ok(Path {
            waypoints: vec![*start],
            branch,
        });
    }
    let mut work = map.clone();
    let k = 10;
    let attach = |work: &mut Roadmap, q: &ParamConfig| -> usize {
        let idx = work.nodes.len();
        let mut near: Vec<(usize, f64)> = work
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (i, distance(scene, n, q)))
            .collect();
        near.sort_by(|a, b| a.1.total_cmp(&b.1));
        work.nodes.push(*q);
        work.edges.push(Vec::new());
        for &(i, w) in near.iter().take(k) {
            if validate_edge(scene, &work.nodes[i], q, branch, scene.tau_task).is_ok() {
                work.add_edge(i, idx, w);
            }
        }
        idx
    };
    let s = attach(&mut work, start);
    let g = attach(&mut work, goal);
    let order = dijkstra(&work, s, g).ok_or(PlannerError::Disconnected)?;
    Ok(Path {
        waypoints: order.into_iter().map(|i| work.nodes[i]).collect(),
        branch,
    })
}

// --- projection baseline -------------------------------------------------

/// Projects the subordinate arm's joints onto the grasp constraint manifold
/// by damped-least-squares differential IK, holding the controlled arm fixed.
pub fn project_to_constraint(scene: &Scene, full: &FullConfig) -> Result<FullConfig, PlannerError> {
    let target = crate::space::phi_t(
        &scene.left.forward_kinematics(&full.theta_l),
        &scene.grasp.pose_at(0.0),
    );
    let mut theta = full.theta_r;
    let damping = 1e-4;
    for _ in 0..PROJECTION_MAX_ITERS {
        let pose = scene.right.forward_kinematics(&theta);
        if crate::geometry::pose_error(&target, &pose) <= PROJECTION_TOL {
            return Ok(FullConfig {
                theta_l: full.theta_l,
                theta_r: theta,
            });
        }
        // Task-space error twist (translation; rotation via the log map).
        let dt = target.translation() - pose.translation();
        let drot =
            crate::geometry::Pose::log_rotation(&(target.rotation() * pose.rotation().transpose()));
        let mut err = nalgebra::SVector::<f64, 6>::zeros();
        for i in 0..3 {
            err[i] = dt[i];
            err[i + 3] = drot[i];
        }
        let j = scene.right.fk_jacobian(&theta);
        // dq = J^T (J J^T + lambda I)^-1 err
        let jjt = j * j.transpose() + nalgebra::SMatrix::<f64, 6, 6>::identity() * damping;
        let Some(inv) = jjt.try_inverse() else {
            return Err(PlannerError::ProjectionFailure);
        };
        let dq = j.transpose() * (inv * err);
        let mut a = theta.angles;
        for i in 0..7 {
            a[i] += dq[i];
        }
        theta = JointVector::new(a);
    }
    Err(PlannerError::ProjectionFailure)
}

fn full_interpolate(a: &FullConfig, b: &FullConfig, t: f64) -> FullConfig {
    let mut l = [0.0; 7];
    let mut r = [0.0; 7];
    for i in 0..7 {
        l[i] = a.theta_l.angles[i] + t * (b.theta_l.angles[i] - a.theta_l.angles[i]);
        r[i] = a.theta_r.angles[i] + t * (b.theta_r.angles[i] - a.theta_r.angles[i]);
    }
    FullConfig {
        theta_l: JointVector::new(l),
        theta_r: JointVector::new(r),
    }
}

fn full_point_free(scene: &Scene, q: &FullConfig) -> bool {
    scene.left.limit_violation_index(&q.theta_l).is_none()
        && scene.right.limit_violation_index(&q.theta_r).is_none()
        && is_collision_free(scene, q)
}

/// Collision/limit check along a straight joint-space segment. The grasp
/// constraint is deliberately NOT enforced here: the baseline interpolates
/// off-manifold between projected waypoints.
fn full_edge_free(scene: &Scene, a: &FullConfig, b: &FullConfig) -> bool {
    let steps = (a.max_abs_diff(b) / scene.edge_max_joint_step).ceil().max(1.0) as usize;
    (0..=steps).all(|k| full_point_free(scene, &full_interpolate(a, b, k as f64 / steps as f64)))
}

struct FullTree {
    nodes: Vec<FullConfig>,
    parents: Vec<usize>,
}

impl FullTree {
    fn nearest(&self, q: &FullConfig) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, n) in self.nodes.iter().enumerate() {
            let d = n.joint_distance(q);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

/// Constrained BiRRT baseline in the 14-joint space: every waypoint is
/// projected onto the grasp manifold, straight edges between waypoints are
/// checked for collision only.
pub fn projection_birrt_baseline(
    scene: &Scene,
    start: &FullConfig,
    goal: &FullConfig,
    time_budget_s: f64,
    seed: u64,
) -> Result<FullPath, PlannerError> {
    for (name, q) in [("start", start), ("goal", goal)] {
        if crate::space::kinematic_residual(scene, q, None) > 1e-6 {
            return Err(PlannerError::InvalidQuery(format!(
                "{name} violates the grasp constraint"
            )));
        }
        if !full_point_free(scene, q) {
            return Err(PlannerError::InvalidQuery(format!("{name} in collision")));
        }
    }
    if start.joint_distance(goal) < 1e-12 {
        return Ok(FullPath {
            waypoints: vec![*start],
        });
    }
    let deadline = Instant::now() + std::time::Duration::from_secs_f64(time_budget_s);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = RRT_EXTEND_STEP;
    let mut ta = FullTree {
        nodes: vec![*start],
        parents: vec![usize::MAX],
    };
    let mut tb = FullTree {
        nodes: vec![*goal],
        parents: vec![usize::MAX],
    };
    let mut a_is_start = true;

    let sample = |rng: &mut ChaCha8Rng| -> FullConfig {
        let draw = |model: &crate::arm::ArmModel, rng: &mut ChaCha8Rng| {
            let mut a = [0.0; 7];
            for i in 0..7 {
                a[i] = model.joint_lower[i]
                    + rng.gen::<f64>() * (model.joint_upper[i] - model.joint_lower[i]);
            }
            JointVector::new(a)
        };
        FullConfig {
            theta_l: draw(&scene.left, rng),
            theta_r: draw(&scene.right, rng),
        }
    };

    let extend = |scene: &Scene, tree: &mut FullTree, target: &FullConfig| -> Option<(usize, bool)> {
        let near = tree.nearest(target);
        let from = tree.nodes[near];
        let d = from.joint_distance(target);
        let (raw, reached) = if d <= step {
            (*target, true)
        } else {
            (full_interpolate(&from, target, step / d), false)
        };
        let projected = project_to_constraint(scene, &raw).ok()?;
        if !full_point_free(scene, &projected) || !full_edge_free(scene, &from, &projected) {
            return None;
        }
        tree.nodes.push(projected);
        tree.parents.push(near);
        // Reached only counts when projection kept us at the target.
        let hit = reached && projected.joint_distance(target) < 1e-9;
        Some((tree.nodes.len() - 1, hit))
    };

    loop {
        if Instant::now() >= deadline {
            return Err(PlannerError::Timeout);
        }
        let target = if rng.gen::<f64>() < RRT_GOAL_BIAS {
            tb.nodes[0]
        } else {
            sample(&mut rng)
        };
        let mut joined = None;
        if let Some((ia, _)) = extend(scene, &mut ta, &target) {
            let new = ta.nodes[ia];
            // Connect: repeat extension toward the new node.
            loop {
                match extend(scene, &mut tb, &new) {
                    Some((ib, true)) => {
                        joined = Some((ia, ib));
                        break;
                    }
                    Some((_, false)) => {}
                    None => break,
                }
            }
        }
        if let Some((ia, ib)) = joined {
            let trace = |tree: &FullTree, mut i: usize| {
                let mut out = Vec::new();
                while i != usize::MAX {
                    out.push(tree.nodes[i]);
                    i = tree.parents[i];
                }
                out
            };
            let mut half_a = trace(&ta, ia);
            half_a.reverse();
            let mut half_b = trace(&tb, ib);
            half_b.remove(0);
            let mut waypoints = half_a;
            waypoints.extend(half_b);
            if !a_is_start {
                waypoints.reverse();
            }
            return Ok(FullPath { waypoints });
        }
        std::mem::swap(&mut ta, &mut tb);
        a_is_start = !a_is_start;
    }
}

/// Largest grasp-constraint violation (meters, translation) seen when the
/// path is densely resampled with straight joint-space interpolation.
pub fn max_violation_on_full_path(scene: &Scene, path: &FullPath, samples_per_edge: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for w in path.waypoints.windows(2) {
        for k in 0..=samples_per_edge {
            let t = k as f64 / samples_per_edge as f64;
            let q = full_interpolate(&w[0], &w[1], t);
            worst = worst.max(crate::space::translation_residual(scene, &q, None));
        }
    }
    worst
}
