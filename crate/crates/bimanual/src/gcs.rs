//! Planning through a library of convex regions: build the region adjacency
//! graph (pairwise polytope-intersection feasibility with witness points),
//! pick a region sequence by graph search, then solve one convex program
//! placing a knot in each consecutive intersection. Waypoints stay inside
//! their regions, so linear interpolation between them is valid by region
//! soundness.

use crate::planners::Path;
use crate::regions::{Polytope, Region};
use crate::solver::lbfgs_minimize;
use crate::space::ParamConfig;
use nalgebra::DVector;
use std::collections::BinaryHeap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GcsError {
    #[error("start and goal are not connected through the region graph")]
    NoSequence,
    #[error("query configuration lies in no region: {0}")]
    NotCovered(String),
    #[error("regions disagree on branch, arm-angle cut, or grasp flag")]
    MixedConventions,
    #[error("region library is empty")]
    EmptyLibrary,
}

/// Region adjacency graph. `edges[i]` lists `(j, witness)` pairs where the
/// witness point lies in both region `i` and region `j`.
pub struct RegionGraph {
    pub regions: Vec<Region>,
    pub edges: Vec<Vec<(usize, DVector<f64>)>>,
}

/// Hinge-squared infeasibility of `q` against stacked polytopes, with its
/// gradient: zero exactly when `q` lies in every polytope.
fn stack_violation(polys: &[&Polytope], q: &DVector<f64>, grad: &mut DVector<f64>) -> f64 {
    grad.fill(0.0);
    let mut v = 0.0;
    for p in polys {
        for i in 0..p.n_planes() {
            let excess = p.a.row(i).dot(&q.transpose()) - p.b[i];
            if excess > 0.0 {
                v += excess * excess;
                for c in 0..q.len() {
                    grad[c] += 2.0 * excess * p.a[(i, c)];
                }
            }
        }
    }
    v
}

/// Finds a point in the intersection of two polytopes, or None when the
/// hinge-squared feasibility program cannot reach (numerically) zero.
pub fn intersection_witness(p1: &Polytope, p2: &Polytope, start: &DVector<f64>) -> Option<DVector<f64>> {
    let polys = [p1, p2];
    let res = lbfgs_minimize(
        |q, g| stack_violation(&polys, q, g),
        start.clone(),
        500,
        1e-14,
    );
    if res.value <= 1e-20 {
        Some(res.x)
    } else {
        None
    }
}

/// Builds the adjacency graph by testing every region pair for a nonempty
/// intersection, seeding each feasibility solve from the midpoint of the
/// ellipsoid centers.
pub fn build_region_graph(regions: Vec<Region>) -> Result<RegionGraph, GcsError> {
    if regions.is_empty() {
        return Err(GcsError::EmptyLibrary);
    }
    let first = &regions[0];
    if regions.iter().any(|r| {
        r.branch != first.branch || r.psi_cut != first.psi_cut || r.grasp_dof != first.grasp_dof
    }) {
        return Err(GcsError::MixedConventions);
    }
    let n = regions.len();
    let mut edges = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            let mid = (&regions[i].ellipsoid.center + &regions[j].ellipsoid.center) / 2.0;
            if let Some(w) = intersection_witness(&regions[i].polytope, &regions[j].polytope, &mid)
            {
                edges[i].push((j, w.clone()));
                edges[j].push((i, w));
            }
        }
    }
    Ok(RegionGraph { regions, edges })
}

/// Dijkstra over the witness-point graph. Vertices are the start point, the
/// goal point, and every intersection witness; two vertices connect when
/// they share a region (weight = Euclidean distance). Returns the region
/// sequence the shortest chain passes through.
fn region_sequence(
    graph: &RegionGraph,
    start_v: &DVector<f64>,
    start_regions: &[usize],
    goal_v: &DVector<f64>,
    goal_regions: &[usize],
) -> Option<Vec<usize>> {
    // Vertex list: 0 = start, 1 = goal, then witnesses with their two regions.
    let mut points: Vec<DVector<f64>> = vec![start_v.clone(), goal_v.clone()];
    let mut member_of: Vec<Vec<usize>> = vec![start_regions.to_vec(), goal_regions.to_vec()];
    for (i, adj) in graph.edges.iter().enumerate() {
        for (j, w) in adj {
            if i < *j {
                points.push(w.clone());
                member_of.push(vec![i, *j]);
            }
        }
    }
    let nv = points.len();
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nv];
    for a in 0..nv {
        for b in (a + 1)..nv {
            if member_of[a].iter().any(|r| member_of[b].contains(r)) {
                let w = (&points[a] - &points[b]).norm();
                adj[a].push((b, w));
                adj[b].push((a, w));
            }
        }
    }

    let mut dist = vec![f64::INFINITY; nv];
    let mut prev = vec![usize::MAX; nv];
    dist[0] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push((std::cmp::Reverse(OrderedF64(0.0)), 0usize));
    while let Some((std::cmp::Reverse(d), u)) = heap.pop() {
        if d.0 > dist[u] {
            continue;
        }
        if u == 1 {
            break;
        }
        for &(v, w) in &adj[u] {
            let nd = dist[u] + w;
            if nd < dist[v] {
                dist[v] = nd;
                prev[v] = u;
                heap.push((std::cmp::Reverse(OrderedF64(nd)), v));
            }
        }
    }
    if !dist[1].is_finite() {
        return None;
    }
    // Recover the vertex chain, then the region shared by each hop.
    let mut chain = vec![1usize];
    while *chain.last().unwrap() != 0 {
        chain.push(prev[*chain.last().unwrap()]);
    }
    chain.reverse();
    let mut seq: Vec<usize> = Vec::new();
    for hop in chain.windows(2) {
        let shared = member_of[hop[0]]
            .iter()
            .find(|r| member_of[hop[1]].contains(r))
            .copied()
            .expect("adjacent vertices share a region");
        if seq.last() != Some(&shared) {
            seq.push(shared);
        }
    }
    Some(seq)
}

/// Total-order wrapper for f64 heap keys.
#[derive(PartialEq)]
struct OrderedF64(f64);
impl Eq for OrderedF64 {}
impl PartialOrd for OrderedF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OrderedF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Smoothing constant for the chord-norm objective; keeps the gradient
/// defined when consecutive knots coincide.
const NORM_SMOOTHING: f64 = 1e-16;

/// Shortest piecewise-linear path for a fixed region sequence: one knot per
/// consecutive intersection, chord-length objective, hinge-squared penalty
/// with escalation until every knot satisfies its two regions to 1e-9.
/// Returns the knots (excluding the endpoints).
pub fn refine_sequence(
    polys: &[&Polytope],
    start: &DVector<f64>,
    goal: &DVector<f64>,
) -> Vec<DVector<f64>> {
    let k = polys.len().saturating_sub(1);
    if k == 0 {
        return Vec::new();
    }
    let d = start.len();
    // Initialize knots along the straight segment.
    let mut z = DVector::zeros(k * d);
    for i in 0..k {
        let t = (i + 1) as f64 / (k + 1) as f64;
        let p = start + (goal - start) * t;
        z.rows_mut(i * d, d).copy_from(&p);
    }

    let mut rho = 1e2;
    for _ in 0..12 {
        let objective = |zv: &DVector<f64>, g: &mut DVector<f64>| -> f64 {
            g.fill(0.0);
            let mut val = 0.0;
            let knot = |i: isize, zv: &DVector<f64>| -> DVector<f64> {
                if i < 0 {
                    start.clone()
                } else if i as usize >= k {
                    goal.clone()
                } else {
                    zv.rows(i as usize * d, d).clone_owned()
                }
            };
            for seg in -1..(k as isize) {
                let a = knot(seg, zv);
                let b = knot(seg + 1, zv);
                let diff = &b - &a;
                let len = (diff.norm_squared() + NORM_SMOOTHING).sqrt();
                val += len;
                let dgrad = diff / len;
                if seg >= 0 {
                    let mut ga = g.rows_mut(seg as usize * d, d);
                    ga -= &dgrad;
                }
                if (seg + 1) < k as isize {
                    let mut gb = g.rows_mut((seg + 1) as usize * d, d);
                    gb += &dgrad;
                }
            }
            for i in 0..k {
                let q = zv.rows(i * d, d).clone_owned();
                let mut gq = DVector::zeros(d);
                let pair = [polys[i], polys[i + 1]];
                let v = stack_violation(&pair, &q, &mut gq);
                val += rho * v;
                let mut gi = g.rows_mut(i * d, d);
                gi += gq * rho;
            }
            val
        };
        let res = lbfgs_minimize(objective, z.clone(), 600, 1e-12);
        z = res.x;
        // Stop escalating once every knot is feasible to tolerance.
        let worst = (0..k)
            .map(|i| {
                let q = z.rows(i * d, d).clone_owned();
                let mut g = DVector::zeros(d);
                let pair = [polys[i], polys[i + 1]];
                stack_violation(&pair, &q, &mut g).sqrt()
            })
            .fold(0.0_f64, f64::max);
        if worst <= 1e-12 {
            break;
        }
        rho *= 10.0;
    }
    (0..k).map(|i| z.rows(i * d, d).clone_owned()).collect()
}

/// Plans between two parametrized configurations through the region graph.
/// The waypoints of the returned path each satisfy their region's
/// inequalities, so every linear segment stays inside one region.
pub fn plan_gcs_lite(
    graph: &RegionGraph,
    start: &ParamConfig,
    goal: &ParamConfig,
) -> Result<Path, GcsError> {
    if graph.regions.is_empty() {
        return Err(GcsError::EmptyLibrary);
    }
    let branch = graph.regions[0].branch;
    let tol = 1e-9;
    let start_v = graph.regions[0].vec_of(start);
    let goal_v = graph.regions[0].vec_of(goal);
    let in_regions = |v: &DVector<f64>| -> Vec<usize> {
        graph
            .regions
            .iter()
            .enumerate()
            .filter(|(_, r)| r.polytope.contains(v, tol))
            .map(|(i, _)| i)
            .collect()
    };
    let start_regions = in_regions(&start_v);
    if start_regions.is_empty() {
        return Err(GcsError::NotCovered("start".into()));
    }
    let goal_regions = in_regions(&goal_v);
    if goal_regions.is_empty() {
        return Err(GcsError::NotCovered("goal".into()));
    }

    let seq = region_sequence(graph, &start_v, &start_regions, &goal_v, &goal_regions)
        .ok_or(GcsError::NoSequence)?;
    let polys: Vec<&Polytope> = seq.iter().map(|&i| &graph.regions[i].polytope).collect();
    let knots = refine_sequence(&polys, &start_v, &goal_v);

    let grasp_dof = graph.regions[0].grasp_dof;
    let mut waypoints = vec![crate::trajopt::vec_to_param(&start_v, grasp_dof)];
    for kn in &knots {
        waypoints.push(crate::trajopt::vec_to_param(kn, grasp_dof));
    }
    waypoints.push(crate::trajopt::vec_to_param(&goal_v, grasp_dof));
    Ok(Path { waypoints, branch })
}
