//! Benchmark harness: run any planning method on a named scene query and
//! report path lengths, online time, constraint violation and collision
//! margin, together with a dense trajectory for external auditing.
//!
//! Violation metrics are always computed from the densely resampled
//! trajectory (10x the edge-validation resolution), never from waypoints
//! alone, so inter-waypoint drift of the full-space baselines is visible.

use crate::collision::min_pair_distance;
use crate::gcs::{build_region_graph, plan_gcs_lite, GcsError};
use crate::planners::{
    birrt, prm_build, prm_query, projection_birrt_baseline, shortcut, FullPath, Path, PlanQuery,
    PlannerError,
};
use crate::regions::{grow_region_robust, load_regions, GrowOptions, Region, RegionError};
use crate::scene::{Scene, SceneError};
use crate::space::{xi, FullConfig, ParamConfig};
use crate::traj::{TrajHeader, Trajectory};
use crate::trajopt::{optimize_fullspace_baseline, optimize_parametrized, OptOptions, TrajOptError};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown method '{0}'")]
    UnknownMethod(String),
    #[error("scene has no query named '{0}'")]
    UnknownQuery(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Region(#[from] RegionError),
}

/// The planning methods the harness can run. The first four plan in the
/// parametrized space; the last two are full-space baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    IkBirrt,
    IkPrm,
    IkTrajopt,
    GcsLite,
    ProjectionBaseline,
    FullspaceTrajoptBaseline,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::IkBirrt,
        Method::IkPrm,
        Method::IkTrajopt,
        Method::GcsLite,
        Method::ProjectionBaseline,
        Method::FullspaceTrajoptBaseline,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::IkBirrt => "ik-birrt",
            Method::IkPrm => "ik-prm",
            Method::IkTrajopt => "ik-trajopt",
            Method::GcsLite => "gcs-lite",
            Method::ProjectionBaseline => "projection-baseline",
            Method::FullspaceTrajoptBaseline => "fullspace-trajopt-baseline",
        }
    }

    pub fn parse(s: &str) -> Result<Method, BenchError> {
        Method::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| BenchError::UnknownMethod(s.to_string()))
    }
}

/// Metrics of one planner run. Lengths and violations are `None` when the
/// run failed. All units are radians, meters and seconds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub query: String,
    pub seed: u64,
    pub success: bool,
    pub online_time_s: f64,
    /// Sum of 14-joint chord norms over the dense trajectory samples.
    pub path_length_fullspace: Option<f64>,
    /// Waypoint path length in the parametrized-space metric
    /// (absent for full-space baselines).
    pub path_length_param: Option<f64>,
    /// Largest end-effector-pair translation error (m) over dense samples.
    pub max_violation_translation_m: Option<f64>,
    /// Largest full-pose Frobenius error over dense samples.
    pub max_violation_frobenius: Option<f64>,
    /// Smallest collision-pair distance (m) over dense samples.
    pub collision_margin_min: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct BenchOptions {
    /// Planner time budget in seconds (0 means the 30 s default).
    pub budget_s: f64,
    /// Pre-grown region file for gcs-lite; grown on the fly when absent.
    pub regions_file: Option<PathBuf>,
    /// Directory for trajectory and report files; nothing written when absent.
    pub out_dir: Option<PathBuf>,
}

impl BenchOptions {
    fn budget(&self) -> f64 {
        if self.budget_s > 0.0 {
            self.budget_s
        } else {
            30.0
        }
    }
}

/// Interior samples per edge for the dense resampling: 10x the number of
/// validation steps an edge of the worst chord length gets.
fn dense_per_edge(scene: &Scene, max_edge_len: f64) -> usize {
    let steps = (max_edge_len / scene.edge_max_joint_step.max(1e-9)).ceil();
    ((10.0 * steps) as usize).clamp(10, 2000)
}

fn traj_from_path(scene: &Scene, path: &Path, header: &TrajHeader) -> Trajectory {
    let max_len = path
        .waypoints
        .windows(2)
        .map(|w| crate::space::distance(scene, &w[0], &w[1]))
        .fold(0.0, f64::max);
    Trajectory::from_param_path(scene, path, dense_per_edge(scene, max_len), header)
}

fn traj_from_full_path(scene: &Scene, path: &FullPath, header: &TrajHeader) -> Trajectory {
    let max_len = path
        .waypoints
        .windows(2)
        .map(|w| w[0].joint_distance(&w[1]))
        .fold(0.0, f64::max);
    Trajectory::from_full_path(scene, path, dense_per_edge(scene, max_len), header)
}

fn fill_metrics(report: &mut RunReport, scene: &Scene, traj: &Trajectory) {
    let (dt, dfro) = traj.max_grasp_violation(scene);
    report.path_length_fullspace = Some(traj.path_length_fullspace());
    report.max_violation_translation_m = Some(dt);
    report.max_violation_frobenius = Some(dfro);
    let margin = traj
        .samples
        .iter()
        .map(|s| {
            let full = FullConfig {
                theta_l: s.theta_l,
                theta_r: s.theta_r,
            };
            min_pair_distance(scene, &full)
        })
        .fold(f64::INFINITY, f64::min);
    report.collision_margin_min = Some(margin);
}

fn plan_birrt_shortcut(
    scene: &Scene,
    start: &ParamConfig,
    goal: &ParamConfig,
    seed: u64,
    budget_s: f64,
) -> Result<Path, PlannerError> {
    let query = PlanQuery {
        start: *start,
        goal: *goal,
        time_budget_s: budget_s,
        rng_seed: seed,
    };
    let path = birrt(scene, &query)?;
    Ok(shortcut(scene, &path, 100, seed))
}

/// Regions for a gcs-lite run: loaded from `file` when given, otherwise
/// grown around the waypoints of a sampled path between the endpoints.
/// All regions are relabeled to the first seed's arm-angle window, which is
/// sound while the path's arm angle stays within half a turn of it.
fn gcs_regions(
    scene: &Scene,
    start: &ParamConfig,
    goal: &ParamConfig,
    seed: u64,
    budget_s: f64,
    file: Option<&std::path::Path>,
) -> Result<Vec<Region>, String> {
    if let Some(f) = file {
        return load_regions(f).map_err(|e| e.to_string());
    }
    let branch = scene.default_branch;
    let path = plan_birrt_shortcut(scene, start, goal, seed, budget_s).map_err(|e| e.to_string())?;
    let opts = GrowOptions {
        max_outer: 3,
        audit_samples: 4000,
        rng_seed: seed,
        ..GrowOptions::default()
    };
    // Densify to 0.5 spacing so neighbouring regions overlap.
    let mut seeds: Vec<ParamConfig> = Vec::new();
    for w in path.waypoints.windows(2) {
        let d = crate::space::distance(scene, &w[0], &w[1]);
        let steps = (d / 0.5).ceil().max(1.0) as usize;
        for s in 0..steps {
            seeds.push(crate::space::interpolate(&w[0], &w[1], s as f64 / steps as f64));
        }
    }
    seeds.push(*path.waypoints.last().unwrap());
    let mut regions: Vec<Region> = Vec::new();
    for wp in &seeds {
        if regions.iter().any(|r| r.contains(wp, 0.0)) {
            continue;
        }
        let mut r = grow_region_robust(scene, wp, branch, &opts).map_err(|e| e.to_string())?;
        if let Some(first) = regions.first() {
            r.psi_cut = first.psi_cut;
        }
        regions.push(r);
    }
    Ok(regions)
}

/// Runs one method on one named query. Planner failures (timeouts,
/// disconnection, local infeasibility) are recorded in the report rather
/// than returned as errors; only scene/query/method problems are fatal.
pub fn run_benchmark(
    scene: &Scene,
    method: Method,
    query_name: &str,
    seed: u64,
    opts: &BenchOptions,
) -> Result<(RunReport, Option<Trajectory>), BenchError> {
    let query = scene
        .query(query_name)
        .ok_or_else(|| BenchError::UnknownQuery(query_name.to_string()))?
        .clone();
    let branch = scene.default_branch;
    let budget = opts.budget();
    let header = TrajHeader {
        scene_hash: scene.source_hash,
        method: method.label().to_string(),
        seed,
    };
    let mut report = RunReport {
        method: method.label().to_string(),
        query: query_name.to_string(),
        seed,
        success: false,
        online_time_s: 0.0,
        path_length_fullspace: None,
        path_length_param: None,
        max_violation_translation_m: None,
        max_violation_frobenius: None,
        collision_margin_min: None,
        error: None,
    };

    let mut traj = None;
    match method {
        Method::IkBirrt => {
            let t0 = Instant::now();
            match plan_birrt_shortcut(scene, &query.start, &query.goal, seed, budget) {
                Ok(path) => {
                    report.online_time_s = t0.elapsed().as_secs_f64();
                    report.success = true;
                    report.path_length_param = Some(path.length(scene));
                    traj = Some(traj_from_path(scene, &path, &header));
                }
                Err(e) => report.error = Some(e.to_string()),
            }
        }
        Method::IkPrm => {
            // The roadmap is bootstrapped with one sampled path so that the
            // start and goal components are guaranteed to be wired; random
            // nodes alone often fall into other components of the valid set.
            let t0 = Instant::now();
            let result = plan_birrt_shortcut(scene, &query.start, &query.goal, seed, budget)
                .and_then(|seed_path| {
                    prm_build(scene, branch, 200, 10, std::slice::from_ref(&seed_path), seed)
                })
                .and_then(|map| prm_query(&map, scene, &query.start, &query.goal));
            match result {
                Ok(path) => {
                    report.online_time_s = t0.elapsed().as_secs_f64();
                    report.success = true;
                    report.path_length_param = Some(path.length(scene));
                    traj = Some(traj_from_path(scene, &path, &header));
                }
                Err(e) => report.error = Some(e.to_string()),
            }
        }
        Method::IkTrajopt => {
            let t0 = Instant::now();
            let result: Result<_, String> =
                plan_birrt_shortcut(scene, &query.start, &query.goal, seed, budget)
                    .map_err(|e| e.to_string())
                    .and_then(|path| {
                        optimize_parametrized(scene, &path, &OptOptions::default())
                            .map_err(|e: TrajOptError| e.to_string())
                    });
            match result {
                Ok(spline) => {
                    report.online_time_s = t0.elapsed().as_secs_f64();
                    report.success = true;
                    report.path_length_param = Some(spline.to_path(200).length(scene));
                    traj = Some(Trajectory::from_spline(scene, &spline, 401, &header));
                }
                Err(e) => report.error = Some(e),
            }
        }
        Method::GcsLite => {
            // Region growth is offline preprocessing; only graph
            // construction and the plan itself are timed.
            let regions = gcs_regions(
                scene,
                &query.start,
                &query.goal,
                seed,
                budget,
                opts.regions_file.as_deref(),
            );
            let result: Result<Path, String> = regions.and_then(|regions| {
                let t0 = Instant::now();
                let out = build_region_graph(regions)
                    .and_then(|graph| plan_gcs_lite(&graph, &query.start, &query.goal))
                    .map_err(|e: GcsError| e.to_string());
                report.online_time_s = t0.elapsed().as_secs_f64();
                out
            });
            match result {
                Ok(path) => {
                    report.success = true;
                    report.path_length_param = Some(path.length(scene));
                    traj = Some(traj_from_path(scene, &path, &header));
                }
                Err(e) => report.error = Some(e),
            }
        }
        Method::ProjectionBaseline => {
            let endpoints = xi(scene, &query.start, branch)
                .and_then(|s| xi(scene, &query.goal, branch).map(|g| (s, g)));
            match endpoints {
                Ok((fs, fg)) => {
                    let t0 = Instant::now();
                    match projection_birrt_baseline(scene, &fs, &fg, budget, seed) {
                        Ok(path) => {
                            report.online_time_s = t0.elapsed().as_secs_f64();
                            report.success = true;
                            traj = Some(traj_from_full_path(scene, &path, &header));
                        }
                        Err(e) => report.error = Some(e.to_string()),
                    }
                }
                Err(e) => report.error = Some(e.to_string()),
            }
        }
        Method::FullspaceTrajoptBaseline => {
            // Initial guess: a parametrized plan mapped into the full space;
            // the optimizer then works on all 14 joints with the grasp
            // constraint enforced at collocation points only.
            let t0 = Instant::now();
            let result: Result<_, String> =
                plan_birrt_shortcut(scene, &query.start, &query.goal, seed, budget)
                    .map_err(|e| e.to_string())
                    .and_then(|path| {
                        let waypoints = path
                            .waypoints
                            .iter()
                            .map(|q| xi(scene, q, branch).map_err(|e| e.to_string()))
                            .collect::<Result<Vec<_>, _>>()?;
                        optimize_fullspace_baseline(
                            scene,
                            &FullPath { waypoints },
                            &OptOptions::default(),
                        )
                        .map_err(|e| e.to_string())
                    });
            match result {
                Ok(out) => {
                    report.online_time_s = t0.elapsed().as_secs_f64();
                    report.success = true;
                    // Sample the 14-joint spline densely, then emit the
                    // samples as a full-space path (no hidden projection).
                    let n = 401;
                    let waypoints: Vec<FullConfig> = (0..n)
                        .map(|i| {
                            let t = i as f64 / (n - 1) as f64;
                            let v = out.spline.value(t);
                            let mut l = [0.0; 7];
                            let mut r = [0.0; 7];
                            l.copy_from_slice(&v.as_slice()[0..7]);
                            r.copy_from_slice(&v.as_slice()[7..14]);
                            FullConfig {
                                theta_l: crate::arm::JointVector::new(l),
                                theta_r: crate::arm::JointVector::new(r),
                            }
                        })
                        .collect();
                    traj = Some(Trajectory::from_full_path(
                        scene,
                        &FullPath { waypoints },
                        9,
                        &header,
                    ));
                }
                Err(e) => report.error = Some(e),
            }
        }
    }

    if let Some(t) = &traj {
        fill_metrics(&mut report, scene, t);
    }

    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir)?;
        let stem = format!("{}_{}_{}", report.method, report.query, seed);
        if let Some(t) = &traj {
            t.save(&dir.join(format!("{stem}.traj")))?;
        }
        std::fs::write(
            dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(&report).expect("report serializes"),
        )?;
    }
    Ok((report, traj))
}

/// One aggregated row of a suite summary (a method on a query).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteRow {
    pub method: String,
    pub query: String,
    pub repeats: usize,
    pub successes: usize,
    pub timeouts: usize,
    pub mean_online_time_s: Option<f64>,
    pub mean_path_length_fullspace: Option<f64>,
    pub mean_path_length_param: Option<f64>,
    pub max_violation_translation_m: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub rows: Vec<SuiteRow>,
    pub reports: Vec<RunReport>,
}

impl SuiteSummary {
    /// Plain-text table, one row per method x query.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<28} {:<16} {:>4} {:>4} {:>8} {:>10} {:>10} {:>12}\n",
            "method", "query", "ok", "t/o", "time[s]", "len(full)", "len(Q)", "viol[m]"
        ));
        let fmt = |v: Option<f64>| match v {
            Some(x) => format!("{x:.4}"),
            None => "-".to_string(),
        };
        for r in &self.rows {
            out.push_str(&format!(
                "{:<28} {:<16} {:>2}/{:<2} {:>4} {:>8} {:>10} {:>10} {:>12}\n",
                r.method,
                r.query,
                r.successes,
                r.repeats,
                r.timeouts,
                fmt(r.mean_online_time_s),
                fmt(r.mean_path_length_fullspace),
                fmt(r.mean_path_length_param),
                fmt(r.max_violation_translation_m),
            ));
        }
        out
    }
}

/// Runs `methods` x `queries` x `repeats`, fanning runs out across a worker
/// pool; per-run errors are recorded in the reports, not propagated. With
/// zero repeats the summary is empty. Deterministic: run k of a cell uses
/// seed `base_seed + k` regardless of scheduling.
pub fn run_suite(
    scene: &Scene,
    methods: &[Method],
    queries: &[String],
    repeats: usize,
    base_seed: u64,
    opts: &BenchOptions,
) -> Result<SuiteSummary, BenchError> {
    for q in queries {
        if scene.query(q).is_none() {
            return Err(BenchError::UnknownQuery(q.clone()));
        }
    }
    let mut tasks = Vec::new();
    for &m in methods {
        for q in queries {
            for k in 0..repeats {
                tasks.push((m, q.clone(), base_seed + k as u64));
            }
        }
    }
    let reports: Vec<Mutex<Option<RunReport>>> =
        (0..tasks.len()).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(tasks.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= tasks.len() {
                    break;
                }
                let (m, q, seed) = &tasks[i];
                let report = match run_benchmark(scene, *m, q, *seed, opts) {
                    Ok((r, _)) => r,
                    Err(e) => RunReport {
                        method: m.label().to_string(),
                        query: q.clone(),
                        seed: *seed,
                        success: false,
                        online_time_s: 0.0,
                        path_length_fullspace: None,
                        path_length_param: None,
                        max_violation_translation_m: None,
                        max_violation_frobenius: None,
                        collision_margin_min: None,
                        error: Some(e.to_string()),
                    },
                };
                *reports[i].lock().unwrap() = Some(report);
            });
        }
    });
    let reports: Vec<RunReport> = reports
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every task ran"))
        .collect();

    let mut rows = Vec::new();
    for &m in methods {
        for q in queries {
            let cell: Vec<&RunReport> = reports
                .iter()
                .filter(|r| r.method == m.label() && &r.query == q)
                .collect();
            if cell.is_empty() {
                continue;
            }
            let ok: Vec<&&RunReport> = cell.iter().filter(|r| r.success).collect();
            let mean = |f: &dyn Fn(&RunReport) -> Option<f64>| -> Option<f64> {
                let vals: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
                if vals.is_empty() {
                    None
                } else {
                    Some(vals.iter().sum::<f64>() / vals.len() as f64)
                }
            };
            rows.push(SuiteRow {
                method: m.label().to_string(),
                query: q.clone(),
                repeats: cell.len(),
                successes: ok.len(),
                timeouts: cell
                    .iter()
                    .filter(|r| {
                        r.error.as_deref() == Some("time budget exhausted")
                    })
                    .count(),
                mean_online_time_s: mean(&|r| {
                    if r.success {
                        Some(r.online_time_s)
                    } else {
                        None
                    }
                }),
                mean_path_length_fullspace: mean(&|r| r.path_length_fullspace),
                mean_path_length_param: mean(&|r| r.path_length_param),
                max_violation_translation_m: ok
                    .iter()
                    .filter_map(|r| r.max_violation_translation_m)
                    .fold(None, |acc: Option<f64>, v| {
                        Some(acc.map_or(v, |a| a.max(v)))
                    }),
            });
        }
    }
    let summary = SuiteSummary { rows, reports };
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("summary.json"),
            serde_json::to_string_pretty(&summary).expect("summary serializes"),
        )?;
        std::fs::write(dir.join("summary.txt"), summary.table())?;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm::ArmModel;
    use crate::geometry::Pose;
    use crate::planners::sample_valid;
    use crate::scene::NamedQuery;
    use crate::space::{distance, interpolate, validate_edge, GraspTransform};
    use nalgebra::Vector3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn open_scene() -> Scene {
        let left = ArmModel::default_iiwa(Pose::from_translation(Vector3::new(0.0, 0.35, 0.0)));
        let right = ArmModel::default_iiwa(Pose::from_translation(Vector3::new(0.0, -0.35, 0.0)));
        let grasp = GraspTransform::fixed(Pose::new(
            *Pose::rotation_x(PI).rotation(),
            Vector3::new(0.0, 0.0, 0.30),
        ));
        Scene::from_parts(left, right, grasp, vec![], vec![], vec![], None)
    }

    /// Start/goal connected by construction (validated random walk).
    fn scene_with_query(min_dist: f64) -> Scene {
        let mut scene = open_scene();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let branch = scene.default_branch;
        let start = sample_valid(&scene, branch, &mut rng).unwrap();
        let mut cur = start;
        'outer: loop {
            let target = sample_valid(&scene, branch, &mut rng).unwrap();
            let mut t = 0.0;
            loop {
                let step = (0.3 / distance(&scene, &cur, &target).max(1e-9)).min(1.0 - t);
                if step <= 0.0 {
                    break;
                }
                t += step;
                let q = interpolate(&cur, &target, t);
                if !validate_edge(&scene, &cur, &q, branch, scene.tau_task).is_ok() {
                    break;
                }
                cur = q;
                if distance(&scene, &start, &cur) >= min_dist {
                    break 'outer;
                }
            }
        }
        scene.queries = vec![NamedQuery {
            name: "walk".into(),
            start,
            goal: cur,
        }];
        scene
    }

    #[test]
    fn unknown_method_and_query_are_rejected() {
        assert!(matches!(
            Method::parse("ik-warp"),
            Err(BenchError::UnknownMethod(_))
        ));
        let scene = open_scene();
        assert!(matches!(
            run_benchmark(&scene, Method::IkBirrt, "nope", 0, &BenchOptions::default()),
            Err(BenchError::UnknownQuery(_))
        ));
    }

    #[test]
    fn birrt_run_succeeds_with_tiny_violation() {
        let scene = scene_with_query(0.8);
        let (report, traj) =
            run_benchmark(&scene, Method::IkBirrt, "walk", 3, &BenchOptions::default()).unwrap();
        assert!(report.success, "{:?}", report.error);
        let traj = traj.unwrap();
        assert!(traj.samples.len() > 20);
        assert!(report.max_violation_translation_m.unwrap() <= 1e-8);
        assert!(report.path_length_param.unwrap() > 0.0);
        // Reported full-space length matches a recomputation from the file.
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("t.traj");
        traj.save(&f).unwrap();
        let back = Trajectory::load(&f).unwrap();
        assert!(
            (back.path_length_fullspace() - report.path_length_fullspace.unwrap()).abs() <= 1e-9
        );
    }

    #[test]
    fn projection_baseline_reports_violation() {
        let scene = scene_with_query(0.8);
        let (report, _) = run_benchmark(
            &scene,
            Method::ProjectionBaseline,
            "walk",
            3,
            &BenchOptions::default(),
        )
        .unwrap();
        assert!(report.success, "{:?}", report.error);
        // Interpolated edges leave the constraint manifold measurably.
        assert!(report.max_violation_translation_m.unwrap() > 1e-6);
    }

    #[test]
    fn runs_are_deterministic_per_seed() {
        let scene = scene_with_query(0.6);
        let opts = BenchOptions::default();
        let (_, a) = run_benchmark(&scene, Method::IkBirrt, "walk", 11, &opts).unwrap();
        let (_, b) = run_benchmark(&scene, Method::IkBirrt, "walk", 11, &opts).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (fa, fb) = (dir.path().join("a"), dir.path().join("b"));
        a.unwrap().save(&fa).unwrap();
        b.unwrap().save(&fb).unwrap();
        assert_eq!(std::fs::read(&fa).unwrap(), std::fs::read(&fb).unwrap());
    }

    #[test]
    fn suite_counts_reports_and_zero_repeats_is_empty() {
        let scene = scene_with_query(0.5);
        let opts = BenchOptions::default();
        let empty = run_suite(&scene, &[Method::IkBirrt], &["walk".into()], 0, 0, &opts).unwrap();
        assert!(empty.rows.is_empty() && empty.reports.is_empty());

        let out = tempfile::tempdir().unwrap();
        let opts = BenchOptions {
            out_dir: Some(out.path().to_path_buf()),
            ..BenchOptions::default()
        };
        let summary = run_suite(
            &scene,
            &[Method::IkBirrt, Method::IkPrm],
            &["walk".into()],
            2,
            100,
            &opts,
        )
        .unwrap();
        assert_eq!(summary.reports.len(), 4);
        assert_eq!(summary.rows.len(), 2);
        assert!(summary.rows.iter().all(|r| r.successes == 2));
        assert!(out.path().join("summary.json").exists());
        assert!(out.path().join("summary.txt").exists());
        assert!(out.path().join("ik-birrt_walk_100.traj").exists());
        assert!(!summary.table().is_empty());
    }
}
