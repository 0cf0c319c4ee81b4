//! Kinematic trajectory optimization. The parametrized optimizer shortens
//! the full-configuration arc length of `xi` composed with a B-spline in Q,
//! with validity and collision margins as penalty constraints — the grasp
//! constraint itself needs no handling because it holds by construction. The
//! full-space baseline optimizes over both arms' joints and enforces the
//! grasp constraint only at collocation points.

use crate::arm::{Branch, JointVector};
use crate::collision::min_pair_distance;
use crate::planners::{FullPath, Path};
use crate::scene::Scene;
use crate::solver::lbfgs_minimize;
use crate::space::{
    distance, interpolate, phi_t, validate_edge, xi, xi_clamped, xi_jacobian, FullConfig,
    ParamConfig,
};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajOptError {
    #[error("optimizer stalled with max constraint violation {max_violation}")]
    LocalInfeasible { max_violation: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// A clamped B-spline curve with vector-valued control points. Parametrized
/// paths use dimension 8 (or 9 with a grasp coordinate, with the arm angle
/// unwrapped to the real line); the full-space baseline uses dimension 14.
#[derive(Debug, Clone, PartialEq)]
pub struct SplinePath {
    pub control_points: Vec<DVector<f64>>,
    pub degree: usize,
    pub knots: Vec<f64>,
    pub branch: Branch,
    pub grasp_dof: bool,
}

/// Uniform clamped knot vector on [0, 1].
pub fn uniform_clamped_knots(n_control: usize, degree: usize) -> Vec<f64> {
    let mut knots = vec![0.0; n_control + degree + 1];
    let interior = n_control - degree;
    for i in 0..knots.len() {
        knots[i] = if i <= degree {
            0.0
        } else if i >= n_control {
            1.0
        } else {
            (i - degree) as f64 / interior as f64
        };
    }
    knots
}

impl SplinePath {
    pub fn dim(&self) -> usize {
        self.control_points[0].len()
    }

    /// All basis-function values at `t` (Cox–de Boor, zeroth-derivative).
    pub fn basis_at(&self, t: f64) -> Vec<f64> {
        let m = self.control_points.len();
        let p = self.degree;
        let knots = &self.knots;
        let t = t.clamp(0.0, 1.0);
        let mut b = vec![0.0; m + p];
        // Degree-0 seed: the half-open span containing t, closed at 1.
        let span = if t >= 1.0 {
            m - 1
        } else {
            let mut s = p;
            while s + 1 < knots.len() && knots[s + 1] <= t {
                s += 1;
            }
            s
        };
        b[span] = 1.0;
        for d in 1..=p {
            for i in 0..m + p - d {
                let left = {
                    let den = knots[i + d] - knots[i];
                    if den > 0.0 {
                        (t - knots[i]) / den * b[i]
                    } else {
                        0.0
                    }
                };
                let right = {
                    let den = knots[i + d + 1] - knots[i + 1];
                    if den > 0.0 {
                        (knots[i + d + 1] - t) / den * b[i + 1]
                    } else {
                        0.0
                    }
                };
                b[i] = left + right;
            }
        }
        b.truncate(m);
        b
    }

    pub fn value(&self, t: f64) -> DVector<f64> {
        let b = self.basis_at(t);
        let mut v = DVector::zeros(self.dim());
        for (i, w) in b.iter().enumerate() {
            if *w != 0.0 {
                v += &self.control_points[i] * *w;
            }
        }
        v
    }

    pub fn config_at(&self, t: f64) -> ParamConfig {
        vec_to_param(&self.value(t), self.grasp_dof)
    }

    /// Least-squares fit to samples at uniform parameters with the first and
    /// last control points pinned to the end samples.
    pub fn fit(
        samples: &[DVector<f64>],
        n_control: usize,
        degree: usize,
        branch: Branch,
        grasp_dof: bool,
    ) -> SplinePath {
        assert!(n_control >= degree + 1);
        assert!(samples.len() >= n_control);
        let dim = samples[0].len();
        let mut spline = SplinePath {
            control_points: vec![DVector::zeros(dim); n_control],
            degree,
            knots: uniform_clamped_knots(n_control, degree),
            branch,
            grasp_dof,
        };
        let ns = samples.len();
        let first = samples[0].clone();
        let last = samples[ns - 1].clone();
        // Solve for interior control points; move pinned columns to the rhs.
        let rows = ns;
        let cols = n_control - 2;
        let mut a = DMatrix::<f64>::zeros(rows, cols);
        let mut rhs = DMatrix::<f64>::zeros(rows, dim);
        for (r, s) in samples.iter().enumerate() {
            let t = r as f64 / (ns - 1) as f64;
            let b = spline.basis_at(t);
            for c in 0..cols {
                a[(r, c)] = b[c + 1];
            }
            let resid = s - &first * b[0] - &last * b[n_control - 1];
            for d in 0..dim {
                rhs[(r, d)] = resid[d];
            }
        }
        let sol = a
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .expect("least-squares fit");
        spline.control_points[0] = first;
        spline.control_points[n_control - 1] = last;
        for c in 0..cols {
            spline.control_points[c + 1] = sol.row(c).transpose();
        }
        spline
    }

    /// Densely sampled polyline in Q (parametrized splines only).
    pub fn to_path(&self, n: usize) -> Path {
        Path {
            waypoints: (0..=n)
                .map(|k| self.config_at(k as f64 / n as f64))
                .collect(),
            branch: self.branch,
        }
    }
}

pub fn param_to_vec(q: &ParamConfig, psi_unwrapped: f64) -> DVector<f64> {
    let mut v = DVector::zeros(q.dim());
    for i in 0..7 {
        v[i] = q.theta_l.angles[i];
    }
    v[7] = psi_unwrapped;
    if let Some(g) = q.grasp_extension {
        v[8] = g;
    }
    v
}

pub fn vec_to_param(v: &DVector<f64>, grasp_dof: bool) -> ParamConfig {
    let mut a = [0.0; 7];
    a.copy_from_slice(v.as_slice().split_at(7).0);
    if grasp_dof {
        ParamConfig::with_grasp(JointVector::new(a), v[7], v[8])
    } else {
        ParamConfig::new(JointVector::new(a), v[7])
    }
}

fn full_to_vec(f: &FullConfig) -> DVector<f64> {
    let mut v = DVector::zeros(14);
    for i in 0..7 {
        v[i] = f.theta_l.angles[i];
        v[i + 7] = f.theta_r.angles[i];
    }
    v
}

fn vec_to_full(v: &DVector<f64>) -> FullConfig {
    let mut l = [0.0; 7];
    let mut r = [0.0; 7];
    l.copy_from_slice(&v.as_slice()[0..7]);
    r.copy_from_slice(&v.as_slice()[7..14]);
    FullConfig {
        theta_l: JointVector::new(l),
        theta_r: JointVector::new(r),
    }
}

#[derive(Debug, Clone)]
pub struct OptOptions {
    pub n_control: usize,
    pub degree: usize,
    /// Chord count for the arc-length objective.
    pub objective_samples: usize,
    /// Sample count for the penalty constraints.
    pub constraint_samples: usize,
    /// Inset applied inside joint limits, and margin on trig arguments.
    pub validity_inset: f64,
    /// Extra clearance demanded on top of the scene's collision margin.
    pub collision_extra: f64,
    pub penalty_initial: f64,
    pub penalty_growth: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Max allowed aggregated violation at a constraint sample on exit.
    pub violation_tol: f64,
    pub objective_tol: f64,
}

impl Default for OptOptions {
    fn default() -> Self {
        OptOptions {
            n_control: 20,
            degree: 3,
            objective_samples: 60,
            constraint_samples: 40,
            validity_inset: 1e-3,
            collision_extra: 2e-3,
            penalty_initial: 10.0,
            penalty_growth: 5.0,
            max_outer: 6,
            max_inner: 80,
            violation_tol: 1e-8,
            objective_tol: 1e-6,
        }
    }
}

fn hinge(x: f64) -> f64 {
    x.max(0.0)
}

/// Aggregated constraint violation at one parametrized configuration:
/// joint-limit insets for both arms, trig-argument margins, and collision
/// clearance. Zero on the demanded interior.
fn param_violation(scene: &Scene, q: &ParamConfig, branch: Branch, opts: &OptOptions) -> f64 {
    let mut v = 0.0;
    for i in 0..7 {
        v += hinge(q.theta_l.angles[i] - (scene.left.joint_upper[i] - opts.validity_inset));
        v += hinge((scene.left.joint_lower[i] + opts.validity_inset) - q.theta_l.angles[i]);
    }
    if let Some((lo, hi)) = scene.grasp.extension_range {
        if let Some(g) = q.grasp_extension {
            v += hinge(g - hi) + hinge(lo - g);
        }
    }
    let g = q.grasp_extension.unwrap_or(0.0);
    let target = phi_t(
        &scene.left.forward_kinematics(&q.theta_l),
        &scene.grasp.pose_at(g),
    );
    for w in scene.right.trig_arguments(&target) {
        v += hinge(w.abs() - (1.0 - opts.validity_inset));
    }
    let full = xi_clamped(scene, q, branch);
    for i in 0..7 {
        v += hinge(full.theta_r.angles[i] - (scene.right.joint_upper[i] - opts.validity_inset));
        v += hinge((scene.right.joint_lower[i] + opts.validity_inset) - full.theta_r.angles[i]);
    }
    v += hinge(scene.collision_margin + opts.collision_extra - min_pair_distance(scene, &full));
    v
}

/// Resamples a path at `n+1` uniform arc-length stations, with the arm angle
/// unwrapped to a continuous real coordinate.
fn resample_unwrapped(scene: &Scene, path: &Path, n: usize) -> Vec<DVector<f64>> {
    let wps = &path.waypoints;
    let mut cum = vec![0.0];
    for w in wps.windows(2) {
        cum.push(cum.last().unwrap() + distance(scene, &w[0], &w[1]));
    }
    let total = *cum.last().unwrap();
    let mut psi_acc = wps[0].psi_r.radians();
    let mut prev_psi = psi_acc;
    let mut out = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let s = total * k as f64 / n as f64;
        let seg = cum.partition_point(|&c| c < s).clamp(1, wps.len() - 1);
        let seg_len = (cum[seg] - cum[seg - 1]).max(1e-300);
        let t = ((s - cum[seg - 1]) / seg_len).clamp(0.0, 1.0);
        let q = interpolate(&wps[seg - 1], &wps[seg], t);
        let raw = q.psi_r.radians();
        psi_acc += crate::geometry::wrap_angle(raw - prev_psi);
        prev_psi = raw;
        out.push(param_to_vec(&q, psi_acc));
    }
    out
}

struct ObjectiveEval {
    value: f64,
    /// Gradient with respect to the interior control points, flattened.
    grad: DVector<f64>,
}

/// Arc length of `xi` composed with the spline, by chord sums over the
/// objective grid, with the analytic gradient through the IK Jacobian.
fn parametrized_objective(scene: &Scene, spline: &SplinePath, opts: &OptOptions) -> ObjectiveEval {
    let n = opts.objective_samples;
    let dim = spline.dim();
    let m = spline.control_points.len();
    let smoothing = 1e-12;

    let mut fulls = Vec::with_capacity(n + 1);
    let mut jacs = Vec::with_capacity(n + 1);
    let mut bases = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let t = k as f64 / n as f64;
        let q = spline.config_at(t);
        fulls.push(full_to_vec(&xi_clamped(scene, &q, spline.branch)));
        jacs.push(xi_jacobian(scene, &q, spline.branch).ok());
        bases.push(spline.basis_at(t));
    }

    let mut value = 0.0;
    let mut g_q = vec![DVector::<f64>::zeros(dim); n + 1];
    for k in 0..n {
        let delta = &fulls[k + 1] - &fulls[k];
        let len = (delta.norm_squared() + smoothing).sqrt();
        value += len;
        let u = delta / len;
        for (idx, sign) in [(k, -1.0), (k + 1, 1.0)] {
            match &jacs[idx] {
                Some(j) => {
                    let contrib = j.transpose() * &u * sign;
                    g_q[idx] += contrib;
                }
                None => {
                    // Subordinate block unavailable: keep the controlled-arm
                    // identity rows so the gradient stays descent-informative.
                    for i in 0..7 {
                        g_q[idx][i] += sign * u[i];
                    }
                }
            }
        }
    }

    let mut grad = DVector::zeros((m - 2) * dim);
    for k in 0..=n {
        for c in 1..m - 1 {
            let w = bases[k][c];
            if w != 0.0 {
                for d in 0..dim {
                    grad[(c - 1) * dim + d] += w * g_q[k][d];
                }
            }
        }
    }
    ObjectiveEval { value, grad }
}

fn interior_to_spline(template: &SplinePath, z: &DVector<f64>) -> SplinePath {
    let mut s = template.clone();
    let dim = s.dim();
    for c in 1..s.control_points.len() - 1 {
        for d in 0..dim {
            s.control_points[c][d] = z[(c - 1) * dim + d];
        }
    }
    s
}

fn spline_interior(s: &SplinePath) -> DVector<f64> {
    let dim = s.dim();
    let m = s.control_points.len();
    let mut z = DVector::zeros((m - 2) * dim);
    for c in 1..m - 1 {
        for d in 0..dim {
            z[(c - 1) * dim + d] = s.control_points[c][d];
        }
    }
    z
}

/// Shortens a valid path by spline optimization in Q, keeping validity and
/// collision margins as penalty constraints. The returned spline re-validates
/// densely; otherwise `LocalInfeasible`.
pub fn optimize_parametrized(
    scene: &Scene,
    initial: &Path,
    opts: &OptOptions,
) -> Result<SplinePath, TrajOptError> {
    if initial.waypoints.len() < 2 {
        return Err(TrajOptError::InvalidInput("path needs two endpoints".into()));
    }
    let branch = initial.branch;
    let dense = resample_unwrapped(scene, initial, (4 * opts.n_control).max(40));
    let grasp_dof = initial.waypoints[0].grasp_extension.is_some();
    let template = SplinePath::fit(&dense, opts.n_control, opts.degree, branch, grasp_dof);
    let dim = template.dim();
    let fd_h = 1e-6;

    // Arc length of the initial path's image under xi (dense chords) — the
    // quantity the optimizer must not exceed.
    let initial_objective = {
        let mut len = 0.0;
        for w in dense.windows(2) {
            let a = xi(scene, &vec_to_param(&w[0], grasp_dof), branch)
                .map_err(|e| TrajOptError::InvalidInput(e.to_string()))?;
            let b = xi(scene, &vec_to_param(&w[1], grasp_dof), branch)
                .map_err(|e| TrajOptError::InvalidInput(e.to_string()))?;
            len += a.joint_distance(&b);
        }
        len
    };

    let nc = opts.constraint_samples;
    let mut lambda = vec![0.0; nc + 1];
    let mut mu = opts.penalty_initial;
    let mut z = spline_interior(&template);
    let mut best: Option<SplinePath> = None;
    let mut worst_violation = f64::INFINITY;

    for _outer in 0..opts.max_outer {
        let lam = lambda.clone();
        let objective = |zv: &DVector<f64>, g: &mut DVector<f64>| -> f64 {
            let s = interior_to_spline(&template, zv);
            let obj = parametrized_objective(scene, &s, opts);
            let mut value = obj.value;
            g.copy_from(&obj.grad);
            for j in 0..=nc {
                let t = j as f64 / nc as f64;
                let base = s.value(t);
                let v = param_violation(scene, &vec_to_param(&base, grasp_dof), s.branch, opts);
                value += lam[j] * v + 0.5 * mu * v * v;
                if v > 0.0 {
                    let coeff = lam[j] + mu * v;
                    // Central differences in the Q coordinates, chained
                    // through the basis onto interior control points.
                    let basis = s.basis_at(t);
                    for d in 0..dim {
                        let mut hi = base.clone();
                        let mut lo = base.clone();
                        hi[d] += fd_h;
                        lo[d] -= fd_h;
                        let dv = (param_violation(scene, &vec_to_param(&hi, grasp_dof), s.branch, opts)
                            - param_violation(scene, &vec_to_param(&lo, grasp_dof), s.branch, opts))
                            / (2.0 * fd_h);
                        if dv != 0.0 {
                            for c in 1..s.control_points.len() - 1 {
                                let w = basis[c];
                                if w != 0.0 {
                                    g[(c - 1) * dim + d] += coeff * w * dv;
                                }
                            }
                        }
                    }
                }
            }
            value
        };
        let res = lbfgs_minimize(objective, z.clone(), opts.max_inner, 1e-8);
        z = res.x.clone();

        let s = interior_to_spline(&template, &z);
        let mut max_v: f64 = 0.0;
        for j in 0..=nc {
            let t = j as f64 / nc as f64;
            let v = param_violation(scene, &s.config_at(t), s.branch, opts);
            lambda[j] += mu * v;
            max_v = max_v.max(v);
        }
        worst_violation = max_v;
        if max_v <= opts.violation_tol {
            best = Some(s);
            break;
        }
        mu *= opts.penalty_growth;
    }

    let Some(spline) = best else {
        return Err(TrajOptError::LocalInfeasible {
            max_violation: worst_violation,
        });
    };

    // Certify: dense polyline must re-validate edge by edge, and the
    // objective must not have grown.
    let audit = spline.to_path(10 * opts.objective_samples);
    for w in audit.waypoints.windows(2) {
        if xi(scene, &w[0], branch).is_err()
            || !validate_edge(scene, &w[0], &w[1], branch, scene.tau_task).is_ok()
        {
            return Err(TrajOptError::LocalInfeasible {
                max_violation: worst_violation.max(opts.violation_tol),
            });
        }
    }
    let final_objective = parametrized_objective(scene, &spline, opts).value;
    if final_objective > initial_objective + opts.objective_tol.max(1e-9) {
        return Err(TrajOptError::LocalInfeasible {
            max_violation: worst_violation,
        });
    }
    Ok(spline)
}

/// Arc length of the parametrized spline's image under `xi` (the optimizer's
/// objective, reported for comparisons).
pub fn parametrized_arc_length(scene: &Scene, spline: &SplinePath, samples: usize) -> f64 {
    let mut len = 0.0;
    let mut prev = xi_clamped(scene, &spline.config_at(0.0), spline.branch);
    for k in 1..=samples {
        let cur = xi_clamped(scene, &spline.config_at(k as f64 / samples as f64), spline.branch);
        len += prev.joint_distance(&cur);
        prev = cur;
    }
    len
}

// --- full-space baseline -------------------------------------------------

/// Grasp-constraint residual (Frobenius pose error, square-rooted) at one
/// full configuration.
fn collocation_residual(scene: &Scene, full: &FullConfig) -> f64 {
    crate::space::kinematic_residual(scene, full, None)
}

/// Six-dimensional grasp residual (translation, rotation log) used by the
/// baseline's feasibility-restoration phase.
fn grasp_residual6(scene: &Scene, full: &FullConfig) -> nalgebra::SVector<f64, 6> {
    let target = phi_t(
        &scene.left.forward_kinematics(&full.theta_l),
        &scene.grasp.pose_at(0.0),
    );
    let pose = scene.right.forward_kinematics(&full.theta_r);
    let dt = pose.translation() - target.translation();
    let drot =
        crate::geometry::Pose::log_rotation(&(pose.rotation() * target.rotation().transpose()));
    let mut r = nalgebra::SVector::<f64, 6>::zeros();
    for i in 0..3 {
        r[i] = dt[i];
        r[i + 3] = drot[i];
    }
    r
}

/// Result of the full-space baseline: the 14-dimensional spline plus its
/// residual diagnostics.
#[derive(Debug, Clone)]
pub struct FullspaceResult {
    pub spline: SplinePath,
    /// Largest grasp residual at the collocation points.
    pub collocation_residual: f64,
    /// Largest grasp residual between collocation points (10x resolution).
    pub inter_collocation_violation: f64,
}

/// Trajectory optimization over both arms' joints with the grasp constraint
/// enforced as an augmented-Lagrangian equality at collocation points only.
/// Between collocation points the constraint is measured, not enforced —
/// that gap is the point of the comparison.
pub fn optimize_fullspace_baseline(
    scene: &Scene,
    initial: &FullPath,
    opts: &OptOptions,
) -> Result<FullspaceResult, TrajOptError> {
    if initial.waypoints.len() < 2 {
        return Err(TrajOptError::InvalidInput("path needs two endpoints".into()));
    }
    for (label, w) in [
        ("start", initial.waypoints.first().unwrap()),
        ("goal", initial.waypoints.last().unwrap()),
    ] {
        if collocation_residual(scene, w) > 1e-6 {
            return Err(TrajOptError::InvalidInput(format!(
                "{label} violates the grasp constraint"
            )));
        }
    }
    // Resample uniformly by joint-space arc length.
    let wps = &initial.waypoints;
    let mut cum = vec![0.0];
    for w in wps.windows(2) {
        cum.push(cum.last().unwrap() + w[0].joint_distance(&w[1]));
    }
    let total = *cum.last().unwrap();
    let ns = (4 * opts.n_control).max(40);
    let mut samples = Vec::with_capacity(ns + 1);
    for k in 0..=ns {
        let s = total * k as f64 / ns as f64;
        let seg = cum.partition_point(|&c| c < s).clamp(1, wps.len() - 1);
        let seg_len = (cum[seg] - cum[seg - 1]).max(1e-300);
        let t = ((s - cum[seg - 1]) / seg_len).clamp(0.0, 1.0);
        let mut v = DVector::zeros(14);
        let (a, b) = (&wps[seg - 1], &wps[seg]);
        let av = full_to_vec(a);
        let bv = full_to_vec(b);
        for d in 0..14 {
            v[d] = av[d] + t * (bv[d] - av[d]);
        }
        samples.push(v);
    }
    let template = SplinePath::fit(
        &samples,
        opts.n_control,
        opts.degree,
        scene.default_branch,
        false,
    );
    let dim = 14;
    let fd_h = 1e-6;
    let nc = opts.constraint_samples;
    let mut lambda = vec![0.0; nc + 1];
    let mut mu = opts.penalty_initial;
    let mut z = spline_interior(&template);
    let mut result = None;
    let mut fallback: Option<(f64, SplinePath)> = None;

    let penalty_at = |scene: &Scene, v: &DVector<f64>| -> f64 {
        let full = vec_to_full(v);
        let mut p = collocation_residual(scene, &full);
        // Joint limits and collision, as in the parametrized optimizer.
        for i in 0..7 {
            p += hinge(full.theta_l.angles[i] - (scene.left.joint_upper[i] - opts.validity_inset));
            p += hinge((scene.left.joint_lower[i] + opts.validity_inset) - full.theta_l.angles[i]);
            p += hinge(full.theta_r.angles[i] - (scene.right.joint_upper[i] - opts.validity_inset));
            p += hinge((scene.right.joint_lower[i] + opts.validity_inset) - full.theta_r.angles[i]);
        }
        p += hinge(scene.collision_margin + opts.collision_extra - min_pair_distance(scene, &full));
        p
    };

    let mut worst = f64::INFINITY;
    for _outer in 0..opts.max_outer + 6 {
        let lam = lambda.clone();
        let objective = |zv: &DVector<f64>, g: &mut DVector<f64>| -> f64 {
            let s = interior_to_spline(&template, zv);
            // Arc length in joint space: piecewise-linear chords.
            let n = opts.objective_samples;
            let smoothing = 1e-12;
            let mut vals = Vec::with_capacity(n + 1);
            let mut bases = Vec::with_capacity(n + 1);
            for k in 0..=n {
                let t = k as f64 / n as f64;
                vals.push(s.value(t));
                bases.push(s.basis_at(t));
            }
            let mut value = 0.0;
            let mut g_q = vec![DVector::<f64>::zeros(dim); n + 1];
            for k in 0..n {
                let delta = &vals[k + 1] - &vals[k];
                let len = (delta.norm_squared() + smoothing).sqrt();
                value += len;
                let u = delta / len;
                g_q[k] -= &u;
                g_q[k + 1] += &u;
            }
            g.fill(0.0);
            for k in 0..=n {
                for c in 1..s.control_points.len() - 1 {
                    let w = bases[k][c];
                    if w != 0.0 {
                        for d in 0..dim {
                            g[(c - 1) * dim + d] += w * g_q[k][d];
                        }
                    }
                }
            }
            for j in 0..=nc {
                let t = j as f64 / nc as f64;
                let base = s.value(t);
                let v = penalty_at(scene, &base);
                value += lam[j] * v + 0.5 * mu * v * v;
                if v > 0.0 || lam[j] != 0.0 {
                    let coeff = lam[j] + mu * v;
                    let basis = s.basis_at(t);
                    for d in 0..dim {
                        let mut hi = base.clone();
                        let mut lo = base.clone();
                        hi[d] += fd_h;
                        lo[d] -= fd_h;
                        let dv = (penalty_at(scene, &hi) - penalty_at(scene, &lo)) / (2.0 * fd_h);
                        if dv != 0.0 {
                            for c in 1..s.control_points.len() - 1 {
                                let w = basis[c];
                                if w != 0.0 {
                                    g[(c - 1) * dim + d] += coeff * w * dv;
                                }
                            }
                        }
                    }
                }
            }
            value
        };
        let res = lbfgs_minimize(objective, z.clone(), opts.max_inner, 1e-10);
        z = res.x.clone();
        let s = interior_to_spline(&template, &z);
        let mut max_v: f64 = 0.0;
        for j in 0..=nc {
            let t = j as f64 / nc as f64;
            let v = penalty_at(scene, &s.value(t));
            lambda[j] += mu * v;
            max_v = max_v.max(v);
        }
        worst = max_v;
        if max_v <= 1e-4 {
            result = Some(s);
            break;
        }
        // Near-feasible iterates are kept as a fallback: the restoration
        // step below re-establishes the collocation equalities, and the
        // collision terms carry a `collision_extra` guard wider than this
        // slack.
        if max_v <= 1e-3 && fallback.as_ref().map_or(true, |(v, _)| max_v < *v) {
            fallback = Some((max_v, s));
        }
        mu *= opts.penalty_growth;
    }

    let Some(spline) = result.or_else(|| fallback.map(|(_, s)| s)) else {
        return Err(TrajOptError::LocalInfeasible {
            max_violation: worst,
        });
    };

    // Feasibility restoration: min-norm Gauss-Newton on the stacked 6-DoF
    // collocation residuals drives them to solver precision, which the
    // penalty loop alone cannot reach.
    // The endpoint collocation rows depend only on the pinned endpoint
    // control points (zero Jacobian), so they are excluded.
    let mut z = spline_interior(&spline);
    let n_res = 6 * (nc - 1);
    let residual_vec = |zv: &DVector<f64>| -> DVector<f64> {
        let s = interior_to_spline(&spline, zv);
        let mut r = DVector::zeros(n_res);
        for j in 1..nc {
            let full = vec_to_full(&s.value(j as f64 / nc as f64));
            let rj = grasp_residual6(scene, &full);
            for d in 0..6 {
                r[6 * (j - 1) + d] = rj[d];
            }
        }
        r
    };
    let mut damping = 1e-10;
    for _ in 0..60 {
        let r = residual_vec(&z);
        if r.amax() <= 1e-10 {
            break;
        }
        let h = 1e-6;
        let mut jac = DMatrix::<f64>::zeros(n_res, z.len());
        for c in 0..z.len() {
            let mut hi = z.clone();
            let mut lo = z.clone();
            hi[c] += h;
            lo[c] -= h;
            let dr = (residual_vec(&hi) - residual_vec(&lo)) / (2.0 * h);
            jac.set_column(c, &dr);
        }
        // Min-norm step with adaptive damping: on non-improvement the
        // damping grows and the step is recomputed from the same Jacobian.
        let base_norm = r.norm();
        let mut improved = false;
        while damping <= 1e2 {
            let jjt = &jac * jac.transpose() + DMatrix::identity(n_res, n_res) * damping;
            let Some(chol) = jjt.cholesky() else {
                damping *= 10.0;
                continue;
            };
            let dz = jac.transpose() * chol.solve(&r);
            let mut step = 1.0;
            for _ in 0..8 {
                let cand = &z - &dz * step;
                if residual_vec(&cand).norm() < base_norm {
                    z = cand;
                    improved = true;
                    break;
                }
                step *= 0.5;
            }
            if improved {
                damping = (damping * 0.1).max(1e-10);
                break;
            }
            damping *= 10.0;
        }
        if !improved {
            break;
        }
    }
    let spline = interior_to_spline(&spline, &z);
    let mut colloc: f64 = 0.0;
    for j in 0..=nc {
        colloc = colloc.max(collocation_residual(scene, &vec_to_full(&spline.value(j as f64 / nc as f64))));
    }
    let fine = 10 * nc;
    let mut inter: f64 = 0.0;
    for j in 0..=fine {
        inter = inter.max(collocation_residual(scene, &vec_to_full(&spline.value(j as f64 / fine as f64))));
    }
    Ok(FullspaceResult {
        spline,
        collocation_residual: colloc,
        inter_collocation_violation: inter,
    })
}

/// Compares the analytic objective gradient against central finite
/// differences of step `h`; returns the max relative error over the interior
/// control-point coordinates.
pub fn path_gradient_check(
    scene: &Scene,
    spline: &SplinePath,
    h: f64,
    opts: &OptOptions,
) -> Result<f64, TrajOptError> {
    if !(h > 0.0) {
        return Err(TrajOptError::InvalidInput("step must be positive".into()));
    }
    let analytic = parametrized_objective(scene, spline, opts).grad;
    let z0 = spline_interior(spline);
    let mut fd = DVector::zeros(z0.len());
    for i in 0..z0.len() {
        let mut hi = z0.clone();
        let mut lo = z0.clone();
        hi[i] += h;
        lo[i] -= h;
        let fh = parametrized_objective(scene, &interior_to_spline(spline, &hi), opts).value;
        let fl = parametrized_objective(scene, &interior_to_spline(spline, &lo), opts).value;
        fd[i] = (fh - fl) / (2.0 * h);
    }
    let scale = fd.amax().max(1e-6);
    Ok((analytic - fd).amax() / scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm::ArmModel;
    use crate::geometry::Pose;
    use crate::planners::sample_valid;
    use crate::space::GraspTransform;
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector3;
    use rand::Rng;
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

    /// A short straight valid edge found by sampling.
    fn straight_edge(scene: &Scene, seed: u64, step: f64) -> Path {
        let branch = scene.default_branch;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let a = sample_valid(scene, branch, &mut rng).unwrap();
            let mut b = a;
            for i in 0..7 {
                b.theta_l.angles[i] += step * (rng.gen::<f64>() - 0.5);
            }
            b.theta_l = JointVector::new(b.theta_l.angles);
            if validate_edge(scene, &a, &b, branch, scene.tau_task).is_ok() {
                return Path {
                    waypoints: vec![a, b],
                    branch,
                };
            }
        }
    }

    /// An L-shaped detour whose direct connection is also valid.
    fn detour_path(scene: &Scene, seed: u64) -> Path {
        let branch = scene.default_branch;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let a = sample_valid(scene, branch, &mut rng).unwrap();
            let mut mid = a;
            mid.theta_l.angles[0] += 0.5;
            mid.theta_l = JointVector::new(mid.theta_l.angles);
            let mut b = mid;
            b.theta_l.angles[1] += 0.4;
            b.theta_l = JointVector::new(b.theta_l.angles);
            let p = Path {
                waypoints: vec![a, mid, b],
                branch,
            };
            if p.revalidate(scene) && validate_edge(scene, &a, &b, branch, scene.tau_task).is_ok() {
                return p;
            }
        }
    }

    #[test]
    fn spline_basis_partitions_unity_and_interpolates_endpoints() {
        let pts: Vec<DVector<f64>> = (0..20)
            .map(|i| DVector::from_fn(8, |r, _| (i * 7 + r) as f64 * 0.1))
            .collect();
        let spline = SplinePath {
            control_points: pts.clone(),
            degree: 3,
            knots: uniform_clamped_knots(20, 3),
            branch: crate::arm::Branch::parse("+++").unwrap(),
            grasp_dof: false,
        };
        for k in 0..=50 {
            let t = k as f64 / 50.0;
            let b = spline.basis_at(t);
            assert_abs_diff_eq!(b.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            assert!(b.iter().all(|&x| x >= -1e-15));
        }
        assert_abs_diff_eq!((spline.value(0.0) - &pts[0]).amax(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!((spline.value(1.0) - &pts[19]).amax(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn spline_fit_reproduces_straight_polyline() {
        let a = DVector::from_fn(8, |r, _| r as f64 * 0.3 - 1.0);
        let b = DVector::from_fn(8, |r, _| 1.5 - r as f64 * 0.2);
        let samples: Vec<DVector<f64>> = (0..=80)
            .map(|k| {
                let t = k as f64 / 80.0;
                &a * (1.0 - t) + &b * t
            })
            .collect();
        let s = SplinePath::fit(
            &samples,
            20,
            3,
            crate::arm::Branch::parse("+++").unwrap(),
            false,
        );
        for k in 0..=40 {
            let t = k as f64 / 40.0;
            let expect = &a * (1.0 - t) + &b * t;
            assert!((s.value(t) - expect).amax() < 1e-8);
        }
    }

    #[test]
    fn straight_segment_already_optimal() {
        let scene = open_scene();
        let path = straight_edge(&scene, 41, 0.3);
        let opts = OptOptions::default();
        let spline = optimize_parametrized(&scene, &path, &opts).unwrap();
        let obj = parametrized_arc_length(&scene, &spline, 600);
        let a = xi(&scene, &path.waypoints[0], path.branch).unwrap();
        let b = xi(&scene, &path.waypoints[1], path.branch).unwrap();
        let chord = a.joint_distance(&b);
        let initial = {
            let p = resample_unwrapped(&scene, &path, 200);
            let mut len = 0.0;
            for w in p.windows(2) {
                let fa = xi_clamped(&scene, &vec_to_param(&w[0], false), path.branch);
                let fb = xi_clamped(&scene, &vec_to_param(&w[1], false), path.branch);
                len += fa.joint_distance(&fb);
            }
            len
        };
        // Arc length can only shrink, and never below the full-space chord.
        assert!(obj <= initial + 1e-6, "obj {obj} initial {initial}");
        assert!(obj >= chord - 1e-9, "obj {obj} chord {chord}");
        // Endpoints pinned.
        assert_eq!(spline.config_at(0.0).theta_l, path.waypoints[0].theta_l);
        assert_eq!(spline.config_at(1.0).theta_l, path.waypoints[1].theta_l);
    }

    #[test]
    fn detour_is_shortened() {
        let scene = open_scene();
        let path = detour_path(&scene, 43);
        let opts = OptOptions::default();
        let spline = optimize_parametrized(&scene, &path, &opts).unwrap();
        let initial = {
            let mut len = 0.0;
            for w in path.waypoints.windows(2) {
                let a = xi(&scene, &w[0], path.branch).unwrap();
                let b = xi(&scene, &w[1], path.branch).unwrap();
                len += a.joint_distance(&b);
            }
            len
        };
        let optimized = parametrized_arc_length(&scene, &spline, 600);
        assert!(
            optimized < initial - 1e-3,
            "optimized {optimized} vs initial {initial}"
        );
        // The result still re-validates densely.
        assert!(spline.to_path(200).revalidate(&scene));
    }

    #[test]
    fn gradient_check_agrees_with_finite_differences() {
        let scene = open_scene();
        let opts = OptOptions {
            objective_samples: 30,
            n_control: 8,
            ..OptOptions::default()
        };
        let mut worst: f64 = 0.0;
        for seed in 0..10 {
            let path = straight_edge(&scene, 100 + seed, 0.5);
            let dense = resample_unwrapped(&scene, &path, 40);
            let spline = SplinePath::fit(&dense, opts.n_control, opts.degree, path.branch, false);
            let err = path_gradient_check(&scene, &spline, 1e-6, &opts).unwrap();
            worst = worst.max(err);
        }
        assert!(worst <= 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn gradient_check_rejects_zero_step() {
        let scene = open_scene();
        let path = straight_edge(&scene, 47, 0.3);
        let dense = resample_unwrapped(&scene, &path, 40);
        let spline = SplinePath::fit(&dense, 8, 3, path.branch, false);
        assert!(matches!(
            path_gradient_check(&scene, &spline, 0.0, &OptOptions::default()),
            Err(TrajOptError::InvalidInput(_))
        ));
    }

    #[test]
    fn fullspace_baseline_feasible_at_collocation_only() {
        let scene = open_scene();
        let branch = scene.default_branch;
        let path = detour_path(&scene, 53);
        // Lift the detour to the full space through xi, densely.
        let mut wps = Vec::new();
        for w in path.waypoints.windows(2) {
            for k in 0..10 {
                let q = crate::space::interpolate(&w[0], &w[1], k as f64 / 10.0);
                wps.push(xi(&scene, &q, branch).unwrap());
            }
        }
        wps.push(xi(&scene, path.waypoints.last().unwrap(), branch).unwrap());
        let initial = FullPath { waypoints: wps };
        let opts = OptOptions::default();
        let res = optimize_fullspace_baseline(&scene, &initial, &opts).unwrap();
        assert!(
            res.collocation_residual <= 1e-6,
            "collocation residual {}",
            res.collocation_residual
        );
        assert!(
            res.inter_collocation_violation >= res.collocation_residual,
            "inter {} colloc {}",
            res.inter_collocation_violation,
            res.collocation_residual
        );
    }
}
