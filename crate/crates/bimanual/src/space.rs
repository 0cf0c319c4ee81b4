//! The parametrized bimanual configuration space.
//!
//! A point is `q = (theta_L, psi_R[, g])`: the controlled arm's joints, the
//! subordinate arm's arm angle, and optionally a grasp-extension coordinate.
//! The map `xi` recovers the full 14-joint configuration by analytic IK, so
//! the end-effector constraint holds identically along any curve in this
//! space.

use crate::arm::{Branch, IkError, JointVector, Matrix7, RedundancyParam};
use crate::collision::{min_pair_distance_with_pair, ArmSide, CollisionPair};
use crate::geometry::{signed_circular_distance, Pose};
use crate::scene::Scene;
use nalgebra::{DMatrix, DVector, Vector3};
use thiserror::Error;

/// Fixed transform from the controlled end effector to the subordinate one,
/// optionally extensible along a grasp axis.
#[derive(Debug, Clone)]
pub struct GraspTransform {
    pub base: Pose,
    /// Unit axis, in the controlled end-effector frame, along which the grasp
    /// distance may vary.
    pub extension_axis: Option<Vector3<f64>>,
    pub extension_range: Option<(f64, f64)>,
}

impl GraspTransform {
    pub fn fixed(base: Pose) -> Self {
        GraspTransform {
            base,
            extension_axis: None,
            extension_range: None,
        }
    }

    /// The transform at grasp extension `g` (0 when absent).
    pub fn pose_at(&self, g: f64) -> Pose {
        match &self.extension_axis {
            None => self.base,
            Some(axis) => Pose::new(*self.base.rotation(), self.base.translation() + axis * g),
        }
    }
}

/// Target pose of the subordinate end effector given the controlled one.
pub fn phi_t(x: &Pose, grasp: &Pose) -> Pose {
    x.compose(grasp)
}

/// A point of the parametrized space Q.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamConfig {
    pub theta_l: JointVector,
    pub psi_r: RedundancyParam,
    pub grasp_extension: Option<f64>,
}

impl ParamConfig {
    pub fn new(theta_l: JointVector, psi_r: f64) -> Self {
        ParamConfig {
            theta_l,
            psi_r: RedundancyParam::new(psi_r),
            grasp_extension: None,
        }
    }

    pub fn with_grasp(theta_l: JointVector, psi_r: f64, g: f64) -> Self {
        ParamConfig {
            theta_l,
            psi_r: RedundancyParam::new(psi_r),
            grasp_extension: Some(g),
        }
    }

    /// Number of free coordinates (8 or 9).
    pub fn dim(&self) -> usize {
        8 + usize::from(self.grasp_extension.is_some())
    }
}

/// Joint angles of both arms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullConfig {
    pub theta_l: JointVector,
    pub theta_r: JointVector,
}

impl FullConfig {
    pub fn max_abs_diff(&self, other: &FullConfig) -> f64 {
        self.theta_l
            .max_abs_diff(&other.theta_l)
            .max(self.theta_r.max_abs_diff(&other.theta_r))
    }

    /// Euclidean norm of the 14-joint difference.
    pub fn joint_distance(&self, other: &FullConfig) -> f64 {
        let mut s = 0.0;
        for i in 0..7 {
            s += (self.theta_l.angles[i] - other.theta_l.angles[i]).powi(2);
            s += (self.theta_r.angles[i] - other.theta_r.angles[i]).powi(2);
        }
        s.sqrt()
    }
}

/// Why a parametrized configuration is invalid.
#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum InvalidReason {
    #[error("subordinate target unreachable")]
    Unreachable,
    #[error("inverse-trig domain violation in the subordinate IK")]
    TrigDomainViolation,
    #[error("joint limit violated: {arm:?} joint {joint}")]
    JointLimitViolation { arm: ArmSide, joint: usize },
    #[error("grasp-extension coordinate does not match the scene's grasp definition")]
    SubordinateBaseMismatch,
    #[error("grasp extension outside its configured range")]
    GraspOutOfRange,
}

impl From<IkError> for InvalidReason {
    fn from(e: IkError) -> Self {
        match e {
            IkError::Unreachable => InvalidReason::Unreachable,
            IkError::TrigDomainViolation => InvalidReason::TrigDomainViolation,
        }
    }
}

/// The parametrization map: determines joint angles for both arms.
pub fn xi(scene: &Scene, q: &ParamConfig, branch: Branch) -> Result<FullConfig, InvalidReason> {
    if let Some(j) = scene.left.limit_violation_index(&q.theta_l) {
        return Err(InvalidReason::JointLimitViolation {
            arm: ArmSide::Left,
            joint: j,
        });
    }
    let g = match (q.grasp_extension, scene.grasp.extension_axis.as_ref()) {
        (None, None) => 0.0,
        (Some(g), Some(_)) => {
            let (lo, hi) = scene.grasp.extension_range.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
            if g < lo || g > hi {
                return Err(InvalidReason::GraspOutOfRange);
            }
            g
        }
        _ => return Err(InvalidReason::SubordinateBaseMismatch),
    };
    let pose_l = scene.left.forward_kinematics(&q.theta_l);
    let target_r = phi_t(&pose_l, &scene.grasp.pose_at(g));
    let theta_r = scene.right.analytic_ik(&target_r, q.psi_r, branch)?;
    if let Some(j) = scene.right.limit_violation_index(&theta_r) {
        return Err(InvalidReason::JointLimitViolation {
            arm: ArmSide::Right,
            joint: j,
        });
    }
    Ok(FullConfig {
        theta_l: q.theta_l,
        theta_r,
    })
}

/// Total variant of `xi`: trig arguments are clamped into range and joint
/// limits are not checked, so a full configuration exists for every input.
/// Optimizers use this for smooth objectives; violations are penalized
/// separately (clamping shows up as a reachability residual).
pub fn xi_clamped(scene: &Scene, q: &ParamConfig, branch: Branch) -> FullConfig {
    let g = q.grasp_extension.unwrap_or(0.0);
    let pose_l = scene.left.forward_kinematics(&q.theta_l);
    let target_r = phi_t(&pose_l, &scene.grasp.pose_at(g));
    let theta_r = scene.right.analytic_ik_clamped(&target_r, q.psi_r.radians(), branch);
    FullConfig {
        theta_l: q.theta_l,
        theta_r,
    }
}

/// Pure validity predicate over Q (Q_VALID membership).
pub fn is_valid(scene: &Scene, q: &ParamConfig, branch: Branch) -> Result<(), InvalidReason> {
    xi(scene, q, branch).map(|_| ())
}

/// Weighted metric on Q: Euclidean on the controlled joints, shortest-arc on
/// the arm angle, weighted absolute difference on the grasp extension.
pub fn distance(scene: &Scene, q1: &ParamConfig, q2: &ParamConfig) -> f64 {
    let mut s = 0.0;
    for i in 0..7 {
        s += (q1.theta_l.angles[i] - q2.theta_l.angles[i]).powi(2);
    }
    s += signed_circular_distance(q1.psi_r.radians(), q2.psi_r.radians()).powi(2);
    if let (Some(a), Some(b)) = (q1.grasp_extension, q2.grasp_extension) {
        s += (scene.grasp_weight * (a - b)).powi(2);
    }
    s.sqrt()
}

/// Straight-segment interpolation in Q (shortest arc for psi).
pub fn interpolate(q1: &ParamConfig, q2: &ParamConfig, t: f64) -> ParamConfig {
    let mut angles = [0.0; 7];
    for i in 0..7 {
        angles[i] = q1.theta_l.angles[i] + t * (q2.theta_l.angles[i] - q1.theta_l.angles[i]);
    }
    let dpsi = signed_circular_distance(q1.psi_r.radians(), q2.psi_r.radians());
    let psi = q1.psi_r.radians() + t * dpsi;
    let grasp = match (q1.grasp_extension, q2.grasp_extension) {
        (Some(a), Some(b)) => Some(a + t * (b - a)),
        _ => None,
    };
    ParamConfig {
        theta_l: JointVector::new(angles),
        psi_r: RedundancyParam::new(psi),
        grasp_extension: grasp,
    }
}

/// Coordinate displacement of the edge `q1 -> q2` (theta deltas, shortest-arc
/// psi delta, grasp delta).
pub fn edge_direction(q1: &ParamConfig, q2: &ParamConfig) -> DVector<f64> {
    let mut v = DVector::zeros(q1.dim());
    for i in 0..7 {
        v[i] = q2.theta_l.angles[i] - q1.theta_l.angles[i];
    }
    v[7] = signed_circular_distance(q1.psi_r.radians(), q2.psi_r.radians());
    if let (Some(a), Some(b)) = (q1.grasp_extension, q2.grasp_extension) {
        v[8] = b - a;
    }
    v
}

/// Jacobian of `xi` with respect to the free coordinates: a 14 x dim matrix
/// (rows: theta_L then theta_R).
///
/// The subordinate block is the IK Jacobian composed with the map from free
/// coordinates to the subordinate target's local pose chart.
pub fn xi_jacobian(scene: &Scene, q: &ParamConfig, branch: Branch) -> Result<DMatrix<f64>, InvalidReason> {
    let dim = q.dim();
    let g = q.grasp_extension.unwrap_or(0.0);
    let pose_l = scene.left.forward_kinematics(&q.theta_l);
    let grasp_pose = scene.grasp.pose_at(g);
    let target_r = phi_t(&pose_l, &grasp_pose);
    let j_ik: Matrix7 = scene.right.ik_jacobian(&target_r, q.psi_r, branch)?;
    let j_fk_l = scene.left.fk_jacobian(&q.theta_l);

    // Map from free coordinates to (subordinate-target chart, psi).
    let r_x_t = pose_l.rotation() * grasp_pose.translation();
    let mut m = DMatrix::<f64>::zeros(7, dim);
    for c in 0..7 {
        let v = Vector3::new(j_fk_l[(0, c)], j_fk_l[(1, c)], j_fk_l[(2, c)]);
        let w = Vector3::new(j_fk_l[(3, c)], j_fk_l[(4, c)], j_fk_l[(5, c)]);
        let vt = v + w.cross(&r_x_t);
        for r in 0..3 {
            m[(r, c)] = vt[r];
            m[(r + 3, c)] = w[r];
        }
    }
    m[(6, 7)] = 1.0;
    if dim == 9 {
        let axis = scene.grasp.extension_axis.expect("dim 9 implies extension axis");
        let dir = pose_l.rotation() * axis;
        for r in 0..3 {
            m[(r, 8)] = dir[r];
        }
    }

    let mut jac = DMatrix::<f64>::zeros(14, dim);
    for i in 0..7 {
        jac[(i, i)] = 1.0;
    }
    let sub = j_ik * m;
    for r in 0..7 {
        for c in 0..dim {
            jac[(7 + r, c)] = sub[(r, c)];
        }
    }
    Ok(jac)
}

/// What went wrong along an edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EdgeIssue {
    Invalid(InvalidReason),
    Collision(Option<CollisionPair>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EdgeCheck {
    Ok,
    FirstFailure { t: f64, reason: EdgeIssue },
}

impl EdgeCheck {
    pub fn is_ok(&self) -> bool {
        matches!(self, EdgeCheck::Ok)
    }
}

fn point_status(scene: &Scene, q: &ParamConfig, branch: Branch) -> Result<FullConfig, EdgeIssue> {
    let full = xi(scene, q, branch).map_err(EdgeIssue::Invalid)?;
    let (d, pair) = min_pair_distance_with_pair(scene, &full);
    if d < scene.collision_margin {
        return Err(EdgeIssue::Collision(pair));
    }
    Ok(full)
}

/// Rate bound `||J_xi . dq||_inf` at a point, used to scale edge steps. Falls
/// back to a pessimistic constant when the Jacobian is unavailable.
fn full_rate(scene: &Scene, q: &ParamConfig, branch: Branch, dir: &DVector<f64>) -> f64 {
    match xi_jacobian(scene, q, branch) {
        Ok(j) => {
            let v = j * dir;
            v.amax().max(dir.amax())
        }
        Err(_) => 100.0 * dir.amax().max(1e-9),
    }
}

/// Walks the straight segment from `q1` to `q2` with steps sized so that the
/// full-configuration displacement stays below the configured bound and the
/// swept end-effector translation stays below `tau_task`, checking validity
/// and collision at every accepted step. On failure the boundary is localized
/// by bisection.
pub fn validate_edge(scene: &Scene, q1: &ParamConfig, q2: &ParamConfig, branch: Branch, tau_task: f64) -> EdgeCheck {
    let dir = edge_direction(q1, q2);
    let edge_len = dir.norm();

    let mut current = match point_status(scene, q1, branch) {
        Ok(f) => f,
        Err(reason) => return EdgeCheck::FirstFailure { t: 0.0, reason },
    };
    if edge_len < 1e-12 {
        return EdgeCheck::Ok;
    }

    // Lipschitz estimate from the endpoint Jacobians, times a safety factor.
    let rate = full_rate(scene, q1, branch, &dir).max(full_rate(scene, q2, branch, &dir));
    let max_step = scene.edge_max_joint_step;
    let mut dt_nominal = max_step / (2.0 * rate.max(1e-9));
    // End-effector translation sweep bound.
    let ee_rate = {
        let j = scene.left.fk_jacobian(&q1.theta_l);
        let mut v = Vector3::zeros();
        for c in 0..7 {
            v += Vector3::new(j[(0, c)], j[(1, c)], j[(2, c)]) * dir[c];
        }
        v.norm()
    };
    if ee_rate > 1e-9 {
        dt_nominal = dt_nominal.min(tau_task / (2.0 * ee_rate));
    }
    // The a-priori estimate only seeds the loop; the runtime check below
    // halves further when a step overshoots, so a coarse floor is safe.
    dt_nominal = dt_nominal.clamp(1e-2, 1.0);

    let mut t = 0.0;
    let mut current_ee = scene.left.forward_kinematics(&q1.theta_l);
    while t < 1.0 {
        let mut dt = dt_nominal.min(1.0 - t);
        loop {
            let t2 = t + dt;
            let q = interpolate(q1, q2, t2);
            match point_status(scene, &q, branch) {
                Ok(full) => {
                    let ee = scene.left.forward_kinematics(&q.theta_l);
                    let too_fast = full.max_abs_diff(&current) > max_step
                        || (ee.translation() - current_ee.translation()).norm() > tau_task;
                    if too_fast && dt > 1e-4 {
                        dt *= 0.5;
                        continue;
                    }
                    current = full;
                    current_ee = ee;
                    t = t2;
                    break;
                }
                Err(reason) => {
                    // Localize the first failure between t (good) and t2 (bad).
                    let (mut lo, mut hi) = (t, t2);
                    let mut worst = reason;
                    for _ in 0..30 {
                        let mid = 0.5 * (lo + hi);
                        let qm = interpolate(q1, q2, mid);
                        match point_status(scene, &qm, branch) {
                            Ok(_) => lo = mid,
                            Err(r) => {
                                hi = mid;
                                worst = r;
                            }
                        }
                    }
                    return EdgeCheck::FirstFailure { t: hi, reason: worst };
                }
            }
        }
    }
    EdgeCheck::Ok
}

/// Re-validates an edge at a fixed parameter resolution `n` (used by the
/// 10x-resolution audits). Returns the worst kinematic-constraint pose error
/// observed, or the first failure.
pub fn constraint_residual_on_edge(scene: &Scene, q1: &ParamConfig, q2: &ParamConfig, branch: Branch, n: usize) -> Result<f64, EdgeIssue> {
    let mut worst: f64 = 0.0;
    for k in 0..=n {
        let t = k as f64 / n as f64;
        let q = interpolate(q1, q2, t);
        let full = point_status(scene, &q, branch)?;
        worst = worst.max(kinematic_residual(scene, &full, q.grasp_extension));
    }
    Ok(worst)
}

/// Full-pose Frobenius residual of the grasp constraint at a full config.
pub fn kinematic_residual(scene: &Scene, full: &FullConfig, grasp: Option<f64>) -> f64 {
    let pose_l = scene.left.forward_kinematics(&full.theta_l);
    let pose_r = scene.right.forward_kinematics(&full.theta_r);
    let target = phi_t(&pose_l, &scene.grasp.pose_at(grasp.unwrap_or(0.0)));
    crate::geometry::pose_error(&target, &pose_r).sqrt()
}

/// Translation-only residual of the grasp constraint, meters.
pub fn translation_residual(scene: &Scene, full: &FullConfig, grasp: Option<f64>) -> f64 {
    let pose_l = scene.left.forward_kinematics(&full.theta_l);
    let pose_r = scene.right.forward_kinematics(&full.theta_r);
    let target = phi_t(&pose_l, &scene.grasp.pose_at(grasp.unwrap_or(0.0)));
    (target.translation() - pose_r.translation()).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm::ArmModel;
    use crate::scene::Scene;
    use approx::assert_abs_diff_eq;
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

    fn random_q(rng: &mut impl Rng, scene: &Scene) -> ParamConfig {
        let mut a = [0.0; 7];
        for i in 0..7 {
            a[i] = scene.left.joint_lower[i]
                + rng.gen::<f64>() * (scene.left.joint_upper[i] - scene.left.joint_lower[i]);
        }
        ParamConfig::new(JointVector::new(a), rng.gen::<f64>() * 2.0 * PI - PI)
    }

    fn random_valid_q(rng: &mut impl Rng, scene: &Scene, branch: Branch) -> ParamConfig {
        loop {
            let q = random_q(rng, scene);
            if xi(scene, &q, branch).is_ok() {
                return q;
            }
        }
    }

    #[test]
    fn xi_holds_grasp_constraint_by_construction() {
        let scene = open_scene();
        let branch = scene.default_branch;
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        for _ in 0..200 {
            let q = random_valid_q(&mut rng, &scene, branch);
            let full = xi(&scene, &q, branch).unwrap();
            assert!(kinematic_residual(&scene, &full, None).powi(2) <= 1e-9);
            // Deterministic, bitwise.
            let again = xi(&scene, &q, branch).unwrap();
            assert_eq!(full, again);
        }
    }

    #[test]
    fn xi_unreachable_when_bases_far_apart() {
        let left = ArmModel::default_iiwa(Pose::from_translation(Vector3::new(0.0, 1.0, 0.0)));
        let right = ArmModel::default_iiwa(Pose::from_translation(Vector3::new(0.0, -1.0, 0.0)));
        let grasp = GraspTransform::fixed(Pose::new(
            *Pose::rotation_x(PI).rotation(),
            Vector3::new(0.0, 0.0, 0.20),
        ));
        let scene = Scene::from_parts(left, right, grasp, vec![], vec![], vec![], None);
        let q = ParamConfig::new(JointVector::zeros(), 0.0);
        assert_eq!(xi(&scene, &q, scene.default_branch), Err(InvalidReason::Unreachable));
    }

    #[test]
    fn xi_reports_subordinate_limit_violations() {
        // Tighten a subordinate joint limit until some otherwise-valid q trips it.
        let mut scene = open_scene();
        let branch = scene.default_branch;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let q = random_valid_q(&mut rng, &scene, branch);
        let full = xi(&scene, &q, branch).unwrap();
        // Shrink joint 3 (elbow) range to just exclude the found solution.
        let elbow = full.theta_r.angles[3];
        if elbow > 0.0 {
            scene.right.joint_upper[3] = elbow - 1e-3;
        } else {
            scene.right.joint_lower[3] = elbow + 1e-3;
        }
        assert_eq!(
            xi(&scene, &q, branch),
            Err(InvalidReason::JointLimitViolation {
                arm: ArmSide::Right,
                joint: 3
            })
        );
    }

    #[test]
    fn grasp_extension_mismatch_is_reported() {
        let scene = open_scene();
        let q = ParamConfig::with_grasp(JointVector::zeros(), 0.0, 0.05);
        assert_eq!(
            xi(&scene, &q, scene.default_branch),
            Err(InvalidReason::SubordinateBaseMismatch)
        );
    }

    #[test]
    fn distance_metric_properties() {
        let scene = open_scene();
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..100_000 {
            let a = random_q(&mut rng, &scene);
            let b = random_q(&mut rng, &scene);
            let c = random_q(&mut rng, &scene);
            let ab = distance(&scene, &a, &b);
            let ba = distance(&scene, &b, &a);
            assert_abs_diff_eq!(ab, ba, epsilon = 1e-12);
            assert!(distance(&scene, &a, &c) <= ab + distance(&scene, &b, &c) + 1e-9);
        }
        let q = random_q(&mut rng, &scene);
        assert_eq!(distance(&scene, &q, &q), 0.0);
        let mut q2 = q;
        q2.psi_r = RedundancyParam::new(q.psi_r.radians() + 2.0 * PI);
        assert_abs_diff_eq!(distance(&scene, &q, &q2), 0.0, epsilon = 1e-12);
        let mut q3 = q;
        q3.psi_r = RedundancyParam::new(q.psi_r.radians() + PI + 0.1);
        assert!(distance(&scene, &q, &q3) < PI);
    }

    #[test]
    fn xi_jacobian_matches_finite_differences() {
        let scene = open_scene();
        let branch = scene.default_branch;
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let h = 1e-6;
        let mut checked = 0;
        while checked < 30 {
            let q = random_valid_q(&mut rng, &scene, branch);
            let jac = match xi_jacobian(&scene, &q, branch) {
                Ok(j) => j,
                Err(_) => continue,
            };
            let mut fd = DMatrix::<f64>::zeros(14, q.dim());
            let mut ok = true;
            for c in 0..q.dim() {
                let perturbed = |sign: f64| -> Option<FullConfig> {
                    let mut qq = q;
                    if c < 7 {
                        qq.theta_l.angles[c] += sign * h;
                    } else {
                        qq.psi_r = RedundancyParam::new(qq.psi_r.radians() + sign * h);
                    }
                    xi(&scene, &qq, branch).ok()
                };
                match (perturbed(1.0), perturbed(-1.0)) {
                    (Some(fp), Some(fm)) => {
                        for r in 0..7 {
                            fd[(r, c)] =
                                crate::geometry::wrap_angle(fp.theta_l.angles[r] - fm.theta_l.angles[r]) / (2.0 * h);
                            fd[(7 + r, c)] =
                                crate::geometry::wrap_angle(fp.theta_r.angles[r] - fm.theta_r.angles[r]) / (2.0 * h);
                        }
                    }
                    _ => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                continue;
            }
            let rel = (&jac - &fd).norm() / jac.norm().max(1.0);
            assert!(rel < 1e-4, "relative error {rel}");
            checked += 1;
        }
    }

    #[test]
    fn degenerate_edge_is_ok() {
        let scene = open_scene();
        let branch = scene.default_branch;
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let q = random_valid_q(&mut rng, &scene, branch);
        assert!(validate_edge(&scene, &q, &q, branch, scene.tau_task).is_ok());
    }

    #[test]
    fn edge_failure_localized_against_bisection_oracle() {
        // Find an edge in psi whose endpoints are valid but whose interior
        // crosses out of Q_VALID, then check the reported failure parameter
        // against a fine bisection oracle.
        let scene = open_scene();
        let branch = scene.default_branch;
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        'outer: for _ in 0..500 {
            let q1 = random_valid_q(&mut rng, &scene, branch);
            for dpsi in [1.5, 2.0, 2.5] {
                let mut q2 = q1;
                q2.psi_r = RedundancyParam::new(q1.psi_r.radians() + dpsi);
                if xi(&scene, &q2, branch).is_err() {
                    continue;
                }
                // Does the interior fail anywhere? Probe on a fine grid.
                let n = 2000;
                let mut first_bad = None;
                for k in 1..n {
                    let t = k as f64 / n as f64;
                    if xi(&scene, &interpolate(&q1, &q2, t), branch).is_err() {
                        first_bad = Some(t);
                        break;
                    }
                }
                let Some(tb) = first_bad else { continue };
                // Oracle: bisect the boundary at 1e-6 resolution.
                let (mut lo, mut hi) = (tb - 1.0 / n as f64, tb);
                while hi - lo > 1e-6 {
                    let mid = 0.5 * (lo + hi);
                    if xi(&scene, &interpolate(&q1, &q2, mid), branch).is_ok() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                match validate_edge(&scene, &q1, &q2, branch, scene.tau_task) {
                    EdgeCheck::FirstFailure { t, reason: EdgeIssue::Invalid(_) } => {
                        assert!((t - hi).abs() < 0.02, "reported {t}, oracle {hi}");
                        return;
                    }
                    other => panic!("expected interior failure, got {other:?}"),
                }
            }
            if rng.gen::<f64>() < 0.0 {
                continue 'outer;
            }
        }
        panic!("no wall-crossing edge found");
    }

    #[test]
    fn ok_edges_preserve_constraint_densely() {
        let scene = open_scene();
        let branch = scene.default_branch;
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let mut checked = 0;
        while checked < 10 {
            let q1 = random_valid_q(&mut rng, &scene, branch);
            let mut q2 = q1;
            for i in 0..7 {
                q2.theta_l.angles[i] += 0.2 * (rng.gen::<f64>() - 0.5);
            }
            q2.theta_l = JointVector::new(q2.theta_l.angles);
            q2.psi_r = RedundancyParam::new(q2.psi_r.radians() + 0.3 * (rng.gen::<f64>() - 0.5));
            if !validate_edge(&scene, &q1, &q2, branch, scene.tau_task).is_ok() {
                continue;
            }
            let worst = constraint_residual_on_edge(&scene, &q1, &q2, branch, 500).unwrap();
            assert!(worst <= 1e-9, "residual {worst}");
            checked += 1;
        }
    }

    #[test]
    fn rejection_sampling_acceptance_is_positive() {
        let scene = open_scene();
        let branch = scene.default_branch;
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let n = 10_000;
        let mut ok = 0;
        for _ in 0..n {
            if xi(&scene, &random_q(&mut rng, &scene), branch).is_ok() {
                ok += 1;
            }
        }
        assert!(ok as f64 / n as f64 >= 0.01, "acceptance {}", ok as f64 / n as f64);
    }
}
