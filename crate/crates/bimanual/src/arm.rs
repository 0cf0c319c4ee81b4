//! Forward kinematics and branch-enumerated analytic inverse kinematics for a
//! 7-DoF SRS arm (spherical shoulder, revolute elbow, spherical wrist).
//!
//! The kinematic chain, expressed in the arm base frame, is
//!
//! ```text
//! Tz(d_bs) Rz(t1) Ry(t2) Rz(t3) Tz(d_se) Ry(t4) Tz(d_ew) Rz(t5) Ry(t6) Rz(t7) Tz(d_wf)
//! ```
//!
//! so joints 1,3,5,7 are collinear at the zero configuration and joints 2,4,6
//! are orthogonal to them. The redundancy of the arm is the rotation of the
//! elbow about the shoulder-wrist line (the "arm angle" psi), and the discrete
//! solution multiplicity is captured by three sign flips (shoulder, elbow,
//! wrist), giving 8 branches.

use crate::geometry::{pose_error, wrap_angle, Angle, Pose};
use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

pub type Matrix7 = nalgebra::SMatrix<f64, 7, 7>;

/// Margin on the shoulder-wrist distance band at IK time.
const UNREACHABLE_EPS: f64 = 1e-9;
/// Margin on inverse-trig arguments at IK time.
const TRIG_EPS: f64 = 1e-9;
/// Below this flip-joint magnitude, the branch sign is ambiguous.
const BRANCH_BOUNDARY_EPS: f64 = 1e-6;
/// Elbow-circle radius below which the arm angle is undefined.
const SINGULAR_RADIUS_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum IkError {
    /// Shoulder-to-wrist distance outside the reachable band.
    #[error("target unreachable for the subordinate arm")]
    Unreachable,
    /// An inverse-trigonometric argument left its open domain (-1, 1).
    #[error("inverse-trigonometric argument out of domain")]
    TrigDomainViolation,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum ExtractionError {
    /// Shoulder, elbow and wrist collinear: the arm angle is undefined.
    #[error("singular configuration: shoulder, elbow, wrist collinear")]
    SingularConfiguration,
    /// A flip-determining joint angle is too close to zero.
    #[error("branch boundary: flip joint {0} within tolerance of zero")]
    BranchBoundary(usize),
}

/// Sign of a branch flip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Flip {
    Plus,
    Minus,
}

impl Flip {
    pub fn sign(self) -> f64 {
        match self {
            Flip::Plus => 1.0,
            Flip::Minus => -1.0,
        }
    }

    pub fn from_sign(v: f64) -> Flip {
        if v >= 0.0 {
            Flip::Plus
        } else {
            Flip::Minus
        }
    }
}

/// Global configuration parameter: one of the 8 discrete IK solution families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Branch {
    pub shoulder_flip: Flip,
    pub elbow_flip: Flip,
    pub wrist_flip: Flip,
}

impl Branch {
    pub fn new(shoulder: Flip, elbow: Flip, wrist: Flip) -> Self {
        Branch {
            shoulder_flip: shoulder,
            elbow_flip: elbow,
            wrist_flip: wrist,
        }
    }

    /// All 8 branches.
    pub fn all() -> [Branch; 8] {
        let mut out = [Branch::new(Flip::Plus, Flip::Plus, Flip::Plus); 8];
        let flips = [Flip::Plus, Flip::Minus];
        let mut k = 0;
        for &s in &flips {
            for &e in &flips {
                for &w in &flips {
                    out[k] = Branch::new(s, e, w);
                    k += 1;
                }
            }
        }
        out
    }

    /// Compact notation, e.g. `"+-+"` (shoulder, elbow, wrist).
    pub fn label(&self) -> String {
        let c = |f: Flip| if f == Flip::Plus { '+' } else { '-' };
        format!("{}{}{}", c(self.shoulder_flip), c(self.elbow_flip), c(self.wrist_flip))
    }

    pub fn parse(s: &str) -> Option<Branch> {
        let b: Vec<char> = s.chars().collect();
        if b.len() != 3 {
            return None;
        }
        let f = |c: char| match c {
            '+' => Some(Flip::Plus),
            '-' => Some(Flip::Minus),
            _ => None,
        };
        Some(Branch::new(f(b[0])?, f(b[1])?, f(b[2])?))
    }
}

/// Arm angle: rotation of the elbow about the shoulder-wrist axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RedundancyParam {
    pub psi: Angle,
}

impl RedundancyParam {
    pub fn new(psi: f64) -> Self {
        RedundancyParam { psi: Angle::new(psi) }
    }

    pub fn radians(&self) -> f64 {
        self.psi.radians()
    }
}

/// Seven joint angles, canonical in `[-pi, pi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointVector {
    pub angles: [f64; 7],
}

impl JointVector {
    pub fn new(angles: [f64; 7]) -> Self {
        let mut a = angles;
        for v in &mut a {
            *v = wrap_angle(*v);
        }
        JointVector { angles: a }
    }

    pub fn zeros() -> Self {
        JointVector { angles: [0.0; 7] }
    }

    pub fn max_abs_diff(&self, other: &JointVector) -> f64 {
        self.angles
            .iter()
            .zip(other.angles.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Kinematic description of one SRS arm.
#[derive(Debug, Clone)]
pub struct ArmModel {
    /// base->shoulder, shoulder->elbow, elbow->wrist, wrist->flange, meters.
    pub link_offsets: [f64; 4],
    pub joint_lower: [f64; 7],
    pub joint_upper: [f64; 7],
    pub base_pose: Pose,
}

impl ArmModel {
    pub fn new(link_offsets: [f64; 4], joint_lower: [f64; 7], joint_upper: [f64; 7], base_pose: Pose) -> Self {
        for d in link_offsets {
            assert!(d > 0.0, "link offsets must be positive");
        }
        for i in 0..7 {
            assert!(joint_lower[i] < joint_upper[i], "joint {i} limits inverted");
        }
        ArmModel {
            link_offsets,
            joint_lower,
            joint_upper,
            base_pose,
        }
    }

    /// iiwa-like default offsets; joint limits of the KUKA iiwa 14.
    pub fn default_iiwa(base_pose: Pose) -> Self {
        let deg = |d: f64| d.to_radians();
        let upper = [deg(170.0), deg(120.0), deg(170.0), deg(120.0), deg(170.0), deg(120.0), deg(175.0)];
        let lower = upper.map(|v| -v);
        ArmModel::new([0.36, 0.42, 0.40, 0.126], lower, upper, base_pose)
    }

    pub fn within_limits(&self, theta: &JointVector) -> bool {
        self.limit_violation_index(theta).is_none()
    }

    /// First joint (0-based) outside its closed limit interval, if any.
    pub fn limit_violation_index(&self, theta: &JointVector) -> Option<usize> {
        (0..7).find(|&i| theta.angles[i] < self.joint_lower[i] || theta.angles[i] > self.joint_upper[i])
    }

    fn d_bs(&self) -> f64 {
        self.link_offsets[0]
    }
    fn d_se(&self) -> f64 {
        self.link_offsets[1]
    }
    fn d_ew(&self) -> f64 {
        self.link_offsets[2]
    }
    fn d_wf(&self) -> f64 {
        self.link_offsets[3]
    }

    /// World poses of frames 0..=7 (0 = base, 1..=7 = after each joint).
    ///
    /// Frame origins: 1-3 at the shoulder, 4 at the elbow, 5-7 at the wrist.
    pub fn link_frames(&self, theta: &JointVector) -> [Pose; 8] {
        let t = &theta.angles;
        let steps = [
            Pose::from_translation(Vector3::new(0.0, 0.0, self.d_bs())).compose(&Pose::rotation_z(t[0])),
            Pose::rotation_y(t[1]),
            Pose::rotation_z(t[2]),
            Pose::from_translation(Vector3::new(0.0, 0.0, self.d_se())).compose(&Pose::rotation_y(t[3])),
            Pose::from_translation(Vector3::new(0.0, 0.0, self.d_ew())).compose(&Pose::rotation_z(t[4])),
            Pose::rotation_y(t[5]),
            Pose::rotation_z(t[6]),
        ];
        let mut frames = [Pose::identity(); 8];
        frames[0] = self.base_pose;
        for i in 0..7 {
            frames[i + 1] = frames[i].compose(&steps[i]);
        }
        frames
    }

    /// Flange pose in the world frame.
    pub fn forward_kinematics(&self, theta: &JointVector) -> Pose {
        let frames = self.link_frames(theta);
        frames[7].compose(&Pose::from_translation(Vector3::new(0.0, 0.0, self.d_wf())))
    }

    /// Shoulder position in the arm base-local frame.
    fn shoulder_local(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, self.d_bs())
    }

    /// Wrist center in the base-local frame for a base-local target pose.
    fn wrist_center_local(&self, local: &Pose) -> Vector3<f64> {
        local.translation() - local.rotation() * Vector3::new(0.0, 0.0, self.d_wf())
    }

    /// Inverse-trig arguments of the IK map for a world target pose, before
    /// any clamping: `[elbow cosine, shoulder-triangle cosine]`. The region
    /// grower cuts on these.
    pub fn trig_arguments(&self, target: &Pose) -> [f64; 2] {
        let local = self.base_pose.inverse().compose(target);
        let x_sw = self.wrist_center_local(&local) - self.shoulder_local();
        let d_sw = x_sw.norm();
        let (d_se, d_ew) = (self.d_se(), self.d_ew());
        let w_elbow = (d_sw * d_sw - d_se * d_se - d_ew * d_ew) / (2.0 * d_se * d_ew);
        let w_shoulder = if d_sw > 1e-12 {
            (d_se * d_se + d_sw * d_sw - d_ew * d_ew) / (2.0 * d_se * d_sw)
        } else {
            2.0
        };
        [w_elbow, w_shoulder]
    }

    /// Closed-form IK: joint angles achieving `target` with elbow arm-angle
    /// `psi` on the requested `branch`. Joint limits are NOT checked here.
    pub fn analytic_ik(&self, target: &Pose, psi: RedundancyParam, branch: Branch) -> Result<JointVector, IkError> {
        self.analytic_ik_impl(target, psi.radians(), branch, false)
    }

    /// IK variant that clamps trig arguments instead of failing, so that the
    /// map is total. Used by counterexample searches; the clamped result does
    /// not reach the target, which the reachability residual then detects.
    pub fn analytic_ik_clamped(&self, target: &Pose, psi: f64, branch: Branch) -> JointVector {
        self.analytic_ik_impl(target, psi, branch, true)
            .expect("clamped IK is total")
    }

    fn analytic_ik_impl(&self, target: &Pose, psi: f64, branch: Branch, clamp: bool) -> Result<JointVector, IkError> {
        let (d_bs, d_se, d_ew, d_wf) = (self.d_bs(), self.d_se(), self.d_ew(), self.d_wf());
        let local = self.base_pose.inverse().compose(target);
        let r07 = *local.rotation();
        let shoulder = Vector3::new(0.0, 0.0, d_bs);
        let wrist = local.translation() - r07 * Vector3::new(0.0, 0.0, d_wf);
        let mut x_sw = wrist - shoulder;
        let mut d_sw = x_sw.norm();

        let lo = (d_se - d_ew).abs() + UNREACHABLE_EPS;
        let hi = d_se + d_ew - UNREACHABLE_EPS;
        if d_sw < lo || d_sw > hi {
            if !clamp {
                return Err(IkError::Unreachable);
            }
            if d_sw < 1e-12 {
                x_sw = Vector3::new(0.0, 0.0, 1e-9);
                d_sw = 1e-9;
            }
            let clamped = d_sw.clamp(lo.max(1e-9), hi);
            x_sw *= clamped / d_sw;
            d_sw = clamped;
        }

        // Elbow angle from the shoulder-elbow-wrist triangle.
        let mut w_elbow = (d_sw * d_sw - d_se * d_se - d_ew * d_ew) / (2.0 * d_se * d_ew);
        if w_elbow.abs() >= 1.0 - TRIG_EPS {
            if !clamp {
                return Err(IkError::TrigDomainViolation);
            }
            w_elbow = w_elbow.clamp(-1.0 + TRIG_EPS, 1.0 - TRIG_EPS);
        }
        let theta4 = branch.elbow_flip.sign() * w_elbow.acos();

        // Elbow circle: center on the shoulder-wrist line, radius from the
        // triangle altitude.
        let u_sw = x_sw / d_sw;
        let mut w_shoulder = (d_se * d_se + d_sw * d_sw - d_ew * d_ew) / (2.0 * d_se * d_sw);
        if w_shoulder.abs() >= 1.0 - TRIG_EPS {
            if !clamp {
                return Err(IkError::TrigDomainViolation);
            }
            w_shoulder = w_shoulder.clamp(-1.0 + TRIG_EPS, 1.0 - TRIG_EPS);
        }
        let alpha = w_shoulder.acos();
        let center = shoulder + u_sw * (d_se * alpha.cos());
        let radius = d_se * alpha.sin();
        let (v1, v2) = arm_angle_reference_frame(&u_sw);
        let elbow = center + radius * (psi.cos() * v1 + psi.sin() * v2);

        let u_se = (elbow - shoulder) / d_se;
        let u_ew = (wrist - elbow) / d_ew;

        // Shoulder rotation R03 maps z to u_se and Ry(theta4) z to u_ew.
        let a = Vector3::z();
        let b = Vector3::new(theta4.sin(), 0.0, theta4.cos());
        let n1 = Vector3::new(branch.elbow_flip.sign(), 0.0, 0.0);
        let m_raw = u_ew - (u_ew.dot(&u_se)) * u_se;
        let m = if m_raw.norm() > 1e-12 {
            m_raw.normalize()
        } else {
            // Straight-arm degeneracy; excluded by the reachability band
            // unless clamping, where any perpendicular works.
            orthogonal_unit(&u_se)
        };
        debug_assert!((b - (b.dot(&a)) * a - theta4.sin().abs() * n1).norm() < 1e-9 || clamp);
        let f1 = Matrix3::from_columns(&[a, n1, a.cross(&n1)]);
        let g = Matrix3::from_columns(&[u_se, m, u_se.cross(&m)]);
        let r03 = g * f1.transpose();

        let (t1, t2, t3) = zyz_angles(&r03, branch.shoulder_flip);
        let r34 = *Pose::rotation_y(theta4).rotation();
        let r47 = (r03 * r34).transpose() * r07;
        let (t5, t6, t7) = zyz_angles(&r47, branch.wrist_flip);

        Ok(JointVector::new([t1, t2, t3, theta4, t5, t6, t7]))
    }

    /// The arm angle of a joint configuration (the map `h`).
    pub fn extract_redundancy(&self, theta: &JointVector) -> Result<RedundancyParam, ExtractionError> {
        let local_frames = self.local_chain_points(theta);
        let (shoulder, elbow, wrist) = local_frames;
        let x_sw = wrist - shoulder;
        let d_sw = x_sw.norm();
        if d_sw < SINGULAR_RADIUS_EPS {
            return Err(ExtractionError::SingularConfiguration);
        }
        let u_sw = x_sw / d_sw;
        let e_rel = elbow - shoulder;
        let e_perp = e_rel - (e_rel.dot(&u_sw)) * u_sw;
        if e_perp.norm() < SINGULAR_RADIUS_EPS {
            return Err(ExtractionError::SingularConfiguration);
        }
        let (v1, v2) = arm_angle_reference_frame(&u_sw);
        Ok(RedundancyParam::new(e_perp.dot(&v2).atan2(e_perp.dot(&v1))))
    }

    /// Which of the 8 discrete solution families `theta` lies in.
    pub fn extract_branch(&self, theta: &JointVector) -> Result<Branch, ExtractionError> {
        for &i in &[1usize, 3, 5] {
            if theta.angles[i].abs() < BRANCH_BOUNDARY_EPS {
                return Err(ExtractionError::BranchBoundary(i));
            }
        }
        Ok(Branch::new(
            Flip::from_sign(theta.angles[1]),
            Flip::from_sign(theta.angles[3]),
            Flip::from_sign(theta.angles[5]),
        ))
    }

    /// Shoulder, elbow, wrist positions in the base-local frame.
    fn local_chain_points(&self, theta: &JointVector) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let t = &theta.angles;
        let shoulder = self.shoulder_local();
        let r03 = *Pose::rotation_z(t[0])
            .compose(&Pose::rotation_y(t[1]))
            .compose(&Pose::rotation_z(t[2]))
            .rotation();
        let elbow = shoulder + r03 * Vector3::new(0.0, 0.0, self.d_se());
        let r04 = r03 * Pose::rotation_y(t[3]).rotation();
        let wrist = elbow + r04 * Vector3::new(0.0, 0.0, self.d_ew());
        (shoulder, elbow, wrist)
    }

    /// Geometric Jacobian of the flange pose in the world frame:
    /// rows = [linear velocity; angular velocity], columns = joints.
    pub fn fk_jacobian(&self, theta: &JointVector) -> nalgebra::SMatrix<f64, 6, 7> {
        let frames = self.link_frames(theta);
        let flange = frames[7].compose(&Pose::from_translation(Vector3::new(0.0, 0.0, self.d_wf())));
        let p = *flange.translation();
        // Rotation axis of joint i expressed in the world frame, and a point
        // on that axis.
        let axes: [Vector3<f64>; 7] = [
            frames[0].transform_vector(&Vector3::z()),
            frames[1].transform_vector(&Vector3::y()),
            frames[2].transform_vector(&Vector3::z()),
            frames[3].transform_vector(&Vector3::y()),
            frames[4].transform_vector(&Vector3::z()),
            frames[5].transform_vector(&Vector3::y()),
            frames[6].transform_vector(&Vector3::z()),
        ];
        let origins: [Vector3<f64>; 7] = [
            *frames[1].translation(),
            *frames[1].translation(),
            *frames[2].translation(),
            *frames[4].translation(),
            *frames[5].translation(),
            *frames[5].translation(),
            *frames[5].translation(),
        ];
        let mut j = nalgebra::SMatrix::<f64, 6, 7>::zeros();
        for i in 0..7 {
            let v = axes[i].cross(&(p - origins[i]));
            for k in 0..3 {
                j[(k, i)] = v[k];
                j[(k + 3, i)] = axes[i][k];
            }
        }
        j
    }

    /// Gradient of the arm-angle extraction `h` with respect to the joints,
    /// by central finite differences.
    fn redundancy_gradient(&self, theta: &JointVector) -> Result<[f64; 7], ExtractionError> {
        let h = 1e-6;
        let mut g = [0.0; 7];
        let base = self.extract_redundancy(theta)?.radians();
        for i in 0..7 {
            let mut tp = *theta;
            tp.angles[i] += h;
            let mut tm = *theta;
            tm.angles[i] -= h;
            let fp = self.extract_redundancy(&JointVector::new(tp.angles))?.radians();
            let fm = self.extract_redundancy(&JointVector::new(tm.angles))?.radians();
            g[i] = wrap_angle(fp - base) - wrap_angle(fm - base);
            g[i] /= 2.0 * h;
        }
        Ok(g)
    }

    /// Jacobian of the IK output with respect to a 7-dimensional local chart
    /// on (pose, psi): 3 translation coordinates, 3 exponential-map rotation
    /// coordinates (left perturbation), and psi.
    ///
    /// Computed by inverting the stacked map `[J_fk; grad h]`, which is the
    /// exact differential relation `[J_fk; grad h] dtheta = (dx, dpsi)`.
    pub fn ik_jacobian(&self, target: &Pose, psi: RedundancyParam, branch: Branch) -> Result<Matrix7, IkError> {
        let theta = self.analytic_ik(target, psi, branch)?;
        let j_fk = self.fk_jacobian(&theta);
        let grad_h = self
            .redundancy_gradient(&theta)
            .map_err(|_| IkError::Unreachable)?;
        let mut m = Matrix7::zeros();
        for c in 0..7 {
            for r in 0..3 {
                m[(r, c)] = j_fk[(r, c)]; // translation rows
                m[(r + 3, c)] = j_fk[(r + 3, c)]; // rotation rows
            }
            m[(6, c)] = grad_h[c];
        }
        m.try_inverse().ok_or(IkError::Unreachable)
    }
}

/// Reference directions spanning the elbow circle plane. `v1` is the
/// projection of the base z axis onto the plane normal to the shoulder-wrist
/// axis (so psi = 0 places the elbow in the plane containing that axis and
/// base z); falls back to the base x axis when they are parallel.
fn arm_angle_reference_frame(u_sw: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let z = Vector3::z();
    let mut v1 = z - (z.dot(u_sw)) * u_sw;
    if v1.norm() < 1e-8 {
        let x = Vector3::x();
        v1 = x - (x.dot(u_sw)) * u_sw;
    }
    let v1 = v1.normalize();
    let v2 = u_sw.cross(&v1);
    (v1, v2)
}

fn orthogonal_unit(v: &Vector3<f64>) -> Vector3<f64> {
    let candidate = if v[0].abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let o = candidate - (candidate.dot(v)) * v;
    o.normalize()
}

/// Decomposes `r = Rz(a) Ry(b) Rz(c)` with `sign(b)` given by `flip`.
/// At the `sin(b) = 0` degeneracy the split between a and c is fixed by a = 0.
fn zyz_angles(r: &Matrix3<f64>, flip: Flip) -> (f64, f64, f64) {
    let s = (r[(0, 2)] * r[(0, 2)] + r[(1, 2)] * r[(1, 2)]).sqrt();
    if s < 1e-12 {
        let b = if r[(2, 2)] > 0.0 { 0.0 } else { std::f64::consts::PI };
        // Only a+c (or a-c) is determined; fix a = 0.
        let c = if r[(2, 2)] > 0.0 {
            r[(1, 0)].atan2(r[(0, 0)])
        } else {
            (-r[(1, 0)]).atan2(-r[(0, 0)])
        };
        return (0.0, b, c);
    }
    let sg = flip.sign();
    let b = sg * s.atan2(r[(2, 2)]).abs();
    let a = (sg * r[(1, 2)]).atan2(sg * r[(0, 2)]);
    let c = (sg * r[(2, 1)]).atan2(-sg * r[(2, 0)]);
    (a, b, c)
}

/// Verify a pose against limits used by tests: FK reproduces target.
pub fn ik_pose_residual(model: &ArmModel, target: &Pose, theta: &JointVector) -> f64 {
    pose_error(&model.forward_kinematics(theta), target)
}
