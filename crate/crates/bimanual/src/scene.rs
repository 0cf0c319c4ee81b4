//! Scene description: arms, grasp, collision geometry, planning parameters
//! and named queries, loadable from a TOML file.
//!
//! All lengths are meters and all angles are radians.
//!
//! ```toml
//! [left_arm]
//! link_offsets = [0.36, 0.42, 0.40, 0.126]
//! base_pose = { xyz = [0.0, 0.35, 0.0], rpy = [0.0, 0.0, 0.0] }
//! # joint_lower / joint_upper optional; default iiwa limits
//!
//! [right_arm]
//! base_pose = { xyz = [0.0, -0.35, 0.0], rpy = [0.0, 0.0, 0.0] }
//!
//! [grasp]
//! pose = { xyz = [0.0, 0.0, 0.30], rpy = [3.14159265, 0.0, 0.0] }
//! # extension_axis = [0.0, 0.0, 1.0]
//! # extension_range = [0.0, 0.10]
//!
//! [[boxes]]
//! xyz = [0.6, 0.0, 0.5]
//! rpy = [0.0, 0.0, 0.0]
//! half_extents = [0.15, 0.4, 0.01]
//!
//! [[capsules]]
//! body = "left"          # "left" | "right" | "object"
//! link = 3               # 0..=7, ignored for "object"
//! p0 = [0.0, 0.0, 0.05]
//! p1 = [0.0, 0.0, 0.35]
//! radius = 0.06
//!
//! [params]
//! collision_margin = 0.01
//! edge_max_joint_step = 0.05
//! tau_task = 0.02
//! grasp_weight = 5.0
//! branch = "+++"
//!
//! [[queries]]
//! name = "top_to_middle"
//! start = { theta_l = [0,0,0,0,0,0,0], psi_r = 0.0 }
//! goal  = { theta_l = [0,0,0,0,0,0,0], psi_r = 0.0 }
//! ```

use crate::arm::{ArmModel, Branch, JointVector};
use crate::collision::{ArmSide, BodyId, BoxObstacle, CapsuleSpec, CollisionPair};
use crate::geometry::Pose;
use crate::space::{GraspTransform, ParamConfig};
use nalgebra::Vector3;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scene: {0}")]
    Invalid(String),
}

/// A named start/goal pair in the parametrized space.
#[derive(Debug, Clone)]
pub struct NamedQuery {
    pub name: String,
    pub start: ParamConfig,
    pub goal: ParamConfig,
}

/// Immutable world model shared by every planner.
#[derive(Debug, Clone)]
pub struct Scene {
    pub left: ArmModel,
    pub right: ArmModel,
    pub grasp: GraspTransform,
    pub static_boxes: Vec<BoxObstacle>,
    pub left_capsules: Vec<CapsuleSpec>,
    pub right_capsules: Vec<CapsuleSpec>,
    pub object_capsule: Option<CapsuleSpec>,
    /// Safety margin below which a pair counts as colliding.
    pub collision_margin: f64,
    /// Max allowed full-configuration step (rad, inf-norm) along edges.
    pub edge_max_joint_step: f64,
    /// Max allowed end-effector translation sweep per edge step (m).
    pub tau_task: f64,
    /// Weight (per meter) of the grasp-extension coordinate in the Q metric.
    pub grasp_weight: f64,
    pub default_branch: Branch,
    pub queries: Vec<NamedQuery>,
    /// FNV-1a hash of the source file, 0 for programmatic scenes.
    pub source_hash: u64,
    pairs: Vec<CollisionPair>,
}

impl Scene {
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        left: ArmModel,
        right: ArmModel,
        grasp: GraspTransform,
        static_boxes: Vec<BoxObstacle>,
        left_capsules: Vec<CapsuleSpec>,
        right_capsules: Vec<CapsuleSpec>,
        object_capsule: Option<CapsuleSpec>,
    ) -> Scene {
        let mut scene = Scene {
            left,
            right,
            grasp,
            static_boxes,
            left_capsules,
            right_capsules,
            object_capsule,
            collision_margin: 0.01,
            edge_max_joint_step: 0.05,
            tau_task: 0.02,
            grasp_weight: 5.0,
            default_branch: Branch::parse("+++").unwrap(),
            queries: Vec::new(),
            source_hash: 0,
            pairs: Vec::new(),
        };
        scene.rebuild_pairs();
        scene
    }

    /// Active collision pairs. Same-arm capsule pairs closer than three links
    /// apart are excluded (they share joints), as is the held object against
    /// wrist-side capsules (links >= 5) of either arm.
    pub fn collision_pairs(&self) -> &[CollisionPair] {
        &self.pairs
    }

    pub fn rebuild_pairs(&mut self) {
        let mut pairs = Vec::new();
        let arms = [
            (ArmSide::Left, &self.left_capsules),
            (ArmSide::Right, &self.right_capsules),
        ];
        // Arm capsules vs boxes.
        for (side, caps) in &arms {
            for ci in 0..caps.len() {
                for bi in 0..self.static_boxes.len() {
                    pairs.push(CollisionPair::new(BodyId::ArmCapsule(*side, ci), BodyId::StaticBox(bi)));
                }
            }
        }
        // Left vs right arm capsules.
        for li in 0..self.left_capsules.len() {
            for ri in 0..self.right_capsules.len() {
                pairs.push(CollisionPair::new(
                    BodyId::ArmCapsule(ArmSide::Left, li),
                    BodyId::ArmCapsule(ArmSide::Right, ri),
                ));
            }
        }
        // Same-arm self-collision for far-apart links.
        for (side, caps) in &arms {
            for a in 0..caps.len() {
                for b in (a + 1)..caps.len() {
                    if caps[a].link.abs_diff(caps[b].link) >= 3 {
                        pairs.push(CollisionPair::new(
                            BodyId::ArmCapsule(*side, a),
                            BodyId::ArmCapsule(*side, b),
                        ));
                    }
                }
            }
        }
        // Held object vs boxes and vs shoulder-side arm capsules.
        if self.object_capsule.is_some() {
            for bi in 0..self.static_boxes.len() {
                pairs.push(CollisionPair::new(BodyId::Object, BodyId::StaticBox(bi)));
            }
            for (side, caps) in &arms {
                for (ci, cap) in caps.iter().enumerate() {
                    if cap.link < 5 {
                        pairs.push(CollisionPair::new(BodyId::Object, BodyId::ArmCapsule(*side, ci)));
                    }
                }
            }
        }
        self.pairs = pairs;
    }

    pub fn query(&self, name: &str) -> Option<&NamedQuery> {
        self.queries.iter().find(|q| q.name == name)
    }

    pub fn load(path: &std::path::Path) -> Result<Scene, SceneError> {
        let text = std::fs::read_to_string(path)?;
        Scene::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Scene, SceneError> {
        let spec: SceneSpec = toml::from_str(text)?;
        let mut scene = spec.build()?;
        scene.source_hash = fnv1a64(text.as_bytes());
        Ok(scene)
    }
}

/// 64-bit FNV-1a, used to fingerprint scene files in trajectory headers.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

// --- serde surface -------------------------------------------------------

#[derive(Debug, Deserialize)]
struct PoseSpec {
    xyz: [f64; 3],
    #[serde(default)]
    rpy: [f64; 3],
}

impl PoseSpec {
    fn to_pose(&self) -> Pose {
        let t = Vector3::new(self.xyz[0], self.xyz[1], self.xyz[2]);
        let r = Pose::rotation_z(self.rpy[2])
            .compose(&Pose::rotation_y(self.rpy[1]))
            .compose(&Pose::rotation_x(self.rpy[0]));
        Pose::new(*r.rotation(), t)
    }
}

#[derive(Debug, Deserialize)]
struct ArmSpec {
    #[serde(default = "default_offsets")]
    link_offsets: [f64; 4],
    joint_lower: Option<[f64; 7]>,
    joint_upper: Option<[f64; 7]>,
    base_pose: PoseSpec,
}

fn default_offsets() -> [f64; 4] {
    [0.36, 0.42, 0.40, 0.126]
}

impl ArmSpec {
    fn build(&self) -> ArmModel {
        let mut m = ArmModel::default_iiwa(self.base_pose.to_pose());
        m.link_offsets = self.link_offsets;
        if let Some(l) = self.joint_lower {
            m.joint_lower = l;
        }
        if let Some(u) = self.joint_upper {
            m.joint_upper = u;
        }
        m
    }
}

#[derive(Debug, Deserialize)]
struct GraspSpec {
    pose: PoseSpec,
    extension_axis: Option<[f64; 3]>,
    extension_range: Option<[f64; 2]>,
}

#[derive(Debug, Deserialize)]
struct BoxSpec {
    xyz: [f64; 3],
    #[serde(default)]
    rpy: [f64; 3],
    half_extents: [f64; 3],
}

#[derive(Debug, Deserialize)]
struct CapsuleFileSpec {
    body: String,
    #[serde(default)]
    link: usize,
    p0: [f64; 3],
    p1: [f64; 3],
    radius: f64,
}

#[derive(Debug, Deserialize)]
struct ParamsSpec {
    collision_margin: Option<f64>,
    edge_max_joint_step: Option<f64>,
    tau_task: Option<f64>,
    grasp_weight: Option<f64>,
    branch: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ConfigSpec {
    theta_l: [f64; 7],
    psi_r: f64,
    grasp: Option<f64>,
}

impl ConfigSpec {
    fn build(&self) -> ParamConfig {
        let mut q = ParamConfig::new(JointVector::new(self.theta_l), self.psi_r);
        q.grasp_extension = self.grasp;
        q
    }
}

#[derive(Debug, Deserialize)]
struct QuerySpec {
    name: String,
    start: ConfigSpec,
    goal: ConfigSpec,
}

#[derive(Debug, Deserialize)]
struct SceneSpec {
    left_arm: ArmSpec,
    right_arm: ArmSpec,
    grasp: GraspSpec,
    #[serde(default)]
    boxes: Vec<BoxSpec>,
    #[serde(default)]
    capsules: Vec<CapsuleFileSpec>,
    params: Option<ParamsSpec>,
    #[serde(default)]
    queries: Vec<QuerySpec>,
}

impl SceneSpec {
    fn build(&self) -> Result<Scene, SceneError> {
        let v3 = |a: [f64; 3]| Vector3::new(a[0], a[1], a[2]);
        let mut left_caps = Vec::new();
        let mut right_caps = Vec::new();
        let mut object_cap = None;
        for c in &self.capsules {
            if c.radius <= 0.0 {
                return Err(SceneError::Invalid("capsule radius must be positive".into()));
            }
            if c.link > 7 {
                return Err(SceneError::Invalid(format!("capsule link {} out of range", c.link)));
            }
            let spec = CapsuleSpec {
                link: c.link,
                p0: v3(c.p0),
                p1: v3(c.p1),
                radius: c.radius,
            };
            match c.body.as_str() {
                "left" => left_caps.push(spec),
                "right" => right_caps.push(spec),
                "object" => object_cap = Some(spec),
                other => return Err(SceneError::Invalid(format!("unknown capsule body '{other}'"))),
            }
        }
        let boxes = self
            .boxes
            .iter()
            .map(|b| {
                if b.half_extents.iter().any(|&h| h <= 0.0) {
                    return Err(SceneError::Invalid("box half extents must be positive".into()));
                }
                Ok(BoxObstacle {
                    pose: PoseSpec { xyz: b.xyz, rpy: b.rpy }.to_pose(),
                    half_extents: v3(b.half_extents),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;

        let grasp = GraspTransform {
            base: self.grasp.pose.to_pose(),
            extension_axis: self.grasp.extension_axis.map(|a| v3(a).normalize()),
            extension_range: self.grasp.extension_range.map(|r| (r[0], r[1])),
        };

        let mut scene = Scene::from_parts(
            self.left_arm.build(),
            self.right_arm.build(),
            grasp,
            boxes,
            left_caps,
            right_caps,
            object_cap,
        );
        if let Some(p) = &self.params {
            if let Some(v) = p.collision_margin {
                scene.collision_margin = v;
            }
            if let Some(v) = p.edge_max_joint_step {
                scene.edge_max_joint_step = v;
            }
            if let Some(v) = p.tau_task {
                scene.tau_task = v;
            }
            if let Some(v) = p.grasp_weight {
                scene.grasp_weight = v;
            }
            if let Some(b) = &p.branch {
                scene.default_branch = Branch::parse(b)
                    .ok_or_else(|| SceneError::Invalid(format!("bad branch label '{b}'")))?;
            }
        }
        scene.queries = self
            .queries
            .iter()
            .map(|q| NamedQuery {
                name: q.name.clone(),
                start: q.start.build(),
                goal: q.goal.build(),
            })
            .collect();
        Ok(scene)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [left_arm]
        base_pose = { xyz = [0.0, 0.35, 0.0] }

        [right_arm]
        base_pose = { xyz = [0.0, -0.35, 0.0] }

        [grasp]
        pose = { xyz = [0.0, 0.0, 0.30], rpy = [3.141592653589793, 0.0, 0.0] }

        [[boxes]]
        xyz = [0.6, 0.0, 0.5]
        half_extents = [0.15, 0.4, 0.01]

        [[capsules]]
        body = "left"
        link = 3
        p0 = [0.0, 0.0, 0.05]
        p1 = [0.0, 0.0, 0.35]
        radius = 0.06

        [[capsules]]
        body = "right"
        link = 4
        p0 = [0.0, 0.0, 0.05]
        p1 = [0.0, 0.0, 0.35]
        radius = 0.06

        [params]
        collision_margin = 0.005
        branch = "+-+"

        [[queries]]
        name = "a_to_b"
        start = { theta_l = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7], psi_r = 0.5 }
        goal = { theta_l = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], psi_r = -0.5 }
    "#;

    #[test]
    fn parses_minimal_scene() {
        let scene = Scene::from_toml_str(MINIMAL).unwrap();
        assert_eq!(scene.static_boxes.len(), 1);
        assert_eq!(scene.left_capsules.len(), 1);
        assert_eq!(scene.collision_margin, 0.005);
        assert_eq!(scene.default_branch.label(), "+-+");
        assert!(scene.query("a_to_b").is_some());
        assert_ne!(scene.source_hash, 0);
        // left cap vs box, right cap vs box, left vs right cap.
        assert_eq!(scene.collision_pairs().len(), 3);
    }

    #[test]
    fn rejects_bad_capsule() {
        let bad = MINIMAL.replace("radius = 0.06", "radius = -1.0");
        assert!(Scene::from_toml_str(&bad).is_err());
    }
}
