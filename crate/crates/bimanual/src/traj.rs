//! Line-oriented trajectory file format. One sample per line: time, 7 left
//! joints, 7 right joints, arm angle, optional grasp extension, then the
//! flattened (12-number) left and right end-effector poses. The pose
//! columns let external tools audit constraint violation without this
//! library. The header records a scene hash, the producing method, and the
//! RNG seed; numbers use shortest round-trip formatting so files reload
//! bit-for-bit.

use crate::arm::JointVector;
use crate::geometry::Pose;
use crate::planners::{FullPath, Path};
use crate::scene::Scene;
use crate::space::{xi_clamped, ParamConfig};
use crate::trajopt::SplinePath;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajError {
    #[error("trajectory file malformed: {0}")]
    FileFormat(String),
}

/// FNV-1a over a byte string; used to fingerprint the scene file in
/// trajectory headers.
pub fn fnv1a_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub theta_l: JointVector,
    pub theta_r: JointVector,
    pub psi_r: f64,
    pub grasp: Option<f64>,
    pub left_ee: Pose,
    pub right_ee: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub scene_hash: u64,
    pub method: String,
    pub seed: u64,
    pub samples: Vec<TrajectorySample>,
}

/// Header fields shared by every constructor.
#[derive(Debug, Clone)]
pub struct TrajHeader {
    pub scene_hash: u64,
    pub method: String,
    pub seed: u64,
}

fn sample_from_param(scene: &Scene, t: f64, q: &ParamConfig, branch: crate::arm::Branch) -> TrajectorySample {
    let full = xi_clamped(scene, q, branch);
    TrajectorySample {
        t,
        left_ee: scene.left.forward_kinematics(&full.theta_l),
        right_ee: scene.right.forward_kinematics(&full.theta_r),
        theta_l: full.theta_l,
        theta_r: full.theta_r,
        psi_r: q.psi_r.radians(),
        grasp: q.grasp_extension,
    }
}

impl Trajectory {
    /// Densely samples a waypoint path through the parametrization,
    /// `per_edge` interior samples per segment plus both endpoints.
    pub fn from_param_path(
        scene: &Scene,
        path: &Path,
        per_edge: usize,
        header: &TrajHeader,
    ) -> Trajectory {
        let mut samples = Vec::new();
        let n_edges = path.waypoints.len().saturating_sub(1).max(1);
        for (e, pair) in path.waypoints.windows(2).enumerate() {
            let steps = per_edge + 1;
            let upto = if e + 1 == n_edges { steps + 1 } else { steps };
            for s in 0..upto {
                let tau = s as f64 / steps as f64;
                let q = crate::space::interpolate(&pair[0], &pair[1], tau);
                let t = (e as f64 + tau) / n_edges as f64;
                samples.push(sample_from_param(scene, t, &q, path.branch));
            }
        }
        if path.waypoints.len() == 1 {
            samples.push(sample_from_param(scene, 0.0, &path.waypoints[0], path.branch));
        }
        Trajectory {
            scene_hash: header.scene_hash,
            method: header.method.clone(),
            seed: header.seed,
            samples,
        }
    }

    /// Uniformly samples a spline (n points, endpoints included).
    pub fn from_spline(
        scene: &Scene,
        spline: &SplinePath,
        n: usize,
        header: &TrajHeader,
    ) -> Trajectory {
        let n = n.max(2);
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                sample_from_param(scene, t, &spline.config_at(t), spline.branch)
            })
            .collect();
        Trajectory {
            scene_hash: header.scene_hash,
            method: header.method.clone(),
            seed: header.seed,
            samples,
        }
    }

    /// Densely samples a full-space waypoint path by linear joint
    /// interpolation — the baseline semantics: no projection between
    /// waypoints, so the pose columns expose any drift.
    pub fn from_full_path(
        scene: &Scene,
        path: &FullPath,
        per_edge: usize,
        header: &TrajHeader,
    ) -> Trajectory {
        let mut samples = Vec::new();
        let n_edges = path.waypoints.len().saturating_sub(1).max(1);
        for (e, pair) in path.waypoints.windows(2).enumerate() {
            let steps = per_edge + 1;
            let upto = if e + 1 == n_edges { steps + 1 } else { steps };
            for s in 0..upto {
                let tau = s as f64 / steps as f64;
                let mut tl = [0.0; 7];
                let mut tr = [0.0; 7];
                for i in 0..7 {
                    tl[i] = pair[0].theta_l.angles[i]
                        + tau * (pair[1].theta_l.angles[i] - pair[0].theta_l.angles[i]);
                    tr[i] = pair[0].theta_r.angles[i]
                        + tau * (pair[1].theta_r.angles[i] - pair[0].theta_r.angles[i]);
                }
                let theta_l = JointVector::new(tl);
                let theta_r = JointVector::new(tr);
                let psi_r = scene
                    .right
                    .extract_redundancy(&theta_r)
                    .map(|p| p.radians())
                    .unwrap_or(0.0);
                samples.push(TrajectorySample {
                    t: (e as f64 + tau) / n_edges as f64,
                    left_ee: scene.left.forward_kinematics(&theta_l),
                    right_ee: scene.right.forward_kinematics(&theta_r),
                    theta_l,
                    theta_r,
                    psi_r,
                    grasp: None,
                });
            }
        }
        Trajectory {
            scene_hash: header.scene_hash,
            method: header.method.clone(),
            seed: header.seed,
            samples,
        }
    }

    /// Sum of 14-dimensional joint-space chord lengths between samples.
    pub fn path_length_fullspace(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| {
                let mut s = 0.0;
                for i in 0..7 {
                    s += (w[1].theta_l.angles[i] - w[0].theta_l.angles[i]).powi(2);
                    s += (w[1].theta_r.angles[i] - w[0].theta_r.angles[i]).powi(2);
                }
                s.sqrt()
            })
            .sum()
    }

    /// Worst end-effector-pair grasp error over the samples: translation
    /// part in meters and full-pose Frobenius norm, measured against the
    /// scene's grasp transform.
    pub fn max_grasp_violation(&self, scene: &Scene) -> (f64, f64) {
        let mut worst_tr = 0.0_f64;
        let mut worst_fro = 0.0_f64;
        for s in &self.samples {
            let target = crate::space::phi_t(&s.left_ee, &scene.grasp.pose_at(s.grasp.unwrap_or(0.0)));
            let dt = (target.translation() - s.right_ee.translation()).norm();
            let mut fro = 0.0;
            let (ra, rb) = (target.rotation(), s.right_ee.rotation());
            for i in 0..3 {
                for j in 0..3 {
                    fro += (ra[(i, j)] - rb[(i, j)]).powi(2);
                }
            }
            fro += dt * dt;
            worst_tr = worst_tr.max(dt);
            worst_fro = worst_fro.max(fro.sqrt());
        }
        (worst_tr, worst_fro)
    }

    pub fn save(&self, path: &std::path::Path) -> std::io::Result<()> {
        use std::io::Write;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "trajectory v1")?;
        writeln!(out, "scene_hash {:016x}", self.scene_hash)?;
        writeln!(out, "method {}", self.method)?;
        writeln!(out, "seed {}", self.seed)?;
        let has_grasp = self.samples.iter().any(|s| s.grasp.is_some());
        writeln!(out, "grasp {}", u8::from(has_grasp))?;
        writeln!(out, "samples {}", self.samples.len())?;
        for s in &self.samples {
            let mut cols: Vec<String> = vec![s.t.to_string()];
            cols.extend(s.theta_l.angles.iter().map(f64::to_string));
            cols.extend(s.theta_r.angles.iter().map(f64::to_string));
            cols.push(s.psi_r.to_string());
            if has_grasp {
                cols.push(s.grasp.unwrap_or(0.0).to_string());
            }
            cols.extend(s.left_ee.flatten().iter().map(f64::to_string));
            cols.extend(s.right_ee.flatten().iter().map(f64::to_string));
            writeln!(out, "{}", cols.join(" "))?;
        }
        out.flush()
    }

    pub fn load(path: &std::path::Path) -> Result<Trajectory, TrajError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TrajError::FileFormat(e.to_string()))?;
        let bad = |msg: &str| TrajError::FileFormat(msg.to_string());
        let mut lines = text.lines();
        if lines.next() != Some("trajectory v1") {
            return Err(bad("missing magic line"));
        }
        let field = |line: Option<&str>, key: &str| -> Result<String, TrajError> {
            line.and_then(|l| l.strip_prefix(key))
                .map(|s| s.trim().to_string())
                .ok_or_else(|| bad(&format!("missing {key}")))
        };
        let scene_hash = u64::from_str_radix(&field(lines.next(), "scene_hash ")?, 16)
            .map_err(|e| bad(&e.to_string()))?;
        let method = field(lines.next(), "method ")?;
        let seed: u64 = field(lines.next(), "seed ")?
            .parse()
            .map_err(|e: std::num::ParseIntError| bad(&e.to_string()))?;
        let has_grasp = match field(lines.next(), "grasp ")?.as_str() {
            "0" => false,
            "1" => true,
            _ => return Err(bad("bad grasp flag")),
        };
        let count: usize = field(lines.next(), "samples ")?
            .parse()
            .map_err(|e: std::num::ParseIntError| bad(&e.to_string()))?;

        let expected = 1 + 7 + 7 + 1 + usize::from(has_grasp) + 12 + 12;
        let mut samples = Vec::with_capacity(count);
        for _ in 0..count {
            let line = lines.next().ok_or_else(|| bad("short sample section"))?;
            let vals: Result<Vec<f64>, _> =
                line.split_whitespace().map(str::parse::<f64>).collect();
            let vals = vals.map_err(|e| bad(&e.to_string()))?;
            if vals.len() != expected {
                return Err(bad(&format!(
                    "expected {expected} columns, got {}",
                    vals.len()
                )));
            }
            let mut k = 0;
            let mut take = |n: usize| {
                let s = &vals[k..k + n];
                k += n;
                s.to_vec()
            };
            let t = take(1)[0];
            let tl: [f64; 7] = take(7).try_into().unwrap();
            let tr: [f64; 7] = take(7).try_into().unwrap();
            let psi_r = take(1)[0];
            let grasp = if has_grasp { Some(take(1)[0]) } else { None };
            let left_ee = Pose::from_flat(&take(12));
            let right_ee = Pose::from_flat(&take(12));
            samples.push(TrajectorySample {
                t,
                theta_l: JointVector::new(tl),
                theta_r: JointVector::new(tr),
                psi_r,
                grasp,
                left_ee,
                right_ee,
            });
        }
        Ok(Trajectory {
            scene_hash,
            method,
            seed,
            samples,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm::ArmModel;
    use crate::planners::sample_valid;
    use crate::space::GraspTransform;
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

    #[test]
    fn fnv1a_matches_reference_vectors() {
        // Published FNV-1a test vectors.
        assert_eq!(fnv1a_hash(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a_hash(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a_hash(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn trajectory_file_round_trips_exactly() {
        let scene = open_scene();
        let branch = scene.default_branch;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = sample_valid(&scene, branch, &mut rng).unwrap();
        let b = sample_valid(&scene, branch, &mut rng).unwrap();
        let path = Path {
            waypoints: vec![a, b],
            branch,
        };
        let header = TrajHeader {
            scene_hash: fnv1a_hash(b"test scene"),
            method: "ik-birrt".into(),
            seed: 42,
        };
        let traj = Trajectory::from_param_path(&scene, &path, 9, &header);
        assert_eq!(traj.samples.len(), 11);
        let file = std::env::temp_dir().join("bimanual_traj_roundtrip_test.txt");
        traj.save(&file).unwrap();
        let back = Trajectory::load(&file).unwrap();
        std::fs::remove_file(&file).ok();
        assert_eq!(traj, back);
        // Independent length recomputation from the reloaded file agrees.
        assert!((traj.path_length_fullspace() - back.path_length_fullspace()).abs() == 0.0);
    }

    #[test]
    fn param_path_samples_hold_grasp_constraint() {
        let scene = open_scene();
        let branch = scene.default_branch;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = sample_valid(&scene, branch, &mut rng).unwrap();
        let path = Path {
            waypoints: vec![a.clone(), a],
            branch,
        };
        let header = TrajHeader {
            scene_hash: 0,
            method: "x".into(),
            seed: 0,
        };
        let traj = Trajectory::from_param_path(&scene, &path, 4, &header);
        let (tr, fro) = traj.max_grasp_violation(&scene);
        assert!(tr <= 1e-9, "translation violation {tr}");
        assert!(fro <= 1e-9, "frobenius violation {fro}");
    }

    #[test]
    fn malformed_file_is_rejected() {
        let file = std::env::temp_dir().join("bimanual_traj_bad_test.txt");
        std::fs::write(&file, "not a trajectory\n").unwrap();
        let res = Trajectory::load(&file);
        std::fs::remove_file(&file).ok();
        assert!(matches!(res, Err(TrajError::FileFormat(_))));
    }
}
