//! Motion planning for dual-arm robots holding a single object with both
//! hands.
//!
//! The task-space equality constraint (a fixed transform between the two end
//! effectors) is eliminated by planning over the joints of one "controlled"
//! arm plus the arm angle of the "subordinate" arm, whose joints are recovered
//! in closed form by analytic inverse kinematics. On top of that parametrized
//! space the crate provides sampling-based planners (BiRRT, PRM), kinematic
//! trajectory optimization, convex collision-free region growing, and a
//! region-graph planner, together with full-space baselines and a benchmark
//! harness.

pub mod arm;
pub mod bench;
pub mod gcs;
pub mod planners;
pub mod regions;
pub mod collision;
pub mod geometry;
pub mod scene;
pub mod solver;
pub mod space;
pub mod traj;
pub mod trajopt;

pub use arm::{ArmModel, Branch, Flip, IkError, JointVector, RedundancyParam};
pub use geometry::{pose_error, Angle, Pose};
