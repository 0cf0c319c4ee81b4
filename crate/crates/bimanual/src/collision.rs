//! Collision geometry and distance queries.
//!
//! Robot links and the held object are capsules attached to link frames;
//! the environment is a set of oriented boxes. Signed distances are exact
//! closed forms for capsule-capsule and a sampled-and-refined line search for
//! capsule-box.

use crate::geometry::Pose;
use crate::scene::Scene;
use crate::space::FullConfig;
use nalgebra::Vector3;

/// Which arm a capsule is attached to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArmSide {
    Left,
    Right,
}

/// A capsule rigidly attached to a link frame (or the flange for the object).
#[derive(Debug, Clone)]
pub struct CapsuleSpec {
    /// Frame index 0..=7 (0 = arm base).
    pub link: usize,
    pub p0: Vector3<f64>,
    pub p1: Vector3<f64>,
    pub radius: f64,
}

/// An oriented box obstacle.
#[derive(Debug, Clone)]
pub struct BoxObstacle {
    pub pose: Pose,
    pub half_extents: Vector3<f64>,
}

/// Identifier of a collision body within a scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BodyId {
    ArmCapsule(ArmSide, usize),
    Object,
    StaticBox(usize),
}

/// An unordered pair of distinct collision bodies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CollisionPair {
    pub a: BodyId,
    pub b: BodyId,
}

impl CollisionPair {
    pub fn new(a: BodyId, b: BodyId) -> Self {
        CollisionPair { a, b }
    }
}

/// World-space placement of one body: either a capsule segment or a box.
#[derive(Debug, Clone)]
enum PlacedBody {
    Capsule { p0: Vector3<f64>, p1: Vector3<f64>, radius: f64 },
    Box(BoxObstacle),
}

/// Closed-form distance between two segments.
pub fn segment_segment_distance(
    p1: &Vector3<f64>,
    q1: &Vector3<f64>,
    p2: &Vector3<f64>,
    q2: &Vector3<f64>,
) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    let eps = 1e-14;

    let (s, t);
    if a <= eps && e <= eps {
        return r.norm();
    }
    if a <= eps {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= eps {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s_ = if denom > eps {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t_ = (b * s_ + f) / e;
            if t_ < 0.0 {
                t_ = 0.0;
                s_ = (-c / a).clamp(0.0, 1.0);
            } else if t_ > 1.0 {
                t_ = 1.0;
                s_ = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s_;
            t = t_;
        }
    }
    ((p1 + d1 * s) - (p2 + d2 * t)).norm()
}

/// Signed distance from a point to an oriented box (negative inside).
pub fn point_box_signed_distance(p: &Vector3<f64>, b: &BoxObstacle) -> f64 {
    let local = b.pose.inverse().transform_point(p);
    let q = Vector3::new(
        local[0].abs() - b.half_extents[0],
        local[1].abs() - b.half_extents[1],
        local[2].abs() - b.half_extents[2],
    );
    let outside = Vector3::new(q[0].max(0.0), q[1].max(0.0), q[2].max(0.0));
    let inside = q[0].max(q[1]).max(q[2]).min(0.0);
    outside.norm() + inside
}

/// Signed distance from a segment to an oriented box: minimum of the point
/// signed distance along the segment. Coarse sampling locates the basin,
/// golden-section refines it.
pub fn segment_box_signed_distance(p0: &Vector3<f64>, p1: &Vector3<f64>, b: &BoxObstacle) -> f64 {
    let f = |t: f64| point_box_signed_distance(&(p0 + (p1 - p0) * t), b);
    let n = 32;
    let mut best_t = 0.0;
    let mut best = f64::INFINITY;
    for k in 0..=n {
        let t = k as f64 / n as f64;
        let v = f(t);
        if v < best {
            best = v;
            best_t = t;
        }
    }
    let step = 1.0 / n as f64;
    let (mut lo, mut hi) = ((best_t - step).max(0.0), (best_t + step).min(1.0));
    let phi = 0.618_033_988_749_894_9;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..60 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = f(x2);
        }
    }
    best.min(f1).min(f2)
}

fn place_body(scene: &Scene, full: &FullConfig, id: BodyId) -> PlacedBody {
    match id {
        BodyId::ArmCapsule(side, idx) => {
            let (model, caps, theta) = match side {
                ArmSide::Left => (&scene.left, &scene.left_capsules, &full.theta_l),
                ArmSide::Right => (&scene.right, &scene.right_capsules, &full.theta_r),
            };
            let spec = &caps[idx];
            let frames = model.link_frames(theta);
            let frame = &frames[spec.link];
            PlacedBody::Capsule {
                p0: frame.transform_point(&spec.p0),
                p1: frame.transform_point(&spec.p1),
                radius: spec.radius,
            }
        }
        BodyId::Object => {
            let spec = scene.object_capsule.as_ref().expect("scene has no object capsule");
            let flange = scene.left.forward_kinematics(&full.theta_l);
            PlacedBody::Capsule {
                p0: flange.transform_point(&spec.p0),
                p1: flange.transform_point(&spec.p1),
                radius: spec.radius,
            }
        }
        BodyId::StaticBox(i) => PlacedBody::Box(scene.static_boxes[i].clone()),
    }
}

fn placed_distance(a: &PlacedBody, b: &PlacedBody) -> f64 {
    match (a, b) {
        (
            PlacedBody::Capsule { p0: a0, p1: a1, radius: ra },
            PlacedBody::Capsule { p0: b0, p1: b1, radius: rb },
        ) => segment_segment_distance(a0, a1, b0, b1) - ra - rb,
        (PlacedBody::Capsule { p0, p1, radius }, PlacedBody::Box(bx))
        | (PlacedBody::Box(bx), PlacedBody::Capsule { p0, p1, radius }) => {
            segment_box_signed_distance(p0, p1, bx) - radius
        }
        (PlacedBody::Box(_), PlacedBody::Box(_)) => {
            // Static-static pairs are never active.
            f64::INFINITY
        }
    }
}

/// Signed distance between one pair of bodies at a full configuration.
/// Positive means separated, negative is a penetration depth lower bound.
pub fn pair_distance(scene: &Scene, full: &FullConfig, pair: &CollisionPair) -> f64 {
    let a = place_body(scene, full, pair.a);
    let b = place_body(scene, full, pair.b);
    placed_distance(&a, &b)
}

/// Minimum signed distance over all active pairs.
pub fn min_pair_distance(scene: &Scene, full: &FullConfig) -> f64 {
    let mut min = f64::INFINITY;
    for pair in scene.collision_pairs() {
        let d = pair_distance(scene, full, pair);
        if d < min {
            min = d;
        }
    }
    min
}

/// Like [`min_pair_distance`] but also reports the offending pair.
pub fn min_pair_distance_with_pair(scene: &Scene, full: &FullConfig) -> (f64, Option<CollisionPair>) {
    let mut min = f64::INFINITY;
    let mut who = None;
    for pair in scene.collision_pairs() {
        let d = pair_distance(scene, full, pair);
        if d < min {
            min = d;
            who = Some(*pair);
        }
    }
    (min, who)
}

/// A configuration is collision free when every active pair clears the
/// safety margin (boundary inclusive).
pub fn is_collision_free(scene: &Scene, full: &FullConfig) -> bool {
    for pair in scene.collision_pairs() {
        if pair_distance(scene, full, pair) < scene.collision_margin {
            return false;
        }
    }
    true
}
