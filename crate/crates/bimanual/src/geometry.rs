//! SE(3) poses and angle arithmetic on the circle.
//!
//! Rotations are stored as 3x3 matrices so that pose differences can be
//! expressed directly as Frobenius norms, which keeps the reachability
//! objective used by the region growers smooth.

use nalgebra::{Matrix3, Vector3};
use std::f64::consts::PI;

pub const TAU: f64 = 2.0 * PI;

/// Wraps an angle to the canonical interval `[-pi, pi)`. Idempotent.
pub fn wrap_angle(a: f64) -> f64 {
    if (-PI..PI).contains(&a) {
        return a;
    }
    let w = (a + PI).rem_euclid(TAU) - PI;
    // rem_euclid can return exactly TAU - eps rounding up to PI.
    if w >= PI {
        -PI
    } else {
        w
    }
}

/// Signed circular distance from `a` to `b` in `[-pi, pi)`.
pub fn signed_circular_distance(a: f64, b: f64) -> f64 {
    wrap_angle(b - a)
}

/// An angle with canonical representative in `[-pi, pi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Angle(f64);

impl Angle {
    pub fn new(radians: f64) -> Self {
        Angle(wrap_angle(radians))
    }

    pub fn radians(self) -> f64 {
        self.0
    }

    /// Signed shortest-arc distance to `other`, in `[-pi, pi)`.
    pub fn signed_distance(self, other: Angle) -> f64 {
        signed_circular_distance(self.0, other.0)
    }
}

/// Number of compositions after which the rotation is re-orthonormalized.
const REORTHONORMALIZE_EVERY: u32 = 100;

/// A rigid transform in SE(3): orthonormal rotation plus translation.
#[derive(Debug, Clone, Copy)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    // Composition chain length since the last re-orthonormalization.
    chain: u32,
}

impl PartialEq for Pose {
    fn eq(&self, other: &Self) -> bool {
        self.rotation == other.rotation && self.translation == other.translation
    }
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Pose {
            rotation,
            translation,
            chain: 0,
        }
    }

    pub fn identity() -> Self {
        Pose::new(Matrix3::identity(), Vector3::zeros())
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Pose::new(Matrix3::identity(), t)
    }

    pub fn rotation_x(a: f64) -> Self {
        Pose::new(*nalgebra::Rotation3::from_axis_angle(&Vector3::x_axis(), a).matrix(), Vector3::zeros())
    }

    pub fn rotation_y(a: f64) -> Self {
        Pose::new(*nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), a).matrix(), Vector3::zeros())
    }

    pub fn rotation_z(a: f64) -> Self {
        Pose::new(*nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), a).matrix(), Vector3::zeros())
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Applies the transform to a point.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Rotates a direction (no translation).
    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// The rigid transform of applying `other` then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let mut out = Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
            chain: self.chain + other.chain + 1,
        };
        if out.chain >= REORTHONORMALIZE_EVERY {
            out.reorthonormalize();
        }
        out
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
            chain: self.chain,
        }
    }

    /// Projects the rotation back onto SO(3) via polar decomposition.
    pub fn reorthonormalize(&mut self) {
        let svd = self.rotation.svd(true, true);
        let u = svd.u.unwrap();
        let vt = svd.v_t.unwrap();
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            // Flip the least-significant singular direction.
            let mut u2 = u;
            u2.set_column(2, &(-u.column(2)));
            r = u2 * vt;
        }
        self.rotation = r;
        self.chain = 0;
    }

    /// Rotation matrix for a rotation of `angle` about an arbitrary unit axis.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Pose {
        let axis = nalgebra::Unit::new_normalize(*axis);
        Pose::new(*nalgebra::Rotation3::from_axis_angle(&axis, angle).matrix(), Vector3::zeros())
    }

    /// Exponential map: rotation vector -> rotation matrix.
    pub fn exp_rotation(phi: &Vector3<f64>) -> Matrix3<f64> {
        let angle = phi.norm();
        if angle < 1e-14 {
            return Matrix3::identity() + skew(phi);
        }
        let axis = nalgebra::Unit::new_normalize(*phi);
        *nalgebra::Rotation3::from_axis_angle(&axis, angle).matrix()
    }

    /// Logarithm map: rotation matrix -> rotation vector.
    pub fn log_rotation(r: &Matrix3<f64>) -> Vector3<f64> {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(*r);
        rot.scaled_axis()
    }

    /// Row-major `[R | t]` flattening, 12 numbers.
    pub fn flatten(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t[0],
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t[1],
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t[2],
        ]
    }

    pub fn from_flat(v: &[f64]) -> Pose {
        assert_eq!(v.len(), 12);
        let rotation = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        let translation = Vector3::new(v[3], v[7], v[11]);
        Pose::new(rotation, translation)
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

/// Squared Frobenius norm of the difference of the 3x4 matrices `[R | t]`.
/// Zero iff the poses are equal.
pub fn pose_error(a: &Pose, b: &Pose) -> f64 {
    (a.rotation - b.rotation).norm_squared() + (a.translation - b.translation).norm_squared()
}
