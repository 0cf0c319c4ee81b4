//! Convex collision-free region growing in Q. Polytopes are grown around a
//! seed by alternating a counterexample search (find the closest point, in
//! the ellipsoid metric, that violates one constraint; cut it off with a
//! tangent hyperplane) with a maximum-volume inscribed-ellipsoid update.
//!
//! The arm angle is treated as a Euclidean coordinate after cutting its
//! circle at `psi_seed + pi`, so a region never wraps the cut.

use crate::arm::Branch;
use crate::collision::{min_pair_distance, pair_distance, CollisionPair};
use crate::scene::Scene;
use crate::solver::lbfgs_minimize;
use crate::space::{phi_t, xi, xi_clamped, ParamConfig};
use crate::trajopt::vec_to_param;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegionError {
    #[error("seed configuration is invalid or in collision")]
    SeedInvalid,
    #[error("hyperplane budget exceeded ({0} planes)")]
    IterationBudgetExceeded(usize),
    #[error("polytope has empty interior")]
    EmptyInterior,
    #[error("region file malformed: {0}")]
    FileFormat(String),
}

/// Ellipsoid {q : ||C (q - d)||^2 <= 1}.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperellipsoid {
    pub c: DMatrix<f64>,
    pub center: DVector<f64>,
}

impl Hyperellipsoid {
    pub fn ball(center: DVector<f64>, radius: f64) -> Hyperellipsoid {
        let n = center.len();
        Hyperellipsoid {
            c: DMatrix::identity(n, n) / radius,
            center,
        }
    }

    pub fn metric_sq(&self, q: &DVector<f64>) -> f64 {
        (&self.c * (q - &self.center)).norm_squared()
    }

    /// log det C — decreases as the ellipsoid grows.
    pub fn log_det_c(&self) -> f64 {
        self.c.clone().lu().determinant().abs().max(1e-300).ln()
    }
}

/// Polytope {q : A q <= b}.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Polytope {
    /// Axis-aligned box given per-coordinate bounds.
    pub fn box_bounds(lower: &[f64], upper: &[f64]) -> Polytope {
        let d = lower.len();
        let mut a = DMatrix::zeros(2 * d, d);
        let mut b = DVector::zeros(2 * d);
        for i in 0..d {
            a[(2 * i, i)] = 1.0;
            b[2 * i] = upper[i];
            a[(2 * i + 1, i)] = -1.0;
            b[2 * i + 1] = -lower[i];
        }
        Polytope { a, b }
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn n_planes(&self) -> usize {
        self.a.nrows()
    }

    pub fn contains(&self, q: &DVector<f64>, tol: f64) -> bool {
        let r = &self.a * q - &self.b;
        r.iter().all(|&v| v <= tol)
    }

    pub fn add_halfspace(&mut self, normal: &DVector<f64>, offset: f64) {
        let m = self.a.nrows();
        let d = self.a.ncols();
        let mut a = DMatrix::zeros(m + 1, d);
        a.view_mut((0, 0), (m, d)).copy_from(&self.a);
        a.row_mut(m).copy_from(&normal.transpose());
        self.a = a;
        self.b = self.b.clone().insert_row(m, offset);
    }

    /// A strictly interior point, found by pushing a start point away from
    /// every face; None when no interior is found.
    pub fn interior_point(&self, start: &DVector<f64>) -> Option<DVector<f64>> {
        let res = lbfgs_minimize(
            |x, g| {
                g.fill(0.0);
                let mut v = 0.0;
                for i in 0..self.n_planes() {
                    let row = self.a.row(i);
                    let slack = self.b[i] - row.dot(&x.transpose());
                    // Softplus of violation keeps the objective smooth.
                    let z = -slack / 1e-2;
                    let (sp, dsp) = if z > 30.0 {
                        (z, 1.0)
                    } else {
                        ((1.0 + z.exp()).ln(), z.exp() / (1.0 + z.exp()))
                    };
                    v += sp;
                    for c in 0..self.dim() {
                        g[c] += dsp * self.a[(i, c)] / 1e-2;
                    }
                }
                v
            },
            start.clone(),
            200,
            1e-10,
        );
        let x = res.x;
        let slack = (&self.b - &self.a * &x).min();
        if slack > 1e-9 {
            Some(x)
        } else {
            None
        }
    }
}

/// One constraint family the grower must keep out of the region. Margins are
/// conservative: counterexamples are found slightly inside the true boundary
/// so the finished region audits clean.
#[derive(Debug, Clone)]
pub enum ConstraintSet {
    /// |trig argument| within `eps` of 1 (index into `trig_arguments`).
    TrigDomain { index: usize, eps: f64 },
    /// Any joint of either arm within `eps` rad of a limit.
    JointLimit { eps: f64 },
    /// Clamped-IK pose error (Frobenius squared) at least `eps`.
    Reachability { eps: f64 },
    /// One collision pair at distance `margin` or less.
    Collision { pair: CollisionPair, margin: f64 },
}

/// Raw violation measure: >= 0 exactly when the point belongs to the
/// constraint set (is a counterexample).
pub fn violation(scene: &Scene, cs: &ConstraintSet, q: &ParamConfig, branch: Branch) -> f64 {
    match cs {
        ConstraintSet::TrigDomain { index, eps } => {
            let g = q.grasp_extension.unwrap_or(0.0);
            let target = phi_t(
                &scene.left.forward_kinematics(&q.theta_l),
                &scene.grasp.pose_at(g),
            );
            scene.right.trig_arguments(&target)[*index].abs() - (1.0 - eps)
        }
        ConstraintSet::JointLimit { eps } => {
            let full = xi_clamped(scene, q, branch);
            let mut worst = f64::NEG_INFINITY;
            for i in 0..7 {
                worst = worst
                    .max(full.theta_l.angles[i] - (scene.left.joint_upper[i] - eps))
                    .max((scene.left.joint_lower[i] + eps) - full.theta_l.angles[i])
                    .max(full.theta_r.angles[i] - (scene.right.joint_upper[i] - eps))
                    .max((scene.right.joint_lower[i] + eps) - full.theta_r.angles[i]);
            }
            worst
        }
        ConstraintSet::Reachability { eps } => {
            let full = xi_clamped(scene, q, branch);
            crate::space::kinematic_residual(scene, &full, q.grasp_extension).powi(2) - eps
        }
        ConstraintSet::Collision { pair, margin } => {
            let full = xi_clamped(scene, q, branch);
            margin - pair_distance(scene, &full, pair)
        }
    }
}

/// The default constraint-set list for a scene: trig domains first (cheap
/// and structurally dominant), then joint limits, reachability, and every
/// collision pair.
pub fn default_constraint_sets(scene: &Scene) -> Vec<ConstraintSet> {
    let mut list = vec![
        ConstraintSet::TrigDomain { index: 0, eps: 5e-3 },
        ConstraintSet::TrigDomain { index: 1, eps: 5e-3 },
        ConstraintSet::JointLimit { eps: 5e-3 },
        ConstraintSet::Reachability { eps: 1e-6 },
    ];
    for pair in scene.collision_pairs() {
        // Cut strictly tighter than the audit threshold so borderline
        // points cannot fail the audit.
        list.push(ConstraintSet::Collision {
            pair: *pair,
            margin: scene.collision_margin + 5e-3,
        });
    }
    list
}

/// A found counterexample with its separating hyperplane (tangent to the
/// constraint surface through the point).
#[derive(Debug, Clone)]
pub struct Counterexample {
    pub point: DVector<f64>,
    pub normal: DVector<f64>,
    pub offset: f64,
}

/// Consecutive failed sample batches before the search declares the
/// polytope clear of a constraint.
pub const N_FAIL: usize = 5;

/// Samples drawn per batch of the counterexample search.
const SEARCH_BATCH: usize = 200;

/// Builds the tangent cut through a violating `sample`: the sample is pulled
/// back to the constraint boundary by bisection toward `anchor` (when the
/// anchor itself is clear of the constraint), and the hyperplane normal is
/// the finite-difference violation gradient there, so a flat boundary is
/// removed by a single cut. The anchor direction is the fallback normal
/// when the gradient vanishes.
fn cut_through(
    violation: &dyn Fn(&DVector<f64>) -> f64,
    anchor: &DVector<f64>,
    sample: &DVector<f64>,
) -> Option<Counterexample> {
    let fd_h = 1e-6;
    let dim = sample.len();
    let point = if violation(anchor) < 0.0 {
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            let cand = anchor + (sample - anchor) * mid;
            if violation(&cand) >= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        anchor + (sample - anchor) * hi
    } else {
        // Anchor inside the constraint set: cut deep at the raw sample.
        sample.clone()
    };
    let mut normal = DVector::zeros(dim);
    for c in 0..dim {
        let mut hi = point.clone();
        let mut lo = point.clone();
        hi[c] += fd_h;
        lo[c] -= fd_h;
        normal[c] = (violation(&hi) - violation(&lo)) / (2.0 * fd_h);
    }
    if normal.norm() < 1e-9 {
        normal = &point - anchor;
    }
    let nn = normal.norm();
    if nn < 1e-12 {
        return None;
    }
    let normal = normal / nn;
    let offset = normal.dot(&point);
    Some(Counterexample {
        point,
        normal,
        offset,
    })
}

/// Searches the polytope for a point violating the constraint. `violation`
/// must be >= 0 exactly on the constraint set. Hit-and-run samples are
/// screened in batches; a violating sample is turned into a tight tangent
/// cut by `cut_through`. Returns None when `N_FAIL` batches in a row are
/// clean (the polytope is taken to be clear of this constraint).
pub fn counterexample_search(
    violation: &dyn Fn(&DVector<f64>) -> f64,
    polytope: &Polytope,
    ellipsoid: &Hyperellipsoid,
    rng: &mut ChaCha8Rng,
) -> Option<Counterexample> {
    let mut failures = 0;
    while failures < N_FAIL {
        let samples = polytope_samples(polytope, &ellipsoid.center, SEARCH_BATCH, rng);
        let mut found = None;
        for s in &samples {
            if violation(s) < 0.0 {
                continue;
            }
            if let Some(ce) = cut_through(violation, &ellipsoid.center, s) {
                // Strict containment (negative tolerance) rejects points
                // sitting on an existing cut, which would otherwise be
                // re-cut forever.
                if polytope.contains(&ce.point, -1e-9) {
                    found = Some(ce);
                    break;
                }
            }
        }
        match found {
            Some(ce) => return Some(ce),
            None => failures += 1,
        }
    }
    None
}

/// Budget of hyperplanes added in one iteration before giving up.
pub const PLANE_BUDGET: usize = 500;

/// How far a cut bites past the counterexample, toward the valid side. On
/// curved boundaries each tangent cut only removes a local piece; the bite
/// keeps neighbouring boundary points from spawning endless parallel cuts.
const CUT_BITE: f64 = 2e-3;

/// Adds `ce` as a halfspace, relaxing the offset when it would cut off the
/// seed.
fn add_cut(polytope: &mut Polytope, ce: &Counterexample, seed: &DVector<f64>) {
    let mut offset = ce.offset - CUT_BITE;
    let at_seed = ce.normal.dot(seed);
    if at_seed > offset {
        offset = at_seed + 1e-9;
    }
    polytope.add_halfspace(&ce.normal, offset);
}

/// One hyperplane-generation pass of the region grower: cut counterexamples
/// of the worst constraint set until the search declares the polytope clear.
/// `seed` containment is preserved by relaxing offending planes.
pub fn grow_region_iteration(
    violations: &[Box<dyn Fn(&DVector<f64>) -> f64 + '_>],
    mut polytope: Polytope,
    ellipsoid: &Hyperellipsoid,
    seed: &DVector<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<Polytope, RegionError> {
    let combined = |q: &DVector<f64>| -> f64 {
        violations
            .iter()
            .map(|v| v(q))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let mut added = 0;
    loop {
        let Some(ce) = counterexample_search(&combined, &polytope, ellipsoid, rng) else {
            break;
        };
        add_cut(&mut polytope, &ce, seed);
        added += 1;
        if added > PLANE_BUDGET {
            return Err(RegionError::IterationBudgetExceeded(PLANE_BUDGET));
        }
    }
    Ok(polytope)
}

/// Maximum-volume inscribed ellipsoid {B u + d : ||u|| <= 1} of a bounded
/// polytope, by log-barrier maximization of log det B subject to
/// ||B a_i|| + a_i . d <= b_i. Returned in the {C, center} form with
/// C = B^-1.
pub fn inscribed_ellipsoid(polytope: &Polytope) -> Result<Hyperellipsoid, RegionError> {
    let d = polytope.dim();
    let m = polytope.n_planes();
    let start = {
        let mut mid = DVector::zeros(d);
        // Box rows exist for every coordinate, so averaging face offsets of
        // the first 2d rows gives a sane start.
        for i in 0..d {
            mid[i] = (polytope.b[2 * i] - polytope.b[2 * i + 1]) / 2.0;
        }
        mid
    };
    let center = polytope
        .interior_point(&start)
        .ok_or(RegionError::EmptyInterior)?;
    let r0 = (0..m)
        .map(|i| {
            (polytope.b[i] - polytope.a.row(i).dot(&center.transpose()))
                / polytope.a.row(i).norm().max(1e-300)
        })
        .fold(f64::INFINITY, f64::min);
    if r0 <= 0.0 {
        return Err(RegionError::EmptyInterior);
    }

    // Parameters: lower-triangular B with log-diagonal, plus the center.
    let n_tri = d * (d + 1) / 2;
    let unpack = |z: &DVector<f64>| -> (DMatrix<f64>, DVector<f64>) {
        let mut bmat = DMatrix::zeros(d, d);
        let mut k = 0;
        for r in 0..d {
            for c in 0..=r {
                if r == c {
                    bmat[(r, c)] = z[k].exp();
                } else {
                    bmat[(r, c)] = z[k];
                }
                k += 1;
            }
        }
        let mut cen = DVector::zeros(d);
        for i in 0..d {
            cen[i] = z[n_tri + i];
        }
        (bmat, cen)
    };
    let mut z = DVector::zeros(n_tri + d);
    {
        let mut k = 0;
        for r in 0..d {
            for c in 0..=r {
                if r == c {
                    z[k] = (0.9 * r0).ln();
                }
                k += 1;
            }
        }
        for i in 0..d {
            z[n_tri + i] = center[i];
        }
    }

    let mut t_barrier = 1.0;
    for _ in 0..8 {
        let objective = |zv: &DVector<f64>, g: &mut DVector<f64>| -> f64 {
            let fd_h = 1e-7;
            let eval = |zz: &DVector<f64>| -> f64 {
                let (bmat, cen) = unpack(zz);
                let mut logdet = 0.0;
                for r in 0..d {
                    logdet += bmat[(r, r)].max(1e-300).ln();
                }
                let mut v = -t_barrier * logdet;
                for i in 0..m {
                    let a_i = polytope.a.row(i).transpose();
                    let slack =
                        polytope.b[i] - a_i.dot(&cen) - (bmat.transpose() * &a_i).norm();
                    if slack <= 0.0 {
                        return 1e12 - 1e6 * slack;
                    }
                    v -= slack.ln();
                }
                v
            };
            let f0 = eval(zv);
            for i in 0..zv.len() {
                let mut hi = zv.clone();
                let mut lo = zv.clone();
                hi[i] += fd_h;
                lo[i] -= fd_h;
                g[i] = (eval(&hi) - eval(&lo)) / (2.0 * fd_h);
            }
            f0
        };
        let res = lbfgs_minimize(objective, z.clone(), 300, 1e-9);
        z = res.x;
        t_barrier *= 8.0;
    }
    let (bmat, cen) = unpack(&z);
    let c = bmat
        .clone()
        .try_inverse()
        .ok_or(RegionError::EmptyInterior)?;
    Ok(Hyperellipsoid { c, center: cen })
}

/// A finished region: polytope + ellipsoid in the cut Q chart.
#[derive(Debug, Clone)]
pub struct Region {
    pub polytope: Polytope,
    pub ellipsoid: Hyperellipsoid,
    pub branch: Branch,
    /// The arm-angle coordinate lives on (psi_cut - pi, psi_cut + pi].
    pub psi_cut: f64,
    pub grasp_dof: bool,
}

impl Region {
    pub fn config_of(&self, v: &DVector<f64>) -> ParamConfig {
        vec_to_param(v, self.grasp_dof)
    }

    pub fn vec_of(&self, q: &ParamConfig) -> DVector<f64> {
        // Unwrap psi into the region's window.
        let psi = self.psi_cut
            + crate::geometry::wrap_angle(q.psi_r.radians() - self.psi_cut);
        crate::trajopt::param_to_vec(q, psi)
    }

    pub fn contains(&self, q: &ParamConfig, tol: f64) -> bool {
        self.polytope.contains(&self.vec_of(q), tol)
    }
}

/// Writes regions in the plain-text region file format:
///
/// ```text
/// regions <count>
/// region
/// branch <label>          # e.g. +-+
/// psi_cut <f64>
/// grasp_dof <0|1>
/// A <m> <d>               # then m lines of d numbers
/// b <m>                   # then one line of m numbers
/// C <d> <d>               # then d lines of d numbers
/// center <d>              # then one line of d numbers
/// ```
///
/// Numbers use Rust's shortest round-trip float formatting, so
/// save → load reproduces the region bit-for-bit.
pub fn save_regions(path: &std::path::Path, regions: &[Region]) -> std::io::Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "regions {}", regions.len())?;
    for r in regions {
        writeln!(out, "region")?;
        writeln!(out, "branch {}", r.branch.label())?;
        writeln!(out, "psi_cut {}", r.psi_cut)?;
        writeln!(out, "grasp_dof {}", u8::from(r.grasp_dof))?;
        let (m, d) = (r.polytope.n_planes(), r.polytope.dim());
        writeln!(out, "A {m} {d}")?;
        for i in 0..m {
            let row: Vec<String> = (0..d).map(|j| r.polytope.a[(i, j)].to_string()).collect();
            writeln!(out, "{}", row.join(" "))?;
        }
        writeln!(out, "b {m}")?;
        let bvec: Vec<String> = (0..m).map(|i| r.polytope.b[i].to_string()).collect();
        writeln!(out, "{}", bvec.join(" "))?;
        writeln!(out, "C {d} {d}")?;
        for i in 0..d {
            let row: Vec<String> = (0..d).map(|j| r.ellipsoid.c[(i, j)].to_string()).collect();
            writeln!(out, "{}", row.join(" "))?;
        }
        writeln!(out, "center {d}")?;
        let cvec: Vec<String> = (0..d).map(|i| r.ellipsoid.center[i].to_string()).collect();
        writeln!(out, "{}", cvec.join(" "))?;
    }
    out.flush()
}

/// Reads a region file written by `save_regions`.
pub fn load_regions(path: &std::path::Path) -> Result<Vec<Region>, RegionError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RegionError::FileFormat(e.to_string()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let bad = |msg: &str| RegionError::FileFormat(msg.to_string());

    let header = lines.next().ok_or_else(|| bad("empty file"))?;
    let count: usize = header
        .strip_prefix("regions ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| bad("missing regions header"))?;

    let numbers = |line: &str, n: usize| -> Result<Vec<f64>, RegionError> {
        let vals: Result<Vec<f64>, _> =
            line.split_whitespace().map(str::parse::<f64>).collect();
        let vals = vals.map_err(|e| bad(&format!("bad number: {e}")))?;
        if vals.len() != n {
            return Err(bad(&format!("expected {n} numbers, got {}", vals.len())));
        }
        Ok(vals)
    };

    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let tag = lines.next().ok_or_else(|| bad("missing region block"))?;
        if tag.trim() != "region" {
            return Err(bad("expected region block"));
        }
        let branch_line = lines.next().ok_or_else(|| bad("missing branch"))?;
        let branch = branch_line
            .strip_prefix("branch ")
            .and_then(|s| Branch::parse(s.trim()))
            .ok_or_else(|| bad("bad branch label"))?;
        let psi_cut: f64 = lines
            .next()
            .and_then(|l| l.strip_prefix("psi_cut "))
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad("bad psi_cut"))?;
        let grasp_dof = match lines
            .next()
            .and_then(|l| l.strip_prefix("grasp_dof "))
            .map(str::trim)
        {
            Some("0") => false,
            Some("1") => true,
            _ => return Err(bad("bad grasp_dof")),
        };

        let dims = |line: Option<&str>, key: &str| -> Result<Vec<usize>, RegionError> {
            line.and_then(|l| l.strip_prefix(key))
                .map(|s| {
                    s.split_whitespace()
                        .map(|t| t.parse::<usize>().map_err(|e| bad(&e.to_string())))
                        .collect::<Result<Vec<usize>, _>>()
                })
                .ok_or_else(|| bad(&format!("missing {key} header")))?
        };

        let md = dims(lines.next(), "A ")?;
        let (m, d) = (md[0], md[1]);
        let mut a = DMatrix::zeros(m, d);
        for i in 0..m {
            let row = numbers(lines.next().ok_or_else(|| bad("short A"))?, d)?;
            for j in 0..d {
                a[(i, j)] = row[j];
            }
        }
        let _ = dims(lines.next(), "b ")?;
        let b = DVector::from_vec(numbers(lines.next().ok_or_else(|| bad("short b"))?, m)?);
        let _ = dims(lines.next(), "C ")?;
        let mut c = DMatrix::zeros(d, d);
        for i in 0..d {
            let row = numbers(lines.next().ok_or_else(|| bad("short C"))?, d)?;
            for j in 0..d {
                c[(i, j)] = row[j];
            }
        }
        let _ = dims(lines.next(), "center ")?;
        let center =
            DVector::from_vec(numbers(lines.next().ok_or_else(|| bad("short center"))?, d)?);

        out.push(Region {
            polytope: Polytope { a, b },
            ellipsoid: Hyperellipsoid { c, center },
            branch,
            psi_cut,
            grasp_dof,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct GrowOptions {
    pub max_outer: usize,
    /// Stop when relative ellipsoid-volume growth falls below this.
    pub volume_rel_tol: f64,
    pub audit_samples: usize,
    pub max_audit_repairs: usize,
    /// Half-width of the growth box around the seed, per coordinate. Growth
    /// starts from this box rather than the full joint box: the stochastic
    /// counterexample search cannot carve every invalid pocket out of the
    /// full-range polytope, but it converges inside a seed-local box.
    pub box_radius: f64,
    pub rng_seed: u64,
}

impl Default for GrowOptions {
    fn default() -> Self {
        GrowOptions {
            max_outer: 5,
            volume_rel_tol: 0.02,
            audit_samples: 10_000,
            max_audit_repairs: 20,
            box_radius: 0.6,
            rng_seed: 0,
        }
    }
}

/// Approximately uniform samples inside a polytope by hit-and-run from a
/// strictly interior start.
pub fn polytope_samples(
    polytope: &Polytope,
    start: &DVector<f64>,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<DVector<f64>> {
    let d = polytope.dim();
    let mut x = start.clone();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut dir = DVector::zeros(d);
        for i in 0..d {
            // Box-Muller for an isotropic direction.
            let (u1, u2) = (rng.gen::<f64>().max(1e-12), rng.gen::<f64>());
            dir[i] = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
        dir /= dir.norm().max(1e-300);
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..polytope.n_planes() {
            let denom = polytope.a.row(i).dot(&dir.transpose());
            let slack = polytope.b[i] - polytope.a.row(i).dot(&x.transpose());
            if denom.abs() < 1e-14 {
                continue;
            }
            let t = slack / denom;
            if denom > 0.0 {
                hi = hi.min(t);
            } else {
                lo = lo.max(t);
            }
        }
        if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
            out.push(x.clone());
            continue;
        }
        let t = lo + rng.gen::<f64>() * (hi - lo);
        x += dir * t;
        out.push(x.clone());
    }
    out
}

fn audit_failures(
    scene: &Scene,
    region: &Region,
    samples: &[DVector<f64>],
) -> Vec<DVector<f64>> {
    let mut bad = Vec::new();
    for v in samples {
        let q = region.config_of(v);
        let ok = match xi(scene, &q, region.branch) {
            Ok(full) => min_pair_distance(scene, &full) >= scene.collision_margin,
            Err(_) => false,
        };
        if !ok {
            bad.push(v.clone());
        }
    }
    bad
}

fn scene_bounds(scene: &Scene, psi_cut: f64, grasp_dof: bool) -> (Vec<f64>, Vec<f64>) {
    let mut lower: Vec<f64> = scene.left.joint_lower.to_vec();
    let mut upper: Vec<f64> = scene.left.joint_upper.to_vec();
    lower.push(psi_cut - std::f64::consts::PI);
    upper.push(psi_cut + std::f64::consts::PI);
    if grasp_dof {
        let (lo, hi) = scene
            .grasp
            .extension_range
            .expect("grasp dof requires an extension range");
        lower.push(lo);
        upper.push(hi);
    }
    (lower, upper)
}

/// Grows a region of Q_VALID ∩ Q_FREE around `seed`. The returned region
/// contains the seed and passes a rejection audit; audit failures are cut
/// off and re-audited (with a shrink warning counted in the result).
pub fn grow_region(
    scene: &Scene,
    seed: &ParamConfig,
    branch: Branch,
    opts: &GrowOptions,
) -> Result<Region, RegionError> {
    let valid = match xi(scene, seed, branch) {
        Ok(full) => min_pair_distance(scene, &full) >= scene.collision_margin,
        Err(_) => false,
    };
    if !valid {
        return Err(RegionError::SeedInvalid);
    }
    let grasp_dof = seed.grasp_extension.is_some();
    let psi_cut = seed.psi_r.radians();
    let (lower, upper) = scene_bounds(scene, psi_cut, grasp_dof);
    let seed_v = crate::trajopt::param_to_vec(seed, psi_cut);
    let lower: Vec<f64> = lower
        .iter()
        .enumerate()
        .map(|(i, &lo)| lo.max(seed_v[i] - opts.box_radius))
        .collect();
    let upper: Vec<f64> = upper
        .iter()
        .enumerate()
        .map(|(i, &hi)| hi.min(seed_v[i] + opts.box_radius))
        .collect();
    let h0 = Polytope::box_bounds(&lower, &upper);

    let cs_list = default_constraint_sets(scene);
    let violations: Vec<Box<dyn Fn(&DVector<f64>) -> f64 + '_>> = cs_list
        .iter()
        .map(|cs| {
            let cs = cs.clone();
            Box::new(move |v: &DVector<f64>| {
                violation(scene, &cs, &vec_to_param(v, grasp_dof), branch)
            }) as Box<dyn Fn(&DVector<f64>) -> f64>
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.rng_seed);
    let mut ellipsoid = Hyperellipsoid::ball(seed_v.clone(), 0.05);
    let mut polytope = h0.clone();
    let mut last_logdet = f64::INFINITY;
    for _outer in 0..opts.max_outer {
        polytope = grow_region_iteration(&violations, h0.clone(), &ellipsoid, &seed_v, &mut rng)?;
        ellipsoid = inscribed_ellipsoid(&polytope)?;
        // Volume grows as log det C falls; stop on small relative change.
        let logdet = ellipsoid.log_det_c();
        if last_logdet.is_finite() {
            let dim = polytope.dim() as f64;
            let rel = ((last_logdet - logdet) / dim).exp() - 1.0;
            if rel.abs() < opts.volume_rel_tol {
                break;
            }
        }
        last_logdet = logdet;
    }

    let mut region = Region {
        polytope,
        ellipsoid,
        branch,
        psi_cut,
        grasp_dof,
    };
    // Audit and repair: every audit failure also violates one of the
    // conservative encodings (they are supersets of the audit criteria), so
    // it gets the same boundary-bisected tangent cut as the grower.
    let combined = |q: &DVector<f64>| -> f64 {
        violations
            .iter()
            .map(|v| v(q))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    // Acceptance requires several consecutive clean audits so the residual
    // invalid volume sits well below one part in `audit_samples`.
    const CLEAN_AUDITS_REQUIRED: usize = 3;
    let mut clean_streak = 0;
    let mut repairs = 0;
    while repairs <= opts.max_audit_repairs {
        let samples = polytope_samples(
            &region.polytope,
            &seed_v,
            opts.audit_samples,
            &mut rng,
        );
        let bad = audit_failures(scene, &region, &samples);
        if bad.is_empty() {
            clean_streak += 1;
            if clean_streak >= CLEAN_AUDITS_REQUIRED {
                return Ok(region);
            }
            continue;
        }
        clean_streak = 0;
        repairs += 1;
        for v in bad {
            if let Some(ce) = cut_through(&combined, &seed_v, &v) {
                add_cut(&mut region.polytope, &ce, &seed_v);
            }
        }
    }
    // Could not clear the audit; report the region as unusable.
    Err(RegionError::IterationBudgetExceeded(region.polytope.n_planes()))
}

/// `grow_region` with a retry ladder: on failure the trust box is shrunk
/// and the RNG reseeded. Seeds close to the obstacle boundary (typical for
/// shortcut-path waypoints) often cannot clear the audit at full radius but
/// certify quickly in a smaller box; volume is traded for reliability.
pub fn grow_region_robust(
    scene: &Scene,
    seed: &ParamConfig,
    branch: Branch,
    opts: &GrowOptions,
) -> Result<Region, RegionError> {
    let mut last = RegionError::SeedInvalid;
    for (k, scale) in [1.0, 0.5, 0.3, 0.18].into_iter().enumerate() {
        let o = GrowOptions {
            box_radius: opts.box_radius * scale,
            rng_seed: opts.rng_seed.wrapping_add(k as u64),
            max_audit_repairs: opts.max_audit_repairs + 10 * k,
            ..opts.clone()
        };
        match grow_region(scene, seed, branch, &o) {
            Ok(r) => return Ok(r),
            Err(e) => last = e,
        }
    }
    Err(last)
}

/// `grow_region` with the grasp extension as an extra coordinate; the seed
/// must carry a grasp value and the scene an extension range.
pub fn grow_region_with_grasp_dof(
    scene: &Scene,
    seed: &ParamConfig,
    branch: Branch,
    opts: &GrowOptions,
) -> Result<Region, RegionError> {
    if seed.grasp_extension.is_none() || scene.grasp.extension_axis.is_none() {
        return Err(RegionError::SeedInvalid);
    }
    grow_region(scene, seed, branch, opts)
}
