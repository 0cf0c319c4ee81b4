//! Small unconstrained optimization utilities shared by the trajectory
//! optimizer and the region grower: limited-memory BFGS with backtracking
//! line search, and alternating projections onto convex sets.

use nalgebra::DVector;

/// Result of an L-BFGS run.
#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Limited-memory BFGS with Armijo backtracking. `f` evaluates the objective
/// and writes its gradient. Deterministic; stops on gradient norm, step
/// failure, or the iteration cap.
pub fn lbfgs_minimize<F>(
    mut f: F,
    x0: DVector<f64>,
    max_iters: usize,
    grad_tol: f64,
) -> MinimizeResult
where
    F: FnMut(&DVector<f64>, &mut DVector<f64>) -> f64,
{
    const MEMORY: usize = 10;
    let n = x0.len();
    let mut x = x0;
    let mut g = DVector::zeros(n);
    let mut fx = f(&x, &mut g);
    let mut s_hist: Vec<DVector<f64>> = Vec::new();
    let mut y_hist: Vec<DVector<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();
    let mut iterations = 0;

    for it in 0..max_iters {
        iterations = it;
        let gnorm = g.norm();
        if gnorm <= grad_tol {
            break;
        }
        // Two-loop recursion.
        let mut q = g.clone();
        let k = s_hist.len();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            alpha[i] = rho_hist[i] * s_hist[i].dot(&q);
            q -= &y_hist[i] * alpha[i];
        }
        let gamma = if k > 0 {
            let y = &y_hist[k - 1];
            s_hist[k - 1].dot(y) / y.dot(y).max(1e-300)
        } else {
            1.0
        };
        let mut z = q * gamma;
        for i in 0..k {
            let beta = rho_hist[i] * y_hist[i].dot(&z);
            z += &s_hist[i] * (alpha[i] - beta);
        }
        let mut dir = -z;
        let mut slope = g.dot(&dir);
        if slope >= 0.0 {
            // Bad curvature information; fall back to steepest descent.
            dir = -&g;
            slope = -gnorm * gnorm;
        }

        // Armijo backtracking.
        let mut step = 1.0;
        let mut accepted = false;
        let mut g_new = DVector::zeros(n);
        let mut x_new = DVector::zeros(n);
        let mut f_new = fx;
        for _ in 0..40 {
            x_new = &x + &dir * step;
            f_new = f(&x_new, &mut g_new);
            if f_new <= fx + 1e-4 * step * slope {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 {
            s_hist.push(s);
            y_hist.push(y);
            rho_hist.push(1.0 / sy);
            if s_hist.len() > MEMORY {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
        }
        x = x_new;
        g = g_new;
        fx = f_new;
    }
    MinimizeResult {
        grad_norm: g.norm(),
        x,
        value: fx,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn minimizes_quadratic() {
        let res = lbfgs_minimize(
            |x, g| {
                let mut v = 0.0;
                for i in 0..x.len() {
                    let w = (i + 1) as f64;
                    v += 0.5 * w * (x[i] - 1.0).powi(2);
                    g[i] = w * (x[i] - 1.0);
                }
                v
            },
            DVector::from_element(8, 5.0),
            200,
            1e-10,
        );
        for i in 0..8 {
            assert_abs_diff_eq!(res.x[i], 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn minimizes_rosenbrock() {
        let res = lbfgs_minimize(
            |x, g| {
                let (a, b) = (x[0], x[1]);
                g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
                g[1] = 200.0 * (b - a * a);
                (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
            },
            DVector::from_vec(vec![-1.2, 1.0]),
            2000,
            1e-10,
        );
        assert_abs_diff_eq!(res.x[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(res.x[1], 1.0, epsilon = 1e-6);
    }
}
