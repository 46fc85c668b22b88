//! Bounded one-dimensional quasi-Newton minimization.
//!
//! The inverse curvature is updated from secant pairs (the 1-D BFGS update),
//! steps are projected onto `[lo, hi]` and accepted by Armijo backtracking.
//! When backtracking cannot find a decrease the search falls back to a
//! golden-section search on the bracket around the current point.

#[derive(Debug, Clone, Copy)]
pub struct QuasiNewtonOptions {
    pub max_iterations: usize,
    /// Stop when the projected gradient magnitude falls below this.
    pub gradient_tolerance: f64,
    /// Stop when a step moves less than this (relative to `1 + |x|`).
    pub step_tolerance: f64,
    /// Initial inverse curvature.
    pub initial_inverse_hessian: f64,
}

impl Default for QuasiNewtonOptions {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            gradient_tolerance: 1e-12,
            step_tolerance: 1e-14,
            // For a chord-length parameterized curve ‖s'‖ ≈ 1, so the
            // squared distance has curvature close to 2 near its minimum.
            initial_inverse_hessian: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundedResult {
    pub x: f64,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;

/// Minimizes `f` (returning value and derivative) on `[lo, hi]` from `x0`.
pub fn minimize_bounded<F>(f: F, x0: f64, lo: f64, hi: f64, opts: &QuasiNewtonOptions) -> BoundedResult
where
    F: Fn(f64) -> (f64, f64),
{
    let mut x = x0.clamp(lo, hi);
    let (mut fx, mut gx) = f(x);
    let mut inv_h = opts.initial_inverse_hessian;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iterations {
        let projected = (x - gx).clamp(lo, hi) - x;
        if projected.abs() <= opts.gradient_tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let dir = -inv_h * gx;
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let xn = (x + alpha * dir).clamp(lo, hi);
            if xn == x {
                break;
            }
            let (fn_, gn) = f(xn);
            if fn_.is_finite() && fn_ <= fx + ARMIJO * gx * (xn - x) {
                accepted = Some((xn, fn_, gn));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            // Bracketing failure: bisect the neighbourhood with golden section.
            let radius = dir.abs().max(opts.initial_inverse_hessian * gx.abs());
            let (a, b) = ((x - radius).max(lo), (x + radius).min(hi));
            let (xg, fg) = golden_section(|u| f(u).0, a, b, 60);
            if fg < fx {
                x = xg;
                fx = fg;
            }
            converged = true;
            break;
        };
        let s = xn - x;
        let y = gn - gx;
        x = xn;
        fx = fn_;
        gx = gn;
        if s * y > 1e-300 {
            inv_h = s / y;
        }
        if s.abs() <= opts.step_tolerance * (1.0 + x.abs()) {
            converged = true;
            break;
        }
    }
    BoundedResult {
        x,
        value: fx,
        iterations,
        converged,
    }
}

/// Golden-section search for a minimum of `f` on `[a, b]`.
pub fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, iterations: usize) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iterations {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let candidates = [(a, f(a)), (b, f(b)), (c, fc), (d, fd)];
    candidates
        .into_iter()
        .fold((a, f64::INFINITY), |best, x| if x.1 < best.1 { x } else { best })
}
