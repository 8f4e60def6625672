//! Deterministic composite Gauss-Legendre quadrature in one and two
//! dimensions, with interval-doubling refinement.
//!
//! The entropy module uses this as its numeric oracle; the channel module
//! uses it for density-normalization checks. Node counts and refinement
//! schedules are fixed so results are bit-reproducible across runs.

use thiserror::Error;

/// Nodes per panel. 20-point Gauss-Legendre is exact for polynomials up to
/// degree 39, which together with panel doubling gives fast convergence for
/// the smooth (Gaussian-type) integrands used here.
const NODES_PER_PANEL: usize = 20;

#[derive(Debug, Error)]
pub enum QuadError {
    #[error("quadrature did not converge: last refinement changed the estimate by {last_diff:e} (tolerance {tol:e})")]
    NonConvergent { last_diff: f64, tol: f64 },
    #[error("invalid integration domain: [{a}, {b}]")]
    InvalidDomain { a: f64, b: f64 },
}

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1],
/// computed with Newton iteration on the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2, "need at least a 2-point rule");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi-style initial guess for the i-th positive root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_n(x) and P_n'(x) by upward recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = (n as f64) * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Composite rule over `panels` equal subintervals of [a, b].
fn composite_1d(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64, panels: usize, nodes: &[f64], weights: &[f64]) -> f64 {
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let mid = lo + 0.5 * h;
        let half = 0.5 * h;
        let mut acc = 0.0;
        for (x, w) in nodes.iter().zip(weights) {
            acc += w * f(mid + half * x);
        }
        total += acc * half;
    }
    total
}

/// Integrate `f` over [a, b], doubling the panel count until two successive
/// estimates agree within `tol` (absolute). Starts at one panel; at most
/// `max_doublings` refinements.
pub fn integrate_1d(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, tol: f64, max_doublings: usize) -> Result<f64, QuadError> {
    if !(a.is_finite() && b.is_finite()) || a >= b {
        return Err(QuadError::InvalidDomain { a, b });
    }
    let (nodes, weights) = gauss_legendre(NODES_PER_PANEL);
    let mut panels = 1;
    let mut prev = composite_1d(&mut f, a, b, panels, &nodes, &weights);
    let mut diff = f64::INFINITY;
    for _ in 0..max_doublings {
        panels *= 2;
        let next = composite_1d(&mut f, a, b, panels, &nodes, &weights);
        diff = (next - prev).abs();
        prev = next;
        if diff <= tol {
            return Ok(prev);
        }
    }
    Err(QuadError::NonConvergent { last_diff: diff, tol })
}

/// Tensor-product composite rule over a panels×panels grid of cells.
fn composite_2d(f: &mut impl FnMut(f64, f64) -> f64, ax: f64, bx: f64, ay: f64, by: f64, panels: usize, nodes: &[f64], weights: &[f64]) -> f64 {
    let hx = (bx - ax) / panels as f64;
    let hy = (by - ay) / panels as f64;
    let mut total = 0.0;
    for px in 0..panels {
        let midx = ax + (px as f64 + 0.5) * hx;
        for py in 0..panels {
            let midy = ay + (py as f64 + 0.5) * hy;
            let mut acc = 0.0;
            for (xi, wx) in nodes.iter().zip(weights) {
                let x = midx + 0.5 * hx * xi;
                let mut row = 0.0;
                for (yi, wy) in nodes.iter().zip(weights) {
                    row += wy * f(x, midy + 0.5 * hy * yi);
                }
                acc += wx * row;
            }
            total += acc * 0.25 * hx * hy;
        }
    }
    total
}

/// Integrate `f` over the rectangle [ax, bx] × [ay, by] with the same
/// doubling policy as [`integrate_1d`].
pub fn integrate_2d(mut f: impl FnMut(f64, f64) -> f64, ax: f64, bx: f64, ay: f64, by: f64, tol: f64, max_doublings: usize) -> Result<f64, QuadError> {
    if !(ax.is_finite() && bx.is_finite() && ay.is_finite() && by.is_finite()) || ax >= bx || ay >= by {
        return Err(QuadError::InvalidDomain { a: ax, b: bx });
    }
    let (nodes, weights) = gauss_legendre(NODES_PER_PANEL);
    let mut panels = 1;
    let mut prev = composite_2d(&mut f, ax, bx, ay, by, panels, &nodes, &weights);
    let mut diff = f64::INFINITY;
    for _ in 0..max_doublings {
        panels *= 2;
        let next = composite_2d(&mut f, ax, bx, ay, by, panels, &nodes, &weights);
        diff = (next - prev).abs();
        prev = next;
        if diff <= tol {
            return Ok(prev);
        }
    }
    Err(QuadError::NonConvergent { last_diff: diff, tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn nodes_sum_to_two() {
        for n in [2, 5, 20, 31] {
            let (_, w) = gauss_legendre(n);
            assert_abs_diff_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn polynomial_exactness() {
        // 20-point rule integrates x^38 over [-1,1] exactly: 2/39.
        let (x, w) = gauss_legendre(20);
        let val: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(38)).sum();
        assert_abs_diff_eq!(val, 2.0 / 39.0, epsilon = 1e-14);
    }

    #[test]
    fn sine_integral() {
        let v = integrate_1d(|x| x.sin(), 0.0, PI, 1e-12, 12).unwrap();
        assert_abs_diff_eq!(v, 2.0, epsilon = 1e-11);
    }

    #[test]
    fn gaussian_density_normalizes() {
        let sigma: f64 = 0.37;
        let f = |x: f64| (-x * x / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * PI).sqrt());
        let v = integrate_1d(f, -8.0 * sigma, 8.0 * sigma, 1e-10, 12).unwrap();
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn gaussian_entropy_integrand() {
        // -∫ f ln f for N(0,1) equals 0.5·ln(2πe).
        let f = |x: f64| {
            let d = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
            if d > 0.0 {
                -d * d.ln()
            } else {
                0.0
            }
        };
        let v = integrate_1d(f, -8.0, 8.0, 1e-9, 12).unwrap();
        assert_abs_diff_eq!(v, 0.5 * (2.0 * PI * std::f64::consts::E).ln(), epsilon = 1e-6);
    }

    #[test]
    fn bivariate_density_normalizes() {
        let rho: f64 = 0.5;
        let det = 1.0 - rho * rho;
        let f = move |x: f64, y: f64| {
            let q = (x * x - 2.0 * rho * x * y + y * y) / det;
            (-0.5 * q).exp() / (2.0 * PI * det.sqrt())
        };
        let v = integrate_2d(f, -8.0, 8.0, -8.0, 8.0, 1e-8, 8).unwrap();
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn rejects_bad_domain() {
        assert!(integrate_1d(|x| x, 1.0, 1.0, 1e-6, 4).is_err());
        assert!(integrate_2d(|x, _| x, 0.0, 1.0, 2.0, 1.0, 1e-6, 4).is_err());
    }
}
