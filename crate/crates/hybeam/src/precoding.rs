//! Analog (RF) and digital (baseband) precoder construction.
//!
//! The analog stage beamforms from second-order channel statistics: an EVD
//! of the spatial covariance picks the dominant directions, and each entry
//! is then projected onto the constant-modulus circle |f| = 1/√N_T that the
//! phase-shifter hardware imposes (constraint C2) — exactly, bitwise. The
//! digital stage is a regularized-inverse (MMSE) matrix on the combiner-side
//! equivalent channel, scaled to the power budget, with the composite
//! F_RF·F_BB renormalized to the K·M stream convention.

use crate::numerics::{hermitian_evd, snap_to_magnitude, solve_hpd, CMatrix, LinalgError};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PrecodingError {
    #[error("too few channel estimates: got {got}, need at least {need}")]
    TooFewSamples { got: usize, need: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("requested {requested} RF chains but the covariance has dimension {dim}")]
    TooManyChains { requested: usize, dim: usize },
    #[error("power budget must be positive (got {0})")]
    NonPositiveBudget(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// First and second moments of a set of (transmit-side) channel vectors.
#[derive(Debug, Clone)]
pub struct ChannelStats {
    /// Sample mean direction.
    pub mu_vec: Vec<Complex64>,
    /// Spatial covariance, Hermitian PSD: (1/n)·Σ (h−μ)(h−μ)ᴴ, symmetrized.
    pub r_cov: CMatrix,
}

/// Sample mean and covariance of equal-length channel vectors.
pub fn channel_stats(estimates: &[Vec<Complex64>]) -> Result<ChannelStats, PrecodingError> {
    if estimates.len() < 2 {
        return Err(PrecodingError::TooFewSamples { got: estimates.len(), need: 2 });
    }
    let dim = estimates[0].len();
    if dim == 0 {
        return Err(PrecodingError::DimensionMismatch("zero-length channel vectors".into()));
    }
    for (i, e) in estimates.iter().enumerate() {
        if e.len() != dim {
            return Err(PrecodingError::DimensionMismatch(format!(
                "vector 0 has length {dim} but vector {i} has length {}",
                e.len()
            )));
        }
    }
    let n = estimates.len() as f64;
    let mut mu = vec![Complex64::new(0.0, 0.0); dim];
    for e in estimates {
        for (m, v) in mu.iter_mut().zip(e) {
            *m += v;
        }
    }
    for m in mu.iter_mut() {
        *m /= n;
    }
    let mut cov = CMatrix::zeros(dim, dim);
    for e in estimates {
        let centered: Vec<Complex64> = e.iter().zip(&mu).map(|(v, m)| v - m).collect();
        for i in 0..dim {
            for j in 0..dim {
                let add = centered[i] * centered[j].conj() / n;
                cov.set(i, j, cov.get(i, j) + add);
            }
        }
    }
    Ok(ChannelStats { mu_vec: mu, r_cov: cov.symmetrized() })
}

/// Result of the analog-precoder construction.
#[derive(Debug, Clone)]
pub struct RfPrecoder {
    /// N_T × N_RF matrix; every entry has magnitude 1/√N_T exactly.
    pub f_rf: CMatrix,
    /// Number of eigenvalues above the rank threshold 1e-12·λ_max.
    pub effective_rank: usize,
    /// True when fewer than n_rf eigenpairs carried energy; the trailing
    /// columns were filled with constant phase-0 entries.
    pub rank_deficient: bool,
}

/// Build the analog precoder: U·V^{1/2} on the n_rf dominant eigenpairs of
/// the spatial covariance, then an entrywise exact projection onto
/// magnitude 1/√N_T (phase preserved; zero entries take phase 0).
pub fn rf_precoder(stats: &ChannelStats, n_rf: usize) -> Result<RfPrecoder, PrecodingError> {
    let n_t = stats.r_cov.rows();
    if n_rf == 0 || n_rf > n_t {
        return Err(PrecodingError::TooManyChains { requested: n_rf, dim: n_t });
    }
    let evd = hermitian_evd(&stats.r_cov)?;
    let lambda_max = evd.eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    let threshold = 1e-12 * lambda_max;
    let effective_rank = evd
        .eigenvalues
        .iter()
        .take(n_rf)
        .filter(|&&l| l > threshold && l > 0.0)
        .count();
    let magnitude = 1.0 / (n_t as f64).sqrt();
    let mut f_rf = CMatrix::zeros(n_t, n_rf);
    for j in 0..n_rf {
        if j < effective_rank {
            let scale = evd.eigenvalues[j].sqrt();
            for i in 0..n_t {
                let pre = evd.eigenvectors.get(i, j) * scale;
                f_rf.set(i, j, snap_to_magnitude(pre, magnitude));
            }
        } else {
            // Past the covariance rank there is no direction information;
            // fill with the deterministic phase-0 constant column.
            for i in 0..n_t {
                f_rf.set(i, j, snap_to_magnitude(Complex64::new(0.0, 0.0), magnitude));
            }
        }
    }
    Ok(RfPrecoder { f_rf, effective_rank, rank_deficient: effective_rank < n_rf })
}

/// MMSE baseband precoder on the equivalent channel `h_eff` (K × N_RF):
/// F_BB = β·h_effᴴ·(h_eff·h_effᴴ + r_n)⁻¹, with β chosen so that
/// ‖F_BB‖_F² equals the power budget exactly (to 1e-9 relative).
///
/// Returns the scaled matrix and β.
pub fn mmse_baseband(h_eff: &CMatrix, r_n: &CMatrix, power_budget: f64) -> Result<(CMatrix, f64), PrecodingError> {
    if !(power_budget > 0.0) {
        return Err(PrecodingError::NonPositiveBudget(power_budget));
    }
    let k = h_eff.rows();
    if r_n.rows() != k || r_n.cols() != k {
        return Err(PrecodingError::DimensionMismatch(format!(
            "noise covariance is {}x{} but the equivalent channel has {k} rows",
            r_n.rows(),
            r_n.cols()
        )));
    }
    let gram = h_eff.mul(&h_eff.hermitian())?; // K × K
    let a = gram.add(r_n)?;
    // x = A⁻¹·h_eff, so F_unscaled = xᴴ = h_effᴴ·A⁻¹.
    let x = solve_hpd(&a, h_eff)?;
    let f_unscaled = x.hermitian(); // N_RF × K
    let norm2 = f_unscaled.frobenius_norm().powi(2);
    if !(norm2 > 0.0) {
        return Err(PrecodingError::DimensionMismatch("zero equivalent channel leaves no precoding direction".into()));
    }
    let beta = (power_budget / norm2).sqrt();
    Ok((f_unscaled.scale(beta), beta))
}

/// Power-allocation policies across users.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowerPolicy {
    Uniform,
}

/// Per-user transmit powers as the diagonal of P_tr. The uniform policy
/// splits so that ‖P_tr‖_F = p_max exactly: each entry is p_max/√K.
pub fn allocate_power(k_users: usize, p_max: f64, policy: PowerPolicy) -> Result<Vec<f64>, PrecodingError> {
    if !(p_max > 0.0) {
        return Err(PrecodingError::NonPositiveBudget(p_max));
    }
    if k_users == 0 {
        return Err(PrecodingError::DimensionMismatch("need at least one user".into()));
    }
    match policy {
        PowerPolicy::Uniform => Ok(vec![p_max / (k_users as f64).sqrt(); k_users]),
    }
}

/// The full precoder: analog stage, digital stage, per-user powers, and the
/// digital scaling factor.
#[derive(Debug, Clone)]
pub struct PrecoderSet {
    /// N_T × N_RF, constant-modulus entries (1/√N_T exactly).
    pub f_rf: CMatrix,
    /// N_RF × K digital matrix after composite renormalization.
    pub f_bb: CMatrix,
    /// Per-user transmit powers (diagonal of P_tr), ‖·‖_F ≤ p_max.
    pub p_tr: Vec<f64>,
    /// Total scaling applied to the raw regularized inverse (the MMSE β
    /// times the composite renormalization).
    pub beta: f64,
    /// Streams per user (M); the composite norm convention is
    /// ‖F_RF·F_BB‖_F² = K·M.
    pub streams_per_user: usize,
}

impl PrecoderSet {
    /// Assemble the set, rescaling `f_bb` so that ‖F_RF·F_BB‖_F² = K·M.
    pub fn compose(
        f_rf: CMatrix,
        f_bb: CMatrix,
        beta: f64,
        p_tr: Vec<f64>,
        streams_per_user: usize,
    ) -> Result<Self, PrecodingError> {
        let k = f_bb.cols();
        if p_tr.len() != k {
            return Err(PrecodingError::DimensionMismatch(format!(
                "{} power entries for {k} users",
                p_tr.len()
            )));
        }
        let composite = f_rf.mul(&f_bb)?;
        let norm2 = composite.frobenius_norm().powi(2);
        if !(norm2 > 0.0) {
            return Err(PrecodingError::DimensionMismatch("composite precoder is identically zero".into()));
        }
        let target = (k * streams_per_user) as f64;
        let c = (target / norm2).sqrt();
        Ok(Self { f_rf, f_bb: f_bb.scale(c), p_tr, beta: beta * c, streams_per_user })
    }

    /// The composite matrix F = F_RF·F_BB (N_T × K).
    pub fn composite(&self) -> CMatrix {
        self.f_rf.mul(&self.f_bb).expect("stored factors are conformable")
    }

    /// Effective per-user transmit columns √(p_k)·F(:,k): the composite
    /// directions carrying their allocated power.
    pub fn effective_columns(&self) -> Vec<Vec<Complex64>> {
        let f = self.composite();
        (0..f.cols())
            .map(|k| {
                let scale = self.p_tr[k].sqrt();
                f.col(k).into_iter().map(|z| z * scale).collect()
            })
            .collect()
    }
}

/// The two quality quotients for a baseband precoder `f` on `h_eff` with
/// isotropic noise shaping σ²·I.
///
/// * `trace_ratio` — Tr(Fᴴ·HᴴH·F) / Tr(Fᴴ·(σ²I)·F), the figure printed in
///   the source derivation. The regularized inverse does **not** maximize
///   this one in general (measured feasible improvements of ~2e-5 at K ≥ 2).
/// * `variational` — |Tr(H·F)|² / Tr(Fᴴ·(HᴴH + σ²I)·F), the conformable
///   variational quotient whose exact global maximizer the regularized
///   inverse provably is (Cauchy–Schwarz in the (HᴴH+σ²I) inner product).
///   Stationarity checks are run against this one.
#[derive(Debug, Clone, Copy)]
pub struct GammaQuotients {
    pub trace_ratio: f64,
    pub variational: f64,
}

pub fn mmse_gamma(f: &CMatrix, h_eff: &CMatrix, sigma2: f64) -> Result<GammaQuotients, PrecodingError> {
    if !(sigma2 > 0.0) {
        return Err(PrecodingError::NonPositiveBudget(sigma2));
    }
    let n_rf = h_eff.cols();
    if f.rows() != n_rf {
        return Err(PrecodingError::DimensionMismatch(format!(
            "precoder has {} rows, equivalent channel has {n_rf} columns",
            f.rows()
        )));
    }
    let hh = h_eff.hermitian().mul(h_eff)?; // N_RF × N_RF
    let num_m = f.hermitian().mul(&hh)?.mul(f)?;
    let den_m = f.hermitian().mul(f)?.scale(sigma2);
    let trace_ratio = num_m.trace()?.re / den_m.trace()?.re;

    let hf = h_eff.mul(f)?;
    let num_v = hf.trace()?.norm_sqr();
    let reg = hh.add(&CMatrix::identity(n_rf).scale(sigma2))?;
    let den_v = f.hermitian().mul(&reg)?.mul(f)?.trace()?.re;
    let variational = num_v / den_v;
    Ok(GammaQuotients { trace_ratio, variational })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn randn_c(rng: &mut impl Rng) -> Complex64 {
        let u1: f64 = rng.gen_range(1e-12..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt();
        let th = 2.0 * std::f64::consts::PI * u2;
        c(r * th.cos(), r * th.sin()) / 2.0_f64.sqrt()
    }

    #[test]
    fn stats_identical_vectors_zero_cov() {
        let v = vec![c(1.0, 2.0), c(-0.5, 0.0)];
        let stats = channel_stats(&[v.clone(), v.clone(), v]).unwrap();
        assert!(stats.r_cov.frobenius_norm() < 1e-15);
    }

    #[test]
    fn stats_two_opposite_vectors() {
        let a = vec![c(1.0, 0.0), c(0.0, 0.0)];
        let b = vec![c(-1.0, 0.0), c(0.0, 0.0)];
        let stats = channel_stats(&[a, b]).unwrap();
        assert!(stats.mu_vec.iter().all(|z| z.norm() < 1e-15));
        assert_abs_diff_eq!(stats.r_cov.get(0, 0).re, 1.0, epsilon = 1e-15);
        assert!(stats.r_cov.get(1, 1).norm() < 1e-15);
        assert!(stats.r_cov.get(0, 1).norm() < 1e-15);
    }

    #[test]
    fn stats_iid_covariance_near_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 100_000;
        let dim = 3;
        let estimates: Vec<Vec<Complex64>> =
            (0..n).map(|_| (0..dim).map(|_| randn_c(&mut rng)).collect()).collect();
        let stats = channel_stats(&estimates).unwrap();
        for i in 0..dim {
            for j in 0..dim {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (stats.r_cov.get(i, j).re - expected).abs() < 0.05
                        && stats.r_cov.get(i, j).im.abs() < 0.05,
                    "covariance entry ({i},{j}) = {:?}",
                    stats.r_cov.get(i, j)
                );
            }
        }
    }

    #[test]
    fn stats_guards() {
        assert!(matches!(channel_stats(&[vec![c(1.0, 0.0)]]), Err(PrecodingError::TooFewSamples { .. })));
        let bad = [vec![c(1.0, 0.0)], vec![c(1.0, 0.0), c(2.0, 0.0)]];
        assert!(matches!(channel_stats(&bad), Err(PrecodingError::DimensionMismatch(_))));
    }

    #[test]
    fn rf_precoder_identity_covariance() {
        let stats = ChannelStats { mu_vec: vec![c(0.0, 0.0); 2], r_cov: CMatrix::identity(2) };
        let rf = rf_precoder(&stats, 2).unwrap();
        assert!(!rf.rank_deficient);
        let inv = 1.0 / 2.0_f64.sqrt();
        for i in 0..2 {
            for j in 0..2 {
                let e = rf.f_rf.get(i, j);
                assert!(e.norm() == inv, "entry ({i},{j}) modulus {:e}", e.norm());
                // Identity eigenvectors have real non-negative entries, so
                // every phase is 0.
                assert!(e.re > 0.0 && e.im == 0.0);
            }
        }
    }

    #[test]
    fn rf_precoder_dominant_direction() {
        let mut cov = CMatrix::zeros(2, 2);
        cov.set(0, 0, c(4.0, 0.0));
        cov.set(1, 1, c(1.0, 0.0));
        let stats = ChannelStats { mu_vec: vec![c(0.0, 0.0); 2], r_cov: cov };
        let rf = rf_precoder(&stats, 1).unwrap();
        assert_eq!(rf.effective_rank, 1);
        // Dominant eigenvector is e₁; after projection both entries sit on
        // the circle but the phases come from (2, 0) and (0, 0) → phase 0.
        let e0 = rf.f_rf.get(0, 0);
        let e1 = rf.f_rf.get(1, 0);
        assert!(e0.re > 0.0 && e0.im == 0.0);
        assert!(e1.re > 0.0 && e1.im == 0.0);
    }

    #[test]
    fn rf_precoder_constant_modulus_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for &(n_t, n_rf) in &[(4usize, 2usize), (8, 4), (16, 16)] {
            let vecs: Vec<Vec<Complex64>> =
                (0..3 * n_t).map(|_| (0..n_t).map(|_| randn_c(&mut rng)).collect()).collect();
            let stats = channel_stats(&vecs).unwrap();
            let rf = rf_precoder(&stats, n_rf).unwrap();
            let target = 1.0 / (n_t as f64).sqrt();
            for i in 0..n_t {
                for j in 0..n_rf {
                    assert!(rf.f_rf.get(i, j).norm() == target, "modulus drift at ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn rf_precoder_rank_deficient_fill() {
        // Rank-1 covariance with 2 chains requested: second column filled.
        let mut cov = CMatrix::zeros(2, 2);
        cov.set(0, 0, c(1.0, 0.0));
        let stats = ChannelStats { mu_vec: vec![c(0.0, 0.0); 2], r_cov: cov };
        let rf = rf_precoder(&stats, 2).unwrap();
        assert!(rf.rank_deficient);
        assert_eq!(rf.effective_rank, 1);
        let inv = 1.0 / 2.0_f64.sqrt();
        for i in 0..2 {
            let e = rf.f_rf.get(i, 1);
            assert_eq!(e, c(inv, 0.0));
        }
        assert!(matches!(rf_precoder(&stats, 3), Err(PrecodingError::TooManyChains { .. })));
    }

    #[test]
    fn mmse_scalar_hand_case() {
        // h = 1, r_n = 1: unscaled value 1/(1+1) = 0.5; β rescales to S.
        let h = CMatrix::identity(1);
        let r_n = CMatrix::identity(1);
        let (f, beta) = mmse_baseband(&h, &r_n, 4.0).unwrap();
        assert_abs_diff_eq!(beta, 4.0, epsilon = 1e-12); // √(4/0.25)
        assert_abs_diff_eq!(f.get(0, 0).re, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.frobenius_norm().powi(2), 4.0, epsilon = 1e-9);
    }

    #[test]
    fn mmse_zero_noise_unitary_channel() {
        // Unitary h_eff with r_n = 0: the unscaled precoder is h_effᴴ.
        let s = 1.0 / 2.0_f64.sqrt();
        let h = CMatrix::new(2, 2, vec![c(s, 0.0), c(s, 0.0), c(s, 0.0), c(-s, 0.0)]).unwrap();
        let r_n = CMatrix::zeros(2, 2);
        let (f, beta) = mmse_baseband(&h, &r_n, 2.0).unwrap();
        let unscaled = f.scale(1.0 / beta);
        let hh = h.hermitian();
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(unscaled.get(i, j).re, hh.get(i, j).re, epsilon = 1e-10);
                assert_abs_diff_eq!(unscaled.get(i, j).im, hh.get(i, j).im, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn mmse_power_postcondition_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let k = rng.gen_range(1..=3);
            let n_rf = rng.gen_range(k..=4);
            let h = CMatrix::from_fn(k, n_rf, |_, _| randn_c(&mut rng));
            let r_n = CMatrix::identity(k).scale(rng.gen_range(0.001..1.0));
            let s = rng.gen_range(0.1..50.0);
            let (f, _) = mmse_baseband(&h, &r_n, s).unwrap();
            let p = f.frobenius_norm().powi(2);
            assert!((p - s).abs() <= 1e-9 * s, "power {p} vs budget {s}");
        }
    }

    #[test]
    fn mmse_zero_noise_matches_pseudoinverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let h = CMatrix::from_fn(2, 4, |_, _| randn_c(&mut rng));
        let (f, beta) = mmse_baseband(&h, &CMatrix::zeros(2, 2), 1.0).unwrap();
        let unscaled = f.scale(1.0 / beta);
        // Right-inverse property: h·f ≈ I.
        let prod = h.mul(&unscaled).unwrap();
        let err = prod.sub(&CMatrix::identity(2)).unwrap().frobenius_norm();
        assert!(err < 1e-6, "zero-noise limit drifted from the pseudo-inverse: {err:e}");
    }

    #[test]
    fn allocate_power_examples() {
        let p = allocate_power(4, 2.0, PowerPolicy::Uniform).unwrap();
        assert_eq!(p.len(), 4);
        for v in &p {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-15);
        }
        let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert_abs_diff_eq!(norm, 2.0, epsilon = 1e-12);
        let single = allocate_power(1, 7.0, PowerPolicy::Uniform).unwrap();
        assert_abs_diff_eq!(single[0], 7.0, epsilon = 1e-15);
        assert!(allocate_power(3, 0.0, PowerPolicy::Uniform).is_err());
    }

    #[test]
    fn compose_hits_km_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let n_t = 8;
        let n_rf = 4;
        let k = 3;
        let inv = 1.0 / (n_t as f64).sqrt();
        let f_rf = CMatrix::from_fn(n_t, n_rf, |_, _| {
            Complex64::from_polar(inv, rng.gen_range(-3.0..3.0))
        });
        let f_bb = CMatrix::from_fn(n_rf, k, |_, _| randn_c(&mut rng));
        let p_tr = allocate_power(k, 10.0, PowerPolicy::Uniform).unwrap();
        let set = PrecoderSet::compose(f_rf, f_bb, 1.3, p_tr, 1).unwrap();
        let norm2 = set.composite().frobenius_norm().powi(2);
        assert!((norm2 - k as f64).abs() <= 1e-9 * k as f64);
        let cols = set.effective_columns();
        assert_eq!(cols.len(), k);
        // Column k carries p_k times the composite column energy.
        let f = set.composite();
        let raw0: f64 = f.col(0).iter().map(|z| z.norm_sqr()).sum();
        let eff0: f64 = cols[0].iter().map(|z| z.norm_sqr()).sum();
        assert_abs_diff_eq!(eff0, raw0 * set.p_tr[0], epsilon = 1e-12 * eff0.max(1.0));
    }

    #[test]
    fn gamma_variational_maximized_by_mmse() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..20 {
            let k = rng.gen_range(1..=3);
            let n_rf = rng.gen_range(k..=4);
            let h = CMatrix::from_fn(k, n_rf, |_, _| randn_c(&mut rng));
            let sigma2 = 0.01;
            let (f, _) = mmse_baseband(&h, &CMatrix::identity(k).scale(sigma2), 1.0).unwrap();
            let g0 = mmse_gamma(&f, &h, sigma2).unwrap().variational;
            let eps = 1e-5 * f.frobenius_norm();
            for _ in 0..50 {
                let d = CMatrix::from_fn(n_rf, k, |_, _| randn_c(&mut rng));
                let d = d.scale(eps / d.frobenius_norm());
                let fp = f.add(&d).unwrap();
                let g = mmse_gamma(&fp, &h, sigma2).unwrap().variational;
                worst = worst.max((g - g0) / g0);
            }
        }
        assert!(worst <= 1e-6, "feasible perturbation improved the variational quotient by {worst:e}");
    }
}
