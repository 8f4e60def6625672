//! Per-trial figures of merit: rates, SINR, interference power, BER, and
//! channel-estimation error.

use crate::entropy::EntropyReport;
use crate::numerics::CMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Floor used when a dB quantity is −∞ (empty or fully nulled sums).
pub const DB_FLOOR: f64 = -120.0;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("noise power must be positive (got {0})")]
    NonPositiveNoise(f64),
    #[error("negative power input (got {0})")]
    NegativePower(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("reference channel has zero Frobenius norm")]
    ZeroChannel,
}

/// Shannon rate of one user: log₂(1 + signal/(interference + noise)).
pub fn per_user_rate(signal: f64, interference: f64, noise: f64) -> Result<f64, MetricsError> {
    if !(noise > 0.0) {
        return Err(MetricsError::NonPositiveNoise(noise));
    }
    if signal < 0.0 {
        return Err(MetricsError::NegativePower(signal));
    }
    if interference < 0.0 {
        return Err(MetricsError::NegativePower(interference));
    }
    Ok((1.0 + signal / (interference + noise)).log2())
}

/// Normalized estimation error ‖h_est − h_true‖_F / ‖h_true‖_F.
pub fn estimation_error(h_true: &CMatrix, h_est: &CMatrix) -> Result<f64, MetricsError> {
    if h_true.rows() != h_est.rows() || h_true.cols() != h_est.cols() {
        return Err(MetricsError::DimensionMismatch(format!(
            "true channel is {}x{}, estimate is {}x{}",
            h_true.rows(),
            h_true.cols(),
            h_est.rows(),
            h_est.cols()
        )));
    }
    let denom = h_true.frobenius_norm();
    if denom == 0.0 {
        return Err(MetricsError::ZeroChannel);
    }
    let diff = h_est.sub(h_true).expect("dimensions checked above");
    Ok(diff.frobenius_norm() / denom)
}

/// Monte-Carlo bit error rate of Gray-coded QPSK over AWGN at the given
/// post-combining SINR (linear). Per-bit SNR is SINR/2, so the closed-form
/// reference is Q(√sinr).
pub fn qpsk_ber(sinr_linear: f64, n_symbols: usize, rng: &mut impl Rng) -> Result<f64, MetricsError> {
    if sinr_linear < 0.0 {
        return Err(MetricsError::NegativePower(sinr_linear));
    }
    if n_symbols == 0 {
        return Err(MetricsError::DimensionMismatch("need at least one symbol".into()));
    }
    // Unit symbol energy split over two rails; noise scaled so that the
    // per-rail SNR a²/v equals the target sinr: a = √(sinr/2), v = 0.5.
    let amplitude = (sinr_linear / 2.0).sqrt();
    let noise_sd = 0.5_f64.sqrt();
    let mut errors = 0usize;
    for _ in 0..n_symbols {
        for _rail in 0..2 {
            let bit: bool = rng.gen();
            let s = if bit { amplitude } else { -amplitude };
            let n: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * noise_sd;
            let decided = (s + n) >= 0.0;
            if decided != bit {
                errors += 1;
            }
        }
    }
    Ok(errors as f64 / (2 * n_symbols) as f64)
}

/// Total post-combining external interference power in dB:
/// 10·log₁₀(Σ_l p_l · Σ_k |w_kᴴ·h_{l,k}|²), floored at `floor_db`.
///
/// `w_blocks[k]` is user k's combiner; `interferer_channels[l][k]` is
/// interferer l's channel into user k's antennas. The interferer's own
/// transmit weighting is absorbed into `interferer_powers[l]`.
pub fn interference_power_db(
    w_blocks: &[Vec<Complex64>],
    interferer_channels: &[Vec<Vec<Complex64>>],
    interferer_powers: &[f64],
    floor_db: f64,
) -> Result<f64, MetricsError> {
    if interferer_channels.len() != interferer_powers.len() {
        return Err(MetricsError::DimensionMismatch(format!(
            "{} interferer channels vs {} powers",
            interferer_channels.len(),
            interferer_powers.len()
        )));
    }
    let mut total = 0.0;
    for (chans, &p) in interferer_channels.iter().zip(interferer_powers) {
        if p < 0.0 {
            return Err(MetricsError::NegativePower(p));
        }
        if chans.len() != w_blocks.len() {
            return Err(MetricsError::DimensionMismatch(format!(
                "interferer reaches {} users but there are {} combiners",
                chans.len(),
                w_blocks.len()
            )));
        }
        for (w, h) in w_blocks.iter().zip(chans) {
            if w.len() != h.len() {
                return Err(MetricsError::DimensionMismatch(format!(
                    "combiner length {} vs interferer channel length {}",
                    w.len(),
                    h.len()
                )));
            }
            let dot: Complex64 = w.iter().zip(h).map(|(wi, hi)| wi.conj() * hi).sum();
            total += p * dot.norm_sqr();
        }
    }
    Ok(power_to_db(total, floor_db))
}

/// 10·log₁₀(p) with a configurable floor for p ≤ 0 or very small p.
pub fn power_to_db(p: f64, floor_db: f64) -> f64 {
    if p <= 0.0 {
        return floor_db;
    }
    (10.0 * p.log10()).max(floor_db)
}

/// One user's physical receive-side power decomposition, measured on the
/// true channel.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SinrParts {
    /// |w_kᴴ·H_k·f_k|² — desired-stream power.
    pub signal: f64,
    /// Σ_{m≠k} |w_kᴴ·H_k·f_m|² — other users' streams leaking in.
    pub self_interference: f64,
    /// Σ_l p_l·|w_kᴴ·h_{l,k}|² — external transmitters.
    pub external_interference: f64,
    /// σ²·‖w_k‖² — combined thermal noise.
    pub noise: f64,
}

impl SinrParts {
    pub fn sinr_linear(&self) -> f64 {
        let denom = self.self_interference + self.external_interference + self.noise;
        if denom <= 0.0 {
            return 0.0;
        }
        self.signal / denom
    }

    pub fn sinr_db(&self, floor_db: f64) -> f64 {
        power_to_db(self.sinr_linear(), floor_db)
    }

    /// Rate consistent with `per_user_rate` on this decomposition; 0 when
    /// the combiner is identically zero (no noise reference).
    pub fn rate(&self) -> Result<f64, MetricsError> {
        if self.noise <= 0.0 {
            return if self.signal == 0.0 {
                Ok(0.0)
            } else {
                Err(MetricsError::NonPositiveNoise(self.noise))
            };
        }
        per_user_rate(self.signal, self.self_interference + self.external_interference, self.noise)
    }
}

/// Physical receive-model decomposition for every user: the transmitted
/// stream columns pass through each user's **true** channel, are combined
/// with w_k, and face external interferers plus thermal noise.
///
/// `effective_columns[m]` is the transmit vector carrying stream m
/// (composite precoder column including its power allocation).
pub fn sinr_decomposition(
    w_blocks: &[Vec<Complex64>],
    h_true_per_user: &[CMatrix],
    effective_columns: &[Vec<Complex64>],
    interferer_channels: &[Vec<Vec<Complex64>>],
    interferer_powers: &[f64],
    sigma_n2: f64,
) -> Result<Vec<SinrParts>, MetricsError> {
    if !(sigma_n2 > 0.0) {
        return Err(MetricsError::NonPositiveNoise(sigma_n2));
    }
    let k_users = w_blocks.len();
    if h_true_per_user.len() != k_users || effective_columns.len() != k_users {
        return Err(MetricsError::DimensionMismatch(format!(
            "{} combiners, {} channels, {} stream columns",
            k_users,
            h_true_per_user.len(),
            effective_columns.len()
        )));
    }
    if interferer_channels.len() != interferer_powers.len() {
        return Err(MetricsError::DimensionMismatch(format!(
            "{} interferer channels vs {} powers",
            interferer_channels.len(),
            interferer_powers.len()
        )));
    }
    let mut out = Vec::with_capacity(k_users);
    for k in 0..k_users {
        let w = &w_blocks[k];
        let h = &h_true_per_user[k];
        if h.rows() != w.len() {
            return Err(MetricsError::DimensionMismatch(format!(
                "user {k}: channel has {} rows, combiner length {}",
                h.rows(),
                w.len()
            )));
        }
        // Received scalar for stream m: w_kᴴ·(H_k·f_m).
        let mut signal = 0.0;
        let mut self_int = 0.0;
        for (m, f) in effective_columns.iter().enumerate() {
            if f.len() != h.cols() {
                return Err(MetricsError::DimensionMismatch(format!(
                    "stream {m}: column length {} vs {} transmit antennas",
                    f.len(),
                    h.cols()
                )));
            }
            let hf = h.mul_vec(f).expect("dimensions checked above");
            let dot: Complex64 = w.iter().zip(&hf).map(|(wi, yi)| wi.conj() * yi).sum();
            let p = dot.norm_sqr();
            if m == k {
                signal = p;
            } else {
                self_int += p;
            }
        }
        let mut external = 0.0;
        for (chans, &p_l) in interferer_channels.iter().zip(interferer_powers) {
            if chans.len() != k_users {
                return Err(MetricsError::DimensionMismatch(format!(
                    "interferer reaches {} users but there are {k_users} combiners",
                    chans.len()
                )));
            }
            let hl = &chans[k];
            if hl.len() != w.len() {
                return Err(MetricsError::DimensionMismatch(format!(
                    "user {k}: interferer channel length {} vs combiner length {}",
                    hl.len(),
                    w.len()
                )));
            }
            let dot: Complex64 = w.iter().zip(hl).map(|(wi, hi)| wi.conj() * hi).sum();
            external += p_l * dot.norm_sqr();
        }
        let w_energy: f64 = w.iter().map(|z| z.norm_sqr()).sum();
        let noise = sigma_n2 * w_energy;
        out.push(SinrParts { signal, self_interference: self_int, external_interference: external, noise });
    }
    Ok(out)
}

/// Everything recorded for one Monte-Carlo trial. One CSV row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricRecord {
    pub trial_id: u64,
    /// Sweep axis name; "none" for plain runs.
    pub sweep_var: String,
    pub sweep_value: f64,
    /// Sum over users of log₂(1+SINR), bits/s/Hz.
    pub sum_rate: f64,
    /// Per-user SINR in dB (JSON only; the CSV keeps the worst case).
    pub per_user_sinr: Vec<f64>,
    /// min over per_user_sinr, exactly.
    pub worst_case_sinr: f64,
    /// Total external interference after combining, dB.
    pub interference_power: f64,
    pub ber: f64,
    pub est_error: f64,
    pub entropy: EntropyReport,
    pub converged: bool,
    pub iterations: usize,
    /// True when the entropy trigger fired and the model was re-fitted
    /// from fresh pilots within this trial.
    pub reestimated: bool,
    /// Populated when the trial failed; numeric fields are NaN then.
    pub failure: Option<String>,
}

impl MetricRecord {
    /// A failure placeholder carrying the error text; never dropped from
    /// the output table.
    pub fn failed(trial_id: u64, sweep_var: &str, sweep_value: f64, message: String) -> Self {
        Self {
            trial_id,
            sweep_var: sweep_var.to_string(),
            sweep_value,
            sum_rate: f64::NAN,
            per_user_sinr: Vec::new(),
            worst_case_sinr: f64::NAN,
            interference_power: f64::NAN,
            ber: f64::NAN,
            est_error: f64::NAN,
            entropy: EntropyReport::nan(),
            converged: false,
            iterations: 0,
            reestimated: false,
            failure: Some(message),
        }
    }
}

/// Minimum of a dB list, bitwise (no conversion round trip).
pub fn worst_case_db(per_user_sinr_db: &[f64]) -> f64 {
    per_user_sinr_db.iter().copied().fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Complementary Gaussian tail Q(x) via erfc.
    fn q_function(x: f64) -> f64 {
        // Abramowitz–Stegun 7.1.26 rational approximation of erf, adequate
        // for oracle comparisons at 3-standard-error tolerance.
        let t = 1.0 / (1.0 + 0.3275911 * (x / 2.0_f64.sqrt()).abs());
        let poly = t
            * (0.254829592 + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
        let erf = 1.0 - poly * (-(x * x) / 2.0).exp();
        0.5 * (1.0 - if x >= 0.0 { erf } else { -erf })
    }

    #[test]
    fn rate_hand_cases() {
        assert_abs_diff_eq!(per_user_rate(1.0, 0.0, 1.0).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(per_user_rate(0.0, 123.0, 1.0).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(per_user_rate(3.0, 1.0, 1.0).unwrap(), 2.5_f64.log2(), epsilon = 1e-15);
        assert!(matches!(per_user_rate(1.0, 0.0, 0.0), Err(MetricsError::NonPositiveNoise(_))));
    }

    #[test]
    fn rate_monotonicity_grids() {
        let grid = [0.01, 0.1, 0.5, 1.0, 3.0, 10.0];
        for w in grid.windows(2) {
            assert!(per_user_rate(w[1], 1.0, 1.0).unwrap() > per_user_rate(w[0], 1.0, 1.0).unwrap());
            assert!(per_user_rate(1.0, w[1], 1.0).unwrap() < per_user_rate(1.0, w[0], 1.0).unwrap());
            assert!(per_user_rate(1.0, 1.0, w[1]).unwrap() < per_user_rate(1.0, 1.0, w[0]).unwrap());
        }
    }

    #[test]
    fn estimation_error_cases() {
        let h = CMatrix::new(1, 2, vec![c(1.0, 0.0), c(0.0, 1.0)]).unwrap();
        assert_abs_diff_eq!(estimation_error(&h, &h).unwrap(), 0.0, epsilon = 1e-15);
        let double = h.scale(2.0);
        assert_abs_diff_eq!(estimation_error(&h, &double).unwrap(), 1.0, epsilon = 1e-15);
        let neg = h.scale(-1.0);
        assert_abs_diff_eq!(estimation_error(&h, &neg).unwrap(), 2.0, epsilon = 1e-15);
        let zero = CMatrix::zeros(1, 2);
        assert!(matches!(estimation_error(&zero, &h), Err(MetricsError::ZeroChannel)));
    }

    #[test]
    fn ber_zero_sinr_is_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let n = 100_000;
        let ber = qpsk_ber(0.0, n, &mut rng).unwrap();
        let se = (0.25 / (2.0 * n as f64)).sqrt();
        assert!((ber - 0.5).abs() < 3.0 * se, "ber {ber} at zero SINR");
    }

    #[test]
    fn ber_noiseless_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        let ber = qpsk_ber(1e6, 1_000_000, &mut rng).unwrap();
        assert_eq!(ber, 0.0);
    }

    #[test]
    fn ber_matches_q_function_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(107);
        let n = 1_000_000;
        let ber = qpsk_ber(4.0, n, &mut rng).unwrap();
        let p = q_function(2.0); // ≈ 0.02275
        let se = (p * (1.0 - p) / (2.0 * n as f64)).sqrt();
        assert!((ber - p).abs() < 3.0 * se, "ber {ber} vs Q(2) = {p}");
    }

    #[test]
    fn ber_monotone_in_sinr() {
        let mut rng = ChaCha8Rng::seed_from_u64(109);
        let n = 100_000;
        let sinrs_db = [-10.0, -5.0, 0.0, 3.0, 6.0, 9.0];
        let bers: Vec<f64> = sinrs_db
            .iter()
            .map(|db| qpsk_ber(10f64.powf(db / 10.0), n, &mut rng).unwrap())
            .collect();
        for w in bers.windows(2) {
            // Allow Monte-Carlo slack of 3 standard errors at p ≈ w[0].
            let se = (w[0].max(1e-4) * 0.999 / (2.0 * n as f64)).sqrt();
            assert!(w[1] <= w[0] + 3.0 * se, "ber sequence not non-increasing: {bers:?}");
        }
    }

    #[test]
    fn interference_scalar_hand_case() {
        let w = vec![vec![c(1.0, 0.0)]];
        let chans = vec![vec![vec![c(1.0, 0.0)]]];
        let db = interference_power_db(&w, &chans, &[0.01], DB_FLOOR).unwrap();
        assert_abs_diff_eq!(db, -20.0, epsilon = 1e-12);
    }

    #[test]
    fn interference_empty_and_orthogonal_hit_floor() {
        let w = vec![vec![c(1.0, 0.0), c(0.0, 0.0)]];
        let no_interferers = interference_power_db(&w, &[], &[], DB_FLOOR).unwrap();
        assert_eq!(no_interferers, DB_FLOOR);
        // Interferer arrives only on the antenna the combiner ignores.
        let chans = vec![vec![vec![c(0.0, 0.0), c(1.0, 0.0)]]];
        let nulled = interference_power_db(&w, &chans, &[1.0], DB_FLOOR).unwrap();
        assert_eq!(nulled, DB_FLOOR);
    }

    #[test]
    fn sinr_decomposition_scalar_case() {
        // Scalar link: H = 2, f_own = 1, f_other = 0.5, one interferer at
        // h = 1 with power 0.04, w = 1, σ² = 0.01.
        let w = vec![vec![c(1.0, 0.0)], vec![c(1.0, 0.0)]];
        let h1 = CMatrix::new(1, 1, vec![c(2.0, 0.0)]).unwrap();
        let h2 = CMatrix::new(1, 1, vec![c(1.0, 0.0)]).unwrap();
        let cols = vec![vec![c(1.0, 0.0)], vec![c(0.5, 0.0)]];
        let interferers = vec![vec![vec![c(1.0, 0.0)], vec![c(1.0, 0.0)]]];
        let parts =
            sinr_decomposition(&w, &[h1, h2], &cols, &interferers, &[0.04], 0.01).unwrap();
        assert_abs_diff_eq!(parts[0].signal, 4.0, epsilon = 1e-12); // |1·2·1|²
        assert_abs_diff_eq!(parts[0].self_interference, 1.0, epsilon = 1e-12); // |2·0.5|²
        assert_abs_diff_eq!(parts[0].external_interference, 0.04, epsilon = 1e-12);
        assert_abs_diff_eq!(parts[0].noise, 0.01, epsilon = 1e-12);
        assert_abs_diff_eq!(parts[0].sinr_linear(), 4.0 / 1.05, epsilon = 1e-12);
        // User 2's own stream is column 1 (the 0.5 one).
        assert_abs_diff_eq!(parts[1].signal, 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(parts[1].self_interference, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn worst_case_is_exact_min() {
        let sinrs = [3.0, -2.5, 7.0];
        assert_eq!(worst_case_db(&sinrs), -2.5);
        assert_eq!(worst_case_db(&[]), f64::INFINITY);
    }

    #[test]
    fn failed_record_carries_tag() {
        let rec = MetricRecord::failed(7, "snr_db", 10.0, "solver exploded".into());
        assert_eq!(rec.trial_id, 7);
        assert!(rec.sum_rate.is_nan());
        assert_eq!(rec.failure.as_deref(), Some("solver exploded"));
        assert!(!rec.converged);
    }
}
