//! Monte-Carlo orchestration: one trial = channel synthesis → statistics
//! fit → analog precoder → digital precoder → balanced combiner → gradient
//! refinement → metrics, all deterministic given (seed, trial index).

use crate::channel::{
    array_response, draw_paths, fit_mle, sample_angle_phase, synthesize_channel, AnglePhaseModel,
    ChannelError, ChannelRealization,
};
use crate::combining::{
    self, assemble_balanced, closed_form_combiner, CombinerSet, CombiningError, SolverOpts,
    TraceRow,
};
use crate::entropy::{should_reestimate, EntropyError, EntropyReport};
use crate::metrics::{
    self, estimation_error, interference_power_db, qpsk_ber, sinr_decomposition, MetricRecord,
    MetricsError, DB_FLOOR,
};
use crate::numerics::{CMatrix, LinalgError};
use crate::precoding::{
    allocate_power, channel_stats, mmse_baseband, rf_precoder, PowerPolicy, PrecoderSet,
    PrecodingError,
};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error(transparent)]
    Precoding(#[from] PrecodingError),
    #[error(transparent)]
    Combining(#[from] CombiningError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Bivariate angle/phase model parameters as configured (angles in
/// degrees, human-facing; converted to radians at the boundary).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub mu_theta_deg: f64,
    pub mu_phi_deg: f64,
    pub sigma_theta_deg: f64,
    pub sigma_phi_deg: f64,
    pub rho: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mu_theta_deg: 0.0,
            mu_phi_deg: 180.0,
            sigma_theta_deg: 5.73,
            sigma_phi_deg: 5.73,
            rho: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn to_radians(self) -> Result<AnglePhaseModel, ChannelError> {
        AnglePhaseModel::new(
            self.mu_theta_deg.to_radians(),
            self.mu_phi_deg.to_radians(),
            self.sigma_theta_deg.to_radians(),
            self.sigma_phi_deg.to_radians(),
            self.rho,
        )
    }
}

/// Entropy-trigger threshold: a value in nats, or disabled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TriggerTau {
    Off,
    Nats(f64),
}

impl Default for TriggerTau {
    fn default() -> Self {
        TriggerTau::Off
    }
}

impl Serialize for TriggerTau {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            TriggerTau::Off => s.serialize_str("off"),
            TriggerTau::Nats(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for TriggerTau {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(TriggerTau::Nats(v)),
            Raw::Word(w) if w == "off" => Ok(TriggerTau::Off),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "entropy_trigger_tau must be a number of nats or \"off\", got \"{w}\""
            ))),
        }
    }
}

/// Full simulation configuration. Fields keep their human-facing units
/// (dB, degrees, meters); accessor methods convert once per use site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Transmit antennas N_T.
    pub n_tx: usize,
    /// RF chains N_RF (analog beams).
    pub n_rf: usize,
    /// Receive antennas per user N_R.
    pub n_rx: usize,
    pub k_users: usize,
    /// Multipath components per user N_p.
    pub n_paths: usize,
    pub spacing_wavelengths: f64,
    /// Transmit/receive power budget, dB (linear value 10^(dB/10)).
    pub p_max_db: f64,
    /// Noise power, linear.
    pub sigma_n2: f64,
    /// When set, pins the budget-to-noise ratio by overriding the noise
    /// power as σ_n² = P_max/10^(SNR/10); the transmit budget stays at
    /// `p_max_db`.
    pub snr_db: Option<f64>,
    /// Interference-to-noise ratio of each external transmitter, dB.
    pub inr_db: f64,
    pub interferer_angles_deg: Vec<f64>,
    /// Deterministic offset between true and estimated path angles.
    pub mismatch_theta_deg: f64,
    /// Transmitter-to-user distance, meters (path-loss d^(−α/2) on
    /// amplitudes).
    pub distance_m: f64,
    /// Interferer-to-user distance, meters (scales interferer power by
    /// d^(−α)).
    pub interferer_distance_m: f64,
    pub path_loss_alpha: f64,
    /// Carrier frequency, GHz. Metadata only; the array geometry is fixed
    /// in wavelengths.
    pub carrier_ghz: f64,
    /// When set, summaries also report sum-rate × bandwidth in Gbps.
    pub bandwidth_ghz: Option<f64>,
    pub model: ModelConfig,
    pub n_trials: usize,
    pub seed: u64,
    /// QPSK symbols per user for the Monte-Carlo BER estimate.
    pub ber_symbols: usize,
    pub solver: SolverOpts,
    pub entropy_trigger_tau: TriggerTau,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_tx: 64,
            n_rf: 16,
            n_rx: 2,
            k_users: 8,
            n_paths: 6,
            spacing_wavelengths: 0.5,
            p_max_db: 35.0,
            sigma_n2: 0.01,
            snr_db: None,
            inr_db: -14.37,
            interferer_angles_deg: vec![-7.0, 2.0, 12.0],
            mismatch_theta_deg: 0.0,
            distance_m: 30.0,
            interferer_distance_m: 30.0,
            path_loss_alpha: 0.4,
            carrier_ghz: 2.45,
            bandwidth_ghz: None,
            model: ModelConfig::default(),
            n_trials: 1000,
            seed: 1,
            ber_symbols: 20_000,
            solver: SolverOpts::default(),
            entropy_trigger_tau: TriggerTau::Off,
        }
    }
}

impl SimConfig {
    /// Power budget in linear units.
    pub fn p_max_linear(&self) -> f64 {
        10f64.powf(self.p_max_db / 10.0)
    }

    /// Effective noise power. An `snr_db` override pins the ratio
    /// P_max/σ_n² and wins over the configured `sigma_n2`.
    pub fn noise_power(&self) -> f64 {
        match self.snr_db {
            Some(snr) => self.p_max_linear() / 10f64.powf(snr / 10.0),
            None => self.sigma_n2,
        }
    }

    pub fn inr_linear(&self) -> f64 {
        10f64.powf(self.inr_db / 10.0)
    }

    pub fn mismatch_theta_rad(&self) -> f64 {
        self.mismatch_theta_deg.to_radians()
    }

    pub fn interferer_angles_rad(&self) -> Vec<f64> {
        self.interferer_angles_deg.iter().map(|d| d.to_radians()).collect()
    }

    /// Received power of each interferer: INR·σ_n²·d^(−α).
    pub fn interferer_powers(&self) -> Vec<f64> {
        let p = self.inr_linear()
            * self.noise_power()
            * self.interferer_distance_m.powf(-self.path_loss_alpha);
        vec![p; self.interferer_angles_deg.len()]
    }

    /// Check every structural invariant, naming the violated one.
    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |msg: String| Err(SimError::InvalidConfig(msg));
        if self.k_users == 0 {
            return fail("k_users ≥ 1 violated".into());
        }
        if !(self.k_users <= self.n_rf && self.n_rf <= self.n_tx) {
            return fail(format!(
                "chain ordering K ≤ N_RF ≤ N_T violated: K={}, N_RF={}, N_T={}",
                self.k_users, self.n_rf, self.n_tx
            ));
        }
        if self.n_rx == 0 {
            return fail("n_rx ≥ 1 violated".into());
        }
        if self.n_paths == 0 {
            return fail("n_paths ≥ 1 violated".into());
        }
        if self.n_trials == 0 {
            return fail("n_trials ≥ 1 violated".into());
        }
        if !(self.spacing_wavelengths > 0.0) {
            return fail(format!("spacing_wavelengths > 0 violated: {}", self.spacing_wavelengths));
        }
        if !(self.sigma_n2 > 0.0) {
            return fail(format!("sigma_n2 > 0 violated: {}", self.sigma_n2));
        }
        if !(self.p_max_linear() > 0.0) || !self.p_max_linear().is_finite() {
            return fail(format!(
                "power budget > 0 violated after dB conversion: {}",
                self.p_max_linear()
            ));
        }
        if !(self.noise_power() > 0.0) || !self.noise_power().is_finite() {
            return fail(format!(
                "noise power > 0 violated after dB conversion: {}",
                self.noise_power()
            ));
        }
        if !(self.distance_m > 0.0) || !(self.interferer_distance_m > 0.0) {
            return fail("distances > 0 violated".into());
        }
        if self.ber_symbols == 0 {
            return fail("ber_symbols ≥ 1 violated".into());
        }
        if let Some(b) = self.bandwidth_ghz {
            if !(b > 0.0) {
                return fail(format!("bandwidth_ghz > 0 violated: {b}"));
            }
        }
        if !(self.solver.step0 > 0.0)
            || !(self.solver.shrink > 0.0 && self.solver.shrink < 1.0)
            || !(self.solver.tol > 0.0)
            || self.solver.max_iter == 0
        {
            return fail("solver options violated: step0 > 0, 0 < shrink < 1, tol > 0, max_iter ≥ 1".into());
        }
        if let TriggerTau::Nats(v) = self.entropy_trigger_tau {
            if !v.is_finite() {
                return fail(format!("entropy_trigger_tau must be finite: {v}"));
            }
        }
        self.model
            .to_radians()
            .map_err(|e| SimError::InvalidConfig(format!("model invalid: {e}")))?;
        Ok(())
    }
}

/// Experiment families, each sweeping one configuration axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepFamily {
    Spacing,
    InterferenceVsDistance,
    SnrSumrate,
    MismatchSinr,
    MismatchBer,
    EstErrorCdf,
}

impl SweepFamily {
    pub const ALL: [SweepFamily; 6] = [
        SweepFamily::Spacing,
        SweepFamily::InterferenceVsDistance,
        SweepFamily::SnrSumrate,
        SweepFamily::MismatchSinr,
        SweepFamily::MismatchBer,
        SweepFamily::EstErrorCdf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepFamily::Spacing => "spacing",
            SweepFamily::InterferenceVsDistance => "interference_vs_distance",
            SweepFamily::SnrSumrate => "snr_sumrate",
            SweepFamily::MismatchSinr => "mismatch_sinr",
            SweepFamily::MismatchBer => "mismatch_ber",
            SweepFamily::EstErrorCdf => "est_error_cdf",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|f| f.name() == name)
    }

    /// The configuration axis this family sweeps.
    pub fn variable(self) -> &'static str {
        match self {
            SweepFamily::Spacing => "spacing_wavelengths",
            SweepFamily::InterferenceVsDistance => "interferer_distance_m",
            SweepFamily::SnrSumrate => "snr_db",
            SweepFamily::MismatchSinr | SweepFamily::MismatchBer | SweepFamily::EstErrorCdf => {
                "mismatch_theta_deg"
            }
        }
    }

    /// Built-in value grid used when the config file does not supply one.
    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepFamily::Spacing => vec![0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0],
            SweepFamily::InterferenceVsDistance => vec![10.0, 20.0, 30.0, 50.0, 80.0, 120.0],
            SweepFamily::SnrSumrate => vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0],
            SweepFamily::MismatchSinr => vec![0.0, 3.0, 7.0, 10.0, 13.0],
            SweepFamily::MismatchBer => vec![0.0, 5.0, 8.0, 12.0],
            SweepFamily::EstErrorCdf => vec![0.0, 12.0],
        }
    }

    /// Return a copy of `cfg` with this family's axis set to `value`.
    pub fn apply(self, cfg: &SimConfig, value: f64) -> SimConfig {
        let mut out = cfg.clone();
        match self {
            SweepFamily::Spacing => out.spacing_wavelengths = value,
            SweepFamily::InterferenceVsDistance => out.interferer_distance_m = value,
            SweepFamily::SnrSumrate => out.snr_db = Some(value),
            SweepFamily::MismatchSinr | SweepFamily::MismatchBer | SweepFamily::EstErrorCdf => {
                out.mismatch_theta_deg = value
            }
        }
        out
    }

    /// CDF families publish the full sorted sample instead of quantiles
    /// only.
    pub fn emits_cdf(self) -> bool {
        matches!(self, SweepFamily::EstErrorCdf)
    }
}

/// One sweep to run: the family, its axis, the grid, and optional fixed
/// overrides of the base configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub family: SweepFamily,
    pub variable: String,
    pub values: Vec<f64>,
    /// Fully-resolved override of the base config for this sweep, if any.
    pub fixed: Option<Box<SimConfig>>,
}

impl SweepSpec {
    pub fn for_family(family: SweepFamily) -> Self {
        Self {
            family,
            variable: family.variable().to_string(),
            values: family.default_values(),
            fixed: None,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.values.is_empty() {
            return Err(SimError::InvalidConfig(format!(
                "sweep {}: values non-empty violated",
                self.family.name()
            )));
        }
        if self.variable != self.family.variable() {
            return Err(SimError::InvalidConfig(format!(
                "sweep {}: variable must be {} (got {})",
                self.family.name(),
                self.family.variable(),
                self.variable
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(SimError::InvalidConfig(format!(
                "sweep {}: non-finite value in grid",
                self.family.name()
            )));
        }
        if self.values.len() > 1 {
            let increasing = self.values.windows(2).all(|w| w[1] > w[0]);
            let decreasing = self.values.windows(2).all(|w| w[1] < w[0]);
            if !increasing && !decreasing {
                return Err(SimError::InvalidConfig(format!(
                    "sweep {}: values strictly monotone violated: {:?}",
                    self.family.name(),
                    self.values
                )));
            }
        }
        if let Some(fixed) = &self.fixed {
            fixed.validate()?;
        }
        Ok(())
    }
}

/// Independent per-trial random stream: SHA-256(master, trial, tag) keys a
/// counter-based generator, so trials can run in any order on any number
/// of workers without changing a single draw.
pub fn child_rng(master_seed: u64, trial_index: u64, tag: u32) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"hybeam.stream.v1");
    h.update(master_seed.to_le_bytes());
    h.update(trial_index.to_le_bytes());
    h.update(tag.to_le_bytes());
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

const STREAM_CHANNELS: u32 = 0;
const STREAM_REFIT: u32 = 1;
const STREAM_BER: u32 = 2;

/// Everything one trial designs, kept for inspection and testing.
pub struct TrialDesign {
    pub channels: Vec<ChannelRealization>,
    pub precoder: PrecoderSet,
    pub initial_combiner: CombinerSet,
    pub entropy: EntropyReport,
    pub reestimated: bool,
    pub rank_deficient_rf: bool,
}

/// Run the design chain for already-synthesized channels: statistics →
/// analog precoder → closed-form combiner extraction → digital precoder →
/// balanced combiner.
pub fn design_link(
    cfg: &SimConfig,
    channels: &[ChannelRealization],
) -> Result<(PrecoderSet, CombinerSet, bool), SimError> {
    let p_max = cfg.p_max_linear();
    // Transmit-side channel columns (conjugate transposes of the per-user
    // estimates) feed both the covariance statistics and the stacked
    // matrix for the closed-form combiner.
    let mut tx_cols: Vec<Vec<Complex64>> = Vec::with_capacity(channels.len() * cfg.n_rx);
    for ch in channels {
        let ht = ch.h_est.hermitian();
        for j in 0..ht.cols() {
            tx_cols.push(ht.col(j));
        }
    }
    let stats = channel_stats(&tx_cols)?;
    let rf = rf_precoder(&stats, cfg.n_rf)?;
    let h_tx = CMatrix::from_columns(&tx_cols)?;
    let w_square = closed_form_combiner(&rf.f_rf, &h_tx)?;

    let h_est: Vec<CMatrix> = channels.iter().map(|c| c.h_est.clone()).collect();
    // Raw per-user extraction (no gain control yet) defines the equivalent
    // channel the digital precoder sees.
    let raw_blocks: Vec<CMatrix> = (0..cfg.k_users)
        .map(|k| {
            let steer = w_square.mul_vec(&rf.f_rf.col(k))?;
            Ok(CMatrix::column_from(&h_est[k].mul_vec(&steer)?))
        })
        .collect::<Result<_, LinalgError>>()?;
    let raw_set = CombinerSet::new(raw_blocks, &h_est)?;
    let h_eff = raw_set.h_eq.mul(&rf.f_rf)?; // K × N_RF
    let r_n = CMatrix::identity(cfg.k_users).scale(cfg.noise_power());
    let (f_bb, beta) = mmse_baseband(&h_eff, &r_n, p_max)?;
    let p_tr = allocate_power(cfg.k_users, p_max, PowerPolicy::Uniform)?;
    let precoder = PrecoderSet::compose(rf.f_rf.clone(), f_bb, beta, p_tr, 1)?;
    let combiner = assemble_balanced(&w_square, &rf.f_rf, &h_est, &precoder, p_max)?;
    Ok((precoder, combiner, rf.rank_deficient))
}

/// Synthesize channels, fit the angle/phase statistics, and design the
/// link for one trial.
pub fn design_trial(cfg: &SimConfig, trial_index: u64) -> Result<TrialDesign, SimError> {
    let model = cfg.model.to_radians()?;
    let mut rng = child_rng(cfg.seed, trial_index, STREAM_CHANNELS);
    let mismatch = cfg.mismatch_theta_rad();
    let mut channels = Vec::with_capacity(cfg.k_users);
    let mut prewrap: Vec<(f64, f64)> = Vec::with_capacity(cfg.k_users * cfg.n_paths);
    for _ in 0..cfg.k_users {
        let (paths, samples) =
            draw_paths(&model, cfg.n_paths, cfg.distance_m, cfg.path_loss_alpha, &mut rng)?;
        prewrap.extend_from_slice(&samples.raw);
        channels.push(synthesize_channel(
            &paths,
            cfg.n_rx,
            cfg.n_tx,
            cfg.spacing_wavelengths,
            mismatch,
        )?);
    }

    let (fitted, _cov) = fit_mle(&prewrap)?;
    let mut entropy = EntropyReport::for_model(&fitted)?;
    let mut reestimated = false;
    if let TriggerTau::Nats(tau) = cfg.entropy_trigger_tau {
        if should_reestimate(&entropy, tau) {
            // Fresh pilot draws re-estimate the statistics before the
            // precoding design reads them.
            let mut pilot_rng = child_rng(cfg.seed, trial_index, STREAM_REFIT);
            let pilots = sample_angle_phase(&model, cfg.k_users * cfg.n_paths, &mut pilot_rng)?;
            let (refit, _c2) = fit_mle(&pilots.raw)?;
            entropy = EntropyReport::for_model(&refit)?;
            reestimated = true;
        }
    }

    let (precoder, initial_combiner, rank_deficient_rf) = design_link(cfg, &channels)?;
    Ok(TrialDesign { channels, precoder, initial_combiner, entropy, reestimated, rank_deficient_rf })
}

fn run_trial_inner(
    cfg: &SimConfig,
    trial_index: u64,
    record_trace: bool,
) -> Result<(MetricRecord, Option<Vec<TraceRow>>), SimError> {
    let design = design_trial(cfg, trial_index)?;
    let h_est: Vec<CMatrix> = design.channels.iter().map(|c| c.h_est.clone()).collect();
    let h_true: Vec<CMatrix> = design.channels.iter().map(|c| c.h_true.clone()).collect();
    let p_max = cfg.p_max_linear();

    let state = combining::maximize_sum_rate(
        &design.initial_combiner,
        &design.precoder,
        &h_est,
        cfg.noise_power(),
        p_max,
        cfg.solver,
        record_trace,
    )?;

    // Physical receive model on the true channels.
    let w_blocks: Vec<Vec<Complex64>> =
        state.iterate.w_blocks.iter().map(|b| b.col(0)).collect();
    let eff_cols = design.precoder.effective_columns();
    let model = cfg.model.to_radians()?;
    let interferer_angles = cfg.interferer_angles_rad();
    let mut interferer_channels: Vec<Vec<Vec<Complex64>>> =
        Vec::with_capacity(interferer_angles.len());
    for &angle in &interferer_angles {
        let a = array_response(angle, model.mu_phi, cfg.n_rx, cfg.spacing_wavelengths)?;
        interferer_channels.push(vec![a; cfg.k_users]);
    }
    let interferer_powers = cfg.interferer_powers();

    let parts = sinr_decomposition(
        &w_blocks,
        &h_true,
        &eff_cols,
        &interferer_channels,
        &interferer_powers,
        cfg.noise_power(),
    )?;
    let per_user_sinr: Vec<f64> = parts.iter().map(|p| p.sinr_db(DB_FLOOR)).collect();
    let worst = metrics::worst_case_db(&per_user_sinr);
    let mut sum_rate = 0.0;
    for p in &parts {
        sum_rate += p.rate()?;
    }
    let interference_power =
        interference_power_db(&w_blocks, &interferer_channels, &interferer_powers, DB_FLOOR)?;

    let stack =
        |mats: &[CMatrix]| -> Result<CMatrix, SimError> {
            let rows: usize = mats.iter().map(|m| m.rows()).sum();
            let cols = mats[0].cols();
            let mut out = CMatrix::zeros(rows, cols);
            let mut r0 = 0;
            for m in mats {
                for i in 0..m.rows() {
                    for j in 0..cols {
                        out.set(r0 + i, j, m.get(i, j));
                    }
                }
                r0 += m.rows();
            }
            Ok(out)
        };
    let est_error = estimation_error(&stack(&h_true)?, &stack(&h_est)?)?;

    let mut ber_rng = child_rng(cfg.seed, trial_index, STREAM_BER);
    let mut ber_sum = 0.0;
    for p in &parts {
        ber_sum += qpsk_ber(p.sinr_linear(), cfg.ber_symbols, &mut ber_rng)?;
    }
    let ber = ber_sum / parts.len() as f64;

    let record = MetricRecord {
        trial_id: trial_index,
        sweep_var: "none".to_string(),
        sweep_value: 0.0,
        sum_rate,
        per_user_sinr,
        worst_case_sinr: worst,
        interference_power,
        ber,
        est_error,
        entropy: design.entropy,
        converged: state.converged,
        iterations: state.iteration,
        reestimated: design.reestimated,
        failure: None,
    };
    Ok((record, state.trace))
}

/// Run one full trial. Failures come back as records with the failure tag
/// set; they are never dropped.
pub fn run_trial(cfg: &SimConfig, trial_index: u64) -> MetricRecord {
    match run_trial_inner(cfg, trial_index, false) {
        Ok((record, _)) => record,
        Err(e) => MetricRecord::failed(trial_index, "none", 0.0, e.to_string()),
    }
}

/// Like `run_trial` but also returns the solver's per-iteration trace.
pub fn run_trial_traced(cfg: &SimConfig, trial_index: u64) -> (MetricRecord, Option<Vec<TraceRow>>) {
    match run_trial_inner(cfg, trial_index, true) {
        Ok(pair) => pair,
        Err(e) => (MetricRecord::failed(trial_index, "none", 0.0, e.to_string()), None),
    }
}

/// Mean/median/5th/95th percentile of one metric across trials.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub median: f64,
    pub p5: f64,
    pub p95: f64,
}

impl Aggregate {
    /// Nearest-rank percentiles over the finite entries of `values`.
    pub fn over(values: impl IntoIterator<Item = f64>) -> Self {
        let mut clean: Vec<f64> = values.into_iter().filter(|v| v.is_finite()).collect();
        if clean.is_empty() {
            return Self { mean: f64::NAN, median: f64::NAN, p5: f64::NAN, p95: f64::NAN };
        }
        clean.sort_by(|a, b| a.partial_cmp(b).expect("finite values compare"));
        let n = clean.len();
        let pct = |q: f64| {
            let rank = (q * n as f64).ceil() as usize;
            clean[rank.clamp(1, n) - 1]
        };
        Self {
            mean: clean.iter().sum::<f64>() / n as f64,
            median: pct(0.50),
            p5: pct(0.05),
            p95: pct(0.95),
        }
    }
}

/// Aggregated view of the trials at a single sweep value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub sweep_var: String,
    pub sweep_value: f64,
    pub n_trials: usize,
    pub n_failed: usize,
    pub sum_rate: Aggregate,
    pub worst_sinr_db: Aggregate,
    pub interference_db: Aggregate,
    pub ber: Aggregate,
    pub est_error: Aggregate,
    /// Sum-rate scaled by the configured bandwidth, Gbps.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sum_rate_gbps: Option<Aggregate>,
    /// Full sorted estimation-error sample (CDF families only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub est_error_sorted: Option<Vec<f64>>,
}

fn summarize(
    records: &[MetricRecord],
    sweep_var: &str,
    sweep_value: f64,
    bandwidth_ghz: Option<f64>,
    emit_cdf: bool,
) -> SummaryRow {
    let ok: Vec<&MetricRecord> = records.iter().filter(|r| r.failure.is_none()).collect();
    let n_failed = records.len() - ok.len();
    let pick = |f: &dyn Fn(&MetricRecord) -> f64| Aggregate::over(ok.iter().map(|r| f(r)));
    let sum_rate = pick(&|r| r.sum_rate);
    let sum_rate_gbps = bandwidth_ghz.map(|b| {
        // bits/s/Hz × GHz = Gbit/s.
        Aggregate::over(ok.iter().map(|r| r.sum_rate * b))
    });
    let est_error_sorted = if emit_cdf {
        let mut xs: Vec<f64> = ok.iter().map(|r| r.est_error).filter(|v| v.is_finite()).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).expect("finite values compare"));
        Some(xs)
    } else {
        None
    };
    SummaryRow {
        sweep_var: sweep_var.to_string(),
        sweep_value,
        n_trials: records.len(),
        n_failed,
        sum_rate,
        worst_sinr_db: pick(&|r| r.worst_case_sinr),
        interference_db: pick(&|r| r.interference_power),
        ber: pick(&|r| r.ber),
        est_error: pick(&|r| r.est_error),
        sum_rate_gbps,
        est_error_sorted,
    }
}

/// Records plus per-value summaries for one batch or sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub records: Vec<MetricRecord>,
    pub summary: Vec<SummaryRow>,
}

fn run_point(cfg: &SimConfig, sweep_var: &str, sweep_value: f64) -> Vec<MetricRecord> {
    let mut records: Vec<MetricRecord> = (0..cfg.n_trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut r = run_trial(cfg, t);
            r.sweep_var = sweep_var.to_string();
            r.sweep_value = sweep_value;
            r
        })
        .collect();
    records.sort_by_key(|r| r.trial_id);
    records
}

/// Run `cfg.n_trials` trials of a single configuration.
pub fn run_batch(cfg: &SimConfig) -> Result<SweepResult, SimError> {
    cfg.validate()?;
    let records = run_point(cfg, "none", 0.0);
    let summary = vec![summarize(&records, "none", 0.0, cfg.bandwidth_ghz, false)];
    Ok(SweepResult { records, summary })
}

/// Run a sweep: `n_trials` trials at every grid value, aggregated per
/// value. Trials reuse the same child streams across values (common random
/// numbers), so curves are paired.
pub fn run_sweep(spec: &SweepSpec, base: &SimConfig) -> Result<SweepResult, SimError> {
    spec.validate()?;
    let cfg0 = spec.fixed.as_deref().unwrap_or(base);
    cfg0.validate()?;
    let mut records = Vec::new();
    let mut summary = Vec::new();
    for &value in &spec.values {
        let cfg_v = spec.family.apply(cfg0, value);
        cfg_v.validate()?;
        let recs = run_point(&cfg_v, &spec.variable, value);
        summary.push(summarize(&recs, &spec.variable, value, cfg_v.bandwidth_ghz, spec.family.emits_cdf()));
        records.extend(recs);
    }
    Ok(SweepResult { records, summary })
}

/// Wall-time measurement for one antenna count.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ComplexityRow {
    pub n_tx: usize,
    pub seconds_per_trial: f64,
}

/// Empirical runtime scaling across antenna counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub rows: Vec<ComplexityRow>,
    /// Least-squares slope of ln(time) vs ln(N_T); `None` with fewer than
    /// two distinct antenna counts. Informational: machine-dependent.
    pub log_log_slope: Option<f64>,
}

/// Time `trials_per_point` trials at each antenna count, shrinking the
/// chain/user counts where needed to keep K ≤ N_RF ≤ N_T.
pub fn complexity_probe(
    n_tx_values: &[usize],
    base: &SimConfig,
    trials_per_point: usize,
) -> Result<ComplexityReport, SimError> {
    if n_tx_values.is_empty() || trials_per_point == 0 {
        return Err(SimError::InvalidConfig(
            "complexity probe needs at least one antenna count and one trial".into(),
        ));
    }
    let mut rows = Vec::with_capacity(n_tx_values.len());
    for &n_tx in n_tx_values {
        let mut cfg = base.clone();
        cfg.n_tx = n_tx;
        cfg.n_rf = cfg.n_rf.min(n_tx).max(1);
        cfg.k_users = cfg.k_users.min(cfg.n_rf).max(1);
        cfg.n_trials = trials_per_point;
        cfg.validate()?;
        // One warm-up trial keeps allocator effects out of the smallest
        // point.
        let _ = run_trial(&cfg, 0);
        let start = Instant::now();
        for t in 0..trials_per_point as u64 {
            let _ = run_trial(&cfg, t);
        }
        let seconds = start.elapsed().as_secs_f64() / trials_per_point as f64;
        rows.push(ComplexityRow { n_tx, seconds_per_trial: seconds.max(1e-9) });
    }
    let mut points: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| ((r.n_tx as f64).ln(), r.seconds_per_trial.ln()))
        .collect();
    points.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite"));
    points.dedup_by(|a, b| a.0 == b.0);
    let log_log_slope = if points.len() >= 2 {
        let n = points.len() as f64;
        let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
        let my = points.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        Some(sxy / sxx)
    } else {
        None
    };
    Ok(ComplexityReport { rows, log_log_slope })
}
