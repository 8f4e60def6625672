//! Receive combiners, the equivalent baseband channel, the sum-rate
//! objective with its analytic gradient, and the projected gradient-ascent
//! solver.
//!
//! Per-user combiners w_k sit on each user's receive antennas. Stacked as a
//! block-diagonal W_RF they form the equivalent channel H_Eq = W_RFᴴ·Ĥ. The
//! solver maximizes the sum rate over the w_k under the receive-power
//! budget Σ_k w_kᴴ·Ĥ_k·Ĥ_kᴴ·w_k ≤ P_max (radial projection back to the
//! ball), with a backtracking line search that only ever accepts
//! non-decreasing steps.

use crate::metrics::{self, MetricsError};
use crate::numerics::{solve_hpd, CMatrix, LinalgError};
use crate::precoding::PrecoderSet;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative slack accepted on the receive-power budget.
pub const FEASIBILITY_RTOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CombiningError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("noise power must be positive (got {0})")]
    NonPositiveNoise(f64),
    #[error("power budget must be positive (got {0})")]
    NonPositiveBudget(f64),
    #[error("initial combiner infeasible: receive power {trace:.6e} exceeds budget {p_max:.6e}")]
    InfeasibleInit { trace: f64, p_max: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

fn from_metrics(e: MetricsError) -> CombiningError {
    match e {
        MetricsError::NonPositiveNoise(v) => CombiningError::NonPositiveNoise(v),
        other => CombiningError::DimensionMismatch(other.to_string()),
    }
}

/// Per-user combiners plus the equivalent channel they induce.
#[derive(Debug, Clone)]
pub struct CombinerSet {
    /// Block k: the N_R × M_k combiner on user k's antennas (M_k = 1
    /// throughout the single-stream pipeline).
    pub w_blocks: Vec<CMatrix>,
    /// H_Eq = W_RFᴴ·Ĥ, rows grouped per user.
    pub h_eq: CMatrix,
}

impl CombinerSet {
    /// Validate block shapes against the per-user channels and compute the
    /// equivalent channel.
    pub fn new(w_blocks: Vec<CMatrix>, h_est: &[CMatrix]) -> Result<Self, CombiningError> {
        let h_eq = equivalent_channel(&w_blocks, h_est)?;
        Ok(Self { w_blocks, h_eq })
    }

    /// Assemble the block-diagonal W_RF (Σ N_R,k rows × Σ M_k columns);
    /// off-block entries are identically zero.
    pub fn w_rf(&self) -> CMatrix {
        let rows: usize = self.w_blocks.iter().map(|b| b.rows()).sum();
        let cols: usize = self.w_blocks.iter().map(|b| b.cols()).sum();
        let mut out = CMatrix::zeros(rows, cols);
        let mut r0 = 0;
        let mut c0 = 0;
        for b in &self.w_blocks {
            for i in 0..b.rows() {
                for j in 0..b.cols() {
                    out.set(r0 + i, c0 + j, b.get(i, j));
                }
            }
            r0 += b.rows();
            c0 += b.cols();
        }
        out
    }

    /// Receive-power budget usage: trace{W_RFᴴ·Ĥ·Ĥᴴ·W_RF} = ‖H_Eq‖_F².
    pub fn receive_trace(&self) -> f64 {
        self.h_eq.frobenius_norm().powi(2)
    }
}

/// H_Eq = W_RFᴴ·Ĥ with block-diagonal W_RF: row block k is w_kᴴ·Ĥ_k.
pub fn equivalent_channel(w_blocks: &[CMatrix], h_est: &[CMatrix]) -> Result<CMatrix, CombiningError> {
    if w_blocks.is_empty() || w_blocks.len() != h_est.len() {
        return Err(CombiningError::DimensionMismatch(format!(
            "{} combiner blocks for {} user channels",
            w_blocks.len(),
            h_est.len()
        )));
    }
    let n_t = h_est[0].cols();
    let mut rows: Vec<CMatrix> = Vec::with_capacity(w_blocks.len());
    for (k, (w, h)) in w_blocks.iter().zip(h_est).enumerate() {
        if h.cols() != n_t {
            return Err(CombiningError::DimensionMismatch(format!(
                "user {k} channel has {} columns, user 0 has {n_t}",
                h.cols()
            )));
        }
        if w.rows() != h.rows() {
            return Err(CombiningError::DimensionMismatch(format!(
                "user {k}: combiner has {} rows, channel has {} receive antennas",
                w.rows(),
                h.rows()
            )));
        }
        rows.push(w.hermitian().mul(h)?);
    }
    let total_rows: usize = rows.iter().map(|r| r.rows()).sum();
    let mut h_eq = CMatrix::zeros(total_rows, n_t);
    let mut r0 = 0;
    for block in rows {
        for i in 0..block.rows() {
            for j in 0..n_t {
                h_eq.set(r0 + i, j, block.get(i, j));
            }
        }
        r0 += block.rows();
    }
    Ok(h_eq)
}

/// The closed-form square combiner
/// W = F_RF·(F_RFᴴ·Ĥ·Ĥᴴ·F_RF + I)⁻¹·F_RFᴴ (N_T × N_T, Hermitian),
/// where `h_tx` is the transmit-side stacked channel: user channels'
/// conjugate transposes laid side by side as columns (N_T × Σ N_R,k).
pub fn closed_form_combiner(f_rf: &CMatrix, h_tx: &CMatrix) -> Result<CMatrix, CombiningError> {
    if h_tx.rows() != f_rf.rows() {
        return Err(CombiningError::DimensionMismatch(format!(
            "channel stack has {} rows, analog precoder has {} rows",
            h_tx.rows(),
            f_rf.rows()
        )));
    }
    let b = f_rf.hermitian().mul(h_tx)?; // N_RF × ΣN_R
    let gram = b.mul(&b.hermitian())?; // Hermitian by construction
    let g = gram.add(&CMatrix::identity(gram.rows()))?;
    let x = solve_hpd(&g, &f_rf.hermitian())?; // G⁻¹·F_RFᴴ
    Ok(f_rf.mul(&x)?)
}

/// Per-user signal decomposition under the transmit design:
/// s_k = g_k·t_k with g_k = ‖Ĥ_k·f_k‖² (f_k the effective transmit column
/// for stream k) and t_k = w_kᴴ·Ĥ_k·Ĥ_kᴴ·w_k (receive-side power).
#[derive(Debug, Clone)]
pub struct SignalTerms {
    pub s: Vec<f64>,
    pub g: Vec<f64>,
    pub t: Vec<f64>,
}

impl SignalTerms {
    pub fn total(&self) -> f64 {
        self.s.iter().sum()
    }

    /// Interference seen by user k: Σ_{m≠k} s_m, accumulated in index
    /// order (the bit-exact decomposition shared with the metrics module).
    pub fn interference(&self, k: usize) -> f64 {
        self.s
            .iter()
            .enumerate()
            .filter(|(m, _)| *m != k)
            .map(|(_, v)| v)
            .sum()
    }
}

/// Transmit gains g_k = ‖Ĥ_k·f_k‖² for the effective columns; fixed across
/// combiner iterations.
fn transmit_gains(
    eff_cols: &[Vec<Complex64>],
    h_est: &[CMatrix],
) -> Result<Vec<f64>, CombiningError> {
    if eff_cols.len() != h_est.len() {
        return Err(CombiningError::DimensionMismatch(format!(
            "{} effective columns for {} users",
            eff_cols.len(),
            h_est.len()
        )));
    }
    let mut g = Vec::with_capacity(h_est.len());
    for (k, (f, h)) in eff_cols.iter().zip(h_est).enumerate() {
        if f.len() != h.cols() {
            return Err(CombiningError::DimensionMismatch(format!(
                "user {k}: effective column length {} vs {} transmit antennas",
                f.len(),
                h.cols()
            )));
        }
        let hf = h.mul_vec(f)?;
        g.push(hf.iter().map(|z| z.norm_sqr()).sum());
    }
    Ok(g)
}

/// Receive quadratic t_k = ‖Ĥ_kᴴ·w_k‖² for single-column blocks.
fn receive_quadratics(w_blocks: &[CMatrix], h_est: &[CMatrix]) -> Result<Vec<f64>, CombiningError> {
    let mut t = Vec::with_capacity(w_blocks.len());
    for (k, (w, h)) in w_blocks.iter().zip(h_est).enumerate() {
        if w.cols() != 1 {
            return Err(CombiningError::DimensionMismatch(format!(
                "user {k}: rate terms need single-column combiners, got {} columns",
                w.cols()
            )));
        }
        if w.rows() != h.rows() {
            return Err(CombiningError::DimensionMismatch(format!(
                "user {k}: combiner has {} rows, channel has {} receive antennas",
                w.rows(),
                h.rows()
            )));
        }
        let hw = h.hermitian().mul_vec(&w.col(0))?;
        t.push(hw.iter().map(|z| z.norm_sqr()).sum());
    }
    Ok(t)
}

/// Full per-user signal decomposition for a combiner/precoder pair.
pub fn signal_terms(
    combiner: &CombinerSet,
    precoder: &PrecoderSet,
    h_est: &[CMatrix],
) -> Result<SignalTerms, CombiningError> {
    let g = transmit_gains(&precoder.effective_columns(), h_est)?;
    let t = receive_quadratics(&combiner.w_blocks, h_est)?;
    let s = g.iter().zip(&t).map(|(gi, ti)| gi * ti).collect();
    Ok(SignalTerms { s, g, t })
}

fn objective_from_terms(terms: &SignalTerms, sigma_n2: f64) -> Result<f64, CombiningError> {
    let mut r = 0.0;
    for k in 0..terms.s.len() {
        r += metrics::per_user_rate(terms.s[k], terms.interference(k), sigma_n2).map_err(from_metrics)?;
    }
    Ok(r)
}

/// Sum rate Σ_k log₂(1 + s_k / (Σ_{m≠k} s_m + σ²)), bits/s/Hz.
pub fn sum_rate_objective(
    combiner: &CombinerSet,
    precoder: &PrecoderSet,
    h_est: &[CMatrix],
    sigma_n2: f64,
) -> Result<f64, CombiningError> {
    if !(sigma_n2 > 0.0) {
        return Err(CombiningError::NonPositiveNoise(sigma_n2));
    }
    let terms = signal_terms(combiner, precoder, h_est)?;
    objective_from_terms(&terms, sigma_n2)
}

/// Analytic gradient of the sum rate with respect to each w_k, with real
/// and imaginary parts treated as independent coordinates: the returned
/// complex vector packs (∂r/∂Re w, ∂r/∂Im w) as (Re, Im).
///
/// Derivation: with s_k = g_k·w_kᴴC_k w_k (C_k = Ĥ_kĤ_kᴴ), T = Σ s_m and
/// D_j = T − s_j + σ²,
///   ∂(r·ln2)/∂s_k = K/(T+σ²) − Σ_{j≠k} 1/D_j,
/// and the coordinate gradient of the quadratic is the vector 2·g_k·C_k·w_k.
pub fn sum_rate_gradient(
    combiner: &CombinerSet,
    precoder: &PrecoderSet,
    h_est: &[CMatrix],
    sigma_n2: f64,
) -> Result<Vec<Vec<Complex64>>, CombiningError> {
    if !(sigma_n2 > 0.0) {
        return Err(CombiningError::NonPositiveNoise(sigma_n2));
    }
    let terms = signal_terms(combiner, precoder, h_est)?;
    gradient_from_terms(&combiner.w_blocks, h_est, &terms, sigma_n2)
}

fn gradient_from_terms(
    w_blocks: &[CMatrix],
    h_est: &[CMatrix],
    terms: &SignalTerms,
    sigma_n2: f64,
) -> Result<Vec<Vec<Complex64>>, CombiningError> {
    let k_users = w_blocks.len();
    let total: f64 = terms.total();
    let ln2 = std::f64::consts::LN_2;
    let inv_common = k_users as f64 / (total + sigma_n2);
    let inv_denoms: Vec<f64> = (0..k_users).map(|k| 1.0 / (terms.interference(k) + sigma_n2)).collect();
    let sum_inv: f64 = inv_denoms.iter().sum();
    let mut grads = Vec::with_capacity(k_users);
    for k in 0..k_users {
        let dr_ds = (inv_common - (sum_inv - inv_denoms[k])) / ln2;
        // C_k·w_k computed as Ĥ_k·(Ĥ_kᴴ·w_k).
        let hw = h_est[k].hermitian().mul_vec(&w_blocks[k].col(0))?;
        let chw = h_est[k].mul_vec(&hw)?;
        let scale = 2.0 * terms.g[k] * dr_ds;
        grads.push(chw.into_iter().map(|z| z * scale).collect());
    }
    Ok(grads)
}

/// Options for the projected gradient-ascent solver.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOpts {
    /// Initial line-search step.
    pub step0: f64,
    /// Multiplicative backtracking factor in (0, 1).
    pub shrink: f64,
    /// Relative-improvement stopping threshold.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOpts {
    fn default() -> Self {
        Self { step0: 1.0, shrink: 0.5, tol: 1e-6, max_iter: 200 }
    }
}

/// One line of the optional per-iteration debug trace.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub step: f64,
    pub feasible: bool,
}

/// Solver output: final combiner, objective value, last accepted step,
/// iteration count, and convergence flag.
#[derive(Debug, Clone)]
pub struct GradientState {
    pub iterate: CombinerSet,
    pub objective: f64,
    pub step: f64,
    pub iteration: usize,
    /// False only when the iteration budget ran out first.
    pub converged: bool,
    /// Per-iteration rows when tracing was requested.
    pub trace: Option<Vec<TraceRow>>,
}

fn blocks_scaled(blocks: &[CMatrix], c: f64) -> Vec<CMatrix> {
    blocks.iter().map(|b| b.scale(c)).collect()
}

fn blocks_plus_step(blocks: &[CMatrix], grads: &[Vec<Complex64>], step: f64) -> Vec<CMatrix> {
    blocks
        .iter()
        .zip(grads)
        .map(|(b, g)| {
            let mut col = b.col(0);
            for (w, gi) in col.iter_mut().zip(g) {
                *w += step * gi;
            }
            CMatrix::column_from(&col)
        })
        .collect()
}

/// Projected gradient ascent on the sum rate with backtracking line search.
///
/// Steps are accepted only when the objective does not decrease; iterates
/// outside the receive-power ball are radially projected back onto it.
/// Terminates when the relative improvement drops below `opts.tol`, the
/// line search underflows, or `opts.max_iter` is reached (the last case
/// reports `converged = false` rather than erroring).
pub fn maximize_sum_rate(
    init: &CombinerSet,
    precoder: &PrecoderSet,
    h_est: &[CMatrix],
    sigma_n2: f64,
    p_max: f64,
    opts: SolverOpts,
    record_trace: bool,
) -> Result<GradientState, CombiningError> {
    if !(sigma_n2 > 0.0) {
        return Err(CombiningError::NonPositiveNoise(sigma_n2));
    }
    if !(p_max > 0.0) {
        return Err(CombiningError::NonPositiveBudget(p_max));
    }
    let g = transmit_gains(&precoder.effective_columns(), h_est)?;
    let eval = |blocks: &[CMatrix]| -> Result<(SignalTerms, f64), CombiningError> {
        let t = receive_quadratics(blocks, h_est)?;
        let s: Vec<f64> = g.iter().zip(&t).map(|(gi, ti)| gi * ti).collect();
        let terms = SignalTerms { s, g: g.clone(), t };
        let obj = objective_from_terms(&terms, sigma_n2)?;
        Ok((terms, obj))
    };

    let mut blocks = init.w_blocks.clone();
    let (mut terms, mut objective) = eval(&blocks)?;
    let init_trace: f64 = terms.t.iter().sum();
    if init_trace > p_max * (1.0 + FEASIBILITY_RTOL) {
        return Err(CombiningError::InfeasibleInit { trace: init_trace, p_max });
    }

    let mut trace_rows: Vec<TraceRow> = Vec::new();
    let mut push_trace = |iteration: usize, objective: f64, step: f64, trace_val: f64| {
        if record_trace {
            trace_rows.push(TraceRow {
                iteration,
                objective,
                step,
                feasible: trace_val <= p_max * (1.0 + FEASIBILITY_RTOL),
            });
        }
    };
    push_trace(0, objective, 0.0, init_trace);

    let mut converged = false;
    let mut iteration = 0;
    let mut last_step = 0.0;
    while iteration < opts.max_iter {
        iteration += 1;
        let grads = gradient_from_terms(&blocks, h_est, &terms, sigma_n2)?;
        let gnorm2: f64 = grads.iter().flat_map(|v| v.iter()).map(|z| z.norm_sqr()).sum();
        if gnorm2 == 0.0 {
            // Flat landscape (e.g. zero channel): nothing to ascend.
            converged = true;
            push_trace(iteration, objective, 0.0, terms.t.iter().sum());
            break;
        }
        let mut step = opts.step0;
        let mut accepted = None;
        loop {
            let mut cand = blocks_plus_step(&blocks, &grads, step);
            let mut cand_eval = eval(&cand)?;
            let cand_trace: f64 = cand_eval.0.t.iter().sum();
            if cand_trace > p_max {
                let c = (p_max / cand_trace).sqrt();
                cand = blocks_scaled(&cand, c);
                cand_eval = eval(&cand)?;
            }
            if cand_eval.1 >= objective {
                accepted = Some((cand, cand_eval));
                break;
            }
            step *= opts.shrink;
            if step < 1e-18 {
                break;
            }
        }
        match accepted {
            None => {
                // Line search underflow: no non-decreasing step exists at
                // representable step sizes — treat as converged.
                converged = true;
                push_trace(iteration, objective, 0.0, terms.t.iter().sum());
                break;
            }
            Some((new_blocks, (new_terms, new_objective))) => {
                let improvement = new_objective - objective;
                blocks = new_blocks;
                terms = new_terms;
                let prev = objective;
                objective = new_objective;
                last_step = step;
                push_trace(iteration, objective, step, terms.t.iter().sum());
                if improvement <= opts.tol * prev.abs().max(1.0) {
                    converged = true;
                    break;
                }
            }
        }
    }

    Ok(GradientState {
        iterate: CombinerSet::new(blocks, h_est)?,
        objective,
        step: last_step,
        iteration,
        converged,
        trace: if record_trace { Some(trace_rows) } else { None },
    })
}

/// Extract per-user combiners from the closed-form square matrix and apply
/// receive-side gain control: w_k ∝ Ĥ_k·W·f_RF(:,k), rescaled so every
/// user's received signal power s_k = g_k·t_k is equal and the receive
/// budget Σ_k t_k = p_max is met exactly. Users whose transmit gain or raw
/// extraction is zero are left at zero.
pub fn assemble_balanced(
    w_square: &CMatrix,
    f_rf: &CMatrix,
    h_est: &[CMatrix],
    precoder: &PrecoderSet,
    p_max: f64,
) -> Result<CombinerSet, CombiningError> {
    if !(p_max > 0.0) {
        return Err(CombiningError::NonPositiveBudget(p_max));
    }
    let k_users = h_est.len();
    if f_rf.cols() < k_users {
        return Err(CombiningError::DimensionMismatch(format!(
            "{} users need at least as many analog columns, got {}",
            k_users,
            f_rf.cols()
        )));
    }
    if w_square.rows() != f_rf.rows() || w_square.cols() != f_rf.rows() {
        return Err(CombiningError::DimensionMismatch(format!(
            "square combiner is {}x{}, expected {}x{}",
            w_square.rows(),
            w_square.cols(),
            f_rf.rows(),
            f_rf.rows()
        )));
    }
    let g = transmit_gains(&precoder.effective_columns(), h_est)?;
    let mut raw: Vec<Vec<Complex64>> = Vec::with_capacity(k_users);
    let mut t_raw = Vec::with_capacity(k_users);
    for (k, h) in h_est.iter().enumerate() {
        let steer = w_square.mul_vec(&f_rf.col(k))?;
        let w = h.mul_vec(&steer)?;
        let hw = h.hermitian().mul_vec(&w)?;
        t_raw.push(hw.iter().map(|z| z.norm_sqr()).sum::<f64>());
        raw.push(w);
    }
    let active: Vec<usize> = (0..k_users).filter(|&k| g[k] > 0.0 && t_raw[k] > 0.0).collect();
    let inv_gain_sum: f64 = active.iter().map(|&k| 1.0 / g[k]).sum();
    let blocks: Vec<CMatrix> = (0..k_users)
        .map(|k| {
            if g[k] > 0.0 && t_raw[k] > 0.0 && inv_gain_sum > 0.0 {
                let target_t = p_max / inv_gain_sum / g[k];
                let c = (target_t / t_raw[k]).sqrt();
                CMatrix::column_from(&raw[k].iter().map(|z| z * c).collect::<Vec<_>>())
            } else {
                CMatrix::column_from(&vec![Complex64::new(0.0, 0.0); h_est[k].rows()])
            }
        })
        .collect();
    CombinerSet::new(blocks, h_est)
}

/// The log-sum surrogate v(u) = Σ_k α_k·ln(u_k) used by the concavity
/// diagnostic: the weights are the reciprocal per-user denominators
/// α_k = 1/(Σ_{m≠k} s_m + σ²) of an actual operating point.
pub fn log_surrogate(alphas: &[f64], u: &[f64]) -> Result<f64, CombiningError> {
    if alphas.len() != u.len() {
        return Err(CombiningError::DimensionMismatch(format!(
            "{} weights for {} coordinates",
            alphas.len(),
            u.len()
        )));
    }
    for (&a, &x) in alphas.iter().zip(u) {
        if !(a > 0.0) {
            return Err(CombiningError::NonPositiveBudget(a));
        }
        if !(x > 0.0) {
            return Err(CombiningError::NonPositiveBudget(x));
        }
    }
    Ok(alphas.iter().zip(u).map(|(a, x)| a * x.ln()).sum())
}

/// Reciprocal denominator weights of a signal decomposition.
pub fn denominator_weights(terms: &SignalTerms, sigma_n2: f64) -> Vec<f64> {
    (0..terms.s.len()).map(|k| 1.0 / (terms.interference(k) + sigma_n2)).collect()
}
