//! Differential entropy of the joint angle/phase model.
//!
//! Three values of the joint entropy coexist here on purpose:
//!
//! * a **quadrature oracle** — direct 2-D integration of −f·ln f over
//!   mean ± 8σ boxes, the ground truth every assertion is tied to,
//! * the **Gaussian closed form** ½·ln((2πe)²·σθ²·σφ²·(1−ρ²)), which the
//!   oracle must reproduce,
//! * a **legacy correlation-corrected formula** −2π·ln(1−ρ²) + S(θ) + S(φ),
//!   reported verbatim for comparison but never asserted against the oracle
//!   (its correlation term disagrees with the closed form in both sign and
//!   scale; reports carry both so the discrepancy stays visible).
//!
//! All entropies are in nats. Rates elsewhere in the crate are in bits; this
//! is the one unit boundary, and every report field is suffixed accordingly.

use crate::channel::{AnglePhaseModel, ChannelError};
use crate::quad::{integrate_1d, integrate_2d, QuadError};
use serde::{Deserialize, Serialize};
use std::f64::consts::{E, PI};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EntropyError {
    #[error("invalid sigma: {0} (must be positive and finite)")]
    InvalidSigma(f64),
    #[error("invalid rho: {0} (must satisfy |rho| < 1)")]
    InvalidRho(f64),
    #[error("invalid model: {0}")]
    InvalidModel(#[from] ChannelError),
    #[error("quadrature non-convergent: {0}")]
    QuadratureNonConvergent(#[from] QuadError),
}

/// Absolute tolerance for the joint-entropy quadrature refinement.
const JOINT_TOL_NATS: f64 = 1e-4;
/// Half-width of the integration box in standard deviations.
const BOX_SIGMAS: f64 = 8.0;

/// Differential entropy of a univariate Gaussian: ½·ln(2πe·σ²) nats.
pub fn entropy_1d(sigma: f64) -> Result<f64, EntropyError> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(EntropyError::InvalidSigma(sigma));
    }
    Ok(0.5 * (2.0 * PI * E * sigma * sigma).ln())
}

/// Quadrature cross-check of [`entropy_1d`]: −∫ f·ln f over μ ± 8σ.
pub fn entropy_1d_quadrature(sigma: f64) -> Result<f64, EntropyError> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(EntropyError::InvalidSigma(sigma));
    }
    let f = move |x: f64| {
        let z = x / sigma;
        let d = (-0.5 * z * z).exp() / (sigma * (2.0 * PI).sqrt());
        if d > 0.0 {
            -d * d.ln()
        } else {
            0.0
        }
    };
    Ok(integrate_1d(f, -BOX_SIGMAS * sigma, BOX_SIGMAS * sigma, 1e-8, 12)?)
}

fn neg_f_ln_f(d: f64) -> f64 {
    if d > 0.0 {
        -d * d.ln()
    } else {
        0.0
    }
}

/// Joint entropy by 2-D quadrature of −f·ln f over mean ± 8σ per axis,
/// refined until successive estimates agree within 1e-4 nats.
pub fn joint_entropy_quadrature(model: &AnglePhaseModel) -> Result<f64, EntropyError> {
    model.validate()?;
    let v = integrate_2d(
        |t, p| neg_f_ln_f(model.density(t, p)),
        model.mu_theta - BOX_SIGMAS * model.sigma_theta,
        model.mu_theta + BOX_SIGMAS * model.sigma_theta,
        model.mu_phi - BOX_SIGMAS * model.sigma_phi,
        model.mu_phi + BOX_SIGMAS * model.sigma_phi,
        JOINT_TOL_NATS,
        8,
    )?;
    Ok(v)
}

/// Joint-entropy quadrature over the literal truncated supports
/// θ ∈ [−π, π], φ ∈ [0, 2π], without renormalizing the density. Provided
/// for comparison; the density mass outside the box is simply dropped, so
/// this undercounts whenever the model spills past the supports.
pub fn joint_entropy_quadrature_truncated(model: &AnglePhaseModel) -> Result<f64, EntropyError> {
    model.validate()?;
    let v = integrate_2d(
        |t, p| neg_f_ln_f(model.density(t, p)),
        -PI,
        PI,
        0.0,
        2.0 * PI,
        JOINT_TOL_NATS,
        8,
    )?;
    Ok(v)
}

/// The legacy joint-entropy formula: −2π·ln(1−ρ²) + s_theta + s_phi.
///
/// Reported verbatim alongside the quadrature value; the two are NOT
/// asserted to agree (they do only at ρ = 0).
pub fn joint_entropy_legacy(s_theta: f64, s_phi: f64, rho: f64) -> Result<f64, EntropyError> {
    if !(rho.abs() < 1.0) {
        return Err(EntropyError::InvalidRho(rho));
    }
    Ok(-2.0 * PI * (1.0 - rho * rho).ln() + s_theta + s_phi)
}

/// Exact Gaussian joint entropy: ½·ln((2πe)²·σθ²·σφ²·(1−ρ²)) nats.
pub fn joint_entropy_closed_form(model: &AnglePhaseModel) -> Result<f64, EntropyError> {
    model.validate()?;
    let det = model.sigma_theta.powi(2) * model.sigma_phi.powi(2) * (1.0 - model.rho * model.rho);
    Ok(0.5 * ((2.0 * PI * E).powi(2) * det).ln())
}

/// Conditional entropy S(φ|θ) = ½·ln(2πe·(1−ρ²)·σφ²) nats, from the
/// conditional variance of the joint Gaussian.
pub fn conditional_entropy(model: &AnglePhaseModel) -> Result<f64, EntropyError> {
    model.validate()?;
    let var = (1.0 - model.rho * model.rho) * model.sigma_phi * model.sigma_phi;
    Ok(0.5 * (2.0 * PI * E * var).ln())
}

/// All entropy figures for one fitted model, as serialized into per-trial
/// records. Every field is in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub s_theta: f64,
    pub s_phi: f64,
    pub s_joint_quadrature: f64,
    pub s_joint_gaussian_closed_form: f64,
    /// Legacy closed-form variant kept for continuity with existing
    /// result tables (CSV column `s_joint_eq21`).
    #[serde(rename = "s_joint_eq21")]
    pub s_joint_legacy: f64,
    pub s_cond_phi_given_theta: f64,
}

impl EntropyReport {
    pub fn for_model(model: &AnglePhaseModel) -> Result<Self, EntropyError> {
        let s_theta = entropy_1d(model.sigma_theta)?;
        let s_phi = entropy_1d(model.sigma_phi)?;
        Ok(Self {
            s_theta,
            s_phi,
            s_joint_quadrature: joint_entropy_quadrature(model)?,
            s_joint_gaussian_closed_form: joint_entropy_closed_form(model)?,
            s_joint_legacy: joint_entropy_legacy(s_theta, s_phi, model.rho)?,
            s_cond_phi_given_theta: conditional_entropy(model)?,
        })
    }

    /// A report whose every field is NaN, used to tag failed trials.
    pub fn nan() -> Self {
        Self {
            s_theta: f64::NAN,
            s_phi: f64::NAN,
            s_joint_quadrature: f64::NAN,
            s_joint_gaussian_closed_form: f64::NAN,
            s_joint_legacy: f64::NAN,
            s_cond_phi_given_theta: f64::NAN,
        }
    }
}

/// Re-estimation trigger: fire when the joint (quadrature) entropy exceeds
/// the threshold τ. The default τ for a configured model is its closed-form
/// joint entropy at ρ = 0, i.e. the trigger fires when the correlation
/// structure has been lost.
pub fn should_reestimate(report: &EntropyReport, tau: f64) -> bool {
    report.s_joint_quadrature > tau
}

/// Default re-estimation threshold for a model: closed-form joint entropy
/// with the correlation removed.
pub fn default_trigger_tau(model: &AnglePhaseModel) -> Result<f64, EntropyError> {
    Ok(entropy_1d(model.sigma_theta)? + entropy_1d(model.sigma_phi)?)
}
