//! Correlated angle/phase statistics and multipath channel synthesis.
//!
//! The propagation model couples each path's steering angle θ and carrier
//! phase φ through a bivariate Gaussian with correlation ρ. This module
//! samples that law, fits it back from observations, builds array response
//! vectors, and assembles per-user channel matrices (true and estimated,
//! with an optional angular mismatch applied to the estimate).
//!
//! Convention: samples are wrapped into the nominal supports ([−π, π] for θ,
//! [0, 2π] for φ) only for channel synthesis. All statistics (fitting,
//! entropy) operate on the pre-wrap values, because the Gaussian law has
//! unbounded support and wrapping first would bias the estimators.

use crate::numerics::CMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("invalid angle/phase model: {0}")]
    InvalidModel(String),
    #[error("too few samples: got {got}, need at least {need}")]
    TooFewSamples { got: usize, need: usize },
    #[error("degenerate variance: at least one marginal has zero sample spread")]
    DegenerateVariance,
    #[error("invalid array geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid path set: {0}")]
    InvalidPathSet(String),
}

/// Wrap an angle into [−π, π].
pub fn wrap_to_pi(x: f64) -> f64 {
    let y = x - 2.0 * PI * (x / (2.0 * PI)).round();
    // round() maps the midpoint away from zero, so y lands in [−π, π].
    y.clamp(-PI, PI)
}

/// Wrap a phase into [0, 2π).
pub fn wrap_to_two_pi(x: f64) -> f64 {
    let y = x.rem_euclid(2.0 * PI);
    if y == 2.0 * PI {
        0.0
    } else {
        y
    }
}

/// Parameters of the joint bivariate Gaussian over (θ, φ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnglePhaseModel {
    /// Mean steering angle, radians.
    pub mu_theta: f64,
    /// Mean phase, radians.
    pub mu_phi: f64,
    /// Angle standard deviation, radians (> 0).
    pub sigma_theta: f64,
    /// Phase standard deviation, radians (> 0).
    pub sigma_phi: f64,
    /// Correlation coefficient, strictly inside (−1, 1).
    pub rho: f64,
}

impl AnglePhaseModel {
    pub fn new(mu_theta: f64, mu_phi: f64, sigma_theta: f64, sigma_phi: f64, rho: f64) -> Result<Self, ChannelError> {
        let m = Self { mu_theta, mu_phi, sigma_theta, sigma_phi, rho };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        let fields = [self.mu_theta, self.mu_phi, self.sigma_theta, self.sigma_phi, self.rho];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(ChannelError::InvalidModel("non-finite parameter".into()));
        }
        if self.sigma_theta <= 0.0 || self.sigma_phi <= 0.0 {
            return Err(ChannelError::InvalidModel(format!(
                "standard deviations must be positive (got sigma_theta={}, sigma_phi={})",
                self.sigma_theta, self.sigma_phi
            )));
        }
        if self.rho.abs() >= 1.0 {
            return Err(ChannelError::InvalidModel(format!(
                "|rho| must be < 1 strictly (got {}); the joint density needs 1-rho^2 > 0",
                self.rho
            )));
        }
        Ok(())
    }

    /// Joint density f(θ, φ) of the bivariate Gaussian.
    pub fn density(&self, theta: f64, phi: f64) -> f64 {
        let zt = (theta - self.mu_theta) / self.sigma_theta;
        let zp = (phi - self.mu_phi) / self.sigma_phi;
        let det = 1.0 - self.rho * self.rho;
        let q = (zt * zt - 2.0 * self.rho * zt * zp + zp * zp) / det;
        (-0.5 * q).exp() / (2.0 * PI * self.sigma_theta * self.sigma_phi * det.sqrt())
    }
}

/// Output of the joint sampler: the raw Gaussian draws and their wrapped
/// counterparts, index-aligned.
#[derive(Debug, Clone)]
pub struct AngleSamples {
    /// Pre-wrap draws (statistics operate on these).
    pub raw: Vec<(f64, f64)>,
    /// Wrapped into θ ∈ [−π, π], φ ∈ [0, 2π) (synthesis operates on these).
    pub wrapped: Vec<(f64, f64)>,
}

/// Draw `n` correlated (θ, φ) pairs: Θ = σθ·Z₁ + μθ and
/// Φ = σφ·(ρ·Z₁ + √(1−ρ²)·Z₂) + μφ with Z₁, Z₂ i.i.d. standard normal.
pub fn sample_angle_phase(model: &AnglePhaseModel, n: usize, rng: &mut impl Rng) -> Result<AngleSamples, ChannelError> {
    model.validate()?;
    if n == 0 {
        return Err(ChannelError::TooFewSamples { got: 0, need: 1 });
    }
    let cross = (1.0 - model.rho * model.rho).sqrt();
    let mut raw = Vec::with_capacity(n);
    let mut wrapped = Vec::with_capacity(n);
    for _ in 0..n {
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        let theta = model.sigma_theta * z1 + model.mu_theta;
        let phi = model.sigma_phi * (model.rho * z1 + cross * z2) + model.mu_phi;
        raw.push((theta, phi));
        wrapped.push((wrap_to_pi(theta), wrap_to_two_pi(phi)));
    }
    Ok(AngleSamples { raw, wrapped })
}

/// Conditional mean and variance of Φ given Θ = θ:
/// mean = μφ + ρ·σφ·(θ−μθ)/σθ, variance = (1−ρ²)·σφ².
pub fn conditional_moments(model: &AnglePhaseModel, theta: f64) -> Result<(f64, f64), ChannelError> {
    model.validate()?;
    let mean = model.mu_phi + model.rho * model.sigma_phi * (theta - model.mu_theta) / model.sigma_theta;
    let var = (1.0 - model.rho * model.rho) * model.sigma_phi * model.sigma_phi;
    Ok((mean, var))
}

/// Maximum-likelihood fit of the joint model from (θ, φ) samples.
///
/// Means are sample means; the marginal variances use the (n−1) denominator;
/// the cross-covariance uses the n denominator; ρ̂ is their ratio clamped to
/// (−1+1e−9, 1−1e−9). Returns the fitted model and the raw sample
/// cross-covariance.
pub fn fit_mle(samples: &[(f64, f64)]) -> Result<(AnglePhaseModel, f64), ChannelError> {
    let n = samples.len();
    if n < 2 {
        return Err(ChannelError::TooFewSamples { got: n, need: 2 });
    }
    let nf = n as f64;
    let (sum_t, sum_p) = samples.iter().fold((0.0, 0.0), |(a, b), &(t, p)| (a + t, b + p));
    let mu_t = sum_t / nf;
    let mu_p = sum_p / nf;
    let mut var_t = 0.0;
    let mut var_p = 0.0;
    let mut cov = 0.0;
    for &(t, p) in samples {
        let dt = t - mu_t;
        let dp = p - mu_p;
        var_t += dt * dt;
        var_p += dp * dp;
        cov += dt * dp;
    }
    var_t /= nf - 1.0;
    var_p /= nf - 1.0;
    cov /= nf;
    if var_t <= 0.0 || var_p <= 0.0 {
        return Err(ChannelError::DegenerateVariance);
    }
    let sd_t = var_t.sqrt();
    let sd_p = var_p.sqrt();
    const EPS: f64 = 1e-9;
    let rho = (cov / (sd_t * sd_p)).clamp(-1.0 + EPS, 1.0 - EPS);
    let model = AnglePhaseModel { mu_theta: mu_t, mu_phi: mu_p, sigma_theta: sd_t, sigma_phi: sd_p, rho };
    model.validate()?;
    Ok((model, cov))
}

/// Uniform-linear-array response for direction (θ, φ) with `n_elements`
/// antennas at `spacing_wavelengths` = d/λ.
///
/// Element m carries phase 2π·(d/λ)·c_m·sin θ·g_m(φ), where the first
/// element uses coefficient 1 with the cos φ azimuth factor and elements
/// m ≥ 1 use coefficient m with sin φ. Every entry has unit modulus by
/// construction.
pub fn array_response(theta: f64, phi: f64, n_elements: usize, spacing_wavelengths: f64) -> Result<Vec<Complex64>, ChannelError> {
    if n_elements == 0 {
        return Err(ChannelError::InvalidGeometry("need at least one element".into()));
    }
    if !(spacing_wavelengths > 0.0) || !spacing_wavelengths.is_finite() {
        return Err(ChannelError::InvalidGeometry(format!(
            "element spacing must be positive and finite (got {spacing_wavelengths})"
        )));
    }
    if !theta.is_finite() || !phi.is_finite() {
        return Err(ChannelError::InvalidGeometry("non-finite direction".into()));
    }
    let base = 2.0 * PI * spacing_wavelengths * theta.sin();
    let mut v = Vec::with_capacity(n_elements);
    for m in 0..n_elements {
        let phase = if m == 0 {
            base * phi.cos()
        } else {
            base * (m as f64) * phi.sin()
        };
        v.push(Complex64::from_polar(1.0, phase));
    }
    Ok(v)
}

/// How the paths of one user split across propagation mechanisms:
/// one line-of-sight path plus reflected/diffracted/scattered counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathComposition {
    pub los: usize,
    pub reflected: usize,
    pub diffracted: usize,
    pub scattered: usize,
}

impl PathComposition {
    /// Deterministic split of `n_paths` into 1 LOS + the rest spread as
    /// evenly as possible over reflected/diffracted/scattered.
    pub fn split(n_paths: usize) -> Result<Self, ChannelError> {
        if n_paths == 0 {
            return Err(ChannelError::InvalidPathSet("need at least one path".into()));
        }
        let rest = n_paths - 1;
        let reflected = rest.div_ceil(3);
        let diffracted = (rest + 1) / 3;
        let scattered = rest / 3;
        Ok(Self { los: 1, reflected, diffracted, scattered })
    }

    pub fn total(&self) -> usize {
        self.los + self.reflected + self.diffracted + self.scattered
    }
}

/// One user's multipath parameters.
#[derive(Debug, Clone)]
pub struct PathSet {
    /// Complex gain per path.
    pub gains: Vec<Complex64>,
    /// Steering angle per path, wrapped to [−π, π].
    pub thetas: Vec<f64>,
    /// Phase per path, wrapped to [0, 2π).
    pub phis: Vec<f64>,
    pub composition: PathComposition,
}

impl PathSet {
    pub fn n_paths(&self) -> usize {
        self.gains.len()
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        let n = self.gains.len();
        if n == 0 {
            return Err(ChannelError::InvalidPathSet("need at least one path".into()));
        }
        if self.thetas.len() != n || self.phis.len() != n {
            return Err(ChannelError::InvalidPathSet(format!(
                "parallel arrays disagree: {} gains, {} thetas, {} phis",
                n,
                self.thetas.len(),
                self.phis.len()
            )));
        }
        if self.composition.total() != n {
            return Err(ChannelError::InvalidPathSet(format!(
                "composition sums to {} but there are {} paths",
                self.composition.total(),
                n
            )));
        }
        if self.gains.iter().any(|g| !g.re.is_finite() || !g.im.is_finite()) {
            return Err(ChannelError::InvalidPathSet("non-finite gain".into()));
        }
        if self.thetas.iter().any(|&t| !(-PI..=PI).contains(&t)) {
            return Err(ChannelError::InvalidPathSet("theta outside [-pi, pi]".into()));
        }
        if self.phis.iter().any(|&p| !(0.0..=2.0 * PI).contains(&p)) {
            return Err(ChannelError::InvalidPathSet("phi outside [0, 2pi]".into()));
        }
        Ok(())
    }
}

/// Draw a user's path set from the joint angle/phase law.
///
/// The LOS path gets a unit-magnitude gain with uniform random phase; the
/// remaining paths draw i.i.d. circularly symmetric complex Gaussian gains
/// of variance 1/N_p, keeping unit average channel energy. All amplitudes
/// are multiplied by the distance gain d^(−α/2). Returns the path set and
/// the pre-wrap angle draws for downstream statistics.
pub fn draw_paths(
    model: &AnglePhaseModel,
    n_paths: usize,
    distance: f64,
    path_loss_alpha: f64,
    rng: &mut impl Rng,
) -> Result<(PathSet, AngleSamples), ChannelError> {
    if n_paths == 0 {
        return Err(ChannelError::InvalidPathSet("need at least one path".into()));
    }
    if !(distance > 0.0) {
        return Err(ChannelError::InvalidPathSet(format!("distance must be positive (got {distance})")));
    }
    let samples = sample_angle_phase(model, n_paths, rng)?;
    let amp = distance.powf(-path_loss_alpha / 2.0);
    let nlos_sd = (1.0 / (2.0 * n_paths as f64)).sqrt();
    let mut gains = Vec::with_capacity(n_paths);
    for i in 0..n_paths {
        let g = if i == 0 {
            Complex64::from_polar(1.0, rng.gen_range(0.0..2.0 * PI))
        } else {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(re * nlos_sd, im * nlos_sd)
        };
        gains.push(g * amp);
    }
    let (thetas, phis) = samples.wrapped.iter().cloned().unzip();
    let set = PathSet { gains, thetas, phis, composition: PathComposition::split(n_paths)? };
    set.validate()?;
    Ok((set, samples))
}

/// One user's channel matrices: the true realization, the estimate built
/// with the angular mismatch, and the generating paths.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    /// True channel, N_R × N_T.
    pub h_true: CMatrix,
    /// Estimated channel: same synthesis with every θ shifted by the
    /// mismatch. Zero mismatch reproduces `h_true` bit-exactly.
    pub h_est: CMatrix,
    pub paths: PathSet,
    /// Angular mismatch applied to the estimate, radians.
    pub mismatch_theta: f64,
}

fn accumulate_outer(h: &mut Vec<Complex64>, gain: Complex64, a_rx: &[Complex64], a_tx: &[Complex64]) {
    let n_tx = a_tx.len();
    for (i, ri) in a_rx.iter().enumerate() {
        let row = gain * ri;
        for (j, tj) in a_tx.iter().enumerate() {
            h[i * n_tx + j] += row * tj.conj();
        }
    }
}

/// Assemble H = Σₙ αₙ·a_rx(θₙ, φₙ)·a_tx(θₙ, φₙ)ᴴ and the mismatched
/// estimate built from θₙ + Δθ.
pub fn synthesize_channel(
    paths: &PathSet,
    n_rx: usize,
    n_tx: usize,
    spacing_wavelengths: f64,
    mismatch_theta: f64,
) -> Result<ChannelRealization, ChannelError> {
    paths.validate()?;
    if n_rx == 0 || n_tx == 0 {
        return Err(ChannelError::InvalidGeometry("need at least one antenna per side".into()));
    }
    let mut true_entries = vec![Complex64::new(0.0, 0.0); n_rx * n_tx];
    let mut est_entries = vec![Complex64::new(0.0, 0.0); n_rx * n_tx];
    for n in 0..paths.n_paths() {
        let theta = paths.thetas[n];
        let phi = paths.phis[n];
        let gain = paths.gains[n];
        let a_rx = array_response(theta, phi, n_rx, spacing_wavelengths)?;
        let a_tx = array_response(theta, phi, n_tx, spacing_wavelengths)?;
        accumulate_outer(&mut true_entries, gain, &a_rx, &a_tx);
        let theta_e = theta + mismatch_theta;
        let a_rx_e = array_response(theta_e, phi, n_rx, spacing_wavelengths)?;
        let a_tx_e = array_response(theta_e, phi, n_tx, spacing_wavelengths)?;
        accumulate_outer(&mut est_entries, gain, &a_rx_e, &a_tx_e);
    }
    let h_true = CMatrix::new(n_rx, n_tx, true_entries).map_err(|e| ChannelError::InvalidPathSet(e.to_string()))?;
    let h_est = CMatrix::new(n_rx, n_tx, est_entries).map_err(|e| ChannelError::InvalidPathSet(e.to_string()))?;
    Ok(ChannelRealization { h_true, h_est, paths: paths.clone(), mismatch_theta })
}

/// An i.i.d. Rayleigh-fading matrix: entries are circularly symmetric
/// complex Gaussian with per-entry variance `sigma2`.
pub fn rayleigh_iid(n_rx: usize, n_tx: usize, sigma2: f64, rng: &mut impl Rng) -> CMatrix {
    assert!(n_rx >= 1 && n_tx >= 1, "matrix dimensions must be positive");
    assert!(sigma2 > 0.0, "variance must be positive");
    let sd = (sigma2 / 2.0).sqrt();
    CMatrix::from_fn(n_rx, n_tx, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex64::new(re * sd, im * sd)
    })
}
