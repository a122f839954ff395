//! Closed-form loss predictions and the data-regime classifier.
//!
//! The test loss splits into a Bayesian part (what an ideal predictor cannot
//! recover from a truncated horizon) and an approximation part (what a
//! finite model trained on finite data loses on top of that). The
//! approximation part has one form when data is plentiful relative to the
//! model (`Dense`) and another when it is not (`Scarce`).

use std::f64::consts::{E, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intrinsic_model::approx_tail;

/// Constants appearing in the loss expressions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossParams {
    /// Lipschitz constant of the target map.
    pub k1: f64,
    /// Lipschitz constant of its gradient.
    pub k2: f64,
    pub eta: f64,
    pub lambda0: f64,
    pub alpha_z: f64,
    /// Trace of the target noise covariance.
    pub noise_total: f64,
}

impl LossParams {
    pub fn new(k1: f64, k2: f64, eta: f64, lambda0: f64, alpha_z: f64, noise_total: f64) -> Result<Self> {
        let p = LossParams {
            k1,
            k2,
            eta,
            lambda0,
            alpha_z,
            noise_total,
        };
        p.validate()?;
        Ok(p)
    }

    /// Checks everything except `alpha_z > 1`, which only the expressions
    /// involving the spectral tail require.
    pub fn validate(&self) -> Result<()> {
        if !(self.k1.is_finite() && self.k1 > 0.0) {
            return Err(Error::domain(format!("k1 must be positive, got {}", self.k1)));
        }
        if !(self.k2.is_finite() && self.k2 >= 0.0) {
            return Err(Error::domain(format!("k2 must be non-negative, got {}", self.k2)));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::range("eta", self.eta, 0.0, 1.0));
        }
        if !(self.lambda0.is_finite() && self.lambda0 > 0.0) {
            return Err(Error::domain(format!(
                "lambda0 must be positive, got {}",
                self.lambda0
            )));
        }
        if !(self.alpha_z.is_finite() && self.alpha_z > 0.0) {
            return Err(Error::domain(format!(
                "alpha_z must be positive, got {}",
                self.alpha_z
            )));
        }
        if !(self.noise_total.is_finite() && self.noise_total >= 0.0) {
            return Err(Error::domain(format!(
                "noise_total must be non-negative, got {}",
                self.noise_total
            )));
        }
        Ok(())
    }

    fn require_tail(&self) -> Result<()> {
        if self.alpha_z <= 1.0 {
            return Err(Error::domain(format!(
                "spectral tail diverges for alpha_z = {} <= 1",
                self.alpha_z
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegimeKind {
    Dense,
    Scarce,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Regime {
    pub kind: RegimeKind,
    /// `D / (N · H)`
    pub xi: f64,
}

/// Which approximation term `total_loss` uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeChoice {
    /// Classify by `xi` first; needs a horizon.
    Auto,
    Dense,
    Scarce,
}

/// What the `N d / D` amplification multiplies in the dense loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseTerm {
    /// Target noise plus the unexplained spectral tail.
    #[default]
    Full,
    /// Target noise only, the `N ≪ D` simplification.
    NoiseOnly,
}

pub const DEFAULT_XI_THRESHOLD: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossOptions {
    pub xi_threshold: f64,
    pub noise_term: NoiseTerm,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions {
            xi_threshold: DEFAULT_XI_THRESHOLD,
            noise_term: NoiseTerm::Full,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub bayesian: f64,
    pub approximation: f64,
    pub total: f64,
    pub regime: RegimeKind,
    /// Present when the regime was classified rather than given.
    pub xi: Option<f64>,
}

fn check_d(d: f64) -> Result<()> {
    if !(d.is_finite() && d >= 1.0) {
        return Err(Error::range("d", d, 1.0, f64::INFINITY));
    }
    Ok(())
}

fn check_count(what: &'static str, v: f64, min: f64) -> Result<()> {
    // infinity is allowed and means the limit
    if v.is_nan() || v < min {
        return Err(Error::range(what, v, min, f64::INFINITY));
    }
    Ok(())
}

/// `K1²(1−η)λ0 / ((α_Z−1) d^{α_Z−1}) + η · noise_total`
pub fn bayesian_loss(p: &LossParams, d: usize) -> Result<f64> {
    bayesian_loss_real(p, d as f64)
}

pub(crate) fn bayesian_loss_real(p: &LossParams, d: f64) -> Result<f64> {
    p.validate()?;
    p.require_tail()?;
    check_d(d)?;
    let explained = p.k1 * p.k1 * (1.0 - p.eta) * approx_tail(p.lambda0, p.alpha_z, d);
    Ok(explained + p.eta * p.noise_total)
}

/// Quantization error of a uniform `N`-cell partition plus the noise it
/// amplifies when each cell is fit from `D / N` samples.
pub fn approx_loss_dense(p: &LossParams, d: usize, n_regions: f64, d_samples: f64) -> Result<f64> {
    approx_loss_dense_with(p, d, n_regions, d_samples, NoiseTerm::Full)
}

pub fn approx_loss_dense_with(
    p: &LossParams,
    d: usize,
    n_regions: f64,
    d_samples: f64,
    term: NoiseTerm,
) -> Result<f64> {
    approx_loss_dense_real(p, d as f64, n_regions, d_samples, term)
}

pub(crate) fn approx_loss_dense_real(
    p: &LossParams,
    d: f64,
    n_regions: f64,
    d_samples: f64,
    term: NoiseTerm,
) -> Result<f64> {
    p.validate()?;
    check_d(d)?;
    check_count("N", n_regions, 1.0)?;
    check_count("D", d_samples, 1.0)?;
    if n_regions.is_infinite() {
        return Err(Error::domain("N must be finite"));
    }
    let quantization = p.k2 * p.k2 * d * d * n_regions.powf(-4.0 / d) / (4.0 * PI * PI);
    let amplified = match term {
        NoiseTerm::Full => {
            p.require_tail()?;
            p.noise_total + p.k1 * p.k1 * approx_tail(p.lambda0, p.alpha_z, d)
        }
        NoiseTerm::NoiseOnly => p.noise_total,
    };
    let spread = if d_samples.is_infinite() {
        0.0
    } else {
        n_regions * d / d_samples * amplified
    };
    Ok(quantization + spread)
}

/// Nearest-neighbour risk `(K1² / 4π) · d · D^{−2/d}`.
pub fn approx_loss_scarce(p: &LossParams, d: usize, d_samples: f64) -> Result<f64> {
    approx_loss_scarce_real(p, d as f64, d_samples)
}

pub(crate) fn approx_loss_scarce_real(p: &LossParams, d: f64, d_samples: f64) -> Result<f64> {
    p.validate()?;
    check_d(d)?;
    check_count("D", d_samples, 2.0)?;
    if d_samples.is_infinite() {
        return Ok(0.0);
    }
    Ok(p.k1 * p.k1 / (4.0 * PI) * d * d_samples.powf(-2.0 / d))
}

/// Quantization loss of a density-adapted partition,
/// `K2² λ0² N^{−4/d} / (e² d^{2α_Z−2})`.
pub fn approx_loss_optimal_partition(p: &LossParams, d: usize, n_regions: f64) -> Result<f64> {
    p.validate()?;
    let d = d as f64;
    check_d(d)?;
    check_count("N", n_regions, 1.0)?;
    Ok(p.k2 * p.k2 * p.lambda0 * p.lambda0 * n_regions.powf(-4.0 / d)
        / (E * E * d.powf(2.0 * p.alpha_z - 2.0)))
}

/// `xi = D / (N · H)`; `Dense` iff `xi ≥ threshold`.
pub fn classify_regime(d_samples: f64, n_regions: f64, horizon: f64, threshold: f64) -> Result<Regime> {
    check_count("D", d_samples, 1.0)?;
    check_count("N", n_regions, 1.0)?;
    check_count("H", horizon, 1.0)?;
    if !threshold.is_finite() || threshold <= 0.0 {
        return Err(Error::domain(format!(
            "regime threshold must be positive, got {threshold}"
        )));
    }
    let xi = d_samples / (n_regions * horizon);
    let kind = if xi >= threshold {
        RegimeKind::Dense
    } else {
        RegimeKind::Scarce
    };
    Ok(Regime { kind, xi })
}

/// Bayesian loss plus the approximation term of the chosen regime, with
/// default options.
pub fn total_loss(
    p: &LossParams,
    d: usize,
    n_regions: f64,
    d_samples: f64,
    choice: RegimeChoice,
    horizon: Option<usize>,
) -> Result<LossBreakdown> {
    total_loss_with(p, d, n_regions, d_samples, choice, horizon, &LossOptions::default())
}

pub fn total_loss_with(
    p: &LossParams,
    d: usize,
    n_regions: f64,
    d_samples: f64,
    choice: RegimeChoice,
    horizon: Option<usize>,
    opts: &LossOptions,
) -> Result<LossBreakdown> {
    let (kind, xi) = match choice {
        RegimeChoice::Dense => (RegimeKind::Dense, None),
        RegimeChoice::Scarce => (RegimeKind::Scarce, None),
        RegimeChoice::Auto => {
            let h = horizon
                .ok_or_else(|| Error::argument("automatic regime selection needs a horizon"))?;
            let r = classify_regime(d_samples, n_regions, h as f64, opts.xi_threshold)?;
            (r.kind, Some(r.xi))
        }
    };
    let mut out = loss_for_regime(p, d as f64, n_regions, d_samples, kind, opts.noise_term)?;
    out.xi = xi;
    Ok(out)
}

pub(crate) fn loss_for_regime(
    p: &LossParams,
    d: f64,
    n_regions: f64,
    d_samples: f64,
    kind: RegimeKind,
    term: NoiseTerm,
) -> Result<LossBreakdown> {
    let bayesian = bayesian_loss_real(p, d)?;
    let approximation = match kind {
        RegimeKind::Dense => approx_loss_dense_real(p, d, n_regions, d_samples, term)?,
        RegimeKind::Scarce => approx_loss_scarce_real(p, d, d_samples)?,
    };
    Ok(LossBreakdown {
        bayesian,
        approximation,
        total: bayesian + approximation,
        regime: kind,
        xi: None,
    })
}
