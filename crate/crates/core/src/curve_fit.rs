//! Scaling-curve fits and information-criterion model ranking.
//!
//! Four families are compared on `(x, loss)` points:
//!
//! | name | formula              | k |
//! |------|----------------------|---|
//! | `f`  | `A + B · x^{-α}`     | 3 |
//! | `g1` | `A · x^{-α}`         | 2 |
//! | `g2` | `A + B · ln x`       | 2 |
//! | `g3` | `A + B x + C x²`     | 3 |
//!
//! Power families use a one-dimensional search over `α` with the linear
//! coefficients solved exactly at each trial exponent.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RSS_FLOOR: f64 = 1e-300;
const GRID_POINTS: usize = 200;
const GOLDEN_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "f")]
    PowerOffset,
    #[serde(rename = "g1")]
    PurePower,
    #[serde(rename = "g2")]
    LogLinear,
    #[serde(rename = "g3")]
    Quadratic,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::PowerOffset,
        ModelKind::PurePower,
        ModelKind::LogLinear,
        ModelKind::Quadratic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::PowerOffset => "f",
            ModelKind::PurePower => "g1",
            ModelKind::LogLinear => "g2",
            ModelKind::Quadratic => "g3",
        }
    }

    pub fn k_params(self) -> usize {
        match self {
            ModelKind::PowerOffset | ModelKind::Quadratic => 3,
            ModelKind::PurePower | ModelKind::LogLinear => 2,
        }
    }

    /// Evaluates the family at `x`.
    pub fn eval(self, params: &[f64], x: f64) -> f64 {
        match self {
            ModelKind::PowerOffset => params[0] + params[1] * x.powf(-params[2]),
            ModelKind::PurePower => params[0] * x.powf(-params[1]),
            ModelKind::LogLinear => params[0] + params[1] * x.ln(),
            ModelKind::Quadratic => params[0] + params[1] * x + params[2] * x * x,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct FitFlags {
    /// The power term vanished, so the exponent is not determined.
    pub alpha_unidentifiable: bool,
    pub alpha_at_bound: bool,
    pub negative_a: bool,
    pub negative_b: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingFit {
    pub model: ModelKind,
    /// `f`: (A, B, α); `g1`: (A, α); `g2`: (A, B); `g3`: (A, B, C).
    pub params: Vec<f64>,
    pub rss: f64,
    pub n_points: usize,
    pub k_params: usize,
    pub aic: f64,
    pub bic: f64,
    pub flags: FitFlags,
}

impl ScalingFit {
    fn new(model: ModelKind, params: Vec<f64>, rss: f64, n: usize, flags: FitFlags) -> Self {
        let k = model.k_params();
        let (aic, bic) = information_criteria(rss, n, k);
        ScalingFit {
            model,
            params,
            rss,
            n_points: n,
            k_params: k,
            aic,
            bic,
            flags,
        }
    }

    pub fn predict(&self, x: f64) -> f64 {
        self.model.eval(&self.params, x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaBounds {
    pub lo: f64,
    pub hi: f64,
}

impl Default for AlphaBounds {
    fn default() -> Self {
        AlphaBounds { lo: 0.01, hi: 4.0 }
    }
}

impl AlphaBounds {
    fn validate(&self) -> Result<()> {
        if !(self.lo > 0.0 && self.hi > self.lo && self.hi.is_finite()) {
            return Err(Error::argument(format!(
                "alpha bounds [{}, {}] must satisfy 0 < lo < hi",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

/// Gaussian concentrated-likelihood criteria:
/// `AIC = n ln(RSS/n) + 2k`, `BIC = n ln(RSS/n) + k ln n`.
pub fn information_criteria(rss: f64, n: usize, k: usize) -> (f64, f64) {
    let nf = n as f64;
    let fit = nf * (rss.max(RSS_FLOOR) / nf).ln();
    (fit + 2.0 * k as f64, fit + k as f64 * nf.ln())
}

fn check_points(xs: &[f64], ys: &[f64], min_n: usize, positive_x: bool) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::argument(format!(
            "{} x values but {} y values",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < min_n {
        return Err(Error::argument(format!(
            "underdetermined: {} points, need at least {min_n}",
            xs.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::argument("points must be finite"));
    }
    if positive_x && xs.iter().any(|&x| x <= 0.0) {
        return Err(Error::argument("x values must be strictly positive"));
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let distinct = 1 + sorted.windows(2).filter(|w| w[0] != w[1]).count();
    if distinct < min_n.clamp(2, 3) {
        return Err(Error::argument(format!(
            "x values are degenerate: only {distinct} distinct"
        )));
    }
    Ok(())
}

/// Exact `y ≈ a + b z` by centered least squares.
fn line_fit(zs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = zs.len() as f64;
    let mz = zs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let szz: f64 = zs.iter().map(|z| (z - mz) * (z - mz)).sum();
    let szy: f64 = zs.iter().zip(ys).map(|(z, y)| (z - mz) * (y - my)).sum();
    let b = if szz > 0.0 { szy / szz } else { 0.0 };
    let a = my - b * mz;
    let rss = zs.iter().zip(ys).map(|(z, y)| (y - a - b * z).powi(2)).sum();
    (a, b, rss)
}

/// Exact `y ≈ a z`.
fn scale_fit(zs: &[f64], ys: &[f64]) -> (f64, f64) {
    let szz: f64 = zs.iter().map(|z| z * z).sum();
    let szy: f64 = zs.iter().zip(ys).map(|(z, y)| z * y).sum();
    let a = if szz > 0.0 { szy / szz } else { 0.0 };
    let rss = zs.iter().zip(ys).map(|(z, y)| (y - a * z).powi(2)).sum();
    (a, rss)
}

/// Log-spaced grid then golden-section refinement of a 1-D objective.
/// Returns `(alpha, value, grid index of the coarse optimum)`.
fn search_alpha(bounds: AlphaBounds, objective: impl Fn(f64) -> f64 + Sync) -> (f64, f64, usize) {
    let (llo, lhi) = (bounds.lo.ln(), bounds.hi.ln());
    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| (llo + (lhi - llo) * i as f64 / (GRID_POINTS - 1) as f64).exp())
        .collect();
    let values: Vec<f64> = grid.par_iter().map(|&a| objective(a)).collect();
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    let mut lo = grid[best.saturating_sub(1)];
    let mut hi = grid[(best + 1).min(GRID_POINTS - 1)];
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (objective(c), objective(d));
    while (hi - lo) > GOLDEN_TOL * (lo + hi) * 0.5 {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = objective(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = objective(d);
        }
    }
    let mut alpha = 0.5 * (lo + hi);
    let mut value = objective(alpha);
    if values[best] < value {
        alpha = grid[best];
        value = values[best];
    }
    (alpha, value, best)
}

/// Fits `A + B · x^{-α}` with `α` inside `bounds`.
pub fn fit_power_offset(xs: &[f64], ys: &[f64], bounds: AlphaBounds) -> Result<ScalingFit> {
    check_points(xs, ys, 4, true)?;
    bounds.validate()?;
    let rss_at = |alpha: f64| {
        let zs: Vec<f64> = xs.iter().map(|x| x.powf(-alpha)).collect();
        line_fit(&zs, ys).2
    };
    let (alpha, _, idx) = search_alpha(bounds, rss_at);
    let zs: Vec<f64> = xs.iter().map(|x| x.powf(-alpha)).collect();
    let (a, b, rss) = line_fit(&zs, ys);
    let zmax = zs.iter().cloned().fold(f64::MIN, f64::max);
    let zmin = zs.iter().cloned().fold(f64::MAX, f64::min);
    let scale = ys.iter().map(|y| y.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let flags = FitFlags {
        alpha_unidentifiable: (b * (zmax - zmin)).abs() <= 1e-9 * scale,
        alpha_at_bound: idx == 0 || idx == GRID_POINTS - 1,
        negative_a: a < 0.0,
        negative_b: b < 0.0,
    };
    Ok(ScalingFit::new(ModelKind::PowerOffset, vec![a, b, alpha], rss, xs.len(), flags))
}

/// Fits `A · x^{-α}`; needs strictly positive losses.
pub fn fit_pure_power(xs: &[f64], ys: &[f64], bounds: AlphaBounds) -> Result<ScalingFit> {
    check_points(xs, ys, 3, true)?;
    bounds.validate()?;
    if ys.iter().any(|&y| y <= 0.0) {
        return Err(Error::domain("pure power law needs every y > 0"));
    }
    let rss_at = |alpha: f64| {
        let zs: Vec<f64> = xs.iter().map(|x| x.powf(-alpha)).collect();
        scale_fit(&zs, ys).1
    };
    let (alpha, _, idx) = search_alpha(bounds, rss_at);
    let zs: Vec<f64> = xs.iter().map(|x| x.powf(-alpha)).collect();
    let (a, rss) = scale_fit(&zs, ys);
    let flags = FitFlags {
        alpha_at_bound: idx == 0 || idx == GRID_POINTS - 1,
        negative_a: a < 0.0,
        ..Default::default()
    };
    Ok(ScalingFit::new(ModelKind::PurePower, vec![a, alpha], rss, xs.len(), flags))
}

/// Fits `A + B ln x`.
pub fn fit_log_linear(xs: &[f64], ys: &[f64]) -> Result<ScalingFit> {
    check_points(xs, ys, 3, true)?;
    let zs: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let (a, b, rss) = line_fit(&zs, ys);
    let flags = FitFlags {
        negative_a: a < 0.0,
        negative_b: b < 0.0,
        ..Default::default()
    };
    Ok(ScalingFit::new(ModelKind::LogLinear, vec![a, b], rss, xs.len(), flags))
}

/// Fits `A + B x + C x²`.
pub fn fit_quadratic(xs: &[f64], ys: &[f64]) -> Result<ScalingFit> {
    check_points(xs, ys, 4, false)?;
    // centre and scale x for conditioning, then map coefficients back
    let n = xs.len();
    let mx = xs.iter().sum::<f64>() / n as f64;
    let sx = xs.iter().map(|x| (x - mx).abs()).fold(0.0, f64::max);
    let design = DMatrix::from_fn(n, 3, |i, j| ((xs[i] - mx) / sx).powi(j as i32));
    let rhs = DVector::from_column_slice(ys);
    let coef = design
        .clone()
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    let (u0, u1, u2) = (coef[0], coef[1] / sx, coef[2] / (sx * sx));
    let c = u2;
    let b = u1 - 2.0 * u2 * mx;
    let a = u0 - u1 * mx + u2 * mx * mx;
    let rss = (&design * &coef - &rhs).norm_squared();
    let flags = FitFlags {
        negative_a: a < 0.0,
        negative_b: b < 0.0,
        ..Default::default()
    };
    Ok(ScalingFit::new(ModelKind::Quadratic, vec![a, b, c], rss, n, flags))
}

/// A model that could not be fitted, and why.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SkippedModel {
    pub model: ModelKind,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ModelOutcome {
    Fitted(ScalingFit),
    Skipped(SkippedModel),
}

fn outcome(model: ModelKind, r: Result<ScalingFit>) -> ModelOutcome {
    match r {
        Ok(fit) => ModelOutcome::Fitted(fit),
        Err(e) => ModelOutcome::Skipped(SkippedModel {
            model,
            reason: e.to_string(),
        }),
    }
}

/// `g1`, `g2` and `g3` on the same points.
pub fn fit_alternatives(xs: &[f64], ys: &[f64], bounds: AlphaBounds) -> Vec<ModelOutcome> {
    vec![
        outcome(ModelKind::PurePower, fit_pure_power(xs, ys, bounds)),
        outcome(ModelKind::LogLinear, fit_log_linear(xs, ys)),
        outcome(ModelKind::Quadratic, fit_quadratic(xs, ys)),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    /// Best first.
    pub ranked: Vec<ScalingFit>,
    pub skipped: Vec<SkippedModel>,
}

impl Comparison {
    pub fn best(&self) -> Option<&ScalingFit> {
        self.ranked.first()
    }

    /// `model,aic,bic` with one decimal, fitted models in rank order and
    /// skipped models last.
    pub fn write_table_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "model,aic,bic")?;
        for f in &self.ranked {
            writeln!(w, "{},{:.1},{:.1}", f.model.name(), f.aic, f.bic)?;
        }
        for s in &self.skipped {
            writeln!(w, "{},skipped,skipped", s.model.name())?;
        }
        Ok(())
    }
}

/// Fits all four families and ranks them by AIC, then BIC, then fewer
/// parameters.
pub fn compare_models(xs: &[f64], ys: &[f64], bounds: AlphaBounds) -> Result<Comparison> {
    let primary = fit_power_offset(xs, ys, bounds)?;
    let mut ranked = vec![primary];
    let mut skipped = Vec::new();
    for o in fit_alternatives(xs, ys, bounds) {
        match o {
            ModelOutcome::Fitted(f) => ranked.push(f),
            ModelOutcome::Skipped(s) => skipped.push(s),
        }
    }
    ranked.sort_by(|a, b| {
        a.aic
            .total_cmp(&b.aic)
            .then(a.bic.total_cmp(&b.bic))
            .then(a.k_params.cmp(&b.k_params))
    });
    Ok(Comparison { ranked, skipped })
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_points(xs, ys, 2, true)?;
    if ys.iter().any(|&y| y <= 0.0) {
        return Err(Error::domain("log-log slope needs every y > 0"));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    Ok(line_fit(&lx, &ly).1)
}
