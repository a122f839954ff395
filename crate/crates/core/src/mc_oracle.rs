//! Monte Carlo checks of the predicted scaling exponents.
//!
//! Every experiment runs its (point, trial) jobs in parallel; each job owns a
//! generator derived from the base seed and the data-defining keys of the
//! job, and results are reduced in job order. Reports are therefore
//! identical across thread counts.
//!
//! The piecewise-linear learner keys its data by `(D, trial)` only, so all
//! points of a sweep over `d`, `N` or `H` see the same samples.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::curve_fit::log_log_slope;
use crate::error::{Error, Result};
use crate::intrinsic_model::{
    d_of_horizon, draw_samples, make_target, HorizonMapping, NoiseConfig, SpectrumConfig, TargetFunction,
};
use crate::loss_model::{total_loss, LossParams, RegimeChoice};
use crate::seed::{derive_seed, stream};

const QUANTIZER_BLOCK: usize = 1 << 16;
const OLS_RETRIES: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Nn,
    Quantizer,
    Pwl,
    Downsample,
    Ols,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::Nn,
        ExperimentKind::Quantizer,
        ExperimentKind::Pwl,
        ExperimentKind::Downsample,
        ExperimentKind::Ols,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Nn => "nn",
            ExperimentKind::Quantizer => "quantizer",
            ExperimentKind::Pwl => "pwl",
            ExperimentKind::Downsample => "downsample",
            ExperimentKind::Ols => "ols",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
                Error::argument(format!(
                    "unknown experiment {s:?}; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepVariable {
    /// Training samples.
    #[serde(rename = "D")]
    Samples,
    /// Partition cells.
    #[serde(rename = "N")]
    Regions,
    /// Visible intrinsic dimension.
    #[serde(rename = "d")]
    Dim,
    /// Dimension kept after downsampling.
    #[serde(rename = "d_eff")]
    EffectiveDim,
    /// Horizon in frames, mapped to a dimension.
    #[serde(rename = "H")]
    Horizon,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentKind {
    /// Independent standard normal coordinates.
    #[default]
    Gaussian,
    /// Uniform on the unit cube.
    Uniform,
}

/// Everything held constant during a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixedSettings {
    pub spectrum: SpectrumConfig,
    pub noise: NoiseConfig,
    pub mapping: Option<HorizonMapping>,
    pub k1: f64,
    pub k2: f64,
    pub d_out: usize,
    /// Intrinsic dimension for the NN, quantizer and OLS experiments; visible
    /// dimension for the learner.
    pub dim: usize,
    pub n_regions: usize,
    pub d_samples: usize,
    /// Upper bound on `d_eff` for downsampling.
    pub d_visible: usize,
    pub cells_per_axis: usize,
    /// Fresh test points (or NN queries) per trial.
    pub queries: usize,
    pub latent: LatentKind,
    /// Noise variance for the OLS experiment.
    pub noise_var: f64,
    /// Uniform points per quantizer sweep point.
    pub samples: usize,
}

impl Default for FixedSettings {
    fn default() -> Self {
        FixedSettings {
            spectrum: SpectrumConfig {
                lambda0: 1.0,
                alpha_z: 1.5,
                d_total: 64,
                seed: 0,
            },
            noise: NoiseConfig {
                eta: 1.0,
                sigma_m_sq: 0.05,
                s_frames: 1,
                d_i_s: 4,
            },
            mapping: None,
            k1: 3.0,
            k2: 0.5,
            d_out: 2,
            dim: 4,
            n_regions: 16,
            d_samples: 1000,
            d_visible: 16,
            cells_per_axis: 2,
            queries: 2000,
            latent: LatentKind::Gaussian,
            noise_var: 1.0,
            samples: 200_000,
        }
    }
}

impl FixedSettings {
    /// Closed-form loss constants matching these settings.
    pub fn loss_params(&self) -> Result<LossParams> {
        LossParams::new(
            self.k1,
            self.k2,
            self.noise.eta,
            self.spectrum.lambda0,
            self.spectrum.alpha_z,
            self.noise.total_variance(),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub fixed: FixedSettings,
}

fn default_trials() -> usize {
    16
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.len() < 3 {
            return Err(Error::argument(format!(
                "a sweep needs at least 3 values, got {}",
                self.values.len()
            )));
        }
        if self.trials == 0 {
            return Err(Error::argument("trials must be at least 1"));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::argument("sweep values must be finite"));
        }
        Ok(())
    }

    fn counts(&self) -> Result<Vec<usize>> {
        self.values.iter().map(|&v| as_count(v)).collect()
    }
}

fn as_count(v: f64) -> Result<usize> {
    if v.is_finite() && v >= 1.0 && v.fract() == 0.0 && v < 2f64.powi(53) {
        Ok(v as usize)
    } else {
        Err(Error::argument(format!("{v} is not a positive integer")))
    }
}

/// Mean and standard error of one sweep point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Moment {
    pub mean: f64,
    pub stderr: f64,
}

impl Moment {
    pub fn of(values: &[f64]) -> Moment {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let stderr = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Moment { mean, stderr }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PointResult {
    /// Sweep value.
    pub x: f64,
    pub mean: f64,
    pub stderr: f64,
    pub theory: Option<f64>,
    pub trials: usize,
    /// Prediction error of the NN experiment; `mean` holds the squared
    /// neighbour distance there.
    pub secondary: Option<Moment>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub experiment: ExperimentKind,
    pub sweep: SweepSpec,
    pub points: Vec<PointResult>,
    /// Log-log slope of `mean` against `x`.
    pub fitted_exponent: Option<f64>,
    pub theory_exponent: Option<f64>,
    /// Sweep value with the lowest mean.
    pub argmin: Option<f64>,
    pub interior_optimum: Option<bool>,
    #[serde(skip)]
    pub runtime: Duration,
}

impl ExperimentReport {
    fn locate_optimum(&mut self) {
        let best = self
            .points
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.mean.total_cmp(&b.1.mean).then(a.0.cmp(&b.0)));
        if let Some((i, p)) = best {
            self.argmin = Some(p.x);
            self.interior_optimum = Some(i > 0 && i + 1 < self.points.len());
        }
    }

    fn fit_exponent(&mut self) {
        let xs: Vec<f64> = self.points.iter().map(|p| p.x).collect();
        let ys: Vec<f64> = self.points.iter().map(|p| p.mean).collect();
        self.fitted_exponent = log_log_slope(&xs, &ys).ok();
    }

    /// `x,mean,stderr,theory`, theory left empty when absent.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,mean,stderr,theory")?;
        for p in &self.points {
            let theory = p.theory.map(|t| t.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{},{}", p.x, p.mean, p.stderr, theory)?;
        }
        Ok(())
    }

    pub fn means(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.mean).collect()
    }
}

fn report(kind: ExperimentKind, sweep: SweepSpec, points: Vec<PointResult>, started: Instant) -> ExperimentReport {
    ExperimentReport {
        experiment: kind,
        sweep,
        points,
        fitted_exponent: None,
        theory_exponent: None,
        argmin: None,
        interior_optimum: None,
        runtime: started.elapsed(),
    }
}

/// Runs `trial(point, trial)` for every pair in parallel, returning results
/// grouped by point in input order.
fn run_jobs<T: Send>(
    points: usize,
    trials: usize,
    trial: impl Fn(usize, usize) -> Result<T> + Sync,
) -> Result<Vec<Vec<T>>> {
    let flat: Vec<T> = (0..points * trials)
        .into_par_iter()
        .map(|j| trial(j / trials, j % trials))
        .collect::<Result<_>>()?;
    let mut grouped = Vec::with_capacity(points);
    let mut it = flat.into_iter();
    for _ in 0..points {
        grouped.push(it.by_ref().take(trials).collect());
    }
    Ok(grouped)
}

fn sample_points(rng: &mut ChaCha8Rng, count: usize, dim: usize, kind: LatentKind) -> Vec<f64> {
    (0..count * dim)
        .map(|_| match kind {
            LatentKind::Gaussian => rng.sample::<f64, _>(StandardNormal),
            LatentKind::Uniform => rng.random::<f64>(),
        })
        .collect()
}

fn nn_target(settings: &FixedSettings, base_seed: u64) -> Result<TargetFunction> {
    let cfg = SpectrumConfig {
        lambda0: 1.0,
        alpha_z: 2.0,
        d_total: settings.dim,
        seed: 0,
    };
    make_target(
        &cfg,
        settings.k1,
        settings.k2,
        settings.d_out,
        derive_seed(base_seed, "nn-target", &[settings.dim as u64]),
    )
}

/// Nearest-neighbour regression on `fixed.dim` unit-variance coordinates.
///
/// `mean` is the mean squared distance from a query to its nearest
/// training point; `secondary` is the squared prediction error of copying
/// that neighbour's target. Theory: `(K1²/4π) d D^{-2/d}`, exponent `-2/d`.
pub fn nn_risk_experiment(spec: &SweepSpec) -> Result<ExperimentReport> {
    let started = Instant::now();
    spec.validate()?;
    if spec.variable != SweepVariable::Samples {
        return Err(Error::argument("the nn experiment sweeps D"));
    }
    let s = &spec.fixed;
    let dim = s.dim;
    if dim == 0 {
        return Err(Error::argument("dim must be at least 1"));
    }
    if s.queries == 0 {
        return Err(Error::argument("queries must be at least 1"));
    }
    let sizes = spec.counts()?;
    if let Some(&bad) = sizes.iter().find(|&&d| d < 2) {
        return Err(Error::argument(format!("D must be at least 2, got {bad}")));
    }
    let target = nn_target(s, spec.base_seed)?;
    let results = run_jobs(sizes.len(), spec.trials, |p, t| {
        let n = sizes[p];
        let mut rng = stream(spec.base_seed, "nn", &[dim as u64, n as u64, t as u64]);
        let train = sample_points(&mut rng, n, dim, s.latent);
        let queries = sample_points(&mut rng, s.queries, dim, s.latent);
        let mut y_train = vec![0.0; n * s.d_out];
        for (x, y) in train.chunks_exact(dim).zip(y_train.chunks_exact_mut(s.d_out)) {
            target.eval_into(x, y);
        }
        let mut yq = vec![0.0; s.d_out];
        let (mut r2_sum, mut err_sum) = (0.0, 0.0);
        for q in queries.chunks_exact(dim) {
            let mut best = (f64::INFINITY, 0);
            for (i, x) in train.chunks_exact(dim).enumerate() {
                let d2: f64 = q.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                if d2 < best.0 {
                    best = (d2, i);
                }
            }
            target.eval_into(q, &mut yq);
            let ynn = &y_train[best.1 * s.d_out..(best.1 + 1) * s.d_out];
            r2_sum += best.0;
            err_sum += yq.iter().zip(ynn).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        let m = s.queries as f64;
        Ok((r2_sum / m, err_sum / m))
    })?;
    let points = sizes
        .iter()
        .zip(results)
        .map(|(&n, trials)| {
            let r2: Vec<f64> = trials.iter().map(|t| t.0).collect();
            let err: Vec<f64> = trials.iter().map(|t| t.1).collect();
            let m = Moment::of(&r2);
            let nf = n as f64;
            PointResult {
                x: nf,
                mean: m.mean,
                stderr: m.stderr,
                theory: Some(s.k1 * s.k1 / (4.0 * std::f64::consts::PI) * dim as f64 * nf.powf(-2.0 / dim as f64)),
                trials: spec.trials,
                secondary: Some(Moment::of(&err)),
            }
        })
        .collect();
    let mut r = report(ExperimentKind::Nn, spec.clone(), points, started);
    r.fit_exponent();
    r.theory_exponent = Some(-2.0 / dim as f64);
    Ok(r)
}

/// `E‖u‖⁴` for `u` uniform on a cube of side `h` in `d` dimensions.
pub fn quantizer_distortion_exact(d: usize, h: f64) -> f64 {
    let d = d as f64;
    h.powi(4) * (d / 80.0 + d * (d - 1.0) / 144.0)
}

/// Running mean and sum of squared deviations.
#[derive(Clone, Copy, Debug, Default)]
struct Welford {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, v: f64) {
        self.n += 1.0;
        let delta = v - self.mean;
        self.mean += delta / self.n;
        self.m2 += delta * (v - self.mean);
    }

    fn merge(self, other: Welford) -> Welford {
        if self.n == 0.0 {
            return other;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        Welford {
            n,
            mean: self.mean + delta * other.n / n,
            m2: self.m2 + other.m2 + delta * delta * self.n * other.n / n,
        }
    }

    fn moment(&self) -> Moment {
        Moment {
            mean: self.mean,
            stderr: (self.m2 / (self.n - 1.0) / self.n).sqrt(),
        }
    }
}

/// Fourth-power distortion of the uniform grid quantizer on `[0,1]^d`.
///
/// Each point of `cells_per_axis` draws `samples` uniform points; the
/// standard error is over individual points. Theory is the exact value and
/// the exponent in `N = m^d` is `-4/d`.
pub fn quantizer_distortion_experiment(
    d: usize,
    cells_per_axis: &[usize],
    samples: usize,
    base_seed: u64,
) -> Result<ExperimentReport> {
    let started = Instant::now();
    if d == 0 {
        return Err(Error::argument("d must be at least 1"));
    }
    if samples < 10_000 {
        return Err(Error::argument(format!(
            "need at least 10^4 samples, got {samples}"
        )));
    }
    if cells_per_axis.is_empty() {
        return Err(Error::argument("no cell counts given"));
    }
    let mut totals = Vec::with_capacity(cells_per_axis.len());
    for &m in cells_per_axis {
        if m == 0 {
            return Err(Error::argument("cells_per_axis must be at least 1"));
        }
        let n = u32::try_from(d)
            .ok()
            .and_then(|e| (m as u64).checked_pow(e))
            .filter(|&n| n <= 1u64 << 63)
            .ok_or_else(|| Error::argument(format!("{m}^{d} cells exceeds 2^63")))?;
        totals.push(n);
    }
    let blocks = samples.div_ceil(QUANTIZER_BLOCK);
    let jobs: Vec<Welford> = (0..cells_per_axis.len() * blocks)
        .into_par_iter()
        .map(|j| {
            let (p, b) = (j / blocks, j % blocks);
            let m = cells_per_axis[p];
            let mf = m as f64;
            let count = QUANTIZER_BLOCK.min(samples - b * QUANTIZER_BLOCK);
            let mut rng = stream(base_seed, "quantizer", &[d as u64, m as u64, b as u64]);
            let mut acc = Welford::default();
            for _ in 0..count {
                let mut r2 = 0.0;
                for _ in 0..d {
                    let x: f64 = rng.random();
                    let cell = (x * mf).floor().min(mf - 1.0);
                    let u = x - (cell + 0.5) / mf;
                    r2 += u * u;
                }
                acc.push(r2 * r2);
            }
            acc
        })
        .collect();
    let points: Vec<PointResult> = totals
        .iter()
        .zip(jobs.chunks(blocks))
        .zip(cells_per_axis)
        .map(|((&n, parts), &m)| {
            let merged = parts.iter().fold(Welford::default(), |a, b| a.merge(*b));
            let mo = merged.moment();
            PointResult {
                x: n as f64,
                mean: mo.mean,
                stderr: mo.stderr,
                theory: Some(quantizer_distortion_exact(d, 1.0 / m as f64)),
                trials: samples,
                secondary: None,
            }
        })
        .collect();
    let sweep = SweepSpec {
        variable: SweepVariable::Regions,
        values: totals.iter().map(|&n| n as f64).collect(),
        trials: 1,
        base_seed,
        fixed: FixedSettings {
            dim: d,
            samples,
            latent: LatentKind::Uniform,
            ..FixedSettings::default()
        },
    };
    let mut r = report(ExperimentKind::Quantizer, sweep, points, started);
    if r.points.len() >= 2 {
        r.fit_exponent();
    }
    r.theory_exponent = Some(-4.0 / d as f64);
    Ok(r)
}

fn quantizer_from_spec(spec: &SweepSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    if spec.variable != SweepVariable::Regions {
        return Err(Error::argument("the quantizer experiment sweeps N"));
    }
    let d = spec.fixed.dim;
    if d == 0 {
        return Err(Error::argument("dim must be at least 1"));
    }
    let mut cells = Vec::new();
    for n in spec.counts()? {
        let m = (n as f64).powf(1.0 / d as f64).round() as usize;
        let exact = u32::try_from(d)
            .ok()
            .and_then(|e| (m as u64).checked_pow(e))
            == Some(n as u64);
        if !exact {
            return Err(Error::argument(format!("N = {n} is not a perfect {d}-th power")));
        }
        cells.push(m);
    }
    let mut r = quantizer_distortion_experiment(d, &cells, spec.fixed.samples, spec.base_seed)?;
    r.sweep = spec.clone();
    Ok(r)
}

/// Excess risk of ordinary least squares with a standard Gaussian design.
///
/// The excess risk of one fit is `‖β̂ − β‖²`, its exact expectation over
/// test points. Theory column: `d σ² / D`; exponent `-1`.
pub fn ols_noise_term_experiment(
    d: usize,
    sample_sizes: &[usize],
    noise_var: f64,
    trials: usize,
    base_seed: u64,
) -> Result<ExperimentReport> {
    let started = Instant::now();
    if d == 0 || trials == 0 || sample_sizes.is_empty() {
        return Err(Error::argument("d, trials and the D list must be non-empty"));
    }
    if !(noise_var.is_finite() && noise_var >= 0.0) {
        return Err(Error::domain(format!("noise variance {noise_var} must be non-negative")));
    }
    if let Some(&bad) = sample_sizes.iter().find(|&&n| n <= d + 1) {
        return Err(Error::argument(format!("D = {bad} must exceed d + 1 = {}", d + 1)));
    }
    let sd = noise_var.sqrt();
    let results = run_jobs(sample_sizes.len(), trials, |p, t| {
        let n = sample_sizes[p];
        for attempt in 0..OLS_RETRIES {
            let mut rng = stream(base_seed, "ols", &[d as u64, n as u64, t as u64, attempt]);
            let beta: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let x = DMatrix::<f64>::from_fn(n, d, |_, _| rng.sample(StandardNormal));
            let noise = DVector::<f64>::from_fn(n, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
            let y = &x * DVector::from_column_slice(&beta) + noise;
            let Some(chol) = x.tr_mul(&x).cholesky() else {
                continue;
            };
            let est = chol.solve(&x.tr_mul(&y));
            return Ok(est.iter().zip(&beta).map(|(a, b)| (a - b).powi(2)).sum::<f64>());
        }
        Err(Error::Numerical(format!(
            "design stayed singular after {OLS_RETRIES} draws (d = {d}, D = {n})"
        )))
    })?;
    let points = sample_sizes
        .iter()
        .zip(results)
        .map(|(&n, vals)| {
            let m = Moment::of(&vals);
            PointResult {
                x: n as f64,
                mean: m.mean,
                stderr: m.stderr,
                theory: Some(d as f64 * noise_var / n as f64),
                trials,
                secondary: None,
            }
        })
        .collect();
    let sweep = SweepSpec {
        variable: SweepVariable::Samples,
        values: sample_sizes.iter().map(|&n| n as f64).collect(),
        trials,
        base_seed,
        fixed: FixedSettings {
            dim: d,
            noise_var,
            ..FixedSettings::default()
        },
    };
    let mut r = report(ExperimentKind::Ols, sweep, points, started);
    if noise_var > 0.0 && r.points.len() >= 2 {
        r.fit_exponent();
    }
    r.theory_exponent = Some(-1.0);
    Ok(r)
}

fn ols_from_spec(spec: &SweepSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    if spec.variable != SweepVariable::Samples {
        return Err(Error::argument("the ols experiment sweeps D"));
    }
    let mut r = ols_noise_term_experiment(
        spec.fixed.dim,
        &spec.counts()?,
        spec.fixed.noise_var,
        spec.trials,
        spec.base_seed,
    )?;
    r.sweep = spec.clone();
    Ok(r)
}

/// One configuration of the piecewise-linear learner.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct LearnerPoint {
    d: usize,
    n_regions: usize,
    d_samples: usize,
}

/// Axis-aligned grid over the leading coordinates with equiprobable bins
/// under the latent Gaussian.
struct Partition {
    axes: usize,
    cells_per_axis: usize,
    /// `thresholds[k]` has `cells_per_axis - 1` entries.
    thresholds: Vec<Vec<f64>>,
}

impl Partition {
    fn new(spectrum: &SpectrumConfig, d: usize, n_regions: usize, cells_per_axis: usize) -> Result<Self> {
        let axes = if cells_per_axis < 2 || n_regions < 2 {
            0
        } else {
            let raw = (n_regions as f64).ln() / (cells_per_axis as f64).ln();
            (raw.round() as usize).min(d)
        };
        let std_normal = Normal::new(0.0, 1.0).map_err(|e| Error::Numerical(e.to_string()))?;
        let eig = spectrum.eigenvalues();
        let thresholds = (0..axes)
            .map(|k| {
                (1..cells_per_axis)
                    .map(|j| eig[k].sqrt() * std_normal.inverse_cdf(j as f64 / cells_per_axis as f64))
                    .collect()
            })
            .collect();
        Ok(Partition {
            axes,
            cells_per_axis,
            thresholds,
        })
    }

    fn cells(&self) -> usize {
        self.cells_per_axis.pow(self.axes as u32)
    }

    fn cell_of(&self, x: &[f64]) -> usize {
        let mut idx = 0;
        for k in (0..self.axes).rev() {
            let bin = self.thresholds[k].iter().filter(|&&t| x[k] > t).count();
            idx = idx * self.cells_per_axis + bin;
        }
        idx
    }
}

enum CellModel {
    Linear(DMatrix<f64>),
    Constant(Vec<f64>),
}

/// Fits the learner on one training draw and returns the test error
/// against the clean targets.
fn pwl_trial(
    s: &FixedSettings,
    target: &TargetFunction,
    point: LearnerPoint,
    trial_seed: u64,
) -> Result<f64> {
    let LearnerPoint { d, n_regions, d_samples } = point;
    let spectrum = s.spectrum.with_seed(trial_seed);
    let train = draw_samples(&spectrum, &s.noise, target, d_samples, 0)?;
    let test = draw_samples(&spectrum, &s.noise, target, s.queries, 1)?;
    let part = Partition::new(&s.spectrum, d, n_regions, s.cells_per_axis)?;
    let cells = part.cells();
    let p = d + 1;
    let d_out = s.d_out;

    let mut gram = vec![DMatrix::<f64>::zeros(p, p); cells];
    let mut cross = vec![DMatrix::<f64>::zeros(p, d_out); cells];
    let mut counts = vec![0usize; cells];
    let mut sums = vec![vec![0.0; d_out]; cells];
    let mut global = vec![0.0; d_out];
    let mut z = DVector::<f64>::zeros(p);
    for (x, y) in train.latent.iter_rows().zip(train.noisy.iter_rows()) {
        let c = part.cell_of(x);
        z[0] = 1.0;
        z.rows_mut(1, d).copy_from_slice(&x[..d]);
        gram[c].syger(1.0, &z, &z, 1.0);
        for (j, yj) in y.iter().enumerate() {
            cross[c].column_mut(j).axpy(*yj, &z, 1.0);
            sums[c][j] += yj;
            global[j] += yj;
        }
        counts[c] += 1;
    }
    global.iter_mut().for_each(|v| *v /= d_samples as f64);

    let models: Vec<CellModel> = (0..cells)
        .map(|c| {
            if counts[c] >= d + 2 {
                // syger fills the lower triangle only
                let g = gram[c].clone();
                if let Some(ch) = g.cholesky() {
                    return CellModel::Linear(ch.solve(&cross[c]));
                }
            }
            if counts[c] > 0 {
                CellModel::Constant(sums[c].iter().map(|v| v / counts[c] as f64).collect())
            } else {
                CellModel::Constant(global.clone())
            }
        })
        .collect();

    let mut err = 0.0;
    let mut pred = vec![0.0; d_out];
    for (x, y) in test.latent.iter_rows().zip(test.clean.iter_rows()) {
        match &models[part.cell_of(x)] {
            CellModel::Linear(b) => {
                for (j, out) in pred.iter_mut().enumerate() {
                    let col = b.column(j);
                    *out = col[0] + x[..d].iter().zip(col.iter().skip(1)).map(|(a, w)| a * w).sum::<f64>();
                }
            }
            CellModel::Constant(m) => pred.copy_from_slice(m),
        }
        err += pred.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(err / s.queries as f64)
}

fn learner_points(spec: &SweepSpec) -> Result<Vec<LearnerPoint>> {
    let s = &spec.fixed;
    let base = LearnerPoint {
        d: s.dim,
        n_regions: s.n_regions,
        d_samples: s.d_samples,
    };
    spec.counts()?
        .into_iter()
        .map(|v| {
            let p = match spec.variable {
                SweepVariable::Samples => LearnerPoint { d_samples: v, ..base },
                SweepVariable::Regions => LearnerPoint { n_regions: v, ..base },
                SweepVariable::Dim | SweepVariable::EffectiveDim => LearnerPoint { d: v, ..base },
                SweepVariable::Horizon => {
                    let map = s
                        .mapping
                        .as_ref()
                        .ok_or_else(|| Error::argument("a horizon sweep needs a mapping"))?;
                    map.validate()?;
                    LearnerPoint {
                        d: d_of_horizon(map, v),
                        ..base
                    }
                }
            };
            Ok(p)
        })
        .collect()
}

fn run_learner(kind: ExperimentKind, spec: &SweepSpec, points: Vec<LearnerPoint>, started: Instant) -> Result<ExperimentReport> {
    let s = &spec.fixed;
    s.spectrum.validate()?;
    s.noise.validate()?;
    if s.queries == 0 {
        return Err(Error::argument("the learner needs at least one test sample"));
    }
    if s.cells_per_axis == 0 {
        return Err(Error::argument("cells_per_axis must be at least 1"));
    }
    for p in &points {
        if p.d == 0 || p.d > s.spectrum.d_total {
            return Err(Error::range("visible dimension", p.d, 1, s.spectrum.d_total));
        }
        if p.n_regions == 0 || p.d_samples == 0 {
            return Err(Error::argument("N and D must be at least 1"));
        }
    }
    let target = make_target(
        &s.spectrum,
        s.k1,
        s.k2,
        s.d_out,
        derive_seed(spec.base_seed, "pwl-target", &[]),
    )?;
    let results = run_jobs(points.len(), spec.trials, |p, t| {
        let pt = points[p];
        let seed = derive_seed(spec.base_seed, "pwl", &[pt.d_samples as u64, t as u64]);
        pwl_trial(s, &target, pt, seed)
    })?;
    let params = s.loss_params()?;
    let floor = params.eta * params.noise_total;
    let out = points
        .iter()
        .zip(spec.values.iter())
        .zip(results)
        .map(|((pt, &x), vals)| {
            let m = Moment::of(&vals);
            let theory = total_loss(
                &params,
                pt.d,
                pt.n_regions as f64,
                pt.d_samples as f64,
                RegimeChoice::Dense,
                None,
            )
            .ok()
            .map(|l| l.total - floor);
            PointResult {
                x,
                mean: m.mean,
                stderr: m.stderr,
                theory,
                trials: spec.trials,
                secondary: None,
            }
        })
        .collect();
    let mut r = report(kind, spec.clone(), out, started);
    r.locate_optimum();
    Ok(r)
}

/// Grid-partitioned piecewise-linear regression on the visible coordinates.
///
/// The partition splits each of the leading `min(d, round(ln N / ln m))`
/// coordinates into `m = cells_per_axis` equiprobable bins. Each cell fits
/// ordinary least squares on `[1, x_1..x_d]` from the noisy training
/// targets, or predicts its mean when it holds fewer than `d + 2` samples.
/// `mean` is the test error against the clean target; `theory` is the
/// dense-regime closed form without the irreducible noise floor.
pub fn pwl_learner_experiment(spec: &SweepSpec) -> Result<ExperimentReport> {
    let started = Instant::now();
    spec.validate()?;
    if spec.variable == SweepVariable::EffectiveDim {
        return Err(Error::argument("use the downsample experiment to sweep d_eff"));
    }
    let points = learner_points(spec)?;
    run_learner(ExperimentKind::Pwl, spec, points, started)
}

/// The learner restricted to the top `d_eff ≤ d_visible` coordinates.
pub fn downsample_experiment(spec: &SweepSpec) -> Result<ExperimentReport> {
    let started = Instant::now();
    spec.validate()?;
    if spec.variable != SweepVariable::EffectiveDim {
        return Err(Error::argument("the downsample experiment sweeps d_eff"));
    }
    let s = &spec.fixed;
    if s.d_visible == 0 || s.d_visible > s.spectrum.d_total {
        return Err(Error::range("d_visible", s.d_visible, 1, s.spectrum.d_total));
    }
    let points = learner_points(spec)?;
    if let Some(p) = points.iter().find(|p| p.d > s.d_visible) {
        return Err(Error::argument(format!(
            "d_eff = {} exceeds d_visible = {}",
            p.d, s.d_visible
        )));
    }
    run_learner(ExperimentKind::Downsample, spec, points, started)
}

/// Dispatches on the experiment name.
pub fn run_experiment(kind: ExperimentKind, spec: &SweepSpec) -> Result<ExperimentReport> {
    match kind {
        ExperimentKind::Nn => nn_risk_experiment(spec),
        ExperimentKind::Quantizer => quantizer_from_spec(spec),
        ExperimentKind::Pwl => pwl_learner_experiment(spec),
        ExperimentKind::Downsample => downsample_experiment(spec),
        ExperimentKind::Ols => ols_from_spec(spec),
    }
}

/// A reasonable sweep for each experiment when none is configured.
pub fn default_sweep(kind: ExperimentKind, base_seed: u64) -> SweepSpec {
    let fixed = FixedSettings::default();
    let (variable, values, trials, fixed) = match kind {
        ExperimentKind::Nn => (
            SweepVariable::Samples,
            (7..=13).map(|k| f64::from(1u32 << k)).collect(),
            64,
            FixedSettings {
                queries: 500,
                k1: 1.0,
                k2: 0.0,
                ..fixed
            },
        ),
        ExperimentKind::Quantizer => (
            SweepVariable::Regions,
            vec![4.0, 16.0, 64.0, 256.0],
            1,
            FixedSettings {
                dim: 2,
                latent: LatentKind::Uniform,
                ..fixed
            },
        ),
        ExperimentKind::Pwl => (SweepVariable::Dim, reference_dims(), 16, fixed),
        ExperimentKind::Downsample => (
            SweepVariable::EffectiveDim,
            vec![1.0, 2.0, 4.0, 8.0, 16.0],
            16,
            fixed,
        ),
        ExperimentKind::Ols => (
            SweepVariable::Samples,
            vec![100.0, 200.0, 400.0, 800.0, 1600.0],
            200,
            fixed,
        ),
    };
    SweepSpec {
        variable,
        values,
        trials,
        base_seed,
        fixed,
    }
}

/// Visible dimensions scanned by the reference learner sweep.
pub fn reference_dims() -> Vec<f64> {
    [1, 2, 3, 4, 6, 8, 12, 16, 24, 32, 48, 64]
        .iter()
        .map(|&d| f64::from(d))
        .collect()
}
