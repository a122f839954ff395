//! Generative model of the intrinsic space.
//!
//! Latent vectors are Gaussian with diagonal covariance `diag(λ_1, …, λ_d)`
//! where `λ_i = λ0 · i^{-α_Z}`. Coordinates are sorted by eigenvalue, so a
//! shorter look-back horizon corresponds to keeping a prefix of the
//! coordinates. Targets come from a smooth map `F` with controlled first- and
//! second-order Lipschitz constants, perturbed by intrinsic noise.

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::table::Table;

/// Rows generated per independent random stream.
const BLOCK_ROWS: usize = 1024;

/// Zip-f covariance spectrum of the intrinsic space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    /// Variance of the leading component.
    pub lambda0: f64,
    /// Decay exponent of the eigenvalue sequence.
    pub alpha_z: f64,
    /// Total intrinsic dimension.
    pub d_total: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SpectrumConfig {
    pub fn new(lambda0: f64, alpha_z: f64, d_total: usize, seed: u64) -> Result<Self> {
        let cfg = SpectrumConfig {
            lambda0,
            alpha_z,
            d_total,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda0.is_finite() && self.lambda0 > 0.0) {
            return Err(Error::domain(format!(
                "lambda0 must be positive, got {}",
                self.lambda0
            )));
        }
        if !(self.alpha_z.is_finite() && self.alpha_z > 1.0) {
            return Err(Error::domain(format!(
                "alpha_z must exceed 1, got {}",
                self.alpha_z
            )));
        }
        if self.d_total == 0 {
            return Err(Error::argument("d_total must be at least 1"));
        }
        Ok(())
    }

    /// All eigenvalues `λ_1 … λ_{d_total}`.
    pub fn eigenvalues(&self) -> Vec<f64> {
        (1..=self.d_total)
            .map(|i| self.lambda0 * (i as f64).powf(-self.alpha_z))
            .collect()
    }

    /// The same spectrum drawing from a different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        SpectrumConfig {
            seed,
            ..self.clone()
        }
    }
}

/// Intrinsic noise of the prediction target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Probability that a sample's target is noisy.
    pub eta: f64,
    /// Noise variance per frame and per dimension.
    pub sigma_m_sq: f64,
    /// Prediction length in frames.
    pub s_frames: usize,
    /// Intrinsic dimension of the prediction window.
    pub d_i_s: usize,
}

impl NoiseConfig {
    pub fn new(eta: f64, sigma_m_sq: f64, s_frames: usize, d_i_s: usize) -> Result<Self> {
        let cfg = NoiseConfig {
            eta,
            sigma_m_sq,
            s_frames,
            d_i_s,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::range("eta", self.eta, 0.0, 1.0));
        }
        if !(self.sigma_m_sq.is_finite() && self.sigma_m_sq >= 0.0) {
            return Err(Error::domain(format!(
                "sigma_m_sq must be non-negative, got {}",
                self.sigma_m_sq
            )));
        }
        if self.s_frames == 0 || self.d_i_s == 0 {
            return Err(Error::argument("s_frames and d_i_s must be at least 1"));
        }
        Ok(())
    }

    /// Trace of the noise covariance, `σ_M² · S² · d_I(S)`.
    pub fn total_variance(&self) -> f64 {
        let s = self.s_frames as f64;
        self.sigma_m_sq * s * s * self.d_i_s as f64
    }
}

/// Linear relation between look-back horizon (frames) and intrinsic dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonMapping {
    /// Intrinsic dimensions gained per frame.
    #[serde(default = "default_c_d")]
    pub c_d: f64,
    /// Cap on the intrinsic dimension.
    pub d_total: usize,
}

fn default_c_d() -> f64 {
    1.0
}

impl HorizonMapping {
    pub fn new(c_d: f64, d_total: usize) -> Result<Self> {
        let map = HorizonMapping { c_d, d_total };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_d.is_finite() && self.c_d > 0.0) {
            return Err(Error::domain(format!(
                "c_d must be positive, got {}",
                self.c_d
            )));
        }
        if self.d_total == 0 {
            return Err(Error::argument("mapping d_total must be at least 1"));
        }
        Ok(())
    }

    /// Frames needed to reach intrinsic dimension `d`: `ceil(d / c_d)`.
    pub fn horizon_for_dim(&self, d: usize) -> usize {
        let h = (d as f64 / self.c_d).ceil().max(1.0) as usize;
        // guard against representation error in d / c_d
        if h > 1 && d_of_horizon(self, h - 1) >= d && ((h - 1) as f64 * self.c_d) >= d as f64 {
            h - 1
        } else {
            h
        }
    }
}

/// `λ_i = λ0 · i^{-α_Z}` for a 1-based index.
pub fn eigenvalue(cfg: &SpectrumConfig, i: usize) -> Result<f64> {
    if i == 0 || i > cfg.d_total {
        return Err(Error::range("eigenvalue index", i, 1, cfg.d_total));
    }
    Ok(cfg.lambda0 * (i as f64).powf(-cfg.alpha_z))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailMode {
    /// `Σ_{i=d+1}^{d_total} λ_i`
    Exact,
    /// `λ0 / ((α_Z − 1) d^{α_Z − 1})`
    Approx,
}

/// Variance carried by the coordinates beyond the first `d`.
pub fn tail_variance(cfg: &SpectrumConfig, d: usize, mode: TailMode) -> Result<f64> {
    if d == 0 || d > cfg.d_total {
        return Err(Error::range("d", d, 1, cfg.d_total));
    }
    match mode {
        TailMode::Exact => {
            // smallest terms first
            let sum = ((d + 1)..=cfg.d_total)
                .rev()
                .map(|i| cfg.lambda0 * (i as f64).powf(-cfg.alpha_z))
                .sum();
            Ok(sum)
        }
        TailMode::Approx => {
            if cfg.alpha_z <= 1.0 {
                return Err(Error::domain(format!(
                    "tail diverges for alpha_z = {} <= 1",
                    cfg.alpha_z
                )));
            }
            Ok(approx_tail(cfg.lambda0, cfg.alpha_z, d as f64))
        }
    }
}

pub(crate) fn approx_tail(lambda0: f64, alpha_z: f64, d: f64) -> f64 {
    lambda0 / ((alpha_z - 1.0) * d.powf(alpha_z - 1.0))
}

/// Draws `count` latent vectors.
pub fn sample_latent(cfg: &SpectrumConfig, count: usize) -> Result<Table> {
    sample_latent_stream(cfg, count, 0)
}

/// Like [`sample_latent`] but from an independent numbered stream of the
/// same seed.
pub fn sample_latent_stream(cfg: &SpectrumConfig, count: usize, stream: u64) -> Result<Table> {
    cfg.validate()?;
    if count == 0 {
        return Err(Error::argument("sample count must be at least 1"));
    }
    let scales: Vec<f64> = cfg.eigenvalues().into_iter().map(f64::sqrt).collect();
    let d = cfg.d_total;
    let mut table = Table::zeros(count, d);
    table
        .as_mut_slice()
        .par_chunks_mut(BLOCK_ROWS * d)
        .enumerate()
        .for_each(|(block, chunk)| {
            let mut rng = seed::stream(cfg.seed, "latent", &[stream, block as u64]);
            for row in chunk.chunks_exact_mut(d) {
                for (x, s) in row.iter_mut().zip(&scales) {
                    let z: f64 = rng.sample(StandardNormal);
                    *x = z * s;
                }
            }
        });
    Ok(table)
}

/// Keeps the first `d_visible` coordinates.
pub fn truncate(row: &[f64], d_visible: usize) -> Result<&[f64]> {
    if d_visible == 0 || d_visible > row.len() {
        return Err(Error::range("d_visible", d_visible, 1, row.len()));
    }
    Ok(&row[..d_visible])
}

/// `clamp(round(c_d · H), 1, d_total)`.
pub fn d_of_horizon(map: &HorizonMapping, horizon: usize) -> usize {
    let raw = (map.c_d * horizon as f64).round();
    (raw.max(1.0) as usize).min(map.d_total)
}

/// Ground-truth predictor `F(x) = A x + C ψ(x)` with `ψ_i(x) = ln cosh x_i`.
///
/// `ψ` is quadratic near the origin but has slope bounded by one and
/// curvature bounded by one, which lets both Lipschitz constants hold
/// globally: `‖A‖₂ + ‖C‖₂ ≤ K1` and `max_i ‖C e_i‖ ≤ K2`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TargetFunction {
    pub k1: f64,
    pub k2: f64,
    pub d_in: usize,
    pub d_out: usize,
    /// `d_out × d_in`
    pub linear_part: Table,
    /// `d_out × d_in`
    pub quadratic_part: Table,
}

impl TargetFunction {
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.d_in);
        let curved = self.k2 > 0.0;
        for (j, o) in out.iter_mut().enumerate() {
            let a = self.linear_part.row(j);
            let mut acc: f64 = a.iter().zip(x).map(|(a, x)| a * x).sum();
            if curved {
                let c = self.quadratic_part.row(j);
                acc += c.iter().zip(x).map(|(c, x)| c * ln_cosh(*x)).sum::<f64>();
            }
            *o = acc;
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d_out];
        self.eval_into(x, &mut out);
        out
    }

    /// Applies `F` to every row.
    pub fn eval_table(&self, inputs: &Table) -> Table {
        let mut out = Table::zeros(inputs.rows(), self.d_out);
        let d_out = self.d_out;
        out.as_mut_slice()
            .par_chunks_mut(d_out)
            .enumerate()
            .for_each(|(i, o)| self.eval_into(inputs.row(i), o));
        out
    }
}

fn ln_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

fn spectral_norm(t: &Table) -> f64 {
    let m = DMatrix::from_row_slice(t.rows(), t.cols(), t.as_slice());
    m.singular_values().max()
}

/// Builds a random target map with the requested Lipschitz constants.
pub fn make_target(
    cfg: &SpectrumConfig,
    k1: f64,
    k2: f64,
    d_out: usize,
    seed: u64,
) -> Result<TargetFunction> {
    if !(k1.is_finite() && k1 > 0.0) {
        return Err(Error::Construction(format!("K1 must be positive, got {k1}")));
    }
    if !(k2.is_finite() && k2 >= 0.0) {
        return Err(Error::Construction(format!(
            "K2 must be non-negative, got {k2}"
        )));
    }
    if d_out == 0 {
        return Err(Error::Construction("d_out must be at least 1".into()));
    }
    let d_in = cfg.d_total;
    let mut rng = seed::stream(seed, "target", &[]);
    let mut draw = |rows, cols| -> Table {
        let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
        Table::from_vec(rows, cols, data).expect("shape")
    };
    let mut linear = draw(d_out, d_in);
    let mut quadratic = draw(d_out, d_in);

    let mut quad_norm = 0.0;
    if k2 > 0.0 {
        let max_col = (0..d_in)
            .map(|i| {
                (0..d_out)
                    .map(|j| quadratic.get(j, i).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        if max_col <= 0.0 {
            return Err(Error::Construction("degenerate curvature draw".into()));
        }
        scale(&mut quadratic, k2 / max_col);
        quad_norm = spectral_norm(&quadratic);
        // the curved part may use at most half of the K1 budget
        if quad_norm > 0.5 * k1 {
            scale(&mut quadratic, 0.5 * k1 / quad_norm);
            quad_norm = 0.5 * k1;
        }
    } else {
        scale(&mut quadratic, 0.0);
    }

    let lin_norm = spectral_norm(&linear);
    let budget = k1 - quad_norm;
    if lin_norm <= 0.0 || budget <= 0.0 {
        return Err(Error::Construction(
            "cannot fit the linear part inside the K1 budget".into(),
        ));
    }
    scale(&mut linear, budget / lin_norm);

    Ok(TargetFunction {
        k1,
        k2,
        d_in,
        d_out,
        linear_part: linear,
        quadratic_part: quadratic,
    })
}

fn scale(t: &mut Table, s: f64) {
    t.as_mut_slice().iter_mut().for_each(|v| *v *= s);
}

/// Where a synthetic dataset came from.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Provenance {
    pub spectrum: SpectrumConfig,
    pub noise: NoiseConfig,
    pub mapping: Option<HorizonMapping>,
    pub horizon: Option<usize>,
    pub seed: u64,
}

/// Materialized samples: visible inputs and (possibly noisy) targets.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SyntheticDataset {
    pub inputs: Table,
    pub targets: Table,
    pub d_visible: usize,
    pub provenance: Provenance,
}

impl SyntheticDataset {
    /// Writes `x_1..x_dvis,y_1..y_dout` followed by one sample per row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header: Vec<String> = (1..=self.inputs.cols()).map(|i| format!("x_{i}")).collect();
        header.extend((1..=self.targets.cols()).map(|i| format!("y_{i}")));
        writeln!(w, "{}", header.join(","))?;
        let mut line = String::new();
        for (x, y) in self.inputs.iter_rows().zip(self.targets.iter_rows()) {
            line.clear();
            for (k, v) in x.iter().chain(y).enumerate() {
                if k > 0 {
                    line.push(',');
                }
                line.push_str(&format_value(*v));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Plain decimal notation that parses back to the same `f64`.
pub fn format_value(v: f64) -> String {
    format!("{v}")
}

/// Latent draws with clean and noisy targets.
pub(crate) struct Draw {
    pub latent: Table,
    pub clean: Table,
    pub noisy: Table,
}

pub(crate) fn draw_samples(
    spectrum: &SpectrumConfig,
    noise: &NoiseConfig,
    target: &TargetFunction,
    count: usize,
    stream: u64,
) -> Result<Draw> {
    noise.validate()?;
    if target.d_in != spectrum.d_total {
        return Err(Error::argument(format!(
            "target expects {} inputs but the spectrum has {} dimensions",
            target.d_in, spectrum.d_total
        )));
    }
    let latent = sample_latent_stream(spectrum, count, stream)?;
    let clean = target.eval_table(&latent);
    let mut noisy = clean.clone();
    let d_out = target.d_out;
    let per_dim_sd = (noise.total_variance() / d_out as f64).sqrt();
    let eta = noise.eta;
    if eta > 0.0 && per_dim_sd > 0.0 {
        noisy
            .as_mut_slice()
            .par_chunks_mut(BLOCK_ROWS * d_out)
            .enumerate()
            .for_each(|(block, chunk)| {
                let mut rng = seed::stream(spectrum.seed, "noise", &[stream, block as u64]);
                for row in chunk.chunks_exact_mut(d_out) {
                    let hit = rng.random::<f64>() < eta;
                    for y in row.iter_mut() {
                        // always consume the draw so streams stay aligned across eta
                        let z: f64 = rng.sample(StandardNormal);
                        if hit {
                            *y += per_dim_sd * z;
                        }
                    }
                }
            });
    }
    Ok(Draw {
        latent,
        clean,
        noisy,
    })
}

/// Samples `count` rows, shows the learner `d_of_horizon(map, horizon)`
/// coordinates and returns noisy targets of the full latent.
pub fn generate_dataset(
    spectrum: &SpectrumConfig,
    noise: &NoiseConfig,
    target: &TargetFunction,
    map: &HorizonMapping,
    count: usize,
    horizon: usize,
) -> Result<SyntheticDataset> {
    map.validate()?;
    if horizon == 0 {
        return Err(Error::argument("horizon must be at least 1"));
    }
    let d_visible = d_of_horizon(map, horizon).min(spectrum.d_total);
    let mut ds = generate_dataset_with_dims(spectrum, noise, target, d_visible, count)?;
    ds.provenance.mapping = Some(map.clone());
    ds.provenance.horizon = Some(horizon);
    Ok(ds)
}

/// [`generate_dataset`] with an explicit visible dimension.
pub fn generate_dataset_with_dims(
    spectrum: &SpectrumConfig,
    noise: &NoiseConfig,
    target: &TargetFunction,
    d_visible: usize,
    count: usize,
) -> Result<SyntheticDataset> {
    if d_visible == 0 || d_visible > spectrum.d_total {
        return Err(Error::range("d_visible", d_visible, 1, spectrum.d_total));
    }
    let draw = draw_samples(spectrum, noise, target, count, 0)?;
    Ok(SyntheticDataset {
        inputs: draw.latent.prefix_columns(d_visible),
        targets: draw.noisy,
        d_visible,
        provenance: Provenance {
            spectrum: spectrum.clone(),
            noise: noise.clone(),
            mapping: None,
            horizon: None,
            seed: spectrum.seed,
        },
    })
}

/// Lays latent vectors out as a univariate series.
///
/// Each latent draw becomes one block of `window_len` frames,
/// `x[t] = Σ_i z_i · b_i[t]` with `b_i` the i-th zero-mean DCT-II basis
/// vector. Windows aligned to block boundaries therefore have the latent
/// covariance spectrum (in a rotated basis) and zero mean.
pub fn series_from_latent(cfg: &SpectrumConfig, window_len: usize, blocks: usize) -> Result<Table> {
    if cfg.d_total >= window_len {
        return Err(Error::argument(format!(
            "window_len {window_len} must exceed d_total {}",
            cfg.d_total
        )));
    }
    let latent = sample_latent(cfg, blocks)?;
    let l = window_len as f64;
    let norm = (2.0 / l).sqrt();
    let basis: Vec<Vec<f64>> = (1..=cfg.d_total)
        .map(|k| {
            (0..window_len)
                .map(|t| norm * (std::f64::consts::PI * k as f64 * (t as f64 + 0.5) / l).cos())
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(blocks * window_len);
    for z in latent.iter_rows() {
        for t in 0..window_len {
            out.push(z.iter().zip(&basis).map(|(z, b)| z * b[t]).sum());
        }
    }
    Table::from_vec(blocks * window_len, 1, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn spec(lambda0: f64, alpha: f64, d: usize) -> SpectrumConfig {
        SpectrumConfig::new(lambda0, alpha, d, 11).unwrap()
    }

    #[test]
    fn eigenvalue_examples() {
        assert_eq!(eigenvalue(&spec(1.0, 2.0, 10), 1).unwrap(), 1.0);
        assert_relative_eq!(eigenvalue(&spec(2.0, 1.5, 10), 4).unwrap(), 0.25, epsilon = 1e-15);
        // 10^-1.2 = 0.063095734448019324943...
        assert_relative_eq!(
            eigenvalue(&spec(1.0, 1.2, 10), 10).unwrap(),
            0.063_095_734_448_019_32,
            max_relative = 1e-14
        );
        assert!(matches!(
            eigenvalue(&spec(1.0, 2.0, 10), 11),
            Err(Error::Range { .. })
        ));
        assert!(eigenvalue(&spec(1.0, 2.0, 10), 0).is_err());
    }

    #[test]
    fn invalid_spectrum_rejected() {
        assert!(SpectrumConfig::new(1.0, 1.0, 4, 0).is_err());
        assert!(SpectrumConfig::new(0.0, 2.0, 4, 0).is_err());
        assert!(SpectrumConfig::new(1.0, 2.0, 0, 0).is_err());
    }

    #[test]
    fn tail_variance_examples() {
        let cfg = spec(1.0, 2.0, 1_000_000);
        assert_relative_eq!(
            tail_variance(&cfg, 10, TailMode::Approx).unwrap(),
            0.1,
            epsilon = 1e-15
        );
        // pi^2/6 - sum_{i<=10} i^-2 = 0.0951663357..., minus the tail past 10^6 (~1e-6)
        let exact = tail_variance(&cfg, 10, TailMode::Exact).unwrap();
        assert!((exact - (0.095_166_335_7 - 1.0e-6)).abs() < 1e-8, "{exact}");
        let small = spec(1.0, 2.0, 10);
        assert_eq!(tail_variance(&small, 10, TailMode::Exact).unwrap(), 0.0);
        assert!(tail_variance(&small, 11, TailMode::Exact).is_err());
    }

    #[test]
    fn approx_tail_rejects_divergent_exponent() {
        let mut cfg = spec(1.0, 2.0, 100);
        cfg.alpha_z = 1.0;
        assert!(matches!(
            tail_variance(&cfg, 10, TailMode::Approx),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn latent_moments() {
        let cfg = SpectrumConfig::new(1.0, 1.5, 4, 3).unwrap();
        let n = 100_000;
        let x = sample_latent(&cfg, n).unwrap();
        let lam = cfg.eigenvalues();
        let mean = |j: usize| x.column(j).iter().sum::<f64>() / n as f64;
        let var0 = x.column(0).iter().map(|v| (v - mean(0)).powi(2)).sum::<f64>() / (n - 1) as f64;
        // 3 standard deviations of the sample variance of a Gaussian
        assert!((var0 - lam[0]).abs() <= 3.0 * lam[0] * (2.0 / n as f64).sqrt(), "{var0}");
        for a in 0..4 {
            for b in (a + 1)..4 {
                let (ma, mb) = (mean(a), mean(b));
                let cov = x
                    .iter_rows()
                    .map(|r| (r[a] - ma) * (r[b] - mb))
                    .sum::<f64>()
                    / (n - 1) as f64;
                let se = (lam[a] * lam[b] / n as f64).sqrt();
                assert!(cov.abs() < 4.0 * se, "cov({a},{b}) = {cov}, se {se}");
            }
        }
    }

    #[test]
    fn latent_is_deterministic() {
        let cfg = spec(1.0, 1.5, 8);
        assert_eq!(sample_latent(&cfg, 3000).unwrap(), sample_latent(&cfg, 3000).unwrap());
        assert_ne!(
            sample_latent(&cfg, 10).unwrap(),
            sample_latent(&cfg.with_seed(12), 10).unwrap()
        );
        // a prefix of a longer draw is the shorter draw
        let long = sample_latent(&cfg, 2500).unwrap();
        let short = sample_latent(&cfg, 1500).unwrap();
        assert_eq!(&long.as_slice()[..short.as_slice().len()], short.as_slice());
    }

    #[test]
    fn truncate_examples() {
        let x = [3.0, 1.0, 4.0, 1.0, 5.0];
        assert_eq!(truncate(&x, 5).unwrap(), &x);
        assert_eq!(truncate(&x, 2).unwrap(), &[3.0, 1.0]);
        assert!(truncate(&x, 0).is_err());
        assert!(truncate(&x, 6).is_err());
    }

    #[test]
    fn truncate_composes_on_random_rows() {
        let cfg = spec(1.0, 1.5, 16);
        let x = sample_latent(&cfg, 1000).unwrap();
        for (k, row) in x.iter_rows().enumerate() {
            let a = 1 + k % 16;
            let b = 1 + (k * 7) % a;
            let twice = truncate(truncate(row, a).unwrap(), b).unwrap();
            assert_eq!(twice, truncate(row, b).unwrap());
        }
    }

    #[test]
    fn horizon_mapping_examples() {
        let half = HorizonMapping::new(0.5, 64).unwrap();
        assert_eq!(d_of_horizon(&half, 20), 10);
        assert_eq!(d_of_horizon(&half, 1000), 64);
        assert_eq!(d_of_horizon(&HorizonMapping::new(2.0, 64).unwrap(), 1), 2);
        assert_eq!(half.horizon_for_dim(32), 64);
        assert_eq!(HorizonMapping::new(1.0, 64).unwrap().horizon_for_dim(32), 32);
    }

    #[test]
    fn linear_target_has_zero_curvature() {
        let cfg = spec(1.0, 1.5, 6);
        let f = make_target(&cfg, 2.0, 0.0, 3, 5).unwrap();
        let x = sample_latent(&cfg, 50).unwrap();
        let h = 1e-2;
        for (k, row) in x.iter_rows().enumerate() {
            let mut u = vec![0.0; 6];
            u[k % 6] = 1.0;
            let plus: Vec<f64> = row.iter().zip(&u).map(|(a, b)| a + h * b).collect();
            let minus: Vec<f64> = row.iter().zip(&u).map(|(a, b)| a - h * b).collect();
            let (fp, f0, fm) = (f.eval(&plus), f.eval(row), f.eval(&minus));
            let second: f64 = (0..3)
                .map(|j| ((fp[j] - 2.0 * f0[j] + fm[j]) / (h * h)).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(second < 1e-8, "{second}");
        }
    }

    #[test]
    fn sampled_lipschitz_and_curvature_bounds() {
        let cfg = spec(1.0, 1.2, 12);
        let (k1, k2) = (1.5, 0.8);
        let f = make_target(&cfg, k1, k2, 4, 21).unwrap();
        let x = sample_latent(&cfg, 10_000).unwrap();
        let y = sample_latent(&cfg.with_seed(99), 10_000).unwrap();
        let mut worst: f64 = 0.0;
        for (a, b) in x.iter_rows().zip(y.iter_rows()) {
            let fa = f.eval(a);
            let fb = f.eval(b);
            let num: f64 = fa.iter().zip(&fb).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            let den: f64 = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            worst = worst.max(num / den);
        }
        assert!(worst <= k1 * (1.0 + 1e-6), "{worst}");

        let h = 1e-3;
        for (a, b) in x.iter_rows().zip(y.iter_rows()).take(2000) {
            let un: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            let u: Vec<f64> = b.iter().map(|v| v / un).collect();
            let plus: Vec<f64> = a.iter().zip(&u).map(|(p, q)| p + h * q).collect();
            let minus: Vec<f64> = a.iter().zip(&u).map(|(p, q)| p - h * q).collect();
            let (fp, f0, fm) = (f.eval(&plus), f.eval(a), f.eval(&minus));
            let c: f64 = (0..4)
                .map(|j| ((fp[j] - 2.0 * f0[j] + fm[j]) / (h * h)).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(c <= k2 * (1.0 + 1e-4), "curvature {c}");
        }
    }

    #[test]
    fn target_is_deterministic_and_validated() {
        let cfg = spec(1.0, 1.5, 5);
        assert_eq!(
            make_target(&cfg, 1.0, 0.5, 2, 4).unwrap(),
            make_target(&cfg, 1.0, 0.5, 2, 4).unwrap()
        );
        assert!(matches!(
            make_target(&cfg, 0.0, 0.5, 2, 4),
            Err(Error::Construction(_))
        ));
        assert!(make_target(&cfg, 1.0, -1.0, 2, 4).is_err());
    }

    #[test]
    fn noise_free_targets_are_exact() {
        let cfg = spec(1.0, 1.5, 6);
        let noise = NoiseConfig::new(0.0, 0.3, 2, 2).unwrap();
        let f = make_target(&cfg, 1.0, 0.4, 2, 1).unwrap();
        let map = HorizonMapping::new(1.0, 6).unwrap();
        let ds = generate_dataset(&cfg, &noise, &f, &map, 200, 3).unwrap();
        assert_eq!(ds.d_visible, 3);
        let latent = sample_latent(&cfg, 200).unwrap();
        assert_eq!(ds.inputs, latent.prefix_columns(3));
        assert_eq!(ds.targets, f.eval_table(&latent));
    }

    #[test]
    fn pure_noise_has_total_variance() {
        let cfg = spec(1.0, 1.5, 4);
        let noise = NoiseConfig::new(1.0, 0.05, 3, 2).unwrap();
        assert_relative_eq!(noise.total_variance(), 0.9, epsilon = 1e-12);
        let f = make_target(&cfg, 1.0, 0.2, 3, 2).unwrap();
        let draw = draw_samples(&cfg, &noise, &f, 100_000, 0).unwrap();
        let n = draw.latent.rows() as f64;
        let total: f64 = draw
            .noisy
            .as_slice()
            .iter()
            .zip(draw.clean.as_slice())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / n;
        assert!((total / 0.9 - 1.0).abs() < 0.05, "{total}");
    }

    #[test]
    fn linear_noise_free_dataset_is_recoverable() {
        let cfg = spec(1.0, 1.5, 5);
        let noise = NoiseConfig::new(0.0, 1.0, 1, 1).unwrap();
        let f = make_target(&cfg, 1.0, 0.0, 2, 8).unwrap();
        let map = HorizonMapping::new(1.0, 5).unwrap();
        let ds = generate_dataset(&cfg, &noise, &f, &map, 40, 5).unwrap();
        let x = DMatrix::from_row_slice(40, 5, ds.inputs.as_slice());
        let y = DMatrix::from_row_slice(40, 2, ds.targets.as_slice());
        let beta = x.clone().svd(true, true).solve(&y, 1e-14).unwrap();
        let resid = (&x * beta - &y).norm();
        assert!(resid < 1e-8, "{resid}");
    }

    #[test]
    fn dataset_csv_layout() {
        let cfg = spec(1.0, 1.5, 8);
        let noise = NoiseConfig::new(0.5, 0.1, 2, 2).unwrap();
        let f = make_target(&cfg, 1.0, 0.1, 2, 3).unwrap();
        let ds = generate_dataset_with_dims(&cfg, &noise, &f, 8, 100).unwrap();
        let mut a = Vec::new();
        ds.write_csv(&mut a).unwrap();
        let text = String::from_utf8(a.clone()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 101);
        assert_eq!(lines[0], "x_1,x_2,x_3,x_4,x_5,x_6,x_7,x_8,y_1,y_2");
        assert_eq!(lines[1].split(',').count(), 10);
        let v: f64 = lines[1].split(',').next().unwrap().parse().unwrap();
        assert_eq!(v, ds.inputs.get(0, 0));

        let again = generate_dataset_with_dims(&cfg, &noise, &f, 8, 100).unwrap();
        let mut b = Vec::new();
        again.write_csv(&mut b).unwrap();
        assert_eq!(a, b);
        assert!(generate_dataset_with_dims(&cfg, &noise, &f, 9, 10).is_err());
    }

    #[test]
    fn latent_series_blocks_are_zero_mean() {
        let cfg = spec(1.0, 1.5, 6);
        let s = series_from_latent(&cfg, 8, 5).unwrap();
        assert_eq!(s.rows(), 40);
        for block in s.as_slice().chunks(8) {
            assert!(block.iter().sum::<f64>().abs() < 1e-12);
        }
        assert!(series_from_latent(&cfg, 6, 5).is_err());
    }

    proptest! {
        #[test]
        fn eigenvalues_strictly_decrease(l0 in 0.01f64..10.0, a in 1.01f64..4.0, d in 2usize..200) {
            let cfg = SpectrumConfig::new(l0, a, d, 0).unwrap();
            let e = cfg.eigenvalues();
            prop_assert!(e.windows(2).all(|w| w[0] > w[1]));
        }

        #[test]
        fn exact_tail_is_monotone(a in 1.1f64..3.0, d in 2usize..100) {
            let cfg = SpectrumConfig::new(1.0, a, 100, 0).unwrap();
            let t = tail_variance(&cfg, d, TailMode::Exact).unwrap();
            let prev = tail_variance(&cfg, d - 1, TailMode::Exact).unwrap();
            prop_assert!(t >= 0.0 && t <= prev);
        }

        #[test]
        fn horizon_map_is_monotone_and_bounded(c in 0.01f64..5.0, cap in 1usize..200, h in 1usize..1000) {
            let map = HorizonMapping::new(c, cap).unwrap();
            let d = d_of_horizon(&map, h);
            prop_assert!((1..=cap).contains(&d));
            prop_assert!(d_of_horizon(&map, h + 1) >= d);
        }

        #[test]
        fn horizon_for_dim_reaches_dim(c in 0.05f64..4.0, d in 1usize..64) {
            let map = HorizonMapping::new(c, 64).unwrap();
            prop_assert!(d_of_horizon(&map, map.horizon_for_dim(d)) >= d);
        }
    }
}
