//! Optimal intrinsic dimension and look-back horizon.
//!
//! Three asymptotic closed forms cover a small model on plentiful data, a
//! large model on plentiful data and scarce data. [`optimal_d_numeric`]
//! scans the actual loss and serves as a cross-check for all three.

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intrinsic_model::HorizonMapping;
use crate::loss_model::{loss_for_regime, LossParams, NoiseTerm, RegimeKind};

const INV_E: f64 = 0.367_879_441_171_442_33;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    Numeric,
}

/// Closed form used for the scarce-data optimum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScarceForm {
    /// `β C^{1/(α−1)} ln D / ln ln D`, `β` the positive root of the
    /// stationarity quadratic.
    #[default]
    Quadratic,
    /// `2/(α+1) · ln D / ln ln D`
    LeadingOrder,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OptimalResult {
    /// Real-valued optimum.
    pub d_star: f64,
    /// Whichever of `floor(d_star)`, `ceil(d_star)` has the lower loss,
    /// clamped to `[1, d_total]`.
    pub d_star_int: usize,
    pub h_star: Option<usize>,
    /// `d_star` exceeded the available dimension.
    pub saturated: bool,
    pub regime_used: RegimeKind,
    pub method: Method,
    /// Argument passed to Lambert W (small-model form only).
    pub lambert_argument: Option<f64>,
    /// `W(lambert_argument)`.
    pub lambert_value: Option<f64>,
    /// Cruder companion estimate: `W(x) ≈ x` for the small model, the
    /// other closed form for scarce data.
    pub leading_order: Option<f64>,
}

impl OptimalResult {
    fn closed(d_star: f64, d_total: usize, regime: RegimeKind, loss: impl Fn(f64) -> Result<f64>) -> Result<Self> {
        Ok(OptimalResult {
            d_star,
            d_star_int: round_by_loss(d_star, d_total, loss)?,
            h_star: None,
            saturated: d_star > d_total as f64,
            regime_used: regime,
            method: Method::ClosedForm,
            lambert_argument: None,
            lambert_value: None,
            leading_order: None,
        })
    }

    /// Fills in `h_star` for the given mapping.
    pub fn with_horizon(mut self, map: &HorizonMapping) -> Self {
        let h = optimal_horizon(&self, map);
        self.h_star = Some(h.frames);
        self.saturated |= h.saturated;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct HorizonChoice {
    pub frames: usize,
    pub saturated: bool,
}

fn round_by_loss(d_star: f64, d_total: usize, loss: impl Fn(f64) -> Result<f64>) -> Result<usize> {
    if d_total == 0 {
        return Err(Error::argument("d_total must be at least 1"));
    }
    if !d_star.is_finite() {
        return Err(Error::Numerical(format!("non-finite optimum {d_star}")));
    }
    let cap = d_total as f64;
    let lo = d_star.floor().clamp(1.0, cap);
    let hi = d_star.ceil().clamp(1.0, cap);
    if lo == hi {
        return Ok(lo as usize);
    }
    Ok(if loss(hi)? < loss(lo)? { hi as usize } else { lo as usize })
}

/// Principal branch of the Lambert W function.
pub fn lambert_w(x: f64) -> Result<f64> {
    if x.is_nan() || x < -INV_E {
        return Err(Error::domain(format!("lambert_w undefined for x = {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(f64::INFINITY);
    }
    let shift = 2.0 * (std::f64::consts::E * x + 1.0);
    if shift <= 0.0 {
        return Ok(-1.0);
    }
    if x > 1e100 {
        return Ok(lambert_w_log(x.ln()));
    }
    let mut w = if x < -0.25 {
        let p = shift.sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else if x > std::f64::consts::E {
        let l = x.ln();
        l - l.ln()
    } else {
        x.ln_1p()
    };
    for _ in 0..64 {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        if wp1.abs() < f64::EPSILON {
            break;
        }
        let step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1));
        w -= step;
        if step.abs() <= 4.0 * f64::EPSILON * (1.0 + w.abs()) {
            break;
        }
    }
    Ok(w)
}

/// Solves `w + ln w = ln_x` for huge arguments.
fn lambert_w_log(ln_x: f64) -> f64 {
    let mut w = ln_x - ln_x.ln();
    for _ in 0..32 {
        let step = (w + w.ln() - ln_x) / (1.0 + 1.0 / w);
        w -= step;
        if step.abs() <= 4.0 * f64::EPSILON * w {
            break;
        }
    }
    w
}

fn require_alpha(p: &LossParams) -> Result<()> {
    p.validate()?;
    if p.alpha_z <= 1.0 {
        return Err(Error::domain(format!(
            "optimal dimension needs alpha_z > 1, got {}",
            p.alpha_z
        )));
    }
    Ok(())
}

/// Optimum when the partition is too coarse for data size to matter.
///
/// Balances the quantization error `K2² d² N^{−4/d} / 4π²` against the
/// Bayesian tail, keeping the dominant `ln N` part of the quantization
/// derivative. Writing `u = 4 ln N / (α d)` turns the stationarity
/// condition into `u e^u = x` with `x = 4 ln^{1+1/α} N / (α C0^{1/α})`, so
/// `d* = 4 ln N / (α W(x))`.
pub fn optimal_d_small_model(p: &LossParams, n_regions: f64, d_total: usize) -> Result<OptimalResult> {
    require_alpha(p)?;
    if !(n_regions.is_finite() && n_regions >= 2.0) {
        return Err(Error::range("N", n_regions, 2.0, f64::INFINITY));
    }
    if p.k2 == 0.0 {
        return Err(Error::domain("small-model optimum needs k2 > 0"));
    }
    if p.eta >= 1.0 {
        return Err(Error::domain("small-model optimum needs eta < 1"));
    }
    let alpha = p.alpha_z;
    let c0 = p.k1 * p.k1 * std::f64::consts::PI.powi(2) * (1.0 - p.eta) * p.lambda0 / (p.k2 * p.k2);
    let ln_n = n_regions.ln();
    let arg = 4.0 / (alpha * c0.powf(1.0 / alpha)) * ln_n.powf(1.0 + 1.0 / alpha);
    let w = lambert_w(arg)?;
    let d_star = 4.0 * ln_n / (alpha * w);
    let loss = |d: f64| {
        loss_for_regime(p, d, n_regions, f64::INFINITY, RegimeKind::Dense, NoiseTerm::Full).map(|l| l.total)
    };
    let mut out = OptimalResult::closed(d_star, d_total, RegimeKind::Dense, loss)?;
    out.lambert_argument = Some(arg);
    out.lambert_value = Some(w);
    out.leading_order = Some(arg);
    Ok(out)
}

/// Optimum when noise amplification dominates:
/// `d* = (K1² (1−η) λ0 D / (N · noise_total))^{1/α}`.
pub fn optimal_d_large_model(
    p: &LossParams,
    n_regions: f64,
    d_samples: f64,
    d_total: usize,
) -> Result<OptimalResult> {
    require_alpha(p)?;
    if p.noise_total == 0.0 {
        return Err(Error::domain("noise_total must be positive for the large-model optimum"));
    }
    if !(n_regions.is_finite() && n_regions >= 1.0) {
        return Err(Error::range("N", n_regions, 1.0, f64::INFINITY));
    }
    if !(d_samples.is_finite() && d_samples >= 1.0) {
        return Err(Error::range("D", d_samples, 1.0, f64::INFINITY));
    }
    let ratio = p.k1 * p.k1 * (1.0 - p.eta) * p.lambda0 * d_samples / (n_regions * p.noise_total);
    let d_star = ratio.powf(1.0 / p.alpha_z);
    let loss = |d: f64| {
        loss_for_regime(p, d, n_regions, d_samples, RegimeKind::Dense, NoiseTerm::Full).map(|l| l.total)
    };
    OptimalResult::closed(d_star, d_total, RegimeKind::Dense, loss)
}

/// Optimum under nearest-neighbour risk, proportional to `ln D / ln ln D`.
pub fn optimal_d_scarce(p: &LossParams, d_samples: f64, form: ScarceForm, d_total: usize) -> Result<OptimalResult> {
    require_alpha(p)?;
    if !(d_samples.is_finite() && d_samples >= 16.0) {
        return Err(Error::domain(format!(
            "scarce-data optimum needs 16 <= D < inf, got {d_samples}"
        )));
    }
    if p.eta >= 1.0 {
        return Err(Error::domain("scarce-data optimum needs eta < 1"));
    }
    let am1 = p.alpha_z - 1.0;
    let ln_d = d_samples.ln();
    let shape = ln_d / ln_d.ln();
    let c = (4.0 * std::f64::consts::PI * (1.0 - p.eta) * p.lambda0).powf(1.0 / am1);
    let beta = ((1.0 + 8.0 * am1 / c).sqrt() - 1.0) / (2.0 * am1);
    let quadratic = beta * c * shape;
    let leading = 2.0 / (p.alpha_z + 1.0) * shape;
    let (d_star, other) = match form {
        ScarceForm::Quadratic => (quadratic, leading),
        ScarceForm::LeadingOrder => (leading, quadratic),
    };
    let loss = |d: f64| {
        loss_for_regime(p, d, 1.0, d_samples, RegimeKind::Scarce, NoiseTerm::Full).map(|l| l.total)
    };
    let mut out = OptimalResult::closed(d_star, d_total, RegimeKind::Scarce, loss)?;
    out.leading_order = Some(other);
    Ok(out)
}

/// Exhaustive scan of the loss over `d_range`; ties go to the smaller `d`.
///
/// Pass `d_samples = inf` for the small-model setting where data size drops
/// out.
pub fn optimal_d_numeric(
    p: &LossParams,
    n_regions: f64,
    d_samples: f64,
    regime: RegimeKind,
    d_range: RangeInclusive<usize>,
    term: NoiseTerm,
) -> Result<OptimalResult> {
    if d_range.is_empty() {
        return Err(Error::argument(format!(
            "empty dimension range {}..={}",
            d_range.start(),
            d_range.end()
        )));
    }
    if *d_range.start() == 0 {
        return Err(Error::range("d_range start", 0, 1, *d_range.end()));
    }
    let mut best = (*d_range.start(), f64::INFINITY);
    for d in d_range.clone() {
        let l = loss_for_regime(p, d as f64, n_regions, d_samples, regime, term)?.total;
        if l < best.1 {
            best = (d, l);
        }
    }
    Ok(OptimalResult {
        d_star: best.0 as f64,
        d_star_int: best.0,
        h_star: None,
        saturated: false,
        regime_used: regime,
        method: Method::Numeric,
        lambert_argument: None,
        lambert_value: None,
        leading_order: None,
    })
}

/// Fewest frames whose intrinsic dimension reaches `d_star_int`, capped at
/// the mapping's total dimension.
pub fn optimal_horizon(result: &OptimalResult, map: &HorizonMapping) -> HorizonChoice {
    if result.saturated || result.d_star_int > map.d_total {
        HorizonChoice {
            frames: map.horizon_for_dim(map.d_total),
            saturated: true,
        }
    } else {
        HorizonChoice {
            frames: map.horizon_for_dim(result.d_star_int),
            saturated: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Bisection on `w e^w = x`, independent of the Halley path.
    fn bisect_w(x: f64) -> f64 {
        let (mut lo, mut hi) = (-1.0, x.max(1.0));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * mid.exp() < x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn residual_ok(x: f64) -> bool {
        let w = lambert_w(x).unwrap();
        (w * w.exp() - x).abs() <= 1e-12f64.max(1e-12 * x.abs())
    }

    #[test]
    fn lambert_examples() {
        assert_eq!(lambert_w(0.0).unwrap(), 0.0);
        assert_relative_eq!(lambert_w(std::f64::consts::E).unwrap(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(lambert_w(1.0).unwrap(), bisect_w(1.0), epsilon = 1e-14);
        assert_relative_eq!(lambert_w(1.0).unwrap(), 0.567_143_290_409_783_8, epsilon = 1e-15);
        assert_relative_eq!(lambert_w(16.0).unwrap(), bisect_w(16.0), epsilon = 1e-13);
        assert_relative_eq!(lambert_w(-INV_E).unwrap(), -1.0, epsilon = 1e-7);
        assert!(matches!(lambert_w(-0.5), Err(Error::Domain(_))));
        assert!(lambert_w(f64::NAN).is_err());
    }

    #[test]
    fn lambert_extremes() {
        for &x in &[-INV_E + 1e-15, -INV_E + 1e-6, -0.3, -0.2, -1e-300, 1e-300, 1e-10, 2.0, 1e6, 1e15, 1e200, f64::MAX] {
            let w = lambert_w(x).unwrap();
            assert!(w.is_finite(), "{x}");
            if x.abs() < 1e100 {
                assert!(residual_ok(x), "x = {x}, w = {w}");
            } else {
                assert!((w + w.ln() - x.ln()).abs() < 1e-12 * x.ln());
            }
        }
    }

    #[test]
    fn small_model_example() {
        // C0 = 1: k1 = 1/pi, k2 = 1, lambda0 = 1, eta = 0
        let p = LossParams::new(1.0 / std::f64::consts::PI, 1.0, 0.0, 1.0, 2.0, 0.0).unwrap();
        let n = 4f64.exp();
        let r = optimal_d_small_model(&p, n, 1000).unwrap();
        assert_relative_eq!(r.lambert_argument.unwrap(), 16.0, max_relative = 1e-14);
        assert_relative_eq!(r.leading_order.unwrap(), 16.0, max_relative = 1e-14);
        let w = bisect_w(16.0);
        assert_relative_eq!(r.lambert_value.unwrap(), w, epsilon = 1e-12);
        assert!((w - 2.053).abs() < 5e-4);
        assert_relative_eq!(r.d_star, 16.0 / (2.0 * w), max_relative = 1e-12);
        assert_eq!(r.method, Method::ClosedForm);
    }

    #[test]
    fn small_model_errors() {
        let p = LossParams::new(1.0, 0.0, 0.0, 1.0, 2.0, 0.0).unwrap();
        assert!(matches!(optimal_d_small_model(&p, 100.0, 64), Err(Error::Domain(_))));
        let p = LossParams::new(1.0, 1.0, 0.0, 1.0, 2.0, 0.0).unwrap();
        assert!(optimal_d_small_model(&p, 1.5, 64).is_err());
    }

    /// The stationarity condition the small-model form solves.
    #[test]
    fn small_model_satisfies_stationarity() {
        let p = LossParams::new(1.3, 0.4, 0.2, 1.5, 1.7, 0.0).unwrap();
        let n = 1e9;
        let r = optimal_d_small_model(&p, n, 10_000).unwrap();
        let c0 = p.k1.powi(2) * std::f64::consts::PI.powi(2) * (1.0 - p.eta) * p.lambda0 / p.k2.powi(2);
        let d = r.d_star;
        let lhs = d.powf(p.alpha_z);
        let rhs = c0 * n.powf(4.0 / d) / n.ln();
        assert_relative_eq!(lhs, rhs, max_relative = 1e-10);
    }

    #[test]
    fn large_model_examples() {
        let p = LossParams::new(1.0, 0.0, 0.0, 1.0, 2.0, 1.0).unwrap();
        let r = optimal_d_large_model(&p, 1.0, 1024.0, 100).unwrap();
        assert_relative_eq!(r.d_star, 32.0, max_relative = 1e-14);
        assert_eq!(r.d_star_int, 32);
        let r4 = optimal_d_large_model(&p, 1.0, 4096.0, 100).unwrap();
        assert_relative_eq!(r4.d_star, 64.0, max_relative = 1e-14);
        let rn = optimal_d_large_model(&p, 4.0, 1024.0, 100).unwrap();
        assert_relative_eq!(rn.d_star, 16.0, max_relative = 1e-14);
        let quiet = LossParams::new(1.0, 0.0, 0.0, 1.0, 2.0, 0.0).unwrap();
        assert!(matches!(
            optimal_d_large_model(&quiet, 1.0, 1024.0, 100),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn large_model_matches_scan() {
        let p = LossParams::new(1.0, 0.0, 0.0, 1.0, 2.0, 1.0).unwrap();
        let scan = optimal_d_numeric(&p, 1.0, 1024.0, RegimeKind::Dense, 1..=100, NoiseTerm::Full).unwrap();
        assert!((scan.d_star_int as i64 - 32).abs() <= 1, "{}", scan.d_star_int);
    }

    #[test]
    fn large_model_is_a_power_law() {
        let p = LossParams::new(1.0, 0.0, 0.1, 2.0, 1.7, 0.3).unwrap();
        let pts: Vec<(f64, f64)> = [1e2, 1e3, 1e4, 1e5, 1e6]
            .iter()
            .map(|&ds| {
                let r = optimal_d_large_model(&p, 10.0, ds, usize::MAX).unwrap();
                ((ds / 10.0).ln(), r.d_star.ln())
            })
            .collect();
        for w in pts.windows(2) {
            let slope = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
            assert_relative_eq!(slope, 1.0 / 1.7, max_relative = 1e-12);
        }
    }

    #[test]
    fn scarce_plug_in() {
        let p = LossParams::new(1.0, 0.0, 0.0, 1.0, 2.0, 0.0).unwrap();
        let r = optimal_d_scarce(&p, 1e6, ScarceForm::Quadratic, 1000).unwrap();
        // plug-in: C = 4 pi, beta = (sqrt(1 + 8/C) - 1)/2
        let c = 4.0 * std::f64::consts::PI;
        let beta = ((1.0 + 8.0 / c).sqrt() - 1.0) / 2.0;
        let ln_d = 1e6f64.ln();
        assert_relative_eq!(r.d_star, beta * c * ln_d / ln_d.ln(), max_relative = 1e-13);
        assert!((r.d_star - 9.2335).abs() < 1e-3, "{}", r.d_star);
        let scan = optimal_d_numeric(&p, 1.0, 1e6, RegimeKind::Scarce, 1..=200, NoiseTerm::Full).unwrap();
        assert_eq!(scan.d_star_int, 9);
        assert_eq!(r.d_star_int, 9);
        assert_relative_eq!(r.leading_order.unwrap(), 2.0 / 3.0 * ln_d / ln_d.ln(), max_relative = 1e-14);
        let lo = optimal_d_scarce(&p, 1e6, ScarceForm::LeadingOrder, 1000).unwrap();
        assert_relative_eq!(lo.d_star, r.leading_order.unwrap());
        assert!(optimal_d_scarce(&p, 10.0, ScarceForm::Quadratic, 1000).is_err());
    }

    #[test]
    fn scarce_sublinear_and_alpha_trend() {
        let p = LossParams::new(1.0, 0.0, 0.0, 1.0, 2.0, 0.0).unwrap();
        let a = optimal_d_scarce(&p, 1e4, ScarceForm::Quadratic, 1000).unwrap().d_star;
        let b = optimal_d_scarce(&p, 1e8, ScarceForm::Quadratic, 1000).unwrap().d_star;
        assert!(b > a && b / a < 2.0, "{a} {b}");
        let ds: Vec<f64> = [1.5, 2.0, 2.5]
            .iter()
            .map(|&alpha| {
                let p = LossParams::new(1.0, 0.0, 0.0, 1.0, alpha, 0.0).unwrap();
                optimal_d_scarce(&p, 1e6, ScarceForm::Quadratic, 1000).unwrap().d_star
            })
            .collect();
        assert!(ds[0] > ds[1] && ds[1] > ds[2], "{ds:?}");
    }

    #[test]
    fn numeric_scan_edges() {
        let p = LossParams::new(1.0, 0.0, 0.0, 1.0, 2.0, 1.0).unwrap();
        let r = optimal_d_numeric(&p, 1.0, 1e3, RegimeKind::Dense, 7..=7, NoiseTerm::Full).unwrap();
        assert_eq!(r.d_star_int, 7);
        #[allow(clippy::reversed_empty_ranges)]
        let empty = optimal_d_numeric(&p, 1.0, 1e3, RegimeKind::Dense, 5..=4, NoiseTerm::Full);
        assert!(matches!(empty, Err(Error::Argument(_))));
        // zero curvature, tiny data: amplified noise dominates from d = 1
        let p = LossParams::new(0.1, 0.0, 0.0, 1.0, 2.0, 1.0).unwrap();
        let r = optimal_d_numeric(&p, 50.0, 100.0, RegimeKind::Dense, 1..=64, NoiseTerm::Full).unwrap();
        assert_eq!(r.d_star_int, 1);
    }

    #[test]
    fn horizon_examples() {
        let p = LossParams::new(1.0, 0.0, 0.0, 1.0, 2.0, 1.0).unwrap();
        let r = optimal_d_large_model(&p, 1.0, 1024.0, 100).unwrap();
        let id = HorizonMapping::new(1.0, 100).unwrap();
        assert_eq!(optimal_horizon(&r, &id), HorizonChoice { frames: 32, saturated: false });
        let half = HorizonMapping::new(0.5, 100).unwrap();
        assert_eq!(optimal_horizon(&r, &half).frames, 64);
        let capped = optimal_d_large_model(&p, 1.0, 1024.0, 20).unwrap();
        assert!(capped.saturated);
        assert_eq!(capped.d_star_int, 20);
        let h = optimal_horizon(&capped, &HorizonMapping::new(1.0, 20).unwrap());
        assert_eq!(h, HorizonChoice { frames: 20, saturated: true });
        let with = r.with_horizon(&half);
        assert_eq!(with.h_star, Some(64));
    }

    #[test]
    fn rounding_picks_lower_loss_neighbour() {
        let p = LossParams::new(1.0, 0.5, 0.0, 1.0, 1.5, 0.3).unwrap();
        for &ds in &[1e3, 1e4, 1e5] {
            let r = optimal_d_large_model(&p, 8.0, ds, 10_000).unwrap();
            let l = |d: usize| loss_for_regime(&p, d as f64, 8.0, ds, RegimeKind::Dense, NoiseTerm::Full).unwrap().total;
            let (f, c) = (r.d_star.floor() as usize, r.d_star.ceil() as usize);
            assert!(r.d_star_int == f || r.d_star_int == c);
            assert!(l(r.d_star_int) <= l(f).min(l(c)));
        }
    }

    proptest! {
        #[test]
        fn lambert_round_trip(u in -6.0f64..6.0) {
            // log-uniform over x + 1/e in [1e-6, 1e6 + 1/e]
            let x = 10f64.powf(u) - INV_E;
            prop_assert!(residual_ok(x));
        }

        #[test]
        fn large_model_monotone(ds in 10.0f64..1e8, n in 1.0f64..1e3) {
            let p = LossParams::new(1.0, 0.1, 0.0, 1.0, 1.6, 0.5).unwrap();
            let base = optimal_d_large_model(&p, n, ds, usize::MAX).unwrap().d_star;
            prop_assert!(optimal_d_large_model(&p, n, ds * 2.0, usize::MAX).unwrap().d_star > base);
            prop_assert!(optimal_d_large_model(&p, n * 2.0, ds, usize::MAX).unwrap().d_star < base);
        }

        #[test]
        fn scarce_increasing_in_d(e in 3.0f64..30.0, alpha in 1.2f64..3.0) {
            let p = LossParams::new(1.0, 0.0, 0.0, 1.0, alpha, 0.0).unwrap();
            let a = optimal_d_scarce(&p, e.exp(), ScarceForm::Quadratic, usize::MAX).unwrap().d_star;
            let b = optimal_d_scarce(&p, (e + 1.0).exp(), ScarceForm::Quadratic, usize::MAX).unwrap().d_star;
            prop_assert!(b > a);
        }

        #[test]
        fn small_model_increasing_in_n(ln_n in 5.0f64..200.0) {
            let p = LossParams::new(1.0, 1.0, 0.0, 1.0, 2.0, 0.0).unwrap();
            let a = optimal_d_small_model(&p, ln_n.exp(), usize::MAX).unwrap();
            prop_assume!(a.lambert_value.unwrap() > 1.0 / p.alpha_z);
            let b = optimal_d_small_model(&p, (ln_n * 1.1).exp(), usize::MAX).unwrap();
            prop_assert!(b.d_star > a.d_star);
        }
    }
}
