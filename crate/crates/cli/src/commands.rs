use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use horizon_law::curve_fit::{compare_models, AlphaBounds, Comparison, ScalingFit};
use horizon_law::estimator::{
    default_fit_range, fit_zipf, load_csv, make_windows, pca_spectrum, write_spectrum_csv, ChannelMode, LoadOptions,
    MissingPolicy,
};
use horizon_law::horizon_solver::{
    optimal_d_large_model, optimal_d_numeric, optimal_d_scarce, optimal_d_small_model, Method, OptimalResult,
    ScarceForm,
};
use horizon_law::intrinsic_model::{
    d_of_horizon, generate_dataset, generate_dataset_with_dims, make_target, HorizonMapping,
};
use horizon_law::loss_model::{
    total_loss_with, LossOptions, LossParams, NoiseTerm, RegimeChoice, RegimeKind,
};
use horizon_law::mc_oracle::{default_sweep, run_experiment, ExperimentKind};
use horizon_law::seed::derive_seed;
use serde::Serialize;

use crate::config::RunConfig;
use crate::failure::Failure;
use crate::{
    ChannelArg, Cli, FitArgs, Format, GenerateArgs, MethodArg, OptimalArgs, PointArgs, PredictArgs, RegimeArg,
    ScarceFormArg, SimulateArgs, SpectrumArgs,
};

const DEFAULT_N_REGIONS: f64 = 16.0;
const DEFAULT_D_SAMPLES: f64 = 16384.0;

pub struct Context {
    pub cfg: RunConfig,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
}

impl Context {
    pub fn new(cli: &Cli, cfg: RunConfig) -> Self {
        let output = cfg.output.clone().unwrap_or_default();
        Context {
            seed: cli.seed.or(cfg.seed),
            out: cli.out.clone().or(output.path),
            format: cli.format.or(output.format),
            cfg,
        }
    }

    fn format_or(&self, default: Format) -> Format {
        self.format.unwrap_or(default)
    }

    fn sink(&self) -> Result<Box<dyn Write>, Failure> {
        open_sink(self.out.as_deref())
    }
}

fn open_sink(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    match path {
        Some(p) => {
            let f = File::create(p).map_err(|e| Failure::io(format!("cannot write {}: {e}", p.display())))?;
            Ok(Box::new(BufWriter::new(f)))
        }
        None => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
    }
}

fn write_json<T: Serialize>(mut w: impl Write, value: &T) -> Result<(), Failure> {
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Failure::io(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn regime_name(kind: RegimeKind) -> &'static str {
    match kind {
        RegimeKind::Dense => "dense",
        RegimeKind::Scarce => "scarce",
    }
}

/// Operating point after merging config and flags.
struct Point {
    params: LossParams,
    mapping: HorizonMapping,
    n_regions: f64,
    d_samples: f64,
    regime: RegimeChoice,
    options: LossOptions,
}

fn resolve_point(ctx: &Context, args: &PointArgs) -> Result<Point, Failure> {
    let q = ctx.cfg.query();
    let regime = match args.regime {
        Some(RegimeArg::Auto) => RegimeChoice::Auto,
        Some(RegimeArg::Dense) => RegimeChoice::Dense,
        Some(RegimeArg::Scarce) => RegimeChoice::Scarce,
        None => q.regime.unwrap_or(RegimeChoice::Auto),
    };
    let noise_term = if args.noise_only {
        NoiseTerm::NoiseOnly
    } else {
        q.noise_term.unwrap_or_default()
    };
    let params = ctx.cfg.loss();
    params.validate()?;
    let mapping = ctx.cfg.mapping();
    mapping.validate()?;
    Ok(Point {
        params,
        mapping,
        n_regions: args.n_regions.or(q.n_regions).unwrap_or(DEFAULT_N_REGIONS),
        d_samples: args.d_samples.or(q.d_samples).unwrap_or(DEFAULT_D_SAMPLES),
        regime,
        options: LossOptions {
            xi_threshold: args.xi_threshold.unwrap_or_else(|| ctx.cfg.xi_threshold()),
            noise_term,
        },
    })
}

#[derive(Serialize)]
struct LossReport {
    d: usize,
    horizon: Option<usize>,
    n_regions: f64,
    d_samples: f64,
    regime: &'static str,
    xi: Option<f64>,
    bayesian: f64,
    approximation: f64,
    total: f64,
}

fn loss_at(pt: &Point, d: usize, horizon: Option<usize>) -> Result<LossReport, Failure> {
    let b = total_loss_with(
        &pt.params,
        d,
        pt.n_regions,
        pt.d_samples,
        pt.regime,
        horizon,
        &pt.options,
    )?;
    Ok(LossReport {
        d,
        horizon,
        n_regions: pt.n_regions,
        d_samples: pt.d_samples,
        regime: regime_name(b.regime),
        xi: b.xi,
        bayesian: b.bayesian,
        approximation: b.approximation,
        total: b.total,
    })
}

fn parse_sweep(text: &str) -> Result<(char, usize, usize), Failure> {
    let bad = || Failure::validation(format!("--sweep expects d=A..B or H=A..B, got {text:?}"));
    let (var, range) = text.split_once('=').ok_or_else(bad)?;
    let var = match var.trim() {
        "d" => 'd',
        "H" => 'H',
        _ => return Err(bad()),
    };
    let (lo, hi) = range.split_once("..").ok_or_else(bad)?;
    let lo: usize = lo.trim().parse().map_err(|_| bad())?;
    let hi: usize = hi.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
    if lo == 0 || hi < lo {
        return Err(Failure::validation(format!("sweep range {lo}..{hi} must be non-empty and start at 1 or more")));
    }
    Ok((var, lo, hi))
}

pub fn predict_loss(ctx: &Context, args: &PredictArgs) -> Result<(), Failure> {
    let pt = resolve_point(ctx, &args.point)?;
    let q = ctx.cfg.query();
    if let Some(spec) = &args.sweep {
        let (var, lo, hi) = parse_sweep(spec)?;
        let rows = (lo..=hi)
            .map(|v| match var {
                'd' => loss_at(&pt, v, Some(pt.mapping.horizon_for_dim(v))),
                _ => loss_at(&pt, d_of_horizon(&pt.mapping, v), Some(v)),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut w = ctx.sink()?;
        return match ctx.format_or(Format::Csv) {
            Format::Json => write_json(w, &rows),
            Format::Csv => {
                writeln!(w, "d,horizon,regime,xi,bayesian,approximation,total")?;
                for r in &rows {
                    writeln!(
                        w,
                        "{},{},{},{},{},{},{}",
                        r.d,
                        r.horizon.map(|h| h.to_string()).unwrap_or_default(),
                        r.regime,
                        opt(r.xi),
                        r.bayesian,
                        r.approximation,
                        r.total
                    )?;
                }
                w.flush()?;
                Ok(())
            }
        };
    }
    let horizon = args.horizon.or(q.horizon);
    let d = match (args.d.or(q.d), horizon) {
        (Some(d), _) => d,
        (None, Some(h)) => d_of_horizon(&pt.mapping, h),
        (None, None) => return Err(Failure::validation("missing field: give d or horizon")),
    };
    if pt.regime == RegimeChoice::Auto && horizon.is_none() {
        return Err(Failure::validation(
            "missing field: horizon (regime=auto classifies by D/(N*H))",
        ));
    }
    let report = loss_at(&pt, d, horizon)?;
    let mut w = ctx.sink()?;
    match ctx.format_or(Format::Json) {
        Format::Json => write_json(w, &report),
        Format::Csv => {
            writeln!(w, "d,horizon,regime,xi,bayesian,approximation,total")?;
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                report.d,
                report.horizon.map(|h| h.to_string()).unwrap_or_default(),
                report.regime,
                opt(report.xi),
                report.bayesian,
                report.approximation,
                report.total
            )?;
            w.flush()?;
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct HorizonRow {
    method: MethodArg,
    /// The exhaustive scan that the closed forms are checked against.
    oracle: bool,
    d_star: Option<f64>,
    d_star_int: Option<usize>,
    h_star: Option<usize>,
    saturated: Option<bool>,
    regime: Option<&'static str>,
    lambert_argument: Option<f64>,
    lambert_value: Option<f64>,
    leading_order: Option<f64>,
    error: Option<String>,
}

impl HorizonRow {
    fn from_result(method: MethodArg, r: OptimalResult) -> Self {
        HorizonRow {
            method,
            oracle: r.method == Method::Numeric,
            d_star: Some(r.d_star),
            d_star_int: Some(r.d_star_int),
            h_star: r.h_star,
            saturated: Some(r.saturated),
            regime: Some(regime_name(r.regime_used)),
            lambert_argument: r.lambert_argument,
            lambert_value: r.lambert_value,
            leading_order: r.leading_order,
            error: None,
        }
    }

    fn failed(method: MethodArg, message: String) -> Self {
        HorizonRow {
            method,
            oracle: method == MethodArg::Numeric,
            d_star: None,
            d_star_int: None,
            h_star: None,
            saturated: None,
            regime: None,
            lambert_argument: None,
            lambert_value: None,
            leading_order: None,
            error: Some(message),
        }
    }
}

#[derive(Serialize)]
struct HorizonTable {
    n_regions: f64,
    d_samples: f64,
    d_total: usize,
    rows: Vec<HorizonRow>,
}

/// Exhaustive scan; `auto` lets each `d` pick its regime from its own horizon.
fn numeric_optimum(pt: &Point, d_total: usize) -> Result<OptimalResult, Failure> {
    let kind = match pt.regime {
        RegimeChoice::Dense => Some(RegimeKind::Dense),
        RegimeChoice::Scarce => Some(RegimeKind::Scarce),
        RegimeChoice::Auto => None,
    };
    if let Some(kind) = kind {
        let r = optimal_d_numeric(&pt.params, pt.n_regions, pt.d_samples, kind, 1..=d_total, pt.options.noise_term)?;
        return Ok(r.with_horizon(&pt.mapping));
    }
    let mut best: Option<(usize, f64, RegimeKind)> = None;
    for d in 1..=d_total {
        let h = pt.mapping.horizon_for_dim(d);
        let l = total_loss_with(&pt.params, d, pt.n_regions, pt.d_samples, RegimeChoice::Auto, Some(h), &pt.options)?;
        if best.is_none_or(|b| l.total < b.1) {
            best = Some((d, l.total, l.regime));
        }
    }
    let (d, _, regime) = best.expect("non-empty range");
    let r = OptimalResult {
        d_star: d as f64,
        d_star_int: d,
        h_star: None,
        saturated: false,
        regime_used: regime,
        method: Method::Numeric,
        lambert_argument: None,
        lambert_value: None,
        leading_order: None,
    };
    Ok(r.with_horizon(&pt.mapping))
}

fn solve(pt: &Point, method: MethodArg, form: ScarceForm, d_total: usize) -> Result<OptimalResult, Failure> {
    let map = &pt.mapping;
    let r = match method {
        MethodArg::SmallModel => optimal_d_small_model(&pt.params, pt.n_regions, d_total)?.with_horizon(map),
        MethodArg::LargeModel => {
            optimal_d_large_model(&pt.params, pt.n_regions, pt.d_samples, d_total)?.with_horizon(map)
        }
        MethodArg::Scarce => optimal_d_scarce(&pt.params, pt.d_samples, form, d_total)?.with_horizon(map),
        MethodArg::Numeric => numeric_optimum(pt, d_total)?,
        MethodArg::All => unreachable!("expanded by the caller"),
    };
    Ok(r)
}

pub fn optimal_horizon(ctx: &Context, args: &OptimalArgs) -> Result<(), Failure> {
    let pt = resolve_point(ctx, &args.point)?;
    let form = match args.scarce_form {
        ScarceFormArg::Quadratic => ScarceForm::Quadratic,
        ScarceFormArg::LeadingOrder => ScarceForm::LeadingOrder,
    };
    let d_total = pt.mapping.d_total;
    let rows = if args.method == MethodArg::All {
        [MethodArg::SmallModel, MethodArg::LargeModel, MethodArg::Scarce, MethodArg::Numeric]
            .into_iter()
            .map(|m| match solve(&pt, m, form, d_total) {
                Ok(r) => HorizonRow::from_result(m, r),
                Err(f) => HorizonRow::failed(m, f.message),
            })
            .collect()
    } else {
        vec![HorizonRow::from_result(args.method, solve(&pt, args.method, form, d_total)?)]
    };
    let table = HorizonTable {
        n_regions: pt.n_regions,
        d_samples: pt.d_samples,
        d_total,
        rows,
    };
    let mut w = ctx.sink()?;
    match ctx.format_or(Format::Json) {
        Format::Json => write_json(w, &table),
        Format::Csv => {
            writeln!(w, "method,oracle,d_star,d_star_int,h_star,saturated,regime,error")?;
            for r in &table.rows {
                let method = serde_json::to_value(r.method).map_err(|e| Failure::io(e.to_string()))?;
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{}",
                    method.as_str().unwrap_or_default(),
                    r.oracle,
                    opt(r.d_star),
                    r.d_star_int.map(|v| v.to_string()).unwrap_or_default(),
                    r.h_star.map(|v| v.to_string()).unwrap_or_default(),
                    r.saturated.map(|v| v.to_string()).unwrap_or_default(),
                    r.regime.unwrap_or_default(),
                    r.error.as_deref().unwrap_or_default().replace(',', ";")
                )?;
            }
            w.flush()?;
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct SpectrumReport {
    source: String,
    window_len: usize,
    stride: usize,
    windows: usize,
    eigenvalue_count: usize,
    trace: f64,
    fit_range: (usize, usize),
    lambda0: f64,
    alpha_z: f64,
    r_squared: Option<f64>,
    slope_stderr: f64,
    flat: bool,
    interpolated_cells: usize,
}

fn parse_range(text: &str) -> Result<(usize, usize), Failure> {
    let bad = || Failure::validation(format!("--fit-range expects lo,hi, got {text:?}"));
    let (lo, hi) = text.split_once(',').ok_or_else(bad)?;
    Ok((lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?))
}

pub fn spectrum(ctx: &Context, args: &SpectrumArgs) -> Result<(), Failure> {
    let est = ctx.cfg.estimation.clone().unwrap_or_default();
    let window_len = args
        .window_len
        .or(est.window_len)
        .ok_or_else(|| Failure::validation("missing field: window_len (--window-len)"))?;
    let stride = args.stride.or(est.stride).unwrap_or(1);
    let opts = LoadOptions {
        missing: if args.interpolate {
            MissingPolicy::Interpolate
        } else {
            MissingPolicy::Reject
        },
        ..LoadOptions::default()
    };
    let series = load_csv(&args.input, &opts)?;
    let mode = match args.channels {
        ChannelArg::Independent => ChannelMode::Independent,
        ChannelArg::Dependent => ChannelMode::Dependent,
    };
    let wm = make_windows(&series, window_len, stride, mode)?;
    let spec = pca_spectrum(&wm)?;
    let range = match args.fit_range.as_deref() {
        Some(t) => parse_range(t)?,
        None => match est.fit_range {
            Some(r) => r,
            None => default_fit_range(&spec.eigenvalues)?,
        },
    };
    let fit = fit_zipf(&spec.eigenvalues, range)?;
    if let Some(path) = &args.eigenvalues {
        let mut w = open_sink(Some(path))?;
        write_spectrum_csv(&spec.eigenvalues, &mut w)?;
        w.flush()?;
    }
    let mut w = ctx.sink()?;
    match ctx.format_or(Format::Json) {
        Format::Csv => {
            write_spectrum_csv(&spec.eigenvalues, &mut w)?;
            w.flush()?;
            Ok(())
        }
        Format::Json => write_json(
            w,
            &SpectrumReport {
                source: args.input.display().to_string(),
                window_len,
                stride,
                windows: wm.rows.rows(),
                eigenvalue_count: spec.eigenvalues.len(),
                trace: spec.trace,
                fit_range: fit.fit_range,
                lambda0: fit.lambda0,
                alpha_z: fit.alpha_z,
                r_squared: fit.r_squared,
                slope_stderr: fit.slope_stderr,
                flat: fit.flat,
                interpolated_cells: series.interpolated,
            },
        ),
    }
}

#[derive(Serialize)]
struct CurveReport<'a> {
    source: String,
    n_points: usize,
    best: Option<&'a ScalingFit>,
    #[serde(flatten)]
    comparison: &'a Comparison,
}

pub fn fit_curve(ctx: &Context, args: &FitArgs) -> Result<(), Failure> {
    let series = load_csv(&args.input, &LoadOptions::default())?;
    if series.channels() != 2 {
        return Err(Failure::validation(format!(
            "expected 2 columns x,y, found {}",
            series.channels()
        )));
    }
    let xs = series.values.column(0);
    let ys = series.values.column(1);
    if xs.len() < 4 {
        return Err(Failure::validation(format!("need at least 4 points, got {}", xs.len())));
    }
    let bounds = AlphaBounds {
        lo: args.alpha_min,
        hi: args.alpha_max,
    };
    let cmp = compare_models(&xs, &ys, bounds)?;
    let mut w = ctx.sink()?;
    match ctx.format_or(Format::Json) {
        Format::Csv => {
            cmp.write_table_csv(&mut w)?;
            w.flush()?;
            Ok(())
        }
        Format::Json => write_json(
            w,
            &CurveReport {
                source: args.input.display().to_string(),
                n_points: xs.len(),
                best: cmp.best(),
                comparison: &cmp,
            },
        ),
    }
}

fn parse_values(text: &str) -> Result<Vec<f64>, Failure> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Failure::validation(format!("--values: {v:?} is not a number")))
        })
        .collect()
}

pub fn simulate(ctx: &Context, args: &SimulateArgs) -> Result<(), Failure> {
    let kind: ExperimentKind = args.experiment.parse()?;
    let mut spec = match &ctx.cfg.sweep {
        Some(s) => s.clone(),
        None => default_sweep(kind, 0),
    };
    let seed = ctx.seed.unwrap_or(spec.base_seed);
    spec.base_seed = seed;
    if let Some(t) = args.trials {
        spec.trials = t;
    }
    if let Some(v) = &args.values {
        spec.values = parse_values(v)?;
    }
    eprintln!("seed: {seed}");
    let report = run_experiment(kind, &spec)?;
    match (report.fitted_exponent, report.theory_exponent) {
        (Some(f), Some(t)) => eprintln!("fitted exponent {f:.4} (theory {t:.4})"),
        (None, Some(t)) => eprintln!("fitted exponent n/a (theory {t:.4})"),
        _ => {}
    }
    if let Some(x) = report.argmin {
        eprintln!(
            "argmin {x} ({})",
            if report.interior_optimum == Some(true) {
                "interior"
            } else {
                "boundary"
            }
        );
    }
    match &ctx.out {
        Some(path) => {
            let is_csv = path.extension().is_some_and(|e| e == "csv");
            let (json_path, csv_path) = if is_csv {
                (path.with_extension("json"), path.clone())
            } else {
                (path.clone(), path.with_extension("csv"))
            };
            write_json(open_sink(Some(&json_path))?, &report)?;
            let mut w = open_sink(Some(&csv_path))?;
            report.write_csv(&mut w)?;
            w.flush()?;
            Ok(())
        }
        None => {
            let mut w = open_sink(None)?;
            match ctx.format_or(Format::Json) {
                Format::Json => write_json(w, &report),
                Format::Csv => {
                    report.write_csv(&mut w)?;
                    w.flush()?;
                    Ok(())
                }
            }
        }
    }
}

pub fn generate(ctx: &Context, args: &GenerateArgs) -> Result<(), Failure> {
    let g = ctx.cfg.generate.clone().unwrap_or_default();
    let t = ctx.cfg.target.clone().unwrap_or_default();
    let base = ctx.cfg.spectrum();
    let seed = ctx.seed.unwrap_or(base.seed);
    let spectrum = base.with_seed(seed);
    spectrum.validate()?;
    let noise = ctx.cfg.noise();
    noise.validate()?;
    let target = make_target(
        &spectrum,
        args.k1.or(t.k1).unwrap_or(3.0),
        args.k2.or(t.k2).unwrap_or(0.5),
        args.d_out.or(t.d_out).unwrap_or(2),
        derive_seed(seed, "target", &[]),
    )?;
    let count = args.count.or(g.count).unwrap_or(1000);
    eprintln!("seed: {seed}");
    let data = match args.horizon.or(g.horizon) {
        Some(h) => generate_dataset(&spectrum, &noise, &target, &ctx.cfg.mapping(), count, h)?,
        None => {
            let d_visible = args.d_visible.or(g.d_visible).unwrap_or(spectrum.d_total);
            generate_dataset_with_dims(&spectrum, &noise, &target, d_visible, count)?
        }
    };
    if ctx.format == Some(Format::Json) {
        return Err(Failure::validation("generate writes CSV only"));
    }
    let mut w = ctx.sink()?;
    data.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}
