//! Empirical spectrum of a time series.
//!
//! Load a CSV, cut it into instance-normalized windows, take the PCA
//! eigenvalues of the window covariance and fit `λ_i ≈ λ0 · i^{-α}` on a
//! log-log scale.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::Table;

/// Floor applied to the standard deviation of a window.
pub const STD_EPSILON: f64 = 1e-8;
/// Eigenvalues below this fraction of the largest end the default fit range.
pub const NOISE_FLOOR: f64 = 1e-10;

const COV_BLOCK_ROWS: usize = 2048;
const COV_GROUP: usize = 8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeaderMode {
    /// Header iff the first record has a non-numeric cell.
    #[default]
    Auto,
    Present,
    Absent,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    #[default]
    Reject,
    /// Linear interpolation between neighbours; edges copy the nearest value.
    Interpolate,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoadOptions {
    pub header: HeaderMode,
    pub missing: MissingPolicy,
    pub delimiter: Option<char>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Series {
    /// `T × V`
    pub values: Table,
    pub columns: Vec<String>,
    pub source: Option<PathBuf>,
    /// Cells filled by interpolation.
    pub interpolated: usize,
}

impl Series {
    pub fn new(values: Table, columns: Vec<String>) -> Result<Self> {
        if values.rows() < 2 {
            return Err(Error::Format(format!(
                "a series needs at least 2 rows, got {}",
                values.rows()
            )));
        }
        if columns.len() != values.cols() {
            return Err(Error::argument("one name per column required"));
        }
        if values.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::argument("series values must be finite"));
        }
        Ok(Series {
            values,
            columns,
            source: None,
            interpolated: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn channels(&self) -> usize {
        self.values.cols()
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(
        cell.trim().to_ascii_lowercase().as_str(),
        "" | "nan" | "na" | "null"
    )
}

fn parse_cell(cell: &str) -> Option<f64> {
    if is_missing(cell) {
        return Some(f64::NAN);
    }
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads a numeric CSV file.
pub fn load_csv(path: impl AsRef<Path>, options: &LoadOptions) -> Result<Series> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    let mut series = parse_csv(&text, options)?;
    series.source = Some(path.to_path_buf());
    Ok(series)
}

/// [`load_csv`] on in-memory text. Reported row numbers count data rows
/// from 1, columns from 1.
pub fn parse_csv(text: &str, options: &LoadOptions) -> Result<Series> {
    let delim = options.delimiter.unwrap_or(',');
    if !delim.is_ascii() {
        return Err(Error::argument(format!("delimiter {delim:?} is not ASCII")));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(delim as u8)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(format!("record {}: {e}", i + 1)))?;
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::Format("empty file".into()));
    }

    let has_header = match options.header {
        HeaderMode::Present => true,
        HeaderMode::Absent => false,
        HeaderMode::Auto => records[0]
            .iter()
            .any(|c| !is_missing(c) && c.parse::<f64>().is_err()),
    };
    let width = records[0].len();
    let columns: Vec<String> = if has_header {
        records[0].iter().map(str::to_owned).collect()
    } else {
        (1..=width).map(|i| format!("col_{i}")).collect()
    };
    let body = &records[usize::from(has_header)..];
    if body.is_empty() {
        return Err(Error::Format("no data rows".into()));
    }

    let mut data = Vec::with_capacity(body.len() * width);
    for (r, rec) in body.iter().enumerate() {
        for (c, cell) in rec.iter().enumerate() {
            let v = parse_cell(cell).ok_or_else(|| Error::Parse {
                row: r + 1,
                column: c + 1,
                message: format!("not a finite number: {cell:?}"),
            })?;
            if v.is_nan() && options.missing == MissingPolicy::Reject {
                return Err(Error::Parse {
                    row: r + 1,
                    column: c + 1,
                    message: "missing value".into(),
                });
            }
            data.push(v);
        }
    }
    let mut values = Table::from_vec(body.len(), width, data)?;
    let interpolated = fill_gaps(&mut values)?;
    let mut series = Series::new(values, columns)?;
    series.interpolated = interpolated;
    Ok(series)
}

fn fill_gaps(values: &mut Table) -> Result<usize> {
    let (rows, cols) = (values.rows(), values.cols());
    let mut filled = 0;
    for c in 0..cols {
        let known: Vec<usize> = (0..rows).filter(|&r| !values.get(r, c).is_nan()).collect();
        if known.len() == rows {
            continue;
        }
        let (&first, &last) = match (known.first(), known.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => {
                return Err(Error::Format(format!("column {} has no values", c + 1)));
            }
        };
        let data = values.as_mut_slice();
        for r in 0..first {
            data[r * cols + c] = data[first * cols + c];
            filled += 1;
        }
        for r in last + 1..rows {
            data[r * cols + c] = data[last * cols + c];
            filled += 1;
        }
        for pair in known.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let (va, vb) = (data[a * cols + c], data[b * cols + c]);
            for r in a + 1..b {
                let t = (r - a) as f64 / (b - a) as f64;
                data[r * cols + c] = va + t * (vb - va);
                filled += 1;
            }
        }
    }
    Ok(filled)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    /// One row per variable per offset.
    #[default]
    Independent,
    /// One row per offset holding all variables back to back.
    Dependent,
}

/// Mean and scale removed from one window segment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Normalization {
    pub mean: f64,
    /// Population standard deviation after the `STD_EPSILON` floor.
    pub std: f64,
    /// The raw segment was constant.
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WindowMatrix {
    pub rows: Table,
    pub window_len: usize,
    pub stride: usize,
    /// Segment records, `segments_per_row` per row.
    pub normalization: Vec<Normalization>,
    pub segments_per_row: usize,
}

impl WindowMatrix {
    /// Wraps rows as-is, without normalization.
    pub fn from_rows(rows: Table) -> Self {
        let n = rows.rows();
        WindowMatrix {
            window_len: rows.cols(),
            stride: 1,
            rows,
            normalization: vec![
                Normalization {
                    mean: 0.0,
                    std: 1.0,
                    degenerate: false
                };
                n
            ],
            segments_per_row: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.rows() == 0
    }

    /// Whether row `i` contains a constant raw segment.
    pub fn is_degenerate(&self, i: usize) -> bool {
        let k = self.segments_per_row;
        self.normalization[i * k..(i + 1) * k].iter().any(|n| n.degenerate)
    }
}

fn normalize_in_place(seg: &mut [f64]) -> Normalization {
    let n = seg.len() as f64;
    let mean = seg.iter().sum::<f64>() / n;
    let var = seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let raw = var.sqrt();
    let degenerate = raw < STD_EPSILON;
    let std = raw.max(STD_EPSILON);
    for v in seg.iter_mut() {
        *v = (*v - mean) / std;
    }
    Normalization {
        mean,
        std,
        degenerate,
    }
}

/// Slides a window of `window_len` frames over the series.
pub fn make_windows(series: &Series, window_len: usize, stride: usize, mode: ChannelMode) -> Result<WindowMatrix> {
    let t = series.len();
    let v = series.channels();
    if stride == 0 {
        return Err(Error::argument("stride must be at least 1"));
    }
    if window_len == 0 || window_len > t {
        return Err(Error::argument(format!(
            "window length {window_len} must lie in [1, {t}]"
        )));
    }
    let offsets = (t - window_len) / stride + 1;
    let columns: Vec<Vec<f64>> = (0..v).map(|c| series.values.column(c)).collect();

    let (row_count, width, segments) = match mode {
        ChannelMode::Independent => (v * offsets, window_len, 1),
        ChannelMode::Dependent => (offsets, v * window_len, v),
    };
    let mut data = vec![0.0; row_count * width];
    let norms: Vec<Normalization> = data
        .par_chunks_mut(width)
        .enumerate()
        .flat_map_iter(|(r, row)| {
            let mut out = Vec::with_capacity(segments);
            match mode {
                ChannelMode::Independent => {
                    let (c, k) = (r / offsets, r % offsets);
                    let start = k * stride;
                    row.copy_from_slice(&columns[c][start..start + window_len]);
                    out.push(normalize_in_place(row));
                }
                ChannelMode::Dependent => {
                    let start = r * stride;
                    for (c, seg) in row.chunks_exact_mut(window_len).enumerate() {
                        seg.copy_from_slice(&columns[c][start..start + window_len]);
                        out.push(normalize_in_place(seg));
                    }
                }
            }
            out
        })
        .collect();
    Ok(WindowMatrix {
        rows: Table::from_vec(row_count, width, data)?,
        window_len,
        stride,
        normalization: norms,
        segments_per_row: segments,
    })
}

/// A least-squares line through `(ln i, ln λ_i)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ZipfFit {
    pub lambda0: f64,
    pub alpha_z: f64,
    /// `None` for a flat spectrum.
    pub r_squared: Option<f64>,
    pub slope_stderr: f64,
    /// 1-based inclusive eigenvalue indices.
    pub fit_range: (usize, usize),
    pub flat: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectrumEstimate {
    /// Descending, non-negative.
    pub eigenvalues: Vec<f64>,
    /// Trace of the sample covariance.
    pub trace: f64,
    pub fit: Option<ZipfFit>,
}

fn column_means(x: &Table) -> Vec<f64> {
    let l = x.cols();
    let partials: Vec<Vec<f64>> = x
        .as_slice()
        .par_chunks(COV_BLOCK_ROWS * l)
        .map(|block| {
            let mut s = vec![0.0; l];
            for row in block.chunks_exact(l) {
                s.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
            s
        })
        .collect();
    let mut total = vec![0.0; l];
    for p in partials {
        total.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    let n = x.rows() as f64;
    total.iter_mut().for_each(|a| *a /= n);
    total
}

/// Sample covariance of the rows, divisor `W − 1`. The blocking does not
/// depend on the thread count, so the result is reproducible.
pub fn covariance(x: &Table) -> Result<DMatrix<f64>> {
    let (w, l) = (x.rows(), x.cols());
    if w < 2 {
        return Err(Error::argument(format!("need at least 2 rows, got {w}")));
    }
    let means = column_means(x);
    let blocks: Vec<&[f64]> = x.as_slice().chunks(COV_BLOCK_ROWS * l).collect();
    let mut acc = DMatrix::<f64>::zeros(l, l);
    for group in blocks.chunks(COV_GROUP) {
        let parts: Vec<DMatrix<f64>> = group
            .par_iter()
            .map(|block| {
                let rows = block.len() / l;
                let mut b = DMatrix::from_row_slice(rows, l, block);
                for (j, m) in means.iter().enumerate() {
                    b.column_mut(j).add_scalar_mut(-m);
                }
                b.tr_mul(&b)
            })
            .collect();
        for p in parts {
            acc += p;
        }
    }
    acc /= (w - 1) as f64;
    Ok(acc)
}

/// Eigenvalues of the row covariance, largest first; `min(W − 1, L)` of
/// them since the rest are zero by construction.
pub fn pca_spectrum(wm: &WindowMatrix) -> Result<SpectrumEstimate> {
    let w = wm.rows.rows();
    if w < 2 {
        return Err(Error::argument(format!(
            "PCA needs at least 2 windows, got {w}"
        )));
    }
    let cov = covariance(&wm.rows)?;
    let trace = cov.trace();
    let eig = SymmetricEigen::new(cov);
    let mut values: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
    values.sort_by(|a, b| b.total_cmp(a));
    values.truncate((w - 1).min(wm.rows.cols()));
    Ok(SpectrumEstimate {
        eigenvalues: values,
        trace,
        fit: None,
    })
}

/// From index 2 up to the last eigenvalue above `NOISE_FLOOR · λ_1`.
pub fn default_fit_range(eigenvalues: &[f64]) -> Result<(usize, usize)> {
    let first = eigenvalues.first().copied().unwrap_or(0.0);
    if first <= 0.0 {
        return Err(Error::domain("spectrum has no positive eigenvalue"));
    }
    let end = eigenvalues
        .iter()
        .position(|&v| v < NOISE_FLOOR * first)
        .unwrap_or(eigenvalues.len());
    if end < 4 {
        return Err(Error::argument(format!(
            "only {end} eigenvalues above the noise floor; need 4 for the default range"
        )));
    }
    Ok((2, end))
}

/// Ordinary least squares of `ln λ_i` on `ln i` over a 1-based inclusive
/// range.
pub fn fit_zipf(eigenvalues: &[f64], fit_range: (usize, usize)) -> Result<ZipfFit> {
    let (lo, hi) = fit_range;
    if lo == 0 || hi > eigenvalues.len() || hi < lo || hi - lo + 1 < 3 {
        return Err(Error::argument(format!(
            "fit range ({lo}, {hi}) must hold at least 3 of the {} eigenvalues",
            eigenvalues.len()
        )));
    }
    let mut xs = Vec::with_capacity(hi - lo + 1);
    let mut ys = Vec::with_capacity(hi - lo + 1);
    for i in lo..=hi {
        let v = eigenvalues[i - 1];
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::domain(format!(
                "eigenvalue {i} is {v}; shrink the fit range to positive eigenvalues"
            )));
        }
        xs.push((i as f64).ln());
        ys.push(v.ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        .max(0.0);
    let flat = syy <= 1e-24 * n;
    let (alpha, r2) = if flat {
        (0.0, None)
    } else {
        (-slope, Some((1.0 - sse / syy).clamp(0.0, 1.0)))
    };
    let stderr = if n > 2.0 { (sse / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    Ok(ZipfFit {
        lambda0: if flat { my.exp() } else { intercept.exp() },
        alpha_z: alpha,
        r_squared: r2,
        slope_stderr: stderr,
        fit_range,
        flat,
    })
}

/// Smallest `d` whose leading eigenvalues hold `energy` of the total.
pub fn intrinsic_dim_estimate(eigenvalues: &[f64], energy: f64) -> Result<usize> {
    if !(energy > 0.0 && energy < 1.0) {
        return Err(Error::range("energy", energy, 0.0, 1.0));
    }
    if eigenvalues.is_empty() {
        return Err(Error::argument("empty spectrum"));
    }
    let total: f64 = eigenvalues.iter().sum();
    let target = energy * total;
    let mut acc = 0.0;
    for (i, v) in eigenvalues.iter().enumerate() {
        acc += v;
        if acc >= target {
            return Ok(i + 1);
        }
    }
    Ok(eigenvalues.len())
}

/// Writes `index,eigenvalue` rows.
pub fn write_spectrum_csv<W: std::io::Write>(eigenvalues: &[f64], mut w: W) -> Result<()> {
    writeln!(w, "index,eigenvalue")?;
    for (i, v) in eigenvalues.iter().enumerate() {
        writeln!(w, "{},{}", i + 1, v)?;
    }
    Ok(())
}
