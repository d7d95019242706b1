//! CSV ingestion, benchmark split protocols, train-statistics z-scoring and
//! sliding windows.

use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use chrono::{NaiveDate, NaiveDateTime};

use crate::error::{Error, LoadError, Result};
use crate::tensor::Tensor;

/// A loaded multivariate series, `values` is `[rows, M]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawDataset {
    pub name: String,
    pub timestamps: Vec<NaiveDateTime>,
    pub columns: Vec<String>,
    pub values: Tensor,
    pub frequency: String,
}

impl RawDataset {
    pub fn rows(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[1]
    }
}

const TIMESTAMP_FORMATS: &[&str] = &[
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%d %H:%M",
    "%Y/%m/%d %H:%M:%S",
    "%Y/%m/%d %H:%M",
    "%Y-%m-%dT%H:%M:%S",
];

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    TIMESTAMP_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .or_else(|| {
            ["%Y-%m-%d", "%Y/%m/%d"]
                .iter()
                .find_map(|f| NaiveDate::parse_from_str(s, f).ok())
                .and_then(|d| d.and_hms_opt(0, 0, 0))
        })
}

/// Reads an ETT-style CSV: header row, timestamp first, numeric features after.
pub fn load_csv(path: &Path) -> Result<RawDataset> {
    if !path.is_file() {
        return Err(LoadError::Missing(path.display().to_string()).into());
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| LoadError::Parse(e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| LoadError::Parse(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 2 {
        return Err(LoadError::TooFewColumns(header.len()).into());
    }
    let m = header.len() - 1;
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| LoadError::Parse(e.to_string()))?;
        let line = record.position().map_or(i + 2, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(LoadError::Ragged {
                line,
                expected: header.len(),
                got: record.len(),
            }
            .into());
        }
        let ts = parse_timestamp(&record[0]).ok_or_else(|| LoadError::BadTimestamp {
            line,
            value: record[0].to_string(),
        })?;
        if timestamps.last().is_some_and(|prev| *prev >= ts) {
            return Err(LoadError::NonMonotone { line }.into());
        }
        timestamps.push(ts);
        for (j, cell) in record.iter().skip(1).enumerate() {
            let v = cell
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| LoadError::NonNumeric {
                    line,
                    column: header[j + 1].clone(),
                    value: cell.to_string(),
                })?;
            values.push(v);
        }
    }
    let rows = timestamps.len();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let frequency = match (timestamps.first(), timestamps.get(1)) {
        (Some(a), Some(b)) => format!("{}min", (*b - *a).num_minutes()),
        _ => String::new(),
    };
    Ok(RawDataset {
        name,
        timestamps,
        columns: header[1..].to_vec(),
        values: Tensor::new(vec![rows, m], values)?,
        frequency,
    })
}

/// How rows are divided into train/validation/test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitKind {
    /// 12/4/4 months of 30 days.
    EttMonths { rows_per_month: usize },
    /// 70/10/20 with floored boundaries.
    Ratio,
}

impl SplitKind {
    pub const ETT_HOURLY: SplitKind = SplitKind::EttMonths { rows_per_month: 30 * 24 };
    pub const ETT_15MIN: SplitKind = SplitKind::EttMonths { rows_per_month: 30 * 24 * 4 };
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            SplitKind::EttMonths { rows_per_month: 720 } => f.write_str("ett_hourly"),
            SplitKind::EttMonths { rows_per_month: 2880 } => f.write_str("ett_15min"),
            SplitKind::EttMonths { rows_per_month } => write!(f, "ett_months:{rows_per_month}"),
            SplitKind::Ratio => f.write_str("ratio"),
        }
    }
}

impl FromStr for SplitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ett_hourly" => Ok(SplitKind::ETT_HOURLY),
            "ett_15min" => Ok(SplitKind::ETT_15MIN),
            "ratio" => Ok(SplitKind::Ratio),
            other => other
                .strip_prefix("ett_months:")
                .and_then(|n| n.parse().ok())
                .filter(|&n: &usize| n > 0)
                .map(|rows_per_month| SplitKind::EttMonths { rows_per_month })
                .ok_or_else(|| {
                    Error::Config(format!(
                        "unknown split `{other}` (expected ett_hourly, ett_15min, ett_months:<rows>, ratio)"
                    ))
                }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub kind: SplitKind,
    /// Prepend `L` rows of the preceding segment to val/test.
    pub context: bool,
}

/// A contiguous row range; targets start no earlier than `targets_from`.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub rows: Range<usize>,
    pub targets_from: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Absolute window origins for look-back `l` and horizon `t`.
    pub fn origins(&self, l: usize, t: usize) -> Range<usize> {
        let local = window_origins(self.len(), l, t);
        self.rows.start + local.start..self.rows.start + local.end
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Segment,
    pub val: Segment,
    pub test: Segment,
    /// Row indices where train, val and test end.
    pub boundaries: [usize; 3],
}

/// Segment boundaries for `rows` rows with look-back `l` and horizon `t`.
pub fn split(rows: usize, spec: SplitSpec, l: usize, t: usize) -> Result<Splits> {
    let [b1, b2, b3] = match spec.kind {
        SplitKind::EttMonths { rows_per_month } => {
            let b = [12 * rows_per_month, 16 * rows_per_month, 20 * rows_per_month];
            if rows < b[2] {
                return Err(Error::Config(format!(
                    "month split needs {} rows, dataset has {rows}",
                    b[2]
                )));
            }
            b
        }
        SplitKind::Ratio => [rows * 7 / 10, rows * 8 / 10, rows],
    };
    let ctx = |b: usize| if spec.context { b.saturating_sub(l) } else { b };
    let splits = Splits {
        train: Segment { rows: 0..b1, targets_from: 0 },
        val: Segment { rows: ctx(b1)..b2, targets_from: b1 },
        test: Segment { rows: ctx(b2)..b3, targets_from: b2 },
        boundaries: [b1, b2, b3],
    };
    for (name, seg) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
        if seg.len() < l + t {
            return Err(Error::Config(format!(
                "{name} segment has {} rows, fewer than look-back + horizon = {}",
                seg.len(),
                l + t
            )));
        }
    }
    Ok(splits)
}

/// Per-column statistics used for z-scoring.
#[derive(Clone, Debug, PartialEq)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn identity(m: usize) -> Self {
        Scaler { mean: vec![0.0; m], std: vec![1.0; m] }
    }

    pub fn transform(&self, values: &Tensor) -> Tensor {
        self.apply(values, |v, mu, sd| (v - mu) / sd)
    }

    pub fn inverse(&self, values: &Tensor) -> Tensor {
        self.apply(values, |v, mu, sd| v * sd + mu)
    }

    fn apply(&self, values: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Tensor {
        let m = self.mean.len();
        Tensor::from_fn(values.shape(), |i| {
            let c = i % m;
            f(values.data()[i], self.mean[c], self.std[c])
        })
    }
}

/// Fits population mean/std on `train` rows of `values` (`[rows, M]`).
/// Zero-variance columns get std 1 so they map to zeros.
pub fn fit_scaler(values: &Tensor, train: Range<usize>) -> Result<Scaler> {
    let m = values.shape()[1];
    if train.is_empty() || train.end > values.shape()[0] {
        return Err(Error::Config("standardization needs a non-empty train range".into()));
    }
    let n = train.len() as f64;
    let mut mean = vec![0.0; m];
    let mut var = vec![0.0; m];
    for r in train.clone() {
        for (c, mu) in mean.iter_mut().enumerate() {
            *mu += values.data()[r * m + c];
        }
    }
    mean.iter_mut().for_each(|v| *v /= n);
    for r in train {
        for c in 0..m {
            let d = values.data()[r * m + c] - mean[c];
            var[c] += d * d;
        }
    }
    let std = var
        .iter()
        .enumerate()
        .map(|(c, v)| {
            let sd = (v / n).sqrt();
            if sd > 1e-12 {
                sd
            } else {
                log::warn!("column {c} is constant over the train range; using std = 1");
                1.0
            }
        })
        .collect();
    Ok(Scaler { mean, std })
}

/// Z-scores every column with statistics from the `train` rows only.
pub fn standardize(values: &Tensor, train: Range<usize>) -> Result<(Tensor, Scaler)> {
    let scaler = fit_scaler(values, train)?;
    Ok((scaler.transform(values), scaler))
}

pub fn destandardize(values: &Tensor, scaler: &Scaler) -> Tensor {
    scaler.inverse(values)
}

/// Window origins `0..len-l-t+1` within a segment of `len` rows.
pub fn window_origins(len: usize, l: usize, t: usize) -> Range<usize> {
    if len < l + t {
        log::warn!("segment of {len} rows is shorter than look-back {l} + horizon {t}");
        return 0..0;
    }
    0..len - l - t + 1
}

/// One supervised example cut from `[rows, M]` values.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    pub input: Tensor,
    pub target: Tensor,
    pub origin: usize,
}

/// Every stride-1 window of a segment.
pub fn windows<'a>(
    values: &'a Tensor,
    segment: &Segment,
    l: usize,
    t: usize,
) -> impl Iterator<Item = WindowSample> + 'a {
    let m = values.shape()[1];
    segment.origins(l, t).map(move |o| {
        let cut = |from: usize, len: usize| {
            Tensor::new(vec![len, m], values.data()[from * m..(from + len) * m].to_vec())
                .expect("window within bounds")
        };
        WindowSample {
            input: cut(o, l),
            target: cut(o + l, t),
            origin: o,
        }
    })
}

/// Data ready for training: standardized columns, split ranges and scaler.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub name: String,
    /// `columns[c][row]`.
    pub columns: Vec<Vec<f64>>,
    pub splits: Splits,
    pub scaler: Scaler,
    pub lookback: usize,
    pub horizon: usize,
}

impl PreparedData {
    pub fn new(
        raw: &RawDataset,
        spec: SplitSpec,
        lookback: usize,
        horizon: usize,
        zscore: bool,
    ) -> Result<Self> {
        let splits = split(raw.rows(), spec, lookback, horizon)?;
        let (values, scaler) = if zscore {
            standardize(&raw.values, splits.train.rows.clone())?
        } else {
            (raw.values.clone(), Scaler::identity(raw.channels()))
        };
        Ok(Self::from_values(&raw.name, &values, splits, scaler, lookback, horizon))
    }

    pub fn from_values(
        name: &str,
        values: &Tensor,
        splits: Splits,
        scaler: Scaler,
        lookback: usize,
        horizon: usize,
    ) -> Self {
        let m = values.shape()[1];
        let rows = values.shape()[0];
        let columns = (0..m)
            .map(|c| (0..rows).map(|r| values.data()[r * m + c]).collect())
            .collect();
        PreparedData {
            name: name.to_string(),
            columns,
            splits,
            scaler,
            lookback,
            horizon,
        }
    }

    pub fn channels(&self) -> usize {
        self.columns.len()
    }

    /// `(channel, origin)` pairs for every window of `segment`.
    pub fn samples(&self, segment: &Segment) -> Vec<(usize, usize)> {
        let origins = segment.origins(self.lookback, self.horizon);
        (0..self.channels())
            .flat_map(|c| origins.clone().map(move |o| (c, o)))
            .collect()
    }

    pub fn input(&self, channel: usize, origin: usize) -> &[f64] {
        &self.columns[channel][origin..origin + self.lookback]
    }

    pub fn target(&self, channel: usize, origin: usize) -> &[f64] {
        let start = origin + self.lookback;
        &self.columns[channel][start..start + self.horizon]
    }
}
