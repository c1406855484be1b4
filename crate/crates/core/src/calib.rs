//! OHLCV ingestion and two-regime calibration: rolling close-to-close
//! volatility, 1-D k-means on the volatility series, and a counting
//! estimator of the regime generator.

use std::io::Read;

use chrono::DateTime;
use serde::{Deserialize, Serialize};

use crate::asgame::{ASModel, DAYS_PER_YEAR};
use crate::error::{Error, Result};
use crate::numkit::Matrix;
use crate::rates::Generator;
use crate::SCHEMA_VERSION;

/// Thirty-minute bars in a 24/7 year.
pub const DEFAULT_ANNUALIZATION: f64 = 365.0 * 48.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OhlcvSeries {
    /// Epoch seconds.
    pub timestamps: Vec<i64>,
    pub open: Vec<f64>,
    pub high: Vec<f64>,
    pub low: Vec<f64>,
    pub close: Vec<f64>,
    pub volume: Vec<f64>,
}

/// Epoch seconds if the field is numeric, RFC 3339 otherwise.
pub fn parse_timestamp(s: &str) -> Result<i64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Ok(v);
    }
    if let Ok(v) = s.parse::<f64>() {
        if v.is_finite() && v.fract() == 0.0 {
            return Ok(v as i64);
        }
        return Err(Error::Input(format!("timestamp {s} is not a whole number of seconds")));
    }
    DateTime::parse_from_rfc3339(s)
        .map(|d| d.timestamp())
        .map_err(|e| Error::Input(format!("bad timestamp {s:?}: {e}")))
}

impl OhlcvSeries {
    pub fn new(
        timestamps: Vec<i64>,
        open: Vec<f64>,
        high: Vec<f64>,
        low: Vec<f64>,
        close: Vec<f64>,
        volume: Vec<f64>,
    ) -> Result<Self> {
        let s = Self {
            timestamps,
            open,
            high,
            low,
            close,
            volume,
        };
        s.validate()?;
        Ok(s)
    }

    /// Synthetic series from closes on a uniform grid.
    pub fn from_closes(start: i64, interval: i64, close: Vec<f64>) -> Result<Self> {
        let n = close.len();
        let ts = (0..n as i64).map(|k| start + k * interval).collect();
        Self::new(ts, close.clone(), close.clone(), close.clone(), close, vec![0.0; n])
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.timestamps.len();
        if [&self.open, &self.high, &self.low, &self.close, &self.volume]
            .iter()
            .any(|c| c.len() != n)
        {
            return Err(Error::Input("OHLCV columns have different lengths".into()));
        }
        if n < 2 {
            return Err(Error::Input("need at least two bars".into()));
        }
        for (name, col) in [
            ("open", &self.open),
            ("high", &self.high),
            ("low", &self.low),
            ("close", &self.close),
        ] {
            if let Some(k) = col.iter().position(|p| !(p.is_finite() && *p > 0.0)) {
                return Err(Error::Input(format!("bar {k}: {name} price must be positive")));
            }
        }
        let step = self.timestamps[1] - self.timestamps[0];
        if step <= 0 {
            return Err(Error::Input("timestamps must be strictly increasing".into()));
        }
        for k in 1..n {
            let d = self.timestamps[k] - self.timestamps[k - 1];
            if d <= 0 {
                return Err(Error::Input(format!("bar {k}: timestamps must be strictly increasing")));
            }
            if d != step {
                return Err(Error::Input(format!(
                    "bar {k}: interval {d}s differs from the first interval {step}s"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn bar_interval_seconds(&self) -> i64 {
        self.timestamps[1] - self.timestamps[0]
    }

    /// Reads `timestamp,open,high,low,close,volume` (any column order).
    pub fn from_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = rdr
            .headers()
            .map_err(|e| Error::Input(format!("reading CSV header: {e}")))?
            .clone();
        let names = ["timestamp", "open", "high", "low", "close", "volume"];
        let mut cols = [0usize; 6];
        for (slot, name) in cols.iter_mut().zip(names) {
            *slot = headers
                .iter()
                .position(|h| h.eq_ignore_ascii_case(name))
                .ok_or_else(|| Error::Input(format!("missing column '{name}'")))?;
        }
        let mut ts = Vec::new();
        let mut data: [Vec<f64>; 5] = Default::default();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Input(format!("CSV: {e}")))?;
            let line = rec.position().map_or(0, |p| p.line());
            let field = |c: usize| rec.get(c).unwrap_or("");
            ts.push(parse_timestamp(field(cols[0])).map_err(|e| Error::Input(format!("line {line}: {e}")))?);
            for (k, col) in data.iter_mut().enumerate() {
                let raw = field(cols[k + 1]);
                let v: f64 = raw.parse().map_err(|_| {
                    Error::Input(format!("line {line}: column '{}': cannot parse {raw:?}", names[k + 1]))
                })?;
                col.push(v);
            }
        }
        let [open, high, low, close, volume] = data;
        Self::new(ts, open, high, low, close, volume)
    }
}

/// Annualized sample standard deviation of log close-to-close returns over
/// the trailing `window` returns. Bar `k` uses returns ending at `k`, so the
/// first `window` bars are `None`.
pub fn rolling_volatility(series: &OhlcvSeries, window: usize, annualization: f64) -> Result<Vec<Option<f64>>> {
    let n = series.close.len();
    if window < 2 {
        return Err(Error::Calibration("window must be >= 2".into()));
    }
    if n <= window {
        return Err(Error::Calibration(format!(
            "series of {n} bars is too short for window {window}"
        )));
    }
    if !(annualization > 0.0 && annualization.is_finite()) {
        return Err(Error::Calibration("annualization must be positive".into()));
    }
    if series.close.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::Input("close prices must be positive".into()));
    }
    let r: Vec<f64> = series.close.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
    let scale = annualization.sqrt();
    let mut out = vec![None; n];
    for (k, slot) in out.iter_mut().enumerate().skip(window) {
        let win = &r[k - window..k];
        let mean = win.iter().sum::<f64>() / window as f64;
        let var = win.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (window - 1) as f64;
        *slot = Some(scale * var.sqrt());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    /// Ascending.
    pub centers: Vec<f64>,
    pub labels: Vec<usize>,
}

fn assign(values: &[f64], centers: &[f64]) -> Vec<usize> {
    values
        .iter()
        .map(|v| {
            let mut best = 0;
            for (j, c) in centers.iter().enumerate() {
                if (v - c).abs() < (v - centers[best]).abs() {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Lloyd iteration started from the `(j + ½)/k` quantiles of the data.
pub fn kmeans_1d(values: &[f64], k: usize) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::Calibration("k must be >= 1".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Calibration("k-means input must be finite".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::Calibration(format!(
            "{} distinct values cannot form {k} clusters",
            distinct.len()
        )));
    }
    let quantiles = |data: &[f64]| -> Vec<f64> {
        (0..k)
            .map(|j| data[(((j as f64 + 0.5) / k as f64) * data.len() as f64) as usize])
            .collect()
    };
    let mut centers = quantiles(&sorted);
    if centers.windows(2).any(|w| w[0] >= w[1]) {
        centers = quantiles(&distinct);
    }
    let mut labels = assign(values, &centers);
    for _ in 0..10_000 {
        let mut sum = vec![0.0; k];
        let mut cnt = vec![0usize; k];
        for (v, l) in values.iter().zip(&labels) {
            sum[*l] += v;
            cnt[*l] += 1;
        }
        for j in 0..k {
            if cnt[j] > 0 {
                centers[j] = sum[j] / cnt[j] as f64;
            }
        }
        let next = assign(values, &centers);
        if next == labels {
            break;
        }
        labels = next;
    }
    Ok(sort_clusters(centers, labels))
}

/// Relabels so that centers ascend.
pub fn sort_clusters(centers: Vec<f64>, labels: Vec<usize>) -> KMeans {
    let mut order: Vec<usize> = (0..centers.len()).collect();
    order.sort_by(|a, b| centers[*a].total_cmp(&centers[*b]));
    let mut rank = vec![0; centers.len()];
    for (r, &j) in order.iter().enumerate() {
        rank[j] = r;
    }
    KMeans {
        centers: order.iter().map(|&j| centers[j]).collect(),
        labels: labels.iter().map(|&l| rank[l]).collect(),
    }
}

/// Counting estimator `μ̂_ij = N_ij / (n_i Δ)` in per-day units, where
/// `n_i` counts bars in state `i` that have a successor. Returns warnings
/// for states never left or never visited.
pub fn estimate_generator(labels: &[usize], n_regimes: usize, bar_days: f64) -> Result<(Generator, Vec<String>)> {
    if labels.len() < 2 {
        return Err(Error::Calibration("need at least two labelled bars".into()));
    }
    if !(bar_days > 0.0 && bar_days.is_finite()) {
        return Err(Error::Calibration("bar interval must be positive".into()));
    }
    if let Some(l) = labels.iter().find(|l| **l >= n_regimes) {
        return Err(Error::Calibration(format!("label {l} outside 0..{n_regimes}")));
    }
    let mut counts = vec![vec![0u64; n_regimes]; n_regimes];
    let mut at_risk = vec![0u64; n_regimes];
    for w in labels.windows(2) {
        at_risk[w[0]] += 1;
        if w[0] != w[1] {
            counts[w[0]][w[1]] += 1;
        }
    }
    let mut warnings = Vec::new();
    let mut m = Matrix::zeros(n_regimes, n_regimes);
    for i in 0..n_regimes {
        if at_risk[i] == 0 {
            warnings.push(format!("regime {i} never observed with a successor; zero row"));
            continue;
        }
        for j in (0..n_regimes).filter(|&j| j != i) {
            m[(i, j)] = counts[i][j] as f64 / (at_risk[i] as f64 * bar_days);
        }
    }
    Ok((Generator::from_rates(&m)?, warnings))
}

/// Run lengths (in bars) of each label value.
pub fn run_lengths(labels: &[usize], n_regimes: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); n_regimes];
    let mut start = 0;
    for k in 1..=labels.len() {
        if k == labels.len() || labels[k] != labels[start] {
            out[labels[start]].push(k - start);
            start = k;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibConfig {
    pub window: usize,
    pub annualization: f64,
    pub n_regimes: usize,
}

impl Default for CalibConfig {
    fn default() -> Self {
        Self {
            window: 48,
            annualization: DEFAULT_ANNUALIZATION,
            n_regimes: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeCalibration {
    pub schema_version: u32,
    /// Annualized volatility per regime, ascending (regime 0 is calm).
    pub sigma: Vec<f64>,
    pub centers: Vec<f64>,
    /// Per bar; `None` during the volatility warm-up.
    pub labels: Vec<Option<usize>>,
    /// Per day.
    pub generator: Generator,
    pub window: usize,
    pub annualization: f64,
    pub bar_interval_seconds: i64,
    pub mean_run_length_bars: Vec<f64>,
    pub run_lengths: Vec<Vec<usize>>,
    pub warnings: Vec<String>,
}

impl RegimeCalibration {
    /// Overwrites `σ` and the baseline rates (converted to per year).
    pub fn apply_to(&self, model: &mut ASModel) -> Result<()> {
        model.sigma = self.sigma.clone();
        model.rates = self.generator.scaled(DAYS_PER_YEAR)?;
        Ok(())
    }
}

/// Builds the calibration record from clusters given in any label order.
pub fn calibration_from_clusters(
    series: &OhlcvSeries,
    config: &CalibConfig,
    vols: &[Option<f64>],
    clusters: KMeans,
) -> Result<RegimeCalibration> {
    let KMeans { centers, labels } = sort_clusters(clusters.centers, clusters.labels);
    if let Some(c) = centers.iter().find(|c| !(**c > 0.0)) {
        return Err(Error::Calibration(format!("regime volatility {c} is not positive")));
    }
    let n = centers.len();
    let mut it = labels.iter();
    let per_bar: Vec<Option<usize>> = vols
        .iter()
        .map(|v| v.and_then(|_| it.next().copied()))
        .collect();
    let bar_days = series.bar_interval_seconds() as f64 / 86_400.0;
    let (generator, warnings) = estimate_generator(&labels, n, bar_days)?;
    let runs = run_lengths(&labels, n);
    Ok(RegimeCalibration {
        schema_version: SCHEMA_VERSION,
        sigma: centers.clone(),
        mean_run_length_bars: runs
            .iter()
            .map(|r| if r.is_empty() { 0.0 } else { r.iter().sum::<usize>() as f64 / r.len() as f64 })
            .collect(),
        centers,
        labels: per_bar,
        generator,
        window: config.window,
        annualization: config.annualization,
        bar_interval_seconds: series.bar_interval_seconds(),
        run_lengths: runs,
        warnings,
    })
}

pub fn calibrate(series: &OhlcvSeries, config: &CalibConfig) -> Result<RegimeCalibration> {
    series.validate()?;
    let vols = rolling_volatility(series, config.window, config.annualization)?;
    let defined: Vec<f64> = vols.iter().flatten().copied().collect();
    let clusters = kmeans_1d(&defined, config.n_regimes)?;
    calibration_from_clusters(series, config, &vols, clusters)
}
