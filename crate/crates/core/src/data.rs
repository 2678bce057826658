//! Exogenous load/PV time series: ingestion, synthesis, drift and splitting.
//!
//! A series is a sequence of hourly (or any constant-step) instants with a
//! non-negative load and PV value at each instant. Every constructor funnels
//! through [`ExogenousSeries::new`], so a series that exists is valid.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}` in header")]
    MissingColumn(String),
    #[error("row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("row {row}: {field} = {value} must be finite and >= 0")]
    NegativeValue {
        row: usize,
        field: &'static str,
        value: f64,
    },
    #[error("non-constant step at row {row}: expected {expected_secs}s, found {found_secs}s")]
    NonConstantStep {
        row: usize,
        expected_secs: i64,
        found_secs: i64,
    },
    #[error("series columns have different lengths ({timestamps}, {load}, {pv})")]
    LengthMismatch { timestamps: usize, load: usize, pv: usize },
    #[error("series is empty")]
    Empty,
    #[error("pv value {value} at index {index} exceeds nameplate {limit}")]
    PvAboveNameplate { index: usize, value: f64, limit: f64 },
    #[error("drift multiplier reaches {multiplier} at step {step}")]
    DriftMultiplier { step: usize, multiplier: f64 },
    #[error("invalid drift spec: {0}")]
    InvalidDrift(String),
    #[error("range [{start}, {end}) is outside the series span or empty")]
    RangeOutOfBounds { start: NaiveDateTime, end: NaiveDateTime },
    #[error("ranges overlap at {0}")]
    OverlappingRanges(NaiveDateTime),
    #[error("invalid synthesis parameters: {0}")]
    InvalidSynth(String),
}

/// Hourly load and renewable production.
#[derive(Debug, Clone, PartialEq)]
pub struct ExogenousSeries {
    timestamps: Vec<NaiveDateTime>,
    load_kw: Vec<f64>,
    pv_kw: Vec<f64>,
    step: Duration,
}

impl ExogenousSeries {
    pub fn new(timestamps: Vec<NaiveDateTime>, load_kw: Vec<f64>, pv_kw: Vec<f64>) -> Result<Self, DataError> {
        if timestamps.len() != load_kw.len() || timestamps.len() != pv_kw.len() {
            return Err(DataError::LengthMismatch {
                timestamps: timestamps.len(),
                load: load_kw.len(),
                pv: pv_kw.len(),
            });
        }
        if timestamps.is_empty() {
            return Err(DataError::Empty);
        }
        for (i, (&l, &p)) in load_kw.iter().zip(&pv_kw).enumerate() {
            if !(l.is_finite() && l >= 0.0) {
                return Err(DataError::NegativeValue {
                    row: i,
                    field: "load_kw",
                    value: l,
                });
            }
            if !(p.is_finite() && p >= 0.0) {
                return Err(DataError::NegativeValue {
                    row: i,
                    field: "pv_kw",
                    value: p,
                });
            }
        }
        let step = check_step(&timestamps)?;
        Ok(Self {
            timestamps,
            load_kw,
            pv_kw,
            step,
        })
    }

    /// Hourly series starting at `start`.
    pub fn hourly(start: NaiveDateTime, load_kw: Vec<f64>, pv_kw: Vec<f64>) -> Result<Self, DataError> {
        let timestamps = (0..load_kw.len()).map(|i| start + Duration::hours(i as i64)).collect();
        Self::new(timestamps, load_kw, pv_kw)
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn load_kw(&self) -> &[f64] {
        &self.load_kw
    }

    pub fn pv_kw(&self) -> &[f64] {
        &self.pv_kw
    }

    pub fn step(&self) -> Duration {
        self.step
    }

    pub fn start(&self) -> NaiveDateTime {
        self.timestamps[0]
    }

    /// First instant after the last sample.
    pub fn end(&self) -> NaiveDateTime {
        self.timestamps[self.len() - 1] + self.step
    }

    pub fn peak_load(&self) -> f64 {
        self.load_kw.iter().copied().fold(0.0, f64::max)
    }

    /// Rejects PV values above the configured nameplate.
    pub fn check_pv_limit(&self, p_res_max: f64) -> Result<(), DataError> {
        match self.pv_kw.iter().position(|&p| p > p_res_max) {
            Some(index) => Err(DataError::PvAboveNameplate {
                index,
                value: self.pv_kw[index],
                limit: p_res_max,
            }),
            None => Ok(()),
        }
    }

    /// Copy of the samples `[start, end)` by index.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self, DataError> {
        if start >= end || end > self.len() {
            let s = self.timestamps.get(start).copied().unwrap_or_else(|| self.end());
            let e = self.timestamps.get(end).copied().unwrap_or_else(|| self.end());
            return Err(DataError::RangeOutOfBounds { start: s, end: e });
        }
        Ok(Self {
            timestamps: self.timestamps[start..end].to_vec(),
            load_kw: self.load_kw[start..end].to_vec(),
            pv_kw: self.pv_kw[start..end].to_vec(),
            step: self.step,
        })
    }

    /// Load and PV multiplied by constant factors.
    pub fn scaled(&self, load_factor: f64, pv_factor: f64) -> Result<Self, DataError> {
        Self::new(
            self.timestamps.clone(),
            self.load_kw.iter().map(|v| v * load_factor).collect(),
            self.pv_kw.iter().map(|v| v * pv_factor).collect(),
        )
    }

    fn index_of(&self, instant: NaiveDateTime) -> Option<usize> {
        if instant < self.start() || instant > self.end() {
            return None;
        }
        let offset = (instant - self.start()).num_seconds();
        let step = self.step.num_seconds().max(1);
        if offset % step != 0 {
            return None;
        }
        Some((offset / step) as usize)
    }
}

fn check_step(timestamps: &[NaiveDateTime]) -> Result<Duration, DataError> {
    if timestamps.len() < 2 {
        return Ok(Duration::hours(1));
    }
    let expected = timestamps[1] - timestamps[0];
    if expected <= Duration::zero() {
        return Err(DataError::NonConstantStep {
            row: 1,
            expected_secs: 1,
            found_secs: expected.num_seconds(),
        });
    }
    for (i, w) in timestamps.windows(2).enumerate() {
        let d = w[1] - w[0];
        if d != expected {
            return Err(DataError::NonConstantStep {
                row: i + 1,
                expected_secs: expected.num_seconds(),
                found_secs: d.num_seconds(),
            });
        }
    }
    Ok(expected)
}

/// Column names of the CSV layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub timestamp: String,
    pub load: String,
    pub pv: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            load: "load_kw".into(),
            pv: "pv_kw".into(),
        }
    }
}

fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    let raw = raw.trim();
    NaiveDateTime::parse_from_str(raw, TIMESTAMP_FORMAT)
        .or_else(|_| NaiveDateTime::parse_from_str(raw, "%Y-%m-%d %H:%M:%S"))
        .or_else(|_| NaiveDateTime::parse_from_str(raw, "%Y-%m-%dT%H:%M"))
        .ok()
        .or_else(|| chrono::DateTime::parse_from_rfc3339(raw).ok().map(|d| d.naive_utc()))
}

/// Reads a `timestamp,load_kw,pv_kw` CSV file. Row indices in errors are
/// 1-based data rows (the header is row 0).
pub fn load_series(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<ExogenousSeries, DataError> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut text = String::new();
    file.read_to_string(&mut text).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_series(&text, schema)
}

pub fn parse_series(text: &str, schema: &CsvSchema) -> Result<ExogenousSeries, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let (ti, li, pi) = (col(&schema.timestamp)?, col(&schema.load)?, col(&schema.pv)?);

    let mut timestamps = Vec::new();
    let mut load = Vec::new();
    let mut pv = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| DataError::MalformedRow {
            row,
            reason: e.to_string(),
        })?;
        let field = |i: usize| {
            record.get(i).ok_or_else(|| DataError::MalformedRow {
                row,
                reason: format!("missing field {i}"),
            })
        };
        let ts = parse_timestamp(field(ti)?).ok_or_else(|| DataError::MalformedRow {
            row,
            reason: format!("bad timestamp `{}`", field(ti).unwrap_or("")),
        })?;
        let number = |i: usize, name: &'static str| -> Result<f64, DataError> {
            let raw = field(i)?;
            let v: f64 = raw.parse().map_err(|_| DataError::MalformedRow {
                row,
                reason: format!("bad number `{raw}` in {name}"),
            })?;
            if !(v.is_finite() && v >= 0.0) {
                return Err(DataError::NegativeValue {
                    row,
                    field: name,
                    value: v,
                });
            }
            Ok(v)
        };
        load.push(number(li, "load_kw")?);
        pv.push(number(pi, "pv_kw")?);
        timestamps.push(ts);
    }
    if timestamps.is_empty() {
        return Err(DataError::Empty);
    }
    // Report step errors with the 1-based data row.
    check_step(&timestamps).map_err(|e| match e {
        DataError::NonConstantStep {
            row,
            expected_secs,
            found_secs,
        } => DataError::NonConstantStep {
            row: row + 1,
            expected_secs,
            found_secs,
        },
        other => other,
    })?;
    ExogenousSeries::new(timestamps, load, pv)
}

/// Writes the series in the same CSV layout `load_series` reads. Values use
/// the shortest round-trip float representation, so re-reading is exact.
pub fn write_series(series: &ExogenousSeries, mut out: impl Write) -> Result<(), DataError> {
    let mut writer = csv::Writer::from_writer(&mut out);
    writer.write_record(["timestamp", "load_kw", "pv_kw"])?;
    for i in 0..series.len() {
        writer.write_record([
            series.timestamps[i].format(TIMESTAMP_FORMAT).to_string(),
            series.load_kw[i].to_string(),
            series.pv_kw[i].to_string(),
        ])?;
    }
    writer.flush().map_err(|source| DataError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

pub fn save_series(series: &ExogenousSeries, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    write_series(series, std::io::BufWriter::new(file))
}

/// Parameters of the synthetic load/PV generator.
///
/// Load is `mean + amp * daily_shape + AR(1) noise`; PV is a half-sine
/// between sunrise and sunset, modulated by a yearly seasonal factor that
/// peaks on `summer_peak_doy`, and by a multiplicative AR(1) cloud factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub seed: u64,
    pub days: usize,
    /// First instant of the series (midnight).
    pub start: NaiveDate,
    pub mean_load_kw: f64,
    pub load_daily_amp: f64,
    pub load_noise_std: f64,
    /// Hour of day at which the daily load shape peaks.
    pub load_peak_hour: f64,
    pub pv_peak_kw: f64,
    /// Fractional PV reduction at the seasonal minimum, in [0, 1).
    pub pv_seasonal_amp: f64,
    pub pv_noise_std: f64,
    pub ar_coeff: f64,
    pub sunrise_hour: u32,
    pub sunset_hour: u32,
    /// Day of year with the strongest irradiation (southern hemisphere: early January).
    pub summer_peak_doy: u32,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            seed: 7,
            days: 365,
            start: NaiveDate::from_ymd_opt(2016, 1, 1).expect("valid date"),
            mean_load_kw: 14.0,
            load_daily_amp: 6.0,
            load_noise_std: 1.5,
            load_peak_hour: 20.0,
            pv_peak_kw: 60.0,
            pv_seasonal_amp: 0.6,
            pv_noise_std: 0.25,
            ar_coeff: 0.8,
            sunrise_hour: 6,
            sunset_hour: 18,
            summer_peak_doy: 1,
        }
    }
}

impl SynthParams {
    pub fn validate(&self, p_res_max: f64) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidSynth(m.to_string()));
        if self.days == 0 {
            return bad("days must be positive");
        }
        if !(self.pv_peak_kw >= 0.0 && self.pv_peak_kw <= p_res_max) {
            return bad("pv_peak_kw must lie in [0, p_res_max]");
        }
        if !(0.0..1.0).contains(&self.ar_coeff) {
            return bad("ar_coeff must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.pv_seasonal_amp) {
            return bad("pv_seasonal_amp must lie in [0, 1)");
        }
        if self.mean_load_kw < 0.0 || self.load_daily_amp < 0.0 {
            return bad("load parameters must be non-negative");
        }
        if self.load_noise_std < 0.0 || self.pv_noise_std < 0.0 {
            return bad("noise standard deviations must be non-negative");
        }
        if self.sunrise_hour >= self.sunset_hour || self.sunset_hour > 24 {
            return bad("need sunrise_hour < sunset_hour <= 24");
        }
        Ok(())
    }

    /// Seasonal PV factor in `[1 - amp, 1]` for a day of year.
    pub fn seasonal_factor(&self, doy: u32) -> f64 {
        let phase = 2.0 * PI * (doy as f64 - self.summer_peak_doy as f64) / 365.25;
        1.0 - self.pv_seasonal_amp * 0.5 * (1.0 - phase.cos())
    }

    /// Clear-sky PV shape in [0, 1] for an hour of day (sample taken mid-hour).
    pub fn daylight(&self, hour: u32) -> f64 {
        if hour < self.sunrise_hour || hour >= self.sunset_hour {
            return 0.0;
        }
        let span = (self.sunset_hour - self.sunrise_hour) as f64;
        let x = (hour - self.sunrise_hour) as f64 + 0.5;
        (PI * x / span).sin()
    }
}

/// Deterministic synthetic series; a pure function of `params`.
pub fn synth_series(params: &SynthParams) -> Result<ExogenousSeries, DataError> {
    // Validation against p_res_max is the caller's job; here we only need
    // internally consistent parameters.
    params.validate(f64::INFINITY)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let start = params.start.and_hms_opt(0, 0, 0).expect("midnight");
    let n = params.days * 24;
    let innovation = (1.0 - params.ar_coeff * params.ar_coeff).sqrt();

    let mut load = Vec::with_capacity(n);
    let mut pv = Vec::with_capacity(n);
    let mut load_noise = 0.0;
    let mut cloud = 0.0;
    for i in 0..n {
        let ts = start + Duration::hours(i as i64);
        let hour = ts.hour();
        // Both AR(1) processes advance every hour so noise streams are
        // independent of the daylight window.
        load_noise = params.ar_coeff * load_noise + innovation * unit.sample(&mut rng);
        cloud = params.ar_coeff * cloud + innovation * unit.sample(&mut rng);

        let phase = 2.0 * PI * (hour as f64 - params.load_peak_hour) / 24.0;
        let l = params.mean_load_kw + params.load_daily_amp * phase.cos() + params.load_noise_std * load_noise;
        load.push(l.max(0.0));

        let clear = params.pv_peak_kw * params.daylight(hour) * params.seasonal_factor(ts.ordinal());
        let factor = (1.0 + params.pv_noise_std * cloud).clamp(0.0, 1.0);
        pv.push((clear * factor).clamp(0.0, params.pv_peak_kw));
    }
    ExogenousSeries::hourly(start, load, pv)
}

/// Linear multiplicative drift on load (growth) and PV (degradation).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DriftSpec {
    pub load_growth_per_step: f64,
    pub pv_decay_per_step: f64,
}

pub fn apply_drift(series: &ExogenousSeries, spec: &DriftSpec) -> Result<ExogenousSeries, DataError> {
    if !spec.load_growth_per_step.is_finite() || !spec.pv_decay_per_step.is_finite() {
        return Err(DataError::InvalidDrift("rates must be finite".into()));
    }
    let mut load = Vec::with_capacity(series.len());
    let mut pv = Vec::with_capacity(series.len());
    for t in 0..series.len() {
        let lm = 1.0 + t as f64 * spec.load_growth_per_step;
        let pm = 1.0 - t as f64 * spec.pv_decay_per_step;
        if lm <= 0.0 {
            return Err(DataError::DriftMultiplier {
                step: t,
                multiplier: lm,
            });
        }
        if pm <= 0.0 {
            return Err(DataError::DriftMultiplier {
                step: t,
                multiplier: pm,
            });
        }
        load.push(series.load_kw[t] * lm);
        pv.push((series.pv_kw[t] * pm).max(0.0));
    }
    ExogenousSeries::new(series.timestamps.clone(), load, pv)
}

/// Cuts the series into the half-open instant ranges `[start, end)`.
pub fn split(
    series: &ExogenousSeries,
    ranges: &[(NaiveDateTime, NaiveDateTime)],
) -> Result<Vec<ExogenousSeries>, DataError> {
    let mut spans = Vec::with_capacity(ranges.len());
    for &(start, end) in ranges {
        match (series.index_of(start), series.index_of(end)) {
            (Some(a), Some(b)) if a < b => spans.push((a, b, start)),
            _ => return Err(DataError::RangeOutOfBounds { start, end }),
        }
    }
    let mut sorted = spans.clone();
    sorted.sort_by_key(|s| s.0);
    for w in sorted.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(DataError::OverlappingRanges(w[1].2));
        }
    }
    spans.iter().map(|&(a, b, _)| series.slice(a, b)).collect()
}

/// Range covering whole calendar days `[first_day, first_day + days)` of the series.
pub fn day_range(series: &ExogenousSeries, first_day: usize, days: usize) -> (NaiveDateTime, NaiveDateTime) {
    let start = series.start() + Duration::days(first_day as i64);
    (start, start + Duration::days(days as i64))
}

/// Mean daily PV energy per calendar month present in the series, `(month, kWh/day)`.
pub fn monthly_mean_daily_pv(series: &ExogenousSeries) -> Vec<(u32, f64)> {
    let mut acc: Vec<(u32, f64, usize)> = Vec::new();
    for (ts, pv) in series.timestamps.iter().zip(&series.pv_kw) {
        let m = ts.month();
        match acc.iter_mut().find(|a| a.0 == m) {
            Some(a) => {
                a.1 += pv;
                a.2 += 1;
            }
            None => acc.push((m, *pv, 1)),
        }
    }
    acc.into_iter().map(|(m, sum, n)| (m, sum / n as f64 * 24.0)).collect()
}
