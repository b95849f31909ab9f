//! Day records and their CSV layout: header `timestamp,cable_id,force_kN`,
//! ISO-8601 UTC timestamps on the sampling grid, one row per sample.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, NaiveDateTime, SecondsFormat, TimeDelta, Utc};
use serde::{Deserialize, Serialize};

use super::ids::{CableId, SourceId};
use crate::error::{Error, Result};

/// Load-cell sampling rate of the monitoring system.
pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 2.0;
pub const SECONDS_PER_DAY: u32 = 86_400;

pub const CSV_HEADER: [&str; 3] = ["timestamp", "cable_id", "force_kN"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorStatus {
    Ok,
    Failed,
}

/// One source's record for one calendar day.
///
/// `values[t]` is only meaningful where `valid[t]`; masked entries hold NaN
/// until preprocessing fills them by interpolation (after which `valid`
/// still records which samples were replaced).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaySeries {
    pub source: SourceId,
    pub date: NaiveDate,
    pub sample_rate: f64,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
    pub status: SensorStatus,
}

/// Number of samples in a full day at `rate` Hz.
pub fn samples_per_day(rate: f64) -> usize {
    (SECONDS_PER_DAY as f64 * rate).round() as usize
}

pub(crate) fn check_sample_rate(rate: f64) -> Result<()> {
    let n = SECONDS_PER_DAY as f64 * rate;
    if !(rate > 0.0) || !rate.is_finite() || (n - n.round()).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "sample_rate = {rate} Hz does not give a whole number of samples per day"
        )));
    }
    Ok(())
}

impl DaySeries {
    /// A fully valid series; non-finite entries are masked.
    pub fn new(source: impl Into<SourceId>, date: NaiveDate, sample_rate: f64, values: Vec<f64>) -> Self {
        let valid = values.iter().map(|v| v.is_finite()).collect();
        let values = values.into_iter().map(|v| if v.is_finite() { v } else { f64::NAN }).collect();
        Self {
            source: source.into(),
            date,
            sample_rate,
            values,
            valid,
            status: SensorStatus::Ok,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn masked_count(&self) -> usize {
        self.valid.iter().filter(|v| !**v).count()
    }

    /// Values at unmasked positions.
    pub fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().zip(&self.valid).filter(|(_, ok)| **ok).map(|(v, _)| *v)
    }

    /// True once every entry holds a finite number.
    pub fn is_filled(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn file_name(&self) -> String {
        format!("{}_{}.csv", self.source, self.date.format("%Y-%m-%d"))
    }

    fn timestamp(&self, t: usize) -> DateTime<Utc> {
        let midnight = self.date.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc();
        let millis = (t as f64 * 1000.0 / self.sample_rate).round() as i64;
        midnight + TimeDelta::milliseconds(millis)
    }
}

fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f")
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S%.f"))
        .ok()
        .map(|n| n.and_utc())
}

/// Reads every (cable, day) record in one CSV file. Rows may interleave
/// cables but each cable's timestamps must increase. Missing grid points
/// and NaN or empty forces are masked. A day's length runs to its last
/// recorded sample.
pub fn load_day_records(path: &Path, sample_rate: f64) -> Result<Vec<DaySeries>> {
    check_sample_rate(sample_rate)?;
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        log::warn!("{}: empty file", path.display());
        return Ok(Vec::new());
    }
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(parse_err(1, format!("expected header `{}`", CSV_HEADER.join(","))));
    }

    let day_len = samples_per_day(sample_rate);
    // (cable, date) -> (values by grid index, last index)
    let mut days: BTreeMap<(CableId, NaiveDate), (Vec<Option<f64>>, usize)> = BTreeMap::new();
    let mut order: Vec<(CableId, NaiveDate)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 3 {
            return Err(parse_err(line, format!("expected 3 fields, found {}", record.len())));
        }
        let ts = parse_timestamp(&record[0])
            .ok_or_else(|| parse_err(line, format!("invalid timestamp `{}`", &record[0])))?;
        let cable: CableId = record[1]
            .parse()
            .map_err(|_| parse_err(line, format!("unknown cable id `{}`", &record[1])))?;
        let force = match &record[2] {
            "" => None,
            s => {
                let v: f64 = s.parse().map_err(|_| parse_err(line, format!("invalid force `{s}`")))?;
                v.is_finite().then_some(v)
            }
        };
        let date = ts.date_naive();
        let secs = (ts - date.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc()).num_milliseconds() as f64 / 1000.0;
        let pos = secs * sample_rate;
        let idx = pos.round();
        if (pos - idx).abs() > 1e-6 {
            return Err(parse_err(line, format!("timestamp `{}` is off the {sample_rate} Hz grid", &record[0])));
        }
        let idx = idx as usize;
        debug_assert!(idx < day_len);
        let key = (cable, date);
        let entry = days.entry(key.clone()).or_insert_with(|| {
            order.push(key.clone());
            (Vec::new(), 0)
        });
        if !entry.0.is_empty() && idx <= entry.1 {
            return Err(parse_err(
                line,
                format!("out-of-order timestamp `{}` for {}", &record[0], key.0),
            ));
        }
        if entry.0.len() <= idx {
            entry.0.resize(idx + 1, None);
        }
        entry.0[idx] = force;
        entry.1 = idx;
    }
    if order.is_empty() {
        log::warn!("{}: no data rows", path.display());
    }

    Ok(order
        .into_iter()
        .map(|key| {
            let (raw, _) = days.remove(&key).expect("key recorded");
            let values: Vec<f64> = raw.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
            DaySeries::new(key.0, key.1, sample_rate, values)
        })
        .collect())
}

/// Writes a cable series in the ingest layout. Masked samples are written
/// with an empty force field.
pub fn write_day_csv(series: &DaySeries, path: &Path) -> Result<()> {
    let cable = series
        .source
        .as_cable()
        .ok_or_else(|| Error::Usage(format!("only cable series are written as CSV, got {}", series.source)))?
        .to_string();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(CSV_HEADER).map_err(|e| csv_io(path, e))?;
    for (t, (v, ok)) in series.values.iter().zip(&series.valid).enumerate() {
        let ts = series.timestamp(t).to_rfc3339_opts(SecondsFormat::AutoSi, true);
        let force = if *ok { v.to_string() } else { String::new() };
        w.write_record([ts.as_str(), cable.as_str(), force.as_str()]).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    }
}

/// All `*.csv` files directly inside `dir`, sorted by name.
pub fn csv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads every CSV in `dir`, sorted by (source, date).
pub fn load_dir(dir: &Path, sample_rate: f64) -> Result<Vec<DaySeries>> {
    let mut out = Vec::new();
    for f in csv_files(dir)? {
        out.extend(load_day_records(&f, sample_rate)?);
    }
    out.sort_by(|a, b| (&a.source, a.date).cmp(&(&b.source, b.date)));
    Ok(out)
}
