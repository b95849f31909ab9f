use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::ids::SourceId;
use super::series::DaySeries;
use super::Scenario;
use crate::error::{Error, Result};

/// Where a window came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Provenance {
    pub source: SourceId,
    pub date: NaiveDate,
    /// Index of the first sample within the day.
    pub offset: usize,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}@{}+{}", self.source, self.date, self.offset)
    }
}

/// One labeled window `(X_i, Y_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub values: Vec<f64>,
    pub label: usize,
    pub scenario: Scenario,
    pub provenance: Provenance,
}

/// Cuts a filled day into consecutive non-overlapping windows of `len`
/// samples; the trailing remainder is dropped.
pub fn segment_day(series: &DaySeries, len: usize, label: usize, scenario: Scenario) -> Result<Vec<Segment>> {
    if len == 0 {
        return Err(Error::Usage("segment length must be >= 1".into()));
    }
    if !series.is_filled() {
        return Err(Error::Usage(format!(
            "{} on {} still has unfilled samples; clean it before segmenting",
            series.source, series.date
        )));
    }
    if series.len() < len {
        log::warn!(
            "{} on {}: {} samples is shorter than one {len}-sample window",
            series.source,
            series.date,
            series.len()
        );
    }
    Ok(series
        .values
        .chunks_exact(len)
        .enumerate()
        .map(|(k, w)| Segment {
            values: w.to_vec(),
            label,
            scenario,
            provenance: Provenance {
                source: series.source.clone(),
                date: series.date,
                offset: k * len,
            },
        })
        .collect())
}
