//! Outlier exclusion, gap filling, sensor-failure screening and pair ratios.

use serde::{Deserialize, Serialize};

use super::ids::SourceId;
use super::series::{DaySeries, SensorStatus};
use crate::error::{Error, Result};

/// Empirical quantile with linear interpolation between order statistics.
/// `sorted` must be ascending and non-empty.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn sorted_finite(values: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    v
}

pub fn median(values: &[f64]) -> Option<f64> {
    let s = sorted_finite(values.iter().copied());
    (!s.is_empty()).then(|| quantile(&s, 0.5))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierBounds {
    pub lower: f64,
    pub upper: f64,
}

impl OutlierBounds {
    /// `[Q1 - k*IQR, Q3 + k*IQR]` of `reference`. `None` for an empty
    /// reference or a zero IQR, which disables masking.
    pub fn from_quantiles(reference: impl IntoIterator<Item = f64>, k: f64) -> Option<Self> {
        let s = sorted_finite(reference);
        if s.is_empty() {
            return None;
        }
        let (q1, q3) = (quantile(&s, 0.25), quantile(&s, 0.75));
        let iqr = q3 - q1;
        (iqr > 0.0).then(|| Self {
            lower: q1 - k * iqr,
            upper: q3 + k * iqr,
        })
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutlierPolicy {
    /// IQR multiple for the quantile rule.
    pub iqr_multiple: f64,
    /// Fixed `[lower, upper]` bounds by source id; they replace the quantile
    /// rule for that source.
    pub fixed: std::collections::BTreeMap<String, (f64, f64)>,
    /// Days with more masked samples than this fraction are unusable.
    pub max_masked_fraction: f64,
}

impl Default for OutlierPolicy {
    fn default() -> Self {
        Self {
            iqr_multiple: 5.0,
            fixed: Default::default(),
            max_masked_fraction: 0.2,
        }
    }
}

impl OutlierPolicy {
    /// Bounds for `source` given its pre-damage reference values.
    pub fn bounds_for(&self, source: &SourceId, reference: impl IntoIterator<Item = f64>) -> Option<OutlierBounds> {
        match self.fixed.get(&source.to_string()) {
            Some(&(lower, upper)) => Some(OutlierBounds { lower, upper }),
            None => OutlierBounds::from_quantiles(reference, self.iqr_multiple),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipReport {
    /// Samples masked by the bounds on this call.
    pub outliers: usize,
    /// Masked samples (outliers and pre-existing gaps) filled by interpolation.
    pub replaced: usize,
    pub usable: bool,
}

/// Masks samples outside `bounds` and fills every masked sample by linear
/// interpolation between the nearest valid neighbours (nearest value at the
/// edges). A day with more than `max_masked_fraction` masked, or with no
/// valid sample at all, is reported unusable.
pub fn clip_outliers(series: &DaySeries, bounds: Option<OutlierBounds>, max_masked_fraction: f64) -> (DaySeries, ClipReport) {
    let mut out = series.clone();
    let mut outliers = 0;
    if let Some(b) = bounds {
        for (v, ok) in out.values.iter_mut().zip(out.valid.iter_mut()) {
            if *ok && !b.contains(*v) {
                *ok = false;
                *v = f64::NAN;
                outliers += 1;
            }
        }
    }
    let replaced = out.masked_count();
    let usable = !out.is_empty()
        && replaced < out.len()
        && (replaced as f64) <= max_masked_fraction * out.len() as f64;
    if replaced > 0 && replaced < out.len() {
        interpolate_masked(&mut out.values, &out.valid);
    }
    (
        out,
        ClipReport {
            outliers,
            replaced,
            usable,
        },
    )
}

fn interpolate_masked(values: &mut [f64], valid: &[bool]) {
    let anchors: Vec<usize> = (0..values.len()).filter(|&i| valid[i]).collect();
    let (first, last) = (anchors[0], *anchors.last().expect("non-empty"));
    for i in 0..first {
        values[i] = values[first];
    }
    for i in last + 1..values.len() {
        values[i] = values[last];
    }
    for w in anchors.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (va, vb) = (values[a], values[b]);
        for i in a + 1..b {
            values[i] = va + (vb - va) * (i - a) as f64 / (b - a) as f64;
        }
    }
}

/// 1st-to-99th percentile spread of the valid samples.
pub fn robust_range(series: &DaySeries) -> Option<f64> {
    let s = sorted_finite(series.valid_values());
    (!s.is_empty()).then(|| quantile(&s, 0.99) - quantile(&s, 0.01))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorCheck {
    pub status: SensorStatus,
    pub today_range: f64,
    pub history_median_range: Option<f64>,
    pub note: String,
}

/// Default fraction of the historical range below which a day is flagged.
pub const FAILURE_FRACTION: f64 = 0.05;

/// Failed iff `today_range < fraction * history_median`. Exactly at the
/// threshold counts as ok.
pub fn classify_range(today_range: f64, history_ranges: &[f64], fraction: f64) -> SensorCheck {
    match median(history_ranges) {
        None => SensorCheck {
            status: SensorStatus::Ok,
            today_range,
            history_median_range: None,
            note: "insufficient history".into(),
        },
        Some(hist) => {
            let threshold = fraction * hist;
            let failed = today_range < threshold;
            SensorCheck {
                status: if failed { SensorStatus::Failed } else { SensorStatus::Ok },
                today_range,
                history_median_range: Some(hist),
                note: format!(
                    "robust range {today_range:.3} {} {threshold:.3} ({fraction} x historical median {hist:.3})",
                    if failed { "<" } else { ">=" }
                ),
            }
        }
    }
}

/// Compares today's robust range with the median range of earlier intact
/// days of the same source.
pub fn detect_sensor_failure(series: &DaySeries, history_ranges: &[f64], fraction: f64) -> SensorCheck {
    match robust_range(series) {
        Some(r) => classify_range(r, history_ranges, fraction),
        None => SensorCheck {
            status: SensorStatus::Failed,
            today_range: 0.0,
            history_median_range: median(history_ranges),
            note: "no valid samples".into(),
        },
    }
}

/// Default denominator floor for force ratios, in kN.
pub const RATIO_DENOM_FLOOR: f64 = 1.0;

/// Sample-wise upriver / downriver force ratio of one pair on one day.
/// Samples masked in either input, or with `|down| < denom_floor`, are
/// masked. A failed sensor on either side marks the ratio day failed.
pub fn compute_force_ratio(up: &DaySeries, down: &DaySeries, denom_floor: f64) -> Result<DaySeries> {
    let (cu, cd) = match (up.source.as_cable(), down.source.as_cable()) {
        (Some(u), Some(d)) => (u, d),
        _ => return Err(Error::Usage("force ratios need two cable series".into())),
    };
    if cu.pair() != cd.pair() || cu.line == cd.line || cu.line != super::ids::Line::Upriver {
        return Err(Error::Usage(format!("{cu} / {cd} is not an upriver/downriver pair")));
    }
    if up.date != down.date {
        return Err(Error::Usage(format!("ratio of {cu} on {} with {cd} on {}", up.date, down.date)));
    }
    if up.len() != down.len() || up.sample_rate != down.sample_rate {
        return Err(Error::Usage(format!(
            "{cu} and {cd} on {} are not time-aligned ({} vs {} samples)",
            up.date,
            up.len(),
            down.len()
        )));
    }
    let mut values = Vec::with_capacity(up.len());
    let mut valid = Vec::with_capacity(up.len());
    for t in 0..up.len() {
        let ok = up.valid[t] && down.valid[t] && down.values[t].abs() >= denom_floor;
        values.push(if ok { up.values[t] / down.values[t] } else { f64::NAN });
        valid.push(ok);
    }
    let status = if up.status == SensorStatus::Failed || down.status == SensorStatus::Failed {
        SensorStatus::Failed
    } else {
        SensorStatus::Ok
    };
    Ok(DaySeries {
        source: SourceId::Pair(cu.pair()),
        date: up.date,
        sample_rate: up.sample_rate,
        values,
        valid,
        status,
    })
}
