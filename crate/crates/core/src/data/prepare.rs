//! Per-source cleaning of raw day records into the series both scenarios
//! segment: outlier masking and filling, sensor screening, pair ratios.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::ids::{Line, SourceId};
use super::preprocess::{
    clip_outliers, compute_force_ratio, detect_sensor_failure, robust_range, OutlierPolicy, SensorCheck,
    FAILURE_FRACTION, RATIO_DENOM_FLOOR,
};
use super::series::{DaySeries, SensorStatus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub outliers: OutlierPolicy,
    pub failure_fraction: f64,
    pub ratio_denom_floor: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            outliers: OutlierPolicy::default(),
            failure_fraction: FAILURE_FRACTION,
            ratio_denom_floor: RATIO_DENOM_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayReport {
    pub source: SourceId,
    pub date: NaiveDate,
    pub outliers: usize,
    pub replaced: usize,
    pub usable: bool,
    pub sensor: Option<SensorCheck>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    /// Cleaned cable days. Failed days are kept with their status so the
    /// dataset can exclude the cable from diagnosis.
    pub cables: Vec<DaySeries>,
    /// Cleaned pair-ratio days, failed when either cable failed.
    pub ratios: Vec<DaySeries>,
    pub reports: Vec<DayReport>,
}

impl Prepared {
    pub fn days(&self, scenario: super::Scenario) -> &[DaySeries] {
        match scenario {
            super::Scenario::Forces => &self.cables,
            super::Scenario::Ratios => &self.ratios,
        }
    }
}

fn group_by_source(days: Vec<DaySeries>) -> BTreeMap<SourceId, Vec<DaySeries>> {
    let mut by: BTreeMap<SourceId, Vec<DaySeries>> = BTreeMap::new();
    for d in days {
        by.entry(d.source.clone()).or_default().push(d);
    }
    for v in by.values_mut() {
        v.sort_by_key(|d| d.date);
    }
    by
}

/// Cleans one source's days in date order. Pre-damage days that are
/// unusable or failed are dropped; post-damage ones are kept as failed so
/// they mark the source for exclusion.
fn clean_source(
    days: Vec<DaySeries>,
    cfg: &PreprocessConfig,
    damage_from: Option<NaiveDate>,
    // cable sources are screened for sensor failure and clipped to force
    // bounds; ratio sources only get their masked samples filled
    cable: bool,
    reports: &mut Vec<DayReport>,
) -> Result<Vec<DaySeries>> {
    let is_post = |d: &DaySeries| damage_from.is_some_and(|f| d.date >= f);
    let mut history = Vec::new();
    let mut checks = Vec::with_capacity(days.len());
    for d in &days {
        let check = cable.then(|| detect_sensor_failure(d, &history, cfg.failure_fraction));
        let ok = check.as_ref().is_none_or(|c| c.status == SensorStatus::Ok) && d.status == SensorStatus::Ok;
        if ok && !is_post(d) {
            if let Some(r) = robust_range(d) {
                history.push(r);
            }
        }
        checks.push(check);
    }

    let source = days.first().map(|d| d.source.clone());
    let reference = days
        .iter()
        .zip(&checks)
        .filter(|(d, c)| !is_post(d) && d.status == SensorStatus::Ok && c.as_ref().is_none_or(|c| c.status == SensorStatus::Ok))
        .flat_map(|(d, _)| d.valid_values());
    let bounds = match &source {
        Some(s) if cable => cfg.outliers.bounds_for(s, reference),
        _ => None,
    };

    let mut out = Vec::with_capacity(days.len());
    for (d, check) in days.iter().zip(checks) {
        let (mut clean, rep) = clip_outliers(d, bounds, cfg.outliers.max_masked_fraction);
        if check.as_ref().is_some_and(|c| c.status == SensorStatus::Failed) {
            clean.status = SensorStatus::Failed;
        }
        reports.push(DayReport {
            source: d.source.clone(),
            date: d.date,
            outliers: rep.outliers,
            replaced: rep.replaced,
            usable: rep.usable,
            sensor: check,
        });
        if !rep.usable {
            if is_post(d) {
                log::warn!("{} on {}: unusable post-damage day, treated as failed", d.source, d.date);
                clean.status = SensorStatus::Failed;
                if !clean.is_filled() {
                    clean.values.iter_mut().for_each(|v| {
                        if !v.is_finite() {
                            *v = 0.0;
                        }
                    });
                }
                out.push(clean);
            } else {
                log::warn!("{} on {}: {} of {} samples masked, day dropped", d.source, d.date, rep.replaced, d.len());
            }
            continue;
        }
        if clean.status == SensorStatus::Failed && !is_post(d) {
            log::warn!("{} on {}: sensor failure before the damage date, day dropped", d.source, d.date);
            continue;
        }
        out.push(clean);
    }
    Ok(out)
}

/// Runs the cleaning chain over raw cable days.
pub fn prepare(raw: Vec<DaySeries>, cfg: &PreprocessConfig, damage_from: Option<NaiveDate>) -> Result<Prepared> {
    if let Some(d) = raw.iter().find(|d| d.source.as_cable().is_none()) {
        return Err(Error::Usage(format!("expected cable series, got {}", d.source)));
    }
    let mut reports = Vec::new();
    let mut cables = Vec::new();
    for (_, days) in group_by_source(raw) {
        cables.extend(clean_source(days, cfg, damage_from, true, &mut reports)?);
    }

    let mut by_key: BTreeMap<(super::ids::PairId, NaiveDate), [Option<&DaySeries>; 2]> = BTreeMap::new();
    for d in &cables {
        let c = d.source.as_cable().expect("checked above");
        let slot = by_key.entry((c.pair(), d.date)).or_default();
        slot[(c.line == Line::Downriver) as usize] = Some(d);
    }
    let mut raw_ratios = Vec::new();
    for ((pair, date), slot) in by_key {
        match slot {
            [Some(up), Some(down)] => raw_ratios.push(compute_force_ratio(up, down, cfg.ratio_denom_floor)?),
            _ => log::info!("{pair} on {date}: one cable missing, no ratio"),
        }
    }
    let mut ratios = Vec::new();
    for (_, days) in group_by_source(raw_ratios) {
        // ratio days inherit failure from their cables
        ratios.extend(clean_source(days, cfg, damage_from, false, &mut reports)?);
    }
    Ok(Prepared {
        cables,
        ratios,
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ids::CableId;

    fn day(id: &str, date: NaiveDate, amp: f64) -> DaySeries {
        let c: CableId = id.parse().unwrap();
        let v = (0..400).map(|t| 3000.0 + amp * (t as f64 * 0.07).sin()).collect();
        DaySeries::new(c, date, 2.0, v)
    }

    #[test]
    fn failure_after_damage_marks_cable_and_pair() {
        let d0 = NaiveDate::from_ymd_opt(2006, 5, 13).unwrap();
        let dates: Vec<NaiveDate> = (0..4).map(|i| d0 + chrono::Days::new(i)).collect();
        let mut raw = Vec::new();
        for (i, &d) in dates.iter().enumerate() {
            raw.push(day("SJS08", d, 50.0));
            raw.push(day("SJX08", d, if i == 3 { 1.0 } else { 50.0 }));
        }
        let p = prepare(raw, &PreprocessConfig::default(), Some(dates[3])).unwrap();
        let failed: Vec<_> = p.cables.iter().filter(|d| d.status == SensorStatus::Failed).collect();
        assert_eq!(failed.len(), 1);
        assert_eq!(failed[0].source.to_string(), "SJX08");
        assert_eq!(p.ratios.len(), 4);
        assert_eq!(p.ratios[3].status, SensorStatus::Failed);
        assert!(p.ratios[..3].iter().all(|r| r.status == SensorStatus::Ok));
        assert!(p.cables.iter().all(|d| d.is_filled()));
    }

    #[test]
    fn pre_damage_failure_is_dropped() {
        let d0 = NaiveDate::from_ymd_opt(2006, 5, 13).unwrap();
        let raw = vec![
            day("SJS08", d0, 50.0),
            day("SJS08", d0 + chrono::Days::new(1), 0.5),
            day("SJS08", d0 + chrono::Days::new(2), 50.0),
        ];
        let p = prepare(raw, &PreprocessConfig::default(), None).unwrap();
        assert_eq!(p.cables.len(), 2);
        assert_eq!(p.reports.len(), 3);
        assert_eq!(p.reports[1].sensor.as_ref().unwrap().status, SensorStatus::Failed);
    }
}
