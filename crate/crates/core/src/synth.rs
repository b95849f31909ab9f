//! Synthetic cable-force records for a set of cable pairs.
//!
//! Each line's force is a transferable part (baseline plus its share of
//! passing vehicle loads) and an ambient part (daily sinusoid plus sensor
//! noise). Both cables of a pair see the same vehicles, split between them
//! by lane. A wire rupture moves part of the damaged cable's transferable
//! force to its partner; a sensor failure replaces the record with a small
//! drifting signal.

use std::f64::consts::PI;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::data::series::{check_sample_rate, samples_per_day, SECONDS_PER_DAY};
use crate::data::{CableId, DaySeries, Line, PairId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSpec {
    pub pair: PairId,
    /// Baseline force of the upriver and downriver cable, kN.
    pub baseline: [f64; 2],
    /// Daily sinusoid amplitude, kN.
    pub amplitude: f64,
    /// Daily sinusoid phase, radians.
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrafficSpec {
    pub vehicles_per_hour: f64,
    /// Mean and standard deviation of the peak pair load of one vehicle, kN.
    pub load_mean: f64,
    pub load_std: f64,
    /// Upriver share of the load for each lane; lanes are equally likely.
    pub lane_split: Vec<f64>,
    /// Half-sine pulse duration, seconds.
    pub pulse_seconds: f64,
}

impl Default for TrafficSpec {
    fn default() -> Self {
        Self {
            vehicles_per_hour: 120.0,
            load_mean: 60.0,
            load_std: 20.0,
            lane_split: vec![0.6, 0.4],
            pulse_seconds: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultKind {
    /// Share `severity` of the cable's transferable force moves to its partner.
    WireRupture { severity: f64 },
    /// The record becomes a drift with peak-to-peak `residual` kN around
    /// `level` kN (default: a tenth of the cable's baseline).
    SensorFailure {
        residual: f64,
        #[serde(default)]
        level: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    #[serde(flatten)]
    pub kind: FaultKind,
    pub target: CableId,
    /// First affected day.
    pub onset: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeSpec {
    pub pairs: Vec<PairSpec>,
    #[serde(default)]
    pub traffic: TrafficSpec,
    pub noise_std: f64,
    pub sample_rate: f64,
    pub days: Vec<NaiveDate>,
    pub seed: u64,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
}

impl BridgeSpec {
    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        check_sample_rate(self.sample_rate).map_err(|e| Error::Spec(e.to_string()))?;
        if self.pairs.is_empty() {
            v.push("no pairs".to_string());
        }
        for p in &self.pairs {
            if !p.baseline.iter().all(|&b| b > 0.0) {
                v.push(format!("{}: baselines must be > 0", p.pair));
            }
            if !(p.amplitude >= 0.0) {
                v.push(format!("{}: amplitude must be >= 0", p.pair));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.pairs {
            if !seen.insert(&p.pair) {
                v.push(format!("{} listed twice", p.pair));
            }
        }
        let t = &self.traffic;
        if t.lane_split.is_empty() || !t.lane_split.iter().all(|&r| r > 0.0 && r < 1.0) {
            v.push("traffic.lane_split values must lie in (0, 1)".into());
        }
        if !(t.vehicles_per_hour >= 0.0) || !(t.load_std >= 0.0) || !(t.pulse_seconds > 0.0) {
            v.push("traffic rates, load spread and pulse duration must be non-negative".into());
        }
        if !(self.noise_std >= 0.0) {
            v.push("noise_std must be >= 0".into());
        }
        if self.days.is_empty() {
            v.push("no days".into());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Spec(v.join("; ")))
        }
    }

    /// Fixed force thresholds per cable at `[lo, hi]` times its baseline,
    /// keyed like `OutlierPolicy::fixed`.
    pub fn force_bounds(&self, lo: f64, hi: f64) -> std::collections::BTreeMap<String, (f64, f64)> {
        self.pairs
            .iter()
            .flat_map(|p| {
                [Line::Upriver, Line::Downriver].map(|l| {
                    let b = p.baseline[l as usize];
                    (p.pair.cable(l).to_string(), (lo * b, hi * b))
                })
            })
            .collect()
    }

    pub fn cables(&self) -> Vec<CableId> {
        let mut c: Vec<CableId> = self
            .pairs
            .iter()
            .flat_map(|p| [p.pair.cable(Line::Upriver), p.pair.cable(Line::Downriver)])
            .collect();
        c.sort();
        c
    }

    /// Seven pairs `SJ08`..`SJ14`, pair baselines about 8% apart with
    /// up/down ratios spread over 0.91..1.09, nine intact days from
    /// 2006-05-13 and one later day.
    pub fn seven_pairs(seed: u64, sample_rate: f64) -> Self {
        let start = NaiveDate::from_ymd_opt(2006, 5, 13).expect("valid date");
        let mut days: Vec<NaiveDate> = (0..9).map(|i| start + chrono::Days::new(i)).collect();
        days.push(NaiveDate::from_ymd_opt(2011, 11, 1).expect("valid date"));
        // Neighbouring pairs get different ratios. The lowest ratio sits on
        // the lowest-force pair so that its upriver cable is both the
        // weakest cable and the weakest ratio: a classifier trained on
        // intact data maps anything below its range to that one class.
        const RATIO: [f64; 7] = [0.91, 1.03, 0.97, 1.09, 0.94, 1.06, 1.0];
        let pairs = (8..=14)
            .map(|i: u32| {
                let k = (i - 8) as usize;
                let b = 2400.0 * 1.08f64.powi(k as i32);
                let r = RATIO[k];
                PairSpec {
                    pair: PairId::new("SJ", i).expect("valid id"),
                    baseline: [2.0 * b * r / (1.0 + r), 2.0 * b / (1.0 + r)],
                    amplitude: 0.03 * b,
                    phase: 0.9 * k as f64,
                }
            })
            .collect();
        Self {
            pairs,
            traffic: TrafficSpec::default(),
            noise_std: 5.0,
            sample_rate,
            days,
            seed,
            faults: Vec::new(),
        }
    }
}

/// FNV-1a over the key; selects an independent ChaCha stream per
/// (pair, day, purpose) so generation order never matters.
fn stream_id(parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in parts {
        for b in p.bytes().chain([0xff]) {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

fn stream(seed: u64, parts: &[&str]) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(parts));
    rng
}

/// One pair's day split into components, index 0 upriver, 1 downriver.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDay {
    pub pair: PairId,
    pub date: NaiveDate,
    pub transferable: [Vec<f64>; 2],
    pub ambient: [Vec<f64>; 2],
}

impl PairDay {
    pub fn total(&self, line: Line) -> Vec<f64> {
        let i = line as usize;
        self.transferable[i].iter().zip(&self.ambient[i]).map(|(a, b)| a + b).collect()
    }

    /// Moves `severity` of the `damaged` line's transferable force to its
    /// partner, sample by sample; the pair sum is unchanged.
    pub fn apply_rupture(&mut self, damaged: Line, severity: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&severity) {
            return Err(Error::Spec(format!("rupture severity {severity} is outside [0, 1]")));
        }
        let d = damaged as usize;
        let [a, b] = &mut self.transferable;
        let (dam, par) = if d == 0 { (a, b) } else { (b, a) };
        for (x, y) in dam.iter_mut().zip(par.iter_mut()) {
            let moved = severity * *x;
            *x -= moved;
            *y += moved;
        }
        Ok(())
    }
}

fn generate_pair_day(spec: &BridgeSpec, ps: &PairSpec, date: NaiveDate) -> Result<PairDay> {
    let n = samples_per_day(spec.sample_rate);
    let date_s = date.to_string();
    let pair_s = ps.pair.to_string();
    let mut traffic_rng = stream(spec.seed, &["traffic", &pair_s, &date_s]);
    let mut transferable = [vec![ps.baseline[0]; n], vec![ps.baseline[1]; n]];

    let t = &spec.traffic;
    if t.vehicles_per_hour > 0.0 && t.load_mean > 0.0 {
        let gap = Exp::new(t.vehicles_per_hour / 3600.0).map_err(|e| Error::Spec(e.to_string()))?;
        let load = Normal::new(t.load_mean, t.load_std).map_err(|e| Error::Spec(e.to_string()))?;
        let mut arrival = gap.sample(&mut traffic_rng);
        while arrival < SECONDS_PER_DAY as f64 {
            let peak = load.sample(&mut traffic_rng).max(0.0);
            let rho = t.lane_split[traffic_rng.random_range(0..t.lane_split.len())];
            let first = (arrival * spec.sample_rate).ceil() as usize;
            let last = (((arrival + t.pulse_seconds) * spec.sample_rate).floor() as usize).min(n.saturating_sub(1));
            for k in first..=last {
                let phase = (k as f64 / spec.sample_rate - arrival) / t.pulse_seconds;
                if (0.0..=1.0).contains(&phase) {
                    let f = peak * (PI * phase).sin();
                    transferable[0][k] += rho * f;
                    transferable[1][k] += (1.0 - rho) * f;
                }
            }
            arrival += gap.sample(&mut traffic_rng);
        }
    }

    let mut ambient = [vec![0.0; n], vec![0.0; n]];
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Spec(e.to_string()))?;
    for (line, amb) in ambient.iter_mut().enumerate() {
        let mut rng = stream(spec.seed, &["noise", &pair_s, &date_s, &line.to_string()]);
        for (k, a) in amb.iter_mut().enumerate() {
            let secs = k as f64 / spec.sample_rate;
            *a = ps.amplitude * (2.0 * PI * secs / SECONDS_PER_DAY as f64 + ps.phase).sin();
            if spec.noise_std > 0.0 {
                *a += noise.sample(&mut rng);
            }
        }
    }
    Ok(PairDay {
        pair: ps.pair.clone(),
        date,
        transferable,
        ambient,
    })
}

/// Replaces the record with a random-walk drift rescaled to a peak-to-peak
/// span of `residual` around `level`.
pub fn apply_sensor_failure<R: Rng + ?Sized>(values: &mut [f64], residual: f64, level: f64, rng: &mut R) {
    let step = Normal::new(0.0, 1.0).expect("unit normal");
    let mut walk = Vec::with_capacity(values.len());
    let mut x = 0.0;
    for _ in 0..values.len() {
        x += step.sample(rng);
        walk.push(x);
    }
    let (lo, hi) = walk.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &w| (a.min(w), b.max(w)));
    let span = hi - lo;
    for (v, w) in values.iter_mut().zip(&walk) {
        let centered = if span > 0.0 { (w - lo) / span - 0.5 } else { 0.0 };
        *v = level + residual * centered;
    }
}

fn check_faults(spec: &BridgeSpec, faults: &[FaultSpec]) -> Result<()> {
    let cables = spec.cables();
    let (first, last) = (spec.days.iter().min(), spec.days.iter().max());
    for (i, f) in faults.iter().enumerate() {
        if !cables.contains(&f.target) {
            return Err(Error::Spec(format!("fault target {} is not part of the bridge", f.target)));
        }
        if first.is_some_and(|d| f.onset < *d) || last.is_some_and(|d| f.onset > *d) {
            return Err(Error::Spec(format!("fault onset {} on {} is outside the generated days", f.onset, f.target)));
        }
        match f.kind {
            FaultKind::WireRupture { severity } if !(0.0..=1.0).contains(&severity) => {
                return Err(Error::Spec(format!("rupture severity {severity} on {} is outside [0, 1]", f.target)));
            }
            FaultKind::SensorFailure { residual, .. } if !(residual >= 0.0) => {
                return Err(Error::Spec(format!("failure residual {residual} on {} must be >= 0", f.target)));
            }
            _ => {}
        }
        if let Some(g) = faults[..i].iter().find(|g| g.target == f.target) {
            return Err(Error::Spec(format!(
                "contradictory faults on {}: {:?} and {:?}",
                f.target, g.kind, f.kind
            )));
        }
        if matches!(f.kind, FaultKind::WireRupture { .. })
            && faults[..i]
                .iter()
                .any(|g| matches!(g.kind, FaultKind::WireRupture { .. }) && g.target.pair() == f.target.pair())
        {
            return Err(Error::Spec(format!("both cables of {} rupture", f.target.pair())));
        }
    }
    Ok(())
}

/// Generates every cable's record for every day, sorted by (cable, date).
/// `faults` are applied on top of the ones listed in the spec.
pub fn generate(spec: &BridgeSpec, faults: &[FaultSpec]) -> Result<Vec<DaySeries>> {
    spec.validate()?;
    let all: Vec<FaultSpec> = spec.faults.iter().chain(faults).cloned().collect();
    check_faults(spec, &all)?;
    let mut out = Vec::with_capacity(spec.pairs.len() * 2 * spec.days.len());
    for ps in &spec.pairs {
        for &date in &spec.days {
            let mut day = generate_pair_day(spec, ps, date)?;
            for f in all.iter().filter(|f| f.target.pair() == ps.pair && date >= f.onset) {
                if let FaultKind::WireRupture { severity } = f.kind {
                    day.apply_rupture(f.target.line, severity)?;
                }
            }
            for line in [Line::Upriver, Line::Downriver] {
                let cable = ps.pair.cable(line);
                let mut values = day.total(line);
                for f in all.iter().filter(|f| f.target == cable && date >= f.onset) {
                    if let FaultKind::SensorFailure { residual, level } = f.kind {
                        let level = level.unwrap_or(0.1 * ps.baseline[line as usize]);
                        let mut rng = stream(spec.seed, &["failure", &cable.to_string(), &date.to_string()]);
                        apply_sensor_failure(&mut values, residual, level, &mut rng);
                    }
                }
                out.push(DaySeries::new(cable, date, spec.sample_rate, values));
            }
        }
    }
    out.sort_by(|a, b| (&a.source, a.date).cmp(&(&b.source, b.date)));
    Ok(out)
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub source: CableId,
    pub date: NaiveDate,
    pub samples: usize,
}

/// What a synthetic run wrote, with the spec (faults included) that
/// produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub spec: BridgeSpec,
    /// Earliest fault onset, or the last day when there is no fault.
    pub test_from: Option<NaiveDate>,
    pub files: Vec<ManifestEntry>,
}

/// Generates the records and writes one CSV per (cable, day) plus
/// `manifest.json` into `dir`.
pub fn write_dataset(spec: &BridgeSpec, dir: &std::path::Path) -> Result<SynthManifest> {
    let days = generate(spec, &[])?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::with_capacity(days.len());
    for d in &days {
        let name = d.file_name();
        crate::data::write_day_csv(d, &dir.join(&name))?;
        files.push(ManifestEntry {
            file: name,
            source: d.source.as_cable().expect("synthetic series are cables").clone(),
            date: d.date,
            samples: d.len(),
        });
    }
    let test_from = spec.faults.iter().map(|f| f.onset).min().or_else(|| spec.days.iter().max().copied());
    let manifest = SynthManifest {
        spec: spec.clone(),
        test_from,
        files,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
