//! Ingest, cleaning, segmentation and dataset assembly.

mod dataset;
pub mod ids;
mod prepare;
pub mod preprocess;
mod segment;
pub mod series;

use serde::{Deserialize, Serialize};

pub use dataset::{build_dataset, Dataset, Exclusion, LabelMap, Split, SplitConfig};
pub use ids::{CableId, Line, PairId, SourceId};
pub use prepare::{prepare, DayReport, PreprocessConfig, Prepared};
pub use preprocess::{
    clip_outliers, compute_force_ratio, detect_sensor_failure, OutlierBounds, OutlierPolicy, SensorCheck,
};
pub use segment::{segment_day, Provenance, Segment};
pub use series::{DEFAULT_SAMPLE_RATE_HZ, load_day_records, load_dir, samples_per_day, write_day_csv, DaySeries, SensorStatus};

/// Input representation: raw cable forces (one class per cable) or pair
/// force ratios (one class per pair).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Forces,
    Ratios,
}

impl Scenario {
    pub const BOTH: [Scenario; 2] = [Scenario::Forces, Scenario::Ratios];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Forces => "forces",
            Scenario::Ratios => "ratios",
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scenario {
    type Err = crate::Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "forces" => Ok(Scenario::Forces),
            "ratios" => Ok(Scenario::Ratios),
            _ => Err(crate::Error::Usage(format!("unknown scenario `{s}` (forces or ratios)"))),
        }
    }
}
