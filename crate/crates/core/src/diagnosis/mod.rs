//! From per-class accuracies to a damaged-cable verdict.

mod report;
mod suspects;

pub use report::{
    diagnose, parse_structured, render_human, render_structured, replay_published_tables, ClassAccuracy,
    DiagnosisReport, ReportProvenance, ScenarioReport, REPORT_SCHEMA_VERSION,
};
pub use suspects::{
    combine_scenarios, combine_with_evidence, flag_suspects, Candidate, Confidence, RatioShift, SuspectEntry,
    SuspectSet, Thresholds, Verdict,
};
