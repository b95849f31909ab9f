use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use staytsc::data::{load_dir, CableId, Scenario};
use staytsc::diagnosis::{
    diagnose, render_human, render_structured, replay_published_tables, DiagnosisReport, ReportProvenance,
};
use staytsc::model::Checkpoint;
use staytsc::pipeline::{
    build_scenario_dataset, check_checkpoint, evaluate_periods, prepare_run, ratio_shifts, scenario_report,
    train_scenario, DatasetManifest, Profile, RunConfig,
};
use staytsc::synth::{write_dataset, BridgeSpec, FaultKind, FaultSpec};
use staytsc::Error;

const CONFIG_FILE: &str = "config.json";

#[derive(Parser, Debug)]
#[command(name = "staytsc", version, about = "Stay-cable damage detection from cable-force records")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Run configuration (JSON, may be partial). Defaults to <out>/config.json when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Restrict to one scenario.
    #[arg(long, global = true, value_parser = parse_scenario)]
    scenario: Option<Scenario>,
    /// Base profile the configuration is laid over.
    #[arg(long, global = true, value_parser = parse_profile)]
    profile: Option<Profile>,
    /// Seed for splits, initialization and (for synth) generation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory; every output lands here.
    #[arg(long, global = true, env = "STAYTSC_OUT")]
    out: Option<PathBuf>,
    /// Raw CSV directory, overriding the configuration.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// First day of the period under test, overriding the configuration.
    #[arg(long, global = true)]
    damage_from: Option<NaiveDate>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic bridge data set.
    Synth(SynthArgs),
    /// Clean the raw records and write the data set manifests.
    Ingest,
    /// Train one classifier per scenario.
    Train,
    /// Score stored checkpoints on both test periods.
    Evaluate,
    /// Name the damaged cable from post-period accuracies.
    Diagnose {
        /// Run the decision rule on the bundled published accuracy tables.
        #[arg(long)]
        replay_paper_tables: bool,
    },
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Bridge spec (JSON). Without one, seven pairs over ten days.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Sample rate for the built-in bridge, Hz.
    #[arg(long, default_value_t = 2.0)]
    sample_rate: f64,
    /// Inject a wire rupture on the last day: CABLE[:SEVERITY], default severity 0.3.
    #[arg(long)]
    rupture: Option<String>,
    /// Inject a sensor failure on the last day: CABLE[:RESIDUAL_KN], default 2 kN.
    #[arg(long)]
    failure: Option<String>,
}

fn parse_scenario(s: &str) -> std::result::Result<Scenario, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_profile(s: &str) -> std::result::Result<Profile, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let out = g
        .out
        .clone()
        .context("no run directory: pass --out <dir> or set STAYTSC_OUT")?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(g, &out, a),
        Command::Ingest => cmd_ingest(g, &out),
        Command::Train => cmd_train(g, &out),
        Command::Evaluate => cmd_evaluate(g, &out),
        Command::Diagnose { replay_paper_tables } => cmd_diagnose(g, &out, *replay_paper_tables),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

/// Profile defaults, then the config file, then command-line overrides.
fn resolve_config(g: &Global, out: &Path) -> Result<RunConfig> {
    let path = g.config.clone().or_else(|| {
        let p = out.join(CONFIG_FILE);
        p.exists().then_some(p)
    });
    let mut cfg = match &path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            let file_profile = serde_json::from_str::<serde_json::Value>(&text)
                .with_context(|| format!("parsing config {}", p.display()))?
                .get("profile")
                .map(|v| serde_json::from_value::<Profile>(v.clone()))
                .transpose()
                .with_context(|| format!("config {}: bad profile", p.display()))?;
            if let (Some(cli), Some(file)) = (g.profile, file_profile) {
                if cli != file {
                    bail!("--profile {cli:?} conflicts with profile {file:?} in {}", p.display());
                }
            }
            let base = g.profile.or(file_profile).unwrap_or_default();
            RunConfig::from_json_overlay(base, &text).with_context(|| format!("config {}", p.display()))?
        }
        None => RunConfig::for_profile(g.profile.unwrap_or_default()),
    };
    if let Some(seed) = g.seed {
        cfg.set_seed(seed);
    }
    if let Some(d) = &g.data {
        cfg.data_dir = Some(d.clone());
    }
    if cfg.data_dir.is_none() {
        cfg.data_dir = Some(out.join("data"));
    }
    if let Some(d) = g.damage_from {
        cfg.damage_from = Some(d);
    }
    cfg.validate().context("invalid run configuration")?;
    Ok(cfg)
}

fn scenarios(g: &Global, cfg: &RunConfig) -> Vec<Scenario> {
    match g.scenario {
        Some(s) => vec![s],
        None => cfg.scenarios.clone(),
    }
}

fn load_prepared(cfg: &RunConfig) -> Result<staytsc::data::Prepared> {
    let dir = cfg.data_dir.as_ref().expect("resolved");
    let raw = load_dir(dir, cfg.sample_rate).with_context(|| format!("ingest: loading {}", dir.display()))?;
    if raw.is_empty() {
        bail!("ingest: no CSV records in {}", dir.display());
    }
    prepare_run(raw, cfg).context("ingest: preprocessing")
}

fn parse_fault_arg(arg: &str, default: f64) -> Result<(CableId, f64)> {
    let (id, value) = match arg.split_once(':') {
        Some((id, v)) => (id, v.parse::<f64>().with_context(|| format!("bad number in `{arg}`"))?),
        None => (arg, default),
    };
    Ok((id.parse().with_context(|| format!("bad cable id in `{arg}`"))?, value))
}

fn cmd_synth(g: &Global, out: &Path, a: &SynthArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading spec {}", p.display()))?;
            serde_json::from_str::<BridgeSpec>(&text).with_context(|| format!("parsing spec {}", p.display()))?
        }
        None => BridgeSpec::seven_pairs(0, a.sample_rate),
    };
    if let Some(seed) = g.seed {
        spec.seed = seed;
    }
    let last = *spec.days.iter().max().context("spec has no days")?;
    if let Some(r) = &a.rupture {
        let (target, severity) = parse_fault_arg(r, 0.3)?;
        spec.faults.push(FaultSpec {
            kind: FaultKind::WireRupture { severity },
            target,
            onset: last,
        });
    }
    if let Some(f) = &a.failure {
        let (target, residual) = parse_fault_arg(f, 2.0)?;
        spec.faults.push(FaultSpec {
            kind: FaultKind::SensorFailure { residual, level: None },
            target,
            onset: last,
        });
    }
    let data = g.data.clone().unwrap_or_else(|| out.join("data"));
    let manifest = write_dataset(&spec, &data).context("synth")?;

    // A run config matching the generated data, unless one is given.
    if g.config.is_none() && !out.join(CONFIG_FILE).exists() {
        let mut cfg = RunConfig::for_profile(g.profile.unwrap_or_default());
        cfg.data_dir = Some(data.clone());
        cfg.sample_rate = spec.sample_rate;
        cfg.damage_from = manifest.test_from;
        cfg.preprocess.outliers.fixed = spec.force_bounds(0.5, 1.5);
        if let Some(seed) = g.seed {
            cfg.set_seed(seed);
        }
        write(&out.join(CONFIG_FILE), &cfg.to_json()?)?;
    }
    println!(
        "wrote {} records and {} to {}",
        manifest.files.len(),
        staytsc::synth::MANIFEST_FILE,
        data.display()
    );
    Ok(())
}

fn cmd_ingest(g: &Global, out: &Path) -> Result<()> {
    let cfg = resolve_config(g, out)?;
    write(&out.join(CONFIG_FILE), &cfg.to_json()?)?;
    let prepared = load_prepared(&cfg)?;
    write_json(&out.join("ingest").join("days.json"), &prepared.reports)?;
    for s in scenarios(g, &cfg) {
        let ds = build_scenario_dataset(&prepared, s, &cfg).with_context(|| format!("ingest: {s} data set"))?;
        let m = DatasetManifest::of(&ds);
        write_json(&out.join(s.name()).join("dataset.json"), &m)?;
        println!(
            "{s}: {} classes, {} segments, {} excluded",
            ds.num_classes(),
            ds.segments.len(),
            ds.excluded.len()
        );
    }
    Ok(())
}

fn cmd_train(g: &Global, out: &Path) -> Result<()> {
    let cfg = resolve_config(g, out)?;
    write(&out.join(CONFIG_FILE), &cfg.to_json()?)?;
    let prepared = load_prepared(&cfg)?;
    for s in scenarios(g, &cfg) {
        let dir = out.join(s.name());
        let ds = build_scenario_dataset(&prepared, s, &cfg).with_context(|| format!("train: {s} data set"))?;
        write_json(&dir.join("dataset.json"), &DatasetManifest::of(&ds))?;
        let run = match train_scenario(ds, &cfg) {
            Ok(r) => r,
            Err(Error::TrainingHalted {
                epoch,
                reason,
                checkpoint,
            }) => {
                let path = dir.join("checkpoint.halted.json");
                checkpoint.save(&path)?;
                bail!("train: {s} halted at epoch {epoch}: {reason}; best model so far in {}", path.display());
            }
            Err(e) => return Err(e).with_context(|| format!("train: {s}")),
        };
        run.outcome
            .checkpoint(&run.dataset, format!("{s} scenario"))
            .save(&dir.join("checkpoint.json"))?;
        write(&dir.join("metrics.csv"), &run.outcome.history.to_csv())?;
        write_json(&dir.join("eval.json"), &(&run.test_pre, &run.test_post))?;
        let last = run.outcome.history.records.last();
        println!(
            "{s}: {} epochs, final validation accuracy {:.4}, best {:.4}, test-pre accuracy {:.4}",
            run.outcome.history.records.len(),
            last.map_or(f64::NAN, |r| r.val_acc),
            run.outcome.history.best_val_acc.unwrap_or(f64::NAN),
            run.test_pre.overall
        );
    }
    Ok(())
}

fn load_checkpoint(out: &Path, s: Scenario) -> Result<Option<(PathBuf, Checkpoint)>> {
    let path = out.join(s.name()).join("checkpoint.json");
    if !path.exists() {
        return Ok(None);
    }
    let ck = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
    Ok(Some((path, ck)))
}

fn cmd_evaluate(g: &Global, out: &Path) -> Result<()> {
    let cfg = resolve_config(g, out)?;
    let prepared = load_prepared(&cfg)?;
    for s in scenarios(g, &cfg) {
        let (path, ck) = load_checkpoint(out, s)?.with_context(|| {
            format!("evaluate: no {s} checkpoint under {}; run `staytsc train` first", out.display())
        })?;
        let ds = build_scenario_dataset(&prepared, s, &cfg)?;
        check_checkpoint(&ck, &ds).with_context(|| format!("evaluate: {}", path.display()))?;
        let (pre, post) = evaluate_periods(&ck.to_model()?, &ds)?;
        write_json(&out.join(s.name()).join("eval.json"), &(&pre, &post))?;
        match &post {
            Some(p) => println!("{s}: test-pre {:.4}, test-post {:.4}", pre.overall, p.overall),
            None => println!("{s}: test-pre {:.4}, no post-period data", pre.overall),
        }
    }
    Ok(())
}

fn write_report(out: &Path, report: &DiagnosisReport) -> Result<()> {
    write(&out.join("diagnosis.json"), &render_structured(report)?)?;
    let human = render_human(report);
    write(&out.join("diagnosis.txt"), &human)?;
    print!("{human}");
    Ok(())
}

fn cmd_diagnose(g: &Global, out: &Path, replay: bool) -> Result<()> {
    if replay {
        let cfg = match &g.config {
            Some(_) => resolve_config(g, out)?,
            None => RunConfig::for_profile(g.profile.unwrap_or_default()),
        };
        let report = replay_published_tables(&cfg.thresholds)?;
        return write_report(out, &report);
    }
    let cfg = resolve_config(g, out)?;
    let prepared = load_prepared(&cfg)?;
    let mut reports = Vec::new();
    let mut provenance = ReportProvenance {
        note: format!("damage_from {:?}", cfg.damage_from.map(|d| d.to_string())),
        ..Default::default()
    };
    let wanted = scenarios(g, &cfg);
    for &s in &wanted {
        let Some((path, ck)) = load_checkpoint(out, s)? else {
            log::warn!("no {s} checkpoint under {}; skipping that scenario", out.display());
            continue;
        };
        let ds = build_scenario_dataset(&prepared, s, &cfg)?;
        check_checkpoint(&ck, &ds).with_context(|| format!("diagnose: {}", path.display()))?;
        let (pre, post) = evaluate_periods(&ck.to_model()?, &ds)?;
        reports.push(scenario_report(&ds, &pre, post.as_ref(), &cfg.thresholds).with_context(|| format!("diagnose: {s}"))?);
        provenance.checkpoints.push(path.display().to_string());
    }
    if reports.is_empty() {
        bail!(
            "diagnose: no checkpoint for {:?} under {}; run `staytsc train` first",
            wanted.iter().map(|s| s.name()).collect::<Vec<_>>(),
            out.display()
        );
    }
    if reports.len() < 2 {
        log::warn!("single-scenario diagnosis: the verdict stays inconclusive without both scenarios");
    }
    let report = diagnose(reports, ratio_shifts(&prepared, cfg.damage_from), cfg.thresholds.clone(), provenance);
    write_report(out, &report)
}
