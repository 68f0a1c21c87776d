//! Subcommand implementations: `simulate`, `replay`, `report`, `serve`.

use crate::config::{self, RunOverrides};
use crate::service;
use anyhow::{Context, Result, bail};
use armsel_core::kpi::{AttributionLedger, EventKind, KpiKind, KpiSpec};
use armsel_core::report::render_csv;
use armsel_core::selector::ScheduleConfig;
use armsel_core::sim::{self, SimScenario};
use armsel_core::store::{self, EventStore};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(
    name = "armsel",
    version,
    about = "Bandit-driven online model selection for RTB campaigns",
    long_about = "Swaps candidate arms against (simulated or live) traffic on a fixed cadence,\n\
                  attributes outcomes to the active arm, and shifts traffic toward the arm\n\
                  with the best windowed business KPI."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a synthetic campaign and write logs plus the per-day report.
    Simulate(SimulateArgs),
    /// Rebuild the per-day report from stored logs.
    Replay(ReplayArgs),
    /// Print a human summary of a run's logs.
    Report(ReportArgs),
    /// Serve live selection and ingestion over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub overrides: RunOverrides,
    /// Scenario: a preset name (`lookback`, `features`) or a TOML file path.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Run id used in output file names (default `<scenario>-s<seed>`).
    #[arg(long)]
    pub run_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Event log to replay.
    #[arg(long)]
    pub events: PathBuf,
    /// Decision log to replay.
    #[arg(long)]
    pub decisions: PathBuf,
    /// Trailing KPI window in days.
    #[arg(long, default_value_t = 30.0)]
    pub lookback_days: f64,
    /// Write `<run_id>.report.csv` here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Event log to summarize.
    #[arg(long)]
    pub events: PathBuf,
    /// Decision log to summarize.
    #[arg(long)]
    pub decisions: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub overrides: RunOverrides,
    /// Bind address (overrides the config file).
    #[arg(long)]
    pub host: Option<String>,
    /// Bind port (overrides the config file).
    #[arg(long)]
    pub port: Option<u16>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Replay(args) => cmd_replay(args),
        Command::Report(args) => cmd_report(args),
        Command::Serve(args) => cmd_serve(args),
    }
}

fn load_scenario(spec: &str) -> Result<SimScenario> {
    if let Some(preset) = SimScenario::preset(spec) {
        return Ok(preset);
    }
    let path = Path::new(spec);
    if !path.exists() {
        bail!(
            "scenario `{spec}` is neither a preset (lookback, features) nor an existing file: \
             no such path `{}`",
            path.display()
        );
    }
    Ok(SimScenario::load(path)?)
}

pub fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let resolved = config::resolve(&args.overrides)?;
    let scenario_ref = args
        .scenario
        .or(resolved.scenario.clone())
        .context("no scenario given: pass --scenario <preset|path> or set it in the config")?;
    let scenario = load_scenario(&scenario_ref)?;
    let schedule = ScheduleConfig {
        swap_interval_secs: resolved.swap_secs,
        kpi_refresh_secs: resolved.refresh_secs,
        run_duration_secs: scenario.duration_secs(),
    };
    let run_id = args
        .run_id
        .or(resolved.run_id.clone())
        .unwrap_or_else(|| format!("{}-s{}", scenario.name, resolved.seed));

    let result = sim::run_scenario(
        &scenario,
        &resolved.policy,
        &schedule,
        &resolved.kpi,
        resolved.seed,
    )?;

    let mut store = EventStore::create(&resolved.out, &run_id)?;
    for e in &result.events {
        store.append_event(e)?;
    }
    for d in &result.decisions {
        store.append_decision(d)?;
    }
    store.flush()?;

    let report_path = resolved.out.join(format!("{run_id}.report.csv"));
    std::fs::write(&report_path, render_csv(&result.daily))
        .with_context(|| format!("cannot write `{}`", report_path.display()))?;

    let impressions = result
        .events
        .iter()
        .filter(|e| e.kind == EventKind::Impression)
        .count();
    println!("run_id: {run_id}");
    println!(
        "scenario: {} ({} arms, {} days)",
        scenario.name,
        scenario.arms.len(),
        scenario.duration_days
    );
    println!(
        "decisions: {}  kpi_refreshes: {}",
        result.decisions.len(),
        result.refresh_count
    );
    println!(
        "impressions: {impressions}  clicks: {}",
        result.total_clicks
    );
    println!("regret: {:.2} expected clicks forgone", result.regret);
    println!("wrote {}", store.events_path().display());
    println!("wrote {}", store.decisions_path().display());
    println!("wrote {}", report_path.display());
    Ok(())
}

pub fn cmd_replay(args: ReplayArgs) -> Result<()> {
    let event_logs = store::load(&args.events)?;
    let decision_logs = store::load(&args.decisions)?;
    let rows = store::replay(
        &event_logs.events,
        &decision_logs.decisions,
        args.lookback_days,
    )?;
    let csv = render_csv(&rows);
    match args.out {
        Some(dir) => {
            std::fs::create_dir_all(&dir)
                .with_context(|| format!("cannot create `{}`", dir.display()))?;
            let run_id = decision_logs
                .run_id
                .or(event_logs.run_id)
                .unwrap_or_else(|| "replay".into());
            let path = dir.join(format!("{run_id}.report.csv"));
            std::fs::write(&path, csv)
                .with_context(|| format!("cannot write `{}`", path.display()))?;
            println!("wrote {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

pub fn cmd_report(args: ReportArgs) -> Result<()> {
    let event_logs = store::load(&args.events)?;
    let decision_logs = store::load(&args.decisions)?;
    let events = event_logs.events;
    let decisions = decision_logs.decisions;
    let run_id = decision_logs
        .run_id
        .or(event_logs.run_id)
        .unwrap_or_else(|| "unknown".into());

    let Some(first) = decisions.first() else {
        println!("run {run_id}: empty decision log");
        return Ok(());
    };
    let t0 = first.timestamp;
    let t_end = decisions.last().expect("non-empty").timestamp;
    let span_days = (t_end - t0) as f64 / 86_400.0;
    let arms: Vec<_> = first.probabilities.arms().cloned().collect();

    let ledger = AttributionLedger::from_decisions(&decisions, t_end)?;
    // One window covering the whole run, so the table shows run totals.
    let spec = KpiSpec {
        kind: KpiKind::Ctr,
        lookback_days: span_days.max(1.0) + 1.0,
        min_samples: 1,
    };
    let snapshots = armsel_core::kpi::snapshot_kpis(&events, &ledger, &spec, &arms, t_end + 1)?;
    let total_impressions: u64 = snapshots.iter().map(|s| s.impressions).sum();

    println!(
        "run {run_id}: {} decisions over {:.1} days, {} arms",
        decisions.len(),
        span_days,
        arms.len()
    );
    println!(
        "{:<20} {:>12} {:>8} {:>10} {:>10} {:>14} {:>8}",
        "arm", "impressions", "share", "clicks", "ctr", "spend_micros", "p_final"
    );
    let last = decisions.last().expect("non-empty");
    for snap in &snapshots {
        let share = if total_impressions > 0 {
            snap.impressions as f64 / total_impressions as f64
        } else {
            0.0
        };
        let ctr = snap
            .kpi_value
            .map_or_else(|| "-".into(), |v| format!("{v:.5}"));
        let p_final = last.probabilities.probability_of(&snap.arm).unwrap_or(0.0);
        println!(
            "{:<20} {:>12} {:>7.1}% {:>10} {:>10} {:>14} {:>8.4}",
            snap.arm.as_str(),
            snap.impressions,
            share * 100.0,
            snap.clicks,
            ctr,
            snap.spend_micros,
            p_final
        );
    }
    println!(
        "final decision at t={} chose `{}` (epsilon {:.4})",
        last.timestamp, last.chosen, last.epsilon_used
    );
    Ok(())
}

pub fn cmd_serve(args: ServeArgs) -> Result<()> {
    let resolved = config::resolve(&args.overrides)?;
    let host = args
        .host
        .clone()
        .unwrap_or_else(|| resolved.serve.host.clone());
    let port = args.port.unwrap_or(resolved.serve.port);
    let defaults = service::ServiceDefaults::from_resolved(&resolved);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("cannot start async runtime")?;
    runtime.block_on(service::serve(defaults, &host, port))
}
