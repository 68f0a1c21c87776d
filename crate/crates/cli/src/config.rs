//! Run configuration: one TOML file plus flag overrides, flags winning.
//!
//! ```toml
//! seed = 7
//! out = "runs"
//! scenario = "lookback"              # preset name or path to a scenario file
//!
//! [policy]
//! kind = "decay_epsilon_greedy"      # softmax | ucb | thompson_beta_bernoulli | uniform_random
//! epsilon0 = 0.3
//! alpha_days = 30.0
//!
//! [schedule]
//! swap_minutes = 15
//! kpi_refresh_minutes = 1440
//!
//! [kpi]
//! kind = "ctr"                       # cpc | cpa
//! lookback_days = 30.0
//! min_samples = 100
//!
//! [serve]
//! host = "127.0.0.1"
//! port = 8080
//! arms = ["model7", "model60"]
//! run_duration_days = 365.0
//! ```

use anyhow::{Context, Result, bail};
use armsel_core::kpi::KpiSpec;
use armsel_core::policy::PolicyConfig;
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub run_id: Option<String>,
    pub scenario: Option<String>,
    pub policy: Option<PolicyConfig>,
    pub schedule: Option<ScheduleSection>,
    pub kpi: Option<KpiSpec>,
    pub serve: Option<ServeSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub swap_minutes: u64,
    pub kpi_refresh_minutes: u64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            swap_minutes: 15,
            kpi_refresh_minutes: 24 * 60,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub host: String,
    pub port: u16,
    pub arms: Vec<String>,
    pub run_duration_days: f64,
}

impl Default for ServeSection {
    fn default() -> Self {
        ServeSection {
            host: "127.0.0.1".into(),
            port: 8080,
            arms: Vec::new(),
            run_duration_days: 365.0,
        }
    }
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file `{}`", path.display()))?;
        toml::from_str(&text)
            .with_context(|| format!("cannot parse config file `{}`", path.display()))
    }
}

/// Flag-level overrides shared by the run-shaped subcommands. Every field
/// beats the config file when present.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct RunOverrides {
    /// Config file with the defaults for this run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Bandit policy.
    #[arg(long, value_enum)]
    pub policy: Option<PolicyKindArg>,
    /// Initial exploration rate for decay epsilon-greedy.
    #[arg(long)]
    pub epsilon0: Option<f64>,
    /// Decay horizon in days (epsilon reaches 0 here).
    #[arg(long)]
    pub alpha_days: Option<f64>,
    /// Softmax temperature.
    #[arg(long)]
    pub temperature: Option<f64>,
    /// UCB exploration constant.
    #[arg(long)]
    pub ucb_c: Option<f64>,
    /// Beta prior successes for Thompson sampling.
    #[arg(long)]
    pub prior_a: Option<f64>,
    /// Beta prior failures for Thompson sampling.
    #[arg(long)]
    pub prior_b: Option<f64>,
    /// Minutes between arm swaps.
    #[arg(long)]
    pub swap_minutes: Option<u64>,
    /// Minutes between KPI refreshes.
    #[arg(long)]
    pub kpi_refresh_minutes: Option<u64>,
    /// KPI to optimize.
    #[arg(long, value_enum)]
    pub kpi: Option<KpiKindArg>,
    /// Trailing KPI window in days.
    #[arg(long)]
    pub lookback_days: Option<f64>,
    /// In-window impressions before an arm qualifies.
    #[arg(long)]
    pub min_samples: Option<u64>,
    /// RNG seed; fixed seed means bit-identical outputs.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for logs and reports.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PolicyKindArg {
    DecayEpsilonGreedy,
    Softmax,
    Ucb,
    ThompsonBetaBernoulli,
    UniformRandom,
}

impl From<PolicyKindArg> for armsel_core::policy::PolicyKind {
    fn from(v: PolicyKindArg) -> Self {
        use armsel_core::policy::PolicyKind as K;
        match v {
            PolicyKindArg::DecayEpsilonGreedy => K::DecayEpsilonGreedy,
            PolicyKindArg::Softmax => K::Softmax,
            PolicyKindArg::Ucb => K::Ucb,
            PolicyKindArg::ThompsonBetaBernoulli => K::ThompsonBetaBernoulli,
            PolicyKindArg::UniformRandom => K::UniformRandom,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum KpiKindArg {
    Ctr,
    Cpc,
    Cpa,
}

impl From<KpiKindArg> for armsel_core::kpi::KpiKind {
    fn from(v: KpiKindArg) -> Self {
        use armsel_core::kpi::KpiKind as K;
        match v {
            KpiKindArg::Ctr => K::Ctr,
            KpiKindArg::Cpc => K::Cpc,
            KpiKindArg::Cpa => K::Cpa,
        }
    }
}

/// Fully resolved settings for a run (defaults, then file, then flags).
#[derive(Debug, Clone)]
pub struct Resolved {
    pub policy: PolicyConfig,
    pub swap_secs: u64,
    pub refresh_secs: u64,
    pub kpi: KpiSpec,
    pub seed: u64,
    pub out: PathBuf,
    pub run_id: Option<String>,
    pub scenario: Option<String>,
    pub serve: ServeSection,
}

pub fn resolve(overrides: &RunOverrides) -> Result<Resolved> {
    let file = match &overrides.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };

    let mut policy = file.policy.unwrap_or_default();
    if let Some(kind) = overrides.policy {
        policy.kind = kind.into();
    }
    if let Some(v) = overrides.epsilon0 {
        policy.epsilon0 = v;
    }
    if let Some(v) = overrides.alpha_days {
        policy.alpha_days = v;
    }
    if let Some(v) = overrides.temperature {
        policy.temperature = v;
    }
    if let Some(v) = overrides.ucb_c {
        policy.ucb_c = v;
    }
    if let Some(v) = overrides.prior_a {
        policy.prior_a = v;
    }
    if let Some(v) = overrides.prior_b {
        policy.prior_b = v;
    }

    let schedule = file.schedule.unwrap_or_default();
    let swap_minutes = overrides.swap_minutes.unwrap_or(schedule.swap_minutes);
    let refresh_minutes = overrides
        .kpi_refresh_minutes
        .unwrap_or(schedule.kpi_refresh_minutes);

    let mut kpi = file.kpi.unwrap_or_default();
    if let Some(kind) = overrides.kpi {
        kpi.kind = kind.into();
    }
    if let Some(v) = overrides.lookback_days {
        kpi.lookback_days = v;
    }
    if let Some(v) = overrides.min_samples {
        kpi.min_samples = v;
    }

    let resolved = Resolved {
        policy,
        swap_secs: swap_minutes * 60,
        refresh_secs: refresh_minutes * 60,
        kpi,
        seed: overrides.seed.or(file.seed).unwrap_or(0),
        out: overrides
            .out
            .clone()
            .or(file.out)
            .unwrap_or_else(|| PathBuf::from("runs")),
        run_id: file.run_id,
        scenario: file.scenario,
        serve: file.serve.unwrap_or_default(),
    };

    if let Err(e) = resolved.policy.validate() {
        bail!("invalid policy configuration: {e}");
    }
    if let Err(e) = resolved.kpi.validate() {
        bail!("invalid KPI configuration: {e}");
    }
    if resolved.swap_secs == 0 || resolved.refresh_secs == 0 {
        bail!("swap and KPI refresh intervals must be positive");
    }
    if resolved.swap_secs > resolved.refresh_secs {
        bail!(
            "swap interval ({}s) must not exceed the KPI refresh interval ({}s)",
            resolved.swap_secs,
            resolved.refresh_secs
        );
    }
    Ok(resolved)
}
