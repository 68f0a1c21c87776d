//! Online model selection for RTB campaigns, driven by multi-armed bandits.
//!
//! A campaign runs several candidate models ("arms"); exactly one arm is live
//! at any instant. Every swap interval (15 minutes by default) a bandit policy
//! picks the next arm from the latest per-arm business KPIs (CTR, CPC, CPA),
//! which are refreshed once a day from attributed traffic. Traffic drifts
//! toward the arm that actually performs, while underperformers keep a
//! non-zero probability so a late bloomer can still win.
//!
//! The crate is split along the run pipeline:
//!
//! - [`policy`]: pure bandit math — decay ε-greedy activation probabilities,
//!   softmax, UCB, Thompson sampling, and seeded arm selection.
//! - [`kpi`]: event attribution against the swap ledger and windowed KPI
//!   snapshots per arm.
//! - [`selector`]: the swap/refresh loop that threads time through ε decay
//!   and records every decision.
//! - [`sim`]: a synthetic campaign environment with per-arm true-CTR curves,
//!   plus a round-robin A/B baseline and regret accounting.
//! - [`store`]: line-delimited append-only event/decision logs and replay.
//! - [`report`]: the per-day report series (activation probability,
//!   cumulative impressions, windowed CTR) emitted as CSV.
//!
//! Everything is deterministic for a fixed seed: runs, logs, and reports are
//! bit-reproducible, and replaying a run's logs rebuilds the live report
//! byte for byte.

pub mod arm;
pub mod kpi;
pub mod policy;
pub mod report;
pub mod selector;
pub mod sim;
pub mod store;

pub use arm::ArmId;
pub use kpi::{ArmKpiSnapshot, AttributionLedger, Event, EventKind, KpiKind, KpiSpec};
pub use policy::{
    ArmScore, Direction, PolicyConfig, PolicyKind, ProbabilityVector, SelectionDecision,
};
pub use selector::{LoopParams, RunOutput, ScheduleConfig, SelectorLoop, Strategy};
pub use sim::{SimResult, SimScenario};
