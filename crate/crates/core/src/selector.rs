//! The selector loop: swaps the active arm every interval, refreshes KPIs on
//! the slower daily cadence, and records every decision.
//!
//! The two cadences are deliberately decoupled: between KPI refreshes the
//! loop keeps selecting against stale scores, but ε keeps decaying with wall
//! time, so exploration winds down even while the scoreboard holds still.
//! A refresh is evaluated at swap boundaries — the first swap at or after a
//! refresh boundary recomputes the scores before that tick's selection.
//!
//! An initial selection fires at `t = 0` (uniform while no arm qualifies),
//! so something is live from the first interval. Every boundary logs a
//! decision even when the same arm is re-selected, which keeps the decision
//! log a complete ledger of swap intervals.

use crate::arm::ArmId;
use crate::kpi::{self, ArmKpiSnapshot, AttributionLedger, Event, KpiError, KpiSpec};
use crate::policy::{
    self, ArmScore, PolicyConfig, PolicyError, PolicyKind, ProbabilityVector, SelectionDecision,
    TieRule, UcbArmStat,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SelectorError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Kpi(#[from] KpiError),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("at least one arm must be registered")]
    NoArms,
    #[error("duplicate arm id `{0}`")]
    DuplicateArm(ArmId),
    #[error("clock went backwards: have {have}, got {got}")]
    ClockRegression { have: i64, got: i64 },
    #[error("event at {got} arrived before buffered watermark {watermark}")]
    EventOrder { watermark: i64, got: i64 },
    #[error("inconsistent log: {0}")]
    InconsistentLog(String),
}

/// Swap and KPI-refresh cadences plus the total run length, all in whole
/// seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub swap_interval_secs: u64,
    pub kpi_refresh_secs: u64,
    pub run_duration_secs: u64,
}

impl ScheduleConfig {
    pub const DEFAULT_SWAP_SECS: u64 = 15 * 60;
    pub const DEFAULT_REFRESH_SECS: u64 = 24 * 60 * 60;

    /// 15-minute swaps, daily KPI refresh.
    pub fn standard(run_duration_secs: u64) -> Self {
        ScheduleConfig {
            swap_interval_secs: Self::DEFAULT_SWAP_SECS,
            kpi_refresh_secs: Self::DEFAULT_REFRESH_SECS,
            run_duration_secs,
        }
    }

    pub fn validate(&self) -> Result<(), SelectorError> {
        if self.swap_interval_secs == 0 || self.kpi_refresh_secs == 0 || self.run_duration_secs == 0
        {
            return Err(SelectorError::InvalidSchedule(
                "swap, refresh, and run duration must all be positive".into(),
            ));
        }
        if self.swap_interval_secs > self.kpi_refresh_secs {
            return Err(SelectorError::InvalidSchedule(format!(
                "swap interval ({}s) must not exceed KPI refresh interval ({}s)",
                self.swap_interval_secs, self.kpi_refresh_secs
            )));
        }
        Ok(())
    }
}

/// Time source for the loop. Monotone: asking to wait for a target earlier
/// than the current position is a fatal error.
pub trait Clock {
    /// Advances to at least `target` and returns the actual time reached
    /// (exactly `target` for the simulated clock, possibly later under
    /// wall-clock jitter).
    fn wait_until(&mut self, target: i64) -> Result<i64, SelectorError>;
    fn now(&self) -> i64;
}

/// Simulated clock: jumps in exact steps, for deterministic runs.
#[derive(Debug, Clone)]
pub struct SimClock {
    now: i64,
}

impl SimClock {
    pub fn new(start: i64) -> Self {
        SimClock { now: start }
    }
}

impl Clock for SimClock {
    fn wait_until(&mut self, target: i64) -> Result<i64, SelectorError> {
        if target < self.now {
            return Err(SelectorError::ClockRegression {
                have: self.now,
                got: target,
            });
        }
        self.now = target;
        Ok(self.now)
    }

    fn now(&self) -> i64 {
        self.now
    }
}

/// Wall clock: sleeps until the target and stamps with the actual time.
#[derive(Debug, Clone)]
pub struct SystemClock {
    last: i64,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock { last: unix_now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

pub fn unix_now() -> i64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0)
}

impl Clock for SystemClock {
    fn wait_until(&mut self, target: i64) -> Result<i64, SelectorError> {
        let mut now = unix_now();
        if now < self.last {
            return Err(SelectorError::ClockRegression {
                have: self.last,
                got: now,
            });
        }
        while now < target {
            std::thread::sleep(std::time::Duration::from_millis(
                (((target - now) * 1000).min(200)) as u64,
            ));
            now = unix_now();
        }
        self.last = now;
        Ok(now)
    }

    fn now(&self) -> i64 {
        unix_now()
    }
}

/// Where interval traffic comes from: the campaign simulator, or the live
/// ingestion buffer in service mode.
pub trait EventSource {
    /// Events generated while `active` held the half-open interval
    /// `[interval.0, interval.1)`.
    fn events_for(
        &mut self,
        active: &ArmId,
        interval: (i64, i64),
    ) -> Result<Vec<Event>, SelectorError>;
}

/// A source with no traffic of its own; service mode pushes events in
/// through [`SelectorLoop::ingest`] instead.
pub struct NullSource;

impl EventSource for NullSource {
    fn events_for(&mut self, _: &ArmId, _: (i64, i64)) -> Result<Vec<Event>, SelectorError> {
        Ok(Vec::new())
    }
}

/// What decides the next arm at each boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Strategy {
    /// One of the bandit policies.
    Bandit(PolicyConfig),
    /// Deterministic equal split, the A/B-test stand-in: interval `k` goes
    /// to arm `k mod M`.
    RoundRobin,
}

impl Strategy {
    fn validate(&self) -> Result<(), SelectorError> {
        match self {
            Strategy::Bandit(cfg) => Ok(cfg.validate()?),
            Strategy::RoundRobin => Ok(()),
        }
    }
}

/// Everything needed to start a loop.
#[derive(Debug, Clone)]
pub struct LoopParams {
    pub arms: Vec<ArmId>,
    pub strategy: Strategy,
    pub schedule: ScheduleConfig,
    pub kpi: KpiSpec,
    pub seed: u64,
    /// Seconds since epoch of the initial selection (simulations use 0).
    pub start_time: i64,
}

/// Mutable loop state, readable between ticks.
#[derive(Debug, Clone)]
pub struct LoopState {
    pub start_time: i64,
    /// Timestamp of the most recent decision.
    pub now: i64,
    /// Decisions made so far minus one (the initial selection is tick 0).
    pub tick_index: u64,
    pub current_arm: ArmId,
    pub scores: Vec<ArmScore>,
    pub snapshots: Vec<ArmKpiSnapshot>,
    pub decisions: Vec<SelectionDecision>,
    pub refresh_count: u64,
    pub next_refresh_at: i64,
    pub last_refresh_at: Option<i64>,
    /// ε in force when the scores were last refreshed.
    pub last_refresh_epsilon: f64,
    /// Times each arm has been activated, parallel to the arm list.
    pub selection_counts: Vec<u64>,
    pub total_selections: u64,
}

impl LoopState {
    pub fn elapsed_days(&self) -> f64 {
        (self.now - self.start_time) as f64 / kpi::SECONDS_PER_DAY as f64
    }
}

/// Result of one tick.
#[derive(Debug, Clone)]
pub struct TickOutcome {
    pub decision: SelectionDecision,
    pub refreshed: bool,
}

/// Output of a completed run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub events: Vec<Event>,
    pub state: LoopState,
}

/// The selector loop itself. Owns the selection RNG, the event buffer, and
/// all decision state; callers drive it through [`SelectorLoop::ingest`] and
/// [`SelectorLoop::tick_at`], or all at once through [`run`].
pub struct SelectorLoop {
    arms: Vec<ArmId>,
    strategy: Strategy,
    schedule: ScheduleConfig,
    kpi_spec: KpiSpec,
    rng: ChaCha8Rng,
    events: Vec<Event>,
    state: LoopState,
}

impl SelectorLoop {
    /// Validates the configuration and makes the initial selection at
    /// `params.start_time`.
    pub fn new(params: LoopParams) -> Result<Self, SelectorError> {
        Self::build(params, Vec::new(), None)
    }

    /// Reconstructs a loop from persisted logs: selection counts, refresh
    /// state, and KPI snapshots all come out exactly as the live loop left
    /// them. The RNG is reseeded from `params.seed`, so decisions after a
    /// resume are a fresh stream.
    pub fn rebuild(
        params: LoopParams,
        events: Vec<Event>,
        decisions: Vec<SelectionDecision>,
    ) -> Result<Self, SelectorError> {
        if decisions.is_empty() {
            return Err(SelectorError::InconsistentLog(
                "decision log is empty".into(),
            ));
        }
        Self::build(params, events, Some(decisions))
    }

    fn build(
        mut params: LoopParams,
        events: Vec<Event>,
        recovered: Option<Vec<SelectionDecision>>,
    ) -> Result<Self, SelectorError> {
        params.schedule.validate()?;
        params.kpi.validate()?;
        params.strategy.validate()?;
        if params.arms.is_empty() {
            return Err(SelectorError::NoArms);
        }
        for (i, arm) in params.arms.iter().enumerate() {
            if params.arms[..i].contains(arm) {
                return Err(SelectorError::DuplicateArm(arm.clone()));
            }
        }
        if let Some(decisions) = &recovered {
            params.start_time = decisions[0].timestamp;
        }

        let direction = params.kpi.kind.direction();
        let scores: Vec<ArmScore> = params
            .arms
            .iter()
            .map(|a| ArmScore::unqualified(a.clone(), direction, 0))
            .collect();
        let snapshots = kpi::snapshot_kpis(
            &[],
            &AttributionLedger::new(Vec::new())?,
            &params.kpi,
            &params.arms,
            params.start_time,
        )?;

        let state = LoopState {
            start_time: params.start_time,
            now: params.start_time,
            tick_index: 0,
            current_arm: params.arms[0].clone(),
            scores,
            snapshots,
            decisions: Vec::new(),
            refresh_count: 0,
            next_refresh_at: params.start_time + params.schedule.kpi_refresh_secs as i64,
            last_refresh_at: None,
            last_refresh_epsilon: 0.0,
            selection_counts: vec![0; params.arms.len()],
            total_selections: 0,
        };

        let mut loop_ = SelectorLoop {
            arms: params.arms,
            strategy: params.strategy,
            schedule: params.schedule,
            kpi_spec: params.kpi,
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            events,
            state,
        };

        match recovered {
            None => {
                let initial = loop_.decide(loop_.state.start_time)?;
                loop_.apply_decision(initial);
            }
            Some(decisions) => loop_.replay_decisions(decisions)?,
        }
        Ok(loop_)
    }

    /// Replays a recovered decision log through the state machine, redoing
    /// KPI refreshes at the ticks that triggered them live.
    fn replay_decisions(&mut self, decisions: Vec<SelectionDecision>) -> Result<(), SelectorError> {
        let mut last_ts = None;
        for (i, d) in decisions.iter().enumerate() {
            d.validate()?;
            if !self.arms.contains(&d.chosen) {
                return Err(SelectorError::InconsistentLog(format!(
                    "decision {i} chose unregistered arm `{}`",
                    d.chosen
                )));
            }
            if let Some(prev) = last_ts
                && d.timestamp <= prev
            {
                return Err(SelectorError::InconsistentLog(format!(
                    "decision timestamps not strictly increasing at index {i}"
                )));
            }
            last_ts = Some(d.timestamp);
        }

        // A refresh fires on the first tick at/after each refresh boundary,
        // before that tick's selection; the initial decision never refreshes.
        let mut refresh_ticks: Vec<(usize, i64)> = Vec::new();
        for (i, d) in decisions.iter().enumerate().skip(1) {
            if d.timestamp >= self.state.next_refresh_at {
                refresh_ticks.push((i, d.timestamp));
                while self.state.next_refresh_at <= d.timestamp {
                    self.state.next_refresh_at += self.schedule.kpi_refresh_secs as i64;
                }
            }
        }
        if let Some(&(idx, ts)) = refresh_ticks.last() {
            let ledger = AttributionLedger::from_decisions(&decisions[..idx], ts)?;
            self.refresh_from(&ledger, ts)?;
        }
        self.state.refresh_count = refresh_ticks.len() as u64;

        for d in decisions {
            self.apply_decision(d);
        }
        Ok(())
    }

    pub fn arms(&self) -> &[ArmId] {
        &self.arms
    }

    pub fn schedule(&self) -> &ScheduleConfig {
        &self.schedule
    }

    pub fn kpi_spec(&self) -> &KpiSpec {
        &self.kpi_spec
    }

    pub fn state(&self) -> &LoopState {
        &self.state
    }

    pub fn current_arm(&self) -> &ArmId {
        &self.state.current_arm
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Timestamp of the next swap boundary.
    pub fn next_boundary(&self) -> i64 {
        self.state.start_time
            + ((self.state.tick_index + 1) * self.schedule.swap_interval_secs) as i64
    }

    /// Timestamp of the final decision of the run.
    pub fn end_time(&self) -> i64 {
        let ticks = self.schedule.run_duration_secs / self.schedule.swap_interval_secs;
        self.state.start_time + (ticks * self.schedule.swap_interval_secs) as i64
    }

    pub fn finished(&self) -> bool {
        self.state.now >= self.end_time()
    }

    /// Appends interval traffic to the event buffer. Batches must be
    /// time-ordered and must not fall behind what is already buffered.
    pub fn ingest(&mut self, events: Vec<Event>) -> Result<(), SelectorError> {
        let mut watermark = self.events.last().map_or(i64::MIN, |e| e.timestamp);
        for e in &events {
            e.validate()?;
            if e.timestamp < watermark {
                return Err(SelectorError::EventOrder {
                    watermark,
                    got: e.timestamp,
                });
            }
            watermark = e.timestamp;
        }
        self.events.extend(events);
        Ok(())
    }

    /// Runs one swap boundary: refreshes KPIs if a refresh boundary has been
    /// reached (before selection), then selects and logs the next arm.
    pub fn tick_at(&mut self, now: i64) -> Result<TickOutcome, SelectorError> {
        if now <= self.state.now {
            return Err(SelectorError::ClockRegression {
                have: self.state.now,
                got: now,
            });
        }
        let refreshed = if now >= self.state.next_refresh_at {
            let ledger = AttributionLedger::from_decisions(&self.state.decisions, now)?;
            self.refresh_from(&ledger, now)?;
            self.state.refresh_count += 1;
            while self.state.next_refresh_at <= now {
                self.state.next_refresh_at += self.schedule.kpi_refresh_secs as i64;
            }
            true
        } else {
            false
        };
        let decision = self.decide(now)?;
        self.apply_decision(decision.clone());
        Ok(TickOutcome {
            decision,
            refreshed,
        })
    }

    fn refresh_from(&mut self, ledger: &AttributionLedger, now: i64) -> Result<(), SelectorError> {
        self.state.snapshots =
            kpi::snapshot_kpis(&self.events, ledger, &self.kpi_spec, &self.arms, now)?;
        self.state.scores = self
            .state
            .snapshots
            .iter()
            .map(|s| kpi::score_from_snapshot(s, &self.kpi_spec))
            .collect();
        self.state.last_refresh_at = Some(now);
        self.state.last_refresh_epsilon = self.epsilon_at_time(now)?;
        Ok(())
    }

    /// ε in force at `now` under the configured strategy (1 for uniform
    /// random, 0 for the policies that do not explore by ε).
    pub fn epsilon_at_time(&self, now: i64) -> Result<f64, SelectorError> {
        let elapsed = (now - self.state.start_time) as f64 / kpi::SECONDS_PER_DAY as f64;
        Ok(match &self.strategy {
            Strategy::Bandit(cfg) => match cfg.kind {
                PolicyKind::DecayEpsilonGreedy => {
                    policy::epsilon_at(elapsed, cfg.epsilon0, cfg.alpha_days)?
                }
                PolicyKind::UniformRandom => 1.0,
                _ => 0.0,
            },
            Strategy::RoundRobin => 0.0,
        })
    }

    fn decide(&mut self, now: i64) -> Result<SelectionDecision, SelectorError> {
        let strategy = self.strategy.clone();
        let decision = match &strategy {
            Strategy::RoundRobin => {
                let idx = (self.state.total_selections % self.arms.len() as u64) as usize;
                let chosen = self.arms[idx].clone();
                SelectionDecision {
                    timestamp: now,
                    epsilon_used: 0.0,
                    chosen: chosen.clone(),
                    probabilities: ProbabilityVector::degenerate(&self.arms, &chosen)?,
                }
            }
            Strategy::Bandit(cfg) => self.decide_bandit(cfg, now)?,
        };
        Ok(decision)
    }

    fn decide_bandit(
        &mut self,
        cfg: &PolicyConfig,
        now: i64,
    ) -> Result<SelectionDecision, SelectorError> {
        let tie = TieRule::LexicographicId;
        match cfg.kind {
            PolicyKind::DecayEpsilonGreedy => {
                let epsilon = self.epsilon_at_time(now)?;
                let probabilities =
                    policy::activation_probabilities(&self.state.scores, epsilon, tie)?;
                Ok(policy::select_arm(
                    &probabilities,
                    epsilon,
                    now,
                    &mut self.rng,
                ))
            }
            PolicyKind::UniformRandom => {
                let probabilities = ProbabilityVector::uniform(&self.arms)?;
                Ok(policy::select_arm(&probabilities, 1.0, now, &mut self.rng))
            }
            PolicyKind::Softmax => {
                let qualified: Vec<ArmScore> = self
                    .state
                    .scores
                    .iter()
                    .filter(|s| s.qualified)
                    .cloned()
                    .collect();
                let probabilities = if qualified.is_empty() {
                    ProbabilityVector::uniform(&self.arms)?
                } else {
                    let sub = policy::softmax_probabilities(&qualified, cfg.temperature)?;
                    // Unqualified arms keep zero mass; the vector still
                    // covers the whole arm set in registration order.
                    ProbabilityVector::new(
                        self.arms
                            .iter()
                            .map(|a| policy::ProbabilityEntry {
                                arm: a.clone(),
                                probability: sub.probability_of(a).unwrap_or(0.0),
                            })
                            .collect(),
                    )?
                };
                Ok(policy::select_arm(&probabilities, 0.0, now, &mut self.rng))
            }
            PolicyKind::Ucb => {
                let stats: Vec<UcbArmStat> = self
                    .arms
                    .iter()
                    .zip(&self.state.selection_counts)
                    .zip(&self.state.scores)
                    .map(|((arm, &pulls), score)| UcbArmStat {
                        arm: arm.clone(),
                        mean: oriented_mean(score),
                        pulls,
                    })
                    .collect();
                let chosen = policy::ucb_select(&stats, cfg.ucb_c, tie)?.clone();
                Ok(SelectionDecision {
                    timestamp: now,
                    epsilon_used: 0.0,
                    chosen: chosen.clone(),
                    probabilities: ProbabilityVector::degenerate(&self.arms, &chosen)?,
                })
            }
            PolicyKind::ThompsonBetaBernoulli => {
                let posteriors: Vec<(ArmId, f64, f64)> = self
                    .state
                    .snapshots
                    .iter()
                    .map(|s| {
                        // Click count can exceed impressions (multi-click);
                        // failures clamp at zero so the Beta stays proper.
                        let failures = s.impressions.saturating_sub(s.clicks);
                        (
                            s.arm.clone(),
                            cfg.prior_a + s.clicks as f64,
                            cfg.prior_b + failures as f64,
                        )
                    })
                    .collect();
                let chosen = policy::thompson_draw(&posteriors, &mut self.rng)?;
                Ok(SelectionDecision {
                    timestamp: now,
                    epsilon_used: 0.0,
                    chosen: chosen.clone(),
                    probabilities: ProbabilityVector::degenerate(&self.arms, &chosen)?,
                })
            }
        }
    }

    fn apply_decision(&mut self, decision: SelectionDecision) {
        let idx = self
            .arms
            .iter()
            .position(|a| a == &decision.chosen)
            .expect("decision always picks a registered arm");
        self.state.selection_counts[idx] += 1;
        self.state.total_selections += 1;
        self.state.now = decision.timestamp;
        self.state.tick_index = self.state.decisions.len() as u64;
        self.state.current_arm = decision.chosen.clone();
        self.state.decisions.push(decision);
    }

    pub fn into_output(self) -> RunOutput {
        RunOutput {
            events: self.events,
            state: self.state,
        }
    }
}

/// KPI mean oriented so larger is better, for the UCB index. Arms without a
/// defined KPI yet contribute a neutral 0.
fn oriented_mean(score: &ArmScore) -> f64 {
    match (score.kpi_value, score.direction) {
        (Some(v), crate::policy::Direction::Maximize) if v.is_finite() => v,
        (Some(v), crate::policy::Direction::Minimize) if v.is_finite() => -v,
        _ => 0.0,
    }
}

/// Drives a full run: `floor(run_duration / swap_interval)` ticks after the
/// initial selection, pulling interval traffic from `source` before each
/// tick. Deterministic for a simulated clock and pinned seed.
pub fn run<S: EventSource, C: Clock>(
    source: &mut S,
    clock: &mut C,
    params: LoopParams,
) -> Result<RunOutput, SelectorError> {
    let mut loop_ = SelectorLoop::new(params)?;
    let ticks = loop_.schedule.run_duration_secs / loop_.schedule.swap_interval_secs;
    let start = loop_.state.start_time;
    for k in 1..=ticks {
        let target = start + (k * loop_.schedule.swap_interval_secs) as i64;
        let now = clock.wait_until(target)?;
        let prev = loop_.state.now;
        let events = source.events_for(loop_.current_arm(), (prev, now))?;
        loop_.ingest(events)?;
        loop_.tick_at(now)?;
    }
    Ok(loop_.into_output())
}
