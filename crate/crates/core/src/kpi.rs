//! Event attribution and windowed KPI computation (the performance monitor).
//!
//! Every impression, click, and conversion is attributed to the arm that was
//! active when it happened, using the ledger of swap intervals induced by the
//! decision log. KPIs are then computed per arm over a trailing lookback
//! window: CTR = clicks/impressions, CPC = spend/clicks, CPA =
//! spend/conversions. A zero denominator makes the KPI undefined, which
//! leaves the arm unqualified rather than ranking it worst — a zero-click
//! arm's CPC is unknown, not infinitely bad.
//!
//! Spend is tracked in integer micro currency units so ledger sums stay
//! exact.

use crate::arm::ArmId;
use crate::policy::{ArmScore, Direction, SelectionDecision};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KpiError {
    #[error("ledger intervals must be sorted and non-overlapping: {0}")]
    InvalidLedger(String),
    #[error("ledger references arm `{0}` which is not registered")]
    UnknownArm(ArmId),
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error("invalid KPI spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Impression,
    Click,
    Conversion,
}

/// One log-level traffic event. Cost attaches to impressions (RTB spend
/// happens at impression purchase); clicks and conversions carry zero cost.
/// `arm` is `None` until attribution assigns the owning arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Seconds since epoch.
    pub timestamp: i64,
    pub kind: EventKind,
    #[serde(default)]
    pub cost_micros: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm: Option<ArmId>,
}

impl Event {
    pub fn impression(timestamp: i64, cost_micros: u64) -> Self {
        Event {
            timestamp,
            kind: EventKind::Impression,
            cost_micros,
            arm: None,
        }
    }

    pub fn click(timestamp: i64) -> Self {
        Event {
            timestamp,
            kind: EventKind::Click,
            cost_micros: 0,
            arm: None,
        }
    }

    pub fn conversion(timestamp: i64) -> Self {
        Event {
            timestamp,
            kind: EventKind::Conversion,
            cost_micros: 0,
            arm: None,
        }
    }

    pub fn validate(&self) -> Result<(), KpiError> {
        if self.kind != EventKind::Impression && self.cost_micros != 0 {
            return Err(KpiError::InvalidEvent(format!(
                "cost_micros must be 0 for {:?} events, got {}",
                self.kind, self.cost_micros
            )));
        }
        Ok(())
    }
}

/// Which KPI the campaign optimizes and how it is windowed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KpiKind {
    Ctr,
    Cpc,
    Cpa,
}

impl KpiKind {
    /// CTR is maximized; the cost KPIs are minimized.
    pub fn direction(self) -> Direction {
        match self {
            KpiKind::Ctr => Direction::Maximize,
            KpiKind::Cpc | KpiKind::Cpa => Direction::Minimize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KpiSpec {
    pub kind: KpiKind,
    /// Trailing window, in days, over which events count.
    pub lookback_days: f64,
    /// In-window impressions an arm needs before it qualifies for "best".
    pub min_samples: u64,
}

impl Default for KpiSpec {
    fn default() -> Self {
        KpiSpec {
            kind: KpiKind::Ctr,
            lookback_days: 30.0,
            min_samples: 100,
        }
    }
}

impl KpiSpec {
    pub fn validate(&self) -> Result<(), KpiError> {
        if !self.lookback_days.is_finite() || self.lookback_days <= 0.0 {
            return Err(KpiError::InvalidSpec(format!(
                "lookback_days must be positive, got {}",
                self.lookback_days
            )));
        }
        if self.min_samples == 0 {
            return Err(KpiError::InvalidSpec("min_samples must be positive".into()));
        }
        Ok(())
    }

    /// Start of the window ending at `now` (second resolution, half-open
    /// `[start, now)`).
    pub fn window_start(&self, now: i64) -> i64 {
        now - (self.lookback_days * SECONDS_PER_DAY as f64).round() as i64
    }
}

/// Windowed counts and KPI value for one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmKpiSnapshot {
    pub arm: ArmId,
    pub window_start: i64,
    pub window_end: i64,
    pub impressions: u64,
    pub clicks: u64,
    pub conversions: u64,
    pub spend_micros: u64,
    /// `None` when the KPI's denominator is zero.
    pub kpi_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
struct Tally {
    impressions: u64,
    clicks: u64,
    conversions: u64,
    spend_micros: u64,
}

impl Tally {
    fn add(&mut self, event: &Event) {
        match event.kind {
            EventKind::Impression => {
                self.impressions += 1;
                self.spend_micros += event.cost_micros;
            }
            EventKind::Click => self.clicks += 1,
            EventKind::Conversion => self.conversions += 1,
        }
    }

    fn kpi_value(&self, kind: KpiKind) -> Option<f64> {
        let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
        match kind {
            KpiKind::Ctr => ratio(self.clicks, self.impressions),
            KpiKind::Cpc => ratio(self.spend_micros, self.clicks),
            KpiKind::Cpa => ratio(self.spend_micros, self.conversions),
        }
    }

    fn snapshot(&self, arm: &ArmId, spec: &KpiSpec, now: i64) -> ArmKpiSnapshot {
        ArmKpiSnapshot {
            arm: arm.clone(),
            window_start: spec.window_start(now),
            window_end: now,
            impressions: self.impressions,
            clicks: self.clicks,
            conversions: self.conversions,
            spend_micros: self.spend_micros,
            kpi_value: self.kpi_value(spec.kind),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Interval {
    start: i64,
    end: i64,
    arm: ArmId,
}

/// The swap history as half-open intervals `[start, end)`: an event exactly
/// on a boundary belongs to the newly activated arm.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionLedger {
    intervals: Vec<Interval>,
}

impl AttributionLedger {
    /// Builds a ledger, rejecting unsorted or overlapping intervals and
    /// empty ones.
    pub fn new(intervals: Vec<(i64, i64, ArmId)>) -> Result<Self, KpiError> {
        let intervals: Vec<Interval> = intervals
            .into_iter()
            .map(|(start, end, arm)| Interval { start, end, arm })
            .collect();
        for iv in &intervals {
            if iv.start >= iv.end {
                return Err(KpiError::InvalidLedger(format!(
                    "interval [{}, {}) for `{}` is empty or reversed",
                    iv.start, iv.end, iv.arm
                )));
            }
        }
        for pair in intervals.windows(2) {
            if pair[1].start < pair[0].end {
                return Err(KpiError::InvalidLedger(format!(
                    "interval starting at {} overlaps the one ending at {}",
                    pair[1].start, pair[0].end
                )));
            }
        }
        Ok(AttributionLedger { intervals })
    }

    /// Ledger induced by a decision log: each decision opens an interval that
    /// closes at the next decision, the last one at `run_end`. Zero-length
    /// intervals (a final decision exactly at `run_end`) are dropped.
    pub fn from_decisions(decisions: &[SelectionDecision], run_end: i64) -> Result<Self, KpiError> {
        let mut intervals = Vec::with_capacity(decisions.len());
        for (i, d) in decisions.iter().enumerate() {
            let end = decisions.get(i + 1).map_or(run_end, |next| next.timestamp);
            if end > d.timestamp {
                intervals.push((d.timestamp, end, d.chosen.clone()));
            }
        }
        AttributionLedger::new(intervals)
    }

    /// The arm active at `ts`, or `None` if `ts` falls outside every
    /// interval.
    pub fn arm_at(&self, ts: i64) -> Option<&ArmId> {
        let idx = self.intervals.partition_point(|iv| iv.start <= ts);
        let iv = &self.intervals[idx.checked_sub(1)?];
        (ts < iv.end).then_some(&iv.arm)
    }

    pub fn intervals(&self) -> impl Iterator<Item = (i64, i64, &ArmId)> {
        self.intervals.iter().map(|iv| (iv.start, iv.end, &iv.arm))
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// `arm_at` with a cursor hint. Sequential lookups over time-sorted
    /// events stay O(1); out-of-order timestamps fall back to binary search.
    fn arm_at_hinted(&self, ts: i64, cursor: &mut usize) -> Option<&ArmId> {
        while *cursor < self.intervals.len() {
            let iv = &self.intervals[*cursor];
            if ts < iv.start {
                break;
            }
            if ts < iv.end {
                return Some(&iv.arm);
            }
            *cursor += 1;
        }
        if *cursor < self.intervals.len() && ts < self.intervals[*cursor].start {
            // ts sits before the cursor interval; it may belong to an earlier
            // interval if the input is not time-sorted.
            if *cursor == 0 || ts >= self.intervals[*cursor - 1].end {
                return None;
            }
        }
        self.arm_at(ts)
    }
}

/// Returns a copy of `events` with each arm set to the interval containing
/// its timestamp; events outside every interval come back unattributed.
pub fn attribute_events(events: &[Event], ledger: &AttributionLedger) -> Vec<Event> {
    let mut cursor = 0usize;
    events
        .iter()
        .map(|e| {
            let mut out = e.clone();
            out.arm = ledger.arm_at_hinted(e.timestamp, &mut cursor).cloned();
            out
        })
        .collect()
}

/// Windowed KPI snapshot for one arm over events already attributed to it.
/// Only events with `arm == Some(arm)` and timestamp in
/// `[now - lookback, now)` count.
pub fn windowed_kpi(events: &[Event], arm: &ArmId, spec: &KpiSpec, now: i64) -> ArmKpiSnapshot {
    let window_start = spec.window_start(now);
    let mut tally = Tally::default();
    for e in events {
        if e.arm.as_ref() == Some(arm) && e.timestamp >= window_start && e.timestamp < now {
            tally.add(e);
        }
    }
    tally.snapshot(arm, spec, now)
}

/// Windowed snapshots for every registered arm in one pass, attributing each
/// event through `ledger` on the fly. Errors if the ledger references an arm
/// that is not registered.
pub fn snapshot_kpis(
    events: &[Event],
    ledger: &AttributionLedger,
    spec: &KpiSpec,
    arms: &[ArmId],
    now: i64,
) -> Result<Vec<ArmKpiSnapshot>, KpiError> {
    for (_, _, arm) in ledger.intervals() {
        if !arms.contains(arm) {
            return Err(KpiError::UnknownArm(arm.clone()));
        }
    }
    let window_start = spec.window_start(now);
    let mut tallies: Vec<Tally> = vec![Tally::default(); arms.len()];
    let mut cursor = 0usize;
    for e in events {
        if e.timestamp < window_start || e.timestamp >= now {
            continue;
        }
        if let Some(arm) = ledger.arm_at_hinted(e.timestamp, &mut cursor) {
            let idx = arms
                .iter()
                .position(|a| a == arm)
                .expect("ledger arms checked");
            tallies[idx].add(e);
        }
    }
    Ok(arms
        .iter()
        .zip(&tallies)
        .map(|(arm, tally)| tally.snapshot(arm, spec, now))
        .collect())
}

/// Converts a snapshot into the selector-facing score. An arm qualifies once
/// its in-window impressions reach `min_samples` and its KPI is defined.
pub fn score_from_snapshot(snapshot: &ArmKpiSnapshot, spec: &KpiSpec) -> ArmScore {
    let direction = spec.kind.direction();
    match snapshot.kpi_value {
        Some(v) if snapshot.impressions >= spec.min_samples => {
            ArmScore::qualified(snapshot.arm.clone(), v, direction, snapshot.impressions)
        }
        _ => {
            let mut score =
                ArmScore::unqualified(snapshot.arm.clone(), direction, snapshot.impressions);
            score.kpi_value = snapshot.kpi_value;
            score
        }
    }
}

/// One [`ArmScore`] per registered arm, computed from the raw event log and
/// the attribution ledger.
pub fn snapshot_all(
    events: &[Event],
    ledger: &AttributionLedger,
    spec: &KpiSpec,
    arms: &[ArmId],
    now: i64,
) -> Result<Vec<ArmScore>, KpiError> {
    Ok(snapshot_kpis(events, ledger, spec, arms, now)?
        .iter()
        .map(|s| score_from_snapshot(s, spec))
        .collect())
}
