//! The per-day report series behind the campaign charts: one row per
//! (day, arm) with the activation probability in force at the day boundary,
//! cumulative impressions, and the windowed CTR.
//!
//! The same builder serves live runs and log replay, so a replayed report is
//! byte-identical to the one produced while the run was live. Everything is
//! derived from the event and decision logs alone.

use crate::arm::ArmId;
use crate::kpi::{self, AttributionLedger, Event, EventKind, KpiError, KpiSpec, SECONDS_PER_DAY};
use crate::policy::SelectionDecision;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Kpi(#[from] KpiError),
    #[error("inconsistent decision log: {0}")]
    InconsistentLog(String),
}

/// One report row. `day` is 1-based: day `d` covers `[t0 + (d-1)·24h,
/// t0 + d·24h)`, and the row reflects state at the end of that day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyRow {
    pub day: u32,
    pub arm: ArmId,
    /// Probability the arm held in the decision in force at day end.
    pub activation_probability: f64,
    /// Impressions attributed to the arm from run start to day end.
    pub cumulative_impressions: u64,
    /// Windowed CTR at day end (the lookback window of the KPI spec);
    /// `None` until the arm has any attributed impressions in window.
    pub windowed_cum_ctr: Option<f64>,
}

/// Builds the series from raw logs. The arm set and its order come from the
/// first decision's probability vector. Returns an empty series for empty
/// logs.
pub fn build_daily_rows(
    events: &[Event],
    decisions: &[SelectionDecision],
    lookback_days: f64,
) -> Result<Vec<DailyRow>, ReportError> {
    let Some(first) = decisions.first() else {
        return Ok(Vec::new());
    };
    for (i, w) in decisions.windows(2).enumerate() {
        if w[1].timestamp <= w[0].timestamp {
            return Err(ReportError::InconsistentLog(format!(
                "decision timestamps not strictly increasing at index {}",
                i + 1
            )));
        }
    }
    let arms: Vec<ArmId> = first.probabilities.arms().cloned().collect();
    let t0 = first.timestamp;
    let t_end = decisions.last().expect("non-empty").timestamp;
    let n_days = ((t_end - t0) as f64 / SECONDS_PER_DAY as f64).ceil() as i64;

    let ledger = AttributionLedger::from_decisions(decisions, t_end)?;
    let ctr_spec = KpiSpec {
        kind: kpi::KpiKind::Ctr,
        lookback_days,
        min_samples: 1,
    };

    let mut rows = Vec::with_capacity(n_days as usize * arms.len());
    let mut cumulative = vec![0u64; arms.len()];
    let mut event_cursor = 0usize;
    for day in 1..=n_days {
        let now = (t0 + day * SECONDS_PER_DAY).min(t_end);

        // Advance cumulative attributed impressions up to the day boundary.
        while event_cursor < events.len() && events[event_cursor].timestamp < now {
            let e = &events[event_cursor];
            event_cursor += 1;
            if e.kind != EventKind::Impression {
                continue;
            }
            if let Some(arm) = ledger.arm_at(e.timestamp)
                && let Some(idx) = arms.iter().position(|a| a == arm)
            {
                cumulative[idx] += 1;
            }
        }

        // Decision in force at the boundary: the last one at or before it.
        let in_force = decisions.partition_point(|d| d.timestamp <= now) - 1;
        let probabilities = &decisions[in_force].probabilities;

        let snapshots = kpi::snapshot_kpis(events, &ledger, &ctr_spec, &arms, now)?;
        for (idx, arm) in arms.iter().enumerate() {
            rows.push(DailyRow {
                day: day as u32,
                arm: arm.clone(),
                activation_probability: probabilities.probability_of(arm).ok_or_else(|| {
                    ReportError::InconsistentLog(format!(
                        "decision at {} is missing arm `{arm}`",
                        decisions[in_force].timestamp
                    ))
                })?,
                cumulative_impressions: cumulative[idx],
                windowed_cum_ctr: snapshots[idx].kpi_value,
            });
        }
    }
    Ok(rows)
}

/// CSV rendering with a fixed header; floats use Rust's shortest
/// round-trippable formatting so identical series render identically.
pub fn render_csv(rows: &[DailyRow]) -> String {
    let mut out =
        String::from("day,arm,activation_probability,cumulative_impressions,windowed_cum_ctr\n");
    for r in rows {
        out.push_str(&r.day.to_string());
        out.push(',');
        out.push_str(r.arm.as_str());
        out.push(',');
        out.push_str(&r.activation_probability.to_string());
        out.push(',');
        out.push_str(&r.cumulative_impressions.to_string());
        out.push(',');
        if let Some(v) = r.windowed_cum_ctr {
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}
