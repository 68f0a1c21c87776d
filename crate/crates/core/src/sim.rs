//! Synthetic campaign environment: each arm is a click-generating process
//! with a time-varying true CTR, standing in for a live bidding strategy.
//!
//! True CTR curves are piecewise linear in days — the simplest shape that
//! produces both a late-crossover arm and a uniformly dominant arm. The
//! simulator models outcome generation only (impressions bought at a fixed
//! cost, Bernoulli clicks, optional Bernoulli conversions); there are no
//! auction mechanics.
//!
//! Two scenario presets ship with the crate:
//!
//! - `lookback`: `model60` starts worse than the incumbent `model7`, crosses
//!   it at day 7, and keeps improving — the selector has to notice the late
//!   bloomer through its windowed KPI.
//! - `features`: `modelControl` is uniformly better than `modelTest` — the
//!   selector should move essentially all spend to it.
//!
//! Scenario files are TOML; see [`SimScenario::from_toml_str`].

use crate::arm::ArmId;
use crate::kpi::{Event, KpiSpec};
use crate::policy::{PolicyConfig, SelectionDecision};
use crate::report::{self, DailyRow, ReportError};
use crate::selector::{
    self, EventSource, LoopParams, ScheduleConfig, SelectorError, SimClock, Strategy,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::Deserialize;
use thiserror::Error;

/// Stream separator so the simulator's draws never alias the selector's.
const SIM_STREAM_SALT: u64 = 0x51D0_CAFE_F00D_5EED;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("unknown arm `{0}` in scenario")]
    UnknownArm(ArmId),
    #[error("interval [{0}, {1}) is outside the scenario duration")]
    IntervalOutOfRange(i64, i64),
    #[error("result does not belong to this scenario: {0}")]
    ScenarioMismatch(String),
    #[error("failed to read scenario file `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse scenario: {0}")]
    Parse(String),
    #[error(transparent)]
    Selector(#[from] SelectorError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

/// Piecewise-linear `day -> true CTR`, clamped to the first/last breakpoint
/// outside the covered range.
#[derive(Debug, Clone, PartialEq)]
pub struct CtrCurve {
    points: Vec<(f64, f64)>,
}

impl CtrCurve {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, SimError> {
        if points.is_empty() {
            return Err(SimError::InvalidScenario(
                "ctr_curve needs at least one breakpoint".into(),
            ));
        }
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(SimError::InvalidScenario(format!(
                    "ctr_curve breakpoint days must be strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        for &(day, ctr) in &points {
            if !day.is_finite() || !ctr.is_finite() || !(0.0..=1.0).contains(&ctr) {
                return Err(SimError::InvalidScenario(format!(
                    "ctr_curve breakpoint ({day}, {ctr}) must have finite day and CTR in [0, 1]"
                )));
            }
        }
        Ok(CtrCurve { points })
    }

    pub fn constant(ctr: f64) -> Result<Self, SimError> {
        CtrCurve::new(vec![(0.0, ctr)])
    }

    /// True CTR at `day`, linear between breakpoints.
    pub fn value_at(&self, day: f64) -> f64 {
        let first = self.points[0];
        let last = *self.points.last().expect("curve is non-empty");
        if day <= first.0 {
            return first.1;
        }
        if day >= last.0 {
            return last.1;
        }
        for w in self.points.windows(2) {
            let (d0, v0) = w[0];
            let (d1, v1) = w[1];
            if day < d1 {
                return v0 + (v1 - v0) * (day - d0) / (d1 - d0);
            }
        }
        last.1
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }
}

/// Per-interval traffic volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Volume {
    /// Fixed impression count; variance-free, the default for cadence tests.
    Fixed(u64),
    /// Poisson-distributed impression count with the given mean.
    PoissonMean(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimArm {
    pub id: ArmId,
    pub curve: CtrCurve,
}

/// Ground truth for one synthetic campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    pub name: String,
    pub arms: Vec<SimArm>,
    pub volume: Volume,
    pub cost_per_impression_micros: u64,
    pub duration_days: f64,
    pub conversion_rate_per_click: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    impressions_per_interval: Option<u64>,
    poisson_mean_impressions: Option<f64>,
    #[serde(default)]
    cost_per_impression_micros: u64,
    duration_days: f64,
    #[serde(default)]
    conversion_rate_per_click: f64,
    arms: Vec<RawArm>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArm {
    id: String,
    ctr_curve: Vec<(f64, f64)>,
}

impl SimScenario {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.arms.is_empty() {
            return Err(SimError::InvalidScenario(
                "scenario needs at least one arm".into(),
            ));
        }
        for (i, arm) in self.arms.iter().enumerate() {
            if self.arms[..i].iter().any(|a| a.id == arm.id) {
                return Err(SimError::InvalidScenario(format!(
                    "duplicate arm id `{}`",
                    arm.id
                )));
            }
        }
        if !self.duration_days.is_finite() || self.duration_days <= 0.0 {
            return Err(SimError::InvalidScenario(format!(
                "duration_days must be positive, got {}",
                self.duration_days
            )));
        }
        if !(0.0..=1.0).contains(&self.conversion_rate_per_click) {
            return Err(SimError::InvalidScenario(format!(
                "conversion_rate_per_click must be in [0, 1], got {}",
                self.conversion_rate_per_click
            )));
        }
        if let Volume::PoissonMean(m) = self.volume
            && (!m.is_finite() || m < 0.0)
        {
            return Err(SimError::InvalidScenario(format!(
                "poisson_mean_impressions must be non-negative, got {m}"
            )));
        }
        Ok(())
    }

    /// Parses the scenario TOML schema:
    ///
    /// ```toml
    /// name = "lookback"
    /// impressions_per_interval = 520        # or: poisson_mean_impressions = 520.0
    /// cost_per_impression_micros = 2500
    /// duration_days = 30.0
    /// conversion_rate_per_click = 0.0
    ///
    /// [[arms]]
    /// id = "model7"
    /// ctr_curve = [[0.0, 0.010]]            # [day, true CTR] breakpoints
    ///
    /// [[arms]]
    /// id = "model60"
    /// ctr_curve = [[0.0, 0.006], [7.0, 0.010], [9.0, 0.022]]
    /// ```
    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        let volume = match (raw.impressions_per_interval, raw.poisson_mean_impressions) {
            (Some(v), None) => Volume::Fixed(v),
            (None, Some(m)) => Volume::PoissonMean(m),
            (None, None) => {
                return Err(SimError::Parse(
                    "one of impressions_per_interval or poisson_mean_impressions is required"
                        .into(),
                ));
            }
            (Some(_), Some(_)) => {
                return Err(SimError::Parse(
                    "impressions_per_interval and poisson_mean_impressions are mutually exclusive"
                        .into(),
                ));
            }
        };
        let mut arms = Vec::with_capacity(raw.arms.len());
        for a in raw.arms {
            let id = ArmId::new(a.id).map_err(|e| SimError::Parse(e.to_string()))?;
            arms.push(SimArm {
                id,
                curve: CtrCurve::new(a.ctr_curve)?,
            });
        }
        let scenario = SimScenario {
            name: raw.name.unwrap_or_else(|| "scenario".into()),
            arms,
            volume,
            cost_per_impression_micros: raw.cost_per_impression_micros,
            duration_days: raw.duration_days,
            conversion_rate_per_click: raw.conversion_rate_per_click,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Built-in scenario by name (`lookback` or `features`).
    pub fn preset(name: &str) -> Option<SimScenario> {
        let arm = |id: &str, pts: Vec<(f64, f64)>| SimArm {
            id: ArmId::new(id).expect("preset arm ids are valid"),
            curve: CtrCurve::new(pts).expect("preset curves are valid"),
        };
        let base = |name: &str, arms: Vec<SimArm>| SimScenario {
            name: name.into(),
            arms,
            volume: Volume::Fixed(520),
            cost_per_impression_micros: 2_500,
            duration_days: 30.0,
            conversion_rate_per_click: 0.0,
        };
        match name {
            // The incumbent is steady; the challenger starts behind, crosses
            // at day 7, and plateaus well above.
            "lookback" => Some(base(
                "lookback",
                vec![
                    arm("model7", vec![(0.0, 0.010)]),
                    arm("model60", vec![(0.0, 0.006), (7.0, 0.010), (9.0, 0.022)]),
                ],
            )),
            // One arm is uniformly better online.
            "features" => Some(base(
                "features",
                vec![
                    arm("modelControl", vec![(0.0, 0.012)]),
                    arm("modelTest", vec![(0.0, 0.008)]),
                ],
            )),
            _ => None,
        }
    }

    pub fn arm_ids(&self) -> Vec<ArmId> {
        self.arms.iter().map(|a| a.id.clone()).collect()
    }

    pub fn curve_for(&self, arm: &ArmId) -> Option<&CtrCurve> {
        self.arms.iter().find(|a| &a.id == arm).map(|a| &a.curve)
    }

    pub fn duration_secs(&self) -> u64 {
        (self.duration_days * crate::kpi::SECONDS_PER_DAY as f64).round() as u64
    }
}

/// Generates one interval of traffic for the active arm: the interval's
/// impression count is drawn (or fixed), each impression clicks with the
/// arm's true CTR at mid-interval, and each click converts with the
/// scenario's conversion rate. Impressions carry the scenario cost; clicks
/// and conversions share the impression's timestamp.
pub fn step<R: Rng + ?Sized>(
    scenario: &SimScenario,
    start_time: i64,
    active: &ArmId,
    (ivl_start, ivl_end): (i64, i64),
    rng: &mut R,
) -> Result<Vec<Event>, SimError> {
    let end_limit = start_time + scenario.duration_secs() as i64;
    if ivl_start >= ivl_end || ivl_start < start_time || ivl_end > end_limit {
        return Err(SimError::IntervalOutOfRange(ivl_start, ivl_end));
    }
    let curve = scenario
        .curve_for(active)
        .ok_or_else(|| SimError::UnknownArm(active.clone()))?;

    let n = match scenario.volume {
        Volume::Fixed(v) => v,
        Volume::PoissonMean(m) if m > 0.0 => {
            let poisson = Poisson::new(m)
                .map_err(|e| SimError::InvalidScenario(format!("poisson mean {m}: {e}")))?;
            poisson.sample(rng) as u64
        }
        Volume::PoissonMean(_) => 0,
    };
    if n == 0 {
        return Ok(Vec::new());
    }

    let mid_day = ((ivl_start + ivl_end) as f64 / 2.0 - start_time as f64)
        / crate::kpi::SECONDS_PER_DAY as f64;
    let ctr = curve.value_at(mid_day);
    let span = ivl_end - ivl_start;

    let mut events = Vec::with_capacity(n as usize + (n as f64 * ctr) as usize + 4);
    for i in 0..n {
        let ts = ivl_start + (i as i64 * span) / n as i64;
        events.push(Event::impression(ts, scenario.cost_per_impression_micros));
        if rng.random::<f64>() < ctr {
            events.push(Event::click(ts));
            if scenario.conversion_rate_per_click > 0.0
                && rng.random::<f64>() < scenario.conversion_rate_per_click
            {
                events.push(Event::conversion(ts));
            }
        }
    }
    Ok(events)
}

/// [`EventSource`] wrapper around [`step`] with its own RNG stream.
pub struct CampaignSimulator {
    scenario: SimScenario,
    start_time: i64,
    rng: ChaCha8Rng,
}

impl CampaignSimulator {
    pub fn new(scenario: SimScenario, start_time: i64, seed: u64) -> Self {
        CampaignSimulator {
            scenario,
            start_time,
            rng: ChaCha8Rng::seed_from_u64(seed ^ SIM_STREAM_SALT),
        }
    }
}

impl EventSource for CampaignSimulator {
    fn events_for(
        &mut self,
        active: &ArmId,
        interval: (i64, i64),
    ) -> Result<Vec<Event>, SelectorError> {
        step(
            &self.scenario,
            self.start_time,
            active,
            interval,
            &mut self.rng,
        )
        .map_err(|e| SelectorError::InconsistentLog(format!("simulator: {e}")))
    }
}

/// Everything a simulation run produces: the raw logs, the per-day report
/// series, and headline outcomes.
#[derive(Debug, Clone)]
pub struct SimResult {
    pub scenario_name: String,
    pub events: Vec<Event>,
    pub decisions: Vec<SelectionDecision>,
    pub daily: Vec<DailyRow>,
    pub total_clicks: u64,
    /// Expected clicks forgone versus always running the pointwise-best arm.
    pub regret: f64,
    pub refresh_count: u64,
}

fn finish_run(
    scenario: &SimScenario,
    output: selector::RunOutput,
    lookback_days: f64,
) -> Result<SimResult, SimError> {
    let decisions = output.state.decisions;
    let events = output.events;
    let daily = report::build_daily_rows(&events, &decisions, lookback_days)?;
    let total_clicks = events
        .iter()
        .filter(|e| e.kind == crate::kpi::EventKind::Click)
        .count() as u64;
    let regret = regret_of(&events, &decisions, scenario)?;
    Ok(SimResult {
        scenario_name: scenario.name.clone(),
        events,
        decisions,
        daily,
        total_clicks,
        regret,
        refresh_count: output.state.refresh_count,
    })
}

/// Runs the scenario under a bandit policy. The run duration comes from the
/// scenario; swap and refresh cadences from `schedule`.
pub fn run_scenario(
    scenario: &SimScenario,
    policy: &PolicyConfig,
    schedule: &ScheduleConfig,
    kpi: &KpiSpec,
    seed: u64,
) -> Result<SimResult, SimError> {
    run_with_strategy(
        scenario,
        Strategy::Bandit(policy.clone()),
        schedule,
        kpi,
        seed,
    )
}

/// Identical wiring to [`run_scenario`] but the deterministic round-robin
/// split: every arm receives exactly 1/M of the intervals.
pub fn ab_baseline(
    scenario: &SimScenario,
    schedule: &ScheduleConfig,
    kpi: &KpiSpec,
    seed: u64,
) -> Result<SimResult, SimError> {
    run_with_strategy(scenario, Strategy::RoundRobin, schedule, kpi, seed)
}

fn run_with_strategy(
    scenario: &SimScenario,
    strategy: Strategy,
    schedule: &ScheduleConfig,
    kpi: &KpiSpec,
    seed: u64,
) -> Result<SimResult, SimError> {
    scenario.validate()?;
    let params = LoopParams {
        arms: scenario.arm_ids(),
        strategy,
        schedule: ScheduleConfig {
            swap_interval_secs: schedule.swap_interval_secs,
            kpi_refresh_secs: schedule.kpi_refresh_secs,
            run_duration_secs: scenario.duration_secs(),
        },
        kpi: *kpi,
        seed,
        start_time: 0,
    };
    let mut source = CampaignSimulator::new(scenario.clone(), 0, seed);
    let mut clock = SimClock::new(0);
    let output = selector::run(&mut source, &mut clock, params)?;
    finish_run(scenario, output, kpi.lookback_days)
}

/// Expected clicks forgone by `result`'s allocation, from the ground-truth
/// curves: for every swap interval, realized impressions times the gap
/// between the best arm's true CTR and the active arm's, at mid-interval.
pub fn regret(result: &SimResult, scenario: &SimScenario) -> Result<f64, SimError> {
    regret_of(&result.events, &result.decisions, scenario)
}

fn regret_of(
    events: &[Event],
    decisions: &[SelectionDecision],
    scenario: &SimScenario,
) -> Result<f64, SimError> {
    if decisions.is_empty() {
        return Ok(0.0);
    }
    for d in decisions {
        if scenario.curve_for(&d.chosen).is_none() {
            return Err(SimError::ScenarioMismatch(format!(
                "decision log references arm `{}` not present in scenario `{}`",
                d.chosen, scenario.name
            )));
        }
    }
    let t0 = decisions[0].timestamp;
    let t_end = decisions.last().expect("non-empty").timestamp;
    let mut total = 0.0;
    let mut cursor = 0usize;
    for (i, d) in decisions.iter().enumerate() {
        let end = decisions.get(i + 1).map_or(t_end, |n| n.timestamp);
        if end <= d.timestamp {
            continue;
        }
        let mut impressions = 0u64;
        while cursor < events.len() && events[cursor].timestamp < end {
            if events[cursor].timestamp >= d.timestamp
                && events[cursor].kind == crate::kpi::EventKind::Impression
            {
                impressions += 1;
            }
            cursor += 1;
        }
        if impressions == 0 {
            continue;
        }
        let mid_day =
            ((d.timestamp + end) as f64 / 2.0 - t0 as f64) / crate::kpi::SECONDS_PER_DAY as f64;
        let active_ctr = scenario
            .curve_for(&d.chosen)
            .expect("checked above")
            .value_at(mid_day);
        let best_ctr = scenario
            .arms
            .iter()
            .map(|a| a.curve.value_at(mid_day))
            .fold(f64::NEG_INFINITY, f64::max);
        total += impressions as f64 * (best_ctr - active_ctr);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kpi::KpiKind;
    use crate::policy::{PolicyKind, ProbabilityVector};

    fn quick_schedule() -> ScheduleConfig {
        ScheduleConfig {
            swap_interval_secs: 900,
            kpi_refresh_secs: 86_400,
            run_duration_secs: 86_400,
        }
    }

    fn ctr_kpi() -> KpiSpec {
        KpiSpec {
            kind: KpiKind::Ctr,
            lookback_days: 30.0,
            min_samples: 100,
        }
    }

    fn two_arm_scenario(ctr_a: f64, ctr_b: f64, days: f64) -> SimScenario {
        SimScenario {
            name: "test".into(),
            arms: vec![
                SimArm {
                    id: ArmId::new("A").unwrap(),
                    curve: CtrCurve::constant(ctr_a).unwrap(),
                },
                SimArm {
                    id: ArmId::new("B").unwrap(),
                    curve: CtrCurve::constant(ctr_b).unwrap(),
                },
            ],
            volume: Volume::Fixed(100),
            cost_per_impression_micros: 1_000,
            duration_days: days,
            conversion_rate_per_click: 0.0,
        }
    }

    #[test]
    fn curve_interpolates_and_clamps() {
        let curve = CtrCurve::new(vec![(0.0, 0.006), (7.0, 0.010), (9.0, 0.022)]).unwrap();
        assert_eq!(curve.value_at(-1.0), 0.006);
        assert_eq!(curve.value_at(0.0), 0.006);
        assert!((curve.value_at(3.5) - 0.008).abs() < 1e-12);
        assert!((curve.value_at(8.0) - 0.016).abs() < 1e-12);
        assert_eq!(curve.value_at(9.0), 0.022);
        assert_eq!(curve.value_at(100.0), 0.022);
    }

    #[test]
    fn curve_rejects_bad_breakpoints() {
        assert!(CtrCurve::new(vec![]).is_err());
        assert!(CtrCurve::new(vec![(0.0, 0.5), (0.0, 0.6)]).is_err());
        assert!(CtrCurve::new(vec![(0.0, 1.5)]).is_err());
        assert!(CtrCurve::new(vec![(5.0, 0.5), (1.0, 0.5)]).is_err());
    }

    #[test]
    fn step_degenerate_ctrs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let zero = two_arm_scenario(0.0, 0.0, 1.0);
        let events = step(&zero, 0, &ArmId::new("A").unwrap(), (0, 900), &mut rng).unwrap();
        assert_eq!(
            events
                .iter()
                .filter(|e| e.kind == crate::kpi::EventKind::Click)
                .count(),
            0
        );
        assert_eq!(
            events
                .iter()
                .filter(|e| e.kind == crate::kpi::EventKind::Impression)
                .count(),
            100
        );

        let one = two_arm_scenario(1.0, 1.0, 1.0);
        let events = step(&one, 0, &ArmId::new("A").unwrap(), (0, 900), &mut rng).unwrap();
        let imps = events
            .iter()
            .filter(|e| e.kind == crate::kpi::EventKind::Impression)
            .count();
        let clicks = events
            .iter()
            .filter(|e| e.kind == crate::kpi::EventKind::Click)
            .count();
        assert_eq!(imps, clicks);
    }

    #[test]
    fn step_click_rate_concentrates() {
        // 10^6 impressions at CTR 0.01: clicks within 3 sigma of the binomial.
        let scenario = SimScenario {
            volume: Volume::Fixed(1_000_000),
            ..two_arm_scenario(0.01, 0.01, 1.0)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let events = step(
            &scenario,
            0,
            &ArmId::new("A").unwrap(),
            (0, 86_400),
            &mut rng,
        )
        .unwrap();
        let clicks = events
            .iter()
            .filter(|e| e.kind == crate::kpi::EventKind::Click)
            .count() as f64;
        let sigma = (1_000_000.0f64 * 0.01 * 0.99).sqrt();
        assert!(
            (clicks - 10_000.0).abs() <= 3.0 * sigma,
            "clicks {clicks} outside 10000 +/- {:.0}",
            3.0 * sigma
        );
    }

    #[test]
    fn realized_ctr_tracks_a_drifting_curve_under_constant_allocation() {
        // Single arm means forced constant allocation; the realized CTR over
        // ~1M impressions must sit inside the binomial band around the
        // impression-weighted mean of the true curve.
        let scenario = SimScenario {
            name: "drift".into(),
            arms: vec![SimArm {
                id: ArmId::new("only").unwrap(),
                curve: CtrCurve::new(vec![(0.0, 0.004), (1.0, 0.02)]).unwrap(),
            }],
            volume: Volume::Fixed(10_416),
            cost_per_impression_micros: 0,
            duration_days: 1.0,
            conversion_rate_per_click: 0.0,
        };
        let result = run_scenario(
            &scenario,
            &PolicyConfig::default(),
            &quick_schedule(),
            &ctr_kpi(),
            40,
        )
        .unwrap();
        let impressions = result
            .events
            .iter()
            .filter(|e| e.kind == crate::kpi::EventKind::Impression)
            .count() as f64;
        let curve = &scenario.arms[0].curve;
        let expected_rate: f64 = (0..96)
            .map(|k| curve.value_at((k as f64 + 0.5) / 96.0))
            .sum::<f64>()
            / 96.0;
        let realized = result.total_clicks as f64 / impressions;
        let sigma = (expected_rate * (1.0 - expected_rate) / impressions).sqrt();
        assert!(
            (realized - expected_rate).abs() <= 3.0 * sigma,
            "realized CTR {realized} outside {expected_rate} +/- {:.6}",
            3.0 * sigma
        );
    }

    #[test]
    fn step_rejects_unknown_arm_and_bad_interval() {
        let scenario = two_arm_scenario(0.01, 0.01, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            step(
                &scenario,
                0,
                &ArmId::new("nope").unwrap(),
                (0, 900),
                &mut rng
            ),
            Err(SimError::UnknownArm(_))
        ));
        assert!(matches!(
            step(
                &scenario,
                0,
                &ArmId::new("A").unwrap(),
                (0, 2 * 86_400),
                &mut rng
            ),
            Err(SimError::IntervalOutOfRange(..))
        ));
    }

    #[test]
    fn run_determinism_per_seed() {
        let scenario = two_arm_scenario(0.02, 0.01, 1.0);
        let policy = PolicyConfig::default();
        let a = run_scenario(&scenario, &policy, &quick_schedule(), &ctr_kpi(), 99).unwrap();
        let b = run_scenario(&scenario, &policy, &quick_schedule(), &ctr_kpi(), 99).unwrap();
        assert_eq!(a.events, b.events);
        assert_eq!(a.decisions, b.decisions);
        assert_eq!(a.daily, b.daily);
        assert_eq!(a.regret, b.regret);
    }

    #[test]
    fn conservation_of_impressions_and_spend() {
        let scenario = two_arm_scenario(0.05, 0.01, 1.0);
        let policy = PolicyConfig::default();
        let result = run_scenario(&scenario, &policy, &quick_schedule(), &ctr_kpi(), 5).unwrap();
        let imps = result
            .events
            .iter()
            .filter(|e| e.kind == crate::kpi::EventKind::Impression)
            .count();
        // 96 intervals of exactly 100 impressions.
        assert_eq!(imps, 96 * 100);
        let spend: u64 = result.events.iter().map(|e| e.cost_micros).sum();
        assert_eq!(spend, 96 * 100 * 1_000);
        // Per-arm cumulative impressions on the last day add up to the total.
        let last_day = result.daily.iter().filter(|r| r.day == 1);
        let sum: u64 = last_day.map(|r| r.cumulative_impressions).sum();
        assert_eq!(sum, 96 * 100);
    }

    #[test]
    fn ab_baseline_splits_intervals_exactly() {
        let scenario = two_arm_scenario(0.02, 0.01, 1.0);
        let result = ab_baseline(&scenario, &quick_schedule(), &ctr_kpi(), 1).unwrap();
        // 97 decisions; intervals 0..96 carry traffic (the final decision's
        // interval is empty), so A gets 48 odd... even indices: 0,2,..,94.
        let mut a_intervals = 0;
        let mut b_intervals = 0;
        for (i, d) in result.decisions.iter().enumerate().take(96) {
            match d.chosen.as_str() {
                "A" => a_intervals += 1,
                "B" => b_intervals += 1,
                other => panic!("unexpected arm {other}"),
            }
            let _ = i;
        }
        assert_eq!(a_intervals, 48);
        assert_eq!(b_intervals, 48);
    }

    #[test]
    fn regret_closed_form_for_even_split() {
        // Static CTRs {0.02, 0.01}, V=100/interval, T=96 intervals, 50/50:
        // regret = 0.5 * V * T * 0.01.
        let scenario = two_arm_scenario(0.02, 0.01, 1.0);
        let result = ab_baseline(&scenario, &quick_schedule(), &ctr_kpi(), 1).unwrap();
        let expected = 0.5 * 100.0 * 96.0 * 0.01;
        assert!(
            (result.regret - expected).abs() < 1e-9,
            "regret {} != closed form {expected}",
            result.regret
        );
    }

    #[test]
    fn regret_zero_for_oracle_and_nonnegative() {
        // Single arm: the active arm is always the pointwise best.
        let scenario = SimScenario {
            name: "solo".into(),
            arms: vec![SimArm {
                id: ArmId::new("A").unwrap(),
                curve: CtrCurve::new(vec![(0.0, 0.002), (1.0, 0.03)]).unwrap(),
            }],
            volume: Volume::Fixed(50),
            cost_per_impression_micros: 0,
            duration_days: 1.0,
            conversion_rate_per_click: 0.0,
        };
        let result = run_scenario(
            &scenario,
            &PolicyConfig::default(),
            &quick_schedule(),
            &ctr_kpi(),
            2,
        )
        .unwrap();
        assert_eq!(result.regret, 0.0);

        let two = two_arm_scenario(0.02, 0.01, 1.0);
        for seed in 0..5 {
            let r = run_scenario(
                &two,
                &PolicyConfig::default(),
                &quick_schedule(),
                &ctr_kpi(),
                seed,
            )
            .unwrap();
            assert!(r.regret >= 0.0);
        }
    }

    #[test]
    fn regret_rejects_mismatched_scenario() {
        let scenario = two_arm_scenario(0.02, 0.01, 1.0);
        let result = ab_baseline(&scenario, &quick_schedule(), &ctr_kpi(), 1).unwrap();
        let other = SimScenario {
            arms: vec![SimArm {
                id: ArmId::new("X").unwrap(),
                curve: CtrCurve::constant(0.01).unwrap(),
            }],
            ..two_arm_scenario(0.02, 0.01, 1.0)
        };
        assert!(matches!(
            regret(&result, &other),
            Err(SimError::ScenarioMismatch(_))
        ));
    }

    #[test]
    fn identical_curves_under_uniform_random_split_evenly() {
        let scenario = two_arm_scenario(0.01, 0.01, 2.0);
        let policy = PolicyConfig {
            kind: PolicyKind::UniformRandom,
            ..Default::default()
        };
        let result = run_scenario(&scenario, &policy, &quick_schedule(), &ctr_kpi(), 21).unwrap();
        let total: u64 = result
            .daily
            .iter()
            .filter(|r| r.day == 2)
            .map(|r| r.cumulative_impressions)
            .sum();
        let a = result
            .daily
            .iter()
            .find(|r| r.day == 2 && r.arm.as_str() == "A")
            .unwrap()
            .cumulative_impressions;
        let share = a as f64 / total as f64;
        assert!((share - 0.5).abs() < 0.05, "share {share} too far from 1/2");
    }

    #[test]
    fn daily_probabilities_sum_to_one() {
        let scenario = two_arm_scenario(0.03, 0.01, 2.0);
        let result = run_scenario(
            &scenario,
            &PolicyConfig::default(),
            &quick_schedule(),
            &ctr_kpi(),
            8,
        )
        .unwrap();
        for day in [1u32, 2] {
            let entries: Vec<_> = result.daily.iter().filter(|r| r.day == day).collect();
            assert_eq!(entries.len(), 2);
            let sum: f64 = entries.iter().map(|r| r.activation_probability).sum();
            assert!((sum - 1.0).abs() < 1e-12);
            // And they form a valid vector.
            ProbabilityVector::new(
                entries
                    .iter()
                    .map(|r| crate::policy::ProbabilityEntry {
                        arm: r.arm.clone(),
                        probability: r.activation_probability,
                    })
                    .collect(),
            )
            .unwrap();
        }
    }

    #[test]
    fn preset_scenarios_parse_and_validate() {
        for name in ["lookback", "features"] {
            let s = SimScenario::preset(name).unwrap();
            s.validate().unwrap();
            assert_eq!(s.arms.len(), 2);
        }
        assert!(SimScenario::preset("nope").is_none());
    }

    #[test]
    fn toml_round_trip_schema() {
        let text = r#"
name = "custom"
impressions_per_interval = 42
cost_per_impression_micros = 1500
duration_days = 3.5
conversion_rate_per_click = 0.1

[[arms]]
id = "x"
ctr_curve = [[0.0, 0.01], [3.5, 0.02]]
"#;
        let s = SimScenario::from_toml_str(text).unwrap();
        assert_eq!(s.name, "custom");
        assert_eq!(s.volume, Volume::Fixed(42));
        assert_eq!(s.arms[0].id.as_str(), "x");
        assert!((s.arms[0].curve.value_at(1.75) - 0.015).abs() < 1e-12);

        assert!(SimScenario::from_toml_str("duration_days = 1.0").is_err());
        let both = r#"
impressions_per_interval = 1
poisson_mean_impressions = 2.0
duration_days = 1.0
[[arms]]
id = "x"
ctr_curve = [[0.0, 0.01]]
"#;
        assert!(SimScenario::from_toml_str(both).is_err());
    }

    #[test]
    fn poisson_volume_draws_vary_but_average_out() {
        let scenario = SimScenario {
            volume: Volume::PoissonMean(50.0),
            ..two_arm_scenario(0.0, 0.0, 1.0)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut counts = Vec::new();
        for k in 0..96 {
            let (s, e) = (k * 900, (k + 1) * 900);
            let events = step(&scenario, 0, &ArmId::new("A").unwrap(), (s, e), &mut rng).unwrap();
            counts.push(events.len() as f64);
        }
        let mean = counts.iter().sum::<f64>() / counts.len() as f64;
        assert!((mean - 50.0).abs() < 5.0, "poisson mean drifted to {mean}");
        assert!(
            counts.iter().any(|&c| c != counts[0]),
            "poisson draws should vary"
        );
    }
}
