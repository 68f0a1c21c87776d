//! Property tests for the policy/attribution invariants, checked against
//! brute-force oracles where one exists.

use armsel_core::arm::ArmId;
use armsel_core::kpi::{
    self, AttributionLedger, Event, EventKind, KpiKind, KpiSpec, SECONDS_PER_DAY,
};
use armsel_core::policy::{
    self, ArmScore, Direction, ProbabilityEntry, ProbabilityVector, TieRule,
};
use armsel_core::store::{self, EventStore, LogRecord};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn arm(id: &str) -> ArmId {
    ArmId::new(id).unwrap()
}

const ARM_NAMES: [&str; 5] = ["a", "b", "c", "d", "e"];

// ---------------------------------------------------------------------------
// Brute-force oracles
// ---------------------------------------------------------------------------

/// Per-event linear scan over the interval list.
fn oracle_attribute(ts: i64, intervals: &[(i64, i64, ArmId)]) -> Option<ArmId> {
    intervals
        .iter()
        .find(|(s, e, _)| ts >= *s && ts < *e)
        .map(|(_, _, a)| a.clone())
}

/// Full-scan windowed tally for one arm from pre-attributed events.
fn oracle_tally(
    events: &[(Event, Option<ArmId>)],
    who: &ArmId,
    spec: &KpiSpec,
    now: i64,
) -> (u64, u64, u64, u64) {
    let start = spec.window_start(now);
    let mut t = (0u64, 0u64, 0u64, 0u64);
    for (e, owner) in events {
        if owner.as_ref() != Some(who) || e.timestamp < start || e.timestamp >= now {
            continue;
        }
        match e.kind {
            EventKind::Impression => {
                t.0 += 1;
                t.3 += e.cost_micros;
            }
            EventKind::Click => t.1 += 1,
            EventKind::Conversion => t.2 += 1,
        }
    }
    t
}

fn oracle_kpi(kind: KpiKind, tally: (u64, u64, u64, u64)) -> Option<f64> {
    let (imp, clicks, conv, spend) = tally;
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    match kind {
        KpiKind::Ctr => ratio(clicks, imp),
        KpiKind::Cpc => ratio(spend, clicks),
        KpiKind::Cpa => ratio(spend, conv),
    }
}

// ---------------------------------------------------------------------------
// Strategies
// ---------------------------------------------------------------------------

fn event_strategy(max_ts: i64) -> impl Strategy<Value = Event> {
    (0..max_ts, 0..3u8, 0..5_000u64).prop_map(|(ts, kind, cost)| match kind {
        0 => Event::impression(ts, cost),
        1 => Event::click(ts),
        _ => Event::conversion(ts),
    })
}

/// Contiguous intervals over [0, total) with random arm assignment.
fn ledger_strategy(pieces: usize, max_len: i64) -> impl Strategy<Value = Vec<(i64, i64, ArmId)>> {
    proptest::collection::vec((1..max_len, 0..ARM_NAMES.len()), 1..pieces).prop_map(|parts| {
        let mut t = 0;
        parts
            .into_iter()
            .map(|(len, who)| {
                let iv = (t, t + len, arm(ARM_NAMES[who]));
                t += len;
                iv
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn activation_vectors_are_distributions(
        epsilon in 0.0..=1.0f64,
        m in 1..=8usize,
        best in 0..8usize,
    ) {
        let scores: Vec<ArmScore> = (0..m)
            .map(|i| ArmScore::qualified(
                arm(&format!("m{i}")),
                if i == best % m { 0.9 } else { 0.1 },
                Direction::Maximize,
                1_000,
            ))
            .collect();
        let v = policy::activation_probabilities(&scores, epsilon, TieRule::LexicographicId).unwrap();
        let sum: f64 = v.entries().iter().map(|e| e.probability).sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        prop_assert!(v.entries().iter().all(|e| (0.0..=1.0).contains(&e.probability)));

        // p_best - p_other = 1 - eps, for every non-best arm.
        let p_best = v.probability_of(&scores[best % m].arm).unwrap();
        for e in v.entries() {
            if e.arm != scores[best % m].arm {
                prop_assert!((p_best - e.probability - (1.0 - epsilon)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn epsilon_schedule_is_monotone_and_clamped(
        epsilon0 in 0.0..=1.0f64,
        alpha in 0.5..60.0f64,
        t1 in 0.0..120.0f64,
        dt in 0.0..60.0f64,
    ) {
        let e0 = policy::epsilon_at(0.0, epsilon0, alpha).unwrap();
        prop_assert_eq!(e0, epsilon0);
        let a = policy::epsilon_at(t1, epsilon0, alpha).unwrap();
        let b = policy::epsilon_at(t1 + dt, epsilon0, alpha).unwrap();
        prop_assert!(b <= a, "eps must not increase: eps({t1})={a}, eps({})={b}", t1 + dt);
        prop_assert!((0.0..=epsilon0 + 1e-15).contains(&a));
        if t1 >= alpha {
            prop_assert_eq!(a, 0.0);
        }
    }

    #[test]
    fn softmax_is_shift_invariant(
        base in proptest::collection::vec(0.0..1.0f64, 2..6),
        shift in -100.0..100.0f64,
        temperature in 0.5..50.0f64,
    ) {
        let scores: Vec<ArmScore> = base
            .iter()
            .enumerate()
            .map(|(i, v)| ArmScore::qualified(arm(&format!("m{i}")), *v, Direction::Maximize, 100))
            .collect();
        let shifted: Vec<ArmScore> = scores
            .iter()
            .map(|s| ArmScore { kpi_value: s.kpi_value.map(|v| v + shift), ..s.clone() })
            .collect();
        let a = policy::softmax_probabilities(&scores, temperature).unwrap();
        let b = policy::softmax_probabilities(&shifted, temperature).unwrap();
        for (x, y) in a.entries().iter().zip(b.entries()) {
            prop_assert!((x.probability - y.probability).abs() <= 1e-12);
        }
    }

    #[test]
    fn best_arm_is_invariant_under_monotone_transforms(
        raw in proptest::collection::vec(0..1000u32, 1..6),
        scale in 0.5..20.0f64,
        offset in -5.0..5.0f64,
    ) {
        // Values on a grid so the nonlinear transform cannot collapse
        // distinct inputs through rounding.
        let scores: Vec<ArmScore> = raw
            .iter()
            .enumerate()
            .map(|(i, v)| {
                ArmScore::qualified(arm(&format!("m{i}")), *v as f64 / 1000.0, Direction::Maximize, 50)
            })
            .collect();
        let affine: Vec<ArmScore> = scores
            .iter()
            .map(|s| ArmScore { kpi_value: s.kpi_value.map(|v| v * scale + offset), ..s.clone() })
            .collect();
        let expy: Vec<ArmScore> = scores
            .iter()
            .map(|s| ArmScore { kpi_value: s.kpi_value.map(f64::exp), ..s.clone() })
            .collect();
        let base = policy::best_arm(&scores, TieRule::LexicographicId).unwrap().cloned();
        prop_assert_eq!(policy::best_arm(&affine, TieRule::LexicographicId).unwrap().cloned(), base.clone());
        prop_assert_eq!(policy::best_arm(&expy, TieRule::LexicographicId).unwrap().cloned(), base);
    }

    #[test]
    fn attribution_matches_linear_scan_oracle_and_partitions(
        mut events in proptest::collection::vec(event_strategy(60_000), 1..300),
        intervals in ledger_strategy(40, 2_000),
    ) {
        events.sort_by_key(|e| e.timestamp);
        let ledger = AttributionLedger::new(intervals.clone()).unwrap();
        let attributed = kpi::attribute_events(&events, &ledger);
        let run_end = intervals.last().unwrap().1;
        let mut in_run = 0usize;
        for (e, got) in events.iter().zip(&attributed) {
            prop_assert_eq!(got.arm.clone(), oracle_attribute(e.timestamp, &intervals));
            if e.timestamp >= 0 && e.timestamp < run_end {
                // Contiguous ledger: every in-run event owned by exactly one arm.
                prop_assert!(got.arm.is_some());
                in_run += 1;
            }
        }
        let owned = attributed.iter().filter(|e| e.arm.is_some()).count();
        prop_assert_eq!(owned, in_run);
    }

    #[test]
    fn snapshots_match_full_scan_oracle(
        mut events in proptest::collection::vec(event_strategy(5 * SECONDS_PER_DAY), 1..300),
        intervals in ledger_strategy(30, SECONDS_PER_DAY),
        kind in prop_oneof![Just(KpiKind::Ctr), Just(KpiKind::Cpc), Just(KpiKind::Cpa)],
        lookback in 0.5..40.0f64,
        now in 1..6 * SECONDS_PER_DAY,
    ) {
        events.sort_by_key(|e| e.timestamp);
        let spec = KpiSpec { kind, lookback_days: lookback, min_samples: 1 };
        let ledger = AttributionLedger::new(intervals.clone()).unwrap();
        let arms: Vec<ArmId> = ARM_NAMES.iter().map(|s| arm(s)).collect();
        let snaps = kpi::snapshot_kpis(&events, &ledger, &spec, &arms, now).unwrap();

        let oracle_events: Vec<(Event, Option<ArmId>)> = events
            .iter()
            .map(|e| (e.clone(), oracle_attribute(e.timestamp, &intervals)))
            .collect();
        for (who, snap) in arms.iter().zip(&snaps) {
            let tally = oracle_tally(&oracle_events, who, &spec, now);
            prop_assert_eq!(snap.impressions, tally.0);
            prop_assert_eq!(snap.clicks, tally.1);
            prop_assert_eq!(snap.conversions, tally.2);
            prop_assert_eq!(snap.spend_micros, tally.3);
            prop_assert_eq!(snap.kpi_value, oracle_kpi(kind, tally));
        }
    }

    #[test]
    fn windowed_counts_are_additive_and_translation_invariant(
        mut events in proptest::collection::vec(event_strategy(2 * SECONDS_PER_DAY), 2..200),
        split in 0.0..1.0f64,
        shift in -1_000_000i64..1_000_000i64,
        now in SECONDS_PER_DAY..3 * SECONDS_PER_DAY,
    ) {
        let who = arm("a");
        for e in &mut events {
            e.arm = Some(who.clone());
        }
        let spec = KpiSpec { kind: KpiKind::Ctr, lookback_days: 1.0, min_samples: 1 };

        // Additivity of counts over a disjoint split.
        let cut = (events.len() as f64 * split) as usize;
        let (left, right) = events.split_at(cut.min(events.len()));
        let whole = kpi::windowed_kpi(&events, &who, &spec, now);
        let a = kpi::windowed_kpi(left, &who, &spec, now);
        let b = kpi::windowed_kpi(right, &who, &spec, now);
        prop_assert_eq!(whole.impressions, a.impressions + b.impressions);
        prop_assert_eq!(whole.clicks, a.clicks + b.clicks);
        prop_assert_eq!(whole.conversions, a.conversions + b.conversions);
        prop_assert_eq!(whole.spend_micros, a.spend_micros + b.spend_micros);

        // Shifting all timestamps and `now` together changes nothing.
        let shifted: Vec<Event> = events
            .iter()
            .map(|e| Event { timestamp: e.timestamp + shift, ..e.clone() })
            .collect();
        let moved = kpi::windowed_kpi(&shifted, &who, &spec, now + shift);
        prop_assert_eq!(whole.impressions, moved.impressions);
        prop_assert_eq!(whole.clicks, moved.clicks);
        prop_assert_eq!(whole.conversions, moved.conversions);
        prop_assert_eq!(whole.spend_micros, moved.spend_micros);
        prop_assert_eq!(whole.kpi_value, moved.kpi_value);
    }

    #[test]
    fn log_lines_round_trip_losslessly(
        mut events in proptest::collection::vec(event_strategy(100_000), 0..60),
        probs in 1..=5usize,
        ts in 0..100_000i64,
        eps in 0.0..=1.0f64,
    ) {
        events.sort_by_key(|e| e.timestamp);
        let arms: Vec<ArmId> = (0..probs).map(|i| arm(ARM_NAMES[i])).collect();
        let decision = policy::SelectionDecision {
            timestamp: ts,
            epsilon_used: eps,
            chosen: arms[0].clone(),
            probabilities: ProbabilityVector::new(
                arms.iter()
                    .enumerate()
                    .map(|(i, a)| ProbabilityEntry {
                        arm: a.clone(),
                        probability: if i == 0 {
                            1.0 - 0.1 * (probs - 1) as f64
                        } else {
                            0.1
                        },
                    })
                    .collect(),
            )
            .unwrap(),
        };

        let tmp = tempfile::TempDir::new().unwrap();
        let mut store = EventStore::create(tmp.path(), "prop").unwrap();
        for e in &events {
            store.append(LogRecord::Event(e.clone())).unwrap();
        }
        store.append_decision(&decision).unwrap();
        store.flush().unwrap();

        let loaded = store::load_run(tmp.path(), "prop").unwrap();
        prop_assert_eq!(loaded.events, events);
        prop_assert_eq!(loaded.decisions, vec![decision]);
    }
}

// ---------------------------------------------------------------------------
// Deterministic spot checks that complement the properties above
// ---------------------------------------------------------------------------

#[test]
fn select_arm_long_run_frequencies_match_the_vector() {
    let arms: Vec<ArmId> = ["a", "b"].iter().map(|s| arm(s)).collect();
    let v = ProbabilityVector::new(vec![
        ProbabilityEntry {
            arm: arms[0].clone(),
            probability: 0.85,
        },
        ProbabilityEntry {
            arm: arms[1].clone(),
            probability: 0.15,
        },
    ])
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let draws = 100_000;
    let a_count = (0..draws)
        .filter(|_| policy::select_arm(&v, 0.0, 0, &mut rng).chosen == arms[0])
        .count();
    let freq = a_count as f64 / draws as f64;
    assert!(
        (freq - 0.85).abs() < 0.01,
        "empirical frequency {freq} vs 0.85"
    );
}

#[test]
fn replay_report_equals_live_report() {
    use armsel_core::sim;
    let scenario = sim::SimScenario::preset("features").unwrap();
    let schedule = armsel_core::selector::ScheduleConfig::standard(0)
        .validate()
        .err()
        .map(|_| ());
    assert!(schedule.is_some(), "standard(0) must be invalid");
    let schedule = armsel_core::selector::ScheduleConfig {
        swap_interval_secs: 900,
        kpi_refresh_secs: 86_400,
        run_duration_secs: 86_400,
    };
    let kpi = KpiSpec::default();
    let mut small = scenario.clone();
    small.duration_days = 2.0;
    let result = sim::run_scenario(&small, &Default::default(), &schedule, &kpi, 7).unwrap();

    let tmp = tempfile::TempDir::new().unwrap();
    let mut st = EventStore::create(tmp.path(), "roundtrip").unwrap();
    for e in &result.events {
        st.append_event(e).unwrap();
    }
    for d in &result.decisions {
        st.append_decision(d).unwrap();
    }
    st.flush().unwrap();

    let loaded = store::load_run(tmp.path(), "roundtrip").unwrap();
    let replayed = store::replay(&loaded.events, &loaded.decisions, kpi.lookback_days).unwrap();
    assert_eq!(replayed, result.daily);
    // Idempotent: replaying the replay inputs again changes nothing.
    let again = store::replay(&loaded.events, &loaded.decisions, kpi.lookback_days).unwrap();
    assert_eq!(again, replayed);
    // And the rendered CSV is byte-identical.
    assert_eq!(
        armsel_core::report::render_csv(&replayed),
        armsel_core::report::render_csv(&result.daily)
    );
}
