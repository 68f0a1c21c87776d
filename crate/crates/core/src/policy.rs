//! Bandit policy math: ε schedules, activation probabilities, and the
//! comparator policies (softmax, UCB, Thompson sampling).
//!
//! Everything here is a pure function of its inputs plus an explicit RNG, so
//! a pinned seed replays bit-identically. Probability vectors always cover
//! the full arm set and sum to 1 within 1e-12.
//!
//! The decay ε-greedy allocation: the arm with the best windowed KPI gets
//!
//! ```text
//! p_best  = (1 - eps) + eps / m
//! p_other = eps / m
//! ```
//!
//! with `eps(t) = eps0 * max(0, 1 - t/alpha)` shrinking linearly to zero over
//! the decay horizon `alpha` (in days), so selection turns fully greedy once
//! the performance estimates have had time to stabilize.

use crate::arm::ArmId;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for "probabilities sum to 1" checks.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no arms given")]
    NoArms,
    #[error("scores mix Maximize and Minimize directions")]
    MixedDirections,
    #[error("qualified score for arm `{0}` has no KPI value")]
    MissingKpiValue(ArmId),
    #[error("probability vector invalid: {0}")]
    InvalidProbabilities(String),
}

/// Whether a larger or smaller KPI value is better (CTR maximizes, CPC/CPA
/// minimize).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Maximize,
    Minimize,
}

/// Which bandit policy drives arm selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    DecayEpsilonGreedy,
    Softmax,
    Ucb,
    ThompsonBetaBernoulli,
    UniformRandom,
}

/// Policy choice plus every hyperparameter any of the policies may need.
/// Unused fields are ignored by the active policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Initial exploration rate ε₀ for decay ε-greedy.
    pub epsilon0: f64,
    /// Decay horizon α in days; ε reaches 0 at `t = alpha_days`.
    pub alpha_days: f64,
    /// Softmax temperature, in KPI units (CTR-scale KPIs want ~0.01).
    pub temperature: f64,
    /// UCB exploration constant.
    pub ucb_c: f64,
    /// Beta prior for Thompson sampling on click rate.
    pub prior_a: f64,
    pub prior_b: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            kind: PolicyKind::DecayEpsilonGreedy,
            epsilon0: 0.3,
            alpha_days: 30.0,
            temperature: 0.01,
            ucb_c: 2.0,
            prior_a: 1.0,
            prior_b: 1.0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(0.0..=1.0).contains(&self.epsilon0) {
            return Err(PolicyError::InvalidArgument(format!(
                "epsilon0 must be in [0, 1], got {}",
                self.epsilon0
            )));
        }
        for (name, v) in [
            ("alpha_days", self.alpha_days),
            ("temperature", self.temperature),
            ("ucb_c", self.ucb_c),
            ("prior_a", self.prior_a),
            ("prior_b", self.prior_b),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(PolicyError::InvalidArgument(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// One arm's windowed KPI as seen by the selector.
///
/// `qualified` is false until the arm has at least the configured minimum
/// number of in-window impressions and a defined KPI value; unqualified arms
/// never contend for "best".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmScore {
    pub arm: ArmId,
    pub kpi_value: Option<f64>,
    pub direction: Direction,
    pub samples: u64,
    pub qualified: bool,
}

impl ArmScore {
    pub fn qualified(arm: ArmId, kpi_value: f64, direction: Direction, samples: u64) -> Self {
        ArmScore {
            arm,
            kpi_value: Some(kpi_value),
            direction,
            samples,
            qualified: true,
        }
    }

    pub fn unqualified(arm: ArmId, direction: Direction, samples: u64) -> Self {
        ArmScore {
            arm,
            kpi_value: None,
            direction,
            samples,
            qualified: false,
        }
    }

    fn validate(&self) -> Result<(), PolicyError> {
        if self.qualified {
            match self.kpi_value {
                Some(v) if v.is_finite() => Ok(()),
                _ => Err(PolicyError::MissingKpiValue(self.arm.clone())),
            }
        } else {
            Ok(())
        }
    }
}

/// Tie-breaking rule when KPI values are exactly equal.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    /// Prefer the lexicographically smallest arm id (deterministic replay).
    #[default]
    LexicographicId,
}

/// One entry of a [`ProbabilityVector`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityEntry {
    pub arm: ArmId,
    pub probability: f64,
}

/// Activation probabilities over the full arm set, in registration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ProbabilityEntry>", into = "Vec<ProbabilityEntry>")]
pub struct ProbabilityVector {
    entries: Vec<ProbabilityEntry>,
}

impl ProbabilityVector {
    /// Builds a vector, checking every entry is in `[0, 1]` and the total is
    /// 1 within [`PROBABILITY_SUM_TOLERANCE`].
    pub fn new(entries: Vec<ProbabilityEntry>) -> Result<Self, PolicyError> {
        if entries.is_empty() {
            return Err(PolicyError::NoArms);
        }
        let mut sum = 0.0;
        for e in &entries {
            if !e.probability.is_finite() || !(0.0..=1.0).contains(&e.probability) {
                return Err(PolicyError::InvalidProbabilities(format!(
                    "probability {} for arm `{}` is outside [0, 1]",
                    e.probability, e.arm
                )));
            }
            sum += e.probability;
        }
        if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
            return Err(PolicyError::InvalidProbabilities(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(ProbabilityVector { entries })
    }

    /// Uniform distribution over `arms`.
    pub fn uniform(arms: &[ArmId]) -> Result<Self, PolicyError> {
        if arms.is_empty() {
            return Err(PolicyError::NoArms);
        }
        let p = 1.0 / arms.len() as f64;
        ProbabilityVector::new(
            arms.iter()
                .map(|a| ProbabilityEntry {
                    arm: a.clone(),
                    probability: p,
                })
                .collect(),
        )
    }

    /// All mass on `chosen`; used by policies that pick deterministically
    /// (UCB) or by direct posterior draw (Thompson).
    pub fn degenerate(arms: &[ArmId], chosen: &ArmId) -> Result<Self, PolicyError> {
        if !arms.contains(chosen) {
            return Err(PolicyError::InvalidArgument(format!(
                "chosen arm `{chosen}` is not in the arm set"
            )));
        }
        ProbabilityVector::new(
            arms.iter()
                .map(|a| ProbabilityEntry {
                    arm: a.clone(),
                    probability: if a == chosen { 1.0 } else { 0.0 },
                })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[ProbabilityEntry] {
        &self.entries
    }

    /// Number of arms (the candidate-set size).
    pub fn arm_count(&self) -> usize {
        self.entries.len()
    }

    pub fn probability_of(&self, arm: &ArmId) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| &e.arm == arm)
            .map(|e| e.probability)
    }

    pub fn arms(&self) -> impl Iterator<Item = &ArmId> {
        self.entries.iter().map(|e| &e.arm)
    }
}

impl TryFrom<Vec<ProbabilityEntry>> for ProbabilityVector {
    type Error = PolicyError;

    fn try_from(entries: Vec<ProbabilityEntry>) -> Result<Self, Self::Error> {
        ProbabilityVector::new(entries)
    }
}

impl From<ProbabilityVector> for Vec<ProbabilityEntry> {
    fn from(v: ProbabilityVector) -> Self {
        v.entries
    }
}

/// One record of the decision log: what the selector chose at a swap
/// boundary, under which probabilities, and with which ε in force.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionDecision {
    /// Seconds since epoch.
    pub timestamp: i64,
    pub epsilon_used: f64,
    pub chosen: ArmId,
    pub probabilities: ProbabilityVector,
}

impl SelectionDecision {
    pub fn validate(&self) -> Result<(), PolicyError> {
        match self.probabilities.probability_of(&self.chosen) {
            Some(p) if p > 0.0 => Ok(()),
            Some(_) => Err(PolicyError::InvalidProbabilities(format!(
                "chosen arm `{}` has zero probability",
                self.chosen
            ))),
            None => Err(PolicyError::InvalidProbabilities(format!(
                "chosen arm `{}` missing from probability vector",
                self.chosen
            ))),
        }
    }
}

/// The exploration rate at `t_days` days after selector start:
/// `eps0 * max(0, 1 - t/alpha)`. Non-increasing in `t`, equal to `eps0` at
/// `t = 0`, exactly 0 for `t >= alpha`.
pub fn epsilon_at(t_days: f64, epsilon0: f64, alpha_days: f64) -> Result<f64, PolicyError> {
    if !t_days.is_finite() || t_days < 0.0 {
        return Err(PolicyError::InvalidArgument(format!(
            "t_days must be finite and non-negative, got {t_days}"
        )));
    }
    if !(0.0..=1.0).contains(&epsilon0) {
        return Err(PolicyError::InvalidArgument(format!(
            "epsilon0 must be in [0, 1], got {epsilon0}"
        )));
    }
    if !alpha_days.is_finite() || alpha_days <= 0.0 {
        return Err(PolicyError::InvalidArgument(format!(
            "alpha_days must be positive, got {alpha_days}"
        )));
    }
    Ok(epsilon0 * (1.0 - t_days / alpha_days).max(0.0))
}

fn check_uniform_direction(scores: &[ArmScore]) -> Result<Direction, PolicyError> {
    let mut dirs = scores.iter().map(|s| s.direction);
    let first = dirs.next().ok_or(PolicyError::NoArms)?;
    if dirs.any(|d| d != first) {
        return Err(PolicyError::MixedDirections);
    }
    Ok(first)
}

/// The qualified arm with the best KPI (argmax for Maximize, argmin for
/// Minimize), ties broken by lexicographically smallest id. `None` when no
/// arm is qualified (cold start).
pub fn best_arm(scores: &[ArmScore], _tie: TieRule) -> Result<Option<&ArmId>, PolicyError> {
    let direction = check_uniform_direction(scores)?;
    for s in scores {
        s.validate()?;
    }
    let mut best: Option<(&ArmId, f64)> = None;
    for s in scores.iter().filter(|s| s.qualified) {
        let v = s.kpi_value.expect("qualified score validated above");
        let better = match best {
            None => true,
            Some((best_id, best_v)) => {
                let improves = match direction {
                    Direction::Maximize => v > best_v,
                    Direction::Minimize => v < best_v,
                };
                improves || (v == best_v && s.arm < *best_id)
            }
        };
        if better {
            best = Some((&s.arm, v));
        }
    }
    Ok(best.map(|(id, _)| id))
}

/// The decay ε-greedy activation probabilities: the best arm gets
/// `(1 - eps) + eps/m`, every other arm `eps/m`. With no qualified arm the
/// allocation is uniform.
pub fn activation_probabilities(
    scores: &[ArmScore],
    epsilon: f64,
    tie: TieRule,
) -> Result<ProbabilityVector, PolicyError> {
    if scores.is_empty() {
        return Err(PolicyError::NoArms);
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(PolicyError::InvalidArgument(format!(
            "epsilon must be in [0, 1], got {epsilon}"
        )));
    }
    let m = scores.len() as f64;
    let entries = match best_arm(scores, tie)? {
        None => scores
            .iter()
            .map(|s| ProbabilityEntry {
                arm: s.arm.clone(),
                probability: 1.0 / m,
            })
            .collect(),
        Some(best) => {
            let p_other = epsilon / m;
            let p_best = (1.0 - epsilon) + p_other;
            scores
                .iter()
                .map(|s| ProbabilityEntry {
                    arm: s.arm.clone(),
                    probability: if &s.arm == best { p_best } else { p_other },
                })
                .collect()
        }
    };
    ProbabilityVector::new(entries)
}

/// Samples one arm from `probabilities` with a single uniform draw walked
/// against the cumulative distribution in entry order. Same seed and vector,
/// same choice.
pub fn select_arm<R: Rng + ?Sized>(
    probabilities: &ProbabilityVector,
    epsilon_used: f64,
    timestamp: i64,
    rng: &mut R,
) -> SelectionDecision {
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    let mut chosen: Option<&ArmId> = None;
    for e in probabilities.entries() {
        cumulative += e.probability;
        if u < cumulative {
            chosen = Some(&e.arm);
            break;
        }
    }
    // Rounding can leave the total a hair under 1; fall back to the last
    // entry that has any mass.
    let chosen = chosen
        .or_else(|| {
            probabilities
                .entries()
                .iter()
                .rev()
                .find(|e| e.probability > 0.0)
                .map(|e| &e.arm)
        })
        .expect("probability vector has at least one positive entry")
        .clone();
    SelectionDecision {
        timestamp,
        epsilon_used,
        chosen,
        probabilities: probabilities.clone(),
    }
}

/// Boltzmann exploration: probability ∝ `exp(value / temperature)`, with the
/// max subtracted before exponentiation for numerical stability. Minimize
/// KPIs are negated so "better" always weighs more. Callers pass qualified
/// scores only.
pub fn softmax_probabilities(
    scores: &[ArmScore],
    temperature: f64,
) -> Result<ProbabilityVector, PolicyError> {
    if !temperature.is_finite() || temperature <= 0.0 {
        return Err(PolicyError::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let direction = check_uniform_direction(scores)?;
    let mut values = Vec::with_capacity(scores.len());
    for s in scores {
        s.validate()?;
        if !s.qualified {
            return Err(PolicyError::InvalidArgument(format!(
                "softmax requires qualified scores; arm `{}` is unqualified",
                s.arm
            )));
        }
        let v = s.kpi_value.expect("qualified score validated above");
        values.push(match direction {
            Direction::Maximize => v,
            Direction::Minimize => -v,
        });
    }
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = values
        .iter()
        .map(|v| ((v - max) / temperature).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    ProbabilityVector::new(
        scores
            .iter()
            .zip(&weights)
            .map(|(s, w)| ProbabilityEntry {
                arm: s.arm.clone(),
                probability: w / total,
            })
            .collect(),
    )
}

/// The optimistic index `mean + sqrt(c * ln(total_pulls) / pulls)`. An arm
/// that has never been pulled gets `+inf` so it is explored before any arm
/// is repeated.
pub fn ucb_index(mean: f64, pulls: u64, total_pulls: u64, c: f64) -> Result<f64, PolicyError> {
    if total_pulls == 0 {
        return Err(PolicyError::InvalidArgument(
            "total_pulls must be positive".into(),
        ));
    }
    if pulls > total_pulls {
        return Err(PolicyError::InvalidArgument(format!(
            "pulls ({pulls}) exceeds total_pulls ({total_pulls})"
        )));
    }
    if !c.is_finite() || c <= 0.0 {
        return Err(PolicyError::InvalidArgument(format!(
            "c must be positive, got {c}"
        )));
    }
    if !mean.is_finite() {
        return Err(PolicyError::InvalidArgument(format!(
            "mean must be finite, got {mean}"
        )));
    }
    if pulls == 0 {
        return Ok(f64::INFINITY);
    }
    Ok(mean + (c * (total_pulls as f64).ln() / pulls as f64).sqrt())
}

/// Per-arm input to [`ucb_select`]. `mean` is already oriented so larger is
/// better; `pulls` counts how many swap intervals the arm has been activated.
#[derive(Debug, Clone, PartialEq)]
pub struct UcbArmStat {
    pub arm: ArmId,
    pub mean: f64,
    pub pulls: u64,
}

/// Picks the arm with the highest optimistic index, lexicographic tie-break.
/// Unpulled arms rank above everything, smallest id first.
pub fn ucb_select(stats: &[UcbArmStat], c: f64, _tie: TieRule) -> Result<&ArmId, PolicyError> {
    if stats.is_empty() {
        return Err(PolicyError::NoArms);
    }
    if let Some(unpulled) = stats
        .iter()
        .filter(|s| s.pulls == 0)
        .min_by(|a, b| a.arm.cmp(&b.arm))
    {
        return Ok(&unpulled.arm);
    }
    let total: u64 = stats.iter().map(|s| s.pulls).sum();
    let mut best: Option<(&ArmId, f64)> = None;
    for s in stats {
        let index = ucb_index(s.mean, s.pulls, total, c)?;
        let better = match best {
            None => true,
            Some((best_id, best_index)) => {
                index > best_index || (index == best_index && s.arm < *best_id)
            }
        };
        if better {
            best = Some((&s.arm, index));
        }
    }
    Ok(best.expect("stats is non-empty").0)
}

/// Draws one Beta sample per arm from the shared stream, in arm order, and
/// returns the arm whose sample is largest. The posterior for an arm with
/// `k` clicks over `n` impressions under prior `(a0, b0)` is
/// `Beta(a0 + k, b0 + n - k)`.
pub fn thompson_draw<R: Rng + ?Sized>(
    posteriors: &[(ArmId, f64, f64)],
    rng: &mut R,
) -> Result<ArmId, PolicyError> {
    if posteriors.is_empty() {
        return Err(PolicyError::NoArms);
    }
    let mut best: Option<(&ArmId, f64)> = None;
    for (arm, a, b) in posteriors {
        if !a.is_finite() || !b.is_finite() || *a <= 0.0 || *b <= 0.0 {
            return Err(PolicyError::InvalidArgument(format!(
                "Beta parameters for arm `{arm}` must be positive, got ({a}, {b})"
            )));
        }
        let dist = Beta::new(*a, *b).map_err(|e| {
            PolicyError::InvalidArgument(format!("Beta({a}, {b}) for arm `{arm}`: {e}"))
        })?;
        let sample = dist.sample(rng);
        let better = match best {
            None => true,
            Some((best_id, best_sample)) => {
                sample > best_sample || (sample == best_sample && arm < best_id)
            }
        };
        if better {
            best = Some((arm, sample));
        }
    }
    Ok(best.expect("posteriors is non-empty").0.clone())
}

/// Posterior mean of `Beta(a0 + k, b0 + (n - k))`, i.e. `(a0+k)/(a0+b0+n)`.
pub fn beta_posterior_mean(prior_a: f64, prior_b: f64, clicks: u64, impressions: u64) -> f64 {
    (prior_a + clicks as f64) / (prior_a + prior_b + impressions as f64)
}
