//! Repeated-answer statistics: proportion estimates, Wald intervals, the
//! confidence-based exclusion rule, and the Bernoulli-mixture identity.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::ProbPair;
use crate::personas::Condition;

/// Standard normal `1 - alpha/2` quantiles for the supported significance
/// levels.
const Z_TABLE: &[(f64, f64)] = &[
    (0.01, 2.575_829_303_549),
    (0.02, 2.326_347_874_041),
    (0.05, 1.959_963_984_540),
    (0.10, 1.644_853_626_951),
    (0.20, 1.281_551_565_545),
];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("expected {expected} outcomes, got {actual}")]
    WrongLength { expected: usize, actual: usize },
    #[error("outcome {0} is not binary")]
    NonBinary(u8),
    #[error("alpha must be in (0, 1), got {0}")]
    AlphaOutOfRange(f64),
    #[error("no stored normal quantile for alpha = {0}; supply z explicitly")]
    UnsupportedAlpha(f64),
    #[error("repeat count must be at least 1")]
    ZeroRepeats,
    #[error("z must be positive, got {0}")]
    BadZ(f64),
    #[error("invalid mixture: {0}")]
    InvalidMixture(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiConfig {
    pub alpha: f64,
    pub repeats: u32,
    pub z: f64,
}

impl Default for CiConfig {
    fn default() -> Self {
        CiConfig {
            alpha: 0.10,
            repeats: 5,
            z: 1.644_853_626_951,
        }
    }
}

impl CiConfig {
    /// Looks `z` up from the stored quantile table.
    pub fn new(alpha: f64, repeats: u32) -> Result<CiConfig, StatsError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(StatsError::AlphaOutOfRange(alpha));
        }
        let z = Z_TABLE
            .iter()
            .find(|(a, _)| (a - alpha).abs() < 1e-12)
            .map(|&(_, z)| z)
            .ok_or(StatsError::UnsupportedAlpha(alpha))?;
        CiConfig::with_z(alpha, repeats, z)
    }

    pub fn with_z(alpha: f64, repeats: u32, z: f64) -> Result<CiConfig, StatsError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(StatsError::AlphaOutOfRange(alpha));
        }
        if repeats == 0 {
            return Err(StatsError::ZeroRepeats);
        }
        if !(z > 0.0 && z.is_finite()) {
            return Err(StatsError::BadZ(z));
        }
        Ok(CiConfig { alpha, repeats, z })
    }

    pub fn with_repeats(self, repeats: u32) -> Result<CiConfig, StatsError> {
        CiConfig::with_z(self.alpha, repeats, self.z)
    }
}

/// Exact `successes / trials` proportion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Proportion {
    pub successes: u32,
    pub trials: u32,
}

impl Proportion {
    pub fn value(self) -> f64 {
        self.successes as f64 / self.trials as f64
    }

    /// The complementary proportion (every outcome flipped).
    pub fn flipped(self) -> Proportion {
        Proportion {
            successes: self.trials - self.successes,
            trials: self.trials,
        }
    }
}

impl fmt::Display for Proportion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.successes, self.trials)
    }
}

pub fn estimate_p(outcomes: &[u8], repeats: u32) -> Result<Proportion, StatsError> {
    if outcomes.len() != repeats as usize || repeats == 0 {
        return Err(StatsError::WrongLength {
            expected: repeats as usize,
            actual: outcomes.len(),
        });
    }
    let mut successes = 0u32;
    for &o in outcomes {
        match o {
            0 => {}
            1 => successes += 1,
            other => return Err(StatsError::NonBinary(other)),
        }
    }
    Ok(Proportion {
        successes,
        trials: repeats,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

impl Interval {
    pub fn width(self) -> f64 {
        self.high - self.low
    }

    /// `true` when 0.5 lies strictly inside the interval.
    pub fn straddles_half(self) -> bool {
        self.low < 0.5 && 0.5 < self.high
    }
}

/// Normal-approximation interval `p ∓ z·sqrt(p(1-p)/m)`, clamped to [0, 1].
pub fn wald_ci(p_hat: f64, cfg: &CiConfig) -> Interval {
    let half = cfg.z * (p_hat * (1.0 - p_hat) / cfg.repeats as f64).sqrt();
    Interval {
        low: (p_hat - half).clamp(0.0, 1.0),
        high: (p_hat + half).clamp(0.0, 1.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateStatus {
    Confident,
    Excluded,
    Invalid,
}

impl EstimateStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimateStatus::Confident => "confident",
            EstimateStatus::Excluded => "excluded",
            EstimateStatus::Invalid => "invalid",
        }
    }

    pub fn parse(s: &str) -> Option<EstimateStatus> {
        match s {
            "confident" => Some(EstimateStatus::Confident),
            "excluded" => Some(EstimateStatus::Excluded),
            "invalid" => Some(EstimateStatus::Invalid),
            _ => None,
        }
    }
}

/// Outcome of the exclusion rule: either a confident label or no label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub status: EstimateStatus,
    pub label: Option<u8>,
}

impl Classification {
    pub const EXCLUDED: Classification = Classification {
        status: EstimateStatus::Excluded,
        label: None,
    };
    pub const INVALID: Classification = Classification {
        status: EstimateStatus::Invalid,
        label: None,
    };

    pub fn confident(label: u8) -> Classification {
        Classification {
            status: EstimateStatus::Confident,
            label: Some(label),
        }
    }
}

/// Excludes the estimate when its Wald interval straddles 0.5.
pub fn classify_estimate(p_hat: f64, cfg: &CiConfig) -> Classification {
    if wald_ci(p_hat, cfg).straddles_half() {
        Classification::EXCLUDED
    } else {
        Classification::confident(u8::from(p_hat > 0.5))
    }
}

/// The larger token probability wins; ties are excluded.
pub fn classify_prob(pair: &ProbPair) -> Classification {
    if pair.p1 > pair.p0 {
        Classification::confident(1)
    } else if pair.p0 > pair.p1 {
        Classification::confident(0)
    } else {
        Classification::EXCLUDED
    }
}

/// Aggregated result for one (tweet, condition) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub tweet_id: String,
    pub condition: Condition,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub status: EstimateStatus,
    pub label: Option<u8>,
}

impl EstimateRecord {
    /// Estimate from repeated binary answers.
    pub fn from_outcomes(
        tweet_id: &str,
        condition: Condition,
        outcomes: &[u8],
        cfg: &CiConfig,
    ) -> Result<EstimateRecord, StatsError> {
        let p = estimate_p(outcomes, cfg.repeats)?.value();
        let ci = wald_ci(p, cfg);
        let c = classify_estimate(p, cfg);
        Ok(EstimateRecord {
            tweet_id: tweet_id.to_owned(),
            condition,
            p_hat: p,
            ci_low: ci.low,
            ci_high: ci.high,
            status: c.status,
            label: c.label,
        })
    }

    /// Estimate from answer-token probabilities: `p_hat` is the raw
    /// probability of "1" and the interval is degenerate.
    pub fn from_prob_pair(tweet_id: &str, condition: Condition, pair: &ProbPair) -> EstimateRecord {
        let c = classify_prob(pair);
        EstimateRecord {
            tweet_id: tweet_id.to_owned(),
            condition,
            p_hat: pair.p1,
            ci_low: pair.p1,
            ci_high: pair.p1,
            status: c.status,
            label: c.label,
        }
    }

    /// Placeholder for a cell whose samples could not be parsed.
    pub fn invalid(tweet_id: &str, condition: Condition) -> EstimateRecord {
        EstimateRecord {
            tweet_id: tweet_id.to_owned(),
            condition,
            p_hat: 0.0,
            ci_low: 0.0,
            ci_high: 0.0,
            status: EstimateStatus::Invalid,
            label: None,
        }
    }
}

/// Finite mixture of Bernoulli components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    weights: Vec<f64>,
    probs: Vec<f64>,
}

impl MixtureSpec {
    pub fn new(weights: Vec<f64>, probs: Vec<f64>) -> Result<MixtureSpec, StatsError> {
        if weights.is_empty() || weights.len() != probs.len() {
            return Err(StatsError::InvalidMixture(format!(
                "{} weights for {} components",
                weights.len(),
                probs.len()
            )));
        }
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(StatsError::InvalidMixture("weight outside [0, 1]".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(StatsError::InvalidMixture(format!(
                "weights sum to {total}"
            )));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(StatsError::InvalidMixture(
                "component probability outside [0, 1]".into(),
            ));
        }
        Ok(MixtureSpec { weights, probs })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Overall success probability `Σ w_i p_i`.
pub fn mixture_success_prob(spec: &MixtureSpec) -> f64 {
    spec.weights
        .iter()
        .zip(&spec.probs)
        .map(|(w, p)| w * p)
        .sum()
}

/// Monte Carlo frequency of success over `draws` composite trials.
pub fn simulate_mixture(spec: &MixtureSpec, draws: u64, seed: u64) -> f64 {
    assert!(draws >= 1, "at least one draw required");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let last = spec.weights.len() - 1;
    let mut successes = 0u64;
    for _ in 0..draws {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut component = last;
        for (i, w) in spec.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                component = i;
                break;
            }
        }
        if rng.gen::<f64>() < spec.probs[component] {
            successes += 1;
        }
    }
    successes as f64 / draws as f64
}
