use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::critic::ScheduleKind;
use crate::error::{Error, Result};
use crate::mdp::DEFAULT_EPISODE_CAP;
use crate::risk::{RiskKind, RiskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    /// Off-policy actor-critic with an expectile critic.
    #[serde(rename = "exp-ac")]
    ExpAC,
    /// Off-policy actor-critic with a two-timescale VaR/CVaR critic.
    #[serde(rename = "cvar-ac")]
    CVaRAC,
    /// Risk-neutral tabular Q-learning.
    #[serde(rename = "q-learning")]
    QLearning,
    /// The off-policy actor-critic at α = 1/2 (risk-neutral).
    #[serde(rename = "epg")]
    EPG,
    /// On-policy expectile PG with a state-value critic.
    #[serde(rename = "exp-pg")]
    ExpPG,
    /// On-policy CVaR PG with a hinge-weighted score.
    #[serde(rename = "envelope-pg")]
    EnvelopePG,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::ExpAC,
        Algorithm::CVaRAC,
        Algorithm::QLearning,
        Algorithm::EPG,
        Algorithm::ExpPG,
        Algorithm::EnvelopePG,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::ExpAC => "exp-ac",
            Algorithm::CVaRAC => "cvar-ac",
            Algorithm::QLearning => "q-learning",
            Algorithm::EPG => "epg",
            Algorithm::ExpPG => "exp-pg",
            Algorithm::EnvelopePG => "envelope-pg",
        }
    }

    pub fn risk_kind(self) -> RiskKind {
        match self {
            Algorithm::ExpAC | Algorithm::ExpPG => RiskKind::Expectile,
            Algorithm::CVaRAC | Algorithm::EnvelopePG => RiskKind::CVaR,
            Algorithm::QLearning | Algorithm::EPG => RiskKind::Mean,
        }
    }

    fn needs_var_rate(self) -> bool {
        matches!(self, Algorithm::CVaRAC | Algorithm::EnvelopePG)
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == lower)
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}`")))
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Entropy coefficient decaying linearly from `start` to `end` over the
/// first `decay_fraction` of training, then held at `end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropySchedule {
    pub start: f64,
    pub end: f64,
    pub decay_fraction: f64,
}

impl Default for EntropySchedule {
    fn default() -> Self {
        Self {
            start: 0.0,
            end: 0.0,
            decay_fraction: 0.15,
        }
    }
}

impl EntropySchedule {
    pub fn coeff(&self, step: usize, total: usize) -> f64 {
        let horizon = self.decay_fraction * total as f64;
        if horizon <= 0.0 || step as f64 >= horizon {
            return self.end;
        }
        let frac = step as f64 / horizon;
        self.start + (self.end - self.start) * frac
    }

    pub fn is_zero(&self) -> bool {
        self.start == 0.0 && self.end == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub algorithm: Algorithm,
    /// Risk level; forced to 1/2 for the risk-neutral algorithms.
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    #[serde(default = "defaults::lr")]
    pub policy_lr: f64,
    /// Step size of the action-value (or state-value) critic.
    #[serde(default = "defaults::lr")]
    pub q_lr: f64,
    /// Step size of the VaR estimate; required by the CVaR algorithms.
    #[serde(default)]
    pub var_lr: Option<f64>,
    #[serde(default = "defaults::tau")]
    pub tau: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::buffer_capacity")]
    pub buffer_capacity: usize,
    #[serde(default)]
    pub entropy: EntropySchedule,
    /// ε of the ε-greedy (Q-learning) or ε-uniform (actor-critic) behavior.
    #[serde(default = "defaults::exploration")]
    pub exploration: f64,
    /// Fraction of training during which the actor-critic mixes in
    /// uniform actions; Q-learning explores throughout.
    #[serde(default = "defaults::exploration_fraction")]
    pub exploration_fraction: f64,
    #[serde(default = "defaults::total_steps")]
    pub total_steps: usize,
    #[serde(default = "defaults::episode_cap")]
    pub episode_cap: usize,
    #[serde(default = "defaults::schedule")]
    pub schedule: ScheduleKind,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    use super::*;

    pub fn alpha() -> f64 {
        0.5
    }
    pub fn lr() -> f64 {
        5e-3
    }
    pub fn tau() -> f64 {
        0.01
    }
    pub fn batch_size() -> usize {
        32
    }
    pub fn buffer_capacity() -> usize {
        50_000
    }
    pub fn exploration() -> f64 {
        0.05
    }
    pub fn exploration_fraction() -> f64 {
        0.5
    }
    pub fn total_steps() -> usize {
        200_000
    }
    pub fn episode_cap() -> usize {
        DEFAULT_EPISODE_CAP
    }
    pub fn schedule() -> ScheduleKind {
        ScheduleKind::Constant
    }
}

impl AgentConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            alpha: defaults::alpha(),
            policy_lr: defaults::lr(),
            q_lr: defaults::lr(),
            var_lr: None,
            tau: defaults::tau(),
            batch_size: defaults::batch_size(),
            buffer_capacity: defaults::buffer_capacity(),
            entropy: EntropySchedule::default(),
            exploration: defaults::exploration(),
            exploration_fraction: defaults::exploration_fraction(),
            total_steps: defaults::total_steps(),
            episode_cap: defaults::episode_cap(),
            schedule: defaults::schedule(),
            seed: 0,
        }
    }

    /// The risk functional the critic estimates.
    pub fn risk_spec(&self) -> Result<RiskSpec> {
        RiskSpec::new(self.algorithm.risk_kind(), self.alpha).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        self.risk_spec()?;
        if self.algorithm == Algorithm::EPG && self.alpha != 0.5 {
            return bad(format!("epg is the α = 1/2 actor-critic, got alpha = {}", self.alpha));
        }
        for (name, rate) in [("policy_lr", self.policy_lr), ("q_lr", self.q_lr)] {
            if !(rate > 0.0 && rate.is_finite()) {
                return bad(format!("{name} must be positive, got {rate}"));
            }
        }
        if self.algorithm.needs_var_rate() {
            match self.var_lr {
                None => return bad(format!("{} requires var_lr", self.algorithm)),
                Some(r) if !(r > 0.0 && r.is_finite()) => return bad(format!("var_lr must be positive, got {r}")),
                Some(r) if self.algorithm == Algorithm::CVaRAC && r <= self.q_lr => {
                    return bad(format!("var_lr ({r}) must exceed q_lr ({}) for the two-timescale critic", self.q_lr))
                }
                _ => {}
            }
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("batch_size must be positive and at most buffer_capacity".into());
        }
        if !(0.0..=1.0).contains(&self.exploration) || !(0.0..=1.0).contains(&self.exploration_fraction) {
            return bad("exploration and exploration_fraction must lie in [0, 1]".into());
        }
        let e = self.entropy;
        if !(e.start >= 0.0 && e.end >= 0.0 && (0.0..=1.0).contains(&e.decay_fraction)) {
            return bad("entropy coefficients must be non-negative and decay_fraction in [0, 1]".into());
        }
        if self.total_steps == 0 || self.episode_cap == 0 {
            return bad("total_steps and episode_cap must be positive".into());
        }
        if let ScheduleKind::RobbinsMonro { exponent } | ScheduleKind::GlobalRobbinsMonro { exponent } = self.schedule {
            if !(exponent > 0.5 && exponent <= 1.0) {
                return bad(format!("schedule exponent must lie in (0.5, 1], got {exponent}"));
            }
        }
        Ok(())
    }
}
