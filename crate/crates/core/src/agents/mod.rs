//! Training loops: the off-policy actor-critic (expectile or CVaR critic,
//! expected backups through target tables, replayed surrogate policy steps)
//! and the Q-learning, on-policy expectile PG, and envelope PG baselines.
//!
//! Every loop is sequential and fully determined by its config and seed.
//! Progress is reported through an [`Observer`] at a fixed step cadence.

mod actor_critic;
mod baselines;
mod buffer;
mod config;

use rand::Rng;

pub use actor_critic::train_actor_critic;
pub use baselines::{train_envelope_pg, train_exp_pg, train_q_learning};
pub use buffer::ReplayBuffer;
pub use config::{AgentConfig, Algorithm, EntropySchedule};

use crate::critic::{QTable, QuantileTable};
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::policy::{argmax, SoftmaxPolicyTable};
use crate::table::Table;

/// The behavior evaluated at a checkpoint.
#[derive(Debug, Clone, Copy)]
pub enum PolicyView<'a> {
    /// Sample from the live softmax policy.
    Stochastic(&'a SoftmaxPolicyTable),
    /// Act greedily on action values, lowest index on ties.
    Greedy(&'a Table),
}

impl PolicyView<'_> {
    pub fn act<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> usize {
        match self {
            PolicyView::Stochastic(p) => p.sample_action(state, rng),
            PolicyView::Greedy(q) => argmax(q.row(state)),
        }
    }
}

/// Receives checkpoints from a training loop.
pub trait Observer {
    /// Environment steps between checkpoints; `None` disables them.
    fn cadence(&self) -> Option<usize>;

    fn checkpoint(&mut self, step: usize, policy: PolicyView<'_>) -> Result<()>;
}

/// Ignores all checkpoints.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoObserver;

impl Observer for NoObserver {
    fn cadence(&self) -> Option<usize> {
        None
    }

    fn checkpoint(&mut self, _step: usize, _policy: PolicyView<'_>) -> Result<()> {
        Ok(())
    }
}

pub(crate) fn at_checkpoint(cadence: Option<usize>, step: usize) -> bool {
    cadence.is_some_and(|c| c > 0 && step.is_multiple_of(c))
}

#[derive(Debug, Clone)]
pub struct ActorCriticOutput {
    pub policy: SoftmaxPolicyTable,
    pub q: QTable,
    /// Per-pair VaR estimates (CVaR critic only).
    pub var: Option<QuantileTable>,
    /// Critic updates that hit the value clip.
    pub clip_hits: u64,
}

#[derive(Debug, Clone)]
pub struct QLearningOutput {
    pub q: QTable,
}

#[derive(Debug, Clone)]
pub struct ExpPgOutput {
    pub policy: SoftmaxPolicyTable,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EnvelopePgOutput {
    pub policy: SoftmaxPolicyTable,
    pub v: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum TrainedAgent {
    ActorCritic(ActorCriticOutput),
    QLearning(QLearningOutput),
    ExpPg(ExpPgOutput),
    EnvelopePg(EnvelopePgOutput),
}

impl TrainedAgent {
    /// The behavior used for evaluation: the softmax policy, or greedy
    /// actions for Q-learning.
    pub fn policy_view(&self) -> PolicyView<'_> {
        match self {
            TrainedAgent::ActorCritic(o) => PolicyView::Stochastic(&o.policy),
            TrainedAgent::QLearning(o) => PolicyView::Greedy(o.q.table()),
            TrainedAgent::ExpPg(o) => PolicyView::Stochastic(&o.policy),
            TrainedAgent::EnvelopePg(o) => PolicyView::Stochastic(&o.policy),
        }
    }

    pub fn policy(&self) -> Option<&SoftmaxPolicyTable> {
        match self {
            TrainedAgent::ActorCritic(o) => Some(&o.policy),
            TrainedAgent::QLearning(_) => None,
            TrainedAgent::ExpPg(o) => Some(&o.policy),
            TrainedAgent::EnvelopePg(o) => Some(&o.policy),
        }
    }
}

/// Runs the loop that `cfg.algorithm` names.
pub fn train(mdp: &TabularMdp, cfg: &AgentConfig, observer: &mut dyn Observer) -> Result<TrainedAgent> {
    Ok(match cfg.algorithm {
        Algorithm::ExpAC | Algorithm::CVaRAC | Algorithm::EPG => {
            TrainedAgent::ActorCritic(train_actor_critic(mdp, cfg, observer)?)
        }
        Algorithm::QLearning => TrainedAgent::QLearning(train_q_learning(mdp, cfg, observer)?),
        Algorithm::ExpPG => TrainedAgent::ExpPg(train_exp_pg(mdp, cfg, observer)?),
        Algorithm::EnvelopePG => TrainedAgent::EnvelopePg(train_envelope_pg(mdp, cfg, observer)?),
    })
}

fn expect_algorithm(cfg: &AgentConfig, allowed: &[Algorithm], caller: &str) -> Result<()> {
    cfg.validate()?;
    if allowed.contains(&cfg.algorithm) {
        Ok(())
    } else {
        Err(Error::Config(format!("{caller} cannot run algorithm {}", cfg.algorithm)))
    }
}

fn check_finite(value: f64, table: &'static str, state: usize, action: usize, step: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            table,
            state,
            action,
            step,
        })
    }
}

fn check_row_finite(row: &[f64], table: &'static str, state: usize, step: usize) -> Result<()> {
    match row.iter().position(|x| !x.is_finite()) {
        None => Ok(()),
        Some(action) => Err(Error::NonFinite {
            table,
            state,
            action,
            step,
        }),
    }
}
