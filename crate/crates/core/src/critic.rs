//! Model-free critics: the expectile TD rule, the two-timescale VaR/CVaR
//! rule, expected-SARSA backups through target tables, and step sizes.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{TabularMdp, Transition};
use crate::policy::SoftmaxPolicyTable;
use crate::risk::{expectile_grad_term, quantile_grad_term};
use crate::table::Table;

/// Action-value table whose terminal rows stay at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionValues {
    values: Table,
    terminal: Vec<bool>,
}

impl ActionValues {
    fn new(mdp: &TabularMdp) -> Self {
        Self {
            values: Table::zeros(mdp.n_states(), mdp.n_actions()),
            terminal: mdp.terminal_mask().to_vec(),
        }
    }

    /// Wraps `values`, zeroing the rows of terminal states.
    fn from_table(mut values: Table, terminal: &[bool]) -> Result<Self> {
        if values.n_states() != terminal.len() {
            return Err(Error::domain("table does not match the terminal mask"));
        }
        for (s, &t) in terminal.iter().enumerate() {
            if t {
                values.row_mut(s).fill(0.0);
            }
        }
        Ok(Self {
            values,
            terminal: terminal.to_vec(),
        })
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values.get(s, a)
    }

    /// Writes `value` unless `s` is terminal.
    #[inline]
    pub fn set(&mut self, s: usize, a: usize, value: f64) {
        if !self.terminal[s] {
            self.values.set(s, a, value);
        }
    }

    #[inline]
    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn table(&self) -> &Table {
        &self.values
    }

    fn track(&mut self, live: &ActionValues, tau: f64) {
        for (t, &x) in self.values.as_mut_slice().iter_mut().zip(live.values.as_slice()) {
            *t = tau * x + (1.0 - tau) * *t;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QTable(ActionValues);

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileTable(ActionValues);

macro_rules! action_value_newtype {
    ($name:ident) => {
        impl $name {
            pub fn zeros(mdp: &TabularMdp) -> Self {
                Self(ActionValues::new(mdp))
            }

            pub fn from_table(values: Table, mdp: &TabularMdp) -> Result<Self> {
                ActionValues::from_table(values, mdp.terminal_mask()).map(Self)
            }
        }

        impl Deref for $name {
            type Target = ActionValues;

            fn deref(&self) -> &ActionValues {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut ActionValues {
                &mut self.0
            }
        }
    };
}

action_value_newtype!(QTable);
action_value_newtype!(QuantileTable);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScheduleKind {
    Constant,
    /// `base / (1 + n(s,a))^exponent` with per-pair visit counts.
    RobbinsMonro { exponent: f64 },
    /// `base / (1 + t)^exponent` with one global counter.
    GlobalRobbinsMonro { exponent: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepSchedule {
    kind: ScheduleKind,
    base: f64,
    n_actions: usize,
    visits: Vec<u64>,
    global: u64,
}

impl StepSchedule {
    pub fn new(kind: ScheduleKind, base: f64, n_states: usize, n_actions: usize) -> Result<Self> {
        if !(base > 0.0) {
            return Err(Error::domain("step size base must be positive"));
        }
        if let ScheduleKind::RobbinsMonro { exponent } | ScheduleKind::GlobalRobbinsMonro { exponent } = kind {
            if !(exponent > 0.5 && exponent <= 1.0) {
                return Err(Error::domain(format!("decay exponent {exponent} is not in (0.5, 1]")));
            }
        }
        Ok(Self {
            kind,
            base,
            n_actions,
            visits: vec![0; n_states * n_actions],
            global: 0,
        })
    }

    pub fn constant(base: f64, n_states: usize, n_actions: usize) -> Result<Self> {
        Self::new(ScheduleKind::Constant, base, n_states, n_actions)
    }

    pub fn robbins_monro(base: f64, exponent: f64, n_states: usize, n_actions: usize) -> Result<Self> {
        Self::new(ScheduleKind::RobbinsMonro { exponent }, base, n_states, n_actions)
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// The step size the next visit of `(s, a)` would use.
    pub fn rate(&self, s: usize, a: usize) -> f64 {
        match self.kind {
            ScheduleKind::Constant => self.base,
            ScheduleKind::RobbinsMonro { exponent } => {
                self.base / (1.0 + self.visits[s * self.n_actions + a] as f64).powf(exponent)
            }
            ScheduleKind::GlobalRobbinsMonro { exponent } => self.base / (1.0 + self.global as f64).powf(exponent),
        }
    }

    /// Returns the current step size for `(s, a)` and counts the visit.
    pub fn advance(&mut self, s: usize, a: usize) -> f64 {
        let rate = self.rate(s, a);
        self.visits[s * self.n_actions + a] += 1;
        self.global += 1;
        rate
    }

    pub fn visits(&self, s: usize, a: usize) -> u64 {
        self.visits[s * self.n_actions + a]
    }
}

/// Slowly tracking copies of the policy and the action values.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetPair {
    pub policy_target: SoftmaxPolicyTable,
    pub q_target: QTable,
    tau: f64,
}

impl TargetPair {
    pub fn new(policy: &SoftmaxPolicyTable, q: &QTable, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::domain(format!("soft update rate {tau} is not in (0, 1]")));
        }
        Ok(Self {
            policy_target: policy.clone(),
            q_target: q.clone(),
            tau,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// `x̄ ← τ x + (1 − τ) x̄` for every logit and action value.
    pub fn soft_update(&mut self, live_policy: &SoftmaxPolicyTable, live_q: &QTable) {
        self.policy_target.track(live_policy, self.tau);
        self.q_target.track(live_q, self.tau);
    }

    /// Backup value of `state` under the target tables.
    #[inline]
    pub fn backup(&self, state: usize) -> f64 {
        expected_backup(&self.q_target, &self.policy_target, state)
    }

    /// `r + γ V̄(s')`, without the bootstrap term on termination.
    #[inline]
    pub fn td_target(&self, t: &Transition, gamma: f64) -> f64 {
        if t.done {
            t.reward
        } else {
            t.reward + gamma * self.backup(t.next_state)
        }
    }
}

/// `Σ_a π(a|s) q(s,a)`, zero on terminal states.
#[inline]
pub fn expected_backup(q: &ActionValues, policy: &SoftmaxPolicyTable, state: usize) -> f64 {
    if q.is_terminal(state) {
        return 0.0;
    }
    let n = policy.n_actions();
    let mut buf = [0.0; 16];
    if n <= buf.len() {
        policy.probs_into(state, &mut buf[..n]);
        buf[..n].iter().zip(q.table().row(state)).map(|(p, x)| p * x).sum()
    } else {
        policy.expected_value(state, q.table().row(state))
    }
}

/// Expectile TD step on `(t.state, t.action)`; returns the new value.
pub fn expectile_td_step(
    q: &mut QTable,
    targets: &TargetPair,
    t: &Transition,
    gamma: f64,
    alpha: f64,
    schedule: &mut StepSchedule,
) -> f64 {
    let y = targets.td_target(t, gamma);
    expectile_step_toward(q, t.state, t.action, y, alpha, schedule)
}

/// `Q ← Q + 2ζ [(1−α)(y−Q)₋ + α(y−Q)₊]` for a given sample target `y`.
pub fn expectile_step_toward(q: &mut QTable, s: usize, a: usize, y: f64, alpha: f64, schedule: &mut StepSchedule) -> f64 {
    let zeta = schedule.advance(s, a);
    let current = q.get(s, a);
    let next = current + 2.0 * zeta * expectile_grad_term(y, current, alpha);
    q.set(s, a, next);
    q.get(s, a)
}

/// Two-timescale VaR/CVaR step on `(t.state, t.action)`.
///
/// Both updates read the pre-step quantile. Values are clipped to
/// `±clip`; the return value reports whether the clip was hit.
#[allow(clippy::too_many_arguments)]
pub fn cvar_td_step(
    q_var: &mut QuantileTable,
    q_cvar: &mut QTable,
    targets: &TargetPair,
    t: &Transition,
    gamma: f64,
    alpha: f64,
    fast: &mut StepSchedule,
    slow: &mut StepSchedule,
    clip: f64,
) -> bool {
    let y = targets.td_target(t, gamma);
    cvar_step_toward(q_var, q_cvar, t.state, t.action, y, alpha, fast, slow, clip)
}

#[allow(clippy::too_many_arguments)]
pub fn cvar_step_toward(
    q_var: &mut QuantileTable,
    q_cvar: &mut QTable,
    s: usize,
    a: usize,
    y: f64,
    alpha: f64,
    fast: &mut StepSchedule,
    slow: &mut StepSchedule,
    clip: f64,
) -> bool {
    let zeta_q = fast.advance(s, a);
    let zeta_cvar = slow.advance(s, a);
    let var = q_var.get(s, a);
    let cvar = q_cvar.get(s, a);
    let next_var = var - zeta_q * quantile_grad_term(y, var, alpha);
    let next_cvar = cvar - zeta_cvar * (cvar - var + (var - y).max(0.0) / alpha);
    let clipped = next_var.abs() > clip || next_cvar.abs() > clip;
    q_var.set(s, a, next_var.clamp(-clip, clip));
    q_cvar.set(s, a, next_cvar.clamp(-clip, clip));
    clipped
}

/// State-value expectile step of the on-policy baseline.
///
/// Returns the advantage `2ζ [(1−α)δ₋ + αδ₊]`, which is also the increment
/// applied to `v(s)`.
pub fn jiang_v_step(v: &mut [f64], t: &Transition, gamma: f64, alpha: f64, zeta: f64) -> f64 {
    let bootstrap = if t.done { 0.0 } else { gamma * v[t.next_state] };
    let advantage = 2.0 * zeta * expectile_grad_term(t.reward + bootstrap, v[t.state], alpha);
    v[t.state] += advantage;
    advantage
}

/// Value clip used by the CVaR critic: ten times the largest attainable
/// discounted return magnitude.
pub fn value_clip(mdp: &TabularMdp) -> f64 {
    10.0 * mdp.reward_magnitude().max(1e-12) / (1.0 - mdp.gamma())
}
