//! Model-based dynamic-risk dynamic programming.
//!
//! These routines apply the risk measure to the exact law of
//! `r + γ·V(s')` at every state-action pair. They are the ground truth the
//! model-free learners are checked against.

use std::path::Path;

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::policy::SoftmaxPolicyTable;
use crate::risk::{risk_sorted, RiskSpec, MERGE_TOL};
use crate::table::Table;

pub const DEFAULT_TOL: f64 = 1e-9;

/// Sweep cap for the fixed-point iterations. Only reachable for γ very close
/// to one with an extremely tight tolerance.
pub const MAX_SWEEPS: usize = 2_000_000;

/// Actions whose values are within this of the best count as tied.
pub const GREEDY_TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ValueTables {
    pub q: Table,
    pub v: Vec<f64>,
}

impl ValueTables {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.q.write_csv(path, "value")
    }
}

/// Reusable buffers for building and reducing target distributions.
#[derive(Default)]
struct Scratch {
    pairs: Vec<(f64, f64)>,
    values: Vec<f64>,
    probs: Vec<f64>,
}

impl Scratch {
    fn risk_of_target(&mut self, mdp: &TabularMdp, s: usize, a: usize, v: &[f64], spec: RiskSpec) -> f64 {
        self.pairs.clear();
        mdp.push_target_atoms(s, a, v, &mut self.pairs);
        if self.pairs.len() == 1 {
            return self.pairs[0].0;
        }
        self.pairs.sort_unstable_by(|x, y| x.0.total_cmp(&y.0));
        self.values.clear();
        self.probs.clear();
        let mut group_start = f64::NEG_INFINITY;
        for &(x, p) in &self.pairs {
            if !self.values.is_empty() && x - group_start <= MERGE_TOL {
                *self.probs.last_mut().unwrap() += p;
            } else {
                group_start = x;
                self.values.push(x);
                self.probs.push(p);
            }
        }
        risk_sorted(&self.values, &self.probs, spec)
    }
}

fn apply_with_v(mdp: &TabularMdp, spec: RiskSpec, v: &[f64], out: &mut Table, scratch: &mut Scratch) {
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let value = if mdp.is_terminal(s) {
                0.0
            } else {
                scratch.risk_of_target(mdp, s, a, v, spec)
            };
            out.set(s, a, value);
        }
    }
}

fn policy_state_values(mdp: &TabularMdp, policy: &SoftmaxPolicyTable, q: &Table, v: &mut [f64], probs: &mut [f64]) {
    for (s, vs) in v.iter_mut().enumerate() {
        *vs = if mdp.is_terminal(s) {
            0.0
        } else {
            policy.probs_into(s, probs);
            probs.iter().zip(q.row(s)).map(|(p, x)| p * x).sum()
        };
    }
}

fn greedy_state_values(mdp: &TabularMdp, q: &Table, v: &mut [f64]) {
    for (s, vs) in v.iter_mut().enumerate() {
        *vs = if mdp.is_terminal(s) {
            0.0
        } else {
            q.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
        };
    }
}

fn check_shapes(mdp: &TabularMdp, q: &Table) -> Result<()> {
    if q.n_states() != mdp.n_states() || q.n_actions() != mdp.n_actions() {
        return Err(Error::domain("value table does not match the MDP"));
    }
    Ok(())
}

/// One application of `T^π Q(s,a) = ρ(r + γ Σ_a' π(a'|s') Q(s',a'))`.
pub fn apply_policy_operator(mdp: &TabularMdp, policy: &SoftmaxPolicyTable, spec: RiskSpec, q: &Table) -> Result<Table> {
    check_shapes(mdp, q)?;
    let mut v = vec![0.0; mdp.n_states()];
    let mut probs = vec![0.0; mdp.n_actions()];
    policy_state_values(mdp, policy, q, &mut v, &mut probs);
    let mut out = Table::zeros(mdp.n_states(), mdp.n_actions());
    apply_with_v(mdp, spec, &v, &mut out, &mut Scratch::default());
    Ok(out)
}

/// One application of `T* Q(s,a) = ρ(r + γ max_a' Q(s',a'))`.
pub fn apply_optimality_operator(mdp: &TabularMdp, spec: RiskSpec, q: &Table) -> Result<Table> {
    check_shapes(mdp, q)?;
    let mut v = vec![0.0; mdp.n_states()];
    greedy_state_values(mdp, q, &mut v);
    let mut out = Table::zeros(mdp.n_states(), mdp.n_actions());
    apply_with_v(mdp, spec, &v, &mut out, &mut Scratch::default());
    Ok(out)
}

fn stop_threshold(mdp: &TabularMdp, tol: f64, q: &Table) -> f64 {
    // Floor at a few ulps of the table scale so tight tolerances terminate.
    let scale = q.as_slice().iter().fold(1.0f64, |m, x| m.max(x.abs()));
    (tol * (1.0 - mdp.gamma())).max(64.0 * f64::EPSILON * scale)
}

fn check_tol(tol: f64) -> Result<()> {
    if tol > 0.0 {
        Ok(())
    } else {
        Err(Error::domain("tolerance must be positive"))
    }
}

/// Fixed point of the stochastic-policy risk operator, from `Q = 0`.
pub fn evaluate_policy_exact(mdp: &TabularMdp, policy: &SoftmaxPolicyTable, spec: RiskSpec, tol: f64) -> Result<ValueTables> {
    evaluate_policy_from(mdp, policy, spec, tol, Table::zeros(mdp.n_states(), mdp.n_actions()))
}

/// Same fixed point, iterated from `init`.
pub fn evaluate_policy_from(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicyTable,
    spec: RiskSpec,
    tol: f64,
    init: Table,
) -> Result<ValueTables> {
    check_tol(tol)?;
    check_shapes(mdp, &init)?;
    if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
        return Err(Error::domain("policy does not match the MDP"));
    }
    let mut q = init;
    let mut next = q.clone();
    let mut v = vec![0.0; mdp.n_states()];
    let mut probs = vec![0.0; mdp.n_actions()];
    let mut scratch = Scratch::default();
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_SWEEPS {
        policy_state_values(mdp, policy, &q, &mut v, &mut probs);
        apply_with_v(mdp, spec, &v, &mut next, &mut scratch);
        residual = next.max_abs_diff(&q);
        std::mem::swap(&mut q, &mut next);
        if residual <= stop_threshold(mdp, tol, &q) {
            policy_state_values(mdp, policy, &q, &mut v, &mut probs);
            return Ok(ValueTables { q, v });
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_SWEEPS,
        residual,
    })
}

/// Optimal risk-sensitive values and the greedy deterministic policy.
pub fn value_iteration_exact(mdp: &TabularMdp, spec: RiskSpec, tol: f64) -> Result<(ValueTables, Vec<usize>)> {
    check_tol(tol)?;
    let mut q = Table::zeros(mdp.n_states(), mdp.n_actions());
    let mut next = q.clone();
    let mut v = vec![0.0; mdp.n_states()];
    let mut scratch = Scratch::default();
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_SWEEPS {
        greedy_state_values(mdp, &q, &mut v);
        apply_with_v(mdp, spec, &v, &mut next, &mut scratch);
        residual = next.max_abs_diff(&q);
        std::mem::swap(&mut q, &mut next);
        if residual <= stop_threshold(mdp, tol, &q) {
            greedy_state_values(mdp, &q, &mut v);
            let greedy = (0..mdp.n_states()).map(|s| greedy_action(q.row(s))).collect();
            return Ok((ValueTables { q, v }, greedy));
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_SWEEPS,
        residual,
    })
}

/// Lowest-index action within [`GREEDY_TIE_TOL`] of the best value.
pub fn greedy_action(q_row: &[f64]) -> usize {
    let best = q_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    q_row.iter().position(|&x| x >= best - GREEDY_TIE_TOL).unwrap_or(0)
}

/// Uniform weights over non-terminal states.
pub fn uniform_state_weights(mdp: &TabularMdp) -> Vec<f64> {
    let n = mdp.non_terminal_states().count().max(1) as f64;
    (0..mdp.n_states())
        .map(|s| if mdp.is_terminal(s) { 0.0 } else { 1.0 / n })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SpiOptions {
    /// Tolerance of each inner policy evaluation.
    pub eval_tol: f64,
    pub initial_policy: Option<SoftmaxPolicyTable>,
}

impl Default for SpiOptions {
    fn default() -> Self {
        Self {
            eval_tol: 1e-12,
            initial_policy: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpiTrace {
    /// Values of `π_0, π_1, …, π_iters`.
    pub values: Vec<ValueTables>,
    pub policy: SoftmaxPolicyTable,
}

/// Exact evaluation alternated with one surrogate softmax step, `iters` times.
pub fn surrogate_policy_iteration(mdp: &TabularMdp, spec: RiskSpec, d: &[f64], eta: f64, iters: usize) -> Result<SpiTrace> {
    surrogate_policy_iteration_with(mdp, spec, d, eta, iters, &SpiOptions::default())
}

pub fn surrogate_policy_iteration_with(
    mdp: &TabularMdp,
    spec: RiskSpec,
    d: &[f64],
    eta: f64,
    iters: usize,
    options: &SpiOptions,
) -> Result<SpiTrace> {
    if d.len() != mdp.n_states() {
        return Err(Error::domain("state weights do not match the MDP"));
    }
    if mdp.non_terminal_states().any(|s| !(d[s] > 0.0)) {
        return Err(Error::domain("state weights must cover every non-terminal state"));
    }
    let mut policy = options
        .initial_policy
        .clone()
        .unwrap_or_else(|| SoftmaxPolicyTable::uniform(mdp.n_states(), mdp.n_actions()));
    let mut current = evaluate_policy_exact(mdp, &policy, spec, options.eval_tol)?;
    let mut values = Vec::with_capacity(iters + 1);
    for _ in 0..iters {
        policy.apply_surrogate_update(d, &current.q, eta)?;
        let next = evaluate_policy_from(mdp, &policy, spec, options.eval_tol, current.q.clone())?;
        values.push(std::mem::replace(&mut current, next));
    }
    values.push(current);
    Ok(SpiTrace { values, policy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::risk::DiscreteDistribution;

    fn bandit(arms: Vec<DiscreteDistribution>, gamma: f64) -> TabularMdp {
        let n = arms.len();
        TabularMdp::from_independent(1, n, vec![vec![(0, 1.0)]; n], arms, gamma, 0, &[]).unwrap()
    }

    #[test]
    fn one_step_problem_is_the_risk_of_each_arm() {
        let a = DiscreteDistribution::new([(0.0, 0.5), (1.0, 0.5)]).unwrap();
        let b = DiscreteDistribution::new([(-2.0, 0.1), (0.7, 0.9)]).unwrap();
        let mdp = bandit(vec![a.clone(), b.clone()], 0.0);
        for spec in [RiskSpec::cvar(0.3).unwrap(), RiskSpec::expectile(0.1).unwrap(), RiskSpec::mean()] {
            let (vt, greedy) = value_iteration_exact(&mdp, spec, DEFAULT_TOL).unwrap();
            let ra = crate::risk::risk_exact(&a, spec);
            let rb = crate::risk::risk_exact(&b, spec);
            assert!((vt.q.get(0, 0) - ra).abs() < 1e-12);
            assert!((vt.q.get(0, 1) - rb).abs() < 1e-12);
            assert_eq!(greedy[0], if rb > ra { 1 } else { 0 });
        }
    }

    #[test]
    fn deterministic_mdp_is_risk_free() {
        let mdp = TabularMdp::from_independent(
            3,
            2,
            vec![vec![(1, 1.0)], vec![(2, 1.0)], vec![(2, 1.0)], vec![(0, 1.0)], vec![(2, 1.0)], vec![(2, 1.0)]],
            [1.0, -1.0, 2.0, 0.5, 0.0, 0.0].map(DiscreteDistribution::point).to_vec(),
            0.9,
            0,
            &[2],
        )
        .unwrap();
        let pi = SoftmaxPolicyTable::uniform(3, 2);
        let base = evaluate_policy_exact(&mdp, &pi, RiskSpec::mean(), DEFAULT_TOL).unwrap();
        for spec in [RiskSpec::expectile(0.05).unwrap(), RiskSpec::cvar(0.1).unwrap()] {
            let vt = evaluate_policy_exact(&mdp, &pi, spec, DEFAULT_TOL).unwrap();
            assert!(vt.q.max_abs_diff(&base.q) < 1e-9);
        }
    }

    #[test]
    fn tie_breaking_prefers_lowest_index() {
        assert_eq!(greedy_action(&[1.0, 1.0 + 1e-12, 0.5]), 0);
        assert_eq!(greedy_action(&[0.0, 2.0, 2.0]), 1);
    }

    #[test]
    fn rejects_bad_arguments() {
        let mdp = bandit(vec![DiscreteDistribution::point(1.0)], 0.5);
        let pi = SoftmaxPolicyTable::uniform(1, 1);
        assert!(evaluate_policy_exact(&mdp, &pi, RiskSpec::mean(), 0.0).is_err());
        assert!(evaluate_policy_exact(&mdp, &SoftmaxPolicyTable::uniform(2, 1), RiskSpec::mean(), 1e-9).is_err());
        assert!(surrogate_policy_iteration(&mdp, RiskSpec::mean(), &[0.0], 0.1, 3).is_err());
    }
}
