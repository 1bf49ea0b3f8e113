//! Tabular softmax policies and the surrogate policy-gradient step.
//!
//! The surrogate step treats the action values as fixed and moves every logit
//! along the exact gradient of `Σ_s d(s) Σ_a π(a|s) q(s,a)`, which for a
//! softmax reduces to `d(s) π(a|s) (q(s,a) − v(s))`.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::risk::DiscreteDistribution;
use crate::table::Table;

/// Logits are kept inside `±LOGIT_CLIP`.
pub const LOGIT_CLIP: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicyTable {
    theta: Table,
}

impl SoftmaxPolicyTable {
    /// All-zero logits, i.e. the uniform policy.
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            theta: Table::zeros(n_states, n_actions),
        }
    }

    pub fn from_logits(theta: Table) -> Result<Self> {
        if let Some((s, a)) = theta.find_non_finite() {
            return Err(Error::domain(format!("logit ({s}, {a}) is not finite")));
        }
        let mut policy = Self { theta };
        policy.clip();
        Ok(policy)
    }

    pub fn logits(&self) -> &Table {
        &self.theta
    }

    pub fn n_states(&self) -> usize {
        self.theta.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.theta.n_actions()
    }

    /// Writes `π(·|s)` into `out`, subtracting the largest logit first.
    #[inline]
    pub fn probs_into(&self, state: usize, out: &mut [f64]) {
        let row = self.theta.row(state);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (o, &x) in out.iter_mut().zip(row) {
            *o = (x - max).exp();
            total += *o;
        }
        for o in out.iter_mut() {
            *o /= total;
        }
    }

    pub fn probs(&self, state: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_actions()];
        self.probs_into(state, &mut out);
        out
    }

    /// `π(·|s)` as a distribution over action indices.
    pub fn action_probs(&self, state: usize) -> DiscreteDistribution {
        DiscreteDistribution::from_pairs(
            self.probs(state)
                .into_iter()
                .enumerate()
                .map(|(a, p)| (a as f64, p))
                .collect(),
        )
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> usize {
        let n = self.n_actions();
        let mut buf = [0.0; 16];
        let mut heap;
        let probs: &mut [f64] = if n <= buf.len() {
            &mut buf[..n]
        } else {
            heap = vec![0.0; n];
            &mut heap
        };
        self.probs_into(state, probs);
        let u: f64 = rng.gen();
        let mut cum = 0.0;
        for (a, &p) in probs.iter().enumerate() {
            cum += p;
            if u < cum {
                return a;
            }
        }
        n - 1
    }

    /// Action with the largest logit, lowest index on ties.
    pub fn greedy_action(&self, state: usize) -> usize {
        argmax(self.theta.row(state))
    }

    /// `Σ_a π(a|s) q(s,a)`.
    pub fn expected_value(&self, state: usize, q: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.n_actions()];
        self.probs_into(state, &mut buf);
        buf.iter().zip(q).map(|(p, v)| p * v).sum()
    }

    /// Adds `scale · π(a|s) (q(a) − Σ_b π(b|s) q(b))` to the logits of one
    /// state, using the probabilities from before the step.
    pub fn advantage_step(&mut self, state: usize, q: &[f64], scale: f64) {
        let n = self.n_actions();
        let mut buf = [0.0; 16];
        let mut heap;
        let probs: &mut [f64] = if n <= buf.len() {
            &mut buf[..n]
        } else {
            heap = vec![0.0; n];
            &mut heap
        };
        self.probs_into(state, probs);
        let v: f64 = probs.iter().zip(q).map(|(p, x)| p * x).sum();
        for ((logit, &p), &x) in self.theta.row_mut(state).iter_mut().zip(probs.iter()).zip(q) {
            *logit = (*logit + scale * p * (x - v)).clamp(-LOGIT_CLIP, LOGIT_CLIP);
        }
    }

    /// Adds `step · (𝟙{b = action} − π(b|s))` to every logit of `state`:
    /// the score-function step `step · ∇ log π(action|state)`.
    pub fn score_step(&mut self, state: usize, action: usize, step: f64) {
        let n = self.n_actions();
        let mut buf = [0.0; 16];
        let mut heap;
        let probs: &mut [f64] = if n <= buf.len() {
            &mut buf[..n]
        } else {
            heap = vec![0.0; n];
            &mut heap
        };
        self.probs_into(state, probs);
        for (b, (logit, &p)) in self.theta.row_mut(state).iter_mut().zip(probs.iter()).enumerate() {
            let indicator = if b == action { 1.0 } else { 0.0 };
            *logit = (*logit + step * (indicator - p)).clamp(-LOGIT_CLIP, LOGIT_CLIP);
        }
    }

    /// One simultaneous surrogate step over all states with weights `d`.
    pub fn surrogate_update(&self, d: &[f64], q: &Table, eta: f64) -> Result<Self> {
        let mut next = self.clone();
        next.apply_surrogate_update(d, q, eta)?;
        Ok(next)
    }

    pub fn apply_surrogate_update(&mut self, d: &[f64], q: &Table, eta: f64) -> Result<()> {
        self.check_update_args(d, q, eta)?;
        for (s, &w) in d.iter().enumerate() {
            if w > 0.0 {
                self.advantage_step(s, q.row(s), eta * w);
            }
        }
        Ok(())
    }

    /// Surrogate step on `q(s,a) − coeff · log π(a|s)`.
    pub fn entropy_bonus_update(&self, d: &[f64], q: &Table, eta: f64, coeff: f64) -> Result<Self> {
        if !(coeff >= 0.0) {
            return Err(Error::domain("entropy coefficient must be non-negative"));
        }
        self.check_update_args(d, q, eta)?;
        let mut next = self.clone();
        let mut augmented = vec![0.0; self.n_actions()];
        for (s, &w) in d.iter().enumerate() {
            if w > 0.0 {
                self.entropy_augmented(s, q.row(s), coeff, &mut augmented);
                next.advantage_step(s, &augmented, eta * w);
            }
        }
        Ok(next)
    }

    /// `q(a) − coeff · log π(a|s)` into `out`.
    pub fn entropy_augmented(&self, state: usize, q: &[f64], coeff: f64, out: &mut [f64]) {
        if coeff == 0.0 {
            out.copy_from_slice(q);
            return;
        }
        let row = self.theta.row(state);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        for ((o, &x), &logit) in out.iter_mut().zip(q).zip(row) {
            *o = x - coeff * (logit - log_z);
        }
    }

    fn check_update_args(&self, d: &[f64], q: &Table, eta: f64) -> Result<()> {
        if !(eta > 0.0) {
            return Err(Error::domain("policy step size must be positive"));
        }
        if d.len() != self.n_states() || !q.same_shape(&self.theta) {
            return Err(Error::domain("state weights or action values do not match the policy"));
        }
        if d.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::domain("state weights must be non-negative"));
        }
        Ok(())
    }

    /// `θ̄ ← τ θ + (1 − τ) θ̄` toward `live`.
    pub fn track(&mut self, live: &SoftmaxPolicyTable, tau: f64) {
        for (t, &x) in self.theta.as_mut_slice().iter_mut().zip(live.theta.as_slice()) {
            *t = tau * x + (1.0 - tau) * *t;
        }
    }

    fn clip(&mut self) {
        for x in self.theta.as_mut_slice() {
            *x = x.clamp(-LOGIT_CLIP, LOGIT_CLIP);
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.theta.write_csv(path, "logit")
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_logits(Table::read_csv(path, "logit")?)
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn policy_row(logits: &[f64]) -> SoftmaxPolicyTable {
        let t = Table::from_fn(1, logits.len(), |_, a| logits[a]);
        SoftmaxPolicyTable::from_logits(t).unwrap()
    }

    #[test]
    fn probability_examples() {
        assert_eq!(policy_row(&[0.0, 0.0]).probs(0), vec![0.5, 0.5]);
        let p = policy_row(&[2f64.ln(), 0.0]).probs(0);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        let base = policy_row(&[0.3, -1.2, 2.0]).probs(0);
        let shifted = policy_row(&[5.3, 3.8, 7.0]).probs(0);
        for (a, b) in base.iter().zip(&shifted) {
            assert!((a - b).abs() < 1e-15);
        }
        let d = policy_row(&[0.0, 0.0]).action_probs(0);
        assert_eq!(d.values(), &[0.0, 1.0]);
    }

    #[test]
    fn sampling_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let even = policy_row(&[0.0, 0.0]);
        let n = 100_000;
        let zeros = (0..n).filter(|_| even.sample_action(0, &mut rng) == 0).count();
        assert!((zeros as f64 / n as f64 - 0.5).abs() < 0.01);

        let peaked = policy_row(&[0.0, 50.0, 0.0, 0.0]);
        let hits = (0..n).filter(|_| peaked.sample_action(0, &mut rng) == 1).count();
        assert!(hits as f64 / n as f64 >= 0.9999);

        let stream = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| even.sample_action(0, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(stream(9), stream(9));
    }

    #[test]
    fn surrogate_update_example() {
        let pi = SoftmaxPolicyTable::uniform(1, 2);
        let q = Table::from_fn(1, 2, |_, a| if a == 0 { 1.0 } else { 0.0 });
        let next = pi.surrogate_update(&[1.0], &q, 0.1).unwrap();
        assert!((next.logits().get(0, 0) - 0.025).abs() < 1e-15);
        assert!((next.logits().get(0, 1) + 0.025).abs() < 1e-15);

        let flat = Table::filled(1, 2, 4.0);
        assert_eq!(pi.surrogate_update(&[1.0], &flat, 0.1).unwrap(), pi);
        assert!(pi.surrogate_update(&[1.0], &q, 0.0).is_err());
        assert!(pi.surrogate_update(&[-1.0], &q, 0.1).is_err());
    }

    #[test]
    fn entropy_bonus_examples() {
        let pi = policy_row(&[1.0, -0.5, 0.2]);
        let q = Table::from_fn(1, 3, |_, a| [0.4, 2.0, -1.0][a]);
        assert_eq!(
            pi.entropy_bonus_update(&[1.0], &q, 0.05, 0.0).unwrap(),
            pi.surrogate_update(&[1.0], &q, 0.05).unwrap()
        );

        // flat q: the bonus pulls logits toward uniform
        let flat = Table::zeros(1, 3);
        let next = pi.entropy_bonus_update(&[1.0], &flat, 0.1, 0.5).unwrap();
        let spread = |p: &SoftmaxPolicyTable| {
            let r = p.logits().row(0);
            r.iter().copied().fold(f64::MIN, f64::max) - r.iter().copied().fold(f64::MAX, f64::min)
        };
        assert!(spread(&next) < spread(&pi));
        assert!(pi.entropy_bonus_update(&[1.0], &flat, 0.1, -1.0).is_err());
    }

    #[test]
    fn entropy_fixed_point_is_boltzmann() {
        let q = Table::from_fn(1, 3, |_, a| [1.0, 0.0, -0.5][a]);
        let coeff = 0.7;
        let mut pi = SoftmaxPolicyTable::uniform(1, 3);
        for _ in 0..20_000 {
            pi = pi.entropy_bonus_update(&[1.0], &q, 0.5, coeff).unwrap();
        }
        let target: Vec<f64> = {
            let w: Vec<f64> = q.row(0).iter().map(|x| (x / coeff).exp()).collect();
            let z: f64 = w.iter().sum();
            w.into_iter().map(|x| x / z).collect()
        };
        for (p, t) in pi.probs(0).iter().zip(&target) {
            assert!((p - t).abs() < 1e-6, "{p} vs {t}");
        }
    }

    #[test]
    fn argmax_drives_to_one() {
        let q = Table::from_fn(1, 3, |_, a| [0.0, 1.0, 0.5][a]);
        let mut pi = SoftmaxPolicyTable::uniform(1, 3);
        let mut last = pi.probs(0)[1];
        for _ in 0..2000 {
            pi.apply_surrogate_update(&[1.0], &q, 1.0).unwrap();
            let p = pi.probs(0)[1];
            assert!(p >= last);
            last = p;
        }
        assert!(last > 0.99);
    }

    proptest! {
        #[test]
        fn update_invariants(
            logits in prop::collection::vec(-3.0f64..3.0, 4),
            qs in prop::collection::vec(-5.0f64..5.0, 4),
            shift in -10.0f64..10.0,
            eta in 0.001f64..2.0,
        ) {
            let pi = SoftmaxPolicyTable::from_logits(Table::from_fn(1, 4, |_, a| logits[a])).unwrap();
            let q = Table::from_fn(1, 4, |_, a| qs[a]);
            let q_shifted = Table::from_fn(1, 4, |_, a| qs[a] + shift);
            let a = pi.surrogate_update(&[1.0], &q, eta).unwrap();
            let b = pi.surrogate_update(&[1.0], &q_shifted, eta).unwrap();
            // zero-mean advantage: logit sum unchanged
            let delta: f64 = a.logits().row(0).iter().zip(pi.logits().row(0)).map(|(x, y)| x - y).sum();
            prop_assert!(delta.abs() < 1e-12);
            prop_assert!(a.logits().max_abs_diff(b.logits()) < 1e-9);
            let p = a.probs(0);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|x| *x > 0.0));
        }
    }
}
