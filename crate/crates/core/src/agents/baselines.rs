use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    at_checkpoint, check_finite, check_row_finite, expect_algorithm, AgentConfig, Algorithm, EnvelopePgOutput,
    ExpPgOutput, Observer, PolicyView, QLearningOutput,
};
use crate::critic::{jiang_v_step, value_clip, QTable, StepSchedule};
use crate::error::Result;
use crate::mdp::{TabularMdp, Transition};
use crate::policy::SoftmaxPolicyTable;

/// Steps the environment and resets on termination or at the episode cap.
struct Walker {
    state: usize,
    len: usize,
    cap: usize,
}

impl Walker {
    fn new(mdp: &TabularMdp, cap: usize) -> Self {
        Self {
            state: mdp.initial_state(),
            len: 0,
            cap,
        }
    }

    fn step<R: Rng + ?Sized>(&mut self, mdp: &TabularMdp, action: usize, rng: &mut R) -> Result<Transition> {
        let t = mdp.step(self.state, action, rng)?;
        self.len += 1;
        if t.done || self.len >= self.cap {
            self.state = mdp.initial_state();
            self.len = 0;
        } else {
            self.state = t.next_state;
        }
        Ok(t)
    }
}

/// Online ε-greedy Q-learning on the mean return; evaluated greedily.
pub fn train_q_learning(mdp: &TabularMdp, cfg: &AgentConfig, observer: &mut dyn Observer) -> Result<QLearningOutput> {
    expect_algorithm(cfg, &[Algorithm::QLearning], "the Q-learning loop")?;
    let (n_states, n_actions) = (mdp.n_states(), mdp.n_actions());
    let gamma = mdp.gamma();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut q = QTable::zeros(mdp);
    let mut schedule = StepSchedule::new(cfg.schedule, cfg.q_lr, n_states, n_actions)?;
    let cadence = observer.cadence();
    let mut walker = Walker::new(mdp, cfg.episode_cap);
    let mut ties = Vec::with_capacity(n_actions);

    for step in 1..=cfg.total_steps {
        let s = walker.state;
        let action = if rng.gen::<f64>() < cfg.exploration {
            rng.gen_range(0..n_actions)
        } else {
            // random tie-breaking keeps the untrained agent from looping
            let row = q.table().row(s);
            let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            ties.clear();
            ties.extend((0..n_actions).filter(|&a| row[a] == best));
            ties[rng.gen_range(0..ties.len())]
        };
        let t = walker.step(mdp, action, &mut rng)?;
        let bootstrap = if t.done {
            0.0
        } else {
            q.table().row(t.next_state).iter().copied().fold(f64::NEG_INFINITY, f64::max)
        };
        let zeta = schedule.advance(s, action);
        let current = q.get(s, action);
        q.set(s, action, current + zeta * (t.reward + gamma * bootstrap - current));
        check_finite(q.get(s, action), "q", s, action, step)?;

        if at_checkpoint(cadence, step) {
            observer.checkpoint(step, PolicyView::Greedy(q.table()))?;
        }
    }
    Ok(QLearningOutput { q })
}

/// On-policy expectile PG: a state-value expectile critic whose per-step
/// asymmetric TD error drives a score-function policy step.
///
/// The logit step uses the bracket `(1−α)δ₋ + αδ₊` rather than the critic
/// increment, so the policy step size is independent of the critic's.
pub fn train_exp_pg(mdp: &TabularMdp, cfg: &AgentConfig, observer: &mut dyn Observer) -> Result<ExpPgOutput> {
    expect_algorithm(cfg, &[Algorithm::ExpPG], "the expectile PG loop")?;
    let alpha = cfg.risk_spec()?.alpha();
    let (n_states, n_actions) = (mdp.n_states(), mdp.n_actions());
    let gamma = mdp.gamma();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut policy = SoftmaxPolicyTable::uniform(n_states, n_actions);
    let mut v = vec![0.0; n_states];
    let mut schedule = StepSchedule::new(cfg.schedule, cfg.q_lr, n_states, 1)?;
    let cadence = observer.cadence();
    let mut walker = Walker::new(mdp, cfg.episode_cap);

    for step in 1..=cfg.total_steps {
        let action = policy.sample_action(walker.state, &mut rng);
        let t = walker.step(mdp, action, &mut rng)?;
        let zeta = schedule.advance(t.state, 0);
        let advantage = jiang_v_step(&mut v, &t, gamma, alpha, zeta);
        check_finite(v[t.state], "v", t.state, 0, step)?;
        policy.score_step(t.state, t.action, cfg.policy_lr * advantage / (2.0 * zeta));
        check_row_finite(policy.logits().row(t.state), "policy", t.state, step)?;

        if at_checkpoint(cadence, step) {
            observer.checkpoint(step, PolicyView::Stochastic(&policy))?;
        }
    }
    Ok(ExpPgOutput { policy, v })
}

/// On-policy CVaR PG: state-level two-timescale VaR/CVaR critic and a
/// score-function step weighted by `(1/α)·min(r + γV(s') − q(s), 0)`.
pub fn train_envelope_pg(
    mdp: &TabularMdp,
    cfg: &AgentConfig,
    observer: &mut dyn Observer,
) -> Result<EnvelopePgOutput> {
    expect_algorithm(cfg, &[Algorithm::EnvelopePG], "the envelope PG loop")?;
    let alpha = cfg.risk_spec()?.alpha();
    let (n_states, n_actions) = (mdp.n_states(), mdp.n_actions());
    let gamma = mdp.gamma();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut policy = SoftmaxPolicyTable::uniform(n_states, n_actions);
    let mut v = vec![0.0; n_states];
    let mut var = vec![0.0; n_states];
    let var_rate = cfg.var_lr.unwrap_or(cfg.q_lr);
    let mut v_schedule = StepSchedule::new(cfg.schedule, cfg.q_lr, n_states, 1)?;
    let mut var_schedule = StepSchedule::new(cfg.schedule, var_rate, n_states, 1)?;
    let clip = value_clip(mdp);
    let cadence = observer.cadence();
    let mut walker = Walker::new(mdp, cfg.episode_cap);

    for step in 1..=cfg.total_steps {
        let action = policy.sample_action(walker.state, &mut rng);
        let t = walker.step(mdp, action, &mut rng)?;
        let s = t.state;
        let y = if t.done { t.reward } else { t.reward + gamma * v[t.next_state] };
        let q = var[s];
        let zeta_q = var_schedule.advance(s, 0);
        let zeta_v = v_schedule.advance(s, 0);
        let below = if y < q { 1.0 } else { 0.0 };
        var[s] = (q - zeta_q * (below - alpha)).clamp(-clip, clip);
        v[s] = (v[s] - zeta_v * (v[s] - q + (q - y).max(0.0) / alpha)).clamp(-clip, clip);
        check_finite(v[s], "v", s, 0, step)?;
        check_finite(var[s], "var", s, 0, step)?;

        let weight = (y - q).min(0.0) / alpha;
        policy.score_step(s, t.action, cfg.policy_lr * weight);
        check_row_finite(policy.logits().row(s), "policy", s, step)?;

        if at_checkpoint(cadence, step) {
            observer.checkpoint(step, PolicyView::Stochastic(&policy))?;
        }
    }
    Ok(EnvelopePgOutput { policy, v, var })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::NoObserver;
    use crate::risk::{cvar_exact, DiscreteDistribution};

    fn bandit(arms: Vec<DiscreteDistribution>, gamma: f64) -> TabularMdp {
        let n = arms.len();
        let mut rewards = arms;
        rewards.extend(std::iter::repeat(DiscreteDistribution::point(0.0)).take(n));
        TabularMdp::from_independent(2, n, vec![vec![(1, 1.0)]; 2 * n], rewards, gamma, 0, &[1]).unwrap()
    }

    fn coin_bandit() -> TabularMdp {
        bandit(
            vec![
                DiscreteDistribution::point(0.0),
                DiscreteDistribution::new([(-10.0, 0.5), (10.0, 0.5)]).unwrap(),
            ],
            0.0,
        )
    }

    #[test]
    fn q_learning_bandit_means() {
        let mdp = bandit(
            vec![
                DiscreteDistribution::new([(0.0, 0.5), (2.0, 0.5)]).unwrap(),
                DiscreteDistribution::new([(-1.0, 0.25), (3.0, 0.75)]).unwrap(),
                DiscreteDistribution::point(-0.5),
            ],
            0.0,
        );
        let mut cfg = AgentConfig::new(Algorithm::QLearning);
        cfg.exploration = 1.0;
        cfg.q_lr = 1.0;
        cfg.schedule = crate::critic::ScheduleKind::RobbinsMonro { exponent: 1.0 };
        cfg.total_steps = 30_000;
        let out = train_q_learning(&mdp, &cfg, &mut NoObserver).unwrap();
        for (a, mean) in [1.0, 2.0, -0.5].into_iter().enumerate() {
            assert!((out.q.get(0, a) - mean).abs() < 0.05, "arm {a}: {}", out.q.get(0, a));
        }
    }

    #[test]
    fn q_learning_chain_geometric_sum() {
        // 0 → 1 → terminal, reward 1 per step, γ = 0.9: Q(0,·) = 1.9, Q(1,·) = 1
        let mdp = TabularMdp::from_independent(
            3,
            1,
            vec![vec![(1, 1.0)], vec![(2, 1.0)], vec![(2, 1.0)]],
            vec![
                DiscreteDistribution::point(1.0),
                DiscreteDistribution::point(1.0),
                DiscreteDistribution::point(0.0),
            ],
            0.9,
            0,
            &[2],
        )
        .unwrap();
        let mut cfg = AgentConfig::new(Algorithm::QLearning);
        cfg.q_lr = 0.05;
        cfg.total_steps = 10_000;
        let out = train_q_learning(&mdp, &cfg, &mut NoObserver).unwrap();
        assert!((out.q.get(0, 0) - 1.9).abs() < 1e-3);
        assert!((out.q.get(1, 0) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn exp_pg_prefers_sure_arm() {
        let mut cfg = AgentConfig::new(Algorithm::ExpPG);
        cfg.alpha = 0.05;
        cfg.policy_lr = 0.05;
        cfg.q_lr = 0.05;
        cfg.total_steps = 20_000;
        let out = train_exp_pg(&coin_bandit(), &cfg, &mut NoObserver).unwrap();
        assert!(out.policy.probs(0)[0] > 0.9, "{:?}", out.policy.probs(0));
    }

    #[test]
    fn exp_pg_risk_neutral_prefers_higher_mean() {
        let mdp = bandit(vec![DiscreteDistribution::point(0.0), DiscreteDistribution::new([(-9.0, 0.5), (11.0, 0.5)]).unwrap()], 0.0);
        let mut cfg = AgentConfig::new(Algorithm::ExpPG);
        cfg.alpha = 0.5;
        cfg.policy_lr = 0.05;
        cfg.q_lr = 0.05;
        cfg.total_steps = 20_000;
        let out = train_exp_pg(&mdp, &cfg, &mut NoObserver).unwrap();
        assert!(out.policy.probs(0)[1] > 0.9, "{:?}", out.policy.probs(0));
    }

    #[test]
    fn envelope_pg_prefers_higher_cvar_arm() {
        let arms = vec![
            DiscreteDistribution::new([(-2.0, 0.5), (2.0, 0.5)]).unwrap(),
            DiscreteDistribution::new([(-8.0, 0.2), (3.0, 0.8)]).unwrap(),
        ];
        let c0 = cvar_exact(&arms[0], 0.2).unwrap();
        let c1 = cvar_exact(&arms[1], 0.2).unwrap();
        assert!(c0 > c1);
        let mut cfg = AgentConfig::new(Algorithm::EnvelopePG);
        cfg.alpha = 0.2;
        cfg.policy_lr = 0.01;
        cfg.q_lr = 0.01;
        cfg.var_lr = Some(0.05);
        cfg.total_steps = 30_000;
        let out = train_envelope_pg(&bandit(arms, 0.0), &cfg, &mut NoObserver).unwrap();
        assert!(out.policy.probs(0)[0] > 0.9, "{:?}", out.policy.probs(0));
    }

    #[test]
    fn envelope_pg_near_neutral_at_high_alpha() {
        // α → 1: weight tends to min(y − q, 0) with q near the top of the
        // support, so the higher-mean arm wins even with a wide spread.
        let arms = vec![
            DiscreteDistribution::point(0.0),
            DiscreteDistribution::new([(-1.0, 0.5), (3.0, 0.5)]).unwrap(),
        ];
        let mut cfg = AgentConfig::new(Algorithm::EnvelopePG);
        cfg.alpha = 0.99;
        cfg.policy_lr = 0.01;
        cfg.q_lr = 0.01;
        cfg.var_lr = Some(0.05);
        cfg.total_steps = 30_000;
        let out = train_envelope_pg(&bandit(arms, 0.0), &cfg, &mut NoObserver).unwrap();
        assert!(out.policy.probs(0)[1] > 0.5, "{:?}", out.policy.probs(0));
    }
}
