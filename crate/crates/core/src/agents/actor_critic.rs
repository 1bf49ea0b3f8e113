use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    at_checkpoint, check_finite, check_row_finite, expect_algorithm, ActorCriticOutput, AgentConfig, Algorithm,
    Observer, PolicyView, ReplayBuffer,
};
use crate::critic::{cvar_td_step, expectile_td_step, value_clip, QTable, QuantileTable, StepSchedule, TargetPair};
use crate::error::Result;
use crate::mdp::TabularMdp;
use crate::policy::SoftmaxPolicyTable;

/// The replayed off-policy actor-critic.
///
/// Each step acts with the live policy (mixed with uniform actions early
/// on), stores the transition, and once `batch_size` transitions are held:
/// updates the critic on a minibatch with backups through the target
/// tables, takes a surrogate policy step weighted by the minibatch state
/// frequencies, and soft-updates the targets.
pub fn train_actor_critic(
    mdp: &TabularMdp,
    cfg: &AgentConfig,
    observer: &mut dyn Observer,
) -> Result<ActorCriticOutput> {
    expect_algorithm(
        cfg,
        &[Algorithm::ExpAC, Algorithm::CVaRAC, Algorithm::EPG],
        "the actor-critic loop",
    )?;
    let alpha = cfg.risk_spec()?.alpha();
    let (n_states, n_actions) = (mdp.n_states(), mdp.n_actions());
    let gamma = mdp.gamma();
    let total = cfg.total_steps;
    let batch_size = cfg.batch_size;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity, rng.gen())?;
    let mut policy = SoftmaxPolicyTable::uniform(n_states, n_actions);
    let mut q = QTable::zeros(mdp);
    let mut targets = TargetPair::new(&policy, &q, cfg.tau)?;
    let mut q_schedule = StepSchedule::new(cfg.schedule, cfg.q_lr, n_states, n_actions)?;

    let mut cvar_critic = match (cfg.algorithm, cfg.var_lr) {
        (Algorithm::CVaRAC, Some(rate)) => Some((
            QuantileTable::zeros(mdp),
            StepSchedule::new(cfg.schedule, rate, n_states, n_actions)?,
        )),
        _ => None,
    };
    let clip = value_clip(mdp);
    let mut clip_hits = 0u64;

    let explore_until = (cfg.exploration_fraction * total as f64) as usize;
    let cadence = observer.cadence();
    let mut batch = Vec::with_capacity(batch_size);
    let mut counts = vec![0usize; n_states];
    let mut touched = Vec::with_capacity(batch_size);
    let mut augmented = vec![0.0; n_actions];

    let mut state = mdp.initial_state();
    let mut episode_len = 0;
    for step in 1..=total {
        let explore = step <= explore_until && cfg.exploration > 0.0 && rng.gen::<f64>() < cfg.exploration;
        let action = if explore {
            rng.gen_range(0..n_actions)
        } else {
            policy.sample_action(state, &mut rng)
        };
        let t = mdp.step(state, action, &mut rng)?;
        buffer.push(t);
        episode_len += 1;
        if t.done || episode_len >= cfg.episode_cap {
            state = mdp.initial_state();
            episode_len = 0;
        } else {
            state = t.next_state;
        }

        if buffer.len() >= batch_size {
            buffer.sample_into(batch_size, &mut batch)?;
            for tr in &batch {
                match cvar_critic.as_mut() {
                    Some((var, var_schedule)) => {
                        let hit = cvar_td_step(
                            var,
                            &mut q,
                            &targets,
                            tr,
                            gamma,
                            alpha,
                            var_schedule,
                            &mut q_schedule,
                            clip,
                        );
                        if hit {
                            if clip_hits == 0 {
                                log::warn!("critic value clip ±{clip:.3e} hit at step {step}");
                            }
                            clip_hits += 1;
                        }
                        check_finite(var.get(tr.state, tr.action), "var", tr.state, tr.action, step)?;
                    }
                    None => {
                        expectile_td_step(&mut q, &targets, tr, gamma, alpha, &mut q_schedule);
                    }
                }
                check_finite(q.get(tr.state, tr.action), "q", tr.state, tr.action, step)?;
                if counts[tr.state] == 0 {
                    touched.push(tr.state);
                }
                counts[tr.state] += 1;
            }

            let coeff = cfg.entropy.coeff(step, total);
            for &s in &touched {
                let weight = cfg.policy_lr * counts[s] as f64 / batch_size as f64;
                if coeff > 0.0 {
                    policy.entropy_augmented(s, q.table().row(s), coeff, &mut augmented);
                    policy.advantage_step(s, &augmented, weight);
                } else {
                    policy.advantage_step(s, q.table().row(s), weight);
                }
                check_row_finite(policy.logits().row(s), "policy", s, step)?;
                counts[s] = 0;
            }
            touched.clear();
            targets.soft_update(&policy, &q);
        }

        if at_checkpoint(cadence, step) {
            observer.checkpoint(step, PolicyView::Stochastic(&policy))?;
        }
    }

    Ok(ActorCriticOutput {
        policy,
        q,
        var: cvar_critic.map(|(var, _)| var),
        clip_hits,
    })
}
