//! Finite MDPs with finite-support stochastic rewards.

mod grid;

use std::collections::BTreeSet;

use rand::Rng;

pub use grid::{
    build_cliffwalk, build_maze, clipped_normal_atoms, Action, Cell, EnvKind, GridConfig, GridMap,
    GridWorld, NoiseModel, SlipZone, CLIFFWALK_MAP, MAZE_MAP,
};

use crate::error::{Error, Result};
use crate::risk::DiscreteDistribution;

/// Tabular episodes are cut after this many steps.
pub const DEFAULT_EPISODE_CAP: usize = 500;

/// One branch of a state-action pair: the successor, its probability, and
/// the reward law attached to that successor.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub next_state: usize,
    pub prob: f64,
    pub reward: DiscreteDistribution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    outcomes: Vec<Vec<Outcome>>,
    gamma: f64,
    initial_state: usize,
    terminal: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub transitions: Vec<Transition>,
    /// Discounted return `Σ γ^t r_t`.
    pub total_return: f64,
    pub visited_states: BTreeSet<usize>,
}

impl EpisodeTrace {
    /// True when the last transition entered a terminal state.
    pub fn terminated(&self) -> bool {
        self.transitions.last().is_some_and(|t| t.done)
    }

    pub fn final_state(&self) -> Option<usize> {
        self.transitions.last().map(|t| t.next_state)
    }
}

impl TabularMdp {
    /// Builds an MDP whose rewards may depend on the sampled successor.
    ///
    /// `outcomes` is indexed by `s * n_actions + a`. Terminal states must
    /// self-loop with a zero reward.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        outcomes: Vec<Vec<Outcome>>,
        gamma: f64,
        initial_state: usize,
        terminal_states: &[usize],
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::domain("MDP needs at least one state and one action"));
        }
        if outcomes.len() != n_states * n_actions {
            return Err(Error::domain(format!(
                "expected {} transition rows, got {}",
                n_states * n_actions,
                outcomes.len()
            )));
        }
        // γ = 0 is allowed for one-step problems.
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::domain(format!("discount {gamma} is not in [0, 1)")));
        }
        if initial_state >= n_states {
            return Err(Error::domain("initial state out of range"));
        }
        let mut terminal = vec![false; n_states];
        for &s in terminal_states {
            if s >= n_states {
                return Err(Error::domain(format!("terminal state {s} out of range")));
            }
            terminal[s] = true;
        }
        for (idx, row) in outcomes.iter().enumerate() {
            let (s, a) = (idx / n_actions, idx % n_actions);
            if row.is_empty() {
                return Err(Error::domain(format!("({s}, {a}) has no successors")));
            }
            let mut total = 0.0;
            for o in row {
                if o.next_state >= n_states {
                    return Err(Error::domain(format!("({s}, {a}) leads out of range")));
                }
                if !(o.prob > 0.0 && o.prob <= 1.0) {
                    return Err(Error::domain(format!("({s}, {a}) has probability {}", o.prob)));
                }
                total += o.prob;
            }
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::domain(format!("({s}, {a}) transition mass is {total}")));
            }
            if terminal[s] {
                let absorbing = row.iter().all(|o| {
                    o.next_state == s && o.reward == DiscreteDistribution::point(0.0)
                });
                if !absorbing {
                    return Err(Error::domain(format!(
                        "terminal state {s} must self-loop with zero reward"
                    )));
                }
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            outcomes,
            gamma,
            initial_state,
            terminal,
        })
    }

    /// Builds an MDP whose reward and successor are independent given `(s, a)`.
    ///
    /// Rows of terminal states are replaced by zero-reward self loops.
    pub fn from_independent(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<Vec<(usize, f64)>>,
        rewards: Vec<DiscreteDistribution>,
        gamma: f64,
        initial_state: usize,
        terminal_states: &[usize],
    ) -> Result<Self> {
        if transitions.len() != rewards.len() {
            return Err(Error::domain("transition and reward tables differ in length"));
        }
        let outcomes = transitions
            .into_iter()
            .zip(rewards)
            .enumerate()
            .map(|(idx, (row, reward))| {
                let s = idx / n_actions.max(1);
                if terminal_states.contains(&s) {
                    vec![Outcome {
                        next_state: s,
                        prob: 1.0,
                        reward: DiscreteDistribution::point(0.0),
                    }]
                } else {
                    row.into_iter()
                        .map(|(next_state, prob)| Outcome {
                            next_state,
                            prob,
                            reward: reward.clone(),
                        })
                        .collect()
                }
            })
            .collect();
        Self::new(n_states, n_actions, outcomes, gamma, initial_state, terminal_states)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    #[inline]
    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn terminal_mask(&self) -> &[bool] {
        &self.terminal
    }

    pub fn non_terminal_states(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_states).filter(|&s| !self.terminal[s])
    }

    #[inline]
    pub fn outcomes(&self, s: usize, a: usize) -> &[Outcome] {
        &self.outcomes[s * self.n_actions + a]
    }

    /// Successor probabilities for `(s, a)`, summed per state.
    pub fn successor_distribution(&self, s: usize, a: usize) -> Vec<(usize, f64)> {
        let mut row: Vec<(usize, f64)> = Vec::new();
        for o in self.outcomes(s, a) {
            match row.iter_mut().find(|r| r.0 == o.next_state) {
                Some(r) => r.1 += o.prob,
                None => row.push((o.next_state, o.prob)),
            }
        }
        row.sort_by_key(|r| r.0);
        row
    }

    /// Marginal reward law of `(s, a)`.
    pub fn reward_distribution(&self, s: usize, a: usize) -> DiscreteDistribution {
        DiscreteDistribution::from_pairs(
            self.outcomes(s, a)
                .iter()
                .flat_map(|o| o.reward.atoms().map(move |(r, p)| (r, p * o.prob)))
                .collect(),
        )
    }

    /// Smallest and largest reward atom over all state-action pairs.
    pub fn reward_range(&self) -> (f64, f64) {
        self.outcomes
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), o| {
                (lo.min(o.reward.min()), hi.max(o.reward.max()))
            })
    }

    /// Largest reward magnitude, the `r_max` used for value bounds.
    pub fn reward_magnitude(&self) -> f64 {
        let (lo, hi) = self.reward_range();
        lo.abs().max(hi.abs())
    }

    /// Affine copy with every reward atom mapped to `scale · r + shift` on
    /// non-terminal rows. Terminal rows keep their zero reward.
    pub fn rescale_rewards(&self, scale: f64, shift: f64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::domain("reward scale must be positive"));
        }
        let mut out = self.clone();
        for (idx, row) in out.outcomes.iter_mut().enumerate() {
            if self.terminal[idx / self.n_actions] {
                continue;
            }
            for o in row {
                o.reward = o.reward.map_values(|r| scale * r + shift);
            }
        }
        Ok(out)
    }

    /// Copy with a different discount factor.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::domain(format!("discount {gamma} is not in [0, 1)")));
        }
        let mut out = self.clone();
        out.gamma = gamma;
        Ok(out)
    }

    fn check_pair(&self, s: usize, a: usize) -> Result<()> {
        if s >= self.n_states {
            return Err(Error::domain(format!("state {s} out of range")));
        }
        if a >= self.n_actions {
            return Err(Error::domain(format!("action {a} out of range")));
        }
        Ok(())
    }

    /// Samples one transition from a non-terminal state.
    pub fn step<R: Rng + ?Sized>(&self, state: usize, action: usize, rng: &mut R) -> Result<Transition> {
        self.check_pair(state, action)?;
        if self.terminal[state] {
            return Err(Error::Usage(format!("cannot step from terminal state {state}")));
        }
        let row = self.outcomes(state, action);
        let u: f64 = rng.gen();
        let mut cum = 0.0;
        let mut chosen = &row[row.len() - 1];
        for o in row {
            cum += o.prob;
            if u < cum {
                chosen = o;
                break;
            }
        }
        let reward = chosen.reward.sample(rng);
        Ok(Transition {
            state,
            action,
            reward,
            next_state: chosen.next_state,
            done: self.terminal[chosen.next_state],
        })
    }

    /// Exact law of `r + γ·v(s')` for the pair `(s, a)`.
    pub fn target_distribution(&self, state: usize, action: usize, v: &[f64]) -> Result<DiscreteDistribution> {
        self.check_pair(state, action)?;
        if v.len() != self.n_states {
            return Err(Error::domain("state-value table has the wrong length"));
        }
        let mut pairs = Vec::new();
        self.push_target_atoms(state, action, v, &mut pairs);
        Ok(DiscreteDistribution::from_pairs(pairs))
    }

    #[inline]
    pub(crate) fn push_target_atoms(&self, s: usize, a: usize, v: &[f64], out: &mut Vec<(f64, f64)>) {
        for o in self.outcomes(s, a) {
            let bootstrap = self.gamma * v[o.next_state];
            for (r, p) in o.reward.atoms() {
                out.push((r + bootstrap, p * o.prob));
            }
        }
    }

    /// Runs one episode from the initial state until termination or `max_steps`.
    pub fn rollout<R, F>(&self, max_steps: usize, rng: &mut R, mut act: F) -> EpisodeTrace
    where
        R: Rng + ?Sized,
        F: FnMut(usize, &mut R) -> usize,
    {
        let mut state = self.initial_state;
        let mut visited = BTreeSet::from([state]);
        let mut transitions = Vec::new();
        let mut total = 0.0;
        let mut discount = 1.0;
        for _ in 0..max_steps {
            if self.terminal[state] {
                break;
            }
            let action = act(state, rng);
            let t = self
                .step(state, action, rng)
                .expect("policy produced an out-of-range action");
            total += discount * t.reward;
            discount *= self.gamma;
            visited.insert(t.next_state);
            transitions.push(t);
            state = t.next_state;
            if t.done {
                break;
            }
        }
        EpisodeTrace {
            transitions,
            total_return: total,
            visited_states: visited,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_by_two() -> TabularMdp {
        // state 2 is terminal
        let reward = DiscreteDistribution::new([(0.0, 0.5), (1.0, 0.5)]).unwrap();
        TabularMdp::from_independent(
            3,
            1,
            vec![vec![(0, 0.5), (1, 0.5)], vec![(2, 1.0)], vec![(2, 1.0)]],
            vec![reward.clone(), DiscreteDistribution::point(-1.0), DiscreteDistribution::point(0.0)],
            0.5,
            0,
            &[2],
        )
        .unwrap()
    }

    #[test]
    fn deterministic_step() {
        let mdp = two_by_two();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = mdp.step(1, 0, &mut rng).unwrap();
        assert_eq!((t.state, t.action, t.reward, t.next_state, t.done), (1, 0, -1.0, 2, true));
    }

    #[test]
    fn step_errors() {
        let mdp = two_by_two();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(mdp.step(2, 0, &mut rng), Err(Error::Usage(_))));
        assert!(matches!(mdp.step(7, 0, &mut rng), Err(Error::Domain(_))));
        assert!(matches!(mdp.step(0, 3, &mut rng), Err(Error::Domain(_))));
    }

    #[test]
    fn target_distribution_product_enumeration() {
        let mdp = two_by_two();
        let d = mdp.target_distribution(0, 0, &[10.0, 20.0, 0.0]).unwrap();
        let atoms: Vec<_> = d.atoms().collect();
        assert_eq!(atoms, vec![(5.0, 0.25), (6.0, 0.25), (10.0, 0.25), (11.0, 0.25)]);
        let mass: f64 = d.probs().iter().sum();
        assert!((mass - 1.0).abs() < 1e-12);
        assert!(mdp.target_distribution(0, 0, &[1.0]).is_err());
    }

    #[test]
    fn degenerate_target() {
        let mdp = two_by_two();
        let d = mdp.target_distribution(1, 0, &[0.0, 0.0, 3.0]).unwrap();
        assert_eq!(d, DiscreteDistribution::point(-1.0 + 0.5 * 3.0));
    }

    #[test]
    fn validation() {
        let r = DiscreteDistribution::point(0.0);
        // row mass off
        assert!(TabularMdp::from_independent(1, 1, vec![vec![(0, 0.9)]], vec![r.clone()], 0.9, 0, &[]).is_err());
        // gamma out of range
        assert!(TabularMdp::from_independent(1, 1, vec![vec![(0, 1.0)]], vec![r.clone()], 1.0, 0, &[]).is_err());
        // terminal row that does not self-loop
        let bad = vec![vec![Outcome { next_state: 0, prob: 1.0, reward: DiscreteDistribution::point(1.0) }]];
        assert!(TabularMdp::new(1, 1, bad, 0.9, 0, &[0]).is_err());
    }

    #[test]
    fn rollout_is_reproducible_and_consistent() {
        let mdp = two_by_two();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            mdp.rollout(DEFAULT_EPISODE_CAP, &mut rng, |_, _| 0)
        };
        let a = run(11);
        assert_eq!(a, run(11));
        for w in a.transitions.windows(2) {
            assert_eq!(w[0].next_state, w[1].state);
        }
        let mut g = 1.0;
        let mut total = 0.0;
        for t in &a.transitions {
            total += g * t.reward;
            g *= mdp.gamma();
        }
        assert!((total - a.total_return).abs() < 1e-10);
        assert!(a.terminated());
    }
}
