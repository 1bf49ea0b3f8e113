use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mdp::Transition;

/// Fixed-capacity ring of transitions with its own sampling stream.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    next: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::domain("replay capacity must be positive"));
        }
        Ok(Self {
            capacity,
            storage: Vec::with_capacity(capacity.min(1 << 20)),
            next: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    /// Stores `t`, overwriting the oldest entry once full.
    pub fn push(&mut self, t: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Draws `n` distinct stored transitions uniformly into `out`.
    pub fn sample_into(&mut self, n: usize, out: &mut Vec<Transition>) -> Result<()> {
        if n > self.storage.len() {
            return Err(Error::Usage(format!(
                "cannot sample {n} transitions from a buffer holding {}",
                self.storage.len()
            )));
        }
        out.clear();
        out.extend(
            index::sample(&mut self.rng, self.storage.len(), n)
                .into_iter()
                .map(|i| self.storage[i]),
        );
        Ok(())
    }

    pub fn sample(&mut self, n: usize) -> Result<Vec<Transition>> {
        let mut out = Vec::with_capacity(n);
        self.sample_into(n, &mut out)?;
        Ok(out)
    }

    /// Stored transitions from oldest to newest.
    pub fn iter_chronological(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.storage.len() < self.capacity { 0 } else { self.next };
        self.storage[split..].iter().chain(&self.storage[..split])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn t(i: usize) -> Transition {
        Transition {
            state: i,
            action: 0,
            reward: i as f64,
            next_state: 0,
            done: false,
        }
    }

    #[test]
    fn keeps_most_recent_capacity_items() {
        let mut b = ReplayBuffer::new(5, 1).unwrap();
        for i in 0..13 {
            b.push(t(i));
        }
        assert_eq!(b.len(), 5);
        let held: Vec<usize> = b.iter_chronological().map(|x| x.state).collect();
        assert_eq!(held, vec![8, 9, 10, 11, 12]);
    }

    #[test]
    fn sampling_is_without_replacement_and_seeded() {
        let mut a = ReplayBuffer::new(100, 7).unwrap();
        let mut b = ReplayBuffer::new(100, 7).unwrap();
        for i in 0..100 {
            a.push(t(i));
            b.push(t(i));
        }
        let sa = a.sample(32).unwrap();
        let sb = b.sample(32).unwrap();
        assert_eq!(sa, sb);
        let distinct: HashSet<usize> = sa.iter().map(|x| x.state).collect();
        assert_eq!(distinct.len(), 32);
        assert!(a.sample(101).is_err());
        assert!(ReplayBuffer::new(0, 0).is_err());
    }

    #[test]
    fn sampling_is_roughly_uniform() {
        let mut b = ReplayBuffer::new(10, 3).unwrap();
        for i in 0..10 {
            b.push(t(i));
        }
        let mut counts = [0usize; 10];
        let mut out = Vec::new();
        for _ in 0..20_000 {
            b.sample_into(3, &mut out).unwrap();
            for x in &out {
                counts[x.state] += 1;
            }
        }
        for c in counts {
            assert!((c as f64 - 6000.0).abs() < 300.0, "{c}");
        }
    }
}
