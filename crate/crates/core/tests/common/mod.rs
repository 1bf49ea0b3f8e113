//! Independent reference implementations shared by the integration tests.
//!
//! Nothing here calls into the crate's risk or oracle code: the functionals
//! are re-derived from their defining formulas so the tests compare two
//! separate implementations.
#![allow(dead_code)]

use dynrisk::mdp::Outcome;
use dynrisk::{DiscreteDistribution, RiskKind, RiskSpec, SoftmaxPolicyTable, Table, TabularMdp};
use rand::Rng;

/// Atoms sorted by value with equal values merged.
pub fn sorted_atoms(atoms: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut xs = atoms.to_vec();
    xs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(xs.len());
    for (v, p) in xs {
        match out.last_mut() {
            Some(last) if last.0 == v => last.1 += p,
            _ => out.push((v, p)),
        }
    }
    out
}

/// Root of `α E[(x−y)₊] = (1−α) E[(y−x)₊]` by bisection.
pub fn ref_expectile(atoms: &[(f64, f64)], alpha: f64) -> f64 {
    let foc = |y: f64| {
        atoms
            .iter()
            .map(|&(x, p)| p * if x > y { alpha * (x - y) } else { -(1.0 - alpha) * (y - x) })
            .sum::<f64>()
    };
    let mut lo = atoms.iter().map(|a| a.0).fold(f64::INFINITY, f64::min);
    let mut hi = atoms.iter().map(|a| a.0).fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if foc(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Mean of the worst `α` probability mass.
pub fn ref_cvar(atoms: &[(f64, f64)], alpha: f64) -> f64 {
    let mut left = alpha;
    let mut acc = 0.0;
    for (v, p) in sorted_atoms(atoms) {
        let take = p.min(left);
        acc += take * v;
        left -= take;
        if left <= 0.0 {
            break;
        }
    }
    acc / alpha
}

/// Lower `α`-quantile: smallest atom with `P[x ≤ v] ≥ α`.
pub fn ref_var(atoms: &[(f64, f64)], alpha: f64) -> f64 {
    let sorted = sorted_atoms(atoms);
    let mut cum = 0.0;
    for &(v, p) in &sorted {
        cum += p;
        if cum >= alpha - 1e-12 {
            return v;
        }
    }
    sorted.last().unwrap().0
}

pub fn ref_risk(atoms: &[(f64, f64)], spec: RiskSpec) -> f64 {
    match spec.kind() {
        RiskKind::Expectile => ref_expectile(atoms, spec.alpha()),
        RiskKind::CVaR => ref_cvar(atoms, spec.alpha()),
        RiskKind::Mean => atoms.iter().map(|&(x, p)| x * p).sum(),
    }
}

pub fn to_dist(atoms: &[(f64, f64)]) -> DiscreteDistribution {
    DiscreteDistribution::new(atoms.iter().copied()).unwrap()
}

/// Random probability vector of length `n` with every entry at least `floor`.
pub fn random_simplex<R: Rng>(rng: &mut R, n: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|x| floor + (1.0 - n as f64 * floor) * x / total).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    p
}

pub fn random_atoms<R: Rng>(rng: &mut R, max_atoms: usize, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let n = rng.gen_range(1..=max_atoms);
    let probs = random_simplex(rng, n, 0.02);
    probs.into_iter().map(|p| (rng.gen_range(lo..hi), p)).collect()
}

/// Random MDP with successor-dependent reward laws. With probability 1/2
/// the last state is absorbing-terminal.
pub fn random_mdp<R: Rng>(rng: &mut R, max_states: usize, max_actions: usize, max_atoms: usize, gamma: f64) -> TabularMdp {
    let n_s = rng.gen_range(2..=max_states);
    let n_a = rng.gen_range(1..=max_actions);
    let terminal: Vec<usize> = if n_s > 2 && rng.gen_bool(0.5) { vec![n_s - 1] } else { vec![] };
    let mut outcomes = Vec::with_capacity(n_s * n_a);
    for s in 0..n_s {
        for _ in 0..n_a {
            if terminal.contains(&s) {
                outcomes.push(vec![Outcome {
                    next_state: s,
                    prob: 1.0,
                    reward: DiscreteDistribution::point(0.0),
                }]);
                continue;
            }
            let k = rng.gen_range(1..=n_s.min(3));
            let mut succ: Vec<usize> = (0..n_s).collect();
            for i in 0..k {
                let j = rng.gen_range(i..n_s);
                succ.swap(i, j);
            }
            let probs = random_simplex(rng, k, 0.05);
            let row = succ[..k]
                .iter()
                .zip(probs)
                .map(|(&next_state, prob)| Outcome {
                    next_state,
                    prob,
                    reward: to_dist(&random_atoms(rng, max_atoms, -1.0, 1.0)),
                })
                .collect();
            outcomes.push(row);
        }
    }
    TabularMdp::new(n_s, n_a, outcomes, gamma, 0, &terminal).unwrap()
}

pub fn random_table<R: Rng>(rng: &mut R, n_s: usize, n_a: usize, lo: f64, hi: f64) -> Table {
    let values: Vec<f64> = (0..n_s * n_a).map(|_| rng.gen_range(lo..hi)).collect();
    Table::from_fn(n_s, n_a, |s, a| values[s * n_a + a])
}

pub fn random_policy<R: Rng>(rng: &mut R, n_s: usize, n_a: usize) -> SoftmaxPolicyTable {
    SoftmaxPolicyTable::from_logits(random_table(rng, n_s, n_a, -2.0, 2.0)).unwrap()
}

/// Atoms of `r + γ v(s')` for one state-action pair.
pub fn target_atoms(mdp: &TabularMdp, s: usize, a: usize, v: &[f64]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for o in mdp.outcomes(s, a) {
        for (r, p) in o.reward.atoms() {
            out.push((r + mdp.gamma() * v[o.next_state], p * o.prob));
        }
    }
    out
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    x
}
