use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::metrics::{
    classify_trajectory, evaluate_episodes, write_metrics_csv, CheckpointEvaluator, RunMetrics, TrajectoryClass,
};
use crate::agents::{train, PolicyView, TrainedAgent};
use crate::error::{Error, Result};
use crate::exact::{evaluate_policy_exact, value_iteration_exact, ValueTables};
use crate::mdp::{EpisodeTrace, GridWorld, TabularMdp, Transition};
use crate::policy::SoftmaxPolicyTable;
use crate::risk::RiskSpec;

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "DYNRISK_OUT";

/// `$DYNRISK_OUT`, or `runs` when unset.
pub fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation over `√n`; zero for one sample.
    pub stderr: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let stderr = if xs.len() > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSummary {
    pub step: usize,
    pub mean_return: Stat,
    pub risk_averse_rate: Stat,
    pub empirical_cvar: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: Option<String>,
    pub environment: String,
    pub algorithm: String,
    pub alpha: f64,
    /// Seeds whose runs completed, in config order.
    pub seeds: Vec<u64>,
    pub failed: Vec<SeedFailure>,
    pub checkpoints: Vec<CheckpointSummary>,
}

impl Summary {
    pub fn final_checkpoint(&self) -> Option<&CheckpointSummary> {
        self.checkpoints.last()
    }
}

#[derive(Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub metrics: Vec<RunMetrics>,
    pub agent: TrainedAgent,
}

#[derive(Debug)]
pub struct ExperimentReport {
    pub out_dir: Option<PathBuf>,
    pub summary: Summary,
    pub runs: Vec<SeedRun>,
}

/// Trains and evaluates one seed.
pub fn run_seed(cfg: &RunConfig, world: &GridWorld, seed: u64) -> Result<SeedRun> {
    let mut agent_cfg = cfg.agent.clone();
    agent_cfg.seed = seed;
    let eval = &cfg.evaluation;
    let mut observer = CheckpointEvaluator::new(world, eval.cadence, eval.episodes, eval.episode_cap, eval.cvar_alpha, seed);
    let agent = train(world.mdp(), &agent_cfg, &mut observer)?;
    Ok(SeedRun {
        seed,
        metrics: observer.metrics,
        agent,
    })
}

/// Runs every seed of `cfg` on up to `cfg.workers` threads.
///
/// With an output directory, writes `metrics_<seed>.csv` per completed seed
/// and `summary.json`. A failing seed is recorded and does not stop the
/// others; the call fails only if no seed completes.
pub fn run_experiment(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<ExperimentReport> {
    cfg.validate()?;
    let world = cfg.build_environment()?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let next = AtomicUsize::new(0);
    let workers = cfg.workers.min(cfg.seeds.len());
    let job = || {
        let mut done = Vec::new();
        loop {
            let i = next.fetch_add(1, Ordering::Relaxed);
            let Some(&seed) = cfg.seeds.get(i) else { break };
            let result = run_seed(cfg, &world, seed).and_then(|run| {
                if let Some(dir) = out_dir {
                    write_metrics_csv(&dir.join(format!("metrics_{seed}.csv")), &run.metrics)?;
                    write_agent_tables(dir, seed, &run.agent)?;
                }
                Ok(run)
            });
            match &result {
                Ok(run) => log::info!(
                    "seed {seed}: final risk-averse rate {:.2}",
                    run.metrics.last().map_or(f64::NAN, |m| m.risk_averse_rate)
                ),
                Err(e) => log::error!("seed {seed} failed: {e}"),
            }
            done.push((i, result));
        }
        done
    };
    let mut results: Vec<(usize, Result<SeedRun>)> = if workers <= 1 {
        job()
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers).map(|_| scope.spawn(job)).collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("seed worker panicked"))
                .collect()
        })
    };
    results.sort_by_key(|(i, _)| *i);

    let mut runs = Vec::new();
    let mut failed = Vec::new();
    for (i, r) in results {
        match r {
            Ok(run) => runs.push(run),
            Err(e) => failed.push(SeedFailure {
                seed: cfg.seeds[i],
                error: e.to_string(),
            }),
        }
    }
    if runs.is_empty() {
        let detail = failed.first().map_or(String::new(), |f| format!(" (seed {}: {})", f.seed, f.error));
        return Err(Error::Usage(format!("every seed failed{detail}")));
    }

    let summary = Summary {
        name: cfg.name.clone(),
        environment: cfg.environment.kind.to_string(),
        algorithm: cfg.agent.algorithm.to_string(),
        alpha: cfg.agent.risk_spec()?.alpha(),
        seeds: runs.iter().map(|r| r.seed).collect(),
        failed,
        checkpoints: summarize(&runs.iter().map(|r| r.metrics.as_slice()).collect::<Vec<_>>())?,
    };
    if let Some(dir) = out_dir {
        let path = dir.join("summary.json");
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, &summary)?;
        w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(ExperimentReport {
        out_dir: out_dir.map(Path::to_path_buf),
        summary,
        runs,
    })
}

/// Final policy logits and action values of one seed, where the agent has them.
fn write_agent_tables(dir: &Path, seed: u64, agent: &TrainedAgent) -> Result<()> {
    if let Some(policy) = agent.policy() {
        policy.write_csv(&dir.join(format!("policy_{seed}.csv")))?;
    }
    match agent {
        TrainedAgent::ActorCritic(o) => o.q.table().write_csv(&dir.join(format!("q_{seed}.csv")), "q"),
        TrainedAgent::QLearning(o) => o.q.table().write_csv(&dir.join(format!("q_{seed}.csv")), "q"),
        TrainedAgent::ExpPg(o) => write_state_csv(&dir.join(format!("v_{seed}.csv")), "v", o.v.iter().copied()),
        TrainedAgent::EnvelopePg(o) => write_state_csv(&dir.join(format!("v_{seed}.csv")), "v", o.v.iter().copied()),
    }
}

/// Across-seed mean and standard error at each checkpoint.
pub fn summarize(per_seed: &[&[RunMetrics]]) -> Result<Vec<CheckpointSummary>> {
    let Some(first) = per_seed.first() else {
        return Ok(Vec::new());
    };
    if per_seed.iter().any(|m| m.len() != first.len()) {
        return Err(Error::domain("seeds recorded different numbers of checkpoints"));
    }
    (0..first.len())
        .map(|k| {
            let step = first[k].step;
            if per_seed.iter().any(|m| m[k].step != step) {
                return Err(Error::domain("seeds recorded checkpoints at different steps"));
            }
            let column = |f: fn(&RunMetrics) -> f64| Stat::of(&per_seed.iter().map(|m| f(&m[k])).collect::<Vec<_>>());
            Ok(CheckpointSummary {
                step,
                mean_return: column(|m| m.mean_return),
                risk_averse_rate: column(|m| m.risk_averse_rate),
                empirical_cvar: column(|m| m.empirical_cvar),
            })
        })
        .collect()
}

/// The path a deterministic policy follows when every transition takes its
/// most likely branch (lowest successor index on ties) and pays that
/// branch's mean reward.
pub fn nominal_trace(mdp: &TabularMdp, actions: &[usize], max_steps: usize) -> EpisodeTrace {
    let mut state = mdp.initial_state();
    let mut visited = BTreeSet::from([state]);
    let mut transitions = Vec::new();
    let mut total = 0.0;
    let mut discount = 1.0;
    for _ in 0..max_steps {
        if mdp.is_terminal(state) {
            break;
        }
        let action = actions[state];
        let branch = mdp
            .outcomes(state, action)
            .iter()
            .reduce(|best, o| if o.prob > best.prob { o } else { best })
            .expect("every pair has at least one outcome");
        let reward = branch.reward.mean();
        let t = Transition {
            state,
            action,
            reward,
            next_state: branch.next_state,
            done: mdp.is_terminal(branch.next_state),
        };
        total += discount * reward;
        discount *= mdp.gamma();
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

#[derive(Debug, Clone)]
pub struct OracleReport {
    pub optimal: ValueTables,
    pub greedy: Vec<usize>,
    /// Class of the greedy policy's nominal path.
    pub greedy_class: TrajectoryClass,
    pub nominal: EpisodeTrace,
    /// Exact values of a supplied policy.
    pub policy_values: Option<ValueTables>,
}

/// Exact optimal values and greedy policy of `world` under `spec`, plus the
/// exact values of `policy` when given. Writes CSVs when `out_dir` is set.
pub fn run_oracle(
    world: &GridWorld,
    spec: RiskSpec,
    tol: f64,
    policy: Option<&SoftmaxPolicyTable>,
    out_dir: Option<&Path>,
) -> Result<OracleReport> {
    let mdp = world.mdp();
    let (optimal, greedy) = value_iteration_exact(mdp, spec, tol)?;
    let nominal = nominal_trace(mdp, &greedy, mdp.n_states() * 4);
    let greedy_class = classify_trajectory(world, &nominal);
    let policy_values = match policy {
        Some(p) => {
            if p.n_states() != mdp.n_states() || p.n_actions() != mdp.n_actions() {
                return Err(Error::Usage("policy table does not match the environment".into()));
            }
            Some(evaluate_policy_exact(mdp, p, spec, tol)?)
        }
        None => None,
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        optimal.q.write_csv(&dir.join("q_star.csv"), "q")?;
        write_state_csv(&dir.join("v_star.csv"), "v", optimal.v.iter().copied())?;
        write_state_csv(&dir.join("greedy_policy.csv"), "action", greedy.iter().copied())?;
        if let Some(pv) = &policy_values {
            pv.q.write_csv(&dir.join("policy_q.csv"), "q")?;
            write_state_csv(&dir.join("policy_v.csv"), "v", pv.v.iter().copied())?;
        }
    }
    Ok(OracleReport {
        optimal,
        greedy,
        greedy_class,
        nominal,
        policy_values,
    })
}

/// Writes `state,<column>` rows.
pub fn write_state_csv<T: Serialize>(path: &Path, column: &str, values: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let write = |w: &mut csv::Writer<_>| -> csv::Result<()> {
        w.write_record(["state", column])?;
        for (s, v) in values.into_iter().enumerate() {
            w.serialize((s, v))?;
        }
        w.flush()?;
        Ok(())
    };
    write(&mut w).map_err(|e| Error::csv(path, e))
}

/// Samples `episodes` rollouts of a stored policy.
pub fn evaluate_policy_rollouts(
    world: &GridWorld,
    policy: &SoftmaxPolicyTable,
    episodes: usize,
    episode_cap: usize,
    cvar_alpha: f64,
    seed: u64,
) -> Result<RunMetrics> {
    if episodes == 0 {
        return Err(Error::Usage("at least one evaluation episode is required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    evaluate_episodes(world, PolicyView::Stochastic(policy), episodes, episode_cap, cvar_alpha, 0, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{build_cliffwalk, build_maze};

    #[test]
    fn stat_examples() {
        assert_eq!(Stat::of(&[3.0]), Stat { mean: 3.0, stderr: 0.0 });
        let s = Stat::of(&[1.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.stderr - 1.0).abs() < 1e-15);
    }

    #[test]
    fn oracle_path_split() {
        let maze = build_maze(21).unwrap();
        let cliff = build_cliffwalk().unwrap();
        for world in [&maze, &cliff] {
            let neutral = run_oracle(world, RiskSpec::expectile(0.5).unwrap(), 1e-9, None, None).unwrap();
            assert_eq!(neutral.greedy_class, TrajectoryClass::RiskNeutral, "{:?}", world.kind());
            for spec in [RiskSpec::expectile(0.05).unwrap(), RiskSpec::cvar(0.1).unwrap()] {
                let averse = run_oracle(world, spec, 1e-9, None, None).unwrap();
                assert_eq!(averse.greedy_class, TrajectoryClass::RiskAverse, "{:?} {:?}", world.kind(), spec);
            }
        }
    }
}
