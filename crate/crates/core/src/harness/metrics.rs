use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{Observer, PolicyView};
use crate::error::{Error, Result};
use crate::mdp::{EpisodeTrace, GridWorld};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryClass {
    /// Reached the goal without entering a risky cell.
    RiskAverse,
    /// Reached the goal through at least one risky cell.
    RiskNeutral,
    /// Never reached the goal.
    Other,
}

/// Classifies an episode of `world` by the route it took.
///
/// Risky cells are the noisy cells and the cells where lateral moves may
/// slide; the start cell is never risky in the committed maps.
pub fn classify_trajectory(world: &GridWorld, trace: &EpisodeTrace) -> TrajectoryClass {
    let reached = trace.final_state().is_some_and(|s| world.is_goal(s));
    if !reached {
        return TrajectoryClass::Other;
    }
    if trace.visited_states.iter().any(|&s| world.is_risky(s)) {
        TrajectoryClass::RiskNeutral
    } else {
        TrajectoryClass::RiskAverse
    }
}

/// Mean of the `⌈αn⌉` smallest returns.
pub fn empirical_cvar_of_returns(returns: &[f64], alpha: f64) -> Result<f64> {
    if returns.is_empty() {
        return Err(Error::domain("empirical CVaR of an empty list"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha = {alpha} is not in (0, 1)")));
    }
    if returns.iter().any(|r| r.is_nan()) {
        return Err(Error::domain("returns contain NaN"));
    }
    let mut sorted = returns.to_vec();
    sorted.sort_by(f64::total_cmp);
    // guard against α·n landing a rounding error above an integer
    let k = ((alpha * sorted.len() as f64 - 1e-9).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[..k].iter().sum::<f64>() / k as f64)
}

/// Undiscounted sum of rewards along the trace.
pub fn episode_return(trace: &EpisodeTrace) -> f64 {
    trace.transitions.iter().map(|t| t.reward).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub step: usize,
    pub mean_return: f64,
    pub risk_averse_rate: f64,
    pub empirical_cvar: f64,
    #[serde(skip)]
    pub returns: Vec<f64>,
    #[serde(skip)]
    pub classes: Vec<TrajectoryClass>,
}

impl RunMetrics {
    pub fn from_episodes(step: usize, returns: Vec<f64>, classes: Vec<TrajectoryClass>, cvar_alpha: f64) -> Result<Self> {
        if returns.len() != classes.len() {
            return Err(Error::domain("returns and classes differ in length"));
        }
        let n = returns.len() as f64;
        let averse = classes.iter().filter(|&&c| c == TrajectoryClass::RiskAverse).count();
        Ok(Self {
            step,
            mean_return: returns.iter().sum::<f64>() / n,
            risk_averse_rate: averse as f64 / n,
            empirical_cvar: empirical_cvar_of_returns(&returns, cvar_alpha)?,
            returns,
            classes,
        })
    }

    pub fn rate_of(&self, class: TrajectoryClass) -> f64 {
        self.classes.iter().filter(|&&c| c == class).count() as f64 / self.classes.len().max(1) as f64
    }
}

/// Samples `episodes` rollouts of `policy` and summarizes them.
pub fn evaluate_episodes(
    world: &GridWorld,
    policy: PolicyView<'_>,
    episodes: usize,
    episode_cap: usize,
    cvar_alpha: f64,
    step: usize,
    rng: &mut ChaCha8Rng,
) -> Result<RunMetrics> {
    let mut returns = Vec::with_capacity(episodes);
    let mut classes = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let trace = world.mdp().rollout(episode_cap, rng, |s, r| policy.act(s, r));
        returns.push(episode_return(&trace));
        classes.push(classify_trajectory(world, &trace));
    }
    RunMetrics::from_episodes(step, returns, classes, cvar_alpha)
}

/// Observer that evaluates the live policy at every checkpoint, using a
/// random stream separate from training.
pub struct CheckpointEvaluator<'a> {
    world: &'a GridWorld,
    cadence: usize,
    episodes: usize,
    episode_cap: usize,
    cvar_alpha: f64,
    rng: ChaCha8Rng,
    pub metrics: Vec<RunMetrics>,
}

impl<'a> CheckpointEvaluator<'a> {
    pub fn new(
        world: &'a GridWorld,
        cadence: usize,
        episodes: usize,
        episode_cap: usize,
        cvar_alpha: f64,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Self {
            world,
            cadence,
            episodes,
            episode_cap,
            cvar_alpha,
            rng,
            metrics: Vec::new(),
        }
    }
}

impl Observer for CheckpointEvaluator<'_> {
    fn cadence(&self) -> Option<usize> {
        Some(self.cadence)
    }

    fn checkpoint(&mut self, step: usize, policy: PolicyView<'_>) -> Result<()> {
        let m = evaluate_episodes(
            self.world,
            policy,
            self.episodes,
            self.episode_cap,
            self.cvar_alpha,
            step,
            &mut self.rng,
        )?;
        log::debug!("step {step}: risk-averse rate {:.2}, mean return {:.2}", m.risk_averse_rate, m.mean_return);
        self.metrics.push(m);
        Ok(())
    }
}

pub const METRICS_HEADER: [&str; 4] = ["step", "mean_return", "risk_averse_rate", "empirical_cvar"];

pub fn write_metrics_csv_to<W: Write>(writer: W, metrics: &[RunMetrics]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(METRICS_HEADER)?;
    for m in metrics {
        w.serialize((m.step, m.mean_return, m.risk_averse_rate, m.empirical_cvar))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics_csv(path: &Path, metrics: &[RunMetrics]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_metrics_csv_to(BufWriter::new(file), metrics).map_err(|e| Error::csv(path, e))
}

/// Reads the four summary columns; per-episode detail is not stored.
pub fn read_metrics_csv_from<R: Read>(reader: R) -> csv::Result<Vec<RunMetrics>> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    if headers.iter().ne(METRICS_HEADER) {
        return Err(csv::Error::from(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("unexpected metrics header {:?}", headers),
        )));
    }
    r.deserialize::<(usize, f64, f64, f64)>()
        .map(|row| {
            row.map(|(step, mean_return, risk_averse_rate, empirical_cvar)| RunMetrics {
                step,
                mean_return,
                risk_averse_rate,
                empirical_cvar,
                returns: Vec::new(),
                classes: Vec::new(),
            })
        })
        .collect()
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<RunMetrics>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_metrics_csv_from(file).map_err(|e| Error::csv(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{build_cliffwalk, build_maze, Transition};
    use std::collections::BTreeSet;

    fn trace_through(world: &GridWorld, cells: &[(usize, usize)], finish: bool) -> EpisodeTrace {
        let states: Vec<usize> = cells.iter().map(|&(r, c)| world.state_at(r, c).unwrap()).collect();
        let mdp = world.mdp();
        let transitions: Vec<Transition> = states
            .windows(2)
            .enumerate()
            .map(|(i, w)| Transition {
                state: w[0],
                action: 0,
                reward: -1.0,
                next_state: w[1],
                done: finish && i + 2 == states.len() && mdp.is_terminal(w[1]),
            })
            .collect();
        EpisodeTrace {
            total_return: -(transitions.len() as f64),
            transitions,
            visited_states: states.iter().copied().collect::<BTreeSet<_>>(),
        }
    }

    #[test]
    fn maze_classification() {
        let maze = build_maze(21).unwrap();
        let white = [(1, 1), (2, 1), (3, 1), (3, 2), (3, 3), (3, 4), (3, 5), (3, 6), (3, 7), (2, 7), (1, 7)];
        assert_eq!(classify_trajectory(&maze, &trace_through(&maze, &white, true)), TrajectoryClass::RiskAverse);
        let red = [(1, 1), (1, 2), (1, 3), (1, 4), (1, 5), (1, 6), (1, 7)];
        assert_eq!(classify_trajectory(&maze, &trace_through(&maze, &red, true)), TrajectoryClass::RiskNeutral);
        let truncated = [(1, 1), (2, 1), (3, 1)];
        assert_eq!(classify_trajectory(&maze, &trace_through(&maze, &truncated, false)), TrajectoryClass::Other);
    }

    #[test]
    fn cliffwalk_classification() {
        let cw = build_cliffwalk().unwrap();
        let mut top: Vec<(usize, usize)> = vec![(4, 1), (3, 1), (2, 1), (1, 1)];
        top.extend((2..=12).map(|c| (1, c)));
        top.extend([(2, 12), (3, 12), (4, 12)]);
        assert_eq!(classify_trajectory(&cw, &trace_through(&cw, &top, true)), TrajectoryClass::RiskAverse);
        let mut middle: Vec<(usize, usize)> = vec![(4, 1), (3, 1), (2, 1)];
        middle.extend((2..=12).map(|c| (2, c)));
        middle.extend([(3, 12), (4, 12)]);
        assert_eq!(classify_trajectory(&cw, &trace_through(&cw, &middle, true)), TrajectoryClass::RiskNeutral);
        let fell = [(4, 1), (3, 1), (3, 2), (4, 2)];
        assert_eq!(classify_trajectory(&cw, &trace_through(&cw, &fell, true)), TrajectoryClass::Other);
    }

    #[test]
    fn empirical_cvar_examples() {
        let fifteen: Vec<f64> = (0..15).map(|i| (i * 7 % 15) as f64).collect();
        assert_eq!(empirical_cvar_of_returns(&fifteen, 0.2).unwrap(), 1.0);
        assert_eq!(empirical_cvar_of_returns(&[4.5; 9], 0.3).unwrap(), 4.5);
        let ten: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(empirical_cvar_of_returns(&ten, 0.3).unwrap(), 2.0);
        assert_eq!(empirical_cvar_of_returns(&ten, 0.05).unwrap(), 1.0);
        assert!(empirical_cvar_of_returns(&[], 0.2).is_err());
        assert!(empirical_cvar_of_returns(&ten, 1.0).is_err());
    }

    #[test]
    fn metrics_csv_round_trip() {
        let ms = vec![
            RunMetrics::from_episodes(1000, vec![-3.0, 0.1 + 0.2, 7.25], vec![TrajectoryClass::RiskAverse; 3], 0.2).unwrap(),
            RunMetrics::from_episodes(2000, vec![1e-17, -1e300], vec![TrajectoryClass::Other; 2], 0.2).unwrap(),
        ];
        let mut buf = Vec::new();
        write_metrics_csv_to(&mut buf, &ms).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("step,mean_return,risk_averse_rate,empirical_cvar\n"));
        let back = read_metrics_csv_from(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in ms.iter().zip(&back) {
            assert_eq!((a.step, a.mean_return, a.risk_averse_rate, a.empirical_cvar), (b.step, b.mean_return, b.risk_averse_rate, b.empirical_cvar));
        }
    }
}
