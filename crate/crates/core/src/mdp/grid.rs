//! Gridworld environments and their plain-text map format.
//!
//! Map characters: `#` wall, `S` start, `G` goal, `R` noisy cell, `C` cliff,
//! `.` free. Every non-wall cell is a state; states are numbered row-major.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{Outcome, TabularMdp};
use crate::error::{Error, Result};
use crate::risk::DiscreteDistribution;

/// Maze: the short top corridor crosses the noisy cell `R`; the detour
/// through the bottom corridor is four steps longer.
pub const MAZE_MAP: &str = "\
#########
#S..R..G#
#.#####.#
#.......#
#########";

/// Cliffwalk: the classic 4×12 board inside a wall border, so interior rows
/// are 1..=4 and the cliff occupies row 4, columns 2..=11.
pub const CLIFFWALK_MAP: &str = "\
##############
#............#
#............#
#............#
#SCCCCCCCCCCG#
##############";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Wall,
    Start,
    Goal,
    Noisy,
    Cliff,
    Free,
}

impl Cell {
    fn from_char(c: char) -> Option<Self> {
        Some(match c {
            '#' => Cell::Wall,
            'S' => Cell::Start,
            'G' => Cell::Goal,
            'R' => Cell::Noisy,
            'C' => Cell::Cliff,
            '.' => Cell::Free,
            _ => return None,
        })
    }

    fn as_char(self) -> char {
        match self {
            Cell::Wall => '#',
            Cell::Start => 'S',
            Cell::Goal => 'G',
            Cell::Noisy => 'R',
            Cell::Cliff => 'C',
            Cell::Free => '.',
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Cell::Goal | Cell::Cliff)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridMap {
    rows: usize,
    cols: usize,
    cells: Vec<Cell>,
}

impl GridMap {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cell(&self, row: usize, col: usize) -> Cell {
        self.cells[row * self.cols + col]
    }

    pub fn start(&self) -> (usize, usize) {
        let idx = self.cells.iter().position(|&c| c == Cell::Start).unwrap();
        (idx / self.cols, idx % self.cols)
    }
}

impl FromStr for GridMap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lines: Vec<&str> = s
            .lines()
            .map(str::trim_end)
            .filter(|l| !l.is_empty())
            .collect();
        if lines.is_empty() {
            return Err(Error::domain("empty grid map"));
        }
        let cols = lines[0].chars().count();
        let mut cells = Vec::with_capacity(lines.len() * cols);
        for (r, line) in lines.iter().enumerate() {
            if line.chars().count() != cols {
                return Err(Error::domain(format!("grid row {r} has a different width")));
            }
            for (c, ch) in line.chars().enumerate() {
                let cell = Cell::from_char(ch)
                    .ok_or_else(|| Error::domain(format!("unknown grid char {ch:?} at ({r}, {c})")))?;
                cells.push(cell);
            }
        }
        let starts = cells.iter().filter(|&&c| c == Cell::Start).count();
        if starts != 1 {
            return Err(Error::domain(format!("grid needs exactly one start, found {starts}")));
        }
        if !cells.contains(&Cell::Goal) {
            return Err(Error::domain("grid has no goal"));
        }
        Ok(Self {
            rows: lines.len(),
            cols,
            cells,
        })
    }
}

impl fmt::Display for GridMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..self.rows {
            if r > 0 {
                writeln!(f)?;
            }
            for c in 0..self.cols {
                write!(f, "{}", self.cell(r, c).as_char())?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }

    pub fn is_lateral(self) -> bool {
        matches!(self, Action::Left | Action::Right)
    }
}

/// Cells of one row where lateral moves slide one row down with `prob`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlipZone {
    pub row: usize,
    pub col_start: usize,
    pub col_end: usize,
    pub prob: f64,
}

impl SlipZone {
    fn contains(&self, row: usize, col: usize) -> bool {
        row == self.row && (self.col_start..=self.col_end).contains(&col)
    }
}

/// Additive reward noise on noisy cells: an `atoms`-point discretization of
/// `clip(scale · N(0, 1), -bound, bound)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub scale: f64,
    pub bound: f64,
    pub atoms: usize,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            scale: 30.0,
            bound: 20.0,
            atoms: 21,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub step_reward: f64,
    pub goal_reward: f64,
    pub cliff_reward: f64,
    pub noise: NoiseModel,
    pub slips: Vec<SlipZone>,
    pub gamma: f64,
}

impl GridConfig {
    pub fn maze(noise_atoms: usize) -> Self {
        Self {
            step_reward: -1.0,
            goal_reward: 10.0,
            cliff_reward: -100.0,
            noise: NoiseModel {
                atoms: noise_atoms,
                ..NoiseModel::default()
            },
            slips: Vec::new(),
            gamma: 0.999,
        }
    }

    pub fn cliffwalk() -> Self {
        Self {
            step_reward: -1.0,
            goal_reward: -1.0,
            cliff_reward: -100.0,
            noise: NoiseModel::default(),
            slips: vec![
                SlipZone {
                    row: 3,
                    col_start: 2,
                    col_end: 11,
                    prob: 0.2,
                },
                SlipZone {
                    row: 2,
                    col_start: 2,
                    col_end: 7,
                    prob: 0.1,
                },
            ],
            gamma: 0.999,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Maze,
    Cliffwalk,
    Grid,
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "maze" => Ok(EnvKind::Maze),
            "cliffwalk" => Ok(EnvKind::Cliffwalk),
            "grid" => Ok(EnvKind::Grid),
            other => Err(Error::Usage(format!("unknown environment `{other}`"))),
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::Maze => "maze",
            EnvKind::Cliffwalk => "cliffwalk",
            EnvKind::Grid => "grid",
        })
    }
}

/// A gridworld together with the tabular MDP it induces.
#[derive(Debug, Clone)]
pub struct GridWorld {
    kind: EnvKind,
    map: GridMap,
    config: GridConfig,
    mdp: TabularMdp,
    state_cell: Vec<usize>,
    cell_state: Vec<Option<usize>>,
}

/// Equal-probability interior bins at their quantile midpoints, plus the
/// exact clipped mass at each bound. Symmetrized so the mean is zero.
pub fn clipped_normal_atoms(scale: f64, bound: f64, n: usize) -> Result<DiscreteDistribution> {
    if n < 2 {
        return Err(Error::domain("noise needs at least two atoms"));
    }
    if !(scale > 0.0 && bound > 0.0) {
        return Err(Error::domain("noise scale and bound must be positive"));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut atoms: Vec<(f64, f64)> = Vec::with_capacity(n);
    if n == 2 {
        let v = (scale * normal.inverse_cdf(0.25)).max(-bound);
        atoms.push((v, 0.5));
        atoms.push((-v, 0.5));
    } else {
        let tail = normal.cdf(-bound / scale);
        let m = n - 2;
        let width = (1.0 - 2.0 * tail) / m as f64;
        atoms.push((-bound, tail));
        for j in 0..m {
            let level = tail + (j as f64 + 0.5) * width;
            atoms.push((scale * normal.inverse_cdf(level), width));
        }
        atoms.push((bound, tail));
        let values: Vec<f64> = atoms.iter().map(|a| a.0).collect();
        for (i, atom) in atoms.iter_mut().enumerate() {
            atom.0 = 0.5 * (values[i] - values[n - 1 - i]);
        }
    }
    DiscreteDistribution::new(atoms)
}

impl GridWorld {
    pub fn new(kind: EnvKind, map: GridMap, config: GridConfig) -> Result<Self> {
        let noise = clipped_normal_atoms(config.noise.scale, config.noise.bound, config.noise.atoms)?;
        let noisy_reward = noise.map_values(|d| config.step_reward + d);

        let mut cell_state = vec![None; map.rows * map.cols];
        let mut state_cell = Vec::new();
        for (idx, cell) in map.cells.iter().enumerate() {
            if *cell != Cell::Wall {
                cell_state[idx] = Some(state_cell.len());
                state_cell.push(idx);
            }
        }
        let n_states = state_cell.len();
        let n_actions = Action::ALL.len();

        let moved = |row: usize, col: usize, action: Action| -> usize {
            let (dr, dc) = action.delta();
            let (nr, nc) = (row as isize + dr, col as isize + dc);
            if nr < 0 || nc < 0 || nr as usize >= map.rows || nc as usize >= map.cols {
                return row * map.cols + col;
            }
            let idx = nr as usize * map.cols + nc as usize;
            if map.cells[idx] == Cell::Wall {
                row * map.cols + col
            } else {
                idx
            }
        };
        let reward_for = |cell_idx: usize| -> DiscreteDistribution {
            match map.cells[cell_idx] {
                Cell::Goal => DiscreteDistribution::point(config.goal_reward),
                Cell::Cliff => DiscreteDistribution::point(config.cliff_reward),
                Cell::Noisy => noisy_reward.clone(),
                _ => DiscreteDistribution::point(config.step_reward),
            }
        };

        let mut outcomes = Vec::with_capacity(n_states * n_actions);
        let mut terminal = Vec::new();
        for (s, &cell_idx) in state_cell.iter().enumerate() {
            let (row, col) = (cell_idx / map.cols, cell_idx % map.cols);
            if map.cells[cell_idx].is_terminal() {
                terminal.push(s);
            }
            for action in Action::ALL {
                if map.cells[cell_idx].is_terminal() {
                    outcomes.push(vec![Outcome {
                        next_state: s,
                        prob: 1.0,
                        reward: DiscreteDistribution::point(0.0),
                    }]);
                    continue;
                }
                let intended = moved(row, col, action);
                let slip = config
                    .slips
                    .iter()
                    .find(|z| action.is_lateral() && z.contains(row, col))
                    .map(|z| z.prob)
                    .unwrap_or(0.0);
                let mut branches: Vec<(usize, f64)> = vec![(intended, 1.0 - slip)];
                if slip > 0.0 {
                    let slid = moved(row, col, Action::Down);
                    match branches.iter_mut().find(|b| b.0 == slid) {
                        Some(b) => b.1 += slip,
                        None => branches.push((slid, slip)),
                    }
                }
                outcomes.push(
                    branches
                        .into_iter()
                        .filter(|b| b.1 > 0.0)
                        .map(|(idx, prob)| Outcome {
                            next_state: cell_state[idx].unwrap(),
                            prob,
                            reward: reward_for(idx),
                        })
                        .collect(),
                );
            }
        }
        let (sr, sc) = map.start();
        let start = cell_state[sr * map.cols + sc].unwrap();
        let mdp = TabularMdp::new(n_states, n_actions, outcomes, config.gamma, start, &terminal)?;
        Ok(Self {
            kind,
            map,
            config,
            mdp,
            state_cell,
            cell_state,
        })
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn map(&self) -> &GridMap {
        &self.map
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn into_mdp(self) -> TabularMdp {
        self.mdp
    }

    pub fn state_at(&self, row: usize, col: usize) -> Option<usize> {
        if row >= self.map.rows || col >= self.map.cols {
            return None;
        }
        self.cell_state[row * self.map.cols + col]
    }

    pub fn position(&self, state: usize) -> (usize, usize) {
        let idx = self.state_cell[state];
        (idx / self.map.cols, idx % self.map.cols)
    }

    pub fn cell(&self, state: usize) -> Cell {
        self.map.cells[self.state_cell[state]]
    }

    pub fn is_goal(&self, state: usize) -> bool {
        self.cell(state) == Cell::Goal
    }

    /// Cells where at least one action is a gamble: noisy cells and slip cells.
    pub fn is_risky(&self, state: usize) -> bool {
        let (row, col) = self.position(state);
        self.cell(state) == Cell::Noisy || self.config.slips.iter().any(|z| z.contains(row, col))
    }
}

/// The maze with `noise_atoms` support points on the noisy reward.
pub fn build_maze(noise_atoms: usize) -> Result<GridWorld> {
    GridWorld::new(EnvKind::Maze, MAZE_MAP.parse()?, GridConfig::maze(noise_atoms))
}

pub fn build_cliffwalk() -> Result<GridWorld> {
    GridWorld::new(EnvKind::Cliffwalk, CLIFFWALK_MAP.parse()?, GridConfig::cliffwalk())
}
