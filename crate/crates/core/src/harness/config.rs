use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::AgentConfig;
use crate::error::{Error, Result};
use crate::mdp::{build_cliffwalk, build_maze, EnvKind, GridConfig, GridMap, GridWorld, DEFAULT_EPISODE_CAP};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub kind: EnvKind,
    /// Map file for `kind = "grid"`.
    #[serde(default)]
    pub map_file: Option<PathBuf>,
    /// Dynamics for `kind = "grid"`; defaults to the maze settings.
    #[serde(default)]
    pub grid: Option<GridConfig>,
    /// Support size of the discretized maze noise.
    #[serde(default = "default_noise_atoms")]
    pub noise_atoms: usize,
}

fn default_noise_atoms() -> usize {
    21
}

impl EnvironmentConfig {
    pub fn named(kind: EnvKind) -> Self {
        Self {
            kind,
            map_file: None,
            grid: None,
            noise_atoms: default_noise_atoms(),
        }
    }

    /// Builds the gridworld; relative map paths resolve against `base`.
    pub fn build(&self, base: Option<&Path>) -> Result<GridWorld> {
        match self.kind {
            EnvKind::Maze => build_maze(self.noise_atoms),
            EnvKind::Cliffwalk => build_cliffwalk(),
            EnvKind::Grid => {
                let rel = self
                    .map_file
                    .as_ref()
                    .ok_or_else(|| Error::Config("environment kind `grid` requires map_file".into()))?;
                let path = match base {
                    Some(b) if rel.is_relative() => b.join(rel),
                    _ => rel.clone(),
                };
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let map: GridMap = text.parse()?;
                let config = self.grid.clone().unwrap_or_else(|| GridConfig::maze(self.noise_atoms));
                GridWorld::new(EnvKind::Grid, map, config)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Episodes sampled at each checkpoint.
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    /// Environment steps between checkpoints.
    #[serde(default = "default_cadence")]
    pub cadence: usize,
    /// Level of the empirical CVaR of returns.
    #[serde(default = "default_cvar_alpha")]
    pub cvar_alpha: f64,
    #[serde(default = "default_episode_cap")]
    pub episode_cap: usize,
}

fn default_episodes() -> usize {
    10
}
fn default_cadence() -> usize {
    1000
}
fn default_cvar_alpha() -> f64 {
    0.2
}
fn default_episode_cap() -> usize {
    DEFAULT_EPISODE_CAP
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            episodes: default_episodes(),
            cadence: default_cadence(),
            cvar_alpha: default_cvar_alpha(),
            episode_cap: default_episode_cap(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Label used for the default output directory.
    #[serde(default)]
    pub name: Option<String>,
    pub environment: EnvironmentConfig,
    pub agent: AgentConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Directory of the config file, for resolving relative map paths.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

fn default_workers() -> usize {
    1
}

impl RunConfig {
    pub fn new(environment: EnvironmentConfig, agent: AgentConfig) -> Self {
        Self {
            name: None,
            environment,
            agent,
            evaluation: EvaluationConfig::default(),
            seeds: default_seeds(),
            out_dir: None,
            workers: default_workers(),
            base_dir: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parses `text`, applying `key.path=value` overrides before validation.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: RunConfig = doc.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_with_overrides(&text, overrides)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        if cfg.name.is_none() {
            cfg.name = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list must not be empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("seed list contains duplicates".into()));
        }
        let e = &self.evaluation;
        if e.cadence == 0 || e.episodes == 0 || e.episode_cap == 0 {
            return Err(Error::Config("evaluation cadence, episodes and episode_cap must be positive".into()));
        }
        if !(e.cvar_alpha > 0.0 && e.cvar_alpha < 1.0) {
            return Err(Error::Config(format!("cvar_alpha must lie in (0, 1), got {}", e.cvar_alpha)));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be positive".into()));
        }
        if self.environment.kind == EnvKind::Grid && self.environment.map_file.is_none() {
            return Err(Error::Config("environment kind `grid` requires map_file".into()));
        }
        self.agent.validate()
    }

    pub fn build_environment(&self) -> Result<GridWorld> {
        self.environment.build(self.base_dir.as_deref())
    }
}

/// Sets `a.b.c = value` in `doc`. The value is read as a TOML literal when
/// it parses as one and as a bare string otherwise.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').map(str::trim).collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override key `{path}` is malformed")));
    }
    let value = parse_literal(raw.trim());
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut table = doc;
    for key in parents {
        let entry = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override path `{path}` crosses non-table key `{key}`")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
