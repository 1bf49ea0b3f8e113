use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dynrisk::harness::{
    default_out_root, evaluate_policy_rollouts, load_run, plot_runs, run_experiment, run_oracle, EnvironmentConfig,
    PlotMetric, RunConfig,
};
use dynrisk::mdp::{EnvKind, GridWorld, DEFAULT_EPISODE_CAP};
use dynrisk::{Error, Result, RiskKind, RiskSpec, SoftmaxPolicyTable};

#[derive(Parser, Debug)]
#[command(name = "dynrisk", version, about = "Dynamic-risk tabular RL: training, exact oracles, evaluation, plots")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one config over its seeds and write metrics CSVs and summary.json.
    Train(TrainArgs),
    /// Solve the exact optimal risk-sensitive values of an environment.
    Oracle(OracleArgs),
    /// Roll out a stored policy and report its metrics.
    Evaluate(EvaluateArgs),
    /// Render learning curves from run directories as SVG.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run a single seed.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Seed list: `0,3,7` or a half-open range `0..10`.
    #[arg(long)]
    seeds: Option<String>,
    /// Output directory (default: $DYNRISK_OUT/<config name>).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// `key.path=value` applied to the config before validation; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct EnvArgs {
    /// Take the environment from a run config.
    #[arg(long, conflicts_with_all = ["env", "map"])]
    config: Option<PathBuf>,
    /// maze, cliffwalk, or grid (with --map).
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    map: Option<PathBuf>,
}

impl EnvArgs {
    fn build(&self) -> Result<GridWorld> {
        if let Some(path) = &self.config {
            return RunConfig::load(path, &[])?.build_environment();
        }
        let name = self
            .env
            .as_deref()
            .ok_or_else(|| Error::Usage("one of --env or --config is required".into()))?;
        let kind: EnvKind = name.parse()?;
        let mut env = EnvironmentConfig::named(kind);
        env.map_file = self.map.clone();
        env.build(None)
    }

    fn label(&self) -> String {
        match (&self.config, &self.env) {
            (Some(p), _) => p.file_stem().map_or("config".into(), |s| s.to_string_lossy().into_owned()),
            (None, Some(e)) => e.to_ascii_lowercase(),
            (None, None) => "env".into(),
        }
    }
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[command(flatten)]
    env: EnvArgs,
    /// expectile, cvar, or mean.
    #[arg(long, default_value = "expectile")]
    risk: String,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Also evaluate this policy (logit CSV) exactly.
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long, default_value_t = dynrisk::exact::DEFAULT_TOL)]
    tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    env: EnvArgs,
    /// Policy logits CSV (`state,action,logit`).
    #[arg(long)]
    policy: PathBuf,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    #[arg(long, default_value_t = DEFAULT_EPISODE_CAP)]
    episode_cap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.2)]
    cvar_alpha: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MetricArg {
    RiskAverseRate,
    MeanReturn,
    EmpiricalCvar,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// Run directories holding metrics_<seed>.csv files.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "risk-averse-rate")]
    metric: MetricArg,
    /// Output SVG (default: <first run>/<metric>.svg).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::Usage(format!("cannot parse seed list `{text}`"));
    if let Some((lo, hi)) = text.split_once("..") {
        let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
        return Ok((lo..hi).collect());
    }
    text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

fn train(args: &TrainArgs) -> Result<bool> {
    let mut cfg = RunConfig::load(&args.config, &args.overrides)?;
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    } else if let Some(list) = &args.seeds {
        cfg.seeds = parse_seeds(list)?;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    let out = args.out.clone().or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| {
        default_out_root().join(cfg.name.clone().unwrap_or_else(|| "run".into()))
    });
    let report = run_experiment(&cfg, Some(&out))?;
    let s = &report.summary;
    if let Some(last) = s.final_checkpoint() {
        println!(
            "{} on {} ({} seeds) step {}: risk-averse rate {:.3} ± {:.3}, mean return {:.2} ± {:.2}, empirical CVaR {:.2}",
            s.algorithm,
            s.environment,
            s.seeds.len(),
            last.step,
            last.risk_averse_rate.mean,
            last.risk_averse_rate.stderr,
            last.mean_return.mean,
            last.mean_return.stderr,
            last.empirical_cvar.mean,
        );
    }
    for f in &s.failed {
        eprintln!("seed {} failed: {}", f.seed, f.error);
    }
    println!("wrote {}", out.display());
    Ok(s.failed.is_empty())
}

fn oracle(args: &OracleArgs) -> Result<()> {
    let world = args.env.build()?;
    let kind: RiskKind = args.risk.parse().map_err(|e: Error| Error::Usage(e.to_string()))?;
    let spec = RiskSpec::new(kind, args.alpha).map_err(|e| Error::Usage(e.to_string()))?;
    let policy = args.policy.as_deref().map(SoftmaxPolicyTable::read_csv).transpose()?;
    let out = args.out.clone().unwrap_or_else(|| {
        default_out_root().join(format!("oracle-{}-{}-{}", args.env.label(), kind, spec.alpha()))
    });
    let report = run_oracle(&world, spec, args.tol, policy.as_ref(), Some(&out))?;
    let start = world.mdp().initial_state();
    println!(
        "{kind} α={}: V*(start) = {:.6}, greedy path {:?} ({} steps)",
        spec.alpha(),
        report.optimal.v[start],
        report.greedy_class,
        report.nominal.transitions.len()
    );
    if let Some(pv) = &report.policy_values {
        println!("policy value at start: {:.6}", pv.v[start]);
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let world = args.env.build()?;
    let policy = SoftmaxPolicyTable::read_csv(&args.policy)?;
    let mdp = world.mdp();
    if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
        return Err(Error::Usage("policy table does not match the environment".into()));
    }
    let m = evaluate_policy_rollouts(&world, &policy, args.episodes, args.episode_cap, args.cvar_alpha, args.seed)?;
    let neutral = m.rate_of(dynrisk::harness::TrajectoryClass::RiskNeutral);
    println!(
        "episodes {}: mean return {:.3}, empirical {}-CVaR {:.3}, risk-averse rate {:.3}, risk-neutral rate {:.3}",
        args.episodes, m.mean_return, args.cvar_alpha, m.empirical_cvar, m.risk_averse_rate, neutral
    );
    Ok(())
}

fn plot(args: &PlotArgs) -> Result<()> {
    let metric = match args.metric {
        MetricArg::RiskAverseRate => PlotMetric::RiskAverseRate,
        MetricArg::MeanReturn => PlotMetric::MeanReturn,
        MetricArg::EmpiricalCvar => PlotMetric::EmpiricalCvar,
    };
    let runs = args
        .runs
        .iter()
        .map(|dir| Ok((label_of(dir), load_run(dir)?)))
        .collect::<Result<Vec<_>>>()?;
    let out = args.out.clone().unwrap_or_else(|| {
        let name = match args.metric {
            MetricArg::RiskAverseRate => "risk_averse_rate.svg",
            MetricArg::MeanReturn => "mean_return.svg",
            MetricArg::EmpiricalCvar => "empirical_cvar.svg",
        };
        args.runs[0].join(name)
    });
    plot_runs(&runs, metric, &out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn label_of(dir: &Path) -> String {
    dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Train(a) => train(a).map(|ok| if ok { 0 } else { 2 }),
        Command::Oracle(a) => oracle(a).map(|_| 0),
        Command::Evaluate(a) => evaluate(a).map(|_| 0),
        Command::Plot(a) => plot(a).map(|_| 0),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
