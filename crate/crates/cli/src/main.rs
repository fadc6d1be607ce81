//! Batch front end: single runs, sweeps, dynamic-demand studies, training
//! and manifest replay. Exit status 0 on success, 1 on configuration
//! errors, 2 on simulation contract violations.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use rampsim::config::PenetrationShift;
use rampsim::experiment::{launch, replay, Job, RunManifest, SweepGrid, TrainConfig};
use rampsim::report::RunSummary;
use rampsim::scenario::{DemandPoint, DemandSpec, DEFAULT_SPLIT};
use rampsim::{ControllerMode, Error, Result, ScenarioConfig};

#[derive(Parser)]
#[command(name = "rampsim", version, about = "On-ramp merge microsimulation with trust-gated CAV control")]
struct Cli {
    /// Output root used when --out is not given.
    #[arg(long, global = true, env = "RAMPSIM_OUT", default_value = "rampsim-out")]
    out_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One simulation run.
    Run(RunArgs),
    /// Density x penetration x controller grid over several seeds.
    Sweep(SweepArgs),
    /// Time-varying demand with flow series and recovery times.
    DynamicDemand(DynamicArgs),
    /// Curriculum training of the learned policy.
    Train(TrainArgs),
    /// Re-run the job recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct Common {
    /// Built-in scenario (`base`, `paper`) or a TOML file.
    #[arg(long, default_value = "base")]
    scenario: String,
    /// Measured duration after warmup, s.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    warmup: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trained parameters for learning controllers.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Worker threads; 1 runs sequentially, 0 uses every core.
    #[arg(long, default_value_t = 0)]
    parallel: usize,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
    /// Total demand, veh/h.
    #[arg(long)]
    demand: Option<f64>,
    /// CAV penetration in [0, 1].
    #[arg(long)]
    cav: Option<f64>,
    #[arg(long)]
    controller: Option<String>,
    /// Also write trajectory, trust, reward and game traces.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Seed list, `a..b` (exclusive) or comma separated.
    #[arg(long, default_value = "0..10")]
    seeds: String,
    /// Comma-separated total demand levels, veh/h.
    #[arg(long, default_value = "300,600,900")]
    demand: String,
    /// Comma-separated penetrations.
    #[arg(long, default_value = "0,0.3,0.7,1")]
    cav: String,
    /// Comma-separated controllers.
    #[arg(long, default_value = "rule")]
    controller: String,
}

#[derive(Args)]
struct DynamicArgs {
    #[command(flatten)]
    common: Common,
    /// `peak` or a TOML file with `[[points]]` entries of t, mainline, ramp.
    #[arg(long, default_value = "peak")]
    profile: String,
    #[arg(long, default_value = "0")]
    seeds: String,
    #[arg(long, default_value = "rule,trust_full")]
    controller: String,
    #[arg(long)]
    cav: Option<f64>,
    /// Time of a step change in penetration, s.
    #[arg(long, requires = "shift_to")]
    shift_at: Option<f64>,
    /// Penetration after the step.
    #[arg(long, requires = "shift_at")]
    shift_to: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "trust_full")]
    controller: String,
    #[arg(long)]
    episodes: Option<usize>,
    /// TOML file with learner and curriculum settings.
    #[arg(long)]
    train_config: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    manifest: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    parallel: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    points: Vec<DemandPoint>,
}

fn parse_list<T>(s: &str, what: &str, f: impl Fn(&str) -> Option<T>) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| f(p).ok_or_else(|| Error::config(format!("invalid {what} `{p}`"))))
        .collect()
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let bad = || Error::config(format!("invalid seed range `{s}`"));
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if b <= a {
            return Err(bad());
        }
        return Ok((a..b).collect());
    }
    let seeds = parse_list(s, "seed", |p| p.parse().ok())?;
    if seeds.is_empty() {
        return Err(Error::config("empty seed list"));
    }
    Ok(seeds)
}

fn parse_controllers(s: &str) -> Result<Vec<ControllerMode>> {
    s.split(',').map(|p| ControllerMode::parse(p.trim())).collect()
}

fn base_config(c: &Common) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::resolve(&c.scenario)?;
    if let Some(d) = c.duration {
        cfg.duration = d;
    }
    if let Some(w) = c.warmup {
        cfg.warmup = w;
    }
    Ok(cfg)
}

fn with_level(cfg: &mut ScenarioConfig, level: f64) {
    let split = match cfg.demand {
        DemandSpec::Fixed { split, .. } => split,
        DemandSpec::Profile { .. } => DEFAULT_SPLIT,
    };
    cfg.demand = DemandSpec::Fixed { level, split };
}

fn out_dir(root: &Path, out: &Option<PathBuf>, name: &str) -> PathBuf {
    out.clone().unwrap_or_else(|| root.join(name))
}

fn load_profile(spec: &str, horizon: f64) -> Result<DemandSpec> {
    if spec == "peak" {
        return Ok(DemandSpec::peak_profile(horizon));
    }
    let path = Path::new(spec);
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ProfileFile =
        toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    let spec = DemandSpec::Profile { points: file.points };
    spec.validate()?;
    Ok(spec)
}

fn run(cli: Cli) -> Result<()> {
    let root = cli.out_root;
    let (job, out, threads) = match cli.command {
        Command::Run(a) => {
            let mut cfg = base_config(&a.common)?;
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if let Some(d) = a.demand {
                with_level(&mut cfg, d);
            }
            if let Some(p) = a.cav {
                cfg.penetration = p;
            }
            if let Some(c) = &a.controller {
                cfg.controller = ControllerMode::parse(c)?;
            }
            cfg.validate()?;
            let out = out_dir(&root, &a.common.out, &format!("run-{}-seed{}", cfg.controller.as_str(), cfg.seed));
            let job = Job::Run {
                config: cfg,
                checkpoint: a.common.checkpoint,
                trace: a.trace,
            };
            (job, out, a.common.parallel)
        }
        Command::Sweep(a) => {
            let base = base_config(&a.common)?;
            base.validate()?;
            let grid = SweepGrid {
                densities: parse_list(&a.demand, "demand", |p| p.parse().ok())?,
                penetrations: parse_list(&a.cav, "penetration", |p| p.parse().ok())?,
                controllers: parse_controllers(&a.controller)?,
            };
            grid.validate()?;
            let job = Job::Sweep {
                base,
                grid,
                seeds: parse_seeds(&a.seeds)?,
                checkpoint: a.common.checkpoint,
            };
            (job, out_dir(&root, &a.common.out, "sweep"), a.common.parallel)
        }
        Command::DynamicDemand(a) => {
            let mut base = base_config(&a.common)?;
            base.demand = load_profile(&a.profile, base.horizon())?;
            if let Some(p) = a.cav {
                base.penetration = p;
            }
            if let (Some(at), Some(to)) = (a.shift_at, a.shift_to) {
                base.penetration_shift = Some(PenetrationShift { at, to });
            }
            base.validate()?;
            let job = Job::DynamicDemand {
                base,
                controllers: parse_controllers(&a.controller)?,
                seeds: parse_seeds(&a.seeds)?,
                checkpoint: a.common.checkpoint,
            };
            (job, out_dir(&root, &a.common.out, "dynamic-demand"), a.common.parallel)
        }
        Command::Train(a) => {
            let mut base = base_config(&a.common)?;
            if let Some(s) = a.seed {
                base.seed = s;
            }
            base.controller = ControllerMode::parse(&a.controller)?;
            base.validate()?;
            let mut train = match &a.train_config {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    toml::from_str::<TrainConfig>(&text)
                        .map_err(|e| Error::config(format!("{}: {e}", p.display())))?
                }
                None => TrainConfig::default(),
            };
            if let Some(n) = a.episodes {
                train.episodes = n;
            }
            train.learner.validate()?;
            let job = Job::Train { base, train };
            (job, out_dir(&root, &a.common.out, "train"), a.common.parallel)
        }
        Command::Replay(a) => {
            let out = out_dir(&root, &a.out, "replay");
            let m = replay(&a.manifest, &out, a.parallel)?;
            report(&m, &out);
            return Ok(());
        }
    };
    let m = launch(job, &out, threads)?;
    report(&m, &out);
    Ok(())
}

fn report(m: &RunManifest, out: &Path) {
    println!("wrote {} files to {}", m.outputs.len(), out.display());
    if let Job::Run { .. } = m.job {
        let path = out.join("summary.json");
        if let Some(s) = std::fs::read_to_string(&path)
            .ok()
            .and_then(|t| serde_json::from_str::<RunSummary>(&t).ok())
        {
            let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
            println!(
                "merges {} conflicted {} rate {}% travel {} s jerk {} m/s^3 throughput {:.0} veh/h collisions {}",
                s.metrics.merge_attempts,
                s.metrics.conflicted_merges,
                fmt(s.metrics.collision_rate),
                fmt(s.metrics.mean_travel_time),
                fmt(s.metrics.mean_abs_jerk),
                s.metrics.throughput,
                s.metrics.collisions,
            );
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
