//! Experiment drivers: single runs, penetration by density sweeps,
//! dynamic-demand flow studies and curriculum training.
//!
//! Every driver is described by a [`Job`]. A job is written into a
//! [`RunManifest`] before any simulation starts, and [`execute`] on the same
//! job reproduces the same output files byte for byte.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::config::{ControllerMode, ScenarioConfig};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::learner::{load_policy, Curriculum, CurriculumConfig, Learner, LearnerConfig, ReplayBuffer, UpdateStats};
use crate::metrics::{moving_average, recovery_time, EpisodeMetrics, Recovery};
use crate::par::{self, Execution};
use crate::report::{ensure_dir, write_csv, write_json, write_run};
use crate::scenario::DemandSpec;
use crate::world::{frame_dim, initial_policy, DetectorLog, RunOutput, World};

pub const MANIFEST: &str = "manifest.json";

/// Binning of the dynamic-demand flow series, s.
pub const FLOW_BIN: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Job {
    Run {
        config: ScenarioConfig,
        checkpoint: Option<PathBuf>,
        trace: bool,
    },
    Sweep {
        base: ScenarioConfig,
        grid: SweepGrid,
        seeds: Vec<u64>,
        checkpoint: Option<PathBuf>,
    },
    DynamicDemand {
        base: ScenarioConfig,
        controllers: Vec<ControllerMode>,
        seeds: Vec<u64>,
        checkpoint: Option<PathBuf>,
    },
    Train {
        base: ScenarioConfig,
        train: TrainConfig,
    },
}

impl Job {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            Job::Run { config, .. } => vec![config.seed],
            Job::Sweep { seeds, .. } | Job::DynamicDemand { seeds, .. } => seeds.clone(),
            Job::Train { base, .. } => vec![base.seed],
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Job::Run { .. } => "run",
            Job::Sweep { .. } => "sweep",
            Job::DynamicDemand { .. } => "dynamic_demand",
            Job::Train { .. } => "train",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub job: Job,
    pub seeds: Vec<u64>,
    pub code_version: String,
    /// Unix seconds.
    pub started: f64,
    pub finished: Option<f64>,
    /// `ok` or the error that stopped the job.
    pub status: Option<String>,
    /// Paths relative to the output directory.
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(job: Job) -> Self {
        Self {
            seeds: job.seeds(),
            job,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            started: unix_now(),
            finished: None,
            status: None,
            outputs: Vec::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: RunManifest = serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        Ok(m)
    }
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

/// Writes the manifest, executes the job and records the outcome.
pub fn launch(job: Job, out: &Path, threads: usize) -> Result<RunManifest> {
    ensure_dir(out)?;
    let path = out.join(MANIFEST);
    let mut manifest = RunManifest::new(job);
    write_json(&path, &manifest)?;
    let result = execute(&manifest.job, out, threads);
    manifest.finished = Some(unix_now());
    match &result {
        Ok(paths) => {
            manifest.status = Some("ok".into());
            manifest.outputs = paths
                .iter()
                .map(|p| p.strip_prefix(out).unwrap_or(p).to_path_buf())
                .collect();
        }
        Err(e) => manifest.status = Some(e.to_string()),
    }
    write_json(&path, &manifest)?;
    result.map(|_| manifest)
}

/// Re-runs the job recorded in `manifest` into `out`.
pub fn replay(manifest: &Path, out: &Path, threads: usize) -> Result<RunManifest> {
    launch(RunManifest::load(manifest)?.job, out, threads)
}

/// Runs `job` into `out` and returns the files written. `threads` bounds
/// the worker pool; 1 runs everything on the calling thread.
pub fn execute(job: &Job, out: &Path, threads: usize) -> Result<Vec<PathBuf>> {
    ensure_dir(out)?;
    let exec = if threads == 1 { Execution::Sequential } else { Execution::Parallel };
    par::with_threads(threads, || match job {
        Job::Run { config, checkpoint, trace } => {
            let policy = policy_for(config, checkpoint.as_deref())?;
            let res = simulate(config.clone(), policy, *trace, exec)?;
            write_run(out, config, &res)
        }
        Job::Sweep { base, grid, seeds, checkpoint } => sweep(base, grid, seeds, checkpoint.as_deref(), exec, out),
        Job::DynamicDemand {
            base,
            controllers,
            seeds,
            checkpoint,
        } => dynamic_demand(base, controllers, seeds, checkpoint.as_deref(), exec, out),
        Job::Train { base, train: t } => train(base, t, exec, out),
    })
    .map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", job.name())),
        other => other,
    })
}

/// Policy for `cfg`: the checkpoint if given, a fresh policy for learning
/// controllers otherwise, nothing for controllers that do not use one.
pub fn policy_for(cfg: &ScenarioConfig, checkpoint: Option<&Path>) -> Result<Option<EncoderParams>> {
    if !cfg.controller.uses_policy() {
        return Ok(None);
    }
    let input = frame_dim(cfg);
    Ok(Some(match checkpoint {
        Some(p) => load_policy(p, input)?,
        None => initial_policy(cfg, LearnerConfig::default().hidden),
    }))
}

pub fn simulate(cfg: ScenarioConfig, policy: Option<EncoderParams>, trace: bool, exec: Execution) -> Result<RunOutput> {
    let mut w = World::new(cfg, policy)?;
    w.exec = exec;
    w.tracing = trace;
    w.run()?;
    Ok(w.finish())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    /// Total demand levels, veh/h.
    pub densities: Vec<f64>,
    pub penetrations: Vec<f64>,
    pub controllers: Vec<ControllerMode>,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.densities.is_empty() || self.penetrations.is_empty() || self.controllers.is_empty() {
            return Err(Error::config("sweep grids must be nonempty"));
        }
        Ok(())
    }
}

/// One (density, penetration, controller, seed) run of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub density: f64,
    pub penetration: f64,
    pub controller: ControllerMode,
    pub seed: u64,
    /// `ok` or the error message of a failed run.
    pub status: String,
    pub merge_attempts: Option<usize>,
    pub conflicted_merges: Option<usize>,
    pub collision_rate: Option<f64>,
    pub mean_travel_time: Option<f64>,
    pub mean_abs_jerk: Option<f64>,
    pub throughput: Option<f64>,
    pub min_ttc: Option<f64>,
    pub collisions: Option<usize>,
}

impl SweepRow {
    fn new(density: f64, penetration: f64, controller: ControllerMode, seed: u64, res: Result<EpisodeMetrics>) -> Self {
        let mut row = Self {
            density,
            penetration,
            controller,
            seed,
            status: "ok".into(),
            merge_attempts: None,
            conflicted_merges: None,
            collision_rate: None,
            mean_travel_time: None,
            mean_abs_jerk: None,
            throughput: None,
            min_ttc: None,
            collisions: None,
        };
        match res {
            Ok(m) => {
                row.merge_attempts = Some(m.merge_attempts);
                row.conflicted_merges = Some(m.conflicted_merges);
                row.collision_rate = m.collision_rate;
                row.mean_travel_time = m.mean_travel_time;
                row.mean_abs_jerk = m.mean_abs_jerk;
                row.throughput = Some(m.throughput);
                row.min_ttc = m.min_ttc;
                row.collisions = Some(m.collisions);
            }
            Err(e) => row.status = e.to_string(),
        }
        row
    }
}

/// Mean and 95% confidence half-width of one metric within a cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellStat {
    pub n: usize,
    pub mean: Option<f64>,
    pub half_width: Option<f64>,
}

impl CellStat {
    /// Student-t interval over the present values; the half-width needs two.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { n, mean: None, half_width: None };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let half_width = (n >= 2).then(|| {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
                .expect("degrees of freedom are positive")
                .inverse_cdf(0.975);
            t * (var / n as f64).sqrt()
        });
        Self {
            n,
            mean: Some(mean),
            half_width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub density: f64,
    pub penetration: f64,
    pub controller: ControllerMode,
    pub runs: usize,
    pub failed: usize,
    pub collision_rate: CellStat,
    pub mean_travel_time: CellStat,
    pub mean_abs_jerk: CellStat,
    pub throughput: CellStat,
}

/// Flat form of [`SweepCell`] for the cell table.
#[derive(Debug, Clone, Serialize)]
struct CellRecord {
    density: f64,
    penetration: f64,
    controller: ControllerMode,
    runs: usize,
    failed: usize,
    collision_rate_n: usize,
    collision_rate_mean: Option<f64>,
    collision_rate_hw: Option<f64>,
    travel_time_n: usize,
    travel_time_mean: Option<f64>,
    travel_time_hw: Option<f64>,
    jerk_n: usize,
    jerk_mean: Option<f64>,
    jerk_hw: Option<f64>,
    throughput_n: usize,
    throughput_mean: Option<f64>,
    throughput_hw: Option<f64>,
}

impl From<&SweepCell> for CellRecord {
    fn from(c: &SweepCell) -> Self {
        Self {
            density: c.density,
            penetration: c.penetration,
            controller: c.controller,
            runs: c.runs,
            failed: c.failed,
            collision_rate_n: c.collision_rate.n,
            collision_rate_mean: c.collision_rate.mean,
            collision_rate_hw: c.collision_rate.half_width,
            travel_time_n: c.mean_travel_time.n,
            travel_time_mean: c.mean_travel_time.mean,
            travel_time_hw: c.mean_travel_time.half_width,
            jerk_n: c.mean_abs_jerk.n,
            jerk_mean: c.mean_abs_jerk.mean,
            jerk_hw: c.mean_abs_jerk.half_width,
            throughput_n: c.throughput.n,
            throughput_mean: c.throughput.mean,
            throughput_hw: c.throughput.half_width,
        }
    }
}

/// Groups rows by cell in first-seen order and summarises each metric.
pub fn aggregate(rows: &[SweepRow]) -> Vec<SweepCell> {
    let mut keys: Vec<(f64, f64, ControllerMode)> = Vec::new();
    for r in rows {
        let k = (r.density, r.penetration, r.controller);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(density, penetration, controller)| {
            let cell: Vec<&SweepRow> = rows
                .iter()
                .filter(|r| (r.density, r.penetration, r.controller) == (density, penetration, controller))
                .collect();
            let stat = |f: fn(&SweepRow) -> Option<f64>| {
                let v: Vec<f64> = cell.iter().filter_map(|r| f(r)).collect();
                CellStat::of(&v)
            };
            SweepCell {
                density,
                penetration,
                controller,
                runs: cell.len(),
                failed: cell.iter().filter(|r| r.status != "ok").count(),
                collision_rate: stat(|r| r.collision_rate),
                mean_travel_time: stat(|r| r.mean_travel_time),
                mean_abs_jerk: stat(|r| r.mean_abs_jerk),
                throughput: stat(|r| r.throughput),
            }
        })
        .collect()
}

fn with_level(base: &ScenarioConfig, level: f64) -> DemandSpec {
    let split = match base.demand {
        DemandSpec::Fixed { split, .. } => split,
        DemandSpec::Profile { .. } => crate::scenario::DEFAULT_SPLIT,
    };
    DemandSpec::Fixed { level, split }
}

/// Runs every grid cell for every seed. Failed runs become rows with the
/// error as status; the sweep itself only fails on I/O.
pub fn sweep_rows(
    base: &ScenarioConfig,
    grid: &SweepGrid,
    seeds: &[u64],
    checkpoint: Option<&Path>,
    exec: Execution,
) -> Result<Vec<SweepRow>> {
    grid.validate()?;
    let mut cells = Vec::new();
    for &d in &grid.densities {
        for &p in &grid.penetrations {
            for &c in &grid.controllers {
                for &s in seeds {
                    cells.push((d, p, c, s));
                }
            }
        }
    }
    Ok(par::map(exec, &cells, |&(d, p, c, s)| {
        let cfg = ScenarioConfig {
            seed: s,
            penetration: p,
            controller: c,
            demand: with_level(base, d),
            ..base.clone()
        };
        let res = cfg
            .validate()
            .and_then(|_| policy_for(&cfg, checkpoint))
            .and_then(|pol| simulate(cfg, pol, false, Execution::Sequential))
            .map(|o| o.metrics);
        SweepRow::new(d, p, c, s, res)
    }))
}

fn sweep(
    base: &ScenarioConfig,
    grid: &SweepGrid,
    seeds: &[u64],
    checkpoint: Option<&Path>,
    exec: Execution,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let rows = sweep_rows(base, grid, seeds, checkpoint, exec)?;
    let cells: Vec<CellRecord> = aggregate(&rows).iter().map(CellRecord::from).collect();
    let (rp, cp) = (out.join("sweep_rows.csv"), out.join("sweep_cells.csv"));
    write_csv(&rp, &rows)?;
    write_csv(&cp, &cells)?;
    Ok(vec![rp, cp])
}

/// One point of a flow series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowPoint {
    /// End of the bin, s.
    pub t: f64,
    pub flow: f64,
    /// Trailing moving average of `flow`.
    pub smoothed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSeries {
    pub bottleneck: Vec<FlowPoint>,
    pub ramp: Vec<FlowPoint>,
    pub mainline: Vec<FlowPoint>,
}

/// Flow in veh/h per `bin` seconds over `[0, horizon)`, summed over the
/// given detectors.
pub fn flow_series(detectors: &[&DetectorLog], bin: f64, horizon: f64, smoothing: f64) -> Vec<FlowPoint> {
    let n = (horizon / bin).ceil().max(0.0) as usize;
    let mut counts = vec![0usize; n];
    for d in detectors {
        for c in &d.crossings {
            if c.t >= 0.0 && c.t < horizon {
                counts[((c.t / bin) as usize).min(n - 1)] += 1;
            }
        }
    }
    let flow: Vec<f64> = counts.iter().map(|&k| k as f64 * 3600.0 / bin).collect();
    let window = (smoothing / bin).round().max(1.0) as usize;
    let smooth = moving_average(&flow, window);
    flow.iter()
        .zip(smooth)
        .enumerate()
        .map(|(i, (&f, s))| FlowPoint {
            t: (i + 1) as f64 * bin,
            flow: f,
            smoothed: s,
        })
        .collect()
}

/// Bottleneck, ramp inflow and upstream mainline series of one run.
pub fn run_flows(cfg: &ScenarioConfig, out: &RunOutput) -> FlowSeries {
    let net = crate::scenario::build_network(&cfg.network).expect("validated network");
    let at = |x: f64| -> Vec<&DetectorLog> {
        out.detectors
            .iter()
            .filter(|d| d.lane != crate::dynamics::Lane::Ramp && d.position == x)
            .collect()
    };
    let pos = &net.detector_positions;
    let bottleneck = pos[net.bottleneck_detector()];
    let upstream = pos.iter().copied().rfind(|&x| x < net.merge_zone_start).unwrap_or(pos[0]);
    let ramp: Vec<&DetectorLog> = out.detectors.iter().filter(|d| d.lane == crate::dynamics::Lane::Ramp).collect();
    let series = |d: Vec<&DetectorLog>| flow_series(&d, FLOW_BIN, cfg.horizon(), cfg.metrics.smoothing_window);
    FlowSeries {
        bottleneck: series(at(bottleneck)),
        ramp: series(ramp),
        mainline: series(at(upstream)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
struct RecoveryRow {
    controller: ControllerMode,
    seed: u64,
    shift_at: f64,
    from: f64,
    to: f64,
    recovered: bool,
    /// Seconds to recovery, or the horizon searched when not recovered.
    seconds: f64,
    label: Option<&'static str>,
}

/// Recovery of the smoothed bottleneck flow after the configured
/// penetration shift, if any.
pub fn shift_recovery(cfg: &ScenarioConfig, flows: &FlowSeries) -> Result<Option<Recovery>> {
    let Some(shift) = cfg.penetration_shift else {
        return Ok(None);
    };
    let trace: Vec<(f64, f64)> = flows.bottleneck.iter().map(|p| (p.t, p.smoothed)).collect();
    let horizon = cfg.horizon() - shift.at;
    recovery_time(&trace, shift.at, cfg.metrics.baseline_window, horizon).map(Some)
}

fn dynamic_demand(
    base: &ScenarioConfig,
    controllers: &[ControllerMode],
    seeds: &[u64],
    checkpoint: Option<&Path>,
    exec: Execution,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    if controllers.is_empty() || seeds.is_empty() {
        return Err(Error::config("dynamic demand needs at least one controller and one seed"));
    }
    let mut jobs = Vec::new();
    for &c in controllers {
        for &s in seeds {
            jobs.push(ScenarioConfig {
                seed: s,
                controller: c,
                ..base.clone()
            });
        }
    }
    let results = par::map(exec, &jobs, |cfg| -> Result<(FlowSeries, Option<Recovery>)> {
        cfg.validate()?;
        let pol = policy_for(cfg, checkpoint)?;
        let o = simulate(cfg.clone(), pol, false, Execution::Sequential)?;
        let flows = run_flows(cfg, &o);
        let rec = shift_recovery(cfg, &flows)?;
        Ok((flows, rec))
    });
    let mut paths = Vec::new();
    let mut recov = Vec::new();
    for (cfg, res) in jobs.iter().zip(results) {
        let (flows, rec) = res?;
        let dir = out.join(cfg.controller.as_str()).join(format!("seed-{}", cfg.seed));
        ensure_dir(&dir)?;
        for (name, s) in [
            ("bottleneck.csv", &flows.bottleneck),
            ("ramp.csv", &flows.ramp),
            ("mainline.csv", &flows.mainline),
        ] {
            let p = dir.join(name);
            write_csv(&p, s)?;
            paths.push(p);
        }
        if let (Some(r), Some(shift)) = (rec, cfg.penetration_shift) {
            let (recovered, seconds, label) = match r {
                Recovery::Recovered { seconds } => (true, seconds, None),
                Recovery::NotRecovered { horizon } => (false, horizon, Some("> horizon")),
            };
            recov.push(RecoveryRow {
                controller: cfg.controller,
                seed: cfg.seed,
                shift_at: shift.at,
                from: cfg.penetration,
                to: shift.to,
                recovered,
                seconds,
                label,
            });
        }
    }
    if !recov.is_empty() {
        let p = out.join("recovery.csv");
        write_csv(&p, &recov)?;
        paths.push(p);
    }
    Ok(paths)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub episodes: usize,
    /// Policy decisions between gradient updates.
    pub update_every: usize,
    pub learner: LearnerConfig,
    pub curriculum: CurriculumConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 10,
            update_every: 1,
            learner: LearnerConfig::default(),
            curriculum: CurriculumConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UpdateRecord {
    pub episode: usize,
    pub stage: crate::learner::CurriculumStage,
    pub t: f64,
    #[serde(flatten)]
    pub stats: UpdateStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub stage: crate::learner::CurriculumStage,
    pub seed: u64,
    pub density: f64,
    pub penetration: f64,
    pub transitions: usize,
    pub mean_reward: Option<f64>,
    pub updates: u64,
    pub collision_rate: Option<f64>,
    pub mean_abs_jerk: Option<f64>,
}

/// Trained policy and the logs of a training session.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub learner: Learner,
    pub updates: Vec<UpdateRecord>,
    pub episodes: Vec<EpisodeRecord>,
}

/// Curriculum training. Episode `e` runs seed `base.seed + e`.
pub fn train_session(base: &ScenarioConfig, cfg: &TrainConfig, exec: Execution) -> Result<TrainOutcome> {
    if !base.controller.uses_policy() {
        return Err(Error::config(format!(
            "controller `{}` has no learned policy to train",
            base.controller.as_str()
        )));
    }
    if cfg.update_every == 0 {
        return Err(Error::config("train.update_every must be >= 1"));
    }
    let mut learner = Learner::new(cfg.learner, frame_dim(base), base.seed)?;
    learner.exec = exec;
    let mut curriculum = Curriculum::new(cfg.curriculum, base.seed);
    let mut buffer = ReplayBuffer::new(cfg.learner.buffer_capacity);
    let mut updates = Vec::new();
    let mut episodes = Vec::new();
    let period = ((base.cav.decision_period / base.dt).round() as u64).max(1);
    for e in 0..cfg.episodes {
        let seed = base.seed.wrapping_add(e as u64);
        let scenario = curriculum.next_scenario(base, seed);
        let stage = curriculum.stage;
        let mut w = World::new(scenario.clone(), Some(learner.policy().clone()))?;
        w.exec = exec;
        w.explore = true;
        w.record_transitions = true;
        let (mut n, mut reward_sum, mut ticks) = (0usize, 0.0, 0usize);
        while !w.is_finished() {
            w.step()?;
            if w.step_index() % period != 0 {
                continue;
            }
            for tr in w.take_transitions() {
                n += 1;
                reward_sum += tr.reward;
                buffer.push(tr);
            }
            ticks += 1;
            if ticks % cfg.update_every == 0 {
                if let Some(stats) = learner.update(&buffer)? {
                    updates.push(UpdateRecord {
                        episode: e,
                        stage,
                        t: w.time(),
                        stats,
                    });
                    w.set_policy(learner.policy().clone());
                }
            }
        }
        for tr in w.take_transitions() {
            n += 1;
            reward_sum += tr.reward;
            buffer.push(tr);
        }
        let metrics = w.finish().metrics;
        let mean_reward = (n > 0).then(|| reward_sum / n as f64);
        let density = match scenario.demand {
            DemandSpec::Fixed { level, .. } => level,
            DemandSpec::Profile { .. } => f64::NAN,
        };
        episodes.push(EpisodeRecord {
            episode: e,
            stage,
            seed,
            density,
            penetration: scenario.penetration,
            transitions: n,
            mean_reward,
            updates: learner.updates(),
            collision_rate: metrics.collision_rate,
            mean_abs_jerk: metrics.mean_abs_jerk,
        });
        curriculum.record(mean_reward.unwrap_or(0.0));
    }
    Ok(TrainOutcome {
        learner,
        updates,
        episodes,
    })
}

fn train(base: &ScenarioConfig, cfg: &TrainConfig, exec: Execution, out: &Path) -> Result<Vec<PathBuf>> {
    let outcome = train_session(base, cfg, exec)?;
    let ck = out.join("checkpoint.json");
    outcome.learner.save(&ck)?;
    let log = out.join("train_log.jsonl");
    let mut text = String::new();
    for r in &outcome.updates {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    std::fs::write(&log, text).map_err(|e| Error::io(&log, e))?;
    let eps = out.join("episodes.csv");
    write_csv(&eps, &outcome.episodes)?;
    Ok(vec![ck, log, eps])
}
