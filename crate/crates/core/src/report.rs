//! Report files. Every table is comma-separated with a header row; the run
//! summary is one pretty-printed JSON object. Column schemas:
//!
//! * `summary.json`: scenario name, seed, controller, penetration, demand,
//!   spawned vehicle count and the [`EpisodeMetrics`] fields
//! * `detectors.csv`: `lane, position, interval_start, interval, count,
//!   flow, mean_speed, occupancy` (flow in veh/h, speed in m/s, empty speed
//!   when nothing crossed)
//! * `merges.csv`: one row per merge attempt, see [`MergeAttempt`]
//! * `trajectory.csv`: `t, id, class, lane, x, v, a`
//! * `trust.csv`: `t, observer, observed, delta, trust`
//! * `reward.csv`: `t, id, safety, comfort, efficiency, self_total, lambda,
//!   coop, total`
//! * `game.csv`: one row per game-layer decision, see [`GameAudit`]
//!
//! Field order is fixed by the record types, so files from the same inputs
//! compare byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ControllerMode, ScenarioConfig};
use crate::controller::GameAudit;
use crate::error::{Error, Result};
use crate::metrics::{detector_aggregate, EpisodeMetrics, MergeAttempt};
use crate::scenario::DemandSpec;
use crate::world::{DetectorLog, RunOutput};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub seed: u64,
    pub controller: ControllerMode,
    pub penetration: f64,
    pub demand: DemandSpec,
    pub duration: f64,
    pub warmup: f64,
    pub spawned: u64,
    pub metrics: EpisodeMetrics,
}

impl RunSummary {
    pub fn new(cfg: &ScenarioConfig, out: &RunOutput) -> Self {
        Self {
            scenario: cfg.name.clone(),
            seed: cfg.seed,
            controller: cfg.controller,
            penetration: cfg.penetration,
            demand: cfg.demand.clone(),
            duration: cfg.duration,
            warmup: cfg.warmup,
            spawned: out.spawned,
            metrics: out.metrics,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct DetectorRow {
    lane: String,
    position: f64,
    interval_start: f64,
    interval: f64,
    count: usize,
    flow: f64,
    mean_speed: Option<f64>,
    occupancy: f64,
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Interval records of every detector over the measured period.
pub fn detector_rows(cfg: &ScenarioConfig, detectors: &[DetectorLog]) -> Vec<(String, Vec<crate::metrics::DetectorRecord>)> {
    detectors
        .iter()
        .map(|d| {
            let recs = detector_aggregate(
                d.position,
                &d.crossings,
                cfg.metrics.detector_interval,
                cfg.warmup,
                cfg.horizon(),
            );
            (d.lane.label(), recs)
        })
        .collect()
}

pub fn write_detectors(path: &Path, cfg: &ScenarioConfig, detectors: &[DetectorLog]) -> Result<()> {
    let rows: Vec<DetectorRow> = detector_rows(cfg, detectors)
        .into_iter()
        .flat_map(|(lane, recs)| {
            recs.into_iter().map(move |r| DetectorRow {
                lane: lane.clone(),
                position: r.position,
                interval_start: r.interval_start,
                interval: r.interval,
                count: r.count,
                flow: r.flow,
                mean_speed: r.mean_speed,
                occupancy: r.occupancy,
            })
        })
        .collect();
    write_csv(path, &rows)
}

#[derive(Debug, Clone, Copy, Serialize)]
struct GameRow {
    t: f64,
    ego: u64,
    counterpart: Option<u64>,
    game: Option<crate::trust::GameType>,
    ego_strategy: crate::game::EgoStrategy,
    follower_strategy: Option<crate::game::FollowerStrategy>,
    payoff: f64,
    eu_change: Option<f64>,
    eu_keep: Option<f64>,
    safe: bool,
    change: bool,
}

impl From<&GameAudit> for GameRow {
    fn from(a: &GameAudit) -> Self {
        Self {
            t: a.t,
            ego: a.ego.0,
            counterpart: a.counterpart.map(|c| c.0),
            game: a.game,
            ego_strategy: a.ego_strategy,
            follower_strategy: a.follower_strategy,
            payoff: a.payoff,
            eu_change: a.eu_change,
            eu_keep: a.eu_keep,
            safe: a.safe,
            change: a.change,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
struct MergeRow {
    vehicle: u64,
    class: &'static str,
    start: f64,
    end: Option<f64>,
    merged_at: Option<f64>,
    min_ttc: Option<f64>,
    collided: bool,
    pet: Option<f64>,
}

impl From<&MergeAttempt> for MergeRow {
    fn from(m: &MergeAttempt) -> Self {
        Self {
            vehicle: m.vehicle.0,
            class: m.class.as_str(),
            start: m.start,
            end: m.end,
            merged_at: m.merged_at,
            min_ttc: m.min_ttc.is_finite().then_some(m.min_ttc),
            collided: m.collided,
            pet: m.pet,
        }
    }
}

/// Writes the summary, detector and merge tables and, when traces were
/// recorded, the trace tables. Returns the paths written.
pub fn write_run(dir: &Path, cfg: &ScenarioConfig, out: &RunOutput) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut paths = Vec::new();
    let mut put = |name: &str| {
        let p = dir.join(name);
        paths.push(p.clone());
        p
    };
    write_json(&put("summary.json"), &RunSummary::new(cfg, out))?;
    write_detectors(&put("detectors.csv"), cfg, &out.detectors)?;
    let merges: Vec<MergeRow> = out.log.merges.iter().map(MergeRow::from).collect();
    write_csv(&put("merges.csv"), &merges)?;
    let tr = &out.traces;
    if !tr.trajectory.is_empty() {
        write_csv(&put("trajectory.csv"), &tr.trajectory)?;
        write_csv(&put("trust.csv"), &tr.trust)?;
        write_csv(&put("reward.csv"), &tr.reward)?;
        let games: Vec<GameRow> = tr.game.iter().map(GameRow::from).collect();
        write_csv(&put("game.csv"), &games)?;
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::World;

    #[test]
    fn run_files_are_written_and_parse_back() {
        let cfg = ScenarioConfig {
            duration: 60.0,
            warmup: 10.0,
            seed: 2,
            ..ScenarioConfig::base()
        };
        let mut w = World::new(cfg.clone(), None).unwrap();
        w.tracing = true;
        w.run().unwrap();
        let out = w.finish();
        let dir = tempfile::tempdir().unwrap();
        let paths = write_run(dir.path(), &cfg, &out).unwrap();
        assert_eq!(paths.len(), 7);
        let text = fs::read_to_string(dir.path().join("summary.json")).unwrap();
        let back: RunSummary = serde_json::from_str(&text).unwrap();
        assert_eq!(back.metrics, out.metrics);
        let mut rdr = csv::Reader::from_path(dir.path().join("detectors.csv")).unwrap();
        let header = rdr.headers().unwrap().clone();
        assert_eq!(&header[0], "lane");
        assert_eq!(&header[5], "flow");
        // 50 s measured in 60 s bins gives one bin per detector
        assert_eq!(rdr.records().count(), out.detectors.len());
    }
}
