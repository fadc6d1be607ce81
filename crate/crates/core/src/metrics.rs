//! Surrogate safety measures, detector aggregation, episode summaries and
//! recovery time.

use serde::{Deserialize, Serialize};

use crate::dynamics::{Origin, VehicleClass, VehicleId};
use crate::error::{Error, Result};

/// Time to collision for a bumper gap closing at `closing_speed`.
pub fn ttc(gap: f64, closing_speed: f64) -> f64 {
    if closing_speed > 0.0 {
        gap.max(0.0) / closing_speed
    } else {
        f64::INFINITY
    }
}

/// Occupancy interval of one vehicle over a conflict area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Traversal {
    pub vehicle: VehicleId,
    /// Front enters the area.
    pub enter: f64,
    /// Rear clears the area.
    pub exit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PetRecord {
    pub first: VehicleId,
    pub second: VehicleId,
    pub pet: f64,
    /// Both vehicles occupied the area at once.
    pub conflict: bool,
}

/// Post-encroachment times between consecutive traversals ordered by entry.
pub fn pet(log: &[Traversal]) -> Vec<PetRecord> {
    let mut sorted = log.to_vec();
    sorted.sort_by(|a, b| a.enter.total_cmp(&b.enter).then(a.vehicle.cmp(&b.vehicle)));
    sorted
        .windows(2)
        .map(|w| {
            let raw = w[1].enter - w[0].exit;
            PetRecord {
                first: w[0].vehicle,
                second: w[1].vehicle,
                pet: raw.max(0.0),
                conflict: raw <= 0.0,
            }
        })
        .collect()
}

pub fn jerk_trace(accel: &[f64], dt: f64) -> Vec<f64> {
    accel.windows(2).map(|w| (w[1] - w[0]) / dt).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorCrossing {
    pub t: f64,
    pub speed: f64,
    pub length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorRecord {
    pub position: f64,
    pub interval_start: f64,
    pub interval: f64,
    pub count: usize,
    pub flow: f64,
    pub mean_speed: Option<f64>,
    pub occupancy: f64,
}

/// Bins time-ordered crossings into fixed intervals over `[start, end)`.
pub fn detector_aggregate(
    position: f64,
    events: &[DetectorCrossing],
    interval: f64,
    start: f64,
    end: f64,
) -> Vec<DetectorRecord> {
    let bins = ((end - start) / interval).ceil().max(0.0) as usize;
    let mut out: Vec<DetectorRecord> = (0..bins)
        .map(|b| DetectorRecord {
            position,
            interval_start: start + b as f64 * interval,
            interval,
            count: 0,
            flow: 0.0,
            mean_speed: None,
            occupancy: 0.0,
        })
        .collect();
    let mut speed_sum = vec![0.0; bins];
    for e in events {
        if e.t < start || e.t >= end {
            continue;
        }
        let b = (((e.t - start) / interval) as usize).min(bins - 1);
        out[b].count += 1;
        speed_sum[b] += e.speed;
        out[b].occupancy += if e.speed > 0.0 { e.length / e.speed } else { interval };
    }
    for (r, s) in out.iter_mut().zip(speed_sum) {
        r.flow = r.count as f64 * 3600.0 / interval;
        r.mean_speed = (r.count > 0).then(|| s / r.count as f64);
        r.occupancy = (r.occupancy / interval).clamp(0.0, 1.0);
    }
    out
}

/// One ramp vehicle's traversal of the acceleration lane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeAttempt {
    pub vehicle: VehicleId,
    pub class: VehicleClass,
    pub start: f64,
    pub end: Option<f64>,
    pub merged_at: Option<f64>,
    pub min_ttc: f64,
    pub collided: bool,
    /// Smaller of the headway times to the new leader and from the new
    /// follower at the moment of merging.
    pub pet: Option<f64>,
}

impl MergeAttempt {
    pub fn new(vehicle: VehicleId, class: VehicleClass, start: f64) -> Self {
        Self {
            vehicle,
            class,
            start,
            end: None,
            merged_at: None,
            min_ttc: f64::INFINITY,
            collided: false,
            pet: None,
        }
    }

    pub fn conflicted(&self, ttc_threshold: f64) -> bool {
        self.collided || self.min_ttc < ttc_threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trip {
    pub vehicle: VehicleId,
    pub class: VehicleClass,
    pub origin: Origin,
    pub spawn: f64,
    pub exit: f64,
}

/// Running |jerk| sums, kept per class.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JerkAccumulator {
    pub cav_sum: f64,
    pub cav_steps: u64,
    pub all_sum: f64,
    pub all_steps: u64,
}

impl JerkAccumulator {
    pub fn add(&mut self, class: VehicleClass, jerk: f64) {
        self.all_sum += jerk.abs();
        self.all_steps += 1;
        if class == VehicleClass::Cav {
            self.cav_sum += jerk.abs();
            self.cav_steps += 1;
        }
    }

    pub fn merge(&mut self, other: &Self) {
        self.cav_sum += other.cav_sum;
        self.cav_steps += other.cav_steps;
        self.all_sum += other.all_sum;
        self.all_steps += other.all_steps;
    }
}

/// Everything a run records for its summary.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub trips: Vec<Trip>,
    pub merges: Vec<MergeAttempt>,
    pub jerk: JerkAccumulator,
    pub collisions: usize,
    /// Bottleneck crossings after warmup.
    pub bottleneck_crossings: usize,
    /// Length of the measured period, s.
    pub measured: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// Percent of merge attempts ending in conflict; absent without attempts.
    pub collision_rate: Option<f64>,
    pub merge_attempts: usize,
    pub conflicted_merges: usize,
    pub completed_trips: usize,
    pub mean_travel_time: Option<f64>,
    /// Mean |jerk| over CAV steps.
    pub mean_abs_jerk: Option<f64>,
    pub mean_abs_jerk_all: Option<f64>,
    /// veh/h at the bottleneck detector.
    pub throughput: f64,
    pub min_ttc: Option<f64>,
    pub min_pet: Option<f64>,
    pub collisions: usize,
}

pub fn collision_rate(conflicted: usize, attempts: usize) -> Option<f64> {
    (attempts > 0).then(|| 100.0 * conflicted as f64 / attempts as f64)
}

fn mean(sum: f64, n: u64) -> Option<f64> {
    (n > 0).then(|| sum / n as f64)
}

/// Summarises a log whose entries all fall after warmup.
pub fn episode_metrics(log: &EpisodeLog, ttc_threshold: f64) -> EpisodeMetrics {
    let conflicted = log.merges.iter().filter(|m| m.conflicted(ttc_threshold)).count();
    let tt: f64 = log.trips.iter().map(|t| t.exit - t.spawn).sum();
    let min_ttc = log.merges.iter().map(|m| m.min_ttc).filter(|t| t.is_finite()).reduce(f64::min);
    let min_pet = log.merges.iter().filter_map(|m| m.pet).reduce(f64::min);
    EpisodeMetrics {
        collision_rate: collision_rate(conflicted, log.merges.len()),
        merge_attempts: log.merges.len(),
        conflicted_merges: conflicted,
        completed_trips: log.trips.len(),
        mean_travel_time: mean(tt, log.trips.len() as u64),
        mean_abs_jerk: mean(log.jerk.cav_sum, log.jerk.cav_steps),
        mean_abs_jerk_all: mean(log.jerk.all_sum, log.jerk.all_steps),
        throughput: if log.measured > 0.0 {
            log.bottleneck_crossings as f64 * 3600.0 / log.measured
        } else {
            0.0
        },
        min_ttc,
        min_pet,
        collisions: log.collisions,
    }
}

/// Trailing moving average over `window` samples.
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(series.len());
    let mut acc = 0.0;
    for (i, &x) in series.iter().enumerate() {
        acc += x;
        if i >= w {
            acc -= series[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Recovery {
    Recovered { seconds: f64 },
    /// Still below target `horizon` seconds after the shift.
    NotRecovered { horizon: f64 },
}

impl std::fmt::Display for Recovery {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Recovery::Recovered { seconds } => write!(f, "{seconds}"),
            Recovery::NotRecovered { horizon } => write!(f, ">{horizon}"),
        }
    }
}

/// Time after `shift` until `trace` (`(t, value)` pairs, time-ordered and
/// already smoothed) first regains 90% of its mean over the
/// `baseline_window` seconds before the shift.
pub fn recovery_time(trace: &[(f64, f64)], shift: f64, baseline_window: f64, horizon: f64) -> Result<Recovery> {
    let base: Vec<f64> = trace
        .iter()
        .filter(|(t, _)| *t >= shift - baseline_window && *t < shift)
        .map(|&(_, v)| v)
        .collect();
    if base.is_empty() {
        return Err(Error::config(format!(
            "recovery_time: no samples in the {baseline_window} s baseline window before t = {shift}"
        )));
    }
    let baseline = base.iter().sum::<f64>() / base.len() as f64;
    let target = 0.9 * baseline;
    Ok(trace
        .iter()
        .find(|(t, v)| *t >= shift && *t <= shift + horizon && *v >= target)
        .map(|&(t, _)| Recovery::Recovered { seconds: t - shift })
        .unwrap_or(Recovery::NotRecovered { horizon }))
}
