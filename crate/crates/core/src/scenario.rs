//! Corridor geometry, demand profiles and the arrival process.

use serde::{Deserialize, Serialize};

use crate::dynamics::{IdmParams, Lane, VehicleClass};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Geometry inputs. See [`build_network`] for the derived layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub mainline_length: f64,
    pub mainline_lanes: u8,
    pub lane_width: f64,
    pub mainline_speed_limit: f64,
    pub ramp_speed_advisory: f64,
    pub merge_zone_start: f64,
    pub accel_lane_length: f64,
    /// Length of ramp upstream of the merge zone, where vehicles enter.
    pub ramp_length: f64,
    pub detector_spacing: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            mainline_length: 10_000.0,
            mainline_lanes: 2,
            lane_width: 3.75,
            mainline_speed_limit: 33.3,
            ramp_speed_advisory: 22.2,
            merge_zone_start: 5_000.0,
            accel_lane_length: 300.0,
            ramp_length: 250.0,
            detector_spacing: 250.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoadNetwork {
    pub mainline_length: f64,
    pub mainline_lanes: u8,
    pub lane_width: f64,
    pub mainline_speed_limit: f64,
    pub ramp_speed_advisory: f64,
    pub merge_zone_start: f64,
    pub accel_lane_length: f64,
    pub ramp_length: f64,
    pub detector_spacing: f64,
    /// Mainline detector chainages, shared by every mainline lane.
    pub detector_positions: Vec<f64>,
    /// Detector on the ramp at the start of the acceleration lane.
    pub ramp_detector: f64,
}

impl RoadNetwork {
    pub fn merge_zone_end(&self) -> f64 {
        self.merge_zone_start + self.accel_lane_length
    }

    pub fn ramp_entry(&self) -> f64 {
        self.merge_zone_start - self.ramp_length
    }

    pub fn in_merge_zone(&self, x: f64) -> bool {
        (self.merge_zone_start..=self.merge_zone_end()).contains(&x)
    }

    /// Every lane that can hold vehicles, ramp first.
    pub fn lanes(&self) -> Vec<Lane> {
        std::iter::once(Lane::Ramp)
            .chain((0..self.mainline_lanes).map(Lane::Main))
            .collect()
    }

    pub fn lane_count(&self) -> usize {
        self.mainline_lanes as usize + 1
    }

    /// Speed limit at chainage `x` in `lane`.
    pub fn speed_limit(&self, lane: Lane, x: f64) -> f64 {
        match lane {
            Lane::Ramp if x < self.merge_zone_start => self.ramp_speed_advisory,
            _ => self.mainline_speed_limit,
        }
    }

    /// Index of the first mainline detector at or downstream of the merge
    /// zone end. Its flow is the bottleneck flow.
    pub fn bottleneck_detector(&self) -> usize {
        let end = self.merge_zone_end();
        self.detector_positions
            .iter()
            .position(|&x| x >= end)
            .unwrap_or(self.detector_positions.len().saturating_sub(1))
    }

    /// Entry lanes and their entry chainage.
    pub fn entries(&self) -> Vec<(Lane, f64)> {
        let mut out: Vec<(Lane, f64)> = (0..self.mainline_lanes).map(|k| (Lane::Main(k), 0.0)).collect();
        out.push((Lane::Ramp, self.ramp_entry()));
        out
    }
}

pub fn build_network(config: &NetworkConfig) -> Result<RoadNetwork> {
    let positive = [
        ("network.mainline_length", config.mainline_length),
        ("network.lane_width", config.lane_width),
        ("network.mainline_speed_limit", config.mainline_speed_limit),
        ("network.ramp_speed_advisory", config.ramp_speed_advisory),
        ("network.accel_lane_length", config.accel_lane_length),
        ("network.ramp_length", config.ramp_length),
        ("network.detector_spacing", config.detector_spacing),
    ];
    for (name, v) in positive {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::config(format!("{name} must be > 0, got {v}")));
        }
    }
    if config.mainline_lanes == 0 {
        return Err(Error::config("network.mainline_lanes must be >= 1"));
    }
    if !(config.merge_zone_start > 0.0
        && config.merge_zone_start + config.accel_lane_length < config.mainline_length)
    {
        return Err(Error::config(format!(
            "merge zone [{}, {}] lies outside the corridor [0, {}]",
            config.merge_zone_start,
            config.merge_zone_start + config.accel_lane_length,
            config.mainline_length
        )));
    }
    if config.ramp_length > config.merge_zone_start {
        return Err(Error::config(format!(
            "network.ramp_length {} starts upstream of the corridor origin",
            config.ramp_length
        )));
    }
    let count = (config.mainline_length / config.detector_spacing + 1e-9).floor() as usize;
    let detector_positions = (1..=count).map(|k| k as f64 * config.detector_spacing).collect();
    Ok(RoadNetwork {
        mainline_length: config.mainline_length,
        mainline_lanes: config.mainline_lanes,
        lane_width: config.lane_width,
        mainline_speed_limit: config.mainline_speed_limit,
        ramp_speed_advisory: config.ramp_speed_advisory,
        merge_zone_start: config.merge_zone_start,
        accel_lane_length: config.accel_lane_length,
        ramp_length: config.ramp_length,
        detector_spacing: config.detector_spacing,
        detector_positions,
        ramp_detector: config.merge_zone_start,
    })
}

/// One breakpoint of a piecewise-linear demand profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandPoint {
    /// Seconds from simulation start.
    pub t: f64,
    pub mainline: f64,
    pub ramp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DemandSpec {
    /// Constant total demand split between mainline and ramp.
    Fixed { level: f64, split: f64 },
    /// Time-varying mainline and ramp rates, linearly interpolated.
    Profile { points: Vec<DemandPoint> },
}

/// Mainline share of a fixed total demand.
pub const DEFAULT_SPLIT: f64 = 0.8;

impl Default for DemandSpec {
    fn default() -> Self {
        DemandSpec::Fixed {
            level: 600.0,
            split: DEFAULT_SPLIT,
        }
    }
}

impl DemandSpec {
    /// Rush-hour style profile over `horizon` seconds that peaks at
    /// 1000 veh/h mainline and 250 veh/h ramp.
    pub fn peak_profile(horizon: f64) -> Self {
        let pts = [
            (0.0, 500.0, 125.0),
            (0.25, 1000.0, 250.0),
            (0.4, 1000.0, 250.0),
            (0.6, 600.0, 150.0),
            (1.0, 300.0, 75.0),
        ];
        DemandSpec::Profile {
            points: pts
                .iter()
                .map(|&(f, m, r)| DemandPoint {
                    t: f * horizon,
                    mainline: m,
                    ramp: r,
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DemandSpec::Fixed { level, split } => {
                if !(level.is_finite() && *level >= 0.0) {
                    return Err(Error::config(format!("demand.level must be >= 0, got {level}")));
                }
                if !(0.0..=1.0).contains(split) {
                    return Err(Error::config(format!("demand.split must lie in [0, 1], got {split}")));
                }
            }
            DemandSpec::Profile { points } => {
                if points.is_empty() {
                    return Err(Error::config("demand.points must not be empty"));
                }
                for w in points.windows(2) {
                    if !(w[1].t > w[0].t) {
                        return Err(Error::config("demand.points must have increasing t"));
                    }
                }
                if points.iter().any(|p| !(p.mainline >= 0.0 && p.ramp >= 0.0)) {
                    return Err(Error::config("demand.points rates must be >= 0"));
                }
            }
        }
        Ok(())
    }
}

/// Demand bound to a horizon so that out-of-range queries can be rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandProfile {
    pub spec: DemandSpec,
    pub horizon: f64,
}

impl DemandProfile {
    pub fn new(spec: DemandSpec, horizon: f64) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec, horizon })
    }
}

/// Mainline and ramp rates in veh/h at time `t`.
pub fn demand_rate(profile: &DemandProfile, t: f64) -> Result<(f64, f64)> {
    if !(0.0..=profile.horizon).contains(&t) {
        return Err(Error::Query(format!(
            "demand queried at t = {t} outside [0, {}]",
            profile.horizon
        )));
    }
    Ok(match &profile.spec {
        DemandSpec::Fixed { level, split } => (split * level, (1.0 - split) * level),
        DemandSpec::Profile { points } => interpolate(points, t),
    })
}

fn interpolate(points: &[DemandPoint], t: f64) -> (f64, f64) {
    let first = points[0];
    if t <= first.t {
        return (first.mainline, first.ramp);
    }
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        if t <= b.t {
            let f = (t - a.t) / (b.t - a.t);
            return (
                a.mainline + f * (b.mainline - a.mainline),
                a.ramp + f * (b.ramp - a.ramp),
            );
        }
    }
    let last = points[points.len() - 1];
    (last.mainline, last.ramp)
}

/// Per-step Bernoulli arrival probability for an hourly rate.
pub fn arrival_probability(rate_vph: f64, dt: f64) -> f64 {
    (rate_vph.max(0.0) * dt / 3600.0).min(1.0)
}

/// Arrival process for one entry lane. Arrival and class draws use separate
/// streams so the arrival times do not depend on the penetration rate.
#[derive(Debug, Clone)]
pub struct ArrivalProcess {
    arrivals: RngStream,
    classes: RngStream,
}

impl ArrivalProcess {
    pub fn new(seed: u64, lane: Lane) -> Self {
        let base = RngStream::new(seed, format!("entry/{}", lane.label()));
        Self {
            arrivals: base.child("arrivals"),
            classes: base.child("class"),
        }
    }

    /// Draws this step's arrival (at most one) for an entry lane carrying
    /// `rate_vph`. Each arrival is a CAV with probability `penetration`.
    pub fn draw(&mut self, rate_vph: f64, dt: f64, penetration: f64) -> Option<VehicleClass> {
        if !self.arrivals.bernoulli(arrival_probability(rate_vph, dt)) {
            return None;
        }
        Some(if self.classes.bernoulli(penetration) {
            VehicleClass::Cav
        } else {
            VehicleClass::Hv
        })
    }
}

/// Highest entry speed at which the IDM interaction term toward a leader at
/// bumper gap `gap` moving at `leader_speed` does not exceed one, i.e. the
/// positive root of `s0 + vT + v(v - v_l)/(2 sqrt(ab)) = gap`.
pub fn leader_safe_speed(gap: f64, leader_speed: f64, idm: &IdmParams) -> f64 {
    if gap.is_infinite() {
        return f64::INFINITY;
    }
    let room = gap - idm.s0;
    if room <= 0.0 {
        return 0.0;
    }
    let k = 2.0 * (idm.a * idm.b).sqrt();
    // v^2 / k + v (T - v_l / k) - room = 0
    let qa = 1.0 / k;
    let qb = idm.time_headway - leader_speed / k;
    let disc = qb * qb + 4.0 * qa * room;
    ((-qb + disc.sqrt()) / (2.0 * qa)).max(0.0)
}
