//! Longitudinal (IDM) and lateral (MOBIL) rules, kinematic integration and
//! collision detection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical braking limit applied to every acceleration command, in m/s².
pub const B_EMERGENCY: f64 = 9.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VehicleId(pub u64);

impl std::fmt::Display for VehicleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VehicleClass {
    Hv,
    Cav,
}

impl VehicleClass {
    pub fn as_str(self) -> &'static str {
        match self {
            VehicleClass::Hv => "HV",
            VehicleClass::Cav => "CAV",
        }
    }
}

/// Lane index. `Main(0)` is the rightmost mainline lane; the on-ramp and its
/// acceleration lane form the separate `Ramp` lane to the right of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Lane {
    Ramp,
    Main(u8),
}

impl Lane {
    /// Lane to the left, if it exists on a carriageway with `mainline_lanes`.
    pub fn left(self, mainline_lanes: u8) -> Option<Lane> {
        match self {
            Lane::Ramp => Some(Lane::Main(0)),
            Lane::Main(k) if k + 1 < mainline_lanes => Some(Lane::Main(k + 1)),
            Lane::Main(_) => None,
        }
    }

    /// Lane to the right among mainline lanes. Mainline vehicles never move
    /// onto the ramp, so `Main(0)` has no right neighbour.
    pub fn right(self) -> Option<Lane> {
        match self {
            Lane::Main(k) if k > 0 => Some(Lane::Main(k - 1)),
            _ => None,
        }
    }

    /// Dense index used for one-hot encodings and per-lane tables:
    /// ramp = 0, `Main(k)` = k + 1.
    pub fn slot(self) -> usize {
        match self {
            Lane::Ramp => 0,
            Lane::Main(k) => k as usize + 1,
        }
    }

    pub fn label(self) -> String {
        match self {
            Lane::Ramp => "R".to_string(),
            Lane::Main(k) => k.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Mainline,
    Ramp,
}

/// Kinematic and identity record of one vehicle. `position` is the front
/// bumper in corridor coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: VehicleId,
    pub class: VehicleClass,
    pub lane: Lane,
    pub position: f64,
    pub speed: f64,
    pub accel: f64,
    pub length: f64,
    pub lane_change_cooldown: f64,
    pub origin: Origin,
    pub spawn_time: f64,
}

impl VehicleState {
    pub fn rear(&self) -> f64 {
        self.position - self.length
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdmParams {
    /// Maximum acceleration a, m/s².
    pub a: f64,
    /// Comfortable deceleration b, m/s².
    pub b: f64,
    /// Desired time headway T, s.
    pub time_headway: f64,
    /// Minimum standstill spacing s0, m.
    pub s0: f64,
    /// Desired speed v_d, m/s.
    pub desired_speed: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 1.5,
            time_headway: 1.2,
            s0: 2.0,
            desired_speed: 30.0,
        }
    }
}

impl IdmParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("idm.a", self.a),
            ("idm.b", self.b),
            ("idm.time_headway", self.time_headway),
            ("idm.s0", self.s0),
            ("idm.desired_speed", self.desired_speed),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Desired dynamic gap Δd* for speed `v` and approach rate `delta_v`.
    pub fn desired_gap(&self, v: f64, delta_v: f64) -> f64 {
        let dynamic = v * self.time_headway + v * delta_v / (2.0 * (self.a * self.b).sqrt());
        self.s0 + dynamic.max(0.0)
    }
}

/// IDM acceleration. `delta_v` is the approach rate `v - v_leader`; pass
/// `f64::INFINITY` as `gap` when there is no leader.
///
/// The result is clamped to `[-B_EMERGENCY, a]`. A non-positive gap means the
/// caller missed a collision and is reported as a contract violation.
pub fn idm_acceleration(v: f64, delta_v: f64, gap: f64, params: &IdmParams) -> Result<f64> {
    if !(gap > 0.0) {
        return Err(Error::contract(format!(
            "idm_acceleration called with gap {gap}; collisions must be flagged first"
        )));
    }
    let free = (v / params.desired_speed).powi(4);
    let interaction = if gap.is_infinite() {
        0.0
    } else {
        (params.desired_gap(v, delta_v) / gap).powi(2)
    };
    let accel = params.a * (1.0 - free - interaction);
    Ok(accel.clamp(-B_EMERGENCY, params.a))
}

/// IDM acceleration that treats an overlap as an emergency stop instead of
/// an error. Used inside the step loop after collisions have been recorded.
pub fn idm_or_emergency(v: f64, delta_v: f64, gap: f64, params: &IdmParams) -> f64 {
    idm_acceleration(v, delta_v, gap, params).unwrap_or(-B_EMERGENCY)
}

/// Constant-acceleration-heuristic acceleration toward a leader at bumper
/// gap `gap` moving at `vl` with acceleration `al`: the deceleration that
/// just avoids a collision if the leader keeps its acceleration.
pub fn cah_acceleration(v: f64, vl: f64, al: f64, gap: f64, params: &IdmParams) -> f64 {
    let al = al.min(params.a);
    let denom = vl * vl - 2.0 * gap * al;
    if vl * (v - vl) <= -2.0 * gap * al && denom > 0.0 {
        v * v * al / denom
    } else {
        let closing = (v - vl).max(0.0);
        al - closing * closing / (2.0 * gap)
    }
}

/// IDM blended with the constant-acceleration heuristic (`coolness` in
/// [0, 1]). Matches IDM whenever IDM is at least as mild as the heuristic and
/// otherwise softens the reaction to a close but non-critical leader, such
/// as a vehicle that just cut in.
pub fn acc_acceleration(v: f64, vl: f64, al: f64, gap: f64, coolness: f64, params: &IdmParams) -> f64 {
    let idm = idm_or_emergency(v, v - vl, gap, params);
    if !(gap > 0.0) || gap.is_infinite() {
        return idm;
    }
    let cah = cah_acceleration(v, vl, al, gap, params);
    if idm >= cah {
        return idm;
    }
    let blended = (1.0 - coolness) * idm + coolness * (cah + params.b * ((idm - cah) / params.b).tanh());
    // the heuristic ignores the desired speed, so never exceed free-road IDM
    let free = idm_or_emergency(v, 0.0, f64::INFINITY, params);
    blended.min(free).clamp(-B_EMERGENCY, params.a)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MobilParams {
    /// Politeness factor p.
    pub politeness: f64,
    /// Advantage threshold Δa_th, m/s².
    pub threshold: f64,
    /// Safe braking limit b_safe, m/s².
    pub b_safe: f64,
}

impl Default for MobilParams {
    fn default() -> Self {
        Self {
            politeness: 0.2,
            threshold: 0.3,
            b_safe: 4.0,
        }
    }
}

impl MobilParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.politeness) {
            return Err(Error::config(format!(
                "mobil.politeness must lie in [0, 1], got {}",
                self.politeness
            )));
        }
        if !(self.threshold > 0.0 && self.b_safe > 0.0) {
            return Err(Error::config("mobil.threshold and mobil.b_safe must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaneChangeDecision {
    Change,
    Stay,
}

/// MOBIL incentive and safety criteria.
pub fn mobil_decision(
    ego_gain: f64,
    follower_new_change: f64,
    follower_old_change: f64,
    new_follower_accel_after: f64,
    params: &MobilParams,
) -> LaneChangeDecision {
    let incentive =
        ego_gain + params.politeness * (follower_new_change + follower_old_change) > params.threshold;
    let safe = new_follower_accel_after > -params.b_safe;
    if incentive && safe {
        LaneChangeDecision::Change
    } else {
        LaneChangeDecision::Stay
    }
}

/// Semi-implicit Euler step. The commanded acceleration is stored on the
/// state even when the speed floor engages, so jerk can be recovered from
/// consecutive states.
pub fn step_kinematics(state: &VehicleState, accel: f64, dt: f64) -> VehicleState {
    let speed = (state.speed + accel * dt).max(0.0);
    VehicleState {
        speed,
        position: state.position + speed * dt,
        accel,
        lane_change_cooldown: (state.lane_change_cooldown - dt).max(0.0),
        ..state.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionKind {
    /// Rear-end overlap between vehicles that were already in the same lane.
    RearEnd,
    /// Overlap created by a lane change into an occupied slot.
    LaneChange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub leader: VehicleId,
    pub follower: VehicleId,
    pub lane: Lane,
    pub position: f64,
    pub kind: CollisionKind,
}

/// Emits one event per same-lane adjacent pair whose bumper gap is `<= 0`.
/// `changed_lane` reports whether a vehicle moved laterally this step; such
/// overlaps are tagged as lane-change conflicts.
pub fn detect_collisions(
    vehicles: &[VehicleState],
    changed_lane: impl Fn(VehicleId) -> bool,
) -> Vec<CollisionEvent> {
    let mut order: Vec<usize> = (0..vehicles.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&vehicles[i], &vehicles[j]);
        a.lane
            .cmp(&b.lane)
            .then(a.position.total_cmp(&b.position))
            .then(a.id.cmp(&b.id))
    });
    let mut events = Vec::new();
    for pair in order.windows(2) {
        let follower = &vehicles[pair[0]];
        let leader = &vehicles[pair[1]];
        if follower.lane != leader.lane {
            continue;
        }
        if leader.rear() - follower.position <= 0.0 {
            let kind = if changed_lane(leader.id) || changed_lane(follower.id) {
                CollisionKind::LaneChange
            } else {
                CollisionKind::RearEnd
            };
            events.push(CollisionEvent {
                leader: leader.id,
                follower: follower.id,
                lane: leader.lane,
                position: leader.rear(),
                kind,
            });
        }
    }
    events
}
