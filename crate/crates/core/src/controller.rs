//! Lateral decision rules evaluated on a snapshot: human MOBIL behaviour,
//! the hard safety check, and the trust-gated game arbitration for CAVs.

use serde::Serialize;

use crate::config::GameConfig;
use crate::dynamics::{acc_acceleration, idm_or_emergency, IdmParams, Lane, MobilParams, VehicleClass, VehicleId};
use crate::game::{
    coop_payoff_matrix, ego_best_response, expected_utilities, noncoop_tables, solve_cooperative, DriverStyle,
    DriverType, EgoStrategy, FollowerScene, FollowerStrategy, GameScene, PayoffTable,
};
use crate::rng::RngStream;
use crate::scenario::RoadNetwork;
use crate::snapshot::Snapshot;
use crate::trust::{game_type, GameType, TrustMatrix};

/// Neighbours of a vehicle if it were moved into `lane` at its position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneGaps {
    pub leader: Option<usize>,
    pub follower: Option<usize>,
    /// Ego front to leader rear.
    pub lead_gap: f64,
    /// Follower front to ego rear.
    pub lag_gap: f64,
}

pub fn lane_gaps(snap: &Snapshot, idx: usize, lane: Lane) -> LaneGaps {
    let ego = &snap.vehicles[idx];
    let (leader, follower) = if lane == ego.lane {
        snap.own_neighbours(idx)
    } else {
        snap.neighbours_at(lane, ego.position, ego.id)
    };
    LaneGaps {
        leader,
        follower,
        lead_gap: leader.map_or(f64::INFINITY, |l| snap.vehicles[l].rear() - ego.position),
        lag_gap: follower.map_or(f64::INFINITY, |f| ego.rear() - snap.vehicles[f].position),
    }
}

/// IDM acceleration of `idx` behind its leader in `lane`. Ramp vehicles also
/// see the end of the acceleration lane as a stopped obstacle.
pub fn accel_in_lane(snap: &Snapshot, idx: usize, lane: Lane, idm: &IdmParams, net: &RoadNetwork) -> f64 {
    let ego = &snap.vehicles[idx];
    let g = lane_gaps(snap, idx, lane);
    let mut a = match g.leader {
        Some(l) => idm_or_emergency(ego.speed, ego.speed - snap.vehicles[l].speed, g.lead_gap, idm),
        None => idm_or_emergency(ego.speed, 0.0, f64::INFINITY, idm),
    };
    if lane == Lane::Ramp {
        let to_end = net.merge_zone_end() - ego.position;
        a = a.min(idm_or_emergency(ego.speed, ego.speed, to_end, idm));
    }
    a
}

/// Like [`accel_in_lane`] but following the leader with the heuristic-blended
/// car-following law, which uses the leader's current acceleration.
pub fn cav_accel_in_lane(snap: &Snapshot, idx: usize, lane: Lane, idm: &IdmParams, net: &RoadNetwork, coolness: f64) -> f64 {
    let ego = &snap.vehicles[idx];
    let g = lane_gaps(snap, idx, lane);
    let mut a = match g.leader {
        Some(l) => {
            let lv = &snap.vehicles[l];
            acc_acceleration(ego.speed, lv.speed, lv.accel, g.lead_gap, coolness, idm)
        }
        None => idm_or_emergency(ego.speed, 0.0, f64::INFINITY, idm),
    };
    if lane == Lane::Ramp {
        let to_end = net.merge_zone_end() - ego.position;
        a = a.min(idm_or_emergency(ego.speed, ego.speed, to_end, idm));
    }
    a
}

/// Critical-gap acceptance for a mandatory merge: the lag gap must cover
/// `lag_headway` seconds of the new follower's travel and the lead gap
/// `lead_headway` seconds of the ego's, and both at least `s0`.
pub fn gap_acceptable(snap: &Snapshot, idx: usize, lane: Lane, lag_headway: f64, lead_headway: f64, s0: f64) -> bool {
    let ego = &snap.vehicles[idx];
    let g = lane_gaps(snap, idx, lane);
    let lag_need = g
        .follower
        .map_or(0.0, |f| (lag_headway * snap.vehicles[f].speed).max(s0));
    let lead_need = g.leader.map_or(0.0, |_| (lead_headway * ego.speed).max(s0));
    g.lag_gap >= lag_need && g.lead_gap >= lead_need && g.lag_gap > 0.0 && g.lead_gap > 0.0
}

/// Acceleration of follower `f` behind `idx` at the given bumper gap.
fn follower_accel_behind(snap: &Snapshot, f: usize, idx: usize, gap: f64, idm: &IdmParams) -> f64 {
    let (fv, ev) = (&snap.vehicles[f], &snap.vehicles[idx]);
    idm_or_emergency(fv.speed, fv.speed - ev.speed, gap, idm)
}

/// Result of the braking-based safety criterion for a move into `lane`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyCheck {
    pub ok: bool,
    pub follower_accel_after: f64,
    pub ego_accel_after: f64,
}

/// Both gaps positive and neither the ego nor the new follower needs to
/// brake harder than `b_safe` after the move.
pub fn safety_check(
    snap: &Snapshot,
    idx: usize,
    lane: Lane,
    idms: &[IdmParams],
    b_safe: f64,
    net: &RoadNetwork,
) -> SafetyCheck {
    let g = lane_gaps(snap, idx, lane);
    let follower_accel_after = g
        .follower
        .map_or(0.0, |f| follower_accel_behind(snap, f, idx, g.lag_gap, &idms[f]));
    let ego_accel_after = accel_in_lane(snap, idx, lane, &idms[idx], net);
    SafetyCheck {
        ok: g.lead_gap > 0.0
            && g.lag_gap > 0.0
            && follower_accel_after >= -b_safe
            && ego_accel_after >= -b_safe,
        follower_accel_after,
        ego_accel_after,
    }
}

/// Mainline lanes a vehicle could move into.
pub fn candidate_lanes(lane: Lane, net: &RoadNetwork) -> Vec<Lane> {
    match lane {
        Lane::Ramp => Vec::new(),
        Lane::Main(_) => [lane.left(net.mainline_lanes), lane.right()].into_iter().flatten().collect(),
    }
}

/// Discretionary MOBIL choice for a mainline vehicle; best qualifying gain
/// wins, left before right on ties.
pub fn mobil_choice(snap: &Snapshot, idx: usize, idms: &[IdmParams], mobil: &MobilParams, net: &RoadNetwork) -> Option<Lane> {
    let ego = &snap.vehicles[idx];
    let a_old = accel_in_lane(snap, idx, ego.lane, &idms[idx], net);
    let own = lane_gaps(snap, idx, ego.lane);
    // old follower: behind ego now, behind ego's leader afterwards
    let fo_change = match own.follower {
        Some(f) => {
            let fv = &snap.vehicles[f];
            let before = follower_accel_behind(snap, f, idx, own.lag_gap, &idms[f]);
            let after = match own.leader {
                Some(l) => {
                    let lv = &snap.vehicles[l];
                    idm_or_emergency(fv.speed, fv.speed - lv.speed, lv.rear() - fv.position, &idms[f])
                }
                None => idm_or_emergency(fv.speed, 0.0, f64::INFINITY, &idms[f]),
            };
            after - before
        }
        None => 0.0,
    };
    let mut best: Option<(Lane, f64)> = None;
    for lane in candidate_lanes(ego.lane, net) {
        let g = lane_gaps(snap, idx, lane);
        if !(g.lead_gap > 0.0 && g.lag_gap > 0.0) {
            continue;
        }
        let a_new = accel_in_lane(snap, idx, lane, &idms[idx], net);
        let (fn_change, fn_after) = match g.follower {
            Some(f) => {
                let fv = &snap.vehicles[f];
                let before = match g.leader {
                    Some(l) => {
                        let lv = &snap.vehicles[l];
                        idm_or_emergency(fv.speed, fv.speed - lv.speed, lv.rear() - fv.position, &idms[f])
                    }
                    None => idm_or_emergency(fv.speed, 0.0, f64::INFINITY, &idms[f]),
                };
                let after = follower_accel_behind(snap, f, idx, g.lag_gap, &idms[f]);
                (after - before, after)
            }
            None => (0.0, 0.0),
        };
        let gain = a_new - a_old;
        let decision = crate::dynamics::mobil_decision(gain, fn_change, fo_change, fn_after, mobil);
        if decision == crate::dynamics::LaneChangeDecision::Change && best.is_none_or(|(_, g0)| gain > g0) {
            best = Some((lane, gain));
        }
    }
    best.map(|(l, _)| l)
}

/// Mandatory-merge urgency in [0, 1] for a vehicle in the acceleration lane.
pub fn merge_urgency(x: f64, net: &RoadNetwork) -> f64 {
    (1.0 - (net.merge_zone_end() - x) / net.accel_lane_length).clamp(0.0, 1.0)
}

/// Whether a ramp vehicle sits in the acceleration lane and must merge.
pub fn must_merge(lane: Lane, x: f64, net: &RoadNetwork) -> bool {
    lane == Lane::Ramp && x >= net.merge_zone_start
}

/// One game-layer decision, for the audit trail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GameAudit {
    pub t: f64,
    pub ego: VehicleId,
    pub counterpart: Option<VehicleId>,
    pub game: Option<GameType>,
    pub ego_strategy: EgoStrategy,
    pub follower_strategy: Option<FollowerStrategy>,
    /// Joint payoff of the chosen cell or expected utility of the chosen column.
    pub payoff: f64,
    pub eu_change: Option<f64>,
    pub eu_keep: Option<f64>,
    pub safe: bool,
    pub change: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneDecision {
    pub change: bool,
    /// A cooperating follower CAV and the strategy it agreed to.
    pub commitment: Option<(VehicleId, FollowerStrategy)>,
    pub audit: GameAudit,
}

/// Inputs of one lane-change arbitration.
pub struct LaneChangeRequest<'a> {
    pub snapshot: &'a Snapshot,
    pub ego: usize,
    pub target: Lane,
    pub discretionary: bool,
    pub urgency: f64,
    /// Per-snapshot-index longitudinal models.
    pub idms: &'a [IdmParams],
    pub net: &'a RoadNetwork,
    pub trust: &'a TrustMatrix,
    pub tau: f64,
    pub game: &'a GameConfig,
    pub mobil: &'a MobilParams,
    pub scan_range: f64,
    pub noise: Option<RngStream>,
}

/// Builds the game scene between the ego and the new follower `f`.
pub fn game_scene(req: &LaneChangeRequest<'_>, f: usize) -> GameScene {
    let snap = req.snapshot;
    let ego = &snap.vehicles[req.ego];
    let fv = &snap.vehicles[f];
    let g = lane_gaps(snap, req.ego, req.target);
    let f_left = fv.lane.left(req.net.mainline_lanes);
    let can_change_lane = f_left.is_some_and(|l| safety_check(snap, f, l, req.idms, req.mobil.b_safe, req.net).ok);
    GameScene {
        ego_speed: ego.speed,
        stay_accel: accel_in_lane(snap, req.ego, ego.lane, &req.idms[req.ego], req.net),
        target_accel: accel_in_lane(snap, req.ego, req.target, &req.idms[req.ego], req.net),
        discretionary: req.discretionary,
        urgency: if req.discretionary { 0.0 } else { req.urgency },
        follower: FollowerScene {
            speed: fv.speed,
            lag_gap: g.lag_gap,
            can_change_lane,
        },
        idm: req.idms[f],
        b_safe: req.mobil.b_safe,
        lookahead: req.game.lookahead,
    }
}

/// Trust-gated arbitration of a requested lane change. Every failure path
/// resolves to keeping the lane.
pub fn decide_lane_change(mut req: LaneChangeRequest<'_>) -> LaneDecision {
    let snap = req.snapshot;
    let ego = &snap.vehicles[req.ego];
    let safety = safety_check(snap, req.ego, req.target, req.idms, req.mobil.b_safe, req.net);
    let gaps = lane_gaps(snap, req.ego, req.target);
    let counterpart = gaps
        .follower
        .filter(|&f| ego.position - snap.vehicles[f].position <= req.scan_range);

    let mut audit = GameAudit {
        t: snap.t,
        ego: ego.id,
        counterpart: counterpart.map(|f| snap.vehicles[f].id),
        game: None,
        ego_strategy: EgoStrategy::NotChangeLane,
        follower_strategy: None,
        payoff: 0.0,
        eu_change: None,
        eu_keep: None,
        safe: safety.ok,
        change: false,
    };

    let Some(f) = counterpart else {
        audit.change = safety.ok;
        audit.ego_strategy = if safety.ok {
            EgoStrategy::ChangeLane
        } else {
            EgoStrategy::NotChangeLane
        };
        return LaneDecision {
            change: safety.ok,
            commitment: None,
            audit,
        };
    };

    let fv = &snap.vehicles[f];
    let scene = game_scene(&req, f);
    let trust = req.trust.get(ego.id, fv.id);
    let gate = game_type(trust, req.tau);
    let cooperative = gate == GameType::Cooperative && fv.class == VehicleClass::Cav;
    let mut commitment = None;
    let choice = if cooperative {
        let m = coop_payoff_matrix(&scene, &req.game.weights);
        let (si, sj) = solve_cooperative(&m);
        audit.game = Some(GameType::Cooperative);
        audit.follower_strategy = Some(sj);
        audit.payoff = m[sj.row()][si.column()];
        if si == EgoStrategy::ChangeLane {
            commitment = Some((fv.id, sj));
        }
        si
    } else {
        let (p, q) = noncoop_tables(&scene, &req.game.noncoop, req.noise.as_mut());
        let tables = PayoffTable {
            coop: [[0.0; 2]; 4],
            noncoop_ego: p,
            noncoop_follower: q,
        };
        let inferred;
        let types: &[DriverType] = if fv.class == VehicleClass::Hv {
            &req.game.types
        } else {
            inferred = [DriverType::default_for(DriverStyle::Aggressive, 1.0)];
            &inferred
        };
        audit.game = Some(GameType::NonCooperative);
        let eu = expected_utilities(&tables, types, req.game.expectation);
        audit.eu_change = Some(eu[0]);
        audit.eu_keep = Some(eu[1]);
        let best = ego_best_response(&tables, types, req.game.expectation).unwrap_or(EgoStrategy::NotChangeLane);
        let best = if gate == GameType::NonCooperative && eu[0] - eu[1] < req.game.ambiguity_margin {
            EgoStrategy::NotChangeLane
        } else {
            best
        };
        audit.payoff = eu[best.column()];
        best
    };
    audit.ego_strategy = choice;
    let change = choice == EgoStrategy::ChangeLane && safety.ok;
    audit.change = change;
    LaneDecision {
        change,
        commitment,
        audit,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Origin, VehicleState};
    use crate::scenario::{build_network, NetworkConfig};
    use crate::trust::TrustParams;
    use proptest::prelude::*;

    fn net() -> RoadNetwork {
        build_network(&NetworkConfig {
            mainline_length: 2000.0,
            merge_zone_start: 1000.0,
            ..Default::default()
        })
        .unwrap()
    }

    fn car(id: u64, class: VehicleClass, lane: Lane, x: f64, v: f64) -> VehicleState {
        VehicleState {
            id: VehicleId(id),
            class,
            lane,
            position: x,
            speed: v,
            accel: 0.0,
            length: 5.0,
            lane_change_cooldown: 0.0,
            origin: if lane == Lane::Ramp { Origin::Ramp } else { Origin::Mainline },
            spawn_time: 0.0,
        }
    }

    struct Fixture {
        snap: Snapshot,
        idms: Vec<IdmParams>,
        net: RoadNetwork,
        trust: TrustMatrix,
        game: GameConfig,
        mobil: MobilParams,
    }

    impl Fixture {
        fn new(cars: Vec<VehicleState>) -> Self {
            let snap = Snapshot::new(0.0, cars, 3);
            Self {
                idms: vec![IdmParams::default(); snap.len()],
                snap,
                net: net(),
                trust: TrustMatrix::new(TrustParams::default().initial),
                game: GameConfig::default(),
                mobil: MobilParams::default(),
            }
        }

        fn request(&self, ego: u64, target: Lane) -> LaneChangeRequest<'_> {
            let idx = self.snap.index_of(VehicleId(ego)).unwrap();
            LaneChangeRequest {
                snapshot: &self.snap,
                ego: idx,
                target,
                discretionary: false,
                urgency: merge_urgency(self.snap.vehicles[idx].position, &self.net),
                idms: &self.idms,
                net: &self.net,
                trust: &self.trust,
                tau: 0.4,
                game: &self.game,
                mobil: &self.mobil,
                scan_range: 100.0,
                noise: None,
            }
        }
    }

    #[test]
    fn empty_target_lane_uses_safety_only() {
        let fx = Fixture::new(vec![car(1, VehicleClass::Cav, Lane::Ramp, 1100.0, 22.0)]);
        let d = decide_lane_change(fx.request(1, Lane::Main(0)));
        assert!(d.change);
        assert_eq!(d.audit.game, None);
    }

    #[test]
    fn trusted_cav_follower_yields_for_a_merge() {
        // merger near the end of the lane, CAV closing from behind
        let mut fx = Fixture::new(vec![
            car(1, VehicleClass::Cav, Lane::Ramp, 1250.0, 20.0),
            car(2, VehicleClass::Cav, Lane::Main(0), 1222.0, 24.0),
        ]);
        fx.trust.set(VehicleId(1), VehicleId(2), 0.9);
        let d = decide_lane_change(fx.request(1, Lane::Main(0)));
        assert_eq!(d.audit.game, Some(GameType::Cooperative));
        assert_eq!(d.audit.ego_strategy, EgoStrategy::ChangeLane);
        let (who, what) = d.commitment.unwrap();
        assert_eq!(who, VehicleId(2));
        assert!(matches!(what, FollowerStrategy::Decelerate | FollowerStrategy::ChangeLane));
        assert_eq!(d.change, d.audit.safe);
    }

    #[test]
    fn low_trust_takes_noncooperative_branch() {
        for class in [VehicleClass::Cav, VehicleClass::Hv] {
            let mut fx = Fixture::new(vec![
                car(1, VehicleClass::Cav, Lane::Ramp, 1100.0, 22.0),
                car(2, class, Lane::Main(0), 1050.0, 25.0),
            ]);
            fx.trust.set(VehicleId(1), VehicleId(2), 0.1);
            let d = decide_lane_change(fx.request(1, Lane::Main(0)));
            assert_eq!(d.audit.game, Some(GameType::NonCooperative));
            assert!(d.commitment.is_none());
        }
    }

    #[test]
    fn mobil_prefers_the_faster_lane() {
        let fx = Fixture::new(vec![
            car(1, VehicleClass::Hv, Lane::Main(0), 500.0, 28.0),
            car(2, VehicleClass::Hv, Lane::Main(0), 530.0, 15.0),
        ]);
        let idx = fx.snap.index_of(VehicleId(1)).unwrap();
        assert_eq!(mobil_choice(&fx.snap, idx, &fx.idms, &fx.mobil, &fx.net), Some(Lane::Main(1)));
        let alone = Fixture::new(vec![car(3, VehicleClass::Hv, Lane::Main(0), 500.0, 28.0)]);
        assert_eq!(mobil_choice(&alone.snap, 0, &alone.idms, &alone.mobil, &alone.net), None);
    }

    proptest! {
        #[test]
        fn never_changes_when_safety_fails(
            xf in 950.0f64..1290.0, vf in 0.0f64..33.0,
            xe in 1000.0f64..1300.0, ve in 0.0f64..30.0,
            xl in 1000.0f64..1400.0, vl in 0.0f64..33.0,
            trust in 0.0f64..1.0, cav_f in any::<bool>(),
        ) {
            let class = if cav_f { VehicleClass::Cav } else { VehicleClass::Hv };
            let mut fx = Fixture::new(vec![
                car(1, VehicleClass::Cav, Lane::Ramp, xe, ve),
                car(2, class, Lane::Main(0), xf, vf),
                car(3, VehicleClass::Hv, Lane::Main(0), xl.max(xf + 6.0), vl),
            ]);
            fx.trust.set(VehicleId(1), VehicleId(2), trust);
            let req = fx.request(1, Lane::Main(0));
            let check = safety_check(&fx.snap, req.ego, Lane::Main(0), &fx.idms, 4.0, &fx.net);
            let d = decide_lane_change(req);
            if !check.ok {
                prop_assert!(!d.change);
            }
        }
    }
}
