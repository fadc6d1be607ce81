//! The serial step loop. Each step reads one immutable [`Snapshot`], fans
//! per-vehicle work out through [`crate::par`], and commits the results in id
//! order, so parallel and sequential runs are bit-identical.

use std::collections::{BTreeMap, VecDeque};

use serde::Serialize;

use crate::config::{ControllerMode, ScenarioConfig};
use crate::controller::{
    accel_in_lane, cav_accel_in_lane, decide_lane_change, gap_acceptable, lane_gaps, merge_urgency, mobil_choice, must_merge, safety_check, GameAudit,
    LaneChangeRequest,
};
use crate::dynamics::{
    detect_collisions, idm_or_emergency, step_kinematics, IdmParams, Lane, MobilParams, Origin, VehicleClass,
    VehicleId, VehicleState, B_EMERGENCY,
};
use crate::encoder::{
    encode_history, greedy_lateral, observation_dim, observe, policy_forward, EncoderParams, LateralAction,
    ObservationHistory, ObserveParams,
};
use crate::error::{Error, Result};
use crate::game::{DriverStyle, FollowerStrategy, NoiseMode};
use crate::learner::{sample_action, Transition};
use crate::metrics::{episode_metrics, ttc, DetectorCrossing, EpisodeLog, EpisodeMetrics, MergeAttempt, Trip};
use crate::par::{self, Execution};
use crate::reward::{coop_reward, self_reward, RewardBreakdown};
use crate::rng::RngStream;
use crate::scenario::{build_network, demand_rate, leader_safe_speed, ArrivalProcess, DemandProfile, RoadNetwork};
use crate::snapshot::Snapshot;
use crate::trust::{
    classify_cooperative, cooperation_factor, weighted_mean_trust, ClassifyParams,
    InteractionContext, InteractionRole, Kin, TrustMatrix,
};

/// Speed multiplier an aggressive driver targets while denying a gap.
const DENIAL_SPEED_FACTOR: f64 = 1.15;
/// Distance ahead within which an aggressive driver races a merger.
const DENIAL_RANGE: f64 = 30.0;

/// Per-vehicle behavioural parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriverTraits {
    pub style: DriverStyle,
    pub idm: IdmParams,
    pub mobil: MobilParams,
    /// Lag gap, in seconds of the new follower's travel, accepted when merging.
    pub critical_lag: f64,
    /// Lead gap, in seconds of own travel, accepted when merging.
    pub critical_lead: f64,
    /// Fraction by which critical gaps shrink as the acceleration lane runs out.
    pub merge_tolerance: f64,
}

/// Draws traits for a new vehicle. Both draws happen for every class so the
/// stream position does not depend on the class.
pub fn draw_traits(class: VehicleClass, cfg: &ScenarioConfig, rng: &mut RngStream) -> DriverTraits {
    let style = [DriverStyle::Aggressive, DriverStyle::Normal, DriverStyle::Cautious][rng.below(3)];
    let spread = (2.0 * rng.uniform() - 1.0) * cfg.drivers.speed_spread;
    if class == VehicleClass::Cav {
        return DriverTraits {
            style: DriverStyle::Normal,
            idm: cfg.idm,
            mobil: cfg.mobil,
            critical_lag: 1.0,
            critical_lead: 0.5,
            merge_tolerance: 0.6,
        };
    }
    let (headway, politeness, threshold, critical_lag, critical_lead, merge_tolerance) = match style {
        DriverStyle::Aggressive => (0.8, 0.0, 0.1, 0.6, 0.3, 1.0),
        DriverStyle::Normal => (1.0, cfg.mobil.politeness, cfg.mobil.threshold, 1.0, 0.5, 0.6),
        DriverStyle::Cautious => (1.25, 0.5, 0.5, 1.5, 0.8, 0.3),
    };
    DriverTraits {
        style,
        idm: IdmParams {
            time_headway: cfg.idm.time_headway * headway,
            desired_speed: cfg.idm.desired_speed * (1.0 + spread),
            ..cfg.idm
        },
        mobil: MobilParams {
            politeness,
            threshold,
            ..cfg.mobil
        },
        critical_lag,
        critical_lead,
        merge_tolerance,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Commitment {
    merger: VehicleId,
    strategy: FollowerStrategy,
    until: f64,
}

#[derive(Debug, Clone)]
struct Agent {
    traits: DriverTraits,
    rng: RngStream,
    steps: u64,
    history: Option<ObservationHistory>,
    action: (LateralAction, f64),
    pending: Option<(Vec<f32>, usize, f64)>,
    last_reward: Option<RewardBreakdown>,
    /// Lane this CAV currently signals toward.
    signal: Option<Lane>,
    commitment: Option<Commitment>,
    merge_opened: bool,
    collided: bool,
    jerk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub id: u64,
    pub class: &'static str,
    pub lane: String,
    pub x: f64,
    pub v: f64,
    pub a: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrustRow {
    pub t: f64,
    pub observer: u64,
    pub observed: u64,
    pub delta: u8,
    pub trust: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RewardRow {
    pub t: f64,
    pub id: u64,
    pub safety: f64,
    pub comfort: f64,
    pub efficiency: f64,
    pub self_total: f64,
    pub lambda: f64,
    pub coop: f64,
    pub total: f64,
}

/// Optional per-step records. Empty unless tracing is enabled.
#[derive(Debug, Clone, Default)]
pub struct Traces {
    pub trajectory: Vec<TrajectoryRow>,
    pub trust: Vec<TrustRow>,
    pub reward: Vec<RewardRow>,
    pub game: Vec<GameAudit>,
}

/// Crossings of one detector on one lane.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorLog {
    pub position: f64,
    pub lane: Lane,
    pub crossings: Vec<DetectorCrossing>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: EpisodeMetrics,
    pub log: EpisodeLog,
    pub detectors: Vec<DetectorLog>,
    pub traces: Traces,
    pub spawned: u64,
}

struct Entry {
    lane: Lane,
    x: f64,
    arrivals: ArrivalProcess,
    queue: VecDeque<(VehicleId, VehicleClass, f64)>,
}

struct Intent {
    idx: usize,
    target: Lane,
    commitment: Option<(VehicleId, FollowerStrategy)>,
    revalidate: bool,
}

pub struct World {
    pub cfg: ScenarioConfig,
    pub net: RoadNetwork,
    pub exec: Execution,
    /// Sample stochastic actions instead of the greedy policy.
    pub explore: bool,
    pub tracing: bool,
    /// Keep completed transitions for [`World::take_transitions`].
    pub record_transitions: bool,
    demand: DemandProfile,
    step: u64,
    next_id: u64,
    vehicles: Vec<VehicleState>,
    agents: Vec<Agent>,
    entries: Vec<Entry>,
    trust: TrustMatrix,
    trust_pre: Option<(Snapshot, BTreeMap<VehicleId, Lane>)>,
    policy: Option<EncoderParams>,
    log: EpisodeLog,
    merges: BTreeMap<VehicleId, MergeAttempt>,
    detectors: Vec<DetectorLog>,
    transitions: Vec<Transition>,
    traces: Traces,
    period: u64,
    trust_period: u64,
}

/// Parameters of the observation encoding for a scenario.
pub fn observe_params(cfg: &ScenarioConfig) -> ObserveParams {
    ObserveParams {
        scan_range: cfg.observation.scan_range,
        group_window: cfg.observation.group_window,
        desired_speed: cfg.idm.desired_speed,
        mainline_lanes: cfg.network.mainline_lanes,
    }
}

/// Width of one observation frame for a scenario.
pub fn frame_dim(cfg: &ScenarioConfig) -> usize {
    observation_dim(cfg.network.mainline_lanes as usize + 1)
}

/// Untrained policy for a scenario: seeded recurrent weights and a zero head,
/// so lateral choices are uniform (greedy keeps the lane) and the residual is
/// zero.
pub fn initial_policy(cfg: &ScenarioConfig, hidden: usize) -> EncoderParams {
    EncoderParams::init(frame_dim(cfg), hidden, &mut RngStream::new(cfg.seed, "policy/init"))
}

impl World {
    pub fn new(cfg: ScenarioConfig, policy: Option<EncoderParams>) -> Result<Self> {
        cfg.validate()?;
        let net = build_network(&cfg.network)?;
        let demand = DemandProfile::new(cfg.demand.clone(), cfg.horizon())?;
        if let Some(p) = &policy {
            if p.input != frame_dim(&cfg) {
                return Err(Error::config(format!(
                    "policy expects {} observation features, scenario provides {}",
                    p.input,
                    frame_dim(&cfg)
                )));
            }
        }
        let policy = if cfg.controller.uses_policy() { policy } else { None };
        if cfg.controller.uses_policy() && policy.is_none() {
            return Err(Error::config(format!(
                "controller `{}` needs policy parameters",
                cfg.controller.as_str()
            )));
        }
        let entries = net
            .entries()
            .into_iter()
            .map(|(lane, x)| Entry {
                lane,
                x,
                arrivals: ArrivalProcess::new(cfg.seed, lane),
                queue: VecDeque::new(),
            })
            .collect();
        let mut detectors = Vec::new();
        for &p in &net.detector_positions {
            for k in 0..net.mainline_lanes {
                detectors.push(DetectorLog {
                    position: p,
                    lane: Lane::Main(k),
                    crossings: Vec::new(),
                });
            }
        }
        detectors.push(DetectorLog {
            position: net.ramp_detector,
            lane: Lane::Ramp,
            crossings: Vec::new(),
        });
        let steps_of = |s: f64| ((s / cfg.dt).round() as u64).max(1);
        Ok(Self {
            period: steps_of(cfg.cav.decision_period),
            trust_period: steps_of(cfg.trust.eval_period),
            trust: TrustMatrix::new(cfg.trust.initial),
            log: EpisodeLog {
                measured: cfg.duration,
                ..Default::default()
            },
            net,
            demand,
            exec: Execution::default(),
            explore: false,
            tracing: false,
            record_transitions: false,
            step: 0,
            next_id: 0,
            vehicles: Vec::new(),
            agents: Vec::new(),
            entries,
            trust_pre: None,
            policy,
            merges: BTreeMap::new(),
            detectors,
            transitions: Vec::new(),
            traces: Traces::default(),
            cfg,
        })
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.cfg.dt
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.cfg.steps()
    }

    pub fn vehicles(&self) -> &[VehicleState] {
        &self.vehicles
    }

    pub fn trust(&self) -> &TrustMatrix {
        &self.trust
    }

    pub fn log(&self) -> &EpisodeLog {
        &self.log
    }

    pub fn set_policy(&mut self, policy: EncoderParams) {
        if self.cfg.controller.uses_policy() {
            self.policy = Some(policy);
        }
    }

    /// Transitions completed since the last call.
    pub fn take_transitions(&mut self) -> Vec<Transition> {
        std::mem::take(&mut self.transitions)
    }

    /// Places a vehicle directly on the road, bypassing demand. Used to set
    /// up controlled situations.
    pub fn insert_vehicle(&mut self, class: VehicleClass, lane: Lane, position: f64, speed: f64) -> VehicleId {
        let id = VehicleId(self.next_id);
        self.next_id += 1;
        let t = self.time();
        self.push_vehicle(id, class, lane, position, speed, t);
        id
    }

    fn push_vehicle(&mut self, id: VehicleId, class: VehicleClass, lane: Lane, x: f64, speed: f64, t: f64) {
        let base = RngStream::new(self.cfg.seed, format!("vehicle/{}", id.0));
        let traits = draw_traits(class, &self.cfg, &mut base.child("traits"));
        let history = (class == VehicleClass::Cav && self.policy.is_some())
            .then(|| ObservationHistory::new(self.cfg.observation.history));
        // queues release ids out of order, keep both vecs id-sorted
        let at = self.vehicles.partition_point(|v| v.id < id);
        self.vehicles.insert(at, VehicleState {
            id,
            class,
            lane,
            position: x,
            speed,
            accel: 0.0,
            length: self.cfg.drivers.vehicle_length,
            lane_change_cooldown: 0.0,
            origin: if lane == Lane::Ramp { Origin::Ramp } else { Origin::Mainline },
            spawn_time: t,
        });
        self.agents.insert(at, Agent {
            traits,
            rng: base.child("policy"),
            steps: 0,
            history,
            action: (LateralAction::KeepLane, 0.0),
            pending: None,
            last_reward: None,
            signal: None,
            commitment: None,
            merge_opened: false,
            collided: false,
            jerk: 0.0,
        });
    }

    fn snapshot(&self, t: f64) -> Snapshot {
        Snapshot::new(t, self.vehicles.clone(), self.net.lane_count())
    }

    /// Longitudinal models with the desired speed capped at the local limit,
    /// aligned with snapshot indices.
    fn capped_idms(&self, snap: &Snapshot) -> Vec<IdmParams> {
        snap.vehicles
            .iter()
            .zip(&self.agents)
            .map(|(v, a)| IdmParams {
                desired_speed: a.traits.idm.desired_speed.min(self.net.speed_limit(v.lane, v.position)),
                ..a.traits.idm
            })
            .collect()
    }

    fn spawn(&mut self, t: f64) -> Result<()> {
        let (main_rate, ramp_rate) = demand_rate(&self.demand, t)?;
        let penetration = self.cfg.penetration_at(t);
        let per_lane = main_rate / f64::from(self.net.mainline_lanes);
        let dt = self.cfg.dt;
        for e in &mut self.entries {
            let rate = if e.lane == Lane::Ramp { ramp_rate } else { per_lane };
            if let Some(class) = e.arrivals.draw(rate, dt, penetration) {
                e.queue.push_back((VehicleId(self.next_id), class, t));
                self.next_id += 1;
            }
        }
        for k in 0..self.entries.len() {
            let (lane, x0) = (self.entries[k].lane, self.entries[k].x);
            let Some(&(id, class, _)) = self.entries[k].queue.front() else {
                continue;
            };
            let leader = self
                .vehicles
                .iter()
                .filter(|v| v.lane == lane && v.position >= x0)
                .min_by(|a, b| a.position.total_cmp(&b.position));
            let gap = leader.map_or(f64::INFINITY, |l| l.rear() - x0);
            let s0 = self.cfg.idm.s0;
            if gap < s0 {
                continue;
            }
            let limit = self.net.speed_limit(lane, x0);
            let probe = draw_traits(
                class,
                &self.cfg,
                &mut RngStream::new(self.cfg.seed, format!("vehicle/{}", id.0)).child("traits"),
            );
            let safe = leader.map_or(f64::INFINITY, |l| leader_safe_speed(gap, l.speed, &probe.idm));
            let speed = limit.min(probe.idm.desired_speed).min(safe);
            self.entries[k].queue.pop_front();
            self.push_vehicle(id, class, lane, x0, speed, t);
        }
        Ok(())
    }

    fn policy_tick(&mut self, snap: &Snapshot) -> Result<()> {
        let Some(policy) = &self.policy else {
            return Ok(());
        };
        let op = observe_params(&self.cfg);
        for i in 0..self.vehicles.len() {
            if self.agents[i].history.is_none() {
                continue;
            }
            let frame = observe(snap, self.vehicles[i].id, &op)?.features(&op);
            let agent = &mut self.agents[i];
            let hist = agent.history.as_mut().expect("checked above");
            hist.push(frame);
            let state = hist.flatten();
            if let Some((s, lateral, a_long)) = agent.pending.take().filter(|_| self.record_transitions) {
                let reward = agent.last_reward.map_or(0.0, |r| r.total);
                self.transitions.push(Transition {
                    state: s,
                    lateral,
                    a_long,
                    reward,
                    next_state: state.clone(),
                    done: false,
                });
            }
            agent.pending = Some((state, 0, 0.0));
        }
        let agents = &self.agents;
        let outs = par::map_range(self.exec, agents.len(), |i| {
            agents[i]
                .history
                .as_ref()
                .map(|h| encode_history(h, policy).map(|h| policy_forward(&h, policy, self.cfg.cav.residual_accel_max)))
        });
        for (agent, out) in self.agents.iter_mut().zip(outs) {
            let Some(out) = out else {
                continue;
            };
            let out = out?;
            let (k, a) = if self.explore {
                sample_action(&out, self.cfg.cav.residual_accel_max, &mut agent.rng)
            } else {
                (greedy_lateral(&out.probs), out.mean_action)
            };
            agent.action = (LateralAction::from_index(k), a);
            if let Some(p) = agent.pending.as_mut() {
                p.1 = k;
                p.2 = a;
            }
        }
        Ok(())
    }

    fn lateral_intent(&self, snap: &Snapshot, idms: &[IdmParams], idx: usize) -> (Option<Lane>, Option<Intent>, Option<GameAudit>) {
        let v = &snap.vehicles[idx];
        let agent = &self.agents[idx];
        let net = &self.net;
        let mode = self.cfg.controller;
        let mandatory = must_merge(v.lane, v.position, net);
        let staggered = (self.step + v.id.0).is_multiple_of(self.period);
        if v.lane_change_cooldown > 0.0 || agent.collided || !(mandatory || staggered) {
            let signal = (v.class == VehicleClass::Cav && mandatory).then_some(Lane::Main(0));
            return (signal.or(agent.signal), None, None);
        }
        let human_like = v.class == VehicleClass::Hv || mode == ControllerMode::Rule;
        let intent = |target, commitment, revalidate| Intent {
            idx,
            target,
            commitment,
            revalidate,
        };
        if human_like {
            if mandatory {
                let tr = &agent.traits;
                let shrink = 1.0 - merge_urgency(v.position, net) * tr.merge_tolerance;
                let ok = gap_acceptable(
                    snap,
                    idx,
                    Lane::Main(0),
                    tr.critical_lag * shrink,
                    tr.critical_lead * shrink,
                    self.cfg.idm.s0,
                );
                return (None, ok.then(|| intent(Lane::Main(0), None, false)), None);
            }
            let choice = mobil_choice(snap, idx, idms, &agent.traits.mobil, net);
            return (None, choice.map(|l| intent(l, None, false)), None);
        }

        let (target, discretionary) = if mandatory {
            (Some(Lane::Main(0)), false)
        } else if v.lane == Lane::Ramp {
            (None, false)
        } else if mode.uses_policy() {
            (agent.action.0.target(v.lane, net.mainline_lanes), true)
        } else {
            (mobil_choice(snap, idx, idms, &agent.traits.mobil, net), true)
        };
        let Some(target) = target else {
            return (None, None, None);
        };
        if !mode.uses_game() {
            let ok = safety_check(snap, idx, target, idms, self.cfg.mobil.b_safe, net).ok;
            return (Some(target), ok.then(|| intent(target, None, true)), None);
        }
        let empty;
        let trust = if mode.uses_trust() {
            &self.trust
        } else {
            empty = TrustMatrix::new(self.cfg.trust.initial);
            &empty
        };
        let noise = match self.cfg.game.noncoop.noise {
            NoiseMode::Off => None,
            NoiseMode::Gumbel { .. } => Some(RngStream::new(self.cfg.seed, format!("game/{}/{}", v.id.0, self.step))),
        };
        let d = decide_lane_change(LaneChangeRequest {
            snapshot: snap,
            ego: idx,
            target,
            discretionary,
            urgency: merge_urgency(v.position, net),
            idms,
            net,
            trust,
            tau: self.cfg.trust.tau,
            game: &self.cfg.game,
            mobil: &self.cfg.mobil,
            scan_range: self.cfg.observation.scan_range,
            noise,
        });
        let it = d.change.then(|| intent(target, d.commitment, true));
        (Some(target), it, Some(d.audit))
    }

    /// Evaluates lane changes against `snap` and commits them serially.
    /// Returns per-index flags of vehicles that moved.
    fn lateral(&mut self, snap: &Snapshot, t: f64) -> Vec<bool> {
        let idms = self.capped_idms(snap);
        let results = par::map_range(self.exec, snap.len(), |i| self.lateral_intent(snap, &idms, i));
        let mut moved = vec![false; snap.len()];
        let mut committed_followers: Vec<VehicleId> = Vec::new();
        let mut live: Option<Snapshot> = None;
        let cooldown = self.cfg.cav.lane_change_cooldown;
        for (i, (signal, intent, audit)) in results.into_iter().enumerate() {
            if snap.vehicles[i].class == VehicleClass::Cav {
                self.agents[i].signal = signal;
            }
            if let (Some(a), true) = (audit, self.tracing) {
                self.traces.game.push(a);
            }
            let Some(it) = intent else {
                continue;
            };
            if moved[it.idx] {
                continue;
            }
            if it.revalidate {
                let view = live.get_or_insert_with(|| self.snapshot(t));
                if !safety_check(view, it.idx, it.target, &idms, self.cfg.mobil.b_safe, &self.net).ok {
                    continue;
                }
            }
            self.move_vehicle(it.idx, it.target, cooldown);
            moved[it.idx] = true;
            live = None;
            if let Some((fid, strategy)) = it.commitment {
                if committed_followers.contains(&fid) {
                    continue;
                }
                let Some(f) = snap.index_of(fid) else {
                    continue;
                };
                committed_followers.push(fid);
                let mut strategy = strategy;
                if strategy == FollowerStrategy::ChangeLane {
                    let left = self.vehicles[f].lane.left(self.net.mainline_lanes);
                    let view = self.snapshot(t);
                    match left {
                        Some(l)
                            if !moved[f]
                                && self.vehicles[f].lane_change_cooldown == 0.0
                                && safety_check(&view, f, l, &idms, self.cfg.mobil.b_safe, &self.net).ok =>
                        {
                            self.move_vehicle(f, l, cooldown);
                            moved[f] = true;
                        }
                        _ => strategy = FollowerStrategy::Decelerate,
                    }
                }
                self.agents[f].commitment = Some(Commitment {
                    merger: snap.vehicles[i].id,
                    strategy,
                    until: t + self.cfg.game.commitment,
                });
            }
        }
        moved
    }

    fn move_vehicle(&mut self, idx: usize, lane: Lane, cooldown: f64) {
        let v = &mut self.vehicles[idx];
        v.lane = lane;
        v.lane_change_cooldown = cooldown;
    }

    /// Ramp vehicle in the acceleration lane just ahead of `ego`, if any.
    fn signalling_merger(&self, snap: &Snapshot, idx: usize) -> Option<usize> {
        let ego = &snap.vehicles[idx];
        if ego.lane != Lane::Main(0) {
            return None;
        }
        let lo = ego.position.max(self.net.merge_zone_start);
        snap.in_window(Lane::Ramp, lo, ego.position + self.cfg.observation.scan_range)
            .iter()
            .copied()
            .find(|&m| snap.vehicles[m].position > ego.position)
    }

    fn accel_command(&self, snap: &Snapshot, idms: &[IdmParams], idx: usize, t: f64) -> f64 {
        let v = &snap.vehicles[idx];
        let agent = &self.agents[idx];
        let mode = self.cfg.controller;
        let idm = &idms[idx];
        let human_like = v.class == VehicleClass::Hv || mode == ControllerMode::Rule;
        let a_free = if human_like {
            accel_in_lane(snap, idx, v.lane, idm, &self.net)
        } else {
            cav_accel_in_lane(snap, idx, v.lane, idm, &self.net, self.cfg.cav.coolness)
        };
        let yield_to = |m: usize| {
            let mv = &snap.vehicles[m];
            let a_m = idm_or_emergency(v.speed, v.speed - mv.speed, mv.rear() - v.position, idm);
            a_free.min(a_m).max(-idm.b)
        };
        let merger = self.signalling_merger(snap, idx);

        let mut a = if human_like {
            match (merger, agent.traits.style) {
                (Some(m), DriverStyle::Cautious) => yield_to(m),
                (Some(m), DriverStyle::Normal)
                    if self.net.merge_zone_end() - snap.vehicles[m].position < self.cfg.drivers.urgent_distance =>
                {
                    yield_to(m)
                }
                (Some(m), DriverStyle::Aggressive) if snap.vehicles[m].position - v.position <= DENIAL_RANGE => {
                    let racing = IdmParams {
                        desired_speed: agent.traits.idm.desired_speed * DENIAL_SPEED_FACTOR,
                        ..*idm
                    };
                    accel_in_lane(snap, idx, v.lane, &racing, &self.net)
                }
                _ => a_free,
            }
        } else {
            let mut a = a_free;
            let committed = agent.commitment.filter(|c| c.until > t);
            if let Some(c) = committed {
                match c.strategy {
                    FollowerStrategy::Decelerate => {
                        if let Some(m) = snap.index_of(c.merger) {
                            let mv = &snap.vehicles[m];
                            if mv.position > v.position && (mv.lane == Lane::Ramp || mv.lane == v.lane) {
                                a = yield_to(m);
                            }
                        }
                    }
                    FollowerStrategy::Keep => a = a_free.min(0.0),
                    FollowerStrategy::Accelerate | FollowerStrategy::ChangeLane => {}
                }
            }
            if mode.uses_policy() {
                let residual = a + agent.action.1;
                let mut r = residual.clamp(-B_EMERGENCY, idm.a);
                let (leader, _) = snap.own_neighbours(idx);
                if let Some(l) = leader {
                    let lv = &snap.vehicles[l];
                    if lv.rear() - v.position < idm.desired_gap(v.speed, v.speed - lv.speed) {
                        r = r.min(a);
                    }
                }
                a = r;
            }
            a
        };
        if !human_like && agent.steps > 0 && a >= -idm.b {
            let j = self.cfg.cav.jerk_limit * self.cfg.dt;
            a = a.clamp(v.accel - j, v.accel + j);
        }
        a.max(-B_EMERGENCY)
    }

    /// Advances the world by one step.
    pub fn step(&mut self) -> Result<()> {
        let dt = self.cfg.dt;
        let t = self.time();
        let measuring = t >= self.cfg.warmup;
        self.spawn(t)?;

        let snap = self.snapshot(t);
        if self.step.is_multiple_of(self.period) && self.policy.is_some() {
            self.policy_tick(&snap)?;
        }
        let lanes_before: Vec<Lane> = self.vehicles.iter().map(|v| v.lane).collect();
        let moved = self.lateral(&snap, t);
        let snap = if moved.iter().any(|&m| m) { self.snapshot(t) } else { snap };

        let idms = self.capped_idms(&snap);
        let accels = par::map_range(self.exec, snap.len(), |i| self.accel_command(&snap, &idms, i, t));

        let t1 = (self.step + 1) as f64 * dt;
        let mut prev = Vec::with_capacity(self.vehicles.len());
        for (i, a) in accels.into_iter().enumerate() {
            let old = self.vehicles[i].clone();
            let new = step_kinematics(&old, a, dt);
            if !(new.position.is_finite() && new.speed.is_finite() && a.is_finite()) {
                return Err(Error::contract(format!(
                    "vehicle {} left the finite state space at t = {t}: x {}, v {}, a {a}",
                    old.id, new.position, new.speed
                )));
            }
            let agent = &mut self.agents[i];
            agent.jerk = if agent.steps > 0 { (a - old.accel) / dt } else { 0.0 };
            if measuring && agent.steps > 0 {
                self.log.jerk.add(old.class, agent.jerk);
            }
            agent.steps += 1;
            if agent.commitment.is_some_and(|c| c.until <= t1) {
                agent.commitment = None;
            }
            self.vehicles[i] = new;
            prev.push(old);
        }
        if self.tracing {
            for v in &self.vehicles {
                self.traces.trajectory.push(TrajectoryRow {
                    t: t1,
                    id: v.id.0,
                    class: v.class.as_str(),
                    lane: v.lane.label(),
                    x: v.position,
                    v: v.speed,
                    a: v.accel,
                });
            }
        }

        // collisions
        let events = detect_collisions(&self.vehicles, |id| {
            snap.index_of(id).is_some_and(|i| moved[i])
        });
        for e in &events {
            if measuring {
                self.log.collisions += 1;
            }
            for id in [e.leader, e.follower] {
                if let Some(i) = snap.index_of(id) {
                    self.agents[i].collided = true;
                }
                if let Some(m) = self.merges.get_mut(&id) {
                    m.collided = true;
                }
            }
        }

        // detectors
        let bottleneck = self.net.detector_positions.get(self.net.bottleneck_detector()).copied();
        for (old, new) in prev.iter().zip(&self.vehicles) {
            let (x0, x1) = (old.position, new.position);
            if x1 <= x0 {
                continue;
            }
            let frac = |p: f64| t + dt * (p - x0) / (x1 - x0);
            let crossing = |p: f64| DetectorCrossing {
                t: frac(p),
                speed: new.speed,
                length: new.length,
            };
            match new.lane {
                Lane::Ramp => {
                    let p = self.net.ramp_detector;
                    if old.lane == Lane::Ramp && x0 < p && p <= x1 {
                        let c = crossing(p);
                        self.detectors.last_mut().expect("ramp detector").crossings.push(c);
                    }
                }
                Lane::Main(k) => {
                    let pos = &self.net.detector_positions;
                    let a = pos.partition_point(|&p| p <= x0);
                    let b = pos.partition_point(|&p| p <= x1);
                    for d in a..b {
                        let c = crossing(pos[d]);
                        if Some(pos[d]) == bottleneck && c.t >= self.cfg.warmup {
                            self.log.bottleneck_crossings += 1;
                        }
                        let slot = d * self.net.mainline_lanes as usize + k as usize;
                        self.detectors[slot].crossings.push(c);
                    }
                }
            }
        }

        let post = self.snapshot(t1);
        self.track_merges(&post, &lanes_before, t1);

        self.step += 1;
        if self.cfg.controller.uses_trust() && self.step.is_multiple_of(self.trust_period) {
            self.trust_tick(&post, t1);
        }
        let removals: Vec<usize> = (0..self.vehicles.len())
            .filter(|&i| {
                self.agents[i].collided
                    || (self.vehicles[i].lane != Lane::Ramp && self.vehicles[i].position >= self.net.mainline_length)
            })
            .collect();
        let reward_step = self.step.is_multiple_of(self.period);
        if self.policy.is_some() && (reward_step || !removals.is_empty()) {
            self.rewards(&post, t1, reward_step);
        }
        self.remove(&removals, t1);
        Ok(())
    }

    fn track_merges(&mut self, post: &Snapshot, lanes_before: &[Lane], t1: f64) {
        for (i, v) in post.vehicles.iter().enumerate() {
            let was_ramp = lanes_before[i] == Lane::Ramp;
            if v.origin != Origin::Ramp {
                continue;
            }
            if !self.agents[i].merge_opened && v.position >= self.net.merge_zone_start && (was_ramp || v.lane == Lane::Ramp) {
                self.agents[i].merge_opened = true;
                let mut m = MergeAttempt::new(v.id, v.class, t1);
                m.collided = self.agents[i].collided;
                self.merges.insert(v.id, m);
            }
            let Some(m) = self.merges.get_mut(&v.id) else {
                continue;
            };
            if m.end.is_some() {
                continue;
            }
            let (leader, follower) = post.own_neighbours(i);
            if let Some(l) = leader {
                let lv = &post.vehicles[l];
                m.min_ttc = m.min_ttc.min(ttc(lv.rear() - v.position, v.speed - lv.speed));
            }
            if let Some(f) = follower {
                let fv = &post.vehicles[f];
                m.min_ttc = m.min_ttc.min(ttc(v.rear() - fv.position, fv.speed - v.speed));
            }
            if was_ramp && v.lane != Lane::Ramp && m.merged_at.is_none() {
                m.merged_at = Some(t1);
                let g = lane_gaps(post, i, v.lane);
                let lead = if v.speed > 0.0 { g.lead_gap / v.speed } else { f64::INFINITY };
                let lag = g
                    .follower
                    .map_or(f64::INFINITY, |f| {
                        let s = post.vehicles[f].speed;
                        if s > 0.0 { g.lag_gap / s } else { f64::INFINITY }
                    });
                let p = lead.min(lag);
                m.pet = p.is_finite().then_some(p.max(0.0));
            }
            if v.position > self.net.merge_zone_end() {
                m.end = Some(t1);
            }
        }
        let finished: Vec<VehicleId> = self
            .merges
            .iter()
            .filter(|(_, m)| m.end.is_some())
            .map(|(&id, _)| id)
            .collect();
        for id in finished {
            let m = self.merges.remove(&id).expect("listed above");
            self.close_merge(m);
        }
    }

    fn close_merge(&mut self, m: MergeAttempt) {
        if m.start >= self.cfg.warmup {
            self.log.merges.push(m);
        }
    }

    fn trust_tick(&mut self, post: &Snapshot, t1: f64) {
        let signals: BTreeMap<VehicleId, Lane> = post
            .vehicles
            .iter()
            .zip(&self.agents)
            .filter_map(|(v, a)| a.signal.map(|l| (v.id, l)))
            .collect();
        let Some((pre, pre_signals)) = self.trust_pre.replace((post.clone(), signals)) else {
            return;
        };
        let params = ClassifyParams {
            scan_range: self.cfg.observation.scan_range,
            d_safe: self.cfg.reward.d_safe,
            idm: self.cfg.idm,
            denial_speed_gain: self.cfg.trust.denial_speed_gain,
        };
        let kin = |v: &VehicleState| Kin {
            lane: v.lane,
            position: v.position,
            speed: v.speed,
            length: v.length,
        };
        let scan = self.cfg.observation.scan_range;
        let lanes = self.net.lanes();
        let judged = par::map_range(self.exec, pre.len(), |i| {
            let obs = &pre.vehicles[i];
            let mut out = Vec::new();
            if obs.class != VehicleClass::Cav {
                return out;
            }
            let Some(obs_post) = post.get(obs.id) else {
                return out;
            };
            for &lane in &lanes {
                let adjacent = lane.slot().abs_diff(obs.lane.slot()) == 1;
                if lane != obs.lane && !adjacent {
                    continue;
                }
                for &j in pre.in_window(lane, obs.position - scan, obs.position + scan) {
                    if j == i {
                        continue;
                    }
                    let other = &pre.vehicles[j];
                    let Some(other_post) = post.get(other.id) else {
                        continue;
                    };
                    let role = if lane == obs.lane {
                        if other.position > obs.position {
                            InteractionRole::Leader
                        } else {
                            InteractionRole::Follower
                        }
                    } else {
                        InteractionRole::Adjacent
                    };
                    let ctx = InteractionContext {
                        role: Some(role),
                        observer_pre: kin(obs),
                        observed_pre: kin(other),
                        observer_post: kin(obs_post),
                        observed_post: kin(other_post),
                        observer_intent: pre_signals.get(&obs.id).copied(),
                    };
                    if let Some(d) = classify_cooperative(&ctx, &params) {
                        out.push((obs.id, other.id, d));
                    }
                }
            }
            out
        });
        let judgements: Vec<(VehicleId, VehicleId, u8)> = judged.into_iter().flatten().collect();
        let values = self.trust.commit(&judgements, &self.cfg.trust);
        if self.tracing {
            for (&(i, j, d), v) in judgements.iter().zip(values) {
                self.traces.trust.push(TrustRow {
                    t: t1,
                    observer: i.0,
                    observed: j.0,
                    delta: d,
                    trust: v,
                });
            }
        }
    }

    fn rewards(&mut self, post: &Snapshot, t1: f64, all: bool) {
        let p = &self.cfg.reward;
        let selfs: Vec<RewardBreakdown> = (0..post.len())
            .map(|i| {
                let v = &post.vehicles[i];
                let headway = post
                    .own_neighbours(i)
                    .0
                    .map_or(f64::INFINITY, |l| post.vehicles[l].rear() - v.position);
                self_reward(headway, self.agents[i].jerk, v.speed, p)
            })
            .collect();
        let scan = self.cfg.observation.scan_range;
        let trust_on = self.cfg.controller.uses_trust();
        for i in 0..post.len() {
            let v = &post.vehicles[i];
            let agent = &self.agents[i];
            if agent.history.is_none() {
                continue;
            }
            let leaving = agent.collided || (v.lane != Lane::Ramp && v.position >= self.net.mainline_length);
            if !(all || leaving) {
                continue;
            }
            let mut nb = Vec::new();
            for lane in self.net.lanes() {
                for &j in post.in_window(lane, v.position - scan, v.position + scan) {
                    if j != i {
                        nb.push((self.trust.get(v.id, post.vehicles[j].id), selfs[j].self_total));
                    }
                }
            }
            let lambda = if trust_on {
                weighted_mean_trust(nb.iter().map(|(t, _)| *t))
                    .map_or(0.0, |m| cooperation_factor(m, self.cfg.trust.tau))
            } else {
                0.0
            };
            let r = selfs[i].blend(coop_reward(&nb), lambda);
            if self.tracing {
                self.traces.reward.push(RewardRow {
                    t: t1,
                    id: v.id.0,
                    safety: r.safety,
                    comfort: r.comfort,
                    efficiency: r.efficiency,
                    self_total: r.self_total,
                    lambda: r.lambda,
                    coop: r.coop,
                    total: r.total,
                });
            }
            self.agents[i].last_reward = Some(r);
        }
    }

    fn remove(&mut self, idxs: &[usize], t1: f64) {
        for &i in idxs.iter().rev() {
            let v = self.vehicles.remove(i);
            let mut agent = self.agents.remove(i);
            if v.lane != Lane::Ramp && v.position >= self.net.mainline_length && !agent.collided && t1 >= self.cfg.warmup {
                self.log.trips.push(Trip {
                    vehicle: v.id,
                    class: v.class,
                    origin: v.origin,
                    spawn: v.spawn_time,
                    exit: t1,
                });
            }
            if let Some(mut m) = self.merges.remove(&v.id) {
                m.end = Some(t1);
                self.close_merge(m);
            }
            let pending = agent.pending.take().filter(|_| self.record_transitions);
            if let (Some((s, lateral, a_long)), Some(h)) = (pending, agent.history.as_mut()) {
                self.transitions.push(Transition {
                    state: s,
                    lateral,
                    a_long,
                    reward: agent.last_reward.map_or(0.0, |r| r.total),
                    next_state: h.flatten(),
                    done: true,
                });
            }
            self.trust.purge(v.id);
        }
        // trips are pushed in reverse index order above
        let n = idxs.len().min(self.log.trips.len());
        let tail = self.log.trips.len() - n;
        self.log.trips[tail..].sort_by_key(|tr| tr.vehicle);
    }

    /// Runs the remaining steps.
    pub fn run(&mut self) -> Result<()> {
        while !self.is_finished() {
            self.step()?;
        }
        Ok(())
    }

    /// Closes open merge attempts and summarises the run.
    pub fn finish(mut self) -> RunOutput {
        let t = self.time();
        let open: Vec<MergeAttempt> = std::mem::take(&mut self.merges).into_values().collect();
        for mut m in open {
            m.end = Some(t);
            self.close_merge(m);
        }
        self.log.merges.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.vehicle.cmp(&b.vehicle)));
        RunOutput {
            metrics: episode_metrics(&self.log, self.cfg.metrics.ttc_threshold),
            log: self.log,
            detectors: self.detectors,
            traces: self.traces,
            spawned: self.next_id,
        }
    }
}
