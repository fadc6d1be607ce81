//! Pairwise trust held by CAVs toward their neighbours.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dynamics::{idm_acceleration, IdmParams, Lane, VehicleId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrustParams {
    /// Smoothing factor α̂ in (0, 1).
    pub alpha_hat: f64,
    /// Cooperation threshold τ in [0, 1).
    pub tau: f64,
    /// Trust assigned on first contact.
    pub initial: f64,
    /// Seconds between cooperativeness evaluations of one pair.
    pub eval_period: f64,
    /// Speed gain over one evaluation period that counts as accelerating
    /// into a closing gap, m/s.
    pub denial_speed_gain: f64,
}

impl Default for TrustParams {
    fn default() -> Self {
        Self {
            alpha_hat: 0.6,
            tau: 0.4,
            initial: 0.5,
            eval_period: 1.0,
            denial_speed_gain: 0.1,
        }
    }
}

impl TrustParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_hat > 0.0 && self.alpha_hat < 1.0) {
            return Err(Error::config(format!("trust.alpha_hat must lie in (0, 1), got {}", self.alpha_hat)));
        }
        if !(self.tau >= 0.0 && self.tau < 1.0) {
            return Err(Error::config(format!("trust.tau must lie in [0, 1), got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.initial) {
            return Err(Error::config(format!("trust.initial must lie in [0, 1], got {}", self.initial)));
        }
        if !(self.eval_period > 0.0) {
            return Err(Error::config("trust.eval_period must be > 0"));
        }
        Ok(())
    }
}

/// Exponentially smoothed trust update.
pub fn update_trust(trust: f64, delta: u8, params: &TrustParams) -> f64 {
    let d = if delta > 0 { 1.0 } else { 0.0 };
    ((1.0 - params.alpha_hat) * trust + params.alpha_hat * d).clamp(0.0, 1.0)
}

/// Blend weight λ between self-interested and cooperative reward.
pub fn cooperation_factor(trust: f64, tau: f64) -> f64 {
    ((trust - tau) / (1.0 - tau)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameType {
    Cooperative,
    NonCooperative,
}

pub fn game_type(trust: f64, tau: f64) -> GameType {
    if trust >= tau {
        GameType::Cooperative
    } else {
        GameType::NonCooperative
    }
}

/// Trust-weighted mean `Σ T² / Σ T` over a neighbourhood, or `None` when the
/// neighbourhood carries no trust mass.
pub fn weighted_mean_trust(trusts: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (num, den) = trusts
        .into_iter()
        .fold((0.0, 0.0), |(n, d), t| (n + t * t, d + t));
    (den > 0.0).then(|| num / den)
}

/// Sparse trust map keyed by (observer CAV, observed vehicle).
#[derive(Debug, Clone, Default)]
pub struct TrustMatrix {
    entries: BTreeMap<(VehicleId, VehicleId), f64>,
    initial: f64,
}

impl TrustMatrix {
    pub fn new(initial: f64) -> Self {
        Self {
            entries: BTreeMap::new(),
            initial,
        }
    }

    /// Stored trust, or the first-contact value for unseen pairs.
    pub fn get(&self, observer: VehicleId, observed: VehicleId) -> f64 {
        self.entries
            .get(&(observer, observed))
            .copied()
            .unwrap_or(self.initial)
    }

    pub fn contains(&self, observer: VehicleId, observed: VehicleId) -> bool {
        self.entries.contains_key(&(observer, observed))
    }

    /// Creates the entry on first contact and returns the current value.
    pub fn touch(&mut self, observer: VehicleId, observed: VehicleId) -> f64 {
        *self.entries.entry((observer, observed)).or_insert(self.initial)
    }

    pub fn set(&mut self, observer: VehicleId, observed: VehicleId, value: f64) {
        debug_assert!((0.0..=1.0).contains(&value));
        self.entries.insert((observer, observed), value.clamp(0.0, 1.0));
    }

    /// Applies a batch of `(observer, observed, δ)` judgements computed from
    /// one snapshot. Returns the updated values in input order.
    pub fn commit(&mut self, judgements: &[(VehicleId, VehicleId, u8)], params: &TrustParams) -> Vec<f64> {
        judgements
            .iter()
            .map(|&(i, j, delta)| {
                let t = update_trust(self.get(i, j), delta, params);
                self.set(i, j, t);
                t
            })
            .collect()
    }

    /// Drops every entry that mentions `id`.
    pub fn purge(&mut self, id: VehicleId) {
        self.entries.retain(|&(i, j), _| i != id && j != id);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (VehicleId, VehicleId, f64)> + '_ {
        self.entries.iter().map(|(&(i, j), &t)| (i, j, t))
    }
}

/// Kinematic slice of one vehicle as seen in a snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kin {
    pub lane: Lane,
    pub position: f64,
    pub speed: f64,
    pub length: f64,
}

impl Kin {
    pub fn rear(&self) -> f64 {
        self.position - self.length
    }
}

/// Bumper-to-bumper longitudinal distance regardless of lane.
fn bumper_gap(a: &Kin, b: &Kin) -> f64 {
    if a.position >= b.position {
        a.rear() - b.position
    } else {
        b.rear() - a.position
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InteractionRole {
    Leader,
    Follower,
    /// Immediate neighbour in an adjacent lane: a potential cut-in or the
    /// counterpart of a merge.
    Adjacent,
}

/// Everything the cooperativeness rule needs about one observer/observed pair
/// across one evaluation period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteractionContext {
    pub role: Option<InteractionRole>,
    pub observer_pre: Kin,
    pub observed_pre: Kin,
    pub observer_post: Kin,
    pub observed_post: Kin,
    /// Lane the observer was signalling toward at the start of the period.
    pub observer_intent: Option<Lane>,
}

#[derive(Debug, Clone, Copy)]
pub struct ClassifyParams {
    pub scan_range: f64,
    pub d_safe: f64,
    pub idm: IdmParams,
    pub denial_speed_gain: f64,
}

/// Binary cooperativeness judgement δ, or `None` when the pair was not
/// interacting (out of scan range or no role) and trust must stay untouched.
///
/// δ = 0 when any of these hold:
/// * the observed vehicle cut into the observer's lane leaving a gap below
///   `d_safe`;
/// * as the observer's leader it forces an IDM response harsher than `-b`;
/// * the observer signalled toward the observed vehicle's lane and the
///   observed vehicle sped up while the gap between them was closing.
pub fn classify_cooperative(ctx: &InteractionContext, params: &ClassifyParams) -> Option<u8> {
    ctx.role?;
    if (ctx.observed_pre.position - ctx.observer_pre.position).abs() > params.scan_range {
        return None;
    }

    let cut_in = ctx.observed_pre.lane != ctx.observer_pre.lane
        && ctx.observed_post.lane == ctx.observer_post.lane
        && bumper_gap(&ctx.observer_post, &ctx.observed_post) < params.d_safe;
    if cut_in {
        return Some(0);
    }

    let leads_post = ctx.observed_post.lane == ctx.observer_post.lane
        && ctx.observed_post.position > ctx.observer_post.position;
    if leads_post {
        let gap = ctx.observed_post.rear() - ctx.observer_post.position;
        let forced = match idm_acceleration(
            ctx.observer_post.speed,
            ctx.observer_post.speed - ctx.observed_post.speed,
            gap,
            &params.idm,
        ) {
            Ok(a) => a < -params.idm.b,
            Err(_) => true,
        };
        if forced {
            return Some(0);
        }
    }

    if ctx.observer_intent == Some(ctx.observed_pre.lane) {
        let closing = bumper_gap(&ctx.observer_post, &ctx.observed_post)
            < bumper_gap(&ctx.observer_pre, &ctx.observed_pre);
        let sped_up = ctx.observed_post.speed > ctx.observed_pre.speed + params.denial_speed_gain;
        if closing && sped_up {
            return Some(0);
        }
    }
    Some(1)
}
