//! Observation vectors, sliding histories, the recurrent encoder and the
//! policy head.
//!
//! Observation layout (`D = 2 + L + 1 + 18 + 2` for `L` lane slots):
//!
//! | block | entries |
//! |-------|---------|
//! | ego   | speed, acceleration, lane one-hot, ramp-origin flag |
//! | local | 6 slots of (presence, Δx, Δv) in the order same-lane leader, same-lane follower, left leader, left follower, right leader, right follower |
//! | group | density (veh/km/lane), mean speed |
//!
//! Absent slots hold `(0, d_s, 0)`. Normalised features divide distances by
//! the scan range, speeds by the desired speed and density by 100.
//!
//! The recurrent cell is a standard four-gate LSTM whose weight matrix has
//! shape `4H x (D + H)` with gate blocks in the order input, forget, output,
//! candidate. The policy head is one affine map `H -> 5` producing three
//! lateral logits, the pre-squash longitudinal mean and its log standard
//! deviation.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::dynamics::{Lane, Origin, VehicleId};
use crate::error::{Error, Result};
use crate::nn::{affine, affine_backward, init_uniform, sigmoid, TensorRecord};
use crate::rng::RngStream;
use crate::snapshot::Snapshot;

pub const SLOTS: usize = 6;
pub const HEAD_OUT: usize = 5;
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LateralAction {
    KeepLane,
    ChangeLeft,
    ChangeRight,
}

impl LateralAction {
    pub const ALL: [LateralAction; 3] = [
        LateralAction::KeepLane,
        LateralAction::ChangeLeft,
        LateralAction::ChangeRight,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }

    pub fn target(self, lane: Lane, mainline_lanes: u8) -> Option<Lane> {
        match self {
            LateralAction::KeepLane => None,
            LateralAction::ChangeLeft => lane.left(mainline_lanes),
            LateralAction::ChangeRight => lane.right(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObserveParams {
    pub scan_range: f64,
    pub group_window: f64,
    pub desired_speed: f64,
    pub mainline_lanes: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighbourSlot {
    pub present: bool,
    pub dx: f64,
    pub dv: f64,
}

impl NeighbourSlot {
    pub fn absent(scan_range: f64) -> Self {
        Self {
            present: false,
            dx: scan_range,
            dv: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationVector {
    pub speed: f64,
    pub accel: f64,
    pub lane_onehot: Vec<f64>,
    pub ramp_origin: bool,
    pub slots: [NeighbourSlot; SLOTS],
    pub density: f64,
    pub mean_speed: f64,
}

pub fn observation_dim(lane_slots: usize) -> usize {
    2 + lane_slots + 1 + 3 * SLOTS + 2
}

impl ObservationVector {
    pub fn features(&self, p: &ObserveParams) -> Vec<f64> {
        let mut f = Vec::with_capacity(observation_dim(self.lane_onehot.len()));
        f.push(self.speed / p.desired_speed);
        f.push(self.accel);
        f.extend_from_slice(&self.lane_onehot);
        f.push(if self.ramp_origin { 1.0 } else { 0.0 });
        for s in &self.slots {
            f.push(if s.present { 1.0 } else { 0.0 });
            f.push(s.dx / p.scan_range);
            f.push(s.dv / p.desired_speed);
        }
        f.push(self.density / 100.0);
        f.push(self.mean_speed / p.desired_speed);
        f
    }
}

/// Builds the observation of vehicle `agent` from a snapshot.
pub fn observe(snapshot: &Snapshot, agent: VehicleId, p: &ObserveParams) -> Result<ObservationVector> {
    let idx = snapshot
        .index_of(agent)
        .ok_or_else(|| Error::contract(format!("observe: vehicle {} is not on the road", agent.0)))?;
    let ego = &snapshot.vehicles[idx];
    let slot = |j: Option<usize>| -> NeighbourSlot {
        match j {
            Some(j) => {
                let o = &snapshot.vehicles[j];
                let dx = o.position - ego.position;
                if dx.abs() <= p.scan_range {
                    NeighbourSlot {
                        present: true,
                        dx,
                        dv: o.speed - ego.speed,
                    }
                } else {
                    NeighbourSlot::absent(p.scan_range)
                }
            }
            None => NeighbourSlot::absent(p.scan_range),
        }
    };
    let (lead, follow) = snapshot.own_neighbours(idx);
    let side = |lane: Option<Lane>| match lane {
        Some(l) => snapshot.neighbours_at(l, ego.position, ego.id),
        None => (None, None),
    };
    let (ll, lf) = side(ego.lane.left(p.mainline_lanes));
    let (rl, rf) = side(ego.lane.right());
    let slots = [slot(lead), slot(follow), slot(ll), slot(lf), slot(rl), slot(rf)];

    let (lo, hi) = (ego.position - p.group_window, ego.position + p.group_window);
    let mut count = 0usize;
    let mut speed_sum = 0.0;
    for s in 0..snapshot.lane_slots() {
        let lane = if s == 0 { Lane::Ramp } else { Lane::Main((s - 1) as u8) };
        for &j in snapshot.in_window(lane, lo, hi) {
            if j != idx {
                count += 1;
                speed_sum += snapshot.vehicles[j].speed;
            }
        }
    }
    let km = 2.0 * p.group_window / 1000.0;
    let mut lane_onehot = vec![0.0; snapshot.lane_slots()];
    lane_onehot[ego.lane.slot()] = 1.0;
    Ok(ObservationVector {
        speed: ego.speed,
        accel: ego.accel,
        lane_onehot,
        ramp_origin: ego.origin == Origin::Ramp,
        slots,
        density: count as f64 / km / f64::from(p.mainline_lanes),
        mean_speed: if count > 0 { speed_sum / count as f64 } else { 0.0 },
    })
}

/// Ring buffer of the last `k + 1` feature frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationHistory {
    window: usize,
    frames: VecDeque<Vec<f64>>,
}

impl ObservationHistory {
    pub fn new(k: usize) -> Self {
        Self {
            window: k,
            frames: VecDeque::with_capacity(k + 1),
        }
    }

    pub fn push(&mut self, frame: Vec<f64>) {
        if self.frames.len() == self.window + 1 {
            self.frames.pop_front();
        }
        self.frames.push_back(frame);
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    /// Exactly `k + 1` frames, oldest first, padding with the earliest.
    pub fn frames(&self) -> Vec<&[f64]> {
        let Some(first) = self.frames.front() else {
            return Vec::new();
        };
        let pad = self.window + 1 - self.frames.len();
        std::iter::repeat_n(first.as_slice(), pad)
            .chain(self.frames.iter().map(Vec::as_slice))
            .collect()
    }

    /// Padded frames flattened into one buffer (the replay storage format).
    pub fn flatten(&self) -> Vec<f32> {
        self.frames().into_iter().flatten().map(|&x| x as f32).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub input: usize,
    pub hidden: usize,
    /// `4H x (D + H)` row-major.
    pub lstm_w: Vec<f64>,
    pub lstm_b: Vec<f64>,
    /// `5 x H` row-major.
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
}

impl EncoderParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            input,
            hidden,
            lstm_w: vec![0.0; 4 * hidden * (input + hidden)],
            lstm_b: vec![0.0; 4 * hidden],
            head_w: vec![0.0; HEAD_OUT * hidden],
            head_b: vec![0.0; HEAD_OUT],
        }
    }

    /// Random recurrent weights with forget bias 1 and a zero head, so an
    /// untrained policy is uniform over lateral actions with zero mean.
    pub fn init(input: usize, hidden: usize, rng: &mut RngStream) -> Self {
        let mut p = Self::zeros(input, hidden);
        init_uniform(&mut p.lstm_w, input + hidden, rng);
        for b in &mut p.lstm_b[hidden..2 * hidden] {
            *b = 1.0;
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input, self.hidden)
    }

    pub fn buffers_mut(&mut self) -> [&mut [f64]; 4] {
        [&mut self.lstm_w, &mut self.lstm_b, &mut self.head_w, &mut self.head_b]
    }

    pub fn buffers(&self) -> [&[f64]; 4] {
        [&self.lstm_w, &self.lstm_b, &self.head_w, &self.head_b]
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.buffers_mut().into_iter().zip(other.buffers()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn tensors(&self, prefix: &str) -> Vec<TensorRecord> {
        let (d, h) = (self.input, self.hidden);
        vec![
            TensorRecord {
                name: format!("{prefix}lstm.w"),
                shape: vec![4 * h, d + h],
                data: self.lstm_w.clone(),
            },
            TensorRecord {
                name: format!("{prefix}lstm.b"),
                shape: vec![4 * h],
                data: self.lstm_b.clone(),
            },
            TensorRecord {
                name: format!("{prefix}head.w"),
                shape: vec![HEAD_OUT, h],
                data: self.head_w.clone(),
            },
            TensorRecord {
                name: format!("{prefix}head.b"),
                shape: vec![HEAD_OUT],
                data: self.head_b.clone(),
            },
        ]
    }

    pub fn from_checkpoint(ck: &crate::nn::Checkpoint, prefix: &str, input: usize, hidden: usize) -> Result<Self> {
        let (d, h) = (input, hidden);
        Ok(Self {
            input,
            hidden,
            lstm_w: ck.take(&format!("{prefix}lstm.w"), &[4 * h, d + h])?,
            lstm_b: ck.take(&format!("{prefix}lstm.b"), &[4 * h])?,
            head_w: ck.take(&format!("{prefix}head.w"), &[HEAD_OUT, h])?,
            head_b: ck.take(&format!("{prefix}head.b"), &[HEAD_OUT])?,
        })
    }
}

/// Intermediate values of one cell step, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct StepCache {
    xh: Vec<f64>,
    gates: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

fn cell_forward(x: &[f64], h: &[f64], c: &[f64], p: &EncoderParams) -> Result<(Vec<f64>, Vec<f64>, StepCache)> {
    let hs = p.hidden;
    if x.len() != p.input || h.len() != hs || c.len() != hs {
        return Err(Error::contract(format!(
            "recurrent step: got input {} / state {},{} for a cell of input {} and hidden {hs}",
            x.len(),
            h.len(),
            c.len(),
            p.input
        )));
    }
    let mut xh = Vec::with_capacity(p.input + hs);
    xh.extend_from_slice(x);
    xh.extend_from_slice(h);
    let mut z = vec![0.0; 4 * hs];
    affine(&p.lstm_w, &p.lstm_b, &xh, &mut z);
    for v in &mut z[..3 * hs] {
        *v = sigmoid(*v);
    }
    for v in &mut z[3 * hs..] {
        *v = v.tanh();
    }
    let mut c_new = vec![0.0; hs];
    let mut h_new = vec![0.0; hs];
    let mut tanh_c = vec![0.0; hs];
    for u in 0..hs {
        let (i, f, o, g) = (z[u], z[hs + u], z[2 * hs + u], z[3 * hs + u]);
        c_new[u] = f * c[u] + i * g;
        tanh_c[u] = c_new[u].tanh();
        h_new[u] = o * tanh_c[u];
    }
    Ok((
        h_new,
        c_new,
        StepCache {
            xh,
            gates: z,
            c_prev: c.to_vec(),
            tanh_c,
        },
    ))
}

/// One LSTM step: `(h, c) -> (h', c')`.
pub fn recurrent_step(x: &[f64], h: &[f64], c: &[f64], params: &EncoderParams) -> Result<(Vec<f64>, Vec<f64>)> {
    cell_forward(x, h, c, params).map(|(h, c, _)| (h, c))
}

/// Backward through one step. Accumulates parameter gradients into `grad`
/// and returns `(dx, dh_prev, dc_prev)`.
pub fn recurrent_step_backward(
    cache: &StepCache,
    dh: &[f64],
    dc_next: &[f64],
    params: &EncoderParams,
    grad: &mut EncoderParams,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hs = params.hidden;
    let z = &cache.gates;
    let mut dz = vec![0.0; 4 * hs];
    let mut dc_prev = vec![0.0; hs];
    for u in 0..hs {
        let (i, f, o, g) = (z[u], z[hs + u], z[2 * hs + u], z[3 * hs + u]);
        let tc = cache.tanh_c[u];
        let d_o = dh[u] * tc;
        let dc = dc_next[u] + dh[u] * o * (1.0 - tc * tc);
        dz[u] = dc * g * i * (1.0 - i);
        dz[hs + u] = dc * cache.c_prev[u] * f * (1.0 - f);
        dz[2 * hs + u] = d_o * o * (1.0 - o);
        dz[3 * hs + u] = dc * i * (1.0 - g * g);
        dc_prev[u] = dc * f;
    }
    let mut dxh = vec![0.0; params.input + hs];
    affine_backward(&params.lstm_w, &cache.xh, &dz, &mut grad.lstm_w, &mut grad.lstm_b, &mut dxh);
    let dh_prev = dxh.split_off(params.input);
    (dxh, dh_prev, dc_prev)
}

/// Forward pass over a history with every step cached.
#[derive(Debug, Clone)]
pub struct EncodedHistory {
    pub h: Vec<f64>,
    steps: Vec<StepCache>,
}

pub fn encode_frames(frames: &[&[f64]], params: &EncoderParams) -> Result<EncodedHistory> {
    if frames.is_empty() {
        return Err(Error::contract("encode_history: empty history"));
    }
    let mut h = vec![0.0; params.hidden];
    let mut c = vec![0.0; params.hidden];
    let mut steps = Vec::with_capacity(frames.len());
    for x in frames {
        let (hn, cn, cache) = cell_forward(x, &h, &c, params)?;
        h = hn;
        c = cn;
        steps.push(cache);
    }
    Ok(EncodedHistory { h, steps })
}

/// Folds the cell over the padded history from a zero state.
pub fn encode_history(history: &ObservationHistory, params: &EncoderParams) -> Result<Vec<f64>> {
    encode_frames(&history.frames(), params).map(|e| e.h)
}

/// Backpropagation through time from a gradient on the final hidden state.
pub fn encode_backward(enc: &EncodedHistory, dh: &[f64], params: &EncoderParams, grad: &mut EncoderParams) {
    let mut dh = dh.to_vec();
    let mut dc = vec![0.0; params.hidden];
    for cache in enc.steps.iter().rev() {
        let (_, dh_prev, dc_prev) = recurrent_step_backward(cache, &dh, &dc, params, grad);
        dh = dh_prev;
        dc = dc_prev;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub logits: [f64; 3],
    pub probs: [f64; 3],
    /// Pre-squash Gaussian mean.
    pub mu: f64,
    pub log_std: f64,
    /// Whether `log_std` sits on a clamp boundary (zero gradient).
    pub log_std_clamped: bool,
    /// `a_max * tanh(mu)`.
    pub mean_action: f64,
}

pub fn softmax3(z: &[f64; 3]) -> [f64; 3] {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = z.map(|v| (v - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

pub fn policy_forward(h: &[f64], params: &EncoderParams, a_max: f64) -> PolicyOutput {
    let mut out = [0.0; HEAD_OUT];
    affine(&params.head_w, &params.head_b, h, &mut out);
    let logits = [out[0], out[1], out[2]];
    let log_std = out[4].clamp(LOG_STD_MIN, LOG_STD_MAX);
    PolicyOutput {
        logits,
        probs: softmax3(&logits),
        mu: out[3],
        log_std,
        log_std_clamped: log_std != out[4],
        mean_action: a_max * out[3].tanh(),
    }
}

/// Accumulates head gradients from `d_out` (gradient on the five raw head
/// outputs) and returns the gradient on `h`.
pub fn policy_backward(h: &[f64], d_out: &[f64; HEAD_OUT], params: &EncoderParams, grad: &mut EncoderParams) -> Vec<f64> {
    let mut dh = vec![0.0; h.len()];
    affine_backward(&params.head_w, h, d_out, &mut grad.head_w, &mut grad.head_b, &mut dh);
    dh
}

/// Index of the most likely lateral action, earliest index on ties.
pub fn greedy_lateral(probs: &[f64; 3]) -> usize {
    let mut best = 0;
    for k in 1..3 {
        if probs[k] > probs[best] {
            best = k;
        }
    }
    best
}
