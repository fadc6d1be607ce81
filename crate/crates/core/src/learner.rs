//! Entropy-regularised actor-critic over the hybrid action space
//! (categorical lateral choice, squashed-Gaussian longitudinal residual).
//!
//! Architecture: one recurrent encoder shared by the actor head and two
//! critics. Critics map `[h, a / a_max]` through one tanh layer to three
//! Q-values, one per lateral action. The encoder is trained through the
//! critic loss; the actor sees a detached hidden state. Target copies of the
//! encoder and both critics track the online networks by exponential
//! smoothing.
//!
//! Losses, for a batch of `B` transitions `(s, k, a, r, s', d)`:
//!
//! ```text
//! y      = r + γ (1 - d) Σ_k' π'(k') [ min_m Q̄_m(s', a')[k'] - α (ln π'(k') + ln ρ'(a')) ]
//! L_Q    = 1/B Σ Σ_m (Q_m(s, a)[k] - y)^2
//! L_π    = 1/B Σ Σ_k π(k) [ α (ln π(k) + ln ρ(ã)) - min_m Q_m(s, ã)[k] ]
//! ```
//!
//! where `ã = a_max tanh(μ + σ ε)` is reparameterised and `ln ρ` is the
//! squashed-Gaussian log density. The next-state policy evaluates on the
//! target encoder so the target is independent of every trained tensor.

use std::collections::VecDeque;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::encoder::{encode_backward, encode_frames, policy_backward, policy_forward, EncoderParams, PolicyOutput};
use crate::error::{Error, Result};
use crate::nn::{affine, affine_backward, clip_global_norm, init_uniform, soft_update, Adam, Checkpoint, TensorRecord};
use crate::par::{self, Execution};
use crate::rng::RngStream;
use crate::scenario::DemandSpec;

const SQUASH_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Entropy coefficient α.
    pub alpha: f64,
    /// Target smoothing coefficient.
    pub tau: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub hidden: usize,
    pub critic_hidden: usize,
    pub a_max: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha: 0.05,
            tau: 0.005,
            clip_norm: 5.0,
            batch_size: 64,
            buffer_capacity: 100_000,
            hidden: 32,
            critic_hidden: 32,
            a_max: 1.0,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config(format!("learner.gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.alpha >= 0.0 && self.tau > 0.0 && self.tau <= 1.0 && self.clip_norm > 0.0) {
            return Err(Error::config("learner.alpha >= 0, tau in (0, 1], clip_norm > 0 required"));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size || self.hidden == 0 {
            return Err(Error::config("learner batch, capacity and hidden sizes are inconsistent"));
        }
        Ok(())
    }
}

pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    /// Padded history frames, flattened oldest first.
    pub state: Vec<f32>,
    pub lateral: usize,
    pub a_long: f64,
    pub reward: f64,
    pub next_state: Vec<f32>,
    pub done: bool,
}

/// Returned when the buffer holds fewer items than one batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Deferred {
    pub have: usize,
    pub need: usize,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: VecDeque<T>,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: VecDeque::new(),
        }
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    /// Uniform sample with replacement.
    pub fn sample(&self, batch: usize, rng: &mut RngStream) -> std::result::Result<Vec<&T>, Deferred> {
        if self.items.len() < batch || batch == 0 {
            return Err(Deferred {
                have: self.items.len(),
                need: batch,
            });
        }
        Ok((0..batch).map(|_| &self.items[rng.below(self.items.len())]).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticParams {
    pub input: usize,
    pub hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

struct CriticCache {
    input: Vec<f64>,
    act: Vec<f64>,
}

impl CriticParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            input,
            hidden,
            w1: vec![0.0; hidden * input],
            b1: vec![0.0; hidden],
            w2: vec![0.0; 3 * hidden],
            b2: vec![0.0; 3],
        }
    }

    pub fn init(input: usize, hidden: usize, rng: &mut RngStream) -> Self {
        let mut c = Self::zeros(input, hidden);
        init_uniform(&mut c.w1, input, rng);
        init_uniform(&mut c.w2, hidden, rng);
        c
    }

    pub fn buffers(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn buffers_mut(&mut self) -> [&mut [f64]; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    fn forward(&self, h: &[f64], a_scaled: f64) -> ([f64; 3], CriticCache) {
        let mut input = Vec::with_capacity(self.input);
        input.extend_from_slice(h);
        input.push(a_scaled);
        let mut act = vec![0.0; self.hidden];
        affine(&self.w1, &self.b1, &input, &mut act);
        for v in &mut act {
            *v = v.tanh();
        }
        let mut q = [0.0; 3];
        affine(&self.w2, &self.b2, &act, &mut q);
        (q, CriticCache { input, act })
    }

    pub fn q_values(&self, h: &[f64], a_scaled: f64) -> [f64; 3] {
        self.forward(h, a_scaled).0
    }

    /// Accumulates into `grad` (when given) and returns the input gradient.
    fn backward(&self, cache: &CriticCache, dq: &[f64; 3], grad: Option<&mut CriticParams>) -> Vec<f64> {
        let mut scratch;
        let g = match grad {
            Some(g) => g,
            None => {
                scratch = Self::zeros(self.input, self.hidden);
                &mut scratch
            }
        };
        let mut dact = vec![0.0; self.hidden];
        affine_backward(&self.w2, &cache.act, dq, &mut g.w2, &mut g.b2, &mut dact);
        for (d, a) in dact.iter_mut().zip(&cache.act) {
            *d *= 1.0 - a * a;
        }
        let mut dinput = vec![0.0; self.input];
        affine_backward(&self.w1, &cache.input, &dact, &mut g.w1, &mut g.b1, &mut dinput);
        dinput
    }

    fn tensors(&self, prefix: &str) -> Vec<TensorRecord> {
        let (i, h) = (self.input, self.hidden);
        [("w1", vec![h, i]), ("b1", vec![h]), ("w2", vec![3, h]), ("b2", vec![3])]
            .into_iter()
            .zip(self.buffers())
            .map(|((n, shape), data)| TensorRecord {
                name: format!("{prefix}{n}"),
                shape,
                data: data.to_vec(),
            })
            .collect()
    }

    fn from_checkpoint(ck: &Checkpoint, prefix: &str, input: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            input,
            hidden,
            w1: ck.take(&format!("{prefix}w1"), &[hidden, input])?,
            b1: ck.take(&format!("{prefix}b1"), &[hidden])?,
            w2: ck.take(&format!("{prefix}w2"), &[3, hidden])?,
            b2: ck.take(&format!("{prefix}b2"), &[3])?,
        })
    }
}

/// Encoder, actor head and both critics.
#[derive(Debug, Clone, PartialEq)]
pub struct Networks {
    pub enc: EncoderParams,
    pub q1: CriticParams,
    pub q2: CriticParams,
}

impl Networks {
    pub fn init(input: usize, cfg: &LearnerConfig, rng: &mut RngStream) -> Self {
        Self {
            enc: EncoderParams::init(input, cfg.hidden, rng),
            q1: CriticParams::init(cfg.hidden + 1, cfg.critic_hidden, rng),
            q2: CriticParams::init(cfg.hidden + 1, cfg.critic_hidden, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            enc: self.enc.zeros_like(),
            q1: CriticParams::zeros(self.q1.input, self.q1.hidden),
            q2: CriticParams::zeros(self.q2.input, self.q2.hidden),
        }
    }

    /// Every tensor in a fixed order: lstm w/b, head w/b, q1, q2.
    pub fn buffers(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = self.enc.buffers().to_vec();
        v.extend(self.q1.buffers());
        v.extend(self.q2.buffers());
        v
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = self.enc.buffers_mut().into_iter().collect();
        v.extend(self.q1.buffers_mut());
        v.extend(self.q2.buffers_mut());
        v
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.buffers_mut().into_iter().zip(other.buffers()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn tensors(&self) -> Vec<TensorRecord> {
        let mut t = self.enc.tensors("encoder.");
        t.extend(self.q1.tensors("critic1."));
        t.extend(self.q2.tensors("critic2."));
        t
    }

    pub fn from_checkpoint(ck: &Checkpoint, input: usize, cfg: &LearnerConfig) -> Result<Self> {
        Ok(Self {
            enc: EncoderParams::from_checkpoint(ck, "encoder.", input, cfg.hidden)?,
            q1: CriticParams::from_checkpoint(ck, "critic1.", cfg.hidden + 1, cfg.critic_hidden)?,
            q2: CriticParams::from_checkpoint(ck, "critic2.", cfg.hidden + 1, cfg.critic_hidden)?,
        })
    }
}

/// Squashed Gaussian sample `a = a_max tanh(mu + sigma eps)` and its log
/// density, with derivatives needed by the actor gradient.
#[derive(Debug, Clone, Copy)]
struct Squashed {
    a: f64,
    log_rho: f64,
    /// d log_rho / du
    dlogrho_du: f64,
    /// da / du
    da_du: f64,
    sigma: f64,
}

fn squashed(out: &PolicyOutput, eps: f64, a_max: f64) -> Squashed {
    let sigma = out.log_std.exp();
    let u = out.mu + sigma * eps;
    let t = u.tanh();
    let s = 1.0 - t * t;
    let denom = a_max * s + SQUASH_EPS;
    Squashed {
        a: a_max * t,
        log_rho: -0.5 * eps * eps - out.log_std - 0.5 * (2.0 * PI).ln() - denom.ln(),
        dlogrho_du: 2.0 * a_max * t * s / denom,
        da_du: a_max * s,
        sigma,
    }
}

/// Draws a hybrid action from the policy output.
pub fn sample_action(out: &PolicyOutput, a_max: f64, rng: &mut RngStream) -> (usize, f64) {
    let r = rng.uniform();
    let mut k = 2;
    let mut acc = 0.0;
    for (i, p) in out.probs.iter().enumerate() {
        acc += p;
        if r < acc {
            k = i;
            break;
        }
    }
    let eps = rng.standard_normal();
    (k, squashed(out, eps, a_max).a)
}

fn unflatten(state: &[f32], input: usize) -> Vec<Vec<f64>> {
    state.chunks(input).map(|c| c.iter().map(|&x| f64::from(x)).collect()).collect()
}

fn frames_ref(frames: &[Vec<f64>]) -> Vec<&[f64]> {
    frames.iter().map(Vec::as_slice).collect()
}

/// Per-sample noise for one update: `next` drives the target policy sample,
/// `actor` the reparameterised actor sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleNoise {
    pub next: f64,
    pub actor: f64,
}

fn sample_critic_grad(
    net: &Networks,
    target: &Networks,
    tr: &Transition,
    noise: SampleNoise,
    cfg: &LearnerConfig,
    scale: f64,
) -> Result<(f64, Networks)> {
    let d = net.enc.input;
    let frames = unflatten(&tr.state, d);
    let enc = encode_frames(&frames_ref(&frames), &net.enc)?;
    let a_scaled = tr.a_long / cfg.a_max;
    let (q1, c1) = net.q1.forward(&enc.h, a_scaled);
    let (q2, c2) = net.q2.forward(&enc.h, a_scaled);

    let y = if tr.done {
        tr.reward
    } else {
        let next = unflatten(&tr.next_state, d);
        let hn = encode_frames(&frames_ref(&next), &target.enc)?.h;
        let pi = policy_forward(&hn, &net.enc, cfg.a_max);
        let sq = squashed(&pi, noise.next, cfg.a_max);
        let t1 = target.q1.q_values(&hn, sq.a / cfg.a_max);
        let t2 = target.q2.q_values(&hn, sq.a / cfg.a_max);
        let v: f64 = (0..3)
            .map(|k| pi.probs[k] * (t1[k].min(t2[k]) - cfg.alpha * (pi.probs[k].ln() + sq.log_rho)))
            .sum();
        tr.reward + cfg.gamma * v
    };

    let k = tr.lateral;
    let (e1, e2) = (q1[k] - y, q2[k] - y);
    let loss = e1 * e1 + e2 * e2;
    let mut grad = net.zeros_like();
    let mut dq = [0.0; 3];
    dq[k] = 2.0 * e1 * scale;
    let di1 = net.q1.backward(&c1, &dq, Some(&mut grad.q1));
    dq[k] = 2.0 * e2 * scale;
    let di2 = net.q2.backward(&c2, &dq, Some(&mut grad.q2));
    let hs = net.enc.hidden;
    let dh: Vec<f64> = (0..hs).map(|u| di1[u] + di2[u]).collect();
    encode_backward(&enc, &dh, &net.enc, &mut grad.enc);
    Ok((loss, grad))
}

fn sample_actor_grad(
    net: &Networks,
    tr: &Transition,
    noise: SampleNoise,
    cfg: &LearnerConfig,
    scale: f64,
) -> Result<(f64, f64, Networks)> {
    let frames = unflatten(&tr.state, net.enc.input);
    let h = encode_frames(&frames_ref(&frames), &net.enc)?.h;
    let pi = policy_forward(&h, &net.enc, cfg.a_max);
    let sq = squashed(&pi, noise.actor, cfg.a_max);
    let a_scaled = sq.a / cfg.a_max;
    let (q1, c1) = net.q1.forward(&h, a_scaled);
    let (q2, c2) = net.q2.forward(&h, a_scaled);
    let alpha = cfg.alpha;

    let mut loss = 0.0;
    let mut g = [0.0; 3];
    let mut dq1 = [0.0; 3];
    let mut dq2 = [0.0; 3];
    for k in 0..3 {
        let p = pi.probs[k];
        let lp = p.ln();
        let qmin = q1[k].min(q2[k]);
        loss += p * (alpha * (lp + sq.log_rho) - qmin);
        g[k] = alpha * (lp + 1.0 + sq.log_rho) - qmin;
        if q1[k] <= q2[k] {
            dq1[k] = -p;
        } else {
            dq2[k] = -p;
        }
    }
    let mean_g: f64 = (0..3).map(|k| pi.probs[k] * g[k]).sum();
    let dl_da = net.q1.backward(&c1, &dq1, None)[net.q1.input - 1] / cfg.a_max
        + net.q2.backward(&c2, &dq2, None)[net.q2.input - 1] / cfg.a_max;
    let dl_du = alpha * sq.dlogrho_du + dl_da * sq.da_du;
    let dl_dls = if pi.log_std_clamped {
        0.0
    } else {
        -alpha + dl_du * sq.sigma * noise.actor
    };
    let d_out = [
        pi.probs[0] * (g[0] - mean_g) * scale,
        pi.probs[1] * (g[1] - mean_g) * scale,
        pi.probs[2] * (g[2] - mean_g) * scale,
        dl_du * scale,
        dl_dls * scale,
    ];
    let mut grad = net.zeros_like();
    policy_backward(&h, &d_out, &net.enc, &mut grad.enc);
    let entropy = -pi.probs.iter().map(|p| p * p.ln()).sum::<f64>() - sq.log_rho;
    Ok((loss, entropy, grad))
}

fn reduce(
    results: Vec<Result<(f64, f64, Networks)>>,
    like: &Networks,
) -> Result<(f64, f64, Networks)> {
    let mut total = like.zeros_like();
    let (mut loss, mut aux) = (0.0, 0.0);
    for r in results {
        let (l, a, g) = r?;
        loss += l;
        aux += a;
        total.add_assign(&g);
    }
    Ok((loss, aux, total))
}

/// Mean critic loss and its gradient with respect to the online encoder
/// recurrence and both critics.
pub fn critic_loss(
    net: &Networks,
    target: &Networks,
    batch: &[&Transition],
    noise: &[SampleNoise],
    cfg: &LearnerConfig,
    exec: Execution,
) -> Result<(f64, Networks)> {
    let scale = 1.0 / batch.len() as f64;
    let res = par::map_range(exec, batch.len(), |i| {
        sample_critic_grad(net, target, batch[i], noise[i], cfg, scale).map(|(l, g)| (l, 0.0, g))
    });
    let (loss, _, g) = reduce(res, net)?;
    Ok((loss * scale, g))
}

/// Mean actor loss, mean entropy estimate and the gradient with respect to
/// the policy head.
pub fn actor_loss(
    net: &Networks,
    batch: &[&Transition],
    noise: &[SampleNoise],
    cfg: &LearnerConfig,
    exec: Execution,
) -> Result<(f64, f64, Networks)> {
    let scale = 1.0 / batch.len() as f64;
    let res = par::map_range(exec, batch.len(), |i| sample_actor_grad(net, batch[i], noise[i], cfg, scale));
    let (loss, ent, g) = reduce(res, net)?;
    Ok((loss * scale, ent * scale, g))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UpdateStats {
    pub step: u64,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub entropy: f64,
    pub critic_grad_norm: f64,
    pub actor_grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct Learner {
    pub cfg: LearnerConfig,
    pub net: Networks,
    pub target: Networks,
    critic_opt: [Adam; 6],
    actor_opt: [Adam; 2],
    rng: RngStream,
    updates: u64,
    pub exec: Execution,
}

impl Learner {
    pub fn new(cfg: LearnerConfig, input: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut init = RngStream::new(seed, "learner/init");
        let net = Networks::init(input, &cfg, &mut init);
        Ok(Self::from_networks(cfg, net, seed))
    }

    pub fn from_networks(cfg: LearnerConfig, net: Networks, seed: u64) -> Self {
        let lens = |n: &Networks| n.buffers().iter().map(|b| b.len()).collect::<Vec<_>>();
        let l = lens(&net);
        let c = cfg.critic_lr;
        Self {
            cfg,
            target: net.clone(),
            critic_opt: [
                Adam::new(l[0], c),
                Adam::new(l[1], c),
                Adam::new(l[4], c),
                Adam::new(l[5], c),
                Adam::new(l[6], c),
                Adam::new(l[7], c),
            ],
            actor_opt: [Adam::new(l[2], cfg.actor_lr), Adam::new(l[3], cfg.actor_lr)],
            net,
            rng: RngStream::new(seed, "learner/update"),
            updates: 0,
            exec: Execution::default(),
        }
    }

    pub fn policy(&self) -> &EncoderParams {
        &self.net.enc
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// One gradient step, or `None` when the buffer cannot fill a batch.
    pub fn update(&mut self, buffer: &ReplayBuffer<Transition>) -> Result<Option<UpdateStats>> {
        let batch = match buffer.sample(self.cfg.batch_size, &mut self.rng) {
            Ok(b) => b,
            Err(_) => return Ok(None),
        };
        let noise: Vec<SampleNoise> = (0..batch.len())
            .map(|_| SampleNoise {
                next: self.rng.standard_normal(),
                actor: self.rng.standard_normal(),
            })
            .collect();
        self.update_on(&batch, &noise).map(Some)
    }

    pub fn update_on(&mut self, batch: &[&Transition], noise: &[SampleNoise]) -> Result<UpdateStats> {
        let (closs, mut cg) = critic_loss(&self.net, &self.target, batch, noise, &self.cfg, self.exec)?;
        let (aloss, entropy, mut ag) = actor_loss(&self.net, batch, noise, &self.cfg, self.exec)?;
        if !(closs.is_finite() && aloss.is_finite()) {
            return Err(Error::contract(format!(
                "non-finite loss at update {}: critic {closs}, actor {aloss}, entropy {entropy}, batch rewards {:?}",
                self.updates,
                batch.iter().map(|t| t.reward).collect::<Vec<_>>()
            )));
        }
        let critic_norm = {
            let mut bufs = cg.buffers_mut();
            let mut sel: Vec<&mut [f64]> = Vec::new();
            for (i, b) in bufs.drain(..).enumerate() {
                if i != 2 && i != 3 {
                    sel.push(b);
                }
            }
            clip_global_norm(&mut sel, self.cfg.clip_norm)
        };
        let actor_norm = clip_global_norm(&mut [&mut ag.enc.head_w, &mut ag.enc.head_b], self.cfg.clip_norm);

        {
            let g = cg.buffers();
            let mut p = self.net.buffers_mut();
            let idx = [0usize, 1, 4, 5, 6, 7];
            for (o, &i) in idx.iter().enumerate() {
                self.critic_opt[o].step(p[i], g[i]);
            }
            self.actor_opt[0].step(p[2], &ag.enc.head_w);
            self.actor_opt[1].step(p[3], &ag.enc.head_b);
        }
        {
            let src = self.net.buffers();
            let mut dst = self.target.buffers_mut();
            for i in [0usize, 1, 4, 5, 6, 7] {
                soft_update(dst[i], src[i], self.cfg.tau);
            }
        }
        self.updates += 1;
        Ok(UpdateStats {
            step: self.updates,
            critic_loss: closs,
            actor_loss: aloss,
            entropy,
            critic_grad_norm: critic_norm,
            actor_grad_norm: actor_norm,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.net.tensors())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.checkpoint().save(path)
    }
}

/// Loads only the encoder and policy head from a checkpoint. The hidden
/// width is read from the stored gate biases.
pub fn load_policy(path: &std::path::Path, input: usize) -> Result<EncoderParams> {
    let ck = Checkpoint::load(path)?;
    let hidden = ck
        .tensors
        .iter()
        .find(|t| t.name == "encoder.lstm.b")
        .map(|t| t.data.len() / 4)
        .filter(|&h| h > 0)
        .ok_or_else(|| Error::config(format!("{}: checkpoint has no encoder", path.display())))?;
    EncoderParams::from_checkpoint(&ck, "encoder.", input, hidden)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurriculumStage {
    /// 300 veh/h, all CAVs.
    LowDensityFull,
    /// 300 veh/h, 70% CAVs.
    LowDensityMixed,
    /// 600 veh/h, 50% CAVs.
    MediumDensity,
    /// 900 veh/h alternating 30% and 70% CAVs.
    HighDensity,
    /// Density and composition sampled per episode.
    Randomized,
}

impl CurriculumStage {
    pub const ORDER: [CurriculumStage; 5] = [
        CurriculumStage::LowDensityFull,
        CurriculumStage::LowDensityMixed,
        CurriculumStage::MediumDensity,
        CurriculumStage::HighDensity,
        CurriculumStage::Randomized,
    ];

    pub fn next(self) -> Self {
        let i = Self::ORDER.iter().position(|&s| s == self).expect("stage is listed");
        Self::ORDER[(i + 1).min(Self::ORDER.len() - 1)]
    }

    /// (demand veh/h, penetration) for the `episode`-th episode of the stage.
    pub fn setting(self, episode: usize, rng: &mut RngStream) -> (f64, f64) {
        match self {
            CurriculumStage::LowDensityFull => (300.0, 1.0),
            CurriculumStage::LowDensityMixed => (300.0, 0.7),
            CurriculumStage::MediumDensity => (600.0, 0.5),
            CurriculumStage::HighDensity => (900.0, if episode.is_multiple_of(2) { 0.3 } else { 0.7 }),
            CurriculumStage::Randomized => {
                let d = [300.0, 600.0, 900.0][rng.below(3)];
                let p = [0.3, 0.5, 0.7, 1.0][rng.below(4)];
                (d, p)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumConfig {
    /// Episodes after which a stage advances regardless of progress.
    pub stage_budget: usize,
    /// Episodes compared by the plateau test.
    pub plateau_window: usize,
    /// Relative change in windowed mean reward regarded as a plateau.
    pub plateau_tolerance: f64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            stage_budget: 20,
            plateau_window: 3,
            plateau_tolerance: 0.02,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Curriculum {
    pub cfg: CurriculumConfig,
    pub stage: CurriculumStage,
    episodes_in_stage: usize,
    rewards: Vec<f64>,
    rng: RngStream,
}

impl Curriculum {
    pub fn new(cfg: CurriculumConfig, seed: u64) -> Self {
        Self {
            cfg,
            stage: CurriculumStage::LowDensityFull,
            episodes_in_stage: 0,
            rewards: Vec::new(),
            rng: RngStream::new(seed, "curriculum"),
        }
    }

    /// Scenario for the next episode of the current stage.
    pub fn next_scenario(&mut self, base: &ScenarioConfig, seed: u64) -> ScenarioConfig {
        let (level, pen) = self.stage.setting(self.episodes_in_stage, &mut self.rng);
        let split = match base.demand {
            DemandSpec::Fixed { split, .. } => split,
            DemandSpec::Profile { .. } => 0.8,
        };
        ScenarioConfig {
            seed,
            penetration: pen,
            demand: DemandSpec::Fixed { level, split },
            ..base.clone()
        }
    }

    /// Records an episode's mean reward and advances the stage on a plateau
    /// or exhausted budget. Returns whether the stage changed.
    pub fn record(&mut self, mean_reward: f64) -> bool {
        self.episodes_in_stage += 1;
        self.rewards.push(mean_reward);
        let w = self.cfg.plateau_window;
        let plateau = w > 0 && self.rewards.len() >= 2 * w && {
            let n = self.rewards.len();
            let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
            let (prev, last) = (mean(&self.rewards[n - 2 * w..n - w]), mean(&self.rewards[n - w..]));
            (last - prev).abs() <= self.cfg.plateau_tolerance * prev.abs().max(1e-9)
        };
        let advance = self.stage != CurriculumStage::Randomized
            && (plateau || self.episodes_in_stage >= self.cfg.stage_budget);
        if advance {
            self.stage = self.stage.next();
            self.episodes_in_stage = 0;
            self.rewards.clear();
        }
        advance
    }
}
