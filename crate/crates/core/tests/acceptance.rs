//! Acceptance checks. Each test prints one `PASS`/`FAIL` line on stderr
//! (outside the harness capture) and fails when its criterion is not met.

use std::io::Write;
use std::time::{Duration, Instant};

use rampsim::dynamics::{
    detect_collisions, idm_acceleration, step_kinematics, IdmParams, Lane, Origin, VehicleClass, VehicleId,
    VehicleState,
};
use rampsim::encoder::{encode_backward, encode_frames, policy_backward, policy_forward, EncoderParams};
use rampsim::game::{
    ego_best_response, expected_utilities, solve_cooperative, DriverStyle, DriverType, EgoStrategy, ExpectationMode,
    FollowerStrategy, MixedStrategy, PayoffMatrix, PayoffTable,
};
use rampsim::learner::{actor_loss, critic_loss, LearnerConfig, Networks, SampleNoise, Transition};
use rampsim::metrics::{collision_rate, detector_aggregate, recovery_time, DetectorCrossing, EpisodeMetrics, Recovery};
use rampsim::par::Execution;
use rampsim::reward::{coop_reward, total_reward};
use rampsim::rng::RngStream;
use rampsim::scenario::DemandSpec;
use rampsim::trust::{cooperation_factor, game_type, update_trust, GameType, TrustParams};
use rampsim::world::initial_policy;
use rampsim::{ControllerMode, ScenarioConfig, World};

type Check = std::result::Result<(), String>;

fn verdict(name: &str, started: Instant, budget: Option<Duration>, outcome: Check) {
    let elapsed = started.elapsed();
    let outcome = outcome.and_then(|()| match budget {
        Some(b) if elapsed > b => Err(format!("took {elapsed:.2?}, budget {b:?}")),
        _ => Ok(()),
    });
    let line = match &outcome {
        Ok(()) => format!("PASS {name} ({elapsed:.2?})"),
        Err(msg) => format!("FAIL {name} ({elapsed:.2?}): {msg}"),
    };
    let _ = writeln!(std::io::stderr(), "{line}");
    if let Err(msg) = outcome {
        panic!("{name}: {msg}");
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

#[test]
fn trust_dynamics() {
    let start = Instant::now();
    let run = || -> Check {
        let mut rng = RngStream::new(11, "acceptance/trust");
        for case in 0..1000 {
            let t0 = rng.uniform();
            let params = TrustParams {
                alpha_hat: 0.01 + 0.98 * rng.uniform(),
                ..TrustParams::default()
            };
            let mut t = t0;
            for k in 0..60 {
                t = update_trust(t, rng.bernoulli(0.5) as u8, &params);
                ensure((0.0..=1.0).contains(&t), || format!("case {case} step {k}: trust {t} left [0, 1]"))?;
            }
            let delta = rng.bernoulli(0.5) as u8;
            let d = delta as f64;
            let mut t = t0;
            for k in 1..=60 {
                t = update_trust(t, delta, &params);
                let closed = (1.0 - params.alpha_hat).powi(k) * (t0 - d).abs();
                ensure(((t - d).abs() - closed).abs() <= 1e-12, || {
                    format!("case {case} k {k}: |T-d| {} vs closed form {closed}", (t - d).abs())
                })?;
            }
        }
        Ok(())
    };
    verdict("trust dynamics", start, Some(Duration::from_secs(1)), run());
}

#[test]
fn cooperation_factor_and_gate() {
    let start = Instant::now();
    let run = || -> Check {
        let tau = 0.4;
        ensure(cooperation_factor(tau, tau) == 0.0, || "lambda(tau) != 0".into())?;
        ensure(cooperation_factor(1.0, tau) == 1.0, || "lambda(1) != 1".into())?;
        let mid = cooperation_factor(0.7, tau);
        ensure((mid - 0.5).abs() <= 1e-12, || format!("lambda(0.7; 0.4) = {mid}"))?;
        ensure(game_type(tau, tau) == GameType::Cooperative, || "T = tau is not cooperative".into())?;
        let below = tau - f64::EPSILON;
        ensure(game_type(below, tau) == GameType::NonCooperative, || "T just below tau is cooperative".into())?;
        ensure(cooperation_factor(0.1, tau) == 0.0, || "lambda below tau is not clamped to 0".into())
    };
    verdict("cooperation factor and gate", start, Some(Duration::from_secs(1)), run());
}

#[test]
fn reward_algebra() {
    let start = Instant::now();
    let run = || -> Check {
        let mut rng = RngStream::new(12, "acceptance/reward");
        for case in 0..1000 {
            let s = -10.0 * rng.uniform();
            let c = -10.0 * rng.uniform();
            let lambda = rng.uniform();
            let r = total_reward(s, c, lambda);
            ensure(r >= s.min(c) - 1e-12 && r <= s.max(c) + 1e-12, || {
                format!("case {case}: total {r} outside [{}, {}]", s.min(c), s.max(c))
            })?;
            ensure(total_reward(s, c, 0.0) == s, || format!("case {case}: lambda 0 is not the self reward"))?;
            ensure(total_reward(s, c, 1.0) == c, || format!("case {case}: lambda 1 is not the coop reward"))?;
            let n = 1 + rng.below(5);
            let nb: Vec<(f64, f64)> = (0..n).map(|_| (0.05 + rng.uniform(), -5.0 * rng.uniform())).collect();
            let scale = 0.1 + 10.0 * rng.uniform();
            let scaled: Vec<(f64, f64)> = nb.iter().map(|&(t, r)| (t * scale, r)).collect();
            let (a, b) = (coop_reward(&nb), coop_reward(&scaled));
            ensure((a - b).abs() <= 1e-12, || format!("case {case}: coop {a} changes to {b} under trust scaling"))?;
        }
        let coop = coop_reward(&[(0.8, -1.0), (0.2, -3.0)]);
        ensure((coop + 1.4).abs() <= 1e-12, || format!("worked coop value {coop}, expected -1.4"))?;
        let total = total_reward(-2.0, -1.4, 0.5);
        ensure((total + 1.7).abs() <= 1e-12, || format!("worked total value {total}, expected -1.7"))
    };
    verdict("reward algebra", start, None, run());
}

fn car(id: u64, position: f64, speed: f64) -> VehicleState {
    VehicleState {
        id: VehicleId(id),
        class: VehicleClass::Hv,
        lane: Lane::Main(0),
        position,
        speed,
        accel: 0.0,
        length: 5.0,
        lane_change_cooldown: 0.0,
        origin: Origin::Mainline,
        spawn_time: 0.0,
    }
}

/// Gap at which IDM acceleration vanishes for speed `v` behind an equal-speed
/// leader, by bisection on the acceleration law itself.
fn equilibrium_gap(v: f64, p: &IdmParams) -> f64 {
    let (mut lo, mut hi) = (1e-3, 1e4);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if idm_acceleration(v, 0.0, mid, p).unwrap() < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn idm_equilibrium_and_platoon() {
    let start = Instant::now();
    let run = || -> Check {
        let p = IdmParams::default();
        let dt = 0.1;
        let target = equilibrium_gap(15.0, &p);
        for (gap0, v0) in [(80.0, 20.0), (15.0, 10.0), (target, 0.0)] {
            let mut leader = car(1, 1000.0, 15.0);
            let mut follower = car(2, 1000.0 - 5.0 - gap0, v0);
            for _ in 0..3000 {
                let gap = leader.rear() - follower.position;
                let a = idm_acceleration(follower.speed, follower.speed - leader.speed, gap, &p)
                    .map_err(|e| e.to_string())?;
                follower = step_kinematics(&follower, a, dt);
                leader = step_kinematics(&leader, 0.0, dt);
            }
            let gap = leader.rear() - follower.position;
            ensure((gap - target).abs() <= 0.5, || {
                format!("start gap {gap0} speed {v0}: gap {gap:.3} after 300 s, equilibrium {target:.3}")
            })?;
        }

        let v0 = 25.0;
        let spacing = equilibrium_gap(v0, &p) + 5.0;
        let mut platoon: Vec<VehicleState> = (0..20).map(|i| car(i, 2000.0 - i as f64 * spacing, v0)).collect();
        for step in 0..1200 {
            let t = step as f64 * dt;
            let lead_accel = if t < 10.0 { 0.0 } else if platoon[0].speed > 0.0 { -4.0 } else { 0.0 };
            let mut next = Vec::with_capacity(platoon.len());
            next.push(step_kinematics(&platoon[0], lead_accel, dt));
            for i in 1..platoon.len() {
                let (l, f) = (&platoon[i - 1], &platoon[i]);
                let a = idm_acceleration(f.speed, f.speed - l.speed, l.rear() - f.position, &p)
                    .map_err(|e| format!("t {t:.1}: {e}"))?;
                next.push(step_kinematics(f, a, dt));
            }
            platoon = next;
            let hits = detect_collisions(&platoon, |_| false);
            ensure(hits.is_empty(), || format!("t {t:.1}: {} collisions in braking platoon", hits.len()))?;
        }
        Ok(())
    };
    verdict("idm equilibrium and braking platoon", start, Some(Duration::from_secs(10)), run());
}

fn random_matrix(rng: &mut RngStream) -> PayoffMatrix {
    let mut m = [[0.0; 2]; 4];
    for row in &mut m {
        for v in row.iter_mut() {
            *v = 20.0 * rng.uniform() - 10.0;
        }
    }
    m
}

fn affine(m: &PayoffMatrix, a: f64, b: f64) -> PayoffMatrix {
    m.map(|row| row.map(|v| a * v + b))
}

fn brute_force_cell(m: &PayoffMatrix) -> (EgoStrategy, FollowerStrategy) {
    let mut cells = Vec::new();
    for si in EgoStrategy::ALL {
        for sj in FollowerStrategy::ALL {
            cells.push((m[sj.row()][si.column()], si, sj));
        }
    }
    let best = cells.iter().copied().max_by(|a, b| a.0.total_cmp(&b.0)).unwrap();
    (best.1, best.2)
}

fn random_types(rng: &mut RngStream) -> Vec<DriverType> {
    let raw: Vec<f64> = (0..3).map(|_| 0.1 + rng.uniform()).collect();
    let z: f64 = raw.iter().sum();
    let mut w = || MixedStrategy::new([0.05 + rng.uniform(), 0.05 + rng.uniform(), 0.05 + rng.uniform(), 0.05 + rng.uniform()]).unwrap();
    DriverStyle::ALL
        .iter()
        .zip(&raw)
        .map(|(&style, r)| DriverType {
            style,
            p: w(),
            q: w(),
            prior: r / z,
        })
        .collect()
}

#[test]
fn game_solvers() {
    let start = Instant::now();
    let run = || -> Check {
        let mut rng = RngStream::new(13, "acceptance/game");
        for case in 0..100 {
            let m = random_matrix(&mut rng);
            let solved = solve_cooperative(&m);
            ensure(solved == brute_force_cell(&m), || format!("case {case}: cooperative solution differs from brute force"))?;
            let (a, b) = (0.1 + 5.0 * rng.uniform(), 10.0 * rng.uniform() - 5.0);
            ensure(solve_cooperative(&affine(&m, a, b)) == solved, || {
                format!("case {case}: cooperative solution moves under x -> {a} x + {b}")
            })?;

            let tables = PayoffTable {
                coop: m,
                noncoop_ego: random_matrix(&mut rng),
                noncoop_follower: random_matrix(&mut rng),
            };
            let types = random_types(&mut rng);
            let mut brute = [0.0; 2];
            for si in EgoStrategy::ALL {
                let c = si.column();
                let mut total = 0.0;
                for t in &types {
                    let probs = if si == EgoStrategy::ChangeLane { t.p.probs() } else { t.q.probs() };
                    let mut e = 0.0;
                    for sj in FollowerStrategy::ALL {
                        e += probs[sj.row()] * tables.noncoop_ego[sj.row()][c];
                    }
                    total += t.prior * e;
                }
                brute[c] = total;
            }
            let eu = expected_utilities(&tables, &types, ExpectationMode::Standard);
            for c in 0..2 {
                ensure((eu[c] - brute[c]).abs() <= 1e-12, || {
                    format!("case {case}: expected utility {} vs brute force {}", eu[c], brute[c])
                })?;
            }
            let want = if brute[EgoStrategy::ChangeLane.column()] > brute[EgoStrategy::NotChangeLane.column()] {
                EgoStrategy::ChangeLane
            } else {
                EgoStrategy::NotChangeLane
            };
            let got = ego_best_response(&tables, &types, ExpectationMode::Standard).map_err(|e| e.to_string())?;
            ensure(got == want, || format!("case {case}: best response {got:?}, brute force {want:?}"))?;
            let moved = PayoffTable {
                noncoop_ego: affine(&tables.noncoop_ego, a, b),
                ..tables
            };
            let again = ego_best_response(&moved, &types, ExpectationMode::Standard).map_err(|e| e.to_string())?;
            ensure(again == got, || format!("case {case}: best response moves under x -> {a} x + {b}"))?;
        }
        Ok(())
    };
    verdict("game solvers", start, None, run());
}

fn fd_compare(what: &str, analytic: &[f64], mut loss: impl FnMut(usize, f64) -> f64) -> Check {
    let eps = 1e-5;
    for (i, &g) in analytic.iter().enumerate() {
        let fd = (loss(i, eps) - loss(i, -eps)) / (2.0 * eps);
        let rel = (fd - g).abs() / (fd.abs() + g.abs()).max(1e-8);
        ensure(rel < 1e-3 || (fd - g).abs() < 1e-8, || format!("{what}[{i}]: fd {fd} analytic {g} rel {rel:.2e}"))?;
    }
    Ok(())
}

fn perturbed_encoder(d: usize, hs: usize, seed: u64) -> EncoderParams {
    let mut rng = RngStream::new(seed, "acceptance/encoder");
    let mut p = EncoderParams::init(d, hs, &mut rng);
    for b in p.buffers_mut() {
        for v in b.iter_mut() {
            *v += 0.4 * rng.standard_normal();
        }
    }
    p
}

fn tiny_learner() -> LearnerConfig {
    LearnerConfig {
        hidden: 4,
        critic_hidden: 5,
        batch_size: 4,
        buffer_capacity: 100,
        ..Default::default()
    }
}

fn perturbed_networks(input: usize, cfg: &LearnerConfig, seed: u64) -> Networks {
    let mut rng = RngStream::new(seed, "acceptance/net");
    let mut n = Networks::init(input, cfg, &mut rng);
    for b in n.buffers_mut() {
        for v in b.iter_mut() {
            *v = 0.4 * rng.standard_normal();
        }
    }
    n
}

fn batch(input: usize, frames: usize, seed: u64) -> Vec<Transition> {
    let mut rng = RngStream::new(seed, "acceptance/batch");
    let mut f = |len: usize| (0..len).map(|_| rng.standard_normal() as f32).collect::<Vec<_>>();
    (0..4)
        .map(|i| Transition {
            state: f(input * frames),
            lateral: i % 3,
            a_long: 0.4 * i as f64 - 0.6,
            reward: -0.3 * i as f64,
            next_state: f(input * frames),
            done: i == 3,
        })
        .collect()
}

fn noise() -> Vec<SampleNoise> {
    (0..4)
        .map(|i| SampleNoise {
            next: 0.3 * i as f64 - 0.4,
            actor: 0.5 - 0.2 * i as f64,
        })
        .collect()
}

fn network_fd(what: &str, grad: &Networks, base: &Networks, buffers: &[usize], loss: impl Fn(&Networks) -> f64) -> Check {
    let grads: Vec<Vec<f64>> = grad.buffers().iter().map(|b| b.to_vec()).collect();
    for &bi in buffers {
        fd_compare(&format!("{what} buffer {bi}"), &grads[bi], |i, e| {
            let mut n = base.clone();
            n.buffers_mut()[bi][i] += e;
            loss(&n)
        })?;
    }
    Ok(())
}

#[test]
fn encoder_and_learner_gradients() {
    let start = Instant::now();
    let run = || -> Check {
        let (d, hs) = (5, 4);
        let p = perturbed_encoder(d, hs, 21);
        let mut rng = RngStream::new(22, "acceptance/frames");
        let frames: Vec<Vec<f64>> = (0..3).map(|_| (0..d).map(|_| rng.standard_normal()).collect()).collect();
        let wh: Vec<f64> = (0..hs).map(|_| rng.standard_normal()).collect();
        let refs: Vec<&[f64]> = frames.iter().map(Vec::as_slice).collect();

        // recurrent cell through time: L = wh . h_T
        let cell_loss = |q: &EncoderParams| {
            let e = encode_frames(&refs, q).unwrap();
            e.h.iter().zip(&wh).map(|(a, b)| a * b).sum::<f64>()
        };
        let enc = encode_frames(&refs, &p).map_err(|e| e.to_string())?;
        let mut g = p.zeros_like();
        encode_backward(&enc, &wh, &p, &mut g);
        for (bi, name) in [(0, "lstm_w"), (1, "lstm_b")] {
            let analytic = g.buffers()[bi].to_vec();
            fd_compare(name, &analytic, |i, e| {
                let mut q = p.clone();
                q.buffers_mut()[bi][i] += e;
                cell_loss(&q)
            })?;
        }

        // policy head: L = wo . raw outputs
        let wo = [0.7, -0.3, 0.2, 1.1, -0.4];
        let head_loss = |h: &[f64], q: &EncoderParams| {
            let o = policy_forward(h, q, 2.0);
            let raw = [o.logits[0], o.logits[1], o.logits[2], o.mu, o.log_std];
            raw.iter().zip(&wo).map(|(a, b)| a * b).sum::<f64>()
        };
        let h = enc.h.clone();
        ensure(!policy_forward(&h, &p, 2.0).log_std_clamped, || "log_std clamped at the probe point".into())?;
        let mut g = p.zeros_like();
        let dh = policy_backward(&h, &wo, &p, &mut g);
        for (bi, name) in [(2, "head_w"), (3, "head_b")] {
            let analytic = g.buffers()[bi].to_vec();
            fd_compare(name, &analytic, |i, e| {
                let mut q = p.clone();
                q.buffers_mut()[bi][i] += e;
                head_loss(&h, &q)
            })?;
        }
        fd_compare("head dh", &dh, |i, e| {
            let mut hh = h.clone();
            hh[i] += e;
            head_loss(&hh, &p)
        })?;

        // SAC losses on a tiny batch
        let cfg = tiny_learner();
        let input = 3;
        let net = perturbed_networks(input, &cfg, 23);
        let target = perturbed_networks(input, &cfg, 24);
        let nz = noise();
        let data = batch(input, 3, 25);
        let refs: Vec<&Transition> = data.iter().collect();
        let (_, cg) = critic_loss(&net, &target, &refs, &nz, &cfg, Execution::Sequential).map_err(|e| e.to_string())?;
        network_fd("critic", &cg, &net, &[0, 1, 4, 5, 6, 7, 8, 9, 10, 11], |n| {
            critic_loss(n, &target, &refs, &nz, &cfg, Execution::Sequential).unwrap().0
        })?;
        let (_, _, ag) = actor_loss(&net, &refs, &nz, &cfg, Execution::Sequential).map_err(|e| e.to_string())?;
        network_fd("actor", &ag, &net, &[2, 3], |n| {
            actor_loss(n, &refs, &nz, &cfg, Execution::Sequential).unwrap().0
        })
    };
    verdict("encoder and learner gradients", start, Some(Duration::from_secs(30)), run());
}

#[test]
fn metrics_worked_values() {
    let start = Instant::now();
    let run = || -> Check {
        let trace: Vec<(f64, f64)> = (0..=600)
            .map(|s| {
                let t = s as f64;
                let v = if t < 100.0 { 1000.0 } else { (500.0 + (t - 100.0) * 400.0 / 300.0).min(1000.0) };
                (t, v)
            })
            .collect();
        let r = recovery_time(&trace, 100.0, 100.0, 500.0).map_err(|e| e.to_string())?;
        ensure(r == Recovery::Recovered { seconds: 300.0 }, || format!("recovery {r:?}, expected 300 s"))?;
        let rate = collision_rate(21, 200);
        ensure(rate == Some(10.5), || format!("collision rate {rate:?}, expected 10.5"))?;
        let events: Vec<DetectorCrossing> = (0..10)
            .map(|i| DetectorCrossing {
                t: 3.0 + 5.5 * i as f64,
                speed: 25.0,
                length: 5.0,
            })
            .collect();
        let recs = detector_aggregate(500.0, &events, 60.0, 0.0, 60.0);
        ensure(recs.len() == 1 && recs[0].count == 10, || format!("detector bins {recs:?}"))?;
        ensure(recs[0].flow == 600.0, || format!("flow {}, expected 600", recs[0].flow))
    };
    verdict("metrics worked values", start, None, run());
}

fn summary_bytes(cfg: &ScenarioConfig, exec: Execution) -> std::result::Result<Vec<u8>, String> {
    let policy = cfg.controller.uses_policy().then(|| initial_policy(cfg, 32));
    let mut w = World::new(cfg.clone(), policy).map_err(|e| e.to_string())?;
    w.exec = exec;
    w.run().map_err(|e| e.to_string())?;
    let out = w.finish();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    rampsim::report::write_run(dir.path(), cfg, &out).map_err(|e| e.to_string())?;
    std::fs::read(dir.path().join("summary.json")).map_err(|e| e.to_string())
}

#[test]
fn determinism() {
    let start = Instant::now();
    let run = || -> Check {
        let short = ScenarioConfig {
            duration: 180.0,
            warmup: 60.0,
            seed: 7,
            ..ScenarioConfig::base()
        };
        let scenarios = [
            ScenarioConfig {
                controller: ControllerMode::Rule,
                ..short.clone()
            },
            ScenarioConfig {
                controller: ControllerMode::TrustFull,
                ..short.clone()
            },
            ScenarioConfig {
                controller: ControllerMode::TrustFull,
                demand: DemandSpec::peak_profile(short.horizon()),
                seed: 3,
                ..short.clone()
            },
        ];
        for cfg in &scenarios {
            let a = summary_bytes(cfg, Execution::Sequential)?;
            let b = summary_bytes(cfg, Execution::Sequential)?;
            ensure(a == b, || format!("{} seed {}: reruns differ", cfg.controller.as_str(), cfg.seed))?;
            let c = summary_bytes(cfg, Execution::Parallel)?;
            ensure(a == c, || format!("{} seed {}: parallel run differs", cfg.controller.as_str(), cfg.seed))?;
        }
        Ok(())
    };
    verdict("determinism", start, None, run());
}

fn episode(seed: u64, controller: ControllerMode) -> std::result::Result<EpisodeMetrics, String> {
    let cfg = ScenarioConfig {
        seed,
        controller,
        ..ScenarioConfig::base()
    };
    let policy = controller.uses_policy().then(|| initial_policy(&cfg, 32));
    let mut w = World::new(cfg, policy).map_err(|e| e.to_string())?;
    w.run().map_err(|e| e.to_string())?;
    Ok(w.finish().metrics)
}

#[test]
fn directional_trend() {
    let start = Instant::now();
    let run = || -> Check {
        let (mut jerk_wins, mut conflict_wins) = (0, 0);
        let mut detail = Vec::new();
        for seed in 0..10 {
            let rule = episode(seed, ControllerMode::Rule)?;
            let trust = episode(seed, ControllerMode::TrustFull)?;
            if let (Some(r), Some(t)) = (rule.mean_abs_jerk, trust.mean_abs_jerk) {
                if t < r {
                    jerk_wins += 1;
                }
            }
            if let (Some(r), Some(t)) = (rule.collision_rate, trust.collision_rate) {
                if t < r {
                    conflict_wins += 1;
                }
            }
            detail.push(format!(
                "seed {seed}: conflicts {}/{} vs {}/{}",
                rule.conflicted_merges, rule.merge_attempts, trust.conflicted_merges, trust.merge_attempts
            ));
        }
        ensure(jerk_wins >= 8 && conflict_wins >= 8, || {
            format!(
                "jerk lower in {jerk_wins}/10 seeds, conflicted-merge rate lower in {conflict_wins}/10 seeds ({})",
                detail.join("; ")
            )
        })
    };
    verdict("directional trend", start, Some(Duration::from_secs(300)), run());
}

#[test]
fn performance() {
    let cfg = ScenarioConfig {
        name: "perf".into(),
        seed: 1,
        controller: ControllerMode::TrustFull,
        warmup: 300.0,
        duration: 3300.0,
        demand: DemandSpec::Fixed {
            level: 1000.0,
            split: rampsim::scenario::DEFAULT_SPLIT,
        },
        network: rampsim::scenario::NetworkConfig::default(),
        ..ScenarioConfig::base()
    };
    let start = Instant::now();
    let run = || -> Check {
        let policy = initial_policy(&cfg, 32);
        let mut w = World::new(cfg.clone(), Some(policy)).map_err(|e| e.to_string())?;
        w.exec = Execution::Sequential;
        let (mut sum, mut n) = (0usize, 0usize);
        while !w.is_finished() {
            w.step().map_err(|e| e.to_string())?;
            if w.time() >= cfg.warmup {
                sum += w.vehicles().len();
                n += 1;
            }
        }
        let mean = sum as f64 / n.max(1) as f64;
        let _ = writeln!(std::io::stderr(), "performance: mean {mean:.1} concurrent vehicles over {n} steps");
        ensure(mean >= 80.0, || format!("only {mean:.1} concurrent vehicles on average"))
    };
    let outcome = run();
    verdict("performance", start, Some(Duration::from_secs(60)), outcome);
}
