//! Two-player lane-change games between a CAV (the ego, choosing a column)
//! and the prospective new follower in its target lane (choosing a row).
//!
//! Rows follow the order Accelerate, Keep, Decelerate, ChangeLane; columns
//! are ChangeLane, NotChangeLane. Cooperative games pick the joint-payoff
//! maximising cell; non-cooperative games have the ego best-respond to a
//! prior over follower driver types, each with its own mixed strategy.

use serde::{Deserialize, Serialize};

use crate::dynamics::{idm_or_emergency, IdmParams};
use crate::error::{Error, Result};
use crate::rng::RngStream;

pub type PayoffMatrix = [[f64; 2]; 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EgoStrategy {
    ChangeLane,
    NotChangeLane,
}

impl EgoStrategy {
    pub const ALL: [EgoStrategy; 2] = [EgoStrategy::ChangeLane, EgoStrategy::NotChangeLane];

    pub fn column(self) -> usize {
        match self {
            EgoStrategy::ChangeLane => 0,
            EgoStrategy::NotChangeLane => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FollowerStrategy {
    Accelerate,
    Keep,
    Decelerate,
    ChangeLane,
}

impl FollowerStrategy {
    pub const ALL: [FollowerStrategy; 4] = [
        FollowerStrategy::Accelerate,
        FollowerStrategy::Keep,
        FollowerStrategy::Decelerate,
        FollowerStrategy::ChangeLane,
    ];

    pub fn row(self) -> usize {
        match self {
            FollowerStrategy::Accelerate => 0,
            FollowerStrategy::Keep => 1,
            FollowerStrategy::Decelerate => 2,
            FollowerStrategy::ChangeLane => 3,
        }
    }

    /// Constant acceleration this strategy stands for over the look-ahead.
    pub fn acceleration(self, idm: &IdmParams) -> f64 {
        match self {
            FollowerStrategy::Accelerate => idm.a,
            FollowerStrategy::Keep => 0.0,
            FollowerStrategy::Decelerate => -idm.b,
            FollowerStrategy::ChangeLane => 0.0,
        }
    }
}

/// Safety-first ordering used to break ties: the earliest cell wins.
const EGO_TIE_ORDER: [EgoStrategy; 2] = [EgoStrategy::NotChangeLane, EgoStrategy::ChangeLane];
const FOLLOWER_TIE_ORDER: [FollowerStrategy; 4] = [
    FollowerStrategy::Keep,
    FollowerStrategy::Decelerate,
    FollowerStrategy::Accelerate,
    FollowerStrategy::ChangeLane,
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GamePayoffWeights {
    pub gamma_eff: f64,
    pub gamma_comf: f64,
    pub gamma_lc: f64,
    pub gamma_mlc: f64,
}

impl Default for GamePayoffWeights {
    fn default() -> Self {
        Self {
            gamma_eff: 0.3,
            gamma_comf: 0.3,
            gamma_lc: 0.2,
            gamma_mlc: 0.2,
        }
    }
}

impl GamePayoffWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.gamma_eff, self.gamma_comf, self.gamma_lc, self.gamma_mlc]
            .iter()
            .any(|g| !(*g >= 0.0))
        {
            return Err(Error::config("game weights must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseMode {
    Off,
    /// Independent Gumbel(0, scale) errors on each payoff.
    Gumbel { scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NonCoopParams {
    /// Ego payoff coefficients (constant, acceleration, speed change).
    pub alpha: [f64; 3],
    /// Follower payoff coefficients.
    pub beta: [f64; 3],
    pub noise: NoiseMode,
}

impl Default for NonCoopParams {
    fn default() -> Self {
        Self {
            alpha: [0.0, 1.0, 0.5],
            beta: [0.0, 1.0, 0.5],
            noise: NoiseMode::Off,
        }
    }
}

/// Probability vector over follower strategies in row order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct MixedStrategy([f64; 4]);

impl MixedStrategy {
    /// Normalises strictly positive weights onto the simplex.
    pub fn new(weights: [f64; 4]) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::config(format!(
                "mixed strategy weights must be finite and > 0, got {weights:?}"
            )));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() <= 1e-12 {
            // already on the simplex; keep the exact values so files round-trip
            return Ok(Self(weights));
        }
        Ok(Self(weights.map(|w| w / s)))
    }

    pub fn uniform() -> Self {
        Self([0.25; 4])
    }

    pub fn probs(&self) -> &[f64; 4] {
        &self.0
    }
}

impl TryFrom<[f64; 4]> for MixedStrategy {
    type Error = Error;

    fn try_from(value: [f64; 4]) -> Result<Self> {
        MixedStrategy::new(value)
    }
}

impl From<MixedStrategy> for [f64; 4] {
    fn from(m: MixedStrategy) -> Self {
        m.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverStyle {
    Aggressive,
    Normal,
    Cautious,
}

impl DriverStyle {
    pub const ALL: [DriverStyle; 3] = [DriverStyle::Aggressive, DriverStyle::Normal, DriverStyle::Cautious];

    pub fn as_str(self) -> &'static str {
        match self {
            DriverStyle::Aggressive => "aggressive",
            DriverStyle::Normal => "normal",
            DriverStyle::Cautious => "cautious",
        }
    }
}

/// A Harsanyi type: the follower's mixed strategy when the ego changes lane
/// (`p`) and when it does not (`q`), with the type's prior probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverType {
    pub style: DriverStyle,
    pub p: MixedStrategy,
    pub q: MixedStrategy,
    pub prior: f64,
}

impl DriverType {
    pub fn default_for(style: DriverStyle, prior: f64) -> Self {
        let w = match style {
            DriverStyle::Aggressive => [0.5, 0.2, 0.1, 0.2],
            DriverStyle::Normal => [0.2, 0.4, 0.3, 0.1],
            DriverStyle::Cautious => [0.05, 0.35, 0.5, 0.1],
        };
        let m = MixedStrategy::new(w).expect("default weights are positive");
        Self {
            style,
            p: m,
            q: m,
            prior,
        }
    }
}

pub fn default_type_prior() -> Vec<DriverType> {
    DriverStyle::ALL
        .iter()
        .map(|&s| DriverType::default_for(s, 1.0 / 3.0))
        .collect()
}

pub fn validate_prior(types: &[DriverType]) -> Result<()> {
    if types.is_empty() {
        return Err(Error::config("driver type prior is empty"));
    }
    if types.iter().any(|t| !(t.prior >= 0.0)) {
        return Err(Error::config("driver type priors must be >= 0"));
    }
    let s: f64 = types.iter().map(|t| t.prior).sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("driver type priors sum to {s}, expected 1")));
    }
    for t in types {
        for m in [&t.p, &t.q] {
            let sum: f64 = m.probs().iter().sum();
            if (sum - 1.0).abs() > 1e-9 || m.probs().iter().any(|p| *p <= 0.0) {
                return Err(Error::config("mixed strategy is off the simplex"));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExpectationMode {
    /// Σ_types prior · Σ_n prob_n · P[n][c].
    #[default]
    Standard,
    /// Σ_n (P[n][c] + prob_n · Q[n][c]), with the ego payoff unweighted.
    #[serde(rename = "paper-literal-eq23")]
    Literal,
}

/// The prospective new follower as seen at decision time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowerScene {
    pub speed: f64,
    /// Bumper gap from the follower's front to the ego's rear if the ego
    /// were in the target lane now.
    pub lag_gap: f64,
    /// Whether the follower itself has a free lane to move into.
    pub can_change_lane: bool,
}

/// Local scene for one ego/new-follower pair. Accelerations are IDM values
/// precomputed by the caller from the world snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GameScene {
    pub ego_speed: f64,
    /// Ego acceleration if it stays in its lane.
    pub stay_accel: f64,
    /// Ego acceleration behind its new leader in the target lane.
    pub target_accel: f64,
    /// True for optional lane changes, false for a mandatory merge.
    pub discretionary: bool,
    /// Mandatory-merge urgency in [0, 1].
    pub urgency: f64,
    pub follower: FollowerScene,
    /// Follower longitudinal model, used for the look-ahead and feasibility.
    pub idm: IdmParams,
    pub b_safe: f64,
    pub lookahead: f64,
}

fn advance(v: f64, a: f64, t: f64) -> (f64, f64) {
    let v_end = v + a * t;
    if v_end >= 0.0 {
        (v_end, v * t + 0.5 * a * t * t)
    } else {
        (0.0, v * v / (2.0 * -a))
    }
}

/// Predicted outcome of one cell over the look-ahead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellOutcome {
    pub merge_feasible: bool,
    pub ego_accel: f64,
    pub ego_speed_change: f64,
    pub follower_accel: f64,
    pub follower_speed_change: f64,
}

impl GameScene {
    /// Whether the ego can complete a change with the follower playing `sj`:
    /// the gap stays positive and the follower's IDM response at the end of
    /// the look-ahead respects `-b_safe`.
    pub fn merge_feasible(&self, sj: FollowerStrategy) -> bool {
        let f = &self.follower;
        if sj == FollowerStrategy::ChangeLane && f.can_change_lane {
            return true;
        }
        if f.lag_gap <= 0.0 {
            return false;
        }
        let (ve, de) = advance(self.ego_speed, self.target_accel, self.lookahead);
        let (vf, df) = advance(f.speed, sj.acceleration(&self.idm), self.lookahead);
        let gap = f.lag_gap + de - df;
        gap > 0.0 && idm_or_emergency(vf, vf - ve, gap, &self.idm) > -self.b_safe
    }

    pub fn outcome(&self, si: EgoStrategy, sj: FollowerStrategy) -> CellOutcome {
        let feasible = self.merge_feasible(sj);
        let ego_accel = match si {
            EgoStrategy::NotChangeLane => self.stay_accel,
            EgoStrategy::ChangeLane if feasible => self.target_accel,
            // aborted attempt: stay and brake back into the own-lane gap
            EgoStrategy::ChangeLane => self.stay_accel - self.idm.b,
        };
        let follower_accel = sj.acceleration(&self.idm);
        let (ve, _) = advance(self.ego_speed, ego_accel, self.lookahead);
        let (vf, _) = advance(self.follower.speed, follower_accel, self.lookahead);
        CellOutcome {
            merge_feasible: feasible,
            ego_accel,
            ego_speed_change: ve - self.ego_speed,
            follower_accel,
            follower_speed_change: vf - self.follower.speed,
        }
    }
}

/// The four payoff components of one cooperative cell.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CoopComponents {
    pub eff: f64,
    pub comf: f64,
    pub lc: f64,
    pub mlc: f64,
}

impl CoopComponents {
    pub fn weighted(&self, w: &GamePayoffWeights) -> f64 {
        w.gamma_eff * self.eff + w.gamma_comf * self.comf + w.gamma_lc * self.lc + w.gamma_mlc * self.mlc
    }
}

pub fn coop_components(scene: &GameScene, si: EgoStrategy, sj: FollowerStrategy) -> CoopComponents {
    let o = scene.outcome(si, sj);
    let changed = si == EgoStrategy::ChangeLane && o.merge_feasible;
    CoopComponents {
        eff: (o.ego_speed_change + o.follower_speed_change) / scene.idm.desired_speed,
        comf: -(o.ego_accel.abs() + o.follower_accel.abs()) / scene.b_safe,
        lc: if changed && scene.discretionary && scene.target_accel > scene.stay_accel {
            1.0
        } else {
            0.0
        },
        mlc: if changed { scene.urgency } else { 0.0 },
    }
}

pub fn coop_payoff_matrix(scene: &GameScene, weights: &GamePayoffWeights) -> PayoffMatrix {
    let mut m = [[0.0; 2]; 4];
    for sj in FollowerStrategy::ALL {
        for si in EgoStrategy::ALL {
            m[sj.row()][si.column()] = coop_components(scene, si, sj).weighted(weights);
        }
    }
    m
}

/// Joint-payoff maximising cell with safety-first tie-breaking.
pub fn solve_cooperative(matrix: &PayoffMatrix) -> (EgoStrategy, FollowerStrategy) {
    let mut best = (EgoStrategy::NotChangeLane, FollowerStrategy::Keep);
    let mut best_value = f64::NEG_INFINITY;
    for si in EGO_TIE_ORDER {
        for sj in FOLLOWER_TIE_ORDER {
            let v = matrix[sj.row()][si.column()];
            if v > best_value {
                best_value = v;
                best = (si, sj);
            }
        }
    }
    best
}

/// Ego and follower payoffs of one cell.
pub fn noncoop_payoffs(
    scene: &GameScene,
    si: EgoStrategy,
    sj: FollowerStrategy,
    params: &NonCoopParams,
    noise: Option<&mut RngStream>,
) -> (f64, f64) {
    let o = scene.outcome(si, sj);
    let [a0, a1, a2] = params.alpha;
    let [b0, b1, b2] = params.beta;
    let (eps, del) = match (params.noise, noise) {
        (NoiseMode::Gumbel { scale }, Some(rng)) => {
            let g = rand_distr::Gumbel::new(0.0, scale).expect("gumbel scale must be positive");
            (rng.sample(g), rng.sample(g))
        }
        _ => (0.0, 0.0),
    };
    (
        a0 + a1 * o.ego_accel + a2 * o.ego_speed_change + eps,
        b0 + b1 * o.follower_accel + b2 * o.follower_speed_change + del,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PayoffTable {
    pub coop: PayoffMatrix,
    pub noncoop_ego: PayoffMatrix,
    pub noncoop_follower: PayoffMatrix,
}

/// Fills both non-cooperative matrices. Noise draws run in row-major order.
pub fn noncoop_tables(
    scene: &GameScene,
    params: &NonCoopParams,
    mut noise: Option<&mut RngStream>,
) -> (PayoffMatrix, PayoffMatrix) {
    let mut p = [[0.0; 2]; 4];
    let mut q = [[0.0; 2]; 4];
    for sj in FollowerStrategy::ALL {
        for si in EgoStrategy::ALL {
            let (pv, qv) = noncoop_payoffs(scene, si, sj, params, noise.as_deref_mut());
            p[sj.row()][si.column()] = pv;
            q[sj.row()][si.column()] = qv;
        }
    }
    (p, q)
}

/// Expected ego utility of each column, `[ChangeLane, NotChangeLane]`.
pub fn expected_utilities(tables: &PayoffTable, types: &[DriverType], mode: ExpectationMode) -> [f64; 2] {
    let mut eu = [0.0; 2];
    for t in types {
        for si in EgoStrategy::ALL {
            let c = si.column();
            let probs = match si {
                EgoStrategy::ChangeLane => t.p.probs(),
                EgoStrategy::NotChangeLane => t.q.probs(),
            };
            let v: f64 = (0..4)
                .map(|n| match mode {
                    ExpectationMode::Standard => probs[n] * tables.noncoop_ego[n][c],
                    ExpectationMode::Literal => {
                        tables.noncoop_ego[n][c] + probs[n] * tables.noncoop_follower[n][c]
                    }
                })
                .sum();
            eu[c] += t.prior * v;
        }
    }
    eu
}

/// Ego best response against the type prior; ties go to NotChangeLane.
pub fn ego_best_response(
    tables: &PayoffTable,
    types: &[DriverType],
    mode: ExpectationMode,
) -> Result<EgoStrategy> {
    validate_prior(types)?;
    let eu = expected_utilities(tables, types, mode);
    Ok(if eu[EgoStrategy::ChangeLane.column()] > eu[EgoStrategy::NotChangeLane.column()] {
        EgoStrategy::ChangeLane
    } else {
        EgoStrategy::NotChangeLane
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene() -> GameScene {
        GameScene {
            ego_speed: 25.0,
            stay_accel: 0.0,
            target_accel: 0.0,
            discretionary: true,
            urgency: 0.0,
            follower: FollowerScene {
                speed: 25.0,
                lag_gap: 60.0,
                can_change_lane: false,
            },
            idm: IdmParams::default(),
            b_safe: 4.0,
            lookahead: 1.0,
        }
    }

    #[test]
    fn zero_weights_give_zero_matrix() {
        let w = GamePayoffWeights {
            gamma_eff: 0.0,
            gamma_comf: 0.0,
            gamma_lc: 0.0,
            gamma_mlc: 0.0,
        };
        assert_eq!(coop_payoff_matrix(&scene(), &w), [[0.0; 2]; 4]);
    }

    #[test]
    fn speed_gain_shows_up_in_efficiency_column() {
        let s = GameScene {
            target_accel: 2.0,
            ..scene()
        };
        let w = GamePayoffWeights {
            gamma_eff: 0.3,
            gamma_comf: 0.0,
            gamma_lc: 0.0,
            gamma_mlc: 0.0,
        };
        let m = coop_payoff_matrix(&s, &w);
        let row = FollowerStrategy::Keep.row();
        let diff = m[row][EgoStrategy::ChangeLane.column()] - m[row][EgoStrategy::NotChangeLane.column()];
        assert!((diff - 0.3 * 2.0 / 30.0).abs() < 1e-12, "{diff}");
    }

    #[test]
    fn unique_maximum_is_found() {
        let mut m = [[0.5; 2]; 4];
        m[FollowerStrategy::Decelerate.row()][EgoStrategy::ChangeLane.column()] = 5.0;
        m[0][1] = 1.0;
        assert_eq!(
            solve_cooperative(&m),
            (EgoStrategy::ChangeLane, FollowerStrategy::Decelerate)
        );
    }

    #[test]
    fn constant_matrix_resolves_to_safest_cell() {
        assert_eq!(
            solve_cooperative(&[[2.0; 2]; 4]),
            (EgoStrategy::NotChangeLane, FollowerStrategy::Keep)
        );
    }

    #[test]
    fn noncoop_examples() {
        let zero = NonCoopParams {
            alpha: [0.0; 3],
            beta: [0.0; 3],
            noise: NoiseMode::Off,
        };
        assert_eq!(
            noncoop_payoffs(&scene(), EgoStrategy::ChangeLane, FollowerStrategy::Accelerate, &zero, None),
            (0.0, 0.0)
        );
        let s = GameScene {
            stay_accel: 0.5,
            ..scene()
        };
        let p = NonCoopParams {
            alpha: [1.0, 2.0, 0.0],
            ..zero
        };
        let (pv, _) = noncoop_payoffs(&s, EgoStrategy::NotChangeLane, FollowerStrategy::Keep, &p, None);
        assert!((pv - 2.0).abs() < 1e-12);
    }

    #[test]
    fn seeded_noise_is_repeatable() {
        let p = NonCoopParams {
            noise: NoiseMode::Gumbel { scale: 0.5 },
            ..Default::default()
        };
        let draw = || {
            let mut rng = RngStream::new(99, "game/noise");
            noncoop_payoffs(&scene(), EgoStrategy::ChangeLane, FollowerStrategy::Keep, &p, Some(&mut rng))
        };
        assert_eq!(draw(), draw());
        assert_ne!(draw(), noncoop_payoffs(&scene(), EgoStrategy::ChangeLane, FollowerStrategy::Keep, &p, None));
    }

    fn single_uniform() -> Vec<DriverType> {
        vec![DriverType {
            style: DriverStyle::Normal,
            p: MixedStrategy::uniform(),
            q: MixedStrategy::uniform(),
            prior: 1.0,
        }]
    }

    #[test]
    fn expectation_examples() {
        let mut t = PayoffTable::default();
        t.noncoop_ego[0][0] = 4.0;
        let eu = expected_utilities(&t, &single_uniform(), ExpectationMode::Standard);
        assert!((eu[0] - 1.0).abs() < 1e-12);

        let same = PayoffTable {
            noncoop_ego: [[1.5, 1.5]; 4],
            ..Default::default()
        };
        assert_eq!(
            ego_best_response(&same, &default_type_prior(), ExpectationMode::Standard).unwrap(),
            EgoStrategy::NotChangeLane
        );
        let eu = expected_utilities(&same, &default_type_prior(), ExpectationMode::Standard);
        assert!((eu[0] - 1.5).abs() < 1e-12 && (eu[1] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn literal_mode_follows_printed_formula() {
        let t = PayoffTable {
            noncoop_ego: [[1.0, 0.0]; 4],
            noncoop_follower: [[0.0, 8.0]; 4],
            ..Default::default()
        };
        // change: 4 * 1 = 4; keep: 4 * 0.25 * 8 = 8
        let eu = expected_utilities(&t, &single_uniform(), ExpectationMode::Literal);
        assert!((eu[0] - 4.0).abs() < 1e-12 && (eu[1] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_prior_is_rejected() {
        let mut types = default_type_prior();
        types[0].prior = 0.5;
        assert!(matches!(
            ego_best_response(&PayoffTable::default(), &types, ExpectationMode::Standard),
            Err(Error::Config(_))
        ));
        assert!(MixedStrategy::new([0.0, 1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn accelerating_follower_blocks_tight_merge() {
        let s = GameScene {
            ego_speed: 22.0,
            target_accel: 0.5,
            follower: FollowerScene {
                speed: 28.0,
                lag_gap: 45.0,
                can_change_lane: true,
            },
            ..scene()
        };
        assert!(!s.merge_feasible(FollowerStrategy::Accelerate));
        assert!(s.merge_feasible(FollowerStrategy::ChangeLane));
        let o = s.outcome(EgoStrategy::ChangeLane, FollowerStrategy::Accelerate);
        assert_eq!(o.ego_accel, s.stay_accel - s.idm.b);
    }
}
