//! Scenario configuration: every knob of a run in one serialisable record.
//!
//! Files are TOML with one table per section. Unknown keys are rejected so a
//! typo is reported instead of silently ignored.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{IdmParams, MobilParams};
use crate::error::{Error, Result};
use crate::game::{DriverType, ExpectationMode, GamePayoffWeights, NonCoopParams};
use crate::reward::RewardParams;
use crate::scenario::{DemandSpec, NetworkConfig};
use crate::trust::TrustParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerMode {
    /// CAVs drive like ordinary human drivers (IDM + MOBIL).
    #[default]
    Rule,
    /// Game-arbitrated lane changes without trust or learning.
    GameOnly,
    /// Learned policy with only the hard safety check on lane changes.
    LearnOnly,
    /// Learned policy proposes, the game arbitrates, trust is disabled.
    LearnGame,
    /// Learned policy, trust-gated games and trust-shaped reward.
    TrustFull,
}

impl ControllerMode {
    pub const ALL: [ControllerMode; 5] = [
        ControllerMode::Rule,
        ControllerMode::GameOnly,
        ControllerMode::LearnOnly,
        ControllerMode::LearnGame,
        ControllerMode::TrustFull,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ControllerMode::Rule => "rule",
            ControllerMode::GameOnly => "game_only",
            ControllerMode::LearnOnly => "learn_only",
            ControllerMode::LearnGame => "learn_game",
            ControllerMode::TrustFull => "trust_full",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown controller `{s}`, expected one of rule, game_only, learn_only, learn_game, trust_full"
                ))
            })
    }

    pub fn uses_policy(self) -> bool {
        matches!(
            self,
            ControllerMode::LearnOnly | ControllerMode::LearnGame | ControllerMode::TrustFull
        )
    }

    pub fn uses_game(self) -> bool {
        matches!(
            self,
            ControllerMode::GameOnly | ControllerMode::LearnGame | ControllerMode::TrustFull
        )
    }

    pub fn uses_trust(self) -> bool {
        self == ControllerMode::TrustFull
    }
}

/// Step change of the CAV share of new arrivals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenetrationShift {
    pub at: f64,
    pub to: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GameConfig {
    pub weights: GamePayoffWeights,
    pub noncoop: NonCoopParams,
    pub expectation: ExpectationMode,
    /// Prior over human driver types; defaults to the three built-in styles.
    pub types: Vec<DriverType>,
    /// How long a cooperative follower commitment binds, s.
    pub commitment: f64,
    /// Expected-utility advantage a low-trust lane change must show.
    pub ambiguity_margin: f64,
    pub lookahead: f64,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            weights: GamePayoffWeights::default(),
            noncoop: NonCoopParams::default(),
            expectation: ExpectationMode::Standard,
            types: crate::game::default_type_prior(),
            commitment: 2.0,
            ambiguity_margin: 0.25,
            lookahead: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CavConfig {
    /// Lateral and policy decision period, s.
    pub decision_period: f64,
    pub lane_change_cooldown: f64,
    /// Jerk bound of the longitudinal command filter, m/s^3.
    pub jerk_limit: f64,
    /// Bound of the learned longitudinal residual, m/s^2.
    pub residual_accel_max: f64,
    /// Weight of the constant-acceleration heuristic in car following.
    pub coolness: f64,
}

impl Default for CavConfig {
    fn default() -> Self {
        Self {
            decision_period: 1.0,
            lane_change_cooldown: 2.0,
            jerk_limit: 1.5,
            residual_accel_max: 1.0,
            coolness: 0.99,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriverConfig {
    /// Half-width of the uniform desired-speed spread, as a fraction.
    pub speed_spread: f64,
    pub vehicle_length: f64,
    /// Remaining acceleration lane below which a normal driver still yields.
    pub urgent_distance: f64,
}

impl Default for DriverConfig {
    fn default() -> Self {
        Self {
            speed_spread: 0.1,
            vehicle_length: 5.0,
            urgent_distance: 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservationConfig {
    pub scan_range: f64,
    pub group_window: f64,
    /// History window k; k + 1 frames are kept.
    pub history: usize,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self {
            scan_range: 100.0,
            group_window: 250.0,
            history: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub ttc_threshold: f64,
    pub detector_interval: f64,
    pub smoothing_window: f64,
    pub baseline_window: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            ttc_threshold: 1.5,
            detector_interval: 60.0,
            smoothing_window: 60.0,
            baseline_window: 300.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub dt: f64,
    /// Measured period after warmup, s.
    pub duration: f64,
    pub warmup: f64,
    /// CAV share of arrivals.
    pub penetration: f64,
    pub penetration_shift: Option<PenetrationShift>,
    pub controller: ControllerMode,
    pub network: NetworkConfig,
    pub demand: DemandSpec,
    pub idm: IdmParams,
    pub mobil: MobilParams,
    pub trust: TrustParams,
    pub reward: RewardParams,
    pub game: GameConfig,
    pub cav: CavConfig,
    pub drivers: DriverConfig,
    pub observation: ObservationConfig,
    pub metrics: MetricsConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::base()
    }
}

impl ScenarioConfig {
    /// Desk-scale corridor: 2 km, merge at 1 km, 600 s after 120 s warmup.
    pub fn base() -> Self {
        Self {
            name: "base".into(),
            seed: 0,
            dt: 0.1,
            duration: 600.0,
            warmup: 120.0,
            penetration: 0.5,
            penetration_shift: None,
            controller: ControllerMode::Rule,
            network: NetworkConfig {
                mainline_length: 2_000.0,
                merge_zone_start: 1_000.0,
                ..NetworkConfig::default()
            },
            demand: DemandSpec::default(),
            idm: IdmParams::default(),
            mobil: MobilParams::default(),
            trust: TrustParams::default(),
            reward: RewardParams::default(),
            game: GameConfig::default(),
            cav: CavConfig::default(),
            drivers: DriverConfig::default(),
            observation: ObservationConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }

    /// Full corridor: 10 km with one hour warmup and five measured hours.
    pub fn full_scale() -> Self {
        Self {
            name: "paper".into(),
            duration: 5.0 * 3600.0,
            warmup: 3600.0,
            network: NetworkConfig::default(),
            ..Self::base()
        }
    }

    /// Resolves a built-in name (`base`, `paper`) or reads a TOML file.
    pub fn resolve(scenario: &str) -> Result<Self> {
        match scenario {
            "base" => Ok(Self::base()),
            "paper" => Ok(Self::full_scale()),
            path => Self::from_file(Path::new(path)),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serialisable")
    }

    pub fn horizon(&self) -> f64 {
        self.warmup + self.duration
    }

    pub fn steps(&self) -> u64 {
        (self.horizon() / self.dt).round() as u64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= 1.0) {
            return Err(Error::config(format!("dt must lie in (0, 1], got {}", self.dt)));
        }
        if !(self.duration >= 0.0 && self.warmup >= 0.0) {
            return Err(Error::config("duration and warmup must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.penetration) {
            return Err(Error::config(format!(
                "penetration must lie in [0, 1], got {}",
                self.penetration
            )));
        }
        if let Some(s) = self.penetration_shift {
            if !(0.0..=1.0).contains(&s.to) || !(s.at >= 0.0) {
                return Err(Error::config("penetration_shift needs at >= 0 and to in [0, 1]"));
            }
        }
        crate::scenario::build_network(&self.network)?;
        self.demand.validate()?;
        self.idm.validate()?;
        self.mobil.validate()?;
        self.trust.validate()?;
        self.reward.validate()?;
        self.game.weights.validate()?;
        crate::game::validate_prior(&self.game.types)?;
        if !(self.cav.decision_period >= self.dt && self.cav.jerk_limit > 0.0) {
            return Err(Error::config("cav.decision_period must be >= dt and cav.jerk_limit > 0"));
        }
        if !(self.observation.scan_range > 0.0 && self.observation.group_window > 0.0) {
            return Err(Error::config("observation ranges must be > 0"));
        }
        if !(self.metrics.detector_interval > 0.0 && self.metrics.baseline_window > 0.0) {
            return Err(Error::config("metrics windows must be > 0"));
        }
        Ok(())
    }

    /// CAV share of arrivals at time `t`.
    pub fn penetration_at(&self, t: f64) -> f64 {
        match self.penetration_shift {
            Some(s) if t >= s.at => s.to,
            _ => self.penetration,
        }
    }
}
