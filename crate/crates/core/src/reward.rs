//! Self-interested, cooperative and trust-blended per-step rewards.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardParams {
    pub w_safety: f64,
    pub w_comfort: f64,
    pub w_efficiency: f64,
    /// Headway below which the safety penalty applies, m.
    pub d_safe: f64,
    /// Free-flow desired speed, m/s.
    pub v_desired: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            w_safety: 1.0,
            w_comfort: 1.0,
            w_efficiency: 1.0,
            d_safe: 4.0,
            v_desired: 30.0,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        if [self.w_safety, self.w_comfort, self.w_efficiency]
            .iter()
            .any(|w| !(*w >= 0.0))
        {
            return Err(Error::config("reward weights must be >= 0"));
        }
        if !(self.d_safe > 0.0 && self.v_desired > 0.0) {
            return Err(Error::config("reward.d_safe and reward.v_desired must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub safety: f64,
    pub comfort: f64,
    pub efficiency: f64,
    pub self_total: f64,
    pub coop: f64,
    pub lambda: f64,
    pub total: f64,
}

/// Penalty-only self reward. `headway` is bumper-to-bumper distance to the
/// same-lane leader (`f64::INFINITY` without one).
pub fn self_reward(headway: f64, jerk: f64, v: f64, params: &RewardParams) -> RewardBreakdown {
    let safety = if headway < params.d_safe { -1.0 } else { 0.0 };
    let comfort = -jerk.abs();
    let efficiency = -(v - params.v_desired).abs();
    let self_total =
        params.w_safety * safety + params.w_comfort * comfort + params.w_efficiency * efficiency;
    RewardBreakdown {
        safety,
        comfort,
        efficiency,
        self_total,
        coop: 0.0,
        lambda: 0.0,
        total: self_total,
    }
}

/// Trust-weighted mean of neighbour self rewards; zero for an empty or
/// zero-trust neighbourhood.
pub fn coop_reward(neighbours: &[(f64, f64)]) -> f64 {
    let z: f64 = neighbours.iter().map(|(t, _)| t).sum();
    if z <= 0.0 {
        return 0.0;
    }
    neighbours.iter().map(|(t, r)| t * r).sum::<f64>() / z
}

pub fn total_reward(self_total: f64, coop: f64, lambda: f64) -> f64 {
    (1.0 - lambda) * self_total + lambda * coop
}

impl RewardBreakdown {
    /// Fills the cooperative part and recomputes the blended total.
    pub fn blend(mut self, coop: f64, lambda: f64) -> Self {
        self.coop = coop;
        self.lambda = lambda;
        self.total = total_reward(self.self_total, coop, lambda);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn self_reward_examples() {
        let p = RewardParams::default();
        let r = self_reward(3.0, 0.0, 30.0, &p);
        assert_eq!((r.safety, r.comfort, r.efficiency, r.self_total), (-1.0, 0.0, 0.0, -1.0));
        assert_eq!(self_reward(f64::INFINITY, 0.0, 30.0, &p).self_total, 0.0);
        assert!((self_reward(10.0, 2.0, 25.0, &p).self_total - (-7.0)).abs() < 1e-12);
    }

    #[test]
    fn coop_examples() {
        assert!((coop_reward(&[(0.8, -1.0), (0.2, -3.0)]) - (-1.4)).abs() < 1e-12);
        assert_eq!(coop_reward(&[]), 0.0);
        assert_eq!(coop_reward(&[(0.0, -5.0)]), 0.0);
        for c in [-3.5, 0.0, 2.25] {
            assert!((coop_reward(&[(0.5, c), (0.5, c)]) - c).abs() < 1e-12);
        }
    }

    #[test]
    fn total_examples() {
        assert_eq!(total_reward(-2.0, -1.4, 0.0), -2.0);
        assert_eq!(total_reward(-2.0, -1.4, 1.0), -1.4);
        assert!((total_reward(-2.0, -1.4, 0.5) - (-1.7)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn total_is_convex_combination(s in -50.0f64..0.0, c in -50.0f64..0.0, l in 0.0f64..=1.0) {
            let t = total_reward(s, c, l);
            prop_assert!(t >= s.min(c) - 1e-12 && t <= s.max(c) + 1e-12);
        }

        #[test]
        fn coop_bounded_and_scale_invariant(
            n in prop::collection::vec((0.01f64..1.0, -20.0f64..0.0), 1..8),
            k in 0.01f64..100.0,
        ) {
            let c = coop_reward(&n);
            let lo = n.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
            let hi = n.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(c >= lo - 1e-9 && c <= hi + 1e-9);
            let scaled: Vec<_> = n.iter().map(|&(t, r)| (t * k, r)).collect();
            prop_assert!((coop_reward(&scaled) - c).abs() <= 1e-9 * (1.0 + c.abs()));
        }

        #[test]
        fn self_components_are_penalties(h in 0.0f64..200.0, j in -20.0f64..20.0, v in 0.0f64..40.0) {
            let r = self_reward(h, j, v, &RewardParams::default());
            prop_assert!(r.safety <= 0.0 && r.comfort <= 0.0 && r.efficiency <= 0.0);
            prop_assert!(r.self_total <= 0.0);
        }
    }
}
