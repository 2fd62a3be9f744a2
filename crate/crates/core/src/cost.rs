//! Delay-dependent cost families, energy/delay weighting and rewards.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_COST_CAP: f64 = 100.0;

/// Shape of the delay-dependent cost `C(tau)`.
///
/// Every family except `Identity` is capped at `cap`. `Identity` is the raw
/// delay and reproduces the plain average-delay objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DelayCost {
    #[default]
    Identity,
    /// `0` up to the deadline, `cap` afterwards.
    Strict {
        deadline: f64,
        #[serde(default = "default_cap")]
        cap: f64,
    },
    /// `min(exp(c1 tau) - 1, cap)`, `c1 > 0`.
    Exponential {
        #[serde(default = "one")]
        c1: f64,
        #[serde(default = "default_cap")]
        cap: f64,
    },
    /// `min(tau^c2, cap)`, `c2 > 1` (quadratic for `c2 = 2`).
    Power {
        #[serde(default = "two")]
        c2: f64,
        #[serde(default = "default_cap")]
        cap: f64,
    },
    /// `min(tau^c3, cap)`, `0 < c3 <= 1`.
    Sublinear {
        #[serde(default = "half")]
        c3: f64,
        #[serde(default = "default_cap")]
        cap: f64,
    },
    /// `min(ln(1 + c4 tau), cap)`, `c4 > 0`.
    Logarithmic {
        #[serde(default = "one")]
        c4: f64,
        #[serde(default = "default_cap")]
        cap: f64,
    },
    /// `min(tau, cap)`.
    Linear {
        #[serde(default = "default_cap")]
        cap: f64,
    },
}

fn default_cap() -> f64 {
    DEFAULT_COST_CAP
}

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

fn half() -> f64 {
    0.5
}

impl DelayCost {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Err(Error::config(format!("cost.{field}"), reason));
        let cap = match *self {
            DelayCost::Identity => return Ok(()),
            DelayCost::Strict { deadline, cap } => {
                if !(deadline > 0.0) {
                    return bad("deadline", "must be > 0");
                }
                cap
            }
            DelayCost::Exponential { c1, cap } => {
                if !(c1 > 0.0) {
                    return bad("c1", "must be > 0");
                }
                cap
            }
            DelayCost::Power { c2, cap } => {
                if !(c2 > 1.0) {
                    return bad("c2", "must be > 1");
                }
                cap
            }
            DelayCost::Sublinear { c3, cap } => {
                if !(c3 > 0.0 && c3 <= 1.0) {
                    return bad("c3", "must be in (0, 1]");
                }
                cap
            }
            DelayCost::Logarithmic { c4, cap } => {
                if !(c4 > 0.0) {
                    return bad("c4", "must be > 0");
                }
                cap
            }
            DelayCost::Linear { cap } => cap,
        };
        if !(cap > 0.0) || !cap.is_finite() {
            return bad("cap", "must be finite and > 0");
        }
        Ok(())
    }

    pub fn cap(&self) -> f64 {
        match *self {
            DelayCost::Identity => f64::INFINITY,
            DelayCost::Strict { cap, .. }
            | DelayCost::Exponential { cap, .. }
            | DelayCost::Power { cap, .. }
            | DelayCost::Sublinear { cap, .. }
            | DelayCost::Logarithmic { cap, .. }
            | DelayCost::Linear { cap } => cap,
        }
    }

    pub fn eval(&self, tau: f64) -> f64 {
        let raw = match *self {
            DelayCost::Identity => return tau,
            DelayCost::Strict { deadline, cap } => {
                if tau <= deadline {
                    0.0
                } else {
                    cap
                }
            }
            DelayCost::Exponential { c1, .. } => (c1 * tau).exp_m1(),
            DelayCost::Power { c2, .. } => tau.powf(c2),
            DelayCost::Sublinear { c3, .. } => tau.powf(c3),
            DelayCost::Logarithmic { c4, .. } => (c4 * tau).ln_1p(),
            DelayCost::Linear { .. } => tau,
        };
        raw.min(self.cap())
    }
}

/// Weights of the delay and energy costs in the total cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub delay: f64,
    pub energy: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            delay: 1.0,
            energy: 0.0,
        }
    }
}

impl CostWeights {
    pub fn new(delay: f64, energy: f64) -> Result<Self> {
        let w = CostWeights { delay, energy };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("cost.w_delay", self.delay), ("cost.w_energy", self.energy)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(field, "must be finite and >= 0"));
            }
        }
        if self.delay == 0.0 && self.energy == 0.0 {
            return Err(Error::config(
                "cost.w_delay",
                "delay and energy weights cannot both be zero",
            ));
        }
        Ok(())
    }

    pub fn total(&self, delay_cost: f64, energy_cost: f64) -> f64 {
        self.delay * delay_cost + self.energy * energy_cost
    }
}

/// Full cost description used by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostModel {
    pub delay_cost: DelayCost,
    pub weights: CostWeights,
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        self.delay_cost.validate()?;
        self.weights.validate()
    }

    /// True when the total cost is exactly the task delay.
    pub fn is_pure_delay(&self) -> bool {
        self.delay_cost == DelayCost::Identity && self.weights == CostWeights::default()
    }

    pub fn cost(&self, delay: f64, energy: f64) -> f64 {
        self.weights.total(self.delay_cost.eval(delay), energy)
    }
}

/// Which quantity the learning agent is rewarded on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Minus the task delay.
    Delay,
    /// Minus the weighted total cost.
    Cost,
    /// Minus the slower of the local and edge halves of a split task.
    Partial,
}

/// Reward of a finished task. For a split task `delay` is already the
/// maximum of the two halves, so `Partial` and `Delay` coincide numerically.
pub fn reward(mode: RewardMode, delay: f64, cost: f64) -> f64 {
    match mode {
        RewardMode::Delay | RewardMode::Partial => -delay,
        RewardMode::Cost => -cost,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn family_examples() {
        let strict = DelayCost::Strict {
            deadline: 1.0,
            cap: 10.0,
        };
        assert_eq!(strict.eval(0.5), 0.0);
        assert_eq!(strict.eval(2.0), 10.0);
        assert_eq!(DelayCost::Power { c2: 2.0, cap: 10.0 }.eval(2.0), 4.0);
        let log = DelayCost::Logarithmic { c4: 1.0, cap: 10.0 };
        assert!((log.eval(std::f64::consts::E - 1.0) - 1.0).abs() < 1e-15);
        assert_eq!(DelayCost::Linear { cap: 5.0 }.eval(7.0), 5.0);
        assert_eq!(
            DelayCost::Exponential {
                c1: 1.0,
                cap: 100.0
            }
            .eval(10.0),
            100.0
        );
        assert_eq!(DelayCost::Identity.eval(1234.5), 1234.5);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(DelayCost::Power { c2: 1.0, cap: 10.0 }.validate().is_err());
        assert!(DelayCost::Sublinear { c3: 1.5, cap: 10.0 }
            .validate()
            .is_err());
        assert!(DelayCost::Exponential { c1: 0.0, cap: 10.0 }
            .validate()
            .is_err());
        assert!(DelayCost::Logarithmic {
            c4: -1.0,
            cap: 10.0
        }
        .validate()
        .is_err());
        assert!(DelayCost::Strict {
            deadline: 0.0,
            cap: 10.0
        }
        .validate()
        .is_err());
        assert!(DelayCost::Linear { cap: 0.0 }.validate().is_err());
        assert!(CostWeights::new(0.0, 0.0).is_err());
        assert!(CostWeights::new(-1.0, 1.0).is_err());
    }

    #[test]
    fn total_cost_examples() {
        let c = |d, e| (CostWeights::new(d, e).unwrap(), 4.0, 2.0);
        let (w, cd, ce) = c(1.0, 0.0);
        assert_eq!(w.total(cd, ce), 4.0);
        let (w, cd, ce) = c(0.5, 0.5);
        assert_eq!(w.total(cd, ce), 3.0);
        let (w, cd, ce) = c(0.0, 1.0);
        assert_eq!(w.total(cd, ce), 2.0);
    }

    #[test]
    fn reward_examples() {
        assert_eq!(reward(RewardMode::Delay, 3.5, 0.0), -3.5);
        assert_eq!(reward(RewardMode::Partial, f64::max(2.0, 3.0), 0.0), -3.0);
        assert_eq!(reward(RewardMode::Cost, 1.0, 7.0), -7.0);
    }

    #[test]
    fn pure_delay_reduction_is_exact() {
        let m = CostModel::default();
        assert!(m.is_pure_delay());
        for tau in [0.0, 0.37, 7.5, 1e4] {
            assert_eq!(m.cost(tau, 123.0), tau);
        }
    }

    fn any_family() -> impl Strategy<Value = DelayCost> {
        let cap = 0.1f64..200.0;
        prop_oneof![
            (0.01f64..20.0, cap.clone())
                .prop_map(|(deadline, cap)| DelayCost::Strict { deadline, cap }),
            (0.01f64..5.0, cap.clone()).prop_map(|(c1, cap)| DelayCost::Exponential { c1, cap }),
            (1.001f64..4.0, cap.clone()).prop_map(|(c2, cap)| DelayCost::Power { c2, cap }),
            (0.01f64..=1.0, cap.clone()).prop_map(|(c3, cap)| DelayCost::Sublinear { c3, cap }),
            (0.01f64..10.0, cap.clone()).prop_map(|(c4, cap)| DelayCost::Logarithmic { c4, cap }),
            cap.prop_map(|cap| DelayCost::Linear { cap }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn costs_are_monotone_and_capped(family in any_family(), a in 0.0f64..50.0, b in 0.0f64..50.0) {
            prop_assert!(family.validate().is_ok());
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(family.eval(lo) <= family.eval(hi));
            prop_assert!(family.eval(hi) <= family.cap());
            prop_assert!(family.eval(lo) >= 0.0);
        }
    }
}
