//! Multi-task loss terms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::track::{BehaviorClass, LabelSet, Point};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub w_d: f64,
    pub w_b: f64,
    pub w_i: f64,
    pub w_t: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_d: 1.0,
            w_b: 1.0,
            w_i: 0.5,
            w_t: 0.5,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            w_d: 0.0,
            w_b: 0.0,
            w_i: 0.0,
            w_t: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.w_d, self.w_b, self.w_i, self.w_t]
            .iter()
            .any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return Err(Error::InvalidSpec(format!(
                "loss weights must be finite and nonnegative: {self:?}"
            )));
        }
        Ok(())
    }

    /// The weights actually applied: only the trajectory term survives when
    /// multi-task training is off.
    pub fn effective(&self, multitask: bool) -> Self {
        if multitask {
            *self
        } else {
            Self {
                w_t: self.w_t,
                ..Self::zero()
            }
        }
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

pub fn loss_drone(is_drone: bool, prob: f64) -> f64 {
    let p = clamp_prob(prob);
    if is_drone {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

pub fn loss_behavior(target: BehaviorClass, probs: &[f64; BehaviorClass::COUNT]) -> f64 {
    -clamp_prob(probs[target.index()]).ln()
}

pub fn loss_intent(target: f64, predicted: f64) -> f64 {
    (target - predicted).powi(2)
}

/// Huber-style smooth L1 with transition at 1.
pub fn smooth_l1(e: f64) -> f64 {
    if e.abs() <= 1.0 {
        0.5 * e * e
    } else {
        e.abs() - 0.5
    }
}

pub(crate) fn smooth_l1_grad(e: f64) -> f64 {
    e.clamp(-1.0, 1.0)
}

/// Mean over the horizon of the per-step smooth-L1 error, summed over x and y.
pub fn loss_traj(truth: &[Point], pred: &[Point]) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(Error::LengthMismatch {
            left: truth.len(),
            right: pred.len(),
        });
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = truth
        .iter()
        .zip(pred)
        .map(|(t, p)| smooth_l1(t.x - p.x) + smooth_l1(t.y - p.y))
        .sum();
    Ok(sum / truth.len() as f64)
}

/// Unweighted loss terms of one prediction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossComponents {
    pub drone: f64,
    pub behavior: f64,
    pub intent: f64,
    pub traj: f64,
}

impl LossComponents {
    /// Semantic terms are zero when the example carries no labels.
    pub fn compute(
        labels: Option<&LabelSet>,
        drone_prob: f64,
        behavior_probs: &[f64; BehaviorClass::COUNT],
        intent: f64,
        truth: &[Point],
        pred: &[Point],
    ) -> Result<Self> {
        let traj = loss_traj(truth, pred)?;
        Ok(match labels {
            Some(l) => Self {
                drone: loss_drone(l.is_drone, drone_prob),
                behavior: loss_behavior(l.behavior, behavior_probs),
                intent: loss_intent(l.intent, intent),
                traj,
            },
            None => Self {
                traj,
                ..Default::default()
            },
        })
    }
}

pub fn total_loss(c: &LossComponents, weights: &LossWeights, multitask: bool) -> f64 {
    let w = weights.effective(multitask);
    w.w_d * c.drone + w.w_b * c.behavior + w.w_i * c.intent + w.w_t * c.traj
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn drone_bce_values() {
        assert!(loss_drone(true, 1.0 - 1e-7) < 1e-6);
        assert!((loss_drone(true, 0.5) - 2f64.ln()).abs() < 1e-12);
        assert!((loss_drone(false, 0.5) - 2f64.ln()).abs() < 1e-12);
        assert!(loss_drone(true, 0.0).is_finite());
        assert!(loss_drone(false, 1.0).is_finite());
    }

    #[test]
    fn behavior_ce_values() {
        let mut confident = [0.0; 5];
        confident[2] = 1.0;
        assert!(loss_behavior(BehaviorClass::Approach, &confident) < 1e-6);
        let uniform = [0.2; 5];
        assert!((loss_behavior(BehaviorClass::Evade, &uniform) - 5f64.ln()).abs() < 1e-12);
        let a = [0.1, 0.3, 0.4, 0.1, 0.1];
        let b = [0.3, 0.1, 0.4, 0.0, 0.2];
        assert_eq!(
            loss_behavior(BehaviorClass::Approach, &a),
            loss_behavior(BehaviorClass::Approach, &b)
        );
    }

    #[test]
    fn intent_mse_values() {
        assert_eq!(loss_intent(0.3, 0.3), 0.0);
        assert_eq!(loss_intent(0.0, 1.0), 1.0);
        assert!((loss_intent(0.2, 0.5) - 0.09).abs() < 1e-15);
    }

    #[test]
    fn traj_smooth_l1_values() {
        let p = [Point::new(1.0, 2.0), Point::new(3.0, 4.0)];
        assert_eq!(loss_traj(&p, &p).unwrap(), 0.0);
        let truth = [Point::new(0.5, 0.0)];
        assert_eq!(loss_traj(&truth, &[Point::new(0.0, 0.0)]).unwrap(), 0.125);
        let truth = [Point::new(3.0, 0.0)];
        assert_eq!(loss_traj(&truth, &[Point::new(0.0, 0.0)]).unwrap(), 2.5);
        assert!(matches!(
            loss_traj(&p, &p[..1]),
            Err(Error::LengthMismatch { left: 2, right: 1 })
        ));
    }

    #[test]
    fn total_loss_values() {
        let c = LossComponents {
            drone: 2f64.ln(),
            behavior: 5f64.ln(),
            intent: 0.09,
            traj: 2.5,
        };
        let expected = 2f64.ln() + 5f64.ln() + 0.045 + 1.25;
        assert!((total_loss(&c, &LossWeights::default(), true) - expected).abs() < 1e-12);
        assert!((expected - 3.5976).abs() < 1e-4);
        assert_eq!(total_loss(&c, &LossWeights::zero(), true), 0.0);
        assert_eq!(total_loss(&LossComponents::default(), &LossWeights::default(), true), 0.0);
        assert_eq!(total_loss(&c, &LossWeights::default(), false), 1.25);
    }

    proptest! {
        #[test]
        fn total_loss_is_linear_in_weights(
            c in (0.0f64..5.0, 0.0f64..5.0, 0.0f64..1.0, 0.0f64..50.0),
            a in (0.0f64..2.0, 0.0f64..2.0, 0.0f64..2.0, 0.0f64..2.0),
            b in (0.0f64..2.0, 0.0f64..2.0, 0.0f64..2.0, 0.0f64..2.0),
            k in 0.0f64..3.0,
        ) {
            let comps = LossComponents { drone: c.0, behavior: c.1, intent: c.2, traj: c.3 };
            let wa = LossWeights { w_d: a.0, w_b: a.1, w_i: a.2, w_t: a.3 };
            let wb = LossWeights { w_d: b.0, w_b: b.1, w_i: b.2, w_t: b.3 };
            let sum = LossWeights { w_d: a.0 + k * b.0, w_b: a.1 + k * b.1, w_i: a.2 + k * b.2, w_t: a.3 + k * b.3 };
            let lhs = total_loss(&comps, &sum, true);
            let rhs = total_loss(&comps, &wa, true) + k * total_loss(&comps, &wb, true);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
            prop_assert!(lhs >= 0.0);
        }

        #[test]
        fn components_are_nonnegative(p in 0.0f64..=1.0, y in proptest::bool::ANY, e in -100.0f64..100.0) {
            prop_assert!(loss_drone(y, p) >= 0.0);
            prop_assert!(smooth_l1(e) >= 0.0);
            prop_assert!(loss_intent(p, 1.0 - p) >= 0.0);
        }
    }
}
