//! Trajectory predictors behind one interface: the three extrapolation
//! baselines and the learned model.

use crate::error::{Error, Result};
use crate::tokenizer::Example;
use crate::track::{BehaviorClass, Point};
use crate::transformer::{forward, ModelConfig, Parameters};

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Absolute pixel positions for steps `1..=H`.
    pub positions: Vec<Point>,
    pub drone_prob: f64,
    pub behavior_probs: [f64; BehaviorClass::COUNT],
    pub intent: f64,
}

impl Prediction {
    /// A trajectory with no semantic content: drone probability 0, uniform
    /// behavior, zero intent.
    pub fn trajectory_only(positions: Vec<Point>) -> Self {
        Self {
            positions,
            drone_prob: 0.0,
            behavior_probs: [1.0 / BehaviorClass::COUNT as f64; BehaviorClass::COUNT],
            intent: 0.0,
        }
    }

    pub fn behavior(&self) -> BehaviorClass {
        let best = self
            .behavior_probs
            .iter()
            .enumerate()
            .fold(0, |best, (i, p)| if *p > self.behavior_probs[best] { i } else { best });
        BehaviorClass::from_index(best).expect("five behavior classes")
    }
}

pub trait Predictor: Sync {
    fn name(&self) -> &str;
    fn predict(&self, example: &Example) -> Result<Prediction>;
}

fn extrapolate(anchor: Point, velocity: Point, horizon: usize) -> Vec<Point> {
    (1..=horizon)
        .map(|tau| anchor + velocity * tau as f64)
        .collect()
}

fn require_history(example: &Example) -> Result<()> {
    if example.history.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: example.history.len(),
        });
    }
    Ok(())
}

/// Assumes the target stays where it was last seen.
#[derive(Debug, Clone, Copy, Default)]
pub struct FrameBased;

impl Predictor for FrameBased {
    fn name(&self) -> &str {
        "frame"
    }

    fn predict(&self, example: &Example) -> Result<Prediction> {
        Ok(Prediction::trajectory_only(vec![
            example.anchor;
            example.horizon()
        ]))
    }
}

/// Linear extrapolation of the last frame-to-frame displacement.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrackingOnly;

impl Predictor for TrackingOnly {
    fn name(&self) -> &str {
        "track"
    }

    fn predict(&self, example: &Example) -> Result<Prediction> {
        require_history(example)?;
        let n = example.history.len();
        let v = example.history[n - 1] - example.history[n - 2];
        Ok(Prediction::trajectory_only(extrapolate(
            example.anchor,
            v,
            example.horizon(),
        )))
    }
}

/// Linear extrapolation of the mean of the last (up to) five displacements.
#[derive(Debug, Clone, Copy)]
pub struct NaiveVelocity {
    pub span: usize,
}

impl Default for NaiveVelocity {
    fn default() -> Self {
        Self { span: 5 }
    }
}

impl Predictor for NaiveVelocity {
    fn name(&self) -> &str {
        "naive"
    }

    fn predict(&self, example: &Example) -> Result<Prediction> {
        require_history(example)?;
        let h = &example.history;
        let steps = self.span.min(h.len() - 1).max(1);
        let first = h.len() - 1 - steps;
        let mut sum = Point::default();
        for i in first + 1..h.len() {
            sum = sum + (h[i] - h[i - 1]);
        }
        let mean = sum * (1.0 / steps as f64);
        Ok(Prediction::trajectory_only(extrapolate(
            example.anchor,
            mean,
            example.horizon(),
        )))
    }
}

/// The trained transformer.
#[derive(Debug, Clone)]
pub struct ModelPredictor {
    pub config: ModelConfig,
    pub params: Parameters,
}

impl ModelPredictor {
    pub fn new(config: ModelConfig, params: Parameters) -> Self {
        Self { config, params }
    }
}

impl Predictor for ModelPredictor {
    fn name(&self) -> &str {
        "p2p"
    }

    fn predict(&self, example: &Example) -> Result<Prediction> {
        let out = forward(&example.tokens, &self.params, &self.config)?;
        Ok(Prediction {
            positions: out
                .trajectory
                .iter()
                .map(|&offset| example.anchor + offset)
                .collect(),
            drone_prob: out.drone_prob,
            behavior_probs: out.behavior_probs,
            intent: out.intent,
        })
    }
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn predict(&self, example: &Example) -> Result<Prediction> {
        (**self).predict(example)
    }
}

/// Resolves a CLI predictor name. `p2p` needs a model.
pub fn by_name<'a>(name: &str, model: Option<&'a ModelPredictor>) -> Result<Box<dyn Predictor + 'a>> {
    match name {
        "frame" => Ok(Box::new(FrameBased)),
        "track" => Ok(Box::new(TrackingOnly)),
        "naive" => Ok(Box::new(NaiveVelocity::default())),
        "p2p" => model
            .map(|m| Box::new(m) as Box<dyn Predictor + 'a>)
            .ok_or(Error::CheckpointMissing),
        other => Err(Error::UnknownPredictor(other.to_string())),
    }
}
