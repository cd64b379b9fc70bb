//! Interceptor reach time and the Intercept Success Rate.
//!
//! The interceptor starts at rest and flies a straight line: full
//! acceleration `a_max` until it hits `v_max`, then cruises. Below the
//! critical distance `v_max^2 / (2 a_max)` it never reaches cruise speed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::track::Point;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterceptorSpec {
    /// m/s
    pub v_max: f64,
    /// m/s^2
    pub a_max: f64,
}

impl Default for InterceptorSpec {
    fn default() -> Self {
        Self {
            v_max: 15.0,
            a_max: 5.0,
        }
    }
}

impl InterceptorSpec {
    pub fn new(v_max: f64, a_max: f64) -> Result<Self> {
        let spec = Self { v_max, a_max };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_max.is_finite() && self.v_max > 0.0 && self.a_max.is_finite() && self.a_max > 0.0)
        {
            return Err(Error::InvalidSpec(format!(
                "interceptor limits must be positive, got v_max={} a_max={}",
                self.v_max, self.a_max
            )));
        }
        Ok(())
    }
}

/// Conversion from pixels/frames to meters/seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleModel {
    pub meters_per_pixel: f64,
    pub fps: f64,
}

impl Default for ScaleModel {
    fn default() -> Self {
        Self {
            meters_per_pixel: 0.05,
            fps: 25.0,
        }
    }
}

impl ScaleModel {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !(ok(self.meters_per_pixel) && ok(self.fps)) {
            return Err(Error::InvalidSpec(format!(
                "scale model must be positive and finite, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityQuery {
    pub predicted: Point,
    /// Interceptor start position.
    pub origin: Point,
    pub horizon_frames: u32,
}

pub fn critical_distance(spec: &InterceptorSpec) -> f64 {
    spec.v_max * spec.v_max / (2.0 * spec.a_max)
}

/// Minimum time (s) to cover `d` meters from rest.
pub fn reach_time(spec: &InterceptorSpec, d: f64) -> Result<f64> {
    if d.is_nan() || d < 0.0 {
        return Err(Error::NegativeDistance(d));
    }
    let d_c = critical_distance(spec);
    if d <= d_c {
        Ok((2.0 * d / spec.a_max).sqrt())
    } else {
        Ok(spec.v_max / spec.a_max + (d - d_c) / spec.v_max)
    }
}

pub fn is_feasible(spec: &InterceptorSpec, scale: &ScaleModel, q: &FeasibilityQuery) -> bool {
    let meters = q.predicted.distance(q.origin) * scale.meters_per_pixel;
    let budget = f64::from(q.horizon_frames) / scale.fps;
    // distances are nonnegative by construction
    reach_time(spec, meters).is_ok_and(|t| t <= budget)
}

pub fn intercept_success_rate(
    spec: &InterceptorSpec,
    scale: &ScaleModel,
    queries: &[FeasibilityQuery],
) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::EmptySet);
    }
    let hits = queries
        .iter()
        .filter(|q| is_feasible(spec, scale, q))
        .count();
    Ok(hits as f64 / queries.len() as f64)
}

/// Where the interceptor starts for each prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InterceptorOrigin {
    /// The target's last observed position.
    #[default]
    Anchor,
    Fixed { x: f64, y: f64 },
}

/// Everything needed to turn one predicted trajectory into a hit or miss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IsrSettings {
    pub interceptor: InterceptorSpec,
    pub scale: ScaleModel,
    pub origin: InterceptorOrigin,
    /// Require every horizon step to be reachable, not just the last one.
    pub all_steps: bool,
}

impl Default for IsrSettings {
    fn default() -> Self {
        Self {
            interceptor: InterceptorSpec::default(),
            scale: ScaleModel::default(),
            origin: InterceptorOrigin::Anchor,
            all_steps: false,
        }
    }
}

impl IsrSettings {
    pub fn validate(&self) -> Result<()> {
        self.interceptor.validate()?;
        self.scale.validate()
    }

    fn origin_for(&self, anchor: Point) -> Point {
        match self.origin {
            InterceptorOrigin::Anchor => anchor,
            InterceptorOrigin::Fixed { x, y } => Point::new(x, y),
        }
    }

    /// Queries for one predicted trajectory, step `i` being `i + 1` frames out.
    pub fn queries(&self, anchor: Point, predicted: &[Point]) -> Vec<FeasibilityQuery> {
        let origin = self.origin_for(anchor);
        let query = |i: usize| FeasibilityQuery {
            predicted: predicted[i],
            origin,
            horizon_frames: (i + 1) as u32,
        };
        if predicted.is_empty() {
            Vec::new()
        } else if self.all_steps {
            (0..predicted.len()).map(query).collect()
        } else {
            vec![query(predicted.len() - 1)]
        }
    }

    pub fn trajectory_feasible(&self, anchor: Point, predicted: &[Point]) -> bool {
        let queries = self.queries(anchor, predicted);
        !queries.is_empty()
            && queries
                .iter()
                .all(|q| is_feasible(&self.interceptor, &self.scale, q))
    }
}
