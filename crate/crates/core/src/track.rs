//! Bounding-box tracks and their labels.
//!
//! Box coordinates are centers: `(x, y)` is the middle of the box, `w`/`h`
//! its extent, all in pixels.

use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// An image-plane position in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point) -> f64 {
        (self - other).norm()
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, rhs: f64) -> Point {
        Point::new(self.x * rhs, self.y * rhs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn center(&self) -> Point {
        Point::new(self.x, self.y)
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.w.is_finite() && self.h.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub frame: u64,
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorClass {
    Hover,
    Loiter,
    Approach,
    Evade,
    PassBy,
}

impl BehaviorClass {
    pub const COUNT: usize = 5;
    pub const ALL: [BehaviorClass; 5] = [
        BehaviorClass::Hover,
        BehaviorClass::Loiter,
        BehaviorClass::Approach,
        BehaviorClass::Evade,
        BehaviorClass::PassBy,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            BehaviorClass::Hover => "hover",
            BehaviorClass::Loiter => "loiter",
            BehaviorClass::Approach => "approach",
            BehaviorClass::Evade => "evade",
            BehaviorClass::PassBy => "pass_by",
        }
    }
}

impl fmt::Display for BehaviorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BehaviorClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown behavior `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    pub is_drone: bool,
    pub behavior: BehaviorClass,
    /// Maneuver aggressiveness in `[0, 1]`.
    pub intent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: String,
    pub points: Vec<TrackPoint>,
    pub fps: f64,
    #[serde(default)]
    pub labels: Option<LabelSet>,
    /// Image `(width, height)` in pixels, when known.
    #[serde(default)]
    pub frame_size: Option<(u32, u32)>,
}

impl Track {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centers(&self) -> impl Iterator<Item = Point> + '_ {
        self.points.iter().map(|p| p.bbox.center())
    }

    pub fn center(&self, index: usize) -> Point {
        self.points[index].bbox.center()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrackError {
    #[error("box at frame {frame} has non-positive size {w}x{h}")]
    NonPositiveDims { frame: u64, w: f64, h: f64 },
    #[error("frame {next} does not follow frame {prev}")]
    FrameGap { prev: u64, next: u64 },
    #[error("track has {0} points, need at least 2")]
    TooShort(usize),
    #[error("non-finite value in track ({0})")]
    NonFinite(String),
}

/// Checks every track invariant and hands the track back unchanged.
pub fn validate_track(track: Track) -> Result<Track, TrackError> {
    if track.points.len() < 2 {
        return Err(TrackError::TooShort(track.points.len()));
    }
    if !(track.fps.is_finite() && track.fps > 0.0) {
        return Err(TrackError::NonFinite(format!("fps = {}", track.fps)));
    }
    if let Some(labels) = &track.labels {
        if !(0.0..=1.0).contains(&labels.intent) {
            return Err(TrackError::NonFinite(format!(
                "intent {} outside [0, 1]",
                labels.intent
            )));
        }
    }
    for p in &track.points {
        if !p.bbox.is_finite() {
            return Err(TrackError::NonFinite(format!("box at frame {}", p.frame)));
        }
        if p.bbox.w <= 0.0 || p.bbox.h <= 0.0 {
            return Err(TrackError::NonPositiveDims {
                frame: p.frame,
                w: p.bbox.w,
                h: p.bbox.h,
            });
        }
    }
    for pair in track.points.windows(2) {
        if pair[1].frame != pair[0].frame + 1 {
            return Err(TrackError::FrameGap {
                prev: pair[0].frame,
                next: pair[1].frame,
            });
        }
    }
    Ok(track)
}
