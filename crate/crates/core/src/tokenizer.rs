//! Motion tokens and sliding-window example generation.
//!
//! Every frame of a track becomes one 8-D token: center position, first and
//! second finite differences of the center, the geometric-mean box size and
//! the spread of recent step lengths. Differences that would reach before the
//! first frame are zero.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::track::{BBox, LabelSet, Point, Track};

pub const TOKEN_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MotionToken {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub ax: f64,
    pub ay: f64,
    /// Scale, `sqrt(w * h)`.
    pub s: f64,
    /// Smoothness, std of recent step lengths.
    pub sigma: f64,
}

impl MotionToken {
    pub fn to_array(&self) -> [f64; TOKEN_DIM] {
        [
            self.x, self.y, self.vx, self.vy, self.ax, self.ay, self.s, self.sigma,
        ]
    }

    pub fn from_array(a: [f64; TOKEN_DIM]) -> Self {
        Self {
            x: a[0],
            y: a[1],
            vx: a[2],
            vy: a[3],
            ax: a[4],
            ay: a[5],
            s: a[6],
            sigma: a[7],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerConfig {
    pub window: usize,
    pub horizon: usize,
    pub step: usize,
    pub smoothness_span: usize,
    pub normalize: bool,
    /// Image size used when `normalize` is set.
    pub image_width: f64,
    pub image_height: f64,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            window: 12,
            horizon: 20,
            step: 5,
            smoothness_span: 5,
            normalize: false,
            image_width: 640.0,
            image_height: 512.0,
        }
    }
}

impl TokenizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidSpec(format!("tokenizer: {msg}")));
        if self.window < 2 {
            return bad("window must be at least 2");
        }
        if self.horizon < 1 {
            return bad("horizon must be at least 1");
        }
        if self.step < 1 {
            return bad("step must be at least 1");
        }
        if self.smoothness_span < 2 {
            return bad("smoothness_span must be at least 2");
        }
        if !(self.image_width > 0.0 && self.image_height > 0.0) {
            return bad("image size must be positive");
        }
        Ok(())
    }
}

/// One training/evaluation unit: a window of tokens plus what followed it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<MotionToken>,
    /// Raw pixel centers of the observed window, oldest first.
    pub history: Vec<Point>,
    /// Ground-truth centers of the next `H` frames.
    pub future: Vec<Point>,
    pub labels: Option<LabelSet>,
    /// Center at the last observed frame.
    pub anchor: Point,
    pub source_id: String,
    /// Frame number of the last observed frame.
    pub t_index: u64,
}

impl Example {
    pub fn horizon(&self) -> usize {
        self.future.len()
    }

    pub fn is_drone(&self) -> bool {
        self.labels.is_some_and(|l| l.is_drone)
    }
}

fn check_index(track: &Track, t: usize) -> Result<()> {
    if t >= track.len() {
        return Err(Error::OutOfRange {
            index: t,
            len: track.len(),
        });
    }
    Ok(())
}

pub fn velocity(track: &Track, t: usize) -> Result<(f64, f64)> {
    check_index(track, t)?;
    if t == 0 {
        return Ok((0.0, 0.0));
    }
    let d = track.center(t) - track.center(t - 1);
    Ok((d.x, d.y))
}

pub fn acceleration(track: &Track, t: usize) -> Result<(f64, f64)> {
    check_index(track, t)?;
    if t < 2 {
        return Ok((0.0, 0.0));
    }
    let (vx, vy) = velocity(track, t)?;
    let (px, py) = velocity(track, t - 1)?;
    Ok((vx - px, vy - py))
}

pub fn scale(bbox: &BBox) -> f64 {
    (bbox.w * bbox.h).sqrt()
}

/// Population std of step lengths `|p_i - p_{i-1}|` inside the `span`-frame
/// window ending at `t`. Zero when fewer than two steps fit.
pub fn smoothness(track: &Track, t: usize, span: usize) -> Result<f64> {
    check_index(track, t)?;
    if span < 2 {
        return Err(Error::InvalidSpec(format!(
            "smoothness span must be at least 2, got {span}"
        )));
    }
    let first = (t + 2).saturating_sub(span).max(1);
    let steps: Vec<f64> = (first..=t)
        .map(|i| track.center(i).distance(track.center(i - 1)))
        .collect();
    Ok(population_std(&steps))
}

pub(crate) fn population_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    var.sqrt()
}

/// One token per track point. Normalization, when enabled, is applied on top
/// of the raw tokens.
pub fn tokenize(track: &Track, cfg: &TokenizerConfig) -> Result<Vec<MotionToken>> {
    cfg.validate()?;
    let mut tokens = Vec::with_capacity(track.len());
    for (t, point) in track.points.iter().enumerate() {
        let (vx, vy) = velocity(track, t)?;
        let (ax, ay) = acceleration(track, t)?;
        tokens.push(MotionToken {
            x: point.bbox.x,
            y: point.bbox.y,
            vx,
            vy,
            ax,
            ay,
            s: scale(&point.bbox),
            sigma: smoothness(track, t, cfg.smoothness_span)?,
        });
    }
    if cfg.normalize {
        for token in &mut tokens {
            *token = normalize_token(token, cfg);
        }
    }
    Ok(tokens)
}

pub fn normalize_token(token: &MotionToken, cfg: &TokenizerConfig) -> MotionToken {
    let w = cfg.image_width;
    MotionToken {
        x: token.x / w,
        y: token.y / cfg.image_height,
        vx: token.vx / w,
        vy: token.vy / w,
        ax: token.ax / w,
        ay: token.ay / w,
        s: token.s / w,
        sigma: token.sigma / w,
    }
}

/// Number of windows `make_examples` yields for a track of `len` points.
pub fn example_count(len: usize, window: usize, horizon: usize, step: usize) -> usize {
    if len < window + horizon || step == 0 {
        0
    } else {
        (len - window - horizon) / step + 1
    }
}

pub fn make_examples(track: &Track, cfg: &TokenizerConfig) -> Result<Vec<Example>> {
    cfg.validate()?;
    let (w, h) = (cfg.window, cfg.horizon);
    if track.len() < w + h {
        return Err(Error::TooShort {
            needed: w + h,
            got: track.len(),
        });
    }
    let tokens = tokenize(track, cfg)?;
    let centers: Vec<Point> = track.centers().collect();
    let count = example_count(track.len(), w, h, cfg.step);
    let examples = (0..count)
        .map(|i| {
            let start = i * cfg.step;
            let last = start + w - 1;
            Example {
                tokens: tokens[start..start + w].to_vec(),
                history: centers[start..start + w].to_vec(),
                future: centers[start + w..start + w + h].to_vec(),
                labels: track.labels,
                anchor: centers[last],
                source_id: track.id.clone(),
                t_index: track.points[last].frame,
            }
        })
        .collect();
    Ok(examples)
}

/// Examples from every track long enough for one window; shorter tracks
/// are skipped.
pub fn make_dataset(tracks: &[Track], cfg: &TokenizerConfig) -> Result<Vec<Example>> {
    if tracks.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let needed = cfg.window + cfg.horizon;
    let per_track: Vec<Result<Vec<Example>>> = tracks
        .par_iter()
        .filter(|t| t.len() >= needed)
        .map(|t| make_examples(t, cfg))
        .collect();
    let mut examples = Vec::new();
    for part in per_track {
        examples.extend(part?);
    }
    if examples.is_empty() {
        return Err(Error::TooShort {
            needed,
            got: tracks.iter().map(Track::len).max().unwrap_or(0),
        });
    }
    Ok(examples)
}

/// The last `window` frames of a track as an unlabeled example with no
/// future, used for live prediction.
pub fn final_window(track: &Track, cfg: &TokenizerConfig) -> Result<Example> {
    cfg.validate()?;
    let w = cfg.window;
    if track.len() < w {
        return Err(Error::TooShort {
            needed: w,
            got: track.len(),
        });
    }
    let tokens = tokenize(track, cfg)?;
    let start = track.len() - w;
    let centers: Vec<Point> = track.centers().collect();
    Ok(Example {
        tokens: tokens[start..].to_vec(),
        history: centers[start..].to_vec(),
        future: Vec::new(),
        labels: track.labels,
        anchor: centers[track.len() - 1],
        source_id: track.id.clone(),
        t_index: track.points[track.len() - 1].frame,
    })
}
