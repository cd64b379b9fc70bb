//! Canonical track files, an adapter for per-sequence rectangle lists, and
//! a rule-based labeler for unlabeled tracks.
//!
//! A canonical track file is JSON Lines. The first line is the header:
//!
//! ```text
//! {"type":"header","id":"seq01","fps":25.0,"image_width":640,"image_height":512,"labels":{"is_drone":true,"behavior":"hover","intent":0.1}}
//! ```
//!
//! `image_width`, `image_height` and `labels` may be `null`. Every further
//! line is one frame, with the box center and size in pixels:
//!
//! ```text
//! {"type":"frame","frame":0,"x":320.5,"y":200.0,"w":16.0,"h":12.0}
//! ```
//!
//! Frames must increase. Missing frames are filled by linear interpolation
//! when the gap is at most `max_gap` frames.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::track::{validate_track, BBox, BehaviorClass, LabelSet, Point, Track, TrackPoint};

pub const TRACK_EXTENSION: &str = "jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Record {
    Header {
        id: String,
        fps: f64,
        image_width: Option<u32>,
        image_height: Option<u32>,
        labels: Option<LabelSet>,
    },
    Frame {
        frame: u64,
        x: f64,
        y: f64,
        w: f64,
        h: f64,
    },
}

fn record_line(record: &Record) -> String {
    serde_json::to_string(record).expect("records serialize")
}

/// Canonical text of a track.
pub fn write_track(track: &Track) -> String {
    let header = Record::Header {
        id: track.id.clone(),
        fps: track.fps,
        image_width: track.frame_size.map(|s| s.0),
        image_height: track.frame_size.map(|s| s.1),
        labels: track.labels,
    };
    let mut out = record_line(&header);
    out.push('\n');
    for p in &track.points {
        let b = p.bbox;
        out.push_str(&record_line(&Record::Frame {
            frame: p.frame,
            x: b.x,
            y: b.y,
            w: b.w,
            h: b.h,
        }));
        out.push('\n');
    }
    out
}

pub fn save_track(path: &Path, track: &Track) -> Result<()> {
    crate::fsutil::write_atomic(path, write_track(track).as_bytes())
}

/// Fills gaps of at most `max_gap` missing frames by linear interpolation
/// of center and size. Input frames must strictly increase.
pub fn fill_gaps(observed: &[(u64, BBox)], max_gap: u64) -> Result<Vec<TrackPoint>> {
    let mut out: Vec<TrackPoint> = Vec::with_capacity(observed.len());
    for (i, &(frame, bbox)) in observed.iter().enumerate() {
        if i > 0 {
            let (prev, pb) = observed[i - 1];
            let missing = frame - prev - 1;
            if missing > max_gap {
                return Err(Error::GapTooLarge {
                    after: prev,
                    gap: missing,
                    max_gap,
                });
            }
            for k in 1..=missing {
                let a = k as f64 / (missing + 1) as f64;
                let lerp = |u: f64, v: f64| u + (v - u) * a;
                out.push(TrackPoint {
                    frame: prev + k,
                    bbox: BBox::new(
                        lerp(pb.x, bbox.x),
                        lerp(pb.y, bbox.y),
                        lerp(pb.w, bbox.w),
                        lerp(pb.h, bbox.h),
                    ),
                });
            }
        }
        out.push(TrackPoint { frame, bbox });
    }
    Ok(out)
}

/// Parses canonical track text. `source` names the input in errors.
pub fn parse_track(text: &str, source: &str, max_gap: u64) -> Result<Track> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: source.into(),
        line,
        message,
    };
    let mut header = None;
    let mut observed: Vec<(u64, BBox)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let record: Record =
            serde_json::from_str(raw).map_err(|e| parse_err(line, e.to_string()))?;
        match record {
            Record::Header { .. } if header.is_some() => {
                return Err(parse_err(line, "second header record".into()));
            }
            Record::Header { .. } if !observed.is_empty() => {
                return Err(parse_err(line, "header must come first".into()));
            }
            Record::Header {
                id,
                fps,
                image_width,
                image_height,
                labels,
            } => {
                let frame_size = match (image_width, image_height) {
                    (Some(w), Some(h)) => Some((w, h)),
                    (None, None) => None,
                    _ => {
                        return Err(parse_err(line, "image_width and image_height go together".into()))
                    }
                };
                header = Some((id, fps, labels, frame_size));
            }
            Record::Frame { .. } if header.is_none() => {
                return Err(parse_err(line, "frame record before header".into()));
            }
            Record::Frame { frame, x, y, w, h } => {
                if let Some(&(prev, _)) = observed.last() {
                    if frame <= prev {
                        return Err(parse_err(
                            line,
                            format!("frame {frame} does not increase past {prev}"),
                        ));
                    }
                }
                observed.push((frame, BBox::new(x, y, w, h)));
            }
        }
    }
    let (id, fps, labels, frame_size) =
        header.ok_or_else(|| parse_err(1, "missing header record".into()))?;
    let track = Track {
        id,
        points: fill_gaps(&observed, max_gap)?,
        fps,
        labels,
        frame_size,
    };
    Ok(validate_track(track)?)
}

pub fn read_track(path: &Path, max_gap: u64) -> Result<Track> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_track(&text, &path.display().to_string(), max_gap)
}

/// Canonical track files in `dir`, sorted by name.
pub fn list_track_files(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(format!("listing {}", dir.display()), e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == TRACK_EXTENSION) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// How rectangles are stored in an external annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoxFormat {
    /// `[left, top, width, height]`
    #[default]
    TopLeft,
    /// `[center_x, center_y, width, height]`
    Center,
}

/// Field names of an external per-sequence annotation file: a JSON object
/// holding one rectangle per frame and, optionally, per-frame existence flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExternalMapping {
    pub rect_field: String,
    /// Without it, all-zero or empty rectangles mark missing frames.
    pub exist_field: Option<String>,
    pub box_format: BoxFormat,
    pub fps: f64,
    pub image_width: Option<u32>,
    pub image_height: Option<u32>,
}

impl Default for ExternalMapping {
    fn default() -> Self {
        Self {
            rect_field: "gt_rect".into(),
            exist_field: Some("exist".into()),
            box_format: BoxFormat::TopLeft,
            fps: 25.0,
            image_width: Some(640),
            image_height: Some(512),
        }
    }
}

fn as_rect(row: &Value) -> Option<Option<[f64; 4]>> {
    let items = row.as_array()?;
    if items.is_empty() {
        return Some(None);
    }
    if items.len() != 4 {
        return None;
    }
    let mut r = [0.0; 4];
    for (slot, v) in r.iter_mut().zip(items) {
        *slot = v.as_f64()?;
    }
    Some(Some(r))
}

fn truthy(v: &Value) -> Option<bool> {
    match v {
        Value::Bool(b) => Some(*b),
        Value::Number(n) => n.as_f64().map(|x| x != 0.0),
        _ => None,
    }
}

/// Converts parsed external annotation JSON into a canonical track.
pub fn adapt_value(value: &Value, id: &str, mapping: &ExternalMapping, max_gap: u64) -> Result<Track> {
    let field = |name: &str| {
        value
            .get(name)
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Mapping(format!("`{id}` has no array field `{name}`")))
    };
    let rects = field(&mapping.rect_field)?;
    let exist = match &mapping.exist_field {
        Some(name) => Some(field(name)?),
        None => None,
    };
    if let Some(flags) = exist {
        if flags.len() != rects.len() {
            return Err(Error::Mapping(format!(
                "`{id}`: {} rectangles but {} existence flags",
                rects.len(),
                flags.len()
            )));
        }
    }
    let mut observed = Vec::new();
    for (frame, row) in rects.iter().enumerate() {
        let rect = as_rect(row).ok_or_else(|| {
            Error::Mapping(format!("`{id}`: row {frame} is not [x, y, w, h]"))
        })?;
        let present = match exist {
            Some(flags) => truthy(&flags[frame])
                .ok_or_else(|| Error::Mapping(format!("`{id}`: flag {frame} is not boolean")))?,
            None => rect.is_some_and(|r| r.iter().any(|&v| v != 0.0)),
        };
        let Some([a, b, w, h]) = rect.filter(|_| present) else {
            continue;
        };
        let bbox = match mapping.box_format {
            BoxFormat::TopLeft => BBox::new(a + w / 2.0, b + h / 2.0, w, h),
            BoxFormat::Center => BBox::new(a, b, w, h),
        };
        observed.push((frame as u64, bbox));
    }
    let frame_size = match (mapping.image_width, mapping.image_height) {
        (Some(w), Some(h)) => Some((w, h)),
        _ => None,
    };
    let track = Track {
        id: id.to_string(),
        points: fill_gaps(&observed, max_gap)?,
        fps: mapping.fps,
        labels: None,
        frame_size,
    };
    Ok(validate_track(track)?)
}

/// Reads an external annotation file; the track id is the file stem.
pub fn adapt_external(path: &Path, mapping: &ExternalMapping, max_gap: u64) -> Result<Track> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "track".into());
    adapt_value(&value, &id, mapping, max_gap)
}

/// Thresholds of [`heuristic_label`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelerConfig {
    /// Hover when no center strays farther than this from the first, pixels.
    pub hover_max_disp_px: f64,
    /// Minimum net heading rotation for Loiter, degrees.
    pub loiter_min_rotation_deg: f64,
    /// Maximum path-length / rotation ratio for Loiter, pixels.
    pub loiter_max_radius_px: f64,
    /// Minimum mean relative scale growth per frame for Approach.
    pub approach_min_growth: f64,
    /// Heading change that counts as a sharp turn, degrees.
    pub turn_deg: f64,
    /// Turns needed for Evade.
    pub evade_min_turns: usize,
    /// Frames spanned by each heading segment.
    pub heading_lag: usize,
    /// Segments shorter than this have no reliable heading, pixels.
    pub min_segment_px: f64,
    /// Moving-average window applied to centers before computing intent.
    pub intent_smoothing: usize,
}

impl Default for LabelerConfig {
    fn default() -> Self {
        Self {
            hover_max_disp_px: 10.0,
            loiter_min_rotation_deg: 25.0,
            loiter_max_radius_px: 150.0,
            approach_min_growth: 0.005,
            turn_deg: 60.0,
            evade_min_turns: 2,
            heading_lag: 5,
            min_segment_px: 6.0,
            intent_smoothing: 5,
        }
    }
}

impl LabelerConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.hover_max_disp_px,
            self.loiter_min_rotation_deg,
            self.loiter_max_radius_px,
            self.approach_min_growth,
            self.turn_deg,
            self.min_segment_px,
        ];
        if finite.iter().any(|v| !v.is_finite()) || self.heading_lag == 0 || self.intent_smoothing == 0 {
            return Err(Error::InvalidSpec(format!("labeler: invalid thresholds {self:?}")));
        }
        Ok(())
    }
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// Heading of each `lag`-frame displacement, or `None` when it is too short.
fn segment_headings(centers: &[Point], lag: usize, min_len: f64) -> Vec<Option<f64>> {
    if centers.len() <= lag {
        return Vec::new();
    }
    (lag..centers.len())
        .map(|t| {
            let d = centers[t] - centers[t - lag];
            (d.norm() >= min_len).then(|| d.y.atan2(d.x))
        })
        .collect()
}

/// Number of separate episodes where the heading over the next `lag` frames
/// differs from the heading over the previous `lag` frames by more than
/// `turn_deg`.
pub fn count_sharp_turns(centers: &[Point], cfg: &LabelerConfig) -> usize {
    let lag = cfg.heading_lag;
    let headings = segment_headings(centers, lag, cfg.min_segment_px);
    let threshold = cfg.turn_deg.to_radians();
    let mut turns = 0;
    let mut in_turn = false;
    for i in lag..headings.len() {
        let sharp = match (headings[i - lag], headings[i]) {
            (Some(a), Some(b)) => wrap_angle(b - a).abs() > threshold,
            _ => false,
        };
        if sharp && !in_turn {
            turns += 1;
        }
        in_turn = sharp;
    }
    turns
}

/// Net signed heading rotation along the path, radians.
pub fn net_rotation(centers: &[Point], cfg: &LabelerConfig) -> f64 {
    let lag = 2 * cfg.heading_lag;
    let headings: Vec<f64> = segment_headings(centers, lag, 0.0).into_iter().flatten().collect();
    headings.windows(2).map(|w| wrap_angle(w[1] - w[0])).sum()
}

fn path_length(centers: &[Point]) -> f64 {
    centers.windows(2).map(|w| w[1].distance(w[0])).sum()
}

/// Geometric mean growth rate of the box scale per frame, from the mean
/// scale of the first and last five frames.
pub fn scale_growth(track: &Track) -> f64 {
    let n = track.len();
    if n < 2 {
        return 0.0;
    }
    let k = 5.min(n / 2).max(1);
    let mean_scale = |pts: &[TrackPoint]| {
        pts.iter().map(|p| (p.bbox.w * p.bbox.h).sqrt()).sum::<f64>() / pts.len() as f64
    };
    let first = mean_scale(&track.points[..k]);
    let last = mean_scale(&track.points[n - k..]);
    (last / first).powf(1.0 / (n - k) as f64) - 1.0
}

fn moving_average(centers: &[Point], window: usize) -> Vec<Point> {
    if window <= 1 || centers.len() < window {
        return centers.to_vec();
    }
    centers
        .windows(window)
        .map(|w| w.iter().fold(Point::new(0.0, 0.0), |acc, &p| acc + p) * (1.0 / window as f64))
        .collect()
}

/// Rule-based labels for a track without annotations. Rules apply in order:
/// Hover, Loiter, Approach, Evade, then PassBy.
pub fn heuristic_label(track: &Track, cfg: &LabelerConfig) -> LabelSet {
    let centers: Vec<Point> = track.centers().collect();
    let smoothed = moving_average(&centers, cfg.intent_smoothing);
    let intent = crate::synth::intent_from_path(&smoothed);
    let label = |behavior| LabelSet {
        is_drone: true,
        behavior,
        intent,
    };
    let Some(&start) = centers.first() else {
        return label(BehaviorClass::Hover);
    };
    let max_disp = centers.iter().map(|c| c.distance(start)).fold(0.0, f64::max);
    if max_disp < cfg.hover_max_disp_px {
        return label(BehaviorClass::Hover);
    }
    let turns = count_sharp_turns(&centers, cfg);
    let rotation = net_rotation(&centers, cfg).abs();
    if turns == 0
        && rotation >= cfg.loiter_min_rotation_deg.to_radians()
        && path_length(&centers) / rotation <= cfg.loiter_max_radius_px
    {
        return label(BehaviorClass::Loiter);
    }
    if scale_growth(track) > cfg.approach_min_growth {
        return label(BehaviorClass::Approach);
    }
    if turns >= cfg.evade_min_turns {
        return label(BehaviorClass::Evade);
    }
    label(BehaviorClass::PassBy)
}
