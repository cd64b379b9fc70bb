//! Seeded synthetic tracks for the five drone behaviors plus bird-like
//! distractors.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::TokenizerConfig;
use crate::track::{validate_track, BBox, BehaviorClass, LabelSet, Point, Track, TrackPoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_tracks: usize,
    pub track_len: usize,
    pub image_width: u32,
    pub image_height: u32,
    pub fps: f64,
    pub drone_fraction: f64,
    /// Std of the positional measurement noise, pixels.
    pub noise_px: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_tracks: 200,
            track_len: 120,
            image_width: 640,
            image_height: 512,
            fps: 25.0,
            drone_fraction: 0.5,
            noise_px: 0.5,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidSpec(format!("synth: {msg}")));
        if self.track_len < 3 {
            return bad("track_len must be at least 3");
        }
        if self.image_width < 200 || self.image_height < 200 {
            return bad("image must be at least 200x200 pixels");
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return bad("fps must be positive");
        }
        if !(0.0..=1.0).contains(&self.drone_fraction) {
            return bad("drone_fraction must lie in [0, 1]");
        }
        if !(self.noise_px.is_finite() && self.noise_px >= 0.0) {
            return bad("noise_px must be nonnegative");
        }
        Ok(())
    }

    /// Also requires tracks long enough for at least one training window.
    pub fn validate_for(&self, tokenizer: &TokenizerConfig) -> Result<()> {
        self.validate()?;
        if self.track_len < tokenizer.window + tokenizer.horizon {
            return Err(Error::InvalidSpec(format!(
                "synth: track_len {} is shorter than window + horizon = {}",
                self.track_len,
                tokenizer.window + tokenizer.horizon
            )));
        }
        Ok(())
    }

    pub fn n_drones(&self) -> usize {
        (self.n_tracks as f64 * self.drone_fraction).round() as usize
    }

    fn size(&self) -> Point {
        Point::new(self.image_width as f64, self.image_height as f64)
    }
}

/// Clipped mean acceleration magnitude over a noise-free path, halved.
pub fn intent_from_path(path: &[Point]) -> f64 {
    if path.len() < 3 {
        return 0.0;
    }
    let sum: f64 = path
        .windows(3)
        .map(|w| (w[2] - w[1] * 2.0 + w[0]).norm())
        .sum();
    (sum / (path.len() - 2) as f64 / 2.0).clamp(0.0, 1.0)
}

/// Noise-free centers and box sizes before measurement noise.
struct Path {
    centers: Vec<Point>,
    sizes: Vec<(f64, f64)>,
}

fn base_size(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let h = rng.random_range(8.0..20.0);
    (h * rng.random_range(1.0..1.6), h)
}

fn unit(angle: f64) -> Point {
    Point::new(angle.cos(), angle.sin())
}

/// Center bounds that keep a box of half-extent `half` inside the image.
fn inside(p: Point, half: f64, size: Point) -> bool {
    p.x >= half && p.y >= half && p.x <= size.x - half && p.y <= size.y - half
}

/// Heading from `p` toward the image center, spread by up to 60 degrees.
fn reroll_heading(p: Point, size: Point, rng: &mut ChaCha8Rng) -> f64 {
    let to_center = size * 0.5 - p;
    to_center.y.atan2(to_center.x) + rng.random_range(-PI / 3.0..PI / 3.0)
}

fn hover(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Path {
    let size = spec.size();
    let (w, h) = base_size(rng);
    let c = Point::new(
        rng.random_range(0.25..0.75) * size.x,
        rng.random_range(0.25..0.75) * size.y,
    );
    Path {
        centers: vec![c; spec.track_len],
        sizes: vec![(w, h); spec.track_len],
    }
}

fn loiter(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Path {
    let size = spec.size();
    let (w, h) = base_size(rng);
    let radius = rng.random_range(30.0..80.0);
    let speed = rng.random_range(0.5..1.5);
    let margin = radius + w;
    let c = Point::new(
        rng.random_range(margin..size.x - margin),
        rng.random_range(margin..size.y - margin),
    );
    let direction = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let phase = rng.random_range(0.0..TAU);
    let omega = direction * speed / radius;
    Path {
        centers: (0..spec.track_len)
            .map(|t| c + unit(phase + omega * t as f64) * radius)
            .collect(),
        sizes: vec![(w, h); spec.track_len],
    }
}

fn approach(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Path {
    let size = spec.size();
    let center = size * 0.5;
    let (w0, h0) = base_size(rng);
    let n = spec.track_len;
    let growth = 1.01f64;
    let max_half = w0 * growth.powi(n as i32 - 1) / 2.0 + 1.0;
    let v0 = rng.random_range(0.5..1.5);
    let mut accel = rng.random_range(0.01..0.03);
    let t_end = (n - 1) as f64;
    // rejection-sample a heading and start offset whose path fits the image
    let mut attempt = 0;
    let (start, dir) = loop {
        let length = v0 * t_end + 0.5 * accel * t_end * t_end;
        let heading = rng.random_range(0.0..TAU);
        let dir = unit(heading);
        let start = center - dir * (length * rng.random_range(0.5..1.0));
        if inside(start, max_half, size) && inside(start + dir * length, max_half, size) {
            break (start, dir);
        }
        attempt += 1;
        if attempt % 50 == 0 {
            accel *= 0.7;
        }
        if attempt > 1000 {
            break (center, dir);
        }
    };
    Path {
        centers: (0..n)
            .map(|t| {
                let t = t as f64;
                start + dir * (v0 * t + 0.5 * accel * t * t)
            })
            .collect(),
        sizes: (0..n)
            .map(|t| {
                let g = growth.powi(t as i32);
                (w0 * g, h0 * g)
            })
            .collect(),
    }
}

fn evade(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Path {
    let size = spec.size();
    let (w, h) = base_size(rng);
    let margin = w + 10.0;
    let base_speed = rng.random_range(2.0..4.0);
    let mut p = Point::new(
        rng.random_range(0.3..0.7) * size.x,
        rng.random_range(0.3..0.7) * size.y,
    );
    let mut heading = rng.random_range(0.0..TAU);
    let mut next_turn = rng.random_range(15..=25);
    let mut burst = 0;
    let mut centers = Vec::with_capacity(spec.track_len);
    for t in 0..spec.track_len {
        centers.push(p);
        if t == next_turn {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            heading += sign * rng.random_range(60.0f64..120.0).to_radians();
            next_turn += rng.random_range(15..=25);
            burst = 5;
        }
        let speed = if burst > 0 { base_speed * 1.5 } else { base_speed };
        burst = (burst - 1).max(0);
        let mut next = p + unit(heading) * speed;
        if !inside(next, margin, size) {
            heading = reroll_heading(p, size, rng);
            next = p + unit(heading) * speed;
        }
        p = next;
    }
    Path {
        centers,
        sizes: vec![(w, h); spec.track_len],
    }
}

fn pass_by(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Path {
    let mut speed = rng.random_range(2.0..6.0);
    pass_by_with_speed(spec, rng, &mut speed)
}

fn pass_by_with_speed(spec: &SynthSpec, rng: &mut ChaCha8Rng, speed: &mut f64) -> Path {
    let size = spec.size();
    let (w, h) = base_size(rng);
    let margin = w + 5.0;
    let t_end = (spec.track_len - 1) as f64;
    let mut attempt = 0;
    let (start, velocity) = loop {
        let v = unit(rng.random_range(0.0..TAU)) * *speed;
        let span = v * t_end;
        let room = Point::new(size.x - 2.0 * margin - span.x.abs(), size.y - 2.0 * margin - span.y.abs());
        if room.x > 0.0 && room.y > 0.0 {
            let x0 = margin + rng.random_range(0.0..room.x) + (-span.x).max(0.0);
            let y0 = margin + rng.random_range(0.0..room.y) + (-span.y).max(0.0);
            break (Point::new(x0, y0), v);
        }
        attempt += 1;
        if attempt % 50 == 0 {
            *speed *= 0.9;
        }
    };
    Path {
        centers: (0..spec.track_len).map(|t| start + velocity * t as f64).collect(),
        sizes: vec![(w, h); spec.track_len],
    }
}

fn distractor_path(spec: &SynthSpec, rng: &mut ChaCha8Rng, base_speed: f64) -> Path {
    let size = spec.size();
    let (w0, h0) = base_size(rng);
    let margin = w0 + 10.0;
    let jitter = Normal::new(0.0, 25f64.to_radians()).expect("valid std");
    let speed_noise = Normal::new(0.0, 0.3).expect("valid std");
    // wingbeat drives both the box size and the per-frame speed
    let flap_freq = rng.random_range(0.2..0.45);
    let flap_phase = rng.random_range(0.0..TAU);
    let mut p = Point::new(
        rng.random_range(0.2..0.8) * size.x,
        rng.random_range(0.2..0.8) * size.y,
    );
    let mut heading = rng.random_range(0.0..TAU);
    let mut centers = Vec::with_capacity(spec.track_len);
    let mut sizes = Vec::with_capacity(spec.track_len);
    for t in 0..spec.track_len {
        let beat = TAU * flap_freq * t as f64 + flap_phase;
        centers.push(p);
        sizes.push((w0 * (1.0 + 0.3 * beat.sin()), h0 * (1.0 + 0.3 * (beat + 1.0).sin())));
        heading += jitter.sample(rng);
        let flutter = 1.0 + 0.6 * beat.cos() + speed_noise.sample(rng);
        let speed = base_speed * flutter.max(0.1);
        let mut next = p + unit(heading) * speed;
        if !inside(next, margin, size) {
            heading = reroll_heading(p, size, rng);
            next = p + unit(heading) * speed;
        }
        p = next;
    }
    Path { centers, sizes }
}

/// Adds clipped Gaussian center noise, clamps boxes into the image and
/// builds a validated track.
fn finish(path: Path, labels: LabelSet, spec: &SynthSpec, id: String, rng: &mut ChaCha8Rng) -> Result<Track> {
    let size = spec.size();
    let noise = Normal::new(0.0, spec.noise_px.max(0.0)).expect("valid std");
    let cap = 2.5 * spec.noise_px;
    let points = path
        .centers
        .iter()
        .zip(&path.sizes)
        .enumerate()
        .map(|(t, (&c, &(w, h)))| {
            let mut e = Point::new(noise.sample(rng), noise.sample(rng));
            if e.norm() > cap {
                e = if cap > 0.0 { e * (cap / e.norm()) } else { Point::new(0.0, 0.0) };
            }
            let p = c + e;
            let (w, h) = (w.min(size.x), h.min(size.y));
            let x = p.x.clamp(w / 2.0, size.x - w / 2.0);
            let y = p.y.clamp(h / 2.0, size.y - h / 2.0);
            TrackPoint {
                frame: t as u64,
                bbox: BBox::new(x, y, w, h),
            }
        })
        .collect();
    let track = Track {
        id,
        points,
        fps: spec.fps,
        labels: Some(labels),
        frame_size: Some((spec.image_width, spec.image_height)),
    };
    validate_track(track).map_err(Error::from)
}

/// One labeled drone track with the dynamics of `behavior`.
pub fn generate_track(behavior: BehaviorClass, spec: &SynthSpec, seed: u64) -> Result<Track> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let path = match behavior {
        BehaviorClass::Hover => hover(spec, &mut rng),
        BehaviorClass::Loiter => loiter(spec, &mut rng),
        BehaviorClass::Approach => approach(spec, &mut rng),
        BehaviorClass::Evade => evade(spec, &mut rng),
        BehaviorClass::PassBy => pass_by(spec, &mut rng),
    };
    let labels = LabelSet {
        is_drone: true,
        behavior,
        intent: intent_from_path(&path.centers),
    };
    finish(path, labels, spec, format!("{}_{seed}", behavior.name()), &mut rng)
}

/// PassBy drone at a fixed speed, for comparisons at matched speed.
pub fn generate_pass_by(spec: &SynthSpec, seed: u64, speed: f64) -> Result<Track> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut speed = speed;
    let path = pass_by_with_speed(spec, &mut rng, &mut speed);
    let labels = LabelSet {
        is_drone: true,
        behavior: BehaviorClass::PassBy,
        intent: intent_from_path(&path.centers),
    };
    finish(path, labels, spec, format!("pass_by_{seed}"), &mut rng)
}

/// Bird-like non-drone track.
pub fn generate_distractor(spec: &SynthSpec, seed: u64) -> Result<Track> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let speed = rng.random_range(1.5..5.0);
    distractor_inner(spec, seed, speed, rng)
}

/// Distractor with a fixed mean speed.
pub fn generate_distractor_with_speed(spec: &SynthSpec, seed: u64, speed: f64) -> Result<Track> {
    spec.validate()?;
    distractor_inner(spec, seed, speed, ChaCha8Rng::seed_from_u64(seed))
}

fn distractor_inner(spec: &SynthSpec, seed: u64, speed: f64, mut rng: ChaCha8Rng) -> Result<Track> {
    let path = distractor_path(spec, &mut rng, speed);
    let labels = LabelSet {
        is_drone: false,
        behavior: BehaviorClass::PassBy,
        intent: 0.0,
    };
    finish(path, labels, spec, format!("distractor_{seed}"), &mut rng)
}

/// Seed of the `index`-th track of a dataset.
pub fn track_seed(master: u64, index: usize) -> u64 {
    master ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// `n_drones` drones cycling through the behaviors, then distractors.
/// Ids are `synth_00000`, `synth_00001`, ...
pub fn generate_dataset(spec: &SynthSpec) -> Result<Vec<Track>> {
    spec.validate()?;
    let n_drones = spec.n_drones();
    (0..spec.n_tracks)
        .into_par_iter()
        .map(|i| {
            let seed = track_seed(spec.seed, i);
            let mut track = if i < n_drones {
                generate_track(BehaviorClass::ALL[i % BehaviorClass::COUNT], spec, seed)?
            } else {
                generate_distractor(spec, seed)?
            };
            track.id = format!("synth_{i:05}");
            Ok(track)
        })
        .collect()
}
