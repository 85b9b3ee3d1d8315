//! Synthetic near-eye sequences with exact labels, and ground-truth
//! refinement (DBSCAN + hole filling) for noisy label maps.
//!
//! The eye is a sclera ellipse holding an iris disk with a concentric pupil,
//! clipped vertically by the eyelids. It moves rigidly over a static textured
//! background: slow sinusoidal drift plus sudden saccade jumps, with blinks
//! closing the eyelids completely for a frame or two.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{foreground_bbox, Frame, Roi, SegmentationMap, BACKGROUND, IRIS, NUM_CLASSES, PUPIL, SCLERA};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    /// Peak drift displacement, pixels.
    pub drift_amplitude: f64,
    /// Drift period, frames.
    pub drift_period: f64,
    /// Probability of a saccade starting on any frame.
    pub saccade_rate: f64,
    /// Saccade jump length, pixels.
    pub saccade_magnitude: f64,
    /// Probability of a blink starting on any frame.
    pub blink_rate: f64,
    /// Frames from eyelid descent to full reopening.
    pub blink_duration: usize,
}

impl TrajectorySpec {
    pub fn stationary() -> Self {
        Self {
            drift_amplitude: 0.0,
            drift_period: 1.0,
            saccade_rate: 0.0,
            saccade_magnitude: 0.0,
            blink_rate: 0.0,
            blink_duration: 0,
        }
    }
}

/// Mean gray levels of the scene parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Appearance {
    pub background: f64,
    pub sclera: f64,
    pub iris: f64,
    pub pupil: f64,
    /// Amplitude of the static background texture.
    pub texture: f64,
}

impl Default for Appearance {
    fn default() -> Self {
        Self {
            background: 150.0,
            sclera: 215.0,
            iris: 100.0,
            pupil: 40.0,
            texture: 15.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EyeSceneParams {
    pub width: usize,
    pub height: usize,
    /// Initial sclera center, pixel coordinates.
    pub sclera_center: (f64, f64),
    /// Sclera semi-axes `(a, b)`, pixels.
    pub sclera_axes: (f64, f64),
    /// Rotation of the `a` axis from the x axis, radians.
    pub sclera_angle: f64,
    /// Iris center relative to the sclera center, pixels.
    pub iris_offset: (f64, f64),
    pub iris_radius: f64,
    /// Pupil radius as a fraction of the iris radius.
    pub pupil_fraction: f64,
    /// Eyelid opening in `[0, 1]` as a fraction of the sclera half-height.
    pub aperture: f64,
    pub trajectory: TrajectorySpec,
    pub appearance: Appearance,
    /// Standard deviation of per-pixel Gaussian noise added to frames.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl EyeSceneParams {
    /// A centered, moderately active eye sized to the frame.
    pub fn centered(width: usize, height: usize, seed: u64) -> Self {
        let s = width.min(height) as f64;
        Self {
            width,
            height,
            sclera_center: (width as f64 / 2.0, height as f64 / 2.0),
            sclera_axes: (0.30 * s, 0.17 * s),
            sclera_angle: 0.0,
            iris_offset: (0.0, 0.0),
            iris_radius: 0.12 * s,
            pupil_fraction: 0.45,
            aperture: 1.0,
            trajectory: TrajectorySpec {
                drift_amplitude: 0.025 * s,
                drift_period: 40.0,
                saccade_rate: 0.08,
                saccade_magnitude: 0.10 * s,
                blink_rate: 0.02,
                blink_duration: 5,
            },
            appearance: Appearance::default(),
            noise_sigma: 2.0,
            seed,
        }
    }

    /// Randomized geometry, appearance and motion for dataset generation.
    pub fn sample(width: usize, height: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe7e5_ce4e);
        let s = width.min(height) as f64;
        let mut p = Self::centered(width, height, seed);
        let a = rng.gen_range(0.26..0.34) * s;
        let b = rng.gen_range(0.14..0.19) * s;
        p.sclera_axes = (a, b);
        p.sclera_angle = rng.gen_range(-0.2..0.2);
        p.iris_radius = rng.gen_range(0.10..0.13) * s;
        p.iris_radius = p.iris_radius.min(0.9 * b);
        p.pupil_fraction = rng.gen_range(0.38..0.55);
        p.iris_offset = (rng.gen_range(-0.3..0.3) * (a - p.iris_radius), rng.gen_range(-0.2..0.2) * (b - p.iris_radius));
        p.aperture = rng.gen_range(0.8..1.0);
        p.sclera_center = (
            width as f64 / 2.0 + rng.gen_range(-0.1..0.1) * s,
            height as f64 / 2.0 + rng.gen_range(-0.08..0.08) * s,
        );
        p.appearance = Appearance {
            background: rng.gen_range(135.0..160.0),
            sclera: rng.gen_range(205.0..225.0),
            iris: rng.gen_range(85.0..110.0),
            pupil: rng.gen_range(35.0..50.0),
            texture: rng.gen_range(8.0..18.0),
        };
        p.trajectory.saccade_rate = rng.gen_range(0.05..0.12);
        p.trajectory.saccade_magnitude = rng.gen_range(0.06..0.14) * s;
        p
    }

    pub fn pupil_radius(&self) -> f64 {
        self.pupil_fraction * self.iris_radius
    }

    /// Half extents of the sclera's axis-aligned bounding box.
    pub fn sclera_half_extent(&self) -> (f64, f64) {
        let (a, b) = self.sclera_axes;
        let (s, c) = self.sclera_angle.sin_cos();
        ((a * c).hypot(b * s), (a * s).hypot(b * c))
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.sclera_axes;
        let bad = |m: &str| Err(Error::Config(format!("infeasible eye geometry: {m}")));
        if self.width < 3 || self.height < 3 {
            return bad("frame smaller than 3x3");
        }
        if !(a > 0.0 && b > 0.0) {
            return bad("sclera axes must be positive");
        }
        if !(self.pupil_fraction > 0.0 && self.pupil_fraction < 1.0) {
            return bad("pupil radius must be below the iris radius");
        }
        if !(self.iris_radius > 0.0 && self.iris_radius < a.min(b)) {
            return bad("iris radius must be below the smaller sclera axis");
        }
        if !(0.0..=1.0).contains(&self.aperture) {
            return bad("aperture outside [0, 1]");
        }
        let (ex, ey) = self.sclera_half_extent();
        if 2.0 * (ex + 1.0) > self.width as f64 || 2.0 * (ey + 1.0) > self.height as f64 {
            return bad("sclera does not fit in the frame");
        }
        let t = &self.trajectory;
        if !(0.0..=1.0).contains(&t.saccade_rate) || !(0.0..=1.0).contains(&t.blink_rate) {
            return bad("event rates must be probabilities");
        }
        if t.drift_period <= 0.0 || self.noise_sigma < 0.0 {
            return bad("drift period must be positive and noise non-negative");
        }
        Ok(())
    }
}

/// Eye pose of one frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EyeState {
    pub center: (f64, f64),
    pub aperture: f64,
}

/// Eyelid openness during a blink of `duration` frames, as a fraction of
/// the resting aperture. Always reaches zero.
fn blink_profile(k: usize, duration: usize) -> f64 {
    if duration <= 1 {
        return 0.0;
    }
    let dist = (2 * k + 1).abs_diff(duration);
    dist.saturating_sub(1) as f64 / (duration - 1) as f64
}

/// Per-frame eye states: drift and saccades on the center, blinks on the
/// aperture. The center stays where the whole sclera fits in the frame.
pub fn trajectory(params: &EyeSceneParams, n_frames: usize) -> Result<Vec<EyeState>> {
    params.validate()?;
    let t = &params.trajectory;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x7a3c_7041);
    let (ex, ey) = params.sclera_half_extent();
    let (lo_x, hi_x) = (ex + 1.0, params.width as f64 - ex - 1.0);
    let (lo_y, hi_y) = (ey + 1.0, params.height as f64 - ey - 1.0);
    let inside = |x: f64, y: f64| (lo_x..=hi_x).contains(&x) && (lo_y..=hi_y).contains(&y);
    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut offset = (0.0, 0.0);
    let mut blink_left = 0usize;
    let mut states = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let aperture = if blink_left > 0 {
            blink_left -= 1;
            params.aperture * blink_profile(t.blink_duration - 1 - blink_left, t.blink_duration)
        } else if f > 0 && t.blink_duration > 0 && rng.gen_bool(t.blink_rate) {
            blink_left = t.blink_duration - 1;
            params.aperture * blink_profile(0, t.blink_duration)
        } else {
            params.aperture
        };

        if f > 0 && rng.gen_bool(t.saccade_rate) {
            let dir: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let (dx, dy) = (t.saccade_magnitude * dir.cos(), t.saccade_magnitude * dir.sin());
            let base = (params.sclera_center.0 + offset.0, params.sclera_center.1 + offset.1);
            // Bounce off the frame edge by reversing the jump if needed.
            if inside(base.0 + dx, base.1 + dy) {
                offset = (offset.0 + dx, offset.1 + dy);
            } else if inside(base.0 - dx, base.1 - dy) {
                offset = (offset.0 - dx, offset.1 - dy);
            }
        }
        let w = std::f64::consts::TAU * f as f64 / t.drift_period;
        let drift = (
            t.drift_amplitude * (w + phase).sin(),
            0.6 * t.drift_amplitude * (0.77 * w + 2.0 * phase).sin(),
        );
        let cx = (params.sclera_center.0 + offset.0 + drift.0).clamp(lo_x, hi_x.max(lo_x));
        let cy = (params.sclera_center.1 + offset.1 + drift.1).clamp(lo_y, hi_y.max(lo_y));
        states.push(EyeState {
            center: (cx, cy),
            aperture,
        });
    }
    Ok(states)
}

/// Exact label map of one eye pose. Pixel `(x, y)` is classified by its
/// center `(x + 0.5, y + 0.5)`.
pub fn render_labels(params: &EyeSceneParams, state: &EyeState) -> SegmentationMap {
    let (w, h) = (params.width, params.height);
    let (a, b) = params.sclera_axes;
    let (sin, cos) = params.sclera_angle.sin_cos();
    let (_, ey) = params.sclera_half_extent();
    let (cx, cy) = state.center;
    let (ix, iy) = (cx + params.iris_offset.0, cy + params.iris_offset.1);
    let (ri2, rp2) = (params.iris_radius.powi(2), params.pupil_radius().powi(2));
    let lid = state.aperture * ey;
    let mut seg = SegmentationMap::background(w, h);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let (dx, dy) = (px - cx, py - cy);
            if dy.abs() >= lid {
                continue;
            }
            let (u, v) = (dx * cos + dy * sin, -dx * sin + dy * cos);
            if (u / a).powi(2) + (v / b).powi(2) > 1.0 {
                continue;
            }
            let d2 = (px - ix).powi(2) + (py - iy).powi(2);
            let class = if d2 <= rp2 {
                PUPIL
            } else if d2 <= ri2 {
                IRIS
            } else {
                SCLERA
            };
            seg.set(x, y, class);
        }
    }
    seg
}

/// Static background texture: a gentle gradient plus a few soft blotches.
fn background_texture(params: &EyeSceneParams) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0xb10c_5eed);
    let (w, h) = (params.width, params.height);
    let amp = params.appearance.texture;
    let gx = rng.gen_range(-1.0..1.0) * amp / w as f64;
    let gy = rng.gen_range(-1.0..1.0) * amp / h as f64;
    let blotches: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                rng.gen_range(0.0..w as f64),
                rng.gen_range(0.0..h as f64),
                rng.gen_range(0.05..0.2) * w.min(h) as f64,
                rng.gen_range(-1.0..1.0) * amp,
            )
        })
        .collect();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            let mut v = params.appearance.background + gx * (xf - w as f64 / 2.0) + gy * (yf - h as f64 / 2.0);
            for &(bx, by, s, k) in &blotches {
                v += k * (-((xf - bx).powi(2) + (yf - by).powi(2)) / (2.0 * s * s)).exp();
            }
            out.push(v);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthFrame {
    pub frame: Frame,
    pub labels: SegmentationMap,
    /// Ground-truth ROI; `None` while the eye is closed.
    pub roi: Option<Roi>,
    /// Pupil disk center; `None` when no pupil pixel is visible.
    pub pupil_center: Option<(f64, f64)>,
    pub state: EyeState,
}

pub fn render_sequence(params: &EyeSceneParams, n_frames: usize) -> Result<Vec<SynthFrame>> {
    let states = trajectory(params, n_frames)?;
    let texture = background_texture(params);
    let noise = Normal::new(0.0, params.noise_sigma.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x0015_e5e1);
    let ap = &params.appearance;
    let levels = [0.0, ap.sclera, ap.iris, ap.pupil];
    states
        .iter()
        .enumerate()
        .map(|(i, state)| {
            let labels = render_labels(params, state);
            let pixels = labels
                .classes()
                .iter()
                .zip(&texture)
                .map(|(&c, &bg)| {
                    let base = if c == BACKGROUND { bg } else { levels[c as usize] };
                    let n = if params.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    (base + n).round().clamp(0.0, 255.0) as u8
                })
                .collect();
            let frame = Frame::new(params.width, params.height, pixels, i as u64)?;
            let roi = foreground_bbox(&labels);
            let pupil_center = (labels.count(PUPIL) > 0)
                .then(|| (state.center.0 + params.iris_offset.0, state.center.1 + params.iris_offset.1));
            Ok(SynthFrame {
                frame,
                labels,
                roi,
                pupil_center,
                state: *state,
            })
        })
        .collect()
}

/// Keeps the largest DBSCAN cluster of foreground pixels and fills enclosed
/// background holes with the majority class of their boundary.
///
/// A point's neighbourhood (radius `eps`, Euclidean) includes the point
/// itself. Border points reachable from the kept cluster stay foreground
/// even if another cluster reached them first. Cluster-size ties go to the
/// cluster discovered first in row-major order.
pub fn refine_groundtruth(seg: &SegmentationMap, eps: f64, min_pts: usize) -> SegmentationMap {
    let (w, h) = (seg.width(), seg.height());
    let fg: Vec<bool> = seg.classes().iter().map(|&c| c != BACKGROUND).collect();
    if !fg.iter().any(|&f| f) {
        return seg.clone();
    }
    let r = eps.floor() as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|&(dx, dy)| ((dx * dx + dy * dy) as f64) <= eps * eps)
        .collect();
    let neighbours = |i: usize| {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        offsets.iter().filter_map(move |&(dx, dy)| {
            let (nx, ny) = (x + dx, y + dy);
            (nx >= 0 && ny >= 0 && nx < w as isize && ny < h as isize).then(|| ny as usize * w + nx as usize)
        })
    };
    let core: Vec<bool> = (0..w * h)
        .map(|i| fg[i] && neighbours(i).filter(|&j| fg[j]).count() >= min_pts)
        .collect();

    // Clusters are connected components of core points; each cluster's
    // members are its cores plus every foreground point within eps of them.
    let mut label = vec![usize::MAX; w * h];
    let mut best: Option<(usize, Vec<usize>)> = None;
    let mut next = 0;
    for start in 0..w * h {
        if !core[start] || label[start] != usize::MAX {
            continue;
        }
        let id = next;
        next += 1;
        let mut members = Vec::new();
        let mut in_members = std::collections::HashSet::new();
        let mut queue = VecDeque::from([start]);
        label[start] = id;
        while let Some(i) = queue.pop_front() {
            for j in neighbours(i) {
                if !fg[j] {
                    continue;
                }
                if in_members.insert(j) {
                    members.push(j);
                }
                if core[j] && label[j] == usize::MAX {
                    label[j] = id;
                    queue.push_back(j);
                }
            }
        }
        if best.as_ref().is_none_or(|(_, m)| members.len() > m.len()) {
            best = Some((id, members));
        }
    }

    let mut out = SegmentationMap::background(w, h);
    if let Some((_, members)) = best {
        for i in members {
            out.set(i % w, i / w, seg.classes()[i]);
        }
    }
    fill_holes(&mut out);
    out
}

/// Fills 4-connected background components that do not touch the border.
fn fill_holes(seg: &mut SegmentationMap) {
    let (w, h) = (seg.width(), seg.height());
    let mut seen = vec![false; w * h];
    for start in 0..w * h {
        if seen[start] || seg.classes()[start] != BACKGROUND {
            continue;
        }
        let mut component = Vec::new();
        let mut touches_border = false;
        let mut votes = [0usize; NUM_CLASSES];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = queue.pop_front() {
            component.push(i);
            let (x, y) = (i % w, i / w);
            if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
                touches_border = true;
            }
            let nbrs = [
                (x > 0).then(|| i - 1),
                (x + 1 < w).then(|| i + 1),
                (y > 0).then(|| i - w),
                (y + 1 < h).then(|| i + w),
            ];
            for j in nbrs.into_iter().flatten() {
                let c = seg.classes()[j];
                if c != BACKGROUND {
                    votes[c as usize] += 1;
                } else if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if touches_border {
            continue;
        }
        let mut fill = 1;
        for c in 2..NUM_CLASSES {
            if votes[c] > votes[fill] {
                fill = c;
            }
        }
        for i in component {
            seg.set(i % w, i / w, fill as u8);
        }
    }
}
