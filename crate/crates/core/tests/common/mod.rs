//! Reference implementations shared by the oracle tests and the
//! acceptance suite.
#![allow(dead_code)]

use std::collections::VecDeque;

use edar_core::edge::class_transitions;
use edar_core::synth::{render_labels, EyeSceneParams, EyeState};
use edar_core::types::{BinaryMap, Frame, SegmentationMap, BACKGROUND, NUM_CLASSES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Event rule evaluated pixel by pixel.
pub fn event_oracle(prev: &Frame, curr: &Frame, sigma: f64, eps: f64) -> Vec<bool> {
    prev.pixels()
        .iter()
        .zip(curr.pixels())
        .map(|(&p, &c)| (p as f64 - c as f64).abs() / (p as f64).max(eps) > sigma)
        .collect()
}

pub fn random_frame(rng: &mut ChaCha8Rng, w: usize, h: usize, index: u64) -> Frame {
    let px = (0..w * h).map(|_| rng.gen::<u8>()).collect();
    Frame::new(w, h, px, index).unwrap()
}

pub fn random_eye_map(seed: u64, w: usize, h: usize) -> SegmentationMap {
    let params = EyeSceneParams::sample(w, h, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ex, ey) = params.sclera_half_extent();
    let state = EyeState {
        center: (
            rng.gen_range(ex + 1.0..w as f64 - ex - 1.0),
            rng.gen_range(ey + 1.0..h as f64 - ey - 1.0),
        ),
        aperture: rng.gen_range(0.3..1.0),
    };
    render_labels(&params, &state)
}

pub fn near(mask: &[bool], w: usize, h: usize, x: usize, y: usize, r: usize) -> bool {
    (y.saturating_sub(r)..=(y + r).min(h - 1)).any(|yy| (x.saturating_sub(r)..=(x + r).min(w - 1)).any(|xx| mask[yy * w + xx]))
}

/// Edge pixels farther than 2 px from any class transition, and interior
/// transitions farther than 2 px from any edge pixel.
pub fn edge_bound_violations(seg: &SegmentationMap, edges: &BinaryMap) -> (usize, usize) {
    let (w, h) = (seg.width(), seg.height());
    let edge_mask: Vec<bool> = edges.bits().iter().map(|&b| b == 1).collect();
    let trans = class_transitions(seg);
    let (mut spurious, mut missed) = (0, 0);
    for y in 0..h {
        for x in 0..w {
            if edge_mask[y * w + x] && !near(&trans, w, h, x, y, 2) {
                spurious += 1;
            }
            let on_border = x == 0 || y == 0 || x == w - 1 || y == h - 1;
            if trans[y * w + x] && !on_border && !near(&edge_mask, w, h, x, y, 2) {
                missed += 1;
            }
        }
    }
    (spurious, missed)
}

/// Largest 4- or 8-connected foreground region (ties: first in row-major
/// order), then background regions unreachable from the border filled with
/// the most frequent class among their 4-adjacent foreground pixels.
pub fn refine_oracle(seg: &SegmentationMap, eight: bool) -> SegmentationMap {
    let (w, h) = (seg.width(), seg.height());
    let fg = |x: usize, y: usize| seg.get(x, y) != BACKGROUND;
    let steps: &[(isize, isize)] = if eight {
        &[(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)]
    } else {
        &[(0, -1), (-1, 0), (1, 0), (0, 1)]
    };
    let step = |x: usize, y: usize, (dx, dy): (isize, isize)| {
        let (nx, ny) = (x as isize + dx, y as isize + dy);
        (nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h).then(|| (nx as usize, ny as usize))
    };

    let mut comp = vec![usize::MAX; w * h];
    let mut sizes = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !fg(x, y) || comp[y * w + x] != usize::MAX {
                continue;
            }
            let id = sizes.len();
            let mut stack = vec![(x, y)];
            comp[y * w + x] = id;
            let mut n = 0;
            while let Some((cx, cy)) = stack.pop() {
                n += 1;
                for &s in steps {
                    if let Some((nx, ny)) = step(cx, cy, s) {
                        if fg(nx, ny) && comp[ny * w + nx] == usize::MAX {
                            comp[ny * w + nx] = id;
                            stack.push((nx, ny));
                        }
                    }
                }
            }
            sizes.push(n);
        }
    }
    let mut out = SegmentationMap::background(w, h);
    let Some(keep) = (0..sizes.len()).reduce(|a, b| if sizes[b] > sizes[a] { b } else { a }) else {
        return out;
    };
    for y in 0..h {
        for x in 0..w {
            if comp[y * w + x] == keep {
                out.set(x, y, seg.get(x, y));
            }
        }
    }

    let four = [(0, -1), (-1, 0), (1, 0), (0, 1)];
    let mut outside = vec![false; w * h];
    let mut queue: VecDeque<(usize, usize)> = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if (x == 0 || y == 0 || x == w - 1 || y == h - 1) && out.get(x, y) == BACKGROUND {
                outside[y * w + x] = true;
                queue.push_back((x, y));
            }
        }
    }
    while let Some((x, y)) = queue.pop_front() {
        for s in four {
            if let Some((nx, ny)) = step(x, y, s) {
                if out.get(nx, ny) == BACKGROUND && !outside[ny * w + nx] {
                    outside[ny * w + nx] = true;
                    queue.push_back((nx, ny));
                }
            }
        }
    }
    let mut done = vec![false; w * h];
    let snapshot = out.clone();
    for y in 0..h {
        for x in 0..w {
            if snapshot.get(x, y) != BACKGROUND || outside[y * w + x] || done[y * w + x] {
                continue;
            }
            let mut hole = vec![];
            let mut stack = vec![(x, y)];
            done[y * w + x] = true;
            let mut votes = [0usize; NUM_CLASSES];
            while let Some((cx, cy)) = stack.pop() {
                hole.push((cx, cy));
                for s in four {
                    if let Some((nx, ny)) = step(cx, cy, s) {
                        let c = snapshot.get(nx, ny);
                        if c != BACKGROUND {
                            votes[c as usize] += 1;
                        } else if !done[ny * w + nx] {
                            done[ny * w + nx] = true;
                            stack.push((nx, ny));
                        }
                    }
                }
            }
            let max = *votes[1..].iter().max().unwrap();
            let fill = (1..NUM_CLASSES).find(|&c| votes[c] == max).unwrap() as u8;
            for (hx, hy) in hole {
                out.set(hx, hy, fill);
            }
        }
    }
    out
}

pub fn noisy_map(seed: u64) -> SegmentationMap {
    let mut seg = random_eye_map(seed, 48, 40);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for y in 0..seg.height() {
        for x in 0..seg.width() {
            let r: f64 = rng.gen();
            if r < 0.02 {
                seg.set(x, y, rng.gen_range(1..4));
            } else if r < 0.04 {
                seg.set(x, y, BACKGROUND);
            }
        }
    }
    seg
}
