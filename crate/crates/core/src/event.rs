//! Event-camera emulation by thresholded, normalized frame differencing.
//!
//! A pixel fires when `|prev - curr| / max(prev, epsilon_div) > sigma`.
//! Dividing by the previous intensity approximates a log-scale contrast
//! change, as a real event sensor would respond.

use crate::error::{Error, Result};
use crate::types::{BinaryMap, Frame, PixelRect};

pub fn event_map(prev: &Frame, curr: &Frame, sigma: f64, epsilon_div: f64) -> Result<BinaryMap> {
    if (prev.width(), prev.height()) != (curr.width(), curr.height()) {
        return Err(Error::Dimension(format!(
            "event map between {}x{} and {}x{} frames",
            prev.width(),
            prev.height(),
            curr.width(),
            curr.height()
        )));
    }
    let bits = prev
        .pixels()
        .iter()
        .zip(curr.pixels())
        .map(|(&p, &c)| {
            let p = p as f64;
            let ratio = (p - c as f64).abs() / p.max(epsilon_div);
            u8::from(ratio > sigma)
        })
        .collect();
    BinaryMap::new(prev.width(), prev.height(), bits, false)
}

/// Fraction of set bits inside `rect`.
pub fn event_density(events: &BinaryMap, rect: PixelRect) -> Result<f64> {
    rect.check_within(events.width(), events.height())?;
    if rect.is_empty() {
        return Err(Error::Rect(format!("event density over empty {rect:?}")));
    }
    let w = events.width();
    let count: usize = (rect.y0..rect.y1)
        .map(|y| {
            events.bits()[y * w + rect.x0..y * w + rect.x1]
                .iter()
                .map(|&b| b as usize)
                .sum::<usize>()
        })
        .sum();
    Ok(count as f64 / rect.area() as f64)
}

/// Halves both dimensions (rounding up); each output bit is the OR of its
/// 2x2 input block, so no event is lost.
pub fn downsample_by_2(map: &BinaryMap) -> BinaryMap {
    let (w, h) = (map.width(), map.height());
    let (ow, oh) = (w.div_ceil(2), h.div_ceil(2));
    let mut bits = vec![0u8; ow * oh];
    for y in 0..h {
        for x in 0..w {
            bits[(y / 2) * ow + x / 2] |= map.bits()[y * w + x];
        }
    }
    BinaryMap::new(ow, oh, bits, true).expect("dims derived from a valid map")
}
