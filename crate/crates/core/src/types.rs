//! Domain types shared by the pipeline and ROI geometry helpers.
//!
//! Coordinates: origin at the top-left, `x` to the right, `y` downwards.
//! Pixel rectangles are half-open, `[x0, x1) x [y0, y1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BACKGROUND: u8 = 0;
pub const SCLERA: u8 = 1;
pub const IRIS: u8 = 2;
pub const PUPIL: u8 = 3;
pub const NUM_CLASSES: usize = 4;

/// 8-bit grayscale image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
    index: u64,
}

fn check_dims(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::Dimension(format!("empty image {width}x{height}")));
    }
    if width * height != len {
        return Err(Error::Dimension(format!(
            "{width}x{height} image needs {} values, got {len}",
            width * height
        )));
    }
    Ok(())
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>, index: u64) -> Result<Self> {
        check_dims(width, height, pixels.len())?;
        Ok(Self {
            width,
            height,
            pixels,
            index,
        })
    }

    pub fn from_fn(width: usize, height: usize, index: u64, f: impl Fn(usize, usize) -> u8) -> Result<Self> {
        let pixels = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(width, height, pixels, index)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn with_index(mut self, index: u64) -> Self {
        self.index = index;
        self
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }
}

/// One-bit-per-pixel mask (event map or edge map), one byte per element.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMap {
    width: usize,
    height: usize,
    bits: Vec<u8>,
    downsampled: bool,
}

impl BinaryMap {
    pub fn new(width: usize, height: usize, bits: Vec<u8>, downsampled: bool) -> Result<Self> {
        check_dims(width, height, bits.len())?;
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::Data("binary map values must be 0 or 1".into()));
        }
        Ok(Self {
            width,
            height,
            bits,
            downsampled,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![0; width * height],
            downsampled: false,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn is_downsampled(&self) -> bool {
        self.downsampled
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x] == 1
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }
}

/// Per-pixel class IDs: 0 background, 1 sclera, 2 iris, 3 pupil.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentationMap {
    width: usize,
    height: usize,
    classes: Vec<u8>,
}

impl SegmentationMap {
    pub fn new(width: usize, height: usize, classes: Vec<u8>) -> Result<Self> {
        check_dims(width, height, classes.len())?;
        if classes.iter().any(|&c| c as usize >= NUM_CLASSES) {
            return Err(Error::Data("class IDs must be in 0..=3".into()));
        }
        Ok(Self {
            width,
            height,
            classes,
        })
    }

    pub fn background(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            classes: vec![BACKGROUND; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn classes(&self) -> &[u8] {
        &self.classes
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.classes[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, class: u8) {
        debug_assert!((class as usize) < NUM_CLASSES);
        self.classes[y * self.width + x] = class;
    }

    pub fn count(&self, class: u8) -> usize {
        self.classes.iter().filter(|&&c| c == class).count()
    }

    pub fn crop(&self, rect: PixelRect) -> Result<Self> {
        rect.check_within(self.width, self.height)?;
        let mut classes = Vec::with_capacity(rect.area());
        for y in rect.y0..rect.y1 {
            classes.extend_from_slice(&self.classes[y * self.width + rect.x0..y * self.width + rect.x1]);
        }
        Self::new(rect.width(), rect.height(), classes)
    }

    /// Copies `patch` into this map with its top-left corner at `(x0, y0)`.
    pub fn paste(&mut self, patch: &SegmentationMap, x0: usize, y0: usize) -> Result<()> {
        PixelRect::new(x0, y0, x0 + patch.width, y0 + patch.height).check_within(self.width, self.height)?;
        for y in 0..patch.height {
            let dst = (y0 + y) * self.width + x0;
            self.classes[dst..dst + patch.width]
                .copy_from_slice(&patch.classes[y * patch.width..(y + 1) * patch.width]);
        }
        Ok(())
    }
}

/// Normalized bounding box. Values are fractions of image width/height.
///
/// The type does not enforce ordering: a raw network output may be
/// infeasible, which is what triggers the full-resolution fallback.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Roi {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Roi {
    pub const FULL: Roi = Roi {
        x_min: 0.0,
        y_min: 0.0,
        x_max: 1.0,
        y_max: 1.0,
    };

    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    /// Clamps every coordinate to `[0, 1]`.
    pub fn clamped(&self) -> Self {
        let c = |v: f64| v.clamp(0.0, 1.0);
        Self::new(c(self.x_min), c(self.y_min), c(self.x_max), c(self.y_max))
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0) * (self.y_max - self.y_min).max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)
    }

    pub fn contains(&self, other: &Roi) -> bool {
        self.x_min <= other.x_min
            && self.y_min <= other.y_min
            && self.x_max >= other.x_max
            && self.y_max >= other.y_max
    }

    /// Intersection over union in normalized units; 0 when both are empty.
    pub fn iou(&self, other: &Roi) -> f64 {
        let ix = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let iy = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

/// Integer half-open rectangle `[x0, x1) x [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelRect {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self::new(0, 0, width, height)
    }

    pub fn width(&self) -> usize {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> usize {
        self.y1.saturating_sub(self.y0)
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn check_within(&self, width: usize, height: usize) -> Result<()> {
        if self.x0 > self.x1 || self.y0 > self.y1 || self.x1 > width || self.y1 > height {
            return Err(Error::Rect(format!("{self:?} outside {width}x{height}")));
        }
        Ok(())
    }

    /// Normalizes back to a [`Roi`].
    pub fn to_roi(&self, width: usize, height: usize) -> Roi {
        Roi::new(
            self.x0 as f64 / width as f64,
            self.y0 as f64 / height as f64,
            self.x1 as f64 / width as f64,
            self.y1 as f64 / height as f64,
        )
    }
}

// Products like 0.11 * 100 land a few ulps above the integer; snap them.
const SNAP: f64 = 1e-9;

/// Denormalizes a clamped, ordered ROI to the enclosing pixel rectangle.
pub fn roi_to_pixels(roi: &Roi, width: usize, height: usize) -> PixelRect {
    let lo = |v: f64, n: usize| ((v * n as f64 + SNAP).floor().max(0.0) as usize).min(n);
    let hi = |v: f64, n: usize| ((v * n as f64 - SNAP).ceil().max(0.0) as usize).min(n);
    let x0 = lo(roi.x_min, width);
    let y0 = lo(roi.y_min, height);
    let x1 = hi(roi.x_max, width).max(x0);
    let y1 = hi(roi.y_max, height).max(y0);
    PixelRect::new(x0, y0, x1, y1)
}

/// A ROI is feasible when all coordinates are finite and both axes are
/// ordered (zero extent allowed).
pub fn roi_is_feasible(roi: &Roi) -> bool {
    roi.as_array().iter().all(|v| v.is_finite()) && roi.x_min <= roi.x_max && roi.y_min <= roi.y_max
}

/// Copies the pixels inside `rect` into a new frame.
pub fn crop(frame: &Frame, rect: PixelRect) -> Result<Frame> {
    rect.check_within(frame.width, frame.height)?;
    if rect.is_empty() {
        return Err(Error::Rect(format!("empty crop {rect:?}")));
    }
    let mut pixels = Vec::with_capacity(rect.area());
    for y in rect.y0..rect.y1 {
        pixels.extend_from_slice(&frame.pixels[y * frame.width + rect.x0..y * frame.width + rect.x1]);
    }
    Frame::new(rect.width(), rect.height(), pixels, frame.index)
}

/// Tight pixel bounding box of all foreground (non-background) pixels.
pub fn foreground_rect(seg: &SegmentationMap) -> Option<PixelRect> {
    let mut rect: Option<PixelRect> = None;
    for y in 0..seg.height {
        for x in 0..seg.width {
            if seg.get(x, y) == BACKGROUND {
                continue;
            }
            rect = Some(match rect {
                None => PixelRect::new(x, y, x + 1, y + 1),
                Some(r) => PixelRect::new(r.x0.min(x), r.y0.min(y), r.x1.max(x + 1), r.y1.max(y + 1)),
            });
        }
    }
    rect
}

/// Normalized tight bounding box of the foreground, `None` when the map is
/// all background.
pub fn foreground_bbox(seg: &SegmentationMap) -> Option<Roi> {
    foreground_rect(seg).map(|r| r.to_roi(seg.width, seg.height))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegVariant {
    S,
    L,
}

impl std::str::FromStr for SegVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "S" | "s" => Ok(SegVariant::S),
            "L" | "l" => Ok(SegVariant::L),
            other => Err(Error::Config(format!("unknown segmentation variant `{other}`"))),
        }
    }
}

/// Pipeline knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Event activation threshold on the normalized intensity change.
    pub sigma: f64,
    /// Event density below which a frame is extrapolated.
    pub gamma: f64,
    /// Lower bound on the event-map denominator, in intensity units.
    pub epsilon_div: f64,
    pub seg_variant: SegVariant,
    /// ROI crops are zero-padded up to a multiple of this many pixels.
    pub roi_pad_multiple: usize,
    pub rng_seed: u64,
    /// When false every frame is segmented at full resolution.
    pub auto_roi: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sigma: 0.30,
            gamma: 0.001,
            epsilon_div: 1.0,
            seg_variant: SegVariant::S,
            roi_pad_multiple: 16,
            rng_seed: 0,
            auto_roi: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must be in [0, 1), got {}", self.gamma)));
        }
        if !(self.epsilon_div > 0.0) {
            return Err(Error::Config(format!(
                "epsilon_div must be > 0, got {}",
                self.epsilon_div
            )));
        }
        if self.roi_pad_multiple == 0 || self.roi_pad_multiple % 16 != 0 {
            return Err(Error::Config(
                "roi_pad_multiple must be a positive multiple of 16".into(),
            ));
        }
        Ok(())
    }
}
