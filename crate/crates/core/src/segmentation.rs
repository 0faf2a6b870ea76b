//! Colour-patch localisation in overhead frames: HSV thresholding,
//! 8-connected component labelling and largest-region centroid.

use thiserror::Error;

use crate::geometry::PixelCoord;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SegmentationError {
    #[error("no pixel passed the threshold")]
    NoRegion,
    #[error("largest region has {pixel_count} px, below the minimum of {min_area} px")]
    RegionTooSmall { pixel_count: usize, min_area: usize },
    #[error("frame data has {actual} bytes, expected {expected}")]
    BadFrameSize { expected: usize, actual: usize },
    #[error("frame dimensions must be at least 1x1")]
    EmptyFrame,
    #[error("invalid threshold: {0}")]
    InvalidThreshold(String),
}

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterFrame {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RasterFrame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, SegmentationError> {
        if width == 0 || height == 0 {
            return Err(SegmentationError::EmptyFrame);
        }
        let expected = width * height * 3;
        if pixels.len() != expected {
            return Err(SegmentationError::BadFrameSize {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self, SegmentationError> {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * 3)
            .collect();
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Inclusive HSV box. Hue is on the half-degree scale `0..=179`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HsvThreshold {
    pub h_min: u8,
    pub h_max: u8,
    pub s_min: u8,
    pub s_max: u8,
    pub v_min: u8,
    pub v_max: u8,
}

impl HsvThreshold {
    /// Yellow band used for the ROV patch.
    pub const YELLOW: Self = Self {
        h_min: 20,
        h_max: 50,
        s_min: 98,
        s_max: 255,
        v_min: 115,
        v_max: 255,
    };

    pub fn new(h: (u8, u8), s: (u8, u8), v: (u8, u8)) -> Result<Self, SegmentationError> {
        let t = Self {
            h_min: h.0,
            h_max: h.1,
            s_min: s.0,
            s_max: s.1,
            v_min: v.0,
            v_max: v.1,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), SegmentationError> {
        if self.h_max > 179 {
            return Err(SegmentationError::InvalidThreshold(format!(
                "h_max {} exceeds 179",
                self.h_max
            )));
        }
        for (name, lo, hi) in [
            ("h", self.h_min, self.h_max),
            ("s", self.s_min, self.s_max),
            ("v", self.v_min, self.v_max),
        ] {
            if lo > hi {
                return Err(SegmentationError::InvalidThreshold(format!(
                    "{name}_min {lo} > {name}_max {hi}"
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, (h, s, v): (u8, u8, u8)) -> bool {
        (self.h_min..=self.h_max).contains(&h)
            && (self.s_min..=self.s_max).contains(&s)
            && (self.v_min..=self.v_max).contains(&v)
    }
}

impl Default for HsvThreshold {
    fn default() -> Self {
        Self::YELLOW
    }
}

fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// Hexcone RGB to HSV with hue in half-degrees (`0..=179`) and S, V in `0..=255`.
pub fn rgb_to_hsv(r: u8, g: u8, b: u8) -> (u8, u8, u8) {
    let (rf, gf, bf) = (f64::from(r), f64::from(g), f64::from(b));
    let max = rf.max(gf).max(bf);
    let min = rf.min(gf).min(bf);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 {
        round_half_up(255.0 * delta / max)
    } else {
        0.0
    };
    let h_deg = if delta == 0.0 {
        0.0
    } else if max == rf {
        60.0 * (gf - bf) / delta
    } else if max == gf {
        120.0 + 60.0 * (bf - rf) / delta
    } else {
        240.0 + 60.0 * (rf - gf) / delta
    };
    let h_deg = if h_deg < 0.0 { h_deg + 360.0 } else { h_deg };
    let mut h = round_half_up(h_deg / 2.0);
    if h >= 180.0 {
        h -= 180.0;
    }
    (h as u8, s as u8, v as u8)
}

/// Binary image, row-major, one `bool` per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.bits[y * self.width + x] = on;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

pub fn threshold_mask(frame: &RasterFrame, t: &HsvThreshold) -> Mask {
    let bits = frame
        .data()
        .chunks_exact(3)
        .map(|p| t.contains(rgb_to_hsv(p[0], p[1], p[2])))
        .collect();
    Mask {
        width: frame.width(),
        height: frame.height(),
        bits,
    }
}

/// A connected set of mask pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub pixel_count: usize,
    pub centroid: PixelCoord<f64>,
    pub min: (usize, usize),
    pub max: (usize, usize),
}

/// Largest 8-connected region of the mask. Ties go to the region whose first
/// pixel comes earliest in row-major order.
pub fn largest_region(mask: &Mask) -> Result<Region, SegmentationError> {
    let (w, h) = (mask.width, mask.height);
    let mut visited = vec![false; w * h];
    let mut stack = Vec::new();
    let mut best: Option<Region> = None;

    for start in 0..w * h {
        if !mask.bits[start] || visited[start] {
            continue;
        }
        visited[start] = true;
        stack.push(start);
        let (mut count, mut sum_x, mut sum_y) = (0usize, 0u64, 0u64);
        let (mut min, mut max) = ((usize::MAX, usize::MAX), (0, 0));
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            count += 1;
            sum_x += x as u64;
            sum_y += y as u64;
            min = (min.0.min(x), min.1.min(y));
            max = (max.0.max(x), max.1.max(y));
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if mask.bits[j] && !visited[j] {
                        visited[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if best.as_ref().is_none_or(|b| count > b.pixel_count) {
            best = Some(Region {
                pixel_count: count,
                centroid: PixelCoord::new(
                    sum_x as f64 / count as f64,
                    sum_y as f64 / count as f64,
                ),
                min,
                max,
            });
        }
    }
    best.ok_or(SegmentationError::NoRegion)
}

/// Centroid of the largest thresholded region, rejecting regions under `min_area` pixels.
pub fn locate_patch(
    frame: &RasterFrame,
    t: &HsvThreshold,
    min_area: usize,
) -> Result<PixelCoord<f64>, SegmentationError> {
    let region = largest_region(&threshold_mask(frame, t))?;
    if region.pixel_count < min_area.max(1) {
        return Err(SegmentationError::RegionTooSmall {
            pixel_count: region.pixel_count,
            min_area,
        });
    }
    Ok(region.centroid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const YELLOW: [u8; 3] = [255, 255, 0];
    const RED: [u8; 3] = [255, 0, 0];
    const BLUE: [u8; 3] = [20, 60, 140];

    fn fill_rect(frame: &mut RasterFrame, x0: usize, y0: usize, w: usize, h: usize, c: [u8; 3]) {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                frame.set(x, y, c);
            }
        }
    }

    #[test]
    fn hsv_reference_colours() {
        assert_eq!(rgb_to_hsv(255, 255, 0), (30, 255, 255));
        assert_eq!(rgb_to_hsv(0, 0, 0), (0, 0, 0));
        assert_eq!(rgb_to_hsv(255, 0, 0), (0, 255, 255));
        assert_eq!(rgb_to_hsv(0, 255, 0), (60, 255, 255));
        assert_eq!(rgb_to_hsv(0, 0, 255), (120, 255, 255));
        assert_eq!(rgb_to_hsv(128, 128, 128), (0, 0, 128));
        // 359 degrees rounds to 179.5 -> 180, which wraps to 0
        assert_eq!(rgb_to_hsv(255, 0, 4).0, 0);
    }

    #[test]
    fn threshold_yellow_and_red() {
        let t = HsvThreshold::default();
        let y = RasterFrame::filled(4, 3, YELLOW).unwrap();
        assert_eq!(threshold_mask(&y, &t).count(), 12);
        let r = RasterFrame::filled(4, 3, RED).unwrap();
        assert_eq!(threshold_mask(&r, &t).count(), 0);
    }

    #[test]
    fn threshold_bounds_inclusive() {
        let t = HsvThreshold::default();
        assert!(t.contains((20, 98, 115)));
        assert!(t.contains((50, 255, 255)));
        assert!(!t.contains((19, 98, 115)));
        assert!(!t.contains((20, 97, 115)));
        assert!(!t.contains((20, 98, 114)));
        assert!(!t.contains((51, 200, 200)));
    }

    #[test]
    fn invalid_thresholds_rejected() {
        assert!(HsvThreshold::new((30, 20), (0, 255), (0, 255)).is_err());
        assert!(HsvThreshold::new((20, 180), (0, 255), (0, 255)).is_err());
        assert!(HsvThreshold::new((20, 50), (98, 255), (115, 255)).is_ok());
    }

    #[test]
    fn single_block_centroid() {
        let mut m = Mask::new(20, 20);
        for y in 0..10 {
            for x in 0..10 {
                m.set(x, y, true);
            }
        }
        let r = largest_region(&m).unwrap();
        assert_eq!(r.pixel_count, 100);
        assert_eq!(r.centroid, PixelCoord::new(4.5, 4.5));
        assert_eq!((r.min, r.max), ((0, 0), (9, 9)));
    }

    #[test]
    fn picks_largest_of_two() {
        let mut f = RasterFrame::filled(40, 30, BLUE).unwrap();
        fill_rect(&mut f, 25, 2, 10, 5, YELLOW);
        fill_rect(&mut f, 2, 15, 10, 10, YELLOW);
        let r = largest_region(&threshold_mask(&f, &HsvThreshold::default())).unwrap();
        assert_eq!(r.pixel_count, 100);
        assert_eq!(r.centroid, PixelCoord::new(6.5, 19.5));
    }

    #[test]
    fn tie_goes_to_first_in_scan_order() {
        let mut m = Mask::new(10, 10);
        for (x, y) in [(6, 1), (7, 1), (1, 5), (2, 5)] {
            m.set(x, y, true);
        }
        let r = largest_region(&m).unwrap();
        assert_eq!(r.centroid, PixelCoord::new(6.5, 1.0));
    }

    #[test]
    fn diagonal_pixels_are_connected() {
        let mut m = Mask::new(5, 5);
        for i in 0..5 {
            m.set(i, i, true);
        }
        assert_eq!(largest_region(&m).unwrap().pixel_count, 5);
    }

    #[test]
    fn empty_mask_has_no_region() {
        assert_eq!(largest_region(&Mask::new(3, 3)), Err(SegmentationError::NoRegion));
    }

    #[test]
    fn locate_patch_area_filter() {
        let t = HsvThreshold::default();
        let mut f = RasterFrame::filled(60, 40, BLUE).unwrap();
        fill_rect(&mut f, 10, 10, 20, 10, YELLOW);
        assert_eq!(locate_patch(&f, &t, 50).unwrap(), PixelCoord::new(19.5, 14.5));

        let mut g = RasterFrame::filled(60, 40, BLUE).unwrap();
        fill_rect(&mut g, 40, 30, 5, 2, YELLOW);
        assert_eq!(
            locate_patch(&g, &t, 50),
            Err(SegmentationError::RegionTooSmall {
                pixel_count: 10,
                min_area: 50
            })
        );
        let h = RasterFrame::filled(60, 40, BLUE).unwrap();
        assert_eq!(locate_patch(&h, &t, 50), Err(SegmentationError::NoRegion));
    }

    #[test]
    fn frame_size_checked() {
        assert!(matches!(
            RasterFrame::new(2, 2, vec![0; 11]),
            Err(SegmentationError::BadFrameSize { expected: 12, actual: 11 })
        ));
        assert_eq!(RasterFrame::new(0, 2, vec![]), Err(SegmentationError::EmptyFrame));
    }

    proptest! {
        #[test]
        fn rectangle_centroid_is_center(x0 in 0usize..30, y0 in 0usize..30, w in 1usize..20, h in 1usize..20) {
            let mut m = Mask::new(50, 50);
            for y in y0..y0 + h { for x in x0..x0 + w { m.set(x, y, true); } }
            let r = largest_region(&m).unwrap();
            prop_assert_eq!(r.centroid.x, x0 as f64 + (w as f64 - 1.0) / 2.0);
            prop_assert_eq!(r.centroid.y, y0 as f64 + (h as f64 - 1.0) / 2.0);
        }

        #[test]
        fn widening_threshold_is_monotone(
            pixels in proptest::collection::vec(any::<u8>(), 3 * 64),
            dh in 0u8..30, ds in 0u8..60, dv in 0u8..60,
        ) {
            let f = RasterFrame::new(8, 8, pixels).unwrap();
            let narrow = HsvThreshold::default();
            let wide = HsvThreshold {
                h_min: narrow.h_min.saturating_sub(dh),
                h_max: (narrow.h_max + dh).min(179),
                s_min: narrow.s_min.saturating_sub(ds),
                s_max: 255,
                v_min: narrow.v_min.saturating_sub(dv),
                v_max: 255,
            };
            let a = threshold_mask(&f, &narrow);
            let b = threshold_mask(&f, &wide);
            for y in 0..8 { for x in 0..8 {
                prop_assert!(!a.get(x, y) || b.get(x, y));
            }}
        }

        #[test]
        fn hsv_in_range(r in any::<u8>(), g in any::<u8>(), b in any::<u8>()) {
            let (h, _, v) = rgb_to_hsv(r, g, b);
            prop_assert!(h <= 179);
            prop_assert_eq!(v, r.max(g).max(b));
        }
    }
}
