//! Drone-body masks on cube faces: union, dilation, propeller ellipses and
//! a diffusion fill used when no learned inpainting is available.

use image::{GrayImage, Luma, RgbImage};

use crate::error::{Error, Result};

pub const DEFAULT_DILATION_RADIUS: u32 = 5;

/// Per-pixel mask, `true` where the drone body is.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; (width * height) as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let mut m = Self::empty(width, height);
        for y in 0..height {
            for x in 0..width {
                m.bits[(y * width + x) as usize] = f(x, y);
            }
        }
        m
    }

    /// Any nonzero pixel is masked.
    pub fn from_gray(img: &GrayImage) -> Self {
        Self::from_fn(img.width(), img.height(), |x, y| img.get_pixel(x, y).0[0] > 0)
    }

    /// 0 / 255 single-channel image.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            Luma([if self.get(x, y) { 255 } else { 0 }])
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[(y * self.width + x) as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.bits.len() == other.bits.len()
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::arg(format!(
                "mask sizes differ: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect(),
        })
    }
}

/// Union of the input shifted by every offset with `dx² + dy² ≤ radius²`.
pub fn dilate(mask: &BinaryMask, radius: u32) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let r = radius as i64;
    let offsets: Vec<(i64, i64)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
        .collect();
    let (w, h) = (mask.width as i64, mask.height as i64);
    let mut out = BinaryMask::empty(mask.width, mask.height);
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x as u32, y as u32) {
                continue;
            }
            for &(dx, dy) in &offsets {
                let (nx, ny) = (x + dx, y + dy);
                if (0..w).contains(&nx) && (0..h).contains(&ny) {
                    out.set(nx as u32, ny as u32, true);
                }
            }
        }
    }
    out
}

/// Filled ellipse for a propeller tip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    /// Rotation of the `a` axis from +x, radians.
    pub angle: f64,
}

impl Ellipse {
    /// Parses `cx,cy,a,b,angle`.
    pub fn parse(s: &str) -> Result<Ellipse> {
        let v: Vec<f64> = s
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::arg(format!("ellipse {s:?}: expected cx,cy,a,b,angle")))?;
        let [cx, cy, a, b, angle] = v[..] else {
            return Err(Error::arg(format!("ellipse {s:?}: expected 5 numbers")));
        };
        Ok(Ellipse { cx, cy, a, b, angle })
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let xr = dx * c + dy * s;
        let yr = -dx * s + dy * c;
        (xr / self.a).powi(2) + (yr / self.b).powi(2) <= 1.0 + 1e-9
    }
}

/// Mask of integer pixel positions inside the ellipse.
pub fn ellipse_mask(width: u32, height: u32, e: &Ellipse) -> Result<BinaryMask> {
    if !(e.a > 0.0 && e.b > 0.0) {
        return Err(Error::arg(format!("ellipse semi-axes must be positive, got {} and {}", e.a, e.b)));
    }
    Ok(BinaryMask::from_fn(width, height, |x, y| e.contains(x as f64, y as f64)))
}

/// Body mask united with the propeller ellipses, then dilated.
pub fn compose_mask(body: &BinaryMask, ellipses: &[Ellipse], radius: u32) -> Result<BinaryMask> {
    let mut m = body.clone();
    for e in ellipses {
        m = m.union(&ellipse_mask(body.width, body.height, e)?)?;
    }
    Ok(dilate(&m, radius))
}

const FILL_TOLERANCE: f64 = 1e-3;
const FILL_MAX_SWEEPS: usize = 500;

/// Replaces masked pixels by harmonic interpolation of their surroundings.
///
/// Masked pixels are seeded layer by layer from the boundary inward, then
/// relaxed with Gauss-Seidel sweeps of the 4-neighbour mean until the
/// largest update drops below 1e-3 or 500 sweeps have run.
pub fn fill_masked(image: &RgbImage, mask: &BinaryMask) -> Result<RgbImage> {
    let (w, h) = image.dimensions();
    if (w, h) != (mask.width, mask.height) {
        return Err(Error::arg(format!(
            "image is {w}x{h} but mask is {}x{}",
            mask.width, mask.height
        )));
    }
    let n = (w * h) as usize;
    let masked = mask.count();
    if masked == 0 {
        return Ok(image.clone());
    }
    if masked == n {
        return Err(Error::data("mask covers the whole image; nothing to fill from"));
    }
    let mut values: Vec<[f64; 3]> = image
        .pixels()
        .map(|p| [p.0[0] as f64, p.0[1] as f64, p.0[2] as f64])
        .collect();
    let neighbours = |i: usize| {
        let (x, y) = ((i as u32 % w) as i64, (i as u32 / w) as i64);
        [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)]
            .into_iter()
            .filter(move |&(nx, ny)| nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64)
            .map(move |(nx, ny)| (ny as u32 * w + nx as u32) as usize)
    };

    // Onion-peel initialisation.
    let mut known: Vec<bool> = mask.bits.iter().map(|m| !m).collect();
    let mut pending: Vec<usize> = (0..n).filter(|&i| mask.bits[i]).collect();
    while !pending.is_empty() {
        let layer: Vec<(usize, [f64; 3])> = pending
            .iter()
            .filter_map(|&i| {
                let mut sum = [0.0; 3];
                let mut cnt = 0.0;
                for j in neighbours(i).filter(|&j| known[j]) {
                    for k in 0..3 {
                        sum[k] += values[j][k];
                    }
                    cnt += 1.0;
                }
                (cnt > 0.0).then(|| (i, sum.map(|s| s / cnt)))
            })
            .collect();
        if layer.is_empty() {
            return Err(Error::data("masked region has no unmasked neighbours"));
        }
        for (i, v) in &layer {
            values[*i] = *v;
            known[*i] = true;
        }
        pending.retain(|&i| !known[i]);
    }

    let targets: Vec<usize> = (0..n).filter(|&i| mask.bits[i]).collect();
    for _ in 0..FILL_MAX_SWEEPS {
        let mut max_change: f64 = 0.0;
        for &i in &targets {
            let mut sum = [0.0; 3];
            let mut cnt = 0.0;
            for j in neighbours(i) {
                for k in 0..3 {
                    sum[k] += values[j][k];
                }
                cnt += 1.0;
            }
            for k in 0..3 {
                let v = sum[k] / cnt;
                max_change = max_change.max((v - values[i][k]).abs());
                values[i][k] = v;
            }
        }
        if max_change < FILL_TOLERANCE {
            break;
        }
    }

    let mut out = image.clone();
    for &i in &targets {
        let (x, y) = (i as u32 % w, i as u32 / w);
        let v = values[i].map(|c| c.round().clamp(0.0, 255.0) as u8);
        out.put_pixel(x, y, image::Rgb(v));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn single(w: u32, h: u32, x: u32, y: u32) -> BinaryMask {
        let mut m = BinaryMask::empty(w, h);
        m.set(x, y, true);
        m
    }

    #[test]
    fn dilation_basics() {
        assert_eq!(dilate(&BinaryMask::empty(9, 9), 3).count(), 0);
        assert_eq!(dilate(&single(9, 9, 4, 4), 2).count(), 13);
        let m = single(9, 9, 1, 7);
        assert_eq!(dilate(&m, 0), m);
    }

    #[test]
    fn circle_equals_disk() {
        let e = Ellipse { cx: 20.3, cy: 15.0, a: 6.0, b: 6.0, angle: 0.7 };
        let m = ellipse_mask(40, 30, &e).unwrap();
        let disk = BinaryMask::from_fn(40, 30, |x, y| {
            (x as f64 - 20.3).powi(2) + (y as f64 - 15.0).powi(2) <= 36.0
        });
        assert_eq!(m, disk);
    }

    #[test]
    fn ellipse_outside_image_is_empty() {
        let e = Ellipse { cx: -50.0, cy: 200.0, a: 3.0, b: 2.0, angle: 0.0 };
        assert_eq!(ellipse_mask(32, 32, &e).unwrap().count(), 0);
    }

    #[test]
    fn quarter_turn_swaps_axes() {
        let a = ellipse_mask(30, 30, &Ellipse { cx: 15.0, cy: 15.0, a: 4.0, b: 2.0, angle: FRAC_PI_2 }).unwrap();
        let b = ellipse_mask(30, 30, &Ellipse { cx: 15.0, cy: 15.0, a: 2.0, b: 4.0, angle: 0.0 }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ellipse_area_close_to_analytic() {
        for (a, b, angle) in [(8.0, 8.0, 0.0), (12.0, 8.0, 0.3), (20.0, 9.5, 1.2)] {
            let e = Ellipse { cx: 40.5, cy: 39.7, a, b, angle };
            let count = ellipse_mask(80, 80, &e).unwrap().count() as f64;
            let area = PI * a * b;
            assert!((count - area).abs() / area < 0.05, "{count} vs {area}");
        }
        assert!(ellipse_mask(8, 8, &Ellipse { cx: 1.0, cy: 1.0, a: 0.0, b: 1.0, angle: 0.0 }).is_err());
    }

    #[test]
    fn ellipse_parse() {
        let e = Ellipse::parse("10, 20.5,4,2,0.25").unwrap();
        assert_eq!(e, Ellipse { cx: 10.0, cy: 20.5, a: 4.0, b: 2.0, angle: 0.25 });
        assert!(Ellipse::parse("1,2,3").is_err());
    }

    #[test]
    fn compose_unions_then_dilates() {
        let body = single(20, 20, 2, 2);
        let e = Ellipse { cx: 14.0, cy: 14.0, a: 2.0, b: 2.0, angle: 0.0 };
        let m = compose_mask(&body, &[e], 1).unwrap();
        assert!(m.get(3, 2) && m.get(14, 17));
        assert!(!m.get(10, 10));
    }

    #[test]
    fn fill_cases() {
        let img = RgbImage::from_fn(10, 10, |x, y| Rgb([(x * 20) as u8, (y * 20) as u8, 7]));
        assert_eq!(fill_masked(&img, &BinaryMask::empty(10, 10)).unwrap(), img);

        let flat = RgbImage::from_pixel(16, 12, Rgb([100, 100, 100]));
        let mut m = BinaryMask::empty(16, 12);
        for y in 2..9 {
            for x in 3..12 {
                m.set(x, y, true);
            }
        }
        assert_eq!(fill_masked(&flat, &m).unwrap(), flat);

        let mut img = RgbImage::from_pixel(5, 5, Rgb([100, 100, 100]));
        img.put_pixel(2, 2, Rgb([0, 255, 3]));
        let out = fill_masked(&img, &single(5, 5, 2, 2)).unwrap();
        for c in out.get_pixel(2, 2).0 {
            assert!((c as i32 - 100).abs() <= 1);
        }

        let full = BinaryMask::from_fn(4, 4, |_, _| true);
        assert!(matches!(fill_masked(&flat_small(), &full), Err(Error::Data(_))));
    }

    fn flat_small() -> RgbImage {
        RgbImage::from_pixel(4, 4, Rgb([1, 2, 3]))
    }

    fn arb_mask() -> impl Strategy<Value = BinaryMask> {
        prop::collection::vec(prop::bool::weighted(0.05), 24 * 20)
            .prop_map(|bits| BinaryMask { width: 24, height: 20, bits })
    }

    proptest! {
        #[test]
        fn dilation_is_monotone(m in arb_mask(), r1 in 0u32..4, r2 in 0u32..4) {
            let d1 = dilate(&m, r1);
            prop_assert!(m.is_subset_of(&d1));
            let lo = dilate(&m, r1.min(r2));
            let hi = dilate(&m, r1.max(r2));
            prop_assert!(lo.is_subset_of(&hi));
            let twice = dilate(&d1, r2);
            prop_assert!(dilate(&m, r1.max(r2)).is_subset_of(&twice));
            prop_assert_eq!(m.union(&m).unwrap(), m.clone());
        }

        #[test]
        fn fill_keeps_unmasked_pixels(m in arb_mask(), seed in any::<u32>()) {
            prop_assume!(m.count() < 24 * 20);
            let img = RgbImage::from_fn(24, 20, |x, y| {
                let v = (x.wrapping_mul(2654435761).wrapping_add(y * 40503).wrapping_add(seed)) >> 3;
                Rgb([v as u8, (v >> 8) as u8, (v >> 16) as u8])
            });
            let out = fill_masked(&img, &m).unwrap();
            for y in 0..20 {
                for x in 0..24 {
                    if !m.get(x, y) {
                        prop_assert_eq!(out.get_pixel(x, y), img.get_pixel(x, y));
                    }
                }
            }
        }
    }
}
