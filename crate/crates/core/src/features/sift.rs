//! Lowe-style scale-invariant keypoints: difference-of-Gaussian extrema,
//! sub-pixel refinement, gradient orientation and a 4×4×8 descriptor.

use std::f32::consts::TAU;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{Keypoint, KeypointSet, DESCRIPTOR_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiftOptions {
    /// Blur of the first scale of each octave.
    pub sigma: f32,
    /// Scales sampled per octave.
    pub intervals: usize,
    pub contrast_threshold: f32,
    pub edge_ratio: f32,
    /// Double the input before building the pyramid.
    pub upsample: bool,
    /// Blur already present in the input.
    pub assumed_blur: f32,
}

impl Default for SiftOptions {
    fn default() -> Self {
        Self {
            sigma: 1.6,
            intervals: 3,
            contrast_threshold: 0.04,
            edge_ratio: 10.0,
            upsample: false,
            assumed_blur: 0.5,
        }
    }
}

const BORDER: usize = 5;
const ORI_BINS: usize = 36;
const ORI_PEAK_RATIO: f32 = 0.8;
const DESC_WIDTH: usize = 4;
const DESC_BINS: usize = 8;
const DESC_CLAMP: f32 = 0.2;

/// Single-channel float image, values in [0, 1].
#[derive(Debug, Clone)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_rgb(img: &image::RgbImage) -> Self {
        let data = img
            .pixels()
            .map(|p| (0.299 * p.0[0] as f32 + 0.587 * p.0[1] as f32 + 0.114 * p.0[2] as f32) / 255.0)
            .collect();
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data,
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    fn upsample2(&self) -> Self {
        let (w, h) = (self.width * 2, self.height * 2);
        let mut out = Self::new(w, h);
        for y in 0..h {
            let fy = (y as f32 * 0.5).min((self.height - 1) as f32);
            let (y0, ty) = (fy.floor() as usize, fy.fract());
            let y1 = (y0 + 1).min(self.height - 1);
            for x in 0..w {
                let fx = (x as f32 * 0.5).min((self.width - 1) as f32);
                let (x0, tx) = (fx.floor() as usize, fx.fract());
                let x1 = (x0 + 1).min(self.width - 1);
                let top = self.at(x0, y0) * (1.0 - tx) + self.at(x1, y0) * tx;
                let bot = self.at(x0, y1) * (1.0 - tx) + self.at(x1, y1) * tx;
                out.data[y * w + x] = top * (1.0 - ty) + bot * ty;
            }
        }
        out
    }

    fn downsample2(&self) -> Self {
        let (w, h) = (self.width.div_ceil(2), self.height.div_ceil(2));
        let mut out = Self::new(w, h);
        for y in 0..h {
            for x in 0..w {
                out.data[y * w + x] = self.at(2 * x, 2 * y);
            }
        }
        out
    }

    /// Separable Gaussian blur with replicated borders.
    fn blur(&self, sigma: f32) -> Self {
        if sigma <= 0.0 {
            return self.clone();
        }
        let radius = (3.0 * sigma).ceil().max(1.0) as isize;
        let mut taps: Vec<f32> = (-radius..=radius)
            .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
            .collect();
        let sum: f32 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= sum);
        let (w, h) = (self.width as isize, self.height as isize);
        let mut tmp = Self::new(self.width, self.height);
        for y in 0..h {
            let row = &self.data[(y * w) as usize..((y + 1) * w) as usize];
            for x in 0..w {
                let mut acc = 0.0;
                for (k, t) in taps.iter().enumerate() {
                    let xx = (x + k as isize - radius).clamp(0, w - 1);
                    acc += t * row[xx as usize];
                }
                tmp.data[(y * w + x) as usize] = acc;
            }
        }
        let mut out = Self::new(self.width, self.height);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, t) in taps.iter().enumerate() {
                    let yy = (y + k as isize - radius).clamp(0, h - 1);
                    acc += t * tmp.data[(yy * w + x) as usize];
                }
                out.data[(y * w + x) as usize] = acc;
            }
        }
        out
    }
}

struct Octave {
    gauss: Vec<GrayImage>,
    dog: Vec<GrayImage>,
}

fn build_pyramid(base: &GrayImage, opts: &SiftOptions) -> Vec<Octave> {
    let s = opts.intervals;
    let k = 2f32.powf(1.0 / s as f32);
    let min_dim = base.width.min(base.height) as f32;
    let n_octaves = ((min_dim.log2().floor() as i32) - 3).max(1) as usize;
    let incremental: Vec<f32> = (1..s + 3)
        .map(|i| {
            let prev = opts.sigma * k.powi(i as i32 - 1);
            let cur = prev * k;
            (cur * cur - prev * prev).sqrt()
        })
        .collect();

    let mut octaves: Vec<Octave> = Vec::with_capacity(n_octaves);
    for o in 0..n_octaves {
        let first = if o == 0 {
            base.clone()
        } else {
            octaves[o - 1].gauss[s].downsample2()
        };
        if first.width <= 2 * BORDER + 2 || first.height <= 2 * BORDER + 2 {
            break;
        }
        let mut gauss = vec![first];
        for sig in &incremental {
            let next = gauss.last().unwrap().blur(*sig);
            gauss.push(next);
        }
        let dog = gauss
            .windows(2)
            .map(|w| GrayImage {
                width: w[0].width,
                height: w[0].height,
                data: w[1].data.iter().zip(&w[0].data).map(|(b, a)| b - a).collect(),
            })
            .collect();
        octaves.push(Octave { gauss, dog });
    }
    octaves
}

fn is_extremum(dog: &[GrayImage], l: usize, x: usize, y: usize) -> bool {
    let v = dog[l].at(x, y);
    let mut is_max = true;
    let mut is_min = true;
    for img in &dog[l - 1..=l + 1] {
        for yy in y - 1..=y + 1 {
            for xx in x - 1..=x + 1 {
                if std::ptr::eq(img, &dog[l]) && xx == x && yy == y {
                    continue;
                }
                let n = img.at(xx, yy);
                is_max &= v > n;
                is_min &= v < n;
                if !is_max && !is_min {
                    return false;
                }
            }
        }
    }
    true
}

struct Refined {
    x: f32,
    y: f32,
    layer: usize,
    offset_s: f32,
}

fn derivatives(dog: &[GrayImage], l: usize, x: usize, y: usize) -> (Vector3<f64>, Matrix3<f64>) {
    let d = |dl: isize, dx: isize, dy: isize| {
        dog[(l as isize + dl) as usize].at((x as isize + dx) as usize, (y as isize + dy) as usize) as f64
    };
    let v = d(0, 0, 0);
    let g = Vector3::new(
        0.5 * (d(0, 1, 0) - d(0, -1, 0)),
        0.5 * (d(0, 0, 1) - d(0, 0, -1)),
        0.5 * (d(1, 0, 0) - d(-1, 0, 0)),
    );
    let dxx = d(0, 1, 0) + d(0, -1, 0) - 2.0 * v;
    let dyy = d(0, 0, 1) + d(0, 0, -1) - 2.0 * v;
    let dss = d(1, 0, 0) + d(-1, 0, 0) - 2.0 * v;
    let dxy = 0.25 * (d(0, 1, 1) - d(0, -1, 1) - d(0, 1, -1) + d(0, -1, -1));
    let dxs = 0.25 * (d(1, 1, 0) - d(1, -1, 0) - d(-1, 1, 0) + d(-1, -1, 0));
    let dys = 0.25 * (d(1, 0, 1) - d(1, 0, -1) - d(-1, 0, 1) + d(-1, 0, -1));
    let h = Matrix3::new(dxx, dxy, dxs, dxy, dyy, dys, dxs, dys, dss);
    (g, h)
}

fn refine(dog: &[GrayImage], mut l: usize, mut x: usize, mut y: usize, opts: &SiftOptions) -> Option<Refined> {
    let s = opts.intervals;
    let (w, h) = (dog[0].width, dog[0].height);
    for _ in 0..5 {
        let (g, hess) = derivatives(dog, l, x, y);
        let offset = -(hess.try_inverse()? * g);
        if offset.iter().all(|o| o.abs() < 0.5) {
            let contrast = dog[l].at(x, y) as f64 + 0.5 * g.dot(&offset);
            if contrast.abs() * (s as f64) < opts.contrast_threshold as f64 {
                return None;
            }
            let tr = hess[(0, 0)] + hess[(1, 1)];
            let det = hess[(0, 0)] * hess[(1, 1)] - hess[(0, 1)] * hess[(0, 1)];
            let r = opts.edge_ratio as f64;
            if det <= 0.0 || tr * tr * r >= (r + 1.0).powi(2) * det {
                return None;
            }
            return Some(Refined {
                x: (x as f64 + offset.x) as f32,
                y: (y as f64 + offset.y) as f32,
                layer: l,
                offset_s: offset.z as f32,
            });
        }
        if !offset.iter().all(|o| o.is_finite()) {
            return None;
        }
        let nx = x as isize + offset.x.round() as isize;
        let ny = y as isize + offset.y.round() as isize;
        let nl = l as isize + offset.z.round() as isize;
        if nl < 1 || nl > s as isize || nx < BORDER as isize || ny < BORDER as isize {
            return None;
        }
        if nx >= (w - BORDER) as isize || ny >= (h - BORDER) as isize {
            return None;
        }
        (x, y, l) = (nx as usize, ny as usize, nl as usize);
    }
    None
}

fn gradient(img: &GrayImage, x: usize, y: usize) -> (f32, f32) {
    (img.at(x + 1, y) - img.at(x - 1, y), img.at(x, y + 1) - img.at(x, y - 1))
}

fn orientations(img: &GrayImage, x: f32, y: f32, sigma: f32) -> Vec<f32> {
    let sig = 1.5 * sigma;
    let radius = (3.0 * sig).round() as isize;
    let (cx, cy) = (x.round() as isize, y.round() as isize);
    let mut hist = [0f32; ORI_BINS];
    for dy in -radius..=radius {
        let yy = cy + dy;
        if yy < 1 || yy >= img.height as isize - 1 {
            continue;
        }
        for dx in -radius..=radius {
            let xx = cx + dx;
            if xx < 1 || xx >= img.width as isize - 1 {
                continue;
            }
            let (gx, gy) = gradient(img, xx as usize, yy as usize);
            let w = (-((dx * dx + dy * dy) as f32) / (2.0 * sig * sig)).exp();
            let angle = gy.atan2(gx).rem_euclid(TAU);
            let bin = ((angle / TAU * ORI_BINS as f32).round() as usize) % ORI_BINS;
            hist[bin] += w * (gx * gx + gy * gy).sqrt();
        }
    }
    let mut smooth = [0f32; ORI_BINS];
    for i in 0..ORI_BINS {
        let at = |k: isize| hist[(i as isize + k).rem_euclid(ORI_BINS as isize) as usize];
        smooth[i] = (at(-2) + at(2)) / 16.0 + (at(-1) + at(1)) * 4.0 / 16.0 + at(0) * 6.0 / 16.0;
    }
    let max = smooth.iter().cloned().fold(0.0, f32::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for i in 0..ORI_BINS {
        let l = smooth[(i + ORI_BINS - 1) % ORI_BINS];
        let r = smooth[(i + 1) % ORI_BINS];
        let c = smooth[i];
        if c > l && c > r && c >= ORI_PEAK_RATIO * max {
            let shift = 0.5 * (l - r) / (l - 2.0 * c + r);
            let bin = i as f32 + shift;
            out.push((bin / ORI_BINS as f32 * TAU).rem_euclid(TAU));
        }
    }
    out
}

fn descriptor(img: &GrayImage, x: f32, y: f32, sigma: f32, ori: f32) -> Option<[f32; DESCRIPTOR_LEN]> {
    let d = DESC_WIDTH;
    let n = DESC_BINS;
    let hist_width = 3.0 * sigma;
    let radius = (hist_width * std::f32::consts::SQRT_2 * (d as f32 + 1.0) * 0.5).round() as isize;
    let (cos_t, sin_t) = (ori.cos() / hist_width, ori.sin() / hist_width);
    let (cx, cy) = (x.round() as isize, y.round() as isize);
    let exp_scale = -1.0 / (0.5 * (d * d) as f32);
    let mut hist = vec![0f32; (d + 2) * (d + 2) * (n + 2)];
    let idx = |r: usize, c: usize, o: usize| (r * (d + 2) + c) * (n + 2) + o;

    for i in -radius..=radius {
        for j in -radius..=radius {
            let c_rot = j as f32 * cos_t + i as f32 * sin_t;
            let r_rot = -(j as f32) * sin_t + i as f32 * cos_t;
            let rbin = r_rot + d as f32 / 2.0 - 0.5;
            let cbin = c_rot + d as f32 / 2.0 - 0.5;
            if rbin <= -1.0 || rbin >= d as f32 || cbin <= -1.0 || cbin >= d as f32 {
                continue;
            }
            let (xx, yy) = (cx + j, cy + i);
            if xx < 1 || yy < 1 || xx >= img.width as isize - 1 || yy >= img.height as isize - 1 {
                continue;
            }
            let (gx, gy) = gradient(img, xx as usize, yy as usize);
            let mag = (gx * gx + gy * gy).sqrt() * ((c_rot * c_rot + r_rot * r_rot) * exp_scale).exp();
            let obin = (gy.atan2(gx) - ori).rem_euclid(TAU) * n as f32 / TAU;

            let (r0, c0, o0) = (rbin.floor(), cbin.floor(), obin.floor());
            let (dr, dc, dob) = (rbin - r0, cbin - c0, obin - o0);
            let (r0, c0) = ((r0 + 1.0) as usize, (c0 + 1.0) as usize);
            let o0 = (o0 as usize) % n;
            for (ri, wr) in [(0, 1.0 - dr), (1, dr)] {
                for (ci, wc) in [(0, 1.0 - dc), (1, dc)] {
                    for (oi, wo) in [(0, 1.0 - dob), (1, dob)] {
                        hist[idx(r0 + ri, c0 + ci, o0 + oi)] += mag * wr * wc * wo;
                    }
                }
            }
        }
    }

    let mut desc = [0f32; DESCRIPTOR_LEN];
    for r in 0..d {
        for c in 0..d {
            hist[idx(r + 1, c + 1, 0)] += hist[idx(r + 1, c + 1, n)];
            hist[idx(r + 1, c + 1, 1)] += hist[idx(r + 1, c + 1, n + 1)];
            for o in 0..n {
                desc[(r * d + c) * n + o] = hist[idx(r + 1, c + 1, o)];
            }
        }
    }
    let norm = desc.iter().map(|v| v * v).sum::<f32>().sqrt();
    if !(norm > 1e-12) {
        return None;
    }
    desc.iter_mut().for_each(|v| *v = (*v / norm).min(DESC_CLAMP));
    let norm = desc.iter().map(|v| v * v).sum::<f32>().sqrt();
    desc.iter_mut().for_each(|v| *v /= norm);
    Some(desc)
}

/// Keypoints and descriptors of a grayscale image.
pub fn sift(gray: &GrayImage, opts: &SiftOptions) -> KeypointSet {
    let s = opts.intervals;
    let (base, scale_back) = if opts.upsample {
        let up = gray.upsample2();
        let have = 2.0 * opts.assumed_blur;
        (up.blur((opts.sigma.powi(2) - have.powi(2)).max(0.01).sqrt()), 0.5)
    } else {
        let have = opts.assumed_blur;
        (gray.blur((opts.sigma.powi(2) - have.powi(2)).max(0.01).sqrt()), 1.0)
    };
    let octaves = build_pyramid(&base, opts);
    let prelim = 0.5 * opts.contrast_threshold / s as f32;

    let mut keypoints = Vec::new();
    let mut descriptors = Vec::new();
    for (o, oct) in octaves.iter().enumerate() {
        let (w, h) = (oct.dog[0].width, oct.dog[0].height);
        let octave_scale = 2f32.powi(o as i32) * scale_back;
        for l in 1..=s {
            for y in BORDER..h - BORDER {
                for x in BORDER..w - BORDER {
                    if oct.dog[l].at(x, y).abs() <= prelim || !is_extremum(&oct.dog, l, x, y) {
                        continue;
                    }
                    let Some(kp) = refine(&oct.dog, l, x, y, opts) else {
                        continue;
                    };
                    let sigma = opts.sigma * 2f32.powf((kp.layer as f32 + kp.offset_s) / s as f32);
                    let img = &oct.gauss[kp.layer];
                    for ori in orientations(img, kp.x, kp.y, sigma) {
                        if let Some(desc) = descriptor(img, kp.x, kp.y, sigma, ori) {
                            keypoints.push(Keypoint {
                                x: kp.x * octave_scale,
                                y: kp.y * octave_scale,
                                scale: sigma * octave_scale,
                                orientation: ori,
                            });
                            descriptors.push(desc);
                        }
                    }
                }
            }
        }
    }
    KeypointSet {
        keypoints,
        descriptors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(size: usize, radius: f32) -> GrayImage {
        let mut img = GrayImage::new(size, size);
        let c = (size as f32 - 1.0) / 2.0;
        for y in 0..size {
            for x in 0..size {
                let r2 = (x as f32 - c).powi(2) + (y as f32 - c).powi(2);
                img.data[y * size + x] = 0.1 + 0.8 * (-r2 / (2.0 * radius * radius)).exp();
            }
        }
        img
    }

    #[test]
    fn blur_keeps_constant_images() {
        let mut img = GrayImage::new(20, 12);
        img.data.iter_mut().for_each(|v| *v = 0.37);
        let out = img.blur(2.5);
        assert!(out.data.iter().all(|v| (v - 0.37).abs() < 1e-6));
    }

    #[test]
    fn single_blob_gives_a_centered_keypoint_at_its_scale() {
        let radius = 4.0;
        let set = sift(&blob(64, radius), &SiftOptions::default());
        assert!(!set.keypoints.is_empty());
        let c = 31.5;
        let best = set
            .keypoints
            .iter()
            .min_by(|a, b| {
                let da = (a.x - c).hypot(a.y - c);
                let db = (b.x - c).hypot(b.y - c);
                da.total_cmp(&db)
            })
            .unwrap();
        assert!((best.x - c).hypot(best.y - c) < 1.0, "{best:?}");
        assert!(best.scale > 0.5 * radius && best.scale < 2.0 * radius, "{best:?}");
    }

    #[test]
    fn descriptors_are_unit_length() {
        let set = sift(&blob(64, 3.0), &SiftOptions::default());
        assert_eq!(set.keypoints.len(), set.descriptors.len());
        for d in &set.descriptors {
            let n = d.iter().map(|v| v * v).sum::<f32>().sqrt();
            assert!((n - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn flat_image_has_no_keypoints() {
        let set = sift(&GrayImage::new(48, 48), &SiftOptions::default());
        assert!(set.keypoints.is_empty());
    }
}
