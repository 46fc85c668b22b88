//! Keypoint matching and the match-count similarity used to find where two
//! flights overlap.

mod sift;

pub use sift::{sift, GrayImage, SiftOptions};

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::CubemapSet;

pub const DESCRIPTOR_LEN: usize = 128;
pub const DEFAULT_RATIO: f32 = 0.75;
pub const DEFAULT_TEMPERATURE: f64 = 1.0;
pub const TOP_K: usize = 3;
const MIN_IMAGE_SIDE: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    pub scale: f32,
    /// Radians in image coordinates (x right, y down).
    pub orientation: f32,
}

/// Keypoints with one unit-length descriptor each.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeypointSet {
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<[f32; DESCRIPTOR_LEN]>,
}

impl KeypointSet {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }
}

pub fn detect_and_describe(img: &RgbImage) -> Result<KeypointSet> {
    detect_and_describe_with(img, &SiftOptions::default())
}

pub fn detect_and_describe_with(img: &RgbImage, opts: &SiftOptions) -> Result<KeypointSet> {
    if img.width().min(img.height()) < MIN_IMAGE_SIDE {
        return Err(Error::arg(format!(
            "image {}x{} is smaller than {MIN_IMAGE_SIDE} pixels",
            img.width(),
            img.height()
        )));
    }
    if opts.intervals == 0 || opts.sigma <= 0.0 {
        return Err(Error::arg("feature options need intervals ≥ 1 and sigma > 0"));
    }
    Ok(sift(&GrayImage::from_rgb(img), opts))
}

fn dist2(a: &[f32; DESCRIPTOR_LEN], b: &[f32; DESCRIPTOR_LEN]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// For each descriptor of `a`, its nearest neighbour in `b` if it passes
/// the ratio test.
fn ratio_matches(a: &KeypointSet, b: &KeypointSet, ratio: f32) -> Vec<Option<usize>> {
    let r2 = ratio * ratio;
    a.descriptors
        .iter()
        .map(|da| {
            let (mut best, mut second, mut best_j) = (f32::INFINITY, f32::INFINITY, usize::MAX);
            for (j, db) in b.descriptors.iter().enumerate() {
                let d = dist2(da, db);
                if d < best {
                    second = best;
                    best = d;
                    best_j = j;
                } else if d < second {
                    second = d;
                }
            }
            (best_j != usize::MAX && best < r2 * second).then_some(best_j)
        })
        .collect()
}

/// Mutual nearest neighbours passing the ratio test in both directions.
pub fn match_count(a: &KeypointSet, b: &KeypointSet) -> usize {
    match_count_with_ratio(a, b, DEFAULT_RATIO)
}

pub fn match_count_with_ratio(a: &KeypointSet, b: &KeypointSet, ratio: f32) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let ab = ratio_matches(a, b, ratio);
    let ba = ratio_matches(b, a, ratio);
    ab.iter()
        .enumerate()
        .filter(|(i, m)| m.is_some_and(|j| ba[j] == Some(*i)))
        .count()
}

/// Keypoints of each side face of one frame, in face order.
#[derive(Debug, Clone)]
pub struct FrameFeatures {
    pub frame_id: u32,
    pub faces: Vec<KeypointSet>,
}

impl FrameFeatures {
    pub fn from_cubemap(frame_id: u32, cube: &CubemapSet, opts: &SiftOptions) -> Result<Self> {
        let faces = cube
            .side_faces()
            .par_iter()
            .map(|f| detect_and_describe_with(&f.image, opts))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { frame_id, faces })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityOptions {
    /// Softmax temperature on raw match counts.
    pub temperature: f64,
    pub ratio: f32,
}

impl Default for SimilarityOptions {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            ratio: DEFAULT_RATIO,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FrameScore {
    pub frame: u32,
    pub matches: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimilarityResult {
    /// Median of the per-face estimates.
    pub frame: u32,
    pub face_estimates: Vec<u32>,
    pub top: Vec<Vec<FrameScore>>,
    /// Median over faces of the best per-face match count.
    pub match_count: usize,
}

/// Highest counts first, lower frame on ties.
pub fn top_frames(scores: &[FrameScore], k: usize) -> Vec<FrameScore> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.matches.cmp(&a.matches).then(a.frame.cmp(&b.frame)));
    sorted.truncate(k);
    sorted
}

/// Softmax-weighted frame of the top entries, rounded half away from zero.
pub fn weighted_frame(top: &[FrameScore], temperature: f64) -> Result<u32> {
    if top.is_empty() {
        return Err(Error::arg("no frames to weight"));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::arg(format!("temperature {temperature} must be positive")));
    }
    let max = top.iter().map(|s| s.matches).max().unwrap() as f64;
    let weights: Vec<f64> = top.iter().map(|s| ((s.matches as f64 - max) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mean = top.iter().zip(&weights).map(|(s, w)| s.frame as f64 * w).sum::<f64>() / total;
    Ok(mean.round() as u32)
}

/// Median; for even counts, the mean of the two middle values rounded
/// half away from zero.
pub fn median_frame(values: &[u32]) -> Result<u32> {
    if values.is_empty() {
        return Err(Error::arg("median of nothing"));
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        ((v[n / 2 - 1] as f64 + v[n / 2] as f64) / 2.0).round() as u32
    })
}

/// Result of the heuristic from per-face scores over all candidates.
pub fn similarity_from_scores(per_face: &[Vec<FrameScore>], temperature: f64) -> Result<SimilarityResult> {
    let mut top = Vec::with_capacity(per_face.len());
    let mut estimates = Vec::with_capacity(per_face.len());
    let mut best_counts = Vec::with_capacity(per_face.len());
    for scores in per_face {
        if scores.len() < TOP_K {
            return Err(Error::arg(format!("need at least {TOP_K} candidate frames, got {}", scores.len())));
        }
        let t = top_frames(scores, TOP_K);
        estimates.push(weighted_frame(&t, temperature)?);
        best_counts.push(t[0].matches as u32);
        top.push(t);
    }
    Ok(SimilarityResult {
        frame: median_frame(&estimates)?,
        face_estimates: estimates,
        top,
        match_count: median_frame(&best_counts)? as usize,
    })
}

/// Candidate frame that looks most like `query`, voting over faces.
pub fn most_similar_frame(
    query: &FrameFeatures,
    candidates: &[FrameFeatures],
    opts: &SimilarityOptions,
) -> Result<SimilarityResult> {
    if candidates.len() < TOP_K {
        return Err(Error::arg(format!("need at least {TOP_K} candidate frames, got {}", candidates.len())));
    }
    let n_faces = query.faces.len();
    if n_faces == 0 || candidates.iter().any(|c| c.faces.len() != n_faces) {
        return Err(Error::arg("query and candidates must have the same faces"));
    }
    let per_face: Vec<Vec<FrameScore>> = (0..n_faces)
        .into_par_iter()
        .map(|f| {
            candidates
                .iter()
                .map(|c| FrameScore {
                    frame: c.frame_id,
                    matches: match_count_with_ratio(&query.faces[f], &c.faces[f], opts.ratio),
                })
                .collect()
        })
        .collect();
    similarity_from_scores(&per_face, opts.temperature)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn score(frame: u32, matches: usize) -> FrameScore {
        FrameScore { frame, matches }
    }

    /// Smooth blobs at pseudo-random positions.
    fn blobs(size: u32, seed: u32) -> RgbImage {
        let centers: Vec<(f32, f32, f32, f32)> = (0..40u32)
            .map(|i| {
                let h = |k: u32| ((i.wrapping_mul(2654435761) ^ seed.wrapping_mul(40503) ^ k.wrapping_mul(97)) % 1000) as f32 / 1000.0;
                (h(1) * size as f32, h(2) * size as f32, 1.5 + 4.0 * h(3), h(4) - 0.5)
            })
            .collect();
        RgbImage::from_fn(size, size, |x, y| {
            let mut v = 0.5;
            for (cx, cy, r, a) in &centers {
                let d2 = (x as f32 - cx).powi(2) + (y as f32 - cy).powi(2);
                v += a * (-d2 / (2.0 * r * r)).exp();
            }
            let g = (v.clamp(0.0, 1.0) * 255.0) as u8;
            Rgb([g, g, g])
        })
    }

    #[test]
    fn constant_image_has_no_keypoints() {
        let img = RgbImage::from_pixel(64, 64, Rgb([90, 90, 90]));
        assert!(detect_and_describe(&img).unwrap().is_empty());
        assert!(detect_and_describe(&RgbImage::new(31, 64)).is_err());
    }

    #[test]
    fn descriptors_are_unit_and_deterministic() {
        let img = blobs(128, 7);
        let a = detect_and_describe(&img).unwrap();
        let b = detect_and_describe(&img).unwrap();
        assert!(a.len() >= 10, "{} keypoints", a.len());
        assert_eq!(a, b);
        for d in &a.descriptors {
            let n: f32 = d.iter().map(|v| v * v).sum::<f32>().sqrt();
            assert!((n - 1.0).abs() < 1e-4);
        }
        assert_eq!(match_count(&a, &a), a.len());
        assert_eq!(match_count(&a, &KeypointSet::default()), 0);
    }

    #[test]
    fn rotation_keeps_keypoint_count() {
        let img = blobs(128, 3);
        let rot = image::imageops::rotate90(&img);
        let a = detect_and_describe(&img).unwrap().len() as f64;
        let b = detect_and_describe(&rot).unwrap().len() as f64;
        assert!((a - b).abs() <= 0.2 * a.max(b), "{a} vs {b}");
    }

    #[test]
    fn match_count_is_symmetric() {
        let a = detect_and_describe(&blobs(96, 1)).unwrap();
        let b = detect_and_describe(&blobs(96, 2)).unwrap();
        assert_eq!(match_count(&a, &b), match_count(&b, &a));
    }

    #[test]
    fn weighted_frame_examples() {
        assert_eq!(weighted_frame(&[score(5, 30), score(6, 20), score(7, 10)], 1.0).unwrap(), 5);
        assert_eq!(weighted_frame(&[score(5, 9), score(6, 9), score(7, 9)], 1.0).unwrap(), 6);
        assert!(weighted_frame(&[score(5, 9)], 0.0).is_err());
    }

    #[test]
    fn ties_prefer_lower_frames_and_order_is_irrelevant() {
        let scores = vec![score(9, 4), score(3, 4), score(7, 10), score(5, 4)];
        let top = top_frames(&scores, 3);
        assert_eq!(top, vec![score(7, 10), score(3, 4), score(5, 4)]);
        let mut rev = scores.clone();
        rev.reverse();
        assert_eq!(top_frames(&rev, 3), top);
    }

    #[test]
    fn median_rounds_half_away_from_zero() {
        assert_eq!(median_frame(&[1, 2, 3, 4, 5, 6, 7, 8]).unwrap(), 5);
        assert_eq!(median_frame(&[4, 4, 4, 4, 5, 5, 5, 5]).unwrap(), 5);
        assert_eq!(median_frame(&[1, 9, 3]).unwrap(), 3);
    }

    #[test]
    fn self_match_dominates() {
        let per_face: Vec<Vec<FrameScore>> = (0..8)
            .map(|f| (10..15).map(|t| score(t, if t == 12 { 200 } else { 20 + f })).collect())
            .collect();
        let r = similarity_from_scores(&per_face, 1.0).unwrap();
        assert_eq!(r.frame, 12);
        assert_eq!(r.face_estimates, vec![12; 8]);
        assert_eq!(r.match_count, 200);
        assert!(similarity_from_scores(&[vec![score(1, 1), score(2, 1)]], 1.0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn estimate_stays_within_top_frames(
            counts in proptest::collection::vec((0u32..500, 0usize..300), 3..12),
            temperature in 0.1f64..50.0,
        ) {
            let scores: Vec<FrameScore> = counts.iter().map(|(f, c)| score(*f, *c)).collect();
            let top = top_frames(&scores, 3);
            let est = weighted_frame(&top, temperature).unwrap();
            let lo = top.iter().map(|s| s.frame).min().unwrap();
            let hi = top.iter().map(|s| s.frame).max().unwrap();
            proptest::prop_assert!(lo <= est && est <= hi);
        }
    }
}
