use image::RgbImage;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::projection::{face_ray_at, CubeFace, CubemapSet, FaceLabel};

/// Box-shaped corridor along x with value-noise textured walls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corridor {
    pub half_width: f64,
    pub floor: f64,
    pub ceiling: f64,
    /// Extent along x, ends included.
    pub x_min: f64,
    pub x_max: f64,
    pub seed: u64,
}

fn hash(seed: u64, i: i64, j: i64, surface: u64) -> f64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [i as u64, j as u64, surface] {
        h ^= v.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(seed: u64, surface: u64, u: f64, v: f64) -> f64 {
    let (i, j) = (u.floor(), v.floor());
    let (fu, fv) = (u - i, v - j);
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let (su, sv) = (smooth(fu), smooth(fv));
    let (i, j) = (i as i64, j as i64);
    let a = hash(seed, i, j, surface);
    let b = hash(seed, i + 1, j, surface);
    let c = hash(seed, i, j + 1, surface);
    let d = hash(seed, i + 1, j + 1, surface);
    (a * (1.0 - su) + b * su) * (1.0 - sv) + (c * (1.0 - su) + d * su) * sv
}

fn fractal(seed: u64, surface: u64, u: f64, v: f64) -> f64 {
    let mut sum = 0.0;
    let mut amp = 0.5;
    let mut freq = 1.5;
    for octave in 0..3 {
        sum += amp * value_noise(seed, surface * 8 + octave, u * freq, v * freq);
        amp *= 0.5;
        freq *= 2.0;
    }
    sum / 0.875
}

impl Corridor {
    /// Corridor enclosing `[x_min, x_max]` with random proportions.
    pub fn new(seed: u64, x_min: f64, x_max: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            half_width: rng.random_range(1.8..2.4),
            floor: -rng.random_range(1.3..1.7),
            ceiling: rng.random_range(1.3..1.7),
            x_min: x_min - 4.0,
            x_max: x_max + 4.0,
            seed,
        }
    }

    /// Color seen from `origin` along `dir`.
    pub fn shade(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> [f64; 3] {
        let mut best = (f64::INFINITY, 0u64);
        let mut hit = |t: f64, surface: u64| {
            if t > 1e-9 && t < best.0 {
                best = (t, surface);
            }
        };
        if dir.y != 0.0 {
            hit((self.half_width - origin.y) / dir.y, 0);
            hit((-self.half_width - origin.y) / dir.y, 1);
        }
        if dir.z != 0.0 {
            hit((self.ceiling - origin.z) / dir.z, 2);
            hit((self.floor - origin.z) / dir.z, 3);
        }
        if dir.x != 0.0 {
            hit((self.x_max - origin.x) / dir.x, 4);
            hit((self.x_min - origin.x) / dir.x, 5);
        }
        let (t, surface) = best;
        if !t.is_finite() {
            return [0.0; 3];
        }
        let p = origin + dir * t;
        let (u, v) = match surface {
            0 | 1 => (p.x, p.z),
            2 | 3 => (p.x, p.y),
            _ => (p.y, p.z),
        };
        let g = fractal(self.seed, surface, u, v);
        let tint = [1.0, 0.9 + 0.05 * surface as f64, 0.8 + 0.03 * surface as f64];
        tint.map(|k| (255.0 * g * k).clamp(0.0, 255.0))
    }

    /// The 8 side faces seen from `center`, 2×2 supersampled.
    pub fn render_cubemap(&self, center: &Vector3<f64>, face_size: u32) -> Result<CubemapSet> {
        if face_size < 2 {
            return Err(Error::arg("face size must be at least 2"));
        }
        let faces = FaceLabel::SIDES
            .par_iter()
            .map(|&label| {
                let n = face_size as f64;
                let img = RgbImage::from_fn(face_size, face_size, |u, v| {
                    let mut acc = [0.0; 3];
                    for (du, dv) in [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)] {
                        let a = 2.0 * (u as f64 + du) / n - 1.0;
                        let b = 2.0 * (v as f64 + dv) / n - 1.0;
                        let c = self.shade(center, &face_ray_at(label, a, b));
                        for k in 0..3 {
                            acc[k] += 0.25 * c[k];
                        }
                    }
                    image::Rgb(acc.map(|x| x.round() as u8))
                });
                CubeFace {
                    label,
                    yaw: label.yaw(),
                    image: img,
                }
            })
            .collect();
        CubemapSet::from_faces(faces)
    }
}

/// Two passes through one corridor: flight 1 is a regular sweep, flight 2
/// starts close to flight 1's frame `truth`.
#[derive(Debug, Clone)]
pub struct CorridorFlights {
    pub corridor: Corridor,
    pub flight1: Vec<Vector3<f64>>,
    pub flight2: Vec<Vector3<f64>>,
    /// Flight-1 frame nearest to flight 2's first frame.
    pub truth: u32,
    pub step: f64,
}

pub const CORRIDOR_STEP: f64 = 0.5;

pub fn corridor_flights(seed: u64, frames1: usize, frames2: usize) -> Result<CorridorFlights> {
    if frames1 < 8 || frames2 < 1 {
        return Err(Error::arg("flight 1 needs at least 8 frames and flight 2 at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = CORRIDOR_STEP;
    let flight1: Vec<Vector3<f64>> = (0..frames1).map(|i| Vector3::new(i as f64 * step, 0.0, 0.0)).collect();
    let lo = frames1 / 4;
    let hi = (3 * frames1 / 4).max(lo + 1);
    let truth = rng.random_range(lo..hi) as u32;
    let start = Vector3::new(
        (truth as f64 + rng.random_range(-0.3..0.3)) * step,
        rng.random_range(-0.25..0.25),
        rng.random_range(-0.15..0.15),
    );
    let flight2: Vec<Vector3<f64>> = (0..frames2)
        .map(|i| start + Vector3::new(i as f64 * step * rng.random_range(0.9..1.1), 0.0, 0.0))
        .collect();
    let x_max = flight1.last().unwrap().x.max(flight2.last().unwrap().x);
    Ok(CorridorFlights {
        corridor: Corridor::new(seed ^ 0x00c0_ffee, 0.0, x_max),
        flight1,
        flight2,
        truth,
        step,
    })
}
