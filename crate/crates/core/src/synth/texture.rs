use std::f64::consts::{PI, TAU};
use std::str::FromStr;

use image::RgbImage;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::{angles_to_direction, direction_to_angles, EquirectFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextureKind {
    Checker,
    GaborBand,
}

impl FromStr for TextureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "checker" => Ok(TextureKind::Checker),
            "gabor-band" => Ok(TextureKind::GaborBand),
            other => Err(Error::arg(format!("unknown texture '{other}' (checker, gabor-band)"))),
        }
    }
}

pub const CHECKER_PERIOD: f64 = PI / 8.0;
const WAVES_PER_CHANNEL: usize = 6;
const BAND_WIDTH: f64 = 0.45;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wave {
    pub normal: Vector3<f64>,
    pub frequency: f64,
    pub phase: f64,
    pub amplitude: f64,
}

/// Procedural color as a function of direction on the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub enum SphereTexture {
    /// Alternating cells of `period` radians in both angles.
    Checker { period: f64, dark: [f64; 3], light: [f64; 3] },
    /// Sum of plane waves over the sphere under an equatorial envelope;
    /// smooth enough to survive resampling.
    GaborBand { waves: Vec<[Wave; WAVES_PER_CHANNEL]> },
}

impl SphereTexture {
    pub fn new(kind: TextureKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match kind {
            TextureKind::Checker => {
                let dark = [rng.random_range(0.0..60.0), rng.random_range(0.0..60.0), rng.random_range(0.0..60.0)];
                let light = [
                    rng.random_range(190.0..255.0),
                    rng.random_range(190.0..255.0),
                    rng.random_range(190.0..255.0),
                ];
                SphereTexture::Checker {
                    period: CHECKER_PERIOD,
                    dark: dark.map(f64::round),
                    light: light.map(f64::round),
                }
            }
            TextureKind::GaborBand => {
                let waves = (0..3)
                    .map(|_| {
                        std::array::from_fn(|_| {
                            let v = Vector3::new(
                                StandardNormal.sample(&mut rng),
                                StandardNormal.sample(&mut rng),
                                StandardNormal.sample(&mut rng),
                            );
                            Wave {
                                normal: v.normalize(),
                                frequency: rng.random_range(6.0..24.0),
                                phase: rng.random_range(0.0..TAU),
                                amplitude: rng.random_range(10.0..20.0),
                            }
                        })
                    })
                    .collect();
                SphereTexture::GaborBand { waves }
            }
        }
    }

    /// Color in [0, 255] for a direction (need not be unit length).
    pub fn eval(&self, dir: &Vector3<f64>) -> [f64; 3] {
        match self {
            SphereTexture::Checker { period, dark, light } => {
                let (theta, phi) = direction_to_angles(dir);
                let parity = ((phi / period).floor() as i64 + (theta / period).floor() as i64).rem_euclid(2);
                if parity == 0 {
                    *dark
                } else {
                    *light
                }
            }
            SphereTexture::GaborBand { waves } => {
                let d = dir.normalize();
                let envelope = (-(d.z * d.z) / (2.0 * BAND_WIDTH * BAND_WIDTH)).exp();
                let mut out = [0.0; 3];
                for (c, set) in waves.iter().enumerate() {
                    let sum: f64 = set
                        .iter()
                        .map(|w| w.amplitude * (w.frequency * w.normal.dot(&d) + w.phase).sin())
                        .sum();
                    out[c] = (128.0 + envelope * sum).clamp(0.0, 255.0);
                }
                out
            }
        }
    }
}

/// Samples a texture at every pixel center of a `width × height` panorama.
pub fn render_equirect(texture: &SphereTexture, width: u32, height: u32) -> Result<EquirectFrame> {
    if width != 2 * height || height == 0 {
        return Err(Error::arg(format!("equirect must be 2H x H, got {width}x{height}")));
    }
    let mut buf = vec![0u8; (width * height * 3) as usize];
    buf.par_chunks_mut((width * 3) as usize).enumerate().for_each(|(row, line)| {
        let theta = (row as f64 + 0.5) / height as f64 * PI;
        for col in 0..width as usize {
            let phi = (col as f64 + 0.5) / width as f64 * TAU;
            let v = texture.eval(&angles_to_direction(theta, phi));
            for k in 0..3 {
                line[col * 3 + k] = v[k].round() as u8;
            }
        }
    });
    EquirectFrame::new(RgbImage::from_raw(width, height, buf).expect("buffer sized to image"))
}

pub fn gen_equirect(kind: TextureKind, width: u32, height: u32, seed: u64) -> Result<EquirectFrame> {
    render_equirect(&SphereTexture::new(kind, seed), width, height)
}

/// Number of maximal runs of equal color along a row, counted cyclically.
pub fn count_row_bands(img: &RgbImage, row: u32) -> usize {
    let w = img.width();
    let px = |c: u32| *img.get_pixel(c % w, row);
    let changes = (0..w).filter(|&c| px(c) != px(c + 1)).count();
    changes.max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checker_has_sixteen_bands() {
        let f = gen_equirect(TextureKind::Checker, 512, 256, 3).unwrap();
        assert_eq!(count_row_bands(f.image(), 100), 16);
    }

    #[test]
    fn same_seed_same_image() {
        let a = gen_equirect(TextureKind::GaborBand, 128, 64, 11).unwrap();
        let b = gen_equirect(TextureKind::GaborBand, 128, 64, 11).unwrap();
        let c = gen_equirect(TextureKind::GaborBand, 128, 64, 12).unwrap();
        assert_eq!(a.image(), b.image());
        assert_ne!(a.image(), c.image());
        assert!(gen_equirect(TextureKind::Checker, 100, 100, 0).is_err());
    }
}
