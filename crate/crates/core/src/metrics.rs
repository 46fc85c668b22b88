//! Image quality (PSNR, SSIM) and trajectory alignment error.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene_io::Trajectory;

const MAX_VALUE: f64 = 255.0;

fn check_dims(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if a.dimensions() != b.dimensions() {
        return Err(Error::arg(format!(
            "image sizes differ: {:?} vs {:?}",
            a.dimensions(),
            b.dimensions()
        )));
    }
    Ok(())
}

/// How multi-channel PSNR is aggregated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PsnrMode {
    /// One MSE over all channels.
    #[default]
    Joint,
    /// Mean of the per-channel PSNRs.
    PerChannel,
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (MAX_VALUE * MAX_VALUE / mse).log10()
    }
}

/// Peak signal-to-noise ratio in dB; identical images give `+inf`.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    psnr_with_mode(a, b, PsnrMode::Joint)
}

pub fn psnr_with_mode(a: &RgbImage, b: &RgbImage, mode: PsnrMode) -> Result<f64> {
    check_dims(a, b)?;
    let mut sq = [0u64; 3];
    for (pa, pb) in a.pixels().zip(b.pixels()) {
        for k in 0..3 {
            let d = pa.0[k] as i64 - pb.0[k] as i64;
            sq[k] += (d * d) as u64;
        }
    }
    let n = (a.width() * a.height()) as f64;
    if n == 0.0 {
        return Err(Error::arg("empty images"));
    }
    Ok(match mode {
        PsnrMode::Joint => psnr_from_mse(sq.iter().sum::<u64>() as f64 / (3.0 * n)),
        PsnrMode::PerChannel => sq.iter().map(|&s| psnr_from_mse(s as f64 / n)).sum::<f64>() / 3.0,
    })
}

/// PSNR over the pixels flagged in `valid` (row-major).
pub fn psnr_masked(a: &RgbImage, b: &RgbImage, valid: &[bool]) -> Result<f64> {
    check_dims(a, b)?;
    if valid.len() != (a.width() * a.height()) as usize {
        return Err(Error::arg("validity mask does not match image size"));
    }
    let mut sq = 0u64;
    let mut count = 0u64;
    for ((pa, pb), _) in a.pixels().zip(b.pixels()).zip(valid).filter(|(_, &v)| v) {
        for k in 0..3 {
            let d = pa.0[k] as i64 - pb.0[k] as i64;
            sq += (d * d) as u64;
        }
        count += 3;
    }
    if count == 0 {
        return Err(Error::arg("no valid pixels"));
    }
    Ok(psnr_from_mse(sq as f64 / count as f64))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// BT.601 luma.
pub fn luminance(img: &RgbImage) -> Vec<f64> {
    img.pixels()
        .map(|p| 0.299 * p.0[0] as f64 + 0.587 * p.0[1] as f64 + 0.114 * p.0[2] as f64)
        .collect()
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let taps: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Separable "valid" filtering: output is `(w − k + 1) × (h − k + 1)`.
fn filter_valid(src: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let ow = w - k + 1;
    let oh = h - k + 1;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = taps.iter().zip(&row[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * tmp[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean SSIM over luma with an 11×11 Gaussian window (σ = 1.5).
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_dims(a, b)?;
    let (w, h) = (a.width() as usize, a.height() as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::arg(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    let x = luminance(a);
    let y = luminance(b);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let mu_x = filter_valid(&x, w, h, &taps);
    let mu_y = filter_valid(&y, w, h, &taps);
    let e_xx = filter_valid(&xx, w, h, &taps);
    let e_yy = filter_valid(&yy, w, h, &taps);
    let e_xy = filter_valid(&xy, w, h, &taps);
    let c1 = (SSIM_K1 * MAX_VALUE).powi(2);
    let c2 = (SSIM_K2 * MAX_VALUE).powi(2);
    let total: f64 = (0..mu_x.len())
        .map(|i| ssim_index(mu_x[i], mu_y[i], e_xx[i], e_yy[i], e_xy[i], c1, c2))
        .sum();
    Ok(total / mu_x.len() as f64)
}

fn ssim_index(mx: f64, my: f64, exx: f64, eyy: f64, exy: f64, c1: f64, c2: f64) -> f64 {
    let vx = exx - mx * mx;
    let vy = eyy - my * my;
    let cov = exy - mx * my;
    ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// Camera-center error of an aligned trajectory against ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentError {
    pub frame_errors: Vec<f64>,
    pub rmse: f64,
    pub avg_step: f64,
    pub avg_ratio: f64,
}

impl AlignmentError {
    /// Within half the mean spacing between successive frames.
    pub fn under_half_frame(&self) -> bool {
        self.avg_ratio < 0.5
    }
}

pub fn alignment_error(est: &Trajectory, gt: &Trajectory) -> Result<AlignmentError> {
    alignment_error_against(est, gt, gt)
}

/// Like [`alignment_error`], with the frame spacing taken from `reference`
/// (the block the others are registered to).
pub fn alignment_error_against(est: &Trajectory, gt: &Trajectory, reference: &Trajectory) -> Result<AlignmentError> {
    if est.frame_ids() != gt.frame_ids() {
        return Err(Error::arg("estimated and ground-truth trajectories cover different frames"));
    }
    if gt.is_empty() {
        return Err(Error::arg("empty trajectories"));
    }
    let ce = est.centers();
    let cg = gt.centers();
    let frame_errors: Vec<f64> = ce.iter().zip(&cg).map(|(a, b)| (a - b).norm()).collect();
    let rmse = (frame_errors.iter().map(|e| e * e).sum::<f64>() / frame_errors.len() as f64).sqrt();
    let avg_step = if reference.len() >= 2 { reference.mean_step_length()? } else { 0.0 };
    let avg_ratio = if avg_step > 0.0 { rmse / avg_step } else { f64::INFINITY };
    Ok(AlignmentError {
        frame_errors,
        rmse,
        avg_step,
        avg_ratio,
    })
}
