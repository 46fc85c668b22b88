//! Equirectangular 360° frames to perspective cube faces.
//!
//! A direction on the unit sphere is `(sin θ cos φ, sin θ sin φ, cos θ)`
//! with the polar angle θ running down the image rows and the azimuth φ
//! across the columns. Side faces are 90° views on the planes at distance 1
//! from the origin, one per yaw. Besides the four axis-aligned faces a
//! second set is yawed by π/4 so that neighbouring views overlap.
//!
//! Face image axes: `u` grows to the viewer's right, `v` grows downward.
//! For a face with yaw ψ the local ray through pixel `(u, v)` is
//! `(1, −a, −b)` with `a, b ∈ (−1, 1)` the normalized pixel center,
//! rotated about +z by ψ.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};

use image::{Rgb, RgbImage};
use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_FACE_SIZE: u32 = 768;
pub const DEFAULT_EQUIRECT_WIDTH: u32 = 5760;
pub const DEFAULT_EQUIRECT_HEIGHT: u32 = 2880;

/// Spherical frame with `width == 2 * height`.
#[derive(Debug, Clone, PartialEq)]
pub struct EquirectFrame {
    image: RgbImage,
}

impl EquirectFrame {
    pub fn new(image: RgbImage) -> Result<Self> {
        let (w, h) = image.dimensions();
        if h == 0 || w != 2 * h {
            return Err(Error::arg(format!(
                "equirectangular frame must be 2:1, got {w}x{h}"
            )));
        }
        Ok(Self { image })
    }

    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }

    pub fn image(&self) -> &RgbImage {
        &self.image
    }

    pub fn into_image(self) -> RgbImage {
        self.image
    }

    /// Bilinear sample at continuous pixel coordinates `(x, y)` where pixel
    /// `(i, j)` has its center at `(i, j)`. Columns wrap, rows clamp.
    pub fn sample(&self, x: f64, y: f64) -> [f64; 3] {
        let x0 = x.floor();
        sample_split(&self.image, x0 as i64, x - x0, y)
    }

    /// Bilinear sample at spherical angles.
    pub fn sample_angles(&self, theta: f64, phi: f64) -> [f64; 3] {
        let (x, y) = self.angles_to_pixel(theta, phi);
        self.sample(x, y)
    }

    pub fn angles_to_pixel(&self, theta: f64, phi: f64) -> (f64, f64) {
        let w = self.width() as f64;
        let h = self.height() as f64;
        (phi / TAU * w - 0.5, theta / PI * h - 0.5)
    }

    /// Angles (θ, φ) at the center of pixel `(col, row)`.
    pub fn pixel_to_angles(&self, col: u32, row: u32) -> (f64, f64) {
        let theta = (row as f64 + 0.5) / self.height() as f64 * PI;
        let phi = (col as f64 + 0.5) / self.width() as f64 * TAU;
        (theta, phi)
    }

    /// Rotates the frame about +z by whole columns: output column `c` shows
    /// input column `c + shift`.
    pub fn roll_columns(&self, shift: i64) -> EquirectFrame {
        let (w, h) = self.image.dimensions();
        let img = RgbImage::from_fn(w, h, |c, r| {
            let src = (c as i64 + shift).rem_euclid(w as i64) as u32;
            *self.image.get_pixel(src, r)
        });
        EquirectFrame { image: img }
    }
}

/// Bilinear lookup with an integer column base and a fractional offset.
/// Keeping the integer part separate lets whole-column yaw shifts reproduce
/// exactly the same interpolation weights.
fn sample_split(img: &RgbImage, col: i64, fx: f64, y: f64) -> [f64; 3] {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let y0 = y.floor();
    let fy = y - y0;
    let r0 = y0 as i64;
    let r1 = (r0 + 1).min(h - 1);
    let c0 = col.rem_euclid(w);
    let c1 = (col + 1).rem_euclid(w);
    let px = |c: i64, r: i64| img.get_pixel(c as u32, r as u32).0;
    let (p00, p10, p01, p11) = (px(c0, r0), px(c1, r0), px(c0, r1), px(c1, r1));
    let mut out = [0.0; 3];
    for k in 0..3 {
        let top = p00[k] as f64 * (1.0 - fx) + p10[k] as f64 * fx;
        let bottom = p01[k] as f64 * (1.0 - fx) + p11[k] as f64 * fx;
        out[k] = top * (1.0 - fy) + bottom * fy;
    }
    out
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaceLabel {
    Front,
    Left,
    Back,
    Right,
    Front45,
    Left45,
    Back45,
    Right45,
    Top,
    Bottom,
}

impl FaceLabel {
    /// The eight side faces in output order.
    pub const SIDES: [FaceLabel; 8] = [
        FaceLabel::Front,
        FaceLabel::Left,
        FaceLabel::Back,
        FaceLabel::Right,
        FaceLabel::Front45,
        FaceLabel::Left45,
        FaceLabel::Back45,
        FaceLabel::Right45,
    ];

    pub const AXIS_ALIGNED: [FaceLabel; 4] =
        [FaceLabel::Front, FaceLabel::Left, FaceLabel::Back, FaceLabel::Right];

    pub fn name(self) -> &'static str {
        match self {
            FaceLabel::Front => "front",
            FaceLabel::Left => "left",
            FaceLabel::Back => "back",
            FaceLabel::Right => "right",
            FaceLabel::Front45 => "front45",
            FaceLabel::Left45 => "left45",
            FaceLabel::Back45 => "back45",
            FaceLabel::Right45 => "right45",
            FaceLabel::Top => "top",
            FaceLabel::Bottom => "bottom",
        }
    }

    pub fn from_name(name: &str) -> Option<FaceLabel> {
        [Self::SIDES.as_slice(), &[FaceLabel::Top, FaceLabel::Bottom]]
            .concat()
            .into_iter()
            .find(|f| f.name() == name)
    }

    /// Yaw about +z in radians. Pole faces report 0.
    pub fn yaw(self) -> f64 {
        match self {
            FaceLabel::Front | FaceLabel::Top | FaceLabel::Bottom => 0.0,
            FaceLabel::Left => FRAC_PI_2,
            FaceLabel::Back => PI,
            FaceLabel::Right => 3.0 * FRAC_PI_2,
            FaceLabel::Front45 => FRAC_PI_4,
            FaceLabel::Left45 => FRAC_PI_2 + FRAC_PI_4,
            FaceLabel::Back45 => PI + FRAC_PI_4,
            FaceLabel::Right45 => 3.0 * FRAC_PI_2 + FRAC_PI_4,
        }
    }

    /// Yaw expressed in eighths of a turn.
    fn yaw_eighths(self) -> i64 {
        match self {
            FaceLabel::Front | FaceLabel::Top | FaceLabel::Bottom => 0,
            FaceLabel::Front45 => 1,
            FaceLabel::Left => 2,
            FaceLabel::Left45 => 3,
            FaceLabel::Back => 4,
            FaceLabel::Back45 => 5,
            FaceLabel::Right => 6,
            FaceLabel::Right45 => 7,
        }
    }

    fn is_pole(self) -> bool {
        matches!(self, FaceLabel::Top | FaceLabel::Bottom)
    }
}

/// Normalized face-plane coordinates of pixel `(u, v)` center, in (−1, 1).
pub fn face_plane_coords(u: u32, v: u32, face_size: u32) -> (f64, f64) {
    let f = face_size as f64;
    (
        2.0 * (u as f64 + 0.5) / f - 1.0,
        2.0 * (v as f64 + 0.5) / f - 1.0,
    )
}

/// Unnormalized world-frame ray through pixel `(u, v)` of `face`.
pub fn face_ray(face: FaceLabel, u: u32, v: u32, face_size: u32) -> Vector3<f64> {
    let (a, b) = face_plane_coords(u, v, face_size);
    face_ray_at(face, a, b)
}

/// Ray through face-plane coordinates `(a, b)`, right and down in [−1, 1].
pub fn face_ray_at(face: FaceLabel, a: f64, b: f64) -> Vector3<f64> {
    match face {
        FaceLabel::Top => Vector3::new(b, -a, 1.0),
        FaceLabel::Bottom => Vector3::new(-b, -a, -1.0),
        _ => {
            let (s, c) = face.yaw().sin_cos();
            Vector3::new(c + a * s, s - a * c, -b)
        }
    }
}

/// Polar and azimuth angles of a direction, φ in [0, 2π).
pub fn direction_to_angles(d: &Vector3<f64>) -> (f64, f64) {
    let theta = (d.z / d.norm()).clamp(-1.0, 1.0).acos();
    let phi = d.y.atan2(d.x).rem_euclid(TAU);
    (theta, phi)
}

/// Unit direction for spherical angles.
pub fn angles_to_direction(theta: f64, phi: f64) -> Vector3<f64> {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Vector3::new(st * cp, st * sp, ct)
}

#[derive(Debug, Clone)]
pub struct CubeFace {
    pub label: FaceLabel,
    pub yaw: f64,
    pub image: RgbImage,
}

/// Eight side faces (optionally plus top and bottom) of one frame.
#[derive(Debug, Clone)]
pub struct CubemapSet {
    face_size: u32,
    faces: Vec<CubeFace>,
}

impl CubemapSet {
    pub fn from_faces(faces: Vec<CubeFace>) -> Result<Self> {
        let face_size = faces
            .first()
            .map(|f| f.image.width())
            .ok_or_else(|| Error::arg("cubemap needs at least one face"))?;
        for f in &faces {
            if f.image.dimensions() != (face_size, face_size) {
                return Err(Error::arg(format!(
                    "face {} is {:?}, expected {face_size}x{face_size}",
                    f.label.name(),
                    f.image.dimensions()
                )));
            }
        }
        Ok(Self { face_size, faces })
    }

    pub fn face_size(&self) -> u32 {
        self.face_size
    }

    pub fn faces(&self) -> &[CubeFace] {
        &self.faces
    }

    pub fn face(&self, label: FaceLabel) -> Option<&CubeFace> {
        self.faces.iter().find(|f| f.label == label)
    }

    /// Side faces only, in [`FaceLabel::SIDES`] order.
    pub fn side_faces(&self) -> Vec<&CubeFace> {
        FaceLabel::SIDES.iter().filter_map(|&l| self.face(l)).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ProjectionOptions {
    pub face_size: u32,
    pub with_poles: bool,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        Self {
            face_size: DEFAULT_FACE_SIZE,
            with_poles: false,
        }
    }
}

fn render_face(frame: &EquirectFrame, label: FaceLabel, face_size: u32) -> RgbImage {
    let w = frame.width() as f64;
    let h = frame.height() as f64;
    // Whole-column yaw offset when the width is divisible by 8.
    let shift_cols = (frame.width() % 8 == 0).then(|| label.yaw_eighths() * frame.width() as i64 / 8);
    let n = face_size as usize;
    let mut buf = vec![0u8; n * n * 3];
    buf.par_chunks_mut(n * 3).enumerate().for_each(|(v, row)| {
        for u in 0..face_size {
            let px = if label.is_pole() {
                let (theta, phi) = direction_to_angles(&face_ray(label, u, v as u32, face_size));
                frame.sample_angles(theta, phi)
            } else {
                // Unrotated ray; the yaw only shifts the azimuth.
                let (a, b) = face_plane_coords(u, v as u32, face_size);
                let local = Vector3::new(1.0, -a, -b);
                let theta = (local.z / local.norm()).acos();
                let phi_local = local.y.atan2(local.x);
                let y = theta / PI * h - 0.5;
                match shift_cols {
                    Some(shift) => {
                        let x = phi_local / TAU * w - 0.5;
                        let x0 = x.floor();
                        sample_split(frame.image(), x0 as i64 + shift, x - x0, y)
                    }
                    None => {
                        let x = (phi_local + label.yaw()) / TAU * w - 0.5;
                        frame.sample(x, y)
                    }
                }
            };
            let o = u as usize * 3;
            row[o] = to_u8(px[0]);
            row[o + 1] = to_u8(px[1]);
            row[o + 2] = to_u8(px[2]);
        }
    });
    RgbImage::from_raw(face_size, face_size, buf).expect("buffer sized for face")
}

/// Projects one face of the frame.
pub fn project_face(frame: &EquirectFrame, label: FaceLabel, face_size: u32) -> Result<RgbImage> {
    if face_size < 2 {
        return Err(Error::arg(format!("face size must be at least 2, got {face_size}")));
    }
    Ok(render_face(frame, label, face_size))
}

/// Projects the eight side faces (and the poles when requested).
pub fn equirect_to_cubemap(frame: &EquirectFrame, opts: ProjectionOptions) -> Result<CubemapSet> {
    if opts.face_size < 2 {
        return Err(Error::arg(format!(
            "face size must be at least 2, got {}",
            opts.face_size
        )));
    }
    let mut labels = FaceLabel::SIDES.to_vec();
    if opts.with_poles {
        labels.extend([FaceLabel::Top, FaceLabel::Bottom]);
    }
    let faces = labels
        .par_iter()
        .map(|&label| CubeFace {
            label,
            yaw: label.yaw(),
            image: render_face(frame, label, opts.face_size),
        })
        .collect();
    CubemapSet::from_faces(faces)
}

/// Side-band reconstruction produced by [`cubemap_to_equirect`].
#[derive(Debug, Clone)]
pub struct BandReconstruction {
    pub frame: EquirectFrame,
    /// Row-major validity flags, one per pixel.
    pub valid: Vec<bool>,
}

impl BandReconstruction {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Rebuilds the side band `|θ − π/2| ≤ π/4` from the axis-aligned faces.
///
/// Each pixel samples the face whose yaw sector contains φ. Band pixels
/// whose ray leaves that face's square (the band corners belong to the
/// pole faces) are flagged invalid together with everything outside the
/// band.
pub fn cubemap_to_equirect(cube: &CubemapSet, width: u32, height: u32) -> Result<BandReconstruction> {
    if height == 0 || width != 2 * height {
        return Err(Error::arg(format!("output must be 2:1, got {width}x{height}")));
    }
    let faces: Vec<&CubeFace> = FaceLabel::AXIS_ALIGNED
        .iter()
        .map(|&l| {
            cube.face(l)
                .ok_or_else(|| Error::arg(format!("cubemap lacks face {}", l.name())))
        })
        .collect::<Result<_>>()?;
    let fsize = cube.face_size() as f64;
    let w = width as usize;
    let rows: Vec<(Vec<u8>, Vec<bool>)> = (0..height)
        .into_par_iter()
        .map(|row| {
            let mut pixels = vec![0u8; w * 3];
            let mut valid = vec![false; w];
            let theta = (row as f64 + 0.5) / height as f64 * PI;
            if (theta - FRAC_PI_2).abs() > FRAC_PI_4 {
                return (pixels, valid);
            }
            for col in 0..width {
                let phi = (col as f64 + 0.5) / width as f64 * TAU;
                let sector = ((phi / FRAC_PI_2).round() as usize) % 4;
                let face = faces[sector];
                let d = angles_to_direction(theta, phi);
                let (s, c) = face.yaw.sin_cos();
                // Rotate by −yaw into the face frame.
                let lx = c * d.x + s * d.y;
                let ly = -s * d.x + c * d.y;
                let a = -ly / lx;
                let b = -d.z / lx;
                let x = (a + 1.0) * fsize / 2.0 - 0.5;
                let y = (b + 1.0) * fsize / 2.0 - 0.5;
                if !(-0.5..=fsize - 0.5).contains(&x) || !(-0.5..=fsize - 0.5).contains(&y) {
                    continue;
                }
                let px = bilinear_clamped(&face.image, x, y);
                let o = col as usize * 3;
                for k in 0..3 {
                    pixels[o + k] = to_u8(px[k]);
                }
                valid[col as usize] = true;
            }
            (pixels, valid)
        })
        .collect();
    let mut data = Vec::with_capacity(w * height as usize * 3);
    let mut valid = Vec::with_capacity(w * height as usize);
    for (p, v) in rows {
        data.extend(p);
        valid.extend(v);
    }
    let image = RgbImage::from_raw(width, height, data).expect("buffer sized for frame");
    Ok(BandReconstruction {
        frame: EquirectFrame { image },
        valid,
    })
}

fn bilinear_clamped(img: &RgbImage, x: f64, y: f64) -> [f64; 3] {
    let (w, h) = img.dimensions();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (c0, r0) = (x0 as u32, y0 as u32);
    let (c1, r1) = ((c0 + 1).min(w - 1), (r0 + 1).min(h - 1));
    let p = |c, r| img.get_pixel(c, r).0;
    let (p00, p10, p01, p11) = (p(c0, r0), p(c1, r0), p(c0, r1), p(c1, r1));
    let mut out = [0.0; 3];
    for k in 0..3 {
        let top = p00[k] as f64 * (1.0 - fx) + p10[k] as f64 * fx;
        let bottom = p01[k] as f64 * (1.0 - fx) + p11[k] as f64 * fx;
        out[k] = top * (1.0 - fy) + bottom * fy;
    }
    out
}

/// Constant-color frame, mostly for tests and fixtures.
pub fn constant_frame(width: u32, height: u32, color: [u8; 3]) -> Result<EquirectFrame> {
    EquirectFrame::new(RgbImage::from_pixel(width, height, Rgb(color)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_frame(w: u32, h: u32) -> EquirectFrame {
        EquirectFrame::new(RgbImage::from_fn(w, h, |c, r| {
            let phi = (c as f64 + 0.5) / w as f64 * TAU;
            let theta = (r as f64 + 0.5) / h as f64 * PI;
            Rgb([
                (128.0 + 100.0 * phi.sin() * theta.sin()) as u8,
                (128.0 + 90.0 * (2.0 * phi).cos()) as u8,
                (128.0 + 80.0 * theta.cos()) as u8,
            ])
        }))
        .unwrap()
    }

    #[test]
    fn rejects_bad_frames_and_sizes() {
        assert!(EquirectFrame::new(RgbImage::new(30, 20)).is_err());
        let frame = constant_frame(16, 8, [1, 2, 3]).unwrap();
        let opts = ProjectionOptions { face_size: 1, with_poles: false };
        assert!(matches!(equirect_to_cubemap(&frame, opts), Err(Error::Argument(_))));
    }

    #[test]
    fn constant_frame_gives_constant_faces() {
        let frame = constant_frame(64, 32, [90, 90, 90]).unwrap();
        let cube = equirect_to_cubemap(&frame, ProjectionOptions { face_size: 12, with_poles: true }).unwrap();
        assert_eq!(cube.faces().len(), 10);
        for f in cube.faces() {
            assert!(f.image.pixels().all(|p| p.0 == [90, 90, 90]), "face {}", f.label.name());
        }
    }

    #[test]
    fn face_center_sees_its_yaw_on_the_equator() {
        for label in FaceLabel::SIDES {
            let mut img = RgbImage::from_pixel(64, 32, Rgb([0, 0, 0]));
            // Paint a patch around (θ = π/2, φ = yaw).
            let center_col = (label.yaw() / TAU * 64.0).round() as i64;
            for dc in -3..3 {
                for r in 13..19 {
                    let c = (center_col + dc).rem_euclid(64) as u32;
                    img.put_pixel(c, r, Rgb([250, 10, 20]));
                }
            }
            let frame = EquirectFrame::new(img).unwrap();
            let face = project_face(&frame, label, 16).unwrap();
            for (u, v) in [(7, 7), (7, 8), (8, 7), (8, 8)] {
                assert_eq!(face.get_pixel(u, v).0, [250, 10, 20], "{}", label.name());
            }
        }
    }

    #[test]
    fn rays_have_unit_angles() {
        for label in FaceLabel::SIDES {
            for (u, v) in [(0, 0), (5, 9), (15, 15)] {
                let d = face_ray(label, u, v, 16);
                let (theta, phi) = direction_to_angles(&d);
                let unit = angles_to_direction(theta, phi);
                assert!((unit.norm() - 1.0).abs() < 1e-12);
                assert!((unit - d.normalize()).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn column_roll_equals_rotated_faces() {
        let frame = gradient_frame(96, 48);
        let rolled = frame.roll_columns(96 / 8);
        for (axis, rotated) in FaceLabel::AXIS_ALIGNED.iter().zip(&FaceLabel::SIDES[4..]) {
            let a = project_face(&rolled, *axis, 20).unwrap();
            let b = project_face(&frame, *rotated, 20).unwrap();
            assert_eq!(a, b, "{} vs {}", axis.name(), rotated.name());
        }
    }

    #[test]
    fn seam_is_continuous() {
        let frame = gradient_frame(400, 200);
        let row = 100;
        let first = frame.image().get_pixel(0, row).0;
        let last = frame.image().get_pixel(399, row).0;
        // Reconstruct through the cube and compare the two sides of φ = 0.
        let cube = equirect_to_cubemap(&frame, ProjectionOptions { face_size: 64, with_poles: false }).unwrap();
        let rec = cubemap_to_equirect(&cube, 400, 200).unwrap();
        let a = rec.frame.image().get_pixel(0, row).0;
        let b = rec.frame.image().get_pixel(399, row).0;
        for k in 0..3 {
            assert!((a[k] as i32 - b[k] as i32).abs() <= (first[k] as i32 - last[k] as i32).abs() + 1);
        }
    }

    #[test]
    fn round_trip_of_constant_is_constant_band() {
        let frame = constant_frame(128, 64, [33, 66, 99]).unwrap();
        let cube = equirect_to_cubemap(&frame, ProjectionOptions { face_size: 32, with_poles: false }).unwrap();
        let rec = cubemap_to_equirect(&cube, 128, 64).unwrap();
        assert!(rec.valid_count() > 0);
        for (i, p) in rec.frame.image().pixels().enumerate() {
            if rec.valid[i] {
                assert_eq!(p.0, [33, 66, 99]);
            }
            let row = i / 128;
            let theta = (row as f64 + 0.5) / 64.0 * PI;
            if (theta - FRAC_PI_2).abs() > FRAC_PI_4 {
                assert!(!rec.valid[i]);
            }
        }
    }

    #[test]
    fn output_is_deterministic() {
        let frame = gradient_frame(128, 64);
        let opts = ProjectionOptions { face_size: 40, with_poles: true };
        let a = equirect_to_cubemap(&frame, opts).unwrap();
        let b = equirect_to_cubemap(&frame, opts).unwrap();
        for (fa, fb) in a.faces().iter().zip(b.faces()) {
            assert_eq!(fa.image, fb.image);
        }
    }

    #[test]
    fn face_names_round_trip() {
        for l in FaceLabel::SIDES {
            assert_eq!(FaceLabel::from_name(l.name()), Some(l));
        }
        assert_eq!(FaceLabel::from_name("top"), Some(FaceLabel::Top));
        assert_eq!(FaceLabel::from_name("nope"), None);
    }
}
