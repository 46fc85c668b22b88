//! COLMAP-compatible sparse model text files (`images.txt`, `cameras.txt`).
//!
//! `images.txt` stores two lines per image:
//!
//! ```text
//! IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME
//! POINTS2D[] as (X, Y, POINT3D_ID)
//! ```
//!
//! Only the first line is used. Frame indices come from the numeric suffix
//! of `NAME` (`frame_000123.png` → 123).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use super::pose::CameraPose;
use crate::error::{Error, Result};

/// Last run of ASCII digits in the file stem of `name`.
pub fn frame_index_from_name(name: &str) -> Option<u32> {
    let file = name.rsplit(['/', '\\']).next().unwrap_or(name);
    let stem = match file.rfind('.') {
        Some(dot) if dot > 0 => &file[..dot],
        _ => file,
    };
    let bytes = stem.as_bytes();
    let end = bytes.iter().rposition(u8::is_ascii_digit)? + 1;
    let start = bytes[..end]
        .iter()
        .rposition(|b| !b.is_ascii_digit())
        .map_or(0, |i| i + 1);
    stem[start..end].parse().ok()
}

fn field<T: std::str::FromStr>(tokens: &[&str], i: usize, what: &str, line: usize) -> Result<T> {
    tokens
        .get(i)
        .ok_or_else(|| Error::parse(line, format!("missing {what}")))?
        .parse()
        .map_err(|_| Error::parse(line, format!("invalid {what}: {:?}", tokens[i])))
}

/// Parses `images.txt` into poses ordered by frame index.
pub fn parse_sfm_text<R: BufRead>(reader: R) -> Result<Vec<CameraPose>> {
    let mut poses = Vec::new();
    let mut lines = reader
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !matches!(l, Ok(s) if s.trim_start().starts_with('#')));

    while let Some((line_no, line)) = lines.next() {
        let line = line?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() < 10 {
            return Err(Error::parse(
                line_no,
                format!("expected 10 fields in image record, found {}", tokens.len()),
            ));
        }
        let _image_id: u64 = field(&tokens, 0, "image id", line_no)?;
        let mut q = [0.0f64; 4];
        for (k, v) in q.iter_mut().enumerate() {
            *v = field(&tokens, 1 + k, "quaternion component", line_no)?;
        }
        let mut t = [0.0f64; 3];
        for (k, v) in t.iter_mut().enumerate() {
            *v = field(&tokens, 5 + k, "translation component", line_no)?;
        }
        let _camera_id: u64 = field(&tokens, 8, "camera id", line_no)?;
        let name = tokens[9..].join(" ");
        let frame_id = frame_index_from_name(&name)
            .ok_or_else(|| Error::parse(line_no, format!("no frame number in image name {name:?}")))?;

        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        if !(quat.norm() >= 1e-12) {
            return Err(Error::data(format!(
                "line {line_no}: quaternion for {name:?} cannot be normalized"
            )));
        }
        if !t.iter().all(|v| v.is_finite()) {
            return Err(Error::data(format!("line {line_no}: non-finite translation")));
        }
        poses.push(CameraPose::new(
            frame_id,
            UnitQuaternion::from_quaternion(quat),
            Vector3::from(t),
        ));
        // The 2D observation line belongs to this record, whatever it holds.
        if let Some((_, obs)) = lines.next() {
            obs?;
        }
    }
    poses.sort_by_key(|p| p.frame_id);
    Ok(poses)
}

pub fn read_sfm_text(path: &Path) -> Result<Vec<CameraPose>> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    parse_sfm_text(BufReader::new(file))
}

/// Writes poses as `images.txt`, naming images `frame_NNNNNN.png`.
pub fn write_sfm_text<W: Write>(writer: W, poses: &[CameraPose]) -> Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "# Image list with two lines of data per image:")?;
    writeln!(w, "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME")?;
    writeln!(w, "#   POINTS2D[] as (X, Y, POINT3D_ID)")?;
    writeln!(w, "# Number of images: {}", poses.len())?;
    for (i, p) in poses.iter().enumerate() {
        let q = p.q.quaternion();
        writeln!(
            w,
            "{} {} {} {} {} {} {} {} 1 frame_{:06}.png",
            i + 1,
            q.w,
            q.i,
            q.j,
            q.k,
            p.t.x,
            p.t.y,
            p.t.z,
            p.frame_id
        )?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// One entry of `cameras.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraIntrinsics {
    pub camera_id: u32,
    pub model: String,
    pub width: u32,
    pub height: u32,
    pub params: Vec<f64>,
}

impl CameraIntrinsics {
    /// Pinhole camera of a 90° cube face.
    pub fn cube_face(camera_id: u32, face_size: u32) -> Self {
        let f = face_size as f64 / 2.0;
        Self {
            camera_id,
            model: "PINHOLE".into(),
            width: face_size,
            height: face_size,
            params: vec![f, f, f, f],
        }
    }
}

pub fn parse_cameras_text<R: BufRead>(reader: R) -> Result<Vec<CameraIntrinsics>> {
    let mut cams = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        if tokens.len() < 4 {
            return Err(Error::parse(line_no, "camera record needs at least 4 fields"));
        }
        let params = (4..tokens.len())
            .map(|k| field(&tokens, k, "camera parameter", line_no))
            .collect::<Result<Vec<f64>>>()?;
        cams.push(CameraIntrinsics {
            camera_id: field(&tokens, 0, "camera id", line_no)?,
            model: tokens[1].to_string(),
            width: field(&tokens, 2, "width", line_no)?,
            height: field(&tokens, 3, "height", line_no)?,
            params,
        });
    }
    Ok(cams)
}

pub fn write_cameras_text<W: Write>(writer: W, cams: &[CameraIntrinsics]) -> Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "# Camera list with one line of data per camera:")?;
    writeln!(w, "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]")?;
    writeln!(w, "# Number of cameras: {}", cams.len())?;
    for c in cams {
        write!(w, "{} {} {} {}", c.camera_id, c.model, c.width, c.height)?;
        for p in &c.params {
            write!(w, " {p}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
