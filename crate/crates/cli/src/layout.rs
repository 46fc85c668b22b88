//! File layout shared by the stages.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use blockscape::projection::FaceLabel;
use blockscape::scene_io::frame_index_from_name;

pub fn block_dir(id: u32) -> String {
    format!("block_{id:02}")
}

pub fn flight_dir(id: u32) -> String {
    format!("flight_{id:02}")
}

pub fn poses_file(root: &Path, block: u32) -> PathBuf {
    root.join(block_dir(block)).join("images.txt")
}

pub fn cameras_file(root: &Path, block: u32) -> PathBuf {
    root.join(block_dir(block)).join("cameras.txt")
}

pub fn cloud_file(root: &Path, block: u32) -> PathBuf {
    root.join(format!("{}.ply", block_dir(block)))
}

pub fn sim3_file(root: &Path, block: u32) -> PathBuf {
    root.join(block_dir(block)).join("sim3.json")
}

pub fn manifest_file(root: &Path, block: u32) -> PathBuf {
    root.join(format!("{}.json", block_dir(block)))
}

/// `<frame>_<face>.png`
pub fn face_file_name(frame_stem: &str, face: FaceLabel) -> String {
    format!("{frame_stem}_{}.png", face.name())
}

/// Sorted PNG files directly inside `dir`.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).with_context(|| format!("cannot read directory {}", dir.display()))?;
    let mut out = Vec::new();
    for e in entries {
        let p = e?.path();
        if p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Splits `<frame>_<face>` into the frame stem and face label.
pub fn split_face_stem(stem: &str) -> Option<(&str, FaceLabel)> {
    let (frame, face) = stem.rsplit_once('_')?;
    Some((frame, FaceLabel::from_name(face)?))
}

/// Groups `<frame>_<face>.png` files of a directory by frame number.
pub fn face_groups(dir: &Path) -> Result<Vec<(u32, String)>> {
    let mut frames: Vec<(u32, String)> = Vec::new();
    for p in list_pngs(dir)? {
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let Some((frame, _)) = split_face_stem(stem) else {
            continue;
        };
        let Some(id) = frame_index_from_name(frame) else {
            continue;
        };
        if !frames.iter().any(|(i, _)| *i == id) {
            frames.push((id, frame.to_string()));
        }
    }
    frames.sort();
    if frames.is_empty() {
        bail!("no <frame>_<face>.png images in {}", dir.display());
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names() {
        assert_eq!(block_dir(3), "block_03");
        assert_eq!(face_file_name("frame_000001", FaceLabel::SIDES[0]), format!("frame_000001_{}.png", FaceLabel::SIDES[0].name()));
        let stem = format!("f12_{}", FaceLabel::SIDES[2].name());
        assert_eq!(split_face_stem(&stem), Some(("f12", FaceLabel::SIDES[2])));
        assert_eq!(split_face_stem("nounderscore"), None);
    }
}
