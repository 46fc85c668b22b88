//! One function per pipeline stage. Each reads its inputs from disk,
//! writes its artifacts and returns a serializable report.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use blockscape::align::{
    align_blocks, chain_transforms, overlap_from_manifests, overlap_from_similarity, AlignOptions, AlignmentReport,
    BlockData, IcpOptions, OverlapSpec,
};
use blockscape::blocksel::{select_block, BlockPath, BlockSelection, DistanceOptions};
use blockscape::features::{most_similar_frame, FrameFeatures, SiftOptions, SimilarityOptions, SimilarityResult};
use blockscape::maskgen::{compose_mask, fill_masked, BinaryMask, Ellipse};
use blockscape::metrics::{alignment_error_against, psnr, ssim, AlignmentError};
use blockscape::partition::{plan_msnb, PartitionPlan};
use blockscape::projection::{equirect_to_cubemap, CubeFace, CubemapSet, EquirectFrame, FaceLabel, ProjectionOptions};
use blockscape::scene_io::{
    read_json, read_ply, read_sfm_text, write_cameras_text, write_json, write_ply, write_sfm_text, BlockManifest,
    CameraIntrinsics, PlyWriteOptions, Sim3Transform, Trajectory,
};
use blockscape::synth::{gen_scene, SceneOptions, SyntheticScene, TrajectoryKind};
use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::layout::*;

fn create_file(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
    }
    let f = std::fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(std::io::BufWriter::new(f))
}

fn save_png(img: &image::RgbImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    img.save(path).with_context(|| format!("cannot write {}", path.display()))
}

fn load_rgb(path: &Path) -> Result<image::RgbImage> {
    Ok(image::open(path)
        .with_context(|| format!("cannot read image {}", path.display()))?
        .to_rgb8())
}

fn file_stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectReport {
    pub frames: usize,
    pub faces_per_frame: usize,
    pub face_size: u32,
}

/// Every equirect PNG in `input` becomes `<frame>_<face>.png` files in `out`.
pub fn project_dir(input: &Path, out: &Path, face_size: u32, with_poles: bool) -> Result<ProjectReport> {
    let frames = list_pngs(input)?;
    if frames.is_empty() {
        bail!("no PNG frames in {}", input.display());
    }
    let opts = ProjectionOptions { face_size, with_poles };
    frames.par_iter().try_for_each(|path| -> Result<()> {
        let frame = EquirectFrame::new(load_rgb(path)?).with_context(|| format!("frame {}", path.display()))?;
        let cube = equirect_to_cubemap(&frame, opts)?;
        let stem = file_stem(path);
        for face in cube.faces() {
            save_png(&face.image, &out.join(face_file_name(&stem, face.label)))?;
        }
        Ok(())
    })?;
    Ok(ProjectReport {
        frames: frames.len(),
        faces_per_frame: if with_poles { 10 } else { 8 },
        face_size,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskReport {
    pub masks: Vec<MaskSummary>,
    pub dilation_radius: u32,
    pub ellipses: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filled_images: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskSummary {
    pub name: String,
    pub masked_pixels: usize,
}

/// Composes per-face masks: union with the ellipses, then dilation.
/// Without a mask directory a single `mask.png` of `size` is produced.
pub fn mask_dir(
    masks: Option<&Path>,
    size: Option<(u32, u32)>,
    ellipses: &[Ellipse],
    radius: u32,
    out: &Path,
) -> Result<MaskReport> {
    let mut inputs: Vec<(String, BinaryMask)> = Vec::new();
    match (masks, size) {
        (Some(dir), _) => {
            for p in list_pngs(dir)? {
                let gray = image::open(&p)
                    .with_context(|| format!("cannot read mask {}", p.display()))?
                    .to_luma8();
                inputs.push((file_stem(&p), BinaryMask::from_gray(&gray)));
            }
            if inputs.is_empty() {
                bail!("no PNG masks in {}", dir.display());
            }
        }
        (None, Some((w, h))) => inputs.push(("mask".into(), BinaryMask::empty(w, h))),
        (None, None) => return Err(crate::config::ConfigError("mask needs --masks or --size".into()).into()),
    }
    let mut summaries = Vec::new();
    for (name, body) in inputs {
        let m = compose_mask(&body, ellipses, radius)?;
        let path = out.join(format!("{name}.png"));
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        m.to_gray().save(&path).with_context(|| format!("cannot write {}", path.display()))?;
        summaries.push(MaskSummary {
            name,
            masked_pixels: m.count(),
        });
    }
    Ok(MaskReport {
        masks: summaries,
        dilation_radius: radius,
        ellipses: ellipses.len(),
        filled_images: None,
    })
}

/// Fills masked pixels of `<frame>_<face>.png` images using the composed
/// `<face>.png` mask (or `mask.png` for every face).
pub fn fill_dir(images: &Path, masks: &Path, out: &Path) -> Result<usize> {
    let files = list_pngs(images)?;
    files.par_iter().try_for_each(|p| -> Result<()> {
        let stem = file_stem(p);
        let face_mask = split_face_stem(&stem).map(|(_, f)| masks.join(format!("{}.png", f.name())));
        let mask_path = match face_mask {
            Some(m) if m.exists() => m,
            _ => masks.join("mask.png"),
        };
        let gray = image::open(&mask_path)
            .with_context(|| format!("no mask for {} (looked for {})", p.display(), mask_path.display()))?
            .to_luma8();
        let filled = fill_masked(&load_rgb(p)?, &BinaryMask::from_gray(&gray))
            .with_context(|| format!("filling {}", p.display()))?;
        save_png(&filled, &out.join(p.file_name().unwrap()))
    })?;
    Ok(files.len())
}

/// Writes `blocks.json` and one manifest per block under `manifests/`.
pub fn partition_stage(frames: u32, flights: u32, blocks: u32, overlap: f64, out_dir: &Path) -> Result<PartitionPlan> {
    let plan = plan_msnb(frames, flights, blocks, overlap)?;
    write_plan(&plan, out_dir)?;
    Ok(plan)
}

pub fn write_plan(plan: &PartitionPlan, out_dir: &Path) -> Result<()> {
    write_json(&out_dir.join("blocks.json"), plan)?;
    for b in &plan.blocks {
        write_json(&manifest_file(&out_dir.join("manifests"), b.block_id), b)?;
    }
    Ok(())
}

pub fn load_plan(path: &Path) -> Result<PartitionPlan> {
    let plan: PartitionPlan = read_json(path).with_context(|| format!("reading block plan {}", path.display()))?;
    plan.validate()?;
    Ok(plan)
}

/// Side-face keypoints for a frame stored as `<frame>_<face>.png`.
fn frame_features(dir: &Path, stem: &str, frame_id: u32, sift: &SiftOptions) -> Result<FrameFeatures> {
    let faces = FaceLabel::SIDES
        .iter()
        .map(|&label| {
            Ok(CubeFace {
                label,
                yaw: label.yaw(),
                image: load_rgb(&dir.join(face_file_name(stem, label)))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let cube = CubemapSet::from_faces(faces)?;
    Ok(FrameFeatures::from_cubemap(frame_id, &cube, sift)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AlignMode {
    /// Manifest overlap within a flight, image similarity across flights.
    Auto,
    Manifest,
    Similarity,
}

/// Most similar frame to `query` among `candidates`, both given as face directories.
pub fn similarity_stage(
    query_dir: &Path,
    query_stem: &str,
    candidates_dir: &Path,
    frame_range: Option<(u32, u32)>,
    opts: &SimilarityOptions,
) -> Result<SimilarityResult> {
    let sift = SiftOptions::default();
    let qid = blockscape::scene_io::frame_index_from_name(query_stem).unwrap_or(0);
    let query = frame_features(query_dir, query_stem, qid, &sift)?;
    let groups: Vec<(u32, String)> = face_groups(candidates_dir)?
        .into_iter()
        .filter(|(id, _)| frame_range.is_none_or(|(a, b)| (a..=b).contains(id)))
        .collect();
    let candidates = groups
        .par_iter()
        .map(|(id, stem)| frame_features(candidates_dir, stem, *id, &sift))
        .collect::<Result<Vec<_>>>()?;
    Ok(most_similar_frame(&query, &candidates, opts)?)
}

fn stem_for(dir: &Path, frame: u32) -> Result<String> {
    face_groups(dir)?
        .into_iter()
        .find(|(id, _)| *id == frame)
        .map(|(_, s)| s)
        .with_context(|| format!("no faces for frame {frame} in {}", dir.display()))
}

pub fn load_block(poses: &Path, clouds: &Path, block_id: u32) -> Result<BlockData> {
    let pf = poses_file(poses, block_id);
    let cf = cloud_file(clouds, block_id);
    for f in [&pf, &cf] {
        if !f.exists() {
            bail!(blockscape::Error::Data(format!(
                "missing SfM output {} (align expects <poses>/block_XX/images.txt and <clouds>/block_XX.ply for every block)",
                f.display()
            )));
        }
    }
    let trajectory = Trajectory::new(block_id, read_sfm_text(&pf)?)?;
    let cloud = read_ply(&cf)?;
    Ok(BlockData { trajectory, cloud })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairReport {
    pub block1: u32,
    pub block2: u32,
    #[serde(flatten)]
    pub report: AlignmentReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockTransform {
    pub block_id: u32,
    /// Maps the block's coordinates into block 0's.
    pub transform: Sim3Transform,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignStageReport {
    pub pairs: Vec<PairReport>,
    pub transforms: Vec<BlockTransform>,
}

pub struct AlignInputs<'a> {
    pub plan: &'a PartitionPlan,
    pub poses: &'a Path,
    pub clouds: &'a Path,
    /// `flight_XX/<frame>_<face>.png` faces, needed across flights.
    pub faces: Option<&'a Path>,
    pub mode: AlignMode,
    pub icp: IcpOptions,
    pub temperature: f64,
}

fn pair_overlap(
    inputs: &AlignInputs,
    m1: &BlockManifest,
    m2: &BlockManifest,
    b1: &BlockData,
    b2: &BlockData,
) -> Result<OverlapSpec> {
    let same_flight = m1.flight_id == m2.flight_id;
    let use_manifest = match inputs.mode {
        AlignMode::Manifest => true,
        AlignMode::Similarity => false,
        AlignMode::Auto => same_flight,
    };
    if use_manifest {
        return Ok(overlap_from_manifests(m1, m2)?);
    }
    let faces = inputs.faces.with_context(|| {
        format!(
            "blocks {} and {} need similarity search: pass a faces directory with flight_XX/<frame>_<face>.png",
            m1.block_id, m2.block_id
        )
    })?;
    let dir1 = faces.join(flight_dir(m1.flight_id));
    let dir2 = faces.join(flight_dir(m2.flight_id));
    let opts = SimilarityOptions {
        temperature: inputs.temperature,
        ..Default::default()
    };
    let (first2, last1) = (
        b2.trajectory.first_frame().context("empty block")?,
        b1.trajectory.last_frame().context("empty block")?,
    );
    let r1 = m1.frame_range;
    let r2 = m2.frame_range;
    let start = similarity_stage(&dir2, &stem_for(&dir2, first2)?, &dir1, Some((r1.start, r1.end)), &opts)?;
    let end = similarity_stage(&dir1, &stem_for(&dir1, last1)?, &dir2, Some((r2.start, r2.end)), &opts)?;
    Ok(overlap_from_similarity(
        &b1.trajectory,
        &b2.trajectory,
        &start,
        &end,
        blockscape::align::DEFAULT_MIN_MATCHES,
    )?)
}

/// Registers every adjacent block pair, chains the results onto block 0
/// and writes `block_XX/sim3.json` for every block after the first.
pub fn align_stage(inputs: &AlignInputs, out: &Path) -> Result<AlignStageReport> {
    let plan = inputs.plan;
    let blocks = plan
        .blocks
        .par_iter()
        .map(|m| load_block(inputs.poses, inputs.clouds, m.block_id))
        .collect::<Result<Vec<_>>>()?;
    let opts = AlignOptions {
        icp: inputs.icp,
        ..AlignOptions::default()
    };
    let pairs = (0..blocks.len().saturating_sub(1))
        .into_par_iter()
        .map(|k| -> Result<PairReport> {
            let (m1, m2) = (&plan.blocks[k], &plan.blocks[k + 1]);
            let ov = pair_overlap(inputs, m1, m2, &blocks[k], &blocks[k + 1])?;
            let report = align_blocks(&blocks[k], &blocks[k + 1], &ov, &opts)
                .with_context(|| format!("aligning block {} to block {}", m2.block_id, m1.block_id))?;
            Ok(PairReport {
                block1: m1.block_id,
                block2: m2.block_id,
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let chained = chain_transforms(&pairs.iter().map(|p| p.report.fine).collect::<Vec<_>>());
    let transforms: Vec<BlockTransform> = plan
        .blocks
        .iter()
        .zip(chained)
        .map(|(m, g)| BlockTransform {
            block_id: m.block_id,
            transform: g,
        })
        .collect();
    for t in transforms.iter().skip(1) {
        write_json(&sim3_file(out, t.block_id), &t.transform)?;
    }
    Ok(AlignStageReport { pairs, transforms })
}

/// Block ids that have a `block_XX/images.txt` under `poses`.
pub fn discover_blocks(poses: &Path) -> Result<Vec<u32>> {
    let mut ids = Vec::new();
    for e in std::fs::read_dir(poses).with_context(|| format!("cannot read {}", poses.display()))? {
        let name = e?.file_name().to_string_lossy().to_string();
        if let Some(id) = name.strip_prefix("block_").and_then(|s| s.parse::<u32>().ok()) {
            if poses_file(poses, id).exists() {
                ids.push(id);
            }
        }
    }
    ids.sort_unstable();
    if ids.is_empty() {
        bail!(blockscape::Error::Data(format!("no block_XX/images.txt under {}", poses.display())));
    }
    Ok(ids)
}

/// Block camera paths in block 0's frame; blocks without a stored
/// transform are taken as already global.
pub fn load_block_paths(poses: &Path, transforms: Option<&Path>) -> Result<Vec<BlockPath>> {
    discover_blocks(poses)?
        .into_iter()
        .map(|id| {
            let traj = Trajectory::new(id, read_sfm_text(&poses_file(poses, id))?)?;
            let g = match transforms.map(|t| sim3_file(t, id)).filter(|p| p.exists()) {
                Some(p) => read_json::<Sim3Transform>(&p)?,
                None => Sim3Transform::identity(),
            };
            Ok(BlockPath::from_trajectory(&traj, &g)?)
        })
        .collect()
}

pub fn parse_position(s: &str) -> Result<Vector3<f64>> {
    let v: Vec<f64> = s
        .split([',', ' ', '\t'])
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| crate::config::ConfigError(format!("bad position {s:?}, expected x,y,z")))?;
    if v.len() != 3 || !v.iter().all(|x| x.is_finite()) {
        return Err(crate::config::ConfigError(format!("bad position {s:?}, expected x,y,z")).into());
    }
    Ok(Vector3::new(v[0], v[1], v[2]))
}

pub fn select_positions(paths: &[BlockPath], positions: &[Vector3<f64>], seeds: usize) -> Result<Vec<BlockSelection>> {
    let opts = DistanceOptions {
        seeds,
        ..Default::default()
    };
    positions
        .par_iter()
        .map(|p| Ok(select_block(p, paths, &opts)?))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageScore {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageEvalReport {
    pub metric: String,
    pub images: Vec<ImageScore>,
    /// Mean of the per-image values.
    pub mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ImageMetric {
    Psnr,
    Ssim,
}

/// Scores images of `a` against the same-named images of `b`.
pub fn eval_images(metric: ImageMetric, a: &Path, b: &Path) -> Result<ImageEvalReport> {
    let files = list_pngs(a)?;
    if files.is_empty() {
        bail!(blockscape::Error::Data(format!("no PNG images in {}", a.display())));
    }
    let images = files
        .par_iter()
        .map(|pa| {
            let name = pa.file_name().unwrap().to_string_lossy().to_string();
            let pb = b.join(&name);
            let (ia, ib) = (load_rgb(pa)?, load_rgb(&pb)?);
            let value = match metric {
                ImageMetric::Psnr => psnr(&ia, &ib)?,
                ImageMetric::Ssim => ssim(&ia, &ib)?,
            };
            Ok(ImageScore { name, value })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = images.iter().map(|s| s.value).sum::<f64>() / images.len() as f64;
    Ok(ImageEvalReport {
        metric: match metric {
            ImageMetric::Psnr => "psnr".into(),
            ImageMetric::Ssim => "ssim".into(),
        },
        images,
        mean,
    })
}

/// Camera-center error of `est` against `gt`, restricted to the frames of `est`.
pub fn eval_alignment(est: &Trajectory, gt: &Trajectory, reference: Option<&Trajectory>) -> Result<AlignmentError> {
    let ids = est.frame_ids();
    let (first, last) = (ids[0], *ids.last().unwrap());
    let gt_part = Trajectory::new(gt.block_id, gt.range(first, last).to_vec())?;
    Ok(alignment_error_against(est, &gt_part, reference.unwrap_or(&gt_part))?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthReport {
    pub kind: TrajectoryKind,
    pub frames: usize,
    pub blocks: usize,
    pub points: usize,
    pub seed: u64,
    pub diameter: f64,
    pub mean_step: f64,
}

pub struct SynthRequest {
    pub kind: TrajectoryKind,
    pub frames: usize,
    pub blocks: u32,
    pub overlap: f64,
    pub points: usize,
    pub noise: f64,
    pub seed: u64,
    pub face_size: u32,
}

/// Writes a synthetic dataset laid out like real SfM outputs plus ground truth.
pub fn synth_stage(req: &SynthRequest, out: &Path) -> Result<(SyntheticScene, SynthReport)> {
    let scene = gen_scene(
        &SceneOptions {
            kind: req.kind,
            frames: req.frames,
            blocks: req.blocks,
            overlap: req.overlap,
            points: req.points,
            noise: req.noise,
            ..SceneOptions::default()
        },
        req.seed,
    )?;
    write_plan(&scene.plan, out)?;
    let cams = vec![CameraIntrinsics::cube_face(1, req.face_size)];
    for (m, (block, g)) in scene.plan.blocks.iter().zip(scene.blocks.iter().zip(&scene.truth)) {
        let poses_root = out.join("poses");
        write_sfm_text(create_file(&poses_file(&poses_root, m.block_id))?, block.trajectory.poses())?;
        write_cameras_text(create_file(&cameras_file(&poses_root, m.block_id))?, &cams)?;
        write_ply(
            create_file(&cloud_file(&out.join("clouds"), m.block_id))?,
            &block.cloud,
            PlyWriteOptions::default(),
        )?;
        write_json(&sim3_file(&out.join("ground_truth"), m.block_id), g)?;
    }
    write_sfm_text(create_file(&out.join("ground_truth").join("images.txt"))?, scene.trajectory.poses())?;
    let report = SynthReport {
        kind: req.kind,
        frames: req.frames,
        blocks: scene.blocks.len(),
        points: scene.cloud.len(),
        seed: req.seed,
        diameter: scene.diameter,
        mean_step: scene.trajectory.mean_step_length()?,
    };
    write_json(&out.join("ground_truth").join("scene.json"), &report)?;
    Ok((scene, report))
}

pub fn reports_dir(out: &Path) -> PathBuf {
    out.join("reports")
}
