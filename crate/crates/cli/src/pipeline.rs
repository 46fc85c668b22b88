//! `run`: every enabled stage in dependency order under one output directory.
//!
//! Output layout:
//! `synthetic/` generated inputs, `faces/flight_XX/`, `masks/`, `filled/flight_XX/`,
//! `blocks.json`, `manifests/`, `transforms/block_XX/sim3.json` and one JSON
//! report per stage under `reports/`.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use blockscape::maskgen::Ellipse;
use blockscape::partition::PartitionPlan;
use blockscape::scene_io::{read_json, read_sfm_text, write_json, Sim3Transform, Trajectory};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, PipelineConfig};
use crate::layout::*;
use crate::stages::*;

/// Recovery tolerances checked against synthetic ground truth.
pub const SCALE_TOLERANCE: f64 = 1e-3;
pub const ROTATION_TOLERANCE_DEG: f64 = 0.05;
pub const TRANSLATION_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageStatus {
    pub stage: String,
    pub ran: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineReport {
    pub config: PipelineConfig,
    pub stages: Vec<StageStatus>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockRecovery {
    pub block_id: u32,
    pub scale_error: f64,
    pub rotation_error_deg: f64,
    /// Translation error as a fraction of the scene diameter.
    pub translation_error: f64,
    pub avg_ratio: f64,
    pub rmse: f64,
    pub within_tolerance: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub blocks: Vec<BlockRecovery>,
    pub all_within_tolerance: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectReport {
    pub positions: usize,
    pub block_ids: Vec<u32>,
    pub distances: Vec<f64>,
    /// Positions outside every overlap region whose owning block was chosen.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correct_outside_overlap: Option<(usize, usize)>,
}

struct Run<'a> {
    cfg: &'a PipelineConfig,
    out: PathBuf,
    input: PathBuf,
    stages: Vec<StageStatus>,
}

impl Run<'_> {
    fn report<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        write_json(&reports_dir(&self.out).join(format!("{name}.json")), value)?;
        Ok(())
    }

    fn done(&mut self, stage: &str, ran: bool, note: Option<String>) {
        self.stages.push(StageStatus {
            stage: stage.into(),
            ran,
            note,
        });
    }

    fn frames_dirs(&self) -> Result<Vec<(u32, PathBuf)>> {
        let root = self.input.join("frames");
        let mut flights: Vec<(u32, PathBuf)> = Vec::new();
        if root.is_dir() {
            for e in std::fs::read_dir(&root)? {
                let p = e?.path();
                let name = p.file_name().unwrap().to_string_lossy().to_string();
                if let Some(id) = name.strip_prefix("flight_").and_then(|s| s.parse().ok()) {
                    if p.is_dir() {
                        flights.push((id, p));
                    }
                }
            }
        }
        flights.sort();
        if flights.is_empty() {
            flights.push((0, root));
        }
        Ok(flights)
    }

    fn frame_count(&self) -> Result<u32> {
        if let Some(s) = &self.cfg.synthetic {
            return Ok(s.frames as u32);
        }
        if let Some(f) = self.cfg.frames {
            return Ok(f);
        }
        let dirs = self.frames_dirs()?;
        let n = list_pngs(&dirs[0].1)
            .with_context(|| format!("set `frames` or provide PNG frames under {}", dirs[0].1.display()))?
            .len();
        if n == 0 {
            return Err(ConfigError(format!("no frames in {}; set `frames` in the config", dirs[0].1.display())).into());
        }
        Ok(n as u32)
    }

    fn project(&mut self) -> Result<()> {
        let mut notes = Vec::new();
        for (flight, dir) in self.frames_dirs()? {
            let r = project_dir(&dir, &self.out.join("faces").join(flight_dir(flight)), self.cfg.face_size, self.cfg.with_poles)?;
            notes.push(r);
        }
        self.report("project", &notes)?;
        self.done("project", true, None);
        Ok(())
    }

    fn mask(&mut self) -> Result<()> {
        let ellipses = self
            .cfg
            .ellipses
            .iter()
            .map(|e| Ellipse::parse(e))
            .collect::<blockscape::Result<Vec<_>>>()?;
        let masks_in = self.input.join("masks");
        let size = (self.cfg.face_size, self.cfg.face_size);
        let masks_out = self.out.join("masks");
        let mut report = mask_dir(
            masks_in.is_dir().then_some(masks_in.as_path()),
            Some(size),
            &ellipses,
            self.cfg.dilation_radius,
            &masks_out,
        )?;
        let faces = self.out.join("faces");
        if faces.is_dir() {
            let mut filled = 0;
            for (flight, _) in self.frames_dirs()? {
                let src = faces.join(flight_dir(flight));
                if src.is_dir() {
                    filled += fill_dir(&src, &masks_out, &self.out.join("filled").join(flight_dir(flight)))?;
                }
            }
            report.filled_images = Some(filled);
        }
        self.report("mask", &report)?;
        self.done("mask", true, None);
        Ok(())
    }

    fn partition(&mut self) -> Result<PartitionPlan> {
        let frames = self.frame_count()?;
        let plan = partition_stage(frames, self.cfg.flights, self.cfg.blocks, self.cfg.overlap, &self.out)?;
        self.report("partition", &plan)?;
        self.done("partition", true, Some(plan.label()));
        Ok(plan)
    }

    fn plan(&self) -> Result<PartitionPlan> {
        let own = self.out.join("blocks.json");
        let path = if own.exists() { own } else { self.input.join("blocks.json") };
        load_plan(&path).context("no block plan: enable the partition stage or provide blocks.json")
    }

    fn align(&mut self, plan: &PartitionPlan) -> Result<AlignStageReport> {
        let faces = self.out.join("faces");
        let inputs = AlignInputs {
            plan,
            poses: &self.input.join("poses"),
            clouds: &self.input.join("clouds"),
            faces: faces.is_dir().then_some(faces.as_path()),
            mode: AlignMode::Auto,
            icp: self.cfg.icp,
            temperature: self.cfg.temperature,
        };
        let report = align_stage(&inputs, &self.out.join("transforms"))?;
        self.report("align", &report)?;
        self.done("align", true, None);
        Ok(report)
    }

    fn transforms_dir(&self) -> PathBuf {
        self.out.join("transforms")
    }

    fn select(&mut self, plan: &PartitionPlan) -> Result<()> {
        let paths = load_block_paths(&self.input.join("poses"), Some(&self.transforms_dir()))?;
        let gt = self.input.join("ground_truth").join("images.txt");
        let listed = self.input.join("positions.txt");
        let (positions, frames): (Vec<Vector3<f64>>, Option<Vec<u32>>) = if listed.exists() {
            let text = std::fs::read_to_string(&listed).with_context(|| format!("reading {}", listed.display()))?;
            let pos = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(parse_position)
                .collect::<Result<Vec<_>>>()?;
            (pos, None)
        } else if gt.exists() {
            let traj = Trajectory::new(0, read_sfm_text(&gt)?)?;
            (traj.centers(), Some(traj.frame_ids()))
        } else {
            self.done("select", false, Some("no positions.txt or ground truth to query".into()));
            return Ok(());
        };
        let sel = select_positions(&paths, &positions, self.cfg.spline_seeds)?;
        let correct_outside_overlap = frames.map(|ids| {
            let mut total = 0;
            let mut correct = 0;
            for (f, s) in ids.iter().zip(&sel) {
                let owners: Vec<u32> = plan
                    .blocks
                    .iter()
                    .filter(|b| b.frame_range.contains(*f))
                    .map(|b| b.block_id)
                    .collect();
                if owners.len() == 1 {
                    total += 1;
                    correct += (owners[0] == s.block_id) as usize;
                }
            }
            (correct, total)
        });
        let report = SelectReport {
            positions: positions.len(),
            block_ids: sel.iter().map(|s| s.block_id).collect(),
            distances: sel.iter().map(|s| s.distance).collect(),
            correct_outside_overlap,
        };
        self.report("select", &report)?;
        self.done("select", true, None);
        Ok(())
    }

    fn eval(&mut self, plan: &PartitionPlan) -> Result<()> {
        let gt_dir = self.input.join("ground_truth");
        let gt_path = gt_dir.join("images.txt");
        if !gt_path.exists() {
            self.done("eval", false, Some("no ground truth to compare against".into()));
            return Ok(());
        }
        let gt = Trajectory::new(0, read_sfm_text(&gt_path)?)?;
        let scene: SynthReport = read_json(&gt_dir.join("scene.json"))?;
        let mut blocks = Vec::new();
        for m in &plan.blocks {
            let id = m.block_id;
            let recovered = match sim3_file(&self.transforms_dir(), id) {
                p if p.exists() => read_json::<Sim3Transform>(&p)?,
                _ => Sim3Transform::identity(),
            };
            let truth: Sim3Transform = read_json(&sim3_file(&gt_dir, id))?;
            let (ds, da, dt) = recovered.compose(&truth).distance_from_identity();
            let local = Trajectory::new(id, read_sfm_text(&poses_file(&self.input.join("poses"), id))?)?;
            let est = Trajectory::new(id, local.poses().iter().map(|p| recovered.apply_pose(p)).collect())?;
            let err = eval_alignment(&est, &gt, None)?;
            let translation_error = dt / scene.diameter;
            blocks.push(BlockRecovery {
                block_id: id,
                scale_error: ds,
                rotation_error_deg: da.to_degrees(),
                translation_error,
                avg_ratio: err.avg_ratio,
                rmse: err.rmse,
                within_tolerance: ds <= SCALE_TOLERANCE
                    && da.to_degrees() <= ROTATION_TOLERANCE_DEG
                    && translation_error <= TRANSLATION_TOLERANCE,
            });
        }
        let report = EvalReport {
            all_within_tolerance: blocks.iter().all(|b| b.within_tolerance),
            blocks,
        };
        self.report("eval", &report)?;
        self.done("eval", true, None);
        Ok(())
    }
}

fn input_root(cfg: &PipelineConfig, out: &Path) -> PathBuf {
    match (&cfg.synthetic, &cfg.input_dir) {
        (Some(_), _) => out.join("synthetic"),
        (None, Some(dir)) => dir.clone(),
        (None, None) => out.to_path_buf(),
    }
}

/// Validates `cfg`, then runs the enabled stages on a pool of `cfg.jobs` threads.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .context("cannot start worker threads")?;
    pool.install(|| run_stages(cfg))
}

fn run_stages(cfg: &PipelineConfig) -> Result<PipelineReport> {
    let out = cfg.output_dir.clone();
    let mut run = Run {
        cfg,
        input: input_root(cfg, &out),
        out,
        stages: Vec::new(),
    };
    if let Some(s) = &cfg.synthetic {
        let req = SynthRequest {
            kind: s.kind,
            frames: s.frames,
            blocks: cfg.blocks,
            overlap: cfg.overlap,
            points: s.points,
            noise: s.noise,
            seed: s.seed,
            face_size: cfg.face_size,
        };
        let (_, report) = synth_stage(&req, &run.input).context("stage synth failed")?;
        run.report("synth", &report)?;
        run.done("synth", true, None);
    }
    if cfg.stages.project {
        run.project().context("stage project failed")?;
    }
    if cfg.stages.mask {
        run.mask().context("stage mask failed")?;
    }
    if cfg.stages.partition {
        run.partition().context("stage partition failed")?;
    }
    let needs_plan = cfg.stages.align || cfg.stages.select || cfg.stages.eval;
    if needs_plan {
        let plan = run.plan()?;
        if cfg.stages.align {
            run.align(&plan).context("stage align failed")?;
        }
        if cfg.stages.select {
            run.select(&plan).context("stage select failed")?;
        }
        if cfg.stages.eval {
            run.eval(&plan).context("stage eval failed")?;
        }
    }
    let report = PipelineReport {
        config: cfg.clone(),
        stages: std::mem::take(&mut run.stages),
    };
    run.report("pipeline", &report)?;
    Ok(report)
}
