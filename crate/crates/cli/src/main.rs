use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use blockscape::align::{IcpOptions, ScaleEstimator};
use blockscape::features::SimilarityOptions;
use blockscape::maskgen::Ellipse;
use blockscape::scene_io::{read_sfm_text, write_json, Trajectory};
use blockscape::synth::TrajectoryKind;
use blockscape_cli::config::{exit_code, ConfigError, PipelineConfig, SyntheticConfig};
use blockscape_cli::pipeline::run_pipeline;
use blockscape_cli::stages::*;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "blockscape", version, about = "Block-wise aerial 360° capture pipeline")]
struct Cli {
    /// Worker threads for per-block and per-frame work.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Equirectangular frames to cubemap faces.
    Project {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = blockscape::projection::DEFAULT_FACE_SIZE)]
        face_size: u32,
        #[arg(long)]
        with_poles: bool,
    },
    /// Compose drone masks and optionally fill masked face pixels.
    Mask {
        /// Directory of per-face body masks.
        #[arg(long)]
        masks: Option<PathBuf>,
        /// Mask size as WxH when no mask directory is given.
        #[arg(long, value_parser = parse_size)]
        size: Option<(u32, u32)>,
        /// Ellipse `cx,cy,a,b,angle` (radians); repeatable.
        #[arg(long = "ellipse")]
        ellipses: Vec<String>,
        #[arg(long, default_value_t = blockscape::maskgen::DEFAULT_DILATION_RADIUS)]
        radius: u32,
        #[arg(long)]
        output: PathBuf,
        /// Face images to fill with the composed masks.
        #[arg(long, requires = "filled")]
        fill: Option<PathBuf>,
        #[arg(long)]
        filled: Option<PathBuf>,
    },
    /// Split flights into overlapping blocks.
    Partition {
        /// Frames per flight.
        #[arg(long)]
        frames: u32,
        #[arg(long, default_value_t = 1)]
        flights: u32,
        /// Total number of blocks.
        #[arg(long, default_value_t = 1)]
        blocks: u32,
        #[arg(long, default_value_t = blockscape::partition::DEFAULT_OVERLAP)]
        overlap: f64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Most similar candidate frame to a query frame.
    Similarity {
        /// Directory holding the query's `<frame>_<face>.png` faces.
        #[arg(long)]
        query_dir: PathBuf,
        /// Frame stem of the query, e.g. `frame_0012`.
        #[arg(long)]
        query: String,
        #[arg(long)]
        candidates: PathBuf,
        /// Candidate frame range `start:end`, inclusive.
        #[arg(long, value_parser = parse_range)]
        range: Option<(u32, u32)>,
        #[arg(long, default_value_t = blockscape::features::DEFAULT_TEMPERATURE)]
        temperature: f64,
    },
    /// Register adjacent blocks and chain them onto block 0.
    Align {
        /// Block plan written by `partition`.
        #[arg(long)]
        blocks: PathBuf,
        /// Root of `block_XX/images.txt`.
        #[arg(long)]
        poses: PathBuf,
        /// Root of `block_XX.ply`.
        #[arg(long)]
        clouds: PathBuf,
        /// Root of `flight_XX/<frame>_<face>.png`, for cross-flight pairs.
        #[arg(long)]
        faces: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = AlignMode::Auto)]
        mode: AlignMode,
        #[command(flatten)]
        icp: IcpArgs,
        #[arg(long, default_value_t = blockscape::features::DEFAULT_TEMPERATURE)]
        temperature: f64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Pick the block whose camera path is nearest each query position.
    Select {
        #[arg(long)]
        poses: PathBuf,
        /// Root of `block_XX/sim3.json` written by `align`.
        #[arg(long)]
        transforms: Option<PathBuf>,
        /// Query `x,y,z`; repeatable.
        #[arg(long = "position", allow_hyphen_values = true)]
        positions: Vec<String>,
        /// File with one `x y z` per line.
        #[arg(long)]
        positions_file: Option<PathBuf>,
        #[arg(long, default_value_t = blockscape::blocksel::DEFAULT_SEEDS)]
        seeds: usize,
    },
    /// Image quality or camera alignment metrics.
    Eval {
        #[command(subcommand)]
        metric: EvalCommand,
    },
    /// Write a synthetic dataset with ground truth.
    Synth {
        #[command(flatten)]
        scene: SynthArgs,
        #[arg(long, default_value_t = 4)]
        blocks: u32,
        #[arg(long, default_value_t = blockscape::partition::DEFAULT_OVERLAP)]
        overlap: f64,
        #[arg(long, default_value_t = blockscape::projection::DEFAULT_FACE_SIZE)]
        face_size: u32,
        #[arg(long)]
        output: PathBuf,
    },
    /// Run the whole pipeline from a config file and flags.
    Run(RunArgs),
}

#[derive(Subcommand)]
enum EvalCommand {
    Psnr { a: PathBuf, b: PathBuf },
    Ssim { a: PathBuf, b: PathBuf },
    Align {
        /// Estimated `images.txt`, already in the ground-truth frame.
        estimate: PathBuf,
        ground_truth: PathBuf,
        /// Trajectory whose mean step normalizes the error.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
}

#[derive(Args)]
struct IcpArgs {
    #[arg(long, default_value_t = blockscape::align::DEFAULT_KEEP_FRACTION)]
    keep_fraction: f64,
    #[arg(long, default_value_t = blockscape::align::DEFAULT_MAX_ICP_ITERATIONS)]
    max_iterations: usize,
    #[arg(long, default_value_t = blockscape::align::DEFAULT_ICP_TOLERANCE)]
    tolerance: f64,
    /// Least-squares scale in each ICP update instead of the spread ratio.
    #[arg(long)]
    least_squares_scale: bool,
}

impl From<&IcpArgs> for IcpOptions {
    fn from(a: &IcpArgs) -> Self {
        IcpOptions {
            keep_fraction: a.keep_fraction,
            max_iterations: a.max_iterations,
            tolerance: a.tolerance,
            scale: if a.least_squares_scale {
                ScaleEstimator::LeastSquares
            } else {
                ScaleEstimator::Symmetric
            },
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "loop")]
    kind: TrajectoryKind,
    #[arg(long, default_value_t = 160)]
    frames: usize,
    #[arg(long, default_value_t = 6000)]
    points: usize,
    /// Point noise as a fraction of the scene diameter.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    /// JSON config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Generate a synthetic dataset instead of reading inputs.
    #[arg(long)]
    synthetic: bool,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    blocks: Option<u32>,
    #[arg(long)]
    flights: Option<u32>,
    #[arg(long)]
    overlap: Option<f64>,
    #[arg(long)]
    face_size: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    kind: Option<TrajectoryKind>,
    /// Print the effective config and exit.
    #[arg(long)]
    print_config: bool,
}

fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s.split_once('x').ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    Ok((
        w.parse().map_err(|_| format!("bad width in {s:?}"))?,
        h.parse().map_err(|_| format!("bad height in {s:?}"))?,
    ))
}

fn parse_range(s: &str) -> Result<(u32, u32), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected start:end, got {s:?}"))?;
    let a: u32 = a.parse().map_err(|_| format!("bad start in {s:?}"))?;
    let b: u32 = b.parse().map_err(|_| format!("bad end in {s:?}"))?;
    if a > b {
        return Err(format!("empty range {s:?}"));
    }
    Ok((a, b))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    write_stdout(&(serde_json::to_string_pretty(value)? + "\n"))
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn write_stdout(text: &str) -> Result<()> {
    use std::io::Write;
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn run_config(args: &RunArgs, jobs: usize) -> Result<PipelineConfig> {
    let mut cfg = match &args.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.jobs = jobs.max(1);
    if args.synthetic && cfg.synthetic.is_none() {
        cfg.synthetic = Some(SyntheticConfig::default());
    }
    if let Some(s) = cfg.synthetic.as_mut() {
        if let Some(seed) = args.seed {
            s.seed = seed;
        }
        if let Some(f) = args.frames {
            s.frames = f;
        }
        if let Some(k) = args.kind {
            s.kind = k;
        }
    } else if args.seed.is_some() || args.kind.is_some() {
        return Err(ConfigError("--seed and --kind apply to synthetic runs only".into()).into());
    } else if let Some(f) = args.frames {
        cfg.frames = Some(f as u32);
    }
    if let Some(d) = &args.input {
        cfg.input_dir = Some(d.clone());
    }
    if let Some(d) = &args.output {
        cfg.output_dir = d.clone();
    }
    if let Some(b) = args.blocks {
        cfg.blocks = b;
    }
    if let Some(f) = args.flights {
        cfg.flights = f;
    }
    if let Some(o) = args.overlap {
        cfg.overlap = o;
    }
    if let Some(s) = args.face_size {
        cfg.face_size = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_trajectory(path: &PathBuf) -> Result<Trajectory> {
    Ok(Trajectory::new(0, read_sfm_text(path)?)?)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Project {
            input,
            output,
            face_size,
            with_poles,
        } => print_json(&project_dir(&input, &output, face_size, with_poles)?),
        Command::Mask {
            masks,
            size,
            ellipses,
            radius,
            output,
            fill,
            filled,
        } => {
            let ellipses = ellipses
                .iter()
                .map(|e| Ellipse::parse(e))
                .collect::<blockscape::Result<Vec<_>>>()?;
            let mut report = mask_dir(masks.as_deref(), size, &ellipses, radius, &output)?;
            if let (Some(src), Some(dst)) = (fill, filled) {
                report.filled_images = Some(fill_dir(&src, &output, &dst)?);
            }
            print_json(&report)
        }
        Command::Partition {
            frames,
            flights,
            blocks,
            overlap,
            output,
        } => {
            if !(0.0..1.0).contains(&overlap) {
                return Err(ConfigError(format!("overlap {overlap} must lie in [0, 1)")).into());
            }
            print_json(&partition_stage(frames, flights, blocks, overlap, &output)?)
        }
        Command::Similarity {
            query_dir,
            query,
            candidates,
            range,
            temperature,
        } => {
            let opts = SimilarityOptions {
                temperature,
                ..Default::default()
            };
            print_json(&similarity_stage(&query_dir, &query, &candidates, range, &opts)?)
        }
        Command::Align {
            blocks,
            poses,
            clouds,
            faces,
            mode,
            icp,
            temperature,
            output,
        } => {
            let plan = load_plan(&blocks)?;
            let inputs = AlignInputs {
                plan: &plan,
                poses: &poses,
                clouds: &clouds,
                faces: faces.as_deref(),
                mode,
                icp: (&icp).into(),
                temperature,
            };
            let report = align_stage(&inputs, &output)?;
            write_json(&output.join("alignment_report.json"), &report)?;
            print_json(&report)
        }
        Command::Select {
            poses,
            transforms,
            positions,
            positions_file,
            seeds,
        } => {
            let mut queries = positions
                .iter()
                .map(|p| parse_position(p))
                .collect::<Result<Vec<_>>>()?;
            if let Some(f) = positions_file {
                let text = std::fs::read_to_string(&f).with_context(|| format!("reading {}", f.display()))?;
                for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
                    queries.push(parse_position(line)?);
                }
            }
            if queries.is_empty() {
                return Err(ConfigError("select needs --position or --positions-file".into()).into());
            }
            let paths = load_block_paths(&poses, transforms.as_deref())?;
            print_json(&select_positions(&paths, &queries, seeds)?)
        }
        Command::Eval { metric } => match metric {
            EvalCommand::Psnr { a, b } => print_json(&eval_images(ImageMetric::Psnr, &a, &b)?),
            EvalCommand::Ssim { a, b } => print_json(&eval_images(ImageMetric::Ssim, &a, &b)?),
            EvalCommand::Align {
                estimate,
                ground_truth,
                reference,
            } => {
                let reference = reference.as_ref().map(load_trajectory).transpose()?;
                let err = eval_alignment(
                    &load_trajectory(&estimate)?,
                    &load_trajectory(&ground_truth)?,
                    reference.as_ref(),
                )?;
                print_json(&err)
            }
        },
        Command::Synth {
            scene,
            blocks,
            overlap,
            face_size,
            output,
        } => {
            let req = SynthRequest {
                kind: scene.kind,
                frames: scene.frames,
                blocks,
                overlap,
                points: scene.points,
                noise: scene.noise,
                seed: scene.seed,
                face_size,
            };
            print_json(&synth_stage(&req, &output)?.1)
        }
        Command::Run(args) => {
            let cfg = run_config(&args, cli.jobs)?;
            if args.print_config {
                write_stdout(&cfg.to_json())?;
                return Ok(());
            }
            print_json(&run_pipeline(&cfg)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let jobs = cli.jobs;
    let result = if jobs == 0 {
        Err(ConfigError("--jobs must be at least 1".into()).into())
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("cannot start worker threads")
            .and_then(|_| execute(cli))
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
