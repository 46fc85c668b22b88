//! Pipeline configuration, stored as JSON. Command-line flags override
//! values read from the file.

use std::path::{Path, PathBuf};

use blockscape::align::IcpOptions;
use blockscape::synth::TrajectoryKind;
use serde::{Deserialize, Serialize};

/// Invalid configuration or arguments; maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid configuration: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stages {
    pub project: bool,
    pub mask: bool,
    pub partition: bool,
    pub align: bool,
    pub select: bool,
    pub eval: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Self {
            project: false,
            mask: false,
            partition: true,
            align: true,
            select: true,
            eval: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub kind: TrajectoryKind,
    pub frames: usize,
    pub points: usize,
    /// Point noise as a fraction of the scene diameter.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            kind: TrajectoryKind::Loop,
            frames: 160,
            points: 6000,
            noise: 0.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub stages: Stages,
    /// Holds `frames/`, `masks/`, `poses/`, `clouds/` as available.
    pub input_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub face_size: u32,
    pub with_poles: bool,
    pub flights: u32,
    pub blocks: u32,
    pub overlap: f64,
    /// Frames per flight; counted from `frames/` when absent.
    pub frames: Option<u32>,
    /// Extra masked regions as `cx,cy,a,b,angle` in face pixels, angle in radians.
    pub ellipses: Vec<String>,
    pub dilation_radius: u32,
    pub temperature: f64,
    pub icp: IcpOptions,
    pub spline_seeds: usize,
    pub jobs: usize,
    /// Generate inputs instead of reading `input_dir`.
    pub synthetic: Option<SyntheticConfig>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            stages: Stages::default(),
            input_dir: None,
            output_dir: PathBuf::from("out"),
            face_size: blockscape::projection::DEFAULT_FACE_SIZE,
            with_poles: false,
            flights: 1,
            blocks: 4,
            overlap: blockscape::partition::DEFAULT_OVERLAP,
            frames: None,
            ellipses: Vec::new(),
            dilation_radius: blockscape::maskgen::DEFAULT_DILATION_RADIUS,
            temperature: blockscape::features::DEFAULT_TEMPERATURE,
            icp: IcpOptions::default(),
            spline_seeds: blockscape::blocksel::DEFAULT_SEEDS,
            jobs: 1,
            synthetic: None,
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError(msg()))
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        let cfg = serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Checks every parameter; nothing runs before this passes.
    pub fn validate(&self) -> Result<(), ConfigError> {
        check((0.0..1.0).contains(&self.overlap), || {
            format!("overlap {} must lie in [0, 1)", self.overlap)
        })?;
        check(self.face_size >= 2, || format!("face size {} must be at least 2", self.face_size))?;
        check(self.flights >= 1 && self.blocks >= self.flights, || {
            format!("need blocks >= flights >= 1, got {} flights and {} blocks", self.flights, self.blocks)
        })?;
        check(self.temperature > 0.0 && self.temperature.is_finite(), || {
            format!("temperature {} must be positive", self.temperature)
        })?;
        check(self.icp.keep_fraction > 0.0 && self.icp.keep_fraction <= 1.0, || {
            format!("ICP keep fraction {} must lie in (0, 1]", self.icp.keep_fraction)
        })?;
        check(self.icp.max_iterations >= 1, || "ICP needs at least one iteration".into())?;
        check(self.icp.tolerance > 0.0, || format!("ICP tolerance {} must be positive", self.icp.tolerance))?;
        check(self.spline_seeds >= 1, || "spline seeds must be at least 1".into())?;
        for e in &self.ellipses {
            blockscape::maskgen::Ellipse::parse(e).map_err(|err| ConfigError(err.to_string()))?;
        }
        if let Some(f) = self.frames {
            check(f >= self.blocks, || format!("{f} frames cannot hold {} blocks", self.blocks))?;
        }
        check(self.jobs >= 1, || "jobs must be at least 1".into())?;
        if let Some(s) = &self.synthetic {
            check(s.frames >= 4 * self.blocks as usize, || {
                format!("synthetic run needs at least 4 frames per block, got {} for {}", s.frames, self.blocks)
            })?;
            check(self.flights == 1, || "synthetic runs use a single flight".into())?;
            check(s.points >= 100, || format!("synthetic run needs at least 100 points, got {}", s.points))?;
            check(s.noise >= 0.0 && s.noise.is_finite(), || format!("noise {} must be non-negative", s.noise))?;
        } else {
            check(self.input_dir.is_some(), || "either input_dir or synthetic must be set".into())?;
        }
        Ok(())
    }
}

/// Exit status for an error chain: 2 configuration, 3 data, 4 numerical.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use blockscape::Error as E;
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Argument(_) => 2,
                E::Degenerate(_) | E::Registration(_) | E::Numerical(_) => 4,
                _ => 3,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some()
            || cause.downcast_ref::<serde_json::Error>().is_some()
            || cause.downcast_ref::<image::ImageError>().is_some()
        {
            return 3;
        }
    }
    3
}
