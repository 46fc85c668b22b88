use std::f64::consts::TAU;
use std::str::FromStr;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene_io::{CameraPose, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryKind {
    Line,
    Loop,
    Lawnmower,
    StackedLoops,
}

impl TrajectoryKind {
    pub fn name(self) -> &'static str {
        match self {
            TrajectoryKind::Line => "line",
            TrajectoryKind::Loop => "loop",
            TrajectoryKind::Lawnmower => "lawnmower",
            TrajectoryKind::StackedLoops => "stacked-loops",
        }
    }
}

impl FromStr for TrajectoryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "line" => Ok(TrajectoryKind::Line),
            "loop" => Ok(TrajectoryKind::Loop),
            "lawnmower" => Ok(TrajectoryKind::Lawnmower),
            "stacked-loops" => Ok(TrajectoryKind::StackedLoops),
            other => Err(Error::arg(format!(
                "unknown trajectory kind '{other}' (line, loop, lawnmower, stacked-loops)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryOptions {
    /// Each step length is drawn from `step · (1 ± speed_jitter)`.
    pub speed_jitter: f64,
    /// Loops of the stacked-loops path.
    pub loops: usize,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        Self {
            speed_jitter: 0.0,
            loops: 3,
        }
    }
}

/// Lawnmower geometry for `m` frames: about four rows, with row length and
/// spacing whole multiples of the step.
pub fn lawnmower_layout(m: usize) -> (usize, usize) {
    let period = m.div_ceil(4).max(3);
    let spacing = (period / 6).max(1);
    (period - spacing, spacing)
}

struct PathShape {
    kind: TrajectoryKind,
    step: f64,
    m: usize,
    loops: usize,
}

impl PathShape {
    /// Position at arclength `s`.
    fn at(&self, s: f64) -> Vector3<f64> {
        match self.kind {
            TrajectoryKind::Line => Vector3::new(s, 0.0, 0.0),
            TrajectoryKind::Loop => {
                let r = self.m as f64 * self.step / TAU;
                let a = s / r;
                Vector3::new(r * a.sin(), r * (1.0 - a.cos()), 0.0)
            }
            TrajectoryKind::Lawnmower => {
                let (row_steps, spacing_steps) = lawnmower_layout(self.m);
                let row = row_steps as f64 * self.step;
                let gap = spacing_steps as f64 * self.step;
                let period = row + gap;
                let k = (s / period).floor();
                let r = s - k * period;
                let forward = (k as i64) % 2 == 0;
                if r < row {
                    Vector3::new(if forward { r } else { row - r }, k * gap, 0.0)
                } else {
                    Vector3::new(if forward { row } else { 0.0 }, k * gap + (r - row), 0.0)
                }
            }
            TrajectoryKind::StackedLoops => {
                let per_loop = self.m as f64 * self.step / self.loops.max(1) as f64;
                let r = per_loop / TAU;
                let pitch = 0.5 * r;
                // Arclength per radian of the helix.
                let rate = (r * r + (pitch / TAU).powi(2)).sqrt();
                let a = s / rate;
                Vector3::new(r * a.sin(), r * (1.0 - a.cos()), pitch * a / TAU)
            }
        }
    }
}

/// Camera-to-world rotation looking along `forward` with +z up: camera x is
/// right, y is down, z is forward.
pub fn look_rotation(forward: &Vector3<f64>) -> Option<UnitQuaternion<f64>> {
    let f = forward.try_normalize(1e-12)?;
    let right = f.cross(&Vector3::z()).try_normalize(1e-9)?;
    let down = f.cross(&right);
    let m = Matrix3::from_columns(&[right, down, f]);
    Some(UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m)))
}

/// Poses facing along the path tangent; a degenerate tangent keeps the
/// previous orientation.
pub fn poses_along(centers: &[Vector3<f64>], first_frame: u32) -> Vec<CameraPose> {
    let n = centers.len();
    let mut prev = UnitQuaternion::identity();
    (0..n)
        .map(|i| {
            let tangent = match (i, n) {
                (_, 1) => Vector3::x(),
                (0, _) => centers[1] - centers[0],
                (i, n) if i == n - 1 => centers[n - 1] - centers[n - 2],
                (i, _) => centers[i + 1] - centers[i - 1],
            };
            if let Some(r) = look_rotation(&tangent) {
                prev = r;
            }
            CameraPose::from_center(first_frame + i as u32, prev, centers[i])
        })
        .collect()
}

/// Camera centers along a path; frames are numbered from 0.
pub fn gen_centers(kind: TrajectoryKind, m: usize, step: f64, seed: u64, opts: &TrajectoryOptions) -> Result<Vec<Vector3<f64>>> {
    if m < 2 {
        return Err(Error::arg(format!("a trajectory needs at least 2 frames, got {m}")));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::arg(format!("step {step} must be positive")));
    }
    if !(0.0..1.0).contains(&opts.speed_jitter) {
        return Err(Error::arg(format!("speed jitter {} outside [0, 1)", opts.speed_jitter)));
    }
    let shape = PathShape {
        kind,
        step,
        m,
        loops: opts.loops,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = 0.0;
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        if i > 0 {
            let j = if opts.speed_jitter > 0.0 {
                rng.random_range(-opts.speed_jitter..opts.speed_jitter)
            } else {
                0.0
            };
            s = if j == 0.0 { i as f64 * step } else { s + step * (1.0 + j) };
        }
        out.push(shape.at(s));
    }
    Ok(out)
}

/// Ground-truth trajectory of `m` frames spaced `step` apart along the path.
pub fn gen_trajectory(kind: TrajectoryKind, m: usize, step: f64, seed: u64) -> Result<Trajectory> {
    gen_trajectory_with(kind, m, step, seed, &TrajectoryOptions::default())
}

pub fn gen_trajectory_with(
    kind: TrajectoryKind,
    m: usize,
    step: f64,
    seed: u64,
    opts: &TrajectoryOptions,
) -> Result<Trajectory> {
    let centers = gen_centers(kind, m, step, seed, opts)?;
    Trajectory::new(0, poses_along(&centers, 0))
}
