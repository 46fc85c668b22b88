//! On-demand block selection: each block's camera path becomes a C² spline
//! and a viewer position picks the block whose path is closest.

mod minimize;
mod spline;

pub use minimize::{golden_section, minimize_bounded, BoundedResult, QuasiNewtonOptions};
pub use spline::{fit_spline, SplinePath};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene_io::{Sim3Transform, Trajectory};

pub const DEFAULT_SEEDS: usize = 8;
pub const DEFAULT_MAX_ITERATIONS: usize = 20;
const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceOptions {
    /// Equispaced seeds over the parameter range; the nearest knot is always added.
    pub seeds: usize,
    pub max_iterations: usize,
}

impl Default for DistanceOptions {
    fn default() -> Self {
        Self {
            seeds: DEFAULT_SEEDS,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplineDistance {
    pub distance: f64,
    pub parameter: f64,
}

/// Closest point on the path by multi-start bounded quasi-Newton on
/// `‖s(u) − p‖²`.
pub fn distance_to_spline(path: &SplinePath, p: &Vector3<f64>, opts: &DistanceOptions) -> SplineDistance {
    let objective = |u: f64| {
        let (pos, vel) = path.eval_with_derivative(u);
        let diff = pos - p;
        (diff.norm_squared(), 2.0 * diff.dot(&vel))
    };
    let umax = path.length();
    let qn = QuasiNewtonOptions {
        max_iterations: opts.max_iterations,
        ..QuasiNewtonOptions::default()
    };
    let k = opts.seeds.max(1);
    let mut seeds: Vec<f64> = if k == 1 {
        vec![0.5 * umax]
    } else {
        (0..k).map(|i| umax * i as f64 / (k - 1) as f64).collect()
    };
    seeds.push(path.nearest_knot_parameter(p));

    let mut best = SplineDistance {
        distance: f64::INFINITY,
        parameter: 0.0,
    };
    let mut best_f = f64::INFINITY;
    for u0 in seeds {
        let r = minimize_bounded(objective, u0, 0.0, umax, &qn);
        if r.value < best_f {
            best_f = r.value;
            best.parameter = r.x;
        }
    }
    best.distance = best_f.max(0.0).sqrt();
    best
}

/// Spline of one block in the global frame.
#[derive(Debug, Clone)]
pub struct BlockPath {
    pub block_id: u32,
    pub path: SplinePath,
}

impl BlockPath {
    /// Moves the block's camera centers into the global frame and fits the path.
    pub fn from_trajectory(traj: &Trajectory, to_global: &Sim3Transform) -> Result<Self> {
        let centers: Vec<Vector3<f64>> = traj.centers().iter().map(|c| to_global.apply(c)).collect();
        Ok(Self {
            block_id: traj.block_id,
            path: fit_spline(&centers)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDistance {
    pub block_id: u32,
    pub distance: f64,
    pub parameter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSelection {
    pub block_id: u32,
    pub distance: f64,
    pub parameter: f64,
    pub table: Vec<BlockDistance>,
}

fn distance_table(p: &Vector3<f64>, paths: &[BlockPath], opts: &DistanceOptions) -> Vec<BlockDistance> {
    paths
        .iter()
        .map(|bp| {
            let d = distance_to_spline(&bp.path, p, opts);
            BlockDistance {
                block_id: bp.block_id,
                distance: d.distance,
                parameter: d.parameter,
            }
        })
        .collect()
}

/// Lowest id among the entries within the tie tolerance of the minimum.
fn argmin(table: &[BlockDistance]) -> &BlockDistance {
    let min = table.iter().map(|e| e.distance).fold(f64::INFINITY, f64::min);
    table
        .iter()
        .filter(|e| e.distance <= min + TIE_TOLERANCE)
        .min_by_key(|e| e.block_id)
        .expect("non-empty table")
}

/// The block whose path is closest to `p`.
pub fn select_block(p: &Vector3<f64>, paths: &[BlockPath], opts: &DistanceOptions) -> Result<BlockSelection> {
    select_block_with_hysteresis(p, paths, opts, None, 0.0)
}

/// Like [`select_block`], but keeps `current` unless another block is
/// closer by more than `hysteresis`.
pub fn select_block_with_hysteresis(
    p: &Vector3<f64>,
    paths: &[BlockPath],
    opts: &DistanceOptions,
    current: Option<u32>,
    hysteresis: f64,
) -> Result<BlockSelection> {
    if paths.is_empty() {
        return Err(Error::arg("no block paths to select from"));
    }
    let table = distance_table(p, paths, opts);
    let best = argmin(&table);
    let chosen = match current.and_then(|id| table.iter().find(|e| e.block_id == id)) {
        Some(cur) if hysteresis > 0.0 && cur.distance <= best.distance + hysteresis => cur,
        _ => best,
    };
    Ok(BlockSelection {
        block_id: chosen.block_id,
        distance: chosen.distance,
        parameter: chosen.parameter,
        table: table.clone(),
    })
}

/// Independent selections for a batch of viewer positions, in input order.
pub fn select_many(
    positions: &[Vector3<f64>],
    paths: &[BlockPath],
    opts: &DistanceOptions,
) -> Result<Vec<BlockSelection>> {
    positions
        .par_iter()
        .map(|p| select_block(p, paths, opts))
        .collect()
}

/// Sequential selections along a viewer path, carrying the hysteresis state.
pub fn select_sequence(
    positions: &[Vector3<f64>],
    paths: &[BlockPath],
    opts: &DistanceOptions,
    hysteresis: f64,
) -> Result<Vec<BlockSelection>> {
    let mut current = None;
    positions
        .iter()
        .map(|p| {
            let s = select_block_with_hysteresis(p, paths, opts, current, hysteresis)?;
            current = Some(s.block_id);
            Ok(s)
        })
        .collect()
}
