//! Sim(3) registration of adjacent blocks: a coarse estimate from camera
//! trajectories refined by trimmed ICP with scale.

mod kdtree;
mod umeyama;

pub use kdtree::{KdTree, Neighbor};
pub use umeyama::{umeyama, umeyama_with, ScaleEstimator};

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::SimilarityResult;
use crate::scene_io::{BlockManifest, FrameRange, PointCloud, Sim3Transform, Trajectory};

pub const DEFAULT_KEEP_FRACTION: f64 = 0.9;
pub const DEFAULT_MAX_ICP_ITERATIONS: usize = 50;
pub const DEFAULT_ICP_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_MIN_MATCHES: usize = 15;
const MIN_CLOUD_POINTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapSource {
    /// Consecutive blocks of one flight share frames listed in the manifest.
    Manifest,
    /// Blocks of different flights, matched by image similarity.
    Similarity,
}

/// Frames of each block that see the same part of the scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapSpec {
    pub block1: FrameRange,
    pub block2: FrameRange,
    pub source: OverlapSource,
}

impl OverlapSpec {
    /// Checks that both ranges are non-empty and hit poses of their blocks.
    pub fn validate(&self, traj1: &Trajectory, traj2: &Trajectory) -> Result<()> {
        for (range, traj, which) in [(&self.block1, traj1, 1), (&self.block2, traj2, 2)] {
            if range.is_empty() {
                return Err(Error::arg(format!("empty overlap range for block {which}")));
            }
            if traj.range(range.start, range.end).is_empty() {
                return Err(Error::data(format!(
                    "overlap [{}, {}] has no poses in block {}",
                    range.start, range.end, traj.block_id
                )));
            }
        }
        Ok(())
    }
}

/// Overlap of two consecutive blocks of the same flight.
pub fn overlap_from_manifests(first: &BlockManifest, second: &BlockManifest) -> Result<OverlapSpec> {
    if first.flight_id != second.flight_id {
        return Err(Error::arg(format!(
            "blocks {} and {} belong to different flights",
            first.block_id, second.block_id
        )));
    }
    let shared = first
        .overlap_next
        .or(second.overlap_prev)
        .or_else(|| first.frame_range.intersect(&second.frame_range))
        .ok_or_else(|| {
            Error::NoOverlap(format!("blocks {} and {} share no frames", first.block_id, second.block_id))
        })?;
    Ok(OverlapSpec {
        block1: shared,
        block2: shared,
        source: OverlapSource::Manifest,
    })
}

/// Overlap across flights: `start` locates block 2's first frame inside
/// block 1, `end` locates block 1's last frame inside block 2.
pub fn overlap_from_similarity(
    traj1: &Trajectory,
    traj2: &Trajectory,
    start: &SimilarityResult,
    end: &SimilarityResult,
    min_matches: usize,
) -> Result<OverlapSpec> {
    for r in [start, end] {
        if r.match_count < min_matches {
            return Err(Error::NoOverlap(format!(
                "best similarity match has {} features, need {min_matches}",
                r.match_count
            )));
        }
    }
    let last1 = traj1.last_frame().ok_or_else(|| Error::data("block 1 has no poses"))?;
    let first2 = traj2.first_frame().ok_or_else(|| Error::data("block 2 has no poses"))?;
    let spec = OverlapSpec {
        block1: FrameRange::new(start.frame.min(last1), last1)?,
        block2: FrameRange::new(first2, end.frame.max(first2))?,
        source: OverlapSource::Similarity,
    };
    spec.validate(traj1, traj2)?;
    Ok(spec)
}

/// Ratio of mean step lengths, block 1 over block 2.
pub fn coarse_scale(traj1: &Trajectory, traj2: &Trajectory) -> Result<f64> {
    let d1 = traj1.mean_step_length()?;
    let d2 = traj2.mean_step_length()?;
    if d2 < 1e-12 {
        return Err(Error::Degenerate(format!("block {} trajectory is stationary", traj2.block_id)));
    }
    Ok(d1 / d2)
}

/// Projection of the arithmetic mean of rotation matrices onto SO(3).
pub fn chordal_mean(rotations: &[Matrix3<f64>]) -> Result<Matrix3<f64>> {
    if rotations.is_empty() {
        return Err(Error::arg("no rotations to average"));
    }
    let mean = rotations.iter().sum::<Matrix3<f64>>() / rotations.len() as f64;
    let svd = mean.svd(true, true);
    let sv = svd.singular_values;
    if sv.min() <= 1e-9 * sv.max().max(1e-300) {
        return Err(Error::Degenerate("rotation mean is rank deficient".into()));
    }
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut fix = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    Ok(u * fix * v_t)
}

/// Coarse transform taking block 2 coordinates into block 1: mean
/// overlap orientations and centers are brought into agreement.
pub fn coarse_rt(
    traj1: &Trajectory,
    traj2: &Trajectory,
    overlap: &OverlapSpec,
    scale: f64,
) -> Result<Sim3Transform> {
    overlap.validate(traj1, traj2)?;
    let mean_of = |traj: &Trajectory, range: &FrameRange| -> Result<(Matrix3<f64>, Vector3<f64>)> {
        let poses = traj.range(range.start, range.end);
        let rots: Vec<Matrix3<f64>> = poses.iter().map(|p| *p.cam_to_world().to_rotation_matrix().matrix()).collect();
        let center = poses.iter().map(|p| p.center()).sum::<Vector3<f64>>() / poses.len() as f64;
        Ok((chordal_mean(&rots)?, center))
    };
    let (r1, c1) = mean_of(traj1, &overlap.block1)?;
    let (r2, c2) = mean_of(traj2, &overlap.block2)?;
    let dr = r1 * r2.transpose();
    let dr = UnitQuaternion::from_matrix(&dr);
    let dt = c1 - dr * c2 * scale;
    Sim3Transform::new(scale, dr, dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpOptions {
    pub keep_fraction: f64,
    pub max_iterations: usize,
    /// Relative RMSE change that ends the iteration.
    pub tolerance: f64,
    pub scale: ScaleEstimator,
}

impl Default for IcpOptions {
    fn default() -> Self {
        Self {
            keep_fraction: DEFAULT_KEEP_FRACTION,
            max_iterations: DEFAULT_MAX_ICP_ITERATIONS,
            tolerance: DEFAULT_ICP_TOLERANCE,
            scale: ScaleEstimator::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub overlap: Option<OverlapSpec>,
    pub coarse: Sim3Transform,
    pub fine: Sim3Transform,
    pub icp_iterations: usize,
    pub converged: bool,
    /// Trimmed RMSE of the coarse transform on its own correspondences.
    pub initial_rmse: f64,
    pub final_rmse: f64,
    pub correspondences: usize,
    /// Trimmed RMSE after each update.
    pub rmse_history: Vec<f64>,
}

/// Trimmed ICP with a closed-form similarity update, starting from `init`.
/// The result maps `source` onto `target`.
pub fn icp_refine(
    source: &PointCloud,
    target: &PointCloud,
    init: &Sim3Transform,
    opts: &IcpOptions,
) -> Result<AlignmentReport> {
    if source.len() < MIN_CLOUD_POINTS || target.len() < MIN_CLOUD_POINTS {
        return Err(Error::arg(format!(
            "ICP needs at least {MIN_CLOUD_POINTS} points per cloud (got {} and {})",
            source.len(),
            target.len()
        )));
    }
    if !(opts.keep_fraction > 0.0 && opts.keep_fraction <= 1.0) {
        return Err(Error::arg(format!("keep fraction {} outside (0, 1]", opts.keep_fraction)));
    }
    let tree = KdTree::new(&target.points);

    let mut current = *init;
    let mut history = Vec::new();
    let mut initial_rmse = f64::NAN;
    let mut prev = f64::NAN;
    let mut converged = false;
    let mut used = 0;

    for iteration in 0..opts.max_iterations {
        let matches = correspond(&source.points, &tree, &current, opts.keep_fraction);
        if matches.len() < 3 {
            return Err(Error::Registration(format!("{} correspondences survive trimming", matches.len())));
        }
        let before = (matches.iter().map(|m| m.2).sum::<f64>() / matches.len() as f64).sqrt();
        if iteration == 0 {
            initial_rmse = before;
            prev = before;
        }
        let src: Vec<Vector3<f64>> = matches.iter().map(|m| source.points[m.0]).collect();
        let dst: Vec<Vector3<f64>> = matches.iter().map(|m| *tree.point(m.1)).collect();
        let update = umeyama_with(&src, &dst, opts.scale)?;
        let after = (src.iter().zip(&dst).map(|(a, b)| (update.apply(a) - b).norm_squared()).sum::<f64>()
            / src.len() as f64)
            .sqrt();
        if !after.is_finite() {
            return Err(Error::Numerical("ICP residual is not finite".into()));
        }
        // Re-matching can only shorten distances, so a worse update means
        // the least-squares solve lost precision; keep the previous estimate.
        if after <= before {
            current = update;
            history.push(after);
        } else {
            history.push(before);
        }
        used = matches.len();
        let last = *history.last().unwrap();
        if (prev - last).abs() <= opts.tolerance * prev.max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
        prev = last;
    }
    Ok(AlignmentReport {
        overlap: None,
        coarse: *init,
        fine: current,
        icp_iterations: history.len(),
        converged,
        initial_rmse,
        final_rmse: history.last().copied().unwrap_or(initial_rmse),
        correspondences: used,
        rmse_history: history,
    })
}

/// (source index, target index, squared distance) for the closest
/// `keep_fraction` of the pairs.
fn correspond(
    points: &[Vector3<f64>],
    tree: &KdTree,
    g: &Sim3Transform,
    keep_fraction: f64,
) -> Vec<(usize, usize, f64)> {
    use rayon::prelude::*;
    let mut matches: Vec<(usize, usize, f64)> = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let nn = tree.nearest(&g.apply(p)).expect("non-empty target");
            (i, nn.index, nn.distance_squared)
        })
        .collect();
    let keep = ((matches.len() as f64 * keep_fraction).ceil() as usize).clamp(1, matches.len());
    if keep < matches.len() {
        matches.select_nth_unstable_by(keep, |a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)));
        matches.truncate(keep);
        matches.sort_unstable_by_key(|m| m.0);
    }
    matches
}

/// Camera poses and reconstructed points of one block.
#[derive(Debug, Clone)]
pub struct BlockData {
    pub trajectory: Trajectory,
    pub cloud: PointCloud,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignOptions {
    pub icp: IcpOptions,
    /// Register only the block-2 points nearest to its overlap cameras;
    /// block 1 keeps its whole cloud so those points find their partners.
    pub crop_to_overlap: bool,
    pub min_matches: usize,
}

impl Default for AlignOptions {
    fn default() -> Self {
        Self {
            icp: IcpOptions::default(),
            crop_to_overlap: true,
            min_matches: DEFAULT_MIN_MATCHES,
        }
    }
}

/// Points whose nearest camera center of the block belongs to `range`.
/// Falls back to the whole cloud when too few points qualify.
pub fn crop_to_frames(block: &BlockData, range: &FrameRange) -> PointCloud {
    let poses = block.trajectory.poses();
    let centers = block.trajectory.centers();
    let tree = KdTree::new(&centers);
    let cropped = block.cloud.select(|_, p| {
        tree.nearest(p)
            .is_some_and(|nn| range.contains(poses[nn.index].frame_id))
    });
    if cropped.len() < MIN_CLOUD_POINTS {
        block.cloud.clone()
    } else {
        cropped
    }
}

/// Full pairwise registration: scale and rigid coarse estimates from the
/// trajectories, then ICP on the clouds. The result maps block 2 into block 1.
pub fn align_blocks(
    block1: &BlockData,
    block2: &BlockData,
    overlap: &OverlapSpec,
    opts: &AlignOptions,
) -> Result<AlignmentReport> {
    let scale = coarse_scale(&block1.trajectory, &block2.trajectory)?;
    let coarse = coarse_rt(&block1.trajectory, &block2.trajectory, overlap, scale)?;
    let (source, target) = if opts.crop_to_overlap {
        (crop_to_frames(block2, &overlap.block2), block1.cloud.clone())
    } else {
        (block2.cloud.clone(), block1.cloud.clone())
    };
    let mut report = icp_refine(&source, &target, &coarse, &opts.icp)?;
    report.overlap = Some(*overlap);
    Ok(report)
}

/// Global transforms from pairwise ones: block 0 is the reference and each
/// `pairwise[k]` maps block k+1 into block k.
pub fn chain_transforms(pairwise: &[Sim3Transform]) -> Vec<Sim3Transform> {
    let mut out = Vec::with_capacity(pairwise.len() + 1);
    out.push(Sim3Transform::identity());
    for d in pairwise {
        let prev = *out.last().unwrap();
        out.push(prev.compose(d));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_io::CameraPose;
    use proptest::prelude::*;

    fn traj(block_id: u32, centers: &[Vector3<f64>]) -> Trajectory {
        let poses = centers
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let yaw = UnitQuaternion::from_euler_angles(0.1 * i as f64, 0.0, 0.3 * i as f64);
                CameraPose::from_center(i as u32, yaw, *c)
            })
            .collect();
        Trajectory::new(block_id, poses).unwrap()
    }

    fn wiggle(n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|i| {
                let t = i as f64;
                Vector3::new(t, (0.5 * t).sin(), 0.2 * (0.3 * t).cos())
            })
            .collect()
    }

    fn moved(t: &Trajectory, g: &Sim3Transform, block_id: u32) -> Trajectory {
        Trajectory::new(block_id, t.poses().iter().map(|p| g.apply_pose(p)).collect()).unwrap()
    }

    #[test]
    fn scale_examples() {
        let a = traj(0, &[Vector3::zeros(), Vector3::x(), 2.0 * Vector3::x()]);
        let b = traj(1, &[Vector3::zeros(), 0.5 * Vector3::x(), Vector3::x()]);
        assert_eq!(coarse_scale(&a, &a).unwrap(), 1.0);
        assert_eq!(coarse_scale(&a, &b).unwrap(), 2.0);
        let still = traj(1, &[Vector3::zeros(); 1]);
        assert!(coarse_scale(&a, &still).is_err());
    }

    #[test]
    fn stationary_is_degenerate() {
        let a = traj(0, &wiggle(5));
        let poses = (0..3)
            .map(|i| CameraPose::from_center(i, UnitQuaternion::identity(), Vector3::zeros()))
            .collect();
        let b = Trajectory::new(1, poses).unwrap();
        assert!(matches!(coarse_scale(&a, &b), Err(Error::Degenerate(_))));
    }

    fn full_overlap(t: &Trajectory) -> OverlapSpec {
        let r = FrameRange::new(t.first_frame().unwrap(), t.last_frame().unwrap()).unwrap();
        OverlapSpec {
            block1: r,
            block2: r,
            source: OverlapSource::Manifest,
        }
    }

    #[test]
    fn coarse_rt_examples() {
        let a = traj(0, &wiggle(10));
        let ov = full_overlap(&a);
        let same = coarse_rt(&a, &a, &ov, 1.0).unwrap();
        let (_, ang, tn) = same.distance_from_identity();
        assert!(ang < 1e-12 && tn < 1e-12);

        let shift = Sim3Transform::new(1.0, UnitQuaternion::identity(), Vector3::new(3.0, 0.0, 0.0)).unwrap();
        let b = moved(&a, &shift, 1);
        let est = coarse_rt(&a, &b, &ov, coarse_scale(&a, &b).unwrap()).unwrap();
        assert!((est.t - Vector3::new(-3.0, 0.0, 0.0)).norm() < 1e-12);
        assert!(est.rotation_angle() < 1e-12);

        let rot = Sim3Transform::new(
            1.0,
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2),
            Vector3::zeros(),
        )
        .unwrap();
        let c = moved(&a, &rot, 1);
        let est = coarse_rt(&a, &c, &ov, 1.0).unwrap();
        let (ds, ang, tn) = est.compose(&rot).distance_from_identity();
        assert!(ds < 1e-12 && ang < 1e-6 && tn < 1e-6);
    }

    #[test]
    fn identical_clouds_converge_immediately() {
        let pts: Vec<_> = (0..200)
            .map(|i| {
                let t = i as f64 * 0.37;
                Vector3::new(t.sin() * 4.0, (1.3 * t).cos() * 2.0, (0.2 * t).sin())
            })
            .collect();
        let cloud = PointCloud::new(pts);
        let r = icp_refine(&cloud, &cloud, &Sim3Transform::identity(), &IcpOptions::default()).unwrap();
        let (ds, ang, tn) = r.fine.distance_from_identity();
        assert!(ds < 1e-9 && ang < 1e-9 && tn < 1e-9, "{:?}", r.fine);
        assert_eq!(r.icp_iterations, 1);
        assert!(r.converged);
    }

    #[test]
    fn icp_preconditions() {
        let small = PointCloud::new(vec![Vector3::zeros(); 5]);
        let big = PointCloud::new(wiggle(20));
        assert!(icp_refine(&small, &big, &Sim3Transform::identity(), &IcpOptions::default()).is_err());
        let bad = IcpOptions {
            keep_fraction: 0.0,
            ..Default::default()
        };
        assert!(icp_refine(&big, &big, &Sim3Transform::identity(), &bad).is_err());
    }

    #[test]
    fn manifest_overlap() {
        let m1 = BlockManifest {
            block_id: 0,
            flight_id: 0,
            frame_range: FrameRange::new(0, 9).unwrap(),
            overlap_prev: None,
            overlap_next: Some(FrameRange::new(7, 9).unwrap()),
        };
        let m2 = BlockManifest {
            block_id: 1,
            flight_id: 0,
            frame_range: FrameRange::new(7, 16).unwrap(),
            overlap_prev: Some(FrameRange::new(7, 9).unwrap()),
            overlap_next: None,
        };
        let ov = overlap_from_manifests(&m1, &m2).unwrap();
        assert_eq!(ov.block1, FrameRange::new(7, 9).unwrap());
        let other = BlockManifest { flight_id: 1, ..m2 };
        assert!(overlap_from_manifests(&m1, &other).is_err());
    }

    #[test]
    fn similarity_overlap_rejects_weak_matches() {
        let a = traj(0, &wiggle(10));
        let b = traj(1, &wiggle(10));
        let hit = |frame, count| SimilarityResult {
            frame,
            match_count: count,
            ..SimilarityResult::default()
        };
        let ov = overlap_from_similarity(&a, &b, &hit(6, 40), &hit(3, 40), 15).unwrap();
        assert_eq!((ov.block1.start, ov.block1.end), (6, 9));
        assert_eq!((ov.block2.start, ov.block2.end), (0, 3));
        assert!(matches!(
            overlap_from_similarity(&a, &b, &hit(6, 14), &hit(3, 40), 15),
            Err(Error::NoOverlap(_))
        ));
    }

    #[test]
    fn chaining_composes_left_to_right() {
        let d1 = Sim3Transform::new(2.0, UnitQuaternion::identity(), Vector3::x()).unwrap();
        let d2 = Sim3Transform::new(1.0, UnitQuaternion::from_euler_angles(0.0, 0.0, 1.0), Vector3::y()).unwrap();
        let g = chain_transforms(&[d1, d2]);
        assert_eq!(g.len(), 3);
        let p = Vector3::new(0.3, -1.0, 2.0);
        assert!((g[2].apply(&p) - d1.apply(&d2.apply(&p))).norm() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn scale_equivariance(alpha in 0.01f64..100.0) {
            let a = traj(0, &wiggle(12));
            let g = Sim3Transform::new(alpha, UnitQuaternion::identity(), Vector3::zeros()).unwrap();
            let b = moved(&a, &g, 1);
            let ds = coarse_scale(&a, &b).unwrap();
            prop_assert!((ds * alpha - 1.0).abs() < 1e-12);
        }

        #[test]
        fn coarse_maps_mean_centers(
            s in 0.5f64..2.0,
            rv in prop::array::uniform3(-0.5f64..0.5),
            t in prop::array::uniform3(-10.0f64..10.0),
        ) {
            let a = traj(0, &wiggle(12));
            let g = Sim3Transform::new(s, UnitQuaternion::from_scaled_axis(Vector3::from(rv)), Vector3::from(t)).unwrap();
            let b = moved(&a, &g, 1);
            let ov = full_overlap(&a);
            let est = coarse_rt(&a, &b, &ov, coarse_scale(&a, &b).unwrap()).unwrap();
            let c1 = a.centers().iter().sum::<Vector3<f64>>() / 12.0;
            let c2 = b.centers().iter().sum::<Vector3<f64>>() / 12.0;
            prop_assert!((est.apply(&c2) - c1).norm() < 1e-12 * (1.0 + c1.norm()));
            let (ds, ang, tn) = est.compose(&g).distance_from_identity();
            prop_assert!(ds < 1e-9 && ang < 1e-9 && tn < 1e-9);
        }

        #[test]
        fn icp_rmse_never_increases(
            s in 0.8f64..1.25,
            rv in prop::array::uniform3(-0.1f64..0.1),
            seed in 0u64..1000,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<_> = (0..300)
                .map(|_| Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0)))
                .collect();
            let target = PointCloud::new(pts);
            let g = Sim3Transform::new(s, UnitQuaternion::from_scaled_axis(Vector3::from(rv)), Vector3::new(0.2, 0.1, 0.0)).unwrap();
            let source = target.transformed(&g.inverse());
            let r = icp_refine(&source, &target, &Sim3Transform::identity(), &IcpOptions::default()).unwrap();
            prop_assert!(r.final_rmse <= r.initial_rmse);
            for w in r.rmse_history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9);
            }
            prop_assert!(r.icp_iterations <= DEFAULT_MAX_ICP_ITERATIONS);
        }
    }
}
