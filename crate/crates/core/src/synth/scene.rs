use nalgebra::{Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::trajectory::{gen_centers, poses_along, TrajectoryKind, TrajectoryOptions};
use crate::align::{overlap_from_manifests, BlockData, KdTree, OverlapSpec};
use crate::error::{Error, Result};
use crate::partition::{plan_multi_flight, PartitionPlan};
use crate::scene_io::{PointCloud, Sim3Transform, Trajectory};

/// Moves a block by `g` and adds isotropic Gaussian noise of standard
/// deviation `sigma` to the moved points.
pub fn perturb_block(
    traj: &Trajectory,
    cloud: &PointCloud,
    g: &Sim3Transform,
    sigma: f64,
    seed: u64,
) -> Result<(Trajectory, PointCloud)> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::arg(format!("noise sigma {sigma} must be non-negative")));
    }
    if *g == Sim3Transform::identity() && sigma == 0.0 {
        return Ok((traj.clone(), cloud.clone()));
    }
    let poses = traj.poses().iter().map(|p| g.apply_pose(p)).collect();
    let moved = Trajectory::new(traj.block_id, poses)?;
    let mut out = cloud.transformed(g);
    if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).expect("valid sigma");
        for p in &mut out.points {
            *p += Vector3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }
    Ok((moved, out))
}

/// Random similarity: log-uniform scale in `scale_range`, rotation about a
/// uniform axis by at most `max_angle` radians, translation of length at
/// most `max_translation` in a uniform direction.
pub fn random_sim3<R: Rng>(rng: &mut R, scale_range: (f64, f64), max_angle: f64, max_translation: f64) -> Sim3Transform {
    let (lo, hi) = scale_range;
    let s = (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp();
    let axis = random_unit(rng);
    let angle = rng.random::<f64>() * max_angle;
    let dir = random_unit(rng);
    let t = dir.into_inner() * (rng.random::<f64>() * max_translation);
    Sim3Transform::new(s, UnitQuaternion::from_axis_angle(&axis, angle), t).expect("finite positive scale")
}

fn random_unit<R: Rng>(rng: &mut R) -> Unit<Vector3<f64>> {
    loop {
        let v = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        if let Some(u) = Unit::try_new(v, 1e-6) {
            return u;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneOptions {
    pub kind: TrajectoryKind,
    pub frames: usize,
    pub step: f64,
    pub blocks: u32,
    pub overlap: f64,
    pub points: usize,
    /// Half-size of the box around a camera that scene points fill, in steps.
    pub spread: f64,
    /// Distance in steps within which a block's cameras reconstruct a point.
    /// `None` gives each point only to the blocks holding its nearest frame.
    pub visibility: Option<f64>,
    /// Point noise as a fraction of the scene diameter.
    pub noise: f64,
    /// Fraction of each block's points replaced by uniform outliers.
    pub outliers: f64,
    pub speed_jitter: f64,
    pub scale_range: (f64, f64),
    pub max_rotation_deg: f64,
    /// Largest translation as a fraction of the scene diameter.
    pub max_translation: f64,
}

impl Default for SceneOptions {
    fn default() -> Self {
        Self {
            kind: TrajectoryKind::Loop,
            frames: 120,
            step: 1.0,
            blocks: 2,
            overlap: 0.25,
            points: 4000,
            spread: 3.0,
            visibility: None,
            noise: 0.0,
            outliers: 0.0,
            speed_jitter: 0.1,
            scale_range: (0.5, 2.0),
            max_rotation_deg: 30.0,
            max_translation: 0.5,
        }
    }
}

/// A trajectory, its scene points and a partition into blocks, each block
/// moved into its own frame by a known similarity.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub seed: u64,
    pub options: SceneOptions,
    pub trajectory: Trajectory,
    pub cloud: PointCloud,
    pub diameter: f64,
    pub plan: PartitionPlan,
    /// Global-to-block transforms; block 0 keeps the global frame.
    pub truth: Vec<Sim3Transform>,
    pub blocks: Vec<BlockData>,
}

impl SyntheticScene {
    /// Overlap between block `k` and block `k + 1`.
    pub fn overlap(&self, k: usize) -> Result<OverlapSpec> {
        overlap_from_manifests(&self.plan.blocks[k], &self.plan.blocks[k + 1])
    }

    /// Ground-truth poses of block `k` in the global frame.
    pub fn global_block_trajectory(&self, k: usize) -> Result<Trajectory> {
        let r = self.plan.blocks[k].frame_range;
        Trajectory::new(self.plan.blocks[k].block_id, self.trajectory.range(r.start, r.end).to_vec())
    }

    /// The transform that should come out of registering block `k` onto
    /// block `k − 1`: block k's frame into block k−1's frame.
    pub fn expected_pairwise(&self, k: usize) -> Sim3Transform {
        self.truth[k - 1].compose(&self.truth[k].inverse())
    }
}

pub fn gen_scene(opts: &SceneOptions, seed: u64) -> Result<SyntheticScene> {
    if opts.points < 10 {
        return Err(Error::arg("a scene needs at least 10 points"));
    }
    if !(opts.spread > 0.0) || !(0.0..1.0).contains(&opts.outliers) || !(opts.noise >= 0.0) {
        return Err(Error::arg("invalid spread, noise or outlier fraction"));
    }
    let (lo, hi) = opts.scale_range;
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::arg(format!("invalid scale range ({lo}, {hi})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let traj_opts = TrajectoryOptions {
        speed_jitter: opts.speed_jitter,
        ..TrajectoryOptions::default()
    };
    let centers = gen_centers(opts.kind, opts.frames, opts.step, rng.random(), &traj_opts)?;
    let trajectory = Trajectory::new(0, poses_along(&centers, 0))?;
    let plan = plan_multi_flight(&[opts.frames as u32], &[opts.blocks], opts.overlap)?;

    let half = opts.spread * opts.step;
    let points: Vec<Vector3<f64>> = (0..opts.points)
        .map(|_| {
            let c = centers[rng.random_range(0..centers.len())];
            c + Vector3::new(
                rng.random_range(-half..half),
                rng.random_range(-half..half),
                rng.random_range(-half..half),
            )
        })
        .collect();
    let cloud = PointCloud::new(points);
    let diameter = cloud.diameter();
    let tree = KdTree::new(&centers);
    let nearest: Vec<u32> = cloud
        .points
        .iter()
        .map(|p| tree.nearest(p).expect("non-empty").index as u32)
        .collect();

    let mut truth = Vec::with_capacity(plan.blocks.len());
    let mut blocks = Vec::with_capacity(plan.blocks.len());
    for (k, manifest) in plan.blocks.iter().enumerate() {
        let g = if k == 0 {
            Sim3Transform::identity()
        } else {
            random_sim3(
                &mut rng,
                opts.scale_range,
                opts.max_rotation_deg.to_radians(),
                opts.max_translation * diameter,
            )
        };
        let r = manifest.frame_range;
        let traj = Trajectory::new(manifest.block_id, trajectory.range(r.start, r.end).to_vec())?;
        let mut local = match opts.visibility {
            None => cloud.select(|i, _| r.contains(nearest[i])),
            Some(range) => {
                let own = KdTree::new(&centers[r.start as usize..=r.end as usize]);
                let limit = (range * opts.step).powi(2);
                cloud.select(|_, p| own.nearest(p).is_some_and(|n| n.distance_squared <= limit))
            }
        };
        if opts.noise > 0.0 {
            let normal = Normal::new(0.0, opts.noise * diameter).expect("valid sigma");
            for p in &mut local.points {
                *p += Vector3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
            }
        }
        if opts.outliers > 0.0 && !local.is_empty() {
            let (mut bmin, mut bmax) = (local.points[0], local.points[0]);
            for p in &local.points {
                bmin = bmin.inf(p);
                bmax = bmax.sup(p);
            }
            let n = local.len();
            let count = (opts.outliers * n as f64).round() as usize;
            for _ in 0..count {
                let i = rng.random_range(0..n);
                local.points[i] = Vector3::new(
                    rng.random_range(bmin.x..=bmax.x),
                    rng.random_range(bmin.y..=bmax.y),
                    rng.random_range(bmin.z..=bmax.z),
                );
            }
        }
        let (traj, local) = perturb_block(&traj, &local, &g, 0.0, 0)?;
        truth.push(g);
        blocks.push(BlockData {
            trajectory: traj,
            cloud: local,
        });
    }
    Ok(SyntheticScene {
        seed,
        options: opts.clone(),
        trajectory,
        cloud,
        diameter,
        plan,
        truth,
        blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::{align_blocks, AlignOptions};

    #[test]
    fn identity_perturbation_is_a_no_op() {
        let s = gen_scene(&SceneOptions::default(), 1).unwrap();
        let b = &s.blocks[0];
        let (t, c) = perturb_block(&b.trajectory, &b.cloud, &Sim3Transform::identity(), 0.0, 0).unwrap();
        assert_eq!(t, b.trajectory);
        assert_eq!(c, b.cloud);
    }

    #[test]
    fn pure_scale_doubles_distances() {
        let s = gen_scene(&SceneOptions::default(), 2).unwrap();
        let b = &s.blocks[0];
        let g = Sim3Transform::new(2.0, UnitQuaternion::identity(), Vector3::zeros()).unwrap();
        let (_, c) = perturb_block(&b.trajectory, &b.cloud, &g, 0.0, 0).unwrap();
        for i in (0..b.cloud.len()).step_by(97) {
            let j = (i * 7 + 3) % b.cloud.len();
            let before = (b.cloud.points[i] - b.cloud.points[j]).norm();
            let after = (c.points[i] - c.points[j]).norm();
            assert!((after - 2.0 * before).abs() <= 1e-12 * (1.0 + after));
        }
    }

    #[test]
    fn scenes_are_reproducible() {
        let a = gen_scene(&SceneOptions::default(), 9).unwrap();
        let b = gen_scene(&SceneOptions::default(), 9).unwrap();
        assert_eq!(a.cloud, b.cloud);
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.blocks[1].cloud, b.blocks[1].cloud);
        assert_eq!(a.plan, b.plan);
    }

    #[test]
    fn alignment_undoes_the_perturbation() {
        let s = gen_scene(&SceneOptions::default(), 4).unwrap();
        let ov = s.overlap(0).unwrap();
        let r = align_blocks(&s.blocks[0], &s.blocks[1], &ov, &AlignOptions::default()).unwrap();
        let residual = r.fine.compose(&s.truth[1]);
        let (ds, ang, tn) = residual.distance_from_identity();
        assert!(ds < 1e-3 && ang.to_degrees() < 0.05 && tn < 1e-3 * s.diameter, "{ds} {ang} {tn} {r:?}");
    }
}
