use blockscape::align::{align_blocks, chain_transforms, coarse_rt, coarse_scale, crop_to_frames, icp_refine, AlignOptions, IcpOptions};
use blockscape::scene_io::{PointCloud, Sim3Transform};
use blockscape::synth::{gen_scene, SceneOptions, TrajectoryKind};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn within(residual: &Sim3Transform, diameter: f64) -> bool {
    let (ds, da, dt) = residual.distance_from_identity();
    ds <= 1e-3 && da.to_degrees() <= 0.05 && dt <= 1e-3 * diameter
}

fn with_outliers(cloud: &PointCloud, fraction: f64, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut lo, mut hi) = (cloud.points[0], cloud.points[0]);
    for p in &cloud.points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let mut out = cloud.clone();
    let n = out.len();
    let count = (fraction * n as f64).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..count {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
        out.points[idx[i]] = Vector3::new(
            rng.random_range(lo.x..=hi.x),
            rng.random_range(lo.y..=hi.y),
            rng.random_range(lo.z..=hi.z),
        );
    }
    out
}

#[test]
fn ten_percent_outliers_are_trimmed_away() {
    for seed in 0..10 {
        let scene = gen_scene(&SceneOptions::default(), seed).unwrap();
        let ov = scene.overlap(0).unwrap();
        let (b1, b2) = (&scene.blocks[0], &scene.blocks[1]);
        let scale = coarse_scale(&b1.trajectory, &b2.trajectory).unwrap();
        let coarse = coarse_rt(&b1.trajectory, &b2.trajectory, &ov, scale).unwrap();
        let source = with_outliers(&crop_to_frames(b2, &ov.block2), 0.1, seed);
        let report = icp_refine(&source, &b1.cloud, &coarse, &IcpOptions::default()).unwrap();
        let residual = report.fine.compose(&scene.expected_pairwise(1).inverse());
        assert!(within(&residual, scene.diameter), "seed {seed}: {:?}", residual.distance_from_identity());
    }
}

#[test]
fn rmse_never_increases() {
    for seed in 0..10 {
        let opts = SceneOptions {
            noise: 0.004,
            kind: TrajectoryKind::Lawnmower,
            ..SceneOptions::default()
        };
        let scene = gen_scene(&opts, seed).unwrap();
        let r = align_blocks(&scene.blocks[0], &scene.blocks[1], &scene.overlap(0).unwrap(), &AlignOptions::default())
            .unwrap();
        for w in r.rmse_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "seed {seed}: {:?}", r.rmse_history);
        }
        assert!(r.final_rmse <= r.initial_rmse + 1e-9);
    }
}

#[test]
fn chained_blocks_land_in_the_global_frame() {
    for (kind, seed) in [(TrajectoryKind::Loop, 1), (TrajectoryKind::Lawnmower, 2), (TrajectoryKind::StackedLoops, 3)] {
        let opts = SceneOptions {
            kind,
            frames: 200,
            blocks: 4,
            ..SceneOptions::default()
        };
        let scene = gen_scene(&opts, seed).unwrap();
        let pairwise: Vec<Sim3Transform> = (0..3)
            .map(|k| {
                align_blocks(&scene.blocks[k], &scene.blocks[k + 1], &scene.overlap(k).unwrap(), &AlignOptions::default())
                    .unwrap()
                    .fine
            })
            .collect();
        let global = chain_transforms(&pairwise);
        for (k, g) in global.iter().enumerate() {
            // Block k's frame into block 0's, then block 0 is the global frame.
            let residual = g.compose(&scene.truth[k]);
            assert!(within(&residual, scene.diameter), "{kind:?} block {k}: {:?}", residual.distance_from_identity());
        }
    }
}

#[test]
fn recovery_holds_across_the_parameter_box() {
    for seed in 0..12u64 {
        let opts = SceneOptions {
            points: 2000 + seed as usize * 700,
            ..SceneOptions::default()
        };
        let scene = gen_scene(&opts, 100 + seed).unwrap();
        let g = scene.truth[1];
        assert!((0.5..=2.0).contains(&g.s));
        assert!(g.rotation_angle().to_degrees() <= 30.0 + 1e-9);
        let r = align_blocks(&scene.blocks[0], &scene.blocks[1], &scene.overlap(0).unwrap(), &AlignOptions::default())
            .unwrap();
        assert!(within(&r.fine.compose(&scene.expected_pairwise(1).inverse()), scene.diameter));
    }
}

#[test]
fn blocks_that_see_past_their_overlap_still_align() {
    for seed in 0..6 {
        let opts = SceneOptions {
            visibility: Some(5.0),
            ..SceneOptions::default()
        };
        let scene = gen_scene(&opts, seed).unwrap();
        let shared = scene.blocks[0].cloud.len() + scene.blocks[1].cloud.len();
        assert!(shared > scene.cloud.len(), "visibility should duplicate overlap points");
        let r = align_blocks(&scene.blocks[0], &scene.blocks[1], &scene.overlap(0).unwrap(), &AlignOptions::default())
            .unwrap();
        assert!(within(&r.fine.compose(&scene.expected_pairwise(1).inverse()), scene.diameter), "seed {seed}");
    }
}
