use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn blockscape(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blockscape"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synthetic_run_recovers_four_blocks() {
    let tmp = tempfile::tempdir().unwrap();
    let out = blockscape(&["run", "--synthetic", "--blocks", "4", "--output", "a"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let a = tmp.path().join("a");
    for k in 0..4 {
        assert!(a.join(format!("manifests/block_{k:02}.json")).exists());
    }
    assert!(!a.join("transforms/block_00/sim3.json").exists());
    for k in 1..4 {
        assert!(a.join(format!("transforms/block_{k:02}/sim3.json")).exists());
    }
    let eval = json(&a.join("reports/eval.json"));
    assert_eq!(eval["all_within_tolerance"], true);
    let align = json(&a.join("reports/align.json"));
    assert_eq!(align["pairs"].as_array().unwrap().len(), 3);
    let select = json(&a.join("reports/select.json"));
    let c = &select["correct_outside_overlap"];
    assert_eq!(c[0], c[1]);
}

#[test]
fn reruns_and_thread_counts_give_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    for (dir, jobs) in [("a", "1"), ("b", "1"), ("c", "3")] {
        let out = blockscape(
            &["--jobs", jobs, "run", "--synthetic", "--blocks", "3", "--frames", "90", "--output", dir],
            tmp.path(),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = tmp.path().join("a");
    let listing = files(&a);
    assert!(listing.len() > 20);
    for other in ["b", "c"] {
        let o = tmp.path().join(other);
        assert_eq!(files(&o), listing);
        for f in &listing {
            if f.ends_with("reports/pipeline.json") {
                continue;
            }
            assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(o.join(f)).unwrap(), "{}", f.display());
        }
    }
}

#[test]
fn bad_overlap_is_rejected_before_any_work() {
    let tmp = tempfile::tempdir().unwrap();
    let out = blockscape(&["run", "--synthetic", "--overlap", "1.2", "--output", "a"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("overlap"));
    assert!(!tmp.path().join("a").exists());
}

#[test]
fn config_file_round_trips_and_flags_override_it() {
    let tmp = tempfile::tempdir().unwrap();
    let out = blockscape(&["run", "--synthetic", "--blocks", "2", "--print-config"], tmp.path());
    assert!(out.status.success());
    std::fs::write(tmp.path().join("cfg.json"), &out.stdout).unwrap();
    let again = blockscape(&["run", "--config", "cfg.json", "--print-config"], tmp.path());
    assert_eq!(again.stdout, out.stdout);
    let over = blockscape(&["run", "--config", "cfg.json", "--blocks", "3", "--print-config"], tmp.path());
    let v: serde_json::Value = serde_json::from_slice(&over.stdout).unwrap();
    assert_eq!(v["blocks"], 3);

    std::fs::write(tmp.path().join("bad.json"), r#"{"blocks": 2, "colour": 1}"#).unwrap();
    let bad = blockscape(&["run", "--config", "bad.json"], tmp.path());
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn missing_sfm_outputs_name_the_expected_files() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::create_dir(tmp.path().join("in")).unwrap();
    let out = blockscape(
        &["run", "--input", "in", "--frames", "40", "--blocks", "2", "--output", "a"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stage align"), "{err}");
    assert!(err.contains("images.txt") && err.contains("block_00"), "{err}");
}

#[test]
fn stages_run_individually() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let synth = blockscape(
        &["synth", "--kind", "lawnmower", "--frames", "80", "--blocks", "2", "--points", "3000", "--output", "data"],
        t,
    );
    assert!(synth.status.success(), "{}", String::from_utf8_lossy(&synth.stderr));

    let part = blockscape(&["partition", "--frames", "80", "--blocks", "2", "--output", "plan"], t);
    assert!(part.status.success());
    assert_eq!(
        std::fs::read(t.join("plan/blocks.json")).unwrap(),
        std::fs::read(t.join("data/blocks.json")).unwrap()
    );

    let align = blockscape(
        &[
            "align", "--blocks", "plan/blocks.json", "--poses", "data/poses", "--clouds", "data/clouds", "--output", "tf",
        ],
        t,
    );
    assert!(align.status.success(), "{}", String::from_utf8_lossy(&align.stderr));
    assert!(t.join("tf/block_01/sim3.json").exists());
    assert!(t.join("tf/alignment_report.json").exists());

    let sel = blockscape(
        &["select", "--poses", "data/poses", "--transforms", "tf", "--position", "0,0,0"],
        t,
    );
    assert!(sel.status.success(), "{}", String::from_utf8_lossy(&sel.stderr));
    let v: serde_json::Value = serde_json::from_slice(&sel.stdout).unwrap();
    assert_eq!(v[0]["block_id"], 0);

    let bad = blockscape(&["select", "--poses", "data/poses", "--position", "1,2"], t);
    assert_eq!(bad.status.code(), Some(2));

    let gt = blockscape(
        &["eval", "align", "data/ground_truth/images.txt", "data/ground_truth/images.txt"],
        t,
    );
    assert!(gt.status.success());
    let v: serde_json::Value = serde_json::from_slice(&gt.stdout).unwrap();
    assert_eq!(v["avg_ratio"], 0.0);
}

#[test]
fn project_mask_and_image_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    std::fs::create_dir(t.join("frames")).unwrap();
    let frame = blockscape::synth::gen_equirect(blockscape::synth::TextureKind::Checker, 256, 128, 3).unwrap();
    frame.image().save(t.join("frames/frame_0000.png")).unwrap();

    let proj = blockscape(&["project", "--input", "frames", "--output", "faces", "--face-size", "32"], t);
    assert!(proj.status.success(), "{}", String::from_utf8_lossy(&proj.stderr));
    assert_eq!(std::fs::read_dir(t.join("faces")).unwrap().count(), 8);

    let mask = blockscape(
        &[
            "mask", "--size", "32x32", "--ellipse", "16,28,6,3,0", "--radius", "1", "--output", "masks", "--fill",
            "faces", "--filled", "filled",
        ],
        t,
    );
    assert!(mask.status.success(), "{}", String::from_utf8_lossy(&mask.stderr));
    assert!(t.join("masks/mask.png").exists());
    assert_eq!(std::fs::read_dir(t.join("filled")).unwrap().count(), 8);

    let same = blockscape(&["eval", "ssim", "faces", "faces"], t);
    let v: serde_json::Value = serde_json::from_slice(&same.stdout).unwrap();
    assert_eq!(v["mean"], 1.0);
    let psnr = blockscape(&["eval", "psnr", "faces", "filled"], t);
    assert!(psnr.status.success(), "{}", String::from_utf8_lossy(&psnr.stderr));
    let v: serde_json::Value = serde_json::from_slice(&psnr.stdout).unwrap();
    assert!(v["mean"].as_f64().unwrap() > 5.0);

    let missing = blockscape(&["project", "--input", "nowhere", "--output", "x"], t);
    assert_eq!(missing.status.code(), Some(3));
}

#[test]
fn similarity_finds_the_overlapping_frame() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let flights = blockscape::synth::corridor_flights(4, 12, 1).unwrap();
    let write = |dir: &Path, stem: &str, center: &nalgebra::Vector3<f64>| {
        std::fs::create_dir_all(dir).unwrap();
        let cube = flights.corridor.render_cubemap(center, 128).unwrap();
        for face in cube.faces() {
            face.image.save(dir.join(format!("{stem}_{}.png", face.label.name()))).unwrap();
        }
    };
    for (i, c) in flights.flight1.iter().enumerate() {
        write(&t.join("f1"), &format!("frame_{i:04}"), c);
    }
    write(&t.join("f2"), "frame_0000", &flights.flight2[0]);
    let out = blockscape(
        &["similarity", "--query-dir", "f2", "--query", "frame_0000", "--candidates", "f1"],
        t,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let frame = v["frame"].as_i64().unwrap();
    assert!((frame - flights.truth as i64).abs() <= 1, "{v}");
    assert_eq!(v["face_estimates"].as_array().unwrap().len(), 8);
}
