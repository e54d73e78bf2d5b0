use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use cvcp::harness::checkpoint::Checkpoint;
use cvcp::harness::gradcheck::{end_to_end_check, run_gradcheck, END_TO_END};
use cvcp::harness::infer::infer_scene;
use cvcp::harness::predictions::{format_records, parse_records, Record};
use cvcp::harness::scene::{load_scenes, SceneRecord};
use cvcp::harness::synth::{box_visible, generate_dataset, generate_scene, render, scene_seed, write_dataset};
use cvcp::harness::train::Trainer;
use cvcp::head::boxes::Box3D;
use cvcp::pipeline::is_camera_param;
use cvcp::{Config, Error};
use cvcp_numerics::OpKind;
use proptest::prelude::*;

fn cvcp() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cvcp"))
}

fn run_ok(args: &[&str]) {
    let out = cvcp().args(args).env("RUST_LOG", "warn").output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

/// Every file under `dir`, keyed by relative path.
fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_data_is_bitwise_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    run_ok(&["gen-data", "--out", s(&a), "--scenes", "3", "--seed", "4"]);
    run_ok(&["gen-data", "--out", s(&b), "--scenes", "3", "--seed", "4"]);
    run_ok(&["gen-data", "--out", s(&c), "--scenes", "3", "--seed", "5"]);
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.contains_key(Path::new("gt.txt")) && ta.contains_key(Path::new("scene_00002/cam1.bin")));
    assert_eq!(ta, tb);
    assert_ne!(ta, tree(&c));
}

#[test]
fn scene_round_trip_is_lossless() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = Config::default();
    let scenes = generate_dataset(&cfg, 2, 9).unwrap();
    write_dataset(&scenes, &tmp.path().join("a")).unwrap();
    let back = load_scenes(&tmp.path().join("a")).unwrap();
    assert_eq!(back, scenes);
    write_dataset(&back, &tmp.path().join("b")).unwrap();
    assert_eq!(tree(&tmp.path().join("a")), tree(&tmp.path().join("b")));
    let single = SceneRecord::load(&tmp.path().join("a/scene_00001/scene.toml")).unwrap();
    assert_eq!(single, scenes[1]);
}

#[test]
fn truncated_blob_is_a_parse_error() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = generate_scene("x", 1, &Config::default()).unwrap();
    scene.save(tmp.path()).unwrap();
    let p = tmp.path().join("points.bin");
    let mut bytes = std::fs::read(&p).unwrap();
    bytes.truncate(bytes.len() - 4);
    std::fs::write(&p, bytes).unwrap();
    assert_eq!(SceneRecord::load(tmp.path()).unwrap_err().category(), "parse");
}

#[test]
fn box_centers_outside_a_view_are_not_drawn() {
    let cfg = Config::default();
    for i in 0..10 {
        let sc = generate_scene("v", scene_seed(3, i), &cfg).unwrap();
        assert!(sc.boxes.iter().all(|b| cfg.model.grid.contains(b.center[0], b.center[1])));
        for cam in &sc.rig.cameras {
            let (_, ids) = render(cam, &sc.boxes);
            for (k, b) in sc.boxes.iter().enumerate() {
                let drawn = ids.contains(&(k as i32));
                if !box_visible(cam, b) {
                    assert!(!drawn, "scene {i} box {k} drawn although its center is off-image");
                } else {
                    let (u, v, _) = cam.project_point(&b.center).unwrap();
                    assert!(u >= 0.0 && v >= 0.0 && u < cam.width as f64 && v < cam.height as f64);
                }
            }
        }
    }
}

fn small_config(epochs: usize) -> Config {
    let mut c = Config::default();
    c.train.epochs = epochs;
    c
}

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(1);
    let scenes = generate_dataset(&cfg, 2, 1).unwrap();
    let mut t = Trainer::new(cfg.clone(), &scenes).unwrap();
    t.step().unwrap();
    let ck = t.checkpoint();
    ck.save(&tmp.path().join("a")).unwrap();
    let back = Checkpoint::load(&tmp.path().join("a/checkpoint.toml")).unwrap();
    assert_eq!(back, ck);
    back.save(&tmp.path().join("b")).unwrap();
    assert_eq!(tree(&tmp.path().join("a")), tree(&tmp.path().join("b")));

    let mut other = cfg.clone();
    other.model.head_channels = 16;
    let err = Trainer::resume(other, back, &scenes).err().unwrap();
    assert!(matches!(err, Error::Mismatch(_)));
    assert!(err.to_string().contains("head.shared.w is [32, 32, 3, 3], expected [16, 32, 3, 3]"), "{err}");
}

#[test]
fn frozen_camera_branch_is_bitwise_unchanged() {
    let mut cfg = small_config(2);
    cfg.train.freeze_cvt = true;
    let scenes = generate_dataset(&cfg, 2, 2).unwrap();
    let mut t = Trainer::new(cfg, &scenes).unwrap();
    let before = t.params.clone();
    t.run().unwrap();
    let mut changed = 0;
    for ((name, a), (_, b)) in before.iter().zip(t.params.iter()) {
        if is_camera_param(name) {
            assert_eq!(a.data(), b.data(), "{name} moved");
        } else if a.data() != b.data() {
            changed += 1;
        }
    }
    assert!(changed > 10);
}

#[test]
fn first_loss_is_reproducible() {
    let cfg = small_config(1);
    let scenes = generate_dataset(&cfg, 3, 3).unwrap();
    let a = Trainer::new(cfg.clone(), &scenes).unwrap();
    let b = Trainer::new(cfg, &scenes).unwrap();
    let batch = a.batch_indices(0);
    assert_eq!(batch, b.batch_indices(0));
    let (la, ga) = a.batch_gradients(&batch).unwrap();
    let (lb, gb) = b.batch_gradients(&batch).unwrap();
    assert_eq!(la.loss.to_bits(), lb.loss.to_bits());
    assert_eq!(ga, gb);
}

#[test]
fn resuming_matches_an_uninterrupted_run() {
    let cfg = small_config(2);
    let scenes = generate_dataset(&cfg, 5, 4).unwrap();
    let mut straight = Trainer::new(cfg.clone(), &scenes).unwrap();
    straight.run().unwrap();
    let mut first = Trainer::new(cfg.clone(), &scenes).unwrap();
    for _ in 0..3 {
        first.step().unwrap();
    }
    let tmp = tempfile::tempdir().unwrap();
    first.save(tmp.path()).unwrap();
    let mut second = Trainer::resume(cfg, Checkpoint::load(tmp.path()).unwrap(), &scenes).unwrap();
    second.run().unwrap();
    assert_eq!(second.log[0].step, 3);
    assert_eq!(second.params, straight.params);
    second.save(tmp.path()).unwrap();
    let log = std::fs::read_to_string(tmp.path().join("train_log.tsv")).unwrap();
    assert_eq!(log.lines().count(), 1 + straight.log.len());
}

#[test]
fn cli_train_infer_eval_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let d = |n: &str| tmp.path().join(n);
    std::fs::write(d("cfg.toml"), "[train]\nepochs = 1\n").unwrap();
    run_ok(&["gen-data", "--out", s(&d("data")), "--scenes", "2", "--seed", "7"]);
    for run in ["r1", "r2"] {
        run_ok(&["train", "--config", s(&d("cfg.toml")), "--data", s(&d("data")), "--out", s(&d(run))]);
    }
    assert_eq!(tree(&d("r1")), tree(&d("r2")));
    assert!(d("r1/train_log.tsv").is_file());
    let ck = d("r1/checkpoint.toml");
    let scene = d("data/scene_00000");
    for (out, thr) in [("p1.txt", "0.0"), ("p2.txt", "0.0"), ("none.txt", "1.0")] {
        run_ok(&["infer", "--ckpt", s(&ck), "--scene", s(&scene), "--threshold", thr, "--out", s(&d(out))]);
    }
    let p1 = std::fs::read(d("p1.txt")).unwrap();
    assert!(!p1.is_empty());
    assert_eq!(p1, std::fs::read(d("p2.txt")).unwrap());
    assert!(std::fs::read(d("none.txt")).unwrap().is_empty());
    run_ok(&["eval", "--pred", s(&d("p1.txt")), "--gt", s(&d("data/gt.txt")), "--mode", "iou", "--report", s(&d("r.toml"))]);
    let report = std::fs::read_to_string(d("r.toml")).unwrap();
    assert!(report.contains("mode = \"iou\"") && report.contains("translation_error"));
}

fn error_line(args: &[&str]) -> String {
    let out = cvcp().args(args).env("RUST_LOG", "off").output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    err
}

#[test]
fn cli_errors_are_single_categorized_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let d = |n: &str| tmp.path().join(n);
    std::fs::write(d("bad.toml"), "[model]\nnum_cameras = 9\n").unwrap();
    run_ok(&["gen-data", "--out", s(&d("data")), "--scenes", "1", "--seed", "1"]);
    let e = error_line(&["train", "--config", s(&d("bad.toml")), "--data", s(&d("data")), "--out", s(&d("o"))]);
    assert!(e.starts_with("error[config]:"), "{e}");
    assert!(!d("o").exists());

    std::fs::write(d("pred.txt"), "scene_00000 0 1 2 3 4 5 6 7 8 9 0.5\nscene_00000 0 1\n").unwrap();
    let e = error_line(&["eval", "--pred", s(&d("pred.txt")), "--gt", s(&d("data/gt.txt")), "--report", s(&d("r.toml"))]);
    assert!(e.starts_with("error[parse]:") && e.contains("pred.txt:2:"), "{e}");

    let e = error_line(&["infer", "--ckpt", s(&d("missing")), "--scene", s(&d("data")), "--out", s(&d("p.txt"))]);
    assert!(e.starts_with("error[io]:"), "{e}");

    std::fs::write(d("one.toml"), "[train]\nepochs = 1\n").unwrap();
    run_ok(&["train", "--config", s(&d("one.toml")), "--data", s(&d("data")), "--out", s(&d("ck"))]);
    std::fs::write(d("wide.toml"), "[train]\nepochs = 1\n[model]\nfused_channels = 8\n").unwrap();
    let e = error_line(&["train", "--config", s(&d("wide.toml")), "--data", s(&d("data")), "--out", s(&d("ck2")), "--resume", s(&d("ck"))]);
    assert!(e.starts_with("error[mismatch]:") && e.contains("fuse.w"), "{e}");
}

#[test]
fn infer_rejects_a_mismatched_rig() {
    let cfg = small_config(1);
    let scenes = generate_dataset(&cfg, 1, 1).unwrap();
    let ck = Trainer::new(cfg.clone(), &scenes).unwrap().checkpoint();
    let mut three = cfg.clone();
    three.model.num_cameras = 3;
    let other = generate_scene("x", 2, &three).unwrap();
    let err = infer_scene(&ck, &other, &cfg.infer).unwrap_err();
    assert_eq!(err.category(), "config");
}

#[test]
fn gradcheck_report_covers_every_op_once() {
    let report = run_gradcheck(0).unwrap();
    assert!(report.passed(), "{}", report.format());
    let names: Vec<&str> = report.ops.iter().map(|r| r.name.as_str()).collect();
    let expected: Vec<&str> = OpKind::ALL.iter().map(|k| k.name()).collect();
    assert_eq!(names, expected);
    assert!(report.format().lines().filter(|l| l.starts_with(END_TO_END)).count() == 1);
}

#[test]
fn corrupted_backward_is_flagged_end_to_end() {
    let (r, _) = end_to_end_check(0, Some(OpKind::Conv2d)).unwrap();
    assert!(!r.passed, "max rel error {}", r.max_rel_error);
}

prop_compose! {
    fn record()(scene in "[a-z]{1,6}_[0-9]{1,4}", class_id in 0usize..4, x in -1e3..1e3f64, y in -1e3..1e3f64, z in -10.0..10.0f64,
        l in 1e-3..50.0f64, w in 1e-3..50.0f64, h in 1e-3..50.0f64, yaw in -std::f64::consts::PI..std::f64::consts::PI, vx in -30.0..30.0f64,
        vy in -30.0..30.0f64, score in 0.0..=1.0f64) -> Record {
        let mut det = Box3D::new([x, y, z], [l, w, h], yaw, class_id);
        det.velocity = [vx, vy];
        det.score = score;
        Record { scene, det }
    }
}

proptest! {
    #[test]
    fn prediction_files_round_trip(recs in prop::collection::vec(record(), 0..20)) {
        let text = format_records(&recs);
        let back = parse_records(&text, "mem").unwrap();
        prop_assert_eq!(back.len(), recs.len());
        for (a, b) in back.iter().zip(&recs) {
            prop_assert_eq!(a.det, b.det.quantized());
        }
        prop_assert_eq!(format_records(&back), text);
    }

    #[test]
    fn config_round_trips_through_toml(epochs in 1usize..50, lr in 1e-5..1e-1f64, thr in 0.0..1.0f64, cams in 1usize..=6) {
        let mut c = Config::default();
        c.train.epochs = epochs;
        c.train.lr_max = lr;
        c.infer.threshold = thr;
        c.model.num_cameras = cams;
        prop_assert_eq!(Config::from_toml(&c.to_toml(), "mem").unwrap(), c);
    }
}
