use std::path::Path;
use std::process::{Command, Output};

use zone_core::classifier::ClassifierParams;
use zone_core::grid::Grid2D;
use zone_core::io::{self, Tensor};
use zone_core::refine::{write_segment_dir, SegmentSet};
use zone_core::{BinaryMask, Image};

fn zone(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zone"))
        .args(args)
        .env_remove("ZONE_CONFIG")
        .output()
        .expect("spawn zone")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn checkerboard(h: usize, w: usize) -> Image {
    Image::from_fn_rgb(h, w, |r, c| {
        if (r + c) % 2 == 0 {
            [10, 200, 30]
        } else {
            [250, 0, 90]
        }
    })
}

#[test]
fn metrics_of_identical_images_are_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.png");
    io::write_image(&checkerboard(8, 8), &a).unwrap();
    let out = zone(&["metrics", s(&a), s(&a)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out).trim(), "l1=0 l2=0");
}

#[test]
fn classify_zero_model_prints_change() {
    let tmp = tempfile::tempdir().unwrap();
    ClassifierParams::zeros(768, 128)
        .save(tmp.path().join("params"))
        .unwrap();
    let emb = tmp.path().join("e.ztf");
    io::write_tensor(&Tensor::Rank2(Grid2D::filled(1, 768, 0.5).unwrap()), &emb).unwrap();
    let out = zone(&[
        "classify",
        "--params",
        s(&tmp.path().join("params")),
        "--embedding",
        s(&emb),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out).trim(), "change");
}

#[test]
fn refine_half_masks_scores_one_third() {
    let tmp = tempfile::tempdir().unwrap();
    let left = BinaryMask::from_fn(4, 4, |_, c| c < 2);
    let top = BinaryMask::from_fn(4, 4, |r, _| r < 2);
    write_segment_dir(
        &SegmentSet::from_masks(vec![left.clone()]).unwrap(),
        tmp.path().join("seg"),
    )
    .unwrap();
    let loc = tmp.path().join("loc.png");
    io::write_mask(&top, &loc).unwrap();
    let refined = tmp.path().join("refined.png");
    let out = zone(&[
        "refine",
        "--segments",
        s(&tmp.path().join("seg")),
        "--location",
        s(&loc),
        "--out",
        s(&refined),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(
        stdout(&out).lines().any(|l| l == "score 0.333333"),
        "{}",
        stdout(&out)
    );
    assert_eq!(io::read_mask(&refined).unwrap(), left);
}

#[test]
fn empty_location_is_a_stage_error() {
    let tmp = tempfile::tempdir().unwrap();
    write_segment_dir(
        &SegmentSet::from_masks(vec![BinaryMask::full(4, 4)]).unwrap(),
        tmp.path().join("seg"),
    )
    .unwrap();
    let loc = tmp.path().join("loc.png");
    io::write_mask(&BinaryMask::empty(4, 4), &loc).unwrap();
    let out = zone(&[
        "refine",
        "--segments",
        s(&tmp.path().join("seg")),
        "--location",
        s(&loc),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(
        stderr(&out).trim(),
        "error: [refine] no edit region located"
    );
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(zone(&["metrics"]).status.code(), Some(2));
    assert_eq!(zone(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        zone(&[
            "fixtures",
            "generate",
            "--out",
            "x",
            "--region",
            "blob:1,2,3"
        ])
        .status
        .code(),
        Some(2)
    );
    assert_eq!(
        zone(&["fixtures", "generate", "--out", "x", "--action", "paint"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn missing_file_exits_1_with_stage() {
    let out = zone(&["metrics", "/nonexistent/a.png", "/nonexistent/b.png"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).starts_with("error: [metrics] /nonexistent/a.png"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn composite_layers_in_order() {
    let tmp = tempfile::tempdir().unwrap();
    let base = tmp.path().join("base.png");
    io::write_image(&Image::filled(4, 4, [1, 2, 3]), &base).unwrap();
    let layer = |rgb: [u8; 3], m: BinaryMask| {
        let mut data = Vec::new();
        for r in 0..4 {
            for c in 0..4 {
                let on = m.get(r, c);
                data.extend_from_slice(
                    &[rgb[0], rgb[1], rgb[2], if on { 255 } else { 0 }]
                        .map(|v| if on { v } else { 0 }),
                );
            }
        }
        Image::new(4, 4, 4, data).unwrap()
    };
    let l1 = tmp.path().join("l1.png");
    let l2 = tmp.path().join("l2.png");
    io::write_image(
        &layer([100, 0, 0], BinaryMask::from_fn(4, 4, |r, _| r < 2)),
        &l1,
    )
    .unwrap();
    io::write_image(
        &layer([0, 100, 0], BinaryMask::from_fn(4, 4, |_, c| c < 2)),
        &l2,
    )
    .unwrap();
    let out_path = tmp.path().join("out.png");
    let out = zone(&[
        "composite",
        "--base",
        s(&base),
        "--layer",
        s(&l1),
        "--layer",
        s(&l2),
        "--out",
        s(&out_path),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let img = io::read_image(&out_path).unwrap();
    assert_eq!(img.rgb(0, 0), [0, 100, 0]);
    assert_eq!(img.rgb(0, 3), [100, 0, 0]);
    assert_eq!(img.rgb(3, 3), [1, 2, 3]);
}

#[test]
fn train_classifier_on_small_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = zone(&[
        "fixtures",
        "dataset",
        "--out",
        s(&data),
        "--train-per-class",
        "30",
        "--test-per-class",
        "10",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out).trim(), "train 90 test 30");
    let params = tmp.path().join("params");
    let out = zone(&[
        "train-classifier",
        "--data",
        s(&data),
        "--out",
        s(&params),
        "--epochs",
        "5",
        "--hidden",
        "16",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(text.lines().filter(|l| l.starts_with("epoch ")).count(), 6);
    assert!(text.contains("test_top1 1.0000"), "{text}");
    assert_eq!(ClassifierParams::load(&params).unwrap().hidden_dim(), 16);
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn full_run_and_session_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let case = tmp.path().join("case");
    let gen = zone(&[
        "fixtures",
        "generate",
        "--out",
        s(&case),
        "--size",
        "256",
        "--region",
        "square:40,100,48",
        "--action",
        "add",
    ]);
    assert!(gen.status.success(), "{}", stderr(&gen));
    let before = snapshot(&case);

    let out_dir = tmp.path().join("out");
    let (orig, manifest) = (case.join("original.png"), case.join("manifest.json"));
    let run = |extra: &[&str]| {
        let mut args = vec![
            "run",
            "--original",
            s(&orig),
            "--instruction",
            "add a red block",
            "--manifest",
            s(&manifest),
            "--out",
        ];
        args.push(s(&out_dir));
        args.extend_from_slice(extra);
        zone(&args)
    };
    let first = run(&["--seed", "7"]);
    assert!(first.status.success(), "{}", stderr(&first));
    let report: serde_json::Value = serde_json::from_str(&stdout(&first)).unwrap();
    assert_eq!(report["action"], "add");
    assert_eq!(report["seed"], 7);
    assert_eq!(report["untouched"]["l1"], 0.0);
    assert!(stderr(&first).contains("edit-00 (add)"));
    let second = run(&[]);
    assert!(second.status.success(), "{}", stderr(&second));
    assert_eq!(snapshot(&case), before, "inputs were modified");

    let session = out_dir.join("session");
    let list = zone(&["session", "list", s(&session)]);
    let lines: Vec<String> = stdout(&list).lines().map(String::from).collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("0\tedit-00\tadd\t"));

    let reordered = tmp.path().join("reordered");
    let r = zone(&[
        "session",
        "reorder",
        s(&session),
        "edit-01",
        "0",
        "--out",
        s(&reordered),
    ]);
    assert!(r.status.success(), "{}", stderr(&r));
    assert!(stdout(&zone(&["session", "list", s(&reordered)])).starts_with("0\tedit-01"));

    let pruned = tmp.path().join("pruned");
    for name in ["edit-00", "edit-01"] {
        let src = if pruned.exists() {
            pruned.clone()
        } else {
            session.clone()
        };
        let r = zone(&["session", "remove", s(&src), name, "--out", s(&pruned)]);
        assert!(r.status.success(), "{}", stderr(&r));
    }
    let flat = tmp.path().join("flat.png");
    assert!(zone(&["session", "flatten", s(&pruned), "--out", s(&flat)])
        .status
        .success());
    let m = zone(&["metrics", s(&flat), s(&case.join("original.png"))]);
    assert_eq!(stdout(&m).trim(), "l1=0 l2=0");

    let missing = zone(&[
        "session",
        "remove",
        s(&pruned),
        "edit-00",
        "--out",
        s(&pruned),
    ]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(stderr(&missing).contains("[session] unknown layer \"edit-00\""));
}

#[test]
fn env_and_config_file_feed_run() {
    let tmp = tempfile::tempdir().unwrap();
    let case = tmp.path().join("case");
    assert!(
        zone(&["fixtures", "generate", "--out", s(&case), "--size", "128"])
            .status
            .success()
    );
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"min_riou": 0.999, "seed": 1}"#).unwrap();
    let (orig, manifest) = (case.join("original.png"), case.join("manifest.json"));
    let base = [
        "run",
        "--original",
        s(&orig),
        "--instruction",
        "turn the block red",
        "--manifest",
        s(&manifest),
        "--out",
    ];
    let out_a = tmp.path().join("a");
    let mut args: Vec<&str> = base.to_vec();
    args.extend([s(&out_a), "--config", s(&cfg)]);
    let gated = zone(&args);
    assert_eq!(gated.status.code(), Some(1));
    assert!(
        stderr(&gated).starts_with("error: [refine] best Region-IoU"),
        "{}",
        stderr(&gated)
    );

    // the flag beats the file; the environment beats the file too
    let mut args: Vec<&str> = base.to_vec();
    args.extend([s(&out_a), "--config", s(&cfg), "--min-riou", "0"]);
    assert!(zone(&args).status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_zone"))
        .args(base)
        .arg(tmp.path().join("b"))
        .env("ZONE_CONFIG", &cfg)
        .env("ZONE_MIN_RIOU", "0.0")
        .env("ZONE_SEED", "9")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["seed"], 9);

    let bad = Command::new(env!("CARGO_BIN_EXE_zone"))
        .args(base)
        .arg(tmp.path().join("c"))
        .env("ZONE_STEPS", "lots")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
    assert!(
        stderr(&bad).starts_with("error: [config]"),
        "{}",
        stderr(&bad)
    );
}
