//! End-to-end CLI flows through the compiled binary: weight generation,
//! inference over a PPM fixture, evaluation against ground-truth
//! directories, anchor dumps, the gradient check, and exit-code contracts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn binary() -> PathBuf {
    let mut path = PathBuf::from(env!("CARGO_BIN_EXE_pantext"));
    assert!(path.exists(), "missing binary at {}", path.display());
    path = path.canonicalize().unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(binary())
        .args(args)
        .output()
        .expect("spawn pantext")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).to_string()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).to_string()
}

fn write_gradient_ppm(path: &Path, w: usize, h: usize) {
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            let bright = if (4..12).contains(&y) && (8..24).contains(&x) {
                200
            } else {
                40
            };
            bytes.push((bright + x * 2).min(255) as u8);
            bytes.push((bright + y * 3).min(255) as u8);
            bytes.push(90);
        }
    }
    std::fs::write(path, bytes).unwrap();
}

#[test]
fn gen_weights_then_infer_produces_stable_json() {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("model.panw");
    let out = run(&[
        "gen-weights",
        "--seed",
        "42",
        "--channels",
        "8",
        "--out",
        weights.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let image = dir.path().join("scene.ppm");
    write_gradient_ppm(&image, 48, 32);
    let config = dir.path().join("infer.cfg");
    std::fs::write(&config, "test_scale=32\n# comment\ntop_n=2000\n").unwrap();

    let dets_a = dir.path().join("a.json");
    let dets_b = dir.path().join("b.json");
    for out_path in [&dets_a, &dets_b] {
        let out = run(&[
            "infer",
            "--image",
            image.to_str().unwrap(),
            "--weights",
            weights.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--out",
            out_path.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let a = std::fs::read(&dets_a).unwrap();
    let b = std::fs::read(&dets_b).unwrap();
    assert_eq!(a, b, "inference output must be byte-identical across runs");
    let text = String::from_utf8(a).unwrap();
    assert!(text.contains("\"schema\":\"pantext/detections-v1\""));
}

#[test]
fn eval_identity_fixture_prints_perfect_scores() {
    let dir = tempfile::tempdir().unwrap();
    let gt_dir = dir.path().join("gt");
    let det_dir = dir.path().join("dets");
    std::fs::create_dir_all(&gt_dir).unwrap();
    std::fs::create_dir_all(&det_dir).unwrap();
    std::fs::write(
        gt_dir.join("gt_img_1.txt"),
        "0,0,10,0,10,5,0,5,alpha\r\n20,0,30,0,30,5,20,5,beta\r\n",
    )
    .unwrap();
    std::fs::write(
        det_dir.join("img_1.json"),
        r#"{"schema":"pantext/detections-v1","detections":[
            {"quad":[[0,0],[10,0],[10,5],[0,5]],"score":0.9},
            {"quad":[[20,0],[30,0],[30,5],[20,5]],"score":0.8}
        ]}"#,
    )
    .unwrap();
    let report_path = dir.path().join("report.json");
    let out = run(&[
        "eval",
        "--dets",
        det_dir.to_str().unwrap(),
        "--gt-dir",
        gt_dir.to_str().unwrap(),
        "--format",
        "icdar",
        "--iou",
        "0.5",
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("R=1.0000"), "{text}");
    assert!(text.contains("P=1.0000"), "{text}");
    assert!(text.contains("F=1.0000"), "{text}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(report_path).unwrap()).unwrap();
    assert_eq!(report["matched"], 2);
}

#[test]
fn eval_partial_fixture_reports_half_recall() {
    let dir = tempfile::tempdir().unwrap();
    let gt_dir = dir.path().join("gt");
    let det_dir = dir.path().join("dets");
    std::fs::create_dir_all(&gt_dir).unwrap();
    std::fs::create_dir_all(&det_dir).unwrap();
    std::fs::write(
        gt_dir.join("img_1.txt"),
        "0,0,10,0,10,5,0,5,alpha\n20,0,30,0,30,5,20,5,beta\n",
    )
    .unwrap();
    std::fs::write(
        det_dir.join("img_1.json"),
        r#"{"schema":"pantext/detections-v1","detections":[{"quad":[[0,0],[10,0],[10,5],[0,5]],"score":0.9}]}"#,
    )
    .unwrap();
    let out = run(&[
        "eval",
        "--dets",
        det_dir.to_str().unwrap(),
        "--gt-dir",
        gt_dir.to_str().unwrap(),
        "--format",
        "icdar",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("R=0.5000"), "{text}");
    assert!(text.contains("P=1.0000"), "{text}");
    assert!(text.contains("F=0.6667"), "{text}");
}

#[test]
fn eval_ctw_format_uses_bounding_quads() {
    let dir = tempfile::tempdir().unwrap();
    let gt_dir = dir.path().join("gt");
    let det_dir = dir.path().join("dets");
    std::fs::create_dir_all(&gt_dir).unwrap();
    std::fs::create_dir_all(&det_dir).unwrap();
    let coords: Vec<String> = (0..14)
        .flat_map(|i| {
            let x = i * 2;
            let y = if i % 2 == 0 { 0 } else { 6 };
            [x.to_string(), y.to_string()]
        })
        .collect();
    std::fs::write(gt_dir.join("line_1.txt"), coords.join(",")).unwrap();
    std::fs::write(
        det_dir.join("line_1.json"),
        r#"{"schema":"pantext/detections-v1","detections":[{"quad":[[0,0],[26,0],[26,6],[0,6]],"score":0.7}]}"#,
    )
    .unwrap();
    let out = run(&[
        "eval",
        "--dets",
        det_dir.to_str().unwrap(),
        "--gt-dir",
        gt_dir.to_str().unwrap(),
        "--format",
        "ctw",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("F=1.0000"), "{}", stdout(&out));
}

#[test]
fn eval_aggregates_over_multiple_images() {
    let dir = tempfile::tempdir().unwrap();
    let gt_dir = dir.path().join("gt");
    let det_dir = dir.path().join("dets");
    std::fs::create_dir_all(&gt_dir).unwrap();
    std::fs::create_dir_all(&det_dir).unwrap();
    // image 1: one care GT (matched) and one don't-care region
    std::fs::write(
        gt_dir.join("gt_img_1.txt"),
        "0,0,10,0,10,5,0,5,word\n50,50,60,50,60,55,50,55,###\n",
    )
    .unwrap();
    // image 2: one care GT with no detection file at all
    std::fs::write(gt_dir.join("gt_img_2.txt"), "0,0,8,0,8,4,0,4,other\n").unwrap();
    // detections for image 1: the exact care match plus one on the ignored
    // region (excluded from precision)
    std::fs::write(
        det_dir.join("img_1.json"),
        r#"{"schema":"pantext/detections-v1","detections":[
            {"quad":[[0,0],[10,0],[10,5],[0,5]],"score":0.9},
            {"quad":[[50,50],[60,50],[60,55],[50,55]],"score":0.7}
        ]}"#,
    )
    .unwrap();
    let out = run(&[
        "eval",
        "--dets",
        det_dir.to_str().unwrap(),
        "--gt-dir",
        gt_dir.to_str().unwrap(),
        "--format",
        "icdar",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    // 1 match over 2 care GTs; counted detections = 1 (the ignored-region
    // hit is excluded), so P = 1 and R = 0.5
    assert!(text.contains("R=0.5000"), "{text}");
    assert!(text.contains("P=1.0000"), "{text}");
}

#[test]
fn malformed_gt_exits_with_line_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let gt_dir = dir.path().join("gt");
    let det_dir = dir.path().join("dets");
    std::fs::create_dir_all(&gt_dir).unwrap();
    std::fs::create_dir_all(&det_dir).unwrap();
    std::fs::write(gt_dir.join("img_1.txt"), "0,0,10,0,10,5,0,5,fine\n1,2,3\n").unwrap();
    std::fs::write(
        det_dir.join("img_1.json"),
        r#"{"schema":"pantext/detections-v1","detections":[]}"#,
    )
    .unwrap();
    let out = run(&[
        "eval",
        "--dets",
        det_dir.to_str().unwrap(),
        "--gt-dir",
        gt_dir.to_str().unwrap(),
        "--format",
        "icdar",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(
        err.contains("line 2"),
        "diagnostics missing line number: {err}"
    );
}

#[test]
fn missing_input_file_exits_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "infer",
        "--image",
        dir.path().join("nope.ppm").to_str().unwrap(),
        "--weights",
        dir.path().join("nope.panw").to_str().unwrap(),
        "--out",
        dir.path().join("out.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn invalid_config_value_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("model.panw");
    let out = run(&[
        "gen-weights",
        "--seed",
        "1",
        "--channels",
        "2",
        "--out",
        weights.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let image = dir.path().join("img.ppm");
    write_gradient_ppm(&image, 16, 16);
    let config = dir.path().join("bad.cfg");
    std::fs::write(&config, "rpn_nms_iou=2.0\n").unwrap();
    let out = run(&[
        "infer",
        "--image",
        image.to_str().unwrap(),
        "--weights",
        weights.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("out.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn anchors_dump_matches_closed_form() {
    let out = run(&["anchors", "--level", "p3", "--size", "64"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let dump: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(dump["level"], "P3");
    assert_eq!(dump["stride"], 8);
    assert_eq!(dump["scale"], 64.0);
    assert_eq!(dump["feature_size"], serde_json::json!([8, 8]));
    let anchors = dump["anchors"].as_array().unwrap();
    assert_eq!(anchors.len(), 8 * 8 * 6);
    // first anchor: cell (0,0), ratio 0.2 at stride 8
    let first = anchors[0].as_array().unwrap();
    let w = 64.0 * 0.2f64.sqrt();
    let h = 64.0 / 0.2f64.sqrt();
    assert!((first[0].as_f64().unwrap() - (4.0 - w / 2.0)).abs() < 1e-9);
    assert!((first[1].as_f64().unwrap() - (4.0 - h / 2.0)).abs() < 1e-9);
    assert!((first[2].as_f64().unwrap() - (4.0 + w / 2.0)).abs() < 1e-9);
    assert!((first[3].as_f64().unwrap() - (4.0 + h / 2.0)).abs() < 1e-9);
}

#[test]
fn anchors_rejects_unaligned_size() {
    let out = run(&["anchors", "--level", "p2", "--size", "30"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gradcheck_emits_passing_json_report() {
    let out = run(&["gradcheck"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["pass"], true);
    let checks = report["checks"].as_array().unwrap();
    assert_eq!(checks.len(), 3);
    for check in checks {
        assert_eq!(check["pass"], true);
        assert!(check["max_rel_err"].as_f64().unwrap() < 1e-5);
    }
}

#[test]
fn selftest_passes_on_clean_build() {
    let out = run(&["selftest"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let text = stdout(&out);
    assert!(text.contains("0 failed"), "{text}");
    assert!(!text.contains("FAIL"), "{text}");
}

#[test]
fn weights_roundtrip_through_cli_and_library() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.panw");
    let out = run(&[
        "gen-weights",
        "--seed",
        "7",
        "--channels",
        "4",
        "--context-channels",
        "6",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let loaded = pantext_core::weights::ModelWeights::load(&path).unwrap();
    assert_eq!(loaded.meta().channels, 4);
    assert_eq!(loaded.meta().context_channels, 6);
    assert_eq!(loaded.meta().seed, 7);
    let regenerated = pantext_core::weights::ModelWeights::generate(4, 6, 7).unwrap();
    assert_eq!(loaded.to_bytes(), regenerated.to_bytes());
}

#[test]
fn corrupt_weights_file_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.panw");
    std::fs::write(&path, b"not a weights file at all").unwrap();
    let image = dir.path().join("img.ppm");
    write_gradient_ppm(&image, 16, 16);
    let out = run(&[
        "infer",
        "--image",
        image.to_str().unwrap(),
        "--weights",
        path.to_str().unwrap(),
        "--out",
        dir.path().join("out.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}
