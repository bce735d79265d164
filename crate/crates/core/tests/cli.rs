mod common;

use std::path::Path;

use common::{hash_tree, mvfuse, mvfuse_ok};
use mvfuse::cli::CompareReport;
use mvfuse::metrics::EvalReport;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn dataset(dir: &Path, views: &str, size: &str) -> std::path::PathBuf {
    let scene = dir.join("scene");
    let ds = dir.join("ds");
    mvfuse_ok(&["gen-scene", "--out", s(&scene), "--kind", "ring", "--primitives", "6", "--seed", "3"]);
    mvfuse_ok(&["render", s(&scene), "--out", s(&ds), "--views", views, "--size", size]);
    ds
}

#[test]
fn help_and_usage_exit_codes() {
    assert_eq!(mvfuse(&["--help"], None).status.code(), Some(0));
    assert_eq!(mvfuse(&["sample", "--help"], None).status.code(), Some(0));
    for args in [
        vec!["sample", "ds", "--mode", "fancy"],
        vec!["launch"],
        vec!["gen-scene", "--kind", "teapot"],
        vec!["sample", "ds", "--steps", "0"],
    ] {
        let out = mvfuse(&args, None);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn missing_dataset_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mvfuse(&["sample", s(&dir.path().join("nope")), "--out", s(&dir.path().join("o"))], None);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn eval_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path(), "8", "32");
    let out = dir.path().join("eval");
    mvfuse_ok(&["eval", s(&ds), s(&ds), "--out", s(&out)]);
    let report: EvalReport = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.psnr_mean, Some(99.0));
    assert!((report.ssim_mean.unwrap() - 1.0).abs() < 1e-9);
    assert!(report.warp_rmse_f1.unwrap().is_finite());
    assert_eq!(report.chamfer, Some(0.0));
    assert_eq!(report.volume_iou, Some(1.0));
    assert!(out.join("resolved_config.json").exists());
}

#[test]
fn compare_with_exact_oracle_and_inputs_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path(), "8", "32");
    let before = hash_tree(&ds);
    let out = dir.path().join("cmp");
    mvfuse_ok(&[
        "compare", s(&ds), "--out", s(&out), "--denoiser", "oracle", "--seeds", "2", "--steps", "20", "--res", "32",
    ]);
    assert_eq!(hash_tree(&ds), before);
    let report: CompareReport = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.per_seed.len(), 2);
    for r in &report.per_seed {
        assert!(r.plain.psnr > 40.0, "plain {}", r.plain.psnr);
        assert!(r.aware.psnr > 20.0, "aware {}", r.aware.psnr);
        assert!(out.join(format!("seed_{:03}/aware/cloud.json", r.seed)).exists());
        assert!(out.join(format!("seed_{:03}/plain/trace.jsonl", r.seed)).exists());
    }
    assert!(report.win_rate_f1.is_some());
    assert!(report.win_rate_f6.is_some());
}

#[test]
fn reconstruct_writes_cloud_and_grid() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path(), "12", "32");
    let out = dir.path().join("rec");
    mvfuse_ok(&["reconstruct", s(&ds), "--out", s(&out), "--res", "32"]);
    for f in ["cloud.json", "grid.json", "grid.occ", "grid.rgb", "resolved_config.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let cloud: mvfuse::gsplat::GaussianCloud =
        serde_json::from_slice(&std::fs::read(out.join("cloud.json")).unwrap()).unwrap();
    assert!(!cloud.is_empty());
}

#[test]
fn seed_flag_is_recorded_in_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scene");
    mvfuse_ok(&["gen-scene", "--out", s(&out), "--seed", "42"]);
    let cfg: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("resolved_config.json")).unwrap()).unwrap();
    assert_eq!(cfg["seed"], 42);
    assert_eq!(cfg["scene"]["seed"], 42);
    assert_eq!(cfg["sampler"]["seed"], 42);
    assert!(cfg.get("out").is_none());
}

#[test]
fn resolved_config_replays_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path(), "6", "32");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    mvfuse_ok(&[
        "sample", s(&ds), "--mode", "aware", "--denoiser", "jitter:0.2", "--steps", "10", "--seed", "7", "--out", s(&a),
    ]);
    let cfg = a.join("resolved_config.json");
    mvfuse_ok(&["sample", s(&ds), "--config", s(&cfg), "--out", s(&b)]);
    assert_eq!(hash_tree(&a), hash_tree(&b));
}
