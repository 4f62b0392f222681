use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use subscene::descriptor_io::{save_descriptors, save_tokens, DescriptorSet, TokenStack};

fn svp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svp"))
        .args(args)
        .env_remove("SVP_WORKERS")
        .output()
        .expect("spawn svp")
}

fn ok(args: &[&str]) {
    let out = svp(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn partition_is_deterministic_and_writes_plan() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("scene.svgd");
    ok(&["simulate", "--out", p(&input), "--frames", "40", "--clusters", "4", "--seed", "7"]);

    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    ok(&["partition", "--input", p(&input), "--out", p(&a), "--seed", "3", "--workers", "1"]);
    ok(&["partition", "--input", p(&input), "--out", p(&b), "--seed", "3", "--workers", "4"]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(
        fs::read(dir.path().join("a.plan.json")).unwrap(),
        fs::read(dir.path().join("b.plan.json")).unwrap()
    );

    let doc = json(&a);
    assert_eq!(doc["version"], 1);
    assert_eq!(doc["n"], 40);
    assert_eq!(doc["iterations"], 10);
    assert_eq!(doc["loss_trace"].as_array().unwrap().len(), 11);
    let k = doc["k"].as_u64().unwrap() as usize;
    assert_eq!(doc["groups"].as_array().unwrap().len(), k);

    let plan = json(&dir.path().join("a.plan.json"));
    let subs = plan["subscenes"].as_array().unwrap();
    assert_eq!(subs.len(), k);
    let total: usize = subs.iter().map(|s| s["frames"].as_array().unwrap().len()).sum();
    assert_eq!(total, 40 + k - 1);
}

#[test]
fn groups_flag_overrides_density() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("scene.svgd");
    ok(&["simulate", "--out", p(&input), "--frames", "30", "--clusters", "1", "--noise", "0.01"]);
    let out = dir.path().join("p.json");
    ok(&["partition", "--input", p(&input), "--out", p(&out), "--groups", "4"]);
    assert_eq!(json(&out)["k"], 4);
    ok(&["partition", "--input", p(&input), "--out", p(&out)]);
    // One tight cluster: density 29, clamped at k_max.
    assert_eq!(json(&out)["k"], 8);
}

#[test]
fn zero_norm_frame_reported_with_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.svgd");
    let set = DescriptorSet::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
    save_descriptors(&set, &input).unwrap();
    let out = svp(&["partition", "--input", p(&input), "--out", p(&dir.path().join("p.json"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("[2]"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("s.svgd");
    ok(&["simulate", "--out", p(&input), "--frames", "6"]);
    let out = dir.path().join("o.json");

    let r = svp(&["partition", "--input", p(&input), "--out", p(&out), "--groups", "9"]);
    assert_eq!(r.status.code(), Some(2));
    let r = svp(&["partition", "--input", p(&input), "--out", p(&out), "--bogus"]);
    assert_eq!(r.status.code(), Some(2));

    fs::write(dir.path().join("junk.svgd"), b"NOPE0000000000000000").unwrap();
    let r = svp(&["analyze", "--input", p(&dir.path().join("junk.svgd")), "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&r.stderr).contains("magic"));

    let r = svp(&["partition", "--input", p(&input), "--out", p(&out), "--groups", "2", "--cap", "2"]);
    assert_eq!(r.status.code(), Some(4));
    let r = svp(&["bench", "--frames", "100", "--groups", "2", "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(4));
}

#[test]
fn analyze_reports_density() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a.json");

    // Identical rows: every off-diagonal similarity is 1.
    let ones = dir.path().join("ones.svgd");
    save_descriptors(&DescriptorSet::from_rows(&vec![vec![1.0, 2.0, 3.0]; 5]).unwrap(), &ones).unwrap();
    ok(&["analyze", "--input", p(&ones), "--out", p(&out)]);
    let doc = json(&out);
    assert_eq!(doc["density"], 4.0);
    assert_eq!(doc["k"], 4);
    assert_eq!(doc["similarity_stats"]["min"], 1.0);

    let ortho = dir.path().join("ortho.svgd");
    let rows: Vec<Vec<f32>> = (0..4).map(|i| (0..4).map(|j| (i == j) as u8 as f32).collect()).collect();
    save_descriptors(&DescriptorSet::from_rows(&rows).unwrap(), &ortho).unwrap();
    ok(&["analyze", "--input", p(&ortho), "--out", p(&out)]);
    let doc = json(&out);
    assert_eq!(doc["density"], 0.0);
    assert_eq!(doc["k"], 1);
    assert_eq!(doc["per_frame_counts"], serde_json::json!([0, 0, 0, 0]));

    // Two blocks of three identical frames each, orthogonal across blocks.
    let blocks = dir.path().join("blocks.svgd");
    let rows: Vec<Vec<f32>> = (0..6).map(|i| if i < 3 { vec![1.0, 0.0] } else { vec![0.0, 1.0] }).collect();
    save_descriptors(&DescriptorSet::from_rows(&rows).unwrap(), &blocks).unwrap();
    ok(&["analyze", "--input", p(&blocks), "--out", p(&out), "--threshold", "0.5"]);
    let doc = json(&out);
    assert_eq!(doc["density"], 2.0);
    assert_eq!(doc["per_frame_counts"], serde_json::json!([2, 2, 2, 2, 2, 2]));
}

#[test]
fn token_input_is_pooled() {
    let dir = tempfile::tempdir().unwrap();
    let tokens = dir.path().join("t.svgt");
    // Two tokens per frame averaging to (1, 0) or (0, 1).
    let data = vec![
        2.0, 0.0, 0.0, 0.0, //
        0.0, 0.0, 0.0, 2.0, //
        1.0, 0.0, 1.0, 0.0,
    ];
    save_tokens(&TokenStack::new(3, 2, 2, data).unwrap(), &tokens).unwrap();
    let out = dir.path().join("a.json");
    ok(&["analyze", "--input", p(&tokens), "--out", p(&out), "--threshold", "0.5"]);
    assert_eq!(json(&out)["per_frame_counts"], serde_json::json!([1, 0, 1]));
}

#[test]
fn bench_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b.json");
    ok(&["bench", "--frames", "512", "--groups", "8", "--model-only", "--out", p(&out)]);
    let doc = json(&out);
    assert_eq!(doc["baseline_ops"], 512.0f64.powi(2) * 1e6);
    assert_eq!(doc["per_subscene_ops"].as_array().unwrap().len(), 8);
    assert!((doc["speedup"].as_f64().unwrap() - 7.785).abs() < 1e-3);

    ok(&["bench", "--frames", "1", "--groups", "1", "--model-only", "--out", p(&out), "--tokens-per-frame", "32"]);
    assert!(json(&out)["speedup"].as_f64().unwrap() >= 0.999);

    ok(&["bench", "--frames", "16", "--groups", "4", "--tokens-per-frame", "16", "--out", p(&out), "--workers", "2"]);
    let doc = json(&out);
    assert_eq!(doc["bench"]["workers"], 2);
    assert!(doc["bench"]["total_ms"].is_number());
    assert_eq!(doc["bench"]["baseline_ops"], 256u64 * 256 * 16);
    assert_eq!(doc["plan"]["subscenes"].as_array().unwrap().len(), 4);
}

#[test]
fn bench_accepts_plan_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("s.svgd");
    ok(&["simulate", "--out", p(&input), "--frames", "24", "--clusters", "3"]);
    let part = dir.path().join("p.json");
    ok(&["partition", "--input", p(&input), "--out", p(&part), "--groups", "3"]);
    let out = dir.path().join("b.json");
    let plan = dir.path().join("p.plan.json");
    ok(&["bench", "--plan", p(&plan), "--tokens-per-frame", "8", "--out", p(&out), "--canonical"]);
    let doc = json(&out);
    assert_eq!(doc["plan"], json(&plan));
    assert!(doc["bench"].get("total_ms").is_none());
    assert!(doc["bench"].get("workers").is_none());

    let mut bad = json(&plan);
    bad["subscenes"][0]["frames"] = serde_json::json!([5, 1]);
    fs::write(&plan, serde_json::to_vec(&bad).unwrap()).unwrap();
    let r = svp(&["bench", "--plan", p(&plan), "--tokens-per-frame", "8", "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(3));
}

#[test]
fn simulate_is_seeded_and_writes_labels() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.svgd");
    let b = dir.path().join("b.svgd");
    ok(&["simulate", "--out", p(&a), "--frames", "12", "--clusters", "3", "--seed", "5"]);
    ok(&["simulate", "--out", p(&b), "--frames", "12", "--clusters", "3", "--seed", "5"]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let labels = json(&dir.path().join("a.labels.json"));
    assert_eq!(labels["labels"], serde_json::json!([0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2]));
}

#[test]
fn oracle_reports_dominance() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("s.svgd");
    ok(&["simulate", "--out", p(&input), "--frames", "8", "--clusters", "2", "--seed", "1"]);
    let out = dir.path().join("o.json");
    ok(&["oracle", "--input", p(&input), "--out", p(&out), "--groups", "2", "--cap", "5"]);
    let doc = json(&out);
    assert_eq!(doc["dominance"], true);
    assert!(doc["oracle"]["loss"].as_f64().unwrap() <= doc["optimizer"]["loss"].as_f64().unwrap());
    assert_eq!(doc["cap"], 5);
}
