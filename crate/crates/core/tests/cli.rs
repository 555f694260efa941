mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::data_path;
use common::weights::random_tensor;
use mixdse::dse::reference_plan;
use mixdse::quant::{write_weight_file, WeightTensor};
use mixdse::sparse::read_model;
use mixdse::{NetworkDesc, TilingPlan};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SMALL_NET: &str = r#"{"name":"small","input":{"h":16,"w":16,"c":3},"precision":{"q_a":8,"q_w":8},
  "layers":[{"id":1,"kind":"conv","k":3,"out_channels":8,"quantize":false},
            {"id":2,"kind":"maxpool","k":2,"stride":2},
            {"id":3,"kind":"conv","k":3,"out_channels":16},
            {"id":4,"kind":"pointwise-conv","k":1,"out_channels":16},
            {"id":5,"kind":"conv","k":3,"out_channels":8,"quantize":false}]}"#;

fn mixdse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixdse")).args(args).output().expect("binary runs")
}

fn text(out: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
}

fn small_net(dir: &Path) -> (String, NetworkDesc) {
    let path = dir.join("small.json");
    std::fs::write(&path, SMALL_NET).unwrap();
    (path.to_str().unwrap().to_string(), NetworkDesc::from_path(&path).unwrap())
}

fn weights_for(dir: &Path, net: &NetworkDesc) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tensors: Vec<WeightTensor> = net
        .conv_layers()
        .map(|l| WeightTensor { layer_id: l.id, ..random_tensor(&mut rng, l.m, l.n, l.k) })
        .collect();
    let path = dir.join("w.mpqw");
    write_weight_file(std::fs::File::create(&path).unwrap(), &tensors).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn dse_writes_sweep_and_plan() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sweep.csv");
    let plan = dir.path().join("plan.json");
    let net = data_path("simyolov2.json");
    let out = mixdse(&["dse", "--net", &net, "--alpha", "8MiB", "--params-on-chip", "--csv", csv.to_str().unwrap(), "--plan-out", plan.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let rows = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(rows.lines().count(), 1 + 18);
    let plan = TilingPlan::from_json(&std::fs::read_to_string(&plan).unwrap()).unwrap();
    plan.validate(&NetworkDesc::from_path(&net).unwrap()).unwrap();
    assert!(text(&out).contains("boundary"));
}

#[test]
fn dse_reports_infeasible_budget() {
    let out = mixdse(&["dse", "--net", &data_path("simyolov2.json"), "--alpha", "1KB", "--csv", "/dev/null"]);
    assert_eq!(out.status.code(), Some(3), "{}", text(&out));
}

#[test]
fn input_errors_exit_with_two() {
    assert_eq!(mixdse(&["dse", "--net", "/nonexistent.json"]).status.code(), Some(2));
    assert_eq!(mixdse(&["dse", "--net", &data_path("simyolov2.json"), "--alpha", "lots"]).status.code(), Some(2));
    assert_eq!(mixdse(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn quantize_then_verify_encoded_model() {
    let dir = tempfile::tempdir().unwrap();
    let (net_path, net) = small_net(dir.path());
    let weights = weights_for(dir.path(), &net);
    let model = dir.path().join("m.mpqe");
    let out = mixdse(&["quantize", "--net", &net_path, "--weights", &weights, "--ratio", "0.1", "--tile", "4", "--out", model.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let report = text(&out);
    assert!(report.starts_with("layer,p,bits,compression,encoded_bytes"));
    assert!(report.contains("compression vs 32-bit"));
    let layers = read_model(std::fs::File::open(&model).unwrap()).unwrap();
    assert_eq!(layers.len(), 2);

    let out = mixdse(&["simulate", "--net", &net_path, "--encoded", model.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    assert!(text(&out).contains("PASS"));
}

#[test]
fn quantize_rejects_oversized_blocks() {
    let dir = tempfile::tempdir().unwrap();
    let (net_path, net) = small_net(dir.path());
    let weights = weights_for(dir.path(), &net);
    let out = mixdse(&["quantize", "--net", &net_path, "--weights", &weights, "--ratio", "0.1", "--coord-bits", "4", "--out", "/dev/null"]);
    assert_eq!(out.status.code(), Some(2), "{}", text(&out));
    assert!(text(&out).contains("--coord-bits"));
}

#[test]
fn optimize_sparsity_writes_ratios_and_traces() {
    let dir = tempfile::tempdir().unwrap();
    let (net_path, _) = small_net(dir.path());
    let ratios = dir.path().join("ratios.json");
    let traces = dir.path().join("traces");
    let out = mixdse(&[
        "optimize-sparsity", "--net", &net_path, "--iters", "8", "--trace-dir", traces.to_str().unwrap(), "--out", ratios.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let map: std::collections::BTreeMap<String, f64> = serde_json::from_str(&std::fs::read_to_string(&ratios).unwrap()).unwrap();
    assert_eq!(map.keys().collect::<Vec<_>>(), ["3", "4"]);
    assert!(map.values().all(|p| (0.0..=1.0).contains(p)));
    let trace = std::fs::read_to_string(traces.join("layer3.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 8);
    assert!(trace.starts_with("iter,p,L,mean,var,ucb"));
}

#[test]
fn simulate_counts_and_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let net = NetworkDesc::from_path(data_path("simyolov2.json")).unwrap();
    let plan = dir.path().join("plan.json");
    std::fs::write(&plan, reference_plan(&net, 7, true).unwrap().to_json()).unwrap();
    let out = mixdse(&["simulate", "--net", &data_path("simyolov2.json"), "--plan", plan.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let csv = text(&out);
    assert_eq!(csv.lines().filter(|l| l.contains(",row-reuse,")).count(), 7);
    assert_eq!(csv.lines().filter(|l| l.contains(",full-reuse,")).count(), 10);
    assert!(csv.lines().any(|l| l.starts_with("total,-,14185472,")));

    assert_eq!(mixdse(&["simulate", "--net", &data_path("simyolov2.json")]).status.code(), Some(2));

    let out = mixdse(&["simulate", "--net", &data_path("simyolov2.json"), "--verify-conv", "--cases", "20"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    assert!(text(&out).contains("PASS 20/20"));
}

#[test]
fn optimize_sparsity_with_external_objective() {
    let dir = tempfile::tempdir().unwrap();
    let (net_path, _) = small_net(dir.path());
    let ratios = dir.path().join("ratios.json");
    let script = r#"read p; awk -v p="$p" 'BEGIN { print 0.7 - 0.3 * exp(-30 * p), 32 / (1 + 7 * p) }'"#;
    let out = mixdse(&[
        "optimize-sparsity", "--net", &net_path, "--layers", "3", "--iters", "10", "--out", ratios.to_str().unwrap(),
        "--command", "sh", "-c", script,
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let map: std::collections::BTreeMap<String, f64> = serde_json::from_str(&std::fs::read_to_string(&ratios).unwrap()).unwrap();
    let p = map["3"];
    assert!(p > 0.0 && p < 0.3, "{p}");

    let out = mixdse(&["optimize-sparsity", "--net", &net_path, "--layers", "3", "--iters", "5", "--command", "sh", "-c", "echo nonsense"]);
    assert_ne!(out.status.code(), Some(0));
}
