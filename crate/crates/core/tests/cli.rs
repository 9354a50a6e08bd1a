//! End-to-end tests of the `semtask` binary: exit codes, file formats,
//! determinism, and manifest integrity.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use semtask::manifest::sha256_hex;

fn semtask(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semtask"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = semtask(args);
    assert!(
        out.status.success(),
        "semtask {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_two_leaf_taxonomy(dir: &Path) -> PathBuf {
    let path = dir.join("two_leaf.json");
    fs::write(
        &path,
        serde_json::json!({
            "nodes": [
                {"id": "root", "name": "root", "parents": [], "instances": 0},
                {"id": "left", "name": "left", "parents": ["root"], "instances": 12},
                {"id": "right", "name": "right", "parents": ["root"], "instances": 12},
            ]
        })
        .to_string(),
    )
    .unwrap();
    path
}

fn fixtures(dir: &Path, name: &str) {
    ok(&[
        "fixtures",
        "--name",
        name,
        "--per-class",
        "12",
        "--dim",
        "16",
        "--out",
        dir.to_str().unwrap(),
    ]);
}

#[test]
fn distances_on_two_leaf_fixture_is_three_lines_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let tax = write_two_leaf_taxonomy(dir.path());
    let out = dir.path().join("d.csv");
    ok(&["distances", "--taxonomy", tax.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let first = fs::read(&out).unwrap();
    assert_eq!(String::from_utf8_lossy(&first).lines().count(), 3);
    ok(&["distances", "--taxonomy", tax.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(fs::read(&out).unwrap(), first, "rerun must be byte-identical");
}

#[test]
fn distances_on_the_160_class_fixture_has_161_lines() {
    let dir = tempfile::tempdir().unwrap();
    fixtures(dir.path(), "tiered");
    let out = dir.path().join("d.csv");
    ok(&[
        "distances",
        "--taxonomy",
        dir.path().join("taxonomy.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 161);
}

#[test]
fn sample_is_byte_identical_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    fixtures(dir.path(), "tiered");
    let tax = dir.path().join("taxonomy.json");
    let cat = dir.path().join("catalog.csv");
    let out1 = dir.path().join("bed1.jsonl");
    let out2 = dir.path().join("bed2.jsonl");
    let base = [
        "sample",
        "--taxonomy",
        tax.to_str().unwrap(),
        "--catalog",
        cat.to_str().unwrap(),
        "--strategy",
        "uniform",
        "--ways",
        "5",
        "--shots",
        "1",
        "--tasks",
        "400",
        "--seed",
        "9",
    ];
    let mut args1: Vec<&str> = base.to_vec();
    args1.extend(["--out", out1.to_str().unwrap()]);
    ok(&args1);
    let mut args2: Vec<&str> = base.to_vec();
    args2.extend(["--out", out2.to_str().unwrap()]);
    ok(&args2);
    let a = fs::read(&out1).unwrap();
    assert_eq!(a, fs::read(&out2).unwrap());
    assert_eq!(String::from_utf8_lossy(&a).lines().count(), 401);
}

#[test]
fn sample_defaults_match_the_protocol_constants() {
    let dir = tempfile::tempdir().unwrap();
    fixtures(dir.path(), "tiered");
    let out = dir.path().join("bed.jsonl");
    ok(&[
        "sample",
        "--taxonomy",
        dir.path().join("taxonomy.json").to_str().unwrap(),
        "--catalog",
        dir.path().join("catalog.csv").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let text = fs::read_to_string(&out).unwrap();
    let header: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(header["config"]["alpha"], 0.383);
    assert_eq!(header["config"]["beta"], 100.0);
    assert_eq!(header["config"]["queries_per_class"], 10);
    assert_eq!(header["config"]["num_tasks"], 5000);
    assert_eq!(header["config"]["oversample_factor"], 2);
    assert_eq!(header["strategy"], "semantic");
    assert_eq!(text.lines().count(), 5001);
}

#[test]
fn hundred_way_sampling_works_on_the_fungi_fixture() {
    let dir = tempfile::tempdir().unwrap();
    fixtures(dir.path(), "fungi");
    let out = dir.path().join("bed.jsonl");
    ok(&[
        "sample",
        "--taxonomy",
        dir.path().join("taxonomy.json").to_str().unwrap(),
        "--catalog",
        dir.path().join("catalog.csv").to_str().unwrap(),
        "--strategy",
        "uniform",
        "--ways",
        "100",
        "--shots",
        "1",
        "--tasks",
        "50",
        "--seed",
        "4",
        "--out",
        out.to_str().unwrap(),
    ]);
    let text = fs::read_to_string(&out).unwrap();
    let first_task: serde_json::Value = serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
    assert_eq!(first_task["classes"].as_array().unwrap().len(), 100);
}

#[test]
fn stats_outputs_are_consistent_with_the_testbed() {
    let dir = tempfile::tempdir().unwrap();
    fixtures(dir.path(), "tiered");
    let tax = dir.path().join("taxonomy.json");
    let cat = dir.path().join("catalog.csv");
    let dmat = dir.path().join("d.csv");
    let bed = dir.path().join("bed.jsonl");
    let stats = dir.path().join("stats");
    ok(&["distances", "--taxonomy", tax.to_str().unwrap(), "--out", dmat.to_str().unwrap()]);
    ok(&[
        "sample",
        "--taxonomy",
        tax.to_str().unwrap(),
        "--catalog",
        cat.to_str().unwrap(),
        "--strategy",
        "uniform",
        "--tasks",
        "800",
        "--seed",
        "2",
        "--out",
        bed.to_str().unwrap(),
    ]);
    ok(&[
        "stats",
        "--testbed",
        bed.to_str().unwrap(),
        "--distances",
        dmat.to_str().unwrap(),
        "--out",
        stats.to_str().unwrap(),
    ]);

    let histogram = fs::read_to_string(stats.join("coarsity_histogram.csv")).unwrap();
    let total: usize = histogram
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(total, 800, "histogram bins must sum to the task count");

    let participation = fs::read_to_string(stats.join("participation.csv")).unwrap();
    let proportions: Vec<f64> = participation
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .collect();
    assert_eq!(proportions.len(), 160);
    let mean = proportions.iter().sum::<f64>() / 160.0;
    assert!((mean - 5.0 / 160.0).abs() < 1e-12, "mean proportion {mean}");

    let quartiles = fs::read_to_string(stats.join("quartiles.csv")).unwrap();
    assert_eq!(quartiles.lines().count(), 5);
    let counts: Vec<usize> = quartiles
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<usize>().unwrap())
        .collect();
    assert_eq!(counts.iter().sum::<usize>(), 800);
}

#[test]
fn eval_writes_report_per_task_and_rolling_files() {
    let dir = tempfile::tempdir().unwrap();
    fixtures(dir.path(), "tiered");
    let bed = dir.path().join("bed.jsonl");
    ok(&[
        "sample",
        "--taxonomy",
        dir.path().join("taxonomy.json").to_str().unwrap(),
        "--catalog",
        dir.path().join("catalog.csv").to_str().unwrap(),
        "--tasks",
        "500",
        "--seed",
        "6",
        "--out",
        bed.to_str().unwrap(),
    ]);
    let eval = dir.path().join("eval");
    ok(&[
        "eval",
        "--testbed",
        bed.to_str().unwrap(),
        "--embeddings",
        dir.path().join("embeddings.emb1").to_str().unwrap(),
        "--method",
        "protonet",
        "--window",
        "200",
        "--out",
        eval.to_str().unwrap(),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(eval.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["method"], "protonet");
    assert_eq!(report["num_tasks"], 500);
    let q1 = report["quartiles"][0]["mean_top1"].as_f64().unwrap();
    let q4 = report["quartiles"][3]["mean_top1"].as_f64().unwrap();
    assert!(q1 <= q4, "quartile means must be ordered: {q1} > {q4}");

    let per_task = fs::read_to_string(eval.join("per_task.csv")).unwrap();
    assert_eq!(per_task.lines().count(), 501);

    let rolling = fs::read_to_string(eval.join("rolling.csv")).unwrap();
    assert_eq!(rolling.lines().count(), 1 + 500 - 200 + 1, "header + T - w + 1 points");
}

#[test]
fn eval_accepts_finetune_flags_and_csv_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    fixtures(dir.path(), "tiered");
    let bed = dir.path().join("bed.jsonl");
    ok(&[
        "sample",
        "--taxonomy",
        dir.path().join("taxonomy.json").to_str().unwrap(),
        "--catalog",
        dir.path().join("catalog.csv").to_str().unwrap(),
        "--tasks",
        "60",
        "--seed",
        "8",
        "--out",
        bed.to_str().unwrap(),
    ]);
    // Convert the binary store to CSV and evaluate from that encoding.
    let store =
        semtask::evalkit::load_embeddings(&fs::read(dir.path().join("embeddings.emb1")).unwrap())
            .unwrap();
    let csv_path = dir.path().join("embeddings.csv");
    fs::write(&csv_path, store.to_csv()).unwrap();
    let eval = dir.path().join("eval");
    ok(&[
        "eval",
        "--testbed",
        bed.to_str().unwrap(),
        "--embeddings",
        csv_path.to_str().unwrap(),
        "--method",
        "finetune",
        "--steps",
        "10",
        "--lr",
        "0.001",
        "--window",
        "60",
        "--out",
        eval.to_str().unwrap(),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(eval.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["method"], "finetune");
}

#[test]
fn manifests_carry_hashes_that_validate_against_the_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let tax = write_two_leaf_taxonomy(dir.path());
    let out = dir.path().join("d.csv");
    ok(&["distances", "--taxonomy", tax.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("d.csv.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["tool"], "semtask");
    let recorded = manifest["inputs"][0]["sha256"].as_str().unwrap();
    let actual = sha256_hex(&fs::read(&tax).unwrap());
    assert_eq!(recorded, actual, "manifest hash must match the input file");
    assert_eq!(
        manifest["outputs"][0].as_str().unwrap(),
        out.to_str().unwrap()
    );
}

#[test]
fn validation_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = semtask(&[
        "distances",
        "--taxonomy",
        dir.path().join("missing.json").to_str().unwrap(),
        "--out",
        dir.path().join("d.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"nodes\": [{\"id\": \"a\", \"name\": \"a\", \"parents\": [\"ghost\"]}]}")
        .unwrap();
    let out = semtask(&[
        "distances",
        "--taxonomy",
        bad.to_str().unwrap(),
        "--out",
        dir.path().join("d.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ghost"));
}

#[test]
fn degenerate_data_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let tax = write_two_leaf_taxonomy(dir.path());
    let cat = dir.path().join("cat.csv");
    let mut csv = String::from("instance_id,class_id\n");
    for i in 0..12 {
        csv.push_str(&format!("left_{i},left\nright_{i},right\n"));
    }
    fs::write(&cat, csv).unwrap();
    // Only one 2-subset exists; asking for 5 unique tasks cannot succeed.
    let out = semtask(&[
        "sample",
        "--taxonomy",
        tax.to_str().unwrap(),
        "--catalog",
        cat.to_str().unwrap(),
        "--ways",
        "2",
        "--tasks",
        "5",
        "--oversample",
        "10",
        "--out",
        dir.path().join("bed.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("1 unique tasks"), "stderr: {stderr}");
}

#[test]
fn thread_count_env_var_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let tax = write_two_leaf_taxonomy(dir.path());
    let out_path = dir.path().join("d.csv");
    let output = Command::new(env!("CARGO_BIN_EXE_semtask"))
        .env("SEMTASK_THREADS", "1")
        .args(["distances", "--taxonomy", tax.to_str().unwrap(), "--out", out_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(output.status.success());
    assert!(out_path.exists());
}
