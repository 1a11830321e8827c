use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gcl_core::graph_data::load_dataset;
use gcl_core::model::{save_checkpoint, ModelConfig, ModelParams};

fn gcl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gcl"))
        .args(args)
        .current_dir(cwd)
        .env_remove("GCL_SEED")
        .env("RUST_LOG", "off")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn read_tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn small_data(dir: &Path) {
    ok(&gcl(&["generate", "--subjects", "60", "--nodes", "10", "--seed", "7", "--out", "data"], dir));
}

const TINY: [&str; 10] = [
    "--pretrain-epochs",
    "3",
    "--baseline-epochs",
    "3",
    "--finetune-K",
    "3",
    "--finetune-M",
    "1",
    "--widths",
    "6,4",
];

#[test]
fn generate_round_trips_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&gcl(&["generate", "--subjects", "40", "--nodes", "8", "--class-gap", "0.3", "--seed", "7", "--out", "a"], tmp.path()));
    ok(&gcl(&["generate", "--subjects", "40", "--nodes", "8", "--class-gap", "0.3", "--seed", "7", "--out", "b"], tmp.path()));
    let ds = load_dataset(&tmp.path().join("a")).unwrap();
    assert_eq!((ds.len(), ds.n(), ds.positives()), (40, 8, 20));
    assert_eq!(read_tree(&tmp.path().join("a")), read_tree(&tmp.path().join("b")));
}

#[test]
fn invalid_arguments_exit_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(gcl(&["generate", "--subjects", "1", "--out", "x"], tmp.path()).status.code(), Some(2));
    small_data(tmp.path());
    let out = gcl(&["train", "--data", "data", "--out", "r", "--finetune-M", "200", "--finetune-K", "100"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("frozen epochs"));
    assert_eq!(gcl(&["train", "--data", "data"], tmp.path()).status.code(), Some(2));
    assert_eq!(gcl(&["train", "--data", "missing", "--out", "r"], tmp.path()).status.code(), Some(3));
    fs::write(tmp.path().join("bad.json"), r#"{"train": {"epochs": 3}}"#).unwrap();
    assert_eq!(gcl(&["train", "--config", "bad.json", "--out", "r"], tmp.path()).status.code(), Some(2));
}

#[test]
fn train_outputs_are_byte_identical_across_reruns() {
    let tmp = tempfile::tempdir().unwrap();
    small_data(tmp.path());
    let mut args = vec!["train", "--data", "data", "--out", "r1", "--seed", "3"];
    args.extend(TINY);
    ok(&gcl(&args, tmp.path()));
    let a = read_tree(&tmp.path().join("r1"));
    ok(&gcl(&args, tmp.path()));
    let b = read_tree(&tmp.path().join("r1"));
    let names: Vec<String> = a.iter().map(|(p, _)| p.display().to_string()).collect();
    assert_eq!(
        names,
        [
            "checkpoint.json",
            "checkpoint_final.json",
            "checkpoint_pretrained.json",
            "config.json",
            "report.jsonl",
            "summary.json"
        ]
    );
    assert_eq!(a.iter().map(|(_, c)| c).collect::<Vec<_>>(), b.iter().map(|(_, c)| c).collect::<Vec<_>>());
    let report = fs::read_to_string(tmp.path().join("r1/report.jsonl")).unwrap();
    assert_eq!(report.lines().count(), 6);
}

#[test]
fn seed_falls_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    small_data(tmp.path());
    let run = |out: &str, env: Option<&str>| {
        let mut args = vec!["train", "--data", "data", "--out", out, "--mode", "baseline"];
        args.extend(TINY);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_gcl"));
        cmd.args(&args).current_dir(tmp.path()).env_remove("GCL_SEED");
        if let Some(v) = env {
            cmd.env("GCL_SEED", v);
        }
        ok(&cmd.output().unwrap());
        let cfg: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(tmp.path().join(out).join("config.json")).unwrap()).unwrap();
        cfg["train"]["seed"].as_u64().unwrap()
    };
    assert_eq!(run("plain", None), 0);
    assert_eq!(run("env", Some("42")), 42);
}

#[test]
fn echoed_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    small_data(tmp.path());
    let mut args = vec!["train", "--data", "data", "--out", "first", "--mode", "baseline", "--decoder", "off", "--augment", "off"];
    args.extend(TINY);
    ok(&gcl(&args, tmp.path()));
    ok(&gcl(&["train", "--config", "first/config.json", "--out", "second"], tmp.path()));
    for file in ["checkpoint.json", "report.jsonl", "summary.json"] {
        assert_eq!(
            fs::read(tmp.path().join("first").join(file)).unwrap(),
            fs::read(tmp.path().join("second").join(file)).unwrap(),
            "{file}"
        );
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("first/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["mode"], "baseline");
    assert_eq!(summary["use_decoder"], false);
    assert!(!tmp.path().join("first/checkpoint_pretrained.json").exists());
}

#[test]
fn zero_checkpoint_scores_class_one_prevalence() {
    let tmp = tempfile::tempdir().unwrap();
    small_data(tmp.path());
    let params = ModelParams::zeros(&ModelConfig::with_default_widths(10));
    save_checkpoint(&params, &tmp.path().join("zero.json")).unwrap();
    let out = gcl(&["evaluate", "--checkpoint", "zero.json", "--data", "data"], tmp.path());
    ok(&out);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["accuracy"], 0.5);
    assert_eq!(v["n_total"], 60);
}

#[test]
fn export_writes_sorted_embedding_table() {
    let tmp = tempfile::tempdir().unwrap();
    small_data(tmp.path());
    let mut args = vec!["train", "--data", "data", "--out", "run"];
    args.extend(TINY);
    ok(&gcl(&args, tmp.path()));
    ok(&gcl(
        &["export-embeddings", "--checkpoint", "run/checkpoint.json", "--data", "data", "--subset", "val", "--out", "emb.csv"],
        tmp.path(),
    ));
    let text = fs::read_to_string(tmp.path().join("emb.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 7);
    assert!(lines[0].starts_with("subject_id,label,pc1,pc2,z_0,"));
    let ids: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
}

#[test]
fn sweep_writes_one_row_per_point() {
    let tmp = tempfile::tempdir().unwrap();
    small_data(tmp.path());
    let mut args = vec![
        "sweep",
        "--data",
        "data",
        "--out",
        "sw",
        "--proportions",
        "0.1,0.3,0.5,0.7,1.0",
        "--configs",
        "cl/encoder_decoder/da,baseline/encoder/none",
        "--jobs",
        "2",
    ];
    args.extend(TINY);
    ok(&gcl(&args, tmp.path()));
    let text = fs::read_to_string(tmp.path().join("sw/sweep.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "framework,architecture,augmentation,proportion,seed,accuracy,status");
    assert_eq!(lines.len(), 11);
    assert!(lines[1].starts_with("cl,encoder_decoder,da,"));
    assert!(lines[1..].iter().all(|l| l.ends_with(",ok")));
    assert_eq!(gcl(&["sweep", "--data", "data", "--out", "x", "--configs", "cl/bad/da"], tmp.path()).status.code(), Some(2));
}

#[test]
fn gradcheck_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = gcl(&["gradcheck", "--seed", "1"], tmp.path());
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().count(), 12);
    assert!(!text.contains("FAIL"));
}
