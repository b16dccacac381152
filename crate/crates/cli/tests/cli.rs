use std::path::Path;
use std::process::{Command, Output};

use rest_kg::checkpoint::Checkpoint;
use rest_kg::evaluator::derive_seed;
use rest_kg::model::ModelParams;
use rest_kg::synthetic::{composition_dataset, CompositionConfig};

fn rest(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rest"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_dataset(dir: &Path) {
    let cfg = CompositionConfig {
        entities: 20,
        chain_edges: 20,
        noise_edges: 6,
        valid_fraction: 0.2,
        test_fraction: 0.3,
        seed: 4,
    };
    composition_dataset(&cfg).unwrap().write(dir).unwrap();
}

#[test]
fn verify_prints_one_match_per_instance() {
    let o = rest(&["--workers", "1", "verify", "--instances", "200", "--max-nodes", "8", "--k", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 200);
    assert!(text.lines().all(|l| l.starts_with("MATCH ")));
}

#[test]
fn exit_codes_follow_error_category() {
    assert_eq!(rest(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(rest(&["eval", "--set", "nonsense"]).status.code(), Some(1));
    assert_eq!(rest(&["eval", "--set", "dimm=16"]).status.code(), Some(2));
    assert_eq!(rest(&["eval", "--set", "dim=12"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let set = format!("dataset={}", missing.display());
    assert_eq!(rest(&["eval", "--scorer", "oracle", "--set", &set]).status.code(), Some(3));
}

#[test]
fn oracle_eval_reports_perfect_json() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy_v2");
    small_dataset(&data);
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, format!("dataset={}\nnum_negatives=10\nseed=3\n", data.display())).unwrap();
    let o = rest(&["eval", "--scorer", "oracle", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 1);
    let v: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
    assert_eq!(v["mrr"], 1.0);
    assert_eq!(v["hits1"], 1.0);
    assert_eq!(v["dataset"], "toy_v2");
    assert_eq!(v["version"], "v2");
    assert_eq!(v["negatives"], 10);
    assert_eq!(v["sides"], "both");
    assert_eq!(v["seed"], 3);
}

#[test]
fn zero_learning_rate_keeps_initialization_and_downstream_commands_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy");
    small_dataset(&data);
    let ckpt = dir.path().join("model.ckpt");
    let log = dir.path().join("log.jsonl");
    let sets = [
        format!("dataset={}", data.display()),
        format!("checkpoint={}", ckpt.display()),
        format!("log={}", log.display()),
        "dim=16".into(),
        "hops=2".into(),
        "learning_rate=0".into(),
        "epochs=1".into(),
        "valid_limit=2".into(),
        "valid_negatives=5".into(),
        "seed=9".into(),
    ];
    let mut args = vec!["--workers", "1", "train"];
    for s in &sets {
        args.extend(["--set", s.as_str()]);
    }
    let o = rest(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let lines = std::fs::read_to_string(&log).unwrap();
    assert_eq!(lines.lines().count(), 1);
    let entry: serde_json::Value = serde_json::from_str(lines.trim()).unwrap();
    for key in ["epoch", "train_loss", "valid_hits10", "seconds"] {
        assert!(entry.get(key).is_some(), "log lacks {key}");
    }

    let ck = Checkpoint::load(&ckpt).unwrap();
    let init = ModelParams::init(ck.config(), ck.params.relations(), derive_seed(9, &[0xA11])).unwrap();
    assert_eq!(ck.params.tensors(), init.tensors());

    let o = rest(&["rulescore", "--checkpoint", ckpt.to_str().unwrap(), "--head", "r3", "--top-k", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "head_relation,body,score");
    assert_eq!(rows.len(), 4);
    assert!(rows[1..].iter().all(|r| r.starts_with("r3,") && r.split(',').count() == 3));

    let o = rest(&["eval", "--set", &sets[0], "--set", &sets[1], "--set", "num_negatives=5", "--set", "sides=tail"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert!(v["mrr"].as_f64().unwrap() > 0.0);

    let o = rest(&["rulescore", "--checkpoint", ckpt.to_str().unwrap(), "--head", "r9"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn extract_flags_the_query_edge() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy");
    small_dataset(&data);
    let first = std::fs::read_to_string(data.join("train.txt")).unwrap();
    let cols: Vec<&str> = first.lines().next().unwrap().split('\t').collect();
    let set = format!("dataset={}", data.display());
    let o = rest(&["extract", "--set", &set, "--head", cols[0], "--relation", cols[1], "--tail", cols[2]]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.starts_with("# nodes="));
    let flagged: Vec<&str> = text.lines().filter(|l| l.ends_with("\tQUERY")).collect();
    assert_eq!(flagged, vec![format!("{}\t{}\t{}\tQUERY", cols[0], cols[1], cols[2])]);

    let o = rest(&["extract", "--set", &set, "--head", "ghost", "--relation", cols[1], "--tail", cols[2]]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn bench_emits_csv() {
    let o = rest(&["bench", "--random", "200,10,600", "--queries", "50", "--repeats", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "dataset,scope,with_labeling,queries,total_seconds,mean_ms,speedup");
    assert!(rows[1].starts_with("random_200_10_600,enclosing,false,50,"));
    assert!(rows[2].starts_with("random_200_10_600,enclosing,true,50,"));
    assert_eq!(rest(&["bench", "--random", "1,2"]).status.code(), Some(1));
}
