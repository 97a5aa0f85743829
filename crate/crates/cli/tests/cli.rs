use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "--preset",
    "quick",
    "--set",
    "corpus.n_per_domain=60",
    "--set",
    r#"model={"n_layers":1,"n_heads":2,"d_model":16,"d_head":8,"d_ff":32,"max_seq_len":64}"#,
    "--set",
    "train.steps=3",
    "--set",
    "train.batch_size=4",
    "--set",
    "train.warmup_steps=0",
    "--set",
    "eval.n=6",
];

fn xattn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xattn"))
        .args(args)
        .env_remove("XATTN_OUT")
        .output()
        .expect("binary runs")
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = dir.to_str().unwrap();
    let mut all = vec!["--out", out];
    all.extend_from_slice(TINY);
    all.extend_from_slice(args);
    xattn(&all)
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        o.status,
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn gen_is_reproducible_and_refuses_to_overwrite() {
    let t = tempfile::tempdir().unwrap();
    let (d1, d2) = (t.path().join("a"), t.path().join("b"));
    ok(&run(&d1, &["gen", "--seed", "3"]));
    ok(&run(&d2, &["gen", "--seed", "3"]));
    for f in ["world.json", "corpus_a.jsonl", "corpus_b.jsonl", "eval-cross.jsonl", "eval-uni-A.jsonl"] {
        assert_eq!(read(d1.join(f)), read(d2.join(f)), "{f}");
    }
    let again = run(&d1, &["gen", "--seed", "3"]);
    assert!(!again.status.success());
    assert!(stderr(&again).contains("--force"), "{}", stderr(&again));
    ok(&run(&d1, &["--force", "gen", "--seed", "3"]));
}

#[test]
fn gen_writes_one_file_per_condition() {
    let t = tempfile::tempdir().unwrap();
    ok(&run(t.path(), &["gen", "--conditions", "cross,uni-A"]));
    let mut evals: Vec<String> = std::fs::read_dir(t.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("eval-"))
        .collect();
    evals.sort();
    assert_eq!(evals, ["eval-cross.jsonl", "eval-uni-A.jsonl"]);
    assert!(t.path().join("config.resolved.json").exists());
}

#[test]
fn output_directory_comes_from_the_environment() {
    let t = tempfile::tempdir().unwrap();
    let dir = t.path().join("env-out");
    let mut args = TINY.to_vec();
    args.push("gen");
    let o = Command::new(env!("CARGO_BIN_EXE_xattn"))
        .args(&args)
        .env("XATTN_OUT", &dir)
        .output()
        .unwrap();
    ok(&o);
    assert!(dir.join("world.json").exists());
}

#[test]
fn malformed_config_names_the_key() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("bad.json");
    std::fs::write(&cfg, r#"{"train": {"lr": "fast"}}"#).unwrap();
    let o = run(t.path(), &["--config", cfg.to_str().unwrap(), "gen"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("train.lr"), "{}", stderr(&o));

    std::fs::write(&cfg, r#"{"corpus": {"n_per_domian": 5}}"#).unwrap();
    let o = run(t.path(), &["--config", cfg.to_str().unwrap(), "gen"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("n_per_domian"), "{}", stderr(&o));
}

#[test]
fn missing_inputs_fail() {
    let t = tempfile::tempdir().unwrap();
    let o = run(&t.path().join("out"), &["train", "--data", t.path().join("nope").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("nope"), "{}", stderr(&o));
}

#[test]
fn train_eval_probe_sweep_report() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    let model_dir = t.path().join("model");
    ok(&run(&data, &["gen"]));
    let d = data.to_str().unwrap();
    ok(&run(&model_dir, &["train", "--data", d, "--steps", "1"]));
    let model = model_dir.join("model.xatn");
    let m = model.to_str().unwrap();
    assert!(model_dir.join("loss.csv").exists());

    let plain = t.path().join("plain");
    let zero = t.path().join("zero");
    ok(&run(&plain, &["eval", "--model", m, "--data", d, "--condition", "cross"]));
    ok(&run(&zero, &["eval", "--model", m, "--data", d, "--condition", "cross", "--steer-group", "domain-A", "--epsilon", "0"]));
    assert_eq!(read(plain.join("outcomes.jsonl")), read(zero.join("outcomes.jsonl")));
    let report: serde_json::Value = serde_json::from_slice(&read(plain.join("report.json"))).unwrap();
    assert!(report.as_array().unwrap().iter().all(|r| r["meta"]["run_id"].is_string()));

    let probe = t.path().join("probe");
    ok(&run(&probe, &["probe", "--model", m, "--data", d]));
    let csv = String::from_utf8(read(probe.join("contribution_x.csv"))).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 1 + 1, "{csv}");
    assert_eq!(lines[0].split(',').count(), 1 + 2, "{csv}");

    let sweep = t.path().join("sweep");
    ok(&run(&sweep, &["sweep", "--model", m, "--data", d, "--epsilon", "-0.5,0,0.5"]));
    let s: serde_json::Value = serde_json::from_slice(&read(sweep.join("sweep.json"))).unwrap();
    assert_eq!(s["points"].as_array().unwrap().len(), 3);

    let summary = t.path().join("summary");
    ok(&run(&summary, &["report", "--in", t.path().to_str().unwrap()]));
    let md = String::from_utf8(read(summary.join("summary.md"))).unwrap();
    assert!(md.contains("sweep.json") && md.contains("report.json"), "{md}");
}

#[test]
fn eval_rejects_a_model_for_another_vocabulary() {
    let t = tempfile::tempdir().unwrap();
    let (small, big) = (t.path().join("small"), t.path().join("big"));
    ok(&run(&small, &["gen"]));
    ok(&run(&big, &["--set", "world.n_values=14", "gen"]));
    let model_dir = t.path().join("m");
    ok(&run(&model_dir, &["train", "--data", small.to_str().unwrap(), "--steps", "1"]));
    let o = run(
        &t.path().join("e"),
        &["eval", "--model", model_dir.join("model.xatn").to_str().unwrap(), "--data", big.to_str().unwrap()],
    );
    assert!(!o.status.success());
    assert!(stderr(&o).contains("mismatch"), "{}", stderr(&o));
}

#[test]
fn compare_emits_one_row_per_seed() {
    let t = tempfile::tempdir().unwrap();
    ok(&run(t.path(), &["compare", "--seeds", "1,2,3"]));
    let csv = String::from_utf8(read(t.path().join("comparison.csv"))).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 + 1, "{csv}");
    assert!(csv.lines().last().unwrap().contains("summary"));
    let c: serde_json::Value = serde_json::from_slice(&read(t.path().join("comparison.json"))).unwrap();
    assert!(c["sign_test_p"].is_number());
    assert!(t.path().join("seed-2/instance/model.xatn").exists());
}

#[test]
fn first_stage_writes_a_base_model_and_init_resumes_from_it() {
    let t = tempfile::tempdir().unwrap();
    let stage = ["--set", "pretrain.steps=2", "--set", "pretrain.n_per_domain=20"];
    let data = t.path().join("data");
    ok(&run(&data, &[&stage[..], &["gen"]].concat()));
    assert!(data.join("pretrain_a.jsonl").exists());
    let data_s = data.to_str().unwrap();

    let two = t.path().join("two");
    ok(&run(&two, &[&stage[..], &["train", "--data", data_s, "--mix", "instance"]].concat()));
    assert!(two.join("base.xatn").exists());
    assert_eq!(String::from_utf8(read(two.join("pretrain_loss.csv"))).unwrap().lines().count(), 3);

    let resumed = t.path().join("resumed");
    let base = two.join("base.xatn");
    ok(&run(&resumed, &["train", "--data", data_s, "--mix", "instance", "--init", base.to_str().unwrap()]));
    assert_eq!(read(resumed.join("model.xatn")), read(two.join("model.xatn")));
    assert!(!resumed.join("base.xatn").exists());
}
