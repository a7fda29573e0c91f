use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tweetgage(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tweetgage"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = tweetgage(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const DATA: [&str; 8] = [
    "--graph", "graph.pgr", "--phi", "phi.csv", "--emb", "emb.emb1", "--labels", "labels.csv",
];

#[test]
fn staged_commands_produce_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--n-posts", "300", "--homophily", "0.9", "--seed", "5", "--out", "raw.jsonl"]);
    let msg = ok(d, &["ingest", "--input", "raw.jsonl"]);
    assert!(msg.contains("kept 300 posts"), "{msg}");
    ok(d, &["build-graph", "--input", "posts.jsonl", "--delta-minutes", "15", "--out", "graph.pgr"]);
    ok(d, &["analyze", "--graph", "graph.pgr", "--labels", "labels.csv", "--posts", "posts.jsonl", "--out", "stats"]);
    assert!(d.join("stats").read_dir().unwrap().count() >= 3);
    ok(d, &["embed-fallback", "--input", "posts.jsonl", "--dim", "32", "--seed", "7", "--out", "emb.emb1"]);
    ok(d, &["features", "--input", "posts.jsonl", "--out", "phi.csv"]);

    let mut train = vec!["train", "--use-phi", "--use-emb", "--seed", "7", "--max-epochs", "3", "--hidden", "8"];
    train.extend(DATA);
    ok(d, &train);
    assert!(d.join("model.tgm1").exists() && d.join("history.csv").exists() && d.join("split.json").exists());

    let mut base = vec!["baseline", "--kind", "mlp", "--use-phi", "--use-emb", "--seed", "7", "--max-epochs", "3"];
    base.extend(DATA);
    ok(d, &base);
    assert!(d.join("baseline_mlp.tgm1").exists());

    let mut eval = vec![
        "evaluate", "--model", "model.tgm1", "--model", "mlp=baseline_mlp.tgm1", "--use-phi", "--use-emb",
    ];
    eval.extend(DATA);
    let printed = ok(d, &eval);
    assert!(printed.contains("tweetgage:") && printed.contains("mlp:"), "{printed}");
    let report = fs::read_to_string(d.join("report.csv")).unwrap();
    assert_eq!(report.lines().next().unwrap(), "model,Acc,Prec,Recall,AUC_ROC,AUC_PR,F1");
    assert_eq!(report.lines().count(), 3);

    let mut ablate = vec!["ablate", "--seed", "7", "--max-epochs", "2", "--hidden", "8", "--pca-components", "4"];
    ablate.extend(DATA);
    ok(d, &ablate);
    let table = fs::read_to_string(d.join("ablation.csv")).unwrap();
    assert_eq!(table.lines().count(), 8);
}

#[test]
fn seed_is_mandatory_for_train_and_ablate() {
    let tmp = tempfile::tempdir().unwrap();
    for cmd in ["train", "ablate"] {
        let mut args = vec![cmd];
        args.extend(DATA);
        let out = tweetgage(tmp.path(), &args);
        assert!(!out.status.success());
        assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
    }
}

#[test]
fn synth_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--n-posts", "200", "--seed", "9", "--out", "a.jsonl"]);
    ok(d, &["synth", "--n-posts", "200", "--seed", "9", "--out", "b.jsonl"]);
    assert_eq!(fs::read(d.join("a.jsonl")).unwrap(), fs::read(d.join("b.jsonl")).unwrap());
}

#[test]
fn pipeline_with_overrides_and_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--n-posts", "300", "--seed", "2", "--out", "raw.jsonl"]);
    fs::write(d.join("run.toml"), "seed = 1\n[paths]\ninput = \"raw.jsonl\"\nwork_dir = \"out\"\n").unwrap();
    let args = [
        "pipeline",
        "--config",
        "run.toml",
        "--set",
        "features.embedding_dim=16",
        "--set",
        "model.max_epochs=2",
        "--set",
        "eval.baselines=[\"mlp\"]",
    ];
    let first = ok(d, &args);
    assert!(first.contains("train: ran"), "{first}");
    assert!(d.join("out/report.csv").exists());
    let second = ok(d, &args);
    assert!(second.lines().all(|l| l.ends_with("up to date")), "{second}");
    let forced = ok(d, &[&args[..], &["--force"]].concat());
    assert!(forced.lines().all(|l| l.ends_with("ran")), "{forced}");
}

#[test]
fn pipeline_missing_input_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("run.toml"), "seed = 1\n[paths]\ninput = \"nope.jsonl\"\nwork_dir = \"out\"\n").unwrap();
    let out = tweetgage(d, &["pipeline", "--config", "run.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("input not found"));
    assert!(!d.join("out/manifest.json").exists());
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("run.toml"), "seed = 1\n[paths]\ninput = \"x\"\nwork_dir = \"out\"\n").unwrap();
    let out = tweetgage(d, &["pipeline", "--config", "run.toml", "--set", "model.depth=3"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("depth"));
}
