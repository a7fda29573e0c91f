use std::path::PathBuf;

use tweetgage::config::RunConfig;
use tweetgage::ingest::write_corpus;
use tweetgage::synth::{generate, SynthConfig};

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

#[test]
fn bundled_corpus_matches_generator() {
    let mut expected = Vec::new();
    write_corpus(&generate(&SynthConfig::new(1000, 0.9, 2021)).unwrap(), &mut expected).unwrap();
    let bundled = std::fs::read(data_dir().join("synth_1000.jsonl")).unwrap();
    assert!(bundled == expected, "data/synth_1000.jsonl is stale; regenerate with `tweetgage synth`");
}

#[test]
fn sample_config_loads() {
    let config = RunConfig::load(data_dir().join("pipeline.toml"), &[]).unwrap();
    config.validate_paths().unwrap();
    assert_eq!(config.seed, 7);
}
