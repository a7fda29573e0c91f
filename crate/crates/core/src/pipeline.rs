//! Artifact-level stage functions and the end-to-end pipeline driver with
//! content-hash based stage skipping and a reproducibility manifest.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::baselines::{train_baseline, Baseline, BaselineKind};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, make_split, run_ablation, write_ablation_csv, write_report_csv, AblationSettings, Averaging,
    EvalReport, Split,
};
use crate::features::{
    assemble_phi, build_inputs, fallback_embed, load_embeddings, read_features_csv, save_embeddings,
    write_features_csv, BlockMode, EmbeddingMatrix, FeatureMatrix, FeatureSet, InputOptions,
};
use crate::ingest::{dataset_stats, label_rows, read_corpus, read_labels, write_corpus, write_labels, TweetRecord};
use crate::model::{train_graph_model, GraphInput, ModelConfig, TweetGageModel};
use crate::netstats::{write_analysis, CentralityTable};
use crate::nn::{Classifier, Tensor2, TrainConfig};
use crate::postgraph::{graph_stats, load_graph, save_graph, PostGraph};
use crate::sub_seed;

pub const POSTS: &str = "posts.jsonl";
pub const LABELS: &str = "labels.csv";
pub const DATASET_STATS: &str = "dataset_stats.json";
pub const GRAPH: &str = "graph.pgr";
pub const GRAPH_STATS: &str = "graph_stats.json";
pub const ANALYSIS_DIR: &str = "analysis";
pub const EMBEDDINGS: &str = "emb.emb1";
pub const PHI: &str = "phi.csv";
pub const SPLIT: &str = "split.json";
pub const MODEL: &str = "model.tgm1";
pub const HISTORY: &str = "history.csv";
pub const REPORT: &str = "report.csv";
pub const ABLATION: &str = "ablation.csv";
pub const MANIFEST: &str = "manifest.json";

pub const GRAPH_MODEL_NAME: &str = "tweetgage";

fn write_json(value: &impl Serialize, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::InputNotFound(path.to_path_buf()))
    }
}

pub fn read_posts(path: &Path) -> Result<Vec<TweetRecord>> {
    require(path)?;
    let parsed = read_corpus(path)?;
    if parsed.records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(parsed.records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub kept: usize,
    pub malformed: usize,
    pub non_english: usize,
}

/// Parse a raw corpus and write the cleaned posts, labels and statistics.
pub fn ingest_corpus(input: &Path, posts: &Path, labels: &Path, stats: &Path) -> Result<IngestSummary> {
    require(input)?;
    let parsed = read_corpus(input)?;
    if parsed.records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let summary = IngestSummary {
        kept: parsed.records.len(),
        malformed: parsed.malformed,
        non_english: parsed.non_english,
    };
    log::info!(
        "ingest: kept {}, malformed {}, non-English {}",
        summary.kept,
        summary.malformed,
        summary.non_english
    );
    let file = File::create(posts).map_err(|e| Error::io(posts, e))?;
    write_corpus(&parsed.records, file)?;
    write_labels(&label_rows(&parsed.records), labels)?;
    write_json(
        &json!({ "ingest": summary, "dataset": dataset_stats(&parsed.records)? }),
        stats,
    )?;
    Ok(summary)
}

pub fn build_graph_file(posts: &Path, delta_seconds: i64, graph_out: &Path, stats_out: &Path) -> Result<PostGraph> {
    let records = read_posts(posts)?;
    let graph = crate::postgraph::build_graph(&records, delta_seconds)?;
    save_graph(&graph, graph_out)?;
    write_json(&graph_stats(&graph), stats_out)?;
    Ok(graph)
}

/// Centralities, class-split KS tests and log-log distributions. When the
/// cleaned posts are given, the post features join the correlation matrix.
pub fn analyze_graph(graph_path: &Path, labels: &Path, posts: Option<&Path>, out_dir: &Path) -> Result<()> {
    require(graph_path)?;
    let graph = load_graph(graph_path)?;
    let labels = read_label_vector(labels)?;
    if labels.len() != graph.n_nodes() {
        return Err(Error::RowCountMismatch {
            expected: graph.n_nodes(),
            found: labels.len(),
        });
    }
    let mut extra: Vec<(String, Vec<f64>)> = Vec::new();
    if let Some(posts) = posts {
        let phi = assemble_phi(&read_posts(posts)?);
        if phi.n_rows() != graph.n_nodes() {
            return Err(Error::RowCountMismatch {
                expected: graph.n_nodes(),
                found: phi.n_rows(),
            });
        }
        extra = phi
            .names()
            .iter()
            .enumerate()
            .map(|(j, name)| (name.clone(), phi.column(j)))
            .collect();
    }
    let table = CentralityTable::compute(&graph);
    write_analysis(out_dir, &table, &labels, &extra)
}

pub fn embed_fallback_file(posts: &Path, dim: usize, seed: u64, out: &Path) -> Result<()> {
    let records = read_posts(posts)?;
    let texts: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
    save_embeddings(&fallback_embed(&texts, dim, seed)?, out)
}

pub fn features_file(posts: &Path, out: &Path) -> Result<()> {
    write_features_csv(&assemble_phi(&read_posts(posts)?), out)
}

pub fn read_label_vector(path: &Path) -> Result<Vec<u8>> {
    require(path)?;
    Ok(read_labels(path)?.into_iter().map(|r| r.label).collect())
}

pub fn split_file(labels: &Path, fractions: [f64; 3], seed: u64, out: &Path) -> Result<Split> {
    let split = make_split(&read_label_vector(labels)?, fractions, seed)?;
    split.save(out)?;
    Ok(split)
}

/// Reuse the split at `path` when it exists, otherwise create and save one.
pub fn load_or_make_split(labels: &Path, path: &Path, fractions: [f64; 3], seed: u64) -> Result<Split> {
    if path.exists() {
        Split::load(path)
    } else {
        log::info!("creating split {}", path.display());
        split_file(labels, fractions, seed, path)
    }
}

/// Everything a training or evaluation run reads.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub graph: PostGraph,
    pub phi: FeatureMatrix,
    pub emb: EmbeddingMatrix,
    pub labels: Vec<u8>,
    pub split: Split,
}

impl Artifacts {
    pub fn load(graph: &Path, phi: &Path, emb: &Path, labels: &Path, split: &Path) -> Result<Self> {
        for p in [graph, phi, emb, labels, split] {
            require(p)?;
        }
        let graph = load_graph(graph)?;
        let n = graph.n_nodes();
        let phi = read_features_csv(phi)?;
        let emb = load_embeddings(emb, n)?;
        let labels = read_label_vector(labels)?;
        let split = Split::load(split)?;
        for rows in [phi.n_rows(), labels.len()] {
            if rows != n {
                return Err(Error::RowCountMismatch { expected: n, found: rows });
            }
        }
        split.validate(n)?;
        Ok(Artifacts {
            graph,
            phi,
            emb,
            labels,
            split,
        })
    }

    pub fn inputs(&self, set: FeatureSet, opts: InputOptions) -> Result<Tensor2> {
        Ok(build_inputs(set, &self.phi, &self.emb, &self.split.train, opts)?.to_tensor())
    }
}

/// The MLP sees the same features as the graph model; the embedding
/// baselines see only the text embeddings.
pub fn baseline_feature_set(kind: BaselineKind, graph_set: FeatureSet) -> FeatureSet {
    match kind {
        BaselineKind::Mlp => graph_set,
        BaselineKind::Cnn1d | BaselineKind::LinearProbe => FeatureSet::new(BlockMode::Off, BlockMode::Raw),
    }
}

pub fn baseline_report_name(kind: BaselineKind) -> &'static str {
    match kind {
        BaselineKind::Mlp => "mlp",
        BaselineKind::Cnn1d => "cnn1d",
        BaselineKind::LinearProbe => "linear-probe (frozen embeddings)",
    }
}

pub fn baseline_model_file(kind: BaselineKind) -> String {
    format!("baseline_{}.tgm1", kind.as_str())
}

pub fn baseline_history_file(kind: BaselineKind) -> String {
    format!("history_{}.csv", kind.as_str())
}

#[allow(clippy::too_many_arguments)]
pub fn train_graph_file(
    art: &Artifacts,
    set: FeatureSet,
    opts: InputOptions,
    model: ModelConfig,
    train: &TrainConfig,
    model_out: &Path,
    history_out: &Path,
) -> Result<TweetGageModel> {
    let x = art.inputs(set, opts)?;
    let start = Instant::now();
    let (m, history) = train_graph_model(&x, &art.graph, &art.labels, &art.split, model, train)?;
    log::info!(
        "graph model: {} epochs in {:.1?}, best epoch {}",
        history.epochs.len(),
        start.elapsed(),
        history.best_epoch
    );
    m.save(model_out)?;
    history.write_csv(history_out)?;
    Ok(m)
}

pub fn train_baseline_file(
    art: &Artifacts,
    kind: BaselineKind,
    graph_set: FeatureSet,
    opts: InputOptions,
    train: &TrainConfig,
    model_out: &Path,
    history_out: &Path,
) -> Result<Baseline> {
    let x = art.inputs(baseline_feature_set(kind, graph_set), opts)?;
    let start = Instant::now();
    let (m, history) = train_baseline(kind, &x, &art.labels, &art.split.train, &art.split.val, train)?;
    log::info!("{kind}: {} epochs in {:.1?}", history.epochs.len(), start.elapsed());
    m.save(model_out)?;
    history.write_csv(history_out)?;
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

impl SplitPart {
    pub fn rows(self, split: &Split) -> &[usize] {
        match self {
            SplitPart::Train => &split.train,
            SplitPart::Val => &split.val,
            SplitPart::Test => &split.test,
        }
    }
}

/// Which model a checkpoint holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Graph { weighted_agg: bool },
    Baseline(BaselineKind),
}

pub fn evaluate_checkpoint(
    art: &Artifacts,
    kind: ModelKind,
    path: &Path,
    graph_set: FeatureSet,
    opts: InputOptions,
    part: SplitPart,
    averaging: Averaging,
) -> Result<EvalReport> {
    require(path)?;
    let (name, probs) = match kind {
        ModelKind::Graph { weighted_agg } => {
            let m = TweetGageModel::load(path, weighted_agg)?;
            let x = art.inputs(graph_set, opts)?;
            (GRAPH_MODEL_NAME, m.predict(&GraphInput::new(&x, &art.graph)?)?)
        }
        ModelKind::Baseline(b) => {
            let m = Baseline::load(b, path)?;
            let x = art.inputs(baseline_feature_set(b, graph_set), opts)?;
            (baseline_report_name(b), m.predict(&x)?)
        }
    };
    evaluate(name, &probs, &art.labels, part.rows(&art.split), averaging)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Hash of a file, or of a directory's sorted `(name, hash)` listing.
pub fn sha256_path(path: &Path) -> Result<String> {
    if !path.is_dir() {
        return sha256_file(path);
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(path, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    let mut h = Sha256::new();
    for e in entries {
        h.update(e.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
        h.update([0]);
        h.update(sha256_path(&e)?);
        h.update([0]);
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub fingerprint: String,
    pub status: StageStatus,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: Value,
    pub stages: Vec<StageRecord>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    Skipped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSummary {
    pub stages: Vec<(String, StageOutcome)>,
}

impl PipelineSummary {
    pub fn all_skipped(&self) -> bool {
        self.stages.iter().all(|(_, o)| *o == StageOutcome::Skipped)
    }
}

type StageFn<'a> = Box<dyn Fn() -> Result<()> + 'a>;

struct Stage<'a> {
    name: &'static str,
    /// `(manifest key, path)`.
    inputs: Vec<(String, PathBuf)>,
    outputs: Vec<String>,
    params: Value,
    run: StageFn<'a>,
}

/// Location-independent echo of the run configuration.
fn config_echo(config: &RunConfig) -> Value {
    let mut v = serde_json::to_value(config).expect("config serializes");
    let file_name = |p: &Path| p.file_name().map(|n| n.to_string_lossy().into_owned());
    v["paths"] = json!({
        "input": file_name(&config.paths.input),
        "embeddings": config.paths.embeddings.as_deref().and_then(file_name),
    });
    v
}

fn fingerprint(stage: &str, params: &Value, inputs: &BTreeMap<String, String>) -> String {
    let doc = json!({ "stage": stage, "params": params, "inputs": inputs });
    hex::encode(Sha256::digest(doc.to_string().as_bytes()))
}

fn save_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    write_json(manifest, path)
}

/// Run every stage in order. A stage is skipped when its fingerprint (stage
/// parameters plus input hashes) matches the previous manifest and its
/// recorded outputs are present and unchanged, unless `force` is set.
pub fn run_pipeline(config: &RunConfig, force: bool) -> Result<PipelineSummary> {
    config.validate_values()?;
    config.validate_paths()?;
    let work = config.paths.work_dir.clone();
    fs::create_dir_all(&work).map_err(|e| Error::io(&work, e))?;
    let at = |name: &str| work.join(name);
    let manifest_path = at(MANIFEST);
    let previous = if manifest_path.exists() && !force {
        Manifest::load(&manifest_path).ok()
    } else {
        None
    };

    let set = config.features.feature_set();
    let opts = config.features.input_options();
    let model_cfg = config.model.model_config();
    let seed = config.seed;
    let load_artifacts = || Artifacts::load(&at(GRAPH), &at(PHI), &at(EMBEDDINGS), &at(LABELS), &at(SPLIT));
    let core_inputs = || -> Vec<(String, PathBuf)> {
        [GRAPH, PHI, EMBEDDINGS, LABELS, SPLIT]
            .iter()
            .map(|n| (n.to_string(), at(n)))
            .collect()
    };
    let features_params = json!({ "features": config.features });

    let mut stages: Vec<Stage> = Vec::new();
    let input_key = format!(
        "input:{}",
        config.paths.input.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()
    );
    stages.push(Stage {
        name: "ingest",
        inputs: vec![(input_key, config.paths.input.clone())],
        outputs: vec![POSTS.into(), LABELS.into(), DATASET_STATS.into()],
        params: Value::Null,
        run: Box::new(|| ingest_corpus(&config.paths.input, &at(POSTS), &at(LABELS), &at(DATASET_STATS)).map(|_| ())),
    });
    stages.push(Stage {
        name: "build-graph",
        inputs: vec![(POSTS.into(), at(POSTS))],
        outputs: vec![GRAPH.into(), GRAPH_STATS.into()],
        params: json!({ "delta_seconds": config.graph.delta_seconds() }),
        run: Box::new(|| build_graph_file(&at(POSTS), config.graph.delta_seconds(), &at(GRAPH), &at(GRAPH_STATS)).map(|_| ())),
    });
    stages.push(Stage {
        name: "analyze",
        inputs: vec![
            (GRAPH.into(), at(GRAPH)),
            (LABELS.into(), at(LABELS)),
            (POSTS.into(), at(POSTS)),
        ],
        outputs: vec![ANALYSIS_DIR.into()],
        params: Value::Null,
        run: Box::new(|| analyze_graph(&at(GRAPH), &at(LABELS), Some(&at(POSTS)), &at(ANALYSIS_DIR))),
    });
    match &config.paths.embeddings {
        Some(external) => {
            let key = format!(
                "embeddings:{}",
                external.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()
            );
            stages.push(Stage {
                name: "embed",
                inputs: vec![(key, external.clone()), (POSTS.into(), at(POSTS))],
                outputs: vec![EMBEDDINGS.into()],
                params: json!({ "source": "external" }),
                run: Box::new(move || {
                    let n = read_posts(&at(POSTS))?.len();
                    save_embeddings(&load_embeddings(external, n)?, at(EMBEDDINGS))
                }),
            });
        }
        None => {
            let embed_seed = sub_seed(seed, "embed");
            stages.push(Stage {
                name: "embed",
                inputs: vec![(POSTS.into(), at(POSTS))],
                outputs: vec![EMBEDDINGS.into()],
                params: json!({ "source": "fallback", "dim": config.features.embedding_dim, "seed": embed_seed }),
                run: Box::new(move || {
                    embed_fallback_file(&at(POSTS), config.features.embedding_dim, embed_seed, &at(EMBEDDINGS))
                }),
            });
        }
    }
    stages.push(Stage {
        name: "features",
        inputs: vec![(POSTS.into(), at(POSTS))],
        outputs: vec![PHI.into()],
        params: Value::Null,
        run: Box::new(|| features_file(&at(POSTS), &at(PHI))),
    });
    let split_seed = sub_seed(seed, "split");
    stages.push(Stage {
        name: "split",
        inputs: vec![(LABELS.into(), at(LABELS))],
        outputs: vec![SPLIT.into()],
        params: json!({ "fractions": config.split.fractions, "seed": split_seed }),
        run: Box::new(move || split_file(&at(LABELS), config.split.fractions, split_seed, &at(SPLIT)).map(|_| ())),
    });
    let train_cfg = config.model.train_config(config.model.lr, sub_seed(seed, "train"));
    stages.push(Stage {
        name: "train",
        inputs: core_inputs(),
        outputs: vec![MODEL.into(), HISTORY.into()],
        params: json!({ "features": config.features, "model": model_cfg, "train": train_cfg }),
        run: Box::new({
            let train_cfg = train_cfg.clone();
            move || {
                let art = load_artifacts()?;
                train_graph_file(&art, set, opts, model_cfg, &train_cfg, &at(MODEL), &at(HISTORY)).map(|_| ())
            }
        }),
    });
    for &kind in &config.eval.baselines {
        let cfg = config
            .model
            .train_config(kind.default_lr(), sub_seed(seed, &format!("baseline:{kind}")));
        stages.push(Stage {
            name: match kind {
                BaselineKind::Mlp => "baseline-mlp",
                BaselineKind::Cnn1d => "baseline-cnn1d",
                BaselineKind::LinearProbe => "baseline-linear-probe",
            },
            inputs: core_inputs(),
            outputs: vec![baseline_model_file(kind), baseline_history_file(kind)],
            params: json!({ "features": features_params, "kind": kind, "train": cfg }),
            run: Box::new(move || {
                let art = load_artifacts()?;
                let (m, h) = (at(&baseline_model_file(kind)), at(&baseline_history_file(kind)));
                train_baseline_file(&art, kind, set, opts, &cfg, &m, &h).map(|_| ())
            }),
        });
    }
    let mut eval_inputs = core_inputs();
    eval_inputs.push((MODEL.into(), at(MODEL)));
    for &kind in &config.eval.baselines {
        eval_inputs.push((baseline_model_file(kind), at(&baseline_model_file(kind))));
    }
    stages.push(Stage {
        name: "evaluate",
        inputs: eval_inputs,
        outputs: vec![REPORT.into()],
        params: json!({ "features": config.features, "averaging": config.eval.averaging, "weighted_agg": model_cfg.weighted_agg }),
        run: Box::new(|| {
            let art = load_artifacts()?;
            let avg = config.eval.averaging;
            let mut reports = vec![evaluate_checkpoint(
                &art,
                ModelKind::Graph {
                    weighted_agg: model_cfg.weighted_agg,
                },
                &at(MODEL),
                set,
                opts,
                SplitPart::Test,
                avg,
            )?];
            for &kind in &config.eval.baselines {
                reports.push(evaluate_checkpoint(
                    &art,
                    ModelKind::Baseline(kind),
                    &at(&baseline_model_file(kind)),
                    set,
                    opts,
                    SplitPart::Test,
                    avg,
                )?);
            }
            write_report_csv(&reports, at(REPORT))
        }),
    });
    if config.eval.ablation {
        let settings = AblationSettings {
            model: model_cfg,
            train: config.model.train_config(config.model.lr, sub_seed(seed, "ablation")),
            inputs: opts,
            averaging: config.eval.averaging,
        };
        stages.push(Stage {
            name: "ablate",
            inputs: core_inputs(),
            outputs: vec![ABLATION.into()],
            params: json!({ "model": model_cfg, "train": settings.train, "inputs": opts, "averaging": settings.averaging }),
            run: Box::new(move || {
                let art = load_artifacts()?;
                let rows = run_ablation(
                    &FeatureSet::ablation_grid(),
                    &art.phi,
                    &art.emb,
                    &art.graph,
                    &art.labels,
                    &art.split,
                    &settings,
                )?;
                write_ablation_csv(&rows, at(ABLATION))
            }),
        });
    }

    let mut manifest = Manifest {
        config: config_echo(config),
        stages: Vec::new(),
    };
    let mut summary = PipelineSummary { stages: Vec::new() };
    for stage in &stages {
        let inputs = stage
            .inputs
            .iter()
            .map(|(k, p)| {
                require(p)?;
                Ok((k.clone(), sha256_path(p)?))
            })
            .collect::<Result<BTreeMap<_, _>>>()
            .map_err(|e| Error::Stage {
                stage: stage.name.into(),
                source: Box::new(e),
            })?;
        let fp = fingerprint(stage.name, &stage.params, &inputs);
        let reusable = previous.as_ref().and_then(|m| m.stage(stage.name)).filter(|rec| {
            rec.status == StageStatus::Ok
                && rec.fingerprint == fp
                && stage.outputs.iter().all(|o| {
                    let p = at(o);
                    p.exists() && rec.outputs.get(o).is_some_and(|h| sha256_path(&p).ok().as_ref() == Some(h))
                })
        });
        if let Some(rec) = reusable {
            log::info!("stage {}: up to date", stage.name);
            manifest.stages.push(rec.clone());
            summary.stages.push((stage.name.to_string(), StageOutcome::Skipped));
            continue;
        }
        log::info!("stage {}: running", stage.name);
        let result = (stage.run)().and_then(|()| {
            stage
                .outputs
                .iter()
                .map(|o| Ok((o.clone(), sha256_path(&at(o))?)))
                .collect::<Result<BTreeMap<_, _>>>()
        });
        match result {
            Ok(outputs) => {
                manifest.stages.push(StageRecord {
                    name: stage.name.into(),
                    fingerprint: fp,
                    status: StageStatus::Ok,
                    inputs,
                    outputs,
                    error: None,
                });
                save_manifest(&manifest, &manifest_path)?;
                summary.stages.push((stage.name.to_string(), StageOutcome::Ran));
            }
            Err(e) => {
                manifest.stages.push(StageRecord {
                    name: stage.name.into(),
                    fingerprint: fp,
                    status: StageStatus::Failed,
                    inputs,
                    outputs: BTreeMap::new(),
                    error: Some(e.to_string()),
                });
                save_manifest(&manifest, &manifest_path)?;
                return Err(Error::Stage {
                    stage: stage.name.into(),
                    source: Box::new(e),
                });
            }
        }
    }
    save_manifest(&manifest, &manifest_path)?;
    Ok(summary)
}
