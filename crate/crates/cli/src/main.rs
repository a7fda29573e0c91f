use std::error::Error as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tweetgage::baselines::BaselineKind;
use tweetgage::config::RunConfig;
use tweetgage::eval::{run_ablation, write_ablation_csv, write_report_csv, AblationSettings, Averaging, DEFAULT_FRACTIONS};
use tweetgage::features::{BlockMode, FeatureSet, InputOptions, DEFAULT_PCA_COMPONENTS};
use tweetgage::ingest::write_corpus;
use tweetgage::model::{ModelConfig, DEFAULT_HIDDEN, DEFAULT_LAYERS, DEFAULT_LR};
use tweetgage::nn::TrainConfig;
use tweetgage::pipeline::{self, Artifacts, ModelKind, SplitPart, StageOutcome};
use tweetgage::synth::{generate, SynthConfig};
use tweetgage::{sub_seed, Error, Result};

#[derive(Parser)]
#[command(name = "tweetgage", version, about = "Post engagement prediction over temporal hashtag graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a raw corpus into cleaned posts, labels and dataset statistics.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "posts.jsonl")]
        out: PathBuf,
        #[arg(long, default_value = "labels.csv")]
        labels: PathBuf,
        #[arg(long, default_value = "dataset_stats.json")]
        stats: PathBuf,
    },
    /// Build the δ-windowed shared-hashtag graph.
    BuildGraph {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 15.0)]
        delta_minutes: f64,
        #[arg(long, default_value = "graph.pgr")]
        out: PathBuf,
        #[arg(long, default_value = "graph_stats.json")]
        stats: PathBuf,
    },
    /// Centralities, KS tests, correlations and log-log distributions.
    Analyze {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Cleaned posts; adds the post features to the correlation matrix.
        #[arg(long)]
        posts: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hashed bag-of-words text embeddings.
    EmbedFallback {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 768)]
        dim: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = "emb.emb1")]
        out: PathBuf,
    },
    /// Per-post feature table.
    Features {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "phi.csv")]
        out: PathBuf,
    },
    /// Train the graph model.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        fit: FitArgs,
        #[command(flatten)]
        arch: ArchArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "model.tgm1")]
        out: PathBuf,
        #[arg(long, default_value = "history.csv")]
        history: PathBuf,
    },
    /// Train a non-graph baseline.
    Baseline {
        #[arg(long)]
        kind: BaselineKind,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Score checkpoints on one part of the split.
    Evaluate {
        /// Checkpoint path, or `kind=path` to mix model kinds; repeatable.
        #[arg(long, required = true)]
        model: Vec<String>,
        /// Kind of checkpoints given without a `kind=` prefix.
        #[arg(long, default_value = "tweetgage")]
        kind: String,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        weighted_agg: bool,
        #[arg(long, value_enum, default_value = "test")]
        part: PartArg,
        #[arg(long, default_value = "report.csv")]
        out: PathBuf,
    },
    /// Seven-row feature ablation of the graph model.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        fit: FitArgs,
        #[command(flatten)]
        arch: ArchArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "ablation.csv")]
        out: PathBuf,
    },
    /// Write a synthetic corpus with planted hashtag homophily.
    Synth {
        #[arg(long, default_value_t = 1000)]
        n_posts: usize,
        #[arg(long, default_value_t = 0.9)]
        homophily: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage from a config file.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        /// `section.key=value` override; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Rerun stages even when their inputs are unchanged.
        #[arg(long)]
        force: bool,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum PartArg {
    Train,
    Val,
    Test,
}

impl From<PartArg> for SplitPart {
    fn from(p: PartArg) -> Self {
        match p {
            PartArg::Train => SplitPart::Train,
            PartArg::Val => SplitPart::Val,
            PartArg::Test => SplitPart::Test,
        }
    }
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    phi: PathBuf,
    #[arg(long)]
    emb: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Split file; created from the labels when it does not exist yet.
    #[arg(long, default_value = "split.json")]
    split: PathBuf,
    #[arg(long)]
    use_phi: bool,
    #[arg(long)]
    use_emb: bool,
    /// Reduce the post features with PCA.
    #[arg(long)]
    phi_pca: bool,
    /// Reduce the embeddings with PCA.
    #[arg(long)]
    emb_pca: bool,
    #[arg(long, default_value_t = DEFAULT_PCA_COMPONENTS)]
    pca_components: usize,
    #[arg(long)]
    no_standardize: bool,
    /// Precision, recall and F1 for the positive class instead of the
    /// two-class macro average.
    #[arg(long)]
    positive_class_only: bool,
}

impl DataArgs {
    fn feature_set(&self) -> FeatureSet {
        let mode = |on: bool, pca: bool| match (on, pca) {
            (false, _) => BlockMode::Off,
            (true, false) => BlockMode::Raw,
            (true, true) => BlockMode::Pca,
        };
        FeatureSet::new(mode(self.use_phi, self.phi_pca), mode(self.use_emb, self.emb_pca))
    }

    fn options(&self) -> InputOptions {
        InputOptions {
            standardize: !self.no_standardize,
            pca_components: self.pca_components,
        }
    }

    fn averaging(&self) -> Averaging {
        if self.positive_class_only {
            Averaging::PositiveOnly
        } else {
            Averaging::Macro
        }
    }

    fn load(&self, seed: Option<u64>) -> Result<Artifacts> {
        if !self.split.exists() {
            let seed = seed.ok_or_else(|| Error::InputNotFound(self.split.clone()))?;
            pipeline::load_or_make_split(&self.labels, &self.split, DEFAULT_FRACTIONS, sub_seed(seed, "split"))?;
        }
        Artifacts::load(&self.graph, &self.phi, &self.emb, &self.labels, &self.split)
    }
}

#[derive(Args)]
struct FitArgs {
    /// Defaults to the model kind's learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    plateau_patience: Option<usize>,
    #[arg(long)]
    early_stop_patience: Option<usize>,
    #[arg(long)]
    min_lr: Option<f64>,
    /// Loss weight of the positive class.
    #[arg(long)]
    pos_weight: Option<f64>,
}

impl FitArgs {
    fn config(&self, default_lr: f64, seed: u64) -> TrainConfig {
        let mut c = TrainConfig::with_lr(self.lr.unwrap_or(default_lr), seed);
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.max_epochs {
            c.max_epochs = v;
        }
        if let Some(v) = self.plateau_patience {
            c.plateau_patience = v;
        }
        if let Some(v) = self.early_stop_patience {
            c.early_stop_patience = v;
        }
        if let Some(v) = self.min_lr {
            c.min_lr = v;
        }
        c.pos_weight = self.pos_weight;
        c
    }
}

#[derive(Args)]
struct ArchArgs {
    #[arg(long, default_value_t = DEFAULT_HIDDEN)]
    hidden: usize,
    #[arg(long, default_value_t = DEFAULT_LAYERS)]
    layers: usize,
    /// Scale neighbor terms by the number of shared hashtags.
    #[arg(long)]
    weighted_agg: bool,
}

impl ArchArgs {
    fn config(&self) -> ModelConfig {
        ModelConfig {
            hidden: self.hidden,
            layers: self.layers,
            weighted_agg: self.weighted_agg,
        }
    }
}

fn parse_model_spec(spec: &str, default_kind: &str, weighted_agg: bool) -> Result<(ModelKind, PathBuf)> {
    let (kind, path) = spec.split_once('=').unwrap_or((default_kind, spec));
    let kind = match kind {
        pipeline::GRAPH_MODEL_NAME => ModelKind::Graph { weighted_agg },
        other => ModelKind::Baseline(other.parse()?),
    };
    Ok((kind, PathBuf::from(path)))
}

fn sibling(out: &Path, name: &str) -> PathBuf {
    out.parent().map(|p| p.join(name)).unwrap_or_else(|| PathBuf::from(name))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest {
            input,
            out,
            labels,
            stats,
        } => {
            let s = pipeline::ingest_corpus(&input, &out, &labels, &stats)?;
            println!(
                "kept {} posts ({} malformed, {} non-English)",
                s.kept, s.malformed, s.non_english
            );
        }
        Command::BuildGraph {
            input,
            delta_minutes,
            out,
            stats,
        } => {
            if !(delta_minutes > 0.0) {
                return Err(Error::InvalidArgument(format!("delta must be positive, got {delta_minutes}")));
            }
            let delta = (delta_minutes * 60.0).round() as i64;
            let g = pipeline::build_graph_file(&input, delta, &out, &stats)?;
            println!("{} nodes, {} edges", g.n_nodes(), g.n_edges());
        }
        Command::Analyze {
            graph,
            labels,
            posts,
            out,
        } => pipeline::analyze_graph(&graph, &labels, posts.as_deref(), &out)?,
        Command::EmbedFallback { input, dim, seed, out } => pipeline::embed_fallback_file(&input, dim, seed, &out)?,
        Command::Features { input, out } => pipeline::features_file(&input, &out)?,
        Command::Train {
            data,
            fit,
            arch,
            seed,
            out,
            history,
        } => {
            let art = data.load(Some(seed))?;
            let train = fit.config(DEFAULT_LR, sub_seed(seed, "train"));
            pipeline::train_graph_file(&art, data.feature_set(), data.options(), arch.config(), &train, &out, &history)?;
        }
        Command::Baseline {
            kind,
            data,
            fit,
            seed,
            out,
            history,
        } => {
            let art = data.load(Some(seed))?;
            let train = fit.config(kind.default_lr(), sub_seed(seed, &format!("baseline:{kind}")));
            let out = out.unwrap_or_else(|| PathBuf::from(pipeline::baseline_model_file(kind)));
            let history = history.unwrap_or_else(|| sibling(&out, &pipeline::baseline_history_file(kind)));
            pipeline::train_baseline_file(&art, kind, data.feature_set(), data.options(), &train, &out, &history)?;
        }
        Command::Evaluate {
            model,
            kind,
            data,
            weighted_agg,
            part,
            out,
        } => {
            let art = data.load(None)?;
            let mut reports = Vec::new();
            for spec in &model {
                let (k, path) = parse_model_spec(spec, &kind, weighted_agg)?;
                let r = pipeline::evaluate_checkpoint(
                    &art,
                    k,
                    &path,
                    data.feature_set(),
                    data.options(),
                    part.into(),
                    data.averaging(),
                )?;
                println!(
                    "{}: acc {:.4} auc-roc {:.4} auc-pr {:.4} f1 {:.4}",
                    r.model, r.accuracy, r.auc_roc, r.auc_pr, r.f1
                );
                reports.push(r);
            }
            write_report_csv(&reports, &out)?;
        }
        Command::Ablate {
            data,
            fit,
            arch,
            seed,
            out,
        } => {
            let art = data.load(Some(seed))?;
            let settings = AblationSettings {
                model: arch.config(),
                train: fit.config(DEFAULT_LR, sub_seed(seed, "ablation")),
                inputs: data.options(),
                averaging: data.averaging(),
            };
            let rows = run_ablation(
                &FeatureSet::ablation_grid(),
                &art.phi,
                &art.emb,
                &art.graph,
                &art.labels,
                &art.split,
                &settings,
            )?;
            write_ablation_csv(&rows, &out)?;
        }
        Command::Synth {
            n_posts,
            homophily,
            seed,
            out,
        } => {
            let records = generate(&SynthConfig::new(n_posts, homophily, seed))?;
            let file = fs::File::create(&out).map_err(|e| Error::io(&out, e))?;
            write_corpus(&records, file)?;
        }
        Command::Pipeline {
            config,
            overrides,
            force,
        } => {
            let config = RunConfig::load(&config, &overrides)?;
            let summary = pipeline::run_pipeline(&config, force)?;
            for (name, outcome) in &summary.stages {
                let word = match outcome {
                    StageOutcome::Ran => "ran",
                    StageOutcome::Skipped => "up to date",
                };
                println!("{name}: {word}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = e.source();
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
