//! Acceptance criteria 1-11. Prints one `[PASS]`, `[FAIL]` or `[SKIP]` line
//! per criterion and exits non-zero when any criterion fails.
//!
//! Numeric arguments select criteria (`cargo test --test acceptance -- 3 8`).
//! Criterion 11 runs only when `TWEETGAGE_REAL_CORPUS` names the raw
//! November 2021 corpus file.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use tweetgage::baselines::{train_baseline, Baseline, BaselineKind};
use tweetgage::config::RunConfig;
use tweetgage::eval::{
    auc_pr, auc_roc, classification_metrics, evaluate, make_split, run_ablation, AblationSettings, Averaging,
    DEFAULT_FRACTIONS,
};
use tweetgage::features::{
    assemble_phi, build_inputs, fallback_embed, BlockMode, FeatureMatrix, FeatureSet, InputOptions, PcaModel,
};
use tweetgage::ingest::{dataset_stats, read_corpus, TweetRecord};
use tweetgage::model::{GraphInput, ModelConfig, TweetGageModel, DEFAULT_LR};
use tweetgage::netstats::{betweenness, class_split_summary, closeness, eigenvector, ks_two_sample, CentralityTable};
use tweetgage::nn::{gradient_check, Classifier, Tensor2, TrainConfig};
use tweetgage::pipeline::run_pipeline;
use tweetgage::postgraph::{build_graph, graph_stats, PostGraph};
use tweetgage::synth::{generate, SynthConfig};
use tweetgage::sub_seed;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lib<T>(r: tweetgage::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

// ---------------------------------------------------------------- graphs

fn random_corpus(rng: &mut ChaCha8Rng, n: usize) -> Vec<TweetRecord> {
    let pool = rng.random_range(5..200);
    let span = *[3600i64, 6 * 3600, 24 * 3600].choose(rng).unwrap();
    // whole minutes make exact-δ gaps and ties common
    let quantum = if rng.random_bool(0.5) { 60 } else { 1 };
    (0..n)
        .map(|i| {
            let ts = 1_600_000_000 + rng.random_range(0..span) / quantum * quantum;
            let k = rng.random_range(0..=4);
            let tags: Vec<String> = (0..k).map(|_| format!("Tag{}", rng.random_range(0..pool))).collect();
            TweetRecord::new(i.to_string(), ts).with_hashtags(tags)
        })
        .collect()
}

/// Every pair checked directly against the edge definition.
fn brute_force_edges(records: &[TweetRecord], delta: i64) -> BTreeMap<(u32, u32), u32> {
    let mut edges = BTreeMap::new();
    for i in 0..records.len() {
        for j in i + 1..records.len() {
            if (records[i].timestamp - records[j].timestamp).abs() < delta {
                let shared = records[i].hashtags.intersection(&records[j].hashtags).count() as u32;
                if shared > 0 {
                    edges.insert((i as u32, j as u32), shared);
                }
            }
        }
    }
    edges
}

fn edge_map(g: &PostGraph) -> BTreeMap<(u32, u32), u32> {
    g.edges().map(|(u, v, w)| ((u.min(v), u.max(v)), w)).collect()
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut total_edges = 0;
    for corpus in 0..20 {
        let n = rng.random_range(50..=1000);
        let records = random_corpus(&mut rng, n);
        let minutes = [1i64, 15, 60][corpus % 3];
        let g = lib(build_graph(&records, minutes * 60))?;
        let expected = brute_force_edges(&records, minutes * 60);
        ensure(edge_map(&g) == expected, || {
            format!("corpus {corpus} (n={n}, δ={minutes} min): edge sets differ")
        })?;
        total_edges += expected.len();
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:.1?}"))?;
    Ok(format!("20 corpora, {total_edges} edges identical to the pairwise oracle in {elapsed:.1?}"))
}

fn criterion_2() -> Check {
    let delta = 15 * 60;
    let pair = |gap: i64| {
        vec![
            TweetRecord::new("a", 1_000).with_hashtags(["x"]),
            TweetRecord::new("b", 1_000 + gap).with_hashtags(["x"]),
        ]
    };
    ensure(lib(build_graph(&pair(delta), delta))?.n_edges() == 0, || "Δτ = δ produced an edge".into())?;
    ensure(lib(build_graph(&pair(delta - 1), delta))?.n_edges() == 1, || "Δτ = δ - 1 s produced no edge".into())?;
    ensure(lib(build_graph(&pair(0), delta))?.n_edges() == 1, || "tied timestamps produced no edge".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for corpus in 0..10 {
        let records = random_corpus(&mut rng, 400);
        let mut previous: Option<BTreeMap<(u32, u32), u32>> = None;
        for minutes in [1i64, 5, 15, 30, 60, 240] {
            let edges = edge_map(&lib(build_graph(&records, minutes * 60))?);
            if let Some(smaller) = &previous {
                ensure(smaller.iter().all(|(k, w)| edges.get(k) == Some(w)), || {
                    format!("corpus {corpus}: E at {minutes} min misses edges of a smaller δ")
                })?;
            }
            previous = Some(edges);
        }
    }
    Ok("boundary exclusive; E_δ' ⊆ E_δ on 10 corpora over 6 thresholds".into())
}

// ----------------------------------------------------------- centralities

fn random_graph(rng: &mut ChaCha8Rng, connected: bool) -> PostGraph {
    let n = rng.random_range(3..=50);
    let p = rng.random_range(0.02..0.3);
    let mut edges = BTreeMap::new();
    if connected {
        for v in 1..n {
            let u = rng.random_range(0..v);
            edges.insert((u as u32, v as u32), rng.random_range(1..=3u32));
        }
    }
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p) {
                edges.insert((u as u32, v as u32), rng.random_range(1..=3u32));
            }
        }
    }
    PostGraph::from_edges(n, edges.into_iter().map(|((u, v), w)| (u, v, w)), 900).unwrap()
}

/// Hop distances (`usize::MAX` when unreachable) by Floyd-Warshall.
fn all_pairs_hops(g: &PostGraph) -> Vec<Vec<usize>> {
    let n = g.n_nodes();
    let inf = usize::MAX;
    let mut d = vec![vec![inf; n]; n];
    for (v, row) in d.iter_mut().enumerate() {
        row[v] = 0;
        for &(u, _) in g.neighbors(v) {
            row[u as usize] = 1;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] != inf && d[k][j] != inf && d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

/// Number of shortest paths between every pair, built up by distance.
fn shortest_path_counts(g: &PostGraph, d: &[Vec<usize>]) -> Vec<Vec<f64>> {
    let n = g.n_nodes();
    let mut sigma = vec![vec![0.0; n]; n];
    for s in 0..n {
        let mut by_dist: Vec<usize> = (0..n).filter(|&t| d[s][t] != usize::MAX).collect();
        by_dist.sort_by_key(|&t| d[s][t]);
        for t in by_dist {
            sigma[s][t] = if t == s {
                1.0
            } else {
                g.neighbors(t)
                    .iter()
                    .map(|&(u, _)| u as usize)
                    .filter(|&u| d[s][u] != usize::MAX && d[s][u] + 1 == d[s][t])
                    .map(|u| sigma[s][u])
                    .sum()
            };
        }
    }
    sigma
}

fn betweenness_oracle(g: &PostGraph) -> Vec<f64> {
    let n = g.n_nodes();
    let d = all_pairs_hops(g);
    let sigma = shortest_path_counts(g, &d);
    let mut out = vec![0.0; n];
    for s in 0..n {
        for t in s + 1..n {
            if d[s][t] == usize::MAX {
                continue;
            }
            for (v, slot) in out.iter_mut().enumerate() {
                if v != s && v != t && d[s][v] != usize::MAX && d[v][t] != usize::MAX && d[s][v] + d[v][t] == d[s][t] {
                    *slot += sigma[s][v] * sigma[v][t] / sigma[s][t];
                }
            }
        }
    }
    let norm = (n - 1) as f64 * (n - 2) as f64 / 2.0;
    out.iter().map(|b| b / norm).collect()
}

fn closeness_oracle(g: &PostGraph) -> Vec<f64> {
    let n = g.n_nodes();
    let d = all_pairs_hops(g);
    (0..n)
        .map(|v| {
            let reach: Vec<usize> = (0..n).filter(|&u| u != v && d[v][u] != usize::MAX).collect();
            let total: usize = reach.iter().map(|&u| d[v][u]).sum();
            if total == 0 {
                0.0
            } else {
                let r = reach.len() as f64;
                (r / total as f64) * (r / (n - 1) as f64)
            }
        })
        .collect()
}

fn eigenvector_oracle(g: &PostGraph) -> Vec<f64> {
    let n = g.n_nodes();
    let mut a = DMatrix::<f64>::zeros(n, n);
    for (u, v, w) in g.edges() {
        a[(u as usize, v as usize)] = w as f64;
        a[(v as usize, u as usize)] = w as f64;
    }
    let eig = SymmetricEigen::new(a);
    let top = (0..n).max_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j])).unwrap();
    let v = eig.eigenvectors.column(top);
    let norm = v.norm();
    v.iter().map(|x| (x / norm).abs()).collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut worst_path, mut worst_eig) = (0.0f64, 0.0f64);
    // eigenvector centrality is only unique on connected graphs; the path
    // measures are also checked on graphs with several components
    for i in 0..50 {
        let connected = i % 2 == 0;
        let g = random_graph(&mut rng, connected);
        let b = max_diff(&betweenness(&g), &betweenness_oracle(&g));
        let c = max_diff(&closeness(&g), &closeness_oracle(&g));
        worst_path = worst_path.max(b).max(c);
        ensure(b < 1e-6 && c < 1e-6, || {
            format!("graph {i} (n={}): betweenness diff {b:e}, closeness diff {c:e}", g.n_nodes())
        })?;
        let g = if connected { g } else { random_graph(&mut rng, true) };
        let e = eigenvector(&g);
        let diff = max_diff(&e.values, &eigenvector_oracle(&g));
        worst_eig = worst_eig.max(diff);
        ensure(e.converged && diff < 1e-6, || {
            format!("graph {i} (n={}): eigenvector diff {diff:e}, converged {}", g.n_nodes(), e.converged)
        })?;
    }
    Ok(format!(
        "50 graphs; max path-measure diff {worst_path:.1e}, max eigenvector diff {worst_eig:.1e}"
    ))
}

// -------------------------------------------------------------------- KS

/// The supremum gap between the empirical CDFs, checked at every sample
/// point by counting.
fn ks_oracle(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .chain(b)
        .map(|&x| {
            let fa = a.iter().filter(|&&v| v <= x).count();
            let fb = b.iter().filter(|&&v| v <= x).count();
            (fa as f64 / a.len() as f64 - fb as f64 / b.len() as f64).abs()
        })
        .fold(0.0, f64::max)
}

/// `2 Σ (-1)^{k-1} exp(-2 k² λ²)` summed until the terms underflow, with
/// compensated summation. Consecutive partial sums are averaged, which is
/// exact to within the next term for an alternating series.
fn kolmogorov_series(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    let mut previous;
    let mut k = 1u64;
    loop {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        let signed = if k % 2 == 1 { term } else { -term };
        previous = sum + comp;
        let y = signed - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        if term < 1e-300 || k > 10_000_000 {
            break;
        }
        k += 1;
    }
    ((sum + comp) + previous).clamp(0.0, 1.0)
}

fn criterion_4() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst_p = 0.0f64;
    for pair in 0..100 {
        let (na, nb) = if pair < 10 { (200, 200) } else { (rng.random_range(1..300), rng.random_range(1..300)) };
        let shift = rng.random_range(0.0..1.0);
        let discrete = pair % 3 == 0;
        let mut draw = |n: usize, mu: f64| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let x: f64 = Normal::new(mu, 1.0).unwrap().sample(&mut rng);
                    if discrete {
                        x.round()
                    } else {
                        x
                    }
                })
                .collect()
        };
        let a = draw(na, 0.0);
        let b = draw(nb, shift);
        let r = lib(ks_two_sample(&a, &b))?;
        let d = ks_oracle(&a, &b);
        ensure(r.statistic == d, || format!("pair {pair}: D {} vs oracle {d}", r.statistic))?;
        let ne = (na * nb) as f64 / (na + nb) as f64;
        let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
        let p = kolmogorov_series(lambda);
        worst_p = worst_p.max((r.p_value - p).abs());
        ensure((r.p_value - p).abs() < 1e-6, || {
            format!("pair {pair}: p {} vs series {p} (λ = {lambda})", r.p_value)
        })?;
        let swapped = lib(ks_two_sample(&b, &a))?;
        ensure(swapped == r, || format!("pair {pair}: not symmetric"))?;
    }
    let same = [1.0, 2.0, 3.0, 2.5, 7.0];
    let r = lib(ks_two_sample(&same, &same))?;
    ensure(r.statistic == 0.0 && r.p_value == 1.0, || format!("identical samples gave {r:?}"))?;
    Ok(format!("100 pairs, D exact, max p-value diff {worst_p:.1e}"))
}

// ------------------------------------------------------------- gradients

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor2 {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor2::from_vec(rows, cols, data).unwrap()
}

fn criterion_5() -> Check {
    let start = Instant::now();
    let (mut gnn, mut mlp, mut cnn) = (0.0f64, 0.0f64, 0.0f64);
    for instance in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + instance);
        let n = rng.random_range(10..=30);
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8 ^ u8::from(rng.random_bool(0.3))).collect();
        let nodes: Vec<usize> = (0..n).collect();

        let mut edges = BTreeSet::new();
        for _ in 0..2 * n {
            let (u, v) = (rng.random_range(0..n as u32), rng.random_range(0..n as u32));
            if u != v {
                edges.insert((u.min(v), u.max(v)));
            }
        }
        let g = lib(PostGraph::from_edges(
            n,
            edges.into_iter().map(|(u, v)| (u, v, rng.random_range(1..=3))),
            900,
        ))?;
        let d_in = rng.random_range(3..=8);
        let x = random_tensor(&mut rng, n, d_in);
        let config = ModelConfig {
            weighted_agg: instance % 2 == 1,
            ..ModelConfig::default()
        };
        let mut model = lib(TweetGageModel::new(d_in, config, instance))?;
        let e = lib(gradient_check(&mut model, &lib(GraphInput::new(&x, &g))?, &nodes, &labels))?;
        gnn = gnn.max(e);

        let mut m = lib(Baseline::init(BaselineKind::Mlp, d_in, instance))?;
        mlp = mlp.max(lib(gradient_check(&mut m, &x, &nodes, &labels))?);

        let len = rng.random_range(8..=16);
        let xc = random_tensor(&mut rng, n, len);
        let mut c = lib(Baseline::init(BaselineKind::Cnn1d, len, instance))?;
        cnn = cnn.max(lib(gradient_check(&mut c, &xc, &nodes, &labels))?);
    }
    let elapsed = start.elapsed();
    ensure(gnn < 1e-4 && mlp < 1e-4 && cnn < 1e-4, || {
        format!("max relative error: graph model {gnn:.2e}, mlp {mlp:.2e}, cnn {cnn:.2e}")
    })?;
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:.1?}"))?;
    Ok(format!(
        "10 instances; max relative error graph model {gnn:.1e}, mlp {mlp:.1e}, cnn {cnn:.1e} in {elapsed:.1?}"
    ))
}

// ------------------------------------------------------ synthetic studies

const SYNTH_POSTS: usize = 5000;
const SYNTH_HOMOPHILY: f64 = 0.9;
const SYNTH_EMBEDDING_DIM: usize = 256;
const SYNTH_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct SeedRun {
    seed: u64,
    graph_auc: f64,
    mlp_auc: f64,
    elapsed: Duration,
    /// Val AUC-ROC and accuracy per ablation row, grid order.
    rows: Vec<(FeatureSet, f64, f64)>,
}

fn synth_seed(seed: u64) -> Result<SeedRun, String> {
    let records = lib(generate(&SynthConfig::new(SYNTH_POSTS, SYNTH_HOMOPHILY, seed)))?;
    let start = Instant::now();
    let graph = lib(build_graph(&records, 15 * 60))?;
    let labels: Vec<u8> = records.iter().map(TweetRecord::label).collect();
    let phi = assemble_phi(&records);
    let texts: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
    let emb = lib(fallback_embed(&texts, SYNTH_EMBEDDING_DIM, sub_seed(seed, "embed")))?;
    let split = lib(make_split(&labels, DEFAULT_FRACTIONS, sub_seed(seed, "split")))?;
    let settings = AblationSettings {
        model: ModelConfig::default(),
        train: TrainConfig::with_lr(DEFAULT_LR, sub_seed(seed, "ablation")),
        inputs: InputOptions::default(),
        averaging: Averaging::Macro,
    };
    let full = lib(run_ablation(&[FeatureSet::FULL], &phi, &emb, &graph, &labels, &split, &settings))?;
    let x = lib(build_inputs(FeatureSet::FULL, &phi, &emb, &split.train, settings.inputs))?.to_tensor();
    let mlp_train = TrainConfig::with_lr(BaselineKind::Mlp.default_lr(), sub_seed(seed, "baseline:mlp"));
    let (mlp, _) = lib(train_baseline(BaselineKind::Mlp, &x, &labels, &split.train, &split.val, &mlp_train))?;
    let mlp_val = lib(evaluate("mlp", &lib(mlp.predict(&x))?, &labels, &split.val, Averaging::Macro))?;
    let elapsed = start.elapsed();

    let others: Vec<FeatureSet> = FeatureSet::ablation_grid().into_iter().filter(|s| *s != FeatureSet::FULL).collect();
    let mut rows: Vec<_> = lib(run_ablation(&others, &phi, &emb, &graph, &labels, &split, &settings))?
        .into_iter()
        .chain(full.iter().cloned())
        .map(|r| (r.features, r.val.auc_roc, r.val.accuracy))
        .collect();
    rows.sort_by_key(|(set, _, _)| FeatureSet::ablation_grid().iter().position(|g| g == set));
    let run = SeedRun {
        seed,
        graph_auc: full[0].val.auc_roc,
        mlp_auc: mlp_val.auc_roc,
        elapsed,
        rows,
    };
    println!(
        "       seed {}: graph model val AUC {:.4}, mlp {:.4} ({:.0?}); grid {}",
        run.seed,
        run.graph_auc,
        run.mlp_auc,
        run.elapsed,
        run.rows
            .iter()
            .map(|(s, auc, acc)| format!("{}/{} {auc:.4} (acc {acc:.3})", s.phi.as_str(), s.omega.as_str()))
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(run)
}

fn criterion_6(runs: &[SeedRun]) -> Check {
    let mean = runs.iter().map(|r| r.graph_auc).sum::<f64>() / runs.len() as f64;
    let worst_mlp = runs.iter().map(|r| r.mlp_auc).fold(0.0, f64::max);
    let slowest = runs.iter().map(|r| r.elapsed).max().unwrap_or_default();
    ensure(mean >= 0.95, || format!("mean graph-model val AUC {mean:.4} < 0.95"))?;
    ensure(worst_mlp <= 0.75, || format!("mlp val AUC reached {worst_mlp:.4} > 0.75"))?;
    ensure(slowest < Duration::from_secs(300), || format!("a seed took {slowest:.0?}"))?;
    Ok(format!(
        "{} seeds: graph model mean val AUC {mean:.4}, mlp at most {worst_mlp:.4}, slowest seed {slowest:.0?}",
        runs.len()
    ))
}

fn criterion_7(runs: &[SeedRun]) -> Check {
    let grid = FeatureSet::ablation_grid();
    let none = FeatureSet::new(BlockMode::Off, BlockMode::Off);
    for r in runs {
        let (_, _, acc) = r.rows.iter().find(|(s, _, _)| *s == none).unwrap();
        ensure((0.45..=0.55).contains(acc), || {
            format!("seed {}: no-feature row accuracy {acc:.4} outside [0.45, 0.55]", r.seed)
        })?;
    }
    let mean_auc: Vec<f64> = grid
        .iter()
        .map(|set| {
            runs.iter()
                .map(|r| r.rows.iter().find(|(s, _, _)| s == set).unwrap().1)
                .sum::<f64>()
                / runs.len() as f64
        })
        .collect();
    let best = (0..grid.len()).max_by(|&i, &j| mean_auc[i].total_cmp(&mean_auc[j])).unwrap();
    let full = grid.iter().position(|s| *s == FeatureSet::FULL).unwrap();
    let runner_up = (0..grid.len()).filter(|&i| i != full).map(|i| mean_auc[i]).fold(0.0, f64::max);
    ensure(best == full, || {
        format!(
            "best mean val AUC is {}/{} ({:.4}), full row {:.4}",
            grid[best].phi.as_str(),
            grid[best].omega.as_str(),
            mean_auc[best],
            mean_auc[full]
        )
    })?;
    Ok(format!(
        "no-feature accuracy within [0.45, 0.55] on every seed; full row mean val AUC {:.4} > next best {runner_up:.4}",
        mean_auc[full]
    ))
}

// --------------------------------------------------------------- metrics

struct BruteMetrics {
    accuracy: f64,
    precision: f64,
    recall: f64,
    f1: f64,
}

fn frac(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn brute_metrics(probs: &[f64], labels: &[u8], macro_avg: bool) -> BruteMetrics {
    let pred: Vec<u8> = probs.iter().map(|&p| u8::from(p >= 0.5)).collect();
    let count = |p: u8, y: u8| pred.iter().zip(labels).filter(|&(&a, &b)| a == p && b == y).count();
    let per_class = |c: u8| {
        let hit = count(c, c);
        let predicted = pred.iter().filter(|&&p| p == c).count();
        let actual = labels.iter().filter(|&&y| y == c).count();
        (frac(hit, predicted), frac(hit, actual))
    };
    let (p1, r1) = per_class(1);
    let (p0, r0) = per_class(0);
    let (precision, recall) = if macro_avg { ((p0 + p1) / 2.0, (r0 + r1) / 2.0) } else { (p1, r1) };
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    BruteMetrics {
        accuracy: frac(count(0, 0) + count(1, 1), labels.len()),
        precision,
        recall,
        f1,
    }
}

/// Pairwise comparison over every (positive, negative) pair.
fn brute_auc_roc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Precision and recall at every distinct score used as a threshold.
fn brute_auc_pr(scores: &[f64], labels: &[u8]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let (mut ap, mut last_recall) = (0.0, 0.0);
    for t in thresholds {
        let selected: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= t).collect();
        let tp = selected.iter().filter(|&&i| labels[i] == 1).count();
        let recall = tp as f64 / n_pos as f64;
        ap += (recall - last_recall) * tp as f64 / selected.len() as f64;
        last_recall = recall;
    }
    ap
}

fn criterion_8() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst = 0.0f64;
    let mut check = |name: &str, got: f64, want: f64, instance: usize| -> Result<(), String> {
        let d = (got - want).abs();
        worst = worst.max(d);
        ensure(d <= 1e-12, || format!("instance {instance}: {name} {got} vs {want}"))
    };
    for instance in 0..50 {
        let n = rng.random_range(2..=20);
        let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
        labels[0] = 0;
        labels[1] = 1;
        // coarse grid: ties and exact 0.5 are common
        let probs: Vec<f64> = (0..n).map(|_| rng.random_range(0..=10) as f64 / 10.0).collect();
        for macro_avg in [true, false] {
            let avg = if macro_avg { Averaging::Macro } else { Averaging::PositiveOnly };
            let m = lib(classification_metrics(&probs, &labels, 0.5, avg))?;
            let b = brute_metrics(&probs, &labels, macro_avg);
            check("accuracy", m.accuracy, b.accuracy, instance)?;
            check("precision", m.precision, b.precision, instance)?;
            check("recall", m.recall, b.recall, instance)?;
            check("f1", m.f1, b.f1, instance)?;
        }
        let roc = lib(auc_roc(&probs, &labels))?;
        check("auc_roc", roc, brute_auc_roc(&probs, &labels), instance)?;
        check("auc_pr", lib(auc_pr(&probs, &labels))?, brute_auc_pr(&probs, &labels), instance)?;
        let transformed: Vec<f64> = probs.iter().map(|p| (3.0 * p).exp() + p.powi(3) - 7.0).collect();
        ensure(lib(auc_roc(&transformed, &labels))? == roc, || {
            format!("instance {instance}: AUC-ROC changed under a monotone transform")
        })?;
    }
    Ok(format!("50 instances, max diff {worst:.1e}; AUC-ROC invariant under a monotone transform"))
}

// ------------------------------------------------------------------- PCA

fn criterion_9() -> Check {
    const ROWS: usize = 1000;
    const DIM: usize = 768;
    const PLANTED: usize = 40;
    const K: usize = 48;
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let loadings = DMatrix::<f64>::from_fn(PLANTED, DIM, |_, _| rng.sample::<f64, _>(StandardNormal) / (DIM as f64).sqrt());
    let scale: Vec<f64> = (0..PLANTED).map(|k| 1.0 + 2.0 * (PLANTED - k) as f64 / PLANTED as f64).collect();
    let latent = DMatrix::<f64>::from_fn(ROWS, PLANTED, |_, k| scale[k] * rng.sample::<f64, _>(StandardNormal));
    let noise = Normal::new(0.0, 0.1).unwrap();
    let x = &latent * &loadings + DMatrix::<f64>::from_fn(ROWS, DIM, |_, _| noise.sample(&mut rng));
    let values: Vec<f64> = (0..ROWS).flat_map(|i| x.row(i).iter().copied().collect::<Vec<_>>()).collect();
    let names = (0..DIM).map(|j| format!("e{j}")).collect();
    let matrix = lib(FeatureMatrix::new(ROWS, names, values))?;
    let rows: Vec<usize> = (0..ROWS).collect();
    let pca = lib(PcaModel::fit(&matrix, K, &rows))?;

    let c = &pca.components;
    let gram = c.transpose() * c;
    let ortho = (gram - DMatrix::<f64>::identity(K, K)).abs().max();
    ensure(ortho <= 1e-8, || format!("components deviate from orthonormal by {ortho:e}"))?;
    let ratios = &pca.explained_variance_ratio;
    ensure(ratios.windows(2).all(|w| w[0] >= w[1]), || "ratios not non-increasing".into())?;
    let explained: f64 = ratios.iter().sum();
    ensure(explained >= 0.8, || format!("{K} components explain {explained:.4}"))?;

    // variance captured along each component, measured directly
    let mean = x.row_mean();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let total: f64 = centered.iter().map(|v| v * v).sum();
    let projected = &centered * c;
    let mut worst = 0.0f64;
    for k in 0..K {
        let captured = projected.column(k).iter().map(|v| v * v).sum::<f64>() / total;
        worst = worst.max((captured - ratios[k]).abs());
    }
    ensure(worst <= 1e-9, || format!("reported ratios differ from projected variance by {worst:e}"))?;

    // the planted loading directions lie inside the component span
    let residual = &loadings.transpose() - c * (c.transpose() * loadings.transpose());
    let outside = residual.norm_squared() / loadings.norm_squared();
    ensure(outside < 0.01, || format!("{:.2}% of planted loadings fall outside the components", 100.0 * outside))?;
    Ok(format!(
        "{K} components explain {:.1}%; orthonormal within {ortho:.1e}; ratio diff {worst:.1e}",
        100.0 * explained
    ))
}

// ----------------------------------------------------------- determinism

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) -> Result<(), String> {
    for entry in fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let bytes = fs::read(&path).map_err(|e| e.to_string())?;
            out.insert(path.strip_prefix(root).unwrap().to_path_buf(), bytes);
        }
    }
    Ok(())
}

fn criterion_10() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for run in ["first", "second"] {
        let work = tmp.path().join(run);
        let config = lib(RunConfig::load(
            data_dir().join("pipeline.toml"),
            &[format!("paths.work_dir={:?}", work.display().to_string())],
        ))?;
        lib(run_pipeline(&config, true))?;
        let mut files = BTreeMap::new();
        collect_files(&work, &work, &mut files)?;
        outputs.push(files);
    }
    let (a, b) = (&outputs[0], &outputs[1]);
    ensure(a.keys().eq(b.keys()), || "the two runs wrote different file sets".into())?;
    let differing: Vec<String> = a
        .iter()
        .filter(|(k, v)| b.get(*k) != Some(v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    ensure(differing.is_empty(), || format!("files differ: {}", differing.join(", ")))?;
    ensure(a.contains_key(Path::new("report.csv")), || "no report.csv".into())?;
    Ok(format!("{} artifacts byte-identical across two runs", a.len()))
}

// ------------------------------------------------------------ real corpus

fn criterion_11() -> Outcome {
    let Some(path) = std::env::var_os("TWEETGAGE_REAL_CORPUS") else {
        return Outcome::Skip("set TWEETGAGE_REAL_CORPUS to the November 2021 corpus to run".into());
    };
    match real_corpus(Path::new(&path)) {
        Ok(msg) => Outcome::Pass(msg),
        Err(msg) => Outcome::Fail(msg),
    }
}

fn real_corpus(path: &Path) -> Check {
    let records = lib(read_corpus(path))?.records;
    let stats = lib(dataset_stats(&records))?;
    ensure(
        stats.n_posts == 243_750
            && stats.n_users == 194_046
            && stats.n_unique_hashtags == 94_646
            && stats.median_posts_per_user == 1.0
            && stats.max_posts_per_user == 126,
        || format!("dataset statistics {stats:?}"),
    )?;
    let graph = lib(build_graph(&records, 15 * 60))?;
    let gs = graph_stats(&graph);
    ensure(
        gs.n_nodes == 243_750
            && gs.n_edges == 4_403_434
            && gs.n_connected_components == 120_434
            && gs.max_component_size == 18_322,
        || format!("graph statistics {gs:?}"),
    )?;
    let labels: Vec<u8> = records.iter().map(TweetRecord::label).collect();
    let table = CentralityTable::compute(&graph);
    let degree = lib(class_split_summary(&table.weighted_degree, &labels))?;
    ensure(degree.class0.mean > degree.class1.mean, || {
        format!("weighted degree means {} vs {}", degree.class0.mean, degree.class1.mean)
    })?;
    for (name, values) in table.columns() {
        let s = lib(class_split_summary(values, &labels))?;
        ensure(s.ks.p_value < 0.01, || format!("{name}: KS p-value {}", s.ks.p_value))?;
    }
    Ok("dataset and graph statistics match; class-0 weighted degree higher; all KS p < 0.01".into())
}

// ------------------------------------------------------------------ main

fn main() -> ExitCode {
    let selected: BTreeSet<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wants = |c: u32| selected.is_empty() || selected.contains(&c);
    let from = |r: Check| match r {
        Ok(m) => Outcome::Pass(m),
        Err(m) => Outcome::Fail(m),
    };

    let mut failed = false;
    let mut report = |id: u32, name: &str, outcome: Outcome| {
        let (tag, msg) = match outcome {
            Outcome::Pass(m) => ("PASS", m),
            Outcome::Fail(m) => {
                failed = true;
                ("FAIL", m)
            }
            Outcome::Skip(m) => ("SKIP", m),
        };
        println!("[{tag}] {id:>2} {name}: {msg}");
    };

    let simple: [(u32, &str, fn() -> Check); 4] = [
        (1, "graph builder vs pairwise oracle", criterion_1),
        (2, "δ boundary and monotonicity", criterion_2),
        (3, "centrality oracles", criterion_3),
        (4, "KS statistic and p-value", criterion_4),
    ];
    for (id, name, f) in simple {
        if wants(id) {
            report(id, name, from(f()));
        }
    }
    if wants(5) {
        report(5, "gradient fidelity", from(criterion_5()));
    }
    if wants(6) || wants(7) {
        let runs: Result<Vec<SeedRun>, String> = SYNTH_SEEDS.iter().map(|&s| synth_seed(s)).collect();
        match runs {
            Ok(runs) => {
                if wants(6) {
                    report(6, "planted-homophily separation", from(criterion_6(&runs)));
                }
                if wants(7) {
                    report(7, "ablation ordering", from(criterion_7(&runs)));
                }
            }
            Err(e) => {
                for (id, name) in [(6, "planted-homophily separation"), (7, "ablation ordering")] {
                    if wants(id) {
                        report(id, name, Outcome::Fail(e.clone()));
                    }
                }
            }
        }
    }
    let rest: [(u32, &str, fn() -> Check); 3] = [
        (8, "metric correctness", criterion_8),
        (9, "PCA on planted structure", criterion_9),
        (10, "pipeline determinism", criterion_10),
    ];
    for (id, name, f) in rest {
        if wants(id) {
            report(id, name, from(f()));
        }
    }
    if wants(11) {
        report(11, "real-corpus statistics", criterion_11());
    }
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
