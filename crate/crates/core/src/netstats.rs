//! Node centralities, class-split summaries with two-sample
//! Kolmogorov–Smirnov tests, and feature correlation matrices.
//!
//! Closeness and betweenness use unweighted hop distances: shared-hashtag
//! counts measure similarity, not cost. Weighted degree and eigenvector
//! centrality use the edge weights.

use std::collections::VecDeque;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::postgraph::PostGraph;

pub const EIGENVECTOR_TOLERANCE: f64 = 1e-8;
pub const EIGENVECTOR_MAX_ITER: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct CentralityTable {
    pub weighted_degree: Vec<f64>,
    pub closeness: Vec<f64>,
    pub betweenness: Vec<f64>,
    pub eigenvector: Vec<f64>,
    /// False when power iteration hit the iteration cap.
    pub eigenvector_converged: bool,
}

impl CentralityTable {
    pub fn compute(graph: &PostGraph) -> Self {
        let eig = eigenvector(graph);
        if !eig.converged {
            log::warn!("eigenvector centrality did not converge in {EIGENVECTOR_MAX_ITER} iterations");
        }
        CentralityTable {
            weighted_degree: weighted_degree(graph),
            closeness: closeness(graph),
            betweenness: betweenness(graph),
            eigenvector: eig.values,
            eigenvector_converged: eig.converged,
        }
    }

    pub fn columns(&self) -> [(&'static str, &[f64]); 4] {
        [
            ("weighted_degree", &self.weighted_degree),
            ("closeness", &self.closeness),
            ("betweenness", &self.betweenness),
            ("eigenvector", &self.eigenvector),
        ]
    }
}

/// Sum of incident edge weights.
pub fn weighted_degree(graph: &PostGraph) -> Vec<f64> {
    (0..graph.n_nodes())
        .map(|v| graph.neighbors(v).iter().map(|&(_, w)| w as f64).sum())
        .collect()
}

/// Hop distances from `source`; `u32::MAX` marks unreachable nodes.
fn bfs_distances(graph: &PostGraph, source: usize, dist: &mut [u32], queue: &mut VecDeque<usize>) {
    dist.fill(u32::MAX);
    dist[source] = 0;
    queue.clear();
    queue.push_back(source);
    while let Some(v) = queue.pop_front() {
        for &(w, _) in graph.neighbors(v) {
            let w = w as usize;
            if dist[w] == u32::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
        }
    }
}

/// Closeness scaled by the reachable fraction: `(r / S) * (r / (n - 1))` with
/// `r` reachable nodes at total distance `S`. Zero for isolated nodes.
pub fn closeness(graph: &PostGraph) -> Vec<f64> {
    let n = graph.n_nodes();
    if n < 2 {
        return vec![0.0; n];
    }
    let mut dist = vec![0u32; n];
    let mut queue = VecDeque::new();
    (0..n)
        .map(|v| {
            bfs_distances(graph, v, &mut dist, &mut queue);
            let (reach, total) = dist
                .iter()
                .filter(|&&d| d != u32::MAX && d > 0)
                .fold((0u64, 0u64), |(r, s), &d| (r + 1, s + d as u64));
            if total == 0 {
                0.0
            } else {
                let r = reach as f64;
                (r / total as f64) * (r / (n - 1) as f64)
            }
        })
        .collect()
}

/// Brandes betweenness over unweighted shortest paths, normalized by the
/// number of unordered pairs excluding the node, `(n-1)(n-2)/2`.
pub fn betweenness(graph: &PostGraph) -> Vec<f64> {
    let n = graph.n_nodes();
    let mut centrality = vec![0.0f64; n];
    if n < 3 {
        return centrality;
    }
    let mut stack = Vec::with_capacity(n);
    let mut sigma = vec![0.0f64; n];
    let mut dist = vec![-1i64; n];
    let mut delta = vec![0.0f64; n];
    let mut queue = VecDeque::new();

    for s in 0..n {
        stack.clear();
        sigma.fill(0.0);
        dist.fill(-1);
        delta.fill(0.0);
        sigma[s] = 1.0;
        dist[s] = 0;
        queue.push_back(s);
        while let Some(v) = queue.pop_front() {
            stack.push(v);
            for &(w, _) in graph.neighbors(v) {
                let w = w as usize;
                if dist[w] < 0 {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
                if dist[w] == dist[v] + 1 {
                    sigma[w] += sigma[v];
                }
            }
        }
        // Predecessors are recovered from distances instead of stored lists.
        while let Some(w) = stack.pop() {
            for &(v, _) in graph.neighbors(w) {
                let v = v as usize;
                if dist[v] == dist[w] - 1 {
                    delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
                }
            }
            if w != s {
                centrality[w] += delta[w];
            }
        }
    }

    // Each unordered pair is visited from both endpoints.
    let scale = 1.0 / ((n - 1) as f64 * (n - 2) as f64);
    centrality.iter_mut().for_each(|c| *c *= scale);
    centrality
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenvectorCentrality {
    pub values: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Power iteration for the dominant eigenvector of the weighted adjacency
/// matrix, L2-normalized. Iterates with `A + I`, which has the same
/// eigenvectors but a strictly dominant positive eigenvalue, so bipartite
/// graphs do not oscillate.
pub fn eigenvector(graph: &PostGraph) -> EigenvectorCentrality {
    let n = graph.n_nodes();
    if n == 0 {
        return EigenvectorCentrality {
            values: Vec::new(),
            converged: true,
            iterations: 0,
        };
    }
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut next = vec![0.0; n];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < EIGENVECTOR_MAX_ITER {
        iterations += 1;
        for (v, out) in next.iter_mut().enumerate() {
            *out = x[v]
                + graph
                    .neighbors(v)
                    .iter()
                    .map(|&(u, w)| w as f64 * x[u as usize])
                    .sum::<f64>();
        }
        let norm = next.iter().map(|v| v * v).sum::<f64>().sqrt();
        next.iter_mut().for_each(|v| *v /= norm);
        let change = x
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut x, &mut next);
        if change < EIGENVECTOR_TOLERANCE {
            converged = true;
            break;
        }
    }
    x.iter_mut().for_each(|v| *v = v.abs());
    EigenvectorCentrality {
        values: x,
        converged,
        iterations,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("KS test needs two non-empty samples".into()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("KS test input contains NaN".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable_by(f64::total_cmp);
    b.sort_unstable_by(f64::total_cmp);
    let (na, nb) = (a.len(), b.len());

    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < na && j < nb {
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < na && a[i] <= x {
            i += 1;
        }
        while j < nb && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    // Once one sample is exhausted the gap only shrinks towards zero; the
    // remaining points are still evaluated for an exact supremum.
    while i < na {
        let x = a[i];
        while i < na && a[i] <= x {
            i += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    while j < nb {
        let x = b[j];
        while j < nb && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }

    let ne = (na as f64 * nb as f64) / (na + nb) as f64;
    let sqrt_ne = ne.sqrt();
    let lambda = (sqrt_ne + 0.12 + 0.11 / sqrt_ne) * d;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_survival(lambda),
    })
}

/// `Q(λ) = 2 Σ_{k≥1} (-1)^{k-1} exp(-2 k² λ²)`, clamped to `[0, 1]`.
///
/// For small λ the alternating series converges slowly, so the equivalent
/// theta-function form `1 - √(2π)/λ Σ exp(-(2k-1)² π² / (8 λ²))` is used.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let p = if lambda < 1.18 {
        let c = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let mut sum = 0.0;
        for k in 1..=100u32 {
            let odd = (2 * k - 1) as f64;
            let term = (-odd * odd * c).exp();
            sum += term;
            if term <= 1e-18 * sum {
                break;
            }
        }
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * sum
    } else {
        let mut sum = 0.0;
        let mut sign = 1.0;
        for k in 1..=100u32 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            sum += sign * term;
            if term <= 1e-18 * sum.abs() {
                break;
            }
            sign = -sign;
        }
        2.0 * sum
    };
    p.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassSummary {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl ClassSummary {
    fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        ClassSummary {
            count: values.len(),
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassSplit {
    pub class0: ClassSummary,
    pub class1: ClassSummary,
    pub ks: KsResult,
}

pub fn class_split_summary(values: &[f64], labels: &[u8]) -> Result<ClassSplit> {
    if values.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} values for {} labels",
            values.len(),
            labels.len()
        )));
    }
    let (mut zeros, mut ones) = (Vec::new(), Vec::new());
    for (&v, &l) in values.iter().zip(labels) {
        if l == 0 {
            zeros.push(v)
        } else {
            ones.push(v)
        }
    }
    if zeros.is_empty() || ones.is_empty() {
        return Err(Error::SingleClass);
    }
    Ok(ClassSplit {
        class0: ClassSummary::of(&zeros),
        class1: ClassSummary::of(&ones),
        ks: ks_two_sample(&zeros, &ones)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    /// Row-major, `names.len()` squared.
    pub values: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.names.len() + j]
    }
}

/// Pearson correlation between every pair of columns. A constant column
/// correlates 0 with everything else and 1 with itself.
pub fn correlation_matrix(columns: &[(String, Vec<f64>)]) -> Result<CorrelationMatrix> {
    if columns.len() < 2 {
        return Err(Error::InvalidArgument("need at least two columns".into()));
    }
    let len = columns[0].1.len();
    if let Some((name, col)) = columns.iter().find(|(_, c)| c.len() != len) {
        return Err(Error::Shape(format!(
            "column {name} has {} rows, expected {len}",
            col.len()
        )));
    }
    if len < 2 {
        return Err(Error::InvalidArgument("need at least two rows".into()));
    }

    let centered: Vec<(Vec<f64>, f64)> = columns
        .iter()
        .map(|(_, c)| {
            let mean = c.iter().sum::<f64>() / len as f64;
            let dev: Vec<f64> = c.iter().map(|v| v - mean).collect();
            let norm = dev.iter().map(|d| d * d).sum::<f64>().sqrt();
            (dev, norm)
        })
        .collect();

    let k = columns.len();
    let mut values = vec![0.0; k * k];
    for i in 0..k {
        values[i * k + i] = 1.0;
        for j in i + 1..k {
            let (di, ni) = &centered[i];
            let (dj, nj) = &centered[j];
            let r = if *ni == 0.0 || *nj == 0.0 {
                0.0
            } else {
                let dot: f64 = di.iter().zip(dj).map(|(a, b)| a * b).sum();
                (dot / (ni * nj)).clamp(-1.0, 1.0)
            };
            values[i * k + j] = r;
            values[j * k + i] = r;
        }
    }
    Ok(CorrelationMatrix {
        names: columns.iter().map(|(n, _)| n.clone()).collect(),
        values,
    })
}

/// Distinct values with their multiplicities, ascending. Plot-ready input for
/// log-log distribution charts; binning is left to the consumer.
pub fn value_counts(values: &[f64]) -> Vec<(f64, usize)> {
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let mut out: Vec<(f64, usize)> = Vec::new();
    for v in sorted {
        match out.last_mut() {
            Some((last, count)) if *last == v => *count += 1,
            _ => out.push((v, 1)),
        }
    }
    out
}

/// Write `centralities.csv`, `ks.csv`, `correlations.csv` and one
/// `loglog_<measure>.csv` per centrality into `out_dir`.
///
/// `extra_columns` join the centralities (and label) in the correlation matrix.
pub fn write_analysis(
    out_dir: &Path,
    table: &CentralityTable,
    labels: &[u8],
    extra_columns: &[(String, Vec<f64>)],
) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let create = |name: &str| -> Result<BufWriter<File>> {
        let path = out_dir.join(name);
        Ok(BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?))
    };

    let mut w = create("centralities.csv")?;
    writeln!(w, "node,label,weighted_degree,closeness,betweenness,eigenvector")?;
    for v in 0..labels.len() {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            v,
            labels[v],
            table.weighted_degree[v],
            table.closeness[v],
            table.betweenness[v],
            table.eigenvector[v]
        )?;
    }
    w.flush()?;

    let mut w = create("ks.csv")?;
    writeln!(w, "measure,mean_0,std_0,mean_1,std_1,ks_statistic,ks_p_value")?;
    for (name, values) in table.columns() {
        let s = class_split_summary(values, labels)?;
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            name, s.class0.mean, s.class0.std, s.class1.mean, s.class1.std, s.ks.statistic, s.ks.p_value
        )?;
    }
    w.flush()?;

    let mut columns: Vec<(String, Vec<f64>)> = extra_columns.to_vec();
    columns.extend(table.columns().iter().map(|(n, v)| (n.to_string(), v.to_vec())));
    columns.push(("label".into(), labels.iter().map(|&l| l as f64).collect()));
    let corr = correlation_matrix(&columns)?;
    let mut w = create("correlations.csv")?;
    writeln!(w, "feature,{}", corr.names.join(","))?;
    for (i, name) in corr.names.iter().enumerate() {
        let row: Vec<String> = (0..corr.names.len()).map(|j| corr.get(i, j).to_string()).collect();
        writeln!(w, "{},{}", name, row.join(","))?;
    }
    w.flush()?;

    for (name, values) in table.columns() {
        let mut w = create(&format!("loglog_{name}.csv"))?;
        writeln!(w, "value,count")?;
        for (v, c) in value_counts(values) {
            writeln!(w, "{v},{c}")?;
        }
        w.flush()?;
    }
    Ok(())
}
