//! The post graph: posts are nodes, two posts are joined when they share at
//! least one hashtag and were published less than `delta` seconds apart. The
//! edge weight is the number of shared hashtags.

use std::collections::{HashMap, VecDeque};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::TweetRecord;

const GRAPH_MAGIC: &[u8; 4] = b"PGR1";

/// Undirected weighted graph over corpus row indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PostGraph {
    n_nodes: usize,
    /// Sorted by neighbor index; every edge appears in both endpoint lists.
    adjacency: Vec<Vec<(u32, u32)>>,
    delta_seconds: i64,
}

impl PostGraph {
    /// Graph from an edge list. Edges must satisfy `u != v`, `w >= 1`, and
    /// appear once per unordered pair.
    pub fn from_edges(
        n_nodes: usize,
        edges: impl IntoIterator<Item = (u32, u32, u32)>,
        delta_seconds: i64,
    ) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); n_nodes];
        for (u, v, w) in edges {
            let (ui, vi) = (u as usize, v as usize);
            if ui >= n_nodes || vi >= n_nodes {
                return Err(Error::InvalidArgument(format!(
                    "edge ({u}, {v}) outside {n_nodes} nodes"
                )));
            }
            if u == v || w == 0 {
                return Err(Error::InvalidArgument(format!(
                    "invalid edge ({u}, {v}, {w})"
                )));
            }
            adjacency[ui].push((v, w));
            adjacency[vi].push((u, w));
        }
        for list in &mut adjacency {
            list.sort_unstable();
            if list.windows(2).any(|p| p[0].0 == p[1].0) {
                return Err(Error::InvalidArgument("parallel edges".into()));
            }
        }
        Ok(PostGraph {
            n_nodes,
            adjacency,
            delta_seconds,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn delta_seconds(&self) -> i64 {
        self.delta_seconds
    }

    /// `(neighbor, weight)` pairs of `node`, sorted by neighbor.
    pub fn neighbors(&self, node: usize) -> &[(u32, u32)] {
        &self.adjacency[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    /// Each undirected edge once as `(u, v, w)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32, u32)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(u, list)| {
            list.iter()
                .filter(move |&&(v, _)| (v as usize) > u)
                .map(move |&(v, w)| (u as u32, v, w))
        })
    }

    /// Same graph with node `i` renamed to `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n_nodes {
            return Err(Error::Shape(format!(
                "permutation of length {} for {} nodes",
                perm.len(),
                self.n_nodes
            )));
        }
        let edges: Vec<_> = self
            .edges()
            .map(|(u, v, w)| (perm[u as usize] as u32, perm[v as usize] as u32, w))
            .collect();
        Self::from_edges(self.n_nodes, edges, self.delta_seconds)
    }
}

/// Build the post graph with an inverted index from hashtag to time-sorted
/// posts and a sliding window of width `delta_seconds` over each posting list.
///
/// Each shared hashtag contributes one unit of weight to the pair, so the
/// final weight is the size of the hashtag intersection. The cost is
/// quadratic in the number of posts carrying one hashtag inside one window.
pub fn build_graph(records: &[TweetRecord], delta_seconds: i64) -> Result<PostGraph> {
    if delta_seconds <= 0 {
        return Err(Error::InvalidArgument(format!(
            "delta must be positive, got {delta_seconds}s"
        )));
    }
    if records.len() > u32::MAX as usize {
        return Err(Error::InvalidArgument("too many posts for 32-bit node ids".into()));
    }

    let mut index: HashMap<&str, Vec<(i64, u32)>> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        for tag in &r.hashtags {
            index.entry(tag.as_str()).or_default().push((r.timestamp, i as u32));
        }
    }

    let mut pairs: HashMap<u64, u32> = HashMap::new();
    for posting in index.values_mut() {
        posting.sort_unstable();
        for (a, &(ta, ia)) in posting.iter().enumerate() {
            for &(tb, ib) in &posting[a + 1..] {
                if tb - ta >= delta_seconds {
                    break;
                }
                let (u, v) = if ia < ib { (ia, ib) } else { (ib, ia) };
                *pairs.entry(((u as u64) << 32) | v as u64).or_default() += 1;
            }
        }
    }

    let edges = pairs
        .into_iter()
        .map(|(key, w)| ((key >> 32) as u32, key as u32, w));
    PostGraph::from_edges(records.len(), edges, delta_seconds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub n_nodes: usize,
    pub n_edges: usize,
    pub density: f64,
    pub n_connected_components: usize,
    pub max_component_size: usize,
}

pub fn graph_stats(graph: &PostGraph) -> GraphStats {
    let n = graph.n_nodes();
    let m = graph.n_edges();
    let density = if n < 2 {
        0.0
    } else {
        2.0 * m as f64 / (n as f64 * (n as f64 - 1.0))
    };
    let ids = connected_components(graph);
    let n_components = ids.iter().max().map_or(0, |&c| c + 1);
    let mut sizes = vec![0usize; n_components];
    for &c in &ids {
        sizes[c] += 1;
    }
    GraphStats {
        n_nodes: n,
        n_edges: m,
        density,
        n_connected_components: n_components,
        max_component_size: sizes.into_iter().max().unwrap_or(0),
    }
}

/// Component id per node, numbered in order of the lowest node index of each component.
pub fn connected_components(graph: &PostGraph) -> Vec<usize> {
    let n = graph.n_nodes();
    let mut ids = vec![usize::MAX; n];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if ids[start] != usize::MAX {
            continue;
        }
        ids[start] = next;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            for &(w, _) in graph.neighbors(v) {
                let w = w as usize;
                if ids[w] == usize::MAX {
                    ids[w] = next;
                    queue.push_back(w);
                }
            }
        }
        next += 1;
    }
    ids
}

/// Binary edge list: magic `PGR1`, u32 node count, u32 edge count, u64 delta
/// seconds, then `(u, v, w)` u32 triples with `u < v`. Little-endian.
pub fn write_graph(graph: &PostGraph, writer: impl Write) -> Result<()> {
    let mut w = BufWriter::new(writer);
    w.write_all(GRAPH_MAGIC)?;
    w.write_u32::<LittleEndian>(graph.n_nodes() as u32)?;
    w.write_u32::<LittleEndian>(graph.n_edges() as u32)?;
    w.write_u64::<LittleEndian>(graph.delta_seconds() as u64)?;
    for (u, v, wt) in graph.edges() {
        w.write_u32::<LittleEndian>(u)?;
        w.write_u32::<LittleEndian>(v)?;
        w.write_u32::<LittleEndian>(wt)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_graph(reader: impl Read) -> Result<PostGraph> {
    let mut r = BufReader::new(reader);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != GRAPH_MAGIC {
        return Err(Error::Format(format!("bad graph magic {magic:?}")));
    }
    let n = r.read_u32::<LittleEndian>()? as usize;
    let m = r.read_u32::<LittleEndian>()? as usize;
    let delta = r.read_u64::<LittleEndian>()? as i64;
    let mut edges = Vec::with_capacity(m);
    for _ in 0..m {
        let u = r.read_u32::<LittleEndian>()?;
        let v = r.read_u32::<LittleEndian>()?;
        let w = r.read_u32::<LittleEndian>()?;
        if u >= v {
            return Err(Error::Format(format!("edge ({u}, {v}) not in u < v order")));
        }
        edges.push((u, v, w));
    }
    PostGraph::from_edges(n, edges, delta)
}

pub fn save_graph(graph: &PostGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_graph(graph, file)
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<PostGraph> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_graph(file)
}
