//! Node feature assembly: the nine post/author features, text embeddings
//! (loaded from an `EMB1` file or produced by feature hashing), z-scoring,
//! PCA, and the feature-set combinations used by the ablation grid.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::TweetRecord;
use crate::nn::Tensor2;

pub const PHI_COLUMNS: [&str; 9] = [
    "followers",
    "n_tweets",
    "following",
    "length_of_post",
    "n_hashtags",
    "n_mentions",
    "emojis",
    "official_source",
    "has_media",
];

pub const DEFAULT_EMBEDDING_DIM: usize = 768;
pub const DEFAULT_PCA_COMPONENTS: usize = 48;

const EMB_MAGIC: &[u8; 4] = b"EMB1";

/// Dense row-major matrix of named real-valued columns, one row per post.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
    names: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(n_rows: usize, names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let n_cols = names.len();
        if values.len() != n_rows * n_cols {
            return Err(Error::Shape(format!(
                "{} values for a {n_rows}x{n_cols} matrix",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("feature matrix contains NaN or Inf".into()));
        }
        Ok(FeatureMatrix {
            n_rows,
            n_cols,
            values,
            names,
        })
    }

    fn with_prefix(n_rows: usize, n_cols: usize, prefix: &str, values: Vec<f64>) -> Result<Self> {
        let names = (0..n_cols).map(|j| format!("{prefix}{j}")).collect();
        Self::new(n_rows, names, values)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.get(i, j)).collect()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Horizontal concatenation.
    pub fn hstack(&self, other: &FeatureMatrix) -> Result<FeatureMatrix> {
        if self.n_rows != other.n_rows {
            return Err(Error::RowCountMismatch {
                expected: self.n_rows,
                found: other.n_rows,
            });
        }
        let mut values = Vec::with_capacity(self.n_rows * (self.n_cols + other.n_cols));
        for i in 0..self.n_rows {
            values.extend_from_slice(self.row(i));
            values.extend_from_slice(other.row(i));
        }
        let names = self.names.iter().chain(&other.names).cloned().collect();
        FeatureMatrix::new(self.n_rows, names, values)
    }

    /// A single column of ones.
    pub fn ones(n_rows: usize) -> FeatureMatrix {
        FeatureMatrix {
            n_rows,
            n_cols: 1,
            values: vec![1.0; n_rows],
            names: vec!["constant".into()],
        }
    }

    pub fn to_tensor(&self) -> Tensor2 {
        Tensor2::from_vec(self.n_rows, self.n_cols, self.values.clone()).expect("consistent shape")
    }

    fn to_dmatrix(&self, rows: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), self.n_cols, |i, j| self.get(rows[i], j))
    }
}

/// Row-major `f32` text embeddings; row `i` belongs to post `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n_rows: usize,
    dim: usize,
    values: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(n_rows: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != n_rows * dim {
            return Err(Error::Shape(format!(
                "{} values for a {n_rows}x{dim} embedding matrix",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("embedding contains NaN or Inf".into()));
        }
        Ok(EmbeddingMatrix { n_rows, dim, values })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_features(&self) -> FeatureMatrix {
        let values = self.values.iter().map(|&v| v as f64).collect();
        FeatureMatrix::with_prefix(self.n_rows, self.dim, "emb_", values)
            .expect("finite embedding values")
    }
}

/// The nine per-post features in `PHI_COLUMNS` order.
pub fn assemble_phi(records: &[TweetRecord]) -> FeatureMatrix {
    let mut values = Vec::with_capacity(records.len() * PHI_COLUMNS.len());
    for r in records {
        values.extend_from_slice(&[
            r.followers as f64,
            r.n_tweets as f64,
            r.following as f64,
            r.length_of_post() as f64,
            r.n_hashtags() as f64,
            r.n_mentions as f64,
            r.emojis as f64,
            f64::from(u8::from(r.official_source)),
            f64::from(u8::from(r.has_media)),
        ]);
    }
    FeatureMatrix {
        n_rows: records.len(),
        n_cols: PHI_COLUMNS.len(),
        values,
        names: PHI_COLUMNS.iter().map(|s| s.to_string()).collect(),
    }
}

pub fn write_features_csv(matrix: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{}", matrix.names.join(","))?;
    for i in 0..matrix.n_rows {
        let row: Vec<String> = matrix.row(i).iter().map(f64::to_string).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features_csv(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty feature file", path.display())))??;
    let names: Vec<String> = header.split(',').map(str::to_string).collect();
    let mut values = Vec::new();
    let mut n_rows = 0;
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Format(format!("{}: bad number on line {}", path.display(), lineno + 2)))?;
        if row.len() != names.len() {
            return Err(Error::Format(format!(
                "{}: line {} has {} fields, expected {}",
                path.display(),
                lineno + 2,
                row.len(),
                names.len()
            )));
        }
        values.extend(row);
        n_rows += 1;
    }
    FeatureMatrix::new(n_rows, names, values)
}

/// `EMB1` layout: magic, u32 rows, u32 dim, then `f32` rows, little-endian.
pub fn write_embeddings(emb: &EmbeddingMatrix, writer: impl Write) -> Result<()> {
    let mut w = BufWriter::new(writer);
    w.write_all(EMB_MAGIC)?;
    w.write_u32::<LittleEndian>(emb.n_rows as u32)?;
    w.write_u32::<LittleEndian>(emb.dim as u32)?;
    for &v in &emb.values {
        w.write_f32::<LittleEndian>(v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_embeddings(reader: impl Read) -> Result<EmbeddingMatrix> {
    let mut r = BufReader::new(reader);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != EMB_MAGIC {
        return Err(Error::Format(format!("bad embedding magic {magic:?}")));
    }
    let n_rows = r.read_u32::<LittleEndian>()? as usize;
    let dim = r.read_u32::<LittleEndian>()? as usize;
    let mut values = vec![0f32; n_rows * dim];
    r.read_f32_into::<LittleEndian>(&mut values)
        .map_err(|e| Error::Format(format!("truncated embedding payload: {e}")))?;
    EmbeddingMatrix::new(n_rows, dim, values)
}

pub fn save_embeddings(emb: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_embeddings(emb, file)
}

/// Load an `EMB1` file and check it has one row per post.
pub fn load_embeddings(path: impl AsRef<Path>, expected_rows: usize) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let emb = read_embeddings(file)?;
    if emb.n_rows != expected_rows {
        return Err(Error::RowCountMismatch {
            expected: expected_rows,
            found: emb.n_rows,
        });
    }
    Ok(emb)
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>, mut hash: u64) -> u64 {
    for b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Lowercased alphanumeric word tokens.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// Bucket and sign a word hashes to. Stable across platforms and releases.
pub fn word_slot(word: &str, dim: usize, seed: u64) -> (usize, f64) {
    let h = splitmix64(fnv1a(
        seed.to_le_bytes().into_iter().chain(word.bytes()),
        0xcbf2_9ce4_8422_2325,
    ));
    let bucket = (h % dim as u64) as usize;
    let sign = if splitmix64(h) >> 63 == 0 { 1.0 } else { -1.0 };
    (bucket, sign)
}

/// Signed feature hashing of word unigrams, rows L2-normalized. Empty texts
/// map to the zero row.
pub fn fallback_embed<S: AsRef<str>>(texts: &[S], dim: usize, seed: u64) -> Result<EmbeddingMatrix> {
    if dim == 0 {
        return Err(Error::InvalidArgument("embedding dim must be at least 1".into()));
    }
    let mut values = Vec::with_capacity(texts.len() * dim);
    let mut row = vec![0.0f64; dim];
    for text in texts {
        row.fill(0.0);
        for word in tokenize(text.as_ref()) {
            let (bucket, sign) = word_slot(&word, dim, seed);
            row[bucket] += sign;
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
        values.extend(row.iter().map(|&v| v as f32));
    }
    EmbeddingMatrix::new(texts.len(), dim, values)
}

/// Per-column z-score parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    /// Population standard deviations; zero marks a constant column.
    pub stds: Vec<f64>,
}

impl Standardizer {
    pub fn fit(matrix: &FeatureMatrix, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("standardization needs at least one row".into()));
        }
        let n = rows.len() as f64;
        let mut means = vec![0.0; matrix.n_cols];
        for &i in rows {
            for (m, v) in means.iter_mut().zip(matrix.row(i)) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut stds = vec![0.0; matrix.n_cols];
        for &i in rows {
            for ((s, v), m) in stds.iter_mut().zip(matrix.row(i)).zip(&means) {
                *s += (v - m) * (v - m);
            }
        }
        stds.iter_mut().for_each(|s| *s = (*s / n).sqrt());
        Ok(Standardizer { means, stds })
    }

    pub fn transform(&self, matrix: &FeatureMatrix) -> FeatureMatrix {
        self.map(matrix, |v, m, s| if s > 0.0 { (v - m) / s } else { v - m })
    }

    pub fn inverse(&self, matrix: &FeatureMatrix) -> FeatureMatrix {
        self.map(matrix, |v, m, s| if s > 0.0 { v * s + m } else { v + m })
    }

    fn map(&self, matrix: &FeatureMatrix, f: impl Fn(f64, f64, f64) -> f64) -> FeatureMatrix {
        let k = matrix.n_cols;
        let values = matrix
            .values
            .iter()
            .enumerate()
            .map(|(idx, &v)| f(v, self.means[idx % k], self.stds[idx % k]))
            .collect();
        FeatureMatrix {
            values,
            ..matrix.clone()
        }
    }
}

/// z-score every row of `matrix` with statistics from `stats_from` only.
pub fn standardize(matrix: &FeatureMatrix, stats_from: &[usize]) -> Result<(FeatureMatrix, Standardizer)> {
    let s = Standardizer::fit(matrix, stats_from)?;
    Ok((s.transform(matrix), s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `n_cols x k`, column-major in the sense that column `c` is component `c`.
    pub components: DMatrix<f64>,
    /// Share of total variance per kept component, non-increasing.
    pub explained_variance_ratio: Vec<f64>,
}

impl PcaModel {
    /// Top-`k` eigenvectors of the covariance of the `rows` subset.
    pub fn fit(matrix: &FeatureMatrix, k: usize, rows: &[usize]) -> Result<Self> {
        let d = matrix.n_cols;
        if k == 0 || k > d {
            return Err(Error::InvalidArgument(format!(
                "PCA needs 1 <= k <= {d}, got k = {k}"
            )));
        }
        if rows.len() < 2 {
            return Err(Error::InvalidArgument("PCA needs at least two rows".into()));
        }
        let mut x = matrix.to_dmatrix(rows);
        let mean: Vec<f64> = (0..d).map(|j| x.column(j).mean()).collect();
        for (j, m) in mean.iter().enumerate() {
            x.column_mut(j).add_scalar_mut(-m);
        }
        let cov = x.tr_mul(&x) / (rows.len() as f64 - 1.0);
        let eig = SymmetricEigen::new(cov);

        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();

        let mut components = DMatrix::zeros(d, k);
        let mut ratios = Vec::with_capacity(k);
        for (c, &idx) in order.iter().take(k).enumerate() {
            let mut v = eig.eigenvectors.column(idx).into_owned();
            // Deterministic sign: largest-magnitude entry positive.
            let pivot = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(0.0);
            if pivot < 0.0 {
                v.neg_mut();
            }
            components.set_column(c, &v);
            let lambda = eig.eigenvalues[idx].max(0.0);
            ratios.push(if total > 0.0 { lambda / total } else { 0.0 });
        }
        Ok(PcaModel {
            mean,
            components,
            explained_variance_ratio: ratios,
        })
    }

    pub fn k(&self) -> usize {
        self.components.ncols()
    }

    pub fn transform(&self, matrix: &FeatureMatrix) -> Result<FeatureMatrix> {
        let d = self.mean.len();
        if matrix.n_cols != d {
            return Err(Error::Shape(format!("PCA fitted on {d} columns, got {}", matrix.n_cols)));
        }
        let mut x = DMatrix::from_row_slice(matrix.n_rows, d, &matrix.values);
        for (j, m) in self.mean.iter().enumerate() {
            x.column_mut(j).add_scalar_mut(-m);
        }
        let reduced = x * &self.components;
        let values: Vec<f64> = (0..reduced.nrows())
            .flat_map(|i| (0..reduced.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| reduced[(i, j)])
            .collect();
        FeatureMatrix::with_prefix(matrix.n_rows, self.k(), "pc_", values)
    }

    /// `reduced * componentsᵀ + mean`.
    pub fn inverse_transform(&self, reduced: &FeatureMatrix) -> FeatureMatrix {
        let z = DMatrix::from_row_slice(reduced.n_rows, reduced.n_cols, &reduced.values);
        let x = z * self.components.transpose();
        let d = self.mean.len();
        let values = (0..x.nrows())
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .map(|(i, j)| x[(i, j)] + self.mean[j])
            .collect();
        FeatureMatrix::with_prefix(reduced.n_rows, d, "x_", values).expect("finite reconstruction")
    }
}

pub fn pca_fit_transform(
    matrix: &FeatureMatrix,
    k: usize,
    stats_from: &[usize],
) -> Result<(PcaModel, FeatureMatrix)> {
    let model = PcaModel::fit(matrix, k, stats_from)?;
    let reduced = model.transform(matrix)?;
    Ok((model, reduced))
}

/// Concatenate the enabled blocks in `(phi, emb)` order. With both blocks
/// disabled the result is a single constant column of ones.
pub fn concat_features(
    phi: &FeatureMatrix,
    emb: &EmbeddingMatrix,
    use_phi: bool,
    use_emb: bool,
) -> Result<FeatureMatrix> {
    if phi.n_rows != emb.n_rows {
        return Err(Error::RowCountMismatch {
            expected: phi.n_rows,
            found: emb.n_rows,
        });
    }
    match (use_phi, use_emb) {
        (true, true) => phi.hstack(&emb.to_features()),
        (true, false) => Ok(phi.clone()),
        (false, true) => Ok(emb.to_features()),
        (false, false) => Ok(FeatureMatrix::ones(phi.n_rows)),
    }
}

/// How one feature block enters the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockMode {
    #[serde(alias = "no")]
    Off,
    #[serde(alias = "yes")]
    Raw,
    Pca,
}

impl BlockMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BlockMode::Off => "no",
            BlockMode::Raw => "yes",
            BlockMode::Pca => "pca",
        }
    }
}

/// One row of the feature ablation grid. When both blocks are `Pca` they are
/// reduced jointly, otherwise each PCA block is reduced on its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub phi: BlockMode,
    pub omega: BlockMode,
}

impl FeatureSet {
    pub const fn new(phi: BlockMode, omega: BlockMode) -> Self {
        FeatureSet { phi, omega }
    }

    pub const FULL: FeatureSet = FeatureSet::new(BlockMode::Raw, BlockMode::Raw);

    /// The seven ablation rows: neither, Φ, ω, ω PCA, joint PCA, Φ + ω PCA, Φ + ω.
    pub fn ablation_grid() -> [FeatureSet; 7] {
        use BlockMode::*;
        [
            FeatureSet::new(Off, Off),
            FeatureSet::new(Raw, Off),
            FeatureSet::new(Off, Raw),
            FeatureSet::new(Off, Pca),
            FeatureSet::new(Pca, Pca),
            FeatureSet::new(Raw, Pca),
            FeatureSet::new(Raw, Raw),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputOptions {
    pub standardize: bool,
    pub pca_components: usize,
}

impl Default for InputOptions {
    fn default() -> Self {
        InputOptions {
            standardize: true,
            pca_components: DEFAULT_PCA_COMPONENTS,
        }
    }
}

/// Build the model input matrix for a feature set. All statistics
/// (z-scores, PCA) come from `fit_rows`.
pub fn build_inputs(
    set: FeatureSet,
    phi: &FeatureMatrix,
    emb: &EmbeddingMatrix,
    fit_rows: &[usize],
    opts: InputOptions,
) -> Result<FeatureMatrix> {
    if phi.n_rows != emb.n_rows {
        return Err(Error::RowCountMismatch {
            expected: phi.n_rows,
            found: emb.n_rows,
        });
    }
    let prep = |m: FeatureMatrix| -> Result<FeatureMatrix> {
        if opts.standardize {
            Ok(standardize(&m, fit_rows)?.0)
        } else {
            Ok(m)
        }
    };
    let reduce = |m: FeatureMatrix| -> Result<FeatureMatrix> {
        let k = opts.pca_components.min(m.n_cols);
        let (_, reduced) = pca_fit_transform(&m, k, fit_rows)?;
        prep(reduced)
    };

    use BlockMode::*;
    match (set.phi, set.omega) {
        (Off, Off) => Ok(FeatureMatrix::ones(phi.n_rows)),
        (Pca, Pca) => {
            let joint = prep(phi.clone())?.hstack(&prep(emb.to_features())?)?;
            reduce(joint)
        }
        (p, o) => {
            let phi_block = match p {
                Off => None,
                Raw => Some(prep(phi.clone())?),
                Pca => Some(reduce(prep(phi.clone())?)?),
            };
            let omega_block = match o {
                Off => None,
                Raw => Some(prep(emb.to_features())?),
                Pca => Some(reduce(prep(emb.to_features())?)?),
            };
            match (phi_block, omega_block) {
                (Some(a), Some(b)) => a.hstack(&b),
                (Some(a), None) | (None, Some(a)) => Ok(a),
                (None, None) => unreachable!("both-off handled above"),
            }
        }
    }
}
