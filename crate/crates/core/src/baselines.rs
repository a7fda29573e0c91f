//! Graph-free baselines: a two-hidden-layer MLP, a small 1-D CNN run over the
//! embedding dimensions, and a linear probe on frozen embeddings.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::checkpoint::{load_checkpoint, save_checkpoint};
use crate::nn::train::{fit, History, TrainConfig};
use crate::nn::{bce_with_logits, gelu, gelu_grad, Classifier, DenseLayer, Tensor2};

pub const MLP_HIDDEN: usize = 32;
pub const CNN_KERNEL: usize = 3;
pub const CNN_CHANNELS: [usize; 2] = [8, 16];

/// Rows per forward pass when scoring a whole matrix.
const SCORE_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    Mlp,
    Cnn1d,
    LinearProbe,
}

impl BaselineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::Mlp => "mlp",
            BaselineKind::Cnn1d => "cnn1d",
            BaselineKind::LinearProbe => "linear-probe",
        }
    }

    pub fn default_lr(self) -> f64 {
        match self {
            BaselineKind::Mlp => 1e-2,
            BaselineKind::Cnn1d => 1e-1,
            BaselineKind::LinearProbe => 1e-4,
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(BaselineKind::Mlp),
            "cnn1d" => Ok(BaselineKind::Cnn1d),
            "linear-probe" => Ok(BaselineKind::LinearProbe),
            other => Err(Error::InvalidArgument(format!("unknown baseline kind {other:?}"))),
        }
    }
}

fn check_rows(x: &Tensor2, labels: &[u8]) -> Result<()> {
    if x.rows() != labels.len() {
        return Err(Error::RowCountMismatch {
            expected: labels.len(),
            found: x.rows(),
        });
    }
    Ok(())
}

fn chunked_logits(x: &Tensor2, forward: impl Fn(&Tensor2) -> Result<Vec<f64>>) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(x.rows());
    let rows: Vec<usize> = (0..x.rows()).collect();
    for chunk in rows.chunks(SCORE_CHUNK) {
        out.extend(forward(&x.select_rows(chunk))?);
    }
    Ok(out)
}

fn batch_loss(logits: &[f64], nodes: &[usize], labels: &[u8], pos_weight: f64) -> Result<(f64, Tensor2)> {
    let y: Vec<u8> = nodes.iter().map(|&i| labels[i]).collect();
    let (loss, dz) = bce_with_logits(logits, &y, pos_weight)?;
    Ok((loss, Tensor2::from_vec(dz.len(), 1, dz)?))
}

/// Dense layers with GELU between them and a single output logit.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    pub layers: Vec<DenseLayer>,
}

impl DenseNet {
    pub fn init(widths: &[usize], seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) || *widths.last().expect("non-empty") != 1 {
            return Err(Error::InvalidArgument(format!("invalid layer widths {widths:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = widths
            .windows(2)
            .map(|w| DenseLayer::init(w[0], w[1], &mut rng))
            .collect();
        Ok(DenseNet { layers })
    }

    pub fn mlp(d_in: usize, seed: u64) -> Result<Self> {
        Self::init(&[d_in, MLP_HIDDEN, MLP_HIDDEN, 1], seed)
    }

    pub fn linear_probe(d_in: usize, seed: u64) -> Result<Self> {
        Self::init(&[d_in, 1], seed)
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() || layers.last().expect("non-empty").d_out() != 1 {
            return Err(Error::Format("dense network must end in a single output".into()));
        }
        if layers.windows(2).any(|p| p[0].d_out() != p[1].d_in()) {
            return Err(Error::Format("dense layer shapes do not chain".into()));
        }
        Ok(DenseNet { layers })
    }

    /// Returns the input of every layer, the pre-activations and the logits.
    fn forward(&self, x: &Tensor2) -> Result<(Vec<Tensor2>, Vec<Tensor2>, Tensor2)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h)?;
            inputs.push(h);
            if i + 1 == self.layers.len() {
                return Ok((inputs, pre, z));
            }
            h = z.map(gelu);
            pre.push(z);
        }
        unreachable!("at least one layer")
    }
}

impl Classifier<Tensor2> for DenseNet {
    fn parameters(&self) -> Vec<&Tensor2> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor2> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    fn logits(&self, x: &Tensor2) -> Result<Vec<f64>> {
        chunked_logits(x, |b| Ok(self.forward(b)?.2.into_vec()))
    }

    fn loss_and_grads(&self, x: &Tensor2, nodes: &[usize], labels: &[u8], pos_weight: f64) -> Result<(f64, Vec<Tensor2>)> {
        check_rows(x, labels)?;
        let (inputs, pre, z) = self.forward(&x.select_rows(nodes))?;
        let (loss, mut grad) = batch_loss(z.data(), nodes, labels, pos_weight)?;
        let mut grads = Vec::with_capacity(2 * self.layers.len());
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let g = layer.backward(&inputs[i], &grad, i > 0)?;
            grads.push(g.bias);
            grads.push(g.weight);
            if let Some(mut d) = g.input {
                d.mul_map_assign(&pre[i - 1], gelu_grad);
                grad = d;
            }
        }
        grads.reverse();
        Ok((loss, grads))
    }
}

/// 1-D convolution with stride 1 and no padding over `(batch · length) x
/// channels` activations, computed as patches times a dense layer whose
/// weight has one row per `(input channel, tap)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub dense: DenseLayer,
    pub kernel: usize,
}

impl Conv1d {
    pub fn init(in_ch: usize, out_ch: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Self {
        Conv1d {
            dense: DenseLayer::init(in_ch * kernel, out_ch, rng),
            kernel,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.dense.d_in() / self.kernel
    }

    pub fn out_channels(&self) -> usize {
        self.dense.d_out()
    }

    fn patches(&self, x: &Tensor2, batch: usize, len: usize) -> Tensor2 {
        let (k, c_in) = (self.kernel, self.in_channels());
        let out_len = len + 1 - k;
        let mut p = Tensor2::zeros(batch * out_len, c_in * k);
        for b in 0..batch {
            for pos in 0..out_len {
                let row = p.row_mut(b * out_len + pos);
                for t in 0..k {
                    let src = x.row(b * len + pos + t);
                    for c in 0..c_in {
                        row[c * k + t] = src[c];
                    }
                }
            }
        }
        p
    }

    fn fold(&self, d_patches: &Tensor2, batch: usize, len: usize) -> Tensor2 {
        let (k, c_in) = (self.kernel, self.in_channels());
        let out_len = len + 1 - k;
        let mut dx = Tensor2::zeros(batch * len, c_in);
        for b in 0..batch {
            for pos in 0..out_len {
                let row = d_patches.row(b * out_len + pos);
                for t in 0..k {
                    let dst = dx.row_mut(b * len + pos + t);
                    for c in 0..c_in {
                        dst[c] += row[c * k + t];
                    }
                }
            }
        }
        dx
    }

    /// Pre-activation output, `(batch · (len - kernel + 1)) x out_channels`.
    pub fn apply(&self, x: &Tensor2, batch: usize, len: usize) -> Result<Tensor2> {
        if len < self.kernel || x.rows() != batch * len || x.cols() != self.in_channels() {
            return Err(Error::Shape(format!(
                "convolution over {batch} sequences of length {len} got {:?}",
                x.shape()
            )));
        }
        self.dense.forward(&self.patches(x, batch, len))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cnn1d {
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    pub dense: DenseLayer,
    len: usize,
}

struct CnnCache {
    p1: Tensor2,
    z1: Tensor2,
    p2: Tensor2,
    z2: Tensor2,
    flat: Tensor2,
    logits: Tensor2,
}

impl Cnn1d {
    pub fn new(len: usize, seed: u64) -> Result<Self> {
        let out_len = (len + 2).checked_sub(2 * CNN_KERNEL).filter(|&l| l > 0);
        let Some(out_len) = out_len else {
            return Err(Error::InvalidArgument(format!(
                "input width {len} too small for two convolutions of size {CNN_KERNEL}"
            )));
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv1 = Conv1d::init(1, CNN_CHANNELS[0], CNN_KERNEL, &mut rng);
        let conv2 = Conv1d::init(CNN_CHANNELS[0], CNN_CHANNELS[1], CNN_KERNEL, &mut rng);
        let dense = DenseLayer::init(out_len * CNN_CHANNELS[1], 1, &mut rng);
        Ok(Cnn1d { conv1, conv2, dense, len })
    }

    pub fn input_len(&self) -> usize {
        self.len
    }

    pub fn to_layers(&self) -> Vec<DenseLayer> {
        vec![self.conv1.dense.clone(), self.conv2.dense.clone(), self.dense.clone()]
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        let [l1, l2, l3]: [DenseLayer; 3] = layers
            .try_into()
            .map_err(|l: Vec<DenseLayer>| Error::Format(format!("cnn needs 3 layers, found {}", l.len())))?;
        let conv1 = Conv1d { dense: l1, kernel: CNN_KERNEL };
        let conv2 = Conv1d { dense: l2, kernel: CNN_KERNEL };
        if conv1.dense.d_in() != CNN_KERNEL
            || conv2.dense.d_in() != conv1.out_channels() * CNN_KERNEL
            || l3.d_out() != 1
            || l3.d_in() % conv2.out_channels() != 0
        {
            return Err(Error::Format("cnn layer shapes do not chain".into()));
        }
        let len = l3.d_in() / conv2.out_channels() + 2 * (CNN_KERNEL - 1);
        Ok(Cnn1d {
            conv1,
            conv2,
            dense: l3,
            len,
        })
    }

    fn forward(&self, x: &Tensor2) -> Result<CnnCache> {
        if x.cols() != self.len {
            return Err(Error::Shape(format!("cnn expects {} inputs, got {}", self.len, x.cols())));
        }
        let batch = x.rows();
        let l1 = self.len + 1 - CNN_KERNEL;
        let l2 = l1 + 1 - CNN_KERNEL;
        let seq = x.clone().reshape(batch * self.len, 1)?;
        let p1 = self.conv1.patches(&seq, batch, self.len);
        let z1 = self.conv1.dense.forward(&p1)?;
        let p2 = self.conv2.patches(&z1.map(gelu), batch, l1);
        let z2 = self.conv2.dense.forward(&p2)?;
        let flat = z2.map(gelu).reshape(batch, l2 * self.conv2.out_channels())?;
        let logits = self.dense.forward(&flat)?;
        Ok(CnnCache { p1, z1, p2, z2, flat, logits })
    }
}

impl Classifier<Tensor2> for Cnn1d {
    fn parameters(&self) -> Vec<&Tensor2> {
        vec![
            &self.conv1.dense.weight,
            &self.conv1.dense.bias,
            &self.conv2.dense.weight,
            &self.conv2.dense.bias,
            &self.dense.weight,
            &self.dense.bias,
        ]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor2> {
        vec![
            &mut self.conv1.dense.weight,
            &mut self.conv1.dense.bias,
            &mut self.conv2.dense.weight,
            &mut self.conv2.dense.bias,
            &mut self.dense.weight,
            &mut self.dense.bias,
        ]
    }

    fn logits(&self, x: &Tensor2) -> Result<Vec<f64>> {
        chunked_logits(x, |b| Ok(self.forward(b)?.logits.into_vec()))
    }

    fn loss_and_grads(&self, x: &Tensor2, nodes: &[usize], labels: &[u8], pos_weight: f64) -> Result<(f64, Vec<Tensor2>)> {
        check_rows(x, labels)?;
        let batch = nodes.len();
        let l1 = self.len + 1 - CNN_KERNEL;
        let c = self.forward(&x.select_rows(nodes))?;
        let (loss, d_logits) = batch_loss(c.logits.data(), nodes, labels, pos_weight)?;

        let g3 = self.dense.backward(&c.flat, &d_logits, true)?;
        let mut d2 = g3
            .input
            .expect("requested")
            .reshape(c.z2.rows(), c.z2.cols())?;
        d2.mul_map_assign(&c.z2, gelu_grad);
        let g2 = self.conv2.dense.backward(&c.p2, &d2, true)?;
        let mut d1 = self.conv2.fold(&g2.input.expect("requested"), batch, l1);
        d1.mul_map_assign(&c.z1, gelu_grad);
        let g1 = self.conv1.dense.backward(&c.p1, &d1, false)?;
        Ok((
            loss,
            vec![g1.weight, g1.bias, g2.weight, g2.bias, g3.weight, g3.bias],
        ))
    }
}

/// Any trained baseline.
#[derive(Debug, Clone, PartialEq)]
pub enum Baseline {
    Mlp(DenseNet),
    Cnn1d(Cnn1d),
    LinearProbe(DenseNet),
}

impl Baseline {
    pub fn init(kind: BaselineKind, d_in: usize, seed: u64) -> Result<Self> {
        Ok(match kind {
            BaselineKind::Mlp => Baseline::Mlp(DenseNet::mlp(d_in, seed)?),
            BaselineKind::Cnn1d => Baseline::Cnn1d(Cnn1d::new(d_in, seed)?),
            BaselineKind::LinearProbe => Baseline::LinearProbe(DenseNet::linear_probe(d_in, seed)?),
        })
    }

    pub fn kind(&self) -> BaselineKind {
        match self {
            Baseline::Mlp(_) => BaselineKind::Mlp,
            Baseline::Cnn1d(_) => BaselineKind::Cnn1d,
            Baseline::LinearProbe(_) => BaselineKind::LinearProbe,
        }
    }

    fn inner(&self) -> &dyn Classifier<Tensor2> {
        match self {
            Baseline::Mlp(m) | Baseline::LinearProbe(m) => m,
            Baseline::Cnn1d(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Classifier<Tensor2> {
        match self {
            Baseline::Mlp(m) | Baseline::LinearProbe(m) => m,
            Baseline::Cnn1d(m) => m,
        }
    }

    pub fn to_layers(&self) -> Vec<DenseLayer> {
        match self {
            Baseline::Mlp(m) | Baseline::LinearProbe(m) => m.layers.clone(),
            Baseline::Cnn1d(m) => m.to_layers(),
        }
    }

    pub fn from_layers(kind: BaselineKind, layers: Vec<DenseLayer>) -> Result<Self> {
        Ok(match kind {
            BaselineKind::Mlp => Baseline::Mlp(DenseNet::from_layers(layers)?),
            BaselineKind::Cnn1d => Baseline::Cnn1d(Cnn1d::from_layers(layers)?),
            BaselineKind::LinearProbe => {
                if layers.len() != 1 {
                    return Err(Error::Format(format!("linear probe has 1 layer, found {}", layers.len())));
                }
                Baseline::LinearProbe(DenseNet::from_layers(layers)?)
            }
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_checkpoint(&self.to_layers(), path)
    }

    pub fn load(kind: BaselineKind, path: impl AsRef<Path>) -> Result<Self> {
        Self::from_layers(kind, load_checkpoint(path)?)
    }
}

impl Classifier<Tensor2> for Baseline {
    fn parameters(&self) -> Vec<&Tensor2> {
        self.inner().parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor2> {
        self.inner_mut().parameters_mut()
    }

    fn logits(&self, x: &Tensor2) -> Result<Vec<f64>> {
        self.inner().logits(x)
    }

    fn loss_and_grads(&self, x: &Tensor2, nodes: &[usize], labels: &[u8], pos_weight: f64) -> Result<(f64, Vec<Tensor2>)> {
        self.inner().loss_and_grads(x, nodes, labels, pos_weight)
    }
}

/// Initialise and train one baseline on the given split.
pub fn train_baseline(
    kind: BaselineKind,
    x: &Tensor2,
    labels: &[u8],
    train: &[usize],
    val: &[usize],
    config: &TrainConfig,
) -> Result<(Baseline, History)> {
    check_rows(x, labels)?;
    let mut model = Baseline::init(kind, x.cols(), config.seed)?;
    log::info!("{kind}: {} parameters", model.parameter_count());
    let history = fit(&mut model, x, labels, train, val, config)?;
    Ok((model, history))
}

pub fn train_mlp(x: &Tensor2, labels: &[u8], train: &[usize], val: &[usize], seed: u64) -> Result<(Baseline, History)> {
    let config = TrainConfig::with_lr(BaselineKind::Mlp.default_lr(), seed);
    train_baseline(BaselineKind::Mlp, x, labels, train, val, &config)
}

pub fn train_cnn1d(x: &Tensor2, labels: &[u8], train: &[usize], val: &[usize], seed: u64) -> Result<(Baseline, History)> {
    let config = TrainConfig::with_lr(BaselineKind::Cnn1d.default_lr(), seed);
    train_baseline(BaselineKind::Cnn1d, x, labels, train, val, &config)
}

pub fn train_linear_probe(
    x: &Tensor2,
    labels: &[u8],
    train: &[usize],
    val: &[usize],
    seed: u64,
) -> Result<(Baseline, History)> {
    let config = TrainConfig::with_lr(BaselineKind::LinearProbe.default_lr(), seed);
    train_baseline(BaselineKind::LinearProbe, x, labels, train, val, &config)
}
