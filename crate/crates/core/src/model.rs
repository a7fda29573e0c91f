//! GraphSAGE-style classifier over the post graph: each layer sums neighbor
//! representations, concatenates them with the node's own, and applies a
//! dense layer with GELU. A 16-unit GELU head and a single logit follow.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Split;
use crate::nn::checkpoint::{load_checkpoint, save_checkpoint};
use crate::nn::train::{fit, History, TrainConfig};
use crate::nn::{bce_with_logits, gelu, gelu_grad, Classifier, DenseLayer, Tensor2};
use crate::postgraph::PostGraph;

pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_LAYERS: usize = 2;
pub const HEAD_UNITS: usize = 16;
pub const DEFAULT_LR: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub layers: usize,
    /// Scale neighbor terms by edge weight instead of a plain sum.
    pub weighted_agg: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: DEFAULT_HIDDEN,
            layers: DEFAULT_LAYERS,
            weighted_agg: false,
        }
    }
}

/// Features plus the graph they live on; row `i` is node `i`.
#[derive(Debug, Clone, Copy)]
pub struct GraphInput<'a> {
    pub features: &'a Tensor2,
    pub graph: &'a PostGraph,
}

impl<'a> GraphInput<'a> {
    pub fn new(features: &'a Tensor2, graph: &'a PostGraph) -> Result<Self> {
        if features.rows() != graph.n_nodes() {
            return Err(Error::RowCountMismatch {
                expected: graph.n_nodes(),
                found: features.rows(),
            });
        }
        Ok(GraphInput { features, graph })
    }
}

/// `a_i = Σ_{j ∈ N(i)} h_j`, optionally weighted by `w_ij`.
pub fn aggregate(h: &Tensor2, graph: &PostGraph, weighted: bool) -> Result<Tensor2> {
    if h.rows() != graph.n_nodes() {
        return Err(Error::Shape(format!(
            "{} feature rows for {} nodes",
            h.rows(),
            graph.n_nodes()
        )));
    }
    let cols = h.cols();
    let mut out = Tensor2::zeros(h.rows(), cols);
    for i in 0..h.rows() {
        let acc = out.row_mut(i);
        for &(j, w) in graph.neighbors(i) {
            let src = &h.data()[j as usize * cols..(j as usize + 1) * cols];
            let scale = if weighted { w as f64 } else { 1.0 };
            for (a, s) in acc.iter_mut().zip(src) {
                *a += scale * s;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SageLayer {
    pub dense: DenseLayer,
}

impl SageLayer {
    pub fn init(d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        SageLayer {
            dense: DenseLayer::init(2 * d_in, d_out, rng),
        }
    }

    pub fn new(dense: DenseLayer) -> Result<Self> {
        if dense.d_in() % 2 != 0 {
            return Err(Error::Shape(format!(
                "aggregation layer input width {} is odd",
                dense.d_in()
            )));
        }
        Ok(SageLayer { dense })
    }

    pub fn d_in(&self) -> usize {
        self.dense.d_in() / 2
    }

    pub fn d_out(&self) -> usize {
        self.dense.d_out()
    }

    /// Returns `(concat input, pre-activation, output)`.
    fn forward_cached(&self, h: &Tensor2, graph: &PostGraph, weighted: bool) -> Result<(Tensor2, Tensor2, Tensor2)> {
        if h.cols() != self.d_in() {
            return Err(Error::Shape(format!(
                "layer expects {} features, got {}",
                self.d_in(),
                h.cols()
            )));
        }
        let concat = h.hstack(&aggregate(h, graph, weighted)?)?;
        let pre = self.dense.forward(&concat)?;
        let out = pre.map(gelu);
        Ok((concat, pre, out))
    }

    pub fn forward(&self, h: &Tensor2, graph: &PostGraph, weighted: bool) -> Result<Tensor2> {
        Ok(self.forward_cached(h, graph, weighted)?.2)
    }
}

/// One aggregation step with the plain neighbor sum.
pub fn sage_forward(layer: &SageLayer, h: &Tensor2, graph: &PostGraph) -> Result<Tensor2> {
    layer.forward(h, graph, false)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TweetGageModel {
    pub sage: Vec<SageLayer>,
    pub head: DenseLayer,
    pub out: DenseLayer,
    pub weighted_agg: bool,
}

struct Cache {
    concat: Vec<Tensor2>,
    pre: Vec<Tensor2>,
    hidden: Tensor2,
    head_pre: Tensor2,
    head_out: Tensor2,
    logits: Vec<f64>,
}

impl TweetGageModel {
    pub fn new(d_in: usize, config: ModelConfig, seed: u64) -> Result<Self> {
        if d_in == 0 || config.hidden == 0 || config.layers == 0 {
            return Err(Error::InvalidArgument(
                "input width, hidden width and depth must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sage = Vec::with_capacity(config.layers);
        let mut width = d_in;
        for _ in 0..config.layers {
            sage.push(SageLayer::init(width, config.hidden, &mut rng));
            width = config.hidden;
        }
        let model = TweetGageModel {
            sage,
            head: DenseLayer::init(config.hidden, HEAD_UNITS, &mut rng),
            out: DenseLayer::init(HEAD_UNITS, 1, &mut rng),
            weighted_agg: config.weighted_agg,
        };
        log::info!(
            "graph model: {} inputs, {} layers of {}, {} parameters",
            d_in,
            config.layers,
            config.hidden,
            model.parameter_count()
        );
        Ok(model)
    }

    pub fn d_in(&self) -> usize {
        self.sage[0].d_in()
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            hidden: self.head.d_in(),
            layers: self.sage.len(),
            weighted_agg: self.weighted_agg,
        }
    }

    /// Layers in checkpoint order: aggregation layers, head, output.
    pub fn to_layers(&self) -> Vec<DenseLayer> {
        self.sage
            .iter()
            .map(|s| s.dense.clone())
            .chain([self.head.clone(), self.out.clone()])
            .collect()
    }

    pub fn from_layers(mut layers: Vec<DenseLayer>, weighted_agg: bool) -> Result<Self> {
        if layers.len() < 3 {
            return Err(Error::Format(format!(
                "graph model needs at least 3 layers, found {}",
                layers.len()
            )));
        }
        let out = layers.pop().expect("length checked");
        let head = layers.pop().expect("length checked");
        let sage = layers
            .into_iter()
            .map(SageLayer::new)
            .collect::<Result<Vec<_>>>()?;
        for pair in sage.windows(2) {
            if pair[0].d_out() != pair[1].d_in() {
                return Err(Error::Format("aggregation layer widths do not chain".into()));
            }
        }
        if sage.last().expect("non-empty").d_out() != head.d_in() || head.d_out() != out.d_in() || out.d_out() != 1 {
            return Err(Error::Format("head layer shapes do not chain".into()));
        }
        Ok(TweetGageModel {
            sage,
            head,
            out,
            weighted_agg,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_checkpoint(&self.to_layers(), path)
    }

    pub fn load(path: impl AsRef<Path>, weighted_agg: bool) -> Result<Self> {
        Self::from_layers(load_checkpoint(path)?, weighted_agg)
    }

    fn forward(&self, input: &GraphInput) -> Result<Cache> {
        if input.features.rows() != input.graph.n_nodes() {
            return Err(Error::RowCountMismatch {
                expected: input.graph.n_nodes(),
                found: input.features.rows(),
            });
        }
        let mut concat = Vec::with_capacity(self.sage.len());
        let mut pre = Vec::with_capacity(self.sage.len());
        let mut h = input.features.clone();
        for layer in &self.sage {
            let (c, z, out) = layer.forward_cached(&h, input.graph, self.weighted_agg)?;
            concat.push(c);
            pre.push(z);
            h = out;
        }
        let head_pre = self.head.forward(&h)?;
        let head_out = head_pre.map(gelu);
        let logits = self.out.forward(&head_out)?.into_vec();
        Ok(Cache {
            concat,
            pre,
            hidden: h,
            head_pre,
            head_out,
            logits,
        })
    }
}

impl<'a> Classifier<GraphInput<'a>> for TweetGageModel {
    fn parameters(&self) -> Vec<&Tensor2> {
        let mut p = Vec::with_capacity(2 * self.sage.len() + 4);
        for s in &self.sage {
            p.push(&s.dense.weight);
            p.push(&s.dense.bias);
        }
        p.extend([&self.head.weight, &self.head.bias, &self.out.weight, &self.out.bias]);
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor2> {
        let mut p = Vec::with_capacity(2 * self.sage.len() + 4);
        for s in &mut self.sage {
            p.push(&mut s.dense.weight);
            p.push(&mut s.dense.bias);
        }
        p.extend([
            &mut self.head.weight,
            &mut self.head.bias,
            &mut self.out.weight,
            &mut self.out.bias,
        ]);
        p
    }

    fn logits(&self, input: &GraphInput<'a>) -> Result<Vec<f64>> {
        Ok(self.forward(input)?.logits)
    }

    fn loss_and_grads(
        &self,
        input: &GraphInput<'a>,
        nodes: &[usize],
        labels: &[u8],
        pos_weight: f64,
    ) -> Result<(f64, Vec<Tensor2>)> {
        let n = input.graph.n_nodes();
        if labels.len() != n {
            return Err(Error::RowCountMismatch {
                expected: n,
                found: labels.len(),
            });
        }
        let cache = self.forward(input)?;
        let z: Vec<f64> = nodes.iter().map(|&i| cache.logits[i]).collect();
        let y: Vec<u8> = nodes.iter().map(|&i| labels[i]).collect();
        let (loss, dz) = bce_with_logits(&z, &y, pos_weight)?;

        let mut d_logits = Tensor2::zeros(n, 1);
        for (&i, g) in nodes.iter().zip(dz) {
            d_logits.data_mut()[i] += g;
        }
        let out_g = self.out.backward(&cache.head_out, &d_logits, true)?;
        let mut d_head = out_g.input.expect("requested");
        d_head.mul_map_assign(&cache.head_pre, gelu_grad);
        let head_g = self.head.backward(&cache.hidden, &d_head, true)?;
        let mut d_h = head_g.input.expect("requested");

        let mut sage_grads = Vec::with_capacity(self.sage.len());
        for (l, layer) in self.sage.iter().enumerate().rev() {
            d_h.mul_map_assign(&cache.pre[l], gelu_grad);
            let g = layer.dense.backward(&cache.concat[l], &d_h, l > 0)?;
            if let Some(d_concat) = &g.input {
                let (mut d_self, d_agg) = d_concat.split_cols(layer.d_in());
                // the aggregation operator is symmetric
                d_self.add_assign(&aggregate(&d_agg, input.graph, self.weighted_agg)?);
                d_h = d_self;
            }
            sage_grads.push((g.weight, g.bias));
        }
        sage_grads.reverse();

        let mut grads = Vec::with_capacity(2 * self.sage.len() + 4);
        for (w, b) in sage_grads {
            grads.push(w);
            grads.push(b);
        }
        grads.extend([head_g.weight, head_g.bias, out_g.weight, out_g.bias]);
        Ok((loss, grads))
    }
}

/// Initialise the graph model from `train.seed` and fit it on the split's
/// training and validation nodes.
pub fn train_graph_model(
    x: &Tensor2,
    graph: &PostGraph,
    labels: &[u8],
    split: &Split,
    config: ModelConfig,
    train: &TrainConfig,
) -> Result<(TweetGageModel, History)> {
    let input = GraphInput::new(x, graph)?;
    let mut model = TweetGageModel::new(x.cols(), config, train.seed)?;
    let history = fit(&mut model, &input, labels, &split.train, &split.val, train)?;
    Ok((model, history))
}
