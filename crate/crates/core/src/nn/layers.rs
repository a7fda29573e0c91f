//! Dense layers, the tanh-approximated GELU and the numerically stable
//! binary cross-entropy on logits. Backward passes are written by hand.

use rand::Rng;

use super::tensor::{Tensor2, Trans};
use crate::error::{Error, Result};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// `0.5 x (1 + tanh(√(2/π) (x + 0.044715 x³)))`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Mean binary cross-entropy over `logits` and its gradient with respect to
/// each logit. Positive terms are scaled by `pos_weight`.
pub fn bce_with_logits(logits: &[f64], labels: &[u8], pos_weight: f64) -> Result<(f64, Vec<f64>)> {
    if logits.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} logits for {} labels",
            logits.len(),
            labels.len()
        )));
    }
    if logits.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| {
            if y == 1 {
                loss += pos_weight * softplus(-z);
                pos_weight * (sigmoid(z) - 1.0) / n
            } else {
                loss += softplus(z);
                sigmoid(z) / n
            }
        })
        .collect();
    Ok((loss / n, grad))
}

/// Fully connected layer `X · W + b` with `W: in x out`, `b: 1 x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Tensor2,
    pub bias: Tensor2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weight: Tensor2,
    pub bias: Tensor2,
    pub input: Option<Tensor2>,
}

impl DenseLayer {
    /// Glorot-uniform weights, zero bias.
    pub fn init(d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (d_in + d_out) as f64).sqrt();
        DenseLayer {
            weight: Tensor2::uniform(d_in, d_out, limit, rng),
            bias: Tensor2::zeros(1, d_out),
        }
    }

    pub fn new(weight: Tensor2, bias: Tensor2) -> Result<Self> {
        if bias.rows() != 1 || bias.cols() != weight.cols() {
            return Err(Error::Shape(format!(
                "bias {:?} does not match weight {:?}",
                bias.shape(),
                weight.shape()
            )));
        }
        Ok(DenseLayer { weight, bias })
    }

    pub fn d_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn d_out(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Tensor2) -> Result<Tensor2> {
        if x.cols() != self.d_in() {
            return Err(Error::Shape(format!(
                "dense layer expects {} inputs, got {}",
                self.d_in(),
                x.cols()
            )));
        }
        let mut out = x.matmul(&self.weight)?;
        out.add_row(&self.bias)?;
        Ok(out)
    }

    /// Gradients given the layer input `x` and `d loss / d output`.
    pub fn backward(&self, x: &Tensor2, grad_out: &Tensor2, need_input: bool) -> Result<DenseGrads> {
        let weight = Tensor2::matmul_t(x, Trans::Yes, grad_out, Trans::No)?;
        let bias = grad_out.col_sums();
        let input = if need_input {
            Some(Tensor2::matmul_t(grad_out, Trans::No, &self.weight, Trans::Yes)?)
        } else {
            None
        };
        Ok(DenseGrads { weight, bias, input })
    }
}
