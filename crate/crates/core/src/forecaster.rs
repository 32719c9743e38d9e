//! Compact windowed trajectory regressor whose parameters are supplied from
//! outside (generated by QT/QPA or trained directly).
//!
//! Parameters are placed layer by layer: weights row-major `out x in`, then
//! biases. Hidden layers use tanh, the output layer is linear.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::mlp;

const REDUCE_BLOCK: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_width: usize,
    pub hidden_dims: Vec<usize>,
    pub output_width: usize,
}

/// Where one dense layer lives in the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlot {
    pub weight_offset: usize,
    /// Output width (`d` for LoRA).
    pub rows: usize,
    /// Input width (`k` for LoRA).
    pub cols: usize,
    pub bias_offset: usize,
}

impl NetSpec {
    pub fn new(input_width: usize, hidden_dims: Vec<usize>, output_width: usize) -> Result<Self> {
        if input_width == 0 || output_width == 0 || hidden_dims.contains(&0) {
            return Err(Error::invalid("network widths must be positive"));
        }
        Ok(Self {
            input_width,
            hidden_dims,
            output_width,
        })
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = Vec::with_capacity(self.hidden_dims.len() + 2);
        d.push(self.input_width);
        d.extend_from_slice(&self.hidden_dims);
        d.push(self.output_width);
        d
    }

    pub fn total_params(&self) -> usize {
        mlp::param_count(&self.dims())
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }

    pub fn layers(&self) -> Vec<LayerSlot> {
        let mut offset = 0;
        self.dims()
            .windows(2)
            .map(|w| {
                let slot = LayerSlot {
                    weight_offset: offset,
                    rows: w[1],
                    cols: w[0],
                    bias_offset: offset + w[0] * w[1],
                };
                offset += w[0] * w[1] + w[1];
                slot
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSample {
    pub features: Vec<f64>,
    /// Offsets `(dlat_1, dlon_1, ..., dlat_h, dlon_h)` in degrees from the
    /// last observed position.
    pub label: Vec<f64>,
    /// Last observed `(lat, lon)`, used to rebuild absolute positions.
    pub origin: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetNet {
    spec: NetSpec,
    dims: Vec<usize>,
    params: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Mae,
    Mse,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mae" => Ok(LossKind::Mae),
            "mse" => Ok(LossKind::Mse),
            other => Err(Error::invalid(format!("unknown loss `{other}`"))),
        }
    }
}

pub fn build_net(spec: &NetSpec, a: &[f64]) -> Result<TargetNet> {
    check_len("network parameters", spec.total_params(), a.len())?;
    Ok(TargetNet {
        dims: spec.dims(),
        spec: spec.clone(),
        params: a.to_vec(),
    })
}

impl TargetNet {
    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn extract(&self) -> Vec<f64> {
        self.params.clone()
    }

    pub fn set_params(&mut self, a: &[f64]) -> Result<()> {
        check_len("network parameters", self.params.len(), a.len())?;
        self.params.copy_from_slice(a);
        Ok(())
    }

    fn trace(&self, features: &[f64]) -> Result<mlp::Trace> {
        check_len("feature width", self.spec.input_width, features.len())?;
        Ok(mlp::forward(&self.dims, &self.params, features, 1.0))
    }
}

pub fn forward(net: &TargetNet, features: &[f64]) -> Result<Vec<f64>> {
    Ok(net.trace(features)?.output().to_vec())
}

pub fn loss(pred: &[f64], label: &[f64], kind: LossKind) -> Result<f64> {
    check_len("label width", pred.len(), label.len())?;
    if pred.is_empty() {
        return Err(Error::invalid("empty prediction"));
    }
    let n = pred.len() as f64;
    let sum: f64 = pred
        .iter()
        .zip(label)
        .map(|(p, y)| match kind {
            LossKind::Mae => (p - y).abs(),
            LossKind::Mse => (p - y) * (p - y),
        })
        .sum();
    Ok(sum / n)
}

/// `dL/dpred`. The MAE subgradient at zero residual is 0.
pub fn loss_grad(pred: &[f64], label: &[f64], kind: LossKind) -> Result<Vec<f64>> {
    check_len("label width", pred.len(), label.len())?;
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(label)
        .map(|(p, y)| {
            let r = p - y;
            match kind {
                LossKind::Mae => {
                    if r > 0.0 {
                        1.0 / n
                    } else if r < 0.0 {
                        -1.0 / n
                    } else {
                        0.0
                    }
                }
                LossKind::Mse => 2.0 * r / n,
            }
        })
        .collect())
}

/// `dL/da` for one sample given the loss cotangent on the prediction.
pub fn backward(net: &TargetNet, features: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
    check_len("loss cotangent", net.spec.output_width, cotangent.len())?;
    let trace = net.trace(features)?;
    let mut grad = vec![0.0; net.params.len()];
    mlp::backward(&net.dims, &net.params, &trace, cotangent, 1.0, &mut grad);
    Ok(grad)
}

/// Mean loss and mean `dL/da` over a batch.
pub fn batch_gradient(
    net: &TargetNet,
    samples: &[&ForecastSample],
    kind: LossKind,
) -> Result<(f64, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let m = net.params.len();
    let blocks: Vec<(f64, Vec<f64>)> = samples
        .par_chunks(REDUCE_BLOCK)
        .map(|block| -> Result<(f64, Vec<f64>)> {
            let mut grad = vec![0.0; m];
            let mut total = 0.0;
            for s in block {
                let trace = net.trace(&s.features)?;
                let pred = trace.output();
                total += loss(pred, &s.label, kind)?;
                let cot = loss_grad(pred, &s.label, kind)?;
                mlp::backward(&net.dims, &net.params, &trace, &cot, 1.0, &mut grad);
            }
            Ok((total, grad))
        })
        .collect::<Result<_>>()?;
    let scale = 1.0 / samples.len() as f64;
    let mut grad = vec![0.0; m];
    let mut total = 0.0;
    for (l, g) in blocks {
        total += l;
        grad.iter_mut().zip(&g).for_each(|(acc, v)| *acc += v);
    }
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((total * scale, grad))
}

/// Mean loss over a set of samples.
pub fn mean_loss(net: &TargetNet, samples: &[ForecastSample], kind: LossKind) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|s| loss(&forward(net, &s.features)?, &s.label, kind))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / samples.len() as f64)
}
