//! The mapping model: one MLP shared by every chunk, taking the `N` basis
//! bits (as raw 0.0/1.0) followed by the basis-state probability, and
//! emitting `n_mlp` generated parameters.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::mlp;

pub const DEFAULT_HIDDEN: [usize; 2] = [32, 32];

const FORMAT_HEADER: &str = "qtrain-mapping v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingModel {
    layer_dims: Vec<usize>,
    params: Vec<f64>,
    output_gain: f64,
}

/// Generated parameters for one chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkValues(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct MappingGrad {
    pub grad_b: Vec<f64>,
    pub grad_prob: f64,
}

/// Default `[N+1, 32, 32, n_mlp]` model, uniform fan-in init, zero biases.
pub fn init_mapping(num_qubits: usize, chunk_size: usize, seed: u64) -> Result<MappingModel> {
    MappingModel::new(num_qubits, chunk_size, &DEFAULT_HIDDEN, seed)
}

impl MappingModel {
    pub fn new(num_qubits: usize, chunk_size: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        if num_qubits < 1 || chunk_size < 1 || hidden.contains(&0) {
            return Err(Error::invalid(format!(
                "mapping dims must be positive (N={num_qubits}, n_mlp={chunk_size}, hidden={hidden:?})"
            )));
        }
        let mut layer_dims = Vec::with_capacity(hidden.len() + 2);
        layer_dims.push(num_qubits + 1);
        layer_dims.extend_from_slice(hidden);
        layer_dims.push(chunk_size);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(mlp::param_count(&layer_dims));
        for w in layer_dims.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            params.extend((0..w[0] * w[1]).map(|_| rng.gen_range(-bound..=bound)));
            params.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Ok(Self {
            layer_dims,
            params,
            output_gain: 1.0,
        })
    }

    /// Build from explicit dims and flat weights.
    pub fn from_parts(layer_dims: Vec<usize>, params: Vec<f64>, output_gain: f64) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::invalid(format!("bad mapping dims {layer_dims:?}")));
        }
        if layer_dims[0] < 2 {
            return Err(Error::invalid("mapping input must hold at least one bit plus the probability"));
        }
        check_len("mapping weights", mlp::param_count(&layer_dims), params.len())?;
        if !output_gain.is_finite() {
            return Err(Error::invalid("output gain must be finite"));
        }
        Ok(Self {
            layer_dims,
            params,
            output_gain,
        })
    }

    pub fn with_output_gain(mut self, gain: f64) -> Self {
        self.output_gain = gain;
        self
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn num_qubits(&self) -> usize {
        self.layer_dims[0] - 1
    }

    pub fn chunk_size(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn output_gain(&self) -> f64 {
        self.output_gain
    }

    fn input_vector(&self, bits: &[u8], prob: f64) -> Result<Vec<f64>> {
        check_len("basis bits", self.num_qubits(), bits.len())?;
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::invalid(format!("basis bit {b} is not 0 or 1")));
        }
        if !(0.0..=1.0).contains(&prob) {
            return Err(Error::invalid(format!("probability {prob} outside [0, 1]")));
        }
        let mut x: Vec<f64> = bits.iter().map(|&b| b as f64).collect();
        x.push(prob);
        Ok(x)
    }

    pub(crate) fn trace(&self, bits: &[u8], prob: f64) -> Result<mlp::Trace> {
        let x = self.input_vector(bits, prob)?;
        Ok(mlp::forward(&self.layer_dims, &self.params, &x, self.output_gain))
    }

    /// Backward through a stored trace; adds into `grad_b`, returns `dL/dprob`.
    pub(crate) fn accumulate_backward(
        &self,
        trace: &mlp::Trace,
        upstream: &[f64],
        grad_b: &mut [f64],
    ) -> f64 {
        let dx = mlp::backward(
            &self.layer_dims,
            &self.params,
            trace,
            upstream,
            self.output_gain,
            grad_b,
        );
        *dx.last().unwrap()
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{FORMAT_HEADER}")?;
        let dims: Vec<String> = self.layer_dims.iter().map(|d| d.to_string()).collect();
        writeln!(w, "layer_dims {}", dims.join(" "))?;
        writeln!(w, "output_gain {}", self.output_gain)?;
        for v in &self.params {
            writeln!(w, "{v}")?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead, origin: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut lines = r.lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, Ok(l))) => Ok((i + 1, l)),
                Some((i, Err(e))) => Err(parse_err(i + 1, e.to_string())),
                None => Err(parse_err(0, format!("missing {what}"))),
            }
        };
        let (ln, header) = next("header")?;
        if header.trim() != FORMAT_HEADER {
            return Err(parse_err(ln, format!("expected header `{FORMAT_HEADER}`")));
        }
        let (ln, dims_line) = next("layer_dims")?;
        let dims = dims_line
            .strip_prefix("layer_dims ")
            .ok_or_else(|| parse_err(ln, "expected `layer_dims ...`".into()))?
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(ln, e.to_string()))?;
        let (ln, gain_line) = next("output_gain")?;
        let gain = gain_line
            .strip_prefix("output_gain ")
            .ok_or_else(|| parse_err(ln, "expected `output_gain ...`".into()))?
            .trim()
            .parse::<f64>()
            .map_err(|e| parse_err(ln, e.to_string()))?;
        let mut params = Vec::with_capacity(mlp::param_count(&dims));
        while let Ok((ln, line)) = next("weights") {
            if line.trim().is_empty() {
                continue;
            }
            params.push(
                line.trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(ln, e.to_string()))?,
            );
        }
        Self::from_parts(dims, params, gain)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file), path)
    }
}

pub fn map_forward(model: &MappingModel, bits: &[u8], prob: f64) -> Result<ChunkValues> {
    Ok(ChunkValues(model.trace(bits, prob)?.output().to_vec()))
}

/// Gradients of one chunk. The bits are constants; only `b` and the
/// probability input receive gradient.
pub fn map_backward(
    model: &MappingModel,
    bits: &[u8],
    prob: f64,
    upstream: &[f64],
) -> Result<MappingGrad> {
    check_len("chunk cotangent", model.chunk_size(), upstream.len())?;
    let trace = model.trace(bits, prob)?;
    let mut grad_b = vec![0.0; model.num_params()];
    let grad_prob = model.accumulate_backward(&trace, upstream, &mut grad_b);
    Ok(MappingGrad { grad_b, grad_prob })
}
