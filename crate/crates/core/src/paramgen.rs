//! Batched parameter generation.
//!
//! `m` target parameters are split into `n_ch = ceil(m / n_mlp)` chunks.
//! Chunk `i` is produced by the mapping model from basis state `i` and its
//! probability, so the circuit needs `N = max(1, ceil(log2 n_ch))` qubits.
//! The surplus outputs of the last chunk are dropped. Probabilities are fed
//! raw, without renormalising over the retained states.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::mapping::MappingModel;
use crate::mlp::Trace;
use crate::quantum_sim::{circuit_probabilities, vjp_probabilities, CircuitSpec, GradMethod};

/// Chunks per rayon task. Fixed so the reduction order never depends on
/// the thread count.
const REDUCE_BLOCK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPlan {
    pub m: usize,
    pub chunk_size: usize,
    pub num_chunks: usize,
    pub num_qubits: usize,
    pub tail_len: usize,
}

/// `ceil(log2 x)` for `x >= 1`.
pub fn ceil_log2(x: usize) -> usize {
    debug_assert!(x >= 1);
    (usize::BITS - (x - 1).leading_zeros()) as usize
}

pub fn plan_chunks(m: usize, chunk_size: usize) -> Result<ChunkPlan> {
    if m < 1 || chunk_size < 1 {
        return Err(Error::invalid(format!(
            "chunk plan needs m >= 1 and n_mlp >= 1 (m={m}, n_mlp={chunk_size})"
        )));
    }
    let num_chunks = m.div_ceil(chunk_size);
    Ok(ChunkPlan {
        m,
        chunk_size,
        num_chunks,
        num_qubits: ceil_log2(num_chunks).max(1),
        tail_len: m - (num_chunks - 1) * chunk_size,
    })
}

impl ChunkPlan {
    /// Length of chunk `i` after truncation.
    pub fn chunk_len(&self, i: usize) -> usize {
        if i + 1 == self.num_chunks {
            self.tail_len
        } else {
            self.chunk_size
        }
    }
}

/// MSB-first binary expansion of `index` on `num_qubits` bits.
pub fn basis_encoding(index: usize, num_qubits: usize) -> Result<Vec<u8>> {
    if num_qubits == 0 || num_qubits >= usize::BITS as usize || index >= (1usize << num_qubits) {
        return Err(Error::invalid(format!(
            "basis index {index} out of range for {num_qubits} qubits"
        )));
    }
    Ok((0..num_qubits)
        .map(|q| ((index >> (num_qubits - 1 - q)) & 1) as u8)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("parameter {i} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridGrad {
    /// Same layout as the circuit angles.
    pub grad_theta: Vec<f64>,
    pub grad_b: Vec<f64>,
}

fn check_compat(spec: &CircuitSpec, model: &MappingModel, plan: &ChunkPlan) -> Result<()> {
    check_len("circuit qubits vs plan", plan.num_qubits, spec.num_qubits())?;
    check_len("mapping input width", plan.num_qubits + 1, model.layer_dims()[0])?;
    check_len("mapping output width", plan.chunk_size, model.chunk_size())?;
    Ok(())
}

/// One generation pass, keeping what the backward pass needs.
#[derive(Debug, Clone)]
pub struct Generation {
    pub params: ParamVector,
    /// The first `n_ch` probabilities.
    pub probs: Vec<f64>,
    traces: Vec<Trace>,
}

fn chunk_traces(model: &MappingModel, plan: &ChunkPlan, probs: &[f64]) -> Result<Vec<Trace>> {
    (0..plan.num_chunks)
        .into_par_iter()
        .map(|i| {
            let bits = basis_encoding(i, plan.num_qubits)?;
            // rounding can push a probability a hair past 1
            model.trace(&bits, probs[i].clamp(0.0, 1.0))
        })
        .collect()
}

/// Assemble `a` from given probabilities. Only `probs[..n_ch]` is read.
pub fn generate_from_probs(
    model: &MappingModel,
    plan: &ChunkPlan,
    probs: &[f64],
) -> Result<Generation> {
    check_len("mapping input width", plan.num_qubits + 1, model.layer_dims()[0])?;
    check_len("mapping output width", plan.chunk_size, model.chunk_size())?;
    if probs.len() < plan.num_chunks {
        return Err(Error::ShapeMismatch {
            what: "probabilities",
            expected: plan.num_chunks,
            got: probs.len(),
        });
    }
    let probs = probs[..plan.num_chunks].to_vec();
    let traces = chunk_traces(model, plan, &probs)?;
    let mut a = Vec::with_capacity(plan.m);
    for (i, t) in traces.iter().enumerate() {
        a.extend_from_slice(&t.output()[..plan.chunk_len(i)]);
    }
    Ok(Generation {
        params: ParamVector::new(a)?,
        probs,
        traces,
    })
}

pub fn generate_pass(
    spec: &CircuitSpec,
    model: &MappingModel,
    plan: &ChunkPlan,
) -> Result<Generation> {
    check_compat(spec, model, plan)?;
    let probs = circuit_probabilities(spec);
    generate_from_probs(model, plan, probs.as_slice())
}

pub fn generate_params(
    spec: &CircuitSpec,
    model: &MappingModel,
    plan: &ChunkPlan,
) -> Result<ParamVector> {
    Ok(generate_pass(spec, model, plan)?.params)
}

/// `dL/d(theta, b) = (da/d(theta, b))^T dL/da` from a stored pass.
pub fn backprop_pass(
    spec: &CircuitSpec,
    model: &MappingModel,
    plan: &ChunkPlan,
    pass: &Generation,
    grad_a: &[f64],
    method: GradMethod,
) -> Result<HybridGrad> {
    check_compat(spec, model, plan)?;
    check_len("parameter cotangent", plan.m, grad_a.len())?;
    check_len("stored generation", plan.num_chunks, pass.traces.len())?;

    let nb = model.num_params();
    let blocks: Vec<(Vec<f64>, Vec<f64>)> = pass
        .traces
        .par_chunks(REDUCE_BLOCK)
        .enumerate()
        .map(|(block, traces)| {
            let mut grad_b = vec![0.0; nb];
            let mut grad_p = Vec::with_capacity(traces.len());
            let mut upstream = vec![0.0; plan.chunk_size];
            for (j, trace) in traces.iter().enumerate() {
                let i = block * REDUCE_BLOCK + j;
                let len = plan.chunk_len(i);
                let start = i * plan.chunk_size;
                upstream[..len].copy_from_slice(&grad_a[start..start + len]);
                upstream[len..].iter_mut().for_each(|u| *u = 0.0);
                grad_p.push(model.accumulate_backward(trace, &upstream, &mut grad_b));
            }
            (grad_b, grad_p)
        })
        .collect();

    let mut grad_b = vec![0.0; nb];
    let mut grad_prob = Vec::with_capacity(plan.num_chunks);
    for (gb, gp) in blocks {
        grad_b.iter_mut().zip(&gb).for_each(|(acc, g)| *acc += g);
        grad_prob.extend(gp);
    }
    let grad_theta = vjp_probabilities(spec, &grad_prob, method)?;
    Ok(HybridGrad { grad_theta, grad_b })
}

pub fn backprop_to_hybrid(
    spec: &CircuitSpec,
    model: &MappingModel,
    plan: &ChunkPlan,
    grad_a: &[f64],
    method: GradMethod,
) -> Result<HybridGrad> {
    let pass = generate_pass(spec, model, plan)?;
    backprop_pass(spec, model, plan, &pass, grad_a, method)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::init_mapping;

    #[test]
    fn worked_qubit_counts() {
        assert_eq!(plan_chunks(1_000_000_000, 1024).unwrap().num_qubits, 20);
        assert_eq!(plan_chunks(1_000_000_000, 1).unwrap().num_qubits, 30);
    }

    #[test]
    fn single_chunk_gets_one_qubit() {
        let p = plan_chunks(8, 8).unwrap();
        assert_eq!((p.num_chunks, p.num_qubits, p.tail_len), (1, 1, 8));
    }

    #[test]
    fn plan_rejects_zero() {
        assert!(plan_chunks(0, 4).is_err());
        assert!(plan_chunks(4, 0).is_err());
    }

    #[test]
    fn ceil_log2_small_values() {
        let got: Vec<usize> = (1..=9).map(ceil_log2).collect();
        assert_eq!(got, vec![0, 1, 2, 2, 3, 3, 3, 3, 4]);
    }

    #[test]
    fn basis_bits() {
        assert_eq!(basis_encoding(0, 4).unwrap(), vec![0, 0, 0, 0]);
        assert_eq!(basis_encoding(5, 4).unwrap(), vec![0, 1, 0, 1]);
        assert_eq!(basis_encoding(15, 4).unwrap(), vec![1, 1, 1, 1]);
        assert!(basis_encoding(16, 4).is_err());
        assert!(basis_encoding(0, 0).is_err());
    }

    #[test]
    fn zero_mapping_generates_zeros() {
        let plan = plan_chunks(20, 4).unwrap();
        let spec = CircuitSpec::new(3, 1, vec![0.4, 1.0, -2.0]).unwrap();
        let m = init_mapping(3, 4, 1).unwrap();
        let n = m.num_params();
        let zero = MappingModel::from_parts(m.layer_dims().to_vec(), vec![0.0; n], 1.0).unwrap();
        let a = generate_params(&spec, &zero, &plan).unwrap();
        assert_eq!(a.as_slice(), &[0.0; 20]);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let plan = plan_chunks(20, 4).unwrap();
        let spec = CircuitSpec::zeros(2, 1).unwrap();
        let m = init_mapping(3, 4, 1).unwrap();
        assert!(generate_params(&spec, &m, &plan).is_err());
        let spec = CircuitSpec::zeros(3, 1).unwrap();
        let m = init_mapping(3, 5, 1).unwrap();
        assert!(generate_params(&spec, &m, &plan).is_err());
        let m = init_mapping(3, 4, 1).unwrap();
        assert!(backprop_to_hybrid(&spec, &m, &plan, &[0.0; 19], GradMethod::ExactAdjoint).is_err());
    }

    #[test]
    fn zero_cotangent_zero_gradients() {
        let plan = plan_chunks(10, 4).unwrap();
        let spec = CircuitSpec::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let m = init_mapping(2, 4, 3).unwrap();
        let g = backprop_to_hybrid(&spec, &m, &plan, &[0.0; 10], GradMethod::ExactAdjoint).unwrap();
        assert!(g.grad_theta.iter().all(|&v| v == 0.0));
        assert!(g.grad_b.iter().all(|&v| v == 0.0));
    }
}
