//! Exact statevector simulation of the layered RY/CNOT ansatz.
//!
//! One layer applies `RY(theta[l][q])` to every qubit `q`, then the CNOT
//! chain `CNOT(0,1), CNOT(1,2), ..., CNOT(N-2,N-1)` in that order. The
//! circuit starts from `|0...0>`. Basis index `i` is read with qubit 0 as
//! the most significant bit.
//!
//! RY and CNOT are real gates, so amplitudes stay on the real axis; they are
//! still stored as complex numbers so the state type is general.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Dense statevectors beyond this width are refused.
pub const MAX_QUBITS: usize = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitSpec {
    num_qubits: usize,
    num_layers: usize,
    /// Row-major `num_layers x num_qubits`.
    params: Vec<f64>,
}

impl CircuitSpec {
    pub fn new(num_qubits: usize, num_layers: usize, params: Vec<f64>) -> Result<Self> {
        if num_qubits < 1 {
            return Err(Error::invalid("circuit needs at least one qubit"));
        }
        if num_layers < 1 {
            return Err(Error::invalid("circuit needs at least one layer"));
        }
        if num_qubits > MAX_QUBITS {
            return Err(Error::TooManyQubits(num_qubits));
        }
        check_len("circuit angles", num_qubits * num_layers, params.len())?;
        if let Some(k) = params.iter().position(|t| !t.is_finite()) {
            return Err(Error::invalid(format!("angle {k} is not finite")));
        }
        Ok(Self {
            num_qubits,
            num_layers,
            params,
        })
    }

    /// All angles zero.
    pub fn zeros(num_qubits: usize, num_layers: usize) -> Result<Self> {
        Self::new(num_qubits, num_layers, vec![0.0; num_qubits * num_layers])
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn angle(&self, layer: usize, qubit: usize) -> f64 {
        self.params[layer * self.num_qubits + qubit]
    }

    /// Replace the angles, keeping the shape. Rejects non-finite values.
    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_len("circuit angles", self.params.len(), params.len())?;
        if let Some(k) = params.iter().position(|t| !t.is_finite()) {
            return Err(Error::invalid(format!("angle {k} is not finite")));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn dim(&self) -> usize {
        1usize << self.num_qubits
    }

    /// Gate list in application order.
    fn gates(&self) -> impl Iterator<Item = Gate> + '_ {
        let n = self.num_qubits;
        (0..self.num_layers).flat_map(move |l| {
            let rotations = (0..n).map(move |q| Gate::Ry {
                qubit: q,
                param: l * n + q,
            });
            let chain = (0..n.saturating_sub(1)).map(|q| Gate::Cnot {
                control: q,
                target: q + 1,
            });
            rotations.chain(chain)
        })
    }
}

#[derive(Debug, Clone, Copy)]
enum Gate {
    Ry { qubit: usize, param: usize },
    Cnot { control: usize, target: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Statevector {
    num_qubits: usize,
    amplitudes: Vec<Complex64>,
}

impl Statevector {
    /// `|0...0>` on `num_qubits` qubits.
    pub fn zero_state(num_qubits: usize) -> Result<Self> {
        if num_qubits < 1 {
            return Err(Error::invalid("statevector needs at least one qubit"));
        }
        if num_qubits > MAX_QUBITS {
            return Err(Error::TooManyQubits(num_qubits));
        }
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << num_qubits];
        amplitudes[0] = Complex64::new(1.0, 0.0);
        Ok(Self {
            num_qubits,
            amplitudes,
        })
    }

    /// Wrap raw amplitudes. The length must be a power of two and the norm 1
    /// within `1e-10`.
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        let len = amplitudes.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(Error::invalid(format!(
                "amplitude count {len} is not a power of two >= 2"
            )));
        }
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::invalid(format!("state norm {norm} is not 1")));
        }
        let num_qubits = len.trailing_zeros() as usize;
        if num_qubits > MAX_QUBITS {
            return Err(Error::TooManyQubits(num_qubits));
        }
        Ok(Self {
            num_qubits,
            amplitudes,
        })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
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

impl std::ops::Index<usize> for ProbVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// How to differentiate the measurement probabilities.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradMethod {
    /// Differentiate the simulation directly.
    #[default]
    ExactAdjoint,
    /// `(p(theta + pi/2) - p(theta - pi/2)) / 2` per angle, as on hardware.
    ParameterShift,
}

impl FromStr for GradMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact-adjoint" | "exact" | "adjoint" => Ok(GradMethod::ExactAdjoint),
            "parameter-shift" | "shift" => Ok(GradMethod::ParameterShift),
            other => Err(Error::invalid(format!("unknown gradient method `{other}`"))),
        }
    }
}

impl fmt::Display for GradMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GradMethod::ExactAdjoint => "exact-adjoint",
            GradMethod::ParameterShift => "parameter-shift",
        })
    }
}

/// Probability Jacobian `dp_i / dtheta_k`, row-major `2^N x (L*N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Jacobian {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }
}

#[inline]
fn bit_mask(num_qubits: usize, qubit: usize) -> usize {
    1 << (num_qubits - 1 - qubit)
}

fn apply_ry(amps: &mut [Complex64], num_qubits: usize, qubit: usize, theta: f64) {
    let (s, c) = (theta / 2.0).sin_cos();
    let mask = bit_mask(num_qubits, qubit);
    for i0 in 0..amps.len() {
        if i0 & mask != 0 {
            continue;
        }
        let i1 = i0 | mask;
        let (a0, a1) = (amps[i0], amps[i1]);
        amps[i0] = a0 * c - a1 * s;
        amps[i1] = a0 * s + a1 * c;
    }
}

/// `d RY(theta) / d theta` applied in place. Not unitary.
fn apply_ry_derivative(amps: &mut [Complex64], num_qubits: usize, qubit: usize, theta: f64) {
    let (s, c) = (theta / 2.0).sin_cos();
    let mask = bit_mask(num_qubits, qubit);
    for i0 in 0..amps.len() {
        if i0 & mask != 0 {
            continue;
        }
        let i1 = i0 | mask;
        let (a0, a1) = (amps[i0], amps[i1]);
        amps[i0] = (a0 * (-s) - a1 * c) * 0.5;
        amps[i1] = (a0 * c - a1 * s) * 0.5;
    }
}

fn apply_cnot(amps: &mut [Complex64], num_qubits: usize, control: usize, target: usize) {
    let cmask = bit_mask(num_qubits, control);
    let tmask = bit_mask(num_qubits, target);
    for i in 0..amps.len() {
        if i & cmask != 0 && i & tmask == 0 {
            amps.swap(i, i | tmask);
        }
    }
}

fn apply_gate(amps: &mut [Complex64], spec: &CircuitSpec, gate: Gate, params: &[f64]) {
    match gate {
        Gate::Ry { qubit, param } => apply_ry(amps, spec.num_qubits, qubit, params[param]),
        Gate::Cnot { control, target } => apply_cnot(amps, spec.num_qubits, control, target),
    }
}

fn apply_gate_inverse(amps: &mut [Complex64], spec: &CircuitSpec, gate: Gate, params: &[f64]) {
    match gate {
        Gate::Ry { qubit, param } => apply_ry(amps, spec.num_qubits, qubit, -params[param]),
        Gate::Cnot { control, target } => apply_cnot(amps, spec.num_qubits, control, target),
    }
}

fn run(spec: &CircuitSpec, params: &[f64]) -> Vec<Complex64> {
    let mut amps = vec![Complex64::new(0.0, 0.0); spec.dim()];
    amps[0] = Complex64::new(1.0, 0.0);
    for gate in spec.gates() {
        apply_gate(&mut amps, spec, gate, params);
    }
    amps
}

/// Prepare `|psi(theta)>` exactly.
pub fn apply_ansatz(spec: &CircuitSpec) -> Statevector {
    Statevector {
        num_qubits: spec.num_qubits,
        amplitudes: run(spec, &spec.params),
    }
}

pub fn probabilities(state: &Statevector) -> ProbVector {
    ProbVector(state.amplitudes.iter().map(|a| a.norm_sqr()).collect())
}

/// Shorthand for `probabilities(&apply_ansatz(spec))`.
pub fn circuit_probabilities(spec: &CircuitSpec) -> ProbVector {
    ProbVector(
        run(spec, &spec.params)
            .iter()
            .map(|a| a.norm_sqr())
            .collect(),
    )
}

/// Full probability Jacobian.
pub fn grad_probabilities(spec: &CircuitSpec, method: GradMethod) -> Jacobian {
    match method {
        GradMethod::ExactAdjoint => exact_jacobian(spec),
        GradMethod::ParameterShift => shift_jacobian(spec),
    }
}

/// Exact Jacobian by forward tangent propagation: at each rotation the
/// derivative gate spawns a tangent that is pushed through the rest of the
/// circuit, then `dp_i = 2 Re(conj(psi_i) dpsi_i)`.
fn exact_jacobian(spec: &CircuitSpec) -> Jacobian {
    let gates: Vec<Gate> = spec.gates().collect();
    let params = &spec.params;
    let final_state = run(spec, params);
    let (rows, cols) = (spec.dim(), spec.num_params());
    let mut data = vec![0.0; rows * cols];

    let mut amps = vec![Complex64::new(0.0, 0.0); rows];
    amps[0] = Complex64::new(1.0, 0.0);
    for (g, &gate) in gates.iter().enumerate() {
        if let Gate::Ry { qubit, param } = gate {
            let mut tangent = amps.clone();
            apply_ry_derivative(&mut tangent, spec.num_qubits, qubit, params[param]);
            for &later in &gates[g + 1..] {
                apply_gate(&mut tangent, spec, later, params);
            }
            for (i, (psi, dpsi)) in final_state.iter().zip(&tangent).enumerate() {
                data[i * cols + param] = 2.0 * (psi.conj() * dpsi).re;
            }
        }
        apply_gate(&mut amps, spec, gate, params);
    }
    Jacobian { rows, cols, data }
}

fn shift_jacobian(spec: &CircuitSpec) -> Jacobian {
    let (rows, cols) = (spec.dim(), spec.num_params());
    let columns: Vec<Vec<f64>> = (0..cols)
        .into_par_iter()
        .map(|k| shifted_difference(spec, k, |col| col.to_vec()))
        .collect();
    let mut data = vec![0.0; rows * cols];
    for (k, col) in columns.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            data[i * cols + k] = *v;
        }
    }
    Jacobian { rows, cols, data }
}

/// Evaluate the two shifted circuits for angle `k` and hand the probability
/// difference column to `f`.
fn shifted_difference<T>(spec: &CircuitSpec, k: usize, f: impl Fn(&[f64]) -> T) -> T {
    let mut shifted = spec.params.clone();
    shifted[k] = spec.params[k] + FRAC_PI_2;
    let plus = run(spec, &shifted);
    shifted[k] = spec.params[k] - FRAC_PI_2;
    let minus = run(spec, &shifted);
    let col: Vec<f64> = plus
        .iter()
        .zip(&minus)
        .map(|(p, m)| (p.norm_sqr() - m.norm_sqr()) / 2.0)
        .collect();
    f(&col)
}

/// Vector-Jacobian product `sum_i cotangent_i * dp_i/dtheta`.
///
/// `cotangent` may be shorter than `2^N`; missing entries are zero. The
/// exact path is a single adjoint sweep over the circuit.
pub fn vjp_probabilities(
    spec: &CircuitSpec,
    cotangent: &[f64],
    method: GradMethod,
) -> Result<Vec<f64>> {
    if cotangent.len() > spec.dim() {
        return Err(Error::ShapeMismatch {
            what: "probability cotangent",
            expected: spec.dim(),
            got: cotangent.len(),
        });
    }
    Ok(match method {
        GradMethod::ExactAdjoint => adjoint_vjp(spec, cotangent),
        GradMethod::ParameterShift => (0..spec.num_params())
            .into_par_iter()
            .map(|k| {
                shifted_difference(spec, k, |col| {
                    cotangent.iter().zip(col).map(|(g, d)| g * d).sum::<f64>()
                })
            })
            .collect(),
    })
}

fn adjoint_vjp(spec: &CircuitSpec, cotangent: &[f64]) -> Vec<f64> {
    let params = &spec.params;
    let gates: Vec<Gate> = spec.gates().collect();
    let mut psi = run(spec, params);
    // lambda = O psi with O = diag(cotangent)
    let mut lambda: Vec<Complex64> = psi
        .iter()
        .enumerate()
        .map(|(i, a)| a * cotangent.get(i).copied().unwrap_or(0.0))
        .collect();
    let mut grad = vec![0.0; spec.num_params()];
    let mut scratch = vec![Complex64::new(0.0, 0.0); psi.len()];
    for &gate in gates.iter().rev() {
        apply_gate_inverse(&mut psi, spec, gate, params);
        if let Gate::Ry { qubit, param } = gate {
            scratch.copy_from_slice(&psi);
            apply_ry_derivative(&mut scratch, spec.num_qubits, qubit, params[param]);
            let overlap: f64 = lambda
                .iter()
                .zip(&scratch)
                .map(|(l, d)| (l.conj() * d).re)
                .sum();
            grad[param] = 2.0 * overlap;
        }
        apply_gate_inverse(&mut lambda, spec, gate, params);
    }
    grad
}
