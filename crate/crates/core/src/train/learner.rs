//! Per-mode trainable state and the update step for each.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, trainable_count, MethodState, PruneMask, ShareCodebook};
use crate::error::{Error, Result};
use crate::forecaster::{batch_gradient, build_net, ForecastSample, LossKind, NetSpec, TargetNet};
use crate::lora::{effective_weight, LoraTarget, Matrix};
use crate::mapping::MappingModel;
use crate::paramgen::{backprop_pass, generate_pass, plan_chunks, ChunkPlan, HybridGrad};
use crate::quantum_sim::{CircuitSpec, GradMethod};

use super::optim::{Optimizer, OptimizerKind};

/// Uniform fan-in init for weights, zero biases.
pub fn init_net_params(spec: &NetSpec, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = vec![0.0; spec.total_params()];
    for slot in spec.layers() {
        let bound = 1.0 / (slot.cols as f64).sqrt();
        for w in &mut a[slot.weight_offset..slot.weight_offset + slot.rows * slot.cols] {
            *w = rng.gen_range(-bound..=bound);
        }
    }
    a
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Circuit angles plus mapping model, generating a parameter vector.
#[derive(Debug, Clone)]
pub struct QtState {
    pub circuit: CircuitSpec,
    pub mapping: MappingModel,
    pub plan: ChunkPlan,
    pub grad_method: GradMethod,
    opt_theta: Optimizer,
    opt_b: Optimizer,
}

#[derive(Debug, Clone, Copy)]
pub struct OptimSettings {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
}

impl QtState {
    pub fn new(
        plan: ChunkPlan,
        layers: usize,
        mapping_hidden: &[usize],
        output_gain: f64,
        grad_method: GradMethod,
        optim: OptimSettings,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = plan.num_qubits;
        let angles = (0..n * layers)
            .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
            .collect();
        let circuit = CircuitSpec::new(n, layers, angles)?;
        let mapping = MappingModel::new(n, plan.chunk_size, mapping_hidden, rng.gen())?
            .with_output_gain(output_gain);
        Ok(Self::from_parts(circuit, mapping, plan, grad_method, optim))
    }

    pub fn from_parts(
        circuit: CircuitSpec,
        mapping: MappingModel,
        plan: ChunkPlan,
        grad_method: GradMethod,
        optim: OptimSettings,
    ) -> Self {
        let opt_theta = Optimizer::new(optim.kind, optim.learning_rate, circuit.num_params());
        let opt_b = Optimizer::new(optim.kind, optim.learning_rate, mapping.num_params());
        Self {
            circuit,
            mapping,
            plan,
            grad_method,
            opt_theta,
            opt_b,
        }
    }

    pub fn trainable_params(&self) -> usize {
        self.circuit.num_params() + self.mapping.num_params()
    }

    pub fn generate(&self) -> Result<Vec<f64>> {
        Ok(generate_pass(&self.circuit, &self.mapping, &self.plan)?
            .params
            .into_vec())
    }

    /// Batch loss and `dL/d(theta, b)` with the generated vector as the
    /// full target-network parameter set.
    pub fn gradient(
        &self,
        net_spec: &NetSpec,
        batch: &[&ForecastSample],
        loss: LossKind,
    ) -> Result<(f64, HybridGrad)> {
        let pass = generate_pass(&self.circuit, &self.mapping, &self.plan)?;
        let net = build_net(net_spec, pass.params.as_slice())?;
        let (value, grad_a) = batch_gradient(&net, batch, loss)?;
        let grad = backprop_pass(
            &self.circuit,
            &self.mapping,
            &self.plan,
            &pass,
            &grad_a,
            self.grad_method,
        )?;
        Ok((value, grad))
    }

    pub fn apply(&mut self, grad: &HybridGrad) -> Result<()> {
        self.opt_theta
            .step(self.circuit.params_mut(), &grad.grad_theta)?;
        self.opt_b.step(self.mapping.params_mut(), &grad.grad_b)
    }

    pub fn theta_norm(&self) -> f64 {
        norm(self.circuit.params())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StepContext {
    pub epoch: usize,
    pub batch: usize,
}

fn check_finite(loss: f64, ctx: StepContext, theta_norm: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss {
            epoch: ctx.epoch,
            batch: ctx.batch,
            theta_norm,
        })
    }
}

/// One QT update: generate -> forward -> loss -> backward -> splice ->
/// optimiser. Returns the loss before the update.
pub fn hybrid_step(
    state: &mut QtState,
    net_spec: &NetSpec,
    batch: &[&ForecastSample],
    loss: LossKind,
    ctx: StepContext,
) -> Result<f64> {
    let (value, grad) = state.gradient(net_spec, batch, loss)?;
    check_finite(value, ctx, state.theta_norm())?;
    state.apply(&grad)?;
    Ok(value)
}

/// LoRA placement inside the forecaster for QPA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraLayer {
    pub layer: usize,
    pub generated: bool,
    pub target: LoraTarget,
}

#[derive(Debug, Clone)]
pub struct QpaState {
    base: Vec<f64>,
    pub layers: Vec<LoraLayer>,
    pub qt: QtState,
    classical_opts: Vec<Optimizer>,
}

impl QpaState {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        net_spec: &NetSpec,
        base: Vec<f64>,
        rank: usize,
        scaling: f64,
        quantum_layers: usize,
        classical_lora: bool,
        qt_layers: usize,
        chunk_size: usize,
        mapping_hidden: &[usize],
        output_gain: f64,
        grad_method: GradMethod,
        optim: OptimSettings,
        seed: u64,
    ) -> Result<Self> {
        if base.len() != net_spec.total_params() {
            return Err(Error::ShapeMismatch {
                what: "QPA base parameters",
                expected: net_spec.total_params(),
                got: base.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slots = net_spec.layers();
        let first_quantum = slots.len() - quantum_layers;
        let mut layers = Vec::new();
        let mut classical_opts = Vec::new();
        let mut generated_len = 0;
        for (l, slot) in slots.iter().enumerate() {
            let generated = l >= first_quantum;
            if !generated && !classical_lora {
                continue;
            }
            let r = rank.min(slot.rows).min(slot.cols);
            let w0 = Matrix::from_vec(
                slot.rows,
                slot.cols,
                base[slot.weight_offset..slot.weight_offset + slot.rows * slot.cols].to_vec(),
            )?;
            let mut target = LoraTarget::zeros(w0, r, scaling)?;
            if generated {
                generated_len += target.num_factor_params();
            } else {
                // classical LoRA convention: A random, B zero
                let bound = 1.0 / (slot.cols as f64).sqrt();
                for v in &mut target.a.data {
                    *v = rng.gen_range(-bound..=bound);
                }
                classical_opts.push(Optimizer::new(
                    optim.kind,
                    optim.learning_rate,
                    target.num_factor_params(),
                ));
            }
            layers.push(LoraLayer {
                layer: l,
                generated,
                target,
            });
        }
        let plan = plan_chunks(generated_len, chunk_size)?;
        let qt = QtState::new(
            plan,
            qt_layers,
            mapping_hidden,
            output_gain,
            grad_method,
            optim,
            rng.gen(),
        )?;
        let mut state = Self {
            base,
            layers,
            qt,
            classical_opts,
        };
        state.refresh_generated(&state.qt.generate()?)?;
        Ok(state)
    }

    fn refresh_generated(&mut self, generated: &[f64]) -> Result<()> {
        let mut offset = 0;
        for l in self.layers.iter_mut().filter(|l| l.generated) {
            let len = l.target.num_factor_params();
            l.target.set_factors(&generated[offset..offset + len])?;
            offset += len;
        }
        Ok(())
    }

    fn assemble(&self, spec: &NetSpec) -> Vec<f64> {
        let slots = spec.layers();
        let mut a = self.base.clone();
        for l in &self.layers {
            let slot = slots[l.layer];
            let w = effective_weight(&l.target);
            a[slot.weight_offset..slot.weight_offset + slot.rows * slot.cols]
                .copy_from_slice(&w.data);
        }
        a
    }

    pub fn classical_params(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| !l.generated)
            .map(|l| l.target.num_factor_params())
            .sum()
    }

    fn step(
        &mut self,
        spec: &NetSpec,
        batch: &[&ForecastSample],
        loss: LossKind,
        ctx: StepContext,
    ) -> Result<f64> {
        let pass = generate_pass(&self.qt.circuit, &self.qt.mapping, &self.qt.plan)?;
        self.refresh_generated(pass.params.as_slice())?;
        let net = build_net(spec, &self.assemble(spec))?;
        let (value, grad_a) = batch_gradient(&net, batch, loss)?;
        check_finite(value, ctx, self.qt.theta_norm())?;

        let slots = spec.layers();
        let mut grad_generated = Vec::with_capacity(self.qt.plan.m);
        let mut classical = 0;
        for l in self.layers.iter_mut() {
            let slot = slots[l.layer];
            let gw = &grad_a[slot.weight_offset..slot.weight_offset + slot.rows * slot.cols];
            let gf = l.target.factor_grad(gw)?;
            if l.generated {
                grad_generated.extend(gf);
            } else {
                let mut factors = l.target.factor_vector();
                self.classical_opts[classical].step(&mut factors, &gf)?;
                l.target.set_factors(&factors)?;
                classical += 1;
            }
        }
        let grad = backprop_pass(
            &self.qt.circuit,
            &self.qt.mapping,
            &self.qt.plan,
            &pass,
            &grad_generated,
            self.qt.grad_method,
        )?;
        self.qt.apply(&grad)?;
        Ok(value)
    }
}

#[derive(Debug, Clone)]
pub struct DirectState {
    pub params: Vec<f64>,
    opt: Optimizer,
}

impl DirectState {
    pub fn new(params: Vec<f64>, optim: OptimSettings) -> Self {
        let opt = Optimizer::new(optim.kind, optim.learning_rate, params.len());
        Self { params, opt }
    }
}

#[derive(Debug, Clone)]
pub struct PrunedState {
    pub params: Vec<f64>,
    pub mask: PruneMask,
    opt: Optimizer,
}

impl PrunedState {
    /// One-shot magnitude prune of `params`.
    pub fn new(mut params: Vec<f64>, sparsity: f64, optim: OptimSettings) -> Result<Self> {
        let mask = baselines::prune_magnitude(&params, sparsity)?;
        mask.apply(&mut params);
        let opt = Optimizer::new(optim.kind, optim.learning_rate, params.len());
        Ok(Self { params, mask, opt })
    }
}

#[derive(Debug, Clone)]
pub struct SharedState {
    pub book: ShareCodebook,
    opt: Optimizer,
}

impl SharedState {
    pub fn new(params: &[f64], clusters: usize, seed: u64, optim: OptimSettings) -> Result<Self> {
        let book = baselines::weight_share(params, clusters, seed)?;
        let opt = Optimizer::new(optim.kind, optim.learning_rate, clusters);
        Ok(Self { book, opt })
    }
}

#[derive(Debug, Clone)]
pub enum Learner {
    Full(DirectState),
    Prune(PrunedState),
    Share(SharedState),
    Qt(QtState),
    Qpa(QpaState),
}

impl Learner {
    /// Current target-network parameters.
    pub fn net_params(&self, spec: &NetSpec) -> Result<Vec<f64>> {
        Ok(match self {
            Learner::Full(s) => s.params.clone(),
            Learner::Prune(s) => s.params.clone(),
            Learner::Share(s) => s.book.reconstruct(),
            Learner::Qt(s) => s.generate()?,
            Learner::Qpa(s) => s.assemble(spec),
        })
    }

    pub fn net(&self, spec: &NetSpec) -> Result<TargetNet> {
        build_net(spec, &self.net_params(spec)?)
    }

    pub fn trainable_count(&self, spec: &NetSpec) -> usize {
        let state = match self {
            Learner::Full(_) => MethodState::Full {
                m: spec.total_params(),
            },
            Learner::Prune(s) => MethodState::Pruned(&s.mask),
            Learner::Share(s) => MethodState::Shared(&s.book),
            Learner::Qt(s) => MethodState::Hybrid {
                circuit_params: s.circuit.num_params(),
                mapping_params: s.mapping.num_params(),
                classical_params: 0,
            },
            Learner::Qpa(s) => MethodState::Hybrid {
                circuit_params: s.qt.circuit.num_params(),
                mapping_params: s.qt.mapping.num_params(),
                classical_params: s.classical_params(),
            },
        };
        trainable_count(state)
    }

    pub fn num_qubits(&self) -> Option<usize> {
        match self {
            Learner::Qt(s) => Some(s.plan.num_qubits),
            Learner::Qpa(s) => Some(s.qt.plan.num_qubits),
            _ => None,
        }
    }

    /// One optimiser step on `batch`; returns the pre-update batch loss.
    pub fn step(
        &mut self,
        spec: &NetSpec,
        batch: &[&ForecastSample],
        loss: LossKind,
        ctx: StepContext,
    ) -> Result<f64> {
        match self {
            Learner::Qt(s) => hybrid_step(s, spec, batch, loss, ctx),
            Learner::Qpa(s) => s.step(spec, batch, loss, ctx),
            Learner::Full(s) => {
                let net = build_net(spec, &s.params)?;
                let (value, grad) = batch_gradient(&net, batch, loss)?;
                check_finite(value, ctx, norm(&s.params))?;
                s.opt.step(&mut s.params, &grad)?;
                Ok(value)
            }
            Learner::Prune(s) => {
                let net = build_net(spec, &s.params)?;
                let (value, mut grad) = batch_gradient(&net, batch, loss)?;
                check_finite(value, ctx, norm(&s.params))?;
                s.mask.apply(&mut grad);
                s.opt.step(&mut s.params, &grad)?;
                // Adam moments of pruned entries stay zero, but enforce anyway.
                s.mask.apply(&mut s.params);
                Ok(value)
            }
            Learner::Share(s) => {
                let net = build_net(spec, &s.book.reconstruct())?;
                let (value, grad) = batch_gradient(&net, batch, loss)?;
                check_finite(value, ctx, norm(&s.book.centroids))?;
                let g = s.book.centroid_grad(&grad)?;
                s.opt.step(&mut s.book.centroids, &g)?;
                Ok(value)
            }
        }
    }
}
