//! Finite-difference audit of every analytic gradient in the stack. Used by
//! `qtrain gradcheck` and the test suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::forecaster::{self, build_net, ForecastSample, LossKind, NetSpec};
use crate::mapping::{map_backward, map_forward, MappingModel};
use crate::paramgen::{backprop_to_hybrid, generate_params, plan_chunks};
use crate::quantum_sim::{circuit_probabilities, grad_probabilities, CircuitSpec, GradMethod};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Floor on the reference magnitude in relative errors.
pub const REL_FLOOR: f64 = 1e-3;

/// `|a - b| / max(|reference|, REL_FLOOR)`.
pub fn rel_err(value: f64, reference: f64) -> f64 {
    (value - reference).abs() / reference.abs().max(REL_FLOOR)
}

/// Central-difference gradient of a scalar function.
pub fn fd_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditCheck {
    pub name: String,
    pub entries: usize,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl AuditCheck {
    fn compare(name: &str, analytic: &[f64], reference: &[f64], tolerance: f64) -> Self {
        let mut max_abs: f64 = 0.0;
        let mut max_rel: f64 = 0.0;
        for (a, r) in analytic.iter().zip(reference) {
            max_abs = max_abs.max((a - r).abs());
            max_rel = max_rel.max(rel_err(*a, *r));
        }
        let passed = analytic.len() == reference.len() && max_rel <= tolerance;
        Self {
            name: name.to_string(),
            entries: analytic.len(),
            max_abs_err: max_abs,
            max_rel_err: max_rel,
            tolerance,
            passed,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub seed: u64,
    pub checks: Vec<AuditCheck>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Tolerance on finite-difference comparisons.
pub const FD_TOL: f64 = 1e-5;
/// Tolerance between the two analytic circuit gradients.
pub const EXACT_TOL: f64 = 1e-9;

fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Run all checks on small random instances drawn from `seed`.
pub fn run_audit(seed: u64) -> Result<AuditReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    // circuit Jacobian: adjoint vs shift vs finite differences
    let (n, l) = (3, 2);
    let theta = random_vec(&mut rng, n * l, 0.0, std::f64::consts::TAU);
    let spec = CircuitSpec::new(n, l, theta.clone())?;
    let exact = grad_probabilities(&spec, GradMethod::ExactAdjoint);
    let shift = grad_probabilities(&spec, GradMethod::ParameterShift);
    checks.push(AuditCheck::compare(
        "circuit jacobian: adjoint vs parameter shift",
        &exact.data,
        &shift.data,
        EXACT_TOL,
    ));
    let mut fd = vec![0.0; exact.data.len()];
    for i in 0..spec.dim() {
        let g = fd_gradient(&theta, FD_STEP, |t| {
            circuit_probabilities(&CircuitSpec::new(n, l, t.to_vec()).unwrap())[i]
        });
        fd[i * exact.cols..(i + 1) * exact.cols].copy_from_slice(&g);
    }
    checks.push(AuditCheck::compare(
        "circuit jacobian: adjoint vs finite differences",
        &exact.data,
        &fd,
        FD_TOL,
    ));

    // mapping MLP: weights and probability input
    let model = MappingModel::new(3, 4, &[6, 5], rng.gen())?;
    let bits = [1u8, 0, 1];
    let prob = 0.37;
    let upstream = random_vec(&mut rng, 4, -1.0, 1.0);
    let g = map_backward(&model, &bits, prob, &upstream)?;
    let dot = |out: &[f64]| out.iter().zip(&upstream).map(|(o, u)| o * u).sum::<f64>();
    let fd_b = fd_gradient(model.params(), FD_STEP, |b| {
        let m = MappingModel::from_parts(model.layer_dims().to_vec(), b.to_vec(), 1.0).unwrap();
        dot(&map_forward(&m, &bits, prob).unwrap().0)
    });
    checks.push(AuditCheck::compare("mapping weights", &g.grad_b, &fd_b, FD_TOL));
    let fd_p = fd_gradient(&[prob], FD_STEP, |p| dot(&map_forward(&model, &bits, p[0]).unwrap().0));
    checks.push(AuditCheck::compare("mapping probability input", &[g.grad_prob], &fd_p, FD_TOL));

    // forecaster
    let net_spec = NetSpec::new(4, vec![5, 3], 2)?;
    let a = random_vec(&mut rng, net_spec.total_params(), -0.8, 0.8);
    let sample = ForecastSample {
        features: random_vec(&mut rng, 4, -1.0, 1.0),
        label: random_vec(&mut rng, 2, -1.0, 1.0),
        origin: (0.0, 0.0),
    };
    let net = build_net(&net_spec, &a)?;
    let (_, grad_a) = forecaster::batch_gradient(&net, &[&sample], LossKind::Mse)?;
    let loss_at = |p: &[f64]| {
        let net = build_net(&net_spec, p).unwrap();
        let pred = forecaster::forward(&net, &sample.features).unwrap();
        forecaster::loss(&pred, &sample.label, LossKind::Mse).unwrap()
    };
    let fd_a = fd_gradient(&a, FD_STEP, loss_at);
    checks.push(AuditCheck::compare("forecaster parameters", &grad_a, &fd_a, FD_TOL));

    // end to end: loss(build_net(generate(theta, b)))
    let plan = plan_chunks(net_spec.total_params(), 7)?;
    let circuit = CircuitSpec::new(
        plan.num_qubits,
        2,
        random_vec(&mut rng, plan.num_qubits * 2, 0.0, std::f64::consts::TAU),
    )?;
    let mapping = MappingModel::new(plan.num_qubits, plan.chunk_size, &[8, 8], rng.gen())?;
    let gen = generate_params(&circuit, &mapping, &plan)?;
    let net = build_net(&net_spec, gen.as_slice())?;
    let (_, grad_gen) = forecaster::batch_gradient(&net, &[&sample], LossKind::Mse)?;
    for method in [GradMethod::ExactAdjoint, GradMethod::ParameterShift] {
        let hg = backprop_to_hybrid(&circuit, &mapping, &plan, &grad_gen, method)?;
        let fd_theta = fd_gradient(circuit.params(), FD_STEP, |t| {
            let c = CircuitSpec::new(circuit.num_qubits(), circuit.num_layers(), t.to_vec()).unwrap();
            loss_at(generate_params(&c, &mapping, &plan).unwrap().as_slice())
        });
        checks.push(AuditCheck::compare(
            &format!("end to end theta ({method})"),
            &hg.grad_theta,
            &fd_theta,
            FD_TOL,
        ));
        if method == GradMethod::ExactAdjoint {
            let fd_b = fd_gradient(mapping.params(), FD_STEP, |b| {
                let m = MappingModel::from_parts(mapping.layer_dims().to_vec(), b.to_vec(), 1.0)
                    .unwrap();
                loss_at(generate_params(&circuit, &m, &plan).unwrap().as_slice())
            });
            checks.push(AuditCheck::compare("end to end b", &hg.grad_b, &fd_b, FD_TOL));
        }
    }

    Ok(AuditReport { seed, checks })
}
