mod common;

use proptest::prelude::*;
use rand::Rng;
use qtrain::forecaster::{self, build_net, ForecastSample, LossKind, NetSpec};
use qtrain::mapping::{map_backward, map_forward, MappingModel};
use qtrain::paramgen::{
    backprop_to_hybrid, basis_encoding, ceil_log2, generate_from_probs, generate_params,
    plan_chunks,
};
use qtrain::quantum_sim::{CircuitSpec, GradMethod};

use common::*;

#[test]
fn mapping_matches_layer_oracle() {
    let mut r = rng(3);
    for (n, chunk, hidden) in [(1, 1, vec![32, 32]), (3, 5, vec![4]), (4, 8, vec![32, 32])] {
        let model = MappingModel::new(n, chunk, &hidden, 17).unwrap();
        let dims = model.layer_dims().to_vec();
        // exercise non-zero biases too
        let params = uniform(&mut r, model.num_params(), -0.7, 0.7);
        let model = MappingModel::from_parts(dims.clone(), params.clone(), 1.3).unwrap();
        for i in 0..(1usize << n).min(8) {
            let bits = basis_encoding(i, n).unwrap();
            let p: f64 = r.gen_range(0.0..1.0);
            let mut x: Vec<f64> = bits.iter().map(|&b| b as f64).collect();
            x.push(p);
            let got = map_forward(&model, &bits, p).unwrap().0;
            let want = mlp_oracle(&dims, &params, &x, 1.3);
            assert!(max_rel(&got, &want, 1.0) < 1e-13);
        }
    }
}

#[test]
fn mapping_backward_matches_finite_differences() {
    let mut r = rng(8);
    let model = MappingModel::new(3, 6, &[7, 5], 2).unwrap();
    let dims = model.layer_dims().to_vec();
    let params = uniform(&mut r, model.num_params(), -0.9, 0.9);
    let model = MappingModel::from_parts(dims.clone(), params.clone(), 0.8).unwrap();
    let bits = [0u8, 1, 1];
    let p = 0.42;
    let up = uniform(&mut r, 6, -1.0, 1.0);
    let g = map_backward(&model, &bits, p, &up).unwrap();
    let scalar = |ps: &[f64], prob: f64| {
        let y = mlp_oracle(&dims, ps, &[0.0, 1.0, 1.0, prob], 0.8);
        y.iter().zip(&up).map(|(a, b)| a * b).sum::<f64>()
    };
    let fd_b = central_diff(&params, 1e-6, |ps| scalar(ps, p));
    assert!(max_rel(&g.grad_b, &fd_b, 1e-3) < 1e-6);
    let fd_p = central_diff(&[p], 1e-6, |q| scalar(&params, q[0]));
    assert!(max_rel(&[g.grad_prob], &fd_p, 1e-3) < 1e-6);
}

#[test]
fn generation_matches_composed_oracle() {
    let mut r = rng(21);
    for (m, chunk, layers) in [(23, 4, 2), (700, 8, 4), (10, 4, 2), (7, 7, 1), (100, 3, 3)] {
        let plan = plan_chunks(m, chunk).unwrap();
        let n = plan.num_qubits;
        let theta = uniform(&mut r, n * layers, 0.0, std::f64::consts::TAU);
        let circuit = CircuitSpec::new(n, layers, theta.clone()).unwrap();
        let model = MappingModel::new(n, chunk, &[32, 32], r.gen()).unwrap();
        let got = generate_params(&circuit, &model, &plan).unwrap();
        let want = generation_oracle(n, layers, &theta, model.layer_dims(), model.params(), 1.0, m);
        assert_eq!(got.len(), m);
        assert!(max_rel(got.as_slice(), &want, 1.0) < 1e-11, "m={m} chunk={chunk}");
    }
}

#[test]
fn end_to_end_gradient_matches_finite_differences() {
    let mut r = rng(77);
    let spec = NetSpec::new(4, vec![3], 2).unwrap();
    let m = spec.total_params();
    let plan = plan_chunks(m, 4).unwrap();
    let n = plan.num_qubits;
    let layers = 2;
    let theta = uniform(&mut r, n * layers, 0.0, std::f64::consts::TAU);
    let model = MappingModel::new(n, 4, &[6, 6], 4).unwrap();
    let dims = model.layer_dims().to_vec();
    let b = model.params().to_vec();
    let sample = ForecastSample {
        features: uniform(&mut r, 4, -1.0, 1.0),
        label: uniform(&mut r, 2, -1.0, 1.0),
        origin: (0.0, 0.0),
    };
    let net_dims = spec.dims();
    let loss = |theta: &[f64], b: &[f64]| {
        let a = generation_oracle(n, layers, theta, &dims, b, 1.0, m);
        let y = mlp_oracle(&net_dims, &a, &sample.features, 1.0);
        y.iter().zip(&sample.label).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / y.len() as f64
    };

    let circuit = CircuitSpec::new(n, layers, theta.clone()).unwrap();
    let a = generate_params(&circuit, &model, &plan).unwrap();
    let net = build_net(&spec, a.as_slice()).unwrap();
    let (_, grad_a) = forecaster::batch_gradient(&net, &[&sample], LossKind::Mse).unwrap();
    for method in [GradMethod::ExactAdjoint, GradMethod::ParameterShift] {
        let hg = backprop_to_hybrid(&circuit, &model, &plan, &grad_a, method).unwrap();
        let fd_t = central_diff(&theta, 1e-6, |t| loss(t, &b));
        assert!(max_rel(&hg.grad_theta, &fd_t, 1e-3) < 1e-5);
        let fd_b = central_diff(&b, 1e-6, |bb| loss(&theta, bb));
        assert!(max_rel(&hg.grad_b, &fd_b, 1e-3) < 1e-5);
    }
}

#[test]
fn probabilities_beyond_chunk_count_are_ignored() {
    let plan = plan_chunks(10, 4).unwrap();
    let model = MappingModel::new(plan.num_qubits, 4, &[8], 1).unwrap();
    let a = generate_from_probs(&model, &plan, &[0.1, 0.2, 0.3, 0.4]).unwrap();
    let b = generate_from_probs(&model, &plan, &[0.1, 0.2, 0.3, 0.9]).unwrap();
    assert_eq!(a.params, b.params);
    assert!(generate_from_probs(&model, &plan, &[0.1, 0.2]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn chunk_plan_covers_m(m in 1usize..2_000_000, chunk in 1usize..5000) {
        let p = plan_chunks(m, chunk).unwrap();
        prop_assert!(p.num_chunks * chunk >= m);
        prop_assert!((p.num_chunks - 1) * chunk < m);
        prop_assert!(1usize << p.num_qubits >= p.num_chunks);
        prop_assert!(p.num_qubits == 1 || 1usize << (p.num_qubits - 1) < p.num_chunks);
        prop_assert!(p.tail_len >= 1 && p.tail_len <= chunk);
        let total: usize = (0..p.num_chunks).map(|i| p.chunk_len(i)).sum();
        prop_assert_eq!(total, m);
    }

    #[test]
    fn ceil_log2_bounds(x in 1usize..1_000_000_000) {
        let k = ceil_log2(x);
        prop_assert!(1usize << k >= x);
        prop_assert!(k == 0 || 1usize << (k - 1) < x);
    }

    #[test]
    fn basis_encoding_roundtrips(n in 1usize..=20, raw in any::<usize>()) {
        let i = raw % (1usize << n);
        let bits = basis_encoding(i, n).unwrap();
        prop_assert_eq!(bits.len(), n);
        let back = bits.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize);
        prop_assert_eq!(back, i);
    }

    #[test]
    fn qubits_nonincreasing_in_chunk_size(m in 1usize..10_000_000, c in 1usize..2000, d in 0usize..2000) {
        let small = plan_chunks(m, c).unwrap().num_qubits;
        let big = plan_chunks(m, c + d).unwrap().num_qubits;
        prop_assert!(big <= small);
    }
}

#[test]
fn basis_encoding_out_of_range() {
    assert!(basis_encoding(4, 2).is_err());
    assert_eq!(basis_encoding(6, 3).unwrap(), vec![1, 1, 0]);
}
