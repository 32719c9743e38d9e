//! Acceptance checks; prints one PASS/FAIL line per criterion and exits non-zero on failure.

mod common;

use std::f64::consts::PI;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::Rng;

use qtrain::baselines::pruned_count;
use qtrain::data::{great_circle, make_windows, synth_tracks, GeoPoint};
use qtrain::forecaster::{self, build_net, ForecastSample, LossKind, NetSpec};
use qtrain::lora::plan_lora;
use qtrain::mapping::MappingModel;
use qtrain::paramgen::{backprop_to_hybrid, generate_params, plan_chunks};
use qtrain::quantum_sim::{apply_ansatz, circuit_probabilities, grad_probabilities, CircuitSpec, GradMethod};
use qtrain::train::learner::{init_net_params, OptimSettings, SharedState};
use qtrain::train::{train, Learner, Mode, OptimizerKind, StepContext, TrainConfig};

use common::*;

type Outcome = Result<String, String>;

fn check(cond: bool, what: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn criterion_1() -> Outcome {
    let big = 1_000_000_000;
    let batched = plan_chunks(big, 1024).map_err(|e| e.to_string())?.num_qubits;
    let plain = plan_chunks(big, 1).map_err(|e| e.to_string())?.num_qubits;
    let lora = plan_lora(2048, 1024, 4, 64).map_err(|e| e.to_string())?;
    let full = plan_chunks(2048 * 1024, 1).map_err(|e| e.to_string())?.num_qubits;
    check(batched == 20, format!("batched N = {batched}"))?;
    check(plain == 30, format!("unbatched N = {plain}"))?;
    check(lora.m == 12288 && lora.num_qubits == 8, format!("lora m = {}, N = {}", lora.m, lora.num_qubits))?;
    check(full == 21, format!("full-matrix N = {full}"))?;
    Ok(format!("N = {plain} -> {batched}; lora m = 12288, N = 8 vs {full}"))
}

fn criterion_2() -> Outcome {
    let mut r = rng(2002);
    let mut worst_amp = 0.0f64;
    let mut worst_sum = 0.0f64;
    for n in 1..=4 {
        for l in 1..=3 {
            for _ in 0..50 {
                let theta = uniform(&mut r, n * l, -2.0 * PI, 2.0 * PI);
                let spec = CircuitSpec::new(n, l, theta.clone()).map_err(|e| e.to_string())?;
                let state = apply_ansatz(&spec);
                let oracle = dense_state(n, l, &theta);
                for (a, o) in state.amplitudes().iter().zip(&oracle) {
                    worst_amp = worst_amp.max((a.re - o).abs()).max(a.im.abs());
                }
                let s: f64 = circuit_probabilities(&spec).as_slice().iter().sum();
                worst_sum = worst_sum.max((s - 1.0).abs());
            }
        }
    }
    check(worst_amp <= 1e-12, format!("amplitude error {worst_amp:.3e}"))?;
    check(worst_sum <= 1e-10, format!("probability sum error {worst_sum:.3e}"))?;
    Ok(format!("max amplitude error {worst_amp:.1e}, max |sum p - 1| {worst_sum:.1e}"))
}

const REL_FLOOR: f64 = 1e-3;

fn criterion_3() -> Outcome {
    let mut r = rng(3003);
    let (mut worst_methods, mut worst_fd) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = r.gen_range(1..=4);
        let l = r.gen_range(1..=3);
        let theta = uniform(&mut r, n * l, 0.0, 2.0 * PI);
        let spec = CircuitSpec::new(n, l, theta.clone()).map_err(|e| e.to_string())?;
        let exact = grad_probabilities(&spec, GradMethod::ExactAdjoint);
        let shift = grad_probabilities(&spec, GradMethod::ParameterShift);
        let abs = exact.data.iter().zip(&shift.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst_methods = worst_methods.max(abs);
        for i in 0..(1 << n) {
            let fd = central_diff(&theta, 1e-5, |t| dense_probs(n, l, t)[i]);
            worst_fd = worst_fd
                .max(max_rel(exact.row(i), &fd, REL_FLOOR))
                .max(max_rel(shift.row(i), &fd, REL_FLOOR));
        }
    }
    check(worst_methods <= 1e-8, format!("adjoint vs shift {worst_methods:.3e}"))?;
    check(worst_fd <= 1e-4, format!("circuit vs finite differences {worst_fd:.3e}"))?;

    let mut worst_e2e = 0.0f64;
    for _ in 0..20 {
        let input = r.gen_range(2..=6);
        let hidden = vec![r.gen_range(2..=5)];
        let out = r.gen_range(1..=3);
        let spec = NetSpec::new(input, hidden, out).map_err(|e| e.to_string())?;
        let m = spec.total_params();
        let chunk = r.gen_range(2..=8);
        let plan = plan_chunks(m, chunk).map_err(|e| e.to_string())?;
        let n = plan.num_qubits;
        let l = r.gen_range(1..=3);
        let theta = uniform(&mut r, n * l, 0.0, 2.0 * PI);
        let width = r.gen_range(3..=8);
        let model = MappingModel::new(n, chunk, &[width, width], r.gen()).map_err(|e| e.to_string())?;
        let model = MappingModel::from_parts(model.layer_dims().to_vec(), model.params().to_vec(), 0.5)
            .map_err(|e| e.to_string())?;
        let dims = model.layer_dims().to_vec();
        let b = model.params().to_vec();
        let sample = ForecastSample {
            features: uniform(&mut r, input, -1.0, 1.0),
            label: uniform(&mut r, out, -1.0, 1.0),
            origin: (0.0, 0.0),
        };
        let net_dims = spec.dims();
        let loss = |t: &[f64], bb: &[f64]| {
            let a = generation_oracle(n, l, t, &dims, bb, 0.5, m);
            let y = mlp_oracle(&net_dims, &a, &sample.features, 1.0);
            y.iter().zip(&sample.label).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / out as f64
        };
        let fd_t = central_diff(&theta, 1e-5, |t| loss(t, &b));
        let fd_b = central_diff(&b, 1e-5, |bb| loss(&theta, bb));

        let circuit = CircuitSpec::new(n, l, theta.clone()).map_err(|e| e.to_string())?;
        let a = generate_params(&circuit, &model, &plan).map_err(|e| e.to_string())?;
        let net = build_net(&spec, a.as_slice()).map_err(|e| e.to_string())?;
        let (_, grad_a) = forecaster::batch_gradient(&net, &[&sample], LossKind::Mse).map_err(|e| e.to_string())?;
        for method in [GradMethod::ExactAdjoint, GradMethod::ParameterShift] {
            let g = backprop_to_hybrid(&circuit, &model, &plan, &grad_a, method).map_err(|e| e.to_string())?;
            worst_e2e = worst_e2e
                .max(max_rel(&g.grad_theta, &fd_t, REL_FLOOR))
                .max(max_rel(&g.grad_b, &fd_b, REL_FLOOR));
        }
    }
    check(worst_e2e <= 1e-4, format!("end-to-end vs finite differences {worst_e2e:.3e}"))?;
    Ok(format!(
        "adjoint-shift {worst_methods:.1e}, circuit-fd {worst_fd:.1e}, end-to-end-fd {worst_e2e:.1e}"
    ))
}

fn criterion_4() -> Outcome {
    const R: f64 = 6371.0;
    let mut r = rng(4004);
    let mut worst = 0.0f64;
    let mut worst_identity = 0.0f64;
    for _ in 0..10_000 {
        let (lat1, lon1) = (r.gen_range(-90.0..=90.0), r.gen_range(-180.0..=180.0));
        let (lat2, lon2) = (r.gen_range(-90.0..=90.0), r.gen_range(-180.0..=180.0));
        let a = GeoPoint::new(lat1, lon1);
        let b = GeoPoint::new(lat2, lon2);
        let d = great_circle(a, b, R);
        check(d == great_circle(b, a, R), format!("asymmetric at {lat1},{lon1} {lat2},{lon2}"))?;
        check(great_circle(a, a, R) == 0.0, format!("nonzero self distance at {lat1},{lon1}"))?;
        let h = haversine(lat1, lon1, lat2, lon2, R);
        let tol = if d > PI * R - 50.0 { 1e-3 } else { 1e-6 };
        check((d - h).abs() <= tol, format!("haversine mismatch {} km", (d - h).abs()))?;
        worst = worst.max((d - h).abs());

        let anti_lon = if lon1 > 0.0 { lon1 - 180.0 } else { lon1 + 180.0 };
        let anti = great_circle(a, GeoPoint::new(-lat1, anti_lon), R);
        worst_identity = worst_identity.max((anti - PI * R).abs());
    }
    check(worst_identity <= 1e-9, format!("antipodal error {worst_identity:.3e} km"))?;
    Ok(format!("max haversine gap {worst:.1e} km, antipodal error {worst_identity:.1e} km"))
}

fn criterion_5() -> Outcome {
    let tracks = synth_tracks(42, 200, 24);
    let seeds = 0..5u64;
    let (mut full_km, mut qt_km) = (0.0, 0.0);
    let mut fraction = 0.0f64;
    for seed in seeds.clone() {
        let mut full = TrainConfig::for_mode(Mode::Full);
        full.seed = seed;
        let mut qt = TrainConfig::for_mode(Mode::Qt);
        qt.seed = seed;
        for c in [&full, &qt] {
            check(c.window == 4 && c.horizon == 1, "unexpected window/horizon")?;
        }
        let f = train(&full, &tracks).map_err(|e| e.to_string())?.report;
        let q = train(&qt, &tracks).map_err(|e| e.to_string())?.report;
        fraction = fraction.max(q.trainable_count as f64 / f.target_params as f64);
        full_km += f.test.mean_km;
        qt_km += q.test.mean_km;
    }
    let k = seeds.count() as f64;
    let (full_km, qt_km) = (full_km / k, qt_km / k);
    let ratio = qt_km / full_km;
    check(fraction <= 0.5, format!("trainable fraction {fraction:.3}"))?;
    check(ratio <= 2.0, format!("qt {qt_km:.2} km vs full {full_km:.2} km, ratio {ratio:.3}"))?;
    Ok(format!(
        "qt {qt_km:.2} km vs full {full_km:.2} km (ratio {ratio:.3}), trainable fraction {fraction:.3}"
    ))
}

fn criterion_6() -> Outcome {
    let tracks = synth_tracks(6, 60, 20);
    for s in [0.1, 0.5, 0.9] {
        let mut c = TrainConfig::for_mode(Mode::Prune);
        c.epochs = 5;
        c.prune.as_mut().unwrap().sparsity = s;
        let out = train(&c, &tracks).map_err(|e| e.to_string())?;
        let m = out.report.target_params;
        let expect = m - pruned_count(m, s);
        check(out.report.trainable_count == expect, format!("s={s}: {} trainable, want {expect}", out.report.trainable_count))?;
        let mask = out.checkpoint.prune_mask.as_ref().ok_or("missing mask")?;
        check(mask.kept() == expect, format!("s={s}: mask keeps {}", mask.kept()))?;
        let leaked = out.checkpoint.params.iter().zip(&mask.mask).filter(|(v, k)| !**k && **v != 0.0).count();
        check(leaked == 0, format!("s={s}: {leaked} pruned weights moved"))?;
    }

    let cfg = TrainConfig::for_mode(Mode::Share);
    let spec = cfg.net_spec().map_err(|e| e.to_string())?;
    let samples: Vec<ForecastSample> = tracks.iter().flat_map(|t| make_windows(t, cfg.window, cfg.horizon)).collect();
    let optim = OptimSettings { kind: OptimizerKind::Adam, learning_rate: 1e-3 };
    let mut steps = 0;
    for c in [2, 16, 64] {
        let a = init_net_params(&spec, c as u64);
        let state = SharedState::new(&a, c, 7, optim).map_err(|e| e.to_string())?;
        let mut learner = Learner::Share(state);
        for (b, batch) in samples.chunks(32).enumerate() {
            let refs: Vec<&ForecastSample> = batch.iter().collect();
            learner
                .step(&spec, &refs, LossKind::Mae, StepContext { epoch: 0, batch: b })
                .map_err(|e| e.to_string())?;
            let mut v = learner.net_params(&spec).map_err(|e| e.to_string())?;
            v.sort_by(f64::total_cmp);
            v.dedup();
            check(v.len() <= c, format!("c={c}: {} distinct values after step {b}", v.len()))?;
            steps += 1;
        }
    }
    Ok(format!("prune counts exact at s in {{0.1, 0.5, 0.9}}; codebook held over {steps} steps"))
}

fn criterion_7() -> Outcome {
    let sizes = [32, 64, 128, 256, 512, 768];
    let qubits = |m: usize| -> Result<Vec<usize>, String> {
        sizes
            .iter()
            .map(|&c| plan_chunks(m, c).map(|p| p.num_qubits).map_err(|e| e.to_string()))
            .collect()
    };
    for m in [100, 3746, 10_000, 123_457, 8_390_000] {
        let n = qubits(m)?;
        check(n.windows(2).all(|w| w[1] <= w[0]), format!("m={m}: {n:?} increases"))?;
    }
    let n = qubits(10_000)?;
    check(n == [9, 8, 7, 6, 5, 4], format!("m=10000: {n:?}"))?;
    Ok(format!("m=10000 gives {n:?}"))
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_qtrain"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    check(o.status.success(), format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr)))
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let grid = root.join("grid.json");
    std::fs::write(
        &grid,
        r#"{"base":{"mode":"full","epochs":3},"data":"synth:8:60:20","modes":["full","qt","prune","share","qpa"],"seeds":[0,1]}"#,
    )
    .map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for i in 0..2 {
        let run = root.join(format!("train{i}"));
        let sw = root.join(format!("sweep{i}"));
        let run_s = run.to_str().unwrap();
        run_cli(&["train", "--mode", "qt", "--epochs", "3", "--seed", "11", "--data", "synth:8:60:20", "--out", run_s])?;
        run_cli(&["sweep", "--grid", grid.to_str().unwrap(), "--out", sw.to_str().unwrap()])?;
        let read = |p: std::path::PathBuf| std::fs::read(&p).map_err(|e| format!("{}: {e}", p.display()));
        files.push([read(run.join("report.csv"))?, read(run.join("epochs.csv"))?, read(sw.join("sweep.csv"))?]);
    }
    check(files[0] == files[1], "report CSVs differ between reruns")?;
    Ok("train and sweep CSVs byte-identical across reruns".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 qubit-count formulas", criterion_1),
        ("2 circuit oracle equivalence", criterion_2),
        ("3 gradient audit", criterion_3),
        ("4 great-circle metric", criterion_4),
        ("5 compression benchmark", criterion_5),
        ("6 baseline harness", criterion_6),
        ("7 sweep monotonicity", criterion_7),
        ("8 reproducibility", criterion_8),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let t = Instant::now();
        let result = f();
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS criterion {name}: {detail} ({secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail} ({secs:.1}s)");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
