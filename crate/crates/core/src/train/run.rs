//! The training loop, evaluation and checkpoints.

use std::path::Path;
use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{PruneMask, ShareCodebook};
use crate::data::{
    great_circle, make_windows, split_by_year, wrap_lon, GeoPoint, Track, YearRange,
};
use crate::error::{Error, Result};
use crate::forecaster::{build_net, forward, mean_loss, ForecastSample, NetSpec, TargetNet};
use crate::mapping::MappingModel;
use crate::paramgen::{plan_chunks, ChunkPlan};
use crate::quantum_sim::{CircuitSpec, GradMethod};

use super::config::{Mode, TrainConfig};
use super::learner::{
    init_net_params, DirectState, Learner, LoraLayer, OptimSettings, PrunedState, QpaState,
    QtState, SharedState, StepContext,
};

pub const CHECKPOINT_FORMAT: &str = "qtrain-checkpoint v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// `pretrain` for the dense phase before pruning/sharing, else `train`.
    pub phase: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub samples: usize,
    /// Mean great-circle error over every sample and horizon step, km.
    pub mean_km: f64,
    pub median_km: f64,
    pub per_horizon_km: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: TrainConfig,
    pub target_params: usize,
    pub trainable_count: usize,
    pub num_qubits: Option<usize>,
    pub train_samples: usize,
    pub val_samples: usize,
    pub epochs: Vec<EpochRecord>,
    /// Loss over the whole training set before the first update.
    pub initial_train_loss: f64,
    /// Loss over the whole training set after the last update.
    pub final_train_loss: f64,
    pub final_val_loss: f64,
    pub test_loss: f64,
    pub test: EvalSummary,
    pub wall_clock_s: f64,
}

/// Circuit and mapping state of a QT / QPA run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridSnapshot {
    pub circuit: CircuitSpec,
    pub mapping: MappingModel,
    pub plan: ChunkPlan,
    pub grad_method: GradMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub mode: Mode,
    pub net_spec: NetSpec,
    pub window: usize,
    pub horizon: usize,
    pub earth_radius_km: f64,
    pub test_years: YearRange,
    /// Final target-network parameters.
    pub params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hybrid: Option<HybridSnapshot>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prune_mask: Option<PruneMask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codebook: Option<ShareCodebook>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lora: Option<Vec<LoraLayer>>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        ck.check()?;
        Ok(ck)
    }

    fn check(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::invalid(format!(
                "unsupported checkpoint format `{}`",
                self.format
            )));
        }
        let spec = NetSpec::new(
            self.net_spec.input_width,
            self.net_spec.hidden_dims.clone(),
            self.net_spec.output_width,
        )?;
        build_net(&spec, &self.params)?;
        if let Some(h) = &self.hybrid {
            CircuitSpec::new(
                h.circuit.num_qubits(),
                h.circuit.num_layers(),
                h.circuit.params().to_vec(),
            )?;
            MappingModel::from_parts(
                h.mapping.layer_dims().to_vec(),
                h.mapping.params().to_vec(),
                h.mapping.output_gain(),
            )?;
        }
        Ok(())
    }

    pub fn net(&self) -> Result<TargetNet> {
        build_net(&self.net_spec, &self.params)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: RunReport,
    pub checkpoint: Checkpoint,
}

/// Great-circle errors of `preds` (offsets in degrees, same layout as the
/// labels) against the sample labels.
pub fn evaluate_predictions(
    preds: &[Vec<f64>],
    samples: &[ForecastSample],
    radius_km: f64,
) -> Result<EvalSummary> {
    if preds.len() != samples.len() {
        return Err(Error::ShapeMismatch {
            what: "prediction count",
            expected: samples.len(),
            got: preds.len(),
        });
    }
    if samples.is_empty() {
        return Err(Error::invalid("no evaluation samples"));
    }
    let width = samples[0].label.len();
    if width == 0 || !width.is_multiple_of(2) {
        return Err(Error::invalid(format!("label width {width} is not 2 * horizon")));
    }
    let horizon = width / 2;
    let mut per: Vec<Vec<f64>> = vec![Vec::with_capacity(samples.len()); horizon];
    for (p, s) in preds.iter().zip(samples) {
        if p.len() != width || s.label.len() != width {
            return Err(Error::ShapeMismatch {
                what: "prediction width",
                expected: width,
                got: p.len().min(s.label.len()),
            });
        }
        let (lat0, lon0) = s.origin;
        for (j, errs) in per.iter_mut().enumerate() {
            let guess = GeoPoint::new(lat0 + p[2 * j], wrap_lon(lon0 + p[2 * j + 1]));
            let truth = GeoPoint::new(lat0 + s.label[2 * j], wrap_lon(lon0 + s.label[2 * j + 1]));
            errs.push(great_circle(guess, truth, radius_km));
        }
    }
    // sums over sorted values, so sample order cannot change the result
    let sorted_mean = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v.iter().sum::<f64>() / v.len() as f64
    };
    let per_horizon_km = per.iter_mut().map(sorted_mean).collect();
    let mut all: Vec<f64> = per.concat();
    let mean_km = sorted_mean(&mut all);
    let mid = all.len() / 2;
    let median_km = if all.len() % 2 == 1 {
        all[mid]
    } else {
        0.5 * (all[mid - 1] + all[mid])
    };
    Ok(EvalSummary {
        samples: samples.len(),
        mean_km,
        median_km,
        per_horizon_km,
    })
}

pub fn evaluate_net(net: &TargetNet, samples: &[ForecastSample], radius_km: f64) -> Result<EvalSummary> {
    let preds = samples
        .iter()
        .map(|s| forward(net, &s.features))
        .collect::<Result<Vec<_>>>()?;
    evaluate_predictions(&preds, samples, radius_km)
}

/// Evaluate a checkpoint on every window of `tracks`.
pub fn evaluate(checkpoint: &Checkpoint, tracks: &[Track]) -> Result<EvalSummary> {
    let samples = windows(tracks, checkpoint.window, checkpoint.horizon);
    evaluate_net(&checkpoint.net()?, &samples, checkpoint.earth_radius_km)
}

fn windows(tracks: &[Track], window: usize, horizon: usize) -> Vec<ForecastSample> {
    tracks
        .iter()
        .flat_map(|t| make_windows(t, window, horizon))
        .collect()
}

struct Epochs<'a> {
    config: &'a TrainConfig,
    spec: &'a NetSpec,
    train: &'a [ForecastSample],
    val: &'a [ForecastSample],
    rng: ChaCha8Rng,
    records: Vec<EpochRecord>,
    initial: Option<f64>,
}

impl Epochs<'_> {
    fn run(&mut self, learner: &mut Learner, epochs: usize, phase: &str) -> Result<()> {
        if self.initial.is_none() {
            let net = learner.net(self.spec)?;
            self.initial = Some(mean_loss(&net, self.train, self.config.loss)?);
        }
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        for epoch in 0..epochs {
            order.shuffle(&mut self.rng);
            let mut total = 0.0;
            let mut count = 0;
            for (b, idx) in order.chunks(self.config.batch_size).enumerate() {
                let batch: Vec<&ForecastSample> = idx.iter().map(|&i| &self.train[i]).collect();
                let ctx = StepContext { epoch, batch: b };
                let l = learner.step(self.spec, &batch, self.config.loss, ctx)?;
                debug!("{phase} epoch {epoch} batch {b} loss {l:.6}");
                total += l * batch.len() as f64;
                count += batch.len();
            }
            let train_loss = total / count as f64;
            let val_loss = mean_loss(&learner.net(self.spec)?, self.val, self.config.loss)?;
            info!("{phase} epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");
            self.records.push(EpochRecord {
                phase: phase.to_string(),
                epoch,
                train_loss,
                val_loss,
            });
        }
        Ok(())
    }
}

fn first_time(t: &Track) -> chrono::NaiveDateTime {
    t.points[0].time
}

/// Train according to `config` on `tracks` (split by year inside), then
/// evaluate on the test years.
pub fn train(config: &TrainConfig, tracks: &[Track]) -> Result<TrainOutcome> {
    let started = Instant::now();
    let mut config = config.clone();
    config.fill_section();
    config.validate()?;
    let spec = config.net_spec()?;

    let split = split_by_year(tracks, config.train_years, config.test_years)?;
    let mut train_tracks = split.train;
    train_tracks.sort_by(|a, b| {
        first_time(a)
            .cmp(&first_time(b))
            .then_with(|| a.storm_id.cmp(&b.storm_id))
    });
    let n_val = (train_tracks.len() as f64 * config.val_fraction).floor() as usize;
    let val_tracks = train_tracks.split_off(train_tracks.len() - n_val);
    let train_set = windows(&train_tracks, config.window, config.horizon);
    let val_set = windows(&val_tracks, config.window, config.horizon);
    let test_set = windows(&split.test, config.window, config.horizon);
    if train_set.is_empty() {
        return Err(Error::invalid("no training windows in the training years"));
    }
    if test_set.is_empty() {
        return Err(Error::invalid("no test windows in the test years"));
    }
    info!(
        "{} train / {} val / {} test windows, {} target parameters",
        train_set.len(),
        val_set.len(),
        test_set.len(),
        spec.total_params()
    );

    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let net_seed: u64 = master.gen();
    let aux_seed: u64 = master.gen();
    let shuffle_seed: u64 = master.gen();
    let optim = OptimSettings {
        kind: config.optimizer,
        learning_rate: config.learning_rate,
    };
    let mut epochs = Epochs {
        config: &config,
        spec: &spec,
        train: &train_set,
        val: &val_set,
        rng: ChaCha8Rng::seed_from_u64(shuffle_seed),
        records: Vec::new(),
        initial: None,
    };

    let mut learner = match config.mode {
        Mode::Full => Learner::Full(DirectState::new(init_net_params(&spec, net_seed), optim)),
        Mode::Prune | Mode::Share => {
            let pre = match config.mode {
                Mode::Prune => config.prune.as_ref().and_then(|p| p.pretrain_epochs),
                _ => config.share.as_ref().and_then(|s| s.pretrain_epochs),
            }
            .unwrap_or(config.epochs);
            let mut dense = Learner::Full(DirectState::new(init_net_params(&spec, net_seed), optim));
            epochs.run(&mut dense, pre, "pretrain")?;
            let a = dense.net_params(&spec)?;
            if config.mode == Mode::Prune {
                let sparsity = config.prune.as_ref().map(|p| p.sparsity).unwrap_or_default();
                Learner::Prune(PrunedState::new(a, sparsity, optim)?)
            } else {
                let clusters = config.share.as_ref().map(|s| s.clusters).unwrap_or(1);
                Learner::Share(SharedState::new(&a, clusters, aux_seed, optim)?)
            }
        }
        Mode::Qt => {
            let q = config.qt.as_ref().expect("validated");
            let plan = plan_chunks(spec.total_params(), q.chunk_size)?;
            Learner::Qt(QtState::new(
                plan,
                q.layers,
                &q.mapping_hidden,
                q.output_gain,
                q.grad_method,
                optim,
                aux_seed,
            )?)
        }
        Mode::Qpa => {
            let q = config.qpa.as_ref().expect("validated");
            let base = match &q.base_checkpoint {
                Some(path) => {
                    let ck = Checkpoint::load(path)?;
                    if ck.net_spec != spec {
                        return Err(Error::Config(format!(
                            "base checkpoint {} has a different network shape",
                            path.display()
                        )));
                    }
                    ck.params
                }
                None => init_net_params(&spec, net_seed),
            };
            Learner::Qpa(QpaState::new(
                &spec,
                base,
                q.rank,
                q.scaling,
                q.quantum_layers,
                q.classical_lora,
                q.layers,
                q.chunk_size,
                &q.mapping_hidden,
                q.output_gain,
                q.grad_method,
                optim,
                aux_seed,
            )?)
        }
    };
    epochs.run(&mut learner, config.epochs, "train")?;
    let records = std::mem::take(&mut epochs.records);

    let net = learner.net(&spec)?;
    let final_train_loss = mean_loss(&net, &train_set, config.loss)?;
    let final_val_loss = mean_loss(&net, &val_set, config.loss)?;
    let test_loss = mean_loss(&net, &test_set, config.loss)?;
    let test = evaluate_net(&net, &test_set, config.earth_radius_km)?;
    info!(
        "{}: test loss {test_loss:.6}, mean error {:.2} km",
        config.mode, test.mean_km
    );

    let mut checkpoint = Checkpoint {
        format: CHECKPOINT_FORMAT.to_string(),
        mode: config.mode,
        net_spec: spec.clone(),
        window: config.window,
        horizon: config.horizon,
        earth_radius_km: config.earth_radius_km,
        test_years: config.test_years,
        params: net.extract(),
        hybrid: None,
        prune_mask: None,
        codebook: None,
        lora: None,
    };
    let snapshot = |s: &QtState| HybridSnapshot {
        circuit: s.circuit.clone(),
        mapping: s.mapping.clone(),
        plan: s.plan,
        grad_method: s.grad_method,
    };
    match &learner {
        Learner::Full(_) => {}
        Learner::Prune(s) => checkpoint.prune_mask = Some(s.mask.clone()),
        Learner::Share(s) => checkpoint.codebook = Some(s.book.clone()),
        Learner::Qt(s) => checkpoint.hybrid = Some(snapshot(s)),
        Learner::Qpa(s) => {
            checkpoint.hybrid = Some(snapshot(&s.qt));
            checkpoint.lora = Some(s.layers.clone());
        }
    }

    let report = RunReport {
        target_params: spec.total_params(),
        trainable_count: learner.trainable_count(&spec),
        num_qubits: learner.num_qubits(),
        train_samples: train_set.len(),
        val_samples: val_set.len(),
        epochs: records,
        initial_train_loss: epochs.initial.unwrap_or(f64::NAN),
        final_train_loss,
        final_val_loss,
        test_loss,
        test,
        wall_clock_s: started.elapsed().as_secs_f64(),
        config,
    };
    Ok(TrainOutcome { report, checkpoint })
}
