use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{self, YearRange, EARTH_RADIUS_KM, FEATURES_PER_STEP};
use crate::error::{Error, Result};
use crate::forecaster::{LossKind, NetSpec};
use crate::mapping::DEFAULT_HIDDEN;
use crate::quantum_sim::GradMethod;

use super::optim::OptimizerKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Full,
    Qt,
    Qpa,
    Prune,
    Share,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "qt" => Ok(Mode::Qt),
            "qpa" => Ok(Mode::Qpa),
            "prune" => Ok(Mode::Prune),
            "share" => Ok(Mode::Share),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Full => "full",
            Mode::Qt => "qt",
            Mode::Qpa => "qpa",
            Mode::Prune => "prune",
            Mode::Share => "share",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QtConfig {
    pub chunk_size: usize,
    pub layers: usize,
    #[serde(default)]
    pub grad_method: GradMethod,
    #[serde(default = "one")]
    pub output_gain: f64,
    #[serde(default = "default_mapping_hidden")]
    pub mapping_hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QpaConfig {
    pub rank: usize,
    #[serde(default = "one")]
    pub scaling: f64,
    pub chunk_size: usize,
    pub layers: usize,
    /// How many of the last linear layers get generated factors.
    #[serde(default = "two")]
    pub quantum_layers: usize,
    /// Train plain LoRA factors on the remaining layers.
    #[serde(default = "yes")]
    pub classical_lora: bool,
    /// Frozen base weights; random init when absent.
    #[serde(default)]
    pub base_checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub grad_method: GradMethod,
    #[serde(default = "one")]
    pub output_gain: f64,
    #[serde(default = "default_mapping_hidden")]
    pub mapping_hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneConfig {
    pub sparsity: f64,
    /// Full-training epochs before the one-shot prune; defaults to `epochs`.
    #[serde(default)]
    pub pretrain_epochs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShareConfig {
    pub clusters: usize,
    #[serde(default)]
    pub pretrain_epochs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub loss: LossKind,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "one_usize")]
    pub horizon: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "default_radius")]
    pub earth_radius_km: f64,
    #[serde(default = "default_train_years")]
    pub train_years: YearRange,
    #[serde(default = "default_test_years")]
    pub test_years: YearRange,
    /// Fraction of the (chronologically last) training storms held out.
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default)]
    pub qt: Option<QtConfig>,
    #[serde(default)]
    pub qpa: Option<QpaConfig>,
    #[serde(default)]
    pub prune: Option<PruneConfig>,
    #[serde(default)]
    pub share: Option<ShareConfig>,
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn two() -> usize {
    2
}
fn yes() -> bool {
    true
}
fn default_lr() -> f64 {
    1e-3
}
fn default_epochs() -> usize {
    30
}
fn default_batch() -> usize {
    32
}
fn default_window() -> usize {
    4
}
fn default_hidden() -> Vec<usize> {
    vec![64, 32]
}
fn default_mapping_hidden() -> Vec<usize> {
    DEFAULT_HIDDEN.to_vec()
}
fn default_radius() -> f64 {
    EARTH_RADIUS_KM
}
fn default_train_years() -> YearRange {
    data::TRAIN_YEARS
}
fn default_test_years() -> YearRange {
    data::TEST_YEARS
}
fn default_val_fraction() -> f64 {
    0.1
}

impl TrainConfig {
    /// Defaults with the section for `mode` filled in.
    pub fn for_mode(mode: Mode) -> Self {
        let mut c = Self {
            mode,
            learning_rate: default_lr(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            seed: 0,
            optimizer: OptimizerKind::Adam,
            loss: LossKind::Mae,
            window: default_window(),
            horizon: 1,
            hidden_dims: default_hidden(),
            earth_radius_km: EARTH_RADIUS_KM,
            train_years: data::TRAIN_YEARS,
            test_years: data::TEST_YEARS,
            val_fraction: default_val_fraction(),
            qt: None,
            qpa: None,
            prune: None,
            share: None,
        };
        c.fill_section();
        c
    }

    /// Add the default section for the current mode if it is missing.
    pub fn fill_section(&mut self) {
        match self.mode {
            Mode::Qt if self.qt.is_none() => {
                self.qt = Some(QtConfig {
                    chunk_size: 8,
                    layers: 4,
                    grad_method: GradMethod::ExactAdjoint,
                    output_gain: 1.0,
                    mapping_hidden: default_mapping_hidden(),
                })
            }
            Mode::Qpa if self.qpa.is_none() => {
                self.qpa = Some(QpaConfig {
                    rank: 2,
                    scaling: 1.0,
                    chunk_size: 8,
                    layers: 4,
                    quantum_layers: 2,
                    classical_lora: true,
                    base_checkpoint: None,
                    grad_method: GradMethod::ExactAdjoint,
                    output_gain: 1.0,
                    mapping_hidden: default_mapping_hidden(),
                })
            }
            Mode::Prune if self.prune.is_none() => {
                self.prune = Some(PruneConfig {
                    sparsity: 0.5,
                    pretrain_epochs: None,
                })
            }
            Mode::Share if self.share.is_none() => {
                self.share = Some(ShareConfig {
                    clusters: 64,
                    pretrain_epochs: None,
                })
            }
            _ => {}
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn net_spec(&self) -> Result<NetSpec> {
        NetSpec::new(
            self.window * FEATURES_PER_STEP,
            self.hidden_dims.clone(),
            2 * self.horizon,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return bad(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if self.epochs < 1 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1".into());
        }
        if self.window < 1 || self.horizon < 1 {
            return bad("window and horizon must be >= 1".into());
        }
        if self.hidden_dims.contains(&0) {
            return bad("hidden_dims must be positive".into());
        }
        if self.earth_radius_km.is_nan() || self.earth_radius_km <= 0.0 {
            return bad("earth_radius_km must be > 0".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must be in [0, 1)".into());
        }
        match self.mode {
            Mode::Full => {}
            Mode::Qt => {
                let Some(q) = &self.qt else {
                    return bad("mode qt needs a `qt` section".into());
                };
                if q.chunk_size < 1 || q.layers < 1 || q.mapping_hidden.contains(&0) {
                    return bad("qt.chunk_size, qt.layers and qt.mapping_hidden must be positive".into());
                }
            }
            Mode::Qpa => {
                let Some(q) = &self.qpa else {
                    return bad("mode qpa needs a `qpa` section".into());
                };
                if q.rank < 1 || q.chunk_size < 1 || q.layers < 1 || q.mapping_hidden.contains(&0) {
                    return bad("qpa.rank, chunk_size, layers and mapping_hidden must be positive".into());
                }
                let layers = self.hidden_dims.len() + 1;
                if q.quantum_layers < 1 || q.quantum_layers > layers {
                    return bad(format!("qpa.quantum_layers must be in [1, {layers}]"));
                }
            }
            Mode::Prune => {
                let Some(p) = &self.prune else {
                    return bad("mode prune needs a `prune` section".into());
                };
                if !(0.0..1.0).contains(&p.sparsity) {
                    return bad(format!("prune.sparsity {} outside [0, 1)", p.sparsity));
                }
            }
            Mode::Share => {
                let Some(s) = &self.share else {
                    return bad("mode share needs a `share` section".into());
                };
                let m = self.net_spec()?.total_params();
                if s.clusters < 1 || s.clusters > m {
                    return bad(format!("share.clusters must be in [1, {m}]"));
                }
            }
        }
        Ok(())
    }
}

/// `--data` argument: a CSV path or `synth:SEED:COUNT[:STEPS]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DataSource {
    Csv(PathBuf),
    Synth { seed: u64, count: usize, steps: usize },
}

pub const DEFAULT_SYNTH_STEPS: usize = 24;

impl FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let Some(rest) = s.strip_prefix("synth:") else {
            return Ok(DataSource::Csv(PathBuf::from(s)));
        };
        let parts: Vec<&str> = rest.split(':').collect();
        let num = |t: &str| {
            t.parse::<u64>()
                .map_err(|e| Error::Config(format!("bad synthetic data spec `{s}`: {e}")))
        };
        match parts.as_slice() {
            [seed, count] => Ok(DataSource::Synth {
                seed: num(seed)?,
                count: num(count)? as usize,
                steps: DEFAULT_SYNTH_STEPS,
            }),
            [seed, count, steps] => Ok(DataSource::Synth {
                seed: num(seed)?,
                count: num(count)? as usize,
                steps: num(steps)? as usize,
            }),
            _ => Err(Error::Config(format!(
                "synthetic data spec must be `synth:SEED:COUNT[:STEPS]`, got `{s}`"
            ))),
        }
    }
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::Csv(p) => write!(f, "{}", p.display()),
            DataSource::Synth { seed, count, steps } => write!(f, "synth:{seed}:{count}:{steps}"),
        }
    }
}

impl DataSource {
    pub fn load(&self) -> Result<Vec<data::Track>> {
        match self {
            DataSource::Csv(p) => data::load_tracks(p),
            DataSource::Synth { seed, count, steps } => {
                if *count < 1 {
                    return Err(Error::Config("synthetic storm count must be >= 1".into()));
                }
                Ok(data::synth_tracks(*seed, *count, *steps))
            }
        }
    }
}
