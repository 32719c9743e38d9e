//! Grid sweeps over the compression hyper-parameters.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Track;
use crate::error::{Error, Result};

use super::config::{DataSource, Mode, TrainConfig};
use super::report::{config_columns, report_row, write_csv, REPORT_COLUMNS};
use super::run::{train, RunReport};

fn yes() -> bool {
    true
}

/// Empty axes fall back to the value in `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub base: TrainConfig,
    /// `--data` style source, see [`DataSource`].
    pub data: String,
    #[serde(default)]
    pub modes: Vec<Mode>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub chunk_sizes: Vec<usize>,
    #[serde(default)]
    pub layers: Vec<usize>,
    #[serde(default)]
    pub sparsities: Vec<f64>,
    #[serde(default)]
    pub clusters: Vec<usize>,
    #[serde(default = "yes")]
    pub parallel: bool,
}

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub index: usize,
    pub config: TrainConfig,
    /// `(error kind, message)` on failure.
    pub outcome: std::result::Result<RunReport, (String, String)>,
}

fn or_base<T: Clone>(axis: &[T], base: T) -> Vec<T> {
    if axis.is_empty() {
        vec![base]
    } else {
        axis.to_vec()
    }
}

impl SweepGrid {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// All configurations, in mode, seed, then axis order.
    pub fn expand(&self) -> Vec<TrainConfig> {
        let mut out = Vec::new();
        for &mode in &or_base(&self.modes, self.base.mode) {
            for &seed in &or_base(&self.seeds, self.base.seed) {
                let mut cfg = self.base.clone();
                cfg.mode = mode;
                cfg.seed = seed;
                cfg.fill_section();
                match mode {
                    Mode::Full => out.push(cfg),
                    Mode::Qt | Mode::Qpa => {
                        let (c0, l0) = match mode {
                            Mode::Qt => {
                                let q = cfg.qt.as_ref().expect("filled");
                                (q.chunk_size, q.layers)
                            }
                            _ => {
                                let q = cfg.qpa.as_ref().expect("filled");
                                (q.chunk_size, q.layers)
                            }
                        };
                        for &c in &or_base(&self.chunk_sizes, c0) {
                            for &l in &or_base(&self.layers, l0) {
                                let mut run = cfg.clone();
                                if let Some(q) = run.qt.as_mut().filter(|_| mode == Mode::Qt) {
                                    q.chunk_size = c;
                                    q.layers = l;
                                }
                                if let Some(q) = run.qpa.as_mut().filter(|_| mode == Mode::Qpa) {
                                    q.chunk_size = c;
                                    q.layers = l;
                                }
                                out.push(run);
                            }
                        }
                    }
                    Mode::Prune => {
                        let s0 = cfg.prune.as_ref().expect("filled").sparsity;
                        for &s in &or_base(&self.sparsities, s0) {
                            let mut run = cfg.clone();
                            run.prune.as_mut().expect("filled").sparsity = s;
                            out.push(run);
                        }
                    }
                    Mode::Share => {
                        let k0 = cfg.share.as_ref().expect("filled").clusters;
                        for &k in &or_base(&self.clusters, k0) {
                            let mut run = cfg.clone();
                            run.share.as_mut().expect("filled").clusters = k;
                            out.push(run);
                        }
                    }
                }
            }
        }
        out
    }
}

/// Load the grid's data source and run every configuration.
pub fn sweep(grid: &SweepGrid) -> Result<Vec<SweepRun>> {
    let tracks = grid.data.parse::<DataSource>()?.load()?;
    Ok(sweep_with_tracks(grid, &tracks))
}

/// A failing configuration is recorded and the rest still run. Results are
/// in expansion order whether or not the runs were parallel.
pub fn sweep_with_tracks(grid: &SweepGrid, tracks: &[Track]) -> Vec<SweepRun> {
    let configs = grid.expand();
    let run = |(index, config): (usize, TrainConfig)| {
        let outcome = train(&config, tracks)
            .map(|o| o.report)
            .map_err(|e| (e.kind().to_string(), e.to_string()));
        if let Err((kind, msg)) = &outcome {
            log::warn!("sweep run {index} failed ({kind}): {msg}");
        }
        SweepRun {
            index,
            config,
            outcome,
        }
    };
    if grid.parallel {
        configs.into_par_iter().enumerate().map(run).collect()
    } else {
        configs.into_iter().enumerate().map(run).collect()
    }
}

pub fn sweep_header() -> Vec<&'static str> {
    let mut h = vec!["run", "status", "error"];
    h.extend(REPORT_COLUMNS);
    h
}

pub fn sweep_row(run: &SweepRun) -> Vec<String> {
    let mut row = vec![run.index.to_string()];
    match &run.outcome {
        Ok(report) => {
            row.push("ok".into());
            row.push(String::new());
            row.extend(report_row(report));
        }
        Err((kind, msg)) => {
            row.push("failed".into());
            row.push(format!("{kind}: {msg}"));
            row.extend(config_columns(&run.config));
            row.resize(3 + REPORT_COLUMNS.len(), String::new());
        }
    }
    row
}

pub fn write_sweep_csv(path: &Path, runs: &[SweepRun]) -> Result<()> {
    let rows: Vec<Vec<String>> = runs.iter().map(sweep_row).collect();
    write_csv(path, &sweep_header(), &rows)
}
