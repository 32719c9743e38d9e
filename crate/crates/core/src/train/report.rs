//! CSV / JSON run outputs. CSV files hold only deterministic quantities so
//! that reruns with the same seed are byte-identical; wall-clock time is
//! kept in the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::paramgen::plan_chunks;

use super::config::{Mode, TrainConfig};
use super::run::{Checkpoint, RunReport};

pub const REPORT_FILE: &str = "report.csv";
pub const EPOCHS_FILE: &str = "epochs.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const MANIFEST_FILE: &str = "manifest.json";

pub const REPORT_COLUMNS: [&str; 21] = [
    "mode",
    "seed",
    "epochs",
    "learning_rate",
    "chunk_size",
    "layers",
    "num_qubits",
    "rank",
    "sparsity",
    "clusters",
    "target_params",
    "trainable_count",
    "trainable_fraction",
    "final_train_loss",
    "final_val_loss",
    "test_loss",
    "mean_error_km",
    "median_error_km",
    "horizon_error_km",
    "train_samples",
    "test_samples",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// The hyper-parameter columns, available even when a run fails.
pub(crate) fn config_columns(cfg: &TrainConfig) -> [String; 10] {
    let (chunk, layers, rank) = match cfg.mode {
        Mode::Qt => {
            let q = cfg.qt.as_ref();
            (q.map(|q| q.chunk_size), q.map(|q| q.layers), None)
        }
        Mode::Qpa => {
            let q = cfg.qpa.as_ref();
            (q.map(|q| q.chunk_size), q.map(|q| q.layers), q.map(|q| q.rank))
        }
        _ => (None, None, None),
    };
    let qubits = match (cfg.mode, chunk, cfg.net_spec()) {
        (Mode::Qt, Some(c), Ok(spec)) => plan_chunks(spec.total_params(), c).ok().map(|p| p.num_qubits),
        _ => None,
    };
    let sparsity = (cfg.mode == Mode::Prune)
        .then(|| cfg.prune.as_ref().map(|p| p.sparsity))
        .flatten();
    let clusters = (cfg.mode == Mode::Share)
        .then(|| cfg.share.as_ref().map(|s| s.clusters))
        .flatten();
    [
        cfg.mode.to_string(),
        cfg.seed.to_string(),
        cfg.epochs.to_string(),
        cfg.learning_rate.to_string(),
        opt(chunk),
        opt(layers),
        opt(qubits),
        opt(rank),
        opt(sparsity),
        opt(clusters),
    ]
}

pub fn report_row(r: &RunReport) -> Vec<String> {
    let mut row: Vec<String> = config_columns(&r.config).into_iter().collect();
    row[6] = opt(r.num_qubits);
    let horizon: Vec<String> = r.test.per_horizon_km.iter().map(|v| v.to_string()).collect();
    row.extend([
        r.target_params.to_string(),
        r.trainable_count.to_string(),
        (r.trainable_count as f64 / r.target_params as f64).to_string(),
        r.final_train_loss.to_string(),
        r.final_val_loss.to_string(),
        r.test_loss.to_string(),
        r.test.mean_km.to_string(),
        r.test.median_km.to_string(),
        horizon.join(";"),
        r.train_samples.to_string(),
        r.test.samples.to_string(),
    ]);
    row
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("{other:?}"),
        },
    }
}

pub(crate) fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub data: String,
    /// SHA-256 over the canonical config JSON and the input data bytes.
    pub input_hash: String,
    pub wall_clock_s: f64,
    pub files: Vec<String>,
    pub config: TrainConfig,
}

/// Hex SHA-256 over `parts`, each prefixed by its length.
pub fn content_hash(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Write report.csv, epochs.csv, checkpoint.json and manifest.json into
/// `dir`, creating it if needed. Returns the written paths.
pub fn write_run(
    dir: &Path,
    report: &RunReport,
    checkpoint: &Checkpoint,
    data_desc: &str,
    data_bytes: &[u8],
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let report_path = dir.join(REPORT_FILE);
    write_csv(&report_path, &REPORT_COLUMNS, &[report_row(report)])?;

    let epochs_path = dir.join(EPOCHS_FILE);
    let rows: Vec<Vec<String>> = report
        .epochs
        .iter()
        .map(|e| {
            vec![
                e.phase.clone(),
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.val_loss.to_string(),
            ]
        })
        .collect();
    write_csv(&epochs_path, &["phase", "epoch", "train_loss", "val_loss"], &rows)?;

    let ck_path = dir.join(CHECKPOINT_FILE);
    checkpoint.save(&ck_path)?;

    let config_json = serde_json::to_vec(&report.config)?;
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        data: data_desc.to_string(),
        input_hash: content_hash(&[&config_json, data_desc.as_bytes(), data_bytes]),
        wall_clock_s: report.wall_clock_s,
        files: vec![
            REPORT_FILE.into(),
            EPOCHS_FILE.into(),
            CHECKPOINT_FILE.into(),
        ],
        config: report.config.clone(),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)
        .map_err(|e| Error::io(&manifest_path, e))?;
    Ok(vec![report_path, epochs_path, ck_path, manifest_path])
}

/// Concatenate CSV reports that share a header into `out`.
pub fn merge_reports(inputs: &[PathBuf], out: &Path) -> Result<usize> {
    if inputs.is_empty() {
        return Err(Error::invalid("no reports to merge"));
    }
    let mut header: Option<csv::StringRecord> = None;
    let mut rows = Vec::new();
    for path in inputs {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let h = r.headers().map_err(|e| csv_err(path, e))?.clone();
        match &header {
            None => header = Some(h),
            Some(first) if *first != h => {
                return Err(Error::Parse {
                    path: path.clone(),
                    line: 1,
                    message: "header differs from the first report".into(),
                })
            }
            _ => {}
        }
        for rec in r.records() {
            rows.push(rec.map_err(|e| csv_err(path, e))?);
        }
    }
    let header = header.expect("at least one input");
    let mut w = csv::Writer::from_path(out).map_err(|e| csv_err(out, e))?;
    w.write_record(&header).map_err(|e| csv_err(out, e))?;
    for rec in &rows {
        w.write_record(rec).map_err(|e| csv_err(out, e))?;
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    Ok(rows.len())
}
