use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qtrain::audit::run_audit;
use qtrain::data::split_by_year;
use qtrain::train::report::{merge_reports, write_run};
use qtrain::train::sweep::write_sweep_csv;
use qtrain::train::{evaluate, sweep, train, Checkpoint, DataSource, Mode, SweepGrid, TrainConfig};
use qtrain::{Error, Result};

#[derive(Parser)]
#[command(name = "qtrain", version, about = "Quantum-Train / QPA trajectory forecaster trainer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write report, epochs, checkpoint and manifest.
    Train {
        #[arg(long)]
        mode: Option<Mode>,
        /// JSON config; defaults are used for anything missing.
        #[arg(long)]
        config: Option<PathBuf>,
        /// CSV path or `synth:SEED:COUNT[:STEPS]`.
        #[arg(long)]
        data: DataSource,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a checkpoint on the test years of a data source.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: DataSource,
        /// Use every storm instead of only the checkpoint's test years.
        #[arg(long)]
        all: bool,
        /// Write the JSON summary here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a hyper-parameter grid.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Merge report CSVs with the same header.
    Report {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

fn data_bytes(source: &DataSource) -> Result<Vec<u8>> {
    match source {
        DataSource::Csv(p) => std::fs::read(p).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        }),
        DataSource::Synth { .. } => Ok(Vec::new()),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            mode,
            config,
            data,
            out,
            seed,
            epochs,
        } => {
            let mut cfg = match (&config, mode) {
                (Some(path), _) => TrainConfig::from_json_file(path)?,
                (None, Some(m)) => TrainConfig::for_mode(m),
                (None, None) => {
                    return Err(Error::Config("either --mode or --config is required".into()))
                }
            };
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            cfg.fill_section();
            let tracks = data.load()?;
            let outcome = train(&cfg, &tracks)?;
            let files = write_run(
                &out,
                &outcome.report,
                &outcome.checkpoint,
                &data.to_string(),
                &data_bytes(&data)?,
            )?;
            let r = &outcome.report;
            println!(
                "mode={} trainable={} target={} test_mae={} mean_error_km={:.3}",
                r.config.mode, r.trainable_count, r.target_params, r.test_loss, r.test.mean_km
            );
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Command::Evaluate {
            checkpoint,
            data,
            all,
            out,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let mut tracks = data.load()?;
            if !all {
                let train_years = qtrain::data::YearRange::new(i32::MIN, ck.test_years.start - 1);
                tracks = split_by_year(&tracks, train_years, ck.test_years)?.test;
            }
            let summary = evaluate(&ck, &tracks)?;
            let text = serde_json::to_string_pretty(&summary)?;
            println!("{text}");
            if let Some(path) = out {
                write_json(&path, &summary)?;
            }
        }
        Command::Sweep { grid, out } => {
            let grid = SweepGrid::from_json_file(&grid)?;
            let runs = sweep(&grid)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            write_sweep_csv(&out.join("sweep.csv"), &runs)?;
            let reports: Vec<_> = runs.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
            write_json(&out.join("sweep.json"), &reports)?;
            let failed = runs.len() - reports.len();
            println!("runs={} ok={} failed={failed}", runs.len(), reports.len());
        }
        Command::Gradcheck { seed } => {
            let report = run_audit(seed)?;
            for c in &report.checks {
                println!(
                    "{} {}: max_rel_err={:.3e} tol={:.0e} entries={}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.max_rel_err,
                    c.tolerance,
                    c.entries
                );
            }
            if !report.passed() {
                return Err(Error::InvalidArgument("gradient audit failed".into()));
            }
        }
        Command::Report { out, inputs } => {
            let n = merge_reports(&inputs, &out)?;
            println!("merged {n} rows into {}", out.display());
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Parse { .. } | Error::Json(_) => 2,
        Error::Io { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error kind={} message={message:?}", e.kind());
            ExitCode::from(exit_code(&e))
        }
    }
}
