//! Training, evaluation, sweeps and run reports.

pub mod config;
pub mod learner;
pub mod optim;
pub mod report;
pub mod run;
pub mod sweep;

pub use config::{DataSource, Mode, TrainConfig};
pub use learner::{hybrid_step, init_net_params, Learner, QtState, StepContext};
pub use optim::{Optimizer, OptimizerKind};
pub use run::{evaluate, evaluate_net, evaluate_predictions, train, Checkpoint, EvalSummary, RunReport};
pub use sweep::{sweep, SweepGrid, SweepRun};
