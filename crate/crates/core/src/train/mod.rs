//! Training stages, checkpoints, metrics logs and reports.

mod checkpoint;
mod config;
mod eval;
mod log;
mod plot;
mod run;
mod state;

pub use checkpoint::{CheckpointFile, NamedArray};
pub use config::{DatasetKind, Mode, RunConfig};
pub use eval::{evaluate, pca_2d, predict_checkpoint, report_for, write_embedding, EvalReport};
pub use log::{parse_log, read_log, render_log, write_log, MetricsRow, COLUMNS};
pub use plot::{emit_plot, render_svg};
pub use run::{
    sweep_gamma, ClusterOutcome, Session, SweepRun, ABORT_CHECKPOINT, CLUSTER_CHECKPOINT,
    DEFAULT_GAMMAS, PRETRAIN_CHECKPOINT,
};
pub use state::{Optimizers, Stage, TrainState, UpdateCounts};
