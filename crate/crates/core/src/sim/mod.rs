//! Synthetic flights: reference trajectories, open- and closed-loop
//! experiments, RMSE metrics, and training-data collection.

mod dataset;
mod metrics;
mod run;
mod trajectory;

pub use dataset::{generate_dataset, Dataset, DatasetConfig};
pub use metrics::{metrics, rmse, Summary};
pub use run::{
    run_closed_loop, run_estimation, schedule, stream_seed, ControllerConfig, RunConfig, RunKind, RunLog, RunMeta,
    StepRecord, DIVERGENCE_DISTANCE,
};
pub use trajectory::{Trajectory, TrajectoryKind, TrajectorySpec, ARENA_MARGIN, MAX_TILT};
