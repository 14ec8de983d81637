//! Experiment engine behind the `ssh` command-line tool.

pub mod config;
pub mod experiments;
pub mod formats;
pub mod profile;
pub mod report;

pub use config::{stable_step_bound, Baseline, ExperimentConfig, Placement, PlantedConfig, Task};
pub use experiments::{
    build_planted, capture_is_monotone, mean_capture_by_delta, run_delta_sweep, run_experiment, run_gradcheck, run_planted_recovery,
    EpochRecord, GradcheckReport, RunResult, RunSummary, SweepRow,
};
pub use formats::{load_checkpoint, read_matrix, save_checkpoint, write_matrix, Checkpoint};
pub use profile::{profile_spectrum, SpectrumReport};
pub use report::{run_table1, write_csv, write_json, Table1Report};
