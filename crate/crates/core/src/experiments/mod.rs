//! Config-driven experiment runs, scoring and plotting.

pub mod config;
pub mod plots;
pub mod presets;
pub mod runners;
pub mod scoring;
pub mod svg;

pub use config::ExperimentConfig;
pub use runners::{
    eval_checkpoint, oracle, plot_checkpoint, run_1d_dynamics, run_experiment, run_gain_sweep,
    run_illposed_demo, RunOptions,
};
pub use scoring::{RunStatus, ScoreReport};
