//! Config-driven experiment orchestration: strict TOML configs,
//! content-addressed stage caching, full pipeline runs, ablation sweeps and
//! architecture transfer grids.

pub mod cache;
pub mod config;
pub mod plot;
pub mod run;

pub use cache::{dataset_fingerprint, run_stage, stage_key, StageOutcome};
pub use config::{DefenseSection, ExperimentConfig, ModelSection, DATA_DIR_ENV};
pub use plot::{plot_lines, PlotSeries};
pub use run::{
    load_datasets, run_ablation, run_experiment, run_transfer_grid, AblationPoint, RunSummary,
    TransferCell, ABLATION_AXES,
};
