//! Experiment configuration, orchestration and result files.

mod config;
mod run;

pub use config::{
    emit_config, emit_graph_kind, parse_config, parse_config_as, ExperimentConfig, ExperimentKind, GridParams,
    PdeParams, PdeSystem, PicardParams, SanovParams, Tolerances,
};
pub use run::{
    median, read_manifest_checks, run, run_in_pool, thread_count, verify_manifest, CellRecord, Check, OutputFile,
    RunManifest, MANIFEST_NAME,
};
