//! Training, evaluation and experiment drivers.

pub mod cli;
pub mod config;
pub mod eval;
pub mod experiments;
pub mod models;
pub mod report;
pub mod run;
pub mod train;
pub mod zoo;

pub use config::RunConfig;
pub use eval::{default_beam, evaluate, evaluate_encoder, EncoderDiagnostics, EvalResult, MetricName};
pub use experiments::{
    cross_pairings, decoder_plug, fine_tune, splice, transfer, EvalSetup, ExperimentReport, FineTune, Named,
    ReportRow, StressKind, Transfer, TransferOutcome,
};
pub use models::{build_model, ModelConfig, ModelKind};
pub use run::{assemble, load_run, run_data, save_run, train_run, RunData, RunManifest, TrainedRun};
pub use train::{dataset_loss, example_loss, train, CtcLabels, Objective, TrainOptions, TrainReport};
