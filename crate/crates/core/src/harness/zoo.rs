//! The fixed set of runs behind the stress, transfer and low-resource
//! experiments, plus a directory cache for them.

use std::path::Path;

use super::config::RunConfig;
use super::models::ModelKind;
use super::run::{load_run, read_manifest, save_run, train_run, TrainedRun};
use crate::error::Result;
use crate::tasks::TaskKind;

/// Seeds of the repeated configurations.
pub const SEEDS: [u64; 3] = [1, 2, 3];

/// Name of the architecture variant of `kind` on `task`.
pub fn arch_variant_name(task: TaskKind, kind: ModelKind) -> String {
    format!("{task}_{}_arch", kind.as_str())
}

/// Name of the reduced-data variant of `kind` on `task`.
pub fn low_resource_name(task: TaskKind, kind: ModelKind) -> String {
    format!("{task}_{}_10pct", kind.as_str())
}

pub fn run_name(task: TaskKind, kind: ModelKind, seed: u64) -> String {
    RunConfig::default_for(task, kind, seed).run.name
}

/// Every run, in training order.
pub fn configs() -> Vec<RunConfig> {
    use ModelKind::*;
    let mut out = Vec::new();
    for task in [TaskKind::MtA, TaskKind::AsrMain] {
        for seed in SEEDS {
            out.push(RunConfig::default_for(task, Baseline, seed));
            out.push(RunConfig::default_for(task, LegoWemb, seed));
        }
        out.push(RunConfig::default_for(task, LegoBeamConv, 1));
        out.push(RunConfig::default_for(task, EncoderOnly, 1));
        for kind in [Baseline, LegoWemb] {
            // deeper encoder, decoder and ingestor
            let mut c = RunConfig::default_for(task, kind, 4);
            c.run.name = arch_variant_name(task, kind);
            c.model.encoder_layers = 3;
            c.model.decoder_layers = 2;
            c.model.ingestor_layers = 2;
            out.push(c);
        }
    }
    for seed in [1, 2] {
        out.push(RunConfig::default_for(TaskKind::MtA, NoCtc, seed));
    }
    out.push(RunConfig::default_for(TaskKind::MtB, Baseline, 1));
    out.push(RunConfig::default_for(TaskKind::MtB, EncoderOnly, 1));
    for kind in [Baseline, EncoderOnly] {
        let mut c = RunConfig::default_for(TaskKind::AsrMain, kind, 1);
        c.run.name = low_resource_name(TaskKind::AsrMain, kind);
        c.data.fraction = 0.1;
        out.push(c);
    }
    out.push(RunConfig::default_for(TaskKind::AsrMain, PhonemeEncoder, 1));
    out.push(RunConfig::default_for(TaskKind::AsrDomain2, PronunciationChain, 1));
    out
}

/// Trains `cfg`, or loads it from `cache/<name>` when a run with the same
/// configuration is already there. Fresh runs are saved into the cache.
pub fn train_or_load(cfg: &RunConfig, cache: Option<&Path>) -> Result<(TrainedRun, bool)> {
    if let Some(dir) = cache.map(|c| c.join(&cfg.run.name)) {
        if read_manifest(&dir).is_ok_and(|m| &m.config == cfg) {
            let (model, manifest) = load_run(&dir)?;
            return Ok((TrainedRun { model, manifest }, true));
        }
        let run = train_run(cfg)?;
        save_run(&run, &dir)?;
        return Ok((run, false));
    }
    Ok((train_run(cfg)?, false))
}
