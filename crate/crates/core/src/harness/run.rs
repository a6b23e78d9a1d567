//! One training run: data, model, optimisation, evaluation and the files
//! left behind in the run directory.
//!
//! A run directory holds `config.toml`, `manifest.json` and one
//! `<index>_<kind>.bundle` per module, in chain order.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::eval::{evaluate, evaluate_encoder, EncoderDiagnostics, EvalResult};
use super::models::build_model;
use super::train::{train, CtcLabels, Objective, TrainOptions, TrainReport};
use crate::error::{Error, Result};
use crate::modules::{bundle, vocab::fnv1a, ComposedModel, Interface, Module, ModuleKind};
use crate::tasks::{Dataset, Split, Task, TaskSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleEntry {
    pub file: String,
    pub kind: ModuleKind,
    /// FNV-1a of the whole bundle file.
    pub checksum: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    /// Task metric on the test split; hypotheses are not stored.
    pub test: EvalResult,
    pub encoders: Vec<EncoderDiagnostics>,
}

/// Everything needed to reproduce a run, plus what it produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub code_version: String,
    pub objective: Objective,
    pub history: TrainReport,
    pub metrics: FinalMetrics,
    pub bundles: Vec<BundleEntry>,
    pub wall_clock_secs: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub model: ComposedModel,
    pub manifest: RunManifest,
}

#[derive(Clone, Debug)]
pub struct RunData {
    pub task: Task,
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

pub fn run_data(cfg: &RunConfig) -> Result<RunData> {
    let task = Task::new(TaskSpec::new(cfg.run.task))?;
    let d = &cfg.data;
    let train = task.generate(d.train_examples, Split::Train, d.split_seed)?.fraction(d.fraction)?;
    let valid = if d.valid_examples > 0 {
        task.generate(d.valid_examples, Split::Valid, d.split_seed)?
    } else {
        Dataset {
            task: cfg.run.task,
            split: Split::Valid,
            examples: Vec::new(),
        }
    };
    let test = task.generate(d.test_examples, Split::Test, d.split_seed)?;
    Ok(RunData { task, train, valid, test })
}

/// Reassembles a chain from its stages: a full model when it ends in a
/// decoder, an encoder chain otherwise.
pub fn assemble(stages: Vec<Module>) -> Result<ComposedModel> {
    if stages.last().is_some_and(|m| m.kind() == ModuleKind::ArDecoder) {
        ComposedModel::new(stages)
    } else {
        ComposedModel::encoder_chain(stages)
    }
}

/// True when `stage` emits phoneme marginals rather than word marginals.
pub fn emits_phonemes(stage: &Module) -> bool {
    stage.output_interface()
        == Interface::Marginal {
            fingerprint: Task::phoneme_vocab().fingerprint(),
        }
}

/// Encoder diagnostics for every stage that emits marginals.
pub fn encoder_diagnostics(model: &ComposedModel, data: &Dataset, limit: usize) -> Result<Vec<EncoderDiagnostics>> {
    let mut out = Vec::new();
    for (i, m) in model.stages().iter().enumerate() {
        if matches!(m.output_interface(), Interface::Marginal { .. }) && m.kind() != ModuleKind::ArDecoder {
            out.push(evaluate_encoder(model, data, i, emits_phonemes(m), limit)?);
        }
    }
    Ok(out)
}

pub fn bundle_file_name(index: usize, m: &Module) -> String {
    format!("{index}_{}.bundle", m.kind().as_str())
}

fn bundle_entries(model: &ComposedModel) -> Result<Vec<BundleEntry>> {
    model
        .stages()
        .iter()
        .enumerate()
        .map(|(i, m)| {
            Ok(BundleEntry {
                file: bundle_file_name(i, m),
                kind: m.kind(),
                checksum: format!("{:016x}", fnv1a(&bundle::to_bytes(m)?)),
            })
        })
        .collect()
}

pub fn train_options(cfg: &RunConfig) -> TrainOptions {
    TrainOptions {
        steps: cfg.train.steps,
        batch_size: cfg.train.batch_size,
        schedule: cfg.schedule(),
        adam: cfg.adam(),
        clip_norm: cfg.train.clip_norm,
        seed: cfg.run.seed,
        trainable: None,
        valid_every: cfg.train.valid_every,
        valid_examples: cfg.data.valid_examples,
    }
}

/// Trains and evaluates the model described by `cfg`.
pub fn train_run(cfg: &RunConfig) -> Result<TrainedRun> {
    cfg.validate()?;
    let start = Instant::now();
    let data = run_data(cfg)?;
    let mut model = build_model(&data.task, &cfg.model, cfg.run.seed)?;
    let mut objective = Objective::for_kind(cfg.model.kind);
    objective.label_smoothing = cfg.train.label_smoothing;
    let valid = (!data.valid.is_empty()).then_some(&data.valid);
    let history = train(&mut model, &data.train, valid, &objective, &train_options(cfg))?;
    let mut test = evaluate(&model, &data.test, &cfg.eval, 0)?;
    test.hypotheses.clear();
    let mut encoders = encoder_diagnostics(&model, &data.test, 0)?;
    for e in &mut encoders {
        e.greedy.hypotheses.clear();
    }
    let manifest = RunManifest {
        config: cfg.clone(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        objective,
        history,
        metrics: FinalMetrics { test, encoders },
        bundles: bundle_entries(&model)?,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok(TrainedRun { model, manifest })
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes bundles, config and manifest into `dir` (created if needed).
pub fn save_run(run: &TrainedRun, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (m, entry) in run.model.stages().iter().zip(&run.manifest.bundles) {
        bundle::save(m, dir.join(&entry.file))?;
    }
    write(&dir.join(CONFIG_FILE), run.manifest.config.to_toml()?.as_bytes())?;
    let json = serde_json::to_string_pretty(&run.manifest).map_err(|e| Error::Format(e.to_string()))?;
    write(&dir.join(MANIFEST_FILE), json.as_bytes())
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<RunManifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Bundle paths of a run directory in chain order.
pub fn run_bundles(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    Ok(read_manifest(dir)?.bundles.iter().map(|b| dir.join(&b.file)).collect())
}

/// Loads the model saved in a run directory.
pub fn load_run(dir: impl AsRef<Path>) -> Result<(ComposedModel, RunManifest)> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let stages = manifest
        .bundles
        .iter()
        .map(|b| bundle::load(dir.join(&b.file)))
        .collect::<Result<Vec<_>>>()?;
    Ok((assemble(stages)?, manifest))
}

/// Labels each encoder stage of `model` is supervised with when fine-tuned.
pub fn stage_labels(model: &ComposedModel) -> Vec<Option<CtcLabels>> {
    model
        .stages()
        .iter()
        .filter(|m| m.kind() != ModuleKind::ArDecoder)
        .map(|m| match m.output_interface() {
            Interface::Marginal { .. } if emits_phonemes(m) => Some(CtcLabels::Phonemes),
            Interface::Marginal { .. } => Some(CtcLabels::Words),
            _ => None,
        })
        .collect()
}
