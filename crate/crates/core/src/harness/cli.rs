//! Command-line front end: `train`, `eval`, `stress`, `transfer`, `report`.
//!
//! Every command reads one TOML file (`--config`), writes into `--out`,
//! and maps errors onto exit codes 2 (config), 3 (interface) and
//! 4 (numeric). Relative paths inside a config file are resolved against
//! the file's directory.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::eval::{default_beam, evaluate, EncoderDiagnostics, EvalResult};
use super::experiments::{
    cross_pairings, decoder_plug, splice, transfer, EvalSetup, ExperimentReport, FineTune, Named, StressKind, Transfer,
};
use super::models::ModelKind;
use super::report::{collect, save_report, to_csv, to_svg};
use super::run::{assemble, encoder_diagnostics, load_run, run_bundles, save_run, train_run};
use crate::error::{Error, Result};
use crate::modules::{bundle, vocab::fnv1a, BeamConfig, ModuleKind};
use crate::tasks::{Split, Task, TaskKind, TaskSpec};

#[derive(Debug, Parser)]
#[command(name = "legonn", about = "Train, compose and stress-test modular sequence models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// TOML file describing the command.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed in the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and save its bundles and run manifest.
    Train(Common),
    /// Evaluate saved bundles on a task split.
    Eval(Common),
    /// Evaluate cross-pairings of independently trained modules.
    Stress(Common),
    /// Compose an encoder with a decoder trained on another task.
    Transfer(Common),
    /// Aggregate run and experiment directories into CSV and SVG.
    Report {
        #[command(flatten)]
        common: Common,
        /// Run or experiment directories (searched one level down).
        dirs: Vec<PathBuf>,
    },
}

fn config_path(c: &Common) -> Result<&Path> {
    c.config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required for this command".into()))
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(p)
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    write_file(path, json.as_bytes())
}

fn test_data(task: TaskKind, examples: usize, split: Split, split_seed: u64) -> Result<crate::tasks::Dataset> {
    Task::new(TaskSpec::new(task))?.generate(examples, split, split_seed)
}

pub fn cmd_train(c: &Common) -> Result<()> {
    let mut cfg = RunConfig::load(config_path(c)?)?;
    if let Some(seed) = c.seed {
        cfg.run.seed = seed;
    }
    let run = train_run(&cfg)?;
    save_run(&run, &c.out)?;
    let t = &run.manifest.metrics.test;
    println!("{} {} {:.4}", cfg.run.name, t.metric.as_str(), t.value);
    Ok(())
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalFile {
    pub eval: EvalSection,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// A run directory, or explicit bundle files in chain order.
    #[serde(default)]
    pub run: Option<String>,
    #[serde(default)]
    pub bundles: Vec<String>,
    pub task: TaskKind,
    #[serde(default = "default_split")]
    pub split: Split,
    #[serde(default = "default_examples")]
    pub examples: usize,
    #[serde(default = "one")]
    pub split_seed: u64,
    #[serde(default)]
    pub beam: Option<BeamConfig>,
}

fn default_split() -> Split {
    Split::Test
}

fn default_examples() -> usize {
    1000
}

fn one() -> u64 {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalOutput {
    pub task: TaskKind,
    pub split: Split,
    pub result: EvalResult,
    pub encoders: Vec<EncoderDiagnostics>,
}

pub fn cmd_eval(c: &Common) -> Result<()> {
    let path = config_path(c)?;
    let cfg: EvalFile = read_toml(path)?;
    let e = cfg.eval;
    let files: Vec<PathBuf> = match (&e.run, e.bundles.is_empty()) {
        (Some(run), true) => run_bundles(resolve(path, run))?,
        (None, false) => e.bundles.iter().map(|b| resolve(path, b)).collect(),
        _ => return Err(Error::Config("eval needs exactly one of `run` or `bundles`".into())),
    };
    let stages = files.iter().map(bundle::load).collect::<Result<Vec<_>>>()?;
    let model = assemble(stages)?;
    let data = test_data(e.task, e.examples, e.split, e.split_seed)?;
    let beam = e.beam.unwrap_or_else(|| default_beam(e.task));
    let mut result = evaluate(&model, &data, &beam, 0)?;
    let mut encoders = encoder_diagnostics(&model, &data, 0)?;
    println!("{} {} {:.4}", e.task, result.metric.as_str(), result.value);
    for d in &mut encoders {
        println!(
            "  stage {} greedy {} {:.4} ctc {:.4}",
            d.stage,
            d.greedy.metric.as_str(),
            d.greedy.value,
            d.ctc_loss
        );
        d.greedy.hypotheses.clear();
    }
    result.hypotheses.clear();
    write_json(
        &c.out.join("metrics.json"),
        &EvalOutput {
            task: e.task,
            split: e.split,
            result,
            encoders,
        },
    )
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StressFile {
    pub stress: StressSection,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StressSection {
    pub kind: StressKind,
    pub task: TaskKind,
    /// Run directories of full models.
    #[serde(default)]
    pub runs: Vec<String>,
    /// Run directories of CTC-only encoders (decoder_plug).
    #[serde(default)]
    pub encoders: Vec<String>,
    /// no_ctc_ablation without `runs`: seeds of the models to train.
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Training steps for those models; task default when absent.
    #[serde(default)]
    pub steps: Option<u64>,
    #[serde(default = "default_examples")]
    pub test_examples: usize,
    #[serde(default = "one")]
    pub split_seed: u64,
}

fn named_run(dir: &Path) -> Result<Named> {
    let (model, manifest) = load_run(dir)?;
    Ok(Named::new(manifest.config.run.name, model))
}

fn checksums(dirs: &[PathBuf]) -> Result<Vec<(PathBuf, u64)>> {
    let mut out = Vec::new();
    for d in dirs {
        for b in run_bundles(d)? {
            let bytes = std::fs::read(&b).map_err(|e| Error::io(&b, e))?;
            out.push((b, fnv1a(&bytes)));
        }
    }
    Ok(out)
}

/// Runs a stress experiment; bundle files are checksummed before and
/// after and any change is reported as an error.
pub fn run_stress(path: &Path, s: &StressSection, seed: Option<u64>, out: &Path) -> Result<ExperimentReport> {
    let mut dirs: Vec<PathBuf> = s.runs.iter().map(|r| resolve(path, r)).collect();
    let enc_dirs: Vec<PathBuf> = s.encoders.iter().map(|r| resolve(path, r)).collect();
    if s.kind == StressKind::NoCtcAblation && dirs.is_empty() {
        let mut seeds = s.seeds.clone();
        if let Some(base) = seed {
            seeds = (0..seeds.len().max(2) as u64).map(|i| base + i).collect();
        }
        for sd in seeds {
            let mut cfg = RunConfig::default_for(s.task, ModelKind::NoCtc, sd);
            if let Some(steps) = s.steps {
                cfg.train.steps = steps;
                cfg.train.warmup_steps = cfg.train.warmup_steps.min(steps);
            }
            let dir = out.join("runs").join(&cfg.run.name);
            save_run(&train_run(&cfg)?, &dir)?;
            dirs.push(dir);
        }
    }
    let all: Vec<PathBuf> = dirs.iter().chain(&enc_dirs).cloned().collect();
    let before = checksums(&all)?;
    let models = dirs.iter().map(|d| named_run(d)).collect::<Result<Vec<_>>>()?;
    let data = test_data(s.task, s.test_examples, Split::Test, s.split_seed)?;
    let ev = EvalSetup {
        data: &data,
        beam: default_beam(s.task),
        limit: 0,
    };
    let report = match s.kind {
        StressKind::DecoderPlug => {
            let encoders = enc_dirs.iter().map(|d| named_run(d)).collect::<Result<Vec<_>>>()?;
            if encoders.is_empty() || models.is_empty() {
                return Err(Error::Config("decoder_plug needs `encoders` and `runs`".into()));
            }
            decoder_plug(&encoders, &models, &ev)?
        }
        kind => cross_pairings(kind.as_str(), &models, &ev)?,
    };
    if checksums(&all)? != before {
        return Err(Error::Format("a bundle file changed during the stress run".into()));
    }
    Ok(report)
}

pub fn cmd_stress(c: &Common) -> Result<()> {
    let path = config_path(c)?;
    let cfg: StressFile = read_toml(path)?;
    let report = run_stress(path, &cfg.stress, c.seed, &c.out)?;
    finish_report(&report, &c.out)
}

fn finish_report(report: &ExperimentReport, out: &Path) -> Result<()> {
    save_report(report, out)?;
    write_file(&out.join("report.csv"), to_csv(&report.rows)?.as_bytes())?;
    write_file(&out.join("report.svg"), to_svg(&report.rows).as_bytes())?;
    for r in &report.rows {
        println!(
            "{:<48} {} {}  retention {}{}",
            r.pair_id,
            r.metric_name,
            r.value.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
            r.retention_pct.map(|v| format!("{v:.1}%")).unwrap_or_else(|| "-".into()),
            if r.note.is_empty() { String::new() } else { format!("  ({})", r.note) }
        );
    }
    Ok(())
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferFile {
    pub transfer: TransferSection,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSection {
    #[serde(default = "default_transfer_name")]
    pub name: String,
    /// Run directory whose decoder is reused.
    pub decoder: String,
    /// Encoder stages: `dir` takes every encoder stage of a run, `dir#i`
    /// only stage `i`. Empty to train an encoder-only model instead.
    #[serde(default)]
    pub encoder: Vec<String>,
    /// Task of the trained encoder (and of the evaluation data).
    pub encoder_task: TaskKind,
    #[serde(default = "one_f64")]
    pub data_fraction: f64,
    /// Run directory of a task-matched reference model.
    #[serde(default)]
    pub reference: Option<String>,
    #[serde(default)]
    pub fine_tune: bool,
    #[serde(default = "default_ft_steps")]
    pub fine_tune_steps: u64,
    #[serde(default = "default_examples")]
    pub test_examples: usize,
    #[serde(default = "one")]
    pub split_seed: u64,
    #[serde(default = "one")]
    pub seed: u64,
}

fn default_transfer_name() -> String {
    "transfer".into()
}

fn one_f64() -> f64 {
    1.0
}

fn default_ft_steps() -> u64 {
    2000
}

fn encoder_stages(path: &Path, specs: &[String]) -> Result<Named> {
    let mut stages = Vec::new();
    let mut names = Vec::new();
    for spec in specs {
        let (dir, idx) = match spec.rsplit_once('#') {
            Some((d, i)) => (
                d,
                Some(i.parse::<usize>().map_err(|_| Error::Config(format!("bad stage index in `{spec}`")))?),
            ),
            None => (spec.as_str(), None),
        };
        let (model, manifest) = load_run(resolve(path, dir))?;
        let mut taken: Vec<_> = model.into_stages().into_iter().enumerate().collect();
        match idx {
            Some(i) => {
                taken.retain(|(j, _)| *j == i);
                if taken.is_empty() {
                    return Err(Error::Config(format!("`{spec}` has no stage {i}")));
                }
            }
            None => taken.retain(|(_, m)| m.kind() != ModuleKind::ArDecoder),
        }
        stages.extend(taken.into_iter().map(|(_, m)| m));
        names.push(manifest.config.run.name + &idx.map(|i| format!("#{i}")).unwrap_or_default());
    }
    Ok(Named::new(names.join("|"), assemble(stages)?))
}

pub fn run_transfer(path: &Path, t: &TransferSection, seed: Option<u64>, out: &Path) -> Result<ExperimentReport> {
    if !(t.data_fraction > 0.0 && t.data_fraction <= 1.0) {
        return Err(Error::Config(format!("data_fraction must be in (0, 1], got {}", t.data_fraction)));
    }
    if t.fine_tune_steps == 0 {
        return Err(Error::Config("fine_tune_steps must be positive".into()));
    }
    let seed = seed.unwrap_or(t.seed);
    let decoder = named_run(&resolve(path, &t.decoder))?;
    let encoder = if t.encoder.is_empty() {
        let mut cfg = RunConfig::default_for(t.encoder_task, ModelKind::EncoderOnly, seed);
        cfg.data.fraction = t.data_fraction;
        let run = train_run(&cfg)?;
        let dir = out.join("runs").join(&cfg.run.name);
        save_run(&run, &dir)?;
        Named::new(cfg.run.name, run.model)
    } else {
        encoder_stages(path, &t.encoder)?
    };
    // Check compatibility before spending time on anything else.
    splice(&encoder.model, &decoder.model)?;
    let reference = match &t.reference {
        Some(r) => {
            let (_, m) = load_run(resolve(path, r))?;
            if m.config.run.task != t.encoder_task {
                return Err(Error::Config(format!(
                    "reference run is for {}, not {}",
                    m.config.run.task, t.encoder_task
                )));
            }
            Some((m.config.run.name, m.metrics.test.value, m.config.data.test_examples))
        }
        None => None,
    };
    let test = test_data(t.encoder_task, t.test_examples, Split::Test, t.split_seed)?;
    // A reference measured on a different number of test examples is
    // re-evaluated on this test set.
    let reference = match reference {
        Some((name, v, n)) if n == t.test_examples => Some((name, v)),
        Some((name, _, _)) => {
            let (model, _) = load_run(resolve(path, t.reference.as_deref().unwrap_or_default()))?;
            Some((name, evaluate(&model, &test, &default_beam(t.encoder_task), 0)?.value))
        }
        None => None,
    };
    let train_data = if t.fine_tune {
        Some(
            Task::new(TaskSpec::new(t.encoder_task))?
                .generate(5000, Split::Train, t.split_seed)?
                .fraction(t.data_fraction)?,
        )
    } else {
        None
    };
    let ft = FineTune::from_pretraining(3e-3, t.fine_tune_steps, seed);
    let outcome = transfer(
        &Transfer {
            experiment: t.name.clone(),
            encoder: &encoder,
            decoder: &decoder,
            reference,
            fine_tune: train_data.as_ref().map(|d| (d, ft)),
        },
        &EvalSetup {
            data: &test,
            beam: default_beam(t.encoder_task),
            limit: 0,
        },
    )?;
    if let Some(row) = outcome.report.rows.iter().find(|r| !r.note.is_empty()) {
        eprintln!("warning: {}", row.note);
    }
    Ok(outcome.report)
}

pub fn cmd_transfer(c: &Common) -> Result<()> {
    let path = config_path(c)?;
    let cfg: TransferFile = read_toml(path)?;
    let report = run_transfer(path, &cfg.transfer, c.seed, &c.out)?;
    finish_report(&report, &c.out)
}

pub fn cmd_report(c: &Common, dirs: &[PathBuf]) -> Result<()> {
    let (rows, missing) = collect(dirs);
    for (d, why) in &missing {
        eprintln!("skipping {}: {why}", d.display());
    }
    write_file(&c.out.join("report.csv"), to_csv(&rows)?.as_bytes())?;
    write_file(&c.out.join("report.svg"), to_svg(&rows).as_bytes())?;
    println!("{} rows", rows.len());
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(c) => cmd_train(c),
        Command::Eval(c) => cmd_eval(c),
        Command::Stress(c) => cmd_stress(c),
        Command::Transfer(c) => cmd_transfer(c),
        Command::Report { common, dirs } => cmd_report(common, dirs),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
