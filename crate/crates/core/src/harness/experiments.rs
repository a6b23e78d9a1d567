//! Modularity stress tests and transfer experiments.
//!
//! Every experiment evaluates compositions of already trained modules and
//! reports each pairing's metric next to a reference metric, normalised
//! to a retention percentage. Models are only ever cloned, never modified.

use serde::{Deserialize, Serialize};

use super::eval::{evaluate, MetricName};
use super::run::{assemble, stage_labels};
use super::train::{train, Objective, TrainOptions, TrainReport};
use crate::error::{Error, Result};
use crate::losses::JointLossWeights;
use crate::metrics::retention_pct;
use crate::modules::{Architecture, BeamConfig, ComposedModel, DecoderInput, IngestorKind, ModuleKind};
use crate::optim::{AdamConfig, Schedule, ScheduleKind};
use crate::tasks::Dataset;

/// A model with a human-readable origin label.
#[derive(Clone, Debug)]
pub struct Named {
    pub name: String,
    pub model: ComposedModel,
}

impl Named {
    pub fn new(name: impl Into<String>, model: ComposedModel) -> Self {
        Named {
            name: name.into(),
            model,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StressKind {
    SeedSwap,
    ArchSwap,
    DecoderPlug,
    NoCtcAblation,
}

impl StressKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StressKind::SeedSwap => "seed_swap",
            StressKind::ArchSwap => "arch_swap",
            StressKind::DecoderPlug => "decoder_plug",
            StressKind::NoCtcAblation => "no_ctc_ablation",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment: String,
    pub pair_id: String,
    pub encoder_src: String,
    pub decoder_src: String,
    pub metric_name: String,
    /// Missing when the pairing could not be built or evaluated.
    pub value: Option<f64>,
    pub reference: Option<f64>,
    pub retention_pct: Option<f64>,
    /// Intact models are their own reference.
    pub intact: bool,
    #[serde(default)]
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub metric: MetricName,
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    /// Rows that combine modules from different sources.
    pub fn swapped(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| !r.intact)
    }

    pub fn intact(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| r.intact)
    }

    pub fn row(&self, pair_id: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.pair_id == pair_id)
    }

    /// Smallest and largest retention over the swapped pairings; a pairing
    /// that failed to evaluate counts as zero retention.
    pub fn swapped_retention_range(&self) -> Option<(f64, f64)> {
        self.swapped()
            .map(|r| r.retention_pct.unwrap_or(0.0))
            .fold(None, |acc, x| match acc {
                None => Some((x, x)),
                Some((lo, hi)) => Some((lo.min(x), hi.max(x))),
            })
    }
}

/// Evaluation settings shared by all pairings of an experiment.
#[derive(Clone, Copy, Debug)]
pub struct EvalSetup<'a> {
    pub data: &'a Dataset,
    pub beam: BeamConfig,
    /// Examples to decode; 0 for all.
    pub limit: usize,
}

impl EvalSetup<'_> {
    pub fn metric(&self) -> MetricName {
        MetricName::for_task(self.data.task)
    }

    pub fn run(&self, model: &ComposedModel) -> Result<f64> {
        Ok(evaluate(model, self.data, &self.beam, self.limit)?.value)
    }
}

/// Encoder-side stages of `encoder_from` followed by the decoder of
/// `decoder_from`. Fails with an interface error if they do not fit.
pub fn splice(encoder_from: &ComposedModel, decoder_from: &ComposedModel) -> Result<ComposedModel> {
    let dec = decoder_from
        .decoder()
        .ok_or_else(|| Error::Interface("decoder source has no decoder".into()))?;
    let mut stages: Vec<_> = encoder_from
        .stages()
        .iter()
        .filter(|m| m.kind() != ModuleKind::ArDecoder)
        .cloned()
        .collect();
    stages.push(dec.clone());
    ComposedModel::new(stages)
}

fn retention(metric: MetricName, reference: Option<f64>, value: Option<f64>) -> Option<f64> {
    let r = retention_pct(reference?, value?, metric.direction());
    r.is_finite().then_some(r)
}

fn pair_row(experiment: &str, ev: &EvalSetup, enc: &Named, dec: &Named, reference: Option<f64>, intact: bool) -> ReportRow {
    let (value, note) = match splice(&enc.model, &dec.model).and_then(|m| ev.run(&m)) {
        Ok(v) => (Some(v), String::new()),
        Err(e) => (None, e.to_string()),
    };
    let metric = ev.metric();
    ReportRow {
        experiment: experiment.to_string(),
        pair_id: format!("{}+{}", enc.name, dec.name),
        encoder_src: enc.name.clone(),
        decoder_src: dec.name.clone(),
        metric_name: metric.as_str().to_string(),
        value,
        reference,
        retention_pct: retention(metric, reference, value),
        intact,
        note,
    }
}

/// Every encoder of `models` with every decoder of `models`. The diagonal
/// holds the intact models; each pairing is normalised by the intact model
/// its decoder came from.
pub fn cross_pairings(experiment: &str, models: &[Named], ev: &EvalSetup) -> Result<ExperimentReport> {
    if models.len() < 2 {
        return Err(Error::Config(format!("{experiment} needs at least two models")));
    }
    let mut refs = Vec::with_capacity(models.len());
    for m in models {
        refs.push(ev.run(&m.model)?);
    }
    let mut rows = Vec::new();
    for enc in models {
        for (j, dec) in models.iter().enumerate() {
            let intact = std::ptr::eq(enc, dec);
            let mut row = pair_row(experiment, ev, enc, dec, Some(refs[j]), intact);
            if intact {
                row.value = Some(refs[j]);
            }
            rows.push(row);
        }
    }
    Ok(ExperimentReport {
        experiment: experiment.to_string(),
        metric: ev.metric(),
        rows,
    })
}

/// Encoders trained on their own (CTC only) plugged into the decoders of
/// full models, normalised by each decoder's intact model.
pub fn decoder_plug(encoders: &[Named], decoders: &[Named], ev: &EvalSetup) -> Result<ExperimentReport> {
    let exp = StressKind::DecoderPlug.as_str();
    let mut rows = Vec::new();
    for dec in decoders {
        let reference = ev.run(&dec.model)?;
        rows.push(pair_row(exp, ev, dec, dec, Some(reference), true));
        for enc in encoders {
            rows.push(pair_row(exp, ev, enc, dec, Some(reference), false));
        }
    }
    Ok(ExperimentReport {
        experiment: exp.to_string(),
        metric: ev.metric(),
        rows,
    })
}

/// Fine-tuning settings for a composed model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FineTune {
    pub steps: u64,
    pub batch_size: usize,
    /// Peak learning rate; 100 times below the pretraining peak by default.
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub seed: u64,
}

impl FineTune {
    pub fn from_pretraining(peak_lr: f64, steps: u64, seed: u64) -> Self {
        FineTune {
            steps,
            batch_size: 16,
            peak_lr: peak_lr / 100.0,
            warmup_steps: (steps / 10).max(1),
            seed,
        }
    }

    fn options(&self, trainable: Vec<bool>) -> TrainOptions {
        TrainOptions {
            steps: self.steps,
            batch_size: self.batch_size,
            schedule: Schedule {
                kind: ScheduleKind::InverseSqrtWarmup,
                warmup_steps: self.warmup_steps,
                peak_lr: self.peak_lr,
                start_lr: self.peak_lr / 100.0,
                end_lr: self.peak_lr / 100.0,
                total_steps: self.steps,
                hold_steps: 0,
            },
            adam: AdamConfig::default(),
            clip_norm: 5.0,
            seed: self.seed,
            trainable: Some(trainable),
            valid_every: 0,
            valid_examples: 0,
        }
    }
}

/// True when the decoder reads its input through the BeamConv bottleneck,
/// which passes no gradient back to the encoder.
pub fn blocks_encoder_gradient(model: &ComposedModel) -> bool {
    model.decoder().is_some_and(|d| {
        matches!(
            &d.manifest().arch,
            Architecture::Decoder(a) if matches!(&a.input, DecoderInput::Marginal { ingestor, .. } if ingestor.kind == IngestorKind::BeamConv)
        )
    })
}

/// End-to-end fine-tuning of a composed model with the joint objective:
/// CTC on every marginal-emitting encoder stage plus decoder CE. Behind a
/// BeamConv ingestor only the decoder is updated, and a warning is returned.
pub fn fine_tune(model: &mut ComposedModel, data: &Dataset, ft: &FineTune) -> Result<(TrainReport, Option<String>)> {
    let stage_ctc = stage_labels(model);
    let n = stage_ctc.iter().flatten().count();
    let obj = Objective {
        stage_ctc,
        weights: JointLossWeights { ctc: vec![1.0; n], ce: 1.0 },
        label_smoothing: 0.1,
    };
    let stages = model.stages().len();
    let (trainable, warning) = if blocks_encoder_gradient(model) {
        let mut t = vec![false; stages];
        t[stages - 1] = true;
        (
            t,
            Some("BeamConv ingestor blocks gradients: encoder stages stay frozen, only the decoder is fine-tuned".into()),
        )
    } else {
        (vec![true; stages], None)
    };
    let report = train(model, data, None, &obj, &ft.options(trainable))?;
    Ok((report, warning))
}

/// Options for a transfer experiment.
#[derive(Clone, Debug)]
pub struct Transfer<'a> {
    pub experiment: String,
    pub encoder: &'a Named,
    pub decoder: &'a Named,
    /// Task-matched reference metric and its label.
    pub reference: Option<(String, f64)>,
    /// Fine-tuning data and settings; zero-shot only when absent.
    pub fine_tune: Option<(&'a Dataset, FineTune)>,
}

/// Result of a transfer experiment.
#[derive(Clone, Debug)]
pub struct TransferOutcome {
    pub report: ExperimentReport,
    pub zero_shot: ComposedModel,
    pub fine_tuned: Option<ComposedModel>,
}

/// Composes an encoder chain with a decoder from another model, evaluates
/// it as is and, optionally, after fine-tuning.
pub fn transfer(t: &Transfer, ev: &EvalSetup) -> Result<TransferOutcome> {
    let composed = splice(&t.encoder.model, &t.decoder.model)?;
    let metric = ev.metric();
    let reference = t.reference.as_ref().map(|r| r.1);
    let mut rows = Vec::new();
    if let Some((name, value)) = &t.reference {
        rows.push(ReportRow {
            experiment: t.experiment.clone(),
            pair_id: format!("reference:{name}"),
            encoder_src: name.clone(),
            decoder_src: name.clone(),
            metric_name: metric.as_str().into(),
            value: Some(*value),
            reference: Some(*value),
            retention_pct: Some(100.0),
            intact: true,
            note: String::new(),
        });
    }
    let zero = ev.run(&composed)?;
    let row = |pair: &str, value: f64, note: String| ReportRow {
        experiment: t.experiment.clone(),
        pair_id: pair.to_string(),
        encoder_src: t.encoder.name.clone(),
        decoder_src: t.decoder.name.clone(),
        metric_name: metric.as_str().into(),
        value: Some(value),
        reference,
        retention_pct: retention(metric, reference, Some(value)),
        intact: false,
        note,
    };
    rows.push(row("zero_shot", zero, String::new()));
    let fine_tuned = match &t.fine_tune {
        Some((data, ft)) => {
            let mut model = composed.clone();
            let (_, warning) = fine_tune(&mut model, data, ft)?;
            rows.push(row("fine_tuned", ev.run(&model)?, warning.unwrap_or_default()));
            Some(model)
        }
        None => None,
    };
    Ok(TransferOutcome {
        report: ExperimentReport {
            experiment: t.experiment.clone(),
            metric,
            rows,
        },
        zero_shot: composed,
        fine_tuned,
    })
}

/// Rebuilds a model from a subset of another model's stages.
pub fn take_stages(model: &ComposedModel, range: std::ops::Range<usize>) -> Result<ComposedModel> {
    let stages = model
        .stages()
        .get(range.clone())
        .ok_or_else(|| Error::Config(format!("stage range {range:?} out of bounds")))?;
    assemble(stages.to_vec())
}
