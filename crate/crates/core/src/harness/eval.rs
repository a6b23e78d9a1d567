//! Decoding-based evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{bleu, corpus_wer, Direction};
use crate::losses::{ctc_loss, CtcTarget};
use crate::modules::{
    decode, greedy_ctc_decode, BeamConfig, ComposedModel, Interface, MarginalSequence, ModelInput, SeqInput,
};
use crate::nn::Fwd;
use crate::tasks::{Dataset, Source, Task, TaskKind};
use crate::tensor::Tape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Bleu,
    Wer,
}

impl MetricName {
    pub fn for_task(task: TaskKind) -> Self {
        if task.is_speech() {
            MetricName::Wer
        } else {
            MetricName::Bleu
        }
    }

    pub fn direction(&self) -> Direction {
        match self {
            MetricName::Bleu => Direction::HigherIsBetter,
            MetricName::Wer => Direction::LowerIsBetter,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            MetricName::Bleu => "bleu",
            MetricName::Wer => "wer",
        }
    }
}

/// Decoding defaults per task: beam 5 with `alpha` 0.6 for translation,
/// beam 5 with `alpha` 1.0 for speech.
pub fn default_beam(task: TaskKind) -> BeamConfig {
    BeamConfig {
        beam: 5,
        alpha: if task.is_speech() { 1.0 } else { 0.6 },
        max_len: 16,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub metric: MetricName,
    /// BLEU in `[0, 1]` or corpus WER.
    pub value: f64,
    pub examples: usize,
    /// Hypotheses that hit the length limit without an end symbol.
    pub unfinished: usize,
    pub hypotheses: Vec<Vec<usize>>,
}

impl EvalResult {
    /// Higher-is-better task score: BLEU, or `1 − WER`.
    pub fn score(&self) -> f64 {
        match self.metric {
            MetricName::Bleu => self.value,
            MetricName::Wer => 1.0 - self.value,
        }
    }
}

pub fn model_input(src: &Source) -> ModelInput {
    match src {
        Source::Tokens(t) => ModelInput::Tokens(t.clone()),
        Source::Frames(f) => ModelInput::Frames(f.clone()),
    }
}

fn score(metric: MetricName, hyps: &[Vec<usize>], refs: &[Vec<usize>]) -> Result<f64> {
    match metric {
        MetricName::Bleu => bleu(hyps, refs, 4),
        MetricName::Wer => corpus_wer(hyps, refs),
    }
}

/// Decodes the first `limit` examples (all when 0) and scores them against
/// the word targets, or the phoneme targets when the model ends in phoneme
/// marginals. Chains without a decoder are greedily CTC-decoded.
pub fn evaluate(model: &ComposedModel, data: &Dataset, beam: &BeamConfig, limit: usize) -> Result<EvalResult> {
    let n = if limit == 0 { data.len() } else { limit.min(data.len()) };
    if n == 0 {
        return Err(Error::Config("nothing to evaluate".into()));
    }
    let metric = MetricName::for_task(data.task);
    let mut hyps = Vec::with_capacity(n);
    let mut refs = Vec::with_capacity(n);
    let mut unfinished = 0;
    let phonemes = model.output_interface()
        == Interface::Marginal {
            fingerprint: Task::phoneme_vocab().fingerprint(),
        };
    for ex in &data.examples[..n] {
        let h = decode(model, &model_input(&ex.source), beam)?;
        unfinished += usize::from(!h.finished);
        hyps.push(h.tokens);
        refs.push(match (&ex.phonemes, phonemes) {
            (_, false) => ex.target.clone(),
            (Some(p), true) => p.clone(),
            (None, true) => return Err(Error::Config(format!("{} has no phoneme targets", data.task))),
        });
    }
    Ok(EvalResult {
        metric,
        value: score(metric, &hyps, &refs)?,
        examples: n,
        unfinished,
        hypotheses: hyps,
    })
}

/// Encoder-side diagnostics for one CTC-supervised stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderDiagnostics {
    pub stage: usize,
    /// Greedy CTC decoding scored with WER or BLEU.
    pub greedy: EvalResult,
    /// Mean per-label CTC loss over examples whose alignment is feasible.
    pub ctc_loss: f64,
    /// Examples whose output was too short to align with the labels.
    pub infeasible: usize,
}

/// Greedy CTC decoding of encoder stage `stage`'s marginals, scored against
/// the word targets (or phonemes, for a phoneme-level stage), together
/// with the stage's CTC loss.
pub fn evaluate_encoder(
    model: &ComposedModel,
    data: &Dataset,
    stage: usize,
    phonemes: bool,
    limit: usize,
) -> Result<EncoderDiagnostics> {
    let n = if limit == 0 { data.len() } else { limit.min(data.len()) };
    if n == 0 {
        return Err(Error::Config("nothing to evaluate".into()));
    }
    let metric = if phonemes {
        MetricName::Wer
    } else {
        MetricName::for_task(data.task)
    };
    let mut hyps = Vec::with_capacity(n);
    let mut refs = Vec::with_capacity(n);
    let (mut loss, mut feasible, mut infeasible) = (0.0, 0usize, 0usize);
    for ex in &data.examples[..n] {
        let labels = if phonemes {
            ex.phonemes
                .clone()
                .ok_or_else(|| Error::Config("dataset has no phoneme labels".into()))?
        } else {
            ex.target.clone()
        };
        let mut tape = Tape::inference();
        let bounds = model.bind(&mut tape, &vec![false; model.stages().len()])?;
        let mut f = Fwd::eval(&mut tape);
        let input = match &ex.source {
            Source::Tokens(t) => SeqInput::Tokens(t),
            Source::Frames(x) => SeqInput::Frames(f.tape.constant(x.clone())),
        };
        let out = model.encode(&mut f, &bounds, input)?;
        let enc = out
            .encoders
            .get(stage)
            .ok_or_else(|| Error::Interface(format!("no encoder stage {stage}")))?;
        let (Some(lp), Some(p)) = (enc.log_probs, enc.probs) else {
            return Err(Error::Interface(format!("stage {stage} emits no marginals")));
        };
        let target = CtcTarget::new(labels.clone(), 0)?;
        match ctc_loss(&mut tape, lp, &target, 0) {
            Ok(l) => {
                loss += tape.value(l).item() / labels.len().max(1) as f64;
                feasible += 1;
            }
            Err(Error::InfeasibleAlignment { .. }) => infeasible += 1,
            Err(e) => return Err(e),
        }
        let marg = MarginalSequence::new(tape.value(p).clone(), 0)?;
        hyps.push(greedy_ctc_decode(&marg, 0));
        refs.push(labels);
    }
    Ok(EncoderDiagnostics {
        stage,
        greedy: EvalResult {
            metric,
            value: score(metric, &hyps, &refs)?,
            examples: n,
            unfinished: 0,
            hypotheses: hyps,
        },
        ctc_loss: loss / feasible.max(1) as f64,
        infeasible,
    })
}
