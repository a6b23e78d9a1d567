//! Mini-batch training of composed models.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::models::ModelKind;
use crate::error::{Error, Result};
use crate::losses::{ctc_loss, joint_loss, label_smoothed_ce, CtcTarget, CtcTerm, JointLossWeights};
use crate::modules::{ComposedModel, SeqInput, EOS};
use crate::nn::Fwd;
use crate::optim::{adam_step, clip_grad_norm, AdamConfig, AdamState, Schedule};
use crate::tasks::{Dataset, Example, Source};
use crate::tensor::{Tape, Tensor, Var};

/// Labels supervising one encoder-side stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CtcLabels {
    Words,
    Phonemes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Objective {
    /// One entry per encoder-side stage; `None` leaves its output unsupervised.
    pub stage_ctc: Vec<Option<CtcLabels>>,
    /// CTC weights for the supervised stages in order, plus the decoder CE weight.
    pub weights: JointLossWeights,
    pub label_smoothing: f64,
}

impl Objective {
    pub fn for_kind(kind: ModelKind) -> Self {
        use CtcLabels::*;
        let (stage_ctc, ce) = match kind {
            ModelKind::Baseline | ModelKind::NoCtc => (vec![None], 1.0),
            ModelKind::LegoWemb | ModelKind::LegoBeamConv => (vec![Some(Words)], 1.0),
            ModelKind::EncoderOnly => (vec![Some(Words)], 0.0),
            ModelKind::PhonemeEncoder => (vec![Some(Phonemes)], 0.0),
            ModelKind::PronunciationChain => (vec![Some(Phonemes), Some(Words)], 0.0),
        };
        let n = stage_ctc.iter().flatten().count();
        Objective {
            stage_ctc,
            weights: JointLossWeights { ctc: vec![1.0; n], ce },
            label_smoothing: 0.1,
        }
    }

    /// Objective for a chain of `encoders` word-level stages and a decoder.
    pub fn for_chain(encoder_stages: usize, supervise_last: bool) -> Self {
        let mut stage_ctc = vec![None; encoder_stages];
        if supervise_last && encoder_stages > 0 {
            stage_ctc[encoder_stages - 1] = Some(CtcLabels::Words);
        }
        let n = stage_ctc.iter().flatten().count();
        Objective {
            stage_ctc,
            weights: JointLossWeights { ctc: vec![1.0; n], ce: 1.0 },
            label_smoothing: 0.1,
        }
    }

    pub fn validate(&self, model: &ComposedModel) -> Result<()> {
        let encoders = model.stages().len() - usize::from(model.has_decoder());
        if self.stage_ctc.len() != encoders {
            return Err(Error::Config(format!(
                "objective covers {} encoder stages, model has {encoders}",
                self.stage_ctc.len()
            )));
        }
        if self.weights.ctc.len() != self.stage_ctc.iter().flatten().count() {
            return Err(Error::Config("one CTC weight per supervised stage".into()));
        }
        if !model.has_decoder() && self.weights.ctc.is_empty() {
            return Err(Error::Config("an encoder chain needs at least one CTC term".into()));
        }
        self.weights.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOptions {
    pub steps: u64,
    pub batch_size: usize,
    pub schedule: Schedule,
    #[serde(default)]
    pub adam: AdamConfig,
    pub clip_norm: f64,
    pub seed: u64,
    /// Per-stage trainable flags; all stages when absent.
    #[serde(default)]
    pub trainable: Option<Vec<bool>>,
    /// Validation-loss interval; the best validated parameters are kept.
    #[serde(default)]
    pub valid_every: u64,
    #[serde(default)]
    pub valid_examples: usize,
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("steps and batch_size must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        self.schedule.validate()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// `(step, mean batch loss)` for every step.
    pub losses: Vec<(u64, f64)>,
    /// `(step, validation loss)`.
    pub valid: Vec<(u64, f64)>,
    pub best_step: Option<u64>,
}

impl TrainReport {
    /// Mean training loss over the first and last `window` steps.
    pub fn loss_drop(&self, window: usize) -> (f64, f64) {
        let n = self.losses.len();
        let w = window.min(n).max(1);
        let mean = |s: &[(u64, f64)]| s.iter().map(|x| x.1).sum::<f64>() / s.len().max(1) as f64;
        (mean(&self.losses[..w.min(n)]), mean(&self.losses[n.saturating_sub(w)..]))
    }
}

fn seq_input<'a>(tape: &mut Tape, src: &'a Source) -> SeqInput<'a> {
    match src {
        Source::Tokens(t) => SeqInput::Tokens(t),
        Source::Frames(f) => SeqInput::Frames(tape.constant(f.clone())),
    }
}

/// Objective value for one example.
pub fn example_loss(
    f: &mut Fwd,
    model: &ComposedModel,
    bounds: &[crate::nn::Bound],
    ex: &Example,
    obj: &Objective,
) -> Result<Var> {
    let input = seq_input(f.tape, &ex.source);
    let out = model.encode(f, bounds, input)?;
    let mut targets = Vec::new();
    for (i, labels) in obj.stage_ctc.iter().enumerate() {
        let Some(labels) = labels else { continue };
        let ids = match labels {
            CtcLabels::Words => ex.target.clone(),
            CtcLabels::Phonemes => ex
                .phonemes
                .clone()
                .ok_or_else(|| Error::Config("phoneme supervision on an example without phonemes".into()))?,
        };
        let lp = out.encoders[i]
            .log_probs
            .ok_or_else(|| Error::Config(format!("stage {i} has no CTC output")))?;
        targets.push((lp, CtcTarget::new(ids, 0)?));
    }
    let terms: Vec<CtcTerm> = targets
        .iter()
        .map(|(lp, t)| CtcTerm {
            log_probs: *lp,
            target: t,
            blank: 0,
        })
        .collect();
    match out.memory {
        Some(memory) => {
            let eos = 0;
            debug_assert_eq!(crate::tasks::Task::target_vocab().symbol(eos), Some(EOS));
            let mut prev = vec![eos];
            prev.extend_from_slice(&ex.target);
            let mut gold = ex.target.clone();
            gold.push(eos);
            let logits = model.decoder_logits(f, bounds, memory, &prev)?;
            if terms.is_empty() {
                let ce = label_smoothed_ce(f.tape, logits, &gold, obj.label_smoothing, None)?;
                f.tape.scale(ce, obj.weights.ce)
            } else {
                Ok(joint_loss(f.tape, &terms, logits, &gold, obj.label_smoothing, None, &obj.weights)?.total)
            }
        }
        None => {
            let mut total: Option<Var> = None;
            for (term, &w) in terms.iter().zip(&obj.weights.ctc) {
                let raw = ctc_loss(f.tape, term.log_probs, term.target, 0)?;
                let t = f.tape.scale(raw, w / term.target.len() as f64)?;
                total = Some(match total {
                    Some(acc) => f.tape.add(acc, t)?,
                    None => t,
                });
            }
            total.ok_or_else(|| Error::Config("nothing to train".into()))
        }
    }
}

/// Mean objective over (up to `limit`) examples, no gradients.
pub fn dataset_loss(model: &ComposedModel, data: &Dataset, obj: &Objective, limit: usize) -> Result<f64> {
    let n = if limit == 0 { data.len() } else { limit.min(data.len()) };
    let mut total = 0.0;
    for ex in &data.examples[..n] {
        let mut tape = Tape::inference();
        let bounds = model.bind(&mut tape, &vec![false; model.stages().len()])?;
        let mut f = Fwd::eval(&mut tape);
        let l = example_loss(&mut f, model, &bounds, ex, obj)?;
        total += tape.value(l).item();
    }
    Ok(total / n.max(1) as f64)
}

/// Trains `model` in place.
pub fn train(
    model: &mut ComposedModel,
    data: &Dataset,
    valid: Option<&Dataset>,
    obj: &Objective,
    opts: &TrainOptions,
) -> Result<TrainReport> {
    opts.validate()?;
    obj.validate(model)?;
    if data.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let stages = model.stages().len();
    let trainable = opts.trainable.clone().unwrap_or_else(|| vec![true; stages]);
    if trainable.len() != stages {
        return Err(Error::Config(format!("{} trainable flags for {stages} stages", trainable.len())));
    }
    let mut states: Vec<AdamState> = model
        .stages()
        .iter()
        .map(|m| AdamState::new(m.params().tensors()))
        .collect();
    let mut order_rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed_d80f);
    let mut order: Vec<usize> = Vec::new();
    let mut report = TrainReport::default();
    let mut best: Option<(f64, Vec<Vec<Tensor>>)> = None;

    for step in 0..opts.steps {
        let mut batch = Vec::with_capacity(opts.batch_size);
        while batch.len() < opts.batch_size {
            if order.is_empty() {
                order = (0..data.len()).collect();
                order.shuffle(&mut order_rng);
            }
            batch.push(order.pop().expect("refilled"));
        }
        let mut tape = Tape::new();
        let bounds = model.bind(&mut tape, &trainable)?;
        let mut sum: Option<Var> = None;
        for &i in &batch {
            let mut f = Fwd::train(&mut tape, &mut drop_rng);
            let l = example_loss(&mut f, model, &bounds, &data.examples[i], obj)?;
            sum = Some(match sum {
                Some(acc) => tape.add(acc, l)?,
                None => l,
            });
        }
        let loss = tape.scale(sum.expect("nonempty batch"), 1.0 / batch.len() as f64)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite training loss {value} at step {step}")));
        }
        report.losses.push((step, value));
        tape.backward(loss)?;

        let mut grads: Vec<Vec<Tensor>> = bounds.iter().map(|b| b.grads(&tape)).collect();
        let mut flat: Vec<Tensor> = Vec::new();
        for (g, &t) in grads.iter_mut().zip(&trainable) {
            if t {
                flat.append(g);
            }
        }
        clip_grad_norm(&mut flat, opts.clip_norm);
        let lr = opts.schedule.lr_at(step);
        let mut flat = flat.into_iter();
        for (i, stage) in model.stages_mut().iter_mut().enumerate() {
            if !trainable[i] {
                continue;
            }
            let n = stage.params().len();
            let g: Vec<Tensor> = flat.by_ref().take(n).collect();
            let names = stage.params().names().to_vec();
            adam_step(stage.params_mut().tensors_mut(), &g, &mut states[i], lr, &opts.adam, &names)?;
        }

        let done = step + 1;
        if let Some(v) = valid {
            if opts.valid_every > 0 && (done % opts.valid_every == 0 || done == opts.steps) {
                let vl = dataset_loss(model, v, obj, opts.valid_examples)?;
                report.valid.push((done, vl));
                if best.as_ref().is_none_or(|(b, _)| vl < *b) {
                    let snapshot = model.stages().iter().map(|m| m.params().tensors().to_vec()).collect();
                    best = Some((vl, snapshot));
                    report.best_step = Some(done);
                }
            }
        }
    }
    if let Some((_, snapshot)) = best {
        for (stage, params) in model.stages_mut().iter_mut().zip(snapshot) {
            stage.params_mut().tensors_mut().clone_from_slice(&params);
        }
    }
    for (stage, &t) in model.stages_mut().iter_mut().zip(&trainable) {
        if t {
            stage.manifest_mut().provenance.steps += report.best_step.unwrap_or(opts.steps);
        }
    }
    Ok(report)
}
