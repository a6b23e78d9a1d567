use serde::{Deserialize, Serialize};

use super::compose::ComposedModel;
use super::encoder::SeqInput;
use super::marginal::{greedy_ctc_decode, MarginalSequence};
use super::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::nn::Fwd;
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamConfig {
    pub beam: usize,
    /// Length-normalisation exponent: hypotheses are ranked by
    /// `logprob / len^alpha`.
    pub alpha: f64,
    pub max_len: usize,
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam == 0 || self.max_len == 0 {
            return Err(Error::Config("beam and max_len must be positive".into()));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!("length-normalisation alpha {} < 0", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Output tokens, end-of-sequence excluded.
    pub tokens: Vec<usize>,
    pub logprob: f64,
    pub score: f64,
    /// False when the hypothesis hit `max_len` without emitting end-of-sequence.
    pub finished: bool,
}

fn normalised(logprob: f64, len: usize, alpha: f64) -> f64 {
    logprob / (len.max(1) as f64).powf(alpha)
}

/// Beam search over a next-token distribution.
///
/// `step(prefix)` returns log-probabilities over the vocabulary for the token
/// following `prefix`. At each step the `beam` best expansions are kept;
/// end-of-sequence expansions ranked within the top `beam` close their
/// hypothesis. Search stops once `beam` hypotheses are closed or after
/// `max_len` tokens, when open hypotheses are closed as unfinished. Returns
/// all closed hypotheses, best normalised score first.
pub fn beam_search<F>(cfg: &BeamConfig, eos: usize, mut step: F) -> Result<Vec<Hypothesis>>
where
    F: FnMut(&[usize]) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    let mut live: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 0.0)];
    let mut done: Vec<Hypothesis> = Vec::new();
    for _ in 0..cfg.max_len {
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (h, (prefix, lp)) in live.iter().enumerate() {
            let next = step(prefix)?;
            if eos >= next.len() {
                return Err(Error::Vocabulary(format!("end symbol {eos} outside {} outputs", next.len())));
            }
            for (tok, &l) in next.iter().enumerate() {
                if l.is_nan() {
                    return Err(Error::Numeric("NaN log-probability during search".into()));
                }
                cands.push((lp + l, h, tok));
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut next_live = Vec::with_capacity(cfg.beam);
        for (rank, &(lp, h, tok)) in cands.iter().enumerate() {
            if tok == eos {
                if rank < cfg.beam {
                    let tokens = live[h].0.clone();
                    done.push(Hypothesis {
                        score: normalised(lp, tokens.len() + 1, cfg.alpha),
                        tokens,
                        logprob: lp,
                        finished: true,
                    });
                }
            } else if next_live.len() < cfg.beam {
                let mut t = live[h].0.clone();
                t.push(tok);
                next_live.push((t, lp));
            }
            if next_live.len() == cfg.beam && rank + 1 >= cfg.beam {
                break;
            }
        }
        live = next_live;
        if done.len() >= cfg.beam || live.is_empty() {
            break;
        }
    }
    if done.len() < cfg.beam {
        for (tokens, lp) in live {
            done.push(Hypothesis {
                score: normalised(lp, tokens.len(), cfg.alpha),
                tokens,
                logprob: lp,
                finished: false,
            });
        }
    }
    done.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.tokens.cmp(&b.tokens)));
    Ok(done)
}

/// Input to a composed model at inference time.
#[derive(Clone, Debug)]
pub enum ModelInput {
    Frames(Tensor),
    Tokens(Vec<usize>),
}

/// Runs a chain without gradients and returns each encoder stage's marginals.
pub fn stage_marginals(model: &ComposedModel, input: &ModelInput) -> Result<Vec<Option<MarginalSequence>>> {
    let mut tape = Tape::inference();
    let bounds = model.bind(&mut tape, &vec![false; model.stages().len()])?;
    let mut f = Fwd::eval(&mut tape);
    let x = match input {
        ModelInput::Frames(t) => SeqInput::Frames(f.tape.constant(t.clone())),
        ModelInput::Tokens(ids) => SeqInput::Tokens(ids),
    };
    let out = model.encode(&mut f, &bounds, x)?;
    let mut res = Vec::new();
    for (stage, enc) in model.stages().iter().zip(&out.encoders) {
        res.push(match enc.probs {
            Some(p) => {
                let fp = match stage.output_interface() {
                    super::Interface::Marginal { fingerprint } => fingerprint,
                    _ => 0,
                };
                Some(MarginalSequence::new(tape.value(p).clone(), fp)?)
            }
            None => None,
        });
    }
    Ok(res)
}

/// Decodes one input with a composed model: beam search when the chain ends
/// in a decoder, greedy CTC decoding of the last marginals otherwise.
pub fn decode(model: &ComposedModel, input: &ModelInput, beam: &BeamConfig) -> Result<Hypothesis> {
    let mut tape = Tape::inference();
    let bounds = model.bind(&mut tape, &vec![false; model.stages().len()])?;
    let mut f = Fwd::eval(&mut tape);
    let x = match input {
        ModelInput::Frames(t) => SeqInput::Frames(f.tape.constant(t.clone())),
        ModelInput::Tokens(ids) => SeqInput::Tokens(ids),
    };
    let out = model.encode(&mut f, &bounds, x)?;
    let Some(memory) = out.memory else {
        let probs = out.final_probs()?;
        let m = MarginalSequence::new(f.tape.value(probs).clone(), 0)?;
        return Ok(Hypothesis {
            tokens: greedy_ctc_decode(&m, 0),
            logprob: 0.0,
            score: 0.0,
            finished: true,
        });
    };
    let eos = 0;
    let hyps = beam_search(beam, eos, |prefix| {
        let mut prev = Vec::with_capacity(prefix.len() + 1);
        prev.push(eos);
        prev.extend_from_slice(prefix);
        let logits = model.decoder_logits(&mut f, &bounds, memory, &prev)?;
        let last = f.tape.slice_rows(logits, prev.len() - 1, 1)?;
        let lp = f.tape.log_softmax(last, 1)?;
        Ok(f.tape.value(lp).data().to_vec())
    })?;
    hyps.into_iter()
        .next()
        .ok_or_else(|| Error::Numeric("beam search produced no hypothesis".into()))
}

/// Maps CTC output ids (blank at 0) onto a decoder-style vocabulary by symbol.
pub fn ids_to_symbols<'v>(vocab: &'v Vocabulary, ids: &[usize]) -> Result<Vec<&'v str>> {
    vocab.decode(ids)
}
