use super::arch::{Interface, ModuleKind};
use super::encoder::{EncoderOutput, SeqInput};
use super::module::{Module, Network};
use crate::error::{Error, Result};
use crate::nn::{Bound, Fwd};
use crate::tensor::{Tape, Var};

/// An ordered chain of modules whose interfaces line up end to end.
#[derive(Clone, Debug)]
pub struct ComposedModel {
    stages: Vec<Module>,
}

/// Per-stage results of a forward pass through a chain.
#[derive(Clone, Debug)]
pub struct ChainOutput {
    /// One entry per encoder-side stage, in order.
    pub encoders: Vec<EncoderOutput>,
    /// What the decoder attends to, when the chain ends in a decoder.
    pub memory: Option<Var>,
}

impl ChainOutput {
    /// Marginals emitted by the last encoder-side stage.
    pub fn final_probs(&self) -> Result<Var> {
        self.encoders
            .last()
            .ok_or_else(|| Error::Interface("chain has no encoder stage".into()))?
            .probs()
    }
}

/// Checks that `upstream` can feed `downstream`.
pub fn check_link(upstream: &Module, downstream: &Module) -> Result<()> {
    let (out, inp) = (upstream.output_interface(), downstream.input_interface());
    if out != inp {
        return Err(Error::Interface(format!(
            "{} emits {out} but {} expects {inp}",
            upstream.kind().as_str(),
            downstream.kind().as_str()
        )));
    }
    Ok(())
}

impl ComposedModel {
    /// A chain of at least two modules ending in the single decoder.
    pub fn new(stages: Vec<Module>) -> Result<Self> {
        if stages.len() < 2 {
            return Err(Error::Interface("a composed model needs at least two modules".into()));
        }
        if stages[stages.len() - 1].kind() != ModuleKind::ArDecoder {
            return Err(Error::Interface("the last module must be an ar_decoder".into()));
        }
        Self::validate_chain(&stages)?;
        Ok(ComposedModel { stages })
    }

    /// A decoder-free chain of encoder-side modules, evaluated by greedy CTC
    /// decoding of its final marginals.
    pub fn encoder_chain(stages: Vec<Module>) -> Result<Self> {
        if stages.iter().any(|m| m.kind() == ModuleKind::ArDecoder) {
            return Err(Error::Interface("an encoder chain cannot contain a decoder".into()));
        }
        if stages.last().is_some_and(|m| !matches!(m.output_interface(), Interface::Marginal { .. })) {
            return Err(Error::Interface("an encoder chain must end in marginals".into()));
        }
        Self::validate_chain(&stages)?;
        Ok(ComposedModel { stages })
    }

    fn validate_chain(stages: &[Module]) -> Result<()> {
        if stages.is_empty() {
            return Err(Error::Interface("empty module chain".into()));
        }
        for (i, pair) in stages.windows(2).enumerate() {
            if pair[0].kind() == ModuleKind::ArDecoder {
                return Err(Error::Interface(format!("decoder at stage {i} is not the last stage")));
            }
            if pair[0].kind() == ModuleKind::HiddenEncoder && pair[1].kind() != ModuleKind::ArDecoder {
                return Err(Error::Interface(format!("hidden states of stage {i} can only feed a decoder")));
            }
            check_link(&pair[0], &pair[1]).map_err(|e| match e {
                Error::Interface(msg) => Error::Interface(format!("stages {i}->{}: {msg}", i + 1)),
                e => e,
            })?;
        }
        if matches!(stages[0].input_interface(), Interface::Marginal { .. } | Interface::Hidden { .. }) {
            return Err(Error::Interface(format!(
                "chain must start from frames or tokens, not {}",
                stages[0].input_interface()
            )));
        }
        Ok(())
    }

    pub fn stages(&self) -> &[Module] {
        &self.stages
    }

    pub fn stages_mut(&mut self) -> &mut [Module] {
        &mut self.stages
    }

    pub fn into_stages(self) -> Vec<Module> {
        self.stages
    }

    pub fn input_interface(&self) -> Interface {
        self.stages[0].input_interface()
    }

    pub fn output_interface(&self) -> Interface {
        self.stages[self.stages.len() - 1].output_interface()
    }

    pub fn has_decoder(&self) -> bool {
        self.decoder().is_some()
    }

    pub fn decoder(&self) -> Option<&Module> {
        self.stages.last().filter(|m| m.kind() == ModuleKind::ArDecoder)
    }

    pub fn decoder_index(&self) -> Option<usize> {
        self.has_decoder().then(|| self.stages.len() - 1)
    }

    /// Puts every stage's parameters on `tape`; `trainable[i]` controls
    /// whether stage `i` receives gradients.
    pub fn bind(&self, tape: &mut Tape, trainable: &[bool]) -> Result<Vec<Bound>> {
        if trainable.len() != self.stages.len() {
            return Err(Error::Config(format!(
                "{} trainable flags for {} stages",
                trainable.len(),
                self.stages.len()
            )));
        }
        Ok(self
            .stages
            .iter()
            .zip(trainable)
            .map(|(m, &t)| m.params().bind(tape, t))
            .collect())
    }

    /// Runs every encoder-side stage and, if present, the decoder's
    /// input side.
    pub fn encode(&self, f: &mut Fwd, bounds: &[Bound], input: SeqInput) -> Result<ChainOutput> {
        let mut encoders = Vec::new();
        let mut memory = None;
        let mut next = input;
        for (m, p) in self.stages.iter().zip(bounds) {
            match m.network() {
                Network::Encoder(net) => {
                    let out = net.forward(f, p, next)?;
                    next = match out.probs {
                        Some(probs) => SeqInput::Marginal(probs),
                        None => SeqInput::Marginal(out.hidden),
                    };
                    encoders.push(out);
                }
                Network::Decoder(net) => {
                    let x = match next {
                        SeqInput::Marginal(v) => v,
                        _ => return Err(Error::Interface("decoder fed raw input".into())),
                    };
                    memory = Some(net.memory(f, p, x)?);
                }
            }
        }
        Ok(ChainOutput { encoders, memory })
    }

    /// Teacher-forced decoder logits `[N, V]` for `prev` (start symbol first).
    pub fn decoder_logits(&self, f: &mut Fwd, bounds: &[Bound], memory: Var, prev: &[usize]) -> Result<Var> {
        let i = self
            .decoder_index()
            .ok_or_else(|| Error::Interface("chain has no decoder".into()))?;
        self.stages[i].decoder()?.logits(f, &bounds[i], memory, prev)
    }
}
