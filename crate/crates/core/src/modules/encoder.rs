use super::arch::{EncoderArch, InputSpec, OlcConfig, OutputSpec, QueryPositions};
use super::ingestor::Ingestor;
use crate::error::{Error, Result};
use crate::nn::{
    AttentionConfig, Bound, Conv1d, CrossBlock, Embedding, EncoderBlock, Fwd, LayerNorm, Linear, ParamLayout,
    PositionalEmbedding, PositionalKind,
};
use crate::tensor::Var;

/// Input to an encoder-side network.
#[derive(Clone, Copy, Debug)]
pub enum SeqInput<'a> {
    /// `[T, dim]` frames.
    Frames(Var),
    Tokens(&'a [usize]),
    /// `[K, V]` probabilities from the previous module.
    Marginal(Var),
}

#[derive(Clone, Debug)]
enum FrontEnd {
    Frames { proj: Linear, conv: Conv1d, dim: usize },
    Tokens { embed: Embedding },
    Marginal { ingestor: Ingestor },
}

/// Output Length Controller network.
#[derive(Clone, Debug)]
pub struct LengthController {
    cfg: OlcConfig,
    queries: PositionalEmbedding,
    blocks: Vec<CrossBlock>,
    norm: LayerNorm,
}

impl LengthController {
    pub fn new(layout: &mut ParamLayout, cfg: &OlcConfig, att: &AttentionConfig) -> Self {
        layout.scoped("olc", |l| LengthController {
            cfg: cfg.clone(),
            queries: PositionalEmbedding::new(l, "queries", PositionalKind::SumOfBoth, cfg.max_length, att.model_dim),
            blocks: (0..cfg.layers)
                .map(|i| CrossBlock::new(l, &format!("block{i}"), att, false))
                .collect(),
            norm: LayerNorm::new(l, "norm", att.model_dim),
        })
    }

    pub fn config(&self) -> &OlcConfig {
        &self.cfg
    }

    /// `[T, d] → [K, d]` with `K` from the configured ratio.
    pub fn forward(&self, f: &mut Fwd, p: &Bound, memory: Var) -> Result<Var> {
        let t = f.tape.shape(memory)[0];
        let k = self.cfg.output_len(t);
        let scale = match self.cfg.query_positions {
            QueryPositions::Output => 1.0,
            QueryPositions::Input => t as f64 / k as f64,
        };
        let mut y = self.queries.forward_scaled(f, p, k, scale)?;
        for b in &self.blocks {
            y = b.forward(f, p, y, memory)?;
        }
        self.norm.forward(f, p, y)
    }
}

/// Everything an encoder-side forward pass produces.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    /// `[T, d]` states after the self-attention stack.
    pub hidden: Var,
    /// `[K, V]` CTC log-probabilities, for marginal-output modules.
    pub log_probs: Option<Var>,
    /// `[K, V]` probabilities passed to the next module.
    pub probs: Option<Var>,
}

impl EncoderOutput {
    pub fn probs(&self) -> Result<Var> {
        self.probs
            .ok_or_else(|| Error::Interface("module exposes hidden states, not marginals".into()))
    }
}

#[derive(Clone, Debug)]
pub struct EncoderNet {
    front: FrontEnd,
    pe: Option<PositionalEmbedding>,
    blocks: Vec<EncoderBlock>,
    norm: LayerNorm,
    olc: Option<LengthController>,
    proj: Option<Linear>,
    dropout: f64,
}

impl EncoderNet {
    pub fn new(layout: &mut ParamLayout, arch: &EncoderArch) -> Result<Self> {
        let att = &arch.attention;
        let d = att.model_dim;
        let (front, pe) = match &arch.input {
            InputSpec::Frames { dim, conv_rf } => (
                FrontEnd::Frames {
                    proj: Linear::new(layout, "frontend.proj", *dim, d, true),
                    conv: Conv1d::new(layout, "frontend.conv", d, d, *conv_rf),
                    dim: *dim,
                },
                true,
            ),
            InputSpec::Tokens { symbols } => (
                FrontEnd::Tokens {
                    embed: Embedding::new(layout, "embed", symbols.len(), d, 1.0),
                },
                true,
            ),
            InputSpec::Marginal { symbols, ingestor } => (
                FrontEnd::Marginal {
                    ingestor: Ingestor::new(layout, "ingestor", ingestor, symbols.len(), att, arch.max_positions)?,
                },
                false,
            ),
        };
        let pe = pe.then(|| PositionalEmbedding::new(layout, "pos", PositionalKind::Sinusoidal, arch.max_positions, d));
        let blocks = (0..arch.layers)
            .map(|i| EncoderBlock::new(layout, &format!("block{i}"), att))
            .collect();
        let norm = LayerNorm::new(layout, "norm", d);
        let olc = arch.olc.as_ref().map(|c| LengthController::new(layout, c, att));
        let proj = match &arch.output {
            OutputSpec::Marginal { symbols } => Some(Linear::new(layout, "output", d, symbols.len(), true)),
            OutputSpec::Hidden => None,
        };
        Ok(EncoderNet {
            front,
            pe,
            blocks,
            norm,
            olc,
            proj,
            dropout: att.dropout,
        })
    }

    pub fn length_controller(&self) -> Option<&LengthController> {
        self.olc.as_ref()
    }

    pub fn forward(&self, f: &mut Fwd, p: &Bound, input: SeqInput) -> Result<EncoderOutput> {
        let x = match (&self.front, input) {
            (FrontEnd::Frames { proj, conv, dim }, SeqInput::Frames(x)) => {
                let shape = f.tape.shape(x);
                if shape.len() != 2 || shape[1] != *dim {
                    return Err(Error::Shape(format!("expected [T, {dim}] frames, got {shape:?}")));
                }
                let h = proj.forward(f, p, x)?;
                let h = f.tape.relu(h)?;
                conv.forward(f, p, h)?
            }
            (FrontEnd::Tokens { embed }, SeqInput::Tokens(ids)) => {
                if ids.is_empty() {
                    return Err(Error::Shape("empty token sequence".into()));
                }
                embed.forward(f, p, ids)?
            }
            (FrontEnd::Marginal { ingestor }, SeqInput::Marginal(m)) => ingestor.forward(f, p, m)?,
            (front, input) => {
                return Err(Error::Interface(format!(
                    "{} front end fed {}",
                    front_name(front),
                    input_name(&input)
                )))
            }
        };
        let mut x = match &self.pe {
            Some(pe) => {
                let x = pe.add_to(f, p, x)?;
                f.dropout(x, self.dropout)?
            }
            None => x,
        };
        for b in &self.blocks {
            x = b.forward(f, p, x)?;
        }
        let hidden = self.norm.forward(f, p, x)?;
        let Some(proj) = &self.proj else {
            return Ok(EncoderOutput {
                hidden,
                log_probs: None,
                probs: None,
            });
        };
        let states = match &self.olc {
            Some(olc) => olc.forward(f, p, hidden)?,
            None => hidden,
        };
        let logits = proj.forward(f, p, states)?;
        Ok(EncoderOutput {
            hidden,
            log_probs: Some(f.tape.log_softmax(logits, 1)?),
            probs: Some(f.tape.softmax(logits, 1)?),
        })
    }
}

fn front_name(f: &FrontEnd) -> &'static str {
    match f {
        FrontEnd::Frames { .. } => "frames",
        FrontEnd::Tokens { .. } => "token",
        FrontEnd::Marginal { .. } => "marginal",
    }
}

fn input_name(i: &SeqInput) -> &'static str {
    match i {
        SeqInput::Frames(_) => "frames",
        SeqInput::Tokens(_) => "tokens",
        SeqInput::Marginal(_) => "marginals",
    }
}
