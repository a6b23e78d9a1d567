use super::arch::{DecoderArch, DecoderInput};
use super::ingestor::Ingestor;
use crate::error::{Error, Result};
use crate::nn::{Bound, CrossBlock, Embedding, Fwd, LayerNorm, Linear, ParamLayout, PositionalEmbedding, PositionalKind};
use crate::tensor::Var;

/// Autoregressive decoder over either marginals (through an ingestor) or
/// raw hidden states.
#[derive(Clone, Debug)]
pub struct DecoderNet {
    ingestor: Option<Ingestor>,
    hidden_dim: usize,
    embed: Embedding,
    pe: PositionalEmbedding,
    blocks: Vec<CrossBlock>,
    norm: LayerNorm,
    proj: Linear,
    dropout: f64,
}

impl DecoderNet {
    pub fn new(layout: &mut ParamLayout, arch: &DecoderArch) -> Result<Self> {
        let att = &arch.attention;
        let d = att.model_dim;
        let ingestor = match &arch.input {
            DecoderInput::Marginal { symbols, ingestor } => Some(Ingestor::new(
                layout,
                "ingestor",
                ingestor,
                symbols.len(),
                att,
                arch.max_positions,
            )?),
            DecoderInput::Hidden { .. } => None,
        };
        let v = arch.output_symbols.len();
        Ok(DecoderNet {
            ingestor,
            hidden_dim: d,
            embed: Embedding::new(layout, "embed", v, d, 1.0),
            pe: PositionalEmbedding::new(layout, "pos", PositionalKind::Sinusoidal, arch.max_positions, d),
            blocks: (0..arch.layers)
                .map(|i| CrossBlock::new(layout, &format!("block{i}"), att, true))
                .collect(),
            norm: LayerNorm::new(layout, "norm", d),
            proj: Linear::new(layout, "output", d, v, true),
            dropout: att.dropout,
        })
    }

    pub fn ingestor(&self) -> Option<&Ingestor> {
        self.ingestor.as_ref()
    }

    /// Memory the decoder attends to: ingested marginals, or the hidden
    /// states as given.
    pub fn memory(&self, f: &mut Fwd, p: &Bound, input: Var) -> Result<Var> {
        match &self.ingestor {
            Some(ing) => ing.forward(f, p, input),
            None => {
                let shape = f.tape.shape(input);
                if shape.len() != 2 || shape[1] != self.hidden_dim {
                    return Err(Error::Shape(format!(
                        "decoder expects [T, {}] hidden states, got {shape:?}",
                        self.hidden_dim
                    )));
                }
                Ok(input)
            }
        }
    }

    /// `[N, V]` next-token logits for each prefix position of `prev`.
    pub fn logits(&self, f: &mut Fwd, p: &Bound, memory: Var, prev: &[usize]) -> Result<Var> {
        if prev.is_empty() {
            return Err(Error::Shape("decoder needs at least the start symbol".into()));
        }
        let x = self.embed.forward(f, p, prev)?;
        let x = self.pe.add_to(f, p, x)?;
        let mut x = f.dropout(x, self.dropout)?;
        for b in &self.blocks {
            x = b.forward(f, p, x, memory)?;
        }
        let x = self.norm.forward(f, p, x)?;
        self.proj.forward(f, p, x)
    }
}
