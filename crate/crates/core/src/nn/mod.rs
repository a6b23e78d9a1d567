//! Pre-LayerNorm transformer building blocks.

mod attention;
mod blocks;
mod layers;
mod params;
mod positional;

pub use attention::{causal_mask, AttentionConfig, MultiHeadAttention};
pub use blocks::{CrossBlock, EncoderBlock};
pub use layers::{Conv1d, Embedding, FeedForward, LayerNorm, Linear, LN_EPS};
pub use params::{Bound, Init, ParamId, ParamLayout, ParamSet, ParamSpec};
pub use positional::{sinusoidal_table, PositionalEmbedding, PositionalKind};

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Tape, Var};

/// Forward-pass context: the tape plus, in training mode, the dropout RNG.
pub struct Fwd<'a> {
    pub tape: &'a mut Tape,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl<'a> Fwd<'a> {
    /// Evaluation mode: dropout disabled.
    pub fn eval(tape: &'a mut Tape) -> Self {
        Fwd { tape, rng: None }
    }

    pub fn train(tape: &'a mut Tape, rng: &'a mut ChaCha8Rng) -> Self {
        Fwd { tape, rng: Some(rng) }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        match self.rng.as_deref_mut() {
            Some(rng) if rate > 0.0 => self.tape.dropout(x, rate, rng),
            _ => Ok(x),
        }
    }
}
