use super::{causal_mask, AttentionConfig, Bound, FeedForward, Fwd, LayerNorm, MultiHeadAttention, ParamLayout};
use crate::error::{Error, Result};
use crate::tensor::Var;

/// Pre-LN self-attention + feed-forward block:
/// `x += MHA(LN(x))`, then `x += FFN(LN(x))`.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    ln_attn: LayerNorm,
    attn: MultiHeadAttention,
    ln_ffn: LayerNorm,
    ffn: FeedForward,
    dropout: f64,
}

impl EncoderBlock {
    pub fn new(layout: &mut ParamLayout, name: &str, cfg: &AttentionConfig) -> Self {
        layout.scoped(name, |l| EncoderBlock {
            ln_attn: LayerNorm::new(l, "ln_attn", cfg.model_dim),
            attn: MultiHeadAttention::new(l, "self_attn", cfg),
            ln_ffn: LayerNorm::new(l, "ln_ffn", cfg.model_dim),
            ffn: FeedForward::new(l, "ffn", cfg.model_dim, cfg.ffn_dim, cfg.dropout),
            dropout: cfg.dropout,
        })
    }

    pub fn attention(&self) -> &MultiHeadAttention {
        &self.attn
    }

    pub fn feed_forward(&self) -> &FeedForward {
        &self.ffn
    }

    pub fn forward(&self, f: &mut Fwd, p: &Bound, x: Var) -> Result<Var> {
        let h = self.ln_attn.forward(f, p, x)?;
        let h = self.attn.forward(f, p, h, h, None)?;
        let h = f.dropout(h, self.dropout)?;
        let x = f.tape.add(x, h)?;
        let h = self.ln_ffn.forward(f, p, x)?;
        let h = self.ffn.forward(f, p, h)?;
        let h = f.dropout(h, self.dropout)?;
        f.tape.add(x, h)
    }
}

/// Pre-LN block with self-attention, cross-attention to a memory, and
/// feed-forward. Causal self-attention makes it a decoder block; the
/// non-causal variant is the length-controller block.
#[derive(Clone, Debug)]
pub struct CrossBlock {
    ln_self: LayerNorm,
    self_attn: MultiHeadAttention,
    ln_cross: LayerNorm,
    cross_attn: MultiHeadAttention,
    ln_ffn: LayerNorm,
    ffn: FeedForward,
    dropout: f64,
    causal: bool,
}

impl CrossBlock {
    pub fn new(layout: &mut ParamLayout, name: &str, cfg: &AttentionConfig, causal: bool) -> Self {
        layout.scoped(name, |l| CrossBlock {
            ln_self: LayerNorm::new(l, "ln_self", cfg.model_dim),
            self_attn: MultiHeadAttention::new(l, "self_attn", cfg),
            ln_cross: LayerNorm::new(l, "ln_cross", cfg.model_dim),
            cross_attn: MultiHeadAttention::new(l, "cross_attn", cfg),
            ln_ffn: LayerNorm::new(l, "ln_ffn", cfg.model_dim),
            ffn: FeedForward::new(l, "ffn", cfg.model_dim, cfg.ffn_dim, cfg.dropout),
            dropout: cfg.dropout,
            causal,
        })
    }

    pub fn self_attention(&self) -> &MultiHeadAttention {
        &self.self_attn
    }

    pub fn cross_attention(&self) -> &MultiHeadAttention {
        &self.cross_attn
    }

    pub fn feed_forward(&self) -> &FeedForward {
        &self.ffn
    }

    pub fn forward(&self, f: &mut Fwd, p: &Bound, y: Var, memory: Var) -> Result<Var> {
        if f.tape.shape(memory).first().copied().unwrap_or(0) == 0 {
            return Err(Error::Shape("cross-attention memory is empty".into()));
        }
        let n = f.tape.shape(y)[0];
        let mask = self.causal.then(|| causal_mask(n));
        let h = self.ln_self.forward(f, p, y)?;
        let h = self.self_attn.forward(f, p, h, h, mask.as_deref())?;
        let h = f.dropout(h, self.dropout)?;
        let y = f.tape.add(y, h)?;
        let h = self.ln_cross.forward(f, p, y)?;
        let h = self.cross_attn.forward(f, p, h, memory, None)?;
        let h = f.dropout(h, self.dropout)?;
        let y = f.tape.add(y, h)?;
        let h = self.ln_ffn.forward(f, p, y)?;
        let h = self.ffn.forward(f, p, h)?;
        let h = f.dropout(h, self.dropout)?;
        f.tape.add(y, h)
    }
}
