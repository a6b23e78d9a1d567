use serde::{Deserialize, Serialize};

use super::{Bound, Fwd, Linear, ParamLayout};
use crate::error::{Error, Result};
use crate::tensor::Var;

/// Additive mask value standing in for −∞.
const MASK_VALUE: f64 = -1e9;

/// Width, head count and dropout rates shared by a stack of transformer blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionConfig {
    pub model_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub attention_dropout: f64,
}

impl AttentionConfig {
    pub fn new(model_dim: usize, num_heads: usize, ffn_dim: usize) -> Self {
        AttentionConfig {
            model_dim,
            num_heads,
            ffn_dim,
            dropout: 0.0,
            attention_dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.num_heads == 0 || self.ffn_dim == 0 {
            return Err(Error::Config("attention dimensions must be positive".into()));
        }
        if self.model_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} is not divisible by num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        for (name, rate) in [("dropout", self.dropout), ("attention_dropout", self.attention_dropout)] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::Config(format!("{name} {rate} outside [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }
}

/// Boolean `[n, n]` mask, true above the diagonal.
pub fn causal_mask(n: usize) -> Vec<bool> {
    (0..n * n).map(|i| i % n > i / n).collect()
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
    head_dim: usize,
    attention_dropout: f64,
}

impl MultiHeadAttention {
    pub fn new(layout: &mut ParamLayout, name: &str, cfg: &AttentionConfig) -> Self {
        let d = cfg.model_dim;
        layout.scoped(name, |l| MultiHeadAttention {
            q: Linear::new(l, "q", d, d, true),
            k: Linear::new(l, "k", d, d, true),
            v: Linear::new(l, "v", d, d, true),
            o: Linear::new(l, "out", d, d, true),
            heads: cfg.num_heads,
            head_dim: cfg.head_dim(),
            attention_dropout: cfg.attention_dropout,
        })
    }

    pub fn output(&self) -> &Linear {
        &self.o
    }

    /// Scaled dot-product attention of `query: [Tq,d]` over `kv: [Tk,d]`.
    ///
    /// `mask`, when given, is row-major `[Tq,Tk]` with `true` = blocked.
    pub fn forward(&self, f: &mut Fwd, p: &Bound, query: Var, kv: Var, mask: Option<&[bool]>) -> Result<Var> {
        Ok(self.forward_with_weights(f, p, query, kv, mask)?.0)
    }

    /// As [`forward`](Self::forward), also returning each head's `[Tq,Tk]` weights.
    pub fn forward_with_weights(
        &self,
        f: &mut Fwd,
        p: &Bound,
        query: Var,
        kv: Var,
        mask: Option<&[bool]>,
    ) -> Result<(Var, Vec<Var>)> {
        let tq = f.tape.shape(query)[0];
        let tk = f.tape.shape(kv)[0];
        if tk == 0 {
            return Err(Error::Shape("attention over an empty context".into()));
        }
        if let Some(m) = mask {
            if m.len() != tq * tk {
                return Err(Error::Dimension {
                    op: "attention mask",
                    lhs: vec![tq, tk],
                    rhs: vec![m.len()],
                });
            }
            if m.chunks(tk).any(|row| row.iter().all(|&b| b)) {
                return Err(Error::Numeric("attention query row with every key masked".into()));
            }
        }
        let q = self.q.forward(f, p, query)?;
        let k = self.k.forward(f, p, kv)?;
        let v = self.v.forward(f, p, kv)?;
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let start = h * self.head_dim;
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    f.tape.slice_cols(q, start, self.head_dim)?,
                    f.tape.slice_cols(k, start, self.head_dim)?,
                    f.tape.slice_cols(v, start, self.head_dim)?,
                )
            };
            let scores = f.tape.matmul_nt(qh, kh)?;
            let scores = f.tape.scale(scores, scale)?;
            let scores = match mask {
                Some(m) => f.tape.masked_fill(scores, m, MASK_VALUE)?,
                None => scores,
            };
            let w = f.tape.softmax(scores, 1)?;
            weights.push(w);
            let w = f.dropout(w, self.attention_dropout)?;
            outs.push(f.tape.matmul(w, vh)?);
        }
        let joined = if outs.len() == 1 { outs[0] } else { f.tape.concat(&outs, 1)? };
        Ok((self.o.forward(f, p, joined)?, weights))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamSet;
    use crate::tensor::{Tape, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn config_validation() {
        assert!(AttentionConfig::new(8, 2, 16).validate().is_ok());
        assert!(AttentionConfig::new(8, 3, 16).validate().is_err());
        let mut c = AttentionConfig::new(8, 2, 16);
        c.dropout = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn causal_mask_blocks_future() {
        assert_eq!(
            causal_mask(3),
            vec![false, true, true, false, false, true, false, false, false]
        );
    }

    #[test]
    fn single_key_gets_all_weight_and_rows_normalise() {
        let cfg = AttentionConfig::new(4, 2, 8);
        let mut layout = ParamLayout::new();
        let mha = MultiHeadAttention::new(&mut layout, "attn", &cfg);
        let params = ParamSet::init(&layout, &mut ChaCha8Rng::seed_from_u64(1));
        let mut tape = Tape::new();
        let p = params.bind(&mut tape, false);
        let mut f = Fwd::eval(&mut tape);
        let q = f.tape.constant(Tensor::new(vec![3, 4], (0..12).map(|i| i as f64 * 0.1).collect()).unwrap());
        let kv = f.tape.constant(Tensor::new(vec![1, 4], vec![0.5, -0.5, 1.0, 2.0]).unwrap());
        let (_, w) = mha.forward_with_weights(&mut f, &p, q, kv, None).unwrap();
        for h in w {
            assert!(tape_values(&f, h).iter().all(|&v| v == 1.0));
        }

        let kv = f.tape.constant(Tensor::new(vec![3, 4], (0..12).map(|i| (i as f64).sin()).collect()).unwrap());
        let mask = causal_mask(3);
        let (_, w) = mha.forward_with_weights(&mut f, &p, q, kv, Some(&mask)).unwrap();
        for h in w {
            let vals = tape_values(&f, h);
            for (i, row) in vals.chunks(3).enumerate() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for (j, &x) in row.iter().enumerate() {
                    if j > i {
                        assert_eq!(x, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn fully_masked_row_is_numeric_error() {
        let cfg = AttentionConfig::new(4, 1, 8);
        let mut layout = ParamLayout::new();
        let mha = MultiHeadAttention::new(&mut layout, "attn", &cfg);
        let params = ParamSet::init(&layout, &mut ChaCha8Rng::seed_from_u64(1));
        let mut tape = Tape::new();
        let p = params.bind(&mut tape, false);
        let mut f = Fwd::eval(&mut tape);
        let x = f.tape.constant(Tensor::zeros(&[2, 4]));
        let mask = vec![false, false, true, true];
        assert!(matches!(
            mha.forward(&mut f, &p, x, x, Some(&mask)),
            Err(Error::Numeric(_))
        ));
    }

    fn tape_values(f: &Fwd, v: Var) -> Vec<f64> {
        f.tape.value(v).data().to_vec()
    }
}
