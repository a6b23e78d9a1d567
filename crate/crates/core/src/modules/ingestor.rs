use super::arch::{IngestorConfig, IngestorKind};
use super::marginal::argmax;
use crate::error::{Error, Result};
use crate::nn::{AttentionConfig, Bound, Conv1d, Embedding, EncoderBlock, Fwd, Init, ParamId, ParamLayout};
use crate::nn::{PositionalEmbedding, PositionalKind};
use crate::tensor::{Tensor, Var};

#[derive(Clone, Debug)]
enum Front {
    WEmb { weight: ParamId },
    BeamConv { embed: Embedding, conv: Conv1d },
}

/// Turns a `[K, V]` marginal sequence into `[K, d]` hidden states.
#[derive(Clone, Debug)]
pub struct Ingestor {
    cfg: IngestorConfig,
    vocab_size: usize,
    front: Front,
    pe: PositionalEmbedding,
    blocks: Vec<EncoderBlock>,
    dropout: f64,
}

impl Ingestor {
    pub fn new(
        layout: &mut ParamLayout,
        name: &str,
        cfg: &IngestorConfig,
        vocab_size: usize,
        att: &AttentionConfig,
        max_positions: usize,
    ) -> Result<Self> {
        cfg.validate(vocab_size)?;
        let d = att.model_dim;
        layout.scoped(name, |l| {
            let front = match cfg.kind {
                IngestorKind::WEmb => Front::WEmb {
                    weight: l.add(
                        "weight",
                        &[cfg.receptive_field * vocab_size, d],
                        Init::Normal {
                            std: 1.0 / (cfg.receptive_field as f64).sqrt(),
                        },
                    ),
                },
                IngestorKind::BeamConv => Front::BeamConv {
                    embed: Embedding::new(l, "embed", vocab_size, cfg.embed_dim, 1.0),
                    conv: Conv1d::new(l, "conv", cfg.beam * cfg.embed_dim, d, cfg.receptive_field),
                },
            };
            let pe = PositionalEmbedding::new(l, "pos", PositionalKind::Sinusoidal, max_positions, d);
            let blocks = (0..cfg.layers)
                .map(|i| EncoderBlock::new(l, &format!("block{i}"), att))
                .collect();
            Ok(Ingestor {
                cfg: cfg.clone(),
                vocab_size,
                front,
                pe,
                blocks,
                dropout: att.dropout,
            })
        })
    }

    pub fn config(&self) -> &IngestorConfig {
        &self.cfg
    }

    pub fn forward(&self, f: &mut Fwd, p: &Bound, marginals: Var) -> Result<Var> {
        let shape = f.tape.shape(marginals).to_vec();
        if shape.len() != 2 || shape[1] != self.vocab_size {
            return Err(Error::Shape(format!(
                "ingestor expects [K, {}] marginals, got {shape:?}",
                self.vocab_size
            )));
        }
        let x = match &self.front {
            Front::WEmb { weight } => {
                let windows = if self.cfg.receptive_field == 1 {
                    marginals
                } else {
                    f.tape.unfold_time(marginals, self.cfg.receptive_field)?
                };
                f.tape.matmul(windows, p[*weight])?
            }
            Front::BeamConv { embed, conv } => {
                let ids = top_indices(f.tape.value(marginals), self.cfg.beam);
                let e = embed.forward(f, p, &ids)?;
                let e = f.tape.reshape(e, &[shape[0], self.cfg.beam * self.cfg.embed_dim])?;
                conv.forward(f, p, e)?
            }
        };
        let x = self.pe.add_to(f, p, x)?;
        let mut x = f.dropout(x, self.dropout)?;
        for b in &self.blocks {
            x = b.forward(f, p, x)?;
        }
        Ok(x)
    }
}

/// The `beam` most probable ids in every row, best first, lower id on ties.
pub fn top_indices(probs: &Tensor, beam: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(probs.rows() * beam);
    for k in 0..probs.rows() {
        let row = probs.row(k);
        if beam == 1 {
            out.push(argmax(row));
            continue;
        }
        let mut order: Vec<usize> = (0..row.len()).collect();
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        out.extend_from_slice(&order[..beam]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamSet;
    use crate::tensor::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn top_indices_break_ties_low() {
        let t = Tensor::from_rows(&[vec![0.3, 0.3, 0.4], vec![0.5, 0.25, 0.25]]).unwrap();
        assert_eq!(top_indices(&t, 2), vec![2, 0, 0, 1]);
        assert_eq!(top_indices(&t, 1), vec![2, 0]);
    }

    #[test]
    fn beam_conv_blocks_gradient() {
        let att = AttentionConfig::new(8, 2, 16);
        let mut layout = ParamLayout::new();
        let ing = Ingestor::new(&mut layout, "ing", &IngestorConfig::beam_conv(1, 2, 4), 5, &att, 16).unwrap();
        let params = ParamSet::init(&layout, &mut ChaCha8Rng::seed_from_u64(1));
        let mut tape = Tape::new();
        let p = params.bind(&mut tape, true);
        let m = tape.param(Tensor::filled(&[3, 5], 0.2));
        let mut f = Fwd::eval(&mut tape);
        let h = ing.forward(&mut f, &p, m).unwrap();
        let s = tape.sum(h).unwrap();
        tape.backward(s).unwrap();
        assert!(tape.grad(m).is_none());
    }

    #[test]
    fn wemb_passes_gradient() {
        let att = AttentionConfig::new(8, 2, 16);
        let mut layout = ParamLayout::new();
        let mut cfg = IngestorConfig::wemb(0);
        cfg.receptive_field = 3;
        let ing = Ingestor::new(&mut layout, "ing", &cfg, 5, &att, 16).unwrap();
        let params = ParamSet::init(&layout, &mut ChaCha8Rng::seed_from_u64(1));
        let mut tape = Tape::new();
        let p = params.bind(&mut tape, true);
        let m = tape.param(Tensor::filled(&[3, 5], 0.2));
        let mut f = Fwd::eval(&mut tape);
        let h = ing.forward(&mut f, &p, m).unwrap();
        let s = tape.sum(h).unwrap();
        tape.backward(s).unwrap();
        assert!(tape.grad(m).unwrap().data().iter().any(|g| *g != 0.0));
    }
}
