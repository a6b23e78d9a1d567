use serde::{Deserialize, Serialize};

use super::{Bound, Fwd, Init, ParamId, ParamLayout};
use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

/// Std of the learnable positional table at initialisation.
pub const LEARNABLE_PE_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalKind {
    Sinusoidal,
    Learnable,
    SumOfBoth,
}

/// Interleaved sin/cos table for positions `0..len`:
/// `pe[p, 2i] = sin(p / 10000^(2i/dim))`, `pe[p, 2i+1] = cos(…)`.
pub fn sinusoidal_table(len: usize, dim: usize) -> Tensor {
    sinusoidal_table_scaled(len, dim, 1.0)
}

/// Rows of the sinusoidal table at the fractional positions `p·scale`.
pub fn sinusoidal_table_scaled(len: usize, dim: usize, scale: f64) -> Tensor {
    let mut data = vec![0.0; len * dim];
    for p in 0..len {
        for j in 0..dim {
            let i = (j / 2) as f64;
            let angle = p as f64 * scale / 10000f64.powf(2.0 * i / dim as f64);
            data[p * dim + j] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![len, dim], data).expect("positive extents")
}

#[derive(Clone, Debug)]
pub struct PositionalEmbedding {
    pub kind: PositionalKind,
    pub max_positions: usize,
    pub dim: usize,
    learnable: Option<ParamId>,
}

impl PositionalEmbedding {
    pub fn new(layout: &mut ParamLayout, name: &str, kind: PositionalKind, max_positions: usize, dim: usize) -> Self {
        let learnable = matches!(kind, PositionalKind::Learnable | PositionalKind::SumOfBoth)
            .then(|| layout.add(name, &[max_positions, dim], Init::Normal { std: LEARNABLE_PE_STD }));
        PositionalEmbedding {
            kind,
            max_positions,
            dim,
            learnable,
        }
    }

    /// `[len, dim]` embeddings for positions `0..len`.
    pub fn forward(&self, f: &mut Fwd, p: &Bound, len: usize) -> Result<Var> {
        self.forward_scaled(f, p, len, 1.0)
    }

    /// Like [`forward`](Self::forward), with the sinusoid read at `p·scale`;
    /// the learnable rows are still `0..len`.
    pub fn forward_scaled(&self, f: &mut Fwd, p: &Bound, len: usize, scale: f64) -> Result<Var> {
        if len == 0 || len > self.max_positions {
            return Err(Error::Capacity(format!(
                "{len} positions requested, table holds {}",
                self.max_positions
            )));
        }
        let sin = match self.kind {
            PositionalKind::Learnable => None,
            _ => Some(f.tape.constant(sinusoidal_table_scaled(len, self.dim, scale))),
        };
        let learned = match self.learnable {
            Some(id) => Some(f.tape.slice_rows(p[id], 0, len)?),
            None => None,
        };
        match (sin, learned) {
            (Some(s), Some(l)) => f.tape.add(s, l),
            (Some(s), None) => Ok(s),
            (None, Some(l)) => Ok(l),
            (None, None) => unreachable!("every kind has a table"),
        }
    }

    /// Adds positions `0..T` to `x: [T, dim]`.
    pub fn add_to(&self, f: &mut Fwd, p: &Bound, x: Var) -> Result<Var> {
        let len = f.tape.shape(x)[0];
        let pe = self.forward(f, p, len)?;
        f.tape.add(x, pe)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamSet;
    use crate::tensor::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn position_zero_alternates() {
        let t = sinusoidal_table(3, 6);
        assert_eq!(t.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(sinusoidal_table(3, 6), t);
    }

    #[test]
    fn sum_of_both_is_elementwise_sum() {
        let mut layout = ParamLayout::new();
        let pe = PositionalEmbedding::new(&mut layout, "pe", PositionalKind::SumOfBoth, 10, 4);
        let params = ParamSet::init(&layout, &mut ChaCha8Rng::seed_from_u64(3));
        let mut tape = Tape::new();
        let p = params.bind(&mut tape, false);
        let mut f = Fwd::eval(&mut tape);
        let out = pe.forward(&mut f, &p, 5).unwrap();
        let table = params.tensors()[0].clone();
        assert_eq!(table.shape(), &[10, 4]);
        let sin = sinusoidal_table(5, 4);
        for (k, &v) in f.tape.value(out).data().iter().enumerate() {
            assert_eq!(v, sin.data()[k] + table.data()[k]);
        }
    }

    #[test]
    fn capacity_error_beyond_table() {
        let mut layout = ParamLayout::new();
        let pe = PositionalEmbedding::new(&mut layout, "pe", PositionalKind::Sinusoidal, 4, 4);
        let params = ParamSet::init(&layout, &mut ChaCha8Rng::seed_from_u64(3));
        let mut tape = Tape::new();
        let p = params.bind(&mut tape, false);
        let mut f = Fwd::eval(&mut tape);
        assert!(matches!(pe.forward(&mut f, &p, 5), Err(Error::Capacity(_))));
    }
}
