use super::{Bound, Fwd, Init, ParamId, ParamLayout};
use crate::error::{Error, Result};
use crate::tensor::Var;

/// Epsilon added to the variance inside the LayerNorm square root.
pub const LN_EPS: f64 = 1e-12;

/// `x · W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    w: ParamId,
    b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(layout: &mut ParamLayout, name: &str, in_dim: usize, out_dim: usize, bias: bool) -> Self {
        layout.scoped(name, |l| Linear {
            w: l.add("weight", &[in_dim, out_dim], Init::XavierUniform),
            b: bias.then(|| l.add("bias", &[out_dim], Init::Zeros)),
            in_dim,
            out_dim,
        })
    }

    pub fn weight(&self) -> ParamId {
        self.w
    }

    pub fn bias(&self) -> Option<ParamId> {
        self.b
    }

    pub fn forward(&self, f: &mut Fwd, p: &Bound, x: Var) -> Result<Var> {
        let y = f.tape.matmul(x, p[self.w])?;
        match self.b {
            Some(b) => f.tape.add_bias(y, p[b]),
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    gain: ParamId,
    bias: ParamId,
}

impl LayerNorm {
    pub fn new(layout: &mut ParamLayout, name: &str, dim: usize) -> Self {
        layout.scoped(name, |l| LayerNorm {
            gain: l.add("gain", &[dim], Init::Ones),
            bias: l.add("bias", &[dim], Init::Zeros),
        })
    }

    pub fn forward(&self, f: &mut Fwd, p: &Bound, x: Var) -> Result<Var> {
        f.tape.layer_norm(x, p[self.gain], p[self.bias], LN_EPS)
    }
}

/// Position-wise linear → ReLU → linear.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub(crate) l1: Linear,
    pub(crate) l2: Linear,
    activation_dropout: f64,
}

impl FeedForward {
    pub fn new(layout: &mut ParamLayout, name: &str, dim: usize, hidden: usize, activation_dropout: f64) -> Self {
        layout.scoped(name, |l| FeedForward {
            l1: Linear::new(l, "fc1", dim, hidden, true),
            l2: Linear::new(l, "fc2", hidden, dim, true),
            activation_dropout,
        })
    }

    pub fn output(&self) -> &Linear {
        &self.l2
    }

    pub fn forward(&self, f: &mut Fwd, p: &Bound, x: Var) -> Result<Var> {
        let h = self.l1.forward(f, p, x)?;
        let h = f.tape.relu(h)?;
        let h = f.dropout(h, self.activation_dropout)?;
        self.l2.forward(f, p, h)
    }
}

/// Lookup table of `count` rows of width `dim`.
#[derive(Clone, Debug)]
pub struct Embedding {
    table: ParamId,
    pub count: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(layout: &mut ParamLayout, name: &str, count: usize, dim: usize, std: f64) -> Self {
        Embedding {
            table: layout.add(name, &[count, dim], Init::Normal { std }),
            count,
            dim,
        }
    }

    pub fn table(&self) -> ParamId {
        self.table
    }

    pub fn forward(&self, f: &mut Fwd, p: &Bound, ids: &[usize]) -> Result<Var> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.count) {
            return Err(Error::Vocabulary(format!(
                "token id {bad} outside an embedding table of {} rows",
                self.count
            )));
        }
        f.tape.gather_rows(p[self.table], ids)
    }
}

/// Same-length temporal convolution with receptive field `rf`.
#[derive(Clone, Debug)]
pub struct Conv1d {
    w: ParamId,
    b: ParamId,
    pub rf: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Conv1d {
    pub fn new(layout: &mut ParamLayout, name: &str, in_dim: usize, out_dim: usize, rf: usize) -> Self {
        layout.scoped(name, |l| Conv1d {
            w: l.add("weight", &[rf * in_dim, out_dim], Init::XavierUniform),
            b: l.add("bias", &[out_dim], Init::Zeros),
            rf,
            in_dim,
            out_dim,
        })
    }

    pub fn weight(&self) -> ParamId {
        self.w
    }

    pub fn forward(&self, f: &mut Fwd, p: &Bound, x: Var) -> Result<Var> {
        f.tape.conv1d(x, p[self.w], p[self.b], self.rf)
    }
}
