use std::ops::Index;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Initialisation rule for one parameter tensor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Glorot/Xavier uniform over `[fan_in, fan_out]` = the two leading extents.
    XavierUniform,
    Normal { std: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Index of a parameter inside its [`ParamLayout`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered list of parameter names, shapes and initialisers.
///
/// Layers register their parameters while being constructed; the resulting
/// layout is a pure function of the architecture configuration.
#[derive(Clone, Debug, Default)]
pub struct ParamLayout {
    specs: Vec<ParamSpec>,
    scope: Vec<String>,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init) -> ParamId {
        let mut full = self.scope.join(".");
        if !full.is_empty() {
            full.push('.');
        }
        full.push_str(name);
        self.specs.push(ParamSpec {
            name: full,
            shape: shape.to_vec(),
            init,
        });
        ParamId(self.specs.len() - 1)
    }

    /// Runs `f` with `name` pushed onto the naming scope.
    pub fn scoped<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        self.scope.push(name.to_string());
        let out = f(self);
        self.scope.pop();
        out
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.specs.iter().map(|s| s.shape.iter().product::<usize>()).sum()
    }
}

/// Parameter values in layout order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn init<R: Rng + ?Sized>(layout: &ParamLayout, rng: &mut R) -> Self {
        let mut names = Vec::with_capacity(layout.len());
        let mut tensors = Vec::with_capacity(layout.len());
        for spec in layout.specs() {
            names.push(spec.name.clone());
            tensors.push(init_tensor(spec, rng));
        }
        ParamSet { names, tensors }
    }

    /// Builds a set from named tensors, checking them against `layout`.
    pub fn from_named(layout: &ParamLayout, named: Vec<(String, Tensor)>) -> Result<Self> {
        if named.len() != layout.len() {
            return Err(Error::Shape(format!(
                "architecture expects {} parameters, found {}",
                layout.len(),
                named.len()
            )));
        }
        let mut names = Vec::with_capacity(named.len());
        let mut tensors = Vec::with_capacity(named.len());
        for (spec, (name, t)) in layout.specs().iter().zip(named) {
            if spec.name != name || spec.shape != t.shape() {
                return Err(Error::Shape(format!(
                    "parameter {name} {:?} does not match architecture slot {} {:?}",
                    t.shape(),
                    spec.name,
                    spec.shape
                )));
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(ParamSet { names, tensors })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Records every parameter on `tape`, trainable or frozen.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Bound { vars }
    }
}

/// Tape handles for a [`ParamSet`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps handles already on a tape, in layout order. Used to
    /// differentiate with respect to parameters supplied from outside.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients for every parameter after backward (zeros where none arrived).
    pub fn grads(&self, tape: &Tape) -> Vec<Tensor> {
        self.vars
            .iter()
            .map(|&v| tape.grad(v).unwrap_or_else(|| Tensor::zeros(tape.shape(v))))
            .collect()
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

fn init_tensor<R: Rng + ?Sized>(spec: &ParamSpec, rng: &mut R) -> Tensor {
    let n: usize = spec.shape.iter().product();
    let data: Vec<f64> = match spec.init {
        Init::Zeros => vec![0.0; n],
        Init::Ones => vec![1.0; n],
        Init::XavierUniform => {
            let fan_in = spec.shape.first().copied().unwrap_or(1);
            let fan_out = spec.shape.get(1).copied().unwrap_or(1);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            (0..n).map(|_| dist.sample(rng)).collect()
        }
        Init::Normal { std } => {
            let dist = Normal::new(0.0, std).expect("positive std");
            (0..n).map(|_| dist.sample(rng)).collect()
        }
    };
    Tensor::new(spec.shape.clone(), data).expect("layout shapes are positive")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scoped_names_and_deterministic_init() {
        let mut layout = ParamLayout::new();
        let w = layout.scoped("enc", |l| l.scoped("ffn", |l| l.add("w", &[4, 8], Init::XavierUniform)));
        let b = layout.add("bias", &[8], Init::Zeros);
        assert_eq!(layout.specs()[0].name, "enc.ffn.w");
        assert_eq!(layout.specs()[1].name, "bias");

        let a = ParamSet::init(&layout, &mut ChaCha8Rng::seed_from_u64(7));
        let c = ParamSet::init(&layout, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, c);
        assert!(a.get(b).data().iter().all(|&v| v == 0.0));
        let limit = (6.0f64 / 12.0).sqrt();
        assert!(a.get(w).data().iter().all(|v| v.abs() <= limit));
    }

    #[test]
    fn from_named_rejects_shape_mismatch() {
        let mut layout = ParamLayout::new();
        layout.add("w", &[2, 2], Init::Zeros);
        let bad = vec![("w".to_string(), Tensor::zeros(&[2, 3]))];
        assert!(ParamSet::from_named(&layout, bad).is_err());
        let good = vec![("w".to_string(), Tensor::zeros(&[2, 2]))];
        assert!(ParamSet::from_named(&layout, good).is_ok());
    }
}
