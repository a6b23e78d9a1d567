//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward values, so it stays
//! independent of the reverse-mode rules it is used to audit.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Default central-difference step.
pub const STEP: f64 = 1e-5;

/// Denominator floor for the relative error, so gradients that are zero up to
/// round-off compare on an absolute scale.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, REL_FLOOR)`.
    pub max_rel_error: f64,
    /// Number of scalar coordinates compared.
    pub coordinates: usize,
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences for every coordinate of every input.
///
/// `f` receives a fresh tape and one trainable leaf per input and must return
/// a scalar.
pub fn check<F>(inputs: &[Tensor], step: f64, mut f: F) -> Result<GradCheck>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let root = f(&mut tape, &vars)?;
    tape.backward(root)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::inference();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let root = f(&mut tape, &vars)?;
        let v = tape.value(root).item();
        if !v.is_finite() {
            return Err(Error::Numeric("gradient check hit a non-finite loss".into()));
        }
        Ok(v)
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut max_rel_error = 0.0f64;
    let mut coordinates = 0;
    for i in 0..inputs.len() {
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - step;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[i].data()[j];
            let denom = a.abs().max(numeric.abs()).max(REL_FLOOR);
            max_rel_error = max_rel_error.max((a - numeric).abs() / denom);
            coordinates += 1;
        }
    }
    Ok(GradCheck {
        max_rel_error,
        coordinates,
    })
}
