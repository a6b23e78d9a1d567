use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Tolerance on per-row probability mass.
pub const ROW_SUM_TOL: f64 = 1e-8;

/// The inter-module wire type: `K` categorical distributions over a CTC
/// vocabulary identified by its fingerprint. Rows are probabilities, not logits.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalSequence {
    probs: Tensor,
    fingerprint: u64,
}

impl MarginalSequence {
    pub fn new(probs: Tensor, fingerprint: u64) -> Result<Self> {
        if probs.shape().len() != 2 {
            return Err(Error::Shape(format!("marginals must be [K, V], got {:?}", probs.shape())));
        }
        for (k, row) in probs.data().chunks(probs.cols()).enumerate() {
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::Numeric(format!("marginal row {k} has a negative or non-finite entry")));
            }
            let mass: f64 = row.iter().sum();
            if (mass - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Numeric(format!("marginal row {k} sums to {mass}")));
            }
        }
        Ok(MarginalSequence { probs, fingerprint })
    }

    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Number of positions `K`.
    pub fn len(&self) -> usize {
        self.probs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vocab_size(&self) -> usize {
        self.probs.cols()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        self.probs.row(k)
    }

    /// Per-position argmax, lower index on ties.
    pub fn argmax_path(&self) -> Vec<usize> {
        (0..self.len()).map(|k| argmax(self.row(k))).collect()
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Collapses adjacent repeats of a frame-level path, then drops blanks.
pub fn collapse_path(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &s in path {
        if Some(s) != prev && s != blank {
            out.push(s);
        }
        prev = Some(s);
    }
    out
}

/// Greedy CTC decoding: argmax per position, collapse repeats, drop blanks.
pub fn greedy_ctc_decode(m: &MarginalSequence, blank: usize) -> Vec<usize> {
    collapse_path(&m.argmax_path(), blank)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot_rows(path: &[usize], v: usize) -> MarginalSequence {
        let rows: Vec<Vec<f64>> = path
            .iter()
            .map(|&s| (0..v).map(|j| if j == s { 1.0 } else { 0.0 }).collect())
            .collect();
        MarginalSequence::new(Tensor::from_rows(&rows).unwrap(), 0).unwrap()
    }

    #[test]
    fn collapse_rule() {
        // [blank, a, a, blank, b] → a b
        let m = one_hot_rows(&[0, 1, 1, 0, 2], 3);
        assert_eq!(greedy_ctc_decode(&m, 0), vec![1, 2]);
        let m = one_hot_rows(&[0, 0, 0], 3);
        assert!(greedy_ctc_decode(&m, 0).is_empty());
        // a blank a keeps both
        assert_eq!(collapse_path(&[1, 0, 1], 0), vec![1, 1]);
    }

    #[test]
    fn argmax_prefers_lower_index() {
        assert_eq!(argmax(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(argmax(&[0.1, 0.45, 0.45]), 1);
    }

    #[test]
    fn validation() {
        let bad = Tensor::from_rows(&[vec![0.5, 0.6]]).unwrap();
        assert!(MarginalSequence::new(bad, 0).is_err());
        let neg = Tensor::from_rows(&[vec![1.5, -0.5]]).unwrap();
        assert!(MarginalSequence::new(neg, 0).is_err());
        let ok = Tensor::from_rows(&[vec![0.25, 0.75]]).unwrap();
        assert_eq!(MarginalSequence::new(ok, 9).unwrap().fingerprint(), 9);
    }
}
