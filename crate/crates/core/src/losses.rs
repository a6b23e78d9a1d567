//! CTC marginal likelihood, label-smoothed cross-entropy and the joint
//! multi-module objective.
//!
//! CTC is computed as a forward (alpha) recursion of tape operations in log
//! space, so its gradient comes from the same reverse pass as everything else.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Tolerance on `Σ exp(log_probs)` per row.
const ROW_SUM_TOL: f64 = 1e-8;

/// Label sequence for a CTC loss; ids index the CTC vocabulary and never
/// equal the blank.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CtcTarget {
    labels: Vec<usize>,
}

impl CtcTarget {
    pub fn new(labels: Vec<usize>, blank: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Shape("CTC target must hold at least one label".into()));
        }
        if labels.contains(&blank) {
            return Err(Error::Vocabulary(format!("CTC target contains the blank id {blank}")));
        }
        Ok(CtcTarget { labels })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn adjacent_repeats(&self) -> usize {
        self.labels.windows(2).filter(|w| w[0] == w[1]).count()
    }

    /// Fewest frames that can emit this target.
    pub fn min_frames(&self) -> usize {
        self.len() + self.adjacent_repeats()
    }
}

/// Negative log-likelihood `−log Σ_z Π_t P[t, z_t]` over all alignments `z`
/// of `target` to the `T` rows of `log_probs: [T, V]`.
///
/// Not normalised by target length; [`joint_loss`] applies that.
pub fn ctc_loss(tape: &mut Tape, log_probs: Var, target: &CtcTarget, blank: usize) -> Result<Var> {
    let (frames, vocab) = match tape.shape(log_probs) {
        [t, v] => (*t, *v),
        other => return Err(Error::Shape(format!("CTC log-probs must be [T, V], got {other:?}"))),
    };
    if blank >= vocab {
        return Err(Error::Vocabulary(format!("blank id {blank} outside vocabulary of {vocab}")));
    }
    if let Some(&bad) = target.labels().iter().find(|&&l| l >= vocab) {
        return Err(Error::Vocabulary(format!("CTC label {bad} outside vocabulary of {vocab}")));
    }
    for (t, row) in tape.value(log_probs).data().chunks(vocab).enumerate() {
        let mass: f64 = row.iter().map(|v| v.exp()).sum();
        if !(mass - 1.0).abs().le(&ROW_SUM_TOL) {
            return Err(Error::Numeric(format!(
                "CTC input row {t} has probability mass {mass}, expected 1"
            )));
        }
    }
    if frames < target.min_frames() {
        return Err(Error::InfeasibleAlignment {
            target_len: target.len(),
            repeats: target.adjacent_repeats(),
            required: target.min_frames(),
            frames,
        });
    }

    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(blank);
    for &l in target.labels() {
        ext.push(l);
        ext.push(blank);
    }
    let states = ext.len();
    // A state may be entered from two states back only for a label that
    // differs from the previous label.
    let no_skip: Vec<bool> = (0..states)
        .map(|s| s < 2 || ext[s] == blank || ext[s] == ext[s - 2])
        .collect();
    let not_initial: Vec<bool> = (0..states).map(|s| s >= 2).collect();

    let emissions = tape.select_cols(log_probs, &ext)?;
    let first = tape.slice_rows(emissions, 0, 1)?;
    let mut alpha = tape.masked_fill(first, &not_initial, f64::NEG_INFINITY)?;
    for t in 1..frames {
        let stay = alpha;
        let step = tape.shift_cols(alpha, 1, f64::NEG_INFINITY)?;
        let skip = tape.shift_cols(alpha, 2, f64::NEG_INFINITY)?;
        let skip = tape.masked_fill(skip, &no_skip, f64::NEG_INFINITY)?;
        let stacked = tape.concat(&[stay, step, skip], 0)?;
        let merged = tape.logsumexp(stacked, 0)?;
        let merged = tape.reshape(merged, &[1, states])?;
        let emit = tape.slice_rows(emissions, t, 1)?;
        alpha = tape.add(merged, emit)?;
    }
    let ends = tape.select_cols(alpha, &[states - 2, states - 1])?;
    let total = tape.logsumexp(ends, 1)?;
    let total = tape.reshape(total, &[])?;
    if tape.value(total).item() == f64::NEG_INFINITY {
        return Err(Error::Numeric("CTC target has zero probability under the inputs".into()));
    }
    tape.scale(total, -1.0)
}

/// Mean over non-padding positions of
/// `(1 − s)·(−log p[target]) + s·mean_v(−log p[v])`.
pub fn label_smoothed_ce(
    tape: &mut Tape,
    logits: Var,
    targets: &[usize],
    smoothing: f64,
    pad: Option<usize>,
) -> Result<Var> {
    let (n, vocab) = match tape.shape(logits) {
        [n, v] => (*n, *v),
        other => return Err(Error::Shape(format!("logits must be [N, V], got {other:?}"))),
    };
    if targets.len() != n {
        return Err(Error::Dimension {
            op: "label_smoothed_ce",
            lhs: vec![n, vocab],
            rhs: vec![targets.len()],
        });
    }
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::Config(format!("label smoothing {smoothing} outside [0, 1)")));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= vocab) {
        return Err(Error::Vocabulary(format!("target id {bad} outside vocabulary of {vocab}")));
    }
    let counted = targets.iter().filter(|&&t| Some(t) != pad).count();
    if counted == 0 {
        return Err(Error::Shape("every target position is padding".into()));
    }
    let uniform = smoothing / vocab as f64;
    let mut weights = vec![0.0; n * vocab];
    for (i, &t) in targets.iter().enumerate() {
        if Some(t) == pad {
            continue;
        }
        let row = &mut weights[i * vocab..(i + 1) * vocab];
        row.iter_mut().for_each(|w| *w = uniform);
        row[t] += 1.0 - smoothing;
    }
    let lp = tape.log_softmax(logits, 1)?;
    let w = tape.constant(crate::tensor::Tensor::new(vec![n, vocab], weights)?);
    let weighted = tape.mul(lp, w)?;
    let total = tape.sum(weighted)?;
    tape.scale(total, -1.0 / counted as f64)
}

/// Per-term weights of the joint objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointLossWeights {
    /// One weight per CTC-emitting module, in chain order.
    pub ctc: Vec<f64>,
    pub ce: f64,
}

impl JointLossWeights {
    /// All weights 1.0.
    pub fn uniform(ctc_terms: usize) -> Self {
        JointLossWeights {
            ctc: vec![1.0; ctc_terms],
            ce: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.ctc.iter().chain(std::iter::once(&self.ce));
        if all.clone().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if !all.into_iter().any(|&w| w > 0.0) {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

/// One CTC term of the joint objective: a module's `[K, V]` log-marginals and its target.
pub struct CtcTerm<'a> {
    pub log_probs: Var,
    pub target: &'a CtcTarget,
    pub blank: usize,
}

/// Scalar objective plus its individual (unweighted) terms.
#[derive(Clone, Debug)]
pub struct JointLoss {
    pub total: Var,
    /// Length-normalised CTC terms, chain order.
    pub ctc: Vec<Var>,
    pub ce: Var,
}

/// `w_ce·CE + Σ_i w_i·CTC_i / N_i` over a chain of `M = ctc_terms.len() + 1` modules.
pub fn joint_loss(
    tape: &mut Tape,
    ctc_terms: &[CtcTerm],
    decoder_logits: Var,
    ce_target: &[usize],
    smoothing: f64,
    pad: Option<usize>,
    weights: &JointLossWeights,
) -> Result<JointLoss> {
    if ctc_terms.is_empty() {
        return Err(Error::Config(
            "a modular chain needs at least one CTC-emitting module before the decoder".into(),
        ));
    }
    if weights.ctc.len() != ctc_terms.len() {
        return Err(Error::Config(format!(
            "{} CTC weights for {} CTC terms",
            weights.ctc.len(),
            ctc_terms.len()
        )));
    }
    weights.validate()?;
    let ce = label_smoothed_ce(tape, decoder_logits, ce_target, smoothing, pad)?;
    let mut total = tape.scale(ce, weights.ce)?;
    let mut ctc = Vec::with_capacity(ctc_terms.len());
    for (term, &w) in ctc_terms.iter().zip(&weights.ctc) {
        let raw = ctc_loss(tape, term.log_probs, term.target, term.blank)?;
        let norm = tape.scale(raw, 1.0 / term.target.len() as f64)?;
        ctc.push(norm);
        if w > 0.0 {
            let weighted = tape.scale(norm, w)?;
            total = tape.add(total, weighted)?;
        }
    }
    Ok(JointLoss { total, ctc, ce })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn log_rows(rows: &[&[f64]]) -> Tensor {
        let r: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect();
        Tensor::from_rows(&r).unwrap()
    }

    #[test]
    fn single_frame_single_label() {
        let mut tape = Tape::new();
        let lp = tape.constant(log_rows(&[&[0.1, 0.9]]));
        let target = CtcTarget::new(vec![1], 0).unwrap();
        let loss = ctc_loss(&mut tape, lp, &target, 0).unwrap();
        assert!((tape.value(loss).item() - (-(0.9f64).ln())).abs() < 1e-12);
        assert!((tape.value(loss).item() - 0.10536).abs() < 1e-5);
    }

    #[test]
    fn two_frames_uniform() {
        // Paths aa, a-, -a out of four: probability 0.75.
        let mut tape = Tape::new();
        let lp = tape.constant(log_rows(&[&[0.5, 0.5], &[0.5, 0.5]]));
        let target = CtcTarget::new(vec![1], 0).unwrap();
        let loss = ctc_loss(&mut tape, lp, &target, 0).unwrap();
        assert!((tape.value(loss).item() + 0.75f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn infeasible_target_is_reported() {
        let mut tape = Tape::new();
        let lp = tape.constant(log_rows(&[&[0.5, 0.5], &[0.5, 0.5]]));
        let target = CtcTarget::new(vec![1, 1], 0).unwrap();
        assert!(matches!(
            ctc_loss(&mut tape, lp, &target, 0),
            Err(Error::InfeasibleAlignment { required: 3, frames: 2, .. })
        ));
    }

    #[test]
    fn unnormalised_rows_are_rejected() {
        let mut tape = Tape::new();
        let lp = tape.constant(log_rows(&[&[0.5, 0.6]]));
        let target = CtcTarget::new(vec![1], 0).unwrap();
        assert!(matches!(ctc_loss(&mut tape, lp, &target, 0), Err(Error::Numeric(_))));
    }

    #[test]
    fn target_rejects_blank() {
        assert!(CtcTarget::new(vec![1, 0], 0).is_err());
        assert!(CtcTarget::new(vec![], 0).is_err());
    }

    #[test]
    fn ce_perfect_and_uniform() {
        let mut tape = Tape::new();
        let logits = tape.constant(Tensor::from_rows(&[vec![0.0, 800.0, 0.0]]).unwrap());
        let l = label_smoothed_ce(&mut tape, logits, &[1], 0.0, None).unwrap();
        assert!(tape.value(l).item().abs() < 1e-12);

        let logits = tape.constant(Tensor::zeros(&[2, 4]));
        let l = label_smoothed_ce(&mut tape, logits, &[3, 0], 0.0, None).unwrap();
        assert!((tape.value(l).item() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ce_skips_padding_and_checks_ids() {
        let mut tape = Tape::new();
        let logits = tape.constant(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 0.0, 0.0, 0.0]).unwrap());
        let with_pad = label_smoothed_ce(&mut tape, logits, &[2, 0], 0.0, Some(0)).unwrap();
        let row0 = tape.slice_rows(logits, 0, 1).unwrap();
        let alone = label_smoothed_ce(&mut tape, row0, &[2], 0.0, None).unwrap();
        assert!((tape.value(with_pad).item() - tape.value(alone).item()).abs() < 1e-15);
        assert!(matches!(
            label_smoothed_ce(&mut tape, logits, &[3, 0], 0.1, None),
            Err(Error::Vocabulary(_))
        ));
    }

    #[test]
    fn joint_loss_requires_a_ctc_module() {
        let mut tape = Tape::new();
        let logits = tape.constant(Tensor::zeros(&[1, 3]));
        let err = joint_loss(&mut tape, &[], logits, &[0], 0.1, None, &JointLossWeights::uniform(0));
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn weights_validation() {
        assert!(JointLossWeights::uniform(2).validate().is_ok());
        let zero = JointLossWeights { ctc: vec![0.0], ce: 0.0 };
        assert!(zero.validate().is_err());
        let neg = JointLossWeights { ctc: vec![-1.0], ce: 1.0 };
        assert!(neg.validate().is_err());
    }
}
