mod common;

use std::collections::HashMap;

use legonn::losses::{ctc_loss, CtcTarget};
use legonn::metrics::{bleu, edit_distance, retention_pct, wer, Direction};
use legonn::modules::{collapse_path, Interface, LengthMode, OlcConfig, QueryPositions, Ratio};
use legonn::tasks::{pronunciations, write_dataset, Source, Split, Task, TaskKind, TaskSpec};
use legonn::tensor::{Tape, Tensor};
use proptest::prelude::*;

/// Edit distance by memoised recursion on suffixes, independent of the
/// row-rolling table in the library.
fn edit_oracle(a: &[u8], b: &[u8]) -> usize {
    fn go(a: &[u8], b: &[u8], memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if a.is_empty() || b.is_empty() {
            return a.len() + b.len();
        }
        let key = (a.len(), b.len());
        if let Some(&v) = memo.get(&key) {
            return v;
        }
        let v = (go(&a[1..], &b[1..], memo) + usize::from(a[0] != b[0]))
            .min(go(&a[1..], b, memo) + 1)
            .min(go(a, &b[1..], memo) + 1);
        memo.insert(key, v);
        v
    }
    go(a, b, &mut HashMap::new())
}

/// Straight-line BLEU for one pair: count every n-gram by scanning.
fn bleu_oracle(h: &[u8], r: &[u8]) -> f64 {
    let count = |s: &[u8], g: &[u8]| (0..s.len().saturating_sub(g.len() - 1)).filter(|&i| &s[i..i + g.len()] == g).count();
    let mut log_p = 0.0;
    for n in 1..=4 {
        let total = h.len().saturating_sub(n - 1);
        let mut seen: Vec<&[u8]> = Vec::new();
        let mut matched = 0;
        for i in 0..total {
            let g = &h[i..i + n];
            if seen.contains(&g) {
                continue;
            }
            seen.push(g);
            matched += count(h, g).min(count(r, g));
        }
        if n == 1 {
            if matched == 0 {
                return 0.0;
            }
            log_p += (matched as f64 / total as f64).ln();
        } else {
            log_p += ((matched + 1) as f64 / (total + 1) as f64).ln();
        }
    }
    let bp = if h.len() < r.len() { (1.0 - r.len() as f64 / h.len() as f64).exp() } else { 1.0 };
    bp * (log_p / 4.0).exp()
}

fn seq(max: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..5, 0..=max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn edit_distance_matches_recursive_oracle(a in seq(10), b in seq(10)) {
        prop_assert_eq!(edit_distance(&a, &b), edit_oracle(&a, &b));
    }

    #[test]
    fn edit_distance_triangle_and_symmetry(a in seq(10), b in seq(10), c in seq(10)) {
        prop_assert_eq!(edit_distance(&a, &b), edit_distance(&b, &a));
        prop_assert!(edit_distance(&a, &c) <= edit_distance(&a, &b) + edit_distance(&b, &c));
    }

    #[test]
    fn wer_invariant_under_relabeling(a in seq(10), b in seq(10), shift in 1u8..5) {
        let relabel = |s: &[u8]| s.iter().map(|x| (x + shift) % 5).collect::<Vec<_>>();
        prop_assert_eq!(wer(&a, &b).wer, wer(&relabel(&a), &relabel(&b)).wer);
    }

    #[test]
    fn bleu_matches_straight_line_counting(h in seq(8), r in seq(8)) {
        prop_assume!(!h.is_empty());
        let got = bleu(&[h.clone()], &[r.clone()], 4).unwrap();
        prop_assert!((got - bleu_oracle(&h, &r)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn bleu_of_identity_is_one(h in prop::collection::vec(0u8..5, 1..8)) {
        prop_assert!((bleu(&[h.clone()], &[h], 4).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn collapse_never_grows_and_drops_blanks(path in seq(12)) {
        let c = collapse_path(&path.iter().map(|&x| x as usize).collect::<Vec<_>>(), 0);
        prop_assert!(c.len() <= path.len());
        prop_assert!(!c.contains(&0));
    }

    #[test]
    fn ctc_is_nonnegative_and_label_permutation_invariant(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let inst = common::ctc_instance(&mut r);
        let v = inst.log_probs.shape()[1];
        prop_assume!(v > 2);
        let loss = |lp: &Tensor, t: &[usize]| {
            let mut tape = Tape::inference();
            let x = tape.constant(lp.clone());
            ctc_loss(&mut tape, x, &CtcTarget::new(t.to_vec(), 0).unwrap(), 0).map(|l| tape.value(l).item()).ok()
        };
        // swap labels 1 and 2 in both the columns and the target
        let swap = |s: usize| match s { 1 => 2, 2 => 1, s => s };
        let (t, cols) = (inst.log_probs.shape()[0], v);
        let mut data = inst.log_probs.data().to_vec();
        for i in 0..t {
            data.swap(i * cols + 1, i * cols + 2);
        }
        let permuted = Tensor::new(vec![t, cols], data).unwrap();
        let target2: Vec<usize> = inst.target.iter().map(|&s| swap(s)).collect();
        let (a, b) = (loss(&inst.log_probs, &inst.target), loss(&permuted, &target2));
        prop_assert_eq!(a.is_some(), b.is_some());
        if let (Some(a), Some(b)) = (a, b) {
            prop_assert!(a >= -1e-12);
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn olc_length_is_monotone_and_capped(t in 1usize..600, num in 1u64..8, den in 1u64..4, cap in 1usize..400, up in any::<bool>()) {
        let cfg = OlcConfig {
            mode: if up { LengthMode::Upsample } else { LengthMode::Downsample },
            ratio: Ratio::new(num, den).unwrap(),
            max_length: cap,
            layers: 1,
            query_positions: QueryPositions::Output,
        };
        let (k, k1) = (cfg.output_len(t), cfg.output_len(t + 1));
        prop_assert!(k <= k1);
        prop_assert!((1..=cap).contains(&k));
        prop_assert_eq!(k, common::olc_len_oracle(t, up, num, den, cap));
    }

    #[test]
    fn interface_text_round_trips(fp in any::<u64>(), dim in 1usize..4096, which in 0u8..4) {
        let i = match which {
            0 => Interface::Frames { dim },
            1 => Interface::Tokens { fingerprint: fp },
            2 => Interface::Marginal { fingerprint: fp },
            _ => Interface::Hidden { dim },
        };
        prop_assert_eq!(i.to_string().parse::<Interface>().unwrap(), i);
    }
}

#[test]
fn retention_hand_computation() {
    // BLEU 0.30 against a reference of 0.40 keeps 75%.
    assert!((retention_pct(0.40, 0.30, Direction::HigherIsBetter) - 75.0).abs() < 1e-12);
    // WER 0.25 against a reference of 0.20 keeps 80%.
    assert!((retention_pct(0.20, 0.25, Direction::LowerIsBetter) - 80.0).abs() < 1e-12);
}

#[test]
fn generators_are_deterministic_and_respect_invariants() {
    for kind in TaskKind::ALL {
        let task = Task::new(TaskSpec::new(kind)).unwrap();
        let a = task.generate(60, Split::Train, 4).unwrap();
        let b = task.generate(60, Split::Train, 4).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        write_dataset(&a, &mut x).unwrap();
        write_dataset(&b, &mut y).unwrap();
        assert_eq!(x, y);
        let prons = pronunciations();
        for ex in &a.examples {
            match &ex.source {
                Source::Tokens(src) => {
                    let (s, t) = (src.len() as f64, ex.target.len() as f64);
                    assert!(s <= 1.5 * t && t <= 1.5 * s, "{s} vs {t}");
                }
                Source::Frames(f) => {
                    let phones: usize = ex.target.iter().map(|&w| prons[w - 1].len()).sum();
                    assert_eq!(ex.phonemes.as_ref().unwrap().len(), phones);
                    let frames = f.shape()[0];
                    assert!((3 * phones..=5 * phones).contains(&frames), "{frames} for {phones}");
                }
            }
        }
    }
}

/// Splits are assigned on the underlying sentence, which the target
/// determines (homographs can make two sentences share a source).
#[test]
fn splits_are_disjoint() {
    let task = Task::new(TaskSpec::new(TaskKind::MtA)).unwrap();
    let key = |s: Split| -> std::collections::HashSet<Vec<usize>> {
        task.generate(400, s, 1)
            .unwrap()
            .examples
            .into_iter()
            .map(|e| e.target)
            .collect()
    };
    let (tr, te) = (key(Split::Train), key(Split::Test));
    assert!(tr.is_disjoint(&te));
}

#[test]
fn all_tasks_share_the_target_vocabulary() {
    let fp = Task::target_vocab().fingerprint();
    for kind in TaskKind::ALL {
        let _ = Task::new(TaskSpec::new(kind)).unwrap();
        assert_eq!(Task::target_vocab().fingerprint(), fp);
    }
    assert!(pronunciations().iter().all(|p| (1..=3).contains(&p.len()) && p.iter().all(|&x| x < 12)));
}
