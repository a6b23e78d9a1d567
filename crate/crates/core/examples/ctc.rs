//! CTC loss on a hand-sized instance and greedy collapse of an argmax path.

use legonn::losses::{ctc_loss, CtcTarget};
use legonn::modules::collapse_path;
use legonn::tensor::{Tape, Tensor};

fn main() -> legonn::Result<()> {
    // 4 frames over {blank, a, b}
    let probs = [
        [0.6, 0.3, 0.1],
        [0.2, 0.7, 0.1],
        [0.5, 0.1, 0.4],
        [0.1, 0.1, 0.8],
    ];
    let log_probs = Tensor::new(vec![4, 3], probs.iter().flatten().map(|p: &f64| p.ln()).collect())?;
    let mut tape = Tape::new();
    let lp = tape.param(log_probs);
    for target in [vec![1, 2], vec![2, 1], vec![1, 1]] {
        let loss = ctc_loss(&mut tape, lp, &CtcTarget::new(target.clone(), 0)?, 0)?;
        println!("target {target:?}: -log p = {:.4}", tape.value(loss).item());
    }
    // a repeat needs a blank in between, so [1, 1, 1, 1, 1] cannot fit 4 frames
    let too_long = ctc_loss(&mut tape, lp, &CtcTarget::new(vec![1, 1, 1, 1, 1], 0)?, 0);
    println!("infeasible target: {}", too_long.unwrap_err());

    let path = [0, 1, 1, 0, 2, 2, 0, 2];
    println!("argmax path {path:?} collapses to {:?}", collapse_path(&path, 0));
    Ok(())
}
