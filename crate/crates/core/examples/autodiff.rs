//! Reverse-mode gradients on a small tape, checked against central
//! differences.

use legonn::gradcheck::{check, STEP};
use legonn::tensor::{Tape, Tensor};

fn main() -> legonn::Result<()> {
    let x = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 0.1, 0.3, -0.7])?;
    let w = Tensor::new(vec![3, 2], vec![0.2, -0.4, 1.1, 0.0, -0.3, 0.9])?;

    // loss = -sum(log_softmax(x w)[:, 0])
    let mut tape = Tape::new();
    let (xv, wv) = (tape.param(x.clone()), tape.param(w.clone()));
    let h = tape.matmul(xv, wv)?;
    let lp = tape.log_softmax(h, 1)?;
    let first = tape.slice_cols(lp, 0, 1)?;
    let s = tape.sum(first)?;
    let loss = tape.scale(s, -1.0)?;
    tape.backward(loss)?;
    println!("loss {:.6}", tape.value(loss).item());
    println!("dL/dW {:?}", tape.grad(wv).unwrap().data());

    let report = check(&[x, w], STEP, |t, v| {
        let h = t.matmul(v[0], v[1])?;
        let lp = t.log_softmax(h, 1)?;
        let first = t.slice_cols(lp, 0, 1)?;
        let s = t.sum(first)?;
        t.scale(s, -1.0)
    })?;
    println!(
        "finite differences: {} coordinates, max relative error {:.2e}",
        report.coordinates, report.max_rel_error
    );
    Ok(())
}
