//! Trains a LegoNN translation model at reduced size, reports test BLEU and
//! the encoder's greedy CTC score, and saves the run.
//!
//! cargo run --release --example train_eval -- [out-dir]

use legonn::harness::{save_run, train_run, ModelKind, RunConfig};
use legonn::tasks::TaskKind;

fn main() -> legonn::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "runs/example_wemb".into());
    let mut cfg = RunConfig::default_for(TaskKind::MtA, ModelKind::LegoWemb, 1);
    cfg.data.train_examples = 2000;
    cfg.data.test_examples = 200;
    cfg.train.steps = 800;
    cfg.train.valid_every = 200;
    let run = train_run(&cfg)?;
    let m = &run.manifest;
    for (step, loss) in m.history.valid.iter() {
        println!("step {step:>4}  valid loss {loss:.4}");
    }
    println!("test BLEU {:.4}", m.metrics.test.value);
    for e in &m.metrics.encoders {
        println!("encoder stage {} greedy BLEU {:.4}, CTC {:.3}", e.stage, e.greedy.value, e.ctc_loss);
    }
    save_run(&run, &out)?;
    println!("saved to {out}");
    Ok(())
}
