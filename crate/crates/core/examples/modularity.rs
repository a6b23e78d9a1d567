//! Swaps encoders between independently trained models. LegoNN models keep
//! working; conventional encoder-decoders do not.

use legonn::harness::{cross_pairings, run_data, train_run, EvalSetup, ModelKind, Named, RunConfig};
use legonn::harness::eval::default_beam;
use legonn::tasks::TaskKind;

fn small(kind: ModelKind, seed: u64) -> RunConfig {
    let mut c = RunConfig::default_for(TaskKind::MtA, kind, seed);
    c.data.train_examples = 2000;
    c.data.test_examples = 200;
    c.train.steps = 800;
    c
}

fn main() -> legonn::Result<()> {
    let test = run_data(&small(ModelKind::Baseline, 1))?.test;
    let ev = EvalSetup {
        data: &test,
        beam: default_beam(TaskKind::MtA),
        limit: 0,
    };
    for kind in [ModelKind::LegoWemb, ModelKind::Baseline] {
        let models = [1, 2]
            .into_iter()
            .map(|s| Ok(Named::new(format!("{}_s{s}", kind.as_str()), train_run(&small(kind, s))?.model)))
            .collect::<legonn::Result<Vec<_>>>()?;
        let report = cross_pairings("seed_swap", &models, &ev)?;
        for r in &report.rows {
            println!(
                "{:<40} BLEU {:.4}  retention {:.1}%",
                r.pair_id,
                r.value.unwrap_or(f64::NAN),
                r.retention_pct.unwrap_or(f64::NAN)
            );
        }
    }
    Ok(())
}
