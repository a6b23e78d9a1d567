//! Reuses an mt_A decoder behind an encoder trained only on mt_B, zero-shot
//! and after a short fine-tune.

use legonn::harness::eval::default_beam;
use legonn::harness::{run_data, train_run, transfer, EvalSetup, FineTune, ModelKind, Named, RunConfig, Transfer};
use legonn::tasks::TaskKind;

fn small(task: TaskKind, kind: ModelKind) -> RunConfig {
    let mut c = RunConfig::default_for(task, kind, 1);
    c.data.train_examples = 2000;
    c.data.test_examples = 200;
    c.train.steps = 800;
    c
}

fn main() -> legonn::Result<()> {
    let decoder = Named::new("mt_A", train_run(&small(TaskKind::MtA, ModelKind::LegoWemb))?.model);
    let encoder = Named::new("mt_B_enc", train_run(&small(TaskKind::MtB, ModelKind::EncoderOnly))?.model);
    let reference = train_run(&small(TaskKind::MtB, ModelKind::Baseline))?;
    let data = run_data(&small(TaskKind::MtB, ModelKind::Baseline))?;
    let out = transfer(
        &Transfer {
            experiment: "mt_B_to_mt_A_decoder".into(),
            encoder: &encoder,
            decoder: &decoder,
            reference: Some(("mt_B_baseline".into(), reference.manifest.metrics.test.value)),
            fine_tune: Some((&data.train, FineTune::from_pretraining(3e-3, 300, 1))),
        },
        &EvalSetup {
            data: &data.test,
            beam: default_beam(TaskKind::MtB),
            limit: 0,
        },
    )?;
    for r in &out.report.rows {
        println!(
            "{:<24} BLEU {:.4}  retention {:.1}%",
            r.pair_id,
            r.value.unwrap_or(f64::NAN),
            r.retention_pct.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
