//! Learning-rate schedules and Adam on a quadratic bowl.

use legonn::optim::{adam_step, AdamConfig, AdamState, Schedule, ScheduleKind};
use legonn::tensor::Tensor;

fn main() -> legonn::Result<()> {
    let inv = Schedule {
        kind: ScheduleKind::InverseSqrtWarmup,
        warmup_steps: 100,
        peak_lr: 3e-3,
        start_lr: 3e-5,
        end_lr: 3e-5,
        total_steps: 1000,
        hold_steps: 0,
    };
    let tri = Schedule {
        kind: ScheduleKind::Tristage,
        hold_steps: 400,
        end_lr: 1e-5,
        ..inv.clone()
    };
    inv.validate()?;
    tri.validate()?;
    println!("step  inverse_sqrt  tristage");
    for step in [0, 50, 100, 200, 400, 500, 800, 1000] {
        println!("{step:>4}  {:.2e}      {:.2e}", inv.lr_at(step), tri.lr_at(step));
    }

    // minimise 0.5 * |p - c|^2
    let c = [3.0, -2.0, 0.5];
    let mut params = vec![Tensor::zeros(&[3])];
    let mut state = AdamState::new(&params);
    let names = vec!["p".to_string()];
    for step in 0..1000 {
        let g: Vec<f64> = params[0].data().iter().zip(c).map(|(p, c)| p - c).collect();
        let grads = vec![Tensor::new(vec![3], g)?];
        adam_step(&mut params, &grads, &mut state, inv.lr_at(step) * 10.0, &AdamConfig::default(), &names)?;
    }
    println!("after 1000 steps p = {:?}", params[0].data());
    Ok(())
}
