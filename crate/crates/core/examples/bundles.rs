//! Saving and loading modules, and what the interface check refuses.

use legonn::harness::{build_model, ModelConfig, ModelKind};
use legonn::modules::{bundle, ComposedModel};
use legonn::tasks::{Task, TaskKind, TaskSpec};

fn main() -> legonn::Result<()> {
    let task = Task::new(TaskSpec::new(TaskKind::AsrMain))?;
    let model = build_model(&task, &ModelConfig::new(ModelKind::LegoWemb), 7)?;
    let encoder = &model.stages()[0];
    println!("{}", bundle::manifest_to_toml(encoder.manifest())?);

    let dir = std::env::temp_dir().join("legonn_bundle_example");
    std::fs::create_dir_all(&dir).map_err(|e| legonn::Error::io(&dir, e))?;
    let path = dir.join("encoder.bundle");
    bundle::save(encoder, &path)?;
    let back = bundle::load(&path)?;
    println!(
        "{} parameters, round trip identical: {}",
        back.num_parameters(),
        bundle::to_bytes(&back)? == bundle::to_bytes(encoder)?
    );

    // a phoneme encoder speaks a different vocabulary than a word decoder
    let phon = build_model(&task, &ModelConfig::new(ModelKind::PhonemeEncoder), 7)?;
    let mut stages = phon.into_stages();
    stages.push(model.decoder().unwrap().clone());
    let err = ComposedModel::new(stages).unwrap_err();
    println!("refused: {err} (exit code {})", err.exit_code());
    Ok(())
}
