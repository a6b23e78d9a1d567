//! Model families built from a task and a size configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modules::{
    Architecture, ComposedModel, DecoderArch, DecoderInput, EncoderArch, IngestorConfig, InputSpec, LengthMode,
    Module, ModuleManifest, OlcConfig, OutputSpec, Provenance, QueryPositions, Vocabulary,
};
use crate::nn::AttentionConfig;
use crate::tasks::{Task, TaskKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Conventional encoder-decoder over hidden states.
    Baseline,
    /// CTC encoder + WEmb decoder, trained jointly.
    LegoWemb,
    /// CTC encoder + BeamConv decoder, trained jointly.
    LegoBeamConv,
    /// CTC encoder alone.
    EncoderOnly,
    /// WEmb encoder-decoder trained without the encoder CTC term and
    /// without a length controller.
    NoCtc,
    /// Frames to phoneme marginals, CTC-trained alone.
    PhonemeEncoder,
    /// Phoneme encoder followed by a phoneme-to-word module, both CTC-trained.
    PronunciationChain,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Baseline => "baseline",
            ModelKind::LegoWemb => "lego_wemb",
            ModelKind::LegoBeamConv => "lego_beam_conv",
            ModelKind::EncoderOnly => "encoder_only",
            ModelKind::NoCtc => "no_ctc",
            ModelKind::PhonemeEncoder => "phoneme_encoder",
            ModelKind::PronunciationChain => "pronunciation_chain",
        }
    }
}

/// Size and shape of a toy model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub model_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    #[serde(default)]
    pub dropout: f64,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    /// Self-attention blocks inside the decoder's ingestor.
    pub ingestor_layers: usize,
    pub olc_layers: usize,
    #[serde(default = "default_beam")]
    pub beam_conv_beam: usize,
    #[serde(default = "default_embed")]
    pub beam_conv_embed_dim: usize,
    #[serde(default = "default_positions")]
    pub max_positions: usize,
}

fn default_beam() -> usize {
    4
}

fn default_embed() -> usize {
    16
}

fn default_positions() -> usize {
    128
}

impl ModelConfig {
    pub fn new(kind: ModelKind) -> Self {
        ModelConfig {
            kind,
            model_dim: 32,
            num_heads: 2,
            ffn_dim: 64,
            dropout: 0.0,
            encoder_layers: 2,
            decoder_layers: 1,
            ingestor_layers: 1,
            olc_layers: 1,
            beam_conv_beam: default_beam(),
            beam_conv_embed_dim: default_embed(),
            max_positions: default_positions(),
        }
    }

    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            model_dim: self.model_dim,
            num_heads: self.num_heads,
            ffn_dim: self.ffn_dim,
            dropout: self.dropout,
            attention_dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.attention().validate()?;
        if self.olc_layers == 0 {
            return Err(Error::Config("olc_layers must be at least 1".into()));
        }
        Ok(())
    }
}

/// Length controller used by every word-level encoder of `task`.
pub fn olc_for(task: TaskKind) -> OlcConfig {
    match task {
        TaskKind::MtA | TaskKind::MtB => OlcConfig {
            mode: LengthMode::Upsample,
            ratio: crate::modules::Ratio::new(2, 1).expect("positive"),
            max_length: 32,
            layers: 1,
            query_positions: QueryPositions::Output,
        },
        TaskKind::AsrMain | TaskKind::AsrDomain2 => OlcConfig {
            mode: LengthMode::Downsample,
            ratio: crate::modules::Ratio::new(3, 1).expect("positive"),
            max_length: 40,
            layers: 1,
            query_positions: QueryPositions::Output,
        },
    }
}

fn input_for(task: &Task) -> Result<InputSpec> {
    Ok(if task.kind().is_speech() {
        InputSpec::Frames {
            dim: task.spec().frame_dim,
            conv_rf: 3,
        }
    } else {
        InputSpec::Tokens {
            symbols: task.source_vocab()?.symbols().to_vec(),
        }
    })
}

fn symbols(v: &Vocabulary) -> Vec<String> {
    v.symbols().to_vec()
}

fn provenance(task: &Task, seed: u64, ctc_grounded: bool) -> Provenance {
    Provenance {
        seed,
        task: task.kind().to_string(),
        steps: 0,
        ctc_grounded,
        notes: String::new(),
    }
}

/// Word-level encoder for `task`; the length controller and the CTC
/// grounding go together.
pub fn word_encoder(task: &Task, cfg: &ModelConfig, seed: u64, ctc_grounded: bool) -> Result<Module> {
    let mut olc = olc_for(task.kind());
    olc.layers = cfg.olc_layers;
    let arch = EncoderArch {
        input: input_for(task)?,
        attention: cfg.attention(),
        layers: cfg.encoder_layers,
        max_positions: cfg.max_positions,
        olc: ctc_grounded.then_some(olc),
        output: OutputSpec::Marginal {
            symbols: symbols(&Task::interface_vocab()),
        },
    };
    let m = ModuleManifest::new(Architecture::Encoder(arch), provenance(task, seed, ctc_grounded))?;
    Module::new(m, seed)
}

/// Autoregressive decoder reading word marginals through `ingestor`.
pub fn marginal_decoder(task: &Task, cfg: &ModelConfig, ingestor: IngestorConfig, seed: u64) -> Result<Module> {
    let arch = DecoderArch {
        input: DecoderInput::Marginal {
            symbols: symbols(&Task::interface_vocab()),
            ingestor,
        },
        attention: cfg.attention(),
        layers: cfg.decoder_layers,
        max_positions: cfg.max_positions,
        output_symbols: symbols(&Task::target_vocab()),
    };
    let m = ModuleManifest::new(Architecture::Decoder(arch), provenance(task, seed.wrapping_add(1), true))?;
    Module::new(m, seed.wrapping_add(1))
}

/// Builds an untrained model of `cfg.kind` for `task`.
pub fn build_model(task: &Task, cfg: &ModelConfig, seed: u64) -> Result<ComposedModel> {
    cfg.validate()?;
    let wemb = IngestorConfig::wemb(cfg.ingestor_layers);
    let stages = match cfg.kind {
        ModelKind::Baseline => {
            let enc = EncoderArch {
                input: input_for(task)?,
                attention: cfg.attention(),
                layers: cfg.encoder_layers,
                max_positions: cfg.max_positions,
                olc: None,
                output: OutputSpec::Hidden,
            };
            let dec = DecoderArch {
                input: DecoderInput::Hidden { dim: cfg.model_dim },
                attention: cfg.attention(),
                layers: cfg.decoder_layers,
                max_positions: cfg.max_positions,
                output_symbols: symbols(&Task::target_vocab()),
            };
            vec![
                Module::new(
                    ModuleManifest::new(Architecture::Encoder(enc), provenance(task, seed, false))?,
                    seed,
                )?,
                Module::new(
                    ModuleManifest::new(Architecture::Decoder(dec), provenance(task, seed.wrapping_add(1), false))?,
                    seed.wrapping_add(1),
                )?,
            ]
        }
        ModelKind::LegoWemb => vec![
            word_encoder(task, cfg, seed, true)?,
            marginal_decoder(task, cfg, wemb, seed)?,
        ],
        ModelKind::LegoBeamConv => {
            let bc = IngestorConfig::beam_conv(cfg.ingestor_layers, cfg.beam_conv_beam, cfg.beam_conv_embed_dim);
            vec![word_encoder(task, cfg, seed, true)?, marginal_decoder(task, cfg, bc, seed)?]
        }
        ModelKind::NoCtc => vec![
            word_encoder(task, cfg, seed, false)?,
            marginal_decoder(task, cfg, wemb, seed)?,
        ],
        ModelKind::EncoderOnly => vec![word_encoder(task, cfg, seed, true)?],
        ModelKind::PhonemeEncoder => vec![phoneme_encoder(task, cfg, seed)?],
        ModelKind::PronunciationChain => vec![
            phoneme_encoder(task, cfg, seed)?,
            pronunciation_module(task, cfg, seed.wrapping_add(2))?,
        ],
    };
    match cfg.kind {
        ModelKind::EncoderOnly | ModelKind::PhonemeEncoder | ModelKind::PronunciationChain => {
            ComposedModel::encoder_chain(stages)
        }
        _ => ComposedModel::new(stages),
    }
}

/// Frames to phoneme marginals, one output position per frame.
pub fn phoneme_encoder(task: &Task, cfg: &ModelConfig, seed: u64) -> Result<Module> {
    if !task.kind().is_speech() {
        return Err(Error::Config(format!("{} has no phoneme targets", task.kind())));
    }
    let arch = EncoderArch {
        input: input_for(task)?,
        attention: cfg.attention(),
        layers: cfg.encoder_layers,
        max_positions: cfg.max_positions,
        olc: None,
        output: OutputSpec::Marginal {
            symbols: symbols(&Task::phoneme_vocab()),
        },
    };
    Module::new(
        ModuleManifest::new(Architecture::Encoder(arch), provenance(task, seed, true))?,
        seed,
    )
}

/// Phoneme marginals to word marginals.
pub fn pronunciation_module(task: &Task, cfg: &ModelConfig, seed: u64) -> Result<Module> {
    let mut olc = olc_for(task.kind());
    olc.layers = cfg.olc_layers;
    let arch = EncoderArch {
        input: InputSpec::Marginal {
            symbols: symbols(&Task::phoneme_vocab()),
            ingestor: IngestorConfig::wemb(cfg.ingestor_layers),
        },
        attention: cfg.attention(),
        layers: cfg.encoder_layers,
        max_positions: cfg.max_positions,
        olc: Some(olc),
        output: OutputSpec::Marginal {
            symbols: symbols(&Task::interface_vocab()),
        },
    };
    Module::new(
        ModuleManifest::new(Architecture::Encoder(arch), provenance(task, seed, true))?,
        seed,
    )
}
