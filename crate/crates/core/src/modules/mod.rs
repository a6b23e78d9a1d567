//! Reusable modules exchanging marginal distributions.

pub mod arch;
pub mod bundle;
pub mod compose;
pub mod decode;
pub mod decoder;
pub mod encoder;
pub mod ingestor;
pub mod marginal;
pub mod module;
pub mod vocab;

pub use arch::{
    Architecture, DecoderArch, DecoderInput, EncoderArch, IngestorConfig, IngestorKind, InputSpec, Interface,
    LengthMode, ModuleKind, ModuleManifest, OlcConfig, OutputSpec, Provenance, QueryPositions, Ratio,
};
pub use compose::{check_link, ChainOutput, ComposedModel};
pub use decode::{beam_search, decode, stage_marginals, BeamConfig, Hypothesis, ModelInput};
pub use encoder::{EncoderOutput, SeqInput};
pub use marginal::{collapse_path, greedy_ctc_decode, MarginalSequence, ROW_SUM_TOL};
pub use module::{Module, Network};
pub use vocab::{fingerprint, Vocabulary, BLANK, EOS};
