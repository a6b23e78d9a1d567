//! Architecture descriptions, interface descriptors and module manifests.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::nn::AttentionConfig;

/// Exact positive rational, written `"3/2"`, `"1.5"` or as a number.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Ratio {
    num: u64,
    den: u64,
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::Config(format!("ratio {num}/{den} must be positive")));
        }
        let g = gcd(num, den);
        Ok(Ratio {
            num: num / g,
            den: den / g,
        })
    }

    pub fn num(&self) -> u64 {
        self.num
    }

    pub fn den(&self) -> u64 {
        self.den
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl FromStr for Ratio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("cannot parse ratio {s:?}"));
        if let Some((n, d)) = s.split_once('/') {
            return Ratio::new(n.trim().parse().map_err(|_| bad())?, d.trim().parse().map_err(|_| bad())?);
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 9 || (int.is_empty() && frac.is_empty()) {
            return Err(bad());
        }
        let den = 10u64.pow(frac.len() as u32);
        let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let frac: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
        Ratio::new(int * den + frac, den)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Int(u64),
            Float(f64),
        }
        let text = match Raw::deserialize(d)? {
            Raw::Text(s) => s,
            Raw::Int(i) => i.to_string(),
            Raw::Float(x) => format!("{x}"),
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthMode {
    Upsample,
    Downsample,
}

/// Output Length Controller: `K` learned position queries cross-attending to
/// the encoded input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OlcConfig {
    pub mode: LengthMode,
    pub ratio: Ratio,
    pub max_length: usize,
    pub layers: usize,
    #[serde(default)]
    pub query_positions: QueryPositions,
}

/// Where the sinusoidal part of the OLC queries is evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryPositions {
    /// Query `k` gets the sinusoid of position `k`.
    #[default]
    Output,
    /// Query `k` gets the sinusoid of input position `k·T/K`, so each query
    /// starts out matched to the stretch of input it covers.
    Input,
}

impl OlcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_length == 0 {
            return Err(Error::Config("OLC max_length must be at least 1".into()));
        }
        if self.layers == 0 {
            return Err(Error::Config("OLC needs at least one cross-attention layer".into()));
        }
        Ok(())
    }

    /// `K = min(max_length, ⌈T·r⌉)` when upsampling, `min(max_length, ⌈T/r⌉)`
    /// when downsampling, never below 1.
    pub fn output_len(&self, input_len: usize) -> usize {
        let t = input_len as u64;
        let (num, den) = match self.mode {
            LengthMode::Upsample => (t * self.ratio.num, self.ratio.den),
            LengthMode::Downsample => (t * self.ratio.den, self.ratio.num),
        };
        let k = num.div_ceil(den) as usize;
        k.clamp(1, self.max_length)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IngestorKind {
    /// Expected embedding under the marginal; differentiable.
    WEmb,
    /// Embeddings of the top-p indices only; gradient-isolating.
    BeamConv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestorConfig {
    pub kind: IngestorKind,
    #[serde(default = "one")]
    pub receptive_field: usize,
    /// Self-attention blocks after the positional embedding.
    pub layers: usize,
    /// BeamConv: hypotheses kept per position.
    #[serde(default = "one")]
    pub beam: usize,
    /// BeamConv: width of each index embedding.
    #[serde(default)]
    pub embed_dim: usize,
}

fn one() -> usize {
    1
}

impl IngestorConfig {
    pub fn wemb(layers: usize) -> Self {
        IngestorConfig {
            kind: IngestorKind::WEmb,
            receptive_field: 1,
            layers,
            beam: 1,
            embed_dim: 0,
        }
    }

    pub fn beam_conv(layers: usize, beam: usize, embed_dim: usize) -> Self {
        IngestorConfig {
            kind: IngestorKind::BeamConv,
            receptive_field: 1,
            layers,
            beam,
            embed_dim,
        }
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.receptive_field == 0 || self.receptive_field % 2 == 0 {
            return Err(Error::Config(format!(
                "ingestor receptive_field {} must be odd",
                self.receptive_field
            )));
        }
        if self.kind == IngestorKind::BeamConv {
            if self.beam == 0 || self.beam > vocab_size {
                return Err(Error::Config(format!(
                    "BeamConv beam {} must lie in 1..={vocab_size}",
                    self.beam
                )));
            }
            if self.embed_dim == 0 {
                return Err(Error::Config("BeamConv embed_dim must be positive".into()));
            }
        }
        Ok(())
    }
}

/// What an encoder-side module consumes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSpec {
    /// Real-valued frames: linear projection, ReLU, then a temporal convolution.
    Frames { dim: usize, conv_rf: usize },
    Tokens { symbols: Vec<String> },
    /// Marginals from a preceding module over a CTC vocabulary.
    Marginal { symbols: Vec<String>, ingestor: IngestorConfig },
}

/// What an encoder-side module emits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum OutputSpec {
    /// Softmax over a CTC vocabulary (blank first).
    Marginal { symbols: Vec<String> },
    /// Raw hidden states; the conventional, non-modular interface.
    Hidden,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderArch {
    pub input: InputSpec,
    pub attention: AttentionConfig,
    pub layers: usize,
    pub max_positions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub olc: Option<OlcConfig>,
    pub output: OutputSpec,
}

/// What a decoder consumes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DecoderInput {
    Marginal { symbols: Vec<String>, ingestor: IngestorConfig },
    Hidden { dim: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderArch {
    pub input: DecoderInput,
    pub attention: AttentionConfig,
    pub layers: usize,
    pub max_positions: usize,
    /// Output vocabulary, end-of-sequence first.
    pub output_symbols: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Architecture {
    Encoder(EncoderArch),
    Decoder(DecoderArch),
}

/// Type of a module boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Interface {
    Frames { dim: usize },
    Tokens { fingerprint: u64 },
    Marginal { fingerprint: u64 },
    Hidden { dim: usize },
}

impl fmt::Display for Interface {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Interface::Frames { dim } => write!(f, "frames:{dim}"),
            Interface::Tokens { fingerprint } => write!(f, "tokens:{fingerprint:016x}"),
            Interface::Marginal { fingerprint } => write!(f, "marginal:{fingerprint:016x}"),
            Interface::Hidden { dim } => write!(f, "hidden:{dim}"),
        }
    }
}

impl FromStr for Interface {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Format(format!("bad interface descriptor {s:?}"));
        let (kind, arg) = s.split_once(':').ok_or_else(bad)?;
        let hex = || u64::from_str_radix(arg, 16).map_err(|_| bad());
        let dec = || arg.parse::<usize>().map_err(|_| bad());
        Ok(match kind {
            "frames" => Interface::Frames { dim: dec()? },
            "tokens" => Interface::Tokens { fingerprint: hex()? },
            "marginal" => Interface::Marginal { fingerprint: hex()? },
            "hidden" => Interface::Hidden { dim: dec()? },
            _ => return Err(bad()),
        })
    }
}

impl Serialize for Interface {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Interface {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleKind {
    /// Input-to-marginals encoder trained under CTC.
    CtcEncoder,
    /// Marginals-to-marginals module (e.g. a pronunciation model).
    IntermediateCtc,
    /// Autoregressive decoder emitting token ids.
    ArDecoder,
    /// Conventional encoder exposing hidden states (baseline models only).
    HiddenEncoder,
}

impl ModuleKind {
    pub const ALL: [ModuleKind; 4] = [
        ModuleKind::CtcEncoder,
        ModuleKind::IntermediateCtc,
        ModuleKind::ArDecoder,
        ModuleKind::HiddenEncoder,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModuleKind::CtcEncoder => "ctc_encoder",
            ModuleKind::IntermediateCtc => "intermediate_ctc",
            ModuleKind::ArDecoder => "ar_decoder",
            ModuleKind::HiddenEncoder => "hidden_encoder",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

/// Who trained a module, on what, and how.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub seed: u64,
    pub task: String,
    pub steps: u64,
    /// False for modules trained without the CTC term on their output.
    #[serde(default = "yes")]
    pub ctc_grounded: bool,
    #[serde(default)]
    pub notes: String,
}

fn yes() -> bool {
    true
}

/// Typed description of one reusable module.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleManifest {
    pub kind: ModuleKind,
    pub input_interface: Interface,
    pub output_interface: Interface,
    pub provenance: Provenance,
    pub arch: Architecture,
}

impl ModuleManifest {
    /// Derives kind and interfaces from an architecture.
    pub fn new(arch: Architecture, provenance: Provenance) -> Result<Self> {
        let (kind, input_interface, output_interface) = derive_interfaces(&arch)?;
        let m = ModuleManifest {
            kind,
            input_interface,
            output_interface,
            provenance,
            arch,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let (kind, input, output) = derive_interfaces(&self.arch)?;
        if kind != self.kind {
            return Err(Error::Config(format!(
                "manifest kind {} disagrees with its architecture ({})",
                self.kind.as_str(),
                kind.as_str()
            )));
        }
        if input != self.input_interface || output != self.output_interface {
            return Err(Error::Config(format!(
                "manifest interfaces {} -> {} disagree with architecture {input} -> {output}",
                self.input_interface, self.output_interface
            )));
        }
        match &self.arch {
            Architecture::Encoder(a) => validate_encoder(a),
            Architecture::Decoder(a) => validate_decoder(a),
        }
    }

    pub fn encoder(&self) -> Option<&EncoderArch> {
        match &self.arch {
            Architecture::Encoder(a) => Some(a),
            Architecture::Decoder(_) => None,
        }
    }

    pub fn decoder(&self) -> Option<&DecoderArch> {
        match &self.arch {
            Architecture::Decoder(a) => Some(a),
            Architecture::Encoder(_) => None,
        }
    }

    /// CTC vocabulary on the output side, when the module emits marginals.
    pub fn output_vocab(&self) -> Result<Option<Vocabulary>> {
        match &self.arch {
            Architecture::Encoder(EncoderArch {
                output: OutputSpec::Marginal { symbols },
                ..
            }) => Ok(Some(Vocabulary::from_symbols(symbols.clone())?)),
            Architecture::Decoder(d) => Ok(Some(Vocabulary::from_symbols(d.output_symbols.clone())?)),
            _ => Ok(None),
        }
    }
}

fn ctc_fingerprint(symbols: &[String]) -> Result<u64> {
    let v = Vocabulary::from_symbols(symbols.to_vec())?;
    if !v.is_ctc() {
        return Err(Error::Vocabulary("marginal interface vocabulary lacks the blank at index 0".into()));
    }
    Ok(v.fingerprint())
}

fn derive_interfaces(arch: &Architecture) -> Result<(ModuleKind, Interface, Interface)> {
    match arch {
        Architecture::Encoder(e) => {
            let input = match &e.input {
                InputSpec::Frames { dim, .. } => Interface::Frames { dim: *dim },
                InputSpec::Tokens { symbols } => Interface::Tokens {
                    fingerprint: Vocabulary::from_symbols(symbols.clone())?.fingerprint(),
                },
                InputSpec::Marginal { symbols, .. } => Interface::Marginal {
                    fingerprint: ctc_fingerprint(symbols)?,
                },
            };
            let (kind, output) = match &e.output {
                OutputSpec::Hidden => (
                    ModuleKind::HiddenEncoder,
                    Interface::Hidden {
                        dim: e.attention.model_dim,
                    },
                ),
                OutputSpec::Marginal { symbols } => {
                    let kind = if matches!(e.input, InputSpec::Marginal { .. }) {
                        ModuleKind::IntermediateCtc
                    } else {
                        ModuleKind::CtcEncoder
                    };
                    (
                        kind,
                        Interface::Marginal {
                            fingerprint: ctc_fingerprint(symbols)?,
                        },
                    )
                }
            };
            if kind == ModuleKind::HiddenEncoder && matches!(e.input, InputSpec::Marginal { .. }) {
                return Err(Error::Config("a hidden-state encoder cannot consume marginals".into()));
            }
            Ok((kind, input, output))
        }
        Architecture::Decoder(d) => {
            let input = match &d.input {
                DecoderInput::Marginal { symbols, .. } => Interface::Marginal {
                    fingerprint: ctc_fingerprint(symbols)?,
                },
                DecoderInput::Hidden { dim } => Interface::Hidden { dim: *dim },
            };
            let out = Vocabulary::from_symbols(d.output_symbols.clone())?;
            Ok((
                ModuleKind::ArDecoder,
                input,
                Interface::Tokens {
                    fingerprint: out.fingerprint(),
                },
            ))
        }
    }
}

fn validate_encoder(a: &EncoderArch) -> Result<()> {
    a.attention.validate()?;
    if a.max_positions == 0 {
        return Err(Error::Config("max_positions must be positive".into()));
    }
    match &a.input {
        InputSpec::Frames { dim, conv_rf } => {
            if *dim == 0 || *conv_rf == 0 || conv_rf % 2 == 0 {
                return Err(Error::Config("frames input needs dim > 0 and an odd conv_rf".into()));
            }
        }
        InputSpec::Tokens { symbols } => {
            Vocabulary::from_symbols(symbols.clone())?;
        }
        InputSpec::Marginal { symbols, ingestor } => ingestor.validate(symbols.len())?,
    }
    if let Some(olc) = &a.olc {
        olc.validate()?;
        if matches!(a.output, OutputSpec::Hidden) {
            return Err(Error::Config("length control only applies to marginal outputs".into()));
        }
    }
    Ok(())
}

fn validate_decoder(a: &DecoderArch) -> Result<()> {
    a.attention.validate()?;
    if a.layers == 0 || a.max_positions == 0 {
        return Err(Error::Config("decoder needs layers and max_positions".into()));
    }
    let out = Vocabulary::from_symbols(a.output_symbols.clone())?;
    if out.is_ctc() || out.symbol(0) != Some(super::vocab::EOS) {
        return Err(Error::Config("decoder output vocabulary must start with </s> and hold no blank".into()));
    }
    match &a.input {
        DecoderInput::Marginal { symbols, ingestor } => ingestor.validate(symbols.len()),
        DecoderInput::Hidden { dim } if *dim != a.attention.model_dim => Err(Error::Config(format!(
            "hidden input width {dim} differs from decoder width {}",
            a.attention.model_dim
        ))),
        DecoderInput::Hidden { .. } => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_parsing() {
        assert_eq!("1.5".parse::<Ratio>().unwrap(), Ratio::new(3, 2).unwrap());
        assert_eq!("3/2".parse::<Ratio>().unwrap(), Ratio::new(3, 2).unwrap());
        assert_eq!("2".parse::<Ratio>().unwrap(), Ratio::new(2, 1).unwrap());
        assert_eq!("3.5".parse::<Ratio>().unwrap(), Ratio::new(7, 2).unwrap());
        assert!("0".parse::<Ratio>().is_err());
        assert!("x".parse::<Ratio>().is_err());
    }

    fn olc(mode: LengthMode, ratio: &str, cap: usize) -> OlcConfig {
        OlcConfig {
            mode,
            ratio: ratio.parse().unwrap(),
            max_length: cap,
            layers: 1,
            query_positions: QueryPositions::Output,
        }
    }

    #[test]
    fn olc_length_examples() {
        assert_eq!(olc(LengthMode::Downsample, "1.5", 230).output_len(9), 6);
        assert_eq!(olc(LengthMode::Upsample, "2", 230).output_len(10), 20);
        assert_eq!(olc(LengthMode::Downsample, "1.5", 230).output_len(400), 230);
        assert_eq!(olc(LengthMode::Downsample, "3.5", 130).output_len(1), 1);
    }

    #[test]
    fn interface_round_trip_text() {
        for i in [
            Interface::Frames { dim: 12 },
            Interface::Tokens { fingerprint: 0xdead_beef },
            Interface::Marginal { fingerprint: u64::MAX },
            Interface::Hidden { dim: 32 },
        ] {
            assert_eq!(i.to_string().parse::<Interface>().unwrap(), i);
        }
        assert!("marginal:zz".parse::<Interface>().is_err());
    }

    #[test]
    fn ingestor_validation() {
        assert!(IngestorConfig::beam_conv(1, 4, 8).validate(4).is_ok());
        assert!(IngestorConfig::beam_conv(1, 5, 8).validate(4).is_err());
        let mut even = IngestorConfig::wemb(1);
        even.receptive_field = 2;
        assert!(even.validate(4).is_err());
    }

    #[test]
    fn module_kind_names() {
        for k in ModuleKind::ALL {
            assert_eq!(ModuleKind::parse(k.as_str()), Some(k));
        }
        assert_eq!(ModuleKind::parse("transducer"), None);
    }
}
