//! Deterministic synthetic tasks sharing one target language.
//!
//! Every task emits sentences of a small artificial target language: a fixed
//! sparse Markov chain over lemmas, where a few lemmas are realised either as
//! one word or as a two-word synonym, chosen at random. The two translation
//! tasks encode the lemma sequence through different lexicons and word-order
//! rules (the synonym choice is not visible in the source); the two speech
//! tasks spell each realised word as 1–3 phonemes and render each phoneme as
//! a run of noisy one-hot frames.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modules::vocab::{fnv1a, Vocabulary, EOS};
use crate::tensor::Tensor;

/// Target words: the first [`LEMMAS`] are lemmas, the rest only occur in
/// synonym phrases.
pub const TARGET_WORDS: [&str; 24] = [
    "sun", "moon", "star", "tree", "leaf", "rock", "river", "hill", "bird", "fish", "wolf", "bear", "red", "blue",
    "green", "runs", "sees", "eats", "grey", "stone", "high", "ground", "moves", "fast",
];

pub const LEMMAS: usize = 18;

/// `(lemma, phrase)`: the lemma may be realised as the two-word phrase instead.
pub const SYNONYMS: [(usize, [usize; 2]); 3] = [(5, [18, 19]), (7, [20, 21]), (15, [22, 23])];

pub const PHONEMES: [&str; 12] = ["aa", "b", "d", "eh", "f", "g", "ih", "k", "m", "n", "s", "t"];

/// Allowed successors per word in the target-language chain.
const SUCCESSORS: usize = 5;
const LANGUAGE_SEED: u64 = 0x1e60_2024;
const PRONUNCIATION_SEED: u64 = 0x0b0e_7a11;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "mt_A")]
    MtA,
    #[serde(rename = "mt_B")]
    MtB,
    #[serde(rename = "asr_main")]
    AsrMain,
    #[serde(rename = "asr_domain2")]
    AsrDomain2,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [TaskKind::MtA, TaskKind::MtB, TaskKind::AsrMain, TaskKind::AsrDomain2];

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::MtA => "mt_A",
            TaskKind::MtB => "mt_B",
            TaskKind::AsrMain => "asr_main",
            TaskKind::AsrDomain2 => "asr_domain2",
        }
    }

    pub fn is_speech(&self) -> bool {
        matches!(self, TaskKind::AsrMain | TaskKind::AsrDomain2)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown task {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    /// Splits partition sentences by a hash of the target, so no target
    /// sentence appears in two splits.
    fn owns(&self, target: &[usize]) -> bool {
        let bytes: Vec<u8> = target.iter().map(|&t| t as u8).collect();
        match fnv1a(&bytes) % 10 {
            0..=7 => *self == Split::Train,
            8 => *self == Split::Valid,
            _ => *self == Split::Test,
        }
    }

    fn index(&self) -> u64 {
        *self as u64
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?}"))),
        }
    }
}

/// Generator parameters for one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub seed: u64,
    pub min_target_len: usize,
    pub max_target_len: usize,
    /// Translation: words spelled with two source tokens.
    #[serde(default)]
    pub two_token_words: usize,
    /// Translation: pairs of target words sharing one source spelling.
    #[serde(default)]
    pub homograph_pairs: usize,
    /// Translation: source equals target, no reordering, no synonyms.
    #[serde(default)]
    pub identity: bool,
    /// Probability of realising a synonym lemma as its phrase.
    #[serde(default)]
    pub synonym_rate: f64,
    #[serde(default)]
    pub frame_dim: usize,
    #[serde(default)]
    pub frame_noise: f64,
    /// Relative weights of 3, 4 and 5 frames per phoneme.
    #[serde(default)]
    pub expansion_weights: [f64; 3],
}

impl TaskSpec {
    pub fn new(kind: TaskKind) -> Self {
        match kind {
            TaskKind::MtA | TaskKind::MtB => TaskSpec {
                kind,
                seed: if kind == TaskKind::MtA { 101 } else { 202 },
                min_target_len: 3,
                max_target_len: 7,
                two_token_words: 6,
                homograph_pairs: 4,
                identity: false,
                synonym_rate: 0.5,
                frame_dim: 0,
                frame_noise: 0.0,
                expansion_weights: [0.0; 3],
            },
            TaskKind::AsrMain | TaskKind::AsrDomain2 => {
                let main = kind == TaskKind::AsrMain;
                TaskSpec {
                    kind,
                    seed: if main { 303 } else { 404 },
                    min_target_len: 2,
                    max_target_len: 5,
                    two_token_words: 0,
                    homograph_pairs: 0,
                    identity: false,
                    synonym_rate: 0.5,
                    frame_dim: 16,
                    frame_noise: if main { 0.4 } else { 0.55 },
                    expansion_weights: if main { [1.0, 1.0, 1.0] } else { [0.2, 1.0, 1.8] },
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_target_len == 0 || self.min_target_len > self.max_target_len {
            return Err(Error::Config("target length range is empty".into()));
        }
        if !(0.0..=1.0).contains(&self.synonym_rate) {
            return Err(Error::Config(format!("synonym_rate {} outside [0, 1]", self.synonym_rate)));
        }
        if self.kind.is_speech() {
            if self.frame_dim < PHONEMES.len() {
                return Err(Error::Config(format!("frame_dim must be at least {}", PHONEMES.len())));
            }
            if !(self.frame_noise >= 0.0) || self.expansion_weights.iter().any(|w| !(*w >= 0.0)) {
                return Err(Error::Config("noise and expansion weights must be non-negative".into()));
            }
            if self.expansion_weights.iter().sum::<f64>() <= 0.0 {
                return Err(Error::Config("expansion weights are all zero".into()));
            }
        } else if self.two_token_words > LEMMAS / 2 {
            return Err(Error::Config("too many two-token words for the length-ratio filter".into()));
        } else if 2 * self.homograph_pairs > LEMMAS {
            return Err(Error::Config("more homograph pairs than words".into()));
        }
        Ok(())
    }
}

/// Model input for one example.
#[derive(Clone, Debug, PartialEq)]
pub enum Source {
    Tokens(Vec<usize>),
    /// `[T, frame_dim]`.
    Frames(Tensor),
}

impl Source {
    pub fn len(&self) -> usize {
        match self {
            Source::Tokens(t) => t.len(),
            Source::Frames(f) => f.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub source: Source,
    /// Phoneme ids (blank-first vocabulary) for speech tasks.
    pub phonemes: Option<Vec<usize>>,
    /// Target word ids, valid in both the decoder and the CTC vocabulary.
    pub target: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: TaskKind,
    pub split: Split,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// The first `fraction` of the examples (at least one).
    pub fn fraction(&self, fraction: f64) -> Result<Dataset> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!("data fraction {fraction} outside (0, 1]")));
        }
        let n = ((self.len() as f64 * fraction).round() as usize).max(1);
        Ok(Dataset {
            task: self.task,
            split: self.split,
            examples: self.examples[..n.min(self.len())].to_vec(),
        })
    }
}

/// Target-language sentence source shared by every task.
#[derive(Clone, Debug)]
struct Language {
    successors: Vec<Vec<(usize, f64)>>,
}

impl Language {
    fn new() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(LANGUAGE_SEED);
        let n = LEMMAS;
        let successors = (0..n)
            .map(|w| {
                let mut others: Vec<usize> = (0..n).filter(|&o| o != w).collect();
                others.shuffle(&mut rng);
                let picked = &others[..SUCCESSORS];
                let weights: Vec<f64> = picked.iter().map(|_| rng.gen_range(0.5..1.5)).collect();
                let total: f64 = weights.iter().sum();
                picked.iter().zip(weights).map(|(&o, x)| (o, x / total)).collect()
            })
            .collect();
        Language { successors }
    }

    /// Lemma indices, no lemma followed by itself.
    fn sentence(&self, rng: &mut ChaCha8Rng, len: usize) -> Vec<usize> {
        let mut out = vec![rng.gen_range(0..LEMMAS)];
        while out.len() < len {
            let cur = *out.last().expect("nonempty");
            let mut u: f64 = rng.gen();
            let mut next = self.successors[cur][SUCCESSORS - 1].0;
            for &(w, p) in &self.successors[cur] {
                if u < p {
                    next = w;
                    break;
                }
                u -= p;
            }
            out.push(next);
        }
        out
    }
}

/// Fixed 1–3 phoneme spelling for every target word, all distinct. A
/// synonym lemma sounds exactly like its phrase: its spelling is the
/// concatenation of the phrase words' spellings.
pub fn pronunciations() -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(PRONUNCIATION_SEED);
    let mut phonemes: Vec<usize> = (0..PHONEMES.len()).collect();
    phonemes.shuffle(&mut rng);
    let mut out = vec![Vec::new(); TARGET_WORDS.len()];
    let mut seen = std::collections::HashSet::new();
    // Phrase words: first words are single phonemes, second words have
    // 2, 2 and 1 phonemes, keeping every lemma within 3.
    let mut singles = phonemes.into_iter();
    let second_len = [2, 2, 1];
    for (k, (lemma, [a, b])) in SYNONYMS.iter().enumerate() {
        out[*a] = vec![singles.next().expect("enough phonemes")];
        seen.insert(out[*a].clone());
        out[*b] = if second_len[k] == 1 {
            vec![singles.next().expect("enough phonemes")]
        } else {
            loop {
                let p = random_spelling(&mut rng, 2);
                if p[0] != out[*a][0] && p.len() == 2 && !seen.contains(&p) {
                    break p;
                }
            }
        };
        seen.insert(out[*b].clone());
        out[*lemma] = [out[*a].clone(), out[*b].clone()].concat();
        seen.insert(out[*lemma].clone());
    }
    for (w, spelling) in out.iter_mut().enumerate() {
        if !spelling.is_empty() {
            continue;
        }
        let len = if w % 2 == 0 { 2 } else { 3 };
        *spelling = loop {
            let p = random_spelling(&mut rng, len);
            if seen.insert(p.clone()) {
                break p;
            }
        };
    }
    out
}

fn random_spelling(rng: &mut ChaCha8Rng, len: usize) -> Vec<usize> {
    loop {
        let p: Vec<usize> = (0..len).map(|_| rng.gen_range(0..PHONEMES.len())).collect();
        if p.windows(2).all(|w| w[0] != w[1]) {
            return p;
        }
    }
}

/// A task instance: lexicons, vocabularies and a sentence generator.
#[derive(Clone, Debug)]
pub struct Task {
    spec: TaskSpec,
    language: Language,
    /// Translation: source tokens spelling each lemma.
    lexicon: Vec<Vec<usize>>,
    source_symbols: Vec<String>,
    pronunciations: Vec<Vec<usize>>,
}

impl Task {
    pub fn new(spec: TaskSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let (lexicon, source_symbols) = match spec.kind {
            _ if spec.kind.is_speech() => (Vec::new(), Vec::new()),
            _ if spec.identity => (
                (0..LEMMAS).map(|w| vec![w]).collect(),
                TARGET_WORDS[..LEMMAS].iter().map(|s| s.to_string()).collect(),
            ),
            kind => build_lexicon(
                &mut rng,
                spec.two_token_words,
                spec.homograph_pairs,
                if kind == TaskKind::MtA { "a" } else { "b" },
            ),
        };
        Ok(Task {
            spec,
            language: Language::new(),
            lexicon,
            source_symbols,
            pronunciations: pronunciations(),
        })
    }

    pub fn kind(&self) -> TaskKind {
        self.spec.kind
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    /// Decoder output vocabulary: end-of-sequence then the target words.
    pub fn target_vocab() -> Vocabulary {
        Vocabulary::new(std::iter::once(EOS).chain(TARGET_WORDS)).expect("distinct words")
    }

    /// CTC interface vocabulary over the target words.
    pub fn interface_vocab() -> Vocabulary {
        Vocabulary::ctc(TARGET_WORDS).expect("distinct words")
    }

    pub fn phoneme_vocab() -> Vocabulary {
        Vocabulary::ctc(PHONEMES).expect("distinct phonemes")
    }

    /// Source-side token vocabulary of a translation task.
    pub fn source_vocab(&self) -> Result<Vocabulary> {
        if self.spec.kind.is_speech() {
            return Err(Error::Config(format!("{} has frame inputs", self.spec.kind)));
        }
        Vocabulary::new(self.source_symbols.clone())
    }

    pub fn source_symbols(&self) -> &[String] {
        &self.source_symbols
    }

    pub fn lexicon(&self) -> &[Vec<usize>] {
        &self.lexicon
    }

    /// Generates `n` examples of `split`; a pure function of the task seed,
    /// the split and `split_seed`.
    pub fn generate(&self, n: usize, split: Split, split_seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::Config("cannot generate an empty dataset".into()));
        }
        let stream = self
            .spec
            .seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(split_seed.wrapping_mul(0xbf58_476d_1ce4_e5b9))
            .wrapping_add(split.index());
        let mut rng = ChaCha8Rng::seed_from_u64(stream);
        let mut examples = Vec::with_capacity(n);
        while examples.len() < n {
            let len = rng.gen_range(self.spec.min_target_len..=self.spec.max_target_len);
            let lemmas = self.language.sentence(&mut rng, len);
            if !split.owns(&lemmas) {
                continue;
            }
            let words = self.realise(&mut rng, &lemmas);
            let target: Vec<usize> = words.iter().map(|w| w + 1).collect();
            let ex = if self.spec.kind.is_speech() {
                self.speech_example(&mut rng, &words, target)?
            } else {
                match self.translation_example(&lemmas, target) {
                    Some(ex) => ex,
                    None => continue,
                }
            };
            examples.push(ex);
        }
        Ok(Dataset {
            task: self.spec.kind,
            split,
            examples,
        })
    }

    /// Word indices for a lemma sequence.
    fn realise(&self, rng: &mut ChaCha8Rng, lemmas: &[usize]) -> Vec<usize> {
        let mut words = Vec::with_capacity(lemmas.len() + 2);
        for &l in lemmas {
            let phrase = SYNONYMS.iter().find(|(lemma, _)| *lemma == l).map(|(_, p)| p);
            match phrase {
                Some(p) if !self.spec.identity && rng.gen::<f64>() < self.spec.synonym_rate => words.extend_from_slice(p),
                _ => words.push(l),
            }
        }
        words
    }

    fn translation_example(&self, lemmas: &[usize], target: Vec<usize>) -> Option<Example> {
        let mut units: Vec<&[usize]> = lemmas.iter().map(|&w| &self.lexicon[w][..]).collect();
        if !self.spec.identity {
            let chunk = if self.spec.kind == TaskKind::MtA { 2 } else { 3 };
            for c in units.chunks_mut(chunk) {
                c.reverse();
            }
        }
        let source: Vec<usize> = units.concat();
        // Length-ratio filter on source vs target length.
        if source.len() * 2 > target.len() * 3 || target.len() * 2 > source.len() * 3 {
            return None;
        }
        Some(Example {
            source: Source::Tokens(source),
            phonemes: None,
            target,
        })
    }

    fn speech_example(&self, rng: &mut ChaCha8Rng, words: &[usize], target: Vec<usize>) -> Result<Example> {
        let phonemes: Vec<usize> = words
            .iter()
            .flat_map(|&w| self.pronunciations[w].iter().map(|p| p + 1))
            .collect();
        let dim = self.spec.frame_dim;
        let noise = Normal::new(0.0, self.spec.frame_noise.max(1e-300))
            .map_err(|e| Error::Config(format!("frame noise: {e}")))?;
        let w = self.spec.expansion_weights;
        let total: f64 = w.iter().sum();
        let mut data = Vec::new();
        for &p in &phonemes {
            let u = rng.gen::<f64>() * total;
            let frames = if u < w[0] {
                3
            } else if u < w[0] + w[1] {
                4
            } else {
                5
            };
            for _ in 0..frames {
                for j in 0..dim {
                    let hot = if j == p - 1 { 1.0 } else { 0.0 };
                    let eps = if self.spec.frame_noise > 0.0 { noise.sample(rng) } else { 0.0 };
                    data.push(hot + eps);
                }
            }
        }
        let t = data.len() / dim;
        Ok(Example {
            source: Source::Frames(Tensor::new(vec![t, dim], data)?),
            phonemes: Some(phonemes),
            target,
        })
    }
}

fn build_lexicon(
    rng: &mut ChaCha8Rng,
    two_token: usize,
    homographs: usize,
    prefix: &str,
) -> (Vec<Vec<usize>>, Vec<String>) {
    let n = LEMMAS;
    let mut words: Vec<usize> = (0..n).collect();
    words.shuffle(rng);
    // The last `homographs` words reuse the spelling of the `homographs`
    // words before them.
    let spelled = n - homographs;
    let singles = spelled - two_token;
    let pool = (two_token / 2 + 2).max(2);
    let symbols: Vec<String> = (0..singles + pool).map(|i| format!("{prefix}{i}")).collect();
    let mut lexicon = vec![Vec::new(); n];
    let mut used = std::collections::HashSet::new();
    for (i, &w) in words[..spelled].iter().enumerate() {
        lexicon[w] = if i < singles {
            vec![i]
        } else {
            loop {
                let a = singles + rng.gen_range(0..pool);
                let b = singles + rng.gen_range(0..pool);
                if a != b && used.insert((a, b)) {
                    break vec![a, b];
                }
            }
        };
    }
    for k in 0..homographs {
        lexicon[words[spelled + k]] = lexicon[words[spelled - homographs + k]].clone();
    }
    (lexicon, symbols)
}

fn ids_line(tag: &str, ids: &[usize]) -> String {
    let body: Vec<String> = ids.iter().map(|i| i.to_string()).collect();
    format!("{tag} {}", body.join(" ")).trim_end().to_string()
}

/// Writes a dataset as newline-delimited records: a `tgt` line, an optional
/// `phn` line, then either one `src` line or one `frm` line per frame
/// (comma-separated floats), with a blank line after each record.
pub fn write_dataset<W: Write>(ds: &Dataset, mut w: W) -> std::io::Result<()> {
    writeln!(w, "# {} {:?} {}", ds.task, ds.split, ds.len())?;
    for ex in &ds.examples {
        writeln!(w, "{}", ids_line("tgt", &ex.target))?;
        if let Some(p) = &ex.phonemes {
            writeln!(w, "{}", ids_line("phn", p))?;
        }
        match &ex.source {
            Source::Tokens(t) => writeln!(w, "{}", ids_line("src", t))?,
            Source::Frames(f) => {
                for r in 0..f.rows() {
                    let vals: Vec<String> = f.row(r).iter().map(|x| format!("{x:?}")).collect();
                    writeln!(w, "frm {}", vals.join(","))?;
                }
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_dataset(ds, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads the format produced by [`write_dataset`].
pub fn read_dataset<R: BufRead>(r: R) -> Result<Dataset> {
    let bad = |n: usize, msg: &str| Error::Format(format!("dataset line {n}: {msg}"));
    let mut lines = r.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file"))?;
    let header = header.map_err(|e| Error::io("<dataset>", e))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != "#" {
        return Err(bad(1, "bad header"));
    }
    let task: TaskKind = parts[1].parse()?;
    let split: Split = parts[2].to_lowercase().parse()?;
    let parse_ids = |n: usize, s: &str| -> Result<Vec<usize>> {
        s.split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(n, "bad id")))
            .collect()
    };
    let mut examples = Vec::new();
    let (mut tgt, mut phn, mut src, mut frames): (Option<Vec<usize>>, _, _, Vec<Vec<f64>>) =
        (None, None, None, Vec::new());
    for (i, line) in lines {
        let n = i + 1;
        let line = line.map_err(|e| Error::io("<dataset>", e))?;
        let (tag, rest) = line.split_once(' ').unwrap_or((line.as_str(), ""));
        match tag {
            "tgt" => tgt = Some(parse_ids(n, rest)?),
            "phn" => phn = Some(parse_ids(n, rest)?),
            "src" => src = Some(parse_ids(n, rest)?),
            "frm" => frames.push(
                rest.split(',')
                    .map(|t| t.parse().map_err(|_| bad(n, "bad float")))
                    .collect::<Result<_>>()?,
            ),
            "" => {
                let target = tgt.take().ok_or_else(|| bad(n, "record without tgt"))?;
                let source = match src.take() {
                    Some(s) => Source::Tokens(s),
                    None => Source::Frames(Tensor::from_rows(&std::mem::take(&mut frames))?),
                };
                examples.push(Example {
                    source,
                    phonemes: phn.take(),
                    target,
                });
            }
            _ => return Err(bad(n, "unknown record tag")),
        }
    }
    if tgt.is_some() {
        return Err(Error::Format("dataset ends inside a record".into()));
    }
    Ok(Dataset { task, split, examples })
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(std::io::BufReader::new(f))
}
