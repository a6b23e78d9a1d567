use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

/// Symbol reserved at index 0 of every CTC interface vocabulary.
pub const BLANK: &str = "<blank>";
/// End-of-sequence symbol at index 0 of decoder output vocabularies; also
/// fed as the first decoder input.
pub const EOS: &str = "</s>";

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const UNIT_SEPARATOR: u8 = 0x1f;

/// FNV-1a 64-bit over `bytes`, continuing from `state`.
pub fn fnv1a_extend(mut state: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        state ^= u64::from(b);
        state = state.wrapping_mul(FNV_PRIME);
    }
    state
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    fnv1a_extend(FNV_OFFSET, bytes)
}

/// 64-bit content fingerprint of an ordered symbol list: FNV-1a over the
/// symbol bytes with a 0x1F unit separator between consecutive symbols.
pub fn fingerprint<S: AsRef<str>>(symbols: &[S]) -> u64 {
    let mut h = FNV_OFFSET;
    for (i, s) in symbols.iter().enumerate() {
        if i > 0 {
            h = fnv1a_extend(h, &[UNIT_SEPARATOR]);
        }
        h = fnv1a_extend(h, s.as_ref().as_bytes());
    }
    h
}

/// Ordered, duplicate-free symbol set. The unit of interface compatibility
/// between modules is its [`fingerprint`](Vocabulary::fingerprint).
#[derive(Clone, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
    blank: Option<usize>,
    fingerprint: u64,
}

impl fmt::Debug for Vocabulary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Vocabulary")
            .field("size", &self.symbols.len())
            .field("blank", &self.blank)
            .field("fingerprint", &format_args!("{:016x}", self.fingerprint))
            .finish()
    }
}

impl Vocabulary {
    /// A plain vocabulary. It must not contain the blank symbol.
    pub fn new<S: Into<String>>(symbols: impl IntoIterator<Item = S>) -> Result<Self> {
        let symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        if symbols.iter().any(|s| s == BLANK) {
            return Err(Error::Vocabulary("blank symbol outside a CTC vocabulary".into()));
        }
        Self::build(symbols, None)
    }

    /// A CTC interface vocabulary: `symbols` preceded by the blank at index 0.
    pub fn ctc<S: Into<String>>(symbols: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut all = vec![BLANK.to_string()];
        all.extend(symbols.into_iter().map(Into::into));
        if all[1..].iter().any(|s| s == BLANK) {
            return Err(Error::Vocabulary("blank symbol listed twice".into()));
        }
        Self::build(all, Some(0))
    }

    /// Rebuilds a vocabulary from its full ordered symbol list, recognising
    /// a CTC vocabulary by the blank in position 0.
    pub fn from_symbols(symbols: Vec<String>) -> Result<Self> {
        match symbols.iter().position(|s| s == BLANK) {
            Some(0) => Self::build(symbols, Some(0)),
            Some(i) => Err(Error::Vocabulary(format!("blank symbol at index {i}, expected 0"))),
            None => Self::build(symbols, None),
        }
    }

    fn build(symbols: Vec<String>, blank: Option<usize>) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::Vocabulary("empty vocabulary".into()));
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::Vocabulary(format!("duplicate symbol {s:?}")));
            }
        }
        let fingerprint = fingerprint(&symbols);
        Ok(Vocabulary {
            symbols,
            index,
            blank,
            fingerprint,
        })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn blank(&self) -> Option<usize> {
        self.blank
    }

    pub fn is_ctc(&self) -> bool {
        self.blank.is_some()
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    /// Maps symbols to ids, failing on the first unknown one.
    pub fn encode<S: AsRef<str>>(&self, symbols: &[S]) -> Result<Vec<usize>> {
        symbols
            .iter()
            .map(|s| {
                self.id(s.as_ref())
                    .ok_or_else(|| Error::Vocabulary(format!("unknown symbol {:?}", s.as_ref())))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<&str>> {
        ids.iter()
            .map(|&i| self.symbol(i).ok_or_else(|| Error::Vocabulary(format!("id {i} out of range"))))
            .collect()
    }
}
