//! Shared vocabulary and token sequences.
//!
//! One [`Vocab`] is shared by the small model, the large model and the reward
//! scorer. Ids are dense, and the first three are reserved for BOS, EOS and UNK.

use std::collections::HashMap;
use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};

pub type TokenId = u32;

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;
pub const UNK: TokenId = 2;
pub const RESERVED: usize = 3;

const RESERVED_NAMES: [&str; RESERVED] = ["<bos>", "<eos>", "<unk>"];
const VOCAB_MAGIC: &[u8] = b"HYDEC-VOCAB-v1\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    /// One token per byte of UTF-8 input.
    Byte,
    /// One token per whitespace-separated word.
    Word,
}

impl Granularity {
    fn code(self) -> u8 {
        match self {
            Granularity::Byte => 0,
            Granularity::Word => 1,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Granularity::Byte),
            1 => Some(Granularity::Word),
            _ => None,
        }
    }
}

impl FromStr for Granularity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "byte" => Ok(Granularity::Byte),
            "word" => Ok(Granularity::Word),
            _ => Err(Error::invalid(format!("unknown granularity {s:?}"))),
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Granularity::Byte => "byte",
            Granularity::Word => "word",
        })
    }
}

/// SHA-256 over the vocabulary's granularity and ordered units.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct VocabHash(pub [u8; 32]);

impl fmt::Debug for VocabHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VocabHash({self})")
    }
}

impl fmt::Display for VocabHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl FromStr for VocabHash {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)
            .map_err(|e| Error::format("vocab hash", e.to_string()))?;
        Ok(VocabHash(out))
    }
}

impl Serialize for VocabHash {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for VocabHash {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone)]
pub struct Vocab {
    granularity: Granularity,
    /// Units for ids >= RESERVED, in id order.
    units: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, TokenId>,
    hash: VocabHash,
}

impl PartialEq for Vocab {
    fn eq(&self, other: &Self) -> bool {
        self.hash == other.hash
    }
}

impl Eq for Vocab {}

fn split_units(text: &str, granularity: Granularity) -> impl Iterator<Item = &[u8]> {
    let (bytes, words) = match granularity {
        Granularity::Byte => (Some(text.as_bytes().chunks(1)), None),
        Granularity::Word => (None, Some(text.split_whitespace().map(str::as_bytes))),
    };
    bytes.into_iter().flatten().chain(words.into_iter().flatten())
}

impl Vocab {
    /// Builds a vocabulary holding the reserved tokens plus every distinct
    /// unit of `corpus`, in first-occurrence order.
    pub fn build(corpus: &str, granularity: Granularity) -> Result<Self> {
        Self::build_from(&[corpus], granularity)
    }

    pub fn build_from(corpora: &[&str], granularity: Granularity) -> Result<Self> {
        let mut units: Vec<Vec<u8>> = Vec::new();
        let mut index = HashMap::new();
        for corpus in corpora {
            for unit in split_units(corpus, granularity) {
                if !index.contains_key(unit) {
                    let id = (RESERVED + units.len()) as TokenId;
                    index.insert(unit.to_vec(), id);
                    units.push(unit.to_vec());
                }
            }
        }
        if units.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(Self::assemble(granularity, units, index))
    }

    /// Assembles a vocabulary from an explicit unit list (ids start at 3).
    pub fn from_units(granularity: Granularity, units: Vec<Vec<u8>>) -> Result<Self> {
        let mut index = HashMap::with_capacity(units.len());
        for (i, u) in units.iter().enumerate() {
            if u.is_empty() {
                return Err(Error::format("vocab", "empty unit"));
            }
            if granularity == Granularity::Byte && u.len() != 1 {
                return Err(Error::format("vocab", "byte unit longer than one byte"));
            }
            if index.insert(u.clone(), (RESERVED + i) as TokenId).is_some() {
                return Err(Error::format("vocab", "duplicate unit"));
            }
        }
        if units.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(Self::assemble(granularity, units, index))
    }

    fn assemble(
        granularity: Granularity,
        units: Vec<Vec<u8>>,
        index: HashMap<Vec<u8>, TokenId>,
    ) -> Self {
        let mut h = Sha256::new();
        h.update(b"hydec-vocab");
        h.update([granularity.code()]);
        h.update((units.len() as u64).to_le_bytes());
        for u in &units {
            h.update((u.len() as u32).to_le_bytes());
            h.update(u);
        }
        let hash = VocabHash(h.finalize().into());
        Self {
            granularity,
            units,
            index,
            hash,
        }
    }

    pub fn len(&self) -> usize {
        RESERVED + self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn hash(&self) -> VocabHash {
        self.hash
    }

    pub fn id(&self, unit: &[u8]) -> Option<TokenId> {
        self.index.get(unit).copied()
    }

    /// Unit bytes for `id`; reserved tokens map to their display names.
    pub fn unit(&self, id: TokenId) -> Option<&[u8]> {
        let i = id as usize;
        if i < RESERVED {
            Some(RESERVED_NAMES[i].as_bytes())
        } else {
            self.units.get(i - RESERVED).map(Vec::as_slice)
        }
    }

    /// Printable form of a single token.
    pub fn display(&self, id: TokenId) -> String {
        match self.unit(id) {
            Some(u) => String::from_utf8_lossy(u).into_owned(),
            None => format!("<#{id}>"),
        }
    }

    /// Tokenizes text; units not in the vocabulary become UNK.
    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        split_units(text, self.granularity)
            .map(|u| self.id(u).unwrap_or(UNK))
            .collect()
    }

    /// `[BOS] ++ tokenize(text)`.
    pub fn encode_prompt(&self, text: &str) -> TokenSeq {
        let mut ids = Vec::with_capacity(text.len() + 1);
        ids.push(BOS);
        ids.extend(self.tokenize(text));
        TokenSeq(ids)
    }

    /// Joins units back into text, skipping reserved tokens. Word units are
    /// joined with single spaces, so word-level round trips are lossy.
    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        match self.granularity {
            Granularity::Byte => {
                let bytes: Vec<u8> = ids
                    .iter()
                    .filter(|&&id| id as usize >= RESERVED)
                    .filter_map(|&id| self.unit(id))
                    .flatten()
                    .copied()
                    .collect();
                String::from_utf8_lossy(&bytes).into_owned()
            }
            Granularity::Word => ids
                .iter()
                .filter(|&&id| id as usize >= RESERVED)
                .filter_map(|&id| self.unit(id))
                .map(|u| String::from_utf8_lossy(u).into_owned())
                .collect::<Vec<_>>()
                .join(" "),
        }
    }

    pub fn check_id(&self, id: TokenId) -> Result<()> {
        if (id as usize) < self.len() {
            Ok(())
        } else {
            Err(Error::TokenOutOfRange {
                id,
                size: self.len(),
            })
        }
    }

    /// Checks the [`TokenSeq`] invariants against this vocabulary.
    pub fn check_seq(&self, ids: &[TokenId]) -> Result<()> {
        for &id in ids {
            self.check_id(id)?;
        }
        if let Some(pos) = ids.iter().position(|&t| t == EOS) {
            if pos + 1 != ids.len() {
                return Err(Error::invalid(format!(
                    "EOS at position {pos} is not the final token"
                )));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.raw(VOCAB_MAGIC);
        self.write_body(&mut w);
        w.buf
    }

    pub(crate) fn write_body(&self, w: &mut Writer) {
        w.u8(self.granularity.code());
        w.u64(self.units.len() as u64);
        for u in &self.units {
            w.bytes(u);
        }
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf, "vocab file");
        r.expect_magic(VOCAB_MAGIC)?;
        let v = Self::read_body(&mut r)?;
        r.finish()?;
        Ok(v)
    }

    pub(crate) fn read_body(r: &mut Reader<'_>) -> Result<Self> {
        let g = r.u8()?;
        let granularity = Granularity::from_code(g).ok_or_else(|| r.bad("unknown granularity"))?;
        let n = r.count(5)?;
        if n + RESERVED > u32::MAX as usize {
            return Err(r.bad("vocabulary too large"));
        }
        let mut units = Vec::with_capacity(n);
        for _ in 0..n {
            units.push(r.bytes()?.to_vec());
        }
        Self::from_units(granularity, units)
    }
}

/// A sequence of token ids. EOS, when present, is the last element.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(Vec<TokenId>);

impl TokenSeq {
    pub fn new(ids: Vec<TokenId>) -> Self {
        TokenSeq(ids)
    }

    pub fn checked(ids: Vec<TokenId>, vocab: &Vocab) -> Result<Self> {
        vocab.check_seq(&ids)?;
        Ok(TokenSeq(ids))
    }

    pub fn push(&mut self, id: TokenId) {
        self.0.push(id);
    }

    pub fn ends_with_eos(&self) -> bool {
        self.0.last() == Some(&EOS)
    }

    pub fn into_vec(self) -> Vec<TokenId> {
        self.0
    }

    pub fn as_slice(&self) -> &[TokenId] {
        &self.0
    }
}

impl Deref for TokenSeq {
    type Target = [TokenId];
    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

impl From<Vec<TokenId>> for TokenSeq {
    fn from(v: Vec<TokenId>) -> Self {
        TokenSeq(v)
    }
}

impl FromIterator<TokenId> for TokenSeq {
    fn from_iter<I: IntoIterator<Item = TokenId>>(iter: I) -> Self {
        TokenSeq(iter.into_iter().collect())
    }
}
