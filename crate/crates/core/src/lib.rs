//! Hybrid decoding runtime.
//!
//! A small language model drafts every token, a reward model scores each
//! draft, and a large model is consulted only for drafts scoring below a
//! threshold. The crate also carries the data-synthesis and reward-training
//! pipeline that produces the scorer, and a threshold-sweep benchmark.

pub mod bench;
mod codec;
pub mod decoder;
pub mod error;
pub mod generators;
pub mod jsonl;
pub mod num;
pub mod reward;
pub mod synth;
pub mod vocab;

pub use error::{Error, RemoteError, Result};
pub use vocab::{Granularity, TokenId, TokenSeq, Vocab, VocabHash, BOS, EOS, UNK};
