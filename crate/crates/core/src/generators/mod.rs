//! Token generators: in-process n-gram surrogates and remote completion endpoints.

pub mod ngram;
pub mod remote;
pub mod sampling;

use crate::error::{Error, Result};
use crate::vocab::{TokenId, TokenSeq, Vocab, EOS};

pub use ngram::NgramModel;
pub use remote::{RemoteBackend, RemoteEndpoint};
pub use sampling::{SamplingMode, SamplingParams};

/// One proposed next token.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub token: TokenId,
    /// Natural-log probability of `token` under the backend's untempered
    /// distribution, when the backend can report it.
    pub logprob: Option<f64>,
}

/// A next-token generator over a shared vocabulary.
///
/// Every call receives the whole prefix; backends keep no per-sequence state,
/// so a caching backend can be added behind this interface later.
pub trait GenBackend: Send + Sync {
    fn name(&self) -> &str;

    fn vocab(&self) -> &Vocab;

    fn next_token(&self, prefix: &[TokenId], params: &SamplingParams) -> Result<Proposal>;
}

/// Validated entry point around [`GenBackend::next_token`].
pub fn propose_next(
    backend: &dyn GenBackend,
    prefix: &[TokenId],
    params: &SamplingParams,
) -> Result<Proposal> {
    if prefix.is_empty() {
        return Err(Error::invalid("prefix must contain at least BOS"));
    }
    params.validate()?;
    let p = backend.next_token(prefix, params)?;
    if p.token as usize >= backend.vocab().len() {
        return Err(Error::VocabMismatch(format!(
            "{} proposed id {} outside vocabulary of {}",
            backend.name(),
            p.token,
            backend.vocab().len()
        )));
    }
    Ok(p)
}

/// Generates a continuation of `prompt` (prompt excluded) until EOS or `max_tokens`.
pub fn generate(
    backend: &dyn GenBackend,
    prompt: &[TokenId],
    params: &SamplingParams,
    max_tokens: usize,
) -> Result<TokenSeq> {
    if max_tokens == 0 {
        return Err(Error::invalid("max_tokens must be at least 1"));
    }
    let mut prefix = prompt.to_vec();
    let mut out = TokenSeq::default();
    for _ in 0..max_tokens {
        let p = propose_next(backend, &prefix, params)?;
        out.push(p.token);
        prefix.push(p.token);
        if p.token == EOS {
            break;
        }
    }
    Ok(out)
}
