//! Add-alpha smoothed n-gram language models: the desk-scale stand-ins for the
//! small and large models.

use std::collections::HashMap;
use std::sync::Arc;

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::generators::{GenBackend, Proposal, SamplingParams};
use crate::vocab::{TokenId, TokenSeq, Vocab, BOS, EOS};

const NGRAM_MAGIC: &[u8] = b"HYDEC-NGRAM-v1\n";

#[derive(Debug, Clone, Default, PartialEq)]
struct NextCounts {
    total: u64,
    /// Sorted by token id.
    next: Vec<(TokenId, u32)>,
}

/// Immutable n-gram model. `P(t | c) = (count(c, t) + alpha) / (count(c, .) + alpha * |V|)`.
#[derive(Debug, Clone)]
pub struct NgramModel {
    name: String,
    order: usize,
    alpha: f64,
    vocab: Arc<Vocab>,
    table: HashMap<Vec<TokenId>, NextCounts>,
}

fn check_hyper(order: usize, alpha: f64) -> Result<()> {
    if order == 0 {
        return Err(Error::invalid("n-gram order must be at least 1"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    Ok(())
}

fn freeze(raw: HashMap<Vec<TokenId>, HashMap<TokenId, u32>>) -> HashMap<Vec<TokenId>, NextCounts> {
    raw.into_iter()
        .map(|(ctx, m)| {
            let mut next: Vec<(TokenId, u32)> = m.into_iter().collect();
            next.sort_unstable();
            let total = next.iter().map(|x| x.1 as u64).sum();
            (ctx, NextCounts { total, next })
        })
        .collect()
}

impl NgramModel {
    /// Counts every sliding window of width `order` over one token stream.
    pub fn train(vocab: Arc<Vocab>, corpus: &[TokenId], order: usize, alpha: f64) -> Result<Self> {
        check_hyper(order, alpha)?;
        for &t in corpus {
            vocab.check_id(t)?;
        }
        if corpus.len() < order {
            return Err(Error::CorpusTooShort {
                len: corpus.len(),
                order,
            });
        }
        let mut raw: HashMap<Vec<TokenId>, HashMap<TokenId, u32>> = HashMap::new();
        for w in corpus.windows(order) {
            let (ctx, next) = w.split_at(order - 1);
            *raw.entry(ctx.to_vec()).or_default().entry(next[0]).or_default() += 1;
        }
        Ok(Self {
            name: format!("ngram-{order}"),
            order,
            alpha,
            vocab,
            table: freeze(raw),
        })
    }

    /// Trains on independent sequences (e.g. corpus lines). Each sequence is
    /// framed as `BOS^(order-1) ++ body ++ [EOS]`, where `body` drops a leading
    /// BOS and trailing EOS if present. This matches how [`Self::context_of`]
    /// pads prompts, so prompts starting with BOS see sentence-start contexts.
    pub fn train_sequences(
        vocab: Arc<Vocab>,
        seqs: &[TokenSeq],
        order: usize,
        alpha: f64,
    ) -> Result<Self> {
        check_hyper(order, alpha)?;
        let mut raw: HashMap<Vec<TokenId>, HashMap<TokenId, u32>> = HashMap::new();
        let mut windows = 0usize;
        for seq in seqs {
            vocab.check_seq(seq)?;
            let mut body: &[TokenId] = seq;
            if body.first() == Some(&BOS) {
                body = &body[1..];
            }
            if body.last() == Some(&EOS) {
                body = &body[..body.len() - 1];
            }
            if body.is_empty() {
                continue;
            }
            let mut framed = vec![BOS; order - 1];
            framed.extend_from_slice(body);
            framed.push(EOS);
            for w in framed.windows(order) {
                let (ctx, next) = w.split_at(order - 1);
                *raw.entry(ctx.to_vec()).or_default().entry(next[0]).or_default() += 1;
                windows += 1;
            }
        }
        if windows == 0 {
            return Err(Error::EmptyCorpus);
        }
        Ok(Self {
            name: format!("ngram-{order}"),
            order,
            alpha,
            vocab,
            table: freeze(raw),
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn vocab_arc(&self) -> &Arc<Vocab> {
        &self.vocab
    }

    pub fn num_contexts(&self) -> usize {
        self.table.len()
    }

    /// The last `order - 1` tokens of `prefix`, left-padded with BOS.
    pub fn context_of(&self, prefix: &[TokenId]) -> Vec<TokenId> {
        let n = self.order - 1;
        let mut ctx = vec![BOS; n.saturating_sub(prefix.len())];
        ctx.extend_from_slice(&prefix[prefix.len().saturating_sub(n)..]);
        ctx
    }

    pub fn count(&self, context: &[TokenId], token: TokenId) -> u32 {
        self.table
            .get(context)
            .and_then(|c| c.next.binary_search_by_key(&token, |x| x.0).ok().map(|i| c.next[i].1))
            .unwrap_or(0)
    }

    pub fn context_total(&self, context: &[TokenId]) -> u64 {
        self.table.get(context).map_or(0, |c| c.total)
    }

    /// Full next-token distribution after `prefix`.
    pub fn distribution(&self, prefix: &[TokenId]) -> Vec<f64> {
        let ctx = self.context_of(prefix);
        self.distribution_for_context(&ctx)
    }

    pub fn distribution_for_context(&self, ctx: &[TokenId]) -> Vec<f64> {
        let v = self.vocab.len();
        let entry = self.table.get(ctx);
        let total = entry.map_or(0, |c| c.total) as f64;
        let denom = total + self.alpha * v as f64;
        let mut probs = vec![self.alpha / denom; v];
        if let Some(c) = entry {
            for &(t, n) in &c.next {
                probs[t as usize] = (n as f64 + self.alpha) / denom;
            }
        }
        probs
    }

    pub fn prob(&self, prefix: &[TokenId], token: TokenId) -> f64 {
        let ctx = self.context_of(prefix);
        let v = self.vocab.len() as f64;
        let total = self.context_total(&ctx) as f64;
        (self.count(&ctx, token) as f64 + self.alpha) / (total + self.alpha * v)
    }

    pub fn log_prob(&self, prefix: &[TokenId], token: TokenId) -> f64 {
        self.prob(prefix, token).ln()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.raw(NGRAM_MAGIC);
        w.u32(self.order as u32);
        w.f64(self.alpha);
        w.bytes(self.name.as_bytes());
        self.vocab.write_body(&mut w);
        let mut ctxs: Vec<&Vec<TokenId>> = self.table.keys().collect();
        ctxs.sort();
        w.u64(ctxs.len() as u64);
        for ctx in ctxs {
            for &t in ctx {
                w.u32(t);
            }
            let c = &self.table[ctx];
            w.u64(c.next.len() as u64);
            for &(t, n) in &c.next {
                w.u32(t);
                w.u32(n);
            }
        }
        w.buf
    }

    /// Parses a model file. Rejects truncation, trailing bytes, out-of-range
    /// ids, zero counts and non-canonical ordering.
    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf, "n-gram model file");
        r.expect_magic(NGRAM_MAGIC)?;
        let order = r.u32()? as usize;
        let alpha = r.f64()?;
        if order == 0 || order > 64 {
            return Err(r.bad(format!("unsupported order {order}")));
        }
        check_hyper(order, alpha).map_err(|e| r.bad(e.to_string()))?;
        let name = String::from_utf8(r.bytes()?.to_vec()).map_err(|_| r.bad("name not UTF-8"))?;
        let vocab = Arc::new(Vocab::read_body(&mut r)?);
        let v = vocab.len() as u32;
        let n_ctx = r.count(4 * (order - 1) + 8)?;
        let mut table = HashMap::with_capacity(n_ctx);
        let mut prev: Option<Vec<TokenId>> = None;
        for _ in 0..n_ctx {
            let mut ctx = Vec::with_capacity(order - 1);
            for _ in 0..order - 1 {
                let t = r.u32()?;
                if t >= v {
                    return Err(r.bad(format!("context id {t} out of range")));
                }
                ctx.push(t);
            }
            if prev.as_ref().is_some_and(|p| p >= &ctx) {
                return Err(r.bad("contexts not in strictly ascending order"));
            }
            let n = r.count(8)?;
            if n == 0 {
                return Err(r.bad("context without continuations"));
            }
            let mut next = Vec::with_capacity(n);
            let mut total = 0u64;
            for _ in 0..n {
                let t = r.u32()?;
                let c = r.u32()?;
                if t >= v || c == 0 {
                    return Err(r.bad("bad continuation entry"));
                }
                if next.last().is_some_and(|&(p, _)| p >= t) {
                    return Err(r.bad("continuations not in ascending order"));
                }
                total += c as u64;
                next.push((t, c));
            }
            prev = Some(ctx.clone());
            table.insert(ctx, NextCounts { total, next });
        }
        r.finish()?;
        Ok(Self {
            name,
            order,
            alpha,
            vocab,
            table,
        })
    }
}

impl PartialEq for NgramModel {
    fn eq(&self, other: &Self) -> bool {
        self.order == other.order
            && self.alpha.to_bits() == other.alpha.to_bits()
            && *self.vocab == *other.vocab
            && self.table == other.table
    }
}

impl GenBackend for NgramModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn next_token(&self, prefix: &[TokenId], params: &SamplingParams) -> Result<Proposal> {
        let probs = self.distribution(prefix);
        let token = super::sampling::select(&probs, params, prefix);
        Ok(Proposal {
            token,
            logprob: Some(probs[token as usize].ln()),
        })
    }
}

/// `KL(p || q)` in nats. Both inputs must be full distributions over the same support.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b).ln())
        .sum()
}
