//! Preference-data synthesis: prompt sampling, paired SLM/LLM responses and
//! equal-length chunk expansion.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::{generate, GenBackend, SamplingParams};
use crate::num::seed_from;
use crate::vocab::{TokenSeq, Vocab, EOS};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptRecord {
    pub id: String,
    pub prompt: String,
    pub source_tag: String,
}

/// How many leading words of each source line become a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrefixWords {
    /// The whole line.
    All,
    /// One prompt per line: its first `n` words.
    Fixed(usize),
    /// One prompt per line and per length in `lo..=hi` (shorter lines give fewer).
    Range(usize, usize),
}

impl std::str::FromStr for PrefixWords {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("prefix words must be N, LO-HI or all, got {s:?}"));
        if s == "all" {
            return Ok(PrefixWords::All);
        }
        let parsed = match s.split_once('-') {
            Some((a, b)) => {
                let (lo, hi) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
                PrefixWords::Range(lo, hi)
            }
            None => PrefixWords::Fixed(s.parse().map_err(|_| bad())?),
        };
        match parsed {
            PrefixWords::Fixed(0) => Err(bad()),
            PrefixWords::Range(lo, hi) if lo == 0 || lo > hi => Err(bad()),
            p => Ok(p),
        }
    }
}

/// Prompts read from one file, in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSource {
    pub tag: String,
    pub prompts: Vec<String>,
}

impl PromptSource {
    /// Plain text gives one prompt per non-blank line; a `.jsonl` file gives
    /// one prompt per object, read from its `"prompt"` field.
    pub fn load(path: &Path, prefix: PrefixWords) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let tag = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "prompts".into());
        let is_jsonl = path.extension().is_some_and(|e| e == "jsonl");
        Self::parse(tag, &text, is_jsonl, prefix)
    }

    pub fn parse(tag: String, text: &str, jsonl: bool, prefix: PrefixWords) -> Result<Self> {
        #[derive(Deserialize)]
        struct Line {
            prompt: String,
        }
        let lines: Vec<String> = if jsonl {
            crate::jsonl::parse_jsonl::<Line>(text)?
                .into_iter()
                .map(|l| l.prompt)
                .collect()
        } else {
            text.lines().map(str::to_owned).collect()
        };
        let mut prompts = Vec::new();
        for line in lines {
            let words: Vec<&str> = line.split_whitespace().collect();
            if words.is_empty() {
                continue;
            }
            match prefix {
                PrefixWords::All => prompts.push(line.trim().to_owned()),
                PrefixWords::Fixed(n) => prompts.push(words[..n.min(words.len())].join(" ")),
                PrefixWords::Range(lo, hi) => {
                    for n in lo..=hi.min(words.len()) {
                        prompts.push(words[..n].join(" "));
                    }
                }
            }
        }
        Ok(Self { tag, prompts })
    }
}

/// Largest-remainder apportionment of `n` over `sizes` (ties to the earlier source).
pub fn apportion(sizes: &[usize], n: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return vec![0; sizes.len()];
    }
    let exact: Vec<(usize, usize)> = sizes
        .iter()
        .map(|&s| {
            let num = s as u128 * n as u128;
            ((num / total as u128) as usize, (num % total as u128) as usize)
        })
        .collect();
    let mut quotas: Vec<usize> = exact.iter().map(|e| e.0).collect();
    let mut left = n - quotas.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| exact[b].1.cmp(&exact[a].1).then(a.cmp(&b)));
    for i in order {
        if left == 0 {
            break;
        }
        if sizes[i] > 0 {
            quotas[i] += 1;
            left -= 1;
        }
    }
    quotas
}

/// Samples `n` prompts across sources, proportionally to source size.
///
/// Without replacement when the sources hold at least `n` prompts; otherwise
/// every prompt is used and the shortfall is drawn with replacement (logged).
pub fn build_prompt_space(sources: &[PromptSource], n: usize, seed: u64) -> Result<Vec<PromptRecord>> {
    let sizes: Vec<usize> = sources.iter().map(|s| s.prompts.len()).collect();
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(Error::NoPrompts);
    }
    let replace = total < n;
    if replace {
        tracing::warn!(available = total, requested = n, "sampling prompts with replacement");
    }
    let quotas = apportion(&sizes, n);
    let mut out = Vec::with_capacity(n);
    for (si, (src, &q)) in sources.iter().zip(&quotas).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_from(seed, format!("{si}:{}", src.tag).as_bytes()));
        let mut idx: Vec<usize> = (0..src.prompts.len()).collect();
        idx.shuffle(&mut rng);
        let picks: Vec<usize> = if q <= idx.len() {
            idx.truncate(q);
            idx
        } else {
            let extra = (0..q - idx.len()).map(|_| rng.gen_range(0..src.prompts.len()));
            idx.iter().copied().chain(extra.collect::<Vec<_>>()).collect()
        };
        let mut seen = vec![0usize; src.prompts.len()];
        for i in picks {
            let id = match seen[i] {
                0 => format!("{}-{i:05}", src.tag),
                k => format!("{}-{i:05}-r{k}", src.tag),
            };
            seen[i] += 1;
            out.push(PromptRecord {
                id,
                prompt: src.prompts[i].clone(),
                source_tag: src.tag.clone(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponsePair {
    pub pair_id: String,
    pub prompt_ids: TokenSeq,
    pub chosen_ids: TokenSeq,
    pub rejected_ids: TokenSeq,
    pub slm_params: SamplingParams,
    pub llm_params: SamplingParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChunkPair {
    pub pair_id: String,
    pub prompt_ids: TokenSeq,
    pub chosen_ids: TokenSeq,
    pub rejected_ids: TokenSeq,
    pub chunk_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairConfig {
    pub max_tokens: usize,
    pub temp_range: (f64, f64),
    pub top_p_range: (f64, f64),
    /// Ignore the ranges and decode both sides greedily.
    pub greedy: bool,
    pub seed: u64,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            max_tokens: 32,
            temp_range: (0.3, 1.2),
            top_p_range: (0.7, 1.0),
            greedy: false,
            seed: 0,
        }
    }
}

impl PairConfig {
    pub fn validate(&self) -> Result<()> {
        let (tl, th) = self.temp_range;
        let (pl, ph) = self.top_p_range;
        if self.max_tokens == 0 {
            return Err(Error::invalid("max_tokens must be at least 1"));
        }
        if !(tl > 0.0 && tl <= th && th.is_finite()) {
            return Err(Error::invalid(format!("bad temperature range [{tl}, {th}]")));
        }
        if !(pl > 0.0 && pl <= ph && ph <= 1.0) {
            return Err(Error::invalid(format!("bad top_p range [{pl}, {ph}]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairOutput {
    pub pairs: Vec<ResponsePair>,
    pub dropped_empty: usize,
    pub failed: usize,
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

fn side_params(rng: &mut ChaCha8Rng, cfg: &PairConfig) -> SamplingParams {
    let temperature = draw(rng, cfg.temp_range);
    let top_p = draw(rng, cfg.top_p_range);
    let seed = rng.gen();
    if cfg.greedy {
        SamplingParams::greedy()
    } else {
        SamplingParams {
            mode: crate::generators::SamplingMode::Sample,
            temperature,
            top_p,
            seed,
        }
    }
}

fn is_empty_response(r: &TokenSeq) -> bool {
    r.iter().all(|&t| t == EOS)
}

/// Generates one chosen (LLM) and one rejected (SLM) response per prompt.
///
/// Output is sorted by pair id, so the degree of parallelism never shows.
pub fn gen_pairs(
    prompts: &[PromptRecord],
    vocab: &Vocab,
    slm: &dyn GenBackend,
    llm: &dyn GenBackend,
    cfg: &PairConfig,
) -> Result<PairOutput> {
    cfg.validate()?;
    enum Outcome {
        Pair(Box<ResponsePair>),
        Empty,
        Failed,
    }
    let outcomes: Vec<Outcome> = prompts
        .par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed_from(cfg.seed, p.id.as_bytes()));
            let llm_params = side_params(&mut rng, cfg);
            let slm_params = side_params(&mut rng, cfg);
            let prompt_ids = vocab.encode_prompt(&p.prompt);
            let run = || -> Result<(TokenSeq, TokenSeq)> {
                Ok((
                    generate(llm, &prompt_ids, &llm_params, cfg.max_tokens)?,
                    generate(slm, &prompt_ids, &slm_params, cfg.max_tokens)?,
                ))
            };
            match run() {
                Err(e) => {
                    tracing::warn!(prompt = %p.id, error = %e, "pair generation failed");
                    Outcome::Failed
                }
                Ok((c, r)) if is_empty_response(&c) || is_empty_response(&r) => Outcome::Empty,
                Ok((chosen_ids, rejected_ids)) => Outcome::Pair(Box::new(ResponsePair {
                    pair_id: p.id.clone(),
                    prompt_ids,
                    chosen_ids,
                    rejected_ids,
                    slm_params,
                    llm_params,
                })),
            }
        })
        .collect();
    let mut out = PairOutput::default();
    for o in outcomes {
        match o {
            Outcome::Pair(p) => out.pairs.push(*p),
            Outcome::Empty => out.dropped_empty += 1,
            Outcome::Failed => out.failed += 1,
        }
    }
    out.pairs.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    if out.dropped_empty > 0 {
        tracing::warn!(count = out.dropped_empty, "dropped pairs with an empty side");
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkConfig {
    pub chunks_per_pair: usize,
    /// With two or more chunks per pair, always emit lengths 1 and m.
    pub force_extremes: bool,
    pub seed: u64,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self {
            chunks_per_pair: 3,
            force_extremes: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChunkOutput {
    pub chunks: Vec<ChunkPair>,
    pub skipped: usize,
}

/// Chunk lengths for one pair with shorter side `m >= 1`.
pub fn chunk_lengths(m: usize, cfg: &ChunkConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut lens = Vec::with_capacity(cfg.chunks_per_pair);
    if cfg.force_extremes && cfg.chunks_per_pair >= 2 {
        lens.push(1);
        lens.push(m);
    }
    while lens.len() < cfg.chunks_per_pair {
        lens.push(rng.gen_range(1..=m));
    }
    lens
}

/// Expands pairs into equal-length prefix chunks.
pub fn chunk_pairs(pairs: &[ResponsePair], cfg: &ChunkConfig) -> Result<ChunkOutput> {
    if cfg.chunks_per_pair == 0 {
        return Err(Error::invalid("chunks_per_pair must be at least 1"));
    }
    let mut out = ChunkOutput::default();
    for p in pairs {
        let m = p.chosen_ids.len().min(p.rejected_ids.len());
        if m == 0 {
            out.skipped += 1;
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed_from(cfg.seed, p.pair_id.as_bytes()));
        for len in chunk_lengths(m, cfg, &mut rng) {
            out.chunks.push(ChunkPair {
                pair_id: p.pair_id.clone(),
                prompt_ids: p.prompt_ids.clone(),
                chosen_ids: p.chosen_ids[..len].iter().copied().collect(),
                rejected_ids: p.rejected_ids[..len].iter().copied().collect(),
                chunk_len: len,
            });
        }
    }
    if out.skipped > 0 {
        tracing::warn!(count = out.skipped, "skipped pairs with an empty side");
    }
    Ok(out)
}

/// Draws `n` chunks without replacement. With `stratified`, the draw is
/// apportioned across chunk lengths in proportion to their frequency.
pub fn subsample_chunks(chunks: &[ChunkPair], n: usize, stratified: bool, seed: u64) -> Vec<ChunkPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed_from(seed, b"subsample"));
    if n >= chunks.len() {
        return chunks.to_vec();
    }
    let mut picked: Vec<usize> = if stratified {
        let mut by_len: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for (i, c) in chunks.iter().enumerate() {
            by_len.entry(c.chunk_len).or_default().push(i);
        }
        let groups: Vec<Vec<usize>> = by_len.into_values().collect();
        let quotas = apportion(&groups.iter().map(Vec::len).collect::<Vec<_>>(), n);
        groups
            .into_iter()
            .zip(quotas)
            .flat_map(|(mut g, q)| {
                g.shuffle(&mut rng);
                g.truncate(q);
                g
            })
            .collect()
    } else {
        let mut all: Vec<usize> = (0..chunks.len()).collect();
        all.shuffle(&mut rng);
        all.truncate(n);
        all
    };
    picked.sort_unstable();
    picked.into_iter().map(|i| chunks[i].clone()).collect()
}
