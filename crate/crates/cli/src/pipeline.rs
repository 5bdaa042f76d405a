//! Pipeline stages shared by the subcommands, the service and the tests.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use hydec_core::decoder::HybridEngine;
use hydec_core::generators::{GenBackend, NgramModel, RemoteBackend};
use hydec_core::jsonl::{read_jsonl, write_jsonl, Manifest};
use hydec_core::num::seed_from;
use hydec_core::reward::{RewardModel, TokenScorer, TrainReport};
use hydec_core::synth::{
    build_prompt_space, chunk_pairs, gen_pairs, subsample_chunks, ChunkConfig, ChunkOutput, PairConfig,
    PairOutput, PrefixWords, PromptRecord, PromptSource, ResponsePair,
};
use hydec_core::{Error, Result, TokenSeq, Vocab, VocabHash};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::{AppConfig, ModelsConfig};

/// Shared vocabulary plus the two surrogate generators.
#[derive(Debug, Clone)]
pub struct Surrogates {
    pub vocab: Arc<Vocab>,
    pub slm: Arc<NgramModel>,
    pub llm: Arc<NgramModel>,
}

pub fn read_texts(paths: &[impl AsRef<Path>]) -> Result<Vec<String>> {
    paths.iter().map(|p| Ok(fs::read_to_string(p.as_ref())?)).collect()
}

/// Vocabulary over all texts; the LLM trains on every line, the SLM on every
/// `slm_subset_every`-th line.
pub fn build_surrogates(texts: &[String], m: &ModelsConfig) -> Result<Surrogates> {
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let vocab = Arc::new(Vocab::build_from(&refs, m.granularity)?);
    let lines: Vec<TokenSeq> = texts
        .iter()
        .flat_map(|t| t.lines())
        .filter(|l| !l.trim().is_empty())
        .map(|l| vocab.tokenize(l).into())
        .collect();
    let subset: Vec<TokenSeq> = lines
        .iter()
        .step_by(m.slm_subset_every.max(1))
        .cloned()
        .collect();
    let llm = NgramModel::train_sequences(vocab.clone(), &lines, m.llm_order, m.alpha)?.with_name("llm-surrogate");
    let slm = NgramModel::train_sequences(vocab.clone(), &subset, m.slm_order, m.alpha)?.with_name("slm-surrogate");
    Ok(Surrogates {
        vocab,
        slm: Arc::new(slm),
        llm: Arc::new(llm),
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

impl Surrogates {
    pub fn save(&self, cfg: &AppConfig) -> Result<()> {
        write_file(&cfg.artifact(&cfg.paths.vocab), &self.vocab.to_bytes())?;
        write_file(&cfg.artifact(&cfg.paths.slm), &self.slm.to_bytes())?;
        write_file(&cfg.artifact(&cfg.paths.llm), &self.llm.to_bytes())?;
        Ok(())
    }

    pub fn load(cfg: &AppConfig) -> Result<Self> {
        let vocab = Arc::new(Vocab::from_bytes(&fs::read(cfg.artifact(&cfg.paths.vocab))?)?);
        let slm = NgramModel::from_bytes(&fs::read(cfg.artifact(&cfg.paths.slm))?)?.with_name("slm-surrogate");
        let llm = NgramModel::from_bytes(&fs::read(cfg.artifact(&cfg.paths.llm))?)?.with_name("llm-surrogate");
        for m in [&slm, &llm] {
            if m.vocab().hash() != vocab.hash() {
                return Err(Error::VocabMismatch(format!("{} was trained on another vocabulary", m.name())));
            }
        }
        Ok(Self {
            vocab,
            slm: Arc::new(slm),
            llm: Arc::new(llm),
        })
    }
}

pub fn write_dataset<T: Serialize>(path: &Path, records: &[T], kind: &str, vocab: VocabHash, seed: u64) -> Result<()> {
    write_jsonl(path, records)?;
    Manifest {
        kind: kind.into(),
        records: records.len(),
        vocab_hash: vocab,
        seed,
    }
    .write_for(path)
}

/// Reads a dataset and checks its manifest against `vocab`.
pub fn read_dataset<T: DeserializeOwned>(path: &Path, vocab: &Vocab) -> Result<Vec<T>> {
    let manifest = Manifest::read_for(path)?;
    manifest.check_vocab(&vocab.hash())?;
    let recs: Vec<T> = read_jsonl(path)?;
    if recs.len() != manifest.records {
        return Err(Error::Format {
            what: "dataset",
            detail: format!("manifest lists {} records, file has {}", manifest.records, recs.len()),
        });
    }
    Ok(recs)
}

pub fn prompt_sources(cfg: &AppConfig) -> Result<Vec<PromptSource>> {
    let prefix: PrefixWords = cfg.synth.prefix_words.parse()?;
    let files = if cfg.synth.prompt_sources.is_empty() {
        &cfg.paths.corpus
    } else {
        &cfg.synth.prompt_sources
    };
    files.iter().map(|f| PromptSource::load(f, prefix)).collect()
}

pub fn synth_prompts(cfg: &AppConfig, n: usize) -> Result<Vec<PromptRecord>> {
    build_prompt_space(&prompt_sources(cfg)?, n, cfg.seed)
}

/// The fixed evaluation suite used by `sweep`, `decode` comparisons and the service tests.
pub fn suite_prompts(cfg: &AppConfig, n: usize) -> Result<Vec<PromptRecord>> {
    build_prompt_space(&prompt_sources(cfg)?, n, seed_from(cfg.seed, b"suite"))
}

pub fn pair_config(cfg: &AppConfig) -> PairConfig {
    PairConfig {
        max_tokens: cfg.synth.max_tokens,
        temp_range: cfg.synth.temp_range,
        top_p_range: cfg.synth.top_p_range,
        greedy: cfg.synth.greedy,
        seed: cfg.seed,
    }
}

pub fn make_pairs(cfg: &AppConfig, s: &Surrogates, prompts: &[PromptRecord]) -> Result<PairOutput> {
    gen_pairs(prompts, &s.vocab, s.slm.as_ref(), s.llm.as_ref(), &pair_config(cfg))
}

pub fn make_chunks(cfg: &AppConfig, pairs: &[ResponsePair]) -> Result<ChunkOutput> {
    let mut out = chunk_pairs(
        pairs,
        &ChunkConfig {
            chunks_per_pair: cfg.synth.chunks_per_pair,
            force_extremes: cfg.synth.force_extremes,
            seed: cfg.seed,
        },
    )?;
    if cfg.synth.subsample > 0 {
        out.chunks = subsample_chunks(&out.chunks, cfg.synth.subsample, cfg.synth.stratify, cfg.seed);
    }
    Ok(out)
}

pub fn train_reward(
    cfg: &AppConfig,
    vocab: &Vocab,
    chunks: &[hydec_core::synth::ChunkPair],
) -> Result<(RewardModel, TrainReport)> {
    let mut tc = cfg.train.clone();
    tc.seed = cfg.seed;
    hydec_core::reward::train(vocab, chunks, &tc)
}

/// The LLM side: the remote endpoint when configured, else the surrogate.
pub fn llm_backend(cfg: &AppConfig, s: &Surrogates) -> Result<Arc<dyn GenBackend>> {
    Ok(match &cfg.remote {
        Some(ep) => Arc::new(RemoteBackend::new(ep.clone(), s.vocab.clone())?),
        None => s.llm.clone(),
    })
}

pub fn engine(cfg: &AppConfig, s: &Surrogates, scorer: Arc<dyn TokenScorer>) -> Result<HybridEngine> {
    HybridEngine::new(s.vocab.clone(), s.slm.clone(), llm_backend(cfg, s)?, scorer)
}

pub fn load_reward(cfg: &AppConfig, vocab: &Vocab) -> Result<RewardModel> {
    RewardModel::load(&cfg.artifact(&cfg.paths.reward_model), vocab)
}

pub fn save_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    write_file(path, bytes)
}
