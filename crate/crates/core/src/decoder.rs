//! Selective-assistance decoding: the SLM drafts every token, the scorer
//! judges it against a threshold, and rejected drafts are replaced by one
//! LLM token for the same prefix.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::generators::{propose_next, GenBackend, SamplingParams};
use crate::num::extended_f64;
use crate::reward::TokenScorer;
use crate::vocab::{TokenId, TokenSeq, Vocab, EOS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatencyMode {
    #[default]
    Simulated,
    Measured,
}

/// Per-call costs charged to a decode step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatencyModel {
    pub slm_ms: f64,
    pub llm_ms: f64,
    pub reward_ms: f64,
    pub mode: LatencyMode,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            slm_ms: 2.0,
            llm_ms: 40.0,
            reward_ms: 1.0,
            mode: LatencyMode::Simulated,
        }
    }
}

impl LatencyModel {
    pub fn simulated(slm_ms: f64, llm_ms: f64, reward_ms: f64) -> Self {
        Self {
            slm_ms,
            llm_ms,
            reward_ms,
            mode: LatencyMode::Simulated,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("slm_ms", self.slm_ms), ("llm_ms", self.llm_ms), ("reward_ms", self.reward_ms)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be a nonnegative number")));
            }
        }
        Ok(())
    }

    /// Simulated cost of one hybrid step. The draft and its score are paid on
    /// every step; the LLM only when the draft is rejected.
    pub fn step_ms(&self, llm_called: bool) -> f64 {
        self.slm_ms + self.reward_ms + if llm_called { self.llm_ms } else { 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePolicy {
    #[default]
    Fail,
    FallbackAccept,
}

impl std::str::FromStr for FailurePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fail" => Ok(FailurePolicy::Fail),
            "fallback_accept" => Ok(FailurePolicy::FallbackAccept),
            _ => Err(Error::invalid(format!("failure policy must be fail or fallback_accept, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HybridConfig {
    #[serde(with = "extended_f64")]
    pub threshold: f64,
    pub max_tokens: usize,
    pub slm_params: SamplingParams,
    pub llm_params: SamplingParams,
    pub failure_policy: FailurePolicy,
    pub latency: LatencyModel,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            threshold: 0.0,
            max_tokens: 32,
            slm_params: SamplingParams::greedy(),
            llm_params: SamplingParams::greedy(),
            failure_policy: FailurePolicy::Fail,
            latency: LatencyModel::default(),
        }
    }
}

impl HybridConfig {
    pub fn with_threshold(&self, threshold: f64) -> Self {
        Self {
            threshold,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.threshold.is_nan() {
            return Err(Error::invalid("threshold must not be NaN"));
        }
        if self.max_tokens == 0 {
            return Err(Error::invalid("max_tokens must be at least 1"));
        }
        self.slm_params.validate()?;
        self.llm_params.validate()?;
        self.latency.validate()
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// `reward >= threshold`. Equality accepts, and `-inf` accepts everything.
pub fn accept_decision(reward: f64, threshold: f64) -> bool {
    reward >= threshold
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Slm,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeStep {
    #[serde(rename = "i")]
    pub index: usize,
    #[serde(rename = "src")]
    pub source: Source,
    #[serde(rename = "tok")]
    pub token: TokenId,
    #[serde(rename = "cand")]
    pub candidate: TokenId,
    #[serde(rename = "r")]
    pub reward: f64,
    #[serde(rename = "lat_ms")]
    pub latency_ms: f64,
    /// The draft was rejected but kept because the LLM call failed.
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeTrace {
    pub prompt: TokenSeq,
    #[serde(with = "extended_f64")]
    pub threshold: f64,
    pub steps: Vec<DecodeStep>,
    pub slm_steps: usize,
    pub llm_steps: usize,
    pub wall_ms: f64,
}

impl DecodeTrace {
    pub fn tokens(&self) -> TokenSeq {
        self.steps.iter().map(|s| s.token).collect()
    }

    pub fn degraded_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.degraded).count()
    }

    /// Checks the structural invariants of a trace.
    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::format("decode trace", m));
        if self.slm_steps + self.llm_steps != self.steps.len() {
            return bad("step totals do not add up".into());
        }
        for (i, s) in self.steps.iter().enumerate() {
            if s.index != i {
                return bad(format!("step {i} has index {}", s.index));
            }
            let accepted = accept_decision(s.reward, self.threshold);
            let ok = match s.source {
                Source::Slm => s.token == s.candidate && (accepted || s.degraded),
                Source::Llm => !accepted && !s.degraded,
            };
            if !ok {
                return bad(format!("step {i} source disagrees with its score"));
            }
            if s.token == EOS && i + 1 != self.steps.len() {
                return bad(format!("EOS at step {i} is not final"));
            }
        }
        Ok(())
    }

    /// Re-scores every recorded draft and confirms each accept/reject decision.
    pub fn replay(&self, scorer: &dyn TokenScorer) -> bool {
        let mut generated: Vec<TokenId> = Vec::with_capacity(self.steps.len());
        for s in &self.steps {
            let r = scorer.score(&self.prompt, &generated, s.candidate);
            if r.to_bits() != s.reward.to_bits() {
                return false;
            }
            let accepted = accept_decision(r, self.threshold);
            if accepted != (s.source == Source::Slm && !s.degraded) {
                return false;
            }
            generated.push(s.token);
        }
        true
    }
}

/// JSONL rendering of a trace: a header line, then one line per step.
pub fn trace_jsonl(prompt_id: &str, cfg: &HybridConfig, trace: &DecodeTrace) -> Result<String> {
    #[derive(Serialize)]
    struct Header<'a> {
        prompt_id: &'a str,
        #[serde(with = "extended_f64")]
        threshold: f64,
        config_hash: String,
    }
    let mut out = serde_json::to_string(&Header {
        prompt_id,
        threshold: trace.threshold,
        config_hash: cfg.config_hash(),
    })?;
    out.push('\n');
    out.push_str(&crate::jsonl::to_jsonl_string(&trace.steps)?);
    Ok(out)
}

pub struct HybridEngine {
    slm: Arc<dyn GenBackend>,
    llm: Arc<dyn GenBackend>,
    scorer: Arc<dyn TokenScorer>,
    vocab: Arc<Vocab>,
}

impl HybridEngine {
    /// Fails unless both backends and the scorer were built on `vocab`.
    pub fn new(
        vocab: Arc<Vocab>,
        slm: Arc<dyn GenBackend>,
        llm: Arc<dyn GenBackend>,
        scorer: Arc<dyn TokenScorer>,
    ) -> Result<Self> {
        for b in [&slm, &llm] {
            if b.vocab().hash() != vocab.hash() {
                return Err(Error::VocabMismatch(format!("backend {} uses another vocabulary", b.name())));
            }
        }
        if scorer.vocab_hash() != vocab.hash() {
            return Err(Error::ModelVocabMismatch);
        }
        Ok(Self { slm, llm, scorer, vocab })
    }

    pub fn vocab(&self) -> &Arc<Vocab> {
        &self.vocab
    }

    pub fn slm(&self) -> &Arc<dyn GenBackend> {
        &self.slm
    }

    pub fn llm(&self) -> &Arc<dyn GenBackend> {
        &self.llm
    }

    pub fn scorer(&self) -> &Arc<dyn TokenScorer> {
        &self.scorer
    }

    pub fn decode(&self, cfg: &HybridConfig, prompt: &[TokenId]) -> Result<(TokenSeq, DecodeTrace)> {
        cfg.validate()?;
        self.vocab.check_seq(prompt)?;
        if prompt.is_empty() {
            return Err(Error::invalid("prompt must contain at least BOS"));
        }
        let started = Instant::now();
        let plen = prompt.len();
        let mut prefix = prompt.to_vec();
        let mut trace = DecodeTrace {
            prompt: prompt.to_vec().into(),
            threshold: cfg.threshold,
            steps: Vec::with_capacity(cfg.max_tokens),
            slm_steps: 0,
            llm_steps: 0,
            wall_ms: 0.0,
        };
        for index in 0..cfg.max_tokens {
            let step_start = Instant::now();
            let cand = propose_next(self.slm.as_ref(), &prefix, &cfg.slm_params)?.token;
            let reward = self.scorer.score(&prefix[..plen], &prefix[plen..], cand);
            let accepted = accept_decision(reward, cfg.threshold);
            let (source, token, degraded) = if accepted {
                (Source::Slm, cand, false)
            } else {
                match propose_next(self.llm.as_ref(), &prefix, &cfg.llm_params) {
                    Ok(p) => (Source::Llm, p.token, false),
                    Err(e) => match cfg.failure_policy {
                        FailurePolicy::Fail => {
                            return Err(Error::LlmFailure {
                                step: index,
                                source: Box::new(e),
                            })
                        }
                        FailurePolicy::FallbackAccept => {
                            tracing::warn!(step = index, error = %e, "llm failed; keeping draft");
                            (Source::Slm, cand, true)
                        }
                    },
                }
            };
            let latency_ms = match cfg.latency.mode {
                LatencyMode::Simulated => cfg.latency.step_ms(!accepted),
                LatencyMode::Measured => step_start.elapsed().as_secs_f64() * 1e3,
            };
            match source {
                Source::Slm => trace.slm_steps += 1,
                Source::Llm => trace.llm_steps += 1,
            }
            trace.steps.push(DecodeStep {
                index,
                source,
                token,
                candidate: cand,
                reward,
                latency_ms,
                degraded,
            });
            prefix.push(token);
            if token == EOS {
                break;
            }
        }
        trace.wall_ms = match cfg.latency.mode {
            LatencyMode::Simulated => trace.steps.iter().map(|s| s.latency_ms).sum(),
            LatencyMode::Measured => started.elapsed().as_secs_f64() * 1e3,
        };
        Ok((prefix[plen..].to_vec().into(), trace))
    }

    /// Decodes every prompt independently; results keep the input order and
    /// one prompt's failure does not affect the others.
    pub fn batch_decode(
        &self,
        cfg: &HybridConfig,
        prompts: &[TokenSeq],
    ) -> Vec<Result<(TokenSeq, DecodeTrace)>> {
        prompts.par_iter().map(|p| self.decode(cfg, p)).collect()
    }
}
