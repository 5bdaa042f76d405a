//! Per-token reward scorer and its pairwise preference trainer.
//!
//! A position is scored from the embeddings of its last `k` context tokens
//! (left-padded with BOS) and of the candidate:
//! `r = w2 . tanh(W1^T x + b1) + b2` with `x = [emb(c_1) .. emb(c_k) ++ emb(cand)]`.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::num::{seed_from, sigmoid, softplus};
use crate::synth::ChunkPair;
use crate::vocab::{TokenId, Vocab, VocabHash, BOS};

const RM_MAGIC: &[u8] = b"HYDEC-RM-v1\n";

/// Pairs per parallel work unit. Gradients are summed unit by unit in a
/// fixed order, so results do not depend on the thread count.
const WORK_UNIT: usize = 16;

/// Anything that can score a candidate token in context.
///
/// The context is split into the prompt and the tokens generated after it so
/// that position-aware scorers can be expressed; [`RewardModel`] only sees
/// their concatenation.
pub trait TokenScorer: Send + Sync {
    fn vocab_hash(&self) -> VocabHash;

    fn score(&self, prompt: &[TokenId], generated: &[TokenId], candidate: TokenId) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Mean of per-token scores; identical for a constant scorer at every length.
    #[default]
    Mean,
    /// Score of the last token only.
    Final,
}

impl Aggregation {
    fn code(self) -> u8 {
        match self {
            Aggregation::Mean => 0,
            Aggregation::Final => 1,
        }
    }
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Aggregation::Mean),
            "final" => Ok(Aggregation::Final),
            _ => Err(Error::invalid(format!("aggregation must be mean or final, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub vocab_size: usize,
    pub d: usize,
    pub k: usize,
    pub h: usize,
}

impl Dims {
    pub fn input(&self) -> usize {
        (self.k + 1) * self.d
    }

    fn check(&self) -> Result<()> {
        if self.vocab_size == 0 || self.d == 0 || self.h == 0 {
            return Err(Error::invalid(format!("degenerate reward dims {self:?}")));
        }
        if self.k > 64 || self.d > 4096 || self.h > 4096 {
            return Err(Error::invalid(format!("reward dims too large {self:?}")));
        }
        Ok(())
    }
}

/// Scorer parameters. `w1` is `(k+1)d x h`, row-major (one row per input feature).
#[derive(Clone, PartialEq)]
pub struct RewardModel {
    vocab_hash: VocabHash,
    dims: Dims,
    pub aggregation: Aggregation,
    pub emb: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl fmt::Debug for RewardModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RewardModel")
            .field("vocab_hash", &self.vocab_hash)
            .field("dims", &self.dims)
            .field("aggregation", &self.aggregation)
            .finish_non_exhaustive()
    }
}

impl RewardModel {
    pub fn zeros(vocab: &Vocab, d: usize, k: usize, h: usize) -> Result<Self> {
        let dims = Dims {
            vocab_size: vocab.len(),
            d,
            k,
            h,
        };
        Self::zeros_with(vocab.hash(), dims)
    }

    fn zeros_with(vocab_hash: VocabHash, dims: Dims) -> Result<Self> {
        dims.check()?;
        Ok(Self {
            vocab_hash,
            dims,
            aggregation: Aggregation::Mean,
            emb: vec![0.0; dims.vocab_size * dims.d],
            w1: vec![0.0; dims.input() * dims.h],
            b1: vec![0.0; dims.h],
            w2: vec![0.0; dims.h],
            b2: 0.0,
        })
    }

    /// Constant scorer returning `c` everywhere.
    pub fn constant(vocab: &Vocab, c: f64) -> Self {
        let mut m = Self::zeros(vocab, 1, 0, 1).expect("valid dims");
        m.b2 = c;
        m
    }

    /// Seeded initialization: embeddings uniform in [-0.1, 0.1], weights
    /// normal with std 1/sqrt(fan-in), biases zero.
    pub fn init(vocab: &Vocab, d: usize, k: usize, h: usize, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(vocab, d, k, h)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed_from(seed, b"reward-init"));
        for e in &mut m.emb {
            *e = rng.gen_range(-0.1..=0.1);
        }
        let n1 = Normal::new(0.0, 1.0 / (m.dims.input() as f64).sqrt()).expect("finite std");
        for w in &mut m.w1 {
            *w = n1.sample(&mut rng);
        }
        let n2 = Normal::new(0.0, 1.0 / (h as f64).sqrt()).expect("finite std");
        for w in &mut m.w2 {
            *w = n2.sample(&mut rng);
        }
        Ok(m)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn vocab_hash(&self) -> VocabHash {
        self.vocab_hash
    }

    pub fn check_vocab(&self, vocab: &Vocab) -> Result<()> {
        if self.vocab_hash != vocab.hash() || self.dims.vocab_size != vocab.len() {
            return Err(Error::ModelVocabMismatch);
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.emb.len() + self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    pub fn is_finite(&self) -> bool {
        self.b2.is_finite()
            && [&self.emb, &self.w1, &self.b1, &self.w2]
                .iter()
                .all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Fills `slots` with the `k` context tokens (BOS-padded) and the candidate.
    fn slots(&self, prompt: &[TokenId], generated: &[TokenId], candidate: TokenId, slots: &mut Vec<TokenId>) {
        let k = self.dims.k;
        let n = prompt.len() + generated.len();
        slots.clear();
        for s in 0..k {
            let pos = (n + s).checked_sub(k);
            slots.push(match pos {
                None => BOS,
                Some(p) if p < prompt.len() => prompt[p],
                Some(p) => generated[p - prompt.len()],
            });
        }
        slots.push(candidate);
    }

    /// Writes `tanh(z)` into `act` and returns the score.
    fn forward(&self, slots: &[TokenId], act: &mut [f64]) -> f64 {
        let Dims { d, h, .. } = self.dims;
        act.copy_from_slice(&self.b1);
        for (s, &tok) in slots.iter().enumerate() {
            let e = &self.emb[tok as usize * d..][..d];
            for (i, &ei) in e.iter().enumerate() {
                let row = &self.w1[(s * d + i) * h..][..h];
                for (z, &w) in act.iter_mut().zip(row) {
                    *z += ei * w;
                }
            }
        }
        let mut r = self.b2;
        for (a, &w) in act.iter_mut().zip(&self.w2) {
            *a = a.tanh();
            r += w * *a;
        }
        r
    }

    /// Accumulates `c * d(score)/d(params)` for one scored position.
    fn backward(&self, slots: &[TokenId], act: &[f64], c: f64, g: &mut Grads, dz: &mut [f64]) {
        let Dims { d, h, .. } = self.dims;
        g.b2 += c;
        for j in 0..h {
            g.w2[j] += c * act[j];
            dz[j] = c * self.w2[j] * (1.0 - act[j] * act[j]);
            g.b1[j] += dz[j];
        }
        for (s, &tok) in slots.iter().enumerate() {
            let base = tok as usize * d;
            for i in 0..d {
                let ei = self.emb[base + i];
                let off = (s * d + i) * h;
                let row = &self.w1[off..][..h];
                let grow = &mut g.w1[off..][..h];
                let mut dx = 0.0;
                for j in 0..h {
                    grow[j] += ei * dz[j];
                    dx += row[j] * dz[j];
                }
                g.emb[base + i] += dx;
            }
        }
    }

    fn score_raw(&self, prompt: &[TokenId], generated: &[TokenId], candidate: TokenId) -> f64 {
        let mut slots = Vec::with_capacity(self.dims.k + 1);
        let mut act = vec![0.0; self.dims.h];
        self.slots(prompt, generated, candidate, &mut slots);
        self.forward(&slots, &mut act)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.raw(RM_MAGIC);
        for v in [self.dims.vocab_size, self.dims.d, self.dims.k, self.dims.h] {
            w.u32(v as u32);
        }
        w.u8(self.aggregation.code());
        w.raw(&self.vocab_hash.0);
        w.f64_slice(&self.emb);
        w.f64_slice(&self.w1);
        w.f64_slice(&self.b1);
        w.f64_slice(&self.w2);
        w.f64(self.b2);
        w.buf
    }

    /// Parses a model file without checking it against a vocabulary.
    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf, "reward model file");
        r.expect_magic(RM_MAGIC)?;
        let dims = Dims {
            vocab_size: r.u32()? as usize,
            d: r.u32()? as usize,
            k: r.u32()? as usize,
            h: r.u32()? as usize,
        };
        dims.check().map_err(|e| r.bad(e.to_string()))?;
        let aggregation = match r.u8()? {
            0 => Aggregation::Mean,
            1 => Aggregation::Final,
            c => return Err(r.bad(format!("unknown aggregation code {c}"))),
        };
        let mut hash = [0u8; 32];
        hash.copy_from_slice(r.take(32)?);
        let n_emb = dims.vocab_size.checked_mul(dims.d).ok_or_else(|| r.bad("size overflow"))?;
        let needed = (n_emb + dims.input() * dims.h + 2 * dims.h + 1) * 8;
        if r.remaining() != needed {
            return Err(r.bad(format!("expected {needed} tensor bytes, found {}", r.remaining())));
        }
        let mut m = Self::zeros_with(VocabHash(hash), dims)?;
        m.aggregation = aggregation;
        m.emb = r.f64_vec(n_emb)?;
        m.w1 = r.f64_vec(dims.input() * dims.h)?;
        m.b1 = r.f64_vec(dims.h)?;
        m.w2 = r.f64_vec(dims.h)?;
        m.b2 = r.f64()?;
        r.finish()?;
        if !m.is_finite() {
            return Err(Error::format("reward model file", "non-finite parameter"));
        }
        Ok(m)
    }

    /// Parses a model file and checks that it was trained under `vocab`.
    pub fn from_bytes_for(buf: &[u8], vocab: &Vocab) -> Result<Self> {
        let m = Self::from_bytes(buf)?;
        m.check_vocab(vocab)?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path, vocab: &Vocab) -> Result<Self> {
        Self::from_bytes_for(&fs::read(path)?, vocab)
    }
}

impl TokenScorer for RewardModel {
    fn vocab_hash(&self) -> VocabHash {
        self.vocab_hash
    }

    fn score(&self, prompt: &[TokenId], generated: &[TokenId], candidate: TokenId) -> f64 {
        self.score_raw(prompt, generated, candidate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRequest<'a> {
    /// Prompt followed by the tokens generated so far.
    pub context: &'a [TokenId],
    pub candidate: TokenId,
}

/// Checked scoring entry point.
pub fn score_token(model: &RewardModel, vocab: &Vocab, req: &ScoreRequest<'_>) -> Result<f64> {
    model.check_vocab(vocab)?;
    if req.context.is_empty() {
        return Err(Error::invalid("score context must contain at least BOS"));
    }
    for &t in req.context {
        vocab.check_id(t)?;
    }
    vocab.check_id(req.candidate)?;
    Ok(model.score_raw(req.context, &[], req.candidate))
}

/// Per-token scores of `chunk` after `prompt`.
pub fn token_scores(scorer: &dyn TokenScorer, prompt: &[TokenId], chunk: &[TokenId]) -> Vec<f64> {
    (0..chunk.len())
        .map(|i| scorer.score(prompt, &chunk[..i], chunk[i]))
        .collect()
}

/// Mean per-token score of a non-empty chunk.
pub fn chunk_reward(scorer: &dyn TokenScorer, prompt: &[TokenId], chunk: &[TokenId]) -> Result<f64> {
    chunk_reward_with(scorer, prompt, chunk, Aggregation::Mean)
}

pub fn chunk_reward_with(
    scorer: &dyn TokenScorer,
    prompt: &[TokenId],
    chunk: &[TokenId],
    aggregation: Aggregation,
) -> Result<f64> {
    if chunk.is_empty() {
        return Err(Error::invalid("chunk must be non-empty"));
    }
    Ok(match aggregation {
        Aggregation::Mean => running_mean(token_scores(scorer, prompt, chunk)),
        Aggregation::Final => {
            let n = chunk.len() - 1;
            scorer.score(prompt, &chunk[..n], chunk[n])
        }
    })
}

/// Incremental mean; exact when every value is equal, whatever the count.
fn running_mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut mean = 0.0;
    for (i, v) in values.into_iter().enumerate() {
        mean += (v - mean) / (i + 1) as f64;
    }
    mean
}

/// `-ln sigmoid(r_w - r_l)`, evaluated as `softplus(r_l - r_w)`.
pub fn preference_loss(r_w: f64, r_l: f64) -> f64 {
    softplus(-(r_w - r_l))
}

/// Derivative of [`preference_loss`] with respect to `r_w - r_l`.
pub fn preference_loss_grad(delta: f64) -> f64 {
    -sigmoid(-delta)
}

/// Gradient buffers shaped like [`RewardModel`]'s tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub emb: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl Grads {
    fn zeros(m: &RewardModel) -> Self {
        Self {
            emb: vec![0.0; m.emb.len()],
            w1: vec![0.0; m.w1.len()],
            b1: vec![0.0; m.b1.len()],
            w2: vec![0.0; m.w2.len()],
            b2: 0.0,
        }
    }

    fn add(&mut self, o: &Grads) {
        for (a, b) in [
            (&mut self.emb, &o.emb),
            (&mut self.w1, &o.w1),
            (&mut self.b1, &o.b1),
            (&mut self.w2, &o.w2),
        ] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.b2 += o.b2;
    }

    pub fn norm(&self) -> f64 {
        let sq: f64 = [&self.emb, &self.w1, &self.b1, &self.w2]
            .iter()
            .flat_map(|t| t.iter())
            .map(|x| x * x)
            .sum();
        (sq + self.b2 * self.b2).sqrt()
    }
}

struct Scratch {
    slots: Vec<TokenId>,
    acts: Vec<f64>,
    dz: Vec<f64>,
}

impl Scratch {
    fn new(m: &RewardModel) -> Self {
        Self {
            slots: Vec::new(),
            acts: Vec::new(),
            dz: vec![0.0; m.dims.h],
        }
    }
}

/// Forward pass over one side of a chunk pair. Leaves the activations of
/// every position in `sc.acts` and returns the aggregated reward.
fn side_forward(m: &RewardModel, prompt: &[TokenId], chunk: &[TokenId], sc: &mut Scratch) -> f64 {
    let h = m.dims.h;
    sc.acts.resize(chunk.len() * h, 0.0);
    let mut mean = 0.0;
    let mut last = 0.0;
    for i in 0..chunk.len() {
        m.slots(prompt, &chunk[..i], chunk[i], &mut sc.slots);
        last = m.forward(&sc.slots, &mut sc.acts[i * h..][..h]);
        mean += (last - mean) / (i + 1) as f64;
    }
    match m.aggregation {
        Aggregation::Mean => mean,
        Aggregation::Final => last,
    }
}

/// Backward pass matching [`side_forward`]; `c` is d(loss)/d(reward).
fn side_backward(m: &RewardModel, prompt: &[TokenId], chunk: &[TokenId], c: f64, g: &mut Grads, sc: &mut Scratch) {
    let h = m.dims.h;
    let n = chunk.len();
    let (first, weight) = match m.aggregation {
        Aggregation::Mean => (0, c / n as f64),
        Aggregation::Final => (n - 1, c),
    };
    for i in first..n {
        m.slots(prompt, &chunk[..i], chunk[i], &mut sc.slots);
        let slots = std::mem::take(&mut sc.slots);
        m.backward(&slots, &sc.acts[i * h..][..h], weight, g, &mut sc.dz);
        sc.slots = slots;
    }
}

/// Summed loss and gradient over `pairs`, each pair weighted by `scale`.
fn unit_objective(m: &RewardModel, pairs: &[&ChunkPair], scale: f64) -> (f64, Grads) {
    let mut g = Grads::zeros(m);
    let mut sc = Scratch::new(m);
    let mut loss = 0.0;
    for p in pairs {
        let rw = side_forward(m, &p.prompt_ids, &p.chosen_ids, &mut sc);
        let chosen_acts = std::mem::take(&mut sc.acts);
        let rl = side_forward(m, &p.prompt_ids, &p.rejected_ids, &mut sc);
        let delta = rw - rl;
        loss += preference_loss(rw, rl) * scale;
        let dd = preference_loss_grad(delta) * scale;
        side_backward(m, &p.prompt_ids, &p.rejected_ids, -dd, &mut g, &mut sc);
        sc.acts = chosen_acts;
        side_backward(m, &p.prompt_ids, &p.chosen_ids, dd, &mut g, &mut sc);
    }
    (loss, g)
}

/// Mean preference loss over `batch` and its exact gradient.
pub fn objective_and_grad(m: &RewardModel, batch: &[ChunkPair]) -> Result<(f64, Grads)> {
    if batch.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let refs: Vec<&ChunkPair> = batch.iter().collect();
    Ok(batch_objective(m, &refs))
}

fn batch_objective(m: &RewardModel, batch: &[&ChunkPair]) -> (f64, Grads) {
    let scale = 1.0 / batch.len() as f64;
    let parts: Vec<(f64, Grads)> = batch
        .par_chunks(WORK_UNIT)
        .map(|unit| unit_objective(m, unit, scale))
        .collect();
    let mut iter = parts.into_iter();
    let (mut loss, mut g) = iter.next().expect("non-empty batch");
    for (l, gi) in iter {
        loss += l;
        g.add(&gi);
    }
    (loss, g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub d: usize,
    pub k: usize,
    pub h: usize,
    pub clip_norm: f64,
    pub holdout_frac: f64,
    pub aggregation: Aggregation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            batch_size: 256,
            epochs: 20,
            seed: 0,
            d: 16,
            k: 4,
            h: 32,
            clip_norm: 5.0,
            holdout_frac: 0.1,
            aggregation: Aggregation::Mean,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(0.0..=0.5).contains(&self.holdout_frac) {
            return Err(Error::invalid("holdout_frac must be in [0, 0.5]"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::invalid("clip_norm must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub holdout_loss: f64,
    pub rank_acc: f64,
    pub mean_chosen_r: f64,
    pub mean_rejected_r: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
    pub n_train: usize,
    pub n_holdout: usize,
}

/// Held-out statistics of a scorer on chunk pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub loss: f64,
    /// Fraction of pairs with `r_w > r_l`; exact ties count one half.
    pub rank_acc: f64,
    pub mean_chosen_r: f64,
    pub mean_rejected_r: f64,
    pub n: usize,
}

pub fn evaluate(m: &RewardModel, pairs: &[ChunkPair]) -> Result<EvalStats> {
    if pairs.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let rewards: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|p| {
            let mut sc = Scratch::new(m);
            (
                side_forward(m, &p.prompt_ids, &p.chosen_ids, &mut sc),
                side_forward(m, &p.prompt_ids, &p.rejected_ids, &mut sc),
            )
        })
        .collect();
    let n = rewards.len() as f64;
    let mut s = EvalStats {
        loss: 0.0,
        rank_acc: 0.0,
        mean_chosen_r: 0.0,
        mean_rejected_r: 0.0,
        n: rewards.len(),
    };
    for &(w, l) in &rewards {
        s.loss += preference_loss(w, l);
        s.rank_acc += if w > l {
            1.0
        } else if w == l {
            0.5
        } else {
            0.0
        };
        s.mean_chosen_r += w;
        s.mean_rejected_r += l;
    }
    s.loss /= n;
    s.rank_acc /= n;
    s.mean_chosen_r /= n;
    s.mean_rejected_r /= n;
    Ok(s)
}

/// Deterministic train/holdout split by pair id, so chunks of one response
/// pair never straddle the two sets.
pub fn split_holdout(chunks: &[ChunkPair], frac: f64, seed: u64) -> (Vec<ChunkPair>, Vec<ChunkPair>) {
    let mut ids: Vec<&str> = chunks.iter().map(|c| c.pair_id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed_from(seed, b"holdout"));
    ids.shuffle(&mut rng);
    let n_hold = (ids.len() as f64 * frac).round() as usize;
    let held: std::collections::HashSet<&str> = ids[..n_hold].iter().copied().collect();
    let (hold, train): (Vec<ChunkPair>, Vec<ChunkPair>) =
        chunks.iter().cloned().partition(|c| held.contains(c.pair_id.as_str()));
    (train, hold)
}

fn check_chunks(vocab: &Vocab, chunks: &[ChunkPair]) -> Result<()> {
    for c in chunks {
        if c.chosen_ids.is_empty() || c.chosen_ids.len() != c.rejected_ids.len() {
            return Err(Error::invalid(format!("chunk pair {} has unequal or empty sides", c.pair_id)));
        }
        for ids in [&c.prompt_ids, &c.chosen_ids, &c.rejected_ids] {
            for &t in ids.iter() {
                vocab.check_id(t)?;
            }
        }
    }
    Ok(())
}

/// Minibatch gradient descent on the mean preference loss.
pub fn train(vocab: &Vocab, chunks: &[ChunkPair], cfg: &TrainConfig) -> Result<(RewardModel, TrainReport)> {
    cfg.validate()?;
    check_chunks(vocab, chunks)?;
    let (train_set, hold_set) = split_holdout(chunks, cfg.holdout_frac, cfg.seed);
    if train_set.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let mut m = RewardModel::init(vocab, cfg.d, cfg.k, cfg.h, cfg.seed)?;
    m.aggregation = cfg.aggregation;
    let mut report = TrainReport {
        epochs: Vec::with_capacity(cfg.epochs),
        n_train: train_set.len(),
        n_holdout: hold_set.len(),
    };
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_from(cfg.seed, format!("epoch{epoch}").as_bytes()));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&ChunkPair> = idx.iter().map(|&i| &train_set[i]).collect();
            let (loss, mut g) = batch_objective(&m, &batch);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    first_pair: batch[0].pair_id.clone(),
                });
            }
            loss_sum += loss * batch.len() as f64;
            let norm = g.norm();
            let scale = if norm > cfg.clip_norm { cfg.clip_norm / norm } else { 1.0 };
            let step = cfg.learning_rate * scale;
            apply(&mut m, &mut g, step);
            if !m.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    first_pair: batch[0].pair_id.clone(),
                });
            }
        }
        let eval_on = if hold_set.is_empty() { &train_set } else { &hold_set };
        let ev = evaluate(&m, eval_on)?;
        let rec = EpochReport {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            holdout_loss: ev.loss,
            rank_acc: ev.rank_acc,
            mean_chosen_r: ev.mean_chosen_r,
            mean_rejected_r: ev.mean_rejected_r,
        };
        tracing::info!(
            epoch,
            train_loss = rec.train_loss,
            holdout_loss = rec.holdout_loss,
            rank_acc = rec.rank_acc,
            "epoch done"
        );
        report.epochs.push(rec);
    }
    Ok((m, report))
}

fn apply(m: &mut RewardModel, g: &mut Grads, step: f64) {
    for (p, gr) in [
        (&mut m.emb, &g.emb),
        (&mut m.w1, &g.w1),
        (&mut m.b1, &g.b1),
        (&mut m.w2, &g.w2),
    ] {
        for (x, y) in p.iter_mut().zip(gr.iter()) {
            *x -= step * y;
        }
    }
    m.b2 -= step * g.b2;
}
