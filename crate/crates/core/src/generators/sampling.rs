//! Greedy and nucleus (top-p) token selection.
//!
//! Sampling is stateless: the random stream for a step is derived from the
//! seed and the prefix, so a given `(prefix, params)` always picks the same
//! token, in any process and in any order of evaluation.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::seed_from;
use crate::vocab::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    Greedy,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingParams {
    pub mode: SamplingMode,
    pub temperature: f64,
    pub top_p: f64,
    pub seed: u64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self::greedy()
    }
}

impl SamplingParams {
    pub fn greedy() -> Self {
        Self {
            mode: SamplingMode::Greedy,
            temperature: 1.0,
            top_p: 1.0,
            seed: 0,
        }
    }

    pub fn sample(temperature: f64, top_p: f64, seed: u64) -> Result<Self> {
        let p = Self {
            mode: SamplingMode::Sample,
            temperature,
            top_p,
            seed,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn is_greedy(&self) -> bool {
        self.mode == SamplingMode::Greedy
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_greedy() {
            return Ok(());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::invalid(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        Ok(())
    }
}

/// Index of the largest probability; ties go to the lowest id.
pub fn argmax(probs: &[f64]) -> TokenId {
    let mut best = 0usize;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best as TokenId
}

/// Tempered, top-p truncated and renormalized distribution as `(id, prob)`
/// pairs in descending probability order (ties by ascending id).
///
/// The nucleus includes tokens until the cumulative mass reaches `top_p`,
/// including the token that crosses it.
pub fn nucleus(probs: &[f64], temperature: f64, top_p: f64) -> Vec<(TokenId, f64)> {
    let max_lp = probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|p| p.ln())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<(TokenId, f64)> = probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(i, &p)| (i as TokenId, ((p.ln() - max_lp) / temperature).exp()))
        .filter(|(_, x)| *x > 0.0)
        .collect();
    if w.is_empty() {
        // Extreme temperatures underflow everything but the mode.
        return vec![(argmax(probs), 1.0)];
    }
    w.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let total: f64 = w.iter().map(|x| x.1).sum();
    let mut cum = 0.0;
    let mut keep = w.len();
    for (i, (_, x)) in w.iter().enumerate() {
        cum += x / total;
        if cum >= top_p {
            keep = i + 1;
            break;
        }
    }
    w.truncate(keep);
    let kept: f64 = w.iter().map(|x| x.1).sum();
    for x in &mut w {
        x.1 /= kept;
    }
    w
}

/// Random stream for one decoding step.
pub fn step_rng(seed: u64, prefix: &[TokenId]) -> ChaCha8Rng {
    let mut key = Vec::with_capacity(prefix.len() * 4);
    for t in prefix {
        key.extend_from_slice(&t.to_le_bytes());
    }
    ChaCha8Rng::seed_from_u64(seed_from(seed, &key))
}

/// Picks the next token from a full next-token distribution.
pub fn select(probs: &[f64], params: &SamplingParams, prefix: &[TokenId]) -> TokenId {
    if params.is_greedy() {
        return argmax(probs);
    }
    let nuc = nucleus(probs, params.temperature, params.top_p);
    let u: f64 = step_rng(params.seed, prefix).gen();
    let mut cum = 0.0;
    for &(id, p) in &nuc {
        cum += p;
        if u < cum {
            return id;
        }
    }
    nuc.last().map(|x| x.0).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_breaks_ties_low() {
        assert_eq!(argmax(&[0.1, 0.4, 0.4, 0.1]), 1);
        assert_eq!(argmax(&[0.25; 4]), 0);
    }

    #[test]
    fn nucleus_includes_crossing_token() {
        // cumulative: 0.5, 0.8, 0.95, 1.0
        let nuc = nucleus(&[0.5, 0.3, 0.15, 0.05], 1.0, 0.7);
        assert_eq!(nuc.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 1]);
        assert!((nuc[0].1 - 0.625).abs() < 1e-12);
        let exact = nucleus(&[0.5, 0.3, 0.15, 0.05], 1.0, 0.5);
        assert_eq!(exact.len(), 1);
        let all = nucleus(&[0.5, 0.3, 0.15, 0.05], 1.0, 1.0);
        assert_eq!(all.len(), 4);
    }

    #[test]
    fn temperature_sharpens() {
        let nuc = nucleus(&[0.6, 0.4], 0.5, 1.0);
        // 0.36 / (0.36 + 0.16)
        assert!((nuc[0].1 - 0.36 / 0.52).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_reproducible_per_prefix() {
        let probs = vec![0.2; 5];
        let p = SamplingParams::sample(1.0, 1.0, 7).unwrap();
        let a = select(&probs, &p, &[0, 3, 4]);
        for _ in 0..10 {
            assert_eq!(select(&probs, &p, &[0, 3, 4]), a);
        }
    }

    #[test]
    fn params_validation() {
        assert!(SamplingParams::sample(0.0, 0.9, 1).is_err());
        assert!(SamplingParams::sample(1.0, 0.0, 1).is_err());
        assert!(SamplingParams::sample(1.0, 1.5, 1).is_err());
        assert!(SamplingParams::sample(0.7, 1.0, 1).is_ok());
        let g = SamplingParams {
            temperature: -1.0,
            ..SamplingParams::greedy()
        };
        assert!(g.validate().is_ok());
    }
}
