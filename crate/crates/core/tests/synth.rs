mod common;

use std::collections::BTreeSet;

use common::{corpus_dir, surrogates};
use hydec_core::generators::SamplingParams;
use hydec_core::synth::{
    build_prompt_space, chunk_pairs, gen_pairs, ChunkConfig, PairConfig, PrefixWords, PromptSource, ResponsePair,
};
use hydec_core::{TokenSeq, BOS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn random_pairs(n: usize, max_len: usize, seed: u64) -> Vec<ResponsePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let side = |rng: &mut ChaCha8Rng| -> TokenSeq {
                let len = rng.gen_range(0..=max_len);
                (0..len).map(|_| rng.gen_range(3..40)).collect()
            };
            ResponsePair {
                pair_id: format!("p{i:05}"),
                prompt_ids: vec![BOS, 5, 6].into(),
                chosen_ids: side(&mut rng),
                rejected_ids: side(&mut rng),
                slm_params: SamplingParams::greedy(),
                llm_params: SamplingParams::greedy(),
            }
        })
        .collect()
}

#[test]
fn chunk_invariants_over_ten_thousand_pairs() {
    let pairs = random_pairs(10_000, 30, 1);
    for cpp in [1, 2, 3, 5] {
        let cfg = ChunkConfig {
            chunks_per_pair: cpp,
            force_extremes: true,
            seed: 4,
        };
        let out = chunk_pairs(&pairs, &cfg).unwrap();
        let skipped = pairs
            .iter()
            .filter(|p| p.chosen_ids.is_empty() || p.rejected_ids.is_empty())
            .count();
        assert_eq!(out.skipped, skipped);
        assert_eq!(out.chunks.len(), (pairs.len() - skipped) * cpp);
        let mut at = 0;
        for p in pairs.iter().filter(|p| !p.chosen_ids.is_empty() && !p.rejected_ids.is_empty()) {
            let m = p.chosen_ids.len().min(p.rejected_ids.len());
            let mine = &out.chunks[at..at + cpp];
            at += cpp;
            for c in mine {
                assert_eq!(c.pair_id, p.pair_id);
                assert_eq!(c.chosen_ids.len(), c.chunk_len);
                assert_eq!(c.rejected_ids.len(), c.chunk_len);
                assert!((1..=m).contains(&c.chunk_len));
                assert_eq!(&c.chosen_ids[..], &p.chosen_ids[..c.chunk_len]);
                assert_eq!(&c.rejected_ids[..], &p.rejected_ids[..c.chunk_len]);
            }
            if cpp >= 2 {
                let lens: BTreeSet<usize> = mine.iter().map(|c| c.chunk_len).collect();
                assert!(lens.contains(&1) && lens.contains(&m));
            }
        }
    }
}

#[test]
fn chunking_is_pure() {
    let pairs = random_pairs(500, 12, 2);
    let cfg = ChunkConfig::default();
    assert_eq!(chunk_pairs(&pairs, &cfg).unwrap(), chunk_pairs(&pairs, &cfg).unwrap());
}

#[test]
fn chunk_lengths_are_uniform_without_forced_extremes() {
    let pairs: Vec<ResponsePair> = random_pairs(10_000, 0, 3)
        .into_iter()
        .map(|mut p| {
            p.chosen_ids = (3..13).collect();
            p.rejected_ids = (13..23).collect();
            p
        })
        .collect();
    let cfg = ChunkConfig {
        chunks_per_pair: 1,
        force_extremes: false,
        seed: 9,
    };
    let out = chunk_pairs(&pairs, &cfg).unwrap();
    let mut hist = [0f64; 10];
    for c in &out.chunks {
        hist[c.chunk_len - 1] += 1.0;
    }
    let expected = out.chunks.len() as f64 / 10.0;
    let chi2: f64 = hist.iter().map(|o| (o - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(9.0).unwrap().cdf(chi2);
    assert!(p > 0.01, "chi2 = {chi2}, p = {p}");
}

fn corpus_prompts(n: usize, seed: u64) -> Vec<hydec_core::synth::PromptRecord> {
    let sources: Vec<PromptSource> = ["stories.txt", "notes.txt"]
        .iter()
        .map(|f| PromptSource::load(&corpus_dir().join(f), PrefixWords::Range(2, 4)).unwrap())
        .collect();
    build_prompt_space(&sources, n, seed).unwrap()
}

#[test]
fn drawn_temperatures_are_uniform() {
    let s = surrogates();
    let prompts = corpus_prompts(1000, 5);
    let cfg = PairConfig {
        max_tokens: 2,
        ..PairConfig::default()
    };
    let out = gen_pairs(&prompts, &s.vocab, s.slm.as_ref(), s.llm.as_ref(), &cfg).unwrap();
    let (lo, hi) = cfg.temp_range;
    let temps: Vec<f64> = out
        .pairs
        .iter()
        .flat_map(|p| [p.slm_params.temperature, p.llm_params.temperature])
        .collect();
    assert!(temps.len() >= 1900);
    assert!(temps.iter().all(|t| (lo..=hi).contains(t)));
    let mean = temps.iter().sum::<f64>() / temps.len() as f64;
    let sd = (hi - lo) / 12f64.sqrt() / (temps.len() as f64).sqrt();
    assert!((mean - (lo + hi) / 2.0).abs() < 3.0 * sd, "mean {mean}");
    let (plo, phi) = cfg.top_p_range;
    assert!(out
        .pairs
        .iter()
        .all(|p| (plo..=phi).contains(&p.slm_params.top_p) && (plo..=phi).contains(&p.llm_params.top_p)));
}

#[test]
fn pair_generation_is_deterministic_and_ordered() {
    let s = surrogates();
    let prompts = corpus_prompts(200, 6);
    let cfg = PairConfig {
        max_tokens: 16,
        seed: 3,
        ..PairConfig::default()
    };
    let a = gen_pairs(&prompts, &s.vocab, s.slm.as_ref(), s.llm.as_ref(), &cfg).unwrap();
    let b = gen_pairs(&prompts, &s.vocab, s.slm.as_ref(), s.llm.as_ref(), &cfg).unwrap();
    assert_eq!(a.pairs, b.pairs);
    assert_eq!(a.pairs.len() + a.dropped_empty + a.failed, 200);
    assert!(a.pairs.windows(2).all(|w| w[0].pair_id < w[1].pair_id));
    for p in &a.pairs {
        assert!(!p.chosen_ids.is_empty() && !p.rejected_ids.is_empty());
        assert!(p.chosen_ids.len() <= 16 && p.rejected_ids.len() <= 16);
    }
}

#[test]
fn greedy_override_gives_identical_pairs() {
    let s = surrogates();
    let prompts = corpus_prompts(50, 7);
    let mk = |seed| PairConfig {
        max_tokens: 12,
        temp_range: (1.0, 1.0),
        top_p_range: (1.0, 1.0),
        greedy: true,
        seed,
    };
    let a = gen_pairs(&prompts, &s.vocab, s.slm.as_ref(), s.llm.as_ref(), &mk(1)).unwrap();
    let b = gen_pairs(&prompts, &s.vocab, s.slm.as_ref(), s.llm.as_ref(), &mk(2)).unwrap();
    let strip = |o: &hydec_core::synth::PairOutput| -> Vec<(TokenSeq, TokenSeq)> {
        o.pairs.iter().map(|p| (p.chosen_ids.clone(), p.rejected_ids.clone())).collect()
    };
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn prompt_space_is_seeded_and_stratified() {
    let a = corpus_prompts(300, 1);
    assert_eq!(a, corpus_prompts(300, 1));
    assert_ne!(a, corpus_prompts(300, 2));
    let ids: BTreeSet<&str> = a.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids.len(), 300);
    assert!(a.iter().all(|r| !r.prompt.is_empty()));
    let tags: BTreeSet<&str> = a.iter().map(|r| r.source_tag.as_str()).collect();
    assert_eq!(tags.len(), 2);
}

#[test]
fn expansion_matches_three_chunks_per_pair() {
    let pairs: Vec<ResponsePair> = random_pairs(100, 0, 8)
        .into_iter()
        .map(|mut p| {
            p.chosen_ids = vec![3, 4, 5, 6].into();
            p.rejected_ids = vec![7, 8].into();
            p
        })
        .collect();
    let out = chunk_pairs(&pairs, &ChunkConfig::default()).unwrap();
    assert_eq!(out.chunks.len(), 300);
}
