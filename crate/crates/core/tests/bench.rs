mod common;

use std::sync::Arc;

use common::surrogates;
use hydec_core::bench::{
    chart_ranges, length_bias_probe, quality_proxy, render_report, run_sweep, throughput, Metric, SweepInput,
    SweepKind, ThresholdSpec,
};
use hydec_core::decoder::{HybridConfig, HybridEngine, LatencyModel};
use hydec_core::generators::{generate, SamplingParams};
use hydec_core::reward::{RewardModel, TokenScorer};
use hydec_core::synth::ResponsePair;
use hydec_core::{TokenId, TokenSeq, VocabHash, BOS};

fn suite(n: usize) -> Vec<TokenSeq> {
    surrogates()
        .lines
        .iter()
        .skip(1)
        .step_by(5)
        .take(n)
        .map(|l| {
            let mut p = vec![BOS];
            p.extend_from_slice(&l[..l.len().min(12)]);
            p.into()
        })
        .collect()
}

fn engine(seed: u64) -> HybridEngine {
    let s = surrogates();
    let scorer = RewardModel::init(&s.vocab, 16, 4, 32, seed).unwrap();
    HybridEngine::new(s.vocab.clone(), s.slm.clone(), s.llm.clone(), Arc::new(scorer)).unwrap()
}

fn cfg() -> HybridConfig {
    HybridConfig {
        max_tokens: 16,
        ..HybridConfig::default()
    }
}

#[test]
fn quality_is_mean_of_per_output_means() {
    let s = surrogates();
    let prompts = suite(3);
    let outs: Vec<TokenSeq> = vec![
        prompts[1][1..4].to_vec().into(),
        TokenSeq::default(),
        prompts[0][1..2].to_vec().into(),
    ];
    let per_output = |o: &TokenSeq, p: &TokenSeq| {
        let lps: Vec<f64> = (0..o.len())
            .map(|i| {
                let mut ctx = p.to_vec();
                ctx.extend_from_slice(&o[..i]);
                s.llm.distribution(&ctx)[o[i] as usize].ln()
            })
            .collect();
        lps.iter().sum::<f64>() / lps.len() as f64
    };
    let want = (per_output(&outs[0], &prompts[0]) + per_output(&outs[2], &prompts[2])) / 2.0;
    let got = quality_proxy(&outs, &prompts, &s.llm).unwrap();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    assert!(quality_proxy(&[TokenSeq::default()], &prompts[..1], &s.llm).is_err());

    let single: TokenSeq = vec![prompts[2][1]].into();
    let p = s.llm.distribution(&prompts[0])[single[0] as usize];
    let got = quality_proxy(&[single], &prompts[..1], &s.llm).unwrap();
    assert!((got - p.ln()).abs() < 1e-12);
}

#[test]
fn throughput_worked_examples() {
    // 10 accepted steps cost 10 * 1.5 ms; 10 rejected steps cost 10 * 11.5 ms
    let v = &surrogates().vocab;
    let s = surrogates();
    let eng = HybridEngine::new(s.vocab.clone(), s.slm.clone(), s.llm.clone(), Arc::new(RewardModel::constant(v, 0.0))).unwrap();
    let lat = LatencyModel::simulated(1.0, 10.0, 0.5);
    let c = HybridConfig {
        max_tokens: 10,
        latency: lat,
        ..HybridConfig::default()
    };
    let p = suite(1).remove(0);
    let (_, acc) = eng.decode(&c.with_threshold(0.0), &p).unwrap();
    let (_, rej) = eng.decode(&c.with_threshold(0.5), &p).unwrap();
    assert_eq!((acc.steps.len(), acc.llm_steps), (10, 0));
    assert_eq!((rej.steps.len(), rej.llm_steps), (10, 10));
    let a = throughput(&[acc], &lat).unwrap();
    let r = throughput(&[rej], &lat).unwrap();
    assert!((a - 10.0 / 0.015).abs() / a < 1e-9, "{a}");
    assert!((r - 10.0 / 0.115).abs() / r < 1e-9, "{r}");
    assert!((a - 666.7).abs() < 0.05 && (r - 87.0).abs() < 0.05);
}

#[test]
fn simulated_throughput_matches_hand_count() {
    let eng = engine(1);
    let c = cfg().with_threshold(0.0);
    let lat = LatencyModel::simulated(3.0, 50.0, 0.5);
    let traces: Vec<_> = suite(10).iter().map(|p| eng.decode(&c, p).unwrap().1).collect();
    let (mut slm, mut llm) = (0usize, 0usize);
    for t in &traces {
        slm += t.slm_steps;
        llm += t.llm_steps;
    }
    let ms = slm as f64 * 3.5 + llm as f64 * 53.5;
    let want = (slm + llm) as f64 * 1000.0 / ms;
    let got = throughput(&traces, &lat).unwrap();
    assert!(((got - want) / want).abs() < 1e-9);

    // one token per 2+1 ms and one per 2+1+40 ms
    let one = |tau: f64| {
        let c = HybridConfig {
            max_tokens: 1,
            ..HybridConfig::default()
        }
        .with_threshold(tau);
        eng.decode(&c, &suite(1)[0]).unwrap().1
    };
    let d = LatencyModel::default();
    assert!((throughput(&[one(f64::NEG_INFINITY)], &d).unwrap() - 1000.0 / 3.0).abs() < 1e-9);
    assert!((throughput(&[one(f64::INFINITY)], &d).unwrap() - 1000.0 / 43.0).abs() < 1e-9);
}

#[test]
fn sweep_limits_match_baselines() {
    let s = surrogates();
    let eng = engine(2);
    let c = cfg();
    let prompts = suite(40);
    let input = SweepInput {
        engine: &eng,
        cfg: &c,
        prompts: &prompts,
        reference: &s.llm,
    };
    let rows = run_sweep(&input, &ThresholdSpec::Raw(vec![f64::NEG_INFINITY, f64::INFINITY])).unwrap();
    assert_eq!(rows.len(), 4);
    let kinds: Vec<_> = rows.iter().map(|r| r.kind).collect();
    assert_eq!(
        kinds,
        [SweepKind::Hybrid, SweepKind::Hybrid, SweepKind::SlmBaseline, SweepKind::LlmBaseline]
    );
    assert_eq!(rows[0].activation_ratio_frac, 0.0);
    assert_eq!(rows[1].activation_ratio_frac, 1.0);
    assert_eq!(rows[0].quality, rows[2].quality);
    assert_eq!(rows[1].quality, rows[3].quality);
    assert_eq!(rows[0].tokens, rows[2].tokens);
    assert_eq!(rows[1].tokens, rows[3].tokens);
    assert!((rows[2].throughput - 500.0).abs() < 1e-9);
    assert!((rows[3].throughput - 25.0).abs() < 1e-9);

    let slm_out: Vec<TokenSeq> = prompts
        .iter()
        .map(|p| generate(s.slm.as_ref(), p, &c.slm_params, c.max_tokens).unwrap())
        .collect();
    assert_eq!(quality_proxy(&slm_out, &prompts, &s.llm).unwrap(), rows[2].quality);
}

#[test]
fn activation_rises_with_the_threshold() {
    let s = surrogates();
    let eng = engine(3);
    let c = cfg();
    let prompts = suite(40);
    let input = SweepInput {
        engine: &eng,
        cfg: &c,
        prompts: &prompts,
        reference: &s.llm,
    };
    let spec: ThresholdSpec = "q:0,0.1,0.3,0.5,0.7,0.9,1".parse().unwrap();
    let rows = run_sweep(&input, &spec).unwrap();
    let hy: Vec<_> = rows.iter().filter(|r| r.kind == SweepKind::Hybrid).collect();
    assert_eq!(hy.len(), 7);
    assert!(hy.windows(2).all(|w| w[0].threshold <= w[1].threshold));
    assert!(hy.windows(2).all(|w| w[0].activation_ratio_frac <= w[1].activation_ratio_frac));
    assert!(hy.windows(2).all(|w| w[0].throughput >= w[1].throughput - 1e-9));
    assert_eq!(hy[0].activation_ratio_frac, 0.0);
    assert_eq!(hy[6].activation_ratio_frac, 1.0);
    for r in hy.iter().filter(|r| r.slm_steps > 0) {
        let big_r = r.activation_ratio_paper;
        assert!((r.activation_ratio_frac - big_r / (1.0 + big_r)).abs() < 1e-12);
    }
}

#[test]
fn llm_greedy_has_the_best_quality() {
    let s = surrogates();
    let c = cfg();
    let prompts = suite(40);
    let q = |outs: Vec<TokenSeq>| quality_proxy(&outs, &prompts, &s.llm).unwrap();
    let run = |m: &dyn hydec_core::generators::GenBackend, p: &SamplingParams| {
        prompts.iter().map(|x| generate(m, x, p, c.max_tokens).unwrap()).collect::<Vec<_>>()
    };
    let best = q(run(s.llm.as_ref(), &c.llm_params));
    let sampled = SamplingParams::sample(1.0, 1.0, 11).unwrap();
    for other in [
        q(run(s.slm.as_ref(), &c.slm_params)),
        q(run(s.llm.as_ref(), &sampled)),
        q(run(s.slm.as_ref(), &sampled)),
    ] {
        assert!(best > other, "{best} vs {other}");
    }
}

struct Fixed(VocabHash, f64);

impl TokenScorer for Fixed {
    fn vocab_hash(&self) -> VocabHash {
        self.0
    }
    fn score(&self, _: &[TokenId], _: &[TokenId], _: TokenId) -> f64 {
        self.1
    }
}

struct Positional(VocabHash);

impl TokenScorer for Positional {
    fn vocab_hash(&self) -> VocabHash {
        self.0
    }
    fn score(&self, _: &[TokenId], generated: &[TokenId], _: TokenId) -> f64 {
        0.1 * generated.len() as f64
    }
}

fn probe_pairs() -> Vec<ResponsePair> {
    let s = surrogates();
    let p = SamplingParams::greedy();
    s.lines
        .iter()
        .filter(|l| l.len() >= 40)
        .take(20)
        .enumerate()
        .map(|(i, l)| ResponsePair {
            pair_id: format!("p{i}"),
            prompt_ids: vec![BOS].into(),
            chosen_ids: l[..32].to_vec().into(),
            rejected_ids: l[1..33].to_vec().into(),
            slm_params: p,
            llm_params: p,
        })
        .collect()
}

#[test]
fn length_bias_probe_separates_flat_and_positional_scorers() {
    let h = surrogates().vocab.hash();
    let pairs = probe_pairs();
    let lens = [4, 8, 16, 32];
    let flat = length_bias_probe(&Fixed(h, -0.7), &pairs, &lens, 0.2).unwrap();
    assert_eq!(flat.pearson_r, 0.0);
    assert!(flat.pass);
    let pos = length_bias_probe(&Positional(h), &pairs, &lens, 0.2).unwrap();
    assert!(pos.pearson_r > 0.9, "{}", pos.pearson_r);
    assert!(!pos.pass);
    // mean of 0.1 * (0..L-1)
    for (l, m) in lens.iter().zip(&pos.mean_reward_by_length) {
        assert!((m - 0.1 * (*l as f64 - 1.0) / 2.0).abs() < 1e-9);
    }
    assert!(length_bias_probe(&Positional(h), &pairs, &[4, 64], 0.2).is_err());
}

#[test]
fn reports_are_reproducible_and_charts_cover_all_rows() {
    let s = surrogates();
    let eng = engine(4);
    let c = cfg();
    let prompts = suite(20);
    let input = SweepInput {
        engine: &eng,
        cfg: &c,
        prompts: &prompts,
        reference: &s.llm,
    };
    let rows = run_sweep(&input, &"q:0.1,0.5,0.9".parse().unwrap()).unwrap();
    assert_eq!(rows.len(), 5);
    for m in [Metric::Activation, Metric::Quality, Metric::Throughput] {
        let ((x0, x1), (y0, y1)) = chart_ranges(&rows, m);
        assert_eq!((x0, x1), (0.1, 0.9));
        for r in &rows {
            let v = match m {
                Metric::Activation => r.activation_ratio_frac,
                Metric::Quality => r.quality,
                Metric::Throughput => r.throughput,
            };
            assert!(y0 <= v && v <= y1);
        }
    }
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = render_report(&rows, a.path()).unwrap();
    let rerun = run_sweep(&input, &"q:0.1,0.5,0.9".parse().unwrap()).unwrap();
    let fb = render_report(&rerun, b.path()).unwrap();
    assert_eq!(fa.len(), 4);
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
}
