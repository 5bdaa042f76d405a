use std::path::Path;
use std::sync::{Arc, OnceLock};

use hydec::config::ModelsConfig;
use hydec::pipeline::{build_surrogates, Surrogates};
use hydec::service::{serve_with_shutdown, AppState, CompletionReply, ErrorBody, MetricsSnapshot, THRESHOLD_HEADER};
use hydec_core::bench::{calibrate, quantile};
use hydec_core::decoder::{HybridConfig, HybridEngine};
use hydec_core::generators::{generate, GenBackend, Proposal, SamplingParams};
use hydec_core::reward::RewardModel;
use hydec_core::{Error, TokenId, Vocab};
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::json;

fn surrogates() -> &'static Surrogates {
    static S: OnceLock<Surrogates> = OnceLock::new();
    S.get_or_init(|| {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/corpus");
        let texts = hydec::pipeline::read_texts(&[dir.join("stories.txt"), dir.join("notes.txt")]).unwrap();
        build_surrogates(&texts, &ModelsConfig::default()).unwrap()
    })
}

fn engine_with(llm: Arc<dyn GenBackend>) -> Arc<HybridEngine> {
    let s = surrogates();
    let rm = RewardModel::init(&s.vocab, 16, 4, 32, 9).unwrap();
    Arc::new(HybridEngine::new(s.vocab.clone(), s.slm.clone(), llm, Arc::new(rm)).unwrap())
}

fn engine() -> Arc<HybridEngine> {
    engine_with(surrogates().llm.clone())
}

struct Server {
    url: String,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    handle: Option<tokio::task::JoinHandle<std::io::Result<()>>>,
    rt: tokio::runtime::Runtime,
}

impl Server {
    fn start(state: AppState) -> Self {
        let rt = tokio::runtime::Runtime::new().unwrap();
        let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
        let handle = rt.spawn(serve_with_shutdown(listener, state, async {
            let _ = stopped.await;
        }));
        Self {
            url,
            stop: Some(stop),
            handle: Some(handle),
            rt,
        }
    }

    fn post(&self, body: serde_json::Value, threshold: Option<&str>) -> reqwest::blocking::Response {
        let mut req = Client::new().post(format!("{}/v1/completions", self.url)).json(&body);
        if let Some(t) = threshold {
            req = req.header(THRESHOLD_HEADER, t);
        }
        req.send().unwrap()
    }

    fn metrics(&self) -> MetricsSnapshot {
        reqwest::blocking::get(format!("{}/metrics", self.url)).unwrap().json().unwrap()
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
        if let Some(h) = self.handle.take() {
            let _ = self.rt.block_on(h);
        }
    }
}

fn base_cfg(threshold: f64) -> HybridConfig {
    HybridConfig {
        max_tokens: 16,
        ..HybridConfig::default()
    }
    .with_threshold(threshold)
}

fn median_reward(eng: &HybridEngine) -> f64 {
    let v = &surrogates().vocab;
    let prompts: Vec<_> = PROMPTS.iter().map(|p| v.encode_prompt(p)).collect();
    quantile(&calibrate(eng, &base_cfg(0.0), &prompts).unwrap(), 0.5)
}

const PROMPTS: &[&str] = &["the old", "she said", "in the morning", "a", "when the rain", "he"];

#[test]
fn replies_match_in_process_decoding_under_concurrency() {
    let eng = engine();
    let cfg = base_cfg(median_reward(&eng));
    let server = Server::start(AppState::new(eng.clone(), cfg.clone(), "test".into(), 4));
    let expected: Vec<_> = PROMPTS
        .iter()
        .map(|p| eng.decode(&cfg, &surrogates().vocab.encode_prompt(p)).unwrap())
        .collect();
    let replies: Vec<(usize, CompletionReply)> = std::thread::scope(|sc| {
        let hs: Vec<_> = (0..2)
            .map(|w| {
                let server = &server;
                sc.spawn(move || {
                    (0..24)
                        .filter(|i| i % 2 == w)
                        .map(|i| {
                            let k = i % PROMPTS.len();
                            let r = server.post(json!({"prompt": PROMPTS[k], "temperature": 0}), None);
                            assert_eq!(r.status(), StatusCode::OK);
                            (k, r.json().unwrap())
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        hs.into_iter().flat_map(|h| h.join().unwrap()).collect()
    });
    let (mut slm, mut llm) = (0, 0);
    for (k, r) in &replies {
        let (out, trace) = &expected[*k];
        assert_eq!(r.hybrid.token_ids, out.to_vec());
        assert_eq!(r.choices[0].text, surrogates().vocab.detokenize(out));
        assert_eq!(r.usage.completion_tokens, out.len());
        assert_eq!(r.object, "text_completion");
        assert_eq!(r.model, "test");
        slm += trace.slm_steps as u64;
        llm += trace.llm_steps as u64;
    }
    let m = server.metrics();
    assert_eq!((m.requests, m.errors), (24, 0));
    assert_eq!((m.tokens_slm, m.tokens_llm), (slm, llm));
    assert!(slm > 0 && llm > 0);
    assert!((m.activation_ratio_frac - llm as f64 / (slm + llm) as f64).abs() < 1e-15);
    assert!(m.latency_ms_p50 <= m.latency_ms_p95);
    let ids: std::collections::BTreeSet<_> = replies.iter().map(|(_, r)| r.id.clone()).collect();
    assert_eq!(ids.len(), 24);
}

#[test]
fn threshold_header_overrides_the_default() {
    let server = Server::start(AppState::new(engine(), base_cfg(0.0), "test".into(), 2));
    let lo: CompletionReply = server.post(json!({"prompt": "the"}), Some("-inf")).json().unwrap();
    assert_eq!(lo.hybrid.llm_steps, 0);
    assert_eq!(server.metrics().tokens_llm, 0);
    let s = surrogates();
    let slm_only = generate(s.slm.as_ref(), &s.vocab.encode_prompt("the"), &SamplingParams::greedy(), 16).unwrap();
    assert_eq!(lo.hybrid.token_ids, slm_only.to_vec());
    assert_eq!(lo.hybrid.threshold, f64::NEG_INFINITY);
    let hi: CompletionReply = server.post(json!({"prompt": "the"}), Some("inf")).json().unwrap();
    assert_eq!(hi.hybrid.slm_steps, 0);
    let r = server.post(json!({"prompt": "the"}), Some("lots"));
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);
    let e: ErrorBody = r.json().unwrap();
    assert_eq!(e.error.kind, "invalid_request");
}

#[test]
fn invalid_requests_are_rejected() {
    let server = Server::start(AppState::new(engine(), base_cfg(0.0), "test".into(), 2));
    let bad = [
        json!({"prompt": "a", "max_tokens": 0}),
        json!({"prompt": "a", "max_tokens": 5000}),
        json!({"prompt": "a", "temperature": -1.0}),
        json!({"prompt": "a", "top_p": 1.5}),
        json!({"prompt": "a", "stream": true}),
        json!({"max_tokens": 3}),
    ];
    for b in bad {
        assert_eq!(server.post(b.clone(), None).status(), StatusCode::BAD_REQUEST, "{b}");
    }
    let raw = Client::new()
        .post(format!("{}/v1/completions", server.url))
        .header("content-type", "application/json")
        .body("{not json")
        .send()
        .unwrap();
    assert_eq!(raw.status(), StatusCode::BAD_REQUEST);
    let m = server.metrics();
    assert_eq!((m.requests, m.errors, m.tokens_slm + m.tokens_llm), (7, 7, 0));
}

#[test]
fn sampled_requests_are_reproducible() {
    let eng = engine();
    let tau = median_reward(&eng);
    let server = Server::start(AppState::new(eng, base_cfg(tau), "test".into(), 2));
    let body = json!({"prompt": "the sea", "temperature": 0.9, "top_p": 0.95, "max_tokens": 12});
    let a: CompletionReply = server.post(body.clone(), None).json().unwrap();
    let b: CompletionReply = server.post(body, None).json().unwrap();
    assert_eq!(a.hybrid.token_ids, b.hybrid.token_ids);
    assert!(a.hybrid.token_ids.len() <= 12);
    let fin = a.choices[0].finish_reason.as_deref().unwrap();
    assert!(fin == "stop" || fin == "length");
}

#[test]
fn saturation_returns_429() {
    let server = Server::start(AppState::new(engine(), base_cfg(0.0), "test".into(), 0));
    let r = server.post(json!({"prompt": "a"}), None);
    assert_eq!(r.status(), StatusCode::TOO_MANY_REQUESTS);
    assert_eq!(server.metrics().errors, 1);
}

struct Down(Arc<Vocab>);

impl GenBackend for Down {
    fn name(&self) -> &str {
        "down"
    }
    fn vocab(&self) -> &Vocab {
        &self.0
    }
    fn next_token(&self, _: &[TokenId], _: &SamplingParams) -> hydec_core::Result<Proposal> {
        Err(Error::InvalidArgument("backend offline".into()))
    }
}

#[test]
fn llm_outage_returns_502() {
    let eng = engine_with(Arc::new(Down(surrogates().vocab.clone())));
    let server = Server::start(AppState::new(eng, base_cfg(f64::INFINITY), "test".into(), 2));
    let r = server.post(json!({"prompt": "the"}), None);
    assert_eq!(r.status(), StatusCode::BAD_GATEWAY);
    let e: ErrorBody = r.json().unwrap();
    assert_eq!(e.error.kind, "llm_failure");
    let ok = server.post(json!({"prompt": "the"}), Some("-inf"));
    assert_eq!(ok.status(), StatusCode::OK);
}

#[test]
fn health_endpoint() {
    let server = Server::start(AppState::new(engine(), base_cfg(0.0), "test".into(), 1));
    let r = reqwest::blocking::get(format!("{}/healthz", server.url)).unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    assert_eq!(r.text().unwrap(), "ok");
}
