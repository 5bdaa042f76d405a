//! Client for HTTP completion endpoints (`POST {base}/v1/completions`).

use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, RemoteError, Result};
use crate::generators::{GenBackend, Proposal, SamplingParams};
use crate::vocab::{TokenId, Vocab, EOS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteEndpoint {
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub auth_token: Option<String>,
    #[serde(with = "duration_ms", default = "default_timeout")]
    pub timeout: Duration,
    #[serde(default)]
    pub retry_budget: u32,
    #[serde(with = "duration_ms", default = "default_backoff")]
    pub backoff_base: Duration,
}

fn default_timeout() -> Duration {
    Duration::from_secs(30)
}

fn default_backoff() -> Duration {
    Duration::from_millis(100)
}

mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

impl RemoteEndpoint {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            auth_token: None,
            timeout: default_timeout(),
            retry_budget: 0,
            backoff_base: default_backoff(),
        }
    }

    pub fn completions_url(&self) -> String {
        format!("{}/v1/completions", self.base_url.trim_end_matches('/'))
    }

    /// Sleep before retry number `retry` (1-based).
    fn backoff(&self, retry: u32) -> Duration {
        self.backoff_base
            .saturating_mul(1u32 << (retry - 1).min(16))
            .min(Duration::from_secs(30))
    }
}

/// Request body of the completion protocol.
///
/// The client always fills every field; the server treats all but `prompt` as optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    #[serde(default)]
    pub model: Option<String>,
    pub prompt: String,
    #[serde(default)]
    pub max_tokens: Option<usize>,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub top_p: Option<f64>,
    #[serde(default)]
    pub stream: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionChoice {
    pub text: String,
    #[serde(default)]
    pub index: usize,
    #[serde(default)]
    pub finish_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    #[serde(default)]
    pub id: String,
    #[serde(default)]
    pub object: String,
    #[serde(default)]
    pub model: String,
    pub choices: Vec<CompletionChoice>,
}

impl CompletionResponse {
    pub fn first_text(&self) -> Option<&str> {
        self.choices.first().map(|c| c.text.as_str())
    }
}

fn http_client(ep: &RemoteEndpoint) -> Result<reqwest::blocking::Client> {
    reqwest::blocking::Client::builder()
        .timeout(ep.timeout)
        .build()
        .map_err(|e| RemoteError::Client(e.to_string()).into())
}

/// One logical completion call, retried on timeouts, transport errors, 429 and
/// 5xx with exponential backoff. Other statuses and malformed bodies fail at once.
pub fn remote_complete(
    endpoint: &RemoteEndpoint,
    prompt_text: &str,
    params: &SamplingParams,
    max_tokens: usize,
) -> Result<String> {
    let client = http_client(endpoint)?;
    complete_with(&client, endpoint, prompt_text, params, max_tokens)
}

fn complete_with(
    client: &reqwest::blocking::Client,
    endpoint: &RemoteEndpoint,
    prompt_text: &str,
    params: &SamplingParams,
    max_tokens: usize,
) -> Result<String> {
    let (temperature, top_p) = if params.is_greedy() {
        (0.0, 1.0)
    } else {
        (params.temperature, params.top_p)
    };
    let body = CompletionRequest {
        model: Some(endpoint.model.clone()),
        prompt: prompt_text.to_owned(),
        max_tokens: Some(max_tokens),
        temperature: Some(temperature),
        top_p: Some(top_p),
        stream: Some(false),
    };
    let url = endpoint.completions_url();
    let max_attempts = endpoint.retry_budget + 1;
    let mut attempt = 0;
    loop {
        attempt += 1;
        if attempt > 1 {
            thread::sleep(endpoint.backoff(attempt - 1));
        }
        let mut req = client.post(&url).json(&body);
        if let Some(tok) = &endpoint.auth_token {
            req = req.bearer_auth(tok);
        }
        let failure = match req.send() {
            Ok(resp) => {
                let status = resp.status();
                let text = resp.text();
                if status.is_success() {
                    let text = text.map_err(|e| RemoteError::MalformedBody(e.to_string()))?;
                    let parsed: CompletionResponse = serde_json::from_str(&text)
                        .map_err(|e| RemoteError::MalformedBody(e.to_string()))?;
                    return parsed
                        .first_text()
                        .map(str::to_owned)
                        .ok_or_else(|| RemoteError::MalformedBody("no choices".into()).into());
                }
                let err = RemoteError::Status {
                    status: status.as_u16(),
                    body: text.unwrap_or_default(),
                    attempts: attempt,
                };
                if !(status.is_server_error() || status.as_u16() == 429) {
                    return Err(err.into());
                }
                err
            }
            Err(e) if e.is_timeout() => RemoteError::Timeout {
                attempts: attempt,
                timeout: endpoint.timeout,
            },
            Err(e) => RemoteError::Transport {
                message: e.to_string(),
                attempts: attempt,
            },
        };
        tracing::debug!(attempt, %failure, "completion attempt failed");
        if attempt >= max_attempts {
            return Err(failure.into());
        }
    }
}

/// A [`GenBackend`] over a remote endpoint. The prefix is detokenized, one
/// completion token is requested, and the reply is re-tokenized locally; its
/// first unit is the proposal. An empty completion is read as EOS.
pub struct RemoteBackend {
    endpoint: RemoteEndpoint,
    vocab: Arc<Vocab>,
    client: reqwest::blocking::Client,
}

impl RemoteBackend {
    pub fn new(endpoint: RemoteEndpoint, vocab: Arc<Vocab>) -> Result<Self> {
        let client = http_client(&endpoint)?;
        Ok(Self {
            endpoint,
            vocab,
            client,
        })
    }

    pub fn endpoint(&self) -> &RemoteEndpoint {
        &self.endpoint
    }
}

impl GenBackend for RemoteBackend {
    fn name(&self) -> &str {
        &self.endpoint.model
    }

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn next_token(&self, prefix: &[TokenId], params: &SamplingParams) -> Result<Proposal> {
        let text = self.vocab.detokenize(prefix);
        let completion = complete_with(&self.client, &self.endpoint, &text, params, 1)?;
        let token = first_unit(&self.vocab, &completion)?;
        Ok(Proposal {
            token,
            logprob: None,
        })
    }
}

fn first_unit(vocab: &Vocab, completion: &str) -> Result<TokenId> {
    match vocab.tokenize(completion).first() {
        None => Ok(EOS),
        Some(&t) if t == crate::vocab::UNK => Err(Error::VocabMismatch(format!(
            "remote completion {completion:?} is not in the local vocabulary"
        ))),
        Some(&t) => Ok(t),
    }
}
