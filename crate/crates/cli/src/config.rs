//! Application configuration: TOML file, `HYDEC_*` environment overlay, then flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hydec_core::decoder::{FailurePolicy, HybridConfig, LatencyModel};
use hydec_core::generators::{RemoteEndpoint, SamplingParams};
use hydec_core::num::extended_f64;
use hydec_core::reward::TrainConfig;
use hydec_core::Granularity;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("environment variable {var}: {msg}")]
    Env { var: String, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppConfig {
    pub seed: u64,
    pub work_dir: PathBuf,
    pub log_level: String,
    pub paths: PathsConfig,
    pub models: ModelsConfig,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub hybrid: HybridSection,
    pub latency: LatencyModel,
    pub sweep: SweepConfig,
    pub service: ServiceConfig,
    pub remote: Option<RemoteEndpoint>,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            work_dir: PathBuf::from("work"),
            log_level: "info".into(),
            paths: PathsConfig::default(),
            models: ModelsConfig::default(),
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            hybrid: HybridSection::default(),
            latency: LatencyModel::default(),
            sweep: SweepConfig::default(),
            service: ServiceConfig::default(),
            remote: None,
        }
    }
}

/// Artifact locations. Relative paths resolve against `work_dir`, except the
/// corpus files, which resolve against the current directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub corpus: Vec<PathBuf>,
    pub vocab: PathBuf,
    pub slm: PathBuf,
    pub llm: PathBuf,
    pub reward_model: PathBuf,
    pub prompts: PathBuf,
    pub pairs: PathBuf,
    pub chunks: PathBuf,
    pub train_report: PathBuf,
    pub length_bias: PathBuf,
    pub results: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            corpus: vec![
                PathBuf::from("data/corpus/stories.txt"),
                PathBuf::from("data/corpus/notes.txt"),
            ],
            vocab: "vocab.bin".into(),
            slm: "slm.ngram".into(),
            llm: "llm.ngram".into(),
            reward_model: "reward.rm".into(),
            prompts: "prompts.jsonl".into(),
            pairs: "pairs.jsonl".into(),
            chunks: "chunks.jsonl".into(),
            train_report: "train_report.jsonl".into(),
            length_bias: "length_bias.json".into(),
            results: "sweep.jsonl".into(),
            report_dir: "report".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelsConfig {
    pub granularity: Granularity,
    pub llm_order: usize,
    pub slm_order: usize,
    pub alpha: f64,
    /// The SLM trains on every n-th corpus line.
    pub slm_subset_every: usize,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        Self {
            granularity: Granularity::Byte,
            llm_order: 4,
            slm_order: 2,
            alpha: 0.5,
            slm_subset_every: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Prompt files; empty means the corpus files.
    pub prompt_sources: Vec<PathBuf>,
    /// `all`, `N` or `LO-HI` leading words per line.
    pub prefix_words: String,
    pub n_prompts: usize,
    pub max_tokens: usize,
    pub temp_range: (f64, f64),
    pub top_p_range: (f64, f64),
    pub greedy: bool,
    pub chunks_per_pair: usize,
    pub force_extremes: bool,
    /// Keep at most this many chunks (0 keeps all).
    pub subsample: usize,
    pub stratify: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            prompt_sources: Vec::new(),
            prefix_words: "2-4".into(),
            n_prompts: 8000,
            max_tokens: 24,
            temp_range: (0.3, 1.2),
            top_p_range: (0.7, 1.0),
            greedy: false,
            chunks_per_pair: 3,
            force_extremes: true,
            subsample: 0,
            stratify: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HybridSection {
    #[serde(with = "extended_f64")]
    pub threshold: f64,
    pub max_tokens: usize,
    pub failure_policy: FailurePolicy,
    pub slm_sampling: SamplingParams,
    pub llm_sampling: SamplingParams,
}

impl Default for HybridSection {
    fn default() -> Self {
        let d = HybridConfig::default();
        Self {
            threshold: d.threshold,
            max_tokens: d.max_tokens,
            failure_policy: d.failure_policy,
            slm_sampling: d.slm_params,
            llm_sampling: d.llm_params,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// `q:0.1,0.5,...` for calibration quantiles or a raw list.
    pub thresholds: String,
    pub n_prompts: usize,
    pub length_bias_bound: f64,
    pub probe_lengths: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            thresholds: "q:0.05,0.1,0.25,0.5,0.75,0.9,0.95,0.99".into(),
            n_prompts: 100,
            length_bias_bound: 0.3,
            probe_lengths: vec![1, 2, 4, 8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceConfig {
    pub bind: String,
    pub max_concurrency: usize,
    pub model_name: String,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            max_concurrency: 32,
            model_name: "hydec-hybrid".into(),
        }
    }
}

impl AppConfig {
    /// File (if any), then the environment overlay.
    pub fn load(file: Option<&Path>, env: &BTreeMap<String, String>) -> Result<Self, ConfigError> {
        let base = match file {
            Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                path: p.to_path_buf(),
                source,
            })?,
            None => String::new(),
        };
        let typed = Self::parse_unchecked(&base)?;
        let mut full = toml::Table::try_from(&typed).map_err(|e| ConfigError::Parse(e.to_string()))?;
        apply_env(&mut full, env)?;
        let cfg: AppConfig =
            toml::Value::Table(full).try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg = Self::parse_unchecked(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn parse_unchecked(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.hybrid.threshold.is_nan() {
            return bad("hybrid.threshold must not be NaN".into());
        }
        if self.hybrid.max_tokens == 0 || self.synth.max_tokens == 0 {
            return bad("max_tokens must be at least 1".into());
        }
        if self.models.llm_order == 0 || self.models.slm_order == 0 || self.models.slm_subset_every == 0 {
            return bad("model orders and slm_subset_every must be at least 1".into());
        }
        if self.service.max_concurrency == 0 {
            return bad("service.max_concurrency must be at least 1".into());
        }
        if self.synth.chunks_per_pair == 0 {
            return bad("synth.chunks_per_pair must be at least 1".into());
        }
        self.synth
            .prefix_words
            .parse::<hydec_core::synth::PrefixWords>()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.sweep
            .thresholds
            .parse::<hydec_core::bench::ThresholdSpec>()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.latency.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.log_level
            .parse::<tracing::Level>()
            .map_err(|_| ConfigError::Invalid(format!("unknown log level {:?}", self.log_level)))?;
        Ok(())
    }

    /// Resolves an artifact path against `work_dir`.
    pub fn artifact(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.work_dir.join(p)
        }
    }

    pub fn hybrid_config(&self) -> HybridConfig {
        HybridConfig {
            threshold: self.hybrid.threshold,
            max_tokens: self.hybrid.max_tokens,
            slm_params: self.hybrid.slm_sampling,
            llm_params: self.hybrid.llm_sampling,
            failure_policy: self.hybrid.failure_policy,
            latency: self.latency,
        }
    }
}

/// Environment names a key answers to: `HYDEC_<KEY>` for top-level keys,
/// `HYDEC_<SECTION>_<KEY>` always, and `HYDEC_<KEY>` for a section key whose
/// name is not shared with any other section.
fn env_names(table: &toml::Table) -> BTreeMap<String, Vec<String>> {
    let mut short: BTreeMap<String, Vec<Vec<String>>> = BTreeMap::new();
    let mut names: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (k, v) in table {
        match v {
            toml::Value::Table(sec) => {
                for sk in sec.keys() {
                    let path = vec![k.clone(), sk.clone()];
                    names.insert(format!("HYDEC_{}_{}", k.to_uppercase(), sk.to_uppercase()), path.clone());
                    short.entry(format!("HYDEC_{}", sk.to_uppercase())).or_default().push(path);
                }
            }
            _ => {
                names.insert(format!("HYDEC_{}", k.to_uppercase()), vec![k.clone()]);
            }
        }
    }
    for (name, paths) in short {
        if paths.len() == 1 && !names.contains_key(&name) {
            names.insert(name, paths.into_iter().next().expect("one path"));
        }
    }
    names
}

fn env_value(raw: &str, current: Option<&toml::Value>) -> toml::Value {
    if matches!(current, Some(toml::Value::String(_))) {
        return toml::Value::String(raw.to_owned());
    }
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_owned()),
    }
}

fn apply_env(table: &mut toml::Table, env: &BTreeMap<String, String>) -> Result<(), ConfigError> {
    let names = env_names(table);
    for (var, raw) in env.iter().filter(|(k, _)| k.starts_with("HYDEC_")) {
        let Some(path) = names.get(var) else {
            return Err(ConfigError::Env {
                var: var.clone(),
                msg: "does not name a config key".into(),
            });
        };
        let slot = match path.as_slice() {
            [k] => table.get_mut(k),
            [s, k] => table.get_mut(s).and_then(|t| t.as_table_mut()).and_then(|t| t.get_mut(k)),
            _ => None,
        };
        let value = env_value(raw, slot.as_deref());
        match slot {
            Some(v) => *v = value,
            None => {
                let sec = table
                    .entry(path[0].clone())
                    .or_insert_with(|| toml::Value::Table(Default::default()));
                if let (Some(t), Some(k)) = (sec.as_table_mut(), path.get(1)) {
                    t.insert(k.clone(), value);
                }
            }
        }
    }
    Ok(())
}

/// `HYDEC_*` variables of the current process.
pub fn process_env() -> BTreeMap<String, String> {
    std::env::vars().filter(|(k, _)| k.starts_with("HYDEC_")).collect()
}
