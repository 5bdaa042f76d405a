//! `hydec` subcommands.

use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hydec_core::bench::{self, LengthBiasReport, SweepInput, SweepResult, ThresholdSpec};
use hydec_core::decoder::{trace_jsonl, HybridEngine, Source};
use hydec_core::generators::{generate, GenBackend};
use hydec_core::jsonl::{read_jsonl, write_jsonl};
use hydec_core::num::{format_threshold, parse_threshold};
use hydec_core::reward::{Aggregation, TokenScorer};
use hydec_core::synth::{ChunkPair, PromptRecord, ResponsePair};
use hydec_core::{Granularity, TokenSeq};

use crate::config::{process_env, AppConfig, ConfigError};
use crate::pipeline::{self, Surrogates};
use crate::service::{self, AppState};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] hydec_core::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 1 for configuration problems, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            _ => 2,
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "hydec", version, about = "Token-level hybrid decoding with reward-gated LLM assistance")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory holding models, datasets and reports.
    #[arg(long, global = true, value_name = "DIR")]
    pub work_dir: Option<PathBuf>,
    #[arg(long, global = true, value_name = "LEVEL")]
    pub log_level: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the vocabulary and the SLM/LLM surrogates from the corpus.
    BuildModels(BuildModelsArgs),
    /// Sample the prompt space.
    SynthPrompts(SynthPromptsArgs),
    /// Generate chosen (LLM) / rejected (SLM) response pairs.
    GenPairs(GenPairsArgs),
    /// Expand pairs into equal-length chunk pairs.
    Chunk(ChunkArgs),
    /// Train the reward model and run the length-bias probe.
    TrainReward(TrainRewardArgs),
    /// Decode one prompt and print every step.
    Decode(DecodeArgs),
    /// Run a threshold sweep with SLM/LLM baselines.
    Sweep(SweepArgs),
    /// Render the text table and SVG charts from sweep results.
    Report(ReportArgs),
    /// Serve completions over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct BuildModelsArgs {
    #[arg(long = "corpus", value_name = "FILE")]
    pub corpus: Vec<PathBuf>,
    #[arg(long)]
    pub granularity: Option<Granularity>,
    #[arg(long)]
    pub llm_order: Option<usize>,
    #[arg(long)]
    pub slm_order: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthPromptsArgs {
    #[arg(long = "source", value_name = "FILE")]
    pub sources: Vec<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    /// `all`, `N` or `LO-HI`.
    #[arg(long)]
    pub prefix_words: Option<String>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenPairsArgs {
    #[arg(long, value_name = "FILE")]
    pub prompts: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub max_tokens: Option<usize>,
    /// Greedy decoding on both sides instead of randomized sampling.
    #[arg(long)]
    pub greedy: bool,
}

#[derive(Debug, Args)]
pub struct ChunkArgs {
    #[arg(long, value_name = "FILE")]
    pub pairs: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub chunks_per_pair: Option<usize>,
    #[arg(long)]
    pub no_force_extremes: bool,
    #[arg(long)]
    pub subsample: Option<usize>,
    #[arg(long)]
    pub stratify: bool,
}

#[derive(Debug, Args)]
pub struct TrainRewardArgs {
    #[arg(long, value_name = "FILE")]
    pub chunks: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub aggregation: Option<Aggregation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    Hybrid,
    Slm,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    /// One line per step: index, source, token id, token text, reward.
    Steps,
    /// Token ids, one per line.
    Tokens,
    /// The decoded continuation.
    Text,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub prompt: String,
    /// Reward threshold; accepts `-inf` and `inf`.
    #[arg(long, allow_hyphen_values = true, value_parser = threshold_arg)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub max_tokens: Option<usize>,
    #[arg(long, value_enum, default_value_t = Backend::Hybrid)]
    pub backend: Backend,
    #[arg(long, value_enum, default_value_t = OutputFormat::Steps)]
    pub format: OutputFormat,
    /// Also write the hybrid trace as JSONL.
    #[arg(long, value_name = "FILE")]
    pub trace_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// `q:0.1,0.5,0.9` or raw values such as `-inf,-2,inf`.
    #[arg(long, allow_hyphen_values = true)]
    pub thresholds: Option<String>,
    #[arg(long)]
    pub n_prompts: Option<usize>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, value_name = "FILE")]
    pub results: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long)]
    pub max_concurrency: Option<usize>,
    #[arg(long, allow_hyphen_values = true, value_parser = threshold_arg)]
    pub threshold: Option<f64>,
}

fn threshold_arg(s: &str) -> Result<f64, String> {
    parse_threshold(s).map_err(|e| e.to_string())
}

/// File, then `HYDEC_*` environment, then command-line flags.
pub fn effective_config(cli: &Cli) -> CliResult<AppConfig> {
    let mut cfg = AppConfig::load(cli.global.config.as_deref(), &process_env())?;
    apply_flags(&mut cfg, cli);
    cfg.validate()?;
    Ok(cfg)
}

fn apply_flags(cfg: &mut AppConfig, cli: &Cli) {
    let g = &cli.global;
    if let Some(s) = g.seed {
        cfg.seed = s;
        cfg.train.seed = s;
        cfg.hybrid.slm_sampling.seed = s;
        cfg.hybrid.llm_sampling.seed = s;
    }
    if let Some(d) = &g.work_dir {
        cfg.work_dir = d.clone();
    }
    if let Some(l) = &g.log_level {
        cfg.log_level = l.clone();
    }
    match &cli.command {
        Command::BuildModels(a) => {
            if !a.corpus.is_empty() {
                cfg.paths.corpus = a.corpus.clone();
            }
            set(&mut cfg.models.granularity, a.granularity);
            set(&mut cfg.models.llm_order, a.llm_order);
            set(&mut cfg.models.slm_order, a.slm_order);
            set(&mut cfg.models.alpha, a.alpha);
        }
        Command::SynthPrompts(a) => {
            if !a.sources.is_empty() {
                cfg.synth.prompt_sources = a.sources.clone();
            }
            set(&mut cfg.synth.n_prompts, a.n);
            set(&mut cfg.synth.prefix_words, a.prefix_words.clone());
            set(&mut cfg.paths.prompts, a.out.clone());
        }
        Command::GenPairs(a) => {
            set(&mut cfg.paths.prompts, a.prompts.clone());
            set(&mut cfg.paths.pairs, a.out.clone());
            set(&mut cfg.synth.max_tokens, a.max_tokens);
            cfg.synth.greedy |= a.greedy;
        }
        Command::Chunk(a) => {
            set(&mut cfg.paths.pairs, a.pairs.clone());
            set(&mut cfg.paths.chunks, a.out.clone());
            set(&mut cfg.synth.chunks_per_pair, a.chunks_per_pair);
            set(&mut cfg.synth.subsample, a.subsample);
            cfg.synth.force_extremes &= !a.no_force_extremes;
            cfg.synth.stratify |= a.stratify;
        }
        Command::TrainReward(a) => {
            set(&mut cfg.paths.chunks, a.chunks.clone());
            set(&mut cfg.paths.reward_model, a.out.clone());
            set(&mut cfg.train.epochs, a.epochs);
            set(&mut cfg.train.learning_rate, a.learning_rate);
            set(&mut cfg.train.batch_size, a.batch_size);
            set(&mut cfg.train.aggregation, a.aggregation);
        }
        Command::Decode(a) => {
            set(&mut cfg.hybrid.threshold, a.threshold);
            set(&mut cfg.hybrid.max_tokens, a.max_tokens);
        }
        Command::Sweep(a) => {
            set(&mut cfg.sweep.thresholds, a.thresholds.clone());
            set(&mut cfg.sweep.n_prompts, a.n_prompts);
            set(&mut cfg.paths.results, a.out.clone());
        }
        Command::Report(a) => {
            set(&mut cfg.paths.results, a.results.clone());
            set(&mut cfg.paths.report_dir, a.out.clone());
        }
        Command::Serve(a) => {
            set(&mut cfg.service.bind, a.bind.clone());
            set(&mut cfg.service.max_concurrency, a.max_concurrency);
            set(&mut cfg.hybrid.threshold, a.threshold);
        }
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

pub fn run(cli: &Cli, cfg: &AppConfig) -> CliResult {
    match &cli.command {
        Command::BuildModels(_) => build_models(cfg),
        Command::SynthPrompts(_) => synth_prompts(cfg),
        Command::GenPairs(_) => gen_pairs(cfg),
        Command::Chunk(_) => chunk(cfg),
        Command::TrainReward(_) => train_reward(cfg),
        Command::Decode(a) => decode(cfg, a),
        Command::Sweep(_) => sweep(cfg),
        Command::Report(_) => report(cfg),
        Command::Serve(_) => serve(cfg),
    }
}

fn build_models(cfg: &AppConfig) -> CliResult {
    let texts = pipeline::read_texts(&cfg.paths.corpus)?;
    let s = pipeline::build_surrogates(&texts, &cfg.models)?;
    s.save(cfg)?;
    tracing::info!(
        vocab = s.vocab.len(),
        llm_contexts = s.llm.num_contexts(),
        slm_contexts = s.slm.num_contexts(),
        "models written to {}",
        cfg.work_dir.display()
    );
    Ok(())
}

fn synth_prompts(cfg: &AppConfig) -> CliResult {
    let s = Surrogates::load(cfg)?;
    let prompts = pipeline::synth_prompts(cfg, cfg.synth.n_prompts)?;
    let path = cfg.artifact(&cfg.paths.prompts);
    pipeline::write_dataset(&path, &prompts, "prompts", s.vocab.hash(), cfg.seed)?;
    tracing::info!(records = prompts.len(), "wrote {}", path.display());
    Ok(())
}

fn gen_pairs(cfg: &AppConfig) -> CliResult {
    let s = Surrogates::load(cfg)?;
    let prompts: Vec<PromptRecord> = pipeline::read_dataset(&cfg.artifact(&cfg.paths.prompts), &s.vocab)?;
    let out = pipeline::make_pairs(cfg, &s, &prompts)?;
    if out.dropped_empty > 0 || out.failed > 0 {
        tracing::warn!(dropped_empty = out.dropped_empty, failed = out.failed, "some prompts produced no pair");
    }
    let path = cfg.artifact(&cfg.paths.pairs);
    pipeline::write_dataset(&path, &out.pairs, "pairs", s.vocab.hash(), cfg.seed)?;
    tracing::info!(records = out.pairs.len(), "wrote {}", path.display());
    Ok(())
}

fn chunk(cfg: &AppConfig) -> CliResult {
    let s = Surrogates::load(cfg)?;
    let pairs: Vec<ResponsePair> = pipeline::read_dataset(&cfg.artifact(&cfg.paths.pairs), &s.vocab)?;
    let out = pipeline::make_chunks(cfg, &pairs)?;
    if out.skipped > 0 {
        tracing::warn!(skipped = out.skipped, "pairs without a common length were skipped");
    }
    let path = cfg.artifact(&cfg.paths.chunks);
    pipeline::write_dataset(&path, &out.chunks, "chunks", s.vocab.hash(), cfg.seed)?;
    tracing::info!(records = out.chunks.len(), "wrote {}", path.display());
    Ok(())
}

fn train_reward(cfg: &AppConfig) -> CliResult {
    let s = Surrogates::load(cfg)?;
    let chunks: Vec<ChunkPair> = pipeline::read_dataset(&cfg.artifact(&cfg.paths.chunks), &s.vocab)?;
    let (model, report) = pipeline::train_reward(cfg, &s.vocab, &chunks)?;
    let model_path = cfg.artifact(&cfg.paths.reward_model);
    model.save(&model_path)?;
    write_jsonl(&cfg.artifact(&cfg.paths.train_report), &report.epochs)?;
    if let Some(last) = report.epochs.last() {
        tracing::info!(
            n_train = report.n_train,
            n_holdout = report.n_holdout,
            holdout_loss = last.holdout_loss,
            rank_acc = last.rank_acc,
            "wrote {}",
            model_path.display()
        );
    }
    let pairs_path = cfg.artifact(&cfg.paths.pairs);
    if pairs_path.exists() {
        let pairs: Vec<ResponsePair> = pipeline::read_dataset(&pairs_path, &s.vocab)?;
        let probe = bench::length_bias_probe(&model, &pairs, &cfg.sweep.probe_lengths, cfg.sweep.length_bias_bound)?;
        write_length_bias(cfg, &probe)?;
    } else {
        tracing::warn!("no pairs dataset at {}; length-bias probe skipped", pairs_path.display());
    }
    Ok(())
}

fn write_length_bias(cfg: &AppConfig, probe: &LengthBiasReport) -> CliResult {
    let path = cfg.artifact(&cfg.paths.length_bias);
    let mut text = serde_json::to_string_pretty(probe)?;
    text.push('\n');
    pipeline::save_bytes(&path, text.as_bytes())?;
    if probe.pass {
        tracing::info!(pearson_r = probe.pearson_r, "length-bias probe within bound");
    } else {
        tracing::warn!(pearson_r = probe.pearson_r, bound = probe.bound, "length-bias probe exceeds bound");
    }
    Ok(())
}

fn hybrid_engine(cfg: &AppConfig, s: &Surrogates) -> CliResult<HybridEngine> {
    let model = pipeline::load_reward(cfg, &s.vocab)?;
    let scorer: Arc<dyn TokenScorer> = Arc::new(model);
    Ok(pipeline::engine(cfg, s, scorer)?)
}

fn decode(cfg: &AppConfig, a: &DecodeArgs) -> CliResult {
    let s = Surrogates::load(cfg)?;
    let hc = cfg.hybrid_config();
    let prompt = s.vocab.encode_prompt(&a.prompt);
    let mut out = String::new();
    match a.backend {
        Backend::Hybrid => {
            let engine = hybrid_engine(cfg, &s)?;
            let (tokens, trace) = engine.decode(&hc, &prompt)?;
            match a.format {
                OutputFormat::Steps => {
                    for st in &trace.steps {
                        let src = match st.source {
                            Source::Slm => "slm",
                            Source::Llm => "llm",
                        };
                        out.push_str(&format!(
                            "{}\t{}\t{}\t{:?}\t{:.6}{}\n",
                            st.index,
                            src,
                            st.token,
                            s.vocab.display(st.token),
                            st.reward,
                            if st.degraded { "\tdegraded" } else { "" }
                        ));
                    }
                    out.push_str(&format!(
                        "# threshold={} slm_steps={} llm_steps={}\n",
                        format_threshold(trace.threshold),
                        trace.slm_steps,
                        trace.llm_steps
                    ));
                }
                OutputFormat::Tokens => push_ids(&mut out, &tokens),
                OutputFormat::Text => {
                    out.push_str(&s.vocab.detokenize(&tokens));
                    out.push('\n');
                }
            }
            if let Some(p) = &a.trace_out {
                pipeline::save_bytes(p, trace_jsonl("cli", &hc, &trace)?.as_bytes())?;
            }
        }
        Backend::Slm | Backend::Llm => {
            let (backend, params): (Arc<dyn GenBackend>, _) = if a.backend == Backend::Slm {
                (s.slm.clone(), hc.slm_params)
            } else {
                (pipeline::llm_backend(cfg, &s)?, hc.llm_params)
            };
            let tokens = generate(backend.as_ref(), &prompt, &params, hc.max_tokens)?;
            let src = if a.backend == Backend::Slm { "slm" } else { "llm" };
            match a.format {
                OutputFormat::Steps => {
                    for (i, &t) in tokens.iter().enumerate() {
                        out.push_str(&format!("{i}\t{src}\t{t}\t{:?}\n", s.vocab.display(t)));
                    }
                }
                OutputFormat::Tokens => push_ids(&mut out, &tokens),
                OutputFormat::Text => {
                    out.push_str(&s.vocab.detokenize(&tokens));
                    out.push('\n');
                }
            }
        }
    }
    print!("{out}");
    Ok(())
}

fn push_ids(out: &mut String, tokens: &TokenSeq) {
    for t in tokens.iter() {
        out.push_str(&format!("{t}\n"));
    }
}

fn sweep(cfg: &AppConfig) -> CliResult {
    let s = Surrogates::load(cfg)?;
    let engine = hybrid_engine(cfg, &s)?;
    let spec: ThresholdSpec = cfg.sweep.thresholds.parse()?;
    let suite: Vec<TokenSeq> = pipeline::suite_prompts(cfg, cfg.sweep.n_prompts)?
        .iter()
        .map(|p| s.vocab.encode_prompt(&p.prompt))
        .collect();
    let hc = cfg.hybrid_config();
    let results = bench::run_sweep(
        &SweepInput {
            engine: &engine,
            cfg: &hc,
            prompts: &suite,
            reference: &s.llm,
        },
        &spec,
    )?;
    let path = cfg.artifact(&cfg.paths.results);
    write_jsonl(&path, &results)?;
    tracing::info!(records = results.len(), "wrote {}", path.display());
    print!("{}", bench::report_text(&results));
    Ok(())
}

fn report(cfg: &AppConfig) -> CliResult {
    let results: Vec<SweepResult> = read_jsonl(&cfg.artifact(&cfg.paths.results))?;
    let dir = cfg.artifact(&cfg.paths.report_dir);
    let files = bench::render_report(&results, &dir)?;
    for f in &files {
        tracing::info!("wrote {}", f.display());
    }
    print!("{}", fs::read_to_string(dir.join("report.txt"))?);
    Ok(())
}

fn serve(cfg: &AppConfig) -> CliResult {
    let s = Surrogates::load(cfg)?;
    let engine = Arc::new(hybrid_engine(cfg, &s)?);
    let hc = cfg.hybrid_config();
    hc.validate()?;
    let state = AppState::new(engine, hc, cfg.service.model_name.clone(), cfg.service.max_concurrency);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&cfg.service.bind).await?;
        tracing::info!("listening on {}", listener.local_addr()?);
        service::serve_with_shutdown(listener, state, service::shutdown_signal()).await
    })?;
    Ok(())
}
