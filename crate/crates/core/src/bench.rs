//! Threshold sweeps, quality and throughput metrics, the length-bias probe,
//! and report rendering.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decoder::{DecodeTrace, HybridConfig, HybridEngine, Source};
use crate::error::{Error, Result};
use crate::generators::{generate, GenBackend, NgramModel};
use crate::num::{extended_f64, format_threshold, parse_threshold};
use crate::reward::{chunk_reward, TokenScorer};
use crate::synth::ResponsePair;
use crate::vocab::{TokenId, TokenSeq};

pub use crate::decoder::{LatencyMode, LatencyModel};

/// Thresholds given directly, or as quantiles of calibration rewards.
#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdSpec {
    Raw(Vec<f64>),
    Quantiles(Vec<f64>),
}

impl ThresholdSpec {
    pub fn default_quantiles() -> Self {
        ThresholdSpec::Quantiles(vec![0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99])
    }

    pub fn len(&self) -> usize {
        match self {
            ThresholdSpec::Raw(v) | ThresholdSpec::Quantiles(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::str::FromStr for ThresholdSpec {
    type Err = Error;

    /// `q:0.1,0.5,0.9` for quantiles, `-inf,0.2,inf` for raw values.
    fn from_str(s: &str) -> Result<Self> {
        let (quant, body) = match s.trim().strip_prefix("q:") {
            Some(rest) => (true, rest),
            None => (false, s.trim()),
        };
        let vals = body
            .split(',')
            .map(|t| parse_threshold(t.trim()))
            .collect::<Result<Vec<f64>>>()?;
        if quant {
            if let Some(q) = vals.iter().find(|q| !(0.0..=1.0).contains(*q)) {
                return Err(Error::invalid(format!("quantile {q} outside [0, 1]")));
            }
            Ok(ThresholdSpec::Quantiles(vals))
        } else {
            Ok(ThresholdSpec::Raw(vals))
        }
    }
}

/// Empirical quantile (linear interpolation between order statistics).
/// `q = 0` maps to `-inf` and `q = 1` to `+inf`, so the extremes always
/// reproduce the pure-SLM and pure-LLM limits.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if q <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if q >= 1.0 || sorted.is_empty() {
        return f64::INFINITY;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Rewards of every SLM draft along pure-SLM trajectories, sorted ascending.
pub fn calibrate(engine: &HybridEngine, cfg: &HybridConfig, prompts: &[TokenSeq]) -> Result<Vec<f64>> {
    let c = cfg.with_threshold(f64::NEG_INFINITY);
    let mut rewards = Vec::new();
    for res in engine.batch_decode(&c, prompts) {
        let (_, trace) = res?;
        rewards.extend(trace.steps.iter().map(|s| s.reward));
    }
    if rewards.is_empty() {
        return Err(Error::Insufficient("calibration produced no rewards".into()));
    }
    rewards.sort_by(f64::total_cmp);
    Ok(rewards)
}

/// Mean per-token log-likelihood of each output under `reference`, averaged
/// over outputs. Empty outputs are ignored.
pub fn quality_proxy(outputs: &[TokenSeq], prompts: &[TokenSeq], reference: &NgramModel) -> Result<f64> {
    if outputs.len() != prompts.len() {
        return Err(Error::invalid("outputs and prompts differ in length"));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (out, prompt) in outputs.iter().zip(prompts) {
        if out.is_empty() {
            continue;
        }
        let mut prefix: Vec<TokenId> = prompt.to_vec();
        let mut ll = 0.0;
        for &t in out.iter() {
            ll += reference.log_prob(&prefix, t);
            prefix.push(t);
        }
        sum += ll / out.len() as f64;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Insufficient("no outputs to score".into()));
    }
    Ok(sum / n as f64)
}

/// Emitted tokens per second over a set of traces.
///
/// In simulated mode the time of a step is recomputed from the cost formula;
/// in measured mode the recorded wall times are used.
pub fn throughput(traces: &[DecodeTrace], latency: &LatencyModel) -> Result<f64> {
    if traces.is_empty() {
        return Err(Error::Insufficient("no traces".into()));
    }
    let mut tokens = 0usize;
    let mut ms = 0.0;
    for t in traces {
        tokens += t.steps.len();
        ms += match latency.mode {
            LatencyMode::Simulated => t
                .steps
                .iter()
                .map(|s| latency.step_ms(s.source == Source::Llm || s.degraded))
                .sum(),
            LatencyMode::Measured => t.wall_ms,
        };
    }
    if ms <= 0.0 {
        return Err(Error::Insufficient("zero elapsed time".into()));
    }
    Ok(tokens as f64 / (ms / 1e3))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Hybrid,
    SlmBaseline,
    LlmBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepResult {
    pub kind: SweepKind,
    #[serde(with = "extended_f64")]
    pub threshold: f64,
    pub quantile: Option<f64>,
    /// `llm / (llm + slm)`, pooled over all emitted tokens.
    pub activation_ratio_frac: f64,
    /// `llm / slm`; infinite when no SLM token was accepted.
    #[serde(with = "extended_f64")]
    pub activation_ratio_paper: f64,
    pub quality: f64,
    pub throughput: f64,
    pub n_prompts: usize,
    pub n_failed: usize,
    pub slm_steps: usize,
    pub llm_steps: usize,
    pub tokens: usize,
}

fn ratios(slm: usize, llm: usize) -> (f64, f64) {
    let total = slm + llm;
    let frac = if total == 0 { 0.0 } else { llm as f64 / total as f64 };
    let paper = if slm == 0 {
        if llm == 0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        llm as f64 / slm as f64
    };
    (frac, paper)
}

pub struct SweepInput<'a> {
    pub engine: &'a HybridEngine,
    pub cfg: &'a HybridConfig,
    pub prompts: &'a [TokenSeq],
    /// Reference model for the quality proxy (normally the LLM surrogate).
    pub reference: &'a NgramModel,
}

/// Hybrid sweep in the order given, followed by the SLM-only and LLM-only baselines.
pub fn run_sweep(input: &SweepInput<'_>, spec: &ThresholdSpec) -> Result<Vec<SweepResult>> {
    if spec.len() < 2 {
        return Err(Error::invalid("a sweep needs at least two thresholds"));
    }
    if input.prompts.is_empty() {
        return Err(Error::NoPrompts);
    }
    let points: Vec<(f64, Option<f64>)> = match spec {
        ThresholdSpec::Raw(v) => v.iter().map(|&t| (t, None)).collect(),
        ThresholdSpec::Quantiles(qs) => {
            let cal = calibrate(input.engine, input.cfg, input.prompts)?;
            qs.iter().map(|&q| (quantile(&cal, q), Some(q))).collect()
        }
    };
    let mut results = Vec::with_capacity(points.len() + 2);
    for (tau, q) in points {
        results.push(sweep_point(input, tau, q)?);
    }
    let lat = &input.cfg.latency;
    results.push(baseline(input, input.engine.slm().as_ref(), SweepKind::SlmBaseline, lat.slm_ms)?);
    results.push(baseline(input, input.engine.llm().as_ref(), SweepKind::LlmBaseline, lat.llm_ms)?);
    Ok(results)
}

fn sweep_point(input: &SweepInput<'_>, tau: f64, q: Option<f64>) -> Result<SweepResult> {
    let cfg = input.cfg.with_threshold(tau);
    let mut outputs = Vec::new();
    let mut prompts = Vec::new();
    let mut traces = Vec::new();
    let mut failed = 0;
    for (res, p) in input.engine.batch_decode(&cfg, input.prompts).into_iter().zip(input.prompts) {
        match res {
            Ok((out, trace)) => {
                outputs.push(out);
                prompts.push(p.clone());
                traces.push(trace);
            }
            Err(e) => {
                tracing::warn!(threshold = tau, error = %e, "prompt failed during sweep");
                failed += 1;
            }
        }
    }
    let slm: usize = traces.iter().map(|t| t.slm_steps).sum();
    let llm: usize = traces.iter().map(|t| t.llm_steps).sum();
    let (frac, paper) = ratios(slm, llm);
    Ok(SweepResult {
        kind: SweepKind::Hybrid,
        threshold: tau,
        quantile: q,
        activation_ratio_frac: frac,
        activation_ratio_paper: paper,
        quality: quality_proxy(&outputs, &prompts, input.reference)?,
        throughput: throughput(&traces, &cfg.latency)?,
        n_prompts: input.prompts.len(),
        n_failed: failed,
        slm_steps: slm,
        llm_steps: llm,
        tokens: slm + llm,
    })
}

fn baseline(input: &SweepInput<'_>, model: &dyn GenBackend, kind: SweepKind, ms_per_token: f64) -> Result<SweepResult> {
    let params = match kind {
        SweepKind::LlmBaseline => &input.cfg.llm_params,
        _ => &input.cfg.slm_params,
    };
    let mut outputs = Vec::new();
    let mut prompts = Vec::new();
    let mut failed = 0;
    for p in input.prompts {
        match generate(model, p, params, input.cfg.max_tokens) {
            Ok(out) => {
                outputs.push(out);
                prompts.push(p.clone());
            }
            Err(_) => failed += 1,
        }
    }
    let tokens: usize = outputs.iter().map(|o| o.len()).sum();
    let ms = tokens as f64 * ms_per_token;
    if ms <= 0.0 {
        return Err(Error::Insufficient(format!("{kind:?} has zero elapsed time")));
    }
    let (slm, llm) = match kind {
        SweepKind::LlmBaseline => (0, tokens),
        _ => (tokens, 0),
    };
    let (frac, paper) = ratios(slm, llm);
    Ok(SweepResult {
        kind,
        threshold: match kind {
            SweepKind::LlmBaseline => f64::INFINITY,
            _ => f64::NEG_INFINITY,
        },
        quantile: None,
        activation_ratio_frac: frac,
        activation_ratio_paper: paper,
        quality: quality_proxy(&outputs, &prompts, input.reference)?,
        throughput: tokens as f64 / (ms / 1e3),
        n_prompts: input.prompts.len(),
        n_failed: failed,
        slm_steps: slm,
        llm_steps: llm,
        tokens,
    })
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len()) as f64;
    if n < 2.0 {
        return 0.0;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Ranks starting at 1; tied values share their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthBiasReport {
    pub lengths: Vec<usize>,
    pub n_pairs: usize,
    pub pearson_r: f64,
    pub mean_reward_by_length: Vec<f64>,
    pub bound: f64,
    pub pass: bool,
}

/// Correlation between chunk length and chunk reward on chosen-side prefixes.
/// Only pairs whose shorter side reaches the longest probe length are used.
pub fn length_bias_probe(
    scorer: &dyn TokenScorer,
    pairs: &[ResponsePair],
    lengths: &[usize],
    bound: f64,
) -> Result<LengthBiasReport> {
    let max_len = lengths.iter().copied().max().unwrap_or(0);
    if lengths.len() < 2 || lengths.contains(&0) {
        return Err(Error::Insufficient("need at least two positive probe lengths".into()));
    }
    let eligible: Vec<&ResponsePair> = pairs
        .iter()
        .filter(|p| p.chosen_ids.len().min(p.rejected_ids.len()) >= max_len)
        .collect();
    if eligible.len() < 2 {
        return Err(Error::Insufficient(format!(
            "{} pair(s) reach length {max_len}; need at least 2",
            eligible.len()
        )));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut by_len = vec![0.0; lengths.len()];
    for p in &eligible {
        for (li, &len) in lengths.iter().enumerate() {
            let r = chunk_reward(scorer, &p.prompt_ids, &p.chosen_ids[..len])?;
            xs.push(len as f64);
            ys.push(r);
            by_len[li] += r / eligible.len() as f64;
        }
    }
    let r = pearson(&xs, &ys);
    Ok(LengthBiasReport {
        lengths: lengths.to_vec(),
        n_pairs: eligible.len(),
        pearson_r: r,
        mean_reward_by_length: by_len,
        bound,
        pass: r.abs() < bound,
    })
}

/// Large-model reference rows: (dataset, threshold, activation %, hybrid throughput).
const REFERENCE_POINTS: &[(&str, f64, f64, f64)] = &[
    ("gsm8k", 1.0, 56.0, 10.70),
    ("gsm8k", 2.0, 78.0, 8.71),
    ("gsm8k", 4.0, 87.0, 8.48),
    ("mbpp", 1.0, 35.0, 6.39),
    ("mbpp", 1.5, 68.0, 4.82),
    ("mbpp", 2.0, 87.0, 4.20),
    ("mbpp", 4.0, 98.0, 4.10),
];

fn kind_label(k: SweepKind) -> &'static str {
    match k {
        SweepKind::Hybrid => "hybrid",
        SweepKind::SlmBaseline => "slm-only",
        SweepKind::LlmBaseline => "llm-only",
    }
}

fn opt_q(q: Option<f64>) -> String {
    q.map_or_else(|| "-".into(), |q| format!("{q:.3}"))
}

/// Plain-text table of sweep results plus the reference annotations.
pub fn report_text(results: &[SweepResult]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<9} {:>8} {:>12} {:>10} {:>10} {:>11} {:>12} {:>8} {:>7}",
        "kind", "quantile", "threshold", "act_frac", "act_ratio", "quality", "tok_per_s", "prompts", "failed"
    );
    for r in results {
        let _ = writeln!(
            s,
            "{:<9} {:>8} {:>12} {:>10.4} {:>10} {:>11.5} {:>12.3} {:>8} {:>7}",
            kind_label(r.kind),
            opt_q(r.quantile),
            fmt_tau(r.threshold),
            r.activation_ratio_frac,
            if r.activation_ratio_paper.is_finite() {
                format!("{:.4}", r.activation_ratio_paper)
            } else {
                format_threshold(r.activation_ratio_paper)
            },
            r.quality,
            r.throughput,
            r.n_prompts,
            r.n_failed,
        );
    }
    s.push_str("\nact_frac = llm/(llm+slm); act_ratio = llm/slm; quality = mean per-token log-likelihood under the LLM surrogate (nats).\n");
    s.push_str("\nReference points from a Qwen2-1.5B/7B deployment (annotation only; not reproduced at this scale):\n");
    let _ = writeln!(s, "{:<8} {:>9} {:>14} {:>18}", "dataset", "threshold", "activation_%", "hybrid_tok_per_s");
    for (ds, tau, act, tp) in REFERENCE_POINTS {
        let _ = writeln!(s, "{ds:<8} {tau:>9.1} {act:>14.2} {tp:>18.2}");
    }
    s
}

fn fmt_tau(t: f64) -> String {
    if t.is_finite() {
        format!("{t:.6}")
    } else {
        format_threshold(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Activation,
    Quality,
    Throughput,
}

impl Metric {
    fn of(self, r: &SweepResult) -> f64 {
        match self {
            Metric::Activation => r.activation_ratio_frac,
            Metric::Quality => r.quality,
            Metric::Throughput => r.throughput,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Metric::Activation => "LLM activation (llm/(llm+slm))",
            Metric::Quality => "quality (nats/token)",
            Metric::Throughput => "throughput (tokens/s)",
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            Metric::Activation => "activation.svg",
            Metric::Quality => "quality.svg",
            Metric::Throughput => "throughput.svg",
        }
    }
}

/// Chart coordinates: x is the quantile when every hybrid row has one,
/// otherwise the threshold (infinite thresholds are then left out).
pub fn chart_points(results: &[SweepResult], metric: Metric) -> (Vec<(f64, f64)>, &'static str) {
    let hybrid: Vec<&SweepResult> = results.iter().filter(|r| r.kind == SweepKind::Hybrid).collect();
    let use_q = !hybrid.is_empty() && hybrid.iter().all(|r| r.quantile.is_some());
    let pts = hybrid
        .iter()
        .filter_map(|r| {
            let x = if use_q { r.quantile? } else { r.threshold };
            x.is_finite().then(|| (x, metric.of(r)))
        })
        .collect();
    (pts, if use_q { "threshold quantile" } else { "threshold" })
}

/// Axis ranges of a chart: x spans the sweep points, y spans the points and the baselines.
pub fn chart_ranges(results: &[SweepResult], metric: Metric) -> ((f64, f64), (f64, f64)) {
    let (pts, _) = chart_points(results, metric);
    let span = |vals: &mut dyn Iterator<Item = f64>| {
        vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let x = span(&mut pts.iter().map(|p| p.0));
    let y = span(
        &mut pts
            .iter()
            .map(|p| p.1)
            .chain(results.iter().filter(|r| r.kind != SweepKind::Hybrid).map(|r| metric.of(r))),
    );
    (x, y)
}

pub fn render_svg(results: &[SweepResult], metric: Metric) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const L: f64 = 70.0;
    const R: f64 = 20.0;
    const T: f64 = 30.0;
    const B: f64 = 50.0;
    let (pts, xlabel) = chart_points(results, metric);
    let ((x0, x1), (y0, y1)) = chart_ranges(results, metric);
    let widen = |lo: f64, hi: f64| {
        if !lo.is_finite() || !hi.is_finite() {
            (0.0, 1.0)
        } else if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, hi + 0.5)
        }
    };
    let (x0, x1) = widen(x0, x1);
    let (y0, y1) = widen(y0, y1);
    let sx = |x: f64| L + (x - x0) / (x1 - x0) * (W - L - R);
    let sy = |y: f64| H - B - (y - y0) / (y1 - y0) * (H - T - B);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{L}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
        H - B,
        W - R,
        H - B
    );
    let _ = writeln!(s, r#"<line x1="{L}" y1="{T}" x2="{L}" y2="{:.2}" stroke="black"/>"#, H - B);
    for (v, x) in [(x0, sx(x0)), (x1, sx(x1))] {
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{v:.4}</text>"#,
            H - B + 16.0
        );
    }
    for (v, y) in [(y0, sy(y0)), (y1, sy(y1))] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{y:.2}" text-anchor="end">{v:.4}</text>"#,
            L - 6.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{xlabel}</text>"#,
        (L + W - R) / 2.0,
        H - 12.0
    );
    let _ = writeln!(s, r#"<text x="{L}" y="18">{}</text>"#, metric.label());
    for r in results.iter().filter(|r| r.kind != SweepKind::Hybrid) {
        let y = sy(metric.of(r));
        let colour = if r.kind == SweepKind::SlmBaseline { "#1f77b4" } else { "#d62728" };
        let _ = writeln!(
            s,
            r#"<line x1="{L}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{colour}" stroke-dasharray="6 4"/>"#,
            W - R
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" fill="{colour}">{}</text>"#,
            W - R,
            y - 4.0,
            kind_label(r.kind)
        );
    }
    if !pts.is_empty() {
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#2ca02c" stroke-width="2"/>"##,
            path.join(" ")
        );
        for &(x, y) in &pts {
            let _ = writeln!(s, r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#2ca02c"/>"##, sx(x), sy(y));
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `report.txt` and the three charts into `dir`.
pub fn render_report(results: &[SweepResult], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let txt = dir.join("report.txt");
    fs::write(&txt, report_text(results))?;
    written.push(txt);
    for m in [Metric::Activation, Metric::Quality, Metric::Throughput] {
        let p = dir.join(m.file_name());
        fs::write(&p, render_svg(results, m))?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(kind: SweepKind, q: Option<f64>, act: f64, quality: f64, tp: f64) -> SweepResult {
        SweepResult {
            kind,
            threshold: q.unwrap_or(0.0),
            quantile: q,
            activation_ratio_frac: act,
            activation_ratio_paper: act / (1.0 - act),
            quality,
            throughput: tp,
            n_prompts: 1,
            n_failed: 0,
            slm_steps: 1,
            llm_steps: 1,
            tokens: 2,
        }
    }

    #[test]
    fn threshold_spec_parsing() {
        assert_eq!(
            "q:0.1,0.5".parse::<ThresholdSpec>().unwrap(),
            ThresholdSpec::Quantiles(vec![0.1, 0.5])
        );
        assert_eq!(
            "-inf, 0.5 ,inf".parse::<ThresholdSpec>().unwrap(),
            ThresholdSpec::Raw(vec![f64::NEG_INFINITY, 0.5, f64::INFINITY])
        );
        assert!("q:1.5".parse::<ThresholdSpec>().is_err());
        assert!("q:".parse::<ThresholdSpec>().is_err());
        assert!("nan,1".parse::<ThresholdSpec>().is_err());
    }

    #[test]
    fn quantile_interpolates() {
        let v = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(quantile(&v, 0.5), 1.5);
        assert_eq!(quantile(&v, 0.0), f64::NEG_INFINITY);
        assert_eq!(quantile(&v, 1.0), f64::INFINITY);
        assert_eq!(quantile(&v, 1.0 / 3.0), 1.0);
    }

    #[test]
    fn ratio_identity() {
        let (f, p) = ratios(3, 1);
        assert!((f - p / (1.0 + p)).abs() < 1e-15);
        assert_eq!(ratios(0, 4), (1.0, f64::INFINITY));
        assert_eq!(ratios(0, 0), (0.0, 0.0));
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-15);
        assert_eq!(pearson(&[1.0, 2.0], &[5.0, 5.0]), 0.0);
    }

    #[test]
    fn report_rows_and_determinism() {
        let rs = vec![
            row(SweepKind::Hybrid, Some(0.1), 0.2, -3.0, 100.0),
            row(SweepKind::Hybrid, Some(0.9), 0.8, -2.0, 40.0),
            row(SweepKind::SlmBaseline, None, 0.0, -3.5, 500.0),
            row(SweepKind::LlmBaseline, None, 1.0, -1.5, 25.0),
        ];
        let t = report_text(&rs);
        assert_eq!(t.lines().filter(|l| l.starts_with("hybrid")).count(), 2);
        assert_eq!(t.lines().filter(|l| l.ends_with(" 0") && l.contains("-only")).count(), 2);
        assert_eq!(t, report_text(&rs));
        let ((x0, x1), (y0, y1)) = chart_ranges(&rs, Metric::Quality);
        assert_eq!((x0, x1), (0.1, 0.9));
        assert_eq!((y0, y1), (-3.5, -1.5));
        assert_eq!(render_svg(&rs, Metric::Throughput), render_svg(&rs, Metric::Throughput));
    }
}
