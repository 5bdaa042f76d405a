#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use hydec_core::generators::NgramModel;
use hydec_core::{Granularity, TokenSeq, Vocab};

pub fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/corpus")
}

pub fn corpus_texts() -> Vec<String> {
    ["stories.txt", "notes.txt"]
        .iter()
        .map(|f| std::fs::read_to_string(corpus_dir().join(f)).expect("bundled corpus"))
        .collect()
}

pub struct Surrogates {
    pub vocab: Arc<Vocab>,
    pub lines: Vec<TokenSeq>,
    pub slm: Arc<NgramModel>,
    pub llm: Arc<NgramModel>,
}

/// LLM: order 4 on every line. SLM: order 2 on every fourth line.
pub fn surrogates() -> &'static Surrogates {
    static S: OnceLock<Surrogates> = OnceLock::new();
    S.get_or_init(|| {
        let texts = corpus_texts();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let vocab = Arc::new(Vocab::build_from(&refs, Granularity::Byte).unwrap());
        let lines: Vec<TokenSeq> = texts
            .iter()
            .flat_map(|t| t.lines())
            .filter(|l| !l.trim().is_empty())
            .map(|l| vocab.tokenize(l).into())
            .collect();
        let subset: Vec<TokenSeq> = lines.iter().step_by(4).cloned().collect();
        let llm = NgramModel::train_sequences(vocab.clone(), &lines, 4, 0.5).unwrap();
        let slm = NgramModel::train_sequences(vocab.clone(), &subset, 2, 0.5).unwrap();
        Surrogates {
            vocab,
            lines,
            slm: Arc::new(slm),
            llm: Arc::new(llm),
        }
    })
}
