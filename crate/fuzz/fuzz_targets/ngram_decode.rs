#![no_main]

use hydec_core::generators::{generate, NgramModel, SamplingParams};
use hydec_core::BOS;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = NgramModel::from_bytes(data) {
        let bytes = m.to_bytes();
        let again = NgramModel::from_bytes(&bytes).expect("re-encoded model decodes");
        assert_eq!(again.to_bytes(), bytes);
        let out = generate(&m, &[BOS], &SamplingParams::greedy(), 4).expect("decoded model generates");
        assert!(out.len() <= 4);
    }
});
