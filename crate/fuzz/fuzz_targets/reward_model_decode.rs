#![no_main]

use hydec_core::reward::{RewardModel, TokenScorer};
use hydec_core::BOS;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = RewardModel::from_bytes(data) {
        let bytes = m.to_bytes();
        let again = RewardModel::from_bytes(&bytes).expect("re-encoded model decodes");
        assert_eq!(again.to_bytes(), bytes);
        if !m.emb.is_empty() {
            let _ = m.score(&[BOS], &[], BOS);
        }
    }
});
