#![no_main]

use hydec_core::bench::ThresholdSpec;
use hydec_core::num::{format_threshold, parse_threshold};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(t) = parse_threshold(text) {
        assert!(!t.is_nan());
        assert_eq!(parse_threshold(&format_threshold(t)).expect("formatted threshold parses"), t);
    }
    if let Ok(ThresholdSpec::Quantiles(qs)) = text.parse::<ThresholdSpec>() {
        assert!(qs.iter().all(|q| (0.0..=1.0).contains(q)));
    }
});
