#![no_main]

use hydec_core::bench::{report_text, LengthBiasReport, SweepResult};
use hydec_core::jsonl::parse_jsonl;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(rows) = parse_jsonl::<SweepResult>(text) {
        let _ = report_text(&rows);
    }
    let _ = serde_json::from_str::<LengthBiasReport>(text);
});
