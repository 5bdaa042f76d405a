#![no_main]

use hydec_core::generators::remote::CompletionRequest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(req) = serde_json::from_slice::<CompletionRequest>(data) {
        let text = serde_json::to_string(&req).expect("request serializes");
        let _: CompletionRequest = serde_json::from_str(&text).expect("serialized request parses");
    }
});
