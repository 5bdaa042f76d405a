#![no_main]

use hydec::service::{CompletionReply, ErrorBody};
use hydec_core::generators::remote::CompletionResponse;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(resp) = serde_json::from_slice::<CompletionResponse>(data) {
        let text = serde_json::to_string(&resp).expect("response serializes");
        let _: CompletionResponse = serde_json::from_str(&text).expect("serialized response parses");
    }
    let _ = serde_json::from_slice::<CompletionReply>(data);
    let _ = serde_json::from_slice::<ErrorBody>(data);
});
