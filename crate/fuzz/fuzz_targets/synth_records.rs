#![no_main]

use hydec_core::jsonl::{parse_jsonl, to_jsonl_string, Manifest};
use hydec_core::synth::{ChunkPair, PromptRecord, ResponsePair};
use libfuzzer_sys::fuzz_target;

fn roundtrip<T>(text: &str)
where
    T: serde::Serialize + serde::de::DeserializeOwned + PartialEq + std::fmt::Debug,
{
    if let Ok(recs) = parse_jsonl::<T>(text) {
        let out = to_jsonl_string(&recs).expect("records serialize");
        assert_eq!(parse_jsonl::<T>(&out).expect("serialized records parse"), recs);
    }
}

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    roundtrip::<PromptRecord>(text);
    roundtrip::<ResponsePair>(text);
    roundtrip::<ChunkPair>(text);
    let _ = serde_json::from_str::<Manifest>(text);
});
