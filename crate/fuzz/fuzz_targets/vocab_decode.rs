#![no_main]

use hydec_core::Vocab;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(v) = Vocab::from_bytes(data) {
        let bytes = v.to_bytes();
        let again = Vocab::from_bytes(&bytes).expect("re-encoded vocabulary decodes");
        assert_eq!(again.to_bytes(), bytes);
        assert_eq!(again.hash(), v.hash());
        let text = String::from_utf8_lossy(&data[..data.len().min(64)]);
        let ids = v.tokenize(&text);
        let _ = v.detokenize(&ids);
    }
});
