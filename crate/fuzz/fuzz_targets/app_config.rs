#![no_main]

use hydec::config::AppConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = AppConfig::from_toml(text) {
        let again = AppConfig::from_toml(&cfg.to_toml()).expect("serialized config parses");
        assert_eq!(again.to_toml(), cfg.to_toml());
    }
});
