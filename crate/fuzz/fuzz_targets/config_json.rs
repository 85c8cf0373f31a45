#![no_main]

use impasto_core::protect::ProtectionConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(cfg) = serde_json::from_slice::<ProtectionConfig>(data) else {
        return;
    };
    if cfg.validate().is_ok() {
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ProtectionConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
});
