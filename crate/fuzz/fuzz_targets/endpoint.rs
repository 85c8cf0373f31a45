#![no_main]

use impasto_core::oracle::Endpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(e) = s.parse::<Endpoint>() {
            assert_eq!(e.to_string().parse::<Endpoint>().unwrap(), e);
        }
    }
});
