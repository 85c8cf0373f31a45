#![no_main]

use impasto_core::oracle::wire::read_response;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let mut rest = data;
    // A stream may carry several frames back to back.
    while let Ok(resp) = read_response(&mut rest) {
        assert_eq!(resp.tensors.len(), resp.header.shapes.len());
    }
});
