#![no_main]

use impasto_core::oracle::wire::{read_request, write_request};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(req) = read_request(&mut &data[..]) else {
        return;
    };
    let mut buf = Vec::new();
    write_request(&mut buf, &req).expect("decoded request re-encodes");
    let again = read_request(&mut &buf[..]).expect("re-encoded request decodes");
    assert_eq!(again.header.op, req.header.op);
    assert_eq!(again.tensors.len(), req.tensors.len());
});
