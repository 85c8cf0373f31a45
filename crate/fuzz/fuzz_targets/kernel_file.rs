#![no_main]

use impasto_core::jnd::kernels::parse_kernel_file;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(kernels) = parse_kernel_file(text) {
            for k in kernels {
                assert_eq!(k.weights.iter().sum::<f64>(), 0.0);
            }
        }
    }
});
