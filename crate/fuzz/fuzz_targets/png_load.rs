#![no_main]

use impasto_core::ImageTensor;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = ImageTensor::from_png_bytes(data) {
        assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
});
