#![no_main]

use libfuzzer_sys::fuzz_target;
use spaneit::span_extract::PolarityLexicon;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = PolarityLexicon::parse(text);
    }
});
