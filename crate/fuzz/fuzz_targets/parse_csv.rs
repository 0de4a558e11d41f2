#![no_main]

use libfuzzer_sys::fuzz_target;
use spaneit::corpus::parse_csv;

fuzz_target!(|data: &[u8]| {
    if let Ok(corpus) = parse_csv(data) {
        for ex in &corpus.examples {
            assert!(!ex.tokens.is_empty());
        }
    }
});
