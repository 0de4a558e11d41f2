#![no_main]

use libfuzzer_sys::fuzz_target;
use spaneit::config::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    // A parsed config must print back to text that parses to the same value.
    if let Ok(cfg) = ExperimentConfig::parse(text) {
        let printed: String = cfg.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        assert_eq!(ExperimentConfig::parse(&printed).expect("reparse"), cfg);
    }
});
