use std::fmt::Write as _;

use sha2::{Digest, Sha256};
use spaneit::config::ExperimentConfig;

/// Content hash in git's object style: SHA-256 of `blob <len>\0<bytes>`.
pub fn blob_sha256(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

/// Command, input identity and the full resolved configuration.
pub fn run_manifest(command: &str, source: &str, input: &[u8], exp: &ExperimentConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "command={command}");
    let _ = writeln!(out, "version={}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(out, "input={source}");
    let _ = writeln!(out, "input_bytes={}", input.len());
    let _ = writeln!(out, "input_sha256={}", blob_sha256(input));
    for (k, v) in exp.entries() {
        let _ = writeln!(out, "config.{k}={v}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_blob_hash() {
        // printf 'blob 0\0' | sha256sum
        assert_eq!(blob_sha256(b""), "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813");
    }
}
