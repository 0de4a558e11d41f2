//! Checkpoint container: a UTF-8 manifest followed by a little-endian f32
//! payload.
//!
//! ```text
//! SPANEIT-CHECKPOINT
//! format_version=1
//! config.<key>=<value>          model configuration, one line per key
//! vocab=<token>                 non-special tokens in id order
//! cooc=<entity>\t<word>\t<count>
//! tensor=<name>\t<d0,d1,...>\t<byte offset>
//! payload_bytes=<n>
//! END
//! <n bytes of f32 values>
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::{ParamStore, Tensor};
use crate::config::{ExperimentConfig, ModelConfig, MODEL_KEYS};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::model::SpanEit;
use crate::span_graph::CooccurrenceTable;

pub const MAGIC: &str = "SPANEIT-CHECKPOINT";
pub const FORMAT_VERSION: u32 = 1;
const MAX_RANK: usize = 8;

pub fn encode_checkpoint(model: &SpanEit) -> Vec<u8> {
    let mut head = String::new();
    let _ = writeln!(head, "{MAGIC}");
    let _ = writeln!(head, "format_version={FORMAT_VERSION}");
    let echo = ExperimentConfig { model: model.config.clone(), ..ExperimentConfig::default() };
    for &key in MODEL_KEYS {
        let _ = writeln!(head, "config.{key}={}", echo.get(key).expect("model key"));
    }
    for t in model.vocab.ordinary_tokens() {
        let _ = writeln!(head, "vocab={t}");
    }
    for (e, w, c) in model.cooc.iter() {
        let _ = writeln!(head, "cooc={e}\t{w}\t{c}");
    }
    let mut payload = Vec::with_capacity(model.params.count() * 4);
    for (name, p) in model.params.iter() {
        let dims: Vec<String> = p.value.shape().iter().map(usize::to_string).collect();
        let _ = writeln!(head, "tensor={name}\t{}\t{}", dims.join(","), payload.len());
        for &v in p.value.data() {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let _ = writeln!(head, "payload_bytes={}", payload.len());
    let _ = writeln!(head, "END");
    let mut out = head.into_bytes();
    out.extend_from_slice(&payload);
    out
}

/// Everything stored in a checkpoint, before it is matched to a model.
#[derive(Clone, Debug)]
pub struct DecodedCheckpoint {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub cooc: CooccurrenceTable,
    pub params: ParamStore,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::format(msg)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<DecodedCheckpoint> {
    const END: &[u8] = b"\nEND\n";
    let end = bytes.windows(END.len()).position(|w| w == END).ok_or_else(|| bad("missing END line"))?;
    let manifest = std::str::from_utf8(&bytes[..end + 1]).map_err(|_| bad("manifest is not UTF-8"))?;
    let payload = &bytes[end + END.len()..];
    let mut lines = manifest.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad("not a checkpoint (bad magic line)"));
    }
    match lines.next().and_then(|l| l.strip_prefix("format_version=")) {
        Some(v) if v == FORMAT_VERSION.to_string() => {}
        Some(v) => return Err(bad(format!("unsupported format version {v}, expected {FORMAT_VERSION}"))),
        None => return Err(bad("missing format_version")),
    }

    let mut config_pairs: Vec<(&str, &str)> = Vec::new();
    let mut vocab = Vec::new();
    let mut cooc = CooccurrenceTable::new();
    let mut tensors: Vec<(String, Vec<usize>, usize)> = Vec::new();
    let mut payload_bytes = None;
    for line in lines {
        let (key, value) = line.split_once('=').ok_or_else(|| bad(format!("malformed manifest line `{line}`")))?;
        if payload_bytes.is_some() {
            return Err(bad("manifest continues after payload_bytes"));
        }
        if let Some(k) = key.strip_prefix("config.") {
            config_pairs.push((k, value));
            continue;
        }
        match key {
            "vocab" => vocab.push(value.to_string()),
            "cooc" => {
                let f: Vec<&str> = value.split('\t').collect();
                let [e, w, c] = f[..] else {
                    return Err(bad(format!("malformed cooc line `{line}`")));
                };
                let c = c.parse::<u64>().map_err(|_| bad(format!("bad cooc count `{c}`")))?;
                cooc.insert_raw(e.to_string(), w.to_string(), c);
            }
            "tensor" => {
                let f: Vec<&str> = value.split('\t').collect();
                let [name, dims, off] = f[..] else {
                    return Err(bad(format!("malformed tensor line `{line}`")));
                };
                let shape = dims
                    .split(',')
                    .map(|d| d.parse::<usize>().map_err(|_| bad(format!("bad dimension `{d}` for `{name}`"))))
                    .collect::<Result<Vec<_>>>()?;
                if shape.is_empty() || shape.len() > MAX_RANK {
                    return Err(bad(format!("bad rank for `{name}`")));
                }
                let off = off.parse::<usize>().map_err(|_| bad(format!("bad offset for `{name}`")))?;
                tensors.push((name.to_string(), shape, off));
            }
            "payload_bytes" => {
                payload_bytes = Some(value.parse::<usize>().map_err(|_| bad("bad payload_bytes"))?);
            }
            _ => return Err(bad(format!("unknown manifest key `{key}`"))),
        }
    }
    let payload_bytes = payload_bytes.ok_or_else(|| bad("missing payload_bytes"))?;
    if payload.len() != payload_bytes {
        return Err(bad(format!("payload has {} bytes, manifest declares {payload_bytes}", payload.len())));
    }

    if let Some((k, _)) = config_pairs.iter().find(|(k, _)| !MODEL_KEYS.contains(k)) {
        return Err(bad(format!("`config.{k}` is not a model setting")));
    }
    if let Some(k) = MODEL_KEYS.iter().find(|k| !config_pairs.iter().any(|(c, _)| c == *k)) {
        return Err(bad(format!("missing `config.{k}`")));
    }
    let mut exp = ExperimentConfig::default();
    exp.apply(config_pairs)?;
    exp.model.validate()?;

    let mut params = ParamStore::new();
    let mut cursor = 0usize;
    for (name, shape, off) in tensors {
        if off != cursor {
            return Err(bad(format!("tensor `{name}` at offset {off}, expected {cursor}")));
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| bad(format!("tensor `{name}` is too large")))?;
        let len = numel.checked_mul(4).ok_or_else(|| bad(format!("tensor `{name}` is too large")))?;
        let chunk = payload
            .get(cursor..cursor.saturating_add(len))
            .ok_or_else(|| bad(format!("tensor `{name}` runs past the payload")))?;
        let data: Vec<f64> =
            chunk.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
        params.insert(name, Tensor::new(shape, data)?).map_err(|e| bad(e.to_string()))?;
        cursor += len;
    }
    if cursor != payload_bytes {
        return Err(bad(format!("tensors cover {cursor} of {payload_bytes} payload bytes")));
    }
    Ok(DecodedCheckpoint { config: exp.model, vocab: Vocabulary::from_ordered(vocab)?, cooc, params })
}

/// Rebuild the stored model.
pub fn load_model(bytes: &[u8]) -> Result<SpanEit> {
    let d = decode_checkpoint(bytes)?;
    SpanEit::from_parts(d.config, d.vocab, d.cooc, d.params)
}

/// Load stored parameters into a model built from `config`; any tensor
/// whose shape differs is reported by name.
pub fn load_into(bytes: &[u8], config: &ModelConfig) -> Result<SpanEit> {
    let d = decode_checkpoint(bytes)?;
    SpanEit::from_parts(config.clone(), d.vocab, d.cooc, d.params)
}

pub fn save_checkpoint(model: &SpanEit, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<SpanEit> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_model(&bytes)
}
