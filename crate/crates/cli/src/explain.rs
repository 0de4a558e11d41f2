use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spaneit::autodiff::{Tape, Tensor};
use spaneit::trainer::load_checkpoint;
use spaneit::Error;

use crate::args::ExplainArgs;
use crate::commands::{load_data, CliError, CliResult};

pub const ENTITY_TOKEN_FILE: &str = "entity_token_attention.csv";
pub const ENTITY_SPAN_FILE: &str = "entity_span_attention.csv";
pub const MEMORY_FILE: &str = "memory_vector.csv";
pub const BANK_FILE: &str = "memory_bank.csv";
pub const GRAPH_FILE: &str = "graph.txt";

fn csv_matrix(header: &[String], rows: &[Vec<f64>]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::Runtime(format!("csv: {e}"));
    w.write_record(header).map_err(fail)?;
    for r in rows {
        w.write_record(r.iter().map(f64::to_string)).map_err(fail)?;
    }
    w.into_inner().map_err(|e| CliError::Runtime(format!("csv: {e}")))
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> CliResult {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| CliError::from(Error::io(path, e)))
}

/// Row `h` averages head `h`'s last-layer attention over the entity's
/// query positions in the framed input.
fn entity_token_rows(last_layer: &[Tensor], entity_rows: std::ops::Range<usize>) -> Vec<Vec<f64>> {
    last_layer
        .iter()
        .map(|a| {
            let cols = a.shape()[1];
            let mut row = vec![0.0; cols];
            for q in entity_rows.clone() {
                for (r, v) in row.iter_mut().zip(a.row(q)) {
                    *r += v;
                }
            }
            let n = entity_rows.len() as f64;
            row.iter().map(|v| v / n).collect()
        })
        .collect()
}

/// Replay examples `0..=index` in eval mode so the memory bank holds what
/// the model has seen before the explained example, then write its
/// attention and memory matrices.
pub fn cmd_explain(args: &ExplainArgs) -> CliResult<String> {
    let model = load_checkpoint(&args.ckpt)?;
    let data = load_data(&args.data)?;
    if args.index >= data.examples.len() {
        return Err(CliError::Data(format!("index {} out of range for {} examples", args.index, data.examples.len())));
    }
    let prepared = model.prepare_all(&data.examples[..=args.index])?;
    let mut bank = model.new_memory_bank();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut last = None;
    for (step, ex) in prepared.iter().enumerate() {
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, ex, &mut bank, step as u64, false, &mut rng)?;
        last = Some(out);
    }
    let out = last.expect("at least one example");
    let ex = &prepared[args.index];

    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let last_layer = out.encoder_attn.last().map(Vec::as_slice).unwrap_or_default();
    let token_rows = entity_token_rows(last_layer, ex.entity_frame.clone());
    write(&args.out, ENTITY_TOKEN_FILE, &csv_matrix(&ex.framed_tokens, &token_rows)?)?;

    let span_header: Vec<String> = ex.sentiment_spans.iter().map(|s| s.label()).collect();
    let span_rows: Vec<Vec<f64>> = out.entity_span_attn.iter().map(|a| a.data().to_vec()).collect();
    write(&args.out, ENTITY_SPAN_FILE, &csv_matrix(&span_header, &span_rows)?)?;

    let d = model.config.hidden_dim;
    let memory = out.memory.map(|m| m.data().to_vec()).unwrap_or_else(|| vec![0.0; d]);
    let dims: Vec<String> = (0..d).map(|i| i.to_string()).collect();
    write(&args.out, MEMORY_FILE, &csv_matrix(&dims, &[memory])?)?;

    write(&args.out, BANK_FILE, bank.dump().as_bytes())?;
    write(&args.out, GRAPH_FILE, ex.graph.dump().as_bytes())?;
    Ok(format!(
        "example {}: {} heads x {} tokens, {} spans; wrote {}\n",
        args.index,
        token_rows.len(),
        ex.framed_tokens.len(),
        span_header.len(),
        args.out.display()
    ))
}
