use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{tokenize, AnnotatedExample, Sentiment};
use crate::error::{Error, Result};

/// Required header columns, in file order.
pub const CSV_COLUMNS: [&str; 5] = ["cleaned_tweets", "Entity", "Entity_Type", "Coref_ID", "label"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkippedRow {
    pub line: u64,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct LoadedCorpus {
    pub examples: Vec<AnnotatedExample>,
    pub skipped: Vec<SkippedRow>,
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<LoadedCorpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(file)
}

/// Parse the five-column annotated format. Rows with an empty `Entity` or
/// empty text are skipped and reported; any other malformed row is an error
/// carrying its line number.
pub fn parse_csv<R: Read>(reader: R) -> Result<LoadedCorpus> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::format(format!("cannot read CSV header: {e}")))?.clone();
    let mut idx = [0usize; 5];
    for (slot, col) in idx.iter_mut().zip(CSV_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim().trim_start_matches('\u{feff}') == col)
            .ok_or_else(|| Error::format(format!("missing header column `{col}`")))?;
    }

    let mut out = LoadedCorpus::default();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::Row { line, message: e.to_string() }
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |k: usize| record.get(idx[k]).unwrap_or("");

        let entity = field(1).trim();
        if entity.is_empty() || tokenize(entity).is_empty() {
            out.skipped.push(SkippedRow { line, reason: "missing Entity".into() });
            continue;
        }
        let tokens = tokenize(field(0));
        if tokens.is_empty() {
            out.skipped.push(SkippedRow { line, reason: "empty text".into() });
            continue;
        }
        let coref_id = field(3)
            .trim()
            .parse::<u64>()
            .map_err(|_| Error::Row { line, message: format!("bad Coref_ID `{}`", field(3)) })?;
        let label = field(4)
            .parse::<Sentiment>()
            .map_err(|_| Error::Row { line, message: format!("unmappable label `{}`", field(4)) })?;
        out.examples.push(AnnotatedExample {
            tokens,
            entity_surface: entity.to_string(),
            entity_type: field(2).trim().to_string(),
            coref_id,
            label,
        });
    }
    Ok(out)
}

pub fn write_csv<W: Write>(writer: W, examples: &[AnnotatedExample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::format(format!("CSV write failed: {e}"));
    w.write_record(CSV_COLUMNS).map_err(err)?;
    for ex in examples {
        w.write_record([
            ex.tokens.join(" ").as_str(),
            &ex.entity_surface,
            &ex.entity_type,
            &ex.coref_id.to_string(),
            ex.label.name(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::format(format!("CSV flush failed: {e}")))
}

pub fn save_csv(path: impl AsRef<Path>, examples: &[AnnotatedExample]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(file, examples)
}
