//! `id<TAB>text` collections.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use embsteal_core::corpus::Collection;
use embsteal_core::{Kind, TextRecord};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

/// A line that could not be read as a record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Malformed {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub collection: Collection,
    pub malformed: Vec<Malformed>,
}

/// Parses TSV text. Blank lines are skipped; lines without a tab, with an
/// empty id or with blank text are reported; a repeated id is an error.
pub fn parse_tsv(text: &str, kind: Kind, source: &str) -> Result<Ingested> {
    let mut records = Vec::new();
    let mut malformed = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let Some((id, body)) = line.split_once('\t') else {
            malformed.push(Malformed {
                line: n,
                reason: "missing tab".into(),
            });
            continue;
        };
        let id = id.trim();
        if id.is_empty() {
            malformed.push(Malformed {
                line: n,
                reason: "empty id".into(),
            });
            continue;
        }
        if body.trim().is_empty() {
            malformed.push(Malformed {
                line: n,
                reason: "empty text".into(),
            });
            continue;
        }
        if let Some(first) = seen.insert(id.to_string(), n) {
            return Err(AppError::Data(format!(
                "{source}: duplicate id {id:?} on lines {first} and {n}"
            )));
        }
        records.push(TextRecord::new(id, kind, body));
    }
    let mut collection = Collection::new(records)?;
    collection.manifest.sources.push(source.to_string());
    Ok(Ingested {
        collection,
        malformed,
    })
}

pub fn ingest_tsv(path: &Path, kind: Kind) -> Result<Ingested> {
    let text = fs::read_to_string(path).map_err(AppError::io(path))?;
    parse_tsv(&text, kind, &path.display().to_string())
}

/// Writes records as TSV. Tabs and newlines inside texts become spaces.
pub fn write_tsv<'a>(path: &Path, records: impl IntoIterator<Item = &'a TextRecord>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(AppError::io(dir))?;
    }
    let mut out = String::new();
    for r in records {
        out.push_str(&r.id);
        out.push('\t');
        out.extend(r.text.chars().map(|c| if matches!(c, '\t' | '\n' | '\r') { ' ' } else { c }));
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(AppError::io(path))?;
    f.write_all(out.as_bytes()).map_err(AppError::io(path))
}
