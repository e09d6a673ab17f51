//! Line-delimited JSON with a schema header line.
//!
//! The first line of every file is `{"format_version":1,"schema":"<name>", ...}`;
//! each following non-empty line is one record.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{LabError, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub schema: String,
    /// Schema-specific extras (task kind, class list, seed, ...).
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Header {
    pub fn new(schema: &str) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            schema: schema.to_string(),
            extra: Map::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Serialize) -> Self {
        self.extra
            .insert(key.to_string(), serde_json::to_value(value).expect("header value serializes"));
        self
    }
}

pub fn to_jsonl<R: Serialize>(header: &Header, records: &[R]) -> Result<String> {
    let mut out = serde_json::to_string(header)?;
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl<R: Serialize>(path: &Path, header: &Header, records: &[R]) -> Result<()> {
    let file = File::create(path).map_err(|e| LabError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(to_jsonl(header, records)?.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| LabError::io(path, e))
}

/// Reads a file written by [`write_jsonl`], checking schema and version.
pub fn read_jsonl<R: DeserializeOwned>(path: &Path, schema: &str) -> Result<(Header, Vec<R>)> {
    let file = File::open(path).map_err(|e| LabError::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or(LabError::Empty("jsonl file has no header line"))?
        .map_err(|e| LabError::io(path, e))?;
    let header: Header = serde_json::from_str(&first)?;
    if header.format_version != FORMAT_VERSION {
        return Err(LabError::Config(format!(
            "{}: unsupported format_version {}",
            path.display(),
            header.format_version
        )));
    }
    if header.schema != schema {
        return Err(LabError::Config(format!(
            "{}: expected schema `{schema}`, found `{}`",
            path.display(),
            header.schema
        )));
    }
    let mut records = Vec::new();
    for line in lines {
        let line = line.map_err(|e| LabError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok((header, records))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| LabError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    Ok(serde_json::from_str(&s)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trip_and_schema_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        let h = Header::new("numbers").with("kind", "phase");
        write_jsonl(&p, &h, &[1u32, 2, 3]).unwrap();
        let (h2, xs): (Header, Vec<u32>) = read_jsonl(&p, "numbers").unwrap();
        assert_eq!(h2, h);
        assert_eq!(xs, vec![1, 2, 3]);
        assert!(read_jsonl::<u32>(&p, "letters").is_err());
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with(r#"{"format_version":1,"schema":"numbers","kind":"phase"}"#));
    }
}
