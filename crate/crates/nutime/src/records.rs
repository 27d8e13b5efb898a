//! CSV and JSON outputs.

use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nutime_core::AttentionMap;
use serde::Serialize;

use crate::error::{Error, Result};

fn csv_line(fields: &[String]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(fields).map_err(|e| Error::Config(e.to_string()))?;
    w.into_inner().map_err(|e| Error::Config(e.to_string()))
}

/// Appends one record. A new file gets `header` first; an existing file must
/// already start with exactly that header.
pub fn append_record(path: &Path, header: &[&str], record: &[String]) -> Result<()> {
    assert_eq!(header.len(), record.len(), "record width must match the header");
    let header_line = csv_line(&header.iter().map(|h| h.to_string()).collect::<Vec<_>>())?;
    let exists = path.exists() && fs::metadata(path).map_err(|e| Error::io(path, e))?.len() > 0;
    if exists {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut first = String::new();
        BufReader::new(f).read_line(&mut first).map_err(|e| Error::io(path, e))?;
        if first.as_bytes() != header_line.as_slice() {
            return Err(Error::data(
                path,
                format!("existing header {:?} differs from {:?}", first.trim_end(), header.join(",")),
            ));
        }
    }
    let mut bytes = Vec::new();
    if !exists {
        bytes.extend(header_line);
    }
    bytes.extend(csv_line(record)?);
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Writes a whole CSV file, replacing any previous one.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut bytes = csv_line(header)?;
    for r in rows {
        bytes.extend(csv_line(r)?);
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesAttention {
    pub id: String,
    /// `layers[l][h][p]`: CLS attention of head `h` in layer `l` on patch `p`.
    pub layers: Vec<Vec<Vec<f64>>>,
}

impl SeriesAttention {
    pub fn new(id: &str, map: &AttentionMap) -> Self {
        SeriesAttention {
            id: id.to_string(),
            layers: (0..map.rows.len())
                .map(|l| (0..map.rows[l].len()).map(|h| map.patch_scores(l, h).to_vec()).collect())
                .collect(),
        }
    }
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::data(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn append_writes_header_once_and_guards_it() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        append_record(&p, &["a", "b"], &["1".into(), "x,y".into()]).unwrap();
        append_record(&p, &["a", "b"], &["2".into(), "z".into()]).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "a,b\n1,\"x,y\"\n2,z\n");
        assert!(append_record(&p, &["a", "c"], &["3".into(), "w".into()]).is_err());
    }
}
