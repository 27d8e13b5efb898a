//! UCR-style TSV: one series per line, label first, tab separated.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nutime_core::RawSeries;
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TsvRow {
    /// 1-based line number in the source file.
    pub line: usize,
    pub label: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsvTable {
    pub path: PathBuf,
    pub rows: Vec<TsvRow>,
}

impl TsvTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Common row length.
    pub fn series_len(&self) -> usize {
        self.rows.first().map_or(0, |r| r.values.len())
    }
}

fn parse_real(field: &str) -> Option<f64> {
    field.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Parses TSV text. Every row must carry the same number of values.
pub fn parse_tsv(text: &str, path: &Path) -> Result<TsvTable> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let body = text.strip_suffix('\n').unwrap_or(text);
    if body.is_empty() {
        return Err(Error::data(path, "empty file"));
    }
    let mut rows = Vec::new();
    for (i, line) in body.split('\n').enumerate() {
        let n = i + 1;
        if line.is_empty() {
            return Err(err(n, "empty line".into()));
        }
        let mut fields = line.split('\t');
        let head = fields.next().unwrap_or_default();
        let label = parse_real(head).ok_or_else(|| err(n, format!("label {head:?} is not a finite real")))?;
        let values = fields
            .enumerate()
            .map(|(j, f)| parse_real(f).ok_or_else(|| err(n, format!("column {}: {f:?} is not a finite real", j + 2))))
            .collect::<Result<Vec<_>>>()?;
        if values.is_empty() {
            return Err(err(n, "no values after the label".into()));
        }
        if let Some(first) = rows.first().map(|r: &TsvRow| r.values.len()) {
            if values.len() != first {
                return Err(err(n, format!("{} values, line 1 has {first}", values.len())));
            }
        }
        rows.push(TsvRow { line: n, label, values });
    }
    Ok(TsvTable {
        path: path.to_path_buf(),
        rows,
    })
}

pub fn read_tsv(path: &Path) -> Result<TsvTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tsv(&text, path)
}

/// Sorted distinct original labels; class `i` is the `i`-th smallest.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    originals: Vec<f64>,
}

impl LabelMap {
    pub fn from_tables<'a>(tables: impl IntoIterator<Item = &'a TsvTable>) -> Self {
        let mut originals: Vec<f64> = tables.into_iter().flat_map(|t| t.rows.iter().map(|r| r.label)).collect();
        originals.sort_by(f64::total_cmp);
        originals.dedup();
        LabelMap { originals }
    }

    pub fn class_of(&self, label: f64) -> Option<usize> {
        self.originals.binary_search_by(|v| v.total_cmp(&label)).ok()
    }

    pub fn original(&self, class: usize) -> f64 {
        self.originals[class]
    }

    pub fn len(&self) -> usize {
        self.originals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.originals.is_empty()
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "series".into(), |s| s.to_string_lossy().into_owned())
}

/// Univariate series named `{file stem}_{row}` with labels from `map`.
pub fn to_series(table: &TsvTable, map: &LabelMap) -> Result<Vec<RawSeries>> {
    let name = stem(&table.path);
    table
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let class = map.class_of(r.label).ok_or_else(|| Error::Parse {
                path: table.path.clone(),
                line: r.line,
                msg: format!("label {} missing from the label map", r.label),
            })?;
            Ok(RawSeries::univariate(format!("{name}_{i}"), Some(class), r.values.clone())?)
        })
        .collect()
}

/// Loads one file with labels remapped to `0..K` in sorted order.
pub fn load_ucr_tsv(path: &Path) -> Result<Vec<RawSeries>> {
    let table = read_tsv(path)?;
    to_series(&table, &LabelMap::from_tables([&table]))
}

/// Reads several files in parallel.
pub fn read_all(paths: &[PathBuf]) -> Result<Vec<TsvTable>> {
    paths.par_iter().map(|p| read_tsv(p)).collect()
}

/// Loads several splits under one shared label map so class indices agree.
pub fn load_ucr_splits(paths: &[PathBuf]) -> Result<(Vec<Vec<RawSeries>>, LabelMap)> {
    let tables = read_all(paths)?;
    let map = LabelMap::from_tables(&tables);
    let splits = tables.iter().map(|t| to_series(t, &map)).collect::<Result<_>>()?;
    Ok((splits, map))
}

/// Drops series longer than `max_len`.
pub fn filter_max_len(series: Vec<RawSeries>, max_len: Option<usize>) -> Vec<RawSeries> {
    match max_len {
        Some(m) => series.into_iter().filter(|s| s.len() <= m).collect(),
        None => series,
    }
}

/// Formats univariate labelled series as TSV text. Reals use the shortest
/// representation that parses back to the same value.
pub fn format_tsv(series: &[RawSeries]) -> Result<String> {
    let mut out = String::new();
    for s in series {
        if s.channels() != 1 {
            return Err(nutime_core::Error::Invalid(format!("{}: TSV rows are univariate", s.id)).into());
        }
        let label = s
            .label
            .ok_or_else(|| nutime_core::Error::Invalid(format!("{}: TSV rows need a label", s.id)))?;
        write!(out, "{label}").unwrap();
        for v in s.values() {
            write!(out, "\t{v:?}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_ucr_tsv(path: &Path, series: &[RawSeries]) -> Result<()> {
    fs::write(path, format_tsv(series)?).map_err(|e| Error::io(path, e))
}
