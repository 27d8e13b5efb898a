//! Dataset directories: a `manifest.toml` naming one TSV per channel and split.

use std::fs;
use std::path::{Path, PathBuf};

use nutime_core::model::DatasetStats;
use nutime_core::RawSeries;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tsv::{filter_max_len, read_all, LabelMap, TsvTable};

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub n_channels: usize,
    pub n_classes: usize,
    /// One file per channel, relative to the manifest's directory.
    pub train: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val: Option<Vec<PathBuf>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<Vec<PathBuf>>,
    /// Dataset statistics for z-score encoding.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<DatasetStats>,
}

/// A loaded dataset; every split shares one label map.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub labels: LabelMap,
    pub train: Vec<RawSeries>,
    pub val: Vec<RawSeries>,
    pub test: Vec<RawSeries>,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::data(path, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::data(path, e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    fn splits(&self) -> [Option<&Vec<PathBuf>>; 3] {
        [Some(&self.train), self.val.as_ref(), self.test.as_ref()]
    }

    fn check(&self, path: &Path) -> Result<()> {
        if self.n_channels == 0 {
            return Err(Error::data(path, "n_channels must be >= 1"));
        }
        for files in self.splits().into_iter().flatten() {
            if files.len() != self.n_channels {
                return Err(Error::data(
                    path,
                    format!("{} files listed for a split, n_channels = {}", files.len(), self.n_channels),
                ));
            }
        }
        Ok(())
    }

    /// Reads every referenced file. Series longer than `max_len` are dropped.
    pub fn load(&self, manifest_path: &Path, max_len: Option<usize>) -> Result<Dataset> {
        self.check(manifest_path)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let mut tables: Vec<Vec<TsvTable>> = Vec::new();
        for files in self.splits() {
            let paths: Vec<PathBuf> = files.map_or(Vec::new(), |f| f.iter().map(|p| base.join(p)).collect());
            tables.push(read_all(&paths)?);
        }
        let labels = LabelMap::from_tables(tables.iter().flatten());
        if labels.len() != self.n_classes {
            return Err(Error::data(
                manifest_path,
                format!("found {} distinct labels, manifest declares n_classes = {}", labels.len(), self.n_classes),
            ));
        }
        let mut splits = tables
            .iter()
            .map(|t| Ok(filter_max_len(combine_channels(t, &labels)?, max_len)))
            .collect::<Result<Vec<_>>>()?;
        let test = splits.pop().unwrap_or_default();
        let val = splits.pop().unwrap_or_default();
        let train = splits.pop().unwrap_or_default();
        Ok(Dataset {
            manifest: self.clone(),
            labels,
            train,
            val,
            test,
        })
    }
}

/// Zips per-channel tables row by row into multichannel series. Rows must agree
/// on count and label across channels.
pub fn combine_channels(tables: &[TsvTable], labels: &LabelMap) -> Result<Vec<RawSeries>> {
    let Some(first) = tables.first() else {
        return Ok(Vec::new());
    };
    for t in &tables[1..] {
        if t.len() != first.len() {
            return Err(Error::data(
                &t.path,
                format!("{} rows, channel 0 ({}) has {}", t.len(), first.path.display(), first.len()),
            ));
        }
    }
    let name = first.path.file_stem().map_or_else(|| "series".into(), |s| s.to_string_lossy().into_owned());
    (0..first.len())
        .map(|i| {
            let row = &first.rows[i];
            let mut channels = Vec::with_capacity(tables.len());
            for t in tables {
                let r = &t.rows[i];
                if r.label != row.label {
                    return Err(Error::Parse {
                        path: t.path.clone(),
                        line: r.line,
                        msg: format!("label {} differs from channel 0 label {}", r.label, row.label),
                    });
                }
                if r.values.len() != row.values.len() {
                    return Err(Error::Parse {
                        path: t.path.clone(),
                        line: r.line,
                        msg: format!("{} values, channel 0 has {}", r.values.len(), row.values.len()),
                    });
                }
                channels.push(r.values.clone());
            }
            let class = labels.class_of(row.label).expect("label map built from these tables");
            Ok(RawSeries::from_channels(format!("{name}_{i}"), Some(class), &channels)?)
        })
        .collect()
}

/// Loads `dir/manifest.toml`.
pub fn load_dir(dir: &Path, max_len: Option<usize>) -> Result<Dataset> {
    let path = dir.join(MANIFEST_FILE);
    DatasetManifest::read(&path)?.load(&path, max_len)
}
