//! Dataset manifests: a CSV file with header `path,label`, one FSTS file per
//! row. Relative paths resolve against the manifest's directory.

use crate::fsts::{read_fsts, FstsError};
use crate::series::LabeledDataset;
use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest line {line}: {msg}")]
    Malformed { line: u64, msg: String },
    #[error("manifest header must be 'path,label'")]
    BadHeader,
    #[error("path listed twice: {0}")]
    DuplicatePath(String),
    #[error("manifest has no rows")]
    Empty,
    #[error("{path}: {source}")]
    Series {
        path: PathBuf,
        #[source]
        source: FstsError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    /// As written in the manifest.
    pub path: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    /// Directory relative paths resolve against.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn parse(reader: impl Read, base_dir: impl Into<PathBuf>) -> Result<Self, ManifestError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers().map_err(|e| csv_error(e, 1))?;
        if header.len() != 2 || &header[0] != "path" || &header[1] != "label" {
            return Err(ManifestError::BadHeader);
        }
        let mut rows = Vec::new();
        let mut seen = HashSet::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_error(e, 0))?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != 2 {
                return Err(ManifestError::Malformed {
                    line,
                    msg: format!("expected 2 fields, found {}", rec.len()),
                });
            }
            let (path, label) = (rec[0].to_string(), rec[1].to_string());
            if path.is_empty() || label.is_empty() {
                return Err(ManifestError::Malformed {
                    line,
                    msg: "empty path or label".into(),
                });
            }
            if !seen.insert(path.clone()) {
                return Err(ManifestError::DuplicatePath(path));
            }
            rows.push(ManifestRow { path, label });
        }
        if rows.is_empty() {
            return Err(ManifestError::Empty);
        }
        Ok(Self {
            rows,
            base_dir: base_dir.into(),
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, ManifestError> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(file, base)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["path", "label"]).unwrap();
        for r in &self.rows {
            w.write_record([&r.path, &r.label]).unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), ManifestError> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        let p = Path::new(&row.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Distinct labels, sorted.
    pub fn labels(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.rows.iter().map(|r| r.label.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    /// Loads every series. Class indices follow `class_names` when given,
    /// otherwise the sorted distinct labels; a label outside `class_names`
    /// is an error. Each series' source id is its canonical path.
    pub fn load(&self, class_names: Option<&[String]>) -> Result<LabeledDataset, ManifestError> {
        let names = class_names.map_or_else(|| self.labels(), <[String]>::to_vec);
        let mut items = Vec::with_capacity(self.rows.len());
        for (i, row) in self.rows.iter().enumerate() {
            let y = names.iter().position(|n| *n == row.label).ok_or_else(|| ManifestError::Malformed {
                line: i as u64 + 2,
                msg: format!("label '{}' not among the expected classes", row.label),
            })?;
            let path = self.resolve(row);
            let s = read_fsts(&path).map_err(|source| ManifestError::Series { path: path.clone(), source })?;
            let id = fs::canonicalize(&path).unwrap_or(path);
            items.push((s.with_source_id(id.display().to_string()), y));
        }
        Ok(LabeledDataset::new(items, names).expect("indices come from names"))
    }
}

fn csv_error(e: csv::Error, fallback_line: u64) -> ManifestError {
    let line = e.position().map_or(fallback_line, |p| p.line());
    ManifestError::Malformed {
        line,
        msg: e.to_string(),
    }
}
