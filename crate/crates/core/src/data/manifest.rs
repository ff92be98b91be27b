//! Manifest CSV: `path,label,aus,subject,sequence,crop`.
//!
//! `aus` is a `;`-separated list of positive action-unit ids, `crop` is
//! `x0;y0;x1;y1` (half-open, source pixels) or empty. Relative paths resolve
//! against the manifest's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{DataError, GrayImage};

pub const MANIFEST_HEADER: [&str; 6] = ["path", "label", "aus", "subject", "sequence", "crop"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Path exactly as written in the CSV.
    pub path: String,
    pub label: String,
    pub aus: BTreeSet<u32>,
    pub subject: String,
    pub sequence: String,
    pub crop: Option<[usize; 4]>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    base_dir: PathBuf,
    entries: Vec<ManifestEntry>,
}

fn parse_aus(field: &str) -> Result<BTreeSet<u32>, String> {
    field
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| match s.parse::<u32>() {
            Ok(0) | Err(_) => Err(format!("action unit '{s}' is not a positive integer")),
            Ok(v) => Ok(v),
        })
        .collect()
}

fn parse_crop(field: &str) -> Result<Option<[usize; 4]>, String> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(None);
    }
    let parts: Vec<usize> = field
        .split(';')
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| format!("crop '{field}' must be four non-negative integers"))?;
    match parts[..] {
        [x0, y0, x1, y1] if x0 < x1 && y0 < y1 => Ok(Some([x0, y0, x1, y1])),
        _ => Err(format!(
            "crop '{field}' must be x0;y0;x1;y1 with x0<x1, y0<y1"
        )),
    }
}

impl DatasetManifest {
    pub fn new(base_dir: impl Into<PathBuf>, entries: Vec<ManifestEntry>) -> Self {
        Self {
            base_dir: base_dir.into(),
            entries,
        }
    }

    /// Parses and validates a manifest; every image must exist, decode, and
    /// contain its crop box.
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let manifest = Self::parse(path)?;
        for (row, entry) in manifest.entries.iter().enumerate() {
            let resolved = manifest.resolve(entry);
            if !resolved.is_file() {
                return Err(DataError::MissingImage {
                    row,
                    path: resolved,
                });
            }
            manifest.load_image(row).map_err(|e| DataError::Row {
                row,
                message: e.to_string(),
            })?;
        }
        Ok(manifest)
    }

    /// Parses the CSV without touching the referenced images.
    pub fn parse(path: &Path) -> Result<Self, DataError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| DataError::Csv {
                line: 0,
                message: format!("{}: {e}", path.display()),
            })?;
        let header = reader.headers().map_err(|e| DataError::Csv {
            line: 1,
            message: e.to_string(),
        })?;
        if header.iter().map(str::trim).ne(MANIFEST_HEADER) {
            return Err(DataError::Csv {
                line: 1,
                message: format!("expected header '{}'", MANIFEST_HEADER.join(",")),
            });
        }
        let mut entries = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| DataError::Csv {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            let bad = |message: String| DataError::Csv { line, message };
            if rec.len() != MANIFEST_HEADER.len() {
                return Err(bad(format!("expected 6 fields, found {}", rec.len())));
            }
            let path = rec[0].trim().to_string();
            if path.is_empty() {
                return Err(bad("empty image path".into()));
            }
            entries.push(ManifestEntry {
                path,
                label: rec[1].trim().to_string(),
                aus: parse_aus(&rec[2]).map_err(bad)?,
                subject: rec[3].trim().to_string(),
                sequence: rec[4].trim().to_string(),
                crop: parse_crop(&rec[5]).map_err(bad)?,
            });
        }
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { base_dir, entries })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Decodes row `row` with its crop box applied.
    pub fn load_image(&self, row: usize) -> Result<GrayImage, DataError> {
        let entry = &self.entries[row];
        let img = GrayImage::read(&self.resolve(entry))?;
        match entry.crop {
            Some([x0, y0, x1, y1]) => img.crop(x0, y0, x1, y1),
            None => Ok(img),
        }
    }

    pub fn load_images(&self) -> Result<Vec<GrayImage>, DataError> {
        (0..self.len())
            .map(|row| {
                self.load_image(row).map_err(|e| DataError::Row {
                    row,
                    message: e.to_string(),
                })
            })
            .collect()
    }

    /// Distinct expression labels in sorted order; a label's class index is
    /// its position here.
    pub fn labels(&self) -> Vec<String> {
        self.entries
            .iter()
            .map(|e| e.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn au_ids(&self) -> Vec<u32> {
        self.entries
            .iter()
            .flat_map(|e| e.aus.iter().copied())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Rows with paths made absolute, so the manifest can be written anywhere.
    pub fn with_absolute_paths(&self) -> Self {
        let base = std::path::absolute(&self.base_dir).unwrap_or_else(|_| self.base_dir.clone());
        let entries = self
            .entries
            .iter()
            .map(|e| {
                let p = Path::new(&e.path);
                let abs = if p.is_absolute() {
                    p.to_path_buf()
                } else {
                    base.join(p)
                };
                ManifestEntry {
                    path: abs.to_string_lossy().into_owned(),
                    ..e.clone()
                }
            })
            .collect();
        Self {
            base_dir: base,
            entries,
        }
    }

    pub fn to_csv_string(&self) -> String {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(MANIFEST_HEADER).expect("in-memory write");
        for e in &self.entries {
            let aus = e
                .aus
                .iter()
                .map(u32::to_string)
                .collect::<Vec<_>>()
                .join(";");
            let crop = e
                .crop
                .map(|c| c.map(|v| v.to_string()).join(";"))
                .unwrap_or_default();
            w.write_record([
                e.path.as_str(),
                e.label.as_str(),
                aus.as_str(),
                e.subject.as_str(),
                e.sequence.as_str(),
                crop.as_str(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8 fields")
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| DataError::io(path, e))
    }

    /// SHA-256 of the canonical CSV serialisation, hex encoded.
    pub fn content_hash(&self) -> String {
        hex(&Sha256::digest(self.to_csv_string().as_bytes()))
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            base_dir: self.base_dir.clone(),
            entries: rows.iter().map(|&r| self.entries[r].clone()).collect(),
        }
    }

    /// Reproducible train/test split that never separates rows sharing a
    /// `sequence` id. Whole sequences are drawn in seeded order until the test
    /// set would exceed `test_count`.
    pub fn split(&self, test_count: usize, seed: u64) -> Result<(Self, Self), DataError> {
        if test_count >= self.len() {
            return Err(DataError::Split(format!(
                "test_count {test_count} must be smaller than the dataset size {}",
                self.len()
            )));
        }
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (row, e) in self.entries.iter().enumerate() {
            groups.entry(e.sequence.as_str()).or_default().push(row);
        }
        let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
        groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut test = Vec::new();
        let mut train = Vec::new();
        for g in groups {
            if test.len() + g.len() <= test_count {
                test.extend(g);
            } else {
                train.extend(g);
            }
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.subset(&train), self.subset(&test)))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
