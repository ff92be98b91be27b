//! Per-image maximum activations of every feature map at one network site.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{eval_transform, hex, DataError, DatasetManifest};
use crate::deconv::Site;
use crate::model::{network_hash, ModelError, Network};
use crate::tensor::Tensor;

pub const DB_HEADER: &str = "image_id,map,value,row,col";
const PROVENANCE_TAG: &str = "# auprobe-activations";

#[derive(Debug, Error)]
pub enum HarvestError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("image {id}: {source}")]
    Image {
        id: usize,
        #[source]
        source: Box<HarvestError>,
    },
    #[error("top-n over an empty image subset")]
    EmptySubset,
    #[error("image {0} is not in the activation database")]
    UnknownImage(usize),
    #[error("map {map} outside 0..{maps}")]
    UnknownMap { map: usize, maps: usize },
    #[error("action unit {0} does not occur anywhere in the dataset")]
    AuAbsent(u32),
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("activation database provenance mismatch: {0}")]
    Provenance(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActivationRecord {
    pub image_id: usize,
    pub map: usize,
    /// Spatial maximum of the map for this image.
    pub value: f64,
    pub row: usize,
    pub col: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub checkpoint_hash: String,
    pub manifest_hash: String,
    pub site: Site,
    /// Name of the split the images came from (`train`, `test`, `all`, ...).
    pub split: String,
}

impl Provenance {
    fn to_line(&self, maps: usize) -> String {
        format!(
            "{PROVENANCE_TAG} checkpoint={} manifest={} stage={} pooled={} split={} maps={maps}",
            self.checkpoint_hash, self.manifest_hash, self.site.stage, self.site.pooled, self.split
        )
    }

    fn parse_line(line: &str) -> Option<(Self, usize)> {
        let rest = line.strip_prefix(PROVENANCE_TAG)?;
        let fields: BTreeMap<&str, &str> = rest
            .split_whitespace()
            .filter_map(|kv| kv.split_once('='))
            .collect();
        Some((
            Self {
                checkpoint_hash: fields.get("checkpoint")?.to_string(),
                manifest_hash: fields.get("manifest")?.to_string(),
                site: Site {
                    stage: fields.get("stage")?.parse().ok()?,
                    pooled: fields.get("pooled")?.parse().ok()?,
                },
                split: fields.get("split")?.to_string(),
            },
            fields.get("maps")?.parse().ok()?,
        ))
    }
}

/// All `(image, map)` records of one harvest, image-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationDb {
    provenance: Provenance,
    num_maps: usize,
    image_ids: Vec<usize>,
    positions: BTreeMap<usize, usize>,
    records: Vec<ActivationRecord>,
}

/// Spatial argmax of channel `map` of a `[C,H,W]` tensor; ties go to the
/// smallest row-major index.
pub fn map_max(features: &Tensor, map: usize) -> (f64, usize, usize) {
    let [_, h, w] = [
        features.shape()[0],
        features.shape()[1],
        features.shape()[2],
    ];
    let plane = &features.data()[map * h * w..(map + 1) * h * w];
    let mut best = 0;
    for (i, &v) in plane.iter().enumerate() {
        if v > plane[best] {
            best = i;
        }
    }
    (plane[best] as f64, best / w, best % w)
}

/// Hash identifying a network: the checkpoint hash for config-built networks,
/// otherwise a hash over the raw parameters.
pub fn net_identity(net: &Network) -> String {
    network_hash(net).unwrap_or_else(|_| {
        let mut h = Sha256::new();
        for (name, t) in net.parameters() {
            h.update(name.as_bytes());
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex(&h.finalize())
    })
}

/// Runs every manifest image (deterministic transform) through `net` and
/// records each map's maximum at `site`. Image ids are manifest row indices.
pub fn harvest(
    net: &Network,
    manifest: &DatasetManifest,
    site: Site,
    split: &str,
) -> Result<ActivationDb, HarvestError> {
    let size = net.input_shape()[1];
    let [maps, _, _] = net
        .activation_shape(site.stage, site.pooled)
        .ok_or_else(|| ModelError::Config(format!("no stage {} in network", site.stage)))?;
    let per_image = (0..manifest.len())
        .into_par_iter()
        .map(|id| {
            let wrap = |e: HarvestError| HarvestError::Image {
                id,
                source: Box::new(e),
            };
            let img = manifest.load_image(id).map_err(|e| wrap(e.into()))?;
            let x = eval_transform(&img, size).map_err(|e| wrap(e.into()))?;
            let f = net
                .features(&x, site.stage, site.pooled)
                .map_err(|e| wrap(e.into()))?;
            Ok((0..maps)
                .map(|map| {
                    let (value, row, col) = map_max(&f, map);
                    ActivationRecord {
                        image_id: id,
                        map,
                        value,
                        row,
                        col,
                    }
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>, HarvestError>>()?;
    let provenance = Provenance {
        checkpoint_hash: net_identity(net),
        manifest_hash: manifest.content_hash(),
        site,
        split: split.to_string(),
    };
    Ok(ActivationDb::from_records(
        provenance,
        maps,
        per_image.into_iter().flatten().collect(),
    ))
}

impl ActivationDb {
    /// Builds a database from image-major records (`maps` per image).
    pub fn from_records(
        provenance: Provenance,
        num_maps: usize,
        records: Vec<ActivationRecord>,
    ) -> Self {
        let image_ids: Vec<usize> = records
            .iter()
            .step_by(num_maps.max(1))
            .map(|r| r.image_id)
            .collect();
        let positions = image_ids
            .iter()
            .enumerate()
            .map(|(p, &id)| (id, p))
            .collect();
        Self {
            provenance,
            num_maps,
            image_ids,
            positions,
            records,
        }
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn checkpoint_hash(&self) -> &str {
        &self.provenance.checkpoint_hash
    }

    pub fn manifest_hash(&self) -> &str {
        &self.provenance.manifest_hash
    }

    pub fn num_maps(&self) -> usize {
        self.num_maps
    }

    pub fn image_ids(&self) -> &[usize] {
        &self.image_ids
    }

    pub fn records(&self) -> &[ActivationRecord] {
        &self.records
    }

    pub fn contains(&self, image_id: usize) -> bool {
        self.positions.contains_key(&image_id)
    }

    pub fn get(&self, image_id: usize, map: usize) -> Result<&ActivationRecord, HarvestError> {
        if map >= self.num_maps {
            return Err(HarvestError::UnknownMap {
                map,
                maps: self.num_maps,
            });
        }
        let pos = self
            .positions
            .get(&image_id)
            .ok_or(HarvestError::UnknownImage(image_id))?;
        Ok(&self.records[pos * self.num_maps + map])
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.provenance.to_line(self.num_maps);
        out.push('\n');
        out.push_str(DB_HEADER);
        out.push('\n');
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.image_id, r.map, r.value, r.row, r.col
            )
            .expect("string write");
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), HarvestError> {
        std::fs::write(path, self.to_csv()).map_err(|source| HarvestError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, HarvestError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarvestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let bad = |line: usize, message: String| HarvestError::Format {
            path: path.to_path_buf(),
            message: format!("line {line}: {message}"),
        };
        let mut lines = text.lines();
        let (provenance, maps) = lines
            .next()
            .and_then(Provenance::parse_line)
            .ok_or_else(|| bad(1, "missing provenance line".into()))?;
        if lines.next() != Some(DB_HEADER) {
            return Err(bad(2, format!("expected header '{DB_HEADER}'")));
        }
        let mut records: Vec<ActivationRecord> = Vec::new();
        for (i, line) in lines.enumerate() {
            let lineno = i + 3;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(lineno, format!("expected 5 fields, found {}", f.len())));
            }
            let num = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| bad(lineno, format!("bad integer '{s}'")))
            };
            let rec = ActivationRecord {
                image_id: num(f[0])?,
                map: num(f[1])?,
                value: f[2]
                    .parse()
                    .map_err(|_| bad(lineno, format!("bad value '{}'", f[2])))?,
                row: num(f[3])?,
                col: num(f[4])?,
            };
            let k = records.len();
            if rec.map != k % maps || (k % maps != 0 && rec.image_id != records[k - 1].image_id) {
                return Err(bad(
                    lineno,
                    "records must list every map of an image in order".into(),
                ));
            }
            records.push(rec);
        }
        if maps == 0 || records.len() % maps != 0 {
            return Err(bad(
                0,
                format!(
                    "record count {} is not a multiple of {maps} maps",
                    records.len()
                ),
            ));
        }
        let ids: BTreeSet<usize> = records.iter().map(|r| r.image_id).collect();
        if ids.len() * maps != records.len() {
            return Err(bad(0, "duplicate image ids".into()));
        }
        Ok(Self::from_records(provenance, maps, records))
    }

    /// Fails unless the stored provenance matches the given inputs.
    pub fn verify(&self, checkpoint_hash: &str, manifest_hash: &str) -> Result<(), HarvestError> {
        if self.provenance.checkpoint_hash != checkpoint_hash {
            return Err(HarvestError::Provenance(format!(
                "built from checkpoint {}, given {checkpoint_hash}",
                self.provenance.checkpoint_hash
            )));
        }
        if self.provenance.manifest_hash != manifest_hash {
            return Err(HarvestError::Provenance(format!(
                "built from manifest {}, given {manifest_hash}",
                self.provenance.manifest_hash
            )));
        }
        Ok(())
    }
}

/// The `n` strongest records of `map` over `subset`, descending by value with
/// ties going to the smaller image id. Shorter when `subset` has fewer images.
pub fn top_n(
    db: &ActivationDb,
    map: usize,
    subset: &[usize],
    n: usize,
) -> Result<Vec<ActivationRecord>, HarvestError> {
    if subset.is_empty() {
        return Err(HarvestError::EmptySubset);
    }
    let ids: BTreeSet<usize> = subset.iter().copied().collect();
    let mut recs = ids
        .into_iter()
        .map(|id| db.get(id, map).copied())
        .collect::<Result<Vec<_>, _>>()?;
    recs.sort_by(|a, b| {
        b.value
            .total_cmp(&a.value)
            .then(a.image_id.cmp(&b.image_id))
    });
    recs.truncate(n);
    Ok(recs)
}

/// Row indices of images showing `au_id` and of those not showing it.
pub fn partition_by_au(
    manifest: &DatasetManifest,
    au_id: u32,
) -> Result<(Vec<usize>, Vec<usize>), HarvestError> {
    let (present, absent): (Vec<usize>, Vec<usize>) =
        (0..manifest.len()).partition(|&i| manifest.entries()[i].aus.contains(&au_id));
    if present.is_empty() {
        return Err(HarvestError::AuAbsent(au_id));
    }
    Ok((present, absent))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prov() -> Provenance {
        Provenance {
            checkpoint_hash: "abc".into(),
            manifest_hash: "def".into(),
            site: Site {
                stage: 3,
                pooled: false,
            },
            split: "train".into(),
        }
    }

    fn db(values: &[(usize, f64)]) -> ActivationDb {
        let records = values
            .iter()
            .map(|&(image_id, value)| ActivationRecord {
                image_id,
                map: 0,
                value,
                row: 0,
                col: 0,
            })
            .collect();
        ActivationDb::from_records(prov(), 1, records)
    }

    #[test]
    fn top_n_orders_and_truncates() {
        let d = db(&[(0, 5.0), (1, 3.0), (2, 9.0)]);
        let v: Vec<f64> = top_n(&d, 0, &[0, 1, 2], 2)
            .unwrap()
            .iter()
            .map(|r| r.value)
            .collect();
        assert_eq!(v, vec![9.0, 5.0]);
        assert_eq!(top_n(&d, 0, &[0, 1, 2], 10).unwrap().len(), 3);
        assert_eq!(top_n(&d, 0, &[1, 1, 1], 10).unwrap().len(), 1);
        assert!(matches!(
            top_n(&d, 0, &[], 3),
            Err(HarvestError::EmptySubset)
        ));
        assert!(matches!(
            top_n(&d, 0, &[4], 3),
            Err(HarvestError::UnknownImage(4))
        ));
        assert!(matches!(
            top_n(&d, 1, &[0], 3),
            Err(HarvestError::UnknownMap { .. })
        ));
    }

    #[test]
    fn ties_prefer_smaller_image_id() {
        let d = db(&[(2, 4.0), (7, 4.0)]);
        let ids: Vec<usize> = top_n(&d, 0, &[7, 2], 2)
            .unwrap()
            .iter()
            .map(|r| r.image_id)
            .collect();
        assert_eq!(ids, vec![2, 7]);
    }

    #[test]
    fn map_max_ties_to_first() {
        let t =
            Tensor::from_values(&[2, 2, 2], vec![0.0, 1.0, 1.0, 0.5, 3.0, 3.0, 3.0, 3.0]).unwrap();
        assert_eq!(map_max(&t, 0), (1.0, 0, 1));
        assert_eq!(map_max(&t, 1), (3.0, 0, 0));
    }

    #[test]
    fn csv_roundtrip_and_verify() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("db.csv");
        let d = db(&[(0, 0.1 + 0.2), (3, 1e-300), (5, 0.0)]);
        d.write(&path).unwrap();
        let back = ActivationDb::load(&path).unwrap();
        assert_eq!(back, d);
        back.verify("abc", "def").unwrap();
        assert!(back.verify("abc", "xyz").is_err());
        assert!(back.verify("zzz", "def").is_err());
    }

    #[test]
    fn load_rejects_damage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("db.csv");
        let text = db(&[(0, 1.0)]).to_csv();
        std::fs::write(&path, text.replacen("# auprobe", "#", 1)).unwrap();
        assert!(ActivationDb::load(&path).is_err());
        std::fs::write(&path, format!("{text}1,0,x,0,0\n")).unwrap();
        let err = ActivationDb::load(&path).unwrap_err().to_string();
        assert!(err.contains("line 4"), "{err}");
    }
}
