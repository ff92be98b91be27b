//! Feature-map ↔ action-unit association.
//!
//! For an action unit, the images are split into those showing it (`S`) and
//! those not showing it (`Sᶜ`). For every feature map `j`, the `n` largest
//! per-image maximum activations are taken from each side (`R` from `S`, `Q`
//! from `Sᶜ`, both sorted descending) and compared rank by rank with a
//! KL-style term in both directions:
//!
//! ```text
//! D(R‖Q) = Σₖ Rₖ · ln(Rₖ / Qₖ)        Dⱼ = D(R‖Q) + D(Q‖R)
//! ```
//!
//! The map with the largest `Dⱼ` is the unit's detector. Every value is
//! floored by `ε = 1e-8` before the logarithm because post-ReLU activations
//! can be exactly zero.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::data::DatasetManifest;
use crate::harvest::{partition_by_au, top_n, ActivationDb, HarvestError};

pub const KL_EPSILON: f64 = 1e-8;
pub const DEFAULT_TOP_N: usize = 9;

#[derive(Debug, Error)]
pub enum AssociationError {
    #[error("response lists differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("activation values must be non-negative, found {0}")]
    Negative(f64),
    #[error("action unit {au}: {side} partition is empty")]
    EmptyPartition { au: u32, side: &'static str },
    #[error("top-n must be at least 1")]
    ZeroN,
    #[error(transparent)]
    Harvest(#[from] HarvestError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// How response lists are treated before the KL term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Normalization {
    /// Raw activations plus ε.
    #[default]
    Raw,
    /// Each ε-floored list rescaled to sum to 1.
    SumToOne,
}

fn prepared(values: &[f64], mode: Normalization) -> Vec<f64> {
    let floored: Vec<f64> = values.iter().map(|v| v + KL_EPSILON).collect();
    match mode {
        Normalization::Raw => floored,
        Normalization::SumToOne => {
            let total: f64 = floored.iter().sum();
            floored.iter().map(|v| v / total).collect()
        }
    }
}

fn check_lists(r: &[f64], q: &[f64]) -> Result<(), AssociationError> {
    if r.len() != q.len() {
        return Err(AssociationError::LengthMismatch(r.len(), q.len()));
    }
    if let Some(&bad) = r.iter().chain(q).find(|v| !(**v >= 0.0)) {
        return Err(AssociationError::Negative(bad));
    }
    Ok(())
}

/// `Σₖ (Rₖ+ε) · ln((Rₖ+ε)/(Qₖ+ε))`, pairing the lists rank by rank.
pub fn kl_term(r: &[f64], q: &[f64]) -> Result<f64, AssociationError> {
    kl_term_with(r, q, Normalization::Raw)
}

pub fn kl_term_with(r: &[f64], q: &[f64], mode: Normalization) -> Result<f64, AssociationError> {
    check_lists(r, q)?;
    let (r, q) = (prepared(r, mode), prepared(q, mode));
    Ok(r.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum())
}

/// Top-`n` responses of one map on the AU-present (`r`) and AU-absent (`q`)
/// image sets, both sorted descending and truncated to a common length.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponsePair {
    pub r: Vec<f64>,
    pub q: Vec<f64>,
}

impl ResponsePair {
    pub fn new(mut r: Vec<f64>, mut q: Vec<f64>) -> Result<Self, AssociationError> {
        let n = r.len().min(q.len());
        r.truncate(n);
        q.truncate(n);
        check_lists(&r, &q)?;
        Ok(Self { r, q })
    }

    pub fn n(&self) -> usize {
        self.r.len()
    }
}

/// `D(R‖Q) + D(Q‖R)`.
pub fn symmetric_distance(pair: &ResponsePair) -> Result<f64, AssociationError> {
    symmetric_distance_with(pair, Normalization::Raw)
}

pub fn symmetric_distance_with(
    pair: &ResponsePair,
    mode: Normalization,
) -> Result<f64, AssociationError> {
    Ok(kl_term_with(&pair.r, &pair.q, mode)? + kl_term_with(&pair.q, &pair.r, mode)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuDistanceProfile {
    pub au_id: u32,
    /// `Dⱼ` for every feature map `j`.
    pub distances: Vec<f64>,
    /// Map with the largest distance; ties resolve to the smallest index.
    pub argmax_map: usize,
    /// Top-n actually used (smaller than requested when a partition is small).
    pub n_used: usize,
    pub present_count: usize,
    pub absent_count: usize,
    pub warnings: Vec<String>,
    pub checkpoint_hash: String,
    pub manifest_hash: String,
}

impl AuDistanceProfile {
    pub fn max_distance(&self) -> f64 {
        self.distances[self.argmax_map]
    }

    pub fn median_distance(&self) -> f64 {
        let mut d = self.distances.clone();
        d.sort_by(f64::total_cmp);
        let m = d.len() / 2;
        if d.len() % 2 == 0 {
            (d[m - 1] + d[m]) / 2.0
        } else {
            d[m]
        }
    }

    /// `map,distance` rows followed by `argmax,<map>,<distance>`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("map,distance\n");
        for (j, d) in self.distances.iter().enumerate() {
            writeln!(out, "{j},{d}").expect("string write");
        }
        writeln!(out, "argmax,{},{}", self.argmax_map, self.max_distance()).expect("string write");
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), AssociationError> {
        std::fs::write(path, self.to_csv()).map_err(|source| AssociationError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Distance profile of one action unit over every map in the database.
pub fn profile(
    db: &ActivationDb,
    manifest: &DatasetManifest,
    au_id: u32,
    n: usize,
    mode: Normalization,
) -> Result<AuDistanceProfile, AssociationError> {
    if n == 0 {
        return Err(AssociationError::ZeroN);
    }
    let (present, absent) = partition_by_au(manifest, au_id)?;
    let present: Vec<usize> = present.into_iter().filter(|id| db.contains(*id)).collect();
    let absent: Vec<usize> = absent.into_iter().filter(|id| db.contains(*id)).collect();
    if present.is_empty() {
        return Err(AssociationError::EmptyPartition {
            au: au_id,
            side: "AU-present",
        });
    }
    if absent.is_empty() {
        return Err(AssociationError::EmptyPartition {
            au: au_id,
            side: "AU-absent",
        });
    }
    let mut warnings = Vec::new();
    let n_used = n.min(present.len()).min(absent.len());
    if n_used < n {
        warnings.push(format!(
            "action unit {au_id}: partitions hold {} and {} images; using top-{n_used} instead of top-{n}",
            present.len(),
            absent.len()
        ));
    }
    let distances = (0..db.num_maps())
        .map(|map| {
            let values = |ids: &[usize]| -> Result<Vec<f64>, AssociationError> {
                Ok(top_n(db, map, ids, n_used)?
                    .iter()
                    .map(|rec| rec.value)
                    .collect())
            };
            let pair = ResponsePair::new(values(&present)?, values(&absent)?)?;
            symmetric_distance_with(&pair, mode)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AuDistanceProfile {
        au_id,
        argmax_map: argmax_first(&distances),
        distances,
        n_used,
        present_count: present.len(),
        absent_count: absent.len(),
        warnings,
        checkpoint_hash: db.checkpoint_hash().to_string(),
        manifest_hash: db.manifest_hash().to_string(),
    })
}

/// Profiles for every AU in `au_ids`, in the given order.
pub fn profile_all(
    db: &ActivationDb,
    manifest: &DatasetManifest,
    au_ids: &[u32],
    n: usize,
    mode: Normalization,
) -> Result<Vec<AuDistanceProfile>, AssociationError> {
    au_ids
        .iter()
        .map(|&au| profile(db, manifest, au, n, mode))
        .collect()
}
