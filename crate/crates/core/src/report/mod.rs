//! Distance-profile charts, deconvolution montages and the run summary.

mod chart;

pub use chart::{bar_chart, count_bars, ChartStyle};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::association::AuDistanceProfile;
use crate::data::{eval_transform, DataError, DatasetManifest, GrayImage};
use crate::deconv::{
    project, receptive_field, receptive_field_size, response_crops, DeconvError, Site,
};
use crate::harvest::{partition_by_au, top_n, ActivationDb, ActivationRecord, HarvestError};
use crate::model::{ModelError, Network};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Deconv(#[from] DeconvError),
    #[error(transparent)]
    Harvest(#[from] HarvestError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("activation database was harvested at a different site than {0:?}")]
    Site(Site),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes the profile chart to `png_path` and its data next to it as CSV.
pub fn plot_profile(profile: &AuDistanceProfile, png_path: &Path) -> Result<PathBuf, ReportError> {
    let img = bar_chart(
        &profile.distances,
        profile.argmax_map,
        &ChartStyle::default(),
    );
    img.write(png_path)?;
    let csv = png_path.with_extension("csv");
    profile.write_csv(&csv).map_err(|e| match e {
        crate::association::AssociationError::Io { path, source } => {
            ReportError::Io { path, source }
        }
        other => ReportError::Io {
            path: csv.clone(),
            source: std::io::Error::other(other.to_string()),
        },
    })?;
    Ok(csv)
}

#[derive(Clone, Debug)]
pub struct Montage {
    pub original: GrayImage,
    pub deconv: GrayImage,
    /// Records shown, strongest first.
    pub records: Vec<ActivationRecord>,
    pub warnings: Vec<String>,
}

const GAP: usize = 2;

fn tile(images: &[GrayImage], tile: usize) -> GrayImage {
    let cols = images.len().clamp(1, 3);
    let rows = images.len().div_ceil(3).max(1);
    let w = cols * tile + (cols - 1) * GAP;
    let h = rows * tile + (rows - 1) * GAP;
    let mut px = vec![0u8; w * h];
    for (k, img) in images.iter().enumerate() {
        let ox = (k % 3) * (tile + GAP) + (tile - img.width()) / 2;
        let oy = (k / 3) * (tile + GAP) + (tile - img.height()) / 2;
        for y in 0..img.height() {
            for x in 0..img.width() {
                px[(oy + y) * w + ox + x] = img.get(x, y);
            }
        }
    }
    GrayImage::new(w, h, px).expect("consistent montage size")
}

/// Original and deconvolution grids (3 per row) for the `n` images that
/// activate `map` most strongly among `subset` (all images when `None`).
pub fn montage(
    db: &ActivationDb,
    net: &Network,
    manifest: &DatasetManifest,
    map: usize,
    n: usize,
    subset: Option<&[usize]>,
) -> Result<Montage, ReportError> {
    let site = db.provenance().site;
    let all = db.image_ids().to_vec();
    let records = top_n(db, map, subset.unwrap_or(&all), n)?;
    let mut warnings = Vec::new();
    if records.len() < n {
        warnings.push(format!(
            "map {map}: only {} images available for a top-{n} montage",
            records.len()
        ));
    }
    let size = net.input_shape()[1];
    let tile_size = receptive_field_size(net, site)?.min(size);
    let mut originals = Vec::new();
    let mut deconvs = Vec::new();
    for rec in &records {
        let img = manifest.load_image(rec.image_id)?;
        let x = eval_transform(&img, size)?;
        let trace = net.forward_trace(&x)?;
        let p = project(&trace, net, site, map, (rec.row, rec.col))?;
        let rf = receptive_field(net, site, (rec.row, rec.col))?;
        let (o, d) = response_crops(&p, &x, rf)?;
        originals.push(o);
        deconvs.push(d);
    }
    Ok(Montage {
        original: tile(&originals, tile_size),
        deconv: tile(&deconvs, tile_size),
        records,
        warnings,
    })
}

/// One row of `summary/index.csv`. Paths are relative to the output directory.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub au_id: u32,
    pub argmax_map: usize,
    pub distance: f64,
    pub median_distance: f64,
    pub n_used: usize,
    pub profile_csv: String,
    pub profile_png: String,
    pub montage_orig: String,
    pub montage_deconv: String,
    pub exemplar: String,
}

pub const INDEX_HEADER: &str =
    "au_id,argmax_map,distance,median_distance,n_used,profile_csv,profile_png,montage_orig,montage_deconv,exemplar";

pub fn index_csv(rows: &[SummaryRow]) -> String {
    let mut out = format!("{INDEX_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.au_id,
            r.argmax_map,
            r.distance,
            r.median_distance,
            r.n_used,
            r.profile_csv,
            r.profile_png,
            r.montage_orig,
            r.montage_deconv,
            r.exemplar
        )
        .expect("string write");
    }
    out
}

/// Per-AU chart, detector-map montage and an exemplar crop, plus the index.
pub fn au_summary(
    profiles: &[AuDistanceProfile],
    db: &ActivationDb,
    net: &Network,
    manifest: &DatasetManifest,
    out_dir: &Path,
    n: usize,
) -> Result<(Vec<SummaryRow>, Vec<String>), ReportError> {
    for sub in ["profiles", "montages", "summary"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(io(&d))?;
    }
    let site = db.provenance().site;
    let size = net.input_shape()[1];
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for p in profiles {
        let profile_png = format!("profiles/au_{}.png", p.au_id);
        let profile_csv = format!("profiles/au_{}.csv", p.au_id);
        plot_profile(p, &out_dir.join(&profile_png))?;
        let m = p.argmax_map;
        let montage_orig = format!("montages/map_{m}_orig.png");
        let montage_deconv = format!("montages/map_{m}_deconv.png");
        if !out_dir.join(&montage_orig).exists() || !out_dir.join(&montage_deconv).exists() {
            let mt = montage(db, net, manifest, m, n, None)?;
            mt.original.write(&out_dir.join(&montage_orig))?;
            mt.deconv.write(&out_dir.join(&montage_deconv))?;
            warnings.extend(mt.warnings);
        }
        let (present, _) = partition_by_au(manifest, p.au_id)?;
        let present: Vec<usize> = present.into_iter().filter(|id| db.contains(*id)).collect();
        let best = top_n(db, m, &present, 1)?[0];
        let x = eval_transform(&manifest.load_image(best.image_id)?, size)?;
        let trace = net.forward_trace(&x)?;
        let proj = project(&trace, net, site, m, (best.row, best.col))?;
        let rf = receptive_field(net, site, (best.row, best.col))?;
        let (orig, _) = response_crops(&proj, &x, rf)?;
        let exemplar = format!("summary/au_{}_exemplar.png", p.au_id);
        orig.write(&out_dir.join(&exemplar))?;
        warnings.extend(p.warnings.iter().cloned());
        rows.push(SummaryRow {
            au_id: p.au_id,
            argmax_map: m,
            distance: p.max_distance(),
            median_distance: p.median_distance(),
            n_used: p.n_used,
            profile_csv,
            profile_png,
            montage_orig,
            montage_deconv,
            exemplar,
        });
    }
    let index = out_dir.join("summary/index.csv");
    std::fs::write(&index, index_csv(&rows)).map_err(io(&index))?;
    Ok((rows, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(distances: Vec<f64>) -> AuDistanceProfile {
        let argmax_map = distances
            .iter()
            .enumerate()
            .fold(0, |b, (i, &v)| if v > distances[b] { i } else { b });
        AuDistanceProfile {
            au_id: 1,
            distances,
            argmax_map,
            n_used: 9,
            present_count: 10,
            absent_count: 30,
            warnings: vec![],
            checkpoint_hash: "c".into(),
            manifest_hash: "m".into(),
        }
    }

    #[test]
    fn plot_writes_chart_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = vec![0.5; 256];
        d[113] = 4.0;
        let p = profile(d);
        let png = dir.path().join("au_1.png");
        let csv = plot_profile(&p, &png).unwrap();
        let img = GrayImage::read(&png).unwrap();
        assert_eq!(count_bars(&img, &ChartStyle::default()), 256);
        let text = std::fs::read_to_string(csv).unwrap();
        assert_eq!(text.lines().count(), 258);
        assert!(text.ends_with("argmax,113,4\n"));
        assert!(plot_profile(&p, &dir.path().join("missing/au.png")).is_err());
    }

    #[test]
    fn grid_layout() {
        let imgs: Vec<GrayImage> = (0..5)
            .map(|i| GrayImage::filled(4, 3, 10 * i + 1))
            .collect();
        let g = tile(&imgs, 6);
        assert_eq!((g.width(), g.height()), (3 * 6 + 2 * GAP, 2 * 6 + GAP));
        assert_eq!(g.get(1, 1), 1);
        assert_eq!(g.get(6 + GAP + 1, 1), 11);
        assert_eq!(g.get(0, 0), 0);
        let one = tile(&imgs[..1], 6);
        assert_eq!((one.width(), one.height()), (6, 6));
    }

    #[test]
    fn index_lists_rows() {
        let row = SummaryRow {
            au_id: 4,
            argmax_map: 7,
            distance: 2.5,
            median_distance: 0.25,
            n_used: 9,
            profile_csv: "profiles/au_4.csv".into(),
            profile_png: "profiles/au_4.png".into(),
            montage_orig: "montages/map_7_orig.png".into(),
            montage_deconv: "montages/map_7_deconv.png".into(),
            exemplar: "summary/au_4_exemplar.png".into(),
        };
        let csv = index_csv(&[row]);
        assert_eq!(csv.lines().next(), Some(INDEX_HEADER));
        assert!(csv.contains("4,7,2.5,0.25,9,profiles/au_4.csv"));
    }
}
