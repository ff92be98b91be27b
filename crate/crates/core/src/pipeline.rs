//! Stage-by-stage orchestration: synthesise, train, harvest, associate, report.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::association::{profile_all, AssociationError, AuDistanceProfile, Normalization};
use crate::data::{DataError, DatasetManifest, SyntheticSpec};
use crate::deconv::{DeconvError, Site};
use crate::harvest::{harvest, ActivationDb, HarvestError};
use crate::model::{
    save_checkpoint, train, write_metrics, EpochMetrics, LabelledImage, ModelError, Network,
    RunConfig, TrainReport,
};
use crate::report::{au_summary, ReportError, SummaryRow};

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Deconv(#[from] DeconvError),
    #[error(transparent)]
    Harvest(#[from] HarvestError),
    #[error(transparent)]
    Association(#[from] AssociationError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
#[error("{stage} stage failed on {input}: {source}")]
pub struct PipelineError {
    pub stage: &'static str,
    pub input: String,
    #[source]
    pub source: StageError,
}

impl PipelineError {
    pub fn new(
        stage: &'static str,
        input: impl AsRef<Path>,
        source: impl Into<StageError>,
    ) -> Self {
        Self {
            stage,
            input: input.as_ref().display().to_string(),
            source: source.into(),
        }
    }

    /// Process exit code: 1 for configuration problems, 3 for numeric
    /// failure, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match &self.source {
            StageError::Model(ModelError::Config(_)) => 1,
            StageError::Model(ModelError::NonFinite { .. }) => 3,
            _ => 2,
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), StageError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| StageError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, text).map_err(|source| StageError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a manifest at `path`, keeping relative image paths when `path`
/// lives in the manifest's base directory.
pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), StageError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let same = match (dir.canonicalize(), manifest.base_dir().canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    let text = if same {
        manifest.to_csv_string()
    } else {
        manifest.with_absolute_paths().to_csv_string()
    };
    write_file(path, &text)
}

/// Class names in index order: the configured list, or the sorted distinct
/// manifest labels.
pub fn class_names(manifest: &DatasetManifest, cfg: &RunConfig) -> Result<Vec<String>, ModelError> {
    let names = if cfg.classes.is_empty() {
        manifest.labels()
    } else {
        cfg.classes.clone()
    };
    if names.len() > cfg.model.num_classes {
        return Err(ModelError::Config(format!(
            "{} class labels but num_classes = {}",
            names.len(),
            cfg.model.num_classes
        )));
    }
    Ok(names)
}

pub fn labelled_images(
    manifest: &DatasetManifest,
    classes: &[String],
) -> Result<Vec<LabelledImage>, StageError> {
    manifest
        .entries()
        .iter()
        .enumerate()
        .map(|(id, e)| {
            let label =
                classes
                    .iter()
                    .position(|c| *c == e.label)
                    .ok_or_else(|| DataError::Row {
                        row: id,
                        message: format!(
                            "label '{}' is not one of the configured classes",
                            e.label
                        ),
                    })?;
            Ok(LabelledImage {
                id,
                image: manifest.load_image(id)?,
                label,
            })
        })
        .collect()
}

/// Reproducible split; `test_count = 0` keeps every image for training.
pub fn split(
    manifest: &DatasetManifest,
    cfg: &RunConfig,
) -> Result<(DatasetManifest, DatasetManifest), DataError> {
    if cfg.test_count == 0 {
        return Ok((manifest.clone(), manifest.subset(&[])));
    }
    manifest.split(cfg.test_count, cfg.train.seed)
}

pub struct TrainOutcome {
    pub net: Network,
    pub report: TrainReport,
    pub train_manifest: DatasetManifest,
    pub test_manifest: DatasetManifest,
}

/// Splits, trains from scratch and writes the checkpoint, the metrics log
/// and both split manifests (next to the checkpoint).
pub fn train_stage(
    manifest: &DatasetManifest,
    cfg: &RunConfig,
    checkpoint: &Path,
    metrics: &Path,
    on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome, PipelineError> {
    let fail = |e: StageError| PipelineError::new("train", manifest.base_dir(), e);
    let classes = class_names(manifest, cfg).map_err(|e| fail(e.into()))?;
    let (train_m, test_m) = split(manifest, cfg).map_err(|e| fail(e.into()))?;
    let dir = checkpoint.parent().unwrap_or(Path::new("."));
    write_manifest(&train_m, &dir.join("train_manifest.csv")).map_err(fail)?;
    write_manifest(&test_m, &dir.join("test_manifest.csv")).map_err(fail)?;
    let train_set = labelled_images(&train_m, &classes).map_err(fail)?;
    let test_set = labelled_images(&test_m, &classes).map_err(fail)?;
    let mut net = Network::build(&cfg.model).map_err(|e| fail(e.into()))?;
    let report =
        train(&mut net, &train_set, &test_set, &cfg.train, on_epoch).map_err(|e| fail(e.into()))?;
    write_metrics(metrics, &report.epochs).map_err(|e| fail(e.into()))?;
    save_checkpoint(&net, checkpoint).map_err(|e| fail(e.into()))?;
    Ok(TrainOutcome {
        net,
        report,
        train_manifest: train_m,
        test_manifest: test_m,
    })
}

/// Profiles, charts, montages and the summary index for `au_ids` (every AU
/// in the manifest when `None`).
pub fn associate_stage(
    db: &ActivationDb,
    net: &Network,
    manifest: &DatasetManifest,
    au_ids: Option<&[u32]>,
    n: usize,
    out_dir: &Path,
) -> Result<(Vec<AuDistanceProfile>, Vec<SummaryRow>, Vec<String>), PipelineError> {
    let ids = au_ids.map_or_else(|| manifest.au_ids(), <[u32]>::to_vec);
    let profiles = profile_all(db, manifest, &ids, n, Normalization::Raw)
        .map_err(|e| PipelineError::new("associate", manifest.base_dir(), e))?;
    let (rows, warnings) = au_summary(&profiles, db, net, manifest, out_dir, n)
        .map_err(|e| PipelineError::new("report", out_dir, e))?;
    Ok((profiles, rows, warnings))
}

pub enum PipelineInput {
    Spec(SyntheticSpec),
    Manifest(PathBuf),
}

pub struct PipelineOutcome {
    pub train: TrainOutcome,
    pub db: ActivationDb,
    pub profiles: Vec<AuDistanceProfile>,
    pub summary: Vec<SummaryRow>,
    pub warnings: Vec<String>,
}

/// Every stage in order under `out_dir`:
///
/// ```text
/// resolved_config.txt
/// data/                      synthetic images and manifest (spec input only)
/// model/checkpoint.bin       model/metrics.csv  model/{train,test}_manifest.csv
/// activations.csv
/// profiles/  montages/  summary/
/// ```
pub fn run_pipeline(
    input: &PipelineInput,
    cfg: &RunConfig,
    out_dir: &Path,
    au_ids: Option<&[u32]>,
    mut log: impl FnMut(&str),
) -> Result<PipelineOutcome, PipelineError> {
    write_file(&out_dir.join("resolved_config.txt"), &cfg.to_text())
        .map_err(|e| PipelineError::new("setup", out_dir, e))?;
    let manifest = match input {
        PipelineInput::Spec(spec) => {
            let data = out_dir.join("data");
            let ds = spec
                .generate_to(&data)
                .map_err(|e| PipelineError::new("synth", &data, e))?;
            for w in &ds.warnings {
                log(&format!("synth: {w}"));
            }
            log(&format!(
                "synth: {} images in {}",
                ds.manifest.len(),
                data.display()
            ));
            ds.manifest
        }
        PipelineInput::Manifest(path) => {
            DatasetManifest::load(path).map_err(|e| PipelineError::new("load", path, e))?
        }
    };
    let model_dir = out_dir.join("model");
    std::fs::create_dir_all(&model_dir).map_err(|source| {
        PipelineError::new(
            "train",
            &model_dir,
            StageError::Io {
                path: model_dir.clone(),
                source,
            },
        )
    })?;
    let outcome = train_stage(
        &manifest,
        cfg,
        &model_dir.join("checkpoint.bin"),
        &model_dir.join("metrics.csv"),
        |m| {
            log(&format!(
                "train: epoch {} loss {:.4} train_acc {:.3}",
                m.epoch, m.train_loss, m.train_acc
            ))
        },
    )?;
    log(&format!("train: stopped ({:?})", outcome.report.stop));
    let db_path = out_dir.join("activations.csv");
    let db = harvest(
        &outcome.net,
        &outcome.train_manifest,
        Site::last(&outcome.net),
        "train",
    )
    .map_err(|e| PipelineError::new("harvest", &db_path, e))?;
    db.write(&db_path)
        .map_err(|e| PipelineError::new("harvest", &db_path, e))?;
    log(&format!("harvest: {} records", db.records().len()));
    let (profiles, summary, warnings) = associate_stage(
        &db,
        &outcome.net,
        &outcome.train_manifest,
        au_ids,
        cfg.top_n,
        out_dir,
    )?;
    for w in &warnings {
        log(&format!("associate: {w}"));
    }
    for p in &profiles {
        log(&format!(
            "associate: AU {} -> map {} (distance {:.4})",
            p.au_id,
            p.argmax_map,
            p.max_distance()
        ));
    }
    Ok(PipelineOutcome {
        train: outcome,
        db,
        profiles,
        summary,
        warnings,
    })
}
