use std::collections::BTreeSet;
use std::path::Path;

use auprobe::association::{profile, profile_all, AssociationError, Normalization};
use auprobe::data::{DatasetManifest, GrayImage, ManifestEntry, SyntheticSpec};
use auprobe::deconv::Site;
use auprobe::harvest::{harvest, partition_by_au, HarvestError};
use auprobe::model::{ModelConfig, Network};
use auprobe::report::{au_summary, INDEX_HEADER};

fn small_model(classes: usize) -> ModelConfig {
    ModelConfig {
        input_size: 32,
        conv_channels: vec![4, 6, 8],
        fc_hidden: 16,
        num_classes: classes,
        ..ModelConfig::default()
    }
}

fn synthetic(dir: &Path, per_class: usize) -> DatasetManifest {
    SyntheticSpec::grid(32, 2, per_class, 11)
        .generate_to(dir)
        .unwrap()
        .manifest
}

#[test]
fn harvest_counts_records_per_map() {
    let dir = tempfile::tempdir().unwrap();
    let ds = SyntheticSpec::grid(96, 2, 5, 1)
        .generate_to(dir.path())
        .unwrap();
    let net = Network::build(&ModelConfig::default()).unwrap();
    let db = harvest(&net, &ds.manifest, Site::last(&net), "all").unwrap();
    assert_eq!(db.num_maps(), 256);
    assert_eq!(db.records().len(), 10 * 256);
    for r in db.records() {
        assert!(r.value >= 0.0);
        assert!(r.row < 24 && r.col < 24);
    }
}

#[test]
fn black_image_yields_nonnegative_records() {
    let dir = tempfile::tempdir().unwrap();
    GrayImage::filled(40, 40, 0)
        .write(&dir.path().join("black.pgm"))
        .unwrap();
    let manifest = DatasetManifest::new(
        dir.path(),
        vec![ManifestEntry {
            path: "black.pgm".into(),
            label: "neutral".into(),
            aus: BTreeSet::new(),
            subject: "s".into(),
            sequence: "q".into(),
            crop: None,
        }],
    );
    let net = Network::build(&small_model(2)).unwrap();
    let db = harvest(&net, &manifest, Site::last(&net), "all").unwrap();
    assert_eq!(db.records().len(), 8);
    assert!(db.records().iter().all(|r| r.value >= 0.0));
}

#[test]
fn harvest_is_deterministic_and_thread_independent() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synthetic(dir.path(), 6);
    let net = Network::build(&small_model(2)).unwrap();
    let site = Site {
        stage: 2,
        pooled: true,
    };
    let a = harvest(&net, &manifest, site, "train").unwrap();
    let b = harvest(&net, &manifest, site, "train").unwrap();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap();
    let c = pool.install(|| harvest(&net, &manifest, site, "train").unwrap());
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.to_csv(), c.to_csv());
    assert_eq!(a.provenance().site, site);
}

#[test]
fn partition_is_exhaustive_and_disjoint() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synthetic(dir.path(), 5);
    for au in manifest.au_ids() {
        let (s, sc) = partition_by_au(&manifest, au).unwrap();
        assert_eq!(s.len() + sc.len(), manifest.len());
        let s: BTreeSet<_> = s.into_iter().collect();
        assert!(sc.iter().all(|i| !s.contains(i)));
        assert!(s.iter().all(|&i| manifest.entries()[i].aus.contains(&au)));
    }
    let err = partition_by_au(&manifest, 42).unwrap_err();
    assert!(matches!(err, HarvestError::AuAbsent(42)));
    assert!(err.to_string().contains("42"));
}

#[test]
fn identical_partitions_give_zero_profile() {
    let dir = tempfile::tempdir().unwrap();
    let img = SyntheticSpec::grid(32, 1, 1, 2)
        .generate()
        .unwrap()
        .images
        .remove(0);
    img.write(&dir.path().join("same.pgm")).unwrap();
    let entries = (0..6)
        .map(|i| ManifestEntry {
            path: "same.pgm".into(),
            label: "x".into(),
            aus: if i % 2 == 0 {
                [7].into()
            } else {
                BTreeSet::new()
            },
            subject: format!("s{i}"),
            sequence: format!("q{i}"),
            crop: None,
        })
        .collect();
    let manifest = DatasetManifest::new(dir.path(), entries);
    let net = Network::build(&small_model(2)).unwrap();
    let db = harvest(&net, &manifest, Site::last(&net), "all").unwrap();
    let p = profile(&db, &manifest, 7, 9, Normalization::Raw).unwrap();
    assert!(p.distances.iter().all(|&d| d == 0.0));
    assert_eq!(p.argmax_map, 0);
    assert_eq!(p.n_used, 3);
    assert_eq!(p.warnings.len(), 1);
}

#[test]
fn empty_partition_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = synthetic(dir.path(), 2);
    let entries = manifest
        .entries()
        .iter()
        .cloned()
        .map(|mut e| {
            e.aus.insert(9);
            e
        })
        .collect();
    manifest = DatasetManifest::new(dir.path(), entries);
    let net = Network::build(&small_model(2)).unwrap();
    let db = harvest(&net, &manifest, Site::last(&net), "all").unwrap();
    assert!(matches!(
        profile(&db, &manifest, 9, 9, Normalization::Raw),
        Err(AssociationError::EmptyPartition { au: 9, .. })
    ));
    assert!(profile(&db, &manifest, 9, 0, Normalization::Raw).is_err());
}

#[test]
fn profiles_ignore_row_order() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synthetic(dir.path(), 6);
    let net = Network::build(&small_model(2)).unwrap();
    let site = Site::last(&net);
    let db = harvest(&net, &manifest, site, "all").unwrap();
    let reversed: Vec<usize> = (0..manifest.len()).rev().collect();
    let shuffled = manifest.subset(&reversed);
    let db2 = harvest(&net, &shuffled, site, "all").unwrap();
    let a = profile_all(&db, &manifest, &[1, 2], 4, Normalization::Raw).unwrap();
    let b = profile_all(&db2, &shuffled, &[1, 2], 4, Normalization::Raw).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.distances, y.distances);
        assert_eq!(x.argmax_map, y.argmax_map);
    }
}

#[test]
fn summary_index_references_written_files() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synthetic(&dir.path().join("data"), 5);
    let net = Network::build(&small_model(2)).unwrap();
    let db = harvest(&net, &manifest, Site::last(&net), "all").unwrap();
    let profiles = profile_all(&db, &manifest, &manifest.au_ids(), 9, Normalization::Raw).unwrap();
    let out = dir.path().join("report");
    let (rows, _) = au_summary(&profiles, &db, &net, &manifest, &out, 9).unwrap();
    assert_eq!(rows.len(), 2);
    let index = std::fs::read_to_string(out.join("summary/index.csv")).unwrap();
    let mut lines = index.lines();
    assert_eq!(lines.next(), Some(INDEX_HEADER));
    let mut referenced = 0;
    for line in lines {
        for field in line.split(',').skip(5) {
            let path = out.join(field);
            assert!(path.is_file(), "dangling {field}");
            if field.ends_with(".png") {
                GrayImage::read(&path).unwrap();
            }
            referenced += 1;
        }
    }
    assert_eq!(referenced, 10);
    let montage = GrayImage::read(&out.join(&rows[0].montage_orig)).unwrap();
    let deconv = GrayImage::read(&out.join(&rows[0].montage_deconv)).unwrap();
    assert_eq!(
        (montage.width(), montage.height()),
        (deconv.width(), deconv.height())
    );
}

#[test]
fn bundled_spec_matches_default() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic_default.json");
    let spec = SyntheticSpec::load(&path).unwrap();
    assert_eq!(spec.to_json(), SyntheticSpec::default().to_json());
}
