//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL`
//! line before asserting.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use auprobe::association::{
    kl_term, kl_term_with, symmetric_distance, Normalization, ResponsePair,
};
use auprobe::data::{augment, map_rect_to_eval, GrayImage, SyntheticSpec};
use auprobe::deconv::{project, receptive_field, Site};
use auprobe::harvest::{harvest, partition_by_au, top_n};
use auprobe::layers::{ConvLayer, FcLayer};
use auprobe::model::{
    from_bytes, load_checkpoint, save_checkpoint, to_bytes, train, Classifier, ConvStage,
    LabelledImage, ModelConfig, Network, RunConfig, TrainConfig,
};
use auprobe::pipeline::{run_pipeline, PipelineInput};
use auprobe::seed::derive_seed;
use auprobe::tensor::{Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(n: u32, pass: bool, detail: String) {
    println!(
        "criterion {n}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {n} failed: {detail}");
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_values(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn criterion_1_gradient_correctness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut conv1 = ConvLayer::new(1, 3, 5).unwrap();
    conv1.init_gaussian(0.4, &mut rng);
    let mut conv2 = ConvLayer::new(3, 2, 3).unwrap();
    conv2.init_gaussian(0.4, &mut rng);
    for c in [&mut conv1, &mut conv2] {
        c.bias
            .data_mut()
            .iter_mut()
            .for_each(|b| *b = rng.random_range(-0.2..0.2));
    }
    let mut hidden = FcLayer::new(18, 8).unwrap();
    hidden.init_gaussian(0.4, &mut rng);
    let mut output = FcLayer::new(8, 4).unwrap();
    output.init_gaussian(0.4, &mut rng);
    let mut net = Network::from_parts(
        [1, 6, 6],
        vec![
            ConvStage {
                conv: conv1,
                relu: true,
                pool: true,
            },
            ConvStage {
                conv: conv2,
                relu: true,
                pool: false,
            },
        ],
        Some(Classifier { hidden, output }),
    )
    .unwrap();
    let x = random_tensor(&[1, 6, 6], &mut rng);
    let label = 2;
    let p = 0.5;

    let loss_at = |net: &Network| {
        let mut g = net.zero_gradients();
        let mut drop_rng = ChaCha8Rng::seed_from_u64(7);
        net.loss_and_gradients(&x, label, p, &mut drop_rng, &mut g)
            .unwrap()
    };
    // Kinks (ReLU signs, pooling switches) must not move between the probes.
    let pattern = |net: &Network| {
        let t = net.forward_trace(&x).unwrap();
        let mut bits: Vec<usize> = Vec::new();
        for s in &t.stages {
            bits.extend(s.conv_out.data().iter().map(|v| (*v > 0.0) as usize));
            if let Some(sw) = s.switches() {
                bits.extend_from_slice(sw.switches());
            }
        }
        let c = t.classifier.unwrap();
        bits.extend(c.hidden_pre.data().iter().map(|v| (*v > 0.0) as usize));
        bits
    };

    let mut analytic = net.zero_gradients();
    let mut drop_rng = ChaCha8Rng::seed_from_u64(7);
    net.loss_and_gradients(&x, label, p, &mut drop_rng, &mut analytic)
        .unwrap();
    let analytic: Vec<Vec<Real>> = analytic
        .tensors()
        .iter()
        .map(|t| t.data().to_vec())
        .collect();
    let names: Vec<String> = net.parameters().into_iter().map(|(n, _)| n).collect();

    let eps = 1e-5;
    let base_pattern = pattern(&net);
    let mut checked = 0;
    let mut skipped = 0;
    let mut worst: f64 = 0.0;
    let mut per_layer = std::collections::BTreeMap::new();
    while checked < 240 {
        let ti = rng.random_range(0..names.len());
        let len = analytic[ti].len();
        let idx = rng.random_range(0..len);
        let orig = net.parameters_mut()[ti].data()[idx];
        net.parameters_mut()[ti].data_mut()[idx] = orig + eps as Real;
        let (lp, pp) = (loss_at(&net).0, pattern(&net));
        net.parameters_mut()[ti].data_mut()[idx] = orig - eps as Real;
        let (lm, pm) = (loss_at(&net).0, pattern(&net));
        net.parameters_mut()[ti].data_mut()[idx] = orig;
        if pp != base_pattern || pm != base_pattern {
            skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * eps);
        let a = analytic[ti][idx] as f64;
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7);
        worst = worst.max(rel);
        *per_layer.entry(names[ti].clone()).or_insert(0) += 1;
        checked += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        worst < 1e-4 && per_layer.len() == names.len() && secs < 60.0,
        format!(
            "{checked} parameters over {} tensors, {skipped} kink samples skipped, max rel err {worst:.2e}, {secs:.1}s",
            per_layer.len()
        ),
    );
}

#[test]
fn criterion_2_adjoint_identity() {
    let start = Instant::now();
    let cfg = ModelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    let mut extent = cfg.input_size;
    let mut cin = 1;
    for &cout in &cfg.conv_channels {
        let mut conv = ConvLayer::new(cin, cout, cfg.kernel_size).unwrap();
        conv.init_gaussian(1.0 / (conv.fan_in() as f64).sqrt(), &mut rng);
        for _ in 0..100 {
            let x = random_tensor(&[cin, extent, extent], &mut rng);
            let y = random_tensor(&[cout, extent, extent], &mut rng);
            let mut cx = conv.forward(&x).unwrap();
            // The bias is not part of the linear operator.
            for (c, b) in conv.bias.data().iter().enumerate() {
                let plane = extent * extent;
                cx.data_mut()[c * plane..(c + 1) * plane]
                    .iter_mut()
                    .for_each(|v| *v -= b);
            }
            let cty = conv.transpose(&y).unwrap();
            let lhs = cx.inner_product(&y).unwrap();
            let rhs = x.inner_product(&cty).unwrap();
            let err = (lhs - rhs).abs() / (x.norm() * y.norm());
            worst = worst.max(err);
            pairs += 1;
        }
        cin = cout;
        extent = extent.div_ceil(2);
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        2,
        worst < 1e-10,
        format!("{pairs} pairs over 3 geometries, max normalised gap {worst:.2e}, {secs:.1}s"),
    );
}

/// `Cᵀy` by explicit summation: every output `y[o,i,j]` scatters
/// `w[o,c,u,v]·y` back onto input pixel `(i+u-p, j+v-p)`.
fn transpose_loops(conv: &ConvLayer, y: &Tensor) -> Tensor {
    let (cin, cout, k) = (conv.in_channels(), conv.out_channels(), conv.kernel_size());
    let (h, w) = (y.shape()[1], y.shape()[2]);
    let p = (k / 2) as isize;
    let mut x = Tensor::zeros(&[cin, h, w]).unwrap();
    for o in 0..cout {
        for i in 0..h {
            for j in 0..w {
                let g = y.get(&[o, i, j]).unwrap();
                for c in 0..cin {
                    for u in 0..k {
                        for v in 0..k {
                            let (r, s) = (i as isize + u as isize - p, j as isize + v as isize - p);
                            if r >= 0 && s >= 0 && (r as usize) < h && (s as usize) < w {
                                let idx = [c, r as usize, s as usize];
                                let cur = x.get(&idx).unwrap();
                                x.set(&idx, cur + conv.kernels.get(&[o, c, u, v]).unwrap() * g)
                                    .unwrap();
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

#[test]
fn criterion_3_deconvnet_reduction() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    // Linear toy network: convolutions only.
    let mut stages = Vec::new();
    let mut cin = 1;
    for cout in [3, 4] {
        let mut conv = ConvLayer::new(cin, cout, 5).unwrap();
        conv.init_gaussian(0.3, &mut rng);
        stages.push(ConvStage {
            conv,
            relu: false,
            pool: false,
        });
        cin = cout;
    }
    let lin = Network::from_parts([1, 12, 12], stages, None).unwrap();
    let mut worst: f64 = 0.0;
    let mut loop_gap: f64 = 0.0;
    for _ in 0..20 {
        let x = random_tensor(&[1, 12, 12], &mut rng);
        let trace = lin.forward_trace(&x).unwrap();
        let (m, r, c) = (
            rng.random_range(0..4),
            rng.random_range(0..12),
            rng.random_range(0..12),
        );
        let p = project(
            &trace,
            &lin,
            Site {
                stage: 2,
                pooled: false,
            },
            m,
            (r, c),
        )
        .unwrap();
        let mut seed = Tensor::zeros(&[4, 12, 12]).unwrap();
        seed.set(
            &[m, r, c],
            trace.stages[1].activation.get(&[m, r, c]).unwrap(),
        )
        .unwrap();
        let mut g2 = lin.stages()[1].conv.zero_grad();
        let mut g1 = lin.stages()[0].conv.zero_grad();
        let back = lin.stages()[1]
            .conv
            .backward(&seed, &trace.stages[1].input, &mut g2)
            .unwrap();
        let back = lin.stages()[0].conv.backward(&back, &x, &mut g1).unwrap();
        for (a, b) in p.data().iter().zip(back.data()) {
            worst = worst.max((a - b).abs() as f64);
        }
        let direct = transpose_loops(
            &lin.stages()[0].conv,
            &transpose_loops(&lin.stages()[1].conv, &seed),
        );
        for (a, b) in p.data().iter().zip(direct.data()) {
            loop_gap = loop_gap.max((a - b).abs() as f64);
        }
    }

    // Support containment on the full default model.
    let net = Network::build(&ModelConfig::default()).unwrap();
    let spec = SyntheticSpec::grid(96, 4, 2, 3);
    let ds = spec.generate().unwrap();
    let mut violations = 0;
    let mut nonzero = 0;
    let mut triples = 0;
    for img in ds.images.iter().take(5) {
        let x = auprobe::data::eval_transform(img, 96).unwrap();
        let trace = net.forward_trace(&x).unwrap();
        for _ in 0..10 {
            let site = Site {
                stage: 3,
                pooled: rng.random_bool(0.5),
            };
            let [c, h, w] = net.activation_shape(3, site.pooled).unwrap();
            let map = rng.random_range(0..c);
            let loc = (rng.random_range(0..h), rng.random_range(0..w));
            let p = project(&trace, &net, site, map, loc).unwrap();
            let rf = receptive_field(&net, site, loc).unwrap();
            for (i, &v) in p.data().iter().enumerate() {
                if v != 0.0 {
                    nonzero += 1;
                    if !rf.contains(i % 96, i / 96) {
                        violations += 1;
                    }
                }
            }
            triples += 1;
        }
    }
    verdict(
        3,
        worst <= 1e-10 && loop_gap <= 1e-10 && violations == 0,
        format!(
            "linear toy max |project - conv_backward| {worst:.2e} (vs direct loops {loop_gap:.2e}); {triples} triples, {nonzero} nonzero pixels, {violations} outside the receptive field"
        ),
    );
}

#[test]
fn criterion_4_distance_suite() {
    let eps = 1e-8f64;
    let oracle = |r: &[f64], q: &[f64]| -> f64 {
        r.iter()
            .zip(q)
            .map(|(a, b)| (a + eps) * ((a + eps).ln() - (b + eps).ln()))
            .sum()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut ok = true;
    let mut notes = Vec::new();

    let r = [2.0, 1.0];
    let q = [1.0, 2.0];
    let k = kl_term(&r, &q).unwrap();
    let pair = ResponsePair::new(r.to_vec(), q.to_vec()).unwrap();
    let d = symmetric_distance(&pair).unwrap();
    let hand_ok = (k - oracle(&r, &q)).abs() < 1e-12
        && (d - (oracle(&r, &q) + oracle(&q, &r))).abs() < 1e-12
        && (k - std::f64::consts::LN_2).abs() <= eps
        && (d - 2.0 * std::f64::consts::LN_2).abs() <= 2.0 * eps;
    ok &= hand_ok;
    notes.push(format!(
        "D(R||Q)={k:.12} (oracle gap {:.1e}), D={d:.12} (oracle gap {:.1e})",
        (k - oracle(&r, &q)).abs(),
        (d - oracle(&r, &q) - oracle(&q, &r)).abs()
    ));

    let mut zero_ok = true;
    let mut sym_ok = true;
    let mut gibbs_min = f64::INFINITY;
    for _ in 0..1000 {
        let n = rng.random_range(1..=9);
        let mut a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..20.0)).collect();
        let mut b: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..20.0)).collect();
        a.sort_by(|x, y| y.total_cmp(x));
        b.sort_by(|x, y| y.total_cmp(x));
        zero_ok &= kl_term(&a, &a).unwrap() == 0.0;
        let ab = symmetric_distance(&ResponsePair::new(a.clone(), b.clone()).unwrap()).unwrap();
        let ba = symmetric_distance(&ResponsePair::new(b.clone(), a.clone()).unwrap()).unwrap();
        sym_ok &= ab == ba;
        gibbs_min = gibbs_min.min(kl_term_with(&a, &b, Normalization::SumToOne).unwrap());
    }
    ok &= zero_ok && sym_ok && gibbs_min >= -1e-12;
    notes.push(format!(
        "kl(R,R)=0: {zero_ok}, symmetry exact: {sym_ok}, min normalised term over 1000 pairs {gibbs_min:.3e}"
    ));
    verdict(4, ok, notes.join("; "));
}

fn synthetic_training_set(spec: &SyntheticSpec, take: usize) -> Vec<LabelledImage> {
    let ds = spec.generate().unwrap();
    let labels = ds.manifest.labels();
    let per_class = take / labels.len();
    let mut counts = vec![0; labels.len()];
    let mut out = Vec::new();
    for (id, (e, img)) in ds.manifest.entries().iter().zip(ds.images).enumerate() {
        let label = labels.iter().position(|l| *l == e.label).unwrap();
        if counts[label] < per_class {
            counts[label] += 1;
            out.push(LabelledImage {
                id,
                image: img,
                label,
            });
        }
    }
    out
}

#[test]
fn criterion_5_overfit_sanity() {
    let start = Instant::now();
    let set = synthetic_training_set(&SyntheticSpec::default(), 32);
    let mut model = ModelConfig::reduced();
    model.num_classes = 4;
    let mut net = Network::build(&model).unwrap();
    let cfg = TrainConfig {
        epochs: 300,
        augment: false,
        target_train_acc: Some(0.99),
        patience: usize::MAX,
        ..TrainConfig::default()
    };
    let report = train(&mut net, &set, &[], &cfg, |_| {}).unwrap();
    let last = report.last();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        5,
        set.len() == 32 && last.train_acc >= 0.99 && secs < 600.0,
        format!(
            "{} images, train accuracy {:.3} after {} epochs, {secs:.1}s",
            set.len(),
            last.train_acc,
            last.epoch
        ),
    );
}

struct SeedResult {
    units_passing: usize,
    lines: Vec<String>,
}

fn detector_recovery(seed: u64, dir: &Path) -> SeedResult {
    let mut spec = SyntheticSpec::default();
    spec.seed = seed;
    let mut cfg = RunConfig::default();
    cfg.model = ModelConfig::reduced();
    cfg.model.num_classes = 4;
    cfg.test_count = 0;
    cfg.train.epochs = 150;
    cfg.train.target_train_acc = Some(0.95);
    cfg.set_seed(seed);
    let out = run_pipeline(&PipelineInput::Spec(spec.clone()), &cfg, dir, None, |_| {}).unwrap();
    let net = &out.train.net;
    let manifest = &out.train.train_manifest;
    let site = out.db.provenance().site;
    let size = net.input_shape()[1];
    let train_acc = out.train.report.last().train_acc;
    let mut units_passing = 0;
    let mut lines = vec![format!("seed {seed}: train accuracy {train_acc:.3}")];
    for p in &out.profiles {
        let ratio = p.max_distance() / p.median_distance();
        let (present, _) = partition_by_au(manifest, p.au_id).unwrap();
        let best = top_n(&out.db, p.argmax_map, &present, 1).unwrap()[0];
        let img = manifest.load_image(best.image_id).unwrap();
        let x = auprobe::data::eval_transform(&img, size).unwrap();
        let trace = net.forward_trace(&x).unwrap();
        let proj = project(&trace, net, site, p.argmax_map, (best.row, best.col)).unwrap();
        let region = spec.unit(p.au_id).unwrap().region;
        let [x0, y0, x1, y1] = map_rect_to_eval(region, img.width(), img.height(), size);
        let mut inside = 0.0;
        let mut total = 0.0;
        for (i, &v) in proj.data().iter().enumerate() {
            let e = (v as f64) * (v as f64);
            total += e;
            let (px, py) = (i % size, i / size);
            if (x0..x1).contains(&px) && (y0..y1).contains(&py) {
                inside += e;
            }
        }
        let frac = if total > 0.0 { inside / total } else { 0.0 };
        let pass = ratio >= 2.0 && frac >= 0.5 && train_acc >= 0.95;
        units_passing += pass as usize;
        lines.push(format!(
            "  unit {}: map {} ratio {ratio:.2} energy-in-region {frac:.2} {}",
            p.au_id,
            p.argmax_map,
            if pass { "ok" } else { "miss" }
        ));
    }
    SeedResult {
        units_passing,
        lines,
    }
}

#[test]
fn criterion_6_detector_recovery() {
    let mut seeds_passing = 0;
    let mut detail = Vec::new();
    let mut worst_secs: f64 = 0.0;
    for seed in [1, 2, 3] {
        let start = Instant::now();
        let dir = tempfile::tempdir().unwrap();
        let r = detector_recovery(seed, dir.path());
        let secs = start.elapsed().as_secs_f64();
        worst_secs = worst_secs.max(secs);
        for l in &r.lines {
            println!("{l}");
        }
        let ok = r.units_passing >= 3 && secs < 1200.0;
        seeds_passing += ok as usize;
        detail.push(format!(
            "seed {seed}: {}/4 units in {secs:.0}s",
            r.units_passing
        ));
    }
    verdict(
        6,
        seeds_passing >= 2,
        format!("{}; {seeds_passing}/3 seeds pass", detail.join(", ")),
    );
}

#[test]
fn criterion_7_augmentation_contract() {
    let start = Instant::now();
    let ds = SyntheticSpec::grid(110, 4, 1, 9).generate().unwrap();
    let img: &GrayImage = &ds.images[0];
    let base_seed = 77;
    let run = || {
        (0..10_000u64)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base_seed, &[i]));
                augment(img, 96, &mut rng).unwrap()
            })
            .collect::<Vec<_>>()
    };
    let first = run();
    let mut shape_ok = true;
    let mut worst_mean: f64 = 0.0;
    let mut worst_std: f64 = 0.0;
    for t in &first {
        shape_ok &= t.shape() == [1, 96, 96];
        let n = t.len() as f64;
        let mean = t.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = t
            .data()
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        worst_mean = worst_mean.max(mean.abs());
        worst_std = worst_std.max((var.sqrt() - 1.0).abs());
    }
    let second = run();
    let identical = first.iter().zip(&second).all(|(a, b)| {
        a.data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_le_bytes() == y.to_le_bytes())
    });
    let secs = start.elapsed().as_secs_f64();
    verdict(
        7,
        shape_ok && worst_mean < 1e-6 && worst_std < 1e-6 && identical && secs < 60.0,
        format!(
            "10000 samples, shapes ok: {shape_ok}, max |mean| {worst_mean:.1e}, max |std-1| {worst_std:.1e}, reproducible: {identical}, {secs:.1}s"
        ),
    );
}

#[test]
fn criterion_8_checkpoint_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec::grid(48, 4, 6, 5);
    let ds = spec.generate_to(&dir.path().join("data")).unwrap();
    let mut model = ModelConfig::reduced();
    model.num_classes = 4;
    let mut net = Network::build(&model).unwrap();
    let set = synthetic_training_set(&spec, 24);
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    train(&mut net, &set, &[], &cfg, |_| {}).unwrap();

    let path = dir.path().join("a.ckpt");
    save_checkpoint(&net, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    let path2 = dir.path().join("b.ckpt");
    save_checkpoint(&loaded, &path2).unwrap();
    let bytes_equal = std::fs::read(&path).unwrap() == std::fs::read(&path2).unwrap();
    let default_net = Network::build(&ModelConfig::default()).unwrap();
    let default_bytes = to_bytes(&default_net).unwrap();
    let default_equal = to_bytes(&from_bytes(&default_bytes).unwrap()).unwrap() == default_bytes;

    let site = Site::last(&net);
    let a = harvest(&net, &ds.manifest, site, "all").unwrap();
    let b = harvest(&loaded, &ds.manifest, site, "all").unwrap();
    let rows_equal = a.records() == b.records() && a.to_csv() == b.to_csv();
    verdict(
        8,
        bytes_equal && default_equal && rows_equal,
        format!(
            "save-load-save identical: {bytes_equal} (default model: {default_equal}); {} harvest rows identical: {rows_equal}",
            a.records().len()
        ),
    );
}

fn run_cli_pipeline(out: &Path, config: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_auprobe"))
        .args(["pipeline", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .env("AUPROBE_SEED", "4")
        .output()
        .unwrap()
}

#[test]
fn criterion_9_pipeline_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.txt");
    std::fs::write(
        &config,
        "input_size = 48\nconv_channels = 8,16,32\nnum_classes = 4\ntest_count = 40\nepochs = 3\n",
    )
    .unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ra = run_cli_pipeline(&a, &config);
    let rb = run_cli_pipeline(&b, &config);
    let exit_ok = ra.status.success() && rb.status.success();
    let mut same_profiles = exit_ok;
    let mut compared = 0;
    if exit_ok {
        for au in 1..=4 {
            let f = format!("profiles/au_{au}.csv");
            let (x, y) = (std::fs::read(a.join(&f)), std::fs::read(b.join(&f)));
            same_profiles &= matches!((&x, &y), (Ok(x), Ok(y)) if x == y);
            compared += 1;
        }
    }
    let argmax = |d: &Path| -> Vec<String> {
        std::fs::read_to_string(d.join("summary/index.csv"))
            .unwrap_or_default()
            .lines()
            .skip(1)
            .map(|l| l.split(',').take(2).collect::<Vec<_>>().join(":"))
            .collect()
    };
    let (ma, mb) = (argmax(&a), argmax(&b));
    let same_argmax = !ma.is_empty() && ma == mb;
    if !exit_ok {
        eprintln!("{}", String::from_utf8_lossy(&ra.stderr));
    }
    verdict(
        9,
        exit_ok && same_profiles && same_argmax,
        format!(
            "exit ok: {exit_ok}, {compared} profile CSVs identical: {same_profiles}, argmax maps {ma:?} vs {mb:?}"
        ),
    );
}
