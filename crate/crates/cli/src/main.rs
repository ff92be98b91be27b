use std::path::{Path, PathBuf};
use std::process::ExitCode;

use auprobe::association::DEFAULT_TOP_N;
use auprobe::data::{eval_transform, DatasetManifest, SyntheticSpec};
use auprobe::deconv::{project, receptive_field, render_response, Site};
use auprobe::harvest::{harvest, net_identity, ActivationDb};
use auprobe::model::{load_checkpoint, RunConfig};
use auprobe::pipeline::{
    associate_stage, run_pipeline, train_stage, PipelineError, PipelineInput, StageError,
};
use auprobe::report::montage;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "auprobe",
    version,
    about = "Train an expression CNN and find its action-unit detector maps"
)]
struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic action-unit dataset.
    Synth {
        /// Spec JSON; the bundled default spec when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from scratch and write a checkpoint plus per-epoch metrics.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: PathBuf,
    },
    /// Record every map's maximum activation for every image.
    Harvest {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Split name stored in the database provenance.
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Deconvolution responses of one map's strongest images.
    Deconv {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        map: usize,
        #[arg(long, default_value_t = DEFAULT_TOP_N)]
        top: usize,
        /// Activation database to rank images by; harvested on the fly when omitted.
        #[arg(long)]
        db: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Distance profiles, detector maps and the per-AU summary.
    Associate {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Network the database was harvested from (used for montages).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated AU ids, or `all`.
        #[arg(long, default_value = "all")]
        au: String,
        #[arg(long, default_value_t = DEFAULT_TOP_N)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Every stage in order.
    Pipeline {
        #[arg(long, conflicts_with = "manifest")]
        spec: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        au: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ConfigArg {
    /// Flat `key = value` run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Self {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

fn fail(stage: &'static str, input: &Path, e: impl Into<StageError>) -> Failure {
    PipelineError::new(stage, input, e).into()
}

fn usage(message: String) -> Failure {
    Failure { code: 1, message }
}

fn load_config(arg: &ConfigArg) -> Result<RunConfig, Failure> {
    let mut cfg = match &arg.config {
        None => RunConfig::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(format!("config {}: {e}", path.display())))?;
            RunConfig::from_text(&text)
                .map_err(|e| usage(format!("config {}: {e}", path.display())))?
        }
    };
    if let Ok(v) = std::env::var("AUPROBE_SEED") {
        let seed = v.trim().parse().map_err(|_| {
            usage(format!(
                "AUPROBE_SEED must be an unsigned integer, got '{v}'"
            ))
        })?;
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn parse_aus(text: &str) -> Result<Option<Vec<u32>>, Failure> {
    if text == "all" {
        return Ok(None);
    }
    text.split(',')
        .map(|s| {
            s.trim().parse().map_err(|_| {
                usage(format!(
                    "--au expects 'all' or comma-separated ids, got '{text}'"
                ))
            })
        })
        .collect::<Result<Vec<u32>, _>>()
        .map(Some)
}

fn create_dir(dir: &Path, stage: &'static str) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|source| {
        fail(
            stage,
            dir,
            StageError::Io {
                path: dir.to_path_buf(),
                source,
            },
        )
    })
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Synth { spec, out } => {
            let spec = match &spec {
                Some(p) => SyntheticSpec::load(p).map_err(|e| fail("synth", p, e))?,
                None => SyntheticSpec::default(),
            };
            let ds = spec.generate_to(&out).map_err(|e| fail("synth", &out, e))?;
            for w in &ds.warnings {
                eprintln!("warning: {w}");
            }
            println!("wrote {} images to {}", ds.manifest.len(), out.display());
        }
        Command::Train {
            manifest,
            config,
            out,
            log,
        } => {
            let cfg = load_config(&config)?;
            let m = DatasetManifest::load(&manifest).map_err(|e| fail("train", &manifest, e))?;
            let dir = out
                .parent()
                .filter(|p| !p.as_os_str().is_empty())
                .unwrap_or(Path::new("."));
            create_dir(dir, "train")?;
            std::fs::write(dir.join("resolved_config.txt"), cfg.to_text()).map_err(|source| {
                fail(
                    "train",
                    dir,
                    StageError::Io {
                        path: dir.join("resolved_config.txt"),
                        source,
                    },
                )
            })?;
            let outcome = train_stage(&m, &cfg, &out, &log, |e| {
                eprintln!(
                    "epoch {} loss {:.4} train_acc {:.3}{}",
                    e.epoch,
                    e.train_loss,
                    e.train_acc,
                    e.test_acc
                        .map_or(String::new(), |a| format!(" test_acc {a:.3}"))
                )
            })?;
            println!(
                "trained {} epochs ({:?}); checkpoint {}",
                outcome.report.epochs.len(),
                outcome.report.stop,
                out.display()
            );
        }
        Command::Harvest {
            checkpoint,
            manifest,
            out,
            split,
        } => {
            let net = load_checkpoint(&checkpoint).map_err(|e| fail("harvest", &checkpoint, e))?;
            let m = DatasetManifest::load(&manifest).map_err(|e| fail("harvest", &manifest, e))?;
            let db = harvest(&net, &m, Site::last(&net), &split)
                .map_err(|e| fail("harvest", &manifest, e))?;
            db.write(&out).map_err(|e| fail("harvest", &out, e))?;
            println!("wrote {} records to {}", db.records().len(), out.display());
        }
        Command::Deconv {
            checkpoint,
            manifest,
            map,
            top,
            db,
            out,
        } => {
            let net = load_checkpoint(&checkpoint).map_err(|e| fail("deconv", &checkpoint, e))?;
            let m = DatasetManifest::load(&manifest).map_err(|e| fail("deconv", &manifest, e))?;
            let db = match &db {
                Some(p) => {
                    let db = ActivationDb::load(p).map_err(|e| fail("deconv", p, e))?;
                    db.verify(&net_identity(&net), &m.content_hash())
                        .map_err(|e| fail("deconv", p, e))?;
                    db
                }
                None => harvest(&net, &m, Site::last(&net), "all")
                    .map_err(|e| fail("deconv", &manifest, e))?,
            };
            if map >= db.num_maps() {
                return Err(usage(format!("--map {map} outside 0..{}", db.num_maps())));
            }
            create_dir(&out, "deconv")?;
            let mt = montage(&db, &net, &m, map, top, None).map_err(|e| fail("deconv", &out, e))?;
            for w in &mt.warnings {
                eprintln!("warning: {w}");
            }
            let site = db.provenance().site;
            let size = net.input_shape()[1];
            for (rank, rec) in mt.records.iter().enumerate() {
                let render = || -> Result<(), StageError> {
                    let x = eval_transform(&m.load_image(rec.image_id)?, size)?;
                    let trace = net.forward_trace(&x)?;
                    let p = project(&trace, &net, site, map, (rec.row, rec.col))?;
                    let rf = receptive_field(&net, site, (rec.row, rec.col))?;
                    let stem = format!("l{}_m{map}_r{}_i{}", site.stage, rank + 1, rec.image_id);
                    render_response(
                        &p,
                        &x,
                        rf,
                        &out.join(format!("{stem}_orig.png")),
                        &out.join(format!("{stem}_deconv.png")),
                    )?;
                    Ok(())
                };
                render().map_err(|e| fail("deconv", &out, e))?;
            }
            let (o, d) = (
                out.join(format!("map_{map}_orig.png")),
                out.join(format!("map_{map}_deconv.png")),
            );
            mt.original.write(&o).map_err(|e| fail("deconv", &o, e))?;
            mt.deconv.write(&d).map_err(|e| fail("deconv", &d, e))?;
            println!(
                "wrote {} responses for map {map} to {}",
                mt.records.len(),
                out.display()
            );
        }
        Command::Associate {
            db,
            manifest,
            checkpoint,
            au,
            n,
            out,
        } => {
            let aus = parse_aus(&au)?;
            if n == 0 {
                return Err(usage("--n must be at least 1".into()));
            }
            let net =
                load_checkpoint(&checkpoint).map_err(|e| fail("associate", &checkpoint, e))?;
            let m =
                DatasetManifest::load(&manifest).map_err(|e| fail("associate", &manifest, e))?;
            let d = ActivationDb::load(&db).map_err(|e| fail("associate", &db, e))?;
            d.verify(&net_identity(&net), &m.content_hash())
                .map_err(|e| fail("associate", &db, e))?;
            create_dir(&out, "associate")?;
            let (profiles, _, warnings) = associate_stage(&d, &net, &m, aus.as_deref(), n, &out)?;
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            for p in &profiles {
                println!(
                    "AU {}: map {} (distance {:.6})",
                    p.au_id,
                    p.argmax_map,
                    p.max_distance()
                );
            }
        }
        Command::Pipeline {
            spec,
            manifest,
            config,
            au,
            out,
        } => {
            let cfg = load_config(&config)?;
            let aus = match &au {
                Some(text) => parse_aus(text)?,
                None => None,
            };
            let input = match (spec, manifest) {
                (_, Some(m)) => PipelineInput::Manifest(m),
                (Some(p), None) => {
                    PipelineInput::Spec(SyntheticSpec::load(&p).map_err(|e| fail("synth", &p, e))?)
                }
                (None, None) => PipelineInput::Spec(SyntheticSpec::default()),
            };
            create_dir(&out, "setup")?;
            let outcome = run_pipeline(&input, &cfg, &out, aus.as_deref(), |line| {
                eprintln!("{line}")
            })?;
            for p in &outcome.profiles {
                println!(
                    "AU {}: map {} (distance {:.6})",
                    p.au_id,
                    p.argmax_map,
                    p.max_distance()
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build_global()
    {
        eprintln!("error: thread pool: {e}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
