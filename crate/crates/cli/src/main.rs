use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use scribcod::debate::AcceptanceManifest;
use scribcod::fadenet::{Checkpoint, DType, FadeNet};
use scribcod::pipeline::{
    analyze_bias, dump_features, evaluate, ingest_dataset, load_eval_set, prepare_training_set, pseudo_manifest_path,
    run_stage1, write_fixture_corpus, write_histogram, write_prompts, BiasSources, PipelineConfig, Split,
    Stage1Backends, Stage1Options, Trainer,
};
use scribcod::raster::ColorImage;
use scribcod::{Error, Result};

#[derive(Parser)]
#[command(name = "scribcod", version, about = "Scribble-supervised camouflaged object detection")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML file overriding the selected preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Start from the toy preset instead of the full-scale one.
    #[arg(long, global = true)]
    toy: bool,
    #[arg(long, global = true, value_enum, default_value_t = LogFormat::Text)]
    log_format: LogFormat,
}

#[derive(Clone, Copy, ValueEnum)]
enum LogFormat {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Print the resolved configuration as TOML.
    ShowConfig,
    /// Write a synthetic dataset (images, scribbles, ground truth).
    MakeFixtures {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Sample point prompts from scribbles.
    SamplePrompts {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate candidate masks and keep those the debate retains.
    PseudoLabel {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Stop after this many newly processed images; rerun to resume.
        #[arg(long)]
        max_images: Option<usize>,
        /// Record logical instead of wall-clock timestamps.
        #[arg(long)]
        logical_clock: bool,
    },
    /// Train the segmentation network on pseudo labels and scribbles.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Output directory of `pseudo-label`.
        #[arg(long)]
        pseudo: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many epochs; resume later from the last checkpoint.
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Score a checkpoint against ground-truth masks.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Dataset name used in the tables; defaults to the directory name.
        #[arg(long)]
        name: Option<String>,
    },
    /// Histogram of relative distances to object boundaries.
    AnalyzeBias {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Output directory of `pseudo-label`, to include pseudo-mask pixels.
        #[arg(long)]
        pseudo: Option<PathBuf>,
        /// Checkpoint whose scribble head supplies high-response pixels.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Save fused feature maps of one image as PNG grids.
    DumpFeatures {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn init_logging(format: LogFormat) {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into());
    let builder = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr);
    match format {
        LogFormat::Text => builder.init(),
        LogFormat::Json => builder.json().init(),
    }
}

fn resolve_config(global: &GlobalArgs) -> Result<(PipelineConfig, PathBuf)> {
    let base = PipelineConfig::preset(global.toy);
    let (mut cfg, base_dir) = match &global.config {
        Some(path) => {
            let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (PipelineConfig::load(path, &base)?, dir)
        }
        None => (base, PathBuf::from(".")),
    };
    if let Some(seed) = global.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok((cfg, base_dir))
}

fn load_network(path: &Path) -> Result<FadeNet> {
    Checkpoint::load(path)?.build_network(DType::F32)
}

fn dataset_name(data: &Path) -> String {
    data.file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("dataset")
        .to_string()
}

fn run(cli: Cli) -> Result<()> {
    let (cfg, base_dir) = resolve_config(&cli.global)?;
    match cli.command {
        Command::ShowConfig => print!("{}", cfg.to_toml_string()?),
        Command::MakeFixtures { out, count, size } => {
            let samples = write_fixture_corpus(&out, &cfg.layout, count, size, cfg.train.seed)?;
            println!("wrote {} fixture images to {}", samples.len(), out.display());
        }
        Command::SamplePrompts { data, out } => {
            let manifest = ingest_dataset(&data, &cfg.layout, Split::Train)?;
            let mut written = 0;
            for record in manifest.usable() {
                match write_prompts(record, &cfg.sampling, &out) {
                    Ok(_) => written += 1,
                    Err(e @ Error::EmptyAnnotation(_)) => {
                        tracing::warn!(image_id = %record.image_id, error = %e, "no prompts sampled")
                    }
                    Err(e) => return Err(e),
                }
            }
            println!("sampled prompts for {written} images into {}", out.display());
        }
        Command::PseudoLabel {
            data,
            out,
            max_images,
            logical_clock,
        } => {
            let manifest = ingest_dataset(&data, &cfg.layout, Split::Train)?;
            let backends = Stage1Backends::from_config(&cfg.debate, &manifest, &base_dir)?;
            let options = Stage1Options {
                sampling: cfg.sampling,
                max_parallel: cfg.debate.max_parallel,
                logical_clock,
                max_new_images: max_images,
            };
            let summary = run_stage1(&manifest, &backends, &options, &out)?;
            println!(
                "{} pseudo masks accepted over {} processed images{}",
                summary.manifest.entries.len(),
                summary.progress.images.len(),
                if summary.complete { "" } else { " (incomplete; rerun to resume)" }
            );
        }
        Command::Train {
            data,
            pseudo,
            out,
            resume,
            max_epochs,
        } => {
            let manifest = ingest_dataset(&data, &cfg.layout, Split::Train)?;
            let accepted = AcceptanceManifest::load(pseudo_manifest_path(&pseudo))?;
            let samples = prepare_training_set(&manifest, &accepted, &pseudo, &cfg)?;
            let mut trainer = match &resume {
                Some(ckpt) => Trainer::resume(cfg.clone(), ckpt)?,
                None => Trainer::new(cfg.clone())?,
            };
            let report = trainer.run(&samples, Some(&out), max_epochs)?;
            let last = report.history.last().map_or(f64::NAN, |s| s.loss.total);
            println!(
                "trained {} steps on {} images; final loss {last:.4}; checkpoint {}",
                report.history.len(),
                samples.len(),
                report.checkpoint.as_deref().map_or("none".into(), |p| p.display().to_string())
            );
        }
        Command::Evaluate {
            checkpoint,
            data,
            out,
            name,
        } => {
            let net = load_network(&checkpoint)?;
            let manifest = ingest_dataset(&data, &cfg.layout, Split::Eval)?;
            let samples = load_eval_set(&manifest)?;
            let table = evaluate(&net, &samples, &name.unwrap_or_else(|| dataset_name(&data)))?;
            table.write(&out)?;
            println!("{table}");
        }
        Command::AnalyzeBias {
            data,
            out,
            pseudo,
            checkpoint,
        } => {
            let manifest = ingest_dataset(&data, &cfg.layout, Split::Eval)?;
            let accepted = pseudo
                .as_ref()
                .map(|dir| AcceptanceManifest::load(pseudo_manifest_path(dir)))
                .transpose()?;
            let net = checkpoint.as_deref().map(load_network).transpose()?;
            let sources = BiasSources {
                pseudo: accepted.as_ref().zip(pseudo.as_deref()),
                network: net.as_ref(),
            };
            let hist = analyze_bias(&manifest, &sources, &cfg.analysis)?;
            let files = write_histogram(&hist, &out)?;
            print!("{}", hist.to_csv());
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Command::DumpFeatures { checkpoint, image, out } => {
            let net = load_network(&checkpoint)?;
            let img = ColorImage::load(&image)?;
            let stem = image.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
            for f in dump_features(&net, &img, &out, stem, cfg.analysis.dump_channels)? {
                println!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.global.log_format);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
