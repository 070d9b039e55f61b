//! Thin command-line front end over the pipeline library: parse flags,
//! overlay them onto the run configuration, dispatch, print a summary.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Print to stdout, ignoring broken pipes (e.g. output piped to `head`).
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

use malsiam::error::{MalsiamError, Result};
use malsiam::pipeline::{
    self, cmd_augment, cmd_eval, cmd_extract, cmd_plot, cmd_synth, cmd_train, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "malsiam",
    about = "Few-shot malware-variant classification on synthetic obfuscated binaries",
    long_about = "Generates a synthetic obfuscated program corpus, extracts entropy/image \
                  features, trains a task-aware Siamese network, and evaluates it with \
                  N-way K-shot episodes. Artifact directories default to \
                  $MALSIAM_CACHE/<config digest>/<stage>.",
    version
)]
struct Cli {
    /// Run configuration file (TOML); omitted keys use built-in defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct SeedOverrides {
    /// Override the corpus generation seed.
    #[arg(long, value_name = "N")]
    seed_corpus: Option<u64>,
    /// Override the training seed.
    #[arg(long, value_name = "N")]
    seed_train: Option<u64>,
    /// Override the evaluation seed.
    #[arg(long, value_name = "N")]
    seed_eval: Option<u64>,
}

impl SeedOverrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed_corpus {
            cfg.seeds.corpus = s;
        }
        if let Some(s) = self.seed_train {
            cfg.seeds.train = s;
        }
        if let Some(s) = self.seed_eval {
            cfg.seeds.eval = s;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic obfuscated corpus and its manifest.
    Synth {
        /// Corpus output directory.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Number of malware families.
        #[arg(long, value_name = "N")]
        families: Option<usize>,
        /// Total samples per family (originals + variants).
        #[arg(long, value_name = "N")]
        samples_per_family: Option<usize>,
        /// Unobfuscated originals per family.
        #[arg(long, value_name = "N")]
        originals_per_family: Option<usize>,
        #[command(flatten)]
        seeds: SeedOverrides,
    },
    /// Extract entropy graphs, images, and task features from a corpus.
    Extract {
        /// Corpus directory (from `synth`).
        #[arg(long, value_name = "DIR")]
        corpus: Option<PathBuf>,
        /// Feature output directory.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Bytes per entropy segment.
        #[arg(long, value_name = "N")]
        segment_length: Option<usize>,
        /// Entropy graph shape as HEIGHTxWIDTH, e.g. 254x254.
        #[arg(long, value_name = "HxW")]
        graph_shape: Option<String>,
        /// Fixed row width when rasterizing bytes to an image.
        #[arg(long, value_name = "N")]
        image_width: Option<usize>,
        /// Seed of the frozen task-feature encoder.
        #[arg(long, value_name = "N")]
        encoder_seed: Option<u64>,
        /// Output dimension of the frozen encoder.
        #[arg(long, value_name = "N")]
        encoder_dim: Option<usize>,
        /// Use inputs even if their config digest does not match.
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        seeds: SeedOverrides,
    },
    /// Write augmented variants of every extracted image.
    Augment {
        /// Feature directory (from `extract`).
        #[arg(long, value_name = "DIR")]
        features: Option<PathBuf>,
        /// Output directory for augmented images.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Augmented draws per image.
        #[arg(long, default_value_t = 3, value_name = "N")]
        count: usize,
        /// Use inputs even if their config digest does not match.
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        seeds: SeedOverrides,
    },
    /// Train the task-aware Siamese network.
    Train {
        /// Feature directory (from `extract`).
        #[arg(long, value_name = "DIR")]
        features: Option<PathBuf>,
        /// Model output directory (checkpoint + loss series).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Resume from an existing checkpoint file.
        #[arg(long, value_name = "FILE")]
        resume: Option<PathBuf>,
        /// Total epoch target (resume continues toward it).
        #[arg(long, value_name = "N")]
        epochs: Option<usize>,
        /// Pairs per training batch.
        #[arg(long, value_name = "N")]
        batch_size: Option<usize>,
        /// Learning rate for the main network.
        #[arg(long, value_name = "LR")]
        lr_main: Option<f64>,
        /// Learning rate for the meta-learner.
        #[arg(long, value_name = "LR")]
        lr_meta: Option<f64>,
        /// Disable training-time image augmentation.
        #[arg(long)]
        no_augment: bool,
        /// Use inputs even if their config digest does not match.
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        seeds: SeedOverrides,
    },
    /// Evaluate a checkpoint over the N-way K-shot grid.
    Eval {
        /// Feature directory (from `extract`).
        #[arg(long, value_name = "DIR")]
        features: Option<PathBuf>,
        /// Model directory (from `train`).
        #[arg(long, value_name = "DIR")]
        model: Option<PathBuf>,
        /// Report output directory.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Way counts, comma separated (e.g. 5,10,15).
        #[arg(long, value_delimiter = ',', value_name = "N,..")]
        ways: Option<Vec<usize>>,
        /// Shot counts, comma separated (e.g. 1,5).
        #[arg(long, value_delimiter = ',', value_name = "N,..")]
        shots: Option<Vec<usize>>,
        /// Episodes per grid cell.
        #[arg(long, value_name = "N")]
        episodes: Option<usize>,
        /// Use inputs even if their config digest does not match.
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        seeds: SeedOverrides,
    },
    /// Render loss, ROC, and PCA charts from train/eval artifacts.
    Plot {
        /// Model directory holding the loss series.
        #[arg(long, value_name = "DIR")]
        model: Option<PathBuf>,
        /// Report directory holding the evaluation report.
        #[arg(long, value_name = "DIR")]
        report: Option<PathBuf>,
        /// Chart output directory.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Print the effective configuration (after overrides) as TOML.
    Config {
        #[command(flatten)]
        seeds: SeedOverrides,
    },
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_toml_path(p),
        None => Ok(RunConfig::default()),
    }
}

fn parse_graph_shape(s: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = s.split(['x', 'X']).collect();
    let bad = || MalsiamError::Config(format!("--graph-shape expects HEIGHTxWIDTH, got '{s}'"));
    if parts.len() != 2 {
        return Err(bad());
    }
    let h = parts[0].parse().map_err(|_| bad())?;
    let w = parts[1].parse().map_err(|_| bad())?;
    Ok((h, w))
}

fn stage_dir(explicit: Option<PathBuf>, cfg: &RunConfig, stage: &str) -> PathBuf {
    explicit.unwrap_or_else(|| pipeline::default_stage_dir(cfg, stage))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(cli.config.as_ref())?;
    match cli.command {
        Command::Synth {
            out,
            families,
            samples_per_family,
            originals_per_family,
            seeds,
        } => {
            seeds.apply(&mut cfg);
            if let Some(n) = families {
                cfg.corpus.families = n;
                cfg.model.n_families = n;
            }
            if let Some(n) = samples_per_family {
                cfg.corpus.samples_per_family = n;
            }
            if let Some(n) = originals_per_family {
                cfg.corpus.originals_per_family = n;
            }
            let dir = stage_dir(out, &cfg, "corpus");
            let summary = cmd_synth(&cfg, &dir)?;
            say!(
                "wrote {} samples across {} families to {}",
                summary.n_files,
                summary.manifest.families.len(),
                dir.display()
            );
            say!("manifest digest: {}", summary.manifest_digest);
        }
        Command::Extract {
            corpus,
            out,
            segment_length,
            graph_shape,
            image_width,
            encoder_seed,
            encoder_dim,
            force,
            seeds,
        } => {
            seeds.apply(&mut cfg);
            if let Some(n) = segment_length {
                cfg.features.segment_length = n;
            }
            if let Some(s) = &graph_shape {
                let (h, w) = parse_graph_shape(s)?;
                cfg.features.graph_height = h;
                cfg.features.graph_width = w;
            }
            if let Some(n) = image_width {
                cfg.features.image_width = n;
            }
            if let Some(n) = encoder_seed {
                cfg.features.encoder_seed = n;
            }
            if let Some(n) = encoder_dim {
                cfg.features.encoder_dim = n;
                cfg.model.task_input_dim = n;
            }
            let corpus_dir = stage_dir(corpus, &cfg, "corpus");
            let dir = stage_dir(out, &cfg, "features");
            let manifest = cmd_extract(&cfg, &corpus_dir, &dir, force)?;
            say!(
                "extracted {} samples ({} families, task dim {}) to {}",
                manifest.items.len(),
                manifest.families.len(),
                manifest.encoder_dim,
                dir.display()
            );
        }
        Command::Augment {
            features,
            out,
            count,
            force,
            seeds,
        } => {
            seeds.apply(&mut cfg);
            let features_dir = stage_dir(features, &cfg, "features");
            let dir = stage_dir(out, &cfg, "augmented");
            let summary = cmd_augment(&cfg, &features_dir, &dir, count, force)?;
            say!(
                "wrote {} augmented images ({} per sample) to {}",
                summary.written,
                summary.per_image,
                dir.display()
            );
        }
        Command::Train {
            features,
            out,
            resume,
            epochs,
            batch_size,
            lr_main,
            lr_meta,
            no_augment,
            force,
            seeds,
        } => {
            seeds.apply(&mut cfg);
            if let Some(n) = epochs {
                cfg.training.epochs = n;
            }
            if let Some(n) = batch_size {
                cfg.training.batch_size = n;
            }
            if let Some(lr) = lr_main {
                cfg.training.lr_main = lr;
            }
            if let Some(lr) = lr_meta {
                cfg.training.lr_meta = lr;
            }
            if no_augment {
                cfg.training.augment = false;
            }
            let features_dir = stage_dir(features, &cfg, "features");
            let dir = stage_dir(out, &cfg, "model");
            let summary = cmd_train(&cfg, &features_dir, &dir, resume.as_deref(), force)?;
            for e in &summary.epochs {
                match e.val_total {
                    Some(v) => say!(
                        "epoch {:>3}: train {:.4}  val {:.4}",
                        e.epoch, e.train_total, v
                    ),
                    None => say!("epoch {:>3}: train {:.4}", e.epoch, e.train_total),
                }
            }
            say!(
                "checkpoint after {} epochs: {}",
                summary.epochs_done,
                summary.checkpoint_path.display()
            );
        }
        Command::Eval {
            features,
            model,
            out,
            ways,
            shots,
            episodes,
            force,
            seeds,
        } => {
            seeds.apply(&mut cfg);
            if let Some(w) = ways {
                cfg.eval.ways = w;
            }
            if let Some(s) = shots {
                cfg.eval.shots = s;
            }
            if let Some(m) = episodes {
                cfg.eval.episodes = m;
            }
            let features_dir = stage_dir(features, &cfg, "features");
            let model_dir = stage_dir(model, &cfg, "model");
            let dir = stage_dir(out, &cfg, "report");
            let report = cmd_eval(&cfg, &features_dir, &model_dir, &dir, force)?;
            for cell in &report.cells {
                say!(
                    "{:>2}-way {}-shot: accuracy {:.1}% ({}/{}), AUC {:.3}, \
                     confusion tp={} fp={} tn={} fn={}",
                    cell.n_way,
                    cell.k_shot,
                    cell.accuracy,
                    cell.correct,
                    cell.episodes,
                    cell.auc,
                    cell.confusion.tp,
                    cell.confusion.fp,
                    cell.confusion.tn,
                    cell.confusion.fn_
                );
            }
            say!("report: {}", dir.join(pipeline::REPORT_FILE).display());
        }
        Command::Plot { model, report, out } => {
            let dir = stage_dir(out, &cfg, "plots");
            let model_dir = model.or_else(|| {
                let d = pipeline::default_stage_dir(&cfg, "model");
                d.join(pipeline::LOSS_FILE).exists().then_some(d)
            });
            let report_dir = report.or_else(|| {
                let d = pipeline::default_stage_dir(&cfg, "report");
                d.join(pipeline::REPORT_FILE).exists().then_some(d)
            });
            let written = cmd_plot(model_dir.as_deref(), report_dir.as_deref(), &dir)?;
            for path in written {
                say!("wrote {}", path.display());
            }
        }
        Command::Config { seeds } => {
            seeds.apply(&mut cfg);
            cfg.validate()?;
            say!("{}", cfg.to_toml().trim_end());
            say!("\n# config digest: {}", cfg.digest());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
