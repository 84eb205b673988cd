//! Command-line front end: synthesize datasets, corrupt labels, run a
//! training job, and score checkpoints on retrieval.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use cleave::correct::export_correction;
use cleave::data::{
    generate_synthetic, inject_noise, load_dataset, save_dataset, NoiseKind, NoiseSpec,
    SynthConfig,
};
use cleave::eval::{export_histogram, map_retrieval, EvalError};
use cleave::net::{forward_embed, load_checkpoint, save_checkpoint};
use cleave::pipeline::{train_run_with_observer, PipelineError, TrainConfig};

#[derive(Parser)]
#[command(name = "cleave")]
#[command(about = "Noise-robust cross-modal retrieval training on feature vectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multimodal dataset directory.
    Generate {
        /// Output dataset directory (created if missing).
        #[arg(long)]
        out: PathBuf,

        /// Feature width of each modality, comma separated (length sets the
        /// number of modalities).
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,

        /// Samples per class.
        #[arg(long, default_value_t = 100)]
        n_per_class: usize,

        /// Number of classes.
        #[arg(long, default_value_t = 10)]
        n_classes: usize,

        /// Class prototype components are uniform in [-scale, +scale].
        #[arg(long, default_value_t = 1.0)]
        prototype_scale: f64,

        /// Standard deviation of the isotropic jitter around each prototype.
        #[arg(long, default_value_t = 0.25)]
        cluster_std: f64,

        /// Per-modality probability that a sample's features are drawn
        /// around a wrong class's prototype, comma separated. Defaults to
        /// all zeros.
        #[arg(long, value_delimiter = ',')]
        corruption: Option<Vec<f64>>,

        #[arg(long, default_value_t = 0)]
        seed: u64,
    },

    /// Copy a dataset with label noise injected into its training labels.
    Noise {
        /// Input dataset directory.
        #[arg(long = "in", value_name = "DIR")]
        input: PathBuf,

        /// Output dataset directory (created if missing).
        #[arg(long)]
        out: PathBuf,

        /// Noise structure.
        #[arg(long, value_enum)]
        kind: KindArg,

        /// Fraction of labels to corrupt.
        #[arg(long)]
        rate: f64,

        #[arg(long, default_value_t = 0)]
        seed: u64,
    },

    /// Run a training job, streaming metrics and per-epoch artifacts.
    Train {
        /// Input dataset directory.
        #[arg(long)]
        data: PathBuf,

        /// JSON training configuration file.
        #[arg(long)]
        config: PathBuf,

        /// Output directory: config_echo.json, metrics.jsonl, per-epoch
        /// histogram/correction CSVs, and the final checkpoint/.
        #[arg(long)]
        out: PathBuf,
    },

    /// Embed a dataset with a trained checkpoint and print retrieval mAP
    /// for every ordered modality pair as JSON.
    Eval {
        /// Dataset directory to embed and rank.
        #[arg(long)]
        data: PathBuf,

        /// Checkpoint directory written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    /// Flip to a uniformly random different class.
    Symmetric,
    /// Flip to the cyclically next class.
    Asymmetric,
}

impl From<KindArg> for NoiseKind {
    fn from(kind: KindArg) -> Self {
        match kind {
            KindArg::Symmetric => NoiseKind::Symmetric,
            KindArg::Asymmetric => NoiseKind::Asymmetric,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stage = match &cli.command {
        Command::Generate { .. } => "generate",
        Command::Noise { .. } => "noise",
        Command::Train { .. } => "train",
        Command::Eval { .. } => "eval",
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error in {stage}: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate {
            out,
            dims,
            n_per_class,
            n_classes,
            prototype_scale,
            cluster_std,
            corruption,
            seed,
        } => {
            let modality_corruption = corruption.unwrap_or_else(|| vec![0.0; dims.len()]);
            let cfg = SynthConfig {
                n_per_class,
                n_classes,
                dims,
                prototype_scale,
                cluster_std,
                modality_corruption,
                seed,
            };
            let ds = generate_synthetic(&cfg)?;
            save_dataset(&ds, &out)
                .with_context(|| format!("writing {}", out.display()))?;
            println!(
                "wrote {} samples x {} modalities to {}",
                ds.n_samples(),
                ds.n_modalities(),
                out.display()
            );
            Ok(())
        }
        Command::Noise { input, out, kind, rate, seed } => {
            let mut ds = load_dataset(&input)
                .with_context(|| format!("loading {}", input.display()))?;
            ds.noisy_labels = inject_noise(
                &ds.noisy_labels,
                &NoiseSpec { kind: kind.into(), rate, seed },
                ds.n_classes,
            )?;
            save_dataset(&ds, &out)
                .with_context(|| format!("writing {}", out.display()))?;
            println!("wrote noised copy to {}", out.display());
            Ok(())
        }
        Command::Train { data, config, out } => cmd_train(&data, &config, &out),
        Command::Eval { data, checkpoint } => cmd_eval(&data, &checkpoint),
    }
}

/// Lifts artifact-writer I/O and serialization failures into the error type
/// the training observer is allowed to return.
fn stream_err<E>(err: E) -> PipelineError
where
    E: Into<Box<dyn std::error::Error + Send + Sync>>,
{
    PipelineError::from(EvalError::from(std::io::Error::other(err)))
}

fn cmd_train(data: &Path, config_path: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(config_path)
        .with_context(|| format!("reading {}", config_path.display()))?;
    let config: TrainConfig = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", config_path.display()))?;
    let ds = load_dataset(data).with_context(|| format!("loading {}", data.display()))?;

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut echo = serde_json::to_string_pretty(&config)?;
    echo.push('\n');
    fs::write(out.join("config_echo.json"), echo).context("writing config_echo.json")?;

    let mut metrics = std::io::BufWriter::new(
        fs::File::create(out.join("metrics.jsonl")).context("creating metrics.jsonl")?,
    );
    let report = train_run_with_observer(&ds, &config, |record| {
        let line = serde_json::to_string(record.metrics).map_err(stream_err)?;
        writeln!(metrics, "{line}").map_err(stream_err)?;
        let epoch = record.metrics.epoch;
        if let Some(d) = &record.division {
            export_histogram(
                d.normalized_losses,
                &d.division.credibility,
                &d.division.clean_mask,
                d.label_is_true,
                &out.join(format!("histogram_epoch_{epoch}.csv")),
            )?;
        }
        if let Some(r) = &record.routing {
            export_correction(
                r.plan,
                r.state,
                r.true_labels,
                &out.join(format!("correction_epoch_{epoch}.csv")),
            )?;
        }
        Ok(())
    })?;
    metrics.flush().context("flushing metrics.jsonl")?;

    save_checkpoint(&report.final_params, &report.arch, &out.join("checkpoint"))
        .context("writing checkpoint")?;
    let last = report.epochs.last().expect("at least one epoch");
    println!(
        "trained {} epochs in {:.1}s; final mean mAP {}",
        report.epochs.len(),
        report.wall_time_secs,
        match mean_map(&last.map) {
            Some(v) => format!("{v:.4}"),
            None => "n/a (no held-out split)".into(),
        }
    );
    Ok(())
}

fn mean_map(map: &BTreeMap<String, f64>) -> Option<f64> {
    if map.is_empty() {
        return None;
    }
    Some(map.values().sum::<f64>() / map.len() as f64)
}

fn cmd_eval(data: &Path, checkpoint: &Path) -> Result<()> {
    let ds = load_dataset(data).with_context(|| format!("loading {}", data.display()))?;
    let (arch, params) =
        load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let dims: Vec<usize> = ds.modalities.iter().map(|b| b.dim()).collect();
    if arch.input_dims != dims {
        bail!(
            "checkpoint expects feature widths {:?}, dataset has {:?}",
            arch.input_dims,
            dims
        );
    }

    let labels = ds.true_labels.as_ref().unwrap_or(&ds.noisy_labels);
    let mut embeds = Vec::with_capacity(ds.n_modalities());
    for (j, block) in ds.modalities.iter().enumerate() {
        embeds.push(
            forward_embed(&params, block.features.view(), j)
                .with_context(|| format!("embedding modality {}", block.name))?,
        );
    }
    let mut map = BTreeMap::new();
    for (a, block_a) in ds.modalities.iter().enumerate() {
        for (b, block_b) in ds.modalities.iter().enumerate() {
            if a == b {
                continue;
            }
            let r = map_retrieval(embeds[a].view(), labels, embeds[b].view(), labels)
                .with_context(|| format!("ranking {}->{}", block_a.name, block_b.name))?;
            map.insert(format!("{}->{}", block_a.name, block_b.name), r.map);
        }
    }
    println!("{}", serde_json::to_string_pretty(&serde_json::json!({ "map": map }))?);
    Ok(())
}
