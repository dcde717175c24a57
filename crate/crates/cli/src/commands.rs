//! The `train`, `explain` and `evaluate` subcommands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use patchscope_core::evaluation::{
    convergence_study, generate_dataset, images_and_labels, localization_study, patch_localization,
    train_validation_split, LabeledImage, SecondaryConfig, StudyConfig, POSITIVE,
};
use patchscope_core::explain::{explain, ExplainConfig};
use patchscope_core::importance::{LayerRange, PrecisionConfig};
use patchscope_core::network::{accuracy, reference_architecture, train, Checkpoint, TrainConfig, REFERENCE_INPUT};
use patchscope_core::perturbation::PerturbationConfig;
use patchscope_core::stats::spearman;
use patchscope_core::{Metric, NetworkSpec, Rng};

use crate::container::{self, Manifest};
use crate::dataset::{quantize_dataset, read_dataset, write_dataset};
use crate::error::{Error, Result};
use crate::report::{self, Bands, RunManifest};
use crate::{pnm, write_file};

pub const MANIFEST_FILE: &str = "network.manifest";

#[derive(Debug, Parser)]
#[command(name = "patchscope", version, about = "Explain CNN predictions with perturbation-ranked neurons and deconvolved patches")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the reference classifier, writing one checkpoint per epoch.
    Train(TrainArgs),
    /// Rank neurons for one image and extract their patches.
    Explain(ExplainArgs),
    /// Convergence, secondary-classifier and localization study over checkpoints.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["data", "synthetic"])))]
pub struct TrainArgs {
    /// Dataset directory with index.tsv.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Generate this many synthetic images instead.
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f32,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Perturbation, selection and patch options shared by `explain` and
/// `evaluate`.
#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Number of perturbed samples.
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    /// Standard deviation of the multiplicative noise.
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    /// Neurons kept per layer.
    #[arg(long, default_value_t = 5)]
    pub top: usize,
    /// Conv layers to rank, 1-based inclusive, e.g. 2..6.
    #[arg(long, default_value = "2..6")]
    pub layers: LayerRange,
    /// Patch threshold relative to the reconstruction peak.
    #[arg(long, default_value_t = 0.1)]
    pub eps: f32,
    /// Minimum mean |z| for activation precision.
    #[arg(long, default_value_t = 1e-3)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl PipelineArgs {
    pub fn config(&self) -> Result<ExplainConfig> {
        let cfg = ExplainConfig {
            perturbation: PerturbationConfig {
                n: self.n,
                sigma: self.sigma,
                mean: 1.0,
                seed: self.seed,
            },
            selection: PrecisionConfig {
                lambda: self.lambda,
                top_n: self.top,
                layers: self.layers,
            },
            eps: self.eps,
        };
        cfg.perturbation.validate().map_err(usage)?;
        cfg.selection.validate().map_err(usage)?;
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(Error::Usage(format!("--eps must lie in (0, 1], got {}", self.eps)));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Input image (P6).
    #[arg(long)]
    pub image: PathBuf,
    /// Optional object mask (P5); adds localization ratios to the summary.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Metric name, comma-separated list, or `all`.
    #[arg(long, default_value = "act-precision")]
    pub metric: String,
    /// Annotation band edges GREEN_FROM,BLUE_FROM (conv layer indices).
    #[arg(long, default_value = "3,5")]
    pub bands: Bands,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory written by `train` (network.manifest and epoch_NNN.nnwc).
    #[arg(long)]
    pub checkpoints: PathBuf,
    /// Dataset directory; the validation split is the last 20%.
    #[arg(long)]
    pub data: PathBuf,
    /// Metrics for the secondary classifier and localization tables.
    #[arg(long, default_value = "all")]
    pub metrics: String,
    /// Validation images used as Jaccard probes.
    #[arg(long, default_value_t = 8)]
    pub probes: usize,
    /// Validation images whose patches train the secondary classifier
    /// (0 skips it).
    #[arg(long, default_value_t = 40)]
    pub secondary_images: usize,
    #[arg(long, default_value_t = 15)]
    pub secondary_epochs: usize,
    /// Masked positive validation images for the localization table.
    #[arg(long, default_value_t = 20)]
    pub localization_images: usize,
    /// Comma-separated top-N values for the localization table.
    #[arg(long, default_value = "5,20", value_delimiter = ',')]
    pub top_ns: Vec<usize>,
    /// Mask pixels a patch must cover to count as on-object.
    #[arg(long, default_value_t = 1)]
    pub min_overlap: usize,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long)]
    pub out: PathBuf,
}

fn usage(e: patchscope_core::Error) -> Error {
    Error::Usage(e.to_string())
}

pub fn parse_metrics(s: &str) -> Result<Vec<Metric>> {
    let s = s.trim();
    if s == "all" {
        return Ok(Metric::ALL.to_vec());
    }
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let m: Metric = part.parse().map_err(|_| {
            let names: Vec<_> = Metric::ALL.iter().map(|m| m.name()).collect();
            Error::Usage(format!("unknown metric {part:?}; expected one of {} or all", names.join(", ")))
        })?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(Error::Usage("empty metric list".into()));
    }
    Ok(out)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn checkpoint_file(epoch: usize) -> String {
    format!("epoch_{epoch:03}.nnwc")
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Explain(a) => cmd_explain(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
    }
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    if a.batch_size == 0 {
        return Err(Error::Usage("--batch-size must be positive".into()));
    }
    if !(a.lr.is_finite() && a.lr >= 0.0) {
        return Err(Error::Usage("--lr must be a non-negative number".into()));
    }
    create_dir(&a.out)?;
    let mut files = RunManifest::new("train");
    let data = match (&a.data, a.synthetic) {
        (Some(dir), _) => read_dataset(dir)?,
        (None, Some(count)) => {
            let data = quantize_dataset(generate_dataset(count, &mut Rng::new(a.seed, 0)).map_err(usage)?)?;
            for f in write_dataset(&a.out.join("data"), &data)? {
                files.add(format!("data/{f}"), "synthetic dataset (P6 images, P5 masks, index.tsv)");
            }
            data
        }
        (None, None) => unreachable!("clap requires a data source"),
    };
    let (train_set, val_set) = train_validation_split(&data);
    if train_set.is_empty() {
        return Err(Error::Usage("dataset too small to split".into()));
    }
    let (images, labels) = images_and_labels(train_set);
    let (val_images, val_labels) = images_and_labels(val_set);
    let net = NetworkSpec::init(REFERENCE_INPUT, &reference_architecture(), &mut Rng::new(a.seed, 1))?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.batch_size,
    };
    let outcome = train(&net, &images, &labels, &cfg, &mut Rng::new(a.seed, 2))?;

    container::save_manifest(&net, &a.out.join(MANIFEST_FILE))?;
    files.add(MANIFEST_FILE, "network topology");
    let mut log = String::from("epoch\ttrain_acc\tval_acc\tmean_loss\n");
    for cp in &outcome.checkpoints {
        let name = checkpoint_file(cp.epoch);
        container::save_weights(&cp.network, &a.out.join(&name))?;
        files.add(&name, format!("weights after epoch {}", cp.epoch));
        if let (Some(tr), Some(loss)) = (cp.train_accuracy, cp.mean_loss) {
            let val = if val_images.is_empty() {
                "-".to_string()
            } else {
                accuracy(&cp.network, &val_images, &val_labels)?.to_string()
            };
            writeln!(log, "{}\t{tr}\t{val}\t{loss}", cp.epoch).unwrap();
        }
    }
    write_file(&a.out.join("train_log.tsv"), log.as_bytes())?;
    files.add("train_log.tsv", "per-epoch training accuracy, validation accuracy and mean loss");
    write_file(&a.out.join("MANIFEST.txt"), files.render().as_bytes())
}

pub fn cmd_explain(a: &ExplainArgs) -> Result<()> {
    let metrics = parse_metrics(&a.metric)?;
    let cfg = a.pipeline.config()?;
    let net = container::load_weights(&a.weights, &a.manifest)?;
    cfg.selection.layers.check(&net).map_err(usage)?;
    let image = pnm::read_image(&a.image)?;
    let mask = a.mask.as_deref().map(pnm::read_mask).transpose()?;
    if image.shape() != net.input_shape().as_slice() {
        return Err(Error::Format(format!(
            "{}: image shape {:?} does not match network input {:?}",
            a.image.display(),
            image.shape(),
            net.input_shape()
        )));
    }
    if let Some(m) = &mask {
        if m.shape() != &image.shape()[1..] {
            return Err(Error::Format(format!("{}: mask size does not match the image", a.mask.as_ref().unwrap().display())));
        }
    }
    let exp = explain(&net, &image, &metrics, &cfg)?;
    create_dir(&a.out)?;
    let mut files = RunManifest::new("explain");

    let mut summary = String::new();
    let trace = &exp.batch.original;
    let class = trace.predicted_class();
    writeln!(summary, "predicted_class\t{class}").unwrap();
    writeln!(summary, "probability\t{}", trace.probability(class)).unwrap();
    writeln!(summary, "samples\t{}", exp.batch.samples.len()).unwrap();
    writeln!(summary, "layers\t{}", cfg.selection.layers).unwrap();
    writeln!(summary, "top\t{}", cfg.selection.top_n).unwrap();
    writeln!(summary, "bands\t{}", a.bands).unwrap();
    for r in &exp.results {
        let dump = format!("scores_{}.tsv", r.metric.name());
        write_file(&a.out.join(&dump), report::score_dump(&r.scores).as_bytes())?;
        files.add(&dump, format!("{} score of every neuron in range", r.metric.name()));

        let ann = format!("annotated_{}.ppm", r.metric.name());
        write_file(&a.out.join(&ann), &report::annotate(&image, &r.patches.patches, &a.bands)?.encode())?;
        files.add(&ann, format!("input with {} patch boxes, coloured by layer band", r.metric.name()));

        for p in &r.patches.patches {
            let rank = r.ranked.rank_of(p.neuron).expect("patch neuron is ranked");
            let name = report::patch_file_name(p, rank);
            pnm::write_image(&a.out.join(&name), &p.pixels)?;
            files.add(&name, format!("{} patch of {} (rank {rank})", r.metric.name(), p.neuron));
        }
        writeln!(summary, "patches_{}\t{}", r.metric.name(), r.patches.patches.len()).unwrap();
        if let Some(m) = &mask {
            let ratio = if r.patches.patches.is_empty() {
                "-".to_string()
            } else {
                patch_localization(&r.patches.patches, m, 1)?.to_string()
            };
            writeln!(summary, "localization_{}\t{ratio}", r.metric.name()).unwrap();
        }
    }
    write_file(&a.out.join("ranked.tsv"), report::ranked_listing(&exp.results).as_bytes())?;
    files.add("ranked.tsv", "top neurons per metric and layer with patch boxes");
    let notes = report::shortfall_notes(&exp.results);
    if !notes.is_empty() {
        summary.push('\n');
        summary.push_str(&notes);
    }
    write_file(&a.out.join("summary.txt"), summary.as_bytes())?;
    files.add("summary.txt", "prediction, settings, patch counts and shortfalls");
    write_file(&a.out.join("MANIFEST.txt"), files.render().as_bytes())
}

/// Loads `epoch_NNN.nnwc` files from a training directory, ordered by epoch.
pub fn load_checkpoints(dir: &Path) -> Result<Vec<Checkpoint>> {
    let manifest = container::read_manifest(&dir.join(MANIFEST_FILE))?;
    let mut epochs = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(epoch) = name
            .strip_prefix("epoch_")
            .and_then(|s| s.strip_suffix(".nnwc"))
            .and_then(|s| s.parse::<usize>().ok())
        {
            epochs.push(epoch);
        }
    }
    epochs.sort_unstable();
    load_checkpoint_list(dir, &manifest, &epochs)
}

fn load_checkpoint_list(dir: &Path, manifest: &Manifest, epochs: &[usize]) -> Result<Vec<Checkpoint>> {
    epochs
        .iter()
        .map(|&epoch| {
            Ok(Checkpoint {
                epoch,
                network: container::load_with_manifest(&dir.join(checkpoint_file(epoch)), manifest)?,
                train_accuracy: None,
                mean_loss: None,
            })
        })
        .collect()
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let metrics = parse_metrics(&a.metrics)?;
    let explain_cfg = a.pipeline.config()?;
    if a.probes == 0 {
        return Err(Error::Usage("--probes must be positive".into()));
    }
    if a.top_ns.is_empty() || a.top_ns.contains(&0) {
        return Err(Error::Usage("--top-ns needs positive values".into()));
    }
    let checkpoints = load_checkpoints(&a.checkpoints)?;
    if checkpoints.len() < 2 {
        return Err(Error::Usage(format!(
            "{}: need at least two checkpoints, found {}",
            a.checkpoints.display(),
            checkpoints.len()
        )));
    }
    let last = &checkpoints[checkpoints.len() - 1].network;
    explain_cfg.selection.layers.check(last).map_err(usage)?;
    let data = read_dataset(&a.data)?;
    let (_, validation) = train_validation_split(&data);
    if validation.is_empty() {
        return Err(Error::Usage("dataset has no validation images".into()));
    }
    let probes: Vec<_> = validation.iter().take(a.probes).map(|d| d.image.clone()).collect();
    let patch_images: Vec<LabeledImage> = validation.iter().take(a.secondary_images).cloned().collect();
    let cfg = StudyConfig {
        explain: explain_cfg.clone(),
        secondary_metrics: if a.secondary_images == 0 { Vec::new() } else { metrics.clone() },
        secondary: SecondaryConfig {
            train: TrainConfig {
                epochs: a.secondary_epochs,
                ..SecondaryConfig::default().train
            },
            ..SecondaryConfig::default()
        },
        seed: a.pipeline.seed,
    };
    let trajectory = convergence_study(&checkpoints, &probes, validation, &patch_images, &cfg)?;
    let masked: Vec<LabeledImage> = validation
        .iter()
        .filter(|d| d.label == POSITIVE && d.mask.is_some())
        .take(a.localization_images)
        .cloned()
        .collect();
    let localization = if masked.is_empty() {
        Vec::new()
    } else {
        localization_study(last, &masked, &metrics, &a.top_ns, &explain_cfg, a.min_overlap)?
    };
    let epochs: Vec<f64> = trajectory.iter().map(|p| p.epoch as f64).collect();
    let jac: Vec<f64> = trajectory.iter().map(|p| p.mean_jaccard).collect();
    let rho = spearman(&epochs, &jac).ok();

    create_dir(&a.out)?;
    let mut files = RunManifest::new("evaluate");
    write_file(&a.out.join("report.txt"), report::text_report(&trajectory, &localization, rho).as_bytes())?;
    files.add("report.txt", "text tables: convergence per checkpoint and localization");
    write_file(&a.out.join("trajectory.csv"), report::trajectory_csv(&trajectory).as_bytes())?;
    files.add("trajectory.csv", "per checkpoint: validation accuracy, mean and per-probe Jaccard");
    write_file(&a.out.join("secondary.csv"), report::secondary_csv(&trajectory).as_bytes())?;
    files.add("secondary.csv", "per checkpoint and metric: secondary classifier accuracy");
    write_file(&a.out.join("localization.csv"), report::localization_csv(&localization).as_bytes())?;
    files.add("localization.csv", "per metric and top-N: mean patch localization ratio on the last checkpoint");
    write_file(&a.out.join("MANIFEST.txt"), files.render().as_bytes())
}
