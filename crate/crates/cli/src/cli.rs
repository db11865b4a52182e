use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand};
use msdan::evaluation::MetricsReport;

use crate::config::{resolve, Overrides, RunConfig, DATASET_ROOT_ENV};
use crate::data::{class_count_table, prepare, read_json};
use crate::error::{CliError, CliResult, ErrorKind, Tag};
use crate::fetch::{fetch_all, parse_manifest, FetchOptions, HttpTransport};
use crate::pipeline::{cmd_eval, cmd_train};
use crate::predict::{cmd_predict, read_stages_csv};
use crate::svg::{confusion_svg, hypnogram_svg, Track};

/// Single-channel EEG sleep staging.
#[derive(Debug, Parser)]
#[command(name = "msdan", version)]
pub struct Cli {
    /// Run configuration (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// EEG signal label, e.g. "EEG Fpz-Cz".
    #[arg(long, global = true)]
    pub channel: Option<String>,
    /// `kfold:K` or `holdout:RATIO`.
    #[arg(long, global = true)]
    pub split: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Any config key, e.g. `--set train.passes=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Download and verify the corpus listed in a checksum manifest.
    Fetch {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        base_url: Option<String>,
    },
    /// Build the normalized epoch cache and print per-stage counts.
    Preprocess,
    /// Train every selected fold, keeping the best checkpoint by validation kappa.
    Train,
    /// Score the validation folds and write metrics and figures.
    Eval {
        /// Use this checkpoint for every fold instead of each fold's best.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Stage one recording.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        edf: PathBuf,
        /// Reference hypnogram; looked up next to the recording when omitted.
        #[arg(long)]
        hypnogram: Option<PathBuf>,
    },
    /// Redraw figures from saved outputs.
    Plot {
        /// A metrics.json written by eval.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// A .stages.csv written by predict.
        #[arg(long)]
        stages: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let text = match &cli.config {
        Some(p) => Some(fs::read_to_string(p).tag(ErrorKind::Config, || format!("reading {}", p.display()))?),
        None => None,
    };
    let overrides = Overrides {
        seed: cli.seed,
        channel: cli.channel.clone(),
        split: cli.split.clone(),
        out: cli.out.clone(),
        set: cli.set.clone(),
    };
    resolve(text.as_deref(), std::env::var(DATASET_ROOT_ENV).ok(), &overrides)
}

fn write(p: &Path, text: &str) -> CliResult<()> {
    if let Some(d) = p.parent() {
        fs::create_dir_all(d).tag(ErrorKind::Runtime, || format!("creating {}", d.display()))?;
    }
    fs::write(p, text).tag(ErrorKind::Runtime, || format!("writing {}", p.display()))
}

/// Runs one command; the returned text is what gets printed on success.
pub fn execute(cli: &Cli) -> CliResult<String> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Fetch { manifest, base_url } => {
            let path = manifest
                .clone()
                .or_else(|| cfg.fetch.manifest.clone())
                .ok_or_else(|| CliError::config("fetch needs --manifest or fetch.manifest"))?;
            let text = fs::read_to_string(&path).tag(ErrorKind::Config, || format!("reading {}", path.display()))?;
            let entries = parse_manifest(&text).tag(ErrorKind::Config, || path.display().to_string())?;
            let opts = FetchOptions {
                base_url: base_url.clone().unwrap_or_else(|| cfg.fetch.base_url.clone()),
                retries: cfg.fetch.retries,
                backoff: Duration::from_millis(cfg.fetch.backoff_ms),
                workers: cfg.fetch.workers,
            };
            fs::create_dir_all(&cfg.dataset_root)
                .tag(ErrorKind::Data, || format!("creating {}", cfg.dataset_root.display()))?;
            let s = fetch_all(&entries, &cfg.dataset_root, &HttpTransport::default(), &opts)
                .tag(ErrorKind::Data, || "fetching the corpus".into())?;
            Ok(format!("{} downloaded, {} already present and verified\n", s.downloaded.len(), s.skipped.len()))
        }
        Command::Preprocess => {
            let ds = prepare(&cfg)?;
            let mut out = format!(
                "{} epochs from {} recordings{}\n",
                ds.epochs.len(),
                ds.stats.len(),
                if ds.from_cache { " (cached)" } else { "" }
            );
            out.push_str(&class_count_table(&ds.class_counts()));
            for (id, why) in &ds.failures {
                out.push_str(&format!("skipped {id}: {why}\n"));
            }
            Ok(out)
        }
        Command::Train => {
            let folds = cmd_train(&cfg)?;
            let mut out = String::from("fold  best_pass  val_kappa  val_acc  train_acc\n");
            for f in folds {
                out.push_str(&format!(
                    "{:>4} {:>10} {:>10} {:>8.2} {:>10.2}\n",
                    f.fold,
                    f.best_pass,
                    f.best_val_kappa.map_or("-".into(), |k| format!("{k:.4}")),
                    f.validation_accuracy,
                    f.train_accuracy
                ));
            }
            Ok(out)
        }
        Command::Eval { checkpoint } => Ok(cmd_eval(&cfg, checkpoint.as_deref())?.to_table()),
        Command::Predict { checkpoint, edf, hypnogram } => {
            let p = cmd_predict(checkpoint, edf, hypnogram.as_deref(), cli.channel.as_deref(), &cfg.output_dir)?;
            let mut out = format!("{} epochs staged -> {}\n", p.epochs.len(), p.csv.display());
            if let Some(a) = p.agreement {
                out.push_str(&format!("agreement with reference: {a:.2}%\n"));
            }
            Ok(out)
        }
        Command::Plot { metrics, stages } => {
            if metrics.is_none() && stages.is_none() {
                return Err(CliError::config("plot needs --metrics and/or --stages"));
            }
            let mut out = String::new();
            if let Some(m) = metrics {
                let report: MetricsReport = read_json(m)?;
                let path = cfg.output_dir.join("confusion.svg");
                write(&path, &confusion_svg(&report))?;
                out.push_str(&format!("wrote {}\n", path.display()));
            }
            if let Some(s) = stages {
                let text = fs::read_to_string(s).tag(ErrorKind::Data, || format!("reading {}", s.display()))?;
                let (manual, auto) = read_stages_csv(&text)?;
                let name = s.file_name().and_then(|n| n.to_str()).unwrap_or("stages");
                let stem = name.strip_suffix(".stages.csv").unwrap_or(name);
                let mut tracks = Vec::new();
                if !manual.is_empty() {
                    tracks.push(Track { name: "manual", color: "#1f77b4", stages: &manual });
                }
                tracks.push(Track { name: "automatic", color: "#ff7f0e", stages: &auto });
                let path = cfg.output_dir.join(format!("{stem}.hypnogram.svg"));
                write(&path, &hypnogram_svg(stem, &tracks))?;
                out.push_str(&format!("wrote {}\n", path.display()));
            }
            Ok(out)
        }
    }
}

/// Parses arguments, runs, prints, and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ErrorKind::Config.exit_code() } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
