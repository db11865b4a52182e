//! `train` and `eval`: split, per-fold training with checkpoints, and the
//! metrics report with its figures.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! config.txt              resolved configuration
//! split.json              the partition used
//! train_summary.json      per-fold best pass, accuracies, class weights
//! fold{f}/train_log.csv   one row per pass
//! fold{f}/best.msdn       best-by-validation-kappa parameters (+ model.json)
//! fold{f}/last.msdn       parameters after the final pass
//! fold{f}/checkpoint_pass{p}.msdn
//! eval/metrics.json, metrics.txt, predictions.csv, confusion.svg,
//! eval/roc.csv, pr.csv, roc.svg, pr.svg, hypnograms/{subject}.svg
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use msdan::evaluation::{evaluate, evaluate_predictions, holdout_split, kfold_split, predict, FoldSplit, MetricsReport, Prediction};
use msdan::ingest::EPOCH_SECONDS;
use msdan::model::{ModelConfig, Msdan};
use msdan::training::{train, ClassWeights, CsvLog, PassRecord, TrainObserver};
use msdan::{Model, StageLabel};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SplitSpec};
use crate::data::{class_count_table, prepare, read_json, write_json, Dataset};
use crate::error::{CliError, CliResult, ErrorKind, Tag};
use crate::svg::{confusion_svg, curves_csv, curves_svg, hypnogram_svg, Track};

/// Everything needed to rebuild a model from a checkpoint and to check an
/// input against it. Stored as `model.json` beside the checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub model: ModelConfig,
    pub channel: String,
    pub sample_rate: f64,
    pub epoch_samples: usize,
}

pub fn manifest_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_file_name("model.json")
}

pub fn save_model(path: &Path, model: &Model) -> CliResult<()> {
    let f = File::create(path).tag(ErrorKind::Runtime, || format!("creating {}", path.display()))?;
    model.save(BufWriter::new(f)).tag(ErrorKind::Runtime, || format!("writing {}", path.display()))
}

pub fn load_model(checkpoint: &Path) -> CliResult<(Model, ModelManifest)> {
    let mpath = manifest_path(checkpoint);
    if !mpath.exists() {
        return Err(CliError::config(format!("{} has no model.json beside it", checkpoint.display())));
    }
    let manifest: ModelManifest = read_json(&mpath)?;
    manifest.model.validate().map_err(CliError::config)?;
    let f = File::open(checkpoint).tag(ErrorKind::Data, || format!("opening {}", checkpoint.display()))?;
    let model = Msdan::load(manifest.model.clone(), BufReader::new(f))
        .tag(ErrorKind::Config, || format!("{} does not match its model.json", checkpoint.display()))?;
    Ok((model, manifest))
}

/// The partition for `cfg` over `ds`; deterministic in the seed.
pub fn build_split(cfg: &RunConfig, ds: &Dataset) -> CliResult<FoldSplit> {
    match cfg.split {
        SplitSpec::KFold(k) => kfold_split(ds.epochs.len(), k, cfg.seed),
        SplitSpec::Holdout(r) => holdout_split(&ds.subjects(), r, cfg.seed),
    }
    .tag(ErrorKind::Data, || "splitting the dataset".into())
}

fn ensure_dir(p: &Path) -> CliResult<()> {
    fs::create_dir_all(p).tag(ErrorKind::Runtime, || format!("creating {}", p.display()))
}

fn write_text(p: &Path, text: &str) -> CliResult<()> {
    fs::write(p, text).tag(ErrorKind::Runtime, || format!("writing {}", p.display()))
}

fn check_input_length(cfg: &RunConfig, ds: &Dataset) -> CliResult<()> {
    let len = ds.epochs[0].samples.len();
    if cfg.model.input_length != len {
        return Err(CliError::config(format!(
            "model.input_length is {} but the epochs have {len} samples",
            cfg.model.input_length
        )));
    }
    Ok(())
}

/// Loads data and the split, and records both the resolved config and the
/// split in the output directory. An existing split file must agree.
fn setup(cfg: &RunConfig) -> CliResult<(Dataset, FoldSplit)> {
    ensure_dir(&cfg.output_dir)?;
    write_text(&cfg.output_dir.join("config.txt"), &cfg.to_text())?;
    let ds = prepare(cfg)?;
    check_input_length(cfg, &ds)?;
    log::info!("{} epochs from {} recordings\n{}", ds.epochs.len(), ds.stats.len(), class_count_table(&ds.class_counts()));
    let split = build_split(cfg, &ds)?;
    let split_path = cfg.output_dir.join("split.json");
    if split_path.exists() {
        let previous: FoldSplit = read_json(&split_path)?;
        if previous != split {
            return Err(CliError::config(format!(
                "{} was written for a different dataset, seed or split; use a fresh output_dir",
                split_path.display()
            )));
        }
    } else {
        write_json(&split_path, &split)?;
    }
    Ok((ds, split))
}

struct FoldObserver {
    dir: PathBuf,
    csv: CsvLog<BufWriter<File>>,
    manifest: ModelManifest,
}

impl FoldObserver {
    fn save(&self, name: &str, model: &Model) -> msdan::training::Result<()> {
        let path = self.dir.join(name);
        model.save(BufWriter::new(File::create(path)?))?;
        Ok(())
    }
}

impl TrainObserver<f64> for FoldObserver {
    fn on_pass(&mut self, record: &PassRecord) -> msdan::training::Result<()> {
        TrainObserver::<f64>::on_pass(&mut self.csv, record)
    }

    fn on_checkpoint(&mut self, pass: usize, model: &Model) -> msdan::training::Result<()> {
        self.save(&format!("checkpoint_pass{pass:03}.msdn"), model)
    }

    fn on_best(&mut self, _pass: usize, model: &Model) -> msdan::training::Result<()> {
        self.save("best.msdn", model)?;
        let text = serde_json::to_string_pretty(&self.manifest).map_err(std::io::Error::other)?;
        fs::write(self.dir.join("model.json"), text + "\n")?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub train_epochs: usize,
    pub validation_epochs: usize,
    pub best_pass: usize,
    pub best_val_kappa: Option<f64>,
    /// Accuracy of the best parameters on the (unaugmented) training epochs.
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
    pub class_weights: ClassWeights,
}

pub fn cmd_train(cfg: &RunConfig) -> CliResult<Vec<FoldSummary>> {
    let (ds, split) = setup(cfg)?;
    let manifest = ModelManifest {
        model: cfg.model.clone(),
        channel: cfg.channel.clone(),
        sample_rate: cfg.model.input_length as f64 / EPOCH_SECONDS,
        epoch_samples: cfg.model.input_length,
    };
    let mut summaries = Vec::new();
    for fold in cfg.fold_ids() {
        let idx = split.indices(fold, &ds.epochs).tag(ErrorKind::Config, || format!("fold {fold}"))?;
        let dir = cfg.output_dir.join(format!("fold{fold}"));
        ensure_dir(&dir)?;
        let log_path = dir.join("train_log.csv");
        let log_file = File::create(&log_path).tag(ErrorKind::Runtime, || format!("creating {}", log_path.display()))?;
        let csv = CsvLog::new(BufWriter::new(log_file)).tag(ErrorKind::Runtime, || format!("writing {}", log_path.display()))?;
        let mut observer = FoldObserver { dir: dir.clone(), csv, manifest: manifest.clone() };
        log::info!("fold {fold}: {} training and {} validation epochs", idx.train.len(), idx.validation.len());
        let out = train(&ds.epochs, &idx, &cfg.train, &cfg.model, cfg.augment.as_ref(), &mut observer)
            .tag(ErrorKind::Runtime, || format!("training fold {fold}"))?;
        save_model(&dir.join("last.msdn"), &out.last)?;
        let train_eval = evaluate(&out.best, &ds.epochs, &idx.train).tag(ErrorKind::Runtime, || "evaluating".into())?;
        let best_record = &out.log[out.best_pass - 1];
        summaries.push(FoldSummary {
            fold,
            train_epochs: idx.train.len(),
            validation_epochs: idx.validation.len(),
            best_pass: out.best_pass,
            best_val_kappa: best_record.val_kappa,
            train_accuracy: train_eval.summary.overall_accuracy,
            validation_accuracy: best_record.val_overall_acc,
            class_weights: out.weights,
        });
    }
    write_json(&cfg.output_dir.join("train_summary.json"), &summaries)?;
    Ok(summaries)
}

pub fn predictions_csv(preds: &[Prediction]) -> String {
    let mut s = String::from("subject_id,epoch_index,truth,predicted,p_N3,p_N2,p_N1,p_R,p_W\n");
    for p in preds {
        let probs: Vec<String> = p.probabilities.iter().map(|v| v.to_string()).collect();
        s.push_str(&format!("{},{},{},{},{}\n", p.subject_id, p.epoch_index, p.truth.name(), p.predicted.name(), probs.join(",")));
    }
    s
}

fn safe_file_name(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Evaluates each selected fold's validation epochs with that fold's best
/// checkpoint (or `checkpoint` for all of them) and pools the predictions.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>) -> CliResult<MetricsReport> {
    let (ds, split) = setup(cfg)?;
    let mut preds = Vec::new();
    for fold in cfg.fold_ids() {
        let idx = split.indices(fold, &ds.epochs).tag(ErrorKind::Config, || format!("fold {fold}"))?;
        let path = checkpoint.map_or_else(|| cfg.output_dir.join(format!("fold{fold}/best.msdn")), Path::to_path_buf);
        if !path.exists() {
            return Err(CliError::config(format!("no checkpoint at {}; run train first", path.display())));
        }
        let (model, manifest) = load_model(&path)?;
        if manifest.channel != cfg.channel {
            return Err(CliError::config(format!(
                "checkpoint was trained on channel {:?}, config selects {:?}",
                manifest.channel, cfg.channel
            )));
        }
        if manifest.epoch_samples != ds.epochs[0].samples.len() {
            return Err(CliError::config(format!(
                "checkpoint expects {}-sample epochs, data has {}",
                manifest.epoch_samples,
                ds.epochs[0].samples.len()
            )));
        }
        preds.extend(predict(&model, &ds.epochs, &idx.validation).tag(ErrorKind::Runtime, || format!("fold {fold}"))?);
    }
    let eval = evaluate_predictions(preds).tag(ErrorKind::Runtime, || "computing metrics".into())?;
    let report = MetricsReport::new(&eval);

    let dir = cfg.output_dir.join("eval");
    ensure_dir(&dir.join("hypnograms"))?;
    write_json(&dir.join("metrics.json"), &report)?;
    write_text(&dir.join("metrics.txt"), &report.to_table())?;
    write_text(&dir.join("predictions.csv"), &predictions_csv(&eval.predictions))?;
    write_text(&dir.join("confusion.svg"), &confusion_svg(&report))?;
    write_text(&dir.join("roc.csv"), &curves_csv(&eval.curves, true))?;
    write_text(&dir.join("pr.csv"), &curves_csv(&eval.curves, false))?;
    write_text(&dir.join("roc.svg"), &curves_svg(&eval.curves, true))?;
    write_text(&dir.join("pr.svg"), &curves_svg(&eval.curves, false))?;

    let mut by_subject: BTreeMap<&str, (Vec<(usize, StageLabel)>, Vec<(usize, StageLabel)>)> = BTreeMap::new();
    for p in &eval.predictions {
        let e = by_subject.entry(&p.subject_id).or_default();
        e.0.push((p.epoch_index, p.truth));
        e.1.push((p.epoch_index, p.predicted));
    }
    for (subject, (manual, auto)) in by_subject {
        let svg = hypnogram_svg(
            subject,
            &[
                Track { name: "manual", color: "#1f77b4", stages: &manual },
                Track { name: "automatic", color: "#ff7f0e", stages: &auto },
            ],
        );
        write_text(&dir.join("hypnograms").join(format!("{}.svg", safe_file_name(subject))), &svg)?;
    }
    Ok(report)
}
