use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::metrics::{roc_points, MetricReport};
use crate::neural::ModelConfig;

use super::{checkpoint::write_atomic, Result, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_acc_sent: f64,
    pub val_acc_sent: f64,
    pub train_acc_emo: f64,
    pub val_acc_emo: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReports {
    pub sentiment: MetricReport,
    pub emotion: MetricReport,
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDoc {
    pub run_id: String,
    pub model_name: String,
    pub config: RunConfig,
    pub parameter_count: usize,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    pub test: Option<TestReports>,
}

impl MetricsDoc {
    /// Checks the document against the published schema, returning the
    /// first violation.
    pub fn validate_json(value: &serde_json::Value) -> std::result::Result<(), String> {
        let obj = value.as_object().ok_or("metrics.json must be an object")?;
        for key in ["run_id", "model_name", "config", "history", "best_epoch", "test"] {
            if !obj.contains_key(key) {
                return Err(format!("missing key {key}"));
            }
        }
        let history = obj["history"].as_array().ok_or("history must be an array")?;
        for (i, rec) in history.iter().enumerate() {
            for key in [
                "train_loss",
                "val_loss",
                "train_acc_sent",
                "val_acc_sent",
                "train_acc_emo",
                "val_acc_emo",
                "lr",
            ] {
                if !rec.get(key).is_some_and(serde_json::Value::is_number) {
                    return Err(format!("history[{i}].{key} missing or not a number"));
                }
            }
        }
        if !obj["test"].is_null() {
            for task in ["sentiment", "emotion"] {
                let r = obj["test"].get(task).ok_or(format!("test.{task} missing"))?;
                for key in ["accuracy", "per_class", "macro_avg", "weighted", "confusion"] {
                    if r.get(key).is_none() {
                        return Err(format!("test.{task}.{key} missing"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// A timestamped output directory for one training run.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub path: PathBuf,
}

pub const CHECKPOINT_FILE: &str = "model.ckpt";

impl RunDir {
    /// Creates `<root>/<timestamp>-<model>`, adding a numeric suffix when
    /// the name is taken.
    pub fn create(root: &Path, timestamp: &str, model_name: &str) -> Result<Self> {
        fs::create_dir_all(root)?;
        let base = format!("{timestamp}-{model_name}");
        let mut path = root.join(&base);
        let mut n = 1;
        while path.exists() {
            path = root.join(format!("{base}-{n}"));
            n += 1;
        }
        fs::create_dir(&path)?;
        File::create(path.join("logs.txt"))?;
        Ok(Self { path })
    }

    /// Uses an existing directory as is.
    pub fn at(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        fs::create_dir_all(&path)?;
        Ok(Self { path })
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.path.join(CHECKPOINT_FILE)
    }

    pub fn log(&self, line: &str) -> Result<()> {
        let mut f = OpenOptions::new().create(true).append(true).open(self.path.join("logs.txt"))?;
        writeln!(f, "{line}")?;
        Ok(())
    }

    pub fn write_metrics(&self, doc: &MetricsDoc) -> Result<()> {
        let json = serde_json::to_string_pretty(doc)?;
        write_atomic(&self.path.join("metrics.json"), json.as_bytes())
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<()> {
        write_atomic(&self.path.join(name), text.as_bytes())
    }

    pub fn write_curves(&self, history: &[EpochRecord]) -> Result<()> {
        let mut out =
            String::from("epoch,train_loss,val_loss,train_acc_sent,val_acc_sent,train_acc_emo,val_acc_emo,lr\n");
        for r in history {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.epoch, r.train_loss, r.val_loss, r.train_acc_sent, r.val_acc_sent, r.train_acc_emo, r.val_acc_emo, r.lr
            ));
        }
        self.write_text("training_curves.csv", &out)
    }

    /// Confusion matrices and per-class ROC points for one task.
    pub fn write_task_curves(&self, task: &str, report: &MetricReport, truth: &[usize], scores: &[Vec<f64>]) -> Result<()> {
        self.write_text(&format!("confusion_{task}.csv"), &report.confusion_csv(false))?;
        self.write_text(&format!("confusion_{task}_normalized.csv"), &report.confusion_csv(true))?;
        self.write_text(&format!("roc_{task}.csv"), &roc_csv(report, truth, scores))
    }
}

/// ROC points per class (one-vs-rest; the positive class only when binary).
pub fn roc_csv(report: &MetricReport, truth: &[usize], scores: &[Vec<f64>]) -> String {
    let n_classes = report.per_class.len();
    let classes: Vec<usize> = if n_classes == 2 { vec![1] } else { (0..n_classes).collect() };
    let mut out = String::from("class,fpr,tpr,threshold\n");
    for c in classes {
        let pos: Vec<bool> = truth.iter().map(|&t| t == c).collect();
        if pos.iter().all(|&p| p) || !pos.iter().any(|&p| p) {
            continue;
        }
        let col: Vec<f64> = scores.iter().map(|s| s[c]).collect();
        for (fpr, tpr, thr) in roc_points(&col, &pos) {
            out.push_str(&format!("{},{fpr},{tpr},{thr}\n", report.per_class[c].label));
        }
    }
    out
}
