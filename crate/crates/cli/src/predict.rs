//! Loading saved models and turning raw text into prediction records.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use ulasan::corpus::{LabelSchema, Task};
use ulasan::linear::{self, LinearModel};
use ulasan::textprep::{CleanedDoc, Preprocessor};
use ulasan::training::checkpoint::{section_of, NeuralArtifact};
use ulasan::training::{encode_for_model, predict_probs};

pub const EMPTY_FLAG: &str = "empty_after_cleaning";
pub const UNKNOWN_LABEL: &str = "unknown";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPrediction {
    pub label: String,
    pub scores: BTreeMap<String, f64>,
}

impl TaskPrediction {
    fn unknown() -> Self {
        Self {
            label: UNKNOWN_LABEL.into(),
            scores: BTreeMap::new(),
        }
    }

    fn from_scores(labels: &[String], scores: &[f64]) -> Self {
        let best = ulasan::autodiff::argmax(scores);
        Self {
            label: labels[best].clone(),
            scores: labels.iter().cloned().zip(scores.iter().copied()).collect(),
        }
    }
}

/// One output line of `predict`, and the body of `POST /predict`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sentiment: Option<TaskPrediction>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub emotion: Option<TaskPrediction>,
}

#[derive(Debug, Clone)]
pub struct LinearTask {
    pub model: LinearModel<f32>,
    pub preprocessor: Preprocessor,
}

/// A loaded model of either track.
#[derive(Debug, Clone)]
pub enum Predictor {
    Neural(NeuralArtifact),
    Linear {
        sentiment: Option<LinearTask>,
        emotion: Option<LinearTask>,
    },
}

pub const NEURAL_FILE: &str = "model.ckpt";

pub fn linear_file(task: Task) -> String {
    format!("{}.model", task.name())
}

fn load_linear(path: &Path) -> Result<LinearTask> {
    let (model, pre) = linear::load_model(path).with_context(|| format!("cannot load {}", path.display()))?;
    Ok(LinearTask {
        model,
        preprocessor: pre.unwrap_or_else(Preprocessor::standard),
    })
}

impl Predictor {
    /// Loads a container file, or a run directory holding either a neural
    /// checkpoint or per-task linear models.
    pub fn load(path: &Path) -> Result<Self> {
        if path.is_dir() {
            let ckpt = path.join(NEURAL_FILE);
            if ckpt.exists() {
                return Self::load(&ckpt);
            }
            let find = |t: Task| -> Option<PathBuf> { Some(path.join(linear_file(t))).filter(|p| p.exists()) };
            let (s, e) = (find(Task::Sentiment), find(Task::Emotion));
            if s.is_none() && e.is_none() {
                bail!("{} contains no model files", path.display());
            }
            return Ok(Self::Linear {
                sentiment: s.as_deref().map(load_linear).transpose()?,
                emotion: e.as_deref().map(load_linear).transpose()?,
            });
        }
        let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
        let section = section_of(&bytes).with_context(|| format!("cannot load {}", path.display()))?;
        match section.as_str() {
            "neural" => Ok(Self::Neural(
                NeuralArtifact::from_bytes(&bytes).with_context(|| format!("cannot load {}", path.display()))?,
            )),
            "linear" => {
                let t = load_linear(path)?;
                match t.model.task {
                    Some(Task::Emotion) => Ok(Self::Linear { sentiment: None, emotion: Some(t) }),
                    _ => Ok(Self::Linear { sentiment: Some(t), emotion: None }),
                }
            }
            other => bail!("{} has unknown section {other:?}", path.display()),
        }
    }

    pub fn model_name(&self) -> String {
        match self {
            Self::Neural(a) => a.model.config().model_name.clone(),
            Self::Linear { sentiment, emotion } => {
                let parts: Vec<String> = [sentiment, emotion]
                    .into_iter()
                    .flatten()
                    .map(|t| format!("{}:{}", t.model.task.map_or("?", |t| t.name()), t.model.kind))
                    .collect();
                format!("linear({})", parts.join(","))
            }
        }
    }

    pub fn predict(&self, text: &str) -> Result<Prediction> {
        match self {
            Self::Neural(a) => {
                let doc = a.preprocessor.clean(text);
                let mut out = Prediction {
                    text: text.to_string(),
                    flag: None,
                    sentiment: Some(TaskPrediction::unknown()),
                    emotion: Some(TaskPrediction::unknown()),
                };
                if doc.is_empty() {
                    out.flag = Some(EMPTY_FLAG.into());
                    return Ok(out);
                }
                let seq = encode_for_model(&doc, &a.vocabulary, a.model.config().max_len);
                let (ps, pe) = predict_probs(&a.model, std::slice::from_ref(&seq), 1)?;
                out.sentiment = Some(TaskPrediction::from_scores(a.labels.labels(Task::Sentiment), &ps[0]));
                out.emotion = Some(TaskPrediction::from_scores(a.labels.labels(Task::Emotion), &pe[0]));
                Ok(out)
            }
            Self::Linear { sentiment, emotion } => {
                let mut out = Prediction {
                    text: text.to_string(),
                    flag: None,
                    sentiment: None,
                    emotion: None,
                };
                let mut empty = false;
                let mut run = |t: &LinearTask| -> Result<TaskPrediction> {
                    let doc: CleanedDoc = t.preprocessor.clean(text);
                    if doc.is_empty() {
                        empty = true;
                        return Ok(TaskPrediction::unknown());
                    }
                    let (_, scores) = t.model.predict_doc(&doc)?;
                    let scores: Vec<f64> = scores.iter().map(|&v| f64::from(v)).collect();
                    Ok(TaskPrediction::from_scores(&t.model.labels, &scores))
                };
                out.sentiment = sentiment.as_ref().map(&mut run).transpose()?;
                out.emotion = emotion.as_ref().map(&mut run).transpose()?;
                if empty {
                    out.flag = Some(EMPTY_FLAG.into());
                }
                Ok(out)
            }
        }
    }

    pub fn labels(&self) -> LabelSchema {
        match self {
            Self::Neural(a) => a.labels.clone(),
            Self::Linear { .. } => LabelSchema::standard(),
        }
    }
}
