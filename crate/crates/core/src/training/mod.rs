//! Dual-task training: class-weighted losses, Adam, plateau learning-rate
//! halving, early stopping, checkpoints and run artifacts.

pub mod artifacts;
pub mod checkpoint;
pub mod optim;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{argmax, softmax_rows, AutodiffError, Tape, Tensor};
use crate::corpus::{LabelSchema, Task};
use crate::metrics::{MetricReport, MetricsError};
use crate::neural::{Batch, Model, NeuralError};
use crate::textprep::{CleanedDoc, Preprocessor};
use crate::vectorize::{encode_sequence, EncodedSequence, Vocabulary, UNK};

pub use artifacts::{EpochRecord, MetricsDoc, RunConfig, RunDir, TestReports, CHECKPOINT_FILE};
pub use checkpoint::{NeuralArtifact, NeuralHeader};
pub use optim::{adam_step, Adam, EarlyStopper, PlateauScheduler, StopDecision};

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("class {class} has no training examples")]
    MissingClass { class: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch} (lr {lr})")]
    DivergedLoss { epoch: usize, batch: usize, loss: f64, lr: f64 },
    #[error("corrupt container: {0}")]
    CorruptContainer(String),
    #[error("architecture mismatch: missing {missing:?}, unexpected {unexpected:?}")]
    ArchitectureMismatch { missing: Vec<String>, unexpected: Vec<String> },
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub type Result<T> = std::result::Result<T, TrainingError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub scheduler_factor: f64,
    pub scheduler_patience: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    /// Multipliers of the sentiment and emotion losses in the combined loss.
    pub task_weights: [f64; 2],
    pub decoupled_weight_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-5,
            batch_size: 32,
            max_epochs: 50,
            scheduler_factor: 0.5,
            scheduler_patience: 1,
            early_stop_patience: 3,
            seed: 42,
            task_weights: [1.0, 1.0],
            decoupled_weight_decay: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainingError::InvalidConfig(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive");
        }
        if !(self.scheduler_factor > 0.0 && self.scheduler_factor < 1.0) {
            return bad("scheduler_factor must lie in (0, 1)");
        }
        if self.scheduler_patience == 0 || self.early_stop_patience == 0 {
            return bad("patience values must be at least 1");
        }
        if self.task_weights.iter().any(|&w| !(w >= 0.0)) || self.task_weights.iter().all(|&w| w == 0.0) {
            return bad("task_weights must be non-negative and not both zero");
        }
        Ok(())
    }
}

/// Inverse-frequency weights `N / (C * n_c)`.
pub fn class_weights(labels: &[usize], n_classes: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        if l >= n_classes {
            return Err(TrainingError::InvalidConfig(format!("label {l} out of range for {n_classes} classes")));
        }
        counts[l] += 1;
    }
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(TrainingError::MissingClass { class });
    }
    let n = labels.len() as f64;
    Ok(counts.iter().map(|&c| n / (n_classes as f64 * c as f64)).collect())
}

/// Encodes a cleaned document for the network. A document that cleaned to
/// nothing becomes a single UNK so every sequence has a true length of at
/// least one.
pub fn encode_for_model(doc: &CleanedDoc, vocab: &Vocabulary, max_len: usize) -> EncodedSequence {
    let mut seq = encode_sequence(doc, vocab, max_len);
    if seq.length == 0 {
        seq.ids[0] = UNK;
        seq.length = 1;
    }
    seq
}

/// Encoded sequences with both label columns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NeuralSplit {
    pub sequences: Vec<EncodedSequence>,
    pub sentiment: Vec<usize>,
    pub emotion: Vec<usize>,
}

impl NeuralSplit {
    pub fn new(sequences: Vec<EncodedSequence>, sentiment: Vec<usize>, emotion: Vec<usize>) -> Self {
        assert_eq!(sequences.len(), sentiment.len());
        assert_eq!(sequences.len(), emotion.len());
        Self {
            sequences,
            sentiment,
            emotion,
        }
    }

    pub fn from_docs(docs: &[CleanedDoc], sentiment: Vec<usize>, emotion: Vec<usize>, vocab: &Vocabulary, max_len: usize) -> Self {
        let seqs = docs.iter().map(|d| encode_for_model(d, vocab, max_len)).collect();
        Self::new(seqs, sentiment, emotion)
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn labels(&self, task: Task) -> &[usize] {
        match task {
            Task::Sentiment => &self.sentiment,
            Task::Emotion => &self.emotion,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NeuralData {
    pub train: NeuralSplit,
    pub val: NeuralSplit,
    pub test: NeuralSplit,
}

/// Sum of `w[y] * CE` and of `w[y]` over a batch of logits.
fn weighted_ce_parts(logits: &Tensor<f32>, targets: &[usize], weights: &[f64]) -> (f64, f64) {
    let (mut num, mut den) = (0.0, 0.0);
    for (r, &t) in targets.iter().enumerate() {
        let row: Vec<f64> = logits.row(r).iter().map(|&v| v as f64).collect();
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        num += weights[t] * (lse - row[t]);
        den += weights[t];
    }
    (num, den)
}

fn count_correct(logits: &Tensor<f32>, targets: &[usize]) -> usize {
    targets.iter().enumerate().filter(|&(r, &t)| argmax(logits.row(r)) == t).count()
}

/// Evaluation-mode outputs over a split.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub acc_sent: f64,
    pub acc_emo: f64,
    pub probs_sent: Vec<Vec<f64>>,
    pub probs_emo: Vec<Vec<f64>>,
}

impl Evaluation {
    pub fn predictions(probs: &[Vec<f64>]) -> Vec<usize> {
        probs.iter().map(|p| argmax(p)).collect()
    }
}

/// Softmax probabilities of both heads in evaluation mode.
pub fn predict_probs(
    model: &Model<f32>,
    sequences: &[EncodedSequence],
    batch_size: usize,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let mut sent = Vec::with_capacity(sequences.len());
    let mut emo = Vec::with_capacity(sequences.len());
    for chunk in sequences.chunks(batch_size.max(1)) {
        let logits = model.predict_logits(&Batch::from_sequences(chunk)?)?;
        let to64 = |rows: Vec<Vec<f32>>| rows.into_iter().map(|r| r.into_iter().map(f64::from).collect());
        sent.extend(to64(softmax_rows(&logits.sentiment)));
        emo.extend(to64(softmax_rows(&logits.emotion)));
    }
    Ok((sent, emo))
}

/// Combined weighted loss and accuracies in evaluation mode.
pub fn evaluate(
    model: &Model<f32>,
    split: &NeuralSplit,
    weights: [&[f64]; 2],
    task_weights: [f64; 2],
    batch_size: usize,
) -> Result<Evaluation> {
    if split.is_empty() {
        return Err(TrainingError::EmptySplit("evaluation"));
    }
    let mut parts = [(0.0, 0.0); 2];
    let mut correct = [0usize; 2];
    let mut probs_sent = Vec::with_capacity(split.len());
    let mut probs_emo = Vec::with_capacity(split.len());
    for start in (0..split.len()).step_by(batch_size.max(1)) {
        let end = (start + batch_size).min(split.len());
        let batch = Batch::from_sequences(&split.sequences[start..end])?;
        let logits = model.predict_logits(&batch)?;
        for (k, (l, y)) in [(&logits.sentiment, &split.sentiment), (&logits.emotion, &split.emotion)]
            .into_iter()
            .enumerate()
        {
            let (n, d) = weighted_ce_parts(l, &y[start..end], weights[k]);
            parts[k].0 += n;
            parts[k].1 += d;
            correct[k] += count_correct(l, &y[start..end]);
        }
        let to64 = |rows: Vec<Vec<f32>>| rows.into_iter().map(|r| r.into_iter().map(f64::from).collect::<Vec<_>>());
        probs_sent.extend(to64(softmax_rows(&logits.sentiment)));
        probs_emo.extend(to64(softmax_rows(&logits.emotion)));
    }
    let n = split.len() as f64;
    Ok(Evaluation {
        loss: task_weights[0] * parts[0].0 / parts[0].1 + task_weights[1] * parts[1].0 / parts[1].1,
        acc_sent: correct[0] as f64 / n,
        acc_emo: correct[1] as f64 / n,
        probs_sent,
        probs_emo,
    })
}

/// Test-split reports for both tasks from evaluation probabilities.
pub fn reports_from_probs(
    split: &NeuralSplit,
    probs_sent: &[Vec<f64>],
    probs_emo: &[Vec<f64>],
    labels: &LabelSchema,
) -> Result<TestReports> {
    let sentiment = MetricReport::compute(
        &split.sentiment,
        &Evaluation::predictions(probs_sent),
        probs_sent,
        labels.labels(Task::Sentiment),
    )?;
    let emotion = MetricReport::compute(
        &split.emotion,
        &Evaluation::predictions(probs_emo),
        probs_emo,
        labels.labels(Task::Emotion),
    )?;
    Ok(TestReports { sentiment, emotion })
}

/// Stable identifier derived from the configuration and the data, so that
/// identical runs produce identical metrics files.
pub fn run_id(model: &Model<f32>, cfg: &TrainConfig, data: &NeuralData) -> String {
    let mut h = crc32fast::Hasher::new();
    h.update(model.config().to_json().as_bytes());
    h.update(serde_json::to_string(cfg).unwrap_or_default().as_bytes());
    for split in [&data.train, &data.val, &data.test] {
        h.update(&(split.len() as u64).to_le_bytes());
        for (s, (a, b)) in split.sequences.iter().zip(split.sentiment.iter().zip(&split.emotion)) {
            for &id in &s.ids {
                h.update(&(id as u32).to_le_bytes());
            }
            h.update(&[*a as u8, *b as u8]);
        }
    }
    format!("{}-s{}-{:08x}", model.config().model_name, cfg.seed, h.finalize())
}

/// Output directory plus what a checkpoint needs besides the weights.
pub struct RunContext<'a> {
    pub dir: &'a RunDir,
    pub vocabulary: &'a Vocabulary,
    pub preprocessor: &'a Preprocessor,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: Model<f32>,
    pub metrics: MetricsDoc,
}

/// Runs the full protocol and, when `ctx` is given, writes the run
/// artifacts as it goes.
pub fn train(
    mut model: Model<f32>,
    data: &NeuralData,
    cfg: &TrainConfig,
    labels: &LabelSchema,
    ctx: Option<RunContext<'_>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(TrainingError::EmptySplit("train"));
    }
    if data.val.is_empty() {
        return Err(TrainingError::EmptySplit("validation"));
    }
    let mc = model.config().clone();
    let w_sent = class_weights(&data.train.sentiment, mc.num_sentiment_classes)?;
    let w_emo = class_weights(&data.train.emotion, mc.num_emotion_classes)?;
    let w_sent32: Vec<f32> = w_sent.iter().map(|&w| w as f32).collect();
    let w_emo32: Vec<f32> = w_emo.iter().map(|&w| w as f32).collect();
    let [tw_s, tw_e] = cfg.task_weights;

    let log = |line: String| -> Result<()> {
        if let Some(c) = &ctx {
            c.dir.log(&line)?;
        }
        Ok(())
    };
    let mut doc = MetricsDoc {
        run_id: run_id(&model, cfg, data),
        model_name: mc.model_name.clone(),
        config: RunConfig {
            model: mc.clone(),
            train: cfg.clone(),
        },
        parameter_count: model.parameter_count().total,
        history: Vec::new(),
        best_epoch: None,
        stopped_early: false,
        test: None,
    };
    log(format!("run {} model {} parameters {}", doc.run_id, mc.model_name, doc.parameter_count))?;
    log(format!(
        "train {} val {} test {} | sentiment weights {:?} | emotion weights {:?}",
        data.train.len(),
        data.val.len(),
        data.test.len(),
        w_sent,
        w_emo
    ))?;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);
    let mut adam = Adam::new(cfg.decoupled_weight_decay);
    let mut scheduler = PlateauScheduler::new(cfg.lr, cfg.scheduler_factor, cfg.scheduler_patience);
    let mut stopper = EarlyStopper::new(cfg.early_stop_patience);
    let mut best_model = model.clone();
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let lr = scheduler.lr;
        order.shuffle(&mut shuffle_rng);
        let mut parts = [(0.0f64, 0.0f64); 2];
        let mut correct = [0usize; 2];
        for (b_idx, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch = Batch::from_sequences(idx.iter().map(|&i| &data.train.sequences[i]))?;
            let ys: Vec<usize> = idx.iter().map(|&i| data.train.sentiment[i]).collect();
            let ye: Vec<usize> = idx.iter().map(|&i| data.train.emotion[i]).collect();
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape);
            let out = model.forward(&mut tape, &vars, &batch, true, &mut dropout_rng)?;
            let ls = tape.weighted_ce(out.sentiment, &ys, &w_sent32)?;
            let le = tape.weighted_ce(out.emotion, &ye, &w_emo32)?;
            let a = tape.scale(ls, tw_s as f32);
            let b = tape.scale(le, tw_e as f32);
            let loss = tape.add(a, b)?;
            let loss_value = tape.value(loss).item() as f64;
            if !loss_value.is_finite() {
                let err = TrainingError::DivergedLoss {
                    epoch,
                    batch: b_idx,
                    loss: loss_value,
                    lr,
                };
                log(format!("aborting: {err}"))?;
                return Err(err);
            }
            for (k, (var, y, w)) in [(ls, &ys, &w_sent), (le, &ye, &w_emo)].into_iter().enumerate() {
                let wsum: f64 = y.iter().map(|&t| w[t]).sum();
                parts[k].0 += tape.value(var).item() as f64 * wsum;
                parts[k].1 += wsum;
            }
            correct[0] += count_correct(tape.value(out.sentiment), &ys);
            correct[1] += count_correct(tape.value(out.emotion), &ye);

            let mut grads = tape.backward(loss)?;
            let gmap: BTreeMap<String, Tensor<f32>> = vars
                .iter()
                .filter_map(|(k, &v)| grads.take(v).map(|g| (k.clone(), g)))
                .collect();
            adam.step(model.params_mut(), &gmap, lr, cfg.weight_decay);
            if let Some(stats) = &out.bn_stats {
                model.update_running_stats(stats);
            }
        }
        let n = data.train.len() as f64;
        let train_loss = tw_s * parts[0].0 / parts[0].1 + tw_e * parts[1].0 / parts[1].1;
        let val = evaluate(&model, &data.val, [&w_sent, &w_emo], cfg.task_weights, cfg.batch_size)?;
        if !val.loss.is_finite() {
            return Err(TrainingError::DivergedLoss {
                epoch,
                batch: usize::MAX,
                loss: val.loss,
                lr,
            });
        }
        doc.history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss: val.loss,
            train_acc_sent: correct[0] as f64 / n,
            val_acc_sent: val.acc_sent,
            train_acc_emo: correct[1] as f64 / n,
            val_acc_emo: val.acc_emo,
            lr,
        });
        let decision = stopper.step(epoch, val.loss);
        let reduced = scheduler.step(val.loss);
        if decision.improved {
            best_model = model.clone();
            doc.best_epoch = Some(epoch);
            if let Some(c) = &ctx {
                NeuralArtifact {
                    model: best_model.clone(),
                    vocabulary: c.vocabulary.clone(),
                    labels: labels.clone(),
                    preprocessor: c.preprocessor.clone(),
                }
                .save(c.dir.checkpoint_path())?;
            }
        }
        log(format!(
            "epoch {epoch} train_loss {train_loss:.6} val_loss {:.6} train_acc {:.4}/{:.4} val_acc {:.4}/{:.4} lr {lr:e}{}{}",
            val.loss,
            correct[0] as f64 / n,
            correct[1] as f64 / n,
            val.acc_sent,
            val.acc_emo,
            if decision.improved { " [best]" } else { "" },
            if reduced { format!(" [lr -> {:e}]", scheduler.lr) } else { String::new() },
        ))?;
        if let Some(c) = &ctx {
            c.dir.write_metrics(&doc)?;
            c.dir.write_curves(&doc.history)?;
        }
        if decision.stop {
            doc.stopped_early = true;
            log(format!(
                "early stop after epoch {epoch}: no improvement for {} epochs",
                cfg.early_stop_patience
            ))?;
            break;
        }
    }

    if !data.test.is_empty() {
        let test = evaluate(&best_model, &data.test, [&w_sent, &w_emo], cfg.task_weights, cfg.batch_size)?;
        let reports = reports_from_probs(&data.test, &test.probs_sent, &test.probs_emo, labels)?;
        if let Some(c) = &ctx {
            c.dir.write_task_curves("sentiment", &reports.sentiment, &data.test.sentiment, &test.probs_sent)?;
            c.dir.write_task_curves("emotion", &reports.emotion, &data.test.emotion, &test.probs_emo)?;
            c.dir.log(&format!("test sentiment\n{}", reports.sentiment.table()))?;
            c.dir.log(&format!("test emotion\n{}", reports.emotion.table()))?;
        }
        doc.test = Some(reports);
    }
    if let Some(c) = &ctx {
        c.dir.write_metrics(&doc)?;
    }
    Ok(TrainOutcome {
        model: best_model,
        metrics: doc,
    })
}
