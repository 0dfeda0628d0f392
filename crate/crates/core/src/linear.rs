//! Classical classifiers on sparse n-gram features: multinomial logistic
//! regression, one-vs-rest linear SVM and multinomial naive Bayes, plus a
//! cross-validated leaderboard.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{argmax, Tensor};
use crate::corpus::{stratified_kfold, CorpusError, Task};
use crate::metrics::{MetricReport, MetricsError};
use crate::scalar::Scalar;
use crate::textprep::{CleanedDoc, Preprocessor};
use crate::training::checkpoint::{decode, encode, write_atomic};
use crate::training::TrainingError;
use crate::vectorize::{fit_tfidf, SparseVector, TfidfModel, TfidfOptions, VectorizeError};

#[derive(Debug, Error)]
pub enum LinearError {
    #[error("feature dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("all training labels are identical")]
    SingleClassData,
    #[error("negative feature value at column {column}")]
    NegativeFeature { column: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("features and labels differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no training data")]
    EmptyData,
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    #[error("unknown linear model {0:?}; expected logreg, linsvm or nb")]
    UnknownKind(String),
    #[error("model has no attached vectorizer")]
    NoVectorizer,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Vectorize(#[from] VectorizeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Container(#[from] TrainingError),
}

pub type Result<T> = std::result::Result<T, LinearError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearKind {
    Logreg,
    Linsvm,
    Nb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Tfidf,
    Counts,
}

impl LinearKind {
    pub const ALL: [LinearKind; 3] = [Self::Logreg, Self::Linsvm, Self::Nb];

    pub fn name(self) -> &'static str {
        match self {
            Self::Logreg => "logreg",
            Self::Linsvm => "linsvm",
            Self::Nb => "nb",
        }
    }

    /// Naive Bayes needs non-negative counts; the others use TF-IDF.
    pub fn representation(self) -> Representation {
        match self {
            Self::Nb => Representation::Counts,
            _ => Representation::Tfidf,
        }
    }
}

impl FromStr for LinearKind {
    type Err = LinearError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logreg" => Ok(Self::Logreg),
            "linsvm" => Ok(Self::Linsvm),
            "nb" => Ok(Self::Nb),
            _ => Err(LinearError::UnknownKind(s.to_string())),
        }
    }
}

impl fmt::Display for LinearKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Tfidf => "tfidf",
            Self::Counts => "counts",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdOptions {
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SgdOptions {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 0.1,
            l2: 1e-4,
            batch_size: 32,
            seed: 42,
        }
    }
}

impl SgdOptions {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.lr > 0.0) || self.l2 < 0.0 {
            return Err(LinearError::InvalidOptions(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Weights `[classes, features]` and biases of a linear scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel<T> {
    pub kind: LinearKind,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub n_classes: usize,
    pub dim: usize,
    pub task: Option<Task>,
    pub labels: Vec<String>,
    pub vectorizer: Option<TfidfModel>,
}

/// A fitted model with its per-epoch mean training loss (empty for naive
/// Bayes).
#[derive(Debug, Clone)]
pub struct LinearFit<T> {
    pub model: LinearModel<T>,
    pub epoch_losses: Vec<f64>,
}

fn check_inputs<T: Scalar>(features: &[SparseVector<T>], labels: &[usize], n_classes: usize) -> Result<usize> {
    if features.len() != labels.len() {
        return Err(LinearError::LengthMismatch(features.len(), labels.len()));
    }
    let dim = features.first().ok_or(LinearError::EmptyData)?.dim;
    if let Some(f) = features.iter().find(|f| f.dim != dim) {
        return Err(LinearError::DimensionMismatch { expected: dim, found: f.dim });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(LinearError::LabelOutOfRange { label, classes: n_classes });
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(LinearError::SingleClassData);
    }
    Ok(dim)
}

impl<T: Scalar> LinearModel<T> {
    fn zeros(kind: LinearKind, n_classes: usize, dim: usize) -> Self {
        Self {
            kind,
            weights: vec![T::zero(); n_classes * dim],
            bias: vec![T::zero(); n_classes],
            n_classes,
            dim,
            task: None,
            labels: (0..n_classes).map(|c| c.to_string()).collect(),
            vectorizer: None,
        }
    }

    /// `W x + b`.
    pub fn decision(&self, x: &SparseVector<T>) -> Result<Vec<T>> {
        if x.dim != self.dim {
            return Err(LinearError::DimensionMismatch {
                expected: self.dim,
                found: x.dim,
            });
        }
        Ok((0..self.n_classes)
            .map(|c| {
                let row = &self.weights[c * self.dim..(c + 1) * self.dim];
                self.bias[c] + x.dot(row)
            })
            .collect())
    }

    /// Predicted class and per-class scores: softmax probabilities for
    /// logreg, raw margins for linsvm, log-posteriors for nb.
    pub fn predict(&self, x: &SparseVector<T>) -> Result<(usize, Vec<T>)> {
        let z = self.decision(x)?;
        let scores = match self.kind {
            LinearKind::Logreg => softmax(&z),
            LinearKind::Linsvm => z,
            LinearKind::Nb => {
                let lse = log_sum_exp(&z);
                z.iter().map(|&v| v - lse).collect()
            }
        };
        Ok((argmax(&scores), scores))
    }

    /// Vectorizes a cleaned document with the attached vectorizer.
    pub fn featurize(&self, doc: &CleanedDoc) -> Result<SparseVector<T>> {
        let v = self.vectorizer.as_ref().ok_or(LinearError::NoVectorizer)?;
        Ok(match self.kind.representation() {
            Representation::Tfidf => v.transform(doc),
            Representation::Counts => v.transform_counts(doc),
        })
    }

    pub fn predict_doc(&self, doc: &CleanedDoc) -> Result<(usize, Vec<T>)> {
        self.predict(&self.featurize(doc)?)
    }

    pub fn cast<U: Scalar>(&self) -> LinearModel<U> {
        LinearModel {
            kind: self.kind,
            weights: self.weights.iter().map(|&v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
            bias: self.bias.iter().map(|&v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
            n_classes: self.n_classes,
            dim: self.dim,
            task: self.task,
            labels: self.labels.clone(),
            vectorizer: self.vectorizer.clone(),
        }
    }
}

fn softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_sum_exp<T: Scalar>(z: &[T]) -> T {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    max + z.iter().map(|&v| (v - max).exp()).sum::<T>().ln()
}

/// Per-sample loss and `dLoss/dz` for one objective.
trait Objective<T> {
    fn loss_grad(&self, z: &[T], y: usize, grad: &mut [T]) -> T;
}

struct CrossEntropy;

impl<T: Scalar> Objective<T> for CrossEntropy {
    fn loss_grad(&self, z: &[T], y: usize, grad: &mut [T]) -> T {
        let p = softmax(z);
        for (c, g) in grad.iter_mut().enumerate() {
            *g = p[c] - if c == y { T::one() } else { T::zero() };
        }
        log_sum_exp(z) - z[y]
    }
}

/// Sum over classes of `max(0, 1 - s_c z_c)` with `s_c = +1` for the true
/// class and `-1` otherwise.
struct OvrHinge;

impl<T: Scalar> Objective<T> for OvrHinge {
    fn loss_grad(&self, z: &[T], y: usize, grad: &mut [T]) -> T {
        let mut loss = T::zero();
        for (c, g) in grad.iter_mut().enumerate() {
            let s = if c == y { T::one() } else { -T::one() };
            let slack = T::one() - s * z[c];
            if slack > T::zero() {
                loss += slack;
                *g = -s;
            } else {
                *g = T::zero();
            }
        }
        loss
    }
}

/// Seeded mini-batch SGD on `sum_i w_i loss_i / sum_i w_i + l2/2 |W|^2`.
fn sgd<T: Scalar, O: Objective<T>>(
    kind: LinearKind,
    objective: &O,
    features: &[SparseVector<T>],
    labels: &[usize],
    n_classes: usize,
    class_weights: Option<&[f64]>,
    opts: &SgdOptions,
) -> Result<LinearFit<T>> {
    opts.validate()?;
    let dim = check_inputs(features, labels, n_classes)?;
    let weights: Vec<T> = match class_weights {
        Some(w) if w.len() != n_classes => {
            return Err(LinearError::InvalidOptions(format!("{} class weights for {n_classes} classes", w.len())))
        }
        Some(w) => w.iter().map(|&v| T::from_f64_lossy(v)).collect(),
        None => vec![T::one(); n_classes],
    };
    let mut model = LinearModel::zeros(kind, n_classes, dim);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let lr = T::from_f64_lossy(opts.lr);
    let l2 = T::from_f64_lossy(opts.l2);
    let half = T::from_f64_lossy(0.5);
    let mut epoch_losses = Vec::with_capacity(opts.epochs);
    let mut coef = vec![T::zero(); opts.batch_size * n_classes];
    for _ in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for idx in order.chunks(opts.batch_size) {
            let wsum: T = idx.iter().map(|&i| weights[labels[i]]).sum();
            let mut loss = T::zero();
            for (k, &i) in idx.iter().enumerate() {
                let z = model.decision(&features[i])?;
                let g = &mut coef[k * n_classes..(k + 1) * n_classes];
                let w = weights[labels[i]];
                loss += w * objective.loss_grad(&z, labels[i], g);
                g.iter_mut().for_each(|v| *v *= w / wsum);
            }
            let sq: T = model.weights.iter().map(|&v| v * v).sum();
            total += (loss / wsum + half * l2 * sq).to_f64_lossy();
            batches += 1;
            if opts.l2 > 0.0 {
                let decay = T::one() - lr * l2;
                model.weights.iter_mut().for_each(|v| *v *= decay);
            }
            for (k, &i) in idx.iter().enumerate() {
                let g = &coef[k * n_classes..(k + 1) * n_classes];
                for (c, &gc) in g.iter().enumerate() {
                    if gc == T::zero() {
                        continue;
                    }
                    let row = &mut model.weights[c * dim..(c + 1) * dim];
                    for (j, x) in features[i].iter() {
                        row[j] -= lr * gc * x;
                    }
                    model.bias[c] -= lr * gc;
                }
            }
        }
        epoch_losses.push(total / batches as f64);
    }
    Ok(LinearFit { model, epoch_losses })
}

/// Multinomial logistic regression with class-weighted cross-entropy.
pub fn train_logreg<T: Scalar>(
    features: &[SparseVector<T>],
    labels: &[usize],
    n_classes: usize,
    class_weights: Option<&[f64]>,
    opts: &SgdOptions,
) -> Result<LinearFit<T>> {
    sgd(LinearKind::Logreg, &CrossEntropy, features, labels, n_classes, class_weights, opts)
}

/// One-vs-rest linear SVM with class-weighted hinge loss.
pub fn train_linsvm<T: Scalar>(
    features: &[SparseVector<T>],
    labels: &[usize],
    n_classes: usize,
    class_weights: Option<&[f64]>,
    opts: &SgdOptions,
) -> Result<LinearFit<T>> {
    sgd(LinearKind::Linsvm, &OvrHinge, features, labels, n_classes, class_weights, opts)
}

/// Multinomial naive Bayes with additive smoothing, folded into weights
/// `ln P(term | class)` and biases `ln P(class)`.
pub fn train_nb<T: Scalar>(
    counts: &[SparseVector<T>],
    labels: &[usize],
    n_classes: usize,
    smoothing: f64,
) -> Result<LinearFit<T>> {
    if !(smoothing > 0.0) {
        return Err(LinearError::InvalidOptions("smoothing must be positive".into()));
    }
    let dim = check_inputs(counts, labels, n_classes)?;
    let mut term = vec![0.0f64; n_classes * dim];
    let mut docs = vec![0usize; n_classes];
    for (x, &y) in counts.iter().zip(labels) {
        docs[y] += 1;
        for (j, v) in x.iter() {
            let v = v.to_f64_lossy();
            if v < 0.0 {
                return Err(LinearError::NegativeFeature { column: j });
            }
            term[y * dim + j] += v;
        }
    }
    let mut model = LinearModel::zeros(LinearKind::Nb, n_classes, dim);
    let n = counts.len() as f64;
    for c in 0..n_classes {
        let row = &term[c * dim..(c + 1) * dim];
        let total: f64 = row.iter().sum::<f64>() + smoothing * dim as f64;
        for (j, &t) in row.iter().enumerate() {
            model.weights[c * dim + j] = T::from_f64_lossy(((t + smoothing) / total).ln());
        }
        // an absent class gets a vanishing but finite prior
        let prior = if docs[c] == 0 { 0.5 / n } else { docs[c] as f64 / n };
        model.bias[c] = T::from_f64_lossy(prior.ln());
    }
    Ok(LinearFit {
        model,
        epoch_losses: Vec::new(),
    })
}

/// One leaderboard entry to evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub kind: LinearKind,
    pub sgd: SgdOptions,
    pub smoothing: f64,
    pub class_weighted: bool,
}

impl Candidate {
    pub fn new(kind: LinearKind) -> Self {
        Self {
            kind,
            sgd: SgdOptions::default(),
            smoothing: 1.0,
            class_weighted: true,
        }
    }

    pub fn default_set() -> Vec<Self> {
        LinearKind::ALL.into_iter().map(Self::new).collect()
    }

    /// Fits on pre-vectorized features (TF-IDF or counts to match the
    /// kind's representation).
    pub fn fit<T: Scalar>(&self, features: &[SparseVector<T>], labels: &[usize], n_classes: usize, seed: u64) -> Result<LinearModel<T>> {
        let opts = SgdOptions { seed, ..self.sgd.clone() };
        let weights = if self.class_weighted {
            Some(inverse_frequency(labels, n_classes))
        } else {
            None
        };
        let fit = match self.kind {
            LinearKind::Logreg => train_logreg(features, labels, n_classes, weights.as_deref(), &opts)?,
            LinearKind::Linsvm => train_linsvm(features, labels, n_classes, weights.as_deref(), &opts)?,
            LinearKind::Nb => train_nb(features, labels, n_classes, self.smoothing)?,
        };
        Ok(fit.model)
    }
}

/// `N / (C * n_c)`, with absent classes given weight 1.
pub fn inverse_frequency(labels: &[usize], n_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    let n = labels.len() as f64;
    counts
        .iter()
        .map(|&c| if c == 0 { 1.0 } else { n / (n_classes as f64 * c as f64) })
        .collect()
}

fn vectorize<T: Scalar>(tfidf: &TfidfModel, docs: &[&CleanedDoc], rep: Representation) -> Vec<SparseVector<T>> {
    docs.iter()
        .map(|d| match rep {
            Representation::Tfidf => tfidf.transform(d),
            Representation::Counts => tfidf.transform_counts(d),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation across folds.
    pub std: f64,
}

impl MeanStd {
    fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub model: LinearKind,
    pub representation: Representation,
    pub accuracy: MeanStd,
    pub macro_f1: MeanStd,
    pub weighted_f1: MeanStd,
    pub folds: Vec<FoldScore>,
}

impl LeaderboardRow {
    pub fn metric(&self, m: RankingMetric) -> f64 {
        match m {
            RankingMetric::WeightedF1 => self.weighted_f1.mean,
            RankingMetric::MacroF1 => self.macro_f1.mean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankingMetric {
    WeightedF1,
    MacroF1,
}

impl RankingMetric {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Sentiment => Self::WeightedF1,
            Task::Emotion => Self::MacroF1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::WeightedF1 => "weighted_f1",
            Self::MacroF1 => "macro_f1",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    pub task: Task,
    pub ranking_metric: RankingMetric,
    pub folds: usize,
    pub rows: Vec<LeaderboardRow>,
}

impl Leaderboard {
    pub fn best(&self) -> &LeaderboardRow {
        &self.rows[0]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "rank,model,representation,accuracy_mean,accuracy_std,macro_f1_mean,macro_f1_std,weighted_f1_mean,weighted_f1_std\n",
        );
        for (i, r) in self.rows.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                i + 1,
                r.model,
                r.representation,
                r.accuracy.mean,
                r.accuracy.std,
                r.macro_f1.mean,
                r.macro_f1.std,
                r.weighted_f1.mean,
                r.weighted_f1.std
            ));
        }
        out
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{} leaderboard ({} folds, ranked by {})\n{:<4} {:<8} {:<7} {:>15} {:>15} {:>15}\n",
            self.task.name(),
            self.folds,
            self.ranking_metric.name(),
            "#",
            "model",
            "repr",
            "accuracy",
            "macro_f1",
            "weighted_f1"
        );
        for (i, r) in self.rows.iter().enumerate() {
            let cell = |m: MeanStd| format!("{:.4} ± {:.4}", m.mean, m.std);
            out.push_str(&format!(
                "{:<4} {:<8} {:<7} {:>15} {:>15} {:>15}\n",
                i + 1,
                r.model.name(),
                r.representation.to_string(),
                cell(r.accuracy),
                cell(r.macro_f1),
                cell(r.weighted_f1)
            ));
        }
        out
    }
}

/// One cross-validation fold with the vectorizer fitted on its training
/// portion only.
#[derive(Debug, Clone)]
pub struct FoldPlan {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub vectorizer: TfidfModel,
}

pub fn fold_plans(
    docs: &[CleanedDoc],
    labels: &[usize],
    folds: usize,
    seed: u64,
    tfidf: &TfidfOptions,
) -> Result<Vec<FoldPlan>> {
    if folds < 2 {
        return Err(LinearError::InvalidOptions("at least 2 folds are required".into()));
    }
    if docs.len() != labels.len() {
        return Err(LinearError::LengthMismatch(docs.len(), labels.len()));
    }
    stratified_kfold(labels, folds, seed)?
        .into_iter()
        .map(|(train, val)| {
            let train_docs: Vec<CleanedDoc> = train.iter().map(|&i| docs[i].clone()).collect();
            let vectorizer = fit_tfidf(&train_docs, tfidf.clone())?;
            Ok(FoldPlan { train, val, vectorizer })
        })
        .collect()
}

/// Stratified k-fold comparison of `candidates`. Folds run in parallel;
/// fold `k` trains with seed `seed + k`, so the result does not depend on
/// scheduling.
#[allow(clippy::too_many_arguments)]
pub fn crossval_leaderboard(
    docs: &[CleanedDoc],
    labels: &[usize],
    task: Task,
    label_names: &[String],
    folds: usize,
    seed: u64,
    candidates: &[Candidate],
    tfidf: &TfidfOptions,
) -> Result<Leaderboard> {
    let n_classes = label_names.len();
    let plans = fold_plans(docs, labels, folds, seed, tfidf)?;
    let per_fold: Vec<Vec<FoldScore>> = plans
        .par_iter()
        .enumerate()
        .map(|(k, plan)| {
            let train_docs: Vec<&CleanedDoc> = plan.train.iter().map(|&i| &docs[i]).collect();
            let val_docs: Vec<&CleanedDoc> = plan.val.iter().map(|&i| &docs[i]).collect();
            let y_train: Vec<usize> = plan.train.iter().map(|&i| labels[i]).collect();
            let y_val: Vec<usize> = plan.val.iter().map(|&i| labels[i]).collect();
            candidates
                .iter()
                .map(|cand| {
                    let rep = cand.kind.representation();
                    let x_train = vectorize::<f64>(&plan.vectorizer, &train_docs, rep);
                    let x_val = vectorize::<f64>(&plan.vectorizer, &val_docs, rep);
                    let model = cand.fit(&x_train, &y_train, n_classes, seed + k as u64)?;
                    let mut pred = Vec::with_capacity(x_val.len());
                    let mut scores = Vec::with_capacity(x_val.len());
                    for x in &x_val {
                        let (p, s) = model.predict(x)?;
                        pred.push(p);
                        scores.push(s);
                    }
                    let r = MetricReport::compute(&y_val, &pred, &scores, label_names)?;
                    Ok(FoldScore {
                        accuracy: r.accuracy,
                        macro_f1: r.macro_avg.f1,
                        weighted_f1: r.weighted.f1,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let ranking_metric = RankingMetric::for_task(task);
    let mut rows: Vec<LeaderboardRow> = candidates
        .iter()
        .enumerate()
        .map(|(c, cand)| {
            let scores: Vec<FoldScore> = per_fold.iter().map(|f| f[c]).collect();
            let col = |f: fn(&FoldScore) -> f64| MeanStd::of(&scores.iter().map(f).collect::<Vec<_>>());
            LeaderboardRow {
                model: cand.kind,
                representation: cand.kind.representation(),
                accuracy: col(|s| s.accuracy),
                macro_f1: col(|s| s.macro_f1),
                weighted_f1: col(|s| s.weighted_f1),
                folds: scores,
            }
        })
        .collect();
    // stable sort keeps candidate order on ties
    rows.sort_by(|a, b| b.metric(ranking_metric).total_cmp(&a.metric(ranking_metric)));
    Ok(Leaderboard {
        task,
        ranking_metric,
        folds,
        rows,
    })
}

/// Fits `candidate` on all of `docs` with a vectorizer fitted on the same
/// documents and attaches it, ready for prediction on raw cleaned text.
pub fn fit_with_vectorizer<T: Scalar>(
    candidate: &Candidate,
    docs: &[CleanedDoc],
    labels: &[usize],
    task: Task,
    label_names: &[String],
    seed: u64,
    tfidf: &TfidfOptions,
) -> Result<LinearModel<T>> {
    let vectorizer = fit_tfidf(docs, tfidf.clone())?;
    let refs: Vec<&CleanedDoc> = docs.iter().collect();
    let x = vectorize::<T>(&vectorizer, &refs, candidate.kind.representation());
    let mut model = candidate.fit(&x, labels, label_names.len(), seed)?;
    model.task = Some(task);
    model.labels = label_names.to_vec();
    model.vectorizer = Some(vectorizer);
    Ok(model)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LinearHeader {
    section: String,
    kind: LinearKind,
    task: Option<Task>,
    labels: Vec<String>,
    n_classes: usize,
    dim: usize,
    vectorizer: Option<TfidfModel>,
    preprocessor: Option<Preprocessor>,
}

/// Serializes into the shared container with section tag `linear`.
pub fn to_bytes(model: &LinearModel<f32>, preprocessor: Option<&Preprocessor>) -> Result<Vec<u8>> {
    let header = LinearHeader {
        section: "linear".into(),
        kind: model.kind,
        task: model.task,
        labels: model.labels.clone(),
        n_classes: model.n_classes,
        dim: model.dim,
        vectorizer: model.vectorizer.clone(),
        preprocessor: preprocessor.cloned(),
    };
    let json = serde_json::to_string(&header).map_err(TrainingError::from)?;
    let w = Tensor::new([model.n_classes, model.dim.max(1)], if model.dim == 0 {
        vec![0.0; model.n_classes]
    } else {
        model.weights.clone()
    })
    .map_err(TrainingError::from)?;
    let b = Tensor::new([model.n_classes], model.bias.clone()).map_err(TrainingError::from)?;
    Ok(encode(&json, &[("weight", &w), ("bias", &b)])?)
}

pub fn from_bytes(bytes: &[u8]) -> Result<(LinearModel<f32>, Option<Preprocessor>)> {
    let c = decode(bytes)?;
    let corrupt = |m: String| LinearError::Container(TrainingError::CorruptContainer(m));
    let header: LinearHeader = serde_json::from_str(&c.header).map_err(|e| corrupt(format!("header: {e}")))?;
    if header.section != "linear" {
        return Err(corrupt(format!("expected a linear container, found section {:?}", header.section)));
    }
    let get = |name: &str| {
        c.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| corrupt(format!("missing tensor {name}")))
    };
    let (w, b) = (get("weight")?, get("bias")?);
    if w.shape() != [header.n_classes, header.dim.max(1)] || b.shape() != [header.n_classes] || c.tensors.len() != 2 {
        return Err(corrupt("tensor shapes disagree with header".into()));
    }
    let model = LinearModel {
        kind: header.kind,
        weights: if header.dim == 0 { Vec::new() } else { w.data().to_vec() },
        bias: b.data().to_vec(),
        n_classes: header.n_classes,
        dim: header.dim,
        task: header.task,
        labels: header.labels,
        vectorizer: header.vectorizer,
    };
    Ok((model, header.preprocessor))
}

pub fn save_model(model: &LinearModel<f32>, preprocessor: Option<&Preprocessor>, path: impl AsRef<Path>) -> Result<()> {
    Ok(write_atomic(path.as_ref(), &to_bytes(model, preprocessor)?)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(LinearModel<f32>, Option<Preprocessor>)> {
    from_bytes(&std::fs::read(path).map_err(TrainingError::from)?)
}
