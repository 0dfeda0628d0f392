//! Dataset ingestion: the semicolon-delimited review CSV, the fixed label
//! schema, class statistics and deterministic stratified splits.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("column '{0}' not found in header")]
    MissingColumn(String),
    #[error("invalid UTF-8 at line {line}")]
    EncodingError { line: u64 },
    #[error("dataset contains no data rows")]
    EmptyDataset,
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("unknown {task} label '{value}' at line {line}")]
    UnknownLabel {
        task: &'static str,
        value: String,
        line: u64,
    },
    #[error("class {class} has {count} member(s); at least {required} are needed")]
    ClassTooSmall {
        class: String,
        count: usize,
        required: usize,
    },
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    InvalidRatios([f64; 3]),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// The two classification tasks carried by every review.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Sentiment,
    Emotion,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Sentiment => "sentiment",
            Task::Emotion => "emotion",
        }
    }

    pub fn num_classes(self) -> usize {
        LabelSchema::standard().labels(self).len()
    }
}

impl std::str::FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sentiment" => Ok(Task::Sentiment),
            "emotion" => Ok(Task::Emotion),
            other => Err(format!("unknown task '{other}' (expected sentiment|emotion)")),
        }
    }
}

/// Fixed label ids: sentiment 0=Negative, 1=Positive; emotion 0=Happy,
/// 1=Sadness, 2=Fear, 3=Love, 4=Anger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    pub sentiment: Vec<String>,
    pub emotion: Vec<String>,
}

impl Default for LabelSchema {
    fn default() -> Self {
        Self::standard()
    }
}

impl LabelSchema {
    pub fn standard() -> Self {
        Self {
            sentiment: vec!["Negative".into(), "Positive".into()],
            emotion: ["Happy", "Sadness", "Fear", "Love", "Anger"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }

    pub fn labels(&self, task: Task) -> &[String] {
        match task {
            Task::Sentiment => &self.sentiment,
            Task::Emotion => &self.emotion,
        }
    }

    pub fn name(&self, task: Task, id: usize) -> &str {
        &self.labels(task)[id]
    }

    /// Case-insensitive, whitespace-trimmed lookup. "Sad" is an alias of
    /// "Sadness".
    pub fn id(&self, task: Task, label: &str) -> Option<usize> {
        let key = label.trim().to_lowercase();
        let key = match (task, key.as_str()) {
            (Task::Emotion, "sad") => "sadness".to_string(),
            _ => key,
        };
        self.labels(task)
            .iter()
            .position(|l| l.to_lowercase() == key)
    }
}

/// One dataset row as it appears in the file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawReview {
    pub text: String,
    pub category: String,
    pub sentiment: String,
    pub emotion: String,
}

/// A review with both labels mapped to ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    pub text: String,
    pub category: String,
    pub sentiment: usize,
    pub emotion: usize,
}

impl LabeledExample {
    pub fn label(&self, task: Task) -> usize {
        match task {
            Task::Sentiment => self.sentiment,
            Task::Emotion => self.emotion,
        }
    }
}

impl RawReview {
    pub fn to_labeled(&self, schema: &LabelSchema) -> Option<LabeledExample> {
        Some(LabeledExample {
            text: self.text.clone(),
            category: self.category.clone(),
            sentiment: schema.id(Task::Sentiment, &self.sentiment)?,
            emotion: schema.id(Task::Emotion, &self.emotion)?,
        })
    }
}

pub fn to_labeled(reviews: &[RawReview], schema: &LabelSchema) -> Vec<LabeledExample> {
    reviews
        .iter()
        .map(|r| r.to_labeled(schema).expect("labels validated at load"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnConfig {
    pub text: String,
    pub category: String,
    pub sentiment: String,
    pub emotion: String,
}

impl Default for ColumnConfig {
    fn default() -> Self {
        Self {
            text: "Customer Review".into(),
            category: "Category".into(),
            sentiment: "Sentiment".into(),
            emotion: "Emotion".into(),
        }
    }
}

fn reader_builder() -> csv::ReaderBuilder {
    let mut b = csv::ReaderBuilder::new();
    b.delimiter(b';').has_headers(true).flexible(false);
    b
}

/// Loads reviews from a `;`-delimited UTF-8 file with a header row.
pub fn load_csv(path: impl AsRef<Path>, columns: &ColumnConfig) -> Result<Vec<RawReview>> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err)?;
    parse_csv(&bytes, columns)
}

/// Parses CSV content already in memory; see [`load_csv`].
pub fn parse_csv(bytes: &[u8], columns: &ColumnConfig) -> Result<Vec<RawReview>> {
    let bytes = bytes.strip_prefix("\u{feff}".as_bytes()).unwrap_or(bytes);
    let mut rdr = reader_builder().from_reader(bytes);
    let header = rdr.byte_headers().map_err(|e| map_csv_error(e, 1))?.clone();
    let header: Vec<String> = header
        .iter()
        .map(|h| {
            std::str::from_utf8(h)
                .map(|s| s.trim().to_string())
                .map_err(|_| CorpusError::EncodingError { line: 1 })
        })
        .collect::<Result<_>>()?;
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name.trim())
            .ok_or_else(|| CorpusError::MissingColumn(name.to_string()))
    };
    let text_col = find(&columns.text)?;
    let cat_col = find(&columns.category)?;
    let sent_col = find(&columns.sentiment)?;
    let emo_col = find(&columns.emotion)?;

    let schema = LabelSchema::standard();
    let mut out = Vec::new();
    let mut record = csv::ByteRecord::new();
    loop {
        let line = rdr.position().line();
        match rdr.read_byte_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(map_csv_error(e, line)),
        }
        let line = record.position().map(|p| p.line()).unwrap_or(line);
        let field = |i: usize| -> Result<String> {
            let raw = record.get(i).unwrap_or_default();
            std::str::from_utf8(raw)
                .map(str::to_string)
                .map_err(|_| CorpusError::EncodingError { line })
        };
        let review = RawReview {
            text: field(text_col)?,
            category: field(cat_col)?,
            sentiment: field(sent_col)?,
            emotion: field(emo_col)?,
        };
        if review.text.trim().is_empty() {
            return Err(CorpusError::MalformedRow {
                line,
                reason: "empty review text".into(),
            });
        }
        if schema.id(Task::Sentiment, &review.sentiment).is_none() {
            return Err(CorpusError::UnknownLabel {
                task: "sentiment",
                value: review.sentiment,
                line,
            });
        }
        if schema.id(Task::Emotion, &review.emotion).is_none() {
            return Err(CorpusError::UnknownLabel {
                task: "emotion",
                value: review.emotion,
                line,
            });
        }
        out.push(review);
    }
    if out.is_empty() {
        return Err(CorpusError::EmptyDataset);
    }
    Ok(out)
}

fn map_csv_error(e: csv::Error, fallback_line: u64) -> CorpusError {
    let line = e.position().map(|p| p.line()).unwrap_or(fallback_line);
    match e.kind() {
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => CorpusError::MalformedRow {
            line,
            reason: format!("expected {expected_len} fields, found {len}"),
        },
        csv::ErrorKind::Utf8 { .. } => CorpusError::EncodingError { line },
        csv::ErrorKind::Io(err) => CorpusError::Io {
            path: "<input>".into(),
            source: std::io::Error::new(err.kind(), err.to_string()),
        },
        _ => CorpusError::MalformedRow {
            line,
            reason: e.to_string(),
        },
    }
}

/// Writes reviews in the same dialect [`load_csv`] reads.
pub fn write_csv<W: Write>(out: W, reviews: &[RawReview], columns: &ColumnConfig) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(b';').from_writer(out);
    w.write_record([
        columns.category.as_str(),
        columns.text.as_str(),
        columns.sentiment.as_str(),
        columns.emotion.as_str(),
    ])?;
    for r in reviews {
        w.write_record([&r.category, &r.text, &r.sentiment, &r.emotion])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelCount {
    pub label: String,
    pub count: usize,
    /// `100 * count / N`, rounded to one decimal.
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub total: usize,
    pub sentiment: Vec<LabelCount>,
    pub emotion: Vec<LabelCount>,
}

impl ClassDistribution {
    pub fn counts(&self, task: Task) -> &[LabelCount] {
        match task {
            Task::Sentiment => &self.sentiment,
            Task::Emotion => &self.emotion,
        }
    }

    pub fn count(&self, task: Task, label: &str) -> Option<usize> {
        let id = LabelSchema::standard().id(task, label)?;
        self.counts(task).get(id).map(|c| c.count)
    }
}

/// Per-label counts for both tasks, in label-id order.
pub fn class_distribution(reviews: &[RawReview]) -> Result<ClassDistribution> {
    if reviews.is_empty() {
        return Err(CorpusError::EmptyDataset);
    }
    let schema = LabelSchema::standard();
    let n = reviews.len();
    let tally = |task: Task, pick: fn(&RawReview) -> &str| {
        let mut counts = vec![0usize; schema.labels(task).len()];
        for r in reviews {
            if let Some(id) = schema.id(task, pick(r)) {
                counts[id] += 1;
            }
        }
        counts
            .into_iter()
            .enumerate()
            .map(|(id, count)| LabelCount {
                label: schema.name(task, id).to_string(),
                count,
                percent: (1000.0 * count as f64 / n as f64).round() / 10.0,
            })
            .collect()
    };
    Ok(ClassDistribution {
        total: n,
        sentiment: tally(Task::Sentiment, |r| &r.sentiment),
        emotion: tally(Task::Emotion, |r| &r.emotion),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

pub const DEFAULT_RATIOS: [f64; 3] = [0.8, 0.1, 0.1];

/// Largest-remainder allocation of `count` items over `ratios`; ties go to
/// the earlier bucket.
pub fn largest_remainder(count: usize, ratios: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = ratios.iter().map(|r| r * count as f64).collect();
    let mut alloc: Vec<usize> = exact.iter().map(|e| (e + 1e-9).floor() as usize).collect();
    let mut left = count.saturating_sub(alloc.iter().sum());
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - alloc[a] as f64;
        let rb = exact[b] - alloc[b] as f64;
        if (ra - rb).abs() < 1e-9 {
            a.cmp(&b)
        } else {
            rb.partial_cmp(&ra).unwrap()
        }
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        alloc[i] += 1;
        left -= 1;
    }
    alloc
}

/// Seeded stratified train/val/test split.
///
/// Each class's indices are shuffled with one ChaCha stream (classes visited
/// in ascending id order) and then cut by largest-remainder rounding of
/// `class_count * ratio`. Output lists are sorted ascending.
pub fn stratified_split(labels: &[usize], ratios: [f64; 3], seed: u64) -> Result<SplitIndices> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r))
        || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(CorpusError::InvalidRatios(ratios));
    }
    let by_class = group_by_class(labels);
    for (class, members) in &by_class {
        if members.len() < 3 {
            return Err(CorpusError::ClassTooSmall {
                class: class.to_string(),
                count: members.len(),
                required: 3,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for (_, mut members) in by_class {
        members.shuffle(&mut rng);
        let sizes = largest_remainder(members.len(), &ratios);
        let (train, rest) = members.split_at(sizes[0]);
        let (val, test) = rest.split_at(sizes[1]);
        split.train.extend_from_slice(train);
        split.val.extend_from_slice(val);
        split.test.extend_from_slice(test);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// Indices grouped by label, classes in ascending order, members ascending.
pub fn group_by_class(labels: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    by_class
}

/// Seeded stratified k-fold assignment: returns `(train, validation)` index
/// lists per fold. Within each shuffled class, members are dealt round-robin.
pub fn stratified_kfold(labels: &[usize], folds: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    let by_class = group_by_class(labels);
    for (class, members) in &by_class {
        if members.len() < folds.max(2) {
            return Err(CorpusError::ClassTooSmall {
                class: class.to_string(),
                count: members.len(),
                required: folds.max(2),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0usize; labels.len()];
    let mut offset = 0;
    for (_, mut members) in by_class {
        members.shuffle(&mut rng);
        for (j, idx) in members.into_iter().enumerate() {
            fold_of[idx] = (j + offset) % folds;
        }
        // rotate the starting fold so small classes do not all land in fold 0
        offset += 1;
    }
    Ok((0..folds)
        .map(|f| {
            let (val, train): (Vec<usize>, Vec<usize>) =
                (0..labels.len()).partition(|&i| fold_of[i] == f);
            (train, val)
        })
        .collect())
}
