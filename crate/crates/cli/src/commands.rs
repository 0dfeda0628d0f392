use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use ulasan::corpus::{
    class_distribution, load_csv, stratified_split, to_labeled, LabelSchema, LabeledExample, Task, DEFAULT_RATIOS,
};
use ulasan::linear::{self, Candidate, LinearKind, Leaderboard};
use ulasan::metrics::MetricReport;
use ulasan::neural::{build_model, REGISTERED_MODELS};
use ulasan::textprep::{CleanedDoc, Preprocessor, SlangLexicon};
use ulasan::training::artifacts::{RunDir, TestReports};
use ulasan::training::{self, encode_for_model, reports_from_probs, NeuralData, NeuralSplit, RunContext};
use ulasan::vectorize::{build_vocab, ngram_frequencies};

use crate::args::{CompareArgs, EvaluateArgs, PredictArgs, PrepArgs, SplitChoice, StatsArgs, Track, TrainArgs};
use crate::config::{Overrides, RunSettings};
use crate::predict::{linear_file, LinearTask, Predictor};
use crate::UsageError;

fn load_labeled(path: &Path, settings: &RunSettings) -> Result<Vec<LabeledExample>> {
    let reviews = load_csv(path, &settings.data.columns)?;
    Ok(to_labeled(&reviews, &LabelSchema::standard()))
}

fn preprocessor(lexicon: Option<&Path>) -> Result<Preprocessor> {
    match lexicon {
        None => Ok(Preprocessor::standard()),
        Some(p) => {
            let lex = SlangLexicon::load(p).with_context(|| format!("cannot load lexicon {}", p.display()))?;
            Ok(Preprocessor::new(Default::default(), lex)?)
        }
    }
}

pub fn stats(args: &StatsArgs, out: &mut dyn Write) -> Result<()> {
    let settings = RunSettings::default();
    let reviews = load_csv(&args.data, &settings.data.columns)?;
    let dist = class_distribution(&reviews)?;
    writeln!(out, "{} reviews", dist.total)?;
    for task in [Task::Sentiment, Task::Emotion] {
        writeln!(out, "\n{:<10} {:>7} {:>7}", task.name(), "count", "percent")?;
        for c in dist.counts(task) {
            writeln!(out, "{:<10} {:>7} {:>6.1}%", c.label, fmt_thousands(c.count), c.percent)?;
        }
    }
    let pre = Preprocessor::standard();
    let schema = LabelSchema::standard();
    for label in ["Positive", "Negative"] {
        let id = schema.id(Task::Sentiment, label);
        let texts: Vec<&str> = reviews
            .iter()
            .filter(|r| schema.id(Task::Sentiment, &r.sentiment) == id)
            .map(|r| r.text.as_str())
            .collect();
        let docs = pre.clean_all(&texts);
        for (n, name) in [(1, "unigrams"), (2, "bigrams")] {
            writeln!(out, "\ntop {name} ({label}, {} reviews)", docs.len())?;
            for (g, c) in ngram_frequencies(&docs, n, args.top) {
                writeln!(out, "  {g:<30} {c}")?;
            }
        }
    }
    Ok(())
}

fn fmt_thousands(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

#[derive(Serialize)]
struct PrepRecord<'a> {
    text: &'a str,
    tokens: &'a [String],
    sentiment: &'a str,
    emotion: &'a str,
}

pub fn prep(args: &PrepArgs, out: &mut dyn Write) -> Result<()> {
    let settings = RunSettings::default();
    let reviews = load_csv(&args.data, &settings.data.columns)?;
    let pre = preprocessor(args.lexicon.as_deref())?;
    let texts: Vec<&str> = reviews.iter().map(|r| r.text.as_str()).collect();
    let docs = pre.clean_all(&texts);
    let mut buf = Vec::new();
    for (r, d) in reviews.iter().zip(&docs) {
        let rec = PrepRecord {
            text: &r.text,
            tokens: &d.tokens,
            sentiment: &r.sentiment,
            emotion: &r.emotion,
        };
        serde_json::to_writer(&mut buf, &rec)?;
        buf.push(b'\n');
    }
    match &args.out {
        Some(p) => std::fs::write(p, buf).with_context(|| format!("cannot write {}", p.display()))?,
        None => out.write_all(&buf)?,
    }
    Ok(())
}

fn timestamp() -> String {
    chrono::Local::now().format("%Y%m%d-%H%M%S").to_string()
}

fn overrides(args: &TrainArgs) -> Overrides {
    Overrides {
        seed: args.seed,
        lr: args.lr,
        epochs: args.epochs,
        batch_size: args.batch_size,
        weight_decay: args.weight_decay,
        dropout: args.dropout,
        max_len: args.max_len,
        embed_dim: args.embed_dim,
        hidden_dim: args.hidden_dim,
        folds: args.folds,
    }
}

/// Cleaned documents and the seeded 80/10/10 split stratified on emotion.
struct Prepared {
    examples: Vec<LabeledExample>,
    docs: Vec<CleanedDoc>,
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

fn prepare(data: &Path, settings: &RunSettings, pre: &Preprocessor) -> Result<Prepared> {
    let examples = load_labeled(data, settings)?;
    let texts: Vec<&str> = examples.iter().map(|e| e.text.as_str()).collect();
    let docs = pre.clean_all(&texts);
    let emotions: Vec<usize> = examples.iter().map(|e| e.emotion).collect();
    let split = stratified_split(&emotions, DEFAULT_RATIOS, settings.seed())?;
    Ok(Prepared {
        examples,
        docs,
        train: split.train,
        val: split.val,
        test: split.test,
    })
}

impl Prepared {
    fn neural_split(&self, idx: &[usize], vocab: &ulasan::vectorize::Vocabulary, max_len: usize) -> NeuralSplit {
        NeuralSplit::new(
            idx.iter().map(|&i| encode_for_model(&self.docs[i], vocab, max_len)).collect(),
            idx.iter().map(|&i| self.examples[i].sentiment).collect(),
            idx.iter().map(|&i| self.examples[i].emotion).collect(),
        )
    }
}

pub fn train(args: &TrainArgs, out: &mut dyn Write) -> Result<PathBuf> {
    match args.track {
        Track::Neural => train_neural(args, out),
        Track::Linear => train_linear(args, out),
    }
}

fn train_neural(args: &TrainArgs, out: &mut dyn Write) -> Result<PathBuf> {
    let name = args
        .model
        .as_deref()
        .ok_or_else(|| UsageError("--model is required for the neural track".into()))?;
    if !REGISTERED_MODELS.contains(&name) {
        return Err(UsageError(ulasan::neural::ModelConfig::for_model(name, 2).unwrap_err().to_string()).into());
    }
    let settings = RunSettings::resolve(args.config.as_deref(), &overrides(args))?;
    let pre = preprocessor(settings.data.lexicon.as_deref().map(Path::new))?;
    let p = prepare(&args.data, &settings, &pre)?;
    let train_docs: Vec<CleanedDoc> = p.train.iter().map(|&i| p.docs[i].clone()).collect();
    let vocab = build_vocab(&train_docs, settings.data.min_count)?;
    let cfg = settings.model_config(name, vocab.len())?;
    let data = NeuralData {
        train: p.neural_split(&p.train, &vocab, cfg.max_len),
        val: p.neural_split(&p.val, &vocab, cfg.max_len),
        test: p.neural_split(&p.test, &vocab, cfg.max_len),
    };
    let model = build_model::<f32>(&cfg, settings.seed())?;
    let dir = RunDir::create(&args.out, &timestamp(), name)?;
    dir.write_text("config.json", &serde_json::to_string_pretty(&settings)?)?;
    let labels = LabelSchema::standard();
    let outcome = training::train(
        model,
        &data,
        &settings.train,
        &labels,
        Some(RunContext {
            dir: &dir,
            vocabulary: &vocab,
            preprocessor: &pre,
        }),
    )?;
    let m = &outcome.metrics;
    writeln!(out, "run directory: {}", dir.path.display())?;
    writeln!(
        out,
        "model {} | vocabulary {} | parameters {} | epochs {} | best epoch {}{}",
        m.model_name,
        vocab.len(),
        m.parameter_count,
        m.history.len(),
        m.best_epoch.map_or("-".into(), |e| e.to_string()),
        if m.stopped_early { " (stopped early)" } else { "" }
    )?;
    if let Some(t) = &m.test {
        print_reports(out, t)?;
    }
    Ok(dir.path)
}

fn print_reports(out: &mut dyn Write, t: &TestReports) -> Result<()> {
    writeln!(out, "\nsentiment\n{}", t.sentiment.table())?;
    writeln!(out, "emotion\n{}", t.emotion.table())?;
    Ok(())
}

/// `metrics.json` of a linear run.
#[derive(Debug, Serialize, Deserialize)]
pub struct LinearRunDoc {
    pub run_id: String,
    pub model_name: String,
    pub config: RunSettings,
    pub leaderboards: BTreeMap<String, Leaderboard>,
    pub selected: BTreeMap<String, LinearKind>,
    pub test: TestReports,
}

fn linear_candidates(args: &TrainArgs, settings: &RunSettings) -> Result<Vec<Candidate>> {
    let kinds = match args.model.as_deref() {
        None | Some("all") => LinearKind::ALL.to_vec(),
        Some(k) => vec![k.parse::<LinearKind>().map_err(|e| UsageError(e.to_string()))?],
    };
    Ok(kinds
        .into_iter()
        .map(|kind| Candidate {
            kind,
            sgd: settings.linear.sgd.clone(),
            smoothing: settings.linear.smoothing,
            class_weighted: settings.linear.class_weighted,
        })
        .collect())
}

fn train_linear(args: &TrainArgs, out: &mut dyn Write) -> Result<PathBuf> {
    let settings = RunSettings::resolve(args.config.as_deref(), &overrides(args))?;
    let candidates = linear_candidates(args, &settings)?;
    let pre = preprocessor(settings.data.lexicon.as_deref().map(Path::new))?;
    let p = prepare(&args.data, &settings, &pre)?;
    let mut pool: Vec<usize> = p.train.iter().chain(&p.val).copied().collect();
    pool.sort_unstable();
    let pool_docs: Vec<CleanedDoc> = pool.iter().map(|&i| p.docs[i].clone()).collect();
    let test_docs: Vec<&CleanedDoc> = p.test.iter().map(|&i| &p.docs[i]).collect();
    let dir = RunDir::create(&args.out, &timestamp(), "linear")?;
    dir.write_text("config.json", &serde_json::to_string_pretty(&settings)?)?;
    let schema = LabelSchema::standard();
    let seed = settings.seed();

    let mut leaderboards = BTreeMap::new();
    let mut selected = BTreeMap::new();
    let mut reports = Vec::new();
    for task in [Task::Sentiment, Task::Emotion] {
        let names = schema.labels(task);
        let y: Vec<usize> = pool.iter().map(|&i| p.examples[i].label(task)).collect();
        let lb = linear::crossval_leaderboard(
            &pool_docs,
            &y,
            task,
            names,
            settings.linear.folds,
            seed,
            &candidates,
            &settings.linear.tfidf,
        )?;
        dir.write_text(&format!("leaderboard_{}.csv", task.name()), &lb.to_csv())?;
        dir.log(&lb.table())?;
        writeln!(out, "{}", lb.table())?;
        let best = candidates.iter().find(|c| c.kind == lb.best().model).expect("leaderboard row comes from a candidate");
        let model = linear::fit_with_vectorizer::<f32>(best, &pool_docs, &y, task, names, seed, &settings.linear.tfidf)?;
        linear::save_model(&model, Some(&pre), dir.path.join(linear_file(task)))?;

        let truth: Vec<usize> = p.test.iter().map(|&i| p.examples[i].label(task)).collect();
        let mut pred = Vec::with_capacity(truth.len());
        let mut scores = Vec::with_capacity(truth.len());
        for d in &test_docs {
            let (c, s) = model.predict_doc(d)?;
            pred.push(c);
            scores.push(s.iter().map(|&v| f64::from(v)).collect::<Vec<f64>>());
        }
        let report = MetricReport::compute(&truth, &pred, &scores, names)?;
        dir.write_task_curves(task.name(), &report, &truth, &scores)?;
        dir.log(&format!("{} test ({}):\n{}", task.name(), best.kind, report.table()))?;
        selected.insert(task.name().to_string(), best.kind);
        leaderboards.insert(task.name().to_string(), lb);
        reports.push(report);
    }
    let emotion = reports.pop().expect("two tasks");
    let sentiment = reports.pop().expect("two tasks");
    let mut h = crc32fast::Hasher::new();
    h.update(serde_json::to_string(&settings)?.as_bytes());
    for (e, d) in p.examples.iter().zip(&p.docs) {
        h.update(d.tokens.join(" ").as_bytes());
        h.update(&[e.sentiment as u8, e.emotion as u8, b'\n']);
    }
    let doc = LinearRunDoc {
        run_id: format!("linear-s{seed}-{:08x}", h.finalize()),
        model_name: "linear".into(),
        config: settings,
        leaderboards,
        selected,
        test: TestReports { sentiment, emotion },
    };
    dir.write_text("metrics.json", &serde_json::to_string_pretty(&doc)?)?;
    writeln!(out, "run directory: {}", dir.path.display())?;
    writeln!(
        out,
        "selected: sentiment {}, emotion {}",
        doc.selected["sentiment"], doc.selected["emotion"]
    )?;
    print_reports(out, &doc.test)?;
    Ok(dir.path)
}

pub fn evaluate(args: &EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let predictor = Predictor::load(&args.model)?;
    let settings = RunSettings::resolve(None, &Overrides { seed: Some(args.seed), ..Default::default() })?;
    let examples = load_labeled(&args.data, &settings)?;
    let idx: Vec<usize> = match args.split {
        SplitChoice::All => (0..examples.len()).collect(),
        SplitChoice::Test => {
            let emotions: Vec<usize> = examples.iter().map(|e| e.emotion).collect();
            stratified_split(&emotions, DEFAULT_RATIOS, args.seed)?.test
        }
    };
    let mut reports: BTreeMap<String, MetricReport> = BTreeMap::new();
    match &predictor {
        Predictor::Neural(a) => {
            let texts: Vec<&str> = idx.iter().map(|&i| examples[i].text.as_str()).collect();
            let docs = a.preprocessor.clean_all(&texts);
            let split = NeuralSplit::new(
                docs.iter().map(|d| encode_for_model(d, &a.vocabulary, a.model.config().max_len)).collect(),
                idx.iter().map(|&i| examples[i].sentiment).collect(),
                idx.iter().map(|&i| examples[i].emotion).collect(),
            );
            let (ps, pe) = training::predict_probs(&a.model, &split.sequences, 64)?;
            let t = reports_from_probs(&split, &ps, &pe, &a.labels)?;
            reports.insert("sentiment".into(), t.sentiment);
            reports.insert("emotion".into(), t.emotion);
        }
        Predictor::Linear { sentiment, emotion } => {
            for (task, lt) in [(Task::Sentiment, sentiment), (Task::Emotion, emotion)] {
                if let Some(lt) = lt {
                    reports.insert(task.name().into(), linear_report(lt, task, &examples, &idx)?);
                }
            }
        }
    }
    if args.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&reports)?)?;
    } else {
        writeln!(out, "{} on {} samples", predictor.model_name(), idx.len())?;
        for (task, r) in &reports {
            writeln!(out, "\n{task}\n{}", r.table())?;
        }
    }
    Ok(())
}

fn linear_report(lt: &LinearTask, task: Task, examples: &[LabeledExample], idx: &[usize]) -> Result<MetricReport> {
    let mut truth = Vec::with_capacity(idx.len());
    let mut pred = Vec::with_capacity(idx.len());
    let mut scores = Vec::with_capacity(idx.len());
    for &i in idx {
        let doc = lt.preprocessor.clean(&examples[i].text);
        let (c, s) = lt.model.predict_doc(&doc)?;
        truth.push(examples[i].label(task));
        pred.push(c);
        scores.push(s.iter().map(|&v| f64::from(v)).collect::<Vec<f64>>());
    }
    Ok(MetricReport::compute(&truth, &pred, &scores, &lt.model.labels)?)
}

pub fn compare(args: &CompareArgs, out: &mut dyn Write) -> Result<()> {
    writeln!(
        out,
        "{:<40} {:<12} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "run", "model", "sent_acc", "sent_wf1", "sent_auc", "emo_acc", "emo_mf1", "emo_auc"
    )?;
    for run in &args.runs {
        let path = run.join("metrics.json");
        let text = std::fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
        let v: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("{} is not JSON", path.display()))?;
        let test = &v["test"];
        if test.is_null() {
            bail!("{} has no test reports", path.display());
        }
        let num = |task: &str, path: &[&str]| -> String {
            let mut cur = &test[task];
            for k in path {
                cur = &cur[*k];
            }
            cur.as_f64().map_or("-".into(), |x| format!("{x:.4}"))
        };
        let name = run.file_name().map_or_else(|| run.display().to_string(), |n| n.to_string_lossy().into_owned());
        writeln!(
            out,
            "{:<40} {:<12} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
            name,
            v["model_name"].as_str().unwrap_or("?"),
            num("sentiment", &["accuracy"]),
            num("sentiment", &["weighted", "f1"]),
            num("sentiment", &["auc"]),
            num("emotion", &["accuracy"]),
            num("emotion", &["macro_avg", "f1"]),
            num("emotion", &["auc"]),
        )?;
    }
    Ok(())
}

pub fn predict(args: &PredictArgs, out: &mut dyn Write) -> Result<()> {
    let predictor = Predictor::load(&args.model)?;
    let lines: Vec<String> = match (&args.text, &args.input) {
        (Some(t), _) => vec![t.clone()],
        (None, Some(p)) => {
            let f = std::fs::File::open(p).with_context(|| format!("cannot read {}", p.display()))?;
            std::io::BufReader::new(f).lines().collect::<std::io::Result<_>>()?
        }
        (None, None) => return Err(UsageError("one of --text or --input is required".into()).into()),
    };
    for line in lines {
        writeln!(out, "{}", serde_json::to_string(&predictor.predict(&line)?)?)?;
    }
    Ok(())
}
