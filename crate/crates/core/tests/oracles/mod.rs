//! Brute-force reference implementations shared by the property tests and
//! the acceptance suite. Every check returns the worst deviation it saw or
//! a description of the first mismatch.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ulasan::autodiff::{gradcheck, AutodiffError, GradcheckOptions, LstmVars, Tape, Var};
use ulasan::corpus::{stratified_split, DEFAULT_RATIOS};
use ulasan::metrics::MetricReport;
use ulasan::corpus::LabelSchema;
use ulasan::neural::{build_model, Batch, ModelConfig, NeuralError, REGISTERED_MODELS};
use ulasan::training::{train, NeuralData, NeuralSplit, TrainConfig};
use ulasan::textprep::CleanedDoc;
use ulasan::vectorize::{fit_tfidf, EncodedSequence, TfidfOptions};
use ulasan::Tensor64;

pub type Check<T = ()> = Result<T, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

// ---- TF-IDF ----

pub const ALPHABET: [&str; 6] = ["bagus", "jelek", "tidak", "kirim", "cepat", "mantap"];

fn doc(ids: &[usize]) -> CleanedDoc {
    CleanedDoc::from_tokens(ids.iter().map(|&i| ALPHABET[i]))
}

/// Every contiguous token tuple of length 1..=max_n, with multiplicity.
fn grams(ids: &[usize], max_n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for n in 1..=max_n {
        for start in 0..ids.len() {
            if start + n <= ids.len() {
                out.push(ids[start..start + n].to_vec());
            }
        }
    }
    out
}

fn spell(gram: &[usize]) -> String {
    gram.iter().map(|&i| ALPHABET[i]).collect::<Vec<_>>().join(" ")
}

/// Fits on `train` and compares every weight of every training document
/// and of `probe` against `tf * ln(N / (1 + df))`.
pub fn tfidf_case(train: &[Vec<usize>], probe: &[usize]) -> Check<f64> {
    let docs: Vec<CleanedDoc> = train.iter().map(|d| doc(d)).collect();
    let model = fit_tfidf(&docs, TfidfOptions::default()).map_err(|e| e.to_string())?;
    let n = train.len() as f64;
    let mut df: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for d in train {
        let distinct: BTreeSet<Vec<usize>> = grams(d, 2).into_iter().collect();
        for g in distinct {
            *df.entry(g).or_default() += 1;
        }
    }
    let expected_terms: BTreeSet<String> = df.keys().map(|g| spell(g)).collect();
    let found_terms: BTreeSet<String> = model.terms.iter().cloned().collect();
    ensure!(expected_terms == found_terms, "vocabulary {found_terms:?} != {expected_terms:?}");

    let mut worst = 0.0f64;
    for d in train.iter().chain(std::iter::once(&probe.to_vec())) {
        let v = model.transform::<f64>(&doc(d)).to_dense();
        let mut expected = vec![0.0f64; model.dim()];
        for (g, &dfg) in &df {
            let tf = grams(d, 2).iter().filter(|h| *h == g).count() as f64;
            let col = model.column(&spell(g)).ok_or_else(|| format!("no column for {}", spell(g)))?;
            expected[col] = tf * (n / (1.0 + dfg as f64)).ln();
        }
        for (a, b) in v.iter().zip(&expected) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

pub fn random_tfidf_case(rng: &mut ChaCha8Rng) -> (Vec<Vec<usize>>, Vec<usize>) {
    let docs = rng.gen_range(1..=6);
    let train = (0..docs)
        .map(|_| {
            let len = rng.gen_range(0..=8);
            (0..len).map(|_| rng.gen_range(0..ALPHABET.len())).collect()
        })
        .collect();
    let len = rng.gen_range(0..10);
    let probe = (0..len).map(|_| rng.gen_range(0..ALPHABET.len())).collect();
    (train, probe)
}

// ---- classification metrics ----

#[derive(Debug, Clone)]
pub struct MetricsInstance {
    pub classes: usize,
    pub truth: Vec<usize>,
    pub pred: Vec<usize>,
    pub scores: Vec<Vec<f64>>,
}

/// Scores come from a coarse grid so ties are common.
pub fn random_metrics_instance(rng: &mut ChaCha8Rng) -> MetricsInstance {
    let classes = rng.gen_range(2..=5);
    let n = rng.gen_range(1..=30);
    MetricsInstance {
        classes,
        truth: (0..n).map(|_| rng.gen_range(0..classes)).collect(),
        pred: (0..n).map(|_| rng.gen_range(0..classes)).collect(),
        scores: (0..n)
            .map(|_| (0..classes).map(|_| f64::from(rng.gen_range(0u8..6)) / 5.0).collect())
            .collect(),
    }
}

/// AUC by counting every (positive, negative) pair; ties count half.
pub fn pair_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if positive[i] && !positive[j] {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

pub const METRICS_TOL: f64 = 1e-9;

pub fn metrics_case(inst: &MetricsInstance) -> Check<f64> {
    let labels: Vec<String> = (0..inst.classes).map(|c| format!("c{c}")).collect();
    let r = MetricReport::compute(&inst.truth, &inst.pred, &inst.scores, &labels).map_err(|e| e.to_string())?;
    let n = inst.truth.len() as f64;
    let mut worst = 0.0f64;
    let mut cmp = |name: &str, a: f64, b: f64| -> Check {
        let d = (a - b).abs();
        worst = worst.max(d);
        ensure!(d <= METRICS_TOL, "{name}: {a} vs {b}");
        Ok(())
    };

    let hits = inst.truth.iter().zip(&inst.pred).filter(|(t, p)| t == p).count() as f64;
    cmp("accuracy", r.accuracy, hits / n)?;

    let (mut macro_f1, mut weighted_f1, mut macro_p, mut macro_r) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..inst.classes {
        let count = |f: &dyn Fn(usize, usize) -> bool| inst.truth.iter().zip(&inst.pred).filter(|(&t, &p)| f(t, p)).count() as f64;
        let tp = count(&|t, p| t == c && p == c);
        let fp = count(&|t, p| t != c && p == c);
        let fn_ = count(&|t, p| t == c && p != c);
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let rec = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let f1 = if tp > 0.0 { 2.0 * tp / (2.0 * tp + fp + fn_) } else { 0.0 };
        let m = &r.per_class[c];
        cmp("precision", m.precision, p)?;
        cmp("recall", m.recall, rec)?;
        cmp("f1", m.f1, f1)?;
        ensure!(m.support as f64 == tp + fn_, "support of class {c}");
        macro_p += p / inst.classes as f64;
        macro_r += rec / inst.classes as f64;
        macro_f1 += f1 / inst.classes as f64;
        weighted_f1 += f1 * (tp + fn_) / n;
    }
    cmp("macro f1", r.macro_avg.f1, macro_f1)?;
    cmp("macro precision", r.macro_avg.precision, macro_p)?;
    cmp("macro recall", r.macro_avg.recall, macro_r)?;
    cmp("weighted f1", r.weighted.f1, weighted_f1)?;
    ensure!(r.confusion.trace() as f64 == hits, "confusion trace");

    let column = |c: usize| -> (Vec<f64>, Vec<bool>) {
        (inst.scores.iter().map(|s| s[c]).collect(), inst.truth.iter().map(|&t| t == c).collect())
    };
    let expected_auc = if inst.classes == 2 {
        let (col, pos) = column(1);
        pair_auc(&col, &pos)
    } else {
        let per: Vec<f64> = (0..inst.classes)
            .filter_map(|c| {
                let (col, pos) = column(c);
                pair_auc(&col, &pos)
            })
            .collect();
        (!per.is_empty()).then(|| per.iter().sum::<f64>() / per.len() as f64)
    };
    match (r.auc, expected_auc) {
        (Some(a), Some(b)) => cmp("auc", a, b)?,
        (None, None) => {}
        (a, b) => return Err(format!("auc {a:?} vs {b:?}")),
    }
    for row in &r.confusion_normalized {
        let s: f64 = row.iter().sum();
        ensure!(s == 0.0 || (s - 1.0).abs() <= METRICS_TOL, "normalized row sums to {s}");
    }
    Ok(worst)
}

// ---- stratified split ----

/// 2..=5 classes of 5..80 members each, shuffled.
pub fn random_labels(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let classes = rng.gen_range(2..=5);
    let mut v: Vec<usize> = (0..classes).flat_map(|c| std::iter::repeat(c).take(rng.gen_range(5..80))).collect();
    v.shuffle(rng);
    v
}

/// Partition, per-class ratio within one sample, and seed determinism.
pub fn split_case(labels: &[usize], seed: u64) -> Check {
    let s = stratified_split(labels, DEFAULT_RATIOS, seed).map_err(|e| e.to_string())?;
    let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
    all.sort_unstable();
    ensure!(all == (0..labels.len()).collect::<Vec<_>>(), "split is not a partition");
    let classes: BTreeSet<usize> = labels.iter().copied().collect();
    for c in classes {
        let total = labels.iter().filter(|&&l| l == c).count() as f64;
        for (part, ratio) in [(&s.train, 0.8), (&s.val, 0.1), (&s.test, 0.1)] {
            let got = part.iter().filter(|&&i| labels[i] == c).count() as f64;
            ensure!((got - ratio * total).abs() <= 1.0, "class {c}: {got} of {total} for ratio {ratio}");
        }
    }
    ensure!(s == stratified_split(labels, DEFAULT_RATIOS, seed).map_err(|e| e.to_string())?, "same seed, different split");
    Ok(())
}

// ---- gradient checks ----

pub const GRAD_TOL: f64 = 1e-4;

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor64 {
    let n = shape.iter().product();
    Tensor64::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn check_op(
    label: &str,
    params: Vec<Tensor64>,
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var, AutodiffError>,
) -> Check<f64> {
    let named: Vec<(String, Tensor64)> = params.into_iter().enumerate().map(|(i, t)| (format!("p{i}"), t)).collect();
    let report = gradcheck(&named, GradcheckOptions::default(), f).map_err(|e| format!("{label}: {e}"))?;
    ensure!(report.passes(GRAD_TOL), "{label}: max relative error {:e}", report.max_rel_error);
    Ok(report.max_rel_error)
}

/// Every differentiable op at random inputs; returns the worst relative error.
pub fn gradcheck_ops(seed: u64) -> Check<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let r1 = rand_tensor(&[3, 4], &mut rng);
    worst = worst.max(check_op(
        "dense+relu",
        vec![rand_tensor(&[3, 5], &mut rng), rand_tensor(&[4, 5], &mut rng), rand_tensor(&[4], &mut rng)],
        |t, v| {
            let y = t.dense(v[0], v[1], Some(v[2]))?;
            let y = t.relu(y);
            t.weighted_sum(y, r1.clone())
        },
    )?);

    let ids: Vec<usize> = (0..6).map(|_| rng.gen_range(0..5)).collect();
    let r2 = rand_tensor(&[2, 3, 2], &mut rng);
    worst = worst.max(check_op("embedding", vec![rand_tensor(&[5, 2], &mut rng)], |t, v| {
        let e = t.embedding(v[0], &ids, 2)?;
        t.weighted_sum(e, r2.clone())
    })?);

    let (d, h) = (3, 3);
    let mut p = vec![rand_tensor(&[2, d], &mut rng), rand_tensor(&[2, h], &mut rng), rand_tensor(&[2, h], &mut rng)];
    p.extend([
        rand_tensor(&[4 * h, d], &mut rng),
        rand_tensor(&[4 * h, h], &mut rng),
        rand_tensor(&[4 * h], &mut rng),
        rand_tensor(&[4 * h], &mut rng),
    ]);
    let (rh, rc) = (rand_tensor(&[2, h], &mut rng), rand_tensor(&[2, h], &mut rng));
    worst = worst.max(check_op("lstm_cell", p, |t, v| {
        let lv = LstmVars { w_ih: v[3], w_hh: v[4], b_ih: v[5], b_hh: v[6] };
        let (h1, c1) = t.lstm_cell(v[0], v[1], v[2], &lv, None)?;
        let a = t.weighted_sum(h1, rh.clone())?;
        let b = t.weighted_sum(c1, rc.clone())?;
        t.add(a, b)
    })?);

    let mut p = vec![rand_tensor(&[2, 4, d], &mut rng)];
    for _ in 0..2 {
        p.extend([
            rand_tensor(&[4 * h, d], &mut rng),
            rand_tensor(&[4 * h, h], &mut rng),
            rand_tensor(&[4 * h], &mut rng),
            rand_tensor(&[4 * h], &mut rng),
        ]);
    }
    let rb = rand_tensor(&[2, 2 * h], &mut rng);
    let lengths = [4, rng.gen_range(1..=4)];
    worst = worst.max(check_op("bilstm", p, |t, v| {
        let f = LstmVars { w_ih: v[1], w_hh: v[2], b_ih: v[3], b_hh: v[4] };
        let b = LstmVars { w_ih: v[5], w_hh: v[6], b_ih: v[7], b_hh: v[8] };
        let out = t.bilstm(v[0], &lengths, &f, &b, false)?;
        t.weighted_sum(out.final_state, rb.clone())
    })?);

    let rcv = rand_tensor(&[2, 6], &mut rng);
    let p = vec![
        rand_tensor(&[2, 6, 3], &mut rng),
        rand_tensor(&[2, 6], &mut rng),
        rand_tensor(&[2], &mut rng),
        rand_tensor(&[2, 9], &mut rng),
        rand_tensor(&[2], &mut rng),
        rand_tensor(&[2, 12], &mut rng),
        rand_tensor(&[2], &mut rng),
    ];
    worst = worst.max(check_op("conv1d_bank", p, |t, v| {
        let y = t.conv1d_bank(v[0], &[(v[1], v[2]), (v[3], v[4]), (v[5], v[6])])?;
        t.weighted_sum(y, rcv.clone())
    })?);

    let rbn = rand_tensor(&[4, 3], &mut rng);
    worst = worst.max(check_op(
        "batchnorm",
        vec![rand_tensor(&[4, 3], &mut rng), rand_tensor(&[3], &mut rng), rand_tensor(&[3], &mut rng)],
        |t, v| {
            let (y, _) = t.batchnorm_train(v[0], v[1], v[2], 1e-5)?;
            t.weighted_sum(y, rbn.clone())
        },
    )?);

    let targets: Vec<usize> = (0..4).map(|_| rng.gen_range(0..5)).collect();
    let weights: Vec<f64> = (0..5).map(|_| rng.gen_range(0.2..3.0)).collect();
    worst = worst.max(check_op("weighted_ce", vec![rand_tensor(&[4, 5], &mut rng)], |t, v| {
        t.weighted_ce(v[0], &targets, &weights)
    })?);
    Ok(worst)
}

pub fn toy_config(name: &str) -> ModelConfig {
    ModelConfig {
        embed_dim: 3,
        hidden_dim: 3,
        conv_maps: 2,
        extra_dim: 2,
        dropout: 0.0,
        ..ModelConfig::for_model(name, 10).unwrap()
    }
}

/// The summed dual-head loss of every architecture at toy dimensions.
pub fn gradcheck_architectures(seed: u64) -> Check<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
    let seqs: Vec<EncodedSequence> = (0..3)
        .map(|_| {
            let length = rng.gen_range(1..=4);
            let mut ids: Vec<usize> = (0..length).map(|_| rng.gen_range(1..10)).collect();
            ids.resize(4, 0);
            EncodedSequence { ids, length }
        })
        .collect();
    let batch = Batch::from_sequences(&seqs).map_err(|e| e.to_string())?;
    let ts: Vec<usize> = (0..3).map(|_| rng.gen_range(0..2)).collect();
    let te: Vec<usize> = (0..3).map(|_| rng.gen_range(0..5)).collect();
    let mut worst = 0.0f64;
    for name in REGISTERED_MODELS {
        let m = build_model::<f64>(&toy_config(name), seed).map_err(|e| e.to_string())?;
        let names: Vec<String> = m.params().keys().cloned().collect();
        let params: Vec<(String, Tensor64)> = m.params().iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        let report = gradcheck(&params, GradcheckOptions::default(), |tape, vars| {
            let bound: BTreeMap<String, Var> = names.iter().cloned().zip(vars.iter().copied()).collect();
            let mut drop_rng = ChaCha8Rng::seed_from_u64(0);
            let out = m.forward(tape, &bound, &batch, true, &mut drop_rng).map_err(|e| match e {
                NeuralError::Autodiff(e) => e,
                other => panic!("{other}"),
            })?;
            let s = tape.weighted_ce(out.sentiment, &ts, &[1.0, 1.5])?;
            let e = tape.weighted_ce(out.emotion, &te, &[1.0; 5])?;
            tape.add(s, e)
        })
        .map_err(|e| format!("{name}: {e}"))?;
        ensure!(report.passes(GRAD_TOL), "{name} seed {seed}: max relative error {:e}", report.max_rel_error);
        worst = worst.max(report.max_rel_error);
    }
    Ok(worst)
}

// ---- learnability ----

/// 32 samples: the sentiment and emotion labels are each carried by one
/// marker token placed at a varying position among filler tokens.
pub fn marker_corpus() -> NeuralSplit {
    let mut seqs = Vec::new();
    let (mut s, mut e) = (Vec::new(), Vec::new());
    for i in 0..32usize {
        let sent = (i / 5) % 2;
        let emo = i % 5;
        let len = 3 + i % 5;
        let mut ids: Vec<usize> = (0..len).map(|k| 9 + (i * 7 + k * 3) % 8).collect();
        ids[i % len] = 2 + sent;
        ids[(i + 1) % len] = 4 + emo;
        ids.resize(8, 0);
        seqs.push(EncodedSequence { ids, length: len });
        s.push(sent);
        e.push(emo);
    }
    NeuralSplit::new(seqs, s, e)
}

pub const LEARNABILITY_EPOCHS: usize = 200;

/// Trains `name` on the marker corpus with the validation split set to the
/// training set, and returns the first epoch at which both heads score 100%
/// in evaluation mode.
pub fn learnability(name: &str) -> Check<usize> {
    let split = marker_corpus();
    let data = NeuralData {
        train: split.clone(),
        val: split,
        test: NeuralSplit::default(),
    };
    let cfg = TrainConfig {
        max_epochs: LEARNABILITY_EPOCHS,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let mc = ModelConfig {
        embed_dim: 16,
        hidden_dim: 16,
        conv_maps: 16,
        extra_dim: 16,
        max_len: 8,
        ..ModelConfig::for_model(name, 17).map_err(|e| e.to_string())?
    };
    let model = build_model(&mc, 3).map_err(|e| e.to_string())?;
    let out = train(model, &data, &cfg, &LabelSchema::standard(), None).map_err(|e| e.to_string())?;
    out.metrics
        .history
        .iter()
        .find(|r| r.val_acc_sent == 1.0 && r.val_acc_emo == 1.0)
        .map(|r| r.epoch)
        .ok_or_else(|| format!("{name} never fit the corpus: {:?}", out.metrics.history.last()))
}
