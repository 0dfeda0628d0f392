//! Evaluation numbers: confusion matrices, precision/recall/F1 with macro
//! and weighted averages, and rank-based ROC AUC.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("length mismatch: {0} true labels vs {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("class id {id} out of range for {classes} classes")]
    IdOutOfRange { id: usize, classes: usize },
    #[error("AUC undefined: {0}")]
    DegenerateLabels(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn support(&self, class: usize) -> usize {
        self.counts[class].iter().sum()
    }

    pub fn predicted(&self, class: usize) -> usize {
        self.counts.iter().map(|row| row[class]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.trace() as f64 / total as f64
        }
    }

    /// Each row divided by its support; zero-support rows stay all zero.
    pub fn normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let s: usize = row.iter().sum();
                row.iter()
                    .map(|&c| if s == 0 { 0.0 } else { c as f64 / s as f64 })
                    .collect()
            })
            .collect()
    }

    /// Off-diagonal cells ordered by symmetric pair mass, largest first:
    /// `(class_a, class_b, count(a->b) + count(b->a))` with `a < b`.
    pub fn confused_pairs(&self) -> Vec<(usize, usize, usize)> {
        let c = self.n_classes();
        let mut pairs: Vec<(usize, usize, usize)> = (0..c)
            .flat_map(|a| ((a + 1)..c).map(move |b| (a, b)))
            .map(|(a, b)| (a, b, self.counts[a][b] + self.counts[b][a]))
            .collect();
        pairs.sort_by(|x, y| y.2.cmp(&x.2).then((x.0, x.1).cmp(&(y.0, y.1))));
        pairs
    }
}

pub fn confusion(truth: &[usize], pred: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(MetricsError::LengthMismatch(truth.len(), pred.len()));
    }
    let mut counts = vec![vec![0usize; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        for id in [t, p] {
            if id >= n_classes {
                return Err(MetricsError::IdOutOfRange {
                    id,
                    classes: n_classes,
                });
            }
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub per_class: Vec<ClassMetrics>,
    pub macro_avg: Averages,
    pub weighted: Averages,
    /// Set when some precision or recall was undefined and reported as 0.
    pub zero_division: bool,
}

fn ratio(num: usize, den: usize, flag: &mut bool) -> f64 {
    if den == 0 {
        *flag = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision, recall and F1 plus macro and support-weighted
/// averages. Undefined ratios count as 0.
pub fn prf(conf: &ConfusionMatrix, labels: Option<&[String]>) -> Prf {
    let c = conf.n_classes();
    let mut zero_division = false;
    let per_class: Vec<ClassMetrics> = (0..c)
        .map(|k| {
            let tp = conf.counts[k][k];
            let precision = ratio(tp, conf.predicted(k), &mut zero_division);
            let recall = ratio(tp, conf.support(k), &mut zero_division);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                label: labels
                    .and_then(|l| l.get(k).cloned())
                    .unwrap_or_else(|| k.to_string()),
                precision,
                recall,
                f1,
                support: conf.support(k),
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| {
        if c == 0 {
            0.0
        } else {
            per_class.iter().map(f).sum::<f64>() / c as f64
        }
    };
    let total = conf.total();
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        if total == 0 {
            0.0
        } else {
            per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64
        }
    };
    Prf {
        macro_avg: Averages {
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            f1: mean(|m| m.f1),
        },
        weighted: Averages {
            precision: weighted(|m| m.precision),
            recall: weighted(|m| m.recall),
            f1: weighted(|m| m.f1),
        },
        per_class,
        zero_division,
    }
}

/// Midranks (1-based) of `values`, ties sharing their average rank.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

/// Mann-Whitney AUC of `scores` for the samples flagged positive.
pub fn auc_binary(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(MetricsError::LengthMismatch(positive.len(), scores.len()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::DegenerateLabels(format!(
            "{n_pos} positive and {n_neg} negative samples"
        )));
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(positive)
        .filter(|(_, &p)| p)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvrAuc {
    /// Mean over evaluable classes.
    pub macro_auc: f64,
    pub per_class: Vec<Option<f64>>,
    /// Classes without positives or without negatives in the sample.
    pub skipped: Vec<usize>,
}

/// One-vs-rest AUC per class, macro-averaged over classes that have both
/// positive and negative samples. `scores[i][c]` is sample `i`'s score for
/// class `c`.
pub fn auc_macro_ovr(scores: &[Vec<f64>], truth: &[usize], n_classes: usize) -> Result<OvrAuc> {
    if scores.len() != truth.len() {
        return Err(MetricsError::LengthMismatch(truth.len(), scores.len()));
    }
    let mut per_class = Vec::with_capacity(n_classes);
    let mut skipped = Vec::new();
    for c in 0..n_classes {
        let col: Vec<f64> = scores.iter().map(|row| row[c]).collect();
        let pos: Vec<bool> = truth.iter().map(|&t| t == c).collect();
        match auc_binary(&col, &pos) {
            Ok(v) => per_class.push(Some(v)),
            Err(_) => {
                per_class.push(None);
                skipped.push(c);
            }
        }
    }
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(MetricsError::DegenerateLabels("no class is evaluable".into()));
    }
    Ok(OvrAuc {
        macro_auc: defined.iter().sum::<f64>() / defined.len() as f64,
        per_class,
        skipped,
    })
}

/// ROC points `(fpr, tpr, threshold)` for plotting, thresholds descending.
pub fn roc_points(scores: &[f64], positive: &[bool]) -> Vec<(f64, f64, f64)> {
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let n_neg = positive.len() as f64 - n_pos;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0, f64::INFINITY)];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if positive[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let fpr = if n_neg > 0.0 { fp / n_neg } else { 0.0 };
        let tpr = if n_pos > 0.0 { tp / n_pos } else { 0.0 };
        points.push((fpr, tpr, threshold));
    }
    points
}

/// Everything reported for one task on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n_samples: usize,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_avg: Averages,
    pub weighted: Averages,
    /// Binary AUC for two classes, macro one-vs-rest otherwise.
    pub auc: Option<f64>,
    pub auc_per_class: Vec<Option<f64>>,
    pub auc_skipped: Vec<usize>,
    pub zero_division: bool,
    pub confusion: ConfusionMatrix,
    pub confusion_normalized: Vec<Vec<f64>>,
}

impl MetricReport {
    /// `scores[i]` holds per-class scores for sample `i` (any monotone
    /// score works for AUC).
    pub fn compute(
        truth: &[usize],
        pred: &[usize],
        scores: &[Vec<f64>],
        labels: &[String],
    ) -> Result<Self> {
        let n_classes = labels.len();
        let conf = confusion(truth, pred, n_classes)?;
        let p = prf(&conf, Some(labels));
        let (auc, auc_per_class, auc_skipped) = if n_classes == 2 {
            let col: Vec<f64> = scores.iter().map(|s| s[1]).collect();
            let pos: Vec<bool> = truth.iter().map(|&t| t == 1).collect();
            match auc_binary(&col, &pos) {
                Ok(v) => (Some(v), vec![Some(v)], vec![]),
                Err(_) => (None, vec![None], vec![0, 1]),
            }
        } else {
            match auc_macro_ovr(scores, truth, n_classes) {
                Ok(o) => (Some(o.macro_auc), o.per_class, o.skipped),
                Err(_) => (None, vec![None; n_classes], (0..n_classes).collect()),
            }
        };
        Ok(Self {
            n_samples: truth.len(),
            accuracy: conf.accuracy(),
            per_class: p.per_class,
            macro_avg: p.macro_avg,
            weighted: p.weighted,
            auc,
            auc_per_class,
            auc_skipped,
            zero_division: p.zero_division,
            confusion_normalized: conf.normalized(),
            confusion: conf,
        })
    }

    /// Confusion matrix as CSV (header row of predicted labels).
    pub fn confusion_csv(&self, normalized: bool) -> String {
        let labels: Vec<&str> = self.per_class.iter().map(|c| c.label.as_str()).collect();
        let mut out = format!("true\\pred,{}\n", labels.join(","));
        for (k, label) in labels.iter().enumerate() {
            let cells: Vec<String> = if normalized {
                self.confusion_normalized[k].iter().map(|v| format!("{v:.6}")).collect()
            } else {
                self.confusion.counts[k].iter().map(|v| v.to_string()).collect()
            };
            out.push_str(&format!("{label},{}\n", cells.join(",")));
        }
        out
    }

    /// Human-readable table.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<10} {:>9} {:>9} {:>9} {:>8}\n",
            "class", "precision", "recall", "f1", "support"
        );
        for c in &self.per_class {
            out.push_str(&format!(
                "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>8}\n",
                c.label, c.precision, c.recall, c.f1, c.support
            ));
        }
        out.push_str(&format!(
            "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>8}\n",
            "macro", self.macro_avg.precision, self.macro_avg.recall, self.macro_avg.f1, self.n_samples
        ));
        out.push_str(&format!(
            "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>8}\n",
            "weighted", self.weighted.precision, self.weighted.recall, self.weighted.f1, self.n_samples
        ));
        out.push_str(&format!("accuracy {:.4}", self.accuracy));
        match self.auc {
            Some(a) => out.push_str(&format!("  auc {a:.4}")),
            None => out.push_str("  auc n/a"),
        }
        if !self.auc_skipped.is_empty() && self.auc.is_some() {
            out.push_str(&format!(" (skipped classes {:?})", self.auc_skipped));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_counts() {
        let m = confusion(&[0, 0, 1, 1], &[0, 0, 0, 1], 2).unwrap();
        assert_eq!(m.counts, vec![vec![2, 0], vec![1, 1]]);
        let d = confusion(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!(d.trace(), 3);
        let e = confusion(&[], &[], 3).unwrap();
        assert_eq!(e.total(), 0);
        assert_eq!(confusion(&[0], &[], 2), Err(MetricsError::LengthMismatch(1, 0)));
        assert!(matches!(confusion(&[2], &[0], 2), Err(MetricsError::IdOutOfRange { .. })));
    }

    #[test]
    fn prf_hand_example() {
        let m = confusion(&[0, 0, 1, 1], &[0, 0, 0, 1], 2).unwrap();
        let p = prf(&m, None);
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        assert!(close(p.per_class[0].precision, 2.0 / 3.0));
        assert!(close(p.per_class[1].precision, 1.0));
        assert!(close(p.per_class[0].recall, 1.0));
        assert!(close(p.per_class[1].recall, 0.5));
        assert!(close(p.per_class[0].f1, 0.8));
        assert!(close(p.per_class[1].f1, 2.0 / 3.0));
        assert!(close(p.macro_avg.f1, 0.7333333333333334));
        assert!(close(p.weighted.f1, 0.7333333333333334));
    }

    #[test]
    fn prf_perfect_and_empty_class() {
        let m = confusion(&[0, 1, 1], &[0, 1, 1], 3).unwrap();
        let p = prf(&m, None);
        assert_eq!(p.per_class[0].f1, 1.0);
        assert_eq!(p.per_class[2].f1, 0.0);
        assert!(p.zero_division);
        assert_eq!(p.weighted.f1, 1.0);
    }

    #[test]
    fn auc_cases() {
        let a = auc_binary(&[0.9, 0.8, 0.3, 0.2], &[true, true, false, false]).unwrap();
        assert_eq!(a, 1.0);
        let b = auc_binary(&[0.5; 4], &[true, false, true, false]).unwrap();
        assert_eq!(b, 0.5);
        assert!(matches!(
            auc_binary(&[0.1, 0.2], &[true, true]),
            Err(MetricsError::DegenerateLabels(_))
        ));
    }

    #[test]
    fn ovr_skips_absent_class() {
        let scores = vec![vec![0.9, 0.1, 0.0], vec![0.2, 0.8, 0.0], vec![0.6, 0.4, 0.0]];
        let o = auc_macro_ovr(&scores, &[0, 1, 0], 3).unwrap();
        assert_eq!(o.skipped, vec![2]);
        assert_eq!(o.per_class[0], Some(1.0));
        assert_eq!(o.macro_auc, 1.0);
    }

    #[test]
    fn roc_endpoints() {
        let pts = roc_points(&[0.9, 0.4, 0.4, 0.1], &[true, false, true, false]);
        assert_eq!(pts.first().unwrap().0, 0.0);
        let last = pts.last().unwrap();
        assert_eq!((last.0, last.1), (1.0, 1.0));
    }

    #[test]
    fn majority_predictor_accuracy() {
        // 2,822 Negative vs 2,578 Positive
        let truth: Vec<usize> = std::iter::repeat(0).take(2822).chain(std::iter::repeat(1).take(2578)).collect();
        let pred = vec![0; truth.len()];
        let scores = vec![vec![1.0, 0.0]; truth.len()];
        let labels = vec!["Negative".to_string(), "Positive".to_string()];
        let r = MetricReport::compute(&truth, &pred, &scores, &labels).unwrap();
        assert!((r.accuracy - 0.5226).abs() < 1e-3);
        assert_eq!(r.auc, Some(0.5));
    }
}
