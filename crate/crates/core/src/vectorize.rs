//! Vocabularies, TF-IDF features and fixed-length id sequences.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::textprep::CleanedDoc;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VectorizeError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("invalid n-gram range {0}..={1}")]
    InvalidNgramRange(usize, usize),
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
}

pub type Result<T> = std::result::Result<T, VectorizeError>;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const DEFAULT_MAX_LEN: usize = 64;

/// Token to index map. Index 0 is PAD, index 1 is UNK.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn lookup(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    /// JSON-friendly view (token to index, keys sorted).
    pub fn to_map(&self) -> BTreeMap<String, usize> {
        self.tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect()
    }

    pub fn from_map(map: &BTreeMap<String, usize>) -> Result<Self> {
        let mut tokens = vec![None; map.len()];
        for (tok, &idx) in map {
            let slot = tokens
                .get_mut(idx)
                .ok_or_else(|| VectorizeError::InvalidVocabulary(format!("index {idx} out of range")))?;
            if slot.is_some() {
                return Err(VectorizeError::InvalidVocabulary(format!("index {idx} used twice")));
            }
            *slot = Some(tok.clone());
        }
        let tokens: Vec<String> = tokens.into_iter().map(|t| t.unwrap()).collect();
        if tokens.first().map(String::as_str) != Some(PAD_TOKEN)
            || tokens.get(1).map(String::as_str) != Some(UNK_TOKEN)
        {
            return Err(VectorizeError::InvalidVocabulary(
                "indices 0 and 1 must be the PAD and UNK sentinels".into(),
            ));
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Self { tokens, index })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_map()).expect("map serializes")
    }

    pub fn from_json(json: &str) -> std::result::Result<Self, String> {
        let map: BTreeMap<String, usize> = serde_json::from_str(json).map_err(|e| e.to_string())?;
        Self::from_map(&map).map_err(|e| e.to_string())
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_map().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let map = BTreeMap::<String, usize>::deserialize(d)?;
        Self::from_map(&map).map_err(serde::de::Error::custom)
    }
}

/// Builds a vocabulary from training documents: tokens with frequency at
/// least `min_count`, ordered by frequency descending then token ascending,
/// starting at index 2.
pub fn build_vocab(train_docs: &[CleanedDoc], min_count: usize) -> Result<Vocabulary> {
    if train_docs.is_empty() {
        return Err(VectorizeError::EmptyCorpus);
    }
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for doc in train_docs {
        for t in &doc.tokens {
            *freq.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = freq
        .into_iter()
        .filter(|&(t, c)| c >= min_count && t != PAD_TOKEN && t != UNK_TOKEN)
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let tokens: Vec<String> = [PAD_TOKEN, UNK_TOKEN]
        .into_iter()
        .chain(ranked.into_iter().map(|(t, _)| t))
        .map(str::to_string)
        .collect();
    let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    Ok(Vocabulary { tokens, index })
}

/// Fixed-length id sequence. Positions past `length` hold PAD.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedSequence {
    pub ids: Vec<usize>,
    pub length: usize,
}

/// Maps tokens to ids (UNK for unknown), keeps the first `max_len` tokens and
/// right-pads with PAD.
pub fn encode_sequence(doc: &CleanedDoc, vocab: &Vocabulary, max_len: usize) -> EncodedSequence {
    let mut ids: Vec<usize> = doc
        .tokens
        .iter()
        .take(max_len)
        .map(|t| vocab.lookup(t))
        .collect();
    let length = ids.len();
    ids.resize(max_len, PAD);
    EncodedSequence { ids, length }
}

/// Contiguous n-grams of `tokens` of order `n`, joined by a single space.
pub fn ngrams(tokens: &[String], n: usize) -> impl Iterator<Item = String> + '_ {
    tokens.windows(n.max(1)).map(|w| w.join(" "))
}

fn doc_ngrams(tokens: &[String], range: (usize, usize)) -> impl Iterator<Item = String> + '_ {
    (range.0..=range.1).flat_map(move |n| ngrams(tokens, n))
}

/// Sparse row: strictly increasing column indices, no explicit zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector<T> {
    pub indices: Vec<usize>,
    pub values: Vec<T>,
    pub dim: usize,
}

impl<T: Scalar> SparseVector<T> {
    pub fn empty(dim: usize) -> Self {
        Self {
            indices: Vec::new(),
            values: Vec::new(),
            dim,
        }
    }

    /// Builds from unsorted pairs; duplicate indices are summed and zeros
    /// dropped.
    pub fn from_pairs(mut pairs: Vec<(usize, T)>, dim: usize) -> Self {
        pairs.sort_by_key(|p| p.0);
        let mut indices: Vec<usize> = Vec::with_capacity(pairs.len());
        let mut values: Vec<T> = Vec::with_capacity(pairs.len());
        for (i, v) in pairs {
            assert!(i < dim, "column {i} out of range for dimension {dim}");
            if indices.last() == Some(&i) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(i);
                values.push(v);
            }
        }
        let (indices, values) = indices
            .into_iter()
            .zip(values)
            .filter(|(_, v)| *v != T::zero())
            .unzip();
        Self { indices, values, dim }
    }

    pub fn from_dense(dense: &[T]) -> Self {
        let pairs = dense.iter().copied().enumerate().collect();
        Self::from_pairs(pairs, dense.len())
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, T)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn to_dense(&self) -> Vec<T> {
        let mut d = vec![T::zero(); self.dim];
        for (i, v) in self.iter() {
            d[i] = v;
        }
        d
    }

    pub fn dot(&self, dense: &[T]) -> T {
        self.iter().map(|(i, v)| v * dense[i]).sum()
    }

    pub fn scaled(&self, s: T) -> Self {
        Self::from_pairs(self.iter().map(|(i, v)| (i, v * s)).collect(), self.dim)
    }

    pub fn cast<U: Scalar>(&self) -> SparseVector<U> {
        SparseVector {
            indices: self.indices.clone(),
            values: self.values.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
            dim: self.dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfOptions {
    pub ngram_range: (usize, usize),
    pub max_features: Option<usize>,
    /// Replace raw TF with `1 + ln(TF)`.
    pub sublinear_tf: bool,
    /// Scale each transformed row to unit L2 norm.
    pub l2_normalize: bool,
}

impl Default for TfidfOptions {
    fn default() -> Self {
        Self {
            ngram_range: (1, 2),
            max_features: None,
            sublinear_tf: false,
            l2_normalize: false,
        }
    }
}

/// Fitted document-frequency statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "TfidfRepr", into = "TfidfRepr")]
pub struct TfidfModel {
    /// Column order: n-grams sorted ascending.
    pub terms: Vec<String>,
    pub df: Vec<usize>,
    pub n_docs: usize,
    pub options: TfidfOptions,
    column: HashMap<String, usize>,
}

#[derive(Clone, Serialize, Deserialize)]
struct TfidfRepr {
    terms: Vec<String>,
    df: Vec<usize>,
    n_docs: usize,
    options: TfidfOptions,
}

impl From<TfidfRepr> for TfidfModel {
    fn from(r: TfidfRepr) -> Self {
        let mut m = TfidfModel {
            terms: r.terms,
            df: r.df,
            n_docs: r.n_docs,
            options: r.options,
            column: HashMap::new(),
        };
        m.reindex();
        m
    }
}

impl From<TfidfModel> for TfidfRepr {
    fn from(m: TfidfModel) -> Self {
        TfidfRepr {
            terms: m.terms,
            df: m.df,
            n_docs: m.n_docs,
            options: m.options,
        }
    }
}

impl TfidfModel {
    pub fn dim(&self) -> usize {
        self.terms.len()
    }

    pub fn column(&self, ngram: &str) -> Option<usize> {
        self.column.get(ngram).copied()
    }

    pub fn df_of(&self, ngram: &str) -> Option<usize> {
        self.column(ngram).map(|c| self.df[c])
    }

    /// `ln(N / (1 + DF))`; negative when DF >= N.
    pub fn idf(&self, column: usize) -> f64 {
        (self.n_docs as f64 / (1.0 + self.df[column] as f64)).ln()
    }

    fn reindex(&mut self) {
        self.column = self.terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    }

    fn term_counts(&self, doc: &CleanedDoc) -> Vec<(usize, usize)> {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for g in doc_ngrams(&doc.tokens, self.options.ngram_range) {
            if let Some(c) = self.column(&g) {
                *counts.entry(c).or_default() += 1;
            }
        }
        counts.into_iter().collect()
    }

    /// Raw in-vocabulary n-gram counts (non-negative; used by naive Bayes).
    pub fn transform_counts<T: Scalar>(&self, doc: &CleanedDoc) -> SparseVector<T> {
        let pairs = self
            .term_counts(doc)
            .into_iter()
            .map(|(c, n)| (c, T::from_usize_lossy(n)))
            .collect();
        SparseVector::from_pairs(pairs, self.dim())
    }

    /// `TF(t, d) * ln(N / (1 + DF(t)))` per in-vocabulary n-gram.
    pub fn transform<T: Scalar>(&self, doc: &CleanedDoc) -> SparseVector<T> {
        let mut weights: Vec<(usize, f64)> = self
            .term_counts(doc)
            .into_iter()
            .map(|(c, n)| {
                let tf = if self.options.sublinear_tf {
                    1.0 + (n as f64).ln()
                } else {
                    n as f64
                };
                (c, tf * self.idf(c))
            })
            .collect();
        if self.options.l2_normalize {
            let norm = weights.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
            if norm > 0.0 {
                weights.iter_mut().for_each(|(_, w)| *w /= norm);
            }
        }
        let pairs = weights
            .into_iter()
            .map(|(c, w)| (c, T::from_f64_lossy(w)))
            .collect();
        SparseVector::from_pairs(pairs, self.dim())
    }
}

/// Counts, per n-gram in `options.ngram_range`, the number of training
/// documents containing it. With a cap, the top `max_features` by DF
/// (descending, ties by n-gram ascending) are kept.
pub fn fit_tfidf(train_docs: &[CleanedDoc], options: TfidfOptions) -> Result<TfidfModel> {
    if train_docs.is_empty() {
        return Err(VectorizeError::EmptyCorpus);
    }
    let (lo, hi) = options.ngram_range;
    if lo == 0 || hi < lo {
        return Err(VectorizeError::InvalidNgramRange(lo, hi));
    }
    let mut df: HashMap<String, usize> = HashMap::new();
    for doc in train_docs {
        let mut seen: Vec<String> = doc_ngrams(&doc.tokens, options.ngram_range).collect();
        seen.sort_unstable();
        seen.dedup();
        for g in seen {
            *df.entry(g).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = df.into_iter().collect();
    if let Some(cap) = options.max_features {
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        kept.truncate(cap);
    }
    kept.sort_by(|a, b| a.0.cmp(&b.0));
    let (terms, df): (Vec<String>, Vec<usize>) = kept.into_iter().unzip();
    let mut model = TfidfModel {
        terms,
        df,
        n_docs: train_docs.len(),
        options,
        column: HashMap::new(),
    };
    model.reindex();
    Ok(model)
}

/// Shorthand for [`TfidfModel::transform`].
pub fn transform_tfidf<T: Scalar>(doc: &CleanedDoc, model: &TfidfModel) -> SparseVector<T> {
    model.transform(doc)
}

/// Corpus-wide n-gram counts, descending, ties by n-gram ascending.
pub fn ngram_frequencies(docs: &[CleanedDoc], n: usize, top_k: usize) -> Vec<(String, usize)> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for doc in docs {
        for g in ngrams(&doc.tokens, n) {
            *counts.entry(g).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(top_k);
    ranked
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(list: &[&[&str]]) -> Vec<CleanedDoc> {
        list.iter().map(|d| CleanedDoc::from_tokens(d.iter().copied())).collect()
    }

    #[test]
    fn vocab_tie_break() {
        let v = build_vocab(&docs(&[&["a", "b", "a"], &["b", "c"]]), 1).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.get(PAD_TOKEN), Some(0));
        assert_eq!(v.get(UNK_TOKEN), Some(1));
        assert_eq!(v.get("a"), Some(2));
        assert_eq!(v.get("b"), Some(3));
        assert_eq!(v.get("c"), Some(4));
        assert_eq!(build_vocab(&[], 1), Err(VectorizeError::EmptyCorpus));
    }

    #[test]
    fn vocab_json_roundtrip() {
        let v = build_vocab(&docs(&[&["x", "y", "y"]]), 1).unwrap();
        let back = Vocabulary::from_json(&v.to_json()).unwrap();
        assert_eq!(v, back);
        assert!(Vocabulary::from_json(r#"{"a":0,"b":1}"#).is_err());
    }

    #[test]
    fn df_counts() {
        let m = fit_tfidf(&docs(&[&["a", "b"], &["a"]]), TfidfOptions::default()).unwrap();
        assert_eq!(m.df_of("a"), Some(2));
        assert_eq!(m.df_of("b"), Some(1));
        assert_eq!(m.df_of("a b"), Some(1));
        assert_eq!(m.n_docs, 2);

        let single = fit_tfidf(&docs(&[&["a"]]), TfidfOptions::default()).unwrap();
        assert_eq!((single.df_of("a"), single.n_docs), (Some(1), 1));

        let capped = fit_tfidf(
            &docs(&[&["a", "b"], &["a"]]),
            TfidfOptions {
                max_features: Some(1),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(capped.terms, ["a"]);
    }

    #[test]
    fn tfidf_weights() {
        // N=4, DF(t)=1, TF=2
        let corpus = docs(&[&["t"], &["u"], &["u"], &["u"]]);
        let m = fit_tfidf(
            &corpus,
            TfidfOptions {
                ngram_range: (1, 1),
                ..Default::default()
            },
        )
        .unwrap();
        let v: SparseVector<f64> = m.transform(&CleanedDoc::from_tokens(["t", "t"]));
        assert_eq!(v.nnz(), 1);
        assert!((v.values[0] - 2.0 * 2f64.ln()).abs() < 1e-12);
        // DF(u)=3 >= N-1 gives ln(4/4)=0 and the entry is dropped
        let z: SparseVector<f64> = m.transform(&CleanedDoc::from_tokens(["u", "u", "u"]));
        assert_eq!(z.nnz(), 0);
        let none: SparseVector<f64> = m.transform(&CleanedDoc::from_tokens(["zzz"]));
        assert_eq!(none.nnz(), 0);
        assert_eq!(none.dim, m.dim());
    }

    #[test]
    fn idf_zero_when_df_plus_one_equals_n() {
        let m = fit_tfidf(&docs(&[&["t"], &["u"]]), TfidfOptions::default()).unwrap();
        let v: SparseVector<f64> = m.transform(&CleanedDoc::from_tokens(["t"; 5]));
        assert_eq!(v.nnz(), 0);
    }

    #[test]
    fn encode_pad_truncate_unk() {
        let v = build_vocab(&docs(&[&["a", "a", "b"]]), 1).unwrap();
        let e = encode_sequence(&CleanedDoc::from_tokens(["a", "b"]), &v, 4);
        assert_eq!(e.ids, [2, 3, 0, 0]);
        assert_eq!(e.length, 2);
        let long = CleanedDoc::from_tokens(vec!["a"; 100]);
        let e = encode_sequence(&long, &v, DEFAULT_MAX_LEN);
        assert_eq!((e.ids.len(), e.length), (64, 64));
        let e = encode_sequence(&CleanedDoc::from_tokens(["zzz"]), &v, 4);
        assert_eq!(e.ids[0], UNK);
    }

    #[test]
    fn ngram_ranking() {
        let d = docs(&[&["bagus", "cepat"], &["bagus"]]);
        assert_eq!(
            ngram_frequencies(&d, 1, 10),
            vec![("bagus".to_string(), 2), ("cepat".to_string(), 1)]
        );
        assert!(ngram_frequencies(&[], 1, 10).is_empty());
        assert_eq!(
            ngram_frequencies(&docs(&[&["a", "b", "c"]]), 2, 10),
            vec![("a b".to_string(), 1), ("b c".to_string(), 1)]
        );
    }

    #[test]
    fn sparse_from_pairs_merges_and_drops_zeros() {
        let v = SparseVector::from_pairs(vec![(3, 1.0f64), (1, 2.0), (3, -1.0), (0, 0.5)], 5);
        assert_eq!(v.indices, [0, 1]);
        assert_eq!(v.values, [0.5, 2.0]);
    }
}
