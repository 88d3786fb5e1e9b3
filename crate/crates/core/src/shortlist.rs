//! Baseline candidate selection: character n-gram tf-idf with one centroid
//! per intent, ranked by cosine similarity.
//!
//! A fitted [`ShortlistModel`] stores the normalization settings it was
//! trained with and applies them to every query, so serving always sees the
//! same text transform as training.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Dataset, IntentRegistry};
use crate::normalize::{normalize, NormalizeConfig};

pub const MODEL_FORMAT: &str = "intentgate-shortlist";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ShortlistError {
    #[error("intent `{0}` has no usable training examples")]
    IntentWithoutExamples(String),
    #[error("training example references unknown intent `{0}`")]
    UnknownIntent(String),
    #[error("vocabulary is empty: every training text normalizes to nothing")]
    EmptyVocabulary,
    #[error("invalid n-gram range {0}..={1}")]
    InvalidNgramRange(usize, usize),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("evaluation example #{0} has no gold intent")]
    MissingGold(usize),
    #[error("model intents do not match registry: {0}")]
    RegistryMismatch(String),
    #[error("model file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("model file has schema version {found}, this build reads version {MODEL_VERSION}")]
    Version { found: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShortlistConfig {
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub normalize: NormalizeConfig,
}

impl Default for ShortlistConfig {
    fn default() -> Self {
        Self {
            ngram_min: 3,
            ngram_max: 5,
            normalize: NormalizeConfig::default(),
        }
    }
}

impl ShortlistConfig {
    fn check(&self) -> Result<(), ShortlistError> {
        if self.ngram_min == 0 || self.ngram_min > self.ngram_max {
            return Err(ShortlistError::InvalidNgramRange(
                self.ngram_min,
                self.ngram_max,
            ));
        }
        Ok(())
    }
}

/// Character n-gram counts of `text` padded with one space on each side.
/// Empty text has no n-grams.
pub fn char_ngrams(text: &str, min: usize, max: usize) -> BTreeMap<String, u32> {
    let mut counts = BTreeMap::new();
    if text.is_empty() {
        return counts;
    }
    let chars: Vec<char> = std::iter::once(' ')
        .chain(text.chars())
        .chain(std::iter::once(' '))
        .collect();
    for n in min..=max {
        for window in chars.windows(n) {
            *counts.entry(window.iter().collect::<String>()).or_insert(0) += 1;
        }
    }
    counts
}

/// Sparse vector with strictly increasing feature indices.
type SparseVec = Vec<(u32, f64)>;

fn l2_normalize(v: &mut SparseVec) {
    let norm = v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|(_, x)| *x /= norm);
    }
}

fn sparse_dot(a: &[(u32, f64)], b: &[(u32, f64)]) -> f64 {
    let (mut i, mut j, mut acc) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub intent_id: String,
    /// Cosine similarity, in `[0, 1]`.
    pub score: f64,
}

/// Ranked candidate intents for one query.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Shortlist {
    /// The query after normalization.
    pub query_text: String,
    pub candidates: Vec<Candidate>,
}

impl Shortlist {
    /// Score of the best candidate; 0 when the shortlist is empty.
    pub fn top_score(&self) -> f64 {
        self.candidates.first().map_or(0.0, |c| c.score)
    }

    pub fn top(&self) -> Option<&Candidate> {
        self.candidates.first()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn contains(&self, intent_id: &str) -> bool {
        self.candidates.iter().any(|c| c.intent_id == intent_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShortlistModel {
    config: ShortlistConfig,
    grams: Vec<String>,
    index: HashMap<String, u32>,
    idf: Vec<f64>,
    intent_ids: Vec<String>,
    centroids: Vec<SparseVec>,
}

impl ShortlistModel {
    pub fn config(&self) -> &ShortlistConfig {
        &self.config
    }

    pub fn vocabulary_len(&self) -> usize {
        self.grams.len()
    }

    pub fn intent_ids(&self) -> &[String] {
        &self.intent_ids
    }

    pub fn idf(&self, gram: &str) -> Option<f64> {
        self.index.get(gram).map(|&i| self.idf[i as usize])
    }

    /// Dense centroid of `intent_id` over the vocabulary, in vocabulary order.
    pub fn centroid(&self, intent_id: &str) -> Option<BTreeMap<&str, f64>> {
        let pos = self.intent_ids.iter().position(|id| id == intent_id)?;
        Some(
            self.centroids[pos]
                .iter()
                .map(|&(i, w)| (self.grams[i as usize].as_str(), w))
                .collect(),
        )
    }

    /// Fails unless the model has exactly one centroid per registry intent.
    pub fn check_registry(&self, registry: &IntentRegistry) -> Result<(), ShortlistError> {
        if self
            .intent_ids
            .iter()
            .map(String::as_str)
            .ne(registry.ids())
        {
            let missing: Vec<&str> = registry
                .ids()
                .filter(|id| !self.intent_ids.iter().any(|m| m == id))
                .collect();
            let extra: Vec<&str> = self
                .intent_ids
                .iter()
                .map(String::as_str)
                .filter(|id| !registry.contains(id))
                .collect();
            return Err(ShortlistError::RegistryMismatch(format!(
                "missing from model {missing:?}, unknown to registry {extra:?}"
            )));
        }
        Ok(())
    }

    fn embed(&self, normalized: &str) -> SparseVec {
        let mut v: SparseVec =
            char_ngrams(normalized, self.config.ngram_min, self.config.ngram_max)
                .into_iter()
                .filter_map(|(g, tf)| {
                    self.index
                        .get(&g)
                        .map(|&i| (i, f64::from(tf) * self.idf[i as usize]))
                })
                .collect();
        v.sort_unstable_by_key(|&(i, _)| i);
        l2_normalize(&mut v);
        v
    }

    /// Scores every intent against `text` and keeps the best `k`.
    ///
    /// Ties are broken by ascending intent id. Text that normalizes to
    /// nothing yields an empty shortlist.
    pub fn rank(&self, text: &str, k: usize) -> Result<Shortlist, ShortlistError> {
        if k == 0 {
            return Err(ShortlistError::InvalidK);
        }
        let query_text = normalize(text, self.config.normalize);
        if query_text.is_empty() {
            return Ok(Shortlist {
                query_text,
                candidates: Vec::new(),
            });
        }
        let query = self.embed(&query_text);
        let mut candidates: Vec<Candidate> = self
            .intent_ids
            .iter()
            .zip(&self.centroids)
            .map(|(id, centroid)| Candidate {
                intent_id: id.clone(),
                score: sparse_dot(&query, centroid).clamp(0.0, 1.0),
            })
            .collect();
        candidates.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.intent_id.cmp(&b.intent_id))
        });
        candidates.truncate(k);
        Ok(Shortlist {
            query_text,
            candidates,
        })
    }

    pub fn save<W: Write>(&self, mut out: W) -> Result<(), ShortlistError> {
        let header = ModelHeader {
            v: MODEL_VERSION,
            format: MODEL_FORMAT.to_owned(),
            ngram_min: self.config.ngram_min,
            ngram_max: self.config.ngram_max,
            normalize: self.config.normalize,
            features: self.grams.len(),
            intents: self.intent_ids.len(),
        };
        serde_json::to_writer(&mut out, &header).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
        for (gram, idf) in self.grams.iter().zip(&self.idf) {
            serde_json::to_writer(
                &mut out,
                &FeatureLine {
                    gram: gram.clone(),
                    idf: *idf,
                },
            )
            .map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        for (id, centroid) in self.intent_ids.iter().zip(&self.centroids) {
            serde_json::to_writer(
                &mut out,
                &CentroidLine {
                    intent: id.clone(),
                    weights: centroid.clone(),
                },
            )
            .map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load<R: BufRead>(input: R) -> Result<Self, ShortlistError> {
        let mut lines = input.lines().enumerate();
        let mut next_line = |what: &str| -> Result<(usize, String), ShortlistError> {
            match lines.next() {
                Some((i, line)) => Ok((i + 1, line?)),
                None => Err(ShortlistError::Format {
                    line: 0,
                    message: format!("unexpected end of file, expected {what}"),
                }),
            }
        };
        let (line, text) = next_line("header")?;
        let raw: serde_json::Value = parse_line(line, &text)?;
        match raw.get("v").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(MODEL_VERSION) => {}
            Some(v) => return Err(ShortlistError::Version { found: v as u32 }),
            None => {
                return Err(ShortlistError::Format {
                    line,
                    message: "missing schema version".into(),
                })
            }
        }
        let header: ModelHeader =
            serde_json::from_value(raw).map_err(|e| ShortlistError::Format {
                line,
                message: e.to_string(),
            })?;
        if header.format != MODEL_FORMAT {
            return Err(ShortlistError::Format {
                line,
                message: format!("not a shortlist model (format `{}`)", header.format),
            });
        }
        let config = ShortlistConfig {
            ngram_min: header.ngram_min,
            ngram_max: header.ngram_max,
            normalize: header.normalize,
        };
        config.check()?;

        let mut grams = Vec::with_capacity(header.features);
        let mut idf = Vec::with_capacity(header.features);
        for _ in 0..header.features {
            let (line, text) = next_line("feature")?;
            let f: FeatureLine = parse_line(line, &text)?;
            grams.push(f.gram);
            idf.push(f.idf);
        }
        let mut intent_ids = Vec::with_capacity(header.intents);
        let mut centroids = Vec::with_capacity(header.intents);
        for _ in 0..header.intents {
            let (line, text) = next_line("centroid")?;
            let c: CentroidLine = parse_line(line, &text)?;
            if c.weights.windows(2).any(|w| w[0].0 >= w[1].0)
                || c.weights.iter().any(|&(i, _)| i as usize >= grams.len())
            {
                return Err(ShortlistError::Format {
                    line,
                    message: "centroid indices out of order or out of range".into(),
                });
            }
            intent_ids.push(c.intent);
            centroids.push(c.weights);
        }
        let index = grams
            .iter()
            .enumerate()
            .map(|(i, g)| (g.clone(), i as u32))
            .collect();
        Ok(Self {
            config,
            grams,
            index,
            idf,
            intent_ids,
            centroids,
        })
    }
}

fn parse_line<T: serde::de::DeserializeOwned>(
    line: usize,
    text: &str,
) -> Result<T, ShortlistError> {
    serde_json::from_str(text).map_err(|e| ShortlistError::Format {
        line,
        message: e.to_string(),
    })
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    v: u32,
    format: String,
    ngram_min: usize,
    ngram_max: usize,
    normalize: NormalizeConfig,
    features: usize,
    intents: usize,
}

#[derive(Serialize, Deserialize)]
struct FeatureLine {
    gram: String,
    idf: f64,
}

#[derive(Serialize, Deserialize)]
struct CentroidLine {
    intent: String,
    weights: SparseVec,
}

/// Smoothed inverse document frequency.
pub fn smoothed_idf(documents: usize, document_frequency: usize) -> f64 {
    ((1.0 + documents as f64) / (1.0 + document_frequency as f64)).ln() + 1.0
}

/// Fits one unit-length tf-idf centroid per registry intent.
pub fn fit(
    train: &Dataset,
    registry: &IntentRegistry,
    config: ShortlistConfig,
) -> Result<ShortlistModel, ShortlistError> {
    config.check()?;
    let mut per_intent: BTreeMap<&str, usize> = registry.ids().map(|id| (id, 0)).collect();
    let mut docs: Vec<(&str, BTreeMap<String, u32>)> = Vec::with_capacity(train.len());
    for example in &train.examples {
        let Some(id) = example.intent_id.as_deref() else {
            continue;
        };
        let Some(count) = per_intent.get_mut(id) else {
            return Err(ShortlistError::UnknownIntent(id.to_owned()));
        };
        *count += 1;
        let text = normalize(&example.text, config.normalize);
        let grams = char_ngrams(&text, config.ngram_min, config.ngram_max);
        if !grams.is_empty() {
            docs.push((id, grams));
        }
    }
    if let Some((id, _)) = per_intent.iter().find(|(_, n)| **n == 0) {
        return Err(ShortlistError::IntentWithoutExamples((*id).to_owned()));
    }

    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for (_, grams) in &docs {
        for g in grams.keys() {
            *df.entry(g.as_str()).or_insert(0) += 1;
        }
    }
    if df.is_empty() {
        return Err(ShortlistError::EmptyVocabulary);
    }
    let n_docs = docs.len();
    let grams: Vec<String> = df.keys().map(|g| (*g).to_owned()).collect();
    let idf: Vec<f64> = df.values().map(|&d| smoothed_idf(n_docs, d)).collect();
    let index: HashMap<String, u32> = grams
        .iter()
        .enumerate()
        .map(|(i, g)| (g.clone(), i as u32))
        .collect();

    let mut sums: BTreeMap<&str, (BTreeMap<u32, f64>, usize)> = BTreeMap::new();
    for (id, doc) in &docs {
        // BTreeMap iteration is in gram order, which is also index order
        let mut v: SparseVec = doc
            .iter()
            .map(|(g, &tf)| {
                let i = index[g.as_str()];
                (i, f64::from(tf) * idf[i as usize])
            })
            .collect();
        l2_normalize(&mut v);
        let (acc, n) = sums.entry(id).or_default();
        for (i, x) in v {
            *acc.entry(i).or_insert(0.0) += x;
        }
        *n += 1;
    }

    let mut intent_ids = Vec::with_capacity(registry.len());
    let mut centroids = Vec::with_capacity(registry.len());
    for id in registry.ids() {
        let Some((acc, n)) = sums.remove(id) else {
            return Err(ShortlistError::IntentWithoutExamples(id.to_owned()));
        };
        let mut centroid: SparseVec = acc.into_iter().map(|(i, x)| (i, x / n as f64)).collect();
        l2_normalize(&mut centroid);
        intent_ids.push(id.to_owned());
        centroids.push(centroid);
    }

    Ok(ShortlistModel {
        config,
        grams,
        index,
        idf,
        intent_ids,
        centroids,
    })
}

/// Fraction of `eval_set` whose gold intent appears in the top `k`.
pub fn top_k_recall(
    model: &ShortlistModel,
    eval_set: &Dataset,
    k: usize,
) -> Result<f64, ShortlistError> {
    if eval_set.is_empty() {
        return Err(ShortlistError::EmptyEvalSet);
    }
    let mut hits = 0usize;
    for (i, example) in eval_set.examples.iter().enumerate() {
        let gold = example
            .intent_id
            .as_deref()
            .ok_or(ShortlistError::MissingGold(i))?;
        if model.rank(&example.text, k)?.contains(gold) {
            hits += 1;
        }
    }
    Ok(hits as f64 / eval_set.len() as f64)
}
