use std::collections::HashMap;

use intentgate_core::corpus::Dataset;
use intentgate_core::datagen::{generate, CorpusSpec};
use intentgate_core::normalize::{normalize, NormalizeConfig};
use intentgate_core::shortlist::{fit, top_k_recall, ShortlistConfig};

/// Dense tf-idf nearest-centroid scorer written from the definition.
struct BruteForce {
    idf: HashMap<String, f64>,
    centroids: Vec<(String, HashMap<String, f64>)>,
}

fn grams(text: &str) -> HashMap<String, f64> {
    let mut out = HashMap::new();
    let text = normalize(text, NormalizeConfig::default());
    if text.is_empty() {
        return out;
    }
    let padded: Vec<char> = format!(" {text} ").chars().collect();
    for n in 3..=5 {
        if padded.len() < n {
            continue;
        }
        for start in 0..=padded.len() - n {
            let g: String = padded[start..start + n].iter().collect();
            *out.entry(g).or_insert(0.0) += 1.0;
        }
    }
    out
}

fn unit(mut v: HashMap<String, f64>) -> HashMap<String, f64> {
    let norm: f64 = v.values().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.values_mut() {
            *x /= norm;
        }
    }
    v
}

impl BruteForce {
    fn fit(train: &Dataset) -> Self {
        let docs: Vec<(String, HashMap<String, f64>)> = train
            .examples
            .iter()
            .map(|e| (e.intent_id.clone().unwrap(), grams(&e.text)))
            .filter(|(_, g)| !g.is_empty())
            .collect();
        let mut df: HashMap<String, usize> = HashMap::new();
        for (_, g) in &docs {
            for k in g.keys() {
                *df.entry(k.clone()).or_default() += 1;
            }
        }
        let n = docs.len() as f64;
        let idf: HashMap<String, f64> = df
            .into_iter()
            .map(|(g, d)| (g, ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0))
            .collect();
        let mut sums: HashMap<String, (HashMap<String, f64>, f64)> = HashMap::new();
        for (id, g) in docs {
            let v = unit(
                g.into_iter()
                    .map(|(k, tf)| {
                        let w = tf * idf[&k];
                        (k, w)
                    })
                    .collect(),
            );
            let (acc, count) = sums.entry(id).or_default();
            for (k, x) in v {
                *acc.entry(k).or_default() += x;
            }
            *count += 1.0;
        }
        let mut centroids: Vec<(String, HashMap<String, f64>)> = sums
            .into_iter()
            .map(|(id, (acc, count))| {
                (
                    id,
                    unit(acc.into_iter().map(|(k, x)| (k, x / count)).collect()),
                )
            })
            .collect();
        centroids.sort_by(|a, b| a.0.cmp(&b.0));
        Self { idf, centroids }
    }

    fn scores(&self, text: &str) -> Vec<(String, f64)> {
        let q = unit(
            grams(text)
                .into_iter()
                .filter_map(|(k, tf)| self.idf.get(&k).map(|w| (k, tf * w)))
                .collect(),
        );
        self.centroids
            .iter()
            .map(|(id, c)| {
                let dot: f64 = q
                    .iter()
                    .map(|(k, x)| x * c.get(k).copied().unwrap_or(0.0))
                    .sum();
                (id.clone(), dot.clamp(0.0, 1.0))
            })
            .collect()
    }

    /// Every intent is scored; gold is a hit if fewer than `k` intents
    /// outrank it (higher score, or equal score and smaller id).
    fn recall(&self, test: &Dataset, k: usize) -> f64 {
        let hits = test
            .examples
            .iter()
            .filter(|e| {
                let gold = e.intent_id.as_deref().unwrap();
                let scores = self.scores(&e.text);
                let gold_score = scores.iter().find(|(id, _)| id == gold).unwrap().1;
                if scores.iter().all(|(_, s)| *s == 0.0) {
                    return false;
                }
                let ahead = scores
                    .iter()
                    .filter(|(id, s)| *s > gold_score || (*s == gold_score && id.as_str() < gold))
                    .count();
                ahead < k
            })
            .count();
        hits as f64 / test.len() as f64
    }
}

#[test]
fn recall_matches_brute_force_on_twenty_intents() {
    let spec = CorpusSpec {
        n_intents: 20,
        test_size: 200,
        oos_size: 10,
        generated_cap: 40,
        seed: 3,
        ..CorpusSpec::default()
    };
    let corpus = generate(&spec).unwrap();
    let model = fit(
        &corpus.generated,
        &corpus.registry,
        ShortlistConfig::default(),
    )
    .unwrap();
    let oracle = BruteForce::fit(&corpus.generated);
    for k in [1, 2, 3, 5, 20] {
        let got = top_k_recall(&model, &corpus.test, k).unwrap();
        let want = oracle.recall(&corpus.test, k);
        assert_eq!(got, want, "k = {k}");
    }
    assert_eq!(top_k_recall(&model, &corpus.test, 20).unwrap(), 1.0);
}

#[test]
fn per_query_scores_match_brute_force() {
    let spec = CorpusSpec {
        n_intents: 20,
        test_size: 60,
        oos_size: 30,
        generated_cap: 30,
        seed: 5,
        ..CorpusSpec::default()
    };
    let corpus = generate(&spec).unwrap();
    let model = fit(&corpus.simple, &corpus.registry, ShortlistConfig::default()).unwrap();
    let oracle = BruteForce::fit(&corpus.simple);
    for e in corpus.test.examples.iter().chain(&corpus.oos.examples) {
        let ranked = model.rank(&e.text, 20).unwrap();
        let want: HashMap<String, f64> = oracle.scores(&e.text).into_iter().collect();
        for c in &ranked.candidates {
            assert!((c.score - want[&c.intent_id]).abs() < 1e-12, "{}", e.text);
        }
    }
}
