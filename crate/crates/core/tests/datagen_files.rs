use std::collections::{BTreeMap, BTreeSet};
use std::fs;

use intentgate_core::corpus::{load_dataset, load_registry, DatasetKind};
use intentgate_core::datagen::{
    dataset_file, describe, generate, summarize, CorpusSpec, CorpusSummary, REGISTRY_FILE,
};

fn spec() -> CorpusSpec {
    CorpusSpec {
        n_intents: 12,
        test_size: 60,
        oos_size: 40,
        generated_cap: 40,
        seed: 7,
        ..CorpusSpec::default()
    }
}

#[test]
fn summary_counts_equal_file_recount() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate(&spec()).unwrap();
    corpus.write_to_dir(dir.path()).unwrap();

    let registry = load_registry(&dir.path().join(REGISTRY_FILE)).unwrap();
    let mut totals = BTreeMap::new();
    let mut per_intent: BTreeMap<String, [usize; 3]> =
        registry.ids().map(|id| (id.to_owned(), [0; 3])).collect();
    for (column, kind) in DatasetKind::ALL.into_iter().enumerate() {
        let text = fs::read_to_string(dir.path().join(dataset_file(kind))).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        totals.insert(kind, lines.len());
        for line in lines {
            let value: serde_json::Value = serde_json::from_str(line).unwrap();
            if let Some(id) = value.get("intent").and_then(|v| v.as_str()) {
                per_intent.get_mut(id).unwrap()[column] += 1;
            }
        }
    }
    let recount = CorpusSummary {
        intents: registry.len(),
        totals,
        per_intent,
    };
    assert_eq!(summarize(&corpus), recount);

    let rendered = describe(&spec()).unwrap();
    assert!(rendered.contains(&recount.render()));
}

#[test]
fn same_seed_writes_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let written_a = generate(&spec()).unwrap().write_to_dir(a.path()).unwrap();
    generate(&spec()).unwrap().write_to_dir(b.path()).unwrap();
    assert_eq!(written_a.len(), 5);
    for path in written_a {
        let name = path.file_name().unwrap();
        assert_eq!(
            fs::read(&path).unwrap(),
            fs::read(b.path().join(name)).unwrap()
        );
    }
}

#[test]
fn written_files_load_back() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate(&spec()).unwrap();
    corpus.write_to_dir(dir.path()).unwrap();
    for kind in DatasetKind::ALL {
        let loaded = load_dataset(&dir.path().join(dataset_file(kind)), kind).unwrap();
        assert_eq!(&loaded, corpus.dataset(kind));
    }
}

#[test]
fn default_corpus_overlap_below_ceiling() {
    let spec = CorpusSpec::default();
    let corpus = generate(&spec).unwrap();
    let train: BTreeSet<&str> = corpus
        .simple
        .examples
        .iter()
        .chain(&corpus.generated.examples)
        .map(|e| e.text.as_str())
        .collect();
    let shared = corpus
        .test
        .examples
        .iter()
        .filter(|e| train.contains(e.text.as_str()))
        .count();
    let measured = shared as f64 / corpus.test.len() as f64;
    assert_eq!(measured, corpus.overlap);
    assert!(measured <= spec.overlap_ceiling, "{measured}");
    assert_eq!(corpus.registry.len(), 50);
    assert_eq!(corpus.test.len(), 300);
    assert_eq!(corpus.oos.len(), 300);
    let (lo, hi) = spec.effective_generated_range();
    assert!(corpus
        .generated
        .counts_per_intent()
        .values()
        .all(|n| (lo..=hi).contains(n)));
}

#[test]
fn oos_shares_no_text_with_in_scope_splits() {
    let corpus = generate(&spec()).unwrap();
    let in_scope: BTreeSet<&str> = [&corpus.simple, &corpus.generated, &corpus.test]
        .into_iter()
        .flat_map(|d| d.examples.iter().map(|e| e.text.as_str()))
        .collect();
    assert!(corpus
        .oos
        .examples
        .iter()
        .all(|e| !in_scope.contains(e.text.as_str())));
}
