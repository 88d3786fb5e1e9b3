//! Seeded synthetic corpus generator driven by a slot grammar asset.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    self, CorpusError, Dataset, DatasetKind, Intent, IntentRegistry, UtteranceExample,
    GENERATED_RANGE, SIMPLE_RANGE,
};
use crate::normalize::strip_diacritics;

const BUNDLED_GRAMMAR: &str = include_str!("../assets/banking_grammar.toml");
const GRAMMAR_VERSION: u32 = 1;
/// Default per-intent ceiling on the generated split.
pub const DEFAULT_GENERATED_CAP: usize = 120;
const TEST_RESAMPLE_ATTEMPTS: usize = 40;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid corpus spec: {0}")]
    Spec(String),
    #[error("invalid grammar: {0}")]
    Grammar(String),
    #[error("intent `{intent}`: {requested} distinct {split} examples requested but the grammar yields at most {available}")]
    Capacity {
        intent: String,
        split: &'static str,
        requested: usize,
        available: usize,
    },
    #[error("train/test overlap {measured:.4} exceeds the ceiling {ceiling:.4}")]
    Overlap { measured: f64, ceiling: f64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Perturbation rates applied to one split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseProfile {
    /// Probability of swapping the action and object phrases.
    pub jitter: f64,
    /// Probability of dropping all diacritics from the utterance.
    pub diacritic_drop: f64,
    /// Probability of a single-character typo.
    pub typo: f64,
    /// Probability per slot of drawing from the held-out filler pool.
    pub heldout: f64,
    /// Probability of capitalizing the first letter and adding punctuation.
    pub decorate: f64,
}

impl NoiseProfile {
    pub const TRAIN: NoiseProfile = NoiseProfile {
        jitter: 0.15,
        diacritic_drop: 0.15,
        typo: 0.05,
        heldout: 0.0,
        decorate: 0.5,
    };
    pub const TEST: NoiseProfile = NoiseProfile {
        jitter: 0.3,
        diacritic_drop: 0.4,
        typo: 0.25,
        heldout: 0.3,
        decorate: 0.5,
    };

    fn validate(&self, which: &str) -> Result<(), DatagenError> {
        let fields = [
            ("jitter", self.jitter),
            ("diacritic_drop", self.diacritic_drop),
            ("typo", self.typo),
            ("heldout", self.heldout),
            ("decorate", self.decorate),
        ];
        for (name, p) in fields {
            if !(0.0..=1.0).contains(&p) {
                return Err(DatagenError::Spec(format!(
                    "{which}.{name} must be a probability in [0, 1], got {p}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for NoiseProfile {
    fn default() -> Self {
        Self::TRAIN
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub n_intents: usize,
    /// Inclusive per-intent count range for the simple split.
    pub simple_range: (usize, usize),
    /// Inclusive per-intent count range for the generated split, before the cap.
    pub generated_range: (usize, usize),
    pub generated_cap: usize,
    pub test_size: usize,
    pub oos_size: usize,
    pub seed: u64,
    /// Grammar asset path; the bundled banking grammar when unset.
    pub grammar: Option<PathBuf>,
    /// Maximum fraction of test texts that may also appear verbatim in train.
    pub overlap_ceiling: f64,
    /// Permit count ranges outside the simple/generated bounds.
    pub allow_out_of_range: bool,
    pub train_noise: NoiseProfile,
    pub test_noise: NoiseProfile,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_intents: 50,
            simple_range: SIMPLE_RANGE,
            generated_range: GENERATED_RANGE,
            generated_cap: DEFAULT_GENERATED_CAP,
            test_size: 300,
            oos_size: 300,
            seed: 7,
            grammar: None,
            overlap_ceiling: 0.05,
            allow_out_of_range: false,
            train_noise: NoiseProfile::TRAIN,
            test_noise: NoiseProfile::TEST,
        }
    }
}

impl CorpusSpec {
    pub fn from_toml_str(text: &str) -> Result<Self, DatagenError> {
        toml::from_str(text).map_err(|e| DatagenError::Spec(e.message().to_owned()))
    }

    pub fn load(path: &Path) -> Result<Self, DatagenError> {
        let text = fs::read_to_string(path).map_err(|source| DatagenError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            DatagenError::Spec(msg) => DatagenError::Spec(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Generated-split range after applying the cap.
    pub fn effective_generated_range(&self) -> (usize, usize) {
        let (lo, hi) = self.generated_range;
        (lo, hi.min(self.generated_cap))
    }

    pub fn validate(&self) -> Result<(), DatagenError> {
        if self.n_intents == 0 {
            return Err(DatagenError::Spec("n_intents must be at least 1".into()));
        }
        let check_range = |name: &str, (lo, hi): (usize, usize), bounds: (usize, usize)| {
            if lo == 0 || lo > hi {
                return Err(DatagenError::Spec(format!(
                    "{name} must be a nonempty range with a positive lower bound, got [{lo}, {hi}]"
                )));
            }
            if !self.allow_out_of_range && (lo < bounds.0 || hi > bounds.1) {
                return Err(DatagenError::Spec(format!(
                    "{name} [{lo}, {hi}] lies outside [{}, {}]; set allow_out_of_range to override",
                    bounds.0, bounds.1
                )));
            }
            Ok(())
        };
        check_range("simple_range", self.simple_range, SIMPLE_RANGE)?;
        check_range("generated_range", self.generated_range, GENERATED_RANGE)?;
        if self.generated_cap < self.generated_range.0 {
            return Err(DatagenError::Spec(format!(
                "generated_cap {} is below the generated_range lower bound {}",
                self.generated_cap, self.generated_range.0
            )));
        }
        if !(0.0..=1.0).contains(&self.overlap_ceiling) {
            return Err(DatagenError::Spec(format!(
                "overlap_ceiling must lie in [0, 1], got {}",
                self.overlap_ceiling
            )));
        }
        self.train_noise.validate("train_noise")?;
        self.test_noise.validate("test_noise")
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct Carrier {
    frames: Vec<String>,
    #[serde(default)]
    test_frames: Vec<String>,
    prefixes: Vec<String>,
    #[serde(default)]
    test_prefixes: Vec<String>,
    suffixes: Vec<String>,
    #[serde(default)]
    test_suffixes: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct Filler {
    id: String,
    forms: Vec<String>,
    #[serde(default)]
    test_forms: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct IntentRule {
    action: String,
    object: String,
    description: String,
    response: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct OosTopic {
    forms: Vec<String>,
    objects: Vec<String>,
}

/// A themed slot grammar: carrier phrases, action and object paraphrases,
/// intents composed from them, and an unrelated topic pool.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grammar {
    version: u32,
    carrier: Carrier,
    action: Vec<Filler>,
    object: Vec<Filler>,
    intent: Vec<IntentRule>,
    #[serde(default)]
    oos: Vec<OosTopic>,
}

impl Grammar {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_GRAMMAR).expect("bundled grammar is valid")
    }

    pub fn parse(text: &str) -> Result<Self, DatagenError> {
        let grammar: Grammar =
            toml::from_str(text).map_err(|e| DatagenError::Grammar(e.message().to_owned()))?;
        grammar.check()?;
        Ok(grammar)
    }

    pub fn load(path: &Path) -> Result<Self, DatagenError> {
        let text = fs::read_to_string(path).map_err(|source| DatagenError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::parse(&text).map_err(|e| match e {
            DatagenError::Grammar(msg) => {
                DatagenError::Grammar(format!("{}: {msg}", path.display()))
            }
            other => other,
        })
    }

    /// Number of intents the grammar defines.
    pub fn intent_count(&self) -> usize {
        self.intent.len()
    }

    /// Intent ids in grammar order.
    pub fn intent_ids(&self) -> Vec<String> {
        self.intent.iter().map(rule_id).collect()
    }

    fn check(&self) -> Result<(), DatagenError> {
        let bad = |msg: String| Err(DatagenError::Grammar(msg));
        if self.version != GRAMMAR_VERSION {
            return bad(format!(
                "unsupported grammar version {} (expected {GRAMMAR_VERSION})",
                self.version
            ));
        }
        for frame in self.carrier.frames.iter().chain(&self.carrier.test_frames) {
            if frame.matches("{act}").count() != 1 || frame.matches("{obj}").count() != 1 {
                return bad(format!(
                    "frame `{frame}` must contain {{act}} and {{obj}} exactly once"
                ));
            }
        }
        if self.carrier.frames.is_empty()
            || self.carrier.prefixes.is_empty()
            || self.carrier.suffixes.is_empty()
        {
            return bad("carrier frames, prefixes and suffixes must be nonempty".into());
        }
        let mut ids = BTreeSet::new();
        for filler in self.action.iter().chain(&self.object) {
            if filler.forms.is_empty() {
                return bad(format!("filler `{}` has no forms", filler.id));
            }
        }
        let mut intent_objects = BTreeSet::new();
        for rule in &self.intent {
            if !self.action.iter().any(|a| a.id == rule.action) {
                return bad(format!(
                    "intent references unknown action `{}`",
                    rule.action
                ));
            }
            let Some(object) = self.object.iter().find(|o| o.id == rule.object) else {
                return bad(format!(
                    "intent references unknown object `{}`",
                    rule.object
                ));
            };
            intent_objects.extend(object.forms.iter().chain(&object.test_forms));
            if !ids.insert(rule_id(rule)) {
                return bad(format!("duplicate intent `{}`", rule_id(rule)));
            }
        }
        if self.intent.is_empty() {
            return bad("grammar defines no intents".into());
        }
        for topic in &self.oos {
            if topic.forms.is_empty() || topic.objects.is_empty() {
                return bad("out-of-scope topics need at least one form and one object".into());
            }
            if let Some(o) = topic.objects.iter().find(|o| intent_objects.contains(o)) {
                return bad(format!(
                    "out-of-scope object `{o}` is also an intent object"
                ));
            }
        }
        Ok(())
    }
}

type TextsByIntent = BTreeMap<String, Vec<String>>;

fn rule_id(rule: &IntentRule) -> String {
    format!("{}_{}", rule.object, rule.action)
}

/// Slot pools for one utterance source.
struct Slots<'a> {
    frames: Vec<&'a str>,
    prefixes: Vec<&'a str>,
    suffixes: Vec<&'a str>,
    acts: Vec<&'a str>,
    objs: Vec<&'a str>,
}

impl Slots<'_> {
    fn capacity(&self) -> usize {
        [
            &self.frames,
            &self.prefixes,
            &self.suffixes,
            &self.acts,
            &self.objs,
        ]
        .iter()
        .map(|pool| pool.iter().collect::<BTreeSet<_>>().len())
        .product()
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, train: &[&'a str], held: &[&'a str], heldout: f64) -> &'a str {
    if !held.is_empty() && rng.random_bool(heldout) {
        held.choose(rng).copied().expect("nonempty pool")
    } else {
        train.choose(rng).copied().expect("nonempty pool")
    }
}

fn strs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

/// Builds one clean utterance and applies noise.
fn realize(
    rng: &mut ChaCha8Rng,
    train: &Slots<'_>,
    held: &Slots<'_>,
    noise: &NoiseProfile,
) -> String {
    let frame = pick(rng, &train.frames, &held.frames, noise.heldout);
    let prefix = pick(rng, &train.prefixes, &held.prefixes, noise.heldout);
    let suffix = pick(rng, &train.suffixes, &held.suffixes, noise.heldout);
    let act = pick(rng, &train.acts, &held.acts, noise.heldout);
    let obj = pick(rng, &train.objs, &held.objs, noise.heldout);
    let body = if frame.contains("{act} {obj}") && rng.random_bool(noise.jitter) {
        frame.replace("{act} {obj}", &format!("{obj} {act}"))
    } else {
        frame.replace("{act}", act).replace("{obj}", obj)
    }
    .replace("{act}", act);
    apply_noise(rng, prefix, &body, suffix, noise)
}

fn apply_noise(
    rng: &mut ChaCha8Rng,
    prefix: &str,
    body: &str,
    suffix: &str,
    noise: &NoiseProfile,
) -> String {
    let decorate = rng.random_bool(noise.decorate);
    let mut text = String::new();
    if !prefix.is_empty() {
        text.push_str(prefix);
        text.push_str(if decorate { ", " } else { " " });
    }
    text.push_str(body);
    if !suffix.is_empty() {
        text.push(' ');
        text.push_str(suffix);
    }
    if rng.random_bool(noise.diacritic_drop) {
        text = strip_diacritics(&text);
    }
    if rng.random_bool(noise.typo) {
        text = typo(rng, &text);
    }
    if decorate {
        let mut chars = text.chars();
        if let Some(first) = chars.next() {
            text = first.to_uppercase().chain(chars).collect();
        }
        text.push(*['?', '.', '!'].choose(rng).expect("nonempty"));
    }
    text
}

/// Deletes, doubles, or transposes one letter.
fn typo(rng: &mut ChaCha8Rng, text: &str) -> String {
    let mut chars: Vec<char> = text.chars().collect();
    let letters: Vec<usize> = (0..chars.len())
        .filter(|&i| chars[i].is_alphabetic())
        .collect();
    let Some(&at) = letters.choose(rng) else {
        return text.to_owned();
    };
    match rng.random_range(0..3) {
        0 => {
            chars.remove(at);
        }
        1 => chars.insert(at, chars[at]),
        _ => {
            if at + 1 < chars.len() && chars[at + 1].is_alphabetic() {
                chars.swap(at, at + 1);
            } else {
                chars.remove(at);
            }
        }
    }
    chars.into_iter().collect()
}

/// The registry and four datasets produced by [`generate`].
#[derive(Debug, Clone)]
pub struct GeneratedCorpus {
    pub registry: IntentRegistry,
    pub simple: Dataset,
    pub generated: Dataset,
    pub test: Dataset,
    pub oos: Dataset,
    /// Fraction of test texts found verbatim in simple or generated.
    pub overlap: f64,
}

impl GeneratedCorpus {
    pub fn datasets(&self) -> [&Dataset; 4] {
        [&self.simple, &self.generated, &self.test, &self.oos]
    }

    pub fn dataset(&self, kind: DatasetKind) -> &Dataset {
        match kind {
            DatasetKind::Simple => &self.simple,
            DatasetKind::Generated => &self.generated,
            DatasetKind::Test => &self.test,
            DatasetKind::Oos => &self.oos,
        }
    }

    /// Writes `registry.jsonl` and one `<kind>.jsonl` per split into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<Vec<PathBuf>, DatagenError> {
        let io = |path: &Path| {
            let path = path.to_owned();
            move |source| DatagenError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let mut written = Vec::new();
        let path = dir.join(REGISTRY_FILE);
        let mut buf = Vec::new();
        corpus::write_registry(&self.registry, &mut buf).map_err(io(&path))?;
        fs::write(&path, buf).map_err(io(&path))?;
        written.push(path);
        for dataset in self.datasets() {
            let path = dir.join(dataset_file(dataset.kind));
            let mut buf = Vec::new();
            corpus::write_dataset(dataset, &mut buf).map_err(io(&path))?;
            fs::write(&path, buf).map_err(io(&path))?;
            written.push(path);
        }
        Ok(written)
    }
}

pub const REGISTRY_FILE: &str = "registry.jsonl";

pub fn dataset_file(kind: DatasetKind) -> String {
    format!("{kind}.jsonl")
}

/// Draws `count` texts, distinct from each other and from `exclude`.
#[allow(clippy::too_many_arguments)]
fn draw_distinct(
    rng: &mut ChaCha8Rng,
    intent: &str,
    split: &'static str,
    count: usize,
    train: &Slots<'_>,
    held: &Slots<'_>,
    noise: &NoiseProfile,
    exclude: &BTreeSet<String>,
) -> Result<Vec<String>, DatagenError> {
    let capacity = if noise.heldout > 0.0 {
        train.capacity().max(held.capacity())
    } else {
        train.capacity()
    };
    if count > capacity {
        return Err(DatagenError::Capacity {
            intent: intent.to_owned(),
            split,
            requested: count,
            available: capacity,
        });
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    let budget = 200 + 50 * count;
    for _ in 0..budget {
        if out.len() == count {
            break;
        }
        let text = realize(rng, train, held, noise);
        if !exclude.contains(&text) && seen.insert(text.clone()) {
            out.push(text);
        }
    }
    if out.len() < count {
        return Err(DatagenError::Capacity {
            intent: intent.to_owned(),
            split,
            requested: count,
            available: out.len(),
        });
    }
    Ok(out)
}

/// Generates a corpus with the grammar named by the spec.
pub fn generate(spec: &CorpusSpec) -> Result<GeneratedCorpus, DatagenError> {
    let grammar = match &spec.grammar {
        Some(path) => Grammar::load(path)?,
        None => Grammar::bundled(),
    };
    generate_with(spec, &grammar)
}

pub fn generate_with(
    spec: &CorpusSpec,
    grammar: &Grammar,
) -> Result<GeneratedCorpus, DatagenError> {
    spec.validate()?;
    if spec.n_intents > grammar.intent.len() {
        return Err(DatagenError::Spec(format!(
            "n_intents {} exceeds the {} intents defined by the grammar",
            spec.n_intents,
            grammar.intent.len()
        )));
    }
    if spec.oos_size > 0 && grammar.oos.is_empty() {
        return Err(DatagenError::Spec(
            "oos_size is positive but the grammar has no out-of-scope topics".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let c = &grammar.carrier;
    let rules = &grammar.intent[..spec.n_intents];
    let slots: Vec<(String, Slots<'_>, Slots<'_>)> = rules
        .iter()
        .map(|rule| {
            let act = grammar
                .action
                .iter()
                .find(|a| a.id == rule.action)
                .expect("checked");
            let obj = grammar
                .object
                .iter()
                .find(|o| o.id == rule.object)
                .expect("checked");
            let train = Slots {
                frames: strs(&c.frames),
                prefixes: strs(&c.prefixes),
                suffixes: strs(&c.suffixes),
                acts: strs(&act.forms),
                objs: strs(&obj.forms),
            };
            let held = Slots {
                frames: strs(&c.test_frames),
                prefixes: strs(&c.test_prefixes),
                suffixes: strs(&c.test_suffixes),
                acts: strs(&act.test_forms),
                objs: strs(&obj.test_forms),
            };
            (rule_id(rule), train, held)
        })
        .collect();

    let none = BTreeSet::new();
    let split = |kind: DatasetKind,
                 range: (usize, usize),
                 rng: &mut ChaCha8Rng|
     -> Result<(Vec<UtteranceExample>, TextsByIntent), DatagenError> {
        let mut examples = Vec::new();
        let mut by_intent = BTreeMap::new();
        for (id, train, held) in &slots {
            let n = rng.random_range(range.0..=range.1);
            let texts = draw_distinct(
                rng,
                id,
                kind.as_str(),
                n,
                train,
                held,
                &spec.train_noise,
                &none,
            )?;
            examples.extend(
                texts
                    .iter()
                    .map(|t| UtteranceExample::in_scope(t.clone(), id.clone())),
            );
            by_intent.insert(id.clone(), texts);
        }
        examples.shuffle(rng);
        Ok((examples, by_intent))
    };
    let (simple, simple_by_intent) = split(DatasetKind::Simple, spec.simple_range, &mut rng)?;
    let (generated, _) = split(
        DatasetKind::Generated,
        spec.effective_generated_range(),
        &mut rng,
    )?;

    let train_texts: BTreeSet<String> = simple
        .iter()
        .chain(&generated)
        .map(|e| e.text.clone())
        .collect();

    let mut test = Vec::with_capacity(spec.test_size);
    let mut test_seen = BTreeSet::new();
    let mut overlapping = 0usize;
    for i in 0..spec.test_size {
        let (id, train, held) = &slots[i % slots.len()];
        let mut text = realize(&mut rng, train, held, &spec.test_noise);
        for _ in 0..TEST_RESAMPLE_ATTEMPTS {
            if !train_texts.contains(&text) && !test_seen.contains(&text) {
                break;
            }
            text = realize(&mut rng, train, held, &spec.test_noise);
        }
        if train_texts.contains(&text) {
            overlapping += 1;
        }
        test_seen.insert(text.clone());
        test.push(UtteranceExample::in_scope(text, id.clone()));
    }
    test.shuffle(&mut rng);
    let overlap = if spec.test_size == 0 {
        0.0
    } else {
        overlapping as f64 / spec.test_size as f64
    };
    if overlap > spec.overlap_ceiling {
        return Err(DatagenError::Overlap {
            measured: overlap,
            ceiling: spec.overlap_ceiling,
        });
    }

    let all_frames: Vec<&str> = strs(&c.frames)
        .into_iter()
        .chain(strs(&c.test_frames))
        .collect();
    let all_prefixes: Vec<&str> = strs(&c.prefixes)
        .into_iter()
        .chain(strs(&c.test_prefixes))
        .collect();
    let all_suffixes: Vec<&str> = strs(&c.suffixes)
        .into_iter()
        .chain(strs(&c.test_suffixes))
        .collect();
    let mut oos = Vec::with_capacity(spec.oos_size);
    let mut oos_seen: BTreeSet<String> = train_texts.clone();
    oos_seen.extend(test_seen);
    for _ in 0..spec.oos_size {
        let topic = grammar.oos.choose(&mut rng).expect("checked nonempty");
        let topic_slots = Slots {
            frames: all_frames.clone(),
            prefixes: all_prefixes.clone(),
            suffixes: all_suffixes.clone(),
            acts: strs(&topic.forms),
            objs: strs(&topic.objects),
        };
        let empty = Slots {
            frames: vec![],
            prefixes: vec![],
            suffixes: vec![],
            acts: vec![],
            objs: vec![],
        };
        let mut text = realize(&mut rng, &topic_slots, &empty, &spec.test_noise);
        for _ in 0..TEST_RESAMPLE_ATTEMPTS {
            if !oos_seen.contains(&text) {
                break;
            }
            text = realize(&mut rng, &topic_slots, &empty, &spec.test_noise);
        }
        oos_seen.insert(text.clone());
        oos.push(UtteranceExample::out_of_scope(text));
    }

    let intents = rules
        .iter()
        .map(|rule| {
            let id = rule_id(rule);
            Intent {
                examples: simple_by_intent.get(&id).cloned().unwrap_or_default(),
                id,
                description: rule.description.clone(),
                response: rule.response.clone(),
            }
        })
        .collect();
    let registry = IntentRegistry::new(intents)?;
    Ok(GeneratedCorpus {
        registry,
        simple: Dataset::new("simple", DatasetKind::Simple, simple),
        generated: Dataset::new("generated", DatasetKind::Generated, generated),
        test: Dataset::new("test", DatasetKind::Test, test),
        oos: Dataset::new("oos", DatasetKind::Oos, oos),
        overlap,
    })
}

/// Per-split and per-intent example counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSummary {
    pub intents: usize,
    pub totals: BTreeMap<DatasetKind, usize>,
    /// Intent id to counts in simple, generated and test order.
    pub per_intent: BTreeMap<String, [usize; 3]>,
}

impl CorpusSummary {
    pub fn of(registry: &IntentRegistry, datasets: &[&Dataset]) -> Self {
        let mut totals = BTreeMap::new();
        let mut per_intent: BTreeMap<String, [usize; 3]> =
            registry.ids().map(|id| (id.to_owned(), [0; 3])).collect();
        for dataset in datasets {
            *totals.entry(dataset.kind).or_insert(0) += dataset.len();
            let column = match dataset.kind {
                DatasetKind::Simple => 0,
                DatasetKind::Generated => 1,
                DatasetKind::Test => 2,
                DatasetKind::Oos => continue,
            };
            for (id, n) in dataset.counts_per_intent() {
                per_intent.entry(id.to_owned()).or_insert([0; 3])[column] += n;
            }
        }
        Self {
            intents: registry.len(),
            totals,
            per_intent,
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "intents: {}", self.intents);
        let _ = writeln!(out, "{:<10} {:>7}", "split", "total");
        for kind in DatasetKind::ALL {
            let _ = writeln!(
                out,
                "{:<10} {:>7}",
                kind.as_str(),
                self.totals.get(&kind).copied().unwrap_or(0)
            );
        }
        let width = self
            .per_intent
            .keys()
            .map(String::len)
            .max()
            .unwrap_or(6)
            .max(6);
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<width$} {:>7} {:>9} {:>5}",
            "intent", "simple", "generated", "test"
        );
        for (id, [s, g, t]) in &self.per_intent {
            let _ = writeln!(out, "{id:<width$} {s:>7} {g:>9} {t:>5}");
        }
        out
    }
}

pub fn summarize(corpus: &GeneratedCorpus) -> CorpusSummary {
    CorpusSummary::of(&corpus.registry, &corpus.datasets())
}

/// Generates the corpus for `spec` and renders its summary.
pub fn describe(spec: &CorpusSpec) -> Result<String, DatagenError> {
    let corpus = generate(spec)?;
    let mut text = format!("seed: {}\n", spec.seed);
    text.push_str(&summarize(&corpus).render());
    let _ = writeln!(text, "\ntrain/test overlap: {:.4}", corpus.overlap);
    Ok(text)
}
