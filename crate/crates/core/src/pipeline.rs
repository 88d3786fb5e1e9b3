//! normalize → shortlist → (rerank) → gate.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Dataset, IntentRegistry};
use crate::normalize::NormalizeConfig;
use crate::rerank::{
    build_prompt, rerank, PromptSpec, RerankError, RerankerClient, RetryPolicy, ScriptedClient,
    TemplateSet, Verdict, VerdictKind, DEFAULT_TEMPLATE_ID, PROMPT_INTENT_OPTIONS,
};
use crate::shortlist::{Candidate, ShortlistError, ShortlistModel};

pub const DEFAULT_THRESHOLD: f64 = 0.4;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Shortlist(#[from] ShortlistError),
    #[error(transparent)]
    Rerank(#[from] RerankError),
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error("rerank mode requires a reranker client")]
    MissingClient,
    #[error("model was trained with normalization {model:?} but the pipeline is configured with {config:?}")]
    NormalizeMismatch {
        model: NormalizeConfig,
        config: NormalizeConfig,
    },
    #[error("decision names intent `{0}` which is not in the registry")]
    DanglingIntent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Accept the top shortlist candidate when its score clears the threshold.
    #[default]
    Vector,
    /// Let a reranker choose among the top candidates or reject them all.
    Rerank,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vector" => Ok(Mode::Vector),
            "rerank" => Ok(Mode::Rerank),
            other => Err(format!(
                "unknown mode `{other}` (expected vector or rerank)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub mode: Mode,
    /// Vector-mode gate: accept iff top score > threshold.
    pub threshold: f64,
    /// Shortlist length kept in the trace.
    pub k: usize,
    pub normalize: NormalizeConfig,
    pub template_id: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Vector,
            threshold: DEFAULT_THRESHOLD,
            k: PROMPT_INTENT_OPTIONS,
            normalize: NormalizeConfig::default(),
            template_id: DEFAULT_TEMPLATE_ID.to_owned(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        check_threshold(self.threshold)?;
        if self.k == 0 {
            return Err(PipelineError::Config("k must be at least 1".into()));
        }
        Ok(())
    }
}

fn check_threshold(threshold: f64) -> Result<(), PipelineError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(PipelineError::Config(format!(
            "threshold {threshold} is outside [0, 1]"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    InScope { intent_id: String },
    OutOfScope,
}

impl Outcome {
    pub fn intent_id(&self) -> Option<&str> {
        match self {
            Outcome::InScope { intent_id } => Some(intent_id),
            Outcome::OutOfScope => None,
        }
    }

    pub fn is_in_scope(&self) -> bool {
        matches!(self, Outcome::InScope { .. })
    }
}

/// Which rule produced the outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateRule {
    EmptyInput,
    ScoreAboveThreshold,
    ScoreAtOrBelowThreshold,
    VerdictIntent,
    VerdictInvalid,
    VerdictUnparseable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trace {
    pub mode: Mode,
    pub normalized_text: String,
    pub shortlist: Vec<Candidate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt: Option<PromptSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    pub gate: GateRule,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decision {
    pub outcome: Outcome,
    /// Top-1 shortlist score; vector mode only.
    pub confidence: Option<f64>,
    pub trace: Trace,
}

impl Decision {
    pub fn intent_id(&self) -> Option<&str> {
        self.outcome.intent_id()
    }

    pub fn is_in_scope(&self) -> bool {
        self.outcome.is_in_scope()
    }
}

/// A ready-to-serve classifier over an immutable model and registry.
pub struct Pipeline {
    config: PipelineConfig,
    model: Arc<ShortlistModel>,
    registry: Arc<IntentRegistry>,
    templates: TemplateSet,
    client: Option<Arc<dyn RerankerClient>>,
    retry: RetryPolicy,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("config", &self.config)
            .field("intents", &self.registry.len())
            .field("has_client", &self.client.is_some())
            .finish()
    }
}

impl Pipeline {
    /// Checks the config, the model/registry pairing and, in rerank mode,
    /// that a client and the configured template are available.
    pub fn new(
        config: PipelineConfig,
        model: Arc<ShortlistModel>,
        registry: Arc<IntentRegistry>,
        client: Option<Arc<dyn RerankerClient>>,
    ) -> Result<Self, PipelineError> {
        Self::with_templates(config, model, registry, client, TemplateSet::bundled())
    }

    pub fn with_templates(
        config: PipelineConfig,
        model: Arc<ShortlistModel>,
        registry: Arc<IntentRegistry>,
        client: Option<Arc<dyn RerankerClient>>,
        templates: TemplateSet,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        model.check_registry(&registry)?;
        if model.config().normalize != config.normalize {
            return Err(PipelineError::NormalizeMismatch {
                model: model.config().normalize,
                config: config.normalize,
            });
        }
        if config.mode == Mode::Rerank {
            if client.is_none() {
                return Err(PipelineError::MissingClient);
            }
            templates.get(&config.template_id)?;
        }
        Ok(Self {
            config,
            model,
            registry,
            templates,
            client,
            retry: RetryPolicy::default(),
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn registry(&self) -> &IntentRegistry {
        &self.registry
    }

    pub fn model(&self) -> &ShortlistModel {
        &self.model
    }

    pub fn classify(&self, text: &str) -> Result<Decision, PipelineError> {
        match self.config.mode {
            Mode::Vector => self.gate_by_score(text, self.config.threshold),
            Mode::Rerank => self.gate_by_verdict(text),
        }
    }

    /// Vector-mode classification at an explicit threshold, whatever the
    /// configured mode. Used for threshold sweeps and what-if probes.
    pub fn classify_at(&self, text: &str, threshold: f64) -> Result<Decision, PipelineError> {
        check_threshold(threshold)?;
        self.gate_by_score(text, threshold)
    }

    fn gate_by_score(&self, text: &str, threshold: f64) -> Result<Decision, PipelineError> {
        let shortlist = self.model.rank(text, self.config.k)?;
        let confidence = shortlist.top_score();
        let (outcome, gate) = match shortlist.top() {
            None => (Outcome::OutOfScope, GateRule::EmptyInput),
            Some(top) if top.score > threshold => (
                Outcome::InScope {
                    intent_id: top.intent_id.clone(),
                },
                GateRule::ScoreAboveThreshold,
            ),
            Some(_) => (Outcome::OutOfScope, GateRule::ScoreAtOrBelowThreshold),
        };
        Ok(Decision {
            outcome,
            confidence: Some(confidence),
            trace: Trace {
                mode: Mode::Vector,
                normalized_text: shortlist.query_text,
                shortlist: shortlist.candidates,
                threshold: Some(threshold),
                prompt: None,
                verdict: None,
                gate,
            },
        })
    }

    fn gate_by_verdict(&self, text: &str) -> Result<Decision, PipelineError> {
        let client = self.client.as_deref().ok_or(PipelineError::MissingClient)?;
        let shortlist = self
            .model
            .rank(text, self.config.k.max(PROMPT_INTENT_OPTIONS))?;
        let prompt = build_prompt(
            text,
            &shortlist,
            &self.registry,
            &self.templates,
            &self.config.template_id,
        )?;
        let mut candidates = shortlist.candidates;
        candidates.truncate(self.config.k.max(PROMPT_INTENT_OPTIONS));

        // an empty shortlist leaves only the invalid option; nothing to ask
        let verdict = if prompt.intent_option_count() == 0 {
            None
        } else {
            Some(rerank(client, &prompt, &self.retry))
        };
        let (outcome, gate) = match &verdict {
            None => (Outcome::OutOfScope, GateRule::EmptyInput),
            Some(v) => match (v.kind, v.intent_id.as_deref()) {
                (VerdictKind::Intent, Some(id)) if self.registry.contains(id) => (
                    Outcome::InScope {
                        intent_id: id.to_owned(),
                    },
                    GateRule::VerdictIntent,
                ),
                (VerdictKind::Invalid, _) => (Outcome::OutOfScope, GateRule::VerdictInvalid),
                _ => (Outcome::OutOfScope, GateRule::VerdictUnparseable),
            },
        };
        Ok(Decision {
            outcome,
            confidence: None,
            trace: Trace {
                mode: Mode::Rerank,
                normalized_text: shortlist.query_text,
                shortlist: candidates,
                threshold: None,
                prompt: Some(prompt),
                verdict,
                gate,
            },
        })
    }
}

/// The predetermined response for `decision`, or `fallback` when out of scope.
pub fn respond<'a>(
    decision: &Decision,
    registry: &'a IntentRegistry,
    fallback: &'a str,
) -> Result<&'a str, PipelineError> {
    match &decision.outcome {
        Outcome::InScope { intent_id } => registry
            .get(intent_id)
            .map(|i| i.response.as_str())
            .ok_or_else(|| PipelineError::DanglingIntent(intent_id.clone())),
        Outcome::OutOfScope => Ok(fallback),
    }
}

/// A scripted reranker that answers the gold option whenever the gold
/// intent is on the prompt and the invalid option otherwise. Texts not in
/// `labeled` get the invalid option too.
pub fn oracle_client(
    config: &PipelineConfig,
    model: &ShortlistModel,
    registry: &IntentRegistry,
    templates: &TemplateSet,
    labeled: &Dataset,
) -> Result<ScriptedClient, PipelineError> {
    let mut client = ScriptedClient::new().with_default(registry.invalid_literal());
    for example in &labeled.examples {
        let shortlist = model.rank(&example.text, config.k.max(PROMPT_INTENT_OPTIONS))?;
        let prompt = build_prompt(
            &example.text,
            &shortlist,
            registry,
            templates,
            &config.template_id,
        )?;
        let answer = prompt
            .options
            .iter()
            .find(|o| o.intent_id().is_some() && o.intent_id() == example.intent_id.as_deref())
            .map(|o| o.position.to_string())
            .unwrap_or_else(|| registry.invalid_literal().to_owned());
        client.insert(&prompt.rendered, answer);
    }
    Ok(client)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Dataset, DatasetKind, Intent, UtteranceExample};
    use crate::rerank::ScriptedClient;
    use crate::shortlist::{fit, ShortlistConfig};
    use proptest::prelude::*;

    fn setup() -> (Arc<ShortlistModel>, Arc<IntentRegistry>) {
        let intents = [
            (
                "card_block",
                "Zablokovanie platobnej karty",
                "Kartu zablokujete v aplikácii.",
            ),
            (
                "card_order",
                "Objednanie novej karty",
                "Novú kartu objednáte v pobočke.",
            ),
            ("loan_info", "Informácie o úvere", "Úvery nájdete na webe."),
            ("pin_change", "Zmena PIN kódu", "PIN zmeníte v bankomate."),
        ];
        let registry = IntentRegistry::new(
            intents
                .iter()
                .map(|(id, d, r)| Intent {
                    id: id.to_string(),
                    description: d.to_string(),
                    response: r.to_string(),
                    examples: vec![],
                })
                .collect(),
        )
        .unwrap();
        let train = Dataset::new(
            "train",
            DatasetKind::Simple,
            [
                ("chcem zablokovať kartu", "card_block"),
                ("zablokujte mi kartu prosím", "card_block"),
                ("objednať novú kartu", "card_order"),
                ("potrebujem novú kartu", "card_order"),
                ("aký je úrok na úver", "loan_info"),
                ("chcem si zobrať úver", "loan_info"),
                ("ako zmením pin", "pin_change"),
                ("zmena pin kódu", "pin_change"),
            ]
            .iter()
            .map(|(t, i)| UtteranceExample::in_scope(*t, *i))
            .collect(),
        );
        let model = fit(&train, &registry, ShortlistConfig::default()).unwrap();
        (Arc::new(model), Arc::new(registry))
    }

    fn vector(threshold: f64) -> Pipeline {
        let (model, registry) = setup();
        Pipeline::new(
            PipelineConfig {
                threshold,
                ..PipelineConfig::default()
            },
            model,
            registry,
            None,
        )
        .unwrap()
    }

    fn reranking(client: ScriptedClient) -> Pipeline {
        let (model, registry) = setup();
        Pipeline::new(
            PipelineConfig {
                mode: Mode::Rerank,
                ..PipelineConfig::default()
            },
            model,
            registry,
            Some(Arc::new(client)),
        )
        .unwrap()
        .with_retry(RetryPolicy::no_retries())
    }

    #[test]
    fn threshold_zero_accepts_any_match() {
        let p = vector(0.0);
        let d = p.classify("zablokovať kartu").unwrap();
        assert_eq!(d.intent_id(), Some("card_block"));
        assert_eq!(d.trace.gate, GateRule::ScoreAboveThreshold);
        assert_eq!(d.trace.shortlist.len(), 3);
        assert!(d.confidence.unwrap() > 0.0);
        // nothing in common with the vocabulary: score 0 is not above 0
        let d = p.classify("qqqq").unwrap();
        assert!(!d.is_in_scope());
        assert_eq!(d.confidence, Some(0.0));
        assert_eq!(d.trace.gate, GateRule::ScoreAtOrBelowThreshold);
    }

    #[test]
    fn threshold_one_rejects_everything() {
        let p = vector(1.0);
        for text in [
            "zablokovať kartu",
            "chcem zablokovať kartu",
            "ako zmením pin",
            "x",
        ] {
            assert!(!p.classify(text).unwrap().is_in_scope(), "{text}");
        }
    }

    #[test]
    fn empty_input_is_out_of_scope() {
        let d = vector(0.0).classify("  ?! ").unwrap();
        assert_eq!(d.outcome, Outcome::OutOfScope);
        assert_eq!(d.trace.gate, GateRule::EmptyInput);
        assert!(d.trace.shortlist.is_empty());
    }

    #[test]
    fn config_checks() {
        let (model, registry) = setup();
        let bad = PipelineConfig {
            threshold: 1.5,
            ..PipelineConfig::default()
        };
        assert!(matches!(
            Pipeline::new(bad, model.clone(), registry.clone(), None),
            Err(PipelineError::Config(_))
        ));
        let rerank_without_client = PipelineConfig {
            mode: Mode::Rerank,
            ..PipelineConfig::default()
        };
        assert!(matches!(
            Pipeline::new(rerank_without_client, model.clone(), registry.clone(), None),
            Err(PipelineError::MissingClient)
        ));
        let mismatch = PipelineConfig {
            normalize: NormalizeConfig::none(),
            ..PipelineConfig::default()
        };
        assert!(matches!(
            Pipeline::new(mismatch, model.clone(), registry, None),
            Err(PipelineError::NormalizeMismatch { .. })
        ));
        let smaller = Arc::new(IntentRegistry::new(vec![registry_intent("card_block")]).unwrap());
        assert!(matches!(
            Pipeline::new(PipelineConfig::default(), model, smaller, None),
            Err(PipelineError::Shortlist(ShortlistError::RegistryMismatch(
                _
            )))
        ));
        assert!(vector(0.5).classify_at("x", -0.1).is_err());
    }

    fn registry_intent(id: &str) -> Intent {
        Intent {
            id: id.into(),
            description: "d".into(),
            response: "r".into(),
            examples: vec![],
        }
    }

    #[test]
    fn rerank_verdicts_drive_outcome() {
        let p = reranking(ScriptedClient::new().with_default("1"));
        let d = p.classify("zablokovať kartu").unwrap();
        assert_eq!(d.intent_id(), Some("card_block"));
        assert_eq!(d.confidence, None);
        assert_eq!(d.trace.gate, GateRule::VerdictIntent);
        let prompt = d.trace.prompt.as_ref().unwrap();
        assert_eq!(prompt.options.len(), 4);
        assert_eq!(d.trace.verdict.as_ref().unwrap().raw, "1");

        let p = reranking(ScriptedClient::new().with_default("invalid"));
        let d = p.classify("zablokovať kartu").unwrap();
        assert_eq!(d.outcome, Outcome::OutOfScope);
        assert_eq!(d.trace.gate, GateRule::VerdictInvalid);

        let p = reranking(ScriptedClient::new().with_default("asdf qwer"));
        let d = p.classify("zablokovať kartu").unwrap();
        assert_eq!(d.outcome, Outcome::OutOfScope);
        assert_eq!(d.trace.gate, GateRule::VerdictUnparseable);

        // an unscripted prompt is a client failure, which also gates out
        let d = reranking(ScriptedClient::new()).classify("kartu").unwrap();
        assert_eq!(d.trace.gate, GateRule::VerdictUnparseable);

        let d = reranking(ScriptedClient::new().with_default("1"))
            .classify("")
            .unwrap();
        assert_eq!(d.trace.gate, GateRule::EmptyInput);
        assert!(d.trace.verdict.is_none());
    }

    #[test]
    fn respond_is_verbatim() {
        let p = vector(0.0);
        let d = p.classify("zablokovať kartu").unwrap();
        let r = respond(&d, p.registry(), "Prepáčte, nerozumiem.").unwrap();
        assert_eq!(
            r.as_bytes(),
            p.registry().get("card_block").unwrap().response.as_bytes()
        );
        let d = vector(1.0).classify("zablokovať kartu").unwrap();
        assert_eq!(respond(&d, p.registry(), "fallback").unwrap(), "fallback");
        let mut dangling = d.clone();
        dangling.outcome = Outcome::InScope {
            intent_id: "ghost".into(),
        };
        assert!(matches!(
            respond(&dangling, p.registry(), "f"),
            Err(PipelineError::DanglingIntent(_))
        ));
    }

    #[test]
    fn classify_is_deterministic() {
        let p = reranking(ScriptedClient::new().with_default("2"));
        assert_eq!(
            p.classify("nová karta").unwrap(),
            p.classify("nová karta").unwrap()
        );
    }

    proptest! {
        #[test]
        fn raising_threshold_never_admits(text in "[a-zá-ž ]{0,25}", t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
            let p = vector(0.0);
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let at_lo = p.classify_at(&text, lo).unwrap();
            let at_hi = p.classify_at(&text, hi).unwrap();
            prop_assert!(!at_hi.is_in_scope() || at_lo.is_in_scope());
            if at_hi.is_in_scope() {
                prop_assert_eq!(at_hi.intent_id(), at_lo.intent_id());
            }
        }

        #[test]
        fn never_panics_on_any_text(text in any::<String>()) {
            let p = vector(0.4);
            let d = p.classify(&text).unwrap();
            if let Some(id) = d.intent_id() {
                prop_assert!(p.registry().contains(id));
            }
        }
    }
}
