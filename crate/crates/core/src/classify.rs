//! Relevance screening, per-specialization alignment, and condensed
//! summaries for review sheets.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::corpus::Posting;
use crate::inference::schema::{RelevancePayload, SpecializationPayload, SummaryPayload};
use crate::inference::{classify_call, InferenceClient, InferenceError, InferenceRequest, SchemaId};
use crate::prompts::{self, Template};
use crate::text::lookup_key;

const BUNDLED_CATALOG: &str = include_str!("../data/spec_catalog.json");

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("posting {0} has an empty description")]
    EmptyDescription(String),
    #[error("posting {posting_id}: {reason}")]
    PreconditionViolation { posting_id: String, reason: String },
    #[error("specialization catalog: {0}")]
    Catalog(String),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RelevanceLabel {
    Strong,
    Partial,
    None,
}

impl RelevanceLabel {
    pub const ALL: [RelevanceLabel; 3] = [Self::Strong, Self::Partial, Self::None];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Strong => "strong",
            Self::Partial => "partial",
            Self::None => "none",
        }
    }

    pub fn is_retained(self) -> bool {
        self != Self::None
    }
}

impl fmt::Display for RelevanceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelevanceLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match lookup_key(s).as_str() {
            "strong" | "strong alignment" => Ok(Self::Strong),
            "partial" | "partial alignment" => Ok(Self::Partial),
            "none" | "no alignment" | "no" => Ok(Self::None),
            _ => Err(format!("unknown relevance label `{s}`")),
        }
    }
}

/// Serialize as snake-case text; deserialize leniently through `FromStr`.
macro_rules! text_serde {
    ($ty:ty) => {
        impl serde::Serialize for $ty {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> serde::Deserialize<'de> for $ty {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = <String as serde::Deserialize>::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}
pub(crate) use text_serde;

text_serde!(RelevanceLabel);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Specialization {
    InterpersonalPractice,
    ChildrenYouthFamilies,
    ManagementLeadership,
    OlderAdults,
    ProgramEvaluationResearch,
    CommunityChange,
    PolicyPolitical,
    GlobalSocialWork,
}

impl Specialization {
    /// Canonical order, used for every table and matrix.
    pub const ALL: [Specialization; 8] = [
        Self::InterpersonalPractice,
        Self::ChildrenYouthFamilies,
        Self::ManagementLeadership,
        Self::OlderAdults,
        Self::ProgramEvaluationResearch,
        Self::CommunityChange,
        Self::PolicyPolitical,
        Self::GlobalSocialWork,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn key(self) -> &'static str {
        match self {
            Self::InterpersonalPractice => "interpersonal_practice",
            Self::ChildrenYouthFamilies => "children_youth_families",
            Self::ManagementLeadership => "management_leadership",
            Self::OlderAdults => "older_adults",
            Self::ProgramEvaluationResearch => "program_evaluation_research",
            Self::CommunityChange => "community_change",
            Self::PolicyPolitical => "policy_political",
            Self::GlobalSocialWork => "global_social_work",
        }
    }

    pub fn as_str(self) -> &'static str {
        self.key()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::InterpersonalPractice => "Interpersonal Practice",
            Self::ChildrenYouthFamilies => "Children, Youth, and Families",
            Self::ManagementLeadership => "Management and Leadership",
            Self::OlderAdults => "Older Adults",
            Self::ProgramEvaluationResearch => "Program Evaluation and Research",
            Self::CommunityChange => "Community Change",
            Self::PolicyPolitical => "Policy and Political",
            Self::GlobalSocialWork => "Global Social Work",
        }
    }

    pub fn abbrev(self) -> &'static str {
        match self {
            Self::InterpersonalPractice => "IP",
            Self::ChildrenYouthFamilies => "CYF",
            Self::ManagementLeadership => "ML",
            Self::OlderAdults => "OA",
            Self::ProgramEvaluationResearch => "PER",
            Self::CommunityChange => "CC",
            Self::PolicyPolitical => "PP",
            Self::GlobalSocialWork => "GSW",
        }
    }
}

impl fmt::Display for Specialization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Specialization {
    type Err = String;

    /// Accepts the snake-case key, the display name, or the abbreviation.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = lookup_key(s);
        Self::ALL
            .into_iter()
            .find(|sp| key == lookup_key(sp.key()) || key == lookup_key(sp.name()) || key == sp.abbrev().to_lowercase())
            .ok_or_else(|| format!("unknown specialization `{s}`"))
    }
}

text_serde!(Specialization);

/// Eight alignment flags in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct SpecFlags(pub [bool; 8]);

impl SpecFlags {
    pub fn get(&self, spec: Specialization) -> bool {
        self.0[spec.index()]
    }

    pub fn set(&mut self, spec: Specialization, value: bool) {
        self.0[spec.index()] = value;
    }

    pub fn any(&self) -> bool {
        self.0.iter().any(|&b| b)
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn aligned(&self) -> impl Iterator<Item = Specialization> + '_ {
        Specialization::ALL.into_iter().filter(|s| self.get(*s))
    }

    pub fn from_specs<I: IntoIterator<Item = Specialization>>(specs: I) -> Self {
        let mut flags = Self::default();
        for s in specs {
            flags.set(s, true);
        }
        flags
    }
}

impl Serialize for SpecFlags {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = s.serialize_map(Some(8))?;
        for spec in Specialization::ALL {
            map.serialize_entry(spec.key(), &self.get(spec))?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for SpecFlags {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let map = BTreeMap::<Specialization, bool>::deserialize(d)?;
        if map.len() != 8 {
            return Err(serde::de::Error::custom(format!("expected 8 specialization flags, found {}", map.len())));
        }
        let mut flags = SpecFlags::default();
        for (spec, value) in map {
            flags.set(spec, value);
        }
        Ok(flags)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecDefinition {
    pub spec: Specialization,
    pub core_indicators: Vec<String>,
    pub typical_settings: Vec<String>,
    pub decision_rules: Vec<String>,
}

/// The full set of eight definitions, one per specialization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecCatalog(Vec<SpecDefinition>);

impl SpecCatalog {
    pub fn new(defs: Vec<SpecDefinition>) -> Result<Self, ClassifyError> {
        for def in &defs {
            let lists = [&def.core_indicators, &def.typical_settings, &def.decision_rules];
            if lists.iter().any(|l| l.is_empty() || l.iter().all(|s| s.trim().is_empty())) {
                return Err(ClassifyError::Catalog(format!("{} has an empty list", def.spec.key())));
            }
        }
        for spec in Specialization::ALL {
            match defs.iter().filter(|d| d.spec == spec).count() {
                1 => {}
                0 => return Err(ClassifyError::Catalog(format!("missing definition for {}", spec.key()))),
                _ => return Err(ClassifyError::Catalog(format!("duplicate definition for {}", spec.key()))),
            }
        }
        Ok(Self(defs))
    }

    pub fn bundled() -> Self {
        let defs = serde_json::from_str(BUNDLED_CATALOG).expect("bundled catalog parses");
        Self::new(defs).expect("bundled catalog is complete")
    }

    pub fn load(path: &Path) -> Result<Self, ClassifyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ClassifyError::Catalog(format!("cannot read {}: {e}", path.display())))?;
        let defs = serde_json::from_str(&text)
            .map_err(|e| ClassifyError::Catalog(format!("invalid catalog {}: {e}", path.display())))?;
        Self::new(defs)
    }

    pub fn definitions(&self) -> &[SpecDefinition] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevanceResult {
    pub posting_id: String,
    pub label: RelevanceLabel,
    pub rationale: String,
    pub model_id: String,
    pub prompt_hash: String,
    pub attempts: u32,
    /// No schema-valid answer; `label` is `None` and `diagnostic` says why.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unclassifiable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl RelevanceResult {
    pub fn is_retained(&self) -> bool {
        !self.unclassifiable && self.label.is_retained()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecAlignment {
    pub posting_id: String,
    pub flags: SpecFlags,
    /// Rationales for true flags.
    pub rationales: BTreeMap<Specialization, String>,
    pub model_id: String,
    pub prompt_hash: String,
    /// Specializations whose call produced no valid answer (recorded false).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unclassifiable: Vec<Specialization>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CondensedSummary {
    pub posting_id: String,
    pub summary: String,
    pub model_id: String,
    pub prompt_hash: String,
}

fn require_description(posting: &Posting) -> Result<(), ClassifyError> {
    if posting.description.trim().is_empty() {
        return Err(ClassifyError::EmptyDescription(posting.id.clone()));
    }
    Ok(())
}

fn render(
    template: Template,
    schema: SchemaId,
    posting: &Posting,
    client: &InferenceClient,
    extra: &[(&str, &str)],
) -> String {
    let block = prompts::posting_block(posting, client.max_prompt_chars);
    let mut vars = vec![("posting", block.as_str()), ("schema", schema.format_hint())];
    vars.extend_from_slice(extra);
    template.render(&vars)
}

fn payload<T: serde::de::DeserializeOwned>(value: serde_json::Value) -> T {
    serde_json::from_value(value).expect("validated payloads deserialize")
}

pub fn screen_relevance(posting: &Posting, client: &InferenceClient) -> Result<RelevanceResult, ClassifyError> {
    require_description(posting)?;
    let prompt = render(prompts::RELEVANCE, SchemaId::Relevance, posting, client, &[]);
    let req = InferenceRequest::new(prompt, SchemaId::Relevance, format!("{}:relevance", posting.id))?;
    let base = RelevanceResult {
        posting_id: posting.id.clone(),
        label: RelevanceLabel::None,
        rationale: String::new(),
        model_id: client.model_id().to_string(),
        prompt_hash: prompts::RELEVANCE.hash(),
        attempts: 0,
        unclassifiable: false,
        diagnostic: None,
    };
    match classify_call(&req, client) {
        Ok(out) => {
            let p: RelevancePayload = payload(out.payload);
            Ok(RelevanceResult { label: p.label, rationale: p.rationale, attempts: out.attempts, ..base })
        }
        Err(InferenceError::Unclassifiable { attempts, reason, .. }) => {
            log::warn!("{}: relevance unclassifiable: {reason}", posting.id);
            Ok(RelevanceResult { attempts, unclassifiable: true, diagnostic: Some(reason), ..base })
        }
        Err(e) => Err(e.into()),
    }
}

fn bullet_list(items: &[String]) -> String {
    items.iter().map(|s| format!("- {s}")).collect::<Vec<_>>().join("\n")
}

pub fn classify_specializations(
    posting: &Posting,
    relevance: &RelevanceResult,
    catalog: &SpecCatalog,
    client: &InferenceClient,
) -> Result<SpecAlignment, ClassifyError> {
    if relevance.posting_id != posting.id {
        return Err(ClassifyError::PreconditionViolation {
            posting_id: posting.id.clone(),
            reason: format!("relevance record belongs to {}", relevance.posting_id),
        });
    }
    if !relevance.is_retained() {
        return Err(ClassifyError::PreconditionViolation {
            posting_id: posting.id.clone(),
            reason: "relevance label is none; only strong or partial postings are classified".into(),
        });
    }
    require_description(posting)?;

    let mut alignment = SpecAlignment {
        posting_id: posting.id.clone(),
        flags: SpecFlags::default(),
        rationales: BTreeMap::new(),
        model_id: client.model_id().to_string(),
        prompt_hash: prompts::SPECIALIZATION.hash(),
        unclassifiable: Vec::new(),
    };
    for def in catalog.definitions() {
        let spec = def.spec;
        let core = bullet_list(&def.core_indicators);
        let settings = bullet_list(&def.typical_settings);
        let rules = bullet_list(&def.decision_rules);
        let prompt = render(
            prompts::SPECIALIZATION,
            SchemaId::Specialization,
            posting,
            client,
            &[
                ("spec_name", spec.name()),
                ("spec_key", spec.key()),
                ("core_indicators", &core),
                ("typical_settings", &settings),
                ("decision_rules", &rules),
            ],
        );
        let req = InferenceRequest::new(
            prompt,
            SchemaId::Specialization,
            format!("{}:specialization:{}", posting.id, spec.key()),
        )?;
        match classify_call(&req, client) {
            Ok(out) => {
                let p: SpecializationPayload = payload(out.payload);
                alignment.flags.set(spec, p.aligned);
                if p.aligned {
                    alignment.rationales.insert(spec, p.rationale);
                }
            }
            Err(InferenceError::Unclassifiable { reason, .. }) => {
                log::warn!("{}: {} unclassifiable: {reason}", posting.id, spec.key());
                alignment.unclassifiable.push(spec);
            }
            Err(e) => return Err(e.into()),
        }
    }
    alignment.unclassifiable.sort();
    Ok(alignment)
}

pub fn condense(posting: &Posting, client: &InferenceClient) -> Result<CondensedSummary, ClassifyError> {
    require_description(posting)?;
    let prompt = render(prompts::SUMMARY, SchemaId::Summary, posting, client, &[]);
    let req = InferenceRequest::new(prompt, SchemaId::Summary, format!("{}:summary", posting.id))?;
    let out = classify_call(&req, client)?;
    let p: SummaryPayload = payload(out.payload);
    Ok(CondensedSummary {
        posting_id: posting.id.clone(),
        summary: p.summary,
        model_id: out.model_id,
        prompt_hash: prompts::SUMMARY.hash(),
    })
}
