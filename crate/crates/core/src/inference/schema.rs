//! Output schemas and validation of raw model text.

use serde::{Deserialize, Serialize};

use crate::classify::RelevanceLabel;
use crate::skills::{RequirementLevel, SkillCategory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaId {
    Relevance,
    Specialization,
    Skills,
    Summary,
    Judge,
}

impl SchemaId {
    pub const ALL: [SchemaId; 5] = [Self::Relevance, Self::Specialization, Self::Skills, Self::Summary, Self::Judge];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Relevance => "relevance",
            Self::Specialization => "specialization",
            Self::Skills => "skills",
            Self::Summary => "summary",
            Self::Judge => "judge",
        }
    }

    /// The JSON shape quoted back to the model in correction prompts.
    pub fn format_hint(self) -> &'static str {
        match self {
            Self::Relevance => r#"{"label": "strong" | "partial" | "none", "rationale": "<one sentence>"}"#,
            Self::Specialization => r#"{"aligned": true | false, "rationale": "<one sentence>"}"#,
            Self::Skills => {
                r#"{"skills": [{"skill": "<name as written>", "category": "therapeutic_modality" | "technical" | "soft" | "technology", "level": "required" | "preferred" | "unspecified"}]}"#
            }
            Self::Summary => r#"{"summary": "<condensed posting text>"}"#,
            Self::Judge => r#"{"verdict": "supported" | "unsupported", "rationale": "<one sentence>"}"#,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevancePayload {
    pub label: RelevanceLabel,
    #[serde(default)]
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecializationPayload {
    pub aligned: bool,
    #[serde(default)]
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedSkill {
    pub skill: String,
    pub category: SkillCategory,
    #[serde(default = "unspecified")]
    pub level: RequirementLevel,
}

fn unspecified() -> RequirementLevel {
    RequirementLevel::Unspecified
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillsPayload {
    pub skills: Vec<ExtractedSkill>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryPayload {
    pub summary: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Supported,
    Unsupported,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgePayload {
    pub verdict: Verdict,
    #[serde(default)]
    pub rationale: String,
}

/// Pull the first JSON object out of model text. Accepts bare JSON, fenced
/// code blocks, and objects surrounded by prose.
pub fn extract_json(text: &str) -> Option<serde_json::Value> {
    let trimmed = text.trim();
    if let Ok(v @ serde_json::Value::Object(_)) = serde_json::from_str(trimmed) {
        return Some(v);
    }
    let mut search = trimmed;
    while let Some(start) = search.find('{') {
        let candidate = &search[start..];
        let mut stream = serde_json::Deserializer::from_str(candidate).into_iter::<serde_json::Value>();
        if let Some(Ok(v @ serde_json::Value::Object(_))) = stream.next() {
            return Some(v);
        }
        search = &candidate[1..];
    }
    None
}

fn typed<T: serde::de::DeserializeOwned>(value: serde_json::Value) -> Result<T, String> {
    serde_json::from_value(value).map_err(|e| format!("does not match schema: {e}"))
}

fn canonical<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).expect("payload types serialize")
}

/// Validate raw text against `schema`, returning the canonical payload.
pub fn validate(schema: SchemaId, text: &str) -> Result<serde_json::Value, String> {
    let value = extract_json(text).ok_or_else(|| "response contains no JSON object".to_string())?;
    match schema {
        SchemaId::Relevance => {
            let p: RelevancePayload = typed(value)?;
            if p.label != RelevanceLabel::None && p.rationale.trim().is_empty() {
                return Err("rationale must be non-empty for strong or partial".into());
            }
            Ok(canonical(&p))
        }
        SchemaId::Specialization => Ok(canonical(&typed::<SpecializationPayload>(value)?)),
        SchemaId::Skills => {
            let p: SkillsPayload = typed(value)?;
            if p.skills.iter().any(|s| s.skill.trim().is_empty()) {
                return Err("skill names must be non-empty".into());
            }
            Ok(canonical(&p))
        }
        SchemaId::Summary => {
            let p: SummaryPayload = typed(value)?;
            if p.summary.trim().is_empty() {
                return Err("summary must be non-empty".into());
            }
            Ok(canonical(&p))
        }
        SchemaId::Judge => Ok(canonical(&typed::<JudgePayload>(value)?)),
    }
}
