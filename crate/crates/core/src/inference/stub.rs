//! Deterministic keyword-rule backend.
//!
//! The stub reads the posting text between `<posting>` and `</posting>` in
//! the prompt and answers every schema from lowercased phrase matches:
//!
//! * relevance: a `strong` phrase wins over `partial`, which wins over
//!   `none`; no match at all is `none`.
//! * specialization: aligned when any phrase listed for the target
//!   specialization occurs.
//! * skills: leftmost-longest phrase matches; every rule whose phrase covers
//!   the chosen span contributes a mention. The requirement level comes from
//!   the nearest level marker in the same sentence (ties go to required).
//! * summary: listed sections (`Benefits:` and the like) are cut; postings
//!   under `min_words` words are returned unchanged.
//! * judge: supported when the skill or any of its surface forms occurs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schema::{
    ExtractedSkill, JudgePayload, RelevancePayload, SchemaId, SkillsPayload, SpecializationPayload, SummaryPayload,
    Verdict,
};
use super::{Completion, InferenceError, InferenceRequest, StructuredOutput, TransportError};
use crate::classify::{RelevanceLabel, Specialization};
use crate::skills::{RequirementLevel, SkillCategory};
use crate::text::{self, Phrase, Token};

const BUNDLED_RULEBOOK: &str = include_str!("../../data/rulebook.json");

pub const POSTING_OPEN: &str = "<posting>";
pub const POSTING_CLOSE: &str = "</posting>";
pub const TARGET_MARKER: &str = "Target specialization:";
pub const SKILL_MARKER: &str = "Skill:";
pub const SURFACES_MARKER: &str = "Surface forms:";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevanceRules {
    pub strong: Vec<String>,
    pub partial: Vec<String>,
    pub none: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillRule {
    pub category: SkillCategory,
    pub patterns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelMarkers {
    pub required: Vec<String>,
    pub preferred: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryRules {
    pub strip_sections: Vec<String>,
    pub section_headers: Vec<String>,
    pub min_words: usize,
}

/// Serialized rule tables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RulebookSpec {
    pub relevance: RelevanceRules,
    pub specializations: BTreeMap<Specialization, Vec<String>>,
    pub skills: Vec<SkillRule>,
    pub level_markers: LevelMarkers,
    pub summary: SummaryRules,
}

#[derive(Debug, Clone)]
struct Compiled {
    strong: Vec<(String, Phrase)>,
    partial: Vec<(String, Phrase)>,
    none: Vec<(String, Phrase)>,
    specs: BTreeMap<Specialization, Vec<(String, Phrase)>>,
    skills: Vec<(SkillCategory, Phrase)>,
    required: Vec<Phrase>,
    preferred: Vec<Phrase>,
}

fn compile(patterns: &[String]) -> Vec<(String, Phrase)> {
    patterns.iter().map(|p| (p.clone(), Phrase::new(p))).filter(|(_, ph)| !ph.is_empty()).collect()
}

#[derive(Debug, Clone)]
pub struct Rulebook {
    spec: RulebookSpec,
    compiled: Compiled,
}

impl Rulebook {
    pub fn from_spec(spec: RulebookSpec) -> Result<Self, InferenceError> {
        if let Some(missing) = Specialization::ALL.iter().find(|s| !spec.specializations.contains_key(s)) {
            return Err(InferenceError::Config(format!(
                "rulebook has no phrases for specialization `{}`",
                missing.key()
            )));
        }
        let compiled = Compiled {
            strong: compile(&spec.relevance.strong),
            partial: compile(&spec.relevance.partial),
            none: compile(&spec.relevance.none),
            specs: spec.specializations.iter().map(|(k, v)| (*k, compile(v))).collect(),
            skills: spec
                .skills
                .iter()
                .flat_map(|r| r.patterns.iter().map(move |p| (r.category, Phrase::new(p))))
                .filter(|(_, ph)| !ph.is_empty())
                .collect(),
            required: spec.level_markers.required.iter().map(|p| Phrase::new(p)).collect(),
            preferred: spec.level_markers.preferred.iter().map(|p| Phrase::new(p)).collect(),
        };
        Ok(Self { spec, compiled })
    }

    pub fn bundled() -> Self {
        let spec: RulebookSpec = serde_json::from_str(BUNDLED_RULEBOOK).expect("bundled rulebook parses");
        Self::from_spec(spec).expect("bundled rulebook is complete")
    }

    pub fn load(path: &Path) -> Result<Self, InferenceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| InferenceError::Config(format!("cannot read rulebook {}: {e}", path.display())))?;
        let spec: RulebookSpec = serde_json::from_str(&text)
            .map_err(|e| InferenceError::Config(format!("invalid rulebook {}: {e}", path.display())))?;
        Self::from_spec(spec)
    }

    pub fn spec(&self) -> &RulebookSpec {
        &self.spec
    }

    pub fn relevance(&self, posting: &str) -> RelevancePayload {
        let tokens = text::tokenize(posting);
        let first_hit =
            |rules: &[(String, Phrase)]| rules.iter().find(|(_, ph)| ph.occurs_in(&tokens)).map(|(p, _)| p.clone());
        if let Some(p) = first_hit(&self.compiled.strong) {
            return RelevancePayload {
                label: RelevanceLabel::Strong,
                rationale: format!("mentions MSW-level credential or practice: \"{p}\""),
            };
        }
        if let Some(p) = first_hit(&self.compiled.partial) {
            return RelevancePayload {
                label: RelevanceLabel::Partial,
                rationale: format!("adjacent human-services role: \"{p}\""),
            };
        }
        let rationale = match first_hit(&self.compiled.none) {
            Some(p) => format!("credential from another profession: \"{p}\""),
            None => "no social work credential or human-services indicator found".to_string(),
        };
        RelevancePayload { label: RelevanceLabel::None, rationale }
    }

    pub fn specialization(&self, spec: Specialization, posting: &str) -> SpecializationPayload {
        let tokens = text::tokenize(posting);
        let hit = self.compiled.specs[&spec].iter().find(|(_, ph)| ph.occurs_in(&tokens));
        match hit {
            Some((p, _)) => {
                SpecializationPayload { aligned: true, rationale: format!("{} indicator: \"{p}\"", spec.name()) }
            }
            None => SpecializationPayload { aligned: false, rationale: format!("no {} indicator", spec.name()) },
        }
    }

    fn level_near(&self, tokens: &[Token], start: usize, end: usize) -> RequirementLevel {
        let sentence = tokens[start].sentence;
        let distance = |i: usize| if i < start { start - i } else { i + 1 - end };
        let nearest = |markers: &[Phrase]| {
            markers
                .iter()
                .flat_map(|m| m.find_all(tokens))
                .filter(|&i| tokens[i].sentence == sentence && (i < start || i >= end))
                .map(distance)
                .min()
        };
        match (nearest(&self.compiled.required), nearest(&self.compiled.preferred)) {
            (Some(r), Some(p)) if p < r => RequirementLevel::Preferred,
            (Some(_), _) => RequirementLevel::Required,
            (None, Some(_)) => RequirementLevel::Preferred,
            (None, None) => RequirementLevel::Unspecified,
        }
    }

    pub fn skills(&self, posting: &str) -> SkillsPayload {
        let tokens = text::tokenize(posting);
        // (start, len, category)
        let mut hits: Vec<(usize, usize, SkillCategory)> = Vec::new();
        for (category, phrase) in &self.compiled.skills {
            for start in phrase.find_all(&tokens) {
                hits.push((start, phrase.len(), *category));
            }
        }
        hits.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
        hits.dedup();

        let mut skills = Vec::new();
        let mut covered_until = 0usize;
        let mut i = 0;
        while i < hits.len() {
            let (start, len, _) = hits[i];
            if start < covered_until {
                i += 1;
                continue;
            }
            let end = start + len;
            let surface = posting[tokens[start].start..tokens[end - 1].end].to_string();
            let level = self.level_near(&tokens, start, end);
            while i < hits.len() && hits[i].0 == start && hits[i].1 == len {
                skills.push(ExtractedSkill { skill: surface.clone(), category: hits[i].2, level });
                i += 1;
            }
            covered_until = end;
        }
        SkillsPayload { skills }
    }

    pub fn summary(&self, posting: &str) -> SummaryPayload {
        let rules = &self.spec.summary;
        let cleaned = text::collapse_whitespace(posting);
        let word_count = cleaned.split(' ').filter(|w| !w.is_empty()).count();
        if word_count < rules.min_words {
            return SummaryPayload { summary: cleaned };
        }
        let lower = cleaned.to_ascii_lowercase();
        // (start, end, strip)
        let mut marks: Vec<(usize, usize, bool)> = Vec::new();
        let headers =
            rules.strip_sections.iter().map(|h| (h, true)).chain(rules.section_headers.iter().map(|h| (h, false)));
        for (header, strip) in headers {
            let needle = format!("{}:", header.to_ascii_lowercase());
            let mut from = 0;
            while let Some(pos) = lower[from..].find(&needle) {
                let at = from + pos;
                let boundary = lower[..at].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
                if boundary {
                    marks.push((at, at + needle.len(), strip));
                }
                from = at + needle.len();
            }
        }
        // Longer headers first at equal starts; drop headers nested inside
        // another ("to apply:" inside "how to apply:").
        marks.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
        let mut sections: Vec<(usize, bool)> = Vec::new();
        let mut last_end = 0;
        for (start, end, strip) in marks {
            if start >= last_end {
                sections.push((start, strip));
                last_end = end;
            }
        }

        let mut kept = String::new();
        let mut cursor = 0usize;
        let mut stripping = false;
        for (pos, strip) in sections {
            if !stripping {
                kept.push_str(&cleaned[cursor..pos]);
            }
            cursor = pos;
            stripping = strip;
        }
        if !stripping {
            kept.push_str(&cleaned[cursor..]);
        }
        let summary = text::collapse_whitespace(&kept);
        if summary.is_empty() {
            let head: Vec<&str> = cleaned.split(' ').take(rules.min_words).collect();
            return SummaryPayload { summary: head.join(" ") };
        }
        SummaryPayload { summary }
    }

    pub fn judge(&self, names: &[String], posting: &str) -> JudgePayload {
        let tokens = text::tokenize(posting);
        match names.iter().find(|n| Phrase::new(n).occurs_in(&tokens)) {
            Some(n) => {
                JudgePayload { verdict: Verdict::Supported, rationale: format!("\"{n}\" appears in the posting") }
            }
            None => JudgePayload {
                verdict: Verdict::Unsupported,
                rationale: "no surface form appears in the posting".into(),
            },
        }
    }

    /// Answer `schema` for `prompt`, as compact JSON.
    pub fn respond(&self, schema: SchemaId, prompt: &str) -> String {
        let posting = posting_text(prompt);
        let header = &prompt[..prompt.find(POSTING_OPEN).unwrap_or(prompt.len())];
        let json = match schema {
            SchemaId::Relevance => serde_json::to_string(&self.relevance(posting)),
            SchemaId::Specialization => match target_specialization(header) {
                Some(spec) => serde_json::to_string(&self.specialization(spec, posting)),
                None => serde_json::to_string(&SpecializationPayload {
                    aligned: false,
                    rationale: "no target specialization named in prompt".into(),
                }),
            },
            SchemaId::Skills => serde_json::to_string(&self.skills(posting)),
            SchemaId::Summary => serde_json::to_string(&self.summary(description_part(posting))),
            SchemaId::Judge => serde_json::to_string(&self.judge(&judge_names(header), posting)),
        };
        json.expect("payloads serialize")
    }
}

/// Text between the posting markers, or the whole prompt without them.
pub fn posting_text(prompt: &str) -> &str {
    match prompt.find(POSTING_OPEN) {
        Some(open) => {
            let body = &prompt[open + POSTING_OPEN.len()..];
            match body.find(POSTING_CLOSE) {
                Some(close) => &body[..close],
                None => body,
            }
        }
        None => prompt,
    }
}

/// The description under a `Title:`/`Employer:`/`Location:` header block.
fn description_part(posting: &str) -> &str {
    let trimmed = posting.trim_start();
    if trimmed.starts_with("Title:") {
        if let Some(pos) = trimmed.find("\n\n") {
            return &trimmed[pos + 2..];
        }
    }
    trimmed
}

fn marker_line<'a>(header: &'a str, marker: &str) -> Option<&'a str> {
    header.lines().find_map(|l| l.trim().strip_prefix(marker)).map(str::trim)
}

fn target_specialization(header: &str) -> Option<Specialization> {
    let line = marker_line(header, TARGET_MARKER)?;
    let key = line.rsplit_once('[')?.1.trim_end_matches(']').trim();
    key.parse().ok()
}

fn judge_names(header: &str) -> Vec<String> {
    let mut names: Vec<String> = marker_line(header, SKILL_MARKER).map(str::to_string).into_iter().collect();
    if let Some(line) = marker_line(header, SURFACES_MARKER) {
        names.extend(line.split('|').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string));
    }
    names
}

/// Complete `req` directly from `rules`; always schema-valid on the first try.
pub fn stub_complete(req: &InferenceRequest, rules: &Rulebook, model_id: &str) -> StructuredOutput {
    let raw_text = rules.respond(req.schema_id, &req.prompt);
    let payload = super::schema::validate(req.schema_id, &raw_text).expect("stub output is schema-valid");
    StructuredOutput { schema_id: req.schema_id, payload, raw_text, attempts: 1, model_id: model_id.to_string() }
}

pub struct StubBackend {
    rules: Rulebook,
    model_id: String,
}

impl StubBackend {
    pub fn new(rules: Rulebook, model_id: &str) -> Self {
        Self { rules, model_id: model_id.to_string() }
    }

    pub fn rules(&self) -> &Rulebook {
        &self.rules
    }
}

impl Completion for StubBackend {
    fn complete(&self, request: &InferenceRequest, prompt: &str) -> Result<String, TransportError> {
        Ok(self.rules.respond(request.schema_id, prompt))
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }
}
