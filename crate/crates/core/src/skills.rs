//! Skill extraction and alias-map normalization.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::text_serde;
use crate::corpus::Posting;
use crate::inference::schema::SkillsPayload;
use crate::inference::{classify_call, InferenceClient, InferenceError, InferenceRequest, SchemaId};
use crate::prompts;
use crate::text::{collapse_whitespace, lookup_key, title_case};

const BUNDLED_ALIASES: &str = include_str!("../data/alias_map.json");

#[derive(Debug, Error)]
pub enum SkillsError {
    #[error("alias key `{key}` maps to both `{first}` and `{second}`")]
    DuplicateAliasKey { key: String, first: String, second: String },
    #[error("cannot read {path}: {source}")]
    FileUnreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid alias map {path}: {message}")]
    InvalidAliasMap { path: PathBuf, message: String },
    #[error("posting {0} has an empty description")]
    EmptyDescription(String),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SkillCategory {
    TherapeuticModality,
    Technical,
    Soft,
    Technology,
}

impl SkillCategory {
    pub const ALL: [SkillCategory; 4] = [Self::TherapeuticModality, Self::Technical, Self::Soft, Self::Technology];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::TherapeuticModality => "therapeutic_modality",
            Self::Technical => "technical",
            Self::Soft => "soft",
            Self::Technology => "technology",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::TherapeuticModality => "Therapeutic Modality",
            Self::Technical => "Technical",
            Self::Soft => "Soft",
            Self::Technology => "Technology",
        }
    }
}

impl fmt::Display for SkillCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SkillCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match lookup_key(s).as_str() {
            "therapeutic modality" | "therapeutic modalities" | "modality" | "therapeutic" => {
                Ok(Self::TherapeuticModality)
            }
            "technical" | "technical skill" | "technical skills" => Ok(Self::Technical),
            "soft" | "soft skill" | "soft skills" => Ok(Self::Soft),
            "technology" | "technology skill" | "technology skills" | "tech" => Ok(Self::Technology),
            _ => Err(format!("unknown skill category `{s}`")),
        }
    }
}

text_serde!(SkillCategory);

/// Requirement language attached to a mention. Ordered by strength:
/// `Required > Preferred > Unspecified`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RequirementLevel {
    Required,
    Preferred,
    Unspecified,
}

impl RequirementLevel {
    pub const ALL: [RequirementLevel; 3] = [Self::Required, Self::Preferred, Self::Unspecified];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Required => "required",
            Self::Preferred => "preferred",
            Self::Unspecified => "unspecified",
        }
    }

    fn strength(self) -> u8 {
        match self {
            Self::Required => 2,
            Self::Preferred => 1,
            Self::Unspecified => 0,
        }
    }
}

impl PartialOrd for RequirementLevel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for RequirementLevel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.strength().cmp(&other.strength())
    }
}

impl FromStr for RequirementLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match lookup_key(s).as_str() {
            "required" | "require" | "requirement" | "must" | "mandatory" => Ok(Self::Required),
            "preferred" | "prefer" | "desired" | "plus" | "nice to have" => Ok(Self::Preferred),
            "unspecified" | "unknown" | "none" | "" => Ok(Self::Unspecified),
            _ => Err(format!("unknown requirement level `{s}`")),
        }
    }
}

text_serde!(RequirementLevel);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillMention {
    pub posting_id: String,
    pub surface: String,
    pub category: SkillCategory,
    pub level: RequirementLevel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasEntry {
    pub canonical: String,
    pub category: SkillCategory,
    #[serde(default)]
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Target {
    canonical: String,
    /// Categories listed for the canonical, in file order.
    categories: Vec<SkillCategory>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AliasMap {
    entries: Vec<AliasEntry>,
    index: BTreeMap<String, Target>,
}

impl AliasMap {
    /// Build the lookup index. Each canonical is added to its own aliases.
    /// A canonical may appear under several categories; a key shared by two
    /// different canonicals is an error.
    pub fn new(entries: Vec<AliasEntry>) -> Result<Self, SkillsError> {
        let mut index: BTreeMap<String, Target> = BTreeMap::new();
        for entry in &entries {
            let keys = std::iter::once(&entry.canonical).chain(&entry.aliases).map(|a| lookup_key(a));
            for key in keys.filter(|k| !k.is_empty()) {
                match index.entry(key) {
                    Entry::Vacant(slot) => {
                        slot.insert(Target { canonical: entry.canonical.clone(), categories: vec![entry.category] });
                    }
                    Entry::Occupied(mut slot) => {
                        let key = slot.key().clone();
                        let target = slot.get_mut();
                        if target.canonical != entry.canonical {
                            return Err(SkillsError::DuplicateAliasKey {
                                key,
                                first: target.canonical.clone(),
                                second: entry.canonical.clone(),
                            });
                        }
                        if !target.categories.contains(&entry.category) {
                            target.categories.push(entry.category);
                        }
                    }
                }
            }
        }
        Ok(Self { entries, index })
    }

    pub fn bundled() -> Self {
        let entries = serde_json::from_str(BUNDLED_ALIASES).expect("bundled alias map parses");
        Self::new(entries).expect("bundled alias map is consistent")
    }

    pub fn entries(&self) -> &[AliasEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Canonical name and category for `surface` as a `category` mention.
    /// The mention's category is kept when the canonical lists it.
    pub fn lookup(&self, surface: &str, category: SkillCategory) -> Option<(&str, SkillCategory)> {
        let target = self.index.get(&lookup_key(surface))?;
        let cat = if target.categories.contains(&category) { category } else { target.categories[0] };
        Some((&target.canonical, cat))
    }
}

/// Read an alias map. A file holding only whitespace is an empty map.
pub fn load_alias_map(path: &Path) -> Result<AliasMap, SkillsError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| SkillsError::FileUnreadable { path: path.to_path_buf(), source })?;
    if text.trim().is_empty() {
        return Ok(AliasMap::default());
    }
    let entries = serde_json::from_str(&text)
        .map_err(|e| SkillsError::InvalidAliasMap { path: path.to_path_buf(), message: e.to_string() })?;
    AliasMap::new(entries)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedSkill {
    pub posting_id: String,
    pub canonical: String,
    pub category: SkillCategory,
    pub level: RequirementLevel,
    /// False when the mention had no alias-map entry and was passed through.
    pub is_canonical: bool,
    /// Distinct surface forms that collapsed into this record.
    pub surfaces: Vec<String>,
    pub mention_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillExtraction {
    pub posting_id: String,
    pub mentions: Vec<SkillMention>,
    pub model_id: String,
    pub prompt_hash: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unclassifiable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

pub fn extract_skills(posting: &Posting, client: &InferenceClient) -> Result<SkillExtraction, SkillsError> {
    if posting.description.trim().is_empty() {
        return Err(SkillsError::EmptyDescription(posting.id.clone()));
    }
    let block = prompts::posting_block(posting, client.max_prompt_chars);
    let prompt = prompts::SKILLS.render(&[("posting", &block), ("schema", SchemaId::Skills.format_hint())]);
    let req = InferenceRequest::new(prompt, SchemaId::Skills, format!("{}:skills", posting.id))?;
    let mut out = SkillExtraction {
        posting_id: posting.id.clone(),
        mentions: Vec::new(),
        model_id: client.model_id().to_string(),
        prompt_hash: prompts::SKILLS.hash(),
        unclassifiable: false,
        diagnostic: None,
    };
    match classify_call(&req, client) {
        Ok(result) => {
            let payload: SkillsPayload = serde_json::from_value(result.payload).expect("validated payload");
            out.mentions = payload
                .skills
                .into_iter()
                .map(|s| SkillMention {
                    posting_id: posting.id.clone(),
                    surface: s.skill.trim().to_string(),
                    category: s.category,
                    level: s.level,
                })
                .collect();
        }
        Err(InferenceError::Unclassifiable { reason, .. }) => {
            log::warn!("{}: skills unclassifiable: {reason}", posting.id);
            out.unclassifiable = true;
            out.diagnostic = Some(reason);
        }
        Err(e) => return Err(e.into()),
    }
    Ok(out)
}

/// Canonicalize mentions and collapse per-posting duplicates of
/// (canonical, category), keeping the strongest level. Output is sorted by
/// posting id, then canonical, then category.
pub fn normalize_skills(mentions: &[SkillMention], map: &AliasMap) -> Vec<NormalizedSkill> {
    let mut merged: BTreeMap<(String, String, SkillCategory), NormalizedSkill> = BTreeMap::new();
    let mut surfaces: BTreeMap<(String, String, SkillCategory), BTreeSet<String>> = BTreeMap::new();
    for m in mentions {
        let (canonical, category, is_canonical) = match map.lookup(&m.surface, m.category) {
            Some((c, cat)) => (c.to_string(), cat, true),
            None => {
                let key = lookup_key(&m.surface);
                let name = if key.is_empty() { collapse_whitespace(&m.surface) } else { title_case(&key) };
                (name, m.category, false)
            }
        };
        let id = (m.posting_id.clone(), canonical.clone(), category);
        surfaces.entry(id.clone()).or_default().insert(m.surface.clone());
        merged
            .entry(id)
            .and_modify(|n| {
                n.level = n.level.max(m.level);
                n.mention_count += 1;
            })
            .or_insert(NormalizedSkill {
                posting_id: m.posting_id.clone(),
                canonical,
                category,
                level: m.level,
                is_canonical,
                surfaces: Vec::new(),
                mention_count: 1,
            });
    }
    merged
        .into_iter()
        .map(|(id, mut n)| {
            n.surfaces = surfaces.remove(&id).unwrap_or_default().into_iter().collect();
            n
        })
        .collect()
}

/// View normalized records as mentions again (surface = canonical).
pub fn as_mentions(skills: &[NormalizedSkill]) -> Vec<SkillMention> {
    skills
        .iter()
        .map(|s| SkillMention {
            posting_id: s.posting_id.clone(),
            surface: s.canonical.clone(),
            category: s.category,
            level: s.level,
        })
        .collect()
}
