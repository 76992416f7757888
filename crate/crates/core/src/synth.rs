//! Seeded synthetic postings with planted labels and skills, built so the
//! bundled stub rulebook recovers every planted fact.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{RelevanceLabel, Specialization};
use crate::corpus::{self, Platform, RawPosting};
use crate::inference::Rulebook;
use crate::skills::{normalize_skills, AliasMap, RequirementLevel, SkillCategory, SkillMention};

pub const SEARCH_TERMS: &str = include_str!("../data/search_terms.txt");

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic profile: {0}")]
    InvalidProfile(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(msg: impl Into<String>) -> SynthError {
    SynthError::InvalidProfile(msg.into())
}

/// The bundled search-term list, one term per line.
pub fn search_terms() -> Vec<&'static str> {
    SEARCH_TERMS.lines().map(str::trim).filter(|l| !l.is_empty()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierMix {
    pub strong: f64,
    pub partial: f64,
    pub none: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierSentences {
    pub strong: Vec<String>,
    pub partial: Vec<String>,
    pub none: Vec<String>,
}

impl TierSentences {
    fn of(&self, tier: RelevanceLabel) -> &[String] {
        match tier {
            RelevanceLabel::Strong => &self.strong,
            RelevanceLabel::Partial => &self.partial,
            RelevanceLabel::None => &self.none,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSkill {
    /// Text written into the posting.
    pub surface: String,
    /// The canonical name that extraction plus normalization must produce.
    pub canonical: String,
    /// Planting probability for any retained posting.
    #[serde(default)]
    pub base_rate: f64,
    /// Extra planting probability per aligned specialization.
    #[serde(default)]
    pub spec_rates: BTreeMap<Specialization, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelMix {
    pub required: f64,
    pub preferred: f64,
    pub unspecified: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelTemplates {
    pub required: String,
    pub preferred: String,
    pub unspecified: String,
}

impl LevelTemplates {
    fn of(&self, level: RequirementLevel) -> &str {
        match level {
            RequirementLevel::Required => &self.required,
            RequirementLevel::Preferred => &self.preferred,
            RequirementLevel::Unspecified => &self.unspecified,
        }
    }

    fn render(&self, level: RequirementLevel, surface: &str) -> String {
        self.of(level).replace("{skill}", surface)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthProfile {
    pub tier_mix: TierMix,
    pub tier_sentences: TierSentences,
    pub spec_rates: BTreeMap<Specialization, f64>,
    pub spec_sentences: BTreeMap<Specialization, Vec<String>>,
    pub skills: Vec<PlantedSkill>,
    pub level_mix: LevelMix,
    pub level_templates: LevelTemplates,
    pub filler: Vec<String>,
    pub filler_range: [usize; 2],
    pub titles: Vec<String>,
    pub employers: Vec<String>,
    pub locations: Vec<String>,
    pub platforms: Vec<String>,
    pub collected_from: NaiveDate,
    pub collection_days: u32,
}

impl SynthProfile {
    pub fn bundled() -> Self {
        serde_json::from_str(include_str!("../data/synth_profile.json")).expect("bundled profile parses")
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let text = fs::read_to_string(path).map_err(|source| SynthError::Io { path: path.to_path_buf(), source })?;
        serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
    }

    fn spec_rate(&self, spec: Specialization) -> f64 {
        self.spec_rates.get(&spec).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedMention {
    pub canonical: String,
    pub categories: Vec<SkillCategory>,
    pub level: RequirementLevel,
}

/// Everything planted into one posting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub posting_id: String,
    pub tier: RelevanceLabel,
    pub specs: Vec<Specialization>,
    /// Sorted by canonical name.
    pub skills: Vec<PlantedMention>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub postings: Vec<RawPosting>,
    pub truth: Vec<TruthRecord>,
}

/// The input-file row layout `ingest` reads.
#[derive(Serialize)]
struct InputRow<'a> {
    platform: &'a str,
    url: &'a str,
    search_term: &'a str,
    title: &'a str,
    employer: &'a str,
    location: &'a str,
    description: &'a str,
    collected_at: String,
}

fn check_mix(name: &str, parts: &[f64]) -> Result<(), SynthError> {
    if parts.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(invalid(format!("{name} entries must lie in [0, 1]")));
    }
    let sum: f64 = parts.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("{name} must sum to 1, sums to {sum}")));
    }
    Ok(())
}

fn check_rate(what: &str, rate: f64) -> Result<(), SynthError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(invalid(format!("{what}: rate {rate} outside [0, 1]")));
    }
    Ok(())
}

/// Index drawn with the given weights; zero-weight slots are never chosen.
fn weighted(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let draw: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if w > 0.0 && draw < acc {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// A profile checked against the bundled rulebook and alias map.
#[derive(Debug, Clone)]
pub struct Synthesizer {
    profile: SynthProfile,
    /// Categories the stub reports for each planted skill, by skill index.
    categories: Vec<Vec<SkillCategory>>,
    search_terms: Vec<&'static str>,
}

struct Probe<'a> {
    rules: &'a Rulebook,
}

impl Probe<'_> {
    fn tier(&self, s: &str) -> RelevanceLabel {
        self.rules.relevance(s).label
    }

    fn specs(&self, s: &str) -> Vec<Specialization> {
        Specialization::ALL.iter().copied().filter(|&sp| self.rules.specialization(sp, s).aligned).collect()
    }

    fn skill_count(&self, s: &str) -> usize {
        self.rules.skills(s).skills.len()
    }

    /// `s` must trigger no rule at all.
    fn inert(&self, what: &str, s: &str) -> Result<(), SynthError> {
        if self.tier(s) != RelevanceLabel::None || !self.specs(s).is_empty() || self.skill_count(s) > 0 {
            return Err(invalid(format!("{what} `{s}` triggers a classification rule")));
        }
        Ok(())
    }
}

impl Synthesizer {
    pub fn new(profile: SynthProfile) -> Result<Self, SynthError> {
        let rules = Rulebook::bundled();
        let aliases = AliasMap::bundled();
        let probe = Probe { rules: &rules };
        let p = &profile;

        let tm = &p.tier_mix;
        check_mix("tier_mix", &[tm.strong, tm.partial, tm.none])?;
        let lm = &p.level_mix;
        check_mix("level_mix", &[lm.required, lm.preferred, lm.unspecified])?;
        for (tier, share) in [
            (RelevanceLabel::Strong, tm.strong),
            (RelevanceLabel::Partial, tm.partial),
            (RelevanceLabel::None, tm.none),
        ] {
            let pool = p.tier_sentences.of(tier);
            if share > 0.0 && pool.is_empty() {
                return Err(invalid(format!("no sentences for tier {tier}")));
            }
            for s in pool {
                if probe.tier(s) != tier || !probe.specs(s).is_empty() || probe.skill_count(s) > 0 {
                    return Err(invalid(format!("tier sentence `{s}` does not isolate tier {tier}")));
                }
            }
        }

        for (&spec, &rate) in &p.spec_rates {
            check_rate(spec.key(), rate)?;
        }
        for &spec in &Specialization::ALL {
            let pool = p.spec_sentences.get(&spec).map(Vec::as_slice).unwrap_or_default();
            if p.spec_rate(spec) > 0.0 && pool.is_empty() {
                return Err(invalid(format!("no sentences for specialization {}", spec.key())));
            }
            for s in pool {
                if probe.tier(s) != RelevanceLabel::None || probe.specs(s) != [spec] || probe.skill_count(s) > 0 {
                    return Err(invalid(format!("specialization sentence `{s}` does not isolate {}", spec.key())));
                }
            }
        }

        for t in [&p.level_templates.required, &p.level_templates.preferred, &p.level_templates.unspecified] {
            if !t.contains("{skill}") {
                return Err(invalid(format!("level template `{t}` lacks {{skill}}")));
            }
        }
        let mut canonicals = BTreeSet::new();
        let mut categories = Vec::with_capacity(p.skills.len());
        for skill in &p.skills {
            if !canonicals.insert(skill.canonical.as_str()) {
                return Err(invalid(format!("canonical `{}` planted twice", skill.canonical)));
            }
            check_rate(&skill.canonical, skill.base_rate)?;
            for (&spec, &rate) in &skill.spec_rates {
                check_rate(&format!("{} / {}", skill.canonical, spec.key()), rate)?;
            }
            let mut seen: Option<Vec<SkillCategory>> = None;
            for level in [RequirementLevel::Required, RequirementLevel::Preferred, RequirementLevel::Unspecified] {
                let sentence = p.level_templates.render(level, &skill.surface);
                if probe.tier(&sentence) != RelevanceLabel::None || !probe.specs(&sentence).is_empty() {
                    return Err(invalid(format!("skill sentence `{sentence}` triggers a label rule")));
                }
                let found = rules.skills(&sentence).skills;
                if found.is_empty() || found.iter().any(|m| m.skill != skill.surface || m.level != level) {
                    return Err(invalid(format!(
                        "skill sentence `{sentence}` is not extracted as `{}` at level {}",
                        skill.surface,
                        level.as_str()
                    )));
                }
                let mentions: Vec<SkillMention> = found
                    .iter()
                    .map(|m| SkillMention {
                        posting_id: "probe".into(),
                        surface: m.skill.clone(),
                        category: m.category,
                        level: m.level,
                    })
                    .collect();
                let normalized = normalize_skills(&mentions, &aliases);
                if normalized.iter().any(|n| n.canonical != skill.canonical) {
                    return Err(invalid(format!("`{}` does not normalize to `{}`", skill.surface, skill.canonical)));
                }
                let cats: Vec<SkillCategory> = normalized.iter().map(|n| n.category).collect();
                match &seen {
                    Some(prev) if prev != &cats => {
                        return Err(invalid(format!("`{}` changes category with its level", skill.surface)));
                    }
                    _ => seen = Some(cats),
                }
            }
            categories.push(seen.expect("three levels probed"));
        }

        let [lo, hi] = p.filler_range;
        if lo > hi {
            return Err(invalid("filler_range lower bound exceeds upper bound"));
        }
        if hi > 0 && p.filler.is_empty() {
            return Err(invalid("filler_range asks for filler but none is given"));
        }
        for s in &p.filler {
            probe.inert("filler", s)?;
        }
        for (name, pool) in [
            ("titles", &p.titles),
            ("employers", &p.employers),
            ("locations", &p.locations),
            ("platforms", &p.platforms),
        ] {
            if pool.is_empty() {
                return Err(invalid(format!("{name} is empty")));
            }
        }
        for s in p.titles.iter().chain(&p.employers).chain(&p.locations) {
            probe.inert("metadata", s)?;
        }
        if p.collection_days == 0 {
            return Err(invalid("collection_days must be at least 1"));
        }
        Ok(Self { profile, categories, search_terms: search_terms() })
    }

    pub fn profile(&self) -> &SynthProfile {
        &self.profile
    }

    pub fn generate(&self, n: usize, seed: u64) -> Result<SyntheticCorpus, SynthError> {
        if n < 1 {
            return Err(invalid("n must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut postings = Vec::with_capacity(n);
        let mut truth = Vec::with_capacity(n);
        for i in 0..n {
            let (raw, mut record) = self.one(i, &mut rng);
            // Ids hash the canonical fields, so derive them the way ingest does.
            record.posting_id = corpus::canonicalize(&raw).expect("synthetic descriptions are non-empty").id;
            postings.push(raw);
            truth.push(record);
        }
        Ok(SyntheticCorpus { postings, truth })
    }

    fn one(&self, i: usize, rng: &mut ChaCha8Rng) -> (RawPosting, TruthRecord) {
        let p = &self.profile;
        let tm = &p.tier_mix;
        let tier = [RelevanceLabel::Strong, RelevanceLabel::Partial, RelevanceLabel::None]
            [weighted(rng, &[tm.strong, tm.partial, tm.none])];

        let mut body: Vec<String> = Vec::new();
        body.push(p.tier_sentences.of(tier).choose(rng).expect("validated pool").clone());

        let mut specs = Vec::new();
        let mut skills = Vec::new();
        if tier.is_retained() {
            for &spec in &Specialization::ALL {
                if rng.gen::<f64>() < p.spec_rate(spec) {
                    specs.push(spec);
                    body.push(p.spec_sentences[&spec].choose(rng).expect("validated pool").clone());
                }
            }
            for (k, skill) in p.skills.iter().enumerate() {
                let mut planted = rng.gen::<f64>() < skill.base_rate;
                for spec in &specs {
                    let rate = skill.spec_rates.get(spec).copied().unwrap_or(0.0);
                    planted |= rng.gen::<f64>() < rate;
                }
                if !planted {
                    continue;
                }
                let lm = &p.level_mix;
                let level = [RequirementLevel::Required, RequirementLevel::Preferred, RequirementLevel::Unspecified]
                    [weighted(rng, &[lm.required, lm.preferred, lm.unspecified])];
                body.push(p.level_templates.render(level, &skill.surface));
                skills.push(PlantedMention {
                    canonical: skill.canonical.clone(),
                    categories: self.categories[k].clone(),
                    level,
                });
            }
        }
        let [lo, hi] = p.filler_range;
        let fillers = rng.gen_range(lo..=hi);
        for _ in 0..fillers {
            body.push(p.filler.choose(rng).expect("validated pool").clone());
        }
        body.shuffle(rng);
        body.push(format!("Posting reference SYN-{:05}.", i + 1));
        skills.sort_by(|a, b| a.canonical.cmp(&b.canonical));

        let platform = &p.platforms[i % p.platforms.len()];
        let raw = RawPosting {
            source_platform: Platform::new(platform),
            source_url: format!("https://jobs.example.org/{}/{:05}", Platform::new(platform), i + 1),
            search_term: self.search_terms.choose(rng).map(|s| s.to_string()).unwrap_or_default(),
            title: p.titles.choose(rng).expect("validated pool").clone(),
            employer: format!("{} Agency {:04}", p.employers.choose(rng).expect("validated pool"), i + 1),
            location: p.locations.choose(rng).expect("validated pool").clone(),
            description: body.join(" "),
            collected_at: p.collected_from + Duration::days((i as u32 % p.collection_days) as i64),
        };
        (raw, TruthRecord { posting_id: String::new(), tier, specs, skills })
    }
}

pub fn generate_synthetic(n: usize, seed: u64, profile: &SynthProfile) -> Result<SyntheticCorpus, SynthError> {
    Synthesizer::new(profile.clone())?.generate(n, seed)
}

fn write_lines<T, F>(path: &Path, items: &[T], line: F) -> Result<(), SynthError>
where
    F: Fn(&T) -> String,
{
    let io = |source| SynthError::Io { path: path.to_path_buf(), source };
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    for item in items {
        writeln!(out, "{}", line(item)).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Write `postings.jsonl` (ingest layout) and `truth.jsonl` under `dir`.
pub fn write_synthetic(corpus: &SyntheticCorpus, dir: &Path) -> Result<(PathBuf, PathBuf), SynthError> {
    fs::create_dir_all(dir).map_err(|source| SynthError::Io { path: dir.to_path_buf(), source })?;
    let postings = dir.join("postings.jsonl");
    let truth = dir.join("truth.jsonl");
    write_lines(&postings, &corpus.postings, |r| {
        serde_json::to_string(&InputRow {
            platform: r.source_platform.as_str(),
            url: &r.source_url,
            search_term: &r.search_term,
            title: &r.title,
            employer: &r.employer,
            location: &r.location,
            description: &r.description,
            collected_at: r.collected_at.format("%Y-%m-%d").to_string(),
        })
        .expect("row serializes")
    })?;
    write_lines(&truth, &corpus.truth, |t| serde_json::to_string(t).expect("truth serializes"))?;
    Ok((postings, truth))
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthRecord>, SynthError> {
    let text = fs::read_to_string(path).map_err(|source| SynthError::Io { path: path.to_path_buf(), source })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| invalid(format!("{}: {e}", path.display()))))
        .collect()
}
