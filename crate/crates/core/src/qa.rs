//! Expert review sheets, agreement scoring, and judge verification of
//! extracted skills.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{CondensedSummary, RelevanceLabel, RelevanceResult, SpecAlignment, Specialization};
use crate::corpus::Posting;
use crate::inference::schema::{JudgePayload, Verdict};
use crate::inference::{classify_call, InferenceClient, InferenceError, InferenceRequest, SchemaId};
use crate::prompts;
use crate::report::percent;
use crate::skills::{NormalizedSkill, SkillCategory};

#[derive(Debug, Error)]
pub enum QaError {
    #[error("requested {requested} rows but only {available} are available")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("row {row} ({posting_id}) has no expert label")]
    IncompleteSheet { row: usize, posting_id: String },
    #[error("row {row}: `{label}` is not a valid {task} label")]
    InvalidLabel { row: usize, label: String, task: ReviewTask },
    #[error("skill {canonical} belongs to {owner}, not {posting_id}")]
    ForeignSkill { canonical: String, owner: String, posting_id: String },
    #[error("review sheet {path}: {message}")]
    Sheet { path: PathBuf, message: String },
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewTask {
    Relevance,
    Specialization,
}

impl ReviewTask {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Relevance => "relevance",
            Self::Specialization => "specialization",
        }
    }
}

impl std::fmt::Display for ReviewTask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ReviewTask {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "relevance" => Ok(Self::Relevance),
            "specialization" | "specializations" => Ok(Self::Specialization),
            other => Err(format!("unknown review task `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strata {
    #[default]
    ByTier,
    BySpec,
    Uniform,
}

impl FromStr for Strata {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "by_tier" | "tier" => Ok(Self::ByTier),
            "by_spec" | "spec" => Ok(Self::BySpec),
            "uniform" => Ok(Self::Uniform),
            other => Err(format!("unknown strata `{other}`")),
        }
    }
}

/// A population member eligible for review.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReviewCandidate {
    pub posting_id: String,
    pub summary: String,
    pub task: ReviewTask,
    pub model_label: String,
    pub model_rationale: String,
    pub tier: RelevanceLabel,
    /// First aligned specialization in canonical order.
    pub primary_spec: Option<Specialization>,
}

impl ReviewCandidate {
    fn stratum(&self, strata: Strata) -> String {
        match strata {
            Strata::ByTier => self.tier.as_str().to_string(),
            Strata::BySpec => self.primary_spec.map_or("unassigned", Specialization::key).to_string(),
            Strata::Uniform => "all".to_string(),
        }
    }
}

/// Specialization label for review sheets: `;`-joined abbreviations, or `none`.
pub fn spec_label(alignment: &SpecAlignment) -> String {
    let specs: Vec<&str> = alignment.flags.aligned().map(Specialization::abbrev).collect();
    if specs.is_empty() {
        "none".into()
    } else {
        specs.join(";")
    }
}

fn parse_spec_label(label: &str) -> Option<BTreeSet<Specialization>> {
    let label = label.trim();
    if label.eq_ignore_ascii_case("none") {
        return Some(BTreeSet::new());
    }
    label.split(';').map(|part| part.trim().parse::<Specialization>().ok()).collect()
}

fn summaries_by_id(summaries: &[CondensedSummary]) -> BTreeMap<&str, &str> {
    summaries.iter().map(|s| (s.posting_id.as_str(), s.summary.as_str())).collect()
}

/// Every classified posting, for relevance review.
pub fn relevance_candidates(relevance: &[RelevanceResult], summaries: &[CondensedSummary]) -> Vec<ReviewCandidate> {
    let by_id = summaries_by_id(summaries);
    relevance
        .iter()
        .filter(|r| !r.unclassifiable)
        .map(|r| ReviewCandidate {
            posting_id: r.posting_id.clone(),
            summary: by_id.get(r.posting_id.as_str()).unwrap_or(&"").to_string(),
            task: ReviewTask::Relevance,
            model_label: r.label.as_str().to_string(),
            model_rationale: r.rationale.clone(),
            tier: r.label,
            primary_spec: None,
        })
        .collect()
}

/// Every retained posting with its specialization flags.
pub fn specialization_candidates(
    relevance: &[RelevanceResult],
    aligns: &[SpecAlignment],
    summaries: &[CondensedSummary],
) -> Vec<ReviewCandidate> {
    let by_id = summaries_by_id(summaries);
    let tiers: BTreeMap<&str, RelevanceLabel> = relevance.iter().map(|r| (r.posting_id.as_str(), r.label)).collect();
    aligns
        .iter()
        .map(|a| ReviewCandidate {
            posting_id: a.posting_id.clone(),
            summary: by_id.get(a.posting_id.as_str()).unwrap_or(&"").to_string(),
            task: ReviewTask::Specialization,
            model_label: spec_label(a),
            model_rationale: a
                .rationales
                .iter()
                .map(|(s, r)| format!("{}: {r}", s.abbrev()))
                .collect::<Vec<_>>()
                .join(" | "),
            tier: tiers.get(a.posting_id.as_str()).copied().unwrap_or(RelevanceLabel::Partial),
            primary_spec: a.flags.aligned().next(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewRow {
    pub posting_id: String,
    pub summary: String,
    pub task: ReviewTask,
    pub model_label: String,
    pub model_rationale: String,
    pub expert_label: String,
    pub expert_note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumAllocation {
    pub population: usize,
    pub sampled: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub seed: u64,
    pub strata: Strata,
    pub n: usize,
    pub population: usize,
    pub allocation: BTreeMap<String, StratumAllocation>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReviewSheet {
    pub rows: Vec<ReviewRow>,
    pub meta: SampleMeta,
}

/// Proportional allocation of `n` over stratum sizes with largest-remainder
/// rounding. Ties in remainder go to the earlier stratum.
pub fn allocate(sizes: &[usize], n: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return vec![0; sizes.len()];
    }
    let mut quotas: Vec<usize> = sizes.iter().map(|s| s * n / total).collect();
    let mut remaining = n - quotas.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(sizes[i] * n % total));
    for i in order {
        if remaining == 0 {
            break;
        }
        if quotas[i] < sizes[i] {
            quotas[i] += 1;
            remaining -= 1;
        }
    }
    quotas
}

pub fn sample_for_review(
    population: &[ReviewCandidate],
    n: usize,
    seed: u64,
    strata: Strata,
) -> Result<ReviewSheet, QaError> {
    if n > population.len() {
        return Err(QaError::SampleTooLarge { requested: n, available: population.len() });
    }
    let mut groups: BTreeMap<String, Vec<&ReviewCandidate>> = BTreeMap::new();
    for c in population {
        groups.entry(c.stratum(strata)).or_default().push(c);
    }
    for members in groups.values_mut() {
        members.sort_by(|a, b| a.posting_id.cmp(&b.posting_id));
    }
    let sizes: Vec<usize> = groups.values().map(Vec::len).collect();
    let quotas = allocate(&sizes, n);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut allocation = BTreeMap::new();
    for ((key, members), quota) in groups.iter().zip(quotas) {
        for c in members.choose_multiple(&mut rng, quota) {
            rows.push(ReviewRow {
                posting_id: c.posting_id.clone(),
                summary: c.summary.clone(),
                task: c.task,
                model_label: c.model_label.clone(),
                model_rationale: c.model_rationale.clone(),
                expert_label: String::new(),
                expert_note: String::new(),
            });
        }
        allocation.insert(key.clone(), StratumAllocation { population: members.len(), sampled: quota });
    }
    rows.sort_by(|a, b| (a.task, &a.posting_id).cmp(&(b.task, &b.posting_id)));
    Ok(ReviewSheet { rows, meta: SampleMeta { seed, strata, n, population: population.len(), allocation } })
}

fn sheet_error(path: &Path, message: impl ToString) -> QaError {
    QaError::Sheet { path: path.to_path_buf(), message: message.to_string() }
}

pub fn meta_path(csv_path: &Path) -> PathBuf {
    let mut name = csv_path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    csv_path.with_file_name(name)
}

/// Write the sheet as CSV plus a `<name>.meta.json` sidecar.
pub fn write_sheet(sheet: &ReviewSheet, path: &Path) -> Result<(), QaError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| sheet_error(path, e))?;
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| sheet_error(path, e))?;
    for row in &sheet.rows {
        w.serialize(row).map_err(|e| sheet_error(path, e))?;
    }
    if sheet.rows.is_empty() {
        w.write_record([
            "posting_id",
            "summary",
            "task",
            "model_label",
            "model_rationale",
            "expert_label",
            "expert_note",
        ])
        .map_err(|e| sheet_error(path, e))?;
    }
    w.flush().map_err(|e| sheet_error(path, e))?;
    let meta = serde_json::to_string_pretty(&sheet.meta).expect("meta serializes") + "\n";
    std::fs::write(meta_path(path), meta).map_err(|e| sheet_error(path, e))
}

pub fn read_sheet(path: &Path) -> Result<Vec<ReviewRow>, QaError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| sheet_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| sheet_error(path, e))).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCell {
    pub model: String,
    pub expert: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub task: ReviewTask,
    pub n: usize,
    pub agreed: usize,
    pub agreement: f64,
    pub confusion: Vec<ConfusionCell>,
    pub disagreements: Vec<String>,
}

/// Normalized label, or `None` when it is not in the task's label set.
fn normalize_label(task: ReviewTask, label: &str) -> Option<String> {
    match task {
        ReviewTask::Relevance => label.parse::<RelevanceLabel>().ok().map(|l| l.as_str().to_string()),
        ReviewTask::Specialization => parse_spec_label(label).map(|set| {
            if set.is_empty() {
                "none".to_string()
            } else {
                set.iter().map(|s| s.abbrev()).collect::<Vec<_>>().join(";")
            }
        }),
    }
}

/// Percent agreement and confusion counts, one entry per task present.
pub fn score_agreement(rows: &[ReviewRow]) -> Result<Vec<AgreementStats>, QaError> {
    // (scored, agreed, confusion, disagreeing ids)
    type Tally = (usize, usize, BTreeMap<(String, String), usize>, Vec<String>);
    let mut by_task: BTreeMap<ReviewTask, Tally> = BTreeMap::new();
    for (i, row) in rows.iter().enumerate() {
        let n = i + 1;
        if row.expert_label.trim().is_empty() {
            return Err(QaError::IncompleteSheet { row: n, posting_id: row.posting_id.clone() });
        }
        let invalid = |label: &str| QaError::InvalidLabel { row: n, label: label.to_string(), task: row.task };
        let expert = normalize_label(row.task, &row.expert_label).ok_or_else(|| invalid(&row.expert_label))?;
        let model = normalize_label(row.task, &row.model_label).ok_or_else(|| invalid(&row.model_label))?;
        let entry = by_task.entry(row.task).or_default();
        entry.0 += 1;
        if model == expert {
            entry.1 += 1;
        } else {
            entry.3.push(row.posting_id.clone());
        }
        *entry.2.entry((model, expert)).or_default() += 1;
    }
    Ok(by_task
        .into_iter()
        .map(|(task, (n, agreed, confusion, disagreements))| AgreementStats {
            task,
            n,
            agreed,
            agreement: agreed as f64 / n as f64,
            confusion: confusion
                .into_iter()
                .map(|((model, expert), count)| ConfusionCell { model, expert, count })
                .collect(),
            disagreements,
        })
        .collect())
}

pub fn agreement_markdown(stats: &[AgreementStats]) -> String {
    let mut out = String::from("# Review agreement\n");
    for s in stats {
        out.push_str(&format!(
            "\n## {}\n\nAgreement: {} of {} ({})\n\n| Model | Expert | Count |\n| --- | --- | --- |\n",
            s.task,
            s.agreed,
            s.n,
            percent(s.agreed, s.n, 1)
        ));
        for c in &s.confusion {
            out.push_str(&format!("| {} | {} | {} |\n", c.model, c.expert, c.count));
        }
        if !s.disagreements.is_empty() {
            out.push_str(&format!("\nDisagreements: {}\n", s.disagreements.join(", ")));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub posting_id: String,
    pub canonical: String,
    pub category: SkillCategory,
    pub verdict: Verdict,
    pub rationale: String,
    /// The judge returned nothing usable; recorded as unsupported.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unclassifiable: bool,
}

pub fn judge_extractions(
    posting: &Posting,
    skills: &[NormalizedSkill],
    client: &InferenceClient,
) -> Result<Vec<JudgeVerdict>, QaError> {
    let block = prompts::posting_block(posting, client.max_prompt_chars);
    skills
        .iter()
        .map(|skill| {
            if skill.posting_id != posting.id {
                return Err(QaError::ForeignSkill {
                    canonical: skill.canonical.clone(),
                    owner: skill.posting_id.clone(),
                    posting_id: posting.id.clone(),
                });
            }
            let surfaces = skill.surfaces.join(" | ");
            let prompt = prompts::JUDGE.render(&[
                ("posting", &block),
                ("schema", SchemaId::Judge.format_hint()),
                ("skill", &skill.canonical),
                ("surfaces", &surfaces),
                ("category", skill.category.as_str()),
            ]);
            let req = InferenceRequest::new(
                prompt,
                SchemaId::Judge,
                format!("{}:judge:{}:{}", posting.id, skill.category, skill.canonical),
            )?;
            let base = JudgeVerdict {
                posting_id: posting.id.clone(),
                canonical: skill.canonical.clone(),
                category: skill.category,
                verdict: Verdict::Unsupported,
                rationale: String::new(),
                unclassifiable: false,
            };
            match classify_call(&req, client) {
                Ok(out) => {
                    let p: JudgePayload = serde_json::from_value(out.payload).expect("validated payload");
                    Ok(JudgeVerdict { verdict: p.verdict, rationale: p.rationale, ..base })
                }
                Err(InferenceError::Unclassifiable { reason, .. }) => {
                    Ok(JudgeVerdict { rationale: reason, unclassifiable: true, ..base })
                }
                Err(e) => Err(e.into()),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeRate {
    pub category: SkillCategory,
    pub judged: usize,
    pub supported: usize,
    pub rate: f64,
}

/// Supported rate per category, in category order; categories never
/// judged are omitted.
pub fn judge_summary(verdicts: &[JudgeVerdict]) -> Vec<JudgeRate> {
    SkillCategory::ALL
        .iter()
        .filter_map(|&category| {
            let judged: Vec<_> = verdicts.iter().filter(|v| v.category == category).collect();
            if judged.is_empty() {
                return None;
            }
            let supported = judged.iter().filter(|v| v.verdict == Verdict::Supported).count();
            Some(JudgeRate { category, judged: judged.len(), supported, rate: supported as f64 / judged.len() as f64 })
        })
        .collect()
}
