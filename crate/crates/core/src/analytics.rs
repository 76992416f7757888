//! Alignment matrix and the statistics computed over it.
//!
//! Everything here is a pure function of its inputs and keeps full
//! precision; rounding for display happens in [`crate::report`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{RelevanceLabel, RelevanceResult, SpecAlignment, SpecFlags, Specialization};
use crate::skills::{NormalizedSkill, RequirementLevel, SkillCategory};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnalyticsError {
    #[error("retained posting {0} has no specialization record")]
    MissingAlignment(String),
    #[error("specialization record for {0}, which is not a retained posting")]
    OrphanAlignment(String),
    #[error("posting {0} appears twice")]
    DuplicatePosting(String),
    #[error("no rows selected: {0}")]
    EmptySelection(String),
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("skill `{0}` does not occur")]
    UnknownSkill(String),
    #[error("total input {total} is smaller than the {classified} classified postings")]
    InvalidTotal { total: usize, classified: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TierFilter {
    #[default]
    All,
    StrongOnly,
}

impl TierFilter {
    pub fn admits(self, tier: RelevanceLabel) -> bool {
        match self {
            Self::All => tier.is_retained(),
            Self::StrongOnly => tier == RelevanceLabel::Strong,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::All => "all",
            Self::StrongOnly => "strong_only",
        }
    }
}

impl FromStr for TierFilter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "all" => Ok(Self::All),
            "strong" | "strong_only" => Ok(Self::StrongOnly),
            other => Err(format!("unknown tier filter `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub posting_id: String,
    pub tier: RelevanceLabel,
    pub flags: SpecFlags,
}

/// One row per retained posting, sorted by posting id.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AlignmentMatrix {
    pub rows: Vec<MatrixRow>,
}

impl AlignmentMatrix {
    pub fn from_rows(mut rows: Vec<MatrixRow>) -> Result<Self, AnalyticsError> {
        rows.sort_by(|a, b| a.posting_id.cmp(&b.posting_id));
        if let Some(w) = rows.windows(2).find(|w| w[0].posting_id == w[1].posting_id) {
            return Err(AnalyticsError::DuplicatePosting(w[0].posting_id.clone()));
        }
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn select(&self, filter: TierFilter) -> impl Iterator<Item = &MatrixRow> {
        self.rows.iter().filter(move |r| filter.admits(r.tier))
    }

    pub fn column(&self, spec: Specialization, filter: TierFilter) -> Vec<bool> {
        self.select(filter).map(|r| r.flags.get(spec)).collect()
    }

    /// Column sums in canonical order.
    pub fn column_sums(&self, filter: TierFilter) -> [usize; 8] {
        let mut sums = [0usize; 8];
        for row in self.select(filter) {
            for spec in row.flags.aligned() {
                sums[spec.index()] += 1;
            }
        }
        sums
    }

    /// CSV export: posting_id, tier, then one 0/1 column per specialization.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["posting_id".to_string(), "tier".to_string()];
        header.extend(Specialization::ALL.iter().map(|s| s.key().to_string()));
        w.write_record(&header)?;
        for row in &self.rows {
            let mut record = vec![row.posting_id.clone(), row.tier.as_str().to_string()];
            record.extend(Specialization::ALL.iter().map(|s| if row.flags.get(*s) { "1" } else { "0" }.to_string()));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn build_alignment_matrix(
    relevance: &[RelevanceResult],
    aligns: &[SpecAlignment],
) -> Result<AlignmentMatrix, AnalyticsError> {
    let mut by_id: HashMap<&str, &SpecAlignment> = HashMap::with_capacity(aligns.len());
    for a in aligns {
        if by_id.insert(&a.posting_id, a).is_some() {
            return Err(AnalyticsError::DuplicatePosting(a.posting_id.clone()));
        }
    }
    let mut rows = Vec::new();
    let mut retained: BTreeSet<&str> = BTreeSet::new();
    for r in relevance.iter().filter(|r| r.is_retained()) {
        let a =
            by_id.get(r.posting_id.as_str()).ok_or_else(|| AnalyticsError::MissingAlignment(r.posting_id.clone()))?;
        retained.insert(&r.posting_id);
        rows.push(MatrixRow { posting_id: r.posting_id.clone(), tier: r.label, flags: a.flags });
    }
    let mut orphans: Vec<&str> = by_id.keys().copied().filter(|id| !retained.contains(id)).collect();
    orphans.sort_unstable();
    if let Some(id) = orphans.first() {
        return Err(AnalyticsError::OrphanAlignment(id.to_string()));
    }
    AlignmentMatrix::from_rows(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecShare {
    pub spec: Specialization,
    pub count: usize,
    /// Rows passing the tier filter, unassigned rows included.
    pub total: usize,
    pub share: f64,
}

pub fn market_share(matrix: &AlignmentMatrix, filter: TierFilter) -> Result<Vec<SpecShare>, AnalyticsError> {
    let total = matrix.select(filter).count();
    if total == 0 {
        return Err(AnalyticsError::EmptySelection(format!("no {} rows", filter.as_str())));
    }
    let sums = matrix.column_sums(filter);
    Ok(Specialization::ALL
        .iter()
        .map(|&spec| {
            let count = sums[spec.index()];
            SpecShare { spec, count, total, share: count as f64 / total as f64 }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiValue {
    Defined(f64),
    Undefined(String),
}

impl PhiValue {
    pub fn value(&self) -> Option<f64> {
        match self {
            Self::Defined(v) => Some(*v),
            Self::Undefined(_) => None,
        }
    }
}

pub const ZERO_MARGINAL: &str = "zero marginal";

/// Phi coefficient of two binary vectors from their 2x2 cell counts.
pub fn phi(a: &[bool], b: &[bool]) -> Result<PhiValue, AnalyticsError> {
    if a.len() != b.len() {
        return Err(AnalyticsError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Ok(PhiValue::Undefined(format!("{} row(s)", a.len())));
    }
    let (mut n11, mut n10, mut n01, mut n00) = (0u64, 0u64, 0u64, 0u64);
    for (&x, &y) in a.iter().zip(b) {
        match (x, y) {
            (true, true) => n11 += 1,
            (true, false) => n10 += 1,
            (false, true) => n01 += 1,
            (false, false) => n00 += 1,
        }
    }
    let marginals = [n11 + n10, n01 + n00, n11 + n01, n10 + n00];
    if marginals.contains(&0) {
        return Ok(PhiValue::Undefined(ZERO_MARGINAL.into()));
    }
    let numerator = (n11 as i128 * n00 as i128 - n10 as i128 * n01 as i128) as f64;
    let denominator = ((marginals[0] * marginals[1]) as f64).sqrt() * ((marginals[2] * marginals[3]) as f64).sqrt();
    Ok(PhiValue::Defined((numerator / denominator).clamp(-1.0, 1.0)))
}

/// 8x8 grid indexed `[row][col]` in canonical order. Cells below the
/// diagonal use all retained rows, cells above it Strong rows only; the
/// diagonal is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiMatrix {
    pub cells: Vec<Vec<Option<PhiValue>>>,
    pub lower_rows: usize,
    pub upper_rows: usize,
}

impl PhiMatrix {
    pub fn get(&self, row: Specialization, col: Specialization) -> Option<&PhiValue> {
        self.cells[row.index()][col.index()].as_ref()
    }
}

pub fn phi_matrix(matrix: &AlignmentMatrix) -> PhiMatrix {
    let all: Vec<Vec<bool>> = Specialization::ALL.iter().map(|s| matrix.column(*s, TierFilter::All)).collect();
    let strong: Vec<Vec<bool>> =
        Specialization::ALL.iter().map(|s| matrix.column(*s, TierFilter::StrongOnly)).collect();
    let cells = (0..8)
        .map(|i| {
            (0..8)
                .map(|j| {
                    let cols = match i.cmp(&j) {
                        std::cmp::Ordering::Greater => &all,
                        std::cmp::Ordering::Less => &strong,
                        std::cmp::Ordering::Equal => return None,
                    };
                    Some(phi(&cols[i], &cols[j]).expect("columns share a length"))
                })
                .collect()
        })
        .collect();
    PhiMatrix { cells, lower_rows: all[0].len(), upper_rows: strong[0].len() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillCount {
    pub canonical: String,
    /// Distinct postings in the universe mentioning the skill.
    pub count: usize,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillFrequencyTable {
    pub spec: Specialization,
    pub category: SkillCategory,
    pub tier: TierFilter,
    /// Rows passing the tier filter with the spec flag set.
    pub universe: usize,
    /// Descending by count, ties alphabetical by canonical name.
    pub rows: Vec<SkillCount>,
}

/// Distinct posting ids per canonical skill within `category`.
fn postings_by_skill(skills: &[NormalizedSkill], category: SkillCategory) -> BTreeMap<&str, BTreeSet<&str>> {
    let mut out: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for s in skills.iter().filter(|s| s.category == category) {
        out.entry(&s.canonical).or_default().insert(&s.posting_id);
    }
    out
}

fn ranked(counts: BTreeMap<&str, usize>, universe: usize, k: usize) -> Vec<SkillCount> {
    let mut rows: Vec<SkillCount> = counts
        .into_iter()
        .filter(|(_, c)| *c > 0)
        .map(|(name, count)| SkillCount { canonical: name.to_string(), count, share: count as f64 / universe as f64 })
        .collect();
    rows.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.canonical.cmp(&b.canonical)));
    rows.truncate(k);
    rows
}

pub fn skill_table(
    matrix: &AlignmentMatrix,
    skills: &[NormalizedSkill],
    spec: Specialization,
    category: SkillCategory,
    filter: TierFilter,
    k: usize,
) -> Result<SkillFrequencyTable, AnalyticsError> {
    let k = k.max(1);
    let universe: BTreeSet<&str> =
        matrix.select(filter).filter(|r| r.flags.get(spec)).map(|r| r.posting_id.as_str()).collect();
    if universe.is_empty() {
        return Err(AnalyticsError::EmptySelection(format!("no {} rows aligned to {}", filter.as_str(), spec.key())));
    }
    let counts = postings_by_skill(skills, category)
        .into_iter()
        .map(|(name, ids)| (name, ids.iter().filter(|id| universe.contains(*id)).count()))
        .collect();
    Ok(SkillFrequencyTable {
        spec,
        category,
        tier: filter,
        universe: universe.len(),
        rows: ranked(counts, universe.len(), k),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecRate {
    pub spec: Specialization,
    pub count: usize,
    pub universe: usize,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityRow {
    pub modality: String,
    /// Distinct postings in the tier universe mentioning the modality.
    pub total_mentions: usize,
    /// Size of the tier universe.
    pub tier_rows: usize,
    /// All retained rows, the alternative denominator.
    pub retained_rows: usize,
    /// Top three specializations by within-spec share.
    pub top_specs: Vec<SpecRate>,
}

/// Modalities ordered by `total_mentions` descending, then name.
pub fn modality_distribution(
    matrix: &AlignmentMatrix,
    skills: &[NormalizedSkill],
    filter: TierFilter,
) -> Vec<ModalityRow> {
    let rows: BTreeMap<&str, &SpecFlags> = matrix.select(filter).map(|r| (r.posting_id.as_str(), &r.flags)).collect();
    let spec_sizes = matrix.column_sums(filter);
    let mut out: Vec<ModalityRow> = postings_by_skill(skills, SkillCategory::TherapeuticModality)
        .into_iter()
        .filter_map(|(name, ids)| {
            let flags: Vec<&SpecFlags> = ids.iter().filter_map(|id| rows.get(id).copied()).collect();
            if flags.is_empty() {
                return None;
            }
            let mut rates: Vec<SpecRate> = Specialization::ALL
                .iter()
                .filter(|s| spec_sizes[s.index()] > 0)
                .map(|&spec| {
                    let count = flags.iter().filter(|f| f.get(spec)).count();
                    let universe = spec_sizes[spec.index()];
                    SpecRate { spec, count, universe, share: count as f64 / universe as f64 }
                })
                .filter(|r| r.count > 0)
                .collect();
            // Exact comparison of count/universe by cross-multiplication.
            rates.sort_by(|a, b| (b.count * a.universe).cmp(&(a.count * b.universe)).then(a.spec.cmp(&b.spec)));
            rates.truncate(3);
            Some(ModalityRow {
                modality: name.to_string(),
                total_mentions: flags.len(),
                tier_rows: rows.len(),
                retained_rows: matrix.len(),
                top_specs: rates,
            })
        })
        .collect();
    out.sort_by(|a, b| b.total_mentions.cmp(&a.total_mentions).then_with(|| a.modality.cmp(&b.modality)));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionStats {
    pub total_input: usize,
    pub retained: usize,
    pub strong: usize,
    pub partial: usize,
    /// Classified none, excluding unclassifiable postings.
    pub none: usize,
    pub unclassifiable: usize,
    pub retained_share: f64,
}

pub fn retention_stats(relevance: &[RelevanceResult], total_input: usize) -> Result<RetentionStats, AnalyticsError> {
    if total_input < relevance.len() {
        return Err(AnalyticsError::InvalidTotal { total: total_input, classified: relevance.len() });
    }
    let (mut strong, mut partial, mut none, mut unclassifiable) = (0, 0, 0, 0);
    for r in relevance {
        match (r.unclassifiable, r.label) {
            (true, _) => unclassifiable += 1,
            (false, RelevanceLabel::Strong) => strong += 1,
            (false, RelevanceLabel::Partial) => partial += 1,
            (false, RelevanceLabel::None) => none += 1,
        }
    }
    let retained = strong + partial;
    let retained_share = if total_input == 0 { 0.0 } else { retained as f64 / total_input as f64 };
    Ok(RetentionStats { total_input, retained, strong, partial, none, unclassifiable, retained_share })
}

/// Share of selected rows with no specialization flag set.
pub fn unassigned_rate(matrix: &AlignmentMatrix, filter: TierFilter) -> Result<f64, AnalyticsError> {
    let (total, unassigned) = unassigned_counts(matrix, filter);
    if total == 0 {
        return Err(AnalyticsError::EmptySelection(format!("no {} rows", filter.as_str())));
    }
    Ok(unassigned as f64 / total as f64)
}

/// (selected rows, all-false rows).
pub fn unassigned_counts(matrix: &AlignmentMatrix, filter: TierFilter) -> (usize, usize) {
    matrix.select(filter).fold((0, 0), |(t, u), r| (t + 1, u + usize::from(!r.flags.any())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequirementBreakdown {
    pub canonical: String,
    pub required: usize,
    pub preferred: usize,
    pub unspecified: usize,
    /// Over records with a known level; `None` when every level is unspecified.
    pub required_share: Option<f64>,
    pub preferred_share: Option<f64>,
}

pub fn requirement_breakdown(
    skills: &[NormalizedSkill],
    canonical: &str,
) -> Result<RequirementBreakdown, AnalyticsError> {
    let matching: Vec<&NormalizedSkill> = skills.iter().filter(|s| s.canonical == canonical).collect();
    if matching.is_empty() {
        return Err(AnalyticsError::UnknownSkill(canonical.to_string()));
    }
    let count = |level| matching.iter().filter(|s| s.level == level).count();
    let (required, preferred, unspecified) =
        (count(RequirementLevel::Required), count(RequirementLevel::Preferred), count(RequirementLevel::Unspecified));
    let known = required + preferred;
    let share = |n: usize| (known > 0).then(|| n as f64 / known as f64);
    Ok(RequirementBreakdown {
        canonical: canonical.to_string(),
        required,
        preferred,
        unspecified,
        required_share: share(required),
        preferred_share: share(preferred),
    })
}

/// Every statistic the report stage renders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticsReport {
    pub retention: RetentionStats,
    pub rows_all: usize,
    pub rows_strong: usize,
    pub unassigned_all: usize,
    pub unassigned_strong: usize,
    pub market_share_all: Vec<SpecShare>,
    pub market_share_strong: Vec<SpecShare>,
    pub phi: PhiMatrix,
    /// Strong-only top-k technical skills per specialization.
    pub technical: Vec<SkillFrequencyTable>,
    /// Strong-only top-k technology skills per specialization.
    pub technology: Vec<SkillFrequencyTable>,
    pub modalities: Vec<ModalityRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyticsOptions {
    pub top_k: usize,
    /// Tier used for skill and modality tables.
    pub skill_tier: TierFilter,
}

impl Default for AnalyticsOptions {
    fn default() -> Self {
        Self { top_k: 5, skill_tier: TierFilter::StrongOnly }
    }
}

fn tables(
    matrix: &AlignmentMatrix,
    skills: &[NormalizedSkill],
    category: SkillCategory,
    opts: &AnalyticsOptions,
) -> Vec<SkillFrequencyTable> {
    Specialization::ALL
        .iter()
        .map(|&spec| {
            skill_table(matrix, skills, spec, category, opts.skill_tier, opts.top_k).unwrap_or(SkillFrequencyTable {
                spec,
                category,
                tier: opts.skill_tier,
                universe: 0,
                rows: Vec::new(),
            })
        })
        .collect()
}

pub fn analyze(
    relevance: &[RelevanceResult],
    aligns: &[SpecAlignment],
    skills: &[NormalizedSkill],
    total_input: usize,
    opts: &AnalyticsOptions,
) -> Result<AnalyticsReport, AnalyticsError> {
    let matrix = build_alignment_matrix(relevance, aligns)?;
    let retention = retention_stats(relevance, total_input)?;
    let shares = |filter| {
        market_share(&matrix, filter).unwrap_or_else(|_| {
            Specialization::ALL.iter().map(|&spec| SpecShare { spec, count: 0, total: 0, share: 0.0 }).collect()
        })
    };
    let (rows_all, unassigned_all) = unassigned_counts(&matrix, TierFilter::All);
    let (rows_strong, unassigned_strong) = unassigned_counts(&matrix, TierFilter::StrongOnly);
    Ok(AnalyticsReport {
        retention,
        rows_all,
        rows_strong,
        unassigned_all,
        unassigned_strong,
        market_share_all: shares(TierFilter::All),
        market_share_strong: shares(TierFilter::StrongOnly),
        phi: phi_matrix(&matrix),
        technical: tables(&matrix, skills, SkillCategory::Technical, opts),
        technology: tables(&matrix, skills, SkillCategory::Technology, opts),
        modalities: modality_distribution(&matrix, skills, opts.skill_tier),
    })
}
