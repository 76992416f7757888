//! Staged runner: corpus, relevance, specializations, skills, analytics,
//! reports. Classification stages checkpoint per posting and resume.

mod checkpoint;
mod config;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{check_subset, load, read_lines, write_all, write_atomic, Appender, Keyed};
pub use config::{InputSpec, PipelineConfig, SamplingDefaults};

use crate::analytics::{self, AnalyticsError, AnalyticsReport, TierFilter};
use crate::classify::{
    self, ClassifyError, CondensedSummary, RelevanceLabel, RelevanceResult, SpecAlignment, SpecCatalog,
};
use crate::corpus::{self, CorpusError, DedupReport, Platform, Posting};
use crate::inference::{run_bounded, InferenceClient, InferenceError};
use crate::prompts;
use crate::qa::{self, AgreementStats, JudgeVerdict, QaError, ReviewTask, Strata};
use crate::report::{self, ReportError, RunManifest, StageRecord, Table, TableFormat};
use crate::skills::{self, AliasMap, NormalizedSkill, SkillMention, SkillsError};
use crate::synth::{self, SynthError};
use crate::text;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("cannot access {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("backend unreachable: {0}")]
    Unreachable(String),
    #[error("{stage}: {message}")]
    Validation { stage: String, message: String },
    #[error("{stage}: posting {posting_id} is not in the {upstream} stage")]
    Integrity { stage: String, upstream: String, posting_id: String },
    #[error("stage `{0}` has no output yet; run it first")]
    MissingStage(String),
}

impl PipelineError {
    /// 1 usage/config, 2 I/O, 3 backend unreachable, 4 validation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Config(_) => 1,
            Self::Io { .. } => 2,
            Self::Unreachable(_) => 3,
            Self::Validation { .. } | Self::Integrity { .. } | Self::MissingStage(_) => 4,
        }
    }

    pub(crate) fn io(path: &Path, e: impl fmt::Display) -> Self {
        Self::Io { path: path.to_path_buf(), message: e.to_string() }
    }

    pub(crate) fn validation(stage: &str, message: impl Into<String>) -> Self {
        Self::Validation { stage: stage.to_string(), message: message.into() }
    }
}

impl From<InferenceError> for PipelineError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::BackendUnreachable { .. } => Self::Unreachable(e.to_string()),
            InferenceError::Config(m) => Self::Config(m),
            other => Self::validation("inference", other.to_string()),
        }
    }
}

impl From<CorpusError> for PipelineError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::FileUnreadable { path, source } => Self::io(&path, source),
            CorpusError::UnknownFormat(_) | CorpusError::InvalidPolicy(_) => Self::Config(e.to_string()),
            other => Self::validation("corpus", other.to_string()),
        }
    }
}

impl From<ClassifyError> for PipelineError {
    fn from(e: ClassifyError) -> Self {
        match e {
            ClassifyError::Inference(e) => e.into(),
            ClassifyError::Catalog(m) => Self::Config(m),
            other => Self::validation("classify", other.to_string()),
        }
    }
}

impl From<SkillsError> for PipelineError {
    fn from(e: SkillsError) -> Self {
        match e {
            SkillsError::Inference(e) => e.into(),
            SkillsError::FileUnreadable { path, source } => Self::io(&path, source),
            SkillsError::DuplicateAliasKey { .. } | SkillsError::InvalidAliasMap { .. } => Self::Config(e.to_string()),
            other => Self::validation("skills", other.to_string()),
        }
    }
}

impl From<AnalyticsError> for PipelineError {
    fn from(e: AnalyticsError) -> Self {
        Self::validation("analytics", e.to_string())
    }
}

impl From<ReportError> for PipelineError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Io { path, source } => Self::io(&path, source),
            ReportError::MissingStage(s) => Self::MissingStage(s),
            other => Self::validation("reports", other.to_string()),
        }
    }
}

impl From<QaError> for PipelineError {
    fn from(e: QaError) -> Self {
        match e {
            QaError::Inference(e) => e.into(),
            QaError::SampleTooLarge { .. } => Self::Usage(e.to_string()),
            other => Self::validation("qa", other.to_string()),
        }
    }
}

impl From<SynthError> for PipelineError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Io { path, source } => Self::io(&path, source),
            SynthError::InvalidProfile(_) => Self::Config(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Corpus,
    Relevance,
    Specializations,
    Skills,
    Analytics,
    Reports,
}

impl Stage {
    pub const ALL: [Stage; 6] =
        [Self::Corpus, Self::Relevance, Self::Specializations, Self::Skills, Self::Analytics, Self::Reports];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Corpus => "corpus",
            Self::Relevance => "relevance",
            Self::Specializations => "specializations",
            Self::Skills => "skills",
            Self::Analytics => "analytics",
            Self::Reports => "reports",
        }
    }

    /// The file that marks the stage as having output.
    pub fn file(self) -> &'static str {
        match self {
            Self::Corpus => "corpus.jsonl",
            Self::Relevance => "relevance.jsonl",
            Self::Specializations => "specializations.jsonl",
            Self::Skills => "skills.jsonl",
            Self::Analytics => "analytics.json",
            Self::Reports => "manifest.json",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "corpus" => Ok(Self::Corpus),
            "relevance" => Ok(Self::Relevance),
            "specializations" | "specialization" => Ok(Self::Specializations),
            "skills" => Ok(Self::Skills),
            "analytics" => Ok(Self::Analytics),
            "reports" | "report" => Ok(Self::Reports),
            other => Err(PipelineError::Usage(format!("unknown stage `{other}`"))),
        }
    }
}

/// Parse a comma-separated stage list into canonical order.
pub fn parse_stages(list: &str) -> Result<Vec<Stage>, PipelineError> {
    let set: BTreeSet<Stage> =
        list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect::<Result<_, _>>()?;
    if set.is_empty() {
        return Err(PipelineError::Usage("empty stage list".into()));
    }
    Ok(set.into_iter().collect())
}

/// File locations under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

pub const REPORT_TABLES: [&str; 4] = ["market_share", "table1_technical", "table2_modalities", "table3_technology"];
pub const FIGURES: [&str; 2] = ["fig1_shares.svg", "fig2_phi.svg"];

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stage(&self, stage: Stage) -> PathBuf {
        self.root.join(stage.file())
    }

    pub fn ingested(&self) -> PathBuf {
        self.root.join("ingested.jsonl")
    }

    pub fn quarantine(&self) -> PathBuf {
        self.root.join("quarantine.jsonl")
    }

    pub fn duplicates(&self) -> PathBuf {
        self.root.join("duplicates.jsonl")
    }

    pub fn dedup_report(&self) -> PathBuf {
        self.root.join("dedup_report.json")
    }

    pub fn summaries(&self) -> PathBuf {
        self.root.join("summaries.jsonl")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn figures(&self) -> PathBuf {
        self.root.join("figures")
    }

    pub fn qa(&self) -> PathBuf {
        self.root.join("qa")
    }

    /// Files a stage owns, removed when the stage is forced.
    fn owned(&self, stage: Stage) -> Vec<PathBuf> {
        match stage {
            Stage::Corpus => {
                vec![self.ingested(), self.quarantine(), self.duplicates(), self.dedup_report(), self.stage(stage)]
            }
            Stage::Relevance => vec![self.stage(stage), self.summaries()],
            Stage::Reports => vec![self.stage(stage), self.reports(), self.figures()],
            _ => vec![self.stage(stage)],
        }
    }
}

/// A source row or posting kept out of the corpus, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantineRecord {
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    pub reason: String,
}

/// Skills stage record: raw mentions and their normalized form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillRecord {
    pub posting_id: String,
    pub mentions: Vec<SkillMention>,
    pub normalized: Vec<NormalizedSkill>,
    pub model_id: String,
    pub prompt_hash: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unclassifiable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl Keyed for SkillRecord {
    fn key(&self) -> &str {
        &self.posting_id
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeRecord {
    pub posting_id: String,
    pub verdicts: Vec<JudgeVerdict>,
}

impl Keyed for JudgeRecord {
    fn key(&self) -> &str {
        &self.posting_id
    }
}

/// Count line printed at the end of every stage. `input` always equals
/// `output + quarantined`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageSummary {
    pub stage: String,
    pub input: usize,
    pub output: usize,
    pub quarantined: usize,
    /// Records found in the checkpoint and not recomputed.
    pub resumed: usize,
    pub notes: Vec<String>,
}

impl StageSummary {
    fn new(stage: &str, input: usize, output: usize, quarantined: usize) -> Self {
        debug_assert_eq!(input, output + quarantined, "{stage} drops records");
        Self { stage: stage.to_string(), input, output, quarantined, resumed: 0, notes: Vec::new() }
    }

    fn resumed(mut self, n: usize) -> Self {
        self.resumed = n;
        self
    }

    fn note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }

    pub fn balanced(&self) -> bool {
        self.input == self.output + self.quarantined
    }
}

impl fmt::Display for StageSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: input {} = output {} + quarantined {}", self.stage, self.input, self.output, self.quarantined)?;
        if self.resumed > 0 {
            write!(f, " ({} from checkpoint, {} new)", self.resumed, self.output - self.resumed)?;
        }
        for n in &self.notes {
            write!(f, "; {n}")?;
        }
        Ok(())
    }
}

fn ids<T: Keyed>(records: &[T]) -> BTreeSet<&str> {
    records.iter().map(Keyed::key).collect()
}

fn mtime(path: &Path) -> Option<String> {
    let modified = fs::metadata(path).and_then(|m| m.modified()).ok()?;
    Some(DateTime::<Utc>::from(modified).to_rfc3339_opts(SecondsFormat::Secs, true))
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut text = serde_json::to_vec_pretty(value).expect("value serializes");
    text.push(b'\n');
    text
}

type CompleteStages = (Vec<Posting>, Vec<RelevanceResult>, Vec<SpecAlignment>, Vec<SkillRecord>);

pub struct Pipeline {
    config: PipelineConfig,
    layout: Layout,
    force: bool,
}

impl Pipeline {
    /// Validate `config` and make sure the output directory exists.
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        fs::create_dir_all(&config.out_dir).map_err(|e| PipelineError::io(&config.out_dir, e))?;
        let layout = Layout::new(&config.out_dir);
        Ok(Self { config, layout, force: false })
    }

    pub fn with_force(mut self, force: bool) -> Self {
        self.force = force;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Run `stages` in canonical order, writing each summary to `out`.
    pub fn run(&self, stages: &[Stage], out: &mut dyn Write) -> Result<Vec<StageSummary>, PipelineError> {
        let mut ordered: Vec<Stage> = stages.to_vec();
        ordered.sort();
        ordered.dedup();
        let mut summaries = Vec::new();
        for stage in ordered {
            let summary = match stage {
                Stage::Corpus => self.corpus()?,
                Stage::Relevance => self.screen()?,
                Stage::Specializations => self.classify()?,
                Stage::Skills => self.extract()?,
                Stage::Analytics => self.analyze()?,
                Stage::Reports => self.report()?,
            };
            emit(out, &summary)?;
            summaries.push(summary);
        }
        Ok(summaries)
    }

    /// Forced stages drop their own output and everything downstream.
    fn reset_from(&self, stage: Stage) -> Result<(), PipelineError> {
        if !self.force {
            return Ok(());
        }
        for s in Stage::ALL.iter().filter(|&&s| s >= stage) {
            for path in self.layout.owned(*s) {
                let res = if path.is_dir() { fs::remove_dir_all(&path) } else { fs::remove_file(&path) };
                match res {
                    Ok(()) => log::info!("removed {}", path.display()),
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                    Err(e) => return Err(PipelineError::io(&path, e)),
                }
            }
        }
        Ok(())
    }

    fn client(&self) -> Result<InferenceClient, PipelineError> {
        Ok(InferenceClient::from_config(&self.config.backend)?)
    }

    fn catalog(&self) -> Result<SpecCatalog, PipelineError> {
        match &self.config.spec_catalog {
            Some(p) => Ok(SpecCatalog::load(p)?),
            None => Ok(SpecCatalog::bundled()),
        }
    }

    fn aliases(&self) -> Result<AliasMap, PipelineError> {
        match &self.config.alias_map {
            Some(p) => Ok(skills::load_alias_map(p)?),
            None => Ok(AliasMap::bundled()),
        }
    }

    fn require(&self, stage: Stage) -> Result<PathBuf, PipelineError> {
        let path = self.layout.stage(stage);
        if path.is_file() {
            Ok(path)
        } else {
            Err(PipelineError::MissingStage(stage.as_str().to_string()))
        }
    }

    // ---- loading with integrity checks ----

    pub fn load_corpus(&self) -> Result<Vec<Posting>, PipelineError> {
        let path = self.require(Stage::Corpus)?;
        load(&path, "corpus")
    }

    pub fn load_relevance(&self, corpus: &[Posting]) -> Result<Vec<RelevanceResult>, PipelineError> {
        let records: Vec<RelevanceResult> = load(&self.layout.stage(Stage::Relevance), "relevance")?;
        check_subset("relevance", &records, "corpus", &ids(corpus))?;
        Ok(records)
    }

    fn retained_ids(relevance: &[RelevanceResult]) -> BTreeSet<&str> {
        relevance.iter().filter(|r| r.is_retained()).map(|r| r.posting_id.as_str()).collect()
    }

    pub fn load_specializations(&self, relevance: &[RelevanceResult]) -> Result<Vec<SpecAlignment>, PipelineError> {
        let records: Vec<SpecAlignment> = load(&self.layout.stage(Stage::Specializations), "specializations")?;
        check_subset("specializations", &records, "relevance", &Self::retained_ids(relevance))?;
        Ok(records)
    }

    pub fn load_skills(&self, relevance: &[RelevanceResult]) -> Result<Vec<SkillRecord>, PipelineError> {
        let records: Vec<SkillRecord> = load(&self.layout.stage(Stage::Skills), "skills")?;
        check_subset("skills", &records, "relevance", &Self::retained_ids(relevance))?;
        for r in &records {
            if let Some(n) = r.normalized.iter().find(|n| n.posting_id != r.posting_id) {
                return Err(PipelineError::validation(
                    "skills",
                    format!("record {} carries a skill of posting {}", r.posting_id, n.posting_id),
                ));
            }
        }
        Ok(records)
    }

    // ---- corpus ----

    /// Read every configured input into `ingested.jsonl` and `quarantine.jsonl`.
    pub fn ingest(&self) -> Result<StageSummary, PipelineError> {
        self.reset_from(Stage::Corpus)?;
        if self.config.inputs.is_empty() {
            return Err(PipelineError::Config("no input files configured".into()));
        }
        let allowed = self.config.platform_set();
        let known: BTreeSet<String> = synth::search_terms().iter().map(|t| text::lookup_key(t)).collect();
        let mut rows = 0usize;
        let mut postings = Vec::new();
        let mut quarantine = Vec::new();
        let mut unlisted = 0usize;
        for input in &self.config.inputs {
            let platform = input.platform.as_deref().map(Platform::new);
            let got = corpus::ingest_postings(&input.path, input.format()?, platform.as_ref(), &allowed)?;
            rows += got.rows;
            quarantine.extend(got.errors.into_iter().map(|e| QuarantineRecord {
                source: e.source,
                row: Some(e.row),
                url: None,
                reason: e.reason,
            }));
            for raw in got.postings {
                if !known.contains(&text::lookup_key(&raw.search_term)) {
                    unlisted += 1;
                }
                match corpus::canonicalize(&raw) {
                    Ok(p) => postings.push(p),
                    Err(e) => quarantine.push(QuarantineRecord {
                        source: input.path.display().to_string(),
                        row: None,
                        url: Some(raw.source_url.clone()),
                        reason: e.to_string(),
                    }),
                }
            }
        }
        write_all(&self.layout.ingested(), &postings)?;
        write_all(&self.layout.quarantine(), &quarantine)?;
        let mut s = StageSummary::new("ingest", rows, postings.len(), quarantine.len());
        if unlisted > 0 {
            s = s.note(format!("{unlisted} row(s) carry a search term outside the bundled list"));
        }
        Ok(s)
    }

    /// Collapse duplicates in `ingested.jsonl` into `corpus.jsonl`.
    pub fn dedupe(&self) -> Result<StageSummary, PipelineError> {
        let path = self.layout.ingested();
        if !path.is_file() {
            return Err(PipelineError::MissingStage("ingest".into()));
        }
        let postings: Vec<Posting> = read_lines(&path, "dedupe")?;
        let outcome = corpus::dedupe(postings, &self.config.dedup);
        write_all(&self.layout.duplicates(), &outcome.suppressed)?;
        write_atomic(&self.layout.dedup_report(), &pretty(&outcome.report))?;
        // The corpus file goes last: its presence marks the stage complete.
        write_all(&self.layout.stage(Stage::Corpus), &outcome.corpus)?;
        let r = &outcome.report;
        Ok(StageSummary::new("dedupe", r.input_count, r.surviving_count, r.input_count - r.surviving_count)
            .note(format!("{} exact and {} near duplicate(s) collapsed", r.exact_collapsed, r.near_collapsed)))
    }

    /// Ingest plus dedupe. Skipped when the corpus already exists unless forced.
    pub fn corpus(&self) -> Result<StageSummary, PipelineError> {
        let corpus_path = self.layout.stage(Stage::Corpus);
        if !self.force && corpus_path.is_file() && self.layout.dedup_report().is_file() {
            let corpus: Vec<Posting> = load(&corpus_path, "corpus")?;
            let quarantined = read_lines::<QuarantineRecord>(&self.layout.quarantine(), "corpus")?.len();
            let report: DedupReport = read_json(&self.layout.dedup_report(), "corpus")?;
            let dropped = report.input_count - report.surviving_count;
            return Ok(StageSummary::new(
                "corpus",
                corpus.len() + dropped + quarantined,
                corpus.len(),
                dropped + quarantined,
            )
            .resumed(corpus.len()));
        }
        let ingest = self.ingest()?;
        let dedupe = self.dedupe()?;
        let mut s = StageSummary::new("corpus", ingest.input, dedupe.output, ingest.quarantined + dedupe.quarantined);
        s.notes.push(format!("{} unreadable row(s) quarantined", ingest.quarantined));
        s.notes.extend(ingest.notes);
        s.notes.extend(dedupe.notes);
        Ok(s)
    }

    // ---- classification stages ----

    /// Classify `pending` in sorted chunks, appending each chunk's results.
    /// The first failure stops the stage after flushing what succeeded.
    fn classify_pending<T, F>(
        &self,
        path: &Path,
        pending: &[&Posting],
        max_parallel: usize,
        f: F,
    ) -> Result<usize, PipelineError>
    where
        T: Serialize + Send,
        F: Fn(&Posting) -> Result<T, PipelineError> + Sync,
    {
        let mut writer = Appender::open(path)?;
        let abort = AtomicBool::new(false);
        let mut written = 0;
        for chunk in pending.chunks(self.config.chunk_size) {
            let results = run_bounded(chunk, max_parallel, |p| {
                if abort.load(Ordering::Relaxed) {
                    return None;
                }
                let r = f(p);
                if r.is_err() {
                    abort.store(true, Ordering::Relaxed);
                }
                Some(r)
            });
            let mut failure = None;
            for r in results.into_iter().flatten() {
                match r {
                    Ok(record) => {
                        writer.append(&record)?;
                        written += 1;
                    }
                    Err(e) => {
                        failure.get_or_insert(e);
                    }
                }
            }
            writer.sync()?;
            if let Some(e) = failure {
                return Err(e);
            }
        }
        Ok(written)
    }

    /// Relevance screening for every corpus posting.
    pub fn screen(&self) -> Result<StageSummary, PipelineError> {
        self.reset_from(Stage::Relevance)?;
        let corpus = self.load_corpus()?;
        let done = self.load_relevance(&corpus)?;
        let done_ids = ids(&done);
        let pending: Vec<&Posting> = corpus.iter().filter(|p| !done_ids.contains(p.id.as_str())).collect();
        let client = if pending.is_empty() { None } else { Some(self.client()?) };
        if let Some(client) = &client {
            self.classify_pending(&self.layout.stage(Stage::Relevance), &pending, client.max_parallel, |p| {
                Ok(classify::screen_relevance(p, client)?)
            })?;
        }
        let all = self.load_relevance(&corpus)?;
        let count = |l: RelevanceLabel| all.iter().filter(|r| r.label == l && !r.unclassifiable).count();
        let flagged = all.iter().filter(|r| r.unclassifiable).count();
        Ok(StageSummary::new("relevance", corpus.len(), all.len(), corpus.len() - all.len()).resumed(done.len()).note(
            format!(
                "strong {}, partial {}, none {}, unclassifiable {flagged}",
                count(RelevanceLabel::Strong),
                count(RelevanceLabel::Partial),
                count(RelevanceLabel::None)
            ),
        ))
    }

    /// Postings a downstream-of-relevance stage must cover, sorted by id.
    fn retained_postings<'a>(corpus: &'a [Posting], relevance: &[RelevanceResult]) -> Vec<&'a Posting> {
        let keep = Self::retained_ids(relevance);
        corpus.iter().filter(|p| keep.contains(p.id.as_str())).collect()
    }

    fn note_unscreened(corpus: &[Posting], relevance: &[RelevanceResult], s: StageSummary) -> StageSummary {
        let missing = corpus.len() - relevance.len();
        if missing > 0 {
            s.note(format!("{missing} corpus posting(s) still lack relevance labels"))
        } else {
            s
        }
    }

    /// Eight specialization flags for every retained posting.
    pub fn classify(&self) -> Result<StageSummary, PipelineError> {
        self.reset_from(Stage::Specializations)?;
        let corpus = self.load_corpus()?;
        self.require(Stage::Relevance)?;
        let relevance = self.load_relevance(&corpus)?;
        let done = self.load_specializations(&relevance)?;
        let done_ids = ids(&done);
        let retained = Self::retained_postings(&corpus, &relevance);
        let pending: Vec<&Posting> = retained.iter().copied().filter(|p| !done_ids.contains(p.id.as_str())).collect();
        if !pending.is_empty() {
            let client = self.client()?;
            let catalog = self.catalog()?;
            let by_id: BTreeMap<&str, &RelevanceResult> =
                relevance.iter().map(|r| (r.posting_id.as_str(), r)).collect();
            self.classify_pending(&self.layout.stage(Stage::Specializations), &pending, client.max_parallel, |p| {
                Ok(classify::classify_specializations(p, by_id[p.id.as_str()], &catalog, &client)?)
            })?;
        }
        let all = self.load_specializations(&relevance)?;
        let unassigned = all.iter().filter(|a| !a.flags.any()).count();
        let partial_flags = all.iter().filter(|a| !a.unclassifiable.is_empty()).count();
        let s = StageSummary::new("specializations", retained.len(), all.len(), retained.len() - all.len())
            .resumed(done.len())
            .note(format!("unassigned {unassigned}, with unclassifiable flags {partial_flags}"));
        Ok(Self::note_unscreened(&corpus, &relevance, s))
    }

    /// Skill extraction and normalization for every retained posting.
    pub fn extract(&self) -> Result<StageSummary, PipelineError> {
        self.reset_from(Stage::Skills)?;
        let corpus = self.load_corpus()?;
        self.require(Stage::Relevance)?;
        let relevance = self.load_relevance(&corpus)?;
        let done = self.load_skills(&relevance)?;
        let done_ids = ids(&done);
        let retained = Self::retained_postings(&corpus, &relevance);
        let pending: Vec<&Posting> = retained.iter().copied().filter(|p| !done_ids.contains(p.id.as_str())).collect();
        if !pending.is_empty() {
            let client = self.client()?;
            let aliases = self.aliases()?;
            self.classify_pending(&self.layout.stage(Stage::Skills), &pending, client.max_parallel, |p| {
                let ex = skills::extract_skills(p, &client)?;
                let normalized = skills::normalize_skills(&ex.mentions, &aliases);
                Ok(SkillRecord {
                    posting_id: ex.posting_id,
                    mentions: ex.mentions,
                    normalized,
                    model_id: ex.model_id,
                    prompt_hash: ex.prompt_hash,
                    unclassifiable: ex.unclassifiable,
                    diagnostic: ex.diagnostic,
                })
            })?;
        }
        let all = self.load_skills(&relevance)?;
        let mentions: usize = all.iter().map(|r| r.mentions.len()).sum();
        let normalized: usize = all.iter().map(|r| r.normalized.len()).sum();
        let flagged = all.iter().filter(|r| r.unclassifiable).count();
        let s = StageSummary::new("skills", retained.len(), all.len(), retained.len() - all.len())
            .resumed(done.len())
            .note(format!("{mentions} mention(s), {normalized} normalized skill(s), unclassifiable {flagged}"));
        Ok(Self::note_unscreened(&corpus, &relevance, s))
    }

    /// Re-normalize stored mentions with the configured alias map.
    pub fn normalize(&self) -> Result<StageSummary, PipelineError> {
        let corpus = self.load_corpus()?;
        let relevance = self.load_relevance(&corpus)?;
        self.require(Stage::Skills)?;
        let mut records = self.load_skills(&relevance)?;
        let aliases = self.aliases()?;
        let mut changed = 0;
        for r in &mut records {
            let fresh = skills::normalize_skills(&r.mentions, &aliases);
            if fresh != r.normalized {
                changed += 1;
                r.normalized = fresh;
            }
        }
        records.sort_by(|a, b| a.posting_id.cmp(&b.posting_id));
        write_all(&self.layout.stage(Stage::Skills), &records)?;
        Ok(StageSummary::new("normalize", records.len(), records.len(), 0).note(format!("{changed} record(s) changed")))
    }

    // ---- analytics and reports ----

    /// Load every classification stage and insist it is complete.
    fn complete_stages(&self) -> Result<CompleteStages, PipelineError> {
        let corpus = self.load_corpus()?;
        for s in [Stage::Relevance, Stage::Specializations, Stage::Skills] {
            self.require(s)?;
        }
        let mut relevance = self.load_relevance(&corpus)?;
        let mut aligns = self.load_specializations(&relevance)?;
        let mut skill_records = self.load_skills(&relevance)?;
        let incomplete = |stage: &str, have: usize, want: usize| {
            if have < want {
                Err(PipelineError::validation(stage, format!("{} of {want} posting(s) still pending", want - have)))
            } else {
                Ok(())
            }
        };
        incomplete("relevance", relevance.len(), corpus.len())?;
        let retained = Self::retained_ids(&relevance).len();
        incomplete("specializations", aligns.len(), retained)?;
        incomplete("skills", skill_records.len(), retained)?;
        relevance.sort_by(|a, b| a.posting_id.cmp(&b.posting_id));
        aligns.sort_by(|a, b| a.posting_id.cmp(&b.posting_id));
        skill_records.sort_by(|a, b| a.posting_id.cmp(&b.posting_id));
        Ok((corpus, relevance, aligns, skill_records))
    }

    pub fn analyze(&self) -> Result<StageSummary, PipelineError> {
        self.reset_from(Stage::Analytics)?;
        let (corpus, relevance, aligns, skill_records) = self.complete_stages()?;
        let normalized: Vec<NormalizedSkill> = skill_records.into_iter().flat_map(|r| r.normalized).collect();
        let report = analytics::analyze(&relevance, &aligns, &normalized, corpus.len(), &self.config.analytics)?;
        write_atomic(&self.layout.stage(Stage::Analytics), &pretty(&report))?;
        Ok(StageSummary::new("analytics", aligns.len(), report.rows_all, aligns.len() - report.rows_all).note(format!(
            "retained {} of {} ({}); unassigned {} of {} all, {} of {} strong",
            report.retention.retained,
            report.retention.total_input,
            report::percent(report.retention.retained, report.retention.total_input, 1),
            report.unassigned_all,
            report.rows_all,
            report.unassigned_strong,
            report.rows_strong,
        )))
    }

    pub fn load_analytics(&self) -> Result<AnalyticsReport, PipelineError> {
        let path = self.require(Stage::Analytics)?;
        read_json(&path, "analytics")
    }

    /// Tables, figures and the manifest, rebuilt from the stage files.
    pub fn report(&self) -> Result<StageSummary, PipelineError> {
        self.reset_from(Stage::Reports)?;
        let report = self.load_analytics()?;
        let (corpus, relevance, aligns, skill_records) = self.complete_stages()?;
        let reports = self.layout.reports();
        let figures = self.layout.figures();
        for dir in [&reports, &figures] {
            fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        }

        let shares = [
            (TierFilter::All, report.market_share_all.clone()),
            (TierFilter::StrongOnly, report.market_share_strong.clone()),
        ];
        let tables = [
            (REPORT_TABLES[0], Table::Shares(&shares)),
            (REPORT_TABLES[1], Table::Skills(&report.technical)),
            (REPORT_TABLES[2], Table::Modalities(&report.modalities)),
            (REPORT_TABLES[3], Table::Skills(&report.technology)),
        ];
        let mut files = 0;
        for (name, table) in tables {
            for format in [TableFormat::Csv, TableFormat::Md] {
                let path = reports.join(format!("{name}.{}", format.extension()));
                report::emit_table(table, format, &path, true)?;
                files += 1;
            }
        }
        write_atomic(&reports.join("phi_matrix.csv"), report::phi_csv(&report.phi).as_bytes())?;
        let matrix = analytics::build_alignment_matrix(&relevance, &aligns)?;
        let mut buf = Vec::new();
        matrix.write_csv(&mut buf).map_err(|e| PipelineError::validation("reports", e.to_string()))?;
        write_atomic(&reports.join("alignment_matrix.csv"), &buf)?;
        report::render_bar_chart(&report.market_share_all, &figures.join(FIGURES[0]))?;
        report::render_heatmap(&report.phi, &figures.join(FIGURES[1]))?;
        files += 4;

        let manifest = self.manifest(&corpus, &relevance, &aligns, &skill_records, &report);
        report::write_manifest(&manifest, self.layout.root())?;
        files += 1;
        Ok(StageSummary::new("reports", 1, 1, 0).note(format!("{files} file(s) written")))
    }

    fn manifest(
        &self,
        corpus: &[Posting],
        relevance: &[RelevanceResult],
        aligns: &[SpecAlignment],
        skill_records: &[SkillRecord],
        report: &AnalyticsReport,
    ) -> RunManifest {
        let root = self.layout.root();
        let record = |stage: &str, path: PathBuf, records: usize| StageRecord {
            stage: stage.to_string(),
            file: path.strip_prefix(root).unwrap_or(&path).display().to_string(),
            records,
            completed_at: mtime(&path),
        };
        let dedup: DedupReport = read_json(&self.layout.dedup_report(), "corpus").unwrap_or_default();
        let quarantined = read_lines::<QuarantineRecord>(&self.layout.quarantine(), "corpus").map_or(0, |q| q.len());
        let stages = vec![
            record("corpus", self.layout.stage(Stage::Corpus), corpus.len()),
            record("dedup", self.layout.dedup_report(), dedup.clusters.len()),
            record("relevance", self.layout.stage(Stage::Relevance), relevance.len()),
            record("specializations", self.layout.stage(Stage::Specializations), aligns.len()),
            record("skills", self.layout.stage(Stage::Skills), skill_records.len()),
            record("analytics", self.layout.stage(Stage::Analytics), report.rows_all),
        ];
        let r = &report.retention;
        let counts = BTreeMap::from([
            ("input_rows".to_string(), dedup.input_count + quarantined),
            ("quarantined".to_string(), quarantined),
            ("duplicates".to_string(), dedup.input_count - dedup.surviving_count),
            ("corpus".to_string(), corpus.len()),
            ("strong".to_string(), r.strong),
            ("partial".to_string(), r.partial),
            ("none".to_string(), r.none),
            ("unclassifiable".to_string(), r.unclassifiable),
            ("retained".to_string(), r.retained),
            ("unassigned".to_string(), report.unassigned_all),
            ("skill_mentions".to_string(), skill_records.iter().map(|s| s.mentions.len()).sum()),
            ("normalized_skills".to_string(), skill_records.iter().map(|s| s.normalized.len()).sum()),
        ]);
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: self.config.hash(),
            corpus_id: report::corpus_id(corpus.iter().map(|p| p.id.as_str())),
            model_ids: BTreeMap::from([
                ("classifier".to_string(), self.config.backend.model_id.clone()),
                ("judge".to_string(), self.config.judge().model_id.clone()),
            ]),
            prompt_hashes: prompts::ALL.iter().map(|t| (t.name.to_string(), t.hash())).collect(),
            stages,
            counts,
            generated_at: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
        }
    }

    // ---- quality assurance ----

    /// Draw a review sheet and fill in condensed summaries for the sample.
    pub fn qa_sample(
        &self,
        task: ReviewTask,
        n: usize,
        seed: u64,
        strata: Strata,
    ) -> Result<(StageSummary, PathBuf), PipelineError> {
        let corpus = self.load_corpus()?;
        self.require(Stage::Relevance)?;
        let relevance = self.load_relevance(&corpus)?;
        let population = match task {
            ReviewTask::Relevance => qa::relevance_candidates(&relevance, &[]),
            ReviewTask::Specialization => {
                self.require(Stage::Specializations)?;
                let aligns = self.load_specializations(&relevance)?;
                qa::specialization_candidates(&relevance, &aligns, &[])
            }
        };
        let mut sheet = qa::sample_for_review(&population, n, seed, strata)?;

        let summaries_path = self.layout.summaries();
        let known: Vec<CondensedSummary> = load(&summaries_path, "summaries")?;
        check_subset("summaries", &known, "corpus", &ids(&corpus))?;
        let known_ids = ids(&known);
        let by_id: BTreeMap<&str, &Posting> = corpus.iter().map(|p| (p.id.as_str(), p)).collect();
        let pending: Vec<&Posting> = sheet
            .rows
            .iter()
            .map(|r| r.posting_id.as_str())
            .filter(|id| !known_ids.contains(id))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(|id| by_id[id])
            .collect();
        if !pending.is_empty() {
            let client = self.client()?;
            self.classify_pending(&summaries_path, &pending, client.max_parallel, |p| {
                Ok(classify::condense(p, &client)?)
            })?;
        }
        let summaries: Vec<CondensedSummary> = load(&summaries_path, "summaries")?;
        let text: BTreeMap<&str, &str> =
            summaries.iter().map(|s| (s.posting_id.as_str(), s.summary.as_str())).collect();
        for row in &mut sheet.rows {
            row.summary = text.get(row.posting_id.as_str()).unwrap_or(&"").to_string();
        }
        let path = self.layout.qa().join(format!("review_{}.csv", task.as_str()));
        fs::create_dir_all(self.layout.qa()).map_err(|e| PipelineError::io(&self.layout.qa(), e))?;
        qa::write_sheet(&sheet, &path)?;
        let s = StageSummary::new("qa-sample", population.len(), sheet.rows.len(), population.len() - sheet.rows.len())
            .note(format!("sheet {}", path.display()));
        Ok((s, path))
    }

    /// Score a completed review sheet; writes `agreement_<sheet>.{json,md}`.
    pub fn qa_score(&self, sheet: &Path) -> Result<(StageSummary, Vec<AgreementStats>), PipelineError> {
        let rows = qa::read_sheet(sheet)?;
        let stats = qa::score_agreement(&rows)?;
        let stem = sheet.file_stem().and_then(|s| s.to_str()).unwrap_or("sheet");
        let dir = self.layout.qa();
        write_atomic(&dir.join(format!("agreement_{stem}.json")), &pretty(&stats))?;
        write_atomic(&dir.join(format!("agreement_{stem}.md")), qa::agreement_markdown(&stats).as_bytes())?;
        let scored: usize = stats.iter().map(|s| s.n).sum();
        let mut s = StageSummary::new("qa-score", rows.len(), scored, rows.len() - scored);
        for st in &stats {
            s = s.note(format!(
                "{}: {} of {} agree ({})",
                st.task,
                st.agreed,
                st.n,
                report::percent(st.agreed, st.n, 1)
            ));
        }
        Ok((s, stats))
    }

    /// Judge the normalized skills of retained postings, at most `limit` postings.
    pub fn qa_judge(&self, limit: Option<usize>) -> Result<StageSummary, PipelineError> {
        let corpus = self.load_corpus()?;
        let relevance = self.load_relevance(&corpus)?;
        self.require(Stage::Skills)?;
        let mut records = self.load_skills(&relevance)?;
        records.sort_by(|a, b| a.posting_id.cmp(&b.posting_id));
        let all_ids: BTreeSet<String> = records.iter().map(|r| r.posting_id.clone()).collect();
        if let Some(limit) = limit {
            records.truncate(limit);
        }
        let path = self.layout.qa().join("judge_verdicts.jsonl");
        fs::create_dir_all(self.layout.qa()).map_err(|e| PipelineError::io(&self.layout.qa(), e))?;
        if self.force {
            let _ = fs::remove_file(&path);
        }
        let done: Vec<JudgeRecord> = load(&path, "qa-judge")?;
        check_subset("qa-judge", &done, "skills", &all_ids.iter().map(String::as_str).collect())?;
        let done_ids = ids(&done);
        let by_id: BTreeMap<&str, &Posting> = corpus.iter().map(|p| (p.id.as_str(), p)).collect();
        let skill_by_id: BTreeMap<&str, &SkillRecord> = records.iter().map(|r| (r.posting_id.as_str(), r)).collect();
        let pending: Vec<&Posting> = records
            .iter()
            .filter(|r| !done_ids.contains(r.posting_id.as_str()))
            .map(|r| by_id[r.posting_id.as_str()])
            .collect();
        if !pending.is_empty() {
            let client = InferenceClient::from_config(self.config.judge())?;
            self.classify_pending(&path, &pending, client.max_parallel, |p| {
                let verdicts = qa::judge_extractions(p, &skill_by_id[p.id.as_str()].normalized, &client)?;
                Ok(JudgeRecord { posting_id: p.id.clone(), verdicts })
            })?;
        }
        let all: Vec<JudgeRecord> = load(&path, "qa-judge")?;
        let wanted = ids(&records);
        let verdicts: Vec<JudgeVerdict> =
            all.into_iter().filter(|r| wanted.contains(r.posting_id.as_str())).flat_map(|r| r.verdicts).collect();
        let rates = qa::judge_summary(&verdicts);
        write_atomic(&self.layout.qa().join("judge_summary.json"), &pretty(&rates))?;
        let mut s = StageSummary::new("qa-judge", records.len(), records.len(), 0)
            .resumed(done.iter().filter(|d| wanted.contains(d.posting_id.as_str())).count());
        for r in &rates {
            s = s.note(format!("{}: {} of {} supported", r.category, r.supported, r.judged));
        }
        Ok(s)
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, stage: &str) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::validation(stage, format!("{}: {e}", path.display())))
}

/// Print a summary line to `out` and the log.
pub fn emit(out: &mut dyn Write, summary: &StageSummary) -> Result<(), PipelineError> {
    log::info!("{summary}");
    writeln!(out, "{summary}").map_err(|e| PipelineError::io(Path::new("<stdout>"), e))
}
