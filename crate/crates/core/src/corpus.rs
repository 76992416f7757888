//! Posting ingest, canonicalization and two-tier deduplication.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::text;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    FileUnreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown input format `{0}` (expected csv or jsonl)")]
    UnknownFormat(String),
    #[error("{path}: missing required column(s): {}", missing.join(", "))]
    SchemaMismatch { path: PathBuf, missing: Vec<String> },
    #[error("description is empty after canonicalization")]
    EmptyDescription,
    #[error("invalid dedup policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Csv,
    Jsonl,
}

impl InputFormat {
    /// Guess from the file extension.
    pub fn from_path(path: &Path) -> Result<Self, CorpusError> {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default();
        ext.parse()
    }
}

impl FromStr for InputFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "jsonl" | "ndjson" => Ok(Self::Jsonl),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

/// Source platform tag, lowercased.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Platform(String);

impl Platform {
    pub fn new(tag: &str) -> Self {
        Self(tag.trim().to_ascii_lowercase())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The configured set of platforms rows may be tagged with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlatformSet(BTreeSet<Platform>);

impl PlatformSet {
    pub fn new<I, S>(tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self(tags.into_iter().map(|t| Platform::new(t.as_ref())).collect())
    }

    pub fn contains(&self, platform: &Platform) -> bool {
        self.0.contains(platform)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Platform> {
        self.0.iter()
    }
}

impl Default for PlatformSet {
    fn default() -> Self {
        Self::new(["indeed", "linkedin", "glassdoor"])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawPosting {
    pub source_platform: Platform,
    pub source_url: String,
    pub search_term: String,
    pub title: String,
    pub employer: String,
    pub location: String,
    pub description: String,
    pub collected_at: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub id: String,
    pub source_platform: Platform,
    pub source_url: String,
    pub search_term: String,
    pub title: String,
    pub employer: String,
    pub location: String,
    pub description: String,
    pub collected_at: NaiveDate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplicate_of: Option<String>,
}

impl Posting {
    pub fn to_raw(&self) -> RawPosting {
        RawPosting {
            source_platform: self.source_platform.clone(),
            source_url: self.source_url.clone(),
            search_term: self.search_term.clone(),
            title: self.title.clone(),
            employer: self.employer.clone(),
            location: self.location.clone(),
            description: self.description.clone(),
            collected_at: self.collected_at,
        }
    }
}

/// A row that could not be turned into a [`RawPosting`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    pub source: String,
    /// 1-based data row (header excluded for csv, line number for jsonl).
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct Ingested {
    pub rows: usize,
    pub postings: Vec<RawPosting>,
    pub errors: Vec<RowError>,
}

pub const INPUT_COLUMNS: [&str; 8] =
    ["platform", "url", "search_term", "title", "employer", "location", "description", "collected_at"];

/// Read a posting dump. `platform` tags rows that carry no platform column or
/// an empty platform cell; a row's own platform cell wins otherwise.
///
/// Every data row ends up either in `postings` or in `errors`.
pub fn ingest_postings(
    path: &Path,
    format: InputFormat,
    platform: Option<&Platform>,
    allowed: &PlatformSet,
) -> Result<Ingested, CorpusError> {
    let content =
        fs::read_to_string(path).map_err(|source| CorpusError::FileUnreadable { path: path.to_path_buf(), source })?;
    let source = path.display().to_string();
    let builder = RowBuilder { source: &source, platform, allowed };
    match format {
        InputFormat::Csv => ingest_csv(path, &content, &builder),
        InputFormat::Jsonl => Ok(ingest_jsonl(&content, &builder)),
    }
}

struct RowBuilder<'a> {
    source: &'a str,
    platform: Option<&'a Platform>,
    allowed: &'a PlatformSet,
}

impl RowBuilder<'_> {
    fn required_columns(&self) -> impl Iterator<Item = &'static str> + '_ {
        INPUT_COLUMNS.iter().copied().filter(move |c| !(*c == "platform" && self.platform.is_some()))
    }

    fn error(&self, row: usize, reason: impl Into<String>) -> RowError {
        RowError { source: self.source.to_string(), row, reason: reason.into() }
    }

    /// `get` returns `None` for an absent field.
    fn build<'f>(&self, row: usize, get: impl Fn(&str) -> Option<&'f str>) -> Result<RawPosting, RowError> {
        let missing: Vec<&str> = self.required_columns().filter(|c| get(c).is_none()).collect();
        if !missing.is_empty() {
            return Err(self.error(row, format!("missing field(s): {}", missing.join(", "))));
        }
        let field = |name: &str| get(name).unwrap_or_default().to_string();

        let platform = match get("platform").map(str::trim).filter(|p| !p.is_empty()) {
            Some(tag) => Platform::new(tag),
            None => match self.platform {
                Some(p) => p.clone(),
                None => return Err(self.error(row, "no platform given")),
            },
        };
        if !self.allowed.contains(&platform) {
            return Err(self.error(row, format!("platform `{platform}` is not configured")));
        }
        let collected_at = parse_date(&field("collected_at"))
            .ok_or_else(|| self.error(row, format!("bad collected_at `{}`", field("collected_at"))))?;

        Ok(RawPosting {
            source_platform: platform,
            source_url: field("url"),
            search_term: field("search_term"),
            title: field("title"),
            employer: field("employer"),
            location: field("location"),
            description: field("description"),
            collected_at,
        })
    }
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .or_else(|| chrono::DateTime::parse_from_rfc3339(s).ok().map(|dt| dt.date_naive()))
}

fn ingest_csv(path: &Path, content: &str, builder: &RowBuilder<'_>) -> Result<Ingested, CorpusError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(content.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| CorpusError::FileUnreadable {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        })?
        .clone();
    let index: HashMap<String, usize> =
        headers.iter().enumerate().map(|(i, h)| (h.trim().to_ascii_lowercase(), i)).collect();
    let missing: Vec<String> =
        builder.required_columns().filter(|c| !index.contains_key(*c)).map(str::to_string).collect();
    if !missing.is_empty() {
        return Err(CorpusError::SchemaMismatch { path: path.to_path_buf(), missing });
    }

    let mut out = Ingested::default();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        out.rows += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                out.errors.push(builder.error(row, format!("unparseable csv row: {e}")));
                continue;
            }
        };
        if record.len() != headers.len() {
            out.errors.push(builder.error(row, format!("expected {} fields, found {}", headers.len(), record.len())));
            continue;
        }
        match builder.build(row, |name| index.get(name).and_then(|&i| record.get(i))) {
            Ok(p) => out.postings.push(p),
            Err(e) => out.errors.push(e),
        }
    }
    Ok(out)
}

fn ingest_jsonl(content: &str, builder: &RowBuilder<'_>) -> Ingested {
    let mut out = Ingested::default();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = i + 1;
        out.rows += 1;
        let value: serde_json::Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => {
                out.errors.push(builder.error(row, format!("invalid json: {e}")));
                continue;
            }
        };
        let Some(obj) = value.as_object() else {
            out.errors.push(builder.error(row, "row is not a json object"));
            continue;
        };
        if let Some((key, _)) = INPUT_COLUMNS
            .iter()
            .filter_map(|k| obj.get(*k).map(|v| (k, v)))
            .find(|(_, v)| !v.is_string() && !v.is_null())
        {
            out.errors.push(builder.error(row, format!("field `{key}` is not a string")));
            continue;
        }
        match builder.build(row, |name| obj.get(name).and_then(|v| v.as_str())) {
            Ok(p) => out.postings.push(p),
            Err(e) => out.errors.push(e),
        }
    }
    out
}

fn clean_field(s: &str) -> String {
    text::collapse_whitespace(&text::nfkc(s))
}

/// Stable content hash over the lowercased canonical title, employer,
/// location and description.
pub fn posting_id(title: &str, employer: &str, location: &str, description: &str) -> String {
    let mut hasher = Sha256::new();
    for (i, part) in [title, employer, location, description].iter().enumerate() {
        if i > 0 {
            hasher.update([0x1f]);
        }
        hasher.update(part.to_lowercase().as_bytes());
    }
    hex::encode(hasher.finalize())
}

pub fn canonicalize(raw: &RawPosting) -> Result<Posting, CorpusError> {
    let description = clean_field(&raw.description);
    if description.is_empty() {
        return Err(CorpusError::EmptyDescription);
    }
    let title = clean_field(&raw.title);
    let employer = clean_field(&raw.employer);
    let location = clean_field(&raw.location);
    Ok(Posting {
        id: posting_id(&title, &employer, &location, &description),
        source_platform: raw.source_platform.clone(),
        source_url: raw.source_url.trim().to_string(),
        search_term: clean_field(&raw.search_term),
        title,
        employer,
        location,
        description,
        collected_at: raw.collected_at,
        duplicate_of: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BlockingKey {
    #[default]
    TitleEmployer,
    Title,
    Employer,
    /// One block for the whole corpus.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DedupPolicy {
    pub exact: bool,
    pub near: bool,
    pub shingle_size: usize,
    pub jaccard_threshold: f64,
    pub blocking_key: BlockingKey,
}

impl Default for DedupPolicy {
    fn default() -> Self {
        Self {
            exact: true,
            near: true,
            shingle_size: 5,
            jaccard_threshold: 0.9,
            blocking_key: BlockingKey::TitleEmployer,
        }
    }
}

impl DedupPolicy {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if !(self.jaccard_threshold > 0.0 && self.jaccard_threshold <= 1.0) {
            return Err(CorpusError::InvalidPolicy(format!(
                "jaccard_threshold must be in (0, 1], got {}",
                self.jaccard_threshold
            )));
        }
        if self.shingle_size < 2 {
            return Err(CorpusError::InvalidPolicy(format!(
                "shingle_size must be at least 2, got {}",
                self.shingle_size
            )));
        }
        // Identical ids must never survive side by side.
        if !self.exact && !self.near {
            return Err(CorpusError::InvalidPolicy("at least one dedup tier must be enabled".into()));
        }
        Ok(())
    }

    fn block_of(&self, p: &Posting) -> String {
        match self.blocking_key {
            BlockingKey::TitleEmployer => format!("{}\u{1f}{}", p.title.to_lowercase(), p.employer.to_lowercase()),
            BlockingKey::Title => p.title.to_lowercase(),
            BlockingKey::Employer => p.employer.to_lowercase(),
            BlockingKey::None => String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupCluster {
    pub survivor: String,
    /// Every collapsed input occurrence; exact copies repeat the id they copy.
    pub suppressed: Vec<String>,
    pub max_jaccard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DedupReport {
    pub input_count: usize,
    pub surviving_count: usize,
    pub exact_collapsed: usize,
    pub near_collapsed: usize,
    pub clusters: Vec<DedupCluster>,
}

#[derive(Debug, Clone, Default)]
pub struct DedupOutcome {
    /// Survivors, sorted by id.
    pub corpus: Vec<Posting>,
    /// Collapsed records with `duplicate_of` set, sorted by (survivor, id).
    pub suppressed: Vec<Posting>,
    pub report: DedupReport,
}

/// Word shingles of the lowercased description. Texts shorter than `size`
/// words yield a single shingle of all their words.
pub fn shingles(description: &str, size: usize) -> HashSet<String> {
    let words = text::words(description);
    if words.len() < size {
        return std::iter::once(words.join(" ")).collect();
    }
    words.windows(size).map(|w| w.join(" ")).collect()
}

pub fn jaccard(a: &HashSet<String>, b: &HashSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

fn record_order(p: &Posting) -> (&str, &str, &str, NaiveDate) {
    (p.source_platform.as_str(), &p.source_url, &p.search_term, p.collected_at)
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Keeps the smaller index as root so roots are the smallest member.
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Collapse exact and near duplicates. The survivor of every cluster is its
/// lexicographically smallest id; among byte-identical copies the record
/// with the smallest (platform, url, search term, date) is kept, so the
/// outcome never depends on input order.
pub fn dedupe(postings: Vec<Posting>, policy: &DedupPolicy) -> DedupOutcome {
    let input_count = postings.len();

    // Tier 1: group by id.
    let mut by_id: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
    for p in postings {
        by_id.entry(p.id.clone()).or_default().push(p);
    }
    let mut uniques: Vec<Posting> = Vec::with_capacity(by_id.len());
    let mut copies: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
    for (id, mut group) in by_id {
        group.sort_by(|a, b| record_order(a).cmp(&record_order(b)));
        let mut rest = group.split_off(1);
        uniques.push(group.pop().expect("group is non-empty"));
        if !rest.is_empty() {
            for c in &mut rest {
                c.duplicate_of = Some(id.clone());
            }
            copies.insert(id, rest);
        }
    }
    let exact_collapsed: usize = copies.values().map(Vec::len).sum();

    // Tier 2: union near-duplicates inside each block. `uniques` is sorted by
    // id, so component roots are the smallest id.
    let mut sets = DisjointSet::new(uniques.len());
    let mut best: HashMap<usize, f64> = HashMap::new();
    if policy.near {
        let mut blocks: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, p) in uniques.iter().enumerate() {
            blocks.entry(policy.block_of(p)).or_default().push(i);
        }
        let shingled: Vec<HashSet<String>> =
            uniques.iter().map(|p| shingles(&p.description, policy.shingle_size)).collect();
        let mut pair_scores: Vec<(usize, usize, f64)> = Vec::new();
        for members in blocks.values() {
            for (x, &a) in members.iter().enumerate() {
                for &b in &members[x + 1..] {
                    let j = jaccard(&shingled[a], &shingled[b]);
                    if j >= policy.jaccard_threshold {
                        sets.union(a, b);
                    }
                    pair_scores.push((a, b, j));
                }
            }
        }
        for (a, b, j) in pair_scores {
            let (ra, rb) = (sets.find(a), sets.find(b));
            if ra == rb {
                let e = best.entry(ra).or_insert(0.0);
                *e = e.max(j);
            }
        }
    }

    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..uniques.len() {
        let root = sets.find(i);
        members.entry(root).or_default().push(i);
    }

    let mut corpus = Vec::new();
    let mut suppressed = Vec::new();
    let mut clusters = Vec::new();
    let mut near_collapsed = 0usize;
    let mut slots: Vec<Option<Posting>> = uniques.into_iter().map(Some).collect();
    for (root, group) in members {
        let survivor = slots[root].take().expect("root visited once");
        let survivor_id = survivor.id.clone();
        let mut cluster_ids = Vec::new();
        let mut folded = Vec::new();
        for &m in &group {
            let id = if m == root {
                survivor_id.clone()
            } else {
                let mut p = slots[m].take().expect("member visited once");
                p.duplicate_of = Some(survivor_id.clone());
                near_collapsed += 1;
                cluster_ids.push(p.id.clone());
                let id = p.id.clone();
                folded.push(p);
                id
            };
            if let Some(extra) = copies.remove(&id) {
                for mut c in extra {
                    c.duplicate_of = Some(survivor_id.clone());
                    cluster_ids.push(c.id.clone());
                    folded.push(c);
                }
            }
        }
        if !cluster_ids.is_empty() {
            cluster_ids.sort();
            clusters.push(DedupCluster {
                survivor: survivor_id,
                suppressed: cluster_ids,
                max_jaccard: if group.len() > 1 { best.get(&root).copied().unwrap_or(1.0) } else { 1.0 },
            });
        }
        folded.sort_by(|a, b| (&a.id, record_order(a)).cmp(&(&b.id, record_order(b))));
        suppressed.extend(folded);
        corpus.push(survivor);
    }
    corpus.sort_by(|a, b| a.id.cmp(&b.id));

    // Identical ids share block and shingles, so with the exact tier off
    // the near tier would fold them at Jaccard 1.0 anyway.
    let (exact_collapsed, near_collapsed) =
        if policy.exact { (exact_collapsed, near_collapsed) } else { (0, near_collapsed + exact_collapsed) };

    DedupOutcome {
        report: DedupReport { input_count, surviving_count: corpus.len(), exact_collapsed, near_collapsed, clusters },
        corpus,
        suppressed,
    }
}
