#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};
use std::thread::JoinHandle;

use jobscope::analytics::TierFilter;
use jobscope::classify::{RelevanceLabel, Specialization};
use jobscope::inference::{Rulebook, SchemaId};
use jobscope::pipeline::{InputSpec, Pipeline, PipelineConfig, Stage};
use jobscope::skills::SkillCategory;
use jobscope::synth::{generate_synthetic, write_synthetic, SynthProfile, TruthRecord};

// ---- fake chat-completions server ----

pub enum Reply {
    Content(String),
    Status(u16),
    /// A 200 whose body is not a chat-completions object.
    Malformed,
}

pub struct FakeServer {
    pub url: String,
    hits: Arc<AtomicUsize>,
    stop: Arc<AtomicBool>,
    addr: SocketAddr,
    handle: Option<JoinHandle<()>>,
}

fn read_request(stream: &mut TcpStream) -> Option<String> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).ok()? == 0 {
            return None;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0u8; length];
    reader.read_exact(&mut body).ok()?;
    let value: serde_json::Value = serde_json::from_slice(&body).ok()?;
    value["messages"][0]["content"].as_str().map(str::to_string)
}

fn respond(stream: &mut TcpStream, reply: Reply) {
    let (status, body) = match reply {
        Reply::Content(text) => {
            (200, serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string())
        }
        Reply::Status(code) => (code, "{\"error\":\"fake\"}".to_string()),
        Reply::Malformed => (200, "{\"unexpected\":true}".to_string()),
    };
    let _ = write!(
        stream,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let _ = stream.flush();
}

impl FakeServer {
    /// `handler` gets the prompt and the zero-based request index.
    pub fn start<F>(handler: F) -> Self
    where
        F: Fn(&str, usize) -> Reply + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let stop = Arc::new(AtomicBool::new(false));
        let (h, s) = (hits.clone(), stop.clone());
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if s.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(mut stream) = stream else { continue };
                let Some(prompt) = read_request(&mut stream) else { continue };
                let n = h.fetch_add(1, Ordering::SeqCst);
                respond(&mut stream, handler(&prompt, n));
            }
        });
        Self { url: format!("http://{addr}"), hits, stop, addr, handle: Some(handle) }
    }

    /// Answers every request the way the bundled stub would.
    pub fn stub() -> Self {
        Self::start(|prompt, _| Reply::Content(stub_reply(prompt)))
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

impl Drop for FakeServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// A URL nothing listens on.
pub fn dead_url() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    format!("http://{addr}")
}

pub fn schema_of(prompt: &str) -> SchemaId {
    SchemaId::ALL.into_iter().find(|s| prompt.contains(s.format_hint())).expect("prompt names a schema")
}

pub fn stub_reply(prompt: &str) -> String {
    static RULES: OnceLock<Rulebook> = OnceLock::new();
    RULES.get_or_init(Rulebook::bundled).respond(schema_of(prompt), prompt)
}

// ---- numeric oracles ----

/// Textbook Pearson correlation on 0/1 vectors; `None` when either side
/// has zero variance.
pub fn pearson(a: &[bool], b: &[bool]) -> Option<f64> {
    let n = a.len() as f64;
    let x: Vec<f64> = a.iter().map(|&v| v as u8 as f64).collect();
    let y: Vec<f64> = b.iter().map(|&v| v as u8 as f64).collect();
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx.sqrt() * vy.sqrt()))
}

// ---- planted-truth expectations ----

fn admits(filter: TierFilter, tier: RelevanceLabel) -> bool {
    match filter {
        TierFilter::All => tier != RelevanceLabel::None,
        TierFilter::StrongOnly => tier == RelevanceLabel::Strong,
    }
}

pub fn tier_counts(truth: &[TruthRecord]) -> [usize; 3] {
    let c = |t| truth.iter().filter(|r| r.tier == t).count();
    [c(RelevanceLabel::Strong), c(RelevanceLabel::Partial), c(RelevanceLabel::None)]
}

/// (count, total) per specialization in canonical order.
pub fn planted_shares(truth: &[TruthRecord], filter: TierFilter) -> Vec<(usize, usize)> {
    let rows: Vec<&TruthRecord> = truth.iter().filter(|r| admits(filter, r.tier)).collect();
    Specialization::ALL.iter().map(|s| (rows.iter().filter(|r| r.specs.contains(s)).count(), rows.len())).collect()
}

/// (unassigned, rows).
pub fn planted_unassigned(truth: &[TruthRecord], filter: TierFilter) -> (usize, usize) {
    let rows: Vec<&TruthRecord> = truth.iter().filter(|r| admits(filter, r.tier)).collect();
    (rows.iter().filter(|r| r.specs.is_empty()).count(), rows.len())
}

/// Universe size and the top `k` (canonical, postings) ranked by count
/// descending then name.
pub fn planted_table(
    truth: &[TruthRecord],
    spec: Specialization,
    category: SkillCategory,
    filter: TierFilter,
    k: usize,
) -> (usize, Vec<(String, usize)>) {
    let universe: Vec<&TruthRecord> =
        truth.iter().filter(|r| admits(filter, r.tier) && r.specs.contains(&spec)).collect();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &universe {
        let names: BTreeSet<&str> =
            r.skills.iter().filter(|m| m.categories.contains(&category)).map(|m| m.canonical.as_str()).collect();
        for n in names {
            *counts.entry(n).or_default() += 1;
        }
    }
    let mut rows: Vec<(String, usize)> = counts.into_iter().map(|(n, c)| (n.to_string(), c)).collect();
    rows.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    rows.truncate(k);
    (universe.len(), rows)
}

// ---- pipeline runs ----

pub const SYNTH_N: usize = 500;
pub const SYNTH_SEED: u64 = 42;

/// Write a synthetic corpus under `dir/synth` and a config reading it.
pub fn synth_config(dir: &Path, n: usize, seed: u64, out: &str) -> (PipelineConfig, Vec<TruthRecord>) {
    let corpus = generate_synthetic(n, seed, &SynthProfile::bundled()).unwrap();
    let (postings, _) = write_synthetic(&corpus, &dir.join("synth")).unwrap();
    let config = PipelineConfig {
        inputs: vec![InputSpec { path: postings, format: None, platform: None }],
        out_dir: dir.join(out),
        ..PipelineConfig::default()
    };
    (config, corpus.truth)
}

pub fn run_all(config: &PipelineConfig) -> Pipeline {
    let p = Pipeline::new(config.clone()).unwrap();
    p.run(&Stage::ALL, &mut std::io::sink()).unwrap();
    p
}

/// Every file under `reports/` and `figures/`, keyed by relative path.
pub fn emitted(out: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for sub in ["reports", "figures"] {
        let dir = out.join(sub);
        let mut entries: Vec<PathBuf> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            files.insert(format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()), fs::read(&p).unwrap());
        }
    }
    files
}

/// The manifest with volatile timestamps blanked.
pub fn manifest_sans_timestamps(out: &Path) -> serde_json::Value {
    let mut m: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    m["generated_at"] = serde_json::Value::Null;
    for s in m["stages"].as_array_mut().unwrap() {
        s["completed_at"] = serde_json::Value::Null;
    }
    m
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Files compared against the checked-in goldens.
pub const GOLDEN_FILES: [&str; 11] = [
    "reports/market_share.csv",
    "reports/market_share.md",
    "reports/table1_technical.csv",
    "reports/table1_technical.md",
    "reports/table2_modalities.csv",
    "reports/table2_modalities.md",
    "reports/table3_technology.csv",
    "reports/table3_technology.md",
    "reports/phi_matrix.csv",
    "figures/fig1_shares.svg",
    "figures/fig2_phi.svg",
];

// ---- random corpora with injected duplicates ----

const WORDS: [&str; 24] = [
    "clinic", "client", "family", "school", "therapy", "case", "plan", "group", "review", "support", "county",
    "record", "intake", "team", "court", "health", "youth", "elder", "crisis", "policy", "grant", "audit", "shift",
    "visit",
];

pub fn raw(title: &str, employer: &str, description: &str, url: &str) -> jobscope::corpus::RawPosting {
    jobscope::corpus::RawPosting {
        source_platform: jobscope::corpus::Platform::new("indeed"),
        source_url: url.to_string(),
        search_term: "social worker".into(),
        title: title.into(),
        employer: employer.into(),
        location: "Springfield, IL".into(),
        description: description.into(),
        collected_at: chrono::NaiveDate::from_ymd_opt(2025, 12, 1).unwrap(),
    }
}

pub fn posting(title: &str, employer: &str, description: &str, url: &str) -> jobscope::corpus::Posting {
    jobscope::corpus::canonicalize(&raw(title, employer, description, url)).unwrap()
}

pub struct DupCorpus {
    pub postings: Vec<jobscope::corpus::Posting>,
    pub injected_exact: usize,
    pub injected_near: usize,
}

/// `n` distinct postings (40-word descriptions) plus exact copies that
/// differ only in url and near copies with one word changed at the end.
pub fn dup_corpus(seed: u64, n: usize) -> DupCorpus {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut postings = Vec::new();
    let (mut injected_exact, mut injected_near) = (0, 0);
    for i in 0..n {
        let title = ["Social Worker", "Therapist", "Case Manager"][rng.gen_range(0..3)];
        let employer = format!("Employer {}", rng.gen_range(0..4));
        let words: Vec<&str> = (0..40).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect();
        let description = format!("{} posting{i}", words.join(" "));
        let original = posting(title, &employer, &description, &format!("https://x/{i}"));
        for c in 0..rng.gen_range(0..3) {
            postings.push(posting(title, &employer, &description, &format!("https://x/{i}/copy{c}")));
            injected_exact += 1;
        }
        if rng.gen_bool(0.3) {
            let near = format!("{description} tail{i}");
            postings.push(posting(title, &employer, &near, &format!("https://x/{i}/near")));
            injected_near += 1;
        }
        postings.push(original);
    }
    DupCorpus { postings, injected_exact, injected_near }
}
