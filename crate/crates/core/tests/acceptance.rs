//! One PASS/FAIL line per acceptance criterion. Exits non-zero when a gating
//! criterion fails. `UPDATE_GOLDEN=1` rewrites the checked-in goldens.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use jobscope::analytics::{build_alignment_matrix, market_share, phi, unassigned_rate, PhiValue, TierFilter};
use jobscope::classify::{classify_specializations, screen_relevance, RelevanceLabel, SpecCatalog, Specialization};
use jobscope::corpus::{canonicalize, dedupe, jaccard, shingles, DedupPolicy};
use jobscope::inference::{BackendConfig, InferenceClient, ENV_BACKEND_URL, ENV_MODEL_ID};
use jobscope::pipeline::{Pipeline, Stage};
use jobscope::report::percent;
use jobscope::skills::{as_mentions, normalize_skills, AliasMap, RequirementLevel, SkillCategory, SkillMention};
use jobscope::synth::{generate_synthetic, SynthProfile};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Criterion {
    name: &'static str,
    budget: Option<Duration>,
    gating: bool,
}

fn evaluate(c: &Criterion, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let outcome = match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(format!(
            "panicked: {}",
            p.downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default()
        )),
    };
    let elapsed = start.elapsed();
    let outcome = match (outcome, c.budget) {
        (Ok(_), Some(b)) if elapsed > b => Err(format!("took {:.2}s, budget {}s", elapsed.as_secs_f64(), b.as_secs())),
        (o, _) => o,
    };
    let tag = if c.gating { "" } else { " (non-gating)" };
    let budget = c.budget.map_or(String::new(), |b| format!(" / {}s", b.as_secs()));
    match &outcome {
        Ok(detail) => println!("PASS{tag} {}: {detail} [{:.2}s{budget}]", c.name, elapsed.as_secs_f64()),
        Err(detail) => println!("FAIL{tag} {}: {detail} [{:.2}s{budget}]", c.name, elapsed.as_secs_f64()),
    }
    outcome.is_ok() || !c.gating
}

// ---- 1 ----

fn published_ratios() -> Check {
    let cases =
        [(23_732, 41_584, "57.1%"), (16_597, 23_732, "69.9%"), (5_363, 23_732, "22.6%"), (5_314, 23_732, "22.4%")];
    for (count, total, shown) in cases {
        let got = percent(count, total, 1);
        ensure(got == shown, || format!("{count}/{total} rendered {got}, expected {shown}"))?;
    }
    Ok(format!("{} ratios exact at one decimal", cases.len()))
}

// ---- 2 ----

fn phi_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37);
    let mut worst = 0.0f64;
    let mut pairs = 0;
    while pairs < 1000 {
        let len = rng.gen_range(10..=200);
        let (pa, pb) = (rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95));
        let a: Vec<bool> = (0..len).map(|_| rng.gen_bool(pa)).collect();
        let b: Vec<bool> = (0..len).map(|_| rng.gen_bool(pb)).collect();
        let Some(r) = common::pearson(&a, &b) else { continue };
        match phi(&a, &b).map_err(|e| e.to_string())? {
            PhiValue::Defined(v) => worst = worst.max((v - r).abs()),
            PhiValue::Undefined(why) => return Err(format!("non-degenerate pair of length {len} undefined: {why}")),
        }
        pairs += 1;
    }
    ensure(worst <= 1e-12, || format!("max |phi - pearson| = {worst:e}"))?;

    let mut degenerate = 0;
    for _ in 0..200 {
        let len = rng.gen_range(10..=200);
        let constant = vec![rng.gen_bool(0.5); len];
        let other: Vec<bool> = (0..len).map(|_| rng.gen_bool(0.5)).collect();
        let (a, b) = if rng.gen_bool(0.5) { (constant, other) } else { (other, constant) };
        ensure(matches!(phi(&a, &b), Ok(PhiValue::Undefined(_))), || {
            format!("degenerate pair of length {len} got a number")
        })?;
        degenerate += 1;
    }
    Ok(format!("{pairs} pairs, max |phi - pearson| = {worst:.1e}; {degenerate} degenerate pairs undefined"))
}

// ---- 3 ----

struct Baseline {
    _dir: tempfile::TempDir,
    config: jobscope::pipeline::PipelineConfig,
    truth: Vec<jobscope::synth::TruthRecord>,
    files: BTreeMap<String, Vec<u8>>,
    manifest: serde_json::Value,
}

fn baseline() -> Baseline {
    let dir = tempfile::tempdir().unwrap();
    let (config, truth) = common::synth_config(dir.path(), common::SYNTH_N, common::SYNTH_SEED, "baseline");
    common::run_all(&config);
    let files = common::emitted(&config.out_dir);
    let manifest = common::manifest_sans_timestamps(&config.out_dir);
    Baseline { _dir: dir, config, truth, files, manifest }
}

fn planted_truth(base: &Baseline) -> Check {
    let p = Pipeline::new(base.config.clone()).map_err(|e| e.to_string())?;
    let corpus = p.load_corpus().map_err(|e| e.to_string())?;
    let relevance = p.load_relevance(&corpus).map_err(|e| e.to_string())?;
    let report = p.load_analytics().map_err(|e| e.to_string())?;
    let truth = &base.truth;

    ensure(corpus.len() == truth.len(), || format!("corpus has {} postings, planted {}", corpus.len(), truth.len()))?;
    let count = |l| relevance.iter().filter(|r| r.label == l && !r.unclassifiable).count();
    let got = [count(RelevanceLabel::Strong), count(RelevanceLabel::Partial), count(RelevanceLabel::None)];
    let want = common::tier_counts(truth);
    ensure(got == want, || format!("tiers {got:?}, planted {want:?}"))?;

    for (filter, shares, unassigned, rows) in [
        (TierFilter::All, &report.market_share_all, report.unassigned_all, report.rows_all),
        (TierFilter::StrongOnly, &report.market_share_strong, report.unassigned_strong, report.rows_strong),
    ] {
        for (s, (count, total)) in shares.iter().zip(common::planted_shares(truth, filter)) {
            ensure(s.count == count && s.total == total && s.share == count as f64 / total as f64, || {
                format!("{} {}: {}/{}, planted {count}/{total}", filter.as_str(), s.spec.key(), s.count, s.total)
            })?;
        }
        let (u, n) = common::planted_unassigned(truth, filter);
        ensure((unassigned, rows) == (u, n), || {
            format!("{} unassigned {unassigned}/{rows}, planted {u}/{n}", filter.as_str())
        })?;
    }

    let k = base.config.analytics.top_k;
    let mut tables = 0;
    for (category, got) in
        [(SkillCategory::Technical, &report.technical), (SkillCategory::Technology, &report.technology)]
    {
        for t in got {
            let (universe, rows) = common::planted_table(truth, t.spec, category, TierFilter::StrongOnly, k);
            let got_rows: Vec<(String, usize)> = t.rows.iter().map(|r| (r.canonical.clone(), r.count)).collect();
            ensure(t.universe == universe && got_rows == rows, || {
                format!(
                    "{} {}: {} {:?}, planted {} {:?}",
                    category.as_str(),
                    t.spec.key(),
                    t.universe,
                    got_rows,
                    universe,
                    rows
                )
            })?;
            tables += 1;
        }
    }
    Ok(format!(
        "n={} tiers {:?}, shares for 8 specs x 2 tiers, 2 unassigned rates, {tables} top-{k} tables exact",
        truth.len(),
        want
    ))
}

// ---- 4 ----

fn tear(path: &Path) -> usize {
    let text = fs::read_to_string(path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let keep = lines.len() / 2;
    let last = lines[keep];
    fs::write(path, format!("{}\n{}", lines[..keep].join("\n"), &last[..last.len() / 2])).unwrap();
    keep
}

fn resume_equivalence(base: &Baseline) -> Check {
    let dir = tempfile::tempdir().unwrap();
    let compare = |config: &jobscope::pipeline::PipelineConfig, label: &str| -> Result<(), String> {
        let p = Pipeline::new(config.clone()).map_err(|e| e.to_string())?;
        p.run(&Stage::ALL, &mut std::io::sink()).map_err(|e| format!("{label}: {e}"))?;
        let files = common::emitted(&config.out_dir);
        if files != base.files {
            let differ: Vec<&String> =
                base.files.keys().chain(files.keys()).filter(|k| base.files.get(*k) != files.get(*k)).collect();
            return Err(format!("{label}: {differ:?} differ"));
        }
        ensure(common::manifest_sans_timestamps(&config.out_dir) == base.manifest, || {
            format!("{label}: manifest differs")
        })
    };

    let mut cases = 0;
    for k in 1..Stage::ALL.len() {
        let mut config = base.config.clone();
        config.out_dir = dir.path().join(format!("after_{}", Stage::ALL[k - 1].as_str()));
        Pipeline::new(config.clone())
            .unwrap()
            .run(&Stage::ALL[..k], &mut std::io::sink())
            .map_err(|e| e.to_string())?;
        compare(&config, &format!("stopped after {}", Stage::ALL[k - 1].as_str()))?;
        cases += 1;
    }
    for (k, stage) in [(2, Stage::Relevance), (3, Stage::Specializations), (4, Stage::Skills)] {
        let mut config = base.config.clone();
        config.out_dir = dir.path().join(format!("torn_{}", stage.as_str()));
        let p = Pipeline::new(config.clone()).unwrap();
        p.run(&Stage::ALL[..k], &mut std::io::sink()).map_err(|e| e.to_string())?;
        tear(&p.layout().stage(stage));
        compare(&config, &format!("torn in {}", stage.as_str()))?;
        cases += 1;
    }
    Ok(format!("{cases} interrupted runs byte-identical to the uninterrupted one"))
}

// ---- 5 ----

fn dedup_suite() -> Check {
    let policy = DedupPolicy::default();
    for seed in 0..200u64 {
        let n = 5 + (seed as usize % 36);
        let c = common::dup_corpus(seed, n);
        let input = c.postings.len();
        let mut shuffled = c.postings.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xfeed));
        let out = dedupe(c.postings, &policy);
        let r = &out.report;
        ensure(r.surviving_count + r.exact_collapsed + r.near_collapsed == input && r.input_count == input, || {
            format!("seed {seed}: {} + {} + {} != {input}", r.surviving_count, r.exact_collapsed, r.near_collapsed)
        })?;
        ensure(out.corpus.len() + out.suppressed.len() == input, || format!("seed {seed}: records lost"))?;
        ensure(
            r.exact_collapsed == c.injected_exact && r.near_collapsed == c.injected_near && out.corpus.len() == n,
            || {
                format!(
                    "seed {seed}: collapsed {}/{} of injected {}/{}",
                    r.exact_collapsed, r.near_collapsed, c.injected_exact, c.injected_near
                )
            },
        )?;
        let again = dedupe(out.corpus.clone(), &policy);
        ensure(again.corpus == out.corpus && again.suppressed.is_empty(), || format!("seed {seed}: not idempotent"))?;
        let reordered = dedupe(shuffled, &policy);
        ensure(
            reordered.corpus == out.corpus && reordered.suppressed == out.suppressed && reordered.report == out.report,
            || format!("seed {seed}: depends on input order"),
        )?;
    }

    let a: Vec<String> = (1..=24).map(|i| format!("w{i}")).collect();
    let b: Vec<String> = (2..=25).map(|i| format!("w{i}")).collect();
    let (a, b) = (a.join(" "), b.join(" "));
    let j = jaccard(&shingles(&a, 5), &shingles(&b, 5));
    let pair = || vec![common::posting("T", "E", &a, "u1"), common::posting("T", "E", &b, "u2")];
    let at = |t| DedupPolicy { jaccard_threshold: t, ..DedupPolicy::default() };
    ensure(dedupe(pair(), &at(0.9)).corpus.len() == 1, || format!("pair (J={j:.4}) survived at 0.9"))?;
    ensure(dedupe(pair(), &at(0.95)).corpus.len() == 2, || format!("pair (J={j:.4}) collapsed at 0.95"))?;
    Ok(format!(
        "200 corpora idempotent, order-insensitive and conserved; pair J={j:.4} collapses at 0.9, survives at 0.95"
    ))
}

// ---- 6 ----

fn mutate(rng: &mut ChaCha8Rng, s: &str) -> String {
    let mut out: String = s
        .chars()
        .map(|c| match rng.gen_range(0..6) {
            0 => c.to_ascii_uppercase(),
            1 => c.to_ascii_lowercase(),
            _ => c,
        })
        .collect();
    if rng.gen_bool(0.3) {
        out = out.replace(' ', ["-", "  ", " / ", "_"][rng.gen_range(0..4)]);
    }
    if rng.gen_bool(0.2) {
        out.push_str([".", ",", ";", " "][rng.gen_range(0..4)]);
    }
    out
}

fn random_string(rng: &mut ChaCha8Rng) -> String {
    const POOL: &[char] =
        &['a', 'B', 'z', ' ', '-', '.', '/', '_', 'é', 'ß', 'Ω', 'ﬁ', '１', '\u{2013}', '\t', '0', 'İ'];
    (0..rng.gen_range(0..20)).map(|_| POOL[rng.gen_range(0..POOL.len())]).collect()
}

fn normalization() -> Check {
    let map = AliasMap::bundled();
    let fixtures = ["CBT", "cognitive behavioral", "cognitive-behavioral therapy"];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut variants: Vec<String> = fixtures.iter().map(|s| s.to_string()).collect();
    for f in fixtures {
        variants.extend([f.to_uppercase(), f.to_lowercase(), format!("{f}."), f.replace(['-', ' '], "  ")]);
        variants.extend((0..10).map(|_| mutate(&mut rng, f)));
    }
    for v in &variants {
        let got = map.lookup(v, SkillCategory::TherapeuticModality).map(|(c, _)| c.to_string());
        ensure(got.as_deref() == Some("Cognitive Behavioral Therapy"), || format!("{v:?} -> {got:?}"))?;
    }

    let surfaces: Vec<String> =
        map.entries().iter().flat_map(|e| std::iter::once(&e.canonical).chain(&e.aliases)).cloned().collect();
    let mentions: Vec<SkillMention> = (0..1000)
        .map(|i| {
            let surface = match i % 3 {
                0 => {
                    let pick = rng.gen_range(0..surfaces.len());
                    mutate(&mut rng, &surfaces[pick])
                }
                1 => random_string(&mut rng),
                _ => surfaces[rng.gen_range(0..surfaces.len())].clone(),
            };
            SkillMention {
                posting_id: format!("p{}", i % 50),
                surface,
                category: SkillCategory::ALL[rng.gen_range(0..4)],
                level: RequirementLevel::ALL[rng.gen_range(0..3)],
            }
        })
        .collect();
    let once = normalize_skills(&mentions, &map);
    let twice = normalize_skills(&as_mentions(&once), &map);
    let key = |v: &[jobscope::skills::NormalizedSkill]| {
        v.iter()
            .map(|s| (s.posting_id.clone(), s.canonical.clone(), s.category, s.level, s.is_canonical))
            .collect::<Vec<_>>()
    };
    ensure(key(&once) == key(&twice), || "normalization is not idempotent".into())?;
    Ok(format!("{} fixture variants map to one canonical; idempotent on 1000 random mentions", variants.len()))
}

// ---- 7 ----

/// (row, col, subset, printed value or None when hatched) per heatmap cell.
fn heatmap_cells(svg: &str) -> Vec<(String, String, String, Option<String>)> {
    let attr = |line: &str, name: &str| {
        let start = line.find(&format!("{name}=\"")).unwrap() + name.len() + 2;
        line[start..start + line[start..].find('"').unwrap()].to_string()
    };
    let lines: Vec<&str> = svg.lines().collect();
    let mut cells = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if !line.contains("data-subset") {
            continue;
        }
        let value = match lines.get(i + 1) {
            Some(next) if next.starts_with("<text") && !line.contains("url(#hatch)") => {
                let start = next.find('>').unwrap() + 1;
                Some(next[start..next.rfind("</text>").unwrap()].to_string())
            }
            _ => None,
        };
        cells.push((attr(line, "data-row"), attr(line, "data-col"), attr(line, "data-subset"), value));
    }
    cells
}

fn golden_reports(base: &Baseline) -> Check {
    let dir = common::golden_dir();
    let update = std::env::var("UPDATE_GOLDEN").is_ok_and(|v| v == "1");
    if update {
        fs::create_dir_all(&dir).unwrap();
    }
    for name in common::GOLDEN_FILES {
        let got = base.files.get(name).ok_or_else(|| format!("{name} was not emitted"))?;
        let path: PathBuf = dir.join(Path::new(name).file_name().unwrap());
        if update {
            fs::write(&path, got).unwrap();
            continue;
        }
        let want = fs::read(&path).map_err(|e| format!("{}: {e} (run with UPDATE_GOLDEN=1)", path.display()))?;
        ensure(&want == got, || format!("{name} differs from {}", path.display()))?;
    }

    // A second run from scratch must match byte for byte.
    let scratch = tempfile::tempdir().unwrap();
    let mut again = base.config.clone();
    again.out_dir = scratch.path().join("again");
    common::run_all(&again);
    let rerun = common::emitted(&again.out_dir);
    for name in common::GOLDEN_FILES {
        ensure(rerun.get(name) == base.files.get(name), || format!("{name} differs across runs"))?;
    }

    // Lower triangle from all retained rows, upper from Strong rows.
    let p = Pipeline::new(base.config.clone()).unwrap();
    let corpus = p.load_corpus().unwrap();
    let relevance = p.load_relevance(&corpus).unwrap();
    let aligns = p.load_specializations(&relevance).unwrap();
    let matrix = build_alignment_matrix(&relevance, &aligns).unwrap();
    let abbrev: BTreeMap<&str, Specialization> = Specialization::ALL.iter().map(|s| (s.abbrev(), *s)).collect();
    let svg = String::from_utf8(base.files["figures/fig2_phi.svg"].clone()).unwrap();
    let cells = heatmap_cells(&svg);
    ensure(cells.len() == 64, || format!("{} heatmap cells", cells.len()))?;
    for (row, col, subset, value) in &cells {
        let (r, c) = (abbrev[row.as_str()], abbrev[col.as_str()]);
        let filter = match r.index().cmp(&c.index()) {
            std::cmp::Ordering::Greater => TierFilter::All,
            std::cmp::Ordering::Less => TierFilter::StrongOnly,
            std::cmp::Ordering::Equal => {
                ensure(subset == "diagonal" && value.is_none(), || format!("diagonal {row} is {subset}"))?;
                continue;
            }
        };
        let expect_subset = if filter == TierFilter::All { "all" } else { "strong" };
        ensure(subset == expect_subset, || format!("cell {row}/{col} is {subset}, expected {expect_subset}"))?;
        let oracle = common::pearson(&matrix.column(r, filter), &matrix.column(c, filter)).map(|v| {
            if format!("{v:.2}") == "-0.00" {
                "0.00".to_string()
            } else {
                format!("{v:.2}")
            }
        });
        ensure(&oracle == value, || format!("cell {row}/{col}: printed {value:?}, oracle {oracle:?}"))?;
    }
    let verb = if update { "rewrote" } else { "matched" };
    Ok(format!("{verb} {} goldens, stable across runs; fig2 triangles match the oracle", common::GOLDEN_FILES.len()))
}

// ---- 8 ----

fn invariant_sweep() -> Check {
    let client = InferenceClient::from_config(&BackendConfig::stub()).unwrap();
    let catalog = SpecCatalog::bundled();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut postings = 0;
    for k in 0..100 {
        let mut profile = SynthProfile::bundled();
        let w: [f64; 3] = [rng.gen_range(0.05..1.0), rng.gen_range(0.05..1.0), rng.gen_range(0.0..1.0)];
        let sum: f64 = w.iter().sum();
        profile.tier_mix.strong = w[0] / sum;
        profile.tier_mix.partial = w[1] / sum;
        profile.tier_mix.none = 1.0 - (w[0] + w[1]) / sum;
        let scale = rng.gen_range(0.3..1.5);
        for r in profile.spec_rates.values_mut() {
            *r = (*r * scale).min(1.0);
        }
        let n = rng.gen_range(5..=40);
        let corpus = generate_synthetic(n, rng.gen(), &profile).map_err(|e| e.to_string())?;
        let mut relevance = Vec::new();
        let mut aligns = Vec::new();
        for raw in &corpus.postings {
            let p = canonicalize(raw).map_err(|e| e.to_string())?;
            let r = screen_relevance(&p, &client).map_err(|e| e.to_string())?;
            if r.is_retained() {
                aligns.push(classify_specializations(&p, &r, &catalog, &client).map_err(|e| e.to_string())?);
            }
            relevance.push(r);
        }
        postings += n;
        let c = |l| relevance.iter().filter(|r| !r.unclassifiable && r.label == l).count();
        let flagged = relevance.iter().filter(|r| r.unclassifiable).count();
        let (s, pa, no) = (c(RelevanceLabel::Strong), c(RelevanceLabel::Partial), c(RelevanceLabel::None));
        ensure(s + pa + no + flagged == n, || format!("corpus {k}: {s}+{pa}+{no}+{flagged} != {n}"))?;

        let matrix = build_alignment_matrix(&relevance, &aligns).map_err(|e| e.to_string())?;
        let all = market_share(&matrix, TierFilter::All).ok();
        let strong = market_share(&matrix, TierFilter::StrongOnly).ok();
        for (filter, shares) in [(TierFilter::All, &all), (TierFilter::StrongOnly, &strong)] {
            if let Some(shares) = shares {
                let sum: f64 = shares.iter().map(|x| x.share).sum();
                let u = unassigned_rate(&matrix, filter).unwrap();
                ensure(sum + 1e-12 >= 1.0 - u, || format!("corpus {k} {}: sum {sum} < 1 - {u}", filter.as_str()))?;
            }
        }
        if let (Some(all), Some(strong)) = (&all, &strong) {
            for (a, b) in all.iter().zip(strong) {
                ensure(b.count <= a.count, || {
                    format!("corpus {k} {}: strong {} > all {}", a.spec.key(), b.count, a.count)
                })?;
            }
        }
    }
    Ok(format!("100 corpora ({postings} postings): share sum, strong <= all, partition hold"))
}

// ---- 9 ----

fn live_smoke() -> Check {
    let server;
    let (url, model) = match std::env::var(ENV_BACKEND_URL) {
        Ok(url) if !url.is_empty() => (url, std::env::var(ENV_MODEL_ID).unwrap_or_else(|_| "default".into())),
        _ => {
            server = common::FakeServer::stub();
            (server.url.clone(), "fake-chat-completions".to_string())
        }
    };
    let client = InferenceClient::from_config(&BackendConfig::http(&url, &model)).map_err(|e| e.to_string())?;
    let catalog = SpecCatalog::bundled();
    let corpus = generate_synthetic(10, 9, &SynthProfile::bundled()).map_err(|e| e.to_string())?;
    let (mut relevance_ok, mut spec_calls) = (0, 0);
    for raw in &corpus.postings {
        let p = canonicalize(raw).map_err(|e| e.to_string())?;
        let r = screen_relevance(&p, &client).map_err(|e| e.to_string())?;
        ensure(!r.unclassifiable, || format!("{}: relevance unclassifiable: {:?}", p.id, r.diagnostic))?;
        relevance_ok += 1;
        let retained = if r.is_retained() {
            r
        } else {
            jobscope::classify::RelevanceResult { label: RelevanceLabel::Partial, ..r }
        };
        let a = classify_specializations(&p, &retained, &catalog, &client).map_err(|e| e.to_string())?;
        ensure(a.unclassifiable.is_empty(), || format!("{}: unclassifiable for {:?}", p.id, a.unclassifiable))?;
        spec_calls += 8;
    }
    Ok(format!("{url}: {relevance_ok} relevance and {spec_calls} specialization payloads schema-valid"))
}

fn main() {
    let secs = |s| Some(Duration::from_secs(s));
    let gate = |name, budget| Criterion { name, budget, gating: true };
    let mut ok = true;
    ok &= evaluate(&gate("published-ratio reproduction", secs(1)), published_ratios);
    ok &= evaluate(&gate("phi oracle equivalence", secs(5)), phi_oracle);

    let mut base = None;
    ok &= evaluate(&gate("planted-truth end-to-end", secs(10)), || {
        let b = base.insert(baseline());
        planted_truth(b)
    });
    let Some(base) = base else {
        println!("FAIL resume equivalence: no baseline run");
        println!("FAIL golden reports: no baseline run");
        std::process::exit(1);
    };
    ok &= evaluate(&gate("resume equivalence", secs(60)), || resume_equivalence(&base));
    ok &= evaluate(&gate("dedup property suite", secs(10)), dedup_suite);
    ok &= evaluate(&gate("normalization fixtures", secs(5)), normalization);
    ok &= evaluate(&gate("golden reports", secs(5)), || golden_reports(&base));
    ok &= evaluate(&gate("invariant sweep", secs(30)), invariant_sweep);
    ok &= evaluate(&Criterion { name: "live-backend smoke", budget: None, gating: false }, live_smoke);
    if !ok {
        std::process::exit(1);
    }
}
