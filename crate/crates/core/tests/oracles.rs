mod common;

use jobscope::analytics::{phi, PhiValue, ZERO_MARGINAL};
use jobscope::corpus::{dedupe, jaccard, shingles, BlockingKey, DedupPolicy};
use jobscope::report::percent;
use jobscope::skills::{normalize_skills, AliasMap, RequirementLevel, SkillCategory, SkillMention};

#[test]
fn published_counts_round_to_published_percentages() {
    for (count, total, shown) in
        [(23_732, 41_584, "57.1%"), (16_597, 23_732, "69.9%"), (5_363, 23_732, "22.6%"), (5_314, 23_732, "22.4%")]
    {
        assert_eq!(percent(count, total, 1), shown, "{count}/{total}");
    }
}

#[test]
fn degenerate_marginals_are_undefined() {
    let constant = vec![true; 10];
    let mixed: Vec<bool> = (0..10).map(|i| i % 3 == 0).collect();
    for (a, b) in [(&constant, &mixed), (&mixed, &constant), (&constant, &constant)] {
        assert_eq!(phi(a, b).unwrap(), PhiValue::Undefined(ZERO_MARGINAL.into()));
        assert!(common::pearson(a, b).is_none());
    }
    assert!(matches!(phi(&[true], &[false]).unwrap(), PhiValue::Undefined(_)));
    assert!(phi(&[true, false], &[true]).is_err());
}

#[test]
fn phi_hand_computed_table() {
    // n11=3 n10=1 n01=1 n00=3: (9-1)/sqrt(4*4*4*4) = 0.5
    let a = [true, true, true, true, false, false, false, false];
    let b = [true, true, true, false, true, false, false, false];
    assert_eq!(phi(&a, &b).unwrap(), PhiValue::Defined(0.5));
}

fn jaccard_pair() -> (String, String) {
    let a: Vec<String> = (1..=24).map(|i| format!("w{i}")).collect();
    let b: Vec<String> = (2..=25).map(|i| format!("w{i}")).collect();
    (a.join(" "), b.join(" "))
}

#[test]
fn crafted_pair_sits_between_thresholds() {
    let (a, b) = jaccard_pair();
    let j = jaccard(&shingles(&a, 5), &shingles(&b, 5));
    assert!((j - 19.0 / 21.0).abs() < 1e-12, "{j}");

    let postings = || vec![common::posting("T", "E", &a, "u1"), common::posting("T", "E", &b, "u2")];
    let at = |threshold| DedupPolicy { jaccard_threshold: threshold, ..DedupPolicy::default() };
    let collapsed = dedupe(postings(), &at(0.9));
    assert_eq!(collapsed.corpus.len(), 1);
    assert_eq!(collapsed.report.near_collapsed, 1);
    assert!((collapsed.report.clusters[0].max_jaccard - 19.0 / 21.0).abs() < 1e-12);
    let kept = dedupe(postings(), &at(0.95));
    assert_eq!(kept.corpus.len(), 2);
    assert_eq!(kept.report.near_collapsed, 0);
}

#[test]
fn blocking_keeps_near_copies_apart_across_employers() {
    let (a, b) = jaccard_pair();
    let postings = vec![common::posting("T", "E1", &a, "u1"), common::posting("T", "E2", &b, "u2")];
    assert_eq!(dedupe(postings.clone(), &DedupPolicy::default()).corpus.len(), 2);
    let title_only = DedupPolicy { blocking_key: BlockingKey::Title, ..DedupPolicy::default() };
    assert_eq!(dedupe(postings, &title_only).corpus.len(), 1);
}

#[test]
fn alias_fixtures_share_one_canonical() {
    let map = AliasMap::bundled();
    let surfaces = [
        "CBT",
        "cbt",
        "C.B.T.",
        "cognitive behavioral",
        "Cognitive Behavioral",
        "cognitive-behavioral therapy",
        "Cognitive-Behavioral Therapy",
        "COGNITIVE BEHAVIORAL THERAPY",
        "cognitive  behavioral   therapy",
        "Cognitive Behavioral Therapy",
    ];
    let mentions: Vec<SkillMention> = surfaces
        .iter()
        .map(|s| SkillMention {
            posting_id: "p1".into(),
            surface: s.to_string(),
            category: SkillCategory::TherapeuticModality,
            level: RequirementLevel::Preferred,
        })
        .collect();
    let out = normalize_skills(&mentions, &map);
    assert_eq!(out.len(), 1, "{out:?}");
    assert_eq!(out[0].canonical, "Cognitive Behavioral Therapy");
    assert!(out[0].is_canonical);
    assert_eq!(out[0].mention_count, surfaces.len());
    for s in surfaces {
        assert_eq!(map.lookup(s, SkillCategory::Technical).unwrap().0, "Cognitive Behavioral Therapy");
    }
}
