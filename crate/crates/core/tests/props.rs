mod common;

use std::collections::BTreeSet;

use jobscope::analytics::{
    build_alignment_matrix, market_share, phi, retention_stats, unassigned_rate, PhiValue, TierFilter,
};
use jobscope::classify::{RelevanceLabel, RelevanceResult, SpecAlignment, SpecFlags, Specialization};
use jobscope::corpus::{dedupe, DedupPolicy};
use jobscope::skills::{as_mentions, normalize_skills, AliasMap, RequirementLevel, SkillCategory, SkillMention};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;

fn ids(postings: &[jobscope::corpus::Posting]) -> Vec<String> {
    postings.iter().map(|p| p.id.clone()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dedup_is_idempotent_and_conserves(seed in any::<u64>(), n in 1usize..30) {
        let c = common::dup_corpus(seed, n);
        let input = c.postings.len();
        let out = dedupe(c.postings, &DedupPolicy::default());
        let r = &out.report;
        prop_assert_eq!(r.input_count, input);
        prop_assert_eq!(r.surviving_count + r.exact_collapsed + r.near_collapsed, input);
        prop_assert_eq!(out.corpus.len() + out.suppressed.len(), input);
        prop_assert_eq!(out.corpus.len(), n);
        prop_assert_eq!(r.exact_collapsed, c.injected_exact);
        prop_assert_eq!(r.near_collapsed, c.injected_near);

        let survivors: BTreeSet<&str> = out.corpus.iter().map(|p| p.id.as_str()).collect();
        prop_assert_eq!(survivors.len(), out.corpus.len());
        for s in &out.suppressed {
            prop_assert!(survivors.contains(s.duplicate_of.as_deref().unwrap()));
        }

        let again = dedupe(out.corpus.clone(), &DedupPolicy::default());
        prop_assert_eq!(&again.corpus, &out.corpus);
        prop_assert_eq!(again.report.exact_collapsed + again.report.near_collapsed, 0);
    }

    #[test]
    fn dedup_ignores_input_order(seed in any::<u64>(), n in 1usize..30, shuffle in any::<u64>()) {
        let c = common::dup_corpus(seed, n);
        let mut shuffled = c.postings.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(shuffle));
        let a = dedupe(c.postings, &DedupPolicy::default());
        let b = dedupe(shuffled, &DedupPolicy::default());
        prop_assert_eq!(ids(&a.corpus), ids(&b.corpus));
        prop_assert_eq!(&a.corpus, &b.corpus);
        prop_assert_eq!(&a.suppressed, &b.suppressed);
        prop_assert_eq!(&a.report, &b.report);
    }

    #[test]
    fn phi_matches_pearson_and_is_symmetric(
        pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 2..120)
    ) {
        let (a, b): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
        let ab = phi(&a, &b).unwrap();
        let ba = phi(&b, &a).unwrap();
        prop_assert_eq!(&ab, &ba);
        match (ab, common::pearson(&a, &b)) {
            (PhiValue::Defined(v), Some(r)) => {
                prop_assert!((-1.0..=1.0).contains(&v));
                prop_assert!((v - r).abs() < 1e-12, "phi {} pearson {}", v, r);
            }
            (PhiValue::Undefined(_), None) => {}
            (p, r) => prop_assert!(false, "phi {:?} vs pearson {:?}", p, r),
        }
    }

    #[test]
    fn normalization_is_idempotent(
        raw in prop::collection::vec((mention_string(), 0usize..4, 0usize..3), 0..20)
    ) {
        let map = AliasMap::bundled();
        let mentions: Vec<SkillMention> = raw
            .into_iter()
            .map(|(surface, c, l)| SkillMention {
                posting_id: "p".into(),
                surface,
                category: SkillCategory::ALL[c],
                level: RequirementLevel::ALL[l],
            })
            .collect();
        let once = normalize_skills(&mentions, &map);
        let twice = normalize_skills(&as_mentions(&once), &map);
        let key = |v: &[jobscope::skills::NormalizedSkill]| {
            v.iter().map(|s| (s.canonical.clone(), s.category, s.level, s.is_canonical)).collect::<Vec<_>>()
        };
        prop_assert_eq!(key(&once), key(&twice));
    }

    #[test]
    fn share_and_partition_invariants(rows in prop::collection::vec((0u8..4, any::<u8>()), 1..80)) {
        let mut relevance = Vec::new();
        let mut aligns = Vec::new();
        for (i, (tier, bits)) in rows.iter().enumerate() {
            let id = format!("p{i:03}");
            let (label, unclassifiable) = match tier {
                0 => (RelevanceLabel::Strong, false),
                1 => (RelevanceLabel::Partial, false),
                2 => (RelevanceLabel::None, false),
                _ => (RelevanceLabel::None, true),
            };
            relevance.push(RelevanceResult {
                posting_id: id.clone(),
                label,
                rationale: String::new(),
                model_id: "m".into(),
                prompt_hash: "h".into(),
                attempts: 1,
                unclassifiable,
                diagnostic: None,
            });
            if label.is_retained() {
                let flags = SpecFlags::from_specs(Specialization::ALL.into_iter().filter(|s| bits >> s.index() & 1 == 1));
                aligns.push(SpecAlignment {
                    posting_id: id,
                    flags,
                    rationales: Default::default(),
                    model_id: "m".into(),
                    prompt_hash: "h".into(),
                    unclassifiable: Vec::new(),
                });
            }
        }
        let stats = retention_stats(&relevance, relevance.len()).unwrap();
        prop_assert_eq!(stats.strong + stats.partial + stats.none + stats.unclassifiable, rows.len());

        let matrix = build_alignment_matrix(&relevance, &aligns).unwrap();
        let all = market_share(&matrix, TierFilter::All);
        let strong = market_share(&matrix, TierFilter::StrongOnly);
        for (filter, shares) in [(TierFilter::All, &all), (TierFilter::StrongOnly, &strong)] {
            if let Ok(shares) = shares {
                let sum: f64 = shares.iter().map(|s| s.share).sum();
                prop_assert!(sum >= 1.0 - unassigned_rate(&matrix, filter).unwrap() - 1e-12);
            }
        }
        if let (Ok(all), Ok(strong)) = (&all, &strong) {
            for (a, s) in all.iter().zip(strong) {
                prop_assert!(s.count <= a.count);
            }
        }
    }
}

fn mention_string() -> impl Strategy<Value = String> {
    prop_oneof![
        prop::sample::select(vec![
            "CBT",
            "c.b.t.",
            "cognitive behavioral",
            "Cognitive-Behavioral Therapy",
            "DBT",
            "EHR",
            "Epic",
            "crisis intervention",
            "Microsoft Office",
            "excel",
            "group counseling",
            "motivational interviewing",
        ])
        .prop_map(str::to_string),
        "[a-zA-Z .\\-/]{0,24}",
        any::<String>(),
    ]
}
