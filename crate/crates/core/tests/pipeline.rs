mod common;

use std::fs;

use jobscope::classify::RelevanceLabel;
use jobscope::pipeline::{Pipeline, PipelineError, Stage};
use jobscope::qa::{read_sheet, write_sheet, ReviewSheet, ReviewTask, Strata};

fn run(p: &Pipeline, stages: &[Stage]) -> Vec<jobscope::pipeline::StageSummary> {
    p.run(stages, &mut std::io::sink()).unwrap()
}

#[test]
fn rerun_recomputes_nothing_and_every_stage_balances() {
    let dir = tempfile::tempdir().unwrap();
    let (config, _) = common::synth_config(dir.path(), 30, 11, "out");
    let p = Pipeline::new(config).unwrap();
    let first = run(&p, &Stage::ALL);
    assert!(first.iter().all(|s| s.balanced()));
    let before = common::emitted(p.layout().root());

    let second = run(&p, &Stage::ALL);
    for s in second.iter().filter(|s| ["relevance", "specializations", "skills"].contains(&s.stage.as_str())) {
        assert_eq!(s.resumed, s.output, "{s}");
    }
    assert_eq!(common::emitted(p.layout().root()), before);
}

#[test]
fn torn_and_missing_lines_are_recomputed() {
    let dir = tempfile::tempdir().unwrap();
    let (config, _) = common::synth_config(dir.path(), 30, 12, "whole");
    common::run_all(&config);

    let mut partial = config.clone();
    partial.out_dir = dir.path().join("torn");
    let p = Pipeline::new(partial).unwrap();
    run(&p, &[Stage::Corpus, Stage::Relevance]);
    let path = p.layout().stage(Stage::Relevance);
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let keep = lines.len() / 2;
    let torn = format!("{}\n{}", lines[..keep].join("\n"), &lines[keep][..lines[keep].len() / 2]);
    fs::write(&path, torn).unwrap();

    let summaries = run(&p, &Stage::ALL);
    let relevance = summaries.iter().find(|s| s.stage == "relevance").unwrap();
    assert_eq!(relevance.resumed, keep);
    assert_eq!(common::emitted(p.layout().root()), common::emitted(&config.out_dir));
}

#[test]
fn foreign_records_fail_integrity() {
    let dir = tempfile::tempdir().unwrap();
    let (config, _) = common::synth_config(dir.path(), 10, 13, "out");
    let p = common::run_all(&config);
    let path = p.layout().stage(Stage::Relevance);
    let mut text = fs::read_to_string(&path).unwrap();
    let line = text.lines().next().unwrap().to_string();
    let id = p.load_corpus().unwrap()[0].id.clone();
    text.push_str(&line.replace(&id, "0000000000000000"));
    text.push('\n');
    fs::write(&path, text).unwrap();
    let err = p.run(&[Stage::Relevance], &mut std::io::sink()).unwrap_err();
    match &err {
        PipelineError::Integrity { stage, posting_id, .. } => {
            assert_eq!(stage, "relevance");
            assert_eq!(posting_id, "0000000000000000");
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn downstream_stage_without_upstream_is_missing() {
    let dir = tempfile::tempdir().unwrap();
    let (config, _) = common::synth_config(dir.path(), 5, 14, "out");
    let p = Pipeline::new(config).unwrap();
    for stage in [Stage::Relevance, Stage::Analytics, Stage::Reports] {
        let err = p.run(&[stage], &mut std::io::sink()).unwrap_err();
        assert!(matches!(err, PipelineError::MissingStage(_)), "{stage:?}: {err:?}");
        assert_eq!(err.exit_code(), 4);
    }
}

#[test]
fn force_recomputes_with_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (config, _) = common::synth_config(dir.path(), 20, 15, "out");
    let p = common::run_all(&config);
    let before = common::emitted(p.layout().root());
    let forced = Pipeline::new(config).unwrap().with_force(true);
    let summaries = run(&forced, &Stage::ALL);
    assert!(summaries.iter().all(|s| s.resumed == 0));
    assert_eq!(common::emitted(p.layout().root()), before);
}

#[test]
fn planted_tiers_survive_the_file_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (config, truth) = common::synth_config(dir.path(), 60, 16, "out");
    let p = common::run_all(&config);
    let corpus = p.load_corpus().unwrap();
    let relevance = p.load_relevance(&corpus).unwrap();
    let count = |l| relevance.iter().filter(|r| r.label == l).count();
    assert_eq!(
        [count(RelevanceLabel::Strong), count(RelevanceLabel::Partial), count(RelevanceLabel::None)],
        common::tier_counts(&truth)
    );
}

#[test]
fn review_sheet_round_trip_scores_full_agreement() {
    let dir = tempfile::tempdir().unwrap();
    let (config, _) = common::synth_config(dir.path(), 40, 17, "out");
    let p = common::run_all(&config);
    let (summary, sheet_path) = p.qa_sample(ReviewTask::Relevance, 12, 5, Strata::ByTier).unwrap();
    assert_eq!(summary.output, 12);
    let mut rows = read_sheet(&sheet_path).unwrap();
    assert!(rows.iter().all(|r| !r.summary.is_empty()));
    for r in &mut rows {
        r.expert_label = r.model_label.clone();
    }
    let meta = serde_json::from_slice(&fs::read(jobscope::qa::meta_path(&sheet_path)).unwrap()).unwrap();
    write_sheet(&ReviewSheet { rows, meta }, &sheet_path).unwrap();
    let (_, stats) = p.qa_score(&sheet_path).unwrap();
    assert_eq!(stats[0].n, 12);
    assert_eq!(stats[0].agreed, 12);

    let judged = p.qa_judge(Some(5)).unwrap();
    assert_eq!(judged.output, 5);
    assert!(p.layout().qa().join("judge_summary.json").is_file());
}
