//! Cross-module integration invariants that need a (briefly) trained
//! model: checkpoint round trips through evaluation, relaxed vs strict
//! ordering, and the diagnose report's internal consistency.

use std::sync::OnceLock;

use copymtl::data::{synth_generate, SynthConfig, SynthCorpus};
use copymtl::decoder::Scorer;
use copymtl::extraction::EvalMode;
use copymtl::train::{self, Preset, TrainConfig, TrainOutcome};

fn corpus() -> &'static SynthCorpus {
    static CORPUS: OnceLock<SynthCorpus> = OnceLock::new();
    CORPUS.get_or_init(|| {
        synth_generate(&SynthConfig {
            seed: 77,
            num_sentences: 120,
            vocab_size: 120,
            relation_count: 3,
            max_triplets: 2,
            multi_token_fraction: 0.3,
            overlap_fraction: 0.2,
        })
        .expect("valid config")
    })
}

/// A short fused run; enough training for non-trivial predictions.
fn short_run() -> &'static TrainOutcome {
    static RUN: OnceLock<TrainOutcome> = OnceLock::new();
    RUN.get_or_init(|| {
        let c = corpus();
        train::train(
            &TrainConfig {
                preset: Preset::Desk,
                scorer: Scorer::Fused,
                use_mask: false,
                epochs: 12,
                eval_every: 6,
                seed: 1,
                learning_rate: 0.003,
                batch_size: 8,
                ..TrainConfig::default()
            },
            &c.train,
            &c.test,
            None,
            false,
        )
        .expect("training run")
    })
}

#[test]
fn checkpoint_round_trip_preserves_evaluation() {
    let outcome = short_run();
    let c = corpus();
    let before = train::evaluate_instances(
        &outcome.model,
        &c.test,
        &outcome.vocab,
        &outcome.relations,
        EvalMode::Strict,
        true,
    )
    .expect("eval before");

    let dir = std::env::temp_dir().join(format!("copymtl_pipeline_{}", std::process::id()));
    std::fs::create_dir_all(&dir).expect("temp dir");
    let stem = dir.join("round_trip");
    copymtl::checkpoint::save(&stem, &outcome.model, &outcome.vocab, &outcome.relations)
        .expect("save");
    let (model, vocab, relations) = copymtl::checkpoint::load(&stem).expect("load");
    let after = train::evaluate_instances(
        &model,
        &c.test,
        &vocab,
        &relations,
        EvalMode::Strict,
        true,
    )
    .expect("eval after");
    assert_eq!(before, after);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn relaxed_never_below_strict() {
    let outcome = short_run();
    let c = corpus();
    for split in [&c.train, &c.test] {
        let strict = train::evaluate_instances(
            &outcome.model,
            split,
            &outcome.vocab,
            &outcome.relations,
            EvalMode::Strict,
            true,
        )
        .expect("strict");
        let relaxed = train::evaluate_instances(
            &outcome.model,
            split,
            &outcome.vocab,
            &outcome.relations,
            EvalMode::Relaxed,
            true,
        )
        .expect("relaxed");
        assert!(
            relaxed.f1 >= strict.f1 - 1e-12,
            "relaxed {} < strict {}",
            relaxed.f1,
            strict.f1
        );
    }
}

#[test]
fn strict_f1_bounded_by_subtask_f1() {
    let outcome = short_run();
    let c = corpus();
    let report = train::evaluate_instances(
        &outcome.model,
        &c.test,
        &outcome.vocab,
        &outcome.relations,
        EvalMode::Strict,
        true,
    )
    .expect("eval");
    assert!(report.f1 <= report.relation_f1 + 1e-12);
    assert!(report.f1 <= report.entity_f1 + 1e-12);
}

#[test]
fn diagnose_report_is_internally_consistent() {
    let outcome = short_run();
    let c = corpus();
    let diag = train::diagnose(
        &outcome.model,
        &c.test,
        &outcome.vocab,
        &outcome.relations,
        20,
        3,
    )
    .expect("diagnose");
    for rate in [diag.swap_rate, diag.head_eq_tail_rate] {
        assert!((0.0..=1.0).contains(&rate));
    }
    assert!(diag.reduction_max_tv >= 0.0 && diag.reduction_max_tv <= 1.0);
    assert!((0.0..=1.0).contains(&diag.f1_masked));
    assert!((0.0..=1.0).contains(&diag.f1_unmasked));
}

#[test]
fn metrics_csv_shape_and_determinism_of_short_runs() {
    let outcome = short_run();
    let lines: Vec<&str> = outcome.csv.lines().collect();
    assert_eq!(lines[0], train::METRICS_HEADER);
    // eval at epochs 6 and 12, two splits each
    assert_eq!(lines.len(), 1 + 4);
    for line in &lines[1..] {
        assert_eq!(line.split(',').count(), 9);
    }
}
