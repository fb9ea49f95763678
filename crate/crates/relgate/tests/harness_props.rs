//! Harness-level properties beyond the acceptance criteria.

use relgate::config::RunConfig;
use relgate::{dataio, evalrun, sweep, train};
use relgate_core::brs::BrsVariant;
use relgate_core::checkpoint::{self, Snapshot};
use relgate_core::model::Model;
use relgate_core::rng::SeededRng;

fn small_corpus(seed: u64) -> dataio::Corpus {
    let config = RunConfig {
        synthetic_seed: seed,
        num_dialogues: 10,
        ..RunConfig::default()
    };
    dataio::load(&config, None).unwrap()
}

/// Mean refinement depth is monotone in the threshold for any parameters,
/// trained or not: the refinement trajectory is threshold-independent, so
/// a higher bar can only delay the exit.
#[test]
fn sweep_monotone_over_random_checkpoints() {
    let corpus = small_corpus(3);
    let grid = [0.0, 0.2, 0.4, 0.5, 0.6, 0.8, 1.0];
    for model_seed in [1u64, 2, 3, 4, 5] {
        let config = RunConfig::default();
        let vocab = relgate::sequences::build_vocab(&corpus, 1000).unwrap();
        let mut rng = SeededRng::new(model_seed);
        let model = Model::init(
            config.encoder_config(vocab.len()),
            config.gate_config(corpus.labels.len()),
            &mut rng,
        )
        .unwrap();
        let snapshot = Snapshot {
            model,
            vocab,
            labels: corpus.labels.clone(),
            variant: BrsVariant::Standard,
        };
        let rows = sweep::sweep_tau(&snapshot, &corpus, &grid, 6).unwrap();
        for pair in rows.windows(2) {
            assert!(
                pair[1].mean_iterations >= pair[0].mean_iterations,
                "seed {model_seed}: {} then {}",
                pair[0].mean_iterations,
                pair[1].mean_iterations
            );
        }
        assert_eq!(rows[0].mean_iterations, 0.0);
        assert_eq!(rows.last().unwrap().mean_iterations, 3.0);
    }
}

/// Every annotated pair contributes exactly one decision per evaluation
/// pass, under both the packed and single-pair layouts.
#[test]
fn evaluation_scores_every_pair_exactly_once() {
    let corpus = small_corpus(9);
    for variant in [BrsVariant::Standard, BrsVariant::SingleRelation] {
        let config = RunConfig {
            epochs: 1,
            num_dialogues: 10,
            synthetic_seed: 9,
            variant,
            ..RunConfig::default()
        };
        let outcome = train::train_on(&config, &corpus, None).unwrap();
        let snapshot = checkpoint::restore(&outcome.checkpoint).unwrap();
        let report = evalrun::evaluate(&snapshot, &corpus, 4, None).unwrap();
        assert_eq!(report.instances, corpus.num_instances(), "{variant:?}");
        let exits: usize = report.exit_histogram.values().sum();
        assert_eq!(exits, corpus.num_instances(), "{variant:?}");
    }
}

/// Dimension mismatches surface as configuration errors before any
/// training work happens.
#[test]
fn bad_dimensions_fail_before_training() {
    let corpus = small_corpus(5);
    let config = RunConfig {
        hidden_dim: 10,
        heads: 4, // 10 % 4 != 0
        epochs: 1,
        ..RunConfig::default()
    };
    let err = train::train_on(&config, &corpus, None).unwrap_err();
    assert!(format!("{err}").contains("divisible"), "{err}");

    let config = RunConfig {
        num_relations: Some(9), // corpus has 6
        epochs: 1,
        ..RunConfig::default()
    };
    let err = train::train_on(&config, &corpus, None).unwrap_err();
    assert!(format!("{err}").contains("label map"), "{err}");
}

/// The shared-head configuration trains, checkpoints, and evaluates.
#[test]
fn shared_confidence_head_round_trips() {
    let corpus = small_corpus(4);
    let config = RunConfig {
        epochs: 2,
        num_dialogues: 10,
        synthetic_seed: 4,
        share_confidence_head: true,
        ..RunConfig::default()
    };
    let outcome = train::train_on(&config, &corpus, None).unwrap();
    assert!(!outcome.checkpoint.tensors.contains_key("param/gate/cls_w"));
    let snapshot = checkpoint::restore(&outcome.checkpoint).unwrap();
    assert!(snapshot.model.gate.share_confidence_head);
    let report = evalrun::evaluate(&snapshot, &corpus, 6, None).unwrap();
    assert!(report.micro_f1.is_finite());
}

/// Training on an empty corpus is rejected.
#[test]
fn empty_corpus_rejected() {
    let corpus = dataio::Corpus {
        labels: relgate_core::data::synthetic_labels(3),
        examples: Vec::new(),
        skipped: 0,
    };
    let config = RunConfig::default();
    assert!(train::train_on(&config, &corpus, None).is_err());
}

/// Dev-tracked best checkpoint survives later degradation: once the dev
/// score peaks, best.rgt keeps the peak-epoch parameters.
#[test]
fn best_checkpoint_tracks_dev_score() {
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig {
        epochs: 6,
        num_dialogues: 10,
        synthetic_seed: 3,
        out_dir: Some(dir.path().to_path_buf()),
        ..RunConfig::default()
    };
    let corpus = dataio::load(&config, None).unwrap();
    let outcome = train::train_on(&config, &corpus, Some(&corpus)).unwrap();
    let best_dev = outcome
        .metrics
        .iter()
        .filter_map(|m| m.dev_f1)
        .fold(f64::NEG_INFINITY, f64::max);
    let best_snapshot = checkpoint::restore(&outcome.best).unwrap();
    let report = evalrun::evaluate(&best_snapshot, &corpus, 6, None).unwrap();
    assert!(
        (report.micro_f1 - best_dev).abs() < 1e-12,
        "best checkpoint scores {} but the peak dev score was {}",
        report.micro_f1,
        best_dev
    );
}
