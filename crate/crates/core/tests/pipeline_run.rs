use std::collections::BTreeSet;

use gazeload::dataset::{SplitMode, WindowConfig};
use gazeload::forest::{ForestGrid, MaxFeatures};
use gazeload::mlp::MlpConfig;
use gazeload::pipeline::{self, PipelineConfig};
use gazeload::synth::{generate_cohort, CohortConfig};

fn cohort() -> CohortConfig {
    CohortConfig {
        n_low: 3,
        n_high: 3,
        effect: 1.0,
        duration_s: 20.0,
        seed: 3,
    }
}

fn small_config() -> PipelineConfig {
    PipelineConfig {
        window: WindowConfig {
            window_len: 400,
            stride: 200,
            ..WindowConfig::default()
        },
        mlp: MlpConfig {
            hidden_sizes: vec![8],
            learning_rate: 1e-3,
            epochs: 30,
            batch_size: 32,
            ..MlpConfig::default()
        },
        grid: ForestGrid {
            n_trees: vec![5],
            max_depth: vec![None, Some(3)],
            min_samples_split: vec![2],
            min_samples_leaf: vec![1],
            max_features: vec![MaxFeatures::Sqrt],
            bootstrap: vec![true],
        },
        folds: 2,
        seed: 5,
        ..PipelineConfig::default()
    }
}

#[test]
fn small_run_produces_both_reports() {
    let sessions = generate_cohort(&cohort()).unwrap();
    let expected: usize = sessions.iter().map(|s| small_config().window.window_count(s.len())).sum();
    let out = pipeline::run(sessions, &small_config()).unwrap();

    assert_eq!(out.train.len() + out.test.len(), expected);
    assert_eq!(out.mlp.input_dim(), 800);
    assert_eq!(out.forest.width, 800);
    assert_eq!(out.forest.cv_scores.len(), 2);
    let tags: Vec<&str> = out.reports.iter().map(|r| r.model_tag.as_str()).collect();
    assert_eq!(tags, ["MLP", "RF"]);
    for r in &out.reports {
        assert_eq!(r.total(), out.test.len());
    }
    assert!(out.range.left.min < out.range.left.max);
}

#[test]
fn same_seed_gives_identical_models() {
    let run = || {
        let out = pipeline::run(generate_cohort(&cohort()).unwrap(), &small_config()).unwrap();
        let (mut mlp, mut rf) = (Vec::new(), Vec::new());
        out.mlp.write_to(&mut mlp).unwrap();
        out.forest.write_to(&mut rf).unwrap();
        (mlp, rf, out.reports)
    };
    assert_eq!(run(), run());
}

#[test]
fn subject_split_keeps_participants_apart() {
    let cfg = PipelineConfig {
        split: SplitMode::SubjectWise,
        test_fraction: 0.34,
        ..small_config()
    };
    let out = pipeline::run(generate_cohort(&cohort()).unwrap(), &cfg).unwrap();
    let train: BTreeSet<&String> = out.train.groups().iter().collect();
    let test: BTreeSet<&String> = out.test.groups().iter().collect();
    assert!(train.is_disjoint(&test));
    assert_eq!(train.len() + test.len(), 6);
}

#[test]
fn pipeline_seeds_are_distinct() {
    let s = 42;
    let seeds = [pipeline::split_seed(s), pipeline::mlp_seed(s), pipeline::forest_seed(s)];
    assert_eq!(seeds.iter().collect::<BTreeSet<_>>().len(), 3);
}

#[test]
fn short_session_names_the_participant() {
    let mut c = cohort();
    c.duration_s = 1.0;
    let err = pipeline::run(generate_cohort(&c).unwrap(), &small_config()).unwrap_err();
    assert!(err.to_string().contains("P01"), "{err}");
}
