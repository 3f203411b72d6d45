//! Full-scale runs on real description-augmented KBs. Ignored by default.
//!
//! `TRANSKB_LONG_RUN_DIR` must hold `train.txt`, `valid.txt`, `test.txt` and
//! `descriptions.txt`. The unseen-entity run additionally reads
//! `TRANSKB_LONG_RUN_UNSEEN_DIR` (same files, with test triples that have one
//! entity outside training) and `TRANSKB_LONG_RUN_WORD_VECTORS` with its
//! dimension in `TRANSKB_LONG_RUN_WORD_DIM`. Run with
//! `cargo test --release --test long_run -- --ignored --nocapture`.

use std::path::{Path, PathBuf};

use transkb::dataset::{parse_word_vectors, Dataset, DatasetPaths};
use transkb::evaluate::EvalOptions;
use transkb::trainer::{Mode, TrainConfig, Trainer};
use transkb::Real;

const TOLERANCE: Real = 0.15;

fn paths(dir: &Path) -> DatasetPaths {
    DatasetPaths {
        train: dir.join("train.txt"),
        validation: Some(dir.join("valid.txt")),
        test: Some(dir.join("test.txt")),
        descriptions: Some(dir.join("descriptions.txt")),
    }
}

fn env_dir(name: &str) -> Option<PathBuf> {
    let dir = std::env::var_os(name).map(PathBuf::from);
    if dir.is_none() {
        eprintln!("{name} not set; skipping");
    }
    dir
}

fn within(found: Real, target: Real) -> bool {
    (found - target).abs() <= TOLERANCE * target
}

fn train_and_test(
    dataset: &Dataset,
    config: &TrainConfig,
    words: Option<&transkb::dataset::WordVectorTable>,
    options: &EvalOptions,
) -> (Real, Real) {
    let mut trainer = Trainer::new(dataset, config, words).unwrap();
    for report in trainer.by_ref() {
        eprintln!("{}", report.unwrap().metrics_line());
    }
    let report = trainer.into_checkpoint().evaluate(dataset, &dataset.test, options, false).unwrap();
    eprintln!("{}", report.to_text());
    (report.mean_rank.unwrap(), report.hits.unwrap())
}

#[test]
#[ignore]
fn seen_entities_match_published_scale() {
    let Some(dir) = env_dir("TRANSKB_LONG_RUN_DIR") else { return };
    let dataset = Dataset::load(&paths(&dir)).unwrap();
    let options = EvalOptions::default();

    let baseline = TrainConfig { epochs: 1000, eval_every: 100, ..TrainConfig::new(Mode::Baseline) };
    let (mr, hits) = train_and_test(&dataset, &baseline, None, &options);
    assert!(within(mr, 243.0) && within(hits, 34.9), "baseline {mr} / {hits}");

    let joint = TrainConfig { epochs: 1000, eval_every: 100, ..TrainConfig::new(Mode::JointMlp) };
    let (mr, hits) = train_and_test(&dataset, &joint, None, &options);
    assert!(within(mr, 214.0) && within(hits, 37.7), "joint {mr} / {hits}");
}

#[test]
#[ignore]
fn unseen_entities_match_published_scale() {
    let Some(dir) = env_dir("TRANSKB_LONG_RUN_UNSEEN_DIR") else { return };
    let Some(vectors) = env_dir("TRANSKB_LONG_RUN_WORD_VECTORS") else { return };
    let dim: usize = std::env::var("TRANSKB_LONG_RUN_WORD_DIM").expect("TRANSKB_LONG_RUN_WORD_DIM").parse().unwrap();
    let dataset = Dataset::load(&paths(&dir)).unwrap();
    let file = std::fs::File::open(&vectors).unwrap();
    let words = parse_word_vectors(std::io::BufReader::new(file), "word vectors", dim).unwrap().table;
    let config =
        TrainConfig { epochs: 100, eval_every: 10, eval_sample_size: Some(1000), ..TrainConfig::new(Mode::JointCnn) };
    let options = EvalOptions { sample_size: Some(1000), ..EvalOptions::default() };
    let (mr, hits) = train_and_test(&dataset, &config, Some(&words), &options);
    assert!(within(mr, 50164.0) && within(hits, 14.8), "cnn {mr} / {hits}");
}
