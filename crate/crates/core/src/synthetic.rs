//! Generated knowledge bases whose correct answers are known by construction.
//! They back the property tests and make small end-to-end runs possible
//! without external data.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, DatasetPaths, Triple, Vocabulary, WordVectorTable};
use crate::error::{Error, Result};
use crate::featurize::tokenize;
use crate::Real;

type NamedTriple = (String, String, String);

fn assemble(
    train: &[NamedTriple],
    validation: &[NamedTriple],
    test: &[NamedTriple],
    descriptions: &[(String, String)],
) -> Dataset {
    let mut vocab = Vocabulary::default();
    let mut intern = |split: &[NamedTriple]| -> Vec<Triple> {
        split
            .iter()
            .map(|(h, r, t)| {
                let h = vocab.entities.intern(h);
                let r = vocab.relations.intern(r);
                let t = vocab.entities.intern(t);
                Triple::new(h, r, t)
            })
            .collect()
    };
    let train = intern(train);
    let validation = intern(validation);
    let test = intern(test);
    let descriptions =
        descriptions.iter().filter_map(|(name, text)| vocab.entity(name).map(|id| (id, text.clone()))).collect();
    Dataset { vocab, train, validation, test, descriptions }
}

/// Entities `e0 … e{n-1}` joined by `next` facts `i → i+1 (mod n)`.
///
/// The validation split repeats the training facts. Holding ring edges out
/// would cut the ring into chains that nothing in training links together,
/// so this KB measures how well a model fits, not how it generalizes.
pub fn ring_kb(entities: usize) -> Dataset {
    let name = |i: usize| format!("e{}", i % entities);
    let facts: Vec<NamedTriple> = (0..entities).map(|i| (name(i), "next".to_owned(), name(i + 1))).collect();
    let descriptions: Vec<_> = (0..entities).map(|i| (name(i), format!("node {i} of the ring"))).collect();
    assemble(&facts, &facts, &[], &descriptions)
}

pub const COLORS: [&str; 10] =
    ["red", "green", "blue", "yellow", "purple", "orange", "black", "white", "brown", "pink"];
pub const SHAPES: [&str; 5] = ["circle", "square", "triangle", "star", "hexagon"];

/// Options for [`nameable_kb`].
#[derive(Debug, Clone)]
pub struct NameableOptions {
    /// Total entities, hubs included.
    pub entities: usize,
    /// Fraction of all entities held out of training entirely.
    pub holdout: f64,
    pub seed: u64,
}

impl Default for NameableOptions {
    fn default() -> Self {
        NameableOptions { entities: 200, holdout: 0.2, seed: 0 }
    }
}

/// Objects described by a unique identifier plus a colour and a shape word,
/// linked by `has_color` and `has_shape` to one hub entity per colour and per
/// shape. Object `i` has colour `i mod 10` and shape `(i / 10) mod 5`.
///
/// The held-out objects are split evenly between validation and test; each
/// of their triples has exactly one unseen side.
pub fn nameable_kb(options: &NameableOptions) -> Result<Dataset> {
    let hubs = COLORS.len() + SHAPES.len();
    let objects = options.entities.saturating_sub(hubs);
    if objects < COLORS.len() * SHAPES.len() {
        return Err(Error::Config(format!(
            "a nameable KB needs at least {} entities",
            hubs + COLORS.len() * SHAPES.len()
        )));
    }
    if !(0.0..1.0).contains(&options.holdout) {
        return Err(Error::Config(format!("holdout fraction {} outside [0, 1)", options.holdout)));
    }
    let held =
        ((options.entities as f64 * options.holdout).round() as usize).min(objects - COLORS.len() * SHAPES.len());
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut order: Vec<usize> = (0..objects).collect();
    order.shuffle(&mut rng);
    // The first 50 positions of `order` stay in training so every hub is used.
    let mut held_out: Vec<usize> =
        order.iter().copied().filter(|&i| i >= COLORS.len() * SHAPES.len()).take(held).collect();
    held_out.sort_unstable();
    let split_at = held_out.len() / 2;

    let object = |i: usize| format!("obj{i:03}");
    let color = |i: usize| COLORS[i % COLORS.len()];
    let shape = |i: usize| SHAPES[(i / COLORS.len()) % SHAPES.len()];
    let facts = |i: usize| {
        [
            (object(i), "has_color".to_owned(), format!("color_{}", color(i))),
            (object(i), "has_shape".to_owned(), format!("shape_{}", shape(i))),
        ]
    };
    let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..objects {
        match held_out.binary_search(&i) {
            Ok(pos) if pos < split_at => validation.extend(facts(i)),
            Ok(_) => test.extend(facts(i)),
            Err(_) => train.extend(facts(i)),
        }
    }
    let mut descriptions = Vec::new();
    for i in 0..objects {
        descriptions.push((object(i), format!("{} is a {} {} thing", object(i), color(i), shape(i))));
    }
    for c in COLORS {
        descriptions.push((format!("color_{c}"), format!("the colour {c}")));
    }
    for s in SHAPES {
        descriptions.push((format!("shape_{s}"), format!("the shape {s}")));
    }
    Ok(assemble(&train, &validation, &test, &descriptions))
}

/// Random vectors in `[-1, 1)` for every token of every description.
pub fn random_word_vectors(dataset: &Dataset, dim: usize, seed: u64) -> Result<WordVectorTable> {
    let mut table = WordVectorTable::new(dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut row = vec![0.0; dim];
    for text in dataset.descriptions.values() {
        for word in tokenize(text) {
            if table.index_of(&word).is_none() {
                row.iter_mut().for_each(|v: &mut Real| *v = rng.gen_range(-1.0..1.0));
                table.insert(&word, &row)?;
            }
        }
    }
    Ok(table)
}

/// Writes `train.txt`, `valid.txt`, `test.txt` and `descriptions.txt` under
/// `dir` in the formats read by [`Dataset::load`].
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<DatasetPaths> {
    let v = &dataset.vocab;
    let lines = |triples: &[Triple]| {
        let mut s = String::new();
        for t in triples {
            let _ =
                writeln!(s, "{}\t{}\t{}", v.entity_name(t.head), v.relation_name(t.relation), v.entity_name(t.tail));
        }
        s
    };
    let write = |name: &str, body: String| {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        Ok::<_, Error>(path)
    };
    let mut desc = String::new();
    let by_name: BTreeMap<_, _> = dataset.descriptions.iter().collect();
    for (id, text) in by_name {
        let _ = writeln!(desc, "{}\t{}", v.entity_name(*id), text);
    }
    Ok(DatasetPaths {
        train: write("train.txt", lines(&dataset.train))?,
        validation: Some(write("valid.txt", lines(&dataset.validation))?),
        test: Some(write("test.txt", lines(&dataset.test))?),
        descriptions: Some(write("descriptions.txt", desc)?),
    })
}

/// Writes a word-vector table in the `word v1 … vd` format.
pub fn write_word_vectors(table: &WordVectorTable, path: &Path) -> Result<()> {
    let mut s = String::new();
    for (i, word) in table.words().iter().enumerate() {
        s.push_str(word);
        for x in table.row(i) {
            let _ = write!(s, " {x:e}");
        }
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::validate_unseen_split;

    #[test]
    fn ring_facts_follow_the_successor_rule() {
        let d = ring_kb(100);
        assert_eq!(d.vocab.entity_count(), 100);
        assert_eq!(d.validation, d.train);
        assert_eq!(d.train.len(), 100);
        assert_eq!(d.training_entities().len(), 100);
        for t in d.train.iter().chain(&d.validation) {
            let h: usize = d.vocab.entity_name(t.head)[1..].parse().unwrap();
            let tl: usize = d.vocab.entity_name(t.tail)[1..].parse().unwrap();
            assert_eq!((h + 1) % 100, tl);
        }
    }

    #[test]
    fn nameable_split_is_concept_learning_valid() {
        let d = nameable_kb(&NameableOptions::default()).unwrap();
        assert_eq!(d.vocab.entity_count(), 200);
        let report = validate_unseen_split(&d);
        assert!(report.concept_learning_valid);
        let train_entities = d.training_entities().len();
        assert_eq!(train_entities, 160);
        assert_eq!(d.validation.len() + d.test.len(), 80);
        d.require_descriptions().unwrap();
        let a = nameable_kb(&NameableOptions::default()).unwrap();
        assert_eq!(a.train, d.train);
    }

    #[test]
    fn written_files_reload_identically() {
        let dir = tempfile::tempdir().unwrap();
        let d = nameable_kb(&NameableOptions::default()).unwrap();
        let paths = write_dataset(&d, dir.path()).unwrap();
        let back = Dataset::load(&paths).unwrap();
        assert_eq!(back.vocab, d.vocab);
        assert_eq!(back.train, d.train);
        assert_eq!(back.test, d.test);
        assert_eq!(back.descriptions, d.descriptions);

        let wv = random_word_vectors(&d, 5, 1).unwrap();
        let p = dir.path().join("wv.txt");
        write_word_vectors(&wv, &p).unwrap();
        let loaded =
            crate::dataset::parse_word_vectors(std::fs::File::open(&p).map(std::io::BufReader::new).unwrap(), "wv", 5)
                .unwrap()
                .table;
        assert_eq!(loaded.len(), wv.len());
        assert_eq!(loaded.get("red"), wv.get("red"));
    }
}
