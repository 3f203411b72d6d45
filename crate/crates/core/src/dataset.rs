//! Ingestion of triples, entity descriptions and pretrained word vectors.
//!
//! File formats:
//!
//! * triples: `head<TAB>relation<TAB>tail` per line
//! * descriptions: `entity<TAB>free text` per line
//! * word vectors: `word v1 v2 ... vd` per line, space separated

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::tokenize;
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub usize);

impl EntityId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A fact `(head, relation, tail)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: usize, relation: usize, tail: usize) -> Self {
        Triple { head: EntityId(head), relation: RelationId(relation), tail: EntityId(tail) }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head.0, self.relation.0, self.tail.0)
    }
}

/// Bijection between names and dense ids assigned in registration order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct NameIndex {
    names: Vec<String>,
    ids: HashMap<String, usize>,
}

impl NameIndex {
    /// Returns the id for `name`, registering it if new.
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_owned());
        self.ids.insert(name.to_owned(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

impl TryFrom<Vec<String>> for NameIndex {
    type Error = String;

    fn try_from(names: Vec<String>) -> Result<Self, String> {
        let mut index = NameIndex::default();
        for name in &names {
            if index.get(name).is_some() {
                return Err(format!("duplicate name `{name}`"));
            }
            index.intern(name);
        }
        Ok(index)
    }
}

impl From<NameIndex> for Vec<String> {
    fn from(index: NameIndex) -> Self {
        index.names
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub entities: NameIndex,
    pub relations: NameIndex,
}

impl Vocabulary {
    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn entity(&self, name: &str) -> Option<EntityId> {
        self.entities.get(name).map(EntityId)
    }

    pub fn relation(&self, name: &str) -> Option<RelationId> {
        self.relations.get(name).map(RelationId)
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        self.entities.name(id.0).unwrap_or("<unknown>")
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        self.relations.name(id.0).unwrap_or("<unknown>")
    }

    /// Looks up a relation, or fails listing the closest known names.
    pub fn require_relation(&self, name: &str) -> Result<RelationId> {
        self.relation(name).ok_or_else(|| {
            let mut scored: Vec<(usize, &String)> =
                self.relations.names().iter().map(|n| (strsim::levenshtein(name, n), n)).collect();
            scored.sort();
            Error::UnknownRelation {
                name: name.to_owned(),
                suggestions: scored.into_iter().take(3).map(|(_, n)| n.clone()).collect(),
            }
        })
    }

    pub fn check(&self, triple: &Triple) -> Result<()> {
        if triple.head.0 >= self.entity_count() {
            return Err(Error::Index { kind: "entity", index: triple.head.0, count: self.entity_count() });
        }
        if triple.tail.0 >= self.entity_count() {
            return Err(Error::Index { kind: "entity", index: triple.tail.0, count: self.entity_count() });
        }
        if triple.relation.0 >= self.relation_count() {
            return Err(Error::Index { kind: "relation", index: triple.relation.0, count: self.relation_count() });
        }
        Ok(())
    }
}

fn parse_err(source_name: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { source_name: source_name.to_owned(), line, message: message.into() }
}

fn lines<'a, R: BufRead + 'a>(reader: R, source_name: &'a str) -> impl Iterator<Item = Result<(usize, String)>> + 'a {
    reader.lines().enumerate().map(move |(i, line)| {
        let mut line = line.map_err(|e| parse_err(source_name, i + 1, e.to_string()))?;
        if line.ends_with('\r') {
            line.pop();
        }
        Ok((i + 1, line))
    })
}

/// Parses `head<TAB>relation<TAB>tail` lines, registering new names in
/// encounter order. Blank lines are ignored.
pub fn parse_triples<R: BufRead>(reader: R, source_name: &str, vocab: &mut Vocabulary) -> Result<Vec<Triple>> {
    let mut triples = Vec::new();
    for item in lines(reader, source_name) {
        let (lineno, line) = item?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(
                source_name,
                lineno,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        if let Some(pos) = fields.iter().position(|f| f.trim().is_empty()) {
            return Err(parse_err(source_name, lineno, format!("field {} is empty", pos + 1)));
        }
        let head = vocab.entities.intern(fields[0]);
        let relation = vocab.relations.intern(fields[1]);
        let tail = vocab.entities.intern(fields[2]);
        triples.push(Triple::new(head, relation, tail));
    }
    Ok(triples)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnknownEntityPolicy {
    /// Unknown entity names are an error.
    Strict,
    /// Unknown entity names are skipped and counted.
    Lenient,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DescriptionLoad {
    pub descriptions: BTreeMap<EntityId, String>,
    /// Lines that replaced an earlier description of the same entity.
    pub overwritten: usize,
    /// Lines naming entities absent from the vocabulary (lenient mode).
    pub skipped: usize,
}

/// Parses `entity<TAB>description` lines. Later duplicates win.
pub fn parse_descriptions<R: BufRead>(
    reader: R,
    source_name: &str,
    vocab: &Vocabulary,
    policy: UnknownEntityPolicy,
) -> Result<DescriptionLoad> {
    let mut load = DescriptionLoad::default();
    for item in lines(reader, source_name) {
        let (lineno, line) = item?;
        if line.trim().is_empty() {
            continue;
        }
        let Some((name, text)) = line.split_once('\t') else {
            return Err(parse_err(source_name, lineno, "missing tab between entity and description"));
        };
        match vocab.entity(name) {
            Some(id) => {
                if load.descriptions.insert(id, text.to_owned()).is_some() {
                    load.overwritten += 1;
                }
            }
            None => match policy {
                UnknownEntityPolicy::Strict => return Err(Error::UnknownEntity(name.to_owned())),
                UnknownEntityPolicy::Lenient => load.skipped += 1,
            },
        }
    }
    Ok(load)
}

/// Pretrained word vectors, one row per distinct word.
#[derive(Debug, Clone, PartialEq)]
pub struct WordVectorTable {
    words: NameIndex,
    dim: usize,
    data: Vec<Real>,
}

impl WordVectorTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("word-vector dimension must be at least 1".into()));
        }
        Ok(WordVectorTable { words: NameIndex::default(), dim, data: Vec::new() })
    }

    /// Adds a word; returns false (and changes nothing) when it already exists.
    pub fn insert(&mut self, word: &str, vector: &[Real]) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::dim("word vector", &[self.dim], &[vector.len()]));
        }
        if !vector.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value in vector for `{word}`")));
        }
        if self.words.get(word).is_some() {
            return Ok(false);
        }
        self.words.intern(word);
        self.data.extend_from_slice(vector);
        Ok(true)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.words.get(word)
    }

    pub fn words(&self) -> &[String] {
        self.words.names()
    }

    pub fn row(&self, index: usize) -> &[Real] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn get(&self, word: &str) -> Option<&[Real]> {
        self.index_of(word).map(|i| self.row(i))
    }
}

#[derive(Debug, Clone)]
pub struct WordVectorLoad {
    pub table: WordVectorTable,
    /// Repeated words ignored after their first occurrence.
    pub duplicates: usize,
}

/// Parses `word v1 ... vd` lines; the first occurrence of a word wins.
pub fn parse_word_vectors<R: BufRead>(reader: R, source_name: &str, expected_dim: usize) -> Result<WordVectorLoad> {
    let mut table = WordVectorTable::new(expected_dim)?;
    let mut duplicates = 0;
    let mut row = Vec::with_capacity(expected_dim);
    for item in lines(reader, source_name) {
        let (lineno, line) = item?;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        row.clear();
        for field in fields {
            let v: Real =
                field.parse().map_err(|_| parse_err(source_name, lineno, format!("non-numeric value `{field}`")))?;
            if !v.is_finite() {
                return Err(parse_err(source_name, lineno, format!("non-finite value `{field}`")));
            }
            row.push(v);
        }
        if row.len() != expected_dim {
            return Err(parse_err(source_name, lineno, format!("expected {expected_dim} values, found {}", row.len())));
        }
        if !table.insert(word, &row)? {
            duplicates += 1;
        }
    }
    Ok(WordVectorLoad { table, duplicates })
}

/// Paths of the files making up a dataset.
#[derive(Debug, Clone, Default)]
pub struct DatasetPaths {
    pub train: PathBuf,
    pub validation: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub descriptions: Option<PathBuf>,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub train: Vec<Triple>,
    pub validation: Vec<Triple>,
    pub test: Vec<Triple>,
    pub descriptions: BTreeMap<EntityId, String>,
}

pub(crate) fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

impl Dataset {
    /// Loads splits in the order train, validation, test so ids are assigned
    /// deterministically. Descriptions of unknown entities are skipped.
    pub fn load(paths: &DatasetPaths) -> Result<Self> {
        let mut vocab = Vocabulary::default();
        let read = |p: &Path, vocab: &mut Vocabulary| parse_triples(open(p)?, &p.display().to_string(), vocab);
        let train = read(&paths.train, &mut vocab)?;
        let validation = match &paths.validation {
            Some(p) => read(p, &mut vocab)?,
            None => Vec::new(),
        };
        let test = match &paths.test {
            Some(p) => read(p, &mut vocab)?,
            None => Vec::new(),
        };
        let descriptions = match &paths.descriptions {
            Some(p) => {
                parse_descriptions(open(p)?, &p.display().to_string(), &vocab, UnknownEntityPolicy::Lenient)?
                    .descriptions
            }
            None => BTreeMap::new(),
        };
        Ok(Dataset { vocab, train, validation, test, descriptions })
    }

    /// Distinct entities appearing in the training split, ascending.
    pub fn training_entities(&self) -> Vec<EntityId> {
        entities_of(&self.train)
    }

    pub fn description(&self, id: EntityId) -> Option<&str> {
        self.descriptions.get(&id).map(String::as_str)
    }

    /// Fails naming the first entity used by any split that lacks a
    /// non-empty description.
    pub fn require_descriptions(&self) -> Result<()> {
        let used = entities_of(self.train.iter().chain(&self.validation).chain(&self.test));
        for id in used {
            match self.description(id) {
                Some(text) if !text.trim().is_empty() => {}
                _ => return Err(Error::MissingDescription(self.vocab.entity_name(id).to_owned())),
            }
        }
        Ok(())
    }

    pub fn stats(&self) -> DatasetStats {
        let mut words = HashSet::new();
        let mut max_len = 0;
        for text in self.descriptions.values() {
            let tokens = tokenize(text);
            max_len = max_len.max(tokens.len());
            words.extend(tokens);
        }
        DatasetStats {
            entities: self.vocab.entity_count(),
            relations: self.vocab.relation_count(),
            description_vocabulary: words.len(),
            max_description_length: max_len,
            train: self.train.len(),
            validation: self.validation.len(),
            test: self.test.len(),
        }
    }
}

pub fn entities_of<'a>(triples: impl IntoIterator<Item = &'a Triple>) -> Vec<EntityId> {
    let mut set: Vec<EntityId> = triples.into_iter().flat_map(|t| [t.head, t.tail]).collect();
    set.sort_unstable();
    set.dedup();
    set
}

/// Dataset statistics in the layout of the usual dataset summary table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetStats {
    pub entities: usize,
    pub relations: usize,
    pub description_vocabulary: usize,
    pub max_description_length: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SplitCounts {
    pub both_seen: usize,
    pub one_unseen: usize,
    pub both_unseen: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.both_seen + self.one_unseen + self.both_unseen
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitReport {
    pub validation: SplitCounts,
    pub test: SplitCounts,
    /// Every validation and test triple has exactly one side unseen in training.
    pub concept_learning_valid: bool,
}

pub fn validate_unseen_split(dataset: &Dataset) -> SplitReport {
    let seen: HashSet<EntityId> = dataset.training_entities().into_iter().collect();
    let count = |split: &[Triple]| {
        let mut c = SplitCounts::default();
        for t in split {
            match (seen.contains(&t.head), seen.contains(&t.tail)) {
                (true, true) => c.both_seen += 1,
                (false, false) => c.both_unseen += 1,
                _ => c.one_unseen += 1,
            }
        }
        c
    };
    let validation = count(&dataset.validation);
    let test = count(&dataset.test);
    let held_out = validation.total() + test.total();
    SplitReport {
        validation,
        test,
        concept_learning_valid: held_out > 0 && validation.one_unseen + test.one_unseen == held_out,
    }
}
