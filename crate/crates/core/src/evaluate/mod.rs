//! Link prediction: for each test triple, replace one side with every
//! candidate entity, rank the true entity by score, and report mean rank and
//! hits@10 per side.
//!
//! The protocol is the raw one: other true triples among the corruptions are
//! not filtered out. Ties with the true entity do not worsen its rank unless
//! [`TieMode::Pessimistic`] is selected.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rand::seq::index::sample;
use rayon::prelude::*;

use crate::dataset::{EntityId, RelationId, Triple, Vocabulary};
use crate::encoders::ConceptEncoder;
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};
use crate::transe::{Distance, EmbeddingSource, EmbeddingStore};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Corrupt the head.
    Left,
    /// Corrupt the tail.
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieMode {
    /// Candidates scoring equal to the true entity do not count against it.
    #[default]
    Optimistic,
    /// They do.
    Pessimistic,
}

/// Rank of the true entity on `side` among `candidates` (1 = best).
///
/// The true entity itself is never counted, whether or not it is a candidate.
pub fn rank_side<S: EmbeddingSource + ?Sized>(
    model: &S,
    triple: &Triple,
    side: Side,
    candidates: &[EntityId],
    ties: TieMode,
) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let distance = model.distance();
    let head = model.entity(triple.head)?;
    let relation = model.relation(triple.relation)?;
    let tail = model.entity(triple.tail)?;
    let target = distance.translated(head, relation, tail);
    let beats = |s: Real| match ties {
        TieMode::Optimistic => s < target,
        TieMode::Pessimistic => s <= target,
    };
    let mut better = 0;
    match side {
        Side::Left => {
            for &c in candidates {
                if c != triple.head && beats(distance.translated(model.entity(c)?, relation, tail)) {
                    better += 1;
                }
            }
        }
        Side::Right => {
            // head + relation once per triple; summation order matches `translated`.
            let query: Vec<Real> = head.iter().zip(relation).map(|(h, r)| h + r).collect();
            for &c in candidates {
                if c != triple.tail && beats(offset_distance(distance, &query, model.entity(c)?)) {
                    better += 1;
                }
            }
        }
    }
    Ok(better + 1)
}

fn offset_distance(distance: Distance, query: &[Real], tail: &[Real]) -> Real {
    let diffs = query.iter().zip(tail).map(|(q, t)| q - t);
    match distance {
        Distance::L1 => diffs.map(Real::abs).sum(),
        Distance::L2 => diffs.map(|x| x * x).sum::<Real>().sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankRecord {
    pub triple: Triple,
    pub left: Option<usize>,
    pub right: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub left_mean_rank: Option<Real>,
    pub right_mean_rank: Option<Real>,
    /// Mean of the left and right mean ranks (or the only one present).
    pub mean_rank: Option<Real>,
    /// Percentages.
    pub left_hits: Option<Real>,
    pub right_hits: Option<Real>,
    pub hits: Option<Real>,
    pub hits_at: usize,
    pub records: Vec<RankRecord>,
    pub candidates: usize,
    pub sample_size: usize,
    /// Sides left unranked (unseen-entity protocol).
    pub skipped_sides: usize,
}

fn mean(values: &[usize]) -> Option<Real> {
    (!values.is_empty()).then(|| values.iter().map(|&v| v as Real).sum::<Real>() / values.len() as Real)
}

fn hits(values: &[usize], k: usize) -> Option<Real> {
    (!values.is_empty()).then(|| 100.0 * values.iter().filter(|&&v| v <= k).count() as Real / values.len() as Real)
}

fn average(a: Option<Real>, b: Option<Real>) -> Option<Real> {
    match (a, b) {
        (Some(a), Some(b)) => Some((a + b) / 2.0),
        (a, None) => a,
        (None, b) => b,
    }
}

impl EvalReport {
    pub fn from_records(records: Vec<RankRecord>, candidates: usize, hits_at: usize, skipped_sides: usize) -> Self {
        let left: Vec<usize> = records.iter().filter_map(|r| r.left).collect();
        let right: Vec<usize> = records.iter().filter_map(|r| r.right).collect();
        let (lm, rm) = (mean(&left), mean(&right));
        let (lh, rh) = (hits(&left, hits_at), hits(&right, hits_at));
        EvalReport {
            left_mean_rank: lm,
            right_mean_rank: rm,
            mean_rank: average(lm, rm),
            left_hits: lh,
            right_hits: rh,
            hits: average(lh, rh),
            hits_at,
            sample_size: records.len(),
            records,
            candidates,
            skipped_sides,
        }
    }

    pub fn to_text(&self) -> String {
        let f = |v: Option<Real>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
        let mut out = String::new();
        let _ = writeln!(out, "candidates: {}", self.candidates);
        let _ = writeln!(out, "sample size used: {}", self.sample_size);
        if self.skipped_sides > 0 {
            let _ = writeln!(out, "skipped sides: {}", self.skipped_sides);
        }
        let _ = writeln!(out, "{:<14}{:>12}{:>12}{:>12}", "", "left", "right", "avg");
        let _ = writeln!(
            out,
            "{:<14}{:>12}{:>12}{:>12}",
            "mean rank",
            f(self.left_mean_rank),
            f(self.right_mean_rank),
            f(self.mean_rank)
        );
        let _ = writeln!(
            out,
            "{:<14}{:>12}{:>12}{:>12}",
            format!("hits@{} (%)", self.hits_at),
            f(self.left_hits),
            f(self.right_hits),
            f(self.hits)
        );
        out
    }

    /// `key<TAB>value` lines; absent values are `NA`.
    pub fn to_tsv(&self) -> String {
        let f = |v: Option<Real>| v.map_or_else(|| "NA".to_string(), |v| format!("{v}"));
        let k = self.hits_at;
        let mut out = String::new();
        for (key, value) in [
            ("left_mean_rank".to_string(), f(self.left_mean_rank)),
            ("right_mean_rank".to_string(), f(self.right_mean_rank)),
            ("mean_rank".to_string(), f(self.mean_rank)),
            (format!("left_hits{k}"), f(self.left_hits)),
            (format!("right_hits{k}"), f(self.right_hits)),
            (format!("hits{k}"), f(self.hits)),
            ("candidates".to_string(), self.candidates.to_string()),
            ("sample_size".to_string(), self.sample_size.to_string()),
            ("skipped_sides".to_string(), self.skipped_sides.to_string()),
        ] {
            let _ = writeln!(out, "{key}\t{value}");
        }
        out
    }

    /// `head rel tail left_rank right_rank` lines (`NA` for unranked sides).
    pub fn ranks_dump(&self, vocab: &Vocabulary) -> String {
        let mut out = String::new();
        let f = |v: Option<usize>| v.map_or_else(|| "NA".to_string(), |v| v.to_string());
        for r in &self.records {
            let _ = writeln!(
                out,
                "{} {} {} {} {}",
                vocab.entity_name(r.triple.head),
                vocab.relation_name(r.triple.relation),
                vocab.entity_name(r.triple.tail),
                f(r.left),
                f(r.right)
            );
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Evaluate a uniform random subset of this many triples.
    pub sample_size: Option<usize>,
    pub seed: u64,
    pub ties: TieMode,
    pub hits_at: usize,
    /// Worker threads for ranking; 1 runs on the calling thread.
    pub threads: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { sample_size: None, seed: 0, ties: TieMode::Optimistic, hits_at: 10, threads: 1 }
    }
}

/// The triples to evaluate, in their original order.
pub fn sample_triples(triples: &[Triple], options: &EvalOptions) -> Vec<Triple> {
    match options.sample_size {
        Some(n) if n < triples.len() => {
            let mut rng = substream(options.seed, Stream::EvalSample);
            let mut picked = sample(&mut rng, triples.len(), n).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| triples[i]).collect()
        }
        _ => triples.to_vec(),
    }
}

fn map_triples<F>(triples: &[Triple], threads: usize, f: F) -> Result<Vec<RankRecord>>
where
    F: Fn(&Triple) -> Result<RankRecord> + Sync + Send,
{
    if threads <= 1 {
        return triples.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {threads} threads: {e}")))?;
    pool.install(|| triples.par_iter().map(f).collect())
}

/// Ranks both sides of every (sampled) triple against `candidates`.
pub fn link_prediction_eval<S: EmbeddingSource + Sync + ?Sized>(
    model: &S,
    triples: &[Triple],
    candidates: &[EntityId],
    options: &EvalOptions,
) -> Result<EvalReport> {
    if triples.is_empty() {
        return Err(Error::Config("no triples to evaluate".into()));
    }
    let chosen = sample_triples(triples, options);
    let records = map_triples(&chosen, options.threads, |t| {
        Ok(RankRecord {
            triple: *t,
            left: Some(rank_side(model, t, Side::Left, candidates, options.ties)?),
            right: Some(rank_side(model, t, Side::Right, candidates, options.ties)?),
        })
    })?;
    Ok(EvalReport::from_records(records, candidates.len(), options.hits_at, 0))
}

/// A store with extra entity rows layered on top (encoded unseen entities).
#[derive(Debug)]
pub struct Overlay<'a> {
    pub base: &'a EmbeddingStore,
    pub extra: BTreeMap<EntityId, Vec<Real>>,
}

impl EmbeddingSource for Overlay<'_> {
    fn entity(&self, id: EntityId) -> Result<&[Real]> {
        match self.extra.get(&id) {
            Some(v) => Ok(v),
            None => self.base.entity(id),
        }
    }

    fn relation(&self, id: RelationId) -> Result<&[Real]> {
        self.base.relation(id)
    }

    fn distance(&self) -> Distance {
        self.base.distance()
    }
}

/// Link prediction where one side of each test triple was never seen in
/// training. The unseen entity is embedded by encoding its description; the
/// seen side is then ranked against the training entities. The unseen side is
/// skipped (and counted) unless `both_sides` is set, in which case it is ranked
/// among the training entities plus itself.
#[allow(clippy::too_many_arguments)]
pub fn unseen_entity_eval(
    encoder: &ConceptEncoder,
    store: &EmbeddingStore,
    training_entities: &[EntityId],
    triples: &[Triple],
    descriptions: &BTreeMap<EntityId, String>,
    vocab: &Vocabulary,
    options: &EvalOptions,
    both_sides: bool,
) -> Result<EvalReport> {
    if triples.is_empty() {
        return Err(Error::Config("no triples to evaluate".into()));
    }
    let seen: HashSet<EntityId> = training_entities.iter().copied().collect();
    let chosen = sample_triples(triples, options);
    let mut overlay = Overlay { base: store, extra: BTreeMap::new() };
    for t in &chosen {
        for id in [t.head, t.tail] {
            if seen.contains(&id) || overlay.extra.contains_key(&id) {
                continue;
            }
            let text = descriptions
                .get(&id)
                .filter(|d| !d.trim().is_empty())
                .ok_or_else(|| Error::MissingDescription(vocab.entity_name(id).to_owned()))?;
            let e =
                encoder.encode(text).map_err(|e| Error::Numeric(format!("entity `{}`: {e}", vocab.entity_name(id))))?;
            overlay.extra.insert(id, e.into_data());
        }
    }
    let ties = options.ties;
    let records = map_triples(&chosen, options.threads, |t| {
        let rank = |side: Side, corrupted_seen: bool| -> Result<Option<usize>> {
            if corrupted_seen || both_sides {
                rank_side(&overlay, t, side, training_entities, ties).map(Some)
            } else {
                Ok(None)
            }
        };
        Ok(RankRecord {
            triple: *t,
            left: rank(Side::Left, seen.contains(&t.head))?,
            right: rank(Side::Right, seen.contains(&t.tail))?,
        })
    })?;
    let skipped = records.iter().map(|r| r.left.is_none() as usize + r.right.is_none() as usize).sum();
    Ok(EvalReport::from_records(records, training_entities.len(), options.hits_at, skipped))
}
