//! The translation model: entity and relation tables, `d(head + relation, tail)`
//! scoring, corruption sampling and the margin ranking loss.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{EntityId, RelationId, Triple};
use crate::error::{Error, Result};
use crate::kernels::{l2_norm, Tensor};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    L1,
    L2,
}

impl Distance {
    /// `d(head + relation, tail)`, accumulated left to right over coordinates.
    pub fn translated(self, head: &[Real], relation: &[Real], tail: &[Real]) -> Real {
        let diffs = head.iter().zip(relation).zip(tail).map(|((h, r), t)| (h + r) - t);
        match self {
            Distance::L1 => diffs.map(Real::abs).sum(),
            Distance::L2 => diffs.map(|x| x * x).sum::<Real>().sqrt(),
        }
    }

    /// `d(a, b)`.
    pub fn between(self, a: &[Real], b: &[Real]) -> Real {
        let diffs = a.iter().zip(b).map(|(x, y)| x - y);
        match self {
            Distance::L1 => diffs.map(Real::abs).sum(),
            Distance::L2 => diffs.map(|x| x * x).sum::<Real>().sqrt(),
        }
    }

    /// Writes `∂d/∂v` at `v = head + relation - tail` into `out`. Zero where
    /// the distance is not differentiable (`sign(0) = 0`, and the origin for L2).
    fn gradient(self, head: &[Real], relation: &[Real], tail: &[Real], out: &mut [Real]) {
        for (((o, h), r), t) in out.iter_mut().zip(head).zip(relation).zip(tail) {
            *o = (h + r) - t;
        }
        match self {
            Distance::L1 => out.iter_mut().for_each(|v| {
                *v = if *v > 0.0 {
                    1.0
                } else if *v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }),
            Distance::L2 => {
                let norm = l2_norm(out);
                if norm > 0.0 {
                    out.iter_mut().for_each(|v| *v /= norm);
                } else {
                    out.fill(0.0);
                }
            }
        }
    }
}

impl std::str::FromStr for Distance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Distance::L1),
            "l2" => Ok(Distance::L2),
            other => Err(Error::Config(format!("unknown distance `{other}` (expected l1 or l2)"))),
        }
    }
}

/// Read access to entity and relation vectors, wherever they come from.
pub trait EmbeddingSource {
    fn entity(&self, id: EntityId) -> Result<&[Real]>;
    fn relation(&self, id: RelationId) -> Result<&[Real]>;
    fn distance(&self) -> Distance;

    fn score(&self, triple: &Triple) -> Result<Real> {
        Ok(self.distance().translated(
            self.entity(triple.head)?,
            self.relation(triple.relation)?,
            self.entity(triple.tail)?,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Table {
    Entities,
    Relations,
}

/// Entity table `|E| × n` and relation table `|R| × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    entities: Tensor,
    relations: Tensor,
    distance: Distance,
}

fn row_of<'a>(table: &'a Tensor, index: usize, kind: &'static str) -> Result<&'a [Real]> {
    let count = table.shape()[0];
    if index >= count {
        return Err(Error::Index { kind, index, count });
    }
    Ok(table.row(index))
}

impl EmbeddingStore {
    pub fn new(entities: Tensor, relations: Tensor, distance: Distance) -> Result<Self> {
        if entities.shape().len() != 2 || relations.shape().len() != 2 || entities.shape()[1] != relations.shape()[1] {
            return Err(Error::dim("entity/relation tables", entities.shape(), relations.shape()));
        }
        Ok(EmbeddingStore { entities, relations, distance })
    }

    /// Rows drawn from `uniform(±6/√n)`, then scaled to unit norm.
    pub fn random<R: Rng>(
        entities: usize,
        relations: usize,
        dim: usize,
        distance: Distance,
        rng: &mut R,
    ) -> Result<Self> {
        if entities == 0 || relations == 0 || dim == 0 {
            return Err(Error::Config("embedding tables need at least one row and one column".into()));
        }
        let bound = 6.0 / (dim as Real).sqrt();
        let mut draw = |rows: usize| {
            let data = (0..rows * dim).map(|_| rng.gen_range(-bound..bound)).collect();
            Tensor::matrix(rows, dim, data)
        };
        let mut store = EmbeddingStore::new(draw(entities)?, draw(relations)?, distance)?;
        store.renormalize(Table::Entities)?;
        store.renormalize(Table::Relations)?;
        Ok(store)
    }

    pub fn dim(&self) -> usize {
        self.entities.shape()[1]
    }

    pub fn entity_count(&self) -> usize {
        self.entities.shape()[0]
    }

    pub fn relation_count(&self) -> usize {
        self.relations.shape()[0]
    }

    pub fn entities(&self) -> &Tensor {
        &self.entities
    }

    pub fn relations(&self) -> &Tensor {
        &self.relations
    }

    pub fn entity_row_mut(&mut self, id: EntityId) -> &mut [Real] {
        self.entities.row_mut(id.0)
    }

    pub fn relation_row_mut(&mut self, id: RelationId) -> &mut [Real] {
        self.relations.row_mut(id.0)
    }

    pub fn table_mut(&mut self, table: Table) -> &mut Tensor {
        match table {
            Table::Entities => &mut self.entities,
            Table::Relations => &mut self.relations,
        }
    }

    pub fn set_distance(&mut self, distance: Distance) {
        self.distance = distance;
    }

    /// Divides every row of `table` by its L2 norm.
    pub fn renormalize(&mut self, table: Table) -> Result<()> {
        let (t, kind) = match table {
            Table::Entities => (&mut self.entities, "entity"),
            Table::Relations => (&mut self.relations, "relation"),
        };
        renormalize_rows(t, kind)
    }

    /// The `k` candidates closest to `query`, ascending by distance, ties by id.
    pub fn nearest_neighbors(
        &self,
        query: &[Real],
        k: usize,
        candidates: &[EntityId],
    ) -> Result<Vec<(EntityId, Real)>> {
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if candidates.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        if query.len() != self.dim() {
            return Err(Error::dim("query vector", &[self.dim()], &[query.len()]));
        }
        let mut scored = candidates
            .iter()
            .map(|&c| Ok((c, self.distance.between(query, self.entity(c)?))))
            .collect::<Result<Vec<_>>>()?;
        scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored)
    }
}

pub(crate) fn renormalize_rows(t: &mut Tensor, kind: &str) -> Result<()> {
    for i in 0..t.shape()[0] {
        normalize_row(t.row_mut(i), kind, i)?;
    }
    Ok(())
}

/// Scales `row` to unit L2 norm.
pub(crate) fn normalize_row(row: &mut [Real], kind: &str, index: usize) -> Result<()> {
    let norm = l2_norm(row);
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Numeric(format!("{kind} row {index} has norm {norm}; cannot renormalize")));
    }
    row.iter_mut().for_each(|v| *v /= norm);
    Ok(())
}

impl EmbeddingSource for EmbeddingStore {
    fn entity(&self, id: EntityId) -> Result<&[Real]> {
        row_of(&self.entities, id.0, "entity")
    }

    fn relation(&self, id: RelationId) -> Result<&[Real]> {
        row_of(&self.relations, id.0, "relation")
    }

    fn distance(&self) -> Distance {
        self.distance
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptSide {
    Left,
    Right,
    /// Left or right with probability one half each.
    UniformRandom,
}

/// Replaces one entity of `triple` with an entity drawn uniformly from
/// `0..entity_count`; the relation is kept.
pub fn corrupt<R: Rng>(triple: &Triple, rng: &mut R, entity_count: usize, side: CorruptSide) -> Triple {
    let left = match side {
        CorruptSide::Left => true,
        CorruptSide::Right => false,
        CorruptSide::UniformRandom => rng.gen_bool(0.5),
    };
    let replacement = EntityId(rng.gen_range(0..entity_count));
    replace_side(triple, left, replacement)
}

/// Like [`corrupt`], drawing the replacement uniformly from `candidates`.
pub fn corrupt_among<R: Rng>(triple: &Triple, rng: &mut R, candidates: &[EntityId], side: CorruptSide) -> Triple {
    let left = match side {
        CorruptSide::Left => true,
        CorruptSide::Right => false,
        CorruptSide::UniformRandom => rng.gen_bool(0.5),
    };
    let replacement = candidates[rng.gen_range(0..candidates.len())];
    replace_side(triple, left, replacement)
}

fn replace_side(triple: &Triple, left: bool, entity: EntityId) -> Triple {
    let mut t = *triple;
    if left {
        t.head = entity;
    } else {
        t.tail = entity;
    }
    t
}

/// Loss value and gradients for every embedding a batch touched.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MarginLoss {
    pub loss: Real,
    /// Pairs whose hinge was strictly positive.
    pub active: usize,
    pub entity_grads: BTreeMap<EntityId, Vec<Real>>,
    pub relation_grads: BTreeMap<RelationId, Vec<Real>>,
}

fn accumulate<K: Ord>(map: &mut BTreeMap<K, Vec<Real>>, key: K, grad: &[Real], sign: Real) {
    let slot = map.entry(key).or_insert_with(|| vec![0.0; grad.len()]);
    for (s, g) in slot.iter_mut().zip(grad) {
        *s += sign * g;
    }
}

/// `Σ max(0, γ + d(pos) − d(neg))` over aligned (positive, negative) pairs.
///
/// Gradients are zero for pairs whose hinge is inactive (including exactly 0).
pub fn margin_loss<S: EmbeddingSource + ?Sized>(
    source: &S,
    positives: &[Triple],
    negatives: &[Triple],
    gamma: Real,
) -> Result<MarginLoss> {
    if !(gamma > 0.0) {
        return Err(Error::Config(format!("margin must be positive, got {gamma}")));
    }
    if positives.len() != negatives.len() {
        return Err(Error::dim("positive/negative batch", &[positives.len()], &[negatives.len()]));
    }
    let distance = source.distance();
    let mut out = MarginLoss::default();
    let mut gp = Vec::new();
    let mut gn = Vec::new();
    for (pos, neg) in positives.iter().zip(negatives) {
        let (h, r, t) = (source.entity(pos.head)?, source.relation(pos.relation)?, source.entity(pos.tail)?);
        let (h2, r2, t2) = (source.entity(neg.head)?, source.relation(neg.relation)?, source.entity(neg.tail)?);
        let hinge = gamma + distance.translated(h, r, t) - distance.translated(h2, r2, t2);
        if hinge <= 0.0 {
            continue;
        }
        out.loss += hinge;
        out.active += 1;
        gp.resize(h.len(), 0.0);
        gn.resize(h.len(), 0.0);
        distance.gradient(h, r, t, &mut gp);
        distance.gradient(h2, r2, t2, &mut gn);
        accumulate(&mut out.entity_grads, pos.head, &gp, 1.0);
        accumulate(&mut out.relation_grads, pos.relation, &gp, 1.0);
        accumulate(&mut out.entity_grads, pos.tail, &gp, -1.0);
        accumulate(&mut out.entity_grads, neg.head, &gn, -1.0);
        accumulate(&mut out.relation_grads, neg.relation, &gn, -1.0);
        accumulate(&mut out.entity_grads, neg.tail, &gn, 1.0);
    }
    Ok(out)
}

/// Margin loss with each positive's single negative replaced by its
/// expectation over the corruption distribution: the side chosen as
/// [`corrupt_among`] chooses it and the replacement uniform over `candidates`.
///
/// This is the quantity the sampled loss estimates, without sampling noise.
pub fn expected_margin_loss<S: EmbeddingSource + ?Sized>(
    source: &S,
    positives: &[Triple],
    candidates: &[EntityId],
    gamma: Real,
    side: CorruptSide,
) -> Result<Real> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let sides: &[(bool, Real)] = match side {
        CorruptSide::Left => &[(true, 1.0)],
        CorruptSide::Right => &[(false, 1.0)],
        CorruptSide::UniformRandom => &[(true, 0.5), (false, 0.5)],
    };
    let mut total = 0.0;
    for pos in positives {
        let d_pos = source.score(pos)?;
        for &(left, weight) in sides {
            let mut sum = 0.0;
            for &c in candidates {
                let d_neg = source.score(&replace_side(pos, left, c))?;
                sum += (gamma + d_pos - d_neg).max(0.0);
            }
            total += weight * sum / candidates.len() as Real;
        }
    }
    Ok(total)
}
