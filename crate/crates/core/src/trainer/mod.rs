//! Training loops for the plain translation model and for the joint model
//! whose entity embeddings come from a description encoder.
//!
//! An epoch is one shuffled pass over the training triples; an iteration is
//! one mini-batch step. Each positive triple is paired with one corrupted
//! triple whose replacement entity is drawn from the training entities.

mod checkpoint;
mod optim;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, EarlyStopping, TrainRng, CHECKPOINT_VERSION};
pub use optim::{nesterov_step, nesterov_update};

use crate::dataset::{entities_of, Dataset, EntityId, RelationId, Triple, WordVectorTable};
use crate::encoders::{
    CnnConfig, CnnLayer, ConceptEncoder, EncoderConfig, EncoderInput, MlpConfig, OutputLayer, TraceCache,
};
use crate::error::{Error, Result};
use crate::evaluate::{link_prediction_eval, unseen_entity_eval, EvalOptions, EvalReport};
use crate::kernels::Tensor;
use crate::rng::{substream, RngState, Stream};
use crate::transe::{
    corrupt_among, margin_loss, normalize_row, CorruptSide, Distance, EmbeddingSource, EmbeddingStore, Table,
};
use crate::Real;

/// Resampling attempts per negative when filtering known triples.
const MAX_RESAMPLE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// One free embedding row per entity.
    Baseline,
    JointMlp,
    JointCnn,
}

impl Mode {
    pub fn is_joint(self) -> bool {
        self != Mode::Baseline
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "joint_mlp" => Ok(Mode::JointMlp),
            "joint_cnn" => Ok(Mode::JointCnn),
            other => Err(Error::Config(format!("unknown mode `{other}` (expected baseline, joint_mlp or joint_cnn)"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Baseline => "baseline",
            Mode::JointMlp => "joint_mlp",
            Mode::JointCnn => "joint_cnn",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub gamma: Real,
    pub learning_rate: Real,
    pub momentum: Real,
    pub batch_size: usize,
    pub epochs: usize,
    pub distance: Distance,
    /// Embedding dimension n.
    pub dim: usize,
    pub seed: u64,
    /// Validate every this many epochs (and after the last); 0 only at the end.
    pub eval_every: usize,
    pub eval_sample_size: Option<usize>,
    /// Threads used for evaluation.
    pub threads: usize,
    /// Redraw negatives that are training triples.
    pub filtered_negatives: bool,
    pub corrupt_side: CorruptSide,
    /// Baseline only; joint training always renormalizes relations.
    pub renormalize_relations: bool,
    pub early_stopping: bool,
    /// Evaluations without improvement before early stopping.
    pub patience: usize,
    /// MLP hidden width, or the CNN dense width.
    pub hidden: usize,
    pub output: OutputLayer,
    /// CNN tokens per description.
    pub input_len: usize,
    /// Replaces the standard CNN layer stack.
    pub cnn_layers: Option<Vec<CnnLayer>>,
}

impl TrainConfig {
    pub fn new(mode: Mode) -> Self {
        TrainConfig {
            mode,
            gamma: 1.0,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: if mode.is_joint() { 64 } else { 512 },
            epochs: 100,
            distance: Distance::L1,
            dim: 50,
            seed: 0,
            eval_every: 10,
            eval_sample_size: None,
            threads: 1,
            filtered_negatives: false,
            corrupt_side: CorruptSide::UniformRandom,
            renormalize_relations: false,
            early_stopping: false,
            patience: 5,
            hidden: 500,
            output: OutputLayer::Normalized,
            input_len: 128,
            cnn_layers: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return bad(format!("margin must be positive, got {}", self.gamma));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.dim == 0 || self.hidden == 0 {
            return bad("dimensions must be at least 1".into());
        }
        if self.threads == 0 {
            return bad("thread count must be at least 1".into());
        }
        if self.early_stopping && self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if let Some(EncoderConfig::Cnn(c)) = self.encoder_config() {
            c.validate()?;
        }
        Ok(())
    }

    pub fn encoder_config(&self) -> Option<EncoderConfig> {
        match self.mode {
            Mode::Baseline => None,
            Mode::JointMlp => {
                Some(EncoderConfig::Mlp(MlpConfig { hidden: self.hidden, dim: self.dim, output: self.output }))
            }
            Mode::JointCnn => {
                let mut c = CnnConfig::standard(self.dim, self.input_len);
                if let Some(layers) = &self.cnn_layers {
                    c.layers = layers.clone();
                }
                c.dense = self.hidden;
                c.output = self.output;
                Some(EncoderConfig::Cnn(c))
            }
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            sample_size: self.eval_sample_size,
            seed: self.seed,
            threads: self.threads,
            ..EvalOptions::default()
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::new(Mode::Baseline)
    }
}

/// Running summary of encoder-output norms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub count: usize,
    pub min: Real,
    pub max: Real,
    pub sum: Real,
}

impl Default for NormStats {
    fn default() -> Self {
        NormStats { count: 0, min: Real::INFINITY, max: Real::NEG_INFINITY, sum: 0.0 }
    }
}

impl NormStats {
    pub fn add(&mut self, norm: Real) {
        self.count += 1;
        self.min = self.min.min(norm);
        self.max = self.max.max(norm);
        self.sum += norm;
    }

    pub fn merge(&mut self, other: &NormStats) {
        self.count += other.count;
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
        self.sum += other.sum;
    }

    pub fn mean(&self) -> Option<Real> {
        (self.count > 0).then(|| self.sum / self.count as Real)
    }

    /// Largest `|norm − 1|` seen.
    pub fn max_unit_error(&self) -> Option<Real> {
        (self.count > 0).then(|| (self.max - 1.0).abs().max((1.0 - self.min).abs()))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchOutcome {
    pub loss: Real,
    pub active: usize,
    /// Norms of the encoder outputs computed for this batch (joint modes).
    pub output_norms: Option<NormStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    /// Sum of the batch losses.
    pub loss: Real,
    pub active_pairs: usize,
    pub batches: usize,
    pub validation: Option<EvalReport>,
    pub output_norms: Option<NormStats>,
    pub stopped_early: bool,
}

impl EpochReport {
    /// `epoch loss val_mean_rank val_hits10`, with `NA` for skipped validation.
    pub fn metrics_line(&self) -> String {
        let (mr, hits) = match &self.validation {
            Some(v) => (fmt_opt(v.mean_rank), fmt_opt(v.hits)),
            None => ("NA".to_owned(), "NA".to_owned()),
        };
        format!("{} {} {} {}", self.epoch, self.loss, mr, hits)
    }
}

fn fmt_opt(v: Option<Real>) -> String {
    v.map_or_else(|| "NA".to_owned(), |x| x.to_string())
}

/// Entity rows from one batch of encoder outputs, relations from the store.
struct BatchView<'a> {
    entities: &'a BTreeMap<EntityId, Vec<Real>>,
    relations: &'a EmbeddingStore,
}

impl EmbeddingSource for BatchView<'_> {
    fn entity(&self, id: EntityId) -> Result<&[Real]> {
        self.entities
            .get(&id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::State(format!("entity {} was not encoded for this batch", id.0)))
    }

    fn relation(&self, id: RelationId) -> Result<&[Real]> {
        self.relations.relation(id)
    }

    fn distance(&self) -> Distance {
        self.relations.distance()
    }
}

fn zero_velocity(t: &Tensor) -> Tensor {
    Tensor::zeros(t.shape())
}

/// Training state plus the dataset it trains on. Iterating yields one
/// [`EpochReport`] per epoch until the configured epoch count or early stop.
pub struct Trainer<'a> {
    dataset: &'a Dataset,
    state: Checkpoint,
    inputs: BTreeMap<EntityId, EncoderInput>,
    known: HashSet<Triple>,
    shuffle: ChaCha8Rng,
    corrupt: ChaCha8Rng,
    cache: TraceCache,
    done: bool,
}

/// Starts baseline training; iterate the result to run epochs.
pub fn train_baseline<'a>(dataset: &'a Dataset, config: &TrainConfig) -> Result<Trainer<'a>> {
    if config.mode != Mode::Baseline {
        return Err(Error::Config(format!("mode {} is not baseline", config.mode)));
    }
    Trainer::new(dataset, config, None)
}

/// Starts joint training; `word_vectors` is required for the CNN encoder.
pub fn train_joint<'a>(
    dataset: &'a Dataset,
    config: &TrainConfig,
    word_vectors: Option<&WordVectorTable>,
) -> Result<Trainer<'a>> {
    if !config.mode.is_joint() {
        return Err(Error::Config("joint training needs mode joint_mlp or joint_cnn".into()));
    }
    Trainer::new(dataset, config, word_vectors)
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset, config: &TrainConfig, word_vectors: Option<&WordVectorTable>) -> Result<Self> {
        config.validate()?;
        if dataset.train.is_empty() {
            return Err(Error::Config("the training split is empty".into()));
        }
        let vocab = &dataset.vocab;
        let training_entities = dataset.training_entities();
        let mut init = substream(config.seed, Stream::Init);
        let mut store = EmbeddingStore::random(
            vocab.entity_count(),
            vocab.relation_count(),
            config.dim,
            config.distance,
            &mut init,
        )?;
        let mut velocities = BTreeMap::new();
        velocities.insert("store.relations".to_owned(), zero_velocity(store.relations()));
        let encoder = match config.encoder_config() {
            None => {
                velocities.insert("store.entities".to_owned(), zero_velocity(store.entities()));
                None
            }
            Some(ec) => {
                if config.mode == Mode::JointCnn && word_vectors.is_none() {
                    return Err(Error::Config("joint_cnn mode needs a word-vector file".into()));
                }
                let mut texts = Vec::with_capacity(training_entities.len());
                for &id in &training_entities {
                    match dataset.description(id) {
                        Some(t) if !t.trim().is_empty() => texts.push(t),
                        _ => {
                            return Err(Error::Training(format!(
                                "entity `{}` has no description",
                                vocab.entity_name(id)
                            )))
                        }
                    }
                }
                let encoder = ConceptEncoder::init(&ec, config.seed, texts, word_vectors)?;
                for (name, p) in encoder.named_parameters() {
                    velocities.insert(name, zero_velocity(&p.value));
                }
                store.table_mut(Table::Entities).fill(0.0);
                Some(encoder)
            }
        };
        let state = Checkpoint {
            config: config.clone(),
            vocab: vocab.clone(),
            training_entities,
            epoch: 0,
            rng: TrainRng {
                shuffle: RngState::capture(&substream(config.seed, Stream::Shuffle)),
                corrupt: RngState::capture(&substream(config.seed, Stream::Corrupt)),
            },
            early_stopping: EarlyStopping::default(),
            store,
            encoder,
            velocities,
        };
        let mut trainer = Self::from_state(dataset, state)?;
        trainer.materialize()?;
        Ok(trainer)
    }

    /// Continues training from a checkpoint over the same dataset.
    pub fn resume(dataset: &'a Dataset, checkpoint: Checkpoint) -> Result<Self> {
        if checkpoint.vocab != dataset.vocab {
            return Err(Error::Config("checkpoint vocabulary does not match the dataset".into()));
        }
        Self::from_state(dataset, checkpoint)
    }

    fn from_state(dataset: &'a Dataset, state: Checkpoint) -> Result<Self> {
        let restore =
            |s: &RngState| s.restore().ok_or_else(|| Error::Integrity("unreadable random-stream position".into()));
        let inputs = match &state.encoder {
            Some(enc) => state
                .training_entities
                .iter()
                .filter_map(|&id| dataset.description(id).map(|t| (id, enc.featurize(t))))
                .collect(),
            None => BTreeMap::new(),
        };
        let known =
            if state.config.filtered_negatives { dataset.train.iter().copied().collect() } else { HashSet::new() };
        Ok(Trainer {
            dataset,
            shuffle: restore(&state.rng.shuffle)?,
            corrupt: restore(&state.rng.corrupt)?,
            inputs,
            known,
            cache: TraceCache::default(),
            done: false,
            state,
        })
    }

    pub fn state(&self) -> &Checkpoint {
        &self.state
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.state.config
    }

    /// Writes the current encoder outputs of all training entities into the
    /// store's entity table.
    fn materialize(&mut self) -> Result<()> {
        let Some(encoder) = &self.state.encoder else {
            return Ok(());
        };
        for (&id, input) in &self.inputs {
            let e = encoder.forward(input)?.0;
            self.state.store.entity_row_mut(id).copy_from_slice(e.data());
        }
        Ok(())
    }

    /// One corrupted partner per positive.
    pub fn sample_negatives(&mut self, positives: &[Triple]) -> Vec<Triple> {
        let side = self.state.config.corrupt_side;
        let candidates = &self.state.training_entities;
        positives
            .iter()
            .map(|p| {
                let mut neg = corrupt_among(p, &mut self.corrupt, candidates, side);
                for _ in 1..MAX_RESAMPLE {
                    if !self.known.contains(&neg) {
                        break;
                    }
                    neg = corrupt_among(p, &mut self.corrupt, candidates, side);
                }
                neg
            })
            .collect()
    }

    fn encode_batch(
        &mut self,
        positives: &[Triple],
        negatives: &[Triple],
        cache: bool,
    ) -> Result<(BTreeMap<EntityId, Vec<Real>>, NormStats)> {
        let encoder = self.state.encoder.as_ref().expect("joint mode");
        let mut embedded = BTreeMap::new();
        let mut norms = NormStats::default();
        if cache {
            self.cache.clear();
        }
        for id in entities_of(positives.iter().chain(negatives)) {
            let input = self.inputs.get(&id).ok_or_else(|| {
                Error::Training(format!("entity `{}` has no description", self.dataset.vocab.entity_name(id)))
            })?;
            let e = if cache { self.cache.forward(encoder, id, input)? } else { encoder.forward(input)?.0 };
            norms.add(e.l2_norm());
            embedded.insert(id, e.into_data());
        }
        Ok((embedded, norms))
    }

    /// Margin loss of a batch under the current parameters; no state changes.
    pub fn batch_loss(&mut self, positives: &[Triple], negatives: &[Triple]) -> Result<Real> {
        let gamma = self.state.config.gamma;
        if self.state.encoder.is_none() {
            return Ok(margin_loss(&self.state.store, positives, negatives, gamma)?.loss);
        }
        let (embedded, _) = self.encode_batch(positives, negatives, false)?;
        let view = BatchView { entities: &embedded, relations: &self.state.store };
        Ok(margin_loss(&view, positives, negatives, gamma)?.loss)
    }

    /// Mutable access to the encoder, for experiments that perturb weights.
    pub fn encoder_mut(&mut self) -> Option<&mut ConceptEncoder> {
        self.state.encoder.as_mut()
    }

    /// One optimization step on the given positives and negatives.
    pub fn train_batch(&mut self, positives: &[Triple], negatives: &[Triple]) -> Result<BatchOutcome> {
        let (gamma, lr, mu) = (self.state.config.gamma, self.state.config.learning_rate, self.state.config.momentum);
        if self.state.encoder.is_none() {
            let ml = margin_loss(&self.state.store, positives, negatives, gamma)?;
            let renorm_rel = self.state.config.renormalize_relations;
            let st = &mut self.state;
            let grads = ml.entity_grads.iter().map(|(k, g)| (k.0, g));
            update_rows(&mut st.store, &mut st.velocities, Table::Entities, grads, lr, mu, true)?;
            let grads = ml.relation_grads.iter().map(|(k, g)| (k.0, g));
            update_rows(&mut st.store, &mut st.velocities, Table::Relations, grads, lr, mu, renorm_rel)?;
            return Ok(BatchOutcome { loss: ml.loss, active: ml.active, output_norms: None });
        }

        let (embedded, norms) = self.encode_batch(positives, negatives, true)?;
        let view = BatchView { entities: &embedded, relations: &self.state.store };
        let ml = margin_loss(&view, positives, negatives, gamma)?;
        let st = &mut self.state;
        let encoder = st.encoder.as_mut().expect("joint mode");
        encoder.zero_grad();
        for (id, g) in &ml.entity_grads {
            self.cache.backward(encoder, *id, &Tensor::vector(g.clone()))?;
        }
        let names: Vec<String> = encoder.named_parameters().into_iter().map(|(n, _)| n).collect();
        for (name, p) in names.iter().zip(encoder.parameters_mut()) {
            let v = st.velocities.get_mut(name).ok_or_else(|| Error::State(format!("no velocity for `{name}`")))?;
            nesterov_step(p, v, lr, mu)?;
        }
        let grads = ml.relation_grads.iter().map(|(k, g)| (k.0, g));
        update_rows(&mut st.store, &mut st.velocities, Table::Relations, grads, lr, mu, true)?;
        Ok(BatchOutcome { loss: ml.loss, active: ml.active, output_norms: Some(norms) })
    }

    pub fn run_epoch(&mut self) -> Result<EpochReport> {
        self.run_epoch_with(&mut |_| {})
    }

    /// Runs one epoch, calling `hook` with the state after every iteration.
    pub fn run_epoch_with(&mut self, hook: &mut dyn FnMut(&Checkpoint)) -> Result<EpochReport> {
        let train = &self.dataset.train;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.shuffle);
        let mut report = EpochReport {
            epoch: self.state.epoch + 1,
            loss: 0.0,
            active_pairs: 0,
            batches: 0,
            validation: None,
            output_norms: None,
            stopped_early: false,
        };
        let mut norms = NormStats::default();
        for chunk in order.chunks(self.state.config.batch_size) {
            let positives: Vec<Triple> = chunk.iter().map(|&i| train[i]).collect();
            let negatives = self.sample_negatives(&positives);
            let out = self.train_batch(&positives, &negatives)?;
            report.loss += out.loss;
            report.active_pairs += out.active;
            report.batches += 1;
            if let Some(n) = &out.output_norms {
                norms.merge(n);
            }
            hook(&self.state);
        }
        if self.state.encoder.is_some() {
            report.output_norms = Some(norms);
        }
        self.state.epoch += 1;
        self.materialize()?;
        self.state.rng =
            TrainRng { shuffle: RngState::capture(&self.shuffle), corrupt: RngState::capture(&self.corrupt) };

        let config = &self.state.config;
        let epoch = self.state.epoch;
        let due = (config.eval_every > 0 && epoch.is_multiple_of(config.eval_every)) || epoch == config.epochs;
        if due && !self.dataset.validation.is_empty() {
            let v = self.state.evaluate(self.dataset, &self.dataset.validation, &config.eval_options(), false)?;
            if let Some(mr) = v.mean_rank {
                let es = &mut self.state.early_stopping;
                if es.best_mean_rank.is_none_or(|b| mr < b) {
                    es.best_mean_rank = Some(mr);
                    es.stale = 0;
                } else {
                    es.stale += 1;
                }
                if self.state.config.early_stopping && es.stale >= self.state.config.patience {
                    report.stopped_early = true;
                    self.done = true;
                }
            }
            report.validation = Some(v);
        }
        Ok(report)
    }
}

impl Iterator for Trainer<'_> {
    type Item = Result<EpochReport>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done || self.state.epoch >= self.state.config.epochs {
            return None;
        }
        let r = self.run_epoch();
        if r.is_err() {
            self.done = true;
        }
        Some(r)
    }
}

/// Lazy momentum update of the touched rows of one table.
fn update_rows<'g>(
    store: &mut EmbeddingStore,
    velocities: &mut BTreeMap<String, Tensor>,
    table: Table,
    grads: impl Iterator<Item = (usize, &'g Vec<Real>)>,
    lr: Real,
    mu: Real,
    renormalize: bool,
) -> Result<()> {
    let (name, kind) = match table {
        Table::Entities => ("store.entities", "entity"),
        Table::Relations => ("store.relations", "relation"),
    };
    let velocity = velocities.get_mut(name).ok_or_else(|| Error::State(format!("no velocity for `{name}`")))?;
    let values = store.table_mut(table);
    for (i, g) in grads {
        nesterov_update(values.row_mut(i), velocity.row_mut(i), g, lr, mu)?;
        if renormalize {
            normalize_row(values.row_mut(i), kind, i)?;
        }
    }
    Ok(())
}

impl Checkpoint {
    /// Ranks `triples` against the training entities. Triples with an entity
    /// outside the training split go through the encoder in joint mode.
    pub fn evaluate(
        &self,
        dataset: &Dataset,
        triples: &[Triple],
        options: &EvalOptions,
        both_sides: bool,
    ) -> Result<EvalReport> {
        let seen: HashSet<EntityId> = self.training_entities.iter().copied().collect();
        let unseen = triples.iter().any(|t| !seen.contains(&t.head) || !seen.contains(&t.tail));
        match &self.encoder {
            Some(encoder) if unseen => unseen_entity_eval(
                encoder,
                &self.store,
                &self.training_entities,
                triples,
                &dataset.descriptions,
                &self.vocab,
                options,
                both_sides,
            ),
            _ => link_prediction_eval(&self.store, triples, &self.training_entities, options),
        }
    }
}
